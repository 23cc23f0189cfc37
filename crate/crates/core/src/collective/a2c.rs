//! Advantage actor-critic decoding with exclusiveness and coherence.
//!
//! Sources are visited in the environment's order. At each step the actor
//! samples a candidate slot from `π(·|s)`, the reward is `s1[a]·s2[a] +
//! s3[a]`, and both networks are updated from the one-step TD error
//! `δ = r + γ·V(s') − V(s)`, where `s'` is the observation of the next
//! source after the chosen target has been marked as taken. After the
//! training episodes, one deterministic pass that always takes the most
//! probable slot produces the alignment.

use std::fmt;
use std::str::FromStr;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::baselines::argmax;
use super::env::{AlignmentEnvironment, Episode, StateVector};
use super::nets::{actor_forward, actor_log_prob_gradient, critic_gradient, critic_value};
use super::{ActorParameters, AlignmentResult, CriticParameters, Provenance};

/// Which coordination signals the agent observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordinationMode {
    #[default]
    Full,
    /// Coherence is switched off: `s3 ≡ 0`.
    ExclusivenessOnly,
    /// Exclusiveness is switched off: `s2 ≡ +1`.
    CoherenceOnly,
}

impl CoordinationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CoordinationMode::Full => "full",
            CoordinationMode::ExclusivenessOnly => "excl",
            CoordinationMode::CoherenceOnly => "coh",
        }
    }

    fn apply(self, mut s: StateVector) -> StateVector {
        match self {
            CoordinationMode::Full => {}
            CoordinationMode::ExclusivenessOnly => s.s3.iter_mut().for_each(|v| *v = 0.0),
            CoordinationMode::CoherenceOnly => s.s2.iter_mut().for_each(|v| *v = 1.0),
        }
        s
    }
}

impl fmt::Display for CoordinationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoordinationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CoordinationMode::Full),
            "excl" | "exclusiveness-only" => Ok(CoordinationMode::ExclusivenessOnly),
            "coh" | "coherence-only" => Ok(CoordinationMode::CoherenceOnly),
            other => Err(Error::Argument(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub preliminary_rounds: usize,
    pub mode: CoordinationMode,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            actor_lr: 0.001,
            critic_lr: 0.01,
            tau: 10,
            epochs: 200,
            rng_seed: 0,
            preliminary_rounds: 2,
            mode: CoordinationMode::Full,
            actor_hidden: 10,
            critic_hidden: 10,
            init_scale: 0.1,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Argument(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Argument("learning rates must be positive".into()));
        }
        if self.tau == 0 || self.actor_hidden == 0 || self.critic_hidden == 0 {
            return Err(Error::Argument("tau and hidden sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// `s1[a]·s2[a] + s3[a]`.
pub fn reward(s1: &[f64], s2: &[f64], s3: &[f64], action: usize) -> f64 {
    s1[action] * s2[action] + s3[action]
}

/// Output of [`a2c_align`].
#[derive(Debug, Clone)]
pub struct RlRun {
    /// Preliminary pairs plus the final greedy-policy decisions.
    pub result: AlignmentResult,
    pub actor: ActorParameters,
    pub critic: CriticParameters,
    /// Sum of rewards of each training episode.
    pub episode_returns: Vec<f64>,
}

fn training_error(epoch: usize, what: &str) -> Error {
    Error::Training {
        epoch,
        message: format!("{what} parameters became non-finite; the similarity scores may be too large for the learning rates"),
    }
}

pub fn a2c_align(env: &AlignmentEnvironment, cfg: &RlConfig) -> Result<RlRun> {
    cfg.validate()?;
    let width = env.width();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut actor = ActorParameters::random(width, cfg.actor_hidden, cfg.init_scale, &mut rng);
    let mut critic = CriticParameters::random(width, cfg.critic_hidden, cfg.init_scale, &mut rng);
    let steps = env.order().len();
    let observe = |ep: &Episode, pos: usize| cfg.mode.apply(env.observe(ep, pos));

    let mut episode_returns = Vec::with_capacity(cfg.epochs);
    if steps > 0 {
        for epoch in 0..cfg.epochs {
            let mut ep = env.start_episode();
            let mut state = observe(&ep, 0);
            let mut total = 0.0;
            for pos in 0..steps {
                let input = state.combined();
                let probs = actor_forward(&input, &actor)?;
                let slot = WeightedIndex::new(&probs)
                    .map_err(|e| Error::Training {
                        epoch,
                        message: format!("bad policy distribution: {e}"),
                    })?
                    .sample(&mut rng);
                let r = reward(&state.s1, &state.s2, &state.s3, slot);
                env.take(&mut ep, pos, slot);
                let next = (pos + 1 < steps).then(|| observe(&ep, pos + 1));
                let next_value = match &next {
                    Some(s) => critic_value(&s.combined(), &critic)?,
                    None => 0.0,
                };
                let (critic_grad, value) = critic_gradient(&input, &critic)?;
                let td = r + cfg.gamma * next_value - value;
                let (actor_grad, _) = actor_log_prob_gradient(&input, slot, &actor)?;
                critic.scaled_add(cfg.critic_lr * td, &critic_grad);
                actor.scaled_add(cfg.actor_lr * td, &actor_grad);
                if !critic.is_finite() {
                    return Err(training_error(epoch, "critic"));
                }
                if !actor.is_finite() {
                    return Err(training_error(epoch, "actor"));
                }
                total += r;
                if let Some(s) = next {
                    state = s;
                }
            }
            episode_returns.push(total);
        }
    }

    let mut result = AlignmentResult::new();
    for &(s, t) in env.confirmed() {
        result.insert(s, t, Provenance::Preliminary);
    }
    let mut ep = env.start_episode();
    for pos in 0..steps {
        let probs = actor_forward(&observe(&ep, pos).combined(), &actor)?;
        let slot = argmax(probs).expect("width >= 1 when sources remain");
        let target = env.take(&mut ep, pos, slot);
        result.insert(env.order()[pos], target, Provenance::Rl);
    }
    Ok(RlRun {
        result,
        actor,
        critic,
        episode_returns,
    })
}
