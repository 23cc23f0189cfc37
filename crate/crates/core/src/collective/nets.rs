//! Actor and critic networks of the collective aligner, with their analytic
//! gradients.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

/// Policy network: `π = softmax(W2 · relu(W1 · s + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorParameters {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Value network: `V = w4 · relu(W3 · s + b3) + b4`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParameters {
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
    pub w4: Array1<f64>,
    pub b4: f64,
}

fn uniform<R: Rng>(shape: (usize, usize), scale: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-scale..=scale))
}

fn uniform1<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.random_range(-scale..=scale))
}

impl ActorParameters {
    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng>(width: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w1: uniform((hidden, width), scale, rng),
            b1: uniform1(hidden, scale, rng),
            w2: uniform((width, hidden), scale, rng),
            b2: uniform1(width, scale, rng),
        }
    }

    pub fn zeros(width: usize, hidden: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, width)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((width, hidden)),
            b2: Array1::zeros(width),
        }
    }

    pub fn width(&self) -> usize {
        self.w1.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    /// `self += scale · other`
    pub fn scaled_add(&mut self, scale: f64, other: &Self) {
        self.w1.scaled_add(scale, &other.w1);
        self.b1.scaled_add(scale, &other.b1);
        self.w2.scaled_add(scale, &other.w2);
        self.b2.scaled_add(scale, &other.b2);
    }

    fn check(&self, state: &[f64]) -> Result<()> {
        let (h, w) = self.w1.dim();
        if state.len() != w || self.b1.len() != h || self.w2.dim() != (w, h) || self.b2.len() != w {
            return Err(Error::Argument(format!(
                "actor shapes W1 {:?}, b1 {}, W2 {:?}, b2 {} do not fit a state of length {}",
                self.w1.dim(),
                self.b1.len(),
                self.w2.dim(),
                self.b2.len(),
                state.len()
            )));
        }
        Ok(())
    }
}

impl CriticParameters {
    pub fn random<R: Rng>(width: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w3: uniform((hidden, width), scale, rng),
            b3: uniform1(hidden, scale, rng),
            w4: uniform1(hidden, scale, rng),
            b4: rng.random_range(-scale..=scale),
        }
    }

    pub fn zeros(width: usize, hidden: usize) -> Self {
        Self {
            w3: Array2::zeros((hidden, width)),
            b3: Array1::zeros(hidden),
            w4: Array1::zeros(hidden),
            b4: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.b4.is_finite() && self.w3.iter().chain(&self.b3).chain(&self.w4).all(|v| v.is_finite())
    }

    pub fn scaled_add(&mut self, scale: f64, other: &Self) {
        self.w3.scaled_add(scale, &other.w3);
        self.b3.scaled_add(scale, &other.b3);
        self.w4.scaled_add(scale, &other.w4);
        self.b4 += scale * other.b4;
    }

    fn check(&self, state: &[f64]) -> Result<()> {
        let (h, w) = self.w3.dim();
        if state.len() != w || self.b3.len() != h || self.w4.len() != h {
            return Err(Error::Argument(format!(
                "critic shapes W3 {:?}, b3 {}, w4 {} do not fit a state of length {}",
                self.w3.dim(),
                self.b3.len(),
                self.w4.len(),
                state.len()
            )));
        }
        Ok(())
    }
}

fn hidden_pre(w: &Array2<f64>, b: &Array1<f64>, state: &[f64]) -> Array1<f64> {
    w.dot(&Array1::from(state.to_vec())) + b
}

fn softmax(logits: &Array1<f64>) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Action probabilities over the candidate slots.
pub fn actor_forward(state: &[f64], theta: &ActorParameters) -> Result<Vec<f64>> {
    theta.check(state)?;
    let h = hidden_pre(&theta.w1, &theta.b1, state).mapv(|v| v.max(0.0));
    Ok(softmax(&(theta.w2.dot(&h) + &theta.b2)))
}

pub fn critic_value(state: &[f64], eta: &CriticParameters) -> Result<f64> {
    eta.check(state)?;
    let h = hidden_pre(&eta.w3, &eta.b3, state).mapv(|v| v.max(0.0));
    Ok(eta.w4.dot(&h) + eta.b4)
}

/// `∇_θ log π(action | state)`, returned in the shape of the parameters,
/// together with `π`.
pub fn actor_log_prob_gradient(
    state: &[f64],
    action: usize,
    theta: &ActorParameters,
) -> Result<(ActorParameters, Vec<f64>)> {
    theta.check(state)?;
    if action >= theta.width() {
        return Err(Error::Argument(format!(
            "action {action} outside {} candidates",
            theta.width()
        )));
    }
    let pre = hidden_pre(&theta.w1, &theta.b1, state);
    let h = pre.mapv(|v| v.max(0.0));
    let probs = softmax(&(theta.w2.dot(&h) + &theta.b2));
    // d log softmax_a / d logits = onehot(a) − π
    let mut d_logits = Array1::from(probs.iter().map(|p| -p).collect::<Vec<_>>());
    d_logits[action] += 1.0;
    let d_w2 = outer(&d_logits, &h);
    let mut d_pre = theta.w2.t().dot(&d_logits);
    d_pre.zip_mut_with(&pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    let d_w1 = outer(&d_pre, &Array1::from(state.to_vec()));
    Ok((
        ActorParameters {
            w1: d_w1,
            b1: d_pre,
            w2: d_w2,
            b2: d_logits,
        },
        probs,
    ))
}

/// `∇_η V(state)` with the value itself.
pub fn critic_gradient(state: &[f64], eta: &CriticParameters) -> Result<(CriticParameters, f64)> {
    eta.check(state)?;
    let pre = hidden_pre(&eta.w3, &eta.b3, state);
    let h = pre.mapv(|v| v.max(0.0));
    let value = eta.w4.dot(&h) + eta.b4;
    let mut d_pre = eta.w4.clone();
    d_pre.zip_mut_with(&pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    Ok((
        CriticParameters {
            w3: outer(&d_pre, &Array1::from(state.to_vec())),
            b3: d_pre,
            w4: h,
            b4: 1.0,
        },
        value,
    ))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = ActorParameters::random(6, 10, 0.1, &mut rng);
        let s = [0.3, -0.9, 1.2, 0.0, 2.0, 0.5];
        let p = actor_forward(&s, &theta).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut theta = ActorParameters::random(4, 10, 0.5, &mut rng);
        theta.w2.fill(0.0);
        theta.b2.fill(0.0);
        let p = actor_forward(&[1.0, 2.0, 3.0, 4.0], &theta).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn critic_special_cases() {
        let s = [0.4, -0.2, 0.9];
        assert_eq!(critic_value(&s, &CriticParameters::zeros(3, 10)).unwrap(), 0.0);
        let mut eta = CriticParameters::zeros(3, 10);
        eta.b4 = -1.25;
        assert_eq!(critic_value(&s, &eta).unwrap(), -1.25);
    }

    #[test]
    fn shape_errors() {
        let theta = ActorParameters::zeros(3, 2);
        assert!(actor_forward(&[1.0, 2.0], &theta).is_err());
        assert!(actor_log_prob_gradient(&[1.0, 2.0, 3.0], 3, &theta).is_err());
        assert!(critic_value(&[1.0], &CriticParameters::zeros(3, 2)).is_err());
    }
}
