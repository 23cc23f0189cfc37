//! Structural entity embeddings from a two-layer GCN shared by both graphs,
//! trained with the L1 margin ranking loss over seed alignments.

use std::collections::HashSet;

use ndarray::{Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{AdjacencyMatrix, KnowledgeGraph};

/// One dense real vector per entity. Never contains NaN or infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(Array2<f64>);

impl EmbeddingMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if let Some(((i, j), v)) = rows.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "embedding entry ({i}, {j}) is not finite: {v}"
            )));
        }
        Ok(Self(rows))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).to_vec()
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self(self.0.select(Axis(0), rows))
    }
}

/// Layer weights shared by the source and target GCNs.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParameters {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

impl GcnParameters {
    pub fn identity(dim: usize) -> Self {
        Self {
            w1: Array2::eye(dim),
            w2: Array2::eye(dim),
        }
    }

    /// Glorot-uniform initialization.
    pub fn glorot<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (2.0 * dim as f64)).sqrt();
        let mut draw = || Array2::from_shape_simple_fn((dim, dim), || rng.random_range(-limit..=limit));
        let w1 = draw();
        let w2 = draw();
        Self { w1, w2 }
    }

    pub fn dim(&self) -> usize {
        self.w1.nrows()
    }

    fn check(&self) -> Result<()> {
        let d = self.w1.nrows();
        if self.w1.dim() != (d, d) || self.w2.dim() != (d, d) {
            return Err(Error::Argument(format!(
                "GCN weights must be square and equal: {:?}, {:?}",
                self.w1.dim(),
                self.w2.dim()
            )));
        }
        Ok(())
    }
}

/// Activation applied to the second GCN layer. The hidden layer always uses
/// ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Identity,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub margin: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    pub output_activation: OutputActivation,
    /// Draw fresh negatives every epoch; `false` samples once and reuses them.
    pub resample_negatives: bool,
    /// Update the input feature matrices together with the layer weights.
    pub train_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            margin: 3.0,
            epochs: 300,
            negatives_per_positive: 5,
            learning_rate: 1.0,
            rng_seed: 0,
            output_activation: OutputActivation::Identity,
            resample_negatives: true,
            train_features: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Argument("embedding dimension must be >= 1".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Argument(format!("margin must be > 0, got {}", self.margin)));
        }
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be >= 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Argument("negatives_per_positive must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Raw `n × dim` draws from a normal with `σ = 1/√dim`, truncated to
/// `|z| ≤ 2σ` by rejection.
pub fn truncated_normal<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    let sigma = 1.0 / (dim as f64).sqrt();
    let normal = Normal::new(0.0, sigma).expect("sigma is positive");
    Array2::from_shape_simple_fn((n, dim), || loop {
        let z: f64 = normal.sample(rng);
        if z.abs() <= 2.0 * sigma {
            break z;
        }
    })
}

/// Truncated-normal features with every row scaled to unit L2 norm.
pub fn init_features(n: usize, dim: usize, rng_seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    init_features_with(n, dim, &mut rng)
}

fn init_features_with<R: Rng>(n: usize, dim: usize, rng: &mut R) -> EmbeddingMatrix {
    let mut x = truncated_normal(n, dim, rng);
    for mut row in x.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        } else {
            row[0] = 1.0;
        }
    }
    EmbeddingMatrix(x)
}

/// Intermediate products of one forward pass, kept for backpropagation.
struct ForwardCache {
    /// `Â·X`
    ax: Array2<f64>,
    /// `Â·X·W1` before the ReLU
    hidden_pre: Array2<f64>,
    /// `Â·relu(Â·X·W1)`
    ah: Array2<f64>,
    /// `Â·H·W2` before the output activation
    out_pre: Array2<f64>,
}

fn forward_cached(
    adj: &AdjacencyMatrix,
    x: &Array2<f64>,
    params: &GcnParameters,
) -> ForwardCache {
    let ax = adj.matmul(x);
    let hidden_pre = ax.dot(&params.w1);
    let hidden = hidden_pre.mapv(relu);
    let ah = adj.matmul(&hidden);
    let out_pre = ah.dot(&params.w2);
    ForwardCache {
        ax,
        hidden_pre,
        ah,
        out_pre,
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn apply_output(out_pre: &Array2<f64>, act: OutputActivation) -> Array2<f64> {
    match act {
        OutputActivation::Identity => out_pre.clone(),
        OutputActivation::Relu => out_pre.mapv(relu),
    }
}

fn check_forward_dims(adj: &AdjacencyMatrix, x: &Array2<f64>, params: &GcnParameters) -> Result<()> {
    params.check()?;
    if adj.n() != x.nrows() {
        return Err(Error::Argument(format!(
            "adjacency has {} nodes but features have {} rows",
            adj.n(),
            x.nrows()
        )));
    }
    if x.ncols() != params.dim() {
        return Err(Error::Argument(format!(
            "features have dimension {} but weights expect {}",
            x.ncols(),
            params.dim()
        )));
    }
    Ok(())
}

/// `Z = act(Â · relu(Â · X · W1) · W2)`.
pub fn gcn_forward(
    adj: &AdjacencyMatrix,
    x: &EmbeddingMatrix,
    params: &GcnParameters,
    act: OutputActivation,
) -> Result<EmbeddingMatrix> {
    check_forward_dims(adj, &x.0, params)?;
    let cache = forward_cached(adj, &x.0, params);
    EmbeddingMatrix::new(apply_output(&cache.out_pre, act))
}

fn l1_distance(z1: &Array2<f64>, i: usize, z2: &Array2<f64>, j: usize) -> f64 {
    z1.row(i)
        .iter()
        .zip(z2.row(j).iter())
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// `Σ_pos Σ_neg max(0, ‖u−v‖₁ − ‖u'−v'‖₁ + margin)`. `negatives[k]` holds
/// the corrupted pairs of `positives[k]`.
pub fn margin_loss(
    z1: &EmbeddingMatrix,
    z2: &EmbeddingMatrix,
    positives: &[(usize, usize)],
    negatives: &[Vec<(usize, usize)>],
    margin: f64,
) -> f64 {
    positives
        .iter()
        .zip(negatives)
        .map(|(&(u, v), negs)| {
            let pos = l1_distance(&z1.0, u, &z2.0, v);
            negs.iter()
                .map(|&(nu, nv)| (pos - l1_distance(&z1.0, nu, &z2.0, nv) + margin).max(0.0))
                .sum::<f64>()
        })
        .sum()
}

/// For each positive pair, `k` pairs that replace exactly one side with a
/// random entity of the same graph. No negative equals any positive pair.
pub fn sample_negatives<R: Rng>(
    positives: &[(usize, usize)],
    k: usize,
    n_source: usize,
    n_target: usize,
    rng: &mut R,
) -> Result<Vec<Vec<(usize, usize)>>> {
    if k == 0 {
        return Err(Error::Argument("need at least one negative per positive".into()));
    }
    let gold: HashSet<(usize, usize)> = positives.iter().copied().collect();
    let valid = |pair: (usize, usize), orig: (usize, usize)| pair != orig && !gold.contains(&pair);
    positives
        .iter()
        .map(|&(u, v)| {
            let mut out = Vec::with_capacity(k);
            for _ in 0..k {
                let mut picked = None;
                for _ in 0..64 {
                    let cand = if rng.random_bool(0.5) {
                        (rng.random_range(0..n_source), v)
                    } else {
                        (u, rng.random_range(0..n_target))
                    };
                    if valid(cand, (u, v)) {
                        picked = Some(cand);
                        break;
                    }
                }
                let pair = match picked {
                    Some(p) => p,
                    None => {
                        let pool: Vec<(usize, usize)> = (0..n_source)
                            .map(|s| (s, v))
                            .chain((0..n_target).map(|t| (u, t)))
                            .filter(|&c| valid(c, (u, v)))
                            .collect();
                        if pool.is_empty() {
                            return Err(Error::Sampling(format!(
                                "no corruption of ({u}, {v}) avoids the positive set"
                            )));
                        }
                        pool[rng.random_range(0..pool.len())]
                    }
                };
                out.push(pair);
            }
            Ok(out)
        })
        .collect()
}

/// Gradients of the margin loss with respect to every trainable quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub x1: Array2<f64>,
    pub x2: Array2<f64>,
}

/// Both graphs with their current input features.
pub struct GcnProblem<'a> {
    pub adj1: &'a AdjacencyMatrix,
    pub adj2: &'a AdjacencyMatrix,
    pub x1: &'a Array2<f64>,
    pub x2: &'a Array2<f64>,
    pub activation: OutputActivation,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn backward(
    adj: &AdjacencyMatrix,
    cache: &ForwardCache,
    params: &GcnParameters,
    mut d_out: Array2<f64>,
    act: OutputActivation,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    if act == OutputActivation::Relu {
        Zip::from(&mut d_out)
            .and(&cache.out_pre)
            .for_each(|g, &p| if p <= 0.0 { *g = 0.0 });
    }
    let d_w2 = cache.ah.t().dot(&d_out);
    let d_ah = d_out.dot(&params.w2.t());
    // Â is symmetric, so Âᵀ·G = Â·G.
    let mut d_hidden = adj.matmul(&d_ah);
    Zip::from(&mut d_hidden)
        .and(&cache.hidden_pre)
        .for_each(|g, &p| if p <= 0.0 { *g = 0.0 });
    let d_w1 = cache.ax.t().dot(&d_hidden);
    let d_ax = d_hidden.dot(&params.w1.t());
    let d_x = adj.matmul(&d_ax);
    (d_w1, d_w2, d_x)
}

/// Margin loss and its analytic (sub)gradient. The subgradient of `|·|`
/// and of ReLU at 0 is taken as 0.
pub fn loss_and_gradients(
    problem: &GcnProblem<'_>,
    params: &GcnParameters,
    positives: &[(usize, usize)],
    negatives: &[Vec<(usize, usize)>],
    margin: f64,
) -> Result<(f64, Gradients)> {
    check_forward_dims(problem.adj1, problem.x1, params)?;
    check_forward_dims(problem.adj2, problem.x2, params)?;
    let c1 = forward_cached(problem.adj1, problem.x1, params);
    let c2 = forward_cached(problem.adj2, problem.x2, params);
    let z1 = apply_output(&c1.out_pre, problem.activation);
    let z2 = apply_output(&c2.out_pre, problem.activation);

    let mut d_z1 = Array2::<f64>::zeros(z1.raw_dim());
    let mut d_z2 = Array2::<f64>::zeros(z2.raw_dim());
    let mut loss = 0.0;
    for (&(u, v), negs) in positives.iter().zip(negatives) {
        let pos = l1_distance(&z1, u, &z2, v);
        for &(nu, nv) in negs {
            let term = pos - l1_distance(&z1, nu, &z2, nv) + margin;
            if term <= 0.0 {
                continue;
            }
            loss += term;
            for k in 0..z1.ncols() {
                let s = sign(z1[[u, k]] - z2[[v, k]]);
                d_z1[[u, k]] += s;
                d_z2[[v, k]] -= s;
                let s = sign(z1[[nu, k]] - z2[[nv, k]]);
                d_z1[[nu, k]] -= s;
                d_z2[[nv, k]] += s;
            }
        }
    }

    let (w1a, w2a, x1) = backward(problem.adj1, &c1, params, d_z1, problem.activation);
    let (w1b, w2b, x2) = backward(problem.adj2, &c2, params, d_z2, problem.activation);
    Ok((
        loss,
        Gradients {
            w1: w1a + w1b,
            w2: w2a + w2b,
            x1,
            x2,
        },
    ))
}

/// Everything produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub z1: EmbeddingMatrix,
    pub z2: EmbeddingMatrix,
    pub params: GcnParameters,
    pub x1: EmbeddingMatrix,
    pub x2: EmbeddingMatrix,
    /// Margin loss at the start of each epoch.
    pub loss_history: Vec<f64>,
}

pub fn train(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    seeds: &[(usize, usize)],
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    train_on(&kg1.adjacency(), &kg2.adjacency(), seeds, cfg)
}

/// Full-batch gradient descent on the margin loss over `cfg.epochs` epochs.
///
/// Each step moves along the gradient of the loss averaged over all
/// (positive, negative) terms, so the learning rate does not depend on the
/// number of seeds.
pub fn train_on(
    adj1: &AdjacencyMatrix,
    adj2: &AdjacencyMatrix,
    seeds: &[(usize, usize)],
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Argument("training needs at least one seed pair".into()));
    }
    let (n1, n2) = (adj1.n(), adj2.n());
    if let Some(&(u, v)) = seeds.iter().find(|&&(u, v)| u >= n1 || v >= n2) {
        return Err(Error::Argument(format!("seed ({u}, {v}) out of range")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut x1 = init_features_with(n1, cfg.dim, &mut rng).0;
    let mut x2 = init_features_with(n2, cfg.dim, &mut rng).0;
    let mut params = GcnParameters::glorot(cfg.dim, &mut rng);

    let terms = (seeds.len() * cfg.negatives_per_positive) as f64;
    let step = cfg.learning_rate / terms;
    let mut negatives = sample_negatives(seeds, cfg.negatives_per_positive, n1, n2, &mut rng)?;
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.resample_negatives {
            negatives = sample_negatives(seeds, cfg.negatives_per_positive, n1, n2, &mut rng)?;
        }
        let problem = GcnProblem {
            adj1,
            adj2,
            x1: &x1,
            x2: &x2,
            activation: cfg.output_activation,
        };
        let (loss, grads) = loss_and_gradients(&problem, &params, seeds, &negatives, cfg.margin)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("margin loss became {loss}"),
            });
        }
        log::debug!("gcn epoch {epoch}: loss {loss:.6}");
        loss_history.push(loss);
        params.w1.scaled_add(-step, &grads.w1);
        params.w2.scaled_add(-step, &grads.w2);
        if cfg.train_features {
            x1.scaled_add(-step, &grads.x1);
            x2.scaled_add(-step, &grads.x2);
        }
        let finite = params.w1.iter().chain(params.w2.iter()).chain(x1.iter()).chain(x2.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Training {
                epoch,
                message: "parameters became non-finite".into(),
            });
        }
    }

    let x1 = EmbeddingMatrix::new(x1)?;
    let x2 = EmbeddingMatrix::new(x2)?;
    let z1 = gcn_forward(adj1, &x1, &params, cfg.output_activation)?;
    let z2 = gcn_forward(adj2, &x2, &params, cfg.output_activation)?;
    Ok(TrainOutput {
        z1,
        z2,
        params,
        x1,
        x2,
        loss_history,
    })
}
