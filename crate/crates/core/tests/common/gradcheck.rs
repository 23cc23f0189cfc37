use kgalign::collective::{
    actor_forward, actor_log_prob_gradient, critic_gradient, critic_value, ActorParameters,
    CriticParameters,
};
use kgalign::embed::{
    gcn_forward, loss_and_gradients, margin_loss, sample_negatives, EmbeddingMatrix, GcnParameters,
    GcnProblem, OutputActivation,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{numeric_gradient, random_graph, relative_error, uniform_matrix};

const H: f64 = 1e-5;

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn reshape(v: &[f64], like: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_vec(like.raw_dim(), v.to_vec()).unwrap()
}

struct GcnInstance {
    adj1: kgalign::kg::AdjacencyMatrix,
    adj2: kgalign::kg::AdjacencyMatrix,
    x1: Array2<f64>,
    x2: Array2<f64>,
    params: GcnParameters,
    pos: Vec<(usize, usize)>,
    negs: Vec<Vec<(usize, usize)>>,
    act: OutputActivation,
}

fn gcn_instance(seed: u64, act: OutputActivation) -> GcnInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n1, n2, d) = (rng.random_range(4..8), rng.random_range(4..8), rng.random_range(2..5));
    let adj1 = random_graph(n1, 0.4, &mut rng).adjacency();
    let adj2 = random_graph(n2, 0.4, &mut rng).adjacency();
    let x1 = uniform_matrix(n1, d, -1.0, 1.0, &mut rng);
    let x2 = uniform_matrix(n2, d, -1.0, 1.0, &mut rng);
    let params = GcnParameters {
        w1: uniform_matrix(d, d, -1.0, 1.0, &mut rng),
        w2: uniform_matrix(d, d, -1.0, 1.0, &mut rng),
    };
    let pos = vec![(0, 0), (1, 1), (2, 2)];
    let negs = sample_negatives(&pos, 3, n1, n2, &mut rng).unwrap();
    GcnInstance {
        adj1,
        adj2,
        x1,
        x2,
        params,
        pos,
        negs,
        act,
    }
}

impl GcnInstance {
    fn loss(&self, x1: &Array2<f64>, x2: &Array2<f64>, params: &GcnParameters) -> f64 {
        let z1 = gcn_forward(&self.adj1, &EmbeddingMatrix::new(x1.clone()).unwrap(), params, self.act).unwrap();
        let z2 = gcn_forward(&self.adj2, &EmbeddingMatrix::new(x2.clone()).unwrap(), params, self.act).unwrap();
        margin_loss(&z1, &z2, &self.pos, &self.negs, 3.0)
    }
}

/// Worst relative error between analytic and numeric gradients of the
/// margin loss over `instances` random problems.
pub fn gcn_worst_error(act: OutputActivation, instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let inst = gcn_instance(seed, act);
        let problem = GcnProblem {
            adj1: &inst.adj1,
            adj2: &inst.adj2,
            x1: &inst.x1,
            x2: &inst.x2,
            activation: act,
        };
        let (loss, g) = loss_and_gradients(&problem, &inst.params, &inst.pos, &inst.negs, 3.0).unwrap();
        assert!((loss - inst.loss(&inst.x1, &inst.x2, &inst.params)).abs() < 1e-10);

        let p = &inst.params;
        let num_w1 = numeric_gradient(&flat(&p.w1), H, |w| {
            inst.loss(&inst.x1, &inst.x2, &GcnParameters { w1: reshape(w, &p.w1), w2: p.w2.clone() })
        });
        let num_w2 = numeric_gradient(&flat(&p.w2), H, |w| {
            inst.loss(&inst.x1, &inst.x2, &GcnParameters { w1: p.w1.clone(), w2: reshape(w, &p.w2) })
        });
        let num_x1 = numeric_gradient(&flat(&inst.x1), H, |x| inst.loss(&reshape(x, &inst.x1), &inst.x2, p));
        let num_x2 = numeric_gradient(&flat(&inst.x2), H, |x| inst.loss(&inst.x1, &reshape(x, &inst.x2), p));
        for (analytic, numeric) in [
            (flat(&g.w1), num_w1),
            (flat(&g.w2), num_w2),
            (flat(&g.x1), num_x1),
            (flat(&g.x2), num_x2),
        ] {
            worst = worst.max(relative_error(&analytic, &numeric));
        }
    }
    worst
}

fn actor_params_flat(a: &ActorParameters) -> Vec<f64> {
    a.w1.iter().chain(&a.b1).chain(&a.w2).chain(&a.b2).copied().collect()
}

fn actor_from_flat(v: &[f64], like: &ActorParameters) -> ActorParameters {
    let (h, w) = like.w1.dim();
    let mut it = v.iter().copied();
    let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<_>>();
    ActorParameters {
        w1: Array2::from_shape_vec((h, w), take(h * w)).unwrap(),
        b1: Array1::from(take(h)),
        w2: Array2::from_shape_vec((w, h), take(w * h)).unwrap(),
        b2: Array1::from(take(w)),
    }
}

fn critic_params_flat(c: &CriticParameters) -> Vec<f64> {
    c.w3.iter().chain(&c.b3).chain(&c.w4).copied().chain(std::iter::once(c.b4)).collect()
}

fn critic_from_flat(v: &[f64], like: &CriticParameters) -> CriticParameters {
    let (h, w) = like.w3.dim();
    CriticParameters {
        w3: Array2::from_shape_vec((h, w), v[..h * w].to_vec()).unwrap(),
        b3: Array1::from(v[h * w..h * w + h].to_vec()),
        w4: Array1::from(v[h * w + h..h * w + 2 * h].to_vec()),
        b4: v[h * w + 2 * h],
    }
}

/// Worst relative error of the actor's `∇ log π(a|s)` over random networks.
pub fn actor_worst_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let width = rng.random_range(2..11);
        let theta = ActorParameters::random(width, 10, 0.8, &mut rng);
        let state: Vec<f64> = (0..width).map(|_| rng.random_range(-2.0..3.0)).collect();
        let action = rng.random_range(0..width);
        let (grad, probs) = actor_log_prob_gradient(&state, action, &theta).unwrap();
        assert_eq!(probs, actor_forward(&state, &theta).unwrap());
        let numeric = numeric_gradient(&actor_params_flat(&theta), H, |v| {
            actor_forward(&state, &actor_from_flat(v, &theta)).unwrap()[action].ln()
        });
        worst = worst.max(relative_error(&actor_params_flat(&grad), &numeric));
    }
    worst
}

/// Worst relative error of the critic's `∇V(s)` over random networks.
pub fn critic_worst_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let width = rng.random_range(2..11);
        let eta = CriticParameters::random(width, 10, 0.8, &mut rng);
        let state: Vec<f64> = (0..width).map(|_| rng.random_range(-2.0..3.0)).collect();
        let (grad, value) = critic_gradient(&state, &eta).unwrap();
        assert_eq!(value, critic_value(&state, &eta).unwrap());
        let numeric = numeric_gradient(&critic_params_flat(&eta), H, |v| {
            critic_value(&state, &critic_from_flat(v, &eta)).unwrap()
        });
        worst = worst.max(relative_error(&critic_params_flat(&grad), &numeric));
    }
    worst
}
