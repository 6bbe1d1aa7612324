//! Random instances for tests, audits and benchmarks.
//!
//! Every generator draws from a caller-supplied RNG so results are
//! reproducible from a seed.

use rand::Rng;

use crate::error::Result;
use crate::game::{
    EmpiricalModel, GameSpec, MixturePolicy, ProductPolicy, Provenance, RawGame, RewardTensor,
    Shape,
};

/// Shape with `num_players` players, action counts drawn from `actions`, and
/// a context count drawn from `contexts`.
pub fn random_shape<R: Rng>(
    rng: &mut R,
    num_players: usize,
    actions: &[usize],
    contexts: &[usize],
) -> Shape {
    let counts = (0..num_players)
        .map(|_| actions[rng.random_range(0..actions.len())])
        .collect();
    let nx = contexts[rng.random_range(0..contexts.len())];
    Shape::new(counts, nx).expect("nonempty shape")
}

/// Strictly positive distribution of length `k`; `floor` bounds every
/// entry's share before normalization away from zero.
pub fn random_distribution<R: Rng>(rng: &mut R, k: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &Shape) -> RewardTensor {
    let values = (0..shape.num_cells())
        .map(|_| rng.random::<f64>())
        .collect();
    RewardTensor::new(shape, values).expect("values in [0,1)")
}

pub fn random_product_policy<R: Rng>(rng: &mut R, shape: &Shape, floor: f64) -> ProductPolicy {
    let dists = (0..shape.num_players())
        .map(|i| {
            (0..shape.num_contexts())
                .map(|_| random_distribution(rng, shape.num_actions(i), floor))
                .collect()
        })
        .collect();
    ProductPolicy::new(shape, dists).expect("valid distributions")
}

pub fn random_mixture<R: Rng>(rng: &mut R, shape: &Shape, components: usize) -> MixturePolicy {
    let weights = random_distribution(rng, components.max(1), 0.05);
    let parts = weights
        .into_iter()
        .map(|w| (w, random_product_policy(rng, shape, 0.0)))
        .collect();
    MixturePolicy::new(parts).expect("valid mixture")
}

/// Model with independent uniform entries.
pub fn random_model<R: Rng>(rng: &mut R, shape: &Shape) -> EmpiricalModel {
    let payoffs = (0..shape.num_players())
        .map(|_| random_tensor(rng, shape))
        .collect();
    EmpiricalModel::new(shape, payoffs, vec![Provenance::Exact; shape.num_players()])
        .expect("valid model")
}

/// Game with uniform rewards, random context weights and, unless
/// `uniform_reference`, a random full-support reference.
pub fn random_game<R: Rng>(
    rng: &mut R,
    shape: &Shape,
    eta: f64,
    uniform_reference: bool,
) -> Result<GameSpec> {
    let reference = if uniform_reference {
        ProductPolicy::uniform(shape)
    } else {
        random_product_policy(rng, shape, 0.1)
    };
    GameSpec::try_from(RawGame {
        context_labels: vec![],
        rho: random_distribution(rng, shape.num_contexts(), 0.1),
        action_counts: shape.action_counts().to_vec(),
        rewards: (0..shape.num_players())
            .map(|_| random_tensor(rng, shape).values().to_vec())
            .collect(),
        eta,
        reference: reference.to_nested(),
    })
}
