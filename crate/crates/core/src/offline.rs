//! Offline data generation and coverage constants.
//!
//! Sampling is counter-based: record `tau` draws from its own ChaCha20
//! stream, keyed by the master seed with stream id `tau`. A dataset of size
//! `n` is therefore a prefix of every larger dataset with the same seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::game::{BehaviorDistribution, GameSpec, OfflineDataset, Record};

/// Default observation noise standard deviation.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;

/// Draws `n` i.i.d. records `(x, a) ~ mu` with rewards `r*_i(x, a) + sigma * N(0, 1)`.
///
/// Observed rewards are not clipped.
pub fn sample_dataset(
    spec: &GameSpec,
    mu: &BehaviorDistribution,
    n: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<OfflineDataset> {
    let shape = spec.shape();
    if mu.shape() != shape {
        return Err(Error::ShapeMismatch(
            "behavior distribution does not match game".into(),
        ));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be nonnegative, got {noise_sigma}"
        )));
    }
    let mut cdf = Vec::with_capacity(mu.probs().len());
    let mut acc = 0.0;
    for &p in mu.probs() {
        acc += p;
        cdf.push(acc);
    }
    let last_positive = mu
        .probs()
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("a distribution has a positive entry");

    let m = spec.num_players();
    let mut records = Vec::with_capacity(n);
    for tau in 0..n {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(tau as u64);
        let u: f64 = rng.random::<f64>() * acc;
        let cell = cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(last_positive)
            .min(last_positive);
        let context = cell / shape.num_joint();
        let joint = cell % shape.num_joint();
        let rewards = (0..m)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                spec.reward(i).get(context, joint) + noise_sigma * z
            })
            .collect();
        records.push(Record {
            context,
            actions: shape.decode(joint),
            rewards,
        });
    }
    OfflineDataset::new(shape, records)
}

/// Reference-anchored unilateral concentrability.
///
/// The largest density ratio `rho(x) pi'_i(a_i|x) ref_-i(a_-i|x) / mu(x, a)`
/// over players and deviations `pi'_i`. The supremum is attained by a
/// deterministic deviation, so `pi'_i(a_i|x) = 1` is enumerated cell by cell.
/// Returns `+inf` when a cell with positive numerator has `mu = 0`.
pub fn concentrability(spec: &GameSpec, mu: &BehaviorDistribution) -> f64 {
    let shape = spec.shape();
    let reference = spec.reference();
    let mut worst: f64 = 0.0;
    for i in 0..shape.num_players() {
        for x in 0..shape.num_contexts() {
            let rho = spec.rho()[x];
            if rho <= 0.0 {
                continue;
            }
            for joint in 0..shape.num_joint() {
                let mut numerator = rho;
                for j in (0..shape.num_players()).filter(|&j| j != i) {
                    numerator *= reference.dist(j, x)[shape.action_of(joint, j)];
                }
                if numerator <= 0.0 {
                    continue;
                }
                let denom = mu.prob(x, joint);
                if denom <= 0.0 {
                    return f64::INFINITY;
                }
                worst = worst.max(numerator / denom);
            }
        }
    }
    worst
}

/// Joint anchoring constant `exp(eta * m)`.
pub fn anchoring_constant(eta: f64, num_players: usize) -> f64 {
    (eta * num_players as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{RawGame, Shape};

    fn game() -> GameSpec {
        GameSpec::try_from(RawGame {
            context_labels: vec![],
            rho: vec![0.25, 0.75],
            action_counts: vec![2, 3],
            rewards: vec![
                (0..12).map(|k| k as f64 / 11.0).collect(),
                (0..12).map(|k| 1.0 - k as f64 / 11.0).collect(),
            ],
            eta: 1.0,
            reference: vec![vec![vec![0.5, 0.5]; 2], vec![vec![1.0 / 3.0; 3]; 2]],
        })
        .unwrap()
    }

    #[test]
    fn empty_dataset() {
        let spec = game();
        let d = sample_dataset(&spec, &spec.reference_behavior(), 0, 0.1, 1).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn point_mass_noiseless() {
        let spec = game();
        let mut probs = vec![0.0; 12];
        probs[7] = 1.0;
        let mu = BehaviorDistribution::new(spec.shape(), probs).unwrap();
        let d = sample_dataset(&spec, &mu, 25, 0.0, 9).unwrap();
        for r in d.records() {
            assert_eq!(r.context, 1);
            assert_eq!(r.actions, vec![0, 1]);
            assert_eq!(
                r.rewards,
                vec![spec.reward(0).get(1, 1), spec.reward(1).get(1, 1)]
            );
        }
    }

    #[test]
    fn seeded_and_prefix_stable() {
        let spec = game();
        let mu = spec.reference_behavior();
        let a = sample_dataset(&spec, &mu, 200, 0.1, 42).unwrap();
        let b = sample_dataset(&spec, &mu, 200, 0.1, 42).unwrap();
        assert_eq!(a, b);
        let small = sample_dataset(&spec, &mu, 50, 0.1, 42).unwrap();
        assert_eq!(small.records(), &a.records()[..50]);
        let other = sample_dataset(&spec, &mu, 200, 0.1, 43).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn rewards_are_not_clipped() {
        let spec = game();
        let d = sample_dataset(&spec, &spec.reference_behavior(), 2000, 1.0, 3).unwrap();
        assert!(d
            .records()
            .iter()
            .flat_map(|r| &r.rewards)
            .any(|&v| !(0.0..=1.0).contains(&v)));
    }

    #[test]
    fn empirical_frequencies_match_mu() {
        let spec = game();
        let mu = BehaviorDistribution::new(
            spec.shape(),
            vec![
                0.02, 0.08, 0.1, 0.05, 0.0, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1,
            ],
        )
        .unwrap();
        let n = 100_000;
        let d = sample_dataset(&spec, &mu, n, 0.1, 5).unwrap();
        let mut counts = [0usize; 12];
        for r in d.records() {
            counts[r.context * 6 + spec.shape().encode(&r.actions).unwrap()] += 1;
        }
        assert_eq!(counts[4], 0);
        let tv: f64 = counts
            .iter()
            .zip(mu.probs())
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "total variation {tv}");
    }

    #[test]
    fn concentrability_uniform_two_by_two() {
        let spec = GameSpec::try_from(RawGame {
            context_labels: vec![],
            rho: vec![1.0],
            action_counts: vec![2, 2],
            rewards: vec![vec![0.5; 4]; 2],
            eta: 1.0,
            reference: vec![vec![vec![0.5, 0.5]]; 2],
        })
        .unwrap();
        let mu = BehaviorDistribution::uniform(spec.shape());
        assert!((concentrability(&spec, &mu) - 2.0).abs() < 1e-12);
        let gap = BehaviorDistribution::new(spec.shape(), vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert_eq!(concentrability(&spec, &gap), f64::INFINITY);
    }

    #[test]
    fn concentrability_of_reference_behavior() {
        let spec = game();
        let c = concentrability(&spec, &spec.reference_behavior());
        assert!((c - 3.0).abs() < 1e-12, "{c}");
    }

    #[test]
    fn anchoring_constants() {
        assert_eq!(anchoring_constant(0.0, 5), 1.0);
        assert!((anchoring_constant(0.5, 3) - 4.4816890703380645).abs() < 1e-14);
        assert!((anchoring_constant(1.0, 2) - 7.38905609893065).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let spec = game();
        let other = Shape::new(vec![2, 2], 1).unwrap();
        let mu = BehaviorDistribution::uniform(&other);
        assert!(sample_dataset(&spec, &mu, 3, 0.1, 0).is_err());
    }
}
