//! Exact KL-regularized values, Gibbs best responses and exploitability.
//!
//! For a payoff vector `q` over one player's actions, a reference `ref` and
//! strength `eta`, the regularized objective `<pi, q> - KL(pi || ref) / eta`
//! is maximized by the Gibbs policy `pi ∝ ref * exp(eta * q)`, with optimal
//! value `Phi(eta * q + ln ref) / eta` where `Phi` is log-sum-exp. All
//! expectations below are full enumerations.

use crate::error::{Error, Result};
use crate::game::{GameSpec, JointPolicy, MixturePolicy, ProductPolicy, RewardTensor};

/// `ln sum_a exp(theta_a)`, shifted by the maximum.
pub fn log_partition(theta: &[f64]) -> Result<f64> {
    if theta.is_empty() {
        return Err(Error::InvalidLogits("empty vector".into()));
    }
    if let Some(v) = theta.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidLogits(format!("non-finite entry {v}")));
    }
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = theta.iter().map(|t| (t - max).exp()).sum();
    Ok(max + sum.ln())
}

/// `KL(p || q)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "KL of vectors of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (index, (&pa, &qa)) in p.iter().zip(q).enumerate() {
        if pa > 0.0 {
            if qa <= 0.0 {
                return Err(Error::SupportViolation { index, p: pa });
            }
            kl += pa * (pa / qa).ln();
        }
    }
    Ok(kl)
}

fn check_finite(q: &[f64]) -> Result<()> {
    match q.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::NonFinite(format!("payoff entry {v}"))),
        None => Ok(()),
    }
}

fn gibbs_logits(q_bar: &[f64], reference: &[f64], eta: f64) -> Result<Vec<f64>> {
    if q_bar.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "payoff has {} entries, reference {}",
            q_bar.len(),
            reference.len()
        )));
    }
    check_finite(q_bar)?;
    if let Some(index) = reference.iter().position(|&r| !(r > 0.0)) {
        return Err(Error::SupportLost { index });
    }
    Ok(q_bar
        .iter()
        .zip(reference)
        .map(|(q, r)| eta * q + r.ln())
        .collect())
}

/// Normalizes log-weights into a distribution.
pub(crate) fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let z = log_partition(logits)?;
    Ok(logits.iter().map(|l| (l - z).exp()).collect())
}

/// The regularized best response `pi(a) ∝ ref(a) exp(eta q_bar(a))`.
pub fn gibbs_best_response(q_bar: &[f64], reference: &[f64], eta: f64) -> Result<Vec<f64>> {
    softmax(&gibbs_logits(q_bar, reference, eta)?)
}

/// Optimal regularized value `Phi(eta q_bar + ln ref) / eta`.
pub fn best_response_value(q_bar: &[f64], reference: &[f64], eta: f64) -> Result<f64> {
    Ok(log_partition(&gibbs_logits(q_bar, reference, eta)?)? / eta)
}

/// Regularized objective `<pi, q> - KL(pi || ref) / eta` of a single
/// distribution.
pub fn regularized_objective(
    pi: &[f64],
    q_bar: &[f64],
    reference: &[f64],
    eta: f64,
) -> Result<f64> {
    let linear: f64 = pi.iter().zip(q_bar).map(|(p, q)| p * q).sum();
    Ok(linear - kl_divergence(pi, reference)? / eta)
}

/// Marginalized payoff of `player` against the opponents inside `opponents`.
pub fn marginal_q<P: JointPolicy>(
    payoff: &RewardTensor,
    opponents: &P,
    player: usize,
    x: usize,
) -> Result<Vec<f64>> {
    payoff.check_shape(opponents.shape())?;
    if player >= opponents.shape().num_players() || x >= opponents.shape().num_contexts() {
        return Err(Error::ShapeMismatch(format!(
            "player {player} / context {x} out of range"
        )));
    }
    Ok(opponents.opponent_marginal_q(payoff, player, x))
}

/// `E_{a~pi}[Q_i(x,a)] - KL(marg_i(pi) || ref_i) / eta` at context `x`.
pub fn policy_value<P: JointPolicy>(
    pi: &P,
    player: usize,
    payoff: &RewardTensor,
    reference: &ProductPolicy,
    eta: f64,
    x: usize,
) -> Result<f64> {
    payoff.check_shape(pi.shape())?;
    let marginal = pi.marginal(player, x);
    let kl = kl_divergence(&marginal, reference.dist(player, x))?;
    Ok(pi.expected_payoff(payoff, x) - kl / eta)
}

/// Per-context, per-player deviation gain `V^{†,pi_-i}(x) - V^{pi}(x)`.
pub fn deviation_gain<P: JointPolicy>(
    pi: &P,
    player: usize,
    payoff: &RewardTensor,
    reference: &ProductPolicy,
    eta: f64,
    x: usize,
) -> Result<f64> {
    let q_bar = marginal_q(payoff, pi, player, x)?;
    let br = best_response_value(&q_bar, reference.dist(player, x), eta)?;
    Ok(br - policy_value(pi, player, payoff, reference, eta, x)?)
}

/// Total exploitability `sum_i E_{x~rho}[V_i^{†,pi_-i}(x) - V_i^{pi}(x)]`
/// against arbitrary payoff tables. Signed: tiny negative residue is kept.
pub fn exploitability<P: JointPolicy>(
    pi: &P,
    payoffs: &[RewardTensor],
    rho: &[f64],
    reference: &ProductPolicy,
    eta: f64,
) -> Result<f64> {
    let shape = pi.shape();
    if payoffs.len() != shape.num_players() || rho.len() != shape.num_contexts() {
        return Err(Error::ShapeMismatch(
            "payoffs or context weights do not match the policy".into(),
        ));
    }
    if reference.shape() != shape {
        return Err(Error::ShapeMismatch(
            "reference shape differs from policy".into(),
        ));
    }
    let mut total = 0.0;
    for (i, payoff) in payoffs.iter().enumerate() {
        for (x, &w) in rho.iter().enumerate() {
            if w > 0.0 {
                total += w * deviation_gain(pi, i, payoff, reference, eta, x)?;
            }
        }
    }
    Ok(total)
}

/// NE total exploitability of a product policy on the true rewards.
pub fn ne_gap(pi: &ProductPolicy, spec: &GameSpec) -> Result<f64> {
    exploitability(pi, spec.rewards(), spec.rho(), spec.reference(), spec.eta())
}

/// CCE total exploitability of a mixture on the true rewards.
///
/// Unlike [`ne_gap`], this can be genuinely negative when the mixture is
/// correlated: a correlated profile may pay more than any unilateral
/// deviation against the opponents' averaged play.
pub fn cce_gap(pi_bar: &MixturePolicy, spec: &GameSpec) -> Result<f64> {
    exploitability(
        pi_bar,
        spec.rewards(),
        spec.rho(),
        spec.reference(),
        spec.eta(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{RawGame, Shape};

    const E: f64 = std::f64::consts::E;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn log_partition_examples() {
        assert!(close(log_partition(&[0.0, 0.0]).unwrap(), 2f64.ln(), 1e-15));
        assert!(close(
            log_partition(&[1000.0, 1000.0]).unwrap(),
            1000.0 + 2f64.ln(),
            1e-12
        ));
        // ln(e + 1)
        assert!(close(
            log_partition(&[1.0, 0.0]).unwrap(),
            1.3132616875182228,
            1e-15
        ));
        assert!(matches!(
            log_partition(&[f64::NAN, 0.0]),
            Err(Error::InvalidLogits(_))
        ));
        assert!(log_partition(&[]).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(close(
            kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            2f64.ln(),
            1e-15
        ));
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::SupportViolation { index: 1, .. })
        ));
    }

    #[test]
    fn gibbs_examples() {
        let r = gibbs_best_response(&[0.4, 0.4, 0.4], &[0.2, 0.3, 0.5], 3.0).unwrap();
        for (a, b) in r.iter().zip([0.2, 0.3, 0.5]) {
            assert!(close(*a, b, 1e-15));
        }
        let g = gibbs_best_response(&[1.0, 0.0], &[0.5, 0.5], 1.0).unwrap();
        assert!(close(g[0], E / (E + 1.0), 1e-15));
        assert!(close(g[0], 0.7310585786300049, 1e-15));
        assert!(close(g[1], 0.2689414213699951, 1e-15));
        let tiny = gibbs_best_response(&[1.0, 0.0, 0.3], &[0.1, 0.6, 0.3], 1e-12).unwrap();
        for (a, b) in tiny.iter().zip([0.1, 0.6, 0.3]) {
            assert!(close(*a, b, 1e-10));
        }
        assert!(gibbs_best_response(&[f64::INFINITY, 0.0], &[0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn best_response_value_examples() {
        assert!(close(
            best_response_value(&[0.7; 3], &[0.2, 0.3, 0.5], 2.0).unwrap(),
            0.7,
            1e-15
        ));
        // ln((e+1)/2)
        assert!(close(
            best_response_value(&[1.0, 0.0], &[0.5, 0.5], 1.0).unwrap(),
            0.6201145069582775,
            1e-15
        ));
        // ln(0.9 + 0.1 e)
        assert!(close(
            best_response_value(&[0.0, 1.0], &[0.9, 0.1], 1.0).unwrap(),
            0.1585650787404291,
            1e-15
        ));
    }

    fn matching_game() -> GameSpec {
        GameSpec::try_from(RawGame {
            context_labels: vec![],
            rho: vec![1.0],
            action_counts: vec![2, 2],
            rewards: vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]],
            eta: 1.0,
            reference: vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
        })
        .unwrap()
    }

    #[test]
    fn marginal_q_examples() {
        let spec = matching_game();
        let uniform = ProductPolicy::uniform(spec.shape());
        assert_eq!(
            marginal_q(spec.reward(0), &uniform, 0, 0).unwrap(),
            vec![0.5, 0.5]
        );
        let c = RewardTensor::constant(spec.shape(), 0.3);
        let q = marginal_q(&c, &uniform, 1, 0).unwrap();
        assert!(q.iter().all(|v| close(*v, 0.3, 1e-15)));
        let mix = MixturePolicy::singleton(uniform.clone());
        assert_eq!(
            marginal_q(spec.reward(0), &mix, 0, 0).unwrap(),
            marginal_q(spec.reward(0), &uniform, 0, 0).unwrap()
        );
        let other = Shape::new(vec![3, 2], 1).unwrap();
        let wrong = RewardTensor::constant(&other, 0.0);
        assert!(matches!(
            marginal_q(&wrong, &uniform, 0, 0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn policy_value_examples() {
        let spec = matching_game();
        let pure = ProductPolicy::new(
            spec.shape(),
            vec![vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]]],
        )
        .unwrap();
        let v = policy_value(&pure, 0, spec.reward(0), spec.reference(), 1.0, 0).unwrap();
        assert!(close(v, 1.0 - 2f64.ln(), 1e-15));
        assert!(close(v, 0.3068528194400547, 1e-15));

        let c = RewardTensor::constant(spec.shape(), 0.42);
        let v = policy_value(spec.reference(), 1, &c, spec.reference(), 1.0, 0).unwrap();
        assert!(close(v, 0.42, 1e-15));

        let mix = MixturePolicy::singleton(pure.clone());
        assert_eq!(
            policy_value(&mix, 0, spec.reward(0), spec.reference(), 1.0, 0).unwrap(),
            policy_value(&pure, 0, spec.reward(0), spec.reference(), 1.0, 0).unwrap()
        );
    }

    #[test]
    fn gaps_vanish_in_trivial_cases() {
        let mut raw = matching_game().to_raw();
        raw.rewards = vec![vec![0.25; 4], vec![0.25; 4]];
        let spec = GameSpec::try_from(raw).unwrap();
        assert!(close(ne_gap(spec.reference(), &spec).unwrap(), 0.0, 1e-15));
        let mix = MixturePolicy::singleton(spec.reference().clone());
        assert!(close(cce_gap(&mix, &spec).unwrap(), 0.0, 1e-15));
    }

    #[test]
    fn decoupled_game_gibbs_is_exact_ne() {
        // r_1 depends only on a_1, r_2 only on a_2; two contexts.
        let own_1 = [[0.9, 0.2, 0.5], [0.1, 0.6, 0.3]];
        let own_2 = [[0.3, 0.8], [0.7, 0.0]];
        let mut r1 = Vec::new();
        let mut r2 = Vec::new();
        for (u1, u2) in own_1.iter().zip(&own_2) {
            for &v1 in u1 {
                for &v2 in u2 {
                    r1.push(v1);
                    r2.push(v2);
                }
            }
        }
        let reference = vec![
            vec![vec![0.2, 0.5, 0.3], vec![1.0 / 3.0; 3]],
            vec![vec![0.5, 0.5], vec![0.9, 0.1]],
        ];
        let spec = GameSpec::try_from(RawGame {
            context_labels: vec![],
            rho: vec![0.4, 0.6],
            action_counts: vec![3, 2],
            rewards: vec![r1, r2],
            eta: 1.7,
            reference: reference.clone(),
        })
        .unwrap();
        let dists = vec![
            (0..2)
                .map(|x| gibbs_best_response(&own_1[x], &reference[0][x], 1.7).unwrap())
                .collect(),
            (0..2)
                .map(|x| gibbs_best_response(&own_2[x], &reference[1][x], 1.7).unwrap())
                .collect(),
        ];
        let pi = ProductPolicy::new(spec.shape(), dists).unwrap();
        assert!(ne_gap(&pi, &spec).unwrap().abs() <= 1e-10);
    }
}
