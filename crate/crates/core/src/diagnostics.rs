//! Ground-truth audits of a learned policy.
//!
//! These read the true rewards from the [`GameSpec`] and are never used by
//! the learning pipelines themselves. The per-player, per-context gap
//! `V^{†} - V` on the true game splits as
//!
//! * term I: the same gap measured on the estimated model (optimization error),
//! * term II: true minus estimated best-response value,
//! * term III: estimated minus true value of the policy itself,
//!
//! and the split is an identity. For a product policy that is a Gibbs fixed
//! point of the estimated game, the first-order parts of terms II and III
//! cancel and their sum is bounded by `(eta/2) ||Q^† - Q_bar||_inf^2`.

use crate::error::{Error, Result};
use crate::game::{EmpiricalModel, GameSpec, JointPolicy, ProductPolicy, RewardTensor};
use crate::gane::NeSolveReport;
use crate::values::{best_response_value, marginal_q, policy_value};

/// Additive tolerance used by every proof-chain check.
pub const CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapTermsRow {
    pub player: usize,
    pub context: usize,
    pub term_i: f64,
    pub term_ii: f64,
    pub term_iii: f64,
    /// `V^{†,pi_-i}(x) - V^{pi}(x)` on the true rewards.
    pub lhs: f64,
    /// `(eta/2) ||Q^{†,pi_-i}(x,.) - Q_bar(x,.)||_inf^2`.
    pub rhs_smoothness: f64,
    /// `rhs_smoothness - (term_ii + term_iii)`.
    pub slack: f64,
}

impl GapTermsRow {
    pub fn identity_error(&self) -> f64 {
        (self.lhs - (self.term_i + self.term_ii + self.term_iii)).abs()
    }
}

pub fn gap_terms<P: JointPolicy>(
    policy: &P,
    model: &EmpiricalModel,
    spec: &GameSpec,
    player: usize,
    x: usize,
) -> Result<GapTermsRow> {
    if model.shape() != spec.shape() || policy.shape() != spec.shape() {
        return Err(Error::ShapeMismatch(
            "policy, model and game differ in shape".into(),
        ));
    }
    let eta = spec.eta();
    let reference = spec.reference();
    let ref_i = reference.dist(player, x);
    let q_hat = model.payoff(player);
    let q_true = spec.reward(player);

    let q_bar = marginal_q(q_hat, policy, player, x)?;
    let q_dagger = marginal_q(q_true, policy, player, x)?;
    let br_hat = best_response_value(&q_bar, ref_i, eta)?;
    let br_true = best_response_value(&q_dagger, ref_i, eta)?;
    let v_hat = policy_value(policy, player, q_hat, reference, eta, x)?;
    let v_true = policy_value(policy, player, q_true, reference, eta, x)?;

    let sup = q_dagger
        .iter()
        .zip(&q_bar)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let term_ii = br_true - br_hat;
    let term_iii = v_hat - v_true;
    let rhs_smoothness = 0.5 * eta * sup * sup;
    Ok(GapTermsRow {
        player,
        context: x,
        term_i: br_hat - v_hat,
        term_ii,
        term_iii,
        lhs: br_true - v_true,
        rhs_smoothness,
        slack: rhs_smoothness - (term_ii + term_iii),
    })
}

/// Rows for every (player, context), players outermost.
pub fn gap_terms_report<P: JointPolicy>(
    policy: &P,
    model: &EmpiricalModel,
    spec: &GameSpec,
) -> Result<Vec<GapTermsRow>> {
    let mut rows = Vec::with_capacity(spec.num_players() * spec.num_contexts());
    for i in 0..spec.num_players() {
        for x in 0..spec.num_contexts() {
            rows.push(gap_terms(policy, model, spec, i, x)?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CancellationCheck {
    pub rows: Vec<GapTermsRow>,
    pub min_slack: f64,
    /// Allowed slack floor, `-(CHECK_TOL + 2 * residual)`.
    pub floor: f64,
    pub warning: Option<String>,
}

impl CancellationCheck {
    pub fn holds(&self) -> bool {
        self.min_slack >= self.floor
    }
}

/// Evaluates the second-order cancellation bound at a solved equilibrium.
pub fn cancellation_check(
    report: &NeSolveReport,
    model: &EmpiricalModel,
    spec: &GameSpec,
) -> Result<CancellationCheck> {
    let rows = gap_terms_report(&report.policy, model, spec)?;
    let min_slack = rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    let warning = (!report.converged).then(|| {
        format!(
            "equilibrium solve did not converge (residual {:.3e}); bound assumes a fixed point",
            report.residual
        )
    });
    Ok(CancellationCheck {
        rows,
        min_slack,
        floor: -(CHECK_TOL + 2.0 * report.residual.max(0.0)),
        warning,
    })
}

/// Per player, the largest ratio `marg_i(policy)(a|x) / ref_i(a|x)`.
pub fn density_ratio_max<P: JointPolicy>(
    policy: &P,
    reference: &ProductPolicy,
) -> Result<Vec<f64>> {
    let shape = policy.shape();
    if reference.shape() != shape {
        return Err(Error::ShapeMismatch(
            "reference does not match policy".into(),
        ));
    }
    Ok((0..shape.num_players())
        .map(|i| {
            (0..shape.num_contexts())
                .flat_map(|x| {
                    let marg = policy.marginal(i, x);
                    let r = reference.dist(i, x).to_vec();
                    marg.into_iter()
                        .zip(r)
                        .map(|(p, q)| p / q)
                        .collect::<Vec<_>>()
                })
                .fold(0.0, f64::max)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub fn within_unit(&self) -> bool {
        self.min >= -CHECK_TOL && self.max <= 1.0 + CHECK_TOL
    }
}

/// Range of all best-response values against the supplied opponent profiles.
pub fn value_bound_check(
    payoffs: &[RewardTensor],
    reference: &ProductPolicy,
    eta: f64,
    profiles: &[&dyn JointPolicy],
) -> Result<ValueRange> {
    let mut range = ValueRange {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    };
    for profile in profiles {
        let shape = profile.shape();
        if payoffs.len() != shape.num_players() {
            return Err(Error::ShapeMismatch(
                "payoff count differs from players".into(),
            ));
        }
        for (i, payoff) in payoffs.iter().enumerate() {
            payoff.check_shape(shape)?;
            for x in 0..shape.num_contexts() {
                let q = profile.opponent_marginal_q(payoff, i, x);
                let v = best_response_value(&q, reference.dist(i, x), eta)?;
                range.min = range.min.min(v);
                range.max = range.max.max(v);
            }
        }
    }
    Ok(range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{MixturePolicy, Provenance, RawGame};
    use crate::gane::{solve_regularized_ne, SolverSettings};
    use crate::values::gibbs_best_response;

    fn spec() -> GameSpec {
        GameSpec::try_from(RawGame {
            context_labels: vec![],
            rho: vec![0.5, 0.5],
            action_counts: vec![2, 2],
            rewards: vec![
                vec![0.8, 0.2, 0.3, 0.6, 0.5, 0.1, 0.4, 0.7],
                vec![0.3, 0.7, 0.6, 0.2, 0.9, 0.4, 0.2, 0.5],
            ],
            eta: 1.0,
            reference: vec![vec![vec![0.5, 0.5]; 2]; 2],
        })
        .unwrap()
    }

    #[test]
    fn exact_model_has_no_statistical_terms() {
        let s = spec();
        let model = EmpiricalModel::exact(&s);
        let pi = ProductPolicy::new(
            s.shape(),
            vec![
                vec![vec![0.3, 0.7], vec![0.6, 0.4]],
                vec![vec![0.1, 0.9], vec![0.5, 0.5]],
            ],
        )
        .unwrap();
        for row in gap_terms_report(&pi, &model, &s).unwrap() {
            assert_eq!(row.term_ii, 0.0);
            assert_eq!(row.term_iii, 0.0);
            assert_eq!(row.lhs, row.term_i);
            assert_eq!(row.rhs_smoothness, 0.0);
        }
    }

    #[test]
    fn constant_offset_slack() {
        let s = spec();
        let c = 0.05;
        let payoffs = s
            .rewards()
            .iter()
            .map(|t| {
                RewardTensor::new(s.shape(), t.values().iter().map(|v| v + c).collect()).unwrap()
            })
            .collect();
        let model = EmpiricalModel::new(s.shape(), payoffs, vec![Provenance::Exact; 2]).unwrap();
        let report =
            solve_regularized_ne(&model, s.reference(), 1.0, &SolverSettings::default()).unwrap();
        let check = cancellation_check(&report, &model, &s).unwrap();
        assert!(check.warning.is_none());
        for row in &check.rows {
            assert!((row.term_ii + row.term_iii).abs() < 1e-12);
            assert!((row.rhs_smoothness - c * c / 2.0).abs() < 1e-12);
            assert!((row.slack - c * c / 2.0).abs() < 1e-12);
        }
        assert!(check.holds());
    }

    #[test]
    fn density_ratios() {
        let s = spec();
        assert_eq!(
            density_ratio_max(s.reference(), s.reference()).unwrap(),
            vec![1.0, 1.0]
        );
        let g = gibbs_best_response(&[1.0, 0.0], &[0.5, 0.5], 1.0).unwrap();
        let pi = ProductPolicy::new(s.shape(), vec![vec![g.clone(); 2], vec![g; 2]]).unwrap();
        let mix = MixturePolicy::singleton(pi);
        for r in density_ratio_max(&mix, s.reference()).unwrap() {
            assert!(r <= std::f64::consts::E);
        }
    }

    #[test]
    fn value_range_examples() {
        let s = spec();
        let constant = vec![RewardTensor::constant(s.shape(), 0.35); 2];
        let uniform = ProductPolicy::uniform(s.shape());
        let r = value_bound_check(&constant, s.reference(), 1.0, &[&uniform]).unwrap();
        assert!((r.min - 0.35).abs() < 1e-15 && (r.max - 0.35).abs() < 1e-15);

        let corners = vec![
            RewardTensor::new(s.shape(), vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap(),
            RewardTensor::new(s.shape(), vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap(),
        ];
        let r =
            value_bound_check(&corners, s.reference(), 3.0, &[&uniform, s.reference()]).unwrap();
        assert!(r.within_unit());
    }
}
