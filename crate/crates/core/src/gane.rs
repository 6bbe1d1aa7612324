//! Regularized Nash equilibrium of an estimated game, and the end-to-end
//! pipeline from offline data to an anchored product policy.
//!
//! The equilibrium is found by damped simultaneous Gibbs best-response
//! iteration started at the reference policy, solved independently per
//! context. The certificate is the empirical NE gap itself, together with
//! the distance between the iterate and its own best response.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{opponent_q, EmpiricalModel, JointPolicy, OfflineDataset, ProductPolicy};
use crate::regression::{fit_model, Estimator};
use crate::values::{best_response_value, gibbs_best_response, kl_divergence, policy_value};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight on the best response in each sweep, in `(0, 1]`.
    pub damping: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            damping: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeSolveReport {
    pub policy: ProductPolicy,
    /// Largest number of sweeps used by any context.
    pub iterations: usize,
    /// Largest per-context empirical NE gap `sum_i (V_hat_i^† - V_hat_i)` of
    /// the returned policy.
    pub residual: f64,
    /// Largest sup-norm distance between a returned marginal and the Gibbs
    /// best response to its opponents.
    pub fixed_point_error: f64,
    pub converged: bool,
}

struct ContextSolve {
    dists: Vec<Vec<f64>>,
    iterations: usize,
    residual: f64,
    fixed_point_error: f64,
    converged: bool,
}

/// Number of consecutive negligible moves after which a sweep is declared stalled.
const STALL_SWEEPS: usize = 5;

fn solve_context(
    model: &EmpiricalModel,
    reference: &ProductPolicy,
    eta: f64,
    x: usize,
    settings: &SolverSettings,
) -> Result<ContextSolve> {
    let shape = model.shape();
    let m = shape.num_players();
    let mut dists: Vec<Vec<f64>> = (0..m).map(|i| reference.dist(i, x).to_vec()).collect();
    let mut stalled = 0;
    let mut last = (f64::INFINITY, f64::INFINITY);

    for sweep in 1..=settings.max_iter {
        let views: Vec<&[f64]> = dists.iter().map(Vec::as_slice).collect();
        let mut gap = 0.0;
        let mut displacement: f64 = 0.0;
        let mut responses = Vec::with_capacity(m);
        for i in 0..m {
            let q = opponent_q(shape, model.payoff(i).row(x), &views, i);
            let ref_i = reference.dist(i, x);
            let br = gibbs_best_response(&q, ref_i, eta)?;
            let own: f64 = views[i].iter().zip(&q).map(|(p, v)| p * v).sum();
            gap += best_response_value(&q, ref_i, eta)?
                - (own - kl_divergence(views[i], ref_i)? / eta);
            displacement = br
                .iter()
                .zip(views[i])
                .map(|(a, b)| (a - b).abs())
                .fold(displacement, f64::max);
            responses.push(br);
        }
        if !gap.is_finite() {
            return Err(Error::NonFinite(format!(
                "NE gap at context {x}, sweep {sweep}"
            )));
        }
        last = (gap, displacement);
        if gap <= settings.tol && displacement <= settings.tol {
            return Ok(ContextSolve {
                dists,
                iterations: sweep,
                residual: gap,
                fixed_point_error: displacement,
                converged: true,
            });
        }
        if settings.damping * displacement < settings.tol / 10.0 {
            stalled += 1;
            if stalled >= STALL_SWEEPS {
                return Ok(ContextSolve {
                    dists,
                    iterations: sweep,
                    residual: gap,
                    fixed_point_error: displacement,
                    converged: false,
                });
            }
        } else {
            stalled = 0;
        }
        let lambda = settings.damping;
        for (d, br) in dists.iter_mut().zip(responses) {
            for (p, b) in d.iter_mut().zip(br) {
                *p = (1.0 - lambda) * *p + lambda * b;
            }
            let s: f64 = d.iter().sum();
            d.iter_mut().for_each(|p| *p /= s);
        }
    }
    Ok(ContextSolve {
        dists,
        iterations: settings.max_iter,
        residual: last.0,
        fixed_point_error: last.1,
        converged: false,
    })
}

/// Regularized Nash equilibrium of the estimated game.
///
/// Hitting `max_iter` is not an error; the report carries `converged = false`.
pub fn solve_regularized_ne(
    model: &EmpiricalModel,
    reference: &ProductPolicy,
    eta: f64,
    settings: &SolverSettings,
) -> Result<NeSolveReport> {
    if reference.shape() != model.shape() {
        return Err(Error::ShapeMismatch(
            "reference does not match model".into(),
        ));
    }
    if !reference.full_support() {
        return Err(Error::InvalidArgument(
            "reference policy lacks full support".into(),
        ));
    }
    if !(settings.damping > 0.0 && settings.damping <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "damping must lie in (0, 1], got {}",
            settings.damping
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "eta must be positive, got {eta}"
        )));
    }
    let shape = model.shape();
    let solves = (0..shape.num_contexts())
        .into_par_iter()
        .map(|x| solve_context(model, reference, eta, x, settings))
        .collect::<Result<Vec<_>>>()?;

    let m = shape.num_players();
    let mut dists = vec![Vec::with_capacity(shape.num_contexts()); m];
    let mut report_iter = 0;
    let mut residual: f64 = 0.0;
    let mut fixed_point_error: f64 = 0.0;
    let mut converged = true;
    for s in solves {
        report_iter = report_iter.max(s.iterations);
        residual = residual.max(s.residual);
        fixed_point_error = fixed_point_error.max(s.fixed_point_error);
        converged &= s.converged;
        for (i, d) in s.dists.into_iter().enumerate() {
            dists[i].push(d);
        }
    }
    Ok(NeSolveReport {
        policy: ProductPolicy::new(shape, dists)?,
        iterations: report_iter,
        residual,
        fixed_point_error,
        converged,
    })
}

/// Everything the Nash pipeline produces from one dataset.
#[derive(Debug, Clone)]
pub struct GaneOutput {
    pub model: EmpiricalModel,
    pub report: NeSolveReport,
    /// Empirical values `V_hat_i(x)` of the returned policy, `[player][context]`.
    pub values: Vec<Vec<f64>>,
}

impl GaneOutput {
    pub fn policy(&self) -> &ProductPolicy {
        &self.report.policy
    }
}

/// Regression, empirical equilibrium, and empirical values.
pub fn run_gane(
    data: &OfflineDataset,
    reference: &ProductPolicy,
    eta: f64,
    estimator: &Estimator,
    settings: &SolverSettings,
) -> Result<GaneOutput> {
    let model = fit_model(data, estimator)?;
    let report = solve_regularized_ne(&model, reference, eta, settings)?;
    let values = empirical_values(&report.policy, &model, reference, eta)?;
    Ok(GaneOutput {
        model,
        report,
        values,
    })
}

/// `V_hat_i(x)` of any joint policy under the estimated model.
pub fn empirical_values<P: JointPolicy>(
    policy: &P,
    model: &EmpiricalModel,
    reference: &ProductPolicy,
    eta: f64,
) -> Result<Vec<Vec<f64>>> {
    let shape = model.shape();
    (0..shape.num_players())
        .map(|i| {
            (0..shape.num_contexts())
                .map(|x| policy_value(policy, i, model.payoff(i), reference, eta, x))
                .collect()
        })
        .collect()
}
