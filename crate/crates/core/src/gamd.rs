//! Anchored mirror-descent self-play with stepsize `1/t`, producing a
//! time-averaged (correlated) policy.
//!
//! Each player's update is the exponentiated-gradient step
//!
//! ```text
//! pi^(t+1)(a) ∝ ref(a)^(1/t) · pi^(t)(a)^((t-1)/t) · exp((eta/t) · q^(t)(a))
//! ```
//!
//! which unrolls to the Gibbs policy of the running-average payoff,
//! `pi^(t+1) ∝ ref · exp(eta · mean(q^(1..t)))`. Iterates are kept in log
//! space and normalized once per step.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{opponent_q, EmpiricalModel, JointPolicy, MixturePolicy, ProductPolicy};
use crate::gane::empirical_values;
use crate::values::{
    best_response_value, gibbs_best_response, kl_divergence, log_partition, regularized_objective,
};

fn md_step_log(
    log_pi: &[f64],
    log_ref: &[f64],
    q_bar: &[f64],
    eta: f64,
    t: usize,
) -> Result<Vec<f64>> {
    let tf = t as f64;
    let logits: Vec<f64> = log_pi
        .iter()
        .zip(log_ref)
        .zip(q_bar)
        .map(|((lp, lr), q)| lr / tf + lp * ((tf - 1.0) / tf) + (eta / tf) * q)
        .collect();
    let z = log_partition(&logits)?;
    Ok(logits.into_iter().map(|l| l - z).collect())
}

/// One mirror-descent update at iteration `t >= 1`.
pub fn md_step(
    pi_t: &[f64],
    reference: &[f64],
    q_bar: &[f64],
    eta: f64,
    t: usize,
) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::InvalidArgument("iteration index starts at 1".into()));
    }
    if pi_t.len() != reference.len() || q_bar.len() != reference.len() {
        return Err(Error::ShapeMismatch(
            "md_step inputs differ in length".into(),
        ));
    }
    for d in [pi_t, reference] {
        if let Some(index) = d.iter().position(|&p| !(p > 0.0)) {
            return Err(Error::SupportLost { index });
        }
    }
    if let Some(v) = q_bar.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("payoff entry {v}")));
    }
    let log_pi: Vec<f64> = pi_t.iter().map(|p| p.ln()).collect();
    let log_ref: Vec<f64> = reference.iter().map(|p| p.ln()).collect();
    let next = md_step_log(&log_pi, &log_ref, q_bar, eta, t)?;
    Ok(next.into_iter().map(f64::exp).collect())
}

/// One player's iterates and the payoff vectors they faced, at one context.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerSequence {
    pub iterates: Vec<Vec<f64>>,
    pub payoffs: Vec<Vec<f64>>,
}

impl PlayerSequence {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    fn mean_payoff(&self, upto: usize) -> Vec<f64> {
        let mut avg = vec![0.0; self.payoffs[0].len()];
        for q in &self.payoffs[..upto] {
            for (a, v) in avg.iter_mut().zip(q) {
                *a += v;
            }
        }
        avg.iter_mut().for_each(|a| *a /= upto as f64);
        avg
    }

    /// Average external regret against the best fixed distribution in
    /// hindsight, whose value is closed-form.
    pub fn external_regret(&self, reference: &[f64], eta: f64) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        let horizon = self.len() as f64;
        let comparator = best_response_value(&self.mean_payoff(self.len()), reference, eta)?;
        let mut realized = 0.0;
        for (pi, q) in self.iterates.iter().zip(&self.payoffs) {
            realized += regularized_objective(pi, q, reference, eta)?;
        }
        Ok(comparator - realized / horizon)
    }

    /// Largest sup-norm gap between each recursive iterate `pi^(t+1)` and the
    /// Gibbs policy of the running-average payoff over rounds `1..=t`.
    pub fn ftl_deviation(&self, reference: &[f64], eta: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for t in 1..self.len() {
            let direct = gibbs_best_response(&self.mean_payoff(t), reference, eta)?;
            worst = direct
                .iter()
                .zip(&self.iterates[t])
                .map(|(a, b)| (a - b).abs())
                .fold(worst, f64::max);
        }
        Ok(worst)
    }
}

/// Runs the anchored update against an arbitrary payoff sequence.
///
/// `adversary(t, current)` returns the round-`t` payoff vector and may
/// depend on the learner's current distribution.
pub fn run_online<F>(
    reference: &[f64],
    eta: f64,
    rounds: usize,
    mut adversary: F,
) -> Result<PlayerSequence>
where
    F: FnMut(usize, &[f64]) -> Vec<f64>,
{
    if let Some(index) = reference.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::SupportLost { index });
    }
    let log_ref: Vec<f64> = reference.iter().map(|p| p.ln()).collect();
    let mut log_pi = log_ref.clone();
    let mut seq = PlayerSequence {
        iterates: Vec::with_capacity(rounds),
        payoffs: Vec::with_capacity(rounds),
    };
    for t in 1..=rounds {
        let pi: Vec<f64> = log_pi.iter().map(|l| l.exp()).collect();
        let q = adversary(t, &pi);
        if q.len() != pi.len() {
            return Err(Error::ShapeMismatch(
                "adversary payoff has wrong length".into(),
            ));
        }
        log_pi = md_step_log(&log_pi, &log_ref, &q, eta, t)?;
        seq.iterates.push(pi);
        seq.payoffs.push(q);
    }
    Ok(seq)
}

/// Per-iteration record of a self-play run. Indexed `[t][player][context]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GamdTrace {
    pub snapshots: Vec<ProductPolicy>,
    pub payoffs: Vec<Vec<Vec<Vec<f64>>>>,
    /// `<pi_i^(t), q_i^(t)> - KL(pi_i^(t) || ref_i) / eta`.
    pub objectives: Vec<Vec<Vec<f64>>>,
}

impl GamdTrace {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn sequence(&self, player: usize, x: usize) -> PlayerSequence {
        PlayerSequence {
            iterates: self
                .snapshots
                .iter()
                .map(|p| p.dist(player, x).to_vec())
                .collect(),
            payoffs: self.payoffs.iter().map(|q| q[player][x].clone()).collect(),
        }
    }
}

/// Average external regret of `player` at context `x` over the trace.
pub fn external_regret(
    trace: &GamdTrace,
    player: usize,
    x: usize,
    reference: &[f64],
    eta: f64,
) -> Result<f64> {
    trace.sequence(player, x).external_regret(reference, eta)
}

/// Largest deviation between recursive iterates and their follow-the-leader form.
pub fn ftl_consistency(trace: &GamdTrace, reference: &ProductPolicy, eta: f64) -> Result<f64> {
    let Some(first) = trace.snapshots.first() else {
        return Err(Error::InvalidArgument("empty trace".into()));
    };
    let shape = first.shape();
    let mut worst: f64 = 0.0;
    for i in 0..shape.num_players() {
        for x in 0..shape.num_contexts() {
            worst = worst.max(
                trace
                    .sequence(i, x)
                    .ftl_deviation(reference.dist(i, x), eta)?,
            );
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    Full,
    /// Keeps only the snapshots needed for the averaged policy.
    Thin,
}

#[derive(Debug, Clone)]
pub struct GamdOutput {
    pub mixture: MixturePolicy,
    pub trace: Option<GamdTrace>,
    /// `V_hat_i(x)` of the averaged policy, KL taken on the mixture marginal.
    pub values: Vec<Vec<f64>>,
    /// Same values with the per-iterate KL averaged instead.
    pub values_component_kl: Vec<Vec<f64>>,
}

struct ContextRun {
    /// `[t][player]`
    dists: Vec<Vec<Vec<f64>>>,
    payoffs: Vec<Vec<Vec<f64>>>,
    objectives: Vec<Vec<f64>>,
}

fn run_context(
    model: &EmpiricalModel,
    reference: &ProductPolicy,
    eta: f64,
    rounds: usize,
    x: usize,
    keep_trace: bool,
) -> Result<ContextRun> {
    let shape = model.shape();
    let m = shape.num_players();
    let log_ref: Vec<Vec<f64>> = (0..m)
        .map(|i| reference.dist(i, x).iter().map(|p| p.ln()).collect())
        .collect();
    let mut logs = log_ref.clone();
    let mut run = ContextRun {
        dists: Vec::with_capacity(rounds),
        payoffs: Vec::new(),
        objectives: Vec::new(),
    };
    for t in 1..=rounds {
        let dists: Vec<Vec<f64>> = logs
            .iter()
            .map(|l| l.iter().map(|v| v.exp()).collect())
            .collect();
        let views: Vec<&[f64]> = dists.iter().map(Vec::as_slice).collect();
        let payoffs: Vec<Vec<f64>> = (0..m)
            .map(|i| opponent_q(shape, model.payoff(i).row(x), &views, i))
            .collect();
        if keep_trace {
            let objectives = (0..m)
                .map(|i| regularized_objective(&dists[i], &payoffs[i], reference.dist(i, x), eta))
                .collect::<Result<Vec<_>>>()?;
            run.objectives.push(objectives);
        }
        for i in 0..m {
            logs[i] = md_step_log(&logs[i], &log_ref[i], &payoffs[i], eta, t)?;
        }
        if keep_trace {
            run.payoffs.push(payoffs);
        }
        run.dists.push(dists);
    }
    Ok(run)
}

/// Self-play for `rounds` iterations from the reference policy, with all
/// players updated simultaneously against the opponents' current iterates.
/// Returns the uniform mixture of the iterates `pi^(1..=rounds)`.
pub fn run_gamd(
    model: &EmpiricalModel,
    reference: &ProductPolicy,
    eta: f64,
    rounds: usize,
    mode: TraceMode,
) -> Result<GamdOutput> {
    if rounds == 0 {
        return Err(Error::InvalidArgument(
            "at least one iteration is required".into(),
        ));
    }
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
    let shape = model.shape();
    let keep = mode == TraceMode::Full;
    let mut runs = (0..shape.num_contexts())
        .into_par_iter()
        .map(|x| run_context(model, reference, eta, rounds, x, keep))
        .collect::<Result<Vec<_>>>()?;

    let m = shape.num_players();
    let mut snapshots = Vec::with_capacity(rounds);
    let mut payoffs = Vec::new();
    let mut objectives = Vec::new();
    for t in 0..rounds {
        let dists: Vec<Vec<Vec<f64>>> = (0..m)
            .map(|i| {
                runs.iter_mut()
                    .map(|r| std::mem::take(&mut r.dists[t][i]))
                    .collect()
            })
            .collect();
        snapshots.push(ProductPolicy::new(shape, dists)?);
        if keep {
            payoffs.push(
                (0..m)
                    .map(|i| {
                        runs.iter_mut()
                            .map(|r| std::mem::take(&mut r.payoffs[t][i]))
                            .collect()
                    })
                    .collect(),
            );
            objectives.push(
                (0..m)
                    .map(|i| runs.iter().map(|r| r.objectives[t][i]).collect())
                    .collect(),
            );
        }
    }

    let mixture = MixturePolicy::uniform(snapshots.clone())?;
    let values = empirical_values(&mixture, model, reference, eta)?;
    let values_component_kl = component_kl_values(&mixture, model, reference, eta)?;
    let trace = keep.then_some(GamdTrace {
        snapshots,
        payoffs,
        objectives,
    });
    Ok(GamdOutput {
        mixture,
        trace,
        values,
        values_component_kl,
    })
}

/// `E_{pi_bar}[Q_hat_i] - mean_t KL(pi_i^(t) || ref_i) / eta`.
fn component_kl_values(
    mixture: &MixturePolicy,
    model: &EmpiricalModel,
    reference: &ProductPolicy,
    eta: f64,
) -> Result<Vec<Vec<f64>>> {
    let shape = model.shape();
    (0..shape.num_players())
        .map(|i| {
            (0..shape.num_contexts())
                .map(|x| {
                    let mut kl = 0.0;
                    for (w, p) in mixture.components() {
                        kl += w * kl_divergence(p.dist(i, x), reference.dist(i, x))?;
                    }
                    Ok(mixture.expected_payoff(model.payoff(i), x) - kl / eta)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{Provenance, RewardTensor, Shape};

    #[test]
    fn first_step_is_gibbs() {
        let next = md_step(&[0.5, 0.5], &[0.5, 0.5], &[1.0, 0.0], 1.0, 1).unwrap();
        assert!((next[0] - 0.7310585786300049).abs() < 1e-15);
        assert!((next[1] - 0.2689414213699951).abs() < 1e-15);
    }

    #[test]
    fn constant_payoff_at_reference_stays() {
        let r = [0.2, 0.3, 0.5];
        let next = md_step(&r, &r, &[0.7, 0.7, 0.7], 2.0, 5).unwrap();
        for (a, b) in next.iter().zip(r) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_payoffs_return_to_uniform() {
        let u = [0.5, 0.5];
        let p2 = md_step(&u, &u, &[1.0, 0.0], 1.0, 1).unwrap();
        let p3 = md_step(&p2, &u, &[0.0, 1.0], 1.0, 2).unwrap();
        assert!((p3[0] - 0.5).abs() < 1e-15 && (p3[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lost_support_is_an_error() {
        assert!(matches!(
            md_step(&[1.0, 0.0], &[0.5, 0.5], &[0.0, 0.0], 1.0, 2),
            Err(Error::SupportLost { index: 1 })
        ));
        assert!(md_step(&[0.5, 0.5], &[0.5, 0.5], &[0.0, 0.0], 1.0, 0).is_err());
    }

    #[test]
    fn single_round_regret() {
        let seq = run_online(&[0.5, 0.5], 1.0, 1, |_, _| vec![1.0, 0.0]).unwrap();
        // ln((e+1)/2) - 0.5
        let r = seq.external_regret(&[0.5, 0.5], 1.0).unwrap();
        assert!((r - 0.12011450695827752).abs() < 1e-15);
    }

    #[test]
    fn constant_payoffs_have_no_regret() {
        let seq = run_online(&[0.1, 0.9], 1.3, 20, |_, _| vec![0.4, 0.4]).unwrap();
        assert!(seq.external_regret(&[0.1, 0.9], 1.3).unwrap().abs() < 1e-14);
        assert!(seq.ftl_deviation(&[0.1, 0.9], 1.3).unwrap() < 1e-15);
    }

    fn model(shape: &Shape, tables: Vec<Vec<f64>>) -> EmpiricalModel {
        let payoffs = tables
            .into_iter()
            .map(|t| RewardTensor::new(shape, t).unwrap())
            .collect();
        EmpiricalModel::new(shape, payoffs, vec![Provenance::Exact; shape.num_players()]).unwrap()
    }

    #[test]
    fn one_round_gives_reference() {
        let shape = Shape::new(vec![2, 2], 1).unwrap();
        let m = model(
            &shape,
            vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]],
        );
        let reference = ProductPolicy::uniform(&shape);
        let out = run_gamd(&m, &reference, 1.0, 1, TraceMode::Full).unwrap();
        assert_eq!(out.mixture.len(), 1);
        assert_eq!(out.mixture.components()[0].1, reference);
    }

    #[test]
    fn constant_model_stays_at_reference() {
        let shape = Shape::new(vec![3, 2], 2).unwrap();
        let m = model(&shape, vec![vec![0.3; 12], vec![0.3; 12]]);
        let reference = ProductPolicy::new(
            &shape,
            vec![
                vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.2, 0.2]],
                vec![vec![0.5, 0.5], vec![0.9, 0.1]],
            ],
        )
        .unwrap();
        let out = run_gamd(&m, &reference, 1.0, 25, TraceMode::Full).unwrap();
        for (_, p) in out.mixture.components() {
            assert!(p.max_abs_diff(&reference) < 1e-14);
        }
        for i in 0..2 {
            for x in 0..2 {
                let marg = out.mixture.marginal(i, x);
                for (a, b) in marg.iter().zip(reference.dist(i, x)) {
                    assert!((a - b).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn trace_matches_ftl_form_and_thin_mode_agrees() {
        let shape = Shape::new(vec![2, 3], 2).unwrap();
        let t1: Vec<f64> = (0..12).map(|k| ((k * 7) % 11) as f64 / 10.0).collect();
        let t2: Vec<f64> = (0..12).map(|k| ((k * 5 + 3) % 13) as f64 / 12.0).collect();
        let m = model(&shape, vec![t1, t2]);
        let reference = ProductPolicy::uniform(&shape);
        let full = run_gamd(&m, &reference, 1.5, 60, TraceMode::Full).unwrap();
        let trace = full.trace.as_ref().unwrap();
        assert_eq!(trace.len(), 60);
        assert!(ftl_consistency(trace, &reference, 1.5).unwrap() <= 1e-12);
        let thin = run_gamd(&m, &reference, 1.5, 60, TraceMode::Thin).unwrap();
        assert!(thin.trace.is_none());
        assert_eq!(thin.mixture, full.mixture);
        // Convexity of KL: marginal-KL values dominate averaged-KL values.
        for i in 0..2 {
            for x in 0..2 {
                assert!(full.values[i][x] >= full.values_component_kl[i][x] - 1e-12);
            }
        }
    }
}
