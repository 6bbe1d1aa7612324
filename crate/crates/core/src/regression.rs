//! Reward estimation from offline data: least squares over a finite class,
//! or per-cell empirical means.

use crate::error::{Error, Result};
use crate::game::{
    BehaviorDistribution, EmpiricalModel, FunctionClass, GameSpec, OfflineDataset, Provenance,
    RewardTensor, Shape,
};

/// Value assigned to cells the dataset never visits.
pub const UNVISITED_DEFAULT: f64 = 0.5;

/// Index of the class member with the smallest squared residual on
/// `player`'s observed rewards. Ties go to the lowest index.
pub fn erm_finite_class(
    data: &OfflineDataset,
    class: &FunctionClass,
    player: usize,
) -> Result<usize> {
    if player >= data.shape().num_players() {
        return Err(Error::ShapeMismatch(format!("no player {player}")));
    }
    for f in class.members() {
        f.check_shape(data.shape())?;
    }
    let mut best = (0, f64::INFINITY);
    for (k, f) in class.members().iter().enumerate() {
        let loss: f64 = data
            .cells_for(player)
            .map(|(cell, r)| {
                let d = f.values()[cell] - r;
                d * d
            })
            .sum();
        if loss < best.1 {
            best = (k, loss);
        }
    }
    Ok(best.0)
}

/// Per-cell estimate with its visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularEstimate {
    pub table: RewardTensor,
    pub visit_counts: Vec<u64>,
}

impl TabularEstimate {
    pub fn unvisited(&self) -> impl Iterator<Item = usize> + '_ {
        self.visit_counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(cell, _)| cell)
    }
}

/// Empirical mean of observed rewards per cell, clipped to `[0,1]`.
pub fn tabular_mean(
    data: &OfflineDataset,
    player: usize,
    shape: &Shape,
) -> Result<TabularEstimate> {
    if data.shape() != shape {
        return Err(Error::ShapeMismatch(
            "dataset does not match game shape".into(),
        ));
    }
    if player >= shape.num_players() {
        return Err(Error::ShapeMismatch(format!("no player {player}")));
    }
    let mut sums = vec![0.0; shape.num_cells()];
    let mut counts = vec![0u64; shape.num_cells()];
    for (cell, r) in data.cells_for(player) {
        sums[cell] += r;
        counts[cell] += 1;
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| {
            if c == 0 {
                UNVISITED_DEFAULT
            } else {
                (s / c as f64).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(TabularEstimate {
        table: RewardTensor::new(shape, values)?,
        visit_counts: counts,
    })
}

/// How the per-player reward estimates are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Tabular,
    /// One finite class per player.
    FiniteClass(Vec<FunctionClass>),
}

/// Fits every player's reward table.
pub fn fit_model(data: &OfflineDataset, estimator: &Estimator) -> Result<EmpiricalModel> {
    let shape = data.shape();
    let m = shape.num_players();
    let mut payoffs = Vec::with_capacity(m);
    let mut provenance = Vec::with_capacity(m);
    match estimator {
        Estimator::Tabular => {
            for i in 0..m {
                let est = tabular_mean(data, i, shape)?;
                payoffs.push(est.table);
                provenance.push(Provenance::Tabular {
                    visit_counts: est.visit_counts,
                });
            }
        }
        Estimator::FiniteClass(classes) => {
            if classes.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "{} function classes for {m} players",
                    classes.len()
                )));
            }
            for (i, class) in classes.iter().enumerate() {
                let k = erm_finite_class(data, class, i)?;
                payoffs.push(class.members()[k].clone());
                provenance.push(Provenance::FiniteClass { index: k });
            }
        }
    }
    EmpiricalModel::new(shape, payoffs, provenance)
}

/// `E_mu[(Q_hat_i - r*_i)^2]`, the exact squared regression error under `mu`.
pub fn in_sample_sq_error(
    model: &EmpiricalModel,
    player: usize,
    spec: &GameSpec,
    mu: &BehaviorDistribution,
) -> Result<f64> {
    if model.shape() != spec.shape() || mu.shape() != spec.shape() {
        return Err(Error::ShapeMismatch(
            "model, game and behavior differ in shape".into(),
        ));
    }
    Ok(model
        .regression_error(spec.reward(player), player)
        .iter()
        .zip(mu.probs())
        .map(|(z, p)| p * z * z)
        .sum())
}
