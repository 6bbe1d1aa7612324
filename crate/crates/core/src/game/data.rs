use super::{checked_distribution, RewardTensor, Shape};
use crate::error::{Error, Result};

/// Joint logging distribution `mu(x, a)` over contexts and joint actions.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorDistribution {
    shape: Shape,
    probs: Vec<f64>,
}

impl BehaviorDistribution {
    pub fn new(shape: &Shape, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != shape.num_cells() {
            return Err(Error::ShapeMismatch(format!(
                "behavior table has {} entries, expected {}",
                probs.len(),
                shape.num_cells()
            )));
        }
        Ok(Self {
            shape: shape.clone(),
            probs: checked_distribution(probs)?,
        })
    }

    pub fn uniform(shape: &Shape) -> Self {
        let n = shape.num_cells();
        Self {
            shape: shape.clone(),
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    #[inline]
    pub fn prob(&self, context: usize, joint: usize) -> f64 {
        self.probs[context * self.shape.num_joint() + joint]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// One logged interaction: context, joint action, observed reward per player.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub context: usize,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    shape: Shape,
    records: Vec<Record>,
}

impl OfflineDataset {
    pub fn new(shape: &Shape, records: Vec<Record>) -> Result<Self> {
        for (tau, r) in records.iter().enumerate() {
            if r.context >= shape.num_contexts() {
                return Err(Error::ShapeMismatch(format!(
                    "record {tau}: context {} out of range",
                    r.context
                )));
            }
            shape
                .encode(&r.actions)
                .map_err(|e| Error::ShapeMismatch(format!("record {tau}: {e}")))?;
            if r.rewards.len() != shape.num_players() {
                return Err(Error::ShapeMismatch(format!(
                    "record {tau}: {} rewards for {} players",
                    r.rewards.len(),
                    shape.num_players()
                )));
            }
        }
        Ok(Self {
            shape: shape.clone(),
            records,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(cell index, observed reward of player)` for each record.
    pub(crate) fn cells_for(&self, player: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.records.iter().map(move |r| {
            let joint = self
                .shape
                .encode(&r.actions)
                .expect("validated on construction");
            (
                r.context * self.shape.num_joint() + joint,
                r.rewards[player],
            )
        })
    }
}

/// A finite hypothesis class of reward tables for one player.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionClass {
    members: Vec<RewardTensor>,
    realizable: bool,
}

impl FunctionClass {
    /// `truth`, when given, sets the realizable flag if it is a member.
    pub fn new(members: Vec<RewardTensor>, truth: Option<&RewardTensor>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("function class is empty".into()));
        }
        for (k, f) in members.iter().enumerate() {
            if f.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!(
                    "class member {k} leaves [0,1]"
                )));
            }
        }
        let realizable = truth.is_some_and(|t| members.iter().any(|f| f == t));
        Ok(Self {
            members,
            realizable,
        })
    }

    pub fn members(&self) -> &[RewardTensor] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn realizable(&self) -> bool {
        self.realizable
    }
}

/// Where an estimated reward table came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    FiniteClass { index: usize },
    Tabular { visit_counts: Vec<u64> },
    Exact,
}

/// Estimated reward tables `Q_hat_i`, one per player, all in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    shape: Shape,
    payoffs: Vec<RewardTensor>,
    provenance: Vec<Provenance>,
}

impl EmpiricalModel {
    pub fn new(
        shape: &Shape,
        payoffs: Vec<RewardTensor>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        if payoffs.len() != shape.num_players() || provenance.len() != shape.num_players() {
            return Err(Error::ShapeMismatch(format!(
                "model has {} tables for {} players",
                payoffs.len(),
                shape.num_players()
            )));
        }
        for (i, t) in payoffs.iter().enumerate() {
            t.check_shape(shape)?;
            if t.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!(
                    "estimate of player {} leaves [0,1]",
                    i + 1
                )));
            }
        }
        Ok(Self {
            shape: shape.clone(),
            payoffs,
            provenance,
        })
    }

    /// The model whose tables are exactly the true rewards.
    pub fn exact(spec: &super::GameSpec) -> Self {
        Self {
            shape: spec.shape().clone(),
            payoffs: spec.rewards().to_vec(),
            provenance: vec![Provenance::Exact; spec.num_players()],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn payoffs(&self) -> &[RewardTensor] {
        &self.payoffs
    }

    pub fn payoff(&self, player: usize) -> &RewardTensor {
        &self.payoffs[player]
    }

    pub fn provenance(&self, player: usize) -> &Provenance {
        &self.provenance[player]
    }

    /// `Z_i = Q_hat_i - r*_i`, cell by cell.
    pub fn regression_error(&self, truth: &RewardTensor, player: usize) -> Vec<f64> {
        self.payoffs[player]
            .values()
            .iter()
            .zip(truth.values())
            .map(|(q, r)| q - r)
            .collect()
    }
}
