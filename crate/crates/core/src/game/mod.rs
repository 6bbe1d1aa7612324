//! Domain types of an m-player contextual bandit game with KL anchoring.
//!
//! Contexts and actions are dense indices. A joint action is addressed by its
//! row-major index with player 1 varying slowest, so for action counts
//! `(2, 3)` the joint actions are `(0,0), (0,1), (0,2), (1,0), (1,1), (1,2)`.
//! Every reward tensor, behavior table, and file format uses this order.

mod data;
mod policy;

use std::fmt;

pub use data::{
    BehaviorDistribution, EmpiricalModel, FunctionClass, OfflineDataset, Provenance, Record,
};
pub(crate) use policy::opponent_q;
pub use policy::{JointPolicy, MixturePolicy, ProductPolicy};

use crate::error::{Error, Result};

/// Tolerance applied to every probability vector on construction.
pub const PROB_TOL: f64 = 1e-12;

/// Action counts per player plus the number of contexts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    action_counts: Vec<usize>,
    num_contexts: usize,
    strides: Vec<usize>,
    num_joint: usize,
}

impl Shape {
    pub fn new(action_counts: Vec<usize>, num_contexts: usize) -> Result<Self> {
        if action_counts.is_empty() {
            return Err(Error::ShapeMismatch("no players".into()));
        }
        if let Some(i) = action_counts.iter().position(|&k| k == 0) {
            return Err(Error::ShapeMismatch(format!(
                "player {} has no actions",
                i + 1
            )));
        }
        if num_contexts == 0 {
            return Err(Error::ShapeMismatch("no contexts".into()));
        }
        let m = action_counts.len();
        let mut strides = vec![1; m];
        for i in (0..m - 1).rev() {
            strides[i] = strides[i + 1] * action_counts[i + 1];
        }
        let num_joint = action_counts.iter().product();
        Ok(Self {
            action_counts,
            num_contexts,
            strides,
            num_joint,
        })
    }

    pub fn num_players(&self) -> usize {
        self.action_counts.len()
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn num_actions(&self, player: usize) -> usize {
        self.action_counts[player]
    }

    /// Number of joint actions, the product of all action counts.
    pub fn num_joint(&self) -> usize {
        self.num_joint
    }

    /// Number of (context, joint action) cells.
    pub fn num_cells(&self) -> usize {
        self.num_contexts * self.num_joint
    }

    /// Action of `player` inside the joint action with row-major index `joint`.
    #[inline]
    pub fn action_of(&self, joint: usize, player: usize) -> usize {
        (joint / self.strides[player]) % self.action_counts[player]
    }

    pub fn decode(&self, joint: usize) -> Vec<usize> {
        (0..self.num_players())
            .map(|i| self.action_of(joint, i))
            .collect()
    }

    pub fn encode(&self, actions: &[usize]) -> Result<usize> {
        if actions.len() != self.num_players() {
            return Err(Error::ShapeMismatch(format!(
                "joint action has {} entries, game has {} players",
                actions.len(),
                self.num_players()
            )));
        }
        let mut idx = 0;
        for (i, (&a, &k)) in actions.iter().zip(&self.action_counts).enumerate() {
            if a >= k {
                return Err(Error::ShapeMismatch(format!(
                    "action {a} out of range for player {} with {k} actions",
                    i + 1
                )));
            }
            idx += a * self.strides[i];
        }
        Ok(idx)
    }

    pub fn joint_actions(&self) -> Vec<Vec<usize>> {
        (0..self.num_joint).map(|k| self.decode(k)).collect()
    }
}

/// All joint action tuples of the game in row-major order, player 1 slowest.
pub fn enumerate_joint_actions(spec: &GameSpec) -> Vec<Vec<usize>> {
    spec.shape().joint_actions()
}

/// A payoff table indexed by (context, joint action).
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTensor {
    num_contexts: usize,
    num_joint: usize,
    values: Vec<f64>,
}

impl RewardTensor {
    pub fn new(shape: &Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.num_cells() {
            return Err(Error::ShapeMismatch(format!(
                "reward tensor has {} entries, expected {}",
                values.len(),
                shape.num_cells()
            )));
        }
        Ok(Self {
            num_contexts: shape.num_contexts(),
            num_joint: shape.num_joint(),
            values,
        })
    }

    pub fn constant(shape: &Shape, c: f64) -> Self {
        Self {
            num_contexts: shape.num_contexts(),
            num_joint: shape.num_joint(),
            values: vec![c; shape.num_cells()],
        }
    }

    #[inline]
    pub fn get(&self, context: usize, joint: usize) -> f64 {
        self.values[context * self.num_joint + joint]
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.values[context * self.num_joint..(context + 1) * self.num_joint]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fits(&self, shape: &Shape) -> bool {
        self.num_contexts == shape.num_contexts() && self.num_joint == shape.num_joint()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn check_shape(&self, shape: &Shape) -> Result<()> {
        if self.fits(shape) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "reward tensor is {}x{}, game is {}x{}",
                self.num_contexts,
                self.num_joint,
                shape.num_contexts(),
                shape.num_joint()
            )))
        }
    }
}

/// Unvalidated game description, as read from a file or assembled in code.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGame {
    pub context_labels: Vec<String>,
    pub rho: Vec<f64>,
    pub action_counts: Vec<usize>,
    /// Per player, the flattened `contexts x joint actions` reward table.
    pub rewards: Vec<Vec<f64>>,
    pub eta: f64,
    /// Per player, per context, a distribution over that player's actions.
    pub reference: Vec<Vec<Vec<f64>>>,
}

/// A single failed invariant of a [`RawGame`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewPlayers(usize),
    NoActions {
        player: usize,
    },
    NoContexts,
    LabelCount {
        labels: usize,
        contexts: usize,
    },
    NegativeWeight {
        context: usize,
        weight: f64,
    },
    WeightSum(f64),
    RewardCount {
        player: usize,
        found: usize,
        expected: usize,
    },
    RewardMissing {
        player: usize,
    },
    RewardRange {
        player: usize,
        context: usize,
        joint: Vec<usize>,
        value: f64,
    },
    Eta(f64),
    ReferenceShape {
        player: usize,
    },
    ReferenceNotDistribution {
        player: usize,
        context: usize,
        sum: f64,
    },
    ReferenceNotFullSupport {
        player: usize,
        context: usize,
        action: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TooFewPlayers(m) => write!(f, "game needs at least 2 players, found {m}"),
            Self::NoActions { player } => write!(f, "player {} has no actions", player + 1),
            Self::NoContexts => write!(f, "game has no contexts"),
            Self::LabelCount { labels, contexts } => {
                write!(f, "{labels} context labels for {contexts} context weights")
            }
            Self::NegativeWeight { context, weight } => {
                write!(f, "context {context} has negative weight {weight}")
            }
            Self::WeightSum(s) => write!(f, "context weights sum to {s}"),
            Self::RewardMissing { player } => write!(f, "rewards for player {} missing", player + 1),
            Self::RewardCount {
                player,
                found,
                expected,
            } => write!(
                f,
                "rewards for player {} have {found} entries, expected {expected}",
                player + 1
            ),
            Self::RewardRange {
                player,
                context,
                joint,
                value,
            } => write!(
                f,
                "reward of player {} at context {context}, joint action {joint:?} is {value}, outside [0,1]",
                player + 1
            ),
            Self::Eta(eta) => write!(f, "eta must be positive and finite, got {eta}"),
            Self::ReferenceShape { player } => {
                write!(f, "reference of player {} has the wrong shape", player + 1)
            }
            Self::ReferenceNotDistribution {
                player,
                context,
                sum,
            } => write!(
                f,
                "reference of player {} at context {context} sums to {sum}",
                player + 1
            ),
            Self::ReferenceNotFullSupport {
                player,
                context,
                action,
            } => write!(
                f,
                "reference not full support: player {} context {context} action {action}",
                player + 1
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationReport {
    Ok,
    Violations(Vec<Violation>),
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, Self::Ok)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            Self::Ok => &[],
            Self::Violations(v) => v,
        }
    }
}

/// Checks every game invariant and lists each failure with its location.
pub fn validate_game(raw: &RawGame) -> ValidationReport {
    let mut out = Vec::new();
    let m = raw.action_counts.len();
    if m < 2 {
        out.push(Violation::TooFewPlayers(m));
    }
    for (i, &k) in raw.action_counts.iter().enumerate() {
        if k == 0 {
            out.push(Violation::NoActions { player: i });
        }
    }
    let nx = raw.rho.len();
    if nx == 0 {
        out.push(Violation::NoContexts);
    }
    if !raw.context_labels.is_empty() && raw.context_labels.len() != nx {
        out.push(Violation::LabelCount {
            labels: raw.context_labels.len(),
            contexts: nx,
        });
    }
    for (x, &w) in raw.rho.iter().enumerate() {
        if !(w >= 0.0) {
            out.push(Violation::NegativeWeight {
                context: x,
                weight: w,
            });
        }
    }
    let total: f64 = raw.rho.iter().sum();
    if nx > 0 && !((total - 1.0).abs() <= PROB_TOL) {
        out.push(Violation::WeightSum(total));
    }
    if !(raw.eta > 0.0 && raw.eta.is_finite()) {
        out.push(Violation::Eta(raw.eta));
    }

    let shape = Shape::new(raw.action_counts.clone(), nx.max(1)).ok();
    for i in 0..m {
        let Some(table) = raw.rewards.get(i) else {
            out.push(Violation::RewardMissing { player: i });
            continue;
        };
        let Some(shape) = &shape else { continue };
        if table.len() != nx * shape.num_joint() {
            out.push(Violation::RewardCount {
                player: i,
                found: table.len(),
                expected: nx * shape.num_joint(),
            });
            continue;
        }
        for (cell, &v) in table.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                out.push(Violation::RewardRange {
                    player: i,
                    context: cell / shape.num_joint(),
                    joint: shape.decode(cell % shape.num_joint()),
                    value: v,
                });
            }
        }
    }

    for i in 0..m {
        let Some(per_player) = raw.reference.get(i) else {
            out.push(Violation::ReferenceShape { player: i });
            continue;
        };
        if per_player.len() != nx || per_player.iter().any(|d| d.len() != raw.action_counts[i]) {
            out.push(Violation::ReferenceShape { player: i });
            continue;
        }
        for (x, dist) in per_player.iter().enumerate() {
            let sum: f64 = dist.iter().sum();
            if !((sum - 1.0).abs() <= PROB_TOL) || dist.iter().any(|&p| !(p >= 0.0)) {
                out.push(Violation::ReferenceNotDistribution {
                    player: i,
                    context: x,
                    sum,
                });
            } else if let Some(a) = dist.iter().position(|&p| p <= 0.0) {
                out.push(Violation::ReferenceNotFullSupport {
                    player: i,
                    context: x,
                    action: a,
                });
            }
        }
    }

    if out.is_empty() {
        ValidationReport::Ok
    } else {
        ValidationReport::Violations(out)
    }
}

/// The true game: contexts with weights, action sets, rewards in `[0,1]`,
/// regularization strength and reference policy.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    shape: Shape,
    context_labels: Vec<String>,
    rho: Vec<f64>,
    rewards: Vec<RewardTensor>,
    eta: f64,
    reference: ProductPolicy,
}

impl TryFrom<RawGame> for GameSpec {
    type Error = Error;

    fn try_from(raw: RawGame) -> Result<Self> {
        if let ValidationReport::Violations(v) = validate_game(&raw) {
            return Err(Error::InvalidGame(v));
        }
        let shape = Shape::new(raw.action_counts, raw.rho.len())?;
        let rewards = raw
            .rewards
            .into_iter()
            .map(|t| RewardTensor::new(&shape, t))
            .collect::<Result<Vec<_>>>()?;
        let reference = ProductPolicy::new(&shape, raw.reference)?;
        let context_labels = if raw.context_labels.is_empty() {
            (0..shape.num_contexts()).map(|x| x.to_string()).collect()
        } else {
            raw.context_labels
        };
        let rho = normalized(raw.rho);
        Ok(Self {
            shape,
            context_labels,
            rho,
            rewards,
            eta: raw.eta,
            reference,
        })
    }
}

impl GameSpec {
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn num_players(&self) -> usize {
        self.shape.num_players()
    }

    pub fn num_contexts(&self) -> usize {
        self.shape.num_contexts()
    }

    pub fn context_labels(&self) -> &[String] {
        &self.context_labels
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rewards(&self) -> &[RewardTensor] {
        &self.rewards
    }

    pub fn reward(&self, player: usize) -> &RewardTensor {
        &self.rewards[player]
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn reference(&self) -> &ProductPolicy {
        &self.reference
    }

    /// Same game with a different regularization strength.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        let mut raw = self.to_raw();
        raw.eta = eta;
        Self::try_from(raw)
    }

    pub fn to_raw(&self) -> RawGame {
        RawGame {
            context_labels: self.context_labels.clone(),
            rho: self.rho.clone(),
            action_counts: self.shape.action_counts().to_vec(),
            rewards: self.rewards.iter().map(|t| t.values().to_vec()).collect(),
            eta: self.eta,
            reference: self.reference.to_nested(),
        }
    }

    /// The behavior distribution `rho(x) * prod_i ref_i(a_i | x)`.
    pub fn reference_behavior(&self) -> BehaviorDistribution {
        let mut probs = Vec::with_capacity(self.shape.num_cells());
        for x in 0..self.num_contexts() {
            let joint = self.reference.joint_distribution(x);
            probs.extend(joint.iter().map(|p| self.rho[x] * p));
        }
        BehaviorDistribution::new(&self.shape, probs)
            .expect("product of distributions is a distribution")
    }
}

/// Scales `v` to sum to one unless its sum already equals one up to
/// rounding, so normalizing twice leaves the bits unchanged.
fn normalized(v: Vec<f64>) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() <= v.len() as f64 * f64::EPSILON {
        return v;
    }
    v.into_iter().map(|p| p / sum).collect()
}

/// Checks that `v` is a probability vector within [`PROB_TOL`] and returns it
/// renormalized.
pub fn checked_distribution(v: Vec<f64>) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    if let Some(p) = v.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "entry {p} is not a probability"
        )));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
    }
    Ok(normalized(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn raw_2x2() -> RawGame {
        RawGame {
            context_labels: vec!["only".into()],
            rho: vec![1.0],
            action_counts: vec![2, 2],
            rewards: vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]],
            eta: 1.0,
            reference: vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
        }
    }

    #[test]
    fn well_formed_game_is_ok() {
        assert_eq!(validate_game(&raw_2x2()), ValidationReport::Ok);
        assert!(GameSpec::try_from(raw_2x2()).is_ok());
    }

    #[test]
    fn weights_not_summing_to_one() {
        let mut raw = raw_2x2();
        raw.rho = vec![0.6, 0.6];
        raw.context_labels.clear();
        raw.rewards = vec![vec![0.5; 8], vec![0.5; 8]];
        raw.reference = vec![vec![vec![0.5, 0.5]; 2]; 2];
        let report = validate_game(&raw);
        let msgs: Vec<String> = report.violations().iter().map(|v| v.to_string()).collect();
        assert_eq!(msgs, vec!["context weights sum to 1.2".to_string()]);
    }

    #[test]
    fn reference_with_zero_entry() {
        let mut raw = raw_2x2();
        raw.reference[1][0] = vec![1.0, 0.0];
        let report = validate_game(&raw);
        assert_eq!(report.violations().len(), 1);
        assert!(report.violations()[0]
            .to_string()
            .starts_with("reference not full support"));
    }

    #[test]
    fn reward_outside_range_names_the_cell() {
        let mut raw = raw_2x2();
        raw.rewards[0][2] = 1.5;
        let report = validate_game(&raw);
        assert_eq!(
            report.violations(),
            &[Violation::RewardRange {
                player: 0,
                context: 0,
                joint: vec![1, 0],
                value: 1.5
            }]
        );
    }

    #[test]
    fn nonpositive_eta() {
        let mut raw = raw_2x2();
        raw.eta = 0.0;
        assert_eq!(validate_game(&raw).violations(), &[Violation::Eta(0.0)]);
    }

    #[test]
    fn joint_action_order() {
        let s = Shape::new(vec![2, 2], 1).unwrap();
        assert_eq!(
            s.joint_actions(),
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]
        );
        let s = Shape::new(vec![1, 3], 1).unwrap();
        assert_eq!(s.joint_actions(), vec![vec![0, 0], vec![0, 1], vec![0, 2]]);
        let s = Shape::new(vec![2, 2, 2], 1).unwrap();
        let all = s.joint_actions();
        assert_eq!(all.len(), 8);
        assert_eq!(all[0], vec![0, 0, 0]);
        assert_eq!(all[7], vec![1, 1, 1]);
    }

    #[test]
    fn encode_inverts_decode() {
        let s = Shape::new(vec![3, 1, 4, 2], 2).unwrap();
        for k in 0..s.num_joint() {
            assert_eq!(s.encode(&s.decode(k)).unwrap(), k);
        }
        assert!(s.encode(&[3, 0, 0, 0]).is_err());
    }

    #[test]
    fn enumerate_from_spec() {
        let spec = GameSpec::try_from(raw_2x2()).unwrap();
        assert_eq!(enumerate_joint_actions(&spec).len(), 4);
    }

    #[test]
    fn distribution_tolerance() {
        let v = checked_distribution(vec![0.5, 0.5 + 5e-13]).unwrap();
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(checked_distribution(vec![0.5, 0.5 + 1e-9]).is_err());
        assert!(checked_distribution(vec![1.1, -0.1]).is_err());
    }
}
