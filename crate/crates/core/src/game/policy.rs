use super::{checked_distribution, RewardTensor, Shape};
use crate::error::{Error, Result};

/// Anything that induces a joint action distribution per context.
///
/// Product policies and mixtures of product policies both implement it, so
/// value and exploitability code is written once for both.
pub trait JointPolicy {
    fn shape(&self) -> &Shape;

    /// Marginal distribution of `player`'s own action at context `x`.
    fn marginal(&self, player: usize, x: usize) -> Vec<f64>;

    /// `E_{a ~ pi(.|x)} [payoff(x, a)]`.
    fn expected_payoff(&self, payoff: &RewardTensor, x: usize) -> f64;

    /// For each own action `a_i`, `E_{a_-i ~ pi_-i(.|x)} [payoff(x, a_i, a_-i)]`.
    fn opponent_marginal_q(&self, payoff: &RewardTensor, player: usize, x: usize) -> Vec<f64>;
}

/// Independent per-player distributions, indexed `[player][context][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPolicy {
    shape: Shape,
    dists: Vec<Vec<Vec<f64>>>,
    full_support: bool,
}

impl ProductPolicy {
    pub fn new(shape: &Shape, dists: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if dists.len() != shape.num_players() {
            return Err(Error::ShapeMismatch(format!(
                "policy covers {} players, game has {}",
                dists.len(),
                shape.num_players()
            )));
        }
        let mut checked = Vec::with_capacity(dists.len());
        for (i, per_player) in dists.into_iter().enumerate() {
            if per_player.len() != shape.num_contexts() {
                return Err(Error::ShapeMismatch(format!(
                    "player {} policy covers {} contexts, game has {}",
                    i + 1,
                    per_player.len(),
                    shape.num_contexts()
                )));
            }
            let mut rows = Vec::with_capacity(per_player.len());
            for d in per_player {
                if d.len() != shape.num_actions(i) {
                    return Err(Error::ShapeMismatch(format!(
                        "player {} distribution has {} entries, expected {}",
                        i + 1,
                        d.len(),
                        shape.num_actions(i)
                    )));
                }
                rows.push(checked_distribution(d)?);
            }
            checked.push(rows);
        }
        let full_support = checked.iter().flatten().flatten().all(|&p| p > 0.0);
        Ok(Self {
            shape: shape.clone(),
            dists: checked,
            full_support,
        })
    }

    pub fn uniform(shape: &Shape) -> Self {
        let dists = (0..shape.num_players())
            .map(|i| {
                let k = shape.num_actions(i);
                vec![vec![1.0 / k as f64; k]; shape.num_contexts()]
            })
            .collect();
        Self {
            shape: shape.clone(),
            dists,
            full_support: true,
        }
    }

    pub fn dist(&self, player: usize, x: usize) -> &[f64] {
        &self.dists[player][x]
    }

    pub fn full_support(&self) -> bool {
        self.full_support
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        self.dists.clone()
    }

    /// The product distribution over joint actions at context `x`.
    pub fn joint_distribution(&self, x: usize) -> Vec<f64> {
        let mut joint = vec![1.0];
        for i in 0..self.shape.num_players() {
            let d = &self.dists[i][x];
            let mut next = Vec::with_capacity(joint.len() * d.len());
            for &w in &joint {
                next.extend(d.iter().map(|p| w * p));
            }
            joint = next;
        }
        joint
    }

    /// Largest sup-norm difference between two policies of the same shape.
    pub fn max_abs_diff(&self, other: &ProductPolicy) -> f64 {
        self.dists
            .iter()
            .flatten()
            .flatten()
            .zip(other.dists.iter().flatten().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl JointPolicy for ProductPolicy {
    fn shape(&self) -> &Shape {
        &self.shape
    }

    fn marginal(&self, player: usize, x: usize) -> Vec<f64> {
        self.dists[player][x].clone()
    }

    fn expected_payoff(&self, payoff: &RewardTensor, x: usize) -> f64 {
        self.joint_distribution(x)
            .iter()
            .zip(payoff.row(x))
            .map(|(p, q)| p * q)
            .sum()
    }

    fn opponent_marginal_q(&self, payoff: &RewardTensor, player: usize, x: usize) -> Vec<f64> {
        let dists: Vec<&[f64]> = self.dists.iter().map(|d| d[x].as_slice()).collect();
        opponent_q(&self.shape, payoff.row(x), &dists, player)
    }
}

/// Marginalizes one context's payoff row over independent opponents.
/// `dists[j]` is player `j`'s distribution at that context.
pub(crate) fn opponent_q(shape: &Shape, row: &[f64], dists: &[&[f64]], player: usize) -> Vec<f64> {
    let mut q = vec![0.0; shape.num_actions(player)];
    for (joint, &value) in row.iter().enumerate() {
        let mut w = 1.0;
        for (j, d) in dists.iter().enumerate() {
            if j != player {
                w *= d[shape.action_of(joint, j)];
            }
        }
        q[shape.action_of(joint, player)] += value * w;
    }
    q
}

/// A correlated joint policy: a weighted list of product policies.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicy {
    shape: Shape,
    components: Vec<(f64, ProductPolicy)>,
}

impl MixturePolicy {
    pub fn new(components: Vec<(f64, ProductPolicy)>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidDistribution(
                "mixture has no components".into(),
            ));
        };
        let shape = first.1.shape.clone();
        if components.iter().any(|(_, p)| p.shape != shape) {
            return Err(Error::ShapeMismatch(
                "mixture components differ in shape".into(),
            ));
        }
        let weights = checked_distribution(components.iter().map(|(w, _)| *w).collect())?;
        let components = weights
            .into_iter()
            .zip(components)
            .map(|(w, (_, p))| (w, p))
            .collect();
        Ok(Self { shape, components })
    }

    pub fn singleton(policy: ProductPolicy) -> Self {
        Self {
            shape: policy.shape.clone(),
            components: vec![(1.0, policy)],
        }
    }

    /// Equal-weight mixture of the given snapshots.
    pub fn uniform(policies: Vec<ProductPolicy>) -> Result<Self> {
        let w = 1.0 / policies.len() as f64;
        Self::new(policies.into_iter().map(|p| (w, p)).collect())
    }

    pub fn components(&self) -> &[(f64, ProductPolicy)] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// All player marginals collapsed into one product policy.
    pub fn marginal_product(&self) -> ProductPolicy {
        let dists = (0..self.shape.num_players())
            .map(|i| {
                (0..self.shape.num_contexts())
                    .map(|x| self.marginal(i, x))
                    .collect()
            })
            .collect();
        ProductPolicy {
            shape: self.shape.clone(),
            full_support: self
                .components
                .iter()
                .any(|(w, p)| *w > 0.0 && p.full_support),
            dists,
        }
    }
}

impl JointPolicy for MixturePolicy {
    fn shape(&self) -> &Shape {
        &self.shape
    }

    fn marginal(&self, player: usize, x: usize) -> Vec<f64> {
        if let [(_, only)] = self.components.as_slice() {
            return only.marginal(player, x);
        }
        let mut out = vec![0.0; self.shape.num_actions(player)];
        for (w, p) in &self.components {
            for (o, v) in out.iter_mut().zip(p.dist(player, x)) {
                *o += w * v;
            }
        }
        out
    }

    fn expected_payoff(&self, payoff: &RewardTensor, x: usize) -> f64 {
        self.components
            .iter()
            .map(|(w, p)| w * p.expected_payoff(payoff, x))
            .sum()
    }

    fn opponent_marginal_q(&self, payoff: &RewardTensor, player: usize, x: usize) -> Vec<f64> {
        if let [(_, only)] = self.components.as_slice() {
            return only.opponent_marginal_q(payoff, player, x);
        }
        let mut out = vec![0.0; self.shape.num_actions(player)];
        for (w, p) in &self.components {
            for (o, v) in out.iter_mut().zip(p.opponent_marginal_q(payoff, player, x)) {
                *o += w * v;
            }
        }
        out
    }
}
