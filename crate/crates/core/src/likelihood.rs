//! Priors, leaf-marginalized likelihoods and conditional parameter draws.
//!
//! Continuous leaves use the improper prior `p(mu, sigma^2) ∝ 1/sigma^2` with
//! its arbitrary constant fixed at one, which gives the closed-form marginal
//!
//! ```text
//! m(y) = n^(-1/2) * Gamma((n-1)/2) * (pi * sse)^(-(n-1)/2)
//! ```
//!
//! Categorical leaves use a symmetric Dirichlet(1/2) prior on the class
//! probabilities, giving the Dirichlet-multinomial marginal.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::data::{Dataset, OutcomeKind};
use crate::tree::{depth, LeafParams, LeafStats, Node, Tree};

/// Dirichlet concentration per category for categorical leaves.
pub const CATEGORICAL_CONCENTRATION: f64 = 0.5;

/// Relative size of the sum-of-squares floor for constant continuous leaves.
pub const SSE_FLOOR_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LeafError {
    #[error("q must exceed 1 (got {0})")]
    InvalidMinLeaf(usize),
    #[error("leaf has {n} rows, at least {required} required")]
    TooFew { n: usize, required: usize },
    #[error("continuous leaf with zero sum of squares")]
    Degenerate,
}

/// Leaf prior configuration: minimum leaf size `q` and the floor applied to
/// the sum of squares of constant continuous leaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafPrior {
    pub min_leaf: usize,
    pub sse_floor: f64,
}

impl LeafPrior {
    pub fn new(min_leaf: usize) -> Result<Self, LeafError> {
        if min_leaf < 2 {
            return Err(LeafError::InvalidMinLeaf(min_leaf));
        }
        Ok(Self {
            min_leaf,
            sse_floor: 0.0,
        })
    }

    /// Sets the floor to `1e-8` times the outcome variance of `data` (or
    /// `1e-8` when the outcome is constant).
    pub fn for_data(min_leaf: usize, data: &Dataset) -> Result<Self, LeafError> {
        let mut prior = Self::new(min_leaf)?;
        let var = data.outcome_variance();
        prior.sse_floor = SSE_FLOOR_SCALE * if var > 0.0 { var } else { 1.0 };
        Ok(prior)
    }

    /// Whether the floor applies to this leaf.
    pub fn is_degenerate(&self, stats: &LeafStats) -> bool {
        matches!(stats, LeafStats::Continuous { n, sse, .. } if *n >= 2 && *sse <= self.sse_floor)
    }

    /// Log marginal likelihood of a leaf that must hold at least `q` rows.
    pub fn log_marginal(&self, stats: &LeafStats) -> Result<f64, LeafError> {
        let n = stats.count();
        if n < self.min_leaf {
            return Err(LeafError::TooFew {
                n,
                required: self.min_leaf,
            });
        }
        log_marginal_leaf(stats, self.sse_floor)
    }

    /// Draws leaf parameters from their conditional posterior.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        stats: &LeafStats,
        rng: &mut R,
    ) -> Result<LeafParams, LeafError> {
        let n = stats.count();
        if n < self.min_leaf {
            return Err(LeafError::TooFew {
                n,
                required: self.min_leaf,
            });
        }
        draw_leaf_params(stats, self.sse_floor, rng)
    }
}

/// `P(s_k = 1) = exp(-depth(k) / delta)`.
pub fn split_prior(k: usize, delta: f64) -> f64 {
    (-(depth(k) as f64) / delta).exp()
}

/// Log marginal likelihood of the outcomes summarized by `stats`, with the
/// leaf parameters integrated out.
///
/// A continuous leaf with `sse <= sse_floor` is evaluated at `sse_floor`; with
/// a zero floor it is reported as [`LeafError::Degenerate`].
pub fn log_marginal_leaf(stats: &LeafStats, sse_floor: f64) -> Result<f64, LeafError> {
    match stats {
        LeafStats::Continuous { n, sse, .. } => {
            if *n < 2 {
                return Err(LeafError::TooFew { n: *n, required: 2 });
            }
            let sse = if *sse <= sse_floor {
                if sse_floor > 0.0 {
                    sse_floor
                } else {
                    return Err(LeafError::Degenerate);
                }
            } else {
                *sse
            };
            let n = *n as f64;
            let a = 0.5 * (n - 1.0);
            Ok(-0.5 * n.ln() + ln_gamma(a) - a * (PI * sse).ln())
        }
        LeafStats::Categorical { counts } => {
            let k = counts.len() as f64;
            let n: usize = counts.iter().sum();
            let c = CATEGORICAL_CONCENTRATION;
            let mut lm = ln_gamma(k * c) - ln_gamma(k * c + n as f64);
            for &nc in counts {
                if nc > 0 {
                    lm += ln_gamma(c + nc as f64) - ln_gamma(c);
                }
            }
            Ok(lm)
        }
    }
}

/// Sum of leaf log marginals over the leaves `rows` reach.
pub fn log_marginal_tree(
    tree: &Tree,
    data: &Dataset,
    rows: &[usize],
    prior: &LeafPrior,
) -> Result<f64, LeafError> {
    tree.leaf_partition(data, rows)
        .values()
        .map(|s| prior.log_marginal(s))
        .sum()
}

/// Draws `theta` from its posterior given the leaf's statistics:
/// `sigma^2 ~ InvGamma((n-1)/2, sse/2)`, `mu | sigma^2 ~ N(ybar, sigma^2/n)`
/// for continuous leaves, `p ~ Dirichlet(1/2 + counts)` for categorical ones.
pub fn draw_leaf_params<R: Rng + ?Sized>(
    stats: &LeafStats,
    sse_floor: f64,
    rng: &mut R,
) -> Result<LeafParams, LeafError> {
    match stats {
        LeafStats::Continuous { n, mean, sse } => {
            if *n < 2 {
                return Err(LeafError::TooFew { n: *n, required: 2 });
            }
            let sse = if *sse <= sse_floor {
                if sse_floor > 0.0 {
                    sse_floor
                } else {
                    return Err(LeafError::Degenerate);
                }
            } else {
                *sse
            };
            let nf = *n as f64;
            let precision = Gamma::new(0.5 * (nf - 1.0), 2.0 / sse)
                .expect("positive shape and scale")
                .sample(rng);
            let variance = 1.0 / precision;
            let mu = Normal::new(*mean, (variance / nf).sqrt())
                .expect("finite normal")
                .sample(rng);
            Ok(LeafParams::Gaussian { mean: mu, variance })
        }
        LeafStats::Categorical { counts } => {
            let alpha: Vec<f64> = counts
                .iter()
                .map(|&c| CATEGORICAL_CONCENTRATION + c as f64)
                .collect();
            Ok(LeafParams::Categorical {
                probs: sample_dirichlet(&alpha, rng),
            })
        }
    }
}

/// Log density of one outcome under leaf parameters.
#[inline]
pub fn log_obs_density(y: f64, params: &LeafParams) -> f64 {
    match params {
        LeafParams::Gaussian { mean, variance } => {
            let z = y - mean;
            -0.5 * (2.0 * PI * variance).ln() - 0.5 * z * z / variance
        }
        LeafParams::Categorical { probs } => probs[y as usize].ln(),
    }
}

/// `log [y_row | T]` at the sampled parameters of the leaf `row` reaches.
///
/// Panics if that leaf has no parameters.
#[inline]
pub fn log_tree_obs_density(tree: &Tree, data: &Dataset, row: usize) -> f64 {
    let leaf = tree.route_row(data, row);
    let params = tree
        .leaf_params(leaf)
        .expect("leaf parameters are drawn before densities are evaluated");
    log_obs_density(data.outcome(row), params)
}

/// Half-open index range into `data.thresholds(var)` of the thresholds that
/// leave at least `min_leaf` of `rows` on each side.
pub fn valid_threshold_range(
    data: &Dataset,
    rows: &[usize],
    var: usize,
    min_leaf: usize,
    scratch: &mut Vec<f64>,
) -> (usize, usize) {
    let r = rows.len();
    if min_leaf == 0 || r < 2 * min_leaf {
        return (0, 0);
    }
    scratch.clear();
    scratch.extend(rows.iter().map(|&i| data.value(i, var)));
    let (_, &mut lo_val, _) = scratch.select_nth_unstable_by(min_leaf - 1, f64::total_cmp);
    let (_, &mut hi_val, _) = scratch.select_nth_unstable_by(r - min_leaf, f64::total_cmp);
    let grid = data.thresholds(var);
    let lo = grid.partition_point(|&g| g <= lo_val);
    let hi = grid.partition_point(|&g| g < hi_val);
    (lo, hi.max(lo))
}

/// Structural prior of the tree frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePrior {
    pub delta: f64,
    /// Nodes at this depth are forced leaves and contribute no factor.
    pub depth_cap: u32,
}

impl TreePrior {
    /// `log P(s_k = 1)`; zero at the root.
    pub fn log_split(&self, k: usize) -> f64 {
        -(depth(k) as f64) / self.delta
    }

    /// `log P(s_k = 0)` for a leaf; zero for the root-only tree and for
    /// leaves at the depth cap.
    pub fn log_leaf(&self, k: usize) -> f64 {
        if k == 0 || depth(k) >= self.depth_cap {
            0.0
        } else {
            (-split_prior(k, self.delta)).ln_1p()
        }
    }
}

/// Log prior of the tree structure given the rows it is fitted to: each
/// interior node adds `log P(s_k=1) + log xi[c_k] - log G_k`, where `G_k` is
/// the number of thresholds on `c_k` leaving `q` rows on each side of node
/// `k`; each leaf adds `log P(s_k=0)`.
pub fn log_tree_structure_prior(
    tree: &Tree,
    prior: &TreePrior,
    xi: &[f64],
    data: &Dataset,
    rows: &[usize],
    min_leaf: usize,
) -> f64 {
    let mut scratch = Vec::new();
    let mut lp = 0.0;
    for (&k, node) in tree.nodes() {
        match node {
            Node::Split { var, .. } => {
                let at = tree.rows_at(k, data, rows);
                let (lo, hi) = valid_threshold_range(data, &at, *var, min_leaf, &mut scratch);
                if hi == lo {
                    return f64::NEG_INFINITY;
                }
                lp += prior.log_split(k) + xi[*var].ln() - ((hi - lo) as f64).ln();
            }
            Node::Leaf { .. } => lp += prior.log_leaf(k),
        }
    }
    lp
}

/// Proper stand-in base measure for clusters with too few rows for the
/// objective posterior: `mu ~ N(mean, variance)` with `sigma^2 = variance`
/// fixed, or `p ~ Dirichlet(1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub kind: OutcomeKind,
    pub mean: f64,
    pub variance: f64,
}

impl Surrogate {
    pub fn from_data(data: &Dataset) -> Self {
        let var = data.outcome_variance();
        Self {
            kind: data.kind(),
            mean: data.outcome_mean(),
            variance: if var > 0.0 { var } else { 1.0 },
        }
    }

    pub fn draw_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> LeafParams {
        self.draw_posterior(&LeafStats::empty(self.kind), rng)
    }

    /// Conjugate update of the stand-in base with the rows in `stats`.
    pub fn draw_posterior<R: Rng + ?Sized>(&self, stats: &LeafStats, rng: &mut R) -> LeafParams {
        match stats {
            LeafStats::Continuous { n, mean, .. } => {
                let w = 1.0 + *n as f64;
                let centre = (self.mean + *n as f64 * mean) / w;
                let mu = Normal::new(centre, (self.variance / w).sqrt())
                    .expect("finite normal")
                    .sample(rng);
                LeafParams::Gaussian {
                    mean: mu,
                    variance: self.variance,
                }
            }
            LeafStats::Categorical { counts } => {
                let alpha: Vec<f64> = counts
                    .iter()
                    .map(|&c| CATEGORICAL_CONCENTRATION + c as f64)
                    .collect();
                LeafParams::Categorical {
                    probs: sample_dirichlet(&alpha, rng),
                }
            }
        }
    }
}

/// Dirichlet draw via normalized gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        for d in &mut draws {
            *d /= total;
        }
    } else {
        // All gamma variates underflowed; fall back to the largest shape.
        let best = alpha
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        draws
            .iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = f64::from(u8::from(i == best)));
    }
    draws
}

/// Index drawn with probability proportional to `weights`.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if target < w {
            return i;
        }
        target -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}
