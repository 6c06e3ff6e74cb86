//! Node-by-node Metropolis-within-Gibbs sweep over one tree.
//!
//! Each visited node gets a split-flag move (grow at a leaf, prune at a twig),
//! then, if interior, a covariate move and a threshold move. Proposals draw
//! the covariate from `xi` and the threshold uniformly from the node-local
//! grid, so those prior factors cancel and the acceptance ratio reduces to the
//! marginal likelihood ratio times the split-flag and downstream grid terms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::likelihood::{
    sample_dirichlet, sample_index, valid_threshold_range, LeafPrior, Surrogate, TreePrior,
};
use crate::tree::{child_indices, depth, parent_index, LeafStats, Node, Tree};

/// Per-move-type counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCounts {
    pub grow: u64,
    pub prune: u64,
    pub covariate: u64,
    pub threshold: u64,
}

impl MoveCounts {
    fn add(&mut self, other: &MoveCounts) {
        self.grow += other.grow;
        self.prune += other.prune;
        self.covariate += other.covariate;
        self.threshold += other.threshold;
    }

    pub fn total(&self) -> u64 {
        self.grow + self.prune + self.covariate + self.threshold
    }
}

/// Diagnostics of one or more sweeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepReport {
    pub proposals: MoveCounts,
    pub acceptances: MoveCounts,
    /// Proposals rejected because no admissible split existed or a leaf would
    /// fall below `q` rows.
    pub degenerate_rejections: u64,
    /// Leaves collapsed before the sweep because they held fewer than `q` rows.
    pub repairs: u64,
    /// Leaves whose sum of squares was floored when parameters were drawn.
    pub clamped_leaves: u64,
}

impl SweepReport {
    pub fn merge(&mut self, other: &SweepReport) {
        self.proposals.add(&other.proposals);
        self.acceptances.add(&other.acceptances);
        self.degenerate_rejections += other.degenerate_rejections;
        self.repairs += other.repairs;
        self.clamped_leaves += other.clamped_leaves;
    }
}

/// Marginal likelihood and downstream grid normalizers of a subtree.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SubtreeEval {
    log_marginal: f64,
    /// `sum log G_d` over interior nodes strictly below the subtree root.
    log_grid: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeSampler {
    pub prior: TreePrior,
    pub leaf: LeafPrior,
    /// Replaces every marginal likelihood by one, so the chain targets the
    /// structure prior. Used to validate the moves.
    pub flat_likelihood: bool,
}

impl TreeSampler {
    pub fn new(prior: TreePrior, leaf: LeafPrior) -> Self {
        Self {
            prior,
            leaf,
            flat_likelihood: false,
        }
    }

    fn min_leaf(&self) -> usize {
        self.leaf.min_leaf
    }

    /// One full sweep over the nodes of `tree` in ascending index order,
    /// including children created during the sweep.
    pub fn sweep<R: Rng + ?Sized>(
        &self,
        tree: &mut Tree,
        data: &Dataset,
        rows: &[usize],
        xi: &[f64],
        rng: &mut R,
    ) -> SweepReport {
        let mut report = SweepReport {
            repairs: self.repair(tree, data, rows) as u64,
            ..SweepReport::default()
        };
        let mut k = 0;
        loop {
            let rows_k = tree.rows_at(k, data, rows);
            self.update_split_flag(tree, k, data, &rows_k, xi, rng, &mut report);
            if !tree.is_leaf(k) {
                self.update_covariate(tree, k, data, &rows_k, xi, rng, &mut report);
                self.update_threshold(tree, k, data, &rows_k, rng, &mut report);
            }
            match tree.next_index(k) {
                Some(next) => k = next,
                None => break,
            }
        }
        report
    }

    /// Collapses the parent of any leaf holding fewer than `q` of `rows`
    /// until every leaf is large enough or the tree is root-only. Returns the
    /// number of collapses.
    pub fn repair(&self, tree: &mut Tree, data: &Dataset, rows: &[usize]) -> usize {
        let mut collapsed = 0;
        loop {
            let small = tree
                .leaf_rows(data, rows)
                .into_iter()
                .find(|(k, r)| *k != 0 && r.len() < self.min_leaf());
            match small {
                Some((k, _)) => {
                    let parent = parent_index(k).expect("non-root leaf has a parent");
                    tree.collapse(parent);
                    collapsed += 1;
                }
                None => return collapsed,
            }
        }
    }

    /// Grow at a leaf or prune at a twig. Interior nodes with an interior
    /// child are left unchanged.
    #[allow(clippy::too_many_arguments)]
    pub fn update_split_flag<R: Rng + ?Sized>(
        &self,
        tree: &mut Tree,
        k: usize,
        data: &Dataset,
        rows_k: &[usize],
        xi: &[f64],
        rng: &mut R,
        report: &mut SweepReport,
    ) {
        if tree.is_leaf(k) {
            report.proposals.grow += 1;
            if depth(k) >= self.prior.depth_cap || rows_k.len() < 2 * self.min_leaf() {
                report.degenerate_rejections += 1;
                return;
            }
            let var = sample_index(xi, rng);
            let Some(threshold) = self.propose_threshold(data, rows_k, var, rng) else {
                report.degenerate_rejections += 1;
                return;
            };
            let Some(log_ratio) = self.grow_log_ratio(k, var, threshold, data, rows_k) else {
                report.degenerate_rejections += 1;
                return;
            };
            if accept(log_ratio, rng) {
                tree.grow(k, var, threshold).expect("k is a leaf");
                report.acceptances.grow += 1;
            }
        } else if tree.is_twig(k) {
            report.proposals.prune += 1;
            let Some(log_ratio) = self.prune_log_ratio(tree, k, data, rows_k) else {
                report.degenerate_rejections += 1;
                return;
            };
            if accept(log_ratio, rng) {
                tree.prune(k).expect("k is a twig");
                report.acceptances.prune += 1;
            }
        }
    }

    /// Redraws the covariate of interior node `k` from `xi` together with a
    /// threshold on its grid.
    #[allow(clippy::too_many_arguments)]
    pub fn update_covariate<R: Rng + ?Sized>(
        &self,
        tree: &mut Tree,
        k: usize,
        data: &Dataset,
        rows_k: &[usize],
        xi: &[f64],
        rng: &mut R,
        report: &mut SweepReport,
    ) {
        report.proposals.covariate += 1;
        let var = sample_index(xi, rng);
        let Some(threshold) = self.propose_threshold(data, rows_k, var, rng) else {
            report.degenerate_rejections += 1;
            return;
        };
        if self.resplit(tree, k, var, threshold, data, rows_k, rng, report) {
            report.acceptances.covariate += 1;
        }
    }

    /// Redraws the threshold of interior node `k` on its current covariate.
    pub fn update_threshold<R: Rng + ?Sized>(
        &self,
        tree: &mut Tree,
        k: usize,
        data: &Dataset,
        rows_k: &[usize],
        rng: &mut R,
        report: &mut SweepReport,
    ) {
        report.proposals.threshold += 1;
        let Some((var, _)) = tree.split(k) else {
            report.degenerate_rejections += 1;
            return;
        };
        let Some(threshold) = self.propose_threshold(data, rows_k, var, rng) else {
            report.degenerate_rejections += 1;
            return;
        };
        if self.resplit(tree, k, var, threshold, data, rows_k, rng, report) {
            report.acceptances.threshold += 1;
        }
    }

    /// Log acceptance ratio for turning leaf `k` into a split on
    /// `(var, threshold)`. `None` when a child would hold fewer than `q` rows.
    pub fn grow_log_ratio(
        &self,
        k: usize,
        var: usize,
        threshold: f64,
        data: &Dataset,
        rows_k: &[usize],
    ) -> Option<f64> {
        let (left, right): (Vec<usize>, Vec<usize>) = rows_k
            .iter()
            .partition(|&&i| data.value(i, var) < threshold);
        let delta_m = self.leaf_lm(data, &left)? + self.leaf_lm(data, &right)?
            - self.leaf_lm(data, rows_k)?;
        Some(delta_m + self.grow_log_prior_ratio(k))
    }

    /// Log acceptance ratio for removing the two leaf children of twig `k`.
    pub fn prune_log_ratio(
        &self,
        tree: &Tree,
        k: usize,
        data: &Dataset,
        rows_k: &[usize],
    ) -> Option<f64> {
        let (var, threshold) = tree.split(k)?;
        let (left, right): (Vec<usize>, Vec<usize>) = rows_k
            .iter()
            .partition(|&&i| data.value(i, var) < threshold);
        let delta_m = self.leaf_lm(data, rows_k)?
            - self.leaf_lm(data, &left)?
            - self.leaf_lm(data, &right)?;
        Some(delta_m - self.grow_log_prior_ratio(k))
    }

    /// Structure-prior ratio of a grow at `k` net of the covariate and
    /// threshold factors, which cancel against the proposal.
    fn grow_log_prior_ratio(&self, k: usize) -> f64 {
        let (l, r) = child_indices(k);
        self.prior.log_split(k) + self.prior.log_leaf(l) + self.prior.log_leaf(r)
            - self.prior.log_leaf(k)
    }

    fn propose_threshold<R: Rng + ?Sized>(
        &self,
        data: &Dataset,
        rows_k: &[usize],
        var: usize,
        rng: &mut R,
    ) -> Option<f64> {
        let mut scratch = Vec::with_capacity(rows_k.len());
        let (lo, hi) = valid_threshold_range(data, rows_k, var, self.min_leaf(), &mut scratch);
        (hi > lo).then(|| data.thresholds(var)[rng.random_range(lo..hi)])
    }

    /// MH step replacing the rule at interior node `k`. Returns whether the
    /// proposal was accepted.
    #[allow(clippy::too_many_arguments)]
    fn resplit<R: Rng + ?Sized>(
        &self,
        tree: &mut Tree,
        k: usize,
        var: usize,
        threshold: f64,
        data: &Dataset,
        rows_k: &[usize],
        rng: &mut R,
        report: &mut SweepReport,
    ) -> bool {
        let Some((old_var, old_threshold)) = tree.split(k) else {
            return false;
        };
        let Some(old) = self.evaluate(tree, k, data, rows_k) else {
            // Only reachable when the caller skipped repair.
            report.degenerate_rejections += 1;
            return false;
        };
        tree.set_split(k, var, threshold).expect("k is interior");
        let Some(new) = self.evaluate(tree, k, data, rows_k) else {
            tree.set_split(k, old_var, old_threshold)
                .expect("k is interior");
            report.degenerate_rejections += 1;
            return false;
        };
        let log_ratio = new.log_marginal - old.log_marginal + old.log_grid - new.log_grid;
        if accept(log_ratio, rng) {
            true
        } else {
            tree.set_split(k, old_var, old_threshold)
                .expect("k is interior");
            false
        }
    }

    /// Evaluates the subtree rooted at `k` on the rows reaching it. `None` if
    /// a leaf holds fewer than `q` rows.
    fn evaluate(
        &self,
        tree: &Tree,
        k: usize,
        data: &Dataset,
        rows_k: &[usize],
    ) -> Option<SubtreeEval> {
        let mut acc = SubtreeEval {
            log_marginal: 0.0,
            log_grid: 0.0,
        };
        let mut scratch = Vec::new();
        let mut stack: Vec<(usize, Vec<usize>)> = vec![(k, rows_k.to_vec())];
        while let Some((j, rows)) = stack.pop() {
            match tree.node(j)? {
                Node::Split { var, threshold } => {
                    if j != k {
                        let (lo, hi) =
                            valid_threshold_range(data, &rows, *var, self.min_leaf(), &mut scratch);
                        if hi == lo {
                            return None;
                        }
                        acc.log_grid += ((hi - lo) as f64).ln();
                    }
                    let (left, right): (Vec<usize>, Vec<usize>) = rows
                        .iter()
                        .partition(|&&i| data.value(i, *var) < *threshold);
                    let (l, r) = child_indices(j);
                    stack.push((l, left));
                    stack.push((r, right));
                }
                Node::Leaf { .. } => acc.log_marginal += self.leaf_lm(data, &rows)?,
            }
        }
        Some(acc)
    }

    /// Leaf log marginal on `rows`, or `None` below `q` rows.
    fn leaf_lm(&self, data: &Dataset, rows: &[usize]) -> Option<f64> {
        if rows.len() < self.min_leaf() {
            return None;
        }
        if self.flat_likelihood {
            return Some(0.0);
        }
        self.leaf
            .log_marginal(&LeafStats::from_rows(data, rows))
            .ok()
    }

    /// Replaces every leaf's parameters with a draw from its conditional
    /// posterior and stores the leaf statistics. Leaves with fewer than `q`
    /// rows (only possible in a root-only tree) draw from the surrogate
    /// posterior instead. Returns the number of floored leaves.
    pub fn redraw_leaf_params<R: Rng + ?Sized>(
        &self,
        tree: &mut Tree,
        data: &Dataset,
        rows: &[usize],
        surrogate: &Surrogate,
        rng: &mut R,
    ) -> usize {
        let mut clamped = 0;
        for (k, leaf_rows) in tree.leaf_rows(data, rows) {
            let stats = LeafStats::from_rows(data, &leaf_rows);
            let params = if stats.count() >= self.min_leaf() {
                clamped += usize::from(self.leaf.is_degenerate(&stats));
                self.leaf
                    .draw(&stats, rng)
                    .expect("leaf meets the minimum size and the floor is positive")
            } else {
                surrogate.draw_posterior(&stats, rng)
            };
            tree.set_leaf(k, Some(params), Some(stats))
                .expect("k is a leaf");
        }
        clamped
    }
}

/// `xi ~ Dirichlet(1 + usage)` where usage counts the tree's interior nodes
/// per covariate.
pub fn update_xi<R: Rng + ?Sized>(tree: &Tree, m: usize, rng: &mut R) -> Vec<f64> {
    let alpha: Vec<f64> = tree
        .covariate_usage(m)
        .into_iter()
        .map(|u| 1.0 + u as f64)
        .collect();
    sample_dirichlet(&alpha, rng)
}

#[inline]
fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}
