//! Stick-breaking weights, slice variables and cluster assignments.
//!
//! Clusters are kept in stick order. Sticks are appended when the slice
//! variables require more candidates and trailing sticks with no members are
//! dropped after each assignment update. Empty clusters in the middle of the
//! list keep their stick and get a fresh prior tree; they are excluded from
//! prediction and reporting.

use rand::Rng;
use rand_distr::{Beta, Distribution, Open01};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{BetError, Result};
use crate::likelihood::{log_tree_obs_density, sample_dirichlet, Surrogate};
use crate::rng::child;
use crate::sampler::{update_xi, SweepReport, TreeSampler};
use crate::tree::{LeafStats, Tree};

/// Sticks are kept inside `(0, 1)` so weights and residual mass stay positive.
const STICK_EPS: f64 = 1e-15;

/// One mixture component: a tree and its covariate-choice probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub tree: Tree,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    /// Stick fractions.
    pub v: Vec<f64>,
    /// Weights `w_j = v_j * prod_{k<j} (1 - v_k)`.
    pub w: Vec<f64>,
    /// Slice variable per observation.
    pub u: Vec<f64>,
    /// Cluster index per observation.
    pub z: Vec<usize>,
    pub clusters: Vec<Cluster>,
    pub alpha: f64,
}

/// A root-only tree whose leaf parameters come from the surrogate base.
pub fn instantiate_prior_tree<R: Rng + ?Sized>(surrogate: &Surrogate, rng: &mut R) -> Tree {
    let mut tree = Tree::root_only();
    let params = surrogate.draw_prior(rng);
    tree.set_leaf(0, Some(params), Some(LeafStats::empty(surrogate.kind)))
        .expect("root is a leaf");
    tree
}

fn fresh_cluster<R: Rng + ?Sized>(surrogate: &Surrogate, m: usize, rng: &mut R) -> Cluster {
    let tree = instantiate_prior_tree(surrogate, rng);
    let xi = sample_dirichlet(&vec![1.0; m], rng);
    Cluster { tree, xi }
}

/// Indices with at least `min_leaf` members, or every occupied index when no
/// cluster reaches that size.
pub fn established_clusters(counts: &[usize], min_leaf: usize) -> Vec<usize> {
    let big: Vec<usize> = (0..counts.len())
        .filter(|&j| counts[j] >= min_leaf)
        .collect();
    if big.is_empty() {
        (0..counts.len()).filter(|&j| counts[j] > 0).collect()
    } else {
        big
    }
}

fn clamp_stick(v: f64) -> f64 {
    v.clamp(STICK_EPS, 1.0 - STICK_EPS)
}

impl MixtureState {
    /// All `n` observations in one cluster holding `tree`, with uniform `xi`.
    pub fn single(n: usize, m: usize, alpha: f64, tree: Tree) -> Self {
        let mut state = Self {
            v: vec![0.5],
            w: vec![0.5],
            u: vec![0.25; n],
            z: vec![0; n],
            clusters: vec![Cluster {
                tree,
                xi: vec![1.0 / m as f64; m],
            }],
            alpha,
        };
        state.recompute_weights();
        state
    }

    /// Observations assigned uniformly at random to `k` root-only clusters.
    pub fn scattered<R: Rng + ?Sized>(
        n: usize,
        m: usize,
        alpha: f64,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let mut state = Self::single(n, m, alpha, Tree::root_only());
        state.z = (0..n).map(|_| rng.random_range(0..k)).collect();
        state.clusters = vec![state.clusters[0].clone(); k];
        state.v = vec![0.5; k];
        state.recompute_weights();
        state
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Members per cluster.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.clusters.len()];
        for &j in &self.z {
            counts[j] += 1;
        }
        counts
    }

    /// Indices of clusters with at least one member.
    pub fn occupied(&self) -> Vec<usize> {
        self.counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn n_occupied(&self) -> usize {
        self.counts().iter().filter(|&&c| c > 0).count()
    }

    /// Clusters with at least `min_leaf` members, i.e. those whose tree is
    /// fitted to data rather than carried by the surrogate base.
    pub fn established(&self, min_leaf: usize) -> Vec<usize> {
        established_clusters(&self.counts(), min_leaf)
    }

    /// Rows assigned to each cluster, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.clusters.len()];
        for (i, &j) in self.z.iter().enumerate() {
            out[j].push(i);
        }
        out
    }

    /// Stick mass not yet allocated to an instantiated cluster.
    pub fn residual(&self) -> f64 {
        self.v.iter().map(|v| 1.0 - v).product()
    }

    pub fn recompute_weights(&mut self) {
        let mut remaining = 1.0;
        self.w = self
            .v
            .iter()
            .map(|&v| {
                let w = v * remaining;
                remaining *= 1.0 - v;
                w
            })
            .collect();
    }

    /// `v_j ~ Beta(1 + n_j, alpha + sum_{k>j} n_k)` for every instantiated stick.
    pub fn update_sticks<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let counts = self.counts();
        let mut above: usize = counts.iter().sum();
        for (j, &n_j) in counts.iter().enumerate() {
            above -= n_j;
            let beta = Beta::new(1.0 + n_j as f64, self.alpha + above as f64)
                .expect("positive beta parameters");
            self.v[j] = clamp_stick(beta.sample(rng));
        }
        self.recompute_weights();
    }

    /// `u_i ~ U(0, w_{z_i})`, then new sticks with fresh prior trees until the
    /// residual mass falls below every slice variable.
    pub fn update_slices<R: Rng + ?Sized>(&mut self, surrogate: &Surrogate, m: usize, rng: &mut R) {
        for (u, &j) in self.u.iter_mut().zip(&self.z) {
            let r: f64 = Open01.sample(rng);
            *u = r * self.w[j];
        }
        let min_u = self.u.iter().copied().fold(f64::INFINITY, f64::min);
        let stick = Beta::new(1.0, self.alpha).expect("positive alpha");
        let mut residual = self.residual();
        while residual >= min_u {
            let v = clamp_stick(stick.sample(rng));
            self.v.push(v);
            self.w.push(v * residual);
            residual *= 1.0 - v;
            self.clusters.push(fresh_cluster(surrogate, m, rng));
        }
    }

    /// Draws each `z_i` with probability proportional to
    /// `1(w_j > u_i) [y_i | T_j]`, then drops trailing empty clusters.
    ///
    /// With `flat` every density is replaced by one. Uniforms are drawn
    /// serially so the result does not depend on the thread count.
    pub fn update_assignments<R: Rng + ?Sized>(
        &mut self,
        data: &Dataset,
        flat: bool,
        rng: &mut R,
    ) -> Result<()> {
        let draws: Vec<f64> = (0..self.z.len()).map(|_| rng.random()).collect();
        let w = &self.w;
        let u = &self.u;
        let clusters = &self.clusters;
        let z: Vec<Option<usize>> = draws
            .par_iter()
            .enumerate()
            .map(|(i, &r)| {
                let mut logp: Vec<(usize, f64)> = w
                    .iter()
                    .enumerate()
                    .filter(|(_, &wj)| wj > u[i])
                    .map(|(j, _)| {
                        let lp = if flat {
                            0.0
                        } else {
                            log_tree_obs_density(&clusters[j].tree, data, i)
                        };
                        (j, lp)
                    })
                    .collect();
                let max = logp.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                if logp.is_empty() || !max.is_finite() {
                    return logp.first().map(|p| p.0).filter(|_| max.is_finite());
                }
                let mut total = 0.0;
                for p in &mut logp {
                    p.1 = (p.1 - max).exp();
                    total += p.1;
                }
                let mut target = r * total;
                for &(j, p) in &logp {
                    if target < p {
                        return Some(j);
                    }
                    target -= p;
                }
                logp.iter().rev().find(|p| p.1 > 0.0).map(|p| p.0)
            })
            .collect();
        for (i, zi) in z.into_iter().enumerate() {
            self.z[i] = zi.ok_or_else(|| {
                BetError::Invariant(format!(
                    "observation {i} has no candidate cluster (u = {})",
                    self.u[i]
                ))
            })?;
        }
        self.trim_trailing();
        Ok(())
    }

    /// Drops empty clusters at the end of the stick order.
    pub fn trim_trailing(&mut self) {
        let counts = self.counts();
        let keep = counts.iter().rposition(|&c| c > 0).map_or(1, |j| j + 1);
        self.v.truncate(keep);
        self.w.truncate(keep);
        self.clusters.truncate(keep);
    }

    /// Tree step for every cluster: occupied clusters get `sweeps` sweeps on
    /// their members, a new `xi` and fresh leaf parameters; empty ones get a
    /// fresh prior tree. Each cluster uses its own generator seeded from `rng`,
    /// so the clusters can be processed in parallel.
    pub fn update_trees<R: Rng + ?Sized>(
        &mut self,
        data: &Dataset,
        sampler: &TreeSampler,
        surrogate: &Surrogate,
        sweeps: usize,
        rng: &mut R,
    ) -> SweepReport {
        let m = data.n_cols();
        let members = self.members();
        let seeds: Vec<u64> = (0..self.clusters.len()).map(|_| rng.random()).collect();
        let reports: Vec<SweepReport> = self
            .clusters
            .par_iter_mut()
            .zip(members.par_iter())
            .zip(seeds.par_iter())
            .map(|((cluster, rows), &seed)| {
                let mut crng = child(seed);
                let mut report = SweepReport::default();
                if rows.is_empty() {
                    *cluster = fresh_cluster(surrogate, m, &mut crng);
                    return report;
                }
                for _ in 0..sweeps {
                    let r = sampler.sweep(&mut cluster.tree, data, rows, &cluster.xi, &mut crng);
                    report.merge(&r);
                }
                cluster.xi = update_xi(&cluster.tree, m, &mut crng);
                report.clamped_leaves +=
                    sampler.redraw_leaf_params(&mut cluster.tree, data, rows, surrogate, &mut crng)
                        as u64;
                report
            })
            .collect();
        reports.iter().fold(SweepReport::default(), |mut acc, r| {
            acc.merge(r);
            acc
        })
    }

    /// Per-observation `log [y_i | T_{z_i}]`.
    pub fn log_densities(&self, data: &Dataset) -> Vec<f64> {
        (0..self.z.len())
            .into_par_iter()
            .map(|i| log_tree_obs_density(&self.clusters[self.z[i]].tree, data, i))
            .collect()
    }

    /// `(sum_i log [y_i | T_{z_i}], sum_i log [y_i | T_{z_i}] + log w_{z_i})`.
    pub fn log_likelihoods(&self, data: &Dataset) -> (f64, f64) {
        let dens = self.log_densities(data);
        let conditional: f64 = dens.iter().sum();
        let weights: f64 = self.z.iter().map(|&j| self.w[j].ln()).sum();
        (conditional, conditional + weights)
    }

    /// Checks stick identity, slice validity and assignment bounds.
    pub fn check(&self) -> Result<()> {
        let j = self.clusters.len();
        if self.v.len() != j || self.w.len() != j {
            return Err(BetError::Invariant(
                "stick and cluster counts differ".into(),
            ));
        }
        let mut remaining = 1.0;
        for (idx, (&v, &w)) in self.v.iter().zip(&self.w).enumerate() {
            if (w - v * remaining).abs() >= 1e-12 {
                return Err(BetError::Invariant(format!(
                    "weight {idx} breaks the stick identity"
                )));
            }
            remaining *= 1.0 - v;
        }
        for (i, (&z, &u)) in self.z.iter().zip(&self.u).enumerate() {
            if z >= j {
                return Err(BetError::Invariant(format!(
                    "observation {i} assigned past the sticks"
                )));
            }
            if !(u > 0.0 && u < self.w[z]) {
                return Err(BetError::Invariant(format!(
                    "slice of observation {i} out of range"
                )));
            }
        }
        Ok(())
    }
}
