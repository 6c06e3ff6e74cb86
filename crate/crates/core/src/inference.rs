//! Chain driver, best-ensemble selection, predictors and metrics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist, StudentsT};

use crate::data::{Dataset, OutcomeKind};
use crate::error::{BetError, Result};
use crate::likelihood::{
    log_obs_density, log_tree_obs_density, LeafPrior, Surrogate, TreePrior,
    CATEGORICAL_CONCENTRATION,
};
use crate::mixture::{established_clusters, Cluster, MixtureState};
use crate::rng::{self, Stream};
use crate::sampler::{SweepReport, TreeSampler};
use crate::tree::{LeafParams, LeafStats, Tree};

/// Coverage of continuous predictive intervals.
pub const INTERVAL_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub delta: f64,
    pub alpha: f64,
    /// Minimum rows per leaf.
    pub q: usize,
    pub depth_cap: u32,
    /// Tree sweeps per clustering step.
    pub sweeps: usize,
    pub threads: usize,
    /// Replace every likelihood term by one (prior-only run).
    pub flat_likelihood: bool,
    /// Keep every observation in one tree and skip the clustering step.
    pub single_tree: bool,
    /// Number of clusters the observations are spread over at the start.
    pub init_clusters: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 5_000,
            thinning: 1,
            seed: 0,
            delta: 1.0,
            alpha: 1.0,
            q: 5,
            depth_cap: 12,
            sweeps: 1,
            threads: 1,
            flat_likelihood: false,
            single_tree: false,
            init_clusters: 2,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BetError::InvalidConfig(msg));
        if self.q < 2 {
            return bad(format!("q must exceed 1 (got {})", self.q));
        }
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.burn_in >= self.iterations {
            return bad(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if self.thinning == 0
            || self.sweeps == 0
            || self.threads == 0
            || self.depth_cap == 0
            || self.init_clusters == 0
        {
            return bad(
                "thinning, sweeps, threads, depth cap and initial clusters must be positive".into(),
            );
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive (got {})", self.delta));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive (got {})", self.alpha));
        }
        Ok(())
    }

    /// Whether 1-based iteration `it` is kept after burn-in and thinning.
    pub fn is_retained(&self, it: usize) -> bool {
        it > self.burn_in && (it - self.burn_in).is_multiple_of(self.thinning)
    }

    pub fn sampler(&self, data: &Dataset) -> Result<TreeSampler> {
        let mut sampler = TreeSampler::new(
            TreePrior {
                delta: self.delta,
                depth_cap: self.depth_cap,
            },
            LeafPrior::for_data(self.q, data)?,
        );
        sampler.flat_likelihood = self.flat_likelihood;
        Ok(sampler)
    }
}

/// One row of the chain trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub retained: bool,
    /// `sum_i log [y_i | T_{z_i}] + log w_{z_i}`.
    pub joint_loglik: f64,
    /// `sum_i log [y_i | T_{z_i}]`.
    pub conditional_loglik: f64,
    /// Established clusters (at least `q` members).
    pub clusters: usize,
    /// Clusters with at least one member.
    pub occupied: usize,
    /// Instantiated clusters, occupied or not.
    pub instantiated: usize,
    /// Weights of the established clusters in stick order.
    pub weights: Vec<f64>,
    pub xi_bar: Vec<f64>,
    pub report: SweepReport,
}

const TRACE_FIXED: [&str; 18] = [
    "iteration",
    "retained",
    "joint_loglik",
    "conditional_loglik",
    "clusters",
    "occupied",
    "instantiated",
    "grow_proposed",
    "grow_accepted",
    "prune_proposed",
    "prune_accepted",
    "covariate_proposed",
    "covariate_accepted",
    "threshold_proposed",
    "threshold_accepted",
    "degenerate_rejections",
    "repairs",
    "weights",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    /// Covariate names, one `xi_` column each.
    pub covariates: Vec<String>,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn retained(&self) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(|r| r.retained)
    }

    pub fn n_retained(&self) -> usize {
        self.retained().count()
    }

    /// Retained iterations per established-cluster count.
    pub fn cluster_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for r in self.retained() {
            *hist.entry(r.clusters).or_insert(0) += 1;
        }
        hist
    }

    /// Most frequent established-cluster count and its share of retained
    /// iterations (smallest count on ties).
    pub fn modal_clusters(&self) -> Result<(usize, f64)> {
        let hist = self.cluster_histogram();
        let total: usize = hist.values().sum();
        let (count, freq) = hist
            .iter()
            .fold(None, |best: Option<(usize, usize)>, (&c, &f)| match best {
                Some((_, bf)) if bf >= f => best,
                _ => Some((c, f)),
            })
            .ok_or(BetError::EmptyTrace)?;
        Ok((count, freq as f64 / total as f64))
    }

    /// Mean of the per-iteration `xi_bar` over retained iterations.
    pub fn mean_xi_bar(&self) -> Result<Vec<f64>> {
        let n = self.n_retained();
        if n == 0 {
            return Err(BetError::EmptyTrace);
        }
        let mut mean = vec![0.0; self.covariates.len()];
        for r in self.retained() {
            for (m, x) in mean.iter_mut().zip(&r.xi_bar) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        Ok(mean)
    }

    pub fn mean_conditional_loglik(&self) -> Result<f64> {
        let n = self.n_retained();
        if n == 0 {
            return Err(BetError::EmptyTrace);
        }
        Ok(self.retained().map(|r| r.conditional_loglik).sum::<f64>() / n as f64)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = TRACE_FIXED.iter().map(|s| s.to_string()).collect();
        header.extend(self.covariates.iter().map(|c| format!("xi_{c}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let p = &r.report.proposals;
            let a = &r.report.acceptances;
            let mut rec = vec![
                r.iteration.to_string(),
                u8::from(r.retained).to_string(),
                r.joint_loglik.to_string(),
                r.conditional_loglik.to_string(),
                r.clusters.to_string(),
                r.occupied.to_string(),
                r.instantiated.to_string(),
                p.grow.to_string(),
                a.grow.to_string(),
                p.prune.to_string(),
                a.prune.to_string(),
                p.covariate.to_string(),
                a.covariate.to_string(),
                p.threshold.to_string(),
                a.threshold.to_string(),
                r.report.degenerate_rejections.to_string(),
                r.report.repairs.to_string(),
                join_floats(&r.weights),
            ];
            rec.extend(r.xi_bar.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| BetError::io("<trace>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| BetError::io(path, e))?;
        self.write_csv(BufWriter::new(file))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Trace> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        for (i, name) in TRACE_FIXED.iter().enumerate() {
            if header.get(i) != Some(name) {
                return Err(BetError::MissingColumn(name.to_string()));
            }
        }
        let covariates: Vec<String> = header
            .iter()
            .skip(TRACE_FIXED.len())
            .map(|h| h.strip_prefix("xi_").unwrap_or(h).to_string())
            .collect();
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i)
                    .ok_or_else(|| BetError::MissingColumn(TRACE_FIXED[i].to_string()))
            };
            let num = |i: usize| -> Result<f64> {
                let s = field(i)?;
                s.parse::<f64>().map_err(|_| BetError::NonNumeric {
                    row: line + 1,
                    column: header.get(i).unwrap_or("").to_string(),
                    value: s.to_string(),
                })
            };
            let count = |i: usize| -> Result<u64> { Ok(num(i)? as u64) };
            let mut report = SweepReport::default();
            report.proposals.grow = count(7)?;
            report.acceptances.grow = count(8)?;
            report.proposals.prune = count(9)?;
            report.acceptances.prune = count(10)?;
            report.proposals.covariate = count(11)?;
            report.acceptances.covariate = count(12)?;
            report.proposals.threshold = count(13)?;
            report.acceptances.threshold = count(14)?;
            report.degenerate_rejections = count(15)?;
            report.repairs = count(16)?;
            let weights = field(17)?
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| {
                    BetError::InvalidData(format!("bad weights on trace row {}", line + 1))
                })?;
            let xi_bar = (TRACE_FIXED.len()..TRACE_FIXED.len() + covariates.len())
                .map(num)
                .collect::<Result<Vec<_>>>()?;
            rows.push(TraceRow {
                iteration: count(0)? as usize,
                retained: count(1)? != 0,
                joint_loglik: num(2)?,
                conditional_loglik: num(3)?,
                clusters: count(4)? as usize,
                occupied: count(5)? as usize,
                instantiated: count(6)? as usize,
                weights,
                xi_bar,
                report,
            });
        }
        Ok(Trace { covariates, rows })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Trace> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| BetError::io(path, e))?;
        Self::read_csv(BufReader::new(file))
    }
}

fn join_floats(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

/// Frozen state of the chain at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSnapshot {
    pub iteration: usize,
    /// `sum_i log [y_i | T_{z_i}] + log w_{z_i}` on the training rows.
    pub score: f64,
    pub conditional_loglik: f64,
    pub weights: Vec<f64>,
    pub clusters: Vec<Cluster>,
    pub z: Vec<usize>,
    pub kind: OutcomeKind,
    pub column_names: Vec<String>,
    pub outcome_name: String,
    pub min_leaf: usize,
    pub sse_floor: f64,
}

/// Point estimate and uncertainty for one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Continuous { mean: f64, lower: f64, upper: f64 },
    Categorical { probs: Vec<f64> },
}

impl Prediction {
    /// The value compared with the truth: the mean, `P(y = 1)` for two
    /// classes, or the most probable class otherwise.
    pub fn score(&self) -> f64 {
        match self {
            Prediction::Continuous { mean, .. } => *mean,
            Prediction::Categorical { probs } if probs.len() == 2 => probs[1],
            Prediction::Categorical { .. } => self.class().unwrap_or(0) as f64,
        }
    }

    pub fn class(&self) -> Option<usize> {
        match self {
            Prediction::Continuous { .. } => None,
            Prediction::Categorical { probs } if probs.len() == 2 => {
                Some(usize::from(probs[1] >= 0.5))
            }
            Prediction::Categorical { probs } => probs
                .iter()
                .enumerate()
                .fold(None, |best: Option<(usize, f64)>, (i, &p)| match best {
                    Some((_, bp)) if bp >= p => best,
                    _ => Some((i, p)),
                })
                .map(|(i, _)| i),
        }
    }
}

/// Predictive distribution of one continuous leaf.
#[derive(Debug, Clone, Copy)]
enum LeafPredictive {
    T(StudentsT),
    Normal(NormalDist),
}

impl LeafPredictive {
    fn cdf(&self, x: f64) -> f64 {
        match self {
            LeafPredictive::T(d) => d.cdf(x),
            LeafPredictive::Normal(d) => d.cdf(x),
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        match self {
            LeafPredictive::T(d) => d.inverse_cdf(p),
            LeafPredictive::Normal(d) => d.inverse_cdf(p),
        }
    }
}

/// Mean and predictive distribution of the leaf `x` reaches.
fn leaf_predictive(tree: &Tree, leaf: usize, sse_floor: f64) -> (f64, LeafPredictive) {
    match (tree.leaf_stats(leaf), tree.leaf_params(leaf)) {
        (Some(LeafStats::Continuous { n, mean, sse }), _) if *n >= 2 => {
            let nf = *n as f64;
            let sse = sse.max(sse_floor).max(f64::MIN_POSITIVE);
            let scale = (sse / (nf - 1.0) * (1.0 + 1.0 / nf)).sqrt();
            let t = StudentsT::new(*mean, scale, nf - 1.0).expect("valid t parameters");
            (*mean, LeafPredictive::T(t))
        }
        (_, Some(LeafParams::Gaussian { mean, variance })) => {
            let d = NormalDist::new(*mean, variance.sqrt()).expect("valid normal");
            (*mean, LeafPredictive::Normal(d))
        }
        _ => panic!("continuous leaf {leaf} carries neither statistics nor parameters"),
    }
}

fn leaf_probs(tree: &Tree, leaf: usize, classes: usize) -> Vec<f64> {
    match (tree.leaf_stats(leaf), tree.leaf_params(leaf)) {
        (Some(LeafStats::Categorical { counts }), _) if counts.iter().sum::<usize>() > 0 => {
            let n: usize = counts.iter().sum();
            let denom = CATEGORICAL_CONCENTRATION * counts.len() as f64 + n as f64;
            counts
                .iter()
                .map(|&c| (CATEGORICAL_CONCENTRATION + c as f64) / denom)
                .collect()
        }
        (_, Some(LeafParams::Categorical { probs })) => probs.clone(),
        _ => vec![1.0 / classes as f64; classes],
    }
}

/// Quantile of a finite mixture of predictive distributions by bisection.
fn mixture_quantile(parts: &[(f64, LeafPredictive)], p: f64) -> f64 {
    let cdf = |x: f64| parts.iter().map(|(w, d)| w * d.cdf(x)).sum::<f64>();
    let mut lo = parts
        .iter()
        .map(|(_, d)| d.quantile(p))
        .fold(f64::INFINITY, f64::min);
    let mut hi = parts
        .iter()
        .map(|(_, d)| d.quantile(p))
        .fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

impl EnsembleSnapshot {
    fn capture(
        state: &MixtureState,
        data: &Dataset,
        iteration: usize,
        sampler: &TreeSampler,
    ) -> Self {
        let (conditional, score) = state.log_likelihoods(data);
        Self {
            iteration,
            score,
            conditional_loglik: conditional,
            weights: state.w.clone(),
            clusters: state.clusters.clone(),
            z: state.z.clone(),
            kind: data.kind(),
            column_names: data.column_names().to_vec(),
            outcome_name: data.outcome_name().to_string(),
            min_leaf: sampler.leaf.min_leaf,
            sse_floor: sampler.leaf.sse_floor,
        }
    }

    /// Recomputes the joint score on the training data.
    pub fn recompute_score(&self, data: &Dataset) -> Result<f64> {
        if data.n_rows() != self.z.len() {
            return Err(BetError::LengthMismatch(self.z.len(), data.n_rows()));
        }
        Ok(self
            .z
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                log_tree_obs_density(&self.clusters[j].tree, data, i) + self.weights[j].ln()
            })
            .sum())
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.clusters.len()];
        for &j in &self.z {
            counts[j] += 1;
        }
        counts
    }

    /// Clusters with at least one training row.
    pub fn occupied(&self) -> Vec<usize> {
        self.counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(j, _)| j)
            .collect()
    }

    /// Clusters with at least `q` training rows (all occupied clusters when
    /// none is that large).
    pub fn established(&self) -> Vec<usize> {
        established_clusters(&self.counts(), self.min_leaf)
    }

    /// Weights of the established clusters, renormalized to sum to one.
    pub fn ensemble_weights(&self) -> Vec<(usize, f64)> {
        let occ = self.established();
        let total: f64 = occ.iter().map(|&j| self.weights[j]).sum();
        occ.into_iter()
            .map(|j| (j, self.weights[j] / total))
            .collect()
    }

    fn check_row(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.column_names.len() {
            return Err(BetError::LengthMismatch(x.len(), self.column_names.len()));
        }
        Ok(())
    }

    fn check_cluster(&self, cluster: usize) -> Result<()> {
        if cluster >= self.clusters.len() {
            return Err(BetError::InvalidCluster {
                cluster,
                clusters: self.clusters.len(),
            });
        }
        Ok(())
    }

    /// `E(theta | T_z)` at the leaf `x` reaches in tree `cluster`.
    pub fn predict_cluster(&self, x: &[f64], cluster: usize) -> Result<Prediction> {
        self.check_row(x)?;
        self.check_cluster(cluster)?;
        let tree = &self.clusters[cluster].tree;
        let leaf = tree.route(x);
        Ok(match self.kind {
            OutcomeKind::Continuous => {
                let (mean, dist) = leaf_predictive(tree, leaf, self.sse_floor);
                let tail = 0.5 * (1.0 - INTERVAL_LEVEL);
                Prediction::Continuous {
                    mean,
                    lower: dist.quantile(tail),
                    upper: dist.quantile(1.0 - tail),
                }
            }
            OutcomeKind::Categorical(k) => Prediction::Categorical {
                probs: leaf_probs(tree, leaf, k),
            },
        })
    }

    /// `sum_j w_j E(theta | T_j)` over established clusters.
    pub fn predict_ensemble(&self, x: &[f64]) -> Result<Prediction> {
        self.check_row(x)?;
        let weights = self.ensemble_weights();
        Ok(match self.kind {
            OutcomeKind::Continuous => {
                let parts: Vec<(f64, f64, LeafPredictive)> = weights
                    .iter()
                    .map(|&(j, w)| {
                        let tree = &self.clusters[j].tree;
                        let (mean, dist) = leaf_predictive(tree, tree.route(x), self.sse_floor);
                        (w, mean, dist)
                    })
                    .collect();
                let mean = parts.iter().map(|(w, m, _)| w * m).sum();
                let dists: Vec<(f64, LeafPredictive)> =
                    parts.iter().map(|(w, _, d)| (*w, *d)).collect();
                let tail = 0.5 * (1.0 - INTERVAL_LEVEL);
                Prediction::Continuous {
                    mean,
                    lower: mixture_quantile(&dists, tail),
                    upper: mixture_quantile(&dists, 1.0 - tail),
                }
            }
            OutcomeKind::Categorical(k) => {
                let mut probs = vec![0.0; k];
                for &(j, w) in &weights {
                    let tree = &self.clusters[j].tree;
                    for (p, q) in probs.iter_mut().zip(leaf_probs(tree, tree.route(x), k)) {
                        *p += w * q;
                    }
                }
                Prediction::Categorical { probs }
            }
        })
    }

    /// Established cluster maximizing `sum_{i in rows} log [y_i | T_j] + log w_j`.
    pub fn most_likely_cluster(&self, data: &Dataset, rows: &[usize]) -> Result<usize> {
        self.check_columns(data)?;
        let mut best: Option<(usize, f64)> = None;
        for j in self.established() {
            let tree = &self.clusters[j].tree;
            let ll: f64 = rows
                .iter()
                .map(|&i| {
                    let params = tree
                        .leaf_params(tree.route_row(data, i))
                        .expect("snapshot leaves carry parameters");
                    log_obs_density(data.outcome(i), params)
                })
                .sum::<f64>()
                + self.weights[j].ln();
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some((j, ll));
            }
        }
        best.map(|(j, _)| j).ok_or(BetError::EmptyInput)
    }

    fn check_columns(&self, data: &Dataset) -> Result<()> {
        if data.column_names() != self.column_names.as_slice() {
            return Err(BetError::InvalidData(format!(
                "covariates {:?} do not match the model's {:?}",
                data.column_names(),
                self.column_names
            )));
        }
        Ok(())
    }

    pub fn predict_rows(&self, data: &Dataset, mode: PredictMode<'_>) -> Result<Vec<Prediction>> {
        self.check_columns(data)?;
        (0..data.n_rows())
            .map(|i| {
                let x = data.row(i);
                match mode {
                    PredictMode::Ensemble => self.predict_ensemble(&x),
                    PredictMode::Cluster(z) => self.predict_cluster(&x, z[i]),
                }
            })
            .collect()
    }

    /// Predicts every entry of every subject after revealing its first
    /// `revealed` entries (in row order) to pick the subject's cluster.
    /// Returns `(row, prediction)` for the unrevealed entries.
    pub fn predict_by_subject(
        &self,
        data: &Dataset,
        revealed: usize,
    ) -> Result<Vec<(usize, Prediction)>> {
        let subjects = data.subjects().ok_or_else(|| {
            BetError::InvalidConfig("subject prediction requires subject ids".into())
        })?;
        let mut by_subject: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, &s) in subjects.iter().enumerate() {
            by_subject.entry(s).or_default().push(i);
        }
        let mut out = Vec::new();
        for rows in by_subject.values() {
            let shown = revealed.min(rows.len());
            let cluster = if shown == 0 {
                None
            } else {
                Some(self.most_likely_cluster(data, &rows[..shown])?)
            };
            for &i in &rows[shown..] {
                let x = data.row(i);
                let p = match cluster {
                    Some(j) => self.predict_cluster(&x, j)?,
                    None => self.predict_ensemble(&x)?,
                };
                out.push((i, p));
            }
        }
        out.sort_by_key(|(i, _)| *i);
        Ok(out)
    }

    /// `xi_bar = sum_j w_j xi_j` over established clusters, renormalized.
    pub fn variable_ranking(&self) -> Vec<f64> {
        let m = self.column_names.len();
        let mut xi = vec![0.0; m];
        for (j, w) in self.ensemble_weights() {
            for (a, b) in xi.iter_mut().zip(&self.clusters[j].xi) {
                *a += w * b;
            }
        }
        let total: f64 = xi.iter().sum();
        if total > 0.0 {
            xi.iter_mut().for_each(|x| *x /= total);
        }
        xi
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| BetError::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| BetError::io(path, e))?;
        w.flush().map_err(|e| BetError::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| BetError::io(path, e))?;
        let snap: Self = serde_json::from_reader(BufReader::new(file))?;
        for c in &snap.clusters {
            c.tree.check()?;
        }
        Ok(snap)
    }
}

/// Cluster choice for [`EnsembleSnapshot::predict_rows`].
#[derive(Debug, Clone, Copy)]
pub enum PredictMode<'a> {
    Ensemble,
    /// One cluster index per row.
    Cluster(&'a [usize]),
}

/// The snapshot with the largest score; ties go to the earliest iteration.
pub fn select_best(snapshots: &[EnsembleSnapshot]) -> Result<&EnsembleSnapshot> {
    snapshots
        .iter()
        .fold(None, |best: Option<&EnsembleSnapshot>, s| match best {
            Some(b) if b.score > s.score || (b.score == s.score && b.iteration <= s.iteration) => {
                Some(b)
            }
            _ => Some(s),
        })
        .ok_or(BetError::EmptyTrace)
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub trace: Trace,
    pub best: EnsembleSnapshot,
    /// State after the last iteration.
    pub last: EnsembleSnapshot,
}

/// Runs the blocked Gibbs sampler on `data`.
///
/// Each iteration updates sticks, slices and assignments, then grows each
/// cluster's tree on its members and redraws `xi` and the leaf parameters.
pub fn run_chain(data: &Dataset, config: &ChainConfig) -> Result<ChainOutput> {
    config.validate()?;
    data.require_rows(2 * config.q)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| BetError::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| run_chain_inner(data, config))
}

fn run_chain_inner(data: &Dataset, config: &ChainConfig) -> Result<ChainOutput> {
    let sampler = config.sampler(data)?;
    let surrogate = Surrogate::from_data(data);
    let m = data.n_cols();
    let n = data.n_rows();
    let mut mix_rng = rng::stream(config.seed, Stream::Mixture);
    let mut init_rng = rng::stream(config.seed, Stream::Init);

    let mut state = if config.single_tree || config.init_clusters == 1 {
        MixtureState::single(n, m, config.alpha, Tree::root_only())
    } else {
        MixtureState::scattered(n, m, config.alpha, config.init_clusters, &mut init_rng)
    };
    if config.single_tree {
        state.v = vec![1.0];
        state.recompute_weights();
    } else {
        state.update_sticks(&mut init_rng);
    }
    state.update_trees(data, &sampler, &surrogate, config.sweeps, &mut init_rng);

    let mut trace = Trace {
        covariates: data.column_names().to_vec(),
        rows: Vec::with_capacity(config.iterations),
    };
    let mut best: Option<EnsembleSnapshot> = None;
    for it in 1..=config.iterations {
        if !config.single_tree {
            state.update_sticks(&mut mix_rng);
            state.update_slices(&surrogate, m, &mut mix_rng);
            state.update_assignments(data, config.flat_likelihood, &mut mix_rng)?;
            state.recompute_weights();
        }
        let report = state.update_trees(data, &sampler, &surrogate, config.sweeps, &mut mix_rng);
        let retained = config.is_retained(it);
        let (conditional, joint) = state.log_likelihoods(data);
        let established = state.established(config.q);
        let snapshot_weights: Vec<f64> = established.iter().map(|&j| state.w[j]).collect();
        let total_w: f64 = snapshot_weights.iter().sum();
        let mut xi_bar = vec![0.0; m];
        for (&j, &w) in established.iter().zip(&snapshot_weights) {
            for (a, b) in xi_bar.iter_mut().zip(&state.clusters[j].xi) {
                *a += w / total_w * b;
            }
        }
        if retained && best.as_ref().is_none_or(|b| joint > b.score) {
            best = Some(EnsembleSnapshot::capture(&state, data, it, &sampler));
        }
        trace.rows.push(TraceRow {
            iteration: it,
            retained,
            joint_loglik: joint,
            conditional_loglik: conditional,
            clusters: established.len(),
            occupied: state.n_occupied(),
            instantiated: state.n_clusters(),
            weights: snapshot_weights,
            xi_bar,
            report,
        });
    }
    let last = EnsembleSnapshot::capture(&state, data, config.iterations, &sampler);
    let best = best.ok_or(BetError::EmptyTrace)?;
    Ok(ChainOutput { trace, best, last })
}

/// Misclassification rate, RMSE and MAD; only the ones meaningful for the
/// outcome kind are set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mad: Option<f64>,
}

/// Scores predictions against the truth. For two classes `predictions` are
/// `P(y = 1)` and are cut at 0.5; for more classes they are predicted labels.
pub fn evaluate(predictions: &[f64], truth: &[f64], kind: OutcomeKind) -> Result<Metrics> {
    if predictions.len() != truth.len() {
        return Err(BetError::LengthMismatch(predictions.len(), truth.len()));
    }
    if predictions.is_empty() {
        return Err(BetError::EmptyInput);
    }
    let n = predictions.len();
    Ok(match kind {
        OutcomeKind::Categorical(k) => {
            let wrong = predictions
                .iter()
                .zip(truth)
                .filter(|(&p, &t)| {
                    let label = if k == 2 {
                        f64::from(u8::from(p >= 0.5))
                    } else {
                        p.round()
                    };
                    label != t
                })
                .count();
            Metrics {
                n,
                mcr: Some(wrong as f64 / n as f64),
                rmse: None,
                mad: None,
            }
        }
        OutcomeKind::Continuous => {
            let (mut se, mut ae) = (0.0, 0.0);
            for (p, t) in predictions.iter().zip(truth) {
                se += (p - t) * (p - t);
                ae += (p - t).abs();
            }
            Metrics {
                n,
                mcr: None,
                rmse: Some((se / n as f64).sqrt()),
                mad: Some(ae / n as f64),
            }
        }
    })
}
