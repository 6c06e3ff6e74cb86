//! Datasets, CSV ingestion, simulation generators and train/test splits.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BetError, Result};
use crate::rng::{self, Stream};

/// Outcome type of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Continuous,
    /// Labels are integers in `0..K`.
    Categorical(usize),
}

impl OutcomeKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, OutcomeKind::Categorical(_))
    }

    pub fn classes(&self) -> usize {
        match self {
            OutcomeKind::Continuous => 0,
            OutcomeKind::Categorical(k) => *k,
        }
    }
}

/// Immutable covariate matrix plus outcome vector.
///
/// Covariates are stored column-major. `thresholds[c]` holds the midpoints
/// between adjacent sorted unique values of column `c`; a split at any real
/// number in the same gap routes every row identically, so these midpoints
/// are the complete finite support for split thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
    kind: OutcomeKind,
    column_names: Vec<String>,
    outcome_name: String,
    thresholds: Vec<Vec<f64>>,
    subjects: Option<Vec<u64>>,
}

impl Dataset {
    pub fn new(
        columns: Vec<Vec<f64>>,
        y: Vec<f64>,
        kind: OutcomeKind,
        column_names: Vec<String>,
        outcome_name: impl Into<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(BetError::TooFewRows {
                rows: 0,
                required: 1,
            });
        }
        if columns.is_empty() {
            return Err(BetError::InvalidData("no covariate columns".into()));
        }
        if column_names.len() != columns.len() {
            return Err(BetError::InvalidData(format!(
                "{} column names for {} columns",
                column_names.len(),
                columns.len()
            )));
        }
        for (name, col) in column_names.iter().zip(&columns) {
            if col.len() != n {
                return Err(BetError::InvalidData(format!(
                    "column `{name}` has {} rows, outcome has {n}",
                    col.len()
                )));
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(BetError::NonNumeric {
                    row,
                    column: name.clone(),
                    value: col[row].to_string(),
                });
            }
        }
        match kind {
            OutcomeKind::Continuous => {
                if let Some(row) = y.iter().position(|v| !v.is_finite()) {
                    return Err(BetError::NonNumeric {
                        row,
                        column: outcome_name.into(),
                        value: y[row].to_string(),
                    });
                }
            }
            OutcomeKind::Categorical(k) => {
                if k < 2 {
                    return Err(BetError::InvalidData(format!(
                        "categorical outcome needs at least 2 classes, got {k}"
                    )));
                }
                for (row, &v) in y.iter().enumerate() {
                    if v.fract() != 0.0 || v < 0.0 || v >= k as f64 {
                        return Err(BetError::InvalidLabel {
                            row,
                            value: v,
                            classes: k,
                        });
                    }
                }
            }
        }
        let thresholds = columns.iter().map(|c| midpoint_grid(c)).collect();
        Ok(Self {
            columns,
            y,
            kind,
            column_names,
            outcome_name: outcome_name.into(),
            thresholds,
            subjects: None,
        })
    }

    /// Builds a dataset from row-major covariates.
    pub fn from_rows(
        rows: &[Vec<f64>],
        y: Vec<f64>,
        kind: OutcomeKind,
        column_names: Vec<String>,
        outcome_name: impl Into<String>,
    ) -> Result<Self> {
        let m = column_names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); m];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(BetError::InvalidData(format!(
                    "row {i} has {} values, expected {m}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                columns[c].push(v);
            }
        }
        Self::new(columns, y, kind, column_names, outcome_name)
    }

    pub fn with_subjects(mut self, subjects: Vec<u64>) -> Result<Self> {
        if subjects.len() != self.n_rows() {
            return Err(BetError::InvalidData(format!(
                "{} subject ids for {} rows",
                subjects.len(),
                self.n_rows()
            )));
        }
        self.subjects = Some(subjects);
        Ok(self)
    }

    /// Fails unless the dataset has at least `required` rows.
    pub fn require_rows(&self, required: usize) -> Result<()> {
        if self.n_rows() < required {
            return Err(BetError::TooFewRows {
                rows: self.n_rows(),
                required,
            });
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.columns[col]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn outcome(&self, row: usize) -> f64 {
        self.y[row]
    }

    #[inline]
    pub fn label(&self, row: usize) -> usize {
        self.y[row] as usize
    }

    pub fn kind(&self) -> OutcomeKind {
        self.kind
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn thresholds(&self, col: usize) -> &[f64] {
        &self.thresholds[col]
    }

    pub fn subjects(&self) -> Option<&[u64]> {
        self.subjects.as_deref()
    }

    pub fn outcome_mean(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.n_rows() as f64
    }

    /// Population variance of the outcome.
    pub fn outcome_variance(&self) -> f64 {
        let mean = self.outcome_mean();
        self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / self.n_rows() as f64
    }

    /// A new dataset holding `rows` (in the given order). Threshold grids are
    /// rebuilt from the subset.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect();
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let mut out = Dataset::new(
            columns,
            y,
            self.kind,
            self.column_names.clone(),
            self.outcome_name.clone(),
        )?;
        if let Some(s) = &self.subjects {
            out.subjects = Some(rows.iter().map(|&i| s[i]).collect());
        }
        Ok(out)
    }

    /// Writes the dataset as CSV: covariates, outcome, then `subject` if present.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.column_names.iter().map(String::as_str).collect();
        header.push(&self.outcome_name);
        if self.subjects.is_some() {
            header.push("subject");
        }
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            record.clear();
            record.extend(self.columns.iter().map(|c| c[i].to_string()));
            record.push(match self.kind {
                OutcomeKind::Continuous => self.y[i].to_string(),
                OutcomeKind::Categorical(_) => self.label(i).to_string(),
            });
            if let Some(s) = &self.subjects {
                record.push(s[i].to_string());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| BetError::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| BetError::io(path, e))?;
        self.write_csv(file)
    }
}

/// Midpoints between adjacent sorted unique values.
pub fn midpoint_grid(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted
        .windows(2)
        .map(|w| (w[0], 0.5 * (w[0] + w[1]), w[1]))
        .filter(|&(lo, mid, hi)| lo < mid && mid < hi)
        .map(|(_, mid, _)| mid)
        .collect()
}

/// How the outcome column is interpreted when loading a CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindSpec {
    Continuous,
    /// Categorical with `K` given, or inferred as `max label + 1`.
    Categorical(Option<usize>),
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub outcome: String,
    pub kind: KindSpec,
    pub subject_column: Option<String>,
    /// Columns to drop entirely (e.g. a cluster column used only for prediction).
    pub ignore_columns: Vec<String>,
    pub min_rows: usize,
    /// Accept files without the outcome column; outcomes are then read as 0.
    pub outcome_optional: bool,
}

impl CsvOptions {
    pub fn new(outcome: impl Into<String>, kind: KindSpec) -> Self {
        Self {
            outcome: outcome.into(),
            kind,
            subject_column: None,
            ignore_columns: Vec::new(),
            min_rows: 1,
            outcome_optional: false,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| BetError::io(path, e))?;
    read_csv(file, opts)
}

/// Reads an RFC-4180 CSV with a header row. Every non-ignored column other
/// than the outcome and subject columns becomes a covariate.
pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let outcome_idx = headers.iter().position(|h| *h == opts.outcome);
    if outcome_idx.is_none() && !opts.outcome_optional {
        return Err(BetError::MissingColumn(opts.outcome.clone()));
    }
    let subject_idx = match &opts.subject_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| BetError::MissingColumn(name.clone()))?,
        ),
        None => None,
    };
    let covariates: Vec<usize> = (0..headers.len())
        .filter(|&i| Some(i) != outcome_idx && Some(i) != subject_idx)
        .filter(|&i| !opts.ignore_columns.contains(&headers[i]))
        .collect();

    let mut columns = vec![Vec::new(); covariates.len()];
    let mut y = Vec::new();
    let mut subjects = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| BetError::NonNumeric {
                    row: row + 1,
                    column: headers[i].clone(),
                    value: raw.to_string(),
                })
        };
        for (slot, &i) in covariates.iter().enumerate() {
            columns[slot].push(cell(i)?);
        }
        y.push(match outcome_idx {
            Some(i) => cell(i)?,
            None => 0.0,
        });
        if let Some(si) = subject_idx {
            let raw = record.get(si).unwrap_or("").trim();
            let id = raw.parse::<u64>().map_err(|_| BetError::NonNumeric {
                row: row + 1,
                column: headers[si].clone(),
                value: raw.to_string(),
            })?;
            subjects.push(id);
        }
    }
    if y.len() < opts.min_rows.max(1) {
        return Err(BetError::TooFewRows {
            rows: y.len(),
            required: opts.min_rows.max(1),
        });
    }
    let kind = match opts.kind {
        KindSpec::Continuous => OutcomeKind::Continuous,
        KindSpec::Categorical(Some(k)) => OutcomeKind::Categorical(k),
        KindSpec::Categorical(None) => {
            let max = y.iter().cloned().fold(0.0_f64, f64::max);
            OutcomeKind::Categorical((max as usize + 1).max(2))
        }
    };
    let names = covariates.iter().map(|&i| headers[i].clone()).collect();
    let data = Dataset::new(columns, y, kind, names, opts.outcome.clone())?;
    if subject_idx.is_some() {
        data.with_subjects(subjects)
    } else {
        Ok(data)
    }
}

/// One of the three simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Study {
    I,
    II,
    III,
}

impl Study {
    pub fn from_number(n: u8) -> Option<Study> {
        match n {
            1 => Some(Study::I),
            2 => Some(Study::II),
            3 => Some(Study::III),
            _ => None,
        }
    }
}

/// A block of consecutive simulated rows: uniform covariates and a normal outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub rows: usize,
    pub bounds: Vec<(f64, f64)>,
    pub mean: f64,
    pub sd: f64,
}

impl Block {
    fn new(rows: usize, bounds: &[(f64, f64)], mean: f64) -> Self {
        Self {
            rows,
            bounds: bounds.to_vec(),
            mean,
            sd: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub study: Study,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(study: Study, seed: u64) -> Self {
        Self { study, seed }
    }

    /// Block table of the chosen study, in row order.
    pub fn blocks(&self) -> Vec<Block> {
        const LO: (f64, f64) = (0.1, 0.4);
        const HI: (f64, f64) = (0.6, 0.9);
        const ALL: (f64, f64) = (0.1, 0.9);
        match self.study {
            Study::I => vec![
                Block::new(100, &[LO, LO, HI], 1.0),
                Block::new(100, &[LO, HI, HI], 3.0),
                Block::new(100, &[HI, ALL, LO], 5.0),
            ],
            Study::II => vec![
                Block::new(100, &[LO, LO], 1.0),
                Block::new(100, &[LO, HI], 3.0),
                Block::new(100, &[HI, ALL], 5.0),
                Block::new(100, &[LO, LO], 1.5),
                Block::new(100, &[LO, HI], 5.5),
                Block::new(100, &[HI, ALL], 3.5),
            ],
            Study::III => vec![
                Block::new(100, &[LO, LO], 1.0),
                Block::new(100, &[LO, HI], 3.0),
                Block::new(100, &[HI, ALL], 5.0),
                Block::new(100, &[LO, HI], 5.0),
                Block::new(100, &[HI, HI], 1.0),
                Block::new(100, &[ALL, LO], 3.0),
            ],
        }
    }
}

/// Draws the study's rows block by block. Deterministic under `spec.seed`.
pub fn generate_simulation(spec: &SimSpec) -> Dataset {
    let blocks = spec.blocks();
    let m = blocks[0].bounds.len();
    let mut rng = rng::stream(spec.seed, Stream::Data);
    let mut columns = vec![Vec::new(); m];
    let mut y = Vec::new();
    for block in &blocks {
        let noise = Normal::new(block.mean, block.sd).expect("valid normal");
        for _ in 0..block.rows {
            for (c, &(lo, hi)) in block.bounds.iter().enumerate() {
                columns[c].push(rng.random_range(lo..hi));
            }
            y.push(noise.sample(&mut rng));
        }
    }
    let names = (1..=m).map(|c| format!("x{c}")).collect();
    Dataset::new(columns, y, OutcomeKind::Continuous, names, "y")
        .expect("simulation tables produce valid datasets")
}

/// Planted latent group of each row of a heterogeneous regression dataset.
pub type GroupLabels = Vec<u8>;

/// Region mean of the heterogeneous benchmark. Group 0 splits on `age` first,
/// group 1 on `marker` first. Group 1 sits at least 4 units above group 0 in
/// every region, so rows sorted by outcome level recover the groups; with
/// overlapping levels the region means could be swapped between the two trees
/// at no cost in likelihood.
pub fn heterogeneous_mean(group: u8, age: f64, marker: f64) -> f64 {
    match group {
        0 => {
            if age < 0.5 {
                if marker < 0.5 {
                    1.0
                } else {
                    3.0
                }
            } else {
                2.0
            }
        }
        _ => {
            if marker < 0.5 {
                6.0
            } else if age < 0.5 {
                8.0
            } else {
                7.0
            }
        }
    }
}

pub const HETEROGENEOUS_NOISE_SD: f64 = 0.5;

/// Longitudinal-style continuous data mixing two partition schemes.
///
/// Each subject belongs to one of two latent groups with equal probability and
/// carries a subject-level `sex` covariate that the outcome ignores. Each entry
/// has its own `age` (sorted within subject), `marker` and pure-noise `noise`.
/// Covariates that drive the outcome vary within subject, so a tree cannot
/// single out subjects through them.
pub fn generate_heterogeneous_regression(
    n_subjects: usize,
    entries_per_subject: usize,
    seed: u64,
) -> Result<Dataset> {
    generate_heterogeneous_with_groups(n_subjects, entries_per_subject, seed).map(|(d, _)| d)
}

pub fn generate_heterogeneous_with_groups(
    n_subjects: usize,
    entries_per_subject: usize,
    seed: u64,
) -> Result<(Dataset, GroupLabels)> {
    if n_subjects == 0 || entries_per_subject == 0 {
        return Err(BetError::InvalidConfig("positive sizes required".into()));
    }
    let mut rng = rng::stream(seed, Stream::Data);
    let noise = Normal::new(0.0, HETEROGENEOUS_NOISE_SD).expect("valid normal");
    let n = n_subjects * entries_per_subject;
    let mut columns = (0..4).map(|_| Vec::with_capacity(n)).collect::<Vec<_>>();
    let mut y = Vec::with_capacity(n);
    let mut subjects = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for s in 0..n_subjects {
        let group: u8 = rng.random_range(0..2);
        let sex = f64::from(rng.random_range(0..2u8));
        let mut ages: Vec<f64> = (0..entries_per_subject).map(|_| rng.random()).collect();
        ages.sort_by(f64::total_cmp);
        for age in ages {
            let marker: f64 = rng.random();
            columns[0].push(age);
            columns[1].push(marker);
            columns[2].push(sex);
            columns[3].push(rng.random());
            y.push(heterogeneous_mean(group, age, marker) + noise.sample(&mut rng));
            subjects.push(s as u64);
            groups.push(group);
        }
    }
    let names = ["age", "marker", "sex", "noise"].map(String::from).to_vec();
    let data =
        Dataset::new(columns, y, OutcomeKind::Continuous, names, "y")?.with_subjects(subjects)?;
    Ok((data, groups))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitBy {
    Rows,
    Subjects,
}

/// Random disjoint train/test partition. The training part receives
/// `round(fraction * units)` rows or subjects (at least one unit on each
/// side); both parts keep the original row order.
pub fn split_train_test(
    data: &Dataset,
    fraction: f64,
    seed: u64,
    by: SplitBy,
) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(BetError::InvalidConfig(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let (train_rows, test_rows) = split_indices(data, fraction, seed, by)?;
    Ok((data.subset(&train_rows)?, data.subset(&test_rows)?))
}

/// Row indices of the train and test parts, each sorted.
pub fn split_indices(
    data: &Dataset,
    fraction: f64,
    seed: u64,
    by: SplitBy,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = rng::stream(seed, Stream::Split);
    let take = |units: usize| ((fraction * units as f64).round() as usize).clamp(1, units - 1);
    let n = data.n_rows();
    let mut in_train = vec![false; n];
    match by {
        SplitBy::Rows => {
            if n < 2 {
                return Err(BetError::TooFewRows {
                    rows: n,
                    required: 2,
                });
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for &i in &order[..take(n)] {
                in_train[i] = true;
            }
        }
        SplitBy::Subjects => {
            let subjects = data.subjects().ok_or_else(|| {
                BetError::InvalidConfig("subject split requires subject ids".into())
            })?;
            // First-appearance order keeps the shuffle independent of id values.
            let mut index: HashMap<u64, usize> = HashMap::new();
            let mut ids = Vec::new();
            for &s in subjects {
                index.entry(s).or_insert_with(|| {
                    ids.push(s);
                    ids.len() - 1
                });
            }
            if ids.len() < 2 {
                return Err(BetError::InvalidData(
                    "subject split requires at least two subjects".into(),
                ));
            }
            ids.shuffle(&mut rng);
            let chosen: HashSet<u64> = ids[..take(ids.len())].iter().copied().collect();
            for (i, s) in subjects.iter().enumerate() {
                in_train[i] = chosen.contains(s);
            }
        }
    }
    let train = (0..n).filter(|&i| in_train[i]).collect();
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Ok((train, test))
}
