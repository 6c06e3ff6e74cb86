//! Heap-indexed binary decision trees.
//!
//! Node `k` has children `2k+1` (left) and `2k+2` (right); the root is node 0.
//! An observation goes left when `x[var] < threshold` and right otherwise, so
//! ties route right.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, OutcomeKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("the root node has no parent")]
    RootHasNoParent,
    #[error("node {0} does not exist")]
    MissingNode(usize),
    #[error("node {0} is not a leaf")]
    NotALeaf(usize),
    #[error("node {0} is not a split whose children are both leaves")]
    NotATwig(usize),
    #[error("malformed tree: {0}")]
    Malformed(String),
}

#[inline]
pub fn child_indices(k: usize) -> (usize, usize) {
    (2 * k + 1, 2 * k + 2)
}

pub fn parent_index(k: usize) -> Result<usize, TreeError> {
    if k == 0 {
        Err(TreeError::RootHasNoParent)
    } else {
        Ok((k - 1) / 2)
    }
}

/// `floor(log2(k + 1))`.
#[inline]
pub fn depth(k: usize) -> u32 {
    (k + 1).ilog2()
}

/// Leaf distribution parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafParams {
    Gaussian { mean: f64, variance: f64 },
    Categorical { probs: Vec<f64> },
}

/// Sufficient statistics of the outcomes routed to one leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafStats {
    /// Count, running mean and sum of squared deviations (Welford).
    Continuous {
        n: usize,
        mean: f64,
        sse: f64,
    },
    Categorical {
        counts: Vec<usize>,
    },
}

impl LeafStats {
    pub fn empty(kind: OutcomeKind) -> Self {
        match kind {
            OutcomeKind::Continuous => LeafStats::Continuous {
                n: 0,
                mean: 0.0,
                sse: 0.0,
            },
            OutcomeKind::Categorical(k) => LeafStats::Categorical { counts: vec![0; k] },
        }
    }

    pub fn from_rows(data: &Dataset, rows: &[usize]) -> Self {
        let mut s = Self::empty(data.kind());
        for &i in rows {
            s.push(data.outcome(i));
        }
        s
    }

    #[inline]
    pub fn push(&mut self, y: f64) {
        match self {
            LeafStats::Continuous { n, mean, sse } => {
                *n += 1;
                let d = y - *mean;
                *mean += d / *n as f64;
                *sse += d * (y - *mean);
            }
            LeafStats::Categorical { counts } => counts[y as usize] += 1,
        }
    }

    /// Inverse of [`push`](Self::push).
    pub fn remove(&mut self, y: f64) {
        match self {
            LeafStats::Continuous { n, mean, sse } => {
                assert!(*n > 0, "remove from empty leaf statistics");
                if *n == 1 {
                    *n = 0;
                    *mean = 0.0;
                    *sse = 0.0;
                    return;
                }
                let old_mean = (*mean * *n as f64 - y) / (*n - 1) as f64;
                *sse -= (y - old_mean) * (y - *mean);
                if *sse < 0.0 {
                    *sse = 0.0;
                }
                *mean = old_mean;
                *n -= 1;
            }
            LeafStats::Categorical { counts } => {
                let c = &mut counts[y as usize];
                assert!(*c > 0, "remove of absent label");
                *c -= 1;
            }
        }
    }

    pub fn count(&self) -> usize {
        match self {
            LeafStats::Continuous { n, .. } => *n,
            LeafStats::Categorical { counts } => counts.iter().sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        var: usize,
        threshold: f64,
    },
    Leaf {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<LeafParams>,
        /// Statistics of the rows that reached the leaf when it was last fitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stats: Option<LeafStats>,
    },
}

impl Node {
    pub fn empty_leaf() -> Self {
        Node::Leaf {
            params: None,
            stats: None,
        }
    }
}

/// A binary decision tree stored as a sparse index-to-node map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: BTreeMap<usize, Node>,
}

impl Default for Tree {
    fn default() -> Self {
        Self::root_only()
    }
}

impl Tree {
    pub fn root_only() -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(0, Node::empty_leaf());
        Self { nodes }
    }

    /// Builds a tree from explicit nodes, checking structural invariants.
    pub fn from_nodes(nodes: BTreeMap<usize, Node>) -> Result<Self, TreeError> {
        let tree = Self { nodes };
        tree.check()?;
        Ok(tree)
    }

    pub fn nodes(&self) -> &BTreeMap<usize, Node> {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> Option<&Node> {
        self.nodes.get(&k)
    }

    pub fn contains(&self, k: usize) -> bool {
        self.nodes.contains_key(&k)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_root_only(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn is_leaf(&self, k: usize) -> bool {
        matches!(self.nodes.get(&k), Some(Node::Leaf { .. }))
    }

    pub fn split(&self, k: usize) -> Option<(usize, f64)> {
        match self.nodes.get(&k) {
            Some(Node::Split { var, threshold }) => Some((*var, *threshold)),
            _ => None,
        }
    }

    /// A split node whose two children are leaves.
    pub fn is_twig(&self, k: usize) -> bool {
        let (l, r) = child_indices(k);
        self.split(k).is_some() && self.is_leaf(l) && self.is_leaf(r)
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .filter(|(_, n)| matches!(n, Node::Leaf { .. }))
            .map(|(&k, _)| k)
    }

    pub fn interior(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.nodes.iter().filter_map(|(&k, n)| match n {
            Node::Split { var, threshold } => Some((k, *var, *threshold)),
            Node::Leaf { .. } => None,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.keys().map(|&k| depth(k)).max().unwrap_or(0)
    }

    /// Smallest node index strictly greater than `k`.
    pub fn next_index(&self, k: usize) -> Option<usize> {
        self.nodes.range(k + 1..).next().map(|(&i, _)| i)
    }

    /// Routes from node `start` down to a leaf, reading covariates through `x`.
    #[inline]
    pub fn route_from<F: Fn(usize) -> f64>(&self, start: usize, x: F) -> usize {
        let mut k = start;
        while let Some(Node::Split { var, threshold }) = self.nodes.get(&k) {
            k = if x(*var) < *threshold {
                2 * k + 1
            } else {
                2 * k + 2
            };
        }
        k
    }

    pub fn route(&self, x: &[f64]) -> usize {
        self.route_from(0, |c| x[c])
    }

    #[inline]
    pub fn route_row(&self, data: &Dataset, row: usize) -> usize {
        self.route_from(0, |c| data.value(row, c))
    }

    /// Routes `rows` and accumulates per-leaf statistics. Every leaf appears in
    /// the result, with zero statistics when no row reaches it.
    pub fn leaf_partition(&self, data: &Dataset, rows: &[usize]) -> BTreeMap<usize, LeafStats> {
        self.partition_from(0, data, rows)
    }

    /// As [`leaf_partition`](Self::leaf_partition) for the subtree rooted at `start`.
    pub fn partition_from(
        &self,
        start: usize,
        data: &Dataset,
        rows: &[usize],
    ) -> BTreeMap<usize, LeafStats> {
        let mut out: BTreeMap<usize, LeafStats> = self
            .subtree_leaves(start)
            .into_iter()
            .map(|k| (k, LeafStats::empty(data.kind())))
            .collect();
        for &i in rows {
            let leaf = self.route_from(start, |c| data.value(i, c));
            if let Some(s) = out.get_mut(&leaf) {
                s.push(data.outcome(i));
            }
        }
        out
    }

    /// Rows of `rows` grouped by the leaf they reach.
    pub fn leaf_rows(&self, data: &Dataset, rows: &[usize]) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = self.leaves().map(|k| (k, Vec::new())).collect();
        for &i in rows {
            out.entry(self.route_row(data, i)).or_default().push(i);
        }
        out
    }

    /// The subset of `rows` that passes through node `k`.
    pub fn rows_at(&self, k: usize, data: &Dataset, rows: &[usize]) -> Vec<usize> {
        let path = path_to(k);
        let mut current: Vec<usize> = rows.to_vec();
        for w in path.windows(2) {
            let (node, next) = (w[0], w[1]);
            let Some((var, threshold)) = self.split(node) else {
                return Vec::new();
            };
            let go_left = next == 2 * node + 1;
            current.retain(|&i| (data.value(i, var) < threshold) == go_left);
        }
        current
    }

    /// Indices of all nodes in the subtree rooted at `k` (including `k`).
    pub fn subtree(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![k];
        while let Some(j) = stack.pop() {
            if !self.nodes.contains_key(&j) {
                continue;
            }
            out.push(j);
            if self.split(j).is_some() {
                let (l, r) = child_indices(j);
                stack.push(r);
                stack.push(l);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn subtree_leaves(&self, k: usize) -> Vec<usize> {
        self.subtree(k)
            .into_iter()
            .filter(|&j| self.is_leaf(j))
            .collect()
    }

    /// Turns leaf `k` into a split on `(var, threshold)` with two empty leaves.
    pub fn grow(&mut self, k: usize, var: usize, threshold: f64) -> Result<(), TreeError> {
        match self.nodes.get(&k) {
            None => return Err(TreeError::MissingNode(k)),
            Some(Node::Split { .. }) => return Err(TreeError::NotALeaf(k)),
            Some(Node::Leaf { .. }) => {}
        }
        let (l, r) = child_indices(k);
        self.nodes.insert(k, Node::Split { var, threshold });
        self.nodes.insert(l, Node::empty_leaf());
        self.nodes.insert(r, Node::empty_leaf());
        Ok(())
    }

    /// Removes the two leaf children of `k`, making `k` a leaf again.
    pub fn prune(&mut self, k: usize) -> Result<(), TreeError> {
        if !self.nodes.contains_key(&k) {
            return Err(TreeError::MissingNode(k));
        }
        if !self.is_twig(k) {
            return Err(TreeError::NotATwig(k));
        }
        let (l, r) = child_indices(k);
        self.nodes.remove(&l);
        self.nodes.remove(&r);
        self.nodes.insert(k, Node::empty_leaf());
        Ok(())
    }

    /// Removes everything below `k` and makes `k` an empty leaf.
    pub fn collapse(&mut self, k: usize) {
        for j in self.subtree(k) {
            if j != k {
                self.nodes.remove(&j);
            }
        }
        if self.nodes.contains_key(&k) {
            self.nodes.insert(k, Node::empty_leaf());
        }
    }

    /// Replaces the split rule of interior node `k`.
    pub fn set_split(&mut self, k: usize, var: usize, threshold: f64) -> Result<(), TreeError> {
        match self.nodes.get_mut(&k) {
            Some(Node::Split {
                var: v,
                threshold: t,
            }) => {
                *v = var;
                *t = threshold;
                Ok(())
            }
            Some(Node::Leaf { .. }) => Err(TreeError::NotATwig(k)),
            None => Err(TreeError::MissingNode(k)),
        }
    }

    pub fn set_leaf(
        &mut self,
        k: usize,
        params: Option<LeafParams>,
        stats: Option<LeafStats>,
    ) -> Result<(), TreeError> {
        match self.nodes.get_mut(&k) {
            Some(node @ Node::Leaf { .. }) => {
                *node = Node::Leaf { params, stats };
                Ok(())
            }
            Some(Node::Split { .. }) => Err(TreeError::NotALeaf(k)),
            None => Err(TreeError::MissingNode(k)),
        }
    }

    pub fn leaf_params(&self, k: usize) -> Option<&LeafParams> {
        match self.nodes.get(&k) {
            Some(Node::Leaf { params, .. }) => params.as_ref(),
            _ => None,
        }
    }

    pub fn leaf_stats(&self, k: usize) -> Option<&LeafStats> {
        match self.nodes.get(&k) {
            Some(Node::Leaf { stats, .. }) => stats.as_ref(),
            _ => None,
        }
    }

    /// Number of interior nodes splitting on each of `m` covariates.
    pub fn covariate_usage(&self, m: usize) -> Vec<usize> {
        let mut usage = vec![0; m];
        for (_, var, _) in self.interior() {
            usage[var] += 1;
        }
        usage
    }

    /// Verifies heap closure: the root exists, every non-root node has a split
    /// parent, and every split has both children.
    pub fn check(&self) -> Result<(), TreeError> {
        if !self.nodes.contains_key(&0) {
            return Err(TreeError::Malformed("missing root".into()));
        }
        for (&k, node) in &self.nodes {
            if k > 0 {
                let p = (k - 1) / 2;
                if self.split(p).is_none() {
                    return Err(TreeError::Malformed(format!(
                        "node {k} has no split parent"
                    )));
                }
            }
            if let Node::Split { threshold, .. } = node {
                let (l, r) = child_indices(k);
                if !self.contains(l) || !self.contains(r) {
                    return Err(TreeError::Malformed(format!("split {k} lacks children")));
                }
                if !threshold.is_finite() {
                    return Err(TreeError::Malformed(format!("split {k} threshold")));
                }
            }
        }
        Ok(())
    }

    /// Indented text rendering, one node per line.
    pub fn render_text(&self, names: &[String]) -> String {
        let mut out = String::new();
        for k in self.preorder() {
            let indent = "  ".repeat(depth(k) as usize);
            match &self.nodes[&k] {
                Node::Split { var, threshold } => {
                    let _ = writeln!(
                        out,
                        "{indent}[{k}] {} < {threshold:.4}",
                        var_name(names, *var)
                    );
                }
                Node::Leaf { params, stats } => {
                    let _ = writeln!(out, "{indent}[{k}] leaf {}", leaf_label(params, stats));
                }
            }
        }
        out
    }

    /// Graphviz DOT export.
    pub fn to_dot(&self, names: &[String], title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{}\" {{", escape(title));
        let _ = writeln!(out, "  node [fontname=\"Helvetica\"];");
        for (&k, node) in &self.nodes {
            match node {
                Node::Split { var, threshold } => {
                    let _ = writeln!(
                        out,
                        "  n{k} [shape=ellipse, label=\"{} < {threshold:.4}\"];",
                        escape(&var_name(names, *var))
                    );
                }
                Node::Leaf { params, stats } => {
                    let _ = writeln!(
                        out,
                        "  n{k} [shape=box, label=\"{}\"];",
                        escape(&leaf_label(params, stats))
                    );
                }
            }
        }
        for (k, _, _) in self.interior() {
            let (l, r) = child_indices(k);
            let _ = writeln!(out, "  n{k} -> n{l} [label=\"yes\"];");
            let _ = writeln!(out, "  n{k} -> n{r} [label=\"no\"];");
        }
        out.push_str("}\n");
        out
    }

    fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(k) = stack.pop() {
            if !self.nodes.contains_key(&k) {
                continue;
            }
            out.push(k);
            if self.split(k).is_some() {
                let (l, r) = child_indices(k);
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }
}

/// Node indices from the root down to `k`.
fn path_to(k: usize) -> Vec<usize> {
    let mut path = vec![k];
    let mut j = k;
    while j > 0 {
        j = (j - 1) / 2;
        path.push(j);
    }
    path.reverse();
    path
}

fn var_name(names: &[String], var: usize) -> String {
    names.get(var).cloned().unwrap_or_else(|| format!("x{var}"))
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn leaf_label(params: &Option<LeafParams>, stats: &Option<LeafStats>) -> String {
    let mut parts = Vec::new();
    if let Some(s) = stats {
        parts.push(format!("n={}", s.count()));
        if let LeafStats::Continuous { mean, .. } = s {
            parts.push(format!("ybar={mean:.3}"));
        }
    }
    match params {
        Some(LeafParams::Gaussian { mean, variance }) => {
            parts.push(format!("mu={mean:.3} sd={:.3}", variance.sqrt()));
        }
        Some(LeafParams::Categorical { probs }) => {
            let p: Vec<String> = probs.iter().map(|p| format!("{p:.3}")).collect();
            parts.push(format!("p=({})", p.join(",")));
        }
        None => {}
    }
    parts.join(" ")
}
