//! Best-first classification trees with a split budget.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training, ModelError};

/// Minimum impurity decrease for a split to count as an improvement.
pub const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Twoing,
    Deviance,
}

impl FromStr for Criterion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gini" | "gdi" => Ok(Criterion::Gini),
            "twoing" => Ok(Criterion::Twoing),
            "deviance" | "entropy" => Ok(Criterion::Deviance),
            _ => Err(format!("unknown split criterion `{s}` (expected gini, twoing or deviance)")),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Gini => "gini",
            Criterion::Twoing => "twoing",
            Criterion::Deviance => "deviance",
        })
    }
}

fn impurity(criterion: Criterion, counts: &[f64], n: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    match criterion {
        Criterion::Gini | Criterion::Twoing => counts.iter().map(|&c| c / n * (1.0 - c / n)).sum(),
        Criterion::Deviance => counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).ln())
            .sum(),
    }
}

/// Split quality for one node: impurity decrease, or the twoing value.
fn split_score(criterion: Criterion, parent: &[f64], left: &[f64], n: f64, nl: f64) -> f64 {
    let nr = n - nl;
    match criterion {
        Criterion::Twoing => {
            let s: f64 = parent
                .iter()
                .zip(left)
                .map(|(&p, &l)| (l / nl - (p - l) / nr).abs())
                .sum();
            nl * nr / (n * n) * s * s / 4.0
        }
        _ => {
            let right: Vec<f64> = parent.iter().zip(left).map(|(p, l)| p - l).collect();
            impurity(criterion, parent, n) - (nl * impurity(criterion, left, nl) + nr * impurity(criterion, &right, nr)) / n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub criterion: Criterion,
    pub max_splits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        probs: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub criterion: Criterion,
    pub max_splits: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl TreeModel {
    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.len() - self.n_splits()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Leaf distribution reached by `row`; `x <= threshold` goes left.
    pub fn leaf_probs(&self, row: ArrayView1<f64>) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { probs } => return probs,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Features used at any split, sorted.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

/// Per-node feature subsampling used by forests.
pub(crate) struct FeatureSampler<'a> {
    pub m: usize,
    pub rng: &'a mut ChaCha8Rng,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Entry {
    improving: bool,
    gain: f64,
    node: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // Max-heap: improving splits first, then larger gain, then older node.
    fn cmp(&self, other: &Self) -> Ordering {
        self.improving
            .cmp(&other.improving)
            .then(self.gain.total_cmp(&other.gain))
            .then(other.node.cmp(&self.node))
    }
}

fn class_counts(y: &[usize], rows: &[usize], k: usize) -> Vec<f64> {
    let mut c = vec![0.0; k];
    for &r in rows {
        c[y[r]] += 1.0;
    }
    c
}

fn best_split(
    x: ArrayView2<f64>,
    y: &[usize],
    rows: &[usize],
    counts: &[f64],
    criterion: Criterion,
    total: f64,
    sampler: &mut Option<FeatureSampler>,
) -> Option<Candidate> {
    let n = rows.len() as f64;
    if counts.iter().filter(|&&c| c > 0.0).count() <= 1 {
        return None;
    }
    let p = x.ncols();
    let features: Vec<usize> = match sampler {
        Some(s) if s.m < p => {
            let mut f = index::sample(s.rng, p, s.m).into_vec();
            f.sort_unstable();
            f
        }
        _ => (0..p).collect(),
    };
    let k = counts.len();
    let mut best: Option<Candidate> = None;
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
    let mut left = vec![0.0; k];
    for f in features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (x[[r, f]], y[r])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        left.iter_mut().for_each(|c| *c = 0.0);
        for i in 0..pairs.len() - 1 {
            left[pairs[i].1] += 1.0;
            let (a, b) = (pairs[i].0, pairs[i + 1].0);
            if !(a < b) {
                continue;
            }
            let score = split_score(criterion, counts, &left, n, (i + 1) as f64);
            if best.is_none_or(|c| score > c.gain) {
                let mid = 0.5 * (a + b);
                let threshold = if mid < b && mid >= a { mid } else { a };
                best = Some(Candidate {
                    feature: f,
                    threshold,
                    gain: score,
                });
            }
        }
    }
    best.map(|mut c| {
        c.gain *= n / total;
        c
    })
}

/// Grow a tree on `rows` (indices into `x`, repeats allowed).
pub(crate) fn grow(
    x: ArrayView2<f64>,
    y: &[usize],
    rows: Vec<usize>,
    n_classes: usize,
    params: &TreeParams,
    mut sampler: Option<FeatureSampler>,
) -> TreeModel {
    let total = rows.len() as f64;
    let root_counts = class_counts(y, &rows, n_classes);
    let probs = |c: &[f64]| {
        let n: f64 = c.iter().sum();
        c.iter().map(|v| v / n).collect::<Vec<f64>>()
    };
    let mut nodes = vec![Node::Leaf {
        probs: probs(&root_counts),
    }];
    let mut pending: Vec<Option<(Vec<usize>, Candidate)>> = vec![None];
    let mut heap = BinaryHeap::new();
    let consider = |node: usize,
                        rows: Vec<usize>,
                        counts: &[f64],
                        pending: &mut Vec<Option<(Vec<usize>, Candidate)>>,
                        heap: &mut BinaryHeap<Entry>,
                        sampler: &mut Option<FeatureSampler>| {
        if params.max_splits == 0 {
            return;
        }
        if let Some(c) = best_split(x, y, &rows, counts, params.criterion, total, sampler) {
            heap.push(Entry {
                improving: c.gain > MIN_GAIN,
                gain: c.gain,
                node,
            });
            pending[node] = Some((rows, c));
        }
    };
    consider(0, rows, &root_counts, &mut pending, &mut heap, &mut sampler);
    let mut splits = 0;
    while splits < params.max_splits {
        let Some(entry) = heap.pop() else { break };
        let (rows, cand) = pending[entry.node].take().expect("queued node has a candidate");
        let (lrows, rrows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| x[[r, cand.feature]] <= cand.threshold);
        let (lc, rc) = (class_counts(y, &lrows, n_classes), class_counts(y, &rrows, n_classes));
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { probs: probs(&lc) });
        nodes.push(Node::Leaf { probs: probs(&rc) });
        pending.push(None);
        pending.push(None);
        nodes[entry.node] = Node::Split {
            feature: cand.feature,
            threshold: cand.threshold,
            left: li,
            right: ri,
        };
        splits += 1;
        consider(li, lrows, &lc, &mut pending, &mut heap, &mut sampler);
        consider(ri, rrows, &rc, &mut pending, &mut heap, &mut sampler);
    }
    TreeModel {
        criterion: params.criterion,
        max_splits: params.max_splits,
        n_features: x.ncols(),
        n_classes,
        nodes,
    }
}

/// Fit a tree on every row of `x`.
pub fn dt_fit(x: ArrayView2<f64>, y: &[usize], n_classes: usize, params: &TreeParams) -> Result<TreeModel, ModelError> {
    check_training(x, y, n_classes)?;
    Ok(grow(x, y, (0..x.nrows()).collect(), n_classes, params, None))
}
