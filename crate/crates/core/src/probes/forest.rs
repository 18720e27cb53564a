//! Random forest of fully grown CART trees with Gini impurity.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::par::Execution;
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features examined per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        positive: bool,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Best split of a node: feature, threshold, weighted child impurity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub impurity: f64,
}

pub fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

/// Column-major feature ranks: `ranks[f][i]` indexes the sorted distinct
/// values `values[f]` of feature `f`.
#[derive(Debug, Clone)]
pub struct Columns {
    ranks: Vec<Vec<u32>>,
    values: Vec<Vec<f64>>,
}

impl Columns {
    pub fn new(x: ArrayView2<f64>) -> Self {
        let mut ranks = Vec::with_capacity(x.ncols());
        let mut values = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let mut distinct: Vec<f64> = col.to_vec();
            distinct.sort_unstable_by(f64::total_cmp);
            distinct.dedup();
            let r = col
                .iter()
                .map(|v| distinct.partition_point(|d| d.total_cmp(v).is_lt()) as u32)
                .collect();
            ranks.push(r);
            values.push(distinct);
        }
        Self { ranks, values }
    }

    pub fn features(&self) -> usize {
        self.ranks.len()
    }
}

/// Best split of one feature as (rank of the last value going left,
/// threshold, impurity), or `None` if the feature is constant.
fn best_threshold(
    cols: &Columns,
    y: &[bool],
    samples: &[usize],
    feature: usize,
    keys: &mut Vec<u32>,
) -> Option<(u32, f64, f64)> {
    let ranks = &cols.ranks[feature];
    keys.clear();
    keys.extend(samples.iter().map(|&i| ranks[i] << 1 | y[i] as u32));
    keys.sort_unstable();
    let n = keys.len();
    if keys[0] >> 1 == keys[n - 1] >> 1 {
        return None;
    }
    let total_pos = keys.iter().filter(|&&k| k & 1 == 1).count();
    let mut left_pos = 0;
    let mut best: Option<(u32, f64)> = None;
    for k in 1..n {
        left_pos += (keys[k - 1] & 1) as usize;
        let (prev, next) = (keys[k - 1] >> 1, keys[k] >> 1);
        if prev == next {
            continue;
        }
        let impurity = (k as f64 * gini(left_pos, k) + (n - k) as f64 * gini(total_pos - left_pos, n - k)) / n as f64;
        if best.is_none_or(|(_, b)| impurity < b) {
            best = Some((prev, impurity));
        }
    }
    best.map(|(rank, impurity)| {
        let vals = &cols.values[feature];
        let (lo, hi) = (vals[rank as usize], vals[rank as usize + 1]);
        let mut threshold = lo + (hi - lo) / 2.0;
        if threshold >= hi {
            threshold = lo;
        }
        (rank, threshold, impurity)
    })
}

/// Examines features in `order`, counting only non-constant ones, until
/// `max_features` of them were seen; returns the lowest-impurity split.
pub fn choose_split(
    cols: &Columns,
    y: &[bool],
    samples: &[usize],
    order: &[usize],
    max_features: usize,
) -> Option<SplitChoice> {
    choose(cols, y, samples, order, max_features, &mut Vec::new()).map(|(c, _)| c)
}

fn choose(
    cols: &Columns,
    y: &[bool],
    samples: &[usize],
    order: &[usize],
    max_features: usize,
    keys: &mut Vec<u32>,
) -> Option<(SplitChoice, u32)> {
    let mut best: Option<(SplitChoice, u32)> = None;
    let mut seen = 0;
    for &f in order {
        if seen >= max_features {
            break;
        }
        let Some((rank, threshold, impurity)) = best_threshold(cols, y, samples, f, keys) else {
            continue;
        };
        seen += 1;
        if best.is_none_or(|(b, _)| impurity < b.impurity) {
            best = Some((
                SplitChoice {
                    feature: f,
                    threshold,
                    impurity,
                },
                rank,
            ));
        }
    }
    best
}

fn majority(y: &[bool], samples: &[usize]) -> bool {
    let pos = samples.iter().filter(|&&i| y[i]).count();
    2 * pos >= samples.len()
}

impl Tree {
    pub fn grow(cols: &Columns, y: &[bool], samples: Vec<usize>, max_features: usize, rng: &mut SeededRng) -> Self {
        let d = cols.features();
        let mut keys = Vec::with_capacity(samples.len());
        let mut nodes = vec![Node::Leaf { positive: true }];
        let mut stack = vec![(0usize, samples)];
        let mut order: Vec<usize> = (0..d).collect();
        while let Some((slot, samples)) = stack.pop() {
            let pos = samples.iter().filter(|&&i| y[i]).count();
            if pos == 0 || pos == samples.len() || samples.len() < 2 {
                nodes[slot] = Node::Leaf {
                    positive: majority(y, &samples),
                };
                continue;
            }
            rng.shuffle(&mut order);
            let Some((split, rank)) = choose(cols, y, &samples, &order, max_features, &mut keys) else {
                nodes[slot] = Node::Leaf {
                    positive: majority(y, &samples),
                };
                continue;
            };
            let ranks = &cols.ranks[split.feature];
            let (left, right): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| ranks[i] <= rank);
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { positive: true });
            nodes.push(Node::Leaf { positive: true });
            nodes[slot] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: l,
                right: r,
            };
            stack.push((r, right));
            stack.push((l, left));
        }
        Self { nodes }
    }

    pub fn predict_row(&self, row: impl Fn(usize) -> f64) -> bool {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { positive } => return positive,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row(feature) <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], k: usize) -> usize {
            match nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
}

pub fn default_max_features(d: usize) -> usize {
    ((d as f64).sqrt().floor() as usize).max(1)
}

impl RandomForest {
    pub fn fit(exec: Execution, x: ArrayView2<f64>, y: &[bool], params: &ForestParams) -> Self {
        let n = x.nrows();
        let mtry = params
            .max_features
            .unwrap_or_else(|| default_max_features(x.ncols()))
            .clamp(1, x.ncols().max(1));
        let cols = Columns::new(x);
        let trees = exec.map_range(params.n_trees, |t| {
            let mut rng = SeededRng::new(derive_seed(params.seed, &[t as u64]));
            let samples = if params.bootstrap {
                (0..n).map(|_| rng.index(n)).collect()
            } else {
                (0..n).collect()
            };
            Tree::grow(&cols, y, samples, mtry, &mut rng)
        });
        Self { trees }
    }

    /// Fraction of trees voting POSITIVE, per row.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let k = self.trees.len().max(1) as f64;
        x.rows()
            .into_iter()
            .map(|row| {
                let votes = self.trees.iter().filter(|t| t.predict_row(|f| row[f])).count();
                votes as f64 / k
            })
            .collect()
    }
}
