use serde::{Deserialize, Serialize};

use crate::numerics::{Points, RngStream};
use crate::regressors::{check_xy, Predictor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_estimators: usize,
    /// `None` grows until the other limits stop it.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 100,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 || self.min_samples_split == 0 || self.min_samples_leaf == 0 {
            return Err(Error::InvalidParameter(
                "forest counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
        samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A CART tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone)]
pub struct FittedForest {
    trees: Vec<Tree>,
    params: ForestParams,
    seed: u64,
    dim: usize,
}

impl FittedForest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Bagged exact-CART regression forest. Tree `t` bootstraps with stream
/// `RngStream::new(seed, t)` over the rows in canonical (sorted) order, so the
/// fit does not depend on the order rows are supplied in.
pub fn forest_fit(x: &Points, y: &[f64], params: &ForestParams, seed: u64) -> Result<FittedForest> {
    check_xy(x, y)?;
    params.validate()?;
    if y.is_empty() {
        return Err(Error::EmptyData("no rows for the forest".into()));
    }
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
    });
    let xs = x.select_rows(&order);
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let trees = (0..params.n_estimators)
        .map(|t| {
            let sample: Vec<usize> = if params.bootstrap {
                let mut rng = RngStream::new(seed, t as u64);
                (0..n).map(|_| rng.below(n)).collect()
            } else {
                (0..n).collect()
            };
            grow(&xs, &ys, sample, params)
        })
        .collect();
    Ok(FittedForest {
        trees,
        params: params.clone(),
        seed,
        dim: x.dim(),
    })
}

struct Builder<'a> {
    x: &'a Points,
    y: &'a [f64],
    params: &'a ForestParams,
    nodes: Vec<Node>,
}

fn grow(x: &Points, y: &[f64], sample: Vec<usize>, params: &ForestParams) -> Tree {
    let mut b = Builder {
        x,
        y,
        params,
        nodes: Vec::new(),
    };
    b.build(sample, 0);
    Tree { nodes: b.nodes }
}

/// Best split of `idx` as `(feature, threshold)`, maximizing the reduction in
/// summed squared error; earlier features and lower thresholds win ties.
pub(crate) fn best_split(
    x: &Points,
    y: &[f64],
    idx: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let n = idx.len();
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let mut best: Option<(usize, f64, f64)> = None;
    let mut sorted = idx.to_vec();
    for f in 0..x.dim() {
        sorted.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
        let mut left = 0.0;
        for k in 0..n - 1 {
            left += y[sorted[k]];
            let (lo, hi) = (x.get(sorted[k], f), x.get(sorted[k + 1], f));
            let n_left = k + 1;
            if lo == hi || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let right = total - left;
            // SSE reduction up to the constant Σy² − total²/n
            let score = left * left / n_left as f64 + right * right / (n - n_left) as f64
                - total * total / n as f64;
            let threshold = 0.5 * (lo + hi);
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((f, threshold, score));
            }
        }
    }
    best
}

impl Builder<'_> {
    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let n = idx.len();
        let value = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        self.nodes.push(Node::Leaf { value, samples: n });

        let stop = self.params.max_depth.is_some_and(|d| depth >= d)
            || n < self.params.min_samples_split
            || n < 2 * self.params.min_samples_leaf
            || idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        if stop {
            return id;
        }
        let Some((feature, threshold, score)) =
            best_split(self.x, self.y, &idx, self.params.min_samples_leaf)
        else {
            return id;
        };
        if !(score > 0.0) {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.x.get(i, feature) <= threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

impl Predictor for FittedForest {
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        if x.dim() != self.dim && !x.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "predicting on dimension {}, trained on {}",
                x.dim(),
                self.dim
            )));
        }
        let t = self.trees.len() as f64;
        Ok(x
            .rows()
            .map(|r| self.trees.iter().map(|tree| tree.predict_row(r)).sum::<f64>() / t)
            .collect())
    }
}
