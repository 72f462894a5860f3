//! Gradient-boosted regression trees for squared loss.
//!
//! Histogram splits over per-feature cut points, best-first growth bounded by
//! depth and leaf count, leaf values `sum(w r) / (sum(w) + l2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub max_leaves: usize,
    pub learning_rate: f64,
    pub rounds: usize,
    pub min_leaf_weight: f64,
    pub l2: f64,
    pub max_bins: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 4,
            max_leaves: 16,
            learning_rate: 0.1,
            rounds: 100,
            min_leaf_weight: 20.0,
            l2: 0.0,
            max_bins: 64,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 || self.rounds < 1 || self.max_leaves < 2 || self.max_bins < 2 {
            return Err(Error::invalid(
                "boosted trees need depth >= 1, rounds >= 1, leaves >= 2, bins >= 2",
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.min_leaf_weight >= 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::invalid(
                "boosted trees need learning_rate > 0, min_leaf_weight >= 0, l2 >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        leaf: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    n_leaves: usize,
}

impl Tree {
    fn leaf_node(&self, x: &[f64]) -> (usize, f64) {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { value, leaf } => return (*leaf, *value),
            }
        }
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        self.leaf_node(x).0
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.leaf_node(x).1
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    /// Raw (unscaled) value of each leaf, indexed by leaf number.
    pub fn leaf_values(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_leaves];
        for n in &self.nodes {
            if let Node::Leaf { value, leaf } = n {
                out[*leaf] = *value;
            }
        }
        out
    }
}

/// Additive ensemble `base + learning_rate * sum_t tree_t(x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeEnsemble {
    base_score: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl TreeEnsemble {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn total_leaves(&self) -> usize {
        self.trees.iter().map(Tree::n_leaves).sum()
    }

    /// Fits on (already aggregated) rows with weights.
    pub(crate) fn fit(x: &[Vec<f64>], y: &[f64], w: &[f64], params: &TreeParams) -> Result<Self> {
        params.validate()?;
        let n = x.len();
        let dim = x.first().map_or(0, Vec::len);
        let total_w: f64 = w.iter().sum();
        if n == 0 || total_w <= 0.0 {
            return Err(Error::invalid("boosted trees need rows with positive weight"));
        }
        let base_score = w.iter().zip(y).map(|(wi, yi)| wi * yi).sum::<f64>() / total_w;

        let cuts: Vec<Vec<f64>> = (0..dim).map(|f| feature_cuts(x, f, params.max_bins)).collect();
        let bins: Vec<Vec<u16>> = (0..dim)
            .map(|f| {
                x.iter()
                    .map(|row| cuts[f].partition_point(|&c| c < row[f]) as u16)
                    .collect()
            })
            .collect();

        let mut pred = vec![base_score; n];
        let mut resid = vec![0.0; n];
        let mut trees = Vec::with_capacity(params.rounds);
        for _ in 0..params.rounds {
            for i in 0..n {
                resid[i] = y[i] - pred[i];
            }
            let grower = Grower {
                cuts: &cuts,
                bins: &bins,
                resid: &resid,
                w,
                params,
            };
            let (tree, leaf_of_row) = grower.grow();
            let values = tree.leaf_values();
            for i in 0..n {
                pred[i] += params.learning_rate * values[leaf_of_row[i]];
            }
            trees.push(tree);
        }
        Ok(TreeEnsemble {
            base_score,
            learning_rate: params.learning_rate,
            trees,
        })
    }
}

fn feature_cuts(x: &[Vec<f64>], f: usize, max_bins: usize) -> Vec<f64> {
    let mut u: Vec<f64> = x.iter().map(|r| r[f]).collect();
    u.sort_by(|a, b| a.partial_cmp(b).unwrap());
    u.dedup();
    if u.len() <= 1 {
        return Vec::new();
    }
    if u.len() <= max_bins {
        return u.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    }
    // evenly spaced over the distinct values
    let mut cuts: Vec<f64> = (1..max_bins)
        .map(|k| {
            let j = k * u.len() / max_bins;
            0.5 * (u[j - 1] + u[j])
        })
        .collect();
    cuts.dedup();
    cuts
}

struct Grower<'a> {
    cuts: &'a [Vec<f64>],
    bins: &'a [Vec<u16>],
    resid: &'a [f64],
    w: &'a [f64],
    params: &'a TreeParams,
}

struct Candidate {
    node: usize,
    rows: Vec<usize>,
    depth: usize,
    sum_r: f64,
    sum_w: f64,
    best: Option<SplitChoice>,
}

#[derive(Clone, Copy)]
struct SplitChoice {
    gain: f64,
    feature: usize,
    cut: usize,
}

impl Grower<'_> {
    fn score(&self, s: f64, w: f64) -> f64 {
        s * s / (w + self.params.l2)
    }

    fn best_split(&self, rows: &[usize], sum_r: f64, sum_w: f64) -> Option<SplitChoice> {
        let parent = self.score(sum_r, sum_w);
        let min_w = self.params.min_leaf_weight;
        let mut best: Option<SplitChoice> = None;
        for (f, cuts) in self.cuts.iter().enumerate() {
            if cuts.is_empty() {
                continue;
            }
            let nb = cuts.len() + 1;
            let mut hs = vec![0.0; nb];
            let mut hw = vec![0.0; nb];
            for &i in rows {
                let b = self.bins[f][i] as usize;
                hs[b] += self.w[i] * self.resid[i];
                hw[b] += self.w[i];
            }
            let (mut ls, mut lw) = (0.0, 0.0);
            for cut in 0..cuts.len() {
                ls += hs[cut];
                lw += hw[cut];
                let (rs, rw) = (sum_r - ls, sum_w - lw);
                if lw < min_w || rw < min_w || lw <= 0.0 || rw <= 0.0 {
                    continue;
                }
                let gain = self.score(ls, lw) + self.score(rs, rw) - parent;
                if gain > 1e-12 && best.map_or(true, |b| gain > b.gain) {
                    best = Some(SplitChoice { gain, feature: f, cut });
                }
            }
        }
        best
    }

    fn candidate(&self, node: usize, rows: Vec<usize>, depth: usize) -> Candidate {
        let sum_r = rows.iter().map(|&i| self.w[i] * self.resid[i]).sum();
        let sum_w = rows.iter().map(|&i| self.w[i]).sum();
        let best = if depth < self.params.max_depth {
            self.best_split(&rows, sum_r, sum_w)
        } else {
            None
        };
        Candidate {
            node,
            rows,
            depth,
            sum_r,
            sum_w,
            best,
        }
    }

    fn grow(&self) -> (Tree, Vec<usize>) {
        let n = self.resid.len();
        let mut nodes = vec![Node::Leaf { value: 0.0, leaf: 0 }];
        let mut open = vec![self.candidate(0, (0..n).collect(), 0)];
        let mut done: Vec<Candidate> = Vec::new();
        while open.len() + done.len() < self.params.max_leaves {
            let pick = open
                .iter()
                .enumerate()
                .filter_map(|(k, c)| c.best.map(|b| (k, b.gain)))
                .fold(None, |acc: Option<(usize, f64)>, (k, g)| match acc {
                    Some((_, bg)) if bg >= g => acc,
                    _ => Some((k, g)),
                });
            let Some((k, _)) = pick else { break };
            let c = open.swap_remove(k);
            let split = c.best.unwrap();
            let threshold = self.cuts[split.feature][split.cut];
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = c
                .rows
                .iter()
                .partition(|&&i| self.bins[split.feature][i] as usize <= split.cut);
            let left = nodes.len();
            nodes.push(Node::Leaf { value: 0.0, leaf: 0 });
            nodes.push(Node::Leaf { value: 0.0, leaf: 0 });
            nodes[c.node] = Node::Split {
                feature: split.feature,
                threshold,
                left,
                right: left + 1,
            };
            open.push(self.candidate(left, left_rows, c.depth + 1));
            open.push(self.candidate(left + 1, right_rows, c.depth + 1));
        }
        done.extend(open);
        done.sort_by_key(|c| c.node);
        let mut leaf_of_row = vec![0usize; n];
        for (leaf, c) in done.iter().enumerate() {
            let value = c.sum_r / (c.sum_w + self.params.l2);
            nodes[c.node] = Node::Leaf { value, leaf };
            for &i in &c.rows {
                leaf_of_row[i] = leaf;
            }
        }
        let n_leaves = done.len();
        (Tree { nodes, n_leaves }, leaf_of_row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stump_recovers_two_level_step() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| if i < 20 { 1.0 } else { 3.0 }).collect();
        let params = TreeParams {
            max_depth: 1,
            max_leaves: 2,
            learning_rate: 1.0,
            rounds: 1,
            min_leaf_weight: 1.0,
            ..TreeParams::default()
        };
        let m = TreeEnsemble::fit(&x, &y, &[1.0; 40], &params).unwrap();
        assert_eq!(m.total_leaves(), 2);
        assert!((m.predict(&[3.0]) - 1.0).abs() < 1e-12);
        assert!((m.predict(&[30.0]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn respects_min_leaf_weight() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i == 9 { 100.0 } else { 0.0 }).collect();
        let params = TreeParams {
            max_depth: 3,
            min_leaf_weight: 4.0,
            rounds: 1,
            learning_rate: 1.0,
            ..TreeParams::default()
        };
        let m = TreeEnsemble::fit(&x, &y, &[1.0; 10], &params).unwrap();
        // the outlier can only be isolated in a leaf of weight >= 4
        assert!(m.predict(&[9.0]) <= 100.0 / 4.0 + 1e-9);
    }

    #[test]
    fn leaf_count_is_capped() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 17) as f64, (i % 5) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| (r[0] * 0.3).sin() + r[1]).collect();
        let params = TreeParams {
            max_depth: 6,
            max_leaves: 5,
            rounds: 3,
            min_leaf_weight: 1.0,
            ..TreeParams::default()
        };
        let m = TreeEnsemble::fit(&x, &y, &vec![1.0; 200], &params).unwrap();
        assert!(m.trees().iter().all(|t| t.n_leaves() <= 5));
    }

    #[test]
    fn invalid_params() {
        let p = TreeParams {
            rounds: 0,
            ..TreeParams::default()
        };
        assert!(p.validate().is_err());
    }
}
