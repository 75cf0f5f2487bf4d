use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Binned;
use crate::error::Result;

/// Gini impurity of a two-class count vector.
pub fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = counts[0] as f64 / n;
    let p1 = counts[1] as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GiniSplit {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    /// Highest bin that goes left.
    left_bin: u32,
}

fn class_counts(y: &[u8], rows: &[usize]) -> [usize; 2] {
    let mut c = [0usize; 2];
    for &i in rows {
        c[usize::from(y[i] != 0)] += 1;
    }
    c
}

fn find_split(data: &Binned<'_>, rows: &[usize], min_leaf: usize) -> Option<GiniSplit> {
    let parent = class_counts(data.y, rows);
    let n = rows.len();
    let parent_gini = gini(parent);
    let mut best: Option<GiniSplit> = None;
    let mut hist: Vec<[usize; 2]> = Vec::new();

    for f in 0..data.n_features() {
        hist.clear();
        hist.resize(data.values[f].len(), [0, 0]);
        for &i in rows {
            hist[data.bins[f][i] as usize][usize::from(data.y[i] != 0)] += 1;
        }
        let mut left = [0usize; 2];
        let mut prev: Option<usize> = None;
        for (b, counts) in hist.iter().enumerate() {
            if counts[0] + counts[1] == 0 {
                continue;
            }
            if let Some(p) = prev {
                let n_left = left[0] + left[1];
                let right = [parent[0] - left[0], parent[1] - left[1]];
                if n_left >= min_leaf && n - n_left >= min_leaf {
                    let gain = parent_gini
                        - (n_left as f64 / n as f64) * gini(left)
                        - ((n - n_left) as f64 / n as f64) * gini(right);
                    if best.is_none_or(|s| gain > s.gain) {
                        best = Some(GiniSplit {
                            feature: f,
                            threshold: data.threshold(f, p, b),
                            gain,
                            left_bin: p as u32,
                        });
                    }
                }
            }
            left[0] += counts[0];
            left[1] += counts[1];
            prev = Some(b);
        }
    }
    best
}

/// Best root split of `(x, y)` by Gini gain with at least `min_leaf` rows per
/// side. `None` when no feature has two distinct values.
pub fn best_gini_split(x: &[Vec<f64>], y: &[u8], min_leaf: usize) -> Result<Option<GiniSplit>> {
    let n_features = x.first().map_or(0, Vec::len);
    let data = Binned::new(x, y, n_features)?;
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    Ok(find_split(&data, &rows, min_leaf))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// `p` is the share of `class` among the `n` training rows in the leaf.
    Leaf { class: u8, p: f64, n: usize },
}

/// CART classifier stored as a flat node list rooted at index 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub(crate) fn fit(data: &Binned<'_>, max_depth: usize, min_leaf: usize) -> Self {
        let mut tree = DecisionTree { nodes: Vec::new() };
        let rows: Vec<usize> = (0..data.n_rows()).collect();
        tree.grow(data, rows, 0, max_depth, min_leaf.max(1));
        tree
    }

    fn grow(&mut self, data: &Binned<'_>, rows: Vec<usize>, depth: usize, max_depth: usize, min_leaf: usize) -> usize {
        let id = self.nodes.len();
        let counts = class_counts(data.y, &rows);
        let leaf = |counts: [usize; 2]| {
            let class = u8::from(counts[1] > counts[0]);
            let n = counts[0] + counts[1];
            TreeNode::Leaf {
                class,
                p: counts[class as usize] as f64 / n as f64,
                n,
            }
        };
        let pure = counts[0] == 0 || counts[1] == 0;
        let split = if pure || depth >= max_depth || rows.len() < 2 * min_leaf {
            None
        } else {
            find_split(data, &rows, min_leaf)
        };
        let Some(split) = split else {
            self.nodes.push(leaf(counts));
            return id;
        };

        self.nodes.push(TreeNode::Leaf { class: 0, p: 0.0, n: 0 });
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| data.bins[split.feature][i] <= split.left_bin);
        let left = self.grow(data, l, depth + 1, max_depth, min_leaf);
        let right = self.grow(data, r, depth + 1, max_depth, min_leaf);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    pub fn predict_row(&self, row: &[f64]) -> u8 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { class, .. } => return *class,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], id: usize) -> usize {
            match &nodes[id] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Indented `if <col> <= <t>` / `else` / `leaf class=<c> p=<p> n=<n>` lines.
    pub fn dump(&self, feature_names: &[String]) -> String {
        let mut out = String::new();
        self.dump_node(0, 0, feature_names, &mut out);
        out
    }

    fn dump_node(&self, id: usize, indent: usize, names: &[String], out: &mut String) {
        let pad = "  ".repeat(indent);
        match &self.nodes[id] {
            TreeNode::Leaf { class, p, n } => {
                let _ = writeln!(out, "{pad}leaf class={class} p={p:.4} n={n}");
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let _ = writeln!(out, "{pad}if {} <= {threshold}", names[*feature]);
                self.dump_node(*left, indent + 1, names, out);
                let _ = writeln!(out, "{pad}else");
                self.dump_node(*right, indent + 1, names, out);
            }
        }
    }
}
