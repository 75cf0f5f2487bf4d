//! Second-order gradient boosting with logistic loss.
//!
//! Each round fits a depth-limited regression tree to the loss gradients and
//! hessians. Split gain is `GL²/(HL+λ) + GR²/(HR+λ) − G²/(H+λ)` and a leaf
//! outputs `−G/(H+λ)`; the ensemble adds leaves scaled by the learning rate
//! to a prior log-odds base score.

use serde::{Deserialize, Serialize};

use super::{Binned, Hyperparameters};
use crate::error::Result;

const MIN_GAIN: f64 = 1e-12;
const MIN_HESSIAN: f64 = 1e-16;

/// Newton leaf value `−Σg / (Σh + l2)`.
pub fn leaf_value(g: &[f64], h: &[f64], l2: f64) -> f64 {
    -g.iter().sum::<f64>() / (h.iter().sum::<f64>() + l2)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean logistic loss of raw scores against 0/1 targets.
pub(crate) fn log_loss(scores: &[f64], y: &[u8]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(y)
        .map(|(&f, &t)| {
            // log(1 + exp(-m)) with margin m = ±f
            let m = if t != 0 { f } else { -f };
            (-m).max(0.0) + (-m.abs()).exp().ln_1p()
        })
        .sum();
    total / scores.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum RegressionNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<RegressionNode>,
}

impl RegressionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                RegressionNode::Leaf { value } => return *value,
                RegressionNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn max_abs_leaf(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                RegressionNode::Leaf { value } => Some(value.abs()),
                _ => None,
            })
            .fold(0.0, f64::max)
    }
}

struct Grower<'a, 'b> {
    data: &'a Binned<'b>,
    g: &'a [f64],
    h: &'a [f64],
    l2: f64,
    max_depth: usize,
    nodes: Vec<RegressionNode>,
}

impl Grower<'_, '_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.l2)
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let g_sum: f64 = rows.iter().map(|&i| self.g[i]).sum();
        let h_sum: f64 = rows.iter().map(|&i| self.h[i]).sum();
        let split = if depth < self.max_depth && rows.len() >= 2 {
            self.find_split(&rows, g_sum, h_sum)
        } else {
            None
        };
        let Some((feature, left_bin, threshold)) = split else {
            self.nodes.push(RegressionNode::Leaf {
                value: -g_sum / (h_sum + self.l2),
            });
            return id;
        };
        self.nodes.push(RegressionNode::Leaf { value: 0.0 });
        let bins = &self.data.bins[feature];
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| bins[i] <= left_bin);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = RegressionNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn find_split(&self, rows: &[usize], g_sum: f64, h_sum: f64) -> Option<(usize, u32, f64)> {
        let parent = self.score(g_sum, h_sum);
        let mut best: Option<(usize, u32, f64, f64)> = None;
        let mut hist: Vec<(f64, f64, usize)> = Vec::new();
        let gh: Vec<(f64, f64)> = rows.iter().map(|&i| (self.g[i], self.h[i])).collect();
        for f in 0..self.data.n_features() {
            if self.data.values[f].len() < 2 {
                continue;
            }
            hist.clear();
            hist.resize(self.data.values[f].len(), (0.0, 0.0, 0));
            let bins = &self.data.bins[f];
            for (&i, &(g, h)) in rows.iter().zip(&gh) {
                let e = &mut hist[bins[i] as usize];
                e.0 += g;
                e.1 += h;
                e.2 += 1;
            }
            let (mut gl, mut hl) = (0.0, 0.0);
            let mut prev: Option<usize> = None;
            for (b, &(gb, hb, nb)) in hist.iter().enumerate() {
                if nb == 0 {
                    continue;
                }
                if let Some(p) = prev {
                    let gain = self.score(gl, hl) + self.score(g_sum - gl, h_sum - hl) - parent;
                    if gain > MIN_GAIN && best.is_none_or(|s| gain > s.3) {
                        best = Some((f, p as u32, self.data.threshold(f, p, b), gain));
                    }
                }
                gl += gb;
                hl += hb;
                prev = Some(b);
            }
        }
        best.map(|(f, b, t, _)| (f, b, t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl GbtModel {
    pub fn raw_score(&self, row: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    /// Class 1 iff the predicted probability exceeds 0.5.
    pub fn predict_row(&self, row: &[f64]) -> u8 {
        u8::from(self.raw_score(row) > 0.0)
    }
}

/// Fits the ensemble and returns the mean training log-loss before the first
/// round and after every round.
pub fn fit_gbt_traced(
    x: &[Vec<f64>],
    y: &[u8],
    n_features: usize,
    hp: &Hyperparameters,
) -> Result<(GbtModel, Vec<f64>)> {
    fit_gbt_inner(x, y, n_features, hp, true)
}

pub(crate) fn fit_gbt_untraced(x: &[Vec<f64>], y: &[u8], n_features: usize, hp: &Hyperparameters) -> Result<GbtModel> {
    fit_gbt_inner(x, y, n_features, hp, false).map(|(m, _)| m)
}

fn fit_gbt_inner(
    x: &[Vec<f64>],
    y: &[u8],
    n_features: usize,
    hp: &Hyperparameters,
    trace: bool,
) -> Result<(GbtModel, Vec<f64>)> {
    let data = Binned::new(x, y, n_features)?;
    let n = data.n_rows();
    let prior = (y.iter().filter(|&&t| t != 0).count() as f64 / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let mut model = GbtModel {
        base_score: (prior / (1.0 - prior)).ln(),
        learning_rate: hp.gbt_learning_rate,
        trees: Vec::with_capacity(hp.gbt_rounds),
    };
    let mut scores = vec![model.base_score; n];
    let mut losses = Vec::new();
    if trace {
        losses.push(log_loss(&scores, y));
    }
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];

    for _ in 0..hp.gbt_rounds {
        for i in 0..n {
            let p = sigmoid(scores[i]);
            g[i] = p - f64::from(y[i]);
            h[i] = (p * (1.0 - p)).max(MIN_HESSIAN);
        }
        let mut grower = Grower {
            data: &data,
            g: &g,
            h: &h,
            l2: hp.gbt_l2,
            max_depth: hp.gbt_depth,
            nodes: Vec::new(),
        };
        grower.grow((0..n).collect(), 0);
        let tree = RegressionTree { nodes: grower.nodes };
        for (s, row) in scores.iter_mut().zip(x) {
            *s += hp.gbt_learning_rate * tree.predict_row(row);
        }
        model.trees.push(tree);
        if trace {
            losses.push(log_loss(&scores, y));
        }
    }
    Ok((model, losses))
}
