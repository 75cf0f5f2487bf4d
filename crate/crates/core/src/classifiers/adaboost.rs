//! Discrete two-class AdaBoost (SAMME with K = 2) over decision stumps.

use serde::{Deserialize, Serialize};

use super::Binned;
use crate::error::Result;

/// Vote weight used when a stump classifies every training row correctly.
const MAX_ALPHA: f64 = 23.025850929940457; // ln((1 - 1e-10) / 1e-10)

/// `x[feature] <= threshold` predicts `left_class`, otherwise the other class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left_class: u8,
}

impl Stump {
    pub fn predict_row(&self, row: &[f64]) -> u8 {
        if row[self.feature] <= self.threshold {
            self.left_class
        } else {
            1 - self.left_class
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub stumps: Vec<(Stump, f64)>,
    /// Prediction when the ensemble is empty or its vote is tied.
    pub fallback_class: u8,
}

impl AdaBoostModel {
    pub fn score(&self, row: &[f64]) -> f64 {
        self.stumps
            .iter()
            .map(|(s, alpha)| if s.predict_row(row) == 1 { *alpha } else { -*alpha })
            .sum()
    }

    pub fn predict_row(&self, row: &[f64]) -> u8 {
        let s = self.score(row);
        if s > 0.0 {
            1
        } else if s < 0.0 {
            0
        } else {
            self.fallback_class
        }
    }
}

/// Per-round diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaBoostRound {
    pub weighted_error: f64,
    pub alpha: f64,
    /// Sum of sample weights after renormalisation.
    pub weight_sum: f64,
    /// Running product of `2 * sqrt(err * (1 - err))`, an upper bound on the
    /// ensemble's training error.
    pub error_bound: f64,
    /// Unweighted training error of the ensemble after this round.
    pub training_error: f64,
}

/// Lowest weighted-error stump; ties go to the lowest feature, threshold and
/// left class. `None` when no feature has two distinct values.
fn best_stump(data: &Binned<'_>, weights: &[f64]) -> Option<(Stump, f64)> {
    let total: f64 = weights.iter().sum();
    let mut best: Option<(Stump, f64)> = None;
    let mut hist: Vec<[f64; 2]> = Vec::new();
    for f in 0..data.n_features() {
        let n_bins = data.values[f].len();
        if n_bins < 2 {
            continue;
        }
        hist.clear();
        hist.resize(n_bins, [0.0, 0.0]);
        for (i, &w) in weights.iter().enumerate() {
            hist[data.bins[f][i] as usize][usize::from(data.y[i] != 0)] += w;
        }
        // weight of class-1 rows on the left and class-0 rows on the right
        let mut left_pos = 0.0;
        let mut left_neg = 0.0;
        let total_neg: f64 = hist.iter().map(|h| h[0]).sum();
        for (b, counts) in hist[..n_bins - 1].iter().enumerate() {
            left_neg += counts[0];
            left_pos += counts[1];
            let err_left0 = left_pos + (total_neg - left_neg);
            let err_left1 = total - err_left0;
            let threshold = data.threshold(f, b, b + 1);
            for (left_class, err) in [(0u8, err_left0), (1u8, err_left1)] {
                // tolerance keeps equal-count ties on the first candidate
                if best.is_none_or(|(_, e)| err < e - 1e-12) {
                    best = Some((
                        Stump {
                            feature: f,
                            threshold,
                            left_class,
                        },
                        err,
                    ));
                }
            }
        }
    }
    best
}

/// Fits up to `rounds` stumps. Stops early when the best stump's weighted
/// error reaches 0.5 (the stump is discarded) or 0 (the stump is kept).
pub fn fit_adaboost_traced(
    x: &[Vec<f64>],
    y: &[u8],
    n_features: usize,
    rounds: usize,
) -> Result<(AdaBoostModel, Vec<AdaBoostRound>)> {
    let data = Binned::new(x, y, n_features)?;
    let n = data.n_rows();
    let mut weights = vec![1.0 / n as f64; n];
    let positives = y.iter().filter(|&&t| t != 0).count();
    let mut model = AdaBoostModel {
        stumps: Vec::new(),
        fallback_class: u8::from(2 * positives > n),
    };
    let mut trace = Vec::new();
    let mut scores = vec![0.0; n];
    let mut bound = 1.0;

    for _ in 0..rounds {
        let Some((stump, err)) = best_stump(&data, &weights) else {
            break;
        };
        // rounding residue from the running sums counts as a perfect stump
        let err = if err < 1e-12 { 0.0 } else { err };
        if err >= 0.5 {
            break;
        }
        let perfect = err == 0.0;
        let alpha = if perfect { MAX_ALPHA } else { ((1.0 - err) / err).ln() };
        let hits: Vec<bool> = x.iter().zip(y).map(|(r, &t)| stump.predict_row(r) == t).collect();
        if !perfect {
            let boost = alpha.exp();
            for (w, &hit) in weights.iter_mut().zip(&hits) {
                if !hit {
                    *w *= boost;
                }
            }
            let sum: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= sum);
        }
        for (s, r) in scores.iter_mut().zip(x) {
            *s += if stump.predict_row(r) == 1 { alpha } else { -alpha };
        }
        model.stumps.push((stump, alpha));
        bound *= 2.0 * (err * (1.0 - err)).sqrt();
        let wrong = scores
            .iter()
            .zip(y)
            .filter(|(&s, &t)| {
                let p = if s > 0.0 {
                    1
                } else if s < 0.0 {
                    0
                } else {
                    model.fallback_class
                };
                p != t
            })
            .count();
        trace.push(AdaBoostRound {
            weighted_error: err,
            alpha,
            weight_sum: weights.iter().sum(),
            error_bound: bound,
            training_error: wrong as f64 / n as f64,
        });
        if perfect {
            break;
        }
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.gen_range(1..=3) as f64).collect())
            .collect();
        // weakly informative target
        let y = x
            .iter()
            .map(|r| u8::from(r[0] + r[1] + rng.gen_range(0.0..3.0) > 5.0))
            .collect();
        (x, y)
    }

    #[test]
    fn separable_stops_after_one_round() {
        let x = vec![vec![1.0], vec![3.0], vec![1.0], vec![3.0]];
        let y = [0, 1, 0, 1];
        let (m, trace) = fit_adaboost_traced(&x, &y, 1, 50).unwrap();
        assert_eq!(m.stumps.len(), 1);
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].weighted_error, 0.0);
        let pred: Vec<u8> = x.iter().map(|r| m.predict_row(r)).collect();
        assert_eq!(pred, y);
    }

    /// Plain best stump by unweighted misclassification count.
    fn plain_best_stump(x: &[Vec<f64>], y: &[u8]) -> (usize, f64, u8, usize) {
        let mut best = (0, 0.0, 0, usize::MAX);
        for f in 0..x[0].len() {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                for left in [0u8, 1] {
                    let wrong = x
                        .iter()
                        .zip(y)
                        .filter(|(r, &c)| (if r[f] <= t { left } else { 1 - left }) != c)
                        .count();
                    if wrong < best.3 {
                        best = (f, t, left, wrong);
                    }
                }
            }
        }
        best
    }

    #[test]
    fn first_round_uses_plain_best_stump() {
        for seed in 0..20 {
            let (x, y) = random_data(seed, 80, 4);
            let (m, trace) = fit_adaboost_traced(&x, &y, 4, 1).unwrap();
            let (f, t, left, wrong) = plain_best_stump(&x, &y);
            let s = m.stumps[0].0;
            assert_eq!((s.feature, s.threshold, s.left_class), (f, t, left), "seed {seed}");
            assert!((trace[0].weighted_error - wrong as f64 / 80.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_and_error_bound() {
        for seed in 0..10 {
            let (x, y) = random_data(100 + seed, 150, 5);
            let (_, trace) = fit_adaboost_traced(&x, &y, 5, 50).unwrap();
            assert!(!trace.is_empty());
            let mut prev_bound = 1.0;
            for r in &trace {
                assert!((r.weight_sum - 1.0).abs() <= 1e-12, "{}", r.weight_sum);
                assert!(r.error_bound <= prev_bound + 1e-15);
                assert!(r.training_error <= r.error_bound + 1e-12);
                prev_bound = r.error_bound;
            }
        }
    }

    #[test]
    fn no_splittable_feature_falls_back() {
        let x = vec![vec![1.0]; 5];
        let y = [1, 1, 0, 1, 0];
        let (m, trace) = fit_adaboost_traced(&x, &y, 1, 10).unwrap();
        assert!(m.stumps.is_empty() && trace.is_empty());
        assert_eq!(m.predict_row(&[1.0]), 1);
    }
}
