//! Chi-squared ranking of categorical features against the binary target.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Pearson chi-squared statistic of the (distinct value x class) contingency
/// table. Cells with zero expected count contribute nothing.
pub fn chi2_statistic(feature: &[u32], target: &[u8]) -> Result<f64> {
    if feature.len() != target.len() {
        return Err(Error::LengthMismatch(feature.len(), target.len()));
    }
    if feature.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut table: BTreeMap<u32, [usize; 2]> = BTreeMap::new();
    let mut class_totals = [0usize; 2];
    for (&x, &y) in feature.iter().zip(target) {
        let c = usize::from(y != 0);
        table.entry(x).or_default()[c] += 1;
        class_totals[c] += 1;
    }
    if class_totals.contains(&0) {
        return Err(Error::SingleClass);
    }
    let n = feature.len() as f64;
    let mut stat = 0.0;
    for counts in table.values() {
        let row_total = (counts[0] + counts[1]) as f64;
        for (c, &observed) in counts.iter().enumerate() {
            let expected = row_total * class_totals[c] as f64 / n;
            if expected > 0.0 {
                let d = observed as f64 - expected;
                stat += d * d / expected;
            }
        }
    }
    Ok(stat)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub column: usize,
    pub chi2: f64,
}

/// Full ranking (statistic descending, name ascending on ties) with the
/// first `k` entries selected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub entries: Vec<RankedFeature>,
    pub k: usize,
}

impl FeatureRanking {
    pub fn selected(&self) -> &[RankedFeature] {
        &self.entries[..self.k]
    }

    pub fn selected_columns(&self) -> Vec<usize> {
        self.selected().iter().map(|f| f.column).collect()
    }

    pub fn with_k(&self, k: usize) -> Result<FeatureRanking> {
        check_k(k, self.entries.len())?;
        Ok(FeatureRanking {
            entries: self.entries.clone(),
            k,
        })
    }
}

fn check_k(k: usize, max: usize) -> Result<()> {
    if k == 0 || k > max {
        return Err(Error::InvalidK { k, max });
    }
    Ok(())
}

/// Ranks every column of `matrix` using only the rows in `train_rows`.
pub fn rank_features(matrix: &FeatureMatrix, train_rows: &[usize]) -> Result<Vec<RankedFeature>> {
    let target: Vec<u8> = train_rows.iter().map(|&i| matrix.target[i]).collect();
    let mut column = Vec::with_capacity(train_rows.len());
    let mut entries = Vec::with_capacity(matrix.n_cols());
    for (j, name) in matrix.column_names.iter().enumerate() {
        column.clear();
        column.extend(train_rows.iter().map(|&i| matrix.rows[i][j]));
        entries.push(RankedFeature {
            name: name.clone(),
            column: j,
            chi2: chi2_statistic(&column, &target)?,
        });
    }
    entries.sort_by(|a, b| match b.chi2.total_cmp(&a.chi2) {
        Ordering::Equal => a.name.cmp(&b.name),
        o => o,
    });
    Ok(entries)
}

pub fn select_top_k(matrix: &FeatureMatrix, train_rows: &[usize], k: usize) -> Result<FeatureRanking> {
    check_k(k, matrix.n_cols())?;
    Ok(FeatureRanking {
        entries: rank_features(matrix, train_rows)?,
        k,
    })
}

/// `rank,column_name,chi2,selected`
pub fn write_ranking_csv<W: Write>(ranking: &FeatureRanking, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "column_name", "chi2", "selected"])?;
    for (i, f) in ranking.entries.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            f.name.clone(),
            format!("{:.6}", f.chi2),
            u8::from(i < ranking.k).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("ranking.csv", e))?;
    Ok(())
}
