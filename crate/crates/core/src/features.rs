//! Deterministic feature matrix built from per-measure labels.
//!
//! Column layout for one labeling version (88 columns):
//!
//! | block | columns | name pattern |
//! |-------|---------|--------------|
//! | base labels | 5 | `lbl_<M>` |
//! | demographics | 2 | `sex`, `age_group` |
//! | label sum | 1 | `sum5` |
//! | pairs, additive then multiplicative | 20 | `add_<M1>_<M2>`, `mul_<M1>_<M2>` |
//! | triples, additive then multiplicative | 20 | `add_<M1>_<M2>_<M3>`, `mul_...` |
//! | combinations plus sex code | 40 | `sexadd_<combination>` |
//!
//! Measures inside a combination name follow the canonical measure order.
//! When a secondary version is requested, its non-demographic 86 columns are
//! appended with a `<version>:` prefix.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{survival_label, Cohort, Measure, Sex};
use crate::error::{Error, Result};
use crate::labeling::{LabelVector, Version};

pub const SEX_CODE_MALE: u32 = 1;
pub const SEX_CODE_FEMALE: u32 = 20;

pub fn sex_code(sex: Sex) -> u32 {
    match sex {
        Sex::Male => SEX_CODE_MALE,
        Sex::Female => SEX_CODE_FEMALE,
    }
}

/// Decade of age: 15 -> 1, 69 -> 6, 9 -> 0.
pub fn age_group(age_at_diagnosis: u32) -> u32 {
    age_at_diagnosis / 10
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Add,
    Mul,
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Mul => "mul",
        }
    }

    fn apply(self, operands: impl Iterator<Item = u32>) -> u32 {
        match self {
            Op::Add => operands.sum(),
            Op::Mul => operands.product(),
        }
    }
}

/// A pair or triple of measures combined by one operator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Combination {
    op: Op,
    measures: Vec<Measure>,
}

impl Combination {
    pub fn name(&self) -> String {
        let mut s = self.op.name().to_string();
        for m in &self.measures {
            s.push('_');
            s.push_str(m.as_str());
        }
        s
    }

    pub fn measures(&self) -> &[Measure] {
        &self.measures
    }

    fn eval(&self, base: &[u32; 5]) -> u32 {
        self.op.apply(self.measures.iter().map(|m| base[m.index()]))
    }
}

fn subsets(size: usize) -> Vec<Vec<Measure>> {
    let n = Measure::ALL.len();
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        out.push(idx.iter().map(|&i| Measure::ALL[i]).collect());
        // advance to the next lexicographic combination
        let Some(pos) = (0..size).rev().find(|&i| idx[i] < n - size + i) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// The 40 combinations in column order.
pub fn combinations() -> Vec<Combination> {
    let mut out = Vec::with_capacity(40);
    for size in [2, 3] {
        let sets = subsets(size);
        for op in [Op::Add, Op::Mul] {
            out.extend(sets.iter().map(|m| Combination {
                op,
                measures: m.clone(),
            }));
        }
    }
    out
}

/// Names of the version-dependent block (everything but `sex`/`age_group`).
fn label_block_names(prefix: &str) -> Vec<String> {
    let combos = combinations();
    let mut names: Vec<String> = Measure::ALL
        .iter()
        .map(|m| format!("{prefix}lbl_{}", m.as_str()))
        .collect();
    names.push(format!("{prefix}sum5"));
    names.extend(combos.iter().map(|c| format!("{prefix}{}", c.name())));
    names.extend(combos.iter().map(|c| format!("{prefix}sexadd_{}", c.name())));
    names
}

fn label_block_values(base: &[u32; 5], sex: u32, combos: &[Combination], out: &mut Vec<u32>) {
    out.extend_from_slice(base);
    out.push(base.iter().sum());
    let start = out.len();
    out.extend(combos.iter().map(|c| c.eval(base)));
    let combo_values: Vec<u32> = out[start..].to_vec();
    out.extend(combo_values.iter().map(|v| v + sex));
}

/// Ordered column names for `version`, optionally crossed with `secondary`.
pub fn column_names(secondary: Option<Version>) -> Vec<String> {
    let mut names = label_block_names("");
    names.splice(5..5, ["sex".to_string(), "age_group".to_string()]);
    if let Some(v) = secondary {
        names.extend(label_block_names(&format!("{v}:")));
    }
    names
}

pub const BASE_COLUMN_COUNT: usize = 88;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub version: Version,
    pub secondary: Option<Version>,
    pub column_names: Vec<String>,
    pub patient_ids: Vec<String>,
    pub rows: Vec<Vec<u32>>,
    /// `1` = deceased within two years.
    pub target: Vec<u8>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<u32> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }
}

/// Builds the feature matrix. `labels` must contain an entry for every
/// patient in `cohort` (matched by id, any order).
pub fn build_matrix(
    cohort: &Cohort,
    labels: &[LabelVector],
    version: Version,
    secondary: Option<Version>,
) -> Result<FeatureMatrix> {
    let lookup: std::collections::HashMap<&str, &LabelVector> =
        labels.iter().map(|l| (l.patient_id.as_str(), l)).collect();
    let combos = combinations();
    let column_names = column_names(secondary);
    let mut rows = Vec::with_capacity(cohort.len());
    let mut target = Vec::with_capacity(cohort.len());
    let mut patient_ids = Vec::with_capacity(cohort.len());

    for p in cohort.patients() {
        let lv = lookup
            .get(p.patient_id.as_str())
            .ok_or_else(|| Error::Unlabeled(p.patient_id.clone()))?;
        let base_of = |v: Version| Measure::ALL.map(|m| u32::from(lv.get(m, v)));
        if base_of(version).contains(&0) {
            return Err(Error::Unlabeled(p.patient_id.clone()));
        }
        let sex = sex_code(p.sex);
        let mut row = Vec::with_capacity(column_names.len());
        label_block_values(&base_of(version), sex, &combos, &mut row);
        row.splice(5..5, [sex, age_group(p.age_at_diagnosis)]);
        if let Some(v) = secondary {
            label_block_values(&base_of(v), sex, &combos, &mut row);
        }
        debug_assert_eq!(row.len(), column_names.len());
        rows.push(row);
        target.push(survival_label(p).target());
        patient_ids.push(p.patient_id.clone());
    }

    Ok(FeatureMatrix {
        version,
        secondary,
        column_names,
        patient_ids,
        rows,
        target,
    })
}

pub fn write_features_csv<W: Write>(m: &FeatureMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["patient_id".to_string(), "target".to_string()];
    header.extend(m.column_names.iter().cloned());
    w.write_record(&header)?;
    for ((id, t), row) in m.patient_ids.iter().zip(&m.target).zip(&m.rows) {
        let mut rec = vec![id.clone(), t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("features.csv", e))?;
    Ok(())
}

/// Reads a features table written by [`write_features_csv`]. The labeling
/// version is not stored in the file and must be supplied.
pub fn read_features_csv<R: Read>(name: &str, input: R, version: Version) -> Result<FeatureMatrix> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "patient_id" || &header[1] != "target" {
        return Err(Error::Schema {
            file: name.into(),
            message: "header must start with `patient_id,target` followed by feature columns".into(),
        });
    }
    let column_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut m = FeatureMatrix {
        version,
        secondary: None,
        column_names,
        patient_ids: Vec::new(),
        rows: Vec::new(),
        target: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let t: u8 = match &rec[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::row(name, line, "target", format!("`{other}` is not 0/1"))),
        };
        let row = rec
            .iter()
            .skip(2)
            .zip(&m.column_names)
            .map(|(raw, col)| {
                raw.parse::<u32>()
                    .map_err(|e| Error::row(name, line, col, format!("`{raw}`: {e}")))
            })
            .collect::<Result<Vec<u32>>>()?;
        m.patient_ids.push(rec[0].to_string());
        m.target.push(t);
        m.rows.push(row);
    }
    Ok(m)
}

pub fn read_features_file(path: &Path, version: Version) -> Result<FeatureMatrix> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features_csv(&path.display().to_string(), f, version)
}
