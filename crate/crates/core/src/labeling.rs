//! Diagnosis-window groups and the six per-measure labeling versions.
//!
//! Every observation of a measure earns a candidate label under each version;
//! the patient's label for that measure is the maximum candidate. Day offsets
//! are relative to the diagnosis date and a month counts as 30 days.
//! Observations dated after the end of the close window are ignored.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Measure, PathologyObservation, PatientRecord};
use crate::error::{Error, Result};
use crate::range::{classify, DEFAULT_SOFT_MARGIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Version {
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
}

impl Version {
    pub const ALL: [Version; 6] = [
        Version::V1,
        Version::V2,
        Version::V3,
        Version::V4,
        Version::V5,
        Version::V6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Version::V1 => "v1",
            Version::V2 => "v2",
            Version::V3 => "v3",
            Version::V4 => "v4",
            Version::V5 => "v5",
            Version::V6 => "v6",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Largest label the version can produce.
    pub fn max_label(self) -> u8 {
        match self {
            Version::V4 | Version::V6 => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Version {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Version::ALL
            .into_iter()
            .find(|v| v.as_str() == lower)
            .ok_or_else(|| format!("unknown labeling version `{s}` (expected v1..v6)"))
    }
}

/// Closed day-offset interval `[start, end]` around the diagnosis date.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisWindow {
    start: i64,
    end: i64,
}

impl DiagnosisWindow {
    pub fn new(start_offset_days: i64, end_offset_days: i64) -> Option<Self> {
        (start_offset_days < end_offset_days).then_some(Self {
            start: start_offset_days,
            end: end_offset_days,
        })
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.end
    }

    pub fn contains(&self, offset: i64) -> bool {
        (self.start..=self.end).contains(&offset)
    }
}

impl Default for DiagnosisWindow {
    /// Two months before to one month after diagnosis.
    fn default() -> Self {
        Self { start: -60, end: 30 }
    }
}

impl fmt::Display for DiagnosisWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:+}", self.start, self.end)
    }
}

impl FromStr for DiagnosisWindow {
    type Err = String;

    /// Parses `"<start>:<end>"`, e.g. `"-60:+30"`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("window `{s}` must look like -60:+30"))?;
        let parse = |t: &str| {
            t.trim()
                .trim_start_matches('+')
                .parse::<i64>()
                .map_err(|e| format!("window `{s}`: {e}"))
        };
        DiagnosisWindow::new(parse(a)?, parse(b)?).ok_or_else(|| format!("window `{s}`: start must precede end"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingConfig {
    pub close_window: DiagnosisWindow,
    /// Extended look-back used by V3 and V6, in days before diagnosis.
    pub far_days: i64,
    pub soft_margin: f64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            close_window: DiagnosisWindow::default(),
            far_days: 180,
            soft_margin: DEFAULT_SOFT_MARGIN,
        }
    }
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.far_days < -self.close_window.start() {
            return Err(Error::Config(format!(
                "far window ({} days) must reach at least as far back as the close window ({})",
                self.far_days, self.close_window
            )));
        }
        if !(0.0..0.5).contains(&self.soft_margin) {
            return Err(Error::Config(format!(
                "soft margin {} must lie in [0, 0.5)",
                self.soft_margin
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    G1NoOor,
    G2OorOutsideWindow,
    G3OorWithinWindow,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::G1NoOor, Group::G2OorOutsideWindow, Group::G3OorWithinWindow];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::G1NoOor => "G1",
            Group::G2OorOutsideWindow => "G2",
            Group::G3OorWithinWindow => "G3",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Observations of `measure` that fall on or before the close window end,
/// paired with their day offset. Errors when the patient has none at all.
fn considered<'a>(
    patient: &'a PatientRecord,
    measure: Measure,
    cfg: &LabelingConfig,
) -> Result<impl Iterator<Item = (&'a PathologyObservation, i64)>> {
    if !patient.has_measure(measure) {
        return Err(Error::NoObservations(patient.patient_id.clone(), measure.as_str()));
    }
    let end = cfg.close_window.end();
    Ok(patient
        .observations_of(measure)
        .map(move |o| (o, patient.offset_days(o.date)))
        .filter(move |&(_, offset)| offset <= end))
}

/// Group by hard out-of-range results relative to the close window.
pub fn assign_group(patient: &PatientRecord, measure: Measure, cfg: &LabelingConfig) -> Result<Group> {
    let mut group = Group::G1NoOor;
    for (o, offset) in considered(patient, measure, cfg)? {
        if classify(o, cfg.soft_margin).hard_out() {
            let g = if cfg.close_window.contains(offset) {
                Group::G3OorWithinWindow
            } else {
                Group::G2OorOutsideWindow
            };
            group = group.max(g);
        }
    }
    Ok(group)
}

/// Candidate label earned by a single observation.
fn candidate(version: Version, hard_out: bool, soft_out: bool, offset: i64, cfg: &LabelingConfig) -> u8 {
    let close = cfg.close_window.contains(offset);
    let far_start = -cfg.far_days;
    match version {
        Version::V1 => {
            if hard_out && close {
                2
            } else {
                1
            }
        }
        Version::V2 => {
            if hard_out {
                2
            } else {
                1
            }
        }
        Version::V3 => {
            if hard_out && offset >= far_start {
                2
            } else {
                1
            }
        }
        Version::V4 => {
            if hard_out && close {
                3
            } else if soft_out && offset < 0 {
                2
            } else {
                1
            }
        }
        Version::V5 => {
            if soft_out {
                2
            } else {
                1
            }
        }
        Version::V6 => {
            if hard_out && close {
                3
            } else if soft_out && offset >= far_start && offset < cfg.close_window.start() {
                2
            } else {
                1
            }
        }
    }
}

pub fn label_version(patient: &PatientRecord, measure: Measure, version: Version, cfg: &LabelingConfig) -> Result<u8> {
    let mut label = 1;
    for (o, offset) in considered(patient, measure, cfg)? {
        let s = classify(o, cfg.soft_margin);
        label = label.max(candidate(version, s.hard_out(), s.soft_out(), offset, cfg));
    }
    Ok(label)
}

/// Labels of one patient for every measure and version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub patient_id: String,
    /// Indexed `[measure][version]`.
    pub labels: [[u8; 6]; 5],
}

impl LabelVector {
    pub fn get(&self, measure: Measure, version: Version) -> u8 {
        self.labels[measure.index()][version.index()]
    }
}

pub fn label_patient(patient: &PatientRecord, cfg: &LabelingConfig) -> Result<LabelVector> {
    let mut labels = [[0u8; 6]; 5];
    for m in Measure::ALL {
        // one classification pass per measure, shared by all versions
        let mut row = [1u8; 6];
        for (o, offset) in considered(patient, m, cfg)? {
            let s = classify(o, cfg.soft_margin);
            for v in Version::ALL {
                let c = candidate(v, s.hard_out(), s.soft_out(), offset, cfg);
                row[v.index()] = row[v.index()].max(c);
            }
        }
        labels[m.index()] = row;
    }
    Ok(LabelVector {
        patient_id: patient.patient_id.clone(),
        labels,
    })
}

pub fn label_cohort(cohort: &Cohort, cfg: &LabelingConfig) -> Result<Vec<LabelVector>> {
    cfg.validate()?;
    cohort.patients().iter().map(|p| label_patient(p, cfg)).collect()
}

const LABEL_COLUMNS: [&str; 8] = ["patient_id", "measure", "v1", "v2", "v3", "v4", "v5", "v6"];

/// One row per (patient, measure).
pub fn write_labels_csv<W: Write>(labels: &[LabelVector], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LABEL_COLUMNS)?;
    for lv in labels {
        for m in Measure::ALL {
            let mut rec = vec![lv.patient_id.clone(), m.as_str().to_string()];
            rec.extend(lv.labels[m.index()].iter().map(|l| l.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("labels.csv", e))?;
    Ok(())
}

/// Reads `labels.csv`. Every patient must list all five measures.
pub fn read_labels_csv<R: Read>(name: &str, input: R) -> Result<Vec<LabelVector>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(LABEL_COLUMNS) {
        return Err(Error::Schema {
            file: name.into(),
            message: format!("header must be `{}`", LABEL_COLUMNS.join(",")),
        });
    }
    let mut out: Vec<LabelVector> = Vec::new();
    let mut seen: Vec<[bool; 5]> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = &rec[0];
        let measure: Measure = rec[1]
            .parse()
            .map_err(|e: String| Error::row(name, line, "measure", e))?;
        let slot = match out.iter().rposition(|lv| lv.patient_id == id) {
            Some(i) => i,
            None => {
                out.push(LabelVector {
                    patient_id: id.to_string(),
                    labels: [[0; 6]; 5],
                });
                seen.push([false; 5]);
                out.len() - 1
            }
        };
        for v in Version::ALL {
            let field = LABEL_COLUMNS[2 + v.index()];
            let raw = &rec[2 + v.index()];
            let label: u8 = raw
                .parse()
                .map_err(|e| Error::row(name, line, field, format!("`{raw}`: {e}")))?;
            if !(1..=v.max_label()).contains(&label) {
                return Err(Error::row(name, line, field, format!("label {label} out of range")));
            }
            out[slot].labels[measure.index()][v.index()] = label;
        }
        seen[slot][measure.index()] = true;
    }
    for (lv, s) in out.iter().zip(&seen) {
        if s.iter().any(|x| !x) {
            return Err(Error::Unlabeled(lv.patient_id.clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{ReferenceRange, Sex};
    use chrono::{Duration, NaiveDate};

    fn diag() -> NaiveDate {
        NaiveDate::from_ymd_opt(2012, 6, 1).unwrap()
    }

    fn patient(obs: &[(f64, i64)]) -> PatientRecord {
        PatientRecord {
            patient_id: "p".into(),
            sex: Sex::Male,
            age_at_diagnosis: 60,
            diagnosis_date: diag(),
            death_date: None,
            observations: obs
                .iter()
                .map(|&(value, offset)| PathologyObservation {
                    patient_id: "p".into(),
                    measure: Measure::Platelets,
                    value,
                    date: diag() + Duration::days(offset),
                    range: ReferenceRange::new(150.0, 450.0).unwrap(),
                })
                .collect(),
        }
    }

    fn label(p: &PatientRecord, v: Version) -> u8 {
        label_version(p, Measure::Platelets, v, &LabelingConfig::default()).unwrap()
    }

    fn group(p: &PatientRecord) -> Group {
        assign_group(p, Measure::Platelets, &LabelingConfig::default()).unwrap()
    }

    #[test]
    fn group_examples() {
        assert_eq!(group(&patient(&[(500.0, -45)])), Group::G3OorWithinWindow);
        assert_eq!(group(&patient(&[(500.0, -200)])), Group::G2OorOutsideWindow);
        assert_eq!(group(&patient(&[(300.0, -200), (200.0, -10)])), Group::G1NoOor);
        assert_eq!(group(&patient(&[(500.0, -60)])), Group::G3OorWithinWindow);
        assert_eq!(group(&patient(&[(500.0, -61)])), Group::G2OorOutsideWindow);
        assert_eq!(group(&patient(&[(500.0, 31)])), Group::G1NoOor);
    }

    #[test]
    fn missing_measure_is_an_error() {
        let p = patient(&[(300.0, 0)]);
        let cfg = LabelingConfig::default();
        assert!(matches!(
            assign_group(&p, Measure::Rdw, &cfg),
            Err(Error::NoObservations(_, "RDW"))
        ));
        assert!(label_version(&p, Measure::Mcv, Version::V1, &cfg).is_err());
    }

    #[test]
    fn max_priority_example() {
        let p = patient(&[(500.0, -10), (100.0, -200)]);
        assert_eq!(label(&p, Version::V1), 2);
    }

    #[test]
    fn no_violations_label_one() {
        let p = patient(&[(300.0, -300), (250.0, -5), (320.0, 20)]);
        for v in Version::ALL {
            assert_eq!(label(&p, v), 1, "{v}");
        }
    }

    #[test]
    fn soft_only_violation() {
        // 152 is inside [150, 450] but below the soft bound 157.5
        let p = patient(&[(152.0, -100)]);
        assert_eq!(label(&p, Version::V4), 2);
        assert_eq!(label(&p, Version::V1), 1);
    }

    /// Hand-enumerated expectations for every version across representative
    /// (status, offset) cells.
    #[test]
    fn rules_table() {
        // (value, offset) -> [v1..v6]
        let cases: &[((f64, i64), [u8; 6])] = &[
            ((500.0, -10), [2, 2, 2, 3, 2, 3]),
            ((500.0, 20), [2, 2, 2, 3, 2, 3]),
            ((500.0, -100), [1, 2, 2, 2, 2, 2]),
            ((500.0, -180), [1, 2, 2, 2, 2, 2]),
            ((500.0, -181), [1, 2, 1, 2, 2, 1]),
            ((500.0, -400), [1, 2, 1, 2, 2, 1]),
            ((152.0, -10), [1, 1, 1, 2, 2, 1]),
            ((152.0, 10), [1, 1, 1, 1, 2, 1]),
            ((152.0, -60), [1, 1, 1, 2, 2, 1]),
            ((152.0, -61), [1, 1, 1, 2, 2, 2]),
            ((445.0, -181), [1, 1, 1, 2, 2, 1]),
            ((300.0, -10), [1, 1, 1, 1, 1, 1]),
            ((500.0, 31), [1, 1, 1, 1, 1, 1]),
        ];
        for &((value, offset), expected) in cases {
            let p = patient(&[(value, offset)]);
            let got: Vec<u8> = Version::ALL.iter().map(|&v| label(&p, v)).collect();
            assert_eq!(got, expected, "value {value} at offset {offset}");
            let lv = label_patient(
                &PatientRecord {
                    observations: Measure::ALL
                        .iter()
                        .map(|&m| PathologyObservation {
                            measure: m,
                            ..p.observations[0].clone()
                        })
                        .collect(),
                    ..p.clone()
                },
                &LabelingConfig::default(),
            )
            .unwrap();
            assert_eq!(lv.labels[0].to_vec(), expected);
        }
    }

    #[test]
    fn window_parsing() {
        let w: DiagnosisWindow = "-60:+30".parse().unwrap();
        assert_eq!(w, DiagnosisWindow::default());
        assert_eq!(w.to_string(), "-60:+30");
        assert!("30:-60".parse::<DiagnosisWindow>().is_err());
        assert!("abc".parse::<DiagnosisWindow>().is_err());
    }

    #[test]
    fn labels_csv_round_trip() {
        let lv = LabelVector {
            patient_id: "a".into(),
            labels: [[1, 2, 2, 3, 2, 1]; 5],
        };
        let mut buf = Vec::new();
        write_labels_csv(std::slice::from_ref(&lv), &mut buf).unwrap();
        assert_eq!(read_labels_csv("labels.csv", &buf[..]).unwrap(), vec![lv]);

        let bad = "patient_id,measure,v1,v2,v3,v4,v5,v6\na,MCV,3,1,1,1,1,1\n";
        assert!(read_labels_csv("labels.csv", bad.as_bytes()).is_err());
    }
}
