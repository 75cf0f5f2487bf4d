//! Cohort data model, validation and inclusion filters.
//!
//! A [`Cohort`] is an immutable set of [`PatientRecord`]s together with the
//! last date covered by the extract. Every record carries its own pathology
//! observations, and every observation carries the reference range reported
//! by the laboratory that produced it.

mod csv_io;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{
    ingest_cohort, ingest_cohort_from_readers, read_cohort_dir, write_cohort_dir, write_observations_csv,
    write_patients_csv, CohortMeta, COHORT_META_FILE, OBSERVATIONS_FILE, PATIENTS_FILE,
};

/// Follow-up horizon for the survival target, in days. Leap days are ignored.
pub const TWO_YEARS_DAYS: i64 = 730;

/// The five full-blood-count measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Measure {
    Platelets,
    Mcv,
    Mch,
    Mchc,
    Rdw,
}

impl Measure {
    /// All measures in canonical order. Feature columns follow this order.
    pub const ALL: [Measure; 5] = [
        Measure::Platelets,
        Measure::Mcv,
        Measure::Mch,
        Measure::Mchc,
        Measure::Rdw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Platelets => "PLATELETS",
            Measure::Mcv => "MCV",
            Measure::Mch => "MCH",
            Measure::Mchc => "MCHC",
            Measure::Rdw => "RDW",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Measure::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown measure `{s}` (expected PLATELETS|MCV|MCH|MCHC|RDW)"))
    }
}

/// Laboratory reference interval `[low, high]` with `low < high`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRange {
    low: f64,
    high: f64,
}

impl ReferenceRange {
    /// Returns `None` unless both bounds are finite and `low < high`.
    pub fn new(low: f64, high: f64) -> Option<Self> {
        (low.is_finite() && high.is_finite() && low < high).then_some(Self { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathologyObservation {
    pub patient_id: String,
    pub measure: Measure,
    pub value: f64,
    pub date: NaiveDate,
    pub range: ReferenceRange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn code(self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
        }
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "M" => Ok(Sex::Male),
            "F" => Ok(Sex::Female),
            other => Err(format!("unknown sex `{other}` (expected M|F)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub sex: Sex,
    pub age_at_diagnosis: u32,
    pub diagnosis_date: NaiveDate,
    pub death_date: Option<NaiveDate>,
    pub observations: Vec<PathologyObservation>,
}

impl PatientRecord {
    pub fn observations_of(&self, measure: Measure) -> impl Iterator<Item = &PathologyObservation> {
        self.observations.iter().filter(move |o| o.measure == measure)
    }

    pub fn has_measure(&self, measure: Measure) -> bool {
        self.observations.iter().any(|o| o.measure == measure)
    }

    /// Signed day offset of `date` relative to the diagnosis date.
    pub fn offset_days(&self, date: NaiveDate) -> i64 {
        (date - self.diagnosis_date).num_days()
    }
}

/// Binary 2-year outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurvivalStatus {
    Survived2y,
    DeceasedWithin2y,
}

impl SurvivalStatus {
    /// `0` for survivors, `1` for deaths within two years.
    pub fn target(self) -> u8 {
        match self {
            SurvivalStatus::Survived2y => 0,
            SurvivalStatus::DeceasedWithin2y => 1,
        }
    }
}

/// Deceased iff a death date exists and falls within 730 days of diagnosis.
/// A missing death date counts as survival.
pub fn survival_label(patient: &PatientRecord) -> SurvivalStatus {
    match patient.death_date {
        Some(death) if patient.offset_days(death) <= TWO_YEARS_DAYS => SurvivalStatus::DeceasedWithin2y,
        _ => SurvivalStatus::Survived2y,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    patients: Vec<PatientRecord>,
    data_end_date: NaiveDate,
}

impl Cohort {
    /// Validates and assembles a cohort.
    ///
    /// Rejects duplicate patient ids, observations whose `patient_id` does not
    /// match their owner, negative or non-finite values, observations dated
    /// after `data_end_date`, and death dates preceding the diagnosis date.
    pub fn new(patients: Vec<PatientRecord>, data_end_date: NaiveDate) -> Result<Self> {
        let mut seen = HashSet::with_capacity(patients.len());
        for p in &patients {
            let invalid = |message: String| Error::Schema {
                file: "cohort".into(),
                message: format!("patient `{}`: {message}", p.patient_id),
            };
            if !seen.insert(p.patient_id.as_str()) {
                return Err(invalid("duplicate patient_id".into()));
            }
            if let Some(death) = p.death_date {
                if death < p.diagnosis_date {
                    return Err(invalid("death_date before diagnosis_date".into()));
                }
            }
            for o in &p.observations {
                if o.patient_id != p.patient_id {
                    return Err(invalid(format!("carries an observation of patient `{}`", o.patient_id)));
                }
                if !o.value.is_finite() || o.value < 0.0 {
                    return Err(invalid(format!("invalid value {}", o.value)));
                }
                if o.date > data_end_date {
                    return Err(invalid(format!(
                        "observation dated {} after data end {}",
                        o.date, data_end_date
                    )));
                }
            }
        }
        Ok(Self {
            patients,
            data_end_date,
        })
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn data_end_date(&self) -> NaiveDate {
        self.data_end_date
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// Keeps the patients matching `keep`; validity is inherited.
    fn retain_by(&self, mut keep: impl FnMut(&PatientRecord) -> bool) -> Cohort {
        Cohort {
            patients: self.patients.iter().filter(|p| keep(p)).cloned().collect(),
            data_end_date: self.data_end_date,
        }
    }
}

/// Counts produced by [`apply_inclusion_filters`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub removed_insufficient_followup: usize,
    pub removed_incomplete_panel: usize,
    pub retained: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exclusion {
    InsufficientFollowup,
    IncompletePanel,
}

impl Exclusion {
    pub fn reason(self) -> &'static str {
        match self {
            Exclusion::InsufficientFollowup => "insufficient follow-up",
            Exclusion::IncompletePanel => "incomplete panel",
        }
    }
}

fn has_followup(p: &PatientRecord, data_end: NaiveDate) -> bool {
    p.offset_days(data_end) >= TWO_YEARS_DAYS
}

/// Why `patient` would be excluded, if at all. Follow-up is checked first.
pub fn exclusion_reason(patient: &PatientRecord, data_end: NaiveDate) -> Option<Exclusion> {
    if !has_followup(patient, data_end) {
        Some(Exclusion::InsufficientFollowup)
    } else if !Measure::ALL.iter().all(|&m| patient.has_measure(m)) {
        Some(Exclusion::IncompletePanel)
    } else {
        None
    }
}

/// Keeps patients diagnosed at least 730 days before the data end date that
/// have at least one observation of every measure.
pub fn apply_inclusion_filters(cohort: &Cohort) -> (Cohort, FilterReport) {
    let mut report = FilterReport::default();
    let end = cohort.data_end_date;
    let filtered = cohort.retain_by(|p| match exclusion_reason(p, end) {
        None => {
            report.retained += 1;
            true
        }
        Some(Exclusion::InsufficientFollowup) => {
            report.removed_insufficient_followup += 1;
            false
        }
        Some(Exclusion::IncompletePanel) => {
            report.removed_incomplete_panel += 1;
            false
        }
    });
    (filtered, report)
}

/// Applies only the follow-up filter; used for history statistics that
/// predate the full-panel requirement.
pub fn apply_followup_filter(cohort: &Cohort) -> Cohort {
    let end = cohort.data_end_date;
    cohort.retain_by(|p| has_followup(p, end))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn obs(id: &str, measure: Measure, d: &str) -> PathologyObservation {
        PathologyObservation {
            patient_id: id.into(),
            measure,
            value: 300.0,
            date: date(d),
            range: ReferenceRange::new(150.0, 450.0).unwrap(),
        }
    }

    fn patient(id: &str, diagnosis: &str, measures: &[Measure]) -> PatientRecord {
        PatientRecord {
            patient_id: id.into(),
            sex: Sex::Female,
            age_at_diagnosis: 70,
            diagnosis_date: date(diagnosis),
            death_date: None,
            observations: measures.iter().map(|&m| obs(id, m, diagnosis)).collect(),
        }
    }

    #[test]
    fn range_rejects_inversion() {
        assert!(ReferenceRange::new(450.0, 150.0).is_none());
        assert!(ReferenceRange::new(1.0, 1.0).is_none());
        assert!(ReferenceRange::new(f64::NAN, 1.0).is_none());
        assert!(ReferenceRange::new(150.0, 450.0).is_some());
    }

    #[test]
    fn filters_follow_spec_examples() {
        let end = date("2017-12-31");
        let cohort = Cohort::new(
            vec![
                patient("keep", "2014-12-31", &Measure::ALL),
                patient("recent", "2016-12-31", &Measure::ALL),
                patient("no_rdw", "2014-12-31", &Measure::ALL[..4]),
            ],
            end,
        )
        .unwrap();
        let (filtered, report) = apply_inclusion_filters(&cohort);
        let ids: Vec<_> = filtered.patients().iter().map(|p| p.patient_id.as_str()).collect();
        assert_eq!(ids, ["keep"]);
        assert_eq!(
            report,
            FilterReport {
                removed_insufficient_followup: 1,
                removed_incomplete_panel: 1,
                retained: 1
            }
        );
        assert_eq!(
            exclusion_reason(&cohort.patients()[1], end).unwrap().reason(),
            "insufficient follow-up"
        );
        assert_eq!(
            exclusion_reason(&cohort.patients()[2], end).unwrap().reason(),
            "incomplete panel"
        );
        // input untouched, second pass is a no-op
        assert_eq!(cohort.len(), 3);
        let (again, _) = apply_inclusion_filters(&filtered);
        assert_eq!(again, filtered);
    }

    #[test]
    fn followup_boundary_is_inclusive() {
        let end = date("2017-12-31");
        let d = end - chrono::Duration::days(TWO_YEARS_DAYS);
        let p = patient("a", &d.to_string(), &Measure::ALL);
        assert_eq!(exclusion_reason(&p, end), None);
        let p = patient("b", &(d + chrono::Duration::days(1)).to_string(), &Measure::ALL);
        assert_eq!(exclusion_reason(&p, end), Some(Exclusion::InsufficientFollowup));
    }

    #[test]
    fn survival_label_boundaries() {
        let mut p = patient("a", "2010-01-01", &Measure::ALL);
        assert_eq!(survival_label(&p), SurvivalStatus::Survived2y);
        p.death_date = Some(p.diagnosis_date + chrono::Duration::days(100));
        assert_eq!(survival_label(&p), SurvivalStatus::DeceasedWithin2y);
        p.death_date = Some(p.diagnosis_date + chrono::Duration::days(730));
        assert_eq!(survival_label(&p), SurvivalStatus::DeceasedWithin2y);
        p.death_date = Some(p.diagnosis_date + chrono::Duration::days(731));
        assert_eq!(survival_label(&p), SurvivalStatus::Survived2y);
    }

    #[test]
    fn cohort_rejects_duplicates_and_late_observations() {
        let end = date("2017-12-31");
        let dup = Cohort::new(
            vec![patient("a", "2010-01-01", &[]), patient("a", "2011-01-01", &[])],
            end,
        );
        assert!(dup.unwrap_err().to_string().contains("duplicate"));

        let mut late = patient("a", "2010-01-01", &[Measure::Mcv]);
        late.observations[0].date = date("2018-01-01");
        assert!(Cohort::new(vec![late], end).is_err());

        let mut dead = patient("a", "2010-01-01", &[]);
        dead.death_date = Some(date("2009-12-31"));
        assert!(Cohort::new(vec![dead], end).is_err());
    }

    #[test]
    fn measure_parsing() {
        for m in Measure::ALL {
            assert_eq!(m.as_str().parse::<Measure>().unwrap(), m);
        }
        assert!("HB".parse::<Measure>().is_err());
    }
}
