use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Cohort, Measure, PathologyObservation, PatientRecord, ReferenceRange, Sex};
use crate::error::{Error, Result};

pub const PATIENTS_FILE: &str = "patients.csv";
pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const COHORT_META_FILE: &str = "cohort_meta.json";

const PATIENT_COLUMNS: [&str; 5] = ["patient_id", "sex", "age_at_diagnosis", "diagnosis_date", "death_date"];
const OBSERVATION_COLUMNS: [&str; 6] = ["patient_id", "measure", "value", "date", "ref_low", "ref_high"];

/// Sidecar written next to the cohort tables so the extract end date travels
/// with the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortMeta {
    pub data_end_date: NaiveDate,
}

struct Rows<'a> {
    file: &'a str,
    reader: csv::Reader<Box<dyn Read + 'a>>,
}

impl<'a> Rows<'a> {
    fn open(file: &'a str, input: Box<dyn Read + 'a>, expected: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = reader.headers()?;
        if headers.iter().ne(expected.iter().copied()) {
            return Err(Error::Schema {
                file: file.to_string(),
                message: format!(
                    "header must be `{}`, found `{}`",
                    expected.join(","),
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        Ok(Self { file, reader })
    }

    fn for_each(mut self, mut f: impl FnMut(&Record<'_>) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    f(&Record {
                        file: self.file,
                        line,
                        record: &record,
                    })?;
                }
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    return Err(Error::row(self.file, line, "*", e.to_string()));
                }
            }
        }
    }
}

struct Record<'a> {
    file: &'a str,
    line: u64,
    record: &'a csv::StringRecord,
}

impl Record<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::row(self.file, self.line, field, message)
    }

    fn raw(&self, idx: usize, field: &str) -> Result<&str> {
        self.record.get(idx).ok_or_else(|| self.err(field, "missing field"))
    }

    fn parse<T: FromStr>(&self, idx: usize, field: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(idx, field)?;
        raw.parse::<T>()
            .map_err(|e| self.err(field, format!("cannot parse `{raw}`: {e}")))
    }

    fn date(&self, idx: usize, field: &str) -> Result<NaiveDate> {
        let raw = self.raw(idx, field)?;
        NaiveDate::parse_from_str(raw, "%Y-%m-%d")
            .map_err(|e| self.err(field, format!("cannot parse date `{raw}`: {e}")))
    }

    fn number(&self, idx: usize, field: &str) -> Result<f64> {
        let v: f64 = self.parse(idx, field)?;
        if !v.is_finite() {
            return Err(self.err(field, format!("non-finite value {v}")));
        }
        Ok(v)
    }
}

/// Parses the two cohort tables. Any malformed row aborts ingestion with an
/// error naming the file, line and field; no row is dropped silently.
pub fn ingest_cohort_from_readers<'a>(
    patients_name: &str,
    patients: impl Read + 'a,
    observations_name: &str,
    observations: impl Read + 'a,
    data_end_date: NaiveDate,
) -> Result<Cohort> {
    let mut records: Vec<PatientRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    Rows::open(patients_name, Box::new(patients), &PATIENT_COLUMNS)?.for_each(|r| {
        let patient_id = r.raw(0, "patient_id")?.to_string();
        if patient_id.is_empty() {
            return Err(r.err("patient_id", "empty identifier"));
        }
        let sex: Sex = r.parse(1, "sex")?;
        let age_at_diagnosis: u32 = r.parse(2, "age_at_diagnosis")?;
        let diagnosis_date = r.date(3, "diagnosis_date")?;
        let death_date = match r.raw(4, "death_date")? {
            "" => None,
            _ => Some(r.date(4, "death_date")?),
        };
        if let Some(death) = death_date {
            if death < diagnosis_date {
                return Err(r.err(
                    "death_date",
                    format!("death_date {death} precedes diagnosis_date {diagnosis_date}"),
                ));
            }
        }
        if index.contains_key(&patient_id) {
            return Err(r.err("patient_id", format!("duplicate patient_id `{patient_id}`")));
        }
        index.insert(patient_id.clone(), records.len());
        records.push(PatientRecord {
            patient_id,
            sex,
            age_at_diagnosis,
            diagnosis_date,
            death_date,
            observations: Vec::new(),
        });
        Ok(())
    })?;

    Rows::open(observations_name, Box::new(observations), &OBSERVATION_COLUMNS)?.for_each(|r| {
        let patient_id = r.raw(0, "patient_id")?;
        let Some(&slot) = index.get(patient_id) else {
            return Err(r.err(
                "patient_id",
                format!("observation references unknown patient `{patient_id}`"),
            ));
        };
        let measure: Measure = r.parse(1, "measure")?;
        let value = r.number(2, "value")?;
        if value < 0.0 {
            return Err(r.err("value", format!("negative value {value}")));
        }
        let date = r.date(3, "date")?;
        if date > data_end_date {
            return Err(r.err(
                "date",
                format!("observation dated {date} after data end date {data_end_date}"),
            ));
        }
        let low = r.number(4, "ref_low")?;
        let high = r.number(5, "ref_high")?;
        let range = ReferenceRange::new(low, high).ok_or_else(|| {
            r.err(
                "ref_low",
                format!("inverted reference range: ref_low {low} >= ref_high {high}"),
            )
        })?;
        records[slot].observations.push(PathologyObservation {
            patient_id: patient_id.to_string(),
            measure,
            value,
            date,
            range,
        });
        Ok(())
    })?;

    Cohort::new(records, data_end_date)
}

pub fn ingest_cohort(patients_path: &Path, observations_path: &Path, data_end_date: NaiveDate) -> Result<Cohort> {
    let open = |p: &Path| File::open(p).map_err(|e| Error::io(p, e));
    ingest_cohort_from_readers(
        &patients_path.display().to_string(),
        open(patients_path)?,
        &observations_path.display().to_string(),
        open(observations_path)?,
        data_end_date,
    )
}

/// Reads `patients.csv` and `observations.csv` from `dir`. The data end date
/// comes from `override_end` when given, else from `cohort_meta.json`.
pub fn read_cohort_dir(dir: &Path, override_end: Option<NaiveDate>) -> Result<Cohort> {
    let end = match override_end {
        Some(d) => d,
        None => {
            let meta_path = dir.join(COHORT_META_FILE);
            let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
            serde_json::from_str::<CohortMeta>(&text)?.data_end_date
        }
    };
    ingest_cohort(&dir.join(PATIENTS_FILE), &dir.join(OBSERVATIONS_FILE), end)
}

fn date_str(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

pub fn write_patients_csv<W: Write>(cohort: &Cohort, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PATIENT_COLUMNS)?;
    for p in cohort.patients() {
        w.write_record([
            p.patient_id.clone(),
            p.sex.code().to_string(),
            p.age_at_diagnosis.to_string(),
            date_str(p.diagnosis_date),
            p.death_date.map(date_str).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("patients.csv", e))?;
    Ok(())
}

pub fn write_observations_csv<W: Write>(cohort: &Cohort, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(OBSERVATION_COLUMNS)?;
    for o in cohort.patients().iter().flat_map(|p| &p.observations) {
        // f64 Display is the shortest representation that parses back exactly
        w.write_record([
            o.patient_id.clone(),
            o.measure.as_str().to_string(),
            o.value.to_string(),
            date_str(o.date),
            o.range.low().to_string(),
            o.range.high().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("observations.csv", e))?;
    Ok(())
}

/// Writes the two tables plus the end-date sidecar into `dir`.
pub fn write_cohort_dir(cohort: &Cohort, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let p = dir.join(name);
        File::create(&p).map_err(|e| Error::io(p, e))
    };
    write_patients_csv(cohort, create(PATIENTS_FILE)?)?;
    write_observations_csv(cohort, create(OBSERVATIONS_FILE)?)?;
    let meta = CohortMeta {
        data_end_date: cohort.data_end_date(),
    };
    let meta_path = dir.join(COHORT_META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(meta_path, e))?;
    Ok(())
}
