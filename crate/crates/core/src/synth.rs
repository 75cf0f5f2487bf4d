//! Synthetic cohorts with a tunable link between out-of-range history and
//! 2-year mortality.
//!
//! Each patient draws a latent risk flag. Per measure, the flag sets the
//! chance of having any hard out-of-range results; each such result lands in
//! the close diagnosis window with probability `window_placement_bias`.
//! Death within two years is then drawn from the mortality of the patient's
//! observed group for `mortality_measure`, shifted by sex.
//!
//! Patients are generated from independent per-patient streams of one
//! ChaCha8 seed, so output depends only on the configuration.

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Measure, PathologyObservation, PatientRecord, ReferenceRange, Sex, TWO_YEARS_DAYS};
use crate::error::{Error, Result};
use crate::labeling::{assign_group, LabelingConfig};
use crate::range::soft_bounds;

/// One value per measure, serialized with readable keys.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub struct PerMeasure<T> {
    pub platelets: T,
    pub mcv: T,
    pub mch: T,
    pub mchc: T,
    pub rdw: T,
}

impl<T: Copy> PerMeasure<T> {
    pub fn splat(v: T) -> Self {
        Self {
            platelets: v,
            mcv: v,
            mch: v,
            mchc: v,
            rdw: v,
        }
    }

    pub fn get(&self, m: Measure) -> T {
        match m {
            Measure::Platelets => self.platelets,
            Measure::Mcv => self.mcv,
            Measure::Mch => self.mch,
            Measure::Mchc => self.mchc,
            Measure::Rdw => self.rdw,
        }
    }
}

/// Bounds for sampling a laboratory's reference range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeJitter {
    pub low: [f64; 2],
    pub high: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub p_latent_high_risk: f64,
    pub p_oor_given_risk: PerMeasure<f64>,
    pub p_oor_given_no_risk: PerMeasure<f64>,
    /// Deceased-within-2y probability for groups G1, G2, G3.
    pub p_death_2y_by_group: [f64; 3],
    /// Measure whose group drives mortality.
    pub mortality_measure: Measure,
    /// Additive mortality shift for male patients per group. Female shifts
    /// are `-male * sex_ratio / (1 - sex_ratio)`, which leaves the group
    /// marginals at `p_death_2y_by_group`.
    pub male_mortality_shift: [f64; 3],
    /// Inclusive range for the number of observations per measure.
    pub obs_count_range: [usize; 2],
    /// Probability that an out-of-range result falls in the close window.
    pub window_placement_bias: f64,
    /// Probability that an in-range result sits between the hard and soft
    /// bounds.
    pub p_borderline: f64,
    pub range_jitter: PerMeasure<RangeJitter>,
    /// Probability of a male patient.
    pub sex_ratio: f64,
    /// Relative weights of age deciles 0-9, 10-19, ..., 90-99.
    pub age_distribution: [f64; 10],
    pub diagnosis_from: NaiveDate,
    pub diagnosis_to: NaiveDate,
    /// Look-back before diagnosis covered by the observation history.
    pub history_days: i64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_patients: 472,
            seed: 0,
            p_latent_high_risk: 0.3,
            p_oor_given_risk: PerMeasure {
                platelets: 0.55,
                mcv: 0.5,
                mch: 0.55,
                mchc: 0.5,
                rdw: 0.6,
            },
            p_oor_given_no_risk: PerMeasure {
                platelets: 0.15,
                mcv: 0.2,
                mch: 0.25,
                mchc: 0.22,
                rdw: 0.25,
            },
            p_death_2y_by_group: [0.38, 0.46, 0.53],
            mortality_measure: Measure::Platelets,
            male_mortality_shift: [0.04, 0.03, 0.02],
            obs_count_range: [1, 10],
            window_placement_bias: 0.35,
            p_borderline: 0.1,
            range_jitter: PerMeasure {
                platelets: RangeJitter {
                    low: [140.0, 150.0],
                    high: [400.0, 450.0],
                },
                mcv: RangeJitter {
                    low: [75.0, 80.0],
                    high: [98.0, 100.0],
                },
                mch: RangeJitter {
                    low: [26.0, 27.0],
                    high: [32.0, 34.0],
                },
                mchc: RangeJitter {
                    low: [310.0, 320.0],
                    high: [350.0, 360.0],
                },
                rdw: RangeJitter {
                    low: [11.0, 11.5],
                    high: [14.0, 15.0],
                },
            },
            sex_ratio: 0.6,
            age_distribution: [0.0, 0.0, 0.0, 0.01, 0.04, 0.12, 0.25, 0.32, 0.2, 0.06],
            diagnosis_from: NaiveDate::from_ymd_opt(2008, 1, 1).unwrap(),
            diagnosis_to: NaiveDate::from_ymd_opt(2015, 12, 31).unwrap(),
            history_days: 730,
        }
    }
}

const CLOSE_WINDOW: (i64, i64) = (-60, 30);

impl GeneratorConfig {
    /// Planted-signal preset: strong coupling between out-of-range history
    /// and mortality.
    pub fn planted_signal(n_patients: usize, seed: u64) -> Self {
        Self {
            n_patients,
            seed,
            p_latent_high_risk: 0.35,
            p_death_2y_by_group: [0.15, 0.75, 0.9],
            male_mortality_shift: [0.0; 3],
            ..Self::default()
        }
    }

    /// Null preset: mortality independent of pathology history.
    pub fn null(n_patients: usize, seed: u64) -> Self {
        Self {
            n_patients,
            seed,
            p_death_2y_by_group: [0.4; 3],
            male_mortality_shift: [0.0; 3],
            ..Self::default()
        }
    }

    pub fn data_end_date(&self) -> NaiveDate {
        self.diagnosis_to + Duration::days(TWO_YEARS_DAYS)
    }

    fn female_shift(&self) -> [f64; 3] {
        let r = self.sex_ratio;
        if r >= 1.0 {
            return [0.0; 3];
        }
        self.male_mortality_shift.map(|s| -s * r / (1.0 - r))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let mut probs = vec![
            ("p_latent_high_risk", self.p_latent_high_risk),
            ("window_placement_bias", self.window_placement_bias),
            ("p_borderline", self.p_borderline),
            ("sex_ratio", self.sex_ratio),
        ];
        for m in Measure::ALL {
            probs.push(("p_oor_given_risk", self.p_oor_given_risk.get(m)));
            probs.push(("p_oor_given_no_risk", self.p_oor_given_no_risk.get(m)));
        }
        probs.extend(self.p_death_2y_by_group.iter().map(|&p| ("p_death_2y_by_group", p)));
        if let Some((name, p)) = probs.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
            return bad(format!("{name} = {p} is not a probability"));
        }
        let [lo, hi] = self.obs_count_range;
        if lo < 1 || hi > 50 || lo > hi {
            return bad(format!(
                "obs_count_range [{lo}, {hi}] must satisfy 1 <= min <= max <= 50"
            ));
        }
        for m in Measure::ALL {
            let j = self.range_jitter.get(m);
            let ordered = j.low[0] <= j.low[1] && j.high[0] <= j.high[1] && j.low[1] < j.high[0];
            if !ordered || j.low[0] < 0.0 || !j.high[1].is_finite() {
                return bad(format!(
                    "range_jitter for {m} must satisfy 0 <= low bounds < high bounds"
                ));
            }
        }
        if self.age_distribution.iter().any(|w| *w < 0.0 || !w.is_finite())
            || self.age_distribution.iter().sum::<f64>() <= 0.0
        {
            return bad("age_distribution needs non-negative weights with a positive sum".into());
        }
        if self.diagnosis_from > self.diagnosis_to {
            return bad("diagnosis_from is after diagnosis_to".into());
        }
        if self.history_days <= -CLOSE_WINDOW.0 {
            return bad(format!("history_days must exceed {}", -CLOSE_WINDOW.0));
        }
        Ok(())
    }
}

/// Uniform draw rounded to one decimal, as printed on laboratory reports.
/// Values are reported to two decimals, so rounding never crosses a bound.
fn uniform_bound(rng: &mut ChaCha8Rng, bounds: [f64; 2]) -> f64 {
    let v = if bounds[0] == bounds[1] {
        bounds[0]
    } else {
        rng.gen_range(bounds[0]..bounds[1])
    };
    (v * 10.0).round() / 10.0
}

fn sample_decile(rng: &mut ChaCha8Rng, weights: &[f64; 10]) -> u32 {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (d, w) in weights.iter().enumerate() {
        if u < *w {
            return d as u32;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0) as u32
}

/// Value strictly inside, on the soft border of, or outside `range`.
fn sample_value(rng: &mut ChaCha8Rng, range: &ReferenceRange, out_of_range: bool, borderline: bool) -> f64 {
    let width = range.width();
    let soft = soft_bounds(range, 0.025);
    let high_side = rng.gen_bool(0.5);
    let v = if out_of_range {
        let excess = rng.gen_range(0.01..0.3) * width;
        if high_side {
            range.high() + excess
        } else {
            range.low() - excess
        }
    } else if borderline {
        if high_side {
            rng.gen_range(soft.high..range.high())
        } else {
            rng.gen_range(range.low()..soft.low)
        }
    } else {
        rng.gen_range(soft.low..=soft.high)
    };
    // two decimals, as laboratories report
    (v.max(0.0) * 100.0).round() / 100.0
}

fn generate_patient(cfg: &GeneratorConfig, index: usize) -> PatientRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);

    let patient_id = format!("P{:06}", index + 1);
    let sex = if rng.gen_bool(cfg.sex_ratio) {
        Sex::Male
    } else {
        Sex::Female
    };
    let age_at_diagnosis = sample_decile(&mut rng, &cfg.age_distribution) * 10 + rng.gen_range(0..10);
    let span = (cfg.diagnosis_to - cfg.diagnosis_from).num_days();
    let diagnosis_date = cfg.diagnosis_from + Duration::days(rng.gen_range(0..=span));
    let high_risk = rng.gen_bool(cfg.p_latent_high_risk);

    let mut observations = Vec::new();
    for m in Measure::ALL {
        let p_oor = if high_risk {
            cfg.p_oor_given_risk.get(m)
        } else {
            cfg.p_oor_given_no_risk.get(m)
        };
        let count = rng.gen_range(cfg.obs_count_range[0]..=cfg.obs_count_range[1]);
        let n_oor = if rng.gen_bool(p_oor) {
            rng.gen_range(1..=count.min(3))
        } else {
            0
        };
        let jitter = cfg.range_jitter.get(m);
        for k in 0..count {
            let out_of_range = k < n_oor;
            let offset = if out_of_range && rng.gen_bool(cfg.window_placement_bias) {
                rng.gen_range(CLOSE_WINDOW.0..=CLOSE_WINDOW.1)
            } else if out_of_range {
                rng.gen_range(-cfg.history_days..CLOSE_WINDOW.0)
            } else {
                rng.gen_range(-cfg.history_days..=CLOSE_WINDOW.1)
            };
            let range = ReferenceRange::new(
                uniform_bound(&mut rng, jitter.low),
                uniform_bound(&mut rng, jitter.high),
            )
            .expect("validated jitter keeps low < high");
            let borderline = !out_of_range && rng.gen_bool(cfg.p_borderline);
            observations.push(PathologyObservation {
                patient_id: patient_id.clone(),
                measure: m,
                value: sample_value(&mut rng, &range, out_of_range, borderline),
                date: diagnosis_date + Duration::days(offset),
                range,
            });
        }
    }
    observations.sort_by_key(|o| (o.date, o.measure));

    let mut patient = PatientRecord {
        patient_id,
        sex,
        age_at_diagnosis,
        diagnosis_date,
        death_date: None,
        observations,
    };
    let group = assign_group(&patient, cfg.mortality_measure, &LabelingConfig::default())
        .expect("every measure has at least one observation");
    let shift = match sex {
        Sex::Male => cfg.male_mortality_shift,
        Sex::Female => cfg.female_shift(),
    };
    let p_death = (cfg.p_death_2y_by_group[group.index()] + shift[group.index()]).clamp(0.0, 1.0);
    let end = cfg.data_end_date();
    patient.death_date = if rng.gen_bool(p_death) {
        Some(diagnosis_date + Duration::days(rng.gen_range(1..=TWO_YEARS_DAYS)))
    } else {
        // half of the survivors die later within the extract
        let room = (end - diagnosis_date).num_days();
        (room > TWO_YEARS_DAYS && rng.gen_bool(0.5))
            .then(|| diagnosis_date + Duration::days(rng.gen_range(TWO_YEARS_DAYS + 1..=room)))
    };
    patient
}

pub fn generate(cfg: &GeneratorConfig) -> Result<Cohort> {
    cfg.validate()?;
    let patients = (0..cfg.n_patients).map(|i| generate_patient(cfg, i)).collect();
    Cohort::new(patients, cfg.data_end_date())
}
