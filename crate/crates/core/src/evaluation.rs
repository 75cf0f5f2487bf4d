//! Shared-fold cross-validation sweeps, cohort statistics and
//! feature-consistency analysis.
//!
//! A single stratified fold plan is drawn per run and reused by every
//! version, feature count and model family, so all cells are scored on the
//! same partitions. Features are ranked on the training rows of each fold
//! only.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{fit, Hyperparameters, ModelFamily};
use crate::cohort::{survival_label, Cohort, Measure, SurvivalStatus};
use crate::error::{Error, Result};
use crate::features::{age_group, build_matrix, FeatureMatrix};
use crate::labeling::{assign_group, label_cohort, Group, LabelingConfig, Version};
use crate::selection::{rank_features, RankedFeature};

pub const DEFAULT_FOLDS: usize = 10;

/// Stratified assignment of rows to folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub n_folds: usize,
    /// Fold index of each row.
    pub fold_of: Vec<usize>,
}

impl FoldPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    /// Hash of the fold's test-row set. Stable within a build only.
    pub fn digest(&self, fold: usize) -> u64 {
        let mut h = DefaultHasher::new();
        self.test_rows(fold).hash(&mut h);
        h.finish()
    }
}

/// Shuffles each class with one seeded stream and deals rows round-robin,
/// class 1 continuing where class 0 stopped. Fold sizes and per-fold class
/// counts then differ by at most one.
pub fn stratified_folds(target: &[u8], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {n_folds}")));
    }
    if target.len() < n_folds {
        return Err(Error::TooFewRows {
            rows: target.len(),
            folds: n_folds,
        });
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &t) in target.iter().enumerate() {
        by_class[usize::from(t != 0)].push(i);
    }
    if by_class.iter().any(Vec::is_empty) {
        return Err(Error::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; target.len()];
    let mut next = 0;
    for rows in &mut by_class {
        rows.shuffle(&mut rng);
        for &i in rows.iter() {
            fold_of[i] = next;
            next = (next + 1) % n_folds;
        }
    }
    Ok(FoldPlan { seed, n_folds, fold_of })
}

pub fn make_fold_plan(matrix: &FeatureMatrix, seed: u64) -> Result<FoldPlan> {
    stratified_folds(&matrix.target, DEFAULT_FOLDS, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub versions: Vec<Version>,
    pub families: Vec<ModelFamily>,
    pub k_min: usize,
    pub k_max: usize,
    pub n_folds: usize,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub jobs: usize,
    pub hp: Hyperparameters,
    pub labeling: LabelingConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            versions: Version::ALL.to_vec(),
            families: ModelFamily::ALL.to_vec(),
            k_min: 5,
            k_max: 25,
            n_folds: DEFAULT_FOLDS,
            seed: 0,
            jobs: 1,
            hp: Hyperparameters::default(),
            labeling: LabelingConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self, n_cols: usize) -> Result<()> {
        if self.versions.is_empty() || self.families.is_empty() {
            return Err(Error::Config(
                "at least one version and one model family are required".into(),
            ));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::Config(format!(
                "k range {}..={} is empty",
                self.k_min, self.k_max
            )));
        }
        if self.k_max > n_cols {
            return Err(Error::InvalidK {
                k: self.k_max,
                max: n_cols,
            });
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be positive".into()));
        }
        self.hp.validate()?;
        self.labeling.validate()
    }
}

/// One (version, model, k, fold) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub version: Version,
    pub model: ModelFamily,
    pub k: usize,
    pub fold: usize,
    pub accuracy: f64,
    /// `None` when the test fold has no positive rows.
    pub sensitivity: Option<f64>,
    /// `None` when the test fold has no negative rows.
    pub specificity: Option<f64>,
    pub train_accuracy: f64,
    pub n_test: usize,
    pub selected_features: Vec<String>,
    pub test_digest: u64,
    pub train_digest: u64,
}

/// Full training-fold ranking for one version and fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSelection {
    pub version: Version,
    pub fold: usize,
    pub ranking: Vec<RankedFeature>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_rows: usize,
    pub n_folds: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Sorted by version, model, k, fold.
    pub records: Vec<CellRecord>,
    /// Sorted by version, fold.
    pub selections: Vec<FoldSelection>,
    /// Accuracy of predicting each training fold's majority class.
    pub baseline_fold_accuracy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub version: Version,
    pub model: ModelFamily,
    pub k: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation across folds.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub version: Version,
    pub feature: String,
    pub k: usize,
    pub selection_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub version: Version,
    pub k: usize,
    pub mean_overlap: f64,
    pub min_overlap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub n_rows: usize,
    pub n_folds: usize,
    pub baseline_accuracy: f64,
    /// Mean over all cells of the per-cell mean CV accuracy.
    pub mean_cell_accuracy: f64,
    pub best_cell: SummaryRow,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl EvaluationReport {
    pub fn baseline_accuracy(&self) -> f64 {
        mean(&self.baseline_fold_accuracy)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut cells: BTreeMap<(Version, ModelFamily, usize), Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            cells.entry((r.version, r.model, r.k)).or_default().push(r.accuracy);
        }
        cells
            .into_iter()
            .map(|((version, model, k), acc)| SummaryRow {
                version,
                model,
                k,
                mean_accuracy: mean(&acc),
                std: sample_std(&acc),
            })
            .collect()
    }

    /// Per version, feature (in column order) and k: the fraction of folds
    /// whose top-k contains the feature.
    pub fn feature_consistency(&self) -> Vec<ConsistencyRow> {
        let mut out = Vec::new();
        let mut versions: Vec<Version> = self.selections.iter().map(|s| s.version).collect();
        versions.dedup();
        for v in versions {
            let folds: Vec<&FoldSelection> = self.selections.iter().filter(|s| s.version == v).collect();
            // rank position of each column, per fold
            let n_cols = folds[0].ranking.len();
            let mut names = vec![String::new(); n_cols];
            let mut position = vec![vec![0usize; n_cols]; folds.len()];
            for (fi, s) in folds.iter().enumerate() {
                for (pos, f) in s.ranking.iter().enumerate() {
                    position[fi][f.column] = pos;
                    names[f.column].clone_from(&f.name);
                }
            }
            for (col, name) in names.iter().enumerate() {
                for k in self.k_min..=self.k_max {
                    let hits = position.iter().filter(|p| p[col] < k).count();
                    out.push(ConsistencyRow {
                        version: v,
                        feature: name.clone(),
                        k,
                        selection_fraction: hits as f64 / folds.len() as f64,
                    });
                }
            }
        }
        out
    }

    /// Size of the intersection of top-k sets over all pairs of folds.
    pub fn overlap(&self) -> Vec<OverlapRow> {
        let mut out = Vec::new();
        let mut versions: Vec<Version> = self.selections.iter().map(|s| s.version).collect();
        versions.dedup();
        for v in versions {
            let folds: Vec<&FoldSelection> = self.selections.iter().filter(|s| s.version == v).collect();
            for k in self.k_min..=self.k_max {
                let sets: Vec<Vec<usize>> = folds
                    .iter()
                    .map(|s| {
                        let mut c: Vec<usize> = s.ranking[..k].iter().map(|f| f.column).collect();
                        c.sort_unstable();
                        c
                    })
                    .collect();
                let mut sizes = Vec::new();
                for a in 0..sets.len() {
                    for b in a + 1..sets.len() {
                        sizes.push(sets[a].iter().filter(|c| sets[b].binary_search(c).is_ok()).count());
                    }
                }
                let as_f64: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
                out.push(OverlapRow {
                    version: v,
                    k,
                    mean_overlap: if sizes.is_empty() { k as f64 } else { mean(&as_f64) },
                    min_overlap: sizes.iter().copied().min().unwrap_or(k),
                });
            }
        }
        out
    }

    pub fn headline(&self) -> Headline {
        let summary = self.summary();
        let best = summary
            .iter()
            .fold(None::<&SummaryRow>, |best, r| match best {
                Some(b) if b.mean_accuracy >= r.mean_accuracy => Some(b),
                _ => Some(r),
            })
            .expect("a report has at least one cell")
            .clone();
        Headline {
            n_rows: self.n_rows,
            n_folds: self.n_folds,
            baseline_accuracy: self.baseline_accuracy(),
            mean_cell_accuracy: mean(&summary.iter().map(|r| r.mean_accuracy).collect::<Vec<_>>()),
            best_cell: best,
        }
    }
}

fn project(matrix: &FeatureMatrix, rows: &[usize], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&i| cols.iter().map(|&j| f64::from(matrix.rows[i][j])).collect())
        .collect()
}

fn row_digest(rows: &[usize]) -> u64 {
    let mut h = DefaultHasher::new();
    rows.hash(&mut h);
    h.finish()
}

fn majority(y: &[u8]) -> u8 {
    u8::from(2 * y.iter().filter(|&&t| t != 0).count() > y.len())
}

fn run_fold(
    matrix: &FeatureMatrix,
    plan: &FoldPlan,
    fold: usize,
    cfg: &SweepConfig,
) -> Result<(FoldSelection, Vec<CellRecord>)> {
    let train = plan.train_rows(fold);
    let test = plan.test_rows(fold);
    let (train_digest, test_digest) = (row_digest(&train), row_digest(&test));
    let y_train: Vec<u8> = train.iter().map(|&i| matrix.target[i]).collect();
    let y_test: Vec<u8> = test.iter().map(|&i| matrix.target[i]).collect();
    let ranking = rank_features(matrix, &train)?;
    let positives = y_test.iter().filter(|&&t| t == 1).count();
    let negatives = y_test.len() - positives;

    let mut records = Vec::new();
    for k in cfg.k_min..=cfg.k_max {
        let cols: Vec<usize> = ranking[..k].iter().map(|f| f.column).collect();
        let names: Vec<String> = ranking[..k].iter().map(|f| f.name.clone()).collect();
        let x_train = project(matrix, &train, &cols);
        let x_test = project(matrix, &test, &cols);
        for &family in &cfg.families {
            let model = fit(family, &x_train, &y_train, &names, &cfg.hp)?;
            let pred = model.predict(&x_test)?;
            let fit_pred = model.predict(&x_train)?;
            let correct = pred.iter().zip(&y_test).filter(|(p, t)| p == t).count();
            let tp = pred.iter().zip(&y_test).filter(|(&p, &t)| p == 1 && t == 1).count();
            let tn = pred.iter().zip(&y_test).filter(|(&p, &t)| p == 0 && t == 0).count();
            let train_correct = fit_pred.iter().zip(&y_train).filter(|(p, t)| p == t).count();
            records.push(CellRecord {
                version: matrix.version,
                model: family,
                k,
                fold,
                accuracy: correct as f64 / y_test.len() as f64,
                sensitivity: (positives > 0).then(|| tp as f64 / positives as f64),
                specificity: (negatives > 0).then(|| tn as f64 / negatives as f64),
                train_accuracy: train_correct as f64 / y_train.len() as f64,
                n_test: y_test.len(),
                selected_features: names.clone(),
                test_digest,
                train_digest,
            });
        }
    }
    let selection = FoldSelection {
        version: matrix.version,
        fold,
        ranking,
    };
    Ok((selection, records))
}

/// Cross-validates every matrix on one shared fold plan. All matrices must
/// describe the same rows with the same target.
pub fn evaluate_matrices(matrices: &[FeatureMatrix], plan: &FoldPlan, cfg: &SweepConfig) -> Result<EvaluationReport> {
    let first = matrices.first().ok_or(Error::EmptyInput)?;
    for m in matrices {
        cfg.validate(m.n_cols())?;
        if m.target != first.target || m.n_rows() != plan.fold_of.len() {
            return Err(Error::LengthMismatch(m.n_rows(), plan.fold_of.len()));
        }
    }
    let tasks: Vec<(&FeatureMatrix, usize)> = matrices
        .iter()
        .flat_map(|m| (0..plan.n_folds).map(move |f| (m, f)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<(FoldSelection, Vec<CellRecord>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(m, f)| run_fold(m, plan, f, cfg))
            .collect::<Result<_>>()
    })?;

    let mut selections = Vec::with_capacity(results.len());
    let mut records = Vec::new();
    for (s, r) in results {
        selections.push(s);
        records.extend(r);
    }
    selections.sort_by_key(|s| (s.version, s.fold));
    records.sort_by_key(|r| (r.version, r.model, r.k, r.fold));

    let baseline_fold_accuracy = (0..plan.n_folds)
        .map(|f| {
            let train: Vec<u8> = plan.train_rows(f).iter().map(|&i| first.target[i]).collect();
            let guess = majority(&train);
            let test = plan.test_rows(f);
            test.iter().filter(|&&i| first.target[i] == guess).count() as f64 / test.len() as f64
        })
        .collect();

    Ok(EvaluationReport {
        n_rows: first.n_rows(),
        n_folds: plan.n_folds,
        k_min: cfg.k_min,
        k_max: cfg.k_max,
        records,
        selections,
        baseline_fold_accuracy,
    })
}

/// Labels the (already filtered) cohort, builds one matrix per version and
/// cross-validates them all on a single fold plan seeded by `cfg.seed`.
pub fn run_sweep(cohort: &Cohort, cfg: &SweepConfig) -> Result<EvaluationReport> {
    if cohort.is_empty() {
        return Err(Error::EmptyCohort);
    }
    cfg.labeling.validate()?;
    let labels = label_cohort(cohort, &cfg.labeling)?;
    let mut versions = cfg.versions.clone();
    versions.sort();
    versions.dedup();
    let matrices = versions
        .iter()
        .map(|&v| build_matrix(cohort, &labels, v, None))
        .collect::<Result<Vec<_>>>()?;
    let plan = stratified_folds(&matrices[0].target, cfg.n_folds, cfg.seed)?;
    evaluate_matrices(&matrices, &plan, cfg)
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt6)
}

/// `version,model,k,fold,accuracy,sensitivity,specificity`
pub fn write_results_csv<W: Write>(report: &EvaluationReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "version",
        "model",
        "k",
        "fold",
        "accuracy",
        "sensitivity",
        "specificity",
    ])?;
    for r in &report.records {
        w.write_record([
            r.version.as_str().to_string(),
            r.model.as_str().to_string(),
            r.k.to_string(),
            r.fold.to_string(),
            fmt6(r.accuracy),
            fmt_opt(r.sensitivity),
            fmt_opt(r.specificity),
        ])?;
    }
    w.flush().map_err(|e| Error::io("results.csv", e))
}

/// `version,model,k,mean_accuracy,std`
pub fn write_summary_csv<W: Write>(summary: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["version", "model", "k", "mean_accuracy", "std"])?;
    for r in summary {
        w.write_record([
            r.version.as_str().to_string(),
            r.model.as_str().to_string(),
            r.k.to_string(),
            fmt6(r.mean_accuracy),
            fmt6(r.std),
        ])?;
    }
    w.flush().map_err(|e| Error::io("summary.csv", e))
}

/// `version,feature,k,selection_fraction`
pub fn write_consistency_csv<W: Write>(rows: &[ConsistencyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["version", "feature", "k", "selection_fraction"])?;
    for r in rows {
        w.write_record([
            r.version.as_str().to_string(),
            r.feature.clone(),
            r.k.to_string(),
            fmt6(r.selection_fraction),
        ])?;
    }
    w.flush().map_err(|e| Error::io("consistency.csv", e))
}

/// `version,k,mean_overlap,min_overlap`
pub fn write_overlap_csv<W: Write>(rows: &[OverlapRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["version", "k", "mean_overlap", "min_overlap"])?;
    for r in rows {
        w.write_record([
            r.version.as_str().to_string(),
            r.k.to_string(),
            fmt6(r.mean_overlap),
            r.min_overlap.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("overlap.csv", e))
}

fn create(dir: &Path, name: &str) -> Result<File> {
    let path = dir.join(name);
    File::create(&path).map_err(|e| Error::io(path, e))
}

/// Writes results, summary, consistency and overlap tables plus
/// `headline.json` into `dir`.
pub fn write_report_dir(report: &EvaluationReport, dir: &Path) -> Result<()> {
    write_results_csv(report, create(dir, "results.csv")?)?;
    write_summary_csv(&report.summary(), create(dir, "summary.csv")?)?;
    write_consistency_csv(&report.feature_consistency(), create(dir, "consistency.csv")?)?;
    write_overlap_csv(&report.overlap(), create(dir, "overlap.csv")?)?;
    let mut f = create(dir, "headline.json")?;
    serde_json::to_writer_pretty(&mut f, &report.headline())?;
    writeln!(f).map_err(|e| Error::io(dir.join("headline.json"), e))
}

/// One cell of the group mortality table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub measure: Measure,
    pub group: Group,
    /// `all`, `sex` or `age_group`.
    pub stratum_kind: String,
    /// `all`, `M`/`F`, or the age group digit.
    pub stratum: String,
    pub n_patients: usize,
    pub n_deceased: usize,
    /// Deceased within two years, in percent; 0 for an empty cell.
    pub pct_deceased: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortStatsTable {
    pub rows: Vec<StatsRow>,
}

impl CohortStatsTable {
    pub fn get(&self, measure: Measure, group: Group, stratum_kind: &str, stratum: &str) -> Option<&StatsRow> {
        self.rows.iter().find(|r| {
            r.measure == measure && r.group == group && r.stratum_kind == stratum_kind && r.stratum == stratum
        })
    }

    /// Unstratified deceased percentage for one group.
    pub fn pct(&self, measure: Measure, group: Group) -> f64 {
        self.get(measure, group, "all", "all").map_or(0.0, |r| r.pct_deceased)
    }
}

/// Patients lacking any observation of a measure are left out of that
/// measure's counts, so each measure's counts sum to the number of patients
/// tested for it (the whole cohort once the panel filter has run).
pub fn cohort_stats(cohort: &Cohort, cfg: &LabelingConfig) -> Result<CohortStatsTable> {
    // (measure, group, kind, stratum) -> (n, deceased)
    let mut cells: BTreeMap<(Measure, Group, &'static str, String), (usize, usize)> = BTreeMap::new();
    let mut age_groups: Vec<u32> = cohort
        .patients()
        .iter()
        .map(|p| age_group(p.age_at_diagnosis))
        .collect();
    age_groups.sort_unstable();
    age_groups.dedup();
    for m in Measure::ALL {
        for g in Group::ALL {
            cells.insert((m, g, "all", "all".into()), (0, 0));
            for s in ["M", "F"] {
                cells.insert((m, g, "sex", s.into()), (0, 0));
            }
            for a in &age_groups {
                cells.insert((m, g, "age_group", a.to_string()), (0, 0));
            }
        }
    }
    for p in cohort.patients() {
        let dead = usize::from(survival_label(p) == SurvivalStatus::DeceasedWithin2y);
        for m in Measure::ALL {
            if !p.has_measure(m) {
                continue;
            }
            let g = assign_group(p, m, cfg)?;
            for key in [
                (m, g, "all", "all".to_string()),
                (m, g, "sex", p.sex.code().to_string()),
                (m, g, "age_group", age_group(p.age_at_diagnosis).to_string()),
            ] {
                let e = cells.get_mut(&key).expect("cell pre-seeded");
                e.0 += 1;
                e.1 += dead;
            }
        }
    }
    let kind_order = |k: &str| ["all", "sex", "age_group"].iter().position(|x| *x == k).unwrap();
    let mut rows: Vec<StatsRow> = cells
        .into_iter()
        .map(|((measure, group, kind, stratum), (n, d))| StatsRow {
            measure,
            group,
            stratum_kind: kind.to_string(),
            stratum,
            n_patients: n,
            n_deceased: d,
            pct_deceased: if n == 0 { 0.0 } else { 100.0 * d as f64 / n as f64 },
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.measure, kind_order(&a.stratum_kind), a.group)
            .cmp(&(b.measure, kind_order(&b.stratum_kind), b.group))
            .then_with(|| {
                let num = |s: &str| s.parse::<u32>().ok();
                num(&a.stratum)
                    .cmp(&num(&b.stratum))
                    .then_with(|| a.stratum.cmp(&b.stratum))
            })
    });
    Ok(CohortStatsTable { rows })
}

/// `measure,group,stratum_kind,stratum,n_patients,n_deceased,pct_deceased`
pub fn write_stats_csv<W: Write>(table: &CohortStatsTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "measure",
        "group",
        "stratum_kind",
        "stratum",
        "n_patients",
        "n_deceased",
        "pct_deceased",
    ])?;
    for r in &table.rows {
        w.write_record([
            r.measure.as_str().to_string(),
            r.group.as_str().to_string(),
            r.stratum_kind.clone(),
            r.stratum.clone(),
            r.n_patients.to_string(),
            r.n_deceased.to_string(),
            format!("{:.2}", r.pct_deceased),
        ])?;
    }
    w.flush().map_err(|e| Error::io("stats.csv", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::column_names;
    use proptest::prelude::*;

    fn toy_matrix(n: usize, seed: u64) -> FeatureMatrix {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = column_names(None);
        let rows: Vec<Vec<u32>> = (0..n)
            .map(|_| names.iter().map(|_| rng.gen_range(1..=3)).collect())
            .collect();
        // column 0 drives the target
        let target = rows
            .iter()
            .map(|r| u8::from(r[0] == 3 || (r[0] == 2 && rng.gen_bool(0.3))))
            .collect();
        FeatureMatrix {
            version: Version::V1,
            secondary: None,
            patient_ids: (0..n).map(|i| format!("P{i}")).collect(),
            column_names: names,
            rows,
            target,
        }
    }

    #[test]
    fn fold_plan_examples() {
        let target: Vec<u8> = (0..100).map(|i| u8::from(i < 40)).collect();
        let plan = stratified_folds(&target, 10, 3).unwrap();
        for f in 0..10 {
            let rows = plan.test_rows(f);
            assert_eq!(rows.len(), 10);
            assert_eq!(rows.iter().filter(|&&i| target[i] == 1).count(), 4);
        }
        assert_eq!(plan, stratified_folds(&target, 10, 3).unwrap());
        assert_ne!(plan, stratified_folds(&target, 10, 4).unwrap());

        let target: Vec<u8> = (0..47).map(|i| u8::from(i % 3 == 0)).collect();
        let plan = stratified_folds(&target, 10, 0).unwrap();
        assert!((0..10).all(|f| (4..=5).contains(&plan.test_rows(f).len())));

        assert!(matches!(
            stratified_folds(&[0, 1, 0], 10, 0),
            Err(Error::TooFewRows { rows: 3, folds: 10 })
        ));
        assert!(matches!(stratified_folds(&[1; 20], 10, 0), Err(Error::SingleClass)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fold_plan_balance(target in prop::collection::vec(0u8..2, 10..200), seed in any::<u64>()) {
            prop_assume!(target.contains(&0) && target.contains(&1));
            let plan = stratified_folds(&target, 10, seed).unwrap();
            let sizes: Vec<usize> = (0..10).map(|f| plan.test_rows(f).len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let n1 = target.iter().filter(|&&t| t == 1).count();
            let lo = n1 / 10;
            let hi = n1.div_ceil(10);
            for f in 0..10 {
                let pos = plan.test_rows(f).iter().filter(|&&i| target[i] == 1).count();
                prop_assert!(lo <= pos && pos <= hi);
                let train = plan.train_rows(f);
                prop_assert!(plan.test_rows(f).iter().all(|i| train.binary_search(i).is_err()));
            }
        }
    }

    fn small_cfg(jobs: usize) -> SweepConfig {
        SweepConfig {
            k_min: 3,
            k_max: 5,
            jobs,
            hp: Hyperparameters {
                ada_rounds: 10,
                gbt_rounds: 10,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn report_structure_and_recount() {
        let m = toy_matrix(120, 1);
        let plan = make_fold_plan(&m, 9).unwrap();
        let cfg = small_cfg(2);
        let report = evaluate_matrices(std::slice::from_ref(&m), &plan, &cfg).unwrap();
        assert_eq!(report.records.len(), 3 * 3 * 10);
        for r in &report.records {
            assert!((0.0..=1.0).contains(&r.accuracy));
            assert_eq!(r.test_digest, plan.digest(r.fold));
            // independent recount of the held-out accuracy
            let test = plan.test_rows(r.fold);
            let train = plan.train_rows(r.fold);
            let cols: Vec<usize> = r.selected_features.iter().map(|n| m.column_index(n).unwrap()).collect();
            let y: Vec<u8> = train.iter().map(|&i| m.target[i]).collect();
            let model = fit(r.model, &project(&m, &train, &cols), &y, &r.selected_features, &cfg.hp).unwrap();
            let pred = model.predict(&project(&m, &test, &cols)).unwrap();
            let correct = test.iter().zip(&pred).filter(|(&i, &p)| m.target[i] == p).count();
            assert_eq!(r.accuracy, correct as f64 / test.len() as f64);
        }
        let summary = report.summary();
        assert_eq!(summary.len(), 9);
        // the planted column is ranked first in every fold
        let cons = report.feature_consistency();
        let first = &m.column_names[0];
        assert!(cons
            .iter()
            .filter(|c| &c.feature == first)
            .all(|c| c.selection_fraction == 1.0));
        assert!(report.headline().best_cell.mean_accuracy > report.baseline_accuracy());
    }

    #[test]
    fn parallel_matches_serial() {
        let m = toy_matrix(80, 2);
        let plan = make_fold_plan(&m, 1).unwrap();
        let a = evaluate_matrices(std::slice::from_ref(&m), &plan, &small_cfg(1)).unwrap();
        let b = evaluate_matrices(std::slice::from_ref(&m), &plan, &small_cfg(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unbounded_tree_memorizes_distinct_rows() {
        let mut m = toy_matrix(60, 5);
        for (i, r) in m.rows.iter_mut().enumerate() {
            r[1] = i as u32; // makes every row distinct
        }
        let plan = make_fold_plan(&m, 0).unwrap();
        let cfg = SweepConfig {
            k_min: 88,
            k_max: 88,
            families: vec![ModelFamily::DecisionTree],
            hp: Hyperparameters {
                tree_max_depth: usize::MAX,
                tree_min_leaf: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = evaluate_matrices(&[m], &plan, &cfg).unwrap();
        assert!(report.records.iter().all(|r| r.train_accuracy == 1.0));
        assert!(report.records.iter().any(|r| r.accuracy < 1.0));
    }

    #[test]
    fn consistency_fractions() {
        let sel = |fold: usize, order: &[usize]| FoldSelection {
            version: Version::V1,
            fold,
            ranking: order
                .iter()
                .map(|&c| RankedFeature {
                    name: format!("c{c}"),
                    column: c,
                    chi2: 0.0,
                })
                .collect(),
        };
        let report = EvaluationReport {
            n_rows: 0,
            n_folds: 2,
            k_min: 1,
            k_max: 2,
            records: Vec::new(),
            selections: vec![sel(0, &[0, 1, 2]), sel(1, &[0, 2, 1])],
            baseline_fold_accuracy: vec![0.5, 0.5],
        };
        let cons = report.feature_consistency();
        let frac = |f: &str, k: usize| {
            cons.iter()
                .find(|c| c.feature == f && c.k == k)
                .unwrap()
                .selection_fraction
        };
        assert_eq!(frac("c0", 1), 1.0);
        assert_eq!(frac("c1", 1), 0.0);
        assert_eq!(frac("c1", 2), 0.5);
        assert_eq!(frac("c2", 2), 0.5);
        let ov = report.overlap();
        assert_eq!((ov[0].mean_overlap, ov[0].min_overlap), (1.0, 1));
        assert_eq!((ov[1].mean_overlap, ov[1].min_overlap), (1.0, 1));
    }

    #[test]
    fn stats_all_g1_alive_is_zero() {
        use crate::cohort::{PathologyObservation, PatientRecord, ReferenceRange, Sex};
        use chrono::NaiveDate;
        let d = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap();
        let patients = (0..4)
            .map(|i| {
                let id = format!("P{i}");
                PatientRecord {
                    patient_id: id.clone(),
                    sex: if i % 2 == 0 { Sex::Male } else { Sex::Female },
                    age_at_diagnosis: 60 + i,
                    diagnosis_date: d,
                    death_date: None,
                    observations: Measure::ALL
                        .iter()
                        .map(|&m| PathologyObservation {
                            patient_id: id.clone(),
                            measure: m,
                            value: 5.0,
                            range: ReferenceRange::new(1.0, 10.0).unwrap(),
                            date: d,
                        })
                        .collect(),
                }
            })
            .collect();
        let c = Cohort::new(patients, NaiveDate::from_ymd_opt(2015, 1, 1).unwrap()).unwrap();
        let t = cohort_stats(&c, &LabelingConfig::default()).unwrap();
        assert!(t.rows.iter().all(|r| r.pct_deceased == 0.0));
        for m in Measure::ALL {
            assert_eq!(t.get(m, Group::G1NoOor, "all", "all").unwrap().n_patients, 4);
            assert_eq!(t.get(m, Group::G1NoOor, "sex", "F").unwrap().n_patients, 2);
            assert_eq!(t.get(m, Group::G3OorWithinWindow, "all", "all").unwrap().n_patients, 0);
        }
    }
}
