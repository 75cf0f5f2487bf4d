//! Command-line front end. Each subcommand reads files, writes files and
//! echoes its effective configuration as `run_config.toml` in the output
//! directory; passing that file back through `--config` reproduces the run.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::classifiers::Hyperparameters;
use crate::cohort::{apply_followup_filter, apply_inclusion_filters, read_cohort_dir, write_cohort_dir, Cohort};
use crate::error::Error;
use crate::evaluation::{cohort_stats, run_sweep, write_report_dir, write_stats_csv, SweepConfig};
use crate::features::{build_matrix, read_features_file, write_features_csv};
use crate::labeling::{label_cohort, read_labels_csv, write_labels_csv, DiagnosisWindow, LabelingConfig, Version};
use crate::range::DEFAULT_SOFT_MARGIN;
use crate::selection::{select_top_k, write_ranking_csv};
use crate::synth::{generate, GeneratorConfig};

pub const RUN_CONFIG_FILE: &str = "run_config.toml";

type Handler = fn(&IoArgs, &RunConfig) -> anyhow::Result<()>;

#[derive(Parser, Debug)]
#[command(
    name = "pathrisk",
    version,
    about = "Pathology-history features and 2-year survival models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cohort directory.
    Synth(SynthArgs),
    /// Validate a cohort and write the subset passing inclusion filters.
    Ingest(IoArgs),
    /// Group mortality tables per measure, overall and by sex and age group.
    Stats(IoArgs),
    /// Label every retained patient under all six versions.
    Label(IoArgs),
    /// Build the feature matrix for one labeling version.
    Features(IoArgs),
    /// Rank the columns of a feature matrix by chi-squared statistic.
    Select(IoArgs),
    /// Cross-validation sweep over versions, feature counts and models.
    Evaluate(IoArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Default,
    Planted,
    Null,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Generator config (TOML); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long = "n")]
    pub n_patients: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IoArgs {
    /// Input cohort directory, or a features CSV for `select`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: RunFlags,
}

/// Flags shared by the pipeline subcommands. Unset flags fall back to
/// `--config`, then to built-in defaults.
#[derive(Args, Debug, Default)]
pub struct RunFlags {
    /// A `run_config.toml` echoed by an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub soft_margin: Option<f64>,
    /// Close window as day offsets, e.g. "-60:+30".
    #[arg(long, allow_hyphen_values = true)]
    pub window_close: Option<DiagnosisWindow>,
    #[arg(long)]
    pub window_far_days: Option<i64>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub versions: Option<Vec<Version>>,
    /// Compute stats before the complete-panel filter (default true).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pre_filter_stats: Option<bool>,
    /// Data extract end date; defaults to the cohort's metadata file.
    #[arg(long)]
    pub data_end_date: Option<NaiveDate>,
    /// Version used by `features` and `select`.
    #[arg(long)]
    pub version: Option<Version>,
    /// Optional second version crossed into `features`.
    #[arg(long)]
    pub secondary: Option<Version>,
    /// Labels file for `features`; labels are computed when absent.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Number of features marked selected by `select`.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tree_max_depth: Option<usize>,
    #[arg(long)]
    pub tree_min_leaf: Option<usize>,
    #[arg(long)]
    pub ada_rounds: Option<usize>,
    #[arg(long)]
    pub gbt_rounds: Option<usize>,
    #[arg(long)]
    pub gbt_depth: Option<usize>,
    #[arg(long)]
    pub gbt_learning_rate: Option<f64>,
    #[arg(long)]
    pub gbt_l2: Option<f64>,
}

/// Effective configuration of a pipeline subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub soft_margin: f64,
    pub window_close: String,
    pub window_far_days: i64,
    pub k_min: usize,
    pub k_max: usize,
    pub versions: Vec<Version>,
    pub pre_filter_stats: bool,
    pub data_end_date: Option<NaiveDate>,
    pub version: Version,
    pub secondary: Option<Version>,
    pub labels: Option<PathBuf>,
    pub k: usize,
    pub hyperparameters: Hyperparameters,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            soft_margin: DEFAULT_SOFT_MARGIN,
            window_close: DiagnosisWindow::default().to_string(),
            window_far_days: 180,
            k_min: 5,
            k_max: 25,
            versions: Version::ALL.to_vec(),
            pre_filter_stats: true,
            data_end_date: None,
            version: Version::V1,
            secondary: None,
            labels: None,
            k: 10,
            hyperparameters: Hyperparameters::default(),
        }
    }
}

impl RunConfig {
    pub fn resolve(flags: &RunFlags) -> anyhow::Result<Self> {
        let mut c = match &flags.config {
            Some(path) => load_toml::<RunConfig>(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &flags.$flag { c.$($field).+ = v.clone().into(); })*
            };
        }
        set!(
            seed => seed,
            jobs => jobs,
            soft_margin => soft_margin,
            window_far_days => window_far_days,
            k_min => k_min,
            k_max => k_max,
            versions => versions,
            pre_filter_stats => pre_filter_stats,
            version => version,
            k => k,
            tree_max_depth => hyperparameters.tree_max_depth,
            tree_min_leaf => hyperparameters.tree_min_leaf,
            ada_rounds => hyperparameters.ada_rounds,
            gbt_rounds => hyperparameters.gbt_rounds,
            gbt_depth => hyperparameters.gbt_depth,
            gbt_learning_rate => hyperparameters.gbt_learning_rate,
            gbt_l2 => hyperparameters.gbt_l2,
        );
        if let Some(w) = flags.window_close {
            c.window_close = w.to_string();
        }
        if flags.data_end_date.is_some() {
            c.data_end_date = flags.data_end_date;
        }
        if flags.secondary.is_some() {
            c.secondary = flags.secondary;
        }
        if flags.labels.is_some() {
            c.labels.clone_from(&flags.labels);
        }
        c.hyperparameters.seed = c.seed;
        c.labeling()?;
        c.hyperparameters.validate()?;
        Ok(c)
    }

    pub fn labeling(&self) -> crate::Result<LabelingConfig> {
        let close_window = self.window_close.parse().map_err(Error::Config)?;
        let cfg = LabelingConfig {
            close_window,
            far_days: self.window_far_days,
            soft_margin: self.soft_margin,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sweep(&self) -> crate::Result<SweepConfig> {
        Ok(SweepConfig {
            versions: self.versions.clone(),
            k_min: self.k_min,
            k_max: self.k_max,
            seed: self.seed,
            jobs: self.jobs,
            hp: self.hyperparameters.clone(),
            labeling: self.labeling()?,
            ..SweepConfig::default()
        })
    }
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("{}", path.display()))
}

fn write_toml<T: Serialize>(dir: &Path, value: &T) -> anyhow::Result<()> {
    let path = dir.join(RUN_CONFIG_FILE);
    fs::write(&path, toml::to_string(value)?).with_context(|| format!("{}", path.display()))
}

/// Creates `out` and refuses to write into the input location.
fn prepare_out(input: &Path, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("{}", out.display()))?;
    let same = |a: &Path, b: &Path| match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same(input, out) {
        bail!("output directory {} must differ from the input", out.display());
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("{}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_cohort(input: &Path, cfg: &RunConfig) -> anyhow::Result<Cohort> {
    Ok(read_cohort_dir(input, cfg.data_end_date)?)
}

fn filtered(cohort: &Cohort) -> anyhow::Result<Cohort> {
    let (kept, _) = apply_inclusion_filters(cohort);
    if kept.is_empty() {
        return Err(Error::EmptyCohort.into());
    }
    Ok(kept)
}

fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => load_toml::<GeneratorConfig>(path)?,
        None => GeneratorConfig::default(),
    };
    if let Some(preset) = args.preset {
        let (n, seed) = (cfg.n_patients, cfg.seed);
        cfg = match preset {
            Preset::Default => GeneratorConfig {
                n_patients: n,
                seed,
                ..GeneratorConfig::default()
            },
            Preset::Planted => GeneratorConfig::planted_signal(n, seed),
            Preset::Null => GeneratorConfig::null(n, seed),
        };
    }
    if let Some(n) = args.n_patients {
        cfg.n_patients = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let cohort = generate(&cfg)?;
    fs::create_dir_all(&args.out).with_context(|| format!("{}", args.out.display()))?;
    write_cohort_dir(&cohort, &args.out)?;
    write_toml(&args.out, &cfg)
}

fn ingest(args: &IoArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let cohort = load_cohort(&args.input, cfg)?;
    let (kept, report) = apply_inclusion_filters(&cohort);
    write_cohort_dir(&kept, &args.out)?;
    let mut f = create(&args.out, "filter_report.json")?;
    serde_json::to_writer_pretty(&mut f, &report)?;
    Ok(())
}

fn stats(args: &IoArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let cohort = load_cohort(&args.input, cfg)?;
    let population = if cfg.pre_filter_stats {
        apply_followup_filter(&cohort)
    } else {
        filtered(&cohort)?
    };
    let table = cohort_stats(&population, &cfg.labeling()?)?;
    write_stats_csv(&table, create(&args.out, "stats.csv")?)?;
    Ok(())
}

fn label(args: &IoArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let cohort = filtered(&load_cohort(&args.input, cfg)?)?;
    let labels = label_cohort(&cohort, &cfg.labeling()?)?;
    write_labels_csv(&labels, create(&args.out, "labels.csv")?)?;
    Ok(())
}

fn features(args: &IoArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let cohort = filtered(&load_cohort(&args.input, cfg)?)?;
    let labels = match &cfg.labels {
        Some(path) => {
            let f = File::open(path).with_context(|| format!("{}", path.display()))?;
            read_labels_csv(&path.display().to_string(), f)?
        }
        None => label_cohort(&cohort, &cfg.labeling()?)?,
    };
    let matrix = build_matrix(&cohort, &labels, cfg.version, cfg.secondary)?;
    write_features_csv(&matrix, create(&args.out, "features.csv")?)?;
    Ok(())
}

fn select(args: &IoArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let matrix = read_features_file(&args.input, cfg.version)?;
    let rows: Vec<usize> = (0..matrix.n_rows()).collect();
    let ranking = select_top_k(&matrix, &rows, cfg.k)?;
    write_ranking_csv(&ranking, create(&args.out, "ranking.csv")?)?;
    Ok(())
}

fn evaluate(args: &IoArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let cohort = filtered(&load_cohort(&args.input, cfg)?)?;
    let report = run_sweep(&cohort, &cfg.sweep()?)?;
    write_report_dir(&report, &args.out)?;
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let (args, handler): (&IoArgs, Handler) = match &cli.command {
        Command::Synth(a) => return synth(a),
        Command::Ingest(a) => (a, ingest),
        Command::Stats(a) => (a, stats),
        Command::Label(a) => (a, label),
        Command::Features(a) => (a, features),
        Command::Select(a) => (a, select),
        Command::Evaluate(a) => (a, evaluate),
    };
    let cfg = RunConfig::resolve(&args.opts)?;
    prepare_out(&args.input, &args.out)?;
    handler(args, &cfg)?;
    write_toml(&args.out, &cfg)
}

/// Parses `argv`, runs the subcommand and maps failures to a one-line
/// diagnostic on stderr. Returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
