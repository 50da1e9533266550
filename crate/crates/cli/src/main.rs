//! slopelab: generate trial-like longitudinal eGFR data, fit slope
//! estimators, run Monte Carlo studies, and print true slope values.
//!
//! Exit codes: 0 success, 2 usage/input error, 3 convergence failure (the
//! result row is still emitted with converged=false).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use slopelab_core::dataset::{EstimandSpec, LongitudinalDataset};
use slopelab_core::estimators::{
    fit_method, slope_contrast_with, ContrastOptions, Method,
};
use slopelab_core::mcstudy::{
    run_setting, write_replicates_csv, write_summary_csv, ReplicateRecord, StudyConfig,
    StudySummary, SummaryRow,
};
use slopelab_core::simgen::{generate, CensoringScheme, GenConfig};
use slopelab_core::trajectories::{average_slope_closed_form, Setting, TrajectorySpec};

const EXIT_INPUT: u8 = 2;
const EXIT_NOCONV: u8 = 3;

#[derive(Parser)]
#[command(
    name = "slopelab",
    version,
    about = "Longitudinal eGFR slope estimation and simulation toolkit",
    long_version = concat!(env!("CARGO_PKG_VERSION"), " (data format v1)")
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset as CSV.
    Generate(GenerateArgs),
    /// Fit one estimator to a dataset CSV and print slope contrasts.
    Fit(FitArgs),
    /// Run a Monte Carlo study from a config file.
    Study(StudyArgs),
    /// Print true average slopes per setting over an interval.
    Truth(TruthArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Simulation setting (1-4).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    setting: u8,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n_per_arm: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = CensoringArg::Discrete)]
    censoring: CensoringArg,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV (subject_id,arm,time_years,egfr).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Change point in years (required for two-slope).
    #[arg(long)]
    tau0: Option<f64>,
    /// Estimand interval start (default 0).
    #[arg(long)]
    t1: Option<f64>,
    /// Estimand interval end (default: last visit time in the data).
    #[arg(long)]
    t2: Option<f64>,
    /// Contrast a single arm against the reference (default: every
    /// non-reference arm).
    #[arg(long)]
    arm: Option<u8>,
    /// How repeated-measures fits map interior intervals to a slope.
    #[arg(long, value_enum, default_value_t = MmrmForm::Consistent)]
    mmrm_form: MmrmForm,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    /// Study config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Summary CSV path; stdout when omitted (manifest then goes next to
    /// the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-replicate long-format CSV here.
    #[arg(long)]
    dump_replicates: Option<PathBuf>,
}

#[derive(Args)]
struct TruthArgs {
    #[arg(long, default_value_t = 0.0)]
    t1: f64,
    #[arg(long, default_value_t = 3.0)]
    t2: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CensoringArg {
    None,
    Discrete,
    Continuous,
}

impl From<CensoringArg> for CensoringScheme {
    fn from(c: CensoringArg) -> Self {
        match c {
            CensoringArg::None => CensoringScheme::None,
            CensoringArg::Discrete => CensoringScheme::DiscreteUniformGrid,
            CensoringArg::Continuous => CensoringScheme::ContinuousUniform,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lm,
    Lme,
    #[value(name = "two-slope")]
    TwoSlope,
    #[value(name = "two-stage")]
    TwoStage,
    Mmrm,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Lm => Method::Lm,
            MethodArg::Lme => Method::Lme,
            MethodArg::TwoSlope => Method::TwoSlope,
            MethodArg::TwoStage => Method::TwoStage,
            MethodArg::Mmrm => Method::Mmrm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MmrmForm {
    /// (delta_k - delta_j) / (t_k - t_j): a proper average slope over the
    /// interval.
    Consistent,
    /// beta_{2,k} - beta_{2,j}: difference of per-visit slope parameters.
    Literal,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Study(args) => cmd_study(args),
        Command::Truth(args) => cmd_truth(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

/// Write bytes to `path` atomically (temp file + rename), or to stdout.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), String> {
    match out {
        None => {
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| format!("stdout: {e}"))
        }
        Some(path) => {
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, bytes).map_err(|e| format!("{}: {e}", tmp.display()))?;
            fs::rename(&tmp, path).map_err(|e| format!("{}: {e}", path.display()))
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<u8, String> {
    let setting = Setting::from_index(args.setting).map_err(|e| e.to_string())?;
    let cfg = GenConfig {
        censoring: args.censoring.into(),
        ..GenConfig::new(setting, args.n_per_arm as usize, args.seed)
    };
    let ds = generate(&cfg).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    ds.to_csv_writer(&mut buf).map_err(|e| e.to_string())?;
    emit(args.out.as_deref(), &buf)?;
    Ok(0)
}

fn cmd_fit(args: FitArgs) -> Result<u8, String> {
    let method: Method = args.method.into();
    if method == Method::TwoSlope && args.tau0.is_none() {
        return Err("--method two-slope requires --tau0".into());
    }
    let file = fs::File::open(&args.data)
        .map_err(|e| format!("{}: {e}", args.data.display()))?;
    let ds = LongitudinalDataset::from_csv_reader(file).map_err(|e| e.to_string())?;

    let t2_default = *ds.visit_grid().last().unwrap();
    let t1 = args.t1.unwrap_or(0.0);
    let t2 = args.t2.unwrap_or(t2_default);
    let spec = EstimandSpec::interval(t1, t2).map_err(|e| e.to_string())?;

    let arms: Vec<u8> = match args.arm {
        Some(a) => vec![a],
        None => (1..ds.n_arms() as u8).collect(),
    };
    if arms.is_empty() {
        return Err("dataset has no non-reference arm to contrast".into());
    }
    let opts = ContrastOptions {
        mmrm_literal_interval: matches!(args.mmrm_form, MmrmForm::Literal),
    };

    let fit = fit_method(&ds, method, args.tau0).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    writeln!(
        buf,
        "method,arm,slope,se,ref_slope,ref_se,diff,diff_se,ci_low,ci_high,converged"
    )
    .unwrap();
    for &arm in &arms {
        let est = slope_contrast_with(&fit, &spec, arm, opts).map_err(|e| e.to_string())?;
        let target = est
            .arm_slopes
            .iter()
            .find(|s| s.arm == arm)
            .ok_or("missing arm slope")?;
        let reference = est
            .arm_slopes
            .iter()
            .find(|s| s.arm == 0)
            .ok_or("missing reference slope")?;
        writeln!(
            buf,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            method,
            arm,
            target.slope,
            target.se,
            reference.slope,
            reference.se,
            est.estimate,
            est.se,
            est.ci_low,
            est.ci_high,
            fit.diagnostics.converged
        )
        .unwrap();
    }
    emit(args.out.as_deref(), &buf)?;
    Ok(if fit.diagnostics.converged { 0 } else { EXIT_NOCONV })
}

/// Study config file schema. Keys: settings, methods, n_per_arm, n_reps,
/// master_seed, censoring, tau0, t1, t2, workers; all optional with the
/// four-setting five-method defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyFileConfig {
    #[serde(default = "default_settings")]
    settings: Vec<u8>,
    #[serde(default = "default_methods")]
    methods: Vec<Method>,
    #[serde(default = "default_n_per_arm")]
    n_per_arm: usize,
    #[serde(default = "default_n_reps")]
    n_reps: usize,
    #[serde(default = "default_master_seed")]
    master_seed: u64,
    #[serde(default)]
    censoring: CensoringScheme,
    #[serde(default = "default_tau0")]
    tau0: f64,
    #[serde(default)]
    t1: f64,
    #[serde(default = "default_t2")]
    t2: f64,
    #[serde(default)]
    workers: usize,
}

fn default_settings() -> Vec<u8> {
    vec![1, 2, 3, 4]
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_n_per_arm() -> usize {
    200
}
fn default_n_reps() -> usize {
    2000
}
fn default_master_seed() -> u64 {
    StudyConfig::default().master_seed
}
fn default_tau0() -> f64 {
    0.5
}
fn default_t2() -> f64 {
    3.0
}

impl StudyFileConfig {
    fn to_study_config(&self) -> Result<StudyConfig, String> {
        let settings = self
            .settings
            .iter()
            .map(|&i| Setting::from_index(i).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let estimand = EstimandSpec::interval(self.t1, self.t2).map_err(|e| e.to_string())?;
        Ok(StudyConfig {
            settings,
            methods: self.methods.clone(),
            n_per_arm: self.n_per_arm,
            n_reps: self.n_reps,
            master_seed: self.master_seed,
            censoring: self.censoring,
            estimand,
            tau0: self.tau0,
            workers: self.workers,
        })
    }
}

#[derive(Serialize)]
struct ManifestRow {
    setting: u8,
    method: String,
    n_fail: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    started_utc: String,
    finished_utc: String,
    master_seed: u64,
    config: &'a StudyFileConfig,
    rows: Vec<ManifestRow>,
}

fn cmd_study(args: StudyArgs) -> Result<u8, String> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| format!("{}: {e}", args.config.display()))?;
    let mut file_cfg: StudyFileConfig =
        toml::from_str(&text).map_err(|e| format!("invalid config: {e}"))?;
    if let Ok(v) = std::env::var("SLOPELAB_WORKERS") {
        file_cfg.workers = v
            .parse()
            .map_err(|_| format!("SLOPELAB_WORKERS must be an integer, got '{v}'"))?;
    }
    let config = file_cfg.to_study_config()?;
    config.validate().map_err(|e| e.to_string())?;

    let started = chrono::Utc::now();
    let keep = args.dump_replicates.is_some();
    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut records: Vec<ReplicateRecord> = Vec::new();
    for &setting in &config.settings {
        let t0 = std::time::Instant::now();
        let (mut setting_rows, mut setting_records) =
            run_setting(&config, setting, keep).map_err(|e| e.to_string())?;
        let fails: usize = setting_rows.iter().map(|r| r.n_fail).sum();
        eprintln!(
            "setting {}: {} replicates x {} methods in {:.1}s ({} failed fits)",
            setting,
            config.n_reps,
            config.methods.len(),
            t0.elapsed().as_secs_f64(),
            fails
        );
        for r in &setting_rows {
            if r.n_fail * 100 > config.n_reps {
                eprintln!(
                    "warning: {}/{} failure rate above 1% ({} of {})",
                    r.setting, r.method, r.n_fail, r.n_reps
                );
            }
        }
        rows.append(&mut setting_rows);
        records.append(&mut setting_records);
    }
    let summary = StudySummary { rows };

    let mut buf = Vec::new();
    write_summary_csv(&summary, &mut buf).map_err(|e| e.to_string())?;
    emit(args.out.as_deref(), &buf)?;

    if let Some(path) = &args.dump_replicates {
        let mut rbuf = Vec::new();
        write_replicates_csv(&records, &mut rbuf).map_err(|e| e.to_string())?;
        emit(Some(path), &rbuf)?;
    }

    let manifest = Manifest {
        tool: "slopelab",
        version: env!("CARGO_PKG_VERSION"),
        started_utc: started.to_rfc3339(),
        finished_utc: chrono::Utc::now().to_rfc3339(),
        master_seed: config.master_seed,
        config: &file_cfg,
        rows: summary
            .rows
            .iter()
            .map(|r| ManifestRow {
                setting: r.setting.index(),
                method: r.method.to_string(),
                n_fail: r.n_fail,
            })
            .collect(),
    };
    let manifest_text =
        toml::to_string_pretty(&manifest).map_err(|e| format!("manifest: {e}"))?;
    let manifest_path = manifest_path(args.out.as_deref(), &args.config);
    emit(Some(&manifest_path), manifest_text.as_bytes())?;
    eprintln!("manifest written to {}", manifest_path.display());
    Ok(0)
}

fn manifest_path(out: Option<&Path>, config: &Path) -> PathBuf {
    match out {
        Some(p) => {
            let mut name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "study".into());
            name.push_str(".manifest.toml");
            p.with_file_name(name)
        }
        None => config.with_extension("manifest.toml"),
    }
}

fn cmd_truth(args: TruthArgs) -> Result<u8, String> {
    let spec = EstimandSpec::interval(args.t1, args.t2).map_err(|e| e.to_string())?;
    if spec.t2 > 3.0 {
        return Err(format!("interval end {} beyond the 3-year horizon", spec.t2));
    }
    let mut buf = Vec::new();
    writeln!(buf, "setting,arm_slope_trt,arm_slope_ctl,difference").unwrap();
    for setting in Setting::ALL {
        let trt = TrajectorySpec::for_setting(setting, 1).map_err(|e| e.to_string())?;
        let ctl = TrajectorySpec::for_setting(setting, 0).map_err(|e| e.to_string())?;
        let h1 = average_slope_closed_form(&trt, spec.t1, spec.t2)
            .map_err(|e| e.to_string())?;
        let h0 = average_slope_closed_form(&ctl, spec.t1, spec.t2)
            .map_err(|e| e.to_string())?;
        writeln!(
            buf,
            "{},{:.6},{:.6},{:.6}",
            setting,
            h1,
            h0,
            h1 - h0
        )
        .unwrap();
    }
    emit(args.out.as_deref(), &buf)?;
    Ok(0)
}
