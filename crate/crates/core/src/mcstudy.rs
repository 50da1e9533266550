//! Monte Carlo harness: replicate generate -> censor -> fit -> contrast and
//! aggregate bias/SD/RMSE against the truth oracle.
//!
//! Replicate seeds derive from (master_seed, replicate index), results are
//! collected in replicate order, and aggregation is a sequential reduction,
//! so a study is bit-identical for any worker count.

use serde::{Deserialize, Serialize};

use crate::dataset::EstimandSpec;
use crate::error::{Error, Result};
use crate::estimators::{fit_method, slope_contrast, Method};
use crate::rng::{derive_seed, TAG_REPLICATE};
use crate::simgen::{generate, CensoringScheme, GenConfig};
use crate::trajectories::{true_effect, Setting};

/// Full study configuration; the defaults reproduce the four-setting,
/// five-method design at n = 400 and 2000 replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub settings: Vec<Setting>,
    pub methods: Vec<Method>,
    pub n_per_arm: usize,
    pub n_reps: usize,
    pub master_seed: u64,
    pub censoring: CensoringScheme,
    pub estimand: EstimandSpec,
    /// Change point handed to the two-slope model.
    pub tau0: f64,
    /// Worker threads; 0 = all available. Output does not depend on this.
    pub workers: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            settings: Setting::ALL.to_vec(),
            methods: Method::ALL.to_vec(),
            n_per_arm: 200,
            n_reps: 2000,
            master_seed: 20240742,
            censoring: CensoringScheme::DiscreteUniformGrid,
            estimand: EstimandSpec::total(3.0).expect("valid default estimand"),
            tau0: 0.5,
            workers: 0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.settings.is_empty() {
            return Err(Error::InvalidConfig("settings must be non-empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must be non-empty".into()));
        }
        if self.n_reps < 2 {
            return Err(Error::InvalidConfig("n_reps must be >= 2".into()));
        }
        if self.n_per_arm < 1 {
            return Err(Error::InvalidConfig("n_per_arm must be >= 1".into()));
        }
        if self.tau0.is_nan() || self.tau0 <= 0.0 {
            return Err(Error::InvalidConfig("tau0 must be > 0".into()));
        }
        Ok(())
    }
}

/// One method's outcome on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub converged: bool,
}

/// One row of per-replicate output for the optional long-format dump.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub setting: Setting,
    pub method: Method,
    pub rep: usize,
    pub estimate: f64,
    pub se: f64,
    pub converged: bool,
}

/// Aggregated operating characteristics for one (setting, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub setting: Setting,
    pub method: Method,
    pub n_reps: usize,
    pub n_fail: usize,
    pub mean_est: f64,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub mean_se: f64,
    pub coverage95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub rows: Vec<SummaryRow>,
}

impl StudySummary {
    pub fn row(&self, setting: Setting, method: Method) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.setting == setting && r.method == method)
    }
}

/// Study output: the summary plus (when requested) every replicate record.
#[derive(Debug, Clone)]
pub struct StudyReport {
    pub summary: StudySummary,
    pub replicates: Option<Vec<ReplicateRecord>>,
}

/// Generate one dataset and run every requested method on it
/// (`run_replicate`). Failures are captured per method, never raised.
pub fn run_replicate(
    setting: Setting,
    methods: &[Method],
    config: &StudyConfig,
    rep_seed: u64,
) -> Vec<Option<MethodOutcome>> {
    let gen_cfg = GenConfig {
        censoring: config.censoring,
        ..GenConfig::new(setting, config.n_per_arm, rep_seed)
    };
    let dataset = match generate(&gen_cfg) {
        Ok(ds) => ds,
        Err(_) => return methods.iter().map(|_| None).collect(),
    };
    methods
        .iter()
        .map(|&method| {
            let fit = fit_method(&dataset, method, Some(config.tau0)).ok()?;
            let est = slope_contrast(&fit, &config.estimand, 1).ok()?;
            Some(MethodOutcome {
                method,
                estimate: est.estimate,
                se: est.se,
                ci_low: est.ci_low,
                ci_high: est.ci_high,
                converged: fit.diagnostics.converged,
            })
        })
        .collect()
}

/// Summarize estimates against the truth (`summarize`).
///
/// bias = mean(estimate) − truth; sd uses the n−1 divisor;
/// rmse² = mean((estimate − truth)²), so rmse² = bias² + sd²(n−1)/n.
pub fn summarize(estimates: &[(f64, f64, f64, f64)], truth: f64) -> Result<SummaryStats> {
    let n = estimates.len();
    if n < 2 {
        return Err(Error::TooFewEstimates(n));
    }
    let nf = n as f64;
    let mean = estimates.iter().map(|e| e.0).sum::<f64>() / nf;
    let var = estimates.iter().map(|e| (e.0 - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let mse = estimates.iter().map(|e| (e.0 - truth).powi(2)).sum::<f64>() / nf;
    let mean_se = estimates.iter().map(|e| e.1).sum::<f64>() / nf;
    let covered = estimates
        .iter()
        .filter(|e| e.2 <= truth && truth <= e.3)
        .count();
    Ok(SummaryStats {
        n,
        mean_est: mean,
        bias: mean - truth,
        sd: var.sqrt(),
        rmse: mse.sqrt(),
        mean_se,
        coverage95: covered as f64 / nf,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub n: usize,
    pub mean_est: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub mean_se: f64,
    pub coverage95: f64,
}

/// Run one setting of a study; rows come back in the config's method order.
pub fn run_setting(
    config: &StudyConfig,
    setting: Setting,
    keep_replicates: bool,
) -> Result<(Vec<SummaryRow>, Vec<ReplicateRecord>)> {
    let methods = &config.methods;

    let one_rep = |rep: usize| -> Vec<Option<MethodOutcome>> {
        let rep_seed = derive_seed(config.master_seed, TAG_REPLICATE, rep as u64)
            ^ (setting.index() as u64) << 56;
        run_replicate(setting, methods, config, rep_seed)
    };

    let per_rep: Vec<Vec<Option<MethodOutcome>>> = run_indexed(config, one_rep)?;

    let truth = true_effect(setting, &config.estimand)?;
    let mut rows = Vec::with_capacity(methods.len());
    let mut records = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        let mut ok: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(per_rep.len());
        let mut n_fail = 0usize;
        for (rep, outcomes) in per_rep.iter().enumerate() {
            match &outcomes[mi] {
                Some(o) if o.converged && o.estimate.is_finite() => {
                    ok.push((o.estimate, o.se, o.ci_low, o.ci_high));
                    if keep_replicates {
                        records.push(ReplicateRecord {
                            setting,
                            method,
                            rep,
                            estimate: o.estimate,
                            se: o.se,
                            converged: true,
                        });
                    }
                }
                other => {
                    n_fail += 1;
                    if keep_replicates {
                        let (estimate, se) = match other {
                            Some(o) => (o.estimate, o.se),
                            None => (f64::NAN, f64::NAN),
                        };
                        records.push(ReplicateRecord {
                            setting,
                            method,
                            rep,
                            estimate,
                            se,
                            converged: false,
                        });
                    }
                }
            }
        }
        let stats = summarize(&ok, truth)?;
        rows.push(SummaryRow {
            setting,
            method,
            n_reps: config.n_reps,
            n_fail,
            mean_est: stats.mean_est,
            truth,
            bias: stats.bias,
            sd: stats.sd,
            rmse: stats.rmse,
            mean_se: stats.mean_se,
            coverage95: stats.coverage95,
        });
    }
    Ok((rows, records))
}

#[cfg(feature = "parallel")]
fn run_indexed<T: Send>(
    config: &StudyConfig,
    one_rep: impl Fn(usize) -> T + Sync + Send,
) -> Result<Vec<T>> {
    let workers = if config.workers == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        config.workers
    };
    if workers <= 1 {
        return Ok((0..config.n_reps).map(one_rep).collect());
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    // IndexedParallelIterator::collect preserves replicate order, so the
    // reduction below is independent of scheduling.
    Ok(pool.install(|| (0..config.n_reps).into_par_iter().map(one_rep).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_indexed<T: Send>(
    config: &StudyConfig,
    one_rep: impl Fn(usize) -> T + Sync + Send,
) -> Result<Vec<T>> {
    Ok((0..config.n_reps).map(one_rep).collect())
}

/// Run the full study (`run_study`).
pub fn run_study(config: &StudyConfig) -> Result<StudySummary> {
    Ok(run_study_report(config, false)?.summary)
}

/// Run the full study, optionally keeping per-replicate records.
pub fn run_study_report(config: &StudyConfig, keep_replicates: bool) -> Result<StudyReport> {
    config.validate()?;
    let mut rows = Vec::with_capacity(config.settings.len() * config.methods.len());
    let mut records = Vec::new();
    for &setting in &config.settings {
        let (mut setting_rows, mut setting_records) =
            run_setting(config, setting, keep_replicates)?;
        rows.append(&mut setting_rows);
        records.append(&mut setting_records);
    }
    Ok(StudyReport {
        summary: StudySummary { rows },
        replicates: keep_replicates.then_some(records),
    })
}

/// Study summary CSV: fixed six-decimal formatting so reruns are
/// byte-comparable.
pub fn write_summary_csv<W: std::io::Write>(
    summary: &StudySummary,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(
        w,
        "setting,method,n_reps,n_fail,mean_est,truth,bias,sd,rmse,mean_se,coverage95"
    )?;
    for r in &summary.rows {
        writeln!(
            w,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4}",
            r.setting,
            r.method,
            r.n_reps,
            r.n_fail,
            r.mean_est,
            r.truth,
            r.bias,
            r.sd,
            r.rmse,
            r.mean_se,
            r.coverage95
        )?;
    }
    Ok(())
}

/// Long-format per-replicate CSV for external plotting.
pub fn write_replicates_csv<W: std::io::Write>(
    records: &[ReplicateRecord],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "setting,method,rep,estimate,se,converged")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.setting, r.method, r.rep, r.estimate, r.se, r.converged
        )?;
    }
    Ok(())
}
