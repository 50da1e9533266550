//! Linear mixed-effects estimators: random intercept+slope, and the
//! piecewise (two-slope) variant with a random post-change-point increment.

use nalgebra::DMatrix;

use crate::dataset::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::estimators::design::{
    continuous_design, pooled_ols, response_variance, ContinuousDesign,
};
use crate::estimators::{
    is_degenerate_rss, CoefLayout, CovarianceEstimate, Diagnostics, FitResult, Method,
};
use crate::numerics::chol::decode_cov;
use crate::numerics::optim::OptOptions;

/// Random intercept + slope model with unstructured 2x2 random-effect
/// covariance and residual variance, fitted by REML (`fit_lme`). The
/// treatment effect is the coefficient on arm:time.
pub fn fit_lme(ds: &LongitudinalDataset) -> Result<FitResult> {
    fit_continuous(ds, None)
}

/// Piecewise linear mixed-effects model with a pre-specified change point
/// (`fit_two_slope_lme`): fixed and random intercept, slope, and
/// post-change-point slope increment.
pub fn fit_two_slope_lme(ds: &LongitudinalDataset, tau0: f64) -> Result<FitResult> {
    let grid = ds.visit_grid();
    let t_max = *grid.last().unwrap_or(&0.0);
    if !(tau0.is_finite() && tau0 > 0.0 && tau0 < t_max) {
        return Err(Error::DomainError {
            what: "tau0",
            value: tau0,
        });
    }
    if !grid.iter().any(|&t| t > tau0) {
        return Err(Error::DegenerateHinge { tau0 });
    }
    fit_continuous(ds, Some(tau0))
}

/// Fit the two-slope model at each candidate change point and keep the AIC
/// minimizer (`select_changepoint_aic`). Ties go to the smallest tau0.
pub fn select_changepoint_aic(
    ds: &LongitudinalDataset,
    candidates: &[f64],
) -> Result<(f64, FitResult)> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no change-point candidates".into()));
    }
    let mut best: Option<(f64, f64, FitResult)> = None; // (aic, tau0, fit)
    let mut last_err = String::new();
    for &tau0 in candidates {
        match fit_two_slope_lme(ds, tau0) {
            Ok(fit) => {
                // A degenerate zero-residual fit has no defined AIC; rank it
                // below everything so ties fall back to the smaller tau0.
                let aic = fit.aic.unwrap_or(f64::NEG_INFINITY);
                let better = match &best {
                    None => true,
                    Some((best_aic, best_tau, _)) => {
                        aic < best_aic - 1e-12
                            || ((aic - best_aic).abs() <= 1e-12 && tau0 < *best_tau)
                    }
                };
                if better {
                    best = Some((aic, tau0, fit));
                }
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    match best {
        Some((_, tau0, fit)) => Ok((tau0, fit)),
        None => Err(Error::AllCandidatesFailed { last: last_err }),
    }
}

fn fit_continuous(ds: &LongitudinalDataset, tau0: Option<f64>) -> Result<FitResult> {
    if !ds.subjects().iter().any(|s| s.times.len() >= 2) {
        return Err(Error::SingularDesign(
            "no subject has repeated measurements",
        ));
    }
    let design = continuous_design(ds, tau0)?;
    let problem = &design.problem;
    let p = problem.p;
    let k = ds.n_arms();
    let var_y = response_variance(ds);

    let layout = match tau0 {
        None => CoefLayout::LinearSlopes {
            time: 1,
            arm_time: (0..k - 1).map(|a| 2 + (k - 1) + a).collect(),
        },
        Some(tau0) => CoefLayout::PiecewiseSlopes {
            time: 1,
            hinge: 2,
            arm_time: (0..k - 1).map(|a| 3 + (k - 1) + a).collect(),
            arm_hinge: (0..k - 1).map(|a| 3 + 2 * (k - 1) + a).collect(),
            tau0,
        },
    };
    let method = if tau0.is_some() {
        Method::TwoSlope
    } else {
        Method::Lme
    };

    // Exactly interpolable data: REML has no interior optimum; report the
    // exact OLS coefficients instead.
    let (beta_ols, rss, n) = pooled_ols(problem)?;
    if is_degenerate_rss(rss, n, p, var_y) {
        let mut beta = beta_ols;
        for (i, s) in design.back_scale.iter().enumerate() {
            beta[i] *= s;
        }
        beta[0] += design.y_offset;
        return Ok(FitResult {
            method,
            names: design.names,
            beta,
            beta_cov: DMatrix::zeros(p, p),
            layout,
            cov_params: None,
            tau0,
            grid: None,
            aic: None,
            diagnostics: Diagnostics {
                converged: true,
                n_subjects: ds.subjects().len(),
                n_excluded: 0,
                opt: None,
            },
        });
    }

    let q = if tau0.is_some() { 3 } else { 2 };
    let theta0 = moment_start(ds, &design, q, var_y);
    let fit = problem.fit(&theta0, &OptOptions::default())?;

    let mut beta = fit.beta;
    let mut cov = fit.beta_cov;
    for (i, s) in design.back_scale.iter().enumerate() {
        beta[i] *= s;
        for j in 0..p {
            cov[(i, j)] *= s;
            cov[(j, i)] *= s;
        }
    }
    beta[0] += design.y_offset;

    // Random-effect covariance back to original time units:
    // b_orig = diag(1, 1/T, ...) b_std.
    let psi_std = decode_cov(&fit.theta[..fit.theta.len() - 1], q);
    let mut psi = psi_std;
    let inv_t = 1.0 / design.t_max;
    for i in 0..q {
        for j in 0..q {
            let si = if i == 0 { 1.0 } else { inv_t };
            let sj = if j == 0 { 1.0 } else { inv_t };
            psi[(i, j)] *= si * sj;
        }
    }
    let sigma = fit.theta[fit.theta.len() - 1].exp();

    Ok(FitResult {
        method,
        names: design.names,
        beta,
        beta_cov: cov,
        layout,
        cov_params: Some(CovarianceEstimate {
            matrix: psi,
            sigma: Some(sigma),
            theta: fit.theta.clone(),
        }),
        tau0,
        grid: None,
        aic: Some(fit.aic),
        diagnostics: Diagnostics {
            converged: fit.opt.converged,
            n_subjects: ds.subjects().len(),
            n_excluded: 0,
            opt: Some(fit.opt),
        },
    })
}

/// Method-of-moments starting values on the standardized time scale:
/// variances of per-subject OLS intercepts and slopes, residual variance
/// from per-subject fits, zero starting correlations.
fn moment_start(
    ds: &LongitudinalDataset,
    design: &ContinuousDesign,
    q: usize,
    var_y: f64,
) -> Vec<f64> {
    let t_max = design.t_max;
    let mut intercepts = Vec::new();
    let mut slopes = Vec::new();
    let mut resid_var_sum = 0.0;
    let mut resid_n = 0.0;

    for s in ds.subjects() {
        let n = s.times.len();
        if n < 2 {
            continue;
        }
        let taus: Vec<f64> = s.times.iter().map(|t| t / t_max).collect();
        let mt = taus.iter().sum::<f64>() / n as f64;
        let my = s.values.iter().sum::<f64>() / n as f64;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (t, y) in taus.iter().zip(&s.values) {
            sxx += (t - mt) * (t - mt);
            sxy += (t - mt) * (y - my);
        }
        if sxx <= 0.0 {
            continue;
        }
        let slope = sxy / sxx;
        let intercept = my - slope * mt;
        slopes.push(slope);
        intercepts.push(intercept);
        if n >= 3 {
            let rss: f64 = taus
                .iter()
                .zip(&s.values)
                .map(|(t, y)| (y - intercept - slope * t).powi(2))
                .sum();
            resid_var_sum += rss / (n - 2) as f64;
            resid_n += 1.0;
        }
    }

    let floor = (1e-4 * (1.0 + var_y)).max(1e-8);
    let sample_var = |v: &[f64]| -> f64 {
        if v.len() < 2 {
            return var_y.max(floor);
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let var_b0 = sample_var(&intercepts).max(floor);
    let var_b1 = sample_var(&slopes).max(floor);
    let sigma2 = if resid_n > 0.0 {
        (resid_var_sum / resid_n).max(floor)
    } else {
        (0.1 * var_y).max(floor)
    };

    let mut theta = Vec::with_capacity(q * (q + 1) / 2 + 1);
    let sds = [var_b0.sqrt(), var_b1.sqrt(), var_b1.sqrt()];
    for (i, sd) in sds.iter().enumerate().take(q) {
        for j in 0..=i {
            theta.push(if i == j { sd.ln() } else { 0.0 });
        }
    }
    theta.push(0.5 * sigma2.ln());
    theta
}
