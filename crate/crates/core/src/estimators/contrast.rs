//! Mapping fitted coefficients to interval-average slope contrasts.
//!
//! Every mapping is a linear functional of the coefficient vector, so the
//! delta-method standard error sqrt(aᵀ V a) is exact given the coefficient
//! covariance.

use nalgebra::DVector;

use crate::dataset::{ArmSlope, EstimandSpec, SlopeEstimate};
use crate::error::{Error, Result};
use crate::estimators::{arm_index_checked, CoefLayout, FitResult};

const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default)]
pub struct ContrastOptions {
    /// Report interior intervals as the difference of per-visit slope
    /// parameters (β₂ₖ − β₂ⱼ) instead of the interval-consistent
    /// (δₖ − δⱼ)/(tₖ − tⱼ). The two coincide when the interval starts at
    /// baseline.
    pub mmrm_literal_interval: bool,
}

/// Map a fitted model to the average-slope contrast of `target_arm` versus
/// the reference arm over the estimand interval (`slope_contrast`).
pub fn slope_contrast(
    fit: &FitResult,
    spec: &EstimandSpec,
    target_arm: u8,
) -> Result<SlopeEstimate> {
    slope_contrast_with(fit, spec, target_arm, ContrastOptions::default())
}

pub fn slope_contrast_with(
    fit: &FitResult,
    spec: &EstimandSpec,
    target_arm: u8,
    opts: ContrastOptions,
) -> Result<SlopeEstimate> {
    let target = arm_index_checked(&fit.layout, target_arm)?;
    let p = fit.beta.len();
    let k_arms = fit.layout.n_arms();

    let value_se = |a: &DVector<f64>| -> (f64, f64) {
        let est = a.dot(&fit.beta);
        let var = (a.transpose() * &fit.beta_cov * a)[(0, 0)].max(0.0);
        (est, var.sqrt())
    };

    // Per-arm slope functional for arm `a` over the interval.
    let arm_functional = |a: usize| -> Result<DVector<f64>> {
        let mut v = DVector::zeros(p);
        match &fit.layout {
            CoefLayout::LinearSlopes { time, arm_time } => {
                v[*time] = 1.0;
                if a > 0 {
                    v[arm_time[a - 1]] = 1.0;
                }
            }
            CoefLayout::PiecewiseSlopes {
                time,
                hinge,
                arm_time,
                arm_hinge,
                tau0,
            } => {
                let w = hinge_weight(spec, *tau0)?;
                v[*time] = 1.0;
                v[*hinge] = w;
                if a > 0 {
                    v[arm_time[a - 1]] = 1.0;
                    v[arm_hinge[a - 1]] = w;
                }
            }
            CoefLayout::VisitMeans {
                grid,
                visit,
                arm_visit,
            } => {
                let (j, k) = grid_endpoints(grid, spec)?;
                let dt = grid[k] - grid[j];
                v[visit[k]] += 1.0 / dt;
                v[visit[j]] -= 1.0 / dt;
                if a > 0 {
                    if let Some(col) = arm_visit[a - 1][k] {
                        v[col] += 1.0 / dt;
                    }
                    if let Some(col) = arm_visit[a - 1][j] {
                        v[col] -= 1.0 / dt;
                    }
                }
            }
            CoefLayout::GroupSlopes { arm } => {
                v[arm[a]] = 1.0;
            }
        }
        Ok(v)
    };

    // Contrast functional: target arm minus reference.
    let contrast = match &fit.layout {
        CoefLayout::VisitMeans { grid, arm_visit, .. }
            if opts.mmrm_literal_interval =>
        {
            let (j, k) = grid_endpoints(grid, spec)?;
            let mut v = DVector::zeros(p);
            if let Some(col) = arm_visit[target - 1][k] {
                v[col] += 1.0 / grid[k];
            }
            if grid[j] > TIME_TOL {
                if let Some(col) = arm_visit[target - 1][j] {
                    v[col] -= 1.0 / grid[j];
                }
            }
            v
        }
        _ => arm_functional(target)? - arm_functional(0)?,
    };

    let (estimate, se) = value_se(&contrast);
    let mut arm_slopes = Vec::with_capacity(k_arms);
    for a in 0..k_arms {
        let f = arm_functional(a)?;
        let (slope, slope_se) = value_se(&f);
        arm_slopes.push(ArmSlope {
            arm: a as u8,
            slope,
            se: slope_se,
        });
    }
    Ok(SlopeEstimate::from_parts(estimate, se, arm_slopes))
}

/// Average weight the hinge coefficient carries over [t1, t2]: the average
/// of 1{t > tau0} under the uniform weight.
fn hinge_weight(spec: &EstimandSpec, tau0: f64) -> Result<f64> {
    let (t1, t2) = (spec.t1, spec.t2);
    if t2 <= tau0 + TIME_TOL {
        Ok(0.0)
    } else if t1 >= tau0 - TIME_TOL {
        Ok(1.0)
    } else if t1.abs() <= TIME_TOL {
        Ok(1.0 - tau0 / t2)
    } else {
        Err(Error::UnsupportedInterval {
            t1,
            t2,
            reason: "piecewise fit supports intervals starting at 0 or at/after tau0",
        })
    }
}

fn grid_endpoints(grid: &[f64], spec: &EstimandSpec) -> Result<(usize, usize)> {
    let find = |t: f64| grid.iter().position(|&g| (g - t).abs() <= TIME_TOL);
    match (find(spec.t1), find(spec.t2)) {
        (Some(j), Some(k)) if k > j => Ok((j, k)),
        _ => Err(Error::UnsupportedInterval {
            t1: spec.t1,
            t2: spec.t2,
            reason: "interval endpoints must be visit times",
        }),
    }
}
