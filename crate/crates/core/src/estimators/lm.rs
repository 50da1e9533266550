//! Pooled linear regression: one intercept and slope per arm, classical OLS
//! standard errors.

use crate::dataset::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::estimators::design::{continuous_design, pooled_ols};
use crate::estimators::{CoefLayout, Diagnostics, FitResult, Method};
use crate::numerics::chol::chol_psd;

/// Ordinary least squares on eGFR against time with per-arm intercept and
/// slope terms (`fit_lm`). The classical SEs ignore within-subject
/// correlation.
pub fn fit_lm(ds: &LongitudinalDataset) -> Result<FitResult> {
    if ds.visit_grid().len() < 2 {
        return Err(Error::SingularDesign("need at least 2 distinct times"));
    }
    let design = continuous_design(ds, None)?;
    let problem = &design.problem;
    let (beta_std, rss, n) = pooled_ols(problem)?;
    let p = problem.p;

    let mut xtx = nalgebra::DMatrix::<f64>::zeros(p, p);
    for g in &problem.groups {
        xtx += (g.x.transpose() * &g.x) * g.m;
    }
    let s2 = if n > p { rss / (n - p) as f64 } else { 0.0 };
    let cov_std = chol_psd(&xtx)
        .map_err(|_| Error::SingularDesign("X^T X"))?
        .inverse()
        * s2;

    let mut beta = beta_std;
    let mut cov = cov_std;
    for (i, s) in design.back_scale.iter().enumerate() {
        beta[i] *= s;
        for j in 0..p {
            cov[(i, j)] *= s;
            cov[(j, i)] *= s;
        }
    }
    beta[0] += design.y_offset;

    let k = ds.n_arms();
    let layout = CoefLayout::LinearSlopes {
        time: 1,
        arm_time: (0..k - 1).map(|a| 2 + (k - 1) + a).collect(),
    };
    Ok(FitResult {
        method: Method::Lm,
        names: design.names,
        beta,
        beta_cov: cov,
        layout,
        cov_params: None,
        tau0: None,
        grid: None,
        aic: None,
        diagnostics: Diagnostics {
            converged: true,
            n_subjects: ds.subjects().len(),
            n_excluded: 0,
            opt: None,
        },
    })
}
