//! The five slope estimators behind one interface: fit a model, then map
//! fitted coefficients to a [`SlopeEstimate`](crate::dataset::SlopeEstimate)
//! for a given [`EstimandSpec`](crate::dataset::EstimandSpec).

mod contrast;
mod design;
mod lm;
mod lme;
mod mmrm;
mod two_stage;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{ArmId, LongitudinalDataset};
use crate::error::{Error, Result};
use crate::numerics::optim::OptResult;

pub use contrast::{slope_contrast, slope_contrast_with, ContrastOptions};
pub use lm::fit_lm;
pub use lme::{fit_lme, fit_two_slope_lme, select_changepoint_aic};
pub use mmrm::{fit_mmrm, fit_mmrm_with, MmrmOptions};
pub use two_stage::fit_two_stage;

/// Estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lm,
    Lme,
    TwoSlope,
    TwoStage,
    Mmrm,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Lm,
        Method::Lme,
        Method::TwoSlope,
        Method::TwoStage,
        Method::Mmrm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lm => "lm",
            Method::Lme => "lme",
            Method::TwoSlope => "two-slope",
            Method::TwoStage => "two-stage",
            Method::Mmrm => "mmrm",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lm" => Ok(Method::Lm),
            "lme" => Ok(Method::Lme),
            "two-slope" => Ok(Method::TwoSlope),
            "two-stage" => Ok(Method::TwoStage),
            "mmrm" => Ok(Method::Mmrm),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

/// Where the slope-relevant coefficients live inside `beta`.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefLayout {
    /// Constant-slope models: `time` column plus one `arm:time` column per
    /// non-reference arm.
    LinearSlopes { time: usize, arm_time: Vec<usize> },
    /// Piecewise models: `time` and `hinge` columns plus per-arm
    /// interactions; `tau0` in original time units.
    PiecewiseSlopes {
        time: usize,
        hinge: usize,
        arm_time: Vec<usize>,
        arm_hinge: Vec<usize>,
        tau0: f64,
    },
    /// Discrete-visit models: reference mean column per visit and per-arm
    /// difference columns (`None` where pinned to zero at baseline).
    VisitMeans {
        grid: Vec<f64>,
        visit: Vec<usize>,
        arm_visit: Vec<Vec<Option<usize>>>,
    },
    /// Two-stage: one mean-slope coefficient per arm.
    GroupSlopes { arm: Vec<usize> },
}

impl CoefLayout {
    /// Number of arms the fit distinguishes.
    pub fn n_arms(&self) -> usize {
        match self {
            CoefLayout::LinearSlopes { arm_time, .. } => arm_time.len() + 1,
            CoefLayout::PiecewiseSlopes { arm_time, .. } => arm_time.len() + 1,
            CoefLayout::VisitMeans { arm_visit, .. } => arm_visit.len() + 1,
            CoefLayout::GroupSlopes { arm } => arm.len(),
        }
    }
}

/// Fitted covariance parameters, reported in original time units.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    /// Random-effect covariance (mixed models) or the visit covariance
    /// (repeated measures).
    pub matrix: DMatrix<f64>,
    /// Residual SD (mixed models only).
    pub sigma: Option<f64>,
    /// Internal unconstrained parameters at the optimum.
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub converged: bool,
    pub n_subjects: usize,
    /// Subjects excluded by the method (two-stage: fewer than two distinct
    /// visit times).
    pub n_excluded: usize,
    pub opt: Option<OptResult>,
}

/// One fitted model: named coefficients with covariance, plus
/// method-specific layout needed to form slope contrasts.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub method: Method,
    pub names: Vec<String>,
    pub beta: DVector<f64>,
    pub beta_cov: DMatrix<f64>,
    pub layout: CoefLayout,
    pub cov_params: Option<CovarianceEstimate>,
    /// Change point (piecewise model only), original units.
    pub tau0: Option<f64>,
    /// Visit grid (repeated-measures model only).
    pub grid: Option<Vec<f64>>,
    /// `deviance + 2 * (#fixed + #covariance parameters)` for the
    /// REML-based fits.
    pub aic: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.beta[i])
    }
}

/// Dispatch on [`Method`]. `tau0` is required by the piecewise model and
/// ignored elsewhere.
pub fn fit_method(
    ds: &LongitudinalDataset,
    method: Method,
    tau0: Option<f64>,
) -> Result<FitResult> {
    match method {
        Method::Lm => fit_lm(ds),
        Method::Lme => fit_lme(ds),
        Method::TwoSlope => {
            let tau0 = tau0.ok_or_else(|| {
                Error::InvalidConfig("two-slope model needs tau0".into())
            })?;
            fit_two_slope_lme(ds, tau0)
        }
        Method::TwoStage => fit_two_stage(ds),
        Method::Mmrm => fit_mmrm(ds),
    }
}

/// Relative zero-residual threshold: data this close to the fixed-effect
/// fit has no estimable dispersion, and the model collapses to OLS.
pub(crate) fn is_degenerate_rss(rss: f64, n: usize, p: usize, var_y: f64) -> bool {
    let dof = n.saturating_sub(p).max(1) as f64;
    rss / dof <= 1e-12 * (1.0 + var_y)
}

pub(crate) fn arm_index_checked(layout: &CoefLayout, arm: ArmId) -> Result<usize> {
    let k = layout.n_arms();
    let a = arm as usize;
    if a == 0 || a >= k {
        return Err(Error::DomainError {
            what: "target arm",
            value: f64::from(arm),
        });
    }
    Ok(a)
}
