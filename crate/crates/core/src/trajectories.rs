//! Ground-truth mean trajectories for the four simulation settings and the
//! weighted-average-slope oracle.
//!
//! The oracle integrates the instantaneous slope y(t) of a mean trajectory
//! Y(t) against a weight function,
//!
//! ```text
//! h(t1, t2) = ∫ w(t) y(t) dt / ∫ w(t) dt,
//! ```
//!
//! splitting the integration at trajectory kinks so piecewise-linear
//! derivatives integrate exactly. With the uniform weight this reduces to
//! the endpoint difference quotient (Y(t2) − Y(t1)) / (t2 − t1).

use serde::{Deserialize, Serialize};

use crate::dataset::{ArmId, EstimandSpec};
use crate::error::{Error, Result};

/// Follow-up horizon in years shared by all settings.
pub const HORIZON: f64 = 3.0;

/// Change point (years) for the acute-effect settings.
pub const TAU0: f64 = 0.5;

/// Simulation setting label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    /// Linear decline in both arms.
    S1,
    /// Log-time (nonlinear) decline in both arms.
    S2,
    /// Negative acute treatment effect for the first half year.
    S3,
    /// Positive acute treatment effect for the first half year.
    S4,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::S1, Setting::S2, Setting::S3, Setting::S4];

    pub fn from_index(idx: u8) -> Result<Self> {
        match idx {
            1 => Ok(Setting::S1),
            2 => Ok(Setting::S2),
            3 => Ok(Setting::S3),
            4 => Ok(Setting::S4),
            _ => Err(Error::DomainError {
                what: "setting index",
                value: f64::from(idx),
            }),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Setting::S1 => 1,
            Setting::S2 => 2,
            Setting::S3 => 3,
            Setting::S4 => 4,
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Functional form of a mean trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrajectoryShape {
    /// beta0 + beta1 * t
    Linear,
    /// beta0 + beta1 * ln(5t + 1)
    LogTime,
    /// beta0 + beta1 * t + beta2 * max(t − tau0, 0)
    Piecewise { beta2: f64, tau0: f64 },
}

/// Parametric description of one setting/arm: mean trajectory plus
/// random-effect and residual dispersion used by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub setting: Setting,
    pub arm: ArmId,
    pub beta0: f64,
    pub beta1: f64,
    pub shape: TrajectoryShape,
    /// Standard deviations of the random effects (intercept, slope, and the
    /// post-change-point increment when present).
    pub sd_b0: f64,
    pub sd_b1: f64,
    pub sd_b2: Option<f64>,
    /// Correlation between random intercept and slope; the acute-effect
    /// settings use mutually independent effects.
    pub corr_b0b1: f64,
    /// Residual standard deviation.
    pub sigma: f64,
}

const BASELINE: f64 = 47.5;
const SD_INTERCEPT: f64 = 17.5;

impl TrajectorySpec {
    /// The generating parameters for a setting and arm (0 = control,
    /// 1 = treatment).
    pub fn for_setting(setting: Setting, arm: ArmId) -> Result<Self> {
        if arm > 1 {
            return Err(Error::DomainError {
                what: "setting arm",
                value: f64::from(arm),
            });
        }
        let treated = arm == 1;
        let spec = match setting {
            Setting::S1 => Self {
                setting,
                arm,
                beta0: BASELINE,
                beta1: if treated { -1.5 } else { -2.25 },
                shape: TrajectoryShape::Linear,
                sd_b0: SD_INTERCEPT,
                sd_b1: 1.0,
                sd_b2: None,
                corr_b0b1: 0.5,
                sigma: 1.0,
            },
            Setting::S2 => Self {
                setting,
                arm,
                beta0: BASELINE,
                beta1: if treated { -1.5 } else { -2.31 },
                shape: TrajectoryShape::LogTime,
                sd_b0: SD_INTERCEPT,
                sd_b1: 1.0,
                sd_b2: None,
                corr_b0b1: 0.5,
                sigma: 1.0,
            },
            Setting::S3 => {
                if treated {
                    Self {
                        setting,
                        arm,
                        beta0: BASELINE,
                        beta1: -4.0,
                        shape: TrajectoryShape::Piecewise { beta2: 3.0, tau0: TAU0 },
                        sd_b0: SD_INTERCEPT,
                        sd_b1: 2.0,
                        sd_b2: Some(2.0),
                        corr_b0b1: 0.0,
                        sigma: 1.0,
                    }
                } else {
                    Self {
                        setting,
                        arm,
                        beta0: BASELINE,
                        beta1: -2.25,
                        shape: TrajectoryShape::Linear,
                        sd_b0: SD_INTERCEPT,
                        sd_b1: 1.0,
                        sd_b2: None,
                        corr_b0b1: 0.5,
                        sigma: 1.0,
                    }
                }
            }
            Setting::S4 => {
                if treated {
                    Self {
                        setting,
                        arm,
                        beta0: BASELINE,
                        beta1: 2.5,
                        shape: TrajectoryShape::Piecewise { beta2: -4.5, tau0: TAU0 },
                        sd_b0: SD_INTERCEPT,
                        sd_b1: 2.0,
                        sd_b2: Some(2.0),
                        corr_b0b1: 0.0,
                        sigma: 1.0,
                    }
                } else {
                    Self {
                        setting,
                        arm,
                        beta0: BASELINE,
                        beta1: -2.5,
                        shape: TrajectoryShape::Linear,
                        sd_b0: SD_INTERCEPT,
                        sd_b1: 1.0,
                        sd_b2: None,
                        corr_b0b1: 0.5,
                        sigma: 1.0,
                    }
                }
            }
        };
        Ok(spec)
    }

    /// Mean eGFR at time t (`mean_trajectory`); t must lie in [0, HORIZON].
    pub fn mean(&self, t: f64) -> Result<f64> {
        if !(0.0..=HORIZON).contains(&t) {
            return Err(Error::DomainError {
                what: "trajectory time",
                value: t,
            });
        }
        Ok(self.mean_unchecked(t))
    }

    pub(crate) fn mean_unchecked(&self, t: f64) -> f64 {
        match self.shape {
            TrajectoryShape::Linear => self.beta0 + self.beta1 * t,
            TrajectoryShape::LogTime => self.beta0 + self.beta1 * (5.0 * t + 1.0).ln(),
            TrajectoryShape::Piecewise { beta2, tau0 } => {
                self.beta0 + self.beta1 * t + beta2 * (t - tau0).max(0.0)
            }
        }
    }

    /// Instantaneous slope of the mean trajectory at t.
    pub fn mean_deriv(&self, t: f64) -> f64 {
        match self.shape {
            TrajectoryShape::Linear => self.beta1,
            TrajectoryShape::LogTime => 5.0 * self.beta1 / (5.0 * t + 1.0),
            TrajectoryShape::Piecewise { beta2, tau0 } => {
                if t > tau0 {
                    self.beta1 + beta2
                } else {
                    self.beta1
                }
            }
        }
    }

    /// Points where the derivative is discontinuous.
    pub fn kinks(&self) -> Vec<f64> {
        match self.shape {
            TrajectoryShape::Piecewise { tau0, .. } => vec![tau0],
            _ => Vec::new(),
        }
    }
}

/// Adaptive Simpson quadrature on a kink-free panel.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Weighted average slope of a trajectory over [t1, t2] (`weighted_avg_slope`).
///
/// `deriv` is the instantaneous slope y(t); `kinks` lists the finitely many
/// derivative discontinuities; `weight` must be positive on the interval.
pub fn weighted_avg_slope(
    deriv: &dyn Fn(f64) -> f64,
    kinks: &[f64],
    t1: f64,
    t2: f64,
    weight: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    if !(t1.is_finite() && t2.is_finite()) || t1 >= t2 {
        return Err(Error::DomainError {
            what: "slope interval",
            value: t2 - t1,
        });
    }
    // Probe positivity at panel midpoints and endpoints.
    for &t in &[t1, 0.5 * (t1 + t2), t2] {
        let w = weight(t);
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::WeightError { t, value: w });
        }
    }

    let mut cuts = vec![t1];
    let mut inner: Vec<f64> = kinks
        .iter()
        .copied()
        .filter(|&k| k > t1 && k < t2)
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    cuts.extend(inner);
    cuts.push(t2);

    let tol = 1e-12;
    let mut num = 0.0;
    let mut den = 0.0;
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        num += adaptive_simpson(&|t| weight(t) * deriv(t), a, b, tol);
        den += adaptive_simpson(weight, a, b, tol);
    }
    if !(den.is_finite() && den > 0.0) {
        return Err(Error::WeightError { t: t1, value: den });
    }
    Ok(num / den)
}

/// Uniform-weight average slope of a setting/arm mean trajectory, computed in
/// closed form from the endpoint difference quotient.
pub fn average_slope_closed_form(spec: &TrajectorySpec, t1: f64, t2: f64) -> Result<f64> {
    let y1 = spec.mean(t1)?;
    let y2 = spec.mean(t2)?;
    Ok((y2 - y1) / (t2 - t1))
}

/// True average slope over [0, HORIZON] for a setting and arm
/// (`true_total_slope`).
pub fn true_total_slope(setting: Setting, arm: ArmId) -> Result<f64> {
    let spec = TrajectorySpec::for_setting(setting, arm)?;
    let slope = match spec.shape {
        TrajectoryShape::Linear => spec.beta1,
        TrajectoryShape::LogTime => spec.beta1 * (5.0 * HORIZON + 1.0).ln() / HORIZON,
        TrajectoryShape::Piecewise { beta2, tau0 } => {
            spec.beta1 + beta2 * (HORIZON - tau0) / HORIZON
        }
    };
    Ok(slope)
}

/// True between-arm difference in weighted average slope for an estimand
/// (`true_effect`).
pub fn true_effect(setting: Setting, spec: &EstimandSpec) -> Result<f64> {
    if spec.t2 > HORIZON {
        return Err(Error::DomainError {
            what: "estimand end",
            value: spec.t2,
        });
    }
    let trt = TrajectorySpec::for_setting(setting, 1)?;
    let ctl = TrajectorySpec::for_setting(setting, 0)?;
    // Uniform weight: the closed form is exact; the quadrature oracle is
    // exercised against it in tests.
    let h1 = average_slope_closed_form(&trt, spec.t1, spec.t2)?;
    let h0 = average_slope_closed_form(&ctl, spec.t1, spec.t2)?;
    Ok(h1 - h0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn s1_control_baseline_and_end() {
        let spec = TrajectorySpec::for_setting(Setting::S1, 0).unwrap();
        close(spec.mean(0.0).unwrap(), 47.5, 0.0);
        close(spec.mean(3.0).unwrap(), 40.75, 1e-12);
    }

    #[test]
    fn s3_treatment_end_value() {
        let spec = TrajectorySpec::for_setting(Setting::S3, 1).unwrap();
        // 47.5 − 4·3 + 3·2.5
        close(spec.mean(3.0).unwrap(), 43.0, 1e-12);
    }

    #[test]
    fn time_outside_domain_rejected() {
        let spec = TrajectorySpec::for_setting(Setting::S1, 0).unwrap();
        assert!(spec.mean(3.5).is_err());
        assert!(spec.mean(-0.1).is_err());
    }

    #[test]
    fn total_slopes_match_closed_forms() {
        close(true_total_slope(Setting::S1, 1).unwrap(), -1.5, 1e-12);
        close(true_total_slope(Setting::S1, 0).unwrap(), -2.25, 1e-12);
        close(
            true_total_slope(Setting::S2, 1).unwrap(),
            -1.5 * 16f64.ln() / 3.0,
            1e-12,
        );
        close(
            true_total_slope(Setting::S2, 0).unwrap(),
            -2.31 * 16f64.ln() / 3.0,
            1e-12,
        );
        close(true_total_slope(Setting::S3, 1).unwrap(), -1.5, 1e-12);
        close(true_total_slope(Setting::S4, 1).unwrap(), -1.25, 1e-12);
        close(true_total_slope(Setting::S4, 0).unwrap(), -2.5, 1e-12);
    }

    #[test]
    fn linear_slope_invariant_to_interval_and_weight() {
        let spec = TrajectorySpec::for_setting(Setting::S1, 0).unwrap();
        let deriv = |t: f64| spec.mean_deriv(t);
        let weights: [&dyn Fn(f64) -> f64; 3] =
            [&|_| 1.0, &|t: f64| t + 1.0, &|t: f64| t.exp()];
        for w in weights {
            for (a, b) in [(0.0, 3.0), (0.25, 1.75), (1.0, 2.0)] {
                let h = weighted_avg_slope(&deriv, &[], a, b, w).unwrap();
                close(h, -2.25, 1e-8);
            }
        }
    }

    #[test]
    fn s2_quadrature_matches_closed_form() {
        let spec = TrajectorySpec::for_setting(Setting::S2, 1).unwrap();
        let deriv = |t: f64| spec.mean_deriv(t);
        let h = weighted_avg_slope(&deriv, &[], 0.0, 3.0, &|_| 1.0).unwrap();
        close(h, -1.5 * 16f64.ln() / 3.0, 1e-8);

        let ctl = TrajectorySpec::for_setting(Setting::S2, 0).unwrap();
        let d0 = |t: f64| ctl.mean_deriv(t);
        let h0 = weighted_avg_slope(&d0, &[], 0.0, 3.0, &|_| 1.0).unwrap();
        close(h0, average_slope_closed_form(&ctl, 0.0, 3.0).unwrap(), 1e-8);
    }

    #[test]
    fn endpoint_identity_over_random_intervals() {
        // Uniform-weight quadrature equals the difference quotient for all
        // settings and arms over a deterministic sweep of intervals.
        for setting in Setting::ALL {
            for arm in [0u8, 1u8] {
                let spec = TrajectorySpec::for_setting(setting, arm).unwrap();
                let deriv = |t: f64| spec.mean_deriv(t);
                let kinks = spec.kinks();
                for i in 0..100 {
                    let a = 3.0 * (i as f64) / 101.0;
                    let b = a + 3.0 * (101.0 - i as f64) / 101.0 * 0.9;
                    let b = b.min(3.0);
                    let h = weighted_avg_slope(&deriv, &kinks, a, b, &|_| 1.0).unwrap();
                    let closed = average_slope_closed_form(&spec, a, b).unwrap();
                    close(h, closed, 1e-8);
                }
            }
        }
    }

    #[test]
    fn true_effects_match_table_values() {
        let total = EstimandSpec::total(3.0).unwrap();
        close(true_effect(Setting::S1, &total).unwrap(), 0.75, 1e-12);
        close(
            true_effect(Setting::S2, &total).unwrap(),
            0.81 * 16f64.ln() / 3.0,
            1e-12,
        );
        close(true_effect(Setting::S3, &total).unwrap(), 0.75, 1e-12);
        close(true_effect(Setting::S4, &total).unwrap(), 1.25, 1e-12);

        // Chronic window for the negative-acute setting: (−4+3) − (−2.25).
        let chronic = EstimandSpec::chronic(0.5, 3.0).unwrap();
        close(true_effect(Setting::S3, &chronic).unwrap(), 1.25, 1e-12);
    }

    #[test]
    fn quadrature_total_matches_true_total_slope() {
        for setting in Setting::ALL {
            for arm in [0u8, 1u8] {
                let spec = TrajectorySpec::for_setting(setting, arm).unwrap();
                let deriv = |t: f64| spec.mean_deriv(t);
                let h =
                    weighted_avg_slope(&deriv, &spec.kinks(), 0.0, 3.0, &|_| 1.0).unwrap();
                close(h, true_total_slope(setting, arm).unwrap(), 1e-6);
            }
        }
    }

    #[test]
    fn nonpositive_weight_rejected() {
        let spec = TrajectorySpec::for_setting(Setting::S1, 0).unwrap();
        let deriv = |t: f64| spec.mean_deriv(t);
        let err = weighted_avg_slope(&deriv, &[], 0.0, 3.0, &|t| t - 1.5).unwrap_err();
        assert!(matches!(err, Error::WeightError { .. }));
    }
}
