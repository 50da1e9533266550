//! Two-stage estimator: per-subject OLS slopes, then arm means compared
//! with an unequal-variance (Welch) standard error.

use nalgebra::{DMatrix, DVector};

use crate::dataset::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::estimators::{CoefLayout, Diagnostics, FitResult, Method};

/// Stage 1 fits an OLS line per subject (subjects with fewer than two
/// distinct visit times are excluded and counted); stage 2 averages the
/// slopes within each arm (`fit_two_stage`).
pub fn fit_two_stage(ds: &LongitudinalDataset) -> Result<FitResult> {
    let k = ds.n_arms();
    let mut slopes: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut n_excluded = 0usize;

    for s in ds.subjects() {
        if s.times.len() < 2 {
            n_excluded += 1;
            continue;
        }
        let n = s.times.len() as f64;
        let mt = s.times.iter().sum::<f64>() / n;
        let my = s.values.iter().sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (t, y) in s.times.iter().zip(&s.values) {
            sxx += (t - mt) * (t - mt);
            sxy += (t - mt) * (y - my);
        }
        slopes[s.arm as usize].push(sxy / sxx);
    }

    let mut beta = DVector::zeros(k);
    let mut cov = DMatrix::zeros(k, k);
    let mut names = Vec::with_capacity(k);
    for (arm, arm_slopes) in slopes.iter().enumerate() {
        if arm_slopes.is_empty() {
            return Err(Error::ArmEmptyAfterExclusion { arm: arm as u8 });
        }
        let n = arm_slopes.len() as f64;
        let mean = arm_slopes.iter().sum::<f64>() / n;
        let var = if arm_slopes.len() >= 2 {
            arm_slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        beta[arm] = mean;
        cov[(arm, arm)] = var / n;
        names.push(format!("arm{arm}:slope"));
    }

    Ok(FitResult {
        method: Method::TwoStage,
        names,
        beta,
        beta_cov: cov,
        layout: CoefLayout::GroupSlopes {
            arm: (0..k).collect(),
        },
        cov_params: None,
        tau0: None,
        grid: None,
        aic: None,
        diagnostics: Diagnostics {
            converged: true,
            n_subjects: ds.subjects().len() - n_excluded,
            n_excluded,
            opt: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Measurement;
    use crate::estimators::fit_lm;
    use crate::simgen::{apply_censoring, generate, CensoringScheme, GenConfig};
    use crate::trajectories::Setting;

    #[test]
    fn matches_lm_on_complete_balanced_data() {
        let cfg = GenConfig {
            censoring: CensoringScheme::None,
            ..GenConfig::new(Setting::S1, 30, 77)
        };
        let ds = generate(&cfg).unwrap();
        let ts = fit_two_stage(&ds).unwrap();
        let lm = fit_lm(&ds).unwrap();
        let ts_eff = ts.beta[1] - ts.beta[0];
        let lm_eff = lm.coef("arm1:time").unwrap();
        assert!((ts_eff - lm_eff).abs() < 1e-10, "{ts_eff} vs {lm_eff}");
    }

    #[test]
    fn baseline_only_subject_is_excluded() {
        let cfg = GenConfig {
            censoring: CensoringScheme::None,
            ..GenConfig::new(Setting::S1, 10, 3)
        };
        let ds = generate(&cfg).unwrap();
        let mut records: Vec<Measurement> = ds.measurements().to_vec();
        records.push(Measurement {
            subject_id: "only-baseline".into(),
            arm: 0,
            time: 0.0,
            egfr: 50.0,
        });
        let ds2 = LongitudinalDataset::build(records).unwrap();
        let fit = fit_two_stage(&ds2).unwrap();
        assert_eq!(fit.diagnostics.n_excluded, 1);
        assert_eq!(fit.diagnostics.n_subjects, 20);
    }

    #[test]
    fn censored_data_still_fits() {
        let cfg = GenConfig::new(Setting::S1, 60, 5);
        let ds = generate(&cfg).unwrap();
        let ds = apply_censoring(&ds, CensoringScheme::DiscreteUniformGrid, 9).unwrap();
        let fit = fit_two_stage(&ds).unwrap();
        assert!(fit.beta_cov[(1, 1)] > 0.0);
    }
}
