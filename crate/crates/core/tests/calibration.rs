//! Statistical calibration checks that need moderate Monte Carlo effort:
//! change-point selection frequency, the parametric-bootstrap oracle for
//! delta-method standard errors, SE-vs-SD calibration, and GLS invariance
//! on saturated designs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use slopelab_core::dataset::EstimandSpec;
use slopelab_core::estimators::{fit_lme, select_changepoint_aic, slope_contrast, Method};
use slopelab_core::mcstudy::{run_study, StudyConfig};
use slopelab_core::numerics::{chol_psd, CovStructure, RemlProblem, SubjectGroup, ZSpec};
use slopelab_core::simgen::{generate, CensoringScheme, GenConfig};
use slopelab_core::trajectories::Setting;

/// AIC picks the generating change point on most negative-acute-effect
/// replicates. The candidates sit on the visit grid; a candidate strictly
/// between two visits spans the same model as its right grid neighbour and
/// is indistinguishable from it (see the equivalence test below).
#[test]
fn aic_prefers_true_changepoint() {
    let candidates = [0.5, 1.0, 1.5];
    let reps = 200;
    let mut hits = 0;
    for rep in 0..reps {
        let cfg = GenConfig {
            censoring: CensoringScheme::None,
            ..GenConfig::new(Setting::S3, 60, 5000 + rep)
        };
        let ds = generate(&cfg).unwrap();
        let (tau0, _) = select_changepoint_aic(&ds, &candidates).unwrap();
        if tau0 == 0.5 {
            hits += 1;
        }
    }
    assert!(
        hits * 100 >= reps * 80,
        "selected the true change point in only {hits}/{reps} replicates"
    );
}

/// On half-yearly visits, a change point at 0.25 is collinear with
/// {time, hinge(0.5)} over the observed times (hinge_0.25 = t/2 +
/// hinge_0.5/2 at every visit), so both candidates describe one model and
/// the basis-invariant deviance gives them equal AIC.
#[test]
fn subgrid_changepoint_is_equivalent_to_grid_neighbour() {
    let cfg = GenConfig {
        censoring: CensoringScheme::None,
        ..GenConfig::new(Setting::S3, 50, 123)
    };
    let ds = generate(&cfg).unwrap();
    let quarter = slopelab_core::estimators::fit_two_slope_lme(&ds, 0.25).unwrap();
    let half = slopelab_core::estimators::fit_two_slope_lme(&ds, 0.5).unwrap();
    let (a, b) = (quarter.aic.unwrap(), half.aic.unwrap());
    assert!((a - b).abs() < 1e-3, "aic {a} vs {b}");
    // The total-slope contrast agrees as well: same model, two bases.
    let spec = EstimandSpec::total(3.0).unwrap();
    let ca = slope_contrast(&quarter, &spec, 1).unwrap();
    let cb = slope_contrast(&half, &spec, 1).unwrap();
    assert!((ca.estimate - cb.estimate).abs() < 1e-5);
}

/// Delta-method SE of a linear contrast agrees with a 10k-draw parametric
/// bootstrap from the fitted coefficient distribution.
#[test]
fn delta_method_se_matches_parametric_bootstrap() {
    let cfg = GenConfig::new(Setting::S1, 120, 31);
    let ds = generate(&cfg).unwrap();
    let fit = fit_lme(&ds).unwrap();
    assert!(fit.diagnostics.converged);
    let spec = EstimandSpec::total(3.0).unwrap();
    let est = slope_contrast(&fit, &spec, 1).unwrap();

    // The total-slope contrast reads a single coefficient (arm1:time).
    let idx = fit.names.iter().position(|n| n == "arm1:time").unwrap();
    let p = fit.beta.len();
    let a = DVector::from_fn(p, |i, _| if i == idx { 1.0 } else { 0.0 });

    let chol = chol_psd(&fit.beta_cov).unwrap();
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n_draws = 10_000;
    let mut values = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let beta_star = &fit.beta + &l * z;
        values.push(a.dot(&beta_star));
    }
    let mean = values.iter().sum::<f64>() / n_draws as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        / (n_draws - 1) as f64)
        .sqrt();
    assert!(
        (sd / est.se - 1.0).abs() < 0.05,
        "bootstrap sd {sd:.6} vs delta-method se {:.6}",
        est.se
    );
}

/// For a correctly specified mixed model the average reported SE tracks the
/// Monte Carlo SD of the estimates.
#[test]
fn mean_se_tracks_monte_carlo_sd() {
    let config = StudyConfig {
        settings: vec![Setting::S1],
        methods: vec![Method::Lme],
        n_per_arm: 60,
        n_reps: 150,
        master_seed: 777,
        ..StudyConfig::default()
    };
    let summary = run_study(&config).unwrap();
    let row = &summary.rows[0];
    assert!(
        (row.mean_se / row.sd - 1.0).abs() < 0.20,
        "mean_se {:.4} vs sd {:.4}",
        row.mean_se,
        row.sd
    );
}

/// On a complete balanced saturated design the GLS fixed effects do not
/// depend on the covariance parameters: they equal the per-cell means for
/// any theta.
#[test]
fn saturated_gls_is_invariant_to_theta() {
    let n_visits = 3;
    let times = [0.0, 1.0, 2.0];
    let n_per_arm = 7;
    let mut state = 0xabcdef12345u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };

    // Saturated two-arm design: one column per (arm, visit) cell.
    let p = 2 * n_visits;
    let mut groups = Vec::new();
    let mut cell_sums = vec![0.0; p];
    for arm in 0..2usize {
        for _ in 0..n_per_arm {
            let x = DMatrix::from_fn(n_visits, p, |r, c| {
                if c == arm * n_visits + r {
                    1.0
                } else {
                    0.0
                }
            });
            let y = DVector::from_fn(n_visits, |r, _| {
                50.0 - 2.0 * times[r] + 3.0 * next() - f64::from(arm as u8)
            });
            for r in 0..n_visits {
                cell_sums[arm * n_visits + r] += y[r];
            }
            groups.push(SubjectGroup {
                m: 1.0,
                sum_yy: &y * y.transpose(),
                sum_y: y,
                z: ZSpec::Visits((0..n_visits).collect()),
                x,
            });
        }
    }
    let problem = RemlProblem {
        groups,
        p,
        n_total: 2 * n_per_arm * n_visits,
        n_subjects: 2 * n_per_arm,
        structure: CovStructure::Unstructured { dim: n_visits },
    };

    let cell_means: Vec<f64> = cell_sums.iter().map(|s| s / n_per_arm as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let theta: Vec<f64> = (0..problem.theta_dim())
            .map(|_| rng.random_range(-0.8..0.8))
            .collect();
        let gls = problem.gls(&theta).unwrap();
        for (j, &mean) in cell_means.iter().enumerate() {
            assert!(
                (gls.beta[j] - mean).abs() < 1e-8,
                "theta {theta:?}: beta[{j}] = {} vs cell mean {mean}",
                gls.beta[j]
            );
        }
    }
}
