//! Property tests for structural invariants: dataset round-trips, grid
//! behavior, covariance parameterization, and estimator equivariances.

use proptest::prelude::*;

use slopelab_core::dataset::{EstimandSpec, LongitudinalDataset, Measurement};
use slopelab_core::estimators::{fit_lm, fit_two_stage, slope_contrast};
use slopelab_core::numerics::{decode_cov, encode_cov};
use slopelab_core::simgen::{generate, CensoringScheme, GenConfig};
use slopelab_core::trajectories::Setting;

fn balanced_dataset(
    n_per_arm: usize,
    times: &[f64],
    seed: u64,
) -> LongitudinalDataset {
    // Deterministic pseudo-random values; xorshift is plenty here.
    let mut state = seed | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut records = Vec::new();
    for arm in [0u8, 1u8] {
        for i in 0..n_per_arm {
            let b0 = 40.0 + 20.0 * next();
            let b1 = -3.0 + 2.0 * next() + f64::from(arm);
            for &t in times {
                records.push(Measurement {
                    subject_id: format!("a{arm}s{i:03}"),
                    arm,
                    time: t,
                    egfr: b0 + b1 * t + (next() - 0.5),
                });
            }
        }
    }
    LongitudinalDataset::build(records).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dataset_round_trip(seed in 0u64..1000) {
        let ds = balanced_dataset(5, &[0.0, 0.5, 1.5], seed);
        let again = LongitudinalDataset::build(ds.measurements().to_vec()).unwrap();
        prop_assert_eq!(ds, again);
    }

    #[test]
    fn build_is_order_independent(seed in 0u64..1000, swap in any::<prop::sample::Index>()) {
        let ds = balanced_dataset(4, &[0.0, 1.0, 2.0], seed);
        let mut shuffled = ds.measurements().to_vec();
        let k = swap.index(shuffled.len().max(1));
        shuffled.rotate_left(k);
        let rebuilt = LongitudinalDataset::build(shuffled).unwrap();
        prop_assert_eq!(ds.visit_grid(), rebuilt.visit_grid());
        prop_assert_eq!(ds, rebuilt);
    }

    #[test]
    fn log_cholesky_round_trip(v in prop::collection::vec(-1.5f64..1.5, 6)) {
        let cov = decode_cov(&v, 3);
        let back = encode_cov(&cov).unwrap();
        for (a, b) in v.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn two_stage_equals_lm_on_complete_balanced(seed in 0u64..500) {
        let ds = balanced_dataset(8, &[0.0, 0.5, 1.0, 1.5], seed);
        let lm = fit_lm(&ds).unwrap();
        let ts = fit_two_stage(&ds).unwrap();
        let diff = (ts.beta[1] - ts.beta[0]) - lm.coef("arm1:time").unwrap();
        prop_assert!(diff.abs() < 1e-9, "diff {}", diff);
    }

    #[test]
    fn location_and_scale_equivariance(seed in 0u64..500, c in -30.0f64..30.0, k in 0.5f64..4.0) {
        let ds = balanced_dataset(6, &[0.0, 1.0, 2.0], seed);
        let spec = EstimandSpec::total(2.0).unwrap();
        let base_lm = slope_contrast(&fit_lm(&ds).unwrap(), &spec, 1).unwrap();
        let base_ts = slope_contrast(&fit_two_stage(&ds).unwrap(), &spec, 1).unwrap();

        let shifted: Vec<Measurement> = ds
            .measurements()
            .iter()
            .map(|m| Measurement { egfr: m.egfr + c, ..m.clone() })
            .collect();
        let ds_shift = LongitudinalDataset::build(shifted).unwrap();
        let lm_shift = slope_contrast(&fit_lm(&ds_shift).unwrap(), &spec, 1).unwrap();
        prop_assert!((lm_shift.estimate - base_lm.estimate).abs() < 1e-8);

        let scaled: Vec<Measurement> = ds
            .measurements()
            .iter()
            .map(|m| Measurement { time: m.time * k, ..m.clone() })
            .collect();
        let ds_scale = LongitudinalDataset::build(scaled).unwrap();
        let spec_k = EstimandSpec::total(2.0 * k).unwrap();
        let lm_scale = slope_contrast(&fit_lm(&ds_scale).unwrap(), &spec_k, 1).unwrap();
        let ts_scale = slope_contrast(&fit_two_stage(&ds_scale).unwrap(), &spec_k, 1).unwrap();
        prop_assert!((lm_scale.estimate * k - base_lm.estimate).abs() < 1e-8);
        prop_assert!((ts_scale.estimate * k - base_ts.estimate).abs() < 1e-8);
    }

    #[test]
    fn censoring_keeps_prefixes(seed in 0u64..300) {
        let cfg = GenConfig {
            censoring: CensoringScheme::DiscreteUniformGrid,
            ..GenConfig::new(Setting::S1, 12, seed)
        };
        let ds = generate(&cfg).unwrap();
        let grid = ds.visit_grid().to_vec();
        for s in ds.subjects() {
            prop_assert_eq!(s.times.as_slice(), &grid[..s.times.len()]);
        }
    }
}
