//! Regenerate data/three_arm_synthetic.csv, the packaged three-arm example
//! dataset: piecewise-linear decline with a change point at 0.5 years, two
//! active arms against a reference, subject-level random effects, and
//! grid-uniform censoring.
//!
//! Usage: cargo run --example make_three_arm_fixture [out_path]

use rand_distr::{Distribution, StandardNormal};
use slopelab_core::dataset::{LongitudinalDataset, Measurement};
use slopelab_core::rng::{stable_hash, stream, TAG_CENSOR, TAG_SUBJECT};

const SEED: u64 = 3_141_592;
const N_PER_ARM: usize = 100;
const TAU0: f64 = 0.5;
/// Per-arm (slope, post-change-point increment); arm 0 is the reference.
const ARM_SLOPES: [(f64, f64); 3] = [(-2.25, 0.0), (-3.5, 2.0), (-1.0, -0.6)];

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "data/three_arm_synthetic.csv".into());
    let grid: Vec<f64> = (0..=6).map(|i| f64::from(i) * 0.5).collect();
    let atoms: Vec<f64> = grid.iter().copied().filter(|&t| t >= 0.5).collect();

    let mut records = Vec::new();
    for (arm, &(b1, b2)) in ARM_SLOPES.iter().enumerate() {
        for i in 0..N_PER_ARM {
            let id = format!("a{arm}s{i:03}");
            let global = arm * N_PER_ARM + i;
            let mut rng = stream(SEED, TAG_SUBJECT, global as u64);
            let z: [f64; 3] = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            let (rb0, rb1, rb2) = (8.0 * z[0], 1.0 * z[1], 1.0 * z[2]);

            let mut crng = stream(SEED, TAG_CENSOR, stable_hash(&id));
            let c = atoms[rand::Rng::random_range(&mut crng, 0..atoms.len())];

            for &t in &grid {
                if t > c {
                    break;
                }
                let h = (t - TAU0).max(0.0);
                let eps: f64 = StandardNormal.sample(&mut rng);
                let y = 47.5 + rb0 + (b1 + rb1) * t + (b2 + rb2) * h + 0.8 * eps;
                records.push(Measurement {
                    subject_id: id.clone(),
                    arm: arm as u8,
                    time: t,
                    egfr: y,
                });
            }
        }
    }

    let ds = LongitudinalDataset::build(records).expect("valid fixture dataset");
    let mut buf = Vec::new();
    ds.to_csv_writer(&mut buf).unwrap();
    std::fs::write(&out, buf).unwrap();
    eprintln!(
        "wrote {} ({} subjects, {} rows)",
        out,
        ds.subjects().len(),
        ds.measurements().len()
    );
}
