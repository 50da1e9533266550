//! Run a reduced operating-characteristics study and print the summary.
//!
//! Usage: cargo run --release --example quick_study [n_reps]

use slopelab_core::mcstudy::{run_study, StudyConfig};
use std::time::Instant;

fn main() {
    let reps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(400);
    let config = StudyConfig {
        n_reps: reps,
        ..StudyConfig::default()
    };
    let t0 = Instant::now();
    let summary = run_study(&config).unwrap();
    eprintln!("study took {:.1}s", t0.elapsed().as_secs_f64());
    println!("setting method     n_fail bias     sd      rmse    mean_se cover");
    for r in &summary.rows {
        println!(
            "{:>7} {:>9} {:>6} {:>+8.3} {:>7.3} {:>7.3} {:>7.3} {:>5.3}",
            r.setting.to_string(),
            r.method.to_string(),
            r.n_fail,
            r.bias,
            r.sd,
            r.rmse,
            r.mean_se,
            r.coverage95
        );
    }
}
