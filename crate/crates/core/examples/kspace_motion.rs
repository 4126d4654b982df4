//! Corrupts one phantom slice in k-space at increasing severity and prints
//! how far each result moves from the clean image.
//!
//! cargo run --example kspace_motion

use automac::motion_sim::kspace::plan_motion;
use automac::motion_sim::phantom::phantom_source;
use automac::motion_sim::{grade_from_params, simulate_motion, GradeThresholds, MotionParams};

fn main() -> automac::Result<()> {
    let source = phantom_source(0, 128, 42);
    let clean = &source.pixels;
    let energy = clean.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
    let thresholds = GradeThresholds::default();
    println!("fraction  rows  grade           relative error");
    for fraction in [0.0, 0.02, 0.05, 0.1, 0.2, 0.35] {
        let params = MotionParams {
            corrupt_fraction: fraction,
            max_rotation_deg: 6.0,
            max_shift_px: 6.0,
            n_motion_states: 4,
            seed: 7,
        };
        let corrupted = simulate_motion(clean, &params)?;
        let diff = clean
            .iter()
            .zip(&corrupted)
            .map(|(a, b)| f64::from(a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let trace = plan_motion(clean.nrows(), &params);
        println!(
            "{fraction:>8.2}  {:>4}  {:<14}  {:.4}",
            trace.rows.len(),
            grade_from_params(&params, &thresholds).as_str(),
            diff / energy
        );
    }
    Ok(())
}
