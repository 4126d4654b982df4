//! Generates a small graded dataset on disk (slices, `manifest.csv` and the
//! per-slice simulation log) from procedural head phantoms.
//!
//! cargo run --example simulate_dataset -- [out_dir]

use std::path::PathBuf;

use automac::data_model::MotionGrade;
use automac::motion_sim::phantom::phantom_sources;
use automac::motion_sim::{generate_dataset, SimulationSpec};

fn main() -> automac::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("automac-simulated"));
    let sources = phantom_sources(12, 96, 1);
    let spec = SimulationSpec {
        per_grade_counts: [8, 8, 8],
        seed: 1,
        ..SimulationSpec::default()
    };
    let dataset = generate_dataset(&sources, &spec, &out)?;
    println!("{} slices written, manifest at {}", dataset.slices.len(), dataset.manifest_path.display());
    for grade in MotionGrade::ALL {
        let fractions: Vec<f64> = dataset
            .slices
            .iter()
            .filter(|s| s.grade == *grade)
            .map(|s| s.params.corrupt_fraction)
            .collect();
        let lo = fractions.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = fractions.iter().copied().fold(0.0, f64::max);
        println!("{:<14} {} slices, corrupted fraction {lo:.3} to {hi:.3}", grade.as_str(), fractions.len());
    }
    Ok(())
}
