//! Splits a simulated manifest into train / validation / test sets,
//! stratified by contrast, orientation and grade.
//!
//! cargo run --example split_manifest

use automac::data_model::MotionGrade;
use automac::ingestion::{stratified_split_indices, SplitSpec};
use automac::motion_sim::phantom::phantom_sources;
use automac::motion_sim::{generate_dataset, SimulationSpec};

fn main() -> automac::Result<()> {
    let dir = std::env::temp_dir().join("automac-split");
    let spec = SimulationSpec {
        per_grade_counts: [40, 40, 40],
        seed: 3,
        ..SimulationSpec::default()
    };
    let dataset = generate_dataset(&phantom_sources(30, 48, 3), &spec, &dir)?;
    let entries = &dataset.manifest.entries;
    let split = stratified_split_indices(entries, &SplitSpec::new([0.6, 0.1, 0.3], 11)?)?;
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let mut per_grade = [0usize; 3];
        for &i in part {
            per_grade[entries[i].grade.map_or(0, MotionGrade::index)] += 1;
        }
        println!("{name:<5} {:>4} slices, per grade {per_grade:?}", part.len());
    }
    Ok(())
}
