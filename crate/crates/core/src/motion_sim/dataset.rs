use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{Contrast, MotionGrade, Orientation, Provenance, SliceRecord};
use crate::error::{Error, Result};
use crate::ingestion::image_io::{write_image, ImageFormat};
use crate::ingestion::manifest::{Manifest, ManifestEntry};
use crate::motion_sim::kspace::{simulate_motion, MotionParams};
use crate::motion_sim::{grade_from_params, GradeThresholds};
use crate::seed::{derive_seed, rng_for};

/// A clean slice the simulator corrupts.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceImage {
    pub id: String,
    pub pixels: Array2<f32>,
    pub contrast: Contrast,
    pub orientation: Orientation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// Slices per grade, ordered NoMotion, SubtleMotion, SevereMotion.
    pub per_grade_counts: [usize; 3],
    pub thresholds: GradeThresholds,
    pub max_rotation_deg: f64,
    pub max_shift_px: f64,
    pub n_motion_states: usize,
    pub seed: u64,
    pub format: ImageFormat,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            per_grade_counts: [10, 10, 10],
            thresholds: GradeThresholds::default(),
            max_rotation_deg: 6.0,
            max_shift_px: 6.0,
            n_motion_states: 4,
            seed: 0,
            format: ImageFormat::Amac,
        }
    }
}

/// One row of the simulation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSlice {
    pub image_path: String,
    pub source_id: String,
    pub grade: MotionGrade,
    pub params: MotionParams,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub slices: Vec<SimulatedSlice>,
}

/// Corruption draws for every output slice, in emission order (grade-major).
pub fn plan_dataset(sources: &[SourceImage], spec: &SimulationSpec) -> Result<Vec<SimulatedSlice>> {
    let total: usize = spec.per_grade_counts.iter().sum();
    if total > 0 && sources.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot simulate slices from an empty source list".into(),
        ));
    }
    spec.thresholds.validate()?;
    let mut slices = Vec::with_capacity(total);
    let mut index = 0u64;
    for grade in MotionGrade::ALL.iter().copied() {
        let (lo, hi) = spec.thresholds.band(grade);
        for j in 0..spec.per_grade_counts[grade.index()] {
            let mut rng = rng_for(spec.seed, "slice", index);
            let corrupt_fraction = match grade {
                MotionGrade::NoMotion => 0.0,
                MotionGrade::SubtleMotion => rng.random_range(lo..hi),
                MotionGrade::SevereMotion => rng.random_range(lo..=hi),
            };
            let params = MotionParams {
                corrupt_fraction,
                max_rotation_deg: spec.max_rotation_deg,
                max_shift_px: spec.max_shift_px,
                n_motion_states: spec.n_motion_states,
                seed: derive_seed(spec.seed, "motion", index),
            };
            debug_assert_eq!(grade_from_params(&params, &spec.thresholds), grade);
            let source = &sources[(j + grade.index()) % sources.len()];
            slices.push(SimulatedSlice {
                image_path: format!(
                    "images/{}/{:05}.{}",
                    grade.as_str(),
                    index,
                    spec.format.extension()
                ),
                source_id: source.id.clone(),
                grade,
                params,
            });
            index += 1;
        }
    }
    Ok(slices)
}

/// In-memory variant of [`generate_dataset`]: labeled records, ids equal to
/// the manifest paths the on-disk variant would write.
pub fn simulate_records(sources: &[SourceImage], spec: &SimulationSpec) -> Result<Vec<SliceRecord>> {
    plan_dataset(sources, spec)?
        .iter()
        .map(|s| render(sources, s))
        .collect()
}

fn render(sources: &[SourceImage], slice: &SimulatedSlice) -> Result<SliceRecord> {
    let source = sources
        .iter()
        .find(|s| s.id == slice.source_id)
        .expect("planned source exists");
    let pixels = simulate_motion(&source.pixels, &slice.params)?;
    let mut record = SliceRecord::new(
        slice.image_path.clone(),
        pixels,
        source.contrast,
        source.orientation,
        Some(slice.grade),
    )
    .with_provenance(Provenance::Synthetic);
    record
        .metadata
        .insert("source_id".into(), source.id.clone());
    record.metadata.insert(
        "corrupt_fraction".into(),
        format!("{}", slice.params.corrupt_fraction),
    );
    Ok(record)
}

/// Writes the corrupted slices, `manifest.csv` and `simulation.jsonl` under
/// `out_dir`.
pub fn generate_dataset(
    sources: &[SourceImage],
    spec: &SimulationSpec,
    out_dir: &Path,
) -> Result<GeneratedDataset> {
    let slices = plan_dataset(sources, spec)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(slices.len());
    let mut log = String::new();
    for slice in &slices {
        let record = render(sources, slice)?;
        write_image(&out_dir.join(&slice.image_path), &record.pixels, spec.format)?;
        entries.push(ManifestEntry {
            image_path: slice.image_path.clone(),
            contrast: record.contrast,
            orientation: record.orientation,
            grade: Some(slice.grade),
            provenance: Provenance::Synthetic,
        });
        log.push_str(&serde_json::to_string(slice).expect("slice log serializes"));
        log.push('\n');
    }
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    let manifest_path = out_dir.join("manifest.csv");
    manifest.write(&manifest_path)?;
    let log_path = out_dir.join("simulation.jsonl");
    fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
    Ok(GeneratedDataset {
        manifest,
        manifest_path,
        slices,
    })
}
