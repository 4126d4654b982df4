//! Synthetic three-grade motion corruption.
//!
//! The grade of a simulated slice is a function of the fraction of k-space
//! rows replaced. The default band edges are engineering stand-ins for the
//! clinical subtle/severe distinction, not measured values.

pub mod dataset;
pub mod kspace;
pub mod phantom;

use serde::{Deserialize, Serialize};

use crate::data_model::MotionGrade;
use crate::error::{Error, Result};

pub use dataset::{
    generate_dataset, plan_dataset, simulate_records, GeneratedDataset, SimulatedSlice,
    SimulationSpec, SourceImage,
};
pub use kspace::{simulate_motion, MotionParams, RigidMotion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeThresholds {
    pub subtle_min: f64,
    pub severe_min: f64,
}

impl Default for GradeThresholds {
    fn default() -> Self {
        GradeThresholds {
            subtle_min: 0.03,
            severe_min: 0.15,
        }
    }
}

impl GradeThresholds {
    pub fn new(subtle_min: f64, severe_min: f64) -> Result<Self> {
        let t = GradeThresholds {
            subtle_min,
            severe_min,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.subtle_min && self.subtle_min < self.severe_min && self.severe_min <= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "grade thresholds need 0 < subtle_min < severe_min <= 1, got {} / {}",
                self.subtle_min, self.severe_min
            )))
        }
    }

    /// Range of corrupt fractions mapped to `grade`. NoMotion samples use 0.
    pub fn band(&self, grade: MotionGrade) -> (f64, f64) {
        match grade {
            MotionGrade::NoMotion => (0.0, self.subtle_min),
            MotionGrade::SubtleMotion => (self.subtle_min, self.severe_min),
            MotionGrade::SevereMotion => (self.severe_min, 1.0),
        }
    }
}

pub fn grade_from_params(params: &MotionParams, thresholds: &GradeThresholds) -> MotionGrade {
    let f = params.corrupt_fraction;
    if f < thresholds.subtle_min {
        MotionGrade::NoMotion
    } else if f < thresholds.severe_min {
        MotionGrade::SubtleMotion
    } else {
        MotionGrade::SevereMotion
    }
}
