//! Domain types shared by every stage of the pipeline.
//!
//! All types here are plain values: once constructed they are never mutated
//! in place, so they can be shared freely between threads.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Width of the encoder embedding in the reference configuration.
pub const EMBEDDING_DIM: usize = 512;

/// Smallest accepted slice side length.
pub const MIN_SLICE_SIDE: usize = 32;

/// Scores this far outside `[-1, 1]` are treated as rounding noise and clamped.
pub const SCORE_CLAMP_TOLERANCE: f64 = 1e-9;

macro_rules! label_enum {
    (
        $(#[$meta:meta])*
        $name:ident, $kind:literal { $($variant:ident => $label:literal),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($label => Ok($name::$variant),)+
                    other => Err(Error::UnknownLabel {
                        kind: $kind,
                        label: other.to_string(),
                    }),
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

label_enum! {
    /// Clinically actionable motion severity, ordered from clean to severe.
    MotionGrade, "grade" {
        NoMotion => "no_motion",
        SubtleMotion => "subtle_motion",
        SevereMotion => "severe_motion",
    }
}

label_enum! {
    Contrast, "contrast" {
        T1w => "T1w",
        T2w => "T2w",
        PDw => "PDw",
        Flair => "FLAIR",
    }
}

label_enum! {
    Orientation, "orientation" {
        Axial => "axial",
        Coronal => "coronal",
        Sagittal => "sagittal",
        Oblique => "oblique",
    }
}

label_enum! {
    Provenance, "provenance" {
        Real => "real",
        Synthetic => "synthetic",
    }
}

impl MotionGrade {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Abbreviation used for the per-grade affinity score columns.
    pub fn abbrev(self) -> &'static str {
        match self {
            MotionGrade::NoMotion => "NoMo",
            MotionGrade::SubtleMotion => "SuMo",
            MotionGrade::SevereMotion => "SeMo",
        }
    }
}

/// One 2-D MR slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRecord {
    pub id: String,
    /// Row-major intensities, rows along the phase-encode direction.
    pub pixels: Array2<f32>,
    pub contrast: Contrast,
    pub orientation: Orientation,
    pub grade: Option<MotionGrade>,
    pub provenance: Provenance,
    pub metadata: BTreeMap<String, String>,
}

impl SliceRecord {
    pub fn new(
        id: impl Into<String>,
        pixels: Array2<f32>,
        contrast: Contrast,
        orientation: Orientation,
        grade: Option<MotionGrade>,
    ) -> Self {
        SliceRecord {
            id: id.into(),
            pixels,
            contrast,
            orientation,
            grade,
            provenance: Provenance::Real,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    /// Ground-truth grade, or an error for unlabeled records.
    pub fn require_grade(&self) -> Result<MotionGrade> {
        self.grade.ok_or_else(|| Error::InvalidRecord {
            id: self.id.clone(),
            reason: "record has no ground-truth grade".into(),
        })
    }
}

/// Checks every [`SliceRecord`] invariant and hands the record back.
pub fn validate(record: SliceRecord) -> Result<SliceRecord> {
    let invalid = |reason: String| Error::InvalidRecord {
        id: record.id.clone(),
        reason,
    };
    if record.id.trim().is_empty() {
        return Err(invalid("empty id".into()));
    }
    let (h, w) = record.pixels.dim();
    if h < MIN_SLICE_SIDE || w < MIN_SLICE_SIDE {
        return Err(invalid(format!(
            "image is {h}x{w}, minimum is {MIN_SLICE_SIDE}x{MIN_SLICE_SIDE}"
        )));
    }
    if let Some(((r, c), v)) = record.pixels.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(invalid(format!("non-finite pixel {v} at ({r}, {c})")));
    }
    Ok(record)
}

/// Encoder output for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("embedding must not be empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("embedding contains non-finite values".into()));
        }
        Ok(Embedding(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt()
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

/// Per-grade reference vectors in embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct GradeTemplateSet {
    templates: [Vec<f32>; 3],
    encoder_fingerprint: String,
    created_from: [usize; 3],
    created_unix: u64,
}

impl GradeTemplateSet {
    pub fn new(
        templates: [Vec<f32>; 3],
        encoder_fingerprint: impl Into<String>,
        created_from: [usize; 3],
        created_unix: u64,
    ) -> Result<Self> {
        let encoder_fingerprint = encoder_fingerprint.into();
        if encoder_fingerprint.is_empty() {
            return Err(Error::InvalidArgument(
                "template set needs an encoder fingerprint".into(),
            ));
        }
        let dim = templates[0].len();
        for (grade, row) in MotionGrade::ALL.iter().zip(&templates) {
            if row.is_empty() || row.len() != dim {
                return Err(Error::Shape(format!(
                    "template for {grade} has length {}, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("template for {grade} is not finite")));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::Data(format!("template for {grade} is the zero vector")));
            }
        }
        Ok(GradeTemplateSet {
            templates,
            encoder_fingerprint,
            created_from,
            created_unix,
        })
    }

    pub fn template(&self, grade: MotionGrade) -> &[f32] {
        &self.templates[grade.index()]
    }

    pub fn dim(&self) -> usize {
        self.templates[0].len()
    }

    pub fn encoder_fingerprint(&self) -> &str {
        &self.encoder_fingerprint
    }

    pub fn created_from(&self) -> [usize; 3] {
        self.created_from
    }

    pub fn created_unix(&self) -> u64 {
        self.created_unix
    }

    /// Same set with every template multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        let templates = self
            .templates
            .clone()
            .map(|row| row.into_iter().map(|v| v * factor).collect());
        Self::new(
            templates,
            self.encoder_fingerprint.clone(),
            self.created_from,
            self.created_unix,
        )
    }
}

/// Cosine affinity of one slice to each grade template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoGrASTriple {
    scores: [f64; 3],
}

impl MoGrASTriple {
    pub fn new(scores: [f64; 3]) -> Result<Self> {
        let mut clamped = scores;
        for (grade, s) in MotionGrade::ALL.iter().zip(clamped.iter_mut()) {
            if !s.is_finite() || s.abs() > 1.0 + SCORE_CLAMP_TOLERANCE {
                return Err(Error::Data(format!(
                    "affinity score {s} for {grade} outside [-1, 1]"
                )));
            }
            *s = s.clamp(-1.0, 1.0);
        }
        Ok(MoGrASTriple { scores: clamped })
    }

    pub fn get(&self, grade: MotionGrade) -> f64 {
        self.scores[grade.index()]
    }

    pub fn scores(&self) -> [f64; 3] {
        self.scores
    }

    /// Grade with the highest affinity; ties go to the more severe grade.
    pub fn best_grade(&self) -> MotionGrade {
        argmax_toward_severe(&self.scores)
    }
}

/// Discrete grade assigned by the classifier head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradePrediction {
    pub grade: MotionGrade,
    pub probabilities: [f64; 3],
}

impl GradePrediction {
    pub fn from_probabilities(probabilities: [f64; 3]) -> Result<Self> {
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Data(format!(
                "probabilities must be nonnegative, got {probabilities:?}"
            )));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("probabilities sum to {total}, not 1")));
        }
        Ok(GradePrediction {
            grade: argmax_toward_severe(&probabilities),
            probabilities,
        })
    }

    /// Softmax over three logits.
    pub fn from_logits(logits: [f64; 3]) -> Result<Self> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps = logits.map(|l| (l - max).exp());
        let total: f64 = exps.iter().sum();
        Self::from_probabilities(exps.map(|e| e / total))
    }
}

pub(crate) fn argmax_toward_severe(values: &[f64; 3]) -> MotionGrade {
    let mut best = 0;
    for i in 1..3 {
        if values[i] >= values[best] {
            best = i;
        }
    }
    MotionGrade::ALL[best]
}
