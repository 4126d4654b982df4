use ndarray::{Array2, Array3, Axis};

use crate::data_model::SliceRecord;

/// Network input side length for the ImageNet-style backbone.
pub const DEFAULT_INPUT_SIZE: usize = 224;

/// Encoder-ready image: one standardized plane, replicated to three channels
/// on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage {
    plane: Array2<f32>,
    source_id: String,
    constant_input: bool,
}

impl PreprocessedImage {
    /// Wraps an already standardized plane (used by augmentation).
    pub fn from_plane(plane: Array2<f32>, source_id: impl Into<String>) -> Self {
        PreprocessedImage {
            plane,
            source_id: source_id.into(),
            constant_input: false,
        }
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn size(&self) -> usize {
        self.plane.nrows()
    }

    pub fn plane(&self) -> &Array2<f32> {
        &self.plane
    }

    /// True when the source was constant and the zero-fill fallback was used.
    pub fn constant_input(&self) -> bool {
        self.constant_input
    }

    /// `3 x size x size` tensor with identical channels.
    pub fn tensor(&self) -> Array3<f32> {
        let plane = self.plane.view().insert_axis(Axis(0));
        ndarray::concatenate(Axis(0), &[plane, plane, plane]).expect("equal plane shapes")
    }
}

pub fn preprocess(record: &SliceRecord) -> PreprocessedImage {
    preprocess_to(record, DEFAULT_INPUT_SIZE)
}

/// Bilinear resize to `size x size` followed by per-image standardization.
pub fn preprocess_to(record: &SliceRecord, size: usize) -> PreprocessedImage {
    let (constant, plane) = standardize(&resize_bilinear(&record.pixels, size, size));
    let constant = constant || is_constant(&record.pixels);
    if constant {
        log::warn!(
            "slice `{}` has constant intensity; using an all-zero input",
            record.id
        );
    }
    PreprocessedImage {
        plane: if constant {
            Array2::zeros((size, size))
        } else {
            plane
        },
        source_id: record.id.clone(),
        constant_input: constant,
    }
}

fn is_constant(pixels: &Array2<f32>) -> bool {
    let first = pixels.iter().next().copied().unwrap_or(0.0);
    pixels.iter().all(|&v| v == first)
}

/// Zero-mean, unit-variance copy (population statistics, accumulated in
/// `f64`). The flag reports a zero standard deviation.
pub fn standardize(img: &Array2<f32>) -> (bool, Array2<f32>) {
    let n = img.len() as f64;
    let mean = img.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = img
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std <= f64::EPSILON * mean.abs().max(1.0) {
        return (true, Array2::zeros(img.dim()));
    }
    (false, img.mapv(|v| ((f64::from(v) - mean) / std) as f32))
}

/// Bilinear interpolation with half-pixel centers and edge clamping; a resize
/// to the same shape is the identity.
pub fn resize_bilinear(img: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (in_h, in_w) = img.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return img.clone();
    }
    let rows = axis_weights(in_h, out_h);
    let cols = axis_weights(in_w, out_w);
    Array2::from_shape_fn((out_h, out_w), |(r, c)| {
        let (r0, r1, tr) = rows[r];
        let (c0, c1, tc) = cols[c];
        let top = img[[r0, c0]] * (1.0 - tc) + img[[r0, c1]] * tc;
        let bottom = img[[r1, c0]] * (1.0 - tc) + img[[r1, c1]] * tc;
        top * (1.0 - tr) + bottom * tr
    })
}

fn axis_weights(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}
