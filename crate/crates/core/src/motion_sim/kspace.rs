//! Rigid-motion ghosting by phase-encode line substitution.
//!
//! Rows of the image are the phase-encode direction. A corrupted slice keeps
//! the k-space of the original pose except for a random subset of rows, which
//! are taken from the k-space of rigidly moved copies of the image.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data_model::MIN_SLICE_SIDE;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    /// Fraction of phase-encode rows replaced, in `[0, 1]`.
    pub corrupt_fraction: f64,
    pub max_rotation_deg: f64,
    pub max_shift_px: f64,
    pub n_motion_states: usize,
    pub seed: u64,
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return Err(Error::InvalidArgument(format!(
                "corrupt_fraction {} outside [0, 1]",
                self.corrupt_fraction
            )));
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg.is_finite()) {
            return Err(Error::InvalidArgument("max_rotation_deg must be >= 0".into()));
        }
        if !(self.max_shift_px >= 0.0 && self.max_shift_px.is_finite()) {
            return Err(Error::InvalidArgument("max_shift_px must be >= 0".into()));
        }
        if self.n_motion_states == 0 {
            return Err(Error::InvalidArgument("n_motion_states must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of phase-encode rows replaced in an image with `height` rows.
    pub fn corrupted_rows(&self, height: usize) -> usize {
        ((self.corrupt_fraction * height as f64).floor() as usize).min(height)
    }
}

/// In-plane rigid transform: rotation about the image center, then a shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    pub rotation_deg: f64,
    pub shift_rows: f64,
    pub shift_cols: f64,
}

/// The random draws behind one simulated slice.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTrace {
    pub states: Vec<RigidMotion>,
    /// Replaced k-space rows, ascending.
    pub rows: Vec<usize>,
    /// Motion state feeding each entry of `rows`.
    pub row_states: Vec<usize>,
}

/// Draws the motion states and the replaced rows for an image of `height` rows.
pub fn plan_motion(height: usize, params: &MotionParams) -> MotionTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let states = (0..params.n_motion_states)
        .map(|_| RigidMotion {
            rotation_deg: symmetric(&mut rng, params.max_rotation_deg),
            shift_rows: symmetric(&mut rng, params.max_shift_px),
            shift_cols: symmetric(&mut rng, params.max_shift_px),
        })
        .collect();
    let mut rows = sample(&mut rng, height, params.corrupted_rows(height)).into_vec();
    rows.sort_unstable();
    let row_states = rows
        .iter()
        .map(|_| rng.random_range(0..params.n_motion_states))
        .collect();
    MotionTrace {
        states,
        rows,
        row_states,
    }
}

/// Magnitude uniform in `[max/2, max]` with a random sign, so every motion
/// state is a real displacement.
fn symmetric(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    if max == 0.0 {
        return 0.0;
    }
    let magnitude = rng.random_range(max / 2.0..=max);
    if rng.random_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// Motion-corrupted magnitude image. Deterministic in `(image, params)`; with
/// no replaced rows the input is returned unchanged.
pub fn simulate_motion(image: &Array2<f32>, params: &MotionParams) -> Result<Array2<f32>> {
    check_image(image)?;
    params.validate()?;
    if params.corrupted_rows(image.nrows()) == 0 {
        return Ok(image.clone());
    }
    let (complex, _) = simulate_motion_complex(image, params)?;
    Ok(complex.mapv(|z| z.norm() as f32))
}

/// Complex image before the magnitude step, with the draws that produced it.
pub fn simulate_motion_complex(
    image: &Array2<f32>,
    params: &MotionParams,
) -> Result<(Array2<Complex64>, MotionTrace)> {
    check_image(image)?;
    params.validate()?;
    let trace = plan_motion(image.nrows(), params);
    let source = image.mapv(|v| Complex64::new(f64::from(v), 0.0));
    let mut kspace = fft2(&source, false);
    let moved: Vec<Array2<Complex64>> = trace
        .states
        .iter()
        .map(|m| {
            let moved = rigid_transform(image, m).mapv(|v| Complex64::new(v, 0.0));
            fft2(&moved, false)
        })
        .collect();
    for (&row, &state) in trace.rows.iter().zip(&trace.row_states) {
        kspace.row_mut(row).assign(&moved[state].row(row));
    }
    Ok((fft2(&kspace, true), trace))
}

fn check_image(image: &Array2<f32>) -> Result<()> {
    let (h, w) = image.dim();
    if h < MIN_SLICE_SIDE || w < MIN_SLICE_SIDE {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} below {MIN_SLICE_SIDE}x{MIN_SLICE_SIDE}"
        )));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("motion simulation needs a finite image".into()));
    }
    Ok(())
}

/// Bilinear resampling of `image` under `motion`; samples outside the field
/// of view read as zero.
pub fn rigid_transform(image: &Array2<f32>, motion: &RigidMotion) -> Array2<f64> {
    let (h, w) = image.dim();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = motion.rotation_deg.to_radians().sin_cos();
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            f64::from(image[[r as usize, c as usize]])
        }
    };
    Array2::from_shape_fn((h, w), |(r, c)| {
        // Inverse map: undo the shift, then rotate back about the center.
        let y = r as f64 - cy - motion.shift_rows;
        let x = c as f64 - cx - motion.shift_cols;
        let sy = cos * y - sin * x + cy;
        let sx = sin * y + cos * x + cx;
        let (y0, x0) = (sy.floor(), sx.floor());
        let (ty, tx) = (sy - y0, sx - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
        let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    })
}

/// Unnormalized forward 2-D DFT, or the normalized inverse when `inverse`.
pub fn fft2(input: &Array2<Complex64>, inverse: bool) -> Array2<Complex64> {
    let (h, w) = input.dim();
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let mut data = input.as_standard_layout().to_owned();
    for mut row in data.rows_mut() {
        let mut buf = row.to_vec();
        row_fft.process(&mut buf);
        row.assign(&ndarray::ArrayView1::from(&buf));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            buf[r] = data[[r, c]];
        }
        col_fft.process(&mut buf);
        for r in 0..h {
            data[[r, c]] = buf[r];
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        data.mapv_inplace(|z| z * scale);
    }
    data
}
