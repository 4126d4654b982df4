//! Procedural head phantoms used as clean sources for the simulator.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data_model::{Contrast, Orientation};
use crate::motion_sim::SourceImage;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy)]
struct Tissue {
    scalp: f64,
    gray: f64,
    white: f64,
    csf: f64,
}

fn tissue(contrast: Contrast) -> Tissue {
    match contrast {
        Contrast::T1w => Tissue { scalp: 0.90, gray: 0.45, white: 0.68, csf: 0.10 },
        Contrast::T2w => Tissue { scalp: 0.55, gray: 0.62, white: 0.45, csf: 1.00 },
        Contrast::PDw => Tissue { scalp: 0.80, gray: 0.72, white: 0.60, csf: 0.82 },
        Contrast::Flair => Tissue { scalp: 0.60, gray: 0.62, white: 0.45, csf: 0.06 },
    }
}

const ORIENTATIONS: [Orientation; 8] = [
    Orientation::Axial,
    Orientation::Coronal,
    Orientation::Axial,
    Orientation::Sagittal,
    Orientation::Axial,
    Orientation::Coronal,
    Orientation::Axial,
    Orientation::Oblique,
];

/// Clean phantom number `index`; contrast and orientation cycle with the index.
pub fn phantom_source(index: usize, size: usize, seed: u64) -> SourceImage {
    let contrast = Contrast::ALL[index % Contrast::ALL.len()];
    let orientation = ORIENTATIONS[(index / Contrast::ALL.len()) % ORIENTATIONS.len()];
    SourceImage {
        id: format!("phantom_{index:03}"),
        pixels: head_phantom(size, contrast, orientation, seed ^ (index as u64).wrapping_mul(0x9E37_79B9)),
        contrast,
        orientation,
    }
}

pub fn phantom_sources(count: usize, size: usize, seed: u64) -> Vec<SourceImage> {
    (0..count).map(|i| phantom_source(i, size, seed)).collect()
}

/// Ellipse-based head: scalp, skull, cortex with folded boundary, white
/// matter, ventricles and a few focal lesions, under a smooth bias field with
/// Rician noise.
pub fn head_phantom(size: usize, contrast: Contrast, orientation: Orientation, seed: u64) -> Array2<f32> {
    let mut rng = rng_for(seed, "phantom", size as u64);
    let t = tissue(contrast);
    let n = size as f64;
    let (aspect_y, aspect_x) = match orientation {
        Orientation::Axial => (0.42, 0.36),
        Orientation::Coronal => (0.40, 0.38),
        Orientation::Sagittal => (0.38, 0.44),
        Orientation::Oblique => (0.41, 0.40),
    };
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng, v: f64| v * rng.random_range(0.92..1.08);
    let ry = jitter(&mut rng, aspect_y) * n;
    let rx = jitter(&mut rng, aspect_x) * n;
    let cy = n / 2.0 + rng.random_range(-0.03..0.03) * n;
    let cx = n / 2.0 + rng.random_range(-0.03..0.03) * n;
    let tilt: f64 = rng.random_range(-0.25..0.25);
    let folds = rng.random_range(9..16) as f64;
    let fold_depth = rng.random_range(0.03..0.07);
    let fold_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let vent_w = rng.random_range(0.10..0.18);
    let vent_h = rng.random_range(0.18..0.30);
    let lesions: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(0..4))
        .map(|_| {
            (
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.03..0.08),
                rng.random_range(-0.25..0.35),
            )
        })
        .collect();
    let bias = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    let noise = Normal::new(0.0, 0.012).expect("valid sigma");

    let (st, ct) = tilt.sin_cos();
    Array2::from_shape_fn((size, size), |(r, c)| {
        let (dy, dx) = (r as f64 - cy, c as f64 - cx);
        let y = (ct * dy - st * dx) / ry;
        let x = (st * dy + ct * dx) / rx;
        let rho = (x * x + y * y).sqrt();
        let theta = y.atan2(x);
        let mut v = if rho > 1.0 {
            0.0
        } else if rho > 0.93 {
            t.scalp
        } else if rho > 0.86 {
            0.05
        } else if rho > 0.82 {
            t.csf
        } else {
            let cortex = 0.82 - 0.12 - fold_depth * (folds * theta + fold_phase).sin();
            if rho > cortex {
                t.gray
            } else {
                let vy = y / vent_h;
                let vx = (x.abs() - 0.12) / vent_w;
                if vy * vy + vx * vx < 1.0 {
                    t.csf
                } else {
                    t.white
                }
            }
        };
        if rho < 0.75 {
            for &(ly, lx, lr, delta) in &lesions {
                let d2 = (y - ly).powi(2) + (x - lx).powi(2);
                if d2 < lr * lr {
                    v += delta * 0.5;
                }
            }
        }
        let field = 1.0 + bias.0 * y + bias.1 * x;
        let re = v * field + noise.sample(&mut rng);
        let im = noise.sample(&mut rng);
        (1000.0 * (re * re + im * im).sqrt()) as f32
    })
}
