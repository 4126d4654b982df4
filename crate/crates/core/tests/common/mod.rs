//! Independent reference implementations shared by the integration tests.
//! Everything here is written as plain loops over `f64`, without reusing
//! library code paths.

#![allow(dead_code)]

use automac::data_model::{Embedding, GradeTemplateSet, MotionGrade};
use automac::losses::{ntxent_loss, supcon_loss};
use automac::mogras::{score, templates_from_embeddings, TemplateConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn unit_rows(z: &Array2<f32>) -> Vec<Vec<f64>> {
    z.rows()
        .into_iter()
        .map(|r| {
            let n = r.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            r.iter().map(|&v| f64::from(v) / n).collect()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Supervised contrastive loss (positives averaged outside the log), mean
/// over anchors.
pub fn supcon_oracle(z: &Array2<f32>, labels: &[usize], tau: f64) -> f64 {
    let u = unit_rows(z);
    let n = u.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += (dot(&u[i], &u[a]) / tau).exp();
            }
        }
        let mut sum = 0.0;
        let mut count = 0;
        for p in 0..n {
            if p != i && labels[p] == labels[i] {
                sum += ((dot(&u[i], &u[p]) / tau).exp() / denom).ln();
                count += 1;
            }
        }
        total += -sum / count as f64;
    }
    total / n as f64
}

/// NT-Xent over the stacked views `[a; b]`, mean over all `2N` anchors.
pub fn ntxent_oracle(a: &Array2<f32>, b: &Array2<f32>, tau: f64) -> f64 {
    let mut u = unit_rows(a);
    u.extend(unit_rows(b));
    let m = u.len();
    let half = m / 2;
    let mut total = 0.0;
    for i in 0..m {
        let partner = if i < half { i + half } else { i - half };
        let mut denom = 0.0;
        for k in 0..m {
            if k != i {
                denom += (dot(&u[i], &u[k]) / tau).exp();
            }
        }
        total -= ((dot(&u[i], &u[partner]) / tau).exp() / denom).ln();
    }
    total / m as f64
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f32> {
    loop {
        let m = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0f32..1.0));
        if m.rows().into_iter().all(|r| r.iter().map(|v| v * v).sum::<f32>() > 1e-3) {
            return m;
        }
    }
}

/// Labels in which every class has at least two members.
fn paired_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let classes = rng.random_range(1..=(n / 2).min(3));
    let mut labels: Vec<usize> = (0..n).map(|i| if i < 2 * classes { i / 2 } else { rng.random_range(0..classes) }).collect();
    for i in (1..n).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    labels
}

/// Largest deviation between library and oracle losses over `batches`
/// random batches each for supcon and NT-Xent.
pub fn loss_oracle_max_error(batches: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for b in 0..batches {
        let tau = [0.07, 0.5, 1.0][b % 3];
        let d = rng.random_range(1..=4);
        let n = rng.random_range(2..=8);
        let z = random_matrix(&mut rng, n, d);
        let labels = paired_labels(&mut rng, n);
        let lib = supcon_loss(z.view(), &labels, tau).unwrap().loss;
        worst = worst.max((lib - supcon_oracle(&z, &labels, tau)).abs());

        let pairs = rng.random_range(1..=4);
        let a = random_matrix(&mut rng, pairs, d);
        let v = random_matrix(&mut rng, pairs, d);
        let lib = ntxent_loss(a.view(), v.view(), tau).unwrap().loss;
        worst = worst.max((lib - ntxent_oracle(&a, &v, tau)).abs());
    }
    worst
}

/// Hand-derived closed forms: four mutually orthogonal unit vectors in two
/// classes at `tau = 1` give `ln 3`; two identical-view pairs orthogonal to
/// each other give `ln(1 + 2/e)`.
pub fn hand_case_errors() -> [f64; 2] {
    let eye = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 1.0f32 } else { 0.0 });
    let supcon = supcon_loss(eye.view(), &[0, 0, 1, 1], 1.0).unwrap().loss;
    let pairs = Array2::from_shape_vec((2, 2), vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
    let ntxent = ntxent_loss(pairs.view(), pairs.view(), 1.0).unwrap().loss;
    [
        (supcon - 3f64.ln()).abs(),
        (ntxent - (1.0 + 2.0 / std::f64::consts::E).ln()).abs(),
    ]
}

pub fn random_embedding(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return Embedding::new(v).unwrap();
        }
    }
}

fn template_set(rows: [Vec<f32>; 3]) -> GradeTemplateSet {
    GradeTemplateSet::new(rows, "oracle", [1, 1, 1], 0).unwrap()
}

/// Results of the affinity-score exactness checks.
#[derive(Debug)]
pub struct MograsChecks {
    pub self_error: f64,
    pub antipodal_error: f64,
    pub scale_error: f64,
    pub out_of_range: usize,
}

impl MograsChecks {
    pub fn pass(&self) -> bool {
        self.self_error <= 1e-9 && self.antipodal_error <= 1e-9 && self.scale_error <= 1e-9 && self.out_of_range == 0
    }
}

/// Largest score change under arbitrary positive scalings, which round
/// each coordinate to the nearest `f32` and so move the vector slightly.
pub fn rounded_scale_error(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let set = template_set([0, 1, 2].map(|_| random_embedding(&mut rng, 64).into_vec()));
        let e = random_embedding(&mut rng, 64);
        let factor = rng.random_range(0.01f32..100.0);
        let scaled = Embedding::new(e.values().iter().map(|v| v * factor).collect()).unwrap();
        let (a, b) = (score(&e, &set).unwrap(), score(&scaled, &set).unwrap());
        for (x, y) in a.scores().iter().zip(b.scores()) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

pub fn mogras_checks(samples: usize, seed: u64) -> MograsChecks {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = MograsChecks {
        self_error: 0.0,
        antipodal_error: 0.0,
        scale_error: 0.0,
        out_of_range: 0,
    };
    for s in 0..samples {
        let dim = [2, 8, 64, 512][s % 4];
        let rows = [0, 1, 2].map(|_| random_embedding(&mut rng, dim).into_vec());
        let set = template_set(rows.clone());
        let e = random_embedding(&mut rng, dim);
        let t = score(&e, &set).unwrap();
        c.out_of_range += t.scores().iter().filter(|v| !(-1.0..=1.0).contains(*v)).count();

        let k = s % 3;
        let grade = MotionGrade::from_index(k).unwrap();
        let own = score(&Embedding::new(rows[k].clone()).unwrap(), &set).unwrap();
        c.self_error = c.self_error.max((own.get(grade) - 1.0).abs());
        let flipped: Vec<f32> = rows[k].iter().map(|v| -v).collect();
        let anti = score(&Embedding::new(flipped).unwrap(), &set).unwrap();
        c.antipodal_error = c.antipodal_error.max((anti.get(grade) + 1.0).abs());

        // Powers of two scale f32 values exactly, so the scaled vectors stay
        // exactly parallel to the originals.
        let factor = 2f32.powi(rng.random_range(-20..=20));
        let scaled_e = Embedding::new(e.values().iter().map(|v| v * factor).collect()).unwrap();
        let scaled_t = set.scaled(2f32.powi(rng.random_range(-20..=20))).unwrap();
        for (x, y) in [score(&scaled_e, &set).unwrap(), score(&e, &scaled_t).unwrap()]
            .iter()
            .flat_map(|u| u.scores().into_iter().zip(t.scores()))
        {
            c.scale_error = c.scale_error.max((x - y).abs());
        }
    }
    c
}

/// Middle order statistic; even counts average the two middle values in
/// double precision before rounding back to `f32`.
pub fn sort_median(mut column: Vec<f32>) -> f32 {
    column.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = column.len();
    if n % 2 == 1 {
        column[n / 2]
    } else {
        ((column[n / 2 - 1] as f64 + column[n / 2] as f64) / 2.0) as f32
    }
}

/// Number of the `sets` random labeled sets whose templates differ from the
/// per-coordinate sort oracle in any bit.
pub fn median_template_mismatches(sets: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..sets {
        let dim = rng.random_range(1..=16);
        let mut embeddings = Vec::new();
        let mut labels = Vec::new();
        for g in MotionGrade::ALL {
            for _ in 0..rng.random_range(1..=9) {
                embeddings.push(random_embedding(&mut rng, dim));
                labels.push(*g);
            }
        }
        for i in (1..labels.len()).rev() {
            let j = rng.random_range(0..=i);
            labels.swap(i, j);
            embeddings.swap(i, j);
        }
        let set = templates_from_embeddings(&embeddings, &labels, "oracle", &TemplateConfig::default()).unwrap();
        for g in MotionGrade::ALL {
            let expected: Vec<f32> = (0..dim)
                .map(|k| {
                    sort_median(
                        embeddings
                            .iter()
                            .zip(&labels)
                            .filter(|(_, l)| *l == g)
                            .map(|(e, _)| e.values()[k])
                            .collect(),
                    )
                })
                .collect();
            if expected.iter().zip(set.template(*g)).any(|(a, b)| a.to_bits() != b.to_bits()) {
                mismatches += 1;
                break;
            }
        }
    }
    mismatches
}
