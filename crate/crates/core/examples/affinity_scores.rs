//! Builds per-grade median templates from labeled embeddings and scores new
//! embeddings against them with cosine affinity.
//!
//! cargo run --example affinity_scores

use automac::data_model::{Embedding, MotionGrade};
use automac::mogras::{score, templates_from_embeddings, TemplateConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Noisy points around one axis per grade.
fn sample(grade: MotionGrade, rng: &mut ChaCha8Rng) -> automac::Result<Embedding> {
    let noise = Normal::new(0.0f32, 0.3).expect("valid deviation");
    let values = (0..8)
        .map(|k| if k == grade.index() { 1.0 } else { 0.2 } + noise.sample(rng))
        .collect();
    Embedding::new(values)
}

fn main() -> automac::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut embeddings = Vec::new();
    let mut labels = Vec::new();
    for grade in MotionGrade::ALL {
        for _ in 0..25 {
            embeddings.push(sample(*grade, &mut rng)?);
            labels.push(*grade);
        }
    }
    let templates = templates_from_embeddings(&embeddings, &labels, "example", &TemplateConfig::default())?;
    println!("templates from {:?} embeddings per grade", templates.created_from());

    println!("truth           NoMo     SuMo     SeMo     closest");
    for grade in MotionGrade::ALL {
        let triple = score(&sample(*grade, &mut rng)?, &templates)?;
        let [a, b, c] = triple.scores();
        println!("{:<14} {a:>7.4}  {b:>7.4}  {c:>7.4}  {}", grade.as_str(), triple.best_grade().as_str());
    }
    Ok(())
}
