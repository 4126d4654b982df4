//! Projects labeled high-dimensional embeddings to 2-D with t-SNE, reports
//! their cosine silhouette and draws the scatter plot.
//!
//! cargo run --example embedding_projection -- [out.svg]

use automac::data_model::MotionGrade;
use automac::evaluation::figures::projection_svg;
use automac::evaluation::{project_2d, silhouette, TsneConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("automac-projection.svg").display().to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0f32, 1.0).expect("valid deviation");
    let centers: Vec<Vec<f32>> = (0..3).map(|_| (0..64).map(|_| 3.0 * noise.sample(&mut rng)).collect()).collect();
    let labels: Vec<MotionGrade> = (0..150).map(|i| MotionGrade::ALL[i % 3]).collect();
    let points: Vec<Vec<f32>> = labels
        .iter()
        .map(|g| centers[g.index()].iter().map(|c| c + noise.sample(&mut rng)).collect())
        .collect();
    let rows: Vec<&[f32]> = points.iter().map(Vec::as_slice).collect();

    println!("cosine silhouette: {:.3}", silhouette(&rows, &labels)?);
    let projected = project_2d(&rows, 0, &TsneConfig::default())?;
    std::fs::write(&out, projection_svg(&projected, &labels, "three grade clusters"))?;
    println!("scatter written to {out}");
    Ok(())
}
