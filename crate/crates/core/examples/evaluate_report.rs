//! Turns predictions and affinity scores into a report: confusion matrix,
//! precision and recall, score quartiles per grade, JSON and an SVG figure.
//!
//! cargo run --example evaluate_report -- [out_dir]

use std::path::PathBuf;

use automac::data_model::{MoGrASTriple, MotionGrade};
use automac::evaluation::figures::{confusion_svg, distribution_svg};
use automac::evaluation::{comparison_table, EvalReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("automac-report"));
    std::fs::create_dir_all(&out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let truths: Vec<MotionGrade> = (0..120).map(|i| MotionGrade::ALL[i % 3]).collect();
    let preds: Vec<MotionGrade> = truths
        .iter()
        .map(|t| {
            if rng.random_bool(0.85) {
                *t
            } else {
                MotionGrade::ALL[(t.index() + 1) % 3]
            }
        })
        .collect();
    let triples = truths
        .iter()
        .map(|t| {
            let base = 1.0 - 0.4 * t.index() as f64;
            let scores = [base, 0.6, 1.0 - base].map(|s: f64| (s + rng.random_range(-0.1..0.1)).clamp(-1.0, 1.0));
            MoGrASTriple::new(scores)
        })
        .collect::<automac::Result<Vec<_>>>()?;

    let report = EvalReport::new("example", &preds, &truths, Some(&triples), None, serde_json::json!({ "seed": 9 }))?;
    println!("accuracy / precision(no motion) / recall(severe): {}", report.table_row());
    println!("confusion (rows truth, columns prediction): {:?}", report.confusion.counts);

    let write = |name: &str, text: String| std::fs::write(out.join(name), text);
    write("report.json", report.to_json())?;
    write("confusion.svg", confusion_svg(&report.confusion, "example"))?;
    if let Some(dist) = &report.mogras {
        write("scores.svg", distribution_svg(dist, "example"))?;
    }
    print!("{}", comparison_table(std::slice::from_ref(&report)));
    println!("report and figures in {}", out.display());
    Ok(())
}
