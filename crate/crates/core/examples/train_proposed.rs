//! Trains the two-stage classifier on a small simulated set: a supervised
//! contrastive encoder, then a head on the frozen embeddings. Scores the
//! held-out slices with grade and affinity scores.
//!
//! cargo run --release --example train_proposed

use automac::data_model::SliceRecord;
use automac::encoder::EncoderConfig;
use automac::mogras::{build_templates, Scorer, TemplateConfig};
use automac::motion_sim::phantom::phantom_sources;
use automac::motion_sim::{simulate_records, SimulationSpec};
use automac::training::{train_stage1, train_stage2, Dataset, TrainConfig};

fn simulate(first: usize, count: usize, per_grade: usize, seed: u64) -> automac::Result<Vec<SliceRecord>> {
    let sources = phantom_sources(first + count, 64, 0).split_off(first);
    let spec = SimulationSpec {
        per_grade_counts: [per_grade; 3],
        seed,
        ..SimulationSpec::default()
    };
    simulate_records(&sources, &spec)
}

fn main() -> automac::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let size = 48;
    let train = Dataset::from_records(&simulate(0, 120, 40, 1)?, size)?;
    let val = Dataset::from_records(&simulate(120, 30, 10, 2)?, size)?;
    let test = simulate(150, 60, 20, 3)?;

    let encoder_cfg = EncoderConfig {
        input_size: size,
        ..EncoderConfig::tiny()
    };
    let cfg = TrainConfig {
        stage1_epochs: 8,
        stage2_epochs: 30,
        lr: 3e-4,
        ..TrainConfig::default()
    };
    let stage1 = train_stage1(&encoder_cfg, &cfg, &train, &val)?;
    let stage2 = train_stage2(&stage1.encoder, &cfg, &train, &val)?;
    let templates = build_templates(&stage1.encoder, &train, &TemplateConfig::default())?;
    let scorer = Scorer::new(&stage1.encoder, &templates, &stage2.head, &stage2.encoder_fingerprint)?;

    let images = Dataset::from_records(&test, size)?;
    let scored = scorer.score_batch(&images.images)?;
    let correct = scored.iter().zip(&images.labels).filter(|((p, _), t)| p.grade == **t).count();
    println!("test accuracy {:.3} on {} slices", correct as f64 / test.len() as f64, test.len());
    for ((p, t), record) in scored.iter().zip(&test).step_by(20) {
        let [a, b, c] = t.scores();
        println!(
            "{:<40} truth {:<14} predicted {:<14} scores {a:.3} {b:.3} {c:.3}",
            record.id,
            record.grade.map_or("?", |g| g.as_str()),
            p.grade.as_str()
        );
    }
    Ok(())
}
