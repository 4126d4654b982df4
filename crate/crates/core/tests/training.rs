use automac::data_model::{Embedding, MotionGrade};
use automac::encoder::{build_encoder, EncoderConfig};
use automac::motion_sim::phantom::phantom_sources;
use automac::motion_sim::{simulate_records, SimulationSpec};
use automac::nn::Module;
use automac::store::module_entries;
use automac::training::{
    train_head, train_stage1, train_stage2, train_supervised_baseline, AugmentConfig, Dataset, LogRecord,
    Stage1Method, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn encoder_config() -> EncoderConfig {
    EncoderConfig {
        input_size: 32,
        fc_widths: vec![64, 32],
        ..EncoderConfig::tiny()
    }
}

fn toy_set(per_grade: usize, seed: u64) -> Dataset {
    let sources = phantom_sources(6, 48, seed);
    let spec = SimulationSpec {
        per_grade_counts: [per_grade; 3],
        seed,
        ..SimulationSpec::default()
    };
    Dataset::from_records(&simulate_records(&sources, &spec).unwrap(), 32).unwrap()
}

fn train_losses(log: &[LogRecord]) -> Vec<f64> {
    log.iter().filter(|r| r.split == "train").map(|r| r.loss).collect()
}

fn train_accuracy(predicted: &[MotionGrade], truth: &[MotionGrade]) -> f64 {
    predicted.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

#[test]
fn supcon_training_lowers_the_loss() {
    let data = toy_set(4, 1);
    let cfg = TrainConfig {
        stage1_epochs: 50,
        batch_size: 12,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let out = train_stage1(&encoder_config(), &cfg, &data, &data).unwrap();
    let losses = train_losses(&out.log);
    assert_eq!(losses.len(), 50);
    assert!(losses[49] < losses[0], "{losses:?}");
}

#[test]
fn simclr_ignores_labels() {
    let data = toy_set(4, 2);
    let mut shuffled = data.clone();
    shuffled.labels.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    assert_ne!(shuffled.labels, data.labels);
    let cfg = TrainConfig {
        stage1_method: Stage1Method::Simclr,
        stage1_epochs: 3,
        batch_size: 6,
        ..TrainConfig::default()
    };
    let a = train_stage1(&encoder_config(), &cfg, &data, &data).unwrap();
    let b = train_stage1(&encoder_config(), &cfg, &shuffled, &shuffled).unwrap();
    let losses = |log: &[LogRecord]| log.iter().map(|r| (r.split.clone(), r.loss)).collect::<Vec<_>>();
    assert_eq!(losses(&a.log), losses(&b.log));
    assert_eq!(a.encoder.fingerprint(), b.encoder.fingerprint());
}

#[test]
fn contrastive_encoder_with_probe_fits_thirty_slices() {
    let data = toy_set(10, 4);
    let cfg = TrainConfig {
        stage1_epochs: 40,
        stage2_epochs: 200,
        batch_size: 30,
        lr: 1e-3,
        head_lr: 1e-2,
        augment: AugmentConfig::none(),
        ..TrainConfig::default()
    };
    let stage1 = train_stage1(&encoder_config(), &cfg, &data, &data).unwrap();
    let stage2 = train_stage2(&stage1.encoder, &cfg, &data, &data).unwrap();
    assert_eq!(stage2.encoder_fingerprint, stage1.encoder.fingerprint());
    let emb = stage1.encoder.embed(&data.images).unwrap();
    let rows: Vec<&[f32]> = emb.iter().map(Embedding::values).collect();
    let preds: Vec<MotionGrade> = stage2.head.predict(&rows).unwrap().iter().map(|p| p.grade).collect();
    assert_eq!(train_accuracy(&preds, &data.labels), 1.0);
}

#[test]
fn supervised_baseline_fits_thirty_slices_and_is_seeded() {
    let data = toy_set(10, 5);
    let cfg = TrainConfig {
        supervised_epochs: 40,
        batch_size: 10,
        lr: 1e-3,
        augment: AugmentConfig::none(),
        ..TrainConfig::default()
    };
    let out = train_supervised_baseline(&encoder_config(), &cfg, &data, &data).unwrap();
    let preds: Vec<MotionGrade> = out.net.predict(&data.images).unwrap().iter().map(|p| p.grade).collect();
    assert_eq!(train_accuracy(&preds, &data.labels), 1.0);

    let short = TrainConfig {
        supervised_epochs: 3,
        ..cfg
    };
    let a = train_supervised_baseline(&encoder_config(), &short, &data, &data).unwrap();
    let b = train_supervised_baseline(&encoder_config(), &short, &data, &data).unwrap();
    let val_acc = |log: &[LogRecord]| log.iter().filter(|r| r.split == "val").map(|r| r.accuracy).collect::<Vec<_>>();
    assert_eq!(val_acc(&a.log), val_acc(&b.log));
    assert_eq!(a.net.encoder.fingerprint(), b.net.encoder.fingerprint());
}

#[test]
fn cached_and_streamed_stage2_agree() {
    let data = toy_set(6, 6);
    let encoder = build_encoder(&encoder_config()).unwrap();
    let cfg = TrainConfig {
        stage2_epochs: 5,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let cached = train_stage2(&encoder, &cfg, &data, &data).unwrap();
    let streamed = train_stage2(
        &encoder,
        &TrainConfig {
            stage2_cached: false,
            ..cfg
        },
        &data,
        &data,
    )
    .unwrap();
    let a = module_entries(&cached.head, "");
    let b = module_entries(&streamed.head, "");
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        for (u, v) in x.data.iter().zip(&y.data) {
            assert!((u - v).abs() <= 1e-5, "{}: {u} vs {v}", x.name);
        }
    }
}

#[test]
fn head_separates_simplex_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Normal::new(0.0f32, 0.15).unwrap();
    let mut make = |n: usize| {
        let labels: Vec<MotionGrade> = (0..n).map(|i| MotionGrade::ALL[i % 3]).collect();
        let emb: Vec<Embedding> = labels
            .iter()
            .map(|g| {
                let v = (0..16)
                    .map(|k| if k == g.index() { 1.0 } else { 0.0 } + noise.sample(&mut rng))
                    .collect();
                Embedding::new(v).unwrap()
            })
            .collect();
        (emb, labels)
    };
    let (train, train_labels) = make(300);
    let (val, val_labels) = make(300);
    let cfg = TrainConfig {
        stage2_epochs: 30,
        head_lr: 1e-2,
        ..TrainConfig::default()
    };
    let out = train_head(&cfg, &train, &train_labels, &val, &val_labels).unwrap();
    let rows: Vec<&[f32]> = val.iter().map(Embedding::values).collect();
    let preds: Vec<MotionGrade> = out.head.predict(&rows).unwrap().iter().map(|p| p.grade).collect();
    let acc = train_accuracy(&preds, &val_labels);
    assert!(acc >= 0.99, "val accuracy {acc}, log {:?}", out.log.last());
}

#[test]
fn supervised_network_has_encoder_plus_head_parameters() {
    let data = toy_set(2, 7);
    let cfg = TrainConfig {
        supervised_epochs: 1,
        stage2_epochs: 1,
        batch_size: 6,
        ..TrainConfig::default()
    };
    let count = |m: &dyn Module| module_entries(m, "").iter().map(|t| t.data.len()).sum::<usize>();
    let net = train_supervised_baseline(&encoder_config(), &cfg, &data, &data).unwrap().net;
    let encoder = build_encoder(&encoder_config()).unwrap();
    let head = train_stage2(&encoder, &cfg, &data, &data).unwrap().head;
    assert_eq!(count(&net), count(&encoder) + count(&head));
}
