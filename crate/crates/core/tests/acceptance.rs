//! Acceptance run: one pass/fail line per criterion, then a nonzero exit if
//! any failed. Criteria 4 to 9 share a three-seed end-to-end run of the
//! desk configuration (`configs/desk.toml`, or the file named by
//! `AUTOMAC_ACCEPTANCE_CONFIG`).

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use automac::cli::{cmd_evaluate, cmd_score, cmd_simulate, cmd_train, load_split_data, Arm, Layout, RunConfig};
use automac::encoder::Encoder;
use automac::evaluation::EvalReport;
use automac::training::MlpHead;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed())
}

fn criterion_1() -> Outcome {
    let (checks, took) = timed(|| {
        let worst = common::loss_oracle_max_error(200, 11);
        let hand = common::hand_case_errors();
        let hand_worst = hand.iter().copied().fold(0.0, f64::max);
        outcome(
            worst < 1e-6 && hand_worst < 1e-6,
            format!("max deviation {worst:.1e}, hand cases {hand_worst:.1e}"),
        )
    });
    let pass = checks.pass && took < Duration::from_secs(10);
    outcome(pass, format!("{}, {:.2} s (limit 10 s)", checks.detail, took.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let (checks, took) = timed(|| {
        let c = common::mogras_checks(10_000, 5);
        outcome(
            c.pass(),
            format!(
                "self {:.1e}, antipodal {:.1e}, scale {:.1e}, out of range {}",
                c.self_error, c.antipodal_error, c.scale_error, c.out_of_range
            ),
        )
    });
    let pass = checks.pass && took < Duration::from_secs(5);
    outcome(pass, format!("{}, {:.2} s (limit 5 s)", checks.detail, took.as_secs_f64()))
}

fn criterion_3() -> Outcome {
    let mismatches = common::median_template_mismatches(100, 3);
    outcome(mismatches == 0, format!("{mismatches} of 100 sets differ from the sort oracle"))
}

/// Artifacts of one seed of the end-to-end run.
struct SeedRun {
    config: RunConfig,
    reports: Vec<(Arm, EvalReport)>,
    elapsed: Duration,
}

impl SeedRun {
    fn report(&self, arm: Arm) -> &EvalReport {
        &self.reports.iter().find(|(a, _)| *a == arm).expect("every arm evaluated").1
    }

    fn layout(&self) -> Layout {
        Layout {
            root: self.config.output.root.clone(),
        }
    }
}

fn config_path() -> PathBuf {
    std::env::var_os("AUTOMAC_ACCEPTANCE_CONFIG")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml"))
}

fn run_seed(base: &RunConfig, seed: u64, root: &Path) -> automac::Result<SeedRun> {
    let t0 = Instant::now();
    let _ = fs::remove_dir_all(root);
    let config = RunConfig {
        seed,
        output: automac::cli::config::OutputConfig { root: root.to_path_buf() },
        ..base.clone()
    };
    cmd_simulate(&config)?;
    let mut reports = Vec::new();
    for arm in Arm::ALL {
        cmd_train(&config, arm)?;
        cmd_score(&config, arm, &[], None)?;
        reports.push((arm, cmd_evaluate(&config, arm, None)?));
        eprintln!("seed {seed} {}: {}", arm.as_str(), reports.last().unwrap().1.table_row());
    }
    Ok(SeedRun {
        config,
        reports,
        elapsed: t0.elapsed(),
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn criterion_4(runs: &[SeedRun]) -> Outcome {
    let mut checked = 0;
    for run in runs {
        let lay = run.layout();
        for arm in [Arm::Proposed, Arm::Simclr] {
            let Ok(encoder) = Encoder::load(&lay.encoder(arm)) else {
                return outcome(false, format!("seed {}: {} encoder unreadable", run.config.seed, arm.as_str()));
            };
            let Ok((_, recorded)) = MlpHead::load(&lay.head(arm)) else {
                return outcome(false, format!("seed {}: {} head unreadable", run.config.seed, arm.as_str()));
            };
            if recorded != encoder.fingerprint() {
                return outcome(false, format!("seed {}: {} encoder changed during stage 2", run.config.seed, arm.as_str()));
            }
            checked += 1;
        }
    }
    outcome(checked == 2 * runs.len(), format!("{checked} stage-1 checkpoints match their post-stage-2 fingerprint"))
}

fn criterion_5(run: &SeedRun) -> Outcome {
    let data = match load_split_data(&run.config) {
        Ok(d) => d,
        Err(e) => return outcome(false, e.to_string()),
    };
    let sizes = data.parts.each_ref().map(Vec::len);
    let balanced = data.parts.iter().all(|part| {
        let mut counts = [0usize; 3];
        for &i in part {
            counts[data.manifest.entries[i].grade.map_or(0, |g| g.index())] += 1;
        }
        counts.iter().all(|&c| c * 3 == part.len())
    });
    let sources = run.config.data.phantom_count;
    let m = &run.report(Arm::Proposed).metrics;
    let severe = m.recall[2].value().unwrap_or(0.0);
    let pass = sizes == [900, 150, 450]
        && balanced
        && sources >= 20
        && m.accuracy >= 0.90
        && severe >= 0.90
        && run.elapsed <= Duration::from_secs(6 * 3600);
    outcome(
        pass,
        format!(
            "splits {sizes:?} balanced {balanced}, {sources} sources, proposed accuracy {:.3}, severe recall {severe:.3}, three arms in {:.1} min (limit 360 min CPU)",
            m.accuracy,
            run.elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn criterion_6(runs: &[SeedRun]) -> Outcome {
    let acc = |arm| median(runs.iter().map(|r| r.report(arm).metrics.accuracy).collect());
    let (p, s, c) = (acc(Arm::Proposed), acc(Arm::Supervised), acc(Arm::Simclr));
    outcome(
        p >= s - 0.01 && s > c + 0.03,
        format!("median accuracy proposed {p:.3}, supervised {s:.3}, simclr {c:.3}"),
    )
}

fn criterion_7(runs: &[SeedRun]) -> Outcome {
    let mut holds = Vec::new();
    for run in runs {
        let Some(dist) = &run.report(Arm::Proposed).mogras else {
            holds.push(false);
            continue;
        };
        let m = dist.medians();
        let nomo = m[0][0] > m[1][0] && m[1][0] > m[2][0];
        let semo = m[0][2] < m[1][2] && m[1][2] < m[2][2];
        let sumo = m[1][1] > m[0][1] && m[1][1] > m[2][1];
        holds.push(nomo && semo && sumo);
    }
    let count = holds.iter().filter(|&&h| h).count();
    outcome(count >= 2, format!("trend holds in {count} of {} seeds {holds:?}", runs.len()))
}

fn criterion_8(runs: &[SeedRun]) -> Outcome {
    let sil = |arm| median(runs.iter().map(|r| r.report(arm).silhouette.unwrap_or(f64::NAN)).collect());
    let (p, s, c) = (sil(Arm::Proposed), sil(Arm::Supervised), sil(Arm::Simclr));
    outcome(p > s && s > c, format!("median silhouette supcon {p:.3}, supervised {s:.3}, simclr {c:.3}"))
}

fn criterion_9(run: &SeedRun) -> Outcome {
    let dir = run.config.output.root.join("determinism");
    let paths = [dir.join("first.csv"), dir.join("second.csv")];
    for p in &paths {
        if let Err(e) = cmd_score(&run.config, Arm::Proposed, &[], Some(p)) {
            return outcome(false, e.to_string());
        }
    }
    let (a, b) = (fs::read(&paths[0]).unwrap_or_default(), fs::read(&paths[1]).unwrap_or_default());
    let lines = a.iter().filter(|&&c| c == b'\n').count().saturating_sub(1);
    outcome(!a.is_empty() && a == b, format!("{lines} records, identical bytes: {}", a == b))
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = vec![(1, criterion_1()), (2, criterion_2()), (3, criterion_3())];

    let config_file = config_path();
    let work = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let runs = RunConfig::load(&config_file).and_then(|base| {
        eprintln!("end-to-end run of {} over seeds {SEEDS:?}", config_file.display());
        SEEDS
            .iter()
            .map(|&seed| run_seed(&base, seed, &work.join(format!("seed{seed}"))))
            .collect::<automac::Result<Vec<_>>>()
    });
    match &runs {
        Ok(runs) => {
            results.push((4, criterion_4(runs)));
            results.push((5, criterion_5(&runs[0])));
            results.push((6, criterion_6(runs)));
            results.push((7, criterion_7(runs)));
            results.push((8, criterion_8(runs)));
            results.push((9, criterion_9(&runs[0])));
        }
        Err(e) => {
            for k in 4..=9 {
                results.push((k, outcome(false, format!("end-to-end run failed: {e}"))));
            }
        }
    }

    let names = [
        "loss oracles",
        "affinity score exactness",
        "median template oracle",
        "frozen encoder across stage 2",
        "desk-scale end-to-end run",
        "arm accuracy ordering",
        "affinity score trends by grade",
        "embedding separability ordering",
        "scoring determinism",
    ];
    for (k, o) in &results {
        println!(
            "criterion {k} ({}): {}: {}",
            names[k - 1],
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("acceptance: {} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
