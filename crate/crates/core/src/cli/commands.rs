use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data_model::{Embedding, GradePrediction, GradeTemplateSet, MoGrASTriple, MotionGrade, SliceRecord};
use crate::encoder::Encoder;
use crate::evaluation::figures::{confusion_svg, distribution_svg, projection_svg};
use crate::evaluation::{comparison_table, project_2d, EvalReport};
use crate::ingestion::manifest::{load_manifest, Manifest, ManifestEntry};
use crate::ingestion::split::{stratified_split_indices, SplitSpec, SPLIT_NAMES};
use crate::ingestion::{preprocess_to, read_image, PreprocessedImage};
use crate::mogras::{self, load_templates, save_templates};
use crate::motion_sim::phantom::phantom_sources;
use crate::motion_sim::{generate_dataset, SimulationSpec, SourceImage};
use crate::seed::derive_seed;
use crate::training::{
    self, train_stage1, train_stage2, train_supervised_baseline, Dataset, MlpHead, Stage1Method, SupervisedNet,
};
use crate::{Error, Result};

/// Slices preprocessed and embedded at a time while scoring.
const SCORE_CHUNK: usize = 128;

pub const SCORE_HEADER: [&str; 5] = ["id", "grade", "mogras_nomo", "mogras_sumo", "mogras_semo"];

/// The three compared training regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// Supervised contrastive encoder, then a head on the frozen encoder.
    Proposed,
    /// Label-free contrastive encoder, then a head on the frozen encoder.
    Simclr,
    /// Encoder and head trained end to end with cross-entropy.
    Supervised,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Proposed, Arm::Simclr, Arm::Supervised];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Proposed => "proposed",
            Arm::Simclr => "simclr",
            Arm::Supervised => "supervised",
        }
    }
}

/// Output locations under the run root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn arm_dir(&self, arm: Arm) -> PathBuf {
        self.root.join(arm.as_str())
    }

    pub fn encoder(&self, arm: Arm) -> PathBuf {
        self.arm_dir(arm).join("encoder.safetensors")
    }

    pub fn head(&self, arm: Arm) -> PathBuf {
        self.arm_dir(arm).join("head.safetensors")
    }

    pub fn supervised(&self) -> PathBuf {
        self.arm_dir(Arm::Supervised).join("supervised.safetensors")
    }

    pub fn templates(&self, arm: Arm) -> PathBuf {
        self.arm_dir(arm).join("templates.safetensors")
    }

    pub fn scores(&self, arm: Arm) -> PathBuf {
        self.arm_dir(arm).join("scores.csv")
    }

    pub fn report(&self, arm: Arm) -> PathBuf {
        self.arm_dir(arm).join("report.json")
    }

    pub fn state_dir(&self, arm: Arm) -> PathBuf {
        self.arm_dir(arm).join("state")
    }
}

fn layout(config: &RunConfig) -> Layout {
    Layout {
        root: config.output.root.clone(),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} not found at {}", path.display())))
    }
}

/// Cuts `n` into three parts proportional to `ratios` by largest remainder
/// (ties to the earlier part).
fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut parts = exact.map(|x| x.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let assigned: usize = parts.iter().sum();
    for &k in order.iter().take(n - assigned) {
        parts[k] += 1;
    }
    parts
}

/// The `.amac` and `.png` files directly inside `dir`, sorted.
fn slice_files(dir: &Path, what: &str) -> Result<Vec<PathBuf>> {
    let listing = fs::read_dir(dir).map_err(|e| Error::Data(format!("{what} {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("amac" | "png")))
        .collect();
    paths.sort();
    Ok(paths)
}

fn load_sources(config: &RunConfig) -> Result<Vec<SourceImage>> {
    let data = &config.data;
    let Some(dir) = &data.source_dir else {
        return Ok(phantom_sources(data.phantom_count, data.phantom_size, config.seed));
    };
    let paths = slice_files(dir, "source directory")?;
    if paths.is_empty() {
        return Err(Error::Data(format!("source directory {} holds no .amac or .png slices", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            Ok(SourceImage {
                id: p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
                pixels: read_image(p)?,
                contrast: data.source_contrast,
                orientation: data.source_orientation,
            })
        })
        .collect()
}

/// Simulates train, validation and test sets from disjoint groups of
/// sources and writes a combined `manifest.csv` plus `split.csv` under
/// `<root>/data`.
pub fn cmd_simulate(config: &RunConfig) -> Result<PathBuf> {
    config.validate()?;
    let sources = load_sources(config)?;
    if sources.len() < 3 {
        return Err(Error::Data(format!("need at least 3 source slices, got {}", sources.len())));
    }
    let ratios = config.data.split_ratios;
    let source_parts = apportion(sources.len(), ratios);
    if source_parts.contains(&0) {
        return Err(Error::Data(format!(
            "{} sources cannot be divided over three splits with ratios {ratios:?}",
            sources.len()
        )));
    }
    let slice_parts = apportion(config.data.per_grade, ratios);
    let data_dir = layout(config).data_dir();
    let sim = &config.simulator;
    let mut entries = Vec::new();
    let mut split_rows = Vec::new();
    let mut start = 0;
    for (k, name) in SPLIT_NAMES.iter().enumerate() {
        let group = &sources[start..start + source_parts[k]];
        start += source_parts[k];
        let spec = SimulationSpec {
            per_grade_counts: [slice_parts[k]; 3],
            thresholds: sim.thresholds,
            max_rotation_deg: sim.max_rotation_deg,
            max_shift_px: sim.max_shift_px,
            n_motion_states: sim.n_motion_states,
            seed: derive_seed(config.seed, "simulate", k as u64),
            format: sim.format,
        };
        let generated = generate_dataset(group, &spec, &data_dir.join(name))?;
        for entry in generated.manifest.entries {
            let image_path = format!("{name}/{}", entry.image_path);
            split_rows.push((image_path.clone(), *name));
            entries.push(ManifestEntry { image_path, ..entry });
        }
        info!("simulated {} {name} slices", spec.per_grade_counts.iter().sum::<usize>());
    }
    let manifest = Manifest {
        root: data_dir.clone(),
        entries,
    };
    let manifest_path = data_dir.join("manifest.csv");
    manifest.write(&manifest_path)?;
    write_split(&data_dir.join("split.csv"), &split_rows)?;
    Ok(manifest_path)
}

fn write_split(path: &Path, rows: &[(String, &str)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["image_path", "split"]).map_err(err)?;
    for (p, s) in rows {
        w.write_record([p.as_str(), s]).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// The dataset manifest with its train/val/test membership.
pub struct SplitData {
    pub manifest: Manifest,
    pub parts: [Vec<usize>; 3],
}

impl SplitData {
    pub fn records(&self, split: usize) -> Result<Vec<SliceRecord>> {
        self.parts[split]
            .iter()
            .map(|&i| self.manifest.load_record(&self.manifest.entries[i]))
            .collect()
    }
}

pub fn load_split_data(config: &RunConfig) -> Result<SplitData> {
    let data_dir = layout(config).data_dir();
    let manifest_path = config.data.manifest.clone().unwrap_or_else(|| data_dir.join("manifest.csv"));
    require_file(&manifest_path, "dataset manifest (run `simulate` first)")?;
    let manifest = load_manifest(&manifest_path)?;
    let split_path = match (&config.data.manifest, &config.data.split) {
        (_, Some(p)) => Some(p.clone()),
        (None, None) => Some(data_dir.join("split.csv")),
        (Some(_), None) => None,
    };
    let parts = match split_path {
        Some(path) => read_split(&path, &manifest)?,
        None => {
            let spec = SplitSpec::new(config.data.split_ratios, config.seed)?;
            let idx = stratified_split_indices(&manifest.entries, &spec)?;
            [idx.train, idx.val, idx.test]
        }
    };
    Ok(SplitData { manifest, parts })
}

fn read_split(path: &Path, manifest: &Manifest) -> Result<[Vec<usize>; 3]> {
    let position: BTreeMap<&str, usize> = manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.image_path.as_str(), i))
        .collect();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let (image, split) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
        let i = *position.get(image).ok_or_else(|| {
            Error::Data(format!("{} row {}: `{image}` is not in the manifest", path.display(), row + 1))
        })?;
        let k = SPLIT_NAMES.iter().position(|s| *s == split).ok_or_else(|| {
            Error::Data(format!("{} row {}: unknown split `{split}`", path.display(), row + 1))
        })?;
        parts[k].push(i);
    }
    Ok(parts)
}

/// Trains one arm and writes its artifacts under `<root>/<arm>`. Per-epoch
/// state goes to `<root>/<arm>/state`, so an interrupted run picks up where
/// it stopped.
pub fn cmd_train(config: &RunConfig, arm: Arm) -> Result<()> {
    config.validate()?;
    let data = load_split_data(config)?;
    let lay = layout(config);
    let dir = lay.arm_dir(arm);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let enc_cfg = config.encoder_config();
    let size = enc_cfg.input_size;
    let train = Dataset::from_records(&data.records(0)?, size)?;
    let val = Dataset::from_records(&data.records(1)?, size)?;
    info!("training {} on {} slices (validation {})", arm.as_str(), train.len(), val.len());
    let mut train_cfg = config.train_config(Some(lay.state_dir(arm)));
    let (encoder, log) = match arm {
        Arm::Proposed | Arm::Simclr => {
            train_cfg.stage1_method = if arm == Arm::Proposed {
                Stage1Method::Supcon
            } else {
                Stage1Method::Simclr
            };
            let stage1 = train_stage1(&enc_cfg, &train_cfg, &train, &val)?;
            stage1.encoder.save(&lay.encoder(arm))?;
            let stage2 = train_stage2(&stage1.encoder, &train_cfg, &train, &val)?;
            stage2.head.save(&lay.head(arm), &stage2.encoder_fingerprint)?;
            let mut log = stage1.log;
            log.extend(stage2.log);
            (stage1.encoder, log)
        }
        Arm::Supervised => {
            let outcome = train_supervised_baseline(&enc_cfg, &train_cfg, &train, &val)?;
            outcome.net.save(&lay.supervised())?;
            (outcome.net.encoder, outcome.log)
        }
    };
    let templates = mogras::build_templates(&encoder, &train, &config.templates)?;
    save_templates(&lay.templates(arm), &templates, &config.templates)?;
    training::write_log(&dir.join("train_log.ndjson"), &log)?;
    info!("{} artifacts written to {}", arm.as_str(), dir.display());
    Ok(())
}

/// Encoder, head and templates of one arm, checked to share a fingerprint.
pub struct ArmModel {
    pub encoder: Encoder,
    pub head: MlpHead,
    pub templates: GradeTemplateSet,
}

pub fn load_arm(config: &RunConfig, arm: Arm) -> Result<ArmModel> {
    let lay = layout(config);
    let (encoder, head, head_fp) = match arm {
        Arm::Supervised => {
            require_file(&lay.supervised(), "supervised checkpoint (run `train` first)")?;
            let net = SupervisedNet::load(&lay.supervised())?;
            let fp = net.encoder.fingerprint();
            (net.encoder, net.head, fp)
        }
        _ => {
            require_file(&lay.encoder(arm), "encoder checkpoint (run `train` first)")?;
            require_file(&lay.head(arm), "head checkpoint")?;
            let encoder = Encoder::load(&lay.encoder(arm))?;
            let (head, fp) = MlpHead::load(&lay.head(arm))?;
            (encoder, head, fp)
        }
    };
    require_file(&lay.templates(arm), "grade templates")?;
    let (templates, _) = load_templates(&lay.templates(arm))?;
    mogras::Scorer::new(&encoder, &templates, &head, &head_fp)?;
    Ok(ArmModel {
        encoder,
        head,
        templates,
    })
}

impl ArmModel {
    /// Predictions, affinity triples and embeddings, computed in chunks.
    pub fn score_records(
        &self,
        records: &[SliceRecord],
    ) -> Result<Vec<(GradePrediction, MoGrASTriple, Embedding)>> {
        let size = self.encoder.input_size();
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(SCORE_CHUNK) {
            let images: Vec<PreprocessedImage> = chunk.iter().map(|r| preprocess_to(r, size)).collect();
            let embeddings = self.encoder.embed(&images)?;
            let rows: Vec<&[f32]> = embeddings.iter().map(Embedding::values).collect();
            let predictions = self.head.predict(&rows)?;
            for (p, e) in predictions.into_iter().zip(embeddings) {
                let triple = mogras::score(&e, &self.templates)?;
                out.push((p, triple, e));
            }
        }
        Ok(out)
    }
}

/// Slices to score: manifests (`.csv`) contribute every entry, directories
/// every slice file inside them, other paths are read as single slice files
/// with the path as id. No inputs means the test split of the run dataset.
pub fn score_inputs(config: &RunConfig, inputs: &[PathBuf]) -> Result<Vec<SliceRecord>> {
    if inputs.is_empty() {
        let data = load_split_data(config)?;
        return data.records(2);
    }
    let read_slice = |path: &Path| {
        let record = SliceRecord::new(
            path.to_string_lossy(),
            read_image(path)?,
            config.data.source_contrast,
            config.data.source_orientation,
            None,
        );
        crate::data_model::validate(record)
    };
    let mut records = Vec::new();
    for path in inputs {
        if path.is_dir() {
            for file in slice_files(path, "input directory")? {
                records.push(read_slice(&file)?);
            }
        } else if path.extension().and_then(|x| x.to_str()) == Some("csv") {
            records.extend(load_manifest(path)?.load_records()?);
        } else {
            records.push(read_slice(path)?);
        }
    }
    Ok(records)
}

/// Renders score records as CSV: id, predicted grade and the three
/// affinity scores at four decimals.
pub fn format_scores(ids: &[&str], scored: &[(GradePrediction, MoGrASTriple)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Data(format!("score encoding: {e}"));
    w.write_record(SCORE_HEADER).map_err(err)?;
    for (id, (p, t)) in ids.iter().zip(scored) {
        let s = t.scores();
        w.write_record([
            id.to_string(),
            p.grade.as_str().to_string(),
            format!("{:.4}", s[0]),
            format!("{:.4}", s[1]),
            format!("{:.4}", s[2]),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("scores are UTF-8"))
}

/// One parsed line of a score file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLine {
    pub id: String,
    pub grade: MotionGrade,
    pub scores: [f64; 3],
}

pub fn parse_scores(path: &Path) -> Result<Vec<ScoreLine>> {
    let data_err = |e: String| Error::Data(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| data_err(e.to_string()))?;
    let header = reader.headers().map_err(|e| data_err(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != SCORE_HEADER {
        return Err(data_err(format!("expected header {}", SCORE_HEADER.join(","))));
    }
    let mut lines = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| data_err(e.to_string()))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let number = |k: usize| {
            field(k)
                .parse::<f64>()
                .map_err(|_| data_err(format!("row {}: `{}` is not a number", row + 1, field(k))))
        };
        lines.push(ScoreLine {
            id: field(0).to_string(),
            grade: field(1).parse()?,
            scores: [number(2)?, number(3)?, number(4)?],
        });
    }
    Ok(lines)
}

/// Scores the inputs with one arm and writes the CSV to `output` (default
/// `<root>/<arm>/scores.csv`). Returns the number of records.
pub fn cmd_score(config: &RunConfig, arm: Arm, inputs: &[PathBuf], output: Option<&Path>) -> Result<usize> {
    config.validate()?;
    let model = load_arm(config, arm)?;
    let records = score_inputs(config, inputs)?;
    if records.is_empty() {
        warn!("no slices to score");
    }
    let scored: Vec<(GradePrediction, MoGrASTriple)> = model
        .score_records(&records)?
        .into_iter()
        .map(|(p, t, _)| (p, t))
        .collect();
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let text = format_scores(&ids, &scored)?;
    let path = output.map_or_else(|| layout(config).scores(arm), Path::to_path_buf);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    info!("{} records written to {}", records.len(), path.display());
    Ok(records.len())
}

/// Builds the report of one arm from a score file and the manifest grades,
/// writes `report.json` and figures, and refreshes `<root>/comparison.md`
/// from every arm report present.
pub fn cmd_evaluate(config: &RunConfig, arm: Arm, predictions: Option<&Path>) -> Result<EvalReport> {
    config.validate()?;
    let lay = layout(config);
    let scores_path = predictions.map_or_else(|| lay.scores(arm), Path::to_path_buf);
    require_file(&scores_path, "score file (run `score` first)")?;
    let lines = parse_scores(&scores_path)?;
    let data = load_split_data(config)?;
    let by_id: BTreeMap<&str, &ManifestEntry> =
        data.manifest.entries.iter().map(|e| (e.image_path.as_str(), e)).collect();
    let mut truths = Vec::with_capacity(lines.len());
    let mut entries = Vec::with_capacity(lines.len());
    for line in &lines {
        let entry = by_id
            .get(line.id.as_str())
            .ok_or_else(|| Error::Data(format!("scored id `{}` is not in the dataset manifest", line.id)))?;
        let grade = entry
            .grade
            .ok_or_else(|| Error::Data(format!("`{}` has no ground-truth grade", line.id)))?;
        truths.push(grade);
        entries.push(*entry);
    }
    let preds: Vec<MotionGrade> = lines.iter().map(|l| l.grade).collect();
    let triples = lines
        .iter()
        .map(|l| MoGrASTriple::new(l.scores))
        .collect::<Result<Vec<_>>>()?;

    let eval = &config.evaluation;
    let embeddings = if eval.embeddings {
        let model = load_arm(config, arm)?;
        let records = entries
            .iter()
            .map(|e| data.manifest.load_record(e))
            .collect::<Result<Vec<_>>>()?;
        Some((model.score_records(&records)?.into_iter().map(|(_, _, e)| e).collect::<Vec<_>>(), model.encoder.fingerprint()))
    } else {
        None
    };
    let rows: Option<Vec<&[f32]>> = embeddings.as_ref().map(|(e, _)| e.iter().map(Embedding::values).collect());
    let echo = serde_json::json!({
        "arm": arm.as_str(),
        "seed": config.seed,
        "temperature": config.loss.temperature,
        "thresholds": config.simulator.thresholds,
        "encoder_fingerprint": embeddings.as_ref().map(|(_, fp)| fp.clone()),
        "run": config,
    });
    let report = EvalReport::new(arm.as_str(), &preds, &truths, Some(&triples), rows.as_deref(), echo)?;
    let dir = lay.arm_dir(arm);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let report_path = lay.report(arm);
    fs::write(&report_path, report.to_json()).map_err(|e| Error::io(&report_path, e))?;

    if eval.figures {
        let title = format!("{} ({} test slices)", arm.as_str(), truths.len());
        write_text(&dir.join("confusion.svg"), &confusion_svg(&report.confusion, &title))?;
        if let Some(dist) = &report.mogras {
            write_text(&dir.join("mogras.svg"), &distribution_svg(dist, &title))?;
        }
        if let Some(rows) = &rows {
            let stride = rows.len().div_ceil(eval.projection_points.max(1)).max(1);
            let picked: Vec<usize> = (0..rows.len()).step_by(stride).collect();
            if picked.len() >= 5 {
                let sub: Vec<&[f32]> = picked.iter().map(|&i| rows[i]).collect();
                let labels: Vec<MotionGrade> = picked.iter().map(|&i| truths[i]).collect();
                let points = project_2d(&sub, config.seed, &eval.tsne)?;
                write_text(&dir.join("projection.svg"), &projection_svg(&points, &labels, &title))?;
            }
        }
    }

    let reports = Arm::ALL
        .iter()
        .filter_map(|a| fs::read_to_string(lay.report(*a)).ok())
        .map(|text| serde_json::from_str::<EvalReport>(&text).map_err(|e| Error::Data(format!("arm report: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    write_text(&lay.root.join("comparison.md"), &comparison_table(&reports))?;
    info!("{}: {}", arm.as_str(), report.table_row());
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
