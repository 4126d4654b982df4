//! Grade templates (coordinate-wise medians of training embeddings) and
//! cosine affinity scoring against them.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::data_model::{Embedding, GradePrediction, GradeTemplateSet, MoGrASTriple, MotionGrade, SliceRecord};
use crate::encoder::Encoder;
use crate::ingestion::PreprocessedImage;
use crate::store::{self, checkpoint_err, Store, TensorEntry};
use crate::training::{Dataset, MlpHead};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateConfig {
    /// L2-normalize embeddings before taking the median. Off by default: the
    /// median runs over raw embeddings.
    pub normalize: bool,
}

/// Median of a non-empty slice; even counts average the two middle values.
/// Reorders the slice.
pub fn median(values: &mut [f32]) -> f32 {
    assert!(!values.is_empty(), "median of an empty slice");
    values.sort_unstable_by(f32::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        ((f64::from(values[n / 2 - 1]) + f64::from(values[n / 2])) / 2.0) as f32
    }
}

fn normalized(values: &[f32]) -> Vec<f32> {
    let norm = values.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
    values.iter().map(|&v| (f64::from(v) / norm) as f32).collect()
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Per-grade coordinate-wise medians of labeled embeddings.
pub fn templates_from_embeddings(
    embeddings: &[Embedding],
    labels: &[MotionGrade],
    encoder_fingerprint: &str,
    config: &TemplateConfig,
) -> Result<GradeTemplateSet> {
    if embeddings.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let mut groups: [Vec<Vec<f32>>; 3] = Default::default();
    for (e, g) in embeddings.iter().zip(labels) {
        let row = if config.normalize {
            normalized(e.values())
        } else {
            e.values().to_vec()
        };
        groups[g.index()].push(row);
    }
    for grade in MotionGrade::ALL {
        if groups[grade.index()].is_empty() {
            return Err(Error::EmptyGrade(*grade));
        }
    }
    let dim = groups[0][0].len();
    if let Some(bad) = groups.iter().flatten().find(|r| r.len() != dim) {
        return Err(Error::Shape(format!("embedding of length {} among length {dim}", bad.len())));
    }
    let created_from = [groups[0].len(), groups[1].len(), groups[2].len()];
    let templates = groups.map(|rows| {
        let mut column = vec![0.0f32; rows.len()];
        (0..dim)
            .map(|k| {
                for (slot, row) in column.iter_mut().zip(&rows) {
                    *slot = row[k];
                }
                median(&mut column)
            })
            .collect()
    });
    GradeTemplateSet::new(templates, encoder_fingerprint, created_from, now_unix())
}

/// Embeds labeled training images with the encoder and builds the templates.
pub fn build_templates(encoder: &Encoder, train: &Dataset, config: &TemplateConfig) -> Result<GradeTemplateSet> {
    for grade in MotionGrade::ALL {
        if !train.labels.contains(grade) {
            return Err(Error::EmptyGrade(*grade));
        }
    }
    let embeddings = encoder.embed(&train.images)?;
    templates_from_embeddings(&embeddings, &train.labels, &encoder.fingerprint(), config)
}

/// Template building straight from graded records.
pub fn build_templates_from_records(
    encoder: &Encoder,
    records: &[SliceRecord],
    config: &TemplateConfig,
) -> Result<GradeTemplateSet> {
    build_templates(encoder, &Dataset::from_records(records, encoder.input_size())?, config)
}

fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Data("cosine similarity of a zero-norm vector".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Cosine affinity of an embedding to each grade template.
pub fn score(embedding: &Embedding, templates: &GradeTemplateSet) -> Result<MoGrASTriple> {
    if embedding.dim() != templates.dim() {
        return Err(Error::Shape(format!(
            "embedding has {} values, templates have {}",
            embedding.dim(),
            templates.dim()
        )));
    }
    let mut scores = [0.0; 3];
    for grade in MotionGrade::ALL {
        scores[grade.index()] = cosine(templates.template(*grade), embedding.values())?;
    }
    MoGrASTriple::new(scores)
}

/// Encoder, head and templates verified to share one encoder fingerprint.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    encoder: &'a Encoder,
    templates: &'a GradeTemplateSet,
    head: &'a MlpHead,
}

impl<'a> Scorer<'a> {
    /// `head_fingerprint` is the encoder fingerprint recorded with the head.
    pub fn new(
        encoder: &'a Encoder,
        templates: &'a GradeTemplateSet,
        head: &'a MlpHead,
        head_fingerprint: &str,
    ) -> Result<Self> {
        let found = encoder.fingerprint();
        for expected in [templates.encoder_fingerprint(), head_fingerprint] {
            if expected != found {
                return Err(Error::FingerprintMismatch {
                    expected: expected.to_string(),
                    found,
                });
            }
        }
        Ok(Scorer {
            encoder,
            templates,
            head,
        })
    }

    /// One embedding pass per image feeds both the head and the scores.
    pub fn score_batch(&self, images: &[PreprocessedImage]) -> Result<Vec<(GradePrediction, MoGrASTriple)>> {
        let embeddings = self.encoder.embed(images)?;
        let rows: Vec<&[f32]> = embeddings.iter().map(Embedding::values).collect();
        let predictions = self.head.predict(&rows)?;
        predictions
            .into_iter()
            .zip(&embeddings)
            .map(|(p, e)| Ok((p, score(e, self.templates)?)))
            .collect()
    }
}

/// Grade prediction and affinity triple for a single image.
pub fn score_and_grade(
    image: &PreprocessedImage,
    encoder: &Encoder,
    templates: &GradeTemplateSet,
    head: &MlpHead,
    head_fingerprint: &str,
) -> Result<(GradePrediction, MoGrASTriple)> {
    let scorer = Scorer::new(encoder, templates, head, head_fingerprint)?;
    let mut out = scorer.score_batch(std::slice::from_ref(image))?;
    Ok(out.remove(0))
}

/// Template container: a `3 x D` little-endian `f32` matrix in grade order
/// plus fingerprint, sample counts and creation time.
pub fn save_templates(path: &Path, templates: &GradeTemplateSet, config: &TemplateConfig) -> Result<()> {
    let data = MotionGrade::ALL
        .iter()
        .flat_map(|g| templates.template(*g).iter().copied())
        .collect();
    let mut store = Store::default();
    store
        .tensors
        .push(TensorEntry::new("templates", vec![MotionGrade::COUNT, templates.dim()], data));
    let grade_order: Vec<&str> = MotionGrade::ALL.iter().map(|g| g.as_str()).collect();
    let counts = templates.created_from().map(|c| c.to_string()).join(",");
    let m = &mut store.metadata;
    m.insert("kind".into(), "templates".into());
    m.insert("grade_order".into(), grade_order.join(","));
    m.insert("encoder_fingerprint".into(), templates.encoder_fingerprint().into());
    m.insert("created_from".into(), counts);
    m.insert("created_unix".into(), templates.created_unix().to_string());
    m.insert("normalized".into(), config.normalize.to_string());
    store::write_store(path, &store)
}

pub fn load_templates(path: &Path) -> Result<(GradeTemplateSet, TemplateConfig)> {
    let store = store::read_store(path)?;
    let order = store.require_meta("grade_order", path)?;
    let grades = order
        .split(',')
        .map(str::parse::<MotionGrade>)
        .collect::<Result<Vec<_>>>()?;
    if grades.len() != MotionGrade::COUNT || grades.iter().collect::<std::collections::BTreeSet<_>>().len() != 3 {
        return Err(checkpoint_err(path, format!("grade order `{order}` is not a permutation of the three grades")));
    }
    let matrix = store
        .get("templates")
        .ok_or_else(|| checkpoint_err(path, "missing tensor `templates`"))?;
    if matrix.shape.len() != 2 || matrix.shape[0] != 3 {
        return Err(checkpoint_err(path, format!("templates have shape {:?}", matrix.shape)));
    }
    let dim = matrix.shape[1];
    let mut rows: [Vec<f32>; 3] = Default::default();
    let mut counts = [0usize; 3];
    let raw_counts: Vec<&str> = store.require_meta("created_from", path)?.split(',').collect();
    if raw_counts.len() != 3 {
        return Err(checkpoint_err(path, "created_from must list three counts"));
    }
    for (i, grade) in grades.iter().enumerate() {
        rows[grade.index()] = matrix.data[i * dim..(i + 1) * dim].to_vec();
        counts[grade.index()] = raw_counts[i]
            .parse()
            .map_err(|_| checkpoint_err(path, format!("bad count `{}`", raw_counts[i])))?;
    }
    let created = store
        .require_meta("created_unix", path)?
        .parse()
        .map_err(|_| checkpoint_err(path, "bad created_unix"))?;
    let config = TemplateConfig {
        normalize: store.meta("normalized") == Some("true"),
    };
    let set = GradeTemplateSet::new(rows, store.require_meta("encoder_fingerprint", path)?, counts, created)?;
    Ok((set, config))
}
