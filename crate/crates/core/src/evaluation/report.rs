use serde::{Deserialize, Serialize};

use super::{confusion, metrics, mogras_distribution, silhouette, ConfusionMatrix, Metrics, Ratio, ScoreDistribution};
use crate::data_model::{MoGrASTriple, MotionGrade};
use crate::Result;

/// Everything reported for one evaluated arm. Serializes with a fixed key
/// order (struct fields, then sorted keys inside `config`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub arm: String,
    pub samples: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// Affinity-score quartiles, `[truth grade][score grade]`.
    pub mogras: Option<ScoreDistribution>,
    /// Cosine silhouette of the embeddings under the truth labels.
    pub silhouette: Option<f64>,
    /// Echo of the settings that produced the numbers (temperature, seeds,
    /// thresholds, ...).
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(
        arm: impl Into<String>,
        predictions: &[MotionGrade],
        truths: &[MotionGrade],
        triples: Option<&[MoGrASTriple]>,
        embeddings: Option<&[&[f32]]>,
        config: serde_json::Value,
    ) -> Result<Self> {
        let cm = confusion(predictions, truths)?;
        Ok(EvalReport {
            arm: arm.into(),
            samples: truths.len(),
            confusion: cm,
            metrics: metrics(&cm)?,
            mogras: triples.map(|t| mogras_distribution(t, truths)).transpose()?,
            silhouette: embeddings.map(|e| silhouette(e, truths)).transpose()?,
            config,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `accuracy / precision(NoMotion) / recall(SevereMotion)`.
    pub fn table_row(&self) -> String {
        format_table_row(
            self.metrics.accuracy,
            self.metrics.precision[MotionGrade::NoMotion.index()],
            self.metrics.recall[MotionGrade::SevereMotion.index()],
        )
    }
}

/// Headline cells at three decimals, e.g. `0.925 / 0.910 / 0.880`.
pub fn format_table_row(accuracy: f64, precision_no_motion: Ratio, recall_severe: Ratio) -> String {
    format!(
        "{:.3} / {} / {}",
        accuracy,
        precision_no_motion.display3(),
        recall_severe.display3()
    )
}

/// Markdown table of several arms, best accuracy first (stable for ties).
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let mut order: Vec<&EvalReport> = reports.iter().collect();
    order.sort_by(|a, b| b.metrics.accuracy.total_cmp(&a.metrics.accuracy));
    let mut out = String::from(
        "| arm | overall accuracy | precision (no motion) | recall (severe motion) | silhouette |\n\
         |---|---|---|---|---|\n",
    );
    for r in order {
        out.push_str(&format!(
            "| {} | {:.3} | {} | {} | {} |\n",
            r.arm,
            r.metrics.accuracy,
            r.metrics.precision[0].display3(),
            r.metrics.recall[2].display3(),
            r.silhouette.map_or_else(|| "n/a".to_string(), |s| format!("{s:.3}"))
        ));
    }
    out
}
