//! Classification metrics, affinity-score distributions and embedding
//! separability.

pub mod figures;
pub mod report;
pub mod tsne;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data_model::{MoGrASTriple, MotionGrade};
use crate::{Error, Result};

pub use report::{format_table_row, comparison_table, EvalReport};
pub use tsne::{project_2d, TsneConfig};

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, truth: MotionGrade) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn column_total(&self, predicted: MotionGrade) -> u64 {
        self.counts.iter().map(|row| row[predicted.index()]).sum()
    }
}

pub fn confusion(predictions: &[MotionGrade], truths: &[MotionGrade]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("confusion matrix of zero samples".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in predictions.iter().zip(truths) {
        cm.counts[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

/// A ratio that is undefined when its denominator is zero; serialized as a
/// number or the string `"n/a"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio(pub Option<f64>);

impl Ratio {
    fn of(num: u64, den: u64) -> Self {
        Ratio((den > 0).then(|| num as f64 / den as f64))
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }

    /// Three decimals, or `n/a`.
    pub fn display3(self) -> String {
        self.0.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("n/a"),
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Ratio(Some(v))),
            Raw::Text(t) if t == "n/a" => Ok(Ratio(None)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"n/a\", got `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Per predicted grade: diagonal over column total.
    pub precision: [Ratio; 3],
    /// Per truth grade: diagonal over row total.
    pub recall: [Ratio; 3],
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("metrics of an empty confusion matrix".into()));
    }
    let grades = [MotionGrade::NoMotion, MotionGrade::SubtleMotion, MotionGrade::SevereMotion];
    let precision = grades.map(|g| Ratio::of(cm.counts[g.index()][g.index()], cm.column_total(g)));
    let recall = grades.map(|g| Ratio::of(cm.counts[g.index()][g.index()], cm.row_total(g)));
    Ok(Metrics {
        accuracy: cm.trace() as f64 / total as f64,
        precision,
        recall,
    })
}

/// Quantile with linear interpolation between order statistics (the
/// default of most numeric libraries); `q = 0.5` is the usual median.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_unstable_by(f64::total_cmp);
        Quartiles {
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
        }
    }
}

/// Affinity-score summaries indexed `[truth grade][score grade]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub cells: [[Quartiles; 3]; 3],
    /// Samples per truth grade.
    pub counts: [usize; 3],
}

impl ScoreDistribution {
    pub fn medians(&self) -> [[f64; 3]; 3] {
        self.cells.map(|row| row.map(|q| q.median))
    }
}

pub fn mogras_distribution(triples: &[MoGrASTriple], truths: &[MotionGrade]) -> Result<ScoreDistribution> {
    if triples.len() != truths.len() {
        return Err(Error::Shape(format!("{} triples but {} truths", triples.len(), truths.len())));
    }
    let mut groups: [Vec<[f64; 3]>; 3] = Default::default();
    for (t, g) in triples.iter().zip(truths) {
        groups[g.index()].push(t.scores());
    }
    for grade in MotionGrade::ALL {
        if groups[grade.index()].is_empty() {
            return Err(Error::EmptyGrade(*grade));
        }
    }
    let cells = groups.each_ref().map(|rows| {
        [0, 1, 2].map(|k| Quartiles::of(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
    });
    Ok(ScoreDistribution {
        cells,
        counts: groups.each_ref().map(Vec::len),
    })
}

/// Mean silhouette coefficient under cosine distance `1 - cos(a, b)`.
pub fn silhouette(embeddings: &[&[f32]], labels: &[MotionGrade]) -> Result<f64> {
    if embeddings.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let mut sizes = [0usize; 3];
    for g in labels {
        sizes[g.index()] += 1;
    }
    let present: Vec<usize> = (0..3).filter(|&c| sizes[c] > 0).collect();
    if present.len() < 2 || present.iter().any(|&c| sizes[c] < 2) {
        return Err(Error::InvalidArgument(format!(
            "silhouette needs at least 2 classes with at least 2 members each, got sizes {sizes:?}"
        )));
    }
    let unit: Vec<Vec<f64>> = embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let norm = e.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                Ok(e.iter().map(|&v| f64::from(v) / norm).collect())
            } else {
                Err(Error::Data(format!("embedding {i} has norm {norm}")))
            }
        })
        .collect::<Result<_>>()?;
    let n = unit.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = [0.0f64; 3];
        for j in (0..n).filter(|&j| j != i) {
            let cos: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            sums[labels[j].index()] += 1.0 - cos;
        }
        let own = labels[i].index();
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = present
            .iter()
            .filter(|&&c| c != own)
            .map(|&c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    Ok(total / n as f64)
}
