//! Stratified train/val/test partitioning.
//!
//! Strata are `(contrast, orientation, grade)` cells. Each stratum is
//! shuffled with its own seeded stream and cut by largest-remainder rounding,
//! so every split count is the floor or ceiling of its exact share. Which
//! splits receive the rounded-up elements is decided by the fractional part
//! plus the deficit carried over from previously processed strata; strata are
//! visited in key order, so the split totals stay within one or two elements
//! of their targets regardless of input order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::data_model::{Contrast, MotionGrade, Orientation, SliceRecord};
use crate::error::{Error, Result};
use crate::ingestion::manifest::ManifestEntry;
use crate::seed::rng_for;

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    ratios: [f64; 3],
    seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "split ratios must be positive, got {ratios:?}"
            )));
        }
        let total: f64 = ratios.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios sum to {total}, expected 1"
            )));
        }
        Ok(SplitSpec { ratios, seed })
    }

    pub fn ratios(&self) -> [f64; 3] {
        self.ratios
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

pub type StratumKey = (Contrast, Orientation, MotionGrade);

/// Anything that can be assigned to a stratum.
pub trait Stratified {
    fn split_id(&self) -> &str;
    fn stratum(&self) -> Result<StratumKey>;
}

impl Stratified for SliceRecord {
    fn split_id(&self) -> &str {
        &self.id
    }

    fn stratum(&self) -> Result<StratumKey> {
        Ok((self.contrast, self.orientation, self.require_grade()?))
    }
}

impl Stratified for ManifestEntry {
    fn split_id(&self) -> &str {
        &self.image_path
    }

    fn stratum(&self) -> Result<StratumKey> {
        let grade = self.grade.ok_or_else(|| Error::InvalidRecord {
            id: self.image_path.clone(),
            reason: "record has no grade; cannot stratify".into(),
        })?;
        Ok((self.contrast, self.orientation, grade))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    fn part_mut(&mut self, split: usize) -> &mut Vec<usize> {
        match split {
            0 => &mut self.train,
            1 => &mut self.val,
            _ => &mut self.test,
        }
    }
}

pub fn stratified_split<T: Stratified + Clone>(
    records: &[T],
    spec: &SplitSpec,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let idx = stratified_split_indices(records, spec)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&idx.train), pick(&idx.val), pick(&idx.test)))
}

pub fn stratified_split_indices<T: Stratified>(
    records: &[T],
    spec: &SplitSpec,
) -> Result<SplitIndices> {
    let mut strata: BTreeMap<StratumKey, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        strata.entry(r.stratum()?).or_default().push(i);
    }

    let ratios = spec.ratios;
    let mut by_ratio = [0usize, 1, 2];
    by_ratio.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]).then(a.cmp(&b)));

    let mut deficit = [0.0f64; 3];
    let mut out = SplitIndices::default();
    for (key, mut members) in strata {
        // Sorting by id first makes the result independent of input order.
        members.sort_by(|&a, &b| records[a].split_id().cmp(records[b].split_id()).then(a.cmp(&b)));
        let tag = format!("{}/{}/{}", key.0, key.1, key.2);
        members.shuffle(&mut rng_for(spec.seed, &tag, 0));

        let counts = allocate(members.len(), &ratios, &deficit, &by_ratio);
        for s in 0..3 {
            deficit[s] += members.len() as f64 * ratios[s] - counts[s] as f64;
        }
        let mut start = 0;
        for (s, &count) in counts.iter().enumerate() {
            out.part_mut(s).extend_from_slice(&members[start..start + count]);
            start += count;
        }
    }
    Ok(out)
}

fn allocate(n: usize, ratios: &[f64; 3], deficit: &[f64; 3], by_ratio: &[usize; 3]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    if n < 3 {
        for &s in by_ratio.iter().take(n) {
            counts[s] = 1;
        }
        return counts;
    }
    let exact = ratios.map(|r| n as f64 * r);
    for s in 0..3 {
        counts[s] = exact[s].floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order = *by_ratio;
    order.sort_by(|&a, &b| {
        let pa = exact[a].fract() + deficit[a];
        let pb = exact[b].fract() + deficit[b];
        pb.total_cmp(&pa)
            .then(ratios[b].total_cmp(&ratios[a]))
            .then(a.cmp(&b))
    });
    for &s in order.iter().take(n.saturating_sub(assigned)) {
        counts[s] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn rec(i: usize, c: Contrast, o: Orientation, g: MotionGrade) -> SliceRecord {
        SliceRecord::new(format!("s{i:05}"), Array2::zeros((1, 1)), c, o, Some(g))
    }

    #[test]
    fn single_stratum_exact_ratios() {
        let recs: Vec<_> = (0..10)
            .map(|i| rec(i, Contrast::T1w, Orientation::Axial, MotionGrade::NoMotion))
            .collect();
        let spec = SplitSpec::new([0.5, 0.2, 0.3], 1).unwrap();
        let idx = stratified_split_indices(&recs, &spec).unwrap();
        assert_eq!(idx.sizes(), [5, 2, 3]);
    }

    #[test]
    fn tiny_strata_go_to_largest_ratios_first() {
        let recs: Vec<_> = (0..2)
            .map(|i| rec(i, Contrast::Flair, Orientation::Oblique, MotionGrade::SevereMotion))
            .collect();
        let spec = SplitSpec::new([0.3, 0.2, 0.5], 9).unwrap();
        let idx = stratified_split_indices(&recs, &spec).unwrap();
        assert_eq!(idx.sizes(), [1, 0, 1]);
    }

    #[test]
    fn missing_grade_is_an_error() {
        let mut r = rec(0, Contrast::T1w, Orientation::Axial, MotionGrade::NoMotion);
        r.grade = None;
        let spec = SplitSpec::new([0.5, 0.25, 0.25], 0).unwrap();
        assert!(stratified_split(&[r], &spec).is_err());
    }

    #[test]
    fn ratio_validation() {
        assert!(SplitSpec::new([0.5, 0.5, 0.0], 0).is_err());
        assert!(SplitSpec::new([0.5, 0.3, 0.3], 0).is_err());
        assert!(SplitSpec::new([0.6, 0.2, 0.2], 0).is_ok());
    }

    #[test]
    fn independent_of_input_order() {
        let mut recs: Vec<_> = (0..60)
            .map(|i| rec(i, Contrast::ALL[i % 4], Orientation::Axial, MotionGrade::ALL[i % 3]))
            .collect();
        let spec = SplitSpec::new([0.6, 0.2, 0.2], 4).unwrap();
        let ids = |recs: &[SliceRecord]| {
            let (tr, va, te) = stratified_split(recs, &spec).unwrap();
            let mut parts = [tr, va, te].map(|p| p.into_iter().map(|r| r.id).collect::<Vec<_>>());
            parts.iter_mut().for_each(|p| p.sort());
            parts
        };
        let before = ids(&recs);
        recs.reverse();
        assert_eq!(before, ids(&recs));
    }
}
