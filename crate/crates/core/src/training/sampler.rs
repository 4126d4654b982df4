use rand::seq::SliceRandom;
use rand::Rng;

use crate::data_model::MotionGrade;
use crate::{Error, Result};

/// Batches with the same number of samples from every grade present in
/// `labels` (`batch_size / classes`, rounded down). The epoch ends when the
/// smallest class runs out.
pub fn balanced_batches<R: Rng>(labels: &[MotionGrade], batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); MotionGrade::COUNT];
    for (i, g) in labels.iter().enumerate() {
        by_class[g.index()].push(i);
    }
    let classes = by_class.iter().filter(|c| !c.is_empty()).count();
    if classes == 0 {
        return Err(Error::Sampler("no labeled samples".into()));
    }
    let per_class = batch_size / classes;
    if per_class < 2 {
        return Err(Error::Sampler(format!(
            "batch size {batch_size} gives fewer than 2 samples for each of {classes} classes"
        )));
    }
    for (grade, members) in MotionGrade::ALL.iter().zip(&by_class) {
        if !members.is_empty() && members.len() < 2 {
            return Err(Error::Sampler(format!("grade {grade} has only {} sample", members.len())));
        }
    }
    let mut present: Vec<Vec<usize>> = by_class.into_iter().filter(|c| !c.is_empty()).collect();
    for members in &mut present {
        members.shuffle(rng);
    }
    let smallest = present.iter().map(Vec::len).min().expect("non-empty");
    let per_class = per_class.min(smallest);
    let batches = smallest / per_class;
    let mut out = Vec::with_capacity(batches);
    for b in 0..batches {
        let mut batch: Vec<usize> = present
            .iter()
            .flat_map(|members| members[b * per_class..(b + 1) * per_class].iter().copied())
            .collect();
        batch.shuffle(rng);
        out.push(batch);
    }
    Ok(out)
}

/// Label-free shuffled batches; a trailing batch smaller than `min_last` is
/// dropped.
pub fn shuffled_batches<R: Rng>(n: usize, batch_size: usize, min_last: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .filter(|c| c.len() >= min_last)
        .map(<[usize]>::to_vec)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use MotionGrade::*;

    fn labels(counts: [usize; 3]) -> Vec<MotionGrade> {
        MotionGrade::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&g, n)| std::iter::repeat_n(g, n))
            .collect()
    }

    #[test]
    fn every_batch_is_balanced_and_disjoint() {
        let l = labels([10, 12, 11]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let batches = balanced_batches(&l, 9, &mut rng).unwrap();
        assert_eq!(batches.len(), 3);
        let mut seen = std::collections::HashSet::new();
        for b in &batches {
            for g in [NoMotion, SubtleMotion, SevereMotion] {
                assert_eq!(b.iter().filter(|&&i| l[i] == g).count(), 3);
            }
            for &i in b {
                assert!(seen.insert(i));
            }
        }
    }

    #[test]
    fn infeasible_layouts_are_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(balanced_batches(&labels([5, 1, 5]), 12, &mut rng), Err(Error::Sampler(_))));
        assert!(matches!(balanced_batches(&labels([5, 5, 5]), 5, &mut rng), Err(Error::Sampler(_))));
        // two present classes only
        let b = balanced_batches(&labels([4, 0, 4]), 4, &mut rng).unwrap();
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn shuffled_batches_cover_everything() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let b = shuffled_batches(10, 4, 1, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let b = shuffled_batches(9, 4, 2, &mut rng);
        assert_eq!(b.len(), 2);
    }
}
