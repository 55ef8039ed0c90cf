use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{evaluate, Classifier, Metrics};
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Outcome of one fold: the held-out rows, the model trained without them
/// and its metrics on them.
#[derive(Debug, Clone)]
pub struct FoldResult<M> {
    pub fold: usize,
    pub test_rows: Vec<usize>,
    pub metrics: Metrics,
    pub model: M,
}

/// Split row indices into `k` label-stratified folds.
///
/// Each class is shuffled with the seed, positives are laid out before
/// negatives, and position `i` goes to fold `i % k`. Fold sizes therefore
/// differ by at most one, as do per-fold positive counts.
pub fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > y.len() {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds dataset size {}", y.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let mut neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, row) in pos.into_iter().chain(neg).enumerate() {
        folds[i % k].push(row);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Run stratified k-fold cross-validation with folds trained in parallel.
///
/// `train` receives the training rows' features and labels; it is called
/// once per fold.
pub fn kfold_cv<M, F>(x: &[FeatureVector], y: &[bool], k: usize, seed: u64, train: F) -> Result<Vec<FoldResult<M>>>
where
    M: Classifier,
    F: Fn(&[FeatureVector], &[bool]) -> Result<M> + Sync,
{
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let folds = stratified_folds(y, k, seed)?;
    folds
        .into_par_iter()
        .enumerate()
        .map(|(fold, test_rows)| {
            let mut held_out = vec![false; x.len()];
            for &r in &test_rows {
                held_out[r] = true;
            }
            let (train_x, train_y): (Vec<FeatureVector>, Vec<bool>) = (0..x.len())
                .filter(|&r| !held_out[r])
                .map(|r| (x[r].clone(), y[r]))
                .unzip();
            let model = train(&train_x, &train_y)?;
            let test_x: Vec<FeatureVector> = test_rows.iter().map(|&r| x[r].clone()).collect();
            let truth: Vec<bool> = test_rows.iter().map(|&r| y[r]).collect();
            let metrics = evaluate(&model.predict(&test_x), &truth)?;
            Ok(FoldResult {
                fold,
                test_rows,
                metrics,
                model,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{train_l1_logreg, LogRegOptions};
    use proptest::prelude::*;

    #[test]
    fn ten_samples_five_folds() {
        let y: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let folds = stratified_folds(&y, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        assert!(folds.iter().all(|f| f.len() == 2));
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_folds() {
        let y: Vec<bool> = (0..37).map(|i| i % 3 == 0).collect();
        assert_eq!(stratified_folds(&y, 5, 11).unwrap(), stratified_folds(&y, 5, 11).unwrap());
        assert_ne!(stratified_folds(&y, 5, 11).unwrap(), stratified_folds(&y, 5, 12).unwrap());
    }

    #[test]
    fn thirty_seventy_split_is_stratified() {
        let y: Vec<bool> = (0..100).map(|i| i < 30).collect();
        for fold in stratified_folds(&y, 5, 0).unwrap() {
            let pos = fold.iter().filter(|&&r| y[r]).count();
            assert!((5..=7).contains(&pos), "{pos}");
        }
    }

    #[test]
    fn k_larger_than_dataset_is_rejected() {
        assert!(stratified_folds(&[true, false, true], 4, 0).is_err());
        assert!(stratified_folds(&[true, false, true], 1, 0).is_err());
    }

    #[test]
    fn cv_evaluates_each_fold_on_held_out_rows() {
        let x: Vec<FeatureVector> = (0..40)
            .map(|i| FeatureVector::from_dense(&[if i % 2 == 0 { 1.0 } else { 0.0 }, 1.0]))
            .collect();
        let y: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let results = kfold_cv(&x, &y, 5, 1, |tx, ty| train_l1_logreg(tx, 2, ty, 1e-4, &LogRegOptions::default())).unwrap();
        assert_eq!(results.len(), 5);
        for (i, r) in results.iter().enumerate() {
            assert_eq!(r.fold, i);
            assert_eq!(r.test_rows.len(), 8);
            assert_eq!(r.metrics.accuracy, 1.0);
        }
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(labels in proptest::collection::vec(any::<bool>(), 2..200), k in 2usize..10, seed in any::<u64>()) {
            prop_assume!(k <= labels.len());
            let folds = stratified_folds(&labels, k, seed).unwrap();
            let mut seen = vec![0u8; labels.len()];
            for f in &folds {
                for &r in f {
                    seen[r] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let pos: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&r| labels[r]).count()).collect();
            prop_assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
        }
    }
}
