use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary confusion counts with Hyper as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(pred: &[bool], truth: &[bool]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                got: pred.len(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        Metrics {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// Component-wise mean, e.g. over cross-validation folds.
    pub fn mean(all: &[Metrics]) -> Metrics {
        if all.is_empty() {
            return Metrics::default();
        }
        let n = all.len() as f64;
        Metrics {
            accuracy: all.iter().map(|m| m.accuracy).sum::<f64>() / n,
            precision: all.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: all.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: all.iter().map(|m| m.f1).sum::<f64>() / n,
        }
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn evaluate(pred: &[bool], truth: &[bool]) -> Result<Metrics> {
    if truth.is_empty() {
        return Err(Error::Empty("evaluation labels"));
    }
    Ok(Confusion::from_predictions(pred, truth)?.metrics())
}

/// Cohen's kappa between two annotators. Returns 1 when chance agreement is
/// already perfect and the raters agree everywhere.
pub fn cohens_kappa(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("kappa labels"));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let pa = a.iter().filter(|&&x| x).count() as f64 / n;
    let pb = b.iter().filter(|&&x| x).count() as f64 / n;
    let p_o = agree / n;
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn f1_from_precision_recall() {
        let f1 = f1_score(0.81, 0.76);
        assert!((f1 - 0.784).abs() < 0.0005, "{f1}");
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn perfect_predictions() {
        let y = [true, false, true, false];
        let m = evaluate(&y, &y).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn no_predicted_positives() {
        let m = evaluate(&[false, false, false], &[true, false, true]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(evaluate(&[true], &[true, false]).is_err());
        assert!(evaluate(&[], &[]).is_err());
        assert!(cohens_kappa(&[true], &[]).is_err());
    }

    #[test]
    fn kappa_hand_example() {
        // both-H 20, a-H/b-N 5, a-N/b-H 10, both-N 15
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (x, y, n) in [(true, true, 20), (true, false, 5), (false, true, 10), (false, false, 15)] {
            a.extend(std::iter::repeat_n(x, n));
            b.extend(std::iter::repeat_n(y, n));
        }
        let k = cohens_kappa(&a, &b).unwrap();
        assert!((k - 0.4).abs() < 1e-12, "{k}");
    }

    #[test]
    fn kappa_identical_and_chance() {
        let a = [true, false, false, true, true];
        assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
        assert_eq!(cohens_kappa(&[true; 4], &[true; 4]).unwrap(), 1.0);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let all_h = vec![true; 20_000];
        let random: Vec<bool> = (0..20_000).map(|_| rng.random_bool(0.5)).collect();
        assert!(cohens_kappa(&all_h, &random).unwrap().abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn metric_bounds_and_f1_identity(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
            prop_assume!(tp + fp + tn + fn_ > 0);
            let m = Confusion { tp, fp, tn, fn_ }.metrics();
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if m.precision + m.recall > 0.0 {
                prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-12);
            } else {
                prop_assert_eq!(m.f1, 0.0);
            }
        }

        #[test]
        fn kappa_in_range(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
            let (a, b): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let k = cohens_kappa(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&k));
        }
    }
}
