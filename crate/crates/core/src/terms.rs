//! Term importance: Shapley attributions of an L1 logistic model fitted to
//! predicted labels, ranked per fold and aggregated across folds.
//!
//! For a linear model under feature independence the Shapley value of
//! feature `j` on sample `i` is `w_j * (x_ij - mu_j)`, where `mu` is the
//! background mean. Summing over features and adding the base value
//! `w·mu + b` recovers the margin exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::corpus::BiasGroup;
use crate::error::{Error, Result};
use crate::features::{vectorize_binary, FeatureVector, Vocabulary};
use crate::learners::{kfold_cv, train_l1_logreg, LogRegModel, LogRegOptions, Metrics};

/// Terms kept per direction in an aggregated report.
pub const REPORT_TERMS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HyperSuggestive,
    NonHyperSuggestive,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::HyperSuggestive => "hyper_suggestive",
            Direction::NonHyperSuggestive => "non_hyper_suggestive",
        }
    }
}

/// A named span of whole years, both ends inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub name: String,
    pub first_year: i32,
    pub last_year: i32,
}

impl Period {
    pub fn new(name: &str, first_year: i32, last_year: i32) -> Self {
        Self {
            name: name.to_string(),
            first_year,
            last_year,
        }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        (self.first_year..=self.last_year).contains(&date.year())
    }

    /// The three analysis periods: up to the 2016 election, 2017-2020, and
    /// 2021-2022.
    pub fn defaults() -> Vec<Period> {
        vec![
            Period::new("pre2016", 2014, 2016),
            Period::new("2017-2020", 2017, 2020),
            Period::new("2021-2022", 2021, 2022),
        ]
    }

    pub fn find<'a>(periods: &'a [Period], name: &str) -> Result<&'a Period> {
        periods
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown period {name:?}")))
    }
}

/// Per-feature mean of sparse vectors.
pub fn feature_means(x: &[FeatureVector], n_features: usize) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty("background sample"));
    }
    let mut mu = vec![0.0; n_features];
    for v in x {
        for (j, val) in v.iter() {
            if j >= n_features {
                return Err(Error::DimensionMismatch {
                    expected: n_features,
                    got: j + 1,
                });
            }
            mu[j] += val;
        }
    }
    let n = x.len() as f64;
    mu.iter_mut().for_each(|m| *m /= n);
    Ok(mu)
}

/// Expected margin under the background distribution, `w·mu + b`.
pub fn base_value(model: &LogRegModel, mu: &[f64]) -> f64 {
    model.weights.iter().zip(mu).map(|(w, m)| w * m).sum::<f64>() + model.bias
}

/// Shapley values of one sample, one entry per feature.
pub fn linear_shap_row(model: &LogRegModel, x: &FeatureVector, mu: &[f64]) -> Result<Vec<f64>> {
    let d = model.weights.len();
    if mu.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: mu.len() });
    }
    let mut phi: Vec<f64> = model.weights.iter().zip(mu).map(|(w, m)| -w * m).collect();
    for (j, val) in x.iter() {
        if j >= d {
            return Err(Error::DimensionMismatch { expected: d, got: j + 1 });
        }
        phi[j] = model.weights[j] * (val - mu[j]);
    }
    Ok(phi)
}

/// Shapley matrix for a set of samples, one row per sample.
pub fn linear_shap(model: &LogRegModel, x: &[FeatureVector], mu: &[f64]) -> Result<Vec<Vec<f64>>> {
    x.iter().map(|v| linear_shap_row(model, v, mu)).collect()
}

/// Mean of `|phi_ij|` over the samples, per feature, without materializing
/// the matrix.
///
/// With binary features `x_ij` is 0 or 1, so `|phi_ij|` takes only two
/// values per feature and the mean follows from how often the feature is
/// present.
pub fn mean_abs_shap(model: &LogRegModel, x: &[FeatureVector], mu: &[f64]) -> Result<Vec<f64>> {
    let d = model.weights.len();
    if mu.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: mu.len() });
    }
    if x.is_empty() {
        return Err(Error::Empty("attribution sample"));
    }
    let absent: Vec<f64> = model.weights.iter().zip(mu).map(|(w, m)| (w * m).abs()).collect();
    // accumulate the correction for samples where the feature is non-zero
    let mut delta = vec![0.0; d];
    for v in x {
        for (j, val) in v.iter() {
            if j >= d {
                return Err(Error::DimensionMismatch { expected: d, got: j + 1 });
            }
            delta[j] += (model.weights[j] * (val - mu[j])).abs() - absent[j];
        }
    }
    let n = x.len() as f64;
    Ok(absent.iter().zip(&delta).map(|(a, dl)| a + dl / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermScore {
    pub term: String,
    pub weight: f64,
    pub mean_abs_phi: f64,
}

/// Ranked terms of one fold, split by direction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldTerms {
    pub hyper: Vec<TermScore>,
    pub non_hyper: Vec<TermScore>,
}

impl FoldTerms {
    pub fn direction(&self, direction: Direction) -> &[TermScore] {
        match direction {
            Direction::HyperSuggestive => &self.hyper,
            Direction::NonHyperSuggestive => &self.non_hyper,
        }
    }
}

fn by_importance(a: &TermScore, b: &TermScore) -> std::cmp::Ordering {
    b.mean_abs_phi.total_cmp(&a.mean_abs_phi).then_with(|| a.term.cmp(&b.term))
}

/// Top `n` terms per direction for one fold model, ranked by mean `|phi|`
/// over `x` (the fold's training rows).
///
/// A term is hyper-suggestive when its weight is positive: its presence
/// pushes the margin towards the hyperpartisan class. Terms with zero
/// weight carry no attribution and are dropped.
pub fn top_terms_per_fold(model: &LogRegModel, vocab: &Vocabulary, x: &[FeatureVector], n: usize) -> Result<FoldTerms> {
    if vocab.len() != model.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: model.weights.len(),
            got: vocab.len(),
        });
    }
    let mu = feature_means(x, vocab.len())?;
    let importance = mean_abs_shap(model, x, &mu)?;
    let mut out = FoldTerms::default();
    for (j, (&w, &imp)) in model.weights.iter().zip(&importance).enumerate() {
        if w == 0.0 || imp == 0.0 {
            continue;
        }
        let score = TermScore {
            term: vocab.term(j).to_string(),
            weight: w,
            mean_abs_phi: imp,
        };
        if w > 0.0 {
            out.hyper.push(score);
        } else {
            out.non_hyper.push(score);
        }
    }
    for list in [&mut out.hyper, &mut out.non_hyper] {
        list.sort_by(by_importance);
        list.truncate(n);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTerm {
    pub term: String,
    /// Number of folds whose list contains the term.
    pub occurrences: usize,
    /// Mean `|phi|` over the folds that list the term.
    pub mean_abs_phi: f64,
}

/// Rank terms by how many fold lists contain them, then by mean `|phi|`,
/// then alphabetically, keeping at most `max_terms`.
pub fn aggregate_folds(folds: &[FoldTerms], direction: Direction, max_terms: usize) -> Vec<RankedTerm> {
    let mut acc: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for fold in folds {
        for t in fold.direction(direction) {
            let e = acc.entry(&t.term).or_default();
            e.0 += 1;
            e.1 += t.mean_abs_phi;
        }
    }
    let mut ranked: Vec<RankedTerm> = acc
        .into_iter()
        .map(|(term, (occurrences, sum))| RankedTerm {
            term: term.to_string(),
            occurrences,
            mean_abs_phi: sum / occurrences as f64,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.occurrences
            .cmp(&a.occurrences)
            .then_with(|| b.mean_abs_phi.total_cmp(&a.mean_abs_phi))
            .then_with(|| a.term.cmp(&b.term))
    });
    ranked.truncate(max_terms);
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub period: Period,
    /// `None` when all groups are pooled.
    pub bias_group: Option<BiasGroup>,
    pub direction: Direction,
    pub ranked_terms: Vec<RankedTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermAnalysisConfig {
    pub k: usize,
    pub seed: u64,
    pub lambda: f64,
    /// Minimum document frequency of a term over the analysed titles.
    pub min_df: f64,
    /// Terms kept per fold and direction.
    pub top_n: usize,
    pub report_terms: usize,
}

impl Default for TermAnalysisConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 7,
            lambda: 1e-3,
            min_df: 0.005,
            top_n: 50,
            report_terms: REPORT_TERMS,
        }
    }
}

/// Result of the cross-validated attribution on one slice of titles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermAnalysis {
    pub n_titles: usize,
    pub n_hyper: usize,
    pub vocabulary_size: usize,
    pub fold_metrics: Vec<Metrics>,
    pub mean_metrics: Metrics,
    pub folds: Vec<FoldTerms>,
    pub hyper: Vec<RankedTerm>,
    pub non_hyper: Vec<RankedTerm>,
}

/// Fit L1 logistic models to `labels` in stratified folds over binarized
/// bag-of-words features and rank the terms each fold relies on.
pub fn analyze_terms<S: AsRef<str> + Sync>(
    docs: &[Vec<S>],
    labels: &[bool],
    config: &TermAnalysisConfig,
) -> Result<TermAnalysis> {
    if docs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: docs.len(),
            got: labels.len(),
        });
    }
    let vocab = Vocabulary::build(docs, config.min_df)?;
    let x: Vec<FeatureVector> = docs.iter().map(|d| vectorize_binary(d, &vocab)).collect();
    let dim = vocab.len();
    let opts = LogRegOptions::default();
    let results = kfold_cv(&x, labels, config.k, config.seed, |tx, ty| {
        train_l1_logreg(tx, dim, ty, config.lambda, &opts)
    })?;
    let mut folds = Vec::with_capacity(results.len());
    for r in &results {
        let mut held_out = vec![false; x.len()];
        r.test_rows.iter().for_each(|&i| held_out[i] = true);
        let train_x: Vec<FeatureVector> = (0..x.len()).filter(|&i| !held_out[i]).map(|i| x[i].clone()).collect();
        folds.push(top_terms_per_fold(&r.model, &vocab, &train_x, config.top_n)?);
    }
    let fold_metrics: Vec<Metrics> = results.iter().map(|r| r.metrics).collect();
    Ok(TermAnalysis {
        n_titles: docs.len(),
        n_hyper: labels.iter().filter(|&&l| l).count(),
        vocabulary_size: dim,
        mean_metrics: Metrics::mean(&fold_metrics),
        fold_metrics,
        hyper: aggregate_folds(&folds, Direction::HyperSuggestive, config.report_terms),
        non_hyper: aggregate_folds(&folds, Direction::NonHyperSuggestive, config.report_terms),
        folds,
    })
}

impl TermAnalysis {
    pub fn reports(&self, period: &Period, bias_group: Option<BiasGroup>) -> [AttributionReport; 2] {
        let make = |direction, ranked_terms: &Vec<RankedTerm>| AttributionReport {
            period: period.clone(),
            bias_group,
            direction,
            ranked_terms: ranked_terms.clone(),
        };
        [
            make(Direction::HyperSuggestive, &self.hyper),
            make(Direction::NonHyperSuggestive, &self.non_hyper),
        ]
    }
}

/// Markdown table with one row per (period, group) and one column per
/// direction.
pub fn render_markdown(reports: &[AttributionReport]) -> String {
    let mut cells: BTreeMap<(i32, String, String), [String; 2]> = BTreeMap::new();
    for r in reports {
        let group = r.bias_group.map_or("All".to_string(), |g| g.to_string());
        let key = (r.period.first_year, r.period.name.clone(), group);
        let terms: Vec<&str> = r.ranked_terms.iter().map(|t| t.term.as_str()).collect();
        let slot = match r.direction {
            Direction::HyperSuggestive => 0,
            Direction::NonHyperSuggestive => 1,
        };
        cells.entry(key).or_default()[slot] = terms.join(", ");
    }
    let mut out = String::from("| Period | Group | Hyperpartisan | Non-hyperpartisan |\n|---|---|---|---|\n");
    for ((_, period, group), [hyper, non]) in cells {
        let _ = writeln!(out, "| {period} | {group} | {hyper} | {non} |");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(w: &[f64], b: f64) -> LogRegModel {
        LogRegModel {
            weights: w.to_vec(),
            bias: b,
            lambda: 0.0,
        }
    }

    /// Shapley values by enumerating every coalition, with absent features
    /// set to their background mean.
    fn brute_force_shapley(w: &[f64], b: f64, x: &[f64], mu: &[f64]) -> Vec<f64> {
        let d = w.len();
        let value = |mask: usize| -> f64 {
            b + (0..d)
                .map(|j| w[j] * if mask & (1 << j) != 0 { x[j] } else { mu[j] })
                .sum::<f64>()
        };
        let fact: Vec<f64> = (0..=d).scan(1.0, |acc, i| {
            if i > 0 {
                *acc *= i as f64;
            }
            Some(*acc)
        })
        .collect();
        (0..d)
            .map(|j| {
                let mut phi = 0.0;
                for mask in 0..(1usize << d) {
                    if mask & (1 << j) != 0 {
                        continue;
                    }
                    let s = mask.count_ones() as usize;
                    let coef = fact[s] * fact[d - s - 1] / fact[d];
                    phi += coef * (value(mask | (1 << j)) - value(mask));
                }
                phi
            })
            .collect()
    }

    #[test]
    fn two_feature_example() {
        let m = model(&[1.0, 2.0], 0.0);
        let mu = [0.5, 0.5];
        let x = FeatureVector::from_dense(&[1.0, 0.0]);
        let phi = linear_shap_row(&m, &x, &mu).unwrap();
        assert_eq!(phi, vec![0.5, -1.0]);
        assert_eq!(base_value(&m, &mu), 1.5);
        assert_eq!(phi.iter().sum::<f64>() + base_value(&m, &mu), m.margin(&x));
    }

    #[test]
    fn sample_at_background_has_zero_attribution() {
        let m = model(&[0.3, -1.2, 4.0], 0.1);
        let mu = [1.0, 0.0, 1.0];
        let phi = linear_shap_row(&m, &FeatureVector::from_dense(&mu), &mu).unwrap();
        assert!(phi.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn closed_form_matches_coalition_enumeration_for_eight_features() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let w: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b = rng.random_range(-1.0..1.0);
            let mu: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
            let x: Vec<f64> = (0..8).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
            let closed = linear_shap_row(&model(&w, b), &FeatureVector::from_dense(&x), &mu).unwrap();
            let brute = brute_force_shapley(&w, b, &x, &mu);
            for (c, o) in closed.iter().zip(&brute) {
                assert!((c - o).abs() < 1e-9, "{c} vs {o}");
            }
        }
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let m = model(&[1.0, 2.0], 0.0);
        assert!(linear_shap_row(&m, &FeatureVector::from_dense(&[1.0]), &[0.5]).is_err());
        assert!(linear_shap_row(&m, &FeatureVector::from_dense(&[0.0, 0.0, 1.0]), &[0.5, 0.5]).is_err());
        assert!(feature_means(&[], 3).is_err());
    }

    #[test]
    fn mean_abs_matches_dense_matrix() {
        let m = model(&[1.5, 0.0, -2.0, 0.25], 0.3);
        let x: Vec<FeatureVector> = [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 1.0, 0.0], [1.0, 1.0, 0.0, 1.0]]
            .iter()
            .map(|r| FeatureVector::from_dense(r))
            .collect();
        let mu = feature_means(&x, 4).unwrap();
        let dense = linear_shap(&m, &x, &mu).unwrap();
        let fast = mean_abs_shap(&m, &x, &mu).unwrap();
        for j in 0..4 {
            let oracle = dense.iter().map(|r| r[j].abs()).sum::<f64>() / 3.0;
            assert!((fast[j] - oracle).abs() < 1e-12);
        }
    }

    fn vocab(terms: &[&str]) -> Vocabulary {
        Vocabulary::from_parts(terms.iter().map(|s| s.to_string()).collect(), vec![1; terms.len()], 10, 0.0)
    }

    #[test]
    fn single_positive_feature_tops_hyper_list() {
        let m = model(&[3.0], 0.0);
        let x: Vec<FeatureVector> = (0..10)
            .map(|i| FeatureVector::from_dense(&[if i < 2 { 1.0 } else { 0.0 }]))
            .collect();
        let terms = top_terms_per_fold(&m, &vocab(&["slama"]), &x, 50).unwrap();
        assert_eq!(terms.hyper[0].term, "slama");
        assert!(terms.non_hyper.is_empty());
    }

    #[test]
    fn zero_weights_give_empty_lists() {
        let m = model(&[0.0, 0.0], 1.0);
        let x = vec![FeatureVector::from_dense(&[1.0, 0.0]), FeatureVector::from_dense(&[0.0, 1.0])];
        let terms = top_terms_per_fold(&m, &vocab(&["a", "b"]), &x, 50).unwrap();
        assert!(terms.hyper.is_empty() && terms.non_hyper.is_empty());
    }

    #[test]
    fn requesting_more_terms_than_vocabulary_returns_all() {
        let m = model(&[1.0, -1.0, 2.0], 0.0);
        let x = vec![FeatureVector::from_dense(&[1.0, 0.0, 1.0]), FeatureVector::from_dense(&[0.0, 1.0, 0.0])];
        let terms = top_terms_per_fold(&m, &vocab(&["a", "b", "c"]), &x, 100).unwrap();
        assert_eq!(terms.hyper.len() + terms.non_hyper.len(), 3);
        assert_eq!(terms.hyper[0].term, "c");
    }

    fn fold(hyper: &[(&str, f64)]) -> FoldTerms {
        FoldTerms {
            hyper: hyper
                .iter()
                .map(|&(t, p)| TermScore {
                    term: t.into(),
                    weight: 1.0,
                    mean_abs_phi: p,
                })
                .collect(),
            non_hyper: vec![],
        }
    }

    #[test]
    fn aggregation_ranks_by_occurrence_then_importance() {
        let mut folds: Vec<FoldTerms> = (0..5).map(|_| fold(&[("always", 0.1)])).collect();
        for f in folds.iter_mut().take(3) {
            f.hyper.push(TermScore {
                term: "often".into(),
                weight: 1.0,
                mean_abs_phi: 5.0,
            });
        }
        let ranked = aggregate_folds(&folds, Direction::HyperSuggestive, 15);
        assert_eq!(ranked[0].term, "always");
        assert_eq!(ranked[0].occurrences, 5);
        assert_eq!(ranked[1].occurrences, 3);

        let ties = vec![fold(&[("low", 0.4), ("high", 0.9)]); 5];
        let ranked = aggregate_folds(&ties, Direction::HyperSuggestive, 15);
        assert_eq!(ranked[0].term, "high");
        assert!((ranked[0].mean_abs_phi - 0.9).abs() < 1e-12);
    }

    #[test]
    fn disjoint_folds_order_by_importance() {
        let folds = vec![fold(&[("a", 0.2)]), fold(&[("b", 0.7)]), fold(&[("c", 0.5)])];
        let ranked = aggregate_folds(&folds, Direction::HyperSuggestive, 15);
        let names: Vec<&str> = ranked.iter().map(|t| t.term.as_str()).collect();
        assert_eq!(names, ["b", "c", "a"]);
        assert!(ranked.iter().all(|t| t.occurrences == 1));
        assert!(aggregate_folds(&folds, Direction::NonHyperSuggestive, 15).is_empty());
        assert_eq!(aggregate_folds(&folds, Direction::HyperSuggestive, 2).len(), 2);
    }

    #[test]
    fn default_periods_partition_the_years() {
        let periods = Period::defaults();
        for year in 2014..=2022 {
            let date = NaiveDate::from_ymd_opt(year, 6, 1).unwrap();
            assert_eq!(periods.iter().filter(|p| p.contains(date)).count(), 1, "{year}");
        }
        assert!(Period::find(&periods, "pre2016").is_ok());
        assert!(Period::find(&periods, "1990s").is_err());
    }

    #[test]
    fn markdown_has_one_row_per_cell() {
        let analysis = TermAnalysis {
            n_titles: 0,
            n_hyper: 0,
            vocabulary_size: 0,
            fold_metrics: vec![],
            mean_metrics: Metrics::default(),
            folds: vec![],
            hyper: aggregate_folds(&[fold(&[("slam", 1.0), ("rage", 0.5)])], Direction::HyperSuggestive, 15),
            non_hyper: vec![],
        };
        let periods = Period::defaults();
        let mut reports = analysis.reports(&periods[1], Some(BiasGroup::Right)).to_vec();
        reports.extend(analysis.reports(&periods[0], None));
        let md = render_markdown(&reports);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "| pre2016 | All | slam, rage |  |");
        assert_eq!(lines[3], "| 2017-2020 | Right | slam, rage |  |");
    }

    proptest! {
        #[test]
        fn attributions_sum_to_margin(
            w in prop::collection::vec(-5.0f64..5.0, 1..12),
            b in -2.0f64..2.0,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = w.len();
            let mu: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let x: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
            let m = model(&w, b);
            let fv = FeatureVector::from_dense(&x);
            let phi = linear_shap_row(&m, &fv, &mu).unwrap();
            prop_assert!((phi.iter().sum::<f64>() + base_value(&m, &mu) - m.margin(&fv)).abs() < 1e-9);

            // doubling the weights doubles every attribution
            let m2 = model(&w.iter().map(|v| 2.0 * v).collect::<Vec<_>>(), b);
            let phi2 = linear_shap_row(&m2, &fv, &mu).unwrap();
            for (p, p2) in phi.iter().zip(&phi2) {
                prop_assert!((2.0 * p - p2).abs() < 1e-12);
            }
        }
    }
}
