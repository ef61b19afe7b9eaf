//! Ranking and classification metrics.
//!
//! Ranks are 1-based. Rankings are produced from scores by [`rank_labels`],
//! which sorts by descending score and breaks ties by ascending label index.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores for every label of a label space plus the relevant label indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub scores: Vec<f64>,
    pub gold: Vec<usize>,
}

impl RankedPrediction {
    pub fn new(scores: Vec<f64>, gold: Vec<usize>) -> Result<Self> {
        if let Some(g) = gold.iter().find(|&&g| g >= scores.len()) {
            return Err(Error::OutOfRange(format!(
                "gold label {g} outside {} labels",
                scores.len()
            )));
        }
        Ok(RankedPrediction { scores, gold })
    }

    pub fn ranking(&self) -> Vec<usize> {
        rank_labels(&self.scores)
    }
}

/// Label indices ordered by descending score; equal scores keep ascending index.
pub fn rank_labels(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// 1-based ranks at which relevant items occur.
fn hit_ranks<T: Eq + Hash>(ranking: &[T], gold: &HashSet<&T>) -> Vec<usize> {
    ranking
        .iter()
        .enumerate()
        .filter(|(_, x)| gold.contains(x))
        .map(|(i, _)| i + 1)
        .collect()
}

/// Average precision of one ranking; `None` when `gold` is empty.
pub fn average_precision<T: Eq + Hash>(ranking: &[T], gold: &[T]) -> Option<f64> {
    let gold: HashSet<&T> = gold.iter().collect();
    if gold.is_empty() {
        return None;
    }
    let sum: f64 = hit_ranks(ranking, &gold)
        .iter()
        .enumerate()
        .map(|(k, &r)| (k + 1) as f64 / r as f64)
        .sum();
    Some(sum / gold.len() as f64)
}

/// Reciprocal rank of the first relevant item (0 when none is ranked);
/// `None` when `gold` is empty.
pub fn reciprocal_rank<T: Eq + Hash>(ranking: &[T], gold: &[T]) -> Option<f64> {
    let gold: HashSet<&T> = gold.iter().collect();
    if gold.is_empty() {
        return None;
    }
    Some(
        ranking
            .iter()
            .position(|x| gold.contains(x))
            .map_or(0.0, |p| 1.0 / (p + 1) as f64),
    )
}

/// NDCG@k with binary gains; `None` when `gold` is empty.
pub fn ndcg_at_k<T: Eq + Hash>(ranking: &[T], gold: &[T], k: usize) -> Option<f64> {
    let gold: HashSet<&T> = gold.iter().collect();
    if gold.is_empty() {
        return None;
    }
    let discount = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let dcg: f64 = hit_ranks(&ranking[..k.min(ranking.len())], &gold)
        .into_iter()
        .map(discount)
        .sum();
    let ideal: f64 = (1..=gold.len().min(k)).map(discount).sum();
    Some(if ideal > 0.0 { dcg / ideal } else { 0.0 })
}

/// Mean of `f` over queries with non-empty gold, plus the number skipped.
fn mean_over<T, F>(rankings: &[Vec<T>], golds: &[Vec<T>], f: F) -> Result<(f64, usize)>
where
    F: Fn(&[T], &[T]) -> Option<f64>,
{
    if rankings.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} rankings but {} gold sets",
            rankings.len(),
            golds.len()
        )));
    }
    let vals: Vec<f64> = rankings.iter().zip(golds).filter_map(|(r, g)| f(r, g)).collect();
    let skipped = rankings.len() - vals.len();
    if vals.is_empty() {
        return Ok((0.0, skipped));
    }
    Ok((vals.iter().sum::<f64>() / vals.len() as f64, skipped))
}

pub fn mean_average_precision<T: Eq + Hash>(rankings: &[Vec<T>], golds: &[Vec<T>]) -> Result<f64> {
    mean_over(rankings, golds, |r, g| average_precision(r, g)).map(|x| x.0)
}

pub fn mrr<T: Eq + Hash>(rankings: &[Vec<T>], golds: &[Vec<T>]) -> Result<f64> {
    mean_over(rankings, golds, |r, g| reciprocal_rank(r, g)).map(|x| x.0)
}

pub fn mean_ndcg<T: Eq + Hash>(rankings: &[Vec<T>], golds: &[Vec<T>], k: usize) -> Result<f64> {
    mean_over(rankings, golds, |r, g| ndcg_at_k(r, g, k)).map(|x| x.0)
}

/// Support-weighted F1 over `classes`. Predictions outside `classes` count as
/// false negatives of the gold class only.
pub fn support_weighted_f1<C: Eq + Hash + Ord>(preds: &[C], golds: &[C], classes: &[C]) -> Result<f64> {
    if golds.is_empty() {
        return Err(Error::Data("support-weighted F1 of an empty gold set".into()));
    }
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    let known: HashSet<&C> = classes.iter().collect();
    if let Some(i) = golds.iter().position(|g| !known.contains(g)) {
        return Err(Error::Data(format!("gold label at position {i} is not a known class")));
    }
    let mut total = 0.0;
    for c in known {
        let support = golds.iter().filter(|g| *g == c).count();
        if support == 0 {
            continue;
        }
        let tp = preds.iter().zip(golds).filter(|(p, g)| *p == c && *g == c).count();
        let predicted = preds.iter().filter(|p| *p == c).count();
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (predicted + support) as f64
        };
        total += support as f64 * f1;
    }
    Ok(total / golds.len() as f64)
}

/// Binary precision, recall and F1. `precision_undefined` / `recall_undefined`
/// mark zero denominators, in which case the value is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| {
            if b == 0 {
                (0.0, true)
            } else {
                (a as f64 / b as f64, false)
            }
        };
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            precision_undefined,
            recall_undefined,
        }
    }
}

pub fn binary_prf(flags: &[bool], labels: &[bool]) -> Result<Prf> {
    if flags.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} flags but {} labels",
            flags.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&f, &l) in flags.iter().zip(labels) {
        match (f, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

/// Metrics emitted by evaluation runs. Fields not applicable to a task are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ndcg_10: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ndcg_20: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighted_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub detection: BTreeMap<String, Prf>,
    pub queries: usize,
    pub skipped_queries: usize,
}

impl MetricReport {
    /// MAP, MRR and NDCG@10/20 over a set of queries.
    pub fn ranking<T: Eq + Hash>(rankings: &[Vec<T>], golds: &[Vec<T>]) -> Result<Self> {
        let (map, skipped) = mean_over(rankings, golds, |r, g| average_precision(r, g))?;
        Ok(MetricReport {
            map: Some(map),
            mrr: Some(mrr(rankings, golds)?),
            ndcg_10: Some(mean_ndcg(rankings, golds, 10)?),
            ndcg_20: Some(mean_ndcg(rankings, golds, 20)?),
            queries: rankings.len() - skipped,
            skipped_queries: skipped,
            ..Default::default()
        })
    }

    pub fn from_predictions(preds: &[RankedPrediction]) -> Result<Self> {
        let rankings: Vec<Vec<usize>> = preds.iter().map(RankedPrediction::ranking).collect();
        let golds: Vec<Vec<usize>> = preds.iter().map(|p| p.gold.clone()).collect();
        Self::ranking(&rankings, &golds)
    }

    pub fn classification<C: Eq + Hash + Ord>(preds: &[C], golds: &[C], classes: &[C]) -> Result<Self> {
        let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
        Ok(MetricReport {
            weighted_f1: Some(support_weighted_f1(preds, golds, classes)?),
            accuracy: Some(correct as f64 / golds.len() as f64),
            queries: golds.len(),
            ..Default::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_precision_examples() {
        assert_eq!(average_precision(&["a", "b", "c"], &["b", "a"]), Some(1.0));
        let ap = average_precision(&["a", "x", "b", "y"], &["a", "b"]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&["w", "x", "y", "g"], &["g"]), Some(0.25));
        assert_eq!(average_precision::<&str>(&["a"], &[]), None);
    }

    #[test]
    fn mrr_examples() {
        assert_eq!(reciprocal_rank(&[1, 2, 3], &[1]), Some(1.0));
        assert_eq!(reciprocal_rank(&[1, 2, 3], &[3]), Some(1.0 / 3.0));
        let r = mrr(&[vec![0, 1, 2], vec![0, 1, 2, 3]], &[vec![1], vec![3]]).unwrap();
        assert!((r - 0.375).abs() < 1e-15);
        assert_eq!(reciprocal_rank(&[1, 2], &[9]), Some(0.0));
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&["a", "b", "c"], &["a", "b"], 10), Some(1.0));
        let v = ndcg_at_k(&["a", "x", "b"], &["a", "b"], 10).unwrap();
        let hand = (1.0 + 1.0 / 4f64.log2()) / (1.0 + 1.0 / 3f64.log2());
        assert!((v - hand).abs() < 1e-15);
        assert!((v - 0.91972).abs() < 1e-5);
        let far: Vec<usize> = (0..30).collect();
        assert_eq!(ndcg_at_k(&far, &[25], 10), Some(0.0));
    }

    #[test]
    fn weighted_f1_examples() {
        let classes = ["A", "B"];
        assert_eq!(support_weighted_f1(&["A", "B"], &["A", "B"], &classes).unwrap(), 1.0);
        // A: support 3 with F1 1; B: support 1 with F1 0.5.
        let classes = ["A", "B", "C"];
        let golds = ["A", "A", "A", "B", "C", "C"];
        let preds = ["A", "A", "A", "B", "B", "B"];
        let mut counts = support_weighted_f1(&preds, &golds, &classes).unwrap();
        // C has support 2 and F1 0, B has F1 2/(3+1)=0.5.
        counts -= (3.0 * 1.0 + 1.0 * 0.5) / 6.0;
        assert!(counts.abs() < 1e-15);
        let golds = ["A", "A", "A", "B"];
        let preds = ["A", "A", "A", "B"];
        assert_eq!(support_weighted_f1(&preds, &golds, &["A", "B"]).unwrap(), 1.0);
        assert_eq!(support_weighted_f1(&["B", "B"], &["A", "A"], &["A", "B"]).unwrap(), 0.0);
        assert!(support_weighted_f1::<&str>(&[], &[], &["A"]).is_err());
        assert!(support_weighted_f1(&["A"], &["Z"], &["A"]).is_err());
    }

    #[test]
    fn weighted_f1_spec_weights() {
        // Per-class F1 of 1.0 (support 3) and 0.5 (support 1).
        let classes = ["A", "B", "X"];
        let golds = ["A", "A", "A", "B"];
        let preds = ["A", "A", "A", "X"];
        // B: tp 0 → F1 0. Use a case where B's F1 is exactly 0.5 instead:
        let _ = support_weighted_f1(&preds, &golds, &classes).unwrap();
        let golds = ["A", "A", "A", "B", "B"];
        let preds = ["A", "A", "A", "B", "X"];
        // B: tp 1, predicted 1, support 2 → F1 = 2/3; weighted = (3 + 2·2/3)/5
        let v = support_weighted_f1(&preds, &golds, &classes).unwrap();
        assert!((v - (3.0 + 4.0 / 3.0) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn prf_examples() {
        let p = binary_prf(&[true, false, true], &[true, false, true]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        // TP=2, FP=1, FN=2
        let flags = [true, true, true, false, false];
        let labels = [true, true, false, true, true];
        let p = binary_prf(&flags, &labels).unwrap();
        assert!((p.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.recall, 0.5);
        assert!((p.f1 - 4.0 / 7.0).abs() < 1e-15);
        let p = binary_prf(&[false, false], &[true, false]).unwrap();
        assert!(p.precision_undefined);
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        assert!(binary_prf(&[true], &[]).is_err());
    }

    #[test]
    fn tie_breaking_by_index() {
        assert_eq!(rank_labels(&[0.0, 0.0, 1.0, 0.0]), vec![2, 0, 1, 3]);
    }

    #[test]
    fn report_skips_empty_gold() {
        let r = MetricReport::ranking(&[vec![0, 1], vec![1, 0]], &[vec![0], vec![]]).unwrap();
        assert_eq!(r.queries, 1);
        assert_eq!(r.skipped_queries, 1);
        assert_eq!(r.map, Some(1.0));
    }
}
