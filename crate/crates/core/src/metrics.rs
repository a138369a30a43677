//! Evaluation metrics for triple classification, entity typing and language
//! modelling.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

pub fn accuracy(predicted: &[bool], gold: &[bool]) -> f64 {
    assert_eq!(predicted.len(), gold.len());
    if gold.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    hits as f64 / gold.len() as f64
}

/// Precision/recall/F1 of the positive class. An empty predicted-positive
/// set has precision 0.
pub fn precision_recall_f1(predicted: &[bool], gold: &[bool]) -> Prf {
    assert_eq!(predicted.len(), gold.len());
    let tp = predicted.iter().zip(gold).filter(|&(&p, &g)| p && g).count() as f64;
    let pp = predicted.iter().filter(|&&p| p).count() as f64;
    let ap = gold.iter().filter(|&&g| g).count() as f64;
    let precision = if pp > 0.0 { tp / pp } else { 0.0 };
    let recall = if ap > 0.0 { tp / ap } else { 0.0 };
    Prf::new(precision, recall)
}

/// Indices sorted by descending score.
fn order_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Area under the ROC curve as the Mann-Whitney rank statistic, with tied
/// scores sharing their average rank. `None` unless both classes occur.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; the group [i, j] shares the mean rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the precision-recall curve by step integration (average
/// precision): each distinct score threshold contributes
/// `(R_k - R_{k-1}) * P_k`. `None` without positives.
pub fn aucpr(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return None;
    }
    let idx = order_desc(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(area)
}

/// Per-instance set precision. An empty prediction is precise only when the
/// gold set is empty too.
fn set_precision(pred: &[usize], gold: &[usize], inter: usize) -> f64 {
    if pred.is_empty() {
        if gold.is_empty() { 1.0 } else { 0.0 }
    } else {
        inter as f64 / pred.len() as f64
    }
}

fn set_recall(pred: &[usize], gold: &[usize], inter: usize) -> f64 {
    if gold.is_empty() {
        if pred.is_empty() { 1.0 } else { 0.0 }
    } else {
        inter as f64 / gold.len() as f64
    }
}

fn normalise(set: &[usize]) -> Vec<usize> {
    let mut v = set.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypingScores {
    pub strict: Prf,
    pub loose_macro: Prf,
    pub loose_micro: Prf,
}

/// Strict, loose-macro and loose-micro scores for multi-label typing.
pub fn typing_scores<P, G>(predicted: &[P], gold: &[G]) -> Result<TypingScores>
where
    P: AsRef<[usize]>,
    G: AsRef<[usize]>,
{
    if predicted.len() != gold.len() {
        return Err(Error::Data("prediction and gold counts differ".into()));
    }
    if gold.is_empty() {
        return Err(Error::Data("cannot score an empty typing corpus".into()));
    }
    let n = gold.len() as f64;
    let (mut exact, mut p_sum, mut r_sum) = (0usize, 0.0, 0.0);
    let (mut inter_total, mut pred_total, mut gold_total) = (0usize, 0usize, 0usize);
    for (p, g) in predicted.iter().zip(gold) {
        let (p, g) = (normalise(p.as_ref()), normalise(g.as_ref()));
        let inter = p.iter().filter(|t| g.binary_search(t).is_ok()).count();
        if p == g {
            exact += 1;
        }
        p_sum += set_precision(&p, &g, inter);
        r_sum += set_recall(&p, &g, inter);
        inter_total += inter;
        pred_total += p.len();
        gold_total += g.len();
    }
    let strict = exact as f64 / n;
    let micro_p = if pred_total == 0 {
        if gold_total == 0 { 1.0 } else { 0.0 }
    } else {
        inter_total as f64 / pred_total as f64
    };
    let micro_r = if gold_total == 0 {
        if pred_total == 0 { 1.0 } else { 0.0 }
    } else {
        inter_total as f64 / gold_total as f64
    };
    Ok(TypingScores {
        strict: Prf::new(strict, strict),
        loose_macro: Prf::new(p_sum / n, r_sum / n),
        loose_micro: Prf::new(micro_p, micro_r),
    })
}

/// `exp(total_nll / tokens)`.
pub fn perplexity_from_nll(total_nll: f64, tokens: usize) -> Result<f64> {
    if tokens == 0 {
        return Err(Error::Data("perplexity over zero tokens".into()));
    }
    Ok(libm::exp(total_nll / tokens as f64))
}

/// Task-tagged metric map. A metric that is undefined for the data (AUROC
/// on a single-class set) is stored as `None` rather than dropped or zeroed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub task: String,
    pub metrics: BTreeMap<String, Option<f64>>,
}

pub const BOUNDED_METRICS: [&str; 14] = [
    "accuracy",
    "auroc",
    "aucpr",
    "precision",
    "recall",
    "f1",
    "strict_f1",
    "loose_macro_precision",
    "loose_macro_recall",
    "loose_macro_f1",
    "loose_micro_precision",
    "loose_micro_recall",
    "loose_micro_f1",
    "strict_precision",
];

impl EvalReport {
    pub fn new(task: &str) -> Self {
        EvalReport {
            task: task.to_string(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, name: &str, value: Option<f64>) -> &mut Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied().flatten()
    }

    /// Bounded metrics lie in [0, 1]; perplexity is at least 1.
    pub fn check_ranges(&self) -> Result<()> {
        for (k, v) in &self.metrics {
            let Some(v) = *v else { continue };
            let ok = if k == "perplexity" {
                v >= 1.0 - 1e-9
            } else if BOUNDED_METRICS.contains(&k.as_str()) {
                (-1e-12..=1.0 + 1e-12).contains(&v)
            } else {
                true
            };
            if !ok || v.is_nan() {
                return Err(Error::Data(alloc::format!("metric {k} out of range: {v}")));
            }
        }
        Ok(())
    }

    pub fn add_typing(&mut self, s: &TypingScores) -> &mut Self {
        self.set("strict_f1", Some(s.strict.f1))
            .set("loose_macro_precision", Some(s.loose_macro.precision))
            .set("loose_macro_recall", Some(s.loose_macro.recall))
            .set("loose_macro_f1", Some(s.loose_macro.f1))
            .set("loose_micro_precision", Some(s.loose_micro.precision))
            .set("loose_micro_recall", Some(s.loose_micro.recall))
            .set("loose_micro_f1", Some(s.loose_micro.f1))
    }
}
