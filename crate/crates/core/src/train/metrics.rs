use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spearman: Option<f64>,
    /// Protein → text recall.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub recall_at_k: BTreeMap<usize, f64>,
    /// Text → protein recall.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub text_recall_at_k: BTreeMap<usize, f64>,
    /// Fraction of greedy generations equal to the reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_task: BTreeMap<String, MetricReport>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("accuracy", self.accuracy),
            ("macro_f1", self.macro_f1),
            ("exact_match", self.exact_match),
        ];
        for (name, v) in unit {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Invariant(format!("{name} {v} outside [0, 1]")));
                }
            }
        }
        for (k, v) in self.recall_at_k.iter().chain(&self.text_recall_at_k) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Invariant(format!("recall@{k} {v} outside [0, 1]")));
            }
        }
        if let Some(r) = self.spearman {
            if !(-1.0..=1.0).contains(&r) {
                return Err(Error::Invariant(format!("spearman {r} outside [-1, 1]")));
            }
        }
        self.per_task.values().try_for_each(MetricReport::validate)
    }
}

/// Recall@k for a square score matrix whose row `i` scores candidates for
/// query `i` and whose diagonal holds the true matches. The rank of the true
/// candidate counts every candidate scoring at least as high, so ties are
/// resolved against the model.
pub fn recall_at_k(scores: &Tensor, ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let n = scores.rows();
    if scores.shape().len() != 2 || scores.cols() != n || n < 2 {
        return Err(Error::Invalid(format!(
            "recall needs a square matrix with >= 2 rows, got {:?}",
            scores.shape()
        )));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::Invalid(format!("recall@{k} is undefined")));
    }
    let ranks: Vec<usize> = (0..n)
        .map(|i| {
            let row = scores.row(i);
            row.iter().filter(|&&s| s >= row[i] || s.is_nan()).count()
        })
        .collect();
    Ok(ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64))
        .collect())
}

pub fn transpose(m: &Tensor) -> Tensor {
    let (r, c) = (m.rows(), m.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = m.values()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).expect("shape matches")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and macro F1. Per-class F1 is `2tp / (2tp + fp + fn)` over the
/// classes that occur in either `preds` or `golds`.
pub fn eval_classification(preds: &[usize], golds: &[usize]) -> Result<ClassificationMetrics> {
    if preds.len() != golds.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Invalid("classification metrics need at least one item".into()));
    }
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    let classes: BTreeSet<usize> = preds.iter().chain(golds).copied().collect();
    let f1_sum: f64 = classes
        .iter()
        .map(|&c| {
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (&p, &g) in preds.iter().zip(golds) {
                match (p == c, g == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
        })
        .sum();
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / preds.len() as f64,
        macro_f1: f1_sum / classes.len() as f64,
    })
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn eval_spearman(preds: &[f64], golds: &[f64]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} targets",
            preds.len(),
            golds.len()
        )));
    }
    if preds.len() < 2 {
        return Err(Error::Invalid("spearman needs at least two items".into()));
    }
    if preds.iter().chain(golds).any(|x| !x.is_finite()) {
        return Err(Error::Numeric {
            op: "spearman",
            detail: "non-finite input".into(),
        });
    }
    let (a, b) = (average_ranks(preds), average_ranks(golds));
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Numeric {
            op: "spearman",
            detail: "zero rank variance".into(),
        });
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}
