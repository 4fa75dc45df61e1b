//! Classification metrics over (message, rule) prediction pairs.
//!
//! Every pair is a four-way classification into the result codes, so the
//! counts are one-vs-rest per code: a pair predicted `p` with truth `t`
//! contributes a true positive to `p` when `p == t`, otherwise a false
//! positive to `p` and a false negative to `t`. True negatives never enter
//! the reported metrics and are not tracked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::ResultCode;

/// Which slice of the rule set a report covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricScope {
    /// Every rule of the target version.
    All,
    /// Rules carried over unchanged from the source version.
    BaseRules,
    /// A single rule, typically one added by the evolution.
    Rule(String),
}

/// One-vs-rest counts per result code, indexed by [`ResultCode::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positive: [u64; 4],
    pub false_positive: [u64; 4],
    pub false_negative: [u64; 4],
    /// Total number of (message, rule) pairs counted.
    pub pairs: u64,
}

impl ConfusionCounts {
    /// Tally predictions against ground truth. Inputs are aligned flat
    /// sequences of codes; shape handling is the caller's concern.
    pub fn tally(pred: &[ResultCode], truth: &[ResultCode]) -> Result<ConfusionCounts> {
        if pred.len() != truth.len() {
            return Err(Error::Stats(format!(
                "prediction/truth length mismatch: {} vs {}",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &t) in pred.iter().zip(truth) {
            if p == t {
                c.true_positive[p.index()] += 1;
            } else {
                c.false_positive[p.index()] += 1;
                c.false_negative[t.index()] += 1;
            }
        }
        c.pairs = pred.len() as u64;
        Ok(c)
    }

    /// Merge counts from another batch of pairs.
    pub fn absorb(&mut self, other: &ConfusionCounts) {
        for k in 0..4 {
            self.true_positive[k] += other.true_positive[k];
            self.false_positive[k] += other.false_positive[k];
            self.false_negative[k] += other.false_negative[k];
        }
        self.pairs += other.pairs;
    }

    pub fn correct(&self) -> u64 {
        self.true_positive.iter().sum()
    }
}

/// `TP / (TP + FP)`; 0 when the code was never predicted.
pub fn precision(c: &ConfusionCounts, code: ResultCode) -> f64 {
    let k = code.index();
    ratio(c.true_positive[k], c.true_positive[k] + c.false_positive[k])
}

/// `TP / (TP + FN)`; 0 when the code never occurs in the truth.
pub fn recall(c: &ConfusionCounts, code: ResultCode) -> f64 {
    let k = code.index();
    ratio(c.true_positive[k], c.true_positive[k] + c.false_negative[k])
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(c: &ConfusionCounts, code: ResultCode) -> f64 {
    let p = precision(c, code);
    let r = recall(c, code);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics for one result code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeMetrics {
    pub code: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-code and averaged precision/recall/F1 for one scope.
///
/// Macro values average the four per-code numbers with equal weight; micro
/// values pool the counts first. Since every pair lands on exactly one code,
/// the pooled false-positive and false-negative totals coincide and the
/// micro precision, recall and F1 all equal plain accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scope: MetricScope,
    pub pairs: u64,
    pub per_code: Vec<CodeMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
}

impl MetricsReport {
    pub fn from_counts(counts: &ConfusionCounts, scope: MetricScope) -> MetricsReport {
        let per_code: Vec<CodeMetrics> = ResultCode::ALL
            .iter()
            .map(|&code| CodeMetrics {
                code: code.label().to_string(),
                precision: precision(counts, code),
                recall: recall(counts, code),
                f1: f1(counts, code),
            })
            .collect();
        let mean = |f: fn(&CodeMetrics) -> f64| per_code.iter().map(f).sum::<f64>() / 4.0;

        let tp: u64 = counts.true_positive.iter().sum();
        let fp: u64 = counts.false_positive.iter().sum();
        let fneg: u64 = counts.false_negative.iter().sum();
        let micro_precision = ratio(tp, tp + fp);
        let micro_recall = ratio(tp, tp + fneg);
        let micro_f1 = if micro_precision + micro_recall == 0.0 {
            0.0
        } else {
            2.0 * micro_precision * micro_recall / (micro_precision + micro_recall)
        };

        MetricsReport {
            scope,
            pairs: counts.pairs,
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            micro_precision,
            micro_recall,
            micro_f1,
            per_code,
        }
    }

    /// Tally and report in one step over aligned per-message code rows.
    pub fn evaluate(
        pred: &[Vec<ResultCode>],
        truth: &[Vec<ResultCode>],
        scope: MetricScope,
    ) -> Result<MetricsReport> {
        if pred.len() != truth.len() {
            return Err(Error::Stats(format!(
                "prediction/truth row mismatch: {} vs {}",
                pred.len(),
                truth.len()
            )));
        }
        let mut counts = ConfusionCounts::default();
        for (p_row, t_row) in pred.iter().zip(truth) {
            counts.absorb(&ConfusionCounts::tally(p_row, t_row)?);
        }
        Ok(MetricsReport::from_counts(&counts, scope))
    }
}
