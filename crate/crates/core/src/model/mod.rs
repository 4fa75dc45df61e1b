//! The validation twin: one classifier module per rule.
//!
//! A twin packages an encoder, a shared architecture and per-rule modules.
//! Pretraining fits the twin to a source service version; after the service
//! evolves, [`fine_tune`] transfers it to the new version, warm-starting the
//! modules whose rules survived and training fresh modules for new rules.

pub mod adam;
pub mod artifact;
pub mod gradcheck;
pub mod layers;
pub mod module;
pub mod train;

use std::collections::BTreeMap;

use ndarray::s;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use artifact::{load_twin, save_twin};
pub use gradcheck::{gradient_check, gradient_check_robust, GradCheckReport};
pub use module::{init_module, ModuleArch, ModuleParams};
pub use train::{train, EarlyStopping, TrainingConfig};

use crate::dataset::LabelledDataset;
use crate::encoding::{encode_matrix, EncoderConfig};
use crate::error::{Error, Result};
use crate::rules::{ResultCode, RuleDiff};
use crate::schema::Message;
use crate::seed::derive_seed;

/// Rows per forward pass during batched prediction.
const PREDICT_BATCH: usize = 512;

/// One rule's classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinModule {
    pub rule_id: String,
    pub params: ModuleParams<f32>,
}

/// Provenance kept alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TwinMeta {
    pub init_seed: u64,
    pub training_seed: u64,
    /// Number of labelled messages in the most recent training run.
    pub trained_on: usize,
    /// Epochs actually run per rule (early stopping may cut them short).
    pub epochs: BTreeMap<String, usize>,
    /// Mean training loss per epoch per rule.
    pub loss_curves: BTreeMap<String, Vec<f64>>,
}

/// A learned surrogate of one service version.
#[derive(Debug, Clone, PartialEq)]
pub struct Twin {
    /// Service version this twin mimics.
    pub version: String,
    pub encoder: EncoderConfig,
    pub arch: ModuleArch,
    /// Modules in the service's rule order.
    pub modules: Vec<TwinModule>,
    pub meta: TwinMeta,
}

impl Twin {
    pub fn rule_ids(&self) -> Vec<String> {
        self.modules.iter().map(|m| m.rule_id.clone()).collect()
    }

    pub fn module(&self, rule_id: &str) -> Option<&TwinModule> {
        self.modules.iter().find(|m| m.rule_id == rule_id)
    }
}

/// Create an untrained twin with freshly initialized modules, one per rule.
/// Each module's weights are drawn from a stream keyed by its rule id.
pub fn new_twin(
    version: impl Into<String>,
    encoder: EncoderConfig,
    arch: ModuleArch,
    rule_ids: &[String],
    seed: u64,
) -> Result<Twin> {
    arch.check(encoder.branch1_len, encoder.branch2_len)?;
    if rule_ids.is_empty() {
        return Err(Error::Model("a twin needs at least one rule".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for id in rule_ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Model(format!("duplicate rule id {id:?}")));
        }
    }
    let modules = rule_ids
        .iter()
        .map(|id| {
            Ok(TwinModule {
                rule_id: id.clone(),
                params: init_module(
                    &arch,
                    encoder.branch1_len,
                    encoder.branch2_len,
                    derive_seed(seed, &format!("init/{id}")),
                )?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Twin {
        version: version.into(),
        encoder,
        arch,
        modules,
        meta: TwinMeta {
            init_seed: seed,
            ..TwinMeta::default()
        },
    })
}

/// Per-message, per-rule probability vectors over the four result codes.
/// `predictions[i][j]` corresponds to message `i` and `twin.modules[j]`.
pub fn predict(twin: &Twin, messages: &[Message]) -> Result<Vec<Vec<[f64; 4]>>> {
    if messages.is_empty() {
        return Ok(Vec::new());
    }
    let (b1, b2) = encode_matrix(&twin.encoder, messages)?;
    let n = messages.len();

    // One probability matrix per module, computed independently.
    let per_module: Vec<Vec<[f64; 4]>> = twin
        .modules
        .par_iter()
        .map(|m| {
            let mut rows: Vec<[f64; 4]> = Vec::with_capacity(n);
            let mut start = 0usize;
            while start < n {
                let end = (start + PREDICT_BATCH).min(n);
                let probs = m.params.predict_proba(
                    b1.slice(s![start..end, ..]),
                    b2.slice(s![start..end, ..]),
                );
                for row in probs.rows() {
                    rows.push([row[0], row[1], row[2], row[3]]);
                }
                start = end;
            }
            rows
        })
        .collect();

    // Transpose to message-major.
    let mut out = vec![Vec::with_capacity(twin.modules.len()); n];
    for rows in &per_module {
        for (i, pv) in rows.iter().enumerate() {
            out[i].push(*pv);
        }
    }
    Ok(out)
}

/// The code a probability vector predicts: the argmax, with ties broken
/// towards the lowest code index.
pub fn predicted_code(pv: &[f64; 4]) -> ResultCode {
    let mut best = 0usize;
    for j in 1..4 {
        if pv[j] > pv[best] {
            best = j;
        }
    }
    ResultCode::from_index(best).expect("index in range")
}

/// Transfer a source-version twin to a new service version.
///
/// The target rule set is taken from `data.rule_ids` (the evolution corpus is
/// labelled by the target service). Modules for rules the diff lists as
/// retained start from the source twin's parameters; modules for added or
/// modified rules start from scratch. All modules are then trained on `data`.
pub fn fine_tune(
    source: &Twin,
    target_version: impl Into<String>,
    diff: &RuleDiff,
    data: &LabelledDataset,
    cfg: &TrainingConfig,
) -> Result<Twin> {
    cfg.check()?;
    data.check()?;
    let mut modules = Vec::with_capacity(data.rule_ids.len());
    for id in &data.rule_ids {
        if diff.removed.iter().any(|r| r == id) {
            return Err(Error::Model(format!(
                "rule {id:?} is labelled in the evolution data but removed by the diff"
            )));
        }
        let params = if diff.retained.iter().any(|r| r == id) {
            source
                .module(id)
                .ok_or_else(|| {
                    Error::Model(format!("retained rule {id:?} missing from the source twin"))
                })?
                .params
                .clone()
        } else if diff.added.iter().any(|r| r == id) || diff.modified.iter().any(|r| r == id) {
            init_module(
                &source.arch,
                source.encoder.branch1_len,
                source.encoder.branch2_len,
                derive_seed(cfg.seed, &format!("init/{id}")),
            )?
        } else {
            return Err(Error::Model(format!(
                "rule {id:?} is not covered by the version diff"
            )));
        };
        modules.push(TwinModule { rule_id: id.clone(), params });
    }
    let base = Twin {
        version: target_version.into(),
        encoder: source.encoder.clone(),
        arch: source.arch,
        modules,
        meta: TwinMeta {
            init_seed: cfg.seed,
            ..TwinMeta::default()
        },
    };
    train(&base, data, cfg)
}
