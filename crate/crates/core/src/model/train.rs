//! Training of per-rule modules.
//!
//! Each module is trained independently on the same labelled corpus with
//! minibatch Adam and softmax cross-entropy; an optional early-stopping split
//! holds out a validation fraction, stops after `patience` epochs without
//! improvement, and returns the parameters of the best validation epoch (the
//! starting parameters count as epoch zero, so warm-started modules that the
//! data cannot improve come back unchanged). Module training order and
//! per-module RNG streams are derived from the rule id, so results do not
//! depend on scheduling and modules may be trained in parallel.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelledDataset;
use crate::encoding::encode_matrix;
use crate::error::{Error, Result};
use crate::model::adam::Adam;
use crate::model::layers::softmax_cross_entropy;
use crate::model::module::ModuleParams;
use crate::model::Twin;
use crate::seed::{derive_seed, stage_rng};

/// Early-stopping policy: hold out the last `validation_fraction` of the
/// (shuffled) data, stop when the validation loss has not improved for
/// `patience` consecutive epochs, and keep the best-validation parameters
/// seen (including the untrained starting point).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub validation_fraction: f64,
    pub patience: usize,
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.001,
            seed: 0,
            early_stopping: Some(EarlyStopping {
                validation_fraction: 0.1,
                patience: 5,
            }),
        }
    }
}

impl TrainingConfig {
    pub fn check(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let Some(es) = &self.early_stopping {
            if !(0.0 < es.validation_fraction && es.validation_fraction < 1.0) {
                return Err(Error::Config(
                    "validation_fraction must lie strictly between 0 and 1".into(),
                ));
            }
            if es.patience == 0 {
                return Err(Error::Config("patience must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Per-module training outcome.
pub struct ModuleFit {
    pub params: ModuleParams<f32>,
    /// Mean training loss per completed epoch.
    pub loss_curve: Vec<f64>,
    pub epochs_run: usize,
}

/// Train every module of `twin` on `data`, returning a new twin. Modules not
/// labelled in `data` are an error; extra labelled rules are ignored.
pub fn train(twin: &Twin, data: &LabelledDataset, cfg: &TrainingConfig) -> Result<Twin> {
    cfg.check()?;
    data.check()?;
    if data.is_empty() {
        return Err(Error::Model("cannot train on an empty dataset".into()));
    }
    let (b1, b2) = encode_matrix(&twin.encoder, &data.dataset.messages)?;

    let column_of = |rule_id: &str| -> Result<usize> {
        data.rule_ids
            .iter()
            .position(|id| id == rule_id)
            .ok_or_else(|| Error::Model(format!("dataset has no labels for rule {rule_id:?}")))
    };
    let jobs: Vec<(usize, usize)> = twin
        .modules
        .iter()
        .enumerate()
        .map(|(i, m)| Ok((i, column_of(&m.rule_id)?)))
        .collect::<Result<_>>()?;

    let fits: Vec<ModuleFit> = jobs
        .par_iter()
        .map(|&(module_index, column)| {
            let module = &twin.modules[module_index];
            let targets: Vec<usize> = data.labels.iter().map(|row| row[column].index()).collect();
            fit_module(
                &module.params,
                &b1,
                &b2,
                &targets,
                cfg,
                derive_seed(cfg.seed, &format!("train/{}", module.rule_id)),
            )
        })
        .collect();

    let mut out = twin.clone();
    out.meta.training_seed = cfg.seed;
    out.meta.trained_on = data.len();
    for (fit, module) in fits.into_iter().zip(&mut out.modules) {
        module.params = fit.params;
        out.meta.epochs.insert(module.rule_id.clone(), fit.epochs_run);
        out.meta
            .loss_curves
            .insert(module.rule_id.clone(), fit.loss_curve);
    }
    Ok(out)
}

/// Train one module on pre-encoded features. `seed` drives the shuffle
/// stream (and nothing else).
pub fn fit_module(
    init: &ModuleParams<f32>,
    b1: &Array2<f32>,
    b2: &Array2<f32>,
    targets: &[usize],
    cfg: &TrainingConfig,
    seed: u64,
) -> ModuleFit {
    let n = targets.len();
    let mut rng = stage_rng(seed, "shuffle");

    // Hold out the tail of one initial shuffle for validation.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = match &cfg.early_stopping {
        Some(es) => {
            let val_n = ((n as f64) * es.validation_fraction).round() as usize;
            // Keep at least one example on each side or give up on a split.
            if val_n == 0 || val_n >= n {
                (order.clone(), Vec::new())
            } else {
                let split = n - val_n;
                (order[..split].to_vec(), order[split..].to_vec())
            }
        }
        None => (order.clone(), Vec::new()),
    };

    let mut params = init.clone();
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    // The starting parameters are the baseline any epoch has to beat.
    let mut best_val = if val_idx.is_empty() {
        f64::INFINITY
    } else {
        evaluate_loss(&params, b1, b2, targets, &val_idx)
    };
    let mut best_params: Option<ModuleParams<f32>> = None;
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;

    let mut train_order = train_idx;
    for _epoch in 0..cfg.epochs {
        train_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        for chunk in train_order.chunks(cfg.batch_size) {
            let (x1, x2, t) = gather(b1, b2, targets, chunk);
            let (logits, cache) = params.forward(x1.view(), x2.view());
            let (loss, grad_logits) = softmax_cross_entropy(logits.view(), &t);
            let grads = params.backward(&cache, grad_logits.view());
            adam.step(&mut params, &grads);
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        loss_curve.push(epoch_loss / seen.max(1) as f64);
        epochs_run += 1;

        if let Some(es) = &cfg.early_stopping {
            if !val_idx.is_empty() {
                let val_loss = evaluate_loss(&params, b1, b2, targets, &val_idx);
                if val_loss < best_val - 1e-12 {
                    best_val = val_loss;
                    best_params = Some(params.clone());
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= es.patience {
                        break;
                    }
                }
            }
        }
    }

    // With a validation split, return the best epoch; if no epoch beat the
    // starting point, return the start itself.
    if !val_idx.is_empty() {
        params = best_params.unwrap_or_else(|| init.clone());
    }

    ModuleFit {
        params,
        loss_curve,
        epochs_run,
    }
}

fn gather(
    b1: &Array2<f32>,
    b2: &Array2<f32>,
    targets: &[usize],
    indices: &[usize],
) -> (Array2<f32>, Array2<f32>, Vec<usize>) {
    let x1 = b1.select(Axis(0), indices);
    let x2 = b2.select(Axis(0), indices);
    let t = indices.iter().map(|&i| targets[i]).collect();
    (x1, x2, t)
}

fn evaluate_loss(
    params: &ModuleParams<f32>,
    b1: &Array2<f32>,
    b2: &Array2<f32>,
    targets: &[usize],
    indices: &[usize],
) -> f64 {
    let (x1, x2, t) = gather(b1, b2, targets, indices);
    let (logits, _) = params.forward(x1.view(), x2.view());
    softmax_cross_entropy(logits.view(), &t).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_messages, label_dataset, GenerateConfig};
    use crate::encoding::fit_encoder;
    use crate::model::module::ModuleArch;
    use crate::model::new_twin;
    use crate::rules::generate::{generate_ruleset, RuleGenSpec};
    use crate::schema::default_schema;

    fn training_setup(
        rules: usize,
        messages: usize,
    ) -> (crate::rules::RuleSet, LabelledDataset, Twin) {
        let schema = default_schema();
        let ruleset =
            generate_ruleset(&schema, &RuleGenSpec::new(rules, [0.5, 0.3, 0.2], "v1", 7)).unwrap();
        let data = generate_messages(
            &schema,
            Some(&ruleset),
            &GenerateConfig { count: messages, violation_rate: 0.3, seed: 21 },
        )
        .unwrap();
        let labelled = label_dataset(&data, &ruleset).unwrap();
        let encoder = fit_encoder(&schema, 8).unwrap();
        let twin = new_twin("v1", encoder, ModuleArch::tiny(), &ruleset.rule_ids(), 3).unwrap();
        (ruleset, labelled, twin)
    }

    #[test]
    fn training_is_deterministic() {
        let (_, labelled, twin) = training_setup(3, 60);
        let cfg = TrainingConfig {
            epochs: 3,
            early_stopping: None,
            seed: 5,
            ..TrainingConfig::default()
        };
        let a = train(&twin, &labelled, &cfg).unwrap();
        let b = train(&twin, &labelled, &cfg).unwrap();
        assert_eq!(a.modules, b.modules);
        assert_eq!(a.meta.loss_curves, b.meta.loss_curves);
    }

    #[test]
    fn loss_decreases_on_most_modules() {
        let (_, labelled, twin) = training_setup(30, 200);
        let cfg = TrainingConfig {
            epochs: 10,
            early_stopping: None,
            seed: 9,
            ..TrainingConfig::default()
        };
        let trained = train(&twin, &labelled, &cfg).unwrap();
        let mut improved = 0usize;
        let mut total = 0usize;
        for (_, curve) in trained.meta.loss_curves.iter() {
            total += 1;
            assert_eq!(curve.len(), 10);
            // Strict decrease over the first three epochs.
            if curve[0] > curve[1] && curve[1] > curve[2] {
                improved += 1;
            }
        }
        assert!(
            improved * 10 >= total * 9,
            "only {improved}/{total} modules improved monotonically"
        );
    }

    #[test]
    fn early_stopping_caps_epochs() {
        let (_, labelled, twin) = training_setup(2, 80);
        let cfg = TrainingConfig {
            epochs: 40,
            early_stopping: Some(EarlyStopping { validation_fraction: 0.2, patience: 2 }),
            seed: 2,
            ..TrainingConfig::default()
        };
        let trained = train(&twin, &labelled, &cfg).unwrap();
        for (rule, epochs) in trained.meta.epochs.iter() {
            assert!(*epochs <= 40, "{rule} ran {epochs}");
            assert_eq!(trained.meta.loss_curves[rule].len(), *epochs);
        }
    }

    #[test]
    fn missing_rule_labels_are_an_error() {
        let (_, labelled, twin) = training_setup(3, 30);
        let mut data = labelled;
        data.rule_ids.pop();
        for row in &mut data.labels {
            row.pop();
        }
        let cfg = TrainingConfig { epochs: 1, ..TrainingConfig::default() };
        assert!(train(&twin, &data, &cfg).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(TrainingConfig { epochs: 0, ..TrainingConfig::default() }.check().is_err());
        assert!(TrainingConfig { batch_size: 0, ..TrainingConfig::default() }.check().is_err());
        assert!(
            TrainingConfig { learning_rate: 0.0, ..TrainingConfig::default() }.check().is_err()
        );
        assert!(TrainingConfig {
            early_stopping: Some(EarlyStopping { validation_fraction: 1.5, patience: 1 }),
            ..TrainingConfig::default()
        }
        .check()
        .is_err());
    }
}
