//! Repeatable comparison experiments.
//!
//! Three studies cover the questions the pipeline exists to answer: whether
//! evolving a twin by active selection beats training from scratch or using
//! the stale source twin (rq1), what the active selection itself contributes
//! over random selection at the same query budget (rq2), and how the
//! candidate pool size moves the outcome (rq3). Every study runs a number of
//! seeded repeats per preset and reports per-repeat metrics, medians, and
//! rank-based comparisons; no wall-clock data enters a report, so a (preset,
//! repeats) pair always serializes byte-identically.

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_messages, label_dataset, GenerateConfig, LabelledDataset};
use crate::encoding::fit_encoder;
use crate::error::{Error, Result};
use crate::metrics::{MetricScope, MetricsReport};
use crate::model::{self, EarlyStopping, ModuleArch, TrainingConfig, Twin};
use crate::pipeline::{
    evolve, run_baseline, BaselineMode, EvolutionConfig, QueryClient, RunReport,
};
use crate::rules::generate::{evolve_ruleset, generate_ruleset, EvolveSpec, RuleGenSpec};
use crate::rules::{diff, ResultCode, RuleDiff, RuleSet};
use crate::schema::{default_schema, MessageSchema};
use crate::seed::derive_seed;
use crate::selection::{CandidateSet, DiversityMode, SearchConfig};
use crate::stats::{mann_whitney, spearman, StatTestResult};

// ---------------------------------------------------------------------------
// Presets

/// Everything that defines one evolution scenario: rule-set shapes, data
/// volumes, model size, and stage configurations. The three standard presets
/// scale the original six-version study down to desk size while keeping the
/// rule-count deltas and the growing arity of the added rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPreset {
    pub name: String,
    pub source_version: String,
    pub target_version: String,
    pub source_rule_count: usize,
    pub added_rule_count: usize,
    /// Arity mix (1-field, 2-field, 3-field) of the source rule set.
    pub base_arity_weights: [f64; 3],
    /// Arity mix of the rules the evolution adds.
    pub added_arity_weights: [f64; 3],
    pub candidate_size: usize,
    /// Subset-size budget for the query selection.
    pub budget: usize,
    /// Messages labelled by the source version for pretraining.
    pub source_train_size: usize,
    /// Held-out target-labelled messages for scoring.
    pub eval_size: usize,
    pub violation_rate: f64,
    pub d_text: usize,
    pub arch: ModuleArch,
    pub pretrain: TrainingConfig,
    pub finetune: TrainingConfig,
    pub search: SearchConfig,
    pub seed: u64,
}

impl ExperimentPreset {
    /// A named standard preset: `s1t1`, `s2t2`, `s3t3`, or the test-sized
    /// `mini`.
    pub fn named(name: &str) -> Result<ExperimentPreset> {
        match name {
            "s1t1" => Ok(Self::standard("s1t1", 30, [1.0, 0.0, 0.0], 1)),
            "s2t2" => Ok(Self::standard("s2t2", 40, [0.25, 0.75, 0.0], 2)),
            "s3t3" => Ok(Self::standard("s3t3", 51, [0.2, 0.4, 0.4], 3)),
            "mini" => Ok(Self::mini()),
            other => Err(Error::Experiment(format!("unknown preset {other:?}"))),
        }
    }

    /// The three standard evolution presets, in complexity order.
    pub fn all_standard() -> Vec<ExperimentPreset> {
        vec![
            Self::named("s1t1").expect("standard preset"),
            Self::named("s2t2").expect("standard preset"),
            Self::named("s3t3").expect("standard preset"),
        ]
    }

    fn standard(
        name: &str,
        source_rules: usize,
        added_arity_weights: [f64; 3],
        seed_salt: u64,
    ) -> ExperimentPreset {
        let (source_version, target_version) = name.split_at(2);
        ExperimentPreset {
            name: name.to_string(),
            source_version: source_version.to_string(),
            target_version: target_version.to_string(),
            source_rule_count: source_rules,
            added_rule_count: 5,
            base_arity_weights: [0.5, 0.35, 0.15],
            added_arity_weights,
            candidate_size: 800,
            budget: 80,
            source_train_size: 1500,
            eval_size: 500,
            violation_rate: 0.35,
            d_text: 8,
            arch: ModuleArch::tiny(),
            pretrain: TrainingConfig {
                epochs: 20,
                batch_size: 32,
                learning_rate: 0.002,
                early_stopping: Some(EarlyStopping {
                    validation_fraction: 0.15,
                    patience: 3,
                }),
                seed: 0,
            },
            finetune: TrainingConfig {
                epochs: 15,
                batch_size: 16,
                learning_rate: 0.002,
                early_stopping: Some(EarlyStopping {
                    validation_fraction: 0.2,
                    patience: 3,
                }),
                seed: 0,
            },
            search: SearchConfig {
                population_size: 100,
                max_evaluations: 30000,
                ..SearchConfig::default()
            },
            seed: 0xC0FFEE ^ seed_salt,
        }
    }

    /// Small enough for unit tests: seconds, not minutes.
    fn mini() -> ExperimentPreset {
        ExperimentPreset {
            name: "mini".into(),
            source_version: "m0".into(),
            target_version: "m1".into(),
            source_rule_count: 4,
            added_rule_count: 2,
            base_arity_weights: [0.6, 0.4, 0.0],
            added_arity_weights: [0.5, 0.5, 0.0],
            candidate_size: 24,
            budget: 5,
            source_train_size: 48,
            eval_size: 24,
            violation_rate: 0.35,
            d_text: 8,
            arch: ModuleArch::tiny(),
            pretrain: TrainingConfig {
                epochs: 2,
                batch_size: 16,
                learning_rate: 0.002,
                early_stopping: None,
                seed: 0,
            },
            finetune: TrainingConfig {
                epochs: 2,
                batch_size: 16,
                learning_rate: 0.002,
                early_stopping: None,
                seed: 0,
            },
            search: SearchConfig {
                population_size: 10,
                max_evaluations: 60,
                ..SearchConfig::default()
            },
            seed: 7,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.source_rule_count == 0 || self.added_rule_count == 0 {
            return Err(Error::Experiment(
                "presets need at least one source and one added rule".into(),
            ));
        }
        if self.candidate_size < 4 {
            return Err(Error::Experiment("candidate pool too small".into()));
        }
        if self.budget < 2 || self.budget > self.candidate_size {
            return Err(Error::Experiment(format!(
                "budget {} out of range for a pool of {}",
                self.budget, self.candidate_size
            )));
        }
        self.pretrain.check()?;
        self.finetune.check()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// World construction

/// The fixed part of a preset's experiment: rule versions, the pretrained
/// source twin, the candidate pool with its caches, and the held-out
/// evaluation set. Repeats vary only the seeds of search, augmentation,
/// sampling and training.
pub struct PresetWorld {
    pub preset: ExperimentPreset,
    pub schema: MessageSchema,
    pub source_rules: RuleSet,
    pub target_rules: RuleSet,
    pub diff: RuleDiff,
    pub source_twin: Twin,
    pub candidates: CandidateSet,
    pub eval: LabelledDataset,
}

pub fn build_world(preset: &ExperimentPreset) -> Result<PresetWorld> {
    preset.check()?;
    let seed = preset.seed;
    let schema = default_schema();

    let source_rules = generate_ruleset(
        &schema,
        &RuleGenSpec::new(
            preset.source_rule_count,
            preset.base_arity_weights,
            &preset.source_version,
            derive_seed(seed, "rules/source"),
        ),
    )?;
    let target_rules = evolve_ruleset(
        &schema,
        &source_rules,
        &EvolveSpec::additions_only(
            preset.added_rule_count,
            preset.added_arity_weights,
            &preset.target_version,
            derive_seed(seed, "rules/evolve"),
        ),
    )?;
    let version_diff = diff(&source_rules, &target_rules);

    // Pretrain the source twin on plentiful source-labelled data.
    let source_data = generate_messages(
        &schema,
        Some(&source_rules),
        &GenerateConfig {
            count: preset.source_train_size,
            violation_rate: preset.violation_rate,
            seed: derive_seed(seed, "data/source"),
        },
    )?;
    let source_labelled = label_dataset(&source_data, &source_rules)?;
    let encoder = fit_encoder(&schema, preset.d_text)?;
    let init = model::new_twin(
        &preset.source_version,
        encoder,
        preset.arch,
        &source_rules.rule_ids(),
        derive_seed(seed, "twin/init"),
    )?;
    let mut pretrain = preset.pretrain.clone();
    pretrain.seed = derive_seed(seed, "twin/pretrain");
    let source_twin = model::train(&init, &source_labelled, &pretrain)?;

    // Candidate pool: unlabeled messages of the target era, cached with the
    // source twin's predictions and the source version's verdicts.
    let pool = generate_messages(
        &schema,
        Some(&target_rules),
        &GenerateConfig {
            count: preset.candidate_size,
            violation_rate: preset.violation_rate,
            seed: derive_seed(seed, "data/candidates"),
        },
    )?;
    let pool_truth = label_dataset(&pool, &source_rules)?;
    let pool_predictions = model::predict(&source_twin, &pool.messages)?;
    let candidates = CandidateSet::build(
        pool,
        source_twin.rule_ids(),
        pool_predictions,
        pool_truth.labels,
        DiversityMode::Divergence,
    )?;

    // Held-out evaluation set, labelled by the target version.
    let eval_data = generate_messages(
        &schema,
        Some(&target_rules),
        &GenerateConfig {
            count: preset.eval_size,
            violation_rate: preset.violation_rate,
            seed: derive_seed(seed, "data/eval"),
        },
    )?;
    let eval = label_dataset(&eval_data, &target_rules)?;

    Ok(PresetWorld {
        preset: preset.clone(),
        schema,
        source_rules,
        target_rules,
        diff: version_diff,
        source_twin,
        candidates,
        eval,
    })
}

/// Rebuild the candidate set over the first `n` pool messages, reusing the
/// cached predictions and verdicts (for pool-size sweeps).
pub fn truncate_pool(cs: &CandidateSet, n: usize) -> Result<CandidateSet> {
    if n > cs.len() {
        return Err(Error::Experiment(format!(
            "cannot truncate a pool of {} to {n}",
            cs.len()
        )));
    }
    CandidateSet::build(
        crate::dataset::Dataset {
            schema: cs.dataset.schema.clone(),
            messages: cs.dataset.messages[..n].to_vec(),
            seed: cs.dataset.seed,
        },
        cs.rule_ids.clone(),
        cs.predictions[..n].to_vec(),
        cs.truth[..n].to_vec(),
        cs.diversity,
    )
}

// ---------------------------------------------------------------------------
// Scoring

/// One model's scores against the held-out set, split by rule scope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalBundle {
    pub all: MetricsReport,
    pub base: MetricsReport,
    pub per_new_rule: Vec<(String, MetricsReport)>,
}

/// Score a twin on a target-labelled evaluation set. `diff` decides which
/// rules count as base (carried over) and which as new.
pub fn evaluate_twin(
    twin: &Twin,
    eval: &LabelledDataset,
    version_diff: &RuleDiff,
) -> Result<EvalBundle> {
    if twin.rule_ids() != eval.rule_ids {
        return Err(Error::Experiment(
            "twin and evaluation set disagree on rule ids".into(),
        ));
    }
    let probs = model::predict(twin, &eval.dataset.messages)?;
    let pred: Vec<Vec<ResultCode>> = probs
        .iter()
        .map(|row| row.iter().map(model::predicted_code).collect())
        .collect();

    let column = |ids: &[String]| -> Vec<usize> {
        eval.rule_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| ids.contains(id))
            .map(|(i, _)| i)
            .collect()
    };
    let project = |rows: &[Vec<ResultCode>], cols: &[usize]| -> Vec<Vec<ResultCode>> {
        rows.iter()
            .map(|row| cols.iter().map(|&c| row[c]).collect())
            .collect()
    };

    let mut base_ids: Vec<String> = version_diff.retained.clone();
    base_ids.extend(version_diff.modified.iter().cloned());
    let base_cols = column(&base_ids);

    let all = MetricsReport::evaluate(&pred, &eval.labels, MetricScope::All)?;
    let base = MetricsReport::evaluate(
        &project(&pred, &base_cols),
        &project(&eval.labels, &base_cols),
        MetricScope::BaseRules,
    )?;
    let mut per_new_rule = Vec::new();
    for id in &version_diff.added {
        let cols = column(std::slice::from_ref(id));
        per_new_rule.push((
            id.clone(),
            MetricsReport::evaluate(
                &project(&pred, &cols),
                &project(&eval.labels, &cols),
                MetricScope::Rule(id.clone()),
            )?,
        ));
    }
    Ok(EvalBundle { all, base, per_new_rule })
}

// ---------------------------------------------------------------------------
// Report building blocks

/// Median of a sample (mean of the middle two for even sizes).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// One repeat's headline numbers for one scope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepeatMetrics {
    pub repeat: usize,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub query_count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MedianMetrics {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Per-repeat values and medians of one method on one scope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScopeSummary {
    pub scope: MetricScope,
    pub per_repeat: Vec<RepeatMetrics>,
    pub median: MedianMetrics,
}

impl ScopeSummary {
    fn build(scope: MetricScope, rows: Vec<RepeatMetrics>) -> ScopeSummary {
        let pick = |f: fn(&RepeatMetrics) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
        ScopeSummary {
            scope,
            median: MedianMetrics {
                macro_precision: median(&pick(|r| r.macro_precision)),
                macro_recall: median(&pick(|r| r.macro_recall)),
                macro_f1: median(&pick(|r| r.macro_f1)),
            },
            per_repeat: rows,
        }
    }

    pub fn f1_samples(&self) -> Vec<f64> {
        self.per_repeat.iter().map(|r| r.macro_f1).collect()
    }
}

/// A method's summaries on the all-rules and base-rules scopes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub all: ScopeSummary,
    pub base: ScopeSummary,
}

/// Rank-based comparison of the evolved twin against one baseline on one
/// metric and scope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub scope: MetricScope,
    pub metric: String,
    pub test: StatTestResult,
}

fn compare(
    evo: &ScopeSummary,
    other: &ScopeSummary,
    baseline: &str,
) -> Result<Vec<Comparison>> {
    let metrics: [(&str, fn(&RepeatMetrics) -> f64); 3] = [
        ("macro_precision", |r| r.macro_precision),
        ("macro_recall", |r| r.macro_recall),
        ("macro_f1", |r| r.macro_f1),
    ];
    let mut out = Vec::new();
    for (name, pick) in metrics {
        let a: Vec<f64> = evo.per_repeat.iter().map(pick).collect();
        let b: Vec<f64> = other.per_repeat.iter().map(pick).collect();
        out.push(Comparison {
            baseline: baseline.to_string(),
            scope: evo.scope.clone(),
            metric: name.to_string(),
            test: mann_whitney(&a, &b)?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// The three studies

struct RepeatOutcome {
    report: RunReport,
    bundle: EvalBundle,
}

fn run_repeat_method(
    world: &PresetWorld,
    candidates: &CandidateSet,
    mode: Option<BaselineMode>,
    cfg: &EvolutionConfig,
    subset_size: usize,
) -> Result<RepeatOutcome> {
    let client = QueryClient::in_process(world.target_rules.clone());
    let (twin, report) = match mode {
        None => evolve(&world.source_twin, &world.diff, &client, candidates, cfg)?,
        Some(m) => run_baseline(
            m,
            &world.source_twin,
            &world.diff,
            &client,
            candidates,
            cfg,
            subset_size,
        )?,
    };
    let bundle = evaluate_twin(&twin, &world.eval, &world.diff)?;
    Ok(RepeatOutcome { report, bundle })
}

fn repeat_config(world: &PresetWorld, repeat: usize) -> EvolutionConfig {
    let preset = &world.preset;
    EvolutionConfig {
        search: preset.search.clone(),
        training: preset.finetune.clone(),
        budget: Some(preset.budget),
        extra_sample_size: None,
        seed: derive_seed(preset.seed, &format!("repeat/{repeat}")),
        ..EvolutionConfig::default()
    }
}

fn rows_to_summary(
    method: &str,
    rows_all: Vec<RepeatMetrics>,
    rows_base: Vec<RepeatMetrics>,
) -> MethodSummary {
    MethodSummary {
        method: method.to_string(),
        all: ScopeSummary::build(MetricScope::All, rows_all),
        base: ScopeSummary::build(MetricScope::BaseRules, rows_base),
    }
}

fn repeat_rows(repeat: usize, outcome: &RepeatOutcome) -> (RepeatMetrics, RepeatMetrics) {
    let row = |m: &MetricsReport| RepeatMetrics {
        repeat,
        macro_precision: m.macro_precision,
        macro_recall: m.macro_recall,
        macro_f1: m.macro_f1,
        micro_f1: m.micro_f1,
        query_count: outcome.report.query_count,
    };
    (row(&outcome.bundle.all), row(&outcome.bundle.base))
}

/// rq1: the evolved twin against training-from-scratch and the stale source
/// twin, on every preset given.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rq1Report {
    pub rq: String,
    pub repeats: usize,
    pub presets: Vec<Rq1Preset>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rq1Preset {
    pub preset: ExperimentPreset,
    pub methods: Vec<MethodSummary>,
    pub comparisons: Vec<Comparison>,
}

pub fn run_rq1(presets: &[ExperimentPreset], repeats: usize) -> Result<Rq1Report> {
    check_repeats(repeats)?;
    let mut blocks = Vec::new();
    for preset in presets {
        let world = build_world(preset)?;
        let mut evo_rows = (Vec::new(), Vec::new());
        let mut tfs_rows = (Vec::new(), Vec::new());
        let mut ots_rows = (Vec::new(), Vec::new());
        for r in 0..repeats {
            let cfg = repeat_config(&world, r);
            let evo = run_repeat_method(&world, &world.candidates, None, &cfg, 0)?;
            let nps = evo
                .report
                .chosen
                .as_ref()
                .expect("evolve always picks a solution")
                .objectives
                .ss;
            // Baselines consume the same query budget as this repeat's run.
            let matched = EvolutionConfig {
                extra_sample_size: Some(evo.report.sampled_size),
                ..cfg.clone()
            };
            let tfs = run_repeat_method(
                &world,
                &world.candidates,
                Some(BaselineMode::Tfs),
                &matched,
                nps,
            )?;
            let ots = run_repeat_method(
                &world,
                &world.candidates,
                Some(BaselineMode::Ots),
                &matched,
                nps,
            )?;
            for (rows, outcome) in [
                (&mut evo_rows, &evo),
                (&mut tfs_rows, &tfs),
                (&mut ots_rows, &ots),
            ] {
                let (a, b) = repeat_rows(r, outcome);
                rows.0.push(a);
                rows.1.push(b);
            }
        }
        let evo = rows_to_summary("evo", evo_rows.0, evo_rows.1);
        let tfs = rows_to_summary("tfs", tfs_rows.0, tfs_rows.1);
        let ots = rows_to_summary("ots", ots_rows.0, ots_rows.1);
        let mut comparisons = Vec::new();
        for (summary, name) in [(&tfs, "tfs"), (&ots, "ots")] {
            comparisons.extend(compare(&evo.all, &summary.all, name)?);
            comparisons.extend(compare(&evo.base, &summary.base, name)?);
        }
        blocks.push(Rq1Preset {
            preset: preset.clone(),
            methods: vec![evo, tfs, ots],
            comparisons,
        });
    }
    Ok(Rq1Report { rq: "rq1".into(), repeats, presets: blocks })
}

/// rq2: the evolved twin against the same pipeline with random selection,
/// including the per-new-rule breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rq2Report {
    pub rq: String,
    pub repeats: usize,
    pub presets: Vec<Rq2Preset>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rq2Preset {
    pub preset: ExperimentPreset,
    pub methods: Vec<MethodSummary>,
    pub comparisons: Vec<Comparison>,
    pub new_rules: Vec<NewRuleCell>,
}

/// Per-added-rule F1 of both methods, with the rank test on the repeats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewRuleCell {
    pub rule_id: String,
    pub evo_f1: Vec<f64>,
    pub rs_f1: Vec<f64>,
    pub evo_median_f1: f64,
    pub rs_median_f1: f64,
    pub test: StatTestResult,
}

pub fn run_rq2(presets: &[ExperimentPreset], repeats: usize) -> Result<Rq2Report> {
    check_repeats(repeats)?;
    let mut blocks = Vec::new();
    for preset in presets {
        let world = build_world(preset)?;
        let mut evo_rows = (Vec::new(), Vec::new());
        let mut rs_rows = (Vec::new(), Vec::new());
        let added = world.diff.added.clone();
        let mut evo_rule_f1: Vec<Vec<f64>> = vec![Vec::new(); added.len()];
        let mut rs_rule_f1: Vec<Vec<f64>> = vec![Vec::new(); added.len()];
        for r in 0..repeats {
            let cfg = repeat_config(&world, r);
            let evo = run_repeat_method(&world, &world.candidates, None, &cfg, 0)?;
            let nps = evo.report.chosen.as_ref().expect("chosen").objectives.ss;
            let matched = EvolutionConfig {
                extra_sample_size: Some(evo.report.sampled_size),
                ..cfg.clone()
            };
            let rs = run_repeat_method(
                &world,
                &world.candidates,
                Some(BaselineMode::Rs),
                &matched,
                nps,
            )?;
            // Equal budgets are the whole point of the comparison.
            if rs.report.query_count != evo.report.query_count {
                return Err(Error::Experiment(format!(
                    "query budgets diverged: evo {} vs rs {}",
                    evo.report.query_count, rs.report.query_count
                )));
            }
            for ((rows, per_rule), outcome) in
                [(&mut evo_rows, &mut evo_rule_f1), (&mut rs_rows, &mut rs_rule_f1)]
                    .into_iter()
                    .zip([&evo, &rs])
            {
                let (a, b) = repeat_rows(r, outcome);
                rows.0.push(a);
                rows.1.push(b);
                for (k, (_, m)) in outcome.bundle.per_new_rule.iter().enumerate() {
                    per_rule[k].push(m.macro_f1);
                }
            }
        }
        let evo = rows_to_summary("evo", evo_rows.0, evo_rows.1);
        let rs = rows_to_summary("rs", rs_rows.0, rs_rows.1);
        let mut comparisons = compare(&evo.all, &rs.all, "rs")?;
        comparisons.extend(compare(&evo.base, &rs.base, "rs")?);
        let mut new_rules = Vec::new();
        for (k, id) in added.iter().enumerate() {
            new_rules.push(NewRuleCell {
                rule_id: id.clone(),
                evo_median_f1: median(&evo_rule_f1[k]),
                rs_median_f1: median(&rs_rule_f1[k]),
                test: mann_whitney(&evo_rule_f1[k], &rs_rule_f1[k])?,
                evo_f1: std::mem::take(&mut evo_rule_f1[k]),
                rs_f1: std::mem::take(&mut rs_rule_f1[k]),
            });
        }
        blocks.push(Rq2Preset {
            preset: preset.clone(),
            methods: vec![evo, rs],
            comparisons,
            new_rules,
        });
    }
    Ok(Rq2Report { rq: "rq2".into(), repeats, presets: blocks })
}

/// rq3: the evolved twin's score as a function of the candidate pool size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rq3Report {
    pub rq: String,
    pub repeats: usize,
    pub presets: Vec<Rq3Preset>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rq3Preset {
    pub preset: ExperimentPreset,
    pub sizes: Vec<SizeCell>,
    /// Rank correlation between pool size and median macro F1; absent when
    /// the medians have no variation.
    pub spearman_size_f1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeCell {
    pub candidate_size: usize,
    pub budget: usize,
    pub per_repeat_f1: Vec<f64>,
    pub median_macro_f1: f64,
}

pub fn run_rq3(
    presets: &[ExperimentPreset],
    sizes: &[usize],
    repeats: usize,
) -> Result<Rq3Report> {
    check_repeats(repeats)?;
    if sizes.is_empty() {
        return Err(Error::Experiment("rq3 needs at least one pool size".into()));
    }
    let mut blocks = Vec::new();
    for preset in presets {
        if sizes.iter().any(|&s| s > preset.candidate_size) {
            return Err(Error::Experiment(format!(
                "size sweep exceeds the preset pool ({})",
                preset.candidate_size
            )));
        }
        let world = build_world(preset)?;
        let mut cells = Vec::new();
        for &size in sizes {
            let pool = truncate_pool(&world.candidates, size)?;
            // Budget scales with the pool, mirroring the default rule.
            let budget = ((size as f64) * 0.1).ceil() as usize;
            let budget = budget.max(2);
            let mut f1 = Vec::new();
            for r in 0..repeats {
                let mut cfg = repeat_config(&world, r);
                cfg.budget = Some(budget);
                cfg.seed = derive_seed(cfg.seed, &format!("size/{size}"));
                let outcome = run_repeat_method(&world, &pool, None, &cfg, 0)?;
                f1.push(outcome.bundle.all.macro_f1);
            }
            cells.push(SizeCell {
                candidate_size: size,
                budget,
                median_macro_f1: median(&f1),
                per_repeat_f1: f1,
            });
        }
        let xs: Vec<f64> = cells.iter().map(|c| c.candidate_size as f64).collect();
        let ys: Vec<f64> = cells.iter().map(|c| c.median_macro_f1).collect();
        let rho = match spearman(&xs, &ys) {
            Ok(v) => Some(v),
            Err(_) => None, // degenerate medians carry no trend information
        };
        blocks.push(Rq3Preset {
            preset: preset.clone(),
            sizes: cells,
            spearman_size_f1: rho,
        });
    }
    Ok(Rq3Report { rq: "rq3".into(), repeats, presets: blocks })
}

fn check_repeats(repeats: usize) -> Result<()> {
    if repeats < 3 {
        return Err(Error::Experiment(
            "comparisons need at least 3 repeats".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Plain-text rendering

fn fmt_row(cells: &[String], widths: &[usize]) -> String {
    let mut line = String::new();
    for (cell, width) in cells.iter().zip(widths) {
        line.push_str(&format!("{cell:<width$}  "));
    }
    line.trim_end().to_string()
}

fn table(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = fmt_row(&header, &widths);
    out.push('\n');
    out.push_str(&fmt_row(
        &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>(),
        &widths,
    ));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(&row, &widths));
        out.push('\n');
    }
    out
}

fn f3(v: f64) -> String {
    format!("{v:.4}")
}

pub fn render_rq1(report: &Rq1Report) -> String {
    let mut out = String::new();
    for block in &report.presets {
        out.push_str(&format!(
            "rq1 {} ({} repeats): evolved twin vs from-scratch and off-the-shelf\n",
            block.preset.name, report.repeats
        ));
        let mut rows = Vec::new();
        for m in &block.methods {
            for (scope, s) in [("all", &m.all), ("base", &m.base)] {
                rows.push(vec![
                    m.method.clone(),
                    scope.to_string(),
                    f3(s.median.macro_precision),
                    f3(s.median.macro_recall),
                    f3(s.median.macro_f1),
                ]);
            }
        }
        out.push_str(&table(
            ["method", "rules", "precision", "recall", "f1"]
                .map(String::from)
                .to_vec(),
            rows,
        ));
        out.push_str(&render_comparisons(&block.comparisons));
        out.push('\n');
    }
    out
}

pub fn render_rq2(report: &Rq2Report) -> String {
    let mut out = String::new();
    for block in &report.presets {
        out.push_str(&format!(
            "rq2 {} ({} repeats): evolved twin vs random selection\n",
            block.preset.name, report.repeats
        ));
        let mut rows = Vec::new();
        for m in &block.methods {
            for (scope, s) in [("all", &m.all), ("base", &m.base)] {
                rows.push(vec![
                    m.method.clone(),
                    scope.to_string(),
                    f3(s.median.macro_precision),
                    f3(s.median.macro_recall),
                    f3(s.median.macro_f1),
                ]);
            }
        }
        out.push_str(&table(
            ["method", "rules", "precision", "recall", "f1"]
                .map(String::from)
                .to_vec(),
            rows,
        ));
        let rule_rows = block
            .new_rules
            .iter()
            .map(|c| {
                vec![
                    c.rule_id.clone(),
                    f3(c.evo_median_f1),
                    f3(c.rs_median_f1),
                    format!("{:.4}", c.test.p_value),
                    f3(c.test.a12),
                ]
            })
            .collect();
        out.push_str(&table(
            ["new rule", "evo f1", "rs f1", "p", "a12"]
                .map(String::from)
                .to_vec(),
            rule_rows,
        ));
        out.push_str(&render_comparisons(&block.comparisons));
        out.push('\n');
    }
    out
}

pub fn render_rq3(report: &Rq3Report) -> String {
    let mut out = String::new();
    for block in &report.presets {
        out.push_str(&format!(
            "rq3 {} ({} repeats): score vs candidate pool size\n",
            block.preset.name, report.repeats
        ));
        let rows = block
            .sizes
            .iter()
            .map(|c| {
                vec![
                    c.candidate_size.to_string(),
                    c.budget.to_string(),
                    f3(c.median_macro_f1),
                ]
            })
            .collect();
        out.push_str(&table(
            ["pool", "budget", "median f1"].map(String::from).to_vec(),
            rows,
        ));
        match block.spearman_size_f1 {
            Some(rho) => out.push_str(&format!("spearman(size, median f1) = {rho:.4}\n")),
            None => out.push_str("spearman(size, median f1) undefined (constant medians)\n"),
        }
        out.push('\n');
    }
    out
}

fn render_comparisons(comparisons: &[Comparison]) -> String {
    let rows = comparisons
        .iter()
        .map(|c| {
            vec![
                c.baseline.clone(),
                match &c.scope {
                    MetricScope::All => "all".to_string(),
                    MetricScope::BaseRules => "base".to_string(),
                    MetricScope::Rule(id) => id.clone(),
                },
                c.metric.clone(),
                format!("{:.4}", c.test.p_value),
                f3(c.test.a12),
            ]
        })
        .collect();
    table(
        ["vs", "rules", "metric", "p", "a12"].map(String::from).to_vec(),
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_fixture() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[1.0, 2.0, 9.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 10.0]), 2.5);
        assert_eq!(median(&[10.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn standard_presets_have_the_expected_shapes() {
        let presets = ExperimentPreset::all_standard();
        assert_eq!(presets.len(), 3);
        let sizes: Vec<(usize, usize)> = presets
            .iter()
            .map(|p| (p.source_rule_count, p.source_rule_count + p.added_rule_count))
            .collect();
        assert_eq!(sizes, vec![(30, 35), (40, 45), (51, 56)]);
        // Added-rule complexity grows across the three evolutions.
        assert_eq!(presets[0].added_arity_weights, [1.0, 0.0, 0.0]);
        assert!(presets[1].added_arity_weights[1] > 0.0);
        assert!(presets[2].added_arity_weights[2] > 0.0);
        for p in &presets {
            p.check().unwrap();
            assert_eq!(p.candidate_size, 800);
            assert_eq!(p.budget, 80);
            assert_eq!(p.search.max_evaluations, 30000);
        }
        assert!(ExperimentPreset::named("nope").is_err());
    }

    #[test]
    fn mini_world_is_coherent() {
        let preset = ExperimentPreset::named("mini").unwrap();
        let world = build_world(&preset).unwrap();
        assert_eq!(world.source_rules.rule_count(), 4);
        assert_eq!(world.target_rules.rule_count(), 6);
        assert_eq!(world.diff.added.len(), 2);
        assert_eq!(world.source_twin.rule_ids(), world.source_rules.rule_ids());
        assert_eq!(world.candidates.len(), 24);
        assert_eq!(world.eval.len(), 24);
        assert_eq!(world.eval.rule_ids, world.target_rules.rule_ids());

        let smaller = truncate_pool(&world.candidates, 10).unwrap();
        assert_eq!(smaller.len(), 10);
        assert!(truncate_pool(&world.candidates, 25).is_err());
    }

    #[test]
    fn rq1_mini_runs_and_is_deterministic() {
        let preset = ExperimentPreset::named("mini").unwrap();
        let report = run_rq1(std::slice::from_ref(&preset), 3).unwrap();
        assert_eq!(report.presets.len(), 1);
        let block = &report.presets[0];
        let names: Vec<&str> = block.methods.iter().map(|m| m.method.as_str()).collect();
        assert_eq!(names, ["evo", "tfs", "ots"]);
        for m in &block.methods {
            assert_eq!(m.all.per_repeat.len(), 3);
            assert!(m.all.median.macro_f1.is_finite());
        }
        // evo and tfs consume identical query budgets; ots consumes none.
        let evo = &block.methods[0];
        let tfs = &block.methods[1];
        let ots = &block.methods[2];
        for r in 0..3 {
            assert_eq!(
                evo.all.per_repeat[r].query_count,
                tfs.all.per_repeat[r].query_count
            );
            assert_eq!(ots.all.per_repeat[r].query_count, 0);
        }
        // 2 baselines x 2 scopes x 3 metrics.
        assert_eq!(block.comparisons.len(), 12);

        let again = run_rq1(std::slice::from_ref(&preset), 3).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
        let text = render_rq1(&report);
        assert!(text.contains("evo"));
        assert!(text.contains("f1"));
    }

    #[test]
    fn rq2_mini_covers_new_rules() {
        let preset = ExperimentPreset::named("mini").unwrap();
        let report = run_rq2(std::slice::from_ref(&preset), 3).unwrap();
        let block = &report.presets[0];
        assert_eq!(block.new_rules.len(), 2);
        for cell in &block.new_rules {
            assert_eq!(cell.evo_f1.len(), 3);
            assert_eq!(cell.rs_f1.len(), 3);
            assert!((0.0..=1.0).contains(&cell.test.a12));
        }
        let text = render_rq2(&report);
        assert!(text.contains("new rule"));
    }

    #[test]
    fn rq3_mini_sweeps_sizes() {
        let preset = ExperimentPreset::named("mini").unwrap();
        let report = run_rq3(std::slice::from_ref(&preset), &[8, 16, 24], 3).unwrap();
        let block = &report.presets[0];
        assert_eq!(block.sizes.len(), 3);
        assert_eq!(block.sizes[0].budget, 2); // ceil(0.8) clamped to the floor
        assert_eq!(block.sizes[2].budget, 3);
        for cell in &block.sizes {
            assert_eq!(cell.per_repeat_f1.len(), 3);
        }
        let text = render_rq3(&report);
        assert!(text.contains("pool"));
        assert!(run_rq3(std::slice::from_ref(&preset), &[999], 3).is_err());
        assert!(run_rq3(std::slice::from_ref(&preset), &[], 3).is_err());
    }
}
