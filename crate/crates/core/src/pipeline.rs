//! End-to-end evolution of a trained twin across service versions.
//!
//! The flow mirrors how the surrogate is kept in sync with a versioned
//! validation service: search the candidate pool for a query subset
//! ([`crate::selection`]), label it against the target version through a
//! [`QueryClient`], rebalance towards messages the source twin gets wrong,
//! pad with a random sample, and fine-tune the source twin into the target
//! twin ([`crate::model::fine_tune`]). The same plumbing drives the
//! from-scratch, off-the-shelf and random-selection baselines so comparisons
//! share every knob except the one under study.
//!
//! Every stage draws randomness from a stage-named seed derived from the one
//! config seed (see [`crate::seed::derive_seed`]), so a single `(config,
//! seed)` pair replays the whole run bit-identically.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelledDataset};
use crate::error::{Error, Result};
use crate::model::{self, Twin, TwinMeta, TwinModule, TrainingConfig};
use crate::rules::{ResultCode, RuleDiff, RuleSet};
use crate::schema::{Message, MessageSchema};
use crate::seed::derive_seed;
use crate::selection::{
    evaluate_solution, ibea_search, pick_solution, CandidateSet, ObjectiveVector, SearchConfig,
    Solution,
};

// ---------------------------------------------------------------------------
// Wire format shared by the HTTP client below and the serving side.

/// `GET /version` response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireVersion {
    pub version: String,
    pub rule_ids: Vec<String>,
}

/// `POST /validate` request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireValidateRequest {
    pub message: Message,
}

/// One rule's verdict on one message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireRuleCode {
    pub rule_id: String,
    pub code: ResultCode,
}

/// `POST /validate` response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireValidateResponse {
    pub results: Vec<WireRuleCode>,
}

/// `POST /validate-batch` request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireBatchRequest {
    pub messages: Vec<Message>,
}

/// `POST /validate-batch` response, one result row per message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireBatchResponse {
    pub results: Vec<Vec<WireRuleCode>>,
}

// ---------------------------------------------------------------------------
// Query client

/// Handle on the target validation service, either held in-process or
/// reached over HTTP. The counter tallies every message the target labels,
/// which is the cost figure the whole selection machinery exists to keep
/// small.
pub enum QueryClient {
    InProcess {
        rules: RuleSet,
        queries: AtomicU64,
    },
    Http {
        base_url: String,
        client: reqwest::blocking::Client,
        queries: AtomicU64,
    },
}

impl QueryClient {
    pub fn in_process(rules: RuleSet) -> QueryClient {
        QueryClient::InProcess { rules, queries: AtomicU64::new(0) }
    }

    /// Client for a served rule set; `base_url` like `http://127.0.0.1:8080`.
    pub fn http(base_url: impl Into<String>) -> Result<QueryClient> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Query(format!("http client construction failed: {e}")))?;
        Ok(QueryClient::Http {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client,
            queries: AtomicU64::new(0),
        })
    }

    /// Messages labelled so far through this client.
    pub fn queries(&self) -> u64 {
        match self {
            QueryClient::InProcess { queries, .. } | QueryClient::Http { queries, .. } => {
                queries.load(Ordering::Relaxed)
            }
        }
    }

    /// Version label and rule ids of the target service. Does not count as
    /// a query: no message is labelled.
    pub fn version(&self) -> Result<(String, Vec<String>)> {
        match self {
            QueryClient::InProcess { rules, .. } => {
                Ok((rules.version.clone(), rules.rule_ids()))
            }
            QueryClient::Http { base_url, client, .. } => {
                let resp: WireVersion = client
                    .get(format!("{base_url}/version"))
                    .send()
                    .map_err(|e| Error::Query(format!("version request failed: {e}")))?
                    .error_for_status()
                    .map_err(|e| Error::Query(format!("version request rejected: {e}")))?
                    .json()
                    .map_err(|e| Error::Query(format!("bad version response: {e}")))?;
                Ok((resp.version, resp.rule_ids))
            }
        }
    }

    fn label_rows(&self, messages: &[Message]) -> Result<(Vec<String>, Vec<Vec<ResultCode>>)> {
        match self {
            QueryClient::InProcess { rules, queries } => {
                let reports = rules.validate_batch(messages)?;
                queries.fetch_add(messages.len() as u64, Ordering::Relaxed);
                Ok((
                    rules.rule_ids(),
                    reports.into_iter().map(|r| r.codes).collect(),
                ))
            }
            QueryClient::Http { base_url, client, queries } => {
                let resp: WireBatchResponse = client
                    .post(format!("{base_url}/validate-batch"))
                    .json(&WireBatchRequest { messages: messages.to_vec() })
                    .send()
                    .map_err(|e| Error::Query(format!("batch request failed: {e}")))?
                    .error_for_status()
                    .map_err(|e| Error::Query(format!("batch request rejected: {e}")))?
                    .json()
                    .map_err(|e| Error::Query(format!("bad batch response: {e}")))?;
                if resp.results.len() != messages.len() {
                    return Err(Error::Query(format!(
                        "target returned {} result rows for {} messages",
                        resp.results.len(),
                        messages.len()
                    )));
                }
                let mut rule_ids: Option<Vec<String>> = None;
                let mut rows = Vec::with_capacity(resp.results.len());
                for row in resp.results {
                    let ids: Vec<String> = row.iter().map(|r| r.rule_id.clone()).collect();
                    match &rule_ids {
                        None => rule_ids = Some(ids),
                        Some(expected) if *expected == ids => {}
                        Some(_) => {
                            return Err(Error::Query(
                                "target returned inconsistent rule ids across messages".into(),
                            ))
                        }
                    }
                    rows.push(row.into_iter().map(|r| r.code).collect());
                }
                queries.fetch_add(messages.len() as u64, Ordering::Relaxed);
                Ok((rule_ids.unwrap_or_default(), rows))
            }
        }
    }
}

/// Label `messages` with the target service, producing a dataset carrying
/// the target's rule ids. The client's query counter grows by
/// `messages.len()`.
pub fn query_target(
    client: &QueryClient,
    schema: &MessageSchema,
    messages: &[Message],
) -> Result<LabelledDataset> {
    let (rule_ids, labels) = client.label_rows(messages)?;
    let data = LabelledDataset {
        dataset: Dataset {
            schema: schema.clone(),
            messages: messages.to_vec(),
            seed: None,
        },
        rule_ids,
        labels,
    };
    data.check()?;
    Ok(data)
}

// ---------------------------------------------------------------------------
// Configuration and provenance

/// Knobs of one evolution run. `search.seed` and `training.seed` are
/// overridden from `seed` at run time so one number replays everything.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub search: SearchConfig,
    pub training: TrainingConfig,
    /// Subset-size budget; `None` means a tenth of the pool.
    pub budget: Option<usize>,
    /// Share of the balanced set that inconsistent messages are up-sampled
    /// towards. Strictly between 0 and 1.
    pub inconsistent_target_fraction: f64,
    /// Copies of one message the up-sampling may produce (original included).
    pub max_duplication: usize,
    /// Random messages drawn from the rest of the pool; `None` means as many
    /// as the balanced set holds.
    pub extra_sample_size: Option<usize>,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            search: SearchConfig::default(),
            training: TrainingConfig::default(),
            budget: None,
            inconsistent_target_fraction: 0.5,
            max_duplication: 10,
            extra_sample_size: None,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.inconsistent_target_fraction > 0.0 && self.inconsistent_target_fraction < 1.0)
        {
            return Err(Error::Config(format!(
                "inconsistent_target_fraction {} outside (0, 1)",
                self.inconsistent_target_fraction
            )));
        }
        if self.max_duplication < 1 {
            return Err(Error::Config("max_duplication must be at least 1".into()));
        }
        self.training.check()
    }
}

/// What the augmentation did, for provenance and for tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentStats {
    pub selected: usize,
    pub inconsistent: usize,
    pub copies_added: usize,
    pub consistent_dropped: usize,
    /// True when the selected set passed through unchanged (no inconsistent
    /// messages, or the target fraction was already met).
    pub passthrough: bool,
}

/// Everything needed to reconstruct an evolution dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    /// The chosen subset over the candidate pool.
    pub solution: Solution,
    /// Candidate-pool indices of the subset, ascending.
    pub selected_indices: Vec<usize>,
    /// Indices into the selected subset making up the balanced part;
    /// repeated entries are up-sampling duplicates.
    pub balanced_indices: Vec<usize>,
    /// Candidate-pool indices of the extra random sample.
    pub sampled_indices: Vec<usize>,
    pub augment: AugmentStats,
    pub seed: u64,
}

/// The data a fine-tune step trains on: the balanced queried subset plus the
/// random padding sample, both labelled by the target version.
#[derive(Debug, Clone)]
pub struct EvolutionDataset {
    pub balanced: LabelledDataset,
    pub sampled: LabelledDataset,
    pub provenance: Provenance,
}

impl EvolutionDataset {
    /// Balanced and sampled parts concatenated, ready for training.
    pub fn merged(&self) -> Result<LabelledDataset> {
        if self.sampled.is_empty() {
            return Ok(self.balanced.clone());
        }
        self.balanced.concat(&self.sampled)
    }
}

// ---------------------------------------------------------------------------
// Augmentation

/// Rebalance a target-labelled subset towards the messages the source twin
/// mispredicts.
///
/// A message is *inconsistent* when the twin's argmax disagrees with the
/// target label on at least one rule both sides know. Inconsistent messages
/// are up-sampled with replacement until they make up
/// `inconsistent_target_fraction` of the result, capped at
/// `max_duplication` copies each; if the cap leaves the fraction short,
/// consistent messages are down-sampled to close the rest. A set whose
/// inconsistent share already meets the fraction passes through untouched.
pub fn augment(
    selected: &LabelledDataset,
    source: &Twin,
    cfg: &EvolutionConfig,
) -> Result<(LabelledDataset, AugmentStats)> {
    cfg.check()?;
    selected.check()?;
    if selected.is_empty() {
        return Err(Error::Pipeline("cannot augment an empty selection".into()));
    }

    // Columns present in both the twin and the target labelling.
    let twin_ids = source.rule_ids();
    let shared: Vec<(usize, usize)> = selected
        .rule_ids
        .iter()
        .enumerate()
        .filter_map(|(sel_col, id)| {
            twin_ids
                .iter()
                .position(|t| t == id)
                .map(|twin_col| (twin_col, sel_col))
        })
        .collect();

    let n = selected.len();
    let passthrough = |stats_inconsistent: usize| {
        (
            selected.clone(),
            AugmentStats {
                selected: n,
                inconsistent: stats_inconsistent,
                copies_added: 0,
                consistent_dropped: 0,
                passthrough: true,
            },
        )
    };
    if shared.is_empty() {
        // No overlap means inconsistency is undefined; nothing to rebalance.
        return Ok(passthrough(0));
    }

    let predictions = model::predict(source, &selected.dataset.messages)?;
    let mut inconsistent = Vec::new();
    let mut consistent = Vec::new();
    for i in 0..n {
        let disagrees = shared.iter().any(|&(twin_col, sel_col)| {
            model::predicted_code(&predictions[i][twin_col]) != selected.labels[i][sel_col]
        });
        if disagrees {
            inconsistent.push(i);
        } else {
            consistent.push(i);
        }
    }

    let f = cfg.inconsistent_target_fraction;
    let n_inc = inconsistent.len();
    let n_con = consistent.len();
    if n_inc == 0 || n_inc as f64 >= f * n as f64 {
        return Ok(passthrough(n_inc));
    }

    // Up-sample inconsistent messages towards `want` total copies.
    let want = (n_con as f64 * f / (1.0 - f)).round() as usize;
    let reachable = want.min(n_inc * cfg.max_duplication);
    let mut copies = vec![1usize; n_inc];
    let mut extra = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "augment/upsample"));
    while n_inc + extra.len() < reachable {
        let pick = rng.gen_range(0..n_inc);
        if copies[pick] < cfg.max_duplication {
            copies[pick] += 1;
            extra.push(inconsistent[pick]);
        }
    }

    // If the cap stopped short of the fraction, drop consistent messages.
    let inc_total = n_inc + extra.len();
    let mut kept_consistent = consistent.clone();
    if reachable < want {
        let keep = ((inc_total as f64) * (1.0 - f) / f).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "augment/downsample"));
        // Partial Fisher-Yates, then restore original order.
        for i in 0..keep.min(n_con) {
            let j = rng.gen_range(i..n_con);
            kept_consistent.swap(i, j);
        }
        kept_consistent.truncate(keep.min(n_con));
        kept_consistent.sort_unstable();
    }

    let consistent_dropped = n_con - kept_consistent.len();
    let mut balanced_indices: Vec<usize> = kept_consistent;
    balanced_indices.extend_from_slice(&inconsistent);
    balanced_indices.sort_unstable();
    balanced_indices.extend_from_slice(&extra);

    let balanced = selected.select(&balanced_indices);
    Ok((
        balanced,
        AugmentStats {
            selected: n,
            inconsistent: n_inc,
            copies_added: extra.len(),
            consistent_dropped,
            passthrough: false,
        },
    ))
}

// ---------------------------------------------------------------------------
// Evolution dataset assembly

/// Query the chosen subset, rebalance it, and pad it with a uniform sample
/// from the unchosen rest of the pool, all labelled by the target. Query
/// count: subset size plus sample size.
pub fn build_evolution_dataset(
    candidates: &CandidateSet,
    solution: &Solution,
    client: &QueryClient,
    source: &Twin,
    cfg: &EvolutionConfig,
) -> Result<EvolutionDataset> {
    cfg.check()?;
    if solution.bits.len() != candidates.len() {
        return Err(Error::Pipeline(format!(
            "solution covers {} candidates, pool has {}",
            solution.bits.len(),
            candidates.len()
        )));
    }
    let selected_indices: Vec<usize> = solution.indices().collect();
    if selected_indices.is_empty() {
        return Err(Error::Pipeline("the chosen subset is empty".into()));
    }
    let schema = &candidates.dataset.schema;
    let chosen_messages: Vec<Message> = selected_indices
        .iter()
        .map(|&i| candidates.dataset.messages[i].clone())
        .collect();
    let selected = query_target(client, schema, &chosen_messages)?;
    let (balanced, augment_stats) = augment(&selected, source, cfg)?;
    let balanced_indices = balanced_index_trace(&selected, &balanced);

    // Uniform sample, without replacement, from the rest of the pool.
    let rest: Vec<usize> = (0..candidates.len())
        .filter(|i| !solution.bits[*i])
        .collect();
    let want = cfg.extra_sample_size.unwrap_or(balanced.len());
    let take = want.min(rest.len());
    let mut pool = rest;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "sample/extra"));
    for i in 0..take {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(take);
    pool.sort_unstable();
    let sampled_indices = pool;

    let sampled = if sampled_indices.is_empty() {
        LabelledDataset {
            dataset: Dataset { schema: schema.clone(), messages: Vec::new(), seed: None },
            rule_ids: selected.rule_ids.clone(),
            labels: Vec::new(),
        }
    } else {
        let extra_messages: Vec<Message> = sampled_indices
            .iter()
            .map(|&i| candidates.dataset.messages[i].clone())
            .collect();
        query_target(client, schema, &extra_messages)?
    };

    Ok(EvolutionDataset {
        balanced,
        sampled,
        provenance: Provenance {
            solution: solution.clone(),
            selected_indices,
            balanced_indices,
            sampled_indices,
            augment: augment_stats,
            seed: cfg.seed,
        },
    })
}

/// Recover which selected-set rows the balanced set used (duplicates and
/// all) by matching rows; used only to record provenance.
fn balanced_index_trace(selected: &LabelledDataset, balanced: &LabelledDataset) -> Vec<usize> {
    balanced
        .dataset
        .messages
        .iter()
        .zip(&balanced.labels)
        .map(|(m, l)| {
            selected
                .dataset
                .messages
                .iter()
                .zip(&selected.labels)
                .position(|(sm, sl)| sm == m && sl == l)
                .expect("balanced rows come from the selected set")
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Runs and reports

/// Summary of the subset the search settled on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChosenSummary {
    pub solution: Solution,
    pub objectives: ObjectiveVector,
}

/// Reproducible record of one pipeline run. Wall-clock timings are kept
/// out of the serialized form so identical configs yield byte-identical
/// reports; they are still available in memory for logging.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub source_version: String,
    pub target_version: String,
    pub candidate_count: usize,
    /// Size of the non-dominated front the search returned (0 when no
    /// search ran).
    pub front_size: usize,
    pub chosen: Option<ChosenSummary>,
    /// Messages the target service labelled during this run.
    pub query_count: u64,
    pub balanced_size: usize,
    pub sampled_size: usize,
    pub config: EvolutionConfig,
    #[serde(skip)]
    pub timings_secs: BTreeMap<String, f64>,
}

fn seeded(cfg: &EvolutionConfig, stage_search: &str, stage_train: &str) -> EvolutionConfig {
    let mut out = cfg.clone();
    out.search.seed = derive_seed(cfg.seed, stage_search);
    out.training.seed = derive_seed(cfg.seed, stage_train);
    out
}

/// Full evolution: search the pool, pick one subset under the budget, build
/// the evolution dataset against the target, and fine-tune the source twin
/// into the target twin.
pub fn evolve(
    source: &Twin,
    diff: &RuleDiff,
    client: &QueryClient,
    candidates: &CandidateSet,
    cfg: &EvolutionConfig,
) -> Result<(Twin, RunReport)> {
    cfg.check()?;
    let cfg = seeded(cfg, "search", "finetune");
    let queries_before = client.queries();
    let mut timings = BTreeMap::new();

    let t = Instant::now();
    let front = ibea_search(candidates, &cfg.search)?;
    timings.insert("search".into(), t.elapsed().as_secs_f64());

    let budget = cfg
        .budget
        .unwrap_or_else(|| cfg.search.budget_for(candidates.len()));
    let pick = pick_solution(&front, budget)?;
    let (solution, objectives) = front[pick].clone();

    let t = Instant::now();
    let data = build_evolution_dataset(candidates, &solution, client, source, &cfg)?;
    timings.insert("dataset".into(), t.elapsed().as_secs_f64());

    let (target_version, _) = client.version()?;
    let t = Instant::now();
    let tuned = model::fine_tune(source, &target_version, diff, &data.merged()?, &cfg.training)?;
    timings.insert("finetune".into(), t.elapsed().as_secs_f64());

    let report = RunReport {
        method: "evo".into(),
        source_version: source.version.clone(),
        target_version,
        candidate_count: candidates.len(),
        front_size: front.len(),
        chosen: Some(ChosenSummary { solution, objectives }),
        query_count: client.queries() - queries_before,
        balanced_size: data.balanced.len(),
        sampled_size: data.sampled.len(),
        config: cfg,
        timings_secs: timings,
    };
    Ok((tuned, report))
}

/// The comparison arms: train-from-scratch, off-the-shelf, random selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Fresh target twin trained only on an evolution dataset built from a
    /// uniformly random subset; no transfer from the source twin.
    Tfs,
    /// The source twin used as-is; modules for new rules are freshly
    /// initialized and never trained. Performs zero target queries.
    Ots,
    /// The full pipeline with the search replaced by a uniformly random
    /// subset of the same size.
    Rs,
}

impl BaselineMode {
    pub fn label(self) -> &'static str {
        match self {
            BaselineMode::Tfs => "tfs",
            BaselineMode::Ots => "ots",
            BaselineMode::Rs => "rs",
        }
    }
}

/// Run one baseline. `subset_size` must equal the subset size of the run
/// being compared against so query budgets match (ignored for OTS, which
/// never queries).
pub fn run_baseline(
    mode: BaselineMode,
    source: &Twin,
    diff: &RuleDiff,
    client: &QueryClient,
    candidates: &CandidateSet,
    cfg: &EvolutionConfig,
    subset_size: usize,
) -> Result<(Twin, RunReport)> {
    cfg.check()?;
    let queries_before = client.queries();
    let mut timings = BTreeMap::new();
    let (target_version, target_ids) = client.version()?;

    let report = |balanced: usize,
                  sampled: usize,
                  chosen: Option<ChosenSummary>,
                  cfg: EvolutionConfig,
                  timings: BTreeMap<String, f64>,
                  queries: u64| RunReport {
        method: mode.label().into(),
        source_version: source.version.clone(),
        target_version: target_version.clone(),
        candidate_count: candidates.len(),
        front_size: 0,
        chosen,
        query_count: queries,
        balanced_size: balanced,
        sampled_size: sampled,
        config: cfg,
        timings_secs: timings,
    };

    match mode {
        BaselineMode::Ots => {
            let t = Instant::now();
            let init_seed = derive_seed(cfg.seed, "ots/init");
            let modules = target_ids
                .iter()
                .map(|id| {
                    let params = match source.module(id) {
                        Some(m) => m.params.clone(),
                        None => model::init_module(
                            &source.arch,
                            source.encoder.branch1_len,
                            source.encoder.branch2_len,
                            derive_seed(init_seed, &format!("init/{id}")),
                        )?,
                    };
                    Ok(TwinModule { rule_id: id.clone(), params })
                })
                .collect::<Result<Vec<_>>>()?;
            let twin = Twin {
                version: target_version.clone(),
                encoder: source.encoder.clone(),
                arch: source.arch,
                modules,
                meta: TwinMeta { init_seed, ..TwinMeta::default() },
            };
            timings.insert("assemble".into(), t.elapsed().as_secs_f64());
            let queries = client.queries() - queries_before;
            Ok((twin, report(0, 0, None, cfg.clone(), timings, queries)))
        }
        BaselineMode::Tfs | BaselineMode::Rs => {
            let stage = mode.label();
            let solution = random_subset(
                candidates.len(),
                subset_size,
                derive_seed(cfg.seed, &format!("{stage}/subset")),
            )?;

            let cfg_run = seeded(cfg, "unused-search", &format!("{stage}/train"));
            let t = Instant::now();
            let data = build_evolution_dataset(candidates, &solution, client, source, &cfg_run)?;
            timings.insert("dataset".into(), t.elapsed().as_secs_f64());
            let merged = data.merged()?;

            let t = Instant::now();
            let twin = match mode {
                BaselineMode::Tfs => {
                    let fresh = model::new_twin(
                        &target_version,
                        source.encoder.clone(),
                        source.arch,
                        &merged.rule_ids,
                        derive_seed(cfg.seed, "tfs/init"),
                    )?;
                    model::train(&fresh, &merged, &cfg_run.training)?
                }
                BaselineMode::Rs => {
                    model::fine_tune(source, &target_version, diff, &merged, &cfg_run.training)?
                }
                BaselineMode::Ots => unreachable!(),
            };
            timings.insert("train".into(), t.elapsed().as_secs_f64());

            let queries = client.queries() - queries_before;
            let objectives = evaluate_solution(&solution, candidates);
            Ok((
                twin,
                report(
                    data.balanced.len(),
                    data.sampled.len(),
                    Some(ChosenSummary { solution, objectives }),
                    cfg_run,
                    timings,
                    queries,
                ),
            ))
        }
    }
}

/// Uniformly random subset of exactly `size` candidates.
fn random_subset(nc: usize, size: usize, seed: u64) -> Result<Solution> {
    if size < 2 || size > nc {
        return Err(Error::Pipeline(format!(
            "random subset size {size} out of range for a pool of {nc}"
        )));
    }
    let mut indices: Vec<usize> = (0..nc).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..size {
        let j = rng.gen_range(i..nc);
        indices.swap(i, j);
    }
    Solution::from_indices(nc, &indices[..size])
}
