//! Command-line front end: data/rule generation, training, selection, the
//! evolution pipeline, experiments, evaluation, and the HTTP validation
//! service the pipeline queries.
//!
//! Every subcommand prints its effective configuration (including the seed)
//! before doing anything, so any run can be replayed exactly from its own
//! output. Errors leave on stderr as one machine-parsable line,
//! `error: <code>: <message>`, with a nonzero exit status.

mod serve;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use ruletwin::dataset::{
    generate_messages, label_dataset, read_labelled_jsonl, read_messages_jsonl,
    write_labelled_jsonl, write_messages_jsonl, GenerateConfig,
};
use ruletwin::encoding::fit_encoder;
use ruletwin::error::{Error, Result};
use ruletwin::experiment::{
    render_rq1, render_rq2, render_rq3, run_rq1, run_rq2, run_rq3, ExperimentPreset,
};
use ruletwin::metrics::{MetricScope, MetricsReport};
use ruletwin::model::{
    self, gradient_check, gradient_check_robust, init_module, load_twin, save_twin, EarlyStopping,
    ModuleArch, TrainingConfig,
};
use ruletwin::pipeline::{
    evolve, query_target, run_baseline, BaselineMode, EvolutionConfig, QueryClient,
};
use ruletwin::rules::generate::{evolve_ruleset, generate_ruleset, EvolveSpec, RuleGenSpec};
use ruletwin::rules::{diff, ResultCode, RuleDiff, RuleSet};
use ruletwin::schema::{default_schema, MessageSchema};
use ruletwin::seed::derive_seed;
use ruletwin::selection::{
    ibea_search, pick_solution, CandidateSet, DiversityMode, ObjectiveVector, SearchConfig,
    Solution,
};

/// Surrogate twin of a versioned record-validation service: generate rules
/// and data, train twins, select query subsets, evolve across versions, and
/// serve a rule set over HTTP.
#[derive(Parser)]
#[command(name = "ruletwin", version, about)]
struct Cli {
    /// JSON config file with defaults (seed, port, report_dir).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

/// Defaults that commands fall back to. File values are overridden by the
/// environment (RULETWIN_SEED, RULETWIN_PORT, RULETWIN_REPORT_DIR), which is
/// in turn overridden by flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct AppConfig {
    seed: u64,
    port: u16,
    report_dir: PathBuf,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig { seed: 0, port: 8077, report_dir: PathBuf::from(".") }
    }
}

impl AppConfig {
    fn load(path: Option<&Path>) -> Result<AppConfig> {
        let mut cfg = match path {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => AppConfig::default(),
        };
        if let Some(seed) = env_parse::<u64>("RULETWIN_SEED")? {
            cfg.seed = seed;
        }
        if let Some(port) = env_parse::<u16>("RULETWIN_PORT")? {
            cfg.port = port;
        }
        if let Ok(dir) = std::env::var("RULETWIN_REPORT_DIR") {
            cfg.report_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }
}

fn env_parse<T: std::str::FromStr>(name: &str) -> Result<Option<T>> {
    match std::env::var(name) {
        Ok(text) => text
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("cannot parse {name}={text:?}"))),
        Err(_) => Ok(None),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the built-in record schema as JSON.
    GenSchema(GenSchema),
    /// Generate a rule set against a schema.
    GenRules(GenRules),
    /// Evolve a rule set into a new version by adding rules.
    EvolveRules(EvolveRules),
    /// Generate a message corpus, optionally steering some messages toward
    /// rule violations.
    GenMessages(GenMessages),
    /// Label messages with a rule set (from a file or a served endpoint).
    Label(Label),
    /// Train a twin on a labelled corpus.
    Train(Train),
    /// Select an informative query subset from a candidate pool.
    Select(Select),
    /// Evolve a source twin to a target rule version via selection, querying,
    /// augmentation, and fine-tuning.
    Evolve(Evolve),
    /// Run one of the reference baselines (tfs, ots, rs).
    Baseline(Baseline),
    /// Score a twin against a labelled corpus.
    Evaluate(Evaluate),
    /// Run a comparison study (rq1, rq2, rq3) over presets.
    Experiment(Experiment),
    /// Serve a rule set as the HTTP validation service.
    Serve(Serve),
    /// Verify analytic gradients against finite differences.
    Gradcheck(Gradcheck),
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {}: {err}", err.code());
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut app = AppConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        app.seed = seed;
    }
    match cli.command {
        Command::GenSchema(a) => gen_schema(a),
        Command::GenRules(a) => gen_rules(a, &app),
        Command::EvolveRules(a) => evolve_rules(a, &app),
        Command::GenMessages(a) => gen_messages(a, &app),
        Command::Label(a) => label(a),
        Command::Train(a) => train(a, &app),
        Command::Select(a) => select(a, &app),
        Command::Evolve(a) => evolve_cmd(a, &app),
        Command::Baseline(a) => baseline_cmd(a, &app),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a, &app),
        Command::Serve(a) => serve_cmd(a, &app),
        Command::Gradcheck(a) => gradcheck(a, &app),
    }
}

/// Print the effective configuration of a command as one JSON line.
fn announce(command: &str, config: &impl Serialize) -> Result<()> {
    println!(
        "config: {}",
        serde_json::to_string(&json!({ "command": command, "config": config }))?
    );
    Ok(())
}

fn parse_arity(text: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated weights, e.g. 0.5,0.3,0.2".into());
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part.trim().parse().map_err(|_| format!("bad weight {part:?}"))?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ArchChoice {
    Tiny,
    Small,
}

impl ArchChoice {
    fn build(self) -> ModuleArch {
        match self {
            ArchChoice::Tiny => ModuleArch::tiny(),
            ArchChoice::Small => ModuleArch::small(),
        }
    }
}

// ---------------------------------------------------------------------------
// Data and rule generation

#[derive(Args, Serialize)]
struct GenSchema {
    /// Output path for the schema JSON.
    #[arg(long)]
    out: PathBuf,
}

fn gen_schema(args: GenSchema) -> Result<()> {
    announce("gen-schema", &args)?;
    let schema = default_schema();
    schema.save(&args.out)?;
    println!("wrote schema with {} fields to {}", schema.fields.len(), args.out.display());
    Ok(())
}

#[derive(Args, Serialize)]
struct GenRules {
    #[arg(long)]
    schema: PathBuf,
    /// Number of rules to generate.
    #[arg(long)]
    count: usize,
    /// Version label of the rule set.
    #[arg(long)]
    version: String,
    /// Weights for 1-, 2-, 3-field rules, e.g. 0.5,0.35,0.15.
    #[arg(long, value_parser = parse_arity, default_value = "0.5,0.35,0.15")]
    arity: [f64; 3],
    #[arg(long)]
    out: PathBuf,
}

fn gen_rules(args: GenRules, app: &AppConfig) -> Result<()> {
    let seed = derive_seed(app.seed, "gen-rules");
    announce("gen-rules", &json!({ "args": &args, "seed": seed }))?;
    let schema = MessageSchema::load(&args.schema)?;
    let spec = RuleGenSpec::new(args.count, args.arity, &args.version, seed);
    let rules = generate_ruleset(&schema, &spec)?;
    rules.save(&args.out)?;
    println!("wrote {} rules ({}) to {}", rules.rule_count(), rules.version, args.out.display());
    Ok(())
}

#[derive(Args, Serialize)]
struct EvolveRules {
    #[arg(long)]
    schema: PathBuf,
    /// Rule set to evolve from.
    #[arg(long)]
    base: PathBuf,
    /// Number of rules to add.
    #[arg(long)]
    additions: usize,
    /// Version label of the evolved rule set.
    #[arg(long)]
    version: String,
    /// Arity weights for the added rules.
    #[arg(long, value_parser = parse_arity, default_value = "0.5,0.35,0.15")]
    arity: [f64; 3],
    #[arg(long)]
    out: PathBuf,
}

fn evolve_rules(args: EvolveRules, app: &AppConfig) -> Result<()> {
    let seed = derive_seed(app.seed, "evolve-rules");
    announce("evolve-rules", &json!({ "args": &args, "seed": seed }))?;
    let schema = MessageSchema::load(&args.schema)?;
    let base = RuleSet::load(&args.base)?;
    let spec = EvolveSpec::additions_only(args.additions, args.arity, &args.version, seed);
    let evolved = evolve_ruleset(&schema, &base, &spec)?;
    evolved.save(&args.out)?;
    let d = diff(&base, &evolved);
    println!(
        "wrote {} rules ({}) to {} (+{} added, {} retained)",
        evolved.rule_count(),
        evolved.version,
        args.out.display(),
        d.added.len(),
        d.retained.len()
    );
    Ok(())
}

#[derive(Args, Serialize)]
struct GenMessages {
    #[arg(long)]
    schema: PathBuf,
    /// Rule set whose violation patterns seed part of the corpus.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    count: usize,
    /// Fraction of messages perturbed toward rule violations.
    #[arg(long, default_value_t = 0.3)]
    violation_rate: f64,
    #[arg(long)]
    out: PathBuf,
}

fn gen_messages(args: GenMessages, app: &AppConfig) -> Result<()> {
    let seed = derive_seed(app.seed, "gen-messages");
    announce("gen-messages", &json!({ "args": &args, "seed": seed }))?;
    let schema = MessageSchema::load(&args.schema)?;
    let rules = args.rules.as_ref().map(RuleSet::load).transpose()?;
    let cfg = GenerateConfig { count: args.count, violation_rate: args.violation_rate, seed };
    let dataset = generate_messages(&schema, rules.as_ref(), &cfg)?;
    write_messages_jsonl(&args.out, &dataset)?;
    println!("wrote {} messages to {}", dataset.messages.len(), args.out.display());
    Ok(())
}

#[derive(Args, Serialize)]
struct Label {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    messages: PathBuf,
    /// Rule set file for in-process labelling.
    #[arg(long, conflicts_with = "url", required_unless_present = "url")]
    rules: Option<PathBuf>,
    /// Base URL of a served rule set, e.g. http://127.0.0.1:8077.
    #[arg(long)]
    url: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn label(args: Label) -> Result<()> {
    announce("label", &args)?;
    let schema = MessageSchema::load(&args.schema)?;
    let dataset = read_messages_jsonl(&args.messages, &schema)?;
    let labelled = match (&args.rules, &args.url) {
        (Some(path), None) => {
            let rules = RuleSet::load(path)?;
            label_dataset(&dataset, &rules)?
        }
        (None, Some(url)) => {
            let client = QueryClient::http(url.clone())?;
            query_target(&client, &schema, &dataset.messages)?
        }
        _ => return Err(Error::Config("label needs exactly one of --rules/--url".into())),
    };
    write_labelled_jsonl(&args.out, &labelled)?;
    println!(
        "wrote {} labelled messages x {} rules to {}",
        labelled.len(),
        labelled.rule_ids.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Training and evaluation

#[derive(Args, Serialize)]
struct TrainFlags {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    /// Disable the validation split / early stopping.
    #[arg(long)]
    no_early_stopping: bool,
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
}

impl TrainFlags {
    fn build(&self, seed: u64) -> TrainingConfig {
        TrainingConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            early_stopping: if self.no_early_stopping {
                None
            } else {
                Some(EarlyStopping {
                    validation_fraction: self.validation_fraction,
                    patience: self.patience,
                })
            },
        }
    }
}

#[derive(Args, Serialize)]
struct Train {
    #[arg(long)]
    schema: PathBuf,
    /// Labelled corpus to train on.
    #[arg(long)]
    data: PathBuf,
    /// Version label of the trained twin.
    #[arg(long)]
    version: String,
    #[arg(long, value_enum, default_value_t = ArchChoice::Small)]
    arch: ArchChoice,
    /// Hashed text-feature width per text field.
    #[arg(long, default_value_t = 8)]
    d_text: usize,
    #[command(flatten)]
    training: TrainFlags,
    /// Output directory for the twin artifact.
    #[arg(long)]
    out: PathBuf,
}

fn train(args: Train, app: &AppConfig) -> Result<()> {
    let init_seed = derive_seed(app.seed, "train/init");
    let train_seed = derive_seed(app.seed, "train/fit");
    announce(
        "train",
        &json!({ "args": &args, "init_seed": init_seed, "train_seed": train_seed }),
    )?;
    let schema = MessageSchema::load(&args.schema)?;
    let data = read_labelled_jsonl(&args.data, &schema)?;
    let encoder = fit_encoder(&schema, args.d_text)?;
    let twin = model::new_twin(&args.version, encoder, args.arch.build(), &data.rule_ids, init_seed)?;
    let cfg = args.training.build(train_seed);
    let trained = model::train(&twin, &data, &cfg)?;
    save_twin(&trained, &args.out)?;
    println!(
        "trained {} modules on {} messages, saved to {}",
        trained.modules.len(),
        data.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Serialize)]
struct Evaluate {
    #[arg(long)]
    schema: PathBuf,
    /// Twin artifact directory.
    #[arg(long)]
    model: PathBuf,
    /// Labelled corpus to score against.
    #[arg(long)]
    data: PathBuf,
    /// Restrict to rules that already exist in this (source) rule set.
    #[arg(long, conflicts_with = "rule")]
    base_of: Option<PathBuf>,
    /// Restrict to a single rule id.
    #[arg(long)]
    rule: Option<String>,
    /// Write the metrics report here in addition to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn evaluate(args: Evaluate) -> Result<()> {
    announce("evaluate", &args)?;
    let schema = MessageSchema::load(&args.schema)?;
    let twin = load_twin(&args.model)?;
    let data = read_labelled_jsonl(&args.data, &schema)?;
    if twin.rule_ids() != data.rule_ids {
        return Err(Error::Experiment(
            "twin and corpus disagree on rule ids; evaluate needs matching columns".into(),
        ));
    }
    let probs = model::predict(&twin, &data.dataset.messages)?;
    let pred: Vec<Vec<ResultCode>> = probs
        .iter()
        .map(|row| row.iter().map(model::predicted_code).collect())
        .collect();

    let (scope, columns): (MetricScope, Vec<usize>) = match (&args.base_of, &args.rule) {
        (Some(path), None) => {
            let source = RuleSet::load(path)?;
            let source_ids = source.rule_ids();
            let cols: Vec<usize> = data
                .rule_ids
                .iter()
                .enumerate()
                .filter(|(_, id)| source_ids.contains(id))
                .map(|(i, _)| i)
                .collect();
            (MetricScope::BaseRules, cols)
        }
        (None, Some(id)) => {
            let col = data
                .rule_ids
                .iter()
                .position(|r| r == id)
                .ok_or_else(|| Error::Experiment(format!("corpus has no rule {id:?}")))?;
            (MetricScope::Rule(id.clone()), vec![col])
        }
        (None, None) => (MetricScope::All, (0..data.rule_ids.len()).collect()),
        _ => unreachable!("clap forbids --base-of with --rule"),
    };
    let project = |rows: &[Vec<ResultCode>]| -> Vec<Vec<ResultCode>> {
        rows.iter()
            .map(|row| columns.iter().map(|&c| row[c]).collect())
            .collect()
    };
    let report = MetricsReport::evaluate(&project(&pred), &project(&data.labels), scope)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = &args.out {
        std::fs::write(path, text + "\n")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Selection and the pipeline

#[derive(Args, Serialize)]
struct SearchFlags {
    #[arg(long, default_value_t = 100)]
    population: usize,
    #[arg(long, default_value_t = 30000)]
    evals: usize,
    #[arg(long, default_value_t = 0.9)]
    crossover: f64,
    /// Bit-flip probability; default 1/pool-size.
    #[arg(long)]
    mutation: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    kappa: f64,
    /// Subset-size budget; default a tenth of the pool.
    #[arg(long)]
    budget: Option<usize>,
    /// Score pair diversity as literal similarity instead of divergence.
    #[arg(long)]
    literal_similarity: bool,
}

impl SearchFlags {
    fn build(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            population_size: self.population,
            max_evaluations: self.evals,
            crossover_prob: self.crossover,
            mutation_prob: self.mutation,
            kappa: self.kappa,
            budget: self.budget,
            seed,
        }
    }

    fn diversity(&self) -> DiversityMode {
        if self.literal_similarity {
            DiversityMode::LiteralSimilarity
        } else {
            DiversityMode::Divergence
        }
    }
}

/// Build the candidate set a selection or evolution run works on: the pool
/// messages plus the source twin's cached predictions and the source rule
/// set's cached verdicts.
fn build_candidates(
    schema: &MessageSchema,
    pool: &Path,
    twin: &ruletwin::model::Twin,
    source_rules: &RuleSet,
    diversity: DiversityMode,
) -> Result<CandidateSet> {
    let dataset = read_messages_jsonl(pool, schema)?;
    let truth = label_dataset(&dataset, source_rules)?;
    let predictions = model::predict(twin, &dataset.messages)?;
    CandidateSet::build(dataset, twin.rule_ids(), predictions, truth.labels, diversity)
}

#[derive(Args, Serialize)]
struct Select {
    #[arg(long)]
    schema: PathBuf,
    /// Source twin artifact directory.
    #[arg(long)]
    model: PathBuf,
    /// Source rule set (cached verdicts for the false-prediction objective).
    #[arg(long)]
    source_rules: PathBuf,
    /// Candidate pool (messages JSONL).
    #[arg(long)]
    pool: PathBuf,
    #[command(flatten)]
    search: SearchFlags,
    #[arg(long)]
    out: PathBuf,
}

/// Selection report: the chosen subset, its objectives, and the whole front.
#[derive(Serialize)]
struct SelectionReport {
    chosen: Solution,
    objectives: ObjectiveVector,
    front: Vec<FrontEntry>,
    config: SearchConfig,
    seed: u64,
}

#[derive(Serialize)]
struct FrontEntry {
    solution: Solution,
    objectives: ObjectiveVector,
}

fn select(args: Select, app: &AppConfig) -> Result<()> {
    let seed = derive_seed(app.seed, "select");
    announce("select", &json!({ "args": &args, "seed": seed }))?;
    let schema = MessageSchema::load(&args.schema)?;
    let twin = load_twin(&args.model)?;
    let source_rules = RuleSet::load(&args.source_rules)?;
    let candidates =
        build_candidates(&schema, &args.pool, &twin, &source_rules, args.search.diversity())?;
    let cfg = args.search.build(seed);
    let front = ibea_search(&candidates, &cfg)?;
    let budget = cfg.budget_for(candidates.len());
    let picked = pick_solution(&front, budget)?;
    let report = SelectionReport {
        chosen: front[picked].0.clone(),
        objectives: front[picked].1,
        front: front
            .iter()
            .map(|(solution, objectives)| FrontEntry {
                solution: solution.clone(),
                objectives: *objectives,
            })
            .collect(),
        config: cfg,
        seed,
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)? + "\n")?;
    println!(
        "front of {} solutions; chose {} messages (of {}) -> {}",
        report.front.len(),
        report.objectives.ss,
        candidates.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Serialize)]
struct TargetFlags {
    /// Target rule set file for in-process querying.
    #[arg(long, conflicts_with = "url", required_unless_present = "url")]
    target_rules: Option<PathBuf>,
    /// Base URL of the served target version.
    #[arg(long)]
    url: Option<String>,
}

impl TargetFlags {
    /// The query client plus the version diff against `source`: full diff
    /// in-process, id-based diff (added/removed only) over HTTP.
    fn connect(&self, source: &RuleSet) -> Result<(QueryClient, RuleDiff)> {
        match (&self.target_rules, &self.url) {
            (Some(path), None) => {
                let target = RuleSet::load(path)?;
                let d = diff(source, &target);
                Ok((QueryClient::in_process(target), d))
            }
            (None, Some(url)) => {
                let client = QueryClient::http(url.clone())?;
                let (_, target_ids) = client.version()?;
                let source_ids = source.rule_ids();
                let d = RuleDiff {
                    added: target_ids
                        .iter()
                        .filter(|id| !source_ids.contains(id))
                        .cloned()
                        .collect(),
                    removed: source_ids
                        .iter()
                        .filter(|id| !target_ids.contains(id))
                        .cloned()
                        .collect(),
                    modified: Vec::new(),
                    retained: target_ids
                        .iter()
                        .filter(|id| source_ids.contains(id))
                        .cloned()
                        .collect(),
                };
                Ok((client, d))
            }
            _ => Err(Error::Config("need exactly one of --target-rules/--url".into())),
        }
    }
}

#[derive(Args, Serialize)]
struct PipelineFlags {
    /// Share of the balanced set that inconsistent messages are up-sampled
    /// towards.
    #[arg(long, default_value_t = 0.5)]
    inconsistent_fraction: f64,
    /// Duplication cap per message during up-sampling.
    #[arg(long, default_value_t = 10)]
    max_duplication: usize,
    /// Extra random messages from the unselected pool; default matches the
    /// balanced set's size.
    #[arg(long)]
    extra_sample: Option<usize>,
}

#[derive(Args, Serialize)]
struct Evolve {
    #[arg(long)]
    schema: PathBuf,
    /// Source twin artifact directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    source_rules: PathBuf,
    #[command(flatten)]
    target: TargetFlags,
    #[arg(long)]
    pool: PathBuf,
    #[command(flatten)]
    search: SearchFlags,
    #[command(flatten)]
    training: TrainFlags,
    #[command(flatten)]
    pipeline: PipelineFlags,
    /// Output directory for the evolved twin.
    #[arg(long)]
    out_model: PathBuf,
    /// Output path for the run report JSON.
    #[arg(long)]
    report: PathBuf,
}

fn evolution_config(
    search: &SearchFlags,
    training: &TrainFlags,
    pipeline: &PipelineFlags,
    seed: u64,
) -> EvolutionConfig {
    EvolutionConfig {
        search: search.build(0),
        training: training.build(0),
        budget: search.budget,
        inconsistent_target_fraction: pipeline.inconsistent_fraction,
        max_duplication: pipeline.max_duplication,
        extra_sample_size: pipeline.extra_sample,
        seed,
    }
}

fn evolve_cmd(args: Evolve, app: &AppConfig) -> Result<()> {
    let seed = derive_seed(app.seed, "evolve");
    announce("evolve", &json!({ "args": &args, "seed": seed }))?;
    let schema = MessageSchema::load(&args.schema)?;
    let twin = load_twin(&args.model)?;
    let source_rules = RuleSet::load(&args.source_rules)?;
    let candidates =
        build_candidates(&schema, &args.pool, &twin, &source_rules, args.search.diversity())?;
    let (client, version_diff) = args.target.connect(&source_rules)?;
    let cfg = evolution_config(&args.search, &args.training, &args.pipeline, seed);
    let (evolved, report) = evolve(&twin, &version_diff, &client, &candidates, &cfg)?;
    save_twin(&evolved, &args.out_model)?;
    std::fs::write(&args.report, serde_json::to_string_pretty(&report)? + "\n")?;
    println!(
        "evolved {} -> {} with {} queries; twin -> {}, report -> {}",
        twin.version,
        evolved.version,
        report.query_count,
        args.out_model.display(),
        args.report.display()
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum BaselineChoice {
    Tfs,
    Ots,
    Rs,
}

impl BaselineChoice {
    fn build(self) -> BaselineMode {
        match self {
            BaselineChoice::Tfs => BaselineMode::Tfs,
            BaselineChoice::Ots => BaselineMode::Ots,
            BaselineChoice::Rs => BaselineMode::Rs,
        }
    }
}

#[derive(Args, Serialize)]
struct Baseline {
    #[arg(long, value_enum)]
    mode: BaselineChoice,
    /// Subset size, normally the size an evolution run chose.
    #[arg(long)]
    subset_size: usize,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    source_rules: PathBuf,
    #[command(flatten)]
    target: TargetFlags,
    #[arg(long)]
    pool: PathBuf,
    #[command(flatten)]
    search: SearchFlags,
    #[command(flatten)]
    training: TrainFlags,
    #[command(flatten)]
    pipeline: PipelineFlags,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

fn baseline_cmd(args: Baseline, app: &AppConfig) -> Result<()> {
    let seed = derive_seed(app.seed, "baseline");
    announce("baseline", &json!({ "args": &args, "seed": seed }))?;
    let schema = MessageSchema::load(&args.schema)?;
    let twin = load_twin(&args.model)?;
    let source_rules = RuleSet::load(&args.source_rules)?;
    let candidates =
        build_candidates(&schema, &args.pool, &twin, &source_rules, args.search.diversity())?;
    let (client, version_diff) = args.target.connect(&source_rules)?;
    let cfg = evolution_config(&args.search, &args.training, &args.pipeline, seed);
    let (result, report) = run_baseline(
        args.mode.build(),
        &twin,
        &version_diff,
        &client,
        &candidates,
        &cfg,
        args.subset_size,
    )?;
    save_twin(&result, &args.out_model)?;
    std::fs::write(&args.report, serde_json::to_string_pretty(&report)? + "\n")?;
    println!(
        "baseline {:?} used {} queries; twin -> {}, report -> {}",
        args.mode,
        report.query_count,
        args.out_model.display(),
        args.report.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Experiments

#[derive(Args, Serialize)]
struct Experiment {
    /// Which study to run.
    #[arg(long, value_enum)]
    rq: RqChoice,
    /// Comma-separated preset names, or "all" for the three standard ones.
    #[arg(long, default_value = "all")]
    preset: String,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Candidate pool sizes for rq3.
    #[arg(long, value_delimiter = ',', default_values_t = vec![100, 200, 400, 800])]
    sizes: Vec<usize>,
    /// Report path; default <report_dir>/<rq>.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum RqChoice {
    Rq1,
    Rq2,
    Rq3,
}

fn experiment(args: Experiment, app: &AppConfig) -> Result<()> {
    announce("experiment", &json!({ "args": &args, "seed": app.seed }))?;
    let presets: Vec<ExperimentPreset> = if args.preset == "all" {
        ExperimentPreset::all_standard()
    } else {
        args.preset
            .split(',')
            .map(|name| ExperimentPreset::named(name.trim()))
            .collect::<Result<_>>()?
    };
    let (json_text, rendered, stem) = match args.rq {
        RqChoice::Rq1 => {
            let report = run_rq1(&presets, args.repeats)?;
            (serde_json::to_string_pretty(&report)?, render_rq1(&report), "rq1")
        }
        RqChoice::Rq2 => {
            let report = run_rq2(&presets, args.repeats)?;
            (serde_json::to_string_pretty(&report)?, render_rq2(&report), "rq2")
        }
        RqChoice::Rq3 => {
            let report = run_rq3(&presets, &args.sizes, args.repeats)?;
            (serde_json::to_string_pretty(&report)?, render_rq3(&report), "rq3")
        }
    };
    let out = args.out.clone().unwrap_or_else(|| app.report_dir.join(format!("{stem}.json")));
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&out, json_text + "\n")?;
    print!("{rendered}");
    println!("report -> {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Service and gradient check

#[derive(Args, Serialize)]
struct Serve {
    /// Rule set to serve.
    #[arg(long)]
    rules: PathBuf,
    /// Port to bind on 127.0.0.1; default from config/environment.
    #[arg(long)]
    port: Option<u16>,
}

fn serve_cmd(args: Serve, app: &AppConfig) -> Result<()> {
    let port = args.port.unwrap_or(app.port);
    announce("serve", &json!({ "args": &args, "port": port }))?;
    let rules = RuleSet::load(&args.rules)?;
    println!("serving {} ({} rules) on 127.0.0.1:{port}", rules.version, rules.rule_count());
    serve::serve(rules, port)
}

#[derive(Args, Serialize)]
struct Gradcheck {
    /// Number of randomized modules to check.
    #[arg(long, default_value_t = 20)]
    modules: usize,
    /// Fixed central-difference step; default is a step-size ladder.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn gradcheck(args: Gradcheck, app: &AppConfig) -> Result<()> {
    let seed = derive_seed(app.seed, "gradcheck");
    announce("gradcheck", &json!({ "args": &args, "seed": seed }))?;
    let schema = default_schema();
    let encoder = fit_encoder(&schema, 8)?;
    let arch = ModuleArch::tiny();
    let mut worst = 0.0f64;
    let mut parameters = 0usize;
    let mut rng_seed = seed;
    for i in 0..args.modules {
        rng_seed = derive_seed(rng_seed, "next");
        let module = init_module(&arch, encoder.branch1_len, encoder.branch2_len, rng_seed)?;
        // Deterministic pseudo-random inputs derived from the module seed.
        let noise = |k: usize, n: usize| -> Vec<f32> {
            (0..n)
                .map(|j| {
                    let h = derive_seed(rng_seed, &format!("x{k}/{j}"));
                    ((h % 2000) as f32 / 1000.0) - 1.0
                })
                .collect()
        };
        let b1 = noise(1, encoder.branch1_len);
        let b2 = noise(2, encoder.branch2_len);
        let target = (rng_seed % ResultCode::COUNT as u64) as usize;
        let report = match args.epsilon {
            Some(eps) => gradient_check(&module, &b1, &b2, target, eps)?,
            None => gradient_check_robust(&module, &b1, &b2, target, args.tolerance)?,
        };
        worst = worst.max(report.max_relative_error);
        parameters = report.parameters;
        println!(
            "module {i:>2}: max relative error {:.3e} over {} parameters",
            report.max_relative_error, report.parameters
        );
    }
    println!(
        "gradcheck: worst {worst:.3e} over {} modules x {parameters} parameters (tolerance {:.1e})",
        args.modules, args.tolerance
    );
    if worst >= args.tolerance {
        return Err(Error::Model(format!(
            "gradient check failed: {worst:.3e} >= {:.1e}",
            args.tolerance
        )));
    }
    Ok(())
}
