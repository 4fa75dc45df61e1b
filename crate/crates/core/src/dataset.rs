//! Message corpora: synthetic generation and JSONL persistence.
//!
//! Messages travel as JSON Lines (one object per line). Labelled corpora add
//! the per-rule result codes next to each message:
//!
//! ```text
//! {"message": {"gender": "M", ...}, "codes": {"r001": "info", "r002": "error", ...}}
//! ```
//!
//! Generation is seeded and deterministic. Purely random messages rarely
//! violate narrow checks, so the generator can splice in violation recipes
//! carried by the rules (field assignments that satisfy a rule's prerequisite
//! and break its check) at a configurable rate, keeping all four result codes
//! represented in the corpus.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{ResultCode, RuleSet};
use crate::schema::{FieldKind, Message, MessageSchema, Value};

/// A set of messages sharing one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: MessageSchema,
    pub messages: Vec<Message>,
    /// Seed used by the generator, when the set is synthetic.
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

/// Messages plus one result code per (message, rule) pair.
///
/// `labels[i][j]` is the code for message `i` under rule `rule_ids[j]`; the
/// rule order matches the labelling ruleset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledDataset {
    pub dataset: Dataset,
    pub rule_ids: Vec<String>,
    pub labels: Vec<Vec<ResultCode>>,
}

impl LabelledDataset {
    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    /// Structural consistency: one label row per message, one code per rule.
    pub fn check(&self) -> Result<()> {
        if self.labels.len() != self.dataset.messages.len() {
            return Err(Error::Pipeline(format!(
                "labelled dataset has {} messages but {} label rows",
                self.dataset.messages.len(),
                self.labels.len()
            )));
        }
        for (i, row) in self.labels.iter().enumerate() {
            if row.len() != self.rule_ids.len() {
                return Err(Error::Pipeline(format!(
                    "label row {} has {} codes, expected {}",
                    i,
                    row.len(),
                    self.rule_ids.len()
                )));
            }
        }
        Ok(())
    }

    /// New dataset containing the rows at `indices`, in the given order.
    /// Indices may repeat (used by augmentation upsampling).
    pub fn select(&self, indices: &[usize]) -> LabelledDataset {
        LabelledDataset {
            dataset: Dataset {
                schema: self.dataset.schema.clone(),
                messages: indices.iter().map(|&i| self.dataset.messages[i].clone()).collect(),
                seed: self.dataset.seed,
            },
            rule_ids: self.rule_ids.clone(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    /// Concatenate two labelled sets over the same schema and rules.
    pub fn concat(&self, other: &LabelledDataset) -> Result<LabelledDataset> {
        if self.rule_ids != other.rule_ids {
            return Err(Error::Pipeline(
                "cannot concatenate labelled datasets with different rule sets".into(),
            ));
        }
        if self.dataset.schema != other.dataset.schema {
            return Err(Error::Pipeline(
                "cannot concatenate labelled datasets with different schemas".into(),
            ));
        }
        let mut out = self.clone();
        out.dataset.messages.extend(other.dataset.messages.iter().cloned());
        out.labels.extend(other.labels.iter().cloned());
        Ok(out)
    }
}

/// Configuration for synthetic message generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub count: usize,
    /// Probability that a message gets one violation recipe spliced in.
    pub violation_rate: f64,
    pub seed: u64,
}

/// Generate `cfg.count` schema-conforming messages. When `rules` is given,
/// a `violation_rate` fraction of messages (in expectation) has one rule's
/// violation recipe applied on top of the random fill.
pub fn generate_messages(
    schema: &MessageSchema,
    rules: Option<&RuleSet>,
    cfg: &GenerateConfig,
) -> Result<Dataset> {
    schema.check()?;
    if !(0.0..=1.0).contains(&cfg.violation_rate) {
        return Err(Error::Config(format!(
            "violation_rate {} outside [0, 1]",
            cfg.violation_rate
        )));
    }
    let recipes: Vec<(&str, &crate::rules::Recipe)> = rules
        .map(|rs| {
            rs.rules
                .iter()
                .flat_map(|r| r.recipes.iter().map(move |rec| (r.id.as_str(), rec)))
                .collect()
        })
        .unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut messages = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let mut message = random_message(schema, &mut rng);
        // The rate-0 guard keeps the RNG stream identical to a run without
        // rules (gen_bool consumes a draw even when it cannot succeed).
        if !recipes.is_empty() && cfg.violation_rate > 0.0 && rng.gen_bool(cfg.violation_rate) {
            let (rule_id, recipe) = recipes[rng.gen_range(0..recipes.len())];
            for (field, value) in &recipe.assignments {
                if schema.field(field).is_none() {
                    return Err(Error::RuleSet(format!(
                        "rule {rule_id:?} recipe assigns unknown field {field:?}"
                    )));
                }
                message.set(field.clone(), value.clone());
            }
        }
        schema.validate_message(&message).map_err(|e| {
            Error::RuleSet(format!("generated message violates schema (bad recipe?): {e}"))
        })?;
        messages.push(message);
    }
    Ok(Dataset {
        schema: schema.clone(),
        messages,
        seed: Some(cfg.seed),
    })
}

fn random_message(schema: &MessageSchema, rng: &mut ChaCha8Rng) -> Message {
    let mut message = Message::new();
    for spec in &schema.fields {
        let value = match &spec.kind {
            FieldKind::Categorical { domain } => {
                Value::Str(domain.choose(rng).expect("non-empty domain").clone())
            }
            FieldKind::Numerical { min, max } => {
                // Prefer integer values: equality predicates and diversity
                // counting stay meaningful, and the bounds allow it whenever
                // the interval contains an integer.
                let lo = min.ceil();
                let hi = max.floor();
                if lo <= hi {
                    Value::Num(rng.gen_range(lo as i64..=hi as i64) as f64)
                } else {
                    Value::Num(rng.gen_range(*min..=*max))
                }
            }
            FieldKind::Textual { max_len } => {
                // Fields named *_date carry ISO dates by convention; the rule
                // language orders and measures ages on them.
                if spec.name.ends_with("_date") && *max_len >= 10 {
                    Value::Str(random_date(rng))
                } else {
                    Value::Str(random_token(rng, (*max_len).min(10)))
                }
            }
        };
        message.set(spec.name.clone(), value);
    }
    message
}

fn random_date(rng: &mut ChaCha8Rng) -> String {
    let year = rng.gen_range(1930..=2020);
    let month = rng.gen_range(1..=12);
    // Capped at 28 so every (year, month) combination is valid.
    let day = rng.gen_range(1..=28);
    format!("{year:04}-{month:02}-{day:02}")
}

fn random_token(rng: &mut ChaCha8Rng, len: usize) -> String {
    const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char)
        .collect()
}

// ---------------------------------------------------------------------------
// JSONL persistence
// ---------------------------------------------------------------------------

/// Write messages as JSON Lines.
pub fn write_messages_jsonl(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for message in &dataset.messages {
        serde_json::to_writer(&mut out, message)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read messages from JSON Lines, validating each against the schema.
pub fn read_messages_jsonl(path: impl AsRef<Path>, schema: &MessageSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut messages = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let message: Message = serde_json::from_str(&line).map_err(|e| {
            Error::MessageInvalid(format!("line {}: {e}", lineno + 1))
        })?;
        schema
            .validate_message(&message)
            .map_err(|e| Error::MessageInvalid(format!("line {}: {e}", lineno + 1)))?;
        messages.push(message);
    }
    Ok(Dataset {
        schema: schema.clone(),
        messages,
        seed: None,
    })
}

#[derive(Serialize, Deserialize)]
struct LabelledLine {
    message: Message,
    codes: serde_json::Map<String, serde_json::Value>,
}

/// Write a labelled dataset as JSON Lines; each line carries the message and
/// its per-rule codes keyed by rule id (rule order preserved).
pub fn write_labelled_jsonl(path: impl AsRef<Path>, data: &LabelledDataset) -> Result<()> {
    data.check()?;
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for (message, row) in data.dataset.messages.iter().zip(&data.labels) {
        let mut codes = serde_json::Map::new();
        for (rule_id, code) in data.rule_ids.iter().zip(row) {
            codes.insert(rule_id.clone(), serde_json::Value::String(code.label().into()));
        }
        let line = LabelledLine {
            message: message.clone(),
            codes,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a labelled dataset. Every line must list the same rule ids in the
/// same order; codes must be valid labels.
pub fn read_labelled_jsonl(
    path: impl AsRef<Path>,
    schema: &MessageSchema,
) -> Result<LabelledDataset> {
    let file = std::fs::File::open(path)?;
    let mut rule_ids: Option<Vec<String>> = None;
    let mut messages = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LabelledLine = serde_json::from_str(&line)
            .map_err(|e| Error::MessageInvalid(format!("line {}: {e}", lineno + 1)))?;
        schema
            .validate_message(&parsed.message)
            .map_err(|e| Error::MessageInvalid(format!("line {}: {e}", lineno + 1)))?;
        let ids: Vec<String> = parsed.codes.keys().cloned().collect();
        match &rule_ids {
            None => rule_ids = Some(ids),
            Some(expected) if *expected == ids => {}
            Some(_) => {
                return Err(Error::MessageInvalid(format!(
                    "line {}: rule ids differ from previous lines",
                    lineno + 1
                )))
            }
        }
        let mut row = Vec::with_capacity(parsed.codes.len());
        for (rule_id, value) in &parsed.codes {
            let text = value.as_str().ok_or_else(|| {
                Error::MessageInvalid(format!("line {}: code for {rule_id} is not a string", lineno + 1))
            })?;
            let code = ResultCode::ALL
                .iter()
                .find(|c| c.label() == text)
                .copied()
                .ok_or_else(|| {
                    Error::MessageInvalid(format!(
                        "line {}: unknown result code {text:?}",
                        lineno + 1
                    ))
                })?;
            row.push(code);
        }
        messages.push(parsed.message);
        labels.push(row);
    }
    Ok(LabelledDataset {
        dataset: Dataset {
            schema: schema.clone(),
            messages,
            seed: None,
        },
        rule_ids: rule_ids.unwrap_or_default(),
        labels,
    })
}

/// Label every message of a dataset with the reference engine.
pub fn label_dataset(dataset: &Dataset, rules: &RuleSet) -> Result<LabelledDataset> {
    let reports = rules.validate_batch(&dataset.messages)?;
    Ok(LabelledDataset {
        dataset: dataset.clone(),
        rule_ids: rules.rule_ids(),
        labels: reports.into_iter().map(|r| r.codes).collect(),
    })
}
