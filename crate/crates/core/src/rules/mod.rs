//! Validation rules and the reference rule engine.
//!
//! A rule pairs a prerequisite expression with a check expression. Validating
//! a message yields exactly one result code per rule:
//!
//! * prerequisite false -> `not_applied` (the check is not evaluated),
//! * prerequisite true and check true -> `info`,
//! * prerequisite true and check false -> the rule's fail severity
//!   (`error` or `warning`).
//!
//! Rule evaluation is pure: same ruleset + same message -> same report.

mod expr;
pub mod generate;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use expr::{parse, ArithOp, CmpOp, Expr};

use crate::error::{Error, Result};
use crate::schema::{Message, Value};

/// The four validation outcome codes, in canonical order. The order fixes the
/// meaning of probability-vector slots and of argmax tie-breaking (ties go to
/// the lowest index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultCode {
    Info,
    Warning,
    NotApplied,
    Error,
}

impl ResultCode {
    pub const COUNT: usize = 4;
    pub const ALL: [ResultCode; 4] = [
        ResultCode::Info,
        ResultCode::Warning,
        ResultCode::NotApplied,
        ResultCode::Error,
    ];

    pub fn index(self) -> usize {
        match self {
            ResultCode::Info => 0,
            ResultCode::Warning => 1,
            ResultCode::NotApplied => 2,
            ResultCode::Error => 3,
        }
    }

    pub fn from_index(index: usize) -> Option<ResultCode> {
        Self::ALL.get(index).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            ResultCode::Info => "info",
            ResultCode::Warning => "warning",
            ResultCode::NotApplied => "not_applied",
            ResultCode::Error => "error",
        }
    }
}

impl std::fmt::Display for ResultCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Code emitted when the prerequisite holds but the check fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailSeverity {
    Error,
    Warning,
}

impl FailSeverity {
    pub fn code(self) -> ResultCode {
        match self {
            FailSeverity::Error => ResultCode::Error,
            FailSeverity::Warning => ResultCode::Warning,
        }
    }
}

/// Concrete field assignments that make a rule fire its fail code: they
/// satisfy the prerequisite and violate the check while staying within the
/// schema. The message generator splices these in to guarantee the synthetic
/// corpus contains genuine violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Recipe {
    pub assignments: std::collections::BTreeMap<String, Value>,
}

/// A single validation rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleRepr", into = "RuleRepr")]
pub struct Rule {
    pub id: String,
    /// Every field referenced by `prereq` or `check` (and nothing else).
    pub fields: Vec<String>,
    pub prereq: Expr,
    pub check: Expr,
    pub severity: FailSeverity,
    pub recipes: Vec<Recipe>,
}

impl Rule {
    /// Build a rule, deriving `fields` from the expressions.
    pub fn new(
        id: impl Into<String>,
        prereq: Expr,
        check: Expr,
        severity: FailSeverity,
    ) -> Self {
        let mut fields = prereq.fields();
        for f in check.fields() {
            if !fields.contains(&f) {
                fields.push(f);
            }
        }
        Rule {
            id: id.into(),
            fields,
            prereq,
            check,
            severity,
            recipes: Vec::new(),
        }
    }

    /// Identical validation behaviour (ignores recipes and field order).
    pub fn same_logic(&self, other: &Rule) -> bool {
        self.prereq == other.prereq && self.check == other.check && self.severity == other.severity
    }

    /// Validate one message against this rule.
    pub fn validate(&self, message: &Message) -> Result<ResultCode> {
        let wrap = |message: String| Error::RuleEval {
            rule_id: self.id.clone(),
            message,
        };
        if !self.prereq.eval_bool(message).map_err(wrap)? {
            return Ok(ResultCode::NotApplied);
        }
        if self.check.eval_bool(message).map_err(wrap)? {
            Ok(ResultCode::Info)
        } else {
            Ok(self.severity.code())
        }
    }
}

/// Serialized form: expressions are stored as DSL source text.
#[derive(Serialize, Deserialize)]
struct RuleRepr {
    id: String,
    fields: Vec<String>,
    prereq: String,
    check: String,
    severity: FailSeverity,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    recipes: Vec<Recipe>,
}

impl From<Rule> for RuleRepr {
    fn from(rule: Rule) -> Self {
        RuleRepr {
            id: rule.id,
            fields: rule.fields,
            prereq: rule.prereq.to_string(),
            check: rule.check.to_string(),
            severity: rule.severity,
            recipes: rule.recipes,
        }
    }
}

impl TryFrom<RuleRepr> for Rule {
    type Error = Error;

    fn try_from(repr: RuleRepr) -> Result<Self> {
        let prereq = parse(&repr.prereq)?;
        let check = parse(&repr.check)?;
        let rule = Rule {
            id: repr.id,
            fields: repr.fields,
            prereq,
            check,
            severity: repr.severity,
            recipes: repr.recipes,
        };
        // The declared field list must be exactly the referenced fields.
        let mut declared: Vec<&str> = rule.fields.iter().map(|s| s.as_str()).collect();
        let mut actual_owned = rule.prereq.fields();
        for f in rule.check.fields() {
            if !actual_owned.contains(&f) {
                actual_owned.push(f);
            }
        }
        let mut actual: Vec<&str> = actual_owned.iter().map(|s| s.as_str()).collect();
        declared.sort_unstable();
        actual.sort_unstable();
        if declared != actual {
            return Err(Error::RuleSet(format!(
                "rule {:?}: declared fields {:?} do not match referenced fields {:?}",
                rule.id, declared, actual
            )));
        }
        Ok(rule)
    }
}

/// A versioned collection of rules. Order is the canonical rule order used by
/// labels, model modules and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub version: String,
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(version: impl Into<String>, rules: Vec<Rule>) -> Result<Self> {
        let rs = RuleSet { version: version.into(), rules };
        rs.check()?;
        Ok(rs)
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    pub fn rule_ids(&self) -> Vec<String> {
        self.rules.iter().map(|r| r.id.clone()).collect()
    }

    pub fn rule(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn check(&self) -> Result<()> {
        if self.version.is_empty() {
            return Err(Error::RuleSet("ruleset version is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for rule in &self.rules {
            if rule.id.is_empty() {
                return Err(Error::RuleSet("rule with empty id".into()));
            }
            if !seen.insert(rule.id.as_str()) {
                return Err(Error::RuleSet(format!("duplicate rule id {:?}", rule.id)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rs: RuleSet = serde_json::from_str(text)?;
        rs.check()?;
        Ok(rs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Validate one message against every rule; codes follow ruleset order.
    pub fn validate_message(&self, message: &Message) -> Result<ValidationReport> {
        let mut codes = Vec::with_capacity(self.rules.len());
        for rule in &self.rules {
            codes.push(rule.validate(message)?);
        }
        Ok(ValidationReport { codes })
    }

    /// Validate a batch of messages. Reports are positionally aligned with
    /// the input order regardless of internal parallelism.
    pub fn validate_batch(&self, messages: &[Message]) -> Result<Vec<ValidationReport>> {
        use rayon::prelude::*;
        messages
            .par_iter()
            .map(|m| self.validate_message(m))
            .collect()
    }
}

/// One code per rule, aligned with the ruleset's rule order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub codes: Vec<ResultCode>,
}

impl ValidationReport {
    /// Codes keyed by rule id, in ruleset order.
    pub fn by_rule<'a>(&'a self, rules: &'a RuleSet) -> Vec<(&'a str, ResultCode)> {
        rules
            .rules
            .iter()
            .zip(&self.codes)
            .map(|(r, c)| (r.id.as_str(), *c))
            .collect()
    }
}

/// Id-level difference between two ruleset versions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleDiff {
    /// Ids present only in the new version (new version's order).
    pub added: Vec<String>,
    /// Ids present only in the old version (old version's order).
    pub removed: Vec<String>,
    /// Ids present in both with changed prereq/check/severity.
    pub modified: Vec<String>,
    /// Ids present in both with identical validation logic.
    pub retained: Vec<String>,
}

/// Compare two ruleset versions by rule id.
pub fn diff(old: &RuleSet, new: &RuleSet) -> RuleDiff {
    let mut added = Vec::new();
    let mut modified = Vec::new();
    let mut retained = Vec::new();
    for rule in &new.rules {
        match old.rule(&rule.id) {
            None => added.push(rule.id.clone()),
            Some(prev) if prev.same_logic(rule) => retained.push(rule.id.clone()),
            Some(_) => modified.push(rule.id.clone()),
        }
    }
    let removed = old
        .rules
        .iter()
        .filter(|r| new.rule(&r.id).is_none())
        .map(|r| r.id.clone())
        .collect();
    RuleDiff { added, removed, modified, retained }
}
