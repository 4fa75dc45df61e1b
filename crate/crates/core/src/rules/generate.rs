//! Synthetic rule generation and ruleset version evolution.
//!
//! Rules are drawn from a small library of templates over the schema's field
//! kinds (categorical gates, numeric ranges, date ordering, age thresholds).
//! Each generated rule ships with at least one violation recipe: concrete,
//! schema-valid field assignments that satisfy the prerequisite and break the
//! check, so a generated corpus can be forced to contain real violations.
//!
//! Rule "arity" is the number of distinct fields a rule touches (1-3); the
//! requested arity mix controls ruleset complexity. Only categorical fields,
//! numerical fields and `*_date` textual fields participate in rules — opaque
//! identifier fields stay rule-free.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{Expr, FailSeverity, Recipe, Rule, RuleSet};
use crate::schema::{FieldKind, FieldSpec, MessageSchema, Value};

/// Parameters for generating a fresh ruleset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleGenSpec {
    pub count: usize,
    /// Relative weight of 1-, 2- and 3-field rules.
    pub arity_weights: [f64; 3],
    /// Probability that a failed check is an error (otherwise a warning).
    pub error_severity_prob: f64,
    pub version: String,
    pub seed: u64,
}

impl RuleGenSpec {
    pub fn new(count: usize, arity_weights: [f64; 3], version: impl Into<String>, seed: u64) -> Self {
        RuleGenSpec {
            count,
            arity_weights,
            error_severity_prob: 0.7,
            version: version.into(),
            seed,
        }
    }
}

/// Parameters for evolving a ruleset into a new version.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveSpec {
    pub additions: usize,
    pub modifications: usize,
    pub removals: usize,
    pub arity_weights: [f64; 3],
    pub error_severity_prob: f64,
    pub version: String,
    pub seed: u64,
}

impl EvolveSpec {
    pub fn additions_only(
        additions: usize,
        arity_weights: [f64; 3],
        version: impl Into<String>,
        seed: u64,
    ) -> Self {
        EvolveSpec {
            additions,
            modifications: 0,
            removals: 0,
            arity_weights,
            error_severity_prob: 0.7,
            version: version.into(),
            seed,
        }
    }
}

/// Generate a deterministic ruleset over the schema.
pub fn generate_ruleset(schema: &MessageSchema, spec: &RuleGenSpec) -> Result<RuleSet> {
    schema.check()?;
    let pools = FieldPools::new(schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rules = Vec::with_capacity(spec.count);
    for index in 0..spec.count {
        let id = format!("r{:03}", index + 1);
        rules.push(random_rule(&id, &pools, spec.arity_weights, spec.error_severity_prob, &mut rng)?);
    }
    RuleSet::new(spec.version.clone(), rules)
}

/// Evolve `base` into a new version: remove, modify, then append rules.
/// Retained rules keep their ids and logic; added rules get fresh ids that
/// continue the numbering.
pub fn evolve_ruleset(schema: &MessageSchema, base: &RuleSet, spec: &EvolveSpec) -> Result<RuleSet> {
    schema.check()?;
    let pools = FieldPools::new(schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    if spec.removals + spec.modifications > base.rules.len() {
        return Err(Error::Config(format!(
            "cannot remove {} and modify {} rules out of {}",
            spec.removals,
            spec.modifications,
            base.rules.len()
        )));
    }

    let mut rules = base.rules.clone();

    // Removals and modifications target disjoint random rules.
    let mut touched: Vec<usize> = (0..rules.len()).collect();
    touched.shuffle(&mut rng);
    let removed: Vec<usize> = touched[..spec.removals].to_vec();
    let modified: Vec<usize> = touched[spec.removals..spec.removals + spec.modifications].to_vec();

    for &index in &modified {
        let id = rules[index].id.clone();
        let fresh = random_rule(&id, &pools, spec.arity_weights, spec.error_severity_prob, &mut rng)?;
        // A regenerated body can coincide with the old one only by template
        // collision; retry a few times so "modified" really means modified.
        let mut replacement = fresh;
        for _ in 0..8 {
            if !replacement.same_logic(&rules[index]) {
                break;
            }
            replacement =
                random_rule(&id, &pools, spec.arity_weights, spec.error_severity_prob, &mut rng)?;
        }
        rules[index] = replacement;
    }

    let mut keep: Vec<Rule> = rules
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, r)| r)
        .collect();

    let mut next_number = base
        .rules
        .iter()
        .filter_map(|r| r.id.strip_prefix('r').and_then(|s| s.parse::<usize>().ok()))
        .max()
        .unwrap_or(base.rules.len());
    for _ in 0..spec.additions {
        next_number += 1;
        let id = format!("r{next_number:03}");
        keep.push(random_rule(&id, &pools, spec.arity_weights, spec.error_severity_prob, &mut rng)?);
    }

    RuleSet::new(spec.version.clone(), keep)
}

// ---------------------------------------------------------------------------
// Field pools and templates
// ---------------------------------------------------------------------------

struct FieldPools<'a> {
    cats: Vec<&'a FieldSpec>,
    nums: Vec<&'a FieldSpec>,
    dates: Vec<&'a FieldSpec>,
}

impl<'a> FieldPools<'a> {
    fn new(schema: &'a MessageSchema) -> Result<Self> {
        let mut pools = FieldPools { cats: Vec::new(), nums: Vec::new(), dates: Vec::new() };
        for spec in &schema.fields {
            match &spec.kind {
                FieldKind::Categorical { domain } if domain.len() >= 2 => pools.cats.push(spec),
                FieldKind::Numerical { min, max } => {
                    // Templates need room for a threshold strictly inside the
                    // bounds plus a violating value above it.
                    if max.floor() - min.ceil() >= 3.0 {
                        pools.nums.push(spec);
                    }
                }
                FieldKind::Textual { max_len } if spec.name.ends_with("_date") && *max_len >= 10 => {
                    pools.dates.push(spec)
                }
                _ => {}
            }
        }
        if pools.cats.is_empty() && pools.nums.is_empty() && pools.dates.is_empty() {
            return Err(Error::Schema(
                "schema has no fields usable in rule templates".into(),
            ));
        }
        Ok(pools)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Template {
    CatMembership,
    NumRange,
    DateWindow,
    CatGateCat,
    CatGateNum,
    CatGateDate,
    DateOrder,
    NumGateDateOrder,
    CatGateAge,
    TwoCatGateNum,
}

impl Template {
    fn arity(self) -> usize {
        match self {
            Template::CatMembership | Template::NumRange | Template::DateWindow => 1,
            Template::CatGateCat
            | Template::CatGateNum
            | Template::CatGateDate
            | Template::DateOrder => 2,
            Template::NumGateDateOrder | Template::CatGateAge | Template::TwoCatGateNum => 3,
        }
    }

    fn applicable(self, pools: &FieldPools) -> bool {
        let c = pools.cats.len();
        let n = pools.nums.len();
        let d = pools.dates.len();
        match self {
            Template::CatMembership => c >= 1,
            Template::NumRange => n >= 1,
            Template::DateWindow => d >= 1,
            Template::CatGateCat => c >= 2,
            Template::CatGateNum => c >= 1 && n >= 1,
            Template::CatGateDate => c >= 1 && d >= 1,
            Template::DateOrder => d >= 2,
            Template::NumGateDateOrder => n >= 1 && d >= 2,
            Template::CatGateAge => c >= 1 && d >= 2,
            Template::TwoCatGateNum => c >= 2 && n >= 1,
        }
    }
}

const ALL_TEMPLATES: [Template; 10] = [
    Template::CatMembership,
    Template::NumRange,
    Template::DateWindow,
    Template::CatGateCat,
    Template::CatGateNum,
    Template::CatGateDate,
    Template::DateOrder,
    Template::NumGateDateOrder,
    Template::CatGateAge,
    Template::TwoCatGateNum,
];

fn random_rule(
    id: &str,
    pools: &FieldPools,
    arity_weights: [f64; 3],
    error_severity_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Rule> {
    // Sample a target arity, falling back to what the schema supports.
    let applicable: Vec<Template> = ALL_TEMPLATES
        .iter()
        .copied()
        .filter(|t| t.applicable(pools))
        .collect();
    debug_assert!(!applicable.is_empty());
    let total: f64 = arity_weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("arity weights sum to zero".into()));
    }
    let mut pick = rng.gen_range(0.0..total);
    let mut arity = 1;
    for (i, w) in arity_weights.iter().enumerate() {
        if pick < *w {
            arity = i + 1;
            break;
        }
        pick -= w;
    }
    let candidates: Vec<Template> = applicable
        .iter()
        .copied()
        .filter(|t| t.arity() == arity)
        .collect();
    let template = *candidates
        .choose(rng)
        .or_else(|| applicable.choose(rng))
        .expect("at least one applicable template");

    let severity = if rng.gen_bool(error_severity_prob) {
        FailSeverity::Error
    } else {
        FailSeverity::Warning
    };
    let (prereq, check, recipes) = instantiate(template, pools, rng);
    let mut rule = Rule::new(id, prereq, check, severity);
    rule.recipes = recipes;
    Ok(rule)
}

/// Build (prereq, check, recipes) for a template. Recipe values stay strictly
/// inside schema bounds so recipe-carrying messages remain schema-valid.
fn instantiate(
    template: Template,
    pools: &FieldPools,
    rng: &mut ChaCha8Rng,
) -> (Expr, Expr, Vec<Recipe>) {
    let field = |name: &str| Expr::Field(name.to_string());
    match template {
        Template::CatMembership => {
            let f = pools.cats.choose(rng).unwrap();
            let domain = domain_of(f);
            let gate = random_subset(domain, 2.max(domain.len() / 2), domain.len(), rng);
            let allowed = random_subset(&gate, 1, gate.len() - 1, rng);
            let bad = gate.iter().find(|v| !allowed.contains(v)).unwrap().clone();
            let prereq = Expr::InSet(Box::new(field(&f.name)), gate.clone());
            let check = Expr::InSet(Box::new(field(&f.name)), allowed);
            let recipe = recipe(&[(&f.name, Value::Str(bad))]);
            (prereq, check, vec![recipe])
        }
        Template::NumRange => {
            let f = pools.nums.choose(rng).unwrap();
            let (lo, hi, above) = num_split(f, rng);
            let prereq = Expr::Cmp(
                crate::rules::CmpOp::Ge,
                Box::new(field(&f.name)),
                Box::new(Expr::Num(lo)),
            );
            let check = Expr::Cmp(
                crate::rules::CmpOp::Le,
                Box::new(field(&f.name)),
                Box::new(Expr::Num(hi)),
            );
            let recipe = recipe(&[(&f.name, Value::Num(above))]);
            (prereq, check, vec![recipe])
        }
        Template::DateWindow => {
            let f = pools.dates.choose(rng).unwrap();
            let lo_year = rng.gen_range(1935..=1955);
            let hi_year = rng.gen_range(1995..=2018);
            let lo = format!("{lo_year:04}-01-01");
            let hi = format!("{hi_year:04}-12-28");
            let prereq = Expr::Cmp(
                crate::rules::CmpOp::Le,
                Box::new(field(&f.name)),
                Box::new(Expr::Str(hi)),
            );
            let check = Expr::Cmp(
                crate::rules::CmpOp::Ge,
                Box::new(field(&f.name)),
                Box::new(Expr::Str(lo)),
            );
            let bad_year = rng.gen_range(1930..lo_year);
            let recipe = recipe(&[(&f.name, Value::Str(format!("{bad_year:04}-06-15")))]);
            (prereq, check, vec![recipe])
        }
        Template::CatGateCat => {
            let picked = pick_two(&pools.cats, rng);
            let (g, f) = (picked.0, picked.1);
            let gate_value = domain_of(g).choose(rng).unwrap().clone();
            let domain = domain_of(f);
            let allowed = random_subset(domain, 1, domain.len() - 1, rng);
            let bad = domain.iter().find(|v| !allowed.contains(v)).unwrap().clone();
            let prereq = Expr::Cmp(
                crate::rules::CmpOp::Eq,
                Box::new(field(&g.name)),
                Box::new(Expr::Str(gate_value.clone())),
            );
            let check = Expr::InSet(Box::new(field(&f.name)), allowed);
            let recipe = recipe(&[(&g.name, Value::Str(gate_value)), (&f.name, Value::Str(bad))]);
            (prereq, check, vec![recipe])
        }
        Template::CatGateNum => {
            let g = pools.cats.choose(rng).unwrap();
            let f = pools.nums.choose(rng).unwrap();
            let domain = domain_of(g);
            let gate = random_subset(domain, 1, (domain.len() - 1).max(1), rng);
            let gate_value = gate.choose(rng).unwrap().clone();
            let (lo, hi, above) = num_split(f, rng);
            let prereq = Expr::InSet(Box::new(field(&g.name)), gate);
            let check = Expr::And(
                Box::new(Expr::Cmp(
                    crate::rules::CmpOp::Ge,
                    Box::new(field(&f.name)),
                    Box::new(Expr::Num(lo)),
                )),
                Box::new(Expr::Cmp(
                    crate::rules::CmpOp::Le,
                    Box::new(field(&f.name)),
                    Box::new(Expr::Num(hi)),
                )),
            );
            let recipe = recipe(&[(&g.name, Value::Str(gate_value)), (&f.name, Value::Num(above))]);
            (prereq, check, vec![recipe])
        }
        Template::CatGateDate => {
            let g = pools.cats.choose(rng).unwrap();
            let f = pools.dates.choose(rng).unwrap();
            let gate_value = domain_of(g).choose(rng).unwrap().clone();
            let lo_year = rng.gen_range(1935..=1960);
            let lo = format!("{lo_year:04}-01-01");
            let prereq = Expr::Cmp(
                crate::rules::CmpOp::Eq,
                Box::new(field(&g.name)),
                Box::new(Expr::Str(gate_value.clone())),
            );
            let check = Expr::Cmp(
                crate::rules::CmpOp::Ge,
                Box::new(field(&f.name)),
                Box::new(Expr::Str(lo)),
            );
            let bad_year = rng.gen_range(1930..lo_year);
            let recipe = recipe(&[
                (&g.name, Value::Str(gate_value)),
                (&f.name, Value::Str(format!("{bad_year:04}-03-10"))),
            ]);
            (prereq, check, vec![recipe])
        }
        Template::DateOrder => {
            let picked = pick_two(&pools.dates, rng);
            let (a, b) = (picked.0, picked.1);
            let prereq = Expr::Cmp(
                crate::rules::CmpOp::Ge,
                Box::new(field(&a.name)),
                Box::new(Expr::Str("1930-01-01".into())),
            );
            let check = Expr::Cmp(
                crate::rules::CmpOp::Le,
                Box::new(field(&a.name)),
                Box::new(field(&b.name)),
            );
            let recipe = recipe(&[
                (&a.name, Value::Str("2012-09-20".into())),
                (&b.name, Value::Str("1987-04-05".into())),
            ]);
            (prereq, check, vec![recipe])
        }
        Template::NumGateDateOrder => {
            let n = pools.nums.choose(rng).unwrap();
            let picked = pick_two(&pools.dates, rng);
            let (a, b) = (picked.0, picked.1);
            let (lo, _, above) = num_split(n, rng);
            let prereq = Expr::Cmp(
                crate::rules::CmpOp::Ge,
                Box::new(field(&n.name)),
                Box::new(Expr::Num(lo)),
            );
            let check = Expr::Cmp(
                crate::rules::CmpOp::Le,
                Box::new(field(&a.name)),
                Box::new(field(&b.name)),
            );
            let recipe = recipe(&[
                (&n.name, Value::Num(above)),
                (&a.name, Value::Str("2014-11-11".into())),
                (&b.name, Value::Str("1991-02-02".into())),
            ]);
            (prereq, check, vec![recipe])
        }
        Template::CatGateAge => {
            let g = pools.cats.choose(rng).unwrap();
            let picked = pick_two(&pools.dates, rng);
            let (birth, diag) = (picked.0, picked.1);
            let domain = domain_of(g);
            let gate = random_subset(domain, 1, (domain.len() - 1).max(1), rng);
            let gate_value = gate.choose(rng).unwrap().clone();
            let min_age = rng.gen_range(5..=40);
            let prereq = Expr::InSet(Box::new(field(&g.name)), gate);
            let check = Expr::Cmp(
                crate::rules::CmpOp::Ge,
                Box::new(Expr::Age(
                    Box::new(field(&birth.name)),
                    Box::new(field(&diag.name)),
                )),
                Box::new(Expr::Num(min_age as f64)),
            );
            let recipe = recipe(&[
                (&g.name, Value::Str(gate_value)),
                (&birth.name, Value::Str("2016-05-01".into())),
                (&diag.name, Value::Str("2018-05-01".into())),
            ]);
            (prereq, check, vec![recipe])
        }
        Template::TwoCatGateNum => {
            let picked = pick_two(&pools.cats, rng);
            let (g1, g2) = (picked.0, picked.1);
            let n = pools.nums.choose(rng).unwrap();
            let v1 = domain_of(g1).choose(rng).unwrap().clone();
            let domain2 = domain_of(g2);
            let gate2 = random_subset(domain2, 1, (domain2.len() - 1).max(1), rng);
            let v2 = gate2.choose(rng).unwrap().clone();
            let (_, hi, above) = num_split(n, rng);
            let prereq = Expr::And(
                Box::new(Expr::Cmp(
                    crate::rules::CmpOp::Eq,
                    Box::new(field(&g1.name)),
                    Box::new(Expr::Str(v1.clone())),
                )),
                Box::new(Expr::InSet(Box::new(field(&g2.name)), gate2)),
            );
            let check = Expr::Cmp(
                crate::rules::CmpOp::Le,
                Box::new(field(&n.name)),
                Box::new(Expr::Num(hi)),
            );
            let recipe = recipe(&[
                (&g1.name, Value::Str(v1)),
                (&g2.name, Value::Str(v2)),
                (&n.name, Value::Num(above)),
            ]);
            (prereq, check, vec![recipe])
        }
    }
}

fn domain_of<'a>(spec: &'a FieldSpec) -> &'a Vec<String> {
    match &spec.kind {
        FieldKind::Categorical { domain } => domain,
        _ => unreachable!("pool only holds categorical fields"),
    }
}

/// Random subset with size in `[min_size, max_size]`, preserving domain order.
fn random_subset(
    domain: &[String],
    min_size: usize,
    max_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let min_size = min_size.clamp(1, domain.len());
    let max_size = max_size.clamp(min_size, domain.len());
    let size = rng.gen_range(min_size..=max_size);
    let mut indices: Vec<usize> = (0..domain.len()).collect();
    indices.shuffle(rng);
    let mut chosen: Vec<usize> = indices[..size].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| domain[i].clone()).collect()
}

/// Sample `lo < hi` strictly inside a numerical field's integer span and a
/// violating value in `(hi, max]`.
fn num_split(spec: &FieldSpec, rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let (min, max) = match spec.kind {
        FieldKind::Numerical { min, max } => (min.ceil() as i64, max.floor() as i64),
        _ => unreachable!("pool only holds numerical fields"),
    };
    debug_assert!(max - min >= 3);
    let lo = rng.gen_range(min..=max - 3);
    let hi = rng.gen_range(lo + 1..=max - 1);
    let above = rng.gen_range(hi + 1..=max);
    (lo as f64, hi as f64, above as f64)
}

fn pick_two<'a>(pool: &[&'a FieldSpec], rng: &mut ChaCha8Rng) -> (&'a FieldSpec, &'a FieldSpec) {
    debug_assert!(pool.len() >= 2);
    let first = rng.gen_range(0..pool.len());
    let mut second = rng.gen_range(0..pool.len() - 1);
    if second >= first {
        second += 1;
    }
    (pool[first], pool[second])
}

fn recipe(assignments: &[(&str, Value)]) -> Recipe {
    Recipe {
        assignments: assignments
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect(),
    }
}
