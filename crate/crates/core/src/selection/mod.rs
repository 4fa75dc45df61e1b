//! Query-subset selection over a candidate corpus.
//!
//! Given a pool of candidate messages, the twin's predictions on them and the
//! source service's verdicts, the selector searches for small subsets that
//! are diverse, distribution-matching, error-revealing and uncertain — five
//! objectives optimized together by an indicator-based evolutionary search
//! (see [`ibea`]). Everything the objectives need is cached up front in a
//! [`CandidateSet`]; evaluating a subset touches no model and no rule engine.

pub mod ibea;

pub use ibea::{ibea_search, pick_solution, SearchConfig};

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::predicted_code;
use crate::rules::ResultCode;
use crate::schema::{Message, MessageSchema};

/// Tolerance for "this vector sums to 1" checks on probability inputs.
const NORM_TOL: f64 = 1e-9;

/// How per-pair field agreement enters the diversity objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityMode {
    /// `1 - identical_fields / nv`: higher means more diverse (default).
    #[default]
    Divergence,
    /// `identical_fields / nv` taken verbatim: higher means more duplication.
    /// Kept for fidelity experiments against the divergence form.
    LiteralSimilarity,
}

/// A subset of the candidate pool, as a bitmask over candidate indices.
///
/// Serialized as a run-length string (`"5x0,3x1"` = five zeros then three
/// ones) so reports stay compact for large pools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solution {
    pub bits: Vec<bool>,
}

impl Solution {
    pub fn empty(nc: usize) -> Self {
        Solution { bits: vec![false; nc] }
    }

    pub fn from_indices(nc: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; nc];
        for &i in indices {
            if i >= nc {
                return Err(Error::Selection(format!(
                    "index {i} out of range for {nc} candidates"
                )));
            }
            bits[i] = true;
        }
        Ok(Solution { bits })
    }

    /// Number of selected candidates (`nps`).
    pub fn size(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
    }

    /// Run-length encoding: runs of equal bits as `{len}x{bit}`, joined by
    /// commas. The empty mask encodes as the empty string.
    pub fn to_rle(&self) -> String {
        let mut out = String::new();
        let mut run_bit = None;
        let mut run_len = 0usize;
        for &b in &self.bits {
            match run_bit {
                Some(rb) if rb == b => run_len += 1,
                Some(rb) => {
                    push_run(&mut out, run_len, rb);
                    run_bit = Some(b);
                    run_len = 1;
                }
                None => {
                    run_bit = Some(b);
                    run_len = 1;
                }
            }
        }
        if let Some(rb) = run_bit {
            push_run(&mut out, run_len, rb);
        }
        out
    }

    pub fn from_rle(s: &str) -> Result<Self> {
        let mut bits = Vec::new();
        if s.is_empty() {
            return Ok(Solution { bits });
        }
        for token in s.split(',') {
            let (len, bit) = token
                .split_once('x')
                .ok_or_else(|| Error::Selection(format!("bad RLE token {token:?}")))?;
            let len: usize = len
                .parse()
                .map_err(|_| Error::Selection(format!("bad RLE run length {len:?}")))?;
            let bit = match bit {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Selection(format!("bad RLE bit {other:?}")));
                }
            };
            if len == 0 {
                return Err(Error::Selection("RLE run length cannot be 0".into()));
            }
            bits.extend(std::iter::repeat(bit).take(len));
        }
        Ok(Solution { bits })
    }
}

fn push_run(out: &mut String, len: usize, bit: bool) {
    use fmt::Write;
    if !out.is_empty() {
        out.push(',');
    }
    write!(out, "{}x{}", len, if bit { 1 } else { 0 }).expect("string write");
}

impl Serialize for Solution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_rle())
    }
}

impl<'de> Deserialize<'de> for Solution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Solution::from_rle(&s).map_err(serde::de::Error::custom)
    }
}

/// The five objective values of one subset.
///
/// `ss` is minimized; the other four are maximized. Invariant ranges:
/// `cmd, fpp` in [0, 1], `rcd` in [-ln 2, 0], `pu` in [0, ln 4].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub ss: usize,
    pub cmd: f64,
    pub rcd: f64,
    pub fpp: f64,
    pub pu: f64,
}

impl ObjectiveVector {
    /// All five objectives cast to minimization order for dominance checks
    /// and the search: `[ss, -cmd, -rcd, -fpp, -pu]`.
    pub fn to_minimization(&self) -> [f64; 5] {
        [
            self.ss as f64,
            -self.cmd,
            -self.rcd,
            -self.fpp,
            -self.pu,
        ]
    }

    /// Strict Pareto dominance (in minimization form).
    pub fn dominates(&self, other: &ObjectiveVector) -> bool {
        let a = self.to_minimization();
        let b = other.to_minimization();
        let mut strictly = false;
        for d in 0..5 {
            if a[d] > b[d] {
                return false;
            }
            if a[d] < b[d] {
                strictly = true;
            }
        }
        strictly
    }
}

/// The candidate pool plus every cache the objectives read.
///
/// * `predictions[i][j]`: the twin's probability vector for message `i`,
///   rule `j` (in `rule_ids` order).
/// * `truth[i][j]`: the source service's verdict for the same pair.
/// * Per-rule reference distributions are the argmax-code frequencies over
///   the whole pool; subsets are pulled towards them by the distribution
///   objective.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub dataset: Dataset,
    pub rule_ids: Vec<String>,
    pub predictions: Vec<Vec<[f64; 4]>>,
    pub truth: Vec<Vec<ResultCode>>,
    pub diversity: DiversityMode,
    /// Per message, per schema field: a small integer identifying the value
    /// (equal integers iff equal raw values).
    value_ids: Vec<Vec<u32>>,
    /// Distinct value count per field (sizes the counting arrays).
    field_cardinality: Vec<usize>,
    /// Per message, per rule: argmax-predicted code index.
    pred_codes: Vec<Vec<u8>>,
    /// Per rule: predicted-code distribution over the full pool.
    reference_dist: Vec<[f64; 4]>,
    /// Per message: mean prediction entropy over rules.
    msg_uncertainty: Vec<f64>,
    /// Per message: true iff any rule's argmax disagrees with the truth.
    msg_fp: Vec<bool>,
}

impl CandidateSet {
    pub fn build(
        dataset: Dataset,
        rule_ids: Vec<String>,
        predictions: Vec<Vec<[f64; 4]>>,
        truth: Vec<Vec<ResultCode>>,
        diversity: DiversityMode,
    ) -> Result<Self> {
        let n = dataset.len();
        let nr = rule_ids.len();
        if n < 2 {
            return Err(Error::Selection(format!(
                "need at least 2 candidates, got {n}"
            )));
        }
        if nr == 0 {
            return Err(Error::Selection("candidate set has no rules".into()));
        }
        if predictions.len() != n || truth.len() != n {
            return Err(Error::Selection(format!(
                "cache misaligned: {n} messages vs {} predictions / {} truth rows",
                predictions.len(),
                truth.len()
            )));
        }
        for (i, (p, t)) in predictions.iter().zip(&truth).enumerate() {
            if p.len() != nr || t.len() != nr {
                return Err(Error::Selection(format!(
                    "message {i}: expected {nr} rules, got {} predictions / {} truth codes",
                    p.len(),
                    t.len()
                )));
            }
            for (j, pv) in p.iter().enumerate() {
                check_probability_vector(pv).map_err(|e| {
                    Error::Selection(format!("message {i}, rule {:?}: {e}", rule_ids[j]))
                })?;
            }
        }

        // Field-value identities for the diversity objective.
        let schema = &dataset.schema;
        let nv = schema.field_count();
        let mut value_ids = vec![vec![0u32; nv]; n];
        let mut field_cardinality = vec![0usize; nv];
        for (f, spec) in schema.fields.iter().enumerate() {
            let mut seen: HashMap<crate::schema::ValueId<'_>, u32> = HashMap::new();
            for (i, m) in dataset.messages.iter().enumerate() {
                let value = m.get(&spec.name).ok_or_else(|| {
                    Error::Selection(format!("message {i} lacks field {:?}", spec.name))
                })?;
                let next = seen.len() as u32;
                let id = *seen.entry(value.identity()).or_insert(next);
                value_ids[i][f] = id;
            }
            field_cardinality[f] = seen.len();
        }

        let pred_codes: Vec<Vec<u8>> = predictions
            .iter()
            .map(|row| {
                row.iter()
                    .map(|pv| predicted_code(pv).index() as u8)
                    .collect()
            })
            .collect();

        let mut reference_dist = vec![[0.0f64; 4]; nr];
        for row in &pred_codes {
            for (j, &c) in row.iter().enumerate() {
                reference_dist[j][c as usize] += 1.0;
            }
        }
        for dist in &mut reference_dist {
            for v in dist.iter_mut() {
                *v /= n as f64;
            }
        }

        let msg_uncertainty = predictions
            .iter()
            .map(|row| message_uncertainty(row))
            .collect::<Result<Vec<_>>>()?;

        let msg_fp = pred_codes
            .iter()
            .zip(&truth)
            .map(|(pred, tru)| {
                pred.iter()
                    .zip(tru.iter())
                    .any(|(&p, t)| p as usize != t.index())
            })
            .collect();

        Ok(CandidateSet {
            dataset,
            rule_ids,
            predictions,
            truth,
            diversity,
            value_ids,
            field_cardinality,
            pred_codes,
            reference_dist,
            msg_uncertainty,
            msg_fp,
        })
    }

    /// Number of candidates (`nc`).
    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn rule_count(&self) -> usize {
        self.rule_ids.len()
    }

    /// The per-rule predicted-code distribution over the whole pool.
    pub fn reference_distribution(&self, rule: usize) -> [f64; 4] {
        self.reference_dist[rule]
    }
}

fn check_probability_vector(pv: &[f64; 4]) -> Result<()> {
    let mut sum = 0.0;
    for &p in pv {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Selection(format!(
                "probability entry {p} is negative or not finite"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(Error::Selection(format!(
            "probability vector sums to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Subset size: the number of selected messages.
pub fn objective_ss(sol: &Solution) -> usize {
    sol.size()
}

/// Fraction of fields on which two messages disagree (or agree, in
/// [`DiversityMode::LiteralSimilarity`]). Symmetric; 0 iff the divergence of
/// identical messages; 1 iff they differ in every field.
pub fn pair_divergence(a: &Message, b: &Message, schema: &MessageSchema) -> Result<f64> {
    Ok(1.0 - pair_similarity(a, b, schema)?)
}

/// Fraction of fields on which two messages carry identical values.
pub fn pair_similarity(a: &Message, b: &Message, schema: &MessageSchema) -> Result<f64> {
    let nv = schema.field_count();
    if nv == 0 {
        return Err(Error::Selection("schema has no fields".into()));
    }
    let mut identical = 0usize;
    for spec in &schema.fields {
        let va = a
            .get(&spec.name)
            .ok_or_else(|| Error::Selection(format!("message lacks field {:?}", spec.name)))?;
        let vb = b
            .get(&spec.name)
            .ok_or_else(|| Error::Selection(format!("message lacks field {:?}", spec.name)))?;
        if va.identity() == vb.identity() {
            identical += 1;
        }
    }
    Ok(identical as f64 / nv as f64)
}

/// Mean pairwise divergence (or similarity) over all unordered pairs of the
/// subset; 0 by convention when fewer than two messages are selected.
///
/// Computed from per-field value counts: a field with `cnt` occurrences of
/// one value contributes `C(cnt, 2)` identical pairs, so the mean similarity
/// is `sum_f sum_v C(cnt_fv, 2) / (nv * C(nps, 2))` without touching pairs.
pub fn objective_cmd(sol: &Solution, cs: &CandidateSet) -> f64 {
    let nps = sol.size();
    if nps < 2 {
        return 0.0;
    }
    let nv = cs.field_cardinality.len();
    let mut counts: Vec<Vec<u64>> = cs
        .field_cardinality
        .iter()
        .map(|&card| vec![0u64; card])
        .collect();
    for i in sol.indices() {
        for (f, &vid) in cs.value_ids[i].iter().enumerate() {
            counts[f][vid as usize] += 1;
        }
    }
    let mut identical_pairs = 0u64;
    for field in &counts {
        for &cnt in field {
            if cnt >= 2 {
                identical_pairs += cnt * (cnt - 1) / 2;
            }
        }
    }
    let total_pairs = (nps as u64) * (nps as u64 - 1) / 2;
    let similarity = identical_pairs as f64 / (nv as f64 * total_pairs as f64);
    match cs.diversity {
        DiversityMode::Divergence => 1.0 - similarity,
        DiversityMode::LiteralSimilarity => similarity,
    }
}

/// Jensen-Shannon divergence between two distributions on the four result
/// codes: `(KL(P||M) + KL(Q||M)) / 2` with `M = (P+Q)/2`, natural log,
/// `0 * ln 0 := 0`. Symmetric, zero iff `P = Q`, at most `ln 2`.
pub fn js_divergence(p: &[f64; 4], q: &[f64; 4]) -> Result<f64> {
    check_probability_vector(p)?;
    check_probability_vector(q)?;
    Ok(js_core(p, q))
}

fn js_core(p: &[f64; 4], q: &[f64; 4]) -> f64 {
    let mut js = 0.0;
    for k in 0..4 {
        let m = 0.5 * (p[k] + q[k]);
        if p[k] > 0.0 {
            js += 0.5 * p[k] * (p[k] / m).ln();
        }
        if q[k] > 0.0 {
            js += 0.5 * q[k] * (q[k] / m).ln();
        }
    }
    js
}

/// Empirical frequencies of the four result codes in a non-empty sample.
pub fn result_code_distribution(codes: &[ResultCode]) -> Result<[f64; 4]> {
    if codes.is_empty() {
        return Err(Error::Selection(
            "cannot take a code distribution of an empty set".into(),
        ));
    }
    let mut dist = [0.0f64; 4];
    for c in codes {
        dist[c.index()] += 1.0;
    }
    for v in &mut dist {
        *v /= codes.len() as f64;
    }
    Ok(dist)
}

/// Distribution closeness: minus the mean, over rules, of the JS divergence
/// between the subset's predicted-code distribution and the whole pool's.
/// Always in `[-ln 2, 0]`; 0 exactly when every rule's subset distribution
/// matches the pool's.
pub fn objective_rcd(sol: &Solution, cs: &CandidateSet) -> f64 {
    let nps = sol.size();
    assert!(nps >= 1, "distribution objective needs a non-empty subset");
    let nr = cs.rule_count();
    let mut counts = vec![[0u64; 4]; nr];
    for i in sol.indices() {
        for (j, &c) in cs.pred_codes[i].iter().enumerate() {
            counts[j][c as usize] += 1;
        }
    }
    let mut total = 0.0;
    for (j, cnt) in counts.iter().enumerate() {
        let dist = [
            cnt[0] as f64 / nps as f64,
            cnt[1] as f64 / nps as f64,
            cnt[2] as f64 / nps as f64,
            cnt[3] as f64 / nps as f64,
        ];
        total += js_core(&dist, &cs.reference_dist[j]);
    }
    -(total / nr as f64)
}

/// Fraction of selected messages on which the twin's argmax disagrees with
/// the recorded truth on at least one rule.
pub fn objective_fpp(sol: &Solution, cs: &CandidateSet) -> f64 {
    let nps = sol.size();
    assert!(nps >= 1, "misprediction objective needs a non-empty subset");
    let fp = sol.indices().filter(|&i| cs.msg_fp[i]).count();
    fp as f64 / nps as f64
}

/// Shannon entropy of a probability vector over the four codes, natural log,
/// `0 * ln 0 := 0`. Ranges over `[0, ln 4]`; maximal iff uniform.
pub fn entropy(pv: &[f64; 4]) -> Result<f64> {
    check_probability_vector(pv)?;
    let mut h = 0.0;
    for &p in pv {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    Ok(h)
}

/// Mean prediction entropy of one message over all its rules.
pub fn message_uncertainty(predictions: &[[f64; 4]]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Selection(
            "message uncertainty needs at least one rule".into(),
        ));
    }
    let mut total = 0.0;
    for pv in predictions {
        total += entropy(pv)?;
    }
    Ok(total / predictions.len() as f64)
}

/// Mean per-message uncertainty over the subset.
pub fn objective_pu(sol: &Solution, cs: &CandidateSet) -> f64 {
    let nps = sol.size();
    assert!(nps >= 1, "uncertainty objective needs a non-empty subset");
    let total: f64 = sol.indices().map(|i| cs.msg_uncertainty[i]).sum();
    total / nps as f64
}

/// All five objectives of a subset, computed purely from the candidate
/// caches. Panics if the mask length does not match the pool or the subset
/// is empty (the search never produces either).
pub fn evaluate_solution(sol: &Solution, cs: &CandidateSet) -> ObjectiveVector {
    assert_eq!(
        sol.bits.len(),
        cs.len(),
        "solution mask length does not match the candidate pool"
    );
    ObjectiveVector {
        ss: objective_ss(sol),
        cmd: objective_cmd(sol, cs),
        rcd: objective_rcd(sol, cs),
        fpp: objective_fpp(sol, cs),
        pu: objective_pu(sol, cs),
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::schema::{FieldKind, FieldSpec, MessageSchema, Value};

    /// A tiny categorical schema for hand-built candidate pools.
    pub fn toy_schema(fields: &[(&str, &[&str])]) -> MessageSchema {
        MessageSchema::new(
            fields
                .iter()
                .map(|(name, values)| FieldSpec {
                    name: name.to_string(),
                    kind: FieldKind::Categorical {
                        domain: values.iter().map(|v| v.to_string()).collect(),
                    },
                })
                .collect(),
        )
        .unwrap()
    }

    pub fn msg(schema: &MessageSchema, values: &[&str]) -> Message {
        let mut m = Message::new();
        for (spec, v) in schema.fields.iter().zip(values) {
            m.set(spec.name.clone(), Value::Str(v.to_string()));
        }
        m
    }

    /// Uniform prediction vector: maximal entropy, argmax = code 0.
    pub fn uniform_pv() -> [f64; 4] {
        [0.25; 4]
    }

    /// A one-hot-ish prediction for the given code.
    pub fn confident_pv(code: usize) -> [f64; 4] {
        let mut pv = [0.01; 4];
        pv[code] = 0.97;
        pv
    }

    /// Builds a candidate set over one rule with the given predictions and
    /// truth codes.
    pub fn candidate_set(
        schema: &MessageSchema,
        rows: &[(&[&str], [f64; 4], ResultCode)],
    ) -> CandidateSet {
        let messages: Vec<Message> = rows.iter().map(|(v, _, _)| msg(schema, v)).collect();
        let dataset = Dataset {
            schema: schema.clone(),
            messages,
            seed: None,
        };
        CandidateSet::build(
            dataset,
            vec!["r1".to_string()],
            rows.iter().map(|(_, pv, _)| vec![*pv]).collect(),
            rows.iter().map(|(_, _, t)| vec![*t]).collect(),
            DiversityMode::Divergence,
        )
        .unwrap()
    }

    /// Brute-force reimplementation of all five objectives, kept deliberately
    /// naive and independent of the cached fast paths.
    pub fn brute_force_objectives(sol: &Solution, cs: &CandidateSet) -> ObjectiveVector {
        let idx: Vec<usize> = sol.indices().collect();
        let nps = idx.len();
        let schema = &cs.dataset.schema;
        let nv = schema.field_count() as f64;

        // Diversity: direct double loop over unordered pairs.
        let mut cmd = 0.0;
        if nps >= 2 {
            let mut total = 0.0;
            for a in 0..nps {
                for b in (a + 1)..nps {
                    let ma = &cs.dataset.messages[idx[a]];
                    let mb = &cs.dataset.messages[idx[b]];
                    let mut identical = 0.0;
                    for spec in &schema.fields {
                        if ma.get(&spec.name).unwrap().identity()
                            == mb.get(&spec.name).unwrap().identity()
                        {
                            identical += 1.0;
                        }
                    }
                    let sim = identical / nv;
                    total += match cs.diversity {
                        DiversityMode::Divergence => 1.0 - sim,
                        DiversityMode::LiteralSimilarity => sim,
                    };
                }
            }
            cmd = total / (nps * (nps - 1) / 2) as f64;
        }

        // Distribution closeness: recompute argmaxes and histograms.
        let argmax = |pv: &[f64; 4]| -> usize {
            let mut best = 0;
            for k in 1..4 {
                if pv[k] > pv[best] {
                    best = k;
                }
            }
            best
        };
        let nr = cs.rule_count();
        let n = cs.len();
        let mut rcd_total = 0.0;
        for j in 0..nr {
            let mut pool = [0.0f64; 4];
            for i in 0..n {
                pool[argmax(&cs.predictions[i][j])] += 1.0;
            }
            for v in &mut pool {
                *v /= n as f64;
            }
            let mut sub = [0.0f64; 4];
            for &i in &idx {
                sub[argmax(&cs.predictions[i][j])] += 1.0;
            }
            for v in &mut sub {
                *v /= nps as f64;
            }
            // Direct JS evaluation.
            let mut js = 0.0;
            for k in 0..4 {
                let m = (sub[k] + pool[k]) / 2.0;
                if sub[k] > 0.0 {
                    js += 0.5 * sub[k] * (sub[k] / m).ln();
                }
                if pool[k] > 0.0 {
                    js += 0.5 * pool[k] * (pool[k] / m).ln();
                }
            }
            rcd_total += js;
        }
        let rcd = -(rcd_total / nr as f64);

        // Mispredictions: any-rule disagreement per message.
        let mut fp = 0usize;
        for &i in &idx {
            let mut wrong = false;
            for j in 0..nr {
                if argmax(&cs.predictions[i][j]) != cs.truth[i][j].index() {
                    wrong = true;
                }
            }
            if wrong {
                fp += 1;
            }
        }
        let fpp = fp as f64 / nps as f64;

        // Uncertainty: direct entropy loops.
        let mut pu_total = 0.0;
        for &i in &idx {
            let mut msg_h = 0.0;
            for j in 0..nr {
                let mut h = 0.0;
                for &p in &cs.predictions[i][j] {
                    if p > 0.0 {
                        h -= p * p.ln();
                    }
                }
                msg_h += h;
            }
            pu_total += msg_h / nr as f64;
        }
        let pu = pu_total / nps as f64;

        ObjectiveVector { ss: nps, cmd, rcd, fpp, pu }
    }
}
