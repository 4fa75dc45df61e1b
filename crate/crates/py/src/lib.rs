//! Python bindings for the validation-surrogate pipeline: schemas, rule
//! sets, twins, subset selection, the evolution loop, and the statistics
//! helpers, all as thin wrappers over the core crate.
//!
//! Messages cross the boundary as plain dicts (`str` or `float` values),
//! result codes as their string labels, and reports as JSON-shaped dicts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use ruletwin::dataset::{generate_messages, label_dataset, Dataset, GenerateConfig, LabelledDataset};
use ruletwin::encoding::fit_encoder;
use ruletwin::metrics::{MetricScope, MetricsReport};
use ruletwin::model::{self, EarlyStopping, ModuleArch, TrainingConfig};
use ruletwin::pipeline::{evolve, EvolutionConfig, QueryClient};
use ruletwin::rules::generate::{evolve_ruleset, generate_ruleset, EvolveSpec, RuleGenSpec};
use ruletwin::rules::{diff, ResultCode, RuleSet as CoreRuleSet};
use ruletwin::schema::{default_schema, Message, MessageSchema, Value};
use ruletwin::selection::{
    ibea_search, pick_solution, CandidateSet, DiversityMode, SearchConfig,
};
use ruletwin::stats;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

// ---------------------------------------------------------------------------
// Conversions

fn message_from_py(obj: &Bound<'_, PyAny>) -> PyResult<Message> {
    let dict = obj.downcast::<PyDict>()?;
    let mut values = BTreeMap::new();
    for (k, v) in dict.iter() {
        let key: String = k.extract()?;
        let value = if let Ok(s) = v.extract::<String>() {
            Value::Str(s)
        } else if let Ok(n) = v.extract::<f64>() {
            Value::Num(n)
        } else {
            return Err(PyValueError::new_err(format!(
                "field {key:?} must be a string or a number"
            )));
        };
        values.insert(key, value);
    }
    Ok(Message { values })
}

fn messages_from_py(objs: &Bound<'_, PyAny>) -> PyResult<Vec<Message>> {
    objs.iter()?.map(|item| message_from_py(&item?)).collect()
}

fn message_to_py<'py>(py: Python<'py>, message: &Message) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new_bound(py);
    for (key, value) in &message.values {
        match value {
            Value::Str(s) => dict.set_item(key, s)?,
            Value::Num(n) => dict.set_item(key, n)?,
        }
    }
    Ok(dict)
}

fn code_from_label(label: &str) -> PyResult<ResultCode> {
    ResultCode::ALL
        .iter()
        .copied()
        .find(|c| c.label() == label)
        .ok_or_else(|| PyValueError::new_err(format!("unknown result code {label:?}")))
}

fn labels_from_py(objs: &Bound<'_, PyAny>) -> PyResult<Vec<Vec<ResultCode>>> {
    objs.iter()?
        .map(|row| {
            row?.iter()?
                .map(|c| code_from_label(&c?.extract::<String>()?))
                .collect()
        })
        .collect()
}

fn labels_to_py(labels: &[Vec<ResultCode>]) -> Vec<Vec<&'static str>> {
    labels
        .iter()
        .map(|row| row.iter().map(|c| c.label()).collect())
        .collect()
}

/// JSON value -> Python object, for reports serialized by the core crate.
fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<PyObject> {
    Ok(match value {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_py(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py(py)
            }
        }
        serde_json::Value::String(s) => s.into_py(py),
        serde_json::Value::Array(items) => {
            let list = PyList::empty_bound(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_py(py)
        }
    })
}

fn report_to_py<T: serde::Serialize>(py: Python<'_>, report: &T) -> PyResult<PyObject> {
    json_to_py(py, &serde_json::to_value(report).map_err(err)?)
}

fn arch_from_name(name: &str) -> PyResult<ModuleArch> {
    match name {
        "tiny" => Ok(ModuleArch::tiny()),
        "small" => Ok(ModuleArch::small()),
        other => Err(PyValueError::new_err(format!(
            "unknown architecture {other:?}; expected \"tiny\" or \"small\""
        ))),
    }
}

fn dataset_from_py(
    schema: &Schema,
    messages: &Bound<'_, PyAny>,
) -> PyResult<Dataset> {
    Ok(Dataset {
        schema: schema.inner.clone(),
        messages: messages_from_py(messages)?,
        seed: None,
    })
}

fn labelled_from_py(
    schema: &Schema,
    messages: &Bound<'_, PyAny>,
    labels: &Bound<'_, PyAny>,
    rule_ids: Vec<String>,
) -> PyResult<LabelledDataset> {
    let data = LabelledDataset {
        dataset: dataset_from_py(schema, messages)?,
        rule_ids,
        labels: labels_from_py(labels)?,
    };
    data.check().map_err(err)?;
    Ok(data)
}

// ---------------------------------------------------------------------------
// Schema

/// Message schema: the typed fields a record is made of.
#[pyclass(module = "ruletwin_py")]
#[derive(Clone)]
struct Schema {
    inner: MessageSchema,
}

#[pymethods]
impl Schema {
    /// The built-in specimen schema.
    #[staticmethod]
    fn default() -> Schema {
        Schema { inner: default_schema() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Schema> {
        Ok(Schema { inner: MessageSchema::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Schema> {
        Ok(Schema { inner: MessageSchema::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn field_names(&self) -> Vec<String> {
        self.inner.fields.iter().map(|f| f.name.clone()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Schema({} fields)", self.inner.fields.len())
    }
}

// ---------------------------------------------------------------------------
// Rule sets

/// A versioned set of validation rules.
#[pyclass(module = "ruletwin_py")]
#[derive(Clone)]
struct RuleSet {
    inner: CoreRuleSet,
}

#[pymethods]
impl RuleSet {
    /// Generate `count` random rules against `schema`.
    #[staticmethod]
    #[pyo3(signature = (schema, count, version, seed, arity=(0.5, 0.35, 0.15)))]
    fn generate(
        schema: &Schema,
        count: usize,
        version: &str,
        seed: u64,
        arity: (f64, f64, f64),
    ) -> PyResult<RuleSet> {
        let spec = RuleGenSpec::new(count, [arity.0, arity.1, arity.2], version, seed);
        Ok(RuleSet { inner: generate_ruleset(&schema.inner, &spec).map_err(err)? })
    }

    /// A new version that keeps every rule and adds `additions` fresh ones.
    #[pyo3(signature = (schema, additions, version, seed, arity=(0.5, 0.35, 0.15)))]
    fn evolve(
        &self,
        schema: &Schema,
        additions: usize,
        version: &str,
        seed: u64,
        arity: (f64, f64, f64),
    ) -> PyResult<RuleSet> {
        let spec =
            EvolveSpec::additions_only(additions, [arity.0, arity.1, arity.2], version, seed);
        Ok(RuleSet { inner: evolve_ruleset(&schema.inner, &self.inner, &spec).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<RuleSet> {
        Ok(RuleSet { inner: CoreRuleSet::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn version(&self) -> String {
        self.inner.version.clone()
    }

    #[getter]
    fn rule_ids(&self) -> Vec<String> {
        self.inner.rule_ids()
    }

    /// Result codes for one message, in rule order.
    fn validate(&self, message: &Bound<'_, PyAny>) -> PyResult<Vec<&'static str>> {
        let msg = message_from_py(message)?;
        let report = self.inner.validate_message(&msg).map_err(err)?;
        Ok(report.codes.iter().map(|c| c.label()).collect())
    }

    /// Result codes for many messages: one row per message, rule order.
    fn label(
        &self,
        schema: &Schema,
        messages: &Bound<'_, PyAny>,
    ) -> PyResult<Vec<Vec<&'static str>>> {
        let data = dataset_from_py(schema, messages)?;
        let labelled = label_dataset(&data, &self.inner).map_err(err)?;
        Ok(labels_to_py(&labelled.labels))
    }

    /// Added / removed / modified / retained rule ids versus another version.
    fn diff(&self, py: Python<'_>, other: &RuleSet) -> PyResult<PyObject> {
        report_to_py(py, &diff(&self.inner, &other.inner))
    }

    fn __repr__(&self) -> String {
        format!("RuleSet({:?}, {} rules)", self.inner.version, self.inner.rule_count())
    }
}

// ---------------------------------------------------------------------------
// Twins

/// Learned surrogate of one rule-set version: per-rule classifiers over a
/// shared message encoding.
#[pyclass(module = "ruletwin_py")]
#[derive(Clone)]
struct Twin {
    inner: model::Twin,
}

#[pymethods]
impl Twin {
    /// Train a fresh twin on labelled messages.
    ///
    /// `labels[i][j]` is the code label of message `i` under `rule_ids[j]`.
    /// `validation_fraction = 0` disables early stopping.
    #[staticmethod]
    #[pyo3(signature = (
        schema, messages, labels, rule_ids, version, seed,
        epochs=20, batch_size=32, learning_rate=0.002, d_text=8, arch="tiny",
        validation_fraction=0.0, patience=3,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        schema: &Schema,
        messages: &Bound<'_, PyAny>,
        labels: &Bound<'_, PyAny>,
        rule_ids: Vec<String>,
        version: &str,
        seed: u64,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        d_text: usize,
        arch: &str,
        validation_fraction: f64,
        patience: usize,
    ) -> PyResult<Twin> {
        let data = labelled_from_py(schema, messages, labels, rule_ids)?;
        let encoder = fit_encoder(&schema.inner, d_text).map_err(err)?;
        let arch = arch_from_name(arch)?;
        let twin =
            model::new_twin(version, encoder, arch, &data.rule_ids, seed).map_err(err)?;
        let cfg = TrainingConfig {
            epochs,
            batch_size,
            learning_rate,
            seed: seed.wrapping_add(1),
            early_stopping: if validation_fraction > 0.0 {
                Some(EarlyStopping { validation_fraction, patience })
            } else {
                None
            },
        };
        let trained = py
            .allow_threads(|| model::train(&twin, &data, &cfg))
            .map_err(err)?;
        Ok(Twin { inner: trained })
    }

    /// Per-rule probability vectors, `result[i][j][k]` = P(code k) for
    /// message `i` under rule `j`.
    fn predict(
        &self,
        py: Python<'_>,
        messages: &Bound<'_, PyAny>,
    ) -> PyResult<Vec<Vec<[f64; 4]>>> {
        let msgs = messages_from_py(messages)?;
        py.allow_threads(|| model::predict(&self.inner, &msgs)).map_err(err)
    }

    /// Most likely code label per (message, rule).
    fn predict_codes(
        &self,
        py: Python<'_>,
        messages: &Bound<'_, PyAny>,
    ) -> PyResult<Vec<Vec<&'static str>>> {
        let msgs = messages_from_py(messages)?;
        let probs = py.allow_threads(|| model::predict(&self.inner, &msgs)).map_err(err)?;
        Ok(probs
            .iter()
            .map(|row| row.iter().map(|pv| model::predicted_code(pv).label()).collect())
            .collect())
    }

    /// Precision/recall/F1 report against reference labels (same shape as
    /// `train`'s).
    fn evaluate(
        &self,
        py: Python<'_>,
        schema: &Schema,
        messages: &Bound<'_, PyAny>,
        labels: &Bound<'_, PyAny>,
    ) -> PyResult<PyObject> {
        let data = labelled_from_py(schema, messages, labels, self.inner.rule_ids())?;
        let probs = py
            .allow_threads(|| model::predict(&self.inner, &data.dataset.messages))
            .map_err(err)?;
        let pred: Vec<Vec<ResultCode>> = probs
            .iter()
            .map(|row| row.iter().map(model::predicted_code).collect())
            .collect();
        let report =
            MetricsReport::evaluate(&pred, &data.labels, MetricScope::All).map_err(err)?;
        report_to_py(py, &report)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Twin> {
        Ok(Twin { inner: model::load_twin(&dir).map_err(err)? })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        model::save_twin(&self.inner, &dir).map_err(err)
    }

    #[getter]
    fn version(&self) -> String {
        self.inner.version.clone()
    }

    #[getter]
    fn rule_ids(&self) -> Vec<String> {
        self.inner.rule_ids()
    }

    fn __repr__(&self) -> String {
        format!("Twin({:?}, {} rules)", self.inner.version, self.inner.modules.len())
    }
}

// ---------------------------------------------------------------------------
// Selection and evolution

fn build_candidates(
    schema: &Schema,
    twin: &Twin,
    source_rules: &RuleSet,
    messages: &Bound<'_, PyAny>,
) -> PyResult<CandidateSet> {
    let data = dataset_from_py(schema, messages)?;
    let truth = label_dataset(&data, &source_rules.inner).map_err(err)?;
    let predictions = model::predict(&twin.inner, &data.messages).map_err(err)?;
    CandidateSet::build(
        data,
        twin.inner.rule_ids(),
        predictions,
        truth.labels,
        DiversityMode::Divergence,
    )
    .map_err(err)
}

/// Multi-objective subset selection over a candidate pool: runs the search,
/// picks one front member under the size budget, and returns the chosen
/// message indices, its objectives, and the front size.
#[pyfunction]
#[pyo3(signature = (
    schema, twin, source_rules, messages, seed,
    population=100, evals=30000, budget=None,
))]
#[allow(clippy::too_many_arguments)]
fn select_subset(
    py: Python<'_>,
    schema: &Schema,
    twin: &Twin,
    source_rules: &RuleSet,
    messages: &Bound<'_, PyAny>,
    seed: u64,
    population: usize,
    evals: usize,
    budget: Option<usize>,
) -> PyResult<PyObject> {
    let candidates = build_candidates(schema, twin, source_rules, messages)?;
    let cfg = SearchConfig {
        population_size: population,
        max_evaluations: evals,
        budget,
        seed,
        ..SearchConfig::default()
    };
    let front = py.allow_threads(|| ibea_search(&candidates, &cfg)).map_err(err)?;
    let picked = pick_solution(&front, cfg.budget_for(candidates.len())).map_err(err)?;
    let result = PyDict::new_bound(py);
    result.set_item("chosen", front[picked].0.indices().collect::<Vec<_>>())?;
    result.set_item("objectives", report_to_py(py, &front[picked].1)?)?;
    result.set_item("front_size", front.len())?;
    Ok(result.into_py(py))
}

/// The full evolution step: select a subset of the pool, query the target
/// rules on it, and fine-tune the source twin into a target twin. Returns
/// the evolved twin and the run report.
#[pyfunction]
#[pyo3(signature = (
    schema, twin, source_rules, target_rules, messages, seed,
    population=100, evals=30000, budget=None,
    epochs=15, batch_size=16, learning_rate=0.002,
    inconsistent_fraction=0.5, max_duplication=10, extra_sample=None,
))]
#[allow(clippy::too_many_arguments)]
fn evolve_twin(
    py: Python<'_>,
    schema: &Schema,
    twin: &Twin,
    source_rules: &RuleSet,
    target_rules: &RuleSet,
    messages: &Bound<'_, PyAny>,
    seed: u64,
    population: usize,
    evals: usize,
    budget: Option<usize>,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    inconsistent_fraction: f64,
    max_duplication: usize,
    extra_sample: Option<usize>,
) -> PyResult<(Twin, PyObject)> {
    let candidates = build_candidates(schema, twin, source_rules, messages)?;
    let version_diff = diff(&source_rules.inner, &target_rules.inner);
    let client = QueryClient::in_process(target_rules.inner.clone());
    let cfg = EvolutionConfig {
        search: SearchConfig {
            population_size: population,
            max_evaluations: evals,
            ..SearchConfig::default()
        },
        training: TrainingConfig {
            epochs,
            batch_size,
            learning_rate,
            ..TrainingConfig::default()
        },
        budget,
        inconsistent_target_fraction: inconsistent_fraction,
        max_duplication,
        extra_sample_size: extra_sample,
        seed,
    };
    let source = twin.inner.clone();
    let (evolved, report) = py
        .allow_threads(|| evolve(&source, &version_diff, &client, &candidates, &cfg))
        .map_err(err)?;
    Ok((Twin { inner: evolved }, report_to_py(py, &report)?))
}

/// Random messages for a schema; rules, when given, seed violation patterns
/// into part of the corpus.
#[pyfunction]
#[pyo3(signature = (schema, count, seed, rules=None, violation_rate=0.3))]
fn make_messages(
    py: Python<'_>,
    schema: &Schema,
    count: usize,
    seed: u64,
    rules: Option<&RuleSet>,
    violation_rate: f64,
) -> PyResult<PyObject> {
    let cfg = GenerateConfig { count, violation_rate, seed };
    let data =
        generate_messages(&schema.inner, rules.map(|r| &r.inner), &cfg).map_err(err)?;
    let list = PyList::empty_bound(py);
    for message in &data.messages {
        list.append(message_to_py(py, message)?)?;
    }
    Ok(list.into_py(py))
}

// ---------------------------------------------------------------------------
// Statistics

/// Two-sided Mann-Whitney U test (normal approximation with tie correction).
#[pyfunction]
fn mann_whitney(py: Python<'_>, a: Vec<f64>, b: Vec<f64>) -> PyResult<PyObject> {
    report_to_py(py, &stats::mann_whitney(&a, &b).map_err(err)?)
}

/// Probability that a draw from `a` exceeds a draw from `b` (ties half).
#[pyfunction]
fn a12(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    stats::a12(&a, &b).map_err(err)
}

/// Spearman rank correlation.
#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    stats::spearman(&x, &y).map_err(err)
}

/// Jensen-Shannon divergence between two distributions over the four codes.
#[pyfunction]
fn js_divergence(p: [f64; 4], q: [f64; 4]) -> PyResult<f64> {
    ruletwin::selection::js_divergence(&p, &q).map_err(err)
}

/// Shannon entropy of a distribution over the four codes.
#[pyfunction]
fn entropy(p: [f64; 4]) -> PyResult<f64> {
    ruletwin::selection::entropy(&p).map_err(err)
}

#[pymodule]
fn ruletwin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Schema>()?;
    m.add_class::<RuleSet>()?;
    m.add_class::<Twin>()?;
    m.add_function(wrap_pyfunction!(select_subset, m)?)?;
    m.add_function(wrap_pyfunction!(evolve_twin, m)?)?;
    m.add_function(wrap_pyfunction!(make_messages, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney, m)?)?;
    m.add_function(wrap_pyfunction!(a12, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(js_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add("RESULT_CODES", ResultCode::ALL.map(|c| c.label()))?;
    Ok(())
}
