//! Record schema and message types.
//!
//! A schema declares the fields a record ("message") carries: categorical
//! fields with a closed value domain, numerical fields with inclusive bounds,
//! and free-text fields with a length cap. Messages are flat maps from field
//! name to value. Everything downstream — rule evaluation, feature encoding,
//! synthetic generation — is driven by the schema, so schema validation is
//! strict: unknown fields, missing fields, or out-of-domain values are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Field kind plus its value constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    /// Closed set of string values.
    Categorical { domain: Vec<String> },
    /// Real value in `[min, max]` (inclusive).
    Numerical { min: f64, max: f64 },
    /// Free text up to `max_len` characters.
    Textual { max_len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FieldKind,
}

/// Ordered collection of field specs. Field order is canonical: feature
/// layouts and per-field statistics all follow it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageSchema {
    pub fields: Vec<FieldSpec>,
}

/// A single field value. Categorical and textual fields hold strings,
/// numerical fields hold finite floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Str(String),
    Num(f64),
}

impl Value {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            Value::Num(_) => None,
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(n) => Some(*n),
            Value::Str(_) => None,
        }
    }

    /// Identity key usable for exact-equality counting (hash maps). Floats
    /// compare by bit pattern; schema validation rejects non-finite values,
    /// so NaN identity quirks cannot arise.
    pub(crate) fn identity(&self) -> ValueId<'_> {
        match self {
            Value::Str(s) => ValueId::Str(s),
            Value::Num(n) => ValueId::Num(n.to_bits()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum ValueId<'a> {
    Str(&'a str),
    Num(u64),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => write!(f, "{s}"),
            Value::Num(n) => write!(f, "{n}"),
        }
    }
}

/// A record under validation: field name -> value. Kept sorted by field name
/// so serialized output is stable.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Message {
    pub values: BTreeMap<String, Value>,
}

impl Message {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, field: impl Into<String>, value: Value) {
        self.values.insert(field.into(), value);
    }

    pub fn get(&self, field: &str) -> Option<&Value> {
        self.values.get(field)
    }
}

impl MessageSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self> {
        let schema = Self { fields };
        schema.check()?;
        Ok(schema)
    }

    /// Number of fields (`nv` in the subset-diversity objective).
    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Structural well-formedness of the schema itself.
    pub fn check(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::Schema("schema has no fields".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for spec in &self.fields {
            if spec.name.is_empty() {
                return Err(Error::Schema("field with empty name".into()));
            }
            if !seen.insert(spec.name.as_str()) {
                return Err(Error::Schema(format!("duplicate field name {:?}", spec.name)));
            }
            match &spec.kind {
                FieldKind::Categorical { domain } => {
                    if domain.is_empty() {
                        return Err(Error::Schema(format!(
                            "categorical field {:?} has an empty domain",
                            spec.name
                        )));
                    }
                    let mut values = std::collections::BTreeSet::new();
                    for v in domain {
                        if !values.insert(v.as_str()) {
                            return Err(Error::Schema(format!(
                                "categorical field {:?} repeats domain value {:?}",
                                spec.name, v
                            )));
                        }
                    }
                }
                FieldKind::Numerical { min, max } => {
                    if !min.is_finite() || !max.is_finite() {
                        return Err(Error::Schema(format!(
                            "numerical field {:?} has non-finite bounds",
                            spec.name
                        )));
                    }
                    if min > max {
                        return Err(Error::Schema(format!(
                            "numerical field {:?} has min > max",
                            spec.name
                        )));
                    }
                }
                FieldKind::Textual { max_len } => {
                    if *max_len == 0 {
                        return Err(Error::Schema(format!(
                            "textual field {:?} has max_len 0",
                            spec.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Validate a message against this schema. Every schema field must be
    /// present with a conforming value, and no extra fields are allowed.
    pub fn validate_message(&self, message: &Message) -> Result<()> {
        for spec in &self.fields {
            let value = message.get(&spec.name).ok_or_else(|| {
                Error::MessageInvalid(format!("missing field {:?}", spec.name))
            })?;
            match (&spec.kind, value) {
                (FieldKind::Categorical { domain }, Value::Str(s)) => {
                    if !domain.iter().any(|d| d == s) {
                        return Err(Error::MessageInvalid(format!(
                            "field {:?} value {:?} not in domain",
                            spec.name, s
                        )));
                    }
                }
                (FieldKind::Numerical { min, max }, Value::Num(n)) => {
                    if !n.is_finite() {
                        return Err(Error::MessageInvalid(format!(
                            "field {:?} is not finite",
                            spec.name
                        )));
                    }
                    if n < min || n > max {
                        return Err(Error::MessageInvalid(format!(
                            "field {:?} value {} outside [{}, {}]",
                            spec.name, n, min, max
                        )));
                    }
                }
                (FieldKind::Textual { max_len }, Value::Str(s)) => {
                    if s.chars().count() > *max_len {
                        return Err(Error::MessageInvalid(format!(
                            "field {:?} exceeds max_len {}",
                            spec.name, max_len
                        )));
                    }
                }
                (_, v) => {
                    return Err(Error::MessageInvalid(format!(
                        "field {:?} has wrong value type: {v}",
                        spec.name
                    )));
                }
            }
        }
        for name in message.values.keys() {
            if self.field(name).is_none() {
                return Err(Error::MessageInvalid(format!("unknown field {:?}", name)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: MessageSchema = serde_json::from_str(text)?;
        schema.check()?;
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Nine-field cancer-registry-flavoured demo schema used by the synthetic
/// experiments: four categorical fields, one numerical, two ISO dates carried
/// as text, and two opaque identifiers.
pub fn default_schema() -> MessageSchema {
    let cat = |name: &str, domain: &[&str]| FieldSpec {
        name: name.into(),
        kind: FieldKind::Categorical {
            domain: domain.iter().map(|s| s.to_string()).collect(),
        },
    };
    MessageSchema {
        fields: vec![
            cat("gender", &["M", "F"]),
            cat(
                "topography",
                &["180", "339", "401", "434", "500", "619", "674", "702", "809", "851"],
            ),
            cat(
                "morphology",
                &["8000", "8070", "8140", "8480", "9050", "9140", "9500", "405"],
            ),
            cat("basis", &["0", "2", "4", "7"]),
            FieldSpec {
                name: "chemotherapy".into(),
                kind: FieldKind::Numerical { min: 0.0, max: 30.0 },
            },
            FieldSpec {
                name: "birth_date".into(),
                kind: FieldKind::Textual { max_len: 10 },
            },
            FieldSpec {
                name: "diagnosis_date".into(),
                kind: FieldKind::Textual { max_len: 10 },
            },
            FieldSpec {
                name: "ct".into(),
                kind: FieldKind::Textual { max_len: 16 },
            },
            FieldSpec {
                name: "message_version".into(),
                kind: FieldKind::Textual { max_len: 16 },
            },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> MessageSchema {
        default_schema()
    }

    fn sample() -> Message {
        let mut m = Message::new();
        m.set("gender", Value::Str("M".into()));
        m.set("topography", Value::Str("809".into()));
        m.set("morphology", Value::Str("405".into()));
        m.set("basis", Value::Str("2".into()));
        m.set("chemotherapy", Value::Num(3.0));
        m.set("birth_date", Value::Str("2000-01-01".into()));
        m.set("diagnosis_date", Value::Str("2019-07-09".into()));
        m.set("ct", Value::Str("gvEQyqbV46".into()));
        m.set("message_version", Value::Str("tNJP2eAMEd".into()));
        m
    }

    #[test]
    fn default_schema_is_well_formed() {
        schema().check().unwrap();
    }

    #[test]
    fn conforming_message_passes() {
        schema().validate_message(&sample()).unwrap();
    }

    #[test]
    fn missing_field_is_rejected() {
        let mut m = sample();
        m.values.remove("gender");
        assert!(schema().validate_message(&m).is_err());
    }

    #[test]
    fn extra_field_is_rejected() {
        let mut m = sample();
        m.set("bogus", Value::Num(1.0));
        assert!(schema().validate_message(&m).is_err());
    }

    #[test]
    fn out_of_domain_categorical_is_rejected() {
        let mut m = sample();
        m.set("gender", Value::Str("X".into()));
        assert!(schema().validate_message(&m).is_err());
    }

    #[test]
    fn out_of_range_numerical_is_rejected() {
        let mut m = sample();
        m.set("chemotherapy", Value::Num(31.0));
        assert!(schema().validate_message(&m).is_err());
        m.set("chemotherapy", Value::Num(f64::NAN));
        assert!(schema().validate_message(&m).is_err());
    }

    #[test]
    fn wrong_type_is_rejected() {
        let mut m = sample();
        m.set("chemotherapy", Value::Str("3".into()));
        assert!(schema().validate_message(&m).is_err());
        let mut m = sample();
        m.set("gender", Value::Num(0.0));
        assert!(schema().validate_message(&m).is_err());
    }

    #[test]
    fn overlong_text_is_rejected() {
        let mut m = sample();
        m.set("ct", Value::Str("x".repeat(17)));
        assert!(schema().validate_message(&m).is_err());
    }

    #[test]
    fn schema_json_round_trip() {
        let s = schema();
        let json = s.to_json().unwrap();
        let back = MessageSchema::from_json(&json).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn malformed_schemas_are_rejected() {
        assert!(MessageSchema::from_json(r#"{"fields": []}"#).is_err());
        let dup = r#"{"fields": [
            {"name": "a", "kind": "textual", "max_len": 4},
            {"name": "a", "kind": "numerical", "min": 0, "max": 1}
        ]}"#;
        assert!(MessageSchema::from_json(dup).is_err());
        let bad_range = r#"{"fields": [{"name": "a", "kind": "numerical", "min": 2, "max": 1}]}"#;
        assert!(MessageSchema::from_json(bad_range).is_err());
        let empty_domain = r#"{"fields": [{"name": "a", "kind": "categorical", "domain": []}]}"#;
        assert!(MessageSchema::from_json(empty_domain).is_err());
    }

    #[test]
    fn message_json_round_trip() {
        let m = sample();
        let json = serde_json::to_string(&m).unwrap();
        let back: Message = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
        // Numbers stay numbers, strings stay strings.
        assert!(json.contains("\"chemotherapy\":3"));
        assert!(json.contains("\"gender\":\"M\""));
    }
}
