//! Deterministic feature encoding of messages.
//!
//! A message is encoded into two fixed-length blocks, one per model branch:
//!
//! * branch 1 — structured features in schema order: each categorical field
//!   becomes a one-hot block over its schema domain, each numerical field a
//!   single min-max-scaled value (clamped to `[0, 1]`);
//! * branch 2 — one block of `d_text` buckets per textual field, filled by
//!   signed character-trigram hashing and L2-normalized.
//!
//! The encoding depends only on the schema and `d_text`, never on corpus
//! statistics, so an encoder fitted at pretraining time keeps producing
//! identical vectors for the lifetime of the model. Hashing uses FNV-1a with
//! fixed constants: vectors are stable across platforms and runs.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{FieldKind, Message, MessageSchema};

/// Smallest allowed hash width; below this, trigram collisions destroy most
/// of the signal.
pub const MIN_TEXT_BUCKETS: usize = 8;
/// Default hash width per textual field.
pub const DEFAULT_TEXT_BUCKETS: usize = 64;

/// Per-field encoding plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoder", rename_all = "snake_case")]
pub enum FieldEncoder {
    /// One-hot over the schema domain (branch 1, `vocab.len()` slots).
    OneHot { field: String, vocab: Vec<String> },
    /// Min-max scaling with clamping (branch 1, one slot).
    MinMax { field: String, min: f64, max: f64 },
    /// Signed trigram hashing (branch 2, `d_text` slots).
    TextHash { field: String },
}

/// Fitted encoder: field plans in schema order plus the derived block sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub fields: Vec<FieldEncoder>,
    pub d_text: usize,
    pub branch1_len: usize,
    pub branch2_len: usize,
}

/// Encoded message: branch 1 then branch 2, both in schema field order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub branch1: Vec<f32>,
    pub branch2: Vec<f32>,
}

/// Build an encoder for a schema.
///
/// Both branches must end up non-empty: the downstream model always has two
/// convolutional branches, so a schema needs at least one categorical or
/// numerical field and at least one textual field.
pub fn fit_encoder(schema: &MessageSchema, d_text: usize) -> Result<EncoderConfig> {
    schema.check()?;
    if d_text < MIN_TEXT_BUCKETS {
        return Err(Error::Encoding(format!(
            "d_text {d_text} below minimum {MIN_TEXT_BUCKETS}"
        )));
    }
    let mut fields = Vec::with_capacity(schema.fields.len());
    let mut branch1_len = 0usize;
    let mut branch2_len = 0usize;
    for spec in &schema.fields {
        match &spec.kind {
            FieldKind::Categorical { domain } => {
                branch1_len += domain.len();
                fields.push(FieldEncoder::OneHot {
                    field: spec.name.clone(),
                    vocab: domain.clone(),
                });
            }
            FieldKind::Numerical { min, max } => {
                branch1_len += 1;
                fields.push(FieldEncoder::MinMax {
                    field: spec.name.clone(),
                    min: *min,
                    max: *max,
                });
            }
            FieldKind::Textual { .. } => {
                branch2_len += d_text;
                fields.push(FieldEncoder::TextHash { field: spec.name.clone() });
            }
        }
    }
    if branch1_len == 0 {
        return Err(Error::Encoding(
            "schema has no categorical or numerical fields; branch 1 would be empty".into(),
        ));
    }
    if branch2_len == 0 {
        return Err(Error::Encoding(
            "schema has no textual fields; branch 2 would be empty".into(),
        ));
    }
    Ok(EncoderConfig { fields, d_text, branch1_len, branch2_len })
}

/// Encode one message. The message must carry every encoded field; values of
/// the wrong type are errors, numerical values are clamped into `[0, 1]`
/// after scaling, and unknown categorical values are errors.
pub fn encode_message(cfg: &EncoderConfig, message: &Message) -> Result<FeatureVector> {
    let mut branch1 = Vec::with_capacity(cfg.branch1_len);
    let mut branch2 = Vec::with_capacity(cfg.branch2_len);
    for plan in &cfg.fields {
        match plan {
            FieldEncoder::OneHot { field, vocab } => {
                let value = require_str(message, field)?;
                let hit = vocab.iter().position(|v| v == value).ok_or_else(|| {
                    Error::Encoding(format!("field {field:?}: value {value:?} not in vocabulary"))
                })?;
                for i in 0..vocab.len() {
                    branch1.push(if i == hit { 1.0 } else { 0.0 });
                }
            }
            FieldEncoder::MinMax { field, min, max } => {
                let value = message
                    .get(field)
                    .ok_or_else(|| Error::Encoding(format!("missing field {field:?}")))?
                    .as_num()
                    .ok_or_else(|| Error::Encoding(format!("field {field:?} is not numeric")))?;
                let span = max - min;
                let scaled = if span > 0.0 {
                    ((value - min) / span).clamp(0.0, 1.0)
                } else {
                    // Degenerate bounds carry no information.
                    0.0
                };
                branch1.push(scaled as f32);
            }
            FieldEncoder::TextHash { field } => {
                let value = require_str(message, field)?;
                branch2.extend_from_slice(&hash_text(value, cfg.d_text));
            }
        }
    }
    debug_assert_eq!(branch1.len(), cfg.branch1_len);
    debug_assert_eq!(branch2.len(), cfg.branch2_len);
    Ok(FeatureVector { branch1, branch2 })
}

/// Encode a batch into two row-per-message matrices `(n, branch1_len)` and
/// `(n, branch2_len)`.
pub fn encode_matrix(cfg: &EncoderConfig, messages: &[Message]) -> Result<(Array2<f32>, Array2<f32>)> {
    let n = messages.len();
    let mut b1 = Array2::zeros((n, cfg.branch1_len));
    let mut b2 = Array2::zeros((n, cfg.branch2_len));
    for (i, message) in messages.iter().enumerate() {
        let fv = encode_message(cfg, message)?;
        b1.row_mut(i).assign(&ndarray::ArrayView1::from(&fv.branch1[..]));
        b2.row_mut(i).assign(&ndarray::ArrayView1::from(&fv.branch2[..]));
    }
    Ok((b1, b2))
}

fn require_str<'a>(message: &'a Message, field: &str) -> Result<&'a str> {
    message
        .get(field)
        .ok_or_else(|| Error::Encoding(format!("missing field {field:?}")))?
        .as_str()
        .ok_or_else(|| Error::Encoding(format!("field {field:?} is not a string")))
}

/// Signed trigram hashing of a string into `d_text` buckets, L2-normalized.
///
/// Tokens are sliding windows of three characters; strings shorter than three
/// characters hash as a single whole-string token, and the empty string maps
/// to the zero vector. Each token adds `+-1` to one bucket: the bucket is the
/// FNV-1a hash modulo `d_text`, the sign comes from the hash's top bit.
pub fn hash_text(text: &str, d_text: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; d_text];
    let chars: Vec<char> = text.chars().collect();
    let mut add_token = |token: &[char]| {
        let mut buf = [0u8; 4];
        let mut hash = FNV_OFFSET;
        for &c in token {
            for b in c.encode_utf8(&mut buf).as_bytes() {
                hash ^= u64::from(*b);
                hash = hash.wrapping_mul(FNV_PRIME);
            }
        }
        let bucket = (hash % d_text as u64) as usize;
        let sign = if hash >> 63 == 1 { -1.0 } else { 1.0 };
        out[bucket] += sign;
    };
    if chars.is_empty() {
        return out;
    }
    if chars.len() < 3 {
        add_token(&chars);
    } else {
        for window in chars.windows(3) {
            add_token(window);
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm > 0.0 {
        for v in &mut out {
            *v /= norm;
        }
    }
    out
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
