//! Toy dual-encoder family: a single linear map per modality, a hashing
//! bag-of-tokens text featurizer, frozen snapshots, and checkpoint I/O.
//!
//! The linear family keeps every gradient hand-derivable; real backbones
//! plug in behind [`external_encoder`].

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LatteError, Result};
use crate::math::{Embedding, Matrix};

pub const ENCODER_FORMAT_VERSION: u32 = 1;

/// exp(logit_scale) is clamped to this bound.
pub const MAX_INV_TEMPERATURE: f64 = 100.0;

/// CLIP-convention initialization: ln(1/0.07).
pub fn default_logit_scale() -> f64 {
    (1.0 / 0.07_f64).ln()
}

/// Parameters of the toy dual encoder.
///
/// `image_weights` is d_in_img × d, `text_weights` is V × d. Both encoders
/// are plain linear maps over their input representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub image_weights: Matrix,
    pub text_weights: Matrix,
    pub logit_scale: f64,
}

impl EncoderParams {
    pub fn new(image_weights: Matrix, text_weights: Matrix, logit_scale: f64) -> Result<Self> {
        if image_weights.cols != text_weights.cols {
            return Err(LatteError::DimensionMismatch {
                what: "encoder output dimension".into(),
                expected: image_weights.cols,
                got: text_weights.cols,
            });
        }
        if !image_weights.is_finite() || !text_weights.is_finite() || !logit_scale.is_finite() {
            return Err(LatteError::NonFinite("encoder parameters".into()));
        }
        let mut p = EncoderParams {
            image_weights,
            text_weights,
            logit_scale,
        };
        p.clamp_logit_scale();
        Ok(p)
    }

    pub fn embed_dim(&self) -> usize {
        self.image_weights.cols
    }

    pub fn image_input_dim(&self) -> usize {
        self.image_weights.rows
    }

    pub fn vocab_size(&self) -> usize {
        self.text_weights.rows
    }

    pub fn clamp_logit_scale(&mut self) {
        let max = MAX_INV_TEMPERATURE.ln();
        if self.logit_scale > max {
            self.logit_scale = max;
        }
    }

    /// τ = 1 / exp(logit_scale).
    pub fn temperature(&self) -> f64 {
        (-self.logit_scale).exp()
    }
}

/// Deterministic bag-of-tokens featurization of one text.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeaturization {
    pub vocab_size: usize,
    /// bucket -> occurrence count, sorted by bucket.
    pub counts: Vec<(usize, u32)>,
}

impl TextFeaturization {
    pub fn total_tokens(&self) -> u32 {
        self.counts.iter().map(|(_, c)| c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// FNV-1a 64-bit over a byte string.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Lowercases, splits on non-alphanumeric runs, buckets each token by
/// FNV-1a 64 mod V.
pub fn featurize_text(text: &str, vocab_size: usize) -> Result<TextFeaturization> {
    if vocab_size < 64 {
        return Err(LatteError::Config(format!(
            "vocab size must be >= 64, got {vocab_size}"
        )));
    }
    let lower = text.to_lowercase();
    let mut map = std::collections::BTreeMap::new();
    for token in lower.split(|ch: char| !ch.is_alphanumeric()) {
        if token.is_empty() {
            continue;
        }
        let bucket = (fnv1a_64(token.as_bytes()) % vocab_size as u64) as usize;
        *map.entry(bucket).or_insert(0u32) += 1;
    }
    Ok(TextFeaturization {
        vocab_size,
        counts: map.into_iter().collect(),
    })
}

/// xᵀ·image_weights.
pub fn encode_image(params: &EncoderParams, x: &[f64]) -> Result<Embedding> {
    if x.len() != params.image_input_dim() {
        return Err(LatteError::DimensionMismatch {
            what: "image input".into(),
            expected: params.image_input_dim(),
            got: x.len(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(LatteError::NonFinite("image input".into()));
    }
    Ok(Embedding(params.image_weights.left_mul(x)))
}

/// countsᵀ·text_weights for a precomputed featurization.
///
/// All-zero counts fall back to the mean text-weight row so the text
/// encoder never emits a zero vector for degenerate captions.
pub fn encode_counts(params: &EncoderParams, feat: &TextFeaturization) -> Result<Embedding> {
    if feat.vocab_size != params.vocab_size() {
        return Err(LatteError::DimensionMismatch {
            what: "text vocab".into(),
            expected: params.vocab_size(),
            got: feat.vocab_size,
        });
    }
    if feat.is_empty() {
        return Ok(Embedding(params.text_weights.mean_row()));
    }
    let d = params.embed_dim();
    let mut out = vec![0.0; d];
    for &(bucket, count) in &feat.counts {
        let row = params.text_weights.row(bucket);
        let c = count as f64;
        for (o, &w) in out.iter_mut().zip(row.iter()) {
            *o += c * w;
        }
    }
    Ok(Embedding(out))
}

pub fn encode_text(params: &EncoderParams, text: &str) -> Result<Embedding> {
    let feat = featurize_text(text, params.vocab_size())?;
    encode_counts(params, &feat)
}

/// Immutable deep copy of the live parameters at one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenSnapshot {
    params: EncoderParams,
    pub taken_at_step: u64,
}

impl FrozenSnapshot {
    pub fn params(&self) -> &EncoderParams {
        &self.params
    }
}

pub fn snapshot(params: &EncoderParams, taken_at_step: u64) -> FrozenSnapshot {
    FrozenSnapshot {
        params: params.clone(),
        taken_at_step,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EncoderCheckpoint {
    format_version: u32,
    d: usize,
    d_in_img: usize,
    v: usize,
    image_weights: Matrix,
    text_weights: Matrix,
    logit_scale: f64,
}

pub fn save_encoder(params: &EncoderParams, path: &Path) -> Result<()> {
    let ckpt = EncoderCheckpoint {
        format_version: ENCODER_FORMAT_VERSION,
        d: params.embed_dim(),
        d_in_img: params.image_input_dim(),
        v: params.vocab_size(),
        image_weights: params.image_weights.clone(),
        text_weights: params.text_weights.clone(),
        logit_scale: params.logit_scale,
    };
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer(&mut f, &ckpt)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load_encoder(path: &Path) -> Result<EncoderParams> {
    let data = std::fs::read(path)?;
    let ckpt: EncoderCheckpoint = serde_json::from_slice(&data)?;
    if ckpt.format_version != ENCODER_FORMAT_VERSION {
        return Err(LatteError::FormatVersion {
            file: path.display().to_string(),
            expected: ENCODER_FORMAT_VERSION,
            found: ckpt.format_version,
        });
    }
    if ckpt.image_weights.rows != ckpt.d_in_img
        || ckpt.image_weights.cols != ckpt.d
        || ckpt.text_weights.rows != ckpt.v
        || ckpt.text_weights.cols != ckpt.d
    {
        return Err(LatteError::Config(format!(
            "inconsistent encoder checkpoint shapes in {}",
            path.display()
        )));
    }
    EncoderParams::new(ckpt.image_weights, ckpt.text_weights, ckpt.logit_scale)
}

/// Encoder pair contract for pluggable backbones.
pub trait EncoderBackend: Send + Sync {
    fn encode_image(&self, x: &[f64]) -> Result<Embedding>;
    fn encode_text(&self, text: &str) -> Result<Embedding>;
    fn embed_dim(&self) -> usize;
}

struct ToyBackend {
    params: EncoderParams,
}

impl EncoderBackend for ToyBackend {
    fn encode_image(&self, x: &[f64]) -> Result<Embedding> {
        encode_image(&self.params, x)
    }
    fn encode_text(&self, text: &str) -> Result<Embedding> {
        encode_text(&self.params, text)
    }
    fn embed_dim(&self) -> usize {
        self.params.embed_dim()
    }
}

/// Constructs an encoder backend by provider name. Unknown providers fail
/// at construction time, never mid-training. The backend's output
/// dimension is checked against `expected_dim`.
pub fn external_encoder(
    provider: &str,
    params: &EncoderParams,
    expected_dim: usize,
) -> Result<Box<dyn EncoderBackend>> {
    let backend: Box<dyn EncoderBackend> = match provider {
        "toy" => Box::new(ToyBackend {
            params: params.clone(),
        }),
        other => {
            return Err(LatteError::BackendUnavailable(format!(
                "no encoder provider named `{other}`"
            )))
        }
    };
    if backend.embed_dim() != expected_dim {
        return Err(LatteError::DimensionMismatch {
            what: format!("provider `{provider}` output dimension"),
            expected: expected_dim,
            got: backend.embed_dim(),
        });
    }
    Ok(backend)
}
