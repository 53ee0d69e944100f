//! The prototype bank: one vector per class, initialized from class
//! templates and moved by batched exponential-moving-average updates.
//!
//! Prototypes are never renormalized after an update; similarity reads
//! normalize on the fly, which keeps the EMA closed form exact.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::captions::render_class_text;
use crate::encoders::{encode_text, EncoderParams};
use crate::error::{LatteError, Result};
use crate::math::{bank_similarities, l2_normalize, Embedding, SimilarityRow};

pub const PROTOTYPE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub class_names: Vec<String>,
    pub vectors: Vec<Embedding>,
    /// Momentum of the EMA update.
    pub mu: f64,
    /// Blend weight the mixer gives to the selected prototype.
    pub alpha: f64,
    pub step: u64,
}

impl PrototypeBank {
    /// p_c = l2_normalize(g_frozen(render_class_text(name_c))).
    pub fn init_from_class_texts(
        frozen: &EncoderParams,
        class_names: &[String],
        mu: f64,
        alpha: f64,
    ) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(LatteError::Config("prototype bank needs at least two classes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in class_names {
            if n.is_empty() || !seen.insert(n) {
                return Err(LatteError::Config(format!("invalid or duplicate class name `{n}`")));
            }
        }
        if !(0.0..=1.0).contains(&mu) || !(0.0..=1.0).contains(&alpha) {
            return Err(LatteError::Config(format!("mu={mu} and alpha={alpha} must lie in [0,1]")));
        }
        let mut vectors = Vec::with_capacity(class_names.len());
        for name in class_names {
            let emb = encode_text(frozen, &render_class_text(name))?;
            vectors.push(l2_normalize(&emb)?);
        }
        Ok(PrototypeBank {
            class_names: class_names.to_vec(),
            vectors,
            mu,
            alpha,
            step: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.vectors.len()
    }

    pub fn prototype(&self, c: usize) -> Result<&Embedding> {
        self.vectors.get(c).ok_or(LatteError::ClassIndexOutOfRange {
            index: c,
            num_classes: self.vectors.len(),
        })
    }

    pub fn similarities(&self, query: &Embedding) -> Result<SimilarityRow> {
        bank_similarities(query, &self.vectors)
    }

    /// Applies one stream's EMA update.
    ///
    /// For each class present in `assignments` the arithmetic mean of its
    /// embeddings forms the batch target, then
    /// p_c = (1 - mu) * mean + mu * p_c. Absent classes are untouched.
    pub fn batch_momentum_update(&mut self, assignments: &[(usize, Embedding)]) -> Result<usize> {
        let mut sums: HashMap<usize, (Embedding, usize)> = HashMap::new();
        for (c, t) in assignments {
            if *c >= self.vectors.len() {
                return Err(LatteError::ClassIndexOutOfRange {
                    index: *c,
                    num_classes: self.vectors.len(),
                });
            }
            if !t.is_finite() {
                return Err(LatteError::NonFinite(format!("momentum target for class {c}")));
            }
            let entry = sums
                .entry(*c)
                .or_insert_with(|| (Embedding::zeros(t.dim()), 0));
            entry.0.add_scaled(t, 1.0);
            entry.1 += 1;
        }
        let updated = sums.len();
        for (c, (sum, n)) in sums {
            let mean = sum.scaled(1.0 / n as f64);
            let p = &mut self.vectors[c];
            for (pv, mv) in p.0.iter_mut().zip(mean.0.iter()) {
                *pv = (1.0 - self.mu) * mv + self.mu * *pv;
            }
        }
        Ok(updated)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Ckpt<'a> {
            format_version: u32,
            #[serde(flatten)]
            bank: &'a PrototypeBank,
        }
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer(&mut f, &Ckpt { format_version: PROTOTYPE_FORMAT_VERSION, bank: self })?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Ckpt {
            format_version: u32,
            #[serde(flatten)]
            bank: PrototypeBank,
        }
        let data = std::fs::read(path)?;
        let ckpt: Ckpt = serde_json::from_slice(&data)?;
        if ckpt.format_version != PROTOTYPE_FORMAT_VERSION {
            return Err(LatteError::FormatVersion {
                file: path.display().to_string(),
                expected: PROTOTYPE_FORMAT_VERSION,
                found: ckpt.format_version,
            });
        }
        let bank = ckpt.bank;
        if bank.class_names.len() != bank.vectors.len() {
            return Err(LatteError::Config(format!(
                "prototype checkpoint {} has {} names but {} vectors",
                path.display(),
                bank.class_names.len(),
                bank.vectors.len()
            )));
        }
        Ok(bank)
    }
}
