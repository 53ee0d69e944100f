//! Dual pseudo-labels: c_zs from the frozen snapshot against class
//! templates, c_ft from the live model against the prototype bank (or,
//! behind a flag, against live class-template embeddings).

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::captions::render_class_text;
use crate::data::Dataset;
use crate::encoders::{encode_image, encode_text, EncoderParams, FrozenSnapshot};
use crate::error::{LatteError, Result};
use crate::math::{argmax_tie_low, bank_similarities, Embedding};
use crate::prototypes::PrototypeBank;

pub const CZS_FORMAT_VERSION: u32 = 1;

/// Frozen-model and live-model class assignments for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoLabelPair {
    pub c_zs: usize,
    pub c_ft: usize,
}

/// Which classifier state the fine-tuning pseudo-label reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FtLabelSource {
    #[default]
    Prototypes,
    Templates,
}

/// Embeds "a photo of a {name}." for every class with the given encoder.
pub fn class_text_embeddings(params: &EncoderParams, class_names: &[String]) -> Result<Vec<Embedding>> {
    class_names
        .iter()
        .map(|n| encode_text(params, &render_class_text(n)))
        .collect()
}

/// argmax_c cosine(f_frozen(x), g_frozen(class_text_c)), lowest index wins ties.
pub fn zero_shot_label(
    frozen: &FrozenSnapshot,
    class_texts: &[Embedding],
    x: &[f64],
    image_id: &str,
) -> Result<usize> {
    let emb = encode_image(frozen.params(), x)?;
    if emb.norm() <= 0.0 {
        return Err(LatteError::degenerate(format!("image `{image_id}`")));
    }
    let sims = bank_similarities(&emb, class_texts)?;
    Ok(argmax_tie_low(&sims.0))
}

/// argmax_c cosine(f_live(x), p_c), recomputed on every call.
pub fn finetune_label(
    live: &EncoderParams,
    bank: &PrototypeBank,
    x: &[f64],
    image_id: &str,
) -> Result<usize> {
    let emb = encode_image(live, x)?;
    if emb.norm() <= 0.0 {
        return Err(LatteError::degenerate(format!("image `{image_id}`")));
    }
    let sims = bank.similarities(&emb)?;
    Ok(argmax_tie_low(&sims.0))
}

/// Template variant of the fine-tuning label, for `ft_label_source = templates`.
pub fn finetune_label_templates(
    live: &EncoderParams,
    live_class_texts: &[Embedding],
    x: &[f64],
    image_id: &str,
) -> Result<usize> {
    let emb = encode_image(live, x)?;
    if emb.norm() <= 0.0 {
        return Err(LatteError::degenerate(format!("image `{image_id}`")));
    }
    let sims = bank_similarities(&emb, live_class_texts)?;
    Ok(argmax_tie_low(&sims.0))
}

/// Computes c_zs for every sample once, in dataset order.
pub fn label_dataset(frozen: &FrozenSnapshot, dataset: &Dataset) -> Result<Vec<(String, usize)>> {
    let class_texts = class_text_embeddings(frozen.params(), &dataset.class_names)?;
    let mut out = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let c = zero_shot_label(frozen, &class_texts, &s.features, &s.image_id)?;
        out.push((s.image_id.clone(), c));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct CzsRow {
    image_id: String,
    class_id: usize,
    format_version: u32,
}

pub fn save_czs_table(table: &[(String, usize)], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (image_id, class_id) in table {
        serde_json::to_writer(
            &mut f,
            &CzsRow {
                image_id: image_id.clone(),
                class_id: *class_id,
                format_version: CZS_FORMAT_VERSION,
            },
        )?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_czs_table(path: &Path) -> Result<Vec<(String, usize)>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: CzsRow = serde_json::from_str(&line)?;
        if row.format_version != CZS_FORMAT_VERSION {
            return Err(LatteError::FormatVersion {
                file: path.display().to_string(),
                expected: CZS_FORMAT_VERSION,
                found: row.format_version,
            });
        }
        out.push((row.image_id, row.class_id));
    }
    Ok(out)
}

/// Indexes a c_zs table by image id; a missing id at train time is a
/// hard error at the lookup site.
pub fn czs_map(table: &[(String, usize)]) -> HashMap<String, usize> {
    table.iter().cloned().collect()
}
