//! Caption engine: prompt templates, pseudo-label-grouped collage specs,
//! provider dispatch with a worker pool, and an idempotent on-disk cache.

mod cache;
mod describe;
mod provider;

pub use cache::{now_millis, CaptionCache, CaptionKey, CaptionRecord, CAPTION_FORMAT_VERSION};
pub use describe::{run_describe, DescribeConfig, DescribeStats};
pub use provider::{generate_with_retry, CaptionProvider, CaptionRequest, RetryPolicy, StubProvider};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LatteError, Result};

/// The three description kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionKind {
    Class,
    Image,
    Group,
}

impl std::fmt::Display for CaptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CaptionKind::Class => write!(f, "class"),
            CaptionKind::Image => write!(f, "image"),
            CaptionKind::Group => write!(f, "group"),
        }
    }
}

impl std::str::FromStr for CaptionKind {
    type Err = LatteError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class" => Ok(CaptionKind::Class),
            "image" => Ok(CaptionKind::Image),
            "group" => Ok(CaptionKind::Group),
            other => Err(LatteError::Config(format!("unknown caption kind `{other}`"))),
        }
    }
}

/// Verbatim class template.
pub fn render_class_text(class_name: &str) -> String {
    format!("a photo of a {class_name}.")
}

/// Verbatim single-image prompt for a dataset domain.
pub fn render_image_prompt(domain: &str) -> String {
    format!("Describe the {domain} in the photo concisely, using less than 20 words.")
}

/// Verbatim group prompt for a dataset domain.
pub fn render_group_prompt(domain: &str) -> String {
    format!("Describe the common visual attributes of the {domain} in all the photos concisely, in fewer than 20 words.")
}

/// A sampled same-pseudo-label image group and its collage grid layout.
/// The anchor always occupies grid position (0, 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub anchor_id: String,
    pub member_ids: Vec<String>,
    pub k: usize,
    pub rows: usize,
    pub cols: usize,
    /// Set when the pool was smaller than k and sampling fell back to
    /// with-replacement draws.
    pub with_replacement: bool,
}

pub const VALID_GROUP_SIZES: [usize; 4] = [2, 4, 8, 16];

/// Squarest grid covering k cells: rows = floor(sqrt(k)), cols = ceil(k/rows).
pub fn group_layout(k: usize) -> (usize, usize) {
    let rows = (k as f64).sqrt().floor() as usize;
    let cols = (k + rows - 1) / rows;
    (rows, cols)
}

/// Samples a group of `k` images sharing the anchor's pseudo-label.
///
/// The anchor is always included; the remaining k-1 members are drawn
/// uniformly without replacement from `class_pool` minus the anchor.
/// Pools smaller than k fall back to with-replacement draws and flag it.
pub fn sample_group(
    anchor_id: &str,
    class_pool: &[String],
    k: usize,
    rng_seed: u64,
) -> Result<GroupSpec> {
    if !VALID_GROUP_SIZES.contains(&k) {
        return Err(LatteError::Config(format!(
            "group size must be one of {VALID_GROUP_SIZES:?}, got {k}"
        )));
    }
    if class_pool.is_empty() {
        return Err(LatteError::Config("empty class pool for group sampling".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut others: Vec<&String> = class_pool.iter().filter(|id| id.as_str() != anchor_id).collect();
    let mut member_ids = vec![anchor_id.to_string()];
    let with_replacement = others.len() < k - 1;
    if with_replacement {
        let pool: Vec<&String> = class_pool.iter().collect();
        for _ in 0..k - 1 {
            member_ids.push(pool[rng.gen_range(0..pool.len())].clone());
        }
    } else {
        // partial Fisher-Yates over the non-anchor pool
        for i in 0..k - 1 {
            let j = rng.gen_range(i..others.len());
            others.swap(i, j);
            member_ids.push(others[i].clone());
        }
    }
    let (rows, cols) = group_layout(k);
    Ok(GroupSpec {
        anchor_id: anchor_id.to_string(),
        member_ids,
        k,
        rows,
        cols,
        with_replacement,
    })
}
