//! Dynamic Feature Mixer: scores each description by the gap between its
//! two highest cosine similarities to the prototype bank, averages the
//! descriptions by those weights, and blends the result with the selected
//! prototype.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::captions::{render_class_text, CaptionCache, CaptionKind};
use crate::encoders::{encode_counts, featurize_text, EncoderParams, TextFeaturization};
use crate::error::{LatteError, Result};
use crate::math::{l2_normalize, Embedding};
use crate::prototypes::PrototypeBank;
use crate::pseudo::PseudoLabelPair;

/// Reference point the top-1 similarity is gapped against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GapReference {
    #[default]
    Top2,
    Mean,
    Median,
}

/// Which description kinds participate in mixing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnabledDescriptions {
    pub class: bool,
    pub image: bool,
    pub group: bool,
}

impl Default for EnabledDescriptions {
    fn default() -> Self {
        EnabledDescriptions {
            class: true,
            image: true,
            group: true,
        }
    }
}

impl EnabledDescriptions {
    pub fn any(&self) -> bool {
        self.class || self.image || self.group
    }
}

/// The three texts for one (image, pseudo-label) pair; kinds disabled by
/// ablation flags are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptionSet {
    pub class_text: Option<String>,
    pub image_text: Option<String>,
    pub group_text: Option<String>,
}

impl DescriptionSet {
    fn iter(&self) -> impl Iterator<Item = (CaptionKind, &String)> {
        [
            (CaptionKind::Image, self.image_text.as_ref()),
            (CaptionKind::Group, self.group_text.as_ref()),
            (CaptionKind::Class, self.class_text.as_ref()),
        ]
        .into_iter()
        .filter_map(|(k, t)| t.map(|t| (k, t)))
    }
}

/// One description's contribution to a mix, with everything the backward
/// pass needs to push gradients into the text encoder.
#[derive(Debug, Clone)]
pub struct MixedDescription {
    pub kind: CaptionKind,
    pub feat: TextFeaturization,
    /// Unnormalized live text embedding g(T).
    pub raw: Embedding,
    /// l2-normalized g(T).
    pub unit: Embedding,
    /// Effective weight after any zero-sum fallback.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct MixResult {
    pub t_bar: Embedding,
    pub descriptions: Vec<MixedDescription>,
    pub weight_sum: f64,
    pub used_fallback: bool,
    pub class_id: usize,
    pub alpha: f64,
}

impl MixResult {
    pub fn weight(&self, kind: CaptionKind) -> Option<f64> {
        self.descriptions.iter().find(|d| d.kind == kind).map(|d| d.weight)
    }
}

/// w = top1(similarities to all prototypes) minus the configured
/// reference (second largest, mean, or median of the set).
pub fn compute_weight(
    text_emb: &Embedding,
    bank: &PrototypeBank,
    gap_reference: GapReference,
) -> Result<f64> {
    if bank.num_classes() < 2 {
        return Err(LatteError::Config("weight gap needs at least two prototypes".into()));
    }
    let sims = bank.similarities(text_emb)?.0;
    let mut top1 = f64::NEG_INFINITY;
    let mut top2 = f64::NEG_INFINITY;
    for &s in &sims {
        if s > top1 {
            top2 = top1;
            top1 = s;
        } else if s > top2 {
            top2 = s;
        }
    }
    let reference = match gap_reference {
        GapReference::Top2 => top2,
        GapReference::Mean => sims.iter().sum::<f64>() / sims.len() as f64,
        GapReference::Median => {
            let mut sorted = sims.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = sorted.len();
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
            }
        }
    };
    Ok(top1 - reference)
}

const WEIGHT_SUM_FALLBACK_THRESHOLD: f64 = 1e-12;

/// Encodes every enabled description with the live text encoder, weighs
/// them, and blends the weighted average with the selected prototype:
/// t̄ = (1-α)·Σwᵢnᵢ/Σwᵢ + α·p_c.
///
/// With `use_mixer` off all weights are fixed to 1.0. A weight sum below
/// 1e-12 falls back to uniform weights and flags it.
#[allow(clippy::too_many_arguments)]
pub fn mix(
    descs: &DescriptionSet,
    live: &EncoderParams,
    bank: &PrototypeBank,
    pseudo_label: usize,
    alpha: f64,
    use_mixer: bool,
    gap_reference: GapReference,
) -> Result<MixResult> {
    let prototype = bank.prototype(pseudo_label)?.clone();
    let mut items: Vec<MixedDescription> = Vec::new();
    for (kind, text) in descs.iter() {
        let feat = featurize_text(text, live.vocab_size())?;
        let raw = encode_counts(live, &feat)?;
        let unit = l2_normalize(&raw)
            .map_err(|_| LatteError::degenerate(format!("{kind} description embedding")))?;
        let weight = if use_mixer {
            compute_weight(&unit, bank, gap_reference)?
        } else {
            1.0
        };
        items.push(MixedDescription {
            kind,
            feat,
            raw,
            unit,
            weight,
        });
    }
    if items.is_empty() {
        return Err(LatteError::Config("all descriptions disabled".into()));
    }
    let mut weight_sum: f64 = items.iter().map(|d| d.weight).sum();
    let used_fallback = weight_sum < WEIGHT_SUM_FALLBACK_THRESHOLD;
    if used_fallback {
        for d in &mut items {
            d.weight = 1.0;
        }
        weight_sum = items.len() as f64;
    }
    let dim = prototype.dim();
    let mut t_bar = Embedding::zeros(dim);
    for d in &items {
        t_bar.add_scaled(&d.unit, (1.0 - alpha) * d.weight / weight_sum);
    }
    t_bar.add_scaled(&prototype, alpha);
    if !t_bar.is_finite() {
        return Err(LatteError::NonFinite("mixed prototype-text embedding".into()));
    }
    Ok(MixResult {
        t_bar,
        descriptions: items,
        weight_sum,
        used_fallback,
        class_id: pseudo_label,
        alpha,
    })
}

/// Training-time caption resolution built from a caption cache.
///
/// Image descriptions are per image; group descriptions are served from
/// per-class pools keyed by the zero-shot grouping: the anchor's own
/// record if present, otherwise a uniformly sampled record for the class.
#[derive(Debug, Clone)]
pub struct CaptionLookup {
    image_texts: HashMap<String, String>,
    group_by_anchor: HashMap<(String, usize), String>,
    /// class -> (anchor id, text), sorted by anchor id.
    group_pools: HashMap<usize, Vec<(String, String)>>,
}

impl CaptionLookup {
    pub fn from_cache(cache: &CaptionCache) -> Self {
        let mut image_texts = HashMap::new();
        let mut group_by_anchor = HashMap::new();
        let mut group_pools: HashMap<usize, Vec<(String, String)>> = HashMap::new();
        for rec in cache.scan(None, None) {
            match rec.kind {
                CaptionKind::Image => {
                    image_texts.insert(rec.image_id.clone(), rec.text.clone());
                }
                CaptionKind::Group => {
                    if let Some(c) = rec.class_id {
                        group_by_anchor.insert((rec.image_id.clone(), c), rec.text.clone());
                        group_pools
                            .entry(c)
                            .or_default()
                            .push((rec.image_id.clone(), rec.text.clone()));
                    }
                }
                CaptionKind::Class => {}
            }
        }
        for pool in group_pools.values_mut() {
            pool.sort();
        }
        CaptionLookup {
            image_texts,
            group_by_anchor,
            group_pools,
        }
    }

    pub fn image_text(&self, image_id: &str) -> Result<&str> {
        self.image_texts
            .get(image_id)
            .map(|s| s.as_str())
            .ok_or_else(|| LatteError::MissingArtifact {
                artifact: format!("image caption for `{image_id}`"),
                produced_by: "describe".into(),
            })
    }

    pub fn group_text(&self, image_id: &str, class_id: usize, class_name: &str, rng: &mut impl Rng) -> Result<String> {
        if let Some(text) = self.group_by_anchor.get(&(image_id.to_string(), class_id)) {
            return Ok(text.clone());
        }
        let pool = self
            .group_pools
            .get(&class_id)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| LatteError::MissingCaption {
                class: class_name.to_string(),
            })?;
        Ok(pool[rng.gen_range(0..pool.len())].1.clone())
    }

    /// Assembles the description set for one (image, pseudo-label) stream.
    pub fn description_set(
        &self,
        image_id: &str,
        class_id: usize,
        class_name: &str,
        enabled: &EnabledDescriptions,
        rng: &mut impl Rng,
    ) -> Result<DescriptionSet> {
        if !enabled.any() {
            return Err(LatteError::Config("all descriptions disabled".into()));
        }
        Ok(DescriptionSet {
            class_text: enabled.class.then(|| render_class_text(class_name)),
            image_text: if enabled.image {
                Some(self.image_text(image_id)?.to_string())
            } else {
                None
            },
            group_text: if enabled.group {
                Some(self.group_text(image_id, class_id, class_name, rng)?)
            } else {
                None
            },
        })
    }
}

/// Runs [`mix`] once per pseudo-label stream, yielding (t̄_zs, t̄_ft).
#[allow(clippy::too_many_arguments)]
pub fn mix_pair(
    image_id: &str,
    pair: PseudoLabelPair,
    lookup: &CaptionLookup,
    live: &EncoderParams,
    bank: &PrototypeBank,
    enabled: &EnabledDescriptions,
    alpha: f64,
    use_mixer: bool,
    gap_reference: GapReference,
    rng: &mut impl Rng,
) -> Result<(MixResult, MixResult)> {
    let zs_name = &bank.class_names[pair.c_zs];
    let ft_name = &bank.class_names[pair.c_ft];
    let descs_zs = lookup.description_set(image_id, pair.c_zs, zs_name, enabled, rng)?;
    let descs_ft = lookup.description_set(image_id, pair.c_ft, ft_name, enabled, rng)?;
    let zs = mix(&descs_zs, live, bank, pair.c_zs, alpha, use_mixer, gap_reference)?;
    let ft = mix(&descs_ft, live, bank, pair.c_ft, alpha, use_mixer, gap_reference)?;
    Ok((zs, ft))
}
