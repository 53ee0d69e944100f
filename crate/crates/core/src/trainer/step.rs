//! One optimization step: resolve pseudo-labels and descriptions, run the
//! contrastive forward/backward for each enabled stream, update the
//! encoders, then feed the detached mixed targets to the prototype bank.
//!
//! Mixer weights are treated as constants in the backward pass unless
//! `grad_through_weights` is set; prototypes never receive gradient.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::captions::render_class_text;
use crate::data::Sample;
use crate::encoders::{
    encode_counts, encode_image, featurize_text, fnv1a_64, EncoderParams, FrozenSnapshot,
};
use crate::error::{LatteError, Result};
use crate::math::{l2_normalize, Embedding};
use crate::mixer::{mix, CaptionLookup, DescriptionSet, GapReference, MixResult};
use crate::prototypes::PrototypeBank;
use crate::pseudo::{
    class_text_embeddings, finetune_label, finetune_label_templates, FtLabelSource, PseudoLabelPair,
};

use super::config::{TrainConfig, TrainMode};
use super::loss::{contrastive_loss, contrastive_loss_backward, LossBackward};
use super::optimizer::{Optimizer, ParamGrads};

/// Everything a training run mutates.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub live: EncoderParams,
    pub frozen: FrozenSnapshot,
    /// Present in latteclip mode only.
    pub bank: Option<PrototypeBank>,
    /// Precomputed frozen pseudo-labels, latteclip mode only.
    pub czs: Option<HashMap<String, usize>>,
    /// Caption resolution, latteclip mode only.
    pub lookup: Option<CaptionLookup>,
    pub class_names: Vec<String>,
    pub optimizer: Optimizer,
}

/// Per-step metrics line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub loss_zs: Option<f64>,
    pub loss_ft: Option<f64>,
    pub total_loss: f64,
    pub grad_norm: f64,
    pub classes_updated: usize,
    pub wall_ms: u64,
}

/// Pseudo-labels and caption texts for one batch, resolved up front so the
/// numeric forward/backward is a pure function of the parameters.
#[derive(Debug, Clone)]
pub struct ResolvedBatch {
    pub xs: Vec<Vec<f64>>,
    pub pairs: Vec<PseudoLabelPair>,
    pub descs_zs: Vec<DescriptionSet>,
    pub descs_ft: Vec<DescriptionSet>,
}

/// Resolves c_zs from the precomputed table, recomputes c_ft against the
/// live model, and fixes the caption texts (group captions fall back to a
/// seeded same-class draw when the anchor has none).
pub fn resolve_batch(
    batch: &[&Sample],
    state: &TrainerState,
    cfg: &TrainConfig,
    step_index: u64,
) -> Result<ResolvedBatch> {
    if batch.is_empty() {
        return Err(LatteError::Config("empty training batch".into()));
    }
    let bank = state.bank.as_ref().ok_or_else(|| LatteError::ModeMismatch("latteclip step needs a prototype bank".into()))?;
    let czs = state.czs.as_ref().ok_or_else(|| LatteError::MissingArtifact {
        artifact: "zero-shot pseudo-label table".into(),
        produced_by: "pseudo-label".into(),
    })?;
    let lookup = state.lookup.as_ref().ok_or_else(|| LatteError::MissingArtifact {
        artifact: "caption cache".into(),
        produced_by: "describe".into(),
    })?;
    let live_templates = match cfg.ft_label_source {
        FtLabelSource::Templates => Some(class_text_embeddings(&state.live, &state.class_names)?),
        FtLabelSource::Prototypes => None,
    };
    let enabled = cfg.enabled();
    let mut out = ResolvedBatch {
        xs: Vec::with_capacity(batch.len()),
        pairs: Vec::with_capacity(batch.len()),
        descs_zs: Vec::with_capacity(batch.len()),
        descs_ft: Vec::with_capacity(batch.len()),
    };
    for s in batch {
        let c_zs = *czs.get(&s.image_id).ok_or_else(|| LatteError::MissingArtifact {
            artifact: format!("zero-shot pseudo-label for `{}`", s.image_id),
            produced_by: "pseudo-label".into(),
        })?;
        let c_ft = match &live_templates {
            Some(templates) => {
                finetune_label_templates(&state.live, templates, &s.features, &s.image_id)?
            }
            None => finetune_label(&state.live, bank, &s.features, &s.image_id)?,
        };
        let pair = PseudoLabelPair { c_zs, c_ft };
        // group-caption fallback draws are deterministic per (seed, step, image)
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ step_index.rotate_left(17) ^ fnv1a_64(s.image_id.as_bytes()));
        let descs_zs =
            lookup.description_set(&s.image_id, c_zs, &state.class_names[c_zs], &enabled, &mut rng)?;
        let descs_ft =
            lookup.description_set(&s.image_id, c_ft, &state.class_names[c_ft], &enabled, &mut rng)?;
        out.xs.push(s.features.clone());
        out.pairs.push(pair);
        out.descs_zs.push(descs_zs);
        out.descs_ft.push(descs_ft);
    }
    Ok(out)
}

/// Gradient of one description's mixer weight with respect to its unit
/// text embedding: the normalized top-1 prototype minus the reference
/// point's subgradient (top-2 / mean / median of the bank).
fn weight_grad_direction(
    unit: &Embedding,
    bank: &PrototypeBank,
    gap_reference: GapReference,
) -> Result<Embedding> {
    let sims = bank.similarities(unit)?.0;
    let mut i1 = 0usize;
    let mut i2 = usize::MAX;
    for i in 1..sims.len() {
        if sims[i] > sims[i1] {
            i2 = i1;
            i1 = i;
        } else if i2 == usize::MAX || sims[i] > sims[i2] {
            i2 = i;
        }
    }
    let unit_proto = |c: usize| -> Result<Embedding> { l2_normalize(bank.prototype(c)?) };
    let mut dir = unit_proto(i1)?;
    match gap_reference {
        GapReference::Top2 => {
            dir.add_scaled(&unit_proto(i2)?, -1.0);
        }
        GapReference::Mean => {
            let scale = -1.0 / sims.len() as f64;
            for c in 0..sims.len() {
                dir.add_scaled(&unit_proto(c)?, scale);
            }
        }
        GapReference::Median => {
            let mut order: Vec<usize> = (0..sims.len()).collect();
            order.sort_by(|&a, &b| sims[a].partial_cmp(&sims[b]).unwrap());
            let n = order.len();
            if n % 2 == 1 {
                dir.add_scaled(&unit_proto(order[n / 2])?, -1.0);
            } else {
                dir.add_scaled(&unit_proto(order[n / 2 - 1])?, -0.5);
                dir.add_scaled(&unit_proto(order[n / 2])?, -0.5);
            }
        }
    }
    Ok(dir)
}

/// Runs [`mix`] for every sample of one stream.
fn stream_mixes(
    params: &EncoderParams,
    descs: &[DescriptionSet],
    labels: impl Iterator<Item = usize>,
    bank: &PrototypeBank,
    cfg: &TrainConfig,
) -> Result<Vec<MixResult>> {
    descs
        .iter()
        .zip(labels)
        .map(|(d, c)| mix(d, params, bank, c, cfg.alpha, cfg.use_mixer, cfg.gap_reference))
        .collect()
}

/// Scalar stream loss as a pure function of the encoder parameters, for
/// finite-difference validation. When `fixed_weights` is given the mixer
/// weights are pinned to those values (the semi-gradient semantics used
/// when `grad_through_weights` is off); otherwise they are recomputed.
#[allow(clippy::too_many_arguments)]
pub fn stream_loss_value(
    params: &EncoderParams,
    xs: &[Vec<f64>],
    descs: &[DescriptionSet],
    labels: &[usize],
    bank: &PrototypeBank,
    cfg: &TrainConfig,
    fixed_weights: Option<&[Vec<f64>]>,
) -> Result<f64> {
    let mut images = Vec::with_capacity(xs.len());
    for x in xs {
        images.push(encode_image(params, x)?);
    }
    let mut targets = Vec::with_capacity(xs.len());
    for (i, (d, &c)) in descs.iter().zip(labels.iter()).enumerate() {
        match fixed_weights {
            None => {
                let m = mix(d, params, bank, c, cfg.alpha, cfg.use_mixer, cfg.gap_reference)?;
                targets.push(m.t_bar);
            }
            Some(weights) => {
                let w = &weights[i];
                let weight_sum: f64 = w.iter().sum();
                let mut t_bar = bank.prototype(c)?.scaled(cfg.alpha);
                for ((_, text), &wk) in d_iter(d).zip(w.iter()) {
                    let feat = featurize_text(text, params.vocab_size())?;
                    let unit = l2_normalize(&encode_counts(params, &feat)?)?;
                    t_bar.add_scaled(&unit, (1.0 - cfg.alpha) * wk / weight_sum);
                }
                targets.push(t_bar);
            }
        }
    }
    contrastive_loss(&images, &targets, params.temperature())
}

fn d_iter(d: &DescriptionSet) -> impl Iterator<Item = (crate::captions::CaptionKind, &String)> {
    use crate::captions::CaptionKind;
    [
        (CaptionKind::Image, d.image_text.as_ref()),
        (CaptionKind::Group, d.group_text.as_ref()),
        (CaptionKind::Class, d.class_text.as_ref()),
    ]
    .into_iter()
    .filter_map(|(k, t)| t.map(|t| (k, t)))
}

/// Pushes one stream's loss gradients into the parameter accumulator.
fn backprop_stream(
    xs: &[Vec<f64>],
    mixes: &[MixResult],
    back: &LossBackward,
    grads: &mut ParamGrads,
    bank: &PrototypeBank,
    cfg: &TrainConfig,
) -> Result<()> {
    for (x, g) in xs.iter().zip(back.d_image.iter()) {
        grads.add_image_outer(x, g);
    }
    grads.logit_scale += back.d_logit_scale;
    for (m, d_tbar) in mixes.iter().zip(back.d_text.iter()) {
        let text_scale = (1.0 - m.alpha) / m.weight_sum;
        // weighted average of the unit text embeddings, needed for the
        // optional gradient through the weights
        let t_text = if cfg.grad_through_weights && cfg.use_mixer && !m.used_fallback {
            let mut t = Embedding::zeros(d_tbar.dim());
            for desc in &m.descriptions {
                t.add_scaled(&desc.unit, desc.weight / m.weight_sum);
            }
            Some(t)
        } else {
            None
        };
        for desc in &m.descriptions {
            let mut d_unit = d_tbar.scaled(text_scale * desc.weight);
            if let Some(t_text) = &t_text {
                let mut diff = desc.unit.clone();
                diff.add_scaled(t_text, -1.0);
                let d_weight = text_scale * d_tbar.dot(&diff);
                let dir = weight_grad_direction(&desc.unit, bank, cfg.gap_reference)?;
                d_unit.add_scaled(&dir, d_weight);
            }
            // through l2 normalization of the raw text embedding
            let proj = desc.unit.dot(&d_unit);
            d_unit.add_scaled(&desc.unit, -proj);
            let d_raw = d_unit.scaled(1.0 / desc.raw.norm());
            grads.add_text_counts(&desc.feat.counts, &d_raw);
        }
    }
    Ok(())
}

/// Forward/backward over a resolved batch, without touching any state.
pub struct LatteForwardBackward {
    pub grads: ParamGrads,
    pub loss_zs: Option<f64>,
    pub loss_ft: Option<f64>,
    pub mixes_zs: Vec<MixResult>,
    pub mixes_ft: Vec<MixResult>,
}

pub fn latte_forward_backward(
    live: &EncoderParams,
    bank: &PrototypeBank,
    resolved: &ResolvedBatch,
    cfg: &TrainConfig,
) -> Result<LatteForwardBackward> {
    let mut images = Vec::with_capacity(resolved.xs.len());
    for x in &resolved.xs {
        images.push(encode_image(live, x)?);
    }
    let mixes_zs = stream_mixes(
        live,
        &resolved.descs_zs,
        resolved.pairs.iter().map(|p| p.c_zs),
        bank,
        cfg,
    )?;
    let mixes_ft = stream_mixes(
        live,
        &resolved.descs_ft,
        resolved.pairs.iter().map(|p| p.c_ft),
        bank,
        cfg,
    )?;
    let mut grads = ParamGrads::zeros_like(live);
    let mut loss_zs = None;
    let mut loss_ft = None;
    if cfg.use_zs_loss {
        let targets: Vec<Embedding> = mixes_zs.iter().map(|m| m.t_bar.clone()).collect();
        let back = contrastive_loss_backward(&images, &targets, live.logit_scale)?;
        backprop_stream(&resolved.xs, &mixes_zs, &back, &mut grads, bank, cfg)?;
        loss_zs = Some(back.loss);
    }
    if cfg.use_ft_loss {
        let targets: Vec<Embedding> = mixes_ft.iter().map(|m| m.t_bar.clone()).collect();
        let back = contrastive_loss_backward(&images, &targets, live.logit_scale)?;
        backprop_stream(&resolved.xs, &mixes_ft, &back, &mut grads, bank, cfg)?;
        loss_ft = Some(back.loss);
    }
    Ok(LatteForwardBackward {
        grads,
        loss_zs,
        loss_ft,
        mixes_zs,
        mixes_ft,
    })
}

/// One full latteclip step over a batch.
pub fn train_step(
    state: &mut TrainerState,
    batch: &[&Sample],
    cfg: &TrainConfig,
    step_index: u64,
) -> Result<StepReport> {
    let started = Instant::now();
    match cfg.mode {
        TrainMode::Latteclip => {
            let resolved = resolve_batch(batch, state, cfg, step_index)?;
            let bank = state.bank.as_ref().ok_or_else(|| LatteError::ModeMismatch("latteclip step needs a prototype bank".into()))?;
            let fb = latte_forward_backward(&state.live, bank, &resolved, cfg)?;
            let grad_norm = fb.grads.l2_norm();
            state.optimizer.apply(&mut state.live, &fb.grads)?;

            // detached mixed targets drive the prototype EMA: zero-shot
            // stream first, then the fine-tuning stream
            let bank = state.bank.as_mut().unwrap();
            let mut touched: HashSet<usize> = HashSet::new();
            let zs_assignments: Vec<(usize, Embedding)> = resolved
                .pairs
                .iter()
                .zip(fb.mixes_zs.iter())
                .map(|(p, m)| (p.c_zs, m.t_bar.clone()))
                .collect();
            touched.extend(zs_assignments.iter().map(|(c, _)| *c));
            bank.batch_momentum_update(&zs_assignments)?;
            let ft_assignments: Vec<(usize, Embedding)> = resolved
                .pairs
                .iter()
                .zip(fb.mixes_ft.iter())
                .filter(|(p, _)| !(cfg.dedupe_streams && p.c_ft == p.c_zs))
                .map(|(p, m)| (p.c_ft, m.t_bar.clone()))
                .collect();
            touched.extend(ft_assignments.iter().map(|(c, _)| *c));
            bank.batch_momentum_update(&ft_assignments)?;
            bank.step += 1;

            let total = fb.loss_zs.unwrap_or(0.0) + fb.loss_ft.unwrap_or(0.0);
            Ok(StepReport {
                step: step_index,
                loss_zs: fb.loss_zs,
                loss_ft: fb.loss_ft,
                total_loss: total,
                grad_norm,
                classes_updated: touched.len(),
                wall_ms: started.elapsed().as_millis() as u64,
            })
        }
        TrainMode::FlypPl => {
            let templates = class_text_embeddings(&state.live, &state.class_names)?;
            let labels: Vec<usize> = batch
                .iter()
                .map(|s| finetune_label_templates(&state.live, &templates, &s.features, &s.image_id))
                .collect::<Result<_>>()?;
            single_stream_step(state, batch, &labels, step_index, started)
        }
        TrainMode::Oracle => {
            let labels: Vec<usize> = batch
                .iter()
                .map(|s| {
                    s.gt_label.ok_or_else(|| {
                        LatteError::Config(format!(
                            "oracle mode needs ground-truth labels, sample `{}` has none",
                            s.image_id
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            single_stream_step(state, batch, &labels, step_index, started)
        }
    }
}

/// Shared flyp_pl / oracle step: one contrastive loss against the class
/// templates of the chosen labels, no prototype bank.
fn single_stream_step(
    state: &mut TrainerState,
    batch: &[&Sample],
    labels: &[usize],
    step_index: u64,
    started: Instant,
) -> Result<StepReport> {
    let mut images = Vec::with_capacity(batch.len());
    let mut feats = Vec::with_capacity(batch.len());
    let mut texts = Vec::with_capacity(batch.len());
    for (s, &label) in batch.iter().zip(labels.iter()) {
        if label >= state.class_names.len() {
            return Err(LatteError::ClassIndexOutOfRange {
                index: label,
                num_classes: state.class_names.len(),
            });
        }
        images.push(encode_image(&state.live, &s.features)?);
        let feat = featurize_text(&render_class_text(&state.class_names[label]), state.live.vocab_size())?;
        texts.push(encode_counts(&state.live, &feat)?);
        feats.push(feat);
    }
    let back = contrastive_loss_backward(&images, &texts, state.live.logit_scale)?;
    let mut grads = ParamGrads::zeros_like(&state.live);
    for (s, g) in batch.iter().zip(back.d_image.iter()) {
        grads.add_image_outer(&s.features, g);
    }
    for (feat, g) in feats.iter().zip(back.d_text.iter()) {
        grads.add_text_counts(&feat.counts, g);
    }
    grads.logit_scale = back.d_logit_scale;
    let grad_norm = grads.l2_norm();
    state.optimizer.apply(&mut state.live, &grads)?;
    Ok(StepReport {
        step: step_index,
        loss_zs: None,
        loss_ft: None,
        total_loss: back.loss,
        grad_norm,
        classes_updated: 0,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captions::{CaptionCache, CaptionKind, CaptionRecord, CAPTION_FORMAT_VERSION};
    use crate::encoders::{default_logit_scale, snapshot};
    use crate::math::Matrix;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const D_IN: usize = 4;
    const D: usize = 4;
    const V: usize = 64;

    fn rand_params(seed: u64) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderParams::new(
            Matrix::from_fn(D_IN, D, |_, _| rng.gen_range(-0.5..0.5)),
            Matrix::from_fn(V, D, |_, _| rng.gen_range(-0.5..0.5)),
            default_logit_scale(),
        )
        .unwrap()
    }

    fn names() -> Vec<String> {
        vec!["oak".into(), "fern".into(), "moss".into()]
    }

    fn record(image_id: &str, kind: CaptionKind, class_id: Option<usize>, text: &str) -> CaptionRecord {
        CaptionRecord {
            image_id: image_id.into(),
            kind,
            class_id,
            text: text.into(),
            group_member_ids: Vec::new(),
            provider: "stub".into(),
            created_at: 0,
            format_version: CAPTION_FORMAT_VERSION,
        }
    }

    fn fixture(seed: u64) -> (TrainerState, Vec<Sample>, TrainConfig) {
        let params = rand_params(seed);
        let frozen = snapshot(&params, 0);
        let bank = PrototypeBank::init_from_class_texts(&params, &names(), 0.99, 0.99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let samples: Vec<Sample> = (0..4)
            .map(|i| Sample {
                image_id: format!("img{i}"),
                features: (0..D_IN).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                gt_label: Some(i % 3),
            })
            .collect();
        let mut cache = CaptionCache::in_memory();
        for s in &samples {
            cache
                .put(record(
                    &s.image_id,
                    CaptionKind::Image,
                    None,
                    &format!("a mossy {} with green leaves", s.image_id),
                ))
                .unwrap();
            for c in 0..3 {
                cache
                    .put(record(
                        &s.image_id,
                        CaptionKind::Group,
                        Some(c),
                        &format!("several photos of {} plants together", names()[c]),
                    ))
                    .unwrap();
            }
        }
        let czs: HashMap<String, usize> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.image_id.clone(), (i + 1) % 3))
            .collect();
        let cfg = TrainConfig {
            batch_size: 4,
            learning_rate: 1e-4,
            seed,
            ..TrainConfig::default()
        };
        let state = TrainerState {
            live: params,
            frozen,
            bank: Some(bank),
            czs: Some(czs),
            lookup: Some(CaptionLookup::from_cache(&cache)),
            class_names: names(),
            optimizer: Optimizer::new(&cfg),
        };
        (state, samples, cfg)
    }

    fn total_loss_at(
        params: &EncoderParams,
        resolved: &ResolvedBatch,
        bank: &PrototypeBank,
        cfg: &TrainConfig,
        fixed: Option<(&[Vec<f64>], &[Vec<f64>])>,
    ) -> f64 {
        let zs_labels: Vec<usize> = resolved.pairs.iter().map(|p| p.c_zs).collect();
        let ft_labels: Vec<usize> = resolved.pairs.iter().map(|p| p.c_ft).collect();
        let (w_zs, w_ft) = match fixed {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };
        stream_loss_value(params, &resolved.xs, &resolved.descs_zs, &zs_labels, bank, cfg, w_zs)
            .unwrap()
            + stream_loss_value(params, &resolved.xs, &resolved.descs_ft, &ft_labels, bank, cfg, w_ft)
                .unwrap()
    }

    fn check_grads_by_finite_differences(grad_through_weights: bool, seed: u64) {
        let (state, samples, mut cfg) = fixture(seed);
        cfg.grad_through_weights = grad_through_weights;
        let batch: Vec<&Sample> = samples.iter().collect();
        let resolved = resolve_batch(&batch, &state, &cfg, 0).unwrap();
        let bank = state.bank.as_ref().unwrap();
        let fb = latte_forward_backward(&state.live, bank, &resolved, &cfg).unwrap();
        let weights_of = |mixes: &[MixResult]| -> Vec<Vec<f64>> {
            mixes
                .iter()
                .map(|m| m.descriptions.iter().map(|d| d.weight).collect())
                .collect()
        };
        let (w_zs, w_ft) = (weights_of(&fb.mixes_zs), weights_of(&fb.mixes_ft));
        let loss_at = |p: &EncoderParams| -> f64 {
            if grad_through_weights {
                total_loss_at(p, &resolved, bank, &cfg, None)
            } else {
                total_loss_at(p, &resolved, bank, &cfg, Some((&w_zs, &w_ft)))
            }
        };
        let h = 1e-6;
        let mut checked = 0;
        let check = |an: f64, fd: f64, what: &str| {
            let tol = 1e-4 * an.abs().max(fd.abs()).max(1e-3);
            assert!((an - fd).abs() <= tol, "{what}: analytic {an} vs fd {fd}");
        };
        for r in 0..D_IN {
            for c in 0..D {
                let mut plus = state.live.clone();
                let mut minus = state.live.clone();
                *plus.image_weights.at_mut(r, c) += h;
                *minus.image_weights.at_mut(r, c) -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                check(fb.grads.image_weights.at(r, c), fd, &format!("image ({r},{c})"));
                checked += 1;
            }
        }
        // text rows actually touched by the captions
        let mut buckets: HashSet<usize> = HashSet::new();
        for m in fb.mixes_zs.iter().chain(fb.mixes_ft.iter()) {
            for d in &m.descriptions {
                buckets.extend(d.feat.counts.iter().map(|&(b, _)| b));
            }
        }
        for &b in &buckets {
            for c in 0..D {
                let mut plus = state.live.clone();
                let mut minus = state.live.clone();
                *plus.text_weights.at_mut(b, c) += h;
                *minus.text_weights.at_mut(b, c) -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                check(fb.grads.text_weights.at(b, c), fd, &format!("text ({b},{c})"));
                checked += 1;
            }
        }
        // logit scale
        let mut plus = state.live.clone();
        let mut minus = state.live.clone();
        plus.logit_scale += h;
        minus.logit_scale -= h;
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        check(fb.grads.logit_scale, fd, "logit scale");
        assert!(checked > 20);
    }

    #[test]
    fn latte_gradients_match_finite_differences() {
        for seed in 0..3 {
            check_grads_by_finite_differences(false, seed);
        }
    }

    #[test]
    fn latte_gradients_through_weights_match_finite_differences() {
        for seed in 0..3 {
            check_grads_by_finite_differences(true, seed);
        }
    }

    #[test]
    fn untouched_text_rows_have_zero_gradient() {
        let (state, samples, cfg) = fixture(11);
        let batch: Vec<&Sample> = samples.iter().collect();
        let resolved = resolve_batch(&batch, &state, &cfg, 0).unwrap();
        let bank = state.bank.as_ref().unwrap();
        let fb = latte_forward_backward(&state.live, bank, &resolved, &cfg).unwrap();
        let mut buckets: HashSet<usize> = HashSet::new();
        for m in fb.mixes_zs.iter().chain(fb.mixes_ft.iter()) {
            for d in &m.descriptions {
                buckets.extend(d.feat.counts.iter().map(|&(b, _)| b));
            }
        }
        for b in 0..V {
            if buckets.contains(&b) {
                continue;
            }
            for c in 0..D {
                assert_eq!(fb.grads.text_weights.at(b, c), 0.0, "row {b}");
            }
        }
    }

    #[test]
    fn zero_learning_rate_still_moves_prototypes() {
        let (mut state, samples, mut cfg) = fixture(3);
        cfg.learning_rate = 0.0;
        state.optimizer = Optimizer::new(&cfg);
        let params_before = state.live.clone();
        let bank_before = state.bank.clone().unwrap();
        let batch: Vec<&Sample> = samples.iter().collect();
        let report = train_step(&mut state, &batch, &cfg, 0).unwrap();
        assert_eq!(state.live, params_before);
        assert_ne!(state.bank.as_ref().unwrap().vectors, bank_before.vectors);
        assert!(report.classes_updated > 0);
        assert!(report.total_loss.is_finite());
    }

    #[test]
    fn dedupe_skips_matching_ft_assignments() {
        // force c_ft == c_zs by pointing the czs table at the live labels
        let (mut state, samples, mut cfg) = fixture(5);
        cfg.learning_rate = 0.0;
        cfg.dedupe_streams = true;
        state.optimizer = Optimizer::new(&cfg);
        let bank = state.bank.as_ref().unwrap();
        let live_labels: HashMap<String, usize> = samples
            .iter()
            .map(|s| {
                let c = finetune_label(&state.live, bank, &s.features, &s.image_id).unwrap();
                (s.image_id.clone(), c)
            })
            .collect();
        state.czs = Some(live_labels);
        let batch: Vec<&Sample> = samples.iter().collect();

        let mut deduped = state.clone();
        train_step(&mut deduped, &batch, &cfg, 0).unwrap();

        // reference: a zs-only EMA pass over the same targets
        let resolved = resolve_batch(&batch, &state, &cfg, 0).unwrap();
        let fb = latte_forward_backward(&state.live, state.bank.as_ref().unwrap(), &resolved, &cfg).unwrap();
        let mut reference = state.bank.clone().unwrap();
        let assignments: Vec<(usize, Embedding)> = resolved
            .pairs
            .iter()
            .zip(fb.mixes_zs.iter())
            .map(|(p, m)| (p.c_zs, m.t_bar.clone()))
            .collect();
        reference.batch_momentum_update(&assignments).unwrap();
        let got = &deduped.bank.as_ref().unwrap().vectors;
        for (g, e) in got.iter().zip(reference.vectors.iter()) {
            for (a, b) in g.0.iter().zip(e.0.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flyp_step_trains_and_reports() {
        let (mut state, samples, mut cfg) = fixture(7);
        cfg.mode = TrainMode::FlypPl;
        cfg.learning_rate = 1e-3;
        state.optimizer = Optimizer::new(&cfg);
        state.bank = None;
        state.czs = None;
        state.lookup = None;
        let before = state.live.clone();
        let batch: Vec<&Sample> = samples.iter().collect();
        let report = train_step(&mut state, &batch, &cfg, 0).unwrap();
        assert_ne!(state.live, before);
        assert!(report.total_loss.is_finite());
        assert_eq!(report.classes_updated, 0);
        assert!(report.loss_zs.is_none() && report.loss_ft.is_none());
    }

    #[test]
    fn flyp_gradients_match_finite_differences() {
        let (state, samples, _) = fixture(9);
        // fix the labels, then the flyp loss is differentiable in the params
        let templates = class_text_embeddings(&state.live, &state.class_names).unwrap();
        let labels: Vec<usize> = samples
            .iter()
            .map(|s| finetune_label_templates(&state.live, &templates, &s.features, &s.image_id).unwrap())
            .collect();
        let loss_at = |p: &EncoderParams| -> f64 {
            let images: Vec<Embedding> = samples
                .iter()
                .map(|s| encode_image(p, &s.features).unwrap())
                .collect();
            let texts: Vec<Embedding> = labels
                .iter()
                .map(|&l| {
                    crate::encoders::encode_text(p, &render_class_text(&state.class_names[l])).unwrap()
                })
                .collect();
            contrastive_loss(&images, &texts, p.temperature()).unwrap()
        };
        // analytic grads via the shared single-stream path
        let images: Vec<Embedding> = samples
            .iter()
            .map(|s| encode_image(&state.live, &s.features).unwrap())
            .collect();
        let feats: Vec<_> = labels
            .iter()
            .map(|&l| featurize_text(&render_class_text(&state.class_names[l]), V).unwrap())
            .collect();
        let texts: Vec<Embedding> = feats
            .iter()
            .map(|f| encode_counts(&state.live, f).unwrap())
            .collect();
        let back = contrastive_loss_backward(&images, &texts, state.live.logit_scale).unwrap();
        let mut grads = ParamGrads::zeros_like(&state.live);
        for (s, g) in samples.iter().zip(back.d_image.iter()) {
            grads.add_image_outer(&s.features, g);
        }
        for (f, g) in feats.iter().zip(back.d_text.iter()) {
            grads.add_text_counts(&f.counts, g);
        }
        let h = 1e-6;
        for r in 0..D_IN {
            for c in 0..D {
                let mut plus = state.live.clone();
                let mut minus = state.live.clone();
                *plus.image_weights.at_mut(r, c) += h;
                *minus.image_weights.at_mut(r, c) -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let an = grads.image_weights.at(r, c);
                assert!(
                    (an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-3),
                    "image ({r},{c}): {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn oracle_without_gt_is_error() {
        let (mut state, mut samples, mut cfg) = fixture(13);
        cfg.mode = TrainMode::Oracle;
        for s in &mut samples {
            s.gt_label = None;
        }
        let batch: Vec<&Sample> = samples.iter().collect();
        assert!(train_step(&mut state, &batch, &cfg, 0).is_err());
    }

    #[test]
    fn missing_czs_entry_names_producer() {
        let (mut state, samples, cfg) = fixture(15);
        state.czs = Some(HashMap::new());
        let batch: Vec<&Sample> = samples.iter().collect();
        let err = train_step(&mut state, &batch, &cfg, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pseudo-label"), "{msg}");
    }

    #[test]
    fn empty_batch_is_error() {
        let (mut state, _, cfg) = fixture(17);
        assert!(train_step(&mut state, &[], &cfg, 0).is_err());
    }

    #[test]
    fn resolution_is_deterministic_per_step() {
        let (state, samples, cfg) = fixture(19);
        let batch: Vec<&Sample> = samples.iter().collect();
        let a = resolve_batch(&batch, &state, &cfg, 3).unwrap();
        let b = resolve_batch(&batch, &state, &cfg, 3).unwrap();
        assert_eq!(a.descs_zs, b.descs_zs);
        assert_eq!(a.pairs, b.pairs);
    }
}
