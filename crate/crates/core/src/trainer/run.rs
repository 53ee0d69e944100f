//! Epoch/step scheduling: seeded shuffles, a fixed data-fraction subset,
//! the min(max_iterations, max_epochs) stopping rule, and epoch-boundary
//! hooks for checkpointing. All randomness is derived from (seed, epoch),
//! so a run resumed at an epoch boundary replays identically.

use std::collections::HashMap;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::captions::CaptionCache;
use crate::data::{Dataset, Sample};
use crate::encoders::{snapshot, EncoderParams};
use crate::error::{LatteError, Result};
use crate::mixer::CaptionLookup;
use crate::prototypes::PrototypeBank;

use super::config::{TrainConfig, TrainMode};
use super::optimizer::Optimizer;
use super::step::{train_step, StepReport, TrainerState};

/// Where a run restarts from; the origin for a fresh run. A `global_step`
/// past the `completed_epochs` boundary resumes mid-epoch: the epoch's
/// seeded shuffle is replayed and the already-run batches are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ResumePoint {
    pub completed_epochs: u64,
    pub global_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps_run: u64,
    pub completed_epochs: u64,
    pub final_step: u64,
}

/// Builds the mutable trainer state for a fresh run.
///
/// In latteclip mode the frozen snapshot is taken from the initial
/// parameters, the prototype bank is seeded from the frozen class
/// templates, and the caption cache plus c_zs table are required.
pub fn init_state(
    dataset: &Dataset,
    init_params: EncoderParams,
    cache: Option<&CaptionCache>,
    czs: Option<&[(String, usize)]>,
    cfg: &TrainConfig,
) -> Result<TrainerState> {
    cfg.validate()?;
    dataset.validate()?;
    let frozen = snapshot(&init_params, 0);
    let (bank, czs_map, lookup) = match cfg.mode {
        TrainMode::Latteclip => {
            let bank = PrototypeBank::init_from_class_texts(
                frozen.params(),
                &dataset.class_names,
                cfg.mu,
                cfg.alpha,
            )?;
            let czs = czs.ok_or_else(|| LatteError::MissingArtifact {
                artifact: "zero-shot pseudo-label table".into(),
                produced_by: "pseudo-label".into(),
            })?;
            let cache = cache.ok_or_else(|| LatteError::MissingArtifact {
                artifact: "caption cache".into(),
                produced_by: "describe".into(),
            })?;
            let map: HashMap<String, usize> = czs.iter().cloned().collect();
            (Some(bank), Some(map), Some(CaptionLookup::from_cache(cache)))
        }
        TrainMode::FlypPl | TrainMode::Oracle => (None, None, None),
    };
    Ok(TrainerState {
        live: init_params,
        frozen,
        bank,
        czs: czs_map,
        lookup,
        class_names: dataset.class_names.clone(),
        optimizer: Optimizer::new(cfg),
    })
}

/// The fixed seeded subset an epoch iterates over (indices into
/// `dataset.samples`). With `data_fraction = 1` this is the full split;
/// otherwise floor(fraction · N) samples, but never less than one batch.
pub fn epoch_subset(dataset_len: usize, cfg: &TrainConfig) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..dataset_len).collect();
    if cfg.data_fraction >= 1.0 {
        return indices;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ab5_e77e_d0da_7a00);
    indices.shuffle(&mut rng);
    let floor = (cfg.data_fraction * dataset_len as f64).floor() as usize;
    let min_batch = cfg.batch_size.min(dataset_len);
    let count = floor.max(min_batch).max(1).min(dataset_len);
    indices.truncate(count);
    indices
}

/// Runs training until min(max_iterations, max_epochs) is exhausted.
///
/// `on_step` fires after every optimizer step; `on_epoch_end` fires at
/// each completed epoch boundary and is the safe point to checkpoint.
pub fn train_loop(
    dataset: &Dataset,
    state: &mut TrainerState,
    cfg: &TrainConfig,
    resume: ResumePoint,
    on_step: &mut dyn FnMut(&StepReport) -> Result<()>,
    on_epoch_end: &mut dyn FnMut(ResumePoint, &TrainerState) -> Result<()>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(LatteError::Config("empty training split".into()));
    }
    let subset = epoch_subset(dataset.len(), cfg);
    let steps_per_epoch = ((subset.len() + cfg.batch_size - 1) / cfg.batch_size) as u64;
    let mut global_step = resume.global_step;
    let mut completed_epochs = resume.completed_epochs;
    let mut steps_run = 0;
    'epochs: for epoch in resume.completed_epochs..cfg.max_epochs {
        if global_step >= cfg.max_iterations {
            break;
        }
        let mut order = subset.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        // replay skip for a mid-epoch resume point
        let skip = if epoch == resume.completed_epochs {
            resume.global_step.saturating_sub(epoch * steps_per_epoch) as usize
        } else {
            0
        };
        for chunk in order.chunks(cfg.batch_size).skip(skip) {
            if global_step >= cfg.max_iterations {
                break 'epochs;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let report = train_step(state, &batch, cfg, global_step)?;
            global_step += 1;
            steps_run += 1;
            on_step(&report)?;
        }
        completed_epochs = epoch + 1;
        on_epoch_end(
            ResumePoint {
                completed_epochs,
                global_step,
            },
            state,
        )?;
    }
    Ok(TrainSummary {
        steps_run,
        completed_epochs,
        final_step: global_step,
    })
}
