//! Ablation grid over the toy benchmark: builds the cross product of the
//! requested flag settings, trains each feasible cell end to end, and
//! reports test accuracy per cell. Infeasible cells are skipped with the
//! reason, never silently dropped.

use serde::{Deserialize, Serialize};

use crate::captions::{
    generate_with_retry, render_group_prompt, run_describe, CaptionCache, CaptionKind,
    CaptionProvider, CaptionRecord, CaptionRequest, DescribeConfig, RetryPolicy, StubProvider,
    CAPTION_FORMAT_VERSION,
};
use crate::data::Dataset;
use crate::encoders::fnv1a_64;
use crate::error::Result;
use crate::eval::{evaluate, Classifier};
use crate::pseudo::label_dataset;
use crate::toy::ToyBundle;
use crate::trainer::{init_state, train_loop, ResumePoint, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One swept dimension; the grid is the cross product of all axes.
#[derive(Debug, Clone)]
pub enum AblationAxis {
    Descriptions(Vec<Vec<CaptionKind>>),
    Mixer(Vec<bool>),
    /// (use_zs_loss, use_ft_loss) pairs.
    Losses(Vec<(bool, bool)>),
    Mu(Vec<f64>),
    GroupSize(Vec<usize>),
    /// Number of ground-truth-correct images per sampled group (anchor
    /// included); groups are contaminated with other-class images to fill.
    CorrectImages(Vec<usize>),
    DataFraction(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct AblationCell {
    pub label: String,
    pub config: TrainConfig,
    pub correct_images: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub label: String,
    pub top1: Option<f64>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Test accuracy of the uncorrupted starting point, for reference.
    pub zero_shot_top1: f64,
    pub cells: Vec<CellOutcome>,
}

fn kind_tag(kinds: &[CaptionKind]) -> String {
    if kinds.is_empty() {
        return "none".into();
    }
    kinds
        .iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join("+")
}

/// Expands the cross product of the axes over a base configuration.
pub fn ablation_cells(base: &TrainConfig, axes: &[AblationAxis]) -> Vec<AblationCell> {
    let mut cells = vec![AblationCell {
        label: String::new(),
        config: base.clone(),
        correct_images: None,
    }];
    for axis in axes {
        let mut next = Vec::new();
        for cell in &cells {
            let variants: Vec<(String, AblationCell)> = match axis {
                AblationAxis::Descriptions(sets) => sets
                    .iter()
                    .map(|kinds| {
                        let mut c = cell.clone();
                        c.config.enabled_descriptions = kinds.clone();
                        (format!("descriptions={}", kind_tag(kinds)), c)
                    })
                    .collect(),
                AblationAxis::Mixer(values) => values
                    .iter()
                    .map(|&v| {
                        let mut c = cell.clone();
                        c.config.use_mixer = v;
                        (format!("mixer={v}"), c)
                    })
                    .collect(),
                AblationAxis::Losses(pairs) => pairs
                    .iter()
                    .map(|&(zs, ft)| {
                        let mut c = cell.clone();
                        c.config.use_zs_loss = zs;
                        c.config.use_ft_loss = ft;
                        (format!("zs_loss={zs}|ft_loss={ft}"), c)
                    })
                    .collect(),
                AblationAxis::Mu(values) => values
                    .iter()
                    .map(|&v| {
                        let mut c = cell.clone();
                        c.config.mu = v;
                        (format!("mu={v}"), c)
                    })
                    .collect(),
                AblationAxis::GroupSize(values) => values
                    .iter()
                    .map(|&v| {
                        let mut c = cell.clone();
                        c.config.group_size = v;
                        (format!("k={v}"), c)
                    })
                    .collect(),
                AblationAxis::CorrectImages(values) => values
                    .iter()
                    .map(|&v| {
                        let mut c = cell.clone();
                        c.correct_images = Some(v);
                        (format!("correct={v}"), c)
                    })
                    .collect(),
                AblationAxis::DataFraction(values) => values
                    .iter()
                    .map(|&v| {
                        let mut c = cell.clone();
                        c.config.data_fraction = v;
                        (format!("fraction={v}"), c)
                    })
                    .collect(),
            };
            for (tag, mut variant) in variants {
                variant.label = if cell.label.is_empty() {
                    tag
                } else {
                    format!("{}|{}", cell.label, tag)
                };
                next.push(variant);
            }
        }
        cells = next;
    }
    cells
}

/// Generates group captions with a controlled number of ground-truth
/// correct members: the anchor plus `correct - 1` same-class images, the
/// rest drawn from other classes. The caption hint is the majority
/// ground-truth class of the members (ties favor the anchor).
fn describe_with_correct_count(
    train: &Dataset,
    czs: &[(String, usize)],
    provider: &dyn CaptionProvider,
    cache: &mut CaptionCache,
    cfg: &DescribeConfig,
    correct: usize,
) -> Result<()> {
    let gt_of = |id: &str| -> usize {
        train
            .samples
            .iter()
            .find(|s| s.image_id == id)
            .and_then(|s| s.gt_label)
            .expect("toy samples carry ground truth")
    };
    let mut same_pools: Vec<Vec<&str>> = vec![Vec::new(); train.num_classes()];
    for s in &train.samples {
        same_pools[s.gt_label.unwrap()].push(&s.image_id);
    }
    for (id, czs_label) in czs {
        let key = (id.clone(), CaptionKind::Group, Some(*czs_label));
        if cache.contains(&key) {
            continue;
        }
        let g = gt_of(id);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a_64(id.as_bytes()));
        let mut members = vec![id.clone()];
        let same: Vec<&str> = same_pools[g].iter().filter(|m| *m != id).cloned().collect();
        for _ in 0..correct.saturating_sub(1) {
            members.push(same[rng.gen_range(0..same.len())].to_string());
        }
        let other: Vec<&str> = train
            .samples
            .iter()
            .filter(|s| s.gt_label != Some(g))
            .map(|s| s.image_id.as_str())
            .collect();
        while members.len() < cfg.group_size {
            members.push(other[rng.gen_range(0..other.len())].to_string());
        }
        // majority ground-truth class among members, anchor breaking ties
        let mut counts = vec![0usize; train.num_classes()];
        for m in &members {
            counts[gt_of(m)] += 1;
        }
        let mut majority = g;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[majority] {
                majority = c;
            }
        }
        let request = CaptionRequest {
            prompt: render_group_prompt(&cfg.domain),
            image_ids: members.clone(),
            class_name: Some(train.class_names[majority].clone()),
            seed: cfg.seed,
        };
        let text = generate_with_retry(provider, &request, &cfg.retry)?;
        cache.put(CaptionRecord {
            image_id: id.clone(),
            kind: CaptionKind::Group,
            class_id: Some(*czs_label),
            text,
            group_member_ids: members,
            provider: provider.name().to_string(),
            created_at: crate::captions::now_millis(),
            format_version: CAPTION_FORMAT_VERSION,
        })?;
    }
    Ok(())
}

/// Trains and evaluates every cell of the grid on the toy bundle.
pub fn run_ablation(
    bundle: &ToyBundle,
    base: &TrainConfig,
    axes: &[AblationAxis],
    caption_noise: f64,
) -> Result<AblationReport> {
    let zero_shot = evaluate(&bundle.test, &bundle.init_params, Classifier::Templates, None)?;
    let frozen = crate::encoders::snapshot(&bundle.init_params, 0);
    let czs = label_dataset(&frozen, &bundle.train)?;
    let mut outcomes = Vec::new();
    for cell in ablation_cells(base, axes) {
        if let Err(e) = cell.config.validate() {
            outcomes.push(CellOutcome {
                label: cell.label,
                top1: None,
                skipped: Some(e.to_string()),
            });
            continue;
        }
        if let Some(correct) = cell.correct_images {
            if correct == 0 || correct > cell.config.group_size {
                outcomes.push(CellOutcome {
                    label: cell.label,
                    top1: None,
                    skipped: Some(format!(
                        "correct image count {correct} infeasible for group size {}",
                        cell.config.group_size
                    )),
                });
                continue;
            }
        }
        let provider = StubProvider::new(caption_noise);
        let mut cache = CaptionCache::in_memory();
        let mut describe_cfg = DescribeConfig {
            domain: bundle.train.domain.clone(),
            group_size: cell.config.group_size,
            seed: cell.config.seed,
            workers: 1,
            retry: RetryPolicy {
                max_attempts: 3,
                backoff_base: std::time::Duration::from_millis(1),
            },
            ..DescribeConfig::default()
        };
        match cell.correct_images {
            None => {
                run_describe(
                    &czs,
                    &bundle.train.class_names,
                    &provider,
                    &mut cache,
                    &describe_cfg,
                )?;
            }
            Some(correct) => {
                describe_cfg.kinds = vec![CaptionKind::Class, CaptionKind::Image];
                run_describe(
                    &czs,
                    &bundle.train.class_names,
                    &provider,
                    &mut cache,
                    &describe_cfg,
                )?;
                describe_with_correct_count(
                    &bundle.train,
                    &czs,
                    &provider,
                    &mut cache,
                    &describe_cfg,
                    correct,
                )?;
            }
        }
        let mut state = init_state(
            &bundle.train,
            bundle.init_params.clone(),
            Some(&cache),
            Some(&czs),
            &cell.config,
        )?;
        train_loop(
            &bundle.train,
            &mut state,
            &cell.config,
            ResumePoint::default(),
            &mut |_| Ok(()),
            &mut |_, _| Ok(()),
        )?;
        let report = evaluate(
            &bundle.test,
            &state.live,
            Classifier::Prototypes(state.bank.as_ref().expect("latteclip bank")),
            None,
        )?;
        outcomes.push(CellOutcome {
            label: cell.label,
            top1: Some(report.top1),
            skipped: None,
        });
    }
    Ok(AblationReport {
        zero_shot_top1: zero_shot.top1,
        cells: outcomes,
    })
}
