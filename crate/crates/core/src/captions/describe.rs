//! Offline description generation over a dataset: builds the job list
//! from zero-shot pseudo-labels, skips cached keys, and fans provider
//! calls out to a bounded worker pool with a single cache writer.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Mutex;

use crate::encoders::fnv1a_64;
use crate::error::{LatteError, Result};

use super::cache::{now_millis, CaptionCache, CaptionRecord, CAPTION_FORMAT_VERSION};
use super::provider::{generate_with_retry, CaptionProvider, CaptionRequest, RetryPolicy};
use super::{render_class_text, render_group_prompt, render_image_prompt, sample_group, CaptionKind};

#[derive(Debug, Clone)]
pub struct DescribeConfig {
    pub domain: String,
    pub kinds: Vec<CaptionKind>,
    pub group_size: usize,
    pub workers: usize,
    pub seed: u64,
    pub retry: RetryPolicy,
}

impl Default for DescribeConfig {
    fn default() -> Self {
        DescribeConfig {
            domain: "subject".into(),
            kinds: vec![CaptionKind::Class, CaptionKind::Image, CaptionKind::Group],
            group_size: 4,
            workers: 5,
            seed: 0,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct DescribeStats {
    pub generated: usize,
    pub already_cached: usize,
}

struct Job {
    image_id: String,
    kind: CaptionKind,
    class_id: Option<usize>,
    request: CaptionRequest,
    group_member_ids: Vec<String>,
}

/// Synthetic image_id used to key class-template records in the cache.
pub(crate) fn class_record_id(class_id: usize) -> String {
    format!("class:{class_id}")
}

/// Generates all requested caption kinds for `labeled_images`
/// (image id, zero-shot pseudo-label) pairs. Fully cached keys issue no
/// provider calls; the final cache state is independent of worker count.
pub fn run_describe(
    labeled_images: &[(String, usize)],
    class_names: &[String],
    provider: &dyn CaptionProvider,
    cache: &mut CaptionCache,
    cfg: &DescribeConfig,
) -> Result<DescribeStats> {
    if cfg.workers == 0 {
        return Err(LatteError::Config("describe needs at least one worker".into()));
    }
    for &(_, c) in labeled_images {
        if c >= class_names.len() {
            return Err(LatteError::ClassIndexOutOfRange {
                index: c,
                num_classes: class_names.len(),
            });
        }
    }
    let mut stats = DescribeStats::default();

    // Class-description records are plain template renders; no provider.
    if cfg.kinds.contains(&CaptionKind::Class) {
        for (c, name) in class_names.iter().enumerate() {
            let key = (class_record_id(c), CaptionKind::Class, Some(c));
            if cache.contains(&key) {
                stats.already_cached += 1;
                continue;
            }
            cache.put(CaptionRecord {
                image_id: key.0,
                kind: CaptionKind::Class,
                class_id: Some(c),
                text: render_class_text(name),
                group_member_ids: Vec::new(),
                provider: "template".into(),
                created_at: now_millis(),
                format_version: CAPTION_FORMAT_VERSION,
            })?;
            stats.generated += 1;
        }
    }

    // Per-class pools of same-pseudo-label image ids for group sampling.
    let mut pools: HashMap<usize, Vec<String>> = HashMap::new();
    for (id, c) in labeled_images {
        pools.entry(*c).or_default().push(id.clone());
    }

    let mut jobs: Vec<Job> = Vec::new();
    for (id, c) in labeled_images {
        let class_name = class_names[*c].clone();
        if cfg.kinds.contains(&CaptionKind::Image) {
            let key = (id.clone(), CaptionKind::Image, None);
            if cache.contains(&key) {
                stats.already_cached += 1;
            } else {
                jobs.push(Job {
                    image_id: id.clone(),
                    kind: CaptionKind::Image,
                    class_id: None,
                    request: CaptionRequest {
                        prompt: render_image_prompt(&cfg.domain),
                        image_ids: vec![id.clone()],
                        class_name: Some(class_name.clone()),
                        seed: cfg.seed,
                    },
                    group_member_ids: Vec::new(),
                });
            }
        }
        if cfg.kinds.contains(&CaptionKind::Group) {
            let key = (id.clone(), CaptionKind::Group, Some(*c));
            if cache.contains(&key) {
                stats.already_cached += 1;
            } else {
                let group = sample_group(
                    id,
                    &pools[c],
                    cfg.group_size,
                    cfg.seed ^ fnv1a_64(id.as_bytes()),
                )?;
                jobs.push(Job {
                    image_id: id.clone(),
                    kind: CaptionKind::Group,
                    class_id: Some(*c),
                    request: CaptionRequest {
                        prompt: render_group_prompt(&cfg.domain),
                        image_ids: group.member_ids.clone(),
                        class_name: Some(class_name),
                        seed: cfg.seed,
                    },
                    group_member_ids: group.member_ids,
                });
            }
        }
    }

    if jobs.is_empty() {
        return Ok(stats);
    }

    // Bounded worker pool; results funnel through this thread, the single
    // cache writer.
    let queue: Mutex<std::vec::IntoIter<Job>> = Mutex::new(jobs.into_iter());
    let abort = AtomicBool::new(false);
    let in_flight = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<Result<(Job, String)>>();

    let mut first_error: Option<LatteError> = None;
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers {
            let tx = tx.clone();
            let queue = &queue;
            let abort = &abort;
            let in_flight = &in_flight;
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let job = match queue.lock().unwrap().next() {
                    Some(j) => j,
                    None => break,
                };
                in_flight.fetch_add(1, Ordering::SeqCst);
                let outcome = generate_with_retry(provider, &job.request, &cfg.retry)
                    .map(|text| (job, text));
                let failed = outcome.is_err();
                let _ = tx.send(outcome);
                in_flight.fetch_sub(1, Ordering::SeqCst);
                if failed {
                    abort.store(true, Ordering::SeqCst);
                    break;
                }
            });
        }
        drop(tx);
        for outcome in rx {
            match outcome {
                Ok((job, text)) => {
                    if let Err(e) = cache.put(CaptionRecord {
                        image_id: job.image_id,
                        kind: job.kind,
                        class_id: job.class_id,
                        text,
                        group_member_ids: job.group_member_ids,
                        provider: provider.name().to_string(),
                        created_at: now_millis(),
                        format_version: CAPTION_FORMAT_VERSION,
                    }) {
                        first_error.get_or_insert(e);
                        abort.store(true, Ordering::SeqCst);
                    } else {
                        stats.generated += 1;
                    }
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
    });

    match first_error {
        Some(e) => Err(e),
        None => Ok(stats),
    }
}
