//! Synthetic benchmark: Gaussian class clusters in image-feature space and
//! a toy encoder initialization whose zero-shot accuracy is deliberately
//! corrupted to a target level, so fine-tuning has headroom to recover.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::captions::render_class_text;
use crate::data::{Dataset, Sample, Split};
use crate::encoders::{default_logit_scale, featurize_text, EncoderParams, TextFeaturization};
use crate::error::{LatteError, Result};
use crate::eval::{evaluate, Classifier};
use crate::math::{cosine, l2_normalize, Embedding, Matrix};

/// Word-like class names; hashing them keeps template texts distinct.
const WORDS: [&str; 26] = [
    "amber", "birch", "coral", "dune", "ember", "fjord", "grove", "heron", "iris", "jade", "kelp",
    "lotus", "maple", "nectar", "onyx", "pearl", "quartz", "reef", "sable", "thistle", "umber",
    "violet", "willow", "xenon", "yarrow", "zephyr",
];

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn gauss_vec(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    Embedding((0..dim).map(|_| gauss(rng)).collect())
}

/// Picks `count` class names whose name tokens land in distinct text
/// buckets, so class templates stay linearly independent.
pub fn toy_class_names(count: usize, vocab_size: usize) -> Result<Vec<String>> {
    let mut names = Vec::new();
    let mut buckets = std::collections::HashSet::new();
    let mut round = 0usize;
    while names.len() < count {
        for w in WORDS {
            if names.len() == count {
                break;
            }
            let name = if round == 0 {
                w.to_string()
            } else {
                format!("{w}{round}")
            };
            let feat = featurize_text(&name, vocab_size)?;
            if buckets.insert(feat.counts[0].0) {
                names.push(name);
            }
        }
        round += 1;
        if round > vocab_size {
            return Err(LatteError::Config(format!(
                "cannot find {count} collision-free class names for vocab {vocab_size}"
            )));
        }
    }
    Ok(names)
}

/// Unit class means with pairwise cosine below 0.5, by rejection.
fn sample_class_means(num_classes: usize, d_in: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Embedding>> {
    let mut means: Vec<Embedding> = Vec::with_capacity(num_classes);
    let mut tries = 0;
    while means.len() < num_classes {
        tries += 1;
        if tries > 10_000 {
            return Err(LatteError::Config(format!(
                "could not place {num_classes} class means with pairwise cosine < 0.5 in {d_in} dims"
            )));
        }
        let candidate = l2_normalize(&gauss_vec(rng, d_in))?;
        if means
            .iter()
            .all(|m| cosine(m, &candidate).unwrap() < 0.5)
        {
            means.push(candidate);
        }
    }
    Ok(means)
}

/// Generates train/val/test splits of Gaussian clusters around unit-sphere
/// class means. Every split carries ground-truth labels.
pub fn make_toy_dataset(
    num_classes: usize,
    d_in: usize,
    per_class_train: usize,
    per_class_eval: usize,
    cluster_spread: f64,
    vocab_size: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if num_classes < 2 {
        return Err(LatteError::Config("toy dataset needs at least two classes".into()));
    }
    if per_class_train == 0 || per_class_eval == 0 {
        return Err(LatteError::Config("per-class sample counts must be positive".into()));
    }
    let names = toy_class_names(num_classes, vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = sample_class_means(num_classes, d_in, &mut rng)?;
    let build = |split: Split, per_class: usize, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let mut samples = Vec::with_capacity(per_class * num_classes);
        for c in 0..num_classes {
            for i in 0..per_class {
                let mut x = means[c].clone();
                x.add_scaled(&gauss_vec(rng, d_in), cluster_spread);
                samples.push(Sample {
                    image_id: format!("{split}_{c}_{i:04}"),
                    features: x.0,
                    gt_label: Some(c),
                });
            }
        }
        Dataset::new("toy", "object", names.clone(), split, samples)
    };
    let train = build(Split::Train, per_class_train, &mut rng)?;
    let val = build(Split::Val, per_class_eval, &mut rng)?;
    let test = build(Split::Test, per_class_eval, &mut rng)?;
    Ok((train, val, test))
}

/// Solves A·X = B in place by Gaussian elimination with partial pivoting;
/// `b` holds X on return. `a` is n×n, `b` is n×m.
fn solve_linear(a: &mut [Vec<f64>], b: &mut [Vec<f64>]) -> Result<()> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(LatteError::Config(
                "singular class-template system; class names collide".into(),
            ));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row][col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            for k in 0..b[row].len() {
                b[row][k] -= factor * b[col][k];
            }
        }
    }
    for row in 0..n {
        let diag = a[row][row];
        for v in &mut b[row] {
            *v /= diag;
        }
    }
    Ok(())
}

/// Text weights whose class-template embeddings equal `targets` exactly:
/// the minimal-norm solution W = Aᵀ(AAᵀ)⁻¹T over the template count rows,
/// plus seeded random rows on every bucket no template touches (so stub
/// caption words contribute noisy directions rather than zeros).
fn solve_text_weights(
    feats: &[TextFeaturization],
    targets: &[Embedding],
    vocab_size: usize,
    embed_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Matrix> {
    let c = feats.len();
    // gram matrix AAᵀ over the sparse count rows
    let mut gram = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in 0..c {
            let mut acc = 0.0;
            for &(bi, ci) in &feats[i].counts {
                for &(bj, cj) in &feats[j].counts {
                    if bi == bj {
                        acc += ci as f64 * cj as f64;
                    }
                }
            }
            gram[i][j] = acc;
        }
    }
    let mut m: Vec<Vec<f64>> = targets.iter().map(|t| t.0.clone()).collect();
    solve_linear(&mut gram, &mut m)?;
    let mut weights = Matrix::zeros(vocab_size, embed_dim);
    let mut used = vec![false; vocab_size];
    for (feat, mi) in feats.iter().zip(m.iter()) {
        for &(bucket, count) in &feat.counts {
            used[bucket] = true;
            let row = &mut weights.data[bucket * embed_dim..(bucket + 1) * embed_dim];
            for (w, &v) in row.iter_mut().zip(mi.iter()) {
                *w += count as f64 * v;
            }
        }
    }
    let used_count = used.iter().filter(|&&u| u).count().max(1);
    let mean_norm: f64 = (0..vocab_size)
        .filter(|&b| used[b])
        .map(|b| {
            weights.row(b).iter().map(|w| w * w).sum::<f64>().sqrt()
        })
        .sum::<f64>()
        / used_count as f64;
    let sigma = mean_norm / (embed_dim as f64).sqrt();
    for b in 0..vocab_size {
        if used[b] {
            continue;
        }
        let row = &mut weights.data[b * embed_dim..(b + 1) * embed_dim];
        for w in row.iter_mut() {
            *w = sigma * gauss(rng);
        }
    }
    Ok(weights)
}

/// Orthonormal d_in × d image projection from a seeded Gaussian draw.
fn random_projection(d_in: usize, embed_dim: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    if embed_dim > d_in {
        return Err(LatteError::Config(format!(
            "embed dim {embed_dim} exceeds image input dim {d_in}"
        )));
    }
    // Gram-Schmidt over columns
    let mut cols: Vec<Embedding> = Vec::with_capacity(embed_dim);
    while cols.len() < embed_dim {
        let mut v = gauss_vec(rng, d_in);
        for c in &cols {
            let proj = v.dot(c);
            v.add_scaled(c, -proj);
        }
        if v.norm() < 1e-9 {
            continue;
        }
        cols.push(l2_normalize(&v)?);
    }
    Ok(Matrix::from_fn(d_in, embed_dim, |r, c| cols[c].0[r]))
}

/// Everything the toy pipeline starts from.
#[derive(Debug, Clone)]
pub struct ToyBundle {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub init_params: EncoderParams,
    /// Measured zero-shot test accuracy of the initialization.
    pub zs_accuracy: f64,
    /// Corruption level chosen by the calibration sweep.
    pub gamma: f64,
}

/// Generation knobs with the benchmark defaults.
#[derive(Debug, Clone)]
pub struct ToySpec {
    pub num_classes: usize,
    pub d_in: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub per_class_train: usize,
    pub per_class_eval: usize,
    pub cluster_spread: f64,
    /// Zero-shot test accuracy the corruption sweep aims for.
    pub target_zs_accuracy: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            num_classes: 5,
            d_in: 16,
            embed_dim: 8,
            vocab_size: 64,
            per_class_train: 40,
            per_class_eval: 20,
            cluster_spread: 0.18,
            target_zs_accuracy: 0.6,
            seed: 0,
        }
    }
}

/// Builds the datasets plus a corrupted initialization.
///
/// Class-template targets are normalize((1-γ)·n_c + γ·ξ_c), where n_c is
/// the projected class mean and ξ_c a seeded random unit direction; γ is
/// swept over a grid and the value whose measured zero-shot accuracy is
/// closest to the target wins.
pub fn make_toy_bundle(spec: &ToySpec) -> Result<ToyBundle> {
    let (train, val, test) = make_toy_dataset(
        spec.num_classes,
        spec.d_in,
        spec.per_class_train,
        spec.per_class_eval,
        spec.cluster_spread,
        spec.vocab_size,
        spec.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x70f0_70f0_70f0_70f0);
    let image_weights = random_projection(spec.d_in, spec.embed_dim, &mut rng)?;

    // empirical class means in image-feature space, from train ground truth
    let mut means = vec![Embedding::zeros(spec.d_in); spec.num_classes];
    let mut counts = vec![0usize; spec.num_classes];
    for s in &train.samples {
        let c = s.gt_label.unwrap();
        means[c].add_scaled(&Embedding(s.features.clone()), 1.0);
        counts[c] += 1;
    }
    let clean_targets: Vec<Embedding> = means
        .iter()
        .zip(counts.iter())
        .map(|(m, &n)| {
            let mean = m.scaled(1.0 / n as f64);
            l2_normalize(&Embedding(image_weights.left_mul(&mean.0)))
        })
        .collect::<Result<_>>()?;
    let noise_dirs: Vec<Embedding> = (0..spec.num_classes)
        .map(|_| l2_normalize(&gauss_vec(&mut rng, spec.embed_dim)))
        .collect::<Result<_>>()?;
    let feats: Vec<TextFeaturization> = train
        .class_names
        .iter()
        .map(|n| featurize_text(&render_class_text(n), spec.vocab_size))
        .collect::<Result<_>>()?;

    let mut best: Option<(f64, f64, EncoderParams)> = None;
    for step in 0..=40u32 {
        let gamma = step as f64 / 40.0;
        let targets: Vec<Embedding> = clean_targets
            .iter()
            .zip(noise_dirs.iter())
            .map(|(t, xi)| {
                let mut v = t.scaled(1.0 - gamma);
                v.add_scaled(xi, gamma);
                l2_normalize(&v)
            })
            .collect::<Result<_>>()?;
        // the distractor rows must not change across the sweep
        let mut row_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xd157_ac70_4a0b_5eed);
        let text_weights = solve_text_weights(
            &feats,
            &targets,
            spec.vocab_size,
            spec.embed_dim,
            &mut row_rng,
        )?;
        let params = EncoderParams::new(image_weights.clone(), text_weights, default_logit_scale())?;
        let report = evaluate(&test, &params, Classifier::Templates, None)?;
        let distance = (report.top1 - spec.target_zs_accuracy).abs();
        let better = match &best {
            None => true,
            Some((best_distance, _, _)) => distance < *best_distance - 1e-12,
        };
        if better {
            best = Some((distance, gamma, params));
        }
    }
    let (_, gamma, init_params) = best.unwrap();
    let zs_accuracy = evaluate(&test, &init_params, Classifier::Templates, None)?.top1;
    Ok(ToyBundle {
        train,
        val,
        test,
        init_params,
        zs_accuracy,
        gamma,
    })
}
