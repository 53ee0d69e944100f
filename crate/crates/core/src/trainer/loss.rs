//! Symmetric contrastive loss over an image/text batch, with an exact
//! manual backward pass for the linear toy encoders.
//!
//! Both matrices are row-normalized internally; the similarity logits are
//! S/τ with τ read from the live logit scale (τ = exp(-logit_scale)).

use crate::error::{LatteError, Result};
use crate::math::Embedding;

fn normalize_rows(embs: &[Embedding], what: &str) -> Result<(Vec<Embedding>, Vec<f64>)> {
    let mut units = Vec::with_capacity(embs.len());
    let mut norms = Vec::with_capacity(embs.len());
    for (i, e) in embs.iter().enumerate() {
        let n = e.norm();
        if n <= 0.0 || !n.is_finite() {
            return Err(LatteError::degenerate(format!("{what} row {i}")));
        }
        units.push(e.scaled(1.0 / n));
        norms.push(n);
    }
    Ok((units, norms))
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Symmetric InfoNCE: mean over the batch of the image-to-text and
/// text-to-image cross-entropies with matched pairs on the diagonal.
pub fn contrastive_loss(image_embs: &[Embedding], text_embs: &[Embedding], tau: f64) -> Result<f64> {
    let n = image_embs.len();
    if n == 0 || text_embs.len() != n {
        return Err(LatteError::Config(format!(
            "contrastive batch shape mismatch: {} images vs {} texts",
            n,
            text_embs.len()
        )));
    }
    if tau <= 0.0 {
        return Err(LatteError::Config(format!("temperature must be positive, got {tau}")));
    }
    let (u, _) = normalize_rows(image_embs, "image embeddings")?;
    let (v, _) = normalize_rows(text_embs, "text embeddings")?;
    let mut logits = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let s = u[i].dot(&v[j]) / tau;
            if !s.is_finite() {
                return Err(LatteError::NonFinite(format!("similarity logit ({i},{j})")));
            }
            logits[i][j] = s;
        }
    }
    let mut loss = 0.0;
    for i in 0..n {
        loss += log_sum_exp(&logits[i]) - logits[i][i];
        let col: Vec<f64> = (0..n).map(|j| logits[j][i]).collect();
        loss += log_sum_exp(&col) - logits[i][i];
    }
    Ok(loss / n as f64)
}

/// Loss value plus gradients with respect to the *unnormalized* input
/// embeddings and the logit scale.
#[derive(Debug, Clone)]
pub struct LossBackward {
    pub loss: f64,
    pub d_image: Vec<Embedding>,
    pub d_text: Vec<Embedding>,
    pub d_logit_scale: f64,
}

pub fn contrastive_loss_backward(
    image_embs: &[Embedding],
    text_embs: &[Embedding],
    logit_scale: f64,
) -> Result<LossBackward> {
    let n = image_embs.len();
    let tau = (-logit_scale).exp();
    let loss = contrastive_loss(image_embs, text_embs, tau)?;
    let (u, u_norms) = normalize_rows(image_embs, "image embeddings")?;
    let (v, v_norms) = normalize_rows(text_embs, "text embeddings")?;
    let inv_tau = 1.0 / tau;

    let mut sims = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            sims[i][j] = u[i].dot(&v[j]);
        }
    }
    // row and column softmaxes of S/tau
    let mut row_p = vec![vec![0.0; n]; n];
    let mut col_p = vec![vec![0.0; n]; n];
    for i in 0..n {
        let logits: Vec<f64> = (0..n).map(|j| sims[i][j] * inv_tau).collect();
        let lse = log_sum_exp(&logits);
        for j in 0..n {
            row_p[i][j] = (logits[j] - lse).exp();
        }
    }
    for j in 0..n {
        let logits: Vec<f64> = (0..n).map(|i| sims[i][j] * inv_tau).collect();
        let lse = log_sum_exp(&logits);
        for i in 0..n {
            col_p[i][j] = (logits[i] - lse).exp();
        }
    }

    let scale = 1.0 / n as f64;
    let dim = u[0].dim();
    let mut d_unit_image = vec![Embedding::zeros(dim); n];
    let mut d_unit_text = vec![Embedding::zeros(dim); n];
    let mut d_logit_scale = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut d_logit = scale * (row_p[i][j] + col_p[i][j]);
            if i == j {
                d_logit -= 2.0 * scale;
            }
            // logits = S * exp(logit_scale)
            let d_sim = d_logit * inv_tau;
            d_logit_scale += d_logit * sims[i][j] * inv_tau;
            d_unit_image[i].add_scaled(&v[j], d_sim);
            d_unit_text[j].add_scaled(&u[i], d_sim);
        }
    }

    // through row normalization: d_raw = (d_unit - (unit . d_unit) unit) / ||raw||
    let unnormalize = |units: &[Embedding], norms: &[f64], d_units: Vec<Embedding>| {
        d_units
            .into_iter()
            .zip(units.iter().zip(norms.iter()))
            .map(|(mut d, (unit, &norm))| {
                let proj = unit.dot(&d);
                d.add_scaled(unit, -proj);
                d.scaled(1.0 / norm)
            })
            .collect::<Vec<_>>()
    };
    Ok(LossBackward {
        loss,
        d_image: unnormalize(&u, &u_norms, d_unit_image),
        d_text: unnormalize(&v, &v_norms, d_unit_text),
        d_logit_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded_batch(seed: u64, n: usize, d: usize) -> Vec<Embedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Embedding((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect()
    }

    /// Naive double-loop reference implementation.
    fn oracle_loss(images: &[Embedding], texts: &[Embedding], tau: f64) -> f64 {
        let n = images.len();
        let norm = |e: &Embedding| {
            let nn = e.norm();
            e.scaled(1.0 / nn)
        };
        let u: Vec<Embedding> = images.iter().map(norm).collect();
        let v: Vec<Embedding> = texts.iter().map(norm).collect();
        let mut total = 0.0;
        for i in 0..n {
            let mut denom_row = 0.0;
            let mut denom_col = 0.0;
            for j in 0..n {
                denom_row += (u[i].dot(&v[j]) / tau).exp();
                denom_col += (u[j].dot(&v[i]) / tau).exp();
            }
            let diag = (u[i].dot(&v[i]) / tau).exp();
            total += -(diag / denom_row).ln();
            total += -(diag / denom_col).ln();
        }
        total / n as f64
    }

    #[test]
    fn single_pair_is_exactly_zero() {
        let a = seeded_batch(1, 1, 8);
        let b = seeded_batch(2, 1, 8);
        assert_eq!(contrastive_loss(&a, &b, 0.07).unwrap(), 0.0);
    }

    #[test]
    fn orthonormal_diagonal_at_small_tau_vanishes() {
        let eye: Vec<Embedding> = (0..4)
            .map(|i| {
                let mut v = vec![0.0; 4];
                v[i] = 1.0;
                Embedding(v)
            })
            .collect();
        let loss = contrastive_loss(&eye, &eye, 0.01).unwrap();
        assert!(loss < 1e-8, "loss {loss}");
    }

    #[test]
    fn matches_double_loop_oracle() {
        for seed in 0..50u64 {
            let images = seeded_batch(seed * 2, 4, 8);
            let texts = seeded_batch(seed * 2 + 1, 4, 8);
            let got = contrastive_loss(&images, &texts, 0.07).unwrap();
            let expect = oracle_loss(&images, &texts, 0.07);
            assert!((got - expect).abs() <= 1e-9, "seed {seed}: {got} vs {expect}");
        }
    }

    #[test]
    fn loss_nonnegative() {
        for seed in 0..30u64 {
            let images = seeded_batch(seed, 5, 8);
            let texts = seeded_batch(seed + 1000, 5, 8);
            assert!(contrastive_loss(&images, &texts, 0.07).unwrap() >= 0.0);
        }
    }

    #[test]
    fn batch_permutation_leaves_loss_unchanged() {
        let images = seeded_batch(7, 6, 8);
        let texts = seeded_batch(8, 6, 8);
        let base = contrastive_loss(&images, &texts, 0.07).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let pi: Vec<Embedding> = perm.iter().map(|&i| images[i].clone()).collect();
        let pt: Vec<Embedding> = perm.iter().map(|&i| texts[i].clone()).collect();
        let permuted = contrastive_loss(&pi, &pt, 0.07).unwrap();
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn zero_row_is_error() {
        let mut images = seeded_batch(1, 3, 8);
        images[1] = Embedding::zeros(8);
        let texts = seeded_batch(2, 3, 8);
        assert!(contrastive_loss(&images, &texts, 0.07).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let logit_scale = (1.0f64 / 0.07).ln();
        let tau = (-logit_scale).exp();
        for seed in 0..5u64 {
            let images = seeded_batch(seed * 3, 4, 8);
            let texts = seeded_batch(seed * 3 + 1, 4, 8);
            let back = contrastive_loss_backward(&images, &texts, logit_scale).unwrap();
            let h = 1e-6;
            for i in 0..4 {
                for k in 0..8 {
                    let mut plus = images.clone();
                    let mut minus = images.clone();
                    plus[i].0[k] += h;
                    minus[i].0[k] -= h;
                    let fd = (contrastive_loss(&plus, &texts, tau).unwrap()
                        - contrastive_loss(&minus, &texts, tau).unwrap())
                        / (2.0 * h);
                    let an = back.d_image[i].0[k];
                    assert!(
                        (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3),
                        "image grad ({i},{k}): fd {fd} vs {an}"
                    );
                    let mut tplus = texts.clone();
                    let mut tminus = texts.clone();
                    tplus[i].0[k] += h;
                    tminus[i].0[k] -= h;
                    let fd = (contrastive_loss(&images, &tplus, tau).unwrap()
                        - contrastive_loss(&images, &tminus, tau).unwrap())
                        / (2.0 * h);
                    let an = back.d_text[i].0[k];
                    assert!(
                        (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3),
                        "text grad ({i},{k}): fd {fd} vs {an}"
                    );
                }
            }
            // logit scale
            let h = 1e-6;
            let fd = (contrastive_loss(&images, &texts, (-(logit_scale + h)).exp()).unwrap()
                - contrastive_loss(&images, &texts, (-(logit_scale - h)).exp()).unwrap())
                / (2.0 * h);
            assert!(
                (fd - back.d_logit_scale).abs() <= 1e-4 * fd.abs().max(1e-3),
                "logit scale grad: fd {fd} vs {}",
                back.d_logit_scale
            );
        }
    }
}
