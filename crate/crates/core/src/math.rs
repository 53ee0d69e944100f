//! Vector primitives shared by every other module: normalization, cosine
//! similarity and batched similarity against a set of prototypes.
//!
//! Everything accumulates in f64. Embeddings are stored unnormalized and
//! every similarity normalizes on the fly, so exponential-moving-average
//! updates elsewhere keep their closed form.

use serde::{Deserialize, Serialize};

use crate::error::{LatteError, Result};

/// A d-dimensional point in the shared image/text space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Embedding(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn scaled(&self, s: f64) -> Embedding {
        Embedding(self.0.iter().map(|x| x * s).collect())
    }

    pub fn add_scaled(&mut self, other: &Embedding, s: f64) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += s * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Per-class cosine similarities of one query against a prototype set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRow(pub Vec<f64>);

/// Dense row-major matrix, sized for small encoders (d, V, C all modest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Computes xᵀ·M for a length-`rows` input, yielding a length-`cols` vector.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "left_mul input length");
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let row = self.row(r);
            for (o, &m) in out.iter_mut().zip(row.iter()) {
                *o += xr * m;
            }
        }
        out
    }

    /// Mean of all rows.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, &m) in out.iter_mut().zip(self.row(r).iter()) {
                *o += m;
            }
        }
        let n = self.rows as f64;
        for o in &mut out {
            *o /= n;
        }
        out
    }

    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Scales `v` to unit norm. Direction is preserved.
pub fn l2_normalize(v: &Embedding) -> Result<Embedding> {
    let n = v.norm();
    if n <= 0.0 || !n.is_finite() {
        return Err(LatteError::degenerate("l2_normalize"));
    }
    Ok(v.scaled(1.0 / n))
}

/// Cosine similarity of two nonzero vectors, in [-1, 1].
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    let na = a.norm();
    let nb = b.norm();
    if na <= 0.0 || nb <= 0.0 {
        return Err(LatteError::degenerate("cosine"));
    }
    Ok(a.dot(b) / (na * nb))
}

/// Cosine of `query` against every prototype row, in order.
pub fn bank_similarities(query: &Embedding, prototypes: &[Embedding]) -> Result<SimilarityRow> {
    let mut sims = Vec::with_capacity(prototypes.len());
    for p in prototypes {
        sims.push(cosine(query, p)?);
    }
    Ok(SimilarityRow(sims))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_tie_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded_vec(seed: u64, dim: usize) -> Embedding {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Embedding((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn normalize_pythagorean_triple() {
        let v = Embedding(vec![3.0, 4.0]);
        let n = l2_normalize(&v).unwrap();
        assert!((n.0[0] - 0.6).abs() < 1e-12);
        assert!((n.0[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalize_unit_vector_is_identity() {
        let e1 = Embedding(vec![1.0, 0.0, 0.0]);
        let n = l2_normalize(&e1).unwrap();
        assert_eq!(n, e1);
    }

    #[test]
    fn normalize_matches_scalar_loop_oracle() {
        let v = seeded_vec(42, 8);
        // independent scalar loop
        let mut ss = 0.0;
        for &x in &v.0 {
            ss += x * x;
        }
        let norm = ss.sqrt();
        let expect: Vec<f64> = v.0.iter().map(|x| x / norm).collect();
        let got = l2_normalize(&v).unwrap();
        for (g, e) in got.0.iter().zip(expect.iter()) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!((got.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalize_zero_is_error() {
        assert!(l2_normalize(&Embedding::zeros(4)).is_err());
    }

    #[test]
    fn cosine_identity_and_orthogonal() {
        let e1 = Embedding(vec![1.0, 0.0]);
        let e2 = Embedding(vec![0.0, 1.0]);
        assert!((cosine(&e1, &e1).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine(&e1, &e2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cosine_matches_naive_loop() {
        let a = seeded_vec(1, 8);
        let b = seeded_vec(2, 8);
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..8 {
            dot += a.0[i] * b.0[i];
            na += a.0[i] * a.0[i];
            nb += b.0[i] * b.0[i];
        }
        let expect = dot / (na.sqrt() * nb.sqrt());
        assert!((cosine(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_is_error() {
        let a = seeded_vec(1, 4);
        assert!(cosine(&a, &Embedding::zeros(4)).is_err());
        assert!(cosine(&Embedding::zeros(4), &a).is_err());
    }

    fn orthonormal_bank(c: usize, d: usize) -> Vec<Embedding> {
        (0..c)
            .map(|i| {
                let mut v = vec![0.0; d];
                v[i] = 1.0;
                Embedding(v)
            })
            .collect()
    }

    #[test]
    fn bank_similarities_picks_out_matching_prototype() {
        let bank = orthonormal_bank(4, 4);
        let row = bank_similarities(&bank[2], &bank).unwrap();
        assert_eq!(row.0, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn bank_similarities_uniform_query_is_constant() {
        let bank = orthonormal_bank(4, 4);
        let q = Embedding(vec![0.5; 4]);
        let row = bank_similarities(&q, &bank).unwrap();
        for s in &row.0 {
            assert!((s - row.0[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn bank_similarities_matches_per_entry_cosine() {
        let q = seeded_vec(7, 8);
        let bank: Vec<Embedding> = (0..5).map(|i| seeded_vec(100 + i, 8)).collect();
        let row = bank_similarities(&q, &bank).unwrap();
        for (c, p) in bank.iter().enumerate() {
            assert!((row.0[c] - cosine(&q, p).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn left_mul_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = Matrix::from_fn(6, 4, |_, _| rng.gen_range(-1.0..1.0));
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = m.left_mul(&x);
        for c in 0..4 {
            let mut acc = 0.0;
            for r in 0..6 {
                acc += x[r] * m.at(r, c);
            }
            assert!((got[c] - acc).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant(seed in 0u64..1000, scale in 1e-3f64..1e3) {
            let a = seeded_vec(seed, 8);
            let b = seeded_vec(seed.wrapping_add(1), 8);
            let base = cosine(&a, &b).unwrap();
            let scaled = cosine(&a.scaled(scale), &b).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9);
        }

        #[test]
        fn normalize_idempotent(seed in 0u64..1000) {
            let v = seeded_vec(seed, 8);
            let once = l2_normalize(&v).unwrap();
            let twice = l2_normalize(&once).unwrap();
            for (a, b) in once.0.iter().zip(twice.0.iter()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn bank_similarities_permutation_equivariant(seed in 0u64..500) {
            let q = seeded_vec(seed, 8);
            let bank: Vec<Embedding> = (0..5).map(|i| seeded_vec(seed * 31 + i, 8)).collect();
            let row = bank_similarities(&q, &bank).unwrap();
            let mut perm: Vec<usize> = (0..5).collect();
            perm.reverse();
            let permuted: Vec<Embedding> = perm.iter().map(|&i| bank[i].clone()).collect();
            let prow = bank_similarities(&q, &permuted).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(prow.0[j], row.0[i]);
            }
        }
    }
}
