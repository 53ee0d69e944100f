//! Plain SGD and AdamW over the two weight matrices and the logit scale.

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderParams;
use crate::error::{LatteError, Result};
use crate::math::{Embedding, Matrix};

use super::config::{OptimizerKind, TrainConfig};

/// Accumulated gradients for one step, same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub image_weights: Matrix,
    pub text_weights: Matrix,
    pub logit_scale: f64,
}

impl ParamGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        ParamGrads {
            image_weights: Matrix::zeros(params.image_weights.rows, params.image_weights.cols),
            text_weights: Matrix::zeros(params.text_weights.rows, params.text_weights.cols),
            logit_scale: 0.0,
        }
    }

    /// Rank-one accumulation into the image weights: dW += x · gᵀ.
    pub fn add_image_outer(&mut self, x: &[f64], g: &Embedding) {
        let cols = self.image_weights.cols;
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let row = &mut self.image_weights.data[r * cols..(r + 1) * cols];
            for (w, &gv) in row.iter_mut().zip(g.0.iter()) {
                *w += xr * gv;
            }
        }
    }

    /// Bag-of-tokens accumulation into the text weights: row b += count · g.
    pub fn add_text_counts(&mut self, counts: &[(usize, u32)], g: &Embedding) {
        let cols = self.text_weights.cols;
        for &(bucket, count) in counts {
            let row = &mut self.text_weights.data[bucket * cols..(bucket + 1) * cols];
            let c = count as f64;
            for (w, &gv) in row.iter_mut().zip(g.0.iter()) {
                *w += c * gv;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let ss: f64 = self
            .image_weights
            .data
            .iter()
            .chain(self.text_weights.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            + self.logit_scale * self.logit_scale;
        ss.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.image_weights.is_finite() && self.text_weights.is_finite() && self.logit_scale.is_finite()
    }
}

/// First/second moment state for one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Optimizer with owned state, serializable for run resumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    weight_decay: f64,
    train_logit_scale: bool,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    adam_image: Option<Moments>,
    adam_text: Option<Moments>,
    adam_scale: Option<Moments>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Optimizer {
            kind: cfg.optimizer,
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            train_logit_scale: cfg.train_logit_scale,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            adam_image: None,
            adam_text: None,
            adam_scale: None,
        }
    }

    /// Applies one update in place and re-clamps the logit scale.
    pub fn apply(&mut self, params: &mut EncoderParams, grads: &ParamGrads) -> Result<()> {
        if !grads.is_finite() {
            return Err(LatteError::NonFinite("gradients".into()));
        }
        if grads.image_weights.data.len() != params.image_weights.data.len()
            || grads.text_weights.data.len() != params.text_weights.data.len()
        {
            return Err(LatteError::DimensionMismatch {
                what: "gradient shape".into(),
                expected: params.image_weights.data.len(),
                got: grads.image_weights.data.len(),
            });
        }
        match self.kind {
            OptimizerKind::Sgd => {
                params
                    .image_weights
                    .add_scaled(&grads.image_weights, -self.learning_rate);
                params
                    .text_weights
                    .add_scaled(&grads.text_weights, -self.learning_rate);
                if self.train_logit_scale {
                    params.logit_scale -= self.learning_rate * grads.logit_scale;
                }
            }
            OptimizerKind::AdamW => {
                self.t += 1;
                let (b1, b2, eps, lr, wd, t) = (
                    self.beta1,
                    self.beta2,
                    self.eps,
                    self.learning_rate,
                    self.weight_decay,
                    self.t,
                );
                let update = |theta: &mut [f64], g: &[f64], mom: &mut Moments, decay: bool| {
                    let bc1 = 1.0 - b1.powi(t as i32);
                    let bc2 = 1.0 - b2.powi(t as i32);
                    for i in 0..theta.len() {
                        mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g[i];
                        mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g[i] * g[i];
                        let m_hat = mom.m[i] / bc1;
                        let v_hat = mom.v[i] / bc2;
                        if decay {
                            theta[i] -= lr * wd * theta[i];
                        }
                        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                };
                let img_mom = self
                    .adam_image
                    .get_or_insert_with(|| Moments::zeros(params.image_weights.data.len()));
                update(&mut params.image_weights.data, &grads.image_weights.data, img_mom, true);
                let txt_mom = self
                    .adam_text
                    .get_or_insert_with(|| Moments::zeros(params.text_weights.data.len()));
                update(&mut params.text_weights.data, &grads.text_weights.data, txt_mom, true);
                if self.train_logit_scale {
                    let mut scale = [params.logit_scale];
                    let scale_mom = self.adam_scale.get_or_insert_with(|| Moments::zeros(1));
                    update(&mut scale, &[grads.logit_scale], scale_mom, false);
                    params.logit_scale = scale[0];
                }
            }
        }
        params.clamp_logit_scale();
        if !params.image_weights.is_finite()
            || !params.text_weights.is_finite()
            || !params.logit_scale.is_finite()
        {
            return Err(LatteError::NonFinite("parameters after optimizer step".into()));
        }
        Ok(())
    }
}
