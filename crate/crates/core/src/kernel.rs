//! Weighted Gaussian kernel learned through random Fourier features.
//!
//! The kernel is `k(x, y) = exp(-||w ⊙ (x - y)||²)`. Its per-dimension
//! weights `w = exp(u)` are fitted by mini-batch gradient descent on the
//! cross-entropy of a softmax regression over random Fourier features of
//! `w ⊙ x`, trained jointly with the regression coefficients.
//!
//! All model methods take states in the model's standardized space; use
//! [`KernelModel::standardize`] on raw dataset rows first.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ActionId;
use crate::standardize::Standardizer;

/// Samples per parallel gradient chunk. Fixed so that partial sums are
/// always combined in the same order.
const CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("need at least two distinct actions, found {0}")]
    SingleAction(usize),

    #[error("empty training set")]
    Empty,

    #[error("invalid train config: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch} batch {batch}; learning rate {lr} too large?")]
    Diverged { epoch: usize, batch: usize, lr: f64 },
}

/// `exp(-||w ⊙ (x - y)||²)`.
pub fn kernel_exact(x: &[f64], y: &[f64], w: &[f64]) -> Result<f64, KernelError> {
    if x.len() != w.len() || y.len() != w.len() {
        return Err(KernelError::Dimension {
            expected: w.len(),
            got: if x.len() != w.len() { x.len() } else { y.len() },
        });
    }
    Ok((-weighted_sq_dist(x, y, w)).exp())
}

#[inline]
pub(crate) fn weighted_sq_dist(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((a, b), wi)| {
            let d = wi * (a - b);
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rff_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 20,
            batch_size: 256,
            rff_dim: 2048,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(KernelError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(KernelError::Config("batch_size must be positive".into()));
        }
        if self.rff_dim == 0 {
            return Err(KernelError::Config("rff_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub dim: usize,
    pub rff_dim: usize,
    pub n_actions: usize,
    /// Log kernel weights; `w = exp(u)`.
    pub log_weights: Vec<f64>,
    /// RFF frequencies, `rff_dim × dim` row-major. Frozen after construction.
    pub omega: Vec<f64>,
    /// RFF phases in `[0, 2π)`.
    pub phase: Vec<f64>,
    /// Regression coefficients, `rff_dim × n_actions` row-major.
    pub coef: Vec<f64>,
    pub standardizer: Standardizer,
    pub seed: u64,
    /// Mean cross-entropy on the full training set before training and
    /// after every epoch.
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

/// Mean batch loss with its gradients w.r.t. `log_weights` and `coef`.
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub loss: f64,
    pub grad_log_weights: Vec<f64>,
    pub grad_coef: Vec<f64>,
}

impl KernelModel {
    /// Fresh model: `u = 0`, all-ones coefficients, frequencies drawn from
    /// `N(0, 2I)` (the spectral density of `exp(-||Δ||²)`) and phases from
    /// `U[0, 2π)`.
    pub fn new(dim: usize, n_actions: usize, rff_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 2f64.sqrt();
        let omega = (0..rff_dim * dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let phase = (0..rff_dim).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
        Self {
            dim,
            rff_dim,
            n_actions,
            log_weights: vec![0.0; dim],
            omega,
            phase,
            coef: vec![1.0; rff_dim * n_actions],
            standardizer: Standardizer::identity(dim),
            seed,
            loss_history: Vec::new(),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|u| u.exp()).collect()
    }

    pub fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        self.standardizer.transform(raw)
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), KernelError> {
        if x.len() != self.dim {
            return Err(KernelError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Phases `θ_j = ω_j · (w ⊙ x) + b_j`.
    fn angles(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let wx: Vec<f64> = w.iter().zip(x).map(|(a, b)| a * b).collect();
        self.omega
            .chunks_exact(self.dim)
            .zip(&self.phase)
            .map(|(row, b)| row.iter().zip(&wx).map(|(o, v)| o * v).sum::<f64>() + b)
            .collect()
    }

    /// `z_j(x) = sqrt(2/D) cos(ω_j · (w ⊙ x) + b_j)`.
    pub fn rff_project(&self, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        self.check_dim(x)?;
        let s = (2.0 / self.rff_dim as f64).sqrt();
        Ok(self
            .angles(&self.weights(), x)
            .into_iter()
            .map(|t| s * t.cos())
            .collect())
    }

    fn logits(&self, z: &[f64]) -> Vec<f64> {
        let a = self.n_actions;
        let mut out = vec![0.0; a];
        for (zj, row) in z.iter().zip(self.coef.chunks_exact(a)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += zj * v;
            }
        }
        out
    }

    /// `softmax(z(x)ᵀ V)`.
    pub fn predict_action_probs(&self, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        let z = self.rff_project(x)?;
        Ok(softmax(&self.logits(&z)))
    }

    /// Mean cross-entropy over `(xs, ys)` without gradients.
    pub fn mean_loss(&self, xs: &[Vec<f64>], ys: &[ActionId]) -> f64 {
        let w = self.weights();
        let s = (2.0 / self.rff_dim as f64).sqrt();
        let idx: Vec<usize> = (0..xs.len()).collect();
        let partial: Vec<f64> = idx
            .par_chunks(CHUNK * 8)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&i| {
                        let z: Vec<f64> = self.angles(&w, &xs[i]).into_iter().map(|t| s * t.cos()).collect();
                        let p = softmax(&self.logits(&z));
                        nll(p[ys[i].0])
                    })
                    .sum::<f64>()
            })
            .collect();
        partial.iter().sum::<f64>() / xs.len().max(1) as f64
    }
}

/// Negative log-likelihood with probabilities floored away from zero;
/// NaN propagates so divergence is detectable.
#[inline]
fn nll(p: f64) -> f64 {
    if p.is_nan() {
        f64::NAN
    } else {
        -p.max(f64::MIN_POSITIVE).ln()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn chunk_loss_grad(model: &KernelModel, w: &[f64], xs: &[&[f64]], ys: &[ActionId]) -> LossGradient {
    let (d, dd, a) = (model.dim, model.rff_dim, model.n_actions);
    let s = (2.0 / dd as f64).sqrt();
    let mut loss = 0.0;
    let mut gw = vec![0.0; d];
    let mut gv = vec![0.0; dd * a];
    let mut gz = vec![0.0; dd];
    let mut resid = vec![0.0; a];
    for (x, y) in xs.iter().zip(ys) {
        let (sin, z): (Vec<f64>, Vec<f64>) = model
            .angles(w, x)
            .into_iter()
            .map(|t| {
                let (sn, cs) = t.sin_cos();
                (sn, s * cs)
            })
            .unzip();
        let p = softmax(&model.logits(&z));
        loss += nll(p[y.0]);
        for (k, r) in resid.iter_mut().enumerate() {
            *r = p[k] - if k == y.0 { 1.0 } else { 0.0 };
        }
        // dL/dV = z (p - y)ᵀ ; dL/dz = V (p - y)
        for j in 0..dd {
            let row = &model.coef[j * a..(j + 1) * a];
            let g = &mut gv[j * a..(j + 1) * a];
            let mut acc = 0.0;
            for k in 0..a {
                g[k] += z[j] * resid[k];
                acc += row[k] * resid[k];
            }
            gz[j] = acc;
        }
        // dz_j/dw_k = -s sin(θ_j) ω_jk x_k
        for j in 0..dd {
            let c = -gz[j] * s * sin[j];
            let om = &model.omega[j * d..(j + 1) * d];
            for k in 0..d {
                gw[k] += c * om[k] * x[k];
            }
        }
    }
    LossGradient {
        loss,
        grad_log_weights: gw,
        grad_coef: gv,
    }
}

/// Mean cross-entropy of a batch and its analytic gradients.
pub fn loss_and_gradient(model: &KernelModel, xs: &[&[f64]], ys: &[ActionId]) -> LossGradient {
    let w = model.weights();
    let idx: Vec<usize> = (0..xs.len()).collect();
    let parts: Vec<LossGradient> = idx
        .par_chunks(CHUNK)
        .map(|c| {
            let bx: Vec<&[f64]> = c.iter().map(|&i| xs[i]).collect();
            let by: Vec<ActionId> = c.iter().map(|&i| ys[i]).collect();
            chunk_loss_grad(model, &w, &bx, &by)
        })
        .collect();
    let n = xs.len().max(1) as f64;
    let mut total = LossGradient {
        loss: 0.0,
        grad_log_weights: vec![0.0; model.dim],
        grad_coef: vec![0.0; model.coef.len()],
    };
    for p in parts {
        total.loss += p.loss;
        total.grad_log_weights.iter_mut().zip(&p.grad_log_weights).for_each(|(t, v)| *t += v);
        total.grad_coef.iter_mut().zip(&p.grad_coef).for_each(|(t, v)| *t += v);
    }
    total.loss /= n;
    // chain rule through w = exp(u)
    for (g, wi) in total.grad_log_weights.iter_mut().zip(&w) {
        *g *= wi / n;
    }
    total.grad_coef.iter_mut().for_each(|g| *g /= n);
    total
}

/// Fit kernel weights and regression coefficients on `(states, actions)`.
///
/// States are raw rows; a standardizer is fitted on them and stored in the
/// returned model. Each epoch visits `max(1, floor(N/B))` shuffled
/// mini-batches.
pub fn train_kernel(
    states: &[Vec<f64>],
    actions: &[ActionId],
    n_actions: usize,
    cfg: &TrainConfig,
) -> Result<KernelModel, KernelError> {
    cfg.validate()?;
    if states.is_empty() {
        return Err(KernelError::Empty);
    }
    let d = states[0].len();
    for s in states {
        if s.len() != d {
            return Err(KernelError::Dimension {
                expected: d,
                got: s.len(),
            });
        }
    }
    let mut seen = vec![false; n_actions];
    for a in actions {
        if a.0 >= n_actions {
            return Err(KernelError::Config(format!(
                "action {} outside action set of size {n_actions}",
                a.0
            )));
        }
        seen[a.0] = true;
    }
    let present = seen.iter().filter(|&&s| s).count();
    if present < 2 {
        return Err(KernelError::SingleAction(present));
    }

    let standardizer = Standardizer::fit(states);
    let xs = standardizer.transform_all(states);
    let mut model = KernelModel::new(d, n_actions, cfg.rff_dim, cfg.seed);
    model.standardizer = standardizer;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let n = xs.len();
    let batch = cfg.batch_size.min(n);
    let n_batches = (n / batch).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    model.loss_history.push(model.mean_loss(&xs, actions));

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for b in 0..n_batches {
            let idx = &order[b * batch..(b + 1) * batch];
            let bx: Vec<&[f64]> = idx.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<ActionId> = idx.iter().map(|&i| actions[i]).collect();
            let g = loss_and_gradient(&model, &bx, &by);
            if !g.loss.is_finite() {
                return Err(KernelError::Diverged {
                    epoch,
                    batch: b,
                    lr: cfg.learning_rate,
                });
            }
            for (v, gv) in model.coef.iter_mut().zip(&g.grad_coef) {
                *v -= cfg.learning_rate * gv;
            }
            for (u, gu) in model.log_weights.iter_mut().zip(&g.grad_log_weights) {
                *u -= cfg.learning_rate * gu;
            }
        }
        let l = model.mean_loss(&xs, actions);
        if !l.is_finite() {
            return Err(KernelError::Diverged {
                epoch,
                batch: n_batches,
                lr: cfg.learning_rate,
            });
        }
        log::debug!("kernel epoch {epoch}: loss {l:.6}, w = {:?}", model.weights());
        model.loss_history.push(l);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_kernel_values() {
        assert_eq!(kernel_exact(&[0.3, -2.0], &[0.3, -2.0], &[4.0, 0.1]).unwrap(), 1.0);
        assert_relative_eq!(
            kernel_exact(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
        assert_relative_eq!(0.367879, (-1.0f64).exp(), epsilon = 1e-6);
        assert_eq!(kernel_exact(&[1.0, 0.0], &[0.0, 0.0], &[0.0, 5.0]).unwrap(), 1.0);
        assert!(matches!(
            kernel_exact(&[1.0], &[0.0, 0.0], &[1.0, 1.0]),
            Err(KernelError::Dimension { .. })
        ));
    }

    #[test]
    fn zero_frequencies_project_to_constant() {
        let mut m = KernelModel::new(3, 2, 8, 0);
        m.omega.iter_mut().for_each(|o| *o = 0.0);
        m.phase.iter_mut().for_each(|b| *b = 0.0);
        let z = m.rff_project(&[1.0, -2.0, 3.0]).unwrap();
        for v in z {
            assert_relative_eq!(v, (2.0f64 / 8.0).sqrt(), epsilon = 1e-15);
        }
        assert!(m.rff_project(&[1.0]).is_err());
    }

    #[test]
    fn zero_coefficients_predict_uniform() {
        let mut m = KernelModel::new(2, 4, 16, 1);
        m.coef.iter_mut().for_each(|v| *v = 0.0);
        let p = m.predict_action_probs(&[0.5, 0.5]).unwrap();
        for v in p {
            assert_relative_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut m = KernelModel::new(3, 4, 32, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        m.coef.iter_mut().for_each(|v| *v = rng.random::<f64>() * 4.0 - 2.0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let p = m.predict_action_probs(&x).unwrap();
            assert!(p.iter().all(|&v| v > 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rff_inner_product_is_unbiased() {
        // empirical mean over 50 independent draws lies within 3 standard errors
        let x = [0.4, -0.3, 0.2];
        let y = [0.1, 0.2, -0.5];
        let w = [1.0; 3];
        let exact = kernel_exact(&x, &y, &w).unwrap();
        let vals: Vec<f64> = (0..50)
            .map(|s| {
                let m = KernelModel::new(3, 2, 64, 1000 + s);
                let zx = m.rff_project(&x).unwrap();
                let zy = m.rff_project(&y).unwrap();
                zx.iter().zip(&zy).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / 50.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 49.0;
        let se = (var / 50.0).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "mean {mean} exact {exact} se {se}");
    }

    #[test]
    fn zero_epochs_keeps_unit_weights() {
        let xs = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]];
        let ys = vec![ActionId(0), ActionId(1), ActionId(0)];
        let cfg = TrainConfig {
            epochs: 0,
            rff_dim: 16,
            ..Default::default()
        };
        let m = train_kernel(&xs, &ys, 2, &cfg).unwrap();
        assert_eq!(m.weights(), vec![1.0, 1.0]);
        assert!(m.coef.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_action_and_divergence_errors() {
        let xs = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            train_kernel(&xs, &[ActionId(0), ActionId(0)], 2, &TrainConfig::default()),
            Err(KernelError::SingleAction(1))
        ));
        let xs: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let ys: Vec<ActionId> = (0..64).map(|i| ActionId(i % 2)).collect();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 3,
            rff_dim: 16,
            batch_size: 8,
            ..Default::default()
        };
        assert!(matches!(train_kernel(&xs, &ys, 2, &cfg), Err(KernelError::Diverged { .. })));
    }

    #[test]
    fn serialization_round_trip_is_bit_identical() {
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
        let ys: Vec<ActionId> = xs.iter().map(|x| ActionId((x[0] > 0.0) as usize)).collect();
        let cfg = TrainConfig {
            rff_dim: 32,
            epochs: 2,
            batch_size: 10,
            learning_rate: 0.5,
            seed: 4,
        };
        let m = train_kernel(&xs, &ys, 2, &cfg).unwrap();
        let back: KernelModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let q = m.standardize(&[0.2, 0.7]);
        assert_eq!(back.predict_action_probs(&q).unwrap(), m.predict_action_probs(&q).unwrap());
    }
}
