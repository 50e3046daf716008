//! Per-channel batch normalization over the (batch, height, width) axes.
//!
//! Training mode normalizes with batch statistics and folds them into the
//! running estimates; evaluation mode normalizes with the running
//! estimates alone and produces no gradient cache.

use crate::error::{Error, Result};
use crate::tensor::{Mode, Scalar, Tensor4};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Learnable scale/shift plus running statistics for one channel group.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    epsilon: T,
    momentum: T,
}

impl<T: Scalar> BatchNormParams<T> {
    /// Identity-initialized parameters: gamma 1, beta 0, running stats 0/1.
    pub fn identity(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![T::ONE; channels],
            beta: vec![T::ZERO; channels],
            running_mean: vec![T::ZERO; channels],
            running_var: vec![T::ONE; channels],
            epsilon: T::from_f64(DEFAULT_EPSILON),
            momentum: T::from_f64(DEFAULT_MOMENTUM),
        }
    }

    pub fn with_epsilon_momentum(channels: usize, epsilon: f64, momentum: f64) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "batchnorm epsilon must be > 0, got {epsilon}"
            )));
        }
        if !(0.0 < momentum && momentum < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "batchnorm momentum must be in (0, 1), got {momentum}"
            )));
        }
        let mut p = Self::identity(channels);
        p.epsilon = T::from_f64(epsilon);
        p.momentum = T::from_f64(momentum);
        Ok(p)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
    #[inline]
    pub fn epsilon(&self) -> T {
        self.epsilon
    }
    #[inline]
    pub fn momentum(&self) -> T {
        self.momentum
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormParams<U> {
        let lift = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64())).collect();
        BatchNormParams {
            gamma: lift(&self.gamma),
            beta: lift(&self.beta),
            running_mean: lift(&self.running_mean),
            running_var: lift(&self.running_var),
            epsilon: U::from_f64(self.epsilon.to_f64()),
            momentum: U::from_f64(self.momentum.to_f64()),
        }
    }
}

/// Values saved by a Train-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T = f32> {
    /// Normalized input before scale/shift.
    x_hat: Tensor4<T>,
    /// Per-channel 1 / sqrt(var + eps).
    inv_std: Vec<T>,
}

/// Gradients of one batchnorm layer.
#[derive(Debug, Clone)]
pub struct BatchNormGrads<T = f32> {
    pub grad_input: Tensor4<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
}

/// Normalizes per channel. In `Train` mode batch statistics are used, the
/// running estimates are updated in place
/// (`running = momentum * running + (1 - momentum) * batch`), and a cache
/// for the backward pass is returned. In `Eval` mode the running
/// statistics are used and no cache is produced.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor4<T>,
    p: &mut BatchNormParams<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, Option<BatchNormCache<T>>)> {
    let (n, c, h, w) = input.shape();
    if c != p.channels() {
        return Err(Error::ShapeMismatch(format!(
            "input has {c} channels but batchnorm has {}",
            p.channels()
        )));
    }
    let plane = h * w;
    let per_channel = n * plane;

    match mode {
        Mode::Eval => Ok((batchnorm_eval(input, p)?, None)),
        Mode::Train => {
            if per_channel < 2 {
                return Err(Error::InvalidArgument(format!(
                    "train-mode batchnorm needs at least 2 elements per channel, got {per_channel}"
                )));
            }
            let mut out = Tensor4::zeros(n, c, h, w);
            let mut x_hat = Tensor4::zeros(n, c, h, w);
            let mut inv_stds = vec![T::ZERO; c];
            let m = per_channel as f64;
            for ch in 0..c {
                // statistics accumulated in f64 for stability
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    for &x in &input.as_slice()[base..base + plane] {
                        let xf = x.to_f64();
                        sum += xf;
                        sum_sq += xf * xf;
                    }
                }
                let mean_f = sum / m;
                let var_f = (sum_sq / m - mean_f * mean_f).max(0.0);
                let mean = T::from_f64(mean_f);
                let var = T::from_f64(var_f);
                let inv_std = T::ONE / (var + p.epsilon).sqrt();
                inv_stds[ch] = inv_std;
                let (gamma, beta) = (p.gamma[ch], p.beta[ch]);
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    let src = &input.as_slice()[base..base + plane];
                    for i in 0..plane {
                        let xh = (src[i] - mean) * inv_std;
                        x_hat.as_mut_slice()[base + i] = xh;
                        out.as_mut_slice()[base + i] = gamma * xh + beta;
                    }
                }
                p.running_mean[ch] = p.momentum * p.running_mean[ch] + (T::ONE - p.momentum) * mean;
                p.running_var[ch] = p.momentum * p.running_var[ch] + (T::ONE - p.momentum) * var;
            }
            Ok((out, Some(BatchNormCache { x_hat, inv_std: inv_stds })))
        }
    }
}

/// Eval-mode normalization using the running statistics; pure in the
/// parameters, usable from shared references.
pub fn batchnorm_eval<T: Scalar>(input: &Tensor4<T>, p: &BatchNormParams<T>) -> Result<Tensor4<T>> {
    let (n, c, h, w) = input.shape();
    if c != p.channels() {
        return Err(Error::ShapeMismatch(format!(
            "input has {c} channels but batchnorm has {}",
            p.channels()
        )));
    }
    let plane = h * w;
    let mut out = Tensor4::zeros(n, c, h, w);
    for ch in 0..c {
        let inv_std = T::ONE / (p.running_var[ch] + p.epsilon).sqrt();
        let mean = p.running_mean[ch];
        let (gamma, beta) = (p.gamma[ch], p.beta[ch]);
        for b in 0..n {
            let base = (b * c + ch) * plane;
            let src = &input.as_slice()[base..base + plane];
            let dst = &mut out.as_mut_slice()[base..base + plane];
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = gamma * (x - mean) * inv_std + beta;
            }
        }
    }
    Ok(out)
}

/// Analytic gradients of the Train-mode mapping. `cache` must come from a
/// Train-mode forward; Eval mode defines no training gradient.
pub fn batchnorm_backward<T: Scalar>(
    cache: Option<&BatchNormCache<T>>,
    p: &BatchNormParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<BatchNormGrads<T>> {
    let cache = cache.ok_or_else(|| {
        Error::InvalidArgument("batchnorm_backward requires a Train-mode cache".into())
    })?;
    if !cache.x_hat.same_shape(grad_out) {
        return Err(Error::ShapeMismatch(format!(
            "grad_out {:?} does not match cached activations {:?}",
            grad_out.shape(),
            cache.x_hat.shape()
        )));
    }
    let (n, c, h, w) = grad_out.shape();
    if c != p.channels() {
        return Err(Error::ShapeMismatch(format!(
            "grad_out has {c} channels but batchnorm has {}",
            p.channels()
        )));
    }
    let plane = h * w;
    let m = (n * plane) as f64;

    let mut grad_input = Tensor4::zeros(n, c, h, w);
    let mut grad_gamma = vec![T::ZERO; c];
    let mut grad_beta = vec![T::ZERO; c];

    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for b in 0..n {
            let base = (b * c + ch) * plane;
            let g = &grad_out.as_slice()[base..base + plane];
            let xh = &cache.x_hat.as_slice()[base..base + plane];
            for i in 0..plane {
                let gf = g[i].to_f64();
                sum_g += gf;
                sum_gx += gf * xh[i].to_f64();
            }
        }
        grad_beta[ch] = T::from_f64(sum_g);
        grad_gamma[ch] = T::from_f64(sum_gx);

        let scale = p.gamma[ch] * cache.inv_std[ch];
        let mean_g = T::from_f64(sum_g / m);
        let mean_gx = T::from_f64(sum_gx / m);
        for b in 0..n {
            let base = (b * c + ch) * plane;
            let g = &grad_out.as_slice()[base..base + plane];
            let xh = &cache.x_hat.as_slice()[base..base + plane];
            let dst = &mut grad_input.as_mut_slice()[base..base + plane];
            for i in 0..plane {
                dst[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
            }
        }
    }

    Ok(BatchNormGrads {
        grad_input,
        grad_gamma,
        grad_beta,
    })
}
