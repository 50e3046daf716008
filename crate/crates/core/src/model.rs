//! The residual denoising network: a stack of 3x3 convolutions with batch
//! normalization and ReLU on the interior layers. The network predicts the
//! noise residual; the clean estimate is `input - residual`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::batchnorm::{
    batchnorm_backward, batchnorm_eval, batchnorm_forward, BatchNormCache, BatchNormParams,
};
use crate::conv::{conv2d_backward, conv2d_forward, ConvParams, KERNEL};
use crate::error::{Error, Result};
use crate::image::ImageGray8;
use crate::relu::{relu_backward, relu_forward};
use crate::tensor::{Mode, Scalar, Tensor4};

pub const DEFAULT_DEPTH: usize = 20;
pub const DEFAULT_WIDTH: usize = 64;
const PADDING: usize = 1;

/// One stage of the stack: convolution, optional batchnorm, optional ReLU.
#[derive(Debug, Clone)]
pub struct Layer<T = f32> {
    pub conv: ConvParams<T>,
    pub bn: Option<BatchNormParams<T>>,
    pub relu: bool,
}

/// The denoising CNN. Layer 1 is Conv+ReLU, layers 2..depth-1 are
/// Conv+BN+ReLU, the final layer is a bare Conv back to the input channel
/// count.
#[derive(Debug, Clone)]
pub struct DnCnn<T = f32> {
    depth: usize,
    width: usize,
    in_channels: usize,
    seed: u64,
    layers: Vec<Layer<T>>,
}

/// Network output paired with the clean estimate derived from it.
#[derive(Debug, Clone)]
pub struct ResidualPrediction<T = f32> {
    /// Predicted noise image R(y).
    pub residual: Tensor4<T>,
    /// `y - residual`; adding the residual back reproduces `y` exactly.
    pub denoised: Tensor4<T>,
}

/// Scalar loss value and the batch size it was averaged over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub batch_size: usize,
}

/// Activations retained by a Train-mode forward pass for [`DnCnn::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f32> {
    /// inputs[k] is the input to layer k; inputs[0] is the network input.
    inputs: Vec<Tensor4<T>>,
    bn: Vec<Option<BatchNormCache<T>>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// FNV-1a hash of the ReLU sign pattern. Two evaluations with
    /// different signatures straddle an activation kink, where the loss is
    /// not differentiable and finite differences are meaningless.
    pub fn relu_sign_signature(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for act in self.inputs.iter().skip(1) {
            for &v in act.as_slice() {
                let bit = (v > T::ZERO) as u64;
                hash ^= bit;
                hash = hash.wrapping_mul(0x1000_0000_01b3);
            }
        }
        hash
    }
}

/// Gradients of one layer, shaped like its parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads<T = f32> {
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
    pub gamma: Option<Vec<T>>,
    pub beta: Option<Vec<T>>,
}

/// Gradients of every trainable parameter, in stack order.
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Flat views over all gradient tensors, in the fixed parameter order
    /// (per layer: weights, bias, gamma, beta).
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
            if let Some(g) = &l.gamma {
                out.push(g.as_slice());
            }
            if let Some(b) = &l.beta {
                out.push(b.as_slice());
            }
        }
        out
    }

    pub fn all_zero(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|&v| v == T::ZERO))
    }
}

/// A trainable parameter slice paired with its gradient.
pub struct GradPair<'a, T = f32> {
    pub value: &'a mut [T],
    pub grad: &'a [T],
}

impl<T: Scalar> DnCnn<T> {
    /// Builds the stack with deterministic seed-driven initialization:
    /// fan-in-scaled Gaussian conv weights (std = sqrt(2 / fan_in)), zero
    /// bias, gamma 1, beta 0, running stats 0/1.
    pub fn build(depth: usize, width: usize, in_channels: usize, seed: u64) -> Result<Self> {
        if depth < 3 {
            return Err(Error::InvalidArgument(format!(
                "network depth must be >= 3, got {depth}"
            )));
        }
        if width < 1 || in_channels < 1 {
            return Err(Error::InvalidArgument(
                "width and in_channels must be >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(depth);
        for k in 0..depth {
            let (c_in, c_out) = if k == 0 {
                (in_channels, width)
            } else if k == depth - 1 {
                (width, in_channels)
            } else {
                (width, width)
            };
            let std = (2.0 / (c_in * KERNEL * KERNEL) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is positive and finite");
            let weights = Tensor4::from_fn(c_out, c_in, KERNEL, KERNEL, |_, _, _, _| {
                T::from_f64(normal.sample(&mut rng))
            });
            let conv = ConvParams::new(weights, vec![T::ZERO; c_out])?;
            let interior = k > 0 && k < depth - 1;
            layers.push(Layer {
                conv,
                bn: interior.then(|| BatchNormParams::identity(c_out)),
                relu: k < depth - 1,
            });
        }
        Ok(DnCnn {
            depth,
            width,
            in_channels,
            seed,
            layers,
        })
    }

    /// Reassembles a model from deserialized layers (checkpoint loading).
    pub(crate) fn from_parts(
        depth: usize,
        width: usize,
        in_channels: usize,
        layers: Vec<Layer<T>>,
    ) -> Self {
        DnCnn {
            depth,
            width,
            in_channels,
            seed: 0,
            layers,
        }
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.depth
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Side length of the input region influencing one output pixel,
    /// derived from the actual stack (each 3x3 conv adds 2).
    pub fn receptive_field(&self) -> usize {
        2 * self.layers.len() + 1
    }

    /// Trainable parameters: conv weights and biases plus gamma/beta.
    pub fn trainable_param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.conv.weights().len()
                    + l.conv.bias().len()
                    + l.bn.as_ref().map_or(0, |bn| bn.gamma.len() + bn.beta.len())
            })
            .sum()
    }

    /// Non-trainable running-statistics element count.
    pub fn running_stat_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.bn.as_ref()
                    .map_or(0, |bn| bn.running_mean.len() + bn.running_var.len())
            })
            .sum()
    }

    /// Converts all parameters to another float width (f64 for gradient
    /// checking).
    pub fn cast<U: Scalar>(&self) -> DnCnn<U> {
        DnCnn {
            depth: self.depth,
            width: self.width,
            in_channels: self.in_channels,
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    conv: l.conv.cast(),
                    bn: l.bn.as_ref().map(|bn| bn.cast()),
                    relu: l.relu,
                })
                .collect(),
        }
    }

    /// Mutable flat views over the trainable parameters, in the same fixed
    /// order as [`Gradients::slices`].
    pub fn trainable_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            let (weights, bias) = l.conv.weights_bias_mut();
            out.push(weights.as_mut_slice());
            out.push(bias);
            if let Some(bn) = &mut l.bn {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    fn check_input(&self, y: &Tensor4<T>) -> Result<()> {
        if y.c() != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels but the network expects {}",
                y.c(),
                self.in_channels
            )));
        }
        Ok(())
    }

    /// Runs the stack. Train mode records an activation cache and updates
    /// batchnorm running statistics; Eval mode does neither.
    pub fn forward(
        &mut self,
        y: &Tensor4<T>,
        mode: Mode,
    ) -> Result<(ResidualPrediction<T>, Option<ForwardCache<T>>)> {
        self.check_input(y)?;
        match mode {
            Mode::Eval => Ok((self.infer_prediction(y)?, None)),
            Mode::Train => {
                let mut inputs = Vec::with_capacity(self.layers.len());
                let mut bn_caches = Vec::with_capacity(self.layers.len());
                let mut act = y.clone();
                for layer in &mut self.layers {
                    inputs.push(act.clone());
                    let mut z = conv2d_forward(&act, &layer.conv, PADDING)?;
                    let bn_cache = match &mut layer.bn {
                        Some(bn) => {
                            let (out, cache) = batchnorm_forward(&z, bn, Mode::Train)?;
                            z = out;
                            cache
                        }
                        None => None,
                    };
                    bn_caches.push(bn_cache);
                    act = if layer.relu { relu_forward(&z) } else { z };
                }
                let residual = act;
                let denoised = y.sub(&residual)?;
                Ok((
                    ResidualPrediction { residual, denoised },
                    Some(ForwardCache {
                        inputs,
                        bn: bn_caches,
                    }),
                ))
            }
        }
    }

    /// Eval-mode forward without mutable access: a pure function of the
    /// parameters and input, safe to call from many threads.
    pub fn infer_prediction(&self, y: &Tensor4<T>) -> Result<ResidualPrediction<T>> {
        self.check_input(y)?;
        let mut act = y.clone();
        for layer in &self.layers {
            let mut z = conv2d_forward(&act, &layer.conv, PADDING)?;
            if let Some(bn) = &layer.bn {
                z = batchnorm_eval(&z, bn)?;
            }
            act = if layer.relu { relu_forward(&z) } else { z };
        }
        let denoised = y.sub(&act)?;
        Ok(ResidualPrediction {
            residual: act,
            denoised,
        })
    }

    /// Chains the kernel backward passes in reverse layer order, producing
    /// a gradient for every trainable parameter.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_residual: &Tensor4<T>,
    ) -> Result<Gradients<T>> {
        if cache.inputs.len() != self.layers.len() || cache.bn.len() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "forward cache does not match the model layer stack".into(),
            ));
        }
        let mut grad = grad_residual.clone();
        let mut layer_grads: Vec<LayerGrads<T>> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate().rev() {
            if layer.relu {
                // post-activation output of layer k is the input of layer k+1;
                // its positive entries mark where the pre-activation was positive
                let post = cache
                    .inputs
                    .get(k + 1)
                    .ok_or_else(|| Error::InvalidArgument("forward cache is incomplete".into()))?;
                grad = relu_backward(post, &grad)?;
            }
            let (mut gamma, mut beta) = (None, None);
            if let Some(bn) = &layer.bn {
                let bn_grads = batchnorm_backward(cache.bn[k].as_ref(), bn, &grad)?;
                grad = bn_grads.grad_input;
                gamma = Some(bn_grads.grad_gamma);
                beta = Some(bn_grads.grad_beta);
            }
            let conv_grads = conv2d_backward(&cache.inputs[k], &layer.conv, &grad, PADDING)?;
            grad = conv_grads.grad_input;
            layer_grads.push(LayerGrads {
                weights: conv_grads.grad_weights,
                bias: conv_grads.grad_bias,
                gamma,
                beta,
            });
        }
        layer_grads.reverse();
        Ok(Gradients {
            layers: layer_grads,
        })
    }

    /// Pairs every trainable parameter slice with its gradient slice,
    /// validating that shapes mirror each other.
    pub fn grad_pairs<'a>(&'a mut self, grads: &'a Gradients<T>) -> Result<Vec<GradPair<'a, T>>> {
        let grad_slices = grads.slices();
        let value_slices = self.trainable_slices_mut();
        if grad_slices.len() != value_slices.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient set has {} tensors but the model has {}",
                grad_slices.len(),
                value_slices.len()
            )));
        }
        let mut pairs = Vec::with_capacity(value_slices.len());
        for (value, grad) in value_slices.into_iter().zip(grad_slices) {
            if value.len() != grad.len() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter length {} vs gradient length {}",
                    value.len(),
                    grad.len()
                )));
            }
            pairs.push(GradPair { value, grad });
        }
        Ok(pairs)
    }
}

/// Eq.-style residual loss: `(1/2N) * sum ||predicted - (y - x)||^2` with
/// N the batch size, plus its gradient `(predicted - (y - x)) / N` with
/// respect to the prediction.
pub fn residual_mse_loss<T: Scalar>(
    predicted: &Tensor4<T>,
    y: &Tensor4<T>,
    x: &Tensor4<T>,
) -> Result<(LossReport, Tensor4<T>)> {
    if !predicted.same_shape(y) || !y.same_shape(x) {
        return Err(Error::ShapeMismatch(format!(
            "loss inputs differ: predicted {:?}, y {:?}, x {:?}",
            predicted.shape(),
            y.shape(),
            x.shape()
        )));
    }
    let n = predicted.n();
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut sum_sq = 0.0f64;
    let mut grad = Tensor4::zeros(predicted.n(), predicted.c(), predicted.h(), predicted.w());
    {
        let g = grad.as_mut_slice();
        for (i, ((&p, &yv), &xv)) in predicted
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .zip(x.as_slice())
            .enumerate()
        {
            let diff = p - (yv - xv);
            sum_sq += diff.to_f64() * diff.to_f64();
            g[i] = diff * inv_n;
        }
    }
    Ok((
        LossReport {
            value: sum_sq / (2.0 * n as f64),
            batch_size: n,
        },
        grad,
    ))
}

/// Denoises one 8-bit image: scale to [0,1], run the network in Eval mode,
/// clamp the estimate to [0,1] and quantize with round-half-up.
pub fn denoise_image(model: &DnCnn<f32>, image: &ImageGray8) -> Result<ImageGray8> {
    let (w, h) = (image.width(), image.height());
    let data: Vec<f32> = image.pixels().iter().map(|&p| p as f32 / 255.0).collect();
    let y = Tensor4::from_vec(1, 1, h, w, data)?;
    let pred = model.infer_prediction(&y)?;
    let pixels: Vec<u8> = pred
        .denoised
        .as_slice()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    ImageGray8::from_pixels(w, h, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(depth: usize, width: usize) -> DnCnn<f32> {
        let mut m = DnCnn::build(depth, width, 1, 0).unwrap();
        for l in m.layers_mut() {
            l.conv.weights_mut().as_mut_slice().fill(0.0);
            l.conv.bias_mut().fill(0.0);
        }
        m
    }

    #[test]
    fn build_rejects_shallow_depth() {
        assert!(matches!(
            DnCnn::<f32>::build(2, 8, 1, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = DnCnn::<f32>::build(5, 8, 1, 42).unwrap();
        let b = DnCnn::<f32>::build(5, 8, 1, 42).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            assert_eq!(la.conv.weights().as_slice(), lb.conv.weights().as_slice());
        }
        let c = DnCnn::<f32>::build(5, 8, 1, 43).unwrap();
        assert_ne!(
            a.layers()[0].conv.weights().as_slice(),
            c.layers()[0].conv.weights().as_slice()
        );
    }

    #[test]
    fn default_architecture_parameter_count() {
        let m = DnCnn::<f32>::build(20, 64, 1, 7).unwrap();
        assert_eq!(m.trainable_param_count(), 668_225);
        assert_eq!(m.running_stat_count(), 18 * 2 * 64);
    }

    #[test]
    fn structure_first_and_last_layers_have_no_bn() {
        let m = DnCnn::<f32>::build(6, 8, 1, 1).unwrap();
        let layers = m.layers();
        assert!(layers[0].bn.is_none() && layers[0].relu);
        assert!(layers[5].bn.is_none() && !layers[5].relu);
        let bn_count = layers.iter().filter(|l| l.bn.is_some()).count();
        assert_eq!(bn_count, 4);
        assert_eq!(m.receptive_field(), 13);
    }

    #[test]
    fn zero_network_predicts_zero_residual() {
        let m = zeroed(4, 4);
        let y = Tensor4::from_fn(1, 1, 6, 6, |_, _, yy, xx| (yy * 6 + xx) as f32 / 36.0);
        let pred = m.infer_prediction(&y).unwrap();
        assert!(pred.residual.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(pred.denoised.as_slice(), y.as_slice());
    }

    #[test]
    fn denoised_is_exactly_one_subtraction_from_input() {
        let mut m = DnCnn::<f32>::build(4, 6, 1, 3).unwrap();
        let y = Tensor4::from_fn(2, 1, 8, 8, |b, _, yy, xx| {
            ((b * 64 + yy * 8 + xx) as f32 * 0.71).sin() * 0.5 + 0.5
        });
        let (pred, _) = m.forward(&y, Mode::Train).unwrap();
        // the clean estimate is defined by the single subtraction y - R(y)
        let recomputed = y.sub(&pred.residual).unwrap();
        assert_eq!(pred.denoised.as_slice(), recomputed.as_slice());
        assert_eq!(pred.residual.shape(), y.shape());
    }

    #[test]
    fn forward_rejects_channel_mismatch() {
        let mut m = DnCnn::<f32>::build(3, 4, 1, 0).unwrap();
        let y = Tensor4::<f32>::zeros(1, 2, 8, 8);
        assert!(m.forward(&y, Mode::Eval).is_err());
    }

    #[test]
    fn eval_forward_is_reproducible() {
        let m = DnCnn::<f32>::build(4, 8, 1, 11).unwrap();
        let y = Tensor4::from_fn(1, 1, 16, 16, |_, _, yy, xx| ((yy ^ xx) as f32) / 16.0);
        let a = m.infer_prediction(&y).unwrap();
        let b = m.infer_prediction(&y).unwrap();
        assert_eq!(a.residual.as_slice(), b.residual.as_slice());
    }

    #[test]
    fn loss_zero_at_truth() {
        let y = Tensor4::from_fn(2, 1, 4, 4, |b, _, yy, xx| (b + yy + xx) as f32 * 0.1);
        let x = Tensor4::from_fn(2, 1, 4, 4, |b, _, yy, xx| (b + yy * xx) as f32 * 0.05);
        let truth = y.sub(&x).unwrap();
        let (report, grad) = residual_mse_loss(&truth, &y, &x).unwrap();
        assert_eq!(report.value, 0.0);
        assert_eq!(report.batch_size, 2);
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_single_pixel_difference() {
        // N=1, prediction differs from the true residual by 2 in one pixel
        let y = Tensor4::<f32>::zeros(1, 1, 3, 3);
        let x = Tensor4::<f32>::zeros(1, 1, 3, 3);
        let mut predicted = Tensor4::<f32>::zeros(1, 1, 3, 3);
        predicted.set(0, 0, 1, 1, 2.0);
        let (report, grad) = residual_mse_loss(&predicted, &y, &x).unwrap();
        assert_eq!(report.value, 2.0);
        assert_eq!(grad.get(0, 0, 1, 1), 2.0);
    }

    #[test]
    fn loss_invariant_under_duplicated_batch() {
        let y = Tensor4::from_fn(1, 1, 4, 4, |_, _, yy, xx| (yy * 4 + xx) as f32 * 0.03);
        let x = Tensor4::from_fn(1, 1, 4, 4, |_, _, yy, xx| (yy + xx) as f32 * 0.02);
        let pred = Tensor4::from_fn(1, 1, 4, 4, |_, _, yy, xx| ((yy as f32) - (xx as f32)) * 0.01);
        let (single, _) = residual_mse_loss(&pred, &y, &x).unwrap();

        let dup = |t: &Tensor4<f32>| {
            let mut v = t.as_slice().to_vec();
            v.extend_from_slice(t.as_slice());
            Tensor4::from_vec(2, 1, 4, 4, v).unwrap()
        };
        let (double, _) = residual_mse_loss(&dup(&pred), &dup(&y), &dup(&x)).unwrap();
        assert!((single.value - double.value).abs() < 1e-12);
    }

    #[test]
    fn backward_zero_grad_residual_gives_zero_gradients() {
        let mut m = DnCnn::<f32>::build(4, 4, 1, 5).unwrap();
        let y = Tensor4::from_fn(2, 1, 6, 6, |_, _, yy, xx| ((yy * xx) as f32 * 0.13).cos());
        let (_, cache) = m.forward(&y, Mode::Train).unwrap();
        let grads = m
            .backward(cache.as_ref().unwrap(), &Tensor4::zeros(2, 1, 6, 6))
            .unwrap();
        assert!(grads.all_zero());
    }

    #[test]
    fn backward_is_deterministic() {
        let mut m = DnCnn::<f32>::build(4, 4, 1, 5).unwrap();
        let y = Tensor4::from_fn(1, 1, 8, 8, |_, _, yy, xx| ((yy + 2 * xx) as f32 * 0.07).sin());
        let (pred, cache) = m.forward(&y, Mode::Train).unwrap();
        let x = Tensor4::zeros(1, 1, 8, 8);
        let (_, grad) = residual_mse_loss(&pred.residual, &y, &x).unwrap();
        let g1 = m.backward(cache.as_ref().unwrap(), &grad).unwrap();
        let g2 = m.backward(cache.as_ref().unwrap(), &grad).unwrap();
        for (a, b) in g1.slices().iter().zip(g2.slices()) {
            assert_eq!(a, &b);
        }
    }

    #[test]
    fn grad_pairs_validates_shapes() {
        let mut m = DnCnn::<f32>::build(3, 4, 1, 5).unwrap();
        let mut m2 = DnCnn::<f32>::build(4, 4, 1, 5).unwrap();
        let y = Tensor4::from_fn(1, 1, 4, 4, |_, _, yy, xx| (yy + xx) as f32 * 0.1);
        let (_, cache) = m2.forward(&y, Mode::Train).unwrap();
        let grads = m2
            .backward(cache.as_ref().unwrap(), &Tensor4::zeros(1, 1, 4, 4))
            .unwrap();
        assert!(m.grad_pairs(&grads).is_err());
        assert!(m2.grad_pairs(&grads).is_ok());
    }
}
