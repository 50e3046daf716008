//! Finite-difference certification of the hand-written backward passes.
//!
//! The model is lifted to f64 and the full residual loss is differentiated
//! both analytically (backward pass) and numerically (central differences,
//! step 1e-3) on a random subsample of coordinates per parameter tensor.
//! 32-bit finite differences are too noisy for the tolerances used here,
//! hence the wide path.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{residual_mse_loss, DnCnn, Gradients};
use crate::noise::noise_field_f32;
use crate::tensor::{Mode, Tensor4};

pub const FD_STEP: f64 = 1e-3;
pub const COORDS_PER_TENSOR: usize = 200;

/// Outcome for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinates whose +h/-h evaluations crossed a ReLU kink; central
    /// differences are undefined there, so they are excluded.
    pub coords_skipped: usize,
}

/// Full gradient-check report.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// One line per tensor plus a verdict, stable for a fixed probe seed.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in &self.tensors {
            out.push_str(&format!(
                "{:<20} coords {:>4} (skipped {:>2} at kinks)  max rel err {:.3e}\n",
                t.name, t.coords_checked, t.coords_skipped, t.max_rel_error
            ));
        }
        out.push_str(&format!(
            "overall max rel err {:.3e} vs tolerance {:.1e}: {}\n",
            self.max_rel_error,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        ));
        out
    }
}

fn tensor_names(model: &DnCnn<f64>) -> Vec<String> {
    let mut names = Vec::new();
    for (k, layer) in model.layers().iter().enumerate() {
        names.push(format!("layer{k}.weights"));
        names.push(format!("layer{k}.bias"));
        if layer.bn.is_some() {
            names.push(format!("layer{k}.gamma"));
            names.push(format!("layer{k}.beta"));
        }
    }
    names
}

/// Loss as a pure function of the parameters, plus the ReLU sign
/// signature of the evaluation. Runs on a fresh copy so batchnorm
/// running-statistics updates cannot leak between evaluations.
fn loss_of(model: &DnCnn<f64>, y: &Tensor4<f64>, x: &Tensor4<f64>) -> Result<(f64, u64)> {
    let mut m = model.clone();
    let (pred, cache) = m.forward(y, Mode::Train)?;
    let (report, _) = residual_mse_loss(&pred.residual, y, x)?;
    let signature = cache.expect("train-mode cache").relu_sign_signature();
    Ok((report.value, signature))
}

fn analytic_gradients(model: &DnCnn<f64>, y: &Tensor4<f64>, x: &Tensor4<f64>) -> Result<Gradients<f64>> {
    let mut m = model.clone();
    let (pred, cache) = m.forward(y, Mode::Train)?;
    let (_, grad) = residual_mse_loss(&pred.residual, y, x)?;
    m.backward(cache.as_ref().expect("train-mode cache"), &grad)
}

/// Compares analytic gradients of the full loss against central finite
/// differences on `probe_input` (treated as the clean image; the noisy
/// input is synthesized from `probe_seed`). Failures are reported, not
/// raised.
pub fn grad_check(
    model: &DnCnn<f32>,
    probe_input: &Tensor4<f32>,
    probe_seed: u64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    grad_check_inner(model, probe_input, probe_seed, tolerance, false)
}

/// Same as [`grad_check`] with an optional sign corruption of the analytic
/// gradients, used to verify the checker itself can fail.
pub(crate) fn grad_check_inner(
    model: &DnCnn<f32>,
    probe_input: &Tensor4<f32>,
    probe_seed: u64,
    tolerance: f64,
    corrupt_sign: bool,
) -> Result<GradCheckReport> {
    let wide = model.cast::<f64>();
    let x = probe_input.cast::<f64>();
    let sigma = 25.0 / 255.0;
    let noise = noise_field_f32(x.len(), sigma, probe_seed);
    let y = {
        let data: Vec<f64> = x
            .as_slice()
            .iter()
            .zip(&noise)
            .map(|(&c, &n)| c + n as f64)
            .collect();
        Tensor4::from_vec(x.n(), x.c(), x.h(), x.w(), data)?
    };

    let mut analytic = analytic_gradients(&wide, &y, &x)?;
    if corrupt_sign {
        for l in &mut analytic.layers {
            for v in l.weights.as_mut_slice() {
                *v = -*v;
            }
        }
    }
    let grad_slices: Vec<Vec<f64>> = analytic.slices().iter().map(|s| s.to_vec()).collect();
    let names = tensor_names(&wide);
    debug_assert_eq!(names.len(), grad_slices.len());

    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed ^ 0x5eed_c0de);
    let mut tensors = Vec::with_capacity(names.len());
    let mut global_max = 0.0f64;
    for (tensor_idx, name) in names.iter().enumerate() {
        let len = grad_slices[tensor_idx].len();
        let mut coords: Vec<usize> = (0..len).collect();
        coords.shuffle(&mut rng);
        coords.truncate(COORDS_PER_TENSOR.min(len));
        coords.sort_unstable();

        let mut max_rel = 0.0f64;
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for &coord in &coords {
            let mut probe = wide.clone();
            perturb(&mut probe, tensor_idx, coord, FD_STEP);
            let (plus, sig_plus) = loss_of(&probe, &y, &x)?;
            perturb(&mut probe, tensor_idx, coord, -2.0 * FD_STEP);
            let (minus, sig_minus) = loss_of(&probe, &y, &x)?;
            if sig_plus != sig_minus {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad_slices[tensor_idx][coord];
            let denom = a.abs().max(numeric.abs());
            let rel = if denom < 1e-8 {
                0.0
            } else {
                (a - numeric).abs() / denom
            };
            max_rel = max_rel.max(rel);
            checked += 1;
        }
        global_max = global_max.max(max_rel);
        tensors.push(TensorCheck {
            name: name.clone(),
            max_rel_error: max_rel,
            coords_checked: checked,
            coords_skipped: skipped,
        });
    }

    Ok(GradCheckReport {
        tensors,
        max_rel_error: global_max,
        passed: global_max < tolerance,
        tolerance,
    })
}

fn perturb(model: &mut DnCnn<f64>, tensor_idx: usize, coord: usize, delta: f64) {
    let mut slices = model.trainable_slices_mut();
    slices[tensor_idx][coord] += delta;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe() -> Tensor4<f32> {
        Tensor4::from_fn(1, 1, 8, 8, |_, _, y, x| {
            (((y * 8 + x) as f32) * 0.37).sin() * 0.25 + 0.5
        })
    }

    #[test]
    fn small_model_passes_at_1e3() {
        let model = DnCnn::<f32>::build(4, 4, 1, 21).unwrap();
        let report = grad_check(&model, &probe(), 9, 1e-3).unwrap();
        assert!(report.passed, "\n{}", report.render());
    }

    #[test]
    fn sign_flip_fails() {
        let model = DnCnn::<f32>::build(4, 4, 1, 21).unwrap();
        let report = grad_check_inner(&model, &probe(), 9, 1e-3, true).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn report_is_deterministic_for_fixed_seed() {
        let model = DnCnn::<f32>::build(3, 4, 1, 2).unwrap();
        let a = grad_check(&model, &probe(), 5, 1e-3).unwrap();
        let b = grad_check(&model, &probe(), 5, 1e-3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.render(), b.render());
    }

    #[test]
    fn impossible_tolerance_fails() {
        let model = DnCnn::<f32>::build(3, 4, 1, 2).unwrap();
        let report = grad_check(&model, &probe(), 5, 1e-15).unwrap();
        assert!(!report.passed);
    }
}
