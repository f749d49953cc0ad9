//! Central-difference gradient verification of the full network in f64.
//!
//! Builds a freshly initialized model, a random scene-like input, a random
//! validity mask, and a synthetic label field, computes analytic gradients
//! via the backward pass, then compares a random subset of parameters
//! against (L(p+h) - L(p-h)) / 2h.
//!
//! For the MAE loss the label is constructed so every pixel error starts
//! at least 0.3 dB away from zero; the tiny finite-difference step then
//! cannot push any error across the |e| kink, which would otherwise make
//! the two-sided difference meaningless at that pixel.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

use super::loss::{masked_loss, LossKind};
use super::model::{ModelGradients, ModelWeights};
use super::{ArchSpec, FeatureMap, NetError};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub arch: ArchSpec,
    pub height: usize,
    pub width: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// How many randomly chosen parameters to verify (capped at the
    /// total parameter count).
    pub num_params: usize,
    /// Finite-difference step.
    pub step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            arch: ArchSpec {
                base_channels: 4,
                depth: 2,
                ..ArchSpec::default()
            },
            height: 16,
            width: 16,
            loss: LossKind::Mse,
            seed: 42,
            num_params: 200,
            step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub loss: LossKind,
    pub checked: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    /// Loss value at the unperturbed parameters.
    pub loss_value: f64,
}

/// Run the check and report relative errors
/// |analytic - numeric| / max(1e-6, |analytic| + |numeric|).
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport, NetError> {
    let mut model = ModelWeights::<f64>::init(cfg.arch, cfg.seed)?;
    let mut rng = Pcg64::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    // Freshly initialized biases are all zero, which parks every ReLU
    // whose inputs are fully dead exactly on its kink — a point where the
    // loss is not differentiable and central differences straddle the
    // corner. Jitter the biases well clear of zero (and far beyond the
    // finite-difference step) so the check runs at a smooth point.
    for (t, tensor) in model.param_tensors_mut().into_iter().enumerate() {
        if t % 2 == 1 {
            for v in tensor.iter_mut() {
                let magnitude = rng.random_range(0.01..0.05);
                *v = if rng.random_range(0..2u8) == 0 {
                    magnitude
                } else {
                    -magnitude
                };
            }
        }
    }
    let mut x = FeatureMap::<f64>::zeros(cfg.arch.in_channels, cfg.height, cfg.width);
    for v in &mut x.data {
        *v = rng.random_range(-1.0..1.0);
    }
    let n_pix = cfg.height * cfg.width;
    // random mask with roughly 70% valid pixels, but never empty
    let mut mask: Vec<bool> = (0..n_pix)
        .map(|_| rng.random_range(0.0..1.0) < 0.7)
        .collect();
    if !mask.iter().any(|&m| m) {
        mask[0] = true;
    }
    // label = initial prediction shifted per pixel by a bounded amount
    // with random sign, so initial errors are in +-[0.3, 1.3]
    let initial = model.forward(&x)?;
    let target: Vec<f64> = initial
        .data
        .iter()
        .map(|&p| {
            let magnitude = rng.random_range(0.3..1.3);
            let sign = if rng.random_range(0..2u8) == 0 {
                1.0
            } else {
                -1.0
            };
            p - sign * magnitude
        })
        .collect();

    // analytic gradients
    let (pred, cache) = model.forward_cached(&x)?;
    let (loss_value, d_pred) = masked_loss(&pred, &target, &mask, cfg.loss)?;
    let mut grads = ModelGradients::zeros(&cfg.arch);
    model.backward(&cache, &d_pred, &mut grads);

    // pick a random subset of flat parameter indices
    let total = model.param_count();
    let n_check = cfg.num_params.min(total);
    let mut indices: Vec<usize> = (0..total).collect();
    indices.shuffle(&mut rng);
    indices.truncate(n_check);

    let tensor_lens: Vec<usize> = model.param_tensors().iter().map(|t| t.len()).collect();
    let locate = |flat: usize| -> (usize, usize) {
        let mut rest = flat;
        for (t, &len) in tensor_lens.iter().enumerate() {
            if rest < len {
                return (t, rest);
            }
            rest -= len;
        }
        unreachable!("flat index within param_count");
    };
    let grad_tensors = grads.param_tensors();

    let h = cfg.step;
    let mut max_rel = 0.0f64;
    let mut sum_rel = 0.0f64;
    for &flat in &indices {
        let (t, off) = locate(flat);
        let analytic = grad_tensors[t][off];
        let orig = model.param_tensors()[t][off];
        model.param_tensors_mut()[t][off] = orig + h;
        let up = eval_loss(&model, &x, &target, &mask, cfg.loss)?;
        model.param_tensors_mut()[t][off] = orig - h;
        let down = eval_loss(&model, &x, &target, &mask, cfg.loss)?;
        model.param_tensors_mut()[t][off] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
        if rel > max_rel {
            max_rel = rel;
        }
        sum_rel += rel;
    }
    Ok(GradCheckReport {
        loss: cfg.loss,
        checked: n_check,
        max_rel_error: max_rel,
        mean_rel_error: if n_check == 0 {
            0.0
        } else {
            sum_rel / n_check as f64
        },
        loss_value,
    })
}

fn eval_loss(
    model: &ModelWeights<f64>,
    x: &FeatureMap<f64>,
    target: &[f64],
    mask: &[bool],
    kind: LossKind,
) -> Result<f64, NetError> {
    let pred = model.forward(x)?;
    Ok(masked_loss(&pred, target, mask, kind)?.0)
}
