//! Masked regression losses over sparse labels, and pooled RMSE.
//!
//! Labels come with a per-pixel validity mask (drive-test roads cover only
//! a sliver of a map). The loss for one sample averages over its valid
//! pixels only, and the gradient is exactly zero at every invalid pixel,
//! so unlabeled pixels can never influence training.

use serde::{Deserialize, Serialize};

use super::{FeatureMap, NetError, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mae,
    Mse,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Mae => write!(f, "mae"),
            LossKind::Mse => write!(f, "mse"),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            other => Err(format!("unknown loss '{other}' (expected mae or mse)")),
        }
    }
}

/// Per-sample masked loss and its gradient with respect to the
/// prediction.
///
/// With n = number of valid pixels:
/// * MAE: (1/n) sum |p - y|, gradient sign(p - y) / n at valid pixels;
/// * MSE: (1/n) sum (p - y)^2, gradient 2 (p - y) / n at valid pixels.
///
/// Invalid pixels contribute nothing and get gradient exactly 0. A sample
/// with no valid pixels yields loss 0 and an all-zero gradient (callers
/// normally skip such samples). The reduction runs in f64 regardless of
/// the model scalar type.
pub fn masked_loss<T: Scalar>(
    pred: &FeatureMap<T>,
    target: &[f64],
    mask: &[bool],
    kind: LossKind,
) -> Result<(f64, FeatureMap<T>), NetError> {
    let n_pix = pred.height * pred.width;
    if pred.channels != 1 {
        return Err(NetError::ShapeMismatch(format!(
            "prediction must have 1 channel, got {}",
            pred.channels
        )));
    }
    if target.len() != n_pix || mask.len() != n_pix {
        return Err(NetError::ShapeMismatch(format!(
            "target/mask length {}/{} does not match {} pixels",
            target.len(),
            mask.len(),
            n_pix
        )));
    }
    let n = mask.iter().filter(|&&m| m).count();
    let mut grad = FeatureMap::zeros(1, pred.height, pred.width);
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    for i in 0..n_pix {
        if !mask[i] {
            continue;
        }
        let e = pred.data[i].into_f64() - target[i];
        match kind {
            LossKind::Mae => {
                loss += e.abs() * inv_n;
                grad.data[i] = T::from_f64(e.signum_or_zero() * inv_n);
            }
            LossKind::Mse => {
                loss += e * e * inv_n;
                grad.data[i] = T::from_f64(2.0 * e * inv_n);
            }
        }
    }
    Ok((loss, grad))
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    /// sign with the convention sign(0) = 0 (the MAE subgradient choice).
    #[inline]
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Pooled RMSE over many samples: accumulate squared errors and valid
/// pixel counts across the whole set, take one square root at the end.
/// (This weights every valid pixel equally; it is not the mean of
/// per-sample RMSEs.)
#[derive(Debug, Clone, Copy, Default)]
pub struct RmseAccumulator {
    sum_sq: f64,
    count: u64,
}

impl RmseAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, pred: f64, target: f64) {
        let e = pred - target;
        self.sum_sq += e * e;
        self.count += 1;
    }

    /// Merge a partial accumulation (e.g. one sample's totals).
    #[inline]
    pub fn push_sum(&mut self, sum_sq: f64, count: u64) {
        self.sum_sq += sum_sq;
        self.count += count;
    }

    pub fn sum_sq(&self) -> f64 {
        self.sum_sq
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// None if no valid pixels were pushed.
    pub fn rmse(&self) -> Option<f64> {
        if self.count == 0 {
            None
        } else {
            Some((self.sum_sq / self.count as f64).sqrt())
        }
    }
}

/// Pooled RMSE of one prediction against a masked target.
pub fn pooled_rmse(pred: &[f64], target: &[f64], mask: &[bool]) -> Option<f64> {
    let mut acc = RmseAccumulator::new();
    for i in 0..pred.len() {
        if mask[i] {
            acc.push(pred[i], target[i]);
        }
    }
    acc.rmse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pred(vals: &[f64]) -> FeatureMap<f64> {
        FeatureMap::from_vec(1, 1, vals.len(), vals.to_vec()).unwrap()
    }

    #[test]
    fn masked_mae_hand_case() {
        let p = pred(&[10.0, 20.0, 30.0, 40.0]);
        let t = [12.0, 19.0, 100.0, 40.0];
        let mask = [true, true, false, true];
        let (loss, grad) = masked_loss(&p, &t, &mask, LossKind::Mae).unwrap();
        // errors -2, +1, (skipped), 0 over n = 3
        assert_abs_diff_eq!(loss, (2.0 + 1.0 + 0.0) / 3.0, epsilon = 1e-15);
        assert_eq!(grad.data[0], -1.0 / 3.0);
        assert_eq!(grad.data[1], 1.0 / 3.0);
        assert_eq!(grad.data[2], 0.0); // invalid: exactly zero
        assert_eq!(grad.data[3], 0.0); // sign(0) = 0
    }

    #[test]
    fn masked_mse_hand_case() {
        let p = pred(&[10.0, 20.0, 30.0]);
        let t = [12.0, 19.0, 100.0];
        let mask = [true, true, false];
        let (loss, grad) = masked_loss(&p, &t, &mask, LossKind::Mse).unwrap();
        assert_abs_diff_eq!(loss, (4.0 + 1.0) / 2.0, epsilon = 1e-15);
        assert_eq!(grad.data[0], 2.0 * -2.0 / 2.0);
        assert_eq!(grad.data[1], 2.0 * 1.0 / 2.0);
        assert_eq!(grad.data[2], 0.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let base = [10.0, 20.0, 30.0, 40.0, 55.5, 61.0];
        let t = [12.0, 19.0, 100.0, 41.5, 50.0, 61.0 + 0.25];
        let mask = [true, true, false, true, true, true];
        for kind in [LossKind::Mae, LossKind::Mse] {
            let (_, grad) = masked_loss(&pred(&base), &t, &mask, kind).unwrap();
            let h = 1e-6;
            for i in 0..base.len() {
                let mut up = base;
                up[i] += h;
                let mut down = base;
                down[i] -= h;
                let (lu, _) = masked_loss(&pred(&up), &t, &mask, kind).unwrap();
                let (ld, _) = masked_loss(&pred(&down), &t, &mask, kind).unwrap();
                assert_abs_diff_eq!(grad.data[i], (lu - ld) / (2.0 * h), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn empty_mask_yields_zero_loss_and_gradient() {
        let p = pred(&[1.0, 2.0]);
        let (loss, grad) = masked_loss(&p, &[5.0, 6.0], &[false, false], LossKind::Mse).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let p = pred(&[1.0, 2.0]);
        assert!(masked_loss(&p, &[1.0], &[true, true], LossKind::Mae).is_err());
        assert!(masked_loss(&p, &[1.0, 2.0], &[true], LossKind::Mae).is_err());
        let two_ch = FeatureMap::<f64>::zeros(2, 1, 2);
        assert!(masked_loss(&two_ch, &[1.0, 2.0], &[true, true], LossKind::Mae).is_err());
    }

    #[test]
    fn constant_offset_rmse_is_exact() {
        // +3 dB everywhere: 3^2 = 9 and sqrt are exact in binary floating
        // point, so the pooled RMSE must be exactly 3.0
        let mut acc = RmseAccumulator::new();
        for i in 0..1000 {
            let t = 60.0 + (i % 97) as f64;
            acc.push(t + 3.0, t);
        }
        assert_eq!(acc.rmse(), Some(3.0));
        assert_eq!(RmseAccumulator::new().rmse(), None);
    }

    #[test]
    fn pooled_rmse_weights_pixels_not_samples() {
        // one sample with 1 pixel of error 10, another with 3 pixels of
        // error 0: pooled = sqrt(100 / 4), not mean of per-sample RMSEs
        let mut acc = RmseAccumulator::new();
        acc.push(10.0, 0.0);
        for _ in 0..3 {
            acc.push(5.0, 5.0);
        }
        assert_abs_diff_eq!(acc.rmse().unwrap(), 5.0, epsilon = 1e-15);
        let direct = pooled_rmse(
            &[10.0, 5.0, 5.0, 5.0],
            &[0.0, 5.0, 5.0, 5.0],
            &[true, true, true, true],
        )
        .unwrap();
        assert_abs_diff_eq!(direct, 5.0, epsilon = 1e-15);
    }
}
