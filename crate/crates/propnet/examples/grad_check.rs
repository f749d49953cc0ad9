//! Compare analytic gradients against central finite differences on a small
//! randomly initialized model, for both loss functions.

use std::error::Error;

use propnet::net::{grad_check, GradCheckConfig, LossKind};

fn main() -> Result<(), Box<dyn Error>> {
    for loss in [LossKind::Mse, LossKind::Mae] {
        let cfg = GradCheckConfig {
            loss,
            ..GradCheckConfig::default()
        };
        let report = grad_check(&cfg)?;
        println!(
            "loss={} checked={} loss_value={:.6} max_rel_error={:.3e} mean_rel_error={:.3e}",
            report.loss,
            report.checked,
            report.loss_value,
            report.max_rel_error,
            report.mean_rel_error
        );
    }
    Ok(())
}
