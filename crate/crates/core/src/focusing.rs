//! Focusing mechanisms: gradient-gain coefficients that multiply a box loss.
//!
//! Every coefficient here is a plain `f64` computed from the *detached* IoU
//! loss of an anchor and the running mean kept by [`EmaTracker`]. Callers
//! multiply it onto the loss as a constant, so it rescales the gradient
//! without contributing a gradient of its own.
//!
//! * monotonic: `(L*/mean)^γ`
//! * non-monotonic: `r = β / (δ α^(β-δ))` with outlier degree `β = L*/mean`
//!
//! ```
//! use wiou::focusing::{gain, outlier_degree};
//!
//! let beta = outlier_degree(0.8, 0.4)?;
//! assert_eq!(beta, 2.0);
//! // δ is where the gain crosses 1.
//! assert_eq!(gain(3.0, 1.9, 3.0), 1.0);
//! # Ok::<(), wiou::Error>(())
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{check_param, Result};

/// The `(α, δ)` pairs used for the non-monotonic mechanism in the detector
/// ablations.
pub const GAIN_PRESETS: [(f64, f64); 3] = [(1.4, 5.0), (1.6, 4.0), (1.9, 3.0)];

/// Default exponent of the monotonic mechanism.
pub const DEFAULT_GAMMA: f64 = 0.5;

/// Exponential running average of the IoU loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaTracker {
    mean: f64,
    momentum: f64,
}

impl EmaTracker {
    /// Starts at mean 1. `momentum` must lie in `[0, 1)`; 0 freezes the mean.
    pub fn new(momentum: f64) -> Result<Self> {
        check_param(
            "momentum",
            momentum,
            (0.0..1.0).contains(&momentum),
            "must lie in [0, 1)",
        )?;
        Ok(EmaTracker {
            mean: 1.0,
            momentum,
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// `mean <- (1 - m) mean + m v`, where `v` is the mean detached IoU
    /// loss of one batch.
    pub fn update(&mut self, batch_mean_loss: f64) -> Result<()> {
        check_param(
            "batch_mean_loss",
            batch_mean_loss,
            (0.0..=1.0).contains(&batch_mean_loss),
            "must lie in [0, 1]",
        )?;
        self.mean = (1.0 - self.momentum) * self.mean + self.momentum * batch_mean_loss;
        Ok(())
    }
}

fn check_ratio_inputs(loss_star: f64, mean: f64) -> Result<()> {
    check_param("loss", loss_star, loss_star >= 0.0, "must be >= 0")?;
    check_param("mean", mean, mean > 0.0, "must be > 0")
}

/// `(loss_star / mean)^γ`.
pub fn monotonic_coeff(loss_star: f64, mean: f64, gamma: f64) -> Result<f64> {
    check_ratio_inputs(loss_star, mean)?;
    check_param("gamma", gamma, gamma > 0.0, "must be > 0")?;
    Ok((loss_star / mean).powf(gamma))
}

/// `β = loss_star / mean`.
pub fn outlier_degree(loss_star: f64, mean: f64) -> Result<f64> {
    check_ratio_inputs(loss_star, mean)?;
    Ok(loss_star / mean)
}

/// Non-monotonic gain `β / (δ α^(β-δ))`. Peaks at `β = 1/ln α` and equals
/// 1 at `β = δ`.
pub fn gain(beta: f64, alpha: f64, delta: f64) -> f64 {
    beta / (delta * alpha.powf(beta - delta))
}

pub(crate) fn check_gain_params(alpha: f64, delta: f64) -> Result<()> {
    check_param("alpha", alpha, alpha > 1.0, "must be > 1")?;
    check_param("delta", delta, delta > 0.0, "must be > 0")
}

/// Momentum that leaves 5% of the initial mean after `t` epochs of `n`
/// batches: `m = 1 - 0.05^(1/(t n))`.
pub fn momentum_from_schedule(epochs: u64, batches_per_epoch: u64) -> Result<f64> {
    let updates = epochs.saturating_mul(batches_per_epoch);
    check_param(
        "epochs * batches",
        updates as f64,
        updates >= 1,
        "must be >= 1",
    )?;
    // 1 - exp(ln(0.05)/k) without cancellation
    Ok(-(0.05f64.ln() / updates as f64).exp_m1())
}

/// The gain sampled on `[0, beta_max]` split into `steps` equal intervals
/// (`steps + 1` rows, both ends included).
pub fn gain_curve(alpha: f64, delta: f64, beta_max: f64, steps: usize) -> Result<Vec<(f64, f64)>> {
    check_gain_params(alpha, delta)?;
    check_param("beta_max", beta_max, beta_max > 0.0, "must be > 0")?;
    check_param("steps", steps as f64, steps >= 1, "must be >= 1")?;
    Ok((0..=steps)
        .map(|k| {
            let beta = beta_max * k as f64 / steps as f64;
            (beta, gain(beta, alpha, delta))
        })
        .collect())
}
