//! Waypoint supervision losses.
//!
//! The training objective treats each waypoint as an isotropic Gaussian with
//! fixed standard deviation `sigma`, which reduces the per-sample negative
//! log-likelihood to a squared-distance loss plus a constant. Both forms are
//! provided; the identity
//!
//! ```text
//! gaussian_nll(pred, gt, sigma)
//!     = T * 0.5 * ln(2 * pi * sigma^2) + l2_loss(pred, gt) / (2 * sigma^2)
//! ```
//!
//! holds exactly (to floating tolerance) and is enforced by tests. Note the
//! per-waypoint constant is `0.5 * ln(2 * pi * sigma^2)` even though the
//! waypoints are 2-D; the constant has no effect on optimization.

use crate::error::{Error, Result};
use crate::geometry::{Trajectory, Waypoint};

/// Fixed isotropic noise scale for the Gaussian waypoint model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianNoiseModel {
    sigma: f64,
}

impl GaussianNoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sigma must be finite and positive, got {sigma}"
            )));
        }
        Ok(GaussianNoiseModel { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Per-waypoint additive constant `0.5 * ln(2 * pi * sigma^2)`.
    pub fn log_normalizer(&self) -> f64 {
        0.5 * (2.0 * std::f64::consts::PI * self.sigma * self.sigma).ln()
    }
}

impl Default for GaussianNoiseModel {
    fn default() -> Self {
        GaussianNoiseModel { sigma: 1.0 }
    }
}

fn check_lengths(pred: &Trajectory, gt: &Trajectory) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    Ok(())
}

/// Negative log-likelihood of the ground truth under Gaussians centered on
/// the predictions, in nats.
pub fn gaussian_nll(pred: &Trajectory, gt: &Trajectory, model: &GaussianNoiseModel) -> Result<f64> {
    check_lengths(pred, gt)?;
    let two_sigma_sq = 2.0 * model.sigma() * model.sigma();
    let constant = model.log_normalizer();
    let mut total = 0.0;
    for (p, g) in pred.waypoints().iter().zip(gt.waypoints()) {
        let dx = p.x - g.x;
        let dy = p.y - g.y;
        total += constant + (dx * dx + dy * dy) / two_sigma_sq;
    }
    Ok(total)
}

/// Sum over steps of squared Euclidean waypoint error, in square meters.
pub fn l2_loss(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_lengths(pred, gt)?;
    let mut total = 0.0;
    for (p, g) in pred.waypoints().iter().zip(gt.waypoints()) {
        let dx = p.x - g.x;
        let dy = p.y - g.y;
        total += dx * dx + dy * dy;
    }
    Ok(total)
}

/// Per-step weighted variant of [`l2_loss`]. A weight of 1.0 at every step
/// reproduces the unweighted loss; no schedule of time-varying weights is
/// applied anywhere in this crate.
pub fn l2_loss_weighted(pred: &Trajectory, gt: &Trajectory, weights: &[f64]) -> Result<f64> {
    check_lengths(pred, gt)?;
    if weights.len() != pred.len() {
        return Err(Error::LengthMismatch {
            expected: pred.len(),
            got: weights.len(),
        });
    }
    let mut total = 0.0;
    for ((p, g), w) in pred.waypoints().iter().zip(gt.waypoints()).zip(weights) {
        let dx = p.x - g.x;
        let dy = p.y - g.y;
        total += w * (dx * dx + dy * dy);
    }
    Ok(total)
}

/// Batch distance loss: sum of [`l2_loss`] over `(pred, gt)` pairs.
pub fn distance_loss(batch: &[(&Trajectory, &Trajectory)]) -> Result<f64> {
    let mut total = 0.0;
    for (pred, gt) in batch {
        total += l2_loss(pred, gt)?;
    }
    Ok(total)
}

/// Gradient of [`l2_loss`] with respect to the prediction:
/// `2 * (pred_t - gt_t)` at every step.
pub fn l2_loss_grad(pred: &Trajectory, gt: &Trajectory) -> Result<Vec<Waypoint>> {
    check_lengths(pred, gt)?;
    Ok(pred
        .waypoints()
        .iter()
        .zip(gt.waypoints())
        .map(|(p, g)| Waypoint::new(2.0 * (p.x - g.x), 2.0 * (p.y - g.y)))
        .collect())
}
