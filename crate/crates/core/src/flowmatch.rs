//! Flow-matching math on action sequences.
//!
//! The probability path runs from data at `tau = 0` to noise at `tau = 1`:
//! `x_tau = tau * a0 + (1 - tau) * a1`, so its velocity is `a0 - a1`.
//! Sampling starts from noise at `tau = 1` and steps toward `tau = 0`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use thiserror::Error;

pub const BETA_ALPHA: f64 = 1.5;
pub const BETA_BETA: f64 = 1.0;
/// Lower clamp for sampled timesteps.
pub const TAU_FLOOR: f64 = 1e-6;
/// Euler steps used at inference.
pub const DEFAULT_INFERENCE_STEPS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<(), FlowError> {
    if a.dim() != b.dim() {
        return Err(FlowError::InvalidArgument(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// One training example on the path.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub a0: Array2<f64>,
    pub a1: Array2<f64>,
    pub tau: f64,
    pub x_tau: Array2<f64>,
}

impl FlowSample {
    pub fn new(a0: Array2<f64>, a1: Array2<f64>, tau: f64) -> Result<Self, FlowError> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(FlowError::InvalidArgument(format!("tau must lie in (0, 1], got {tau}")));
        }
        let x_tau = interpolate_path(&a0, &a1, tau)?;
        Ok(Self { a0, a1, tau, x_tau })
    }
}

/// Draws `tau ~ Beta(1.5, 1.0)` as `X / (X + Y)` with `X ~ Gamma(1.5)` and
/// `Y ~ Gamma(1.0)`, clamped below at [`TAU_FLOOR`].
pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let x = Gamma::new(BETA_ALPHA, 1.0).expect("valid shape").sample(rng);
    let y = Gamma::new(BETA_BETA, 1.0).expect("valid shape").sample(rng);
    let tau = if x + y > 0.0 { x / (x + y) } else { 1.0 };
    tau.clamp(TAU_FLOOR, 1.0)
}

pub fn interpolate_path(a0: &Array2<f64>, a1: &Array2<f64>, tau: f64) -> Result<Array2<f64>, FlowError> {
    same_shape(a0, a1)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(FlowError::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    if tau == 1.0 {
        return Ok(a0.clone());
    }
    if tau == 0.0 {
        return Ok(a1.clone());
    }
    Ok(tau * a0 + (1.0 - tau) * a1)
}

/// Regression target for the velocity field: `a0 - a1`.
pub fn cfm_target(a0: &Array2<f64>, a1: &Array2<f64>) -> Result<Array2<f64>, FlowError> {
    same_shape(a0, a1)?;
    Ok(a0 - a1)
}

/// Mean squared error between a predicted velocity and `a0 - a1`.
pub fn cfm_loss(predicted: &Array2<f64>, a0: &Array2<f64>, a1: &Array2<f64>) -> Result<f64, FlowError> {
    let target = cfm_target(a0, a1)?;
    same_shape(predicted, &target)?;
    if target.is_empty() {
        return Err(FlowError::InvalidArgument("empty action sequence".into()));
    }
    let sq: f64 = predicted.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sq / target.len() as f64)
}

/// Integrates `velocity_fn` from `tau = 1` to `tau = 0` in `steps` equal steps,
/// `x <- x - dtau * v(x, tau)`.
pub fn euler_integrate<F>(mut velocity_fn: F, x_init: &Array2<f64>, steps: usize) -> Result<Array2<f64>, FlowError>
where
    F: FnMut(&Array2<f64>, f64) -> Array2<f64>,
{
    if steps == 0 {
        return Err(FlowError::InvalidArgument("steps must be at least 1".into()));
    }
    let dtau = 1.0 / steps as f64;
    let mut x = x_init.clone();
    for i in 0..steps {
        let tau = 1.0 - i as f64 * dtau;
        let v = velocity_fn(&x, tau);
        if v.dim() != x.dim() {
            return Err(FlowError::ContractViolation(format!(
                "velocity has shape {:?}, state has {:?}",
                v.dim(),
                x.dim()
            )));
        }
        x.scaled_add(-dtau, &v);
    }
    Ok(x)
}

/// Equal numbers of human and robot items.
#[derive(Clone, Debug, PartialEq)]
pub struct CotrainBatch<T> {
    pub human_items: Vec<T>,
    pub robot_items: Vec<T>,
}

impl<T> CotrainBatch<T> {
    pub fn len(&self) -> usize {
        self.human_items.len() + self.robot_items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `batch_size / 2` items from each pool, uniformly with replacement.
pub fn compose_cotrain_batch<T: Clone, R: Rng + ?Sized>(
    human_pool: &[T],
    robot_pool: &[T],
    batch_size: usize,
    rng: &mut R,
) -> Result<CotrainBatch<T>, FlowError> {
    if human_pool.is_empty() || robot_pool.is_empty() {
        return Err(FlowError::InvalidArgument("both pools must be non-empty".into()));
    }
    if batch_size == 0 || !batch_size.is_multiple_of(2) {
        return Err(FlowError::InvalidArgument(format!(
            "batch size must be even and positive for a 1:1 split, got {batch_size}"
        )));
    }
    let half = batch_size / 2;
    let human_items = (0..half)
        .map(|_| human_pool[rng.random_range(0..human_pool.len())].clone())
        .collect();
    let robot_items = (0..half)
        .map(|_| robot_pool[rng.random_range(0..robot_pool.len())].clone())
        .collect();
    Ok(CotrainBatch {
        human_items,
        robot_items,
    })
}

/// Co-training objective: mean robot loss plus mean human loss. Each half is
/// reduced in index order.
pub fn cotrain_loss(robot_losses: &[f64], human_losses: &[f64]) -> Result<f64, FlowError> {
    if robot_losses.is_empty() || human_losses.is_empty() {
        return Err(FlowError::InvalidArgument("both halves need at least one loss".into()));
    }
    if robot_losses.len() != human_losses.len() {
        return Err(FlowError::InvalidArgument(format!(
            "unbalanced halves: {} robot vs {} human",
            robot_losses.len(),
            human_losses.len()
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(robot_losses) + mean(human_losses))
}
