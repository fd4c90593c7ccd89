use crate::error::{Error, Result};
use crate::nn::Parameter;
use crate::rng::{sample_gaussian, SeededRng};
use crate::tensor::Tensor;

use super::config::{OptimizerConfig, Preconditioner};
use super::precondition::{
    precondition_adadelta, precondition_adam, precondition_rmsprop, record_adadelta_update,
    ParamState,
};

/// Advances the preconditioner and returns `(P, direction)`; the direction is
/// the raw gradient except for Adam, which follows `M̂`.
fn precondition(
    param: &Parameter,
    state: &mut ParamState,
    config: &OptimizerConfig,
) -> Result<(Tensor, Tensor)> {
    let g = param.grad();
    match config.preconditioner {
        Preconditioner::RmsProp { .. } => Ok((precondition_rmsprop(state, g, config)?, g.clone())),
        Preconditioner::Adam { .. } => precondition_adam(state, g, config),
        Preconditioner::Adadelta { .. } => {
            Ok((precondition_adadelta(state, g, config)?, g.clone()))
        }
        Preconditioner::Identity => {
            g.ensure_finite("gradient")?;
            state.step += 1;
            Ok((Tensor::full(g.shape(), 1.0), g.clone()))
        }
    }
}

fn commit(
    param: &mut Parameter,
    state: &mut ParamState,
    config: &OptimizerConfig,
    updated: Vec<f64>,
) -> Result<()> {
    if updated.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            context: format!("update of parameter {}", param.name()),
        });
    }
    if state.d.is_some() {
        let delta: Vec<f64> = updated
            .iter()
            .zip(param.value().data())
            .map(|(new, old)| new - old)
            .collect();
        record_adadelta_update(state, &delta, config)?;
    }
    param.values_mut().copy_from_slice(&updated);
    Ok(())
}

fn descend(param: &Parameter, gamma: f64, p: &Tensor, direction: &Tensor) -> Vec<f64> {
    param
        .value()
        .data()
        .iter()
        .zip(p.data())
        .zip(direction.data())
        .map(|((&theta, &pi), &di)| theta - gamma * pi * di)
        .collect()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "step size must be > 0, got {gamma}"
        )))
    }
}

/// Preconditioned step without noise: `θ ← θ − γ·P⊙direction`.
pub fn descent_step(
    param: &mut Parameter,
    state: &mut ParamState,
    gamma: f64,
    config: &OptimizerConfig,
) -> Result<()> {
    check_gamma(gamma)?;
    let (p, direction) = precondition(param, state, config)?;
    let updated = descend(param, gamma, &p, &direction);
    commit(param, state, config, updated)
}

/// Preconditioned Langevin step:
/// `θ ← θ − γ·P⊙direction + mask·σ·√γ·N(0, P)`.
///
/// Gaussian draws are taken for every element whether or not `mask_bit` is
/// set, so masked and unmasked parameters consume the same stream. With the
/// mask off, or `σ = 0`, the result is bit-identical to [`descent_step`].
pub fn langevin_step(
    param: &mut Parameter,
    state: &mut ParamState,
    gamma: f64,
    config: &OptimizerConfig,
    rng: &mut SeededRng,
    mask_bit: bool,
) -> Result<()> {
    check_gamma(gamma)?;
    let (p, direction) = precondition(param, state, config)?;
    let mut updated = descend(param, gamma, &p, &direction);
    let scale = config.sigma * gamma.sqrt();
    let std = p.map(|pi| scale * pi.sqrt());
    let noise = sample_gaussian(rng, p.shape(), 0.0, &std)?;
    if mask_bit && config.sigma > 0.0 {
        for (theta, n) in updated.iter_mut().zip(noise.data()) {
            *theta += n;
        }
    }
    commit(param, state, config, updated)
}
