//! Diagonal preconditioner rules.
//!
//! Each rule advances its accumulators with the new gradient and returns the
//! diagonal of `P` as a tensor. The step itself lives in [`super::step`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::{OptimizerConfig, Preconditioner};

/// Accumulators for one parameter. All start at zero with the parameter's
/// shape; `step` counts completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    /// EMA of `g⊙g`.
    pub ms: Tensor,
    /// EMA of `g` (Adam only).
    pub m: Option<Tensor>,
    /// EMA of squared parameter updates (Adadelta only).
    pub d: Option<Tensor>,
    pub step: u64,
}

impl ParamState {
    pub fn new(shape: &[usize], preconditioner: &Preconditioner) -> Self {
        ParamState {
            ms: Tensor::zeros(shape),
            m: matches!(preconditioner, Preconditioner::Adam { .. }).then(|| Tensor::zeros(shape)),
            d: matches!(preconditioner, Preconditioner::Adadelta { .. })
                .then(|| Tensor::zeros(shape)),
            step: 0,
        }
    }
}

/// Per-parameter optimizer state for a whole model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub params: Vec<ParamState>,
}

fn check_grad(state: &ParamState, g: &Tensor) -> Result<()> {
    if g.shape() != state.ms.shape() {
        return Err(Error::shape("precondition", state.ms.shape(), g.shape()));
    }
    g.ensure_finite("gradient")
}

fn wrong_rule(expected: &str, config: &OptimizerConfig) -> Error {
    Error::Argument(format!(
        "{expected} preconditioner called with a {} config",
        config.preconditioner.name()
    ))
}

/// `MS ← α·MS + (1−α)·g⊙g`, then `P = 1 ⊘ (λ + √MS)`.
pub fn precondition_rmsprop(
    state: &mut ParamState,
    g: &Tensor,
    config: &OptimizerConfig,
) -> Result<Tensor> {
    let Preconditioner::RmsProp { alpha } = config.preconditioner else {
        return Err(wrong_rule("rmsprop", config));
    };
    check_grad(state, g)?;
    let lambda = config.lambda;
    let mut p = Vec::with_capacity(g.len());
    for (ms, &gi) in state.ms.data_mut().iter_mut().zip(g.data()) {
        *ms = alpha * *ms + (1.0 - alpha) * gi * gi;
        p.push(1.0 / (lambda + ms.sqrt()));
    }
    state.step += 1;
    let p = Tensor::from_parts(g.shape().to_vec(), p);
    p.ensure_finite("rmsprop preconditioner")?;
    Ok(p)
}

/// Adam moments with bias correction at exponent `n+1`. Returns `(P, M̂)`;
/// `M̂` replaces the raw gradient in the update.
pub fn precondition_adam(
    state: &mut ParamState,
    g: &Tensor,
    config: &OptimizerConfig,
) -> Result<(Tensor, Tensor)> {
    let Preconditioner::Adam { beta1, beta2 } = config.preconditioner else {
        return Err(wrong_rule("adam", config));
    };
    check_grad(state, g)?;
    let lambda = config.lambda;
    let exponent = i32::try_from(state.step + 1).unwrap_or(i32::MAX);
    let c1 = 1.0 - beta1.powi(exponent);
    let c2 = 1.0 - beta2.powi(exponent);
    let m = state
        .m
        .as_mut()
        .ok_or_else(|| Error::Contract("adam state without first moment".into()))?;
    let mut p = Vec::with_capacity(g.len());
    let mut direction = Vec::with_capacity(g.len());
    for ((mi, ms), &gi) in m
        .data_mut()
        .iter_mut()
        .zip(state.ms.data_mut())
        .zip(g.data())
    {
        *mi = beta1 * *mi + (1.0 - beta1) * gi;
        *ms = beta2 * *ms + (1.0 - beta2) * gi * gi;
        let m_hat = *mi / c1;
        let ms_hat = *ms / c2;
        p.push(1.0 / (lambda + ms_hat.sqrt()));
        direction.push(m_hat);
    }
    state.step += 1;
    let p = Tensor::from_parts(g.shape().to_vec(), p);
    p.ensure_finite("adam preconditioner")?;
    Ok((p, Tensor::from_parts(g.shape().to_vec(), direction)))
}

/// `MS ← β₁·MS + (1−β₁)·g⊙g`, then `P = (D + λ) ⊘ (λ + √MS)` using the `D`
/// from before this step. Call [`record_adadelta_update`] once the parameter
/// has moved.
pub fn precondition_adadelta(
    state: &mut ParamState,
    g: &Tensor,
    config: &OptimizerConfig,
) -> Result<Tensor> {
    let Preconditioner::Adadelta { beta1, .. } = config.preconditioner else {
        return Err(wrong_rule("adadelta", config));
    };
    check_grad(state, g)?;
    let lambda = config.lambda;
    let d = state
        .d
        .as_ref()
        .ok_or_else(|| Error::Contract("adadelta state without update average".into()))?;
    let mut p = Vec::with_capacity(g.len());
    for ((ms, &di), &gi) in state.ms.data_mut().iter_mut().zip(d.data()).zip(g.data()) {
        *ms = beta1 * *ms + (1.0 - beta1) * gi * gi;
        p.push((di + lambda) / (lambda + ms.sqrt()));
    }
    state.step += 1;
    let p = Tensor::from_parts(g.shape().to_vec(), p);
    p.ensure_finite("adadelta preconditioner")?;
    Ok(p)
}

/// `D ← β₂·D + (1−β₂)·Δθ⊙Δθ` with the realized update `Δθ`.
pub fn record_adadelta_update(
    state: &mut ParamState,
    delta: &[f64],
    config: &OptimizerConfig,
) -> Result<()> {
    let Preconditioner::Adadelta { beta2, .. } = config.preconditioner else {
        return Err(wrong_rule("adadelta", config));
    };
    let d = state
        .d
        .as_mut()
        .ok_or_else(|| Error::Contract("adadelta state without update average".into()))?;
    if d.len() != delta.len() {
        return Err(Error::shape(
            "record_adadelta_update",
            d.shape(),
            &[delta.len()],
        ));
    }
    for (di, &dt) in d.data_mut().iter_mut().zip(delta) {
        *di = beta2 * *di + (1.0 - beta2) * dt * dt;
    }
    Ok(())
}
