//! Preconditioned (Layer) Langevin optimizers.
//!
//! The building blocks are the per-parameter rules in [`precondition_rmsprop`],
//! [`precondition_adam`] and [`precondition_adadelta`], the noise-free
//! [`descent_step`] and the noisy [`langevin_step`]. [`Optimizer`] drives them
//! over every parameter of a [`Model`].

mod config;
mod mask;
mod precondition;
mod step;

pub use config::{OptimizerConfig, Preconditioner};
pub use mask::{build_layer_mask, leading_layer_count, LangevinMask};
pub use precondition::{
    precondition_adadelta, precondition_adam, precondition_rmsprop, record_adadelta_update,
    OptimizerState, ParamState,
};
pub use step::{descent_step, langevin_step};

use crate::error::Result;
use crate::nn::Model;
use crate::rng::SeededRng;

/// Whole-model optimizer.
///
/// Without a noise stream this is the plain preconditioned method. With one
/// it is the Langevin variant, and each parameter's `langevin_eligible`
/// flag acts as its mask bit.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: OptimizerState,
    noise: Option<SeededRng>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, model: &Model) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            state: OptimizerState {
                params: model
                    .params()
                    .iter()
                    .map(|p| ParamState::new(p.value().shape(), &config.preconditioner))
                    .collect(),
            },
            noise: None,
        })
    }

    pub fn langevin(config: OptimizerConfig, model: &Model, noise: SeededRng) -> Result<Self> {
        let mut opt = Self::new(config, model)?;
        opt.noise = Some(noise);
        Ok(opt)
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn is_langevin(&self) -> bool {
        self.noise.is_some()
    }

    /// One update of every parameter at step size `gamma` and noise level
    /// `sigma` (ignored without a noise stream).
    pub fn step(&mut self, model: &mut Model, gamma: f64, sigma: f64) -> Result<()> {
        let config = self.config.with_sigma(sigma);
        config.validate()?;
        for (param, state) in model.params_mut().iter_mut().zip(&mut self.state.params) {
            match self.noise.as_mut() {
                Some(rng) => {
                    let eligible = param.langevin_eligible;
                    langevin_step(param, state, gamma, &config, rng, eligible)?
                }
                None => descent_step(param, state, gamma, &config)?,
            }
        }
        Ok(())
    }
}
