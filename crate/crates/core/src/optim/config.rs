use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal preconditioner rule and its EMA decays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Preconditioner {
    /// `P = 1 / (λ + √MS)` with `MS` an EMA of `g⊙g` at decay `alpha`.
    RmsProp { alpha: f64 },
    /// Bias-corrected first and second moments; the step follows `M̂`.
    Adam { beta1: f64, beta2: f64 },
    /// `P = (D + λ) / (λ + √MS)` where `D` averages squared parameter moves.
    Adadelta { beta1: f64, beta2: f64 },
    /// `P = 1`: plain SGD, and plain SGLD with noise.
    Identity,
}

impl Preconditioner {
    pub fn name(&self) -> &'static str {
        match self {
            Preconditioner::RmsProp { .. } => "rmsprop",
            Preconditioner::Adam { .. } => "adam",
            Preconditioner::Adadelta { .. } => "adadelta",
            Preconditioner::Identity => "sgd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub preconditioner: Preconditioner,
    /// Damping added to `√MS` (and to `D` for Adadelta).
    pub lambda: f64,
    /// Noise coefficient; the injected noise has covariance `σ²·γ·P`.
    pub sigma: f64,
}

impl OptimizerConfig {
    pub const RMSPROP_ALPHA: f64 = 0.9;
    pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
    pub const ADADELTA_BETAS: (f64, f64) = (0.95, 0.95);
    pub const DEFAULT_LAMBDA: f64 = 1e-8;
    pub const ADADELTA_LAMBDA: f64 = 1e-6;

    pub fn rmsprop() -> Self {
        OptimizerConfig {
            preconditioner: Preconditioner::RmsProp {
                alpha: Self::RMSPROP_ALPHA,
            },
            lambda: Self::DEFAULT_LAMBDA,
            sigma: 0.0,
        }
    }

    pub fn adam() -> Self {
        let (beta1, beta2) = Self::ADAM_BETAS;
        OptimizerConfig {
            preconditioner: Preconditioner::Adam { beta1, beta2 },
            lambda: Self::DEFAULT_LAMBDA,
            sigma: 0.0,
        }
    }

    pub fn adadelta() -> Self {
        let (beta1, beta2) = Self::ADADELTA_BETAS;
        OptimizerConfig {
            preconditioner: Preconditioner::Adadelta { beta1, beta2 },
            lambda: Self::ADADELTA_LAMBDA,
            sigma: 0.0,
        }
    }

    pub fn identity() -> Self {
        OptimizerConfig {
            preconditioner: Preconditioner::Identity,
            lambda: Self::DEFAULT_LAMBDA,
            sigma: 0.0,
        }
    }

    /// Defaults for `rmsprop`, `adam`, `adadelta` or `sgd`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "rmsprop" => Ok(Self::rmsprop()),
            "adam" => Ok(Self::adam()),
            "adadelta" => Ok(Self::adadelta()),
            "sgd" | "identity" => Ok(Self::identity()),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Argument(format!(
                    "{name} must lie in (0, 1), got {v}"
                )))
            }
        };
        match self.preconditioner {
            Preconditioner::RmsProp { alpha } => unit("alpha", alpha)?,
            Preconditioner::Adam { beta1, beta2 } | Preconditioner::Adadelta { beta1, beta2 } => {
                unit("beta1", beta1)?;
                unit("beta2", beta2)?;
            }
            Preconditioner::Identity => {}
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Argument(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Argument(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}
