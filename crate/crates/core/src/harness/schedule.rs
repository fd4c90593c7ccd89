use serde::Deserialize;

use crate::error::{Error, Result};

/// Constant learning rate and noise level up to and including epoch `until`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub until: usize,
    pub lr: f64,
    pub sigma: f64,
}

/// Piecewise-constant `(γ, σ)` over 1-based epochs.
///
/// Phase `k` covers epochs `phases[k-1].until + 1 ..= phases[k].until`, so
/// the spans are contiguous by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    phases: Vec<Phase>,
}

impl Schedule {
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Config("schedule needs at least one phase".into()));
        }
        let mut previous = 0;
        for p in &phases {
            if p.until <= previous {
                return Err(Error::Config(format!(
                    "phase ending at epoch {} does not come after epoch {previous}",
                    p.until
                )));
            }
            if !(p.lr > 0.0 && p.lr.is_finite()) {
                return Err(Error::Config(format!(
                    "learning rate must be > 0, got {}",
                    p.lr
                )));
            }
            if !(p.sigma >= 0.0 && p.sigma.is_finite()) {
                return Err(Error::Config(format!(
                    "sigma must be >= 0, got {}",
                    p.sigma
                )));
            }
            previous = p.until;
        }
        Ok(Schedule { phases })
    }

    pub fn constant(lr: f64, sigma: f64, epochs: usize) -> Result<Self> {
        Self::new(vec![Phase {
            until: epochs,
            lr,
            sigma,
        }])
    }

    /// Two phases: `(lr, sigma)` through epoch `switch`, then `(final_lr, 0)`
    /// through `epochs`.
    pub fn two_phase(
        lr: f64,
        sigma: f64,
        switch: usize,
        final_lr: f64,
        epochs: usize,
    ) -> Result<Self> {
        Self::new(vec![
            Phase {
                until: switch,
                lr,
                sigma,
            },
            Phase {
                until: epochs,
                lr: final_lr,
                sigma: 0.0,
            },
        ])
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn last_epoch(&self) -> usize {
        self.phases.last().map_or(0, |p| p.until)
    }

    /// Checks that the phases cover epochs `1..=total_epochs`.
    pub fn covers(&self, total_epochs: usize) -> Result<()> {
        if self.last_epoch() < total_epochs {
            return Err(Error::Config(format!(
                "schedule ends at epoch {} but the run has {total_epochs} epochs",
                self.last_epoch()
            )));
        }
        Ok(())
    }

    /// `(γ, σ)` in effect during `epoch` (1-based).
    pub fn at_epoch(&self, epoch: usize) -> Result<(f64, f64)> {
        if epoch == 0 {
            return Err(Error::Argument("epochs are numbered from 1".into()));
        }
        self.phases
            .iter()
            .find(|p| epoch <= p.until)
            .map(|p| (p.lr, p.sigma))
            .ok_or_else(|| {
                Error::Argument(format!("epoch {epoch} is past the end of the schedule"))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caption_schedule_switches_after_epoch_twelve() {
        let s = Schedule::two_phase(1e-3, 5e-4, 12, 1e-4, 15).unwrap();
        for e in 1..=12 {
            assert_eq!(s.at_epoch(e).unwrap(), (1e-3, 5e-4));
        }
        for e in 13..=15 {
            assert_eq!(s.at_epoch(e).unwrap(), (1e-4, 0.0));
        }
        assert!(s.at_epoch(16).is_err());
        assert!(s.at_epoch(0).is_err());
        s.covers(15).unwrap();
        assert!(s.covers(16).is_err());
    }

    #[test]
    fn invalid_phases() {
        let p = |until, lr, sigma| Phase { until, lr, sigma };
        assert!(Schedule::new(vec![]).is_err());
        assert!(Schedule::new(vec![p(3, 1e-3, 0.0), p(3, 1e-4, 0.0)]).is_err());
        assert!(Schedule::new(vec![p(3, 0.0, 0.0)]).is_err());
        assert!(Schedule::new(vec![p(3, 1e-3, -1.0)]).is_err());
        assert!(Schedule::new(vec![p(0, 1e-3, 0.0)]).is_err());
    }
}
