use crate::error::{Error, Result};
use crate::nn::Model;

/// Which parameters receive Langevin noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LangevinMask {
    eligible: Vec<bool>,
    noisy_layers: usize,
}

/// Number of leading layers selected by fraction `p` of `layers`.
///
/// Rounds up, with a small tolerance so that products like `0.6 · 30` that
/// land a hair above an integer don't pick an extra layer.
pub fn leading_layer_count(p: f64, layers: usize) -> usize {
    let raw = p * layers as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(layers)
}

impl LangevinMask {
    pub fn all(model: &Model) -> Self {
        LangevinMask {
            eligible: vec![true; model.params().len()],
            noisy_layers: model.param_layer_count(),
        }
    }

    pub fn eligible(&self) -> &[bool] {
        &self.eligible
    }

    /// Count of parameterized layers that receive noise.
    pub fn noisy_layers(&self) -> usize {
        self.noisy_layers
    }

    /// Writes the eligibility flags onto the model's parameters.
    pub fn apply(&self, model: &mut Model) -> Result<()> {
        if model.params().len() != self.eligible.len() {
            return Err(Error::Argument(format!(
                "mask covers {} parameters, model has {}",
                self.eligible.len(),
                model.params().len()
            )));
        }
        for (p, &e) in model.params_mut().iter_mut().zip(&self.eligible) {
            p.langevin_eligible = e;
        }
        Ok(())
    }
}

/// Marks the parameters of the first `⌈p·L⌉` parameterized layers (counted
/// from the input) as eligible for noise.
pub fn build_layer_mask(model: &Model, p: f64) -> Result<LangevinMask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!(
            "layer fraction must lie in [0, 1], got {p}"
        )));
    }
    let noisy_layers = leading_layer_count(p, model.param_layer_count());
    Ok(LangevinMask {
        eligible: model
            .params()
            .iter()
            .map(|q| q.layer_index() < noisy_layers)
            .collect(),
        noisy_layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn deep(hidden: usize) -> Model {
        let mut specs = vec![];
        for _ in 0..hidden {
            specs.extend([LayerSpec::Dense(4), LayerSpec::Relu]);
        }
        specs.push(LayerSpec::SoftmaxOutput(2));
        Model::new(&[4], &specs).unwrap()
    }

    #[test]
    fn full_and_empty_masks() {
        let model = deep(5);
        assert!(build_layer_mask(&model, 1.0)
            .unwrap()
            .eligible()
            .iter()
            .all(|&e| e));
        assert!(build_layer_mask(&model, 0.0)
            .unwrap()
            .eligible()
            .iter()
            .all(|&e| !e));
        assert_eq!(
            build_layer_mask(&model, 1.0).unwrap(),
            LangevinMask::all(&model)
        );
    }

    #[test]
    fn thirty_hidden_layers_at_thirty_percent() {
        // 30 hidden dense layers plus the output layer: L = 31, ⌈9.3⌉ = 10.
        let model = deep(30);
        let mask = build_layer_mask(&model, 0.3).unwrap();
        assert_eq!(mask.noisy_layers(), 10);
        for (p, &e) in model.params().iter().zip(mask.eligible()) {
            assert_eq!(e, p.layer_index() < 10, "{}", p.name());
        }
    }

    #[test]
    fn exact_products_do_not_round_up() {
        assert_eq!(leading_layer_count(0.6, 30), 18);
        assert_eq!(leading_layer_count(0.3, 10), 3);
        assert_eq!(leading_layer_count(0.7, 10), 7);
        assert_eq!(leading_layer_count(0.01, 31), 1);
        assert_eq!(leading_layer_count(1.0, 31), 31);
    }

    #[test]
    fn fraction_out_of_range() {
        let model = deep(2);
        assert!(build_layer_mask(&model, -0.1).is_err());
        assert!(build_layer_mask(&model, 1.5).is_err());
        assert!(build_layer_mask(&model, f64::NAN).is_err());
    }

    #[test]
    fn apply_sets_flags() {
        let mut model = deep(3);
        build_layer_mask(&model, 0.5)
            .unwrap()
            .apply(&mut model)
            .unwrap();
        let flags: Vec<bool> = model.params().iter().map(|p| p.langevin_eligible).collect();
        assert_eq!(
            flags,
            vec![true, true, true, true, false, false, false, false]
        );
        assert!(build_layer_mask(&deep(1), 1.0)
            .unwrap()
            .apply(&mut model)
            .is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn masks_nest(a in 0.0f64..=1.0, b in 0.0f64..=1.0, hidden in 1usize..40) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let model = deep(hidden);
                let small = build_layer_mask(&model, lo).unwrap();
                let large = build_layer_mask(&model, hi).unwrap();
                for (s, l) in small.eligible().iter().zip(large.eligible()) {
                    prop_assert!(!s || *l);
                }
            }
        }
    }
}
