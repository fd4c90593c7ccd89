//! Built-in self-tests behind `langevin check`.

use crate::error::Result;
use crate::nn::{softmax_cross_entropy, LayerSpec, Model};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{sample_gaussian, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

const FD_STEP: f64 = 1e-6;
const FD_TOLERANCE: f64 = 1e-5;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn loss_at(model: &Model, x: &Tensor, labels: &[usize]) -> Result<f64> {
    Ok(softmax_cross_entropy(&model.predict(x)?, labels)?.0)
}

/// Largest relative error between backprop and central differences over
/// every parameter and input coordinate.
fn gradient_error(model: &mut Model, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let (y, cache) = model.forward(x)?;
    let (_, dy) = softmax_cross_entropy(&y, labels)?;
    let dx = model.backward(cache, &dy)?;
    let grads: Vec<Tensor> = model.params().iter().map(|p| p.grad().clone()).collect();

    let mut worst = 0.0f64;
    for (pi, grad) in grads.iter().enumerate() {
        for i in 0..grad.len() {
            let original = model.params()[pi].value().data()[i];
            model.params_mut()[pi].values_mut()[i] = original + FD_STEP;
            let up = loss_at(model, x, labels)?;
            model.params_mut()[pi].values_mut()[i] = original - FD_STEP;
            let down = loss_at(model, x, labels)?;
            model.params_mut()[pi].values_mut()[i] = original;
            worst = worst.max(relative_error(
                grad.data()[i],
                (up - down) / (2.0 * FD_STEP),
            ));
        }
    }
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe.data_mut()[i] = x.data()[i] + FD_STEP;
        let up = loss_at(model, &probe, labels)?;
        probe.data_mut()[i] = x.data()[i] - FD_STEP;
        let down = loss_at(model, &probe, labels)?;
        probe.data_mut()[i] = x.data()[i];
        worst = worst.max(relative_error(dx.data()[i], (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

fn gradient_cases() -> Vec<(&'static str, Vec<usize>, Vec<LayerSpec>)> {
    use LayerSpec::*;
    vec![
        ("dense", vec![5], vec![Dense(4), SoftmaxOutput(3)]),
        ("relu", vec![5], vec![Dense(6), Relu, SoftmaxOutput(3)]),
        (
            "sigmoid",
            vec![5],
            vec![Dense(6), Sigmoid, SoftmaxOutput(3)],
        ),
        (
            "highway",
            vec![4],
            vec![Highway(4), Highway(4), SoftmaxOutput(3)],
        ),
        (
            "conv",
            vec![6, 5, 2],
            vec![Conv2d(3), Flatten, SoftmaxOutput(3)],
        ),
        (
            "maxpool",
            vec![7, 6, 2],
            vec![Conv2d(2), MaxPool2, Flatten, SoftmaxOutput(3)],
        ),
        ("softmax-ce", vec![4], vec![SoftmaxOutput(5)]),
    ]
}

fn check_gradients(rng: &mut SeededRng) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (name, input, specs) in gradient_cases() {
        let mut model = Model::new(&input, &specs)?;
        model.init_params(rng);
        // Random biases so ReLU kinks and pooling ties are not at zero.
        for p in model.params_mut() {
            for v in p.values_mut() {
                *v += 0.1 * rng.standard_normal();
            }
        }
        let batch = 3;
        let mut shape = vec![batch];
        shape.extend_from_slice(&input);
        let x = Tensor::new(
            &shape,
            (0..shape.iter().product())
                .map(|_| rng.standard_normal())
                .collect(),
        )?;
        let classes = model.output_shape()[0];
        let labels: Vec<usize> = (0..batch)
            .map(|_| rng.next_u64() as usize % classes)
            .collect();
        let err = gradient_error(&mut model, &x, &labels)?;
        out.push(CheckOutcome {
            name: format!("gradient {name}"),
            passed: err < FD_TOLERANCE,
            detail: format!("max relative error {err:.2e}"),
        });
    }
    Ok(out)
}

fn check_zero_sigma(rng: &mut SeededRng) -> Result<Vec<CheckOutcome>> {
    let mut base = Model::new(
        &[6],
        &[
            LayerSpec::Dense(5),
            LayerSpec::Relu,
            LayerSpec::SoftmaxOutput(3),
        ],
    )?;
    base.init_params(rng);
    let x = Tensor::new(&[8, 6], (0..48).map(|_| rng.standard_normal()).collect())?;
    let labels: Vec<usize> = (0..8).map(|i| i % 3).collect();
    let mut out = Vec::new();
    for config in [
        OptimizerConfig::rmsprop(),
        OptimizerConfig::adam(),
        OptimizerConfig::adadelta(),
    ] {
        let mut plain = base.clone();
        let mut noisy = base.clone();
        let mut plain_opt = Optimizer::new(config, &plain)?;
        let mut noisy_opt = Optimizer::langevin(config, &noisy, rng.fork("noise"))?;
        for _ in 0..50 {
            for (model, opt) in [(&mut plain, &mut plain_opt), (&mut noisy, &mut noisy_opt)] {
                let (y, cache) = model.forward(&x)?;
                let (_, dy) = softmax_cross_entropy(&y, &labels)?;
                model.backward_params(cache, &dy)?;
                opt.step(model, 1e-2, 0.0)?;
            }
        }
        let identical = plain.params().iter().zip(noisy.params()).all(|(a, b)| {
            a.value()
                .data()
                .iter()
                .zip(b.value().data())
                .all(|(u, v)| u.to_bits() == v.to_bits())
        });
        out.push(CheckOutcome {
            name: format!("zero-noise {} matches plain", config.preconditioner.name()),
            passed: identical,
            detail: if identical {
                "bit-identical after 50 steps".into()
            } else {
                "trajectories differ".into()
            },
        });
    }
    Ok(out)
}

fn check_noise(rng: &mut SeededRng) -> Result<CheckOutcome> {
    let draws = 200_000;
    let std = Tensor::full(&[draws], 0.37);
    let sample = sample_gaussian(rng, &[draws], 0.0, &std)?;
    let var = sample.data().iter().map(|v| v * v).sum::<f64>() / draws as f64;
    let rel = (var.sqrt() / 0.37 - 1.0).abs();
    Ok(CheckOutcome {
        name: "gaussian std calibration".into(),
        passed: rel < 0.01,
        detail: format!("relative std error {rel:.2e} over {draws} draws"),
    })
}

/// Gradient, zero-noise and noise-calibration checks on small models.
pub fn self_check() -> Result<Vec<CheckOutcome>> {
    let mut rng = SeededRng::new(0x5e1f);
    let mut out = check_gradients(&mut rng.fork("gradients"))?;
    out.extend(check_zero_sigma(&mut rng.fork("optimizers"))?);
    out.push(check_noise(&mut rng)?);
    Ok(out)
}
