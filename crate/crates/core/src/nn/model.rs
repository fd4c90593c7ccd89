use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::layer::{Layer, LayerCache, LayerSpec, CONV_KERNEL};

/// Initial bias of highway gates: sigmoid(−1) ≈ 0.27, so layers start close
/// to the identity.
pub const HIGHWAY_GATE_BIAS: f64 = -1.0;

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

/// A trainable tensor with its gradient buffer.
///
/// `layer_index` counts parameterized layers from the input side, starting
/// at 0. Layers without weights (activations, pooling, flatten) don't get an
/// index.
#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    layer_index: usize,
    value: Tensor,
    grad: Tensor,
    pub langevin_eligible: bool,
}

impl Parameter {
    fn new(name: String, layer_index: usize, shape: &[usize]) -> Self {
        Parameter {
            name,
            layer_index,
            value: Tensor::zeros(shape),
            grad: Tensor::zeros(shape),
            langevin_eligible: true,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.value.data_mut()
    }

    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::shape("set_value", self.value.shape(), value.shape()));
        }
        self.value = value;
        Ok(())
    }

    pub fn set_grad(&mut self, grad: Tensor) -> Result<()> {
        if grad.shape() != self.grad.shape() {
            return Err(Error::shape("set_grad", self.grad.shape(), grad.shape()));
        }
        self.grad = grad;
        Ok(())
    }

    pub(crate) fn grad_data_mut(&mut self) -> &mut [f64] {
        self.grad.data_mut()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Activations saved by [`Model::forward`] for one batch.
///
/// Consumed by [`Model::backward`]; any parameter change in between makes it
/// stale.
#[derive(Debug)]
pub struct ForwardCache {
    model_id: u64,
    version: u64,
    inputs: Vec<Tensor>,
    extras: Vec<LayerCache>,
    output_shape: Vec<usize>,
}

#[derive(Debug)]
pub struct Model {
    id: u64,
    version: u64,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    params: Vec<Parameter>,
    param_layers: usize,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            id: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
            version: self.version,
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            params: self.params.clone(),
            param_layers: self.param_layers,
        }
    }
}

impl Model {
    /// Validates that `specs` chain from `input_shape` (per sample, no batch
    /// axis) and allocates zeroed parameters.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Argument(format!(
                "bad model input shape {input_shape:?}"
            )));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut params = Vec::new();
        let mut shape = input_shape.to_vec();
        let mut param_layer = 0;
        for (i, spec) in specs.iter().enumerate() {
            let output = spec
                .output_shape(&shape)
                .map_err(|message| Error::Layer { layer: i, message })?;
            let start = params.len();
            let width = shape.first().copied().unwrap_or(0);
            let name = |suffix: &str| format!("{param_layer}.{suffix}");
            match *spec {
                LayerSpec::Dense(u) | LayerSpec::SoftmaxOutput(u) => {
                    params.push(Parameter::new(name("weight"), param_layer, &[width, u]));
                    params.push(Parameter::new(name("bias"), param_layer, &[u]));
                }
                LayerSpec::Highway(u) => {
                    params.push(Parameter::new(
                        name("transform.weight"),
                        param_layer,
                        &[u, u],
                    ));
                    params.push(Parameter::new(name("transform.bias"), param_layer, &[u]));
                    params.push(Parameter::new(name("gate.weight"), param_layer, &[u, u]));
                    params.push(Parameter::new(name("gate.bias"), param_layer, &[u]));
                }
                LayerSpec::Conv2d(c) => {
                    let cin = shape[2];
                    params.push(Parameter::new(
                        name("kernel"),
                        param_layer,
                        &[CONV_KERNEL, CONV_KERNEL, cin, c],
                    ));
                    params.push(Parameter::new(name("bias"), param_layer, &[c]));
                }
                LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::MaxPool2 | LayerSpec::Flatten => {
                }
            }
            if spec.has_params() {
                param_layer += 1;
            }
            layers.push(Layer {
                spec: *spec,
                input: std::mem::replace(&mut shape, output.clone()),
                output,
                params: start..params.len(),
            });
        }
        Ok(Model {
            id: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            input_shape: input_shape.to_vec(),
            layers,
            params,
            param_layers: param_layer,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map_or(&self.input_shape, |l| &l.output)
    }

    pub fn specs(&self) -> impl Iterator<Item = LayerSpec> + '_ {
        self.layers.iter().map(|l| l.spec)
    }

    /// Number of layers that own parameters.
    pub fn param_layer_count(&self) -> usize {
        self.param_layers
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    /// Mutable access invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [Parameter] {
        self.version += 1;
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    /// Glorot-uniform weights, zero biases, highway gate biases at
    /// [`HIGHWAY_GATE_BIAS`]. Draw order follows parameter order.
    pub fn init_params(&mut self, rng: &mut SeededRng) {
        self.version += 1;
        for layer in &self.layers {
            let params = &mut self.params[layer.params.clone()];
            for p in params.iter_mut() {
                p.grad.fill(0.0);
            }
            match layer.spec {
                LayerSpec::Dense(_) | LayerSpec::SoftmaxOutput(_) => {
                    glorot(&mut params[0], rng);
                    params[1].value.fill(0.0);
                }
                LayerSpec::Highway(_) => {
                    glorot(&mut params[0], rng);
                    params[1].value.fill(0.0);
                    glorot(&mut params[2], rng);
                    params[3].value.fill(HIGHWAY_GATE_BIAS);
                }
                LayerSpec::Conv2d(_) => {
                    glorot(&mut params[0], rng);
                    params[1].value.fill(0.0);
                }
                _ => {}
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![x.shape().first().copied().unwrap_or(1)];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::Layer {
                layer: 0,
                message: format!(
                    "input batch has shape {:?}, expected {:?}",
                    x.shape(),
                    expected
                ),
            });
        }
        Ok(())
    }

    /// Runs the batch through every layer, keeping what backward needs.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut extras = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let (next, extra) = layer.forward(&self.params[layer.params.clone()], &current)?;
            inputs.push(std::mem::replace(&mut current, next));
            extras.push(extra);
        }
        let cache = ForwardCache {
            model_id: self.id,
            version: self.version,
            inputs,
            extras,
            output_shape: current.shape().to_vec(),
        };
        Ok((current, cache))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut current = x.clone();
        for layer in &self.layers {
            current = layer
                .forward(&self.params[layer.params.clone()], &current)?
                .0;
        }
        Ok(current)
    }

    /// Fills every parameter gradient from `dl_dy` and returns dL/dx.
    ///
    /// `dl_dy` is the gradient of the batch-mean loss, so the parameter
    /// gradients are batch means as well.
    pub fn backward(&mut self, cache: ForwardCache, dl_dy: &Tensor) -> Result<Tensor> {
        let dx = self.backward_impl(cache, dl_dy, true)?;
        Ok(dx.unwrap_or_else(|| dl_dy.clone()))
    }

    /// Like [`Model::backward`] but skips the input gradient of the first layer.
    pub fn backward_params(&mut self, cache: ForwardCache, dl_dy: &Tensor) -> Result<()> {
        self.backward_impl(cache, dl_dy, false).map(|_| ())
    }

    fn backward_impl(
        &mut self,
        cache: ForwardCache,
        dl_dy: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        if cache.model_id != self.id || cache.version != self.version {
            return Err(Error::Contract(
                "forward cache is stale: it belongs to another model or parameters changed since forward".into(),
            ));
        }
        if dl_dy.shape() != cache.output_shape.as_slice() {
            return Err(Error::shape("backward", &cache.output_shape, dl_dy.shape()));
        }
        if self.layers.is_empty() {
            return Ok(Some(dl_dy.clone()));
        }
        let mut grad = dl_dy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let want_dx = i > 0 || need_input_grad;
            let params = &mut self.params[layer.params.clone()];
            match layer.backward(params, &cache.inputs[i], &cache.extras[i], &grad, want_dx)? {
                Some(dx) => grad = dx,
                None => return Ok(None),
            }
        }
        Ok(Some(grad))
    }

    /// Euclidean norm of the gradient of each parameterized layer, input side
    /// first. Useful for spotting vanishing gradients in deep stacks.
    pub fn grad_norms_per_layer(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.param_layers];
        for p in &self.params {
            sums[p.layer_index] += p.grad.data().iter().map(|g| g * g).sum::<f64>();
        }
        sums.into_iter().map(f64::sqrt).collect()
    }

    /// Flat text dump, one parameter per line: `name<TAB>shape<TAB>values`.
    pub fn dump_params(&self) -> String {
        let mut out = String::new();
        for p in &self.params {
            let shape: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
            let values: Vec<String> = p.value.data().iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{}\t{}\t{}", p.name, shape.join("x"), values.join(" "));
        }
        out
    }

    /// Restores values written by [`Model::dump_params`]. Names and shapes
    /// must match this model exactly.
    pub fn load_params(&mut self, dump: &str) -> Result<()> {
        let lines: Vec<&str> = dump.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != self.params.len() {
            return Err(Error::Argument(format!(
                "dump has {} parameters, model has {}",
                lines.len(),
                self.params.len()
            )));
        }
        let mut restored = Vec::with_capacity(lines.len());
        for (line, p) in lines.iter().zip(&self.params) {
            let mut fields = line.split('\t');
            let (name, shape, values) = match (fields.next(), fields.next(), fields.next()) {
                (Some(n), Some(s), Some(v)) => (n, s, v),
                _ => {
                    return Err(Error::Argument(format!(
                        "malformed dump line for {}",
                        p.name
                    )))
                }
            };
            if name != p.name {
                return Err(Error::Argument(format!(
                    "expected parameter {}, found {name}",
                    p.name
                )));
            }
            let shape: Vec<usize> = shape
                .split('x')
                .map(|d| {
                    d.parse()
                        .map_err(|_| Error::Argument(format!("bad shape for {name}")))
                })
                .collect::<Result<_>>()?;
            let values: Vec<f64> = values
                .split(' ')
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::Argument(format!("bad value for {name}")))
                })
                .collect::<Result<_>>()?;
            let t = Tensor::new(&shape, values)?;
            if t.shape() != p.value.shape() {
                return Err(Error::shape("load_params", p.value.shape(), t.shape()));
            }
            restored.push(t);
        }
        for (p, t) in self.params_mut().iter_mut().zip(restored) {
            p.value = t;
        }
        Ok(())
    }

    pub fn save_params(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.dump_params()).map_err(|e| Error::io(path, e))
    }
}

fn glorot(p: &mut Parameter, rng: &mut SeededRng) {
    let shape = p.value.shape();
    let (fan_in, fan_out) = match shape {
        [i, o] => (*i, *o),
        [kh, kw, cin, cout] => (kh * kw * cin, kh * kw * cout),
        _ => unreachable!("glorot on shape {shape:?}"),
    };
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in p.value.data_mut() {
        *v = rng.uniform(-limit, limit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp(width: usize, hidden: usize, classes: usize) -> Model {
        let mut specs = vec![];
        for _ in 0..hidden {
            specs.push(LayerSpec::Dense(width));
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::SoftmaxOutput(classes));
        Model::new(&[width], &specs).unwrap()
    }

    #[test]
    fn empty_model_is_identity() {
        let mut model = Model::new(&[3], &[]).unwrap();
        let x = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        let (y, cache) = model.forward(&x).unwrap();
        assert_eq!(y, x);
        let dx = model.backward(cache, &y).unwrap();
        assert_eq!(dx, x);
    }

    #[test]
    fn identity_dense_relu_passes_nonnegative_batch() {
        let mut model = Model::new(&[3], &[LayerSpec::Dense(3), LayerSpec::Relu]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        model.params_mut()[0]
            .set_value(Tensor::new(&[3, 3], eye).unwrap())
            .unwrap();
        let x = Tensor::new(&[2, 3], vec![0.0, 1.5, 2.0, 3.0, 0.25, 7.0]).unwrap();
        assert_eq!(model.predict(&x).unwrap(), x);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let err = Model::new(
            &[10],
            &[LayerSpec::Dense(8), LayerSpec::Relu, LayerSpec::Highway(4)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Layer { layer: 2, .. }), "{err}");

        let model = mlp(4, 1, 2);
        let bad = Tensor::zeros(&[2, 5]);
        assert!(matches!(
            model.forward(&bad),
            Err(Error::Layer { layer: 0, .. })
        ));
    }

    #[test]
    fn layer_indices_count_parameterized_layers() {
        let model = Model::new(
            &[8, 8, 1],
            &[
                LayerSpec::Conv2d(2),
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Dense(4),
                LayerSpec::Relu,
                LayerSpec::SoftmaxOutput(3),
            ],
        )
        .unwrap();
        let idx: Vec<usize> = model.params().iter().map(Parameter::layer_index).collect();
        assert_eq!(idx, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(model.param_layer_count(), 3);
        assert_eq!(model.output_shape(), &[3]);
    }

    #[test]
    fn thirty_hidden_layers_of_64() {
        let mut specs = vec![LayerSpec::Flatten];
        for _ in 0..30 {
            specs.extend([LayerSpec::Dense(64), LayerSpec::Relu]);
        }
        specs.push(LayerSpec::SoftmaxOutput(10));
        let model = Model::new(&[28, 28, 1], &specs).unwrap();
        assert_eq!(model.param_layer_count(), 31);
        assert_eq!(
            model.param_count(),
            784 * 64 + 64 + 29 * (64 * 64 + 64) + 64 * 10 + 10
        );
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let mut a = mlp(64, 2, 10);
        let mut b = mlp(64, 2, 10);
        a.init_params(&mut SeededRng::new(5));
        b.init_params(&mut SeededRng::new(5));
        assert_eq!(a.dump_params(), b.dump_params());

        let bound = (6.0f64 / 128.0).sqrt();
        let w = a.params()[0].value();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        // The draw actually spreads across the interval.
        assert!(w.max_abs() > 0.9 * bound);
    }

    #[test]
    fn biases_zero_except_highway_gates() {
        let mut model = Model::new(
            &[6],
            &[
                LayerSpec::Dense(6),
                LayerSpec::Relu,
                LayerSpec::Highway(6),
                LayerSpec::SoftmaxOutput(3),
            ],
        )
        .unwrap();
        model.init_params(&mut SeededRng::new(1));
        for p in model.params() {
            if p.name().ends_with("gate.bias") {
                assert!(p.value().data().iter().all(|&v| v == HIGHWAY_GATE_BIAS));
            } else if p.name().ends_with("bias") {
                assert!(p.value().data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_deep_grads() {
        let mut model = mlp(5, 4, 3);
        let x = Tensor::full(&[4, 5], 0.3);
        let (y, cache) = model.forward(&x).unwrap();
        let dy = Tensor::full(y.shape(), 0.1);
        model.backward(cache, &dy).unwrap();
        let norms = model.grad_norms_per_layer();
        // Only the output bias sees a gradient.
        assert!(norms[..4].iter().all(|&n| n == 0.0));
        assert!(norms[4] > 0.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut model = mlp(3, 1, 2);
        model.init_params(&mut SeededRng::new(2));
        let x = Tensor::full(&[1, 3], 0.5);
        let (y, cache) = model.forward(&x).unwrap();
        model.params_mut()[0].values_mut()[0] += 1.0;
        assert!(matches!(model.backward(cache, &y), Err(Error::Contract(_))));

        let other = model.clone();
        let (y, cache) = other.forward(&x).unwrap();
        assert!(matches!(model.backward(cache, &y), Err(Error::Contract(_))));

        let (y, cache) = model.forward(&x).unwrap();
        let wrong = Tensor::zeros(&[1, y.len() + 1]);
        assert!(matches!(
            model.backward(cache, &wrong),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn dump_round_trip() {
        let mut a = mlp(4, 2, 3);
        a.init_params(&mut SeededRng::new(11));
        let mut b = mlp(4, 2, 3);
        b.load_params(&a.dump_params()).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            assert_eq!(p.value().data(), q.value().data());
        }
        let mut c = mlp(4, 3, 3);
        assert!(c.load_params(&a.dump_params()).is_err());
    }
}
