use langevin::nn::{LayerSpec, Model};
use langevin::optim::{build_layer_mask, Optimizer, OptimizerConfig, Preconditioner};
use langevin::{SeededRng, Tensor};

/// Element-by-element restatement of the three update rules.
#[derive(Clone)]
struct Scalar {
    theta: f64,
    ms: f64,
    m: f64,
    d: f64,
    n: i32,
}

impl Scalar {
    fn step(&mut self, g: f64, gamma: f64, cfg: &OptimizerConfig, noise: f64) {
        let lambda = cfg.lambda;
        let (p, dir) = match cfg.preconditioner {
            Preconditioner::RmsProp { alpha } => {
                self.ms = alpha * self.ms + (1.0 - alpha) * g * g;
                (1.0 / (lambda + self.ms.sqrt()), g)
            }
            Preconditioner::Adam { beta1, beta2 } => {
                self.n += 1;
                self.m = beta1 * self.m + (1.0 - beta1) * g;
                self.ms = beta2 * self.ms + (1.0 - beta2) * g * g;
                let m_hat = self.m / (1.0 - beta1.powi(self.n));
                let ms_hat = self.ms / (1.0 - beta2.powi(self.n));
                (1.0 / (lambda + ms_hat.sqrt()), m_hat)
            }
            Preconditioner::Adadelta { beta1, .. } => {
                self.ms = beta1 * self.ms + (1.0 - beta1) * g * g;
                ((self.d + lambda) / (lambda + self.ms.sqrt()), g)
            }
            Preconditioner::Identity => (1.0, g),
        };
        let old = self.theta;
        self.theta = old - gamma * p * dir + cfg.sigma * gamma.sqrt() * p.sqrt() * noise;
        if let Preconditioner::Adadelta { beta2, .. } = cfg.preconditioner {
            let delta = self.theta - old;
            self.d = beta2 * self.d + (1.0 - beta2) * delta * delta;
        }
    }
}

fn scripted_grad(step: usize, i: usize) -> f64 {
    let t = (step * 7 + i * 13) as f64;
    (0.37 * t).sin() * (1.0 + 0.5 * (0.11 * t).cos()) * if i % 4 == 3 { 1e-3 } else { 1.0 }
}

fn run(cfg: OptimizerConfig, noise: Option<(u64, f64)>, eligible_weight: bool, steps: usize) {
    let mut model = Model::new(&[2], &[LayerSpec::Dense(3)]).unwrap();
    model.init_params(&mut SeededRng::new(4));
    model.params_mut()[0].langevin_eligible = eligible_weight;
    let cfg = cfg.with_sigma(noise.map_or(0.0, |(_, s)| s));
    let mut opt = match noise {
        Some((seed, _)) => Optimizer::langevin(cfg, &model, SeededRng::new(seed)).unwrap(),
        None => Optimizer::new(cfg, &model).unwrap(),
    };
    let mut oracle_rng = noise.map(|(seed, _)| SeededRng::new(seed));
    let mut scalars: Vec<Vec<Scalar>> = model
        .params()
        .iter()
        .map(|p| {
            p.value()
                .data()
                .iter()
                .map(|&theta| Scalar {
                    theta,
                    ms: 0.0,
                    m: 0.0,
                    d: 0.0,
                    n: 0,
                })
                .collect()
        })
        .collect();
    let gamma = 0.05;
    for step in 0..steps {
        let mut offset = 0;
        for (pi, p) in model.params_mut().iter_mut().enumerate() {
            let shape = p.value().shape().to_vec();
            let g: Vec<f64> = (0..p.len())
                .map(|i| scripted_grad(step, offset + i))
                .collect();
            for (s, &gi) in scalars[pi].iter_mut().zip(&g) {
                let z = oracle_rng.as_mut().map_or(0.0, SeededRng::standard_normal);
                let masked = pi == 0 && !eligible_weight;
                s.step(gi, gamma, &cfg, if masked { 0.0 } else { z });
            }
            offset += p.len();
            p.set_grad(Tensor::new(&shape, g).unwrap()).unwrap();
        }
        opt.step(&mut model, gamma, cfg.sigma).unwrap();
        for (p, s) in model.params().iter().zip(&scalars) {
            for (a, b) in p.value().data().iter().zip(s) {
                let tol = 1e-12 * (1.0 + b.theta.abs());
                assert!(
                    (a - b.theta).abs() <= tol,
                    "{} step {step}: {a} vs oracle {}",
                    cfg.preconditioner.name(),
                    b.theta
                );
            }
        }
    }
}

fn all_rules() -> [OptimizerConfig; 4] {
    [
        OptimizerConfig::rmsprop(),
        OptimizerConfig::adam(),
        OptimizerConfig::adadelta(),
        OptimizerConfig::identity(),
    ]
}

#[test]
fn plain_trajectories_match_scalar_oracle() {
    for cfg in all_rules() {
        run(cfg, None, true, 60);
    }
}

#[test]
fn langevin_trajectories_match_scalar_oracle() {
    for cfg in all_rules() {
        run(cfg, Some((77, 0.3)), true, 60);
    }
}

#[test]
fn masked_parameters_skip_noise_but_stream_advances() {
    for cfg in all_rules() {
        run(cfg, Some((78, 0.3)), false, 40);
    }
}

#[test]
fn mask_fraction_picks_leading_layers_of_deep_net() {
    let mut specs = vec![LayerSpec::Flatten];
    for _ in 0..30 {
        specs.extend([LayerSpec::Dense(4), LayerSpec::Relu]);
    }
    specs.push(LayerSpec::SoftmaxOutput(10));
    let model = Model::new(&[2, 2, 1], &specs).unwrap();
    assert_eq!(model.param_layer_count(), 31);
    for (p, layers) in [(0.3, 10), (0.6, 19), (0.9, 28), (1.0, 31), (0.0, 0)] {
        let mask = build_layer_mask(&model, p).unwrap();
        assert_eq!(mask.noisy_layers(), layers, "p = {p}");
        for (param, &e) in model.params().iter().zip(mask.eligible()) {
            assert_eq!(e, param.layer_index() < layers);
        }
    }
}
