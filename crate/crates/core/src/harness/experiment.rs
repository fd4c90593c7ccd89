use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{batches, load_cifar10, load_idx, synthetic_blobs, Dataset};
use crate::error::{Error, Result};
use crate::nn::{correct_count, softmax_cross_entropy, Model};
use crate::optim::{build_layer_mask, LangevinMask, Optimizer};
use crate::rng::SeededRng;

use super::config::{ArmConfig, DataConfig, DataSource, ExperimentConfig};

const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Ok,
    /// Training stopped at this epoch; the message says why.
    Failed(String),
}

/// Metrics for one arm after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub arm: String,
    pub seed: u64,
    pub epoch: usize,
    /// Mean objective over the epoch's batches, weighted by batch size.
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
    pub status: RunStatus,
}

impl MetricsRecord {
    pub fn failed(&self) -> bool {
        matches!(self.status, RunStatus::Failed(_))
    }
}

fn mnist_file(dir: &Path, stem: &str, kind: &str) -> std::path::PathBuf {
    let dashed = dir.join(format!("{stem}-{kind}-ubyte"));
    let dotted = dir.join(format!("{stem}.{kind}-ubyte"));
    if !dashed.exists() && dotted.exists() {
        dotted
    } else {
        dashed
    }
}

/// Loads `(train, test)` for a data config, applying the size limits.
pub fn load_data(config: &DataConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match &config.source {
        DataSource::Mnist { dir } => (
            load_idx(
                &mnist_file(dir, "train-images", "idx3"),
                &mnist_file(dir, "train-labels", "idx1"),
            )?,
            load_idx(
                &mnist_file(dir, "t10k-images", "idx3"),
                &mnist_file(dir, "t10k-labels", "idx1"),
            )?,
        ),
        DataSource::Cifar10 { dir } => {
            let train: Vec<_> = (1..=5)
                .map(|k| dir.join(format!("data_batch_{k}.bin")))
                .collect();
            (
                load_cifar10(&train)?,
                load_cifar10(&[dir.join("test_batch.bin")])?,
            )
        }
        &DataSource::Blobs {
            classes,
            per_class,
            test_per_class,
            dims,
            seed,
        } => {
            // One draw so train and test share class centers.
            let all = synthetic_blobs(
                classes,
                per_class + test_per_class,
                dims,
                &mut SeededRng::new(seed),
            )?;
            let block = per_class + test_per_class;
            let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
            for c in 0..classes {
                train_idx.extend(c * block..c * block + per_class);
                test_idx.extend(c * block + per_class..(c + 1) * block);
            }
            let split = |idx: &[usize]| {
                let (images, labels) = all.gather(idx);
                Dataset::new(images, labels, classes)
            };
            (split(&train_idx)?, split(&test_idx)?)
        }
    };
    let limit = |ds: Dataset, n: Option<usize>| match n {
        Some(n) => ds.truncated(n),
        None => ds,
    };
    Ok((
        limit(train, config.train_limit),
        limit(test, config.test_limit),
    ))
}

/// Mean softmax cross-entropy and accuracy over the whole dataset.
///
/// Reads parameters only and draws no randomness.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::Argument(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, labels) = dataset.gather(chunk);
        let y = model.predict(&x)?;
        let (loss, _) = softmax_cross_entropy(&y, &labels)?;
        loss_sum += loss * chunk.len() as f64;
        correct += correct_count(y.data(), y.shape()[1], &labels);
    }
    let n = dataset.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// The model every arm of `config` starts from under `seed`.
pub fn initial_model(config: &ExperimentConfig, input_shape: &[usize], seed: u64) -> Result<Model> {
    let mut model = Model::new(input_shape, &config.layers)?;
    model.init_params(&mut SeededRng::new(seed).fork("init"));
    Ok(model)
}

struct ArmRun<'a> {
    config: &'a ExperimentConfig,
    arm: &'a ArmConfig,
    seed: u64,
    train: &'a Dataset,
    test: &'a Dataset,
}

impl ArmRun<'_> {
    fn record(
        &self,
        epoch: usize,
        train_loss: f64,
        eval: (f64, f64),
        started: Instant,
    ) -> MetricsRecord {
        MetricsRecord {
            arm: self.arm.name.clone(),
            seed: self.seed,
            epoch,
            train_loss,
            test_loss: eval.0,
            test_accuracy: eval.1,
            wall_seconds: started.elapsed().as_secs_f64(),
            status: RunStatus::Ok,
        }
    }

    fn train_epoch(
        &self,
        model: &mut Model,
        opt: &mut Optimizer,
        shuffle: &SeededRng,
        epoch: usize,
    ) -> Result<f64> {
        let (gamma, sigma) = self.arm.schedule.at_epoch(epoch)?;
        let mut loss_sum = 0.0;
        for batch in batches(
            self.train,
            self.config.batch_size,
            &mut shuffle.fork_indexed("epoch", epoch as u64),
        )? {
            let (y, cache) = model.forward(&batch.images)?;
            let (loss, dy) = softmax_cross_entropy(&y, &batch.labels)?;
            model.backward_params(cache, &dy)?;
            opt.step(model, gamma, sigma)?;
            loss_sum += loss * batch.labels.len() as f64;
        }
        let train_loss = loss_sum / self.train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric {
                context: format!("train loss at epoch {epoch}"),
            });
        }
        Ok(train_loss)
    }

    fn run(&self, on_record: &(dyn Fn(&MetricsRecord) + Sync)) -> Result<Vec<MetricsRecord>> {
        let root = SeededRng::new(self.seed);
        let mut model = initial_model(self.config, self.train.image_shape(), self.seed)?;
        let shuffle = root.fork("shuffle");
        let mut opt = if self.arm.langevin {
            let mask = match self.arm.layer_fraction {
                Some(p) => build_layer_mask(&model, p)?,
                None => LangevinMask::all(&model),
            };
            mask.apply(&mut model)?;
            Optimizer::langevin(self.arm.optimizer, &model, root.fork("noise"))?
        } else {
            Optimizer::new(self.arm.optimizer, &model)?
        };

        let started = Instant::now();
        let mut records = Vec::with_capacity(self.config.epochs);
        for epoch in 1..=self.config.epochs {
            let outcome = self
                .train_epoch(&mut model, &mut opt, &shuffle, epoch)
                .and_then(|loss| Ok((loss, evaluate(&model, self.test)?)));
            let record = match outcome {
                Ok((loss, eval)) => self.record(epoch, loss, eval, started),
                Err(e) => MetricsRecord {
                    status: RunStatus::Failed(e.to_string()),
                    ..self.record(epoch, f64::NAN, (f64::NAN, f64::NAN), started)
                },
            };
            on_record(&record);
            let stop = record.failed();
            records.push(record);
            if stop {
                break;
            }
        }
        Ok(records)
    }
}

/// Runs every (seed, arm) pair; see [`run_experiment_with`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    run_experiment_with(config, &|_| {})
}

/// Trains every arm under every seed and evaluates after each epoch.
///
/// Arms under one seed share initial weights, batch order and (for the
/// Langevin arms) the noise stream. Pairs run in parallel; the records come
/// back grouped by seed, then arm in config order, then epoch. An arm that
/// hits a numeric failure gets a final failed record and stops; the others
/// carry on. `on_record` sees each record as it is produced.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    on_record: &(dyn Fn(&MetricsRecord) + Sync),
) -> Result<Vec<MetricsRecord>> {
    config.validate()?;
    let (train, test) = load_data(&config.data)?;
    run_on_data(config, &train, &test, on_record)
}

/// Like [`run_experiment_with`] on already loaded datasets.
pub fn run_on_data(
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    on_record: &(dyn Fn(&MetricsRecord) + Sync),
) -> Result<Vec<MetricsRecord>> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("empty train or test set".into()));
    }
    Model::new(train.image_shape(), &config.layers)
        .map_err(|e| Error::Config(format!("model: {e}")))?;
    let jobs: Vec<(u64, &ArmConfig)> = config
        .seeds
        .iter()
        .flat_map(|&s| config.arms.iter().map(move |a| (s, a)))
        .collect();
    let results: Vec<Result<Vec<MetricsRecord>>> = jobs
        .par_iter()
        .map(|&(seed, arm)| {
            ArmRun {
                config,
                arm,
                seed,
                train,
                test,
            }
            .run(on_record)
        })
        .collect();
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    Ok(records)
}

/// Final-epoch test accuracy of one arm, per seed and averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    pub failed: bool,
}

/// Summaries in order of first appearance. Failed runs count as NaN.
pub fn summarize(records: &[MetricsRecord]) -> Vec<ArmSummary> {
    let mut out: Vec<ArmSummary> = Vec::new();
    for r in records {
        let idx = match out.iter().position(|s| s.arm == r.arm) {
            Some(i) => i,
            None => {
                out.push(ArmSummary {
                    arm: r.arm.clone(),
                    per_seed: Vec::new(),
                    mean: f64::NAN,
                    failed: false,
                });
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        s.failed |= r.failed();
        match s.per_seed.iter_mut().find(|(seed, _)| *seed == r.seed) {
            Some(entry) => entry.1 = r.test_accuracy,
            None => s.per_seed.push((r.seed, r.test_accuracy)),
        }
    }
    for s in &mut out {
        s.mean = s.per_seed.iter().map(|(_, a)| a).sum::<f64>() / s.per_seed.len() as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{DataConfig, DataSource};
    use crate::harness::Schedule;
    use crate::nn::LayerSpec;
    use crate::optim::OptimizerConfig;

    fn blobs_config(arms: Vec<ArmConfig>, epochs: usize) -> ExperimentConfig {
        ExperimentConfig {
            name: "t".into(),
            seeds: vec![3],
            batch_size: 16,
            epochs,
            data: DataConfig {
                source: DataSource::Blobs {
                    classes: 3,
                    per_class: 40,
                    test_per_class: 20,
                    dims: 6,
                    seed: 1,
                },
                train_limit: None,
                test_limit: None,
            },
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense(8),
                LayerSpec::Relu,
                LayerSpec::SoftmaxOutput(3),
            ],
            arms,
        }
    }

    fn arm(name: &str, langevin: bool, sigma: f64) -> ArmConfig {
        ArmConfig {
            name: name.into(),
            optimizer: OptimizerConfig::adam(),
            langevin,
            layer_fraction: None,
            schedule: Schedule::constant(1e-2, sigma, 10).unwrap(),
        }
    }

    #[test]
    fn one_record_per_epoch() {
        let records = run_experiment(&blobs_config(vec![arm("a", false, 0.0)], 3)).unwrap();
        let epochs: Vec<usize> = records.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![1, 2, 3]);
        assert!(records.iter().all(|r| r.status == RunStatus::Ok));
    }

    #[test]
    fn zero_sigma_langevin_matches_plain() {
        let cfg = blobs_config(vec![arm("plain", false, 0.0), arm("lang", true, 0.0)], 3);
        let records = run_experiment(&cfg).unwrap();
        let (a, b) = records.split_at(3);
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.test_accuracy.to_bits(), y.test_accuracy.to_bits());
        }
    }

    #[test]
    fn blobs_are_learnable() {
        let records = run_experiment(&blobs_config(vec![arm("a", false, 0.0)], 10)).unwrap();
        assert!(records.last().unwrap().test_accuracy > 0.9, "{records:?}");
    }

    #[test]
    fn evaluate_is_pure_and_uniform_loss_is_ln_c() {
        let cfg = blobs_config(vec![arm("a", false, 0.0)], 1);
        let (_, test) = load_data(&cfg.data).unwrap();
        let model = Model::new(test.image_shape(), &cfg.layers).unwrap();
        let first = evaluate(&model, &test).unwrap();
        assert_eq!(first, evaluate(&model, &test).unwrap());
        assert!((first.0 - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn summary_means() {
        let rec = |arm: &str, seed, epoch, acc| MetricsRecord {
            arm: arm.into(),
            seed,
            epoch,
            train_loss: 0.0,
            test_loss: 0.0,
            test_accuracy: acc,
            wall_seconds: 0.0,
            status: RunStatus::Ok,
        };
        let s = summarize(&[
            rec("a", 1, 1, 0.1),
            rec("a", 1, 2, 0.5),
            rec("a", 2, 2, 0.7),
            rec("b", 1, 1, 0.2),
        ]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].per_seed, vec![(1, 0.5), (2, 0.7)]);
        assert!((s[0].mean - 0.6).abs() < 1e-15);
        assert_eq!(s[1].mean, 0.2);
    }
}
