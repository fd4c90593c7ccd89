//! Experiment files in TOML.
//!
//! ```toml
//! name = "deep-mnist"
//! seeds = [1, 2, 3]          # or `seed = 1`
//! batch_size = 512
//! epochs = 15
//!
//! [data]
//! source = "mnist"           # mnist | cifar10 | blobs
//! dir = "data/mnist"         # optional, relative to this file
//! train_limit = 10000        # optional
//!
//! [model]
//! layers = ["flatten", "dense 64 + relu x20", "output 10"]
//!
//! [[schedule]]               # default for every arm
//! until = 12
//! lr = 1e-3
//! sigma = 5e-4
//!
//! [[arms]]
//! name = "l-adam"
//! optimizer = "adam"         # rmsprop | adam | adadelta | sgd
//! langevin = true
//! layer_fraction = 0.3       # optional, implies langevin
//! ```
//!
//! Arms may also set `lambda`, `alpha`, `beta1`, `beta2` and their own
//! `schedule` list. A layer entry `a + b xN` repeats the group `a, b` N times.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::nn::LayerSpec;
use crate::optim::{OptimizerConfig, Preconditioner};

use super::schedule::{Phase, Schedule};

/// Environment variable naming the default dataset root.
pub const DATA_DIR_ENV: &str = "LANGEVIN_DATA_DIR";
pub const MNIST_SUBDIR: &str = "mnist";
pub const CIFAR_SUBDIR: &str = "cifar-10-batches-bin";

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Mnist {
        dir: PathBuf,
    },
    Cifar10 {
        dir: PathBuf,
    },
    /// Gaussian clusters from [`crate::data::synthetic_blobs`].
    Blobs {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        dims: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmConfig {
    pub name: String,
    pub optimizer: OptimizerConfig,
    pub langevin: bool,
    /// Fraction of parameterized layers, from the input side, that get noise.
    /// `None` means every layer.
    pub layer_fraction: Option<f64>,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub data: DataConfig,
    pub layers: Vec<LayerSpec>,
    pub arms: Vec<ArmConfig>,
}

/// Arm names become file names, so they are limited to `[A-Za-z0-9._-]`
/// and may not start with a dot.
pub fn validate_arm_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "arm name `{name}` must use only letters, digits, '.', '_' or '-' and not start with '.'"
        )))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    /// Parses a config; relative data directories resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.resolve(base_dir)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        if self.arms.is_empty() {
            return Err(Error::Config("no arms".into()));
        }
        for (i, arm) in self.arms.iter().enumerate() {
            validate_arm_name(&arm.name)?;
            if self.arms[..i].iter().any(|a| a.name == arm.name) {
                return Err(Error::Config(format!("duplicate arm `{}`", arm.name)));
            }
            arm.optimizer
                .validate()
                .map_err(|e| Error::Config(format!("arm `{}`: {e}", arm.name)))?;
            arm.schedule
                .covers(self.epochs)
                .map_err(|e| Error::Config(format!("arm `{}`: {e}", arm.name)))?;
            if let Some(p) = arm.layer_fraction {
                if !arm.langevin {
                    return Err(Error::Config(format!(
                        "arm `{}`: layer_fraction needs a Langevin arm",
                        arm.name
                    )));
                }
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Config(format!(
                        "arm `{}`: layer_fraction must lie in [0, 1], got {p}",
                        arm.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Keeps only the named arms, in config order.
    pub fn select_arms(&mut self, names: &[&str]) -> Result<()> {
        for n in names {
            if !self.arms.iter().any(|a| a.name == *n) {
                return Err(Error::Config(format!("no arm named `{n}`")));
            }
        }
        self.arms.retain(|a| names.contains(&a.name.as_str()));
        Ok(())
    }
}

/// Expands `"dense 64 + relu x3"` style entries into layer specs.
pub fn parse_layers(entries: &[String]) -> Result<Vec<LayerSpec>> {
    let mut specs = Vec::new();
    for entry in entries {
        let entry = entry.trim();
        let (group, repeat) = match entry.rsplit_once(char::is_whitespace) {
            Some((head, tail)) if tail.len() > 1 && tail.starts_with(['x', 'X']) => {
                let n = tail[1..].parse::<usize>().map_err(|_| {
                    Error::Config(format!("layer entry `{entry}`: bad repeat `{tail}`"))
                })?;
                (head, n)
            }
            _ => (entry, 1),
        };
        if repeat == 0 {
            return Err(Error::Config(format!(
                "layer entry `{entry}` repeats zero times"
            )));
        }
        let group: Vec<LayerSpec> = group
            .split('+')
            .map(|s| s.trim().parse())
            .collect::<Result<_>>()?;
        for _ in 0..repeat {
            specs.extend_from_slice(&group);
        }
    }
    Ok(specs)
}

fn default_data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    seed: Option<u64>,
    seeds: Option<Vec<u64>>,
    batch_size: usize,
    epochs: usize,
    data: RawData,
    model: RawModel,
    schedule: Option<Vec<Phase>>,
    arms: Vec<RawArm>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    source: String,
    dir: Option<PathBuf>,
    train_limit: Option<usize>,
    test_limit: Option<usize>,
    classes: Option<usize>,
    per_class: Option<usize>,
    test_per_class: Option<usize>,
    dims: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    layers: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArm {
    name: String,
    optimizer: String,
    langevin: Option<bool>,
    layer_fraction: Option<f64>,
    lambda: Option<f64>,
    alpha: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    schedule: Option<Vec<Phase>>,
}

impl RawData {
    fn resolve(self, base_dir: &Path) -> Result<DataConfig> {
        let dir = |subdir: &str| match &self.dir {
            Some(d) if d.is_relative() => base_dir.join(d),
            Some(d) => d.clone(),
            None => default_data_root().join(subdir),
        };
        let blob_only = [self.classes, self.per_class, self.test_per_class, self.dims]
            .iter()
            .any(Option::is_some)
            || self.seed.is_some();
        let source = match self.source.to_ascii_lowercase().as_str() {
            "mnist" => DataSource::Mnist {
                dir: dir(MNIST_SUBDIR),
            },
            "cifar10" | "cifar-10" => DataSource::Cifar10 {
                dir: dir(CIFAR_SUBDIR),
            },
            "blobs" => {
                if self.dir.is_some() {
                    return Err(Error::Config("blobs data takes no dir".into()));
                }
                let per_class = self.per_class.unwrap_or(100);
                DataSource::Blobs {
                    classes: self.classes.unwrap_or(4),
                    per_class,
                    test_per_class: self.test_per_class.unwrap_or(per_class),
                    dims: self.dims.unwrap_or(8),
                    seed: self.seed.unwrap_or(0),
                }
            }
            other => return Err(Error::Config(format!("unknown data source `{other}`"))),
        };
        if blob_only && !matches!(source, DataSource::Blobs { .. }) {
            return Err(Error::Config(
                "classes, per_class, test_per_class, dims and seed apply to blobs only".into(),
            ));
        }
        Ok(DataConfig {
            source,
            train_limit: self.train_limit,
            test_limit: self.test_limit,
        })
    }
}

impl RawArm {
    fn resolve(self, default_schedule: Option<&Schedule>) -> Result<ArmConfig> {
        let context = |e: Error| Error::Config(format!("arm `{}`: {e}", self.name));
        let mut optimizer = OptimizerConfig::by_name(&self.optimizer).map_err(context)?;
        if let Some(lambda) = self.lambda {
            optimizer.lambda = lambda;
        }
        match &mut optimizer.preconditioner {
            Preconditioner::RmsProp { alpha } => {
                if self.beta1.is_some() || self.beta2.is_some() {
                    return Err(context(Error::Config(
                        "rmsprop takes alpha, not betas".into(),
                    )));
                }
                *alpha = self.alpha.unwrap_or(*alpha);
            }
            Preconditioner::Adam { beta1, beta2 } | Preconditioner::Adadelta { beta1, beta2 } => {
                if self.alpha.is_some() {
                    return Err(context(Error::Config(
                        "alpha applies to rmsprop only".into(),
                    )));
                }
                *beta1 = self.beta1.unwrap_or(*beta1);
                *beta2 = self.beta2.unwrap_or(*beta2);
            }
            Preconditioner::Identity => {
                if self.alpha.is_some() || self.beta1.is_some() || self.beta2.is_some() {
                    return Err(context(Error::Config("sgd has no decay rates".into())));
                }
            }
        }
        let schedule = match self.schedule {
            Some(phases) => Schedule::new(phases).map_err(context)?,
            None => default_schedule
                .cloned()
                .ok_or_else(|| context(Error::Config("no schedule given".into())))?,
        };
        let langevin = self.langevin.unwrap_or(self.layer_fraction.is_some());
        Ok(ArmConfig {
            name: self.name,
            optimizer,
            langevin,
            layer_fraction: self.layer_fraction,
            schedule,
        })
    }
}

impl RawConfig {
    fn resolve(self, base_dir: &Path) -> Result<ExperimentConfig> {
        let seeds = match (self.seed, self.seeds) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either seed or seeds, not both".into()))
            }
            (Some(s), None) => vec![s],
            (None, Some(s)) => s,
            (None, None) => vec![0],
        };
        let default_schedule = self.schedule.map(Schedule::new).transpose()?;
        let arms = self
            .arms
            .into_iter()
            .map(|a| a.resolve(default_schedule.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let config = ExperimentConfig {
            name: self.name.unwrap_or_else(|| "experiment".into()),
            seeds,
            batch_size: self.batch_size,
            epochs: self.epochs,
            data: self.data.resolve(base_dir)?,
            layers: parse_layers(&self.model.layers)?,
            arms,
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "t"
seeds = [1, 2]
batch_size = 32
epochs = 4

[data]
source = "blobs"
classes = 3
dims = 6

[model]
layers = ["flatten", "dense 8 + relu x2", "output 3"]

[[schedule]]
until = 2
lr = 1e-3
sigma = 5e-4

[[schedule]]
until = 4
lr = 1e-4
sigma = 0.0

[[arms]]
name = "adam"
optimizer = "adam"

[[arms]]
name = "ll-adam-30"
optimizer = "adam"
layer_fraction = 0.3
beta2 = 0.99

[[arms]]
name = "l-rms"
optimizer = "rmsprop"
langevin = true
alpha = 0.95
schedule = [{ until = 4, lr = 0.01, sigma = 0.1 }]
"#;

    #[test]
    fn parses_sample() {
        let c = ExperimentConfig::from_toml_str(SAMPLE, Path::new("/cfg")).unwrap();
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.layers.len(), 1 + 4 + 1);
        assert_eq!(c.layers[1], LayerSpec::Dense(8));
        assert_eq!(c.layers[2], LayerSpec::Relu);
        assert_eq!(c.arms.len(), 3);
        assert!(!c.arms[0].langevin);
        assert!(c.arms[1].langevin);
        assert_eq!(c.arms[1].layer_fraction, Some(0.3));
        assert_eq!(
            c.arms[1].optimizer.preconditioner,
            Preconditioner::Adam {
                beta1: 0.9,
                beta2: 0.99
            }
        );
        assert_eq!(c.arms[0].schedule.at_epoch(3).unwrap(), (1e-4, 0.0));
        assert_eq!(c.arms[2].schedule.at_epoch(3).unwrap(), (0.01, 0.1));
        assert_eq!(
            c.arms[2].optimizer.preconditioner,
            Preconditioner::RmsProp { alpha: 0.95 }
        );
        assert!(matches!(
            c.data.source,
            DataSource::Blobs {
                classes: 3,
                dims: 6,
                ..
            }
        ));
    }

    #[test]
    fn relative_dir_resolves_against_config() {
        let text = SAMPLE.replace(
            "source = \"blobs\"\nclasses = 3\ndims = 6",
            "source = \"mnist\"\ndir = \"d/m\"",
        );
        let c = ExperimentConfig::from_toml_str(&text, Path::new("/cfg")).unwrap();
        assert_eq!(
            c.data.source,
            DataSource::Mnist {
                dir: PathBuf::from("/cfg/d/m")
            }
        );
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            SAMPLE.replace("name = \"adam\"", "name = \"../adam\""),
            SAMPLE.replace("name = \"l-rms\"", "name = \"adam\""),
            SAMPLE.replace("until = 4\nlr = 1e-4", "until = 3\nlr = 1e-4"),
            SAMPLE.replace("epochs = 4", "epochs = 4\nbogus = 1"),
            SAMPLE.replace("\"rmsprop\"", "\"nadam\""),
            SAMPLE.replace("layer_fraction = 0.3", "layer_fraction = 1.5"),
            SAMPLE.replace(
                "layer_fraction = 0.3",
                "layer_fraction = 0.3\nlangevin = false",
            ),
            SAMPLE.replace("x2", "x0"),
            SAMPLE.replace("dense 8", "dense"),
            SAMPLE.replace("alpha = 0.95", "beta1 = 0.95"),
        ];
        for text in &bad {
            assert!(
                matches!(
                    ExperimentConfig::from_toml_str(text, Path::new(".")),
                    Err(Error::Config(_))
                ),
                "accepted:\n{text}"
            );
        }
    }

    #[test]
    fn arm_names() {
        for ok in ["adam", "LL-Adam_0.3", "a"] {
            validate_arm_name(ok).unwrap();
        }
        for bad in ["", ".hidden", "a/b", "a\\b", "a b", "é"] {
            assert!(validate_arm_name(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn select_arms_filters_in_order() {
        let mut c = ExperimentConfig::from_toml_str(SAMPLE, Path::new(".")).unwrap();
        c.select_arms(&["l-rms", "adam"]).unwrap();
        let names: Vec<_> = c.arms.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["adam", "l-rms"]);
        assert!(c.select_arms(&["nope"]).is_err());
    }

    #[test]
    fn layer_groups() {
        let specs = parse_layers(&["highway 4 x3".into(), "conv 2 + maxpool".into()]).unwrap();
        assert_eq!(
            specs,
            vec![
                LayerSpec::Highway(4),
                LayerSpec::Highway(4),
                LayerSpec::Highway(4),
                LayerSpec::Conv2d(2),
                LayerSpec::MaxPool2
            ]
        );
    }
}
