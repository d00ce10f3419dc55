use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::idx::{load_idx, Dataset, DatasetKind};
use super::optim::OptimizerKind;
use crate::approx::TargetActivation;
use crate::error::{Error, Result};
use crate::network::{build_network, Network, NetworkSpec, PauConfig, PauInit};
use crate::rational::{NoiseGranularity, SafetyMode};

/// Environment variable naming the data root when no directory is given.
pub const DATA_DIR_ENV: &str = "PAU_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Dense stack `784 → hidden... → 10`.
    Mlp,
    Lenet,
    Vgg8,
}

/// Everything a training run needs. Also the CLI configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    /// Root holding `mnist/` and `fashion-mnist/`.
    pub data_dir: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Use the first `n` training samples.
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,

    pub arch: Architecture,
    pub hidden: Vec<usize>,
    /// `"pau"` for rational units, or a fixed activation such as `"lrelu(0.01)"`.
    pub activation: String,
    pub pau_init: String,
    pub safe: bool,
    pub trainable_pau: bool,
    pub noise_alpha: f64,
    pub noise: NoiseGranularity,

    /// `"adam"` or `"sgd"`.
    pub optimizer: String,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub pau_lr: Option<f64>,
    /// Step decay: multiply learning rates by `lr_decay_gamma` every this many epochs.
    pub lr_decay_every: Option<usize>,
    pub lr_decay_gamma: f64,

    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            data_dir: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_subset: None,
            test_subset: None,
            arch: Architecture::Mlp,
            hidden: vec![128],
            activation: "pau".into(),
            pau_init: "lrelu(0.01)".into(),
            safe: true,
            trainable_pau: true,
            noise_alpha: 0.0,
            noise: NoiseGranularity::PerElement,
            optimizer: "adam".into(),
            lr: 0.002,
            momentum: 0.5,
            weight_decay: 0.0,
            pau_lr: None,
            lr_decay_every: None,
            lr_decay_gamma: 0.1,
            batch_size: 256,
            epochs: 5,
            seed: 7,
        }
    }
}

pub const PRESETS: [&str; 3] = ["mnist-desk", "fmnist-desk", "mnist-paper"];

impl TrainConfig {
    /// Named protocols:
    /// * `mnist-desk`: MLP 784→128→10, Adam 0.002, batch 256, 5 epochs, 10k/2k subsets, seed 7
    /// * `fmnist-desk`: the same on Fashion-MNIST
    /// * `mnist-paper`: LeNet, full MNIST, 100 epochs
    pub fn preset(name: &str) -> Result<Self> {
        let desk = Self {
            train_subset: Some(10_000),
            test_subset: Some(2_000),
            ..Self::default()
        };
        match name {
            "mnist-desk" => Ok(desk),
            "fmnist-desk" => Ok(Self {
                dataset: DatasetKind::FashionMnist,
                ..desk
            }),
            "mnist-paper" => Ok(Self {
                arch: Architecture::Lenet,
                hidden: Vec::new(),
                epochs: 100,
                ..Self::default()
            }),
            other => Err(Error::UnknownName(other.to_string())),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("training configs always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.noise_alpha >= 0.0 && self.noise_alpha.is_finite()) {
            return bad(format!("noise_alpha {} must be non-negative", self.noise_alpha));
        }
        if self.lr_decay_every == Some(0) {
            return bad("lr_decay_every must be positive".into());
        }
        if self.arch == Architecture::Mlp && self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        self.optimizer_kind()?;
        self.fixed_activation()?;
        Ok(())
    }

    pub fn optimizer_kind(&self) -> Result<OptimizerKind> {
        match self.optimizer.to_ascii_lowercase().as_str() {
            "adam" => Ok(match OptimizerKind::adam(self.lr) {
                OptimizerKind::Adam {
                    lr, beta1, beta2, eps, ..
                } => OptimizerKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    weight_decay: self.weight_decay,
                },
                sgd => sgd,
            }),
            "sgd" => Ok(OptimizerKind::Sgd {
                lr: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
            }),
            other => Err(Error::UnknownName(other.to_string())),
        }
    }

    /// `None` when the network uses rational units.
    pub fn fixed_activation(&self) -> Result<Option<TargetActivation>> {
        if self.activation.eq_ignore_ascii_case("pau") {
            Ok(None)
        } else {
            self.activation.parse().map(Some)
        }
    }

    pub fn pau_config(&self) -> PauConfig {
        PauConfig {
            init: PauInit::Builtin(self.pau_init.clone()),
            mode: if self.safe {
                SafetyMode::Safe
            } else {
                SafetyMode::Unsafe
            },
            noise_alpha: self.noise_alpha,
            noise: self.noise,
            trainable: self.trainable_pau,
        }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let spec = match self.arch {
            Architecture::Mlp => {
                let mut dims = vec![784];
                dims.extend(&self.hidden);
                dims.push(10);
                NetworkSpec::mlp(&dims)
            }
            Architecture::Lenet => NetworkSpec::lenet(),
            Architecture::Vgg8 => NetworkSpec::vgg8(),
        };
        Ok(match self.fixed_activation()? {
            Some(target) => spec.with_fixed_activations(target),
            None => spec,
        })
    }

    /// Freshly initialized network for this configuration.
    pub fn build_network(&self) -> Result<Network> {
        build_network(&self.network_spec()?, &self.pau_config(), self.seed)
    }

    /// Data root: the config's `data_dir`, else `$PAU_DATA_DIR`, else `./data`.
    pub fn data_root(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    fn split_files(&self, train: bool) -> (PathBuf, PathBuf) {
        let (default_images, default_labels) = self.dataset.files(&self.data_root(), train);
        let (images, labels) = if train {
            (&self.train_images, &self.train_labels)
        } else {
            (&self.test_images, &self.test_labels)
        };
        (
            images.clone().unwrap_or(default_images),
            labels.clone().unwrap_or(default_labels),
        )
    }

    /// Loads `(train, test)` and applies the subset sizes.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let load = |train: bool, subset: Option<usize>| -> Result<Dataset> {
            let (images, labels) = self.split_files(train);
            let ds = load_idx(&images, &labels, if train { "train" } else { "test" })
                .map_err(|e| with_hint(e, &images))?;
            match subset {
                Some(n) => ds.subset(n),
                None => Ok(ds),
            }
        };
        Ok((load(true, self.train_subset)?, load(false, self.test_subset)?))
    }
}

fn with_hint(err: Error, path: &Path) -> Error {
    match err {
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => Error::Format {
            path: path.to_path_buf(),
            message: format!(
                "not found (set --data-dir or ${DATA_DIR_ENV}; scripts/fetch_data.sh downloads the data)"
            ),
        },
        other => other,
    }
}
