//! JSON experiment configuration and its resolution against CLI flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use saln_core::attacks::{AttackConfig, AttackKind};
use saln_core::data::{load_idx_dir, split_dataset, synth_gaussian_blobs, DataSplit, Normalization};
use saln_core::error::{Error, Result};
use saln_core::network::{LayerSpec, Network};
use saln_core::training::TrainConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub attacks: Option<AttacksConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
    Mnist {
        dir: PathBuf,
    },
}

fn default_classes() -> usize {
    3
}
fn default_per_class() -> usize {
    200
}
fn default_dim() -> usize {
    2
}
fn default_separation() -> f64 {
    5.0
}
fn default_val_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ModelConfig {
    Preset {
        preset: String,
        #[serde(default)]
        seed: u64,
    },
    Custom {
        input: Vec<usize>,
        layers: Vec<LayerSpec>,
        #[serde(default)]
        seed: u64,
    },
}

/// Per-attack overrides of the built-in defaults, plus a shared box.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttacksConfig {
    /// Pixel box as [lo, hi]; defaults to [0,1] for image datasets and to
    /// unconstrained for synthetic ones.
    #[serde(default)]
    pub box_constraints: Option<(f64, f64)>,
    #[serde(default)]
    pub grad: Option<AttackOverrides>,
    #[serde(default)]
    pub pgd: Option<AttackOverrides>,
    #[serde(default)]
    pub cw: Option<AttackOverrides>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackOverrides {
    pub max_iterations: Option<usize>,
    pub step_size: Option<f64>,
    pub binary_search_steps: Option<usize>,
    pub initial_const: Option<f64>,
    pub confidence_kappa: Option<f64>,
    pub seed: Option<u64>,
}

impl AttackOverrides {
    fn apply(&self, mut cfg: AttackConfig) -> AttackConfig {
        if let Some(v) = self.max_iterations {
            cfg.max_iterations = v;
        }
        if let Some(v) = self.step_size {
            cfg.step_size = v;
        }
        if let Some(v) = self.binary_search_steps {
            cfg.binary_search_steps = v;
        }
        if let Some(v) = self.initial_const {
            cfg.initial_const = v;
        }
        if let Some(v) = self.confidence_kappa {
            cfg.confidence_kappa = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg
    }
}

/// A resolved dataset plus provenance for report metadata.
pub struct ResolvedData {
    pub split: DataSplit,
    pub normalization: Normalization,
    pub description: String,
    pub is_image: bool,
}

/// Builds the dataset from config and flag overrides. `--dataset` selects
/// the kind; `--mnist-dir` points at an IDX directory.
pub fn resolve_dataset(
    config: &FileConfig,
    flag_dataset: Option<&str>,
    flag_mnist_dir: Option<&Path>,
) -> Result<ResolvedData> {
    let effective = match (flag_dataset, &config.dataset) {
        (Some("blobs"), Some(ds @ DatasetConfig::Blobs { .. })) => ds.clone(),
        (Some("blobs"), _) => DatasetConfig::Blobs {
            classes: default_classes(),
            per_class: default_per_class(),
            dim: default_dim(),
            separation: default_separation(),
            seed: 7,
            val_fraction: default_val_fraction(),
        },
        (Some("mnist"), Some(ds @ DatasetConfig::Mnist { .. })) if flag_mnist_dir.is_none() => {
            ds.clone()
        }
        (Some("mnist"), _) => DatasetConfig::Mnist {
            dir: flag_mnist_dir
                .ok_or_else(|| {
                    Error::InvalidConfig("--dataset mnist requires --mnist-dir or a config entry".into())
                })?
                .to_path_buf(),
        },
        (Some(other), _) => {
            return Err(Error::InvalidConfig(format!(
                "unknown dataset '{other}' (expected mnist or blobs)"
            )))
        }
        (None, Some(ds)) => ds.clone(),
        (None, None) => {
            return Err(Error::InvalidConfig(
                "no dataset configured (use --dataset or a config file)".into(),
            ))
        }
    };

    match effective {
        DatasetConfig::Blobs {
            classes,
            per_class,
            dim,
            separation,
            seed,
            val_fraction,
        } => {
            let pool = synth_gaussian_blobs(classes, per_class, dim, separation, seed)?;
            let split = split_dataset(&pool, val_fraction, seed.wrapping_add(1))?;
            Ok(ResolvedData {
                split,
                normalization: Normalization::None,
                description: format!(
                    "blobs(classes={classes},per_class={per_class},dim={dim},separation={separation},seed={seed})"
                ),
                is_image: false,
            })
        }
        DatasetConfig::Mnist { dir } => {
            let split = load_idx_dir(&dir)?;
            Ok(ResolvedData {
                split,
                normalization: Normalization::UnitRange,
                description: format!("idx-dir({})", dir.display()),
                is_image: true,
            })
        }
    }
}

/// Builds the network from config, or a sensible default for the dataset:
/// a small dense net for flat features, a small conv net for images.
pub fn resolve_model(config: &FileConfig, data: &ResolvedData, seed: Option<u64>) -> Result<Network> {
    match &config.model {
        Some(ModelConfig::Preset { preset, seed: s }) => Network::preset(preset, seed.unwrap_or(*s)),
        Some(ModelConfig::Custom { input, layers, seed: s }) => {
            Network::build(input, layers, seed.unwrap_or(*s))
        }
        None => {
            let input = data.split.train.sample_shape().to_vec();
            let classes = data.split.train.n_classes();
            let seed = seed.unwrap_or(1);
            if data.is_image {
                Network::build(
                    &input,
                    &[
                        LayerSpec::Conv2d { filters: 8, bias: true },
                        LayerSpec::Relu,
                        LayerSpec::MaxPool2,
                        LayerSpec::Conv2d { filters: 16, bias: true },
                        LayerSpec::Relu,
                        LayerSpec::MaxPool2,
                        LayerSpec::Flatten,
                        LayerSpec::Dense { outputs: 32, bias: true },
                        LayerSpec::Relu,
                        LayerSpec::Dense { outputs: classes, bias: true },
                    ],
                    seed,
                )
            } else {
                Network::build(
                    &input,
                    &[
                        LayerSpec::Dense { outputs: 16, bias: true },
                        LayerSpec::Relu,
                        LayerSpec::Dense { outputs: classes, bias: true },
                    ],
                    seed,
                )
            }
        }
    }
}

/// Parses `--attacks grad,pgd,cw` and assembles configured attacks, with
/// the box defaulting to [0,1] on image data.
pub fn resolve_attacks(
    config: &FileConfig,
    flag_attacks: Option<&str>,
    is_image: bool,
) -> Result<Vec<(AttackKind, AttackConfig)>> {
    let kinds: Vec<AttackKind> = match flag_attacks {
        None => vec![AttackKind::Gradient, AttackKind::Pgd, AttackKind::Cw],
        Some(list) => list
            .split(',')
            .map(|name| match name.trim() {
                "grad" => Ok(AttackKind::Gradient),
                "pgd" => Ok(AttackKind::Pgd),
                "cw" => Ok(AttackKind::Cw),
                other => Err(Error::InvalidConfig(format!(
                    "unknown attack '{other}' (expected grad, pgd, cw)"
                ))),
            })
            .collect::<Result<_>>()?,
    };
    let attacks_cfg = config.attacks.clone().unwrap_or_default();
    let default_box = if is_image { Some((0.0, 1.0)) } else { None };
    let box_constraints = attacks_cfg.box_constraints.or(default_box);

    Ok(kinds
        .into_iter()
        .map(|kind| {
            let mut cfg = match kind {
                AttackKind::Gradient => AttackConfig::gradient_default(),
                AttackKind::Pgd => AttackConfig::pgd_default(),
                AttackKind::Cw => AttackConfig::cw_default(),
            };
            cfg.box_constraints = box_constraints;
            let overrides = match kind {
                AttackKind::Gradient => &attacks_cfg.grad,
                AttackKind::Pgd => &attacks_cfg.pgd,
                AttackKind::Cw => &attacks_cfg.cw,
            };
            if let Some(o) = overrides {
                cfg = o.apply(cfg);
            }
            (kind, cfg)
        })
        .collect())
}
