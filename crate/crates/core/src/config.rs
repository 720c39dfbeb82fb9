//! Run configuration: one nested key-value (TOML) document with sections for
//! the network, data, subspace, training, and each report command, plus
//! repeatable `key.path=value` overrides. Unknown keys are rejected by name.
//!
//! Seed factoring: `train.seed` is the root seed. `data.seed` and
//! `data.noise_seed` default to it but can be pinned so that several runs
//! (different training seeds) see the same data and the same injected label
//! noise.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::net::NetworkSpec;
use crate::subspace::SubspaceKind;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![32],
            batch_norm: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Blobs,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: DataKind,
    // synthetic blobs
    pub n_train: usize,
    pub n_test: usize,
    pub d: usize,
    pub k: usize,
    pub spread: f64,
    /// Defaults to `train.seed`.
    pub seed: Option<u64>,
    /// Fraction of training labels replaced by fixed random labels.
    pub label_noise: f64,
    /// Defaults to the data seed, keeping the noise fixed across methods.
    pub noise_seed: Option<u64>,
    // idx files
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Class-count override for IDX splits that miss classes.
    pub num_classes: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DataKind::Blobs,
            n_train: 512,
            n_test: 2048,
            d: 2,
            k: 3,
            spread: 0.12,
            seed: None,
            label_noise: 0.0,
            noise_seed: None,
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
            num_classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubspaceConfig {
    pub kind: String,
    /// Endpoint count, simplex only.
    pub m: usize,
}

impl Default for SubspaceConfig {
    fn default() -> Self {
        SubspaceConfig {
            kind: "line".to_string(),
            m: 2,
        }
    }
}

impl SubspaceConfig {
    pub fn resolve(&self) -> Result<SubspaceKind> {
        match self.kind.as_str() {
            "line" => Ok(SubspaceKind::Line),
            "bezier1" => Ok(SubspaceKind::Bezier1),
            "simplex" => {
                let kind = SubspaceKind::Simplex { m: self.m };
                kind.validate()?;
                Ok(kind)
            }
            other => Err(Error::ConfigFile(format!(
                "subspace.kind must be line, bezier1, or simplex; got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// `start:end:step` grid over the one-dimensional coordinate.
    pub grid: String,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grid: "0:1:0.05".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstabilityConfig {
    pub k: usize,
    /// Number of forks when `fork_seeds` is empty (seeds are then
    /// `train.seed + 1 ..`).
    pub forks: usize,
    pub fork_seeds: Vec<u64>,
    /// `shared_init` (diverge by data order) or `different_init`.
    pub mode: String,
    pub alpha_points: usize,
    pub mixture_samples: usize,
}

impl Default for InstabilityConfig {
    fn default() -> Self {
        InstabilityConfig {
            k: 0,
            forks: 2,
            fork_seeds: Vec::new(),
            mode: "shared_init".to_string(),
            alpha_points: 21,
            mixture_samples: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegralConfig {
    pub epsilon: f64,
}

impl Default for IntegralConfig {
    fn default() -> Self {
        IntegralConfig { epsilon: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaneConfig {
    pub resolution: usize,
    /// Extra margin around the projected triangle, as a fraction of its
    /// bounding box.
    pub margin: f64,
}

impl Default for PlaneConfig {
    fn default() -> Self {
        PlaneConfig {
            resolution: 15,
            margin: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ece_bins: usize,
    /// Members of the random subspace ensemble (simplex checkpoints).
    pub ensemble_members: usize,
    /// When positive, also evaluate under Gaussian input corruption and
    /// report the relative accuracy change.
    pub corruption_severity: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ece_bins: 15,
            ensemble_members: 6,
            corruption_severity: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct OutputConfig {
    /// Checkpoint every N epochs during training (0 = final only).
    pub checkpoint_every: usize,
}


#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub net: NetConfig,
    pub data: DataConfig,
    pub subspace: SubspaceConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub instability: InstabilityConfig,
    pub integral: IntegralConfig,
    pub plane: PlaneConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parses a config file and applies `key.path=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text)
            .map_err(|e| Error::ConfigFile(format!("config parse error: {e}")))?;
        for entry in overrides {
            apply_override(&mut value, entry)?;
        }
        let config: RunConfig = value
            .try_into()
            .map_err(|e| Error::ConfigFile(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.subspace.resolve()?;
        if self.data.kind == DataKind::Idx
            && (self.data.images.is_none() || self.data.labels.is_none())
        {
            return Err(Error::ConfigFile(
                "data.kind = \"idx\" needs data.images and data.labels".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.data.label_noise) {
            return Err(Error::ConfigFile(format!(
                "data.label_noise {} outside [0, 1]",
                self.data.label_noise
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigFile(format!("serialize failed: {e}")))
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.train.seed)
    }

    pub fn noise_seed(&self) -> u64 {
        self.data.noise_seed.unwrap_or_else(|| self.data_seed())
    }

    /// Builds the train/test pair this config describes, with label noise
    /// already injected into the training split.
    pub fn build_datasets(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match self.data.kind {
            DataKind::Blobs => data::synth_blobs_split(
                self.data_seed(),
                self.data.n_train,
                self.data.n_test,
                self.data.d,
                self.data.k,
                self.data.spread,
            )?,
            DataKind::Idx => {
                let images = self.data.images.as_ref().expect("validated");
                let labels = self.data.labels.as_ref().expect("validated");
                let mut train = data::load_idx(images, labels)?.with_split("train");
                let mut test = match (&self.data.test_images, &self.data.test_labels) {
                    (Some(ti), Some(tl)) => data::load_idx(ti, tl)?.with_split("test"),
                    _ => train.clone().with_split("test"),
                };
                let k = self
                    .data
                    .num_classes
                    .unwrap_or_else(|| train.num_classes().max(test.num_classes()));
                train = train.with_num_classes(k)?;
                test = test.with_num_classes(k)?;
                (train, test)
            }
        };
        let train = if self.data.label_noise > 0.0 {
            data::inject_label_noise(&train, self.data.label_noise, self.noise_seed())?
        } else {
            train
        };
        Ok((train, test))
    }

    /// The network implied by this config and the dataset shape.
    pub fn build_network(&self, dataset: &Dataset) -> Result<NetworkSpec> {
        NetworkSpec::mlp(
            dataset.dim(),
            &self.net.hidden,
            dataset.num_classes(),
            self.net.batch_norm,
        )
    }

    pub fn instability_setup(&self) -> Result<crate::experiments::InstabilitySetup> {
        let mode = match self.instability.mode.as_str() {
            "shared_init" => crate::experiments::ForkMode::SharedInit,
            "different_init" => crate::experiments::ForkMode::DifferentInit,
            other => {
                return Err(Error::ConfigFile(format!(
                    "instability.mode must be shared_init or different_init, got `{other}`"
                )))
            }
        };
        let fork_seeds = if self.instability.fork_seeds.is_empty() {
            (0..self.instability.forks)
                .map(|i| self.train.seed + 1 + i as u64)
                .collect()
        } else {
            self.instability.fork_seeds.clone()
        };
        Ok(crate::experiments::InstabilitySetup {
            k: self.instability.k,
            fork_seeds,
            mode,
            alpha_points: self.instability.alpha_points,
            mixture_samples: self.instability.mixture_samples,
        })
    }
}

fn apply_override(value: &mut toml::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry.split_once('=').ok_or_else(|| {
        Error::ConfigFile(format!("override `{entry}` is not of the form key.path=value"))
    })?;
    let parts: Vec<&str> = path.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::ConfigFile(format!("override `{entry}` has an empty key segment")));
    }
    let mut cursor = value;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .as_table_mut()
            .ok_or_else(|| {
                Error::ConfigFile(format!("override `{entry}` descends into a non-table"))
            })?
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cursor.as_table_mut().ok_or_else(|| {
        Error::ConfigFile(format!("override `{entry}` descends into a non-table"))
    })?;
    table.insert(parts[parts.len() - 1].to_string(), parse_literal(raw.trim()));
    Ok(())
}

/// Interprets an override value: bool, integer, float, array, or string.
fn parse_literal(raw: &str) -> toml::Value {
    if let Ok(b) = bool::from_str(raw) {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = i64::from_str(raw) {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = f64::from_str(raw) {
        return toml::Value::Float(f);
    }
    if raw.starts_with('[') {
        if let Ok(v) = toml::from_str::<toml::Value>(&format!("x = {raw}")) {
            if let Some(inner) = v.get("x") {
                return inner.clone();
            }
        }
    }
    toml::Value::String(raw.trim_matches('"').to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = RunConfig::from_toml("", &[]).unwrap();
        assert_eq!(config.train.lr_max, 0.1);
        assert_eq!(config.train.momentum, 0.9);
        assert_eq!(config.train.weight_decay, 1e-4);
        assert_eq!(config.train.batch_size, 128);
        assert_eq!(config.train.warmup_epochs, 5);
        assert_eq!(config.train.beta, 1.0);
        assert_eq!(config.integral.epsilon, 0.1);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = RunConfig::from_toml("[train]\nlearning_rate = 0.1\n", &[]).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("learning_rate"), "{message}");
    }

    #[test]
    fn overrides_supersede_file_values() {
        let text = "[train]\nbeta = 1.0\nepochs = 10\n";
        let config = RunConfig::from_toml(
            text,
            &[
                "train.beta=0.5".to_string(),
                "train.layerwise=true".to_string(),
                "subspace.kind=simplex".to_string(),
                "subspace.m=4".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(config.train.beta, 0.5);
        assert!(config.train.layerwise);
        assert_eq!(
            config.subspace.resolve().unwrap(),
            SubspaceKind::Simplex { m: 4 }
        );
        assert_eq!(config.train.epochs, 10);
    }

    #[test]
    fn integer_overrides_feed_float_fields() {
        let config = RunConfig::from_toml("", &["train.beta=2".to_string()]).unwrap();
        assert_eq!(config.train.beta, 2.0);
    }

    #[test]
    fn loss_kind_round_trips_through_toml() {
        let config = RunConfig::from_toml(
            "[train.loss]\nkind = \"cross_entropy\"\nsmoothing = 0.1\n",
            &[],
        )
        .unwrap();
        assert_eq!(
            config.train.loss,
            crate::LossKind::CrossEntropy { smoothing: 0.1 }
        );
        let text = config.to_toml().unwrap();
        let back = RunConfig::from_toml(&text, &[]).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn datasets_are_deterministic_and_noise_respects_pinned_seed() {
        let config = RunConfig::from_toml(
            "[data]\nlabel_noise = 0.25\nseed = 7\n[train]\nseed = 1\n",
            &[],
        )
        .unwrap();
        let (train_a, _) = config.build_datasets().unwrap();
        let other = RunConfig::from_toml(
            "[data]\nlabel_noise = 0.25\nseed = 7\n[train]\nseed = 2\n",
            &[],
        )
        .unwrap();
        let (train_b, _) = other.build_datasets().unwrap();
        // different training seeds, same pinned data seed: identical data
        assert_eq!(train_a, train_b);
        assert_eq!(
            train_a.noise_mask().iter().filter(|&&m| m).count(),
            config.data.n_train / 4
        );
    }
}
