//! Experiment configuration: a TOML file plus `key=value` overrides.
//!
//! ```toml
//! seed = 7                      # required; every random stream derives from it
//! out_dir = "runs/squares"      # data/, bundle.json and reports/ go here
//!
//! [data]
//! domain = "squares"            # "squares" | "colors"
//! n_train = 10000
//! n_test = 2000
//! image_size = 32
//! image_effect = "2x"           # "2x" | "2x^4" | "sin2pix"
//! noise_sd = 0.1
//!
//! [autoencoder]
//! latent_dim = 16               # omit for 16 (squares) / 8 (colors)
//! stage_channels = [8, 16, 16]
//! epochs = 20
//! batch_size = 64
//! lr = 1e-3
//! weight_decay = 0.0
//! latent_noise = 10.0
//!
//! [nam]
//! epochs = 200
//! batch_size = 64
//! feature_dropout = 0.5
//! dropout = 0.2
//! lr = 1e-3
//! weight_decay = 1e-3
//! final_lr_factor = 0.05
//! decay_epochs = 100
//! shape_hidden = 100
//! shape_layers = 4
//! image_hidden = 100
//! image_layers = 4
//! skip_connections = true
//! interactions = []             # e.g. [[0, 1]]
//!
//! [bench]
//! n_pairs = 50
//! n_steps = 50
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::ImageEffectParams;
use crate::codec::AutoencoderConfig;
use crate::diffcore::AdamConfig;
use crate::error::{Error, Result};
use crate::nam::TrainConfig;
use crate::synth::{Domain, EffectSpec, ImageEffect};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub autoencoder: AutoencoderSection,
    #[serde(default)]
    pub nam: NamSection,
    #[serde(default)]
    pub bench: BenchSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("naim-run")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub domain: Domain,
    pub n_train: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub image_effect: ImageEffect,
    pub noise_sd: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            domain: Domain::Squares,
            n_train: 10_000,
            n_test: 2_000,
            image_size: 32,
            image_effect: ImageEffect::Linear,
            noise_sd: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderSection {
    pub latent_dim: Option<usize>,
    pub stage_channels: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub latent_noise: f64,
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        let base = AutoencoderConfig::default();
        Self {
            latent_dim: None,
            stage_channels: base.stage_channels,
            epochs: base.epochs,
            batch_size: base.batch_size,
            lr: base.lr,
            weight_decay: base.weight_decay,
            latent_noise: DESK_LATENT_NOISE,
        }
    }
}

/// Latent noise used by the desk-scale runs; it smooths the code geometry
/// enough for interpolations to track the square position.
pub const DESK_LATENT_NOISE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NamSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub feature_dropout: f64,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub final_lr_factor: f64,
    pub decay_epochs: usize,
    pub shape_hidden: usize,
    pub shape_layers: usize,
    pub image_hidden: usize,
    pub image_layers: usize,
    pub skip_connections: bool,
    pub interactions: Vec<[usize; 2]>,
}

impl Default for NamSection {
    fn default() -> Self {
        let t = TrainConfig::desk();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            feature_dropout: t.feature_dropout,
            dropout: t.dropout,
            lr: t.adam.lr,
            weight_decay: t.adam.weight_decay,
            final_lr_factor: t.final_lr_factor,
            decay_epochs: t.decay_epochs,
            shape_hidden: t.shape_hidden,
            shape_layers: t.shape_layers,
            image_hidden: t.image_hidden,
            image_layers: t.image_layers,
            skip_connections: t.skip_connections,
            interactions: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub n_pairs: usize,
    pub n_steps: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        let p = ImageEffectParams::default();
        Self { n_pairs: p.n_pairs, n_steps: p.n_steps }
    }
}

impl ExperimentConfig {
    /// Reads `path` (if any), applies `key=value` overrides with dotted keys
    /// (`nam.epochs=50`), then validates. Values are parsed as TOML literals
    /// and fall back to plain strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Path { path: p.to_path_buf(), source: e })?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.n_train == 0 || d.n_test < 2 {
            return Err(Error::Config("need n_train >= 1 and n_test >= 2".into()));
        }
        if d.image_size < 8 || d.image_size % 8 != 0 {
            return Err(Error::Config(format!("image_size {} must be a positive multiple of 8", d.image_size)));
        }
        EffectSpec::new(d.image_effect, d.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
        if self.bench.n_pairs == 0 || self.bench.n_steps < 2 {
            return Err(Error::Config("bench needs n_pairs >= 1 and n_steps >= 2".into()));
        }
        self.train_config(true).validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn spec(&self) -> EffectSpec {
        EffectSpec { image_effect: self.data.image_effect, noise_sd: self.data.noise_sd }
    }

    pub fn latent_dim(&self) -> usize {
        self.autoencoder.latent_dim.unwrap_or(match self.data.domain {
            Domain::Squares => 16,
            Domain::Colors => 8,
        })
    }

    pub fn autoencoder_config(&self) -> AutoencoderConfig {
        let a = &self.autoencoder;
        AutoencoderConfig {
            latent_dim: self.latent_dim(),
            stage_channels: a.stage_channels.clone(),
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            weight_decay: a.weight_decay,
            latent_noise: a.latent_noise,
            seed: self.seed,
        }
    }

    pub fn train_config(&self, use_image: bool) -> TrainConfig {
        let n = &self.nam;
        TrainConfig {
            epochs: n.epochs,
            batch_size: n.batch_size,
            feature_dropout: n.feature_dropout,
            dropout: n.dropout,
            adam: AdamConfig { lr: n.lr, weight_decay: n.weight_decay, ..AdamConfig::default() },
            final_lr_factor: n.final_lr_factor,
            decay_epochs: n.decay_epochs,
            seed: self.seed,
            interactions: n.interactions.iter().map(|p| (p[0], p[1])).collect(),
            shape_hidden: n.shape_hidden,
            shape_layers: n.shape_layers,
            image_hidden: n.image_hidden,
            image_layers: n.image_layers,
            skip_connections: n.skip_connections,
            use_image,
        }
    }

    pub fn bench_params(&self) -> ImageEffectParams {
        ImageEffectParams { n_pairs: self.bench.n_pairs, n_steps: self.bench.n_steps, seed: self.seed }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn bundle_path(&self) -> PathBuf {
        self.out_dir.join("bundle.json")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("nonempty key");
    let mut node = table;
    for p in parts {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p:?} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        let err = ExperimentConfig::load(None, &[]).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        assert!(ExperimentConfig::load(None, &["seed=3".into()]).is_ok());
    }

    #[test]
    fn overrides_are_typed() {
        let cfg = ExperimentConfig::load(
            None,
            &["seed=1".into(), "data.domain=colors".into(), "nam.epochs=5".into(), "nam.interactions=[[0,2]]".into()],
        )
        .unwrap();
        assert_eq!(cfg.data.domain, Domain::Colors);
        assert_eq!(cfg.nam.epochs, 5);
        assert_eq!(cfg.latent_dim(), 8);
        assert_eq!(cfg.train_config(true).interactions, vec![(0, 2)]);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(ExperimentConfig::load(None, &["seed=1".into(), "nam.epoch=5".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["seed=1".into(), "data.image_effect=cubic".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["seed".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["seed=1".into(), "bench.n_steps=1".into()]).is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ExperimentConfig::load(None, &["seed=9".into(), "out_dir=somewhere".into()]).unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
