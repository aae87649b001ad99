use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, PretrainConfig};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::scenedata::DatasetSpec;
use crate::trainer::{MaskOrigin, MaskStrategy, Protocol, TrainConfig};

/// Every setting a command may need, read from one TOML document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run directory receiving every artifact.
    pub out_dir: PathBuf,
    /// Training seeds; single runs use the first one.
    pub seeds: Vec<u64>,
    /// Seed of the generated downstream dataset.
    pub dataset_seed: u64,
    pub protocol: Protocol,
    pub encoder: EncoderConfig,
    pub dataset: DatasetSpec,
    pub pretrain: PretrainConfig,
    /// Tuning settings, including loss weights and the background-space size.
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::compact();
        RunConfig {
            out_dir: PathBuf::from("runs/default"),
            seeds: vec![1, 2, 3, 4, 5],
            dataset_seed: 7,
            protocol: Protocol::FewShot { shots: 16 },
            dataset: DatasetSpec {
                image_size: encoder.image_size,
                context_bias: 0.9,
                ..DatasetSpec::default()
            },
            encoder,
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.dataset.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.dataset.image_size != self.encoder.image_size {
            return Err(Error::Config(format!(
                "dataset image_size {} differs from encoder image_size {}",
                self.dataset.image_size, self.encoder.image_size
            )));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }

    /// Writes the resolved document into the run directory.
    pub fn echo(&self) -> Result<PathBuf> {
        let path = self.out_dir.join(RESOLVED_CONFIG);
        crate::encoder::checkpoint::write_atomic(&path, self.to_toml().as_bytes())?;
        Ok(path)
    }
}

/// File name of the resolved config echo in every run directory.
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Loss-weight presets selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum WeightsPreset {
    Fewshot,
    BaseToNovel,
}

impl WeightsPreset {
    pub fn weights(self) -> LossWeights {
        match self {
            WeightsPreset::Fewshot => LossWeights::few_shot(),
            WeightsPreset::BaseToNovel => LossWeights::base_to_novel(),
        }
    }
}

/// Command-line values layered over a loaded [`RunConfig`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mask_source: Option<MaskOrigin>,
    pub mask_strategy: Option<MaskStrategy>,
    pub weights_preset: Option<WeightsPreset>,
    pub shots: Option<usize>,
    pub fraction: Option<f64>,
    pub erase_rate: Option<f64>,
    pub bg_classes: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, mut c: RunConfig) -> Result<RunConfig> {
        if let Some(s) = self.seed {
            c.seeds = vec![s];
            c.train.seed = s;
            c.pretrain.seed = s;
        }
        if let Some(m) = self.mask_source {
            c.train.mask_source = m;
        }
        if let Some(m) = self.mask_strategy {
            c.train.mask_strategy = m;
        }
        if let Some(p) = self.weights_preset {
            c.train.weights = p.weights();
        }
        if let Some(s) = self.shots {
            c.protocol = match c.protocol {
                Protocol::BaseToNovel { .. } => Protocol::BaseToNovel { shots: s },
                _ => Protocol::FewShot { shots: s },
            };
        }
        if let Some(f) = self.fraction {
            if self.shots.is_some() {
                return Err(Error::Config("--shots and --fraction are exclusive".into()));
            }
            c.protocol = Protocol::Fraction { fraction: f };
        }
        if let Some(r) = self.erase_rate {
            c.train.erase_rate = r;
        }
        if let Some(k) = self.bg_classes {
            c.train.bg_classes = k;
        }
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        c.train.seed = c.seed();
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn missing_key_is_named() {
        let text = RunConfig::default().to_toml().replace("learning_rate = 0.0035\n", "");
        let err = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("bogus = 1\n{}", RunConfig::default().to_toml());
        let err = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn overrides() {
        let o = Overrides {
            seed: Some(9),
            weights_preset: Some(WeightsPreset::BaseToNovel),
            shots: Some(4),
            ..Overrides::default()
        };
        let c = o.apply(RunConfig::default()).unwrap();
        assert_eq!(c.seeds, vec![9]);
        assert_eq!(c.train.weights.visual, 0.4);
        assert_eq!(c.train.weights.background, 0.5);
        assert_eq!(c.protocol, Protocol::FewShot { shots: 4 });
        let both = Overrides {
            shots: Some(4),
            fraction: Some(0.5),
            ..Overrides::default()
        };
        assert!(both.apply(RunConfig::default()).is_err());
    }
}
