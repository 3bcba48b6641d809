//! The pipeline configuration file. Every table and key is optional;
//! unknown keys are rejected.

use std::path::Path;

use angioseg::labelgen::AnnotateConfig;
use angioseg::nnet::UNetConfig;
use angioseg::synth::SynthConfig;
use angioseg::train::{ComponentFilter, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 64² input, 3 levels of 2 convolutions, 8 base features.
    #[default]
    Desk,
    /// 256² input, 4 levels of 3 convolutions, 64 base features.
    Paper,
}

/// Network shape; unset fields come from the preset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub preset: Preset,
    pub input_size: Option<usize>,
    pub levels: Option<usize>,
    pub convs_per_level: Option<usize>,
    pub base_features: Option<usize>,
}

impl NetConfig {
    pub fn unet(&self, out_classes: usize) -> UNetConfig {
        let base = match self.preset {
            Preset::Desk => UNetConfig::desk(out_classes),
            Preset::Paper => UNetConfig::paper(out_classes),
        };
        UNetConfig {
            input_size: self.input_size.unwrap_or(base.input_size),
            levels: self.levels.unwrap_or(base.levels),
            convs_per_level: self.convs_per_level.unwrap_or(base.convs_per_level),
            base_features: self.base_features.unwrap_or(base.base_features),
            ..base
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub frames: usize,
    pub repetitions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            frames: 16,
            repetitions: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; `--seed` overrides it.
    pub seed: u64,
    pub synth: SynthConfig,
    pub annotate: AnnotateConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Component filter of the "+cc" variants.
    pub postprocess: ComponentFilter,
    pub bench: BenchConfig,
}

/// A parsed configuration together with the text it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    /// Empty when no file was given.
    pub text: String,
}

impl LoadedConfig {
    pub fn defaults() -> Self {
        LoadedConfig {
            config: PipelineConfig::default(),
            text: String::new(),
        }
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
        config.validate()?;
        Ok(LoadedConfig {
            config,
            text: text.to_string(),
        })
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::defaults()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> CliResult<()> {
        let usage = |e: angioseg::Error| CliError::Usage(format!("invalid configuration: {e}"));
        self.synth.validate().map_err(usage)?;
        self.annotate.flow.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        self.net.unet(1).validate().map_err(usage)?;
        if self.bench.repetitions == 0 {
            return Err(CliError::Usage("bench.repetitions must be positive".into()));
        }
        Ok(())
    }

    /// Full configuration with every default filled in.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = LoadedConfig::parse("").unwrap();
        assert_eq!(c.config, PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(LoadedConfig::parse("sede = 3").is_err());
        assert!(LoadedConfig::parse("[train]\nepoch = 3").is_err());
        assert!(LoadedConfig::parse("[synth.noise]\ngausian = 0.1").is_err());
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let c = LoadedConfig::parse("seed = 9\n[train]\nepochs = 3\n[net]\npreset = \"paper\"\nlevels = 2\n").unwrap();
        assert_eq!(c.config.seed, 9);
        assert_eq!(c.config.train.epochs, 3);
        assert_eq!(c.config.train.batch_size, TrainConfig::default().batch_size);
        let net = c.config.net.unet(3);
        assert_eq!((net.input_size, net.levels, net.base_features), (256, 2, 64));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = PipelineConfig::default();
        let back = LoadedConfig::parse(&c.resolved_toml()).unwrap();
        assert_eq!(back.config, c);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        assert!(matches!(LoadedConfig::parse("[train]\nepochs = 0"), Err(CliError::Usage(_))));
        assert!(matches!(LoadedConfig::parse("[net]\ninput_size = 60"), Err(CliError::Usage(_))));
    }
}
