//! Flat key-value run configuration.
//!
//! Every field defaults to the value used by the owning library module.
//! A config file only needs the keys it changes, and command-line flags
//! override both.

use std::path::Path;

use anyhow::Context;
use emocot_core::audio::TrimConfig;
use emocot_core::cotgen::DEFAULT_IN_FLIGHT;
use emocot_core::curriculum::DEFAULT_BATCH_SIZE;
use emocot_core::features::PitchConfig;
use emocot_core::losskernel::{LossWeights, DEFAULT_FD_EPS};
use emocot_core::manifest::DEFAULT_MAX_DURATION_S;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub silence_threshold_db: f64,
    pub pitch_min_hz: f64,
    pub pitch_max_hz: f64,
    pub voicing_threshold: f64,
    pub max_duration_s: f64,
    pub lambda_utt: f64,
    pub lambda_cate: f64,
    pub temperature: f64,
    pub fd_eps: f64,
    pub batch_size: usize,
    pub steps: Option<u64>,
    pub llm_url: Option<String>,
    pub llm_model: Option<String>,
    pub llm_temperature: f64,
    pub in_flight: usize,
    /// Worker threads for per-record stages; unset means one per core.
    pub jobs: Option<usize>,
}

impl Default for Config {
    fn default() -> Self {
        let trim = TrimConfig::default();
        let pitch = PitchConfig::default();
        let weights = LossWeights::default();
        Config {
            silence_threshold_db: trim.threshold_db,
            pitch_min_hz: pitch.min_hz,
            pitch_max_hz: pitch.max_hz,
            voicing_threshold: pitch.threshold,
            max_duration_s: DEFAULT_MAX_DURATION_S,
            lambda_utt: weights.utt,
            lambda_cate: weights.cate,
            temperature: weights.temperature,
            fd_eps: DEFAULT_FD_EPS,
            batch_size: DEFAULT_BATCH_SIZE,
            steps: None,
            llm_url: None,
            llm_model: None,
            llm_temperature: 0.7,
            in_flight: DEFAULT_IN_FLIGHT,
            jobs: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Config::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Config, emocot_core::Error> {
        toml::from_str(text).map_err(|e| emocot_core::Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            utt: self.lambda_utt,
            cate: self.lambda_cate,
            temperature: self.temperature,
        }
    }

    pub fn trim(&self) -> TrimConfig {
        TrimConfig {
            threshold_db: self.silence_threshold_db,
            ..TrimConfig::default()
        }
    }

    pub fn pitch(&self) -> PitchConfig {
        PitchConfig {
            min_hz: self.pitch_min_hz,
            max_hz: self.pitch_max_hz,
            threshold: self.voicing_threshold,
            ..PitchConfig::default()
        }
    }
}
