//! Flat TOML configuration with defaults and validation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::Modality;
use crate::error::{DeepKeyError, Result};
use crate::gatekeeper::GateParams;
use crate::identifier::IdentifierConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub filter_order: usize,
    pub hidden: usize,
    pub dense_layers: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub eeg_iterations: usize,
    pub gait_iterations: usize,
    /// Windows per Adam step; 0 trains on the full set each step.
    pub batch_size: usize,
    pub knn_k: usize,
    pub nu: f64,
    /// RBF width of the gate; unset selects `1 / (d * var)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub gate_tolerance: f64,
    /// Genuine instances kept (evenly strided) for gate training.
    pub gate_max_train: usize,
    /// Feed the gate delta-band EEG instead of raw EEG.
    pub gate_input_filtered: bool,
    pub window: usize,
    pub gate_block: usize,
    pub train_split: f64,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            band_low_hz: 0.5,
            band_high_hz: 3.5,
            filter_order: 3,
            hidden: 64,
            dense_layers: 2,
            learning_rate: 0.001,
            lambda: 0.001,
            eeg_iterations: 1000,
            gait_iterations: 1000,
            batch_size: 128,
            knn_k: 3,
            nu: 0.15,
            gamma: None,
            gate_tolerance: 1e-4,
            gate_max_train: 2000,
            gate_input_filtered: false,
            window: 10,
            gate_block: 200,
            train_split: 0.875,
            seed: 0,
        }
    }
}

fn bad(msg: String) -> DeepKeyError {
    DeepKeyError::Config(msg)
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let nyquist = Modality::Eeg.sample_rate() / 2.0;
        if !(self.band_low_hz > 0.0 && self.band_low_hz < self.band_high_hz && self.band_high_hz < nyquist) {
            return Err(bad(format!(
                "band [{}, {}] Hz must satisfy 0 < low < high < {nyquist}",
                self.band_low_hz, self.band_high_hz
            )));
        }
        if self.filter_order == 0 || self.hidden == 0 || self.dense_layers == 0 {
            return Err(bad("filter_order, hidden and dense_layers must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(bad(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.knn_k == 0 {
            return Err(bad("knn_k must be at least 1".into()));
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(bad(format!("nu must lie in (0, 1), got {}", self.nu)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(bad(format!("gamma must be positive, got {g}")));
            }
        }
        if !(self.gate_tolerance > 0.0) {
            return Err(bad("gate_tolerance must be positive".into()));
        }
        if self.gate_max_train < 10 {
            return Err(bad("gate_max_train must be at least 10".into()));
        }
        if self.window == 0 || self.gate_block == 0 {
            return Err(bad("window and gate_block must be at least 1".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(bad(format!("seed must be at most {}", i64::MAX)));
        }
        if !(self.train_split > 0.0 && self.train_split <= 1.0) {
            return Err(bad(format!("train_split must lie in (0, 1], got {}", self.train_split)));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn identifier_config(&self, modality: Modality) -> IdentifierConfig {
        IdentifierConfig {
            hidden: self.hidden,
            dense_layers: self.dense_layers,
            learning_rate: self.learning_rate,
            lambda: self.lambda,
            iterations: match modality {
                Modality::Eeg => self.eeg_iterations,
                Modality::Gait => self.gait_iterations,
            },
            batch_size: self.batch_size,
            k: self.knn_k,
            seed: self.seed,
        }
    }

    pub fn gate_params(&self) -> GateParams {
        GateParams {
            nu: self.nu,
            gamma: self.gamma,
            tolerance: self.gate_tolerance,
        }
    }
}
