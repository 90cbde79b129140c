//! TOML configuration with flag overrides. Keys mirror the library's
//! `DecoderConfig` and `MatchingConfig` field names; command-line flags win
//! over file values, which win over defaults.

use crate::commands::Failure;
use ofkit::decoder::DecoderConfig;
use ofkit::metrics::MatchingConfig;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub decoder: DecoderSection,
    #[serde(default)]
    pub matching: MatchingSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSection {
    pub onset_threshold: Option<f64>,
    pub frame_threshold: Option<f64>,
    pub velocity_scale: Option<f64>,
    pub velocity_bias: Option<f64>,
    /// Decode strategy name ("onset-gated" or "frames-only").
    pub strategy: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingSection {
    pub onset_tolerance_s: Option<f64>,
    pub offset_ratio: Option<f64>,
    pub offset_min_tolerance_s: Option<f64>,
    pub velocity_tau: Option<f64>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::read(path, &e))?;
    toml::from_str(&text).map_err(|e| Failure {
        exit_code: 1,
        message: format!("config {}: {e}", path.display()),
    })
}

impl FileConfig {
    pub fn decoder_config(
        &self,
        onset_threshold: Option<f64>,
        frame_threshold: Option<f64>,
    ) -> DecoderConfig {
        let defaults = DecoderConfig::default();
        DecoderConfig {
            onset_threshold: onset_threshold
                .or(self.decoder.onset_threshold)
                .unwrap_or(defaults.onset_threshold),
            frame_threshold: frame_threshold
                .or(self.decoder.frame_threshold)
                .unwrap_or(defaults.frame_threshold),
            velocity_scale: self
                .decoder
                .velocity_scale
                .unwrap_or(defaults.velocity_scale),
            velocity_bias: self.decoder.velocity_bias.unwrap_or(defaults.velocity_bias),
        }
    }

    /// `--no-onset-gate` forces "frames-only" regardless of the file.
    pub fn strategy_name(&self, no_onset_gate: bool) -> String {
        if no_onset_gate {
            return "frames-only".to_string();
        }
        self.decoder
            .strategy
            .clone()
            .unwrap_or_else(|| "onset-gated".to_string())
    }

    pub fn matching_config(
        &self,
        onset_tolerance: Option<f64>,
        velocity_tau: Option<f64>,
    ) -> MatchingConfig {
        let defaults = MatchingConfig::default();
        MatchingConfig {
            onset_tolerance_s: onset_tolerance
                .or(self.matching.onset_tolerance_s)
                .unwrap_or(defaults.onset_tolerance_s),
            offset_ratio: self.matching.offset_ratio.unwrap_or(defaults.offset_ratio),
            offset_min_tolerance_s: self
                .matching
                .offset_min_tolerance_s
                .unwrap_or(defaults.offset_min_tolerance_s),
            velocity_tau: velocity_tau
                .or(self.matching.velocity_tau)
                .unwrap_or(defaults.velocity_tau),
            ..defaults
        }
    }
}
