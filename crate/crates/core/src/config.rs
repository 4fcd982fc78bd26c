//! TOML run configuration with `[emitter]`, `[excitation]`, `[detectors]`
//! and `[run]` sections.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::{DetectorParams, EmitterParams, ExcitationParams};
use crate::error::{Error, Result};
use crate::quantum::AnalyzerSetting;
use crate::sim::{SimConfig, Topology};

/// An analyzer given either by basis letter or by waveplate angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnalyzerSpec {
    Named(String),
    Angles { qwp_rad: f64, hwp_rad: f64 },
}

impl AnalyzerSpec {
    pub fn setting(&self) -> Result<AnalyzerSetting> {
        match self {
            AnalyzerSpec::Named(s) => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => AnalyzerSetting::named(c),
                    _ => None,
                }
                .ok_or_else(|| Error::InvalidParameter(format!("unknown analyzer '{s}', expected one of H,V,D,A,R,L")))
            }
            AnalyzerSpec::Angles { qwp_rad, hwp_rad } => Ok(AnalyzerSetting::new(*qwp_rad, *hwp_rad)),
        }
    }
}

fn analyzer_h() -> AnalyzerSpec {
    AnalyzerSpec::Named("H".into())
}

fn default_topology() -> Topology {
    Topology::Cross
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub duration_s: f64,
    #[serde(default = "default_topology")]
    pub topology: Topology,
    #[serde(default = "analyzer_h")]
    pub analyzer_a: AnalyzerSpec,
    #[serde(default = "analyzer_h")]
    pub analyzer_b: AnalyzerSpec,
    #[serde(default)]
    pub record_sync: bool,
}

/// The seed is deliberately not part of the file; every randomized command
/// takes it explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub emitter: EmitterParams,
    #[serde(default)]
    pub excitation: ExcitationParams,
    #[serde(default)]
    pub detectors: DetectorParams,
    pub run: RunSection,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    format!("line {line}, column {col}")
                }
                None => "config".to_string(),
            };
            Error::parse(location, e.message().to_string())
        })?;
        cfg.to_sim_config(0)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { location, message } => Error::parse(format!("{}: {location}", path.display()), message),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidParameter(format!("cannot serialize config: {e}")))
    }

    pub fn to_sim_config(&self, seed: u64) -> Result<SimConfig> {
        let cfg = SimConfig {
            emitter: self.emitter.clone(),
            excitation: self.excitation.clone(),
            detectors: self.detectors.clone(),
            topology: self.run.topology,
            analyzer_a: self.run.analyzer_a.setting()?,
            analyzer_b: self.run.analyzer_b.setting()?,
            duration_s: self.run.duration_s,
            seed,
            record_sync: self.run.record_sync,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
