//! Run configuration: TOML file sections, seed resolution and scheme names.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::rpeak::{self, DetectorTrainConfig};
use crate::signal::SynthConfig;
use crate::train::TrainConfig;
use crate::verify::{self, Backend, SiameseTrainConfig, VerificationConfig};

pub const SEED_ENV: &str = "PULSEGATE_SEED";
pub const DEFAULT_SEED: u64 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub synth: SynthSection,
    pub ingest: IngestSection,
    pub detector: DetectorSection,
    pub identify: IdentifySection,
    pub verify: VerifySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            synth: SynthSection::default(),
            ingest: IngestSection::default(),
            detector: DetectorSection::default(),
            identify: IdentifySection::default(),
            verify: VerifySection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub subjects: usize,
    pub beats: usize,
    pub fs: f64,
    pub sessions: u32,
    pub session_drift: f64,
    pub noise_sigma_mv: Option<f64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            subjects: d.subjects,
            beats: d.beats,
            fs: d.fs,
            sessions: d.sessions,
            session_drift: d.session_drift,
            noise_sigma_mv: d.noise_sigma_mv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub format: InputFormat,
    /// Sampling rate of raw binary input.
    pub fs: Option<f64>,
    /// Raw units per millivolt.
    pub gain: f64,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            format: InputFormat::Csv,
            fs: None,
            gain: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    /// Empty disables deep supervision.
    pub aux_weights: Vec<f64>,
    pub threshold: f64,
    pub min_distance: usize,
    pub tolerance: usize,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorTrainConfig::default();
        DetectorSection {
            epochs: d.train.epochs,
            batch_size: d.train.batch_size,
            learning_rate: d.train.learning_rate,
            val_fraction: d.val_fraction,
            aux_weights: d.aux_weights,
            threshold: rpeak::DEFAULT_THRESHOLD,
            min_distance: rpeak::DEFAULT_MIN_DISTANCE,
            tolerance: rpeak::DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifySection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: Option<usize>,
    pub scheme: Scheme,
    /// Train and test session of the cross-session scheme.
    pub sessions: [u32; 2],
    /// Largest number of fused beats reported.
    pub fusion_k: usize,
}

impl Default for IdentifySection {
    fn default() -> Self {
        let t = TrainConfig::new(500, 0);
        IdentifySection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            patience: t.patience,
            scheme: Scheme::TrainValTest,
            sessions: [1, 2],
            fusion_k: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    pub smote_ratio: f64,
    pub smote_k: usize,
    pub matched_per_subject: usize,
    pub enroll_fraction: f64,
    pub fusion_k: usize,
    pub backend: Backend,
}

impl Default for VerifySection {
    fn default() -> Self {
        let h = SiameseTrainConfig::default();
        let v = VerificationConfig::default();
        VerifySection {
            epochs: h.train.epochs,
            batch_size: h.train.batch_size,
            learning_rate: h.train.learning_rate,
            val_fraction: h.val_fraction,
            smote_ratio: h.smote_ratio,
            smote_k: h.smote_k,
            matched_per_subject: verify::ProtocolConfig::default().matched_per_subject,
            enroll_fraction: v.enroll_fraction,
            fusion_k: v.k,
            backend: v.backend,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| {
                text[..s.start.min(text.len())].matches('\n').count() + 1
            });
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        artifact::config_hash(self)
    }
}

/// Flag, then config file, then `PULSEGATE_SEED`, then [`DEFAULT_SEED`].
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        None => Ok(DEFAULT_SEED),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    KFold(usize),
    TrainValTest,
    CrossSession,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "60-20-20" => Ok(Scheme::TrainValTest),
            "cross-session" => Ok(Scheme::CrossSession),
            _ => s
                .strip_suffix("fold")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k >= 2)
                .map(Scheme::KFold)
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "unknown scheme `{s}` (expected <k>fold, 60-20-20 or cross-session)"
                    ))
                }),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::KFold(k) => write!(f, "{k}fold"),
            Scheme::TrainValTest => f.write_str("60-20-20"),
            Scheme::CrossSession => f.write_str("cross-session"),
        }
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Int16le,
    Float32le,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(InputFormat::Csv),
            "int16le" => Ok(InputFormat::Int16le),
            "float32le" => Ok(InputFormat::Float32le),
            other => Err(Error::invalid(format!(
                "unknown input format `{other}` (expected csv, int16le or float32le)"
            ))),
        }
    }
}
