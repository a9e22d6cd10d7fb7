//! Experiment configuration (JSON).
//!
//! Every field is optional except `modality`; `{"modality": "spc"}` is a
//! complete config. Mismatch parameters are given flat by name and must
//! belong to the configured modality.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::calibration::CalibrationConfig;
use crate::error::{Error, Result};
use crate::mismatch::{MismatchParams, NoiseModel, DEFAULT_PHOTON_PEAK, DEFAULT_READ_SIGMA};
use crate::operators::Operator;
use crate::protocol::ScenarioId;
use crate::solvers::{FistaTvConfig, GapTvConfig, Method};
use crate::tensors::Modality;

/// Largest accepted |dx|, |dy| in pixels.
pub const MAX_SHIFT_PX: f64 = 8.0;
/// Largest accepted |theta| in degrees.
pub const MAX_ROTATION_DEG: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Bands or frames; defaults to 8 for CASSI/CACTI and 1 for SPC.
    pub channels: Option<usize>,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            count: 3,
            height: 32,
            width: 32,
            channels: None,
            seed: 1,
        }
    }
}

impl PhantomSpec {
    pub fn channels_for(&self, modality: Modality) -> usize {
        self.channels.unwrap_or(match modality {
            Modality::Spc => 1,
            _ => 8,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    Phantom(PhantomSpec),
    /// Array files holding (channels, height, width) or (height, width).
    Files(Vec<PathBuf>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Poisson-Gaussian for CASSI, the mismatch block's sigma for CACTI/SPC.
    Default {},
    None {},
    GaussianOnly {
        sigma: f64,
    },
    PoissonGaussian {
        #[serde(default = "default_peak")]
        photon_peak: f64,
        #[serde(default = "default_read_sigma")]
        read_sigma: f64,
    },
}

fn default_peak() -> f64 {
    DEFAULT_PHOTON_PEAK
}

fn default_read_sigma() -> f64 {
    DEFAULT_READ_SIGMA
}

impl NoiseSpec {
    pub fn model(&self, mismatch: &MismatchParams, nominal: &Operator) -> NoiseModel {
        match *self {
            NoiseSpec::Default {} => mismatch.default_noise(nominal, 0),
            NoiseSpec::None {} => NoiseModel::gaussian(0.0, 0),
            NoiseSpec::GaussianOnly { sigma } => NoiseModel::gaussian(sigma, 0),
            NoiseSpec::PoissonGaussian { photon_peak, read_sigma } => {
                NoiseModel::poisson_gaussian(photon_peak, read_sigma, 0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub id: String,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub modality: Modality,
    pub scenes: SceneSource,
    /// Seed for the coded masks or the SPC matrix.
    pub mask_seed: u64,
    /// SPC rows as a fraction of pixels.
    pub sampling_ratio: f64,
    pub mismatch: MismatchParams,
    pub noise: NoiseSpec,
    pub methods: Vec<MethodSpec>,
    pub scenarios: Vec<ScenarioId>,
    pub calibration: CalibrationConfig,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    modality: Modality,
    #[serde(default)]
    scenes: Option<SceneSource>,
    #[serde(default)]
    mask_seed: Option<u64>,
    #[serde(default)]
    sampling_ratio: Option<f64>,
    #[serde(default)]
    mismatch: Map<String, Value>,
    #[serde(default)]
    noise: Option<NoiseSpec>,
    #[serde(default)]
    methods: Option<Vec<MethodSpec>>,
    #[serde(default)]
    scenarios: Option<Vec<ScenarioId>>,
    #[serde(default)]
    calibration: Option<CalibrationConfig>,
    #[serde(default)]
    master_seed: Option<u64>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Fully defaulted config for a modality.
    pub fn defaults(modality: Modality) -> Self {
        ExperimentConfig::from_value(serde_json::json!({ "modality": modality.as_str() }))
            .expect("defaults are valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let raw: RawConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
        })?;
        let modality = raw.modality;
        let mut mismatch = MismatchParams::default_for(modality);
        for (name, v) in &raw.mismatch {
            let path = format!("mismatch.{name}");
            if !MismatchParams::field_names(modality).contains(&name.as_str()) {
                return Err(Error::config(
                    path,
                    format!(
                        "not a {modality} mismatch parameter (expected one of {:?})",
                        MismatchParams::field_names(modality)
                    ),
                ));
            }
            let x = v
                .as_f64()
                .ok_or_else(|| Error::config(path.clone(), format!("expected a number, got {v}")))?;
            mismatch.set(name, x).map_err(|e| Error::config(path, e.to_string()))?;
        }
        validate_mismatch(&mismatch)?;

        let default_method = match modality {
            Modality::Spc => MethodSpec {
                id: "fista_tv".into(),
                method: Method::FistaTv(FistaTvConfig::default()),
            },
            _ => MethodSpec {
                id: "gap_tv".into(),
                method: Method::GapTv(GapTvConfig::default()),
            },
        };
        let cfg = ExperimentConfig {
            modality,
            scenes: raw.scenes.unwrap_or(SceneSource::Phantom(PhantomSpec::default())),
            mask_seed: raw.mask_seed.unwrap_or(1000),
            sampling_ratio: raw.sampling_ratio.unwrap_or(0.25),
            mismatch,
            noise: raw.noise.unwrap_or(NoiseSpec::Default {}),
            methods: raw.methods.unwrap_or_else(|| vec![default_method]),
            scenarios: raw.scenarios.unwrap_or_else(|| ScenarioId::ALL.to_vec()),
            calibration: raw.calibration.unwrap_or_default(),
            master_seed: raw.master_seed.unwrap_or(0),
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("results")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        match &self.scenes {
            SceneSource::Phantom(p) => {
                if p.count == 0 {
                    return Err(Error::config("scenes.phantom.count", "must be at least 1"));
                }
                if p.height < 16 || p.width < 16 {
                    return Err(Error::config("scenes.phantom", "height and width must be at least 16"));
                }
                let c = p.channels_for(self.modality);
                if c == 0 || (self.modality == Modality::Spc && c != 1) {
                    return Err(Error::config(
                        "scenes.phantom.channels",
                        format!("{c} channels is invalid for {}", self.modality),
                    ));
                }
            }
            SceneSource::Files(files) if files.is_empty() => {
                return Err(Error::config("scenes.files", "at least one file is required"));
            }
            SceneSource::Files(_) => {}
        }
        if !(self.sampling_ratio > 0.0 && self.sampling_ratio <= 1.0) {
            return Err(Error::config("sampling_ratio", "must be in (0, 1]"));
        }
        if let NoiseSpec::GaussianOnly { sigma } = self.noise {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::config("noise.sigma", "must be finite and non-negative"));
            }
        }
        if let NoiseSpec::PoissonGaussian { photon_peak, read_sigma } = self.noise {
            if !(photon_peak > 0.0 && photon_peak.is_finite()) {
                return Err(Error::config("noise.photon_peak", "must be positive"));
            }
            if !(read_sigma >= 0.0 && read_sigma.is_finite()) {
                return Err(Error::config("noise.read_sigma", "must be finite and non-negative"));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "at least one method is required"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            let path = format!("methods[{i}]");
            if m.id.is_empty() || !m.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::config(
                    format!("{path}.id"),
                    "ids must be non-empty and use only [A-Za-z0-9_-]",
                ));
            }
            if self.methods[..i].iter().any(|o| o.id == m.id) {
                return Err(Error::config(format!("{path}.id"), format!("duplicate method id `{}`", m.id)));
            }
            let fits = match (self.modality, &m.method) {
                (Modality::Spc, Method::FistaTv(_)) => true,
                (Modality::Spc, _) => false,
                _ => true,
            };
            if !fits {
                return Err(Error::config(
                    format!("{path}.method.kind"),
                    "spc supports only fista_tv",
                ));
            }
            if m.method.iterations() == 0 {
                return Err(Error::config(format!("{path}.method.iterations"), "must be at least 1"));
            }
        }
        if self.scenarios.is_empty() {
            return Err(Error::config("scenarios", "at least one scenario is required"));
        }
        self.calibration
            .validate(self.modality)
            .map_err(|e| Error::config("calibration", inner_message(e)))?;
        Ok(())
    }

    /// The config as JSON, in the same schema `from_value` reads.
    pub fn to_value(&self) -> Value {
        let mut mismatch = Map::new();
        for name in MismatchParams::field_names(self.modality) {
            mismatch.insert((*name).into(), self.mismatch.get(name).expect("known field").into());
        }
        serde_json::json!({
            "modality": self.modality,
            "scenes": self.scenes,
            "mask_seed": self.mask_seed,
            "sampling_ratio": self.sampling_ratio,
            "mismatch": mismatch,
            "noise": self.noise,
            "methods": self.methods,
            "scenarios": self.scenarios,
            "calibration": self.calibration,
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
        })
    }
}

fn inner_message(e: Error) -> String {
    match e {
        Error::Parameter(m) => m,
        other => other.to_string(),
    }
}

fn validate_mismatch(p: &MismatchParams) -> Result<()> {
    let check = |name: &str, ok: fn(f64) -> bool, rule: &str| -> Result<()> {
        match p.get(name) {
            Ok(v) if !ok(v) => Err(Error::config(format!("mismatch.{name}"), format!("{v} out of range ({rule})"))),
            _ => Ok(()),
        }
    };
    check("dx", |v| v.abs() <= MAX_SHIFT_PX, "|dx| <= 8 px")?;
    check("dy", |v| v.abs() <= MAX_SHIFT_PX, "|dy| <= 8 px")?;
    check("theta_deg", |v| v.abs() <= MAX_ROTATION_DEG, "|theta| <= 5 deg")?;
    check("a1", |v| v > 0.0 && v <= 16.0, "0 < a1 <= 16")?;
    check("alpha_deg", |v| v.abs() <= 45.0, "|alpha| <= 45 deg")?;
    check("dt", |v| (0.0..=1.0).contains(&v), "0 <= dt <= 1")?;
    check("eta", |v| v > 0.0 && v <= 1.0, "0 < eta <= 1")?;
    check("gain", |v| v > 0.0 && v.is_finite(), "gain > 0")?;
    check("offset", |v| v.is_finite(), "finite")?;
    check("sigma_n", |v| v >= 0.0 && v.is_finite(), "sigma_n >= 0")?;
    check("alpha_drift", |v| v >= 0.0 && v.is_finite(), "alpha_drift >= 0")?;
    check("sigma_y", |v| v >= 0.0 && v.is_finite(), "sigma_y >= 0")?;
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read config file: {e}")))?;
    ExperimentConfig::from_json_str(&text).map_err(|e| match e {
        Error::Config { path: field, message } => Error::config(field, format!("{message} (in {})", path.display())),
        other => other,
    })
}
