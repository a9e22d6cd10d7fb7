//! Parametric mismatch: builds the physical operator from a nominal one, and
//! injects measurement noise.

use ndarray::{Array1, ArrayD};
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{resample_mask, CactiOperator, CassiOperator, Operator, SpcOperator, NOMINAL_DISPERSION_STEP};
use crate::rng;
use crate::tensors::{MaskPlane, Modality, Snapshot};

/// Mask misalignment plus dispersion drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CassiMismatch {
    pub dx: f64,
    pub dy: f64,
    #[serde(rename = "theta_deg")]
    pub theta: f64,
    pub a1: f64,
    #[serde(rename = "alpha_deg")]
    pub alpha: f64,
}

impl Default for CassiMismatch {
    fn default() -> Self {
        CassiMismatch {
            dx: 0.5,
            dy: 0.3,
            theta: 0.1,
            a1: 2.02,
            alpha: 0.15,
        }
    }
}

impl CassiMismatch {
    /// Parameters that reproduce the nominal operator.
    pub fn none() -> Self {
        CassiMismatch {
            dx: 0.0,
            dy: 0.0,
            theta: 0.0,
            a1: NOMINAL_DISPERSION_STEP,
            alpha: 0.0,
        }
    }
}

/// Spatial, temporal and radiometric CACTI errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CactiMismatch {
    pub dx: f64,
    pub dy: f64,
    #[serde(rename = "theta_deg")]
    pub theta: f64,
    /// Clock offset as a fraction of the frame period.
    pub dt: f64,
    /// Duty cycle, applied as a transmittance scale.
    pub eta: f64,
    #[serde(rename = "gain")]
    pub g: f64,
    #[serde(rename = "offset")]
    pub o: f64,
    /// Noise std in 8-bit detector counts; see [`CactiMismatch::noise_sigma`].
    pub sigma_n: f64,
}

impl Default for CactiMismatch {
    fn default() -> Self {
        CactiMismatch {
            dx: 0.5,
            dy: 0.3,
            theta: 0.1,
            dt: 0.05,
            eta: 0.95,
            g: 1.02,
            o: 0.002,
            sigma_n: 1.0,
        }
    }
}

impl CactiMismatch {
    pub fn none() -> Self {
        CactiMismatch {
            dx: 0.0,
            dy: 0.0,
            theta: 0.0,
            dt: 0.0,
            eta: 1.0,
            g: 1.0,
            o: 0.0,
            sigma_n: 0.0,
        }
    }

    /// `sigma_n` rescaled from 8-bit counts to the `[0, frames]` measurement range.
    pub fn noise_sigma(&self, frames: usize) -> f64 {
        self.sigma_n / 255.0 * frames as f64
    }
}

/// Exponential row-gain drift of a single-pixel camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpcMismatch {
    pub alpha_drift: f64,
    pub sigma_y: f64,
}

impl Default for SpcMismatch {
    fn default() -> Self {
        SpcMismatch {
            alpha_drift: 0.0015,
            sigma_y: 0.03,
        }
    }
}

impl SpcMismatch {
    pub fn none() -> Self {
        SpcMismatch {
            alpha_drift: 0.0,
            sigma_y: 0.0,
        }
    }
}

pub fn perturb_cassi(nominal: &CassiOperator, p: &CassiMismatch) -> Result<CassiOperator> {
    let mask = resample_mask(&nominal.mask, p.dx, p.dy, p.theta)?;
    CassiOperator::new(mask, nominal.bands, nominal.detector_step, p.a1, p.alpha)
}

/// Each mask becomes `eta * T(dx, dy, theta)[(1 - dt) C_b + dt C_{b+1}]`,
/// the last frame blending with itself.
pub fn perturb_cacti(nominal: &CactiOperator, p: &CactiMismatch) -> Result<CactiOperator> {
    let stack = nominal.mask_stack();
    let frames = nominal.frames();
    let mut masks = Vec::with_capacity(frames);
    for b in 0..frames {
        let next = (b + 1).min(frames - 1);
        let current = stack.index_axis(ndarray::Axis(0), b);
        let blended = if p.dt == 0.0 {
            current.to_owned()
        } else {
            let following = stack.index_axis(ndarray::Axis(0), next);
            &current * (1.0 - p.dt) + &following * p.dt
        };
        let blended = MaskPlane::new(blended.mapv(|v| v.clamp(0.0, 1.0)))?;
        let moved = resample_mask(&blended, p.dx, p.dy, p.theta)?;
        let scaled = if p.eta == 1.0 {
            moved
        } else {
            MaskPlane::new(moved.data().mapv(|v| (v * p.eta).clamp(0.0, 1.0)))?
        };
        masks.push(scaled);
    }
    CactiOperator::new(&masks, p.g, p.o)
}

/// Row `i` (zero-based) gets gain `exp(-alpha_drift * i)`.
pub fn perturb_spc(nominal: &SpcOperator, p: &SpcMismatch) -> Result<SpcOperator> {
    let gains = drift_gains(nominal.rows(), p.alpha_drift);
    nominal.clone().with_row_gains(gains)
}

pub(crate) fn drift_gains(rows: usize, alpha: f64) -> Array1<f64> {
    Array1::from_shape_fn(rows, |i| (-alpha * i as f64).exp())
}

/// A mismatch vector for any modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MismatchParams {
    Cassi(CassiMismatch),
    Cacti(CactiMismatch),
    Spc(SpcMismatch),
}

impl MismatchParams {
    /// Default (paper) mismatch for a modality.
    pub fn default_for(modality: Modality) -> Self {
        match modality {
            Modality::Cassi => MismatchParams::Cassi(CassiMismatch::default()),
            Modality::Cacti => MismatchParams::Cacti(CactiMismatch::default()),
            Modality::Spc => MismatchParams::Spc(SpcMismatch::default()),
        }
    }

    /// Parameters that leave the nominal operator unchanged.
    pub fn none_for(modality: Modality) -> Self {
        match modality {
            Modality::Cassi => MismatchParams::Cassi(CassiMismatch::none()),
            Modality::Cacti => MismatchParams::Cacti(CactiMismatch::none()),
            Modality::Spc => MismatchParams::Spc(SpcMismatch::none()),
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            MismatchParams::Cassi(_) => Modality::Cassi,
            MismatchParams::Cacti(_) => Modality::Cacti,
            MismatchParams::Spc(_) => Modality::Spc,
        }
    }

    /// Config field names accepted by [`MismatchParams::get`] and [`MismatchParams::set`].
    pub fn field_names(modality: Modality) -> &'static [&'static str] {
        match modality {
            Modality::Cassi => &["dx", "dy", "theta_deg", "a1", "alpha_deg"],
            Modality::Cacti => &["dx", "dy", "theta_deg", "dt", "eta", "gain", "offset", "sigma_n"],
            Modality::Spc => &["alpha_drift", "sigma_y"],
        }
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        let v = match (self, name) {
            (MismatchParams::Cassi(p), "dx") => p.dx,
            (MismatchParams::Cassi(p), "dy") => p.dy,
            (MismatchParams::Cassi(p), "theta_deg") => p.theta,
            (MismatchParams::Cassi(p), "a1") => p.a1,
            (MismatchParams::Cassi(p), "alpha_deg") => p.alpha,
            (MismatchParams::Cacti(p), "dx") => p.dx,
            (MismatchParams::Cacti(p), "dy") => p.dy,
            (MismatchParams::Cacti(p), "theta_deg") => p.theta,
            (MismatchParams::Cacti(p), "dt") => p.dt,
            (MismatchParams::Cacti(p), "eta") => p.eta,
            (MismatchParams::Cacti(p), "gain") => p.g,
            (MismatchParams::Cacti(p), "offset") => p.o,
            (MismatchParams::Cacti(p), "sigma_n") => p.sigma_n,
            (MismatchParams::Spc(p), "alpha_drift") => p.alpha_drift,
            (MismatchParams::Spc(p), "sigma_y") => p.sigma_y,
            _ => return Err(self.unknown(name)),
        };
        Ok(v)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let err = self.unknown(name);
        let slot = match (self, name) {
            (MismatchParams::Cassi(p), "dx") => &mut p.dx,
            (MismatchParams::Cassi(p), "dy") => &mut p.dy,
            (MismatchParams::Cassi(p), "theta_deg") => &mut p.theta,
            (MismatchParams::Cassi(p), "a1") => &mut p.a1,
            (MismatchParams::Cassi(p), "alpha_deg") => &mut p.alpha,
            (MismatchParams::Cacti(p), "dx") => &mut p.dx,
            (MismatchParams::Cacti(p), "dy") => &mut p.dy,
            (MismatchParams::Cacti(p), "theta_deg") => &mut p.theta,
            (MismatchParams::Cacti(p), "dt") => &mut p.dt,
            (MismatchParams::Cacti(p), "eta") => &mut p.eta,
            (MismatchParams::Cacti(p), "gain") => &mut p.g,
            (MismatchParams::Cacti(p), "offset") => &mut p.o,
            (MismatchParams::Cacti(p), "sigma_n") => &mut p.sigma_n,
            (MismatchParams::Spc(p), "alpha_drift") => &mut p.alpha_drift,
            (MismatchParams::Spc(p), "sigma_y") => &mut p.sigma_y,
            _ => return Err(err),
        };
        *slot = value;
        Ok(())
    }

    fn unknown(&self, name: &str) -> Error {
        Error::param(format!("`{name}` is not a {} mismatch parameter", self.modality()))
    }

    /// Builds the perturbed operator from a nominal one of the same modality.
    pub fn apply(&self, nominal: &Operator) -> Result<Operator> {
        match (self, nominal) {
            (MismatchParams::Cassi(p), Operator::Cassi(op)) => Ok(perturb_cassi(op, p)?.into()),
            (MismatchParams::Cacti(p), Operator::Cacti(op)) => Ok(perturb_cacti(op, p)?.into()),
            (MismatchParams::Spc(p), Operator::Spc(op)) => Ok(perturb_spc(op, p)?.into()),
            _ => Err(Error::param(format!(
                "{} mismatch cannot perturb a {} operator",
                self.modality(),
                nominal.as_linear().modality()
            ))),
        }
    }

    /// The modality's default measurement noise: Poisson-Gaussian at
    /// 1e5 photons / 0.01 read noise for CASSI, Gaussian with the mismatch
    /// vector's own sigma for CACTI and SPC.
    pub fn default_noise(&self, nominal: &Operator, seed: u64) -> NoiseModel {
        match (self, nominal) {
            (MismatchParams::Cassi(_), _) => NoiseModel::poisson_gaussian(DEFAULT_PHOTON_PEAK, DEFAULT_READ_SIGMA, seed),
            (MismatchParams::Cacti(p), Operator::Cacti(op)) => NoiseModel::gaussian(p.noise_sigma(op.frames()), seed),
            (MismatchParams::Cacti(p), _) => NoiseModel::gaussian(p.noise_sigma(1), seed),
            (MismatchParams::Spc(p), _) => NoiseModel::gaussian(p.sigma_y, seed),
        }
    }
}

pub const DEFAULT_PHOTON_PEAK: f64 = 1e5;
pub const DEFAULT_READ_SIGMA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    GaussianOnly,
    PoissonGaussian,
}

/// Measurement noise settings. For `GaussianOnly`, `read_sigma` is the std.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub photon_peak: f64,
    pub read_sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        NoiseModel {
            kind: NoiseKind::GaussianOnly,
            photon_peak: 0.0,
            read_sigma: sigma,
            seed,
        }
    }

    pub fn poisson_gaussian(photon_peak: f64, read_sigma: f64, seed: u64) -> Self {
        NoiseModel {
            kind: NoiseKind::PoissonGaussian,
            photon_peak,
            read_sigma,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Adds noise to a clean measurement.
///
/// Poisson-Gaussian: the signal is scaled so its maximum maps to
/// `photon_peak` counts, Poisson-sampled, scaled back, then read noise with
/// std `read_sigma` (measurement units) is added.
pub fn add_noise(y: &Snapshot, model: &NoiseModel) -> Result<Snapshot> {
    if !(model.read_sigma >= 0.0) {
        return Err(Error::param(format!("read sigma must be >= 0, got {}", model.read_sigma)));
    }
    let mut rng = rng::seeded(model.seed);
    let mut data: ArrayD<f64> = y.data().clone();
    if model.kind == NoiseKind::PoissonGaussian {
        if !(model.photon_peak > 0.0 && model.photon_peak.is_finite()) {
            return Err(Error::param(format!(
                "photon peak must be positive, got {}",
                model.photon_peak
            )));
        }
        let max = data.iter().cloned().fold(0.0_f64, f64::max);
        if max > 0.0 {
            let to_counts = model.photon_peak / max;
            for v in data.iter_mut() {
                let lambda = (*v * to_counts).max(0.0);
                let counts = if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(&mut rng)
                } else {
                    0.0
                };
                *v = counts / to_counts;
            }
        }
    }
    if model.read_sigma > 0.0 {
        let normal = Normal::new(0.0, model.read_sigma).expect("finite sigma");
        for v in data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Snapshot::new(data, y.modality())
}
