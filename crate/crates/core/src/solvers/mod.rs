//! Classical reconstruction: GAP-TV for coded snapshot systems, FISTA-TV for
//! the single-pixel camera, and a denoiser seam for plug-and-play variants.

mod denoise;
mod fista;
mod gap;
mod power;
mod tv;

pub use denoise::{Denoiser, IdentityDenoiser, MedianDenoiser, TvDenoiser};
pub use fista::{fista_tv, fista_tv_traced, FistaOutcome, FistaTvConfig};
pub use gap::{gap_plugin, gap_tv, gap_tv_traced, GapOutcome, GapTvConfig, SnapshotOperator, DIAGONAL_GUARD};
pub use power::{power_iteration_spectral_norm, spectral_norm_with};
pub use tv::{anisotropic_tv, anisotropic_tv_2d, tv_denoise, tv_denoise_2d};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::Operator;
use crate::tensors::{SceneCube, Snapshot};

/// A reconstruction method and its settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    GapTv(GapTvConfig),
    /// GAP with TV up to `switch_iteration`, the reference median plug-in after.
    GapMedian {
        #[serde(default)]
        gap: GapTvConfig,
        switch_iteration: usize,
    },
    FistaTv(FistaTvConfig),
}

impl Method {
    pub fn iterations(&self) -> usize {
        match self {
            Method::GapTv(c) => c.iterations,
            Method::GapMedian { gap, .. } => gap.iterations,
            Method::FistaTv(c) => c.iterations,
        }
    }

    /// Same method with the iteration budget scaled by `fraction`, floored
    /// at `min_iterations`.
    pub fn with_budget(&self, fraction: f64, min_iterations: usize) -> Method {
        let scale = |n: usize| ((n as f64 * fraction).ceil() as usize).max(min_iterations);
        match *self {
            Method::GapTv(mut c) => {
                c.iterations = scale(c.iterations);
                Method::GapTv(c)
            }
            Method::GapMedian { mut gap, switch_iteration } => {
                let full = gap.iterations.max(1) as f64;
                gap.iterations = scale(gap.iterations);
                let switch = (switch_iteration as f64 / full * gap.iterations as f64).round() as usize;
                Method::GapMedian {
                    gap,
                    switch_iteration: switch,
                }
            }
            Method::FistaTv(mut c) => {
                c.iterations = scale(c.iterations);
                Method::FistaTv(c)
            }
        }
    }

    pub fn default_for(op: &Operator) -> Method {
        match op {
            Operator::Spc(_) => Method::FistaTv(FistaTvConfig::default()),
            _ => Method::GapTv(GapTvConfig::default()),
        }
    }
}

/// Reconstructs `y` with `op` as the assumed forward model.
///
/// For CACTI the measurement is first pre-whitened with the operator's own
/// radiometry, `(y - offset) / gain`, and the solver sees unit gain; with a
/// nominal operator (unit gain, zero offset) this is a no-op.
pub fn reconstruct(y: &Snapshot, op: &Operator, method: &Method) -> Result<SceneCube> {
    if y.modality() != op.as_linear().modality() {
        return Err(Error::dim(format!(
            "{} measurement given to a {} operator",
            y.modality(),
            op.as_linear().modality()
        )));
    }
    match (op, method) {
        (Operator::Cassi(op), Method::GapTv(cfg)) => gap_tv(y, op, cfg),
        (Operator::Cassi(op), Method::GapMedian { gap, switch_iteration }) => {
            gap_plugin(y, op, gap, &MedianDenoiser, *switch_iteration)
        }
        (Operator::Cacti(op), _) => {
            let whitened = if op.gain == 1.0 && op.offset == 0.0 {
                y.clone()
            } else {
                Snapshot::new(y.data().mapv(|v| (v - op.offset) / op.gain), y.modality())?
            };
            let linear = op.without_radiometry();
            match method {
                Method::GapTv(cfg) => gap_tv(&whitened, &linear, cfg),
                Method::GapMedian { gap, switch_iteration } => {
                    gap_plugin(&whitened, &linear, gap, &MedianDenoiser, *switch_iteration)
                }
                Method::FistaTv(cfg) => fista_tv(&whitened, &linear, cfg),
            }
        }
        (Operator::Cassi(op), Method::FistaTv(cfg)) => fista_tv(y, op, cfg),
        (Operator::Spc(op), Method::FistaTv(cfg)) => fista_tv(y, op, cfg),
        (Operator::Spc(_), _) => Err(Error::param(
            "GAP needs a pixel-wise coded operator; use fista_tv for SPC",
        )),
    }
}
