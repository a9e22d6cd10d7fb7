//! FISTA with a TV proximal step.
//!
//! Uses the monotone variant (MFISTA): the accepted iterate is the better of
//! the proximal point and the previous iterate, so the objective never
//! increases even though the TV prox is solved inexactly.

use ndarray::{Array3, ArrayD, Zip};
use serde::{Deserialize, Serialize};

use super::power::power_iteration_spectral_norm;
use super::tv::{anisotropic_tv, tv_denoise};
use crate::error::{Error, Result};
use crate::operators::{check_measurement, LinearOperator};
use crate::tensors::{SceneCube, Snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FistaTvConfig {
    pub iterations: usize,
    pub lambda: f64,
    /// Gradient step; `None` means `1/L` with `L = ‖Φ‖²` from power iteration.
    pub step: Option<f64>,
    pub tv_inner_iters: usize,
}

impl Default for FistaTvConfig {
    fn default() -> Self {
        FistaTvConfig {
            iterations: 500,
            lambda: 0.005,
            step: None,
            tv_inner_iters: 10,
        }
    }
}

impl FistaTvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::param("FISTA needs at least one iteration"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda must be a finite non-negative number"));
        }
        if let Some(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::param("step must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FistaOutcome {
    pub estimate: SceneCube,
    /// `½‖Φx_k - y‖² + λ·TV(x_k)` for k = 0..=iterations (`x_0 = 0`).
    pub objective_history: Vec<f64>,
}

fn objective(op: &dyn LinearOperator, y: &ArrayD<f64>, x: &Array3<f64>, lambda: f64) -> f64 {
    let fx = op.apply(x);
    let data: f64 = fx.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * data + lambda * anisotropic_tv(x)
}

pub fn fista_tv(y: &Snapshot, op: &dyn LinearOperator, cfg: &FistaTvConfig) -> Result<SceneCube> {
    Ok(fista_tv_traced(y, op, cfg)?.estimate)
}

pub fn fista_tv_traced(y: &Snapshot, op: &dyn LinearOperator, cfg: &FistaTvConfig) -> Result<FistaOutcome> {
    cfg.validate()?;
    check_measurement(op, y.data())?;
    let step = match cfg.step {
        Some(s) => s,
        None => {
            let norm = power_iteration_spectral_norm(op);
            if !(norm > 0.0) {
                return Err(Error::DegenerateOperator { guarded: 0, total: 0 });
            }
            1.0 / (norm * norm)
        }
    };
    let yd = y.data();
    let prox_weight = cfg.lambda * step;

    let mut x = Array3::<f64>::zeros(op.scene_dim());
    let mut x_prev = x.clone();
    let mut probe = x.clone();
    let mut t = 1.0_f64;
    let mut f_x = objective(op, yd, &x, cfg.lambda);
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    history.push(f_x);

    for k in 1..=cfg.iterations {
        let mut residual = op.apply(&probe);
        Zip::from(&mut residual).and(yd).for_each(|r, &b| *r -= b);
        let grad = op.apply_adjoint(&residual);
        let z = tv_denoise(&(&probe - &(grad * step)), prox_weight, cfg.tv_inner_iters);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: k });
        }
        let f_z = objective(op, yd, &z, cfg.lambda);
        if !f_z.is_finite() {
            return Err(Error::Divergence { iteration: k });
        }
        x_prev.assign(&x);
        if f_z <= f_x {
            x.assign(&z);
            f_x = f_z;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let (a, b) = (t / t_next, (t - 1.0) / t_next);
        Zip::from(&mut probe)
            .and(&x)
            .and(&z)
            .and(&x_prev)
            .for_each(|p, &x, &z, &xp| *p = x + a * (z - x) + b * (x - xp));
        t = t_next;
        history.push(f_x);
    }

    x.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(FistaOutcome {
        estimate: SceneCube::raw(x, op.modality()),
        objective_history: history,
    })
}
