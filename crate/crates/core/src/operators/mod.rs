//! Forward models for the three modalities and the resampling kernels they
//! are built from.

mod cacti;
mod cassi;
pub(crate) mod resample;
mod spc;

pub use cacti::{cacti_adjoint, cacti_forward, CactiOperator};
pub use cassi::{cassi_adjoint, cassi_forward, CassiOperator, NOMINAL_DISPERSION_STEP, NOMINAL_DETECTOR_STEP};
pub use resample::resample_mask;
pub use spc::{make_gaussian_matrix, make_gaussian_operator, spc_adjoint, spc_forward, SpcOperator};

use ndarray::{Array3, ArrayD};

use crate::error::{Error, Result};
use crate::tensors::{Modality, SceneCube, Snapshot};

/// Linear part of a sensing model, on raw arrays.
///
/// `apply` and `apply_adjoint` assume correctly shaped inputs; the public
/// `*_forward` / `*_adjoint` functions perform the shape checks.
pub trait LinearOperator: Send + Sync {
    fn modality(&self) -> Modality;

    /// `(channels, height, width)` of the scene this operator senses.
    fn scene_dim(&self) -> (usize, usize, usize);

    fn measurement_shape(&self) -> Vec<usize>;

    fn apply(&self, x: &Array3<f64>) -> ArrayD<f64>;

    fn apply_adjoint(&self, y: &ArrayD<f64>) -> Array3<f64>;

    /// Constant added to every measurement after the linear part.
    fn offset(&self) -> f64 {
        0.0
    }
}

pub(crate) fn check_scene(op: &dyn LinearOperator, x: &Array3<f64>) -> Result<()> {
    if x.dim() != op.scene_dim() {
        return Err(Error::dim(format!(
            "scene shape {:?} does not match operator scene shape {:?}",
            x.dim(),
            op.scene_dim()
        )));
    }
    Ok(())
}

pub(crate) fn check_measurement(op: &dyn LinearOperator, y: &ArrayD<f64>) -> Result<()> {
    if y.shape() != op.measurement_shape().as_slice() {
        return Err(Error::dim(format!(
            "measurement shape {:?} does not match operator measurement shape {:?}",
            y.shape(),
            op.measurement_shape()
        )));
    }
    Ok(())
}

/// Any of the three sensing models.
#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    Cassi(CassiOperator),
    Cacti(CactiOperator),
    Spc(SpcOperator),
}

impl Operator {
    pub fn as_linear(&self) -> &dyn LinearOperator {
        match self {
            Operator::Cassi(op) => op,
            Operator::Cacti(op) => op,
            Operator::Spc(op) => op,
        }
    }

    /// Full (affine) forward model.
    pub fn forward(&self, x: &SceneCube) -> Result<Snapshot> {
        match self {
            Operator::Cassi(op) => cassi_forward(x, op),
            Operator::Cacti(op) => cacti_forward(x, op),
            Operator::Spc(op) => spc_forward(x, op),
        }
    }

    /// Adjoint of the linear part.
    pub fn adjoint(&self, y: &Snapshot) -> Result<SceneCube> {
        match self {
            Operator::Cassi(op) => cassi_adjoint(y, op),
            Operator::Cacti(op) => cacti_adjoint(y, op),
            Operator::Spc(op) => spc_adjoint(y, op),
        }
    }
}

impl LinearOperator for Operator {
    fn modality(&self) -> Modality {
        self.as_linear().modality()
    }
    fn scene_dim(&self) -> (usize, usize, usize) {
        self.as_linear().scene_dim()
    }
    fn measurement_shape(&self) -> Vec<usize> {
        self.as_linear().measurement_shape()
    }
    fn apply(&self, x: &Array3<f64>) -> ArrayD<f64> {
        self.as_linear().apply(x)
    }
    fn apply_adjoint(&self, y: &ArrayD<f64>) -> Array3<f64> {
        self.as_linear().apply_adjoint(y)
    }
    fn offset(&self) -> f64 {
        self.as_linear().offset()
    }
}

impl From<CassiOperator> for Operator {
    fn from(op: CassiOperator) -> Self {
        Operator::Cassi(op)
    }
}

impl From<CactiOperator> for Operator {
    fn from(op: CactiOperator) -> Self {
        Operator::Cacti(op)
    }
}

impl From<SpcOperator> for Operator {
    fn from(op: SpcOperator) -> Self {
        Operator::Spc(op)
    }
}
