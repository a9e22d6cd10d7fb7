use ndarray::{Array2, Array3, ArrayD, Axis, Ix2};

use super::{check_measurement, check_scene, LinearOperator};
use crate::error::{Error, Result};
use crate::tensors::{MaskPlane, Modality, SceneCube, Snapshot};

/// Temporal coded-aperture camera: `y = gain * Σ_b C_b ⊙ x_b + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct CactiOperator {
    masks: Array3<f64>,
    pub gain: f64,
    pub offset: f64,
}

impl CactiOperator {
    pub fn new(masks: &[MaskPlane], gain: f64, offset: f64) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::dim("CACTI needs at least one mask"))?;
        let (h, w) = (first.height(), first.width());
        if masks.iter().any(|m| m.height() != h || m.width() != w) {
            return Err(Error::dim("all CACTI masks must share one shape"));
        }
        if !(gain > 0.0 && gain.is_finite()) || !offset.is_finite() {
            return Err(Error::param(format!("invalid gain/offset ({gain}, {offset})")));
        }
        let mut stack = Array3::zeros((masks.len(), h, w));
        for (mut slot, m) in stack.axis_iter_mut(Axis(0)).zip(masks) {
            slot.assign(m.data());
        }
        Ok(CactiOperator {
            masks: stack,
            gain,
            offset,
        })
    }

    pub fn nominal(masks: &[MaskPlane]) -> Result<Self> {
        Self::new(masks, 1.0, 0.0)
    }

    pub fn frames(&self) -> usize {
        self.masks.dim().0
    }

    pub fn masks(&self) -> Vec<MaskPlane> {
        self.masks
            .axis_iter(Axis(0))
            .map(|m| MaskPlane::from_clamped(m.to_owned()))
            .collect()
    }

    pub fn mask_stack(&self) -> &Array3<f64> {
        &self.masks
    }

    /// Same masks with unit gain and zero offset, the operator a solver sees
    /// after `y` has been pre-whitened by `(y - offset) / gain`.
    pub fn without_radiometry(&self) -> Self {
        CactiOperator {
            masks: self.masks.clone(),
            gain: 1.0,
            offset: 0.0,
        }
    }

    /// Exact `diag(ΦΦᵀ)` of the linear part.
    pub fn sensing_diagonal(&self) -> Array2<f64> {
        let g2 = self.gain * self.gain;
        self.masks.map_axis(Axis(0), |col| g2 * col.iter().map(|v| v * v).sum::<f64>())
    }
}

impl LinearOperator for CactiOperator {
    fn modality(&self) -> Modality {
        Modality::Cacti
    }

    fn scene_dim(&self) -> (usize, usize, usize) {
        self.masks.dim()
    }

    fn measurement_shape(&self) -> Vec<usize> {
        let (_, h, w) = self.masks.dim();
        vec![h, w]
    }

    fn apply(&self, x: &Array3<f64>) -> ArrayD<f64> {
        let (_, h, w) = self.masks.dim();
        let mut y = Array2::zeros((h, w));
        for (m, frame) in self.masks.axis_iter(Axis(0)).zip(x.axis_iter(Axis(0))) {
            y.zip_mut_with(&(&m * &frame), |acc, v| *acc += v);
        }
        if self.gain != 1.0 {
            y.mapv_inplace(|v| self.gain * v);
        }
        y.into_dyn()
    }

    fn apply_adjoint(&self, y: &ArrayD<f64>) -> Array3<f64> {
        let y2 = y.view().into_dimensionality::<Ix2>().expect("2-D CACTI snapshot");
        let mut x = self.masks.clone();
        for mut frame in x.axis_iter_mut(Axis(0)) {
            frame.zip_mut_with(&y2, |m, v| *m *= self.gain * v);
        }
        x
    }

    fn offset(&self) -> f64 {
        self.offset
    }
}

pub fn cacti_forward(cube: &SceneCube, op: &CactiOperator) -> Result<Snapshot> {
    check_scene(op, cube.data())?;
    let mut y = op.apply(cube.data());
    if op.offset != 0.0 {
        y.mapv_inplace(|v| v + op.offset);
    }
    Ok(Snapshot::raw(y, Modality::Cacti))
}

/// Adjoint of the linear part (offset excluded).
pub fn cacti_adjoint(snapshot: &Snapshot, op: &CactiOperator) -> Result<SceneCube> {
    check_measurement(op, snapshot.data())?;
    Ok(SceneCube::raw(op.apply_adjoint(snapshot.data()), Modality::Cacti))
}
