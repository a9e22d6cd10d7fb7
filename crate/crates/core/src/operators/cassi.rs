use ndarray::{Array2, Array3, ArrayD, Axis, Ix2};

use super::resample::{shift_gather, shift_scatter_add};
use super::{check_measurement, check_scene, LinearOperator};
use crate::error::{Error, Result};
use crate::tensors::{MaskPlane, Modality, SceneCube, Snapshot};

/// Nominal prism dispersion, pixels per band.
pub const NOMINAL_DISPERSION_STEP: f64 = 2.0;
/// Integer step that fixes the detector width.
pub const NOMINAL_DETECTOR_STEP: usize = 2;

/// Single-disperser CASSI: mask, then per-band lateral shift onto a detector
/// of width `W + (bands - 1) * detector_step`.
///
/// Band `l` (zero-based) is displaced by `d = dispersion_step * l` along an
/// axis tilted by `axis_angle_deg`: `d * cos(angle)` columns and
/// `d * sin(angle)` rows. Light that misses the detector is cropped.
#[derive(Debug, Clone, PartialEq)]
pub struct CassiOperator {
    pub mask: MaskPlane,
    pub dispersion_step: f64,
    pub axis_angle_deg: f64,
    pub bands: usize,
    pub detector_step: usize,
}

impl CassiOperator {
    /// Nominal operator: dispersion 2 px/band along the row axis.
    pub fn nominal(mask: MaskPlane, bands: usize) -> Result<Self> {
        Self::new(mask, bands, NOMINAL_DETECTOR_STEP, NOMINAL_DISPERSION_STEP, 0.0)
    }

    pub fn new(
        mask: MaskPlane,
        bands: usize,
        detector_step: usize,
        dispersion_step: f64,
        axis_angle_deg: f64,
    ) -> Result<Self> {
        if bands < 1 {
            return Err(Error::dim("CASSI needs at least one band"));
        }
        if !dispersion_step.is_finite() || !axis_angle_deg.is_finite() {
            return Err(Error::param("dispersion parameters must be finite"));
        }
        Ok(CassiOperator {
            mask,
            dispersion_step,
            axis_angle_deg,
            bands,
            detector_step,
        })
    }

    pub fn detector_width(&self) -> usize {
        self.mask.width() + (self.bands - 1) * self.detector_step
    }

    /// `(row, column)` displacement of band `l`.
    pub fn band_shift(&self, l: usize) -> (f64, f64) {
        let d = self.dispersion_step * l as f64;
        if self.axis_angle_deg == 0.0 {
            return (0.0, d);
        }
        let (sin, cos) = self.axis_angle_deg.to_radians().sin_cos();
        (d * sin, d * cos)
    }

    /// Exact `diag(ΦΦᵀ)` on the detector grid.
    pub fn sensing_diagonal(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.mask.height(), self.detector_width()));
        let m2 = self.mask.data().mapv(|v| v * v);
        for l in 0..self.bands {
            let (sy, sx) = self.band_shift(l);
            shift_scatter_add(m2.view(), &mut out.view_mut(), sy, sx, 2);
        }
        out
    }
}

impl LinearOperator for CassiOperator {
    fn modality(&self) -> Modality {
        Modality::Cassi
    }

    fn scene_dim(&self) -> (usize, usize, usize) {
        (self.bands, self.mask.height(), self.mask.width())
    }

    fn measurement_shape(&self) -> Vec<usize> {
        vec![self.mask.height(), self.detector_width()]
    }

    fn apply(&self, x: &Array3<f64>) -> ArrayD<f64> {
        let mut y = Array2::zeros((self.mask.height(), self.detector_width()));
        for (l, band) in x.axis_iter(Axis(0)).enumerate() {
            let masked = &band * self.mask.data();
            let (sy, sx) = self.band_shift(l);
            shift_scatter_add(masked.view(), &mut y.view_mut(), sy, sx, 1);
        }
        y.into_dyn()
    }

    fn apply_adjoint(&self, y: &ArrayD<f64>) -> Array3<f64> {
        let y2 = y.view().into_dimensionality::<Ix2>().expect("2-D CASSI snapshot");
        let (h, w) = (self.mask.height(), self.mask.width());
        let mut x = Array3::zeros((self.bands, h, w));
        for (l, mut band) in x.axis_iter_mut(Axis(0)).enumerate() {
            let (sy, sx) = self.band_shift(l);
            let back = shift_gather(y2, h, w, sy, sx);
            band.assign(&(&back * self.mask.data()));
        }
        x
    }
}

pub fn cassi_forward(cube: &SceneCube, op: &CassiOperator) -> Result<Snapshot> {
    check_scene(op, cube.data())?;
    Ok(Snapshot::raw(op.apply(cube.data()), Modality::Cassi))
}

pub fn cassi_adjoint(snapshot: &Snapshot, op: &CassiOperator) -> Result<SceneCube> {
    check_measurement(op, snapshot.data())?;
    Ok(SceneCube::raw(op.apply_adjoint(snapshot.data()), Modality::Cassi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensors::make_random_mask;
    use ndarray::Array;

    fn cube(bands: usize, h: usize, w: usize, seed: u64) -> SceneCube {
        let mut s = seed;
        let data = Array::from_shape_simple_fn((bands, h, w), || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        });
        SceneCube::new(data, Modality::Cassi).unwrap()
    }

    #[test]
    fn single_band_is_masked_copy() {
        let x = cube(1, 6, 5, 1);
        for a1 in [2.0, 2.37, -1.0] {
            let op = CassiOperator::new(MaskPlane::ones(6, 5), 1, 2, a1, 0.3).unwrap();
            let y = cassi_forward(&x, &op).unwrap();
            assert_eq!(y.shape(), &[6, 5]);
            assert_eq!(y.data(), &x.band(0).to_owned().into_dyn());
            let back = cassi_adjoint(&y, &op).unwrap();
            assert_eq!(back.data(), x.data());
        }
    }

    #[test]
    fn zero_mask_annihilates() {
        let x = cube(3, 6, 6, 2);
        let op = CassiOperator::nominal(MaskPlane::zeros(6, 6), 3).unwrap();
        let y = cassi_forward(&x, &op).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_snapshot_gives_zero_cube() {
        let op = CassiOperator::nominal(make_random_mask(5, 5, 0.5, 1).unwrap(), 3).unwrap();
        let y = Snapshot::new(ArrayD::zeros(vec![5, 9]), Modality::Cassi).unwrap();
        assert!(cassi_adjoint(&y, &op).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detector_width_is_fixed_by_integer_step() {
        let mask = MaskPlane::ones(4, 10);
        let op = CassiOperator::new(mask, 28, 2, 2.02, 0.15).unwrap();
        assert_eq!(op.detector_width(), 10 + 54);
        assert_eq!(op.measurement_shape(), vec![4, 64]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let op = CassiOperator::nominal(MaskPlane::ones(4, 4), 2).unwrap();
        assert!(matches!(cassi_forward(&cube(3, 4, 4, 0), &op), Err(Error::Dimension(_))));
        let y = Snapshot::new(ArrayD::zeros(vec![4, 5]), Modality::Cassi).unwrap();
        assert!(matches!(cassi_adjoint(&y, &op), Err(Error::Dimension(_))));
    }

    #[test]
    fn sensing_diagonal_matches_integer_mask_sums() {
        let mask = make_random_mask(6, 7, 0.5, 9).unwrap();
        let op = CassiOperator::nominal(mask.clone(), 3).unwrap();
        let d = op.sensing_diagonal();
        for i in 0..6 {
            for j in 0..op.detector_width() {
                let mut expect = 0.0;
                for l in 0..3 {
                    let jj = j as isize - 2 * l as isize;
                    if (0..7).contains(&jj) {
                        expect += mask.data()[[i, jj as usize]].powi(2);
                    }
                }
                assert_eq!(d[[i, j]], expect);
            }
        }
    }
}
