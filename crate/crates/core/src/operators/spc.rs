use ndarray::{Array1, Array2, Array3, ArrayD, Ix1};
use rand_distr::{Distribution, Normal};

use super::{check_measurement, check_scene, LinearOperator};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensors::{Modality, SceneCube, Snapshot};

/// Single-pixel camera: `y = diag(row_gains) · A · vec(x)`, with `vec`
/// taken in row-major order over an `height × width` image.
#[derive(Debug, Clone, PartialEq)]
pub struct SpcOperator {
    matrix: Array2<f64>,
    pub row_gains: Array1<f64>,
    height: usize,
    width: usize,
}

impl SpcOperator {
    pub fn new(matrix: Array2<f64>, height: usize, width: usize) -> Result<Self> {
        let (m, n) = matrix.dim();
        if m == 0 || n != height * width {
            return Err(Error::dim(format!(
                "matrix {m}x{n} does not sense a {height}x{width} image"
            )));
        }
        Ok(SpcOperator {
            matrix,
            row_gains: Array1::ones(m),
            height,
            width,
        })
    }

    pub fn with_row_gains(mut self, gains: Array1<f64>) -> Result<Self> {
        if gains.len() != self.rows() {
            return Err(Error::dim("row_gains length must equal measurement count"));
        }
        if gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::param("row gains must be positive and finite"));
        }
        self.row_gains = gains;
        Ok(self)
    }

    /// Reinterprets the columns as an `height × width` image.
    pub fn reshaped(self, height: usize, width: usize) -> Result<Self> {
        let gains = self.row_gains.clone();
        SpcOperator::new(self.matrix, height, width)?.with_row_gains(gains)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// `diag(row_gains) · A`.
    pub fn effective_matrix(&self) -> Array2<f64> {
        &self.matrix * &self.row_gains.view().insert_axis(ndarray::Axis(1))
    }
}

impl LinearOperator for SpcOperator {
    fn modality(&self) -> Modality {
        Modality::Spc
    }

    fn scene_dim(&self) -> (usize, usize, usize) {
        (1, self.height, self.width)
    }

    fn measurement_shape(&self) -> Vec<usize> {
        vec![self.rows()]
    }

    fn apply(&self, x: &Array3<f64>) -> ArrayD<f64> {
        let v = x.iter().cloned().collect::<Array1<f64>>();
        (self.matrix.dot(&v) * &self.row_gains).into_dyn()
    }

    fn apply_adjoint(&self, y: &ArrayD<f64>) -> Array3<f64> {
        let y1 = y.view().into_dimensionality::<Ix1>().expect("1-D SPC measurement");
        let weighted = &y1 * &self.row_gains;
        let back = self.matrix.t().dot(&weighted);
        back.into_shape_with_order((1, self.height, self.width))
            .expect("column count equals image size")
    }
}

/// Dense Gaussian sensing matrix with i.i.d. `Normal(0, 1/m)` entries.
///
/// The image shape is taken as square (`n` must be a perfect square); use
/// [`make_gaussian_operator`] for other aspect ratios.
pub fn make_gaussian_matrix(m: usize, n: usize, seed: u64) -> Result<SpcOperator> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::param(format!("n={n} is not a square image size")));
    }
    make_gaussian_operator(m, side, side, seed)
}

/// As [`make_gaussian_matrix`] for a `height × width` image.
pub fn make_gaussian_operator(m: usize, height: usize, width: usize, seed: u64) -> Result<SpcOperator> {
    let n = height * width;
    if m == 0 || m > n {
        return Err(Error::param(format!("need 0 < m <= n, got m={m}, n={n}")));
    }
    let mut rng = rng::seeded(seed);
    let normal = Normal::new(0.0, (1.0 / m as f64).sqrt()).expect("positive std");
    let matrix = Array2::from_shape_simple_fn((m, n), || normal.sample(&mut rng));
    SpcOperator::new(matrix, height, width)
}

pub fn spc_forward(x: &SceneCube, op: &SpcOperator) -> Result<Snapshot> {
    check_scene(op, x.data())?;
    Ok(Snapshot::raw(op.apply(x.data()), Modality::Spc))
}

pub fn spc_adjoint(y: &Snapshot, op: &SpcOperator) -> Result<SceneCube> {
    check_measurement(op, y.data())?;
    Ok(SceneCube::raw(op.apply_adjoint(y.data()), Modality::Spc))
}
