use ndarray::Array3;
use rand_distr::{Distribution, StandardNormal};

use crate::operators::LinearOperator;
use crate::rng;

const START_SEED: u64 = 0x5EED_0F_9A1A;

/// Largest singular value of `op` by power iteration on `ΦᵀΦ`.
pub fn power_iteration_spectral_norm(op: &dyn LinearOperator) -> f64 {
    spectral_norm_with(op, 30, 1e-4)
}

pub fn spectral_norm_with(op: &dyn LinearOperator, max_iters: usize, tol: f64) -> f64 {
    let mut rng = rng::seeded(START_SEED);
    let mut v = Array3::from_shape_simple_fn(op.scene_dim(), || StandardNormal.sample(&mut rng));
    let mut eig = 0.0_f64;
    for _ in 0..max_iters.max(1) {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.mapv_inplace(|a| a / norm);
        let w = op.apply_adjoint(&op.apply(&v));
        let next: f64 = v.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        let converged = (next - eig).abs() <= tol * next.abs();
        eig = next;
        v = w;
        if converged {
            break;
        }
    }
    eig.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{make_gaussian_matrix, SpcOperator};
    use ndarray::Array2;

    #[test]
    fn identity_has_unit_norm() {
        let op = SpcOperator::new(Array2::eye(16), 4, 4).unwrap();
        assert!((power_iteration_spectral_norm(&op) - 1.0).abs() <= 0.01);
    }

    #[test]
    fn diagonal_spectrum() {
        let op = SpcOperator::new(Array2::from_diag(&ndarray::arr1(&[1.0, 2.0, 3.0, 4.0])), 2, 2).unwrap();
        assert!((power_iteration_spectral_norm(&op) - 4.0).abs() <= 0.04);
    }

    #[test]
    fn matches_dense_svd() {
        for seed in 0..5 {
            let op = make_gaussian_matrix(16, 64, seed).unwrap();
            let a = op.matrix();
            let m = nalgebra::DMatrix::from_fn(16, 64, |i, j| a[[i, j]]);
            let sv = m.singular_values();
            let top = sv.iter().cloned().fold(0.0, f64::max);
            let est = power_iteration_spectral_norm(&op);
            assert!((est - top).abs() <= 0.01 * top, "seed {seed}: {est} vs {top}");
        }
    }
}
