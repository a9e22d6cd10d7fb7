//! Reference implementations used to check the library: random operator
//! instances, the adjoint identity, and loop-based forward models.

use ndarray::{Array2, Array3, ArrayD};
use opmismatch::mismatch::{CactiMismatch, CassiMismatch, MismatchParams, SpcMismatch};
use opmismatch::operators::{make_gaussian_operator, CactiOperator, CassiOperator, LinearOperator, Operator};
use opmismatch::rng::seeded;
use opmismatch::tensors::{make_random_mask, MaskPlane};
use rand::Rng;

/// Random operator instances: a third nominal, a third at the default
/// mismatch, a third at random mismatch.
pub fn operator_instances(modality: &str, count: usize) -> Vec<(String, Operator)> {
    (0..count)
        .map(|i| {
            let seed = 100 + i as u64;
            let mut rng = seeded(seed);
            let h = rng.random_range(6..=14);
            let w = rng.random_range(6..=14);
            let c = rng.random_range(1..=5);
            let nominal: Operator = match modality {
                "cassi" => CassiOperator::nominal(make_random_mask(h, w, 0.5, seed).unwrap(), c).unwrap().into(),
                "cacti" => {
                    let masks: Vec<_> = (0..c).map(|b| make_random_mask(h, w, 0.5, seed + 50 * b as u64).unwrap()).collect();
                    CactiOperator::nominal(&masks).unwrap().into()
                }
                "spc" => {
                    let m = rng.random_range(1..=h * w);
                    make_gaussian_operator(m, h, w, seed).unwrap().into()
                }
                _ => unreachable!(),
            };
            let params = match (modality, i % 3) {
                (_, 0) => return (format!("{modality}#{i} nominal"), nominal),
                ("cassi", 1) => MismatchParams::Cassi(CassiMismatch::default()),
                ("cacti", 1) => MismatchParams::Cacti(CactiMismatch::default()),
                ("spc", 1) => MismatchParams::Spc(SpcMismatch::default()),
                ("cassi", _) => MismatchParams::Cassi(CassiMismatch {
                    dx: rng.random_range(-2.0..2.0),
                    dy: rng.random_range(-2.0..2.0),
                    theta: rng.random_range(-3.0..3.0),
                    a1: rng.random_range(1.5..2.5),
                    alpha: rng.random_range(-2.0..2.0),
                }),
                ("cacti", _) => MismatchParams::Cacti(CactiMismatch {
                    dx: rng.random_range(-2.0..2.0),
                    dy: rng.random_range(-2.0..2.0),
                    theta: rng.random_range(-3.0..3.0),
                    dt: rng.random_range(0.0..0.5),
                    eta: rng.random_range(0.5..1.0),
                    g: rng.random_range(0.8..1.2),
                    o: rng.random_range(-0.01..0.01),
                    sigma_n: 0.0,
                }),
                _ => MismatchParams::Spc(SpcMismatch {
                    alpha_drift: rng.random_range(0.0..0.01),
                    sigma_y: 0.0,
                }),
            };
            let label = if i % 3 == 1 { "default mismatch" } else { "random mismatch" };
            (format!("{modality}#{i} {label}"), params.apply(&nominal).unwrap())
        })
        .collect()
}

/// `|<Φx, y> - <x, Φᵀy>| / |<Φx, y>|` for non-negative random `x`, `y`.
pub fn adjoint_relative_error(op: &dyn LinearOperator, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let x = Array3::from_shape_simple_fn(op.scene_dim(), || rng.random::<f64>());
    let y = ArrayD::from_shape_simple_fn(op.measurement_shape(), || rng.random::<f64>());
    let lhs: f64 = op.apply(&x).iter().zip(y.iter()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.iter().zip(op.apply_adjoint(&y).iter()).map(|(a, b)| a * b).sum();
    (lhs - rhs).abs() / lhs.abs().max(f64::MIN_POSITIVE)
}

/// Integer-dispersion CASSI, written as explicit loops.
pub fn cassi_oracle(x: &Array3<f64>, mask: &Array2<f64>, step: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array2::zeros((h, w + (c - 1) * step));
    for l in 0..c {
        for i in 0..h {
            for j in 0..w {
                y[[i, j + l * step]] += mask[[i, j]] * x[[l, i, j]];
            }
        }
    }
    y
}

pub fn cacti_oracle(x: &Array3<f64>, masks: &Array3<f64>, gain: f64, offset: f64) -> Array2<f64> {
    let (b, h, w) = x.dim();
    let mut y = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for k in 0..b {
                acc += masks[[k, i, j]] * x[[k, i, j]];
            }
            y[[i, j]] = gain * acc + offset;
        }
    }
    y
}

/// `y_i = g_i Σ_j A_ij x_j` with the image vectorised row-major.
pub fn spc_oracle(x: &Array2<f64>, a: &Array2<f64>, gains: &[f64]) -> Vec<f64> {
    let (h, w) = x.dim();
    (0..a.nrows())
        .map(|r| {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += a[[r, i * w + j]] * x[[i, j]];
                }
            }
            gains[r] * acc
        })
        .collect()
}

pub fn random_mask(h: usize, w: usize, seed: u64) -> MaskPlane {
    make_random_mask(h, w, 0.5, seed).unwrap()
}

pub fn random_cube(c: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
    let mut rng = seeded(seed);
    Array3::from_shape_simple_fn((c, h, w), || rng.random::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Ix1, Ix2};
    use opmismatch::operators::{cacti_forward, cassi_forward, spc_forward, SpcOperator};
    use opmismatch::tensors::{Modality, SceneCube};

    const TOLERANCE: f64 = 1e-6;
    const INSTANCES: usize = 24;

    fn check_adjoint(modality: &str) {
        let ops = operator_instances(modality, INSTANCES);
        assert!(ops.len() >= 20);
        for (i, (label, op)) in ops.iter().enumerate() {
            for trial in 0..3 {
                let err = adjoint_relative_error(op.as_linear(), 7000 + 10 * i as u64 + trial);
                assert!(err <= TOLERANCE, "{label}: relative adjoint error {err:e}");
            }
        }
    }

    #[test]
    fn cassi_adjoint_holds() {
        check_adjoint("cassi");
    }

    #[test]
    fn cacti_adjoint_holds() {
        check_adjoint("cacti");
    }

    #[test]
    fn spc_adjoint_holds() {
        check_adjoint("spc");
    }

    #[test]
    fn instances_cover_each_mismatch_kind() {
        let labels: Vec<_> = operator_instances("cacti", 6).into_iter().map(|(l, _)| l).collect();
        assert!(labels[0].ends_with("nominal"));
        assert!(labels[1].ends_with("default mismatch"));
        assert!(labels[2].ends_with("random mismatch"));
    }

    #[test]
    fn cassi_matches_loops_for_integer_dispersion() {
        for (seed, (c, h, w, step)) in [(3, 8, 8, 2), (4, 5, 7, 1), (1, 6, 6, 2), (5, 8, 3, 3)].into_iter().enumerate() {
            let mask = random_mask(h, w, seed as u64);
            let op = CassiOperator::new(mask.clone(), c, step, step as f64, 0.0).unwrap();
            let x = SceneCube::new(random_cube(c, h, w, 40 + seed as u64), Modality::Cassi).unwrap();
            let y = cassi_forward(&x, &op).unwrap();
            let want = cassi_oracle(x.data(), mask.data(), step);
            assert_eq!(y.data().view().into_dimensionality::<Ix2>().unwrap(), want);
        }
    }

    #[test]
    fn cacti_matches_loops_with_radiometry() {
        for (seed, (b, h, w)) in [(4, 8, 8), (1, 5, 6), (8, 7, 4)].into_iter().enumerate() {
            let masks: Vec<_> = (0..b).map(|k| random_mask(h, w, 90 + (seed * 10 + k) as u64)).collect();
            let op = CactiOperator::new(&masks, 1.02, 0.002).unwrap();
            let x = SceneCube::new(random_cube(b, h, w, seed as u64), Modality::Cacti).unwrap();
            let y = cacti_forward(&x, &op).unwrap();
            let want = cacti_oracle(x.data(), op.mask_stack(), 1.02, 0.002);
            assert_eq!(y.data().view().into_dimensionality::<Ix2>().unwrap(), want);
        }
    }

    /// Entries are small dyadic rationals, so every partial sum is exact and
    /// the comparison does not depend on summation order.
    #[test]
    fn spc_matches_loops_with_gains() {
        for (seed, (m, h, w)) in [(16, 8, 8), (64, 8, 8), (7, 3, 5)].into_iter().enumerate() {
            let mut rng = seeded(seed as u64);
            let a = Array2::from_shape_simple_fn((m, h * w), || rng.random_range(-8i32..=8) as f64 / 8.0);
            let x = Array3::from_shape_simple_fn((1, h, w), || rng.random_range(0i32..=16) as f64 / 16.0);
            let gains: Vec<f64> = (0..m).map(|i| (-0.0015 * i as f64).exp()).collect();
            let op = SpcOperator::new(a.clone(), h, w)
                .unwrap()
                .with_row_gains(Array1::from(gains.clone()))
                .unwrap();
            let x = SceneCube::new(x, Modality::Spc).unwrap();
            let y = spc_forward(&x, &op).unwrap();
            let want = spc_oracle(&x.band(0).to_owned(), &a, &gains);
            let got = y.data().view().into_dimensionality::<Ix1>().unwrap();
            assert_eq!(got.to_vec(), want);
        }
    }
}
