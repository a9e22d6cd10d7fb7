//! Image-quality and data-fidelity metrics.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::Operator;
use crate::tensors::{SceneCube, Snapshot};

/// Reported in place of +∞ for a zero-error channel.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub psnr_db: f64,
    pub ssim: f64,
    pub sam_deg: Option<f64>,
    pub residual: Option<f64>,
}

fn same_shape(a: &Array3<f64>, b: &Array3<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("shape {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Per-channel PSNR in dB, averaged over channels (mean of dB values).
pub fn psnr(reference: &Array3<f64>, estimate: &Array3<f64>, peak: f64) -> Result<f64> {
    same_shape(reference, estimate)?;
    if !(peak > 0.0) {
        return Err(Error::param("PSNR peak must be positive"));
    }
    let channels = reference.dim().0;
    let total: f64 = reference
        .axis_iter(Axis(0))
        .zip(estimate.axis_iter(Axis(0)))
        .map(|(r, e)| {
            let mse = r
                .iter()
                .zip(e.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / r.len() as f64;
            if mse == 0.0 {
                PSNR_CAP_DB
            } else {
                (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
            }
        })
        .sum();
    Ok(total / channels as f64)
}

fn gaussian_window() -> Array2<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w = Array2::from_shape_fn((SSIM_WINDOW, SSIM_WINDOW), |(i, j)| {
        let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
        (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s = w.sum();
    w / s
}

/// Mean local SSIM over all fully-contained 11×11 Gaussian windows.
pub fn ssim_2d(reference: ArrayView2<f64>, estimate: ArrayView2<f64>, peak: f64) -> Result<f64> {
    if reference.dim() != estimate.dim() {
        return Err(Error::dim(format!("shape {:?} vs {:?}", reference.dim(), estimate.dim())));
    }
    let (h, w) = reference.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut acc = 0.0;
    for i in 0..oh {
        for j in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in 0..SSIM_WINDOW {
                for b in 0..SSIM_WINDOW {
                    let g = win[[a, b]];
                    let x = reference[[i + a, j + b]];
                    let y = estimate[[i + a, j + b]];
                    mx += g * x;
                    my += g * y;
                    sxx += g * x * x;
                    syy += g * y * y;
                    sxy += g * x * y;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(acc / (oh * ow) as f64)
}

/// SSIM per channel, averaged.
pub fn ssim(reference: &Array3<f64>, estimate: &Array3<f64>, peak: f64) -> Result<f64> {
    same_shape(reference, estimate)?;
    let mut total = 0.0;
    for (r, e) in reference.axis_iter(Axis(0)).zip(estimate.axis_iter(Axis(0))) {
        total += ssim_2d(r, e, peak)?;
    }
    Ok(total / reference.dim().0 as f64)
}

/// Mean spectral angle in degrees over pixels where both spectra are non-zero.
pub fn sam(reference: &Array3<f64>, estimate: &Array3<f64>) -> Result<f64> {
    same_shape(reference, estimate)?;
    let (bands, h, w) = reference.dim();
    if bands < 2 {
        return Err(Error::dim("SAM needs at least two channels"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..h {
        for j in 0..w {
            let (mut dot, mut nr, mut ne) = (0.0, 0.0, 0.0);
            for l in 0..bands {
                let r = reference[[l, i, j]];
                let e = estimate[[l, i, j]];
                dot += r * e;
                nr += r * r;
                ne += e * e;
            }
            let (nr, ne) = (nr.sqrt(), ne.sqrt());
            if nr > 1e-8 && ne > 1e-8 {
                total += (dot / (nr * ne)).clamp(-1.0, 1.0).acos();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok((total / count as f64).to_degrees())
}

/// `‖y - Φ x̂‖² / ‖y‖²` with `Φ` the full (affine) calibrated operator.
pub fn measurement_residual(y: &Snapshot, op: &Operator, estimate: &SceneCube) -> Result<f64> {
    let denom = y.norm_sq();
    if denom == 0.0 {
        return Err(Error::DegenerateMeasurement("measurement has zero norm".into()));
    }
    let predicted = op.forward(estimate)?;
    if predicted.shape() != y.shape() {
        return Err(Error::dim(format!(
            "measurement shape {:?} vs operator output {:?}",
            y.shape(),
            predicted.shape()
        )));
    }
    let num: f64 = y
        .data()
        .iter()
        .zip(predicted.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::CactiOperator;
    use crate::tensors::{make_phantom_scene, make_random_mask, Modality};
    use ndarray::Array;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn pseudo(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = crate::rng::seeded(seed);
        Array::from_shape_simple_fn(shape, || rng.random::<f64>())
    }

    #[test]
    fn psnr_golden_values() {
        let a = pseudo((2, 8, 8), 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
        let zero = Array3::zeros((1, 4, 4));
        let tenth = Array3::from_elem((1, 4, 4), 0.1);
        assert!((psnr(&zero, &tenth, 1.0).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_averages_db_values() {
        // channel 0 MSE 1e-2 (20 dB), channel 1 MSE 1e-4 (40 dB)
        let r = Array3::zeros((2, 4, 4));
        let mut e = Array3::zeros((2, 4, 4));
        e.index_axis_mut(Axis(0), 0).fill(0.1);
        e.index_axis_mut(Axis(0), 1).fill(0.01);
        assert!((psnr(&r, &e, 1.0).unwrap() - 30.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_is_symmetric_and_checks_shape() {
        let a = pseudo((2, 8, 8), 1);
        let b = pseudo((2, 8, 8), 2);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        assert!(matches!(psnr(&a, &pseudo((1, 8, 8), 0), 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn psnr_falls_with_noise_amplitude() {
        let x = pseudo((1, 16, 16), 3);
        let mut wins = 0;
        for seed in 0..10 {
            let mut rng = crate::rng::seeded(seed);
            let n = Array3::from_shape_simple_fn((1, 16, 16), || {
                Normal::new(0.0, 1.0).unwrap().sample(&mut rng)
            });
            let p1 = psnr(&x, &(&x + &(&n * 0.01)), 1.0).unwrap();
            let p2 = psnr(&x, &(&x + &(&n * 0.02)), 1.0).unwrap();
            if p2 < p1 {
                wins += 1;
            }
        }
        assert_eq!(wins, 10);
    }

    #[test]
    fn ssim_identity_is_one() {
        let a = pseudo((2, 16, 16), 5);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_inverted_binary_image_is_low() {
        let r = pseudo((1, 16, 16), 6).mapv(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let e = r.mapv(|v| 1.0 - v);
        let s = ssim(&r, &e, 1.0).unwrap();
        assert!(s < 0.2, "{s}");
    }

    #[test]
    fn ssim_stable_on_near_constant() {
        let r = Array3::from_elem((1, 16, 16), 0.5);
        let mut rng = crate::rng::seeded(2);
        let e = r.mapv(|v| v + Normal::new(0.0, 1e-4).unwrap().sample(&mut rng));
        assert!(ssim(&r, &e, 1.0).unwrap() >= 0.99);
    }

    #[test]
    fn ssim_symmetric_and_rejects_small() {
        let a = pseudo((1, 12, 13), 1);
        let b = pseudo((1, 12, 13), 2);
        assert!((ssim(&a, &b, 1.0).unwrap() - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-12);
        let tiny = pseudo((1, 10, 20), 1);
        assert!(matches!(ssim(&tiny, &tiny, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn sam_golden_values() {
        let r = pseudo((3, 4, 4), 1).mapv(|v| v + 0.1);
        assert!(sam(&r, &(&r * 3.0)).unwrap().abs() < 1e-6);
        let mut a = Array3::zeros((2, 3, 3));
        let mut b = Array3::zeros((2, 3, 3));
        a.index_axis_mut(Axis(0), 0).fill(1.0);
        b.index_axis_mut(Axis(0), 1).fill(1.0);
        assert!((sam(&a, &b).unwrap() - 90.0).abs() < 1e-12);
        assert!(matches!(sam(&pseudo((1, 2, 2), 0), &pseudo((1, 2, 2), 1)), Err(Error::Dimension(_))));
    }

    #[test]
    fn sam_matches_loop_oracle() {
        let r = pseudo((3, 4, 4), 10);
        let e = pseudo((3, 4, 4), 11);
        let mut angles = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                let rv: Vec<f64> = (0..3).map(|l| r[[l, i, j]]).collect();
                let ev: Vec<f64> = (0..3).map(|l| e[[l, i, j]]).collect();
                let dot: f64 = rv.iter().zip(&ev).map(|(a, b)| a * b).sum();
                let nr = rv.iter().map(|a| a * a).sum::<f64>().sqrt();
                let ne = ev.iter().map(|a| a * a).sum::<f64>().sqrt();
                angles.push((dot / (nr * ne)).acos().to_degrees());
            }
        }
        let oracle = angles.iter().sum::<f64>() / angles.len() as f64;
        assert!((sam(&r, &e).unwrap() - oracle).abs() < 1e-9);
        assert!((sam(&r, &e).unwrap() - sam(&e, &r).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn residual_edge_cases() {
        let x = make_phantom_scene(Modality::Cacti, 16, 16, 2, 1).unwrap();
        let masks = vec![
            make_random_mask(16, 16, 0.5, 1).unwrap(),
            make_random_mask(16, 16, 0.5, 2).unwrap(),
        ];
        let op = Operator::Cacti(CactiOperator::nominal(&masks).unwrap());
        let y = op.forward(&x).unwrap();
        assert!(measurement_residual(&y, &op, &x).unwrap() <= 1e-12);
        let zero = SceneCube::new(Array3::zeros((2, 16, 16)), Modality::Cacti).unwrap();
        assert_eq!(measurement_residual(&y, &op, &zero).unwrap(), 1.0);
        let y0 = Snapshot::new(ndarray::ArrayD::zeros(vec![16, 16]), Modality::Cacti).unwrap();
        assert!(matches!(
            measurement_residual(&y0, &op, &x),
            Err(Error::DegenerateMeasurement(_))
        ));
    }
}
