//! Anisotropic total variation and its proximal operator.
//!
//! The prox is solved in the dual with fast gradient projection: the dual
//! variable lives in the box `[-1, 1]` per finite difference and the primal
//! is recovered as `u = f - weight * ∇ᵀp`. Forward differences with a
//! Neumann boundary; channels are processed independently.

use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};

/// Sum of absolute horizontal and vertical forward differences of one plane.
pub fn anisotropic_tv_2d(u: ArrayView2<f64>) -> f64 {
    let (h, w) = u.dim();
    let mut acc = 0.0;
    for i in 0..h {
        for j in 0..w {
            let v = u[[i, j]];
            if j + 1 < w {
                acc += (u[[i, j + 1]] - v).abs();
            }
            if i + 1 < h {
                acc += (u[[i + 1, j]] - v).abs();
            }
        }
    }
    acc
}

/// Anisotropic TV summed over channels (no cross-channel coupling).
pub fn anisotropic_tv(x: &Array3<f64>) -> f64 {
    x.axis_iter(Axis(0)).map(anisotropic_tv_2d).sum()
}

fn grad(u: &Array2<f64>, gx: &mut Array2<f64>, gy: &mut Array2<f64>) {
    let (h, w) = u.dim();
    for i in 0..h {
        for j in 0..w.saturating_sub(1) {
            gx[[i, j]] = u[[i, j + 1]] - u[[i, j]];
        }
    }
    for i in 0..h.saturating_sub(1) {
        for j in 0..w {
            gy[[i, j]] = u[[i + 1, j]] - u[[i, j]];
        }
    }
}

/// `∇ᵀ(px, py)`, i.e. minus the discrete divergence.
fn grad_adjoint(px: &Array2<f64>, py: &Array2<f64>, out: &mut Array2<f64>) {
    let (h, w) = out.dim();
    out.fill(0.0);
    for i in 0..h {
        for j in 0..w.saturating_sub(1) {
            let p = px[[i, j]];
            out[[i, j]] -= p;
            out[[i, j + 1]] += p;
        }
    }
    for i in 0..h.saturating_sub(1) {
        for j in 0..w {
            let p = py[[i, j]];
            out[[i, j]] -= p;
            out[[i + 1, j]] += p;
        }
    }
}

/// Approximate minimiser of `½‖u - f‖² + weight·TV(u)` on one plane.
pub fn tv_denoise_2d(f: ArrayView2<f64>, weight: f64, inner_iters: usize) -> Array2<f64> {
    if weight <= 0.0 || inner_iters == 0 {
        return f.to_owned();
    }
    let (h, w) = f.dim();
    let mut px = Array2::<f64>::zeros((h, w.saturating_sub(1)));
    let mut py = Array2::<f64>::zeros((h.saturating_sub(1), w));
    let mut rx = px.clone();
    let mut ry = py.clone();
    let mut gx = px.clone();
    let mut gy = py.clone();
    let mut adj = Array2::<f64>::zeros((h, w));
    let mut u = Array2::<f64>::zeros((h, w));
    let step = 1.0 / (8.0 * weight);
    let mut t = 1.0_f64;

    for _ in 0..inner_iters {
        grad_adjoint(&rx, &ry, &mut adj);
        Zip::from(&mut u).and(&f).and(&adj).for_each(|u, &f, &a| *u = f - weight * a);
        grad(&u, &mut gx, &mut gy);

        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        for (p, r, g) in [(&mut px, &mut rx, &gx), (&mut py, &mut ry, &gy)] {
            Zip::from(p).and(r).and(g).for_each(|p, r, &g| {
                let fresh = (*r + step * g).clamp(-1.0, 1.0);
                *r = fresh + momentum * (fresh - *p);
                *p = fresh;
            });
        }
        t = t_next;
    }

    grad_adjoint(&px, &py, &mut adj);
    Zip::from(&mut u).and(&f).and(&adj).for_each(|u, &f, &a| *u = f - weight * a);
    u
}

/// Per-channel TV denoising of a `(channels, height, width)` stack.
pub fn tv_denoise(x: &Array3<f64>, weight: f64, inner_iters: usize) -> Array3<f64> {
    let mut out = x.clone();
    if weight <= 0.0 {
        return out;
    }
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(x.axis_iter(Axis(0))) {
        dst.assign(&tv_denoise_2d(src, weight, inner_iters));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use proptest::prelude::*;

    fn objective(u: &Array2<f64>, f: &Array2<f64>, weight: f64) -> f64 {
        0.5 * (u - f).mapv(|v| v * v).sum() + weight * anisotropic_tv_2d(u.view())
    }

    fn noisy_step() -> Array2<f64> {
        let mut s = 12345_u64;
        Array2::from_shape_fn((8, 8), |(_, j)| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let noise = ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.2;
            if j < 4 { 0.2 + noise } else { 0.8 + noise }
        })
    }

    /// Long gradient descent on the objective with TV smoothed as
    /// `sqrt(d² + eps²)`; independent of the dual solver above.
    fn smoothed_descent_oracle(f: &Array2<f64>, weight: f64) -> Array2<f64> {
        let eps = 1e-3;
        let (h, w) = f.dim();
        let mut u = f.clone();
        // Lipschitz bound: 1 + weight * 8 / eps
        let step = 1.0 / (1.0 + 8.0 * weight / eps);
        for _ in 0..60_000 {
            let mut g = &u - f;
            for i in 0..h {
                for j in 0..w {
                    if j + 1 < w {
                        let d = u[[i, j + 1]] - u[[i, j]];
                        let s = weight * d / (d * d + eps * eps).sqrt();
                        g[[i, j + 1]] += s;
                        g[[i, j]] -= s;
                    }
                    if i + 1 < h {
                        let d = u[[i + 1, j]] - u[[i, j]];
                        let s = weight * d / (d * d + eps * eps).sqrt();
                        g[[i + 1, j]] += s;
                        g[[i, j]] -= s;
                    }
                }
            }
            u = u - g * step;
        }
        u
    }

    #[test]
    fn constant_image_is_fixed() {
        let f = Array2::from_elem((6, 7), 0.4);
        let u = tv_denoise_2d(f.view(), 0.3, 20);
        assert!(u.iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn zero_weight_is_identity() {
        let f = noisy_step();
        assert_eq!(tv_denoise_2d(f.view(), 0.0, 10), f);
        let cube = Array::from_shape_fn((2, 4, 4), |(c, i, j)| (c + i * j) as f64);
        assert_eq!(tv_denoise(&cube, 0.0, 10), cube);
    }

    #[test]
    fn objective_matches_descent_oracle() {
        let f = noisy_step();
        let ours = objective(&tv_denoise_2d(f.view(), 0.1, 500), &f, 0.1);
        let oracle = objective(&smoothed_descent_oracle(&f, 0.1), &f, 0.1);
        assert!((ours - oracle).abs() <= 0.02 * oracle, "{ours} vs {oracle}");
    }

    #[test]
    fn tv_of_known_planes() {
        let ramp = Array2::from_shape_fn((3, 4), |(_, j)| j as f64);
        assert_eq!(anisotropic_tv_2d(ramp.view()), 9.0);
        let step = Array2::from_shape_fn((4, 4), |(i, _)| if i < 2 { 0.0 } else { 1.0 });
        assert_eq!(anisotropic_tv_2d(step.view()), 4.0);
    }

    proptest! {
        #[test]
        fn denoising_never_increases_tv(
            values in proptest::collection::vec(0.0f64..1.0, 36),
            weight in 0.0f64..0.5,
            iters in 1usize..30,
        ) {
            let f = Array2::from_shape_vec((6, 6), values).unwrap();
            let u = tv_denoise_2d(f.view(), weight, iters);
            prop_assert!(anisotropic_tv_2d(u.view()) <= anisotropic_tv_2d(f.view()) + 1e-12);
        }
    }
}
