//! Denoiser plug-in seam for plug-and-play variants of the iterative solvers.

use ndarray::{Array3, Axis};

use super::tv::tv_denoise;

/// A prior applied as a denoising step inside an iterative solver.
///
/// Implementations must return an array of the input's shape with finite
/// values, and be callable from several threads at once.
pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;

    /// `stack` is `(channels, height, width)`; `level` is the solver's
    /// regularization strength for this step.
    fn denoise(&self, stack: &Array3<f64>, level: f64) -> Array3<f64>;
}

/// Anisotropic TV prox with `level` as its weight.
#[derive(Debug, Clone, Copy)]
pub struct TvDenoiser {
    pub inner_iters: usize,
}

impl Denoiser for TvDenoiser {
    fn name(&self) -> &str {
        "tv"
    }

    fn denoise(&self, stack: &Array3<f64>, level: f64) -> Array3<f64> {
        tv_denoise(stack, level, self.inner_iters)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn name(&self) -> &str {
        "identity"
    }

    fn denoise(&self, stack: &Array3<f64>, _level: f64) -> Array3<f64> {
        stack.clone()
    }
}

/// 3×3 median per channel with edge replication. Reference plug-in.
#[derive(Debug, Clone, Copy)]
pub struct MedianDenoiser;

impl Denoiser for MedianDenoiser {
    fn name(&self) -> &str {
        "median3x3"
    }

    fn denoise(&self, stack: &Array3<f64>, _level: f64) -> Array3<f64> {
        let (_, h, w) = stack.dim();
        let mut out = stack.clone();
        for (src, mut dst) in stack.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            let mut window = [0.0_f64; 9];
            for i in 0..h {
                for j in 0..w {
                    let mut n = 0;
                    for di in -1..=1_isize {
                        for dj in -1..=1_isize {
                            let r = (i as isize + di).clamp(0, h as isize - 1) as usize;
                            let c = (j as isize + dj).clamp(0, w as isize - 1) as usize;
                            window[n] = src[[r, c]];
                            n += 1;
                        }
                    }
                    window.sort_by(f64::total_cmp);
                    dst[[i, j]] = window[4];
                }
            }
        }
        out
    }
}
