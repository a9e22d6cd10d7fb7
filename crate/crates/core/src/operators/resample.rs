//! Bilinear resampling kernels: fractional translation (as a scatter with an
//! exact gather adjoint) and mask rotation + translation.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::tensors::MaskPlane;

/// Two-tap bilinear weights for a shift `s`: offsets `floor(s)` and
/// `floor(s) + 1` with weights `1 - frac` and `frac`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Taps {
    base: isize,
    frac: f64,
}

impl Taps {
    pub(crate) fn new(shift: f64) -> Self {
        let base = shift.floor();
        Taps {
            base: base as isize,
            frac: shift - base,
        }
    }

    fn pairs(self) -> impl Iterator<Item = (isize, f64)> {
        [(self.base, 1.0 - self.frac), (self.base + 1, self.frac)]
            .into_iter()
            .filter(|&(_, w)| w != 0.0)
    }
}

#[inline]
fn in_range(idx: isize, len: usize) -> Option<usize> {
    (idx >= 0 && (idx as usize) < len).then_some(idx as usize)
}

/// Accumulates `src` translated by `(sy, sx)` into `dst`; weights are raised
/// to `power` (1 for the operator itself, 2 when building `diag(ΦΦᵀ)` from a
/// squared source). Energy landing outside `dst` is dropped.
pub(crate) fn shift_scatter_add(
    src: ArrayView2<f64>,
    dst: &mut ArrayViewMut2<f64>,
    sy: f64,
    sx: f64,
    power: i32,
) {
    let (ty, tx) = (Taps::new(sy), Taps::new(sx));
    let (dh, dw) = dst.dim();
    for ((r, c), &v) in src.indexed_iter() {
        if v == 0.0 {
            continue;
        }
        for (oy, wy) in ty.pairs() {
            let Some(i) = in_range(r as isize + oy, dh) else { continue };
            for (ox, wx) in tx.pairs() {
                let Some(j) = in_range(c as isize + ox, dw) else { continue };
                dst[[i, j]] += (wy * wx).powi(power) * v;
            }
        }
    }
}

/// Adjoint of [`shift_scatter_add`] with `power = 1`: reads `dst` back onto a
/// `(height, width)` source grid.
pub(crate) fn shift_gather(
    dst: ArrayView2<f64>,
    height: usize,
    width: usize,
    sy: f64,
    sx: f64,
) -> Array2<f64> {
    let (ty, tx) = (Taps::new(sy), Taps::new(sx));
    let (dh, dw) = dst.dim();
    Array2::from_shape_fn((height, width), |(r, c)| {
        let mut acc = 0.0;
        for (oy, wy) in ty.pairs() {
            let Some(i) = in_range(r as isize + oy, dh) else { continue };
            for (ox, wx) in tx.pairs() {
                let Some(j) = in_range(c as isize + ox, dw) else { continue };
                acc += wy * wx * dst[[i, j]];
            }
        }
        acc
    })
}

/// Bilinear sample with zero fill outside the grid.
fn sample_zero_fill(src: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = src.dim();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        if wy == 0.0 {
            continue;
        }
        let Some(i) = in_range(y0 + dy, h) else { continue };
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            if wx == 0.0 {
                continue;
            }
            let Some(j) = in_range(x0 + dx, w) else { continue };
            acc += wy * wx * src[[i, j]];
        }
    }
    acc
}

/// Rotates `mask` by `theta_deg` about the plane centre, then translates it
/// by `(dx, dy)` pixels (`dx` along columns, `dy` along rows).
pub fn resample_mask(mask: &MaskPlane, dx: f64, dy: f64, theta_deg: f64) -> Result<MaskPlane> {
    if !(dx.abs() <= 8.0 && dy.abs() <= 8.0) {
        return Err(Error::param(format!("mask shift ({dx}, {dy}) exceeds 8 px")));
    }
    if !(theta_deg.abs() <= 5.0) {
        return Err(Error::param(format!("mask rotation {theta_deg} exceeds 5 degrees")));
    }
    if dx == 0.0 && dy == 0.0 && theta_deg == 0.0 {
        return Ok(mask.clone());
    }
    let src = mask.data();
    let (h, w) = src.dim();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = theta_deg.to_radians().sin_cos();
    let out = Array2::from_shape_fn((h, w), |(i, j)| {
        // undo translation, then undo rotation about the centre
        let py = i as f64 - dy - cy;
        let px = j as f64 - dx - cx;
        let sy = cos * py - sin * px + cy;
        let sx = sin * py + cos * px + cx;
        sample_zero_fill(src, sy, sx)
    });
    Ok(MaskPlane::from_clamped(out))
}
