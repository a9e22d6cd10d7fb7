//! Signal, measurement and mask containers shared by every stage.
//!
//! Scenes are stored channel-major, `(channels, height, width)`, so a band or
//! frame is a contiguous 2-D slice.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayD, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Cassi,
    Cacti,
    Spc,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Cassi => "cassi",
            Modality::Cacti => "cacti",
            Modality::Spc => "spc",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cassi" => Ok(Modality::Cassi),
            "cacti" => Ok(Modality::Cacti),
            "spc" => Ok(Modality::Spc),
            other => Err(Error::param(format!("unknown modality `{other}`"))),
        }
    }
}

/// Ground-truth signal: a spectral cube, a frame stack or a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCube {
    data: Array3<f64>,
    modality: Modality,
}

impl SceneCube {
    /// Wraps `(channels, height, width)` data, clamping to `[0, 1]`.
    pub fn new(mut data: Array3<f64>, modality: Modality) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c < 1 || h < 2 || w < 2 {
            return Err(Error::dim(format!(
                "scene must have channels >= 1 and height, width >= 2, got {c}x{h}x{w}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("scene contains non-finite values"));
        }
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Ok(SceneCube { data, modality })
    }

    /// Wraps solver output without the range clamp (used for adjoints and
    /// intermediate iterates, which need not lie in `[0, 1]`).
    pub(crate) fn raw(data: Array3<f64>, modality: Modality) -> Self {
        SceneCube { data, modality }
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn band(&self, index: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), index)
    }
}

/// Detector readout: 2-D for CASSI/CACTI, 1-D for SPC.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    data: ArrayD<f64>,
    modality: Modality,
}

impl Snapshot {
    pub fn new(data: ArrayD<f64>, modality: Modality) -> Result<Self> {
        let expected_ndim = if modality == Modality::Spc { 1 } else { 2 };
        if data.ndim() != expected_ndim {
            return Err(Error::dim(format!(
                "{modality} snapshot must be {expected_ndim}-D, got {}-D",
                data.ndim()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("snapshot contains non-finite values"));
        }
        Ok(Snapshot { data, modality })
    }

    pub(crate) fn raw(data: ArrayD<f64>, modality: Modality) -> Self {
        Snapshot { data, modality }
    }

    pub fn data(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn into_data(self) -> ArrayD<f64> {
        self.data
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Coded-aperture transmittance plane, real-valued in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlane {
    data: Array2<f64>,
}

impl MaskPlane {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param("mask values must lie in [0, 1]"));
        }
        Ok(MaskPlane { data })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        MaskPlane {
            data: Array2::ones((height, width)),
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        MaskPlane {
            data: Array2::zeros((height, width)),
        }
    }

    pub(crate) fn from_clamped(mut data: Array2<f64>) -> Self {
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        MaskPlane { data }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn on_fraction(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }
}

/// i.i.d. Bernoulli binary mask.
pub fn make_random_mask(height: usize, width: usize, on_probability: f64, seed: u64) -> Result<MaskPlane> {
    if !(on_probability > 0.0 && on_probability < 1.0) {
        return Err(Error::param(format!(
            "on_probability must lie in (0, 1), got {on_probability}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::dim("mask must be non-empty"));
    }
    let mut rng = rng::seeded(seed);
    let data = Array2::from_shape_simple_fn((height, width), || {
        if rng.random::<f64>() < on_probability {
            1.0
        } else {
            0.0
        }
    });
    Ok(MaskPlane { data })
}

/// Deterministic synthetic scene for desk-scale experiments.
///
/// * CASSI: Gaussian blobs whose amplitude follows a smooth per-blob spectrum.
/// * CACTI: a bright square translating at an integer velocity over a
///   blocky tiled background.
/// * SPC: blobs plus two step edges (piecewise smooth).
pub fn make_phantom_scene(
    modality: Modality,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Result<SceneCube> {
    if height < 16 || width < 16 {
        return Err(Error::dim(format!(
            "phantom needs height, width >= 16, got {height}x{width}"
        )));
    }
    if channels < 1 {
        return Err(Error::dim("phantom needs at least one channel"));
    }
    if modality == Modality::Spc && channels != 1 {
        return Err(Error::dim("SPC phantoms are single-channel"));
    }
    let mut rng = rng::seeded(seed);
    let data = match modality {
        Modality::Cassi => cassi_phantom(&mut rng, height, width, channels),
        Modality::Cacti => cacti_phantom(&mut rng, height, width, channels),
        Modality::Spc => spc_phantom(&mut rng, height, width),
    };
    SceneCube::new(data, modality)
}

struct Blob {
    cy: f64,
    cx: f64,
    sigma: f64,
    amp: f64,
}

impl Blob {
    fn random(rng: &mut rng::Rng, h: usize, w: usize) -> Self {
        let scale = h.min(w) as f64;
        Blob {
            cy: rng.random_range(0.15..0.85) * h as f64,
            cx: rng.random_range(0.15..0.85) * w as f64,
            sigma: rng.random_range(0.08..0.2) * scale,
            amp: rng.random_range(0.4..1.0),
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        let dy = i as f64 - self.cy;
        let dx = j as f64 - self.cx;
        self.amp * (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

fn normalize_unit(data: &mut Array3<f64>) {
    let max = data.iter().cloned().fold(0.0_f64, f64::max);
    if max > 0.0 {
        data.mapv_inplace(|v| (v / max).clamp(0.0, 1.0));
    }
}

fn cassi_phantom(rng: &mut rng::Rng, h: usize, w: usize, bands: usize) -> Array3<f64> {
    let blobs: Vec<(Blob, f64, f64)> = (0..5)
        .map(|_| {
            let blob = Blob::random(rng, h, w);
            // spectral peak position and width, in units of the band range
            let peak = rng.random_range(0.0..1.0);
            let width = rng.random_range(0.25..0.6);
            (blob, peak, width)
        })
        .collect();
    let base = rng.random_range(0.02..0.08);
    let mut data = Array3::zeros((bands, h, w));
    for l in 0..bands {
        let t = if bands > 1 { l as f64 / (bands - 1) as f64 } else { 0.5 };
        let mut band = data.index_axis_mut(Axis(0), l);
        for ((i, j), v) in band.indexed_iter_mut() {
            let mut acc = base;
            for (blob, peak, width) in &blobs {
                let s = (t - peak) / width;
                acc += blob.at(i, j) * (-0.5 * s * s).exp();
            }
            *v = acc;
        }
    }
    normalize_unit(&mut data);
    data
}

fn cacti_phantom(rng: &mut rng::Rng, h: usize, w: usize, frames: usize) -> Array3<f64> {
    // blocky texture: a 4x4 grid of random-intensity tiles plus a gentle ramp
    let tiles: Vec<f64> = (0..16).map(|_| rng.random_range(0.1..0.55)).collect();
    let ramp = rng.random_range(-0.08..0.08);
    let background = Array2::from_shape_fn((h, w), |(i, j)| {
        let ti = (4 * i / h).min(3);
        let tj = (4 * j / w).min(3);
        tiles[4 * ti + tj] + ramp * (j as f64 / w as f64 - 0.5)
    });

    let side = (h.min(w) / 4).max(3);
    let travel_room = w - side;
    let steps = frames.saturating_sub(1).max(1);
    let vx = (travel_room / steps).clamp(1, 2);
    let max_start_x = travel_room.saturating_sub(vx * (frames - 1));
    let x0 = if max_start_x > 0 { rng.random_range(0..=max_start_x) } else { 0 };
    let y0 = rng.random_range(0..=(h - side));

    let mut data = Array3::zeros((frames, h, w));
    for b in 0..frames {
        let mut frame = data.index_axis_mut(Axis(0), b);
        frame.assign(&background);
        let x_start = x0 + vx * b;
        for i in y0..y0 + side {
            for jj in x_start..x_start + side {
                frame[[i, jj % w]] = 1.0;
            }
        }
    }
    data
}

fn spc_phantom(rng: &mut rng::Rng, h: usize, w: usize) -> Array3<f64> {
    let blobs: Vec<Blob> = (0..3).map(|_| Blob::random(rng, h, w)).collect();
    let edge_col = rng.random_range(0.3..0.7) * w as f64;
    let edge_row = rng.random_range(0.3..0.7) * h as f64;
    let left = rng.random_range(0.1..0.3);
    let right = rng.random_range(0.4..0.6);
    let lower = rng.random_range(0.1..0.25);
    let mut data = Array3::zeros((1, h, w));
    for ((_, i, j), v) in data.indexed_iter_mut() {
        let mut acc = if (j as f64) < edge_col { left } else { right };
        if (i as f64) > edge_row {
            acc += lower;
        }
        acc += 0.5 * blobs.iter().map(|b| b.at(i, j)).sum::<f64>();
        *v = acc;
    }
    normalize_unit(&mut data);
    data
}
