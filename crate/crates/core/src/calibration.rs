//! Blind calibration by exhaustive grid search.
//!
//! Geometric mismatch (mask shifts in CASSI/CACTI) is scored by the
//! normalised measurement residual of a fast reconstruction. Radiometric
//! gain drift (SPC) is scored by the anisotropic TV of the reconstruction,
//! since an underdetermined system fits any gain-corrected data equally well.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::measurement_residual;
use crate::mismatch::MismatchParams;
use crate::operators::Operator;
use crate::solvers::{anisotropic_tv, reconstruct, Method};
use crate::tensors::{Modality, SceneCube, Snapshot};

/// Smallest iteration budget accepted for the inner solver.
pub const MIN_INNER_ITERATIONS: usize = 10;

/// Default inner budget as a fraction of the full solver's iterations.
pub const DEFAULT_INNER_FRACTION: f64 = 0.25;

const GEOMETRIC_AXES: [&str; 2] = ["dx", "dy"];
const RADIOMETRIC_AXES: [&str; 1] = ["alpha_drift"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn new(name: &str, lower: f64, upper: f64, points: usize) -> Self {
        GridAxis {
            name: name.to_string(),
            lower,
            upper,
            points,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.points)
            .map(|i| if i + 1 == self.points { self.upper } else { self.lower + step * i as f64 })
            .collect()
    }

    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return Err(Error::param(format!("grid axis `{}` needs at least 2 points", self.name)));
        }
        if !(self.lower.is_finite() && self.upper.is_finite()) || self.lower >= self.upper {
            return Err(Error::param(format!(
                "grid axis `{}` needs finite bounds with lower < upper, got [{}, {}]",
                self.name, self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// A rectangular search grid; nodes are enumerated with the last axis
/// varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn default_for(modality: Modality) -> Self {
        let axes = match modality {
            Modality::Cassi => vec![GridAxis::new("dx", -1.0, 1.0, 11), GridAxis::new("dy", -1.0, 1.0, 11)],
            Modality::Cacti => vec![GridAxis::new("dx", -1.0, 1.0, 9), GridAxis::new("dy", -1.0, 1.0, 9)],
            Modality::Spc => vec![GridAxis::new("alpha_drift", 0.0, 0.005, 41)],
        };
        GridSpec { axes }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::param("grid has no axes"));
        }
        for (i, a) in self.axes.iter().enumerate() {
            a.validate()?;
            if self.axes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::param(format!("grid axis `{}` is repeated", a.name)));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        let values: Vec<Vec<f64>> = self.axes.iter().map(GridAxis::values).collect();
        let mut nodes = vec![Vec::new()];
        for vals in &values {
            nodes = nodes
                .into_iter()
                .flat_map(|prefix| {
                    vals.iter().map(move |&v| {
                        let mut node = prefix.clone();
                        node.push(v);
                        node
                    })
                })
                .collect();
        }
        nodes
    }

    /// The objective this grid calls for on `modality`, or a validation
    /// error when the axes do not fit it.
    pub fn objective_for(&self, modality: Modality) -> Result<ObjectiveKind> {
        self.validate()?;
        let names: Vec<&str> = self.axes.iter().map(|a| a.name.as_str()).collect();
        let geometric = names.iter().all(|n| GEOMETRIC_AXES.contains(n));
        let radiometric = names == RADIOMETRIC_AXES;
        match modality {
            Modality::Cassi | Modality::Cacti if geometric => Ok(ObjectiveKind::MeasurementResidual),
            Modality::Spc if radiometric => Ok(ObjectiveKind::ReconstructionTv),
            Modality::Spc => Err(Error::param(format!(
                "spc calibration is radiometric and searches only alpha_drift; got axes {names:?}"
            ))),
            _ => Err(Error::param(format!(
                "{modality} calibration is geometric and searches only dx/dy; got axes {names:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    MeasurementResidual,
    ReconstructionTv,
}

/// Source of the parameters that the grid does not search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeldParams {
    /// Held at nominal (no mismatch); a truly blind setting.
    #[default]
    Nominal,
    /// Held at the true values, as in the reference calibration study.
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTrace {
    pub axes: Vec<String>,
    pub nodes: Vec<Vec<f64>>,
    /// Summed objective per node; `+inf` marks a node whose solve failed.
    pub objectives: Vec<f64>,
    pub argmin: usize,
    pub estimate: MismatchParams,
    pub inner: Method,
    pub objective: ObjectiveKind,
    pub held: HeldParams,
}

impl CalibrationTrace {
    /// One row per node: axis values then the objective.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for a in &self.axes {
            out.push_str(a);
            out.push(',');
        }
        out.push_str("objective\n");
        for (node, obj) in self.nodes.iter().zip(&self.objectives) {
            for v in node {
                let _ = write!(out, "{v:.6},");
            }
            if obj.is_finite() {
                let _ = writeln!(out, "{obj:.9e}");
            } else {
                out.push_str("inf\n");
            }
        }
        out
    }

    pub fn best_objective(&self) -> f64 {
        self.objectives[self.argmin]
    }
}

/// Everything a calibration run needs besides the measurements.
#[derive(Debug, Clone)]
pub struct CalibrationSetup<'a> {
    pub nominal: &'a Operator,
    /// Values for the parameters the grid does not search.
    pub base: MismatchParams,
    pub grid: &'a GridSpec,
    pub inner: Method,
    pub held: HeldParams,
}

impl<'a> CalibrationSetup<'a> {
    /// Holds unsearched parameters according to `held`, using `truth`
    /// only in [`HeldParams::Truth`] mode.
    pub fn new(
        nominal: &'a Operator,
        truth: &MismatchParams,
        grid: &'a GridSpec,
        full: &Method,
        held: HeldParams,
    ) -> Self {
        let base = match held {
            HeldParams::Nominal => MismatchParams::none_for(truth.modality()),
            HeldParams::Truth => *truth,
        };
        CalibrationSetup {
            nominal,
            base,
            grid,
            inner: inner_method(full, DEFAULT_INNER_FRACTION),
            held,
        }
    }

    pub fn with_inner_fraction(mut self, full: &Method, fraction: f64) -> Self {
        self.inner = inner_method(full, fraction);
        self
    }
}

/// The fast solver used at each grid node: `fraction` of the full budget
/// (at least [`MIN_INNER_ITERATIONS`]), and for GAP the plain (non-accelerated) update. The accelerated update
/// keeps re-injecting the residual, so it fits the data for almost any
/// trial operator and flattens the residual objective.
pub fn inner_method(full: &Method, fraction: f64) -> Method {
    match full.with_budget(fraction, MIN_INNER_ITERATIONS) {
        Method::GapTv(mut c) => {
            c.accelerated = false;
            Method::GapTv(c)
        }
        Method::GapMedian { mut gap, switch_iteration } => {
            gap.accelerated = false;
            Method::GapMedian { gap, switch_iteration }
        }
        m => m,
    }
}

/// Calibration settings as they appear in an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Defaults to [`GridSpec::default_for`] the modality.
    pub grid: Option<GridSpec>,
    pub inner_fraction: f64,
    pub held: HeldParams,
    /// Number of leading scenes whose objectives are summed; defaults to
    /// 3 for CASSI and 2 otherwise.
    pub scene_subset: Option<usize>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            grid: None,
            inner_fraction: DEFAULT_INNER_FRACTION,
            held: HeldParams::Nominal,
            scene_subset: None,
        }
    }
}

impl CalibrationConfig {
    pub fn grid_for(&self, modality: Modality) -> GridSpec {
        self.grid.clone().unwrap_or_else(|| GridSpec::default_for(modality))
    }

    pub fn subset_for(&self, modality: Modality) -> usize {
        self.scene_subset.unwrap_or(match modality {
            Modality::Cassi => 3,
            _ => 2,
        })
    }

    pub fn validate(&self, modality: Modality) -> Result<()> {
        if !(self.inner_fraction > 0.0 && self.inner_fraction <= 1.0) {
            return Err(Error::param(format!(
                "inner_fraction must be in (0, 1], got {}",
                self.inner_fraction
            )));
        }
        if self.scene_subset == Some(0) {
            return Err(Error::param("scene_subset must be at least 1"));
        }
        self.grid_for(modality).objective_for(modality).map(|_| ())
    }
}

/// Geometric calibration over (dx, dy) with the residual objective. The
/// per-scene objectives of all `ys` are summed.
pub fn calibrate_geometric(ys: &[Snapshot], setup: &CalibrationSetup<'_>) -> Result<(MismatchParams, CalibrationTrace)> {
    let modality = setup.nominal.as_linear().modality();
    if setup.grid.objective_for(modality)? != ObjectiveKind::MeasurementResidual {
        return Err(Error::param(format!("{modality} has no geometric calibration; use calibrate_radiometric")));
    }
    search(ys, setup, ObjectiveKind::MeasurementResidual)
}

/// Radiometric calibration over alpha_drift with the TV objective.
pub fn calibrate_radiometric(ys: &[Snapshot], setup: &CalibrationSetup<'_>) -> Result<(MismatchParams, CalibrationTrace)> {
    let modality = setup.nominal.as_linear().modality();
    if setup.grid.objective_for(modality)? != ObjectiveKind::ReconstructionTv {
        return Err(Error::param(format!("{modality} has no radiometric calibration; use calibrate_geometric")));
    }
    search(ys, setup, ObjectiveKind::ReconstructionTv)
}

/// Picks the objective from the grid and modality.
pub fn calibrate(ys: &[Snapshot], setup: &CalibrationSetup<'_>) -> Result<(MismatchParams, CalibrationTrace)> {
    let kind = setup.grid.objective_for(setup.nominal.as_linear().modality())?;
    search(ys, setup, kind)
}

/// Full-budget reconstruction with the operator built from `estimate`.
pub fn finalize_with_estimate(
    y: &Snapshot,
    nominal: &Operator,
    estimate: &MismatchParams,
    full: &Method,
) -> Result<SceneCube> {
    let op = estimate.apply(nominal)?;
    reconstruct(y, &op, full)
}

fn search(ys: &[Snapshot], setup: &CalibrationSetup<'_>, kind: ObjectiveKind) -> Result<(MismatchParams, CalibrationTrace)> {
    if ys.is_empty() {
        return Err(Error::param("calibration needs at least one measurement"));
    }
    if setup.base.modality() != setup.nominal.as_linear().modality() {
        return Err(Error::param("held parameters and operator have different modalities"));
    }
    if setup.inner.iterations() < MIN_INNER_ITERATIONS {
        return Err(Error::param(format!(
            "inner solver budget must be at least {MIN_INNER_ITERATIONS} iterations"
        )));
    }
    let axes: Vec<String> = setup.grid.axes.iter().map(|a| a.name.clone()).collect();
    let nodes = setup.grid.nodes();
    let objectives = nodes
        .par_iter()
        .map(|node| {
            let params = params_at(&setup.base, &axes, node)?;
            let op = params.apply(setup.nominal)?;
            let mut total = 0.0;
            for y in ys {
                match node_objective(y, &op, &setup.inner, kind) {
                    Ok(v) if v.is_finite() => total += v,
                    Ok(_) => return Ok(f64::INFINITY),
                    Err(e) if invalidates_node(&e) => return Ok(f64::INFINITY),
                    Err(e) => return Err(e),
                }
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    let argmin = select_node(&nodes, &objectives).ok_or(Error::CalibrationFailure)?;
    let estimate = params_at(&setup.base, &axes, &nodes[argmin])?;
    let trace = CalibrationTrace {
        axes,
        nodes,
        objectives,
        argmin,
        estimate,
        inner: setup.inner,
        objective: kind,
        held: setup.held,
    };
    Ok((estimate, trace))
}

fn params_at(base: &MismatchParams, axes: &[String], node: &[f64]) -> Result<MismatchParams> {
    let mut p = *base;
    for (name, &v) in axes.iter().zip(node) {
        p.set(name, v)?;
    }
    Ok(p)
}

fn node_objective(y: &Snapshot, op: &Operator, inner: &Method, kind: ObjectiveKind) -> Result<f64> {
    let estimate = reconstruct(y, op, inner)?;
    match kind {
        ObjectiveKind::MeasurementResidual => measurement_residual(y, op, &estimate),
        ObjectiveKind::ReconstructionTv => Ok(anisotropic_tv(estimate.data())),
    }
}

fn invalidates_node(e: &Error) -> bool {
    matches!(e, Error::Divergence { .. } | Error::DegenerateOperator { .. })
}

/// Lowest finite objective; ties go to the smallest-norm node, then to the
/// lexicographically smallest one.
fn select_node(nodes: &[Vec<f64>], objectives: &[f64]) -> Option<usize> {
    let norm = |n: &[f64]| n.iter().map(|v| v * v).sum::<f64>();
    let mut best: Option<usize> = None;
    for (i, &obj) in objectives.iter().enumerate() {
        if !obj.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let ob = objectives[b];
                let better = obj < ob
                    || (obj == ob
                        && (norm(&nodes[i]) < norm(&nodes[b])
                            || (norm(&nodes[i]) == norm(&nodes[b]) && lex_less(&nodes[i], &nodes[b]))));
                Some(if better { i } else { b })
            }
        };
    }
    best
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}
