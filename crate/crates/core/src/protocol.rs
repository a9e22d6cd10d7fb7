//! The four-scenario mismatch protocol.
//!
//! | scenario | measured with | solved with |
//! |----------|---------------|-------------|
//! | I   ideal     | nominal Φ̂ | Φ̂ |
//! | II  baseline  | true Φ     | Φ̂ |
//! | III oracle    | true Φ     | Φ  |
//! | IV  blind     | true Φ     | grid-search estimate Φ̃ |
//!
//! Scenarios II to IV reconstruct one shared noisy measurement. Scenario I
//! draws its own noise from a separate seed stream.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibrationConfig, CalibrationSetup, CalibrationTrace};
use crate::error::{Error, Result};
use crate::metrics::{measurement_residual, psnr, sam, ssim, MetricBundle};
use crate::mismatch::{add_noise, MismatchParams, NoiseModel};
use crate::operators::Operator;
use crate::rng::derive_seed;
use crate::solvers::{reconstruct, Method};
use crate::tensors::{Modality, SceneCube, Snapshot};

/// Below this degradation (dB) the recovery ratio is reported as undefined.
pub const RHO_MIN_DEGRADATION_DB: f64 = 0.05;
pub const RHO_REPORT_MIN: f64 = -0.5;
pub const RHO_REPORT_MAX: f64 = 1.5;

/// Seed stream names for the two noise draws of a scene.
pub const IDEAL_NOISE_STREAM: &str = "noise/ideal";
pub const SHARED_NOISE_STREAM: &str = "noise/mismatched";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    #[serde(rename = "I")]
    Ideal,
    #[serde(rename = "II")]
    Baseline,
    #[serde(rename = "III")]
    Oracle,
    #[serde(rename = "IV")]
    Blind,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 4] = [ScenarioId::Ideal, ScenarioId::Baseline, ScenarioId::Oracle, ScenarioId::Blind];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::Ideal => "I",
            ScenarioId::Baseline => "II",
            ScenarioId::Oracle => "III",
            ScenarioId::Blind => "IV",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" | "1" | "ideal" => Ok(ScenarioId::Ideal),
            "ii" | "2" | "baseline" | "mismatched" => Ok(ScenarioId::Baseline),
            "iii" | "3" | "oracle" => Ok(ScenarioId::Oracle),
            "iv" | "4" | "blind" => Ok(ScenarioId::Blind),
            _ => Err(Error::param(format!("unknown scenario `{s}` (expected I, II, III or IV)"))),
        }
    }
}

/// Recovery ratio Δ_rec / Δ_deg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Rho {
    /// `value` is clamped to the reporting range; `flagged` marks a raw
    /// ratio outside [0, 1].
    Defined { value: f64, flagged: bool },
    Undefined,
}

impl Rho {
    pub fn value(&self) -> Option<f64> {
        match self {
            Rho::Defined { value, .. } => Some(*value),
            Rho::Undefined => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaps {
    pub delta_deg: f64,
    pub delta_rec: f64,
    pub delta_res: f64,
    pub rho: Rho,
}

pub fn compute_gaps(psnr_i: f64, psnr_ii: f64, psnr_iii: f64) -> Gaps {
    let delta_deg = psnr_i - psnr_ii;
    let delta_rec = psnr_iii - psnr_ii;
    let delta_res = psnr_i - psnr_iii;
    let rho = if delta_deg > RHO_MIN_DEGRADATION_DB {
        let raw = delta_rec / delta_deg;
        Rho::Defined {
            value: raw.clamp(RHO_REPORT_MIN, RHO_REPORT_MAX),
            flagged: !(0.0..=1.0).contains(&raw),
        }
    } else {
        Rho::Undefined
    };
    Gaps {
        delta_deg,
        delta_rec,
        delta_res,
        rho,
    }
}

/// Spearman rank correlation: Pearson correlation of the rank vectors,
/// with tied values sharing their average rank.
pub fn spearman_rank(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::param(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::param("spearman correlation needs at least 3 pairs"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::param("spearman inputs must be finite"));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::param("spearman correlation is undefined for a constant input"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scene_id: String,
    pub method_id: String,
    pub metrics: BTreeMap<ScenarioId, MetricBundle>,
    /// Present when scenarios I, II and III were all run.
    pub gaps: Option<Gaps>,
}

impl ScenarioResult {
    pub fn new(scene_id: &str, method_id: &str, metrics: BTreeMap<ScenarioId, MetricBundle>) -> Self {
        let gaps = match (
            metrics.get(&ScenarioId::Ideal),
            metrics.get(&ScenarioId::Baseline),
            metrics.get(&ScenarioId::Oracle),
        ) {
            (Some(i), Some(ii), Some(iii)) => Some(compute_gaps(i.psnr_db, ii.psnr_db, iii.psnr_db)),
            _ => None,
        };
        ScenarioResult {
            scene_id: scene_id.to_string(),
            method_id: method_id.to_string(),
            metrics,
            gaps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample (n - 1) standard deviation; std is 0 for one value.
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MeanStd { mean, std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub psnr: MeanStd,
    pub ssim: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method_id: String,
    pub scenes: usize,
    pub scenarios: BTreeMap<ScenarioId, ScenarioSummary>,
    /// Gaps of the mean PSNRs.
    pub gaps: Option<Gaps>,
}

/// One row per method, ordered by method id.
pub fn aggregate_results(results: &[ScenarioResult]) -> Vec<SummaryRow> {
    let mut by_method: BTreeMap<&str, Vec<&ScenarioResult>> = BTreeMap::new();
    for r in results {
        by_method.entry(r.method_id.as_str()).or_default().push(r);
    }
    by_method
        .into_iter()
        .map(|(method_id, rows)| {
            let mut scenarios = BTreeMap::new();
            for id in ScenarioId::ALL {
                let bundles: Vec<&MetricBundle> = rows.iter().filter_map(|r| r.metrics.get(&id)).collect();
                let psnrs: Vec<f64> = bundles.iter().map(|b| b.psnr_db).collect();
                let ssims: Vec<f64> = bundles.iter().map(|b| b.ssim).collect();
                if let (Some(psnr), Some(ssim)) = (MeanStd::of(&psnrs), MeanStd::of(&ssims)) {
                    scenarios.insert(id, ScenarioSummary { psnr, ssim });
                }
            }
            let mean = |id| scenarios.get(&id).map(|s: &ScenarioSummary| s.psnr.mean);
            let gaps = match (mean(ScenarioId::Ideal), mean(ScenarioId::Baseline), mean(ScenarioId::Oracle)) {
                (Some(i), Some(ii), Some(iii)) => Some(compute_gaps(i, ii, iii)),
                _ => None,
            };
            SummaryRow {
                method_id: method_id.to_string(),
                scenes: rows.len(),
                scenarios,
                gaps,
            }
        })
        .collect()
}

/// Experiment settings shared by every scene and method.
#[derive(Debug, Clone)]
pub struct ProtocolSetup<'a> {
    pub nominal: &'a Operator,
    /// The true mismatch; used to build Φ and never read by calibration
    /// except for held parameters in truth mode.
    pub mismatch: MismatchParams,
    /// Noise settings; the seed is replaced per scene and stream.
    pub noise: NoiseModel,
    pub master_seed: u64,
    pub scenarios: Vec<ScenarioId>,
    /// Required when scenario IV is requested.
    pub calibration: Option<CalibrationConfig>,
}

impl ProtocolSetup<'_> {
    fn wants(&self, id: ScenarioId) -> bool {
        self.scenarios.contains(&id)
    }

    fn validate(&self) -> Result<()> {
        let modality = self.nominal.as_linear().modality();
        if self.mismatch.modality() != modality {
            return Err(Error::param(format!(
                "{} mismatch given for a {modality} operator",
                self.mismatch.modality()
            )));
        }
        if self.scenarios.is_empty() {
            return Err(Error::param("no scenarios requested"));
        }
        if self.wants(ScenarioId::Blind) && self.calibration.is_none() {
            return Err(Error::param("scenario IV requires a calibration block"));
        }
        Ok(())
    }
}

/// The two noisy measurements of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMeasurements {
    /// `Φ̂x + n_I`, present when scenario I is requested.
    pub ideal: Option<Snapshot>,
    /// `Φx + n`, shared by scenarios II to IV.
    pub shared: Snapshot,
}

pub fn simulate_measurements(
    scene: &SceneCube,
    scene_id: &str,
    setup: &ProtocolSetup<'_>,
    true_op: &Operator,
) -> Result<SceneMeasurements> {
    let ideal = if setup.wants(ScenarioId::Ideal) {
        let clean = setup.nominal.forward(scene)?;
        let seed = derive_seed(setup.master_seed, scene_id, IDEAL_NOISE_STREAM);
        Some(add_noise(&clean, &setup.noise.with_seed(seed))?)
    } else {
        None
    };
    let clean = true_op.forward(scene)?;
    let seed = derive_seed(setup.master_seed, scene_id, SHARED_NOISE_STREAM);
    let shared = add_noise(&clean, &setup.noise.with_seed(seed))?;
    Ok(SceneMeasurements { ideal, shared })
}

/// Output of one (scene, method) run.
#[derive(Debug, Clone)]
pub struct SceneRun {
    pub result: ScenarioResult,
    pub estimates: BTreeMap<ScenarioId, SceneCube>,
    pub measurements: SceneMeasurements,
}

/// Calibration output for one method.
#[derive(Debug, Clone)]
pub struct MethodCalibration {
    pub method_id: String,
    pub scene_ids: Vec<String>,
    pub estimate: MismatchParams,
    pub trace: CalibrationTrace,
}

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    /// Scene-major, then method, in input order.
    pub runs: Vec<SceneRun>,
    pub calibrations: Vec<MethodCalibration>,
}

impl ProtocolRun {
    pub fn results(&self) -> Vec<ScenarioResult> {
        self.runs.iter().map(|r| r.result.clone()).collect()
    }
}

/// Runs the requested scenarios for one scene and method. Scenario IV is
/// calibrated on this scene alone.
pub fn run_four_scenarios(
    scene: &SceneCube,
    scene_id: &str,
    method_id: &str,
    method: &Method,
    setup: &ProtocolSetup<'_>,
) -> Result<SceneRun> {
    setup.validate()?;
    let true_op = setup.mismatch.apply(setup.nominal)?;
    let measurements = simulate_measurements(scene, scene_id, setup, &true_op)?;
    let estimate = match &setup.calibration {
        Some(cfg) if setup.wants(ScenarioId::Blind) => {
            let (est, _) = calibrate_method(std::slice::from_ref(&measurements.shared), method, setup, cfg)
                .map_err(|e| tagged(ScenarioId::Blind, e))?;
            Some(est)
        }
        _ => None,
    };
    solve_scene(scene, scene_id, method_id, method, setup, &true_op, measurements, estimate.as_ref())
}

/// Runs every (scene, method) pair. Scenario IV estimates are computed
/// once per method on the first `scene_subset` scenes, with per-scene
/// objectives summed, and then applied to all scenes.
pub fn run_protocol(
    scenes: &[(String, SceneCube)],
    methods: &[(String, Method)],
    setup: &ProtocolSetup<'_>,
) -> Result<ProtocolRun> {
    setup.validate()?;
    let true_op = setup.mismatch.apply(setup.nominal)?;
    let measurements = scenes
        .par_iter()
        .map(|(id, scene)| simulate_measurements(scene, id, setup, &true_op))
        .collect::<Result<Vec<_>>>()?;

    let mut calibrations = Vec::new();
    if let (Some(cfg), true) = (&setup.calibration, setup.wants(ScenarioId::Blind)) {
        let subset = cfg.subset_for(setup.nominal.as_linear().modality()).min(scenes.len());
        let ys: Vec<Snapshot> = measurements[..subset].iter().map(|m| m.shared.clone()).collect();
        for (method_id, method) in methods {
            let (estimate, trace) = calibrate_method(&ys, method, setup, cfg).map_err(|e| tagged(ScenarioId::Blind, e))?;
            calibrations.push(MethodCalibration {
                method_id: method_id.clone(),
                scene_ids: scenes[..subset].iter().map(|(id, _)| id.clone()).collect(),
                estimate,
                trace,
            });
        }
    }

    let jobs: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..methods.len()).map(move |m| (s, m)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(s, m)| {
            let (scene_id, scene) = &scenes[s];
            let (method_id, method) = &methods[m];
            let estimate = calibrations.get(m).map(|c| &c.estimate);
            solve_scene(scene, scene_id, method_id, method, setup, &true_op, measurements[s].clone(), estimate)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtocolRun { runs, calibrations })
}

/// Grid-search calibration for one method, as scenario IV runs it.
pub fn calibrate_method(
    ys: &[Snapshot],
    method: &Method,
    setup: &ProtocolSetup<'_>,
    cfg: &CalibrationConfig,
) -> Result<(MismatchParams, CalibrationTrace)> {
    let grid = cfg.grid_for(setup.nominal.as_linear().modality());
    let cal = CalibrationSetup::new(setup.nominal, &setup.mismatch, &grid, method, cfg.held)
        .with_inner_fraction(method, cfg.inner_fraction);
    calibrate(ys, &cal)
}

#[allow(clippy::too_many_arguments)]
fn solve_scene(
    scene: &SceneCube,
    scene_id: &str,
    method_id: &str,
    method: &Method,
    setup: &ProtocolSetup<'_>,
    true_op: &Operator,
    measurements: SceneMeasurements,
    blind_estimate: Option<&MismatchParams>,
) -> Result<SceneRun> {
    let mut metrics = BTreeMap::new();
    let mut estimates = BTreeMap::new();
    for &id in &ScenarioId::ALL {
        if !setup.wants(id) {
            continue;
        }
        let run = || -> Result<(SceneCube, MetricBundle)> {
            let (y, solve_op) = match id {
                ScenarioId::Ideal => (
                    measurements.ideal.as_ref().expect("ideal measurement simulated"),
                    setup.nominal.clone(),
                ),
                ScenarioId::Baseline => (&measurements.shared, setup.nominal.clone()),
                ScenarioId::Oracle => (&measurements.shared, true_op.clone()),
                ScenarioId::Blind => {
                    let est = blind_estimate.ok_or_else(|| Error::param("scenario IV has no calibration estimate"))?;
                    (&measurements.shared, est.apply(setup.nominal)?)
                }
            };
            let sensing_op = if id == ScenarioId::Ideal { setup.nominal } else { true_op };
            let estimate = reconstruct(y, &solve_op, method)?;
            let bundle = evaluate(scene, &estimate, y, sensing_op)?;
            Ok((estimate, bundle))
        };
        let (estimate, bundle) = run().map_err(|e| tagged(id, e))?;
        metrics.insert(id, bundle);
        estimates.insert(id, estimate);
    }
    Ok(SceneRun {
        result: ScenarioResult::new(scene_id, method_id, metrics),
        estimates,
        measurements,
    })
}

/// Metrics against the ground truth; the residual uses the operator that
/// produced `y`.
pub fn evaluate(truth: &SceneCube, estimate: &SceneCube, y: &Snapshot, sensing_op: &Operator) -> Result<MetricBundle> {
    let sam_deg = if truth.modality() == Modality::Cassi && truth.channels() > 1 {
        Some(sam(truth.data(), estimate.data())?)
    } else {
        None
    };
    Ok(MetricBundle {
        psnr_db: psnr(truth.data(), estimate.data(), 1.0)?,
        ssim: ssim(truth.data(), estimate.data(), 1.0)?,
        sam_deg,
        residual: Some(measurement_residual(y, sensing_op, estimate)?),
    })
}

pub(crate) fn tagged(id: ScenarioId, e: Error) -> Error {
    Error::Scenario {
        scenario: id.as_str(),
        source: Box::new(e),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::hash_map::DefaultHasher;
    use std::hash::{Hash, Hasher};

    use proptest::prelude::*;

    use super::*;
    use crate::calibration::GridSpec;
    use crate::mismatch::{CactiMismatch, CassiMismatch};
    use crate::operators::{CactiOperator, CassiOperator};
    use crate::solvers::{GapTvConfig, FistaTvConfig};
    use crate::tensors::{make_phantom_scene, make_random_mask};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn cacti_nominal(frames: usize) -> Operator {
        let masks: Vec<_> = (0..frames)
            .map(|b| make_random_mask(32, 32, 0.5, 1000 + b as u64).unwrap())
            .collect();
        CactiOperator::nominal(&masks).unwrap().into()
    }

    fn cassi_nominal(bands: usize) -> Operator {
        CassiOperator::nominal(make_random_mask(32, 32, 0.5, 77).unwrap(), bands)
            .unwrap()
            .into()
    }

    fn setup(nominal: &Operator, mismatch: MismatchParams, noise: NoiseModel) -> ProtocolSetup<'_> {
        ProtocolSetup {
            nominal,
            mismatch,
            noise,
            master_seed: 2024,
            scenarios: vec![ScenarioId::Ideal, ScenarioId::Baseline, ScenarioId::Oracle],
            calibration: None,
        }
    }

    fn digest(s: &Snapshot) -> u64 {
        let mut h = DefaultHasher::new();
        s.shape().hash(&mut h);
        for v in s.data() {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    fn gap() -> Method {
        Method::GapTv(GapTvConfig::default())
    }

    #[test]
    fn gaps_from_reported_rows() {
        let g = compute_gaps(24.34, 20.96, 21.72);
        assert!(close(g.delta_deg, 3.38, 1e-9));
        assert!(close(g.delta_rec, 0.76, 1e-9));
        assert!(close(g.delta_res, 2.62, 1e-9));
        assert!(close(g.rho.value().unwrap(), 0.225, 5e-4));

        let g = compute_gaps(35.39, 14.81, 27.38);
        assert!(close(g.delta_deg, 20.58, 1e-9));
        assert!(close(g.delta_rec, 12.57, 1e-9));
        assert!(close(g.delta_res, 8.01, 1e-9));
        assert!(close(g.rho.value().unwrap(), 0.611, 5e-4));
    }

    #[test]
    fn rho_undefined_flagged_and_clamped() {
        let g = compute_gaps(30.0, 30.0, 30.0);
        assert_eq!((g.delta_deg, g.delta_rec, g.delta_res), (0.0, 0.0, 0.0));
        assert_eq!(g.rho, Rho::Undefined);
        assert_eq!(compute_gaps(30.0, 29.96, 30.5).rho, Rho::Undefined);
        assert_eq!(
            compute_gaps(30.0, 20.0, 25.0).rho,
            Rho::Defined { value: 0.5, flagged: false }
        );
        let Rho::Defined { value, flagged } = compute_gaps(30.0, 20.0, 32.0).rho else { panic!() };
        assert!(close(value, 1.2, 1e-12) && flagged);
        assert_eq!(
            compute_gaps(30.0, 20.0, 40.0).rho,
            Rho::Defined { value: 1.5, flagged: true }
        );
        assert_eq!(
            compute_gaps(30.0, 20.0, 5.0).rho,
            Rho::Defined { value: -0.5, flagged: true }
        );
    }

    #[test]
    fn spearman_basics() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(close(spearman_rank(&xs, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap(), 1.0, 1e-12));
        assert!(close(spearman_rank(&xs, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0, 1e-12));
        // ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4): 4.5 / sqrt(4.5 * 5)
        let r = spearman_rank(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(close(r, 4.5 / (22.5f64).sqrt(), 1e-12));
        assert!(spearman_rank(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(spearman_rank(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn spearman_is_rank_invariant(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30)) {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = spearman_rank(&xs, &ys) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
                let warped: Vec<f64> = xs.iter().map(|v| v * v * v + 2.0 * v).collect();
                let r2 = spearman_rank(&warped, &ys).unwrap();
                prop_assert!((r - r2).abs() < 1e-9);
                let rs = spearman_rank(&ys, &xs).unwrap();
                prop_assert!((r - rs).abs() < 1e-12);
            }
        }
    }

    fn bundle(psnr_db: f64, ssim: f64) -> MetricBundle {
        MetricBundle {
            psnr_db,
            ssim,
            sam_deg: None,
            residual: None,
        }
    }

    #[test]
    fn aggregation_mean_and_sample_std() {
        assert!(aggregate_results(&[]).is_empty());
        let mk = |scene: &str, method: &str, p: f64| {
            let mut m = BTreeMap::new();
            m.insert(ScenarioId::Ideal, bundle(p + 5.0, 0.9));
            m.insert(ScenarioId::Baseline, bundle(p, 0.5));
            m.insert(ScenarioId::Oracle, bundle(p + 2.5, 0.7));
            ScenarioResult::new(scene, method, m)
        };
        let rows = aggregate_results(&[mk("a", "zeta", 20.0), mk("a", "alpha", 20.0), mk("b", "alpha", 30.0)]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method_id, "alpha");
        let ii = rows[0].scenarios[&ScenarioId::Baseline];
        assert!(close(ii.psnr.mean, 25.0, 1e-12));
        assert!(close(ii.psnr.std, 50.0f64.sqrt(), 1e-12));
        assert!(close(ii.psnr.std, 7.07, 5e-3));
        assert_eq!(ii.ssim.std, 0.0);
        assert_eq!(rows[1].scenarios[&ScenarioId::Baseline].psnr.std, 0.0);
        let g = rows[0].gaps.unwrap();
        assert!(close(g.delta_deg, 5.0, 1e-12));
        assert_eq!(g.rho.value(), Some(0.5));
    }

    #[test]
    fn zero_mismatch_scenarios_coincide() {
        let nominal = cacti_nominal(4);
        let x = make_phantom_scene(Modality::Cacti, 32, 32, 4, 1).unwrap();
        let s = setup(&nominal, MismatchParams::none_for(Modality::Cacti), NoiseModel::gaussian(0.0, 0));
        let run = run_four_scenarios(&x, "s1", "gap_tv", &gap(), &s).unwrap();
        let m = &run.result.metrics;
        let p1 = m[&ScenarioId::Ideal].psnr_db;
        assert!(close(p1, m[&ScenarioId::Baseline].psnr_db, 1e-9));
        assert!(close(p1, m[&ScenarioId::Oracle].psnr_db, 1e-9));
        let g = run.result.gaps.unwrap();
        assert!(close(g.delta_deg, 0.0, 1e-9) && close(g.delta_rec, 0.0, 1e-9));
        assert_eq!(g.rho, Rho::Undefined);
    }

    #[test]
    fn mismatched_scenarios_share_one_measurement() {
        let nominal = cacti_nominal(4);
        let x = make_phantom_scene(Modality::Cacti, 32, 32, 4, 2).unwrap();
        let truth = MismatchParams::default_for(Modality::Cacti);
        let noise = truth.default_noise(&nominal, 0);
        let s = setup(&nominal, truth, noise);
        let run = run_four_scenarios(&x, "s2", "gap_tv", &gap(), &s).unwrap();
        let true_op = truth.apply(&nominal).unwrap();
        let again = simulate_measurements(&x, "s2", &s, &true_op).unwrap();
        assert_eq!(digest(&run.measurements.shared), digest(&again.shared));
        assert_ne!(digest(&run.measurements.shared), digest(run.measurements.ideal.as_ref().unwrap()));
        let ii = reconstruct(&again.shared, &nominal, &gap()).unwrap();
        let iii = reconstruct(&again.shared, &true_op, &gap()).unwrap();
        assert_eq!(&ii, &run.estimates[&ScenarioId::Baseline]);
        assert_eq!(&iii, &run.estimates[&ScenarioId::Oracle]);
    }

    #[test]
    fn cacti_default_mismatch_orders_scenarios() {
        let nominal = cacti_nominal(8);
        let truth = MismatchParams::default_for(Modality::Cacti);
        let s = setup(&nominal, truth, truth.default_noise(&nominal, 0));
        for seed in 1..=3 {
            let x = make_phantom_scene(Modality::Cacti, 32, 32, 8, seed).unwrap();
            let m = run_four_scenarios(&x, &format!("s{seed}"), "gap_tv", &gap(), &s).unwrap().result.metrics;
            let (p1, p2, p3) = (
                m[&ScenarioId::Ideal].psnr_db,
                m[&ScenarioId::Baseline].psnr_db,
                m[&ScenarioId::Oracle].psnr_db,
            );
            assert!(p3 >= p2 && p1 >= p2, "seed {seed}: I {p1} II {p2} III {p3}");
        }
    }

    #[test]
    fn cassi_spatial_mismatch_is_mostly_recoverable() {
        let nominal = cassi_nominal(8);
        let truth = MismatchParams::Cassi(CassiMismatch {
            dx: 0.5,
            dy: 0.3,
            ..CassiMismatch::none()
        });
        let s = setup(&nominal, truth, truth.default_noise(&nominal, 0));
        let x = make_phantom_scene(Modality::Cassi, 32, 32, 8, 1).unwrap();
        let g = run_four_scenarios(&x, "k1", "gap_tv", &gap(), &s).unwrap().result.gaps.unwrap();
        let rho = g.delta_rec / g.delta_deg;
        assert!(rho >= 0.5, "{g:?}");
    }

    #[test]
    fn oracle_never_meaningfully_hurts_noiseless() {
        let cases = [
            (cacti_nominal(8), MismatchParams::default_for(Modality::Cacti)),
            (cassi_nominal(8), MismatchParams::default_for(Modality::Cassi)),
        ];
        for (nominal, truth) in &cases {
            let modality = truth.modality();
            let mut truth = *truth;
            if let MismatchParams::Cacti(p) = &mut truth {
                p.sigma_n = 0.0;
            }
            let mut s = setup(nominal, truth, NoiseModel::gaussian(0.0, 0));
            s.scenarios = vec![ScenarioId::Baseline, ScenarioId::Oracle];
            for seed in 1..=3 {
                let x = make_phantom_scene(modality, 32, 32, 8, seed).unwrap();
                let m = run_four_scenarios(&x, "s", "gap_tv", &gap(), &s).unwrap().result.metrics;
                let (p2, p3) = (m[&ScenarioId::Baseline].psnr_db, m[&ScenarioId::Oracle].psnr_db);
                assert!(p3 >= p2 - 0.1, "{modality} seed {seed}: II {p2} III {p3}");
            }
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let nominal = cacti_nominal(4);
        let truth = MismatchParams::default_for(Modality::Cacti);
        let s = setup(&nominal, truth, truth.default_noise(&nominal, 0));
        let scenes: Vec<(String, SceneCube)> = (1..=2)
            .map(|i| (format!("s{i}"), make_phantom_scene(Modality::Cacti, 32, 32, 4, i).unwrap()))
            .collect();
        let methods = vec![("gap_tv".to_string(), gap())];
        let a = run_protocol(&scenes, &methods, &s).unwrap();
        let b = run_protocol(&scenes, &methods, &s).unwrap();
        assert_eq!(a.results(), b.results());
        for (ra, rb) in a.runs.iter().zip(&b.runs) {
            assert_eq!(ra.estimates, rb.estimates);
        }
        let mut other = s.clone();
        other.master_seed += 1;
        let c = run_protocol(&scenes, &methods, &other).unwrap();
        assert_ne!(a.results(), c.results());
    }

    #[test]
    fn blind_scenario_needs_calibration_block() {
        let nominal = cacti_nominal(2);
        let x = make_phantom_scene(Modality::Cacti, 32, 32, 2, 1).unwrap();
        let mut s = setup(&nominal, MismatchParams::none_for(Modality::Cacti), NoiseModel::gaussian(0.0, 0));
        s.scenarios.push(ScenarioId::Blind);
        assert!(matches!(
            run_four_scenarios(&x, "s", "gap_tv", &gap(), &s),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn solver_errors_carry_the_scenario() {
        let nominal: Operator = crate::operators::make_gaussian_matrix(64, 256, 1).unwrap().into();
        let x = make_phantom_scene(Modality::Spc, 16, 16, 1, 1).unwrap();
        let s = setup(&nominal, MismatchParams::none_for(Modality::Spc), NoiseModel::gaussian(0.0, 0));
        let err = run_four_scenarios(&x, "s", "gap", &gap(), &s).unwrap_err();
        assert!(matches!(err, Error::Scenario { scenario: "I", .. }), "{err}");
        let fista = Method::FistaTv(FistaTvConfig {
            iterations: 20,
            ..Default::default()
        });
        assert!(run_four_scenarios(&x, "s", "fista", &fista, &s).is_ok());
    }

    #[test]
    fn blind_scenario_with_on_grid_shift_matches_oracle() {
        let nominal = cacti_nominal(4);
        let truth = MismatchParams::Cacti(CactiMismatch {
            dx: 0.5,
            dy: 0.25,
            ..CactiMismatch::none()
        });
        let mut s = setup(&nominal, truth, NoiseModel::gaussian(0.0, 0));
        s.scenarios = ScenarioId::ALL.to_vec();
        s.calibration = Some(CalibrationConfig {
            grid: Some(GridSpec::default_for(Modality::Cacti)),
            ..Default::default()
        });
        let scenes: Vec<(String, SceneCube)> = (1..=3)
            .map(|i| (format!("s{i}"), make_phantom_scene(Modality::Cacti, 32, 32, 4, i).unwrap()))
            .collect();
        let run = run_protocol(&scenes, &[("gap_tv".to_string(), gap())], &s).unwrap();
        assert_eq!(run.calibrations.len(), 1);
        assert_eq!(run.calibrations[0].scene_ids, vec!["s1", "s2"]);
        assert_eq!(run.calibrations[0].estimate, truth);
        for r in &run.runs {
            let m = &r.result.metrics;
            assert!(close(m[&ScenarioId::Blind].psnr_db, m[&ScenarioId::Oracle].psnr_db, 1e-9));
        }
    }
}
