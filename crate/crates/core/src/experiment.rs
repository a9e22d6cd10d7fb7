//! Config-driven runs: build operators and scenes, run the protocol, write
//! every artifact to an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Axis, Ix2, Ix3};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::io::{load_array, save_array, write_error_map, write_manifest, write_report, ExperimentConfig, SceneSource};
use crate::mismatch::{MismatchParams, NoiseModel};
use crate::operators::{make_gaussian_operator, CactiOperator, CassiOperator, Operator};
use crate::protocol::{
    calibrate_method, run_protocol, simulate_measurements, tagged, ProtocolRun, ProtocolSetup, ScenarioId,
    IDEAL_NOISE_STREAM, SHARED_NOISE_STREAM,
};
use crate::rng::RNG_ALGORITHM;
use crate::solvers::{reconstruct, Method};
use crate::tensors::{make_phantom_scene, make_random_mask, Modality, SceneCube, Snapshot};

/// Error maps share this scale so they are comparable across scenarios.
pub const ERROR_MAP_SCALE: f64 = 0.25;

/// Fraction of open mask pixels.
pub const MASK_ON_PROBABILITY: f64 = 0.5;

/// A config resolved into operators, scenes and methods.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub nominal: Operator,
    pub scenes: Vec<(String, SceneCube)>,
    pub methods: Vec<(String, Method)>,
    pub noise: NoiseModel,
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        let scenes = load_scenes(&config)?;
        let (c, h, w) = scenes[0].1.data().dim();
        let nominal = nominal_operator(&config, c, h, w)?;
        let methods = config.methods.iter().map(|m| (m.id.clone(), m.method)).collect();
        let noise = config.noise.model(&config.mismatch, &nominal);
        Ok(Experiment {
            config,
            nominal,
            scenes,
            methods,
            noise,
        })
    }

    /// Keeps only the named scenes, in the given order.
    pub fn select_scenes(&mut self, ids: &[String]) -> Result<()> {
        self.scenes = pick(&self.scenes, ids, "scenes")?;
        Ok(())
    }

    /// Keeps only the named methods, in the given order.
    pub fn select_methods(&mut self, ids: &[String]) -> Result<()> {
        self.methods = pick(&self.methods, ids, "methods")?;
        Ok(())
    }

    pub fn setup(&self) -> ProtocolSetup<'_> {
        ProtocolSetup {
            nominal: &self.nominal,
            mismatch: self.config.mismatch,
            noise: self.noise,
            master_seed: self.config.master_seed,
            scenarios: self.config.scenarios.clone(),
            calibration: Some(self.config.calibration.clone()),
        }
    }

    pub fn true_operator(&self) -> Result<Operator> {
        self.config.mismatch.apply(&self.nominal)
    }

    fn manifest(&self, command: &str, calibrations: Value) -> Value {
        json!({
            "tool": "opmismatch",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "rng_algorithm": RNG_ALGORITHM,
            "master_seed": self.config.master_seed,
            "noise_streams": {
                "I": IDEAL_NOISE_STREAM,
                "II-IV": SHARED_NOISE_STREAM,
            },
            "scenes": self.scenes.iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>(),
            "methods": self.methods.iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>(),
            "calibrations": calibrations,
            "config": self.config.to_value(),
        })
    }
}

fn pick<T: Clone>(items: &[(String, T)], ids: &[String], what: &str) -> Result<Vec<(String, T)>> {
    ids.iter()
        .map(|id| {
            items.iter().find(|(k, _)| k == id).cloned().ok_or_else(|| {
                let known: Vec<_> = items.iter().map(|(k, _)| k.as_str()).collect();
                Error::config(what, format!("unknown id `{id}` (known: {known:?})"))
            })
        })
        .collect()
}

pub fn phantom_id(index: usize) -> String {
    format!("phantom_{:02}", index + 1)
}

fn load_scenes(config: &ExperimentConfig) -> Result<Vec<(String, SceneCube)>> {
    let modality = config.modality;
    let scenes: Vec<(String, SceneCube)> = match &config.scenes {
        SceneSource::Phantom(p) => {
            let c = p.channels_for(modality);
            (0..p.count)
                .map(|i| Ok((phantom_id(i), make_phantom_scene(modality, p.height, p.width, c, p.seed + i as u64)?)))
                .collect::<Result<_>>()?
        }
        SceneSource::Files(paths) => paths.iter().map(|p| load_scene(p, modality)).collect::<Result<_>>()?,
    };
    let dim = scenes[0].1.data().dim();
    for (id, s) in &scenes {
        if s.data().dim() != dim {
            return Err(Error::dim(format!("scene {id} has shape {:?}, expected {dim:?}", s.data().dim())));
        }
    }
    for (i, (id, _)) in scenes.iter().enumerate() {
        if scenes[..i].iter().any(|(o, _)| o == id) {
            return Err(Error::config("scenes.files", format!("duplicate scene id `{id}`")));
        }
    }
    Ok(scenes)
}

/// Loads a scene array; 2-D arrays become single-channel cubes. The id is
/// the file stem.
pub fn load_scene(path: &Path, modality: Modality) -> Result<(String, SceneCube)> {
    let (_, data) = load_array(path)?;
    let cube: Array3<f64> = match data.ndim() {
        2 => data.into_dimensionality::<Ix2>().expect("2-D").insert_axis(Axis(0)),
        3 => data.into_dimensionality::<Ix3>().expect("3-D"),
        n => {
            return Err(Error::dim(format!("{}: scenes must be 2-D or 3-D, got {n}-D", path.display())));
        }
    };
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::config("scenes.files", format!("{}: no usable file stem", path.display())))?;
    Ok((id.to_string(), SceneCube::new(cube, modality)?))
}

fn nominal_operator(config: &ExperimentConfig, channels: usize, height: usize, width: usize) -> Result<Operator> {
    let seed = config.mask_seed;
    Ok(match config.modality {
        Modality::Cassi => {
            let mask = make_random_mask(height, width, MASK_ON_PROBABILITY, seed)?;
            CassiOperator::nominal(mask, channels)?.into()
        }
        Modality::Cacti => {
            let masks = (0..channels)
                .map(|b| make_random_mask(height, width, MASK_ON_PROBABILITY, seed + b as u64))
                .collect::<Result<Vec<_>>>()?;
            CactiOperator::nominal(&masks)?.into()
        }
        Modality::Spc => {
            if channels != 1 {
                return Err(Error::dim(format!("SPC scenes are single-channel, got {channels}")));
            }
            let n = height * width;
            let m = ((config.sampling_ratio * n as f64).round() as usize).clamp(1, n);
            make_gaussian_operator(m, height, width, seed)?.into()
        }
    })
}

fn arrays_dir(out: &Path, scene_id: &str) -> PathBuf {
    out.join("arrays").join(scene_id)
}

fn save_snapshot(path: &Path, y: &Snapshot, role: &str) -> Result<()> {
    save_array(path, y.data(), role)
}

fn save_cube(path: &Path, x: &SceneCube, role: &str) -> Result<()> {
    save_array(path, &x.data().clone().into_dyn(), role)
}

/// Full protocol run; writes reports, arrays, error maps, calibration
/// traces and the manifest under `out`.
pub fn run_experiment(exp: &Experiment, out: &Path) -> Result<ProtocolRun> {
    let run = run_protocol(&exp.scenes, &exp.methods, &exp.setup())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_report(&run.results(), out)?;

    for (s, (scene_id, scene)) in exp.scenes.iter().enumerate() {
        let dir = arrays_dir(out, scene_id);
        save_cube(&dir.join("truth.bin"), scene, "truth")?;
        let first = &run.runs[s * exp.methods.len()];
        if let Some(y) = &first.measurements.ideal {
            save_snapshot(&dir.join("y_ideal.bin"), y, "y_ideal")?;
        }
        save_snapshot(&dir.join("y.bin"), &first.measurements.shared, "y")?;
    }
    for r in &run.runs {
        let scene = &exp.scenes.iter().find(|(id, _)| *id == r.result.scene_id).expect("known scene").1;
        let method = &r.result.method_id;
        let dir = arrays_dir(out, &r.result.scene_id).join(method);
        let maps = out.join("error_maps").join(&r.result.scene_id);
        fs::create_dir_all(&maps).map_err(|e| Error::io(&maps, e))?;
        let band = scene.channels() / 2;
        for (id, est) in &r.estimates {
            save_cube(&dir.join(format!("x_{id}.bin")), est, &format!("estimate_{id}"))?;
            write_error_map(scene.band(band), est.band(band), ERROR_MAP_SCALE, &maps.join(format!("{method}_{id}.pgm")))?;
        }
    }
    let mut calibrations = Vec::new();
    for c in &run.calibrations {
        write_trace(out, &c.method_id, &c.trace.to_csv())?;
        calibrations.push(json!({
            "method_id": c.method_id,
            "scene_ids": c.scene_ids,
            "estimate": c.estimate,
        }));
    }
    write_manifest(&exp.manifest("protocol", Value::Array(calibrations)), out)?;
    Ok(run)
}

fn write_trace(out: &Path, method_id: &str, csv: &str) -> Result<()> {
    let dir = out.join("calibration");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{method_id}_trace.csv"));
    fs::write(&path, csv).map_err(|e| Error::io(path, e))
}

/// Writes ground truth and measurements for every scene.
pub fn run_simulate(exp: &Experiment, out: &Path) -> Result<()> {
    let setup = exp.setup();
    let true_op = exp.true_operator()?;
    for (scene_id, scene) in &exp.scenes {
        let m = simulate_measurements(scene, scene_id, &setup, &true_op)?;
        let dir = arrays_dir(out, scene_id);
        save_cube(&dir.join("truth.bin"), scene, "truth")?;
        if let Some(y) = &m.ideal {
            save_snapshot(&dir.join("y_ideal.bin"), y, "y_ideal")?;
        }
        save_snapshot(&dir.join("y.bin"), &m.shared, "y")?;
    }
    write_manifest(&exp.manifest("simulate", Value::Array(Vec::new())), out)
}

/// Which operator a standalone reconstruction assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssumedOperator {
    Nominal,
    True,
}

/// Reconstructs a measurement file with the first selected method.
pub fn run_reconstruct(exp: &Experiment, measurement: &Path, assumed: AssumedOperator, output: &Path) -> Result<SceneCube> {
    let (_, data) = load_array(measurement)?;
    let y = Snapshot::new(data, exp.config.modality)?;
    let op = match assumed {
        AssumedOperator::Nominal => exp.nominal.clone(),
        AssumedOperator::True => exp.true_operator()?,
    };
    let (_, method) = &exp.methods[0];
    let x = reconstruct(&y, &op, method)?;
    save_cube(output, &x, "estimate")?;
    Ok(x)
}

/// Scenario IV calibration only: writes `calibration/<method>_trace.csv`
/// and `calibration/estimates.json`.
pub fn run_calibrate(exp: &Experiment, out: &Path) -> Result<Vec<(String, MismatchParams)>> {
    let setup = exp.setup();
    let cfg = &exp.config.calibration;
    let true_op = exp.true_operator()?;
    let subset = cfg.subset_for(exp.config.modality).min(exp.scenes.len());
    let ys = exp.scenes[..subset]
        .iter()
        .map(|(id, scene)| Ok(simulate_measurements(scene, id, &setup, &true_op)?.shared))
        .collect::<Result<Vec<_>>>()?;
    let mut estimates = Vec::new();
    let mut entries = Vec::new();
    for (method_id, method) in &exp.methods {
        let (est, trace) = calibrate_method(&ys, method, &setup, cfg).map_err(|e| tagged(ScenarioId::Blind, e))?;
        write_trace(out, method_id, &trace.to_csv())?;
        entries.push(json!({
            "method_id": method_id,
            "scene_ids": exp.scenes[..subset].iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>(),
            "estimate": est,
        }));
        estimates.push((method_id.clone(), est));
    }
    let path = out.join("calibration").join("estimates.json");
    let text = serde_json::to_string_pretty(&entries).expect("estimates serialise") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_manifest(&exp.manifest("calibrate", Value::Array(entries)), out)?;
    Ok(estimates)
}
