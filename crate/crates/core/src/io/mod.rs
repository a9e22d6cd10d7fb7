//! Files in and out: raw arrays, experiment configs, reports.

mod array;
mod config;
mod report;

pub use array::{load_array, save_array, save_array_as, ArrayHeader, ElementType};
pub use config::{
    load_config, ExperimentConfig, MethodSpec, NoiseSpec, PhantomSpec, SceneSource, MAX_ROTATION_DEG, MAX_SHIFT_PX,
};
pub use report::{
    read_per_scene, summary_columns, write_error_map, write_manifest, write_per_scene, write_report, write_summary,
    MANIFEST_FILE, PER_SCENE_COLUMNS, PER_SCENE_FILE, SUMMARY_FILE,
};
