//! Dataset manifests, synthetic data, file formats and the stage pipeline.

mod binary;
mod features_file;
mod image_io;
mod manifest;
mod model_file;
mod pipeline;
mod synthetic;

pub use features_file::{load_features, read_features, save_features, write_features, FeatureSet, SampleMeta, FEATURE_MAGIC};
pub use image_io::{load_gray, save_gray_png};
pub use manifest::{list_bscans, load_manifest, parse_manifest, DatasetManifest, ManifestRow, MANIFEST_HEADER};
pub use model_file::{load_model, read_model, save_model, write_model, MODEL_MAGIC};
pub use pipeline::{
    compute_volume_features, crops_dir, features_path, model_path, report_path, run_pipeline, stamp_path,
    train_on_volumes, volumes_from_features, write_report, PipelineConfig, PipelineOutputs, Stage, Stamp,
    TOOL_NAME, TOOL_VERSION,
};
pub use synthetic::{generate_synthetic, synthetic_bases, SyntheticBases, SyntheticSpec};
