use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features_file::{load_features, save_features, FeatureSet, SampleMeta};
use super::image_io::{load_gray, save_gray_png};
use super::manifest::{list_bscans, DatasetManifest};
use super::model_file::save_model;
use crate::dictlearn::{train, Algorithm, Rule, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::eval::{
    leave_three_out_cv, select_training_bscans, CvOptions, CvReport, VolumeClass, VolumeFeatures, VolumeRecord,
    DEFAULT_FRAMES, DEFAULT_THRESHOLD,
};
use crate::features::{extract_features, HogSpec, PyramidSpec};
use crate::preprocess::{preprocess_bscan, GrayImage, PreprocessConfig};
use crate::rng::derive_seed;

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub pyramid: PyramidSpec,
    pub hog: HogSpec,
    pub algorithm: Algorithm,
    pub rule: Option<Rule>,
    pub train: TrainConfig,
    pub repetitions: usize,
    pub threshold: f64,
    pub frames_per_volume: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            pyramid: PyramidSpec::default(),
            hog: HogSpec::default(),
            algorithm: Algorithm::Fddl,
            rule: None,
            train: TrainConfig::default(),
            repetitions: 15,
            threshold: DEFAULT_THRESHOLD,
            frames_per_volume: DEFAULT_FRAMES,
        }
    }
}

impl PipelineConfig {
    /// SHA-256 of the JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            algorithm: self.algorithm,
            config: self.train.clone(),
            rule: self.rule,
            repetitions: self.repetitions,
            threshold: self.threshold,
            frames_per_volume: self.frames_per_volume,
            seed: self.train.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Preprocess,
    Features,
    Train,
    Crossval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Crossval => "crossval",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "preprocess" => Ok(Stage::Preprocess),
            "features" => Ok(Stage::Features),
            "train" => Ok(Stage::Train),
            "crossval" => Ok(Stage::Crossval),
            other => Err(Error::InvalidInput(format!("unknown stage {other:?}"))),
        }
    }
}

/// Provenance written next to every artifact as `<artifact>.stamp.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub tool: String,
    pub version: String,
    pub stage: Stage,
    pub config_hash: String,
}

pub fn stamp_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".stamp.json");
    artifact.with_file_name(name)
}

fn write_stamp(artifact: &Path, stage: Stage, cfg: &PipelineConfig) -> Result<()> {
    let stamp = Stamp {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        stage,
        config_hash: cfg.hash(),
    };
    std::fs::write(stamp_path(artifact), serde_json::to_string_pretty(&stamp)?)?;
    Ok(())
}

/// Files produced by [`run_pipeline`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutputs {
    pub crops: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

pub fn crops_dir(out: &Path) -> PathBuf {
    out.join("crops")
}

pub fn features_path(out: &Path) -> PathBuf {
    out.join("features.bin")
}

pub fn model_path(out: &Path) -> PathBuf {
    out.join("model.dlm")
}

pub fn report_path(out: &Path) -> PathBuf {
    out.join("report.json")
}

fn stage_error(stage: Stage, volume: Option<&str>, bscan: Option<usize>) -> impl FnOnce(Error) -> Error {
    let volume = volume.map(str::to_string);
    move |e| Error::Stage { stage: stage.name().into(), volume, bscan, source: Box::new(e) }
}

/// Preprocesses every B-scan of the manifest; the seed of each B-scan is
/// derived from the run seed and its (volume, B-scan) position.
fn preprocess_all(manifest: &DatasetManifest, cfg: &PreprocessConfig) -> Result<Vec<Vec<GrayImage>>> {
    manifest
        .rows
        .iter()
        .enumerate()
        .map(|(v, row)| {
            let files = list_bscans(&row.path).map_err(stage_error(Stage::Preprocess, Some(&row.volume_id), None))?;
            if files.is_empty() {
                return Err(stage_error(Stage::Preprocess, Some(&row.volume_id), None)(Error::InsufficientData(
                    format!("no B-scan images in {}", row.path.display()),
                )));
            }
            files
                .par_iter()
                .enumerate()
                .map(|(b, file)| {
                    let bcfg = PreprocessConfig { seed: derive_seed(derive_seed(cfg.seed, v as u64), b as u64), ..cfg.clone() };
                    load_gray(file)
                        .and_then(|img| preprocess_bscan(&img, &bcfg))
                        .map_err(stage_error(Stage::Preprocess, Some(&row.volume_id), Some(b)))
                })
                .collect()
        })
        .collect()
}

fn features_of(volume: &str, images: &[GrayImage], cfg: &PipelineConfig) -> Result<DMatrix<f64>> {
    let cols = images
        .par_iter()
        .enumerate()
        .map(|(b, img)| {
            extract_features(img, &cfg.pyramid, &cfg.hog)
                .map(|f| nalgebra::DVector::from_vec(f.values))
                .map_err(stage_error(Stage::Features, Some(volume), Some(b)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// Preprocessing and feature extraction in memory, one matrix per volume.
pub fn compute_volume_features(manifest: &DatasetManifest, cfg: &PipelineConfig) -> Result<Vec<VolumeFeatures>> {
    let crops = preprocess_all(manifest, &cfg.preprocess)?;
    let records = manifest.volumes()?;
    records
        .into_iter()
        .zip(&crops)
        .map(|(record, images)| {
            let features = features_of(&record.id, images, cfg)?;
            Ok(VolumeFeatures { record, features })
        })
        .collect()
}

/// Groups a feature file by the manifest's volumes, columns ordered by B-scan index.
pub fn volumes_from_features(set: &FeatureSet, manifest: &DatasetManifest) -> Result<Vec<VolumeFeatures>> {
    manifest
        .rows
        .iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..set.len()).filter(|&i| set.meta[i].volume_id == row.volume_id).collect();
            if idx.is_empty() {
                return Err(Error::InsufficientData(format!("no features for volume {}", row.volume_id)));
            }
            idx.sort_by_key(|&i| set.meta[i].bscan);
            let features = DMatrix::from_fn(set.dim(), idx.len(), |r, c| set.features[(r, idx[c])]);
            let bscans = idx.iter().map(|&i| set.meta[i].bscan.to_string()).collect();
            Ok(VolumeFeatures {
                record: VolumeRecord {
                    id: row.volume_id.clone(),
                    class: row.class,
                    bscans,
                    training_frames: row.frames.clone(),
                },
                features,
            })
        })
        .collect()
}

/// Trains on the selected frames of every volume.
pub fn train_on_volumes(volumes: &[VolumeFeatures], cfg: &PipelineConfig) -> Result<TrainedModel> {
    let mut cols = Vec::new();
    let mut labels = Vec::new();
    for v in volumes {
        for f in select_training_bscans(&v.record, cfg.frames_per_volume)? {
            cols.push(v.features.column(f).into_owned());
            labels.push(v.record.class.index());
        }
    }
    if cols.is_empty() {
        return Err(Error::InsufficientData("no training frames".into()));
    }
    let mut model = train(cfg.algorithm, &DMatrix::from_columns(&cols), &labels, &cfg.train)?;
    model.dictionary.labels = VolumeClass::ALL.iter().take(model.dictionary.n_classes()).map(|c| c.name().to_string()).collect();
    Ok(model)
}

/// Runs the requested stages in dependency order under `out`. Crops are
/// written as 16-bit PNGs to `out/crops/<volume>/<bscan>.png`; features,
/// model and report go to `features.bin`, `model.dlm` and `report.json`.
/// Later stages read what earlier runs left in `out` when their inputs
/// are not produced in the same run.
pub fn run_pipeline(manifest: &DatasetManifest, stages: &[Stage], cfg: &PipelineConfig, out: &Path) -> Result<PipelineOutputs> {
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    std::fs::create_dir_all(out)?;
    let mut outputs = PipelineOutputs::default();

    if stages.contains(&Stage::Preprocess) {
        let crops = preprocess_all(manifest, &cfg.preprocess)?;
        let dir = crops_dir(out);
        for (row, images) in manifest.rows.iter().zip(&crops) {
            let vdir = dir.join(&row.volume_id);
            std::fs::create_dir_all(&vdir)?;
            for (b, img) in images.iter().enumerate() {
                save_gray_png(&vdir.join(format!("{b:04}.png")), img)
                    .map_err(stage_error(Stage::Preprocess, Some(&row.volume_id), Some(b)))?;
            }
        }
        write_stamp(&dir, Stage::Preprocess, cfg)?;
        outputs.crops = Some(dir);
    }

    if stages.contains(&Stage::Features) {
        let dir = crops_dir(out);
        let mut all = Vec::new();
        let mut meta = Vec::new();
        for row in &manifest.rows {
            let vdir = dir.join(&row.volume_id);
            let files = list_bscans(&vdir).map_err(stage_error(Stage::Features, Some(&row.volume_id), None))?;
            let images = files
                .iter()
                .enumerate()
                .map(|(b, f)| load_gray(f).map_err(stage_error(Stage::Features, Some(&row.volume_id), Some(b))))
                .collect::<Result<Vec<_>>>()?;
            let m = features_of(&row.volume_id, &images, cfg)?;
            for b in 0..m.ncols() {
                meta.push(SampleMeta { volume_id: row.volume_id.clone(), bscan: b, class: row.class.name().into() });
            }
            all.push(m);
        }
        let dim = all.first().map_or(0, |m| m.nrows());
        let total: usize = all.iter().map(|m| m.ncols()).sum();
        let mut features = DMatrix::zeros(dim, total);
        let mut start = 0;
        for m in &all {
            features.columns_mut(start, m.ncols()).copy_from(m);
            start += m.ncols();
        }
        let path = features_path(out);
        save_features(&path, &FeatureSet::new(features, meta)?)?;
        write_stamp(&path, Stage::Features, cfg)?;
        outputs.features = Some(path);
    }

    if stages.contains(&Stage::Train) || stages.contains(&Stage::Crossval) {
        let set = load_features(&features_path(out))?;
        let volumes = volumes_from_features(&set, manifest)?;
        if stages.contains(&Stage::Train) {
            let model = train_on_volumes(&volumes, cfg).map_err(stage_error(Stage::Train, None, None))?;
            let path = model_path(out);
            save_model(&path, &model)?;
            write_stamp(&path, Stage::Train, cfg)?;
            outputs.model = Some(path);
        }
        if stages.contains(&Stage::Crossval) {
            let report = leave_three_out_cv(&volumes, &cfg.cv_options()).map_err(stage_error(Stage::Crossval, None, None))?;
            let path = report_path(out);
            write_report(&path, &report)?;
            write_stamp(&path, Stage::Crossval, cfg)?;
            outputs.report = Some(path);
        }
    }
    Ok(outputs)
}

pub fn write_report(path: &Path, report: &CvReport) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}
