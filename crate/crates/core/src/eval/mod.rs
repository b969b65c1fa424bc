//! Volume-level decisions, leave-three-out cross-validation and reporting.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictlearn::{train, Algorithm, Classifier, Rule, TrainConfig};
use crate::error::{Error, Result};
use crate::rng;

/// Default abnormal-fraction threshold for labelling a volume.
pub const DEFAULT_THRESHOLD: f64 = 0.04;
/// Training B-scans taken from each volume.
pub const DEFAULT_FRAMES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VolumeClass {
    Normal,
    #[serde(rename = "DME")]
    Dme,
    #[serde(rename = "AMD")]
    Amd,
}

impl VolumeClass {
    pub const ALL: [VolumeClass; 3] = [VolumeClass::Normal, VolumeClass::Dme, VolumeClass::Amd];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            VolumeClass::Normal => "Normal",
            VolumeClass::Dme => "DME",
            VolumeClass::Amd => "AMD",
        }
    }
}

impl std::fmt::Display for VolumeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for VolumeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(VolumeClass::Normal),
            "dme" => Ok(VolumeClass::Dme),
            "amd" => Ok(VolumeClass::Amd),
            other => Err(Error::InvalidInput(format!("unknown class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRecord {
    pub id: String,
    pub class: VolumeClass,
    /// B-scan references (file names) in acquisition order.
    pub bscans: Vec<String>,
    pub training_frames: Option<Vec<usize>>,
}

/// A volume with one feature column per B-scan, in B-scan order.
#[derive(Debug, Clone)]
pub struct VolumeFeatures {
    pub record: VolumeRecord,
    pub features: DMatrix<f64>,
}

/// Indices of the B-scans used for training: the annotated frames when
/// present (first `k` of them), otherwise `k` frames centred on the middle.
pub fn select_training_bscans(vol: &VolumeRecord, k: usize) -> Result<Vec<usize>> {
    let len = vol.bscans.len();
    if k > len {
        return Err(Error::InvalidInput(format!(
            "volume {} has {len} B-scans, {k} training frames requested",
            vol.id
        )));
    }
    if let Some(frames) = &vol.training_frames {
        if let Some(&bad) = frames.iter().find(|&&f| f >= len) {
            return Err(Error::OutOfBounds(format!("volume {}: frame {bad} of {len}", vol.id)));
        }
        return Ok(frames.iter().copied().take(k).collect());
    }
    let start = (len - k) / 2;
    Ok((start..start + k).collect())
}

/// Volume label from per-B-scan labels: the more frequent abnormal class if
/// its fraction is positive and reaches `threshold` (DME wins ties), else Normal.
pub fn label_volume(bscan_labels: &[VolumeClass], threshold: f64) -> Result<VolumeClass> {
    if bscan_labels.is_empty() {
        return Err(Error::InvalidInput("cannot label an empty volume".into()));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidInput(format!("threshold must lie in [0,1], got {threshold}")));
    }
    let n = bscan_labels.len() as f64;
    let frac = |c| bscan_labels.iter().filter(|&&l| l == c).count() as f64 / n;
    let (dme, amd) = (frac(VolumeClass::Dme), frac(VolumeClass::Amd));
    let top = dme.max(amd);
    if top > 0.0 && top >= threshold {
        Ok(if dme >= amd { VolumeClass::Dme } else { VolumeClass::Amd })
    } else {
        Ok(VolumeClass::Normal)
    }
}

/// Evenly spaced thresholds from `lo` to `hi` inclusive.
pub fn threshold_range(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(Error::InvalidInput(format!("bad threshold range {lo}:{hi}:{step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub algorithm: Algorithm,
    pub config: TrainConfig,
    /// Decision rule; the algorithm's default when `None`.
    pub rule: Option<Rule>,
    pub repetitions: usize,
    pub threshold: f64,
    pub frames_per_volume: usize,
    pub seed: u64,
}

impl CvOptions {
    pub fn new(algorithm: Algorithm, config: TrainConfig) -> Self {
        let seed = config.seed;
        Self {
            algorithm,
            config,
            rule: None,
            repetitions: 1,
            threshold: DEFAULT_THRESHOLD,
            frames_per_volume: DEFAULT_FRAMES,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumePrediction {
    pub id: String,
    pub truth: VolumeClass,
    pub predicted: VolumeClass,
    pub bscan_labels: Vec<VolumeClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repetition: usize,
    pub fold: usize,
    pub volumes: Vec<VolumePrediction>,
}

/// Accuracies in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassAccuracy {
    #[serde(rename = "Normal")]
    pub normal: f64,
    #[serde(rename = "DME")]
    pub dme: f64,
    #[serde(rename = "AMD")]
    pub amd: f64,
}

impl ClassAccuracy {
    pub fn get(&self, c: VolumeClass) -> f64 {
        match c {
            VolumeClass::Normal => self.normal,
            VolumeClass::Dme => self.dme,
            VolumeClass::Amd => self.amd,
        }
    }

    fn set(&mut self, c: VolumeClass, v: f64) {
        match c {
            VolumeClass::Normal => self.normal = v,
            VolumeClass::Dme => self.dme = v,
            VolumeClass::Amd => self.amd = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub algorithm: Algorithm,
    pub per_class: ClassAccuracy,
    pub whole: f64,
    pub repetitions: usize,
    pub seeds: Vec<u64>,
    pub threshold: f64,
    pub folds: Vec<FoldResult>,
}

/// Per-class and overall accuracy of `(truth, predicted)` pairs. Classes
/// without volumes score 0.
pub fn accuracy(pairs: &[(VolumeClass, VolumeClass)]) -> (ClassAccuracy, f64) {
    let mut per = ClassAccuracy::default();
    for c in VolumeClass::ALL {
        let total = pairs.iter().filter(|(t, _)| *t == c).count();
        let correct = pairs.iter().filter(|(t, p)| *t == c && p == t).count();
        if total > 0 {
            per.set(c, 100.0 * correct as f64 / total as f64);
        }
    }
    let correct = pairs.iter().filter(|(t, p)| t == p).count();
    let whole = if pairs.is_empty() { 0.0 } else { 100.0 * correct as f64 / pairs.len() as f64 };
    (per, whole)
}

/// Test folds of one repetition: each class's volumes are shuffled and fold
/// `f` takes the `f`-th volume of every class that still has one.
pub fn cv_folds(classes: &[VolumeClass], seed: u64) -> Vec<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = VolumeClass::ALL
        .iter()
        .map(|&c| (0..classes.len()).filter(|&i| classes[i] == c).collect())
        .collect();
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng::stream(seed, c as u64));
    }
    let n_folds = by_class.iter().map(Vec::len).max().unwrap_or(0);
    (0..n_folds)
        .map(|f| by_class.iter().filter_map(|idx| idx.get(f).copied()).collect())
        .collect()
}

fn run_fold(volumes: &[VolumeFeatures], test: &[usize], opts: &CvOptions, train_seed: u64) -> Result<Vec<VolumePrediction>> {
    let mut cols = Vec::new();
    let mut labels = Vec::new();
    for (i, v) in volumes.iter().enumerate() {
        if test.contains(&i) {
            continue;
        }
        for f in select_training_bscans(&v.record, opts.frames_per_volume)? {
            cols.push(v.features.column(f).into_owned());
            labels.push(v.record.class.index());
        }
    }
    if cols.is_empty() {
        return Err(Error::InsufficientData("fold leaves no training volumes".into()));
    }
    let y = DMatrix::from_columns(&cols);
    let config = TrainConfig { seed: train_seed, ..opts.config.clone() };
    let model = train(opts.algorithm, &y, &labels, &config)?;
    let classifier = Classifier::new(&model, opts.rule.unwrap_or(opts.algorithm.default_rule()))?;
    test.iter()
        .map(|&i| {
            let v = &volumes[i];
            let bscan_labels = classifier
                .classify_batch(&v.features)?
                .into_iter()
                .map(|c| VolumeClass::from_index(c.label).expect("three classes"))
                .collect::<Vec<_>>();
            Ok(VolumePrediction {
                id: v.record.id.clone(),
                truth: v.record.class,
                predicted: label_volume(&bscan_labels, opts.threshold)?,
                bscan_labels,
            })
        })
        .collect()
}

fn check_volumes(volumes: &[VolumeFeatures]) -> Result<()> {
    for c in VolumeClass::ALL {
        if !volumes.iter().any(|v| v.record.class == c) {
            return Err(Error::InsufficientData(format!("no {c} volume in the dataset")));
        }
    }
    let dim = volumes[0].features.nrows();
    for v in volumes {
        if v.features.ncols() != v.record.bscans.len() {
            return Err(Error::ShapeMismatch(format!(
                "volume {}: {} feature columns for {} B-scans",
                v.record.id,
                v.features.ncols(),
                v.record.bscans.len()
            )));
        }
        if v.features.nrows() != dim {
            return Err(Error::ShapeMismatch(format!("volume {}: feature dimension differs", v.record.id)));
        }
    }
    Ok(())
}

/// Leave-one-volume-per-class-out cross-validation, repeated with distinct
/// seeds; accuracies are averaged over repetitions.
pub fn leave_three_out_cv(volumes: &[VolumeFeatures], opts: &CvOptions) -> Result<CvReport> {
    check_volumes(volumes)?;
    if opts.repetitions == 0 {
        return Err(Error::InvalidInput("at least one repetition is needed".into()));
    }
    label_volume(&[VolumeClass::Normal], opts.threshold)?;
    let classes: Vec<VolumeClass> = volumes.iter().map(|v| v.record.class).collect();
    let seeds: Vec<u64> = (0..opts.repetitions).map(|r| rng::derive_seed(opts.seed, r as u64)).collect();
    let jobs: Vec<(usize, usize, Vec<usize>)> = seeds
        .iter()
        .enumerate()
        .flat_map(|(r, &s)| cv_folds(&classes, s).into_iter().enumerate().map(move |(f, t)| (r, f, t)))
        .collect();
    let folds: Vec<FoldResult> = jobs
        .par_iter()
        .map(|(r, f, test)| {
            run_fold(volumes, test, opts, rng::derive_seed(seeds[*r], *f as u64))
                .map(|volumes| FoldResult { repetition: *r, fold: *f, volumes })
                .map_err(|e| Error::Fold { repetition: *r, fold: *f, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let (per_class, whole) = summarize(&folds, opts.repetitions, |v| v.predicted);
    Ok(CvReport {
        algorithm: opts.algorithm,
        per_class,
        whole,
        repetitions: opts.repetitions,
        seeds,
        threshold: opts.threshold,
        folds,
    })
}

fn summarize(folds: &[FoldResult], reps: usize, predict: impl Fn(&VolumePrediction) -> VolumeClass) -> (ClassAccuracy, f64) {
    let mut per = ClassAccuracy::default();
    let mut whole = 0.0;
    for r in 0..reps {
        let pairs: Vec<_> = folds
            .iter()
            .filter(|f| f.repetition == r)
            .flat_map(|f| f.volumes.iter().map(|v| (v.truth, predict(v))))
            .collect();
        let (p, w) = accuracy(&pairs);
        for c in VolumeClass::ALL {
            per.set(c, per.get(c) + p.get(c) / reps as f64);
        }
        whole += w / reps as f64;
    }
    (per, whole)
}

/// Correctly labelled volumes at one threshold, summed over repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub correct: usize,
    pub total: usize,
}

/// Re-labels every volume of `report` from its cached B-scan predictions
/// at each threshold.
pub fn sweep_report(report: &CvReport, thresholds: &[f64]) -> Result<Vec<SweepPoint>> {
    thresholds
        .iter()
        .map(|&t| {
            let mut correct = 0;
            let mut total = 0;
            for v in report.folds.iter().flat_map(|f| &f.volumes) {
                total += 1;
                if label_volume(&v.bscan_labels, t)? == v.truth {
                    correct += 1;
                }
            }
            Ok(SweepPoint { threshold: t, correct, total })
        })
        .collect()
}

/// Runs cross-validation once and re-aggregates at each threshold.
pub fn threshold_sweep(volumes: &[VolumeFeatures], opts: &CvOptions, thresholds: &[f64]) -> Result<Vec<SweepPoint>> {
    sweep_report(&leave_three_out_cv(volumes, opts)?, thresholds)
}

/// One row per report: `Normal`, `DME`, `AMD` and whole-dataset accuracy, two decimals.
pub fn accuracy_table(reports: &[CvReport]) -> String {
    let mut out = format!("{:<8}{:>10}{:>10}{:>10}{:>16}\n", "Method", "Normal", "DME", "AMD", "Whole data set");
    for r in reports {
        let name = r.algorithm.name().to_uppercase();
        let a = &r.per_class;
        let _ = writeln!(out, "{name:<8}{:>10.2}{:>10.2}{:>10.2}{:>16.2}", a.normal, a.dme, a.amd, r.whole);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use VolumeClass::*;

    fn record(n: usize, frames: Option<Vec<usize>>) -> VolumeRecord {
        VolumeRecord {
            id: "v".into(),
            class: Normal,
            bscans: (0..n).map(|i| format!("{i}.png")).collect(),
            training_frames: frames,
        }
    }

    #[test]
    fn training_frames() {
        assert_eq!(select_training_bscans(&record(100, None), 10).unwrap(), (45..55).collect::<Vec<_>>());
        assert_eq!(select_training_bscans(&record(100, Some(vec![3, 7, 9])), 3).unwrap(), vec![3, 7, 9]);
        assert!(select_training_bscans(&record(100, None), 101).is_err());
        assert!(select_training_bscans(&record(5, Some(vec![5])), 1).is_err());
    }

    fn labels(dme: usize, amd: usize, total: usize) -> Vec<VolumeClass> {
        let mut v = vec![Dme; dme];
        v.extend(vec![Amd; amd]);
        v.resize(total, Normal);
        v
    }

    #[test]
    fn volume_label_examples() {
        assert_eq!(label_volume(&labels(5, 0, 100), 0.04).unwrap(), Dme);
        assert_eq!(label_volume(&labels(0, 3, 100), 0.04).unwrap(), Normal);
        assert_eq!(label_volume(&labels(4, 4, 100), 0.04).unwrap(), Dme);
        assert_eq!(label_volume(&labels(0, 1, 100), 0.0).unwrap(), Amd);
        assert_eq!(label_volume(&labels(0, 0, 100), 0.0).unwrap(), Normal);
        assert!(label_volume(&[], 0.04).is_err());
    }

    #[test]
    fn table_arithmetic() {
        let mut pairs: Vec<(VolumeClass, VolumeClass)> = Vec::new();
        for c in VolumeClass::ALL {
            for i in 0..15 {
                let wrong = c == Dme && i == 0;
                pairs.push((c, if wrong { Amd } else { c }));
            }
        }
        let (per, whole) = accuracy(&pairs);
        assert_eq!(format!("{:.2} {:.2} {:.2} {:.2}", per.normal, per.dme, per.amd, whole), "100.00 93.33 100.00 97.78");
    }

    #[test]
    fn range_includes_end() {
        let t = threshold_range(0.0, 0.4, 0.01).unwrap();
        assert_eq!(t.len(), 41);
        assert!((t[40] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn minimal_dataset_has_one_fold() {
        let folds = cv_folds(&[Normal, Dme, Amd], 3);
        assert_eq!(folds.len(), 1);
        let mut f = folds[0].clone();
        f.sort();
        assert_eq!(f, vec![0, 1, 2]);
    }
}
