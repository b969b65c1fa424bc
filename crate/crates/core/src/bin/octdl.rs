use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use octdl::dictlearn::{train, Algorithm, Classifier, Rule, TrainConfig};
use octdl::eval::{accuracy_table, leave_three_out_cv, sweep_report, threshold_range, VolumeClass, VolumeFeatures};
use octdl::features::{extract_features, HogSpec, PyramidSpec};
use octdl::io::{
    compute_volume_features, generate_synthetic, list_bscans, load_features, load_gray, load_manifest, load_model,
    run_pipeline, save_features, save_gray_png, save_model, volumes_from_features, write_report, DatasetManifest,
    FeatureSet, PipelineConfig, SampleMeta, Stage, SyntheticSpec,
};
use octdl::preprocess::{preprocess_bscan, BaselineMethod, PreprocessConfig};
use octdl::{Error, Result};

/// Retinal OCT B-scan classification with structured dictionary learning.
#[derive(Parser)]
#[command(name = "octdl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance, flatten and crop B-scans into 65x380 PNGs.
    Preprocess(PreprocessArgs),
    /// Pyramid HOG features of cropped B-scans into a DLF1 file.
    Features(FeaturesArgs),
    /// Train a dictionary model on a feature file.
    Train(TrainArgs),
    /// Classify every sample of a feature file.
    Classify(ClassifyArgs),
    /// Leave-three-out cross-validation over a dataset manifest.
    Crossval(CrossvalArgs),
    /// Volume accuracy as a function of the abnormal-fraction threshold.
    Sweep(SweepArgs),
    /// Run several stages with artifacts stamped by config hash.
    Pipeline(PipelineArgs),
    /// Write a synthetic class-subspace feature file.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Copar,
    Fddl,
    Lrsdl,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Copar => Algorithm::Copar,
            AlgoArg::Fddl => Algorithm::Fddl,
            AlgoArg::Lrsdl => Algorithm::Lrsdl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Gc,
    Lc,
    Lrsdl,
}

impl From<RuleArg> for Rule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Gc => Rule::Gc,
            RuleArg::Lc => Rule::Lc,
            RuleArg::Lrsdl => Rule::Lrsdl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Hull,
    Fraction,
}

#[derive(Args, Clone)]
struct PreprocessFlags {
    /// Baseline polynomial degree (1-4).
    #[arg(long, default_value_t = 2)]
    degree: usize,
    #[arg(long, value_enum, default_value = "hull")]
    method: MethodArg,
    /// Fraction of columns kept by the fraction baseline method.
    #[arg(long, default_value_t = 0.3)]
    fraction: f64,
    #[arg(long, default_value_t = 15)]
    median_window: usize,
    /// Mixture components for contrast enhancement (0 disables it).
    #[arg(long, default_value_t = 3)]
    denoise_components: usize,
    #[arg(long, default_value_t = 30)]
    em_iters: usize,
}

impl PreprocessFlags {
    fn config(&self, seed: u64) -> PreprocessConfig {
        PreprocessConfig {
            degree: self.degree,
            method: match self.method {
                MethodArg::Hull => BaselineMethod::ConvexHull,
                MethodArg::Fraction => BaselineMethod::Fraction,
            },
            fraction: self.fraction,
            median_window: self.median_window,
            denoise_components: self.denoise_components,
            em_iters: self.em_iters,
            seed,
        }
    }
}

#[derive(Args, Clone)]
struct FeatureFlags {
    #[arg(long, default_value_t = 2)]
    levels: usize,
    #[arg(long, default_value_t = 9)]
    bins: usize,
}

impl FeatureFlags {
    fn specs(&self) -> (PyramidSpec, HogSpec) {
        (PyramidSpec { levels: self.levels, ..PyramidSpec::default() }, HogSpec::with_bins(self.bins))
    }
}

#[derive(Args, Clone)]
struct Hyper {
    #[arg(long, default_value_t = 0.01)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda2: f64,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    w: f64,
    #[arg(long, default_value_t = 32)]
    class_atoms: usize,
    #[arg(long, default_value_t = 16)]
    shared_atoms: usize,
    #[arg(long, default_value_t = 50)]
    outer_iters: usize,
    #[arg(long, default_value_t = 20)]
    inner_iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Hyper {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            eta: self.eta,
            gamma: self.gamma,
            w: self.w,
            class_atoms: self.class_atoms,
            shared_atoms: self.shared_atoms,
            outer_iters: self.outer_iters,
            inner_iters: self.inner_iters,
            tol: self.tol,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct PreprocessArgs {
    /// An image file or a directory of PNG/PGM B-scans.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: PreprocessFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Directory of cropped B-scans, or of one sub-directory per volume.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: FeatureFlags,
    /// Manifest supplying the class of each volume directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    algo: AlgoArg,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Decision rule; defaults to lrsdl for LRSDL models and gc otherwise.
    #[arg(long, value_enum)]
    rule: Option<RuleArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset manifest (TSV).
    #[arg(long)]
    data: PathBuf,
    /// Precomputed features for the manifest's volumes; computed from the images otherwise.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fddl")]
    algo: AlgoArg,
    #[arg(long, value_enum)]
    rule: Option<RuleArg>,
    #[arg(long, default_value_t = 15)]
    reps: usize,
    /// Training B-scans per volume.
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[command(flatten)]
    hyper: Hyper,
    #[command(flatten)]
    prep: PreprocessFlags,
    #[command(flatten)]
    feat: FeatureFlags,
}

#[derive(Args)]
struct CrossvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.04)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `lo:hi:step`.
    #[arg(long, default_value = "0:0.4:0.01")]
    thresholds: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated subset of preprocess,features,train,crossval.
    #[arg(long, value_delimiter = ',', default_value = "preprocess,features,train,crossval")]
    stages: Vec<String>,
    /// JSON pipeline configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    class_dim: usize,
    #[arg(long, default_value_t = 2)]
    shared_dim: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn images_in(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        Ok(vec![path.to_path_buf()])
    } else {
        list_bscans(path)
    }
}

fn preprocess(args: PreprocessArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let cfg = args.flags.config(args.seed);
    let files = images_in(&args.input)?;
    for (i, file) in files.iter().enumerate() {
        let img = load_gray(file)?;
        let bcfg = PreprocessConfig { seed: octdl::rng::derive_seed(args.seed, i as u64), ..cfg.clone() };
        let crop = preprocess_bscan(&img, &bcfg).map_err(|e| Error::Stage {
            stage: "preprocess".into(),
            volume: Some(args.input.display().to_string()),
            bscan: Some(i),
            source: Box::new(e),
        })?;
        let name = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        save_gray_png(&args.out.join(format!("{name}.png")), &crop)?;
    }
    println!("wrote {} crops to {}", files.len(), args.out.display());
    Ok(())
}

fn features(args: FeaturesArgs) -> Result<()> {
    let (pspec, hspec) = args.flags.specs();
    let classes: Vec<(String, String)> = match &args.manifest {
        Some(m) => load_manifest(m)?
            .rows
            .into_iter()
            .map(|r| (r.volume_id, r.class.name().to_string()))
            .collect(),
        None => Vec::new(),
    };
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(&args.input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        subdirs.push(args.input.clone());
    }
    let mut cols = Vec::new();
    let mut meta = Vec::new();
    for dir in subdirs {
        let volume = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let class = classes
            .iter()
            .find(|(v, _)| *v == volume)
            .map_or_else(|| "NA".to_string(), |(_, c)| c.clone());
        for (b, file) in list_bscans(&dir)?.iter().enumerate() {
            let f = extract_features(&load_gray(file)?, &pspec, &hspec)?;
            cols.push(nalgebra::DVector::from_vec(f.values));
            meta.push(SampleMeta { volume_id: volume.clone(), bscan: b, class: class.clone() });
        }
    }
    if cols.is_empty() {
        return Err(Error::InsufficientData(format!("no images under {}", args.input.display())));
    }
    let set = FeatureSet::new(DMatrix::from_columns(&cols), meta)?;
    save_features(&args.out, &set)?;
    println!("wrote {} x {} features to {}", set.len(), set.dim(), args.out.display());
    Ok(())
}

/// Class names of a feature file in label order: the OCT classes in their
/// usual order when every name is one of them, alphabetical otherwise.
fn class_names(set: &FeatureSet) -> Vec<String> {
    let names: BTreeSet<&str> = set.meta.iter().map(|m| m.class.as_str()).collect();
    let parsed: Option<BTreeSet<VolumeClass>> = names.iter().map(|n| n.parse().ok()).collect();
    match parsed {
        Some(classes) => classes.into_iter().map(|c| c.name().to_string()).collect(),
        None => names.into_iter().map(str::to_string).collect(),
    }
}

fn label_of(names: &[String], class: &str) -> Option<usize> {
    let parsed = class.parse::<VolumeClass>().ok();
    names
        .iter()
        .position(|n| n == class || parsed.is_some_and(|p| n == p.name()))
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let set = load_features(&args.features)?;
    let names = class_names(&set);
    let labels: Vec<usize> = set.meta.iter().map(|m| label_of(&names, &m.class).expect("name list covers all")).collect();
    let mut model = train(args.algo.into(), &set.features, &labels, &args.hyper.config())?;
    model.dictionary.labels = names;
    save_model(&args.out, &model)?;
    println!(
        "trained {} on {} samples, final objective {:.6}, model written to {}",
        model.algorithm,
        set.len(),
        model.objective_trace.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Prediction<'a> {
    volume_id: &'a str,
    bscan: usize,
    class: &'a str,
    predicted: &'a str,
    scores: Vec<f64>,
}

fn classify_cmd(args: ClassifyArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let set = load_features(&args.features)?;
    let rule = args.rule.map_or(model.algorithm.default_rule(), Rule::from);
    let results = Classifier::new(&model, rule)?.classify_batch(&set.features)?;
    let preds: Vec<Prediction> = set
        .meta
        .iter()
        .zip(results)
        .map(|(m, r)| Prediction {
            volume_id: &m.volume_id,
            bscan: m.bscan,
            class: &m.class,
            predicted: &model.dictionary.labels[r.label],
            scores: r.scores,
        })
        .collect();
    let known: Vec<_> = preds.iter().filter(|p| label_of(&model.dictionary.labels, p.class).is_some()).collect();
    if !known.is_empty() {
        let correct = known.iter().filter(|p| label_of(&model.dictionary.labels, p.class) == label_of(&model.dictionary.labels, p.predicted)).count();
        println!("accuracy {:.2}% on {} labelled samples", 100.0 * correct as f64 / known.len() as f64, known.len());
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&preds)?)?;
    Ok(())
}

fn pipeline_config(d: &DataArgs, threshold: f64) -> PipelineConfig {
    let (pyramid, hog) = d.feat.specs();
    PipelineConfig {
        preprocess: d.prep.config(d.hyper.seed),
        pyramid,
        hog,
        algorithm: d.algo.into(),
        rule: d.rule.map(Rule::from),
        train: d.hyper.config(),
        repetitions: d.reps,
        threshold,
        frames_per_volume: d.frames,
    }
}

fn dataset(d: &DataArgs, cfg: &PipelineConfig) -> Result<(DatasetManifest, Vec<VolumeFeatures>)> {
    let manifest = load_manifest(&d.data)?;
    let volumes = match &d.features {
        Some(path) => volumes_from_features(&load_features(path)?, &manifest)?,
        None => compute_volume_features(&manifest, cfg)?,
    };
    Ok((manifest, volumes))
}

fn crossval(args: CrossvalArgs) -> Result<()> {
    let cfg = pipeline_config(&args.data, args.threshold);
    let (_, volumes) = dataset(&args.data, &cfg)?;
    let report = leave_three_out_cv(&volumes, &cfg.cv_options())?;
    write_report(&args.out, &report)?;
    print!("{}", accuracy_table(std::slice::from_ref(&report)));
    Ok(())
}

fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad threshold range {s:?}"))))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [lo, hi, step] => threshold_range(*lo, *hi, *step),
        [t] => Ok(vec![*t]),
        _ => Err(Error::InvalidInput(format!("expected lo:hi:step, got {s:?}"))),
    }
}

fn sweep(args: SweepArgs) -> Result<()> {
    let thresholds = parse_range(&args.thresholds)?;
    let cfg = pipeline_config(&args.data, thresholds[0]);
    let (_, volumes) = dataset(&args.data, &cfg)?;
    let report = leave_three_out_cv(&volumes, &cfg.cv_options())?;
    let points = sweep_report(&report, &thresholds)?;
    for p in &points {
        println!("{:.2}\t{}/{}", p.threshold, p.correct, p.total);
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&points)?)?;
    Ok(())
}

fn pipeline(args: PipelineArgs) -> Result<()> {
    let manifest = load_manifest(&args.data)?;
    let cfg: PipelineConfig = match &args.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => PipelineConfig::default(),
    };
    let stages = args.stages.iter().map(|s| s.parse::<Stage>()).collect::<Result<Vec<_>>>()?;
    let out = run_pipeline(&manifest, &stages, &cfg, &args.out)?;
    for p in [out.crops, out.features, out.model, out.report].into_iter().flatten() {
        println!("{}", p.display());
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        classes: args.classes,
        dim: args.dim,
        class_dim: args.class_dim,
        shared_dim: args.shared_dim,
        per_class: args.per_class,
        noise_std: args.noise,
        seed: args.seed,
    };
    let (y, labels) = generate_synthetic(&spec)?;
    let meta = labels
        .iter()
        .enumerate()
        .map(|(j, &c)| SampleMeta {
            volume_id: format!("synth{c}"),
            bscan: j % args.per_class,
            class: VolumeClass::from_index(c).map_or_else(|| format!("class{c}"), |v| v.name().to_string()),
        })
        .collect();
    save_features(&args.out, &FeatureSet::new(y, meta)?)?;
    println!("wrote {} synthetic samples to {}", labels.len(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Crossval(a) => crossval(a),
        Command::Sweep(a) => sweep(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
