//! Experiment front end: `generate`, `train`, `bench`, `interpolate`,
//! `manipulate` and `global-shift`. Each subcommand is also callable as a
//! library function.

mod bundle;
mod config;
mod dataset;

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use bundle::{ModelBundle, BUNDLE_FORMAT_VERSION};
pub use config::{AutoencoderSection, BenchSection, DataSection, ExperimentConfig, NamSection, DESK_LATENT_NOISE};
pub use dataset::{
    load_dataset, load_labels, response_discrepancy, sha256_hex, write_dataset, LabelRow, LoadedDataset, ManifestRow,
    IMAGE_DIR, LABELS, MANIFEST,
};

use crate::bench::{ablation_report, BenchReport, image_effect_benchmark, numeric_effect_benchmark, r2, ImageEffectTruth};
use crate::codec::{attribute_direction, train_autoencoder_with, Image, LatentCode};
use crate::error::{Error, Result};
use crate::lens::{effect_curve, global_shift, interpolate_latents, manipulate_latents, EffectCurve, GlobalShift, DEFAULT_ALPHA};
use crate::nam::{train_with, NaimData};
use crate::synth::SyntheticDataset;

#[derive(Debug, Parser)]
#[command(name = "naim", version, about = "Neural additive image models: synthetic experiments and effect interpretation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (PNG images, manifest.csv, labels.csv).
    Generate(ConfigArgs),
    /// Train the autoencoder and the additive model; writes bundle.json.
    Train(ConfigArgs),
    /// Run the ablation, image-effect and numeric-effect benchmarks.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        /// Bundle to evaluate; defaults to <out_dir>/bundle.json.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Skip training the tabular-only comparison arm.
        #[arg(long)]
        no_ablation: bool,
    },
    /// Effect curve along the latent interpolation between two images.
    Interpolate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        image_a: PathBuf,
        #[arg(long)]
        image_b: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Effect curve along an attribute direction fitted from labeled images.
    Manipulate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// CSV with `path,label` columns; paths relative to the CSV.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predictive distribution before and after shifting every image along
    /// an attribute direction.
    GlobalShift {
        #[arg(long)]
        bundle: PathBuf,
        /// Dataset directory containing manifest.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML experiment configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set nam.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(dir) = &self.out_dir {
            overrides.push(format!("out_dir={}", toml::Value::String(dir.display().to_string())));
        }
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Config(e.render().to_string().trim_end().to_string())),
    };
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.resolve()?;
            let dir = generate(&cfg)?;
            println!("wrote {} samples to {}", cfg.data.n_train + cfg.data.n_test, dir.display());
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let bundle = train(&cfg)?;
            println!("validation MSE {:.6}; bundle at {}", bundle.validation_mse, cfg.bundle_path().display());
        }
        Command::Bench { config, bundle, no_ablation } => {
            let cfg = config.resolve()?;
            let path = bundle.unwrap_or_else(|| cfg.bundle_path());
            print!("{}", bench(&cfg, &path, !no_ablation)?);
        }
        Command::Interpolate { bundle, image_a, image_b, k, out } => {
            let b = ModelBundle::load(&bundle)?;
            let curve = interpolate(&b, &Image::load_png(&image_a)?, &Image::load_png(&image_b)?, k)?;
            write_curve(&curve, &out)?;
            if let Some(score) = reference_r2(&curve) {
                println!("curve vs reference R2 {score:.4}");
            }
            println!("wrote {} steps to {}", curve.len(), out.display());
        }
        Command::Manipulate { bundle, image, labels, alpha, k, out } => {
            let b = ModelBundle::load(&bundle)?;
            let curve = manipulate(&b, &Image::load_png(&image)?, &labels, alpha, k)?;
            write_curve(&curve, &out)?;
            println!("wrote {} steps to {}", curve.len(), out.display());
        }
        Command::GlobalShift { bundle, data, labels, alpha, out } => {
            let b = ModelBundle::load(&bundle)?;
            let ds = load_dataset(&data)?;
            let shift = global_shift_run(&b, &ds, &labels, alpha)?;
            create_dir(&out)?;
            shift.write_csv(&out.join("shift.csv"), &ds.all_ids())?;
            shift.write_summary(&out.join("shift_summary.csv"), alpha)?;
            println!("mean {:.6} -> {:.6} over {} samples", shift.base_mean, shift.shifted_mean, shift.base.len());
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Path { path: dir.to_path_buf(), source: e })
}

/// Writes the dataset and a copy of the resolved config; returns the data
/// directory.
pub fn generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let d = &cfg.data;
    let all = SyntheticDataset::generate(d.domain, d.n_train + d.n_test, d.image_size, cfg.spec(), cfg.seed)?;
    let (train, test) = all.split(d.n_train)?;
    let dir = cfg.data_dir();
    create_dir(&dir)?;
    write_dataset(&dir, &train, &test)?;
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(dir)
}

/// Streams `stage,epoch,loss` rows so a failed run leaves a partial log.
struct LossLog {
    file: File,
}

impl LossLog {
    fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::Path { path: path.to_path_buf(), source: e })?;
        writeln!(file, "stage,epoch,loss")?;
        Ok(Self { file })
    }

    fn record(&mut self, stage: &str, epoch: usize, loss: f64) {
        if let Err(e) = writeln!(self.file, "{stage},{epoch},{loss}").and_then(|_| self.file.flush()) {
            log::warn!("could not append to loss log: {e}");
        }
    }
}

/// Trains the autoencoder on the training images, then the additive model on
/// frozen codes. Writes the bundle, `training_loss.csv` and effect tables.
pub fn train(cfg: &ExperimentConfig) -> Result<ModelBundle> {
    let data = load_dataset(&cfg.data_dir())?;
    create_dir(&cfg.out_dir)?;
    let mut losses = LossLog::create(&cfg.out_dir.join("training_loss.csv"))?;

    let (ae, _) = train_autoencoder_with(&data.train.images, &cfg.autoencoder_config(), &mut |e, l| {
        log::info!("autoencoder epoch {e}: {l:.6}");
        losses.record("autoencoder", e, l)
    })?;
    let nd = NaimData::from_dataset(&data.train, Some(&ae))?;
    let (model, _) = train_with(&nd, &cfg.train_config(true), &mut |e, l| {
        log::info!("nam epoch {e}: {l:.6}");
        losses.record("nam", e, l)
    })?;

    let truth = ImageEffectTruth::from_training(&data.train)?;
    let mut bundle = ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        config: cfg.clone(),
        manifest_sha256: data.manifest_sha256.clone(),
        autoencoder: ae,
        model,
        validation_mse: 0.0,
        image_truth_mean: truth.mean,
    };
    bundle.validation_mse = bundle.test_mse(&data)?;
    bundle.save(&cfg.bundle_path())?;
    write_effect_tables(&bundle, &data, &cfg.out_dir.join("effects"))?;
    Ok(bundle)
}

/// Centered numeric effects on a 101-point grid (`x,effect`) and the centered
/// image effect of each test image against its feature value (`phi,effect`).
fn write_effect_tables(bundle: &ModelBundle, data: &LoadedDataset, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    for j in 0..bundle.model.num_features() {
        let mut w = csv::Writer::from_path(dir.join(format!("f{}.csv", j + 1)))?;
        w.write_record(["x", "effect"])?;
        for (x, e) in bundle.model.effect_curve_numeric(j, &grid)? {
            w.write_record([x.to_string(), e.to_string()])?;
        }
        w.flush()?;
    }
    let codes = bundle.autoencoder.encode_batch(&data.test.images)?;
    let effects = bundle.model.centered_image_effects(&codes)?;
    let mut w = csv::Writer::from_path(dir.join("image.csv"))?;
    w.write_record(["phi", "effect"])?;
    for (p, e) in data.test.phi.iter().zip(effects) {
        w.write_record([p.to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the three benchmarks against a trained bundle and writes
/// `reports/*.csv` plus `reports/summary.txt`; returns the summary.
pub fn bench(cfg: &ExperimentConfig, bundle_path: &Path, with_ablation: bool) -> Result<String> {
    let bundle = ModelBundle::load(bundle_path)?;
    let data = load_dataset(&cfg.data_dir())?;
    bundle.verify(&data)?;
    let dir = cfg.reports_dir();
    create_dir(&dir)?;
    let mut summary = String::new();

    if with_ablation {
        let nd = NaimData::from_dataset(&data.train, Some(&bundle.autoencoder))?;
        let train_cfg = bundle.config.train_config(false);
        let (without, _) = crate::nam::train(&nd, &train_cfg)?;
        let report = ablation_report(&bundle.model, &without, &bundle.autoencoder, &data.train, &data.test, &train_cfg)?;
        report.write_csv(&dir.join("ablation.csv"))?;
        summary.push_str(&report.summary());
    }

    let truth = ImageEffectTruth { mean: bundle.image_truth_mean, ..ImageEffectTruth::from_training(&data.train)? };
    let params = cfg.bench_params();
    let image = image_effect_benchmark(&bundle.model, &bundle.autoencoder, &data.test.images, &truth, &params)?;
    image.write_csv(&dir.join("image_effect.csv"))?;
    summary.push_str(&image.summary());

    let numeric = numeric_effect_benchmark(&bundle.model, &data.test.feature_rows(), data.test.domain, data.test.spec.image_effect)?;
    let numeric = BenchReport { seed: cfg.seed, ..numeric };
    numeric.write_csv(&dir.join("numeric_effect.csv"))?;
    summary.push_str(&numeric.summary());

    std::fs::write(dir.join("summary.txt"), &summary)?;
    Ok(summary)
}

fn check_image(bundle: &ModelBundle, image: &Image) -> Result<()> {
    let want = bundle.autoencoder.image_dims();
    if image.dims() != want {
        return Err(Error::Shape(format!("image is {:?}, bundle expects {want:?}", image.dims())));
    }
    Ok(())
}

/// Effect curve between two images. When both endpoints carry a readable
/// ground-truth feature, the true centered effect along the feature path is
/// attached as reference.
pub fn interpolate(bundle: &ModelBundle, a: &Image, b: &Image, k: usize) -> Result<EffectCurve> {
    check_image(bundle, a)?;
    check_image(bundle, b)?;
    let ae = &bundle.autoencoder;
    let seq = interpolate_latents(&ae.encode(a)?, &ae.encode(b)?, k)?;
    let curve = effect_curve(&bundle.model, ae, &seq)?;
    let domain = bundle.config.data.domain;
    let effect = bundle.config.data.image_effect;
    match (domain.phi(a), domain.phi(b)) {
        (Ok(pa), Ok(pb)) => {
            let reference = curve
                .fractions
                .iter()
                .map(|&t| effect.eval((1.0 - t) * pa + t * pb) - bundle.image_truth_mean)
                .collect();
            curve.with_reference(reference)
        }
        _ => Ok(curve),
    }
}

/// Fits the attribute direction on the labeled images in `labels` and
/// manipulates `image` along it.
pub fn manipulate(bundle: &ModelBundle, image: &Image, labels: &Path, alpha: f64, k: usize) -> Result<EffectCurve> {
    check_image(bundle, image)?;
    let direction = direction_from_labels(bundle, labels)?;
    let seq = manipulate_latents(&bundle.autoencoder.encode(image)?, &direction, alpha, k)?;
    effect_curve(&bundle.model, &bundle.autoencoder, &seq)
}

pub fn direction_from_labels(bundle: &ModelBundle, labels: &Path) -> Result<Vec<f64>> {
    let (images, flags) = load_labels(labels)?;
    for im in &images {
        check_image(bundle, im)?;
    }
    let codes: Vec<LatentCode> = bundle.autoencoder.encode_batch(&images)?;
    attribute_direction(&codes, &flags)
}

/// Global shift over every sample in the dataset, train split first.
pub fn global_shift_run(bundle: &ModelBundle, data: &LoadedDataset, labels: &Path, alpha: f64) -> Result<GlobalShift> {
    let direction = direction_from_labels(bundle, labels)?;
    let images: Vec<Image> = data.train.images.iter().chain(&data.test.images).cloned().collect();
    let rows: Vec<Vec<f64>> = data.train.feature_rows().into_iter().chain(data.test.feature_rows()).collect();
    global_shift(&bundle.model, &bundle.autoencoder, &images, &rows, &direction, alpha)
}

pub fn write_curve(curve: &EffectCurve, out: &Path) -> Result<()> {
    create_dir(out)?;
    curve.write_csv(&out.join("curve.csv"))?;
    curve.write_strip(&out.join("strip.png"))
}

/// R² of the curve against its reference, if one is attached and varies.
pub fn reference_r2(curve: &EffectCurve) -> Option<f64> {
    curve.reference.as_ref().and_then(|r| r2(&curve.predictions, r).ok())
}
