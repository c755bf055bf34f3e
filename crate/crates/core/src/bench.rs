//! Regression metrics and the three evaluation protocols: overall fit with
//! and without the image term, image-effect recovery along latent
//! interpolations, and recovery of the tabular effects.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::codec::{AutoencoderModel, Image};
use crate::error::{invalid, shape_err, Error, Result};
use crate::lens::interpolate_latents;
use crate::nam::{train, NaimData, NaimModel, TrainConfig};
use crate::seed;
use crate::synth::{numeric_effect, Domain, ImageEffect, SyntheticDataset};

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return shape_err(format!("{} predictions for {} targets", pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::Empty("metric inputs".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if truth.len() < 2 {
        return invalid("r2 needs at least two points");
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return invalid("r2 undefined for constant truth");
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `samples` and Uniform(0, 1).
pub fn ks_uniform(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("KS sample".into()));
    }
    let mut v = samples.to_vec();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("KS sample".into()));
    }
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    Ok(v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = x.clamp(0.0, 1.0);
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// What was evaluated, e.g. `with_image`, `image_effect`, `f1=2x`.
    pub label: String,
    pub mse: f64,
    pub r2: f64,
    /// Number of units averaged (test samples, pairs, or grid points).
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub protocol: String,
    pub domain: Domain,
    pub image_effect: ImageEffect,
    pub seed: u64,
    /// Scale parameters as `(name, value)`.
    pub scale: Vec<(String, usize)>,
    pub rows: Vec<BenchRow>,
    /// Pairs dropped because their reference effect is constant.
    pub skipped: usize,
}

impl BenchReport {
    pub fn row(&self, label: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["protocol", "domain", "image_effect", "seed", "scale", "label", "mse", "r2", "count", "skipped"])?;
        let scale = self.scale.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";");
        for r in &self.rows {
            w.write_record([
                self.protocol.clone(),
                self.domain.to_string(),
                self.image_effect.tag().to_string(),
                self.seed.to_string(),
                scale.clone(),
                r.label.clone(),
                r.mse.to_string(),
                r.r2.to_string(),
                r.count.to_string(),
                self.skipped.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} | domain={} f_img={} seed={}",
            self.protocol,
            self.domain,
            self.image_effect.tag(),
            self.seed
        );
        for (k, v) in &self.scale {
            let _ = write!(s, " {k}={v}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "  {:<16} MSE {:.6}  R2 {:.4}  (n={})", r.label, r.mse, r.r2, r.count);
        }
        if self.skipped > 0 {
            let _ = writeln!(s, "  skipped {} degenerate pairs", self.skipped);
        }
        s
    }
}

/// Models from both ablation arms along with their report.
#[derive(Clone, Debug)]
pub struct Ablation {
    pub report: BenchReport,
    pub with_image: NaimModel,
    pub without_image: NaimModel,
}

/// Trains the image and tabular-only arms on `train` and scores both on
/// `test`.
pub fn ablation_run(train_ds: &SyntheticDataset, test_ds: &SyntheticDataset, ae: &AutoencoderModel, config: &TrainConfig) -> Result<Ablation> {
    let train_data = NaimData::from_dataset(train_ds, Some(ae))?;
    let (with_image, _) = train(&train_data, &TrainConfig { use_image: true, ..config.clone() })?;
    let (without_image, _) = train(&train_data, &TrainConfig { use_image: false, ..config.clone() })?;
    let report = ablation_report(&with_image, &without_image, ae, train_ds, test_ds, config)?;
    Ok(Ablation { report, with_image, without_image })
}

/// Scores already-trained ablation arms on `test`.
pub fn ablation_report(
    with_image: &NaimModel,
    without_image: &NaimModel,
    ae: &AutoencoderModel,
    train_ds: &SyntheticDataset,
    test_ds: &SyntheticDataset,
    config: &TrainConfig,
) -> Result<BenchReport> {
    let test_codes = ae.encode_batch(&test_ds.images)?;
    let test_rows = test_ds.feature_rows();
    let pred_with = with_image.predict_batch(&test_rows, &test_codes)?;
    let pred_without = without_image.predict_tabular_batch(&test_rows)?;
    let row = |label: &str, pred: &[f64]| -> Result<BenchRow> {
        Ok(BenchRow { label: label.into(), mse: mse(pred, &test_ds.y)?, r2: r2(pred, &test_ds.y)?, count: pred.len() })
    };
    Ok(BenchReport {
        protocol: "ablation".into(),
        domain: train_ds.domain,
        image_effect: train_ds.spec.image_effect,
        seed: config.seed,
        scale: vec![("n_train".into(), train_ds.len()), ("n_test".into(), test_ds.len()), ("epochs".into(), config.epochs)],
        rows: vec![row("with_image", &pred_with)?, row("without_image", &pred_without)?],
        skipped: 0,
    })
}

/// Ground truth for the image-effect benchmark.
#[derive(Clone, Copy, Debug)]
pub struct ImageEffectTruth {
    pub domain: Domain,
    pub effect: ImageEffect,
    /// Training-set mean of `f_img(Φ)`, used to center the true effect.
    pub mean: f64,
}

impl ImageEffectTruth {
    pub fn from_training(ds: &SyntheticDataset) -> Result<Self> {
        let phi = ds.extracted_phi()?;
        let mean = phi.iter().map(|&p| ds.spec.image_effect.eval(p)).sum::<f64>() / phi.len() as f64;
        Ok(Self { domain: ds.domain, effect: ds.spec.image_effect, mean })
    }
}

#[derive(Clone, Debug)]
pub struct ImageEffectParams {
    pub n_pairs: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl Default for ImageEffectParams {
    fn default() -> Self {
        Self { n_pairs: 50, n_steps: 50, seed: 0 }
    }
}

/// Per-pair scores of one image-effect benchmark run.
#[derive(Clone, Debug, PartialEq)]
pub struct PairScore {
    pub pair: (usize, usize),
    pub mse: f64,
    pub r2: f64,
}

/// Draws the benchmark's image pairs.
pub fn sample_pairs(n_images: usize, n_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = seed::rng(seed, "bench/pairs");
    (0..n_pairs).map(|_| (rng.random_range(0..n_images), rng.random_range(0..n_images))).collect()
}

/// Smallest feature difference an 8-bit exported image can resolve.
pub const PHI_RESOLUTION: f64 = 1.0 / 255.0;

/// Scores the centered image effect along the latent interpolation of each
/// pair against the true effect of the linearly interpolated ground-truth
/// features. Pairs whose endpoint features agree to within
/// [`PHI_RESOLUTION`] are skipped: their reference is flat up to rounding and
/// R² is not meaningful.
pub fn score_pairs(
    model: &NaimModel,
    ae: &AutoencoderModel,
    test_images: &[Image],
    truth: &ImageEffectTruth,
    pairs: &[(usize, usize)],
    n_steps: usize,
) -> Result<(Vec<PairScore>, usize)> {
    if n_steps < 2 {
        return invalid(format!("n_steps must be at least 2, got {n_steps}"));
    }
    let mut needed: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    needed.sort_unstable();
    needed.dedup();
    if let Some(&bad) = needed.iter().find(|&&i| i >= test_images.len()) {
        return invalid(format!("pair index {bad} out of range"));
    }
    let images: Vec<Image> = needed.iter().map(|&i| test_images[i].clone()).collect();
    let codes = ae.encode_batch(&images)?;
    let slot = |i: usize| needed.binary_search(&i).expect("index collected above");
    let mut scores = Vec::new();
    let mut skipped = 0;
    for &(a, b) in pairs {
        let (pa, pb) = (truth.domain.phi(&test_images[a])?, truth.domain.phi(&test_images[b])?);
        if a == b || (pa - pb).abs() < PHI_RESOLUTION {
            skipped += 1;
            continue;
        }
        let seq = interpolate_latents(&codes[slot(a)], &codes[slot(b)], n_steps)?;
        let pred = model.centered_image_effects(seq.codes())?;
        let reference: Vec<f64> = seq
            .fractions()
            .iter()
            .map(|&t| truth.effect.eval((1.0 - t) * pa + t * pb) - truth.mean)
            .collect();
        match r2(&pred, &reference) {
            Ok(r) => scores.push(PairScore { pair: (a, b), mse: mse(&pred, &reference)?, r2: r }),
            Err(Error::InvalidArgument(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        log::info!("image-effect benchmark skipped {skipped} pairs with constant reference effect");
    }
    Ok((scores, skipped))
}

pub fn image_effect_benchmark(
    model: &NaimModel,
    ae: &AutoencoderModel,
    test_images: &[Image],
    truth: &ImageEffectTruth,
    params: &ImageEffectParams,
) -> Result<BenchReport> {
    if test_images.len() < 2 {
        return invalid("image-effect benchmark needs at least two test images");
    }
    if params.n_pairs == 0 {
        return invalid("n_pairs must be positive");
    }
    let pairs = sample_pairs(test_images.len(), params.n_pairs, params.seed);
    let (scores, skipped) = score_pairs(model, ae, test_images, truth, &pairs, params.n_steps)?;
    if scores.is_empty() {
        return Err(Error::Empty("every sampled pair was degenerate".into()));
    }
    let n = scores.len() as f64;
    let row = BenchRow {
        label: "image_effect".into(),
        mse: scores.iter().map(|s| s.mse).sum::<f64>() / n,
        r2: scores.iter().map(|s| s.r2).sum::<f64>() / n,
        count: scores.len(),
    };
    Ok(BenchReport {
        protocol: "image_effect".into(),
        domain: truth.domain,
        image_effect: truth.effect,
        seed: params.seed,
        scale: vec![("n_pairs".into(), params.n_pairs), ("n_steps".into(), params.n_steps)],
        rows: vec![row],
        skipped,
    })
}

/// Compares each learned tabular effect with the true one on the test
/// feature values. Both sides are centered by their mean over those values.
pub fn numeric_effect_benchmark(model: &NaimModel, test_rows: &[Vec<f64>], domain: Domain, image_effect: ImageEffect) -> Result<BenchReport> {
    if test_rows.is_empty() {
        return Err(Error::Empty("test features".into()));
    }
    let center = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.into_iter().map(|x| x - m).collect::<Vec<_>>()
    };
    let labels = ["f1=2x", "f2=x^2", "f3=sin2pix"];
    let mut rows = Vec::new();
    for j in 0..model.num_features() {
        let xs: Vec<f64> = test_rows.iter().map(|r| r[j]).collect();
        let learned = center(model.shape_effects(j, &xs)?);
        let truth = center(xs.iter().map(|&x| numeric_effect(j, x)).collect());
        rows.push(BenchRow {
            label: labels.get(j).map_or_else(|| format!("f{}", j + 1), |s| s.to_string()),
            mse: mse(&learned, &truth)?,
            r2: r2(&learned, &truth)?,
            count: xs.len(),
        });
    }
    Ok(BenchReport {
        protocol: "numeric_effect".into(),
        domain,
        image_effect,
        seed: 0,
        scale: vec![("n_test".into(), test_rows.len())],
        rows,
        skipped: 0,
    })
}
