//! Synthetic squares and colors datasets with known additive effects.
//!
//! Squares images show a white square of half the image side on a grey
//! background; the effect-driving feature is the normalized x-coordinate of
//! its center. Colors images are monochrome RGB; the feature is the red
//! value. Three tabular features enter through `2x`, `x²` and `sin 2πx`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec::Image;
use crate::error::{invalid, Error, Result};
use crate::seed;

pub const NUM_FEATURES: usize = 3;
pub const BACKGROUND: f64 = 0.5;
pub const FOREGROUND: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Squares,
    Colors,
}

impl Domain {
    pub fn channels(self) -> usize {
        match self {
            Domain::Squares => 1,
            Domain::Colors => 3,
        }
    }

    /// Ground-truth semantic feature of an image from this domain.
    pub fn phi(self, image: &Image) -> Result<f64> {
        match self {
            Domain::Squares => phi_xval(image),
            Domain::Colors => phi_red(image),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Squares => "squares",
            Domain::Colors => "colors",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squares" => Ok(Domain::Squares),
            "colors" => Ok(Domain::Colors),
            _ => invalid(format!("unknown domain {s:?}")),
        }
    }
}

/// Closed family of image effects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageEffect {
    /// `2x`
    #[serde(rename = "2x")]
    Linear,
    /// `2x⁴`
    #[serde(rename = "2x^4")]
    Power,
    /// `sin 2πx`
    #[serde(rename = "sin2pix")]
    Sine,
}

impl ImageEffect {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ImageEffect::Linear => 2.0 * x,
            ImageEffect::Power => 2.0 * x.powi(4),
            ImageEffect::Sine => (2.0 * PI * x).sin(),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ImageEffect::Linear => "2x",
            ImageEffect::Power => "2x^4",
            ImageEffect::Sine => "sin2pix",
        }
    }
}

impl FromStr for ImageEffect {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2x" | "linear" => Ok(ImageEffect::Linear),
            "2x^4" | "power" => Ok(ImageEffect::Power),
            "sin2pix" | "sine" => Ok(ImageEffect::Sine),
            _ => invalid(format!("unknown image effect {s:?}")),
        }
    }
}

/// Tabular effect `f_j`, `j ∈ {0,1,2}`: `2x`, `x²`, `sin 2πx`.
pub fn numeric_effect(j: usize, x: f64) -> f64 {
    match j {
        0 => 2.0 * x,
        1 => x * x,
        2 => (2.0 * PI * x).sin(),
        _ => panic!("numeric effect index {j} out of range"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectSpec {
    pub image_effect: ImageEffect,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sd: f64,
}

impl Default for EffectSpec {
    fn default() -> Self {
        Self { image_effect: ImageEffect::Linear, noise_sd: 0.1 }
    }
}

impl EffectSpec {
    pub fn new(image_effect: ImageEffect, noise_sd: f64) -> Result<Self> {
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return invalid(format!("noise sd {noise_sd}"));
        }
        Ok(Self { image_effect, noise_sd })
    }

    pub fn tag(&self) -> String {
        format!("f_img={};sigma={}", self.image_effect.tag(), self.noise_sd)
    }
}

impl FromStr for EffectSpec {
    type Err = Error;
    /// Parses the form produced by [`EffectSpec::tag`].
    fn from_str(s: &str) -> Result<Self> {
        let mut effect = None;
        let mut sd = None;
        for part in s.split(';') {
            match part.split_once('=') {
                Some(("f_img", v)) => effect = Some(v.parse::<ImageEffect>()?),
                Some(("sigma", v)) => {
                    sd = Some(v.parse::<f64>().map_err(|_| Error::Format(format!("bad sigma in spec tag {s:?}")))?)
                }
                _ => return Err(Error::Format(format!("unrecognized spec tag {s:?}"))),
            }
        }
        match (effect, sd) {
            (Some(e), Some(sd)) => Self::new(e, sd),
            _ => Err(Error::Format(format!("incomplete spec tag {s:?}"))),
        }
    }
}

/// `y = f₁(x₁) + f₂(x₂) + f₃(x₃) + f_img(φ) + ε` for a given noise realization `ε`.
pub fn assemble_response(x: &[f64; NUM_FEATURES], phi_img: f64, spec: &EffectSpec, noise: f64) -> Result<f64> {
    if let Some(v) = x.iter().chain([&phi_img]).find(|v| !(0.0..=1.0).contains(*v)) {
        return invalid(format!("effect input {v} outside [0,1]"));
    }
    let tabular: f64 = x.iter().enumerate().map(|(j, &v)| numeric_effect(j, v)).sum();
    Ok(tabular + spec.image_effect.eval(phi_img) + noise)
}

fn square_side(size: usize) -> usize {
    size / 2
}

/// Renders the square whose top-left corner sits at pixel `(top, left)`.
fn render_square(size: usize, top: usize, left: usize) -> Image {
    let side = square_side(size);
    let mut data = vec![BACKGROUND; size * size];
    for r in top..top + side {
        data[r * size + left..r * size + left + side].fill(FOREGROUND);
    }
    Image::new(size, size, 1, data).expect("two-tone image is valid")
}

/// Renders a square from normalized center coordinates in `[0,1]²`.
pub fn render_square_at(size: usize, phi_x: f64, phi_y: f64) -> Image {
    let span = (size - square_side(size)) as f64;
    let left = (phi_x * span).round() as usize;
    let top = (phi_y * span).round() as usize;
    render_square(size, top, left)
}

/// Generated images with their recorded ground-truth feature.
#[derive(Clone, Debug)]
pub struct ImageSet {
    pub images: Vec<Image>,
    pub phi: Vec<f64>,
}

fn check_size(size: usize, n: usize) -> Result<()> {
    if n == 0 {
        return invalid("sample count must be positive");
    }
    if size < 2 || size % 2 != 0 {
        return invalid(format!("image size {size} must be even and at least 2"));
    }
    Ok(())
}

/// Squares images. Centers are continuous and uniform over the positions
/// that keep the square inside the frame; the recorded `Φ_xval` is the
/// continuous normalized x-center, the rendered square is snapped to the
/// nearest pixel.
pub fn gen_squares(n: usize, size: usize, seed: u64) -> Result<ImageSet> {
    check_size(size, n)?;
    let mut rng = seed::rng(seed, "synth/images");
    let mut images = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    for _ in 0..n {
        let px: f64 = rng.random();
        let py: f64 = rng.random();
        images.push(render_square_at(size, px, py));
        phi.push(px);
    }
    Ok(ImageSet { images, phi })
}

/// Monochrome RGB images with iid uniform channels; `Φ_red` is the red value.
pub fn gen_colors(n: usize, size: usize, seed: u64) -> Result<ImageSet> {
    check_size(size, n)?;
    let mut rng = seed::rng(seed, "synth/images");
    let mut images = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    for _ in 0..n {
        let rgb: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        images.push(Image::filled(size, size, &rgb)?);
        phi.push(rgb[0]);
    }
    Ok(ImageSet { images, phi })
}

/// Pixel bounding box `(top, left)` of the white square.
fn square_corner(image: &Image) -> Result<(usize, usize)> {
    if image.channels() != 1 || image.height() != image.width() {
        return invalid("squares images are square and single-channel");
    }
    let (mut top, mut left) = (usize::MAX, usize::MAX);
    let mut count = 0usize;
    for r in 0..image.height() {
        for c in 0..image.width() {
            if image.pixel(r, c)[0] > 0.75 {
                top = top.min(r);
                left = left.min(c);
                count += 1;
            }
        }
    }
    if count == 0 {
        return invalid("image has no white pixels");
    }
    Ok((top, left))
}

fn white_centroid(image: &Image) -> Result<(f64, f64)> {
    if image.channels() != 1 {
        return invalid(format!("squares images have one channel, got {}", image.channels()));
    }
    let (mut sr, mut sc, mut count) = (0.0, 0.0, 0usize);
    for r in 0..image.height() {
        for c in 0..image.width() {
            if image.pixel(r, c)[0] > 0.75 {
                sr += r as f64;
                sc += c as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return invalid("image has no white pixels");
    }
    Ok((sr / count as f64, sc / count as f64))
}

/// Normalized x-coordinate of the white square's centroid: `0` flush left,
/// `1` flush right.
pub fn phi_xval(image: &Image) -> Result<f64> {
    let (_, col) = white_centroid(image)?;
    let side = square_side(image.width()) as f64;
    let span = image.width() as f64 - side;
    Ok(((col - (side - 1.0) / 2.0) / span).clamp(0.0, 1.0))
}

/// Normalized y-coordinate of the white square's centroid.
pub fn phi_yval(image: &Image) -> Result<f64> {
    let (row, _) = white_centroid(image)?;
    let side = square_side(image.height()) as f64;
    let span = image.height() as f64 - side;
    Ok(((row - (side - 1.0) / 2.0) / span).clamp(0.0, 1.0))
}

/// Mean red value of an RGB image.
pub fn phi_red(image: &Image) -> Result<f64> {
    if image.channels() != 3 {
        return invalid(format!("red extraction needs 3 channels, got {}", image.channels()));
    }
    Ok(image.channel_mean(0))
}

/// Ground-truth semantic interpolation between two images of one domain:
/// squares move linearly between the two square positions, colors blend all
/// three channel values linearly. Endpoints are returned unchanged.
pub fn reference_interpolation(a: &Image, b: &Image, k: usize, domain: Domain) -> Result<Vec<Image>> {
    if k < 2 {
        return invalid(format!("interpolation needs k >= 2, got {k}"));
    }
    if a.dims() != b.dims() {
        return invalid(format!("endpoint dimensions differ: {:?} vs {:?}", a.dims(), b.dims()));
    }
    if a.channels() != domain.channels() {
        return invalid(format!("{}-channel image is not from the {domain} domain", a.channels()));
    }
    let (h, w, _) = a.dims();
    let frame = |t: f64| -> Result<Image> {
        match domain {
            Domain::Squares => {
                let (ta, la) = square_corner(a)?;
                let (tb, lb) = square_corner(b)?;
                let span = (w - square_side(w)) as f64;
                let px = ((1.0 - t) * la as f64 + t * lb as f64) / span;
                let py = ((1.0 - t) * ta as f64 + t * tb as f64) / span;
                Ok(render_square_at(w, px, py))
            }
            Domain::Colors => {
                let rgb: Vec<f64> = (0..3).map(|c| (1.0 - t) * a.channel_mean(c) + t * b.channel_mean(c)).collect();
                Image::filled(h, w, &rgb)
            }
        }
    };
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        if i == 0 {
            out.push(a.clone());
        } else if i == k - 1 {
            out.push(b.clone());
        } else {
            out.push(frame(i as f64 / (k - 1) as f64)?);
        }
    }
    Ok(out)
}

/// A generated dataset: features, images, ground truth, noise and responses.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub domain: Domain,
    pub spec: EffectSpec,
    pub seed: u64,
    pub features: Vec<[f64; NUM_FEATURES]>,
    pub images: Vec<Image>,
    pub phi: Vec<f64>,
    pub noise: Vec<f64>,
    pub y: Vec<f64>,
}

impl SyntheticDataset {
    pub fn generate(domain: Domain, n: usize, image_size: usize, spec: EffectSpec, seed: u64) -> Result<Self> {
        let ImageSet { images, phi } = match domain {
            Domain::Squares => gen_squares(n, image_size, seed)?,
            Domain::Colors => gen_colors(n, image_size, seed)?,
        };
        let mut feat_rng = seed::rng(seed, "synth/features");
        let mut noise_rng = seed::rng(seed, "synth/noise");
        let features: Vec<[f64; NUM_FEATURES]> =
            (0..n).map(|_| [feat_rng.random(), feat_rng.random(), feat_rng.random()]).collect();
        let noise: Vec<f64> = (0..n)
            .map(|_| spec.noise_sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut noise_rng))
            .collect();
        let y = features
            .iter()
            .zip(&phi)
            .zip(&noise)
            .map(|((x, &p), &e)| assemble_response(x, p, &spec, e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { domain, spec, seed, features, images, phi, noise, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Splits into the first `n_first` samples and the rest.
    pub fn split(self, n_first: usize) -> Result<(Self, Self)> {
        if n_first == 0 || n_first >= self.len() {
            return invalid(format!("split point {n_first} for {} samples", self.len()));
        }
        let Self { domain, spec, seed, mut features, mut images, mut phi, mut noise, mut y } = self;
        let rest = Self {
            domain,
            spec,
            seed,
            features: features.split_off(n_first),
            images: images.split_off(n_first),
            phi: phi.split_off(n_first),
            noise: noise.split_off(n_first),
            y: y.split_off(n_first),
        };
        Ok((Self { domain, spec, seed, features, images, phi, noise, y }, rest))
    }

    /// Feature matrix rows as vectors.
    pub fn feature_rows(&self) -> Vec<Vec<f64>> {
        self.features.iter().map(|f| f.to_vec()).collect()
    }

    /// `Φ` re-extracted from the rendered images.
    pub fn extracted_phi(&self) -> Result<Vec<f64>> {
        self.images.iter().map(|im| self.domain.phi(im)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_tag_roundtrip() {
        for e in [ImageEffect::Linear, ImageEffect::Power, ImageEffect::Sine] {
            let spec = EffectSpec::new(e, 0.1).unwrap();
            assert_eq!(spec.tag().parse::<EffectSpec>().unwrap(), spec);
        }
        assert!("f_img=2x".parse::<EffectSpec>().is_err());
        assert!("bogus".parse::<EffectSpec>().is_err());
    }

    #[test]
    fn response_direct_evaluation() {
        let spec = EffectSpec::new(ImageEffect::Linear, 0.0).unwrap();
        let y = assemble_response(&[0.5, 0.5, 0.5], 0.5, &spec, 0.0).unwrap();
        assert!((y - 2.25).abs() < 1e-12);
        for effect in [ImageEffect::Linear, ImageEffect::Power] {
            let spec = EffectSpec::new(effect, 0.0).unwrap();
            assert_eq!(assemble_response(&[0.0; 3], 0.0, &spec, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn response_rejects_out_of_range() {
        let spec = EffectSpec::default();
        assert!(assemble_response(&[0.5, 1.5, 0.5], 0.5, &spec, 0.0).is_err());
        assert!(assemble_response(&[0.5; 3], -0.1, &spec, 0.0).is_err());
    }

    #[test]
    fn phi_xval_endpoints() {
        let left = render_square(32, 5, 0);
        let right = render_square(32, 5, 16);
        let mid = render_square(32, 5, 8);
        assert_eq!(phi_xval(&left).unwrap(), 0.0);
        assert_eq!(phi_xval(&right).unwrap(), 1.0);
        assert_eq!(phi_xval(&mid).unwrap(), 0.5);
    }

    #[test]
    fn phi_xval_needs_white_pixels() {
        let grey = Image::filled(32, 32, &[BACKGROUND]).unwrap();
        assert!(phi_xval(&grey).is_err());
    }

    #[test]
    fn phi_red_values() {
        assert_eq!(phi_red(&Image::filled(4, 4, &[1.0, 0.0, 0.0]).unwrap()).unwrap(), 1.0);
        assert_eq!(phi_red(&Image::filled(4, 4, &[0.0, 0.0, 0.0]).unwrap()).unwrap(), 0.0);
        assert!(phi_red(&Image::filled(4, 4, &[0.3]).unwrap()).is_err());
    }

    #[test]
    fn squares_invariants() {
        let set = gen_squares(200, 32, 1).unwrap();
        for (im, &p) in set.images.iter().zip(&set.phi) {
            assert_eq!(im.data().iter().filter(|&&v| v == FOREGROUND).count(), 256);
            assert!(im.data().iter().all(|&v| v == FOREGROUND || v == BACKGROUND));
            assert!((phi_xval(im).unwrap() - p).abs() <= 1.0 / 32.0);
        }
    }

    #[test]
    fn colors_invariants() {
        let set = gen_colors(50, 8, 1).unwrap();
        for (im, &p) in set.images.iter().zip(&set.phi) {
            for c in 0..3 {
                assert!(im.channel_std(c) < 1e-12);
            }
            assert_eq!(im.pixel(0, 0)[0], p);
        }
    }

    #[test]
    fn odd_sizes_are_rejected() {
        assert!(gen_squares(3, 31, 0).is_err());
        assert!(gen_colors(0, 32, 0).is_err());
    }

    #[test]
    fn reference_interpolation_endpoints_and_spacing() {
        let a = render_square(32, 0, 0);
        let b = render_square(32, 16, 16);
        let two = reference_interpolation(&a, &b, 2, Domain::Squares).unwrap();
        assert_eq!(two, vec![a.clone(), b.clone()]);
        let seq = reference_interpolation(&a, &b, 11, Domain::Squares).unwrap();
        assert!((phi_xval(&seq[5]).unwrap() - 0.5).abs() <= 1.0 / 32.0);

        let ca = Image::filled(4, 4, &[0.2, 0.1, 0.9]).unwrap();
        let cb = Image::filled(4, 4, &[0.8, 0.5, 0.3]).unwrap();
        let seq = reference_interpolation(&ca, &cb, 4, Domain::Colors).unwrap();
        let reds: Vec<f64> = seq.iter().map(|im| phi_red(im).unwrap()).collect();
        for (r, want) in reds.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert!((r - want).abs() < 1e-12, "{reds:?}");
        }
        assert!(reference_interpolation(&ca, &cb, 4, Domain::Squares).is_err());
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = EffectSpec::default();
        let a = SyntheticDataset::generate(Domain::Colors, 20, 8, spec, 9).unwrap();
        let b = SyntheticDataset::generate(Domain::Colors, 20, 8, spec, 9).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.images, b.images);
    }

    #[test]
    fn noiseless_response_equals_effect_sum() {
        let spec = EffectSpec::new(ImageEffect::Sine, 0.0).unwrap();
        let ds = SyntheticDataset::generate(Domain::Squares, 50, 16, spec, 4).unwrap();
        for i in 0..ds.len() {
            let x = ds.features[i];
            let want = 2.0 * x[0] + x[1] * x[1] + (2.0 * PI * x[2]).sin() + (2.0 * PI * ds.phi[i]).sin();
            assert_eq!(ds.y[i], want);
        }
    }
}
