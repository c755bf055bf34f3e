//! Reading image effects off the latent space: linear interpolation between
//! two codes, attribute manipulation along a direction, effect curves that
//! pair decoded images with image-head predictions, and global distribution
//! shifts.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{AutoencoderModel, Image, LatentCode};
use crate::error::{invalid, shape_err, Error, Result};
use crate::nam::NaimModel;

/// Default manipulation strength.
pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Interpolation { start: LatentCode, end: LatentCode },
    Manipulation { base: LatentCode, direction: Vec<f64>, alpha: f64 },
}

/// Ordered latent codes `z⁽¹⁾…z⁽ᵏ⁾`, `k ≥ 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSequence {
    codes: Vec<LatentCode>,
    provenance: Provenance,
}

impl LatentSequence {
    pub fn codes(&self) -> &[LatentCode] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Position `(i−1)/(k−1)` of each element along the path.
    pub fn fractions(&self) -> Vec<f64> {
        fractions(self.codes.len())
    }
}

fn fractions(k: usize) -> Vec<f64> {
    (0..k).map(|i| i as f64 / (k - 1) as f64).collect()
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return invalid(format!("sequence length k must be at least 2, got {k}"));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `z⁽ⁱ⁾ = (1 − t_i)·z + t_i·z'` with `t_i = (i−1)/(k−1)`.
pub fn interpolate_latents(z: &LatentCode, z_end: &LatentCode, k: usize) -> Result<LatentSequence> {
    check_k(k)?;
    if z.dim() != z_end.dim() {
        return shape_err(format!("interpolating codes of dim {} and {}", z.dim(), z_end.dim()));
    }
    let codes = fractions(k)
        .into_iter()
        .map(|t| {
            LatentCode::new(z.as_slice().iter().zip(z_end.as_slice()).map(|(a, b)| (1.0 - t) * a + t * b).collect())
        })
        .collect();
    Ok(LatentSequence { codes, provenance: Provenance::Interpolation { start: z.clone(), end: z_end.clone() } })
}

/// The far endpoint `z + α·(‖z‖/‖v‖)·v` of a manipulation.
pub fn manipulation_endpoint(z: &LatentCode, direction: &[f64], alpha: f64) -> Result<LatentCode> {
    let scale = manipulation_scale(z, direction)?;
    Ok(LatentCode::new(z.as_slice().iter().zip(direction).map(|(a, v)| a + alpha * scale * v).collect()))
}

fn manipulation_scale(z: &LatentCode, direction: &[f64]) -> Result<f64> {
    if z.dim() != direction.len() {
        return shape_err(format!("code of dim {} with direction of dim {}", z.dim(), direction.len()));
    }
    let vn = norm(direction);
    if !(vn > 0.0) {
        return invalid("attribute direction must be nonzero");
    }
    Ok(z.norm() / vn)
}

/// `z⁽ⁱ⁾ = z + α·t_i·(‖z‖/‖v‖)·v`.
pub fn manipulate_latents(z: &LatentCode, direction: &[f64], alpha: f64, k: usize) -> Result<LatentSequence> {
    check_k(k)?;
    let scale = manipulation_scale(z, direction)?;
    let codes = fractions(k)
        .into_iter()
        .map(|t| LatentCode::new(z.as_slice().iter().zip(direction).map(|(a, v)| a + alpha * t * scale * v).collect()))
        .collect();
    Ok(LatentSequence {
        codes,
        provenance: Provenance::Manipulation { base: z.clone(), direction: direction.to_vec(), alpha },
    })
}

/// Decoded images paired with centered image-head predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectCurve {
    pub images: Vec<Image>,
    pub predictions: Vec<f64>,
    pub fractions: Vec<f64>,
    /// Optional ground-truth effect at each step.
    pub reference: Option<Vec<f64>>,
}

impl EffectCurve {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn with_reference(mut self, reference: Vec<f64>) -> Result<Self> {
        if reference.len() != self.len() {
            return shape_err(format!("{} reference values for a curve of length {}", reference.len(), self.len()));
        }
        self.reference = Some(reference);
        Ok(self)
    }

    /// Columns `index, fraction, prediction, reference`; the last column is
    /// empty when no reference is attached.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "fraction", "prediction", "reference"])?;
        for i in 0..self.len() {
            let reference = self.reference.as_ref().map(|r| r[i].to_string()).unwrap_or_default();
            w.write_record([
                i.to_string(),
                self.fractions[i].to_string(),
                self.predictions[i].to_string(),
                reference,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// The decoded images side by side, in sequence order.
    pub fn write_strip(&self, path: &Path) -> Result<()> {
        Image::strip(&self.images, 2)?.save_png(path)
    }
}

/// For each code: the decoded image and `f_img(z) − mean_train f_img`.
pub fn effect_curve(model: &NaimModel, ae: &AutoencoderModel, seq: &LatentSequence) -> Result<EffectCurve> {
    let l = model
        .latent_dim()
        .ok_or_else(|| Error::InvalidArgument("model has no image head".into()))?;
    if l != ae.latent_dim() || seq.codes.iter().any(|z| z.dim() != l) {
        return shape_err(format!(
            "image head width {l}, autoencoder latent dim {}, sequence dim {}",
            ae.latent_dim(),
            seq.codes[0].dim()
        ));
    }
    Ok(EffectCurve {
        images: ae.decode_batch(&seq.codes)?,
        predictions: model.centered_image_effects(&seq.codes)?,
        fractions: seq.fractions(),
        reference: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalShift {
    pub base: Vec<f64>,
    pub shifted: Vec<f64>,
    pub base_mean: f64,
    pub shifted_mean: f64,
}

impl GlobalShift {
    /// One row per sample: `sample, base, shifted`.
    pub fn write_csv(&self, path: &Path, ids: &[String]) -> Result<()> {
        if ids.len() != self.base.len() {
            return shape_err("one id per sample required");
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample_id", "base", "shifted"])?;
        for ((id, b), s) in ids.iter().zip(&self.base).zip(&self.shifted) {
            w.write_record([id.clone(), b.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary(&self, path: &Path, alpha: f64) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "samples,{}", self.base.len())?;
        writeln!(f, "alpha,{alpha}")?;
        writeln!(f, "base_mean,{}", self.base_mean)?;
        writeln!(f, "shifted_mean,{}", self.shifted_mean)?;
        writeln!(f, "mean_shift,{}", self.shifted_mean - self.base_mean)?;
        Ok(())
    }
}

/// Full-model predictions before and after moving every code to its
/// manipulation endpoint; tabular inputs stay fixed per sample.
pub fn global_shift_codes(model: &NaimModel, rows: &[Vec<f64>], codes: &[LatentCode], direction: &[f64], alpha: f64) -> Result<GlobalShift> {
    if codes.is_empty() {
        return Err(Error::Empty("no images for global shift".into()));
    }
    let shifted_codes = codes
        .iter()
        .map(|z| if alpha == 0.0 { Ok(z.clone()) } else { manipulation_endpoint(z, direction, alpha) })
        .collect::<Result<Vec<_>>>()?;
    let base = model.predict_batch(rows, codes)?;
    let shifted = model.predict_batch(rows, &shifted_codes)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(GlobalShift { base_mean: mean(&base), shifted_mean: mean(&shifted), base, shifted })
}

pub fn global_shift(
    model: &NaimModel,
    ae: &AutoencoderModel,
    images: &[Image],
    rows: &[Vec<f64>],
    direction: &[f64],
    alpha: f64,
) -> Result<GlobalShift> {
    if images.is_empty() {
        return Err(Error::Empty("no images for global shift".into()));
    }
    global_shift_codes(model, rows, &ae.encode_batch(images)?, direction, alpha)
}

/// Remainder `R` in `h(λz + (1−λ)z̃) = λh(z) + (1−λ)h(z̃) + (1−λ)R`, with
/// `R = 0` at `λ = 1`.
pub fn convexity_residual<H>(h: H, z: &[f64], z_tilde: &[f64], lambda: f64) -> Result<Vec<f64>>
where
    H: Fn(&[f64]) -> Vec<f64>,
{
    if !(0.0..=1.0).contains(&lambda) {
        return invalid(format!("lambda {lambda} outside [0,1]"));
    }
    if z.len() != z_tilde.len() {
        return shape_err("residual endpoints differ in dimension");
    }
    let hz = h(z);
    if lambda == 1.0 {
        return Ok(vec![0.0; hz.len()]);
    }
    let mix: Vec<f64> = z.iter().zip(z_tilde).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
    let hm = h(&mix);
    let ht = h(z_tilde);
    Ok(hm
        .iter()
        .zip(&hz)
        .zip(&ht)
        .map(|((m, a), b)| (m - lambda * a - (1.0 - lambda) * b) / (1.0 - lambda))
        .collect())
}

fn norm_of(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖R‖ / ε` for `z̃ = z + ε·u` with `u` normalized to unit length.
pub fn residual_ratio<H>(h: H, z: &[f64], u: &[f64], eps: f64, lambda: f64) -> Result<f64>
where
    H: Fn(&[f64]) -> Vec<f64>,
{
    let un = norm_of(u);
    if !(un > 0.0) || !(eps > 0.0) {
        return invalid("residual ratio needs a nonzero direction and positive step");
    }
    let z_tilde: Vec<f64> = z.iter().zip(u).map(|(a, b)| a + eps * b / un).collect();
    Ok(norm_of(&convexity_residual(h, z, &z_tilde, lambda)?) / eps)
}

/// Factor by which `‖R‖/ε` drops when the step shrinks from `coarse` to
/// `fine`; large values mean the remainder vanishes faster than the step.
pub fn residual_shrink<H>(h: H, z: &[f64], u: &[f64], lambda: f64, coarse: f64, fine: f64) -> Result<f64>
where
    H: Fn(&[f64]) -> Vec<f64>,
{
    let big = residual_ratio(&h, z, u, coarse, lambda)?;
    let small = residual_ratio(&h, z, u, fine, lambda)?;
    Ok(if small == 0.0 { f64::INFINITY } else { big / small })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(v: &[f64]) -> LatentCode {
        LatentCode::new(v.to_vec())
    }

    #[test]
    fn interpolation_midpoint_and_endpoints() {
        let (a, b) = (code(&[0.0, 0.0]), code(&[2.0, 4.0]));
        let s = interpolate_latents(&a, &b, 3).unwrap();
        assert_eq!(s.codes()[0], a);
        assert_eq!(s.codes()[1], code(&[1.0, 2.0]));
        assert_eq!(s.codes()[2], b);
    }

    #[test]
    fn degenerate_interpolation() {
        let a = code(&[0.3, -1.2, 5.0]);
        let s = interpolate_latents(&a, &a, 6).unwrap();
        assert!(s.codes().iter().all(|c| c == &a));
    }

    #[test]
    fn interpolation_errors() {
        assert!(interpolate_latents(&code(&[0.0]), &code(&[1.0]), 1).is_err());
        assert!(interpolate_latents(&code(&[0.0]), &code(&[1.0, 2.0]), 3).is_err());
    }

    #[test]
    fn manipulation_direct_formula() {
        let s = manipulate_latents(&code(&[2.0, 0.0]), &[0.0, 1.0], 1.0, 2).unwrap();
        assert_eq!(s.codes()[0], code(&[2.0, 0.0]));
        assert_eq!(s.codes()[1], code(&[2.0, 2.0]));
        assert!(manipulate_latents(&code(&[2.0, 0.0]), &[0.0, 0.0], 1.0, 2).is_err());
    }

    #[test]
    fn residual_of_square_at_midpoint() {
        let r = convexity_residual(|x| vec![x[0] * x[0]], &[0.0], &[1.0], 0.5).unwrap();
        assert!((r[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn residual_is_zero_at_lambda_one() {
        let r = convexity_residual(|x| vec![x[0].exp()], &[0.3], &[2.0], 1.0).unwrap();
        assert_eq!(r, vec![0.0]);
        assert!(convexity_residual(|x| vec![x[0]], &[0.3], &[2.0], 1.5).is_err());
    }
}
