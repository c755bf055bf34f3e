use serde::{Deserialize, Serialize};

use crate::codec::LatentCode;
use crate::diffcore::{Mlp, Tensor};
use crate::error::{invalid, shape_err, Error, Result};

/// Link between the additive predictor and the conditional mean. Only the
/// identity link is supported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    #[default]
    Identity,
}

/// Bivariate shape function over a feature pair `(j, k)`, `j != k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub pair: (usize, usize),
    pub net: Mlp,
}

/// Training-set means of every additive term, used to zero-center effects.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermMeans {
    pub shape: Vec<f64>,
    pub interactions: Vec<f64>,
    pub image: f64,
}

/// Per-dimension affine standardization `(z − mean) / scale` applied to
/// latent codes before the image head. Affine maps commute with convex
/// combinations, so interpolation paths are unaffected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LatentScaler {
    /// Fits mean and standard deviation per dimension; dimensions with no
    /// spread keep unit scale.
    pub fn fit(codes: &[LatentCode]) -> Result<Self> {
        let first = codes.first().ok_or_else(|| Error::Empty("no codes to fit a scaler".into()))?;
        let l = first.dim();
        let n = codes.len() as f64;
        let mut mean = vec![0.0; l];
        for z in codes {
            if z.dim() != l {
                return shape_err("latent codes of mixed dimension");
            }
            for (m, v) in mean.iter_mut().zip(z.as_slice()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; l];
        for z in codes {
            for ((s, v), m) in var.iter_mut().zip(z.as_slice()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub(crate) fn apply_into(&self, z: &[f64], out: &mut Vec<f64>) {
        out.extend(z.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s));
    }
}

/// Additive model `β₀ + Σ f_j(x_j) + Σ f_jk(x_j, x_k) + f_img(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaimModel {
    pub intercept: f64,
    pub shape_nets: Vec<Mlp>,
    pub interactions: Vec<Interaction>,
    /// Absent for models fitted without the image covariate.
    pub image_head: Option<Mlp>,
    /// Input standardization for the image head; `None` feeds raw codes.
    #[serde(default)]
    pub image_input: Option<LatentScaler>,
    pub link: Link,
    pub term_means: TermMeans,
}

fn column(xs: &[f64]) -> Tensor {
    Tensor::from_parts(vec![xs.len(), 1], xs.to_vec())
}

impl NaimModel {
    pub fn new(intercept: f64, shape_nets: Vec<Mlp>, interactions: Vec<Interaction>, image_head: Option<Mlp>) -> Result<Self> {
        for (j, net) in shape_nets.iter().enumerate() {
            if net.input_dim() != 1 || net.output_dim() != 1 {
                return shape_err(format!("shape net {j} must map R -> R"));
            }
        }
        let n_feat = shape_nets.len();
        for it in &interactions {
            let (j, k) = it.pair;
            if j == k || j >= n_feat || k >= n_feat {
                return invalid(format!("interaction pair {:?} for {n_feat} features", it.pair));
            }
            if it.net.input_dim() != 2 || it.net.output_dim() != 1 {
                return shape_err(format!("interaction net {:?} must map R^2 -> R", it.pair));
            }
        }
        if let Some(head) = &image_head {
            if head.output_dim() != 1 {
                return shape_err("image head must be scalar-valued");
            }
        }
        let term_means = TermMeans {
            shape: vec![0.0; n_feat],
            interactions: vec![0.0; interactions.len()],
            image: 0.0,
        };
        Ok(Self { intercept, shape_nets, interactions, image_head, image_input: None, link: Link::Identity, term_means })
    }

    /// Installs a code standardizer in front of the image head.
    pub fn with_image_input(mut self, scaler: LatentScaler) -> Result<Self> {
        let l = self.head()?.input_dim();
        if scaler.dim() != l || scaler.scale.len() != l {
            return shape_err(format!("scaler of dim {} for image head of width {l}", scaler.dim()));
        }
        if scaler.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) || scaler.mean.iter().any(|m| !m.is_finite()) {
            return invalid("scaler needs finite means and positive scales");
        }
        self.image_input = Some(scaler);
        Ok(self)
    }

    /// Flattened head input for a batch of codes, standardized if a scaler
    /// is installed.
    pub(crate) fn head_input(&self, codes: &[&LatentCode]) -> Result<Tensor> {
        let l = self.head()?.input_dim();
        let mut data = Vec::with_capacity(codes.len() * l);
        for z in codes {
            if z.dim() != l {
                return shape_err(format!("latent code of dim {} for image head of width {l}", z.dim()));
            }
            match &self.image_input {
                Some(s) => s.apply_into(z.as_slice(), &mut data),
                None => data.extend_from_slice(z.as_slice()),
            }
        }
        Tensor::new(vec![codes.len(), l], data)
    }

    pub fn num_features(&self) -> usize {
        self.shape_nets.len()
    }

    pub fn latent_dim(&self) -> Option<usize> {
        self.image_head.as_ref().map(Mlp::input_dim)
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_features() {
            return shape_err(format!("expected {} features, got {}", self.num_features(), x.len()));
        }
        Ok(())
    }

    fn head(&self) -> Result<&Mlp> {
        self.image_head
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model was fitted without an image head".into()))
    }

    /// `f_j` at each of `xs`.
    pub fn shape_effects(&self, j: usize, xs: &[f64]) -> Result<Vec<f64>> {
        let net = self
            .shape_nets
            .get(j)
            .ok_or_else(|| Error::InvalidArgument(format!("feature index {j} out of range")))?;
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        Ok(net.forward(&column(xs))?.into_data())
    }

    pub fn shape_effect(&self, j: usize, x: f64) -> Result<f64> {
        Ok(self.shape_effects(j, &[x])?[0])
    }

    /// Interaction term `i` at each `(x_j, x_k)` pair.
    pub fn interaction_effects(&self, i: usize, pairs: &[[f64; 2]]) -> Result<Vec<f64>> {
        let it = self
            .interactions
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("interaction index {i} out of range")))?;
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let data = pairs.iter().flatten().copied().collect();
        Ok(it.net.forward(&Tensor::from_parts(vec![pairs.len(), 2], data))?.into_data())
    }

    /// `f_img(z)` for each code.
    pub fn image_effects(&self, codes: &[LatentCode]) -> Result<Vec<f64>> {
        let head = self.head()?;
        if codes.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&LatentCode> = codes.iter().collect();
        Ok(head.forward(&self.head_input(&refs)?)?.into_data())
    }

    pub fn image_effect(&self, z: &LatentCode) -> Result<f64> {
        Ok(self.image_effects(std::slice::from_ref(z))?[0])
    }

    /// Image effect minus its training-set mean.
    pub fn centered_image_effects(&self, codes: &[LatentCode]) -> Result<Vec<f64>> {
        let m = self.term_means.image;
        Ok(self.image_effects(codes)?.into_iter().map(|v| v - m).collect())
    }

    /// Tabular part `β₀ + Σ f_j + Σ f_jk` for a batch of feature rows.
    pub fn predict_tabular_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        for x in rows {
            self.check_x(x)?;
        }
        let mut out = vec![self.intercept; rows.len()];
        for j in 0..self.num_features() {
            let col: Vec<f64> = rows.iter().map(|x| x[j]).collect();
            for (o, v) in out.iter_mut().zip(self.shape_effects(j, &col)?) {
                *o += v;
            }
        }
        for (i, it) in self.interactions.iter().enumerate() {
            let (j, k) = it.pair;
            let pairs: Vec<[f64; 2]> = rows.iter().map(|x| [x[j], x[k]]).collect();
            for (o, v) in out.iter_mut().zip(self.interaction_effects(i, &pairs)?) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Full prediction for a batch; requires an image head.
    pub fn predict_batch(&self, rows: &[Vec<f64>], codes: &[LatentCode]) -> Result<Vec<f64>> {
        if rows.len() != codes.len() {
            return shape_err(format!("{} feature rows with {} codes", rows.len(), codes.len()));
        }
        let mut out = self.predict_tabular_batch(rows)?;
        for (o, v) in out.iter_mut().zip(self.image_effects(codes)?) {
            *o += v;
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64], z: &LatentCode) -> Result<f64> {
        Ok(self.predict_batch(&[x.to_vec()], std::slice::from_ref(z))?[0])
    }

    /// Prediction with the image term omitted.
    pub fn predict_tabular(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_tabular_batch(&[x.to_vec()])?[0])
    }

    /// Recomputes [`TermMeans`] over a training set.
    pub fn fit_term_means(&mut self, rows: &[Vec<f64>], codes: Option<&[LatentCode]>) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::Empty("no rows for centering".into()));
        }
        let n = rows.len() as f64;
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / n;
        let mut means = TermMeans::default();
        for j in 0..self.num_features() {
            let col: Vec<f64> = rows.iter().map(|x| x[j]).collect();
            means.shape.push(mean(self.shape_effects(j, &col)?));
        }
        for (i, it) in self.interactions.iter().enumerate() {
            let (j, k) = it.pair;
            let pairs: Vec<[f64; 2]> = rows.iter().map(|x| [x[j], x[k]]).collect();
            means.interactions.push(mean(self.interaction_effects(i, &pairs)?));
        }
        if let (Some(_), Some(codes)) = (&self.image_head, codes) {
            means.image = mean(self.image_effects(codes)?);
        }
        self.term_means = means;
        Ok(())
    }

    /// `(x, f_j(x) − mean_train f_j)` over a grid.
    pub fn effect_curve_numeric(&self, j: usize, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
        if grid.is_empty() {
            return Err(Error::Empty("effect grid".into()));
        }
        let values = self.shape_effects(j, grid)?;
        let m = self.term_means.shape[j];
        Ok(grid.iter().zip(values).map(|(&x, v)| (x, v - m)).collect())
    }
}
