//! Convolutional autoencoder standing in as the semantic encoder/decoder
//! pair: strided convolutions down to a dense latent code, transposed
//! convolutions back up, sigmoid output so decoded pixels stay in `[0,1]`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::latent::LatentCode;
use crate::diffcore::{AdamConfig, AdamState, Gradients, Graph, Linear, Tensor, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::seed::{self, Rng};

const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;
const CHUNK: usize = 256;

/// Smallest training set accepted by [`train_autoencoder`].
pub const MIN_TRAIN_IMAGES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub latent_dim: usize,
    /// Channel widths of the encoder stages; the decoder mirrors them.
    pub stage_channels: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Standard deviation of Gaussian noise added to latent codes during
    /// training; zero disables it.
    pub latent_noise: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            stage_channels: vec![8, 16, 16],
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.0,
            latent_noise: 0.0,
            seed: 0,
        }
    }
}

/// Conv weights are `[k*k*c_in, c_out]`; transposed-conv weights are
/// `[c_in, k*k*c_out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    fn uniform(shape: [usize; 2], bias_len: usize, fan_in: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..shape[0] * shape[1]).map(|_| rng.random_range(-bound..bound)).collect();
        let b = (0..bias_len).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weight: Tensor::from_parts(shape.to_vec(), w),
            bias: Tensor::from_parts(vec![bias_len], b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    height: usize,
    width: usize,
    channels: usize,
    latent_dim: usize,
    stage_channels: Vec<usize>,
    encoder_convs: Vec<ConvLayer>,
    encoder_head: Linear,
    decoder_head: Linear,
    decoder_convs: Vec<ConvLayer>,
}

struct BoundParams {
    encoder_convs: Vec<(Var, Var)>,
    encoder_head: (Var, Var),
    decoder_head: (Var, Var),
    decoder_convs: Vec<(Var, Var)>,
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderLog {
    pub epoch_loss: Vec<f64>,
}

impl AutoencoderModel {
    pub fn new(height: usize, width: usize, channels: usize, config: &AutoencoderConfig) -> Result<Self> {
        let stages = config.stage_channels.len();
        if config.latent_dim == 0 || stages == 0 || config.stage_channels.contains(&0) {
            return invalid(format!("autoencoder layout {config:?}"));
        }
        let div = STRIDE.pow(stages as u32);
        if height % div != 0 || width % div != 0 {
            return invalid(format!("image {height}x{width} not divisible by {div} for {stages} stages"));
        }
        let mut rng = seed::rng(config.seed, "codec/init");
        let mut widths = vec![channels];
        widths.extend(&config.stage_channels);
        let kk = KERNEL * KERNEL;
        let encoder_convs = widths
            .windows(2)
            .map(|w| ConvLayer::uniform([kk * w[0], w[1]], w[1], kk * w[0], &mut rng))
            .collect();
        let (gh, gw) = (height / div, width / div);
        let flat = gh * gw * config.stage_channels[stages - 1];
        let encoder_head = Linear::uniform(flat, config.latent_dim, &mut rng);
        let decoder_head = Linear::uniform(config.latent_dim, flat, &mut rng);
        let rev: Vec<usize> = widths.iter().rev().copied().collect();
        let decoder_convs = rev
            .windows(2)
            .map(|w| {
                let fan_in = w[0] * kk / (STRIDE * STRIDE);
                ConvLayer::uniform([w[0], kk * w[1]], w[1], fan_in, &mut rng)
            })
            .collect();
        Ok(Self {
            height,
            width,
            channels,
            latent_dim: config.latent_dim,
            stage_channels: config.stage_channels.clone(),
            encoder_convs,
            encoder_head,
            decoder_head,
            decoder_convs,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn image_dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    fn grid(&self) -> (usize, usize) {
        let div = STRIDE.pow(self.stage_channels.len() as u32);
        (self.height / div, self.width / div)
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.encoder_convs {
            out.extend([&l.weight, &l.bias]);
        }
        out.extend([&self.encoder_head.weight, &self.encoder_head.bias]);
        out.extend([&self.decoder_head.weight, &self.decoder_head.bias]);
        for l in &self.decoder_convs {
            out.extend([&l.weight, &l.bias]);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.encoder_convs {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        out.extend([&mut self.encoder_head.weight, &mut self.encoder_head.bias]);
        out.extend([&mut self.decoder_head.weight, &mut self.decoder_head.bias]);
        for l in &mut self.decoder_convs {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        out
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let mut put = |t: &Tensor| if trainable { g.param(t) } else { g.input(t.clone()) };
        BoundParams {
            encoder_convs: self.encoder_convs.iter().map(|l| (put(&l.weight), put(&l.bias))).collect(),
            encoder_head: (put(&self.encoder_head.weight), put(&self.encoder_head.bias)),
            decoder_head: (put(&self.decoder_head.weight), put(&self.decoder_head.bias)),
            decoder_convs: self.decoder_convs.iter().map(|l| (put(&l.weight), put(&l.bias))).collect(),
        }
    }

    fn collect_grads(&self, p: &BoundParams, grads: &Gradients) -> Vec<Tensor> {
        let mut vars: Vec<Var> = Vec::new();
        for &(w, b) in &p.encoder_convs {
            vars.extend([w, b]);
        }
        vars.extend([p.encoder_head.0, p.encoder_head.1, p.decoder_head.0, p.decoder_head.1]);
        for &(w, b) in &p.decoder_convs {
            vars.extend([w, b]);
        }
        vars.iter().zip(self.params()).map(|(&v, t)| grads.get_or_zeros(v, t)).collect()
    }

    fn encode_graph(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let mut h = x;
        for &(w, b) in &p.encoder_convs {
            let c = g.conv2d(h, w, KERNEL, STRIDE, PAD)?;
            let c = g.add_bias(c, b)?;
            h = g.relu(c);
        }
        let n = g.value(h).shape()[0];
        let flat = g.value(h).len() / n;
        let h = g.reshape(h, &[n, flat])?;
        let z = g.matmul(h, p.encoder_head.0)?;
        g.add_bias(z, p.encoder_head.1)
    }

    fn decode_graph(&self, g: &mut Graph, p: &BoundParams, z: Var) -> Result<Var> {
        let n = g.value(z).shape()[0];
        let (gh, gw) = self.grid();
        let top = *self.stage_channels.last().unwrap();
        let h = g.matmul(z, p.decoder_head.0)?;
        let h = g.add_bias(h, p.decoder_head.1)?;
        let h = g.relu(h);
        let mut h = g.reshape(h, &[n, gh, gw, top])?;
        let last = p.decoder_convs.len() - 1;
        for (i, &(w, b)) in p.decoder_convs.iter().enumerate() {
            let c = g.conv_transpose2d(h, w, KERNEL, STRIDE, PAD)?;
            let c = g.add_bias(c, b)?;
            h = if i == last { g.sigmoid(c) } else { g.relu(c) };
        }
        Ok(h)
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.dims() != self.image_dims() {
            return shape_err(format!(
                "autoencoder expects {:?} images, got {:?}",
                self.image_dims(),
                image.dims()
            ));
        }
        Ok(())
    }

    fn stack(&self, images: &[&Image]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(images.len() * self.height * self.width * self.channels);
        for im in images {
            self.check_image(im)?;
            data.extend_from_slice(im.data());
        }
        Ok(Tensor::from_parts(vec![images.len(), self.height, self.width, self.channels], data))
    }

    pub fn encode(&self, image: &Image) -> Result<LatentCode> {
        Ok(self.encode_batch(std::slice::from_ref(image))?.remove(0))
    }

    pub fn encode_batch(&self, images: &[Image]) -> Result<Vec<LatentCode>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let refs: Vec<&Image> = chunk.iter().collect();
            let mut g = Graph::new();
            let p = self.bind(&mut g, false);
            let x = g.input(self.stack(&refs)?);
            let z = self.encode_graph(&mut g, &p, x)?;
            let zt = g.value(z);
            if !zt.all_finite() {
                return Err(Error::NonFinite("latent code".into()));
            }
            out.extend((0..zt.rows()).map(|i| LatentCode::new(zt.row(i).to_vec())));
        }
        Ok(out)
    }

    pub fn decode(&self, z: &LatentCode) -> Result<Image> {
        Ok(self.decode_batch(std::slice::from_ref(z))?.remove(0))
    }

    pub fn decode_batch(&self, codes: &[LatentCode]) -> Result<Vec<Image>> {
        let mut out = Vec::with_capacity(codes.len());
        for chunk in codes.chunks(CHUNK) {
            let mut data = Vec::with_capacity(chunk.len() * self.latent_dim);
            for z in chunk {
                if z.dim() != self.latent_dim {
                    return shape_err(format!("latent code of dim {} for l = {}", z.dim(), self.latent_dim));
                }
                data.extend_from_slice(z.as_slice());
            }
            let mut g = Graph::new();
            let p = self.bind(&mut g, false);
            let zv = g.input(Tensor::new(vec![chunk.len(), self.latent_dim], data)?);
            let x = self.decode_graph(&mut g, &p, zv)?;
            let xt = g.value(x);
            for i in 0..xt.rows() {
                let px = xt.row(i).iter().map(|v| v.clamp(0.0, 1.0)).collect();
                out.push(Image::new(self.height, self.width, self.channels, px)?);
            }
        }
        Ok(out)
    }

    /// Mean per-pixel squared error of `decode(encode(x))` against `x`.
    pub fn reconstruction_mse(&self, images: &[Image]) -> Result<f64> {
        if images.is_empty() {
            return Err(Error::Empty("no images".into()));
        }
        let recon = self.decode_batch(&self.encode_batch(images)?)?;
        let total: f64 = recon.iter().zip(images).map(|(r, x)| r.mse(x)).sum::<Result<f64>>()?;
        Ok(total / images.len() as f64)
    }
}

/// Fits an autoencoder by minimizing pixel MSE with Adam.
pub fn train_autoencoder(images: &[Image], config: &AutoencoderConfig) -> Result<(AutoencoderModel, AutoencoderLog)> {
    train_autoencoder_with(images, config, &mut |_, _| {})
}

/// Like [`train_autoencoder`], reporting each epoch's mean loss to `on_epoch`
/// as soon as it is known.
pub fn train_autoencoder_with(
    images: &[Image],
    config: &AutoencoderConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<(AutoencoderModel, AutoencoderLog)> {
    if images.len() < MIN_TRAIN_IMAGES {
        return invalid(format!(
            "autoencoder training needs at least {MIN_TRAIN_IMAGES} images, got {}",
            images.len()
        ));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return invalid("batch size and epochs must be positive");
    }
    let (h, w, c) = images[0].dims();
    if let Some(bad) = images.iter().position(|im| im.dims() != (h, w, c)) {
        return shape_err(format!(
            "image {bad} is {:?}, expected {:?}",
            images[bad].dims(),
            (h, w, c)
        ));
    }
    let mut model = AutoencoderModel::new(h, w, c, config)?;
    let adam_cfg = AdamConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamConfig::default() };
    let mut adam = AdamState::new(adam_cfg, &model.params())?;
    let mut rng = seed::rng(config.seed, "codec/train");
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut log = AutoencoderLog::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let refs: Vec<&Image> = batch.iter().map(|&i| &images[i]).collect();
            let x_t = model.stack(&refs)?;
            let target = x_t.data().to_vec();
            let mut g = Graph::new();
            let p = model.bind(&mut g, true);
            let x = g.input(x_t);
            let mut z = model.encode_graph(&mut g, &p, x)?;
            if config.latent_noise > 0.0 {
                let n = g.value(z).len();
                let eps: Vec<f64> = (0..n)
                    .map(|_| config.latent_noise * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect();
                let noise = g.input(Tensor::from_parts(g.value(z).shape().to_vec(), eps));
                z = g.add(z, noise)?;
            }
            let recon = model.decode_graph(&mut g, &p, z)?;
            let loss = g.mse(recon, &target)?;
            let lv = g.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("autoencoder loss at epoch {epoch}")));
            }
            sum += lv * batch.len() as f64;
            let grads = g.backward(loss)?;
            let gv = model.collect_grads(&p, &grads);
            adam.step(&mut model.params_mut(), &gv)?;
        }
        let mean = sum / images.len() as f64;
        log::debug!("autoencoder epoch {epoch}: loss {mean:.6}");
        on_epoch(epoch, mean);
        log.epoch_loss.push(mean);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> AutoencoderConfig {
        AutoencoderConfig { latent_dim: 4, stage_channels: vec![2, 3], epochs: 1, batch_size: 50, ..Default::default() }
    }

    #[test]
    fn decode_of_zero_code_is_in_range() {
        let ae = AutoencoderModel::new(8, 8, 3, &tiny_config()).unwrap();
        let im = ae.decode(&LatentCode::new(vec![0.0; 4])).unwrap();
        assert_eq!(im.dims(), (8, 8, 3));
        assert!(im.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn encode_is_deterministic_and_checks_shape() {
        let ae = AutoencoderModel::new(8, 8, 1, &tiny_config()).unwrap();
        let im = Image::filled(8, 8, &[0.3]).unwrap();
        assert_eq!(ae.encode(&im).unwrap(), ae.encode(&im).unwrap());
        assert!(ae.encode(&Image::filled(8, 8, &[0.1, 0.2, 0.3]).unwrap()).is_err());
        assert!(ae.decode(&LatentCode::new(vec![0.0; 5])).is_err());
    }

    #[test]
    fn training_rejects_small_or_ragged_sets() {
        let few = vec![Image::filled(8, 8, &[0.5]).unwrap(); 10];
        assert!(train_autoencoder(&few, &tiny_config()).is_err());
        let mut ragged = vec![Image::filled(8, 8, &[0.5]).unwrap(); MIN_TRAIN_IMAGES];
        ragged[7] = Image::filled(16, 16, &[0.5]).unwrap();
        assert!(matches!(train_autoencoder(&ragged, &tiny_config()), Err(Error::Shape(_))));
    }

    #[test]
    fn indivisible_sizes_are_rejected() {
        assert!(AutoencoderModel::new(10, 10, 1, &tiny_config()).is_err());
    }
}
