//! Fitting an additive model by minibatch gradient descent with dropout
//! inside each net and feature dropout across whole terms.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::{Interaction, LatentScaler, NaimModel};
use crate::codec::{AutoencoderModel, LatentCode};
use crate::diffcore::{AdamConfig, AdamState, Graph, Mlp, MlpConfig, MlpVars, Tensor, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::seed::{self, Rng};
use crate::synth::SyntheticDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Probability of zeroing an entire additive term for a sample.
    pub feature_dropout: f64,
    /// Dropout rate on hidden activations inside every net.
    pub dropout: f64,
    pub adam: AdamConfig,
    /// Learning rate is multiplied by this factor over the final
    /// `decay_epochs` epochs, linearly from 1. A window longer than the run
    /// covers the whole run.
    pub final_lr_factor: f64,
    pub decay_epochs: usize,
    pub seed: u64,
    pub interactions: Vec<(usize, usize)>,
    pub shape_hidden: usize,
    pub shape_layers: usize,
    pub image_hidden: usize,
    pub image_layers: usize,
    pub skip_connections: bool,
    /// Fit the image head; `false` gives the tabular-only ablation arm.
    pub use_image: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            feature_dropout: 0.5,
            dropout: 0.2,
            adam: AdamConfig::default(),
            final_lr_factor: 1.0,
            decay_epochs: 0,
            seed: 0,
            interactions: Vec::new(),
            shape_hidden: 100,
            shape_layers: 4,
            image_hidden: 100,
            image_layers: 4,
            skip_connections: true,
            use_image: true,
        }
    }
}

impl TrainConfig {
    /// Schedule used for the 10k-sample desk runs: longer training than the
    /// default with the learning rate annealed over the second half.
    pub fn desk() -> Self {
        Self { epochs: 200, final_lr_factor: 0.05, decay_epochs: 100, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.feature_dropout) {
            return invalid(format!("feature dropout {} outside [0, 1)", self.feature_dropout));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return invalid("batch size and epochs must be positive");
        }
        if !(self.final_lr_factor > 0.0 && self.final_lr_factor.is_finite()) {
            return invalid(format!("final learning-rate factor {} must be positive", self.final_lr_factor));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        let window = self.decay_epochs.min(self.epochs);
        let start = self.epochs - window;
        if window == 0 || epoch < start {
            return self.adam.lr;
        }
        let t = (epoch - start + 1) as f64 / window as f64;
        self.adam.lr * (1.0 - t * (1.0 - self.final_lr_factor))
    }
}

/// Inputs for fitting: tabular rows, optional frozen latent codes, targets.
#[derive(Clone, Debug)]
pub struct NaimData {
    pub rows: Vec<Vec<f64>>,
    pub codes: Option<Vec<LatentCode>>,
    pub y: Vec<f64>,
}

impl NaimData {
    /// Encodes the dataset's images once with the (frozen) autoencoder.
    pub fn from_dataset(ds: &SyntheticDataset, ae: Option<&AutoencoderModel>) -> Result<Self> {
        let codes = ae.map(|ae| ae.encode_batch(&ds.images)).transpose()?;
        Ok(Self { rows: ds.feature_rows(), codes, y: ds.y.clone() })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn validate(&self) -> Result<usize> {
        if self.y.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        if self.rows.len() != self.y.len() {
            return shape_err(format!("{} rows for {} targets", self.rows.len(), self.y.len()));
        }
        let j = self.rows[0].len();
        if self.rows.iter().any(|r| r.len() != j) {
            return shape_err("feature rows of mixed length");
        }
        if let Some(codes) = &self.codes {
            if codes.len() != self.y.len() {
                return shape_err(format!("{} codes for {} targets", codes.len(), self.y.len()));
            }
            let l = codes[0].dim();
            if codes.iter().any(|c| c.dim() != l) {
                return shape_err("latent codes of mixed dimension");
            }
        }
        if let Some(bad) = self.y.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("target {bad}")));
        }
        Ok(j)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean minibatch loss per epoch, with dropout active.
    pub epoch_loss: Vec<f64>,
}

struct Term<'a> {
    net: &'a Mlp,
    vars: MlpVars,
    input: Var,
}

fn column_batch(rows: &[Vec<f64>], idx: &[usize], cols: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(idx.len() * cols.len());
    for &i in idx {
        data.extend(cols.iter().map(|&c| rows[i][c]));
    }
    Tensor::from_parts(vec![idx.len(), cols.len()], data)
}

fn init_model(j: usize, latent: Option<usize>, config: &TrainConfig, intercept: f64, rng: &mut Rng) -> Result<NaimModel> {
    let net_cfg = |input: usize, hidden: usize, layers: usize| MlpConfig {
        skip: config.skip_connections,
        dropout: config.dropout,
        ..MlpConfig::new(input, hidden, layers, 1)
    };
    let shape_nets = (0..j)
        .map(|_| Mlp::new(net_cfg(1, config.shape_hidden, config.shape_layers), rng))
        .collect::<Result<Vec<_>>>()?;
    let interactions = config
        .interactions
        .iter()
        .map(|&pair| {
            Ok(Interaction { pair, net: Mlp::new(net_cfg(2, config.shape_hidden, config.shape_layers), rng)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let image_head = latent
        .map(|l| Mlp::new(net_cfg(l, config.image_hidden, config.image_layers), rng))
        .transpose()?;
    NaimModel::new(intercept, shape_nets, interactions, image_head)
}

/// Fits a model minimizing MSE. The latent codes are treated as fixed
/// inputs; nothing upstream of them is updated.
pub fn train(data: &NaimData, config: &TrainConfig) -> Result<(NaimModel, TrainLog)> {
    train_with(data, config, &mut |_, _| {})
}

/// Like [`train`], reporting each epoch's mean loss to `on_epoch`.
pub fn train_with(data: &NaimData, config: &TrainConfig, on_epoch: &mut dyn FnMut(usize, f64)) -> Result<(NaimModel, TrainLog)> {
    config.validate()?;
    let j = data.validate()?;
    let codes = if config.use_image {
        Some(data.codes.as_ref().ok_or_else(|| {
            Error::InvalidArgument("image arm requested but no latent codes supplied".into())
        })?)
    } else {
        None
    };
    let latent = codes.map(|c| c[0].dim());
    let mut rng = seed::rng(config.seed, "nam/train");
    let mean_y = data.y.iter().sum::<f64>() / data.len() as f64;
    let mut model = init_model(j, latent, config, mean_y, &mut seed::rng(config.seed, "nam/init"))?;
    if let Some(codes) = codes {
        model = model.with_image_input(LatentScaler::fit(codes)?)?;
    }

    let mut adam = {
        let mut params: Vec<&Tensor> = Vec::new();
        let intercept = Tensor::scalar(model.intercept);
        params.push(&intercept);
        for net in all_nets(&model) {
            params.extend(net.params());
        }
        AdamState::new(config.adam, &params)?
    };

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        adam.set_lr(config.lr_at(epoch));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let loss = step(&mut model, &mut adam, data, codes, batch, config, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            sum += loss * batch.len() as f64;
        }
        let mean = sum / data.len() as f64;
        log::debug!("nam epoch {epoch}: loss {mean:.6}");
        on_epoch(epoch, mean);
        log.epoch_loss.push(mean);
    }
    model.fit_term_means(&data.rows, codes.map(|c| c.as_slice()))?;
    Ok((model, log))
}

fn all_nets(model: &NaimModel) -> Vec<&Mlp> {
    let mut nets: Vec<&Mlp> = model.shape_nets.iter().collect();
    nets.extend(model.interactions.iter().map(|i| &i.net));
    nets.extend(model.image_head.as_ref());
    nets
}

fn step(
    model: &mut NaimModel,
    adam: &mut AdamState,
    data: &NaimData,
    codes: Option<&Vec<LatentCode>>,
    batch: &[usize],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let b = batch.len();
    let mut g = Graph::new();
    let beta = g.param(&Tensor::scalar(model.intercept));

    let mut terms: Vec<Term> = Vec::new();
    for (jx, net) in model.shape_nets.iter().enumerate() {
        let input = g.input(column_batch(&data.rows, batch, &[jx]));
        terms.push(Term { net, vars: net.bind(&mut g), input });
    }
    for it in &model.interactions {
        let input = g.input(column_batch(&data.rows, batch, &[it.pair.0, it.pair.1]));
        terms.push(Term { net: &it.net, vars: it.net.bind(&mut g), input });
    }
    if let (Some(head), Some(codes)) = (&model.image_head, codes) {
        let picked: Vec<&LatentCode> = batch.iter().map(|&i| &codes[i]).collect();
        let input = g.input(model.head_input(&picked)?);
        terms.push(Term { net: head, vars: head.bind(&mut g), input });
    }

    let mut total: Option<Var> = None;
    for term in &terms {
        let mut out = term.vars.forward(&mut g, term.net.config(), term.input, Some(rng))?;
        if config.feature_dropout > 0.0 {
            let mask = (0..b).map(|_| if rng.random::<f64>() < config.feature_dropout { 0.0 } else { 1.0 }).collect();
            out = g.scale(out, mask)?;
        }
        total = Some(match total {
            Some(t) => g.add(t, out)?,
            None => out,
        });
    }
    let pred = match total {
        Some(t) => g.add_bias(t, beta)?,
        None => {
            let zeros = g.input(Tensor::zeros(&[b, 1]));
            g.add_bias(zeros, beta)?
        }
    };
    let target: Vec<f64> = batch.iter().map(|&i| data.y[i]).collect();
    let loss = g.mse(pred, &target)?;
    let loss_value = g.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Ok(loss_value);
    }
    let grads = g.backward(loss)?;

    let mut grad_list = vec![grads.get_or_zeros(beta, &Tensor::scalar(0.0))];
    for term in &terms {
        grad_list.extend(term.vars.grads(&grads, term.net));
    }
    drop(terms);

    let mut intercept = Tensor::scalar(model.intercept);
    {
        let mut params: Vec<&mut Tensor> = vec![&mut intercept];
        for net in model.shape_nets.iter_mut() {
            params.extend(net.params_mut());
        }
        for it in model.interactions.iter_mut() {
            params.extend(it.net.params_mut());
        }
        if let Some(head) = model.image_head.as_mut() {
            params.extend(head.params_mut());
        }
        adam.step(&mut params, &grad_list)?;
    }
    model.intercept = intercept.data()[0];
    Ok(loss_value)
}

/// Encodes the dataset with the frozen autoencoder and fits a model.
pub fn train_on_dataset(ds: &SyntheticDataset, ae: Option<&AutoencoderModel>, config: &TrainConfig) -> Result<(NaimModel, TrainLog)> {
    let ae = if config.use_image { ae } else { None };
    train(&NaimData::from_dataset(ds, ae)?, config)
}
