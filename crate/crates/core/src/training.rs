//! Reconstruction losses, Adam, and the healthy-only fitting loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::models::Autoencoder;
use crate::tensor::{Element, Tape, Tensor};
use crate::volume::{Label, Volume};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_kl: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 100,
            lambda_kl: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lambda_kl >= 0.0 && self.lambda_kl.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_kl must be >= 0, got {}",
                self.lambda_kl
            )));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.epsilon <= 0.0
        {
            return Err(Error::Config(
                "adam betas must lie in [0,1) and epsilon must be > 0".into(),
            ));
        }
        Ok(())
    }
}

fn pair_loss<T: Element>(x: &Tensor<T>, x_hat: &Tensor<T>, l2: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.leaf(x.clone().with_grad(false));
    let b = tape.leaf(x_hat.clone().with_grad(false));
    let out = if l2 {
        tape.l2_loss(a, b)?
    } else {
        tape.l1_loss(a, b)?
    };
    Ok(tape.value(out).item()?.as_f64())
}

/// Σ|x − x̂| over all voxels of all batch items, divided by the batch size.
pub fn l1_loss<T: Element>(x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<f64> {
    pair_loss(x, x_hat, false)
}

/// Σ(x − x̂)² over all voxels of all batch items, divided by the batch size.
pub fn l2_loss<T: Element>(x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<f64> {
    pair_loss(x, x_hat, true)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// `l1_loss + λ_KL · KL`, with both components reported.
pub fn vae_loss<T: Element>(
    x: &Tensor<T>,
    x_hat: &Tensor<T>,
    mu: &Tensor<T>,
    logvar: &Tensor<T>,
    lambda_kl: f64,
) -> Result<VaeLoss> {
    let mut tape = Tape::new();
    let a = tape.leaf(x.clone().with_grad(false));
    let b = tape.leaf(x_hat.clone().with_grad(false));
    let m = tape.leaf(mu.clone().with_grad(false));
    let lv = tape.leaf(logvar.clone().with_grad(false));
    let recon = tape.l1_loss(a, b)?;
    let kl = tape.kl_divergence(m, lv)?;
    let weighted = tape.scale(kl, lambda_kl)?;
    let total = tape.add(recon, weighted)?;
    let get = |v| tape.value(v).item().map(Element::as_f64);
    Ok(VaeLoss {
        total: get(total)?,
        recon: get(recon)?,
        kl: get(kl)?,
    })
}

/// First and second moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step<T: Element>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "adam: param {i} shape {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter {i}"
            )));
        }
    }
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let gf = gv.as_f64();
            let mf = b1 * mv.as_f64() + (1.0 - b1) * gf;
            let vf = b2 * vv.as_f64() + (1.0 - b2) * gf * gf;
            *mv = T::from_f64(mf);
            *vv = T::from_f64(vf);
            let step = config.learning_rate * (mf / c1) / ((vf / c2).sqrt() + config.epsilon);
            *pv = T::from_f64(pv.as_f64() - step);
        }
    }
    Ok(())
}

/// Mean losses of one epoch, weighted by batch size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

/// Draws one standard-normal tensor.
pub fn standard_normal<T: Element>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        T::from_f64(v)
    })
}

/// Fits `model` to healthy volumes only.
///
/// Shuffling and VAE noise both come from one ChaCha stream seeded by
/// `config.seed`, so a rerun with the same seed is bit-identical. The last
/// partial batch of an epoch is kept.
pub fn fit<M: Autoencoder<f32>>(
    model: &mut M,
    data: &[Volume],
    config: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    config.validate()?;
    if let Some(bad) = data.iter().find(|v| v.meta.label != Label::Normal) {
        return Err(Error::Contract(format!(
            "training set must contain healthy volumes only; '{}' is labelled {}",
            bad.meta.subject, bad.meta.label
        )));
    }
    if config.epochs > 0 && data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let arch = model.arch().clone();
    if let Some(bad) = data.iter().find(|v| v.dims != arch.input_dims) {
        return Err(Error::Config(format!(
            "volume '{}' has dims {:?}, model expects {:?}",
            bad.meta.subject, bad.dims, arch.input_dims
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(&model.tensors());
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut recon_sum, mut kl_sum, mut total_sum) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Volume> = chunk.iter().map(|&i| &data[i]).collect();
            let x = Volume::batch(&batch)?;
            let n = batch.len();
            let eps = (model.kind() == crate::models::ModelKind::Vae)
                .then(|| standard_normal::<f32>(&mut rng, &[n, arch.latent_dim]));

            let mut tape = Tape::new();
            let params = model.bind(&mut tape, true);
            let xv = tape.leaf(x);
            let loss = model.loss_graph(&mut tape, &params, xv, eps.as_ref(), config.lambda_kl)?;
            let mut grads = tape.backward(loss.total)?;
            let grads: Vec<Tensor<f32>> = params
                .iter()
                .map(|&p| grads.take(p).expect("bound parameter has a gradient"))
                .collect();
            let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
            adam_step(&mut model.tensors_mut(), &grad_refs, &mut adam, config)?;

            let value = |v| tape.value(v).item().map(|x| x as f64);
            let w = n as f64;
            recon_sum += w * value(loss.recon)?;
            kl_sum += w * loss.kl.map(value).transpose()?.unwrap_or(0.0);
            total_sum += w * value(loss.total)?;
        }
        let count = data.len() as f64;
        history.push(EpochLoss {
            epoch: epoch + 1,
            recon: recon_sum / count,
            kl: kl_sum / count,
            total: total_sum / count,
        });
    }
    Ok(history)
}

/// Loss history as CSV: `epoch,recon_loss,kl_loss,total_loss`.
pub fn history_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,recon_loss,kl_loss,total_loss\n");
    for h in history {
        out.push_str(&format!("{},{},{},{}\n", h.epoch, h.recon, h.kl, h.total));
    }
    out
}
