//! The 3D convolutional autoencoder and its variational sibling.
//!
//! Both share one encoder layout (stride-2 conv + ReLU per stage, flatten)
//! and one decoder layout (dense to the bottleneck map, then per stage
//! conv → trilinear ×2 → ReLU, then a 1-channel conv with a sigmoid head).
//! They differ only in the bottleneck: a single dense projection for the cAE,
//! a μ head and a log-variance head plus reparameterized sampling for the VAE.

mod arch;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use arch::{ArchConfig, KERNEL, PADDING};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Cae,
    Vae,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cae => "cae",
            ModelKind::Vae => "vae",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cae" => Ok(ModelKind::Cae),
            "vae" => Ok(ModelKind::Vae),
            other => Err(Error::Config(format!(
                "unknown model kind '{other}' (expected cae|vae)"
            ))),
        }
    }
}

/// A weight/bias pair. `P` is a [`Tensor`] when holding values and a [`Var`]
/// once bound to a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<P> {
    pub weight: P,
    pub bias: P,
}

impl<P> Layer<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Layer<Q> {
        Layer {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    fn refs(&self) -> [&P; 2] {
        [&self.weight, &self.bias]
    }

    fn refs_mut(&mut self) -> [&mut P; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<P> {
    pub convs: Vec<Layer<P>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<P> {
    pub dense: Layer<P>,
    pub convs: Vec<Layer<P>>,
    pub output: Layer<P>,
}

impl<P> Encoder<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Encoder<Q> {
        Encoder {
            convs: self.convs.iter().map(|l| l.map(f)).collect(),
        }
    }

    fn refs(&self) -> Vec<&P> {
        self.convs.iter().flat_map(Layer::refs).collect()
    }

    fn refs_mut(&mut self) -> Vec<&mut P> {
        self.convs.iter_mut().flat_map(Layer::refs_mut).collect()
    }
}

impl<P> Decoder<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Decoder<Q> {
        Decoder {
            dense: self.dense.map(f),
            convs: self.convs.iter().map(|l| l.map(f)).collect(),
            output: self.output.map(f),
        }
    }

    fn refs(&self) -> Vec<&P> {
        let mut v: Vec<&P> = self.dense.refs().into();
        v.extend(self.convs.iter().flat_map(Layer::refs));
        v.extend(self.output.refs());
        v
    }

    fn refs_mut(&mut self) -> Vec<&mut P> {
        let mut v: Vec<&mut P> = self.dense.refs_mut().into();
        v.extend(self.convs.iter_mut().flat_map(Layer::refs_mut));
        v.extend(self.output.refs_mut());
        v
    }
}

/// Uniform in ±sqrt(1/fan_in) for both weight and bias.
fn init_layer<T: Element>(
    rng: &mut ChaCha8Rng,
    weight_shape: &[usize],
    fan_in: usize,
) -> Layer<Tensor<T>> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let mut draw =
        |shape: &[usize]| Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)));
    let weight = draw(weight_shape);
    let bias = draw(&weight_shape[..1]);
    Layer { weight, bias }
}

fn init_conv<T: Element>(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> Layer<Tensor<T>> {
    init_layer(
        rng,
        &[cout, cin, KERNEL, KERNEL, KERNEL],
        cin * KERNEL.pow(3),
    )
}

fn init_dense<T: Element>(rng: &mut ChaCha8Rng, fan_in: usize, out: usize) -> Layer<Tensor<T>> {
    init_layer(rng, &[out, fan_in], fan_in)
}

fn init_encoder<T: Element>(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Encoder<Tensor<T>> {
    Encoder {
        convs: arch
            .encoder_channels()
            .into_iter()
            .map(|(i, o)| init_conv(rng, i, o))
            .collect(),
    }
}

fn init_decoder<T: Element>(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Decoder<Tensor<T>> {
    let dense = init_dense(rng, arch.latent_dim, arch.flat_len());
    let convs = arch
        .decoder_channels()
        .into_iter()
        .map(|(i, o)| init_conv(rng, i, o))
        .collect();
    let output = init_conv(rng, arch.channels[0], 1);
    Decoder {
        dense,
        convs,
        output,
    }
}

fn check_input<T: Element>(arch: &ArchConfig, x: &Tensor<T>) -> Result<()> {
    let s = x.shape();
    if s.len() != 5 || s[1] != 1 || s[2..] != arch.input_dims {
        return Err(Error::Config(format!(
            "model expects input [N,1,{},{},{}], got {s:?}",
            arch.input_dims[0], arch.input_dims[1], arch.input_dims[2]
        )));
    }
    Ok(())
}

/// Encoder stages followed by a flatten: `[N,1,D,H,W] -> [N, flat_len]`.
pub fn encode_features<T: Element>(tape: &mut Tape<T>, enc: &Encoder<Var>, x: Var) -> Result<Var> {
    let mut h = x;
    for conv in &enc.convs {
        let c = tape.conv3d(h, conv.weight, conv.bias, 2, PADDING)?;
        h = tape.relu(c)?;
    }
    tape.flatten(h)
}

/// Latent `[N, n_z]` back to a volume `[N,1,D,H,W]` in (0, 1).
pub fn decode<T: Element>(
    tape: &mut Tape<T>,
    arch: &ArchConfig,
    dec: &Decoder<Var>,
    z: Var,
) -> Result<Var> {
    let n = tape.value(z).shape()[0];
    let d = tape.linear(z, dec.dense.weight, dec.dense.bias)?;
    let d = tape.relu(d)?;
    let [bd, bh, bw] = arch.bottleneck_dims();
    let mut h = tape.reshape(d, &[n, arch.bottleneck_channels(), bd, bh, bw])?;
    for conv in &dec.convs {
        let c = tape.conv3d(h, conv.weight, conv.bias, 1, PADDING)?;
        let u = tape.upsample_trilinear(c, 2)?;
        h = tape.relu(u)?;
    }
    let out = tape.conv3d(h, dec.output.weight, dec.output.bias, 1, PADDING)?;
    tape.sigmoid(out)
}

/// Loss nodes of one training step.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    /// Present for the VAE only.
    pub kl: Option<Var>,
}

/// Shared surface of both autoencoders.
pub trait Autoencoder<T: Element> {
    fn kind(&self) -> ModelKind;
    fn arch(&self) -> &ArchConfig;
    /// Every learnable tensor in declared (checkpoint) order.
    fn tensors(&self) -> Vec<&Tensor<T>>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;
    /// Binds the parameters as tape leaves, returned in declared order.
    fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var>;
    /// Records the training objective for batch `x`. `eps` is the standard
    /// normal draw used by the VAE and ignored by the cAE.
    fn loss_graph(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        x: Var,
        eps: Option<&Tensor<T>>,
        lambda_kl: f64,
    ) -> Result<LossVars>;
    /// Deterministic reconstruction (the VAE decodes its mean).
    fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

fn rebuild<P: Copy>(
    params: &[P],
    arch: &ArchConfig,
    heads: usize,
) -> (Encoder<P>, Vec<Layer<P>>, Decoder<P>) {
    let stages = arch.stage_count();
    let mut it = params.iter().copied();
    let mut layer = || Layer {
        weight: it.next().expect("parameter layout"),
        bias: it.next().expect("parameter layout"),
    };
    let encoder = Encoder {
        convs: (0..stages).map(|_| layer()).collect(),
    };
    let heads = (0..heads).map(|_| layer()).collect();
    let dense = layer();
    let convs = (0..stages).map(|_| layer()).collect();
    let output = layer();
    (
        encoder,
        heads,
        Decoder {
            dense,
            convs,
            output,
        },
    )
}

/// Convolutional autoencoder parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CaeParams<T: Element = f32> {
    pub arch: ArchConfig,
    pub encoder: Encoder<Tensor<T>>,
    pub bottleneck: Layer<Tensor<T>>,
    pub decoder: Decoder<Tensor<T>>,
}

impl<T: Element> CaeParams<T> {
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = init_encoder(arch, &mut rng);
        let bottleneck = init_dense(&mut rng, arch.flat_len(), arch.latent_dim);
        let decoder = init_decoder(arch, &mut rng);
        Ok(Self {
            arch: arch.clone(),
            encoder,
            bottleneck,
            decoder,
        })
    }

    pub fn cast<U: Element>(&self) -> CaeParams<U> {
        let mut f = |t: &Tensor<T>| t.cast::<U>();
        CaeParams {
            arch: self.arch.clone(),
            encoder: self.encoder.map(&mut f),
            bottleneck: self.bottleneck.map(&mut f),
            decoder: self.decoder.map(&mut f),
        }
    }

    /// Rebuilds parameters from tensors in declared order, checking shapes
    /// against a freshly laid-out model.
    pub fn from_tensors(arch: &ArchConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let mut model = Self::init(arch, 0)?;
        assign(&mut model.tensors_mut(), tensors)?;
        Ok(model)
    }

    /// Records `x → (x̂, z)`.
    pub fn forward(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<(Var, Var)> {
        check_input(&self.arch, tape.value(x))?;
        let (enc, heads, dec) = rebuild(params, &self.arch, 1);
        let feat = encode_features(tape, &enc, x)?;
        let z = tape.linear(feat, heads[0].weight, heads[0].bias)?;
        let x_hat = decode(tape, &self.arch, &dec, z)?;
        Ok((x_hat, z))
    }
}

/// Variational autoencoder parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams<T: Element = f32> {
    pub arch: ArchConfig,
    pub encoder: Encoder<Tensor<T>>,
    pub mu_head: Layer<Tensor<T>>,
    pub logvar_head: Layer<Tensor<T>>,
    pub decoder: Decoder<Tensor<T>>,
}

impl<T: Element> VaeParams<T> {
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = init_encoder(arch, &mut rng);
        let mu_head = init_dense(&mut rng, arch.flat_len(), arch.latent_dim);
        let logvar_head = init_dense(&mut rng, arch.flat_len(), arch.latent_dim);
        let decoder = init_decoder(arch, &mut rng);
        Ok(Self {
            arch: arch.clone(),
            encoder,
            mu_head,
            logvar_head,
            decoder,
        })
    }

    pub fn cast<U: Element>(&self) -> VaeParams<U> {
        let mut f = |t: &Tensor<T>| t.cast::<U>();
        VaeParams {
            arch: self.arch.clone(),
            encoder: self.encoder.map(&mut f),
            mu_head: self.mu_head.map(&mut f),
            logvar_head: self.logvar_head.map(&mut f),
            decoder: self.decoder.map(&mut f),
        }
    }

    pub fn from_tensors(arch: &ArchConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let mut model = Self::init(arch, 0)?;
        assign(&mut model.tensors_mut(), tensors)?;
        Ok(model)
    }

    /// Records `x → (μ, logvar)`.
    pub fn encode(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<(Var, Var)> {
        check_input(&self.arch, tape.value(x))?;
        let (enc, heads, _) = rebuild(params, &self.arch, 2);
        let feat = encode_features(tape, &enc, x)?;
        let mu = tape.linear(feat, heads[0].weight, heads[0].bias)?;
        let logvar = tape.linear(feat, heads[1].weight, heads[1].bias)?;
        Ok((mu, logvar))
    }

    /// Records `x → (x̂, μ, logvar)` with `z = μ + exp(logvar/2) ⊙ eps`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        x: Var,
        eps: &Tensor<T>,
    ) -> Result<(Var, Var, Var)> {
        let (mu, logvar) = self.encode(tape, params, x)?;
        let eps = tape.leaf(eps.clone().with_grad(false));
        let z = tape.reparameterize(mu, logvar, eps)?;
        let (_, _, dec) = rebuild(params, &self.arch, 2);
        let x_hat = decode(tape, &self.arch, &dec, z)?;
        Ok((x_hat, mu, logvar))
    }
}

fn assign<T: Element>(slots: &mut [&mut Tensor<T>], tensors: Vec<Tensor<T>>) -> Result<()> {
    if slots.len() != tensors.len() {
        return Err(Error::Format(format!(
            "expected {} parameter tensors, found {}",
            slots.len(),
            tensors.len()
        )));
    }
    for (i, (slot, t)) in slots.iter_mut().zip(tensors).enumerate() {
        if slot.shape() != t.shape() {
            return Err(Error::Format(format!(
                "parameter {i}: expected shape {:?}, found {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        **slot = t;
    }
    Ok(())
}

fn bind_all<T: Element>(
    tensors: Vec<&Tensor<T>>,
    tape: &mut Tape<T>,
    requires_grad: bool,
) -> Vec<Var> {
    tensors
        .into_iter()
        .map(|t| tape.leaf(t.clone().with_grad(requires_grad)))
        .collect()
}

impl<T: Element> Autoencoder<T> for CaeParams<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Cae
    }

    fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = self.encoder.refs();
        v.extend(self.bottleneck.refs());
        v.extend(self.decoder.refs());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.encoder.refs_mut();
        v.extend(self.bottleneck.refs_mut());
        v.extend(self.decoder.refs_mut());
        v
    }

    fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        bind_all(self.tensors(), tape, requires_grad)
    }

    fn loss_graph(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        x: Var,
        _eps: Option<&Tensor<T>>,
        _lambda_kl: f64,
    ) -> Result<LossVars> {
        let (x_hat, _) = self.forward(tape, params, x)?;
        let recon = tape.l1_loss(x, x_hat)?;
        Ok(LossVars {
            total: recon,
            recon,
            kl: None,
        })
    }

    fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let xv = tape.leaf(x.clone().with_grad(false));
        let (x_hat, _) = self.forward(&mut tape, &params, xv)?;
        Ok(tape.value(x_hat).clone())
    }
}

impl<T: Element> Autoencoder<T> for VaeParams<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Vae
    }

    fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = self.encoder.refs();
        v.extend(self.mu_head.refs());
        v.extend(self.logvar_head.refs());
        v.extend(self.decoder.refs());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.encoder.refs_mut();
        v.extend(self.mu_head.refs_mut());
        v.extend(self.logvar_head.refs_mut());
        v.extend(self.decoder.refs_mut());
        v
    }

    fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        bind_all(self.tensors(), tape, requires_grad)
    }

    fn loss_graph(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        x: Var,
        eps: Option<&Tensor<T>>,
        lambda_kl: f64,
    ) -> Result<LossVars> {
        let n = tape.value(x).shape()[0];
        let zeros;
        let eps = match eps {
            Some(e) => e,
            None => {
                zeros = Tensor::zeros(&[n, self.arch.latent_dim]);
                &zeros
            }
        };
        let (x_hat, mu, logvar) = self.forward(tape, params, x, eps)?;
        let recon = tape.l1_loss(x, x_hat)?;
        let kl = tape.kl_divergence(mu, logvar)?;
        let weighted = tape.scale(kl, lambda_kl)?;
        let total = tape.add(recon, weighted)?;
        Ok(LossVars {
            total,
            recon,
            kl: Some(kl),
        })
    }

    fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let xv = tape.leaf(x.clone().with_grad(false));
        let eps = Tensor::zeros(&[x.shape()[0], self.arch.latent_dim]);
        let (x_hat, _, _) = self.forward(&mut tape, &params, xv, &eps)?;
        Ok(tape.value(x_hat).clone())
    }
}

/// A trained model of either kind, as loaded from a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Cae(CaeParams<f32>),
    Vae(VaeParams<f32>),
}

impl Model {
    pub fn init(kind: ModelKind, arch: &ArchConfig, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Cae => Model::Cae(CaeParams::init(arch, seed)?),
            ModelKind::Vae => Model::Vae(VaeParams::init(arch, seed)?),
        })
    }

    pub fn as_autoencoder(&self) -> &dyn Autoencoder<f32> {
        match self {
            Model::Cae(m) => m,
            Model::Vae(m) => m,
        }
    }

    pub fn as_autoencoder_mut(&mut self) -> &mut dyn Autoencoder<f32> {
        match self {
            Model::Cae(m) => m,
            Model::Vae(m) => m,
        }
    }

    pub fn from_tensors(
        kind: ModelKind,
        arch: &ArchConfig,
        tensors: Vec<Tensor<f32>>,
    ) -> Result<Self> {
        Ok(match kind {
            ModelKind::Cae => Model::Cae(CaeParams::from_tensors(arch, tensors)?),
            ModelKind::Vae => Model::Vae(VaeParams::from_tensors(arch, tensors)?),
        })
    }
}

/// `z = μ + exp(logvar/2) ⊙ eps`, evaluated outside any training graph.
pub fn reparameterize<T: Element>(
    mu: &Tensor<T>,
    logvar: &Tensor<T>,
    eps: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let (m, lv, e) = (
        tape.leaf(mu.clone().with_grad(false)),
        tape.leaf(logvar.clone().with_grad(false)),
        tape.leaf(eps.clone().with_grad(false)),
    );
    let z = tape.reparameterize(m, lv, e)?;
    Ok(tape.value(z).clone())
}

/// KL divergence of `N(μ, e^logvar)` from the standard normal prior, summed
/// over latent dims and averaged over the batch.
pub fn kl_divergence<T: Element>(mu: &Tensor<T>, logvar: &Tensor<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let m = tape.leaf(mu.clone().with_grad(false));
    let lv = tape.leaf(logvar.clone().with_grad(false));
    let kl = tape.kl_divergence(m, lv)?;
    Ok(tape.value(kl).item()?.as_f64())
}
