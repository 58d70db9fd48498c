//! CartPoleGen: a variational autoencoder over CartPoleNet weight vectors.
//!
//! Encoder: `x → 128 (ELU) → [x, h1] → 64 (ELU) → (mu, logvar)`, 32 each.
//! Decoder: `z → 64 (ELU) → [z, g1] → 128 (ELU) → 212 (linear)`.
//! Skip connections concatenate. In conditional mode a one-hot group label is
//! appended to both the encoder input and the decoder input, and travels
//! along the skip paths with them.
//!
//! The loss per item is `Σ (x - x̂)² + KL(N(mu, σ²) ‖ N(0, I))` with one
//! reparametrized noise sample; batches average it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{WeightVector, WEIGHT_DIM};
use crate::error::{Error, Result};
use crate::nn::{elu, elu_grad, AdamConfig, AdamState, DenseLayer};
use crate::rng::Rng;
use crate::zoo::{write_atomic, Group, Zoo};

pub const LATENT_DIM: usize = 32;
pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 5.0;
pub const NUM_GROUPS: usize = 4;

pub const GEN_MAGIC: &[u8; 8] = b"AGNTGEN\0";
pub const GEN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenArch {
    pub input_dim: usize,
    pub enc_hidden1: usize,
    pub enc_hidden2: usize,
    pub latent_dim: usize,
    pub dec_hidden1: usize,
    pub dec_hidden2: usize,
    /// One-hot condition width; 0 for unconditional models.
    pub conditions: usize,
}

impl GenArch {
    pub fn unconditional() -> Self {
        Self {
            input_dim: WEIGHT_DIM,
            enc_hidden1: 128,
            enc_hidden2: 64,
            latent_dim: LATENT_DIM,
            dec_hidden1: 64,
            dec_hidden2: 128,
            conditions: 0,
        }
    }

    pub fn conditional() -> Self {
        Self {
            conditions: NUM_GROUPS,
            ..Self::unconditional()
        }
    }

    fn descriptor(&self) -> [u32; 7] {
        [
            self.input_dim,
            self.enc_hidden1,
            self.enc_hidden2,
            self.latent_dim,
            self.dec_hidden1,
            self.dec_hidden2,
            self.conditions,
        ]
        .map(|v| v as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenModel {
    arch: GenArch,
    /// Set for models trained on a single survival group.
    trained_group: Option<Group>,
    enc1: DenseLayer,
    enc2: DenseLayer,
    enc_mu: DenseLayer,
    enc_logvar: DenseLayer,
    dec1: DenseLayer,
    dec2: DenseLayer,
    dec3: DenseLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossParts {
    fn add_scaled(&mut self, other: &LossParts, scale: f64) {
        self.recon += other.recon * scale;
        self.kl += other.kl * scale;
        self.total += other.total * scale;
    }
}

/// Latent code plus its optional condition.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
    pub label: Option<Group>,
}

impl LatentCode {
    pub fn new(z: Vec<f64>, label: Option<Group>) -> Result<Self> {
        if z.len() != LATENT_DIM {
            return Err(Error::contract(format!(
                "latent code must have {LATENT_DIM} entries, got {}",
                z.len()
            )));
        }
        Ok(Self { z, label })
    }
}

struct EncoderTrace {
    xin: Vec<f64>,
    pre1: Vec<f64>,
    e2in: Vec<f64>,
    pre2: Vec<f64>,
    h2: Vec<f64>,
    mu: Vec<f64>,
    logvar_raw: Vec<f64>,
    logvar: Vec<f64>,
}

struct DecoderTrace {
    din: Vec<f64>,
    pre1: Vec<f64>,
    d2in: Vec<f64>,
    pre2: Vec<f64>,
    g2: Vec<f64>,
    xhat: Vec<f64>,
}

pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

pub fn elbo_loss(x: &[f64], x_hat: &[f64], mu: &[f64], logvar: &[f64]) -> LossParts {
    let recon: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    let kl = kl_divergence(mu, logvar);
    LossParts {
        recon,
        kl,
        total: recon + kl,
    }
}

/// `mu + exp(logvar / 2) ⊙ eps` with the logvar clamp applied.
pub fn reparameterize_with(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * e)
        .collect()
}

pub fn reparameterize(mu: &[f64], logvar: &[f64], rng: &mut Rng) -> Vec<f64> {
    let eps: Vec<f64> = (0..mu.len()).map(|_| rng.normal()).collect();
    reparameterize_with(mu, logvar, &eps)
}

fn one_hot(label: Option<Group>, width: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    if let (Some(g), true) = (label, width > 0) {
        v[g.index()] = 1.0;
    }
    v
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

impl GenModel {
    pub fn new(arch: GenArch, rng: &mut Rng) -> Self {
        let c = arch.conditions;
        let xin = arch.input_dim + c;
        let din = arch.latent_dim + c;
        Self {
            arch,
            trained_group: None,
            enc1: DenseLayer::init_uniform(xin, arch.enc_hidden1, rng),
            enc2: DenseLayer::init_uniform(xin + arch.enc_hidden1, arch.enc_hidden2, rng),
            enc_mu: DenseLayer::init_uniform(arch.enc_hidden2, arch.latent_dim, rng),
            enc_logvar: DenseLayer::init_uniform(arch.enc_hidden2, arch.latent_dim, rng),
            dec1: DenseLayer::init_uniform(din, arch.dec_hidden1, rng),
            dec2: DenseLayer::init_uniform(din + arch.dec_hidden1, arch.dec_hidden2, rng),
            dec3: DenseLayer::init_uniform(arch.dec_hidden2, arch.input_dim, rng),
        }
    }

    pub fn arch(&self) -> &GenArch {
        &self.arch
    }

    pub fn is_conditional(&self) -> bool {
        self.arch.conditions > 0
    }

    pub fn trained_group(&self) -> Option<Group> {
        self.trained_group
    }

    pub fn set_trained_group(&mut self, group: Option<Group>) {
        self.trained_group = group;
    }

    fn layers(&self) -> [&DenseLayer; 7] {
        [
            &self.enc1,
            &self.enc2,
            &self.enc_mu,
            &self.enc_logvar,
            &self.dec1,
            &self.dec2,
            &self.dec3,
        ]
    }

    fn layers_mut(&mut self) -> [&mut DenseLayer; 7] {
        [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.enc_mu,
            &mut self.enc_logvar,
            &mut self.dec1,
            &mut self.dec2,
            &mut self.dec3,
        ]
    }

    fn offsets(&self) -> [usize; 8] {
        let mut out = [0; 8];
        for (i, layer) in self.layers().iter().enumerate() {
            out[i + 1] = out[i] + layer.num_params();
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in self.layers() {
            layer.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::contract(format!(
                "generator has {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut offset = 0;
        for layer in self.layers_mut() {
            offset += layer.read_params(&params[offset..])?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }

    /// The same model with every parameter rounded to `f32`.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        let p: Vec<f64> = self.params().into_iter().map(|v| f64::from(v as f32)).collect();
        out.set_params(&p).expect("same shape");
        out
    }

    fn check_label(&self, label: Option<Group>) -> Result<()> {
        match (self.is_conditional(), label, self.trained_group) {
            (true, Some(_), _) => Ok(()),
            (true, None, _) => Err(Error::contract("conditional model needs a group label")),
            (false, None, _) => Ok(()),
            (false, Some(l), Some(g)) if l == g => Ok(()),
            (false, Some(l), Some(g)) => Err(Error::contract(format!(
                "model was trained on {g} only and cannot be queried with {l}"
            ))),
            (false, Some(l), None) => Err(Error::contract(format!(
                "unconditional model cannot take label {l}"
            ))),
        }
    }

    fn encode_trace(&self, x: &[f64], label: Option<Group>) -> Result<EncoderTrace> {
        self.check_label(label)?;
        if x.len() != self.arch.input_dim {
            return Err(Error::contract(format!(
                "encoder input must have {} entries, got {}",
                self.arch.input_dim,
                x.len()
            )));
        }
        let xin = concat(x, &one_hot(label, self.arch.conditions));
        let pre1 = self.enc1.forward(&xin)?;
        let h1: Vec<f64> = pre1.iter().map(|&v| elu(v)).collect();
        let e2in = concat(&xin, &h1);
        let pre2 = self.enc2.forward(&e2in)?;
        let h2: Vec<f64> = pre2.iter().map(|&v| elu(v)).collect();
        let mu = self.enc_mu.forward(&h2)?;
        let logvar_raw = self.enc_logvar.forward(&h2)?;
        let logvar = logvar_raw.iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
        Ok(EncoderTrace {
            xin,
            pre1,
            e2in,
            pre2,
            h2,
            mu,
            logvar_raw,
            logvar,
        })
    }

    fn decode_trace(&self, z: &[f64], label: Option<Group>) -> Result<DecoderTrace> {
        self.check_label(label)?;
        if z.len() != self.arch.latent_dim {
            return Err(Error::contract(format!(
                "latent code must have {} entries, got {}",
                self.arch.latent_dim,
                z.len()
            )));
        }
        let din = concat(z, &one_hot(label, self.arch.conditions));
        let pre1 = self.dec1.forward(&din)?;
        let g1: Vec<f64> = pre1.iter().map(|&v| elu(v)).collect();
        let d2in = concat(&din, &g1);
        let pre2 = self.dec2.forward(&d2in)?;
        let g2: Vec<f64> = pre2.iter().map(|&v| elu(v)).collect();
        let xhat = self.dec3.forward(&g2)?;
        Ok(DecoderTrace {
            din,
            pre1,
            d2in,
            pre2,
            g2,
            xhat,
        })
    }

    /// Posterior parameters `(mu, logvar)`; logvar is clamped to `[-20, 5]`.
    pub fn encode(&self, x: &[f64], label: Option<Group>) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.encode_trace(x, label)?;
        Ok((t.mu, t.logvar))
    }

    /// Mean of the Gaussian likelihood for `code`.
    pub fn decode(&self, code: &LatentCode) -> Result<WeightVector> {
        WeightVector::new(self.decode_trace(&code.z, code.label)?.xhat)
    }

    pub fn decode_z(&self, z: &[f64], label: Option<Group>) -> Result<WeightVector> {
        WeightVector::new(self.decode_trace(z, label)?.xhat)
    }

    /// `decode(encode(x).mu)`.
    pub fn reconstruct(&self, x: &[f64], label: Option<Group>) -> Result<WeightVector> {
        let (mu, _) = self.encode(x, label)?;
        self.decode_z(&mu, label)
    }

    /// Loss for one item with the noise sample fixed to `eps`.
    pub fn loss_with_noise(&self, x: &[f64], label: Option<Group>, eps: &[f64]) -> Result<LossParts> {
        let enc = self.encode_trace(x, label)?;
        let z = reparameterize_with(&enc.mu, &enc.logvar, eps);
        let dec = self.decode_trace(&z, label)?;
        Ok(elbo_loss(x, &dec.xhat, &enc.mu, &enc.logvar))
    }

    /// Loss and its gradient for one item, accumulating `scale · ∂loss/∂θ`
    /// into `grad` (canonical parameter order).
    pub fn accumulate_gradient(
        &self,
        x: &[f64],
        label: Option<Group>,
        eps: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<LossParts> {
        if grad.len() != self.num_params() || eps.len() != self.arch.latent_dim {
            return Err(Error::contract("gradient buffer or noise has the wrong length"));
        }
        let enc = self.encode_trace(x, label)?;
        let sigma: Vec<f64> = enc.logvar.iter().map(|lv| (0.5 * lv).exp()).collect();
        let z: Vec<f64> = enc
            .mu
            .iter()
            .zip(&sigma)
            .zip(eps)
            .map(|((m, s), e)| m + s * e)
            .collect();
        let dec = self.decode_trace(&z, label)?;
        let loss = elbo_loss(x, &dec.xhat, &enc.mu, &enc.logvar);

        let off = self.offsets();
        let (enc_grad, dec_grad) = grad.split_at_mut(off[4]);
        let (g_enc1, rest) = enc_grad.split_at_mut(off[1]);
        let (g_enc2, rest) = rest.split_at_mut(off[2] - off[1]);
        let (g_mu, g_lv) = rest.split_at_mut(off[3] - off[2]);
        let (g_dec1, rest) = dec_grad.split_at_mut(off[5] - off[4]);
        let (g_dec2, g_dec3) = rest.split_at_mut(off[6] - off[5]);

        // Decoder.
        let d_xhat: Vec<f64> = dec.xhat.iter().zip(x).map(|(h, t)| 2.0 * (h - t) * scale).collect();
        let mut d_g2 = vec![0.0; self.arch.dec_hidden2];
        self.dec3.backward(&dec.g2, &d_xhat, g_dec3, Some(&mut d_g2));
        let d_pre2: Vec<f64> = d_g2.iter().zip(&dec.pre2).map(|(g, &p)| g * elu_grad(p)).collect();
        let mut d_d2in = vec![0.0; dec.d2in.len()];
        self.dec2.backward(&dec.d2in, &d_pre2, g_dec2, Some(&mut d_d2in));
        let din_len = dec.din.len();
        let d_pre1: Vec<f64> = d_d2in[din_len..]
            .iter()
            .zip(&dec.pre1)
            .map(|(g, &p)| g * elu_grad(p))
            .collect();
        let mut d_din = d_d2in[..din_len].to_vec();
        self.dec1.backward(&dec.din, &d_pre1, g_dec1, Some(&mut d_din));

        // Reparametrization and KL.
        let k = self.arch.latent_dim;
        let mut d_mu = vec![0.0; k];
        let mut d_lv_raw = vec![0.0; k];
        for i in 0..k {
            let dz = d_din[i];
            d_mu[i] = dz + enc.mu[i] * scale;
            let d_lv = dz * 0.5 * sigma[i] * eps[i] + 0.5 * (enc.logvar[i].exp() - 1.0) * scale;
            let raw = enc.logvar_raw[i];
            d_lv_raw[i] = if (LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) { d_lv } else { 0.0 };
        }

        // Encoder.
        let mut d_h2 = vec![0.0; self.arch.enc_hidden2];
        self.enc_mu.backward(&enc.h2, &d_mu, g_mu, Some(&mut d_h2));
        self.enc_logvar.backward(&enc.h2, &d_lv_raw, g_lv, Some(&mut d_h2));
        let d_pre2: Vec<f64> = d_h2.iter().zip(&enc.pre2).map(|(g, &p)| g * elu_grad(p)).collect();
        let mut d_e2in = vec![0.0; enc.e2in.len()];
        self.enc2.backward(&enc.e2in, &d_pre2, g_enc2, Some(&mut d_e2in));
        let xin_len = enc.xin.len();
        let d_pre1: Vec<f64> = d_e2in[xin_len..]
            .iter()
            .zip(&enc.pre1)
            .map(|(g, &p)| g * elu_grad(p))
            .collect();
        self.enc1.backward(&enc.xin, &d_pre1, g_enc1, None);

        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "group")]
pub enum GenMode {
    /// One unconditional model over every record.
    Combined,
    /// One model with the group label as a one-hot condition.
    Conditional,
    /// An unconditional model trained on one group only.
    PerGroup(Group),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub mode: GenMode,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 10,
            adam: AdamConfig::default(),
            mode: GenMode::Combined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedGen {
    pub model: GenModel,
    pub curve: Vec<EpochLog>,
}

/// Minibatch ADAM on the averaged per-item loss. Epoch logs average the
/// per-item losses seen during that epoch.
pub fn train_gen(zoo: &Zoo, config: &GenTrainConfig, rng: &mut Rng) -> Result<TrainedGen> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::contract("epochs and batch_size must be at least 1"));
    }
    let (arch, items): (GenArch, Vec<(&[f64], Option<Group>)>) = match config.mode {
        GenMode::Combined => (
            GenArch::unconditional(),
            zoo.records.iter().map(|r| (&r.weights[..], None)).collect(),
        ),
        GenMode::Conditional => (
            GenArch::conditional(),
            zoo.records.iter().map(|r| (&r.weights[..], Some(r.group))).collect(),
        ),
        GenMode::PerGroup(g) => (
            GenArch::unconditional(),
            zoo.in_group(g).map(|r| (&r.weights[..], None)).collect(),
        ),
    };
    if items.is_empty() {
        return Err(Error::contract("generator training needs at least one record"));
    }
    let mut model = GenModel::new(arch, &mut rng.fork_labeled("init"));
    if let GenMode::PerGroup(g) = config.mode {
        model.trained_group = Some(g);
    }
    let mut params = model.params();
    let mut adam = AdamState::new(config.adam, params.len());
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut batch_id = 0usize;

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut sums = LossParts::default();
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, label) = items[i];
                let eps: Vec<f64> = (0..LATENT_DIM).map(|_| rng.normal()).collect();
                let loss = model.accumulate_gradient(x, label, &eps, scale, &mut grad)?;
                if !loss.total.is_finite() {
                    return Err(Error::Diverged {
                        step: batch_id,
                        detail: format!("non-finite loss in batch {batch_id} of epoch {epoch}"),
                    });
                }
                sums.add_scaled(&loss, 1.0);
            }
            adam.step(&mut params, &grad).map_err(|e| Error::Diverged {
                step: batch_id,
                detail: format!("batch {batch_id}: {e}"),
            })?;
            model.set_params(&params)?;
            batch_id += 1;
        }
        let n = items.len() as f64;
        curve.push(EpochLog {
            epoch,
            recon: sums.recon / n,
            kl: sums.kl / n,
            total: sums.total / n,
        });
    }
    if !model.is_finite() {
        return Err(Error::Diverged {
            step: batch_id,
            detail: "parameters became non-finite".into(),
        });
    }
    Ok(TrainedGen { model, curve })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// Decode `z ~ N(0, I)`.
    Prior,
    /// Encode a random source record, draw `z` from its posterior, decode.
    Posterior,
}

/// `n` fresh weight vectors. In posterior mode with a label, source records
/// are restricted to that group.
pub fn sample_networks(
    model: &GenModel,
    n: usize,
    mode: SampleMode,
    source: Option<&Zoo>,
    label: Option<Group>,
    rng: &mut Rng,
) -> Result<Vec<WeightVector>> {
    model.check_label(label)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    match mode {
        SampleMode::Prior => (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..model.arch.latent_dim).map(|_| rng.normal()).collect();
                model.decode_z(&z, label)
            })
            .collect(),
        SampleMode::Posterior => {
            let zoo = source.ok_or_else(|| Error::contract("posterior sampling needs a source zoo"))?;
            let pool: Vec<&[f64]> = zoo
                .records
                .iter()
                .filter(|r| label.map_or(true, |g| r.group == g))
                .map(|r| &r.weights[..])
                .collect();
            if pool.is_empty() {
                return Err(Error::contract(match label {
                    Some(g) => format!("source zoo has no {g} records to encode"),
                    None => "source zoo is empty".to_string(),
                }));
            }
            (0..n)
                .map(|_| {
                    let x = pool[rng.below(pool.len())];
                    let (mu, logvar) = model.encode(x, label)?;
                    let z = reparameterize(&mu, &logvar, rng);
                    model.decode_z(&z, label)
                })
                .collect()
        }
    }
}

/// Mean squared reconstruction error per item, `decode(encode(x).mu)` vs `x`.
pub fn mean_reconstruction_error(model: &GenModel, items: &[(&[f64], Option<Group>)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, label) in items {
        let r = model.reconstruct(x, *label)?;
        total += x.iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / items.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenFileMeta {
    pub trained_group: Option<Group>,
    pub extra: Option<serde_json::Value>,
}

/// Binary layout (little-endian):
/// magic "AGNTGEN\0" | version u32 | 7 × u32 architecture
/// (input, enc_h1, enc_h2, latent, dec_h1, dec_h2, conditions) |
/// metadata length u32 | metadata JSON | parameter count u64 | f32 parameters.
pub fn encode_model(model: &GenModel, extra: Option<serde_json::Value>) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&GenFileMeta {
        trained_group: model.trained_group,
        extra,
    })?;
    let params = model.params();
    let mut out = Vec::with_capacity(64 + meta.len() + params.len() * 4);
    out.extend_from_slice(GEN_MAGIC);
    out.extend_from_slice(&GEN_VERSION.to_le_bytes());
    for d in model.arch.descriptor() {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<(GenModel, GenFileMeta)> {
    let fail = |offset: usize, detail: String| Error::Format {
        what: "model file",
        offset: offset as u64,
        detail,
    };
    let mut pos = 0usize;
    let mut take = |n: usize, field: &str| -> Result<(usize, &[u8])> {
        if bytes.len() - pos < n {
            return Err(fail(pos, format!("truncated while reading {field}")));
        }
        let at = pos;
        pos += n;
        Ok((at, &bytes[at..at + n]))
    };
    let (_, magic) = take(8, "magic")?;
    if magic != GEN_MAGIC {
        return Err(fail(0, "bad magic, not a model file".into()));
    }
    let (at, v) = take(4, "version")?;
    let version = u32::from_le_bytes(v.try_into().unwrap());
    if version != GEN_VERSION {
        return Err(fail(at, format!("unsupported format version {version}")));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(4, "architecture")?.1.try_into().unwrap()) as usize;
    }
    let arch = GenArch {
        input_dim: dims[0],
        enc_hidden1: dims[1],
        enc_hidden2: dims[2],
        latent_dim: dims[3],
        dec_hidden1: dims[4],
        dec_hidden2: dims[5],
        conditions: dims[6],
    };
    if arch.input_dim != WEIGHT_DIM || arch.latent_dim != LATENT_DIM || !(arch.conditions == 0 || arch.conditions == NUM_GROUPS) {
        return Err(fail(12, format!("unsupported architecture {arch:?}")));
    }
    let (_, ml) = take(4, "metadata length")?;
    let meta_len = u32::from_le_bytes(ml.try_into().unwrap()) as usize;
    let (meta_at, meta_bytes) = take(meta_len, "metadata")?;
    let meta: GenFileMeta = serde_json::from_slice(meta_bytes)
        .map_err(|e| fail(meta_at, format!("metadata is not valid JSON: {e}")))?;
    let (count_at, c) = take(8, "parameter count")?;
    let count = u64::from_le_bytes(c.try_into().unwrap()) as usize;
    let mut model = GenModel::new(arch, &mut Rng::new(0));
    if count != model.num_params() {
        return Err(fail(
            count_at,
            format!("architecture needs {} parameters, file declares {count}", model.num_params()),
        ));
    }
    let (block_at, block) = take(count * 4, "parameters")?;
    if block_at + count * 4 != bytes.len() {
        return Err(fail(block_at + count * 4, "trailing bytes after parameter block".into()));
    }
    let params: Vec<f64> = block
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(fail(block_at + 4 * i, "non-finite parameter".into()));
    }
    model.set_params(&params)?;
    model.trained_group = meta.trained_group;
    Ok((model, meta))
}

pub fn save_model(model: &GenModel, path: &Path, extra: Option<serde_json::Value>) -> Result<()> {
    write_atomic(path, &encode_model(model, extra)?)
}

pub fn load_model(path: &Path) -> Result<(GenModel, GenFileMeta)> {
    decode_model(&fs::read(path)?)
}

/// Training curve as CSV with header `epoch,recon,kl,total`.
pub fn curve_csv(curve: &[EpochLog]) -> String {
    let mut s = String::from("epoch,recon,kl,total\n");
    for e in curve {
        s.push_str(&format!("{},{},{},{}\n", e.epoch, e.recon, e.kl, e.total));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{AgentRecord, ZooMeta};
    use approx::assert_abs_diff_eq;

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.0; 32], &[0.0; 32]), 0.0);
        let mut mu = vec![0.0; 32];
        mu[0] = 1.0;
        assert_abs_diff_eq!(kl_divergence(&mu, &[0.0; 32]), 0.5, epsilon = 1e-15);
        let x = vec![0.3; 212];
        assert_eq!(elbo_loss(&x, &x, &[0.0; 32], &[0.0; 32]).total, 0.0);
    }

    #[test]
    fn reparameterize_limits() {
        let mu: Vec<f64> = (0..32).map(|i| i as f64 * 0.1).collect();
        let z = reparameterize(&mu, &[-1e9; 32], &mut Rng::new(1));
        for (a, b) in z.iter().zip(&mu) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-3);
        }
        let eps = vec![0.5; 32];
        let lv = vec![0.2; 32];
        let z1 = reparameterize_with(&mu, &lv, &eps);
        let mu2: Vec<f64> = mu.iter().map(|m| m * 2.0).collect();
        let z2 = reparameterize_with(&mu2, &lv, &eps);
        for i in 0..32 {
            assert_abs_diff_eq!(z2[i] - z1[i], mu[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn reparameterize_moments() {
        let mut rng = Rng::new(4);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .flat_map(|_| reparameterize(&[0.0], &[0.0], &mut rng))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn fresh_model_sanity() {
        let model = GenModel::new(GenArch::unconditional(), &mut Rng::new(2));
        let (mu, lv) = model.encode(&[0.0; 212], None).unwrap();
        assert_eq!(mu.len(), 32);
        assert!(mu.iter().chain(&lv).all(|v| v.is_finite()));
        assert!(mu.iter().all(|m| m.abs() < 1.0));
        assert_eq!(model.encode(&[0.1; 212], None).unwrap(), model.encode(&[0.1; 212], None).unwrap());
        let code = LatentCode::new(vec![0.2; 32], None).unwrap();
        let w = model.decode(&code).unwrap();
        assert_eq!(w, model.decode(&code).unwrap());
        assert!(crate::agent::CartPoleNet::devectorize(&w).is_ok());
        assert!(LatentCode::new(vec![0.0; 31], None).is_err());
    }

    #[test]
    fn label_contract() {
        let plain = GenModel::new(GenArch::unconditional(), &mut Rng::new(2));
        let cond = GenModel::new(GenArch::conditional(), &mut Rng::new(2));
        assert!(plain.encode(&[0.0; 212], Some(Group::G1)).is_err());
        assert!(cond.encode(&[0.0; 212], None).is_err());
        assert!(cond.encode(&[0.0; 212], Some(Group::G3)).is_ok());
        let mut per_group = plain.clone();
        per_group.set_trained_group(Some(Group::G1));
        assert!(per_group.decode_z(&[0.0; 32], Some(Group::G1)).is_ok());
        assert!(per_group.decode_z(&[0.0; 32], Some(Group::G4)).is_err());
        assert!(plain.encode(&[0.0; 211], None).is_err());
    }

    #[test]
    fn parameter_count_and_round_trip() {
        let model = GenModel::new(GenArch::conditional(), &mut Rng::new(3));
        let expected = (216 * 128 + 128)
            + (344 * 64 + 64)
            + 2 * (64 * 32 + 32)
            + (36 * 64 + 64)
            + (100 * 128 + 128)
            + (128 * 212 + 212);
        assert_eq!(model.num_params(), expected);
        let bytes = encode_model(&model, None).unwrap();
        let (back, meta) = decode_model(&bytes).unwrap();
        assert_eq!(back, model.quantized());
        assert_eq!(meta.trained_group, None);
        assert!(matches!(decode_model(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[3] = 0;
        assert!(matches!(decode_model(&bad), Err(Error::Format { offset: 0, .. })));
    }

    fn toy_zoo(n: usize, seed: u64) -> Zoo {
        let mut rng = Rng::new(seed);
        let protos: Vec<Vec<f64>> = (0..3).map(|_| (0..212).map(|_| rng.normal() * 0.5).collect()).collect();
        let records = (0..n)
            .map(|i| {
                let p = &protos[i % 3];
                let w: Vec<f64> = p.iter().map(|v| v + 0.05 * rng.normal()).collect();
                AgentRecord::new(i as u64, &w, 10.0 + 60.0 * (i % 3) as f64, 0, 0).unwrap()
            })
            .collect();
        Zoo::new(records, ZooMeta::default()).unwrap()
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let zoo = toy_zoo(60, 1);
        let cfg = GenTrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let a = train_gen(&zoo, &cfg, &mut Rng::new(9)).unwrap();
        let b = train_gen(&zoo, &cfg, &mut Rng::new(9)).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.model, b.model);
        assert!(a.curve.last().unwrap().total < a.curve[0].total);
        let csv = curve_csv(&a.curve);
        assert!(csv.starts_with("epoch,recon,kl,total\n"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn conditional_and_per_group_training() {
        let zoo = toy_zoo(30, 2);
        let cfg = GenTrainConfig {
            epochs: 1,
            mode: GenMode::Conditional,
            ..Default::default()
        };
        let cond = train_gen(&zoo, &cfg, &mut Rng::new(1)).unwrap().model;
        assert!(cond.is_conditional());
        let cfg = GenTrainConfig {
            epochs: 1,
            mode: GenMode::PerGroup(Group::G2),
            ..Default::default()
        };
        let g2 = train_gen(&zoo, &cfg, &mut Rng::new(1)).unwrap().model;
        assert_eq!(g2.trained_group(), Some(Group::G2));
        let cfg = GenTrainConfig {
            epochs: 1,
            mode: GenMode::PerGroup(Group::G4),
            ..Default::default()
        };
        assert!(train_gen(&zoo, &cfg, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn sampling_modes() {
        let zoo = toy_zoo(12, 3);
        let model = GenModel::new(GenArch::unconditional(), &mut Rng::new(5));
        let mut rng = Rng::new(6);
        assert!(sample_networks(&model, 0, SampleMode::Prior, None, None, &mut rng).unwrap().is_empty());
        assert_eq!(sample_networks(&model, 7, SampleMode::Prior, None, None, &mut rng).unwrap().len(), 7);
        assert_eq!(
            sample_networks(&model, 5, SampleMode::Posterior, Some(&zoo), None, &mut rng).unwrap().len(),
            5
        );
        assert!(sample_networks(&model, 5, SampleMode::Posterior, None, None, &mut rng).is_err());
        let empty = Zoo::default();
        assert!(sample_networks(&model, 5, SampleMode::Posterior, Some(&empty), None, &mut rng).is_err());
    }
}
