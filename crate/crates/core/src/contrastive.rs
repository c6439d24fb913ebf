//! Toy multimodal encoders trained with an InfoNCE objective on
//! frame-difference visual embeddings.
//!
//! For a batch of `B` pairs, with `u_j = phi_V(o_end_j) - phi_V(o_start_j)`
//! and `w_i = phi_L(tokens_i)`:
//!
//! ```text
//! L = (1/B) sum_i -log( exp(S(u_i, w_i)/tau) / sum_j exp(S(u_j, w_i)/tau) )
//! ```
//!
//! where `S` is cosine similarity. The softmax runs over visual rows for each
//! text column.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, l2_norm, Embedding, Modality};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpTrace, ParamSet, Sgd};
use crate::rng::{domain, substream, Rng};

/// Shapes of the two encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderArch {
    pub visual_input: usize,
    #[serde(default = "default_hidden")]
    pub visual_hidden: Vec<usize>,
    pub vocab_size: usize,
    #[serde(default = "default_token_dim")]
    pub token_dim: usize,
    #[serde(default = "default_hidden")]
    pub text_hidden: Vec<usize>,
    pub dim: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}
fn default_token_dim() -> usize {
    16
}
fn default_temperature() -> f64 {
    1.0
}

impl EncoderArch {
    /// Default toy shapes: `input -> 64 -> dim` for both towers.
    pub fn new(visual_input: usize, vocab_size: usize, dim: usize) -> Self {
        Self {
            visual_input,
            visual_hidden: default_hidden(),
            vocab_size,
            token_dim: default_token_dim(),
            text_hidden: default_hidden(),
            dim,
            temperature: 1.0,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 || self.visual_input < 1 || self.vocab_size < 1 || self.token_dim < 1 {
            return Err(Error::Parameter("encoder sizes must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    fn visual_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.visual_input];
        s.extend(&self.visual_hidden);
        s.push(self.dim);
        s
    }

    fn text_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.token_dim];
        s.extend(&self.text_hidden);
        s.push(self.dim);
        s
    }
}

/// Learned token lookup table, mean-pooled, followed by an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub vocab_size: usize,
    pub token_dim: usize,
    /// `vocab_size x token_dim`, row-major.
    pub table: Vec<f64>,
    pub mlp: Mlp,
}

impl TextEncoder {
    fn pool(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Dimension("empty token sequence".into()));
        }
        let mut pooled = vec![0.0; self.token_dim];
        for &t in tokens {
            if t >= self.vocab_size {
                return Err(Error::Dimension(format!(
                    "token {t} outside vocabulary of {}",
                    self.vocab_size
                )));
            }
            let row = &self.table[t * self.token_dim..(t + 1) * self.token_dim];
            pooled.iter_mut().zip(row).for_each(|(p, x)| *p += x);
        }
        let n = tokens.len() as f64;
        pooled.iter_mut().for_each(|p| *p /= n);
        Ok(pooled)
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        Ok(self.mlp.forward(&self.pool(tokens)?))
    }

    fn backward(
        &self,
        tokens: &[usize],
        trace: &MlpTrace,
        grad_out: &[f64],
        grads: &mut TextEncoder,
    ) {
        let d_pooled = self.mlp.backward(trace, grad_out, &mut grads.mlp);
        let n = tokens.len() as f64;
        for &t in tokens {
            let row = &mut grads.table[t * self.token_dim..(t + 1) * self.token_dim];
            row.iter_mut().zip(&d_pooled).for_each(|(g, d)| *g += d / n);
        }
    }
}

impl ParamSet for TextEncoder {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.table);
        self.mlp.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.table);
        self.mlp.visit_mut(f);
    }
}

/// Weights of both encoders. The temperature is a fixed hyperparameter and
/// is not part of the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub visual: Mlp,
    pub text: TextEncoder,
    pub temperature: f64,
}

impl ParamSet for EncoderParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.visual.visit(f);
        self.text.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.visual.visit_mut(f);
        self.text.visit_mut(f);
    }
}

impl EncoderParams {
    /// Seeded uniform initialization.
    pub fn init(arch: &EncoderArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = substream(seed, &[domain::ENCODER_INIT]);
        let visual = Mlp::init(&arch.visual_sizes(), arch.activation, &mut rng);
        let bound = 1.0 / (arch.token_dim as f64).sqrt();
        let table = (0..arch.vocab_size * arch.token_dim)
            .map(|_| rand::Rng::random_range(&mut rng, -bound..bound))
            .collect();
        let mlp = Mlp::init(&arch.text_sizes(), arch.activation, &mut rng);
        Ok(Self {
            visual,
            text: TextEncoder {
                vocab_size: arch.vocab_size,
                token_dim: arch.token_dim,
                table,
                mlp,
            },
            temperature: arch.temperature,
        })
    }

    pub fn arch(&self) -> EncoderArch {
        let vs = self.visual.sizes();
        let ts = self.text.mlp.sizes();
        EncoderArch {
            visual_input: vs[0],
            visual_hidden: vs[1..vs.len() - 1].to_vec(),
            vocab_size: self.text.vocab_size,
            token_dim: self.text.token_dim,
            text_hidden: ts[1..ts.len() - 1].to_vec(),
            dim: self.dim(),
            temperature: self.temperature,
            activation: self.visual.activation,
        }
    }

    pub fn dim(&self) -> usize {
        self.visual.output_dim()
    }

    fn check_observation(&self, o: &[f64]) -> Result<()> {
        if o.len() != self.visual.input_dim() {
            return Err(Error::Dimension(format!(
                "observation has {} entries, visual encoder expects {}",
                o.len(),
                self.visual.input_dim()
            )));
        }
        Ok(())
    }
}

/// Input to one of the two encoders.
#[derive(Debug, Clone, Copy)]
pub enum EncoderInput<'a> {
    Observation(&'a [f64]),
    Tokens(&'a [usize]),
}

pub fn encoder_forward(params: &EncoderParams, input: EncoderInput<'_>) -> Result<Embedding> {
    match input {
        EncoderInput::Observation(o) => {
            params.check_observation(o)?;
            Embedding::new(params.visual.forward(o), Modality::Visual)
        }
        EncoderInput::Tokens(t) => Embedding::new(params.text.forward(t)?, Modality::Text),
    }
}

/// `phi_V(o_end) - phi_V(o_start)`.
pub fn frame_difference_embedding(
    params: &EncoderParams,
    o_start: &[f64],
    o_end: &[f64],
) -> Result<Embedding> {
    params.check_observation(o_start)?;
    params.check_observation(o_end)?;
    let a = params.visual.forward(o_start);
    let b = params.visual.forward(o_end);
    Embedding::new(
        b.iter().zip(&a).map(|(x, y)| x - y).collect(),
        Modality::Visual,
    )
}

/// One `(o_start, o_end, text)` training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub o_start: Vec<f64>,
    pub o_end: Vec<f64>,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairBatch {
    pub rows: Vec<Pair>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// InfoNCE loss for a similarity matrix `sim[j][i] = S(visual_j, text_i)`.
pub fn infonce_from_similarity(sim: &[Vec<f64>], temperature: f64) -> f64 {
    let b = sim.len();
    let mut total = 0.0;
    for i in 0..b {
        let logits: Vec<f64> = (0..b).map(|j| sim[j][i] / temperature).collect();
        total += log_sum_exp(&logits) - logits[i];
    }
    total / b as f64
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct Forward {
    u: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    start_traces: Vec<MlpTrace>,
    end_traces: Vec<MlpTrace>,
    text_traces: Vec<MlpTrace>,
}

fn forward_batch(params: &EncoderParams, batch: &PairBatch) -> Result<Forward> {
    let mut f = Forward {
        u: Vec::with_capacity(batch.len()),
        w: Vec::with_capacity(batch.len()),
        start_traces: Vec::with_capacity(batch.len()),
        end_traces: Vec::with_capacity(batch.len()),
        text_traces: Vec::with_capacity(batch.len()),
    };
    for (r, pair) in batch.rows.iter().enumerate() {
        params.check_observation(&pair.o_start)?;
        params.check_observation(&pair.o_end)?;
        let (a, ta) = params.visual.forward_trace(&pair.o_start);
        let (b, tb) = params.visual.forward_trace(&pair.o_end);
        let u: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        let (w, tw) = params
            .text
            .mlp
            .forward_trace(&params.text.pool(&pair.tokens)?);
        if l2_norm(&u) == 0.0 {
            return Err(Error::DegenerateVector(format!(
                "row {r}: zero frame-difference embedding"
            )));
        }
        if l2_norm(&w) == 0.0 {
            return Err(Error::DegenerateVector(format!(
                "row {r}: zero text embedding"
            )));
        }
        f.u.push(u);
        f.w.push(w);
        f.start_traces.push(ta);
        f.end_traces.push(tb);
        f.text_traces.push(tw);
    }
    Ok(f)
}

fn similarity(u: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let nu: Vec<f64> = u.iter().map(|v| l2_norm(v)).collect();
    let nw: Vec<f64> = w.iter().map(|v| l2_norm(v)).collect();
    u.iter()
        .zip(&nu)
        .map(|(uj, nj)| {
            w.iter()
                .zip(&nw)
                .map(|(wi, ni)| dot(uj, wi) / (nj * ni))
                .collect()
        })
        .collect()
}

pub fn infonce_loss(params: &EncoderParams, batch: &PairBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Parameter("InfoNCE needs at least one pair".into()));
    }
    let f = forward_batch(params, batch)?;
    Ok(infonce_from_similarity(
        &similarity(&f.u, &f.w),
        params.temperature,
    ))
}

/// Loss and its analytic gradient with respect to every encoder parameter.
pub fn infonce_gradient(params: &EncoderParams, batch: &PairBatch) -> Result<(f64, EncoderParams)> {
    if batch.is_empty() {
        return Err(Error::Parameter("InfoNCE needs at least one pair".into()));
    }
    let b = batch.len();
    let tau = params.temperature;
    let f = forward_batch(params, batch)?;
    let sim = similarity(&f.u, &f.w);
    let loss = infonce_from_similarity(&sim, tau);

    // dL/dS[j][i] = (softmax_j(S[.][i]/tau) - [j == i]) / (B tau)
    let mut d_sim = vec![vec![0.0; b]; b];
    for i in 0..b {
        let logits: Vec<f64> = (0..b).map(|j| sim[j][i] / tau).collect();
        let lse = log_sum_exp(&logits);
        for j in 0..b {
            let p = (logits[j] - lse).exp();
            d_sim[j][i] = (p - if i == j { 1.0 } else { 0.0 }) / (b as f64 * tau);
        }
    }

    let dim = params.dim();
    let nu: Vec<f64> = f.u.iter().map(|v| l2_norm(v)).collect();
    let nw: Vec<f64> = f.w.iter().map(|v| l2_norm(v)).collect();
    let mut d_u = vec![vec![0.0; dim]; b];
    let mut d_w = vec![vec![0.0; dim]; b];
    for j in 0..b {
        for i in 0..b {
            let g = d_sim[j][i];
            if g == 0.0 {
                continue;
            }
            let s = sim[j][i];
            let inv = 1.0 / (nu[j] * nw[i]);
            let su = s / (nu[j] * nu[j]);
            let sw = s / (nw[i] * nw[i]);
            for k in 0..dim {
                d_u[j][k] += g * (f.w[i][k] * inv - su * f.u[j][k]);
                d_w[i][k] += g * (f.u[j][k] * inv - sw * f.w[i][k]);
            }
        }
    }

    let mut grads = params.zeros_like();
    for (r, pair) in batch.rows.iter().enumerate() {
        params
            .visual
            .backward(&f.end_traces[r], &d_u[r], &mut grads.visual);
        let neg: Vec<f64> = d_u[r].iter().map(|x| -x).collect();
        params
            .visual
            .backward(&f.start_traces[r], &neg, &mut grads.visual);
        params
            .text
            .backward(&pair.tokens, &f.text_traces[r], &d_w[r], &mut grads.text);
    }
    Ok((loss, grads))
}

/// Components whose analytic and numeric gradients are both below this are
/// compared in absolute terms. Central differences of an O(1) loss carry
/// rounding noise near `1e-16 / epsilon`, and some components (the visual
/// output bias, which cancels in a frame difference) are exactly zero.
pub const FD_DENOMINATOR_FLOOR: f64 = 1e-6;

/// Largest relative error between the analytic gradient and central
/// differences, with denominator `max(|analytic|, |numeric|, FD_DENOMINATOR_FLOOR)`.
pub fn finite_difference_check(
    params: &EncoderParams,
    batch: &PairBatch,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Parameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let (_, grads) = infonce_gradient(params, batch)?;
    let analytic = grads.to_flat();
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + epsilon;
        probe.set_from_flat(&p);
        let plus = infonce_loss(&probe, batch)?;
        p[i] = base[i] - epsilon;
        probe.set_from_flat(&p);
        let minus = infonce_loss(&probe, batch)?;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let denom = a.abs().max(numeric.abs()).max(FD_DENOMINATOR_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Source of training batches.
pub trait PairSource {
    fn sample_batch(&self, batch_size: usize, rng: &mut Rng) -> Result<PairBatch>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub seed: u64,
    /// After this many steps the text tower stops updating.
    #[serde(default)]
    pub freeze_text_after: Option<usize>,
    /// Rescale the gradient when its global norm exceeds this value.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

fn default_momentum() -> f64 {
    0.9
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            freeze_text_after: None,
            max_grad_norm: Some(5.0),
        }
    }
}

impl EncoderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EncoderTraining {
    pub params: EncoderParams,
    /// Batch loss before each update.
    pub loss_trace: Vec<f64>,
}

/// Initializes from `train.seed` and runs SGD with momentum on the InfoNCE loss.
pub fn train_encoders(
    source: &dyn PairSource,
    arch: &EncoderArch,
    train: &EncoderTrainConfig,
) -> Result<EncoderTraining> {
    let init = EncoderParams::init(arch, train.seed)?;
    train_encoders_from(source, init, train)
}

pub fn train_encoders_from(
    source: &dyn PairSource,
    mut params: EncoderParams,
    train: &EncoderTrainConfig,
) -> Result<EncoderTraining> {
    train.validate()?;
    let mut visual_opt = Sgd::new(&params.visual, train.learning_rate, train.momentum);
    let mut text_opt = Sgd::new(&params.text, train.learning_rate, train.momentum);
    let mut loss_trace = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let mut rng = substream(train.seed, &[domain::ENCODER_BATCH, step as u64]);
        let batch = source.sample_batch(train.batch_size, &mut rng)?;
        let (loss, mut grads) = infonce_gradient(&params, &batch)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence { step });
        }
        if let Some(max) = train.max_grad_norm {
            let norm = grads.norm_sq().sqrt();
            if norm > max {
                grads.scale(max / norm);
            }
        }
        loss_trace.push(loss);
        visual_opt.step(&mut params.visual, &grads.visual);
        if train.freeze_text_after.is_none_or(|s| step < s) {
            text_opt.step(&mut params.text, &grads.text);
        }
        if !params.all_finite() {
            return Err(Error::Divergence { step });
        }
    }
    Ok(EncoderTraining { params, loss_trace })
}

pub const PARAMS_MAGIC: &[u8; 4] = b"EPRM";
pub const PARAMS_VERSION: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsHeader {
    arch: EncoderArch,
    visual_sizes: Vec<usize>,
    text_sizes: Vec<usize>,
    num_params: usize,
    seed: Option<u64>,
    train: Option<EncoderTrainConfig>,
}

/// Encodes parameters as `EPRM`, version byte, `u32` LE JSON metadata length,
/// JSON metadata, then every parameter as LE `f32` in declaration order.
pub fn encode_params(params: &EncoderParams, train: Option<&EncoderTrainConfig>) -> Vec<u8> {
    let header = ParamsHeader {
        arch: params.arch(),
        visual_sizes: params.visual.sizes(),
        text_sizes: params.text.mlp.sizes(),
        num_params: params.num_params(),
        seed: train.map(|t| t.seed),
        train: train.cloned(),
    };
    let meta = serde_json::to_vec(&header).expect("metadata serializes");
    let mut out = Vec::with_capacity(9 + meta.len() + 4 * header.num_params);
    out.extend_from_slice(PARAMS_MAGIC);
    out.push(PARAMS_VERSION);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    params.visit(&mut |s| {
        for &x in s {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    });
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<EncoderParams> {
    let bad = |m: &str| Error::Parameter(format!("bad EPRM file: {m}"));
    if bytes.len() < 9 || &bytes[..4] != PARAMS_MAGIC {
        return Err(bad("missing magic"));
    }
    if bytes[4] != PARAMS_VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[4])));
    }
    let meta_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let meta = bytes
        .get(9..9 + meta_len)
        .ok_or_else(|| bad("truncated metadata"))?;
    let header: ParamsHeader =
        serde_json::from_slice(meta).map_err(|e| bad(&format!("metadata: {e}")))?;
    let mut params = EncoderParams::init(&header.arch, 0)?;
    if params.num_params() != header.num_params
        || params.visual.sizes() != header.visual_sizes
        || params.text.mlp.sizes() != header.text_sizes
    {
        return Err(bad("metadata shapes are inconsistent"));
    }
    let payload = &bytes[9 + meta_len..];
    if payload.len() != 4 * header.num_params {
        return Err(bad(&format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            4 * header.num_params
        )));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(bad("non-finite parameter"));
    }
    params.set_from_flat(&flat);
    Ok(params)
}

pub fn save_params(
    params: &EncoderParams,
    train: Option<&EncoderTrainConfig>,
    path: &Path,
) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_params(params, train))
        .map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<EncoderParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_params(&bytes)
}
