//! Tiny trainable masked LM used by the test suite and desk-scale runs.
//!
//! Architecture, with `d = hidden_dim` and tied input/output embeddings `E`:
//!
//! ```text
//! x_j  = E[t_j] + P[j]
//! a    = softmax_j( x_m · (K x_j) / sqrt(d) )        single-head attention from the mask
//! c    = Σ_j a_j x_j
//! h    = tanh(C c + S x_m + b)                         mixing layer, h is the mask representation
//! p(w) = softmax(E tanh(W1 h + b1))                    MLM head
//! ```
//!
//! Gradients are written by hand and evaluated generically over
//! [`Scalar`]; running them on [`Dual`] numbers gives exact Hessian-vector
//! products.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use serde_json::json;

use super::{load_checkpoint, save_checkpoint, Backend, BackendSpec, Checkpoint, Objective, TrainExample};
use crate::dual::{softmax, Dual, Scalar};
use crate::error::{Error, Result};
use crate::params::{ParamSet, Tensor};
use crate::prompting::{MlmHead, PromptedInput, Tokenizer, WordVocab};
use crate::training::objective_word_grad;

pub const TOKENS: &str = "embed.tokens";
pub const POSITIONS: &str = "embed.positions";
pub const KEY: &str = "mix.key";
pub const CONTEXT: &str = "mix.context";
pub const SELF: &str = "mix.self";
pub const BIAS: &str = "mix.bias";
pub const HEAD_W1: &str = "head.w1";
pub const HEAD_B1: &str = "head.b1";

const HEAD_PARAMS: [&str; 2] = [HEAD_W1, HEAD_B1];

#[derive(Debug, Clone, PartialEq)]
pub struct TinyConfig {
    pub hidden_dim: usize,
    pub max_seq_len: usize,
    /// Keep `head.w1`/`head.b1` fixed during training. `E` is tied to the
    /// input embedding and stays trainable.
    pub freeze_head: bool,
    pub embed_std: f64,
}

impl Default for TinyConfig {
    fn default() -> Self {
        TinyConfig { hidden_dim: 32, max_seq_len: 128, freeze_head: false, embed_std: 0.3 }
    }
}

#[derive(Debug, Clone)]
pub struct TinyBackend {
    spec: BackendSpec,
    vocab: WordVocab,
    config: TinyConfig,
}

impl TinyBackend {
    pub fn new(vocab: WordVocab, config: TinyConfig) -> Result<Self> {
        let spec = BackendSpec {
            vocab_size: vocab.len(),
            hidden_dim: config.hidden_dim,
            max_seq_len: config.max_seq_len,
            mask_token_id: vocab.mask_token_id(),
        };
        spec.validate()?;
        Ok(TinyBackend { spec, vocab, config })
    }

    pub fn vocab(&self) -> &WordVocab {
        &self.vocab
    }

    pub fn config(&self) -> &TinyConfig {
        &self.config
    }

    /// Saves `params` with this backend's configuration and vocabulary.
    pub fn save(&self, dir: &Path, params: &ParamSet) -> Result<()> {
        self.check_params(params)?;
        let mut config = BTreeMap::new();
        config.insert("vocab_size".to_string(), json!(self.spec.vocab_size));
        config.insert("hidden_dim".to_string(), json!(self.spec.hidden_dim));
        config.insert("max_seq_len".to_string(), json!(self.spec.max_seq_len));
        config.insert("mask_token_id".to_string(), json!(self.spec.mask_token_id));
        config.insert("freeze_head".to_string(), json!(self.config.freeze_head));
        config.insert("embed_std".to_string(), json!(self.config.embed_std));
        let ckpt = Checkpoint { backend: "tiny".to_string(), config, params: params.clone() };
        save_checkpoint(dir, &ckpt)?;
        std::fs::write(dir.join("vocab.txt"), self.vocab.to_text())?;
        Ok(())
    }

    /// Restores a backend and its parameters from [`TinyBackend::save`] output.
    pub fn load(dir: &Path) -> Result<(Self, ParamSet)> {
        let ckpt = load_checkpoint(dir)?;
        if ckpt.backend != "tiny" {
            return Err(Error::Checkpoint(format!("expected a tiny checkpoint, found `{}`", ckpt.backend)));
        }
        let vocab = WordVocab::from_text(&std::fs::read_to_string(dir.join("vocab.txt"))?)?;
        let num = |key: &str| -> Result<u64> {
            ckpt.config
                .get(key)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::Checkpoint(format!("manifest lacks `{key}`")))
        };
        let config = TinyConfig {
            hidden_dim: num("hidden_dim")? as usize,
            max_seq_len: num("max_seq_len")? as usize,
            freeze_head: ckpt.config.get("freeze_head").and_then(|v| v.as_bool()).unwrap_or(false),
            embed_std: ckpt.config.get("embed_std").and_then(|v| v.as_f64()).unwrap_or(0.3),
        };
        if num("vocab_size")? as usize != vocab.len() {
            return Err(Error::Checkpoint("vocab.txt does not match manifest vocab_size".into()));
        }
        let backend = TinyBackend::new(vocab, config)?;
        backend.check_params(&ckpt.params)?;
        Ok((backend, ckpt.params))
    }

    fn shapes(&self) -> [(&'static str, Vec<usize>); 8] {
        let (v, d, l) = (self.spec.vocab_size, self.spec.hidden_dim, self.spec.max_seq_len);
        [
            (TOKENS, vec![v, d]),
            (POSITIONS, vec![l, d]),
            (KEY, vec![d, d]),
            (CONTEXT, vec![d, d]),
            (SELF, vec![d, d]),
            (BIAS, vec![d]),
            (HEAD_W1, vec![d, d]),
            (HEAD_B1, vec![d]),
        ]
    }

    fn check_params(&self, params: &ParamSet) -> Result<()> {
        if params.len() != 8 {
            return Err(Error::DimensionMismatch(format!("expected 8 parameter arrays, got {}", params.len())));
        }
        for (name, shape) in self.shapes() {
            let t = params
                .get(name)
                .ok_or_else(|| Error::DimensionMismatch(format!("missing parameter `{name}`")))?;
            if t.shape != shape {
                return Err(Error::DimensionMismatch(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape)));
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &PromptedInput) -> Result<()> {
        let n = input.token_ids.len();
        if n > self.spec.max_seq_len {
            return Err(Error::SequenceTooLong { len: n, max: self.spec.max_seq_len });
        }
        if input.mask_position >= n {
            return Err(Error::DimensionMismatch(format!("mask position {} outside {n} tokens", input.mask_position)));
        }
        if let Some(t) = input.token_ids.iter().find(|&&t| t as usize >= self.spec.vocab_size) {
            return Err(Error::DimensionMismatch(format!("token id {t} outside vocabulary")));
        }
        Ok(())
    }

    fn check_batch(&self, params: &ParamSet, batch: &[TrainExample], objective: &Objective<'_>) -> Result<()> {
        self.check_params(params)?;
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty training batch".into()));
        }
        for ex in batch {
            self.check_input(&ex.input)?;
            if ex.target.len() != objective.verbalizer.num_labels() {
                return Err(Error::DimensionMismatch(format!(
                    "target has {} entries for {} labels",
                    ex.target.len(),
                    objective.verbalizer.num_labels()
                )));
            }
        }
        Ok(())
    }

    fn dims(&self) -> Dims {
        Dims { d: self.spec.hidden_dim }
    }

    fn run<T: Scalar>(
        &self,
        w: &Weights<T>,
        batch: &[TrainExample],
        objective: &Objective<'_>,
    ) -> Result<(T, Weights<T>)> {
        let dims = self.dims();
        let mut grads = Weights::zeros_like(w);
        let mut loss = T::zero();
        let k = 1.0 / batch.len() as f64;
        for ex in batch {
            let trace = forward(w, &ex.input.token_ids, ex.input.mask_position, dims);
            let (l, word_grad) = objective_word_grad(&trace.pw, objective.verbalizer, &ex.target, objective.direction)?;
            loss += l.scale(k);
            backward(w, &trace, &ex.input.token_ids, ex.input.mask_position, &word_grad, k, dims, &mut grads);
        }
        Ok((loss, grads))
    }
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    d: usize,
}

/// Flat copies of every parameter array, in the scalar type being evaluated.
#[derive(Debug, Clone)]
struct Weights<T> {
    tokens: Vec<T>,
    positions: Vec<T>,
    key: Vec<T>,
    context: Vec<T>,
    self_w: Vec<T>,
    bias: Vec<T>,
    w1: Vec<T>,
    b1: Vec<T>,
}

impl<T: Scalar> Weights<T> {
    fn from_params(params: &ParamSet, lift: impl Fn(&str, usize, f64) -> T) -> Result<Self> {
        let get = |name: &str| -> Result<Vec<T>> {
            Ok(params.values(name)?.iter().enumerate().map(|(i, &x)| lift(name, i, x)).collect())
        };
        Ok(Weights {
            tokens: get(TOKENS)?,
            positions: get(POSITIONS)?,
            key: get(KEY)?,
            context: get(CONTEXT)?,
            self_w: get(SELF)?,
            bias: get(BIAS)?,
            w1: get(HEAD_W1)?,
            b1: get(HEAD_B1)?,
        })
    }

    fn zeros_like(w: &Weights<T>) -> Self {
        let z = |v: &Vec<T>| vec![T::zero(); v.len()];
        Weights {
            tokens: z(&w.tokens),
            positions: z(&w.positions),
            key: z(&w.key),
            context: z(&w.context),
            self_w: z(&w.self_w),
            bias: z(&w.bias),
            w1: z(&w.w1),
            b1: z(&w.b1),
        }
    }

    fn arrays(&self) -> [(&'static str, &Vec<T>); 8] {
        [
            (TOKENS, &self.tokens),
            (POSITIONS, &self.positions),
            (KEY, &self.key),
            (CONTEXT, &self.context),
            (SELF, &self.self_w),
            (BIAS, &self.bias),
            (HEAD_W1, &self.w1),
            (HEAD_B1, &self.b1),
        ]
    }

    fn to_params(&self, like: &ParamSet, part: impl Fn(T) -> f64) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, data) in self.arrays() {
            let shape = like.get(name).expect("checked").shape.clone();
            out.insert(name, Tensor { shape, data: data.iter().map(|&x| part(x)).collect() });
        }
        out
    }
}

struct Trace<T> {
    x: Vec<Vec<T>>,
    kx: Vec<Vec<T>>,
    attn: Vec<T>,
    ctx: Vec<T>,
    h: Vec<T>,
    z: Vec<T>,
    pw: Vec<T>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `m x` for a row-major `d x d` matrix.
fn matvec<T: Scalar>(m: &[T], x: &[T], d: usize) -> Vec<T> {
    m.chunks_exact(d).map(|row| dot(row, x)).collect()
}

/// `mᵀ x` for a row-major `d x d` matrix.
fn matvec_t<T: Scalar>(m: &[T], x: &[T], d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d];
    for (row, &xi) in m.chunks_exact(d).zip(x) {
        for (o, &r) in out.iter_mut().zip(row) {
            *o += r * xi;
        }
    }
    out
}

/// `g += a bᵀ`.
fn outer_acc<T: Scalar>(g: &mut [T], a: &[T], b: &[T]) {
    let d = b.len();
    for (row, &ai) in g.chunks_exact_mut(d).zip(a) {
        for (gij, &bj) in row.iter_mut().zip(b) {
            *gij += ai * bj;
        }
    }
}

/// Token inputs, key projections, attention weights, context and hidden state.
type Encoded<T> = (Vec<Vec<T>>, Vec<Vec<T>>, Vec<T>, Vec<T>, Vec<T>);

fn encode_generic<T: Scalar>(w: &Weights<T>, ids: &[u32], m: usize, d: usize) -> Encoded<T> {
    let x: Vec<Vec<T>> = ids
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let e = &w.tokens[t as usize * d..(t as usize + 1) * d];
            let p = &w.positions[j * d..(j + 1) * d];
            e.iter().zip(p).map(|(&a, &b)| a + b).collect()
        })
        .collect();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let kx: Vec<Vec<T>> = x.iter().map(|xj| matvec(&w.key, xj, d)).collect();
    let scores: Vec<T> = kx.iter().map(|k| dot(&x[m], k).scale(inv_sqrt_d)).collect();
    let attn = softmax(&scores);
    let mut ctx = vec![T::zero(); d];
    for (xj, &a) in x.iter().zip(&attn) {
        for (c, &v) in ctx.iter_mut().zip(xj) {
            *c += a * v;
        }
    }
    let cc = matvec(&w.context, &ctx, d);
    let sx = matvec(&w.self_w, &x[m], d);
    let h: Vec<T> = (0..d).map(|i| (cc[i] + sx[i] + w.bias[i]).tanh()).collect();
    (x, kx, attn, ctx, h)
}

fn head_generic<T: Scalar>(w: &Weights<T>, h: &[T], dims: Dims) -> (Vec<T>, Vec<T>) {
    let d = dims.d;
    let u = matvec(&w.w1, h, d);
    let z: Vec<T> = (0..d).map(|i| (u[i] + w.b1[i]).tanh()).collect();
    let logits: Vec<T> = w.tokens.chunks_exact(d).map(|e| dot(e, &z)).collect();
    (z, softmax(&logits))
}

fn forward<T: Scalar>(w: &Weights<T>, ids: &[u32], m: usize, dims: Dims) -> Trace<T> {
    let (x, kx, attn, ctx, h) = encode_generic(w, ids, m, dims.d);
    let (z, pw) = head_generic(w, &h, dims);
    Trace { x, kx, attn, ctx, h, z, pw }
}

/// Accumulates `k · ∂loss/∂weights` for one example into `g`, given the
/// sparse gradient of the loss with respect to the word distribution.
#[allow(clippy::too_many_arguments)]
fn backward<T: Scalar>(
    w: &Weights<T>,
    tr: &Trace<T>,
    ids: &[u32],
    m: usize,
    word_grad: &[(usize, T)],
    k: f64,
    dims: Dims,
    g: &mut Weights<T>,
) {
    let d = dims.d;
    let one = T::one();

    // Softmax over the vocabulary.
    let mut mean = T::zero();
    for &(id, gw) in word_grad {
        mean += tr.pw[id] * gw;
    }
    let mut dlogits: Vec<T> = tr.pw.iter().map(|&p| -(p * mean).scale(k)).collect();
    for &(id, gw) in word_grad {
        dlogits[id] += (tr.pw[id] * gw).scale(k);
    }

    // logits = E z
    let mut dz = vec![T::zero(); d];
    for ((e, ge), &dl) in w.tokens.chunks_exact(d).zip(g.tokens.chunks_exact_mut(d)).zip(&dlogits) {
        for i in 0..d {
            dz[i] += dl * e[i];
            ge[i] += dl * tr.z[i];
        }
    }

    // z = tanh(W1 h + b1)
    let du: Vec<T> = (0..d).map(|i| dz[i] * (one - tr.z[i] * tr.z[i])).collect();
    outer_acc(&mut g.w1, &du, &tr.h);
    for (b, &x) in g.b1.iter_mut().zip(&du) {
        *b += x;
    }
    let dh = matvec_t(&w.w1, &du, d);

    // h = tanh(C c + S x_m + b)
    let dv: Vec<T> = (0..d).map(|i| dh[i] * (one - tr.h[i] * tr.h[i])).collect();
    outer_acc(&mut g.context, &dv, &tr.ctx);
    outer_acc(&mut g.self_w, &dv, &tr.x[m]);
    for (b, &x) in g.bias.iter_mut().zip(&dv) {
        *b += x;
    }
    let dctx = matvec_t(&w.context, &dv, d);
    let dxm_self = matvec_t(&w.self_w, &dv, d);

    // c = Σ a_j x_j
    let n = ids.len();
    let mut dx: Vec<Vec<T>> = tr.attn.iter().map(|&a| dctx.iter().map(|&c| a * c).collect()).collect();
    let da: Vec<T> = tr.x.iter().map(|xj| dot(&dctx, xj)).collect();
    let mean_da = dot(&tr.attn, &da);
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let ds: Vec<T> = (0..n).map(|j| (tr.attn[j] * (da[j] - mean_da)).scale(inv_sqrt_d)).collect();

    // s_j = x_m · K x_j / sqrt(d)
    let q = matvec_t(&w.key, &tr.x[m], d);
    for j in 0..n {
        for i in 0..d {
            dx[j][i] += ds[j] * q[i];
            dx[m][i] += ds[j] * tr.kx[j][i];
        }
        outer_acc(&mut g.key, &tr.x[m], &tr.x[j].iter().map(|&x| x * ds[j]).collect::<Vec<_>>());
    }
    for i in 0..d {
        dx[m][i] += dxm_self[i];
    }

    // x_j = E[t_j] + P[j]
    for (j, (&t, dxj)) in ids.iter().zip(&dx).enumerate() {
        let t = t as usize;
        for (i, &v) in dxj.iter().enumerate() {
            g.tokens[t * d + i] += v;
            g.positions[j * d + i] += v;
        }
    }
}

impl Backend for TinyBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.vocab
    }

    fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.spec.hidden_dim;
        let embed = Normal::new(0.0, self.config.embed_std).expect("valid std");
        let dense = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
        let mut params = ParamSet::new();
        for (name, shape) in self.shapes() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match name {
                BIAS | HEAD_B1 => vec![0.0; n],
                TOKENS | POSITIONS => (0..n).map(|_| embed.sample(&mut rng)).collect(),
                _ => (0..n).map(|_| dense.sample(&mut rng)).collect(),
            };
            params.insert(name, Tensor { shape, data });
        }
        params
    }

    fn encode(&self, input: &PromptedInput, params: &ParamSet) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_input(input)?;
        let w = Weights::from_params(params, |_, _, x| x)?;
        let (.., h) = encode_generic(&w, &input.token_ids, input.mask_position, self.spec.hidden_dim);
        Ok(h)
    }

    fn word_distribution(&self, h: &[f64], params: &ParamSet) -> Result<Vec<f64>> {
        self.check_params(params)?;
        let head = MlmHead {
            embed: params.values(TOKENS)?,
            w1: params.values(HEAD_W1)?,
            b1: params.values(HEAD_B1)?,
            vocab_size: self.spec.vocab_size,
            hidden: self.spec.hidden_dim,
        };
        crate::prompting::word_distribution(h, &head)
    }

    fn loss_and_grad(
        &self,
        params: &ParamSet,
        batch: &[TrainExample],
        objective: &Objective<'_>,
    ) -> Result<(f64, ParamSet)> {
        self.check_batch(params, batch, objective)?;
        let w = Weights::from_params(params, |_, _, x| x)?;
        let (loss, grads) = self.run(&w, batch, objective)?;
        let mut grad = grads.to_params(params, |x| x);
        if self.config.freeze_head {
            zero_head(&mut grad);
        }
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok((loss, grad))
    }

    fn hessian_vector_product(
        &self,
        params: &ParamSet,
        batch: &[TrainExample],
        objective: &Objective<'_>,
        v: &ParamSet,
    ) -> Result<ParamSet> {
        self.check_batch(params, batch, objective)?;
        params.check_compatible(v)?;
        let frozen = self.config.freeze_head;
        let w = Weights::from_params(params, |name, i, x| {
            let t = if frozen && HEAD_PARAMS.contains(&name) { 0.0 } else { v.values(name).expect("compatible")[i] };
            Dual::new(x, t)
        })?;
        let (_, grads) = self.run(&w, batch, objective)?;
        let mut hv = grads.to_params(params, |x| x.eps);
        if frozen {
            zero_head(&mut hv);
        }
        if !hv.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok(hv)
    }

    fn loss(&self, params: &ParamSet, batch: &[TrainExample], objective: &Objective<'_>) -> Result<f64> {
        self.check_batch(params, batch, objective)?;
        let w = Weights::from_params(params, |_, _, x| x)?;
        let dims = self.dims();
        let mut loss = 0.0;
        for ex in batch {
            let (x, ..) = {
                let tr = forward(&w, &ex.input.token_ids, ex.input.mask_position, dims);
                objective_word_grad(&tr.pw, objective.verbalizer, &ex.target, objective.direction)?
            };
            loss += x;
        }
        let loss = loss / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok(loss)
    }
}

fn zero_head(p: &mut ParamSet) {
    for name in HEAD_PARAMS {
        if let Some(t) = p.get_mut(name) {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}
