//! EEND-EDA network.
//!
//! Frames are rows: an embedding sequence is a `T × D` matrix, attention
//! weights are `T × T` per head, posteriors are `C × T`.

mod checkpoint;
mod stitch;

pub use checkpoint::{CHECKPOINT_KIND, CHECKPOINT_VERSION};
pub use stitch::{chunk_and_stitch, stitch_chunks, ChunkOutput};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{lstm_cell_gates, zero_state, LstmParams, Ops, ParamId, ParamStore, Tensor};

/// Recorded in checkpoints so the initialization is reproducible.
pub const INIT_SCHEME: &str = "xavier_uniform lstm_forget_bias=1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub input_dim: usize,
    pub n_speakers: usize,
    pub chunk_len: usize,
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 256,
            n_heads: 4,
            ff_dim: 1024,
            input_dim: crate::frontend::FEAT_DIM,
            n_speakers: 2,
            chunk_len: 500,
            positional_encoding: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ff_dim", self.ff_dim),
            ("input_dim", self.input_dim),
            ("n_speakers", self.n_speakers),
            ("chunk_len", self.chunk_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    norm1: Norm,
    ff1: Linear,
    ff2: Linear,
    norm2: Norm,
}

#[derive(Debug, Clone)]
struct ParamIds {
    input: Linear,
    input_norm: Norm,
    layers: Vec<EncoderLayer>,
    eda_enc: LstmParams,
    eda_dec: LstmParams,
    exist: Linear,
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutput<V> {
    /// `E_1 … E_N`, each `T × D`.
    pub embeddings: Vec<V>,
    /// `attention[layer][head]`, each `T × T`; empty unless requested.
    pub attention: Vec<Vec<V>>,
    pub attractors: Attractors<V>,
    /// `C × T`.
    pub posteriors: V,
}

/// `C + 1` decoder outputs; the last one only feeds the existence loss.
#[derive(Debug, Clone)]
pub struct Attractors<V> {
    /// `(C + 1) × D`.
    pub vectors: V,
    /// `(C + 1) × 1`.
    pub exist_logits: V,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub init_seed: u64,
    ids: ParamIds,
}

// `ids` is a pure function of the config.
impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.init_seed == other.init_seed
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("xavier shape")
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let w = xavier(self.rng, fan_in, fan_out, fan_in, fan_out);
        Linear {
            w: self.store.insert(format!("{name}.w"), w),
            b: self.store.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out])),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gamma: self.store.insert(format!("{name}.gamma"), Tensor::full(&[1, d], 1.0)),
            beta: self.store.insert(format!("{name}.beta"), Tensor::zeros(&[1, d])),
        }
    }

    fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> LstmParams {
        let w_ih = xavier(self.rng, input, 4 * hidden, input, 4 * hidden);
        let w_hh = xavier(self.rng, hidden, 4 * hidden, hidden, 4 * hidden);
        let mut bias = Tensor::zeros(&[1, 4 * hidden]);
        for v in &mut bias.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        LstmParams {
            w_ih: self.store.insert(format!("{name}.w_ih"), w_ih),
            w_hh: self.store.insert(format!("{name}.w_hh"), w_hh),
            bias: self.store.insert(format!("{name}.bias"), bias),
        }
    }
}

fn build(cfg: &ModelConfig, seed: u64) -> (ParamStore, ParamIds) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        store: ParamStore::new(),
        rng: &mut rng,
    };
    let d = cfg.d_model;
    let input = b.linear("input", cfg.input_dim, d);
    let input_norm = b.norm("input.norm", d);
    let layers = (0..cfg.n_layers)
        .map(|l| EncoderLayer {
            q: b.linear(&format!("enc{l}.att.q"), d, d),
            k: b.linear(&format!("enc{l}.att.k"), d, d),
            v: b.linear(&format!("enc{l}.att.v"), d, d),
            out: b.linear(&format!("enc{l}.att.out"), d, d),
            norm1: b.norm(&format!("enc{l}.norm1"), d),
            ff1: b.linear(&format!("enc{l}.ff1"), d, cfg.ff_dim),
            ff2: b.linear(&format!("enc{l}.ff2"), cfg.ff_dim, d),
            norm2: b.norm(&format!("enc{l}.norm2"), d),
        })
        .collect();
    let eda_enc = b.lstm("eda.enc", d, d);
    let eda_dec = b.lstm("eda.dec", d, d);
    let exist = b.linear("eda.exist", d, 1);
    let ids = ParamIds {
        input,
        input_norm,
        layers,
        eda_enc,
        eda_dec,
        exist,
    };
    (b.store, ids)
}

fn linear<O: Ops>(o: &mut O, s: &ParamStore, l: Linear, x: &O::V) -> Result<O::V> {
    let w = o.param(s, l.w);
    let b = o.param(s, l.b);
    let y = o.matmul(x, &w)?;
    o.add_row(&y, &b)
}

fn norm<O: Ops>(o: &mut O, s: &ParamStore, n: Norm, x: &O::V) -> Result<O::V> {
    let g = o.param(s, n.gamma);
    let b = o.param(s, n.beta);
    o.layer_norm(x, &g, &b)
}

/// Sinusoidal position table, `T × D`.
pub fn positional_table(t: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[t, d]);
    for pos in 0..t {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * rate;
            pe.set(pos, i, if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    pe
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, ids) = build(&config, seed);
        Ok(Self {
            config,
            params,
            init_seed: seed,
            ids,
        })
    }

    fn ids(&self) -> &ParamIds {
        &self.ids
    }

    /// Multi-head scaled dot-product self-attention of layer `layer` on
    /// `e` (`T × D`). Returns the projected output and each head's weights.
    pub fn mhsa<O: Ops>(
        &self,
        o: &mut O,
        params: &ParamStore,
        layer: usize,
        e: &O::V,
    ) -> Result<(O::V, Vec<O::V>)> {
        let lp = self.ids().layers[layer];
        let q = linear(o, params, lp.q, e)?;
        let k = linear(o, params, lp.k, e)?;
        let v = linear(o, params, lp.v, e)?;
        let dh = self.config.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.n_heads);
        let mut weights = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let qh = o.slice_cols(&q, h * dh, dh)?;
            let kh = o.slice_cols(&k, h * dh, dh)?;
            let vh = o.slice_cols(&v, h * dh, dh)?;
            let logits = o.matmul_bt(&qh, &kh)?;
            let logits = o.scale(&logits, inv_sqrt);
            let w = o.softmax_rows(&logits)?;
            heads.push(o.matmul(&w, &vh)?);
            weights.push(w);
        }
        let cat = o.concat_cols(&heads)?;
        let out = linear(o, params, lp.out, &cat)?;
        Ok((out, weights))
    }

    /// Input projection followed by the encoder stack. `x` is `T × input_dim`.
    pub fn encoder_forward<O: Ops>(
        &self,
        o: &mut O,
        params: &ParamStore,
        x: &Tensor,
        record_attention: bool,
    ) -> Result<(Vec<O::V>, Vec<Vec<O::V>>)> {
        let cfg = &self.config;
        if x.shape().len() != 2 || x.cols() != cfg.input_dim {
            return Err(Error::dim(
                "encoder_forward",
                format!("input {:?}, expected T x {}", x.shape(), cfg.input_dim),
            ));
        }
        if x.rows() == 0 || x.rows() > cfg.chunk_len {
            return Err(Error::dim(
                "encoder_forward",
                format!("chunk of {} frames, allowed 1..={}", x.rows(), cfg.chunk_len),
            ));
        }
        let ids = self.ids();
        let xv = o.constant(x.clone());
        let h = linear(o, params, ids.input, &xv)?;
        let mut e = norm(o, params, ids.input_norm, &h)?;
        if cfg.positional_encoding {
            let pe = o.constant(positional_table(x.rows(), cfg.d_model));
            e = o.add(&e, &pe)?;
        }
        let mut embeddings = Vec::with_capacity(cfg.n_layers);
        let mut attention = Vec::new();
        for l in 0..cfg.n_layers {
            let lp = ids.layers[l];
            let (att, weights) = self.mhsa(o, params, l, &e)?;
            let r = o.add(&e, &att)?;
            let e1 = norm(o, params, lp.norm1, &r)?;
            let f = linear(o, params, lp.ff1, &e1)?;
            let f = o.relu(&f);
            let f = linear(o, params, lp.ff2, &f)?;
            let r = o.add(&e1, &f)?;
            e = norm(o, params, lp.norm2, &r)?;
            if !o.value(&e).is_finite() {
                return Err(Error::NonFinite(format!("encoder layer {} output", l + 1)));
            }
            if record_attention {
                attention.push(weights);
            }
            embeddings.push(e.clone());
        }
        Ok((embeddings, attention))
    }

    /// Encoder LSTM over the frames of `e_n` from a zero state, then `C + 1`
    /// decoder steps on zero input starting from the encoder's final state.
    pub fn eda<O: Ops>(&self, o: &mut O, params: &ParamStore, e_n: &O::V) -> Result<Attractors<O::V>> {
        let ids = self.ids();
        let d = self.config.d_model;
        let t = o.value(e_n).rows();
        if t == 0 {
            return Err(Error::Input("attractor encoder needs at least one frame".into()));
        }
        let enc = ids.eda_enc.load(o, params);
        let x_gates = o.matmul(e_n, &enc.w_ih)?;
        let mut h = o.constant(zero_state(d));
        let mut c = o.constant(zero_state(d));
        for step in 0..t {
            let xg = o.slice_rows(&x_gates, step, 1)?;
            (h, c) = lstm_cell_gates(o, &enc, &h, &c, Some(&xg))?;
        }
        let dec = ids.eda_dec.load(o, params);
        let mut outs = Vec::with_capacity(self.config.n_speakers + 1);
        for _ in 0..=self.config.n_speakers {
            (h, c) = lstm_cell_gates(o, &dec, &h, &c, None)?;
            outs.push(h.clone());
        }
        let vectors = o.concat_rows(&outs)?;
        let exist_logits = linear(o, params, ids.exist, &vectors)?;
        Ok(Attractors {
            vectors,
            exist_logits,
        })
    }

    /// `sigmoid(A_C · E_Nᵀ)` using the first `C` attractors; `C × T`.
    pub fn posteriors<O: Ops>(&self, o: &mut O, att: &Attractors<O::V>, e_n: &O::V) -> Result<O::V> {
        let a = o.slice_rows(&att.vectors, 0, self.config.n_speakers)?;
        let logits = o.matmul_bt(&a, e_n)?;
        Ok(o.sigmoid(&logits))
    }

    /// Full forward pass on one chunk using `params` (normally `self.params`;
    /// the gradient checker passes perturbed copies).
    pub fn forward_with<O: Ops>(
        &self,
        o: &mut O,
        params: &ParamStore,
        x: &Tensor,
        record_attention: bool,
    ) -> Result<ForwardOutput<O::V>> {
        let (embeddings, attention) = self.encoder_forward(o, params, x, record_attention)?;
        let e_n = embeddings.last().expect("n_layers >= 1").clone();
        let attractors = self.eda(o, params, &e_n)?;
        let posteriors = self.posteriors(o, &attractors, &e_n)?;
        if !o.value(&posteriors).is_finite() {
            return Err(Error::NonFinite("posteriors".into()));
        }
        Ok(ForwardOutput {
            embeddings,
            attention,
            attractors,
            posteriors,
        })
    }

    pub fn forward<O: Ops>(&self, o: &mut O, x: &Tensor, record_attention: bool) -> Result<ForwardOutput<O::V>> {
        self.forward_with(o, &self.params, x, record_attention)
    }
}
