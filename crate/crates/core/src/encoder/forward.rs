use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::params::EncoderParams;
use super::{EncoderError, ModelConfig, ModelInput};
use crate::engine::{head_cols, sparse_attention};
use crate::hpe::{encode_positions, EncodingConfig};
use crate::mask::AttnMask;
use crate::Real;

pub(super) struct LnCache<T> {
    pub xhat: Array2<T>,
    pub rstd: Array1<T>,
}

pub(super) fn layer_norm<T: Real>(
    x: &Array2<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
    eps: f64,
) -> (Array2<T>, LnCache<T>) {
    let d = T::lit(x.ncols() as f64);
    let eps = T::lit(eps);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *r = T::one() / (var + eps).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * gamma + beta;
    (y, LnCache { xhat, rstd })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub(super) fn gelu<T: Real>(x: T) -> T {
    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub(super) fn gelu_grad<T: Real>(x: T) -> T {
    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

pub(super) struct LayerCache<T> {
    pub ln1: LnCache<T>,
    pub h1: Array2<T>,
    pub q: Array2<T>,
    pub k: Array2<T>,
    pub v: Array2<T>,
    /// Per head, the softmax weight of every mask edge.
    pub probs: Vec<Vec<T>>,
    pub attn: Array2<T>,
    pub drop1: Option<Array2<T>>,
    pub ln2: LnCache<T>,
    pub h2: Array2<T>,
    pub f1: Array2<T>,
    pub g: Array2<T>,
    pub drop2: Option<Array2<T>>,
    pub out: Array2<T>,
}

/// Activations of one packed forward pass, kept for the backward pass.
pub struct ForwardCache<T> {
    pub(super) ids: Vec<u32>,
    pub(super) mask: AttnMask,
    pub(super) offsets: Vec<usize>,
    pub(super) scale: T,
    pub(super) layers: Vec<LayerCache<T>>,
    pub(super) head_ln: LnCache<T>,
    pub(super) z: Array2<T>,
    pub(super) logits: Array2<T>,
}

impl<T: Real> ForwardCache<T> {
    /// `batch x n_classes` logits.
    pub fn logits(&self) -> &Array2<T> {
        &self.logits
    }

    pub fn batch_size(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Token representations of sample `b` after block `layer` (0-based).
    pub fn hidden(&self, layer: usize, b: usize) -> ndarray::ArrayView2<'_, T> {
        self.layers[layer].out.slice(s![self.offsets[b]..self.offsets[b + 1], ..])
    }

    /// Concatenated head outputs of block `layer` for sample `b`, before `W_O`.
    pub fn attention(&self, layer: usize, b: usize) -> ndarray::ArrayView2<'_, T> {
        self.layers[layer].attn.slice(s![self.offsets[b]..self.offsets[b + 1], ..])
    }
}

pub struct Forward<T> {
    pub logits: Vec<T>,
    pub cache: ForwardCache<T>,
}

/// Single-sample inference pass (dropout off).
pub fn forward<T: Real>(params: &EncoderParams<T>, cfg: &ModelConfig, input: &ModelInput) -> Result<Forward<T>, EncoderError> {
    let cache = forward_batch(params, cfg, &[input], None::<&mut rand_chacha::ChaCha8Rng>)?;
    Ok(Forward { logits: cache.logits.row(0).to_vec(), cache })
}

fn dropout_mask<T: Real>(rng: &mut impl Rng, shape: (usize, usize), rate: f64) -> Array2<T> {
    let keep = T::lit(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < rate { T::zero() } else { keep })
}

fn embed_inputs<T: Real>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    inputs: &[&ModelInput],
) -> Result<(Array2<T>, Vec<u32>, Vec<usize>), EncoderError> {
    let mut offsets = vec![0];
    for inp in inputs {
        if inp.mask.n() != inp.ids.len() {
            return Err(EncoderError::MaskLength { mask: inp.mask.n(), ids: inp.ids.len() });
        }
        offsets.push(offsets.last().unwrap() + inp.ids.len());
    }
    let ids: Vec<u32> = inputs.iter().flat_map(|i| i.ids.iter().copied()).collect();
    if let Some(pos) = ids.iter().position(|&id| id as usize >= cfg.vocab_size) {
        return Err(EncoderError::IdOutOfVocab { id: ids[pos], pos, vocab: cfg.vocab_size });
    }
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let mut x = params.embed.select(Axis(0), &idx);
    if cfg.pe_enabled {
        for (b, inp) in inputs.iter().enumerate() {
            let pos = inp.positions.as_ref().ok_or(EncoderError::MissingPositions)?;
            let pe: Array2<T> = encode_positions(&pos.flat, &EncodingConfig::new(cfg.d_model, pos.levels)?)?;
            let mut rows = x.slice_mut(s![offsets[b]..offsets[b + 1], ..]);
            if pe.nrows() != rows.nrows() {
                return Err(EncoderError::MaskLength { mask: pe.nrows(), ids: rows.nrows() });
            }
            rows += &pe;
        }
    }
    Ok((x, ids, offsets))
}

fn add_bias<T: Real>(m: &mut Array2<T>, b: &Array1<T>) {
    for mut row in m.rows_mut() {
        row += b;
    }
}

/// Packed forward pass over several samples. Pass an RNG to enable dropout.
pub fn forward_batch<T: Real, R: Rng>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    inputs: &[&ModelInput],
    mut dropout_rng: Option<&mut R>,
) -> Result<ForwardCache<T>, EncoderError> {
    cfg.validate()?;
    let (mut x, ids, offsets) = embed_inputs(params, cfg, inputs)?;
    let mask = AttnMask::block_diagonal(inputs.iter().map(|i| &i.mask));
    let d_k = cfg.d_k();
    let scale = T::one() / T::lit(d_k as f64).sqrt();
    let n = ids.len();
    let use_dropout = cfg.dropout > 0.0 && dropout_rng.is_some();

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for (li, lp) in params.layers.iter().enumerate() {
        let (h1, ln1) = layer_norm(&x, &lp.ln1_gamma, &lp.ln1_beta, cfg.ln_eps);
        let (q, k, v) = (h1.dot(&lp.wq), h1.dot(&lp.wk), h1.dot(&lp.wv));
        let mut attn = Array2::zeros((n, cfg.d_model));
        let mut probs = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let (out, p) =
                sparse_attention(head_cols(&q, h, d_k), head_cols(&k, h, d_k), head_cols(&v, h, d_k), &mask, scale)?;
            attn.slice_mut(s![.., h * d_k..(h + 1) * d_k]).assign(&out);
            probs.push(p);
        }
        let mut branch = attn.dot(&lp.wo);
        let drop1 = match dropout_rng.as_deref_mut() {
            Some(rng) if use_dropout => {
                let m = dropout_mask(rng, branch.dim(), cfg.dropout);
                branch *= &m;
                Some(m)
            }
            _ => None,
        };
        x += &branch;

        let (h2, ln2) = layer_norm(&x, &lp.ln2_gamma, &lp.ln2_beta, cfg.ln_eps);
        let mut f1 = h2.dot(&lp.w1);
        add_bias(&mut f1, &lp.b1);
        let g = f1.mapv(gelu);
        let mut branch = g.dot(&lp.w2);
        add_bias(&mut branch, &lp.b2);
        let drop2 = match dropout_rng.as_deref_mut() {
            Some(rng) if use_dropout => {
                let m = dropout_mask(rng, branch.dim(), cfg.dropout);
                branch *= &m;
                Some(m)
            }
            _ => None,
        };
        x += &branch;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(EncoderError::NonFiniteActivation { layer: li });
        }
        layers.push(LayerCache { ln1, h1, q, k, v, probs, attn, drop1, ln2, h2, f1, g, drop2, out: x.clone() });
    }

    let first: Vec<usize> = offsets[..offsets.len() - 1].to_vec();
    let cls = x.select(Axis(0), &first);
    let (z, head_ln) = layer_norm(&cls, &params.head_gamma, &params.head_beta, cfg.ln_eps);
    let mut logits = z.dot(&params.w_cls);
    add_bias(&mut logits, &params.b_cls);
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(EncoderError::NonFiniteActivation { layer: cfg.n_layers });
    }
    Ok(ForwardCache { ids, mask, offsets, scale, layers, head_ln, z, logits })
}

/// Numerically stable softmax of one logit row.
pub fn softmax<T: Real>(logits: ArrayView1<T>) -> Array1<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let e = logits.mapv(|x| (x - max).exp());
    let sum = e.sum();
    e / sum
}
