use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EncoderError, ModelConfig};
use crate::{seeds, Error, Real};

/// Trainable tensors of one pre-LN block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gamma: Array1<T>,
    pub ln1_beta: Array1<T>,
    pub wq: Array2<T>,
    pub wk: Array2<T>,
    pub wv: Array2<T>,
    pub wo: Array2<T>,
    pub ln2_gamma: Array1<T>,
    pub ln2_beta: Array1<T>,
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
}

/// All trainable tensors. Weight matrices are stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub embed: Array2<T>,
    pub layers: Vec<LayerParams<T>>,
    pub head_gamma: Array1<T>,
    pub head_beta: Array1<T>,
    pub w_cls: Array2<T>,
    pub b_cls: Array1<T>,
}

fn uniform<T: Real>(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || T::lit(rng.gen_range(-bound..=bound)))
}

impl<T: Real> EncoderParams<T> {
    /// Uniform `+-1/sqrt(fan_in)` weights (embedding rows are one-hot lookups,
    /// so `+-1`), unit LayerNorm gains, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = seeds::rng(seed, "init", 0);
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let sd = 1.0 / (d as f64).sqrt();
        let embed = uniform(&mut rng, cfg.vocab_size, d, 1.0);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                ln1_gamma: Array1::ones(d),
                ln1_beta: Array1::zeros(d),
                wq: uniform(&mut rng, d, d, sd),
                wk: uniform(&mut rng, d, d, sd),
                wv: uniform(&mut rng, d, d, sd),
                wo: uniform(&mut rng, d, d, sd),
                ln2_gamma: Array1::ones(d),
                ln2_beta: Array1::zeros(d),
                w1: uniform(&mut rng, d, f, sd),
                b1: Array1::zeros(f),
                w2: uniform(&mut rng, f, d, 1.0 / (f as f64).sqrt()),
                b2: Array1::zeros(d),
            })
            .collect();
        Self {
            embed,
            layers,
            head_gamma: Array1::ones(d),
            head_beta: Array1::zeros(d),
            w_cls: uniform(&mut rng, d, cfg.n_classes, sd),
            b_cls: Array1::zeros(cfg.n_classes),
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let layer = LayerParams {
            ln1_gamma: Array1::zeros(d),
            ln1_beta: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            ln2_gamma: Array1::zeros(d),
            ln2_beta: Array1::zeros(d),
            w1: Array2::zeros((d, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, d)),
            b2: Array1::zeros(d),
        };
        Self {
            embed: Array2::zeros((cfg.vocab_size, d)),
            layers: vec![layer; cfg.n_layers],
            head_gamma: Array1::zeros(d),
            head_beta: Array1::zeros(d),
            w_cls: Array2::zeros((d, cfg.n_classes)),
            b_cls: Array1::zeros(cfg.n_classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.scale(T::zero());
        z
    }

    /// `(name, shape, values)` for every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        fn m<'a, T>(name: String, a: &'a Array2<T>) -> (String, Vec<usize>, &'a [T]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        fn v<'a, T>(name: String, a: &'a Array1<T>) -> (String, Vec<usize>, &'a [T]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        let mut out = vec![m("embed".into(), &self.embed)];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.extend([
                v(p("ln1.gamma"), &l.ln1_gamma),
                v(p("ln1.beta"), &l.ln1_beta),
                m(p("attn.wq"), &l.wq),
                m(p("attn.wk"), &l.wk),
                m(p("attn.wv"), &l.wv),
                m(p("attn.wo"), &l.wo),
                v(p("ln2.gamma"), &l.ln2_gamma),
                v(p("ln2.beta"), &l.ln2_beta),
                m(p("ffn.w1"), &l.w1),
                v(p("ffn.b1"), &l.b1),
                m(p("ffn.w2"), &l.w2),
                v(p("ffn.b2"), &l.b2),
            ]);
        }
        out.extend([
            v("head.ln.gamma".into(), &self.head_gamma),
            v("head.ln.beta".into(), &self.head_beta),
            m("head.w".into(), &self.w_cls),
            v("head.b".into(), &self.b_cls),
        ]);
        out
    }

    /// Mutable views in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        fn s<T, D: ndarray::Dimension>(a: &mut ndarray::Array<T, D>) -> &mut [T] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out = vec![s(&mut self.embed)];
        for l in &mut self.layers {
            out.extend([
                s(&mut l.ln1_gamma),
                s(&mut l.ln1_beta),
                s(&mut l.wq),
                s(&mut l.wk),
                s(&mut l.wv),
                s(&mut l.wo),
                s(&mut l.ln2_gamma),
                s(&mut l.ln2_beta),
                s(&mut l.w1),
                s(&mut l.b1),
                s(&mut l.w2),
                s(&mut l.b2),
            ]);
        }
        out.extend([s(&mut self.head_gamma), s(&mut self.head_beta), s(&mut self.w_cls), s(&mut self.b_cls)]);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b.2).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, _, t)| t.iter()).map(|x| x.to_f64_lossless().powi(2)).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.2.iter().zip(b.2).map(|(x, y)| (x.to_f64_lossless() - y.to_f64_lossless()).abs()))
            .fold(0.0, f64::max)
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<(), EncoderError> {
        let want = EncoderParams::<T>::zeros(cfg);
        let shapes = |p: &Self| p.tensors().into_iter().map(|(n, s, _)| (n, s)).collect::<Vec<_>>();
        if shapes(self) != shapes(&want) {
            return Err(EncoderError::Checkpoint("tensor shapes do not match the model config".into()));
        }
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "hdt-encoder-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned JSON checkpoint: config plus named row-major tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new<T: Real>(config: &ModelConfig, params: &EncoderParams<T>) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| TensorRecord {
                name,
                shape,
                data: data.iter().map(|x| x.to_f64_lossless()).collect(),
            })
            .collect();
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, config: *config, tensors }
    }

    pub fn params<T: Real>(&self) -> Result<EncoderParams<T>, EncoderError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(EncoderError::Checkpoint(format!("unsupported format {} v{}", self.format, self.version)));
        }
        self.config.validate()?;
        let mut params = EncoderParams::<T>::zeros(&self.config);
        let expected: Vec<(String, Vec<usize>)> =
            params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if expected.len() != self.tensors.len() {
            return Err(EncoderError::Checkpoint("tensor count mismatch".into()));
        }
        for ((slot, (name, shape)), rec) in params.tensors_mut().into_iter().zip(expected).zip(&self.tensors) {
            if rec.name != name || rec.shape != shape || rec.data.len() != slot.len() {
                return Err(EncoderError::Checkpoint(format!("tensor {} does not match {name} {shape:?}", rec.name)));
            }
            slot.iter_mut().zip(&rec.data).for_each(|(x, &y)| *x = T::lit(y));
        }
        Ok(params)
    }
}

pub fn save_checkpoint<T: Real>(path: &Path, config: &ModelConfig, params: &EncoderParams<T>) -> Result<(), Error> {
    let json = serde_json::to_string(&Checkpoint::new(config, params))
        .map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(ModelConfig, EncoderParams<T>), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
    let params = ckpt.params()?;
    Ok((ckpt.config, params))
}
