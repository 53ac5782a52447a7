use serde::Serialize;

use super::backward::backward_batch;
use super::forward::forward_batch;
use super::params::EncoderParams;
use super::{EncoderError, Example, ModelConfig, ModelInput};

/// Smallest magnitude used as the denominator of a relative error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

fn summed_loss(params: &EncoderParams<f64>, cfg: &ModelConfig, data: &[Example]) -> Result<f64, EncoderError> {
    let inputs: Vec<&ModelInput> = data.iter().map(|e| &e.input).collect();
    let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
    let cache = forward_batch(params, cfg, &inputs, None::<&mut rand_chacha::ChaCha8Rng>)?;
    Ok(cache
        .logits()
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, y)| super::train::loss(row, y))
        .sum())
}

/// Compares the analytic gradient of the summed loss with central differences,
/// entry by entry. Relative error is `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn gradient_check(
    params: &EncoderParams<f64>,
    cfg: &ModelConfig,
    data: &[Example],
    eps: f64,
) -> Result<Vec<TensorCheck>, EncoderError> {
    let inputs: Vec<&ModelInput> = data.iter().map(|e| &e.input).collect();
    let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
    let cache = forward_batch(params, cfg, &inputs, None::<&mut rand_chacha::ChaCha8Rng>)?;
    let mut grads = params.zeros_like();
    backward_batch(params, cfg, &cache, &labels, &mut grads)?;

    let names: Vec<String> = params.tensors().into_iter().map(|(n, _, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, _, t)| t.to_vec()).collect();
    let mut work = params.clone();
    let mut out = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let len = analytic[ti].len();
        let (mut rel, mut abs) = (0.0f64, 0.0f64);
        for e in 0..len {
            let orig = work.tensors_mut()[ti][e];
            work.tensors_mut()[ti][e] = orig + eps;
            let up = summed_loss(&work, cfg, data)?;
            work.tensors_mut()[ti][e] = orig - eps;
            let down = summed_loss(&work, cfg, data)?;
            work.tensors_mut()[ti][e] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ti][e];
            let diff = (a - numeric).abs();
            abs = abs.max(diff);
            rel = rel.max(diff / a.abs().max(numeric.abs()).max(REL_FLOOR));
        }
        out.push(TensorCheck { name, len, max_rel_error: rel, max_abs_error: abs });
    }
    Ok(out)
}
