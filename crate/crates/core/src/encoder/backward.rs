use ndarray::{s, Array1, Array2, Axis};

use super::forward::{gelu_grad, softmax, ForwardCache, LnCache};
use super::params::EncoderParams;
use super::{EncoderError, ModelConfig};
use crate::engine::{head_cols, sparse_attention_backward};
use crate::Real;

/// Returns `(dx, dgamma, dbeta)` for `y = gamma * xhat + beta`.
fn layer_norm_backward<T: Real>(dy: &Array2<T>, c: &LnCache<T>, gamma: &Array1<T>) -> (Array2<T>, Array1<T>, Array1<T>) {
    let dgamma = (dy * &c.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let mut dx = dy * gamma;
    let d = T::lit(dx.ncols() as f64);
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(&c.rstd) {
        let mean = row.sum() / d;
        let mean_x = row.dot(&xh) / d;
        row.zip_mut_with(&xh, |g, &x| *g = r * (*g - mean - x * mean_x));
    }
    (dx, dgamma, dbeta)
}

/// Gradient of the summed cross-entropy of a packed batch, added into `grads`.
/// Returns the summed loss.
pub fn backward_batch<T: Real>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    cache: &ForwardCache<T>,
    labels: &[usize],
    grads: &mut EncoderParams<T>,
) -> Result<T, EncoderError> {
    let b = cache.batch_size();
    if labels.len() != b {
        return Err(EncoderError::Config(format!("{} labels for a batch of {b}", labels.len())));
    }
    let mut loss = T::zero();
    let mut dlogits = Array2::zeros(cache.logits.dim());
    for (i, &y) in labels.iter().enumerate() {
        if y >= cfg.n_classes {
            return Err(EncoderError::LabelOutOfRange { label: y, n_classes: cfg.n_classes });
        }
        let p = softmax(cache.logits.row(i));
        loss -= p[y].max(T::min_positive_value()).ln();
        let mut row = dlogits.row_mut(i);
        row.assign(&p);
        row[y] -= T::one();
    }

    grads.w_cls += &cache.z.t().dot(&dlogits);
    grads.b_cls += &dlogits.sum_axis(Axis(0));
    let dz = dlogits.dot(&params.w_cls.t());
    let (dcls, dg, db) = layer_norm_backward(&dz, &cache.head_ln, &params.head_gamma);
    grads.head_gamma += &dg;
    grads.head_beta += &db;

    let n = cache.ids.len();
    let d_k = cfg.d_k();
    let mut dx = Array2::<T>::zeros((n, cfg.d_model));
    for (i, &o) in cache.offsets[..b].iter().enumerate() {
        dx.row_mut(o).assign(&dcls.row(i));
    }

    for (li, lc) in cache.layers.iter().enumerate().rev() {
        let lp = &params.layers[li];
        let lg = &mut grads.layers[li];

        // feed-forward branch
        let mut dbr = dx.clone();
        if let Some(m) = &lc.drop2 {
            dbr *= m;
        }
        lg.w2 += &lc.g.t().dot(&dbr);
        lg.b2 += &dbr.sum_axis(Axis(0));
        let mut df1 = dbr.dot(&lp.w2.t());
        df1.zip_mut_with(&lc.f1, |g, &f| *g *= gelu_grad(f));
        lg.w1 += &lc.h2.t().dot(&df1);
        lg.b1 += &df1.sum_axis(Axis(0));
        let dh2 = df1.dot(&lp.w1.t());
        let (d, dg, db) = layer_norm_backward(&dh2, &lc.ln2, &lp.ln2_gamma);
        lg.ln2_gamma += &dg;
        lg.ln2_beta += &db;
        dx += &d;

        // attention branch
        let mut dbr = dx.clone();
        if let Some(m) = &lc.drop1 {
            dbr *= m;
        }
        lg.wo += &lc.attn.t().dot(&dbr);
        let dattn = dbr.dot(&lp.wo.t());
        let mut dq = Array2::<T>::zeros((n, cfg.d_model));
        let mut dk = Array2::<T>::zeros((n, cfg.d_model));
        let mut dv = Array2::<T>::zeros((n, cfg.d_model));
        for h in 0..cfg.heads {
            let cols = s![.., h * d_k..(h + 1) * d_k];
            sparse_attention_backward(
                head_cols(&lc.q, h, d_k),
                head_cols(&lc.k, h, d_k),
                head_cols(&lc.v, h, d_k),
                &cache.mask,
                &lc.probs[h],
                dattn.slice(cols),
                cache.scale,
                dq.slice_mut(cols),
                dk.slice_mut(cols),
                dv.slice_mut(cols),
            );
        }
        lg.wq += &lc.h1.t().dot(&dq);
        lg.wk += &lc.h1.t().dot(&dk);
        lg.wv += &lc.h1.t().dot(&dv);
        let dh1 = dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
        let (d, dg, db) = layer_norm_backward(&dh1, &lc.ln1, &lp.ln1_gamma);
        lg.ln1_gamma += &dg;
        lg.ln1_beta += &db;
        dx += &d;
    }

    for (t, &id) in cache.ids.iter().enumerate() {
        let mut row = grads.embed.row_mut(id as usize);
        row += &dx.row(t);
    }
    Ok(loss)
}

/// Loss and gradient of a single sample.
pub fn backward<T: Real>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    cache: &ForwardCache<T>,
    label: usize,
) -> Result<(T, EncoderParams<T>), EncoderError> {
    let mut grads = params.zeros_like();
    let loss = backward_batch(params, cfg, cache, &[label], &mut grads)?;
    Ok((loss, grads))
}
