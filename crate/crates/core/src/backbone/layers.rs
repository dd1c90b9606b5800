//! Transformer block forward and backward passes for a single token sequence.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use super::params::BlockParams;
use crate::util::Rng;

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

pub(crate) fn layer_norm(
    x: ArrayView2<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * gain;
    for ((mut row, xhat), &rstd) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let mean_d = row.sum() / d;
        let mean_dx = row.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        Zip::from(&mut row)
            .and(&xhat)
            .for_each(|g, &xh| *g = rstd * (*g - mean_d - xh * mean_dx));
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    ln1: LnCache,
    h1: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn_concat: Array2<f64>,
    mask_attn: Option<Array2<f64>>,
    ln2: LnCache,
    h2: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    mask_mlp: Option<Array2<f64>>,
}

/// Pre-norm block: `x + Attn(LN(x))`, then `x + MLP(LN(x))`.
pub(crate) fn block_forward(
    p: &BlockParams,
    x: &Array2<f64>,
    num_heads: usize,
    dropout: Option<(f64, &mut Rng)>,
) -> (Array2<f64>, BlockCache) {
    let (t, d) = x.dim();
    let dh = d / num_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (h1, ln1) = layer_norm(x.view(), &p.ln1_gain, &p.ln1_bias);
    let qkv = h1.dot(&p.w_qkv) + &p.b_qkv;
    let mut attn_concat = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
        let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let mut a = q.dot(&k.t()) * scale;
        softmax_rows(&mut a);
        attn_concat
            .slice_mut(s![.., h * dh..(h + 1) * dh])
            .assign(&a.dot(&v));
        probs.push(a);
    }
    let mut attn_out = attn_concat.dot(&p.w_out) + &p.b_out;

    let (mut mask_attn, mut mask_mlp) = (None, None);
    let mut rng_slot = dropout;
    if let Some((rate, rng)) = rng_slot.as_mut() {
        if *rate > 0.0 {
            let m = dropout_mask(t, d, *rate, rng);
            attn_out *= &m;
            mask_attn = Some(m);
        }
    }
    let x_mid = x + &attn_out;

    let (h2, ln2) = layer_norm(x_mid.view(), &p.ln2_gain, &p.ln2_bias);
    let pre_act = h2.dot(&p.w_fc1) + &p.b_fc1;
    let act = pre_act.mapv(gelu);
    let mut mlp_out = act.dot(&p.w_fc2) + &p.b_fc2;
    if let Some((rate, rng)) = rng_slot.as_mut() {
        if *rate > 0.0 {
            let m = dropout_mask(t, d, *rate, rng);
            mlp_out *= &m;
            mask_mlp = Some(m);
        }
    }
    let out = x_mid + &mlp_out;
    (
        out,
        BlockCache {
            ln1,
            h1,
            qkv,
            probs,
            attn_concat,
            mask_attn,
            ln2,
            h2,
            pre_act,
            act,
            mask_mlp,
        },
    )
}

/// Returns the gradient with respect to the block input and accumulates
/// parameter gradients into `g`.
pub(crate) fn block_backward(
    p: &BlockParams,
    cache: &BlockCache,
    d_out: &Array2<f64>,
    num_heads: usize,
    g: &mut BlockParams,
) -> Array2<f64> {
    let (t, d) = d_out.dim();
    let dh = d / num_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // MLP branch
    let mut d_mlp = d_out.clone();
    if let Some(m) = &cache.mask_mlp {
        d_mlp *= m;
    }
    g.w_fc2 += &cache.act.t().dot(&d_mlp);
    g.b_fc2 += &d_mlp.sum_axis(Axis(0));
    let mut d_pre = d_mlp.dot(&p.w_fc2.t());
    Zip::from(&mut d_pre)
        .and(&cache.pre_act)
        .for_each(|dv, &x| *dv *= gelu_grad(x));
    g.w_fc1 += &cache.h2.t().dot(&d_pre);
    g.b_fc1 += &d_pre.sum_axis(Axis(0));
    let d_h2 = d_pre.dot(&p.w_fc1.t());
    let d_mid = d_out
        + &layer_norm_backward(
            &d_h2,
            &cache.ln2,
            &p.ln2_gain,
            &mut g.ln2_gain,
            &mut g.ln2_bias,
        );

    // attention branch
    let mut d_attn = d_mid.clone();
    if let Some(m) = &cache.mask_attn {
        d_attn *= m;
    }
    g.w_out += &cache.attn_concat.t().dot(&d_attn);
    g.b_out += &d_attn.sum_axis(Axis(0));
    let d_concat = d_attn.dot(&p.w_out.t());
    let mut d_qkv = Array2::zeros((t, 3 * d));
    for h in 0..num_heads {
        let a = &cache.probs[h];
        let q = cache.qkv.slice(s![.., h * dh..(h + 1) * dh]);
        let k = cache.qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = cache.qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let d_o = d_concat.slice(s![.., h * dh..(h + 1) * dh]);
        let d_a = d_o.dot(&v.t());
        let d_v = a.t().dot(&d_o);
        let mut d_s = a * &d_a;
        for (mut row, arow) in d_s.rows_mut().into_iter().zip(a.rows()) {
            let dot = row.sum();
            Zip::from(&mut row)
                .and(&arow)
                .for_each(|v, &pa| *v -= pa * dot);
        }
        d_s *= scale;
        let d_q = d_s.dot(&k);
        let d_k = d_s.t().dot(&q);
        d_qkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&d_q);
        d_qkv
            .slice_mut(s![.., d + h * dh..d + (h + 1) * dh])
            .assign(&d_k);
        d_qkv
            .slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh])
            .assign(&d_v);
    }
    g.w_qkv += &cache.h1.t().dot(&d_qkv);
    g.b_qkv += &d_qkv.sum_axis(Axis(0));
    let d_h1 = d_qkv.dot(&p.w_qkv.t());
    d_mid
        + &layer_norm_backward(
            &d_h1,
            &cache.ln1,
            &p.ln1_gain,
            &mut g.ln1_gain,
            &mut g.ln1_bias,
        )
}
