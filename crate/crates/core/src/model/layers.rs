//! Forward passes with cached activations and their hand-written reverse passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{BlockParams, Params};
use super::tensor::{add_col_sums, add_row_bias, gemm, matmul, View};
use super::{ModelConfig, ModelError, PositionalEncoding, Result};

const LN_EPS: f64 = 1e-5;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Row-wise softmax in place, max-subtracted.
pub(crate) fn softmax_rows(x: &mut [f64], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// `softmax(q k^T / scale) v` for row-major `q: t x dk`, `k: s x dk`, `v: s x dv`.
/// Returns `(probabilities t x s, output t x dv)`.
pub(crate) fn scaled_dot_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    t: usize,
    s: usize,
    dk: usize,
    dv: usize,
    scale: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut scores = matmul(View::new(q, t, dk), View::new(k, s, dk).t());
    scores.iter_mut().for_each(|x| *x /= scale);
    softmax_rows(&mut scores, s);
    let out = matmul(View::new(&scores, t, s), View::new(v, s, dv));
    (scores, out)
}

pub(crate) struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, LnCache) {
    let rows = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (out, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    d: usize,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    for (r, &is) in cache.inv_std.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            let dxh = dyr[j] * gain[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= d as f64;
        mean_dxh_xh /= d as f64;
        for j in 0..d {
            let dxh = dyr[j] * gain[j];
            dx[r * d + j] = is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

/// `x w + b` for row-major `x: rows x w.rows`.
fn linear(x: &[f64], w: &super::Tensor, b: &super::Tensor) -> Vec<f64> {
    let (k, n) = (w.shape[0], w.shape[1]);
    let mut y = matmul(View::new(x, x.len() / k, k), View::new(&w.data, k, n));
    add_row_bias(&mut y, &b.data);
    y
}

/// Accumulates `dw += x^T dy`, `db += colsum(dy)` and returns `dy w^T`.
fn linear_backward(
    x: &[f64],
    dy: &[f64],
    w: &super::Tensor,
    dw: &mut super::Tensor,
    db: &mut super::Tensor,
) -> Vec<f64> {
    let (k, n) = (w.shape[0], w.shape[1]);
    let rows = dy.len() / n;
    gemm(View::new(x, rows, k).t(), View::new(dy, rows, n), &mut dw.data, 1.0);
    add_col_sums(dy, &mut db.data);
    matmul(View::new(dy, rows, n), View::new(&w.data, k, n).t())
}

fn dropout_mask(len: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some((0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect())
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

/// Copies columns `[c0, c0 + w)` of a row-major matrix with `cols` columns.
fn take_cols(x: &[f64], cols: usize, c0: usize, w: usize) -> Vec<f64> {
    x.chunks_exact(cols).flat_map(|r| r[c0..c0 + w].iter().copied()).collect()
}

fn put_cols(dst: &mut [f64], cols: usize, c0: usize, src: &[f64], w: usize) {
    for (drow, srow) in dst.chunks_exact_mut(cols).zip(src.chunks_exact(w)) {
        drow[c0..c0 + w].copy_from_slice(srow);
    }
}

pub(crate) struct AttentionCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<Vec<f64>>,
    ctx: Vec<f64>,
}

/// Multi-head self-attention sub-layer without residual or norm:
/// per-head projections, attention, concatenation, output projection.
pub(crate) fn multi_head_forward(x: &[f64], p: &BlockParams, cfg: &ModelConfig) -> (Vec<f64>, AttentionCache) {
    let d = cfg.model_dim;
    let t = x.len() / d;
    let dh = d / cfg.heads;
    let q = linear(x, &p.wq, &p.bq);
    let k = linear(x, &p.wk, &p.bk);
    let v = linear(x, &p.wv, &p.bv);
    let mut ctx = vec![0.0; t * d];
    let mut probs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (qh, kh, vh) = (take_cols(&q, d, h * dh, dh), take_cols(&k, d, h * dh, dh), take_cols(&v, d, h * dh, dh));
        let (ph, oh) = scaled_dot_attention(&qh, &kh, &vh, t, t, dh, dh, cfg.attention_scale);
        put_cols(&mut ctx, d, h * dh, &oh, dh);
        probs.push(ph);
    }
    let out = linear(&ctx, &p.wo, &p.bo);
    (
        out,
        AttentionCache {
            input: x.to_vec(),
            q,
            k,
            v,
            probs,
            ctx,
        },
    )
}

fn multi_head_backward(
    dout: &[f64],
    c: &AttentionCache,
    p: &BlockParams,
    g: &mut BlockParams,
    cfg: &ModelConfig,
) -> Vec<f64> {
    let d = cfg.model_dim;
    let t = dout.len() / d;
    let dh = d / cfg.heads;
    let scale = cfg.attention_scale;
    let dctx = linear_backward(&c.ctx, dout, &p.wo, &mut g.wo, &mut g.bo);
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    for h in 0..cfg.heads {
        let probs = &c.probs[h];
        let (qh, kh, vh) = (
            take_cols(&c.q, d, h * dh, dh),
            take_cols(&c.k, d, h * dh, dh),
            take_cols(&c.v, d, h * dh, dh),
        );
        let dctx_h = take_cols(&dctx, d, h * dh, dh);
        // out = P V
        let dp = matmul(View::new(&dctx_h, t, dh), View::new(&vh, t, dh).t());
        let dvh = matmul(View::new(probs, t, t).t(), View::new(&dctx_h, t, dh));
        // softmax Jacobian, row by row
        let mut ds = vec![0.0; t * t];
        for r in 0..t {
            let pr = &probs[r * t..(r + 1) * t];
            let dpr = &dp[r * t..(r + 1) * t];
            let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
            for j in 0..t {
                ds[r * t + j] = pr[j] * (dpr[j] - dot) / scale;
            }
        }
        let dqh = matmul(View::new(&ds, t, t), View::new(&kh, t, dh));
        let dkh = matmul(View::new(&ds, t, t).t(), View::new(&qh, t, dh));
        put_cols(&mut dq, d, h * dh, &dqh, dh);
        put_cols(&mut dk, d, h * dh, &dkh, dh);
        put_cols(&mut dv, d, h * dh, &dvh, dh);
    }
    let mut dx = linear_backward(&c.input, &dq, &p.wq, &mut g.wq, &mut g.bq);
    let dxk = linear_backward(&c.input, &dk, &p.wk, &mut g.wk, &mut g.bk);
    let dxv = linear_backward(&c.input, &dv, &p.wv, &mut g.wv, &mut g.bv);
    for ((a, b), c) in dx.iter_mut().zip(&dxk).zip(&dxv) {
        *a += b + c;
    }
    dx
}

pub(crate) struct FeedForwardCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    mask: Option<Vec<f64>>,
}

/// Position-wise `GELU(x w1 + b1) w2 + b2`, dropout after the activation.
pub(crate) fn feed_forward_forward(
    x: &[f64],
    p: &BlockParams,
    cfg: &ModelConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> (Vec<f64>, FeedForwardCache) {
    let pre = linear(x, &p.w1, &p.b1);
    let mut act: Vec<f64> = pre.iter().map(|&u| gelu(u)).collect();
    let mask = dropout_mask(act.len(), cfg.dropout, rng);
    apply_mask(&mut act, &mask);
    let out = linear(&act, &p.w2, &p.b2);
    (
        out,
        FeedForwardCache {
            input: x.to_vec(),
            pre,
            act,
            mask,
        },
    )
}

fn feed_forward_backward(dout: &[f64], c: &FeedForwardCache, p: &BlockParams, g: &mut BlockParams) -> Vec<f64> {
    let mut dact = linear_backward(&c.act, dout, &p.w2, &mut g.w2, &mut g.b2);
    apply_mask(&mut dact, &c.mask);
    let dpre: Vec<f64> = dact.iter().zip(&c.pre).map(|(da, &u)| da * gelu_grad(u)).collect();
    linear_backward(&c.input, &dpre, &p.w1, &mut g.w1, &mut g.b1)
}

pub(crate) struct BlockCache {
    ln1: LnCache,
    attn: AttentionCache,
    attn_mask: Option<Vec<f64>>,
    ln2: LnCache,
    ff: FeedForwardCache,
}

fn block_forward(
    h: &mut [f64],
    p: &BlockParams,
    cfg: &ModelConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> BlockCache {
    let d = cfg.model_dim;
    let (n1, ln1) = layer_norm(h, d, &p.ln1_gain.data, &p.ln1_bias.data);
    let (mut a, attn) = multi_head_forward(&n1, p, cfg);
    let attn_mask = dropout_mask(a.len(), cfg.dropout, rng.as_deref_mut());
    apply_mask(&mut a, &attn_mask);
    h.iter_mut().zip(&a).for_each(|(x, y)| *x += y);
    let (n2, ln2) = layer_norm(h, d, &p.ln2_gain.data, &p.ln2_bias.data);
    let (f, ff) = feed_forward_forward(&n2, p, cfg, rng);
    h.iter_mut().zip(&f).for_each(|(x, y)| *x += y);
    BlockCache {
        ln1,
        attn,
        attn_mask,
        ln2,
        ff,
    }
}

fn block_backward(dh: &mut [f64], c: &BlockCache, p: &BlockParams, g: &mut BlockParams, cfg: &ModelConfig) {
    let d = cfg.model_dim;
    let dn2 = feed_forward_backward(dh, &c.ff, p, g);
    let dx = layer_norm_backward(&dn2, &c.ln2, d, &p.ln2_gain.data, &mut g.ln2_gain.data, &mut g.ln2_bias.data);
    dh.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);

    let mut da = dh.to_vec();
    apply_mask(&mut da, &c.attn_mask);
    let dn1 = multi_head_backward(&da, &c.attn, p, g, cfg);
    let dx = layer_norm_backward(&dn1, &c.ln1, d, &p.ln1_gain.data, &mut g.ln1_gain.data, &mut g.ln1_bias.data);
    dh.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
}

pub(crate) fn sinusoidal_table(t: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

pub(crate) struct ForwardCache {
    input: Vec<f64>,
    blocks: Vec<BlockCache>,
    final_ln: LnCache,
    pub tokens: Vec<f64>,
    pooled: Vec<f64>,
}

/// Full classifier on one `seq_len x input_dim` sample. Dropout is active
/// iff `rng` is given.
pub(crate) fn forward_sample(
    params: &Params,
    cfg: &ModelConfig,
    x: &[f64],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Vec<f64>, ForwardCache)> {
    let (t, d) = (cfg.seq_len, cfg.model_dim);
    if x.len() != t * cfg.input_dim {
        return Err(ModelError::ShapeMismatch(format!(
            "input has {} values, expected {t} x {}",
            x.len(),
            cfg.input_dim
        )));
    }
    let mut h = linear(x, &params.input_w, &params.input_b);
    match cfg.positional {
        PositionalEncoding::Learned => {
            let pos = params.pos.as_ref().expect("learned positions allocated");
            h.iter_mut().zip(&pos.data).for_each(|(a, b)| *a += b);
        }
        PositionalEncoding::Sinusoidal => {
            h.iter_mut().zip(sinusoidal_table(t, d)).for_each(|(a, b)| *a += b);
        }
        PositionalEncoding::None => {}
    }

    let mut blocks = Vec::with_capacity(cfg.depth);
    for (i, bp) in params.blocks.iter().enumerate() {
        blocks.push(block_forward(&mut h, bp, cfg, rng.as_deref_mut()));
        if let Some(bad) = h.iter().find(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite {
                block: Some(i),
                detail: format!("activation {bad}"),
            });
        }
    }
    let (tokens, final_ln) = layer_norm(&h, d, &params.final_gain.data, &params.final_bias.data);
    let mut pooled = vec![0.0; d];
    add_col_sums(&tokens, &mut pooled);
    pooled.iter_mut().for_each(|v| *v /= t as f64);
    let logits = linear(&pooled, &params.head_w, &params.head_b);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite {
            block: None,
            detail: "logits".into(),
        });
    }
    Ok((
        logits,
        ForwardCache {
            input: x.to_vec(),
            blocks,
            final_ln,
            tokens,
            pooled,
        },
    ))
}

/// Gradients of all parameters given `d loss / d logits`.
pub(crate) fn backward_sample(params: &Params, cfg: &ModelConfig, cache: &ForwardCache, dlogits: &[f64]) -> Params {
    let (t, d) = (cfg.seq_len, cfg.model_dim);
    let mut g = params.zeros_like();
    let dpooled = linear_backward(&cache.pooled, dlogits, &params.head_w, &mut g.head_w, &mut g.head_b);
    let dtokens: Vec<f64> = (0..t).flat_map(|_| dpooled.iter().map(|v| v / t as f64)).collect();
    let mut dh = layer_norm_backward(
        &dtokens,
        &cache.final_ln,
        d,
        &params.final_gain.data,
        &mut g.final_gain.data,
        &mut g.final_bias.data,
    );
    for i in (0..cfg.depth).rev() {
        block_backward(&mut dh, &cache.blocks[i], &params.blocks[i], &mut g.blocks[i], cfg);
    }
    if let Some(gp) = g.pos.as_mut() {
        gp.data.iter_mut().zip(&dh).for_each(|(a, b)| *a += b);
    }
    linear_backward(&cache.input, &dh, &params.input_w, &mut g.input_w, &mut g.input_b);
    g
}

/// Mean-free cross-entropy of one sample: `(loss, d loss / d logits)`.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut p = logits.to_vec();
    softmax_rows(&mut p, logits.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    p[label] -= 1.0;
    (loss, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // 1 * Phi(1) with Phi(1) = 0.841344746068542948...
        assert!((gelu(1.0) - 0.841_344_746_068_543).abs() < 1e-15);
        assert!((gelu(-1.0) + 0.158_655_253_931_457).abs() < 1e-15);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-2.0, -0.3, 0.0, 0.7, 3.1] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_uniform() {
        let (loss, d) = cross_entropy(&[0.0; 5], 2);
        assert!((loss - 5f64.ln()).abs() < 1e-15);
        assert!((d[2] + 0.8).abs() < 1e-15);
        assert!((d.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_backward_matches_difference() {
        let x = [0.3, -1.2, 2.0, 0.5, 0.1, 0.9, -0.4, 1.7];
        let gain = [1.1, 0.9, 1.3, 0.7];
        let bias = [0.0, 0.1, -0.2, 0.3];
        let w = [0.5, -1.0, 0.25, 2.0, 1.5, 0.3, -0.7, 0.2];
        let f = |x: &[f64]| -> f64 {
            let (y, _) = layer_norm(x, 4, &gain, &bias);
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer_norm(&x, 4, &gain, &bias);
        let mut dg = [0.0; 4];
        let mut db = [0.0; 4];
        let dx = layer_norm_backward(&w, &cache, 4, &gain, &mut dg, &mut db);
        for i in 0..x.len() {
            let mut xp = x;
            let mut xm = x;
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!((dx[i] - fd).abs() < 1e-8, "{i}: {} vs {fd}", dx[i]);
        }
    }
}
