use rayon::prelude::*;

use super::kernels::{
    axpy, dot, gelu, gelu_grad, layernorm, layernorm_backward, log_softmax, matmul,
    matmul_backward,
};
use super::layout::{BlockRanges, Layout};
use super::{Checkpoint, ModelConfig};
use crate::error::{invalid, Error, Result};
use crate::tokenizer::TokenId;

/// Rows accumulated sequentially into one gradient buffer. Fixed so that
/// the floating-point summation order never depends on the thread count.
const ROWS_PER_GROUP: usize = 8;

struct BlockCache {
    x_in: Vec<f64>,
    ln1: Vec<f64>,
    ln1_mean: Vec<f64>,
    ln1_rstd: Vec<f64>,
    qkv: Vec<f64>,
    /// [head, t, u] attention weights, zero above the diagonal.
    att: Vec<f64>,
    atty: Vec<f64>,
    x_mid: Vec<f64>,
    ln2: Vec<f64>,
    ln2_mean: Vec<f64>,
    ln2_rstd: Vec<f64>,
    fc: Vec<f64>,
    act: Vec<f64>,
}

struct SeqCache {
    blocks: Vec<BlockCache>,
    x_out: Vec<f64>,
    lnf: Vec<f64>,
    lnf_mean: Vec<f64>,
    lnf_rstd: Vec<f64>,
    logits: Vec<f64>,
}

pub(crate) fn check_tokens(cfg: &ModelConfig, ids: &[TokenId]) -> Result<()> {
    if ids.is_empty() {
        return Err(invalid("empty token sequence"));
    }
    if ids.len() > cfg.context_length {
        return Err(Error::SequenceTooLong {
            len: ids.len(),
            max: cfg.context_length,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

fn attention(out: &mut [f64], att: &mut [f64], qkv: &[f64], t_len: usize, cfg: &ModelConfig) {
    let c = cfg.model_dim;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    for h in 0..cfg.num_heads {
        let off = h * hd;
        for t in 0..t_len {
            let q = &qkv[t * 3 * c + off..t * 3 * c + off + hd];
            let row = &mut att[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
            let mut max = f64::NEG_INFINITY;
            for (u, a) in row.iter_mut().enumerate().take(t + 1) {
                let k = &qkv[u * 3 * c + c + off..u * 3 * c + c + off + hd];
                *a = dot(q, k) * scale;
                max = max.max(*a);
            }
            let mut sum = 0.0;
            for a in row.iter_mut().take(t + 1) {
                *a = (*a - max).exp();
                sum += *a;
            }
            let y = &mut out[t * c + off..t * c + off + hd];
            y.fill(0.0);
            for (u, a) in row.iter_mut().enumerate().take(t + 1) {
                *a /= sum;
                let v = &qkv[u * 3 * c + 2 * c + off..u * 3 * c + 2 * c + off + hd];
                axpy(y, *a, v);
            }
        }
    }
}

fn attention_backward(dqkv: &mut [f64], datty: &[f64], qkv: &[f64], att: &[f64], t_len: usize, cfg: &ModelConfig) {
    let c = cfg.model_dim;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut datt = vec![0.0; t_len];
    for h in 0..cfg.num_heads {
        let off = h * hd;
        for t in 0..t_len {
            let arow = &att[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
            let dy = &datty[t * c + off..t * c + off + hd];
            let mut weighted = 0.0;
            for u in 0..=t {
                let vu = u * 3 * c + 2 * c + off;
                datt[u] = dot(dy, &qkv[vu..vu + hd]);
                weighted += arow[u] * datt[u];
                axpy(&mut dqkv[vu..vu + hd], arow[u], dy);
            }
            let qt = t * 3 * c + off;
            for u in 0..=t {
                let ds = arow[u] * (datt[u] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                let ku = u * 3 * c + c + off;
                for i in 0..hd {
                    dqkv[qt + i] += ds * qkv[ku + i];
                    dqkv[ku + i] += ds * qkv[qt + i];
                }
            }
        }
    }
}

fn forward_seq(cfg: &ModelConfig, layout: &Layout, p: &[f64], ids: &[TokenId]) -> SeqCache {
    let t_len = ids.len();
    let c = cfg.model_dim;
    let hdim = cfg.hidden_dim();
    let v = cfg.vocab_size;
    let wte = &p[layout.wte.clone()];
    let wpe = &p[layout.wpe.clone()];

    let mut x = vec![0.0; t_len * c];
    for (t, &id) in ids.iter().enumerate() {
        let row = &mut x[t * c..(t + 1) * c];
        let e = &wte[id as usize * c..(id as usize + 1) * c];
        let pe = &wpe[t * c..(t + 1) * c];
        for i in 0..c {
            row[i] = e[i] + pe[i];
        }
    }

    let mut blocks = Vec::with_capacity(cfg.num_layers);
    for br in &layout.blocks {
        let mut bc = BlockCache {
            x_in: x,
            ln1: vec![0.0; t_len * c],
            ln1_mean: vec![0.0; t_len],
            ln1_rstd: vec![0.0; t_len],
            qkv: vec![0.0; t_len * 3 * c],
            att: vec![0.0; cfg.num_heads * t_len * t_len],
            atty: vec![0.0; t_len * c],
            x_mid: vec![0.0; t_len * c],
            ln2: vec![0.0; t_len * c],
            ln2_mean: vec![0.0; t_len],
            ln2_rstd: vec![0.0; t_len],
            fc: vec![0.0; t_len * hdim],
            act: vec![0.0; t_len * hdim],
        };
        layernorm(&mut bc.ln1, &mut bc.ln1_mean, &mut bc.ln1_rstd, &bc.x_in, &p[br.ln1_g.clone()], &p[br.ln1_b.clone()], c);
        matmul(&mut bc.qkv, &bc.ln1, &p[br.qkv_w.clone()], Some(&p[br.qkv_b.clone()]), c, 3 * c);
        attention(&mut bc.atty, &mut bc.att, &bc.qkv, t_len, cfg);
        matmul(&mut bc.x_mid, &bc.atty, &p[br.proj_w.clone()], Some(&p[br.proj_b.clone()]), c, c);
        for (m, xi) in bc.x_mid.iter_mut().zip(&bc.x_in) {
            *m += xi;
        }
        layernorm(&mut bc.ln2, &mut bc.ln2_mean, &mut bc.ln2_rstd, &bc.x_mid, &p[br.ln2_g.clone()], &p[br.ln2_b.clone()], c);
        matmul(&mut bc.fc, &bc.ln2, &p[br.fc_w.clone()], Some(&p[br.fc_b.clone()]), c, hdim);
        for (a, f) in bc.act.iter_mut().zip(&bc.fc) {
            *a = gelu(*f);
        }
        let mut out = vec![0.0; t_len * c];
        matmul(&mut out, &bc.act, &p[br.fcproj_w.clone()], Some(&p[br.fcproj_b.clone()]), hdim, c);
        for (o, m) in out.iter_mut().zip(&bc.x_mid) {
            *o += m;
        }
        x = out;
        blocks.push(bc);
    }

    let mut lnf = vec![0.0; t_len * c];
    let mut lnf_mean = vec![0.0; t_len];
    let mut lnf_rstd = vec![0.0; t_len];
    layernorm(&mut lnf, &mut lnf_mean, &mut lnf_rstd, &x, &p[layout.lnf_g.clone()], &p[layout.lnf_b.clone()], c);
    let mut logits = vec![0.0; t_len * v];
    matmul(&mut logits, &lnf, &p[layout.head.clone()], None, c, v);
    SeqCache {
        blocks,
        x_out: x,
        lnf,
        lnf_mean,
        lnf_rstd,
        logits,
    }
}

/// Disjoint mutable views of two ranges with `a.end <= b.start`.
fn pair_mut(g: &mut [f64], a: std::ops::Range<usize>, b: std::ops::Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

fn block_backward(
    cfg: &ModelConfig,
    br: &BlockRanges,
    p: &[f64],
    bc: &BlockCache,
    dx: Vec<f64>,
    g: &mut [f64],
    t_len: usize,
) -> Vec<f64> {
    let c = cfg.model_dim;
    let hdim = cfg.hidden_dim();

    let mut dact = vec![0.0; t_len * hdim];
    {
        let (dw, db) = pair_mut(g, br.fcproj_w.clone(), br.fcproj_b.clone());
        matmul_backward(&mut dact, dw, Some(db), &dx, &bc.act, &p[br.fcproj_w.clone()], hdim, c);
    }
    for (d, f) in dact.iter_mut().zip(&bc.fc) {
        *d *= gelu_grad(*f);
    }
    let mut dln2 = vec![0.0; t_len * c];
    {
        let (dw, db) = pair_mut(g, br.fc_w.clone(), br.fc_b.clone());
        matmul_backward(&mut dln2, dw, Some(db), &dact, &bc.ln2, &p[br.fc_w.clone()], c, hdim);
    }
    let mut dmid = dx;
    {
        let (dg, db) = pair_mut(g, br.ln2_g.clone(), br.ln2_b.clone());
        layernorm_backward(&mut dmid, dg, db, &dln2, &bc.x_mid, &p[br.ln2_g.clone()], &bc.ln2_mean, &bc.ln2_rstd, c);
    }
    let mut datty = vec![0.0; t_len * c];
    {
        let (dw, db) = pair_mut(g, br.proj_w.clone(), br.proj_b.clone());
        matmul_backward(&mut datty, dw, Some(db), &dmid, &bc.atty, &p[br.proj_w.clone()], c, c);
    }
    let mut dqkv = vec![0.0; t_len * 3 * c];
    attention_backward(&mut dqkv, &datty, &bc.qkv, &bc.att, t_len, cfg);
    let mut dln1 = vec![0.0; t_len * c];
    {
        let (dw, db) = pair_mut(g, br.qkv_w.clone(), br.qkv_b.clone());
        matmul_backward(&mut dln1, dw, Some(db), &dqkv, &bc.ln1, &p[br.qkv_w.clone()], c, 3 * c);
    }
    let mut dxin = dmid;
    {
        let (dg, db) = pair_mut(g, br.ln1_g.clone(), br.ln1_b.clone());
        layernorm_backward(&mut dxin, dg, db, &dln1, &bc.x_in, &p[br.ln1_g.clone()], &bc.ln1_mean, &bc.ln1_rstd, c);
    }
    dxin
}

/// Forward + backward for one row; adds `scale * d(sum NLL)/dp` into `g`
/// and returns the row's summed NLL.
fn row_loss_grads(cfg: &ModelConfig, layout: &Layout, p: &[f64], ids: &[TokenId], scale: f64, g: &mut [f64]) -> f64 {
    let t_len = ids.len();
    let c = cfg.model_dim;
    let v = cfg.vocab_size;
    let cache = forward_seq(cfg, layout, p, ids);

    let mut nll = 0.0;
    let mut dlogits = cache.logits;
    for t in 0..t_len {
        let row = &mut dlogits[t * v..(t + 1) * v];
        if t + 1 == t_len {
            row.fill(0.0);
            continue;
        }
        log_softmax(row);
        let target = ids[t + 1] as usize;
        nll -= row[target];
        for x in row.iter_mut() {
            *x = x.exp() * scale;
        }
        row[target] -= scale;
    }

    let mut dlnf = vec![0.0; t_len * c];
    matmul_backward(&mut dlnf, &mut g[layout.head.clone()], None, &dlogits, &cache.lnf, &p[layout.head.clone()], c, v);
    let mut dx = vec![0.0; t_len * c];
    {
        let (dg, db) = pair_mut(g, layout.lnf_g.clone(), layout.lnf_b.clone());
        layernorm_backward(&mut dx, dg, db, &dlnf, &cache.x_out, &p[layout.lnf_g.clone()], &cache.lnf_mean, &cache.lnf_rstd, c);
    }
    for (br, bc) in layout.blocks.iter().zip(&cache.blocks).rev() {
        dx = block_backward(cfg, br, p, bc, dx, g, t_len);
    }
    let (dwte, dwpe) = pair_mut(g, layout.wte.clone(), layout.wpe.clone());
    for (t, &id) in ids.iter().enumerate() {
        let d = &dx[t * c..(t + 1) * c];
        axpy(&mut dwte[id as usize * c..(id as usize + 1) * c], 1.0, d);
        axpy(&mut dwpe[t * c..(t + 1) * c], 1.0, d);
    }
    nll
}

fn check_batch(cfg: &ModelConfig, batch: &[Vec<TokenId>]) -> Result<usize> {
    let mut predicted = 0;
    for row in batch {
        check_tokens(cfg, row)?;
        predicted += row.len() - 1;
    }
    if predicted == 0 {
        return Err(invalid("batch has no predicted positions"));
    }
    Ok(predicted)
}

/// Mean next-token cross-entropy (nats) and its gradient.
pub(crate) fn batch_loss_grads(
    cfg: &ModelConfig,
    layout: &Layout,
    p: &[f64],
    batch: &[Vec<TokenId>],
) -> Result<(f64, Vec<f64>)> {
    let predicted = check_batch(cfg, batch)?;
    let scale = 1.0 / predicted as f64;
    let groups: Vec<&[Vec<TokenId>]> = batch.chunks(ROWS_PER_GROUP).collect();
    let wave = rayon::current_num_threads().max(1);
    let mut total = vec![0.0; layout.total()];
    let mut nll = 0.0;
    for wave_groups in groups.chunks(wave) {
        let parts: Vec<(f64, Vec<f64>)> = wave_groups
            .par_iter()
            .map(|rows| {
                let mut g = vec![0.0; layout.total()];
                let s: f64 = rows.iter().map(|r| row_loss_grads(cfg, layout, p, r, scale, &mut g)).sum();
                (s, g)
            })
            .collect();
        for (s, g) in parts {
            nll += s;
            for (t, x) in total.iter_mut().zip(&g) {
                *t += x;
            }
        }
    }
    Ok((nll * scale, total))
}

/// Summed NLL and number of predicted positions for one row.
pub(crate) fn row_nll(cfg: &ModelConfig, layout: &Layout, p: &[f64], ids: &[TokenId]) -> (f64, usize) {
    let v = cfg.vocab_size;
    let mut logits = forward_seq(cfg, layout, p, ids).logits;
    let mut nll = 0.0;
    for t in 0..ids.len().saturating_sub(1) {
        let row = &mut logits[t * v..(t + 1) * v];
        log_softmax(row);
        nll -= row[ids[t + 1] as usize];
    }
    (nll, ids.len().saturating_sub(1))
}

pub(crate) fn forward_logits(cfg: &ModelConfig, layout: &Layout, p: &[f64], ids: &[TokenId]) -> Vec<f64> {
    forward_seq(cfg, layout, p, ids).logits
}

/// Logits `[positions x vocab]`, row-major.
pub fn forward(ckpt: &Checkpoint, ids: &[TokenId]) -> Result<Vec<f64>> {
    check_tokens(&ckpt.config, ids)?;
    Ok(forward_logits(&ckpt.config, &ckpt.layout(), &ckpt.params, ids))
}

/// Mean next-token cross-entropy over every predicted position in `batch`.
pub fn loss(ckpt: &Checkpoint, batch: &[Vec<TokenId>]) -> Result<f64> {
    let predicted = check_batch(&ckpt.config, batch)?;
    let layout = ckpt.layout();
    let nll: f64 = batch
        .iter()
        .map(|r| row_nll(&ckpt.config, &layout, &ckpt.params, r).0)
        .sum();
    Ok(nll / predicted as f64)
}

/// Mean next-token cross-entropy and gradients for every parameter, laid
/// out like [`Checkpoint::params`].
pub fn loss_and_grads(ckpt: &Checkpoint, batch: &[Vec<TokenId>]) -> Result<(f64, Vec<f64>)> {
    batch_loss_grads(&ckpt.config, &ckpt.layout(), &ckpt.params, batch)
}
