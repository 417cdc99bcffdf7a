//! Row-wise dense kernels. Every output row depends only on the matching
//! input row, which is what keeps the decoder causal bit-for-bit.

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[t, o] = bias[o] + sum_i inp[t, i] * w[o, i]`
pub(crate) fn matmul(out: &mut [f64], inp: &[f64], w: &[f64], bias: Option<&[f64]>, in_dim: usize, out_dim: usize) {
    for (orow, irow) in out.chunks_exact_mut(out_dim).zip(inp.chunks_exact(in_dim)) {
        for (o, v) in orow.iter_mut().enumerate() {
            let b = bias.map_or(0.0, |b| b[o]);
            *v = b + dot(irow, &w[o * in_dim..(o + 1) * in_dim]);
        }
    }
}

/// Accumulates gradients of [`matmul`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward(
    dinp: &mut [f64],
    dw: &mut [f64],
    dbias: Option<&mut [f64]>,
    dout: &[f64],
    inp: &[f64],
    w: &[f64],
    in_dim: usize,
    out_dim: usize,
) {
    for (drow, (dorow, irow)) in dinp
        .chunks_exact_mut(in_dim)
        .zip(dout.chunks_exact(out_dim).zip(inp.chunks_exact(in_dim)))
    {
        for (o, &g) in dorow.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let wrow = &w[o * in_dim..(o + 1) * in_dim];
            axpy(drow, g, wrow);
            axpy(&mut dw[o * in_dim..(o + 1) * in_dim], g, irow);
        }
    }
    if let Some(db) = dbias {
        for dorow in dout.chunks_exact(out_dim) {
            for (b, g) in db.iter_mut().zip(dorow) {
                *b += g;
            }
        }
    }
}

/// Layer norm over rows of width `dim`; records mean and reciprocal std.
pub(crate) fn layernorm(
    out: &mut [f64],
    mean: &mut [f64],
    rstd: &mut [f64],
    inp: &[f64],
    g: &[f64],
    b: &[f64],
    dim: usize,
) {
    for (t, (orow, irow)) in out.chunks_exact_mut(dim).zip(inp.chunks_exact(dim)).enumerate() {
        let m = irow.iter().sum::<f64>() / dim as f64;
        let var = irow.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / dim as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..dim {
            orow[i] = (irow[i] - m) * r * g[i] + b[i];
        }
        mean[t] = m;
        rstd[t] = r;
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layernorm_backward(
    dinp: &mut [f64],
    dg: &mut [f64],
    db: &mut [f64],
    dout: &[f64],
    inp: &[f64],
    g: &[f64],
    mean: &[f64],
    rstd: &[f64],
    dim: usize,
) {
    let n = dim as f64;
    for (t, (drow, (dorow, irow))) in dinp
        .chunks_exact_mut(dim)
        .zip(dout.chunks_exact(dim).zip(inp.chunks_exact(dim)))
        .enumerate()
    {
        let (m, r) = (mean[t], rstd[t]);
        let mut sum_dx = 0.0;
        let mut sum_dx_xhat = 0.0;
        for i in 0..dim {
            let xhat = (irow[i] - m) * r;
            let dxhat = dorow[i] * g[i];
            sum_dx += dxhat;
            sum_dx_xhat += dxhat * xhat;
            dg[i] += dorow[i] * xhat;
            db[i] += dorow[i];
        }
        let (mean_dx, mean_dx_xhat) = (sum_dx / n, sum_dx_xhat / n);
        for i in 0..dim {
            let xhat = (irow[i] - m) * r;
            let dxhat = dorow[i] * g[i];
            drow[i] += r * (dxhat - mean_dx - xhat * mean_dx_xhat);
        }
    }
}

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// In-place log-softmax of one row.
pub(crate) fn log_softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    for x in row.iter_mut() {
        *x -= lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.3, 1.9] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn log_softmax_normalises() {
        let mut r = vec![1.0, 2.0, -5.0, 700.0];
        log_softmax(&mut r);
        let s: f64 = r.iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..7).map(f64::from).collect();
        assert_eq!(dot(&a, &a), 91.0);
    }
}
