//! Dense kernels on row-major matrices, with their backward passes.

use crate::real::{c, Real};

const NORM_EPS: f64 = 1e-5;

/// `y[r, o] = b[o] + sum_k x[r, k] * w[o, k]` for `rows` input rows.
pub fn affine<F: Real>(x: &[F], rows: usize, w: &[F], b: &[F], out: usize, inp: usize) -> Vec<F> {
    debug_assert_eq!(x.len(), rows * inp);
    debug_assert_eq!(w.len(), out * inp);
    let mut y = Vec::with_capacity(rows * out);
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        for o in 0..out {
            let wo = &w[o * inp..(o + 1) * inp];
            let mut acc = b[o];
            for (a, bb) in xr.iter().zip(wo) {
                acc += *a * *bb;
            }
            y.push(acc);
        }
    }
    y
}

/// Accumulates `dw += dy^T x`, `db += sum_r dy[r]`; returns `dx = dy w` when
/// `want_dx`.
#[allow(clippy::too_many_arguments)]
pub fn affine_backward<F: Real>(
    dy: &[F],
    x: &[F],
    rows: usize,
    w: &[F],
    out: usize,
    inp: usize,
    dw: &mut [F],
    db: &mut [F],
    want_dx: bool,
) -> Option<Vec<F>> {
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        let dyr = &dy[r * out..(r + 1) * out];
        for (o, &g) in dyr.iter().enumerate() {
            db[o] += g;
            let dwo = &mut dw[o * inp..(o + 1) * inp];
            for (d, &xv) in dwo.iter_mut().zip(xr) {
                *d += g * xv;
            }
        }
    }
    if !want_dx {
        return None;
    }
    let mut dx = vec![F::zero(); rows * inp];
    for r in 0..rows {
        let dxr = &mut dx[r * inp..(r + 1) * inp];
        for (o, &g) in dy[r * out..(r + 1) * out].iter().enumerate() {
            for (d, &wv) in dxr.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                *d += g * wv;
            }
        }
    }
    Some(dx)
}

#[derive(Debug, Clone)]
pub struct NormCache<F> {
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
}

/// Row-wise layer normalization (population variance).
pub fn layer_norm<F: Real>(
    x: &[F],
    rows: usize,
    dim: usize,
    scale: &[F],
    offset: &[F],
) -> (Vec<F>, NormCache<F>) {
    let n = c::<F>(dim as f64);
    let eps = c::<F>(NORM_EPS);
    let mut y = Vec::with_capacity(rows * dim);
    let mut xhat = Vec::with_capacity(rows * dim);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mean = xr.iter().copied().sum::<F>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let inv = F::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for (i, &v) in xr.iter().enumerate() {
            let h = (v - mean) * inv;
            xhat.push(h);
            y.push(scale[i] * h + offset[i]);
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Accumulates scale/offset gradients and returns the input gradient.
pub fn layer_norm_backward<F: Real>(
    dy: &[F],
    cache: &NormCache<F>,
    rows: usize,
    dim: usize,
    scale: &[F],
    dscale: &mut [F],
    doffset: &mut [F],
) -> Vec<F> {
    let n = c::<F>(dim as f64);
    let mut dx = Vec::with_capacity(rows * dim);
    let mut dxhat = vec![F::zero(); dim];
    for r in 0..rows {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let mut sum_d = F::zero();
        let mut sum_dx = F::zero();
        for i in 0..dim {
            dscale[i] += dyr[i] * xh[i];
            doffset[i] += dyr[i];
            dxhat[i] = dyr[i] * scale[i];
            sum_d += dxhat[i];
            sum_dx += dxhat[i] * xh[i];
        }
        let mean_d = sum_d / n;
        let mean_dx = sum_dx / n;
        let inv = cache.inv_std[r];
        for i in 0..dim {
            dx.push(inv * (dxhat[i] - mean_d - xh[i] * mean_dx));
        }
    }
    dx
}

const GELU_K: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_C: f64 = 0.797_884_560_802_865_4;

/// tanh approximation of GELU.
#[inline]
pub fn gelu<F: Real>(u: F) -> F {
    let half = c::<F>(0.5);
    let t = (c::<F>(GELU_C) * (u + c::<F>(GELU_K) * u * u * u)).tanh();
    half * u * (F::one() + t)
}

#[inline]
pub fn gelu_grad<F: Real>(u: F) -> F {
    let half = c::<F>(0.5);
    let inner = c::<F>(GELU_C) * (u + c::<F>(GELU_K) * u * u * u);
    let t = inner.tanh();
    let dinner = c::<F>(GELU_C) * (F::one() + c::<F>(3.0 * GELU_K) * u * u);
    half * (F::one() + t) + half * u * (F::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_small() {
        // x = [[1, 2]], w = [[1, 0], [2, 3], [-1, 1]], b = [0, 1, 0.5]
        let y = affine(
            &[1.0, 2.0],
            1,
            &[1.0, 0.0, 2.0, 3.0, -1.0, 1.0],
            &[0.0, 1.0, 0.5],
            3,
            2,
        );
        assert_eq!(y, vec![1.0, 9.0, 1.5]);
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for &u in &[-3.0f64, -1.0, -0.2, 0.0, 0.3, 1.7, 4.0] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8, "{u}");
        }
        assert_eq!(gelu(0.0f64), 0.0);
    }

    #[test]
    fn layer_norm_backward_matches_differences() {
        let x = [0.3, -1.2, 2.0, 0.7, 1.1, 1.0, -0.5, 0.2];
        let scale = [1.5, 0.5, -1.0, 2.0];
        let offset = [0.1, 0.0, 0.3, -0.2];
        let w = [0.7, -0.3, 1.1, 0.4, -0.9, 0.25, 0.6, -1.3];
        let loss = |x: &[f64]| -> f64 {
            let (y, _) = layer_norm(x, 2, 4, &scale, &offset);
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer_norm(&x, 2, 4, &scale, &offset);
        let mut ds = [0.0; 4];
        let mut doff = [0.0; 4];
        let dx = layer_norm_backward(&w, &cache, 2, 4, &scale, &mut ds, &mut doff);
        for i in 0..x.len() {
            let mut xp = x;
            let mut xm = x;
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let fd = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-7, "{i}: {fd} vs {}", dx[i]);
        }
    }
}
