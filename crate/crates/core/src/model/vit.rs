//! Forward and backward passes of the ViT trunk and task heads for a single
//! sample. Samples never interact: attention runs over one volume's tokens.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ops::{
    affine, affine_backward, gelu, gelu_grad, layer_norm, layer_norm_backward, NormCache,
};
use super::params::{Gradients, ModelParams};
use super::patch::patchify;
use crate::data::Volume;
use crate::error::{Error, Result};
use crate::real::{c, Real};
use crate::N_TASKS;

/// Predicted item scores for one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub y_hat: [f64; N_TASKS],
}

/// Global score of a prediction: the plain sum of its item scores.
pub fn compose_global(pred: &Prediction) -> f64 {
    pred.y_hat.iter().sum()
}

#[derive(Debug, Clone)]
struct BlockCache<F> {
    norm1: NormCache<F>,
    a: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    /// Attention probabilities, `[head][query][key]`.
    probs: Vec<F>,
    attn: Vec<F>,
    norm2: NormCache<F>,
    b: Vec<F>,
    u: Vec<F>,
    g: Vec<F>,
}

/// Activations kept from the forward pass for [`backward_sample`].
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    tokens: Vec<F>,
    blocks: Vec<BlockCache<F>>,
    final_norm: NormCache<F>,
    rep: Vec<F>,
    /// Per head: (pre-activation, activation) of the hidden layer.
    head_hidden: Vec<(Vec<F>, Vec<F>)>,
}

impl<F> ForwardCache<F> {
    pub fn representation(&self) -> &[F] {
        &self.rep
    }
}

/// Runs one sample's patch tokens (`n_tokens x patch_len`) through the model.
/// Returns the 13 head outputs and the cache for the backward pass.
pub fn forward_sample<F: Real>(p: &ModelParams<F>, tokens: &[F]) -> (Vec<F>, ForwardCache<F>) {
    let cfg = &p.config;
    let l = &p.layout;
    let d = cfg.embed_dim;
    let n_patch = cfg.n_tokens();
    let t = n_patch + 1;
    let n_heads = cfg.n_heads;
    let hd = cfg.head_dim();
    let m = cfg.mlp_hidden();
    let scale = F::one() / c::<F>(hd as f64).sqrt();

    let emb = affine(
        tokens,
        n_patch,
        p.t(l.patch_weight),
        p.t(l.patch_bias),
        d,
        cfg.patch_len(),
    );
    let pos = p.t(l.pos_embed);
    let mut h = Vec::with_capacity(t * d);
    h.extend(
        p.t(l.summary_token)
            .iter()
            .zip(&pos[..d])
            .map(|(a, b)| *a + *b),
    );
    h.extend(emb.iter().zip(&pos[d..]).map(|(a, b)| *a + *b));

    let mut blocks = Vec::with_capacity(cfg.depth);
    for bi in &l.blocks {
        let (a, norm1) = layer_norm(&h, t, d, p.t(bi.norm1_scale), p.t(bi.norm1_offset));
        let q = affine(&a, t, p.t(bi.q_weight), p.t(bi.q_bias), d, d);
        let k = affine(&a, t, p.t(bi.k_weight), p.t(bi.k_bias), d, d);
        let v = affine(&a, t, p.t(bi.v_weight), p.t(bi.v_bias), d, d);
        let mut probs = vec![F::zero(); n_heads * t * t];
        let mut attn = vec![F::zero(); t * d];
        for head in 0..n_heads {
            let off = head * hd;
            for i in 0..t {
                let qi = &q[i * d + off..i * d + off + hd];
                let row = &mut probs[(head * t + i) * t..(head * t + i + 1) * t];
                let mut max = F::neg_infinity();
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + off..j * d + off + hd];
                    let dot: F = qi.iter().zip(kj).map(|(x, y)| *x * *y).sum();
                    *s = dot * scale;
                    max = max.max(*s);
                }
                let mut z = F::zero();
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                for s in row.iter_mut() {
                    *s = *s / z;
                }
                let out = &mut attn[i * d + off..i * d + off + hd];
                for (j, &pij) in row.iter().enumerate() {
                    for (o, vv) in out.iter_mut().zip(&v[j * d + off..j * d + off + hd]) {
                        *o += pij * *vv;
                    }
                }
            }
        }
        let y = affine(&attn, t, p.t(bi.out_weight), p.t(bi.out_bias), d, d);
        for (hv, yv) in h.iter_mut().zip(&y) {
            *hv += *yv;
        }

        let (b, norm2) = layer_norm(&h, t, d, p.t(bi.norm2_scale), p.t(bi.norm2_offset));
        let u = affine(&b, t, p.t(bi.fc1_weight), p.t(bi.fc1_bias), m, d);
        let g: Vec<F> = u.iter().map(|&x| gelu(x)).collect();
        let z = affine(&g, t, p.t(bi.fc2_weight), p.t(bi.fc2_bias), d, m);
        for (hv, zv) in h.iter_mut().zip(&z) {
            *hv += *zv;
        }
        blocks.push(BlockCache {
            norm1,
            a,
            q,
            k,
            v,
            probs,
            attn,
            norm2,
            b,
            u,
            g,
        });
    }

    // Only the summary token feeds the heads.
    let (rep, final_norm) = layer_norm(&h[..d], 1, d, p.t(l.norm_scale), p.t(l.norm_offset));

    let mut outputs = Vec::with_capacity(cfg.n_tasks);
    let mut head_hidden = Vec::with_capacity(cfg.n_tasks);
    for hi in &l.heads {
        let y = match hi.hidden {
            Some((w1, b1)) => {
                let hh = cfg.head_hidden;
                let pre = affine(&rep, 1, p.t(w1), p.t(b1), hh, d);
                let act: Vec<F> = pre.iter().map(|&x| gelu(x)).collect();
                let y = affine(&act, 1, p.t(hi.weight), p.t(hi.bias), 1, hh)[0];
                head_hidden.push((pre, act));
                y
            }
            None => affine(&rep, 1, p.t(hi.weight), p.t(hi.bias), 1, d)[0],
        };
        outputs.push(y);
    }

    let cache = ForwardCache {
        tokens: tokens.to_vec(),
        blocks,
        final_norm,
        rep,
        head_hidden,
    };
    (outputs, cache)
}

fn pair_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert_ne!(i, j);
    if i < j {
        let (a, b) = v.split_at_mut(j);
        (&mut a[i], &mut b[0])
    } else {
        let (a, b) = v.split_at_mut(i);
        (&mut b[0], &mut a[j])
    }
}

/// Accumulates into `grads` the gradient of `sum_j dy[j] * output_j` for the
/// sample that produced `cache`.
pub fn backward_sample<F: Real>(
    p: &ModelParams<F>,
    cache: &ForwardCache<F>,
    dy: &[F],
    grads: &mut Gradients<F>,
) {
    let cfg = &p.config;
    let l = &p.layout;
    let d = cfg.embed_dim;
    let n_patch = cfg.n_tokens();
    let t = n_patch + 1;
    let n_heads = cfg.n_heads;
    let hd = cfg.head_dim();
    let m = cfg.mlp_hidden();
    let scale = F::one() / c::<F>(hd as f64).sqrt();
    let g = &mut grads.tensors;

    let mut drep = vec![F::zero(); d];
    for (j, hi) in l.heads.iter().enumerate() {
        let dyj = [dy[j]];
        let (dw, db) = pair_mut(g, hi.weight, hi.bias);
        match hi.hidden {
            Some((w1, b1)) => {
                let hh = cfg.head_hidden;
                let (pre, act) = &cache.head_hidden[j];
                let dact =
                    affine_backward(&dyj, act, 1, p.t(hi.weight), 1, hh, dw, db, true).unwrap();
                let dpre: Vec<F> = dact
                    .iter()
                    .zip(pre)
                    .map(|(a, &u)| *a * gelu_grad(u))
                    .collect();
                let (dw1, db1) = pair_mut(g, w1, b1);
                let dr =
                    affine_backward(&dpre, &cache.rep, 1, p.t(w1), hh, d, dw1, db1, true).unwrap();
                for (a, b) in drep.iter_mut().zip(&dr) {
                    *a += *b;
                }
            }
            None => {
                let dr = affine_backward(&dyj, &cache.rep, 1, p.t(hi.weight), 1, d, dw, db, true)
                    .unwrap();
                for (a, b) in drep.iter_mut().zip(&dr) {
                    *a += *b;
                }
            }
        }
    }

    let mut dh = vec![F::zero(); t * d];
    {
        let (ds, doff) = pair_mut(g, l.norm_scale, l.norm_offset);
        let d0 = layer_norm_backward(&drep, &cache.final_norm, 1, d, p.t(l.norm_scale), ds, doff);
        dh[..d].copy_from_slice(&d0);
    }

    for (bi, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
        // MLP branch
        let (dw2, db2) = pair_mut(g, bi.fc2_weight, bi.fc2_bias);
        let dgel =
            affine_backward(&dh, &bc.g, t, p.t(bi.fc2_weight), d, m, dw2, db2, true).unwrap();
        let du: Vec<F> = dgel
            .iter()
            .zip(&bc.u)
            .map(|(a, &u)| *a * gelu_grad(u))
            .collect();
        let (dw1, db1) = pair_mut(g, bi.fc1_weight, bi.fc1_bias);
        let dbn = affine_backward(&du, &bc.b, t, p.t(bi.fc1_weight), m, d, dw1, db1, true).unwrap();
        let (ds, doff) = pair_mut(g, bi.norm2_scale, bi.norm2_offset);
        let dres = layer_norm_backward(&dbn, &bc.norm2, t, d, p.t(bi.norm2_scale), ds, doff);
        for (a, b) in dh.iter_mut().zip(&dres) {
            *a += *b;
        }

        // attention branch
        let (dwo, dbo) = pair_mut(g, bi.out_weight, bi.out_bias);
        let dattn =
            affine_backward(&dh, &bc.attn, t, p.t(bi.out_weight), d, d, dwo, dbo, true).unwrap();
        let mut dq = vec![F::zero(); t * d];
        let mut dk = vec![F::zero(); t * d];
        let mut dv = vec![F::zero(); t * d];
        let mut dprob = vec![F::zero(); t];
        for head in 0..n_heads {
            let off = head * hd;
            for i in 0..t {
                let row = &bc.probs[(head * t + i) * t..(head * t + i + 1) * t];
                let dai = &dattn[i * d + off..i * d + off + hd];
                let mut dot = F::zero();
                for j in 0..t {
                    let vj = &bc.v[j * d + off..j * d + off + hd];
                    let dp: F = dai.iter().zip(vj).map(|(x, y)| *x * *y).sum();
                    dprob[j] = dp;
                    dot += dp * row[j];
                    let dvj = &mut dv[j * d + off..j * d + off + hd];
                    for (o, a) in dvj.iter_mut().zip(dai) {
                        *o += row[j] * *a;
                    }
                }
                let qi = &bc.q[i * d + off..i * d + off + hd];
                for j in 0..t {
                    let ds = row[j] * (dprob[j] - dot) * scale;
                    if ds == F::zero() {
                        continue;
                    }
                    let kj = &bc.k[j * d + off..j * d + off + hd];
                    let dqi = &mut dq[i * d + off..i * d + off + hd];
                    for (o, kk) in dqi.iter_mut().zip(kj) {
                        *o += ds * *kk;
                    }
                    let dkj = &mut dk[j * d + off..j * d + off + hd];
                    for (o, qq) in dkj.iter_mut().zip(qi) {
                        *o += ds * *qq;
                    }
                }
            }
        }
        let mut da = vec![F::zero(); t * d];
        for (dproj, w, b) in [
            (&dq, bi.q_weight, bi.q_bias),
            (&dk, bi.k_weight, bi.k_bias),
            (&dv, bi.v_weight, bi.v_bias),
        ] {
            let (dw, db) = pair_mut(g, w, b);
            let part = affine_backward(dproj, &bc.a, t, p.t(w), d, d, dw, db, true).unwrap();
            for (x, y) in da.iter_mut().zip(&part) {
                *x += *y;
            }
        }
        let (ds, doff) = pair_mut(g, bi.norm1_scale, bi.norm1_offset);
        let dres = layer_norm_backward(&da, &bc.norm1, t, d, p.t(bi.norm1_scale), ds, doff);
        for (a, b) in dh.iter_mut().zip(&dres) {
            *a += *b;
        }
    }

    for (a, b) in g[l.pos_embed].iter_mut().zip(&dh) {
        *a += *b;
    }
    for (a, b) in g[l.summary_token].iter_mut().zip(&dh[..d]) {
        *a += *b;
    }
    let (dw, db) = pair_mut(g, l.patch_weight, l.patch_bias);
    affine_backward(
        &dh[d..],
        &cache.tokens,
        n_patch,
        p.t(l.patch_weight),
        d,
        cfg.patch_len(),
        dw,
        db,
        false,
    );
}

/// Checks a volume against the model's input contract and returns its
/// patch tokens in `F`.
pub(crate) fn tokens_for<F: Real>(p: &ModelParams<F>, v: &Volume) -> Result<Vec<F>> {
    if v.dims != p.config.input_dims {
        return Err(Error::Shape(format!(
            "volume {} has dims {:?}, model expects {:?}",
            v.subject_id, v.dims, p.config.input_dims
        )));
    }
    if v.voxels.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("volume {}", v.subject_id)));
    }
    let tok = patchify(v, p.config.patch_size)?;
    Ok(tok.data.iter().map(|&x| c::<F>(x as f64)).collect())
}

/// The pooled summary-token representation the heads consume.
pub fn shared_representation<F: Real>(p: &ModelParams<F>, v: &Volume) -> Result<Vec<F>> {
    let tokens = tokens_for(p, v)?;
    let (_, cache) = forward_sample(p, &tokens);
    Ok(cache.rep)
}

/// Predicts item scores for every volume in the batch. Samples are processed
/// independently (in parallel); output order follows input order.
pub fn forward<F: Real>(p: &ModelParams<F>, batch: &[&Volume]) -> Result<Vec<Prediction>> {
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    batch
        .par_iter()
        .map(|v| {
            let tokens = tokens_for(p, v)?;
            let (out, _) = forward_sample(p, &tokens);
            let y_hat: [f64; N_TASKS] = std::array::from_fn(|j| out[j].to_f64().unwrap());
            if y_hat.iter().any(|y| !y.is_finite()) {
                return Err(Error::NonFinite(format!("prediction for {}", v.subject_id)));
            }
            Ok(Prediction { y_hat })
        })
        .collect()
}
