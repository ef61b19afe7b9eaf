//! Forward and backward passes of the Transformer building blocks.
//!
//! Activations are `tokens × features` matrices. Every backward function
//! accumulates parameter gradients into a structure shaped like the parameters
//! and returns the gradient with respect to its input.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, RngCore};

use crate::params::{BlockParams, LayerNorm, Linear};
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn linear_forward<T: Scalar>(x: &Array2<T>, l: &Linear<T>) -> Array2<T> {
    let mut y = x.dot(&l.weight);
    y += &l.bias;
    y
}

pub fn linear_backward<T: Scalar>(x: &Array2<T>, dy: &Array2<T>, l: &Linear<T>, g: &mut Linear<T>) -> Array2<T> {
    general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut g.weight);
    g.bias += &dy.sum_axis(Axis(0));
    dy.dot(&l.weight.t())
}

pub struct NormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

pub fn layer_norm_forward<T: Scalar>(x: &Array2<T>, ln: &LayerNorm<T>) -> (Array2<T>, NormCache<T>) {
    let d = T::of(x.ncols() as f64);
    let eps = T::of(LAYER_NORM_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *inv = T::one() / (var + eps).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| v * s);
    }
    let mut y = &xhat * &ln.gain;
    y += &ln.bias;
    (y, NormCache { xhat, inv_std })
}

pub fn layer_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &NormCache<T>,
    ln: &LayerNorm<T>,
    g: &mut LayerNorm<T>,
) -> Array2<T> {
    g.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    g.bias += &dy.sum_axis(Axis(0));
    let d = T::of(dy.ncols() as f64);
    let mut dx = dy * &ln.gain;
    for ((mut row, xh), &inv) in dx
        .outer_iter_mut()
        .zip(cache.xhat.outer_iter())
        .zip(cache.inv_std.iter())
    {
        let mean_d = row.sum() / d;
        let mean_dx = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
        Zip::from(&mut row)
            .and(&xh)
            .for_each(|v, &x| *v = inv * (*v - mean_d - x * mean_dx));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu<T: Scalar>(u: T) -> T {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    half * u * (T::one() + (c * (u + a * u * u * u)).tanh())
}

pub fn gelu_grad<T: Scalar>(u: T) -> T {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    let t = (c * (u + a * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * u * u)
}

/// Multi-head self-attention restricted to each sequence's unmasked keys.
///
/// `seqs` lists token indices of each independent sequence (a grid row or
/// column). Returns the context matrix and, per sequence, the attention
/// probabilities laid out `heads × len × len`.
pub fn attention_forward<T: Scalar>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    seqs: &[Vec<usize>],
    mask: &[bool],
    heads: usize,
) -> (Array2<T>, Vec<Vec<T>>) {
    let (n, h) = q.dim();
    let dh = h / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let (qs, ks, vs) = (
        q.as_slice().expect("contiguous"),
        k.as_slice().expect("contiguous"),
        v.as_slice().expect("contiguous"),
    );
    let mut ctx = Array2::<T>::zeros((n, h));
    let cs = ctx.as_slice_mut().expect("contiguous");
    let mut all_probs = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let len = seq.len();
        let mut probs = vec![T::zero(); heads * len * len];
        let valid: Vec<usize> = (0..len).filter(|&b| mask[seq[b]]).collect();
        if !valid.is_empty() {
            for head in 0..heads {
                let off = head * dh;
                for (a, &ia) in seq.iter().enumerate() {
                    let qa = &qs[ia * h + off..ia * h + off + dh];
                    let p = &mut probs[(head * len + a) * len..(head * len + a + 1) * len];
                    let mut max = T::neg_infinity();
                    for &b in &valid {
                        let ib = seq[b];
                        let kb = &ks[ib * h + off..ib * h + off + dh];
                        let s = qa.iter().zip(kb).map(|(&x, &y)| x * y).sum::<T>() * scale;
                        p[b] = s;
                        max = max.max(s);
                    }
                    let mut z = T::zero();
                    for &b in &valid {
                        p[b] = (p[b] - max).exp();
                        z += p[b];
                    }
                    let ca = &mut cs[ia * h + off..ia * h + off + dh];
                    for &b in &valid {
                        p[b] /= z;
                        let ib = seq[b];
                        let vb = &vs[ib * h + off..ib * h + off + dh];
                        ca.iter_mut().zip(vb).for_each(|(c, &x)| *c += p[b] * x);
                    }
                }
            }
        }
        all_probs.push(probs);
    }
    (ctx, all_probs)
}

#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    probs: &[Vec<T>],
    seqs: &[Vec<usize>],
    mask: &[bool],
    heads: usize,
    dctx: &Array2<T>,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let (n, h) = q.dim();
    let dh = h / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let (qs, ks, vs, dcs) = (
        q.as_slice().expect("contiguous"),
        k.as_slice().expect("contiguous"),
        v.as_slice().expect("contiguous"),
        dctx.as_slice().expect("contiguous"),
    );
    let mut dq = Array2::<T>::zeros((n, h));
    let mut dk = Array2::<T>::zeros((n, h));
    let mut dv = Array2::<T>::zeros((n, h));
    {
        let dqs = dq.as_slice_mut().expect("contiguous");
        let dks = dk.as_slice_mut().expect("contiguous");
        let dvs = dv.as_slice_mut().expect("contiguous");
        let mut dp = Vec::new();
        for (seq, probs) in seqs.iter().zip(probs) {
            let len = seq.len();
            let valid: Vec<usize> = (0..len).filter(|&b| mask[seq[b]]).collect();
            if valid.is_empty() {
                continue;
            }
            dp.resize(len, T::zero());
            for head in 0..heads {
                let off = head * dh;
                for (a, &ia) in seq.iter().enumerate() {
                    let p = &probs[(head * len + a) * len..(head * len + a + 1) * len];
                    let dca = &dcs[ia * h + off..ia * h + off + dh];
                    let mut weighted = T::zero();
                    for &b in &valid {
                        let ib = seq[b];
                        let vb = &vs[ib * h + off..ib * h + off + dh];
                        dp[b] = dca.iter().zip(vb).map(|(&x, &y)| x * y).sum::<T>();
                        weighted += p[b] * dp[b];
                        let dvb = &mut dvs[ib * h + off..ib * h + off + dh];
                        dvb.iter_mut().zip(dca).for_each(|(d, &g)| *d += p[b] * g);
                    }
                    let qa: Vec<T> = qs[ia * h + off..ia * h + off + dh].to_vec();
                    for &b in &valid {
                        let ds = p[b] * (dp[b] - weighted) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        let ib = seq[b];
                        let kb = &ks[ib * h + off..ib * h + off + dh];
                        let dqa = &mut dqs[ia * h + off..ia * h + off + dh];
                        dqa.iter_mut().zip(kb).for_each(|(d, &x)| *d += ds * x);
                        let dkb = &mut dks[ib * h + off..ib * h + off + dh];
                        dkb.iter_mut().zip(&qa).for_each(|(d, &x)| *d += ds * x);
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

fn dropout_mask<T: Scalar>(shape: (usize, usize), rate: f64, rng: &mut dyn RngCore) -> Array2<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { T::zero() } else { keep })
}

pub struct BlockCache<T> {
    x: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Vec<T>>,
    ctx: Array2<T>,
    attn_drop: Option<Array2<T>>,
    attn_norm: NormCache<T>,
    h1: Array2<T>,
    u: Array2<T>,
    act: Array2<T>,
    ff_drop: Option<Array2<T>>,
    ff_norm: NormCache<T>,
}

pub struct BlockSpec<'a> {
    pub seqs: &'a [Vec<usize>],
    pub mask: &'a [bool],
    pub heads: usize,
    pub dropout: f64,
}

/// Self-attention, residual, layer norm, then GELU feed-forward, residual,
/// layer norm.
pub fn block_forward<T: Scalar>(
    p: &BlockParams<T>,
    x: &Array2<T>,
    spec: &BlockSpec<'_>,
    mut rng: Option<&mut dyn RngCore>,
) -> (Array2<T>, BlockCache<T>) {
    let q = linear_forward(x, &p.query);
    let k = linear_forward(x, &p.key);
    let v = linear_forward(x, &p.value);
    let (ctx, probs) = attention_forward(&q, &k, &v, spec.seqs, spec.mask, spec.heads);
    let mut attn = linear_forward(&ctx, &p.output);
    let attn_drop = match rng.as_mut() {
        Some(r) if spec.dropout > 0.0 => {
            let m = dropout_mask(attn.dim(), spec.dropout, &mut **r);
            attn *= &m;
            Some(m)
        }
        _ => None,
    };
    let z1 = x + &attn;
    let (h1, attn_norm) = layer_norm_forward(&z1, &p.attn_norm);
    let u = linear_forward(&h1, &p.ff_in);
    let act = u.mapv(gelu);
    let mut f = linear_forward(&act, &p.ff_out);
    let ff_drop = match rng {
        Some(r) if spec.dropout > 0.0 => {
            let m = dropout_mask(f.dim(), spec.dropout, r);
            f *= &m;
            Some(m)
        }
        _ => None,
    };
    let z2 = &h1 + &f;
    let (out, ff_norm) = layer_norm_forward(&z2, &p.ff_norm);
    let cache = BlockCache {
        x: x.clone(),
        q,
        k,
        v,
        probs,
        ctx,
        attn_drop,
        attn_norm,
        h1,
        u,
        act,
        ff_drop,
        ff_norm,
    };
    (out, cache)
}

pub fn block_backward<T: Scalar>(
    p: &BlockParams<T>,
    c: &BlockCache<T>,
    dout: &Array2<T>,
    g: &mut BlockParams<T>,
    spec: &BlockSpec<'_>,
) -> Array2<T> {
    let dz2 = layer_norm_backward(dout, &c.ff_norm, &p.ff_norm, &mut g.ff_norm);
    let mut df = dz2.clone();
    if let Some(m) = &c.ff_drop {
        df *= m;
    }
    let mut dact = linear_backward(&c.act, &df, &p.ff_out, &mut g.ff_out);
    Zip::from(&mut dact).and(&c.u).for_each(|d, &u| *d *= gelu_grad(u));
    let mut dh1 = linear_backward(&c.h1, &dact, &p.ff_in, &mut g.ff_in);
    dh1 += &dz2;
    let dz1 = layer_norm_backward(&dh1, &c.attn_norm, &p.attn_norm, &mut g.attn_norm);
    let mut dattn = dz1.clone();
    if let Some(m) = &c.attn_drop {
        dattn *= m;
    }
    let dctx = linear_backward(&c.ctx, &dattn, &p.output, &mut g.output);
    let (dq, dk, dv) = attention_backward(&c.q, &c.k, &c.v, &c.probs, spec.seqs, spec.mask, spec.heads, &dctx);
    let mut dx = dz1;
    dx += &linear_backward(&c.x, &dq, &p.query, &mut g.query);
    dx += &linear_backward(&c.x, &dk, &p.key, &mut g.key);
    dx += &linear_backward(&c.x, &dv, &p.value, &mut g.value);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &u in &[-3.0f64, -1.0, -0.1, 0.0, 0.3, 2.5] {
            let eps = 1e-6;
            let fd = (gelu(u + eps) - gelu(u - eps)) / (2.0 * eps);
            assert!((fd - gelu_grad(u)).abs() < 1e-8, "u={u}");
        }
    }

    #[test]
    fn layer_norm_normalizes() {
        let x = Array2::from_shape_vec((2, 4), vec![1.0f64, 2.0, 3.0, 4.0, -1.0, 0.0, 0.0, 5.0]).unwrap();
        let (y, _) = layer_norm_forward(&x, &LayerNorm::new(4));
        for row in y.outer_iter() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn attention_ignores_masked_keys() {
        let q = Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64 * 0.3);
        let k = q.clone();
        let mut v = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64);
        let seqs = vec![vec![0, 1, 2]];
        let mask = [true, true, false];
        let (a, _) = attention_forward(&q, &k, &v, &seqs, &mask, 1);
        v.row_mut(2).fill(1e6);
        let (b, _) = attention_forward(&q, &k, &v, &seqs, &mask, 1);
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(1), b.row(1));
    }

    #[test]
    fn attention_with_no_valid_keys_is_zero() {
        let q = Array2::<f64>::ones((2, 2));
        let (ctx, _) = attention_forward(&q, &q, &q, &[vec![0, 1]], &[false, false], 2);
        assert!(ctx.iter().all(|&x| x == 0.0));
    }
}
