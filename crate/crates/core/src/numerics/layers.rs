//! Differentiable layer primitives composed from graph operations.

use crate::{Error, Result};

use super::graph::{Graph, Var};
use super::kernels::{invert_map, patchify_map};
use super::tensor::Real;

/// Pointwise channel mixing of `x[C_in × ...]` by `w[C_out × C_in]` plus `b[C_out]`.
pub fn conv1x1<E: Real>(g: &mut Graph<E>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let &[c_out, c_in] = g.shape(w) else {
        return Err(Error::Dimension(format!(
            "conv1x1 weight must be [C_out × C_in], got {:?}",
            g.shape(w)
        )));
    };
    if xs.first() != Some(&c_in) {
        return Err(Error::Dimension(format!(
            "conv1x1: input {xs:?} does not have {c_in} channels"
        )));
    }
    let sites: usize = xs[1..].iter().product();
    let flat = g.reshape(x, &[c_in, sites])?;
    let y = g.matmul(w, flat)?;
    let y = g.add_col_vector(y, b)?;
    let mut out_shape = xs;
    out_shape[0] = c_out;
    g.reshape(y, &out_shape)
}

/// Layer normalization across the channel axis of `x[C × ...]`, independently per site.
pub fn channel_layernorm<E: Real>(
    g: &mut Graph<E>,
    x: Var,
    gain: Var,
    bias: Var,
    eps: f64,
) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let c = *xs
        .first()
        .ok_or_else(|| Error::Shape("channel layernorm on a scalar".into()))?;
    let sites: usize = xs[1..].iter().product();
    let flat = g.reshape(x, &[c, sites])?;
    let rows = g.transpose(flat)?;
    let normed = g.layernorm(rows, gain, bias, eps)?;
    let back = g.transpose(normed)?;
    g.reshape(back, &xs)
}

/// `x[n×k] · w[m×k]ᵀ (+ b[m])`.
pub fn linear<E: Real>(g: &mut Graph<E>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = g.matmul_bt(x, w)?;
    match b {
        Some(b) => g.add_row_vector(y, b),
        None => Ok(y),
    }
}

/// Multi-head scaled dot-product attention of queries `q[n×d]` over `k, v[m×d]`.
pub fn attention<E: Real>(g: &mut Graph<E>, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let (&[n, d], &[m, dk], &[mv, dv]) = (g.shape(q), g.shape(k), g.shape(v)) else {
        return Err(Error::Dimension(format!(
            "attention expects matrices, got q {:?}, k {:?}, v {:?}",
            g.shape(q),
            g.shape(k),
            g.shape(v)
        )));
    };
    if dk != d || dv != d || mv != m {
        return Err(Error::Dimension(format!(
            "attention: q [{n}×{d}], k [{m}×{dk}], v [{mv}×{dv}] are incompatible"
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "{heads} heads do not divide width {d}"
        )));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = g.matmul_bt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let p = g.softmax(scores)?;
        outs.push(g.matmul(p, vh)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        g.concat(&outs, 1)
    }
}

/// Patch tokens `[N × C·pt·ph·pw]` of `x[C×T×H×W]`.
pub fn patchify<E: Real>(g: &mut Graph<E>, x: Var, patch: [usize; 3]) -> Result<Var> {
    let (map, shape) = patchify_map(g.shape(x), patch)?;
    g.gather(x, map, &shape)
}

/// Inverse of [`patchify`] onto the grid `[C×T×H×W]`.
pub fn unpatchify<E: Real>(
    g: &mut Graph<E>,
    tokens: Var,
    grid: [usize; 4],
    patch: [usize; 3],
) -> Result<Var> {
    let (map, shape) = patchify_map(&grid, patch)?;
    if g.shape(tokens) != shape {
        return Err(Error::Shape(format!(
            "unpatchify: tokens {:?} do not match grid {grid:?} with patch {patch:?}",
            g.shape(tokens)
        )));
    }
    g.gather(tokens, invert_map(&map), &grid)
}
