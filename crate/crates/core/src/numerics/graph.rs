//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; nodes are
//! therefore already in topological order and [`Graph::backward`] walks the
//! tape in reverse exactly once.

use std::collections::HashMap;
use std::sync::Arc;

use crate::{Error, Result};

use super::kernels::{self, conv3d_geom, gemm_into, transpose_map, Conv3dGeom};
use super::params::{ParamId, ParamStore};
use super::tensor::{numel, Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<E> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, E),
    Matmul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Gather {
        src: Var,
        map: Arc<[usize]>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: E,
    },
    Gelu(Var),
    Silu(Var),
    Conv3d {
        x: Var,
        w: Var,
        b: Var,
        geom: Conv3dGeom,
    },
    Sum(Var),
}

struct Node<E> {
    op: Op<E>,
    value: Tensor<E>,
    requires_grad: bool,
}

/// Computation record for one forward pass and at most one backward pass.
pub struct Graph<E: Real = f32> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Tensor<E>>>,
    backward_done: bool,
    tracking: bool,
    bound: HashMap<ParamId, Var>,
    overrides: HashMap<ParamId, Tensor<E>>,
}

impl<E: Real> std::fmt::Debug for Graph<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("params", &self.bound.len())
            .field("backward_done", &self.backward_done)
            .finish()
    }
}

impl<E: Real> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<E: Real> Graph<E> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            tracking: true,
            bound: HashMap::new(),
            overrides: HashMap::new(),
        }
    }

    /// A graph whose parameters never require gradients.
    pub fn inference() -> Self {
        Graph {
            tracking: false,
            ..Self::new()
        }
    }

    /// Use `value` instead of the stored parameter value when `id` is bound.
    /// Overridden parameters always receive gradients in a tracking graph.
    pub fn override_param(&mut self, id: ParamId, value: Tensor<E>) {
        self.overrides.insert(id, value);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, op: Op<E>, value: Tensor<E>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.input(value, false)
    }

    pub fn input(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; binding the same id twice returns the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.get(id);
        let value = match self.overrides.get(&id) {
            Some(v) => v.clone(),
            None => p.value.cast(),
        };
        let overridden = self.overrides.contains_key(&id);
        let v = self.input(value, self.tracking && (p.trainable || overridden));
        self.bound.insert(id, v);
        v
    }

    /// Node a parameter was bound to, if it was used.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.bound.get(&id).copied()
    }

    /// Parameters bound in this graph, in id order.
    pub fn bound_params(&self) -> Vec<(ParamId, Var)> {
        let mut out: Vec<_> = self.bound.iter().map(|(&id, &v)| (id, v)).collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Add this pass's parameter gradients into the store's gradient buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (id, v) in self.bound_params() {
            if let Some(g) = self.grad(v) {
                let p = store.get_mut(id);
                for (dst, &src) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *dst += src.to_f32();
                }
            }
        }
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension(format!(
                "{what}: shapes {sa:?} and {sb:?} differ"
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = E::from_f64(c);
        let value = self.value(a).scale(c);
        self.push(Op::Scale(a, c), value, &[a])
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · b[n×k]ᵀ`, the layout of a linear layer's weight.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let value = kernels::matmul_t(self.value(a), false, self.value(b), trans_b)?;
        Ok(self.push(Op::Matmul { a, b, trans_b }, value, &[a, b]))
    }

    /// `out[i] = src[map[i]]`, reshaped to `shape`.
    pub fn gather(
        &mut self,
        src: Var,
        map: impl Into<Arc<[usize]>>,
        shape: &[usize],
    ) -> Result<Var> {
        let map: Arc<[usize]> = map.into();
        if map.len() != numel(shape) {
            return Err(Error::Shape(format!(
                "gather map of {} entries cannot fill shape {shape:?}",
                map.len()
            )));
        }
        let n = self.value(src).len();
        if let Some(bad) = map.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!(
                "gather index {bad} out of range for {n} elements"
            )));
        }
        let value = Tensor::new(
            shape.to_vec(),
            kernels::gather(self.value(src).data(), &map),
        )?;
        Ok(self.push(Op::Gather { src, map }, value, &[src]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(Op::Reshape(x), value, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let &[r, c] = self.shape(x) else {
            return Err(Error::Shape(format!(
                "transpose expects a matrix, got {:?}",
                self.shape(x)
            )));
        };
        self.gather(x, transpose_map(r, c), &[c, r])
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let &[r, c] = self.shape(x) else {
            return Err(Error::Shape("slice_cols expects a matrix".into()));
        };
        if start + len > c {
            return Err(Error::Shape(format!(
                "columns {start}..{} out of range for width {c}",
                start + len
            )));
        }
        let map: Vec<usize> = (0..r)
            .flat_map(|i| (start..start + len).map(move |j| i * c + j))
            .collect();
        self.gather(x, map, &[r, len])
    }

    /// Adds vector `b[d]` to every row of `x[n×d]`.
    pub fn add_row_vector(&mut self, x: Var, b: Var) -> Result<Var> {
        let &[n, d] = self.shape(x) else {
            return Err(Error::Shape("add_row_vector expects a matrix".into()));
        };
        if self.shape(b) != [d] {
            return Err(Error::Dimension(format!(
                "row bias {:?} does not match width {d}",
                self.shape(b)
            )));
        }
        let map: Vec<usize> = (0..n * d).map(|i| i % d).collect();
        let bb = self.gather(b, map, &[n, d])?;
        self.add(x, bb)
    }

    /// Adds vector `b[c]` to every column of `x[c×s]`.
    pub fn add_col_vector(&mut self, x: Var, b: Var) -> Result<Var> {
        let &[c, s] = self.shape(x) else {
            return Err(Error::Shape("add_col_vector expects a matrix".into()));
        };
        if self.shape(b) != [c] {
            return Err(Error::Dimension(format!(
                "column bias {:?} does not match {c} rows",
                self.shape(b)
            )));
        }
        let map: Vec<usize> = (0..c * s).map(|i| i / s).collect();
        let bb = self.gather(b, map, &[c, s])?;
        self.add(x, bb)
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!(
                "concat axis {axis} on shape {base:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !compatible {
                return Err(Error::Dimension(format!(
                    "concat along axis {axis}: {s:?} incompatible with {base:?}"
                )));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let chunk = v.len() / outer;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            value,
            parts,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = *v
            .shape()
            .last()
            .ok_or_else(|| Error::Shape("softmax on a scalar".into()))?;
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(d) {
            let m = row.iter().copied().fold(row[0], E::max);
            let mut s = E::ZERO;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            for e in row.iter_mut() {
                *e = *e / s;
            }
        }
        let value = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(Op::Softmax(x), value, &[x]))
    }

    /// Normalizes each vector along the last axis, then applies `gain`/`bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = *self
            .shape(x)
            .last()
            .ok_or_else(|| Error::Shape("layernorm on a scalar".into()))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Dimension(format!(
                "layernorm over width {d} with gain {:?} and bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let eps = E::from_f64(eps);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let xv = self.value(x);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(d) {
            let (mean, rstd) = row_stats(row, eps);
            out.extend(
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| (v - mean) * rstd * g[j] + b[j]),
            );
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            Op::LayerNorm { x, gain, bias, eps },
            value,
            &[x, gain, bias],
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| {
            let c = E::from_f64(GELU_C);
            let a = E::from_f64(GELU_A);
            E::from_f64(0.5) * v * (E::ONE + (c * (v + a * v * v * v)).tanh())
        });
        self.push(Op::Gelu(x), value, &[x])
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * sigmoid(v));
        self.push(Op::Silu(x), value, &[x])
    }

    /// Same-padded 3-D cross-correlation, `x[C×T×H×W]`, `w[O×C×kt×kh×kw]`, `b[O]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: [usize; 3]) -> Result<Var> {
        conv3d_geom(self.shape(x), self.shape(w), self.shape(b), stride)?;
        let (value, geom) = kernels::conv3d(self.value(x), self.value(w), self.value(b), stride)?;
        Ok(self.push(Op::Conv3d { x, w, b, geom }, value, &[x, w, b]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), value, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Populate gradients of `loss` with respect to every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Usage(
                "backward already ran on this graph; build a new graph".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), E::ONE));
        let mut leaf_grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            let mut acc = |v: Var, t: Tensor<E>| accumulate(&mut grads, nodes, v, t);
            match &nodes[i].op {
                Op::Leaf => leaf_grads[i] = Some(g),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].requires_grad {
                        acc(*a, g.zip_map(bv, |x, y| x * y)?);
                    }
                    if nodes[b.0].requires_grad {
                        acc(*b, g.zip_map(av, |x, y| x * y)?);
                    }
                }
                Op::Scale(a, c) => acc(*a, g.scale(*c)),
                Op::Matmul { a, b, trans_b } => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].requires_grad {
                        // dA = G · op(B)ᵀ
                        acc(*a, kernels::matmul_t(&g, false, bv, !trans_b)?);
                    }
                    if nodes[b.0].requires_grad {
                        // dB = Aᵀ · G, or (Aᵀ · G)ᵀ = Gᵀ · A when B is stored transposed
                        let gb = if *trans_b {
                            kernels::matmul_t(&g, true, av, false)?
                        } else {
                            kernels::matmul_t(av, true, &g, false)?
                        };
                        acc(*b, gb);
                    }
                }
                Op::Gather { src, map } => {
                    let sv = &nodes[src.0].value;
                    let mut out = vec![E::ZERO; sv.len()];
                    for (&dst, &gv) in map.iter().zip(g.data()) {
                        out[dst] += gv;
                    }
                    acc(*src, Tensor::new(sv.shape().to_vec(), out)?);
                }
                Op::Concat { parts, axis } => {
                    let outer = numel(&g.shape()[..*axis]);
                    let total_chunk = g.len() / outer;
                    let mut offset = 0;
                    for &p in parts {
                        let pv = &nodes[p.0].value;
                        let chunk = pv.len() / outer;
                        if nodes[p.0].requires_grad {
                            let mut out = Vec::with_capacity(pv.len());
                            for o in 0..outer {
                                let start = o * total_chunk + offset;
                                out.extend_from_slice(&g.data()[start..start + chunk]);
                            }
                            acc(p, Tensor::new(pv.shape().to_vec(), out)?);
                        }
                        offset += chunk;
                    }
                }
                Op::Reshape(x) => {
                    let shape = nodes[x.0].value.shape().to_vec();
                    acc(*x, g.reshape(shape)?);
                }
                Op::Softmax(x) => {
                    let y = &nodes[i].value;
                    let d = *y.shape().last().unwrap_or(&1);
                    let mut out = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(d).zip(g.data().chunks(d)) {
                        let dot: E = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        out.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
                    }
                    acc(*x, Tensor::new(y.shape().to_vec(), out)?);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let xv = &nodes[x.0].value;
                    let gamma = nodes[gain.0].value.data();
                    let d = gamma.len();
                    let mut dx = Vec::with_capacity(xv.len());
                    let mut dgain = vec![E::ZERO; d];
                    let mut dbias = vec![E::ZERO; d];
                    let inv_d = E::from_f64(1.0 / d as f64);
                    for (xr, gr) in xv.data().chunks(d).zip(g.data().chunks(d)) {
                        let (mean, rstd) = row_stats(xr, *eps);
                        let xhat: Vec<E> = xr.iter().map(|&v| (v - mean) * rstd).collect();
                        let mut sum_gx = E::ZERO;
                        let mut sum_gx_xhat = E::ZERO;
                        for j in 0..d {
                            dgain[j] += gr[j] * xhat[j];
                            dbias[j] += gr[j];
                            let gx = gr[j] * gamma[j];
                            sum_gx += gx;
                            sum_gx_xhat += gx * xhat[j];
                        }
                        let (m1, m2) = (sum_gx * inv_d, sum_gx_xhat * inv_d);
                        dx.extend((0..d).map(|j| rstd * (gr[j] * gamma[j] - m1 - xhat[j] * m2)));
                    }
                    acc(*x, Tensor::new(xv.shape().to_vec(), dx)?);
                    acc(*gain, Tensor::new([d], dgain)?);
                    acc(*bias, Tensor::new([d], dbias)?);
                }
                Op::Gelu(x) => {
                    let xv = &nodes[x.0].value;
                    let c = E::from_f64(GELU_C);
                    let a = E::from_f64(GELU_A);
                    let half = E::from_f64(0.5);
                    let three_a = E::from_f64(3.0 * GELU_A);
                    let dx = xv.zip_map(&g, |v, gv| {
                        let th = (c * (v + a * v * v * v)).tanh();
                        let d = half * (E::ONE + th)
                            + half * v * (E::ONE - th * th) * c * (E::ONE + three_a * v * v);
                        d * gv
                    })?;
                    acc(*x, dx);
                }
                Op::Silu(x) => {
                    let xv = &nodes[x.0].value;
                    let dx = xv.zip_map(&g, |v, gv| {
                        let s = sigmoid(v);
                        gv * s * (E::ONE + v * (E::ONE - s))
                    })?;
                    acc(*x, dx);
                }
                Op::Conv3d { x, w, b, geom } => {
                    let sites = geom.out_sites();
                    let k = geom.patch_len();
                    let xv = &nodes[x.0].value;
                    if nodes[w.0].requires_grad {
                        let cols = geom.im2col(xv.data());
                        let mut dw = vec![E::ZERO; geom.c_out * k];
                        gemm_into(
                            g.data(),
                            false,
                            &cols,
                            true,
                            geom.c_out,
                            sites,
                            k,
                            E::ZERO,
                            &mut dw,
                        );
                        acc(*w, Tensor::new(nodes[w.0].value.shape().to_vec(), dw)?);
                    }
                    if nodes[b.0].requires_grad {
                        let db: Vec<E> = g
                            .data()
                            .chunks(sites)
                            .map(|r| r.iter().copied().sum())
                            .collect();
                        acc(*b, Tensor::new([geom.c_out], db)?);
                    }
                    if nodes[x.0].requires_grad {
                        let wv = &nodes[w.0].value;
                        let mut dcols = vec![E::ZERO; k * sites];
                        gemm_into(
                            wv.data(),
                            true,
                            g.data(),
                            false,
                            k,
                            geom.c_out,
                            sites,
                            E::ZERO,
                            &mut dcols,
                        );
                        let mut dx = vec![E::ZERO; xv.len()];
                        geom.col2im(&dcols, &mut dx);
                        acc(*x, Tensor::new(xv.shape().to_vec(), dx)?);
                    }
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    acc(*x, Tensor::full(nodes[x.0].value.shape().to_vec(), gv));
                }
            }
        }
        self.grads = leaf_grads;
        Ok(())
    }
}

fn accumulate<E: Real>(grads: &mut [Option<Tensor<E>>], nodes: &[Node<E>], v: Var, t: Tensor<E>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => {
            for (d, s) in existing.data_mut().iter_mut().zip(t.data()) {
                *d += *s;
            }
        }
        slot @ None => *slot = Some(t),
    }
}

fn row_stats<E: Real>(row: &[E], eps: E) -> (E, E) {
    let inv = E::from_f64(1.0 / row.len() as f64);
    let mean = row.iter().copied().sum::<E>() * inv;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv;
    (mean, E::ONE / (var + eps).sqrt())
}

fn sigmoid<E: Real>(v: E) -> E {
    E::ONE / (E::ONE + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_example() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[2, 1], &[0.0, 1.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[2.0, 4.0]);
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut g = Graph::<f32>::new();
        let i = g.constant(Tensor::eye(3));
        let m = g.constant(Tensor::from_fn([3, 3], |k| k as f32 * 0.5 - 1.0));
        let out = g.matmul(i, m).unwrap();
        assert_eq!(g.value(out), g.value(m));
    }

    #[test]
    fn backward_twice_is_usage_error() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[1.0, 2.0]), true);
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Usage(_))));
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[1.0, 2.0]), true);
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        // d/dx sum(x*x) = 2x
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[3], &[1.0, -2.0, 0.5]), true);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_fn([4, 7], |i| (i as f32 * 1.7).sin() * 10.0));
        let y = g.softmax(x).unwrap();
        for row in g.value(y).data().chunks(7) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn layernorm_of_pair() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 2], &[1.0, 3.0]));
        let gain = g.constant(Tensor::ones([2]));
        let bias = g.constant(Tensor::zeros([2]));
        let y = g.layernorm(x, gain, bias, 1e-12).unwrap();
        let out = g.value(y).data();
        assert!((out[0] + 1.0).abs() < 1e-9 && (out[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layernorm_constant_row_is_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full([2, 5], 3.25));
        let gain = g.constant(Tensor::ones([5]));
        let bias = g.constant(Tensor::zeros([5]));
        let y = g.layernorm(x, gain, bias, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_then_backward_splits() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[2, 1], &[1.0, 2.0]), true);
        let b = g.input(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]), true);
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let p = g.mul(c, w).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[1.0, 4.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn conv3d_counts_ones() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::ones([1, 5, 5, 5]));
        let w = g.constant(Tensor::ones([1, 1, 3, 3, 3]));
        let b = g.constant(Tensor::zeros([1]));
        let y = g.conv3d(x, w, b, [1, 1, 1]).unwrap();
        let v = g.value(y);
        assert_eq!(v.shape(), &[1, 5, 5, 5]);
        // interior site (2,2,2)
        assert_eq!(v.data()[(2 * 5 + 2) * 5 + 2], 27.0);
        // corner sees only 2×2×2 of the input
        assert_eq!(v.data()[0], 8.0);
    }

    #[test]
    fn conv3d_unit_kernel_is_identity() {
        let mut g = Graph::<f32>::new();
        let data = Tensor::from_fn([2, 3, 4, 4], |i| i as f32 * 0.1);
        let x = g.constant(data.clone());
        let mut wt = Tensor::zeros([2, 2, 1, 1, 1]);
        wt.data_mut()[0] = 1.0;
        wt.data_mut()[3] = 1.0;
        let w = g.constant(wt);
        let b = g.constant(Tensor::zeros([2]));
        let y = g.conv3d(x, w, b, [1, 1, 1]).unwrap();
        assert_eq!(g.value(y), &data);
    }
}
