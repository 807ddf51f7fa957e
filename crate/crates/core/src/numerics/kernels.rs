//! Plain (non-differentiable) compute kernels shared by the autodiff graph
//! and the inference-only paths.

use crate::{Error, Result};

use super::tensor::{numel, Real, Tensor};

/// `a[m×k] · b[k×n]`, with optional transposition of either operand.
pub fn matmul<E: Real>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    matmul_t(a, false, b, false)
}

pub fn matmul_t<E: Real>(
    a: &Tensor<E>,
    trans_a: bool,
    b: &Tensor<E>,
    trans_b: bool,
) -> Result<Tensor<E>> {
    let (m, k) = dims2(a, trans_a, "matmul lhs")?;
    let (k2, n) = dims2(b, trans_b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul: lhs {:?}{} and rhs {:?}{} have inner extents {k} and {k2}",
            a.shape(),
            if trans_a { "ᵀ" } else { "" },
            b.shape(),
            if trans_b { "ᵀ" } else { "" },
        )));
    }
    let mut out = vec![E::ZERO; m * n];
    gemm_into(
        a.data(),
        trans_a,
        b.data(),
        trans_b,
        m,
        k,
        n,
        E::ZERO,
        &mut out,
    );
    Tensor::new([m, n], out)
}

fn dims2<E: Real>(t: &Tensor<E>, trans: bool, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok(if trans { (c, r) } else { (r, c) }),
        _ => Err(Error::Dimension(format!(
            "{what} must be 2-D, got {:?}",
            t.shape()
        ))),
    }
}

/// `c = op(a)·op(b) + beta·c` where `a` is stored as `m×k` (or `k×m` when
/// transposed) and `b` as `k×n` (or `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into<E: Real>(
    a: &[E],
    trans_a: bool,
    b: &[E],
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    beta: E,
    c: &mut [E],
) {
    let sa = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let sb = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    E::gemm(m, k, n, E::ONE, a, sa, b, sb, beta, c);
}

/// Geometry of a same-padded 3-D cross-correlation.
///
/// Padding per axis totals `kernel - 1`, split floor/ceil between the low and
/// high ends, so each output extent is `ceil(input / stride)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad_lo: [usize; 3],
    pub output: [usize; 3],
}

impl Conv3dGeom {
    pub fn new(
        c_in: usize,
        c_out: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
    ) -> Result<Self> {
        if stride.contains(&0) {
            return Err(Error::Config(format!(
                "conv3d stride {stride:?} has a zero"
            )));
        }
        if kernel.contains(&0) || input.contains(&0) {
            return Err(Error::Shape(format!(
                "conv3d kernel {kernel:?} / input {input:?} has a zero extent"
            )));
        }
        let mut pad_lo = [0; 3];
        let mut output = [0; 3];
        for ax in 0..3 {
            pad_lo[ax] = (kernel[ax] - 1) / 2;
            output[ax] = input[ax].div_ceil(stride[ax]);
        }
        Ok(Conv3dGeom {
            c_in,
            c_out,
            input,
            kernel,
            stride,
            pad_lo,
            output,
        })
    }

    /// Rows of the unfolded input matrix: `c_in · kt · kh · kw`.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    pub fn out_sites(&self) -> usize {
        self.output.iter().product()
    }

    pub fn in_sites(&self) -> usize {
        self.input.iter().product()
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let [kt, kh, kw] = self.kernel;
        [self.c_out, self.c_in, kt, kh, kw]
    }

    pub fn output_shape(&self) -> [usize; 4] {
        let [t, h, w] = self.output;
        [self.c_out, t, h, w]
    }

    /// For each kernel offset along one axis, the (output, input) index pairs
    /// that land inside the unpadded input.
    fn axis_taps(&self, ax: usize) -> Vec<Vec<(usize, usize)>> {
        (0..self.kernel[ax])
            .map(|d| {
                (0..self.output[ax])
                    .filter_map(|o| {
                        let pos = (o * self.stride[ax] + d) as isize - self.pad_lo[ax] as isize;
                        (pos >= 0 && (pos as usize) < self.input[ax]).then_some((o, pos as usize))
                    })
                    .collect()
            })
            .collect()
    }

    /// Unfold `x[c_in × T × H × W]` into `[patch_len × out_sites]`.
    pub fn im2col<E: Real>(&self, x: &[E]) -> Vec<E> {
        let [_, ho, wo] = self.output;
        let [_, hi, wi] = self.input;
        let sites = self.out_sites();
        let taps = [self.axis_taps(0), self.axis_taps(1), self.axis_taps(2)];
        let mut cols = vec![E::ZERO; self.patch_len() * sites];
        let mut row = 0;
        for c in 0..self.c_in {
            let xc = &x[c * self.in_sites()..(c + 1) * self.in_sites()];
            for tt in &taps[0] {
                for th in &taps[1] {
                    for tw in &taps[2] {
                        let dst = &mut cols[row * sites..(row + 1) * sites];
                        for &(ot, it) in tt {
                            for &(oh, ih) in th {
                                let d0 = (ot * ho + oh) * wo;
                                let s0 = (it * hi + ih) * wi;
                                for &(ow, iw) in tw {
                                    dst[d0 + ow] = xc[s0 + iw];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`]: scatter-add columns back onto the input grid.
    pub fn col2im<E: Real>(&self, cols: &[E], dx: &mut [E]) {
        let [_, ho, wo] = self.output;
        let [_, hi, wi] = self.input;
        let sites = self.out_sites();
        let taps = [self.axis_taps(0), self.axis_taps(1), self.axis_taps(2)];
        let mut row = 0;
        for c in 0..self.c_in {
            let in_sites = self.in_sites();
            let xc = &mut dx[c * in_sites..(c + 1) * in_sites];
            for tt in &taps[0] {
                for th in &taps[1] {
                    for tw in &taps[2] {
                        let src = &cols[row * sites..(row + 1) * sites];
                        for &(ot, it) in tt {
                            for &(oh, ih) in th {
                                let d0 = (ot * ho + oh) * wo;
                                let s0 = (it * hi + ih) * wi;
                                for &(ow, iw) in tw {
                                    xc[s0 + iw] += src[d0 + ow];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

/// Plain forward 3-D convolution; `x` is `[c_in × T × H × W]`, `w` is
/// `[c_out × c_in × kt × kh × kw]`, `b` is `[c_out]`.
pub fn conv3d<E: Real>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: &Tensor<E>,
    stride: [usize; 3],
) -> Result<(Tensor<E>, Conv3dGeom)> {
    let geom = conv3d_geom(x.shape(), w.shape(), b.shape(), stride)?;
    let cols = geom.im2col(x.data());
    let sites = geom.out_sites();
    let mut out = vec![E::ZERO; geom.c_out * sites];
    for (o, row) in out.chunks_mut(sites).enumerate() {
        row.fill(b.data()[o]);
    }
    gemm_into(
        w.data(),
        false,
        &cols,
        false,
        geom.c_out,
        geom.patch_len(),
        sites,
        E::ONE,
        &mut out,
    );
    Ok((Tensor::new(geom.output_shape().to_vec(), out)?, geom))
}

pub(crate) fn conv3d_geom(
    x: &[usize],
    w: &[usize],
    b: &[usize],
    stride: [usize; 3],
) -> Result<Conv3dGeom> {
    let (&[c_in, t, h, wd], &[c_out, wc_in, kt, kh, kw]) = (x, w) else {
        return Err(Error::Shape(format!(
            "conv3d expects x[C×T×H×W] and w[O×C×kt×kh×kw], got {x:?} and {w:?}"
        )));
    };
    if wc_in != c_in {
        return Err(Error::Dimension(format!(
            "conv3d: input has {c_in} channels, weight expects {wc_in}"
        )));
    }
    if b != [c_out] {
        return Err(Error::Dimension(format!(
            "conv3d: bias shape {b:?} does not match {c_out} output channels"
        )));
    }
    Conv3dGeom::new(c_in, c_out, [t, h, wd], [kt, kh, kw], stride)
}

/// Gather map turning `[C × T × H × W]` into patch tokens `[N × C·pt·ph·pw]`.
///
/// Tokens are ordered by `(t, h, w)` patch position; each token vector is
/// ordered `(c, dt, dh, dw)`. `out[i] = x[map[i]]`.
pub fn patchify_map(shape: &[usize], patch: [usize; 3]) -> Result<(Vec<usize>, [usize; 2])> {
    let &[c, t, h, w] = shape else {
        return Err(Error::Shape(format!(
            "patchify expects [C×T×H×W], got {shape:?}"
        )));
    };
    let [pt, ph, pw] = patch;
    if patch.contains(&0) || t % pt != 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::Shape(format!(
            "patch {patch:?} does not divide extents [{t}, {h}, {w}]"
        )));
    }
    let (nt, nh, nw) = (t / pt, h / ph, w / pw);
    let width = c * pt * ph * pw;
    let mut map = Vec::with_capacity(numel(shape));
    for it in 0..nt {
        for ih in 0..nh {
            for iw in 0..nw {
                for ci in 0..c {
                    for dt in 0..pt {
                        for dh in 0..ph {
                            for dw in 0..pw {
                                let (tt, hh, ww) = (it * pt + dt, ih * ph + dh, iw * pw + dw);
                                map.push(((ci * t + tt) * h + hh) * w + ww);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((map, [nt * nh * nw, width]))
}

/// Inverse permutation of a gather map.
pub(crate) fn invert_map(map: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; map.len()];
    for (i, &src) in map.iter().enumerate() {
        inv[src] = i;
    }
    inv
}

pub(crate) fn gather<E: Real>(src: &[E], map: &[usize]) -> Vec<E> {
    map.iter().map(|&i| src[i]).collect()
}

/// Patch tokens of a `[C×T×H×W]` tensor.
pub fn patchify<E: Real>(x: &Tensor<E>, patch: [usize; 3]) -> Result<Tensor<E>> {
    let (map, shape) = patchify_map(x.shape(), patch)?;
    Tensor::new(shape.to_vec(), gather(x.data(), &map))
}

/// Inverse of [`patchify`] for a target grid `[C×T×H×W]`.
pub fn unpatchify<E: Real>(
    tokens: &Tensor<E>,
    grid: [usize; 4],
    patch: [usize; 3],
) -> Result<Tensor<E>> {
    let (map, shape) = patchify_map(&grid, patch)?;
    if tokens.shape() != shape {
        return Err(Error::Shape(format!(
            "unpatchify: tokens {:?} do not match grid {grid:?} with patch {patch:?}",
            tokens.shape()
        )));
    }
    Tensor::new(grid.to_vec(), gather(tokens.data(), &invert_map(&map)))
}

/// Gather map transposing a row-major `[r × c]` matrix.
pub(crate) fn transpose_map(r: usize, c: usize) -> Vec<usize> {
    let mut map = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            map.push(i * c + j);
        }
    }
    map
}
