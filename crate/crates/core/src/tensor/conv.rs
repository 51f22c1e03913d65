//! Strided, padded, dilated 3D (and 2D) convolution.
//!
//! Each batch item is lowered to column blocks (`im2col`) covering a fixed
//! run of output voxels and multiplied by the flattened kernel. The block
//! length depends only on the layer geometry, so results never depend on
//! the thread count. In parallel mode batch items run on the rayon pool;
//! weight gradients are summed across items in index order.

use rayon::prelude::*;

use super::{gemm, is_parallel, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

/// Upper bound on the number of elements in one column block.
const COL_BUDGET: usize = 1 << 20;

/// Stride, zero padding, and dilation shared by every spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeometry {
            stride,
            padding,
            dilation,
        }
    }

    /// Stride 1 with the padding that keeps extents for kernel `k`.
    pub const fn same(k: usize, dilation: usize) -> Self {
        ConvGeometry::new(1, dilation * (k - 1) / 2, dilation)
    }

    /// Output extent along one axis, or `None` if the kernel does not fit.
    pub fn out_extent(&self, extent: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = extent + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Plan {
    n: usize,
    ci: usize,
    co: usize,
    ext: [usize; 3],
    k: [usize; 3],
    pad: [usize; 3],
    stride: usize,
    dil: usize,
    out: [usize; 3],
}

impl Plan {
    fn kdim(&self) -> usize {
        self.ci * self.k.iter().product::<usize>()
    }

    fn p_in(&self) -> usize {
        self.ext.iter().product()
    }

    fn p_out(&self) -> usize {
        self.out.iter().product()
    }

    fn pointwise(&self) -> bool {
        self.k == [1, 1, 1] && self.stride == 1 && self.pad == [0, 0, 0]
    }

    fn chunk_len(&self) -> usize {
        if self.pointwise() {
            self.p_out()
        } else {
            (COL_BUDGET / self.kdim()).clamp(1, self.p_out().max(1))
        }
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let (p, b) = (self.p_out(), self.chunk_len());
        (0..p.div_ceil(b)).map(move |i| (i * b, ((i + 1) * b).min(p)))
    }

    /// Input offsets of the first kernel tap for every output voxel in `p0..p1`.
    fn bases(&self, p0: usize, p1: usize) -> Vec<[isize; 3]> {
        let [_, oy, oz] = self.out;
        (p0..p1)
            .map(|p| {
                let (x, y, z) = (p / (oy * oz), (p / oz) % oy, p % oz);
                [
                    (x * self.stride) as isize - self.pad[0] as isize,
                    (y * self.stride) as isize - self.pad[1] as isize,
                    (z * self.stride) as isize - self.pad[2] as isize,
                ]
            })
            .collect()
    }

    /// Visits `(row, kernel offset)` pairs in column-row order.
    fn taps(&self) -> impl Iterator<Item = (usize, usize, [isize; 3])> + '_ {
        let [kx, ky, kz] = self.k;
        let d = self.dil as isize;
        (0..self.ci).flat_map(move |c| {
            (0..kx).flat_map(move |a| {
                (0..ky).flat_map(move |b| {
                    (0..kz).map(move |e| {
                        let row = ((c * kx + a) * ky + b) * kz + e;
                        (row, c, [a as isize * d, b as isize * d, e as isize * d])
                    })
                })
            })
        })
    }

    fn im2col<S: Scalar>(&self, x: &[S], p0: usize, p1: usize, col: &mut [S]) {
        let b = p1 - p0;
        let bases = self.bases(p0, p1);
        let [ex, ey, ez] = self.ext;
        let p_in = self.p_in();
        for (row, c, off) in self.taps() {
            let src = &x[c * p_in..(c + 1) * p_in];
            let dst = &mut col[row * b..(row + 1) * b];
            for (d, base) in dst.iter_mut().zip(&bases) {
                let (ix, iy, iz) = ((base[0] + off[0]) as usize, (base[1] + off[1]) as usize, (base[2] + off[2]) as usize);
                *d = if ix < ex && iy < ey && iz < ez {
                    src[(ix * ey + iy) * ez + iz]
                } else {
                    S::zero()
                };
            }
        }
    }

    fn col2im<S: Scalar>(&self, col: &[S], p0: usize, p1: usize, dx: &mut [S]) {
        let b = p1 - p0;
        let bases = self.bases(p0, p1);
        let [ex, ey, ez] = self.ext;
        let p_in = self.p_in();
        for (row, c, off) in self.taps() {
            let dst = &mut dx[c * p_in..(c + 1) * p_in];
            let src = &col[row * b..(row + 1) * b];
            for (v, base) in src.iter().zip(&bases) {
                let (ix, iy, iz) = ((base[0] + off[0]) as usize, (base[1] + off[1]) as usize, (base[2] + off[2]) as usize);
                if ix < ex && iy < ey && iz < ez {
                    dst[(ix * ey + iy) * ez + iz] += *v;
                }
            }
        }
    }

    fn forward_item<S: Scalar>(&self, x: &[S], w: &[S], bias: Option<&[S]>, out: &mut [S]) {
        let (kd, p_out) = (self.kdim(), self.p_out());
        let wm = MatRef::new(w, self.co, kd);
        if self.pointwise() {
            gemm(S::one(), wm, MatRef::new(x, kd, p_out), S::zero(), out, p_out);
        } else {
            let mut col = vec![S::zero(); kd * self.chunk_len()];
            for (p0, p1) in self.chunks() {
                let b = p1 - p0;
                self.im2col(x, p0, p1, &mut col);
                gemm(S::one(), wm, MatRef::new(&col[..kd * b], kd, b), S::zero(), &mut out[p0..], p_out);
            }
        }
        if let Some(bias) = bias {
            for (row, &bv) in out.chunks_mut(p_out).zip(bias) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }

    /// Accumulates this item's weight gradient into `gw` and writes its input gradient into `gx`.
    fn backward_item<S: Scalar>(&self, x: &[S], w: &[S], g: &[S], gw: Option<&mut [S]>, gx: Option<&mut [S]>) {
        let (kd, p_out) = (self.kdim(), self.p_out());
        let wt = MatRef::new(w, self.co, kd).t();
        let mut gw = gw;
        let mut gx = gx;
        if self.pointwise() {
            let gm = MatRef::new(g, self.co, p_out);
            if let Some(gw) = gw.as_deref_mut() {
                gemm(S::one(), gm, MatRef::new(x, kd, p_out).t(), S::one(), gw, kd);
            }
            if let Some(gx) = gx.as_deref_mut() {
                gemm(S::one(), wt, gm, S::zero(), gx, p_out);
            }
            return;
        }
        let cap = kd * self.chunk_len();
        let mut col = vec![S::zero(); if gw.is_some() { cap } else { 0 }];
        let mut dcol = vec![S::zero(); if gx.is_some() { cap } else { 0 }];
        for (p0, p1) in self.chunks() {
            let b = p1 - p0;
            let gm = MatRef {
                data: &g[p0..],
                rows: self.co,
                cols: b,
                rs: p_out as isize,
                cs: 1,
            };
            if let Some(gw) = gw.as_deref_mut() {
                self.im2col(x, p0, p1, &mut col);
                gemm(S::one(), gm, MatRef::new(&col[..kd * b], kd, b).t(), S::one(), gw, kd);
            }
            if let Some(gx) = gx.as_deref_mut() {
                gemm(S::one(), wt, gm, S::zero(), &mut dcol[..kd * b], b);
                self.col2im(&dcol[..kd * b], p0, p1, gx);
            }
        }
    }
}

fn check_kernel(op: &'static str, k: usize) -> Result<()> {
    if k % 2 == 0 {
        return Err(Error::arg(op, format!("kernel extent {k} must be odd")));
    }
    Ok(())
}

fn plan(op: &'static str, x: &[usize], w: &[usize], geom: ConvGeometry, pad: [usize; 3]) -> Result<Plan> {
    if geom.stride == 0 || geom.dilation == 0 {
        return Err(Error::arg(op, "stride and dilation must be at least 1"));
    }
    let (n, ci, ext) = (x[0], x[1], [x[2], x[3], x[4]]);
    let (co, wci, k) = (w[0], w[1], [w[2], w[3], w[4]]);
    if wci != ci {
        return Err(Error::dim(op, Some(1), format!("input has {ci} channels, kernel expects {wci}")));
    }
    let mut out = [0; 3];
    for axis in 0..3 {
        let g = ConvGeometry { padding: pad[axis], ..geom };
        out[axis] = g.out_extent(ext[axis], k[axis]).ok_or_else(|| {
            Error::dim(
                op,
                Some(axis + 2),
                format!(
                    "extent {} with padding {} is smaller than the dilated kernel span {}",
                    ext[axis],
                    pad[axis],
                    geom.dilation * (k[axis] - 1) + 1
                ),
            )
        })?;
    }
    Ok(Plan {
        n,
        ci,
        co,
        ext,
        k,
        pad,
        stride: geom.stride,
        dil: geom.dilation,
        out,
    })
}

fn conv_core<S: Scalar>(op: &'static str, x: &Tensor<S>, w: &Tensor<S>, bias: Option<&Tensor<S>>, p: Plan) -> Result<Tensor<S>> {
    if let Some(b) = bias {
        if b.shape() != [p.co] {
            return Err(Error::dim(op, Some(0), format!("bias shape {:?}, expected [{}]", b.shape(), p.co)));
        }
    }
    let (in_item, out_item) = (p.ci * p.p_in(), p.co * p.p_out());
    let mut out = vec![S::zero(); p.n * out_item];
    let (xd, wd, bd) = (x.data(), w.data(), bias.map(|b| b.data()));
    if is_parallel() && p.n > 1 {
        out.par_chunks_mut(out_item)
            .enumerate()
            .for_each(|(i, o)| p.forward_item(&xd[i * in_item..(i + 1) * in_item], wd, bd, o));
    } else {
        for (i, o) in out.chunks_mut(out_item).enumerate() {
            p.forward_item(&xd[i * in_item..(i + 1) * in_item], wd, bd, o);
        }
    }

    let shape = vec![p.n, p.co, p.out[0], p.out[1], p.out[2]];
    let mut inputs = vec![x.clone(), w.clone()];
    inputs.extend(bias.cloned());
    let (xt, wt, bt) = (x.clone(), w.clone(), bias.cloned());
    let parallel = is_parallel();
    Tensor::from_op(op, shape, out, inputs, move |g| {
        let (xd, wd) = (xt.data(), wt.data());
        let wsize = wd.len();
        let need_w = wt.tracks_grad();
        let mut gx = xt.tracks_grad().then(|| vec![S::zero(); xd.len()]);
        let mut gw = need_w.then(|| vec![S::zero(); wsize]);
        if parallel && p.n > 1 {
            let partials: Vec<Vec<S>> = match gx.as_mut() {
                Some(gx) => gx
                    .par_chunks_mut(in_item)
                    .enumerate()
                    .map(|(i, gxi)| {
                        let mut gwi = vec![S::zero(); if need_w { wsize } else { 0 }];
                        p.backward_item(
                            &xd[i * in_item..(i + 1) * in_item],
                            wd,
                            &g[i * out_item..(i + 1) * out_item],
                            need_w.then_some(&mut gwi[..]),
                            Some(gxi),
                        );
                        gwi
                    })
                    .collect(),
                None => (0..p.n)
                    .into_par_iter()
                    .map(|i| {
                        let mut gwi = vec![S::zero(); wsize];
                        p.backward_item(&xd[i * in_item..(i + 1) * in_item], wd, &g[i * out_item..(i + 1) * out_item], Some(&mut gwi), None);
                        gwi
                    })
                    .collect(),
            };
            if let Some(gw) = gw.as_mut() {
                for part in &partials {
                    gw.iter_mut().zip(part).for_each(|(a, v)| *a += *v);
                }
            }
        } else {
            for i in 0..p.n {
                p.backward_item(
                    &xd[i * in_item..(i + 1) * in_item],
                    wd,
                    &g[i * out_item..(i + 1) * out_item],
                    gw.as_deref_mut(),
                    gx.as_mut().map(|gx| &mut gx[i * in_item..(i + 1) * in_item]),
                );
            }
        }
        let mut grads = vec![gx, gw];
        if let Some(b) = &bt {
            grads.push(b.tracks_grad().then(|| {
                (0..p.co)
                    .map(|c| (0..p.n).map(|i| g[i * out_item + c * p.p_out()..i * out_item + (c + 1) * p.p_out()].iter().copied().sum::<S>()).sum())
                    .collect()
            }));
        }
        grads
    })
}

/// 3D convolution.
///
/// `input` is `C_in x X x Y x Z` or `N x C_in x X x Y x Z`; `weight` is
/// `C_out x C_in x k x k x k` with odd `k`. Each output extent is
/// `floor((X + 2 * padding - dilation * (k - 1) - 1) / stride) + 1`.
/// The output keeps the rank of the input.
pub fn conv3d<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: Option<&Tensor<S>>, geom: ConvGeometry) -> Result<Tensor<S>> {
    const OP: &str = "conv3d";
    let batched = match input.rank() {
        5 => true,
        4 => false,
        r => return Err(Error::dim(OP, None, format!("input must be 4-D or 5-D, got rank {r}"))),
    };
    let ws = weight.shape();
    if ws.len() != 5 || ws[2] != ws[3] || ws[3] != ws[4] {
        return Err(Error::dim(OP, None, format!("weight must be C_out x C_in x k x k x k, got {ws:?}")));
    }
    check_kernel(OP, ws[2])?;
    let x5 = if batched {
        input.clone()
    } else {
        let mut s = vec![1];
        s.extend_from_slice(input.shape());
        input.reshape(&s)?
    };
    let p = plan(OP, x5.shape(), ws, geom, [geom.padding; 3])?;
    let y = conv_core(OP, &x5, weight, bias, p)?;
    if batched {
        Ok(y)
    } else {
        y.reshape(&y.shape()[1..].to_vec())
    }
}

/// 2D convolution over `C_in x X x Y` or `N x C_in x X x Y` with a
/// `C_out x C_in x k x k` kernel.
pub fn conv2d<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: Option<&Tensor<S>>, geom: ConvGeometry) -> Result<Tensor<S>> {
    const OP: &str = "conv2d";
    let batched = match input.rank() {
        4 => true,
        3 => false,
        r => return Err(Error::dim(OP, None, format!("input must be 3-D or 4-D, got rank {r}"))),
    };
    let ws = weight.shape();
    if ws.len() != 4 || ws[2] != ws[3] {
        return Err(Error::dim(OP, None, format!("weight must be C_out x C_in x k x k, got {ws:?}")));
    }
    check_kernel(OP, ws[2])?;
    let mut xs = if batched { vec![] } else { vec![1] };
    xs.extend_from_slice(input.shape());
    xs.push(1);
    let x5 = input.reshape(&xs)?;
    let mut w5s = ws.to_vec();
    w5s.push(1);
    let w5 = weight.reshape(&w5s)?;
    let p = plan(OP, x5.shape(), &w5s, geom, [geom.padding, geom.padding, 0])?;
    let y = conv_core(OP, &x5, &w5, bias, p)?;
    let mut ys = y.shape()[..4].to_vec();
    if !batched {
        ys.remove(0);
    }
    y.reshape(&ys)
}
