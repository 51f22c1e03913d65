//! Trilinear resampling, built from three separable linear passes.
//!
//! Sample positions follow the half-pixel (align-corners = false)
//! convention: output index `o` reads source coordinate
//! `(o + 0.5) * in / out - 0.5`, clamped to the valid range.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Two-tap linear interpolation weights for one output sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpTap {
    pub lo: usize,
    pub hi: usize,
    /// Weight on `hi`; `lo` receives `1 - frac`.
    pub frac: f64,
}

/// Half-pixel interpolation taps mapping `src_len` samples onto `dst_len`.
pub fn interp_taps(src_len: usize, dst_len: usize) -> Vec<InterpTap> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src_len - 1);
            let hi = (lo + 1).min(src_len - 1);
            let frac = if hi == lo { 0.0 } else { pos - lo as f64 };
            InterpTap { lo, hi, frac }
        })
        .collect()
}

impl<S: Scalar> Tensor<S> {
    fn interp_axis(&self, axis: usize, dst_len: usize) -> Result<Tensor<S>> {
        let shape = self.shape();
        let src_len = shape[axis];
        if src_len == dst_len {
            return Ok(self.clone());
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let taps: Vec<(usize, usize, S, S)> = interp_taps(src_len, dst_len)
            .into_iter()
            .map(|t| (t.lo, t.hi, S::one() - S::of(t.frac), S::of(t.frac)))
            .collect();
        let src = self.data();
        let mut data = vec![S::zero(); outer * dst_len * inner];
        for o in 0..outer {
            let s = &src[o * src_len * inner..(o + 1) * src_len * inner];
            let d = &mut data[o * dst_len * inner..(o + 1) * dst_len * inner];
            for (j, &(lo, hi, wl, wh)) in taps.iter().enumerate() {
                let (a, b) = (&s[lo * inner..(lo + 1) * inner], &s[hi * inner..(hi + 1) * inner]);
                for ((v, &x), &y) in d[j * inner..(j + 1) * inner].iter_mut().zip(a).zip(b) {
                    *v = wl * x + wh * y;
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = dst_len;
        let n = self.numel();
        Tensor::from_op("interpolate", out_shape, data, vec![self.clone()], move |g| {
            let mut gi = vec![S::zero(); n];
            for o in 0..outer {
                let gs = &g[o * dst_len * inner..(o + 1) * dst_len * inner];
                let d = &mut gi[o * src_len * inner..(o + 1) * src_len * inner];
                for (j, &(lo, hi, wl, wh)) in taps.iter().enumerate() {
                    for k in 0..inner {
                        let v = gs[j * inner + k];
                        d[lo * inner + k] += wl * v;
                        d[hi * inner + k] += wh * v;
                    }
                }
            }
            vec![Some(gi)]
        })
    }

    /// Trilinear resize of the last three axes to `extent`.
    pub fn resize_trilinear(&self, extent: [usize; 3]) -> Result<Tensor<S>> {
        let r = self.rank();
        if r < 3 {
            return Err(Error::dim("resize_trilinear", None, format!("need at least 3 axes, got {r}")));
        }
        if extent.contains(&0) || self.shape()[r - 3..].contains(&0) {
            return Err(Error::arg("resize_trilinear", "extents must be positive"));
        }
        self.interp_axis(r - 3, extent[0])?
            .interp_axis(r - 2, extent[1])?
            .interp_axis(r - 1, extent[2])
    }

    /// Trilinear upsampling of the last three axes by an integer factor.
    pub fn upsample_trilinear(&self, factor: usize) -> Result<Tensor<S>> {
        if factor < 1 {
            return Err(Error::arg("upsample_trilinear", format!("factor must be >= 1, got {factor}")));
        }
        let r = self.rank();
        if r < 3 {
            return Err(Error::dim("upsample_trilinear", None, format!("need at least 3 axes, got {r}")));
        }
        let s = &self.shape()[r - 3..];
        self.resize_trilinear([s[0] * factor, s[1] * factor, s[2] * factor])
    }
}
