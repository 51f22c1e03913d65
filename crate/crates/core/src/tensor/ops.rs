//! Elementwise, reduction, and layout operations.

use super::{gemm, numel_of, strides_of, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (x, y) => {
                return Err(Error::dim(
                    op,
                    Some(i),
                    format!("cannot broadcast {a:?} with {b:?} (extent {x} vs {y})"),
                ))
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed in `out` (right-aligned); broadcast axes get 0.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every output position in order.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total = numel_of(out);
    if total == 0 {
        return;
    }
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let rank = out.len();
    let inner = out[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let mut o = 0;
    while o < total {
        let mut ia = 0;
        let mut ib = 0;
        for d in 0..rank - 1 {
            ia += idx[d] * sa[d];
            ib += idx[d] * sb[d];
        }
        for _ in 0..inner {
            f(o, ia, ib);
            o += 1;
            ia += ia_step;
            ib += ib_step;
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

impl<S: Scalar> Tensor<S> {
    fn binary(
        &self,
        other: &Tensor<S>,
        op: &'static str,
        f: impl Fn(S, S) -> S,
        da: impl Fn(S, S) -> S + 'static,
        db: impl Fn(S, S) -> S + 'static,
    ) -> Result<Tensor<S>> {
        let (ad, bd) = (self.data(), other.data());
        if self.shape() == other.shape() {
            let data = ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect();
            let (a, b) = (self.clone(), other.clone());
            return Tensor::from_op(op, self.shape().to_vec(), data, vec![self.clone(), other.clone()], move |g| {
                let ga = a
                    .tracks_grad()
                    .then(|| g.iter().zip(a.data().iter().zip(b.data())).map(|(&g, (&x, &y))| g * da(x, y)).collect());
                let gb = b
                    .tracks_grad()
                    .then(|| g.iter().zip(a.data().iter().zip(b.data())).map(|(&g, (&x, &y))| g * db(x, y)).collect());
                vec![ga, gb]
            });
        }
        let out = broadcast_shape(op, self.shape(), other.shape())?;
        let sa = broadcast_strides(self.shape(), &out);
        let sb = broadcast_strides(other.shape(), &out);
        let mut data = vec![S::zero(); numel_of(&out)];
        for_each_broadcast(&out, &sa, &sb, |o, i, j| data[o] = f(ad[i], bd[j]));
        let (a, b) = (self.clone(), other.clone());
        let out_shape = out.clone();
        Tensor::from_op(op, out, data, vec![self.clone(), other.clone()], move |g| {
            let (ad, bd) = (a.data(), b.data());
            let mut ga = a.tracks_grad().then(|| vec![S::zero(); ad.len()]);
            let mut gb = b.tracks_grad().then(|| vec![S::zero(); bd.len()]);
            for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| {
                if let Some(ga) = ga.as_mut() {
                    ga[i] += g[o] * da(ad[i], bd[j]);
                }
                if let Some(gb) = gb.as_mut() {
                    gb[j] += g[o] * db(ad[i], bd[j]);
                }
            });
            vec![ga, gb]
        })
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, "add", |x, y| x + y, |_, _| S::one(), |_, _| S::one())
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, "sub", |x, y| x - y, |_, _| S::one(), |_, _| -S::one())
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, "mul", |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, "div", |x, y| x / y, |_, y| S::one() / y, |x, y| -x / (y * y))
    }

    fn unary(&self, op: &'static str, f: impl Fn(S) -> S, df: impl Fn(S) -> S + 'static) -> Result<Tensor<S>> {
        let data = self.data().iter().map(|&x| f(x)).collect();
        let a = self.clone();
        Tensor::from_op(op, self.shape().to_vec(), data, vec![self.clone()], move |g| {
            vec![Some(g.iter().zip(a.data()).map(|(&g, &x)| g * df(x)).collect())]
        })
    }

    pub fn neg(&self) -> Result<Tensor<S>> {
        self.unary("neg", |x| -x, |_| -S::one())
    }

    pub fn scale(&self, c: f64) -> Result<Tensor<S>> {
        let c = S::of(c);
        self.unary("scale", move |x| x * c, move |_| c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor<S>> {
        let c = S::of(c);
        self.unary("add_scalar", move |x| x + c, |_| S::one())
    }

    /// Absolute value; the subgradient at exactly zero is zero.
    pub fn abs(&self) -> Result<Tensor<S>> {
        self.unary("abs", |x| x.abs(), |x| {
            if x > S::zero() {
                S::one()
            } else if x < S::zero() {
                -S::one()
            } else {
                S::zero()
            }
        })
    }

    pub fn sigmoid(&self) -> Result<Tensor<S>> {
        self.unary("sigmoid", sigmoid, |x| {
            let s = sigmoid(x);
            s * (S::one() - s)
        })
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor<S>> {
        let k = S::of(slope);
        self.unary(
            "leaky_relu",
            move |x| if x > S::zero() { x } else { x * k },
            move |x| if x > S::zero() { S::one() } else { k },
        )
    }

    pub fn relu(&self) -> Result<Tensor<S>> {
        self.unary(
            "relu",
            |x| if x > S::zero() { x } else { S::zero() },
            |x| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    pub fn ln(&self) -> Result<Tensor<S>> {
        self.unary("ln", |x| x.ln(), |x| S::one() / x)
    }

    pub fn exp(&self) -> Result<Tensor<S>> {
        self.unary("exp", |x| x.exp(), |x| x.exp())
    }

    pub fn square(&self) -> Result<Tensor<S>> {
        self.unary("square", |x| x * x, |x| x + x)
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Result<Tensor<S>> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op("sum", Vec::new(), vec![total], vec![self.clone()], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Result<Tensor<S>> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::arg("mean", "empty tensor"));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        if numel_of(shape) != self.numel() {
            return Err(Error::dim(
                "reshape",
                None,
                format!("{:?} has {} elements, target {shape:?} has {}", self.shape(), self.numel(), numel_of(shape)),
            ));
        }
        Tensor::from_op("reshape", shape.to_vec(), self.to_vec(), vec![self.clone()], |g| vec![Some(g.to_vec())])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<S>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::arg("permute", format!("{perm:?} is not a permutation of {rank} axes")));
        }
        let in_strides = strides_of(self.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let zero = vec![0; rank];
        let mut map = vec![0usize; self.numel()];
        for_each_broadcast(&out_shape, &gather, &zero, |o, i, _| map[o] = i);
        let src = self.data();
        let data = map.iter().map(|&i| src[i]).collect();
        let n = self.numel();
        Tensor::from_op("permute", out_shape, data, vec![self.clone()], move |g| {
            let mut gi = vec![S::zero(); n];
            for (o, &i) in map.iter().enumerate() {
                gi[i] = g[o];
            }
            vec![Some(gi)]
        })
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<S>> {
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        if a >= perm.len() || b >= perm.len() {
            return Err(Error::arg("transpose", format!("axes {a}, {b} out of range for rank {}", self.rank())));
        }
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// The sub-range `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() {
            return Err(Error::arg("narrow", format!("axis {axis} out of range for rank {}", self.rank())));
        }
        let extent = self.shape()[axis];
        if start + len > extent {
            return Err(Error::dim("narrow", Some(axis), format!("range {start}..{} exceeds extent {extent}", start + len)));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let n = self.numel();
        Tensor::from_op("narrow", shape, data, vec![self.clone()], move |g| {
            let mut gi = vec![S::zero(); n];
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                gi[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gi)]
        })
    }

    /// Matrix product of `M x K` by `K x N`, or batched `B x M x K` by `B x K x N`.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (a, b) = (self.shape(), other.shape());
        let (batch, m, k, n) = match (a.len(), b.len()) {
            (2, 2) => (1, a[0], a[1], b[1]),
            (3, 3) if a[0] == b[0] => (a[0], a[1], a[2], b[2]),
            (3, 3) => return Err(Error::dim("matmul", Some(0), format!("batch {} vs {}", a[0], b[0]))),
            _ => return Err(Error::dim("matmul", None, format!("expected 2-D or 3-D operands, got {a:?} and {b:?}"))),
        };
        let kb = if b.len() == 2 { b[0] } else { b[1] };
        if k != kb {
            return Err(Error::dim("matmul", Some(a.len() - 1), format!("inner extents {k} vs {kb}")));
        }
        let mut data = vec![S::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                S::one(),
                MatRef::new(&self.data()[i * m * k..(i + 1) * m * k], m, k),
                MatRef::new(&other.data()[i * k * n..(i + 1) * k * n], k, n),
                S::zero(),
                &mut data[i * m * n..(i + 1) * m * n],
                n,
            );
        }
        let shape = if a.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let (ta, tb) = (self.clone(), other.clone());
        Tensor::from_op("matmul", shape, data, vec![self.clone(), other.clone()], move |g| {
            let mut ga = ta.tracks_grad().then(|| vec![S::zero(); batch * m * k]);
            let mut gb = tb.tracks_grad().then(|| vec![S::zero(); batch * k * n]);
            for i in 0..batch {
                let gi = MatRef::new(&g[i * m * n..(i + 1) * m * n], m, n);
                if let Some(ga) = ga.as_mut() {
                    let bt = MatRef::new(&tb.data()[i * k * n..(i + 1) * k * n], k, n).t();
                    gemm(S::one(), gi, bt, S::zero(), &mut ga[i * m * k..(i + 1) * m * k], k);
                }
                if let Some(gb) = gb.as_mut() {
                    let at = MatRef::new(&ta.data()[i * m * k..(i + 1) * m * k], m, k).t();
                    gemm(S::one(), at, gi, S::zero(), &mut gb[i * k * n..(i + 1) * k * n], n);
                }
            }
            vec![ga, gb]
        })
    }

    /// Mean binary cross-entropy against a constant target in `[0, 1]`.
    ///
    /// Probabilities are clamped to `[eps, 1 - eps]` (see [`Scalar::prob_eps`]);
    /// the gradient is zero where the clamp is active.
    pub fn bce_mean(&self, target: f64) -> Result<Tensor<S>> {
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::Domain { op: "bce", detail: format!("target {target} outside [0, 1]") });
        }
        if let Some(p) = self.data().iter().find(|p| !(**p >= S::zero() && **p <= S::one())) {
            return Err(Error::Domain { op: "bce", detail: format!("probability {p} outside [0, 1]") });
        }
        let n = self.numel();
        if n == 0 {
            return Err(Error::arg("bce", "empty tensor"));
        }
        let t = S::of(target);
        let eps = S::prob_eps();
        let hi = S::one() - eps;
        let clamp = move |p: S| p.max(eps).min(hi);
        let total: S = self
            .data()
            .iter()
            .map(|&p| {
                let q = clamp(p);
                -(t * q.ln() + (S::one() - t) * (S::one() - q).ln())
            })
            .sum();
        let inv_n = S::one() / S::of(n as f64);
        let a = self.clone();
        Tensor::from_op("bce", Vec::new(), vec![total * inv_n], vec![self.clone()], move |g| {
            let scale = g[0] * inv_n;
            let gi = a
                .data()
                .iter()
                .map(|&p| {
                    if p < eps || p > hi {
                        S::zero()
                    } else {
                        scale * (-t / p + (S::one() - t) / (S::one() - p))
                    }
                })
                .collect();
            vec![Some(gi)]
        })
    }
}

/// Concatenates tensors along `axis`; all other extents must agree.
pub fn concat<S: Scalar>(tensors: &[&Tensor<S>], axis: usize) -> Result<Tensor<S>> {
    let first = tensors.first().ok_or_else(|| Error::arg("concat", "no tensors"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::arg("concat", format!("axis {axis} out of range for rank {rank}")));
    }
    for t in tensors {
        if t.rank() != rank {
            return Err(Error::dim("concat", None, format!("rank {} vs {rank}", t.rank())));
        }
        for d in (0..rank).filter(|&d| d != axis) {
            if t.shape()[d] != first.shape()[d] {
                return Err(Error::dim(
                    "concat",
                    Some(d),
                    format!("extent {} vs {}", t.shape()[d], first.shape()[d]),
                ));
            }
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let extents: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (t, &e) in tensors.iter().zip(&extents) {
            data.extend_from_slice(&t.data()[o * e * inner..(o + 1) * e * inner]);
        }
    }
    let inputs: Vec<Tensor<S>> = tensors.iter().map(|t| (*t).clone()).collect();
    Tensor::from_op("concat", shape, data, inputs, move |g| {
        let mut grads: Vec<Vec<S>> = extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
        let mut pos = 0;
        for _ in 0..outer {
            for (gi, &e) in grads.iter_mut().zip(&extents) {
                gi.extend_from_slice(&g[pos..pos + e * inner]);
                pos += e * inner;
            }
        }
        grads.into_iter().map(Some).collect()
    })
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
