//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! A forward pass appends nodes in evaluation order; [`Tape::backward`]
//! walks them in reverse from a chosen output, seeded with `dL/d(output)`.
//! Every kernel treats batch items independently, so a sample's result does
//! not depend on what else shares its batch.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(usize),
    Conv { x: NodeId, w: NodeId, b: NodeId, stride: usize },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    AddChannels { x: NodeId, v: NodeId },
    Silu(NodeId),
    Resize(NodeId),
    Concat(NodeId, NodeId),
    MeanPool(NodeId),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Result of a backward pass: one optional gradient per tape node.
pub struct TapeGrads<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(usize, NodeId)>,
}

impl<T: Scalar> TapeGrads<T> {
    pub fn of(&self, id: NodeId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    /// Gradients keyed by parameter slot; slots without a gradient are zero.
    pub fn into_param_grads(mut self, sizes: &[usize]) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = sizes.iter().map(|&n| vec![T::zero(); n]).collect();
        for &(slot, id) in &self.params {
            if let Some(g) = self.grads[id.0].take() {
                for (o, v) in out[slot].iter_mut().zip(g) {
                    *o = *o + v;
                }
            }
        }
        out
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn conv_out(size: usize, k: usize, stride: usize) -> usize {
    let pad = k / 2;
    (size + 2 * pad - k) / stride + 1
}

/// Output columns `[lo, hi)` whose input column `ox * stride + kx - pad`
/// falls inside `0..w`.
#[inline]
fn valid_range(w: usize, wo: usize, kx: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    let hi = if w + pad <= kx { 0 } else { ((w - 1 + pad - kx) / stride + 1).min(wo) };
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let pad = k / 2;
    let hw = ho * wo;
    for c in 0..cin {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                let (lo, hi) = valid_range(w, wo, kx, pad, stride);
                for oy in 0..ho {
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    let iy = oy * stride + ky;
                    if iy < pad || iy - pad >= h {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(iy - pad) * w..(iy - pad + 1) * w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[lo + kx - pad..hi + kx - pad]);
                    } else {
                        for ox in lo..hi {
                            dst[ox] = src[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    dx: &mut [T],
) {
    let pad = k / 2;
    let hw = ho * wo;
    for c in 0..cin {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                let (lo, hi) = valid_range(w, wo, kx, pad, stride);
                for oy in 0..ho {
                    let iy = oy * stride + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let dst = &mut plane[(iy - pad) * w..(iy - pad + 1) * w];
                    let src = &row[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        let off = kx as isize - pad as isize;
                        let d = &mut dst[(lo as isize + off) as usize..(hi as isize + off) as usize];
                        for (o, &v) in d.iter_mut().zip(&src[lo..hi]) {
                            *o = *o + v;
                        }
                    } else {
                        for ox in lo..hi {
                            let j = ox * stride + kx - pad;
                            dst[j] = dst[j] + src[ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Input, requires_grad)
    }

    /// Records a trainable block; `slot` identifies it in the parameter set.
    pub fn param(&mut self, slot: usize, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Param(slot), true)
    }

    /// Same-padded square convolution. `w` is `[cout, cin, k, k]`, `b` is `[cout]`.
    pub fn conv(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        let [bs, cin, h, wd] = self.value(x).dims4()?;
        let ws = self.value(w).dims4()?;
        let [cout, wcin, k, k2] = ws;
        if wcin != cin || k != k2 || k % 2 == 0 || stride == 0 {
            return Err(Error::shape(&[cout, cin, k, k], &ws));
        }
        if self.value(b).shape() != [cout] {
            return Err(Error::shape(&[cout], self.value(b).shape()));
        }
        let (ho, wo) = (conv_out(h, k, stride), conv_out(wd, k, stride));
        let ckk = cin * k * k;
        let mut out = vec![T::zero(); bs * cout * ho * wo];
        let mut cols = vec![T::zero(); ckk * ho * wo];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            for s in 0..bs {
                im2col(&xv[s * cin * h * wd..][..cin * h * wd], cin, h, wd, k, stride, ho, wo, &mut cols);
                let o = &mut out[s * cout * ho * wo..][..cout * ho * wo];
                for (c, row) in o.chunks_mut(ho * wo).enumerate() {
                    row.fill(bv[c]);
                }
                T::gemm(cout, ckk, ho * wo, wv, false, &cols, false, T::one(), o);
            }
        }
        let needs = self.needs(&[x, w, b]);
        Ok(self.push(Tensor::from_vec(&[bs, cout, ho, wo], out)?, Op::Conv { x, w, b, stride }, needs))
    }

    /// Dense layer. `x` is `[batch, in]`, `w` is `[out, in]`, `b` is `[out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let [bs, fin] = self.value(x).dims2()?;
        let [fout, wfin] = self.value(w).dims2()?;
        if wfin != fin || self.value(b).shape() != [fout] {
            return Err(Error::shape(&[fout, fin], self.value(w).shape()));
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); bs * fout];
        for s in 0..bs {
            let xs = &xv[s * fin..(s + 1) * fin];
            for o in 0..fout {
                let row = &wv[o * fin..(o + 1) * fin];
                let mut acc = bv[o];
                for i in 0..fin {
                    acc = acc + row[i] * xs[i];
                }
                out[s * fout + o] = acc;
            }
        }
        let needs = self.needs(&[x, w, b]);
        Ok(self.push(Tensor::from_vec(&[bs, fout], out)?, Op::Linear { x, w, b }, needs))
    }

    /// Adds a per-sample, per-channel offset `v: [batch, channels]`.
    pub fn add_channels(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let [bs, c, h, w] = self.value(x).dims4()?;
        if self.value(v).shape() != [bs, c] {
            return Err(Error::shape(&[bs, c], self.value(v).shape()));
        }
        let mut out = self.value(x).data().to_vec();
        let vv = self.value(v).data();
        for (i, plane) in out.chunks_mut(h * w).enumerate() {
            let off = vv[i];
            for p in plane {
                *p = *p + off;
            }
        }
        let needs = self.needs(&[x, v]);
        Ok(self.push(Tensor::from_vec(&[bs, c, h, w], out)?, Op::AddChannels { x, v }, needs))
    }

    /// Sigmoid-weighted linear unit, `x * sigmoid(x)`.
    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let out = xv.data().iter().map(|&v| v * sigmoid(v)).collect();
        let needs = self.needs(&[x]);
        self.push(Tensor::from_vec(&shape, out).expect("same length"), Op::Silu(x), needs)
    }

    /// Nearest-neighbour resize of the spatial axes to `(h, w)`.
    pub fn resize(&mut self, x: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let [bs, c, hi, wi] = self.value(x).dims4()?;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); bs * c * h * w];
        for (p, plane) in out.chunks_mut(h * w).enumerate() {
            let src = &xv[p * hi * wi..(p + 1) * hi * wi];
            for y in 0..h {
                let sy = y * hi / h;
                for xx in 0..w {
                    plane[y * w + xx] = src[sy * wi + xx * wi / w];
                }
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::from_vec(&[bs, c, h, w], out)?, Op::Resize(x), needs))
    }

    /// Channel concatenation of two equally sized feature maps.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let [bs, ca, h, w] = self.value(a).dims4()?;
        let [bb, cb, hb, wb] = self.value(b).dims4()?;
        if (bs, h, w) != (bb, hb, wb) {
            return Err(Error::shape(&[bs, ca, h, w], &[bb, cb, hb, wb]));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(bs * (sa + sb));
        for s in 0..bs {
            out.extend_from_slice(&av[s * sa..(s + 1) * sa]);
            out.extend_from_slice(&bv[s * sb..(s + 1) * sb]);
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_vec(&[bs, ca + cb, h, w], out)?, Op::Concat(a, b), needs))
    }

    /// Spatial mean, `[batch, c, h, w] -> [batch, c]`.
    pub fn mean_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let [bs, c, h, w] = self.value(x).dims4()?;
        let inv = T::of(1.0 / (h * w) as f64);
        let out = self.value(x).data().chunks(h * w).map(|plane| plane.iter().copied().sum::<T>() * inv).collect();
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::from_vec(&[bs, c], out)?, Op::MeanPool(x), needs))
    }

    /// Propagates `seed = dL/d(output)` back through the tape.
    pub fn backward(&self, output: NodeId, seed: &[T]) -> Result<TapeGrads<T>> {
        if self.nodes.is_empty() {
            return Err(Error::BackwardBeforeForward);
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!("node {} not on tape", output.0)));
        }
        if seed.len() != self.value(output).len() {
            return Err(Error::shape(self.value(output).shape(), &[seed.len()]));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.to_vec());
        let mut params = Vec::new();
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Param(slot) = node.op {
                if grads[idx].is_some() {
                    params.push((slot, NodeId(idx)));
                }
                continue;
            }
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(TapeGrads { grads, params })
    }

    fn accumulate<'g>(&self, grads: &'g mut [Option<Vec<T>>], id: NodeId) -> Option<&'g mut Vec<T>> {
        if !self.nodes[id.0].needs_grad {
            return None;
        }
        let len = self.nodes[id.0].value.len();
        Some(grads[id.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backward_node(&self, op: &Op, value: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match *op {
            Op::Input | Op::Param(_) => {}
            Op::Conv { x, w, b, stride } => {
                let [bs, cin, h, wd] = self.value(x).dims4()?;
                let [cout, _, k, _] = self.value(w).dims4()?;
                let [_, _, ho, wo] = value.dims4()?;
                let (ckk, hw) = (cin * k * k, ho * wo);
                let xv = self.value(x).data();
                let wv = self.value(w).data();
                if let Some(db) = self.accumulate(grads, b) {
                    for s in 0..bs {
                        for (c, row) in g[s * cout * hw..][..cout * hw].chunks(hw).enumerate() {
                            db[c] = db[c] + row.iter().copied().sum::<T>();
                        }
                    }
                }
                let want_w = self.nodes[w.0].needs_grad;
                let want_x = self.nodes[x.0].needs_grad;
                let mut cols = vec![T::zero(); ckk * hw];
                let mut dw = if want_w { vec![T::zero(); cout * ckk] } else { Vec::new() };
                let mut dx = if want_x { vec![T::zero(); bs * cin * h * wd] } else { Vec::new() };
                for s in 0..bs {
                    let gs = &g[s * cout * hw..][..cout * hw];
                    if want_w {
                        im2col(&xv[s * cin * h * wd..][..cin * h * wd], cin, h, wd, k, stride, ho, wo, &mut cols);
                        T::gemm(cout, hw, ckk, gs, false, &cols, true, T::one(), &mut dw);
                    }
                    if want_x {
                        T::gemm(ckk, cout, hw, wv, true, gs, false, T::zero(), &mut cols);
                        col2im_add(&cols, cin, h, wd, k, stride, ho, wo, &mut dx[s * cin * h * wd..][..cin * h * wd]);
                    }
                }
                if let Some(acc) = self.accumulate(grads, w) {
                    add_into(acc, &dw);
                }
                if let Some(acc) = self.accumulate(grads, x) {
                    add_into(acc, &dx);
                }
            }
            Op::Linear { x, w, b } => {
                let [bs, fin] = self.value(x).dims2()?;
                let fout = value.dims2()?[1];
                let xv = self.value(x).data();
                let wv = self.value(w).data();
                if let Some(db) = self.accumulate(grads, b) {
                    for s in 0..bs {
                        for o in 0..fout {
                            db[o] = db[o] + g[s * fout + o];
                        }
                    }
                }
                if let Some(dw) = self.accumulate(grads, w) {
                    for s in 0..bs {
                        for o in 0..fout {
                            let go = g[s * fout + o];
                            let row = &mut dw[o * fin..(o + 1) * fin];
                            for i in 0..fin {
                                row[i] = row[i] + go * xv[s * fin + i];
                            }
                        }
                    }
                }
                if let Some(dx) = self.accumulate(grads, x) {
                    for s in 0..bs {
                        for o in 0..fout {
                            let go = g[s * fout + o];
                            let row = &wv[o * fin..(o + 1) * fin];
                            for i in 0..fin {
                                dx[s * fin + i] = dx[s * fin + i] + go * row[i];
                            }
                        }
                    }
                }
            }
            Op::AddChannels { x, v } => {
                let [_, _, h, w] = value.dims4()?;
                if let Some(dv) = self.accumulate(grads, v) {
                    for (i, plane) in g.chunks(h * w).enumerate() {
                        dv[i] = dv[i] + plane.iter().copied().sum::<T>();
                    }
                }
                if let Some(dx) = self.accumulate(grads, x) {
                    add_into(dx, g);
                }
            }
            Op::Silu(x) => {
                let xv = self.value(x).data();
                if let Some(dx) = self.accumulate(grads, x) {
                    for i in 0..g.len() {
                        let s = sigmoid(xv[i]);
                        dx[i] = dx[i] + g[i] * s * (T::one() + xv[i] * (T::one() - s));
                    }
                }
            }
            Op::Resize(x) => {
                let [_, _, hi, wi] = self.value(x).dims4()?;
                let [_, _, h, w] = value.dims4()?;
                if let Some(dx) = self.accumulate(grads, x) {
                    for (p, plane) in g.chunks(h * w).enumerate() {
                        let dst = &mut dx[p * hi * wi..(p + 1) * hi * wi];
                        for y in 0..h {
                            let sy = y * hi / h;
                            for xx in 0..w {
                                let j = sy * wi + xx * wi / w;
                                dst[j] = dst[j] + plane[y * w + xx];
                            }
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let [bs, ca, h, w] = self.value(a).dims4()?;
                let cb = self.value(b).dims4()?[1];
                let (sa, sb) = (ca * h * w, cb * h * w);
                if let Some(da) = self.accumulate(grads, a) {
                    for s in 0..bs {
                        add_into(&mut da[s * sa..(s + 1) * sa], &g[s * (sa + sb)..][..sa]);
                    }
                }
                if let Some(db) = self.accumulate(grads, b) {
                    for s in 0..bs {
                        add_into(&mut db[s * sb..(s + 1) * sb], &g[s * (sa + sb) + sa..][..sb]);
                    }
                }
            }
            Op::MeanPool(x) => {
                let [_, _, h, w] = self.value(x).dims4()?;
                let inv = T::of(1.0 / (h * w) as f64);
                if let Some(dx) = self.accumulate(grads, x) {
                    for (i, plane) in dx.chunks_mut(h * w).enumerate() {
                        let gi = g[i] * inv;
                        for p in plane {
                            *p = *p + gi;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into<T: Scalar>(acc: &mut [T], g: &[T]) {
    for (a, &v) in acc.iter_mut().zip(g) {
        *a = *a + v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn backward_on_empty_tape_is_an_error() {
        let tape = Tape::<f64>::new();
        assert!(matches!(tape.backward(NodeId(0), &[1.0]), Err(Error::BackwardBeforeForward)));
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[1, 1, 2, 3], vec![1., 2., 3., 4., 5., 6.]), false);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = tape.param(0, t(&[1, 1, 3, 3], k));
        let b = tape.param(1, t(&[1], vec![0.5]));
        let y = tape.conv(x, w, b, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, 2.5, 3.5, 4.5, 5.5, 6.5]);
    }

    fn naive_conv(x: &[f64], cin: usize, h: usize, w: usize, wt: &[f64], cout: usize, stride: usize) -> Vec<f64> {
        let (ho, wo) = (conv_out(h, 3, stride), conv_out(w, 3, stride));
        let mut out = vec![0.0; cout * ho * wo];
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += wt[((o * cin + c) * 3 + ky) * 3 + kx]
                                        * x[(c * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops_and_adjoint() {
        for &(h, w, stride) in &[(5, 7, 1), (5, 7, 2), (1, 1, 2), (8, 8, 2), (2, 3, 1)] {
            let (cin, cout) = (2, 3);
            let x: Vec<f64> = (0..cin * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
            let wt: Vec<f64> = (0..cout * cin * 9).map(|i| (i as f64 * 0.3).cos()).collect();
            let mut tape = Tape::new();
            let xi = tape.input(t(&[1, cin, h, w], x.clone()), true);
            let wi = tape.param(0, t(&[cout, cin, 3, 3], wt.clone()));
            let bi = tape.param(1, t(&[cout], vec![0.0; cout]));
            let y = tape.conv(xi, wi, bi, stride).unwrap();
            let want = naive_conv(&x, cin, h, w, &wt, cout, stride);
            for (a, b) in tape.value(y).data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
            // <dy, conv(x)> = <conv^T(dy), x> since conv is linear in x.
            let dy: Vec<f64> = (0..want.len()).map(|i| (i as f64 * 1.3).sin()).collect();
            let g = tape.backward(y, &dy).unwrap();
            let lhs: f64 = dy.iter().zip(&want).map(|(a, b)| a * b).sum();
            let rhs: f64 = g.of(xi).unwrap().iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{h}x{w} stride {stride}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn strided_conv_output_sizes() {
        for (size, want) in [(1, 1), (8, 4), (9, 5), (32, 16)] {
            assert_eq!(conv_out(size, 3, 2), want);
        }
    }

    #[test]
    fn resize_upsamples_by_repetition() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[1, 1, 1, 2], vec![1., 2.]), false);
        let y = tape.resize(x, 2, 4).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
    }

    // Five parameters: y = w3 * silu(w1 * x + b1) + w2 * x + b2, summed over a
    // small batch. Gradients checked against central differences in f64.
    fn toy_loss(p: &[f64], xs: &[f64]) -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let n = xs.len();
        let x = tape.input(t(&[n, 1], xs.to_vec()), false);
        let w1 = tape.param(0, t(&[1, 1], vec![p[0]]));
        let b1 = tape.param(1, t(&[1], vec![p[1]]));
        let w3 = tape.param(2, t(&[1, 1], vec![p[2]]));
        let w2 = tape.param(3, t(&[1, 1], vec![p[3]]));
        let b2 = tape.param(4, t(&[1], vec![p[4]]));
        let zero = tape.input(t(&[1], vec![0.0]), false);
        let h = tape.linear(x, w1, b1).unwrap();
        let h = tape.silu(h);
        let a = tape.linear(h, w3, zero).unwrap();
        let skip = tape.linear(x, w2, b2).unwrap();
        let av = tape.value(a).data().to_vec();
        let sv = tape.value(skip).data().to_vec();
        let loss: f64 = av.iter().zip(&sv).map(|(a, s)| (a + s) * (a + s)).sum();
        let seed_a: Vec<f64> = av.iter().zip(&sv).map(|(a, s)| 2.0 * (a + s)).collect();
        let ga = tape.backward(a, &seed_a).unwrap().into_param_grads(&[1; 5]);
        let gs = tape.backward(skip, &seed_a).unwrap().into_param_grads(&[1; 5]);
        let grad = (0..5).map(|i| ga[i][0] + gs[i][0]).collect();
        (loss, grad)
    }

    #[test]
    fn five_parameter_toy_net_matches_finite_differences() {
        let p = [0.7, -0.3, 1.2, 0.4, 0.1];
        let xs = [0.5, -1.5, 2.0];
        let (_, grad) = toy_loss(&p, &xs);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..5 {
            let mut hi = p;
            let mut lo = p;
            hi[i] += h;
            lo[i] -= h;
            let fd = (toy_loss(&hi, &xs).0 - toy_loss(&lo, &xs).0) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()));
        }
        assert!(worst < 1e-6, "max relative error {worst}");
    }

    #[test]
    fn doubling_the_seed_doubles_gradients_exactly() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[2, 1, 3, 3], (0..18).map(|i| (i as f64).sin()).collect()), true);
        let w = tape.param(0, t(&[2, 1, 3, 3], (0..18).map(|i| (i as f64 * 0.3).cos()).collect()));
        let b = tape.param(1, t(&[2], vec![0.1, -0.2]));
        let y = tape.conv(x, w, b, 2).unwrap();
        let y = tape.silu(y);
        let y = tape.mean_pool(y).unwrap();
        let seed = vec![0.3, -0.7, 1.1, 0.25];
        let g1 = tape.backward(y, &seed).unwrap();
        let seed2: Vec<f64> = seed.iter().map(|v| 2.0 * v).collect();
        let g2 = tape.backward(y, &seed2).unwrap();
        let gx1 = g1.of(x).unwrap().to_vec();
        let gx2 = g2.of(x).unwrap().to_vec();
        for (a, b) in gx1.iter().zip(&gx2) {
            assert_eq!(2.0 * a, *b);
        }
        let p1 = g1.into_param_grads(&[18, 2]);
        let p2 = g2.into_param_grads(&[18, 2]);
        for (a, b) in p1.iter().flatten().zip(p2.iter().flatten()) {
            assert_eq!(2.0 * a, *b);
        }
    }
}
