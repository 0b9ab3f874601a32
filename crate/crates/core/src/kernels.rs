//! Forward and backward kernels shared by the autodiff tape.
//!
//! The forward functions are also usable directly on plain tensors when no
//! gradient is needed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::{Error, Real, Result, Tensor};

/// Under-root guard for capsule norms: `‖s‖ = sqrt(Σ s² + ε)`.
pub const NORM_EPS: f64 = 1e-9;

/// Resolved sizes of a valid, unpadded 2-d cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], bias: &[usize], stride: usize) -> Result<Self> {
        const OP: &str = "conv2d";
        if input.len() != 4 {
            return Err(Error::dim(OP, format!("input must be [N,C,H,W], got {input:?}")));
        }
        if kernel.len() != 4 {
            return Err(Error::dim(OP, format!("kernel must be [F,C,kH,kW], got {kernel:?}")));
        }
        if stride == 0 {
            return Err(Error::contract(OP, "stride must be positive"));
        }
        let [batch, in_channels, in_h, in_w] = [input[0], input[1], input[2], input[3]];
        let [filters, kc, kernel_h, kernel_w] = [kernel[0], kernel[1], kernel[2], kernel[3]];
        if kc != in_channels {
            return Err(Error::dim(
                OP,
                format!("kernel axis 1 (channels) is {kc} but input axis 1 is {in_channels}"),
            ));
        }
        if bias != [filters] {
            return Err(Error::dim(
                OP,
                format!("bias must be [{filters}] to match kernel axis 0, got {bias:?}"),
            ));
        }
        if kernel_h > in_h || kernel_w > in_w || kernel_h == 0 || kernel_w == 0 {
            return Err(Error::dim(
                OP,
                format!(
                    "kernel axes 2,3 ({kernel_h}x{kernel_w}) do not fit input axes 2,3 ({in_h}x{in_w})"
                ),
            ));
        }
        Ok(ConvGeometry {
            batch,
            in_channels,
            in_h,
            in_w,
            filters,
            kernel_h,
            kernel_w,
            stride,
            out_h: (in_h - kernel_h) / stride + 1,
            out_w: (in_w - kernel_w) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.filters, self.out_h, self.out_w]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one sample `[C,H,W]` into columns `[C·kH·kW, oH·oW]`.
    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        let p = self.positions();
        let mut row = 0;
        for c in 0..self.in_channels {
            let plane = &image[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let src_row = (oy * self.stride + ki) * self.in_w + kj;
                        let dst_row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if self.stride == 1 {
                            dst_row.copy_from_slice(&plane[src_row..src_row + self.out_w]);
                        } else {
                            for (ox, d) in dst_row.iter_mut().enumerate() {
                                *d = plane[src_row + ox * self.stride];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-adds columns back onto one sample's `[C,H,W]` gradient.
    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        let p = self.positions();
        let mut row = 0;
        for c in 0..self.in_channels {
            let plane = &mut image[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let dst_row = (oy * self.stride + ki) * self.in_w + kj;
                        for ox in 0..self.out_w {
                            let d = &mut plane[dst_row + ox * self.stride];
                            *d = *d + src[oy * self.out_w + ox];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Valid cross-correlation: `out[n,f,y,x] = Σ_{c,i,j} in[n,c,y·s+i,x·s+j]·k[f,c,i,j] + b[f]`.
///
/// The sum runs over `(c, i, j)` in row-major order starting from zero, and
/// the bias is added last.
pub fn conv2d<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), bias.shape(), stride)?;
    let (k, p) = (g.patch_len(), g.positions());
    let mut out = vec![T::zero(); g.batch * g.filters * p];
    let mut cols = vec![T::zero(); k * p];
    let sample_in = g.in_channels * g.in_h * g.in_w;
    for n in 0..g.batch {
        g.im2col(&input.data()[n * sample_in..(n + 1) * sample_in], &mut cols);
        let out_s = &mut out[n * g.filters * p..(n + 1) * g.filters * p];
        gemm_nn(g.filters, k, p, kernel.data(), &cols, out_s);
        for (row, &b) in out_s.chunks_exact_mut(p).zip(bias.data()) {
            for o in row {
                *o = *o + b;
            }
        }
    }
    Tensor::new(g.output_shape(), out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    g: &ConvGeometry,
    upstream: &[T],
    want_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (k, p) = (g.patch_len(), g.positions());
    let sample_in = g.in_channels * g.in_h * g.in_w;
    let mut d_input = want_input.then(|| vec![T::zero(); input.len()]);
    let mut d_kernel = vec![T::zero(); kernel.len()];
    let mut d_bias = vec![T::zero(); g.filters];
    let mut cols = vec![T::zero(); k * p];
    let mut d_cols = vec![T::zero(); k * p];
    for n in 0..g.batch {
        let up = &upstream[n * g.filters * p..(n + 1) * g.filters * p];
        for (db, row) in d_bias.iter_mut().zip(up.chunks_exact(p)) {
            *db = row.iter().fold(*db, |acc, &x| acc + x);
        }
        g.im2col(&input.data()[n * sample_in..(n + 1) * sample_in], &mut cols);
        gemm_nt(g.filters, p, k, up, &cols, &mut d_kernel);
        if let Some(di) = d_input.as_mut() {
            d_cols.iter_mut().for_each(|x| *x = T::zero());
            gemm_tn(g.filters, k, p, kernel.data(), up, &mut d_cols);
            g.col2im(&d_cols, &mut di[n * sample_in..(n + 1) * sample_in]);
        }
    }
    (d_input, d_kernel, d_bias)
}

/// Max pooling over `[N,C,H,W]`; also returns the flat input index of each
/// selected element (first position in row-major window order on ties).
pub fn maxpool2d<T: Real>(input: &Tensor<T>, window: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    const OP: &str = "maxpool2d";
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::dim(OP, format!("input must be [N,C,H,W], got {s:?}")));
    }
    if window == 0 || stride == 0 {
        return Err(Error::contract(OP, "window and stride must be positive"));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if window > h || window > w {
        return Err(Error::dim(
            OP,
            format!("window {window} exceeds input axes 2,3 ({h}x{w})"),
        ));
    }
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for i in 0..window {
                    for j in 0..window {
                        let idx = base + (oy * stride + i) * w + ox * stride + j;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new([n, c, oh, ow], out)?, argmax))
}

/// `x[N,I] · w[I,O] + b[O]` on plain tensors.
pub fn dense<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(Error::dim(
            "dense",
            format!("x axis 1 must equal weight axis 0: x {xs:?}, weight {ws:?}"),
        ));
    }
    let (n, i, o) = (xs[0], xs[1], ws[1]);
    if b.shape() != [o] {
        return Err(Error::dim(
            "dense",
            format!("bias must be [{o}] to match weight axis 1, got {:?}", b.shape()),
        ));
    }
    let mut out = vec![T::zero(); n * o];
    gemm_nn(n, i, o, x.data(), w.data(), &mut out);
    if o > 0 {
        for row in out.chunks_exact_mut(o) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v = *v + bv;
            }
        }
    }
    Tensor::new([n, o], out)
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax along `axis`.
pub fn softmax_axis<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.ndim() {
        return Err(Error::dim(
            "softmax",
            format!("axis {axis} out of range for shape {:?}", x.shape()),
        ));
    }
    let (outer, len, inner) = axis_extents(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let max = (0..len).fold(T::neg_infinity(), |m, k| m.max(src[at(k)]));
            let mut total = T::zero();
            for k in 0..len {
                let e = (src[at(k)] - max).exp();
                out[at(k)] = e;
                total = total + e;
            }
            for k in 0..len {
                out[at(k)] = out[at(k)] / total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn softmax_axis_backward<T: Real>(y: &Tensor<T>, dy: &[T], axis: usize) -> Vec<T> {
    let (outer, len, inner) = axis_extents(y.shape(), axis);
    let yv = y.data();
    let mut dx = vec![T::zero(); yv.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let dot = (0..len).fold(T::zero(), |acc, k| acc + yv[at(k)] * dy[at(k)]);
            for k in 0..len {
                dx[at(k)] = yv[at(k)] * (dy[at(k)] - dot);
            }
        }
    }
    dx
}

/// Squash along the last axis: `v = s · sqrt(q) / (1 + q)` with `q = Σ s² + ε`,
/// so that `‖v‖ = q / (1 + q)` up to the ε guard and `squash(0) = 0`.
pub fn squash<T: Real>(s: &Tensor<T>) -> Result<Tensor<T>> {
    let d = last_axis(s, "squash")?;
    let eps = T::lit(NORM_EPS);
    let mut out = s.data().to_vec();
    for cap in out.chunks_exact_mut(d) {
        let q = cap.iter().fold(eps, |acc, &x| acc + x * x);
        let f = q.sqrt() / (T::one() + q);
        cap.iter_mut().for_each(|x| *x = *x * f);
    }
    Tensor::new(s.shape().to_vec(), out)
}

pub(crate) fn squash_backward<T: Real>(s: &Tensor<T>, dv: &[T]) -> Vec<T> {
    let d = *s.shape().last().unwrap_or(&1);
    let eps = T::lit(NORM_EPS);
    let two = T::lit(2.0);
    let mut ds = vec![T::zero(); s.len()];
    for ((cap, g), out) in s
        .data()
        .chunks_exact(d)
        .zip(dv.chunks_exact(d))
        .zip(ds.chunks_exact_mut(d))
    {
        let q = cap.iter().fold(eps, |acc, &x| acc + x * x);
        let root = q.sqrt();
        let one_q = T::one() + q;
        let f = root / one_q;
        // f'(q) = (1 - q) / (2 sqrt(q) (1 + q)^2)
        let df = (T::one() - q) / (two * root * one_q * one_q);
        let proj = cap.iter().zip(g).fold(T::zero(), |acc, (&x, &gv)| acc + x * gv);
        for ((o, &x), &gv) in out.iter_mut().zip(cap).zip(g) {
            *o = f * gv + two * df * proj * x;
        }
    }
    ds
}

/// Capsule lengths `sqrt(Σ v² + ε)` over the last axis.
pub fn capsule_norms<T: Real>(v: &Tensor<T>) -> Result<Tensor<T>> {
    let d = last_axis(v, "capsule_norms")?;
    let eps = T::lit(NORM_EPS);
    let data = v
        .data()
        .chunks_exact(d)
        .map(|cap| cap.iter().fold(eps, |acc, &x| acc + x * x).sqrt())
        .collect();
    let shape = v.shape()[..v.ndim() - 1].to_vec();
    Tensor::new(shape, data)
}

/// Prediction vectors `û[n,i,j,:] = u[n,i,:] · W[i,j,:,:]` (row-vector convention).
pub fn predict_vectors_batched<T: Real>(u: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, i_caps, j_caps, din, dout) = predict_dims(u.shape(), w.shape())?;
    let mut out = vec![T::zero(); n * i_caps * j_caps * dout];
    let (ud, wd) = (u.data(), w.data());
    for b in 0..n {
        for i in 0..i_caps {
            let ui = &ud[(b * i_caps + i) * din..(b * i_caps + i + 1) * din];
            let wi = &wd[i * j_caps * din * dout..(i + 1) * j_caps * din * dout];
            let oi = &mut out[(b * i_caps + i) * j_caps * dout..(b * i_caps + i + 1) * j_caps * dout];
            for j in 0..j_caps {
                gemm_nn(1, din, dout, ui, &wi[j * din * dout..(j + 1) * din * dout], &mut oi[j * dout..(j + 1) * dout]);
            }
        }
    }
    Tensor::new([n, i_caps, j_caps, dout], out)
}

pub(crate) fn predict_dims(u: &[usize], w: &[usize]) -> Result<(usize, usize, usize, usize, usize)> {
    const OP: &str = "predict_vectors";
    if u.len() != 3 || w.len() != 4 {
        return Err(Error::dim(
            OP,
            format!("expected u [N,in,in_dim] and W [in,out,in_dim,out_dim], got {u:?} and {w:?}"),
        ));
    }
    if u[1] != w[0] {
        return Err(Error::dim(
            OP,
            format!("u axis 1 (input capsules) is {} but W axis 0 is {}", u[1], w[0]),
        ));
    }
    if u[2] != w[2] {
        return Err(Error::dim(
            OP,
            format!("u axis 2 (capsule dim) is {} but W axis 2 is {}", u[2], w[2]),
        ));
    }
    Ok((u[0], w[0], w[1], w[2], w[3]))
}

pub(crate) fn predict_vectors_backward<T: Real>(
    u: &Tensor<T>,
    w: &Tensor<T>,
    d_uhat: &[T],
) -> (Vec<T>, Vec<T>) {
    let (us, ws) = (u.shape(), w.shape());
    let (n, i_caps, j_caps, din, dout) = (us[0], ws[0], ws[1], ws[2], ws[3]);
    let (ud, wd) = (u.data(), w.data());
    let mut du = vec![T::zero(); ud.len()];
    let mut dw = vec![T::zero(); wd.len()];
    for b in 0..n {
        for i in 0..i_caps {
            let ui = &ud[(b * i_caps + i) * din..(b * i_caps + i + 1) * din];
            let dui = &mut du[(b * i_caps + i) * din..(b * i_caps + i + 1) * din];
            for j in 0..j_caps {
                let blk = (i * j_caps + j) * din * dout;
                let g = &d_uhat[((b * i_caps + i) * j_caps + j) * dout..((b * i_caps + i) * j_caps + j + 1) * dout];
                let w_ij = &wd[blk..blk + din * dout];
                let dw_ij = &mut dw[blk..blk + din * dout];
                for ((du_d, &u_d), (w_row, dw_row)) in dui
                    .iter_mut()
                    .zip(ui)
                    .zip(w_ij.chunks_exact(dout).zip(dw_ij.chunks_exact_mut(dout)))
                {
                    *du_d = w_row.iter().zip(g).fold(*du_d, |acc, (&wv, &gv)| acc + wv * gv);
                    for (o, &gv) in dw_row.iter_mut().zip(g) {
                        *o = *o + u_d * gv;
                    }
                }
            }
        }
    }
    (du, dw)
}

/// Couplings-weighted sum `s[n,j,:] = Σ_i c[n,i,j] · û[n,i,j,:]`.
pub fn weighted_sum<T: Real>(c: &Tensor<T>, uhat: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, i_caps, j_caps, d) = routing_dims(c.shape(), uhat.shape())?;
    let (cd, ud) = (c.data(), uhat.data());
    let mut out = vec![T::zero(); n * j_caps * d];
    for b in 0..n {
        let s = &mut out[b * j_caps * d..(b + 1) * j_caps * d];
        for i in 0..i_caps {
            for j in 0..j_caps {
                let cij = cd[(b * i_caps + i) * j_caps + j];
                let u = &ud[((b * i_caps + i) * j_caps + j) * d..((b * i_caps + i) * j_caps + j + 1) * d];
                for (o, &x) in s[j * d..(j + 1) * d].iter_mut().zip(u) {
                    *o = *o + cij * x;
                }
            }
        }
    }
    Tensor::new([n, j_caps, d], out)
}

pub(crate) fn weighted_sum_backward<T: Real>(c: &Tensor<T>, uhat: &Tensor<T>, ds: &[T]) -> (Vec<T>, Vec<T>) {
    let us = uhat.shape();
    let (n, i_caps, j_caps, d) = (us[0], us[1], us[2], us[3]);
    let (cd, ud) = (c.data(), uhat.data());
    let mut dc = vec![T::zero(); cd.len()];
    let mut du = vec![T::zero(); ud.len()];
    for b in 0..n {
        for i in 0..i_caps {
            for j in 0..j_caps {
                let ci = (b * i_caps + i) * j_caps + j;
                let g = &ds[(b * j_caps + j) * d..(b * j_caps + j + 1) * d];
                let u = &ud[ci * d..(ci + 1) * d];
                dc[ci] = u.iter().zip(g).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                for (o, &y) in du[ci * d..(ci + 1) * d].iter_mut().zip(g) {
                    *o = cd[ci] * y;
                }
            }
        }
    }
    (dc, du)
}

/// Agreements `a[n,i,j] = û[n,i,j,:] · v[n,j,:]`.
pub fn agreement<T: Real>(uhat: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let us = uhat.shape();
    if us.len() != 4 || v.shape() != [us[0], us[2], us[3]] {
        return Err(Error::dim(
            "agreement",
            format!("û {:?} and v {:?} disagree on axes (N, out, dim)", us, v.shape()),
        ));
    }
    let (n, i_caps, j_caps, d) = (us[0], us[1], us[2], us[3]);
    let (ud, vd) = (uhat.data(), v.data());
    let mut out = vec![T::zero(); n * i_caps * j_caps];
    for b in 0..n {
        for i in 0..i_caps {
            for j in 0..j_caps {
                let ci = (b * i_caps + i) * j_caps + j;
                let u = &ud[ci * d..(ci + 1) * d];
                let vj = &vd[(b * j_caps + j) * d..(b * j_caps + j + 1) * d];
                out[ci] = u.iter().zip(vj).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
            }
        }
    }
    Tensor::new([n, i_caps, j_caps], out)
}

pub(crate) fn agreement_backward<T: Real>(uhat: &Tensor<T>, v: &Tensor<T>, da: &[T]) -> (Vec<T>, Vec<T>) {
    let us = uhat.shape();
    let (n, i_caps, j_caps, d) = (us[0], us[1], us[2], us[3]);
    let (ud, vd) = (uhat.data(), v.data());
    let mut du = vec![T::zero(); ud.len()];
    let mut dv = vec![T::zero(); vd.len()];
    for b in 0..n {
        for i in 0..i_caps {
            for j in 0..j_caps {
                let ci = (b * i_caps + i) * j_caps + j;
                let g = da[ci];
                let vj = &vd[(b * j_caps + j) * d..(b * j_caps + j + 1) * d];
                for (o, &y) in du[ci * d..(ci + 1) * d].iter_mut().zip(vj) {
                    *o = g * y;
                }
                let u = &ud[ci * d..(ci + 1) * d];
                for (o, &x) in dv[(b * j_caps + j) * d..(b * j_caps + j + 1) * d].iter_mut().zip(u) {
                    *o = *o + g * x;
                }
            }
        }
    }
    (du, dv)
}

fn routing_dims(c: &[usize], uhat: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if uhat.len() != 4 || c != &uhat[..3] {
        return Err(Error::dim(
            "weighted_sum",
            format!("couplings {c:?} must equal û {uhat:?} on axes (N, in, out)"),
        ));
    }
    Ok((uhat[0], uhat[1], uhat[2], uhat[3]))
}

fn last_axis<T: Real>(x: &Tensor<T>, op: &'static str) -> Result<usize> {
    match x.shape().last() {
        Some(&d) if d > 0 => Ok(d),
        _ => Err(Error::dim(op, format!("needs a non-empty last axis, got {:?}", x.shape()))),
    }
}
