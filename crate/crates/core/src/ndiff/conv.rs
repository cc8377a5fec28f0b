//! Same-padded stride-1 convolution (im2col + GEMM) and max pooling over
//! channel-last `[batch, time, freq, channels]` activations.

use super::graph::{Contribs, Graph, Op, Var};
use super::tensor::{gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    b: usize,
    t: usize,
    f: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
}

impl ConvDims {
    fn k(&self) -> usize {
        self.kh * self.kw * self.cin
    }
    fn pads(&self) -> (isize, isize) {
        (((self.kh - 1) / 2) as isize, ((self.kw - 1) / 2) as isize)
    }
}

pub(crate) struct ConvCache {
    input: Var,
    kernel: Var,
    bias: Var,
    dims: ConvDims,
}

/// Patch matrix of one sample: `[t*f, kh*kw*cin]`, zero outside the input.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims, cols: &mut [T]) {
    let k = d.k();
    let (pt, pf) = d.pads();
    cols.fill(T::zero());
    for ti in 0..d.t {
        for fi in 0..d.f {
            let row = (ti * d.f + fi) * k;
            for i in 0..d.kh {
                let ts = ti as isize + i as isize - pt;
                if ts < 0 || ts >= d.t as isize {
                    continue;
                }
                for j in 0..d.kw {
                    let fs = fi as isize + j as isize - pf;
                    if fs < 0 || fs >= d.f as isize {
                        continue;
                    }
                    let src = (ts as usize * d.f + fs as usize) * d.cin;
                    let dst = row + (i * d.kw + j) * d.cin;
                    cols[dst..dst + d.cin].copy_from_slice(&x[src..src + d.cin]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`] for one sample, accumulated into `x`.
fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, x: &mut [T]) {
    let k = d.k();
    let (pt, pf) = d.pads();
    for ti in 0..d.t {
        for fi in 0..d.f {
            let row = (ti * d.f + fi) * k;
            for i in 0..d.kh {
                let ts = ti as isize + i as isize - pt;
                if ts < 0 || ts >= d.t as isize {
                    continue;
                }
                for j in 0..d.kw {
                    let fs = fi as isize + j as isize - pf;
                    if fs < 0 || fs >= d.f as isize {
                        continue;
                    }
                    let dst = (ts as usize * d.f + fs as usize) * d.cin;
                    let src = row + (i * d.kw + j) * d.cin;
                    for (o, &g) in x[dst..dst + d.cin].iter_mut().zip(&cols[src..src + d.cin]) {
                        *o += g;
                    }
                }
            }
        }
    }
}

impl ConvCache {
    pub(crate) fn backward<T: Scalar>(&self, g: &Graph<T>, gout: &Tensor<T>) -> Contribs<T> {
        let d = &self.dims;
        let (rows, k, n) = (d.t * d.f, d.k(), d.cout);
        let x = g.value(self.input).data();
        let w = g.value(self.kernel).data();
        let (want_k, want_x) = (g.requires_grad(self.kernel), g.requires_grad(self.input));
        let mut gk = want_k.then(|| Tensor::zeros(g.value(self.kernel).shape()));
        let mut gx = want_x.then(|| Tensor::zeros(g.value(self.input).shape()));
        let mut cols = vec![T::zero(); rows * k];
        let in_len = rows * d.cin;
        for bi in 0..d.b {
            let go = &gout.data()[bi * rows * n..(bi + 1) * rows * n];
            if let Some(gk) = gk.as_mut() {
                im2col(&x[bi * in_len..(bi + 1) * in_len], d, &mut cols);
                gemm(
                    k,
                    rows,
                    n,
                    MatRef::transposed(&cols, k),
                    MatRef::rows(go, n),
                    T::one(),
                    gk.data_mut(),
                    n,
                );
            }
            if let Some(gx) = gx.as_mut() {
                gemm(
                    rows,
                    n,
                    k,
                    MatRef::rows(go, n),
                    MatRef::transposed(w, n),
                    T::zero(),
                    &mut cols,
                    k,
                );
                col2im(&cols, d, &mut gx.data_mut()[bi * in_len..(bi + 1) * in_len]);
            }
        }
        let mut out = Vec::with_capacity(3);
        if let Some(gk) = gk {
            out.push((self.kernel, gk));
        }
        if g.requires_grad(self.bias) {
            let mut gb = Tensor::zeros(&[n]);
            for row in gout.data().chunks_exact(n) {
                for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
                    *acc += v;
                }
            }
            out.push((self.bias, gb));
        }
        if let Some(gx) = gx {
            out.push((self.input, gx));
        }
        out
    }
}

pub(crate) struct PoolCache {
    input: Var,
    /// Flat input index of the maximum feeding each output element.
    argmax: Vec<u32>,
}

impl PoolCache {
    pub(crate) fn backward<T: Scalar>(&self, g: &Graph<T>, gout: &Tensor<T>) -> Contribs<T> {
        let mut gx = Tensor::zeros(g.value(self.input).shape());
        let data = gx.data_mut();
        for (&src, &gv) in self.argmax.iter().zip(gout.data()) {
            data[src as usize] += gv;
        }
        vec![(self.input, gx)]
    }
}

impl<T: Scalar> Graph<T> {
    /// Cross-correlation with zero "same" padding and unit stride.
    ///
    /// `x: [B, T, F, C_in]`, `kernel: [kh, kw, C_in, C_out]`, `bias: [C_out]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (xs, ks) = (self.value(x).shape(), self.value(kernel).shape());
        let (&[b, t, f, cin], &[kh, kw, kcin, cout]) = (xs, ks) else {
            return Err(Error::shape(
                "x [B,T,F,C] and kernel [kh,kw,Cin,Cout]",
                format!("{xs:?} and {ks:?}"),
            ));
        };
        if kcin != cin {
            return Err(Error::shape(
                format!("kernel with {cin} input channels"),
                format!("{kcin} input channels"),
            ));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::shape(
                format!("bias [{cout}]"),
                format!("{:?}", self.value(bias).shape()),
            ));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::InvalidInput("empty convolution kernel".into()));
        }
        let dims = ConvDims {
            b,
            t,
            f,
            cin,
            cout,
            kh,
            kw,
        };
        let mut out = Tensor::zeros(&[b, t, f, cout]);
        let bias_v = self.value(bias).data();
        for row in out.data_mut().chunks_exact_mut(cout) {
            row.copy_from_slice(bias_v);
        }
        let (rows, k) = (t * f, dims.k());
        let mut cols = vec![T::zero(); rows * k];
        let (xv, wv) = (self.value(x).data(), self.value(kernel).data());
        for (xs, ys) in xv
            .chunks_exact(rows * cin)
            .zip(out.data_mut().chunks_exact_mut(rows * cout))
        {
            im2col(xs, &dims, &mut cols);
            gemm(
                rows,
                k,
                cout,
                MatRef::rows(&cols, k),
                MatRef::rows(wv, cout),
                T::one(),
                ys,
                cout,
            );
        }
        let rg = self.requires_grad(x) || self.requires_grad(kernel) || self.requires_grad(bias);
        let cache = ConvCache {
            input: x,
            kernel,
            bias,
            dims,
        };
        Ok(self.push(out, Op::Conv2d(cache), rg))
    }

    /// Max pooling with non-overlapping `pool_t × pool_f` windows; partial
    /// windows at the edges are kept. Ties go to the first element in
    /// time-major scan order.
    pub fn maxpool2d(&mut self, x: Var, pool_t: usize, pool_f: usize) -> Result<Var> {
        let &[b, t, f, c] = self.value(x).shape() else {
            return Err(Error::shape(
                "[B,T,F,C]",
                format!("{:?}", self.value(x).shape()),
            ));
        };
        if pool_t == 0 || pool_f == 0 {
            return Err(Error::InvalidInput("pool size must be at least 1".into()));
        }
        let (to, fo) = (t.div_ceil(pool_t), f.div_ceil(pool_f));
        let src = self.value(x).data();
        let mut out = vec![T::zero(); b * to * fo * c];
        let mut argmax = vec![0u32; b * to * fo * c];
        for bi in 0..b {
            for ot in 0..to {
                for of in 0..fo {
                    let o = ((bi * to + ot) * fo + of) * c;
                    let (best, idx) = (&mut out[o..o + c], &mut argmax[o..o + c]);
                    let mut first = true;
                    for ti in ot * pool_t..((ot + 1) * pool_t).min(t) {
                        for fi in of * pool_f..((of + 1) * pool_f).min(f) {
                            let base = ((bi * t + ti) * f + fi) * c;
                            let row = &src[base..base + c];
                            if first {
                                best.copy_from_slice(row);
                                idx.iter_mut()
                                    .enumerate()
                                    .for_each(|(ci, v)| *v = (base + ci) as u32);
                                first = false;
                                continue;
                            }
                            for ci in 0..c {
                                if row[ci] > best[ci] {
                                    best[ci] = row[ci];
                                    idx[ci] = (base + ci) as u32;
                                }
                            }
                        }
                    }
                }
            }
        }
        let rg = self.requires_grad(x);
        let v = Tensor::new(&[b, to, fo, c], out)?;
        Ok(self.push(v, Op::MaxPool(PoolCache { input: x, argmax }), rg))
    }

    /// Pool over frequency only: `(1, w)` windows.
    pub fn maxpool_freq(&mut self, x: Var, w: usize) -> Result<Var> {
        self.maxpool2d(x, 1, w)
    }
}
