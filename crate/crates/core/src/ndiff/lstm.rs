//! Fused single-layer LSTM with back-propagation through time.
//!
//! Gate layout along the `4H` axis is `[input, forget, candidate, output]`.
//! The initial hidden and cell states are zero.

use super::graph::{sigmoid, Contribs, Graph, Op, Var};
use super::tensor::{gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

pub(crate) struct LstmCache<T> {
    input: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    /// Activated gates, `[B*T, 4H]`.
    gates: Vec<T>,
    /// Cell states, `[B*T, H]`.
    cells: Vec<T>,
    tanh_cells: Vec<T>,
    dims: (usize, usize, usize, usize),
}

impl<T: Scalar> LstmCache<T> {
    pub(crate) fn backward(&self, g: &Graph<T>, gout: &Tensor<T>) -> Contribs<T> {
        let (b, t, d, h) = self.dims;
        let h4 = 4 * h;
        let one = T::one();
        let outputs = gout; // [B, T, H]
        let mut dpre = vec![T::zero(); b * t * h4];
        let mut dh_next = vec![T::zero(); b * h];
        let mut dc_next = vec![T::zero(); b * h];
        let w_hh = g.value(self.w_hh).data();
        for ti in (0..t).rev() {
            for bi in 0..b {
                let row = bi * t + ti;
                let gates = &self.gates[row * h4..(row + 1) * h4];
                let tc = &self.tanh_cells[row * h..(row + 1) * h];
                let dp = &mut dpre[row * h4..(row + 1) * h4];
                for j in 0..h {
                    let (ig, fg, cg, og) =
                        (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                    let c_prev = if ti > 0 {
                        self.cells[(row - 1) * h + j]
                    } else {
                        T::zero()
                    };
                    let dh = outputs.data()[row * h + j] + dh_next[bi * h + j];
                    let dc = dh * og * (one - tc[j] * tc[j]) + dc_next[bi * h + j];
                    dp[j] = dc * cg * ig * (one - ig);
                    dp[h + j] = dc * c_prev * fg * (one - fg);
                    dp[2 * h + j] = dc * ig * (one - cg * cg);
                    dp[3 * h + j] = dh * tc[j] * og * (one - og);
                    dc_next[bi * h + j] = dc * fg;
                }
            }
            // dh_next = dpre_t · W_hhᵀ
            gemm(
                b,
                h4,
                h,
                MatRef {
                    data: &dpre[ti * h4..],
                    rs: t * h4,
                    cs: 1,
                },
                MatRef::transposed(w_hh, h4),
                T::zero(),
                &mut dh_next,
                h,
            );
        }
        let rows = b * t;
        let mut out = Vec::with_capacity(4);
        if g.requires_grad(self.input) {
            let mut gx = Tensor::zeros(&[b, t, d]);
            gemm(
                rows,
                h4,
                d,
                MatRef::rows(&dpre, h4),
                MatRef::transposed(g.value(self.w_ih).data(), h4),
                T::zero(),
                gx.data_mut(),
                d,
            );
            out.push((self.input, gx));
        }
        if g.requires_grad(self.w_ih) {
            let mut gw = Tensor::zeros(&[d, h4]);
            gemm(
                d,
                rows,
                h4,
                MatRef::transposed(g.value(self.input).data(), d),
                MatRef::rows(&dpre, h4),
                T::zero(),
                gw.data_mut(),
                h4,
            );
            out.push((self.w_ih, gw));
        }
        if g.requires_grad(self.w_hh) {
            // previous hidden state per row, zero at t = 0
            let hout = self.h_out();
            let mut hprev = vec![T::zero(); rows * h];
            for bi in 0..b {
                for ti in 1..t {
                    let dst = (bi * t + ti) * h;
                    let src = (bi * t + ti - 1) * h;
                    hprev[dst..dst + h].copy_from_slice(&hout[src..src + h]);
                }
            }
            let mut gw = Tensor::zeros(&[h, h4]);
            gemm(
                h,
                rows,
                h4,
                MatRef::transposed(&hprev, h),
                MatRef::rows(&dpre, h4),
                T::zero(),
                gw.data_mut(),
                h4,
            );
            out.push((self.w_hh, gw));
        }
        if g.requires_grad(self.bias) {
            let mut gb = Tensor::zeros(&[h4]);
            for row in dpre.chunks_exact(h4) {
                for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
                    *acc += v;
                }
            }
            out.push((self.bias, gb));
        }
        out
    }

    /// Hidden outputs recomputed from cached gates: `h = o ⊙ tanh(c)`.
    fn h_out(&self) -> Vec<T> {
        let h = self.dims.3;
        let h4 = 4 * h;
        let rows = self.tanh_cells.len() / h;
        let mut out = Vec::with_capacity(rows * h);
        for r in 0..rows {
            for j in 0..h {
                out.push(self.gates[r * h4 + 3 * h + j] * self.tanh_cells[r * h + j]);
            }
        }
        out
    }
}

impl<T: Scalar> Graph<T> {
    /// Run an LSTM over `x: [B, T, D]` and return every hidden state,
    /// `[B, T, H]`. `w_ih: [D, 4H]`, `w_hh: [H, 4H]`, `bias: [4H]`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var) -> Result<Var> {
        let &[b, t, d] = self.value(x).shape() else {
            return Err(Error::shape(
                "[B, T, D]",
                format!("{:?}", self.value(x).shape()),
            ));
        };
        if t == 0 {
            return Err(Error::InvalidInput(
                "lstm needs at least one time step".into(),
            ));
        }
        let wi = self.value(w_ih).shape();
        let wh = self.value(w_hh).shape();
        if wi.len() != 2 || wi[0] != d || !wi[1].is_multiple_of(4) {
            return Err(Error::shape(format!("w_ih [{d}, 4H]"), format!("{wi:?}")));
        }
        let h = wi[1] / 4;
        let h4 = 4 * h;
        if wh != [h, h4] || self.value(bias).shape() != [h4] {
            return Err(Error::shape(
                format!("w_hh [{h}, {h4}] and bias [{h4}]"),
                format!("{wh:?} and {:?}", self.value(bias).shape()),
            ));
        }
        let rows = b * t;
        let mut pre = vec![T::zero(); rows * h4];
        let bias_v = self.value(bias).data();
        for row in pre.chunks_exact_mut(h4) {
            row.copy_from_slice(bias_v);
        }
        gemm(
            rows,
            d,
            h4,
            MatRef::rows(self.value(x).data(), d),
            MatRef::rows(self.value(w_ih).data(), h4),
            T::one(),
            &mut pre,
            h4,
        );
        let w_hh_v = self.value(w_hh).data();
        let mut gates = pre;
        let mut cells = vec![T::zero(); rows * h];
        let mut tanh_cells = vec![T::zero(); rows * h];
        let mut hout = vec![T::zero(); rows * h];
        let mut h_prev = vec![T::zero(); b * h];
        let mut c_prev = vec![T::zero(); b * h];
        let mut rec = vec![T::zero(); b * h4];
        for ti in 0..t {
            if ti > 0 {
                gemm(
                    b,
                    h,
                    h4,
                    MatRef::rows(&h_prev, h),
                    MatRef::rows(w_hh_v, h4),
                    T::zero(),
                    &mut rec,
                    h4,
                );
            }
            for bi in 0..b {
                let row = bi * t + ti;
                let gt = &mut gates[row * h4..(row + 1) * h4];
                if ti > 0 {
                    for (gv, &r) in gt.iter_mut().zip(&rec[bi * h4..(bi + 1) * h4]) {
                        *gv += r;
                    }
                }
                for j in 0..h {
                    gt[j] = sigmoid(gt[j]);
                    gt[h + j] = sigmoid(gt[h + j]);
                    gt[2 * h + j] = gt[2 * h + j].tanh();
                    gt[3 * h + j] = sigmoid(gt[3 * h + j]);
                    let c = gt[h + j] * c_prev[bi * h + j] + gt[j] * gt[2 * h + j];
                    let tc = c.tanh();
                    let hv = gt[3 * h + j] * tc;
                    cells[row * h + j] = c;
                    tanh_cells[row * h + j] = tc;
                    hout[row * h + j] = hv;
                    c_prev[bi * h + j] = c;
                    h_prev[bi * h + j] = hv;
                }
            }
        }
        if hout.iter().any(|v| !v.is_finite()) || cells.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lstm state".into()));
        }
        let rg = [x, w_ih, w_hh, bias].iter().any(|&v| self.requires_grad(v));
        let cache = LstmCache {
            input: x,
            w_ih,
            w_hh,
            bias,
            gates,
            cells,
            tanh_cells,
            dims: (b, t, d, h),
        };
        Ok(self.push(Tensor::new(&[b, t, h], hout)?, Op::Lstm(cache), rg))
    }
}
