//! Per-channel batch normalization over the trailing (channel) axis.

use super::graph::{Contribs, Graph, Op, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

/// Batch statistics measured by a training-mode pass (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) struct BnCache<T> {
    input: Var,
    gamma: Var,
    beta: Var,
    mean: Vec<T>,
    inv_std: Vec<T>,
    /// Statistics came from the batch itself, so they depend on the input.
    batch_stats: bool,
}

impl<T: Scalar> BnCache<T> {
    pub(crate) fn backward(&self, g: &Graph<T>, gout: &Tensor<T>) -> Contribs<T> {
        let c = self.inv_std.len();
        let x = g.value(self.input).data();
        let mut sum_dy = vec![0f64; c];
        let mut sum_dy_xhat = vec![0f64; c];
        let mut xhat = vec![T::zero(); c];
        for (dy, xr) in gout.data().chunks_exact(c).zip(x.chunks_exact(c)) {
            for ch in 0..c {
                xhat[ch] = (xr[ch] - self.mean[ch]) * self.inv_std[ch];
            }
            for ch in 0..c {
                sum_dy[ch] += dy[ch].as_f64();
                sum_dy_xhat[ch] += (dy[ch] * xhat[ch]).as_f64();
            }
        }
        let mut out = Vec::with_capacity(3);
        if g.requires_grad(self.input) {
            let gamma = g.value(self.gamma).data();
            let scale: Vec<T> = (0..c).map(|ch| gamma[ch] * self.inv_std[ch]).collect();
            let (shift, slope) = if self.batch_stats {
                let n = (x.len() / c) as f64;
                (
                    sum_dy.iter().map(|&s| T::from_f64(s / n)).collect(),
                    sum_dy_xhat.iter().map(|&s| T::from_f64(s / n)).collect(),
                )
            } else {
                (vec![T::zero(); c], vec![T::zero(); c])
            };
            let mut gx = Tensor::zeros(gout.shape());
            for ((dst, dy), xr) in gx
                .data_mut()
                .chunks_exact_mut(c)
                .zip(gout.data().chunks_exact(c))
                .zip(x.chunks_exact(c))
            {
                for ch in 0..c {
                    let xh = (xr[ch] - self.mean[ch]) * self.inv_std[ch];
                    dst[ch] = scale[ch] * (dy[ch] - shift[ch] - xh * slope[ch]);
                }
            }
            out.push((self.input, gx));
        }
        let to_t = |v: &[f64]| {
            Tensor::new(&[c], v.iter().map(|&x| T::from_f64(x)).collect()).expect("shape")
        };
        out.push((self.gamma, to_t(&sum_dy_xhat)));
        out.push((self.beta, to_t(&sum_dy)));
        out
    }
}

impl<T: Scalar> Graph<T> {
    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let c = self.value(x).last_dim();
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::shape(
                format!("gamma/beta [{c}]"),
                format!(
                    "{:?}/{:?}",
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            ));
        }
        Ok(c)
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: [&[f64]; 2],
        eps: f64,
        batch_stats: bool,
    ) -> Result<Var> {
        let [mean, var] = stats;
        let c = mean.len();
        let inv_std: Vec<T> = var
            .iter()
            .map(|v| T::from_f64(1.0 / (v + eps).sqrt()))
            .collect();
        let mean: Vec<T> = mean.iter().map(|&m| T::from_f64(m)).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let data = self.value(x).data();
        let mut out = vec![T::zero(); data.len()];
        for (dst, row) in out.chunks_exact_mut(c).zip(data.chunks_exact(c)) {
            for ch in 0..c {
                dst[ch] = (row[ch] - mean[ch]) * inv_std[ch] * gv[ch] + bv[ch];
            }
        }
        let v = Tensor::new(self.value(x).shape(), out)?;
        let rg = self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        let cache = BnCache {
            input: x,
            gamma,
            beta,
            mean,
            inv_std,
            batch_stats,
        };
        Ok(self.push(v, Op::BatchNorm(cache), rg))
    }

    /// Training-mode batch normalization: standardize each channel with the
    /// statistics of this batch. Returns the batch statistics so the caller
    /// can update running averages.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let c = self.bn_check(x, gamma, beta)?;
        if self.value(x).len() / c.max(1) < 2 {
            return Err(Error::InvalidInput(
                "training-mode batch normalization needs at least 2 rows per channel".into(),
            ));
        }
        let data = self.value(x).data();
        let rows = data.len() / c;
        let mut mean = vec![0f64; c];
        for row in data.chunks_exact(c) {
            for ch in 0..c {
                mean[ch] += row[ch].as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0f64; c];
        for row in data.chunks_exact(c) {
            for ch in 0..c {
                let d = row[ch].as_f64() - mean[ch];
                var[ch] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let y = self.bn_apply(x, gamma, beta, [&mean, &var], eps, true)?;
        Ok((y, BatchStats { mean, var }))
    }

    /// Inference-mode batch normalization with fixed running statistics.
    pub fn batchnorm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let c = self.bn_check(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape(format!("{c} running stats"), mean.len()));
        }
        if var.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidInput("negative running variance".into()));
        }
        self.bn_apply(x, gamma, beta, [mean, var], eps, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizes_channel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap());
        let gm = g.constant(Tensor::full(&[1], 1.0));
        let bt = g.constant(Tensor::zeros(&[1]));
        let (y, stats) = g.batchnorm_train(x, gm, bt, BN_EPS).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![1.0]);
        let v = g.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-4 && (v[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn already_standard_is_unchanged() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap());
        let gm = g.constant(Tensor::full(&[1], 1.0));
        let bt = g.constant(Tensor::zeros(&[1]));
        let (y, _) = g.batchnorm_train(x, gm, bt, BN_EPS).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!((a - b).abs() <= 1e-3);
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(&[3, 2], vec![1.0, 9.0, -4.0, 2.0, 0.5, 7.0]).unwrap());
        let gm = g.constant(Tensor::zeros(&[2]));
        let bt = g.constant(Tensor::full(&[2], 0.3));
        let (y, _) = g.batchnorm_train(x, gm, bt, BN_EPS).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.3));
        let y = g
            .batchnorm_infer(x, gm, bt, &[0.0, 1.0], &[1.0, 2.0], BN_EPS)
            .unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn single_row_rejected_in_training() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 2]));
        let gm = g.constant(Tensor::full(&[2], 1.0));
        let bt = g.constant(Tensor::zeros(&[2]));
        assert!(g.batchnorm_train(x, gm, bt, BN_EPS).is_err());
        assert!(g
            .batchnorm_infer(x, gm, bt, &[0.0; 2], &[1.0; 2], BN_EPS)
            .is_ok());
    }
}
