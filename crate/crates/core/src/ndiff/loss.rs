use super::graph::{Contribs, Graph, Op, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Guard added inside the logarithm of the cross-entropy.
pub const LOG_GUARD: f64 = 1e-12;

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).as_f64().exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| T::from_f64(e / total)).collect()
}

/// `−Σ tᵢ log(pᵢ + 1e-12)` for a one-hot target.
pub fn cce_loss<T: Scalar>(p: &[T], t: &[T]) -> Result<f64> {
    if p.len() != t.len() {
        return Err(Error::shape(p.len(), t.len()));
    }
    let ones = t.iter().filter(|&&v| v == T::one()).count();
    let zeros = t.iter().filter(|&&v| v == T::zero()).count();
    if ones != 1 || ones + zeros != t.len() {
        return Err(Error::InvalidInput("target is not one-hot".into()));
    }
    Ok(-p
        .iter()
        .zip(t)
        .map(|(&pi, &ti)| ti.as_f64() * (pi.as_f64() + LOG_GUARD).ln())
        .sum::<f64>())
}

pub(crate) struct CeCache<T> {
    logits: Var,
    probs: Vec<T>,
    targets: Vec<usize>,
}

impl<T: Scalar> CeCache<T> {
    pub(crate) fn backward(&self, g: &Graph<T>, gout: &Tensor<T>) -> Contribs<T> {
        let shape = g.value(self.logits).shape();
        let n = shape[1];
        let scale = gout.data()[0] / T::from_f64(self.targets.len() as f64);
        let mut grad = Tensor::new(shape, self.probs.clone()).expect("shape");
        for (row, &t) in grad.data_mut().chunks_exact_mut(n).zip(&self.targets) {
            row[t] -= T::one();
            row.iter_mut().for_each(|v| *v *= scale);
        }
        vec![(self.logits, grad)]
    }
}

impl<T: Scalar> Graph<T> {
    /// Softmax followed by categorical cross-entropy, averaged over the
    /// batch. `logits: [B, N]`, one class index per row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let &[b, n] = self.value(logits).shape() else {
            return Err(Error::shape(
                "[B, N]",
                format!("{:?}", self.value(logits).shape()),
            ));
        };
        if targets.len() != b || b == 0 {
            return Err(Error::shape(format!("{b} targets"), targets.len()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::InvalidInput(format!(
                "target {t} out of {n} classes"
            )));
        }
        let mut probs = Vec::with_capacity(b * n);
        let mut loss = 0f64;
        for (row, &t) in self.value(logits).data().chunks_exact(n).zip(targets) {
            let p = softmax(row);
            loss -= (p[t].as_f64() + LOG_GUARD).ln();
            probs.extend(p);
        }
        loss /= b as f64;
        let rg = self.requires_grad(logits);
        let cache = CeCache {
            logits,
            probs,
            targets: targets.to_vec(),
        };
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), Op::SoftmaxCe(cache), rg))
    }
}
