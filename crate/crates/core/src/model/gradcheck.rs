use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainedModel;
use crate::dsp::Chromagram;
use crate::error::{Error, Result};
use crate::ndiff::{relative_error, GradCheckReport, Graph, Tensor};

/// Training-mode batch loss in f64 for explicit parameter values, with the
/// gradients of every trainable parameter when `grads` is set.
fn batch_loss(
    model: &TrainedModel,
    params: &[Tensor<f64>],
    x: &Tensor<f64>,
    labels: &[usize],
    grads: bool,
) -> Result<(f64, Vec<Option<Tensor<f64>>>)> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<_> = params
        .iter()
        .zip(model.param_specs())
        .map(|(p, s)| {
            if grads && s.trainable {
                g.param(p.clone())
            } else {
                g.constant(p.clone())
            }
        })
        .collect();
    let xv = g.constant(x.clone());
    let fw = model.forward(&mut g, &vars, xv, true)?;
    let loss = g.softmax_cross_entropy(fw.logits, labels)?;
    let value = g.scalar(loss);
    if !grads {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    Ok((value, vars.iter().map(|&v| g.grad(v).cloned()).collect()))
}

/// Central-difference check of the training loss gradient on `samples`
/// randomly drawn trainable parameter elements.
pub fn check_loss_gradient(
    model: &TrainedModel,
    chromas: &[&Chromagram],
    labels: &[usize],
    samples: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if chromas.len() != labels.len() || chromas.len() < 2 {
        return Err(Error::InvalidInput("need at least two labeled inputs".into()));
    }
    let params: Vec<Tensor<f64>> = model.params().iter().map(|p| p.cast()).collect();
    let x = model.input_tensor::<f64>(chromas)?;
    let (_, grads) = batch_loss(model, &params, &x, labels, true)?;
    let trainable: Vec<usize> = (0..params.len())
        .filter(|&i| model.param_specs()[i].trainable)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut analytic, mut numeric) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
    for _ in 0..samples {
        let i = trainable[rng.gen_range(0..trainable.len())];
        let j = rng.gen_range(0..params[i].len());
        let mut p = params.clone();
        let base = params[i].data()[j];
        p[i].data_mut()[j] = base + eps;
        let (plus, _) = batch_loss(model, &p, &x, labels, false)?;
        p[i].data_mut()[j] = base - eps;
        let (minus, _) = batch_loss(model, &p, &x, labels, false)?;
        numeric.push((plus - minus) / (2.0 * eps));
        analytic.push(grads[i].as_ref().map_or(0.0, |g| g.data()[j]));
    }
    let rel_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .collect();
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig, Variant};

    #[test]
    fn small_models_pass() {
        for v in Variant::ALL {
            let mut c = ModelConfig::new(v, 3);
            c.input_frames = 12;
            if c.lstm_hidden > 0 {
                c.lstm_hidden = 6;
            }
            let m = build_model(&c, vec!["a".into(), "b".into(), "c".into()], 1).unwrap();
            let clips: Vec<Chromagram> = (0..3)
                .map(|k| {
                    let e = (0..12 * 12).map(|i| ((i * (k + 3)) % 13) as f32 / 7.0).collect();
                    let mut ch = Chromagram::from_energy(e, 12, 31.25).unwrap();
                    ch.tonic_normalized = c.tonic_normalize;
                    ch
                })
                .collect();
            let refs: Vec<&Chromagram> = clips.iter().collect();
            let r = check_loss_gradient(&m, &refs, &[0, 1, 2], 40, 1e-6, 2).unwrap();
            assert!(r.max_rel_error <= 1e-2, "{v}: {}", r.max_rel_error);
        }
    }
}
