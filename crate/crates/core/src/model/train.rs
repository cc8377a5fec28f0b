use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, build_model, vote, Hyperparams, ModelConfig, TrainedModel};
use crate::dataio::{kfold_songs, DatasetManifest};
use crate::dsp::Chromagram;
use crate::error::{Error, Result};
use crate::evalsal::weighted_f1;
use crate::ndiff::{without_subnormals, Graph, Tensor};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// A 30 s chromagram with its class index and source song.
#[derive(Debug, Clone)]
pub struct LabeledChunk {
    pub clip_id: String,
    pub song_id: String,
    pub label: usize,
    pub chroma: Chromagram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_f1: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(model: &TrainedModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, model: &mut TrainedModel, grads: &[Option<Tensor<f32>>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = model.params_mut()[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j] as f64;
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
                let step = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
                p[j] = (p[j] as f64 - step) as f32;
            }
        }
    }
}

fn check_chunks(model: &TrainedModel, chunks: &[LabeledChunk], what: &str) -> Result<()> {
    if chunks.is_empty() {
        return Err(Error::InvalidInput(format!("{what} split is empty")));
    }
    for c in chunks {
        if c.label >= model.num_classes() {
            return Err(Error::UnknownClass(format!(
                "{} has label {}",
                c.clip_id, c.label
            )));
        }
        if c.chroma.tonic_normalized != model.config.tonic_normalize {
            return Err(Error::InvalidInput(format!(
                "{}: {} expects tonic_normalized = {}",
                c.clip_id, model.config.variant, model.config.tonic_normalize
            )));
        }
        if c.chroma.frames != model.config.input_frames {
            return Err(Error::shape(
                format!("{} frames", model.config.input_frames),
                c.chroma.frames,
            ));
        }
    }
    Ok(())
}

/// Mean cross-entropy and weighted F1 in inference mode.
fn evaluate(model: &TrainedModel, chunks: &[LabeledChunk]) -> Result<(f64, f64)> {
    let refs: Vec<&Chromagram> = chunks.iter().map(|c| &c.chroma).collect();
    let probs = model.predict_batch(&refs)?;
    let labels: Vec<usize> = chunks.iter().map(|c| c.label).collect();
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let loss = probs
        .iter()
        .zip(&labels)
        .map(|(p, &l)| -(p[l] as f64 + crate::ndiff::LOG_GUARD).ln())
        .sum::<f64>()
        / chunks.len() as f64;
    Ok((loss, weighted_f1(&preds, &labels, model.num_classes())))
}

/// Shuffled mini-batches; a trailing batch of one joins its predecessor
/// so that batch statistics are always defined.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().map(Vec::len) == Some(1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

/// One optimizer step. Returns the batch loss and batch predictions.
fn train_step(
    model: &mut TrainedModel,
    adam: &mut Adam,
    chunks: &[&LabeledChunk],
    lr: f64,
) -> Result<(f64, Vec<usize>)> {
    without_subnormals(|| train_step_inner(model, adam, chunks, lr))
}

fn train_step_inner(
    model: &mut TrainedModel,
    adam: &mut Adam,
    chunks: &[&LabeledChunk],
    lr: f64,
) -> Result<(f64, Vec<usize>)> {
    let mut g = Graph::<f32>::new();
    let vars = model.bind(&mut g, true);
    let refs: Vec<&Chromagram> = chunks.iter().map(|c| &c.chroma).collect();
    let x = g.constant(model.input_tensor(&refs)?);
    let fw = model.forward(&mut g, &vars, x, true)?;
    let labels: Vec<usize> = chunks.iter().map(|c| c.label).collect();
    let loss = g.softmax_cross_entropy(fw.logits, &labels)?;
    let loss_v = g.scalar(loss) as f64;
    if !loss_v.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let n = model.num_classes();
    let preds = g
        .value(fw.logits)
        .data()
        .chunks_exact(n)
        .map(argmax)
        .collect();
    g.backward(loss)?;
    let grads: Vec<Option<Tensor<f32>>> = vars.iter().map(|&v| g.grad(v).cloned()).collect();
    drop(g);
    adam.update(model, &grads, lr);
    let mom = model.config.bn_momentum;
    let stages = model.layout.stages.clone();
    for (idx, s) in stages.iter().zip(&fw.stats) {
        for (dst, new) in [(idx.mean, &s.mean), (idx.var, &s.var)] {
            for (r, &b) in model.params_mut()[dst].data_mut().iter_mut().zip(new) {
                *r = (mom * *r as f64 + (1.0 - mom) * b) as f32;
            }
        }
    }
    Ok((loss_v, preds))
}

/// [`train_with`] without a progress callback.
pub fn train(
    model: TrainedModel,
    train_chunks: &[LabeledChunk],
    val_chunks: &[LabeledChunk],
    hp: &Hyperparams,
) -> Result<TrainedModel> {
    train_with(model, train_chunks, val_chunks, hp, |_| {})
}

/// Adam on the mean cross-entropy with early stopping on validation
/// weighted F1. Returns the parameters of the best validation epoch and
/// the full history.
pub fn train_with(
    mut model: TrainedModel,
    train_chunks: &[LabeledChunk],
    val_chunks: &[LabeledChunk],
    hp: &Hyperparams,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    hp.validate()?;
    check_chunks(&model, train_chunks, "training")?;
    check_chunks(&model, val_chunks, "validation")?;
    let mut present = vec![false; model.num_classes()];
    train_chunks.iter().for_each(|c| present[c.label] = true);
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(Error::InvalidInput(format!(
            "class {} has no training chunks",
            model.vocabulary[missing]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..train_chunks.len()).collect();
    let mut best: Option<(f64, Vec<Tensor<f32>>)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    for epoch in 1..=hp.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut preds, mut labels) = (0.0, Vec::new(), Vec::new());
        for batch in batches(&order, hp.batch_size) {
            let items: Vec<&LabeledChunk> = batch.iter().map(|&i| &train_chunks[i]).collect();
            let (loss, p) = train_step(&mut model, &mut adam, &items, hp.learning_rate)?;
            loss_sum += loss * items.len() as f64;
            preds.extend(p);
            labels.extend(items.iter().map(|c| c.label));
        }
        let (val_loss, val_f1) = evaluate(&model, val_chunks)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train_chunks.len() as f64,
            train_f1: weighted_f1(&preds, &labels, model.num_classes()),
            val_loss,
            val_f1,
        };
        on_epoch(&rec);
        history.push(rec);
        if best.as_ref().is_none_or(|(f1, _)| val_f1 > *f1) {
            best = Some((val_f1, model.params().to_vec()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hp.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params_mut().clone_from_slice(&params);
    }
    model.history.extend(history);
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFold {
    pub fold: usize,
    pub train_chunks: usize,
    pub test_chunks: usize,
    pub weighted_f1: f64,
    pub song_weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<CvFold>,
    pub mean_f1: f64,
    pub min_f1: f64,
    pub max_f1: f64,
    /// Classes with fewer songs than folds; some folds lack them.
    pub relaxed_classes: Vec<String>,
}

/// Song-level k-fold cross-validation. Fold `k` is tested; fold `k + 1`
/// (cyclically) drives early stopping when there are at least three
/// folds, otherwise the training chunks do.
pub fn cross_validate(
    manifest: &DatasetManifest,
    chunks: &[LabeledChunk],
    folds: usize,
    config: &ModelConfig,
    hp: &Hyperparams,
) -> Result<CvReport> {
    if folds < 2 {
        return Err(Error::InvalidInput(format!(
            "{folds} folds (need at least 2)"
        )));
    }
    let assignment = kfold_songs(manifest, folds, hp.seed)?;
    let vocabulary = manifest.vocabulary();
    let mut results = Vec::with_capacity(folds);
    for k in 0..folds {
        let val_fold = (k + 1) % folds;
        let fold_of = |c: &LabeledChunk| assignment.fold_of.get(&c.song_id).copied();
        let test: Vec<LabeledChunk> = chunks
            .iter()
            .filter(|c| fold_of(c) == Some(k))
            .cloned()
            .collect();
        let (train_set, val_set): (Vec<LabeledChunk>, Vec<LabeledChunk>) = if folds >= 3 {
            (
                chunks
                    .iter()
                    .filter(|c| fold_of(c).is_some_and(|f| f != k && f != val_fold))
                    .cloned()
                    .collect(),
                chunks
                    .iter()
                    .filter(|c| fold_of(c) == Some(val_fold))
                    .cloned()
                    .collect(),
            )
        } else {
            let tr: Vec<LabeledChunk> = chunks
                .iter()
                .filter(|c| fold_of(c).is_some_and(|f| f != k))
                .cloned()
                .collect();
            (tr.clone(), tr)
        };
        if test.is_empty() {
            return Err(Error::InvalidInput(format!("fold {k} has no chunks")));
        }
        let fold_hp = Hyperparams {
            seed: hp.seed.wrapping_add(k as u64),
            ..hp.clone()
        };
        let model = build_model(config, vocabulary.clone(), fold_hp.seed)?;
        let model = train(model, &train_set, &val_set, &fold_hp)?;
        let refs: Vec<&Chromagram> = test.iter().map(|c| &c.chroma).collect();
        let probs = model.predict_batch(&refs)?;
        let labels: Vec<usize> = test.iter().map(|c| c.label).collect();
        let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let mut by_song: BTreeMap<&str, (usize, Vec<Vec<f32>>)> = BTreeMap::new();
        for (c, p) in test.iter().zip(probs) {
            by_song
                .entry(&c.song_id)
                .or_insert((c.label, Vec::new()))
                .1
                .push(p);
        }
        let (song_labels, song_preds): (Vec<usize>, Vec<usize>) = by_song
            .values()
            .map(|(l, ps)| (*l, vote(ps).expect("non-empty")))
            .unzip();
        results.push(CvFold {
            fold: k,
            train_chunks: train_set.len(),
            test_chunks: test.len(),
            weighted_f1: weighted_f1(&preds, &labels, config.num_classes),
            song_weighted_f1: weighted_f1(&song_preds, &song_labels, config.num_classes),
        });
    }
    let f1s: Vec<f64> = results.iter().map(|r| r.weighted_f1).collect();
    Ok(CvReport {
        mean_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
        min_f1: f1s.iter().copied().fold(f64::INFINITY, f64::min),
        max_f1: f1s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        folds: results,
        relaxed_classes: assignment.relaxed_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn trailing_singleton_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1].len(), 5);
        assert_eq!(batches(&order[..1], 4), vec![vec![0]]);
    }

    fn toy_chunks(n: usize, frames: usize, seed: u64) -> Vec<LabeledChunk> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let hot = if label == 0 { 2 } else { 7 };
                let energy = (0..frames * 12)
                    .map(|j| {
                        if j % 12 == hot {
                            1.0
                        } else {
                            rng.gen_range(0.0..0.3)
                        }
                    })
                    .collect();
                let mut chroma = Chromagram::from_energy(energy, frames, 31.25).unwrap();
                chroma.tonic_normalized = true;
                LabeledChunk {
                    clip_id: format!("c{i}"),
                    song_id: format!("s{i}"),
                    label,
                    chroma,
                }
            })
            .collect()
    }

    fn toy_config() -> ModelConfig {
        let mut c = ModelConfig::new(Variant::Cn2LstmT, 2);
        c.input_frames = 16;
        c.stages[0].channels = 4;
        c.stages[1].channels = 8;
        c.lstm_hidden = 8;
        c
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let cfg = toy_config();
        let data = toy_chunks(6, 16, 1);
        let m0 = build_model(&cfg, vec!["a".into(), "b".into()], 4).unwrap();
        let hp = Hyperparams {
            learning_rate: 0.0,
            batch_size: 3,
            max_epochs: 3,
            patience: 5,
            seed: 1,
        };
        let m1 = train(m0.clone(), &data, &data, &hp).unwrap();
        for ((a, b), s) in m0.params().iter().zip(m1.params()).zip(m0.param_specs()) {
            if s.trainable {
                assert_eq!(a, b, "{}", s.name);
            }
        }
        assert_eq!(m1.history.len(), 3);
    }

    #[test]
    fn rejects_missing_class_and_empty_split() {
        let cfg = toy_config();
        let m = build_model(&cfg, vec!["a".into(), "b".into()], 0).unwrap();
        let data = toy_chunks(4, 16, 2);
        let only_a: Vec<LabeledChunk> = data.iter().filter(|c| c.label == 0).cloned().collect();
        let hp = Hyperparams::default();
        assert!(train(m.clone(), &only_a, &data, &hp).is_err());
        assert!(train(m.clone(), &data, &[], &hp).is_err());
        let mut raw = data.clone();
        raw[0].chroma.tonic_normalized = false;
        assert!(train(m, &raw, &data, &hp).is_err());
    }
}
