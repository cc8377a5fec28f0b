//! CNN-LSTM raga classifier: architecture, training and inference.

mod checkpoint;
mod config;
mod gradcheck;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ConvStage, Hyperparams, ModelConfig, Readout, Variant};
pub use gradcheck::check_loss_gradient;
pub use train::{cross_validate, train, train_with, CvFold, CvReport, EpochRecord, LabeledChunk};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::{Chromagram, N_CHROMA};
use crate::error::{Error, Result};
use crate::ndiff::{softmax, without_subnormals, BatchStats, Graph, Scalar, Tensor, Var, BN_EPS};

/// Inference batch size.
const PREDICT_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    He(usize),
    Glorot(usize, usize),
    Zeros,
    Ones,
    /// LSTM bias: ones on the forget gate, zeros elsewhere.
    LstmBias(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    init: Init,
}

#[derive(Debug, Clone, Copy)]
struct StageIdx {
    kernel: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    specs: Vec<ParamSpec>,
    stages: Vec<StageIdx>,
    lstm: Option<[usize; 3]>,
    dense: [usize; 2],
}

impl Layout {
    fn new(config: &ModelConfig) -> Self {
        let mut specs = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, trainable: bool, init: Init| {
            specs.push(ParamSpec {
                name,
                shape,
                trainable,
                init,
            });
            specs.len() - 1
        };
        let mut stages = Vec::new();
        let mut cin = 1;
        for (i, s) in config.stages.iter().enumerate() {
            let c = s.channels;
            stages.push(StageIdx {
                kernel: add(
                    format!("conv{i}.kernel"),
                    vec![3, 3, cin, c],
                    true,
                    Init::He(9 * cin),
                ),
                bias: add(format!("conv{i}.bias"), vec![c], true, Init::Zeros),
                gamma: add(format!("bn{i}.gamma"), vec![c], true, Init::Ones),
                beta: add(format!("bn{i}.beta"), vec![c], true, Init::Zeros),
                mean: add(format!("bn{i}.running_mean"), vec![c], false, Init::Zeros),
                var: add(format!("bn{i}.running_var"), vec![c], false, Init::Ones),
            });
            cin = c;
        }
        let [t, f, c] = config.feature_shape();
        let (lstm, dense_in) = if config.lstm_hidden > 0 {
            let (d, h) = (f * c, config.lstm_hidden);
            let idx = [
                add(
                    "lstm.w_ih".into(),
                    vec![d, 4 * h],
                    true,
                    Init::Glorot(d, 4 * h),
                ),
                add(
                    "lstm.w_hh".into(),
                    vec![h, 4 * h],
                    true,
                    Init::Glorot(h, 4 * h),
                ),
                add("lstm.bias".into(), vec![4 * h], true, Init::LstmBias(h)),
            ];
            (Some(idx), h)
        } else {
            (None, t * f * c)
        };
        let n = config.num_classes;
        let dense = [
            add(
                "dense.w".into(),
                vec![dense_in, n],
                true,
                Init::Glorot(dense_in, n),
            ),
            add("dense.b".into(), vec![n], true, Init::Zeros),
        ];
        Self {
            specs,
            stages,
            lstm,
            dense,
        }
    }
}

fn init_tensor(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n: usize = spec.shape.iter().product();
    let data: Vec<f32> = match spec.init {
        Init::He(fan_in) => {
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            (0..n).map(|_| dist.sample(rng) as f32).collect()
        }
        Init::Glorot(fan_in, fan_out) => {
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-lim..lim) as f32).collect()
        }
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::LstmBias(h) => (0..n)
            .map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 })
            .collect(),
    };
    Tensor::new(&spec.shape, data).expect("spec shape")
}

/// A classifier with its parameters, class vocabulary and training history.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub vocabulary: Vec<String>,
    pub history: Vec<EpochRecord>,
    params: Vec<Tensor<f32>>,
    layout: Layout,
}

/// Freshly initialized model. Same config, vocabulary and seed give
/// identical parameters.
pub fn build_model(
    config: &ModelConfig,
    vocabulary: Vec<String>,
    seed: u64,
) -> Result<TrainedModel> {
    config.validate()?;
    if vocabulary.len() != config.num_classes {
        return Err(Error::shape(
            format!("{} class labels", config.num_classes),
            vocabulary.len(),
        ));
    }
    let layout = Layout::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = layout
        .specs
        .iter()
        .map(|s| init_tensor(s, &mut rng))
        .collect();
    Ok(TrainedModel {
        config: config.clone(),
        vocabulary,
        history: Vec::new(),
        params,
        layout,
    })
}

pub(crate) struct Forward {
    pub logits: Var,
    pub stats: Vec<BatchStats>,
}

impl TrainedModel {
    pub(crate) fn from_parts(
        config: ModelConfig,
        vocabulary: Vec<String>,
        history: Vec<EpochRecord>,
        params: Vec<Tensor<f32>>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.specs.len()
            || params
                .iter()
                .zip(&layout.specs)
                .any(|(p, s)| p.shape() != s.shape.as_slice())
        {
            return Err(Error::shape(
                "parameters matching the config",
                "mismatched parameters",
            ));
        }
        if vocabulary.len() != config.num_classes {
            return Err(Error::shape(config.num_classes, vocabulary.len()));
        }
        Ok(Self {
            config,
            vocabulary,
            history,
            params,
            layout,
        })
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn params(&self) -> &[Tensor<f32>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.vocabulary
            .iter()
            .position(|v| v == label)
            .ok_or_else(|| Error::UnknownClass(label.to_string()))
    }

    /// Index of the final dense weight matrix `[in, N]`.
    pub fn dense_weight_index(&self) -> usize {
        self.layout.dense[0]
    }

    /// Every parameter as a graph leaf: trainable ones as differentiable
    /// parameters when `trainable`, everything else as constants.
    pub(crate) fn bind<T: Scalar>(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .zip(&self.layout.specs)
            .map(|(p, s)| {
                let t = p.cast::<T>();
                if trainable && s.trainable {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect()
    }

    pub(crate) fn input_tensor<T: Scalar>(&self, chromas: &[&Chromagram]) -> Result<Tensor<T>> {
        let frames = self.config.input_frames;
        let mut data = Vec::with_capacity(chromas.len() * frames * N_CHROMA);
        for c in chromas {
            if c.frames != frames || c.energy.len() != frames * N_CHROMA {
                return Err(Error::shape(
                    format!("{frames}×{N_CHROMA} chromagram"),
                    format!("{}×{}", c.frames, c.energy.len() / c.frames.max(1)),
                ));
            }
            data.extend(c.energy.iter().map(|&v| T::from_f64(v as f64)));
        }
        Tensor::new(&[chromas.len(), frames, N_CHROMA, 1], data)
    }

    fn running(&self, idx: usize) -> Vec<f64> {
        self.params[idx].data().iter().map(|&v| v as f64).collect()
    }

    /// Conv stages up to the last ReLU (before the last stage's pooling):
    /// the feature maps that saliency is computed on. In training mode the
    /// batch statistics of every stage are returned.
    pub(crate) fn features<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: Var,
        train: bool,
    ) -> Result<(Var, Vec<BatchStats>)> {
        let mut h = x;
        let mut stats = Vec::new();
        let n = self.config.stages.len();
        for (i, (stage, idx)) in self
            .config
            .stages
            .iter()
            .zip(&self.layout.stages)
            .enumerate()
        {
            let y = g.conv2d(h, vars[idx.kernel], vars[idx.bias])?;
            let y = if train {
                let (y, s) = g.batchnorm_train(y, vars[idx.gamma], vars[idx.beta], BN_EPS)?;
                stats.push(s);
                y
            } else {
                let (m, v) = (self.running(idx.mean), self.running(idx.var));
                g.batchnorm_infer(y, vars[idx.gamma], vars[idx.beta], &m, &v, BN_EPS)?
            };
            h = g.relu(y);
            if i + 1 < n && stage.pool != [1, 1] {
                h = g.maxpool2d(h, stage.pool[0], stage.pool[1])?;
            }
        }
        Ok((h, stats))
    }

    /// From last-stage activations to class logits.
    pub(crate) fn head<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], a: Var) -> Result<Var> {
        let last = self.config.stages.last().expect("validated");
        let mut h = a;
        if last.pool != [1, 1] {
            h = g.maxpool2d(h, last.pool[0], last.pool[1])?;
        }
        let b = g.value(h).shape()[0];
        let [t, f, c] = self.config.feature_shape();
        let z = match self.layout.lstm {
            Some([wih, whh, bias]) => {
                let seq = g.reshape(h, &[b, t, f * c])?;
                let hs = g.lstm(seq, vars[wih], vars[whh], vars[bias])?;
                match self.config.readout {
                    Readout::Last => g.last_step(hs)?,
                    Readout::Mean => g.mean_time(hs)?,
                }
            }
            None => g.reshape(h, &[b, t * f * c])?,
        };
        let [w, bias] = self.layout.dense;
        g.dense(z, vars[w], vars[bias])
    }

    pub(crate) fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: Var,
        train: bool,
    ) -> Result<Forward> {
        let (a, stats) = self.features(g, vars, x, train)?;
        let logits = self.head(g, vars, a)?;
        Ok(Forward { logits, stats })
    }

    /// Pre-softmax class scores, one row per input.
    pub fn predict_logits(&self, chromas: &[&Chromagram]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(chromas.len());
        without_subnormals(|| {
            for batch in chromas.chunks(PREDICT_BATCH) {
                let mut g = Graph::<f32>::new();
                let vars = self.bind(&mut g, false);
                let x = g.constant(self.input_tensor(batch)?);
                let fw = self.forward(&mut g, &vars, x, false)?;
                let v = g.value(fw.logits);
                if !v.is_finite() {
                    return Err(Error::NonFinite("logits".into()));
                }
                out.extend(
                    v.data()
                        .chunks_exact(self.num_classes())
                        .map(|r| r.to_vec()),
                );
            }
            Ok(out)
        })
    }

    /// Softmax probabilities, one row per input.
    pub fn predict_batch(&self, chromas: &[&Chromagram]) -> Result<Vec<Vec<f32>>> {
        Ok(self
            .predict_logits(chromas)?
            .iter()
            .map(|l| softmax(l))
            .collect())
    }

    /// Class probabilities for one chunk, in inference mode.
    pub fn predict_chunk(&self, chroma: &Chromagram) -> Result<Vec<f32>> {
        Ok(self.predict_batch(&[chroma])?.remove(0))
    }

    /// Song label by majority vote over chunk predictions.
    pub fn predict_song(&self, chunks: &[Chromagram]) -> Result<usize> {
        if chunks.is_empty() {
            return Err(Error::InvalidInput("song has no chunks".into()));
        }
        let refs: Vec<&Chromagram> = chunks.iter().collect();
        Ok(vote(&self.predict_batch(&refs)?).expect("non-empty"))
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(p: &[f32]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Majority vote over per-chunk argmaxes. Ties go to the tied class with
/// the largest summed probability, then to the lower index.
pub fn vote(probs: &[Vec<f32>]) -> Option<usize> {
    let n = probs.first()?.len();
    let mut votes = vec![0usize; n];
    let mut mass = vec![0f64; n];
    for p in probs {
        votes[argmax(p)] += 1;
        for (m, &v) in mass.iter_mut().zip(p) {
            *m += v as f64;
        }
    }
    let top = *votes.iter().max()?;
    (0..n)
        .filter(|&c| votes[c] == top)
        .fold(None, |best: Option<usize>, c| match best {
            Some(b) if mass[b] >= mass[c] => Some(b),
            _ => Some(c),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant, n: usize) -> ModelConfig {
        let mut c = ModelConfig::new(variant, n);
        c.input_frames = 20;
        c
    }

    fn vocab(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn default_architecture_shapes() {
        let m = build_model(&ModelConfig::new(Variant::Cn2LstmT, 12), vocab(12), 1).unwrap();
        let names: Vec<&str> = m.param_specs().iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names[0], "conv0.kernel");
        let w_ih = m
            .param_specs()
            .iter()
            .find(|s| s.name == "lstm.w_ih")
            .unwrap();
        assert_eq!(w_ih.shape, vec![768, 256]);
        let d = &m.param_specs()[m.dense_weight_index()];
        assert_eq!(d.shape, vec![64, 12]);
        let m = build_model(&ModelConfig::new(Variant::Cn1T, 12), vocab(12), 1).unwrap();
        assert_eq!(
            m.param_specs()[m.dense_weight_index()].shape,
            vec![235 * 3 * 32, 12]
        );
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let c = small(Variant::Cn2LstmT, 3);
        let a = build_model(&c, vocab(3), 9).unwrap();
        let b = build_model(&c, vocab(3), 9).unwrap();
        let d = build_model(&c, vocab(3), 10).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), d.params());
    }

    #[test]
    fn zero_dense_gives_uniform() {
        for v in Variant::ALL {
            let mut m = build_model(&small(v, 4), vocab(4), 2).unwrap();
            let w = m.dense_weight_index();
            m.params_mut()[w] = Tensor::zeros(m.params()[w].shape());
            let x = Chromagram::from_energy((0..240).map(|i| (i % 7) as f32).collect(), 20, 31.25)
                .unwrap();
            let p = m.predict_chunk(&x).unwrap();
            assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-6), "{v}: {p:?}");
        }
    }

    #[test]
    fn prediction_is_a_distribution_and_deterministic() {
        let m = build_model(&small(Variant::Cn2LstmT, 5), vocab(5), 3).unwrap();
        let x = Chromagram::from_energy(
            (0..240).map(|i| ((i * 37) % 11) as f32).collect(),
            20,
            31.25,
        )
        .unwrap();
        let p = m.predict_chunk(&x).unwrap();
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(p, m.predict_chunk(&x).unwrap());
        let wrong = Chromagram::zeros(21, 31.25);
        assert!(m.predict_chunk(&wrong).is_err());
    }

    #[test]
    fn wrong_vocabulary_size() {
        assert!(build_model(&small(Variant::Cn1T, 3), vocab(2), 0).is_err());
    }

    #[test]
    fn voting_rules() {
        let a = vec![0.9, 0.1];
        let b = vec![0.2, 0.8];
        assert_eq!(vote(&[a.clone(), a.clone(), b.clone()]), Some(0));
        assert_eq!(vote(std::slice::from_ref(&b)), Some(1));
        assert_eq!(vote(&[]), None);
        // two votes each; summed probability A = 1.3, B = 1.1
        let tie = vec![
            vec![0.55, 0.05, 0.4],
            vec![0.55, 0.05, 0.4],
            vec![0.1, 0.5, 0.4],
            vec![0.1, 0.5, 0.4],
        ];
        assert_eq!(vote(&tie), Some(0));
        let mirrored: Vec<Vec<f32>> = tie.iter().map(|p| vec![p[1], p[0], p[2]]).collect();
        assert_eq!(vote(&mirrored), Some(1));
    }
}
