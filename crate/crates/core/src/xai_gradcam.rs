//! GradCAM and GradCAM++ over the last convolutional feature maps, and the
//! reduction of a class map to per-frame and per-second time saliency.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsp::Chromagram;
use crate::error::{Error, Result};
use crate::evalsal::SECONDS;
use crate::model::TrainedModel;
use crate::ndiff::{without_subnormals, Graph};

/// Guard added to the GradCAM++ weight denominator.
pub const DENOM_GUARD: f64 = 1e-8;

/// Last-stage activations `A` and the gradient of one class logit with
/// respect to them, both `[time, freq, channels]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvAttribution {
    pub activations: Vec<f64>,
    pub gradients: Vec<f64>,
    pub shape: [usize; 3],
    pub class: usize,
    /// Input frames covered by one time cell.
    pub time_stride: usize,
    /// Input frames of the explained clip.
    pub frames: usize,
    pub frame_rate: f64,
}

impl ConvAttribution {
    /// Attribution with one time cell per input frame.
    pub fn new(
        activations: Vec<f64>,
        gradients: Vec<f64>,
        shape: [usize; 3],
        class: usize,
        frame_rate: f64,
    ) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n == 0 || activations.len() != n || gradients.len() != n {
            return Err(Error::shape(
                format!("{shape:?} activations and gradients"),
                format!("{} and {}", activations.len(), gradients.len()),
            ));
        }
        if !(frame_rate > 0.0) {
            return Err(Error::InvalidInput(format!("frame rate {frame_rate}")));
        }
        Ok(Self {
            activations,
            gradients,
            shape,
            class,
            time_stride: 1,
            frames: shape[0],
            frame_rate,
        })
    }

    /// Cells per feature map.
    pub fn cells(&self) -> usize {
        self.shape[0] * self.shape[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CamMethod {
    GradCam,
    GradCamPlusPlus,
}

/// Non-negative class map over `[time, freq]` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub map: Vec<f64>,
    pub time_cells: usize,
    pub freq_cells: usize,
    pub time_stride: usize,
    pub frames: usize,
    pub frame_rate: f64,
    pub method: CamMethod,
}

/// Saliency per input frame and per one-second bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSaliency {
    pub frames: Vec<f64>,
    pub seconds: Vec<f64>,
    pub frame_rate: f64,
}

/// One-second bin of a frame: `floor(frame / frame_rate)`, with the last
/// partial second folded into bin 29.
pub fn second_of_frame(frame: usize, frame_rate: f64) -> usize {
    ((frame as f64 / frame_rate).floor() as usize).min(SECONDS - 1)
}

impl TimeSaliency {
    /// Per-second scores as the mean of the frames in each bin.
    pub fn from_frames(frames: Vec<f64>, frame_rate: f64) -> Self {
        let mut sum = vec![0.0; SECONDS];
        let mut count = vec![0usize; SECONDS];
        for (f, &v) in frames.iter().enumerate() {
            let s = second_of_frame(f, frame_rate);
            sum[s] += v;
            count[s] += 1;
        }
        let seconds = sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        Self {
            frames,
            seconds,
            frame_rate,
        }
    }

    pub fn frames_csv(&self) -> String {
        let mut out = String::from("frame_index,score\n");
        for (i, v) in self.frames.iter().enumerate() {
            let _ = writeln!(out, "{i},{v}");
        }
        out
    }

    pub fn seconds_csv(&self) -> String {
        let mut out = String::from("second_index,score\n");
        for (i, v) in self.seconds.iter().enumerate() {
            let _ = writeln!(out, "{i},{v}");
        }
        out
    }
}

/// Forward the clip in inference mode, keep the last-stage ReLU output and
/// back-propagate the pre-softmax logit of `class` to it through the rest
/// of the network.
pub fn conv_attribution(model: &TrainedModel, chroma: &Chromagram, class: usize) -> Result<ConvAttribution> {
    if class >= model.num_classes() {
        return Err(Error::UnknownClass(format!(
            "index {class} of {} classes",
            model.num_classes()
        )));
    }
    without_subnormals(|| {
        let mut g = Graph::<f64>::new();
        let vars = model.bind(&mut g, false);
        let x = g.constant(model.input_tensor(&[chroma])?);
        let (a, _) = model.features(&mut g, &vars, x, false)?;
        let value = g.value(a).clone();
        let &[_, t, f, c] = value.shape() else {
            unreachable!("features are [B, T, F, C]");
        };
        // cut the graph so the activations become a differentiable leaf
        let cut = g.param(value);
        let logits = model.head(&mut g, &vars, cut)?;
        let y = g.select(logits, class)?;
        g.backward(y)?;
        let gradients = g.grad(cut).expect("leaf reached").data().to_vec();
        let activations = g.value(cut).data().to_vec();
        if !gradients.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("class gradient".into()));
        }
        Ok(ConvAttribution {
            activations,
            gradients,
            shape: [t, f, c],
            class,
            time_stride: model.config.input_frames.div_ceil(t),
            frames: model.config.input_frames,
            frame_rate: chroma.frame_rate,
        })
    })
}

fn combine(attr: &ConvAttribution, alpha: &[f64], method: CamMethod) -> SaliencyMap {
    let [t, f, c] = attr.shape;
    let map = attr
        .activations
        .chunks_exact(c)
        .map(|a| a.iter().zip(alpha).map(|(x, w)| x * w).sum::<f64>().max(0.0))
        .collect();
    SaliencyMap {
        map,
        time_cells: t,
        freq_cells: f,
        time_stride: attr.time_stride,
        frames: attr.frames,
        frame_rate: attr.frame_rate,
        method,
    }
}

/// Plain GradCAM: `α_k = (1/Z) Σ_ij g`, map `= ReLU(Σ_k α_k A^k)`.
pub fn gradcam_map(attr: &ConvAttribution) -> SaliencyMap {
    let c = attr.shape[2];
    let mut alpha = vec![0.0; c];
    for g in attr.gradients.chunks_exact(c) {
        for (a, &v) in alpha.iter_mut().zip(g) {
            *a += v;
        }
    }
    let z = attr.cells() as f64;
    alpha.iter_mut().for_each(|a| *a /= z);
    combine(attr, &alpha, CamMethod::GradCam)
}

/// GradCAM++ with the usual power substitution for the higher derivatives:
/// `w = g² / (2g² + Σ_ab A_ab · g³)`, `α_k = Σ_ij w · ReLU(g)`.
pub fn gradcampp_map(attr: &ConvAttribution) -> SaliencyMap {
    let c = attr.shape[2];
    let mut a_sum = vec![0.0; c];
    for a in attr.activations.chunks_exact(c) {
        for (s, &v) in a_sum.iter_mut().zip(a) {
            *s += v;
        }
    }
    let mut alpha = vec![0.0; c];
    for g in attr.gradients.chunks_exact(c) {
        for k in 0..c {
            let gk = g[k];
            if gk <= 0.0 {
                continue;
            }
            let g2 = gk * gk;
            let w = g2 / (2.0 * g2 + a_sum[k] * g2 * gk + DENOM_GUARD);
            alpha[k] += w * gk;
        }
    }
    combine(attr, &alpha, CamMethod::GradCamPlusPlus)
}

/// Sum each time cell over frequency, spread it over the input frames it
/// covers, and average frames into one-second bins.
pub fn time_saliency(map: &SaliencyMap) -> TimeSaliency {
    let cells: Vec<f64> = map
        .map
        .chunks_exact(map.freq_cells)
        .map(|r| r.iter().sum())
        .collect();
    let frames = (0..map.frames)
        .map(|fr| cells[(fr / map.time_stride).min(cells.len() - 1)])
        .collect();
    TimeSaliency::from_frames(frames, map.frame_rate)
}
