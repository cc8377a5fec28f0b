//! SoundLIME: temporal super-pixel masking and a kernel-weighted linear
//! surrogate fitted to the black-box class response.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Chromagram;
use crate::error::{Error, Result};
use crate::evalsal::SECONDS;
use crate::model::{argmax, TrainedModel};
use crate::xai_gradcam::{second_of_frame, TimeSaliency};

pub const DEFAULT_SAMPLES: usize = 150;
pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Anything that maps chromagrams to class probabilities.
pub trait Classifier {
    fn class_probabilities(&self, chromas: &[&Chromagram]) -> Result<Vec<Vec<f32>>>;
}

impl Classifier for TrainedModel {
    fn class_probabilities(&self, chromas: &[&Chromagram]) -> Result<Vec<Vec<f32>>> {
        self.predict_batch(chromas)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    pub masks: Vec<Vec<bool>>,
    pub seed: u64,
}

/// `n` masks over `d` super-pixels, each entry kept with probability 0.5.
/// Masks that would suppress everything are redrawn.
pub fn make_masks(n: usize, d: usize, seed: u64) -> Result<MaskSet> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!("{n} masks over {d} super-pixels")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = (0..n)
        .map(|_| loop {
            let m: Vec<bool> = (0..d).map(|_| rng.gen_bool(0.5)).collect();
            if m.contains(&true) {
                break m;
            }
        })
        .collect();
    Ok(MaskSet { masks, seed })
}

/// Zero the frames of every suppressed one-second super-pixel.
pub fn perturb(chroma: &Chromagram, mask: &[bool]) -> Result<Chromagram> {
    if mask.len() != SECONDS {
        return Err(Error::shape(format!("mask of {SECONDS}"), mask.len()));
    }
    let mut out = chroma.clone();
    let width = chroma.energy.len() / chroma.frames.max(1);
    for (f, row) in out.energy.chunks_exact_mut(width).enumerate() {
        if !mask[second_of_frame(f, chroma.frame_rate)] {
            row.fill(0.0);
        }
    }
    Ok(out)
}

fn distance(x: &Chromagram, z: &Chromagram) -> Result<f64> {
    if x.energy.len() != z.energy.len() {
        return Err(Error::shape(x.energy.len(), z.energy.len()));
    }
    Ok(x.energy
        .iter()
        .zip(&z.energy)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Exponential kernel on Euclidean distance: `exp(-D² / σ²)`.
pub fn kernel_weight(x: &Chromagram, z: &Chromagram, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("kernel width {sigma}")));
    }
    let d = distance(x, z)?;
    Ok((-(d * d) / (sigma * sigma)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Softmax probability of the target class.
    Probability,
    /// 1 when the perturbed input is still assigned the target class.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlimeConfig {
    pub samples: usize,
    pub ridge: f64,
    pub mode: TargetMode,
    pub seed: u64,
}

impl Default for SlimeConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            ridge: DEFAULT_RIDGE,
            mode: TargetMode::Probability,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlimeExplanation {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub target_class: usize,
    pub sigma: f64,
    /// Kernel-weighted coefficient of determination of the surrogate.
    pub r2: f64,
    pub mode: TargetMode,
    pub frames: usize,
}

#[derive(Serialize)]
struct Diagnostics {
    sigma: f64,
    r2: f64,
    target_class: usize,
    mode: TargetMode,
}

impl SlimeExplanation {
    pub fn coefficients_csv(&self) -> String {
        let mut out = String::from("super_pixel_index,coefficient\n");
        for (i, c) in self.coefficients.iter().enumerate() {
            let _ = writeln!(out, "{i},{c}");
        }
        out
    }

    pub fn diagnostics_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Diagnostics {
            sigma: self.sigma,
            r2: self.r2,
            target_class: self.target_class,
            mode: self.mode,
        })?)
    }
}

/// Explain the model's decision for `chroma`. The target is `target` when
/// given, otherwise the predicted class of the unperturbed input.
pub fn fit_explanation<C: Classifier + ?Sized>(
    model: &C,
    chroma: &Chromagram,
    target: Option<usize>,
    masks: &MaskSet,
    config: &SlimeConfig,
) -> Result<SlimeExplanation> {
    if !(config.ridge > 0.0) {
        return Err(Error::InvalidInput(format!("ridge penalty {}", config.ridge)));
    }
    if masks.masks.is_empty() {
        return Err(Error::InvalidInput("no perturbation masks".into()));
    }
    let base = model.class_probabilities(&[chroma])?.remove(0);
    let target = target.unwrap_or_else(|| argmax(&base));
    if target >= base.len() {
        return Err(Error::UnknownClass(format!("index {target} of {} classes", base.len())));
    }
    let perturbed = masks
        .masks
        .iter()
        .map(|m| perturb(chroma, m))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Chromagram> = perturbed.iter().collect();
    let probs = model.class_probabilities(&refs)?;
    let y: Vec<f64> = probs
        .iter()
        .map(|p| match config.mode {
            TargetMode::Probability => p[target] as f64,
            TargetMode::Binary => (argmax(p) == target) as u8 as f64,
        })
        .collect();
    let dists = perturbed
        .iter()
        .map(|z| distance(chroma, z))
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = dists.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    let sigma = if median > 0.0 { median } else { 1.0 };
    let weights: Vec<f64> = dists.iter().map(|d| (-(d * d) / (sigma * sigma)).exp()).collect();
    let design: Vec<Vec<f64>> = masks
        .masks
        .iter()
        .map(|m| m.iter().map(|&b| b as u8 as f64).collect())
        .collect();
    let (intercept, coefficients) = weighted_ridge(&design, &y, &weights, config.ridge);
    let r2 = weighted_r2(&design, &y, &weights, intercept, &coefficients);
    Ok(SlimeExplanation {
        coefficients,
        intercept,
        target_class: target,
        sigma,
        r2,
        mode: config.mode,
        frames: chroma.frames,
    })
}

/// [`fit_explanation`] with `config.samples` masks drawn from `config.seed`.
pub fn explain<C: Classifier + ?Sized>(
    model: &C,
    chroma: &Chromagram,
    target: Option<usize>,
    config: &SlimeConfig,
) -> Result<SlimeExplanation> {
    let masks = make_masks(config.samples, SECONDS, config.seed)?;
    fit_explanation(model, chroma, target, &masks, config)
}

/// `argmin Σ w_i (y_i − b − c·x_i)² + λ‖c‖²` with the intercept `b`
/// unpenalized, solved through the normal equations.
fn weighted_ridge(x: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let d = x[0].len();
    let n = d + 1;
    let mut a = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    let mut row = vec![0.0; n];
    for ((xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        row[0] = 1.0;
        row[1..].copy_from_slice(xi);
        for r in 0..n {
            rhs[r] += wi * row[r] * yi;
            for c in 0..n {
                a[r * n + c] += wi * row[r] * row[c];
            }
        }
    }
    for j in 1..n {
        a[j * n + j] += lambda;
    }
    // a tiny intercept ridge keeps the system definite when every weight is zero
    a[0] += 1e-12;
    let sol = cholesky_solve(&mut a, &mut rhs, n);
    (sol[0], sol[1..].to_vec())
}

fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Vec<f64> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        assert!(d > 0.0, "ridge normal equations are positive definite");
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    b.to_vec()
}

fn weighted_r2(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, c: &[f64]) -> f64 {
    let wsum: f64 = w.iter().sum();
    if wsum <= 0.0 {
        return 0.0;
    }
    let mean = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        let pred = b + xi.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        ss_res += wi * (yi - pred).powi(2);
        ss_tot += wi * (yi - mean).powi(2);
    }
    if ss_tot <= f64::EPSILON * wsum {
        return if ss_res <= f64::EPSILON * wsum { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

/// Piecewise-constant upsampling of the coefficients to frames; the
/// per-second view is the coefficient vector itself.
pub fn slime_time_saliency(expl: &SlimeExplanation, frame_rate: f64) -> TimeSaliency {
    let frames = (0..expl.frames)
        .map(|f| expl.coefficients[second_of_frame(f, frame_rate)])
        .collect();
    TimeSaliency {
        frames,
        seconds: expl.coefficients.clone(),
        frame_rate,
    }
}
