use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use ragaxai::dsp::{Chromagram, N_CHROMA};
use ragaxai::model::{argmax, load_checkpoint, TrainedModel};
use ragaxai::xai_gradcam::{conv_attribution, gradcampp_map, time_saliency, TimeSaliency};
use ragaxai::xai_slime::{explain, slime_time_saliency, SlimeConfig, SlimeExplanation};

use super::predict::{load_clip, optional_manifest};
use crate::{par_map, write_output, write_with_header, Outcome, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExplainMethod {
    Gradcampp,
    Slime,
}

impl ExplainMethod {
    pub fn tag(self) -> &'static str {
        match self {
            ExplainMethod::Gradcampp => "gradcampp",
            ExplainMethod::Slime => "slime",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExplainOptions {
    pub features: Vec<PathBuf>,
    pub method: ExplainMethod,
    pub tonic: Option<u8>,
    /// Explain this class instead of the predicted one.
    pub target: Option<String>,
    /// Also write a grayscale overlay image per clip.
    pub overlay: bool,
}

/// Explanation of one clip with the model's prediction for it.
pub(crate) struct Explained {
    pub class: usize,
    pub probability: f32,
    pub target: usize,
    pub saliency: TimeSaliency,
    pub slime: Option<SlimeExplanation>,
}

pub(crate) fn explain_clip(
    model: &TrainedModel,
    chroma: &Chromagram,
    method: ExplainMethod,
    slime: &SlimeConfig,
    target: Option<usize>,
) -> Result<Explained> {
    let probs = model.predict_chunk(chroma)?;
    let class = argmax(&probs);
    let target = target.unwrap_or(class);
    let (saliency, slime) = match method {
        ExplainMethod::Gradcampp => {
            let attr = conv_attribution(model, chroma, target)?;
            (time_saliency(&gradcampp_map(&attr)), None)
        }
        ExplainMethod::Slime => {
            let expl = explain(model, chroma, Some(target), slime)?;
            (slime_time_saliency(&expl, chroma.frame_rate), Some(expl))
        }
    };
    Ok(Explained {
        class,
        probability: probs[class],
        target,
        saliency,
        slime,
    })
}

/// Binary PGM with pitch classes as rows (highest on top) and frames as
/// columns: log chroma scaled by the frame saliency.
pub fn overlay_pgm(chroma: &Chromagram, frame_saliency: &[f64]) -> Vec<u8> {
    let log: Vec<f64> = chroma.energy.iter().map(|&e| (e.max(0.0) as f64).ln_1p()).collect();
    let lmax = log.iter().cloned().fold(0.0, f64::max);
    let smin = frame_saliency.iter().cloned().fold(f64::INFINITY, f64::min);
    let smax = frame_saliency.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let srange = smax - smin;
    let mut out = format!("P5\n{} {}\n255\n", chroma.frames, N_CHROMA).into_bytes();
    for c in (0..N_CHROMA).rev() {
        for f in 0..chroma.frames {
            let v = if lmax > 0.0 { log[f * N_CHROMA + c] / lmax } else { 0.0 };
            let s = match frame_saliency.get(f) {
                Some(&s) if srange > 0.0 => (s - smin) / srange,
                _ => 1.0,
            };
            out.push((v * s * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Per-frame and per-second saliency CSVs, a prediction JSON and an
/// optional overlay for each clip, under `<out_dir>/<clip_id>/`.
pub fn cmd_explain(cfg: &RunConfig, opts: &ExplainOptions) -> Result<Outcome> {
    let model = load_checkpoint(cfg.require(&cfg.checkpoint, "--checkpoint")?)?;
    let manifest = optional_manifest(cfg)?;
    let target = opts
        .target
        .as_deref()
        .map(|t| model.class_index(t))
        .transpose()?;
    let run = |path: &PathBuf| -> Result<()> {
        let (clip_id, chroma) = load_clip(path, &model, opts.tonic, manifest.as_ref())?;
        let ex = explain_clip(&model, &chroma, opts.method, &cfg.slime, target)?;
        let dir = cfg.out_dir.join(&clip_id);
        let m = opts.method.tag();
        write_with_header(&dir, &format!("saliency_frames_{m}.csv"), cfg, &ex.saliency.frames_csv())?;
        write_with_header(&dir, &format!("saliency_seconds_{m}.csv"), cfg, &ex.saliency.seconds_csv())?;
        crate::write_json(
            &dir,
            "prediction.json",
            cfg,
            json!({
                "clip_id": clip_id,
                "class": model.vocabulary[ex.class],
                "probability": ex.probability,
                "explained_class": model.vocabulary[ex.target],
                "method": m,
            }),
        )?;
        if let Some(expl) = &ex.slime {
            write_with_header(&dir, "slime_coefficients.csv", cfg, &expl.coefficients_csv())?;
            write_output(&dir, "slime_diagnostics.json", &(expl.diagnostics_json()? + "\n"))?;
        }
        if opts.overlay {
            let path = dir.join(format!("overlay_{m}.pgm"));
            std::fs::write(&path, overlay_pgm(&chroma, &ex.saliency.frames))
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    };
    let results = par_map(&opts.features, cfg.jobs(), run)?;
    let mut outcome = Outcome::default();
    for (path, r) in opts.features.iter().zip(results) {
        if let Err(e) = r {
            outcome.failures.push(format!("{}: {e:#}", path.display()));
        }
    }
    Ok(outcome)
}
