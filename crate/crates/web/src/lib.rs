//! WebAssembly bindings for the browser demo in `www/`.
//!
//! A [`Session`] holds one synthetic 30 s clip and, optionally, a model
//! loaded from checkpoint bytes.

use ragaxai::dataio::{default_presets, generate_synthetic_clip, ExpertAnnotation, SyntheticRagaSpec};
use ragaxai::dsp::{tonic_normalize, Chromagram, FeatureExtractor, CLIP_SECONDS, REFERENCE_CLASS};
use ragaxai::evalsal::annotated_seconds;
use ragaxai::model::{argmax, decode_checkpoint, TrainedModel};
use ragaxai::xai_gradcam::{conv_attribution, gradcampp_map, time_saliency};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Names of the synthetic raga presets, as a JSON array.
#[wasm_bindgen]
pub fn raga_names() -> String {
    let names: Vec<String> = default_presets().into_iter().map(|s| s.raga_id).collect();
    serde_json::to_string(&names).expect("strings serialize")
}

struct Clip {
    raw: Chromagram,
    normalized: Chromagram,
    tonic: u8,
    annotation: ExpertAnnotation,
}

#[wasm_bindgen]
#[derive(Default)]
pub struct Session {
    clip: Option<Clip>,
    model: Option<TrainedModel>,
}

impl Session {
    fn render(&mut self, spec: &SyntheticRagaSpec, tonic: u8, seed: u64) -> ragaxai::Result<()> {
        let (audio, annotation) = generate_synthetic_clip(spec, tonic, CLIP_SECONDS, seed)?;
        let raw = FeatureExtractor::default().chroma(&audio)?;
        let normalized = tonic_normalize(&raw, tonic, REFERENCE_CLASS)?;
        self.clip = Some(Clip {
            raw,
            normalized,
            tonic,
            annotation,
        });
        Ok(())
    }

    fn clip(&self) -> Result<&Clip, String> {
        self.clip.as_ref().ok_or_else(|| "no clip yet".to_string())
    }

    fn classify_json(&self) -> Result<String, String> {
        let model = self.model.as_ref().ok_or("no model loaded")?;
        let clip = self.clip()?;
        let input = if model.config.tonic_normalize { &clip.normalized } else { &clip.raw };
        let probs = model.predict_chunk(input).map_err(|e| e.to_string())?;
        let class = argmax(&probs);
        let attr = conv_attribution(model, input, class).map_err(|e| e.to_string())?;
        let saliency = time_saliency(&gradcampp_map(&attr));
        Ok(json!({
            "class": model.vocabulary[class],
            "probability": probs[class],
            "probabilities": model.vocabulary.iter().zip(&probs).collect::<Vec<_>>(),
            "seconds": saliency.seconds,
        })
        .to_string())
    }
}

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Session {
        Session::default()
    }

    /// Render a 30 s clip of preset `raga` at `tonic` and extract its chroma.
    pub fn synthesize(&mut self, raga: usize, tonic: u8, seed: u64) -> Result<(), JsError> {
        let presets = default_presets();
        let spec = presets.get(raga).ok_or_else(|| js(format!("no preset {raga}")))?;
        self.render(spec, tonic % 12, seed).map_err(js)
    }

    pub fn frames(&self) -> usize {
        self.clip.as_ref().map_or(0, |c| c.raw.frames)
    }

    pub fn tonic(&self) -> u8 {
        self.clip.as_ref().map_or(0, |c| c.tonic)
    }

    /// Frame-major `frames × 12` chroma, raw or tonic-normalized.
    pub fn chroma(&self, normalized: bool) -> Vec<f32> {
        match &self.clip {
            Some(c) if normalized => c.normalized.energy.clone(),
            Some(c) => c.raw.energy.clone(),
            None => Vec::new(),
        }
    }

    /// Seconds covered by the planted pakad phrases.
    pub fn pakad_seconds(&self) -> Vec<u32> {
        self.clip
            .as_ref()
            .map(|c| annotated_seconds(&c.annotation).into_iter().map(|s| s as u32).collect())
            .unwrap_or_default()
    }

    /// Load a checkpoint; returns its vocabulary as JSON.
    pub fn load_model(&mut self, bytes: &[u8]) -> Result<String, JsError> {
        let model = decode_checkpoint(bytes).map_err(js)?;
        let vocab = serde_json::to_string(&model.vocabulary).map_err(js)?;
        self.model = Some(model);
        Ok(vocab)
    }

    /// Prediction and GradCAM++ per-second saliency for the current clip,
    /// as JSON.
    pub fn classify(&self) -> Result<String, JsError> {
        self.classify_json().map_err(js)
    }
}
