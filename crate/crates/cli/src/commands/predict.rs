use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use ragaxai::dataio::{read_feature_cache, DatasetManifest};
use ragaxai::dsp::Chromagram;
use ragaxai::model::{argmax, load_checkpoint, vote, TrainedModel};

use crate::{model_input, song_of_clip, write_json, Outcome, RunConfig};

#[derive(Debug, Clone, Default)]
pub struct PredictOptions {
    pub features: Vec<PathBuf>,
    /// Tonic pitch class for every input; otherwise looked up in the manifest.
    pub tonic: Option<u8>,
}

/// Clip id (file stem) and model-ready chroma of a cached feature file.
pub(crate) fn load_clip(
    path: &Path,
    model: &TrainedModel,
    tonic: Option<u8>,
    manifest: Option<&DatasetManifest>,
) -> Result<(String, Chromagram)> {
    let clip_id = path
        .file_stem()
        .context("feature path has no file name")?
        .to_string_lossy()
        .into_owned();
    let raw = read_feature_cache(path).with_context(|| format!("reading {}", path.display()))?;
    let tonic = tonic.or_else(|| {
        let song = song_of_clip(&clip_id);
        manifest?
            .songs
            .iter()
            .find(|s| s.song_id == song)
            .map(|s| s.tonic_pitch_class)
    });
    Ok((clip_id, model_input(raw, tonic, model.config.tonic_normalize)?))
}

pub(crate) fn optional_manifest(cfg: &RunConfig) -> Result<Option<DatasetManifest>> {
    cfg.manifest
        .as_deref()
        .map(|p| DatasetManifest::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()
}

/// Chunk predictions for cached feature files, plus a majority vote per
/// song when several chunks of one song are given.
pub fn cmd_predict(cfg: &RunConfig, opts: &PredictOptions) -> Result<Outcome> {
    let model = load_checkpoint(cfg.require(&cfg.checkpoint, "--checkpoint")?)?;
    let manifest = optional_manifest(cfg)?;
    let mut outcome = Outcome::default();
    let mut clips = Vec::new();
    for path in &opts.features {
        match load_clip(path, &model, opts.tonic, manifest.as_ref()) {
            Ok(c) => clips.push(c),
            Err(e) => outcome.failures.push(format!("{}: {e:#}", path.display())),
        }
    }
    let refs: Vec<&Chromagram> = clips.iter().map(|(_, c)| c).collect();
    let probs = model.predict_batch(&refs)?;
    let mut rows = Vec::new();
    let mut by_song: BTreeMap<&str, Vec<Vec<f32>>> = BTreeMap::new();
    for ((clip_id, _), p) in clips.iter().zip(&probs) {
        let k = argmax(p);
        rows.push(json!({
            "clip_id": clip_id,
            "class": model.vocabulary[k],
            "probability": p[k],
            "probabilities": p,
        }));
        by_song.entry(song_of_clip(clip_id)).or_default().push(p.clone());
    }
    let songs: Vec<_> = by_song
        .iter()
        .map(|(song, ps)| {
            let k = vote(ps).expect("non-empty");
            json!({"song_id": song, "class": model.vocabulary[k], "chunks": ps.len()})
        })
        .collect();
    write_json(
        &cfg.out_dir,
        "predictions.json",
        cfg,
        json!({"predictions": rows, "songs": songs, "failures": outcome.failures}),
    )?;
    Ok(outcome)
}
