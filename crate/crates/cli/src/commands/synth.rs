use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::json;

use ragaxai::dataio::{
    default_presets, plan_synthetic_corpus, save_annotations, write_feature_cache, write_wav,
    DatasetManifest, SyntheticSongPlan,
};
use ragaxai::dsp::FeatureExtractor;

use crate::{chunk_file, par_map, write_json, Outcome, RunConfig};

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub songs_per_class: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    /// Write WAV files and reference them from the manifest.
    pub audio: bool,
    /// Also write feature caches for every chunk here.
    pub cache_dir: Option<PathBuf>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            songs_per_class: 20,
            min_duration: 60.0,
            max_duration: 100.0,
            audio: true,
            cache_dir: None,
        }
    }
}

/// Render the synthetic corpus: manifest, per-chunk pakad annotations and
/// optionally audio and feature caches.
pub fn cmd_synth(cfg: &RunConfig, opts: &SynthOptions) -> Result<Outcome> {
    let (mut manifest, plans) = plan_synthetic_corpus(
        &default_presets(),
        opts.songs_per_class,
        [opts.min_duration, opts.max_duration],
        cfg.seed,
    )?;
    let out = &cfg.out_dir;
    if opts.audio {
        std::fs::create_dir_all(out.join("audio"))?;
    }
    if let Some(dir) = &opts.cache_dir {
        std::fs::create_dir_all(dir)?;
    }
    let fx = FeatureExtractor::default();
    let render = |plan: &SyntheticSongPlan| -> Result<Vec<ragaxai::dataio::ExpertAnnotation>> {
        let song = plan.render()?;
        if opts.audio {
            let path = out.join("audio").join(format!("{}.wav", plan.song_id));
            write_wav(&path, &song.clip).with_context(|| format!("writing {}", path.display()))?;
        }
        let mut anns = Vec::new();
        for (i, (clip, ann)) in song.chunks()?.into_iter().enumerate() {
            if let Some(dir) = &opts.cache_dir {
                write_feature_cache(&fx.chroma(&clip)?, &chunk_file(dir, &plan.song_id, i))?;
            }
            anns.push(ann);
        }
        Ok(anns)
    };
    let results = par_map(&plans, cfg.jobs(), render)?;
    let mut outcome = Outcome::default();
    let mut annotations = Vec::new();
    for (plan, r) in plans.iter().zip(results) {
        match r {
            Ok(a) => annotations.extend(a),
            Err(e) => outcome.failures.push(format!("{}: {e:#}", plan.song_id)),
        }
    }
    if opts.audio {
        for song in &mut manifest.songs {
            song.audio_path = Some(PathBuf::from("audio").join(format!("{}.wav", song.song_id)));
        }
    }
    save_manifest(&manifest, out)?;
    save_annotations(&out.join("annotations.json"), &annotations)?;
    write_json(
        out,
        "synth_summary.json",
        cfg,
        json!({
            "songs": plans.len(),
            "chunks": annotations.len(),
            "classes": manifest.vocabulary(),
            "failures": outcome.failures,
        }),
    )?;
    Ok(outcome)
}

fn save_manifest(manifest: &DatasetManifest, out: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    manifest.save(&out.join("manifest.json"))?;
    Ok(())
}
