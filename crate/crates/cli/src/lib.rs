//! Batch front end for the ragaxai pipeline. Every command writes its
//! artifacts under the configured output directory and stamps them with
//! the run configuration and seed.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use ragaxai::dataio::{read_feature_cache, DatasetManifest};
use ragaxai::dsp::{tonic_normalize, Chromagram, REFERENCE_CLASS};
use ragaxai::model::LabeledChunk;

pub use commands::*;
pub use config::RunConfig;

/// Result of a command: work items that failed while others went on.
#[derive(Debug, Default)]
pub struct Outcome {
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

/// Feature-cache file of chunk `idx` of a song.
pub fn chunk_file(cache_dir: &Path, song_id: &str, idx: usize) -> PathBuf {
    cache_dir.join(format!("{song_id}_{idx}.chrm"))
}

/// Song id of a `<song_id>_<idx>` clip id.
pub fn song_of_clip(clip_id: &str) -> &str {
    match clip_id.rsplit_once('_') {
        Some((song, idx)) if idx.parse::<usize>().is_ok() => song,
        _ => clip_id,
    }
}

/// Cached chunks of one song, in order.
pub fn song_chunks(cache_dir: &Path, song_id: &str) -> Result<Vec<(String, Chromagram)>> {
    let mut out = Vec::new();
    loop {
        let path = chunk_file(cache_dir, song_id, out.len());
        if !path.exists() {
            break;
        }
        let chroma = read_feature_cache(&path).with_context(|| format!("reading {}", path.display()))?;
        out.push((format!("{song_id}_{}", out.len()), chroma));
    }
    Ok(out)
}

/// Prepare raw chroma for a model: rotate by the tonic when the model
/// expects tonic-normalized input.
pub fn model_input(raw: Chromagram, tonic: Option<u8>, normalize: bool) -> Result<Chromagram> {
    if !normalize || raw.tonic_normalized {
        return Ok(raw);
    }
    let tonic = tonic.context("the model expects tonic-normalized input; the tonic is unknown")?;
    Ok(tonic_normalize(&raw, tonic, REFERENCE_CLASS)?)
}

/// Every cached chunk of the manifest's songs, labeled against the
/// manifest vocabulary.
pub fn load_labeled_chunks(
    manifest: &DatasetManifest,
    cache_dir: &Path,
    normalize: bool,
) -> Result<Vec<LabeledChunk>> {
    let vocab = manifest.vocabulary();
    let mut chunks = Vec::new();
    for song in &manifest.songs {
        let label = vocab
            .iter()
            .position(|v| v == &song.raga_label)
            .expect("vocabulary covers the manifest");
        let cached = song_chunks(cache_dir, &song.song_id)?;
        if cached.is_empty() {
            anyhow::bail!("no cached chunks for song {} in {}", song.song_id, cache_dir.display());
        }
        for (clip_id, raw) in cached {
            chunks.push(LabeledChunk {
                clip_id,
                song_id: song.song_id.clone(),
                label,
                chroma: model_input(raw, Some(song.tonic_pitch_class), normalize)?,
            });
        }
    }
    Ok(chunks)
}

/// Write `body` under `dir`, creating the directory if needed.
pub fn write_output(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Text or CSV output preceded by the provenance header line.
pub fn write_with_header(dir: &Path, name: &str, cfg: &RunConfig, body: &str) -> Result<PathBuf> {
    write_output(dir, name, &format!("{}\n{body}", cfg.header()))
}

/// JSON output with a `run` provenance field.
pub fn write_json(dir: &Path, name: &str, cfg: &RunConfig, mut value: serde_json::Value) -> Result<PathBuf> {
    if let Some(obj) = value.as_object_mut() {
        obj.insert("run".into(), cfg.provenance());
    }
    write_output(dir, name, &(serde_json::to_string_pretty(&value)? + "\n"))
}

/// Map over `items` on a pool of `jobs` threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_ids() {
        assert_eq!(song_of_clip("yaman_003_1"), "yaman_003");
        assert_eq!(song_of_clip("solo"), "solo");
        assert_eq!(song_of_clip("a_b"), "a_b");
    }

    #[test]
    fn outcome_codes() {
        assert_eq!(Outcome::default().exit_code(), 0);
        let o = Outcome {
            failures: vec!["x".into()],
        };
        assert_eq!(o.exit_code(), 1);
    }
}
