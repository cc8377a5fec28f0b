use anyhow::{Context, Result};
use serde_json::json;

use ragaxai::dataio::{chunk_song, load_audio, write_feature_cache, DatasetManifest, SongEntry, CHUNK_SECONDS};
use ragaxai::dsp::{FeatureExtractor, SAMPLE_RATE};

use crate::{chunk_file, par_map, write_json, Outcome, RunConfig};

/// Chunk every manifest song and cache one raw chromagram per chunk as
/// `<song_id>_<chunk_idx>.chrm`. A malformed song is reported and skipped.
pub fn cmd_extract(cfg: &RunConfig) -> Result<Outcome> {
    let manifest_path = cfg.require(&cfg.manifest, "--manifest")?;
    let manifest = DatasetManifest::load(manifest_path)
        .with_context(|| format!("loading {}", manifest_path.display()))?;
    let base = manifest_path.parent().unwrap_or(std::path::Path::new("."));
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out)?;
    let fx = FeatureExtractor::default();
    let one = |song: &SongEntry| -> Result<Vec<String>> {
        let rel = song.audio_path.as_ref().context("no audio_path")?;
        let clip = load_audio(&base.join(rel), SAMPLE_RATE)?;
        let clip = ragaxai::dataio::AudioClip {
            source_id: song.song_id.clone(),
            ..clip
        };
        let mut files = Vec::new();
        for (i, chunk) in chunk_song(&clip, &song.music_segments, CHUNK_SECONDS)?.iter().enumerate() {
            let path = chunk_file(out, &song.song_id, i);
            write_feature_cache(&fx.chroma(chunk)?, &path)?;
            files.push(path.file_name().expect("file").to_string_lossy().into_owned());
        }
        Ok(files)
    };
    let results = par_map(&manifest.songs, cfg.jobs(), one)?;
    let mut outcome = Outcome::default();
    let mut files = Vec::new();
    let mut failures = Vec::new();
    for (song, r) in manifest.songs.iter().zip(results) {
        match r {
            Ok(f) => files.extend(f),
            Err(e) => {
                outcome.failures.push(format!("{}: {e:#}", song.song_id));
                failures.push(json!({"song_id": song.song_id, "error": format!("{e:#}")}));
            }
        }
    }
    write_json(
        out,
        "extract_summary.json",
        cfg,
        json!({
            "songs": manifest.songs.len(),
            "chunks": files.len(),
            "files": files,
            "failures": failures,
        }),
    )?;
    Ok(outcome)
}
