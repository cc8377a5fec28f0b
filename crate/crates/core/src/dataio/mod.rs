//! Dataset plumbing: audio clips, manifests, chunking, song-level splits,
//! the binary feature cache and the synthetic raga generator.

mod audio;
mod cache;
mod chunk;
mod split;
mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use audio::{load_audio, resample_linear, write_wav};
pub(crate) use cache::write_atomic;
pub use cache::{read_feature_cache, write_feature_cache, CACHE_MAGIC, CACHE_VERSION};
pub use chunk::{chunk_count, chunk_song, CHUNK_SECONDS};
pub use split::{
    kfold_songs, split_dataset, FoldAssignment, Split, SplitAssignment, DEFAULT_RATIOS,
};
pub use synth::{
    default_presets, generate_synthetic_clip, generate_synthetic_song, plan_synthetic_corpus,
    SyntheticRagaSpec, SyntheticSong, SyntheticSongPlan,
};

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
    /// Seconds from the start of the source recording.
    pub offset: f64,
}

impl AudioClip {
    pub fn new(
        samples: Vec<f32>,
        sample_rate: u32,
        source_id: impl Into<String>,
        offset: f64,
    ) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
            source_id: source_id.into(),
            offset,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// One recording in a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongEntry {
    pub song_id: String,
    pub raga_label: String,
    /// Tonic as a pitch class, 0 = C.
    pub tonic_pitch_class: u8,
    #[serde(default)]
    pub artist: String,
    /// Music-only intervals in seconds; empty means the whole recording.
    #[serde(default)]
    pub music_segments: Vec<[f64; 2]>,
    /// WAV path, resolved relative to the manifest file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub songs: Vec<SongEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for song in &self.songs {
            if !seen.insert(song.song_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate song id {}",
                    song.song_id
                )));
            }
            if song.raga_label.trim().is_empty() {
                return Err(Error::InvalidInput(format!(
                    "song {} has an empty raga label",
                    song.song_id
                )));
            }
            if song.tonic_pitch_class > 11 {
                return Err(Error::InvalidInput(format!(
                    "song {} tonic {} outside 0..=11",
                    song.song_id, song.tonic_pitch_class
                )));
            }
            validate_intervals(&song.music_segments)
                .map_err(|e| Error::InvalidInput(format!("song {}: {e}", song.song_id)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Sorted, de-duplicated raga labels.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.songs.iter().map(|s| s.raga_label.clone()).collect();
        labels.sort();
        labels.dedup();
        labels
    }

    /// Song ids grouped by raga label.
    pub fn songs_by_class(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut map: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for s in &self.songs {
            map.entry(s.raga_label.as_str())
                .or_default()
                .push(s.song_id.as_str());
        }
        for v in map.values_mut() {
            v.sort_unstable();
        }
        map
    }
}

/// Ordered, non-overlapping, positive-length intervals.
pub(crate) fn validate_intervals(intervals: &[[f64; 2]]) -> std::result::Result<(), String> {
    let mut prev_end = f64::NEG_INFINITY;
    for &[s, e] in intervals {
        if !(s.is_finite() && e.is_finite()) || e <= s {
            return Err(format!("interval [{s}, {e}] is empty or non-finite"));
        }
        if s < prev_end {
            return Err(format!("interval [{s}, {e}] overlaps or is out of order"));
        }
        prev_end = e;
    }
    Ok(())
}

/// Expert-marked salient regions of one clip, in seconds within `[0, 30]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertAnnotation {
    pub clip_id: String,
    pub intervals: Vec<[f64; 2]>,
}

impl ExpertAnnotation {
    pub fn total_duration(&self) -> f64 {
        self.intervals.iter().map(|[s, e]| e - s).sum()
    }

    pub fn validate(&self, clip_seconds: f64) -> Result<()> {
        validate_intervals(&self.intervals)
            .map_err(|e| Error::InvalidInput(format!("annotation {}: {e}", self.clip_id)))?;
        if self
            .intervals
            .iter()
            .any(|&[s, e]| s < 0.0 || e > clip_seconds + 1e-9)
        {
            return Err(Error::InvalidInput(format!(
                "annotation {} extends outside [0, {clip_seconds}]",
                self.clip_id
            )));
        }
        Ok(())
    }

    /// Human-annotation bounds: between 5 and 17 seconds marked in total.
    pub fn within_expert_bounds(&self) -> bool {
        (5.0..=17.0).contains(&self.total_duration())
    }
}

pub fn load_annotations(path: &Path) -> Result<Vec<ExpertAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let anns: Vec<ExpertAnnotation> = serde_json::from_str(&text)?;
    for a in &anns {
        a.validate(crate::dsp::CLIP_SECONDS)?;
    }
    Ok(anns)
}

pub fn save_annotations(path: &Path, anns: &[ExpertAnnotation]) -> Result<()> {
    let text = serde_json::to_string_pretty(anns)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
