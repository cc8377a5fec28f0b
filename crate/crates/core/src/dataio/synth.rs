//! Seeded synthetic raga renderer.
//!
//! A clip is a tanpura-like drone (tonic + fifth) under a soft melody that
//! wanders over the raga's scale, with the raga's pakad phrase played
//! prominently once in every 30 s block. The pakad positions are returned
//! as ground-truth salient intervals.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{chunk_song, AudioClip, DatasetManifest, ExpertAnnotation, SongEntry, CHUNK_SECONDS};
use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};

const DRONE_TONIC_MIDI: f64 = 48.0;
const MELODY_BASE_MIDI: f64 = 60.0;
const DRONE_TONIC_GAIN: f64 = 0.12;
const DRONE_FIFTH_GAIN: f64 = 0.05;
const MELODY_GAIN: f64 = 0.05;
const PAKAD_GAIN: f64 = 0.15;
const HARMONICS: usize = 6;
/// White noise at -30 dBFS RMS.
const NOISE_RMS: f64 = 0.031_622_776_601_683_79;
const BLOCK_SECONDS: f64 = 30.0;
/// Gap kept between a pakad and the edges of its block.
const PAKAD_MARGIN: f64 = 0.5;

/// Raga template for the generator. Pitch classes are relative to the
/// tonic (0 = Sa).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRagaSpec {
    pub raga_id: String,
    pub scale: Vec<u8>,
    pub pakad: Vec<u8>,
    /// Notes per second, `[min, max]`.
    pub tempo: [f64; 2],
}

impl SyntheticRagaSpec {
    pub fn new(raga_id: &str, scale: &[u8], pakad: &[u8], tempo: [f64; 2]) -> Self {
        SyntheticRagaSpec {
            raga_id: raga_id.to_string(),
            scale: scale.to_vec(),
            pakad: pakad.to_vec(),
            tempo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("raga {}: {m}", self.raga_id)));
        if self.scale.is_empty() {
            return bad("empty scale".into());
        }
        if self.scale.iter().any(|&c| c > 11) || self.pakad.iter().any(|&c| c > 11) {
            return bad("pitch classes must be in 0..=11".into());
        }
        if !self.scale.contains(&0) {
            return bad("scale must contain the tonic (class 0)".into());
        }
        if !(5..=7).contains(&self.scale.len()) {
            return bad(format!(
                "scale has {} notes, expected 5-7",
                self.scale.len()
            ));
        }
        if !(4..=6).contains(&self.pakad.len()) {
            return bad(format!(
                "pakad has {} notes, expected 4-6",
                self.pakad.len()
            ));
        }
        if let Some(c) = self.pakad.iter().find(|c| !self.scale.contains(c)) {
            return bad(format!("pakad note {c} is not in the scale"));
        }
        let [lo, hi] = self.tempo;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("invalid tempo range {:?}", self.tempo));
        }
        Ok(())
    }

    fn sorted_scale(&self) -> Vec<u8> {
        let mut s = self.scale.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Twelve presets in six pairs. Partners share most of their scale, so
/// within a pair the pakad carries most of the distinguishing evidence.
pub fn default_presets() -> Vec<SyntheticRagaSpec> {
    let t = [1.5, 2.5];
    vec![
        SyntheticRagaSpec::new("syn-bilawal", &[0, 2, 4, 5, 7, 9, 11], &[11, 9, 5, 4], t),
        SyntheticRagaSpec::new("syn-bihag", &[0, 2, 4, 6, 7, 9, 11], &[4, 6, 7, 11, 9], t),
        SyntheticRagaSpec::new("syn-kafi", &[0, 2, 3, 5, 7, 9, 10], &[3, 5, 9, 10], t),
        SyntheticRagaSpec::new("syn-asavari", &[0, 2, 3, 5, 7, 8, 10], &[10, 8, 7, 3], t),
        SyntheticRagaSpec::new("syn-bhairav", &[0, 1, 4, 5, 7, 8, 11], &[1, 4, 5, 8], t),
        SyntheticRagaSpec::new("syn-purvi", &[0, 1, 4, 6, 7, 8, 11], &[11, 8, 6, 4, 1], t),
        SyntheticRagaSpec::new("syn-bhupali", &[0, 2, 4, 7, 9], &[2, 4, 9, 7], t),
        SyntheticRagaSpec::new("syn-durga", &[0, 2, 5, 7, 9], &[5, 9, 7, 5, 2], t),
        SyntheticRagaSpec::new("syn-malkauns", &[0, 3, 5, 8, 10], &[10, 8, 5, 3], t),
        SyntheticRagaSpec::new("syn-dhani", &[0, 3, 5, 7, 10], &[3, 5, 7, 10, 7], t),
        SyntheticRagaSpec::new("syn-todi", &[0, 1, 3, 6, 7, 8, 11], &[1, 3, 6, 8], t),
        SyntheticRagaSpec::new("syn-marwa", &[0, 1, 4, 6, 9, 11], &[1, 4, 6, 9, 6], t),
    ]
}

/// A rendered recording and the whole-recording pakad intervals.
#[derive(Debug, Clone)]
pub struct SyntheticSong {
    pub clip: AudioClip,
    pub raga_id: String,
    pub tonic: u8,
    pub pakad_intervals: Vec<[f64; 2]>,
}

impl SyntheticSong {
    /// Pakad intervals falling inside `[start, start + len)`, shifted to the
    /// chunk's own timeline.
    pub fn annotation_for(&self, clip_id: &str, start: f64, len: f64) -> ExpertAnnotation {
        let intervals = self
            .pakad_intervals
            .iter()
            .filter_map(|&[s, e]| {
                let (a, b) = (s.max(start), e.min(start + len));
                (b > a).then_some([a - start, b - start])
            })
            .collect();
        ExpertAnnotation {
            clip_id: clip_id.to_string(),
            intervals,
        }
    }
}

struct Renderer {
    out: Vec<f64>,
    rate: f64,
}

impl Renderer {
    /// Additive tone with harmonics decaying as 1/h and short linear
    /// attack/release ramps.
    fn tone(&mut self, midi: f64, start: f64, dur: f64, gain: f64, phase: f64) {
        let a = ((start * self.rate).round() as usize).min(self.out.len());
        let b = (((start + dur) * self.rate).round() as usize).min(self.out.len());
        if b <= a {
            return;
        }
        let n = b - a;
        let ramp = ((0.02 * self.rate) as usize).clamp(1, n / 2 + 1);
        let f0 = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
        for h in 1..=HARMONICS {
            let f = f0 * h as f64;
            if f >= self.rate / 2.0 {
                break;
            }
            let amp = gain / h as f64;
            let step = 2.0 * PI * f / self.rate;
            let (mut re, mut im) = ((phase * h as f64).cos(), (phase * h as f64).sin());
            let (wr, wi) = (step.cos(), step.sin());
            for i in 0..n {
                let env = if i < ramp {
                    i as f64 / ramp as f64
                } else if n - i < ramp {
                    (n - i) as f64 / ramp as f64
                } else {
                    1.0
                };
                self.out[a + i] += amp * env * im;
                let nr = re * wr - im * wi;
                im = re * wi + im * wr;
                re = nr;
                if i % 4096 == 4095 {
                    let norm = (re * re + im * im).sqrt();
                    re /= norm;
                    im /= norm;
                }
            }
        }
    }
}

/// Render a recording of `dur` seconds with one pakad per 30 s block.
pub fn generate_synthetic_song(
    spec: &SyntheticRagaSpec,
    tonic: u8,
    dur: f64,
    seed: u64,
    song_id: &str,
) -> Result<SyntheticSong> {
    spec.validate()?;
    if tonic > 11 {
        return Err(Error::InvalidInput(format!("tonic {tonic} outside 0..=11")));
    }
    if !(dur >= 10.0 && dur.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "synthetic clips need at least 10 s, got {dur}"
        )));
    }
    let max_pakad = spec.pakad.len() as f64 / spec.tempo[0];
    let blocks = ((dur / BLOCK_SECONDS).floor() as usize).max(1);
    let block_len = if dur < BLOCK_SECONDS {
        dur
    } else {
        BLOCK_SECONDS
    };
    if max_pakad + 2.0 * PAKAD_MARGIN > block_len {
        return Err(Error::InvalidInput(format!(
            "pakad of {:.2} s does not fit in {block_len:.2} s",
            max_pakad
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = SAMPLE_RATE as f64;
    let len = (dur * rate).round() as usize;
    let mut r = Renderer {
        out: vec![0.0; len],
        rate,
    };
    let tonic_f = tonic as f64;

    r.tone(
        DRONE_TONIC_MIDI + tonic_f,
        0.0,
        dur,
        DRONE_TONIC_GAIN,
        rng.gen::<f64>() * 2.0 * PI,
    );
    r.tone(
        DRONE_TONIC_MIDI + tonic_f + 7.0,
        0.0,
        dur,
        DRONE_FIFTH_GAIN,
        rng.gen::<f64>() * 2.0 * PI,
    );

    // pakad placement, one per block
    let mut pakads = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let tempo = rng.gen_range(spec.tempo[0]..=spec.tempo[1]);
        let plen = spec.pakad.len() as f64 / tempo;
        let lo = b as f64 * BLOCK_SECONDS + PAKAD_MARGIN;
        let hi = b as f64 * BLOCK_SECONDS + block_len - PAKAD_MARGIN - plen;
        let start = rng.gen_range(lo..=hi);
        pakads.push((start, tempo));
    }

    // background melody: random walk over two octaves of the scale
    let scale = spec.sorted_scale();
    let ladder: Vec<f64> = scale
        .iter()
        .map(|&c| c as f64)
        .chain(scale.iter().map(|&c| c as f64 + 12.0))
        .collect();
    let mut pos = rng.gen_range(0..ladder.len());
    let mut t = 0.0;
    let mut next_pakad = 0;
    while t < dur {
        if next_pakad < pakads.len() {
            let (ps, ptempo) = pakads[next_pakad];
            let pend = ps + spec.pakad.len() as f64 / ptempo;
            if t >= ps - 1e-9 {
                for (i, &c) in spec.pakad.iter().enumerate() {
                    let start = ps + i as f64 / ptempo;
                    r.tone(
                        MELODY_BASE_MIDI + tonic_f + c as f64,
                        start,
                        1.0 / ptempo,
                        PAKAD_GAIN,
                        rng.gen::<f64>() * 2.0 * PI,
                    );
                }
                t = pend;
                next_pakad += 1;
                continue;
            }
        }
        let tempo = rng.gen_range(spec.tempo[0]..=spec.tempo[1]);
        let mut note = 1.0 / tempo;
        if next_pakad < pakads.len() {
            note = note.min(pakads[next_pakad].0 - t);
        }
        let note = note.min(dur - t);
        if note > 0.05 {
            let midi = MELODY_BASE_MIDI + tonic_f + ladder[pos];
            r.tone(midi, t, note, MELODY_GAIN, rng.gen::<f64>() * 2.0 * PI);
        }
        t += note.max(1e-6);
        let step: i64 = *[-2, -1, -1, 1, 1, 2].get(rng.gen_range(0..6)).unwrap();
        let mut np = pos as i64 + step;
        if np < 0 || np >= ladder.len() as i64 {
            np = pos as i64 - step;
        }
        pos = np.clamp(0, ladder.len() as i64 - 1) as usize;
    }

    let noise = Normal::new(0.0, NOISE_RMS).expect("valid normal");
    let samples: Vec<f32> = r
        .out
        .iter()
        .map(|&v| (v + noise.sample(&mut rng)).clamp(-1.0, 1.0) as f32)
        .collect();
    let pakad_intervals = pakads
        .iter()
        .map(|&(s, tempo)| [s, s + spec.pakad.len() as f64 / tempo])
        .collect();
    Ok(SyntheticSong {
        clip: AudioClip::new(samples, SAMPLE_RATE, song_id, 0.0)?,
        raga_id: spec.raga_id.clone(),
        tonic,
        pakad_intervals,
    })
}

/// Render a single clip and its ground-truth pakad annotation.
pub fn generate_synthetic_clip(
    spec: &SyntheticRagaSpec,
    tonic: u8,
    dur: f64,
    seed: u64,
) -> Result<(AudioClip, ExpertAnnotation)> {
    let id = format!("{}_t{tonic}_s{seed}", spec.raga_id);
    let song = generate_synthetic_song(spec, tonic, dur, seed, &id)?;
    let ann = ExpertAnnotation {
        clip_id: id,
        intervals: song.pakad_intervals.clone(),
    };
    Ok((song.clip, ann))
}

impl SyntheticSong {
    /// Cut into 30 s chunks (all but the last full one) with each chunk's
    /// pakad annotation on the chunk's own timeline.
    pub fn chunks(&self) -> Result<Vec<(AudioClip, ExpertAnnotation)>> {
        let chunks = chunk_song(&self.clip, &[], CHUNK_SECONDS)?;
        Ok(chunks
            .into_iter()
            .map(|c| {
                let ann = self.annotation_for(&c.source_id, c.offset, CHUNK_SECONDS);
                (c, ann)
            })
            .collect())
    }
}

/// Recipe for one song of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSongPlan {
    pub song_id: String,
    pub spec: SyntheticRagaSpec,
    pub tonic: u8,
    pub duration: f64,
    pub seed: u64,
}

impl SyntheticSongPlan {
    pub fn render(&self) -> Result<SyntheticSong> {
        generate_synthetic_song(
            &self.spec,
            self.tonic,
            self.duration,
            self.seed,
            &self.song_id,
        )
    }
}

/// Manifest and per-song recipes for `songs_per_class` songs of every
/// preset, with random tonics and durations drawn from `duration`.
/// Songs are rendered lazily through [`SyntheticSongPlan::render`].
pub fn plan_synthetic_corpus(
    presets: &[SyntheticRagaSpec],
    songs_per_class: usize,
    duration: [f64; 2],
    seed: u64,
) -> Result<(DatasetManifest, Vec<SyntheticSongPlan>)> {
    if !(duration[0] >= 2.0 * CHUNK_SECONDS && duration[1] >= duration[0]) {
        return Err(Error::InvalidInput(format!(
            "song durations {duration:?} must start at {} s or more",
            2.0 * CHUNK_SECONDS
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plans = Vec::with_capacity(presets.len() * songs_per_class);
    for spec in presets {
        spec.validate()?;
        for i in 0..songs_per_class {
            plans.push(SyntheticSongPlan {
                song_id: format!("{}_{i:03}", spec.raga_id),
                spec: spec.clone(),
                tonic: rng.gen_range(0..12),
                duration: rng.gen_range(duration[0]..=duration[1]),
                seed: rng.gen(),
            });
        }
    }
    let manifest = DatasetManifest {
        songs: plans
            .iter()
            .map(|p| SongEntry {
                song_id: p.song_id.clone(),
                raga_label: p.spec.raga_id.clone(),
                tonic_pitch_class: p.tonic,
                artist: "synthetic".into(),
                music_segments: vec![],
                audio_path: None,
            })
            .collect(),
    };
    manifest.validate()?;
    Ok((manifest, plans))
}
