//! Spectral front end: STFT, MIDI-pitch log-frequency spectrogram,
//! chromagram and tonic normalization.
//!
//! The pipeline is literal: `|X(n,k)|²` energies are pooled into the 128
//! MIDI pitch bands whose edges sit half a semitone either side of each
//! pitch centre, and the pitch bands are folded modulo 12 into pitch
//! classes. No log compression and no per-frame normalization is applied.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataio::AudioClip;
use crate::error::{Error, Result};

/// Canonical pipeline sample rate.
pub const SAMPLE_RATE: u32 = 16_000;
pub const N_FFT: usize = 2048;
pub const HOP: usize = 512;
/// Number of MIDI pitches covered by the log-frequency spectrogram.
pub const N_PITCHES: usize = 128;
pub const N_CHROMA: usize = 12;
/// Frames produced for a 30 s clip at 16 kHz with hop 512 and centered frames.
pub const CLIP_FRAMES: usize = 938;
pub const CLIP_SECONDS: f64 = 30.0;
/// Pitch class of A, the default tonic reference.
pub const REFERENCE_CLASS: u8 = 9;

pub const PITCH_CLASS_NAMES: [&str; 12] = [
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B",
];

/// Centre frequency of MIDI pitch `p` (may be fractional), A4 = 69 = 440 Hz.
pub fn pitch_frequency(p: f64) -> f64 {
    440.0 * 2f64.powf((p - 69.0) / 12.0)
}

/// Parse a note name such as `"A"`, `"C#"` or `"Db"` into a pitch class.
pub fn pitch_class_from_name(name: &str) -> Option<u8> {
    let name = name.trim();
    let mut chars = name.chars();
    let base = match chars.next()?.to_ascii_uppercase() {
        'C' => 0i32,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return None,
    };
    let mut pc = base;
    for c in chars {
        match c {
            '#' => pc += 1,
            'b' => pc -= 1,
            _ => return None,
        }
    }
    Some(pc.rem_euclid(12) as u8)
}

/// Analysis window applied to every STFT frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    /// Periodic Hann window.
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

/// Squared-magnitude STFT, `frames × (n_fft/2 + 1)`, row-major.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub mag_sq: Vec<f32>,
    pub frames: usize,
    pub bins: usize,
    pub sample_rate: u32,
    pub n_fft: usize,
    pub frame_rate: f64,
}

impl Spectrogram {
    /// `F_coef(k)` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.n_fft as f64
    }

    pub fn frame(&self, n: usize) -> &[f32] {
        &self.mag_sq[n * self.bins..(n + 1) * self.bins]
    }
}

/// Reflect an out-of-range index back into `0..len` (numpy "reflect" mode,
/// repeated as often as needed).
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Reusable STFT engine (FFT plan + window).
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("n_fft", &self.n_fft)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize, window: Window) -> Result<Self> {
        if n_fft == 0 || hop == 0 || n_fft < hop {
            return Err(Error::InvalidInput(format!(
                "stft requires n_fft >= hop > 0 (n_fft={n_fft}, hop={hop})"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Stft {
            n_fft,
            hop,
            window: window.coefficients(n_fft),
            fft,
        })
    }

    /// Number of centered frames for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    pub fn process(&self, samples: &[f32], sample_rate: u32) -> Result<Spectrogram> {
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        let frames = self.frame_count(samples.len());
        let bins = self.n_fft / 2 + 1;
        let half = (self.n_fft / 2) as isize;
        let mut mag_sq = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(0.0f64, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0f64, 0.0); self.fft.get_inplace_scratch_len()];
        for n in 0..frames {
            let start = (n * self.hop) as isize - half;
            for (i, slot) in buf.iter_mut().enumerate() {
                let idx = reflect_index(start + i as isize, samples.len());
                *slot = Complex::new(samples[idx] as f64 * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            mag_sq.extend(buf[..bins].iter().map(|c| c.norm_sqr() as f32));
        }
        Ok(Spectrogram {
            mag_sq,
            frames,
            bins,
            sample_rate,
            n_fft: self.n_fft,
            frame_rate: sample_rate as f64 / self.hop as f64,
        })
    }
}

/// Centered, one-sided STFT energy of a clip.
pub fn stft(clip: &AudioClip, n_fft: usize, hop: usize, window: Window) -> Result<Spectrogram> {
    Stft::new(n_fft, hop, window)?.process(&clip.samples, clip.sample_rate)
}

/// Assignment of STFT bins to MIDI pitch bands.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchBandMap {
    bands: Vec<Vec<usize>>,
    bin_pitch: Vec<Option<u8>>,
    sample_rate: u32,
    n_fft: usize,
}

impl PitchBandMap {
    pub fn new(sample_rate: u32, n_fft: usize) -> Result<Self> {
        if sample_rate == 0 || n_fft == 0 {
            return Err(Error::InvalidInput(
                "pitch band map needs positive sample rate and n_fft".into(),
            ));
        }
        let bins = n_fft / 2 + 1;
        let edges: Vec<f64> = (0..=N_PITCHES)
            .map(|p| pitch_frequency(p as f64 - 0.5))
            .collect();
        let mut bands = vec![Vec::new(); N_PITCHES];
        let mut bin_pitch = vec![None; bins];
        for (k, slot) in bin_pitch.iter_mut().enumerate() {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            if f < edges[0] || f >= edges[N_PITCHES] {
                continue;
            }
            // edges is strictly increasing: find p with edges[p] <= f < edges[p+1]
            let p = edges.partition_point(|&e| e <= f) - 1;
            bands[p].push(k);
            *slot = Some(p as u8);
        }
        Ok(PitchBandMap {
            bands,
            bin_pitch,
            sample_rate,
            n_fft,
        })
    }

    /// Bin indices of band `P(p)`.
    pub fn band(&self, p: usize) -> &[usize] {
        &self.bands[p]
    }

    pub fn pitch_of_bin(&self, k: usize) -> Option<u8> {
        self.bin_pitch.get(k).copied().flatten()
    }

    pub fn bins(&self) -> usize {
        self.bin_pitch.len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }
}

pub fn pitch_band_map(sample_rate: u32, n_fft: usize) -> Result<PitchBandMap> {
    PitchBandMap::new(sample_rate, n_fft)
}

/// `frames × 128` pitch-band energies.
#[derive(Debug, Clone)]
pub struct LogFreqSpectrogram {
    pub energy: Vec<f32>,
    pub frames: usize,
    pub frame_rate: f64,
}

impl LogFreqSpectrogram {
    pub fn frame(&self, n: usize) -> &[f32] {
        &self.energy[n * N_PITCHES..(n + 1) * N_PITCHES]
    }
}

pub fn logfreq_spectrogram(spec: &Spectrogram, map: &PitchBandMap) -> Result<LogFreqSpectrogram> {
    if spec.bins != map.bins() || spec.sample_rate != map.sample_rate || spec.n_fft != map.n_fft {
        return Err(Error::shape(
            format!(
                "{} bins @ {} Hz / n_fft {}",
                map.bins(),
                map.sample_rate,
                map.n_fft
            ),
            format!(
                "{} bins @ {} Hz / n_fft {}",
                spec.bins, spec.sample_rate, spec.n_fft
            ),
        ));
    }
    let mut energy = vec![0f32; spec.frames * N_PITCHES];
    for n in 0..spec.frames {
        let row = spec.frame(n);
        let out = &mut energy[n * N_PITCHES..(n + 1) * N_PITCHES];
        for (p, band) in map.bands.iter().enumerate() {
            let s: f64 = band.iter().map(|&k| row[k] as f64).sum();
            out[p] = s as f32;
        }
    }
    Ok(LogFreqSpectrogram {
        energy,
        frames: spec.frames,
        frame_rate: spec.frame_rate,
    })
}

/// `frames × 12` pitch-class energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chromagram {
    pub energy: Vec<f32>,
    pub frames: usize,
    pub frame_rate: f64,
    pub tonic_normalized: bool,
    /// Reference class the tonic was rotated onto, when normalized.
    pub reference_class: Option<u8>,
}

impl Chromagram {
    pub fn from_energy(energy: Vec<f32>, frames: usize, frame_rate: f64) -> Result<Self> {
        if energy.len() != frames * N_CHROMA {
            return Err(Error::shape(
                format!("{frames}x{N_CHROMA}"),
                format!("{} values", energy.len()),
            ));
        }
        Ok(Chromagram {
            energy,
            frames,
            frame_rate,
            tonic_normalized: false,
            reference_class: None,
        })
    }

    pub fn zeros(frames: usize, frame_rate: f64) -> Self {
        Chromagram {
            energy: vec![0.0; frames * N_CHROMA],
            frames,
            frame_rate,
            tonic_normalized: false,
            reference_class: None,
        }
    }

    pub fn frame(&self, n: usize) -> &[f32] {
        &self.energy[n * N_CHROMA..(n + 1) * N_CHROMA]
    }

    pub fn get(&self, n: usize, c: usize) -> f32 {
        self.energy[n * N_CHROMA + c]
    }

    /// Energy summed over time per pitch class.
    pub fn class_totals(&self) -> [f64; N_CHROMA] {
        let mut totals = [0f64; N_CHROMA];
        for row in self.energy.chunks_exact(N_CHROMA) {
            for (t, &v) in totals.iter_mut().zip(row) {
                *t += v as f64;
            }
        }
        totals
    }

    /// Pitch class with the most time-summed energy (lowest index on ties).
    pub fn dominant_class(&self) -> u8 {
        let totals = self.class_totals();
        let mut best = 0;
        for c in 1..N_CHROMA {
            if totals[c] > totals[best] {
                best = c;
            }
        }
        best as u8
    }

    /// Cyclic rotation of the pitch axis: output class `c` takes input class
    /// `c - shift (mod 12)`, i.e. energy moves up by `shift` semitones.
    pub fn rotated(&self, shift: i32) -> Chromagram {
        let mut energy = vec![0f32; self.energy.len()];
        for (src, dst) in self
            .energy
            .chunks_exact(N_CHROMA)
            .zip(energy.chunks_exact_mut(N_CHROMA))
        {
            for (c, slot) in dst.iter_mut().enumerate() {
                let from = (c as i32 - shift).rem_euclid(N_CHROMA as i32) as usize;
                *slot = src[from];
            }
        }
        Chromagram {
            energy,
            ..self.clone()
        }
    }
}

pub fn chromagram(lf: &LogFreqSpectrogram) -> Result<Chromagram> {
    if lf.energy.len() != lf.frames * N_PITCHES {
        return Err(Error::shape(
            format!("{}x{N_PITCHES}", lf.frames),
            format!("{} values", lf.energy.len()),
        ));
    }
    let mut energy = vec![0f32; lf.frames * N_CHROMA];
    for (src, dst) in lf
        .energy
        .chunks_exact(N_PITCHES)
        .zip(energy.chunks_exact_mut(N_CHROMA))
    {
        for (p, &v) in src.iter().enumerate() {
            dst[p % N_CHROMA] += v;
        }
    }
    Chromagram::from_energy(energy, lf.frames, lf.frame_rate)
}

/// Rotate the pitch axis so that the tonic's energy lands in `reference`.
pub fn tonic_normalize(chroma: &Chromagram, tonic: u8, reference: u8) -> Result<Chromagram> {
    if chroma.tonic_normalized {
        return Err(Error::AlreadyNormalized);
    }
    if tonic >= 12 || reference >= 12 {
        return Err(Error::InvalidInput(format!(
            "pitch classes must be in 0..12 (tonic={tonic}, reference={reference})"
        )));
    }
    let mut out = chroma.rotated(reference as i32 - tonic as i32);
    out.tonic_normalized = true;
    out.reference_class = Some(reference);
    Ok(out)
}

/// Reusable STFT → log-frequency → chroma pipeline at the canonical settings.
#[derive(Debug)]
pub struct FeatureExtractor {
    stft: Stft,
    map: PitchBandMap,
    sample_rate: u32,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(SAMPLE_RATE, N_FFT, HOP).expect("canonical parameters are valid")
    }
}

impl FeatureExtractor {
    pub fn new(sample_rate: u32, n_fft: usize, hop: usize) -> Result<Self> {
        Ok(FeatureExtractor {
            stft: Stft::new(n_fft, hop, Window::Hann)?,
            map: PitchBandMap::new(sample_rate, n_fft)?,
            sample_rate,
        })
    }

    /// Raw (un-normalized) chromagram of a clip of any length.
    pub fn chroma(&self, clip: &AudioClip) -> Result<Chromagram> {
        if clip.sample_rate != self.sample_rate {
            return Err(Error::InvalidInput(format!(
                "expected {} Hz audio, got {} Hz",
                self.sample_rate, clip.sample_rate
            )));
        }
        let spec = self.stft.process(&clip.samples, clip.sample_rate)?;
        let lf = logfreq_spectrogram(&spec, &self.map)?;
        chromagram(&lf)
    }

    /// Model input: tonic-normalized `938 × 12` chromagram of a 30 s clip.
    pub fn extract(&self, clip: &AudioClip, tonic: u8) -> Result<Chromagram> {
        let expected = (CLIP_SECONDS * self.sample_rate as f64).round() as usize;
        if clip.samples.len() != expected {
            return Err(Error::shape(
                format!("{expected} samples (30 s)"),
                format!("{} samples", clip.samples.len()),
            ));
        }
        let chroma = self.chroma(clip)?;
        tonic_normalize(&chroma, tonic, REFERENCE_CLASS)
    }
}

/// One-shot convenience wrapper around [`FeatureExtractor::extract`].
pub fn extract_features(clip: &AudioClip, tonic: u8) -> Result<Chromagram> {
    FeatureExtractor::default().extract(clip, tonic)
}
