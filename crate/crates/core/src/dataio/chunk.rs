use super::{validate_intervals, AudioClip};
use crate::error::{Error, Result};

pub const CHUNK_SECONDS: f64 = 30.0;

/// Chunks kept from `total_music` seconds of music: every full chunk except
/// the recording's last one.
pub fn chunk_count(total_music: f64, chunk_len: f64) -> usize {
    ((total_music / chunk_len).floor() as usize).saturating_sub(1)
}

/// Concatenate the music segments of a recording and cut it into
/// consecutive `chunk_len` second chunks. The final full chunk and any
/// shorter remainder are dropped.
///
/// An empty `segments` list means the whole recording is music.
pub fn chunk_song(
    clip: &AudioClip,
    segments: &[[f64; 2]],
    chunk_len: f64,
) -> Result<Vec<AudioClip>> {
    if chunk_len <= 0.0 {
        return Err(Error::InvalidInput("chunk length must be positive".into()));
    }
    let whole = [[0.0, clip.duration()]];
    let segments = if segments.is_empty() {
        &whole[..]
    } else {
        segments
    };
    validate_intervals(segments).map_err(Error::InvalidInput)?;
    let rate = clip.sample_rate as f64;
    let tol = 1.0 / rate;
    // (start sample, end sample) of each segment in the source recording
    let mut spans = Vec::with_capacity(segments.len());
    for &[s, e] in segments {
        if s < 0.0 || e > clip.duration() + tol {
            return Err(Error::InvalidInput(format!(
                "segment [{s}, {e}] outside recording of {:.3} s",
                clip.duration()
            )));
        }
        let a = (s * rate).round() as usize;
        let b = ((e * rate).round() as usize).min(clip.samples.len());
        spans.push((a, b));
    }
    let total: usize = spans.iter().map(|(a, b)| b - a).sum();
    let chunk_samples = (chunk_len * rate).round() as usize;
    let full = total / chunk_samples;
    if full < 2 {
        return Err(Error::InvalidInput(format!(
            "{} has {:.2} s of music; at least {} s needed to keep one chunk",
            clip.source_id,
            total as f64 / rate,
            2.0 * chunk_len
        )));
    }
    let mut chunks = Vec::with_capacity(full - 1);
    let mut span_idx = 0;
    let mut pos = spans[0].0;
    for idx in 0..full - 1 {
        let mut samples = Vec::with_capacity(chunk_samples);
        let mut offset = None;
        while samples.len() < chunk_samples {
            let (_, end) = spans[span_idx];
            if pos >= end {
                span_idx += 1;
                pos = spans[span_idx].0;
                continue;
            }
            offset.get_or_insert(pos as f64 / rate + clip.offset);
            let take = (chunk_samples - samples.len()).min(end - pos);
            samples.extend_from_slice(&clip.samples[pos..pos + take]);
            pos += take;
        }
        chunks.push(AudioClip {
            samples,
            sample_rate: clip.sample_rate,
            source_id: format!("{}_{idx}", clip.source_id),
            offset: offset.unwrap_or(0.0),
        });
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RATE: u32 = 100;

    fn ramp(secs: f64) -> AudioClip {
        let n = (secs * RATE as f64) as usize;
        AudioClip::new((0..n).map(|i| i as f32).collect(), RATE, "song", 0.0).unwrap()
    }

    #[test]
    fn drops_last_full_chunk() {
        let chunks = chunk_song(&ramp(95.0), &[], 30.0).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].offset, 0.0);
        assert_eq!(chunks[1].offset, 30.0);
        assert_eq!(chunks[1].samples[0], 3000.0);
        assert_eq!(chunks[1].source_id, "song_1");

        let chunks = chunk_song(&ramp(60.0), &[[0.0, 60.0]], 30.0).unwrap();
        assert_eq!(chunks.len(), 1);
    }

    #[test]
    fn concatenates_segments() {
        let chunks = chunk_song(&ramp(90.0), &[[0.0, 40.0], [50.0, 80.0]], 30.0).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].samples.len(), 3000);
        assert_eq!(chunks[0].samples[2999], 2999.0);

        // a chunk that straddles the speech gap skips it
        let chunks = chunk_song(&ramp(120.0), &[[0.0, 40.0], [50.0, 110.0]], 30.0).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1].samples[999], 3999.0);
        assert_eq!(chunks[1].samples[1000], 5000.0);
    }

    #[test]
    fn too_short_or_bad_segments() {
        assert!(chunk_song(&ramp(59.0), &[], 30.0).is_err());
        assert!(chunk_song(&ramp(90.0), &[[0.0, 95.0]], 30.0).is_err());
        assert!(chunk_song(&ramp(90.0), &[[10.0, 5.0]], 30.0).is_err());
    }

    proptest! {
        #[test]
        fn count_matches_formula(secs in 0.0f64..200.0) {
            let clip = ramp(secs);
            let expected = chunk_count(clip.duration(), 30.0);
            match chunk_song(&clip, &[], 30.0) {
                Ok(chunks) => {
                    prop_assert_eq!(chunks.len(), expected);
                    // disjoint prefix of the music
                    for (i, c) in chunks.iter().enumerate() {
                        prop_assert_eq!(c.samples[0], (i * 3000) as f32);
                    }
                }
                Err(_) => prop_assert_eq!(expected, 0),
            }
        }
    }
}
