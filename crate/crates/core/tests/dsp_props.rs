use proptest::prelude::*;

use ragaxai::dataio::AudioClip;
use ragaxai::dsp::{
    pitch_frequency, tonic_normalize, Chromagram, FeatureExtractor, HOP, N_CHROMA, REFERENCE_CLASS, SAMPLE_RATE,
};

fn arb_chroma() -> impl Strategy<Value = Chromagram> {
    (1usize..20).prop_flat_map(|frames| {
        prop::collection::vec(0.0f32..100.0, frames * N_CHROMA)
            .prop_map(move |e| Chromagram::from_energy(e, frames, 31.25).unwrap())
    })
}

fn tone(midi: f64, seconds: f64) -> AudioClip {
    let f = pitch_frequency(midi);
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            (0.5 * (2.0 * std::f64::consts::PI * f * t).sin()) as f32
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE, "tone", 0.0).unwrap()
}

proptest! {
    #[test]
    fn rotations_compose(c in arb_chroma(), a in -24i32..24, b in -24i32..24) {
        prop_assert_eq!(c.rotated(a).rotated(b), c.rotated(a + b));
        prop_assert_eq!(c.rotated(12), c.clone());
    }

    #[test]
    fn rotation_keeps_frame_totals(c in arb_chroma(), a in 0i32..12) {
        let r = c.rotated(a);
        for f in 0..c.frames {
            let (x, y): (f32, f32) = (c.frame(f).iter().sum(), r.frame(f).iter().sum());
            prop_assert!((x - y).abs() <= 1e-3 * x.max(1.0));
        }
    }

    #[test]
    fn tonic_energy_lands_on_reference(frames in 1usize..10, tonic in 0u8..12) {
        let mut e = vec![0.1f32; frames * N_CHROMA];
        for f in 0..frames {
            e[f * N_CHROMA + tonic as usize] = 5.0;
        }
        let c = Chromagram::from_energy(e, frames, 31.25).unwrap();
        let n = tonic_normalize(&c, tonic, REFERENCE_CLASS).unwrap();
        prop_assert_eq!(n.dominant_class(), REFERENCE_CLASS);
        prop_assert!(n.tonic_normalized);
        prop_assert!(tonic_normalize(&n, tonic, REFERENCE_CLASS).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn frame_count_and_non_negative(len in 1usize..40_000, seed in 0u64..1000) {
        let samples = (0..len).map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f32 / 500.0) - 1.0).collect();
        let clip = AudioClip::new(samples, SAMPLE_RATE, "x", 0.0).unwrap();
        let c = FeatureExtractor::default().chroma(&clip).unwrap();
        prop_assert_eq!(c.frames, 1 + len / HOP);
        prop_assert!(c.energy.iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn pure_tone_lands_on_its_pitch_class(midi in 55u32..84) {
        let c = FeatureExtractor::default().chroma(&tone(midi as f64, 1.0)).unwrap();
        prop_assert_eq!(c.dominant_class() as u32, midi % 12);
    }
}
