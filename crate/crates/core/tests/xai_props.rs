use proptest::prelude::*;

use ragaxai::dsp::Chromagram;
use ragaxai::evalsal::SECONDS;
use ragaxai::xai_gradcam::{gradcam_map, gradcampp_map, time_saliency, ConvAttribution};
use ragaxai::xai_slime::{explain, make_masks, slime_time_saliency, Classifier, SlimeConfig, TargetMode};

const RATE: f64 = 31.25;

fn arb_attribution() -> impl Strategy<Value = ConvAttribution> {
    (1usize..40, 1usize..4, 1usize..6).prop_flat_map(|(t, f, c)| {
        let n = t * f * c;
        (
            prop::collection::vec(0.0f64..5.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
        )
            .prop_map(move |(a, g)| ConvAttribution::new(a, g, [t, f, c], 0, RATE).unwrap())
    })
}

/// Probability of class 0 is a logistic function of the energy in a few
/// pitch-class/second cells.
struct Weighted {
    weights: [f64; SECONDS],
}

impl Classifier for Weighted {
    fn class_probabilities(&self, chromas: &[&Chromagram]) -> ragaxai::Result<Vec<Vec<f32>>> {
        Ok(chromas
            .iter()
            .map(|c| {
                let mut s = vec![0.0; SECONDS];
                for f in 0..c.frames {
                    let sec = ragaxai::xai_gradcam::second_of_frame(f, c.frame_rate);
                    s[sec] += c.frame(f).iter().map(|&v| v as f64).sum::<f64>();
                }
                let z: f64 = s.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>() / c.frames as f64;
                let p = 1.0 / (1.0 + (-z).exp());
                vec![p as f32, (1.0 - p) as f32]
            })
            .collect())
    }
}

fn clip() -> Chromagram {
    let frames = 938;
    let e = (0..frames * 12).map(|i| 1.0 + ((i * 7) % 5) as f32 * 0.1).collect();
    Chromagram::from_energy(e, frames, RATE).unwrap()
}

proptest! {
    #[test]
    fn cam_maps_are_non_negative_and_sized(a in arb_attribution()) {
        for map in [gradcam_map(&a), gradcampp_map(&a)] {
            prop_assert_eq!(map.map.len(), a.cells());
            prop_assert!(map.map.iter().all(|&v| v >= 0.0 && v.is_finite()));
            let ts = time_saliency(&map);
            prop_assert_eq!(ts.frames.len(), a.frames);
            prop_assert_eq!(ts.seconds.len(), SECONDS);
            prop_assert!(ts.seconds.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn masks_are_never_empty(n in 1usize..60, d in 1usize..31, seed in 0u64..10_000) {
        let m = make_masks(n, d, seed).unwrap();
        prop_assert_eq!(m.masks.len(), n);
        prop_assert!(m.masks.iter().all(|z| z.len() == d && z.iter().any(|&b| b)));
        prop_assert_eq!(make_masks(n, d, seed).unwrap(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn slime_is_deterministic_and_finds_the_heaviest_second(hot in 0usize..SECONDS, seed in 0u64..1000) {
        let mut weights = [0.0; SECONDS];
        weights[hot] = 4.0;
        weights[(hot + 7) % SECONDS] = 1.0;
        let model = Weighted { weights };
        let cfg = SlimeConfig { seed, ..SlimeConfig::default() };
        let a = explain(&model, &clip(), Some(0), &cfg).unwrap();
        let b = explain(&model, &clip(), Some(0), &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        let top = a.coefficients.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        prop_assert_eq!(top, hot);
        let ts = slime_time_saliency(&a, RATE);
        prop_assert_eq!(ts.frames.len(), 938);
        prop_assert_eq!(ts.seconds.len(), SECONDS);
    }

    #[test]
    fn binary_mode_keeps_shapes(seed in 0u64..1000) {
        let model = Weighted { weights: [0.5; SECONDS] };
        let cfg = SlimeConfig { seed, mode: TargetMode::Binary, samples: 60, ..SlimeConfig::default() };
        let e = explain(&model, &clip(), None, &cfg).unwrap();
        prop_assert_eq!(e.coefficients.len(), SECONDS);
        prop_assert!(e.coefficients.iter().all(|c| c.is_finite()));
    }
}
