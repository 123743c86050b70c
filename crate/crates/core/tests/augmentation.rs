use gif_fusion::degradation::{
    apply, apply_noise, sample_spec, DegradationKind, DegradationRanges, InapplicablePolicy, Modality, ModalityConstraints, Sample,
};
use gif_fusion::image::Image;
use gif_fusion::rng::rng_for;
use gif_fusion::synth::{generate_dataset, SceneParams};

fn kind_counts(policy: InapplicablePolicy, n: usize) -> ([usize; 5], usize) {
    let c = ModalityConstraints { camera: Modality::One, policy };
    let mut rng = rng_for(5, &[]);
    let mut counts = [0usize; 5];
    let mut camera_only_on_m2 = 0;
    for _ in 0..n {
        let s = sample_spec(&mut rng, &c, 32, 32, &DegradationRanges::default());
        counts[DegradationKind::ALL.iter().position(|&k| k == s.kind).unwrap()] += 1;
        if s.kind.camera_only() && s.target == Modality::Two {
            camera_only_on_m2 += 1;
        }
    }
    (counts, camera_only_on_m2)
}

#[test]
fn retargeting_keeps_kinds_uniform() {
    let n = 100_000;
    let (counts, bad) = kind_counts(InapplicablePolicy::RetargetModality, n);
    for c in counts {
        assert!((c as f64 / n as f64 - 0.2).abs() < 0.01, "{counts:?}");
    }
    assert_eq!(bad, 0);
}

#[test]
fn resampling_never_targets_depth_with_camera_kinds() {
    let (counts, bad) = kind_counts(InapplicablePolicy::ResampleKind, 20_000);
    assert_eq!(bad, 0);
    assert_eq!(counts.iter().sum::<usize>(), 20_000);
}

#[test]
fn noise_std_follows_sigma() {
    for sigma in [5.0, 20.0] {
        let img = Image::filled(1, 100, 100, 128.0);
        let out = apply_noise(&img, sigma, &mut rng_for(9, &[sigma as u64]));
        let mean = out.mean();
        let var = out.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / out.data.len() as f64;
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.05, "sigma {sigma}: std {}", var.sqrt());
    }
}

#[test]
fn augmentation_is_deterministic_under_seed() {
    let data = generate_dataset(6, 3, &SceneParams::default());
    let run = |seed: u64| -> Vec<Sample> {
        let mut rng = rng_for(seed, &[]);
        data.iter()
            .map(|s| apply(s, &sample_spec(&mut rng, &ModalityConstraints::default(), 32, 32, &DegradationRanges::default())))
            .collect()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}
