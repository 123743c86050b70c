mod common;

use common::{max_diff, naive_gif, random_instance};
use gif_fusion::gif::{fixed_weight_forward, gif_forward, pinned_weight_forward};

#[test]
fn pinned_weights_reduce_to_fixed_fusion() {
    for i in 0..100 {
        let (f1, f2, p) = random_instance(11, i);
        let pinned = pinned_weight_forward(&f1, &f2, &p).unwrap();
        let fixed = fixed_weight_forward(&f1, &f2, &p).unwrap();
        assert!(pinned.fused.max_abs_diff(&fixed.fused) < 1e-12, "instance {i}");
        assert!(pinned.w1.data().iter().chain(pinned.w2.data()).all(|&w| w == 1.0));
    }
}

#[test]
fn learned_block_matches_loop_oracle() {
    for i in 0..100 {
        let (f1, f2, p) = random_instance(12, i);
        let out = gif_forward(&f1, &f2, &p).unwrap();
        let (w1, w2, fused) = naive_gif(&f1, &f2, &p, false);
        assert!(max_diff(out.w1.data(), &w1) < 1e-12, "instance {i}");
        assert!(max_diff(out.w2.data(), &w2) < 1e-12, "instance {i}");
        assert!(max_diff(out.fused.data(), &fused) < 1e-12, "instance {i}");
    }
}

#[test]
fn fixed_block_matches_loop_oracle() {
    for i in 0..100 {
        let (f1, f2, p) = random_instance(13, i);
        let out = fixed_weight_forward(&f1, &f2, &p).unwrap();
        let (_, _, fused) = naive_gif(&f1, &f2, &p, true);
        assert!(max_diff(out.fused.data(), &fused) < 1e-12, "instance {i}");
    }
}

#[test]
fn fixed_fusion_sees_both_modalities_unscaled() {
    // with fixed weights the gated stack is just the concatenation
    let (f1, f2, p) = random_instance(14, 0);
    let out = fixed_weight_forward(&f1, &f2, &p).unwrap();
    let cat: Vec<f64> = f1.data().iter().chain(f2.data()).copied().collect();
    assert_eq!(out.gated.data(), &cat[..]);
}
