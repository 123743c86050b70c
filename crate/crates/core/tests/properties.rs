use gif_fusion::degradation::{apply, apply_blank, draw_parameters, DegradationKind, DegradationRanges, Modality, Sample};
use gif_fusion::gif::{gif_forward, GifParams};
use gif_fusion::image::Image;
use gif_fusion::lidar::{build_dhi_image, encode_channel, project_point, CalibMatrix, DhiConfig, LidarPoint, PointCloud};
use gif_fusion::rng::rng_for;
use gif_fusion::synth::LabelGrid;
use gif_fusion::tensor::{Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: &'static [usize]) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-3.0f64..3.0, n).prop_map(move |d| Tensor::new(shape, d).unwrap())
}

fn point() -> impl Strategy<Value = LidarPoint> {
    (0.5f64..90.0, -20.0f64..20.0, -3.0f64..8.0, 0.0f64..1.0).prop_map(|(x, y, z, r)| LidarPoint { x, y, z, r })
}

fn image(c: usize, h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..=255.0, c * h * w).prop_map(move |data| Image { channels: c, height: h, width: w, data })
}

fn pinhole() -> CalibMatrix {
    CalibMatrix::new(3, 4, vec![20.0, -40.0, 0.0, 0.0, 12.0, 0.0, -40.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap()
}

fn dhi_cfg() -> DhiConfig {
    DhiConfig { width: 40, height: 24, ..Default::default() }
}

proptest! {
    #[test]
    fn encoding_is_monotone(a in -10.0f64..200.0, b in -10.0f64..200.0, max in 0.1f64..100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(encode_channel(lo, max) >= encode_channel(hi, max));
    }

    #[test]
    fn dhi_image_is_order_free(points in prop::collection::vec(point(), 0..60), seed in any::<u64>()) {
        let calib = pinhole();
        let base = build_dhi_image(&PointCloud::new(points.clone()), &calib, &dhi_cfg());
        let mut shuffled = points;
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng_for(seed, &[]));
        let other = build_dhi_image(&PointCloud::new(shuffled), &calib, &dhi_cfg());
        prop_assert_eq!(base.to_pnm().encode(), other.to_pnm().encode());
        for i in 0..base.mask.len() {
            if !base.mask[i] {
                prop_assert_eq!((base.depth_channel[i], base.height_channel[i], base.intensity_channel[i]), (0, 0, 0));
            }
        }
    }

    #[test]
    fn identity_projection_is_idempotent_on_integers(x in 0usize..40, y in 0usize..24, z in 0.0f64..50.0) {
        let calib = CalibMatrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let p = LidarPoint { x: x as f64, y: y as f64, z, r: 0.5 };
        prop_assert_eq!(project_point(&p, &calib, &dhi_cfg()), Some((x, y)));
    }

    #[test]
    fn conv_is_linear(x in tensor(&[2, 5, 5]), y in tensor(&[2, 5, 5]), k in tensor(&[3, 2, 3, 3]), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let conv = |input: Tensor| {
            let mut t = Tape::new();
            let i = t.constant(input);
            let kk = t.constant(k.clone());
            let bias = t.constant(Tensor::zeros(&[3]));
            let o = t.conv2d(i, kk, bias, 1, 1).unwrap();
            t.value(o).data().to_vec()
        };
        let mix: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
        let lhs = conv(Tensor::new(&[2, 5, 5], mix).unwrap());
        let (cx, cy) = (conv(x.clone()), conv(y.clone()));
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * cx[i] + b * cy[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_stays_inside_unit_interval(v in prop::collection::vec(-1e6f64..1e6, 1..50)) {
        let mut t = Tape::new();
        let n = v.len();
        let x = t.constant(Tensor::new(&[n], v).unwrap());
        let s = t.sigmoid(x).unwrap();
        prop_assert!(t.value(s).data().iter().all(|&y| y > 0.0 && y < 1.0));
    }

    #[test]
    fn degradations_preserve_shape_and_range(img in image(3, 9, 11), kind in 0usize..5, seed in any::<u64>()) {
        let kind = DegradationKind::ALL[kind];
        let spec = draw_parameters(kind, Modality::One, &mut rng_for(seed, &[]), 9, 11, &DegradationRanges::default());
        let sample = Sample { modality1: img.clone(), modality2: img, labels: LabelGrid::empty(2), clean: true, applied: None };
        let out = apply(&sample, &spec);
        prop_assert!(out.modality1.same_shape(&sample.modality1));
        prop_assert!(out.modality1.data.iter().all(|v| (0.0..=255.0).contains(v)));
        prop_assert_eq!(&out.modality2, &sample.modality2);
        prop_assert_eq!(&out.labels, &sample.labels);
        // blank absorbs anything applied before it
        let blanked = apply_blank(&out.modality1);
        prop_assert_eq!(blanked, apply_blank(&sample.modality1));
    }

    #[test]
    fn gif_swaps_with_its_inputs(f1 in tensor(&[3, 4, 4]), f2 in tensor(&[3, 4, 4]), seed in any::<u64>()) {
        let p = GifParams::init(3, &mut rng_for(seed, &[]));
        // exchanging the modalities and the halves of every kernel exchanges the weights
        let swap_halves = |t: &Tensor| {
            let s = t.shape().to_vec();
            let (co, ci) = (s[0], s[1]);
            let hw = s[2] * s[3];
            let mut d = t.data().to_vec();
            for o in 0..co {
                for c in 0..ci / 2 {
                    for j in 0..hw {
                        d.swap((o * ci + c) * hw + j, (o * ci + c + ci / 2) * hw + j);
                    }
                }
            }
            Tensor::new(&s, d).unwrap()
        };
        let q = GifParams { c1: swap_halves(&p.c2), b1: p.b2.clone(), c2: swap_halves(&p.c1), b2: p.b1.clone(), cj: swap_halves(&p.cj), bf: p.bf.clone() };
        let a = gif_forward(&f1, &f2, &p).unwrap();
        let b = gif_forward(&f2, &f1, &q).unwrap();
        prop_assert!(a.w1.max_abs_diff(&b.w2) < 1e-12);
        prop_assert!(a.w2.max_abs_diff(&b.w1) < 1e-12);
        prop_assert!(a.fused.max_abs_diff(&b.fused) < 1e-12);
    }

    #[test]
    fn gif_weights_are_local(f1 in tensor(&[2, 6, 6]), f2 in tensor(&[2, 6, 6]), seed in any::<u64>(), bump in 0.5f64..3.0) {
        // a change at one pixel only moves the weights within the 3x3 window
        let p = GifParams::init(2, &mut rng_for(seed, &[]));
        let mut g1 = f1.clone();
        let at = g1.offset(&[1, 0, 0]);
        g1.data_mut()[at] += bump;
        let a = gif_forward(&f1, &f2, &p).unwrap();
        let b = gif_forward(&g1, &f2, &p).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                if y > 1 || x > 1 {
                    prop_assert_eq!(a.w1.get(&[y, x]), b.w1.get(&[y, x]));
                    prop_assert_eq!(a.w2.get(&[y, x]), b.w2.get(&[y, x]));
                }
            }
        }
    }
}
