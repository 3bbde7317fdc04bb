use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn conv_of_ones_sums_full_overlap() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(x, w, Some(b), ConvGeom::new(1, 1, 1)).unwrap();
    let out = tape.value(y);
    assert_eq!(out.shape(), &[1, 1, 3, 3]);
    assert_eq!(out.data()[4], 9.0);
    assert_eq!(out.data()[0], 4.0);
}

#[test]
fn identity_kernel_is_identity() {
    let mut r = rng(1);
    let input = Tensor::<f32>::randn(&[2, 3, 7, 5], 1.0, &mut r);
    let mut w = Tensor::zeros(&[3, 3, 3, 3]);
    for c in 0..3 {
        w.data_mut()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
    }
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let wv = tape.constant(w);
    let y = tape.conv2d(x, wv, None, ConvGeom::new(1, 1, 1)).unwrap();
    assert!(tape.value(y).max_abs_diff(&input) < 1e-6);
}

#[test]
fn conv_shape_errors() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(
        tape.conv2d(x, w, None, ConvGeom::new(1, 1, 1)),
        Err(crate::Error::Dimension(_))
    ));
    let w = tape.constant(Tensor::zeros(&[1, 2, 7, 7]));
    assert!(matches!(
        tape.conv2d(x, w, None, ConvGeom::new(1, 0, 1)),
        Err(crate::Error::Config(_))
    ));
}

#[test]
fn conv_output_extent_formula() {
    let g = ConvGeom::new(2, 1, 1);
    assert_eq!(g.out_extent(8, 3).unwrap(), 4);
    let g = ConvGeom::new(1, 2, 2);
    assert_eq!(g.out_extent(16, 3).unwrap(), 16);
    let g = ConvGeom::new(4, 0, 1);
    assert_eq!(g.out_extent(16, 4).unwrap(), 4);
}

#[test]
fn conv_gradient_matches_finite_differences() {
    let mut r = rng(2);
    let x = Tensor::<f64>::randn(&[2, 4, 8, 8], 1.0, &mut r);
    let w = Tensor::<f64>::randn(&[6, 4, 3, 3], 0.3, &mut r);
    let b = Tensor::<f64>::randn(&[6], 0.1, &mut r);
    let err = grad_check(&[x, w, b], 1e-3, |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), ConvGeom::new(1, 1, 1))
    });
    assert!(err < 1e-4, "conv2d grad error {err}");
}

#[test]
fn strided_dilated_conv_gradient() {
    let mut r = rng(3);
    let x = Tensor::<f64>::randn(&[1, 2, 9, 9], 1.0, &mut r);
    let w = Tensor::<f64>::randn(&[3, 2, 3, 3], 0.3, &mut r);
    for geom in [ConvGeom::new(2, 1, 1), ConvGeom::new(1, 2, 2), ConvGeom::new(3, 0, 1)] {
        let err = grad_check(&[x.clone(), w.clone()], 1e-3, |t, v| {
            t.conv2d(v[0], v[1], None, geom)
        });
        assert!(err < 1e-4, "{geom:?}: {err}");
    }
}

#[test]
fn upsample_constant_and_single_pixel() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full(&[1, 2, 3, 3], 2.5));
    let y = tape.upsample(x, 7, 11).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
    let x = tape.constant(Tensor::full(&[1, 1, 1, 1], -1.25));
    let y = tape.upsample(x, 2, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[-1.25; 4]);
    let x = tape.constant(Tensor::zeros(&[1, 1, 4, 4]));
    assert!(tape.upsample(x, 2, 8).is_err());
}

#[test]
fn upsample_matches_half_pixel_convention() {
    // 1-D: [0, 1] to 4 samples at centres -0.25, 0.25, 0.75, 1.25 (clamped).
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap());
    let y = tape.upsample(x, 1, 4).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.25, 0.75, 1.0]);
}

#[test]
fn upsample_gradient() {
    let mut r = rng(4);
    let x = Tensor::<f64>::randn(&[1, 2, 4, 4], 1.0, &mut r);
    let err = grad_check(&[x.clone()], 1e-3, |t, v| t.upsample(v[0], 8, 8));
    assert!(err < 1e-4, "{err}");
    let err = grad_check(&[x], 1e-3, |t, v| t.upsample(v[0], 16, 11));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn relu_softmax_cross_entropy_values() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::new(&[2], vec![-2.0, 3.5]).unwrap());
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 3.5]);

    let l = tape.constant(Tensor::full(&[1, 5], 0.7));
    let p = tape.softmax(l, 5).unwrap();
    assert!(tape.value(p).data().iter().all(|&v| (v - 0.2).abs() < 1e-7));

    let l = tape.constant(Tensor::zeros(&[3, 4]));
    let ce = tape.cross_entropy(l, 4, &[0, 2, 3], None, 3.0).unwrap();
    assert!((tape.value(ce).data()[0] - 4f32.ln()).abs() < 1e-6);
}

#[test]
fn loss_gradients() {
    let mut r = rng(5);
    // Two groups of 3 classes over a 2x2 grid.
    let logits = Tensor::<f64>::randn(&[2, 6, 2, 2], 1.5, &mut r);
    let targets: Vec<usize> = (0..16).map(|i| i % 3).collect();
    let weights: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 0.0 } else { 1.0 }).collect();
    let err = grad_check(&[logits.clone()], 1e-4, |t, v| {
        t.cross_entropy(v[0], 3, &targets, Some(&weights), 7.0)
    });
    assert!(err < 1e-4, "ce {err}");
    let err = grad_check(&[logits.clone()], 1e-4, |t, v| t.softmax(v[0], 3));
    assert!(err < 1e-4, "softmax {err}");

    // smooth-L1 probed away from the |d| = 1 and d = 0 kinks.
    let pred = Tensor::<f64>::new(&[6], vec![0.3, -0.4, 2.0, -3.0, 0.8, 1.6]).unwrap();
    let target = vec![0.0; 6];
    let w = vec![1.0, 1.0, 0.5, 1.0, 0.0, 2.0];
    let err = grad_check(&[pred], 1e-4, |t, v| t.smooth_l1(v[0], &target, &w, 3.0));
    assert!(err < 1e-4, "smooth_l1 {err}");

    let a = Tensor::<f64>::randn(&[2, 3, 4, 4], 1.0, &mut r);
    let b = Tensor::<f64>::randn(&[2, 3, 4, 4], 1.0, &mut r);
    let err = grad_check(&[a, b], 1e-5, |t, v| t.l1_mean(v[0], v[1]));
    assert!(err < 1e-4, "l1 {err}");
}

#[test]
fn smooth_l1_values() {
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::new(&[3], vec![0.5, 2.0, -3.0]).unwrap());
    let l = tape.smooth_l1(p, &[0.0; 3], &[1.0; 3], 1.0).unwrap();
    assert!((tape.value(l).data()[0] - (0.125 + 1.5 + 2.5)).abs() < 1e-12);
}

#[test]
fn grad_check_linear_and_relu() {
    let mut r = rng(6);
    let x = Tensor::<f64>::randn(&[10], 1.0, &mut r);
    let err = grad_check(&[x], 1e-3, |t, v| Ok(t.scale(v[0], 3.0)));
    assert!(err < 1e-7, "{err}");

    // Same linear check in single precision calibrates the f32 floor.
    let x = Tensor::<f32>::randn(&[10], 1.0, &mut r);
    let err32 = grad_check(&[x], 1e-2, |t, v| Ok(t.scale(v[0], 3.0)));
    assert!(err32 < 1e-3, "{err32}");

    let eps = 1e-3;
    let x = Tensor::<f64>::from_fn(&[12], |i| {
        let v = (i as f64 - 5.5) * 0.37;
        if v.abs() < 10.0 * eps {
            v + 0.1
        } else {
            v
        }
    });
    let err = grad_check(&[x], eps, |t, v| Ok(t.relu(v[0])));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn add_distributes_and_concat_splits() {
    let mut r = rng(7);
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::randn(&[1, 2, 3, 3], 1.0, &mut r), true);
    let b = tape.leaf(Tensor::randn(&[1, 2, 3, 3], 1.0, &mut r), true);
    let s = tape.add(a, b).unwrap();
    let w: Vec<f64> = (0..18).map(|i| i as f64 - 4.0).collect();
    let l = tape.weighted_sum(s, &w).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.wrt(a).unwrap(), &w[..]);
    assert_eq!(g.wrt(b).unwrap(), &w[..]);

    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::randn(&[2, 1, 2, 2], 1.0, &mut r), true);
    let b = tape.leaf(Tensor::randn(&[2, 3, 2, 2], 1.0, &mut r), true);
    let c = tape.concat_channels(&[a, b]).unwrap();
    let w: Vec<f64> = (0..32).map(|i| i as f64).collect();
    let l = tape.weighted_sum(c, &w).unwrap();
    let g = tape.backward(l).unwrap();
    // Sample 0 owns weights 0..16: a takes the first plane, b the next three.
    assert_eq!(g.wrt(a).unwrap(), &[0.0, 1.0, 2.0, 3.0, 16.0, 17.0, 18.0, 19.0]);
    let gb = g.wrt(b).unwrap();
    assert_eq!(&gb[..12], &w[4..16]);
    assert_eq!(&gb[12..], &w[20..32]);
}

#[test]
fn frozen_parameters_get_no_gradient() {
    let mut store = ParamStore::<f64>::new();
    store.insert("mtl.w", Tensor::full(&[2], 1.0));
    store.insert("codec.w", Tensor::full(&[2], 2.0));
    let mut tape = Tape::new().with_frozen(["mtl."]);
    let a = tape.param(&store, "mtl.w").unwrap();
    let b = tape.param(&store, "codec.w").unwrap();
    assert_eq!(tape.param(&store, "codec.w").unwrap(), b);
    let s = tape.add(a, b).unwrap();
    let l = tape.weighted_sum(s, &[1.0, 1.0]).unwrap();
    let g = tape.backward(l).unwrap();
    let names: Vec<&str> = g.params().map(|(n, _)| n).collect();
    assert_eq!(names, vec!["codec.w"]);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut r = rng(8);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::randn(&[3, 4, 9, 9], 1.0, &mut r));
        let w = tape.constant(Tensor::randn(&[5, 4, 3, 3], 0.2, &mut r));
        let y = tape.conv2d(x, w, None, ConvGeom::new(2, 1, 1)).unwrap();
        let y = tape.upsample(y, 10, 10).unwrap();
        tape.value(y).clone()
    };
    crate::parallel::set_exec_mode(crate::parallel::ExecMode::Sequential);
    let a = run();
    crate::parallel::set_exec_mode(crate::parallel::ExecMode::Parallel);
    let b = run();
    assert_eq!(a, run());
    assert_eq!(a, b);
}

#[test]
fn adam_examples() {
    let cfg = AdamConfig::default();
    let mut p = vec![0.5f64, -1.0];
    let mut st = Moments::default();
    for t in 1..=5 {
        adam_step("p", &mut p, &[0.0, 0.0], &mut st, 0.1, cfg, t).unwrap();
    }
    assert_eq!(p, vec![0.5, -1.0]);

    let mut p = vec![0.0f64];
    let mut st = Moments::default();
    adam_step("p", &mut p, &[1.0], &mut st, 0.1, cfg, 1).unwrap();
    // m̂ = 1, v̂ = 1  =>  Δ = -0.1 / (1 + 1e-8)
    assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);

    let mut p = vec![3.0f64, 3.0];
    let mut st = Moments::default();
    adam_step("p", &mut p, &[0.7, 0.7], &mut st, 0.01, cfg, 1).unwrap();
    assert_eq!(p[0], p[1]);

    let err = adam_step("enc.w", &mut p, &[f64::NAN, 0.0], &mut st, 0.01, cfg, 2).unwrap_err();
    assert!(err.to_string().contains("enc.w"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        entries in proptest::collection::vec(
            ("[a-z]{1,6}(\\.[a-z]{1,6}){0,2}", proptest::collection::vec(1usize..4, 1..4)),
            1..5,
        ),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let mut store = ParamStore::<f32>::new();
        for (name, shape) in entries {
            let mut t = Tensor::randn(&shape, 3.0, &mut r);
            t.data_mut()[0] = f32::from_bits(0x0000_0001); // subnormal survives
            store.insert(name, t);
        }
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        prop_assert_eq!(back.len(), store.len());
        for ((n1, a), (n2, b)) in store.iter().zip(back.iter()) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(a.shape(), b.shape());
            let bits_a: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn conv_gradient_random_geometry(
        cin in 1usize..3, cout in 1usize..3, k in 1usize..4,
        stride in 1usize..3, dilation in 1usize..3, seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let pad = dilation * (k - 1) / 2;
        let x = Tensor::<f64>::randn(&[1, cin, 7, 6], 1.0, &mut r);
        let w = Tensor::<f64>::randn(&[cout, cin, k, k], 0.5, &mut r);
        let err = grad_check(&[x, w], 1e-3, |t, v| {
            t.conv2d(v[0], v[1], None, ConvGeom::new(stride, pad, dilation))
        });
        prop_assert!(err < 1e-4, "{}", err);
    }
}
