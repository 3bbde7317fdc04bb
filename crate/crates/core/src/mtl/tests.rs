use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::layers::{Bottleneck, BottleneckConfig};
use crate::tensor::kernels::conv2d_forward;
use crate::tensor::{grad_check_params, ConvGeom, ParamStore, Tape, Tensor};

fn net_with(cfg: MtlConfig, seed: u64) -> (MtlNet, ParamStore<f32>) {
    let net = MtlNet::new(cfg).unwrap();
    let mut store = ParamStore::new();
    net.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
    (net, store)
}

fn small_cfg() -> MtlConfig {
    MtlConfig {
        image_size: 32,
        fused_channels: 16,
        pyramid_depth: 4,
        backbone_widths: [4, 8, 8, 16, 16],
        seg_channels: 4,
        ..MtlConfig::default()
    }
}

/// Bilinear resize (half-pixel centers), written out independently of the kernels.
fn resize_oracle(x: &Tensor<f32>, th: usize, tw: usize) -> Tensor<f32> {
    let (n, c, h, w) = x.dims4().unwrap();
    let src = |i: usize, inn: usize, out: usize| -> (usize, usize, f32) {
        let p = ((i as f32 + 0.5) * inn as f32 / out as f32 - 0.5).max(0.0);
        let i0 = (p.floor() as usize).min(inn - 1);
        let i1 = (i0 + 1).min(inn - 1);
        (i0, i1, p - i0 as f32)
    };
    let mut out = Tensor::zeros(&[n, c, th, tw]);
    let d = x.data();
    for p in 0..n * c {
        for oy in 0..th {
            let (y0, y1, fy) = src(oy, h, th);
            for ox in 0..tw {
                let (x0, x1, fx) = src(ox, w, tw);
                let v = |yy: usize, xx: usize| d[(p * h + yy) * w + xx];
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                out.data_mut()[(p * th + oy) * tw + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

fn gt_with(objects: Vec<GtObject>, size: usize) -> GroundTruth {
    GroundTruth {
        objects,
        mask: vec![0; size * size],
    }
}

#[test]
fn split_feature_shape_and_config_errors() {
    let (net, store) = net_with(MtlConfig::default(), 1);
    let img = Tensor::randn(&[1, 3, 64, 64], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    assert_eq!(net.features(&store, &img).unwrap().shape(), &[1, 64, 16, 16]);
    let bad = MtlConfig {
        image_size: 48,
        ..MtlConfig::default()
    };
    assert!(matches!(MtlNet::new(bad), Err(crate::Error::Config(_))));
    let deep = MtlConfig {
        pyramid_depth: 6,
        ..MtlConfig::default()
    };
    assert!(matches!(MtlNet::new(deep), Err(crate::Error::Config(_))));
}

#[test]
fn zero_backbone_gives_bias_image() {
    let (net, mut store) = net_with(small_cfg(), 1);
    for (name, t) in store.iter_mut() {
        if name.starts_with(BACKBONE_PREFIX) && name != "backbone.fuse.bias" {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let bias: Vec<f32> = (0..16).map(|i| i as f32 * 0.25 - 1.0).collect();
    store.insert("backbone.fuse.bias", Tensor::new(&[16], bias.clone()).unwrap());
    let img = Tensor::randn(&[1, 3, 32, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let d1 = net.features(&store, &img).unwrap();
    for (c, plane) in d1.data().chunks(64).enumerate() {
        assert!(plane.iter().all(|&v| v == bias[c].max(0.0)));
    }
}

#[test]
fn fusion_matches_independent_sum() {
    let cfg = small_cfg();
    let (net, store) = net_with(cfg.clone(), 3);
    let img = Tensor::randn(&[2, 3, 32, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let conv = |x: &Tensor<f32>, name: &str, geom: ConvGeom| {
        conv2d_forward(
            x,
            store.get(&format!("{name}.weight")).unwrap(),
            Some(store.get(&format!("{name}.bias")).unwrap()),
            geom,
        )
        .unwrap()
    };
    let relu = |t: Tensor<f32>| t.map(|v| v.max(0.0));
    let down = ConvGeom::new(2, 1, 1);
    let mut h = relu(conv(&img, "backbone.stem", down));
    let mut f0 = Tensor::zeros(&[2, 16, 8, 8]);
    for i in 1..=4 {
        h = relu(conv(&h, &format!("backbone.stage{i}"), down));
        let lat = conv(&h, &format!("backbone.lateral{i}"), ConvGeom::new(1, 0, 1));
        let lat = resize_oracle(&lat, 8, 8);
        f0.data_mut().iter_mut().zip(lat.data()).for_each(|(a, b)| *a += b);
    }
    let expect = relu(conv(&f0, "backbone.fuse", ConvGeom::new(1, 1, 1)));
    let got = net.features(&store, &img).unwrap();
    assert!(got.max_abs_diff(&expect) < 1e-4, "{}", got.max_abs_diff(&expect));
}

#[test]
fn pyramid_extents_and_channels() {
    let (net, store) = net_with(MtlConfig::default(), 5);
    let mut tape = Tape::new();
    let d1 = tape.constant(Tensor::randn(&[1, 64, 16, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(6)));
    let levels = net.parse_features(&mut tape, &store, d1).unwrap();
    let shapes: Vec<Vec<usize>> = levels.iter().map(|&v| tape.value(v).shape().to_vec()).collect();
    let expect: Vec<Vec<usize>> = [16, 8, 4, 2, 1].iter().map(|&s| vec![1, 64, s, s]).collect();
    assert_eq!(shapes, expect);
    let anchors = AnchorSet::for_config(&net.cfg).unwrap();
    let out = net.detect_outputs(&mut tape, &store, &levels).unwrap();
    for (l, o) in out.iter().enumerate() {
        let s = 16 >> l;
        assert_eq!(tape.value(o.cls).shape(), &[1, 15, s, s]);
        assert_eq!(tape.value(o.loc).shape(), &[1, 12, s, s]);
        assert_eq!(anchors.level_range(l).len(), 3 * s * s);
    }
}

/// Horizontal extent of the input-gradient support of one output position.
fn footprint(block: &Bottleneck, store: &ParamStore<f64>) -> usize {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::full(&[1, 16, 16, 16], 1.0), true);
    let y = block.forward(&mut tape, store, x).unwrap();
    let mut w = vec![0.0; tape.value(y).len()];
    w[4 * 8 + 4] = 1.0;
    let l = tape.weighted_sum(y, &w).unwrap();
    let g = tape.backward(l).unwrap();
    let g = g.wrt(x).unwrap();
    let cols: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).map(|i| i % 16).collect();
    cols.iter().max().unwrap() - cols.iter().min().unwrap() + 1
}

#[test]
fn dilated_parser_widens_receptive_field() {
    let cfg = MtlConfig {
        image_size: 64,
        fused_channels: 16,
        ..small_cfg()
    };
    let (net, store) = net_with(cfg, 7);
    let positive = |s: &ParamStore<f32>| {
        let mut s = s.cast::<f64>();
        s.iter_mut().for_each(|(_, t)| t.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.01));
        s
    };
    // D₂ of the network vs a plain-bottleneck ablation at the same stride.
    let mut tape = Tape::<f64>::new();
    let st = positive(&store);
    let d1 = tape.leaf(Tensor::full(&[1, 16, 16, 16], 1.0), true);
    let levels = net.parse_features(&mut tape, &st, d1).unwrap();
    let mut w = vec![0.0; tape.value(levels[1]).len()];
    w[4 * 8 + 4] = 1.0;
    let l = tape.weighted_sum(levels[1], &w).unwrap();
    let g = tape.backward(l).unwrap();
    let g = g.wrt(d1).unwrap();
    let cols: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).map(|i| i % 16).collect();
    let dilated = cols.iter().max().unwrap() - cols.iter().min().unwrap() + 1;

    let plain = Bottleneck::new("ablation", BottleneckConfig::new(16, 16, 2, 1)).unwrap();
    let mut ps = ParamStore::new();
    plain.init(&mut ps, &mut ChaCha8Rng::seed_from_u64(8));
    let plain_width = footprint(&plain, &positive(&ps));
    assert_eq!((dilated, plain_width), (9, 3));
}

#[test]
fn zero_logits_give_log_k_plus_one() {
    let cfg = MtlConfig::default();
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(Tensor::zeros(&[2, 5, 64, 64]));
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let gts: Vec<GroundTruth> = (0..2)
        .map(|_| GroundTruth {
            objects: vec![],
            mask: (0..64 * 64).map(|_| rand::Rng::random_range(&mut r, 0..5u8)).collect(),
        })
        .collect();
    let l = segmentation_loss(&mut tape, &cfg, logits, &gts).unwrap();
    assert!((tape.value(l).data()[0] - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn saturated_seg_logits_give_tiny_loss() {
    let cfg = MtlConfig::default();
    let mask: Vec<u8> = (0..64 * 64).map(|i| (i % 5) as u8).collect();
    let mut t = Tensor::<f64>::zeros(&[1, 5, 64, 64]);
    for (s, &c) in mask.iter().enumerate() {
        t.data_mut()[c as usize * 4096 + s] = 20.0;
    }
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(t);
    let gts = [GroundTruth {
        objects: vec![],
        mask,
    }];
    let l = segmentation_loss(&mut tape, &cfg, logits, &gts).unwrap();
    assert!(tape.value(l).data()[0] < 1e-8);
}

#[test]
fn single_level_identity_preserves_argmax() {
    let cfg = MtlConfig {
        fused_channels: 8,
        seg_channels: 5,
        ..MtlConfig::default()
    };
    let (net, mut store) = net_with(cfg, 9);
    let k1 = 5;
    for (name, t) in store.iter_mut() {
        if name.starts_with(SEGMENT_PREFIX) {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    // Level 1 lateral copies channels 0..5; the output conv passes them through.
    let lat = store.get_mut("seg.lateral1.weight").unwrap();
    for c in 0..k1 {
        lat.data_mut()[c * 8 + c] = 1.0;
    }
    let out = store.get_mut("seg.out.weight").unwrap();
    let in_ch = 5 * 5;
    for c in 0..k1 {
        out.data_mut()[((c * in_ch + c) * 3 + 1) * 3 + 1] = 1.0;
    }
    let level1 = Tensor::randn(&[1, 8, 16, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(10));
    let mut tape = Tape::new();
    let pyr: Vec<_> = [16, 8, 4, 2, 1]
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if i == 0 {
                tape.constant(level1.clone())
            } else {
                tape.constant(Tensor::randn(&[1, 8, s, s], 1.0, &mut ChaCha8Rng::seed_from_u64(i as u64)))
            }
        })
        .collect();
    let logits = net.segment_logits(&mut tape, &store, &pyr).unwrap();
    assert_eq!(tape.value(logits).shape(), &[1, 5, 64, 64]);
    let got = seg_argmax(tape.value(logits)).unwrap().remove(0);
    assert_eq!((got.height, got.width), (64, 64));

    let first: Vec<f32> = level1.data()[..k1 * 256].to_vec();
    let expect = resize_oracle(&Tensor::new(&[1, k1, 16, 16], first).unwrap(), 64, 64);
    let expect = seg_argmax(&expect).unwrap().remove(0);
    assert_eq!(got, expect);
}

#[test]
fn matching_guarantees_a_positive_per_object() {
    let cfg = MtlConfig::default();
    let anchors = AnchorSet::for_config(&cfg).unwrap();
    // Elongated box: IoU < 0.5 with every square anchor.
    let obj = GtObject {
        class_id: 2,
        bbox: BBox::new(0.5, 0.5, 0.6, 0.1),
    };
    assert!(anchors.boxes.iter().all(|a| a.iou(&obj.bbox) < 0.5));
    let m = match_anchors(&anchors, &gt_with(vec![obj], 64), 0.5);
    assert_eq!(m.positives, 1);
    let j = m.labels.iter().position(|&l| l == 2).unwrap();
    let back = BBox::decode(m.offsets[j], &anchors.boxes[j]);
    assert!((back.w - 0.6).abs() < 1e-5 && (back.cy - 0.5).abs() < 1e-6);

    let exact = GtObject {
        class_id: 1,
        bbox: anchors.boxes[10],
    };
    let m = match_anchors(&anchors, &gt_with(vec![exact], 64), 0.5);
    assert_eq!(m.labels[10], 1);
    assert_eq!(m.offsets[10], [0.0; 4]);
}

#[test]
fn mining_picks_hardest_negatives() {
    let labels = [0, 1, 0, 0, 0, 0, 0, 0, 0];
    let loss = [0.1, 9.0, 0.5, 0.5, 0.2, 0.9, 0.0, 0.3, 0.4];
    let mined = mine_negatives(&labels, &loss, 1, 3);
    let picked: Vec<usize> = (0..9).filter(|&j| mined[j]).collect();
    assert_eq!(picked, vec![2, 3, 5]);
    // Zero positives still mine ratio·1 negatives.
    let none = mine_negatives(&[0; 9], &loss, 0, 3);
    assert_eq!(none.iter().filter(|&&m| m).count(), 3);
}

#[test]
fn zero_positives_give_zero_box_loss() {
    let cfg = small_cfg();
    let (net, store) = net_with(cfg.clone(), 11);
    let anchors = AnchorSet::for_config(&cfg).unwrap();
    let mut tape = Tape::new();
    let img = tape.constant(Tensor::randn(&[1, 3, 32, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(12)));
    let out = net.forward(&mut tape, &store, img).unwrap();
    let gts = [gt_with(vec![], 32)];
    let (cls, bbox) = detection_loss(&mut tape, &cfg, &anchors, &out, &gts).unwrap();
    assert_eq!(tape.value(bbox).data()[0], 0.0);

    // L_cls = sum of the 3 largest background losses (normalizer max(0, 1) = 1).
    let k1 = cfg.num_classes + 1;
    let mut bg = Vec::new();
    for o in &out.det {
        let p = crate::tensor::softmax_values(tape.value(o.cls), k1).unwrap();
        let (_, c, h, w) = p.dims4().unwrap();
        for g in 0..c / k1 {
            for s in 0..h * w {
                bg.push(-(p.data()[(g * k1) * h * w + s] as f64).ln());
            }
        }
    }
    bg.sort_by(|a, b| b.total_cmp(a));
    let expect: f64 = bg[..3].iter().sum();
    let got = tape.value(cls).data()[0] as f64;
    assert!((got - expect).abs() < 1e-4 * expect.max(1.0), "{got} vs {expect}");
}

fn sample_gts(size: usize, n: usize, seed: u64) -> Vec<GroundTruth> {
    use rand::Rng;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| GroundTruth {
            objects: (0..2)
                .map(|_| GtObject {
                    class_id: r.random_range(1..=2),
                    bbox: BBox::new(
                        r.random_range(0.3..0.7),
                        r.random_range(0.3..0.7),
                        r.random_range(0.2..0.5),
                        r.random_range(0.2..0.5),
                    ),
                })
                .collect(),
            mask: (0..size * size).map(|_| r.random_range(0..3u8)).collect(),
        })
        .collect()
}

#[test]
fn total_is_sum_of_components() {
    let cfg = MtlConfig {
        num_classes: 2,
        ..small_cfg()
    };
    let (net, store) = net_with(cfg.clone(), 13);
    let anchors = AnchorSet::for_config(&cfg).unwrap();
    let images = Tensor::randn(&[2, 3, 32, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(14));
    let gts = sample_gts(32, 2, 15);
    let run = |tasks| {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let out = net.forward(&mut tape, &store, x).unwrap();
        mtl_loss(&mut tape, &cfg, &anchors, &out, &gts, tasks).unwrap().values(&tape)
    };
    let joint = run(TaskSet::BOTH);
    let det = run(TaskSet::DETECTION);
    let seg = run(TaskSet::SEGMENTATION);
    assert!((det.total - (det.cls + det.bbox)).abs() < 1e-5 * det.total);
    assert_eq!(seg.total, seg.seg);
    assert!(det.bbox > 0.0);
    assert!((joint.total - (det.total + seg.total)).abs() < 1e-5 * joint.total);
}

#[test]
fn end_to_end_gradient_check() {
    let cfg = MtlConfig {
        image_size: 8,
        fused_channels: 4,
        pyramid_depth: 2,
        num_classes: 2,
        anchor_scales: vec![1.0],
        backbone_widths: [2, 3, 3, 4, 4],
        seg_channels: 2,
        ..MtlConfig::default()
    };
    let net = MtlNet::build(cfg.clone()).unwrap();
    let mut store = ParamStore::new();
    net.init(&mut store, &mut ChaCha8Rng::seed_from_u64(16));
    let mut store = store.cast::<f64>();
    // Positive biases keep the ReLUs away from their kinks.
    for (name, t) in store.iter_mut() {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v += 0.3);
        }
    }
    let anchors = AnchorSet {
        boxes: vec![
            BBox::new(0.25, 0.25, 0.5, 0.5),
            BBox::new(0.75, 0.25, 0.5, 0.5),
            BBox::new(0.25, 0.75, 0.5, 0.5),
            BBox::new(0.75, 0.75, 0.5, 0.5),
            BBox::new(0.5, 0.5, 1.0, 1.0),
        ],
        level_offsets: vec![0, 4],
    };
    let images = Tensor::<f64>::randn(&[2, 3, 8, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(17));
    let gts = sample_gts(8, 2, 18);
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let err = grad_check_params(&store, &names, 1e-6, Some(3), |t, st| {
        let x = t.constant(images.clone());
        let out = net.forward(t, st, x)?;
        Ok(mtl_loss(t, &cfg, &anchors, &out, &gts, TaskSet::BOTH)?.total)
    });
    assert!(err < 1e-3, "{err}");
}

#[test]
fn predictions_are_sorted_and_bounded() {
    let cfg = small_cfg();
    let (net, store) = net_with(cfg.clone(), 19);
    let anchors = AnchorSet::for_config(&cfg).unwrap();
    let images = Tensor::randn(&[2, 3, 32, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(20));
    let preds = net.predict(&store, &anchors, &images).unwrap();
    assert_eq!(preds.len(), 2);
    for p in &preds {
        assert_eq!(p.mask.classes.len(), 32 * 32);
        assert!(p.detections.len() <= cfg.max_detections);
        for w in p.detections.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for d in &p.detections {
            assert!((0.0..=1.0).contains(&d.score) && d.bbox.w > 0.0 && d.bbox.h > 0.0);
            assert!((1..=cfg.num_classes).contains(&d.class_id));
        }
    }
    let d1 = net.features(&store, &images).unwrap();
    assert_eq!(net.predict_from_features(&store, &anchors, &d1).unwrap(), preds);
}
