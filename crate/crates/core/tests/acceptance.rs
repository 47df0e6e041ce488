//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers (visible under --nocapture). Every tolerance is
//! pinned here, in code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fpaenet_core::boxes::{decode_boxes, encode_boxes, iou, AnchorBox, BoxXYWH};
use fpaenet_core::checkpoint;
use fpaenet_core::config::ModelConfig;
use fpaenet_core::data::split_ids;
use fpaenet_core::eval::{
    average_precision, mean_ap, nms, Detection, Interpolation, MatchedDetection,
};
use fpaenet_core::loss::focal_loss;
use fpaenet_core::model::FpaeNet;
use fpaenet_core::neck::{Neck, NeckConfig};
use fpaenet_core::pyramid::FeaturePyramid;
use fpaenet_core::tensor::adam::Adam;
use fpaenet_core::tensor::init::Initializer;
use fpaenet_core::tensor::{ops, Tensor};
use fpaenet_core::trainer::{evaluate, synthesize_dataset, train};
use fpaenet_core::verify::run_full_suite;

fn pass(name: &str, detail: String) {
    println!("[PASS] {name}: {detail}");
}

// ---------------------------------------------------------------------------
// Gradient suite: every op and a sampled end-to-end loss vs central finite
// differences, max rel err <= 1e-3 (f64, h = 1e-4); the fault-injected
// negative control must fail; whole suite within 60 s.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_gradient_suite() {
    let start = std::time::Instant::now();
    let entries = run_full_suite(42).expect("suite runs");
    let mut worst = 0.0f64;
    for e in &entries {
        assert!(
            e.passed,
            "[FAIL] gradient-suite: {} max rel err {} vs tol {} (expect_fail={})",
            e.name, e.report.max_rel_err, e.tolerance, e.expect_fail
        );
        if !e.expect_fail {
            worst = worst.max(e.report.max_rel_err);
        }
    }
    let negative = entries
        .iter()
        .find(|e| e.expect_fail)
        .expect("negative control present");
    assert!(negative.report.max_rel_err >= 0.1);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= 60.0, "[FAIL] gradient-suite took {elapsed:.1}s");
    pass(
        "gradient-suite",
        format!(
            "{} checks, worst max rel err {worst:.2e}, negative control {:.2e}, {elapsed:.1}s",
            entries.len(),
            negative.report.max_rel_err
        ),
    );
}

// ---------------------------------------------------------------------------
// Top-down recursion oracle: identity laterals on a hand-built two-level
// pyramid match the hand-unrolled closed form exactly.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_top_down_recursion_oracle() {
    let identity = |c: usize| {
        let mut w = vec![0.0f64; c * c];
        for i in 0..c {
            w[i * c + i] = 1.0;
        }
        fpaenet_core::layers::Conv2d {
            weight: Tensor::from_vec(w, &[c, c, 1, 1]).unwrap(),
            bias: Tensor::zeros(&[c]),
            stride: 1,
            padding: 0,
        }
    };
    for (a, b) in [(3.25f64, -1.5f64), (0.0, 7.0), (-2.0, -4.0)] {
        let coarse = Tensor::from_vec(vec![a], &[1, 1, 1, 1]).unwrap();
        let fine = Tensor::from_vec(vec![b; 4], &[1, 1, 2, 2]).unwrap();
        let p = FeaturePyramid::new(vec![fine, coarse]).unwrap();
        let out = Neck::top_down_pass(&p, &[identity(1), identity(1)]).unwrap();
        assert_eq!(out.levels()[1].data(), &[a], "[FAIL] coarse level");
        assert_eq!(out.levels()[0].data(), &[b + a; 4], "[FAIL] fine level");
    }
    pass(
        "top-down-recursion-oracle",
        "hand-unrolled two-level closed form matched exactly".to_string(),
    );
}

// ---------------------------------------------------------------------------
// Attention invariants on 100 random inputs: weights positive and summing
// to 1 within 1e-6; attention-off equals uniform 1/B within 1e-6; a
// saturated logit concentrates the output within 1e-3 of the single branch.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_attention_invariants() {
    let cfg = NeckConfig {
        channels: 8,
        ..NeckConfig::default()
    };
    let mut init = Initializer::new(3);
    let neck = Neck::<f64>::new(&cfg, &mut init).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut min_w = f64::INFINITY;
    let mut worst_sum = 0.0f64;
    let mut worst_uniform = 0.0f64;
    for _ in 0..100 {
        let data: Vec<f64> = (0..8 * 36).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let h = Tensor::from_vec(data, &[1, 8, 6, 6]).unwrap();
        let (_, w) = neck.enhance(&h, true).unwrap();
        let sum: f64 = w.data().iter().sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
        min_w = min_w.min(w.data().iter().copied().fold(f64::INFINITY, f64::min));
        assert!(w.data().iter().all(|&v| v > 0.0), "[FAIL] nonpositive weight");
        assert!((sum - 1.0).abs() <= 1e-6, "[FAIL] weight sum {sum}");

        let (out_off, w_off) = neck.enhance(&h, false).unwrap();
        for &v in w_off.data() {
            assert!((v - 1.0 / 3.0).abs() <= 1e-6, "[FAIL] uniform weight {v}");
        }
        let branches: Vec<Tensor<f64>> = (0..3)
            .map(|i| neck_branch_forward(&neck, i, &h))
            .collect();
        for (i, &v) in out_off.data().iter().enumerate() {
            let manual = h.data()[i]
                + (branches[0].data()[i] + branches[1].data()[i] + branches[2].data()[i]) / 3.0;
            worst_uniform = worst_uniform.max((v - manual).abs());
            assert!((v - manual).abs() <= 1e-6, "[FAIL] uniform fusion off by {}", v - manual);
        }
    }

    // saturated logits: softmax([10,-10,-10]) leaks only ~exp(-20)
    let data: Vec<f64> = (0..8 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h = Tensor::from_vec(data, &[1, 8, 4, 4]).unwrap();
    let branches: Vec<Tensor<f64>> = (0..3).map(|i| neck_branch_forward(&neck, i, &h)).collect();
    let w = ops::softmax1d(&Tensor::from_vec(vec![10.0, -10.0, -10.0], &[3]).unwrap()).unwrap();
    let fused = ops::residual_weighted_sum(&h, &branches, &w).unwrap();
    let mut worst_sat = 0.0f64;
    for (i, &v) in fused.data().iter().enumerate() {
        let dominant = h.data()[i] + branches[0].data()[i];
        worst_sat = worst_sat.max((v - dominant).abs());
    }
    assert!(worst_sat <= 1e-3, "[FAIL] saturated-branch deviation {worst_sat}");
    pass(
        "attention-invariants",
        format!(
            "100 inputs: min weight {min_w:.3e}, worst |sum-1| {worst_sum:.2e}, worst uniform dev {worst_uniform:.2e}, saturated dev {worst_sat:.2e}"
        ),
    );
}

fn neck_branch_forward(neck: &Neck<f64>, idx: usize, h: &Tensor<f64>) -> Tensor<f64> {
    let convs = neck.branch_convs().expect("branches built");
    convs[idx].forward(h).unwrap()
}

// ---------------------------------------------------------------------------
// Toggle structure: the three ablation rows build, train one step, and
// carry strictly increasing parameter counts; with enhancement off the
// output ignores branch parameters bitwise.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_toggle_structure() {
    let mut base = ModelConfig::default();
    base.backbone.input_size = 64;
    base.backbone.stem_channels = 4;
    base.backbone.blocks_per_stage = 1;
    base.backbone.channels = 8;
    base.neck.channels = 8;
    base.heads.subnet_depth = 1;
    base.data.count = 4;
    base.data.contrast_min = 0.5;
    base.data.contrast_max = 0.8;
    base.optim.epochs = 1;
    base.optim.adam.lr = 1e-3;

    let samples = synthesize_dataset::<f32>(&base).unwrap();
    let mut counts = Vec::new();
    for cfg in base.ablation_rows() {
        let mut model = FpaeNet::<f32>::new(&cfg).unwrap();
        counts.push(model.parameter_elements());
        let mut adam = Adam::new(cfg.optim.adam);
        let batch: Vec<&_> = samples.iter().take(2).collect();
        let breakdown = model.loss_batch(&batch).unwrap();
        breakdown.total.backward().unwrap();
        let mut params = Vec::new();
        model.collect_params(&mut params);
        adam.step(&mut params).unwrap();
    }
    assert!(
        counts[0] < counts[1] && counts[1] < counts[2],
        "[FAIL] parameter counts not strictly increasing: {counts:?}"
    );

    // enhancement-off independence from branch parameters
    let mut init = Initializer::new(5);
    let cfg = NeckConfig {
        channels: 8,
        ..NeckConfig::default()
    };
    let mut neck = Neck::<f32>::new(&cfg, &mut init).unwrap();
    let off = NeckConfig {
        enhancement: false,
        attention: false,
        ..cfg
    };
    let levels: Vec<Tensor<f32>> = [16usize, 8, 4, 2, 1]
        .iter()
        .map(|&s| Tensor::filled(&[1, 8, s, s], 0.25))
        .collect();
    let p = FeaturePyramid::new(levels).unwrap();
    let before = neck.forward_with(&p, &off).unwrap();
    neck.scramble_branches(42.0);
    let after = neck.forward_with(&p, &off).unwrap();
    for (a, b) in before.levels().iter().zip(after.levels()) {
        assert_eq!(a.data(), b.data(), "[FAIL] branch params leaked into output");
    }
    pass(
        "toggle-structure",
        format!("rows trained one step; parameters {counts:?} strictly increase; enhancement-off bitwise independent"),
    );
}

// ---------------------------------------------------------------------------
// Metric oracles: IoU vs rasterized pixel counting (1000 pairs, 1e-3, and
// the 1/7 fixture); NMS vs brute-force greedy (500 random sets of <= 8);
// AP vs envelope enumeration to 1e-9 including the 5/6 fixture; mAP == AP_1
// for a single class.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_metric_oracles() {
    // rasterized IoU oracle on a 1/8-unit grid; all box edges are snapped
    // to 1/4 units so cell membership is exact
    let raster_iou = |a: &BoxXYWH, b: &BoxXYWH| -> f64 {
        let res = 8.0;
        let x0 = (a.x.min(b.x) * res).floor() as i64 - 1;
        let x1 = ((a.x_max().max(b.x_max())) * res).ceil() as i64 + 1;
        let y0 = (a.y.min(b.y) * res).floor() as i64 - 1;
        let y1 = ((a.y_max().max(b.y_max())) * res).ceil() as i64 + 1;
        let mut inter = 0u64;
        let mut union = 0u64;
        for cy in y0..y1 {
            for cx in x0..x1 {
                let (px, py) = ((cx as f64 + 0.5) / res, (cy as f64 + 0.5) / res);
                let in_a = px > a.x && px < a.x_max() && py > a.y && py < a.y_max();
                let in_b = px > b.x && px < b.x_max() && py > b.y && py < b.y_max();
                if in_a && in_b {
                    inter += 1;
                }
                if in_a || in_b {
                    union += 1;
                }
            }
        }
        inter as f64 / union as f64
    };

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let snap = |v: f64| (v * 4.0).round() / 4.0;
    let mut worst_iou = 0.0f64;
    for _ in 0..1000 {
        let a = BoxXYWH::new(
            snap(rng.gen_range(0.0..20.0)),
            snap(rng.gen_range(0.0..20.0)),
            snap(rng.gen_range(0.5..12.0)).max(0.25),
            snap(rng.gen_range(0.5..12.0)).max(0.25),
        );
        let b = BoxXYWH::new(
            snap(rng.gen_range(0.0..20.0)),
            snap(rng.gen_range(0.0..20.0)),
            snap(rng.gen_range(0.5..12.0)).max(0.25),
            snap(rng.gen_range(0.5..12.0)).max(0.25),
        );
        let got = iou(&a, &b).unwrap();
        let want = raster_iou(&a, &b);
        worst_iou = worst_iou.max((got - want).abs());
        assert!(
            (got - want).abs() <= 1e-3,
            "[FAIL] iou {got} vs raster {want} for {a:?} {b:?}"
        );
    }
    let fixture = iou(
        &BoxXYWH::new(0.0, 0.0, 2.0, 2.0),
        &BoxXYWH::new(1.0, 1.0, 2.0, 2.0),
    )
    .unwrap();
    assert!((fixture - 1.0 / 7.0).abs() <= 1e-12, "[FAIL] 1/7 fixture: {fixture}");
    let fixture_raster = raster_iou(
        &BoxXYWH::new(0.0, 0.0, 2.0, 2.0),
        &BoxXYWH::new(1.0, 1.0, 2.0, 2.0),
    );
    assert!((fixture_raster - 1.0 / 7.0).abs() <= 1e-3);

    // NMS vs literal greedy enumeration
    let greedy_oracle = |dets: &[Detection], thr: f64| -> Vec<usize> {
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&i, &j| {
            dets[j]
                .score
                .total_cmp(&dets[i].score)
                .then(dets[i].anchor_id.cmp(&dets[j].anchor_id))
        });
        let mut kept: Vec<usize> = Vec::new();
        for &i in &order {
            if kept
                .iter()
                .all(|&k| iou(&dets[i].bbox, &dets[k].bbox).unwrap() < thr)
            {
                kept.push(i);
            }
        }
        kept
    };
    for trial in 0..500 {
        let n = rng.gen_range(0..=8);
        let dets: Vec<Detection> = (0..n)
            .map(|i| Detection {
                bbox: BoxXYWH::new(
                    rng.gen_range(0.0..20.0),
                    rng.gen_range(0.0..20.0),
                    rng.gen_range(0.5..8.0),
                    rng.gen_range(0.5..8.0),
                ),
                score: rng.gen_range(0.0..1.0),
                class_id: 0,
                image_id: 0,
                anchor_id: i,
            })
            .collect();
        let kept: Vec<usize> = nms(&dets, 0.5).unwrap().iter().map(|d| d.anchor_id).collect();
        let want: Vec<usize> = greedy_oracle(&dets, 0.5)
            .into_iter()
            .map(|i| dets[i].anchor_id)
            .collect();
        assert_eq!(kept, want, "[FAIL] nms trial {trial}");
    }

    // AP vs brute-force envelope enumeration
    let ap_oracle = |seq: &[(f64, bool)], gt: usize| -> f64 {
        let mut ranks = Vec::new();
        let mut tp = 0.0;
        for (i, &(_, t)) in seq.iter().enumerate() {
            if t {
                tp += 1.0;
            }
            ranks.push((tp / gt as f64, tp / (i + 1) as f64));
        }
        let mut area = 0.0;
        let mut prev = 0.0;
        for &(r, _) in &ranks {
            if r > prev {
                let best = ranks
                    .iter()
                    .filter(|(rr, _)| *rr >= r)
                    .map(|(_, p)| *p)
                    .fold(0.0f64, f64::max);
                area += (r - prev) * best;
                prev = r;
            }
        }
        area
    };
    let as_matches = |seq: &[(f64, bool)]| -> Vec<MatchedDetection> {
        seq.iter()
            .enumerate()
            .map(|(i, &(score, true_positive))| MatchedDetection {
                score,
                image_id: 0,
                anchor_id: i,
                true_positive,
            })
            .collect()
    };
    let fixture = [(0.9, true), (0.8, false), (0.7, true)];
    let got = average_precision(&as_matches(&fixture), 2, Interpolation::AllPoints)
        .unwrap()
        .ap;
    assert!((got - 5.0 / 6.0).abs() <= 1e-9, "[FAIL] 5/6 fixture: {got}");
    let mut worst_ap = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..=10);
        let gt = rng.gen_range(1..=5);
        let mut tp_left = gt;
        let mut seq: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let t = tp_left > 0 && rng.gen_bool(0.5);
                if t {
                    tp_left -= 1;
                }
                (rng.gen_range(0.0..1.0), t)
            })
            .collect();
        seq.sort_by(|a, b| b.0.total_cmp(&a.0));
        let got = average_precision(&as_matches(&seq), gt, Interpolation::AllPoints)
            .unwrap()
            .ap;
        let want = ap_oracle(&seq, gt);
        worst_ap = worst_ap.max((got - want).abs());
        assert!((got - want).abs() <= 1e-9, "[FAIL] ap {got} vs oracle {want}");
    }

    // single-class mean
    let ap1 = 0.731;
    assert_eq!(mean_ap(&[ap1]).unwrap(), ap1, "[FAIL] mAP != AP_1 at K=1");

    pass(
        "metric-oracles",
        format!(
            "iou worst dev {worst_iou:.2e} over 1000 pairs (fixture 1/7 ok); nms == greedy on 500 sets; ap worst dev {worst_ap:.2e} (fixture 5/6 ok); mAP==AP_1"
        ),
    );
}

// ---------------------------------------------------------------------------
// Loss reductions: focal(gamma=0, alpha=0.5) == 0.5 * BCE within 1e-9;
// encode/decode round-trip within 1e-6 over 1000 random pairs.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_loss_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_focal = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(1..=16);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let labels: Vec<i8> = (0..n).map(|_| [1i8, 0, -1][rng.gen_range(0..3)]).collect();
        let norm = rng.gen_range(1.0..4.0);
        let fl = focal_loss(
            &Tensor::from_vec(logits.clone(), &[n]).unwrap(),
            &labels,
            0.5,
            0.0,
            norm,
        )
        .unwrap()
        .item();
        let mut bce = 0.0;
        for (&x, &l) in logits.iter().zip(&labels) {
            let p = 1.0 / (1.0 + (-x).exp());
            match l {
                1 => bce += -(p.ln()),
                0 => bce += -((1.0 - p).ln()),
                _ => {}
            }
        }
        bce /= norm;
        worst_focal = worst_focal.max((fl - 0.5 * bce).abs());
        assert!(
            (fl - 0.5 * bce).abs() <= 1e-9,
            "[FAIL] focal {fl} vs half-bce {}",
            0.5 * bce
        );
    }

    let mut worst_rt = 0.0f64;
    for _ in 0..1000 {
        let anchor = AnchorBox {
            cx: rng.gen_range(8.0..120.0),
            cy: rng.gen_range(8.0..120.0),
            w: rng.gen_range(4.0..48.0),
            h: rng.gen_range(4.0..48.0),
            level: 0,
            id: 0,
        };
        let gt = BoxXYWH::new(
            rng.gen_range(0.0..96.0),
            rng.gen_range(0.0..96.0),
            rng.gen_range(1.0..32.0),
            rng.gen_range(1.0..32.0),
        );
        let deltas = encode_boxes(&gt, &anchor).unwrap();
        let back = decode_boxes(&anchor, deltas, 128.0);
        for (got, want) in [(back.x, gt.x), (back.y, gt.y), (back.w, gt.w), (back.h, gt.h)] {
            worst_rt = worst_rt.max((got - want).abs());
            assert!((got - want).abs() <= 1e-6, "[FAIL] round trip {got} vs {want}");
        }
    }
    pass(
        "loss-reductions",
        format!("focal vs half-BCE worst dev {worst_focal:.2e}; encode/decode worst dev {worst_rt:.2e} over 1000 pairs"),
    );
}

// ---------------------------------------------------------------------------
// Overfit sanity: the full-toggle desk model on 20 easy synthetic images,
// 2000 steps at lr 1e-3, reaches training-set mAP@0.5 >= 0.8 inside 15
// minutes, fully seeded; final loss sits under 10% of the initial loss.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_overfit_sanity() {
    let cfg = ModelConfig::overfit_preset();
    assert!(cfg.neck.second_channel && cfg.neck.enhancement && cfg.neck.attention);
    let start = std::time::Instant::now();
    let all = synthesize_dataset::<f32>(&cfg).unwrap();
    let ids: Vec<String> = all.iter().map(|s| s.id.clone()).collect();
    let (train_ids, _) = split_ids(&ids, cfg.data.test_fraction, cfg.seed).unwrap();
    let train_set: Vec<_> = all
        .into_iter()
        .filter(|s| train_ids.contains(&s.id))
        .collect();
    assert_eq!(train_set.len(), 20, "[FAIL] preset must train on 20 images");

    let mut model = FpaeNet::<f32>::new(&cfg).unwrap();
    let mut adam = Adam::new(cfg.optim.adam);
    let record = train(&mut model, &mut adam, &train_set, None).unwrap();
    assert_eq!(record.losses.len(), 2000, "[FAIL] preset must run 2000 steps");
    let (first, last) = (record.losses[0], *record.losses.last().unwrap());
    assert!(
        last < 0.1 * first,
        "[FAIL] final loss {last} is not under 10% of initial {first}"
    );

    let report = evaluate(&model, &train_set).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        report.map >= 0.8,
        "[FAIL] training-set mAP {} below 0.8",
        report.map
    );
    assert!(elapsed <= 900.0, "[FAIL] overfit took {elapsed:.0}s > 15 min");
    pass(
        "overfit-sanity",
        format!(
            "2000 steps, loss {first:.3} -> {last:.4}, train mAP@0.5 {:.4}, {elapsed:.0}s",
            report.map
        ),
    );
}

// ---------------------------------------------------------------------------
// Protocol echo: a run under the default protocol constants records
// lr 1e-5, batch 2, epochs 10, IoU threshold 0.5, test fraction 1019/6012.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_protocol_echo() {
    let mut cfg = ModelConfig::default();
    // shrink only the dataset so the run finishes quickly; every protocol
    // constant stays at its default
    cfg.data.count = 12;
    cfg.data.contrast_min = 0.5;
    cfg.data.contrast_max = 0.8;

    let all = synthesize_dataset::<f32>(&cfg).unwrap();
    let ids: Vec<String> = all.iter().map(|s| s.id.clone()).collect();
    let (train_ids, _) = split_ids(&ids, cfg.data.test_fraction, cfg.seed).unwrap();
    let train_set: Vec<_> = all
        .into_iter()
        .filter(|s| train_ids.contains(&s.id))
        .collect();
    let mut model = FpaeNet::<f32>::new(&cfg).unwrap();
    let mut adam = Adam::new(cfg.optim.adam);
    let record = train(&mut model, &mut adam, &train_set, None).unwrap();

    for line in [
        "optim.lr=0.00001",
        "optim.batch_size=2",
        "optim.epochs=10",
        "eval.iou_threshold=0.5",
    ] {
        assert!(
            record.config_echo.contains(line),
            "[FAIL] run record echo missing `{line}`"
        );
    }
    let parsed = ModelConfig::from_text(&record.config_echo).unwrap();
    assert_eq!(parsed.optim.adam.lr, 1e-5);
    assert_eq!(parsed.optim.batch_size, 2);
    assert_eq!(parsed.optim.epochs, 10);
    assert_eq!(parsed.eval.iou_threshold, 0.5) ;
    assert!(
        (parsed.data.test_fraction - 1019.0 / 6012.0).abs() < 1e-12,
        "[FAIL] test fraction {}",
        parsed.data.test_fraction
    );
    pass(
        "protocol-echo",
        format!(
            "run record echoes lr=1e-5, batch=2, epochs=10, IoU=0.5, test fraction {:.6}",
            parsed.data.test_fraction
        ),
    );
}

// ---------------------------------------------------------------------------
// Determinism: two identical (config, seed) runs produce bitwise-identical
// checkpoints and evaluation reports.
// ---------------------------------------------------------------------------
#[test]
fn acceptance_determinism() {
    let mut cfg = ModelConfig::default();
    cfg.backbone.input_size = 64;
    cfg.backbone.stem_channels = 4;
    cfg.backbone.blocks_per_stage = 1;
    cfg.backbone.channels = 8;
    cfg.neck.channels = 8;
    cfg.heads.subnet_depth = 1;
    cfg.data.count = 8;
    cfg.data.contrast_min = 0.5;
    cfg.data.contrast_max = 0.8;
    cfg.optim.epochs = 3;
    cfg.optim.adam.lr = 1e-3;
    cfg.seed = 12345;

    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| -> (Vec<u8>, String) {
        let samples = synthesize_dataset::<f32>(&cfg).unwrap();
        let mut model = FpaeNet::<f32>::new(&cfg).unwrap();
        let mut adam = Adam::new(cfg.optim.adam);
        train(&mut model, &mut adam, &samples, None).unwrap();
        let path = dir.path().join(format!("{tag}.fpae"));
        checkpoint::save(&path, &mut model, &adam).unwrap();
        let report = evaluate(&model, &samples).unwrap();
        (std::fs::read(&path).unwrap(), report.to_json())
    };
    let (ckpt_a, report_a) = run("a");
    let (ckpt_b, report_b) = run("b");
    assert_eq!(ckpt_a, ckpt_b, "[FAIL] checkpoints differ between identical runs");
    assert_eq!(report_a, report_b, "[FAIL] eval reports differ between identical runs");

    // and a restored checkpoint reproduces the report bit for bit
    let path = dir.path().join("a.fpae");
    let (restored, _) = checkpoint::restore::<f32>(&path, Some(&cfg)).unwrap();
    let samples = synthesize_dataset::<f32>(&cfg).unwrap();
    let report_c = evaluate(&restored, &samples).unwrap().to_json();
    assert_eq!(report_a, report_c, "[FAIL] restored checkpoint evaluates differently");
    pass(
        "determinism",
        format!(
            "checkpoints ({} bytes) and eval reports ({} chars) bitwise identical; restore reproduces the report",
            ckpt_a.len(),
            report_a.len()
        ),
    );
}
