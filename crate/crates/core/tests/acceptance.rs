//! Acceptance checks, one per criterion. Prints a PASS/FAIL line for each and
//! exits nonzero when any fails.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use cxrnet::corpus::{self, ClassWeights, ImageRecord, Label, Projection, Sensor, Sex, Source};
use cxrnet::evalkit::{self, Factor};
use cxrnet::explain::grad_cam_volume;
use cxrnet::imgproc::{fit_side, normalize_volume, GrayImage, LungMask, Volume, ZScoreParams};
use cxrnet::lungseg::{bounding_square, preprocess, preprocess_detailed, HeuristicSegmenter, PreprocessMode};
use cxrnet::model::{
    accuracy, build_network, train, train_with_validator, weighted_ce, weighted_ce_batch, weighted_ce_logit_grad,
    ClassProbs, LabeledImage, Mode, Network, NetworkConfig, TrainConfig,
};
use cxrnet::nn::Parameterized;
use cxrnet::phantom::{self, generate_set, PhantomConfig, PhantomGenerator};

fn random_label(rng: &mut impl Rng) -> Label {
    Label::from_index(rng.random_range(0..3)).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// 1. Metrics against a per-record recount.
fn metric_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for set in 0..500 {
        let n = rng.random_range(1..=50);
        let truth: Vec<Label> = (0..n).map(|_| random_label(&mut rng)).collect();
        let preds: Vec<Label> = (0..n).map(|_| random_label(&mut rng)).collect();
        let report = evalkit::metrics(&evalkit::confusion(&preds, &truth).unwrap()).unwrap();

        let mut recalls = [0.0; 3];
        for label in Label::ALL {
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (p, t) in preds.iter().zip(&truth) {
                match (*p == label, *t == label) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            // Undefined ratios are reported as 0.
            let ppv = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
            let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64 };
            recalls[label.index()] = recall;
            let got = &report.classes[label.index()];
            assert!(close(got.ppv, ppv, 1e-12), "set {set} {label}: ppv {} vs {ppv}", got.ppv);
            assert!(close(got.recall, recall, 1e-12), "set {set} {label}: recall {} vs {recall}", got.recall);
            assert!(close(got.f1, f1, 1e-12), "set {set} {label}: f1 {} vs {f1}", got.f1);
        }
        let hits = preds.iter().zip(&truth).filter(|(p, t)| p == t).count();
        let acc = hits as f64 / n as f64;
        let bacc = (recalls[0] + recalls[1] + recalls[2]) / 3.0;
        let gmr = if recalls.contains(&0.0) { 0.0 } else { (recalls.iter().map(|r| r.ln()).sum::<f64>() / 3.0).exp() };
        assert!(close(report.accuracy, acc, 1e-12), "set {set}: acc");
        assert!(close(report.balanced_accuracy, bacc, 1e-12), "set {set}: bacc");
        assert!(close(report.gmr, gmr, 1e-12), "set {set}: gmr {} vs {gmr}", report.gmr);
    }
    assert!(start.elapsed() < Duration::from_secs(10), "took {:?}", start.elapsed());
}

// 2. AUC against the pairwise Mann-Whitney count.
fn auc_equals_mann_whitney() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for set in 0..200 {
        let n = rng.random_range(2..=30);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect();
        let mut positives: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        positives[0] = true;
        positives[1] = false;
        let mut twice_wins = 0u64;
        let (mut p, mut q) = (0u64, 0u64);
        for i in 0..n {
            if positives[i] {
                p += 1;
            } else {
                q += 1;
            }
            for j in 0..n {
                if positives[i] && !positives[j] {
                    twice_wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        let oracle = twice_wins as f64 / (2 * p * q) as f64;
        let auc = evalkit::roc_auc_scores(&scores, &positives).unwrap().auc;
        assert_eq!(auc, oracle, "set {set}");
    }
    assert!(start.elapsed() < Duration::from_secs(10), "took {:?}", start.elapsed());
}

// 3. Bounding square against the brute-force extent.
fn bounding_square_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for case in 0..1000 {
        let (w, h) = (rng.random_range(1..=48), rng.random_range(1..=48));
        let density = rng.random_range(0.001..0.3);
        let mut mask = LungMask::from_fn(w, h, |_, _| rng.random_bool(density));
        mask.set(rng.random_range(0..h), rng.random_range(0..w), true);
        let (mut top, mut bottom, mut left, mut right) = (usize::MAX, 0, usize::MAX, 0);
        for r in 0..h {
            for c in 0..w {
                if mask.get(r, c) {
                    top = top.min(r);
                    bottom = bottom.max(r);
                    left = left.min(c);
                    right = right.max(c);
                }
            }
        }
        let sq = bounding_square(&mask).unwrap();
        assert_eq!(sq.side, (bottom - top + 1).max(right - left + 1), "case {case}: side");
        assert_eq!(sq.center_row, (top + bottom) as f64 / 2.0, "case {case}: row");
        assert_eq!(sq.center_col, (left + right) as f64 / 2.0, "case {case}: col");
    }
    assert!(bounding_square(&LungMask::empty(5, 5)).is_err());
}

// 4. Segment mode: zero outside the dilated mask, flat histogram inside.
fn segment_mode_pipeline() {
    let gen = PhantomGenerator::new(PhantomConfig::default());
    let seg = HeuristicSegmenter::default();
    let critical = ChiSquared::new(15.0).unwrap().inverse_cdf(0.999);
    let mut tested = 0;
    for i in 0..50u64 {
        let ph = gen.generate(Label::from_index(i as usize % 3).unwrap(), 4000 + i);
        let out = preprocess_detailed(&ph.image, PreprocessMode::Segment, &seg).unwrap();
        let mask = out.mask.as_ref().unwrap();
        let (w, h) = (mask.width(), mask.height());
        assert_eq!((out.image.width(), out.image.height()), (w, h));
        let dilated = LungMask::from_fn(w, h, |r, c| {
            let rows = r.saturating_sub(2)..=(r + 2).min(h - 1);
            rows.into_iter().any(|rr| (c.saturating_sub(2)..=(c + 2).min(w - 1)).any(|cc| mask.get(rr, cc)))
        });
        let mut buckets = [0u64; 16];
        for r in 0..h {
            for c in 0..w {
                let v = out.image.get(r, c);
                if dilated.get(r, c) {
                    buckets[(v >> 12) as usize] += 1;
                } else {
                    assert_eq!(v, 0, "phantom {i}: pixel ({r}, {c}) outside the dilated mask");
                }
            }
        }
        let n: u64 = buckets.iter().sum();
        if n >= 10_000 {
            let expected = n as f64 / 16.0;
            let chi2: f64 = buckets.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
            assert!(chi2 < critical, "phantom {i}: chi-square {chi2:.2} >= {critical:.2}");
            tested += 1;
        }
    }
    assert!(tested >= 40, "only {tested} phantoms had masks of at least 10,000 pixels");
}

// 5. Class weights for the reference corpus counts.
fn reference_class_weights() {
    let counts = [45022usize, 21707, 7716];
    let w = ClassWeights::from_counts(counts).unwrap();
    let total: f64 = counts.iter().zip(w.0).map(|(&n, w)| n as f64 * w).sum();
    assert!(close(total, 74445.0, 1e-9), "weighted total {total}");
    let expected = [0.5511, 1.1431, 3.2157];
    for (c, (&got, want)) in w.0.iter().zip(expected).enumerate() {
        assert!(close(got, want, 1e-4), "class {c}: weight {got:.6}, expected {want} (diff {:.1e})", (got - want).abs());
    }
}

// 6. Weighted cross-entropy.
fn weighted_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let ones = ClassWeights([1.0; 3]);
    for _ in 0..200 {
        let batch: Vec<(ClassProbs, Label)> = (0..rng.random_range(1..20))
            .map(|_| {
                let raw: [f64; 3] = [rng.random_range(0.01..1.0), rng.random_range(0.01..1.0), rng.random_range(0.01..1.0)];
                let s: f64 = raw.iter().sum();
                (ClassProbs(raw.map(|v| v / s)), random_label(&mut rng))
            })
            .collect();
        let plain = batch.iter().map(|(p, l)| -p.0[l.index()].ln()).sum::<f64>() / batch.len() as f64;
        assert!(close(weighted_ce_batch(&batch, &ones), plain, 1e-9));
        let (p, l) = &batch[0];
        let mut w = ClassWeights([rng.random_range(0.1..4.0), rng.random_range(0.1..4.0), rng.random_range(0.1..4.0)]);
        let base = weighted_ce(p, *l, &w);
        w.0[l.index()] *= 2.0;
        assert_eq!(weighted_ce(p, *l, &w), 2.0 * base);
    }
    let half = ClassProbs([0.5, 0.25, 0.25]);
    assert!(close(weighted_ce(&half, Label::Control, &ones), 0.6931, 1e-4));
}

// 7. Analytic gradients against central differences on a miniature network.
fn gradient_check() {
    let start = Instant::now();
    let cfg = NetworkConfig {
        backbone_channels: vec![3, 4],
        dense_sizes: [6, 5],
        dropout_rate: 0.3,
        num_classes: 3,
        input_side: 8,
        in_channels: 3,
    };
    let mut net = build_network(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let weights = ClassWeights([0.7, 1.3, 2.1]);
    let x = Volume::from_vec(3, 8, 8, (0..192).map(|_| rng.random_range(-1.5..1.5)).collect());
    let label = Label::Pneumonia;
    let loss = |n: &Network| weighted_ce(&n.forward(&x, Mode::Eval).unwrap().probs, label, &weights);

    let trace = net.forward(&x, Mode::Eval).unwrap();
    let dlogits = weighted_ce_logit_grad(&trace.probs, label, &weights);
    let mut grads = net.zero_grads();
    net.backward(&trace, &dlogits, &mut grads);

    let step = 1e-4;
    let (mut ok, mut total) = (0usize, 0usize);
    for (slot, g) in grads.0.iter().enumerate() {
        for i in 0..g.len() {
            let orig = net.params()[slot][i];
            net.params_mut()[slot][i] = orig + step;
            let up = loss(&net);
            net.params_mut()[slot][i] = orig - step;
            let down = loss(&net);
            net.params_mut()[slot][i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = g[i];
            let scale = analytic.abs().max(numeric.abs());
            if scale < 1e-8 || (analytic - numeric).abs() <= 1e-3 * scale {
                ok += 1;
            }
            total += 1;
        }
    }
    let frac = ok as f64 / total as f64;
    assert!(frac >= 0.95, "{ok}/{total} parameters within tolerance");
    assert!(start.elapsed() < Duration::from_secs(60), "took {:?}", start.elapsed());
}

fn phantom_inputs(per_class: usize, seed: u64, side: usize) -> Vec<LabeledImage> {
    let seg = HeuristicSegmenter::default();
    generate_set(per_class, seed, &PhantomConfig::default())
        .into_iter()
        .map(|(rec, p)| LabeledImage {
            image: fit_side(&preprocess(&p.image, PreprocessMode::Segment, &seg).unwrap(), side),
            label: rec.label,
        })
        .collect()
}

// 8. Overfitting 60 phantoms with the default training configuration.
fn overfit_sanity() {
    let net_cfg = NetworkConfig::compact();
    let data = phantom_inputs(20, 8, net_cfg.input_side);
    let cfg = TrainConfig::default();
    let start = Instant::now();
    let net = build_network(&net_cfg, 8).unwrap();
    let (net, history) = train(net, &data, &data, &cfg).unwrap();
    let elapsed = start.elapsed();
    let acc = accuracy(&net, &data, &cfg.zscore).unwrap();
    assert_eq!(history.epochs.len(), 24);
    assert!(acc >= 0.95, "train accuracy {acc:.3} after 24 epochs at lr {:e}", cfg.learning_rate);
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
}

// 9. Plateau schedule under a frozen validation loss.
fn plateau_schedule() {
    let net_cfg = NetworkConfig {
        backbone_channels: vec![2],
        dense_sizes: [4, 4],
        dropout_rate: 0.3,
        num_classes: 3,
        input_side: 8,
        in_channels: 3,
    };
    let data: Vec<LabeledImage> = (0..9)
        .map(|i| LabeledImage { image: GrayImage::filled(8, 8, 5000 * i as u16), label: Label::from_index(i % 3).unwrap() })
        .collect();
    let cfg = TrainConfig { epochs: 14, batch_size: 4, ..TrainConfig::default() };
    let net = build_network(&net_cfg, 9).unwrap();
    let (_, history) = train_with_validator(net, &data, &cfg, |_| Ok(0.75)).unwrap();
    let lrs = history.learning_rates();
    let base = cfg.learning_rate;
    // The first epoch sets the best loss; every `patience` stale epochs after it halve the rate.
    let expected: Vec<f64> = (0..14).map(|e: usize| base * 0.5f64.powi((e.saturating_sub(1) / 3) as i32)).collect();
    assert_eq!(lrs, expected);
    assert_eq!(lrs[7], 2e-5 * 0.25);
}

fn square_image(rng: &mut ChaCha8Rng, side: usize, square: Option<(usize, usize, usize)>) -> GrayImage {
    let noise = Normal::new(0.0, 3000.0).unwrap();
    GrayImage::from_fn(side, side, |r, c| {
        let inside = square.is_some_and(|(r0, c0, s)| (r0..r0 + s).contains(&r) && (c0..c0 + s).contains(&c));
        let base: f64 = if inside { 48000.0 } else { 16000.0 };
        (base + noise.sample(rng)).clamp(0.0, 65535.0) as u16
    })
}

// 10. Grad-CAM.
fn grad_cam_contract() {
    let toy = NetworkConfig {
        backbone_channels: vec![3],
        dense_sizes: [4, 4],
        dropout_rate: 0.5,
        num_classes: 3,
        input_side: 8,
        in_channels: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let x = Volume::from_vec(3, 8, 8, (0..192).map(|_| rng.random_range(-1.0..1.0)).collect());

    let mut zero_head = build_network(&toy, 1).unwrap();
    zero_head.dense_layers_mut()[2].weight.fill(0.0);
    for target in Label::ALL {
        let cam = grad_cam_volume(&zero_head, &x, target).unwrap();
        assert!(cam.heatmap.values.iter().all(|&v| v == 0.0), "zero head gave a nonzero map");
    }

    // Target logit = sum of channel 0 of the final feature map.
    let mut single = build_network(&toy, 2).unwrap();
    let plane = single.config().feature_len() / 3;
    for d in single.dense_layers_mut() {
        d.weight.fill(0.0);
        d.bias.fill(0.0);
    }
    let dense = single.dense_layers_mut();
    dense[0].weight[..plane].fill(1.0);
    dense[1].weight[0] = 1.0;
    dense[2].weight[2 * 4] = 1.0;
    let cam = grad_cam_volume(&single, &x, Label::Covid19).unwrap();
    let act = single.forward(&x, Mode::Eval).unwrap().features;
    let a0 = act.plane(0);
    let (k, _) = a0.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    assert!(a0[k] > 0.0);
    let ratio = cam.raw[k] / a0[k];
    for (r, a) in cam.raw.iter().zip(a0) {
        assert!((r - ratio * a).abs() <= 1e-6 * (ratio * a).abs().max(1e-12), "raw map not proportional");
    }

    // A classifier trained to spot a bright square should look at it.
    let side = 32;
    let s = 12;
    let net_cfg = NetworkConfig {
        backbone_channels: vec![8, 16],
        dense_sizes: [16, 8],
        dropout_rate: 0.0,
        num_classes: 3,
        input_side: side,
        in_channels: 3,
    };
    let place = |rng: &mut ChaCha8Rng| (rng.random_range(0..=side - s), rng.random_range(0..=side - s), s);
    let data: Vec<LabeledImage> = (0..60)
        .map(|i| {
            if i % 2 == 0 {
                let sq = place(&mut rng);
                LabeledImage { image: square_image(&mut rng, side, Some(sq)), label: Label::Covid19 }
            } else {
                LabeledImage { image: square_image(&mut rng, side, None), label: Label::Control }
            }
        })
        .collect();
    let cfg = TrainConfig { learning_rate: 1e-3, epochs: 12, batch_size: 8, augment_classes: vec![], ..TrainConfig::default() };
    let probes: Vec<(GrayImage, (usize, usize))> = (0..20)
        .map(|_| {
            let (r0, c0, _) = place(&mut rng);
            (square_image(&mut rng, side, Some((r0, c0, s))), (r0, c0))
        })
        .collect();
    // Median over independently initialized networks.
    let mut shares: Vec<f64> = (10..15)
        .map(|init| {
            let (net, _) = train(build_network(&net_cfg, init).unwrap(), &data, &data, &cfg).unwrap();
            let acc = accuracy(&net, &data, &cfg.zscore).unwrap();
            assert!(acc >= 0.9, "square discriminator {init} reached only {acc:.3}");
            let (mut inside_mass, mut total_mass) = (0.0, 0.0);
            for (img, (r0, c0)) in &probes {
                let cam = grad_cam_volume(&net, &normalize_volume(img, &ZScoreParams::IMAGENET), Label::Covid19).unwrap();
                let mut order: Vec<usize> = (0..side * side).collect();
                order.sort_by(|&a, &b| cam.heatmap.values[b].total_cmp(&cam.heatmap.values[a]));
                for &i in &order[..side * side / 10] {
                    let (r, c) = (i / side, i % side);
                    let v = cam.heatmap.values[i];
                    total_mass += v;
                    if (*r0..r0 + s).contains(&r) && (*c0..c0 + s).contains(&c) {
                        inside_mass += v;
                    }
                }
            }
            inside_mass / total_mass
        })
        .collect();
    shares.sort_by(f64::total_cmp);
    let share = shares[shares.len() / 2];
    assert!(share >= 0.7, "median top-decile heat inside the square {:.1}% ({shares:.3?})", 100.0 * share);
}

// 11. Folds on the phantom corpus.
fn fold_contract() {
    let records = phantom::corpus_records(Path::new("."), 30, 11, &PhantomConfig::default());
    let counts = corpus::class_counts(&records);
    for disjoint in [true, false] {
        let folds = corpus::make_folds(&records, 5, 42, disjoint).unwrap();
        assert_eq!(folds.len(), 5);
        assert_eq!(folds, corpus::make_folds(&records, 5, 42, disjoint).unwrap());
        assert_eq!(
            corpus::folds_to_json(&folds).unwrap(),
            corpus::folds_to_json(&corpus::make_folds(&records, 5, 42, disjoint).unwrap()).unwrap()
        );
        let all: BTreeSet<&str> = records.iter().map(|r| r.record_id.as_str()).collect();
        for (i, f) in folds.iter().enumerate() {
            assert_eq!(f.fold_index, i);
            for label in Label::ALL {
                let n = records.iter().filter(|r| r.label == label && f.test_ids.contains(&r.record_id)).count();
                let target = 0.1 * counts[label.index()] as f64;
                assert!((n as f64 - target).abs() <= 1.0, "fold {i} {label}: {n} test records, target {target}");
            }
            assert!(f.train_ids.is_disjoint(&f.test_ids));
            let union: BTreeSet<&str> = f.train_ids.iter().chain(&f.test_ids).map(String::as_str).collect();
            assert_eq!(union, all);
            for g in &folds[i + 1..] {
                assert!(f.test_ids.is_disjoint(&g.test_ids), "folds {i} and {} share test records", g.fold_index);
            }
            if disjoint {
                let patients = |ids: &BTreeSet<String>| -> BTreeSet<&str> {
                    records.iter().filter(|r| ids.contains(&r.record_id)).map(|r| r.patient_id.as_str()).collect()
                };
                assert!(patients(&f.train_ids).is_disjoint(&patients(&f.test_ids)), "fold {i} shares a patient");
            }
        }
    }
}

fn record(i: usize, projection: Projection, sensor: Sensor, sex: Sex, source: Source) -> ImageRecord {
    ImageRecord {
        record_id: format!("r{i:04}"),
        image_path: format!("r{i:04}.png").into(),
        label: Label::Covid19,
        patient_id: format!("p{i:04}"),
        source,
        projection,
        sensor,
        sex,
        age: None,
    }
}

// 12. Subgroup report.
fn subgroup_report_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let records: Vec<ImageRecord> = (0..300)
        .map(|i| {
            record(
                i,
                if rng.random_bool(0.79) { Projection::AP } else { Projection::PA },
                if rng.random_bool(0.22) { Sensor::DX } else { Sensor::CR },
                if rng.random_bool(0.64) { Sex::M } else { Sex::F },
                [Source::BIMCV, Source::HM, Source::ACT][rng.random_range(0..3)],
            )
        })
        .collect();
    let refs: Vec<&ImageRecord> = records.iter().collect();
    let truth: Vec<Label> = records.iter().map(|r| r.label).collect();
    let noisy: Vec<Label> =
        truth.iter().map(|&t| if rng.random_bool(0.2) { Label::Pneumonia } else { t }).collect();

    let mut experiments = Vec::new();
    for (name, preds) in [("exp1", &truth), ("exp2", &noisy)] {
        let mut tables = Vec::new();
        for factor in Factor::ALL {
            let t = evalkit::subgroup_report(preds, &truth, &refs, factor, Some(Label::Covid19)).unwrap();
            let test_sum: f64 = t.rows.iter().map(|r| r.test_pct).sum();
            let hit_sum: f64 = t.rows.iter().map(|r| r.hits_pct).sum();
            assert!((test_sum - 100.0).abs() <= 0.2 && (hit_sum - 100.0).abs() <= 0.2, "{factor}: columns do not sum to 100");
            if name == "exp1" {
                for r in &t.rows {
                    assert_eq!(r.hits_pct, r.test_pct, "{factor} {}", r.level);
                }
            }
            tables.push(t);
        }
        experiments.push((name.to_string(), tables));
    }
    let mut buf = Vec::new();
    evalkit::write_subgroup_csv(&mut buf, &experiments).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "factor,level,test_pct,hits_exp1,hits_exp2");
    let layout: Vec<(String, String)> = lines[1..]
        .iter()
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            assert_eq!(cells.len(), 5);
            assert!(cells[2..].iter().all(|c| c.split_once('.').is_some_and(|(_, d)| d.len() == 1)));
            (cells[0].to_string(), cells[1].to_string())
        })
        .collect();
    let want = [
        ("Projection", "AP"),
        ("Projection", "PA"),
        ("Sensor", "CR"),
        ("Sensor", "DX"),
        ("Sex", "M"),
        ("Sex", "F"),
        ("DB", "HM"),
        ("DB", "BIMCV"),
        ("DB", "ACT"),
    ];
    assert_eq!(layout, want.map(|(a, b)| (a.to_string(), b.to_string())));
}

// 13. Two runs with the same seed.
fn end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let status = Command::new(env!("CARGO_BIN_EXE_cxrnet"))
        .args(["make-phantoms", "--per-class", "8", "--side", "96", "--seed", "13", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());
    let cfg = r#"{"manifest": "data/manifest.csv", "folds": 3, "seed": 13,
        "network": {"backbone_channels": [4, 8], "dense_sizes": [16, 8], "dropout_rate": 0.3, "num_classes": 3, "input_side": 32},
        "train": {"epochs": 3, "batch_size": 4, "learning_rate": 0.001},
        "tsne": {"perplexity": 2, "iterations": 250}}"#;
    fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    for out in ["a", "b"] {
        let status = Command::new(env!("CARGO_BIN_EXE_cxrnet"))
            .args(["run", "--config"])
            .arg(dir.path().join("cfg.json"))
            .arg("--out")
            .arg(dir.path().join(out))
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success(), "run {out} failed");
    }
    let read = |run: &str, file: &str| fs::read(dir.path().join(run).join(file)).unwrap();
    let mut files = vec!["folds.json".to_string(), "metrics.json".to_string(), "predictions/all.csv".to_string()];
    files.extend((0..3).map(|k| format!("predictions/fold_{k}.csv")));
    for f in &files {
        assert_eq!(read("a", f), read("b", f), "{f} differs between runs");
    }
}

fn main() {
    let criteria: [(&str, fn()); 13] = [
        ("1 metric-oracle equivalence", metric_oracle_equivalence),
        ("2 AUC equals Mann-Whitney", auc_equals_mann_whitney),
        ("3 bounding square oracle", bounding_square_oracle),
        ("4 segment-mode pipeline", segment_mode_pipeline),
        ("5 reference class weights", reference_class_weights),
        ("6 weighted loss", weighted_loss),
        ("7 gradient check", gradient_check),
        ("8 overfit sanity", overfit_sanity),
        ("9 plateau schedule", plateau_schedule),
        ("10 Grad-CAM", grad_cam_contract),
        ("11 fold contract", fold_contract),
        ("12 subgroup report", subgroup_report_contract),
        ("13 end-to-end determinism", end_to_end_determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.split(' ').next() == Some(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS criterion {name} ({secs:.1}s)"),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL criterion {name} ({secs:.1}s): {msg}");
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        println!("{} criteria failed: {}", failed.len(), failed.join("; "));
        std::process::exit(1);
    }
}
