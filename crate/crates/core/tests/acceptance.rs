//! Acceptance criteria 1-13, one PASS/FAIL line each. Pass criterion
//! numbers as arguments to run a subset.

mod support;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use mtfer_core::checkpoint::{self, from_bytes, to_bytes};
use mtfer_core::data::{load_rafdb, DatasetSplit, LabeledExample, RafdbLayout, RafdbPaths};
use mtfer_core::heads::Head;
use mtfer_core::layers::softmax;
use mtfer_core::loss::{cce_index, LossWeights};
use mtfer_core::model::ModelConfig;
use mtfer_core::preprocess::{pose_normalize, write_pnm, EyePair, PreprocessConfig, RawImage};
use mtfer_core::synthetic::{generate, SyntheticConfig};
use mtfer_core::train::{
    batch_gradients, evaluate, metrics_csv, train, CallbackState, StopReason, TrainConfig, TrainHistory,
};
use mtfer_core::{Error, Model, Rng, Tensor};
use support::{gradient_suite, oracle_suite, small_config, without_dropout};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(u32, &str, bool, Check); 13] = [
        (1, "reference-figures-statement", true, c01_reference_figures),
        (2, "gradient-integrity", true, c02_gradients),
        (3, "oracle-equivalence", true, c03_oracles),
        (4, "softmax-head-contract", true, c04_softmax),
        (5, "loss-weight-linearity", true, c05_loss_linearity),
        (6, "masking-fer-mode", true, c06_masking),
        (7, "overfit-smoke", true, c07_overfit),
        (8, "callback-state-machine", true, c08_callbacks),
        (9, "pose-normalization-cap", true, c09_pose_cap),
        (10, "label-encoding-golden", true, c10_label_golden),
        (11, "determinism", true, c11_determinism),
        (12, "checkpoint-round-trip", true, c12_checkpoint),
        (13, "multi-task-benefit (non-gating)", false, c13_multitask_benefit),
    ];
    let wanted: BTreeSet<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, gating, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {verdict} {name} [{:.1}s] {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if gating && !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn c01_reference_figures() -> Outcome {
    // Published RAF-DB validation figures; recorded for context only. The
    // remaining criteria stand in for them at desk scale.
    let single_task_emotion = 0.4538;
    let multi_task = [0.7926, 0.7832, 0.8610, 0.7476];
    let consistent = multi_task.iter().all(|v| (0.0..=1.0).contains(v)) && multi_task[0] > single_task_emotion;
    outcome(
        consistent,
        format!(
            "reference emotion {single_task_emotion} single-task vs {} multi-task, gender {}, race {}, age {}: not reproduced at this scale, properties 2-13 substitute",
            multi_task[0], multi_task[1], multi_task[2], multi_task[3]
        ),
    )
}

fn c02_gradients() -> Outcome {
    let start = Instant::now();
    let reports = gradient_suite(2024);
    let secs = start.elapsed().as_secs_f64();
    let pass = reports.iter().all(|r| r.passed()) && secs < 60.0;
    let detail = reports
        .iter()
        .map(|r| format!("{}={:.1e}", r.kind, r.worst))
        .collect::<Vec<_>>()
        .join(" ");
    outcome(pass, format!("{} configs/kind, worst rel err {detail}, {secs:.1}s", support::CONFIGS_PER_KIND))
}

fn c03_oracles() -> Outcome {
    let worst = oracle_suite(7, 60);
    let pass = worst.iter().all(|(_, w)| *w <= 1e-12);
    let detail = worst.iter().map(|(k, w)| format!("{k}={w:.1e}")).collect::<Vec<_>>().join(" ");
    outcome(pass, format!("60 instances/kind, max abs diff {detail}"))
}

fn c04_softmax() -> Outcome {
    let mut rng = Rng::new(4);
    let mut worst_sum: f64 = 0.0;
    for seed in 0..3 {
        let model = Model::build(&small_config(seed)).unwrap();
        for _ in 0..5 {
            let image = rng.uniform(&[50, 50, 1], 0.0, 1.0).unwrap();
            let out = model.infer(&image).unwrap();
            for h in Head::ALL {
                worst_sum = worst_sum.max((out.get(h).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let mut worst_shift: f64 = 0.0;
    for _ in 0..200 {
        let n = 2 + rng.below(7);
        let z = rng.uniform(&[n], -10.0, 10.0).unwrap();
        let c = rng.uniform(&[1], -50.0, 50.0).unwrap().data()[0];
        let shifted = Tensor::from_vec(z.data().iter().map(|v| v + c).collect());
        let (a, b) = (softmax(&z).unwrap(), softmax(&shifted).unwrap());
        worst_sum = worst_sum.max((a.data().iter().sum::<f64>() - 1.0).abs());
        worst_shift = worst_shift.max(support::max_abs_diff(&a, &b));
    }
    outcome(
        worst_sum <= 1e-6 && worst_shift <= 1e-12,
        format!("max |Σp−1| {worst_sum:.1e}, max shift deviation {worst_shift:.1e}"),
    )
}

fn synthetic(count: usize, seed: u64, emotion_only: bool) -> Vec<LabeledExample> {
    generate(&SyntheticConfig {
        count,
        seed,
        emotion_only,
        ..Default::default()
    })
    .unwrap()
}

fn c05_loss_linearity() -> Outcome {
    let model = Model::build(&without_dropout(small_config(5))).unwrap();
    let data = synthetic(12, 5, false);
    let batch: Vec<&LabeledExample> = data.iter().collect();
    let seeds: Vec<u64> = (0..batch.len() as u64).collect();
    let w = LossWeights::default();

    // independent per-head means from inference-mode probabilities
    let mut sums = [0.0; 4];
    for e in &data {
        let out = model.infer(&e.image).unwrap();
        for h in Head::ALL {
            sums[h.index()] += cce_index(out.get(h), e.label(h).unwrap());
        }
    }
    let l = sums.map(|s| s / data.len() as f64);
    let expected = 2.0 * l[0] + 4.0 * l[3] + 1.5 * l[2] + 0.1 * l[1];
    let step = batch_gradients(&model, &batch, &seeds, &w, false).unwrap();
    let total_err = (step.total_loss - expected).abs();

    let mut scale_exact = true;
    let mut scale_close = true;
    for c in [0.5, 2.0, 8.0, 3.0] {
        let scaled = batch_gradients(&model, &batch, &seeds, &w.scaled(c), false).unwrap().total_loss;
        if c == 3.0 {
            scale_close &= (scaled - c * step.total_loss).abs() <= 1e-12 * scaled.abs();
        } else {
            scale_exact &= scaled == c * step.total_loss;
        }
    }

    let zeroed = LossWeights { gender: 0.0, age: 0.0, ..w };
    let g = batch_gradients(&model, &batch, &seeds, &zeroed, false).unwrap().gradients;
    let mut bit_zero = true;
    for h in [Head::Gender, Head::Age] {
        for i in model.head_parameter_indices(h) {
            bit_zero &= g.tensors[i].data().iter().all(|v| v.to_bits() == 0);
        }
    }
    // the recorded history total obeys the same identity
    let cfg = TrainConfig {
        max_epochs: 1,
        batch_size: 6,
        deterministic: true,
        ..Default::default()
    };
    let split = DatasetSplit { train: data.clone(), validation: data.clone(), seed: 0 };
    let (_, hist) = train(model.clone(), &split, &cfg).unwrap();
    let rec = &hist.epochs[0];
    let mut record_err: f64 = 0.0;
    for m in [&rec.train, &rec.validation] {
        let loss = |h: Head| m.get(h).loss.unwrap();
        let sum = 2.0 * loss(Head::Emotion) + 4.0 * loss(Head::Age) + 1.5 * loss(Head::Race) + 0.1 * loss(Head::Gender);
        record_err = record_err.max((m.total_loss - sum).abs());
    }
    outcome(
        total_err <= 1e-9 && record_err <= 1e-9 && scale_exact && scale_close && bit_zero,
        format!(
            "|total − Σw·L| {total_err:.1e} (history {record_err:.1e}), scaling exact for powers of two: {scale_exact}, c=3 within 1e-12: {scale_close}, zero-weight head grads bit-zero: {bit_zero}"
        ),
    )
}

fn head_bits(model: &Model, head: Head) -> Vec<u64> {
    model
        .head_parameter_indices(head)
        .iter()
        .flat_map(|&i| model.parameters()[i].1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

fn c06_masking() -> Outcome {
    let data = synthetic(40, 6, true);
    let split = mtfer_core::data::split(data, 0.9, 6).unwrap();
    let model = Model::build(&small_config(6)).unwrap();
    let aux = [Head::Gender, Head::Race, Head::Age];
    let before: Vec<Vec<u64>> = aux.iter().map(|&h| head_bits(&model, h)).collect();
    let emo_before = head_bits(&model, Head::Emotion);
    let cfg = TrainConfig {
        max_epochs: 3,
        batch_size: 8,
        deterministic: true,
        early_stop: mtfer_core::train::EarlyStopConfig {
            restore_best: false,
            ..Default::default()
        },
        ..Default::default()
    };
    let (trained, hist) = train(model, &split, &cfg).unwrap();
    let after: Vec<Vec<u64>> = aux.iter().map(|&h| head_bits(&trained, h)).collect();
    let emotion_moved = head_bits(&trained, Head::Emotion) != emo_before;
    let na = hist.epochs.iter().all(|r| aux.iter().all(|&h| r.validation.get(h).accuracy.is_none()));
    outcome(
        before == after && emotion_moved && na,
        format!(
            "{} epochs on emotion-only data: auxiliary heads bit-identical {}, emotion head updated {emotion_moved}, auxiliary metrics N/A {na}",
            hist.epochs.len(),
            before == after
        ),
    )
}

fn overfit_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        initial_lr: 1e-3,
        batch_size: 16,
        max_epochs: 300,
        deterministic: true,
        ..Default::default()
    };
    cfg.plateau.patience = 300;
    cfg.early_stop.patience = 300;
    cfg.early_stop.restore_best = false;
    cfg
}

fn c07_overfit() -> Outcome {
    let start = Instant::now();
    let data = synthetic(64, 7, false);
    let split = DatasetSplit { train: data.clone(), validation: data.clone(), seed: 7 };
    let model = Model::build(&small_config(7)).unwrap();
    let (trained, hist) = train(model, &split, &overfit_config()).unwrap();
    let m = evaluate(&trained, &data, &LossWeights::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let accs: Vec<f64> = Head::ALL.iter().map(|&h| m.get(h).accuracy.unwrap()).collect();
    let pass = accs.iter().all(|&a| a >= 0.95) && m.total_loss < 0.1 && hist.epochs.len() <= 300 && secs < 300.0;
    outcome(
        pass,
        format!(
            "{} epochs, inference-mode train accuracy {:?}, total loss {:.4}, {secs:.0}s",
            hist.epochs.len(),
            accs,
            m.total_loss
        ),
    )
}

fn c08_callbacks() -> Outcome {
    // lr ladder: one improvement, then stagnation forever
    let mut cfg = TrainConfig::default();
    cfg.early_stop.patience = 1000;
    let probe = Model::build(&small_config(0)).unwrap();
    let mut cb = CallbackState::new(&cfg);
    let mut ladder = vec![cb.current_lr()];
    let mut stop = None;
    for epoch in 1..=100 {
        let r = cb.on_epoch_end(epoch, if epoch == 1 { 0.5 } else { 0.4 }, &probe);
        if *ladder.last().unwrap() != cb.current_lr() {
            ladder.push(cb.current_lr());
        }
        if let Some(r) = r {
            stop = Some((r, epoch));
            break;
        }
    }
    let expected = [3e-4, 6e-5, 1.2e-5, 2.4e-6];
    let ladder_ok = ladder.len() == 4
        && ladder.iter().zip(expected).enumerate().all(|(k, (&lr, e))| {
            lr == 3e-4 * 0.2f64.powi(k as i32) && (lr - e).abs() <= 1e-15 * e
        });
    let floor_ok = stop == Some((StopReason::LrFloor, 21));

    // scripted early stop: [0.50, 0.55, 0.54, then 12 non-improving]
    let cfg = TrainConfig::default();
    let mut cb = CallbackState::new(&cfg);
    let models: Vec<Model> = (0..20).map(|s| Model::build(&small_config(100 + s)).unwrap()).collect();
    let mut script = vec![0.50, 0.55, 0.54];
    script.extend([0.55; 12]);
    let mut es_stop = None;
    for (i, &v) in script.iter().enumerate() {
        if let Some(r) = cb.on_epoch_end(i + 1, v, &models[i]) {
            es_stop = Some((r, i + 1));
            break;
        }
    }
    let mut final_model = models[es_stop.map_or(0, |(_, e)| e - 1)].clone();
    cb.finish(StopReason::EarlyStop, &mut final_model).unwrap();
    let scripted_ok = es_stop == Some((StopReason::EarlyStop, 14))
        && final_model.parameters() == models[1].parameters()
        && cb.early_stop.best_metric() == Some(0.55);

    // real run: the restored model re-evaluates to the best monitor value
    let data = synthetic(150, 8, false);
    let split = mtfer_core::data::split(data, 0.9, 8).unwrap();
    let mut cfg = TrainConfig {
        initial_lr: 2e-3,
        batch_size: 16,
        max_epochs: 40,
        deterministic: true,
        ..Default::default()
    };
    cfg.early_stop.patience = 4;
    cfg.plateau.patience = 2;
    let (trained, hist) = train(Model::build(&small_config(8)).unwrap(), &split, &cfg).unwrap();
    let re = evaluate(&trained, &split.validation, &cfg.loss_weights).unwrap();
    let best = hist.best_metric.unwrap();
    let max_seen = hist
        .epochs
        .iter()
        .map(|r| r.validation.get(Head::Emotion).accuracy.unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let lrs_ok = hist.epochs.windows(2).all(|w| w[1].lr <= w[0].lr)
        && hist.epochs.iter().all(|r| {
            (0..40).any(|k| r.lr == cfg.initial_lr * 0.2f64.powi(k))
        });
    let restore_ok = re.get(Head::Emotion).accuracy == Some(best) && best == max_seen;
    outcome(
        ladder_ok && floor_ok && scripted_ok && restore_ok && lrs_ok,
        format!(
            "ladder {ladder:?} then {stop:?}; scripted early stop {es_stop:?} restored epoch-2 weights: {scripted_ok}; real run stop {} after {} epochs, best {best} at epoch {:?}, re-evaluated {:?}",
            hist.stop_reason,
            hist.epochs.len(),
            hist.best_epoch,
            re.get(Head::Emotion).accuracy
        ),
    )
}

fn c09_pose_cap() -> Outcome {
    let cfg = PreprocessConfig::default();
    let mut rng = Rng::new(9);
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    let mut rejected_ok = true;
    for _ in 0..2000 {
        let (w, h) = (8 + rng.below(40), 8 + rng.below(40));
        let img = RawImage::gray(w, h, (0..w * h).map(|_| rng.below(256) as u8).collect()).unwrap();
        let mut coord = |n: usize| -2.0 + (n as f64 + 4.0) * rng.next_f64();
        let (x1, y1, x2, y2) = (coord(w), coord(h), coord(w), coord(h));
        // mostly ordered pairs; every tenth keeps the raw order
        let eyes = if x1 <= x2 || rng.below(10) == 0 {
            EyePair::new(x1, y1, x2, y2)
        } else {
            EyePair::new(x2, y1, x1, y2)
        };
        match pose_normalize(&img, &eyes, &cfg) {
            Ok(a) => {
                accepted += 1;
                worst = worst.max(a.applied_deg.abs());
            }
            Err(e) => rejected_ok &= matches!(e, Error::Landmark(_)),
        }
    }
    let mut identity = true;
    for _ in 0..200 {
        let (w, h, ch) = (4 + rng.below(40), 4 + rng.below(40), [1, 3][rng.below(2)]);
        let img = RawImage::new(w, h, ch, (0..w * h * ch).map(|_| rng.below(256) as u8).collect()).unwrap();
        let y = rng.below(h) as f64 + 0.25;
        let lx = rng.below(w / 2) as f64;
        let eyes = EyePair::new(lx, y, lx + 1.0 + rng.below(w / 2) as f64, y);
        let a = pose_normalize(&img, &eyes, &cfg).unwrap();
        identity &= a.applied_deg == 0.0 && a.image == img;
    }
    outcome(
        worst <= 10.0 && rejected_ok && identity && accepted > 500,
        format!("{accepted}/2000 fuzzed pairs accepted, max |applied| {worst:.4}°, other pairs rejected as landmark errors: {rejected_ok}; 200 level pairs bit-unchanged: {identity}"),
    )
}

fn c10_label_golden() -> Outcome {
    let expected: [Vec<f64>; 4] = [
        vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0, 0.0],
    ];
    let names = [
        Head::Emotion.class_names()[0],
        Head::Gender.class_names()[0],
        Head::Race.class_names()[0],
        Head::Age.class_names()[0],
    ];
    let names_ok = names == ["surprise", "male", "Caucasian", "0-3"];

    // through the RAF-DB ingestion path: code 1, attributes 0/0/0
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let paths = RafdbPaths {
        image_dir: root.join("img"),
        emotion_labels: root.join("labels.txt"),
        attribute_dir: root.join("attr"),
        landmarks: None,
    };
    std::fs::create_dir_all(&paths.image_dir).unwrap();
    std::fs::create_dir_all(&paths.attribute_dir).unwrap();
    std::fs::write(&paths.emotion_labels, "train_00001.jpg 1\n").unwrap();
    std::fs::write(
        paths.attribute_dir.join("train_00001_manu_attri.txt"),
        "10\t20\n30\t20\n25\t30\n15\t40\n35\t40\n0\n0\n0\n",
    )
    .unwrap();
    write_pnm(&RawImage::gray(4, 4, vec![128; 16]).unwrap(), paths.image_dir.join("train_00001.pgm")).unwrap();
    let ingested = load_rafdb(&paths, &RafdbLayout::default(), &PreprocessConfig::default()).unwrap();
    let encoded = ingested.examples[0].one_hot_labels().map(|v| v.unwrap());
    outcome(
        encoded == expected && names_ok,
        format!("(surprise, male, Caucasian, 0-3) encodes to {encoded:?}"),
    )
}

fn run_once(parallel: bool) -> (String, Vec<u8>, TrainHistory) {
    let data = synthetic(40, 11, false);
    let split = mtfer_core::data::split(data, 0.9, 11).unwrap();
    let cfg = TrainConfig {
        max_epochs: 4,
        batch_size: 8,
        seed: 11,
        deterministic: !parallel,
        ..Default::default()
    };
    let (model, hist) = train(Model::build(&small_config(11)).unwrap(), &split, &cfg).unwrap();
    (metrics_csv(&hist), to_bytes(&model), hist)
}

fn c11_determinism() -> Outcome {
    let (csv_a, ckpt_a, hist_a) = run_once(false);
    let (csv_b, ckpt_b, hist_b) = run_once(false);
    let (csv_c, ckpt_c, _) = run_once(true);
    let same = csv_a == csv_b && ckpt_a == ckpt_b && hist_a == hist_b;
    let threaded_same = csv_a == csv_c && ckpt_a == ckpt_c;
    outcome(
        same,
        format!(
            "two deterministic runs: metrics.csv {} bytes identical {}, checkpoint {} bytes identical {}; threaded run identical too: {threaded_same}",
            csv_a.len(),
            csv_a == csv_b,
            ckpt_a.len(),
            ckpt_a == ckpt_b
        ),
    )
}

fn c12_checkpoint() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut rng = Rng::new(12);
    let mut bit_exact = true;
    for (i, cfg) in [ModelConfig::default(), small_config(3)].into_iter().enumerate() {
        let model = Model::build(&ModelConfig { seed: 40 + i as u64, ..cfg }).unwrap();
        checkpoint::save_checkpoint(&model, &path).unwrap();
        let loaded = checkpoint::load_checkpoint(&path).unwrap();
        bit_exact &= loaded == model;
        for _ in 0..3 {
            let x = rng.uniform(&[50, 50, 1], 0.0, 1.0).unwrap();
            let (a, b) = (model.infer(&x).unwrap(), loaded.infer(&x).unwrap());
            bit_exact &= Head::ALL
                .iter()
                .all(|&h| a.get(h).iter().zip(b.get(h)).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
    let good = std::fs::read(&path).unwrap();
    let truncated = matches!(from_bytes(&good[..good.len() - 3]), Err(Error::Corruption(_)));
    let mut magic = good.clone();
    magic[0] ^= 0xff;
    let bad_magic = matches!(from_bytes(&magic), Err(Error::Format(_)));
    let mut padded = good.clone();
    padded.extend_from_slice(&[0, 0]);
    let extended = matches!(from_bytes(&padded), Err(Error::Corruption(_)));
    let mismatch = matches!(
        checkpoint::load_checkpoint_for(&path, &ModelConfig::default()),
        Err(Error::ConfigMismatch(_))
    );
    outcome(
        bit_exact && truncated && bad_magic && extended && mismatch,
        format!(
            "save/load/forward bit-exact {bit_exact}; truncated→Corruption {truncated}, bad magic→Format {bad_magic}, trailing bytes→Corruption {extended}, other architecture→ConfigMismatch {mismatch}"
        ),
    )
}

fn c13_multitask_benefit() -> Outcome {
    let epochs = 20;
    let mut single = Vec::new();
    let mut multi = Vec::new();
    for seed in 0..5u64 {
        let data = generate(&SyntheticConfig {
            count: 200,
            noise: 0.7,
            jitter: 4,
            emotion_only: false,
            seed: 1000 + seed,
        })
        .unwrap();
        let split = mtfer_core::data::split(data, 0.9, seed).unwrap();
        for (weights, sink) in [
            (LossWeights::emotion_only(2.0), &mut single),
            (LossWeights::default(), &mut multi),
        ] {
            let mut cfg = TrainConfig {
                initial_lr: 2e-3,
                batch_size: 16,
                max_epochs: epochs,
                loss_weights: weights,
                seed,
                deterministic: true,
                ..Default::default()
            };
            cfg.early_stop.patience = epochs;
            let (model, _) = train(Model::build(&small_config(seed)).unwrap(), &split, &cfg).unwrap();
            let m = evaluate(&model, &split.validation, &cfg.loss_weights).unwrap();
            sink.push(m.get(Head::Emotion).accuracy.unwrap());
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (st, mt) = (mean(&single), mean(&multi));
    outcome(
        mt >= st - 0.02,
        format!("mean validation emotion accuracy over 5 seeds: single-task {st:.4} {single:?}, multi-task {mt:.4} {multi:?}"),
    )
}
