//! One test per acceptance criterion. Each prints a `PASS`/`FAIL` line
//! (written directly to stdout so it survives output capture) and then
//! asserts.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use common::{micro_no_augment, synthetic_examples};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use wlann::dataio::{
    generate_synthetic_corpus, synthesize_clip, AudioClip, CorpusDir, Label, SplitName, SurrogateClass,
};
use wlann::dsp::{design_butterworth_bandpass, frame_count, log_mel, rfft512};
use wlann::eval::{consistency_check, evaluate, predict, score};
use wlann::model::{forward_trace, prepare_features, WlannConfig, WlannParams};
use wlann::ndiff::suite::run_primitive_suite;
use wlann::ndiff::{GradCheckOptions, TensorD};
use wlann::train::{
    fit, focal_loss, gradcheck_config, load_examples, model_grad_check, one_hot, train_step_examples, Example,
    TrainState,
};

/// Criteria run one at a time so each wall-clock budget measures only its
/// own work.
fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, title: &str, ok: bool, elapsed: Duration, detail: String) {
    let line = format!(
        "{} criterion {id} ({title}): {detail} [{:.2}s]\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(ok, "{}", line.trim_end());
}

#[test]
fn criterion_1_score_arithmetic() {
    let _guard = exclusive();
    let t = Instant::now();
    let mut pairs = Vec::new();
    for i in 0..1000 {
        pairs.push((Label::Wheeze, if i < 903 { Label::Wheeze } else { Label::Normal }));
        pairs.push((Label::Normal, if i < 969 { Label::Normal } else { Label::FineCrackle }));
    }
    let r = score(&pairs).unwrap();
    let (a, h, s) = (100.0 * r.as_.unwrap(), 100.0 * r.hs.unwrap(), 100.0 * r.ts.unwrap());
    let (ca, ch, cs) = consistency_check(0.903, 0.969);
    let ok = r.sn == Some(0.903)
        && r.sp == Some(0.969)
        && (a - 93.6).abs() <= 0.15
        && (h - 93.5).abs() <= 0.15
        && (s - 93.6).abs() <= 0.15
        && (ca - 0.9360).abs() < 5e-5
        && (ch - 0.9348).abs() < 5e-5
        && (cs - 0.9354).abs() < 5e-5;
    let el = t.elapsed();
    verdict(
        1,
        "score arithmetic",
        ok && el < Duration::from_secs(1),
        el,
        format!("AS {a:.3} HS {h:.3} TS {s:.3}"),
    );
}

#[test]
fn criterion_2_metric_identities() {
    let _guard = exclusive();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..10_000 {
        let tas = rng.gen_range(1..400usize);
        let tns = rng.gen_range(1..400usize);
        let cas = rng.gen_range(0..=tas);
        let cns = rng.gen_range(0..=tns);
        let mut pairs = Vec::with_capacity(tas + tns);
        for i in 0..tas {
            let truth = Label::ALL[1 + i % 6];
            let wrong = if i % 2 == 0 {
                Label::Normal
            } else {
                Label::ALL[1 + (i + 1) % 6]
            };
            pairs.push((truth, if i < cas { truth } else { wrong }));
        }
        for i in 0..tns {
            pairs.push((Label::Normal, if i < cns { Label::Normal } else { Label::Rhonchi }));
        }
        let r = score(&pairs).unwrap();
        let sn = cas as f64 / tas as f64;
        let sp = cns as f64 / tns as f64;
        let avg = (sn + sp) / 2.0;
        let hs = if sn + sp > 0.0 { 2.0 * sn * sp / (sn + sp) } else { 0.0 };
        let ts = (avg + hs) / 2.0;
        let counts_ok = (r.cas, r.tas, r.cns, r.tns) == (cas, tas, cns, tns);
        let close = |v: Option<f64>, want: f64| v.is_some_and(|v| (v - want).abs() <= 1e-15);
        let values_ok = r.sn == Some(sn) && r.sp == Some(sp) && close(r.as_, avg) && close(r.hs, hs) && close(r.ts, ts);
        let (a, h, s) = (r.as_.unwrap(), r.hs.unwrap(), r.ts.unwrap());
        if !(counts_ok && values_ok && h <= s && s <= a) {
            violations += 1;
        }
    }
    let el = t.elapsed();
    verdict(
        2,
        "metric identities",
        violations == 0 && el < Duration::from_secs(5),
        el,
        format!("10000 count sets, {violations} violations"),
    );
}

#[test]
fn criterion_3_gradient_suite() {
    let _guard = exclusive();
    let t = Instant::now();
    let opts = GradCheckOptions::default();
    let ops = run_primitive_suite(7, opts).unwrap();
    let worst_op = ops.iter().map(|c| c.report.max_rel_err()).fold(0.0, f64::max);
    let model_opts = GradCheckOptions {
        max_probes: Some(20),
        ..opts
    };
    let model = model_grad_check(&gradcheck_config(), 7, model_opts).unwrap();
    let ok = ops.iter().all(|c| c.report.passed()) && model.passed() && worst_op < 1e-4 && model.max_rel_err() < 1e-4;
    let el = t.elapsed();
    verdict(
        3,
        "gradient suite",
        ok && el < Duration::from_secs(120),
        el,
        format!(
            "{} primitives max rel err {worst_op:.2e}, model max rel err {:.2e}",
            ops.len(),
            model.max_rel_err()
        ),
    );
}

#[test]
fn criterion_4_dsp_fidelity() {
    let _guard = exclusive();
    let t = Instant::now();
    let f = design_butterworth_bandpass(4, 40.0, 850.0, 16000).unwrap();
    let edges = [f.gain_db(40.0), f.gain_db(850.0)];
    let stops = [f.gain_db(5.0), f.gain_db(3000.0)];
    let filter_ok = edges.iter().all(|g| (g + 3.01).abs() <= 0.1) && stops.iter().all(|&g| g < -40.0);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_fft = 0.0f64;
    for _ in 0..8 {
        let x: Vec<f64> = (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = rfft512(&x).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for (k, fk) in fast.iter().enumerate() {
            let slow = x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (n, &v)| {
                acc + Complex64::from_polar(v, -2.0 * PI * ((k * n) % 512) as f64 / 512.0)
            });
            num += (fk - slow).norm_sqr();
            den += slow.norm_sqr();
        }
        worst_fft = worst_fft.max((num / den).sqrt());
    }

    let mut frames_ok = true;
    for _ in 0..40 {
        let n = rng.gen_range(400..20_000usize);
        let spec = log_mel(&AudioClip::new(vec![0.0; n], 16000).unwrap()).unwrap();
        frames_ok &= spec.n_frames() == (n - 400) / 160 + 1 && frame_count(n) == spec.n_frames();
    }
    let el = t.elapsed();
    verdict(
        4,
        "dsp fidelity",
        filter_ok && worst_fft < 1e-9 && frames_ok && el < Duration::from_secs(60),
        el,
        format!(
            "edges {:.3}/{:.3} dB, stops {:.1}/{:.1} dB, fft rel err {worst_fft:.1e}, frame law {}",
            edges[0],
            edges[1],
            stops[0],
            stops[1],
            if frames_ok { "ok" } else { "violated" }
        ),
    );
}

#[test]
fn criterion_5_shape_pipeline() {
    let _guard = exclusive();
    let t = Instant::now();
    let cfg = WlannConfig::default();
    let r = cfg.shape_report().unwrap();
    let d = cfg.ast.embed_dim;
    let cw = *cfg.cnn.widths.last().unwrap();
    let arithmetic_ok = r.spec_frames == 798
        && r.ast_grid == (15, 98)
        && r.cnn_t_raw == 374
        && r.t_common == 98
        && r.fused_channels == d + cw / 15
        && r.fused_channels == 80;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (clip, _) = synthesize_clip(SurrogateClass::Wheeze, 8000, &mut rng).unwrap();
    let input = prepare_features(&clip, &cfg).unwrap();
    let params = WlannParams::init(&cfg, 0);
    let trace = forward_trace(&input, &params, &cfg).unwrap();
    let traced_ok = input.spec.n_frames() == 798
        && trace.waveform.wo.shape() == [15, 98, cw / 15]
        && trace.ast.ao.shape() == [15, 98, d]
        && trace.fused_shape() == [15, 98, 80]
        && trace.probabilities().len() == 7;
    let el = t.elapsed();
    verdict(
        5,
        "shape pipeline",
        arithmetic_ok && traced_ok && el < Duration::from_secs(10),
        el,
        format!(
            "frames {}, grid {:?}, T_raw {} -> {}, fused {:?}",
            r.spec_frames,
            r.ast_grid,
            r.cnn_t_raw,
            r.t_common,
            trace.fused_shape()
        ),
    );
}

#[test]
fn criterion_6_overfit() {
    let _guard = exclusive();
    let t = Instant::now();
    let mut cfg = micro_no_augment();
    cfg.train.batch_size = 16;
    let data = synthetic_examples(&SurrogateClass::ALL, 16, 6, &cfg);
    let batch: Vec<&Example> = data.iter().collect();
    let mut state = TrainState::new(&cfg);
    let mut reached = None;
    let mut last = f64::INFINITY;
    for step in 1..=500 {
        last = train_step_examples(&batch, &mut state, &cfg).unwrap().loss;
        if last < 0.01 {
            reached = Some(step);
            break;
        }
    }
    let el = t.elapsed();
    verdict(
        6,
        "overfit",
        reached.is_some() && el < Duration::from_secs(300),
        el,
        match reached {
            Some(s) => format!("loss {last:.5} < 0.01 after {s} steps"),
            None => format!("loss {last:.5} after 500 steps"),
        },
    );
}

#[test]
fn criterion_7_synthetic_separation() {
    let _guard = exclusive();
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic_corpus(60, 11, dir.path()).unwrap();
    let corpus = CorpusDir::new(dir.path());
    let cfg = WlannConfig::micro();
    let [train, intra, inter] = corpus.load_splits().unwrap();
    assert_eq!(
        (train.name, intra.name, inter.name),
        (SplitName::Train, SplitName::TestIntra, SplitName::TestInter)
    );
    let train_ex = load_examples(&corpus, &train, &cfg).unwrap();
    let mut held_out = load_examples(&corpus, &intra, &cfg).unwrap();
    held_out.extend(load_examples(&corpus, &inter, &cfg).unwrap());
    let state = fit(&train_ex, &cfg, 20, None).unwrap();
    let r = evaluate(&state.params, &cfg, &held_out, "test_intra+test_inter").unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (wheeze, _) = synthesize_clip(SurrogateClass::Wheeze, 8000, &mut rng).unwrap();
    let (label, _) = predict(&prepare_features(&wheeze, &cfg).unwrap(), &state.params, &cfg).unwrap();

    let sn = r.sn.unwrap_or(0.0);
    let el = t.elapsed();
    verdict(
        7,
        "synthetic separation",
        r.accuracy >= 0.90 && sn >= 0.85 && label == Label::Wheeze && el < Duration::from_secs(900),
        el,
        format!(
            "{} held-out events, accuracy {:.3}, SN {sn:.3}, SP {:.3}, fresh wheeze -> {label}",
            r.events,
            r.accuracy,
            r.sp.unwrap_or(0.0)
        ),
    );
}

fn cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_wlann")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn criterion_8_determinism() {
    let _guard = exclusive();
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    let config = root.join("micro.toml");
    std::fs::write(&config, include_str!("../../../configs/micro.toml")).unwrap();
    cli(&["synth", "--out", p(&corpus), "--n-per-class", "10", "--seed", "8"]);
    for name in ["a.wlann", "b.wlann"] {
        cli(&[
            "train",
            "--data",
            p(&corpus),
            "--config",
            p(&config),
            "--epochs",
            "2",
            "--seed",
            "13",
            "--out",
            p(&root.join(name)),
        ]);
    }
    for name in ["a.json", "b.json"] {
        cli(&[
            "eval",
            "--data",
            p(&corpus),
            "--model",
            p(&root.join("a.wlann")),
            "--split",
            "inter",
            "--report",
            p(&root.join(name)),
        ]);
    }
    let read = |n: &str| std::fs::read(root.join(n)).unwrap();
    let ckpt_same = read("a.wlann") == read("b.wlann");
    let report_same = read("a.json") == read("b.json");
    let el = t.elapsed();
    verdict(
        8,
        "determinism",
        ckpt_same && report_same,
        el,
        format!("checkpoints identical: {ckpt_same}, reports identical: {report_same}"),
    );
}

#[test]
fn criterion_9_focal_loss() {
    let _guard = exclusive();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ce_err = 0.0f64;
    for _ in 0..1000 {
        let y: Vec<f64> = (0..7).map(|_| rng.gen_range(0.001..0.999)).collect();
        let k = rng.gen_range(0..7);
        let ce = -y[k].ln();
        let l = focal_loss(&TensorD::vector(y), &one_hot(k, 7).unwrap(), 0.0).unwrap();
        ce_err = ce_err.max((l - ce).abs());
    }
    let mut ratio_err = 0.0f64;
    for y in [0.5, 0.7, 0.9] {
        let pred = TensorD::vector(vec![y, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1]);
        let target = one_hot(0, 7).unwrap();
        let ratio = focal_loss(&pred, &target, 2.0).unwrap() / focal_loss(&pred, &target, 0.0).unwrap();
        ratio_err = ratio_err.max((ratio - (1.0 - y) * (1.0 - y)).abs());
    }
    let el = t.elapsed();
    verdict(
        9,
        "focal loss",
        ce_err < 1e-12 && ratio_err < 1e-12,
        el,
        format!("gamma=0 vs cross-entropy {ce_err:.1e}, (1-y)^2 ratio error {ratio_err:.1e}"),
    );
}
