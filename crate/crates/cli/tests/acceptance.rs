//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1–8 and 10 must pass. Criterion 9 is a seeded directional
//! experiment; its line reports the threshold outcome honestly, and the
//! process only fails when the rerun does not reproduce the committed pilot
//! (`tests/golden/pilot.json`). Set `NEUROTTT_BLESS=1` to rewrite that file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use neurottt_core::adapt::{content_seed, entropy, ssl_loss, tent_adapt_predict, ttt_ssl_adapt_predict, SslSelection, TentConfig, TttConfig};
use neurottt_core::harness::{build_splits, finetune_config, initial_model, run_experiment, ExperimentConfig, Strategy};
use neurottt_core::metrics::{self, oracle};
use neurottt_core::nn::{gradient_suite, narrow, ModelState, ParamGroup, Trainable};
use neurottt_core::pipeline::{combined_loss, finetune_stage1, FinetuneConfig, OptimizerKind};
use neurottt_core::pretext::{
    amp_factor, ap_flip_with, band_table_for, jigsaw_with, permutation_from_index, permutation_index, stopped_band_with,
    TaskSpec, AMP_LEVELS, DEFAULT_TRANSITION_HZ,
};
use neurottt_core::rng::{derive_seed, seeded};
use neurottt_core::signals::{bandpower, Epoch, Montage, EPOCH_RATE_HZ, EPOCH_SAMPLES};
use neurottt_core::{Result, Tape, TaskKind, Tensor};

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

/// Stage-I model on syn_mi seed 0, test split shifted by a 1.5 gain.
struct Trained {
    model: ModelState,
    spec: TaskSpec,
    test: Vec<Epoch>,
}

fn trained() -> Result<Trained> {
    let mut cfg = ExperimentConfig::for_task(TaskKind::SynMi);
    cfg.test_gain = 1.5;
    let splits = build_splits(&cfg, 0)?;
    let spec = cfg.task_spec()?;
    let (mut model, _) = initial_model(&cfg, 0, &splits.train)?;
    finetune_stage1(&mut model, &splits.train, &splits.val, &spec, &finetune_config(&cfg, 0, spec.weights))?;
    Ok(Trained {
        model,
        spec,
        test: splits.test,
    })
}

fn c1_gradients() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut n = 0;
    for task in TaskKind::ALL {
        let cfg = ExperimentConfig::for_task(task);
        for e in gradient_suite(&narrow(&cfg.model), 3, 0)? {
            n += e.n_checked;
            if !(e.max_relative_error <= worst.0) {
                worst = (e.max_relative_error, format!("{}/{}", task, e.name));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        worst.0 < 1e-5 && secs < 60.0,
        format!("max rel err {:.2e} ({}) over {n} coordinates, {secs:.1}s", worst.0, worst.1),
    ))
}

fn c2_ttt_step(t: &Trained) -> Result<Outcome> {
    let cfg = TttConfig {
        optimizer: OptimizerKind::Sgd,
        online: true,
        ..TttConfig::default()
    };
    let mut worst = 0.0f64;
    for i in 0..5 {
        let sample = &t.test[i..i + 1];
        let mut reference = t.model.clone();
        let mut tape = Tape::new();
        let vars = reference.bind(&mut tape, Trainable::All);
        let mut rng = seeded(content_seed(cfg.seed, sample));
        let loss = ssl_loss(&mut reference, &mut tape, &vars, sample, &t.spec, SslSelection::BothWeighted, &mut rng)?;
        tape.backward(loss)?;
        let mut adapted = t.model.clone();
        ttt_ssl_adapt_predict(&mut adapted, sample, &t.spec, &cfg, None)?;
        for ((p0, p1), v) in t.model.params().iter().zip(adapted.params().iter()).zip(vars.all()) {
            let g = tape.grad(*v).map_or_else(|| vec![0.0; p0.tensor.numel()], <[f64]>::to_vec);
            for ((a, b), gi) in p0.tensor.data().iter().zip(p1.tensor.data()).zip(&g) {
                worst = worst.max(((b - a) + cfg.alpha * gi).abs());
            }
        }
    }
    Ok(outcome(worst <= 1e-12, format!("max |Δθ + α∇L_SSL| = {worst:.2e} over 5 samples, α = 1e-5")))
}

fn changed_tensors(a: &ModelState, b: &ModelState) -> Vec<(String, bool)> {
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut out = Vec::new();
    for (p, q) in a.params().iter().zip(b.params().iter()) {
        if bits(p.tensor) != bits(q.tensor) {
            out.push((p.name.clone(), p.group == ParamGroup::BnAffine));
        }
    }
    for ((name, p), (_, q)) in a.buffers().into_iter().zip(b.buffers()) {
        if bits(p) != bits(q) {
            out.push((name.to_string(), false));
        }
    }
    out
}

fn c3_tent_restriction(t: &Trained) -> Result<Outcome> {
    let mut ok = true;
    let mut notes = Vec::new();
    for running in [true, false] {
        let cfg = TentConfig {
            update_running_stats: running,
            ..TentConfig::default()
        };
        let mut m = t.model.clone();
        tent_adapt_predict(&mut m, &t.test[..32], &cfg)?;
        let changed = changed_tensors(&t.model, &m);
        let allowed = |(name, bn): &(String, bool)| *bn || (running && name.contains("running_"));
        let n_bn = changed.iter().filter(|c| c.1).count();
        ok &= changed.iter().all(allowed) && n_bn == 4;
        ok &= m.backbone.bn1.momentum == t.model.backbone.bn1.momentum
            && m.backbone.bn2.momentum == t.model.backbone.bn2.momentum;
        notes.push(format!(
            "running={running}: changed {{{}}}",
            changed.iter().map(|c| c.0.as_str()).collect::<Vec<_>>().join(", ")
        ));
    }
    Ok(outcome(ok, notes.join("; ")))
}

fn c4_entropy_descent(t: &Trained) -> Result<Outcome> {
    let cfg = TentConfig::default();
    let mut descending = 0;
    for b in 0..100u64 {
        let mut rng = seeded(derive_seed(4, b));
        let idx = sample(&mut rng, t.test.len(), cfg.batch_size);
        let batch: Vec<Epoch> = idx.iter().map(|i| t.test[i].clone()).collect();
        let mut m = t.model.clone();
        let (_, rec) = tent_adapt_predict(&mut m, &batch, &cfg)?;
        if rec.entropy.windows(2).all(|w| w[1] <= w[0]) {
            descending += 1;
        }
    }
    let mut uniform_err = 0.0f64;
    for c in 2..=16usize {
        let h = entropy(&vec![1.0 / c as f64; c])?;
        uniform_err = uniform_err.max((h - (c as f64).ln()).abs());
    }
    Ok(outcome(
        descending >= 95 && uniform_err <= 1e-12,
        format!("{descending}/100 batches non-increasing (lr 1e-4, 3 steps, gain 1.5); |H(uniform) − ln C| ≤ {uniform_err:.1e}"),
    ))
}

fn sine(freq: f64, channels: usize) -> Result<Epoch> {
    let data = (0..channels)
        .flat_map(|c| {
            (0..EPOCH_SAMPLES)
                .map(move |i| (2.0 * std::f64::consts::PI * freq * i as f64 / EPOCH_RATE_HZ + c as f64).sin())
        })
        .collect();
    Epoch::new(data, channels, 0, 1)
}

fn db(before: f64, after: f64) -> f64 {
    10.0 * (before / after).log10()
}

fn c5_pretexts() -> Result<Outcome> {
    let montage = Montage::standard();
    let cfg = ExperimentConfig::for_task(TaskKind::SynMi);
    let epochs = build_splits(&cfg, 5)?.test;
    let bits = |e: &Epoch| e.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut flip_ok = true;
    let mut jig_ok = true;
    for e in &epochs {
        let once = ap_flip_with(e, &montage, true)?.view;
        flip_ok &= bits(&ap_flip_with(&once, &montage, true)?.view) == bits(e);
        for k in [2, 3] {
            for idx in 0..(1..=k).product() {
                let perm = permutation_from_index(k, idx);
                let mut inv = vec![0; k];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let view = jigsaw_with(e, k, idx)?.view;
                jig_ok &= bits(&jigsaw_with(&view, k, permutation_index(&inv))?.view) == bits(e);
            }
        }
    }
    let amp_ok = (0..AMP_LEVELS).all(|k| amp_factor(k).to_bits() == (-2.0 + k as f64 * 4.0 / 15.0).to_bits());

    let mut min_stop = f64::INFINITY;
    let mut max_pass = 0.0f64;
    for task in TaskKind::ALL {
        let table = band_table_for(task);
        let centers: Vec<f64> = table.bands().iter().map(|b| ((b.low_hz + b.high_hz) / 2.0).round()).collect();
        for i in 0..table.len() {
            let (lo, hi) = (table.bands()[i].low_hz, table.bands()[i].high_hz);
            let x = sine(centers[i], montage.len())?;
            let y = stopped_band_with(&x, &table, i, DEFAULT_TRANSITION_HZ)?.view;
            min_stop = min_stop.min(db(bandpower(&x, lo, hi), bandpower(&y, lo, hi)));
            let j = (i + 1) % table.len();
            let (plo, phi) = (table.bands()[j].low_hz, table.bands()[j].high_hz);
            let x = sine(centers[j], montage.len())?;
            let y = stopped_band_with(&x, &table, i, DEFAULT_TRANSITION_HZ)?.view;
            max_pass = max_pass.max(db(bandpower(&x, plo, phi), bandpower(&y, plo, phi)).abs());
        }
    }
    Ok(outcome(
        flip_ok && jig_ok && amp_ok && min_stop >= 40.0 && max_pass <= 0.1,
        format!(
            "flip involution {flip_ok}, jigsaw inverse {jig_ok} on {} epochs, amp factors exact {amp_ok}; stopband ≥ {min_stop:.1} dB, passband ≤ {max_pass:.2e} dB",
            epochs.len()
        ),
    ))
}

fn c6_band_tables() -> Outcome {
    let expected: [(TaskKind, [(f64, f64); 4]); 3] = [
        (TaskKind::SynSpeech, [(0.5, 8.0), (8.0, 30.0), (30.0, 70.0), (70.0, 100.0)]),
        (TaskKind::SynStress, [(4.0, 8.0), (8.0, 12.0), (13.0, 20.0), (20.0, 30.0)]),
        (TaskKind::SynMi, [(3.0, 7.0), (8.0, 13.0), (13.0, 30.0), (30.0, 45.0)]),
    ];
    let ok = expected.iter().all(|(task, bands)| {
        let got = band_table_for(*task).edges();
        got.len() == 4
            && got
                .iter()
                .zip(bands)
                .all(|(g, e)| g.0.to_bits() == e.0.to_bits() && g.1.to_bits() == e.1.to_bits())
    });
    outcome(ok, "speech, stress and MI edges compared bitwise")
}

fn c7_metrics() -> Result<Outcome> {
    use rand::Rng;
    let mut rng = seeded(7);
    let mut worst = [0.0f64; 5];
    for _ in 0..1000 {
        let n = rng.random_range(2..40);
        let c = rng.random_range(2..6);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        worst[0] = worst[0].max((metrics::balanced_accuracy(&y, &p)? - oracle::balanced_accuracy(&y, &p)).abs());
        worst[1] = worst[1].max((metrics::cohens_kappa(&y, &p)? - oracle::cohens_kappa(&y, &p)).abs());
        worst[2] = worst[2].max((metrics::weighted_f1(&y, &p)? - oracle::weighted_f1(&y, &p)).abs());
        let mut truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        truth[0] = true;
        truth[1] = false;
        // Coarse scores so ties occur.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        worst[3] = worst[3].max((metrics::auroc(&truth, &scores)? - oracle::auroc(&truth, &scores)).abs());
        worst[4] = worst[4].max((metrics::auc_pr(&truth, &scores)? - oracle::auc_pr(&truth, &scores)).abs());
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    Ok(outcome(
        max <= 1e-12,
        format!("1000 instances; max |fast − oracle| BA {:.1e}, κ {:.1e}, F1 {:.1e}, AUROC {:.1e}, AUC-PR {:.1e}", worst[0], worst[1], worst[2], worst[3], worst[4]),
    ))
}

fn c8_degeneracy() -> Result<Outcome> {
    let mut cfg = ExperimentConfig::for_task(TaskKind::SynStress);
    cfg.generator.trials_per_subject = 12;
    cfg.finetune.epochs = 3;
    let splits = build_splits(&cfg, 3)?;
    let spec = cfg.task_spec()?;
    let (base, _) = initial_model(&cfg, 3, &splits.train)?;
    let mut a = base.clone();
    let la = finetune_stage1(&mut a, &splits.train, &splits.val, &spec, &finetune_config(&cfg, 3, [0.0, 0.0]))?;
    let mut b = base.clone();
    let sup = FinetuneConfig {
        supervised_only: true,
        weights: None,
        ..finetune_config(&cfg, 3, [0.0, 0.0])
    };
    let lb = finetune_stage1(&mut b, &splits.train, &splits.val, &spec, &sup)?;
    let same_params = changed_tensors(&a, &b).is_empty();
    let same_log = la.without_timing().records.iter().zip(lb.without_timing().records.iter()).all(|(x, y)| {
        x.main_loss.to_bits() == y.main_loss.to_bits() && x.val_metric.to_bits() == y.val_metric.to_bits()
    });

    // SSL-head gradients under w and under (2·w1, 3·w2).
    let x = Tensor::new(
        vec![4, cfg.model.channels, cfg.model.samples],
        splits.train[..4].iter().flat_map(|e| e.data().to_vec()).collect(),
    )?;
    let labels: Vec<usize> = splits.train[..4].iter().map(|e| e.label).collect();
    let ssl_labels = vec![vec![0, 1, 2, 3], vec![1, 0, 1, 0]];
    let grads = |w: [f64; 2]| -> Result<Vec<Vec<f64>>> {
        let mut m = base.clone();
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, Trainable::All);
        let xv = m.input(&mut tape, x.clone())?;
        let f = m.features(&mut tape, &vars, xv, neurottt_core::nn::Mode::Eval, None)?;
        let main = m.main_logits(&mut tape, &vars, f)?;
        let s0 = m.ssl_logits(&mut tape, &vars, 0, f)?;
        let s1 = m.ssl_logits(&mut tape, &vars, 1, f)?;
        let loss = combined_loss(&mut tape, main, &labels, &[s0, s1], &ssl_labels, &w)?;
        tape.backward(loss)?;
        let names: Vec<String> = m.params().iter().map(|p| p.name.clone()).collect();
        Ok(names
            .iter()
            .zip(vars.all())
            .filter(|(n, _)| n.starts_with("ssl_head"))
            .map(|(_, v)| tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_default())
            .collect())
    };
    let w = spec.weights;
    let g1 = grads(w)?;
    let g2 = grads([2.0 * w[0], 3.0 * w[1]])?;
    let n_per_head = g1.len() / 2;
    let mut lin_err = 0.0f64;
    for (i, (a, b)) in g1.iter().zip(&g2).enumerate() {
        let scale = if i < n_per_head { 2.0 } else { 3.0 };
        for (x, y) in a.iter().zip(b) {
            lin_err = lin_err.max((y - scale * x).abs() / x.abs().max(1e-300).max(y.abs()));
        }
    }
    Ok(outcome(
        same_params && same_log && la.records.len() == lb.records.len() && lin_err <= 1e-12,
        format!("w=(0,0) vs supervised-only: params bitwise {same_params}, log bitwise {same_log}; SSL-head gradient linearity rel err {lin_err:.1e}"),
    ))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Pilot {
    n_seeds: usize,
    /// task → strategy → mean balanced accuracy.
    balanced_accuracy: BTreeMap<String, BTreeMap<String, f64>>,
    margins: BTreeMap<String, f64>,
}

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/pilot.json")
}

fn c9_directional() -> Result<(Outcome, bool)> {
    let start = Instant::now();
    let mut ba: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut n_seeds = 0;
    for task in TaskKind::ALL {
        let cfg = ExperimentConfig::for_task(task);
        n_seeds = cfg.n_seeds;
        let report = run_experiment(&cfg)?;
        let row = ba.entry(task.name().to_string()).or_default();
        for s in Strategy::ALL {
            row.insert(s.name().to_string(), report.strategy(s).and_then(|r| r.mean("balanced_accuracy")).unwrap_or(f64::NAN));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let get = |t: TaskKind, s: Strategy| ba[t.name()][s.name()];
    let ttt = |t: TaskKind| get(t, Strategy::TttSsl) - get(t, Strategy::Stage1Ssl);
    let mut margins = BTreeMap::new();
    margins.insert("a_stage1_minus_supervised_mi".to_string(), get(TaskKind::SynMi, Strategy::Stage1Ssl) - get(TaskKind::SynMi, Strategy::SupervisedOnly));
    margins.insert("b_tent_minus_none_mi".to_string(), get(TaskKind::SynMi, Strategy::Tent) - get(TaskKind::SynMi, Strategy::Stage1Ssl));
    margins.insert("b_tent_minus_none_stress".to_string(), get(TaskKind::SynStress, Strategy::Tent) - get(TaskKind::SynStress, Strategy::Stage1Ssl));
    margins.insert("c_ttt_delta_mi".to_string(), ttt(TaskKind::SynMi));
    margins.insert("c_ttt_delta_stress".to_string(), ttt(TaskKind::SynStress));
    margins.insert("c_ttt_delta_speech".to_string(), ttt(TaskKind::SynSpeech));
    let observed = Pilot {
        n_seeds,
        balanced_accuracy: ba,
        margins,
    };

    let path = golden_path();
    if std::env::var("NEUROTTT_BLESS").is_ok_and(|v| v == "1") {
        std::fs::create_dir_all(path.parent().unwrap())?;
        std::fs::write(&path, serde_json::to_string_pretty(&observed)? + "\n")?;
    }
    let golden: Pilot = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    let reproduced = golden.n_seeds == observed.n_seeds
        && golden.margins.len() == observed.margins.len()
        && golden
            .margins
            .iter()
            .all(|(k, g)| observed.margins.get(k).is_some_and(|o| (o - g).abs() <= 0.01));

    let m = &observed.margins;
    let a = m["a_stage1_minus_supervised_mi"] >= 0.02;
    let b = m["b_tent_minus_none_mi"] >= 0.02 && m["b_tent_minus_none_stress"] >= 0.02;
    let c = m["c_ttt_delta_mi"] > m["c_ttt_delta_speech"] && m["c_ttt_delta_stress"] > m["c_ttt_delta_speech"];
    let pass = a && b && c && secs < 900.0;
    let pt = |v: f64| format!("{:+.2}", 100.0 * v);
    let detail = format!(
        "(a) {} stage1−supervised MI {} pts; (b) {} tent−none MI {} / stress {} pts; (c) {} TTT Δ MI {} stress {} speech {} pts; {} seeds, {secs:.0}s; golden reproduced {reproduced}",
        if a { "ok" } else { "NOT MET" },
        pt(m["a_stage1_minus_supervised_mi"]),
        if b { "ok" } else { "NOT MET" },
        pt(m["b_tent_minus_none_mi"]),
        pt(m["b_tent_minus_none_stress"]),
        if c { "ok" } else { "NOT MET" },
        pt(m["c_ttt_delta_mi"]),
        pt(m["c_ttt_delta_stress"]),
        pt(m["c_ttt_delta_speech"]),
        n_seeds,
    );
    Ok((outcome(pass, detail), reproduced))
}

fn cli(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_neurottt"))
        .args(args)
        .env("NEUROTTT_WORKERS", "1")
        .output()
        .expect("binary runs");
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Every file under `dir`, JSON files with timing fields removed.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn strip(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(m) => {
                m.retain(|k, _| !matches!(k.as_str(), "elapsed_ms" | "elapsed_us" | "wall_ms" | "elapsed_s"));
                m.values_mut().for_each(strip);
            }
            serde_json::Value::Array(a) => a.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("output dir exists") {
        let p = entry.unwrap().path();
        let mut bytes = std::fs::read(&p).unwrap();
        if p.extension().is_some_and(|e| e == "json") {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            strip(&mut v);
            bytes = serde_json::to_vec(&v).unwrap();
        }
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), bytes);
    }
    out
}

fn c10_cli_determinism() -> Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path();
    let config = root.join("tiny.toml");
    std::fs::write(
        &config,
        "task = \"syn_stress\"\nn_seeds = 2\n[generator]\ntrials_per_subject = 12\n[finetune]\nepochs = 2\n[pretrain]\nepochs = 1\n[tent]\nbatch_size = 8\n",
    )?;
    let cfg = config.to_str().unwrap();
    let mut failures = Vec::new();
    let mut checked = 0;
    for run in ["a", "b"] {
        let d = |name: &str| root.join(run).join(name).to_string_lossy().into_owned();
        let data = d("data");
        let steps: Vec<(&str, Vec<String>)> = vec![
            ("generate", vec!["generate".into(), "--config".into(), cfg.into(), "--seed".into(), "11".into(), "--out".into(), data.clone()]),
            ("pretrain", vec!["pretrain".into(), "--config".into(), cfg.into(), "--seed".into(), "11".into(), "--data".into(), data.clone(), "--out".into(), d("pretrain")]),
            (
                "finetune",
                vec![
                    "finetune".into(), "--config".into(), cfg.into(), "--seed".into(), "11".into(), "--data".into(), data.clone(),
                    "--checkpoint".into(), d("pretrain") + "/pretrained.ckpt", "--out".into(), d("finetune"),
                ],
            ),
            (
                "adapt",
                vec![
                    "adapt".into(), "--config".into(), cfg.into(), "--seed".into(), "11".into(), "--data".into(), data.clone(),
                    "--checkpoint".into(), d("finetune") + "/finetuned.ckpt", "--strategy".into(), "tent".into(), "--out".into(), d("adapt"),
                ],
            ),
            ("evaluate", vec!["evaluate".into(), "--config".into(), cfg.into(), "--seed".into(), "11".into(), "--out".into(), d("evaluate")]),
            ("ablate", vec!["ablate".into(), "--config".into(), cfg.into(), "--seed".into(), "11".into(), "--out".into(), d("ablate")]),
            ("report", vec!["report".into(), "--input".into(), d("evaluate") + "/report.json", "--out".into(), d("report")]),
        ];
        for (name, args) in steps {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let (ok, _, err) = cli(&args);
            if !ok {
                failures.push(format!("{name} failed: {err}"));
            }
        }
        let (ok, out, err) = cli(&["gradcheck", "--config", cfg, "--seed", "11"]);
        if !ok {
            failures.push(format!("gradcheck failed: {err}"));
        }
        let mut v: serde_json::Value = serde_json::from_str(&out).unwrap_or_default();
        if let Some(m) = v.as_object_mut() {
            m.remove("elapsed_s");
        }
        std::fs::create_dir_all(root.join(run).join("gradcheck"))?;
        std::fs::write(root.join(run).join("gradcheck/out.json"), serde_json::to_vec(&v)?)?;
    }
    for sub in ["data", "pretrain", "finetune", "adapt", "evaluate", "ablate", "report", "gradcheck"] {
        let (a, b) = (snapshot(&root.join("a").join(sub)), snapshot(&root.join("b").join(sub)));
        checked += a.len();
        if a != b || a.is_empty() {
            failures.push(format!("{sub} outputs differ"));
        }
    }
    Ok(outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("8 subcommands run twice, {checked} output files identical (timing fields excluded)")
        } else {
            failures.join("; ")
        },
    ))
}

fn main() {
    // `cargo test` passes filter and harness flags; this suite takes none.
    let start = Instant::now();
    let report = |n: usize, name: &str, r: Result<Outcome>| -> bool {
        let o = r.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        println!("criterion {n:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        o.pass
    };
    let mut required_ok = true;
    required_ok &= report(1, "gradient fidelity", c1_gradients());
    let model = trained();
    let with = |f: fn(&Trained) -> Result<Outcome>| match &model {
        Ok(t) => f(t),
        Err(e) => Ok(outcome(false, format!("training failed: {e}"))),
    };
    required_ok &= report(2, "TTT SGD step exactness", with(c2_ttt_step));
    required_ok &= report(3, "Tent parameter restriction", with(c3_tent_restriction));
    required_ok &= report(4, "entropy descent", with(c4_entropy_descent));
    required_ok &= report(5, "pretext correctness", c5_pretexts());
    required_ok &= report(6, "band tables", Ok(c6_band_tables()));
    required_ok &= report(7, "metric oracles", c7_metrics());
    required_ok &= report(8, "zero-weight degeneracy and weighting", c8_degeneracy());
    let (c9, reproduced) = match c9_directional() {
        Ok((o, r)) => (Ok(o), r),
        Err(e) => (Err(e), false),
    };
    report(9, "directional replication", c9);
    required_ok &= report(10, "CLI determinism", c10_cli_determinism());
    println!("acceptance finished in {:.0}s", start.elapsed().as_secs_f64());
    if !required_ok || !reproduced {
        println!("acceptance: required criteria failed or the pilot did not reproduce");
        std::process::exit(1);
    }
}
