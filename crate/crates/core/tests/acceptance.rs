//! Acceptance suite: one PASS/FAIL line per criterion.

use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use svkit::aggregator::{AggregationWeights, LOGITS_PARAM};
use svkit::cli::{self, Cli};
use svkit::config::RunConfig;
use svkit::ecapa::EcapaConfig;
use svkit::model::{load_items, Frontend, ModelSpec, PlantConfig, SpeakerModel};
use svkit::scoring::{
    adaptive_snorm, apply_calibration, eer, fit_calibration, score_trials, Cohort, EmbeddingStore, Trial, TrialList,
};
use svkit::synth::{synth_corpus, SynthCorpus, SynthSpec};
use svkit::training::{grad_check, train, TrainData, TrainOptions, TrainSchedule};
use svkit::upstream::MockUpstreamConfig;

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const ORACLE_TOL: f64 = 1e-9;
const SEPARABILITY_EER: f64 = 0.05;
const ONE_HOT_EER_DELTA: f64 = 0.01;
const PLANTED_LAYER: usize = 3;
// planted-offset norm and batch size pinned from the first desk run
const PLANT_STRENGTH: f64 = 6.0;
const DESK_BATCH: usize = 2;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed <= Duration::from_secs(limit_s), || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

// ---------------------------------------------------------------- 1

fn gradient_fidelity() -> Check {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    for c in ["aggregator", "ecapa", "aam", "calibration"] {
        let r = grad_check(c, 3, GRAD_EPS, 11).map_err(|e| e.to_string())?;
        let m = r.max_error();
        ensure(m < GRAD_TOL, || format!("{c}: max relative error {m:.3e}"))?;
        parts.push(format!("{c}={m:.1e}"));
    }
    within(t0.elapsed(), 120)?;
    Ok(parts.join(" "))
}

// ---------------------------------------------------------------- 2

/// Miss and false-alarm rates at each threshold, counted trial by trial.
fn oracle_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    thresholds.push(f64::INFINITY);
    let n_t = labels.iter().filter(|&&l| l).count() as f64;
    let n_n = labels.len() as f64 - n_t;
    let point = |t: f64| {
        let mut miss = 0.0;
        let mut fa = 0.0;
        for (&s, &l) in scores.iter().zip(labels) {
            if l && s < t {
                miss += 1.0;
            }
            if !l && s >= t {
                fa += 1.0;
            }
        }
        (miss / n_t, fa / n_n)
    };
    let pts: Vec<(f64, f64)> = thresholds.iter().map(|&t| point(t)).collect();
    let i = pts.iter().position(|(m, f)| m >= f).expect("curves cross");
    let (m0, f0) = pts[i - 1];
    let (m1, f1) = pts[i];
    let (d0, d1) = (f0 - m0, f1 - m1);
    m0 + d0 / (d0 - d1) * (m1 - m0)
}

fn random_trials(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=50);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    let coarse = rng.random_bool(0.5);
    let scores = labels
        .iter()
        .map(|&l| {
            let z: f64 = rng.sample(StandardNormal);
            let s = z + if l { 1.0 } else { 0.0 };
            // coarse grids force ties
            if coarse {
                (s * 4.0).round() / 4.0
            } else {
                s
            }
        })
        .collect();
    (scores, labels)
}

fn eer_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let (s, l) = random_trials(&mut rng);
        let got = eer(&s, &l).map_err(|e| e.to_string())?.0;
        let want = oracle_eer(&s, &l);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= ORACLE_TOL, || format!("set {k}: eer {got} vs oracle {want}"))?;
    }
    let mut worst_map: f64 = 0.0;
    for k in 0..100 {
        let (s, l) = random_trials(&mut rng);
        let a = rng.random_range(0.1..5.0);
        let b = rng.random_range(-3.0..3.0);
        let kind = k % 4;
        let f = |x: f64| match kind {
            0 => a * x + b,
            1 => (a * x / 4.0).exp(),
            2 => x * x * x + a * x + b,
            _ => (x / a).atan(),
        };
        let mapped: Vec<f64> = s.iter().map(|&x| f(x)).collect();
        let r0 = eer(&s, &l).map_err(|e| e.to_string())?.0;
        let r1 = eer(&mapped, &l).map_err(|e| e.to_string())?.0;
        worst_map = worst_map.max((r0 - r1).abs());
        ensure((r0 - r1).abs() <= ORACLE_TOL, || format!("map {k} (kind {kind}): {r0} vs {r1}"))?;
    }
    within(t0.elapsed(), 10)?;
    Ok(format!("200 sets max |diff| {worst:.1e}, 100 monotone maps max |diff| {worst_map:.1e}"))
}

// ---------------------------------------------------------------- 3

fn unit_randn(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn oracle_side(e: &[f64], members: &[Vec<f64>], k: usize) -> (f64, f64) {
    let ne = e.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut s: Vec<f64> = members
        .iter()
        .map(|m| {
            let nm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
            e.iter().zip(m).map(|(a, b)| a * b).sum::<f64>() / (ne * nm)
        })
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let top = &s[..k];
    let mu = top.iter().sum::<f64>() / k as f64;
    let var = top.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / k as f64;
    (mu, var.sqrt())
}

fn snorm_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut degenerate = 0;
    for inst in 0..100 {
        let dim = rng.random_range(3..=8);
        let size = rng.random_range(2..=20);
        let k = rng.random_range(1..=size);
        let members: Vec<Vec<f64>> = (0..size).map(|_| unit_randn(&mut rng, dim)).collect();
        let cohort = Cohort::new((0..size).map(|i| format!("c{i}")).collect(), members.clone(), k)
            .map_err(|e| e.to_string())?;
        let mut store = EmbeddingStore::new(dim);
        for i in 0..5 {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            store.insert(format!("u{i}"), v).map_err(|e| e.to_string())?;
        }
        let trials = TrialList::new(
            (0..6)
                .map(|_| Trial {
                    label: None,
                    enroll: format!("u{}", rng.random_range(0..5)),
                    test: format!("u{}", rng.random_range(0..5)),
                })
                .collect(),
        );
        let raw = score_trials(&trials, &store).map_err(|e| e.to_string())?;
        let got = adaptive_snorm(&raw, &store, &cohort);
        if k == 1 {
            // one score per side has zero spread
            ensure(got.is_err(), || format!("instance {inst}: top_k 1 must be degenerate"))?;
            degenerate += 1;
            continue;
        }
        let got = got.map_err(|e| format!("instance {inst}: {e}"))?;
        for (row, t) in got.rows.iter().zip(&trials.trials) {
            let e = store.get(&t.enroll).unwrap();
            let x = store.get(&t.test).unwrap();
            let s = raw.rows.iter().find(|r| r.enroll == t.enroll && r.test == t.test).unwrap().score;
            let (me, se) = oracle_side(e, &members, k);
            let (mt, st) = oracle_side(x, &members, k);
            let want = 0.5 * ((s - me) / se + (s - mt) / st);
            worst = worst.max((row.score - want).abs());
            ensure((row.score - want).abs() <= ORACLE_TOL, || {
                format!("instance {inst}: {} vs oracle {want}", row.score)
            })?;
        }
    }
    within(t0.elapsed(), 10)?;
    Ok(format!("max |diff| {worst:.1e}; {degenerate} top_k=1 instances rejected as degenerate"))
}

// ---------------------------------------------------------------- 4

fn freeze_contract() -> Check {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SynthSpec {
        n_speakers: 4,
        utts_per_speaker: 4,
        utt_seconds: 1.0,
        heldout_per_speaker: 2,
        ..Default::default()
    };
    let corpus = synth_corpus(&spec, dir.path()).map_err(|e| e.to_string())?;
    let mspec = ModelSpec {
        frontend: Frontend::Mock(MockUpstreamConfig {
            n_layers: 4,
            dim: 16,
            ..Default::default()
        }),
        plant: None,
        ecapa: EcapaConfig::tiny(16),
    };
    let run = |sched: TrainSchedule| -> Result<(Vec<u8>, Vec<u8>), String> {
        let mut model = SpeakerModel::init(mspec.clone(), 4, 0).map_err(|e| e.to_string())?;
        let before = model.upstream_params().to_bytes();
        let data = TrainData::load(&model, &corpus.train).map_err(|e| e.to_string())?;
        let mut sched = sched;
        sched.batch_size = 4;
        sched.crop_seconds = 1.0;
        train(&mut model, &data, &TrainOptions::new(sched, 0)).map_err(|e| e.to_string())?;
        Ok((before, model.upstream_params().to_bytes()))
    };
    let (b1, a1) = run(TrainSchedule::epochs(1, 0, 0))?;
    ensure(b1 == a1, || "stage 1 changed the upstream checkpoint bytes".into())?;
    let (b2, a2) = run(TrainSchedule::epochs(0, 1, 0))?;
    ensure(b2 != a2, || "stage 2 left the upstream checkpoint bytes unchanged".into())?;
    within(t0.elapsed(), 60)?;
    Ok(format!("stage 1 upstream bytes identical ({} B), stage 2 changed", a1.len()))
}

// ---------------------------------------------------------------- 5 and 6

struct DeskRun {
    corpus: SynthCorpus,
    model: SpeakerModel,
    eer: f64,
    weights: Vec<f64>,
    elapsed: Duration,
    _dir: tempfile::TempDir,
}

fn heldout_eer(model: &SpeakerModel, corpus: &SynthCorpus) -> Result<f64, String> {
    let items = load_items(model.spec(), &corpus.heldout).map_err(|e| e.to_string())?;
    let store = EmbeddingStore::from_embeddings(&model.embed_all(&items).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let scores = score_trials(&corpus.trials, &store).map_err(|e| e.to_string())?;
    let labels = corpus.trials.labels().map_err(|e| e.to_string())?;
    Ok(eer(&scores.scores(), &labels).map_err(|e| e.to_string())?.0)
}

fn desk_run() -> Result<DeskRun, String> {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SynthSpec {
        n_speakers: 20,
        utts_per_speaker: 10,
        utt_seconds: 3.0,
        ..Default::default()
    };
    let corpus = synth_corpus(&spec, dir.path()).map_err(|e| e.to_string())?;
    let mspec = ModelSpec {
        frontend: Frontend::Mock(MockUpstreamConfig {
            n_layers: 12,
            dim: 64,
            ..Default::default()
        }),
        plant: Some(PlantConfig {
            layer: PLANTED_LAYER,
            strength: PLANT_STRENGTH,
        }),
        ecapa: EcapaConfig::desk(64),
    };
    let mut model = SpeakerModel::init(mspec, 20, 0).map_err(|e| e.to_string())?;
    let data = TrainData::load(&model, &corpus.train).map_err(|e| e.to_string())?;
    let mut sched = TrainSchedule::epochs(4, 0, 0);
    sched.batch_size = DESK_BATCH;
    train(&mut model, &data, &TrainOptions::new(sched, 0)).map_err(|e| e.to_string())?;
    let eer = heldout_eer(&model, &corpus)?;
    let weights = model.aggregation_weights().ok_or("no aggregation weights")?.normalized();
    Ok(DeskRun {
        corpus,
        model,
        eer,
        weights,
        elapsed: t0.elapsed(),
        _dir: dir,
    })
}

fn separability(run: &Result<DeskRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let argmax = run
        .weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let detail = format!(
        "held-out EER {:.4} over {} trials, argmax layer {argmax} (w={:.4}, uniform {:.4})",
        run.eer,
        run.corpus.trials.len(),
        run.weights[argmax],
        1.0 / run.weights.len() as f64
    );
    ensure(run.eer < SEPARABILITY_EER, || format!("{detail}: EER not below {SEPARABILITY_EER}"))?;
    ensure(argmax == PLANTED_LAYER, || format!("{detail}: planted layer is {PLANTED_LAYER}"))?;
    within(run.elapsed, 600)?;
    Ok(format!("{detail}, {:.0}s", run.elapsed.as_secs_f64()))
}

fn aggregation_reduction(run: &Result<DeskRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let mut one_hot = run.model.clone();
    let n = run.weights.len();
    one_hot
        .params_mut()
        .insert(LOGITS_PARAM, AggregationWeights::one_hot(n, PLANTED_LAYER).to_mat());
    let e1 = heldout_eer(&one_hot, &run.corpus)?;
    let d = (e1 - run.eer).abs();
    let detail = format!("learned EER {:.4}, one-hot EER {e1:.4}, |diff| {d:.4}", run.eer);
    ensure(d < ONE_HOT_EER_DELTA, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn published_defaults() -> Check {
    for (label, c) in [
        ("default", RunConfig::default()),
        ("empty file", RunConfig::parse("").map_err(|e| e.to_string())?),
    ] {
        let s = &c.schedule;
        let f = &c.fbank;
        let checks = [
            ("aam.margin", c.aam_margin == 0.2),
            ("train.lmft_margin", s.lmft_margin == 0.5),
            ("train.crop_seconds", s.crop_seconds == 3.0),
            ("train.lmft_crop_seconds", s.lmft_crop_seconds == 6.0),
            ("augment.probability", c.augment.probability == 0.6),
            ("scoring.cohort_top_k", c.cohort_top_k == 600),
            ("train.stage1_epochs", s.stage1_epochs == 10),
            ("train.stage2_epochs", s.stage2_epochs == 5),
            ("train.lmft_epochs", s.lmft_epochs == 2),
            ("fbank.n_mels", f.n_mels == 40),
            ("fbank.win_ms", f.win_ms == 25.0),
            ("fbank.hop_ms", f.hop_ms == 10.0),
        ];
        for (key, ok) in checks {
            ensure(ok, || format!("{label}: {key} differs from the published value"))?;
        }
    }
    Ok("margin 0.2, LMFT 0.5, crop 3/6 s, p=0.6, top_k 600, epochs 10/5/2, Fbank 40/25/10".into())
}

// ---------------------------------------------------------------- 8

fn parameter_count() -> Check {
    let t0 = Instant::now();
    let n = EcapaConfig::voxceleb(40).param_count() as f64;
    let rel = (n - 6e6).abs() / 6e6;
    ensure(rel <= 0.10, || format!("{n} parameters, {:.1}% from 6M", 100.0 * rel))?;
    within(t0.elapsed(), 5)?;
    Ok(format!("{n} parameters ({:.1}% from 6M)", 100.0 * rel))
}

// ---------------------------------------------------------------- 9

fn cli_run(args: &[&str]) -> Result<String, String> {
    let mut full = vec!["svkit"];
    full.extend_from_slice(args);
    let parsed = Cli::try_parse_from(&full).map_err(|e| e.to_string())?;
    cli::run(&parsed).map_err(|e| format!("{}: {e}", args.join(" ")))
}

fn pipeline(root: &Path) -> Result<(Vec<u8>, String), String> {
    let cfg = root.join("run.cfg");
    std::fs::write(
        &cfg,
        "run.seed = 9\npaths.manifest = corpus/train.tsv\nupstream.n_layers = 4\nupstream.dim = 16\n\
         upstream.plant_layer = 2\nupstream.plant_strength = 4\necapa.channels = 16\necapa.res2_scale = 4\n\
         ecapa.se_bottleneck = 8\necapa.attention_channels = 8\necapa.embed_dim = 16\n\
         train.stage1_epochs = 1\ntrain.stage2_epochs = 1\ntrain.lmft_epochs = 1\ntrain.batch_size = 4\n\
         train.lmft_crop_seconds = 2\nsynth.n_speakers = 4\nsynth.utts_per_speaker = 4\nsynth.utt_seconds = 1\n\
         synth.heldout_per_speaker = 2\n",
    )
    .map_err(|e| e.to_string())?;
    let p = |name: &str| root.join(name).display().to_string();
    let c = p("run.cfg");
    cli_run(&["--config", &c, "synth-data", "--out", &p("corpus")])?;
    cli_run(&["--config", &c, "train", "--out", &p("model.svck")])?;
    cli_run(&[
        "--config",
        &c,
        "embed",
        "--checkpoint",
        &p("model.svck"),
        "--manifest",
        &p("corpus/heldout.tsv"),
        "--out",
        &p("held.sveb"),
    ])?;
    cli_run(&[
        "--config",
        &c,
        "score",
        "--embeddings",
        &p("held.sveb"),
        "--trials",
        &p("corpus/trials.txt"),
        "--out",
        &p("scores.txt"),
    ])?;
    let line = cli_run(&["--config", &c, "eval", "--scores", &p("scores.txt"), "--trials", &p("corpus/trials.txt")])?;
    let bytes = std::fs::read(root.join("scores.txt")).map_err(|e| e.to_string())?;
    Ok((bytes, line))
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (sa, la) = pipeline(a.path())?;
    let (sb, lb) = pipeline(b.path())?;
    ensure(!sa.is_empty(), || "empty score file".into())?;
    ensure(sa == sb, || "score files differ between identical runs".into())?;
    let ca = std::fs::read(a.path().join("model.svck")).map_err(|e| e.to_string())?;
    let cb = std::fs::read(b.path().join("model.svck")).map_err(|e| e.to_string())?;
    ensure(ca == cb, || "checkpoints differ between identical runs".into())?;
    ensure(la == lb, || format!("eval lines differ: `{la}` vs `{lb}`"))?;
    Ok(format!("score files byte-identical ({} B), checkpoints identical; {la}", sa.len()))
}

// ---------------------------------------------------------------- 10

fn calibration_safety() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let n = rng.random_range(20..=200);
        let shift = rng.random_range(0.3..3.0);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| rng.sample::<f64, _>(StandardNormal) + if l { shift } else { 0.0 })
            .collect();
        let quality = vec![Vec::new(); n];
        let model = fit_calibration(&scores, &labels, &quality).map_err(|e| format!("set {k}: {e}"))?;
        ensure(model.a > 0.0, || format!("set {k}: fitted a = {}", model.a))?;
        let cal = apply_calibration(&model, &scores, &quality).map_err(|e| e.to_string())?;
        let r0 = eer(&scores, &labels).map_err(|e| e.to_string())?.0;
        let r1 = eer(&cal, &labels).map_err(|e| e.to_string())?.0;
        worst = worst.max((r0 - r1).abs());
        ensure((r0 - r1).abs() <= 1e-12, || format!("set {k}: EER {r0} -> {r1}"))?;
        // rank order preserved
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j)));
            idx
        };
        ensure(order(&scores) == order(&cal), || format!("set {k}: rank order changed"))?;
    }
    Ok(format!("50 sets, a > 0 in all, max EER change {worst:.1e}"))
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, r: Check| {
        match &r {
            Ok(d) => println!("criterion {n:>2} {name}: PASS ({d})"),
            Err(d) => {
                println!("criterion {n:>2} {name}: FAIL ({d})");
                failed.push(n);
            }
        }
    };
    report(1, "gradient fidelity", gradient_fidelity());
    report(2, "EER oracle equivalence", eer_oracle());
    report(3, "s-norm oracle equivalence", snorm_oracle());
    report(4, "freeze contract", freeze_contract());
    let desk = desk_run();
    report(5, "desk-scale separability", separability(&desk));
    report(6, "aggregation reduction", aggregation_reduction(&desk));
    report(7, "published-default fidelity", published_defaults());
    report(8, "parameter count", parameter_count());
    report(9, "determinism", determinism());
    report(10, "calibration safety", calibration_safety());
    if failed.is_empty() {
        println!("acceptance: all 10 criteria PASS");
    } else {
        println!("acceptance: FAIL on criteria {failed:?}");
        std::process::exit(1);
    }
}
