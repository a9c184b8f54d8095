//! Command-line surface. Every command returns one `status=ok key=value…` line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use crate::aggregator::export_weights;
use crate::config::{RunConfig, UpstreamMode};
use crate::error::{Error, Result};
use crate::model::{load_items, Frontend, SpeakerModel};
use crate::params::ParamStore;
use crate::scoring::{
    adaptive_snorm, apply_calibration, build_cohort, eer, ensemble, fit_calibration, generate_calibration_trials,
    score_trials, trial_quality, weights_from_eer, EmbeddingStore, ScoreSet, TrialList,
};
use crate::seed;
use crate::signal::{fbank, read_wav};
use crate::synth::{synth_corpus, TRIALS_FILE, TRAIN_FILE};
use crate::training::{train, TrainData};
use crate::upstream::{load_stack, save_stack, Manifest, ManifestRow, MockUpstream};

#[derive(Parser, Debug)]
#[command(name = "svkit", version, about = "Speaker verification on weighted speech-encoder layers")]
pub struct Cli {
    /// Run configuration (`section.key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Suppress timestamps in log output.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic formant corpus with manifests and held-out trials.
    SynthData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Log mel filterbank of one WAV as a CSV matrix (one frame per line).
    Fbank {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the mock encoder over a manifest and store every layer stack.
    UpstreamExport {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Checkpoint whose `upstream.*` tensors replace the seeded ones.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train aggregation weights, ECAPA and anchors on `paths.manifest`.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV (default: next to the checkpoint).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Embed every utterance of a manifest.
    Embed(EmbedArgs),
    /// Cosine-score a trial list, or draw labeled calibration trials.
    Score {
        #[arg(long, required_unless_present = "make_trials")]
        embeddings: Option<PathBuf>,
        /// Trial list to score.
        #[arg(long, required_unless_present = "make_trials")]
        trials: Option<PathBuf>,
        /// Instead of scoring, draw this many labeled trials from `--manifest`
        /// (default: `scoring.calibration_trials`).
        #[arg(long, num_args = 0..=1, default_missing_value = "0")]
        make_trials: Option<usize>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adaptive s-norm against a cohort of per-speaker mean embeddings.
    Snorm {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Embeddings of the cohort utterances (usually the training set).
        #[arg(long)]
        cohort_embeddings: PathBuf,
        /// Manifest giving the speakers of the cohort utterances.
        #[arg(long)]
        cohort_manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a logistic calibration on labeled scores and apply it.
    Calibrate {
        /// Labeled trial list the fit scores belong to.
        #[arg(long)]
        fit_trials: PathBuf,
        #[arg(long)]
        fit_scores: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        /// Manifests covering every utterance in both trial lists (for durations).
        #[arg(long = "manifest", required_unless_present = "score_only")]
        manifests: Vec<PathBuf>,
        /// Calibrate on the score alone, without duration features.
        #[arg(long)]
        score_only: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weighted fusion of score files over the same trials.
    Ensemble {
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        /// Comma-separated weights, renormalised to sum to 1.
        #[arg(long, conflicts_with = "eers")]
        weights: Option<String>,
        /// Comma-separated development EERs; weights become ∝ 1/EER.
        #[arg(long)]
        eers: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Equal error rate of a score file against a labeled trial list.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        trials: PathBuf,
    },
    /// Normalised aggregation weights of a checkpoint as `layer,weight` CSV.
    ExportWeights {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Loads the config file (or defaults) and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(kv.clone(), "override must look like key=value"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.finish()?;
    Ok(cfg)
}

fn parse_f64_list(key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("--{key}: cannot parse `{v}`")))
        })
        .collect()
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| Error::io(d, e)),
        _ => Ok(()),
    }
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<SpeakerModel> {
    let params = ParamStore::load(checkpoint)?;
    SpeakerModel::from_params(cfg.model_spec(), params)
        .map_err(|e| Error::format(checkpoint.display().to_string(), e.to_string()))
}

/// Seconds of audio (or of hidden-state frames) behind every manifest row.
fn durations(manifests: &[PathBuf]) -> Result<BTreeMap<String, f64>> {
    let mut rows = Vec::new();
    for m in manifests {
        rows.extend(Manifest::load(m)?.rows().to_vec());
    }
    let d: Vec<(String, f64)> = rows
        .par_iter()
        .map(|r| {
            let secs = if r.path.extension().is_some_and(|e| e == "svhs") {
                let s = load_stack(&r.path)?;
                s.frames() as f64 / f64::from(s.frame_rate_hz())
            } else {
                read_wav(&r.path)?.duration_secs()
            };
            Ok((r.utt_id.clone(), secs))
        })
        .collect::<Result<_>>()?;
    Ok(d.into_iter().collect())
}

/// Runs one command and returns its summary line.
pub fn run(cli: &Cli) -> Result<String> {
    let mut cfg = resolve_config(cli)?;
    match &cli.command {
        Command::SynthData { out } => {
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let c = synth_corpus(&cfg.synth, out)?;
            Ok(format!(
                "status=ok utterances={} train={} heldout={} trials={} manifest={} trial_list={}",
                c.all.len(),
                c.train.len(),
                c.heldout.len(),
                c.trials.len(),
                out.join(TRAIN_FILE).display(),
                out.join(TRIALS_FILE).display()
            ))
        }
        Command::Fbank { wav, out } => {
            let feats = fbank(&read_wav(wav)?, &cfg.fbank)?;
            let m = feats.frames();
            let mut text = String::new();
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.6}")).collect();
                text.push_str(&row.join(","));
                text.push('\n');
            }
            create_parent(out)?;
            std::fs::write(out, text).map_err(|e| Error::io(out, e))?;
            Ok(format!("status=ok frames={} dim={} out={}", m.rows(), m.cols(), out.display()))
        }
        Command::UpstreamExport { manifest, checkpoint, out } => {
            if let Some(m) = manifest {
                cfg.manifest = Some(m.clone());
            }
            let manifest = Manifest::load(cfg.require_manifest()?)?;
            let spec = cfg.model_spec();
            let Frontend::Mock(mock_cfg) = &spec.frontend else {
                return Err(Error::config("upstream.mode", "upstream-export needs the mock encoder"));
            };
            let upstream = match checkpoint {
                Some(ck) => MockUpstream::with_params(mock_cfg.clone(), load_model(&cfg, ck)?.upstream_params())?,
                None => MockUpstream::new(mock_cfg.clone())?,
            };
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let rows: Vec<ManifestRow> = manifest
                .rows()
                .par_iter()
                .map(|r| {
                    let stack = upstream.forward(&read_wav(&r.path)?)?;
                    let path = out.join(format!("{}.svhs", r.utt_id));
                    save_stack(&stack, &path)?;
                    Ok(ManifestRow {
                        utt_id: r.utt_id.clone(),
                        speaker_id: r.speaker_id.clone(),
                        path,
                    })
                })
                .collect::<Result<_>>()?;
            let m = Manifest::new(rows)?;
            let mpath = out.join("manifest.tsv");
            m.save(&mpath)?;
            Ok(format!(
                "status=ok utterances={} hidden_states={} dim={} manifest={}",
                m.len(),
                mock_cfg.n_layers + 1,
                mock_cfg.dim,
                mpath.display()
            ))
        }
        Command::Train { manifest, out, log } => {
            if let Some(m) = manifest {
                cfg.manifest = Some(m.clone());
            }
            let manifest = Manifest::load(cfg.require_manifest()?)?;
            manifest.require_trainable()?;
            let n_classes = manifest.speakers().len();
            let mut model = SpeakerModel::init(cfg.model_spec(), n_classes, cfg.seed)?;
            let data = TrainData::load(&model, &manifest)?;
            let opts = cfg.train_options()?;
            if cfg.mode == UpstreamMode::Import && cfg.schedule.stage2_epochs + cfg.schedule.lmft_epochs > 0 {
                warn!("imported hidden states cannot be fine-tuned; later stages only update the back-end");
            }
            let train_log = train(&mut model, &data, &opts)?;
            create_parent(out)?;
            model.params().save(out)?;
            let log_path = log.clone().unwrap_or_else(|| out.with_extension("csv"));
            create_parent(&log_path)?;
            std::fs::write(&log_path, train_log.to_csv()).map_err(|e| Error::io(&log_path, e))?;
            let loss = train_log.final_loss().map_or("none".to_string(), |l| format!("{l:.6}"));
            Ok(format!(
                "status=ok speakers={n_classes} utterances={} epochs={} final_loss={loss} checkpoint={} log={}",
                manifest.len(),
                train_log.epochs.len(),
                out.display(),
                log_path.display()
            ))
        }
        Command::Embed(a) => {
            let model = load_model(&cfg, &a.checkpoint)?;
            let manifest = Manifest::load(&a.manifest)?;
            let items = load_items(model.spec(), &manifest)?;
            let store = EmbeddingStore::from_embeddings(&model.embed_all(&items)?)?;
            create_parent(&a.out)?;
            store.save(&a.out)?;
            Ok(format!("status=ok embeddings={} dim={} out={}", store.len(), store.dim(), a.out.display()))
        }
        Command::Score {
            embeddings,
            trials,
            make_trials,
            manifest,
            out,
        } => {
            create_parent(out)?;
            if let Some(n) = *make_trials {
                let n = if n == 0 { cfg.calibration_trials } else { n };
                if let Some(m) = manifest {
                    cfg.manifest = Some(m.clone());
                }
                let m = Manifest::load(cfg.require_manifest()?)?;
                let t = generate_calibration_trials(&m, n, &mut seed::rng(cfg.seed, "calibration-trials"))?;
                t.save(out)?;
                return Ok(format!("status=ok trials={} out={}", t.len(), out.display()));
            }
            let (Some(e), Some(t)) = (embeddings, trials) else {
                unreachable!("clap requires both");
            };
            let store = EmbeddingStore::load(e)?;
            let trials = TrialList::load(t)?;
            let scores = score_trials(&trials, &store)?;
            scores.save(out)?;
            Ok(format!("status=ok trials={} out={}", scores.len(), out.display()))
        }
        Command::Snorm {
            scores,
            embeddings,
            cohort_embeddings,
            cohort_manifest,
            out,
        } => {
            let raw = ScoreSet::load(scores)?;
            let store = EmbeddingStore::load(embeddings)?;
            let cstore = EmbeddingStore::load(cohort_embeddings)?;
            let cohort = build_cohort(&cstore, &Manifest::load(cohort_manifest)?, cfg.cohort_top_k)?;
            if cohort.top_k() < cfg.cohort_top_k {
                info!("cohort has {} speakers; top_k reduced from {}", cohort.len(), cfg.cohort_top_k);
            }
            let normed = adaptive_snorm(&raw, &store, &cohort)?;
            create_parent(out)?;
            normed.save(out)?;
            Ok(format!(
                "status=ok trials={} cohort={} top_k={} out={}",
                normed.len(),
                cohort.len(),
                cohort.top_k(),
                out.display()
            ))
        }
        Command::Calibrate {
            fit_trials,
            fit_scores,
            trials,
            scores,
            manifests,
            score_only,
            out,
        } => {
            let ft = TrialList::load(fit_trials)?;
            let fs = ScoreSet::load(fit_scores)?;
            fs.check_aligned(&ft)?;
            let et = TrialList::load(trials)?;
            let es = ScoreSet::load(scores)?;
            es.check_aligned(&et)?;
            let (fq, eq) = if *score_only {
                (vec![Vec::new(); ft.len()], vec![Vec::new(); et.len()])
            } else {
                let d = durations(manifests)?;
                (trial_quality(&ft, &d)?, trial_quality(&et, &d)?)
            };
            let model = fit_calibration(&fs.scores(), &ft.labels()?, &fq)?;
            let calibrated = es.with_scores(apply_calibration(&model, &es.scores(), &eq)?)?;
            create_parent(out)?;
            calibrated.save(out)?;
            let b: Vec<String> = model.b.iter().map(|v| format!("{v:.6}")).collect();
            Ok(format!(
                "status=ok trials={} a={:.6} b={} c={:.6} out={}",
                calibrated.len(),
                model.a,
                if b.is_empty() { "none".to_string() } else { b.join(",") },
                model.c,
                out.display()
            ))
        }
        Command::Ensemble {
            scores,
            weights,
            eers,
            out,
        } => {
            let sets: Vec<ScoreSet> = scores.iter().map(ScoreSet::load).collect::<Result<_>>()?;
            let w = match (weights, eers) {
                (Some(w), _) => parse_f64_list("weights", w)?,
                (None, Some(e)) => weights_from_eer(&parse_f64_list("eers", e)?)?,
                (None, None) => vec![1.0; sets.len()],
            };
            let fused = ensemble(&sets, &w)?;
            create_parent(out)?;
            fused.save(out)?;
            let total: f64 = w.iter().sum();
            let w: Vec<String> = w.iter().map(|v| format!("{:.6}", v / total)).collect();
            Ok(format!("status=ok trials={} weights={} out={}", fused.len(), w.join(","), out.display()))
        }
        Command::Eval { scores, trials } => {
            let t = TrialList::load(trials)?;
            let s = ScoreSet::load(scores)?;
            s.check_aligned(&t)?;
            let (rate, threshold) = eer(&s.scores(), &t.labels()?)?;
            Ok(format!("status=ok eer={rate:.6} threshold={threshold:.6} trials={}", t.len()))
        }
        Command::ExportWeights { checkpoint, out } => {
            let model = load_model(&cfg, checkpoint)?;
            let w = model
                .aggregation_weights()
                .ok_or_else(|| Error::config("upstream.mode", "fbank models have no aggregation weights"))?;
            create_parent(out)?;
            std::fs::write(out, export_weights(&w, &[])?).map_err(|e| Error::io(out, e))?;
            Ok(format!("status=ok layers={} out={}", w.len(), out.display()))
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code,
/// printing the summary line or a one-line diagnostic.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.deterministic);
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            warn!("could not size the worker pool: {e}");
        }
    }
    match run(&cli) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(deterministic: bool) {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"));
    if deterministic {
        b.format_timestamp(None);
    }
    let _ = b.try_init();
}
