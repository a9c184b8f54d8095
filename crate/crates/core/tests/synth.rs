use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use svkit::signal::{fbank, read_wav, FbankConfig, SAMPLE_RATE};
use svkit::synth::{synth_corpus, synth_speaker, synth_utterance, SynthSpec};

const WELCH_FFT: usize = 64;

/// Hann-windowed Welch power spectrum, 50 % overlap.
fn welch(x: &[f64], fft: &Arc<dyn Fft<f64>>) -> Vec<f64> {
    let n = WELCH_FFT;
    let win: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    let mut acc = vec![0.0; n / 2 + 1];
    let mut start = 0;
    while start + n <= x.len() {
        let mut buf: Vec<Complex<f64>> = (0..n).map(|i| Complex::new(x[start + i] * win[i], 0.0)).collect();
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        start += n / 2;
    }
    acc
}

#[test]
fn spectral_peak_sits_on_a_formant() {
    let spec = SynthSpec::default();
    let fft = FftPlanner::new().plan_fft_forward(WELCH_FFT);
    let bin_hz = f64::from(SAMPLE_RATE) / WELCH_FFT as f64;
    for s in 0..spec.n_speakers {
        let p = synth_speaker(&spec, s).unwrap();
        for u in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64((s * 10 + u) as u64);
            let w = synth_utterance(&p, u, 2.0, spec.formant_jitter, &mut rng).unwrap();
            let psd = welch(w.samples(), &fft);
            // skip DC
            let k = (1..psd.len()).max_by(|&a, &b| psd[a].total_cmp(&psd[b])).unwrap();
            let f = k as f64 * bin_hz;
            let nearest = p
                .formants
                .iter()
                .map(|(c, _)| (c - f).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(
                nearest <= bin_hz,
                "speaker {s} utt {u}: peak at {f} Hz, formants {:?}",
                p.formants
            );
        }
    }
}

#[test]
fn formant_tuples_do_not_collide() {
    let spec = SynthSpec {
        n_speakers: 200,
        ..Default::default()
    };
    let profiles: Vec<_> = (0..spec.n_speakers).map(|i| synth_speaker(&spec, i).unwrap()).collect();
    for i in 0..profiles.len() {
        for j in i + 1..profiles.len() {
            assert_ne!(profiles[i].formants, profiles[j].formants, "speakers {i} and {j}");
        }
    }
}

fn mean_fbank(path: &std::path::Path, cfg: &FbankConfig) -> Vec<f64> {
    let f = fbank(&read_wav(path).unwrap(), cfg).unwrap();
    let m = f.frames();
    (0..m.cols())
        .map(|c| (0..m.rows()).map(|r| m.row(r)[c]).sum::<f64>() / m.rows() as f64)
        .collect()
}

#[test]
fn fbank_means_identify_speakers() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        utt_seconds: 1.0,
        ..Default::default()
    };
    let corpus = synth_corpus(&spec, dir.path()).unwrap();
    let cfg = FbankConfig::default();
    let rows = corpus.all.rows();
    let feats: Vec<Vec<f64>> = rows.iter().map(|r| mean_fbank(&r.path, &cfg)).collect();
    // leave-one-out nearest neighbour
    let mut correct = 0;
    for i in 0..rows.len() {
        let j = (0..rows.len())
            .filter(|&j| j != i)
            .min_by(|&a, &b| {
                let d = |k: usize| feats[i].iter().zip(&feats[k]).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        if rows[j].speaker_id == rows[i].speaker_id {
            correct += 1;
        }
    }
    let acc = correct as f64 / rows.len() as f64;
    let chance = 1.0 / spec.n_speakers as f64;
    assert!(acc > 10.0 * chance, "1-NN accuracy {acc}, chance {chance}");
}

#[test]
fn corpus_is_a_pure_function_of_the_spec() {
    let spec = SynthSpec {
        n_speakers: 3,
        utts_per_speaker: 3,
        utt_seconds: 1.0,
        heldout_per_speaker: 2,
        ..Default::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ca = synth_corpus(&spec, a.path()).unwrap();
    synth_corpus(&spec, b.path()).unwrap();
    for r in ca.all.rows() {
        let rel = r.path.strip_prefix(a.path()).unwrap();
        assert_eq!(std::fs::read(&r.path).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
    }
    for f in ["manifest.tsv", "train.tsv", "heldout.tsv", "trials.txt"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn full_size_corpus_cardinality() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        utt_seconds: 1.0,
        ..Default::default()
    };
    let c = synth_corpus(&spec, dir.path()).unwrap();
    assert_eq!(c.all.len(), 200);
    let wavs = walk(&dir.path().join("wav"));
    assert_eq!(wavs, 200);
    let labels = c.trials.labels().unwrap();
    let t = labels.iter().filter(|&&l| l).count() as i64;
    assert!((2 * t - labels.len() as i64).abs() <= 1);
    assert!(c.trials.trials.iter().all(|x| x.enroll != x.test));
    let peak = read_wav(&c.all.rows()[0].path)
        .unwrap()
        .samples()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    // 16-bit quantisation of a 0.5 peak
    assert!((peak - 0.5).abs() < 1.0 / 32768.0, "{peak}");
}

fn walk(dir: &std::path::Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p)
            } else {
                usize::from(p.extension().is_some_and(|x| x == "wav"))
            }
        })
        .sum()
}
