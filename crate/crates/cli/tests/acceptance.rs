//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ebur128::{EbuR128, Mode};
use emocot_core::audio::Waveform;
use emocot_core::cotgen::{render_explicit_target, validate_cot, CotContext, CotMode, Levels};
use emocot_core::curriculum::{emit_schedule, explicit_fraction, p_explicit, Schedule};
use emocot_core::features::{integrated_loudness, pitch_contour, pitch_mean, Level, PitchConfig};
use emocot_core::fusion::{fuse_corpus, harmonize, HarmonizationMap, Harmonized};
use emocot_core::losskernel::{
    category_contrastive_loss, grad_check_contrastive, total_loss, EmbeddingBatch, LossWeights,
    Matrix, DEFAULT_FD_EPS,
};
use emocot_core::metrics::{extract_label, score};
use emocot_core::stats::{discretize, Accumulator};
use emocot_core::{EmotionLabel, Language, UtteranceRecord};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn discretization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let triples: Vec<(f64, f64, f64)> = (0..100_000)
        .map(|_| {
            let mean = rng.gen_range(-500.0..500.0);
            let std = rng.gen_range(0.0..100.0);
            let value = match rng.gen_range(0..5) {
                0 => mean - std,
                1 => mean + std,
                _ => rng.gen_range(-800.0..800.0),
            };
            (value, mean, std)
        })
        .collect();
    let start = Instant::now();
    let mut mismatches = 0;
    for &(v, m, s) in &triples {
        let want = if v < m - s {
            Level::Low
        } else if v > m + s {
            Level::High
        } else {
            Level::Medium
        };
        if discretize(v, m, s).map_err(|e| e.to_string())? != want {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && elapsed < Duration::from_secs(1),
        format!("{mismatches} mismatches in 100000, {elapsed:.2?}"),
    )
}

fn statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let values: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-30.0..-5.0)).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let merged = values
        .chunks(1237)
        .map(|c| Accumulator::from_values(c.iter().copied()))
        .fold(Accumulator::default(), |a, b| a.merge(&b));
    let (em, es) = (rel(merged.mean, mean), rel(merged.population_std(), std));
    check(
        em < 1e-9 && es < 1e-9,
        format!("mean rel err {em:.2e}, std rel err {es:.2e}"),
    )
}

fn sine(freq: f64, amp: f64, seconds: f64, sr: u32) -> Vec<f32> {
    let n = (seconds * sr as f64).round() as usize;
    (0..n)
        .map(|i| (amp * (2.0 * PI * freq * i as f64 / sr as f64).sin()) as f32)
        .collect()
}

fn loudness() -> Outcome {
    let sr = 48_000;
    let ours = |x: Vec<f32>| -> Result<f64, String> {
        integrated_loudness(&Waveform::new(x, sr).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())
    };
    let reference = |x: &[f32]| -> Result<f64, String> {
        let mut meter = EbuR128::new(1, sr, Mode::I).map_err(|e| e.to_string())?;
        meter.add_frames_f32(x).map_err(|e| e.to_string())?;
        meter.loudness_global().map_err(|e| e.to_string())
    };
    let mut detail = Vec::new();
    let mut ok = true;
    for (amp, expected) in [(1.0, -3.01), (0.1, -23.01)] {
        let x = sine(997.0, amp, 5.0, sr);
        let r = reference(&x)?;
        let got = ours(x)?;
        ok &= (got - r).abs() <= 0.1 && (got - expected).abs() <= 0.1;
        detail.push(format!("{got:.3} (ref {r:.3})"));
    }
    let base = ours(sine(997.0, 1.0, 5.0, sr))?;
    let mut worst: f64 = 0.0;
    for db in (-40..=0).step_by(5) {
        let amp = 10f64.powf(db as f64 / 20.0);
        let got = ours(sine(997.0, amp, 5.0, sr))?;
        worst = worst.max((got - base - db as f64).abs());
    }
    ok &= worst <= 0.05;
    detail.push(format!("gain linearity {worst:.4} LU"));
    check(ok, detail.join(", "))
}

fn pitch() -> Outcome {
    let sr = 16_000;
    let mut detail = Vec::new();
    let mut ok = true;
    for f in [80.0, 120.0, 220.0, 330.0, 440.0] {
        let w = Waveform::new(sine(f, 0.5, 1.0, sr), sr).map_err(|e| e.to_string())?;
        let contour = pitch_contour(&w, &PitchConfig::default()).map_err(|e| e.to_string())?;
        let Some(mean) = pitch_mean(&contour) else {
            return Err(format!("{f} Hz: no voiced frames"));
        };
        let err = rel(mean, f);
        ok &= err <= 0.02;
        detail.push(format!("{f}:{:.3}%", 100.0 * err));
    }
    check(ok, detail.join(" "))
}

fn oracle_contrastive(rows: &[Vec<f64>], labels: &[EmotionLabel], tau: f64) -> f64 {
    let cos = |i: usize, j: usize| {
        let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
        let n = |k: usize| rows[k].iter().map(|a| a * a).sum::<f64>().sqrt();
        dot / (n(i) * n(j))
    };
    let b = rows.len();
    let (mut total, mut anchors) = (0.0, 0);
    for i in 0..b {
        let pos: Vec<usize> = (0..b)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..b)
            .filter(|&a| a != i)
            .map(|a| (cos(i, a) / tau).exp())
            .sum();
        total -= pos
            .iter()
            .map(|&p| ((cos(i, p) / tau).exp() / denom).ln())
            .sum::<f64>()
            / pos.len() as f64;
        anchors += 1;
    }
    total / anchors as f64
}

fn loss_kernel() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tau = LossWeights::default().temperature;
    let (mut worst_loss, mut worst_grad): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let b = rng.gen_range(2..=8);
        let d = rng.gen_range(1..=16);
        let rows: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut labels: Vec<EmotionLabel> = (0..b - 1)
            .map(|_| EmotionLabel::ALL[rng.gen_range(0..7)])
            .collect();
        labels.push(labels[0]);
        let batch = EmbeddingBatch::new(
            Matrix::from_rows(rows.clone()).map_err(|e| e.to_string())?,
            labels.clone(),
        )
        .map_err(|e| e.to_string())?;
        let got = category_contrastive_loss(&batch, tau).map_err(|e| e.to_string())?;
        worst_loss = worst_loss.max((got - oracle_contrastive(&rows, &labels, tau)).abs());
        let g = grad_check_contrastive(&batch, tau, DEFAULT_FD_EPS).map_err(|e| e.to_string())?;
        worst_grad = worst_grad.max(g.max_relative_error);
    }
    let total = total_loss(0.5, 0.2, 0.01, &LossWeights::default());
    let elapsed = start.elapsed();
    check(
        worst_loss < 1e-9
            && worst_grad < 1e-4
            && (total - 1.52).abs() < 1e-12
            && elapsed < Duration::from_secs(10),
        format!(
            "loss err {worst_loss:.2e}, grad err {worst_grad:.2e}, total {total}, {elapsed:.2?}"
        ),
    )
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_emocot"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
                .lines()
                .last()
                .unwrap_or_default()
        ))
    }
}

fn curriculum() -> Outcome {
    let endpoints = (p_explicit(0, 10_000), p_explicit(10_000, 10_000));
    let endpoints_ok = matches!(endpoints, (Ok(a), Ok(b)) if a == 1.0 && b == 0.0);
    let template = |id: usize, mode| emocot_core::cotgen::CotSample {
        utterance_id: format!("u{id}"),
        mode,
        prompt_text: String::new(),
        target_text: String::new(),
        source: emocot_core::cotgen::CotSource::Template,
    };
    let ex: Vec<_> = (0..5).map(|i| template(i, CotMode::Explicit)).collect();
    let im: Vec<_> = (0..5).map(|i| template(i, CotMode::Implicit)).collect();
    let plan = Schedule::new(10_000, 7).map_err(|e| e.to_string())?;
    let fraction = explicit_fraction(&emit_schedule(&ex, &im, &plan).map_err(|e| e.to_string())?);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    emocot_core::manifest::write_jsonl(&ex, p("ex.jsonl")).map_err(|e| e.to_string())?;
    emocot_core::manifest::write_jsonl(&im, p("im.jsonl")).map_err(|e| e.to_string())?;
    for name in ["a.jsonl", "b.jsonl"] {
        run_cli(&[
            "schedule",
            "--explicit",
            &p("ex.jsonl"),
            "--implicit",
            &p("im.jsonl"),
            "--steps",
            "10000",
            "--seed",
            "7",
            "--out",
            &p(name),
        ])?;
    }
    let same = std::fs::read(p("a.jsonl")).ok() == std::fs::read(p("b.jsonl")).ok();
    check(
        endpoints_ok && (fraction - 0.5).abs() <= 0.02 && same,
        format!("endpoints {endpoints:?}, explicit fraction {fraction:.4}, identical files {same}"),
    )
}

fn cot_closure() -> Outcome {
    let mut passed = 0;
    for emotion in EmotionLabel::ALL {
        for levels in Levels::all_combinations() {
            let transcript = "we will see about that";
            let target =
                render_explicit_target(levels, transcript, emotion).map_err(|e| e.to_string())?;
            let ctx = CotContext {
                utterance_id: "x".into(),
                levels,
                transcript: transcript.into(),
                emotion,
            };
            if validate_cot(&target, CotMode::Explicit, &ctx).is_accepted()
                && extract_label(&target) == Some(emotion)
            {
                passed += 1;
            }
        }
    }
    check(passed == 189, format!("{passed}/189"))
}

fn metrics() -> Outcome {
    use EmotionLabel::{Anger as A, Sadness as B};
    let s = score(&[(A, Some(A)), (A, Some(B)), (B, Some(B)), (B, Some(B))])
        .map_err(|e| e.to_string())?;
    let fixture = (s.wa - 0.75).abs() < 1e-6
        && (s.ua - 0.75).abs() < 1e-6
        && (s.macro_f1 - 0.733333).abs() < 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut balanced_ok = 0;
    for _ in 0..100 {
        let mut classes = EmotionLabel::ALL.to_vec();
        classes.shuffle(&mut rng);
        classes.truncate(rng.gen_range(1..=7));
        let per = rng.gen_range(1..=15);
        let pairs: Vec<_> = classes
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, per))
            .map(|r| {
                let p = rng.gen_range(0..8);
                (r, EmotionLabel::ALL.get(p).copied())
            })
            .collect();
        let sc = score(&pairs).map_err(|e| e.to_string())?;
        if sc.wa == sc.ua {
            balanced_ok += 1;
        }
    }
    check(
        fixture && balanced_ok == 100,
        format!(
            "WA {:.6} UA {:.6} MacroF1 {:.6}, balanced WA==UA {balanced_ok}/100",
            s.wa, s.ua, s.macro_f1
        ),
    )
}

fn fusion() -> Outcome {
    let map = HarmonizationMap::default();
    let attested = ["excited", "amused", "joy", "happy"]
        .iter()
        .all(|r| harmonize(r, &map) == Harmonized::Label(EmotionLabel::Happiness));
    let raw = [
        "neutral",
        "happiness",
        "sadness",
        "anger",
        "surprise",
        "disgust",
        "fear",
        "excited",
        "amused",
        "joy",
        "happy",
        "angry",
        "sleepy",
        "bored",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ok_corpora = 0;
    for c in 0..50 {
        let n = rng.gen_range(0..200);
        let records: Vec<UtteranceRecord> = (0..n)
            .map(|i| {
                let mut r =
                    UtteranceRecord::new(format!("c{c}-{i}"), "a.wav", "text", Language::En, 1.0);
                r.speech_emotion = Some(raw[rng.gen_range(0..raw.len())].into());
                r.text_emotion = Some(raw[rng.gen_range(0..raw.len())].into());
                r
            })
            .collect();
        let result = fuse_corpus(records, &map).map_err(|e| e.to_string())?;
        if result.fused.len() + result.rejected_count() == n {
            ok_corpora += 1;
        }
    }
    check(
        attested && ok_corpora == 50,
        format!("attested mappings {attested}, partition holds on {ok_corpora}/50 corpora"),
    )
}

fn tree(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(files)
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    let mut slowest = Duration::ZERO;
    for run in ["run1", "run2"] {
        let out = dir.path().join(run);
        let start = Instant::now();
        run_cli(&["demo", "--seed", "7", "--out", &out.to_string_lossy()])?;
        slowest = slowest.max(start.elapsed());
        trees.push(tree(&out)?);
    }
    let wavs = trees[0]
        .keys()
        .filter(|p| p.extension().is_some_and(|e| e == "wav"))
        .count();
    let has_report = trees[0].contains_key(Path::new("report.json"));
    let identical = trees[0] == trees[1];
    check(
        wavs == 20 && has_report && identical && slowest < Duration::from_secs(60),
        format!(
            "{wavs} wavs, report.json {has_report}, {} files byte-identical {identical}, slowest run {slowest:.2?}",
            trees[0].len()
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("discretization conformance", discretization),
        ("sharded statistics", statistics),
        ("integrated loudness", loudness),
        ("pitch accuracy", pitch),
        ("loss kernel", loss_kernel),
        ("curriculum schedule", curriculum),
        ("cot closure", cot_closure),
        ("metrics", metrics),
        ("label fusion", fusion),
        ("end-to-end demo", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    println!(
        "acceptance: {}/{} passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
