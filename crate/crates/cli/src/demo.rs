//! Synthetic end-to-end run: builds a small corpus of harmonic tones with
//! seeded annotations, then drives every stage through the same functions
//! the subcommands use.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use anyhow::Context;
use emocot_core::audio::{write_wav_pcm16, Waveform};
use emocot_core::cotgen::{CotMode, CotSample};
use emocot_core::fusion::HarmonizationMap;
use emocot_core::losskernel::{Matrix, TensorPair};
use emocot_core::manifest::{read_jsonl, read_manifest, write_jsonl, write_manifest};
use emocot_core::metrics::Hypothesis;
use emocot_core::stats::SigmaKind;
use emocot_core::{EmotionLabel, Language, UtteranceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commands::{self, ExtractorKind, FuseArgs, LossBatch};
use crate::config::Config;

pub const UTTERANCES: usize = 20;
const SAMPLE_RATE: u32 = 16_000;
const DEMO_STEPS: u64 = 200;

const TRANSCRIPTS: &[(&str, &str)] = &[
    ("en", "the train leaves at seven tomorrow morning"),
    ("en", "we moved the meeting to the second floor"),
    ("en", "please bring the blue folder with you"),
    ("zh", "今天下午我们去公园散步"),
    ("en", "i never expected the package to arrive today"),
    ("en", "she painted the fence over the weekend"),
    ("zh", "这份报告明天需要交"),
    ("en", "they will announce the results after lunch"),
    ("zh", "窗外的雨一直没有停"),
    ("en", "the garden looks different this year"),
];

/// Base pitch (Hz) and peak amplitude per class.
fn voice(e: EmotionLabel) -> (f64, f64) {
    match e {
        EmotionLabel::Neutral => (140.0, 0.30),
        EmotionLabel::Happiness => (220.0, 0.50),
        EmotionLabel::Sadness => (110.0, 0.15),
        EmotionLabel::Anger => (240.0, 0.70),
        EmotionLabel::Surprise => (280.0, 0.45),
        EmotionLabel::Disgust => (120.0, 0.25),
        EmotionLabel::Fear => (200.0, 0.20),
    }
}

/// Raw annotator vocabulary, so harmonization has something to do.
fn raw_label(e: EmotionLabel, rng: &mut ChaCha8Rng) -> String {
    let choices: &[&str] = match e {
        EmotionLabel::Happiness => &["happiness", "excited", "joy", "happy"],
        EmotionLabel::Anger => &["anger", "angry"],
        EmotionLabel::Sadness => &["sadness", "sad"],
        _ => &[e.as_str()],
    };
    choices[rng.gen_range(0..choices.len())].to_string()
}

fn synth(
    f0: f64,
    peak: f64,
    voiced_s: f64,
    lead_s: f64,
    tail_s: f64,
    rng: &mut ChaCha8Rng,
) -> Waveform {
    let sr = SAMPLE_RATE as f64;
    let n_lead = (lead_s * sr) as usize;
    let n_voiced = (voiced_s * sr) as usize;
    let n_tail = (tail_s * sr) as usize;
    let phases: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..TAU)).collect();
    let glide = rng.gen_range(-0.04..0.04);
    let fade = (0.01 * sr) as usize;

    let mut tone = Vec::with_capacity(n_voiced);
    let mut phase = 0.0;
    for i in 0..n_voiced {
        let frac = i as f64 / n_voiced as f64;
        let f = f0 * (1.0 + glide * (frac - 0.5));
        phase += TAU * f / sr;
        let s: f64 = phases
            .iter()
            .enumerate()
            .map(|(k, p)| ((k + 1) as f64 * phase + p).sin() / (k + 1) as f64)
            .sum();
        let env = (i.min(n_voiced - 1 - i) as f64 / fade as f64).min(1.0);
        tone.push(s * env);
    }
    let max = tone.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut samples: Vec<f32> = Vec::with_capacity(n_lead + n_voiced + n_tail);
    let noise = |rng: &mut ChaCha8Rng| rng.gen_range(-1e-3..1e-3) as f32;
    samples.extend((0..n_lead).map(|_| noise(rng)));
    samples.extend(tone.iter().map(|v| (v / max * peak) as f32));
    samples.extend((0..n_tail).map(|_| noise(rng)));
    Waveform::new(samples, SAMPLE_RATE).expect("synthetic samples are in range")
}

fn build_corpus(seed: u64, out: &Path) -> anyhow::Result<Vec<UtteranceRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wav_dir = out.join("wav");
    fs::create_dir_all(&wav_dir).with_context(|| format!("creating {}", wav_dir.display()))?;
    let mut records = Vec::with_capacity(UTTERANCES);
    for i in 0..UTTERANCES {
        let emotion = EmotionLabel::ALL[i % EmotionLabel::ALL.len()];
        let (f0, peak) = voice(emotion);
        let f0 = f0 * rng.gen_range(0.9..1.1);
        let peak = peak * rng.gen_range(0.8..1.2);
        let wave = synth(
            f0,
            peak,
            rng.gen_range(1.2..2.8),
            rng.gen_range(0.15..0.5),
            rng.gen_range(0.15..0.5),
            &mut rng,
        );
        let id = format!("u{i:02}");
        let rel = Path::new("wav").join(format!("{id}.wav"));
        write_wav_pcm16(out.join(&rel), &wave)?;

        let (lang, text) = TRANSCRIPTS[rng.gen_range(0..TRANSCRIPTS.len())];
        let mut record =
            UtteranceRecord::new(&id, rel, text, Language::from(lang), wave.duration_s());
        record.speech_emotion = Some(raw_label(emotion, &mut rng));
        let roll: f64 = rng.gen();
        record.text_emotion = Some(if roll < 0.15 {
            let other = EmotionLabel::ALL[(emotion.index() + rng.gen_range(1..7)) % 7];
            raw_label(other, &mut rng)
        } else if roll < 0.2 {
            "sleepy".to_string()
        } else {
            raw_label(emotion, &mut rng)
        });
        records.push(record);
    }
    Ok(records)
}

fn loss_batch(rng: &mut ChaCha8Rng) -> anyhow::Result<LossBatch> {
    let mut rows = |r: usize, c: usize| -> Vec<Vec<f64>> {
        (0..r)
            .map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    };
    let embeddings = rows(8, 16);
    let labels = (0..8).map(|i| EmotionLabel::ALL[i % 4]).collect();
    let pair = |s: Vec<Vec<f64>>, t: Vec<Vec<f64>>| -> anyhow::Result<TensorPair> {
        Ok(TensorPair {
            student: Matrix::from_rows(s)?,
            teacher: Matrix::from_rows(t)?,
        })
    };
    let frame = pair(rows(10, 16), rows(10, 16))?;
    let utt = pair(rows(8, 16), rows(8, 16))?;
    Ok(LossBatch {
        embeddings,
        labels,
        frame: Some(frame),
        utt: Some(utt),
    })
}

/// Model outputs derived from the explicit targets: most are kept, some
/// name the wrong class, and some lose their conclusion entirely.
fn hypotheses(
    samples: &[CotSample],
    refs: &[UtteranceRecord],
    rng: &mut ChaCha8Rng,
) -> Vec<Hypothesis> {
    samples
        .iter()
        .zip(refs)
        .map(|(s, r)| {
            let label = r.fused_emotion.expect("fused");
            let marker = format!("inferred to be {label}");
            let roll: f64 = rng.gen();
            let text = if roll < 0.15 {
                let wrong = EmotionLabel::ALL[(label.index() + rng.gen_range(1..7)) % 7];
                s.target_text
                    .replace(&marker, &format!("inferred to be {wrong}"))
            } else if roll < 0.3 {
                s.target_text
                    .split(" Based on")
                    .next()
                    .unwrap_or_default()
                    .to_string()
            } else {
                s.target_text.clone()
            };
            Hypothesis {
                id: s.utterance_id.clone(),
                text,
            }
        })
        .collect()
}

pub fn run(seed: u64, out: &Path, cfg: &Config) -> anyhow::Result<()> {
    let mut cfg = cfg.clone();
    if cfg.llm_url.take().is_some() {
        log::info!("demo ignores the chat endpoint and uses template targets");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let manifest = out.join("manifest.jsonl");
    write_manifest(&build_corpus(seed, out)?, &manifest)?;
    log::info!("wrote {UTTERANCES} synthetic utterances");

    let features = out.join("features.jsonl");
    commands::extract_features(&manifest, &features, &cfg)?;

    let map = commands::write_map(&HarmonizationMap::default(), &out.join("harmonize.toml"))?;
    let fused = out.join("fused.jsonl");
    commands::fuse_labels(
        &FuseArgs {
            manifest: &features,
            map: Some(&map),
            out: &fused,
            rejects: &out.join("rejects.jsonl"),
        },
        &cfg,
    )?;

    let stats = out.join("stats.json");
    commands::build_stats(&fused, &stats)?;
    let discretized = out.join("discretized.jsonl");
    commands::discretize(&fused, &stats, &discretized, SigmaKind::Population)?;

    let explicit = out.join("cot_explicit.jsonl");
    let implicit = out.join("cot_implicit.jsonl");
    commands::gen_cot(&discretized, CotMode::Explicit, &explicit, &cfg)?;
    commands::gen_cot(&discretized, CotMode::Implicit, &implicit, &cfg)?;

    commands::schedule(
        &explicit,
        &implicit,
        &out.join("stream.jsonl"),
        cfg.steps.unwrap_or(DEMO_STEPS),
        seed,
        &cfg,
    )?;

    // Independent streams so each synthetic artefact is stable on its own.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let batch = out.join("batch.json");
    commands::write_loss_batch(&loss_batch(&mut rng)?, &batch)?;
    commands::loss_check(&batch, Some(&out.join("loss.json")), &cfg)?;

    rng.set_stream(2);
    let refs = read_manifest(&discretized)?.records;
    let samples: Vec<CotSample> = read_jsonl(&explicit)?;
    let hyps = out.join("hyps.jsonl");
    write_jsonl(&hypotheses(&samples, &refs, &mut rng), &hyps)?;
    commands::evaluate(
        &discretized,
        &hyps,
        &out.join("report.json"),
        ExtractorKind::Rules,
        &cfg,
    )?;

    commands::report(&fused, &out.join("distribution.json"))?;
    log::info!("demo finished in {}", out.display());
    Ok(())
}
