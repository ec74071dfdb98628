//! One function per pipeline stage. No stage writes over its own inputs.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use emocot_core::audio::decode_wav;
use emocot_core::cotgen::chat::{ChatClient, ChatEndpoint};
use emocot_core::cotgen::{generate, CotContext, CotMode, CotSample};
use emocot_core::curriculum::{emit_schedule, explicit_fraction, Schedule};
use emocot_core::features::{
    extract_attributes, resolve_phoneme_count, ExtractConfig, RuleBasedPhonemizer,
};
use emocot_core::fusion::{fuse_corpus, HarmonizationMap};
use emocot_core::losskernel::{
    category_contrastive_loss, frame_loss, grad_check_contrastive, grad_check_mse, total_loss,
    utt_loss, EmbeddingBatch, FramePair, UttPair,
};
use emocot_core::manifest::{
    distribution_report, filter_duration, read_jsonl, read_manifest, write_jsonl, write_manifest,
};
use emocot_core::metrics::{
    score_freeform, EvaluationReport, Hypothesis, LabelExtractor, Reference, RemoteExtractor,
    RuleExtractor,
};
use emocot_core::stats::{discretize_attributes, CorpusStats, SigmaKind};
use emocot_core::{EmotionLabel, UtteranceRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::CliError;

pub const API_KEY_VAR: &str = "EMOCOT_API_KEY";

/// Gradient checks above this relative error fail `loss-check`.
pub const GRAD_TOLERANCE: f64 = 1e-4;

fn ensure_distinct(out: &Path, inputs: &[&Path]) -> anyhow::Result<()> {
    let canon = |p: &Path| fs::canonicalize(p).ok();
    if let Some(o) = canon(out) {
        if inputs.iter().any(|i| canon(i).as_ref() == Some(&o)) {
            bail!(CliError::InPlace(out.to_path_buf()));
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn thread_pool(jobs: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    Ok(builder.build()?)
}

fn chat_client(cfg: &Config) -> anyhow::Result<Option<ChatClient>> {
    let Some(url) = &cfg.llm_url else {
        return Ok(None);
    };
    let Some(model) = &cfg.llm_model else {
        bail!(emocot_core::Error::Config(
            "a model name is required with an endpoint URL".into()
        ));
    };
    let mut endpoint = ChatEndpoint::new(url.clone(), model.clone());
    endpoint.temperature = cfg.llm_temperature;
    endpoint.api_key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
    if endpoint.api_key.is_none() {
        log::warn!("{API_KEY_VAR} is not set; sending requests without credentials");
    }
    Ok(Some(ChatClient::new(endpoint)?))
}

pub fn extract_features(manifest: &Path, out: &Path, cfg: &Config) -> anyhow::Result<()> {
    ensure_distinct(out, &[manifest])?;
    let records = read_manifest(manifest)?.records;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let extract = ExtractConfig {
        trim: cfg.trim(),
        pitch: cfg.pitch(),
    };
    let phonemizer = RuleBasedPhonemizer;
    let process = |mut r: UtteranceRecord| -> anyhow::Result<UtteranceRecord> {
        let path = base.join(&r.audio_path);
        let wave = decode_wav(&path).with_context(|| format!("utterance {}", r.id))?;
        let phonemes =
            resolve_phoneme_count(r.phoneme_count, &r.transcript, &r.language, &phonemizer)
                .with_context(|| format!("utterance {}", r.id))?;
        let (attrs, trimmed) = extract_attributes(&wave, phonemes, &extract)
            .with_context(|| format!("utterance {}", r.id))?;
        log::debug!(
            "{}: trimmed {:.3}s of {:.3}s",
            r.id,
            trimmed,
            wave.duration_s()
        );
        if attrs.pitch_mean_hz.is_none() {
            log::warn!("{}: no voiced frames", r.id);
        }
        r.duration_s = wave.duration_s();
        r.phoneme_count = Some(phonemes);
        r.attributes = Some(attrs);
        Ok(r)
    };
    let processed: Vec<UtteranceRecord> = thread_pool(cfg.jobs)?.install(|| {
        records
            .into_par_iter()
            .map(process)
            .collect::<anyhow::Result<_>>()
    })?;
    write_manifest(&processed, out)?;
    log::info!("extracted attributes for {} utterances", processed.len());
    Ok(())
}

pub fn build_stats(manifest: &Path, out: &Path) -> anyhow::Result<()> {
    ensure_distinct(out, &[manifest])?;
    let records = read_manifest(manifest)?.records;
    let stats = CorpusStats::from_records(&records);
    for (name, acc) in [
        ("pitch", &stats.pitch),
        ("loudness", &stats.loudness),
        ("rate", &stats.rate),
    ] {
        log::info!(
            "{name}: n={} mean={:.4} std={:.4}",
            acc.n,
            acc.mean,
            acc.population_std()
        );
    }
    stats.save(out)?;
    Ok(())
}

pub fn discretize(
    manifest: &Path,
    stats: &Path,
    out: &Path,
    sigma: SigmaKind,
) -> anyhow::Result<()> {
    ensure_distinct(out, &[manifest, stats])?;
    let records = read_manifest(manifest)?.records;
    let stats = CorpusStats::load(stats)?;
    let records = discretize_attributes(records, &stats, sigma)?;
    write_manifest(&records, out)?;
    Ok(())
}

pub fn gen_cot(manifest: &Path, mode: CotMode, out: &Path, cfg: &Config) -> anyhow::Result<()> {
    ensure_distinct(out, &[manifest])?;
    let records = read_manifest(manifest)?.records;
    let contexts = records
        .iter()
        .map(CotContext::from_record)
        .collect::<Result<Vec<_>, _>>()?;
    let client = chat_client(cfg)?;
    let (samples, report) = generate(&contexts, mode, client.as_ref(), cfg.in_flight)?;
    if client.is_some() {
        log::info!(
            "{} samples: {} paraphrased, {} rejected ({:.1}%), {} transport failures",
            report.total,
            report.llm_accepted,
            report.llm_rejected,
            100.0 * report.rejected_fraction(),
            report.transport_failures
        );
    }
    write_jsonl(&samples, out)?;
    Ok(())
}

pub struct FuseArgs<'a> {
    pub manifest: &'a Path,
    pub map: Option<&'a Path>,
    pub out: &'a Path,
    pub rejects: &'a Path,
}

pub fn fuse_labels(args: &FuseArgs, cfg: &Config) -> anyhow::Result<()> {
    let mut inputs = vec![args.manifest];
    inputs.extend(args.map);
    ensure_distinct(args.out, &inputs)?;
    ensure_distinct(args.rejects, &inputs)?;
    let map = match args.map {
        Some(path) => HarmonizationMap::load(path)?,
        None => HarmonizationMap::default(),
    };
    let records = read_manifest(args.manifest)?.records;
    let (records, too_long) = filter_duration(records, cfg.max_duration_s);
    if too_long > 0 {
        log::info!(
            "dropped {too_long} utterances longer than {}s",
            cfg.max_duration_s
        );
    }
    let result = thread_pool(cfg.jobs)?.install(|| fuse_corpus(records, &map))?;
    log::info!(
        "fused {}, rejected {}",
        result.fused.len(),
        result.rejected_count()
    );
    write_manifest(&result.fused, args.out)?;
    write_manifest(&result.rejected, args.rejects)?;
    Ok(())
}

pub fn schedule(
    explicit: &Path,
    implicit: &Path,
    out: &Path,
    steps: u64,
    seed: u64,
    cfg: &Config,
) -> anyhow::Result<()> {
    ensure_distinct(out, &[explicit, implicit])?;
    let ex: Vec<CotSample> = read_jsonl(explicit)?;
    let im: Vec<CotSample> = read_jsonl(implicit)?;
    let plan = Schedule::new(steps, seed)?.with_batch_size(cfg.batch_size)?;
    let stream = emit_schedule(&ex, &im, &plan)?;
    log::info!(
        "{} batches, explicit fraction {:.4}",
        stream.len(),
        explicit_fraction(&stream)
    );
    write_jsonl(&stream, out)?;
    Ok(())
}

/// Input to `loss-check`: pooled embeddings with labels, plus optional
/// student/teacher pairs for the frame and utterance terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossBatch {
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<EmotionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<FramePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utt: Option<UttPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub frame: f64,
    pub utt: f64,
    pub cate: f64,
    pub total: f64,
    pub lambda_utt: f64,
    pub lambda_cate: f64,
    pub tau: f64,
    pub grad_max_relative_error: f64,
}

pub fn loss_check(batch: &Path, out: Option<&Path>, cfg: &Config) -> anyhow::Result<LossReport> {
    if let Some(out) = out {
        ensure_distinct(out, &[batch])?;
    }
    let input: LossBatch = read_json(batch)?;
    let matrix = emocot_core::losskernel::Matrix::from_rows(input.embeddings)?;
    let embeddings = EmbeddingBatch::new(matrix, input.labels)?;
    let weights = cfg.loss_weights();
    let cate = category_contrastive_loss(&embeddings, weights.temperature)?;
    let mut grad_err =
        grad_check_contrastive(&embeddings, weights.temperature, cfg.fd_eps)?.max_relative_error;
    let mut component =
        |pair: &Option<emocot_core::losskernel::TensorPair>,
         loss: fn(&emocot_core::losskernel::TensorPair) -> emocot_core::Result<f64>|
         -> anyhow::Result<f64> {
            match pair {
                Some(p) => {
                    grad_err = grad_err.max(grad_check_mse(p, cfg.fd_eps)?.max_relative_error);
                    Ok(loss(p)?)
                }
                None => Ok(0.0),
            }
        };
    let frame = component(&input.frame, frame_loss)?;
    let utt = component(&input.utt, utt_loss)?;
    let report = LossReport {
        frame,
        utt,
        cate,
        total: total_loss(frame, utt, cate, &weights),
        lambda_utt: weights.utt,
        lambda_cate: weights.cate,
        tau: weights.temperature,
        grad_max_relative_error: grad_err,
    };
    println!(
        "frame={:.9} utt={:.9} cate={:.9} total={:.9} grad_max_rel_err={:.3e}",
        report.frame, report.utt, report.cate, report.total, report.grad_max_relative_error
    );
    if let Some(out) = out {
        write_json(&report, out)?;
    }
    if grad_err >= GRAD_TOLERANCE {
        bail!(CliError::GradCheck(grad_err));
    }
    Ok(report)
}

/// Reference lines carry either `label` directly or a fused manifest record.
fn read_references(path: &Path) -> anyhow::Result<Vec<Reference>> {
    let lines: Vec<serde_json::Value> = read_jsonl(path)?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let reference = if v.get("label").is_some() {
                serde_json::from_value::<Reference>(v)
                    .with_context(|| format!("{} line {}", path.display(), i + 1))?
            } else {
                let r: UtteranceRecord = serde_json::from_value(v)
                    .with_context(|| format!("{} line {}", path.display(), i + 1))?;
                let label = r.fused_emotion.ok_or(emocot_core::Error::MissingField {
                    id: r.id.clone(),
                    what: "fused_emotion",
                })?;
                Reference { id: r.id, label }
            };
            Ok(reference)
        })
        .collect()
}

/// Reorders hypotheses to follow the references.
fn align(refs: &[Reference], hyps: Vec<Hypothesis>) -> anyhow::Result<Vec<Hypothesis>> {
    if refs.len() != hyps.len() {
        bail!(CliError::Input(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let mut by_id: HashMap<String, Hypothesis> = HashMap::with_capacity(hyps.len());
    for h in hyps {
        if by_id.contains_key(&h.id) {
            bail!(CliError::Input(format!(
                "duplicate hypothesis id {:?}",
                h.id
            )));
        }
        by_id.insert(h.id.clone(), h);
    }
    refs.iter()
        .map(|r| {
            by_id
                .remove(&r.id)
                .ok_or_else(|| CliError::Input(format!("no hypothesis for {:?}", r.id)).into())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExtractorKind {
    Rules,
    Remote,
}

pub fn evaluate(
    refs: &Path,
    hyps: &Path,
    out: &Path,
    extractor: ExtractorKind,
    cfg: &Config,
) -> anyhow::Result<EvaluationReport> {
    ensure_distinct(out, &[refs, hyps])?;
    let references = read_references(refs)?;
    let hypotheses = align(&references, read_jsonl(hyps)?)?;
    let map = HarmonizationMap::default();
    let extractor: Box<dyn LabelExtractor> = match extractor {
        ExtractorKind::Rules => Box::new(RuleExtractor::new(map)),
        ExtractorKind::Remote => match chat_client(cfg)? {
            Some(client) => Box::new(RemoteExtractor::new(client, map)),
            None => bail!(emocot_core::Error::Config(
                "the remote extractor needs an endpoint URL".into()
            )),
        },
    };
    let scores = score_freeform(&references, &hypotheses, extractor.as_ref())?;
    let report = EvaluationReport::from(&scores);
    log::info!(
        "n={} WA={:.6} UA={:.6} MacroF1={:.6} unknown={}",
        report.n,
        report.wa,
        report.ua,
        report.macro_f1,
        report.unknown
    );
    write_json(&report, out)?;
    Ok(report)
}

pub fn report(manifest: &Path, out: &Path) -> anyhow::Result<()> {
    ensure_distinct(out, &[manifest])?;
    let records = read_manifest(manifest)?.records;
    write_json(&distribution_report(&records)?, out)
}

pub fn write_map(map: &HarmonizationMap, path: &Path) -> anyhow::Result<PathBuf> {
    fs::write(path, map.to_toml()).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

pub fn write_loss_batch(batch: &LossBatch, path: &Path) -> anyhow::Result<()> {
    write_json(batch, path)
}
