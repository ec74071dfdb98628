//! Chain-of-thought training text.
//!
//! Explicit targets narrate speaking rate, pitch, energy and the transcript
//! before naming the emotion; implicit targets name only the emotion. Both
//! have deterministic template renderings. An optional chat endpoint can
//! paraphrase the explicit prompt, and its output is accepted only if
//! [`validate_cot`] passes.

pub mod chat;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Level;
use crate::manifest::{EmotionLabel, UtteranceRecord};

pub use chat::{ChatClient, ChatEndpoint, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CotMode {
    Explicit,
    Implicit,
}

impl std::fmt::Display for CotMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CotMode::Explicit => "explicit",
            CotMode::Implicit => "implicit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CotSource {
    Template,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotSample {
    pub utterance_id: String,
    pub mode: CotMode,
    pub prompt_text: String,
    pub target_text: String,
    pub source: CotSource,
}

/// Discretized attribute levels of one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Levels {
    pub rate: Level,
    pub energy: Level,
    pub pitch: Level,
}

impl Levels {
    pub fn all_combinations() -> impl Iterator<Item = Levels> {
        Level::ALL.into_iter().flat_map(|rate| {
            Level::ALL.into_iter().flat_map(move |energy| {
                Level::ALL.into_iter().map(move |pitch| Levels {
                    rate,
                    energy,
                    pitch,
                })
            })
        })
    }
}

/// Everything a CoT text is generated from and validated against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CotContext {
    pub utterance_id: String,
    pub levels: Levels,
    pub transcript: String,
    pub emotion: EmotionLabel,
}

impl CotContext {
    /// Requires a fused emotion and all three levels.
    pub fn from_record(record: &UtteranceRecord) -> Result<Self> {
        let missing = |what| Error::MissingField {
            id: record.id.clone(),
            what,
        };
        let attrs = record
            .attributes
            .as_ref()
            .ok_or_else(|| missing("attributes"))?;
        Ok(CotContext {
            utterance_id: record.id.clone(),
            levels: Levels {
                rate: attrs
                    .rate_level
                    .ok_or_else(|| missing("attributes.rate_level"))?,
                energy: attrs
                    .energy_level
                    .ok_or_else(|| missing("attributes.energy_level"))?,
                pitch: attrs
                    .pitch_level
                    .ok_or_else(|| missing("attributes.pitch_level"))?,
            },
            transcript: record.transcript.clone(),
            emotion: record
                .fused_emotion
                .ok_or_else(|| missing("fused_emotion"))?,
        })
    }
}

fn require_transcript(transcript: &str) -> Result<()> {
    if transcript.trim().is_empty() {
        return Err(Error::InvalidArgument("empty transcript".into()));
    }
    Ok(())
}

/// The explicit-CoT generation prompt with its five slots filled in.
pub fn render_explicit_prompt(
    levels: Levels,
    transcript: &str,
    emotion: EmotionLabel,
) -> Result<String> {
    require_transcript(transcript)?;
    let (rate, energy, pitch) = (levels.rate, levels.energy, levels.pitch);
    Ok(format!(
        "Based on the provided speech features\u{2014}including a speaking rate of {rate}, \
a volume level of {energy}, and a pitch of {pitch}\u{2014}along with the text content \
\u{2018}{transcript}\u{2019} and the emotion {emotion}, generate a natural and logical \
emotional description. Here is an example: \u{2018}The speaker spoke at a {rate} pace, \
with a {pitch} tone and {energy} level: \u{201c}{transcript}\u{201d}. Based on the analysis \
of speech characteristics, the emotion was inferred to be {emotion}.\u{2019} Ensure \
including all speech features and logic of the description."
    ))
}

/// Deterministic explicit target, used directly in template mode and as the
/// fallback when a paraphrase is rejected.
pub fn render_explicit_target(
    levels: Levels,
    transcript: &str,
    emotion: EmotionLabel,
) -> Result<String> {
    require_transcript(transcript)?;
    Ok(format!(
        "The speaker spoke at a {} pace, with a {} tone and {} level: \"{transcript}\". \
Based on the analysis of speech characteristics, the emotion was inferred to be {emotion}.",
        levels.rate, levels.pitch, levels.energy
    ))
}

pub fn render_implicit_prompt(emotion: EmotionLabel) -> String {
    format!(
        "Write one short sentence that states only the emotion of the speech, which is {emotion}, \
in the form: \u{2018}The emotion of this speech is {emotion}.\u{2019}"
    )
}

pub fn render_implicit_target(emotion: EmotionLabel) -> String {
    format!("The emotion of this speech is {emotion}.")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum RejectReason {
    Empty,
    MissingLevel { level: Level },
    MissingTranscript,
    NoEmotion,
    MultipleEmotions { found: Vec<EmotionLabel> },
    EmotionMismatch { found: EmotionLabel },
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::Empty => write!(f, "empty"),
            RejectReason::MissingLevel { level } => write!(f, "missing-level({level})"),
            RejectReason::MissingTranscript => write!(f, "missing-transcript"),
            RejectReason::NoEmotion => write!(f, "no-emotion"),
            RejectReason::MultipleEmotions { found } => {
                write!(f, "multiple-emotions(")?;
                for (i, e) in found.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
            RejectReason::EmotionMismatch { found } => write!(f, "emotion-mismatch({found})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Accepted,
    Rejected(RejectReason),
}

impl Validation {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Validation::Accepted)
    }
}

/// Words that count as mentioning a level; paraphrases rarely say "medium".
fn level_words(level: Level) -> &'static [&'static str] {
    match level {
        Level::Low => &["low", "soft", "quiet", "slow", "deep"],
        Level::Medium => &["medium", "moderate", "normal", "average", "steady"],
        Level::High => &["high", "loud", "fast", "rapid", "quick"],
    }
}

pub(crate) fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Checks a generated text against its source context.
///
/// The transcript is cut out of the text before scanning, so emotion or
/// level words spoken in the transcript itself never count.
pub fn validate_cot(text: &str, mode: CotMode, ctx: &CotContext) -> Validation {
    use Validation::Rejected;
    if text.trim().is_empty() {
        return Rejected(RejectReason::Empty);
    }
    let remainder = match mode {
        CotMode::Explicit => match text.find(ctx.transcript.as_str()) {
            Some(pos) if !ctx.transcript.is_empty() => {
                format!("{} {}", &text[..pos], &text[pos + ctx.transcript.len()..])
            }
            _ => return Rejected(RejectReason::MissingTranscript),
        },
        CotMode::Implicit => text.to_string(),
    };
    let tokens: BTreeSet<String> = words(&remainder).collect();

    if mode == CotMode::Explicit {
        let needed: BTreeSet<Level> = [ctx.levels.rate, ctx.levels.energy, ctx.levels.pitch].into();
        for level in needed {
            if !level_words(level).iter().any(|w| tokens.contains(*w)) {
                return Rejected(RejectReason::MissingLevel { level });
            }
        }
    }

    let found: Vec<EmotionLabel> = EmotionLabel::ALL
        .into_iter()
        .filter(|e| tokens.contains(e.as_str()))
        .collect();
    match found.as_slice() {
        [] => Rejected(RejectReason::NoEmotion),
        [e] if *e == ctx.emotion => Validation::Accepted,
        [e] => Rejected(RejectReason::EmotionMismatch { found: *e }),
        _ => Rejected(RejectReason::MultipleEmotions { found }),
    }
}

pub fn template_sample(ctx: &CotContext, mode: CotMode) -> Result<CotSample> {
    let (prompt_text, target_text) = match mode {
        CotMode::Explicit => (
            render_explicit_prompt(ctx.levels, &ctx.transcript, ctx.emotion)?,
            render_explicit_target(ctx.levels, &ctx.transcript, ctx.emotion)?,
        ),
        CotMode::Implicit => (
            render_implicit_prompt(ctx.emotion),
            render_implicit_target(ctx.emotion),
        ),
    };
    Ok(CotSample {
        utterance_id: ctx.utterance_id.clone(),
        mode,
        prompt_text,
        target_text,
        source: CotSource::Template,
    })
}

/// How a remote paraphrase attempt ended.
#[derive(Debug, Clone, PartialEq)]
pub enum ParaphraseOutcome {
    Accepted,
    Rejected(RejectReason),
    TransportFailed(String),
}

/// Asks the endpoint for a paraphrase, validates it, and falls back to the
/// template target (source = template) on rejection or transport failure.
pub fn paraphrase_remote(
    ctx: &CotContext,
    mode: CotMode,
    client: &ChatClient,
) -> Result<(CotSample, ParaphraseOutcome)> {
    let mut sample = template_sample(ctx, mode)?;
    let outcome = match client.complete(&sample.prompt_text) {
        Ok(text) => match validate_cot(&text, mode, ctx) {
            Validation::Accepted => {
                sample.target_text = text.trim().to_string();
                sample.source = CotSource::Llm;
                ParaphraseOutcome::Accepted
            }
            Validation::Rejected(reason) => {
                log::warn!("{}: paraphrase rejected: {reason}", ctx.utterance_id);
                ParaphraseOutcome::Rejected(reason)
            }
        },
        Err(e) => {
            log::warn!("{}: {e}; using template target", ctx.utterance_id);
            ParaphraseOutcome::TransportFailed(e.to_string())
        }
    };
    Ok((sample, outcome))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GenerationReport {
    pub total: usize,
    pub llm_accepted: usize,
    pub llm_rejected: usize,
    pub transport_failures: usize,
}

impl GenerationReport {
    /// Fraction of remote completions that failed validation.
    pub fn rejected_fraction(&self) -> f64 {
        let attempted = self.llm_accepted + self.llm_rejected;
        if attempted == 0 {
            0.0
        } else {
            self.llm_rejected as f64 / attempted as f64
        }
    }
}

pub const DEFAULT_IN_FLIGHT: usize = 4;

/// Generates one sample per context, in input order. With a client, at most
/// `in_flight` requests run at once.
pub fn generate(
    contexts: &[CotContext],
    mode: CotMode,
    client: Option<&ChatClient>,
    in_flight: usize,
) -> Result<(Vec<CotSample>, GenerationReport)> {
    let mut report = GenerationReport {
        total: contexts.len(),
        ..Default::default()
    };
    let Some(client) = client else {
        let samples = contexts
            .iter()
            .map(|c| template_sample(c, mode))
            .collect::<Result<_>>()?;
        return Ok((samples, report));
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(in_flight.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<(CotSample, ParaphraseOutcome)> = pool.install(|| {
        contexts
            .par_iter()
            .map(|c| paraphrase_remote(c, mode, client))
            .collect::<Result<_>>()
    })?;
    let mut samples = Vec::with_capacity(results.len());
    for (sample, outcome) in results {
        match outcome {
            ParaphraseOutcome::Accepted => report.llm_accepted += 1,
            ParaphraseOutcome::Rejected(_) => report.llm_rejected += 1,
            ParaphraseOutcome::TransportFailed(_) => report.transport_failures += 1,
        }
        samples.push(sample);
    }
    Ok((samples, report))
}
