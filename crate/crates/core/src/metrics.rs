//! Emotion label extraction from free-form output and WA / UA / Macro-F1
//! scoring over the seven harmonized classes.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::cotgen::{words, ChatClient};
use crate::error::{Error, Result};
use crate::fusion::{HarmonizationMap, Harmonized};
use crate::manifest::EmotionLabel;

/// Instruction sent to a remote extractor, followed by the text to label.
pub const EXTRACTION_PROMPT: &str = "Given the following text, determine its corresponding \
emotion and output only the single most appropriate emotion label. The possible labels are: \
anger, happiness, neutral, sadness, surprise, disgust, fear";

fn inferred_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)inferred\s+to\s+be\s+([\p{L}]+)").expect("valid regex"))
}

/// Rule cascade: the last "inferred to be <emotion>" phrase wins; failing
/// that, the last emotion word or synonym anywhere; otherwise `None`
/// (unknown).
pub fn extract_label_with(text: &str, map: &HarmonizationMap) -> Option<EmotionLabel> {
    let as_label = |word: &str| match map.lookup(word) {
        Some(Harmonized::Label(e)) => Some(e),
        _ => None,
    };
    let from_phrase = inferred_pattern()
        .captures_iter(text)
        .filter_map(|c| as_label(&c[1]))
        .last();
    from_phrase.or_else(|| words(text).filter_map(|w| as_label(&w)).last())
}

pub fn extract_label(text: &str) -> Option<EmotionLabel> {
    static MAP: OnceLock<HarmonizationMap> = OnceLock::new();
    extract_label_with(text, MAP.get_or_init(HarmonizationMap::default))
}

/// Turns a model output into a class prediction.
pub trait LabelExtractor: Sync {
    fn extract(&self, text: &str) -> Option<EmotionLabel>;
}

#[derive(Debug, Clone, Default)]
pub struct RuleExtractor {
    map: HarmonizationMap,
}

impl RuleExtractor {
    pub fn new(map: HarmonizationMap) -> Self {
        RuleExtractor { map }
    }
}

impl LabelExtractor for RuleExtractor {
    fn extract(&self, text: &str) -> Option<EmotionLabel> {
        extract_label_with(text, &self.map)
    }
}

/// Asks a chat endpoint for the label, then reads its reply with the rule
/// cascade. Transport failures count as unknown.
pub struct RemoteExtractor {
    client: ChatClient,
    rules: RuleExtractor,
}

impl RemoteExtractor {
    pub fn new(client: ChatClient, map: HarmonizationMap) -> Self {
        RemoteExtractor {
            client,
            rules: RuleExtractor::new(map),
        }
    }
}

impl LabelExtractor for RemoteExtractor {
    fn extract(&self, text: &str) -> Option<EmotionLabel> {
        let prompt = format!("{EXTRACTION_PROMPT}\n\n{text}");
        match self.client.complete(&prompt) {
            Ok(reply) => self.rules.extract(&reply),
            Err(e) => {
                log::warn!("remote extraction failed: {e}");
                None
            }
        }
    }
}

const N: usize = EmotionLabel::ALL.len();

/// Rows are references, columns predictions, both in canonical class order.
/// Unknown predictions land in a separate column so each row still sums to
/// its reference count.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
    pub unknown: [u64; N],
}

impl ConfusionMatrix {
    pub fn add(&mut self, reference: EmotionLabel, predicted: Option<EmotionLabel>) {
        match predicted {
            Some(p) => self.counts[reference.index()][p.index()] += 1,
            None => self.unknown[reference.index()] += 1,
        }
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum::<u64>() + self.unknown[class]
    }

    pub fn column_total(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn total(&self) -> u64 {
        (0..N).map(|c| self.row_total(c)).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..N).map(|c| self.counts[c][c]).sum()
    }

    fn present(&self) -> impl Iterator<Item = usize> + '_ {
        (0..N).filter(|&c| self.row_total(c) > 0)
    }

    pub fn recall(&self, class: usize) -> Option<f64> {
        let total = self.row_total(class);
        (total > 0).then(|| self.counts[class][class] as f64 / total as f64)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of `num/den` fractions, computed over a common denominator so a
/// balanced set gives exactly `sum(num) / (k * den)`.
fn mean_of_ratios(terms: &[(u64, u64)]) -> f64 {
    let k = terms.len() as u128;
    let lcm = terms.iter().try_fold(1u128, |acc, &(_, den)| {
        let den = den as u128;
        (acc / gcd(acc, den)).checked_mul(den)
    });
    let exact = lcm.and_then(|l| {
        let num = terms.iter().try_fold(0u128, |acc, &(n, d)| {
            acc.checked_add((n as u128).checked_mul(l / d as u128)?)
        })?;
        Some((num, l.checked_mul(k)?))
    });
    match exact {
        Some((num, den)) => num as f64 / den as f64,
        None => terms.iter().map(|&(n, d)| n as f64 / d as f64).sum::<f64>() / k as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub confusion: ConfusionMatrix,
    pub wa: f64,
    pub ua: f64,
    pub macro_f1: f64,
}

/// Scores `(reference, prediction)` pairs; `None` predictions are wrong for
/// every class. UA and Macro-F1 average over classes present in the
/// references.
pub fn score(pairs: &[(EmotionLabel, Option<EmotionLabel>)]) -> Result<Scores> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("nothing to score".into()));
    }
    let mut confusion = ConfusionMatrix::default();
    for &(r, p) in pairs {
        confusion.add(r, p);
    }
    let wa = confusion.correct() as f64 / confusion.total() as f64;
    let recall_terms: Vec<(u64, u64)> = confusion
        .present()
        .map(|c| (confusion.counts[c][c], confusion.row_total(c)))
        .collect();
    let ua = mean_of_ratios(&recall_terms);
    let f1s: Vec<f64> = confusion
        .present()
        .map(|c| {
            let tp = confusion.counts[c][c] as f64;
            let col = confusion.column_total(c);
            let precision = if col == 0 { 0.0 } else { tp / col as f64 };
            let recall = tp / confusion.row_total(c) as f64;
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .collect();
    let macro_f1 = f1s.iter().sum::<f64>() / f1s.len() as f64;
    Ok(Scores {
        confusion,
        wa,
        ua,
        macro_f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub id: String,
    pub label: EmotionLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeformScores {
    pub scores: Scores,
    pub predictions: Vec<Option<EmotionLabel>>,
    pub per_class_recall: BTreeMap<EmotionLabel, f64>,
}

/// Extracts a label from each hypothesis and scores it against the
/// position-aligned reference.
pub fn score_freeform(
    refs: &[Reference],
    hyps: &[Hypothesis],
    extractor: &dyn LabelExtractor,
) -> Result<FreeformScores> {
    if refs.len() != hyps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    if let Some((r, h)) = refs.iter().zip(hyps).find(|(r, h)| r.id != h.id) {
        return Err(Error::InvalidArgument(format!(
            "id mismatch: reference {:?} vs hypothesis {:?}",
            r.id, h.id
        )));
    }
    let predictions: Vec<Option<EmotionLabel>> =
        hyps.iter().map(|h| extractor.extract(&h.text)).collect();
    let pairs: Vec<_> = refs
        .iter()
        .map(|r| r.label)
        .zip(predictions.iter().copied())
        .collect();
    let scores = score(&pairs)?;
    let per_class_recall = EmotionLabel::ALL
        .into_iter()
        .filter_map(|e| scores.confusion.recall(e.index()).map(|r| (e, r)))
        .collect();
    Ok(FreeformScores {
        scores,
        predictions,
        per_class_recall,
    })
}

fn round6(x: f64) -> f64 {
    format!("{x:.6}").parse().expect("formatted float")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub labels: Vec<EmotionLabel>,
    pub counts: Vec<Vec<u64>>,
    pub unknown: Vec<u64>,
}

/// The `report.json` document written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: u64,
    pub unknown: u64,
    pub wa: f64,
    pub ua: f64,
    pub macro_f1: f64,
    pub confusion_matrix: ConfusionReport,
    pub per_class_recall: BTreeMap<EmotionLabel, f64>,
}

impl From<&FreeformScores> for EvaluationReport {
    fn from(f: &FreeformScores) -> Self {
        let c = &f.scores.confusion;
        EvaluationReport {
            n: c.total(),
            unknown: c.unknown.iter().sum(),
            wa: round6(f.scores.wa),
            ua: round6(f.scores.ua),
            macro_f1: round6(f.scores.macro_f1),
            confusion_matrix: ConfusionReport {
                labels: EmotionLabel::ALL.to_vec(),
                counts: c.counts.iter().map(|r| r.to_vec()).collect(),
                unknown: c.unknown.to_vec(),
            },
            per_class_recall: f
                .per_class_recall
                .iter()
                .map(|(&e, &r)| (e, round6(r)))
                .collect(),
        }
    }
}
