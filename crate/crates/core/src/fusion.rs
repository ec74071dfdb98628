//! Emotion label harmonization and dual-annotation fusion.
//!
//! Raw labels from the speech and text annotators are case-folded and
//! mapped onto the seven classes; a record is kept only when both map to
//! the same class.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{EmotionLabel, UtteranceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Harmonized {
    Label(EmotionLabel),
    Drop,
}

/// Case-folded raw label → class (or drop).
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonizationMap {
    entries: BTreeMap<String, Harmonized>,
}

const DEFAULT_ENTRIES: &[(&str, Option<EmotionLabel>)] = &[
    ("excited", Some(EmotionLabel::Happiness)),
    ("amused", Some(EmotionLabel::Happiness)),
    ("joy", Some(EmotionLabel::Happiness)),
    ("happy", Some(EmotionLabel::Happiness)),
    ("angry", Some(EmotionLabel::Anger)),
    ("sad", Some(EmotionLabel::Sadness)),
    ("surprised", Some(EmotionLabel::Surprise)),
    ("disgusted", Some(EmotionLabel::Disgust)),
    ("fearful", Some(EmotionLabel::Fear)),
    ("sleepy", None),
];

impl Default for HarmonizationMap {
    fn default() -> Self {
        let mut entries: BTreeMap<String, Harmonized> = EmotionLabel::ALL
            .iter()
            .map(|&e| (e.as_str().to_string(), Harmonized::Label(e)))
            .collect();
        for &(raw, target) in DEFAULT_ENTRIES {
            let h = target.map_or(Harmonized::Drop, Harmonized::Label);
            entries.insert(raw.to_string(), h);
        }
        HarmonizationMap { entries }
    }
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    labels: BTreeMap<String, String>,
}

impl HarmonizationMap {
    /// Parses the TOML form: a `[labels]` table of `raw = "class"` pairs,
    /// where "drop" discards the label. Canonical class names always map to
    /// themselves and are added if the file omits them.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: MapFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("harmonization map: {e}")))?;
        let mut entries = BTreeMap::new();
        for (raw, target) in file.labels {
            let key = raw.trim().to_lowercase();
            let value = match target.trim().to_lowercase().as_str() {
                "drop" => Harmonized::Drop,
                other => Harmonized::Label(other.parse().map_err(|_| {
                    Error::Config(format!("label {raw:?} maps to unknown class {target:?}"))
                })?),
            };
            entries.insert(key, value);
        }
        for e in EmotionLabel::ALL {
            match entries.get(e.as_str()) {
                Some(Harmonized::Label(t)) if *t == e => {}
                None => {
                    entries.insert(e.as_str().to_string(), Harmonized::Label(e));
                }
                Some(_) => {
                    return Err(Error::Config(format!(
                        "canonical label {e} must map to itself"
                    )))
                }
            }
        }
        Ok(HarmonizationMap { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        let labels = self
            .entries
            .iter()
            .map(|(k, v)| {
                let target = match v {
                    Harmonized::Label(e) => e.as_str().to_string(),
                    Harmonized::Drop => "drop".to_string(),
                };
                (k.clone(), target)
            })
            .collect();
        toml::to_string(&MapFile { labels }).expect("map serialize")
    }

    /// `None` when the raw label is not in the map.
    pub fn lookup(&self, raw: &str) -> Option<Harmonized> {
        self.entries.get(&raw.trim().to_lowercase()).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, Harmonized)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Case-insensitive lookup; unmapped labels are dropped with a warning.
pub fn harmonize(raw: &str, map: &HarmonizationMap) -> Harmonized {
    map.lookup(raw).unwrap_or_else(|| {
        log::warn!("unmapped emotion label {raw:?}, dropping");
        Harmonized::Drop
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum FuseOutcome {
    Fused(UtteranceRecord),
    Rejected(UtteranceRecord),
}

pub fn fuse(mut record: UtteranceRecord, map: &HarmonizationMap) -> Result<FuseOutcome> {
    let (Some(speech), Some(text)) = (&record.speech_emotion, &record.text_emotion) else {
        let what = if record.speech_emotion.is_none() {
            "speech_emotion"
        } else {
            "text_emotion"
        };
        return Err(Error::MissingField {
            id: record.id.clone(),
            what,
        });
    };
    match (harmonize(speech, map), harmonize(text, map)) {
        (Harmonized::Label(s), Harmonized::Label(t)) if s == t => {
            record.fused_emotion = Some(s);
            Ok(FuseOutcome::Fused(record))
        }
        _ => {
            record.fused_emotion = None;
            Ok(FuseOutcome::Rejected(record))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FusionResult {
    pub fused: Vec<UtteranceRecord>,
    pub rejected: Vec<UtteranceRecord>,
    pub per_emotion: BTreeMap<EmotionLabel, usize>,
}

impl FusionResult {
    pub fn rejected_count(&self) -> usize {
        self.rejected.len()
    }
}

/// Fuses every record, keeping input order in both outputs.
pub fn fuse_corpus(records: Vec<UtteranceRecord>, map: &HarmonizationMap) -> Result<FusionResult> {
    let outcomes: Vec<FuseOutcome> = records
        .into_par_iter()
        .map(|r| fuse(r, map))
        .collect::<Result<_>>()?;
    let mut result = FusionResult::default();
    for outcome in outcomes {
        match outcome {
            FuseOutcome::Fused(r) => {
                let e = r.fused_emotion.expect("fused record carries a label");
                *result.per_emotion.entry(e).or_default() += 1;
                result.fused.push(r);
            }
            FuseOutcome::Rejected(r) => result.rejected.push(r),
        }
    }
    Ok(result)
}
