//! Corpus records and their line-delimited JSON persistence.
//!
//! A manifest holds one [`UtteranceRecord`] per line. Keys are written in a
//! fixed order, so writing the same records twice yields identical bytes.
//! Fields this crate does not know about are kept in
//! [`UtteranceRecord::extra`] and written back out unchanged.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::AcousticAttributes;
use crate::fusion::{HarmonizationMap, Harmonized};

/// The seven harmonized emotion classes, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Anger,
    Happiness,
    Neutral,
    Sadness,
    Surprise,
    Disgust,
    Fear,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Anger,
        EmotionLabel::Happiness,
        EmotionLabel::Neutral,
        EmotionLabel::Sadness,
        EmotionLabel::Surprise,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "anger",
            EmotionLabel::Happiness => "happiness",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
        }
    }

    /// Position in the canonical class order; also the confusion-matrix index.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    /// Exact canonical names only (case-insensitive). Synonyms go through
    /// [`HarmonizationMap`].
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_lowercase();
        EmotionLabel::ALL
            .into_iter()
            .find(|e| e.as_str() == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("not an emotion label: {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Language {
    Zh,
    En,
    Other(String),
}

impl Language {
    pub fn tag(&self) -> &str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
            Language::Other(tag) => tag,
        }
    }
}

impl From<&str> for Language {
    fn from(tag: &str) -> Self {
        match tag {
            "zh" => Language::Zh,
            "en" => Language::En,
            other => Language::Other(other.to_string()),
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl Serialize for Language {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for Language {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tag = String::deserialize(deserializer)?;
        Ok(Language::from(tag.as_str()))
    }
}

/// One corpus item.
///
/// `speech_emotion` and `text_emotion` hold the raw annotator outputs, which
/// may use vocabulary outside the seven classes (e.g. "excited"). Only
/// `fused_emotion` is guaranteed to be canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio_path: PathBuf,
    pub transcript: String,
    pub language: Language,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_emotion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_emotion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_emotion: Option<EmotionLabel>,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phoneme_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<AcousticAttributes>,
    /// Unrecognised keys, preserved verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl UtteranceRecord {
    pub fn new(
        id: impl Into<String>,
        audio_path: impl Into<PathBuf>,
        transcript: impl Into<String>,
        language: Language,
        duration_s: f64,
    ) -> Self {
        UtteranceRecord {
            id: id.into(),
            audio_path: audio_path.into(),
            transcript: transcript.into(),
            language,
            speech_emotion: None,
            text_emotion: None,
            fused_emotion: None,
            duration_s,
            phoneme_count: None,
            attributes: None,
            extra: BTreeMap::new(),
        }
    }

    /// Checks the per-record invariants.
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidRecord {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(invalid("id is empty".into()));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(invalid(format!("duration_s = {}", self.duration_s)));
        }
        if self.phoneme_count == Some(0) {
            return Err(invalid("phoneme_count must be positive".into()));
        }
        if let Some(fused) = self.fused_emotion {
            let (Some(speech), Some(text)) = (&self.speech_emotion, &self.text_emotion) else {
                return Err(invalid(
                    "fused_emotion requires both speech_emotion and text_emotion".into(),
                ));
            };
            // Only checkable when both raw labels are known to the default map.
            let map = HarmonizationMap::default();
            if let (Some(Harmonized::Label(s)), Some(Harmonized::Label(t))) =
                (map.lookup(speech), map.lookup(text))
            {
                if s != fused || t != fused {
                    return Err(invalid(format!(
                        "fused_emotion {fused} disagrees with annotations ({speech}, {text})"
                    )));
                }
            }
        }
        if let Some(attrs) = &self.attributes {
            attrs.validate().map_err(invalid)?;
        }
        Ok(())
    }
}

/// Result of [`read_manifest`].
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<UtteranceRecord>,
    /// Total number of unrecognised keys across all records.
    pub unknown_fields: usize,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(BufReader::new(file), path)
}

fn parse_manifest(reader: impl BufRead, path: &Path) -> Result<Manifest> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut unknown_fields = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let record: UtteranceRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        record.validate().map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId {
                id: record.id,
                line: line_no,
            });
        }
        unknown_fields += record.extra.len();
        records.push(record);
    }
    if unknown_fields > 0 {
        log::warn!(
            "{}: ignored {unknown_fields} unknown field(s)",
            path.display()
        );
    }
    Ok(Manifest {
        records,
        unknown_fields,
    })
}

pub fn write_manifest(records: &[UtteranceRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut seen = HashSet::new();
    for (idx, record) in records.iter().enumerate() {
        record.validate()?;
        if !seen.insert(record.id.as_str()) {
            return Err(Error::DuplicateId {
                id: record.id.clone(),
                line: idx + 1,
            });
        }
    }
    write_jsonl(records, path)
}

/// Writes one JSON object per line, LF-terminated.
pub fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(idx, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: idx + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Keeps records no longer than `max_s` seconds; a record exactly at the
/// limit is kept. Returns the kept records and how many were dropped.
pub fn filter_duration(records: Vec<UtteranceRecord>, max_s: f64) -> (Vec<UtteranceRecord>, usize) {
    let before = records.len();
    let kept: Vec<_> = records
        .into_iter()
        .filter(|r| r.duration_s <= max_s)
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

pub const DEFAULT_MAX_DURATION_S: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistributionReport {
    pub total: usize,
    pub emotions: BTreeMap<EmotionLabel, Share>,
    pub languages: BTreeMap<String, Share>,
}

/// Emotion and language breakdown of a fused corpus.
pub fn distribution_report(records: &[UtteranceRecord]) -> Result<DistributionReport> {
    let mut emotions: BTreeMap<EmotionLabel, usize> = BTreeMap::new();
    let mut languages: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        let emotion = r.fused_emotion.ok_or_else(|| Error::MissingField {
            id: r.id.clone(),
            what: "fused_emotion",
        })?;
        *emotions.entry(emotion).or_default() += 1;
        *languages.entry(r.language.tag().to_string()).or_default() += 1;
    }
    let total = records.len();
    let share = |count: usize| Share {
        count,
        fraction: count as f64 / total as f64,
    };
    Ok(DistributionReport {
        total,
        emotions: emotions.into_iter().map(|(k, c)| (k, share(c))).collect(),
        languages: languages.into_iter().map(|(k, c)| (k, share(c))).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{AcousticAttributes, Level};

    fn rec(id: &str, duration: f64) -> UtteranceRecord {
        UtteranceRecord::new(
            id,
            format!("{id}.wav"),
            "hello there",
            Language::En,
            duration,
        )
    }

    fn full_record() -> UtteranceRecord {
        let mut r = rec("utt-001", 3.25);
        r.speech_emotion = Some("excited".into());
        r.text_emotion = Some("happiness".into());
        r.fused_emotion = Some(EmotionLabel::Happiness);
        r.phoneme_count = Some(12);
        r.attributes = Some(AcousticAttributes {
            pitch_mean_hz: Some(181.5),
            loudness_lufs: -23.4,
            speaking_rate_pps: 3.69,
            pitch_level: Some(Level::Medium),
            energy_level: Some(Level::Low),
            rate_level: Some(Level::High),
        });
        r
    }

    #[test]
    fn empty_file_reads_as_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "").unwrap();
        let m = read_manifest(&path).unwrap();
        assert!(m.records.is_empty());
        assert_eq!(m.unknown_fields, 0);
    }

    #[test]
    fn write_empty_is_zero_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        write_manifest(&[], &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 0);
    }

    #[test]
    fn full_record_round_trips_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        write_manifest(&[full_record()], &a).unwrap();
        let m = read_manifest(&a).unwrap();
        assert_eq!(m.records, vec![full_record()]);
        write_manifest(&m.records, &b).unwrap();
        let bytes = std::fs::read(&a).unwrap();
        assert_eq!(bytes, std::fs::read(&b).unwrap());
        assert!(bytes.ends_with(b"\n"));
        assert_eq!(bytes.iter().filter(|&&c| c == b'\n').count(), 1);
    }

    #[test]
    fn duplicate_id_reported_at_second_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let line = serde_json::to_string(&rec("x", 1.0)).unwrap();
        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        match read_manifest(&path) {
            Err(Error::DuplicateId { id, line }) => {
                assert_eq!(id, "x");
                assert_eq!(line, 2);
            }
            other => panic!("expected duplicate id, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let line = serde_json::to_string(&rec("x", 1.0)).unwrap();
        std::fs::write(&path, format!("{line}\n{{not json\n")).unwrap();
        assert!(matches!(
            read_manifest(&path),
            Err(Error::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_fields_are_counted_and_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let out = dir.path().join("out.jsonl");
        let mut value = serde_json::to_value(rec("x", 1.0)).unwrap();
        value["speaker"] = "spk7".into();
        value["snr_db"] = 31.5.into();
        std::fs::write(&path, format!("{value}\n")).unwrap();
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.unknown_fields, 2);
        assert_eq!(m.records[0].extra["speaker"], "spk7");
        write_manifest(&m.records, &out).unwrap();
        let again = read_manifest(&out).unwrap();
        assert_eq!(again.records, m.records);
    }

    #[test]
    fn fused_without_text_emotion_is_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = full_record();
        r.text_emotion = None;
        let err = write_manifest(&[r], dir.path().join("m.jsonl")).unwrap_err();
        assert!(matches!(err, Error::InvalidRecord { .. }), "{err}");
    }

    #[test]
    fn fused_disagreeing_with_annotations_is_rejected() {
        let mut r = full_record();
        r.text_emotion = Some("sadness".into());
        assert!(r.validate().is_err());
    }

    #[test]
    fn negative_duration_is_rejected() {
        assert!(rec("x", -0.1).validate().is_err());
    }

    #[test]
    fn duration_filter_keeps_boundary() {
        let records = vec![rec("a", 5.0), rec("b", 20.0), rec("c", 20.1)];
        let (kept, dropped) = filter_duration(records, DEFAULT_MAX_DURATION_S);
        let ids: Vec<_> = kept.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn duration_filter_zero_and_empty() {
        let (kept, dropped) = filter_duration(vec![rec("a", 0.0), rec("b", 0.0)], 20.0);
        assert_eq!((kept.len(), dropped), (2, 0));
        let (kept, dropped) = filter_duration(Vec::new(), 20.0);
        assert_eq!((kept.len(), dropped), (0, 0));
    }

    #[test]
    fn distribution_uniform_over_emotions() {
        let records: Vec<_> = EmotionLabel::ALL
            .iter()
            .enumerate()
            .map(|(i, &e)| {
                let mut r = rec(&format!("u{i}"), 1.0);
                r.speech_emotion = Some(e.to_string());
                r.text_emotion = Some(e.to_string());
                r.fused_emotion = Some(e);
                r
            })
            .collect();
        let report = distribution_report(&records).unwrap();
        assert_eq!(report.emotions.len(), 7);
        for share in report.emotions.values() {
            assert_eq!(share.count, 1);
            assert!((share.fraction - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn distribution_languages() {
        let records: Vec<_> = ["zh", "zh", "zh", "en"]
            .iter()
            .enumerate()
            .map(|(i, &lang)| {
                let mut r = rec(&format!("u{i}"), 1.0);
                r.language = Language::from(lang);
                r.speech_emotion = Some("neutral".into());
                r.text_emotion = Some("neutral".into());
                r.fused_emotion = Some(EmotionLabel::Neutral);
                r
            })
            .collect();
        let report = distribution_report(&records).unwrap();
        assert_eq!(report.languages["zh"].fraction, 0.75);
        assert_eq!(report.languages["en"].fraction, 0.25);
    }

    #[test]
    fn distribution_empty_and_missing_label() {
        let report = distribution_report(&[]).unwrap();
        assert!(report.emotions.is_empty() && report.languages.is_empty());
        match distribution_report(&[rec("nolabel", 1.0)]) {
            Err(Error::MissingField { id, .. }) => assert_eq!(id, "nolabel"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn language_other_tag_round_trips() {
        let lang: Language = serde_json::from_str("\"it\"").unwrap();
        assert_eq!(lang, Language::Other("it".into()));
        assert_eq!(serde_json::to_string(&lang).unwrap(), "\"it\"");
    }
}
