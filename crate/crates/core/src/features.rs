//! Utterance-level acoustic attributes and the signal measurements behind them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::audio::{ms_to_samples, trim_silence, TrimConfig, Waveform};
use crate::error::{Error, Result};
use crate::manifest::Language;

pub const PITCH_MIN_HZ: f64 = 50.0;
pub const PITCH_MAX_HZ: f64 = 600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Medium,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Medium, Level::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Medium => "medium",
            Level::High => "high",
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticAttributes {
    /// Mean over voiced frames; absent when nothing was voiced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_mean_hz: Option<f64>,
    pub loudness_lufs: f64,
    pub speaking_rate_pps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_level: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_level: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_level: Option<Level>,
}

impl AcousticAttributes {
    pub(crate) fn validate(&self) -> Result<(), String> {
        if let Some(p) = self.pitch_mean_hz {
            if !(PITCH_MIN_HZ..=PITCH_MAX_HZ).contains(&p) {
                return Err(format!("pitch_mean_hz {p} outside [50, 600]"));
            }
        }
        if !self.loudness_lufs.is_finite() {
            return Err(format!("loudness_lufs {}", self.loudness_lufs));
        }
        if !(self.speaking_rate_pps.is_finite() && self.speaking_rate_pps > 0.0) {
            return Err(format!("speaking_rate_pps {}", self.speaking_rate_pps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchConfig {
    pub min_hz: f64,
    pub max_hz: f64,
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Voicing threshold on the cumulative-mean-normalized difference.
    pub threshold: f64,
    /// Frames quieter than this (dBFS RMS) are unvoiced without analysis.
    pub energy_floor_db: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            min_hz: PITCH_MIN_HZ,
            max_hz: PITCH_MAX_HZ,
            frame_ms: 25.0,
            hop_ms: 10.0,
            threshold: 0.15,
            energy_floor_db: -60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchFrame {
    pub time_s: f64,
    /// `None` for unvoiced frames.
    pub f0_hz: Option<f64>,
}

/// Frame-wise f0 track using a normalized difference-function (YIN-style)
/// estimator.
pub fn pitch_contour(w: &Waveform, config: &PitchConfig) -> Result<Vec<PitchFrame>> {
    let sr = w.sample_rate_hz() as f64;
    let frame = ms_to_samples(config.frame_ms, w.sample_rate_hz());
    let hop = ms_to_samples(config.hop_ms, w.sample_rate_hz());
    let x: Vec<f64> = w.samples().iter().map(|&s| s as f64).collect();
    if x.len() < frame {
        return Err(Error::TooShort(format!(
            "{} samples, pitch frame is {frame}",
            x.len()
        )));
    }
    let min_lag = ((sr / config.max_hz).floor() as usize).max(2);
    let max_lag = ((sr / config.min_hz).ceil() as usize).min(frame - 2);
    let floor = 10f64.powf(config.energy_floor_db / 20.0);

    let mut diff = vec![0.0; max_lag + 2];
    let mut cmnd = vec![1.0; max_lag + 2];
    let contour = (0..=(x.len() - frame) / hop)
        .map(|k| {
            let start = k * hop;
            let buf = &x[start..start + frame];
            let rms = (buf.iter().map(|v| v * v).sum::<f64>() / frame as f64).sqrt();
            let f0 = if rms < floor {
                None
            } else {
                frame_f0(buf, sr, min_lag, max_lag, config, &mut diff, &mut cmnd)
            };
            PitchFrame {
                time_s: start as f64 / sr,
                f0_hz: f0,
            }
        })
        .collect();
    Ok(contour)
}

fn frame_f0(
    buf: &[f64],
    sr: f64,
    min_lag: usize,
    max_lag: usize,
    config: &PitchConfig,
    diff: &mut [f64],
    cmnd: &mut [f64],
) -> Option<f64> {
    let n = buf.len();
    let top = (max_lag + 1).min(n - 1);
    // Mean squared difference, so shrinking overlap at long lags adds no bias.
    for lag in 1..=top {
        let sum: f64 = buf[..n - lag]
            .iter()
            .zip(&buf[lag..])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        diff[lag] = sum / (n - lag) as f64;
    }
    let mut running = 0.0;
    cmnd[0] = 1.0;
    for lag in 1..=top {
        running += diff[lag];
        cmnd[lag] = if running > 0.0 {
            diff[lag] * lag as f64 / running
        } else {
            1.0
        };
    }

    let mut lag = (min_lag..=max_lag).find(|&l| cmnd[l] < config.threshold)?;
    while lag < max_lag && cmnd[lag + 1] < cmnd[lag] {
        lag += 1;
    }
    let (a, b, c) = (cmnd[lag - 1], cmnd[lag], cmnd[lag + 1]);
    let denom = a - 2.0 * b + c;
    let offset = if denom.abs() > f64::EPSILON {
        (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let f0 = sr / (lag as f64 + offset);
    (config.min_hz..=config.max_hz).contains(&f0).then_some(f0)
}

/// Arithmetic mean of voiced frames.
pub fn pitch_mean(contour: &[PitchFrame]) -> Option<f64> {
    let voiced: Vec<f64> = contour.iter().filter_map(|f| f.f0_hz).collect();
    (!voiced.is_empty()).then(|| voiced.iter().sum::<f64>() / voiced.len() as f64)
}

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn run(&self, input: &[f64]) -> Vec<f64> {
        // Transposed direct form II.
        let (mut s1, mut s2) = (0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b[0] * x + s1;
                s1 = self.b[1] * x - self.a[0] * y + s2;
                s2 = self.b[2] * x - self.a[1] * y;
                y
            })
            .collect()
    }
}

/// K-weighting stages for an arbitrary sample rate: a high-shelf pre-filter
/// followed by the RLB high-pass, designed from their analog prototypes.
fn k_weighting(sample_rate_hz: f64) -> [Biquad; 2] {
    let (f0, gain_db, q) = (1681.974450955533, 3.999843853973347, 0.7071752369554196);
    let k = (PI * f0 / sample_rate_hz).tan();
    let vh = 10f64.powf(gain_db / 20.0);
    let vb = vh.powf(0.4996667741545416);
    let a0 = 1.0 + k / q + k * k;
    let shelf = Biquad {
        b: [
            (vh + vb * k / q + k * k) / a0,
            2.0 * (k * k - vh) / a0,
            (vh - vb * k / q + k * k) / a0,
        ],
        a: [2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0],
    };

    let (f0, q) = (38.13547087602444, 0.5003270373238773);
    let k = (PI * f0 / sample_rate_hz).tan();
    let a0 = 1.0 + k / q + k * k;
    let highpass = Biquad {
        b: [1.0, -2.0, 1.0],
        a: [2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0],
    };
    [shelf, highpass]
}

const ABSOLUTE_GATE_LUFS: f64 = -70.0;
const RELATIVE_GATE_LU: f64 = -10.0;

fn mean_square_to_lufs(z: f64) -> f64 {
    -0.691 + 10.0 * z.log10()
}

/// Gated integrated loudness of a mono signal, in LUFS.
///
/// 400 ms blocks at a 100 ms step, absolute gate at -70 LUFS, then a
/// relative gate 10 LU below the absolute-gated loudness.
pub fn integrated_loudness(w: &Waveform) -> Result<f64> {
    let sr = w.sample_rate_hz() as f64;
    let block = (0.4 * sr).round() as usize;
    let step = (0.1 * sr).round() as usize;
    if w.len() < block {
        return Err(Error::TooShort(format!(
            "{:.3} s is shorter than one 400 ms gating block",
            w.duration_s()
        )));
    }
    let mut y: Vec<f64> = w.samples().iter().map(|&s| s as f64).collect();
    for stage in k_weighting(sr) {
        y = stage.run(&y);
    }
    let powers: Vec<f64> = (0..=(y.len() - block) / step)
        .map(|j| {
            let seg = &y[j * step..j * step + block];
            seg.iter().map(|v| v * v).sum::<f64>() / block as f64
        })
        .collect();

    let above_absolute: Vec<f64> = powers
        .iter()
        .copied()
        .filter(|&z| mean_square_to_lufs(z) > ABSOLUTE_GATE_LUFS)
        .collect();
    if above_absolute.is_empty() {
        return Err(Error::Silence);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let relative_gate = mean_square_to_lufs(mean(&above_absolute)) + RELATIVE_GATE_LU;
    let gated: Vec<f64> = above_absolute
        .into_iter()
        .filter(|&z| mean_square_to_lufs(z) > relative_gate)
        .collect();
    if gated.is_empty() {
        return Err(Error::Silence);
    }
    Ok(mean_square_to_lufs(mean(&gated)))
}

pub fn speaking_rate(phoneme_count: u32, trimmed_duration_s: f64) -> Result<f64> {
    if phoneme_count == 0 {
        return Err(Error::InvalidArgument(
            "phoneme count must be positive".into(),
        ));
    }
    if !(trimmed_duration_s.is_finite() && trimmed_duration_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "speaking rate needs a positive duration, got {trimmed_duration_s}"
        )));
    }
    Ok(phoneme_count as f64 / trimmed_duration_s)
}

/// Maps a transcript to a phoneme count.
pub trait Phonemizer: Send + Sync {
    fn count(&self, transcript: &str, language: &Language) -> Result<u32>;
}

/// Per-script approximation: each Han character counts as an initial plus a
/// final (2), and every other word counts its vowel groups, at least 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedPhonemizer;

impl Phonemizer for RuleBasedPhonemizer {
    fn count(&self, transcript: &str, _language: &Language) -> Result<u32> {
        count_phonemes(transcript)
    }
}

fn is_han(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2A6DF)
}

fn is_vowel(c: char) -> bool {
    matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

fn vowel_groups(word: &str) -> u32 {
    let mut groups = 0;
    let mut in_group = false;
    for c in word.chars() {
        let v = is_vowel(c);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }
    groups.max(1)
}

/// Built-in phoneme count; the same rules apply regardless of language tag,
/// so mixed-script text sums the per-script counts.
pub fn count_phonemes(transcript: &str) -> Result<u32> {
    if transcript.trim().is_empty() {
        return Err(Error::InvalidArgument("empty transcript".into()));
    }
    let mut total = 0u32;
    let mut word = String::new();
    let flush = |word: &mut String, total: &mut u32| {
        if !word.is_empty() {
            *total += vowel_groups(word);
            word.clear();
        }
    };
    for c in transcript.chars() {
        if is_han(c) {
            flush(&mut word, &mut total);
            total += 2;
        } else if c.is_alphabetic() || (c == '\'' && !word.is_empty()) {
            word.push(c);
        } else {
            flush(&mut word, &mut total);
        }
    }
    flush(&mut word, &mut total);
    if total == 0 {
        return Err(Error::InvalidArgument(format!(
            "transcript {transcript:?} contains no countable words"
        )));
    }
    Ok(total)
}

/// Supplied count wins over the phonemizer.
pub fn resolve_phoneme_count(
    supplied: Option<u32>,
    transcript: &str,
    language: &Language,
    phonemizer: &dyn Phonemizer,
) -> Result<u32> {
    match supplied {
        Some(n) if n > 0 => Ok(n),
        _ => phonemizer.count(transcript, language),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExtractConfig {
    pub trim: TrimConfig,
    pub pitch: PitchConfig,
}

/// Trims `w`, then measures all three attributes on the trimmed signal.
/// Returns the attributes and the trimmed duration.
pub fn extract_attributes(
    w: &Waveform,
    phoneme_count: u32,
    config: &ExtractConfig,
) -> Result<(AcousticAttributes, f64)> {
    let trimmed = trim_silence(w, &config.trim)?.waveform;
    let contour = pitch_contour(&trimmed, &config.pitch)?;
    let loudness = integrated_loudness(&trimmed)?;
    let duration = trimmed.duration_s();
    let attrs = AcousticAttributes {
        pitch_mean_hz: pitch_mean(&contour),
        loudness_lufs: loudness,
        speaking_rate_pps: speaking_rate(phoneme_count, duration)?,
        pitch_level: None,
        energy_level: None,
        rate_level: None,
    };
    Ok((attrs, duration))
}
