//! WAV decoding and leading/trailing silence trimming.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub const SUPPORTED_SAMPLE_RATES: [u32; 6] = [8000, 16000, 22050, 24000, 44100, 48000];

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if !SUPPORTED_SAMPLE_RATES.contains(&sample_rate_hz) {
            return Err(Error::InvalidArgument(format!(
                "unsupported sample rate {sample_rate_hz} Hz"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} = {} is outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    fn slice(&self, start: usize, end: usize) -> Waveform {
        Waveform {
            samples: self.samples[start..end].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Reads a PCM16 or float32 RIFF WAV file, downmixing stereo by channel mean.
pub fn decode_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = match hound::WavReader::open(path) {
        Ok(reader) => reader,
        Err(hound::Error::IoError(e)) => return Err(Error::io(path, e)),
        Err(hound::Error::Unsupported) => {
            return Err(Error::UnsupportedFormat(describe_format(path)));
        }
        Err(e) => return Err(Error::Wav(format!("{}: {e}", path.display()))),
    };
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(Error::UnsupportedFormat(format!(
            "{channels} channels (mono or stereo only)"
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v.clamp(-1.0, 1.0)))
            .collect::<Result<_, _>>(),
        (hound::SampleFormat::Int, bits) => {
            return Err(Error::UnsupportedFormat(format!("{bits}-bit integer PCM")));
        }
        (hound::SampleFormat::Float, bits) => {
            return Err(Error::UnsupportedFormat(format!("{bits}-bit float")));
        }
    }
    .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;

    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|lr| 0.5 * (lr[0] + lr[1]))
            .collect()
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Names the WAVE format tag for error messages when the decoder refuses a file.
fn describe_format(path: &Path) -> String {
    let mut header = [0u8; 64];
    let n = File::open(path)
        .and_then(|mut f| f.read(&mut header))
        .unwrap_or(0);
    let header = &header[..n];
    let tag = header
        .windows(4)
        .position(|w| w == b"fmt ")
        .and_then(|p| header.get(p + 8..p + 10))
        .map(|b| u16::from_le_bytes([b[0], b[1]]));
    match tag {
        Some(1) => "integer PCM with an unsupported layout".into(),
        Some(3) => "IEEE float with an unsupported layout".into(),
        Some(6) => "A-law (format tag 6)".into(),
        Some(7) => "mu-law (format tag 7)".into(),
        Some(0xFFFE) => "WAVE_FORMAT_EXTENSIBLE with an unsupported subformat".into(),
        Some(other) => format!("format tag {other:#06x}"),
        None => "unrecognised WAV header".into(),
    }
}

/// Writes mono 16-bit PCM.
pub fn write_wav_pcm16(path: impl AsRef<Path>, waveform: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| Error::Wav(format!("{}: {e}", path.display()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &waveform.samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimConfig {
    pub threshold_db: f64,
    pub frame_ms: f64,
    pub hop_ms: f64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        TrimConfig {
            threshold_db: -40.0,
            frame_ms: 25.0,
            hop_ms: 10.0,
        }
    }
}

impl TrimConfig {
    pub fn hop_s(&self) -> f64 {
        self.hop_ms / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trimmed {
    pub waveform: Waveform,
    pub leading_s: f64,
    pub trailing_s: f64,
}

/// Frame lengths in samples for a duration in milliseconds, at least one.
pub(crate) fn ms_to_samples(ms: f64, sample_rate_hz: u32) -> usize {
    ((ms * sample_rate_hz as f64 / 1000.0).round() as usize).max(1)
}

/// Removes leading and trailing silence.
///
/// Frames whose RMS exceeds `threshold_db` (dBFS) are voiced. The kept span
/// starts inside the first voiced frame at the first sample whose magnitude
/// reaches the threshold amplitude, and ends likewise inside the last voiced
/// frame. Silence between voiced frames is kept.
pub fn trim_silence(w: &Waveform, config: &TrimConfig) -> Result<Trimmed> {
    let x = w.samples();
    if x.is_empty() {
        return Err(Error::AllSilent);
    }
    let frame = ms_to_samples(config.frame_ms, w.sample_rate_hz);
    let hop = ms_to_samples(config.hop_ms, w.sample_rate_hz);
    let amp_threshold = 10f64.powf(config.threshold_db / 20.0);

    let voiced = |start: usize| {
        let end = (start + frame).min(x.len());
        let energy: f64 = x[start..end].iter().map(|&s| (s as f64).powi(2)).sum();
        (energy / (end - start) as f64).sqrt() > amp_threshold
    };
    let starts: Vec<usize> = (0..x.len()).step_by(hop).collect();
    let first = starts
        .iter()
        .copied()
        .find(|&s| voiced(s))
        .ok_or(Error::AllSilent)?;
    let last = starts
        .iter()
        .copied()
        .rev()
        .find(|&s| voiced(s))
        .ok_or(Error::AllSilent)?;

    let loud = |s: &f32| s.abs() as f64 >= amp_threshold;
    let last_end = (last + frame).min(x.len());
    let begin = first
        + x[first..]
            .iter()
            .position(loud)
            .expect("voiced frame holds a sample above threshold");
    let end = last
        + x[last..last_end]
            .iter()
            .rposition(loud)
            .expect("voiced frame holds a sample above threshold")
        + 1;

    let sr = w.sample_rate_hz as f64;
    Ok(Trimmed {
        waveform: w.slice(begin, end),
        leading_s: begin as f64 / sr,
        trailing_s: (x.len() - end) as f64 / sr,
    })
}
