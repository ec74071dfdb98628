//! Corpus statistics and mean ± one standard deviation discretization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{AcousticAttributes, Level};
use crate::manifest::UtteranceRecord;

/// Single-pass running moments (count, mean, sum of squared deviations).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Accumulator {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Accumulator {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut acc = Accumulator::default();
        for v in values {
            acc.push(v);
        }
        acc
    }

    /// Welford update.
    pub fn push(&mut self, value: f64) {
        self.n += 1;
        let delta = value - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (value - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&self, other: &Accumulator) -> Accumulator {
        if other.n == 0 {
            return *self;
        }
        if self.n == 0 {
            return *other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let (na, nb, nf) = (self.n as f64, other.n as f64, n as f64);
        Accumulator {
            n,
            mean: (na * self.mean + nb * other.mean) / nf,
            m2: self.m2 + other.m2 + delta * delta * na * nb / nf,
        }
    }

    pub fn population_std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2.max(0.0) / self.n as f64).sqrt()
        }
    }

    pub fn sample_std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2.max(0.0) / (self.n - 1) as f64).sqrt()
        }
    }

    pub fn std(&self, sigma: SigmaKind) -> f64 {
        match sigma {
            SigmaKind::Population => self.population_std(),
            SigmaKind::Sample => self.sample_std(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaKind {
    #[default]
    Population,
    Sample,
}

/// Per-attribute accumulators over a corpus. This is the `stats.json` format.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub pitch: Accumulator,
    pub loudness: Accumulator,
    pub rate: Accumulator,
}

impl CorpusStats {
    /// Adds one utterance. A missing pitch (fully unvoiced) only skips the
    /// pitch accumulator.
    pub fn accumulate(mut self, attrs: &AcousticAttributes) -> CorpusStats {
        if let Some(p) = attrs.pitch_mean_hz {
            self.pitch.push(p);
        }
        self.loudness.push(attrs.loudness_lufs);
        self.rate.push(attrs.speaking_rate_pps);
        self
    }

    pub fn merge(&self, other: &CorpusStats) -> CorpusStats {
        CorpusStats {
            pitch: self.pitch.merge(&other.pitch),
            loudness: self.loudness.merge(&other.loudness),
            rate: self.rate.merge(&other.rate),
        }
    }

    /// Accumulates every record that carries attributes.
    pub fn from_records(records: &[UtteranceRecord]) -> CorpusStats {
        records
            .iter()
            .filter_map(|r| r.attributes.as_ref())
            .fold(CorpusStats::default(), CorpusStats::accumulate)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CorpusStats> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedLine {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("stats serialize");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Low below μ−σ, High above μ+σ, Medium otherwise (both bounds inclusive).
pub fn discretize(value: f64, mean: f64, std: f64) -> Result<Level> {
    if !value.is_finite() || !mean.is_finite() || !std.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite input to discretize: value={value}, mean={mean}, std={std}"
        )));
    }
    if std < 0.0 {
        return Err(Error::InvalidArgument(format!("negative std {std}")));
    }
    Ok(if value < mean - std {
        Level::Low
    } else if value > mean + std {
        Level::High
    } else {
        Level::Medium
    })
}

/// Sets the three levels on every record from corpus statistics.
pub fn discretize_attributes(
    mut records: Vec<UtteranceRecord>,
    stats: &CorpusStats,
    sigma: SigmaKind,
) -> Result<Vec<UtteranceRecord>> {
    for (name, acc) in [
        ("pitch", &stats.pitch),
        ("loudness", &stats.loudness),
        ("rate", &stats.rate),
    ] {
        if acc.n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 values for {name} statistics, have {}",
                acc.n
            )));
        }
    }
    let level = |v: f64, acc: &Accumulator| discretize(v, acc.mean, acc.std(sigma));
    for record in &mut records {
        let id = record.id.clone();
        let attrs = record.attributes.as_mut().ok_or(Error::MissingField {
            id: id.clone(),
            what: "attributes",
        })?;
        let pitch = attrs.pitch_mean_hz.ok_or(Error::MissingField {
            id,
            what: "attributes.pitch_mean_hz",
        })?;
        attrs.pitch_level = Some(level(pitch, &stats.pitch)?);
        attrs.energy_level = Some(level(attrs.loudness_lufs, &stats.loudness)?);
        attrs.rate_level = Some(level(attrs.speaking_rate_pps, &stats.rate)?);
    }
    Ok(records)
}
