//! Explicit-to-implicit batch mixing schedule.
//!
//! At step `t` of `T` a batch is explicit with probability `1 - t/T`. Steps
//! run from 1 to `T`, so the last batch is always implicit. Each step's draw
//! comes from a ChaCha stream keyed by `(seed, t)`, which makes any step
//! reproducible on its own.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cotgen::{CotMode, CotSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub total_steps: u64,
    pub seed: u64,
    pub batch_size: usize,
}

pub const DEFAULT_BATCH_SIZE: usize = 8;

impl Schedule {
    pub fn new(total_steps: u64, seed: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::InvalidArgument(
                "total steps must be at least 1".into(),
            ));
        }
        Ok(Schedule {
            total_steps,
            seed,
            batch_size: DEFAULT_BATCH_SIZE,
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        self.batch_size = batch_size;
        Ok(self)
    }
}

/// Probability of an explicit batch at step `t`: `1 - t/total`.
pub fn p_explicit(t: u64, total: u64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument(
            "total steps must be at least 1".into(),
        ));
    }
    if t > total {
        return Err(Error::InvalidArgument(format!(
            "step {t} beyond total {total}"
        )));
    }
    Ok(1.0 - t as f64 / total as f64)
}

/// Uniform draw in [0, 1) for step `t`. The generator state is fully
/// determined by `(seed, t)`, so there is no state to thread between calls.
pub fn step_uniform(seed: u64, t: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t);
    rng.gen::<f64>()
}

pub fn sample_mode(t: u64, total: u64, seed: u64) -> Result<CotMode> {
    let p = p_explicit(t, total)?;
    Ok(if step_uniform(seed, t) < p {
        CotMode::Explicit
    } else {
        CotMode::Implicit
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchDescriptor {
    pub step: u64,
    pub mode: CotMode,
    pub utterance_ids: Vec<String>,
}

/// Builds the training stream: one batch per step, each drawing the next
/// `batch_size` samples round-robin from the pool its mode selects.
pub fn emit_schedule(
    explicit: &[CotSample],
    implicit: &[CotSample],
    schedule: &Schedule,
) -> Result<Vec<BatchDescriptor>> {
    if explicit.is_empty() || implicit.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty sample pool (explicit: {}, implicit: {})",
            explicit.len(),
            implicit.len()
        )));
    }
    if schedule.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "batch size must be at least 1".into(),
        ));
    }
    let mut cursors = [0usize; 2];
    (1..=schedule.total_steps)
        .map(|step| {
            let mode = sample_mode(step, schedule.total_steps, schedule.seed)?;
            let (pool, cursor) = match mode {
                CotMode::Explicit => (explicit, &mut cursors[0]),
                CotMode::Implicit => (implicit, &mut cursors[1]),
            };
            let utterance_ids = (0..schedule.batch_size)
                .map(|_| {
                    let id = pool[*cursor % pool.len()].utterance_id.clone();
                    *cursor += 1;
                    id
                })
                .collect();
            Ok(BatchDescriptor {
                step,
                mode,
                utterance_ids,
            })
        })
        .collect()
}

/// Fraction of batches that are explicit.
pub fn explicit_fraction(stream: &[BatchDescriptor]) -> f64 {
    if stream.is_empty() {
        return 0.0;
    }
    let n = stream
        .iter()
        .filter(|b| b.mode == CotMode::Explicit)
        .count();
    n as f64 / stream.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cotgen::CotSource;

    fn pool(prefix: &str, mode: CotMode, n: usize) -> Vec<CotSample> {
        (0..n)
            .map(|i| CotSample {
                utterance_id: format!("{prefix}{i}"),
                mode,
                prompt_text: String::new(),
                target_text: String::new(),
                source: CotSource::Template,
            })
            .collect()
    }

    #[test]
    fn probability_examples() {
        assert_eq!(p_explicit(0, 100).unwrap(), 1.0);
        assert_eq!(p_explicit(100, 100).unwrap(), 0.0);
        assert_eq!(p_explicit(25, 100).unwrap(), 0.75);
        assert!(p_explicit(101, 100).is_err());
        assert!(p_explicit(0, 0).is_err());
    }

    #[test]
    fn endpoints_are_deterministic() {
        for seed in 0..50 {
            assert_eq!(sample_mode(0, 10, seed).unwrap(), CotMode::Explicit);
            assert_eq!(sample_mode(10, 10, seed).unwrap(), CotMode::Implicit);
        }
    }

    #[test]
    fn draws_are_keyed_by_seed_and_step() {
        assert_eq!(step_uniform(3, 17), step_uniform(3, 17));
        assert_ne!(step_uniform(3, 17), step_uniform(3, 18));
        assert_ne!(step_uniform(3, 17), step_uniform(4, 17));
    }

    #[test]
    fn single_step_is_implicit() {
        let s = Schedule::new(1, 9).unwrap();
        let stream = emit_schedule(
            &pool("e", CotMode::Explicit, 2),
            &pool("i", CotMode::Implicit, 2),
            &s,
        )
        .unwrap();
        assert_eq!(stream.len(), 1);
        assert_eq!(stream[0].mode, CotMode::Implicit);
        assert_eq!(stream[0].step, 1);
    }

    #[test]
    fn round_robin_wraps_pool() {
        let s = Schedule::new(1, 0).unwrap().with_batch_size(5).unwrap();
        let stream = emit_schedule(
            &pool("e", CotMode::Explicit, 1),
            &pool("i", CotMode::Implicit, 3),
            &s,
        )
        .unwrap();
        assert_eq!(stream[0].utterance_ids, ["i0", "i1", "i2", "i0", "i1"]);
    }

    #[test]
    fn empty_pool_is_an_error() {
        let s = Schedule::new(10, 0).unwrap();
        assert!(emit_schedule(&[], &pool("i", CotMode::Implicit, 1), &s).is_err());
        assert!(emit_schedule(&pool("e", CotMode::Explicit, 1), &[], &s).is_err());
        assert!(Schedule::new(0, 0).is_err());
        assert!(s.with_batch_size(0).is_err());
    }

    #[test]
    fn identical_seeds_identical_streams() {
        let ex = pool("e", CotMode::Explicit, 7);
        let im = pool("i", CotMode::Implicit, 5);
        let s = Schedule::new(500, 42).unwrap();
        assert_eq!(
            emit_schedule(&ex, &im, &s).unwrap(),
            emit_schedule(&ex, &im, &s).unwrap()
        );
        let other = Schedule::new(500, 43).unwrap();
        assert_ne!(
            emit_schedule(&ex, &im, &s).unwrap(),
            emit_schedule(&ex, &im, &other).unwrap()
        );
    }
}
