use emocot_core::cotgen::{CotMode, CotSample, CotSource};
use emocot_core::curriculum::{emit_schedule, explicit_fraction, p_explicit, Schedule};
use proptest::prelude::*;

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

fn stream(total: u64, seed: u64) -> Vec<emocot_core::curriculum::BatchDescriptor> {
    let s = Schedule::new(total, seed)
        .unwrap()
        .with_batch_size(1)
        .unwrap();
    emit_schedule(
        &pool("e", CotMode::Explicit, 3),
        &pool("i", CotMode::Implicit, 3),
        &s,
    )
    .unwrap()
}

#[test]
fn endpoints_exact() {
    assert_eq!(p_explicit(0, 10_000).unwrap(), 1.0);
    assert_eq!(p_explicit(10_000, 10_000).unwrap(), 0.0);
}

#[test]
fn overall_fraction_is_half() {
    for seed in [0, 7, 12345] {
        let f = explicit_fraction(&stream(10_000, seed));
        assert!((f - 0.5).abs() < 0.02, "seed {seed}: {f}");
    }
}

#[test]
fn early_steps_are_mostly_explicit() {
    let total = 10_000u64;
    let prefix = (total / 10) as usize;
    // Expected share over the first tenth and a 5-sigma binomial bound.
    let ps: Vec<f64> = (1..=prefix as u64)
        .map(|t| p_explicit(t, total).unwrap())
        .collect();
    let mean = ps.iter().sum::<f64>() / prefix as f64;
    let var = ps.iter().map(|p| p * (1.0 - p)).sum::<f64>() / (prefix as f64).powi(2);
    let lower = mean - 5.0 * var.sqrt();
    assert!(lower >= 0.85, "bound {lower}");
    for seed in [1, 2, 3] {
        let f = explicit_fraction(&stream(total, seed)[..prefix]);
        assert!(f >= lower, "seed {seed}: {f} < {lower}");
    }
}

#[test]
fn windowed_fraction_tracks_decay() {
    let total = 10_000u64;
    let s = stream(total, 21);
    for (w, chunk) in s.chunks(1000).enumerate() {
        let centre = (w as f64 * 1000.0 + 500.0) / total as f64;
        assert!((explicit_fraction(chunk) - (1.0 - centre)).abs() < 0.07);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reproducible_and_well_formed(total in 1u64..300, seed in any::<u64>(), batch in 1usize..6) {
        let s = Schedule::new(total, seed).unwrap().with_batch_size(batch).unwrap();
        let ex = pool("e", CotMode::Explicit, 4);
        let im = pool("i", CotMode::Implicit, 2);
        let a = emit_schedule(&ex, &im, &s).unwrap();
        prop_assert_eq!(&a, &emit_schedule(&ex, &im, &s).unwrap());
        prop_assert_eq!(a.len() as u64, total);
        prop_assert_eq!(a.last().unwrap().mode, CotMode::Implicit);
        for (i, b) in a.iter().enumerate() {
            prop_assert_eq!(b.step, i as u64 + 1);
            prop_assert_eq!(b.utterance_ids.len(), batch);
            let prefix = if b.mode == CotMode::Explicit { "e" } else { "i" };
            prop_assert!(b.utterance_ids.iter().all(|id| id.starts_with(prefix)));
        }
    }

    #[test]
    fn probability_is_monotone(total in 1u64..10_000, a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let (t1, t2) = (a.index(total as usize + 1) as u64, b.index(total as usize + 1) as u64);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        prop_assert!(p_explicit(lo, total).unwrap() >= p_explicit(hi, total).unwrap());
    }
}
