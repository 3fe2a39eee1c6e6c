use proptest::prelude::*;

use arw_core::engine::{stabilize, Stabilizer, TopplingPolicy, DEFAULT_BUDGET};
use arw_core::model::{Configuration, Volume};
use arw_core::sampling::{Purpose, SiteStacks, SleepRate};
use arw_core::verify::policies;

fn instance(r: u64, walks: &[i64]) -> Configuration {
    let vol = Volume::centered(r);
    let mut cfg = Configuration::empty(vol);
    for &w in walks {
        cfg.add_walk(w.clamp(vol.lo(), vol.hi()));
    }
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn final_state_ignores_toppling_order(
        r in 0u64..=3,
        walks in prop::collection::vec(-3i64..=3, 1..=5),
        lambda in 0.05f64..5.0,
        seed in any::<u64>(),
    ) {
        let cfg = instance(r, &walks);
        let rate = SleepRate::new(lambda).unwrap();
        let stacks = SiteStacks::new(rate, seed, cfg.volume(), Purpose::Stacks);
        let reference = stabilize(cfg.clone(), &stacks, TopplingPolicy::Fifo, DEFAULT_BUDGET).unwrap();
        prop_assert_eq!(reference.sleeping + reference.exits(), walks.len() as u64);
        for p in policies() {
            let other = stabilize(cfg.clone(), &stacks, p, DEFAULT_BUDGET).unwrap();
            prop_assert_eq!(&other, &reference);
        }
    }

    #[test]
    fn adding_walks_never_decreases_the_odometer(
        r in 1u64..=6,
        walks in prop::collection::vec(-6i64..=6, 1..=8),
        extra in -6i64..=6,
        seed in any::<u64>(),
    ) {
        let cfg = instance(r, &walks);
        let rate = SleepRate::new(0.4).unwrap();
        let stacks = SiteStacks::new(rate, seed, cfg.volume(), Purpose::Stacks);
        let base = stabilize(cfg.clone(), &stacks, TopplingPolicy::WalkChase, DEFAULT_BUDGET).unwrap();
        let mut more = cfg;
        more.add_walk(extra.clamp(-(r as i64), r as i64));
        let bigger = stabilize(more, &stacks, TopplingPolicy::WalkChase, DEFAULT_BUDGET).unwrap();
        prop_assert!(bigger.odometer.dominates(&base.odometer));
    }

    #[test]
    fn incremental_additions_match_batch(
        r in 0u64..=4,
        walks in prop::collection::vec(-4i64..=4, 0..=4),
        extra in prop::collection::vec(-4i64..=4, 1..=4),
        seed in any::<u64>(),
    ) {
        let cfg = instance(r, &walks);
        let rate = SleepRate::new(0.7).unwrap();
        let stacks = SiteStacks::new(rate, seed, cfg.volume(), Purpose::Stacks);
        let mut inc = Stabilizer::new(cfg.clone(), &stacks, DEFAULT_BUDGET);
        inc.stabilize(TopplingPolicy::LeftmostFirst).unwrap();
        let mut all = cfg;
        for &x in &extra {
            let x = x.clamp(-(r as i64), r as i64);
            inc.add_walk(x);
            inc.stabilize(TopplingPolicy::Fifo).unwrap();
            all.add_walk(x);
        }
        let batch = stabilize(all, &stacks, TopplingPolicy::WalkChase, DEFAULT_BUDGET).unwrap();
        prop_assert_eq!(inc.into_result(), batch);
    }
}
