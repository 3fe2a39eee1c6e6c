//! Invariant suites run by `arw verify`.

use num_rational::BigRational;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blocks::{bernoulli_configuration, colored_stabilize, BlockLayout, Schedule};
use crate::bounds::{hwalk_exact_sequence, reciprocal_row_mean};
use crate::engine::{stabilize, Stabilizer, TopplingPolicy, DEFAULT_BUDGET};
use crate::error::Result;
use crate::model::{Configuration, Volume};
use crate::sampling::{Purpose, SiteStacks, SleepRate};
use crate::singleblock::{decompose_tau, run_block_profile, AdditionSequence, BlockGeometry};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// The toppling orders compared by the order-independence suite.
pub fn policies() -> Vec<TopplingPolicy> {
    let mut p = vec![
        TopplingPolicy::Fifo,
        TopplingPolicy::LeftmostFirst,
        TopplingPolicy::WalkChase,
    ];
    p.extend((1..=7).map(|seed| TopplingPolicy::RandomOrder { seed }));
    p
}

/// Random small instance: volume of at most 7 sites, at most 5 walks.
pub fn random_instance<R: Rng>(rng: &mut R) -> (Configuration, SleepRate, u64) {
    let r = rng.gen_range(0..=3u64);
    let vol = Volume::centered(r);
    let mut cfg = Configuration::empty(vol);
    for _ in 0..rng.gen_range(1..=5) {
        cfg.add_walk(rng.gen_range(vol.lo()..=vol.hi()));
    }
    let rate = SleepRate::new(rng.gen_range(0.05..4.0)).expect("positive");
    (cfg, rate, rng.gen())
}

pub fn order_independence(instances: u32, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let (cfg, rate, s) = random_instance(&mut rng);
        let stacks = SiteStacks::new(rate, s, cfg.volume(), Purpose::Stacks);
        let mut results = policies()
            .into_iter()
            .map(|p| stabilize(cfg.clone(), &stacks, p, DEFAULT_BUDGET));
        let first = results.next().expect("at least one policy")?;
        for r in results {
            if r? != first {
                bad += 1;
            }
        }
    }
    Ok(Check {
        name: "order independence",
        passed: bad == 0,
        detail: format!("{instances} instances x {} orders, {bad} mismatches", policies().len()),
    })
}

pub fn incremental_equals_batch(instances: u32, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let (cfg, rate, s) = random_instance(&mut rng);
        let stacks = SiteStacks::new(rate, s, cfg.volume(), Purpose::Stacks);
        let extra: Vec<i64> = (0..rng.gen_range(1..=4))
            .map(|_| rng.gen_range(cfg.volume().lo()..=cfg.volume().hi()))
            .collect();
        let mut inc = Stabilizer::new(cfg.clone(), &stacks, DEFAULT_BUDGET);
        inc.stabilize(TopplingPolicy::Fifo)?;
        for &x in &extra {
            inc.add_walk(x);
            inc.stabilize(TopplingPolicy::WalkChase)?;
        }
        let mut all = cfg.clone();
        for &x in &extra {
            all.add_walk(x);
        }
        let batch = stabilize(all, &stacks, TopplingPolicy::LeftmostFirst, DEFAULT_BUDGET)?;
        if inc.into_result() != batch {
            bad += 1;
        }
    }
    Ok(Check {
        name: "incremental equals batch",
        passed: bad == 0,
        detail: format!("{instances} instances, {bad} mismatches"),
    })
}

pub fn single_block_identities(samples: u64, seed: u64) -> Result<Check> {
    let rate = SleepRate::new(0.2)?;
    let geom = BlockGeometry::new(4)?;
    let mut bad = 0;
    for i in 0..samples {
        let p = run_block_profile(rate, geom, &[-1, 2], &AdditionSequence::at_origin(), 60, seed ^ i)?;
        if !p.is_consistent() {
            bad += 1;
            continue;
        }
        let top = p.l(p.m_max());
        if top == 0 {
            continue;
        }
        let d = decompose_tau(&p, top)?;
        if (0..top).any(|ell| p.ell_sum_direct(ell, 0.3) != d.window_sum(&p, ell, 0.3)) {
            bad += 1;
        }
    }
    Ok(Check {
        name: "single-block conservation and window sums",
        passed: bad == 0,
        detail: format!("{samples} profiles, {bad} failures"),
    })
}

pub fn mass_balance(samples: u64, seed: u64) -> Result<Check> {
    let layout = BlockLayout::new(27, 4)?;
    let rate = SleepRate::new(0.25)?;
    let mut bad = 0;
    for i in 0..samples {
        let eta0 = bernoulli_configuration(layout.volume(), 0.5, seed ^ i);
        let out = colored_stabilize(&eta0, &layout, rate, seed ^ i, Schedule::RoundRobin, DEFAULT_BUDGET)?;
        if !out.record.is_balanced() || out.s_star + out.exits != eta0.mass() {
            bad += 1;
        }
    }
    Ok(Check {
        name: "colored mass balance",
        passed: bad == 0,
        detail: format!("{samples} samples at r=27, K=4, {bad} failures"),
    })
}

pub fn exact_walk_identities() -> Result<Check> {
    let rows_ok = (2..=64u64).all(|x| (reciprocal_row_mean(x) * BigRational::from_integer(x.into())).is_one());
    let seq = hwalk_exact_sequence(20)?;
    let tails_ok = seq.iter().all(|d| d.tail_inequality_holds());
    let total_ok = seq.iter().all(|d| d.total().is_one());
    Ok(Check {
        name: "conditioned walk identities",
        passed: rows_ok && tails_ok && total_ok,
        detail: format!("rows x>=2 {rows_ok}, tails n<=20 {tails_ok}, normalization {total_ok}"),
    })
}

pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        order_independence(100, seed)?,
        incremental_equals_batch(200, seed)?,
        single_block_identities(200, seed)?,
        mass_balance(200, seed)?,
        exact_walk_identities()?,
    ])
}
