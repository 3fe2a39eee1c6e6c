//! Rough timing of the two stabilization engines on a dense start.
//!
//! cargo run --release --example throughput -- <lambda> <r> <samples>

use std::time::Instant;

use arw_core::engine::{Stabilizer, TopplingPolicy, DEFAULT_BUDGET};
use arw_core::fast::stabilize_sampled;
use arw_core::model::{Configuration, Volume};
use arw_core::sampling::{stream_rng, Purpose, SiteStacks, SleepRate, StreamId};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lambda: f64 = args.get(1).map_or(0.01, |s| s.parse().unwrap());
    let r: u64 = args.get(2).map_or(400, |s| s.parse().unwrap());
    let samples: u64 = args.get(3).map_or(3, |s| s.parse().unwrap());
    let rate = SleepRate::new(lambda).unwrap();
    let vol = Volume::centered(r);
    let cfg = Configuration::from_counts(vol, &vec![1; vol.len()]).unwrap();

    for policy in [TopplingPolicy::WalkChase, TopplingPolicy::Fifo] {
        let t = Instant::now();
        let mut topplings = 0;
        let mut sleeping = 0;
        for seed in 0..samples {
            let stacks = SiteStacks::new(rate, seed, vol, Purpose::Stacks);
            let mut st = Stabilizer::new(cfg.clone(), &stacks, DEFAULT_BUDGET);
            st.stabilize(policy).unwrap();
            topplings += st.topplings();
            sleeping += st.config().sleeping();
        }
        let dt = t.elapsed().as_secs_f64();
        println!(
            "{policy:?}: {:.3} s/sample, {:.2} ns/toppling, mean S {:.1}",
            dt / samples as f64,
            dt * 1e9 / topplings as f64,
            sleeping as f64 / samples as f64
        );
    }
    let t = Instant::now();
    let mut events = 0;
    let mut sleeping = 0;
    let n = samples * 20;
    for seed in 0..n {
        let mut rng = stream_rng(seed, StreamId::site(Purpose::Excursion, 0));
        let out = stabilize_sampled(&cfg, rate, &mut rng, u64::MAX).unwrap();
        events += out.events;
        sleeping += out.sleeping;
    }
    let dt = t.elapsed().as_secs_f64();
    println!(
        "excursion: {:.4} s/sample, {:.1} events/sample, mean S {:.1}",
        dt / n as f64,
        events as f64 / n as f64,
        sleeping as f64 / n as f64
    );
}
