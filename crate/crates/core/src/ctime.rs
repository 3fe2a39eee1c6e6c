//! Continuous-time dynamics on an interval or a ring.
//!
//! Each active walk carries a rate `1+λ` clock. When it rings the walk
//! tries to sleep with probability `λ/(1+λ)` (which only works if it is
//! alone) and otherwise jumps to a uniform neighbour. Events are drawn with
//! the direct method: exponential waiting time at the total rate, then a
//! uniform active walk. The activity `T` is the integral of the number of
//! active walks over time and is accumulated exactly between events.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ArwError, Result};
use crate::model::{Configuration, SiteState, Volume};
use crate::sampling::{derive_seed, poisson, stream_rng, Purpose, SleepRate, StreamId};
use crate::stats::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    /// Walks leaving the configuration's volume are removed.
    Interval,
    /// Sites `0..n` of the volume wrap around.
    Ring,
}

/// Stop after this many events or once the activity reaches `max_activity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtBudget {
    pub max_events: u64,
    pub max_activity: f64,
}

impl CtBudget {
    pub fn events(n: u64) -> CtBudget {
        CtBudget {
            max_events: n,
            max_activity: f64::INFINITY,
        }
    }

    pub fn activity(t: f64) -> CtBudget {
        CtBudget {
            max_events: u64::MAX,
            max_activity: t,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivityMeter {
    /// `∫ (number of active walks) dt`.
    pub activity: f64,
    pub time: f64,
    pub events: u64,
    /// All walks asleep or gone.
    pub absorbed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtOutcome {
    pub final_config: Configuration,
    pub meter: ActivityMeter,
}

const SLEEPING: i32 = -1;

/// Run until absorption or until the budget runs out; in the latter case
/// the meter reports `absorbed = false` and the activity so far.
pub fn simulate_ct<R: Rng + ?Sized>(
    init: &Configuration,
    topology: Topology,
    rate: SleepRate,
    budget: CtBudget,
    rng: &mut R,
) -> Result<CtOutcome> {
    let len = init.volume().len();
    if topology == Topology::Ring && len < 2 {
        return Err(ArwError::Geometry("a ring needs at least two sites".into()));
    }
    let mut occ: Vec<i32> = init
        .states()
        .iter()
        .map(|s| match *s {
            SiteState::Empty => 0,
            SiteState::Sleeping => SLEEPING,
            SiteState::Active(n) => n.get() as i32,
        })
        .collect();
    // positions of active walks, one entry per walk
    let mut walkers: Vec<usize> = Vec::new();
    for (i, &o) in occ.iter().enumerate() {
        for _ in 0..o.max(0) {
            walkers.push(i);
        }
    }
    let mut left = init.left_exits;
    let mut right = init.right_exits;
    let q = rate.sleep_probability();
    let unit = Exp::new(1.0).expect("rate 1");
    let mut meter = ActivityMeter::default();

    while !walkers.is_empty() {
        if meter.events >= budget.max_events {
            break;
        }
        let a = walkers.len() as f64;
        debug_assert_eq!(
            occ.iter().map(|&o| o.max(0) as usize).sum::<usize>(),
            walkers.len(),
            "rate bookkeeping"
        );
        let dt = unit.sample(rng) / ((1.0 + rate.lambda()) * a);
        if meter.activity + a * dt >= budget.max_activity {
            meter.time += (budget.max_activity - meter.activity) / a;
            meter.activity = budget.max_activity;
            break;
        }
        meter.time += dt;
        meter.activity += a * dt;
        meter.events += 1;

        let w = rng.gen_range(0..walkers.len());
        let x = walkers[w];
        if rng.gen::<f64>() < q {
            if occ[x] == 1 {
                occ[x] = SLEEPING;
                walkers.swap_remove(w);
            }
            continue;
        }
        let step_right = rng.gen::<bool>();
        occ[x] -= 1;
        let target = match (topology, step_right) {
            (Topology::Ring, true) => Some((x + 1) % len),
            (Topology::Ring, false) => Some((x + len - 1) % len),
            (Topology::Interval, true) => Some(x + 1).filter(|&j| j < len),
            (Topology::Interval, false) => x.checked_sub(1),
        };
        match target {
            Some(j) => {
                walkers[w] = j;
                if occ[j] == SLEEPING {
                    occ[j] = 2;
                    walkers.push(j);
                } else {
                    occ[j] += 1;
                }
            }
            None => {
                walkers.swap_remove(w);
                if step_right {
                    right += 1;
                } else {
                    left += 1;
                }
            }
        }
    }
    meter.absorbed = walkers.is_empty();

    let states = occ
        .iter()
        .map(|&o| match o {
            SLEEPING => SiteState::Sleeping,
            n => SiteState::active(n as u32),
        })
        .collect();
    let mut final_config = Configuration::from_states(init.volume(), states)?;
    final_config.left_exits = left;
    final_config.right_exits = right;
    Ok(CtOutcome { final_config, meter })
}

/// I.i.d. Poisson(ζ) walks on `n` sites.
pub fn poisson_configuration(n: u32, zeta: f64, seed: u64) -> Result<Configuration> {
    let vol = ring_volume(n)?;
    let mut rng = stream_rng(seed, StreamId::site(Purpose::InitialConfig, 0));
    let counts = (0..n).map(|_| poisson(zeta, &mut rng)).collect::<Result<Vec<u32>>>()?;
    Configuration::from_counts(vol, &counts)
}

pub fn ring_volume(n: u32) -> Result<Volume> {
    if n < 2 {
        return Err(ArwError::Geometry("a ring needs at least two sites".into()));
    }
    Volume::new(0, n as i64 - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingSample {
    pub sample_id: u64,
    pub activity: f64,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingSummary {
    pub n: u32,
    pub zeta: f64,
    pub samples: Vec<RingSample>,
    /// Median activity with censored samples counted at the cutoff, which
    /// makes it a lower bound whenever anything was censored.
    pub median: f64,
    pub quartiles: (f64, f64),
    pub censored_fraction: f64,
}

pub fn ring_metastability(
    rate: SleepRate,
    zeta: f64,
    n: u32,
    samples: u64,
    budget: CtBudget,
    seed: u64,
) -> Result<RingSummary> {
    if !(zeta >= 0.0) {
        return Err(ArwError::domain("zeta must be nonnegative"));
    }
    let rows: Vec<RingSample> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, &[n as u64, i]);
            let init = poisson_configuration(n, zeta, s)?;
            let mut rng = stream_rng(s, StreamId::site(Purpose::Clock, 0));
            let out = simulate_ct(&init, Topology::Ring, rate, budget, &mut rng)?;
            Ok(RingSample {
                sample_id: i,
                activity: out.meter.activity,
                censored: !out.meter.absorbed,
            })
        })
        .collect::<Result<_>>()?;
    let mut t: Vec<f64> = rows.iter().map(|r| r.activity).collect();
    t.sort_by(f64::total_cmp);
    let censored = rows.iter().filter(|r| r.censored).count();
    Ok(RingSummary {
        n,
        zeta,
        median: quantile_sorted(&t, 0.5),
        quartiles: (quantile_sorted(&t, 0.25), quantile_sorted(&t, 0.75)),
        censored_fraction: censored as f64 / samples.max(1) as f64,
        samples: rows,
    })
}
