//! Colored block decomposition of `V_r`.
//!
//! `V_r` is tiled by `n` inner regions of width `K+1` around sources spaced
//! `K+1` apart. Block `i` is `{s_i-K..s_i+K}`, so its edges sit right next to
//! the neighbouring sources. A walk of color `i` lives in block `i` and only
//! reads the stacks of `(block i, color i)`; when it steps onto a
//! neighbouring source it takes that source's color and counts as one more
//! addition to that block. Walks of different colors never interact, so
//! each block is a single-block system fed at its source.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Stabilizer, TopplingPolicy, DEFAULT_BUDGET};
use crate::error::{ArwError, Result};
use crate::model::{Configuration, SiteState, Volume};
use crate::sampling::{derive_seed, stream_rng, Purpose, SiteStacks, SleepRate, StreamId};
use crate::singleblock::BlockProfile;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    r: u64,
    k: u32,
    n: u32,
}

impl BlockLayout {
    /// Requires `K` even and `2r+1` a multiple of `K+1`. Sources are placed
    /// at `s_i = i(K+1) - r - K/2 - 1`, which centres the layout in `V_r`.
    pub fn new(r: u64, k: u32) -> Result<BlockLayout> {
        if k == 0 || k % 2 != 0 {
            return Err(ArwError::Geometry(format!("K must be even and positive, got {k}")));
        }
        let width = k as u64 + 1;
        if (2 * r + 1) % width != 0 {
            return Err(ArwError::Geometry(format!(
                "2r+1 = {} is not a multiple of K+1 = {width}",
                2 * r + 1
            )));
        }
        Ok(BlockLayout {
            r,
            k,
            n: ((2 * r + 1) / width) as u32,
        })
    }

    /// Smallest `r' >= r` for which `(r', K)` is a valid layout.
    pub fn admissible_r(r: u64, k: u32) -> Result<u64> {
        if k == 0 || k % 2 != 0 {
            return Err(ArwError::Geometry(format!("K must be even and positive, got {k}")));
        }
        let width = k as u64 + 1;
        let mut r2 = r;
        while (2 * r2 + 1) % width != 0 {
            r2 += 1;
        }
        Ok(r2)
    }

    pub fn r(&self) -> u64 {
        self.r
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn volume(&self) -> Volume {
        Volume::centered(self.r)
    }

    /// Source of block `i`, `1 <= i <= n`.
    pub fn source(&self, i: u32) -> i64 {
        i as i64 * (self.k as i64 + 1) - self.r as i64 - self.k as i64 / 2 - 1
    }

    pub fn sources(&self) -> Vec<i64> {
        (1..=self.n).map(|i| self.source(i)).collect()
    }

    pub fn block(&self, i: u32) -> Volume {
        let s = self.source(i);
        Volume::new(s - self.k as i64, s + self.k as i64).expect("K > 0")
    }

    pub fn inner(&self, i: u32) -> Volume {
        let s = self.source(i);
        let h = self.k as i64 / 2;
        Volume::new(s - h, s + h).expect("K > 0")
    }

    /// Block whose inner region holds `x`, for `x` in `V_r`.
    pub fn nearest(&self, x: i64) -> Option<u32> {
        if !self.volume().contains(x) {
            return None;
        }
        Some(((x + self.r as i64) / (self.k as i64 + 1)) as u32 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MassBalanceRecord {
    pub m_star: Vec<u64>,
    pub left: Vec<u64>,
    pub right: Vec<u64>,
    pub sleeping: Vec<u64>,
    /// `m_i - R_{i-1}(m_{i-1}) - L_{i+1}(m_{i+1})`.
    pub residuals: Vec<i64>,
    /// `L_i(m_i) - (m_{i-1} - R_{i-2}(m_{i-2}))` for `i >= 2`; block 1's
    /// left exits leave the system and have no left-hand block to balance.
    pub rewritten_residuals: Vec<i64>,
}

impl MassBalanceRecord {
    fn from_profiles(profiles: &[BlockProfile], m_star: Vec<u64>) -> MassBalanceRecord {
        let n = profiles.len();
        let at = |v: &dyn Fn(&BlockProfile, u64) -> u64, i: usize| v(&profiles[i], m_star[i]);
        let left: Vec<u64> = (0..n).map(|i| at(&BlockProfile::l, i)).collect();
        let right: Vec<u64> = (0..n).map(|i| at(&BlockProfile::r, i)).collect();
        let sleeping: Vec<u64> = (0..n).map(|i| at(&BlockProfile::s, i)).collect();
        let residuals = (0..n)
            .map(|i| {
                let from_left = if i > 0 { right[i - 1] } else { 0 };
                let from_right = if i + 1 < n { left[i + 1] } else { 0 };
                m_star[i] as i64 - from_left as i64 - from_right as i64
            })
            .collect();
        let rewritten_residuals = (1..n)
            .map(|i| {
                let r2 = if i >= 2 { right[i - 2] } else { 0 };
                left[i] as i64 - (m_star[i - 1] as i64 - r2 as i64)
            })
            .collect();
        MassBalanceRecord {
            m_star,
            left,
            right,
            sleeping,
            residuals,
            rewritten_residuals,
        }
    }

    pub fn is_balanced(&self) -> bool {
        self.residuals.iter().all(|&x| x == 0) && self.rewritten_residuals.iter().all(|&x| x == 0)
    }
}

/// Order in which pending source arrivals are processed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    /// Sweep blocks `1..n`, one pending arrival per block per sweep.
    #[default]
    RoundRobin,
    /// Always serve the highest-numbered block with a pending arrival.
    RightFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColoredOutcome {
    /// Sleeping walks over all colors.
    pub s_star: u64,
    /// Walks that left `V_r` through the outer edges of blocks 1 and n.
    pub exits: u64,
    pub record: MassBalanceRecord,
    pub profiles: Vec<BlockProfile>,
    pub topplings: u64,
}

/// Stacks of `(block i, color i)` on block `i`.
pub fn colored_stacks(rate: SleepRate, layout: &BlockLayout, i: u32, seed: u64) -> SiteStacks {
    SiteStacks::colored(rate, seed, layout.block(i), Purpose::Colored, i, i)
}

pub fn colored_stabilize(
    eta0: &Configuration,
    layout: &BlockLayout,
    rate: SleepRate,
    seed: u64,
    schedule: Schedule,
    budget: u64,
) -> Result<ColoredOutcome> {
    if eta0.volume() != layout.volume() {
        return Err(ArwError::Geometry("configuration volume differs from the layout".into()));
    }
    if eta0.states().iter().any(|s| !matches!(s, SiteState::Empty | SiteState::Active(_)) || s.walks() > 1) {
        return Err(ArwError::domain("initial configuration must be binary and awake"));
    }
    let n = layout.n() as usize;
    let mut blocks: Vec<Stabilizer<SiteStacks>> = (1..=layout.n())
        .map(|i| Stabilizer::empty(layout.block(i), colored_stacks(rate, layout, i, seed), budget))
        .collect();
    let policy = TopplingPolicy::WalkChase;
    let mut pending = vec![0u64; n];
    let mut profiles: Vec<BlockProfile> = Vec::with_capacity(n);

    // initial walks, each block stabilized on its own share
    for (b, st) in blocks.iter_mut().enumerate() {
        let mut count = 0;
        for x in layout.inner(b as u32 + 1).sites() {
            if eta0.state(x).walks() == 1 {
                st.add_walk(x);
                count += 1;
            }
        }
        st.stabilize(policy)?;
        profiles.push(BlockProfile {
            initial_walks: count,
            left: vec![st.config().left_exits],
            right: vec![st.config().right_exits],
            sleeping: vec![st.config().sleeping()],
            marks: Vec::new(),
            wakeups: Vec::new(),
        });
    }
    let mut sent_left = vec![0u64; n];
    let mut sent_right = vec![0u64; n];
    let forward = |b: usize, blocks: &[Stabilizer<SiteStacks>], pending: &mut [u64], sl: &mut [u64], sr: &mut [u64]| {
        let c = blocks[b].config();
        if b > 0 {
            pending[b - 1] += c.left_exits - sl[b];
        }
        if b + 1 < n {
            pending[b + 1] += c.right_exits - sr[b];
        }
        sl[b] = c.left_exits;
        sr[b] = c.right_exits;
    };
    for b in 0..n {
        forward(b, &blocks, &mut pending, &mut sent_left, &mut sent_right);
    }

    let mut topplings_budget_used = 0u64;
    loop {
        let next: Vec<usize> = match schedule {
            Schedule::RoundRobin => (0..n).filter(|&b| pending[b] > 0).collect(),
            Schedule::RightFirst => (0..n).rev().find(|&b| pending[b] > 0).into_iter().collect(),
        };
        if next.is_empty() {
            break;
        }
        for b in next {
            if pending[b] == 0 {
                continue;
            }
            pending[b] -= 1;
            let st = &mut blocks[b];
            st.add_walk(layout.source(b as u32 + 1));
            st.stabilize(policy)?;
            let c = st.config();
            let p = &mut profiles[b];
            p.left.push(c.left_exits);
            p.right.push(c.right_exits);
            p.sleeping.push(c.sleeping());
            forward(b, &blocks, &mut pending, &mut sent_left, &mut sent_right);
        }
        topplings_budget_used = blocks.iter().map(|s| s.topplings()).sum();
        if topplings_budget_used > budget {
            return Err(ArwError::BudgetExceeded {
                limit: budget,
                partial: Box::new(eta0.clone()),
            });
        }
    }

    let m_star: Vec<u64> = profiles.iter().map(|p| p.m_max()).collect();
    let record = MassBalanceRecord::from_profiles(&profiles, m_star);
    let s_star = blocks.iter().map(|s| s.config().sleeping()).sum();
    let exits = blocks[0].config().left_exits + blocks[n - 1].config().right_exits;
    Ok(ColoredOutcome {
        s_star,
        exits,
        record,
        profiles,
        topplings: blocks.iter().map(|s| s.topplings()).sum::<u64>().max(topplings_budget_used),
    })
}

/// Bernoulli(ζ) configuration on a volume drawn from a seeded stream.
pub fn bernoulli_configuration(volume: Volume, zeta: f64, seed: u64) -> Configuration {
    let mut rng = stream_rng(seed, StreamId::site(Purpose::InitialConfig, 0));
    let counts: Vec<u32> = volume.sites().map(|_| (rng.gen::<f64>() < zeta) as u32).collect();
    Configuration::from_counts(volume, &counts).expect("counts match volume")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub samples: u64,
    /// `P(S(V_r) >= k)` for `k = 0..=2r+1`.
    pub tail_uncolored: Vec<f64>,
    pub tail_colored: Vec<f64>,
    /// Largest `P(S >= k) - P(S* >= k)` in units of its standard error.
    pub worst_z: f64,
    pub mean_uncolored: f64,
    pub mean_colored: f64,
}

impl DominanceReport {
    pub fn dominated_within(&self, z: f64) -> bool {
        self.worst_z <= z
    }
}

/// Sleepers after the plain stabilization of `V_r` and after the colored
/// procedure, both started from the same Bernoulli(ζ) configuration but
/// with independent stacks.
pub fn compare_s_star(
    rate: SleepRate,
    r: u64,
    k: u32,
    zeta: f64,
    samples: u64,
    seed: u64,
) -> Result<DominanceReport> {
    let layout = BlockLayout::new(r, k)?;
    let vol = layout.volume();
    let pairs: Vec<(u64, u64)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, &[i]);
            let eta0 = bernoulli_configuration(vol, zeta, s);
            let stacks = SiteStacks::new(rate, s, vol, Purpose::Uncolored);
            let mut st = Stabilizer::new(eta0.clone(), &stacks, DEFAULT_BUDGET);
            st.stabilize(TopplingPolicy::WalkChase)?;
            let c = colored_stabilize(&eta0, &layout, rate, s, Schedule::RoundRobin, DEFAULT_BUDGET)?;
            Ok((st.config().sleeping(), c.s_star))
        })
        .collect::<Result<_>>()?;
    let len = vol.len() + 1;
    let tail = |pick: &dyn Fn(&(u64, u64)) -> u64| -> Vec<f64> {
        (0..len)
            .map(|k| pairs.iter().filter(|p| pick(p) >= k as u64).count() as f64 / samples as f64)
            .collect()
    };
    let tail_uncolored = tail(&|p| p.0);
    let tail_colored = tail(&|p| p.1);
    let ns = samples as f64;
    let worst_z = tail_uncolored
        .iter()
        .zip(&tail_colored)
        .map(|(&a, &b)| {
            let se = ((a * (1.0 - a) + b * (1.0 - b)) / ns).sqrt();
            let d = a - b;
            if d <= 0.0 {
                0.0
            } else if se == 0.0 {
                f64::INFINITY
            } else {
                d / se
            }
        })
        .fold(0.0, f64::max);
    Ok(DominanceReport {
        samples,
        mean_uncolored: pairs.iter().map(|p| p.0 as f64).sum::<f64>() / ns,
        mean_colored: pairs.iter().map(|p| p.1 as f64).sum::<f64>() / ns,
        tail_uncolored,
        tail_colored,
        worst_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::singleblock::{tabulate_profile, AdditionSequence, StopRule};

    fn rate(l: f64) -> SleepRate {
        SleepRate::new(l).unwrap()
    }

    #[test]
    fn centred_sources() {
        let l = BlockLayout::new(7, 2).unwrap();
        assert_eq!(l.n(), 5);
        assert_eq!(l.sources(), vec![-6, -3, 0, 3, 6]);
        let l = BlockLayout::new(4, 2).unwrap();
        assert_eq!(l.sources(), vec![-3, 0, 3]);
        for (r, k) in [(7, 2), (27, 4), (10, 20), (31, 6)] {
            let l = BlockLayout::new(r, k).unwrap();
            for i in 1..l.n() {
                assert_eq!(l.source(i) + k as i64, l.source(i + 1) - 1);
            }
            for x in l.volume().sites() {
                let b = l.nearest(x).unwrap();
                assert!(l.inner(b).contains(x));
                let owners = (1..=l.n()).filter(|&i| l.block(i).contains(x)).count();
                let is_source = l.sources().contains(&x);
                let between = x > l.source(1) && x < l.source(l.n());
                if between {
                    assert_eq!(owners, if is_source { 1 } else { 2 }, "site {x}");
                }
            }
        }
    }

    #[test]
    fn layout_errors_and_rounding() {
        assert!(BlockLayout::new(25, 4).is_err());
        assert_eq!(BlockLayout::admissible_r(25, 4).unwrap(), 27);
        assert!(BlockLayout::new(7, 3).is_err());
        assert_eq!(BlockLayout::admissible_r(7, 2).unwrap(), 7);
    }

    #[test]
    fn empty_start() {
        let l = BlockLayout::new(7, 2).unwrap();
        let out = colored_stabilize(&Configuration::empty(l.volume()), &l, rate(1.0), 3, Schedule::RoundRobin, DEFAULT_BUDGET)
            .unwrap();
        assert_eq!(out.s_star, 0);
        assert!(out.record.m_star.iter().all(|&m| m == 0));
        assert!(out.record.is_balanced());
    }

    #[test]
    fn balance_conservation_and_schedule_independence() {
        let l = BlockLayout::new(13, 2).unwrap();
        for seed in 0..60 {
            let eta0 = bernoulli_configuration(l.volume(), 0.7, seed);
            let a = colored_stabilize(&eta0, &l, rate(0.3), seed, Schedule::RoundRobin, DEFAULT_BUDGET).unwrap();
            let b = colored_stabilize(&eta0, &l, rate(0.3), seed, Schedule::RightFirst, DEFAULT_BUDGET).unwrap();
            assert!(a.record.is_balanced());
            assert_eq!(a.s_star + a.exits, eta0.mass());
            assert_eq!(a.record.m_star, b.record.m_star);
            assert_eq!(a.s_star, b.s_star);
        }
    }

    #[test]
    fn block_profiles_match_single_block_runs() {
        let l = BlockLayout::new(10, 6).unwrap();
        for seed in 0..20 {
            let eta0 = bernoulli_configuration(l.volume(), 0.8, seed);
            let out = colored_stabilize(&eta0, &l, rate(0.2), seed, Schedule::RoundRobin, DEFAULT_BUDGET).unwrap();
            for i in 1..=l.n() {
                let xi: Vec<i64> = l.inner(i).sites().filter(|&x| eta0.state(x).walks() == 1).collect();
                let adds = AdditionSequence::new(vec![l.source(i); out.record.m_star[i as usize - 1] as usize]);
                let p = tabulate_profile(
                    l.block(i),
                    &xi,
                    &adds,
                    StopRule::fixed(out.record.m_star[i as usize - 1]),
                    colored_stacks(rate(0.2), &l, i, seed),
                    DEFAULT_BUDGET,
                )
                .unwrap();
                let q = &out.profiles[i as usize - 1];
                assert_eq!((&p.left, &p.right, &p.sleeping), (&q.left, &q.right, &q.sleeping));
            }
        }
    }

    #[test]
    fn one_walk_gives_at_most_one_sleeper() {
        let l = BlockLayout::new(7, 2).unwrap();
        let mut eta0 = Configuration::empty(l.volume());
        eta0.add_walk(2);
        for seed in 0..50 {
            let out = colored_stabilize(&eta0, &l, rate(1.0), seed, Schedule::RoundRobin, DEFAULT_BUDGET).unwrap();
            assert!(out.s_star <= 1);
        }
    }

    #[test]
    fn rejects_non_binary_start() {
        let l = BlockLayout::new(7, 2).unwrap();
        let mut eta0 = Configuration::empty(l.volume());
        eta0.add_walk(1);
        eta0.add_walk(1);
        assert!(colored_stabilize(&eta0, &l, rate(1.0), 0, Schedule::RoundRobin, DEFAULT_BUDGET).is_err());
    }
}
