//! Site-wise stabilization with explicit instruction stacks.
//!
//! Toppling site `x` applies instruction number `h(x) + 1` of the stack at
//! `x` and bumps the odometer. Only unstable sites may be toppled. Any
//! order of legal topplings that ends in a stable configuration gives the
//! same final configuration and odometer, so the [`TopplingPolicy`] only
//! affects speed. The tests in this module check that claim directly.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ArwError, Result};
use crate::model::{apply_at, Configuration, Instruction, Odometer, SiteState, Volume};
use crate::sampling::{stream_rng, InstructionSource, Purpose, StreamId};

pub const DEFAULT_BUDGET: u64 = 1_000_000_000;

/// Order in which unstable sites are toppled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TopplingPolicy {
    /// FIFO queue of unstable sites.
    #[default]
    Fifo,
    LeftmostFirst,
    /// Uniformly random unstable site, driven by its own seed.
    RandomOrder { seed: u64 },
    /// Follow the walk that just moved until its site is stable again.
    WalkChase,
}

/// How the walk added by [`Stabilizer::add_walk_marked`] behaved before it
/// first tried to sleep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mark {
    Left,
    Right,
    Sleep,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StabilizationResult {
    pub final_config: Configuration,
    pub odometer: Odometer,
    pub sleeping: u64,
    pub left_exits: u64,
    pub right_exits: u64,
}

impl StabilizationResult {
    pub fn exits(&self) -> u64 {
        self.left_exits + self.right_exits
    }
}

/// Topple the unstable site `x` once.
pub fn topple<S: InstructionSource>(
    cfg: &mut Configuration,
    odometer: &mut Odometer,
    stacks: &S,
    x: i64,
) -> Result<Instruction> {
    let i = cfg.index_of(x)?;
    if cfg.states()[i].is_stable() {
        return Err(ArwError::IllegalToppling {
            site: x,
            reason: "site is stable",
        });
    }
    let index = odometer.get(x) + 1;
    let instr = stacks
        .instruction(x, index)
        .ok_or(ArwError::StackExhausted { site: x, index })?;
    apply_at(cfg, i, instr)?;
    odometer.bump(i);
    Ok(instr)
}

pub fn is_stable(cfg: &Configuration, volume: Volume) -> bool {
    volume.sites().all(|x| cfg.state(x).is_stable())
}

/// Stabilize `cfg` in its volume from a zero odometer.
pub fn stabilize<S: InstructionSource>(
    cfg: Configuration,
    stacks: S,
    policy: TopplingPolicy,
    budget: u64,
) -> Result<StabilizationResult> {
    let mut st = Stabilizer::new(cfg, stacks, budget);
    st.stabilize(policy)?;
    Ok(st.into_result())
}

/// Topple every site holding two or more walks until none is left.
/// Sites with a single active walk are not touched.
pub fn preprocess_to_binary<S: InstructionSource>(
    cfg: Configuration,
    stacks: S,
    budget: u64,
) -> Result<(Configuration, Odometer)> {
    let mut st = Stabilizer::new(cfg, stacks, budget);
    let mut work: Vec<usize> = (0..st.cfg.volume().len())
        .filter(|&i| st.cfg.states()[i].walks() >= 2)
        .collect();
    while let Some(i) = work.pop() {
        while st.walks_at(i) >= 2 && !st.cfg.states()[i].is_stable() {
            if let (_, Some(j)) = st.topple_index(i)? {
                if st.walks_at(j) >= 2 && !st.cfg.states()[j].is_stable() {
                    work.push(j);
                }
            }
        }
    }
    Ok((st.cfg, st.odometer))
}

/// A configuration plus odometer bound to a fixed set of stacks.
///
/// Walks can be added between stabilizations; stacks and odometer persist,
/// so adding walks one at a time and stabilizing after each addition ends
/// in the same state as adding them all and stabilizing once.
#[derive(Debug, Clone)]
pub struct Stabilizer<S> {
    cfg: Configuration,
    odometer: Odometer,
    stacks: S,
    budget: u64,
    topplings: u64,
    wakeups: u64,
    scratch: Vec<usize>,
}

impl<S: InstructionSource> Stabilizer<S> {
    pub fn new(cfg: Configuration, stacks: S, budget: u64) -> Stabilizer<S> {
        let odometer = Odometer::zero(cfg.volume());
        Stabilizer {
            cfg,
            odometer,
            stacks,
            budget,
            topplings: 0,
            wakeups: 0,
            scratch: Vec::new(),
        }
    }

    pub fn empty(volume: Volume, stacks: S, budget: u64) -> Stabilizer<S> {
        Stabilizer::new(Configuration::empty(volume), stacks, budget)
    }

    pub fn config(&self) -> &Configuration {
        &self.cfg
    }

    pub fn odometer(&self) -> &Odometer {
        &self.odometer
    }

    pub fn stacks(&self) -> &S {
        &self.stacks
    }

    pub fn topplings(&self) -> u64 {
        self.topplings
    }

    /// Number of jumps that landed on a sleeping walk so far.
    pub fn wakeups(&self) -> u64 {
        self.wakeups
    }

    pub fn add_walk(&mut self, x: i64) {
        self.cfg.add_walk(x);
    }

    pub fn snapshot(&self) -> StabilizationResult {
        StabilizationResult {
            final_config: self.cfg.clone(),
            odometer: self.odometer.clone(),
            sleeping: self.cfg.sleeping(),
            left_exits: self.cfg.left_exits,
            right_exits: self.cfg.right_exits,
        }
    }

    pub fn into_result(self) -> StabilizationResult {
        let sleeping = self.cfg.sleeping();
        StabilizationResult {
            left_exits: self.cfg.left_exits,
            right_exits: self.cfg.right_exits,
            final_config: self.cfg,
            odometer: self.odometer,
            sleeping,
        }
    }

    #[inline]
    fn walks_at(&self, i: usize) -> u32 {
        self.cfg.states()[i].walks()
    }

    #[inline]
    fn unstable(&self, i: usize) -> bool {
        !self.cfg.states()[i].is_stable()
    }

    /// Topple site index `i`; returns the instruction and, for a jump that
    /// stays inside the volume, the index it landed on.
    #[inline]
    fn topple_index(&mut self, i: usize) -> Result<(Instruction, Option<usize>)> {
        if self.topplings >= self.budget {
            return Err(ArwError::BudgetExceeded {
                limit: self.budget,
                partial: Box::new(self.cfg.clone()),
            });
        }
        let lo = self.cfg.volume().lo();
        let x = lo + i as i64;
        let index = self.odometer.counts()[i] + 1;
        let instr = self
            .stacks
            .instruction(x, index)
            .ok_or(ArwError::StackExhausted { site: x, index })?;
        let landed = match instr {
            Instruction::SleepAttempt => None,
            Instruction::Left => i.checked_sub(1),
            Instruction::Right => Some(i + 1).filter(|&j| j < self.cfg.volume().len()),
        };
        if let Some(j) = landed {
            if self.cfg.states()[j] == SiteState::Sleeping {
                self.wakeups += 1;
            }
        }
        apply_at(&mut self.cfg, i, instr)?;
        self.odometer.bump(i);
        self.topplings += 1;
        Ok((instr, landed))
    }

    /// Topple until the configuration is stable in the volume.
    pub fn stabilize(&mut self, policy: TopplingPolicy) -> Result<()> {
        match policy {
            TopplingPolicy::Fifo => self.run_fifo(),
            TopplingPolicy::LeftmostFirst => self.run_leftmost(),
            TopplingPolicy::RandomOrder { seed } => self.run_random(seed),
            TopplingPolicy::WalkChase => self.run_chase(),
        }
    }

    fn unstable_indices(&self) -> Vec<usize> {
        (0..self.cfg.volume().len())
            .filter(|&i| self.unstable(i))
            .collect()
    }

    fn run_fifo(&mut self) -> Result<()> {
        let n = self.cfg.volume().len();
        let mut queued = vec![false; n];
        let mut queue: VecDeque<usize> = self.unstable_indices().into();
        for &i in &queue {
            queued[i] = true;
        }
        while let Some(i) = queue.pop_front() {
            queued[i] = false;
            if !self.unstable(i) {
                continue;
            }
            let (_, landed) = self.topple_index(i)?;
            if let Some(j) = landed {
                if !queued[j] && self.unstable(j) {
                    queued[j] = true;
                    queue.push_back(j);
                }
            }
            if !queued[i] && self.unstable(i) {
                queued[i] = true;
                queue.push_back(i);
            }
        }
        Ok(())
    }

    fn run_leftmost(&mut self) -> Result<()> {
        let mut set: BTreeSet<usize> = self.unstable_indices().into_iter().collect();
        while let Some(i) = set.pop_first() {
            let (_, landed) = self.topple_index(i)?;
            if self.unstable(i) {
                set.insert(i);
            }
            if let Some(j) = landed {
                if self.unstable(j) {
                    set.insert(j);
                }
            }
        }
        Ok(())
    }

    fn run_random(&mut self, seed: u64) -> Result<()> {
        let mut rng = stream_rng(seed, StreamId::site(Purpose::Policy, 0));
        let n = self.cfg.volume().len();
        let mut pos = vec![usize::MAX; n];
        let mut list = self.unstable_indices();
        for (k, &i) in list.iter().enumerate() {
            pos[i] = k;
        }
        while !list.is_empty() {
            let k = rng.gen_range(0..list.len());
            let i = list[k];
            let (_, landed) = self.topple_index(i)?;
            for site in std::iter::once(i).chain(landed) {
                let unstable = self.unstable(site);
                if unstable && pos[site] == usize::MAX {
                    pos[site] = list.len();
                    list.push(site);
                } else if !unstable && pos[site] != usize::MAX {
                    let at = pos[site];
                    list.swap_remove(at);
                    if at < list.len() {
                        pos[list[at]] = at;
                    }
                    pos[site] = usize::MAX;
                }
            }
        }
        Ok(())
    }

    fn run_chase(&mut self) -> Result<()> {
        let mut stack = std::mem::take(&mut self.scratch);
        stack.clear();
        stack.extend((0..self.cfg.volume().len()).filter(|&i| self.unstable(i)));
        let result = self.chase_from(&mut stack);
        self.scratch = stack;
        result
    }

    fn chase_from(&mut self, stack: &mut Vec<usize>) -> Result<()> {
        while let Some(start) = stack.pop() {
            let mut cur = start;
            while self.unstable(cur) {
                if let (_, Some(j)) = self.topple_index(cur)? {
                    if self.unstable(cur) {
                        stack.push(cur);
                    }
                    cur = j;
                }
            }
        }
        Ok(())
    }

    /// Add a walk at `x`, follow it until it exits the volume or reads its
    /// first sleep instruction, then stabilize. Following the new walk is
    /// itself a legal toppling order, so the final state matches
    /// [`Stabilizer::add_walk`] followed by [`Stabilizer::stabilize`].
    pub fn add_walk_marked(&mut self, x: i64, policy: TopplingPolicy) -> Result<Mark> {
        let mut cur = self.cfg.index_of(x).map_err(|_| {
            ArwError::domain(format!("marked walk must start inside the volume, got {x}"))
        })?;
        self.cfg.add_walk(x);
        let mark = loop {
            let (instr, landed) = self.topple_index(cur)?;
            match (instr, landed) {
                (Instruction::SleepAttempt, _) => break Mark::Sleep,
                (_, Some(j)) => cur = j,
                (Instruction::Left, None) => break Mark::Left,
                (Instruction::Right, None) => break Mark::Right,
            }
        };
        self.stabilize(policy)?;
        Ok(mark)
    }
}
