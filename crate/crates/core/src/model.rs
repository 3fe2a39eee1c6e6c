//! Lattice states, instructions, volumes and configurations.
//!
//! A site holds nothing, a single sleeping walk, or `n >= 1` active walks.
//! Instructions act on one site at a time:
//!
//! * a jump moves one walk to a neighbour; arriving on a sleeper wakes it,
//!   so `Sleeping + 1 = Active(2)`;
//! * a sleep attempt turns `Active(1)` into `Sleeping` and leaves
//!   `Active(n)`, `n >= 2`, untouched.
//!
//! Walks that step past either end of the volume are removed and counted
//! in the matching exit counter.

use std::fmt;
use std::num::NonZeroU32;

use serde::{Deserialize, Serialize};

use crate::error::{ArwError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SiteState {
    #[default]
    Empty,
    Sleeping,
    Active(NonZeroU32),
}

impl SiteState {
    pub fn active(n: u32) -> SiteState {
        match NonZeroU32::new(n) {
            Some(n) => SiteState::Active(n),
            None => SiteState::Empty,
        }
    }

    /// Number of walks at the site; a sleeper counts as one.
    pub fn walks(self) -> u32 {
        match self {
            SiteState::Empty => 0,
            SiteState::Sleeping => 1,
            SiteState::Active(n) => n.get(),
        }
    }

    pub fn is_stable(self) -> bool {
        !matches!(self, SiteState::Active(_))
    }

    /// State after one more walk arrives.
    pub fn with_arrival(self) -> SiteState {
        match self {
            SiteState::Empty => SiteState::active(1),
            SiteState::Sleeping => SiteState::active(2),
            SiteState::Active(n) => SiteState::active(n.get() + 1),
        }
    }

    /// State after a sleep attempt. Only meaningful on active sites.
    pub fn with_sleep_attempt(self) -> SiteState {
        match self {
            SiteState::Active(n) if n.get() == 1 => SiteState::Sleeping,
            other => other,
        }
    }
}

impl fmt::Display for SiteState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SiteState::Empty => write!(f, "0"),
            SiteState::Sleeping => write!(f, "s"),
            SiteState::Active(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Left,
    Right,
    SleepAttempt,
}

/// The interval `{lo, ..., hi}`. Both ends are absorbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Volume {
    lo: i64,
    hi: i64,
}

impl Volume {
    pub fn new(lo: i64, hi: i64) -> Result<Volume> {
        if lo > hi {
            return Err(ArwError::Geometry(format!("empty volume {{{lo}..{hi}}}")));
        }
        Ok(Volume { lo, hi })
    }

    /// `V_r = {-r, ..., r}`.
    pub fn centered(r: u64) -> Volume {
        let r = r as i64;
        Volume { lo: -r, hi: r }
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: i64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn index(&self, x: i64) -> Option<usize> {
        self.contains(x).then(|| (x - self.lo) as usize)
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> {
        self.lo..=self.hi
    }
}

/// Per-site states on a volume together with the exit counters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    volume: Volume,
    sites: Vec<SiteState>,
    pub left_exits: u64,
    pub right_exits: u64,
}

impl Configuration {
    pub fn empty(volume: Volume) -> Configuration {
        Configuration {
            volume,
            sites: vec![SiteState::Empty; volume.len()],
            left_exits: 0,
            right_exits: 0,
        }
    }

    /// Active walks with the given per-site counts, listed from `volume.lo()`.
    pub fn from_counts(volume: Volume, counts: &[u32]) -> Result<Configuration> {
        if counts.len() != volume.len() {
            return Err(ArwError::domain(format!(
                "expected {} site counts, got {}",
                volume.len(),
                counts.len()
            )));
        }
        Ok(Configuration {
            volume,
            sites: counts.iter().map(|&n| SiteState::active(n)).collect(),
            left_exits: 0,
            right_exits: 0,
        })
    }

    pub fn from_states(volume: Volume, states: Vec<SiteState>) -> Result<Configuration> {
        if states.len() != volume.len() {
            return Err(ArwError::domain("state vector does not match volume"));
        }
        Ok(Configuration {
            volume,
            sites: states,
            left_exits: 0,
            right_exits: 0,
        })
    }

    pub fn volume(&self) -> Volume {
        self.volume
    }

    pub fn states(&self) -> &[SiteState] {
        &self.sites
    }

    pub fn state(&self, x: i64) -> SiteState {
        self.volume
            .index(x)
            .map_or(SiteState::Empty, |i| self.sites[i])
    }

    pub fn set_state(&mut self, x: i64, state: SiteState) -> Result<()> {
        let i = self.index_of(x)?;
        self.sites[i] = state;
        Ok(())
    }

    /// Drop one active walk at `x`, or count it as an exit when `x` lies
    /// outside the volume.
    pub fn add_walk(&mut self, x: i64) {
        match self.volume.index(x) {
            Some(i) => self.sites[i] = self.sites[i].with_arrival(),
            None if x < self.volume.lo => self.left_exits += 1,
            None => self.right_exits += 1,
        }
    }

    /// Walks inside the volume.
    pub fn mass(&self) -> u64 {
        self.sites.iter().map(|s| s.walks() as u64).sum()
    }

    pub fn exits(&self) -> u64 {
        self.left_exits + self.right_exits
    }

    /// Interior mass plus exits; invariant under legal topplings.
    pub fn total_mass(&self) -> u64 {
        self.mass() + self.exits()
    }

    pub fn sleeping(&self) -> u64 {
        self.sites
            .iter()
            .filter(|s| matches!(s, SiteState::Sleeping))
            .count() as u64
    }

    pub fn is_stable(&self) -> bool {
        self.sites.iter().all(|s| s.is_stable())
    }

    pub fn unstable_sites(&self) -> impl Iterator<Item = i64> + '_ {
        self.sites
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_stable())
            .map(move |(i, _)| self.volume.lo + i as i64)
    }

    pub(crate) fn index_of(&self, x: i64) -> Result<usize> {
        self.volume.index(x).ok_or(ArwError::IllegalToppling {
            site: x,
            reason: "site outside volume",
        })
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}|", self.left_exits)?;
        for (i, s) in self.sites.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, "|{}]", self.right_exits)
    }
}

/// Per-site toppling counters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Odometer {
    lo: i64,
    counts: Vec<u64>,
}

impl Odometer {
    pub fn zero(volume: Volume) -> Odometer {
        Odometer {
            lo: volume.lo(),
            counts: vec![0; volume.len()],
        }
    }

    pub fn get(&self, x: i64) -> u64 {
        let i = x - self.lo;
        if i < 0 {
            return 0;
        }
        self.counts.get(i as usize).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Pointwise `self >= other`.
    pub fn dominates(&self, other: &Odometer) -> bool {
        self.lo == other.lo
            && self.counts.len() == other.counts.len()
            && self.counts.iter().zip(&other.counts).all(|(a, b)| a >= b)
    }

    pub(crate) fn bump(&mut self, i: usize) -> u64 {
        self.counts[i] += 1;
        self.counts[i]
    }
}

/// Apply one instruction at the unstable site `x`.
///
/// Returns the site the moved walk landed on (`None` for sleep attempts),
/// which may lie outside the volume when the walk exited.
pub fn apply_instruction(cfg: &mut Configuration, x: i64, instr: Instruction) -> Result<Option<i64>> {
    let i = cfg.index_of(x)?;
    apply_at(cfg, i, instr)
}

pub(crate) fn apply_at(cfg: &mut Configuration, i: usize, instr: Instruction) -> Result<Option<i64>> {
    let x = cfg.volume.lo + i as i64;
    let n = match cfg.sites[i] {
        SiteState::Active(n) => n.get(),
        _ => {
            return Err(ArwError::IllegalToppling {
                site: x,
                reason: "site is stable",
            })
        }
    };
    match instr {
        Instruction::SleepAttempt => {
            cfg.sites[i] = cfg.sites[i].with_sleep_attempt();
            Ok(None)
        }
        Instruction::Left | Instruction::Right => {
            cfg.sites[i] = SiteState::active(n - 1);
            let y = if instr == Instruction::Left { x - 1 } else { x + 1 };
            cfg.add_walk(y);
            Ok(Some(y))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(lo: i64, hi: i64) -> Volume {
        Volume::new(lo, hi).unwrap()
    }

    #[test]
    fn walk_counts() {
        assert_eq!(SiteState::Empty.walks(), 0);
        assert_eq!(SiteState::Sleeping.walks(), 1);
        assert_eq!(SiteState::active(3).walks(), 3);
        assert_eq!(SiteState::active(0), SiteState::Empty);
    }

    #[test]
    fn lone_walk_falls_asleep() {
        let mut cfg = Configuration::from_counts(v(-1, 1), &[0, 1, 0]).unwrap();
        apply_instruction(&mut cfg, 0, Instruction::SleepAttempt).unwrap();
        assert_eq!(cfg.state(0), SiteState::Sleeping);
    }

    #[test]
    fn crowded_sleep_attempt_is_noop() {
        let mut cfg = Configuration::from_counts(v(-1, 1), &[0, 2, 0]).unwrap();
        apply_instruction(&mut cfg, 0, Instruction::SleepAttempt).unwrap();
        assert_eq!(cfg.state(0), SiteState::active(2));
    }

    #[test]
    fn jump_onto_sleeper_wakes_it() {
        let states = vec![SiteState::Empty, SiteState::active(1), SiteState::Sleeping];
        let mut cfg = Configuration::from_states(v(-1, 1), states).unwrap();
        apply_instruction(&mut cfg, 0, Instruction::Right).unwrap();
        assert_eq!(cfg.state(0), SiteState::Empty);
        assert_eq!(cfg.state(1), SiteState::active(2));
    }

    #[test]
    fn jump_past_edge_exits() {
        let mut cfg = Configuration::from_counts(v(-1, 1), &[1, 0, 1]).unwrap();
        apply_instruction(&mut cfg, 1, Instruction::Right).unwrap();
        apply_instruction(&mut cfg, -1, Instruction::Left).unwrap();
        assert_eq!((cfg.left_exits, cfg.right_exits), (1, 1));
        assert_eq!(cfg.mass(), 0);
        assert_eq!(cfg.total_mass(), 2);
    }

    #[test]
    fn stable_site_rejects_toppling() {
        let states = vec![SiteState::Sleeping];
        let mut cfg = Configuration::from_states(v(0, 0), states).unwrap();
        assert!(matches!(
            apply_instruction(&mut cfg, 0, Instruction::Left),
            Err(ArwError::IllegalToppling { .. })
        ));
        assert!(matches!(
            apply_instruction(&mut cfg, 5, Instruction::Left),
            Err(ArwError::IllegalToppling { .. })
        ));
    }

    #[test]
    fn stability_predicate() {
        let vol = v(-2, 2);
        assert!(Configuration::empty(vol).is_stable());
        let mut cfg = Configuration::empty(vol);
        cfg.set_state(1, SiteState::Sleeping).unwrap();
        assert!(cfg.is_stable());
        cfg.add_walk(-1);
        assert!(!cfg.is_stable());
    }

    #[test]
    fn rejects_inverted_volume() {
        assert!(Volume::new(2, 1).is_err());
        assert_eq!(Volume::centered(3).len(), 7);
    }
}
