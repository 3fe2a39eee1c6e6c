//! Seeded, random-access instruction stacks and small distribution helpers.
//!
//! Every stack entry is a pure function of `(seed, stream id, index)`:
//! the stream id is folded into a 64-bit key, and entry `j` of the stream is
//! the SplitMix64 output for counter `key + j * GAMMA`. Nothing is stored,
//! so stacks can be read sparsely and in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ArwError, Result};
use crate::model::{Instruction, Volume};

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a list of words into a seed. Order matters.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    words.iter().fold(mix64(seed.wrapping_add(GAMMA)), |h, &w| {
        mix64(h ^ mix64(w.wrapping_add(GAMMA)))
    })
}

#[inline]
pub fn bits_at(key: u64, index: u64) -> u64 {
    mix64(key.wrapping_add(index.wrapping_mul(GAMMA)))
}

/// Uniform in `[0, 1)` with 53 random bits.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Stacks,
    Uncolored,
    Colored,
    SingleBlock,
    InitialConfig,
    Marks,
    Clock,
    Horizon,
    HWalk,
    Policy,
    Excursion,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Stacks => 1,
            Purpose::Uncolored => 2,
            Purpose::Colored => 3,
            Purpose::SingleBlock => 4,
            Purpose::InitialConfig => 5,
            Purpose::Marks => 6,
            Purpose::Clock => 7,
            Purpose::Horizon => 8,
            Purpose::HWalk => 9,
            Purpose::Policy => 10,
            Purpose::Excursion => 11,
        }
    }
}

/// Identifies one instruction stack (or one auxiliary random stream).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub block: u32,
    pub color: u32,
    pub site: i64,
    pub purpose: Purpose,
}

impl StreamId {
    pub fn site(purpose: Purpose, site: i64) -> StreamId {
        StreamId {
            block: 0,
            color: 0,
            site,
            purpose,
        }
    }

    pub fn key(&self, seed: u64) -> u64 {
        derive_seed(
            seed,
            &[
                self.purpose.tag(),
                self.block as u64,
                self.color as u64,
                self.site as u64,
            ],
        )
    }
}

/// Sleep rate `λ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SleepRate(f64);

impl SleepRate {
    pub fn new(lambda: f64) -> Result<SleepRate> {
        if lambda.is_finite() && lambda > 0.0 {
            Ok(SleepRate(lambda))
        } else {
            Err(ArwError::domain(format!("sleep rate must be positive, got {lambda}")))
        }
    }

    pub fn lambda(self) -> f64 {
        self.0
    }

    /// `λ / (1 + λ)`.
    pub fn sleep_probability(self) -> f64 {
        self.0 / (1.0 + self.0)
    }

    pub fn thresholds(self) -> Thresholds {
        let sleep = self.sleep_probability();
        Thresholds {
            sleep,
            left: sleep + 0.5 / (1.0 + self.0),
        }
    }
}

/// Cut points splitting `[0, 1)` into SleepAttempt, Left, Right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub sleep: f64,
    pub left: f64,
}

impl Thresholds {
    #[inline]
    pub fn classify(&self, u: f64) -> Instruction {
        if u < self.sleep {
            Instruction::SleepAttempt
        } else if u < self.left {
            Instruction::Left
        } else {
            Instruction::Right
        }
    }
}

pub fn instruction_from_uniform(rate: SleepRate, u: f64) -> Result<Instruction> {
    if !(0.0..1.0).contains(&u) {
        return Err(ArwError::domain(format!("uniform value {u} outside [0, 1)")));
    }
    Ok(rate.thresholds().classify(u))
}

/// Entry `index` (1-based) of the stack named by `id`.
pub fn stack_lookup(rate: SleepRate, seed: u64, id: StreamId, index: u64) -> Result<Instruction> {
    if index == 0 {
        return Err(ArwError::domain("stack indices start at 1"));
    }
    Ok(rate
        .thresholds()
        .classify(unit_f64(bits_at(id.key(seed), index))))
}

/// Anything that can answer "what is instruction number `index` at `site`".
pub trait InstructionSource {
    fn instruction(&self, site: i64, index: u64) -> Option<Instruction>;
}

impl<T: InstructionSource + ?Sized> InstructionSource for &T {
    fn instruction(&self, site: i64, index: u64) -> Option<Instruction> {
        (**self).instruction(site, index)
    }
}

/// Seeded stacks over a volume, one stream per site, with keys cached.
#[derive(Debug, Clone)]
pub struct SiteStacks {
    lo: i64,
    keys: Vec<u64>,
    thresholds: Thresholds,
}

impl SiteStacks {
    pub fn new(rate: SleepRate, seed: u64, volume: Volume, purpose: Purpose) -> SiteStacks {
        SiteStacks::colored(rate, seed, volume, purpose, 0, 0)
    }

    pub fn colored(
        rate: SleepRate,
        seed: u64,
        volume: Volume,
        purpose: Purpose,
        block: u32,
        color: u32,
    ) -> SiteStacks {
        let keys = volume
            .sites()
            .map(|site| {
                StreamId {
                    block,
                    color,
                    site,
                    purpose,
                }
                .key(seed)
            })
            .collect();
        SiteStacks {
            lo: volume.lo(),
            keys,
            thresholds: rate.thresholds(),
        }
    }
}

impl InstructionSource for SiteStacks {
    #[inline]
    fn instruction(&self, site: i64, index: u64) -> Option<Instruction> {
        let key = *self.keys.get(usize::try_from(site - self.lo).ok()?)?;
        Some(self.thresholds.classify(unit_f64(bits_at(key, index))))
    }
}

/// Explicit finite stacks, mostly for tests and enumeration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedStacks {
    lo: i64,
    stacks: Vec<Vec<Instruction>>,
}

impl FixedStacks {
    pub fn new(volume: Volume, stacks: Vec<Vec<Instruction>>) -> Result<FixedStacks> {
        if stacks.len() != volume.len() {
            return Err(ArwError::domain("one stack per site required"));
        }
        Ok(FixedStacks {
            lo: volume.lo(),
            stacks,
        })
    }
}

impl InstructionSource for FixedStacks {
    fn instruction(&self, site: i64, index: u64) -> Option<Instruction> {
        let stack = self.stacks.get(usize::try_from(site - self.lo).ok()?)?;
        stack.get(usize::try_from(index).ok()?.checked_sub(1)?).copied()
    }
}

/// Sequential generator for a stream, for consumers that read in order.
pub fn stream_rng(seed: u64, id: StreamId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(id.key(seed))
}

/// Geometric on `{1, 2, ...}` with success probability `q`, by inversion.
pub fn geometric_from_uniform(q: f64, u: f64) -> u64 {
    if q >= 1.0 {
        return 1;
    }
    // 1 - u lies in (0, 1]
    let v = 1.0 - u;
    let n = (v.ln() / (1.0 - q).ln()).ceil();
    if n < 1.0 {
        1
    } else if n >= u64::MAX as f64 {
        u64::MAX
    } else {
        n as u64
    }
}

pub fn bernoulli_from_uniform(p: f64, u: f64) -> bool {
    u < p
}

pub fn poisson<R: rand::Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u32> {
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| ArwError::domain(format!("poisson: {e}")))?;
    Ok(dist.sample(rng) as u32)
}
