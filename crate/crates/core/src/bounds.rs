//! The walk conditioned to stay positive and the lower bound
//! `ζ_c(λ) >= 1 / E Z_N`.
//!
//! From `x >= 1` the conditioned walk steps up with probability
//! `(x+1)/(2x)` and down with `(x-1)/(2x)`; from 0 it goes to 1. `Z_n` is
//! its running maximum and `N` is geometric with parameter `λ/(1+λ)`,
//! independent of the walk. Distributions for small `n` are computed
//! exactly with rationals and serve as oracles for the identities relating
//! the conditioned walk to the simple random walk `S_n`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ArwError, Result};
use crate::sampling::{geometric_from_uniform, stream_rng, unit_f64, bits_at, Purpose, SleepRate, StreamId};
use crate::stats::MeanVar;

/// Largest `n` accepted by the exact conditioned-walk computation.
pub const EXACT_HWALK_MAX: u32 = 64;
/// Largest `n` accepted by [`srw_moments`].
pub const EXACT_SRW_MAX: u32 = 512;

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Next position from `x` given a uniform `u`.
#[inline]
pub fn hwalk_step(x: u64, u: f64) -> u64 {
    if x == 0 {
        return 1;
    }
    let up = (x + 1) as f64 / (2 * x) as f64;
    if u < up {
        x + 1
    } else {
        x - 1
    }
}

/// Exact transition row from `x`: `(next, probability)`.
pub fn transition_row(x: u64) -> Vec<(u64, BigRational)> {
    if x == 0 {
        return vec![(1, BigRational::one())];
    }
    let x = x as i64;
    let mut row = vec![(x as u64 + 1, ratio(x + 1, 2 * x))];
    if x > 1 {
        row.push((x as u64 - 1, ratio(x - 1, 2 * x)));
    }
    row
}

/// `E[1/X_{n+1} | X_n = x]`, exactly.
pub fn reciprocal_row_mean(x: u64) -> BigRational {
    transition_row(x)
        .into_iter()
        .map(|(y, p)| p / BigRational::from_integer(BigInt::from(y)))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HWalkPath {
    /// `X_1..X_n`.
    pub path: Vec<u64>,
    pub max: u64,
}

pub fn hwalk_sample<R: Rng + ?Sized>(n: u32, rng: &mut R) -> Result<HWalkPath> {
    if n == 0 {
        return Err(ArwError::domain("the conditioned walk needs n >= 1"));
    }
    let mut x = 0;
    let mut max = 0;
    let mut path = Vec::with_capacity(n as usize);
    for _ in 0..n {
        x = hwalk_step(x, rng.gen());
        max = max.max(x);
        path.push(x);
    }
    Ok(HWalkPath { path, max })
}

/// `Z_n` for `n` steps driven by the counter-based stream `key`.
fn hwalk_max_keyed(n: u64, key: u64) -> u64 {
    let mut x = 0;
    let mut max = 0;
    for j in 0..n {
        x = hwalk_step(x, unit_f64(bits_at(key, j)));
        max = max.max(x);
    }
    max
}

/// Exact joint law of `(X_n, Z_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HWalkDistribution {
    pub n: u32,
    pub joint: BTreeMap<(u64, u64), BigRational>,
}

impl HWalkDistribution {
    pub fn total(&self) -> BigRational {
        self.joint.values().cloned().sum()
    }

    pub fn position(&self) -> BTreeMap<u64, BigRational> {
        let mut out = BTreeMap::new();
        for ((x, _), p) in &self.joint {
            *out.entry(*x).or_insert_with(BigRational::zero) += p;
        }
        out
    }

    pub fn maximum(&self) -> BTreeMap<u64, BigRational> {
        let mut out = BTreeMap::new();
        for ((_, z), p) in &self.joint {
            *out.entry(*z).or_insert_with(BigRational::zero) += p;
        }
        out
    }

    pub fn mean_position(&self) -> BigRational {
        self.joint
            .iter()
            .map(|((x, _), p)| p * BigRational::from_integer(BigInt::from(*x)))
            .sum()
    }

    pub fn mean_max(&self) -> BigRational {
        self.joint
            .iter()
            .map(|((_, z), p)| p * BigRational::from_integer(BigInt::from(*z)))
            .sum()
    }

    pub fn position_tail(&self, k: u64) -> BigRational {
        self.position().range(k..).map(|(_, p)| p.clone()).sum()
    }

    pub fn max_tail(&self, k: u64) -> BigRational {
        self.maximum().range(k..).map(|(_, p)| p.clone()).sum()
    }

    /// Whether `P[X_n >= k] >= P[Z_n >= 2k] / 2` for every `k >= 1`.
    pub fn tail_inequality_holds(&self) -> bool {
        let half = ratio(1, 2);
        (1..=self.n as u64 + 1).all(|k| self.position_tail(k) >= &half * self.max_tail(2 * k))
    }
}

fn step_distribution(
    current: &BTreeMap<(u64, u64), BigRational>,
) -> BTreeMap<(u64, u64), BigRational> {
    let mut next = BTreeMap::new();
    for ((x, z), p) in current {
        for (y, q) in transition_row(*x) {
            *next.entry((y, (*z).max(y))).or_insert_with(BigRational::zero) += p * q;
        }
    }
    next
}

pub fn hwalk_exact_dist(n: u32) -> Result<HWalkDistribution> {
    hwalk_exact_sequence(n).map(|mut v| v.pop().expect("n >= 1"))
}

/// Exact laws for every `1..=n`.
pub fn hwalk_exact_sequence(n: u32) -> Result<Vec<HWalkDistribution>> {
    if n == 0 || n > EXACT_HWALK_MAX {
        return Err(ArwError::domain(format!(
            "exact computation supports 1 <= n <= {EXACT_HWALK_MAX}, got {n}"
        )));
    }
    let mut cur = BTreeMap::new();
    cur.insert((0u64, 0u64), BigRational::one());
    let mut out = Vec::with_capacity(n as usize);
    for m in 1..=n {
        cur = step_distribution(&cur);
        out.push(HWalkDistribution {
            n: m,
            joint: cur.clone(),
        });
    }
    Ok(out)
}

/// Exact law and moments of the simple symmetric walk after `n` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SrwMoments {
    pub n: u32,
    /// `P[S_n = x]` for the reachable `x`, in increasing order.
    pub law: Vec<(i64, BigRational)>,
    pub abs_third: BigRational,
    pub fourth: BigRational,
}

impl SrwMoments {
    pub fn prob(&self, x: i64) -> BigRational {
        self.law
            .iter()
            .find(|(y, _)| *y == x)
            .map(|(_, p)| p.clone())
            .unwrap_or_else(BigRational::zero)
    }
}

pub fn srw_moments(n: u32) -> Result<SrwMoments> {
    if n > EXACT_SRW_MAX {
        return Err(ArwError::domain(format!(
            "exact walk moments support n <= {EXACT_SRW_MAX}, got {n}"
        )));
    }
    let denom = BigInt::one() << n as usize;
    let mut binom = BigInt::one();
    let mut law = Vec::with_capacity(n as usize + 1);
    for k in 0..=n as u64 {
        // k up-steps
        let x = 2 * k as i64 - n as i64;
        law.push((x, BigRational::new(binom.clone(), denom.clone())));
        binom = binom * BigInt::from(n as u64 - k) / BigInt::from(k + 1);
    }
    let pow = |x: i64, e: u32| BigRational::from_integer(BigInt::from(x).pow(e));
    let abs_third = law.iter().map(|(x, p)| p * pow(x.abs(), 3)).sum();
    let fourth = law.iter().map(|(x, p)| p * pow(*x, 4)).sum();
    Ok(SrwMoments {
        n,
        law,
        abs_third,
        fourth,
    })
}

/// The constant `c_n` with `P[X_n = x] = c_n x² P[S_n = x]` for all
/// `x > 0`, or `None` if the ratio is not constant.
pub fn cyclic_constant(n: u32) -> Result<Option<BigRational>> {
    let h = hwalk_exact_dist(n)?;
    let s = srw_moments(n)?;
    let mut constant: Option<BigRational> = None;
    for (x, p) in h.position() {
        let base = s.prob(x as i64) * BigRational::from_integer(BigInt::from(x * x));
        if base.is_zero() {
            if !p.is_zero() {
                return Ok(None);
            }
            continue;
        }
        let c = p / base;
        match &constant {
            None => constant = Some(c),
            Some(c0) if *c0 == c => {}
            Some(_) => return Ok(None),
        }
    }
    Ok(constant)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaLowerBound {
    pub lambda: f64,
    pub samples: u64,
    pub mean_max: f64,
    pub stderr: f64,
    /// `1 / Ê Z_N`.
    pub bound: f64,
    /// Delta-method standard error of the bound.
    pub bound_stderr: f64,
    /// `[1/(Ê Z_N + 3 se), 1/(Ê Z_N - 3 se)]`.
    pub interval: (f64, f64),
}

/// Monte Carlo `Ê Z_N`. Sample `i` uses the same uniforms for every `λ`
/// (one for `N`, one stream for the path), so `Z_N` is pathwise
/// nonincreasing in `λ`.
pub fn estimate_zeta_lower(rate: SleepRate, samples: u64, seed: u64) -> Result<ZetaLowerBound> {
    if samples < 2 {
        return Err(ArwError::domain("need at least two samples"));
    }
    let q = rate.sleep_probability();
    let maxima: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let u = unit_f64(bits_at(StreamId::site(Purpose::Horizon, i as i64).key(seed), 0));
            let n = geometric_from_uniform(q, u);
            let key = StreamId::site(Purpose::HWalk, i as i64).key(seed);
            hwalk_max_keyed(n, key) as f64
        })
        .collect();
    let acc: MeanVar = maxima.into_iter().collect();
    let m = acc.mean();
    let se = acc.stderr();
    let lo = 1.0 / (m + 3.0 * se);
    let hi = if m > 3.0 * se { 1.0 / (m - 3.0 * se) } else { f64::INFINITY };
    Ok(ZetaLowerBound {
        lambda: rate.lambda(),
        samples,
        mean_max: m,
        stderr: se,
        bound: 1.0 / m,
        bound_stderr: se / (m * m),
        interval: (lo, hi),
    })
}

/// Exact `E Z_n / √n` for `n = 1..=n_max`.
pub fn max_growth_table(n_max: u32) -> Result<Vec<(u32, f64)>> {
    Ok(hwalk_exact_sequence(n_max)?
        .iter()
        .map(|d| (d.n, to_f64(&d.mean_max()) / (d.n as f64).sqrt()))
        .collect())
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        // fall back through a scaled integer when the parts overflow f64
        let scale = x.denom().bits().saturating_sub(60) as usize;
        let n = (x.numer() >> scale).to_f64().unwrap_or(f64::NAN);
        let d = (x.denom() >> scale).to_f64().unwrap_or(f64::NAN);
        if x.is_negative() {
            -(n.abs() / d)
        } else {
            n / d
        }
    })
}

/// Sampled `Z_n` paths, mainly to cross-check the exact law.
pub fn sample_max_histogram(n: u32, samples: u64, seed: u64) -> Result<Vec<u64>> {
    let mut hist = vec![0u64; n as usize + 1];
    let mut rng = stream_rng(seed, StreamId::site(Purpose::HWalk, -1));
    for _ in 0..samples {
        hist[hwalk_sample(n, &mut rng)?.max as usize] += 1;
    }
    Ok(hist)
}
