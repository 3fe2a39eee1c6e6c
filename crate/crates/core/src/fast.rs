//! Stabilization sampled in law, one excursion at a time.
//!
//! Every toppling in the site-wise construction reads an instruction that
//! was never read before, so drawing each instruction fresh gives the same
//! law for the final configuration as drawing the stacks up front. This
//! engine goes one step further: a lone walk between two non-empty sites
//! `a < x < b` performs a simple random walk that is killed (falls asleep)
//! with probability `q = λ/(1+λ)` per toppling, and the outcome of that
//! whole excursion has a closed form:
//!
//! ```text
//! cosh θ = 1 + λ,   i = x - a,   n = b - a
//! P(reach b)        = sinh(iθ) / sinh(nθ)
//! P(reach a)        = sinh((n-i)θ) / sinh(nθ)
//! P(sleep at a + j) ∝ sinh(min(i,j)θ) · sinh((n - max(i,j))θ)
//! ```
//!
//! Sites holding two or more walks ignore sleep attempts, so toppling them
//! just moves one walk to a uniform neighbour. The cost per sample is the
//! number of excursions and crowded moves, not the number of topplings.
//!
//! There are no stacks and no odometer here; results agree with
//! [`crate::engine`] in distribution, not sample by sample.

use rand::Rng;

use crate::error::{ArwError, Result};
use crate::model::{Configuration, SiteState};
use crate::sampling::SleepRate;

const SLEEPING: i32 = -1;

/// `ln sinh(x)` for `x > 0`.
#[inline]
fn ln_sinh(x: f64) -> f64 {
    x + (-(-2.0 * x).exp_m1()).ln() - std::f64::consts::LN_2
}

/// Closed-form excursion law for one sleep rate.
#[derive(Debug, Clone, Copy)]
pub struct ExcursionLaw {
    theta: f64,
    ln_sinh_half: f64,
}

/// Where a lone walk's excursion ended, relative to the left barrier `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Excursion {
    ReachLeft,
    ReachRight,
    /// Fell asleep at offset `j` from `a`, `1 <= j < n`.
    Sleep(u64),
}

impl ExcursionLaw {
    pub fn new(rate: SleepRate) -> ExcursionLaw {
        let l = rate.lambda();
        // acosh(1 + λ) without cancellation for small λ
        let theta = (l + (l * (2.0 + l)).sqrt()).ln_1p();
        ExcursionLaw {
            theta,
            ln_sinh_half: ln_sinh(theta / 2.0),
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `ln Σ_{j=1}^{k} sinh(jθ)`, `k >= 1`.
    #[inline]
    fn ln_cumsum(&self, k: u64) -> f64 {
        let k = k as f64;
        ln_sinh((k + 1.0) * self.theta / 2.0) + ln_sinh(k * self.theta / 2.0) - self.ln_sinh_half
    }

    /// `(P(reach a), P(reach b))` from offset `i` in an interval of width `n`.
    pub fn exit_probabilities(&self, i: u64, n: u64) -> (f64, f64) {
        let t = self.theta;
        let denom = ln_sinh(n as f64 * t);
        (
            (ln_sinh((n - i) as f64 * t) - denom).exp(),
            (ln_sinh(i as f64 * t) - denom).exp(),
        )
    }

    /// Smallest `k` in `1..=max` with `ln_cumsum(k) >= target`.
    fn invert_cumsum(&self, target: f64, max: u64) -> u64 {
        let (mut lo, mut hi) = (1u64, max);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.ln_cumsum(mid) >= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    pub fn sample<R: Rng + ?Sized>(&self, i: u64, n: u64, rng: &mut R) -> Excursion {
        debug_assert!(0 < i && i < n);
        let (p_left, p_right) = self.exit_probabilities(i, n);
        let u: f64 = rng.gen();
        if u < p_right {
            return Excursion::ReachRight;
        }
        if u < p_right + p_left {
            return Excursion::ReachLeft;
        }
        let t = self.theta;
        let ln_left = ln_sinh((n - i) as f64 * t) + self.ln_cumsum(i);
        let right_len = n - i - 1;
        let take_left = if right_len == 0 {
            true
        } else {
            let ln_right = ln_sinh(i as f64 * t) + self.ln_cumsum(right_len);
            let p = 1.0 / (1.0 + (ln_right - ln_left).exp());
            rng.gen::<f64>() < p
        };
        let v: f64 = 1.0 - rng.gen::<f64>();
        if take_left {
            let k = self.invert_cumsum(v.ln() + self.ln_cumsum(i), i);
            Excursion::Sleep(k)
        } else {
            let k = self.invert_cumsum(v.ln() + self.ln_cumsum(right_len), right_len);
            Excursion::Sleep(n - k)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledStabilization {
    pub final_config: Configuration,
    pub sleeping: u64,
    pub left_exits: u64,
    pub right_exits: u64,
    /// Excursions plus crowded-site moves performed.
    pub events: u64,
}

impl SampledStabilization {
    pub fn exits(&self) -> u64 {
        self.left_exits + self.right_exits
    }
}

/// Stabilize `cfg` in its volume, sampling in law. `budget` caps the
/// number of events.
pub fn stabilize_sampled<R: Rng + ?Sized>(
    cfg: &Configuration,
    rate: SleepRate,
    rng: &mut R,
    budget: u64,
) -> Result<SampledStabilization> {
    let law = ExcursionLaw::new(rate);
    let len = cfg.volume().len();
    let mut occ: Vec<i32> = cfg
        .states()
        .iter()
        .map(|s| match *s {
            SiteState::Empty => 0,
            SiteState::Sleeping => SLEEPING,
            SiteState::Active(n) => n.get() as i32,
        })
        .collect();
    let mut left = cfg.left_exits;
    let mut right = cfg.right_exits;
    let mut events = 0u64;
    let mut stack: Vec<usize> = (0..len).filter(|&i| occ[i] > 0).collect();

    // Arrival at index `j` (as i64, may be -1 or len for exits).
    macro_rules! arrive {
        ($j:expr) => {{
            let j: i64 = $j;
            if j < 0 {
                left += 1;
            } else if j as usize >= len {
                right += 1;
            } else {
                let j = j as usize;
                let prev = occ[j];
                occ[j] = if prev == SLEEPING { 2 } else { prev + 1 };
                if prev <= 0 {
                    stack.push(j);
                }
            }
        }};
    }

    while let Some(i) = stack.pop() {
        while occ[i] > 0 {
            if events >= budget {
                return Err(ArwError::BudgetExceeded {
                    limit: budget,
                    partial: Box::new(to_config(cfg, &occ, left, right)),
                });
            }
            events += 1;
            if occ[i] >= 2 {
                occ[i] -= 1;
                let j = if rng.gen::<bool>() { i as i64 + 1 } else { i as i64 - 1 };
                arrive!(j);
                continue;
            }
            // lone walk: find the barriers
            let mut a = i as i64 - 1;
            while a >= 0 && occ[a as usize] == 0 {
                a -= 1;
            }
            let mut b = i + 1;
            while b < len && occ[b] == 0 {
                b += 1;
            }
            let b = b as i64;
            occ[i] = 0;
            let offset = (i as i64 - a) as u64;
            match law.sample(offset, (b - a) as u64, rng) {
                Excursion::ReachLeft => arrive!(a),
                Excursion::ReachRight => arrive!(b),
                Excursion::Sleep(k) => occ[(a + k as i64) as usize] = SLEEPING,
            }
        }
    }

    let final_config = to_config(cfg, &occ, left, right);
    Ok(SampledStabilization {
        sleeping: final_config.sleeping(),
        final_config,
        left_exits: left,
        right_exits: right,
        events,
    })
}

fn to_config(template: &Configuration, occ: &[i32], left: u64, right: u64) -> Configuration {
    let states = occ
        .iter()
        .map(|&o| match o {
            SLEEPING => SiteState::Sleeping,
            n => SiteState::active(n as u32),
        })
        .collect();
    let mut cfg = Configuration::from_states(template.volume(), states)
        .expect("occupation vector matches its own volume");
    cfg.left_exits = left;
    cfg.right_exits = right;
    cfg
}
