//! Headline measurements on `V_r` and the experiment runner.
//!
//! * exit density `E[M_r]/r` from a Bernoulli(ζ) start,
//! * a bisection for the critical density `ζ_c(λ)`,
//! * `log E[e^{αS(V_r)}]` from the all-ones start and its growth in `r`.

mod config;
mod run;

pub use config::{Engine, ExperimentConfig, ExperimentKind, RScaling, ResolvedConfig};
pub use run::{run_experiment, run_experiment_limited, RunManifest, RunSummary, TaskStatus};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Stabilizer, TopplingPolicy};
use crate::error::{ArwError, Result};
use crate::fast::stabilize_sampled;
use crate::model::{Configuration, Volume};
use crate::sampling::{bits_at, derive_seed, stream_rng, unit_f64, Purpose, SiteStacks, SleepRate, StreamId};
use crate::stats::{log_mean_exp, ols, MeanVar};

/// One stabilization of `V_r`: initial walks, walks that left, sleepers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeSample {
    pub initial: u64,
    pub exits: u64,
    pub sleeping: u64,
}

/// Bernoulli(ζ) start on `V_r` for sample `seed`. Site `x` is occupied iff
/// its own uniform is below `ζ`, so starts are nested in `ζ`.
pub fn nested_bernoulli(volume: Volume, zeta: f64, seed: u64) -> Configuration {
    let key = StreamId::site(Purpose::InitialConfig, 0).key(seed);
    let counts: Vec<u32> = (0..volume.len() as u64)
        .map(|j| (unit_f64(bits_at(key, j)) < zeta) as u32)
        .collect();
    Configuration::from_counts(volume, &counts).expect("counts match volume")
}

pub fn stabilize_volume(
    cfg: &Configuration,
    rate: SleepRate,
    engine: Engine,
    seed: u64,
    budget: u64,
) -> Result<VolumeSample> {
    let initial = cfg.total_mass();
    let (exits, sleeping) = match engine {
        Engine::Stacks => {
            let stacks = SiteStacks::new(rate, seed, cfg.volume(), Purpose::Stacks);
            let mut st = Stabilizer::new(cfg.clone(), &stacks, budget);
            st.stabilize(TopplingPolicy::WalkChase)?;
            (st.config().exits(), st.config().sleeping())
        }
        Engine::Excursion => {
            let mut rng = stream_rng(seed, StreamId::site(Purpose::Excursion, 0));
            let out = stabilize_sampled(cfg, rate, &mut rng, budget)?;
            (out.exits(), out.sleeping)
        }
    };
    let s = VolumeSample {
        initial,
        exits,
        sleeping,
    };
    debug_assert_eq!(s.initial, s.exits + s.sleeping);
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitDensity {
    pub lambda: f64,
    pub zeta: f64,
    pub r: u64,
    pub samples: u64,
    /// `Ê[M_r] / r`.
    pub mean: f64,
    pub stderr: f64,
    pub mean_sleeping: f64,
}

/// Sample `i` of a density estimate uses `derive_seed(seed, [r, i])`, so
/// estimates at different `ζ` with the same seed share starts and dynamics
/// randomness.
pub fn estimate_exit_density(
    rate: SleepRate,
    zeta: f64,
    r: u64,
    samples: u64,
    seed: u64,
    engine: Engine,
    budget: u64,
) -> Result<ExitDensity> {
    exit_density_range(rate, zeta, r, 0..samples, seed, engine, budget)
        .map(|acc| acc.finish(rate, zeta, r))
}

#[derive(Debug, Clone, Copy, Default)]
struct DensityAcc {
    exits: MeanVar,
    sleeping: MeanVar,
}

impl DensityAcc {
    fn merge(mut self, other: &[VolumeSample], r: u64) -> Self {
        for s in other {
            self.exits.push(s.exits as f64 / r as f64);
            self.sleeping.push(s.sleeping as f64);
        }
        self
    }

    fn finish(&self, rate: SleepRate, zeta: f64, r: u64) -> ExitDensity {
        ExitDensity {
            lambda: rate.lambda(),
            zeta,
            r,
            samples: self.exits.count(),
            mean: self.exits.mean(),
            stderr: self.exits.stderr(),
            mean_sleeping: self.sleeping.mean(),
        }
    }
}

fn volume_samples(
    rate: SleepRate,
    zeta: f64,
    r: u64,
    range: std::ops::Range<u64>,
    seed: u64,
    engine: Engine,
    budget: u64,
) -> Result<Vec<VolumeSample>> {
    if !(0.0..=1.0).contains(&zeta) {
        return Err(ArwError::domain(format!("zeta must lie in [0, 1], got {zeta}")));
    }
    let vol = Volume::centered(r);
    range
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, &[r, i]);
            let cfg = nested_bernoulli(vol, zeta, s);
            stabilize_volume(&cfg, rate, engine, s, budget)
        })
        .collect()
}

fn exit_density_range(
    rate: SleepRate,
    zeta: f64,
    r: u64,
    range: std::ops::Range<u64>,
    seed: u64,
    engine: Engine,
    budget: u64,
) -> Result<DensityAcc> {
    if r == 0 {
        return Err(ArwError::domain("r must be positive"));
    }
    let v = volume_samples(rate, zeta, r, range, seed, engine, budget)?;
    Ok(DensityAcc::default().merge(&v, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Active,
    Fixating,
    /// Still within noise of the threshold at the sample cap.
    Undecided,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Active => "active",
            Decision::Fixating => "fixating",
            Decision::Undecided => "undecided",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub step: u32,
    pub zeta: f64,
    pub densities: Vec<ExitDensity>,
    pub decision: Decision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionParams {
    /// Exits per unit `r` above which a density counts as active.
    pub theta: f64,
    pub steps: u32,
    pub samples: u64,
    /// Samples are doubled while a decision is within `noise_z` standard
    /// errors of `theta`, up to this many.
    pub max_samples: u64,
    pub noise_z: f64,
}

impl Default for BisectionParams {
    fn default() -> Self {
        BisectionParams {
            theta: 0.01,
            steps: 8,
            samples: 64,
            max_samples: 512,
            noise_z: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaCEstimate {
    pub lambda: f64,
    /// Geometric midpoint of the final bracket.
    pub zeta_c: f64,
    pub bracket: (f64, f64),
    /// Half the width of the final bracket.
    pub stderr: f64,
    /// The last midpoint stayed within noise of the threshold at the
    /// sample cap. Undecided midpoints before that are resolved by their
    /// point estimates and marked in the table.
    pub inconclusive: bool,
    pub table: Vec<DecisionRow>,
    pub r_used: Vec<u64>,
}

impl ZetaCEstimate {
    /// The point estimate, or the bracket as an error when the last
    /// midpoint was undecided.
    pub fn point(&self) -> Result<f64> {
        if self.inconclusive {
            Err(ArwError::Inconclusive {
                lo: self.bracket.0,
                hi: self.bracket.1,
            })
        } else {
            Ok(self.zeta_c)
        }
    }
}

/// Decide whether `ζ` is active at the two largest radii.
pub fn decide(
    rate: SleepRate,
    zeta: f64,
    radii: &[u64],
    params: &BisectionParams,
    seed: u64,
    engine: Engine,
    budget: u64,
) -> Result<(Decision, Vec<ExitDensity>)> {
    let mut accs = vec![DensityAcc::default(); radii.len()];
    let mut done = 0;
    let mut target = params.samples.max(2);
    loop {
        for (acc, &r) in accs.iter_mut().zip(radii) {
            let v = volume_samples(rate, zeta, r, done..target, seed, engine, budget)?;
            *acc = acc.merge(&v, r);
        }
        done = target;
        let dens: Vec<ExitDensity> = accs
            .iter()
            .zip(radii)
            .map(|(a, &r)| a.finish(rate, zeta, r))
            .collect();
        let above = dens.iter().all(|d| d.mean > params.theta);
        let clear = dens
            .iter()
            .all(|d| (d.mean - params.theta).abs() > params.noise_z * d.stderr);
        let below_somewhere = dens
            .iter()
            .any(|d| d.mean <= params.theta && params.theta - d.mean > params.noise_z * d.stderr);
        if clear || below_somewhere {
            let decision = if above { Decision::Active } else { Decision::Fixating };
            return Ok((decision, dens));
        }
        if target >= params.max_samples {
            return Ok((Decision::Undecided, dens));
        }
        target = (target * 2).min(params.max_samples);
    }
}

/// Bisection on `ζ` (in log scale) inside `bracket`, deciding activity by
/// persistence of `Ê[M_r]/r > θ` over the two largest radii of `r_list`.
pub fn estimate_zeta_c(
    rate: SleepRate,
    r_list: &[u64],
    bracket: (f64, f64),
    params: &BisectionParams,
    seed: u64,
    engine: Engine,
    budget: u64,
) -> Result<ZetaCEstimate> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && lo < hi && hi <= 1.0) {
        return Err(ArwError::domain(format!("bracket must satisfy 0 < lo < hi <= 1, got {bracket:?}")));
    }
    if r_list.is_empty() {
        return Err(ArwError::domain("r_list is empty"));
    }
    let mut radii = r_list.to_vec();
    radii.sort_unstable();
    radii.dedup();
    let radii: Vec<u64> = radii.iter().rev().take(2).rev().copied().collect();
    let mut table = Vec::new();
    let mut inconclusive = false;
    for step in 0..params.steps {
        let mid = (lo * hi).sqrt();
        let (decision, densities) = decide(rate, mid, &radii, params, seed, engine, budget)?;
        table.push(DecisionRow {
            step,
            zeta: mid,
            densities,
            decision,
        });
        let active = match decision {
            Decision::Active => true,
            Decision::Fixating => false,
            // within noise: follow the point estimates
            Decision::Undecided => table[table.len() - 1]
                .densities
                .iter()
                .all(|d| d.mean > params.theta),
        };
        if active {
            hi = mid;
        } else {
            lo = mid;
        }
        inconclusive = decision == Decision::Undecided;
    }
    Ok(ZetaCEstimate {
        lambda: rate.lambda(),
        zeta_c: (lo * hi).sqrt(),
        bracket: (lo, hi),
        stderr: (hi - lo) / 2.0,
        inconclusive,
        table,
        r_used: radii,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub r: u64,
    pub samples: u64,
    pub log_moment: f64,
    pub stderr: f64,
    pub mean_sleeping: f64,
    /// Empirical `P(S >= 2 C √λ r)` with `C` from [`ExpMoment::tail_constant`].
    pub tail_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpMoment {
    pub lambda: f64,
    pub alpha: f64,
    pub rows: Vec<MomentRow>,
    /// Slope of `log Ê e^{αS}` against `r` and its standard error.
    pub slope: f64,
    pub slope_stderr: f64,
    /// `slope / √λ`.
    pub rescaled_slope: f64,
    /// Twice the mean of `E S / (2√λ r)` over the radii.
    pub tail_constant: f64,
    /// Halvings of `α` forced by overflow.
    pub alpha_halvings: u32,
}

/// Per-sample sleepers on `V_r` from the all-ones start.
pub fn all_ones_sleepers(
    rate: SleepRate,
    r: u64,
    range: std::ops::Range<u64>,
    seed: u64,
    engine: Engine,
    budget: u64,
) -> Result<Vec<u64>> {
    let vol = Volume::centered(r);
    let cfg = Configuration::from_counts(vol, &vec![1; vol.len()])?;
    range
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, &[r, i]);
            stabilize_volume(&cfg, rate, engine, s, budget).map(|v| v.sleeping)
        })
        .collect()
}

/// Build the moment table from per-radius sleeper samples.
pub fn moment_table(rate: SleepRate, alpha: f64, data: &[(u64, Vec<u64>)]) -> Result<ExpMoment> {
    let mut alpha = alpha;
    let mut halvings = 0;
    loop {
        match moment_table_at(rate, alpha, data) {
            Err(ArwError::MomentOverflow { .. }) if halvings < 8 => {
                alpha /= 2.0;
                halvings += 1;
            }
            other => {
                return other.map(|mut t| {
                    t.alpha_halvings = halvings;
                    t
                })
            }
        }
    }
}

fn moment_table_at(rate: SleepRate, alpha: f64, data: &[(u64, Vec<u64>)]) -> Result<ExpMoment> {
    let sq = rate.lambda().sqrt();
    let coeffs: Vec<f64> = data
        .iter()
        .map(|(r, s)| {
            let mean = s.iter().sum::<u64>() as f64 / s.len() as f64;
            mean / (2.0 * sq * *r as f64)
        })
        .collect();
    let tail_constant = 2.0 * coeffs.iter().sum::<f64>() / coeffs.len().max(1) as f64;
    let mut rows = Vec::with_capacity(data.len());
    for (r, s) in data {
        let vals: Vec<f64> = s.iter().map(|&v| alpha * v as f64).collect();
        let (log_moment, stderr) = log_mean_exp(&vals);
        if !log_moment.is_finite() {
            return Err(ArwError::MomentOverflow { alpha });
        }
        let cut = 2.0 * tail_constant * sq * *r as f64;
        let hits = s.iter().filter(|&&v| v as f64 >= cut).count();
        rows.push(MomentRow {
            r: *r,
            samples: s.len() as u64,
            log_moment,
            stderr,
            mean_sleeping: s.iter().sum::<u64>() as f64 / s.len() as f64,
            tail_probability: hits as f64 / s.len() as f64,
        });
    }
    let x: Vec<f64> = rows.iter().map(|row| row.r as f64).collect();
    let y: Vec<f64> = rows.iter().map(|row| row.log_moment).collect();
    let fit = ols(&x, &y).ok_or_else(|| ArwError::domain("need at least two distinct radii"))?;
    Ok(ExpMoment {
        lambda: rate.lambda(),
        alpha,
        rows,
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        rescaled_slope: fit.slope / sq,
        tail_constant,
        alpha_halvings: 0,
    })
}

pub fn measure_exp_moment(
    rate: SleepRate,
    alpha: f64,
    r_list: &[u64],
    samples: u64,
    seed: u64,
    engine: Engine,
    budget: u64,
) -> Result<ExpMoment> {
    if !(alpha > 0.0) {
        return Err(ArwError::domain("alpha must be positive"));
    }
    let data = r_list
        .iter()
        .map(|&r| all_ones_sleepers(rate, r, 0..samples, seed, engine, budget).map(|s| (r, s)))
        .collect::<Result<Vec<_>>>()?;
    moment_table(rate, alpha, &data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::DEFAULT_BUDGET;

    fn rate(l: f64) -> SleepRate {
        SleepRate::new(l).unwrap()
    }

    #[test]
    fn zero_density_gives_zero() {
        for engine in [Engine::Stacks, Engine::Excursion] {
            let d = estimate_exit_density(rate(0.5), 0.0, 20, 10, 1, engine, DEFAULT_BUDGET).unwrap();
            assert_eq!(d.mean, 0.0);
        }
    }

    #[test]
    fn conservation_per_sample() {
        let vol = Volume::centered(100);
        for engine in [Engine::Stacks, Engine::Excursion] {
            let mut exits = 0;
            for seed in 0..20 {
                let cfg = nested_bernoulli(vol, 1.0, seed);
                let v = stabilize_volume(&cfg, rate(4.0), engine, seed, DEFAULT_BUDGET).unwrap();
                assert_eq!(v.initial, 201);
                assert_eq!(v.exits + v.sleeping, v.initial);
                exits += v.exits;
            }
            assert!(exits > 0);
        }
    }

    #[test]
    fn nested_starts() {
        let vol = Volume::centered(50);
        let a = nested_bernoulli(vol, 0.2, 7);
        let b = nested_bernoulli(vol, 0.6, 7);
        for x in vol.sites() {
            assert!(a.state(x).walks() <= b.state(x).walks());
        }
    }

    #[test]
    fn overflow_halves_alpha() {
        let data = vec![(10, vec![1000u64, 2000]), (20, vec![3000, 4000])];
        let t = moment_table(rate(1.0), 1.0, &data).unwrap();
        assert_eq!((t.alpha, t.alpha_halvings), (1.0, 0));
        // log-mean-exp never overflows for finite inputs
        assert!(t.rows.iter().all(|r| r.log_moment.is_finite()));
    }

    #[test]
    fn bisection_rejects_bad_bracket() {
        let p = BisectionParams::default();
        assert!(estimate_zeta_c(rate(1.0), &[10], (0.5, 0.2), &p, 0, Engine::Excursion, DEFAULT_BUDGET).is_err());
        assert!(estimate_zeta_c(rate(1.0), &[10], (0.0, 0.2), &p, 0, Engine::Excursion, DEFAULT_BUDGET).is_err());
        assert!(estimate_zeta_c(rate(1.0), &[], (0.1, 0.2), &p, 0, Engine::Excursion, DEFAULT_BUDGET).is_err());
    }
}
