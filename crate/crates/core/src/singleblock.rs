//! One block `V = {-K..K}` fed with walks one at a time.
//!
//! After each addition the block is stabilized again with persistent stacks
//! and odometer, and the profile records `L(m)`, `R(m)`, `S(m)`: walks that
//! left through the left edge, through the right edge, and walks asleep in
//! `V` after `m` additions. Every added walk also gets a mark (left, right,
//! sleep) from following it until it exits or first reads a sleep
//! instruction.
//!
//! The profile is then cut at the times `τ_ℓ = inf{m : L(m) >= ℓ}` when the
//! left-exit count moves, which is how the exponential moment
//! `Σ_m E[e^{αS(m)} 1{L(m) = ℓ}]` is estimated.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Mark, Stabilizer, TopplingPolicy, DEFAULT_BUDGET};
use crate::error::{ArwError, Result};
use crate::model::{Configuration, Volume};
use crate::sampling::{
    bits_at, derive_seed, stream_rng, InstructionSource, Purpose, SiteStacks, SleepRate, StreamId,
};
use crate::stats::{proportion, MeanVar};

/// `V = {-K..K}` and `U = {-K/2..K/2}` for an even `K > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGeometry {
    k: u32,
}

impl BlockGeometry {
    pub fn new(k: u32) -> Result<BlockGeometry> {
        if k == 0 || k % 2 != 0 {
            return Err(ArwError::Geometry(format!("K must be even and positive, got {k}")));
        }
        Ok(BlockGeometry { k })
    }

    /// `K = 2⌈δ/√λ⌉`.
    pub fn from_rate(rate: SleepRate, delta: f64) -> Result<BlockGeometry> {
        if !(delta > 0.0) {
            return Err(ArwError::domain("delta must be positive"));
        }
        let half = (delta / rate.lambda().sqrt()).ceil();
        BlockGeometry::new(2 * half as u32)
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn volume(&self) -> Volume {
        Volume::centered(self.k as u64)
    }

    pub fn inner(&self) -> Volume {
        Volume::centered(self.k as u64 / 2)
    }
}

/// Where the walks are added: the listed sites first, then the origin.
/// A uniform sequence instead draws every site from its own counter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdditionSequence {
    sites: Vec<i64>,
    tail: i64,
    uniform: Option<UniformSites>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct UniformSites {
    lo: i64,
    len: u64,
    key: u64,
}

impl AdditionSequence {
    pub fn at_origin() -> AdditionSequence {
        AdditionSequence::default()
    }

    pub fn new(sites: Vec<i64>) -> AdditionSequence {
        AdditionSequence {
            sites,
            ..AdditionSequence::default()
        }
    }

    /// I.i.d. uniform sites of `region`, addition `m` read from counter `m`
    /// of the stream `key`.
    pub fn uniform(region: Volume, key: u64) -> AdditionSequence {
        AdditionSequence {
            uniform: Some(UniformSites {
                lo: region.lo(),
                len: region.len() as u64,
                key,
            }),
            ..AdditionSequence::default()
        }
    }

    /// Site of addition number `m` (1-based).
    pub fn at(&self, m: u64) -> i64 {
        if let Some(u) = self.uniform {
            let offset = (bits_at(u.key, m) as u128 * u.len as u128) >> 64;
            return u.lo + offset as i64;
        }
        self.sites
            .get((m - 1) as usize)
            .copied()
            .unwrap_or(self.tail)
    }

    fn check(&self, inner: Volume) -> Result<()> {
        if let Some(u) = self.uniform {
            let hi = u.lo + u.len as i64 - 1;
            if u.len == 0 || !inner.contains(u.lo) || !inner.contains(hi) {
                return Err(ArwError::domain("uniform addition region outside U"));
            }
        }
        match self.sites.iter().chain([&self.tail]).find(|x| !inner.contains(**x)) {
            Some(x) => Err(ArwError::domain(format!("addition site {x} outside U"))),
            None => Ok(()),
        }
    }
}

/// `L`, `R`, `S` after each addition, plus marks and wake-ups per addition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockProfile {
    pub initial_walks: u64,
    pub left: Vec<u64>,
    pub right: Vec<u64>,
    pub sleeping: Vec<u64>,
    /// `marks[m - 1]` belongs to addition `m`.
    pub marks: Vec<Mark>,
    /// Jumps onto a sleeper during addition `m` (index `m - 1`).
    pub wakeups: Vec<u64>,
}

impl BlockProfile {
    pub fn m_max(&self) -> u64 {
        self.left.len() as u64 - 1
    }

    pub fn l(&self, m: u64) -> u64 {
        self.left[m as usize]
    }

    pub fn r(&self, m: u64) -> u64 {
        self.right[m as usize]
    }

    pub fn s(&self, m: u64) -> u64 {
        self.sleeping[m as usize]
    }

    /// Steps `m -> m + 1` where the sleeper count went down.
    pub fn s_decreases(&self) -> u64 {
        self.sleeping.windows(2).filter(|w| w[1] < w[0]).count() as u64
    }

    /// `L + R + S = m + |ξ|` and `L` nondecreasing.
    pub fn is_consistent(&self) -> bool {
        (0..=self.m_max()).all(|m| {
            self.l(m) + self.r(m) + self.s(m) == m + self.initial_walks
        }) && self.left.windows(2).all(|w| w[0] <= w[1])
    }

    /// `Σ_m e^{αS(m)} 1{L(m) = ℓ}` over the tabulated range.
    pub fn ell_sum_direct(&self, ell: u64, alpha: f64) -> f64 {
        (0..=self.m_max())
            .filter(|&m| self.l(m) == ell)
            .map(|m| (alpha * self.s(m) as f64).exp())
            .sum()
    }
}

/// When to stop adding walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopRule {
    pub m_max: u64,
    /// Stop once `L >= target` and the last addition was marked left, so
    /// every window below the target has its geometric count resolved.
    pub left_target: Option<u64>,
}

impl StopRule {
    pub fn fixed(m_max: u64) -> StopRule {
        StopRule {
            m_max,
            left_target: None,
        }
    }
}

/// Stabilize `ξ` (added one walk at a time) and then keep adding walks
/// according to `additions`, tabulating the profile after each one.
pub fn tabulate_profile<S: InstructionSource>(
    volume: Volume,
    xi: &[i64],
    additions: &AdditionSequence,
    stop: StopRule,
    stacks: S,
    budget: u64,
) -> Result<BlockProfile> {
    let policy = TopplingPolicy::WalkChase;
    let mut st = Stabilizer::empty(volume, stacks, budget);
    for &x in xi {
        st.add_walk(x);
        st.stabilize(policy)?;
    }
    let mut profile = BlockProfile {
        initial_walks: xi.len() as u64,
        left: vec![st.config().left_exits],
        right: vec![st.config().right_exits],
        sleeping: vec![st.config().sleeping()],
        marks: Vec::new(),
        wakeups: Vec::new(),
    };
    let mut m = 0;
    while m < stop.m_max {
        if let Some(target) = stop.left_target {
            let last_left = profile.marks.last() == Some(&Mark::Left);
            if st.config().left_exits >= target && last_left {
                break;
            }
        }
        m += 1;
        let before = st.wakeups();
        let mark = st.add_walk_marked(additions.at(m), policy)?;
        profile.marks.push(mark);
        profile.wakeups.push(st.wakeups() - before);
        profile.left.push(st.config().left_exits);
        profile.right.push(st.config().right_exits);
        profile.sleeping.push(st.config().sleeping());
    }
    Ok(profile)
}

/// Add `ξ` and the first `m` additions at once and stabilize once.
pub fn batch_profile_point<S: InstructionSource>(
    volume: Volume,
    xi: &[i64],
    additions: &AdditionSequence,
    m: u64,
    stacks: S,
    budget: u64,
) -> Result<(u64, u64, u64)> {
    let mut cfg = Configuration::empty(volume);
    for &x in xi {
        cfg.add_walk(x);
    }
    for j in 1..=m {
        cfg.add_walk(additions.at(j));
    }
    let mut st = Stabilizer::new(cfg, stacks, budget);
    st.stabilize(TopplingPolicy::Fifo)?;
    let c = st.config();
    Ok((c.left_exits, c.right_exits, c.sleeping()))
}

/// Stacks used by [`run_block_profile`] for a given seed.
pub fn block_stacks(rate: SleepRate, geom: BlockGeometry, seed: u64) -> SiteStacks {
    SiteStacks::new(rate, seed, geom.volume(), Purpose::SingleBlock)
}

pub fn run_block_profile(
    rate: SleepRate,
    geom: BlockGeometry,
    xi: &[i64],
    additions: &AdditionSequence,
    m_max: u64,
    seed: u64,
) -> Result<BlockProfile> {
    if m_max == 0 {
        return Err(ArwError::domain("m_max must be at least 1"));
    }
    check_xi(geom, xi)?;
    additions.check(geom.inner())?;
    tabulate_profile(
        geom.volume(),
        xi,
        additions,
        StopRule::fixed(m_max),
        block_stacks(rate, geom, seed),
        DEFAULT_BUDGET,
    )
}

fn check_xi(geom: BlockGeometry, xi: &[i64]) -> Result<()> {
    let inner = geom.inner();
    let mut seen = std::collections::HashSet::new();
    for &x in xi {
        if !inner.contains(x) || !seen.insert(x) {
            return Err(ArwError::domain(format!(
                "initial configuration must be a subset of U, bad site {x}"
            )));
        }
    }
    Ok(())
}

/// Statistics of the additions between `τ_ℓ` and `τ_{ℓ+1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub ell: u64,
    pub start: u64,
    pub end: u64,
    /// `L(τ_ℓ) = ℓ`; otherwise the window is empty.
    pub exact: bool,
    pub s_start: u64,
    /// `max S` over `[τ_ℓ, τ_{ℓ+1}]`.
    pub s_max: u64,
    /// Additions after `τ_ℓ` up to and including the first left mark.
    pub g: Option<u64>,
    /// Sleep marks strictly before that left mark.
    pub z: Option<u64>,
    /// First addition after `τ_ℓ` woke a sleeper and the block lost
    /// sleeping mass net of the new walk's own mark. Only when `S(τ_ℓ) > 0`.
    pub x: Option<bool>,
}

impl Window {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TauDecomposition {
    /// `τ_0..=τ_{ℓ_max}`.
    pub taus: Vec<u64>,
    /// `F(ℓ) = 2 S(τ_ℓ) + L(τ_ℓ) - ℓ` for `ℓ = 0..=ℓ_max`.
    pub f: Vec<i64>,
    /// Windows `ℓ = 0..ℓ_max`.
    pub windows: Vec<Window>,
}

impl TauDecomposition {
    /// `Σ_{m=τ_ℓ}^{τ_{ℓ+1}-1} e^{αS(m)}`.
    pub fn window_sum(&self, profile: &BlockProfile, ell: u64, alpha: f64) -> f64 {
        let w = &self.windows[ell as usize];
        (w.start..w.end)
            .map(|m| (alpha * profile.s(m) as f64).exp())
            .sum()
    }
}

pub fn decompose_tau(profile: &BlockProfile, ell_max: u64) -> Result<TauDecomposition> {
    let m_max = profile.m_max();
    if profile.l(m_max) < ell_max {
        return Err(ArwError::InsufficientRange {
            needed: ell_max,
            available: profile.l(m_max),
        });
    }
    let mut taus = Vec::with_capacity(ell_max as usize + 1);
    let mut m = 0;
    for ell in 0..=ell_max {
        while profile.l(m) < ell {
            m += 1;
        }
        taus.push(m);
    }
    let f = taus
        .iter()
        .enumerate()
        .map(|(ell, &t)| 2 * profile.s(t) as i64 + profile.l(t) as i64 - ell as i64)
        .collect();
    let windows = (0..ell_max)
        .map(|ell| {
            let start = taus[ell as usize];
            let end = taus[ell as usize + 1];
            let exact = profile.l(start) == ell;
            let s_start = profile.s(start);
            let s_max = (start..=end).map(|m| profile.s(m)).max().unwrap_or(s_start);
            let (mut g, mut z, mut x) = (None, None, None);
            if exact {
                let after = &profile.marks[start as usize..];
                if let Some(pos) = after.iter().position(|&mk| mk == Mark::Left) {
                    g = Some(pos as u64 + 1);
                    z = Some(after[..pos].iter().filter(|&&mk| mk == Mark::Sleep).count() as u64);
                }
                if s_start > 0 && start < m_max {
                    let idx = start as usize;
                    let own = (profile.marks[idx] == Mark::Sleep) as i64;
                    let delta = profile.s(start + 1) as i64 - s_start as i64;
                    x = Some(profile.wakeups[idx] > 0 && delta < own);
                }
            }
            Window {
                ell,
                start,
                end,
                exact,
                s_start,
                s_max,
                g,
                z,
                x,
            }
        })
        .collect();
    Ok(TauDecomposition { taus, f, windows })
}

/// Initial configurations used by the M estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum XiMode {
    Empty,
    /// Uniform draws from `{0,1}^U`; the estimate is the max over draws.
    WorstCaseRandom { draws: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllEstimate {
    pub ell: u64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MEstimate {
    /// Per-ℓ estimates for the initial configuration achieving the max.
    pub per_ell: Vec<EllEstimate>,
    pub m_hat: f64,
    pub argmax_ell: u64,
    pub worst_xi: Vec<i64>,
    pub samples: u64,
}

impl MEstimate {
    /// `(max, mean, stderr of mean)` of the per-ℓ means over `range`.
    pub fn plateau(&self, range: std::ops::RangeInclusive<u64>) -> (f64, f64, f64) {
        let sel: Vec<&EllEstimate> = self
            .per_ell
            .iter()
            .filter(|e| range.contains(&e.ell))
            .collect();
        let max = sel.iter().map(|e| e.mean).fold(f64::NEG_INFINITY, f64::max);
        let mean = sel.iter().map(|e| e.mean).sum::<f64>() / sel.len() as f64;
        let se = sel.iter().map(|e| e.stderr).fold(0.0, f64::max);
        (max, mean, se)
    }
}

const ADDITION_CAP: u64 = 10_000_000;

/// Profile for one sample, run until `L >= left_target`.
fn sample_profile(
    rate: SleepRate,
    geom: BlockGeometry,
    xi: &[i64],
    additions: &AdditionSequence,
    left_target: u64,
    seed: u64,
) -> Result<BlockProfile> {
    let stop = StopRule {
        m_max: ADDITION_CAP,
        left_target: Some(left_target),
    };
    let profile = tabulate_profile(
        geom.volume(),
        xi,
        additions,
        stop,
        block_stacks(rate, geom, seed),
        DEFAULT_BUDGET,
    )?;
    if profile.l(profile.m_max()) < left_target {
        return Err(ArwError::InsufficientRange {
            needed: left_target,
            available: profile.l(profile.m_max()),
        });
    }
    Ok(profile)
}

pub fn estimate_single_block_m(
    rate: SleepRate,
    geom: BlockGeometry,
    alpha: f64,
    xi_mode: XiMode,
    ell_max: u64,
    samples: u64,
    seed: u64,
) -> Result<MEstimate> {
    if !(alpha > 0.0) {
        return Err(ArwError::domain("alpha must be positive"));
    }
    let xis: Vec<Vec<i64>> = match xi_mode {
        XiMode::Empty => vec![Vec::new()],
        XiMode::WorstCaseRandom { draws } => {
            let mut rng = stream_rng(seed, StreamId::site(Purpose::InitialConfig, 0));
            (0..draws)
                .map(|_| geom.inner().sites().filter(|_| rng.gen::<bool>()).collect())
                .collect()
        }
    };
    let mut best: Option<MEstimate> = None;
    for (d, xi) in xis.iter().enumerate() {
        let sums: Vec<Vec<f64>> = (0..samples)
            .into_par_iter()
            .map(|i| {
                let s = derive_seed(seed, &[d as u64, i]);
                let profile =
                    sample_profile(rate, geom, xi, &AdditionSequence::at_origin(), ell_max + 1, s)?;
                let dec = decompose_tau(&profile, ell_max + 1)?;
                Ok((0..=ell_max)
                    .map(|ell| dec.window_sum(&profile, ell, alpha))
                    .collect())
            })
            .collect::<Result<_>>()?;
        let per_ell: Vec<EllEstimate> = (0..=ell_max)
            .map(|ell| {
                let acc: MeanVar = sums.iter().map(|v| v[ell as usize]).collect();
                EllEstimate {
                    ell,
                    mean: acc.mean(),
                    stderr: acc.stderr(),
                }
            })
            .collect();
        let (argmax_ell, m_hat) = per_ell
            .iter()
            .map(|e| (e.ell, e.mean))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        if best.as_ref().map_or(true, |b| m_hat > b.m_hat) {
            best = Some(MEstimate {
                per_ell,
                m_hat,
                argmax_ell,
                worst_xi: xi.clone(),
                samples,
            });
        }
    }
    Ok(best.expect("at least one initial configuration"))
}

/// Probability that a lone walk started at the origin reads a sleep
/// instruction before reaching distance `reach`, by simulation.
pub fn lone_walk_sleep_before(rate: SleepRate, reach: u64, samples: u64, seed: u64) -> (f64, f64) {
    let t = rate.thresholds();
    let hits: u64 = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, StreamId::site(Purpose::Marks, i as i64));
            let mut x: i64 = 0;
            loop {
                match t.classify(rng.gen()) {
                    crate::model::Instruction::SleepAttempt => return 1u64,
                    crate::model::Instruction::Left => x -= 1,
                    crate::model::Instruction::Right => x += 1,
                }
                if x.unsigned_abs() >= reach {
                    return 0;
                }
            }
        })
        .sum();
    proportion(hits, samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCalibration {
    pub delta: f64,
    pub k: u32,
    /// `(δ, estimated probability of sleeping before the reach distance)`.
    pub table: Vec<(f64, f64)>,
    /// Whether some grid value met the target; if not, `delta` is the
    /// smallest grid value.
    pub admissible: bool,
}

pub const DELTA_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Largest δ in the grid for which a lone walk reaches `4⌈δ/√λ⌉` before
/// trying to sleep with probability at least `1 - eps`.
pub fn calibrate_delta(rate: SleepRate, eps: f64, samples: u64, seed: u64) -> Result<DeltaCalibration> {
    let mut table = Vec::new();
    let mut chosen = None;
    for &delta in &DELTA_GRID {
        let reach = 4 * (delta / rate.lambda().sqrt()).ceil() as u64;
        let (p_sleep, _) = lone_walk_sleep_before(rate, reach, samples, seed);
        table.push((delta, p_sleep));
        if p_sleep <= eps {
            chosen = Some(delta);
        }
    }
    let admissible = chosen.is_some();
    let delta = chosen.unwrap_or(DELTA_GRID[0]);
    Ok(DeltaCalibration {
        delta,
        k: BlockGeometry::from_rate(rate, delta)?.k(),
        table,
        admissible,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub k: u64,
    pub empirical: f64,
    pub stderr: f64,
    pub bound: f64,
}

impl TailCheck {
    pub fn holds(&self) -> bool {
        self.empirical <= self.bound + 3.0 * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkStats {
    pub k: u32,
    /// `P(sleep before exiting V)` for a walk released at the centre.
    pub eps_hat: f64,
    pub eps_stderr: f64,
    /// `1/4 - ε̂`.
    pub p: f64,
    /// Left-mark frequency per release site in U, `(site, mean, stderr)`.
    pub left_by_site: Vec<(i64, f64, f64)>,
    pub left_pooled: (f64, f64),
    pub mark_counts: [u64; 3],
    pub g_tail: Vec<TailCheck>,
    pub z_tail: Vec<TailCheck>,
    /// `(mean X, stderr, p - ε̂)`.
    pub x_mean: (f64, f64, f64),
    /// `E[F(ℓ+1) - F(ℓ) | F(ℓ) > 0]` and its standard error.
    pub drift: (f64, f64),
    pub drift_observations: u64,
    /// Samples where `∇(L+S) <= 1 + Z` failed on a window with `L(τ_ℓ) = ℓ`.
    pub key_relation_violations: u64,
    /// Samples where `max S` over a window exceeded `S(τ_ℓ) + (τ_{ℓ+1} - τ_ℓ)`.
    pub crude_bound_violations: u64,
    /// Additions after which `S` went down.
    pub s_decreases: u64,
    pub samples: u64,
    pub ell_max: u64,
}

struct SampleMarks {
    by_site: Vec<[u64; 3]>,
    g: Vec<u64>,
    z: Vec<u64>,
    x: Vec<bool>,
    drift_sum: f64,
    drift_n: u64,
    key_violation: bool,
    crude_violation: bool,
    s_decreases: u64,
}

fn mark_index(m: Mark) -> usize {
    match m {
        Mark::Left => 0,
        Mark::Right => 1,
        Mark::Sleep => 2,
    }
}

/// Mark and window statistics from `samples` runs starting empty, with
/// walks released at uniformly random sites of U, each run continued until
/// `L >= ell_max`.
pub fn mark_statistics(
    rate: SleepRate,
    geom: BlockGeometry,
    samples: u64,
    ell_max: u64,
    eps_samples: u64,
    seed: u64,
) -> Result<MarkStats> {
    let k = geom.k() as i64;
    let (eps_hat, eps_stderr) =
        lone_walk_sleep_before(rate, k as u64 + 1, eps_samples, derive_seed(seed, &[1]));
    let p = 0.25 - eps_hat;
    let inner = geom.inner();
    let n_inner = inner.len();

    let per_sample: Vec<SampleMarks> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, &[2, i]);
            let additions = AdditionSequence::uniform(inner, StreamId::site(Purpose::Marks, 0).key(s));
            let profile = sample_profile(rate, geom, &[], &additions, ell_max, s)?;
            let dec = decompose_tau(&profile, ell_max)?;
            let mut by_site = vec![[0u64; 3]; n_inner];
            for (j, &mk) in profile.marks.iter().enumerate() {
                let site = additions.at(j as u64 + 1);
                by_site[(site - inner.lo()) as usize][mark_index(mk)] += 1;
            }
            let mut out = SampleMarks {
                by_site,
                g: Vec::new(),
                z: Vec::new(),
                x: Vec::new(),
                drift_sum: 0.0,
                drift_n: 0,
                key_violation: false,
                crude_violation: false,
                s_decreases: profile.s_decreases(),
            };
            for w in &dec.windows {
                let ell = w.ell as usize;
                if dec.f[ell] > 0 {
                    out.drift_sum += (dec.f[ell + 1] - dec.f[ell]) as f64;
                    out.drift_n += 1;
                }
                if w.s_max > w.s_start + w.len() {
                    out.crude_violation = true;
                }
                if !w.exact {
                    continue;
                }
                if let (Some(g), Some(z)) = (w.g, w.z) {
                    out.g.push(g);
                    out.z.push(z);
                    let ls_start = profile.l(w.start) + profile.s(w.start);
                    let ls_end = profile.l(w.end) + profile.s(w.end);
                    if ls_end > ls_start + 1 + z {
                        out.key_violation = true;
                    }
                }
                if let Some(x) = w.x {
                    out.x.push(x);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut by_site = vec![[0u64; 3]; n_inner];
    let mut g_all = Vec::new();
    let mut z_all = Vec::new();
    let mut x_all = Vec::new();
    let mut drift_sums = Vec::with_capacity(samples as usize);
    let mut drift_counts = Vec::with_capacity(samples as usize);
    let mut key_relation_violations = 0;
    let mut crude_bound_violations = 0;
    let mut s_decreases = 0;
    for sm in &per_sample {
        for (acc, c) in by_site.iter_mut().zip(&sm.by_site) {
            for t in 0..3 {
                acc[t] += c[t];
            }
        }
        g_all.extend_from_slice(&sm.g);
        z_all.extend_from_slice(&sm.z);
        x_all.extend_from_slice(&sm.x);
        drift_sums.push(sm.drift_sum);
        drift_counts.push(sm.drift_n as f64);
        key_relation_violations += sm.key_violation as u64;
        crude_bound_violations += sm.crude_violation as u64;
        s_decreases += sm.s_decreases;
    }

    let mut mark_counts = [0u64; 3];
    for c in &by_site {
        for t in 0..3 {
            mark_counts[t] += c[t];
        }
    }
    let total_marks: u64 = mark_counts.iter().sum();
    let left_by_site = by_site
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let n: u64 = c.iter().sum();
            let (m, se) = proportion(c[0], n.max(1));
            (inner.lo() + j as i64, m, se)
        })
        .collect();

    let tail = |values: &[u64], bound: &dyn Fn(u64) -> f64, strict: bool| -> Vec<TailCheck> {
        (1..=20)
            .map(|k| {
                let hits = values
                    .iter()
                    .filter(|&&v| if strict { v > k } else { v >= k })
                    .count() as u64;
                let (empirical, stderr) = proportion(hits, values.len().max(1) as u64);
                TailCheck {
                    k,
                    empirical,
                    stderr,
                    bound: bound(k),
                }
            })
            .collect()
    };
    let g_bound = |k: u64| (1.0 - p).powi(k as i32).min(1.0).max(if p <= 0.0 { 1.0 } else { 0.0 });
    let z_ratio = if p <= 0.0 { 1.0 } else { eps_hat / (p + eps_hat) };
    let z_bound = |k: u64| z_ratio.powi(k as i32);
    let g_tail = tail(&g_all, &g_bound, true);
    let z_tail = tail(&z_all, &z_bound, false);

    let x_acc: MeanVar = x_all.iter().map(|&b| b as u8 as f64).collect();

    // ratio estimator over samples
    let total_n: f64 = drift_counts.iter().sum();
    let drift_mean = drift_sums.iter().sum::<f64>() / total_n;
    let ns = samples as f64;
    let resid: MeanVar = drift_sums
        .iter()
        .zip(&drift_counts)
        .map(|(s, c)| s - drift_mean * c)
        .collect();
    let drift_se = (resid.variance() / ns).sqrt() / (total_n / ns);

    Ok(MarkStats {
        k: geom.k(),
        eps_hat,
        eps_stderr,
        p,
        left_by_site,
        left_pooled: proportion(mark_counts[0], total_marks),
        mark_counts,
        g_tail,
        z_tail,
        x_mean: (x_acc.mean(), x_acc.stderr(), p - eps_hat),
        drift: (drift_mean, drift_se),
        drift_observations: total_n as u64,
        key_relation_violations,
        crude_bound_violations,
        s_decreases,
        samples,
        ell_max,
    })
}
