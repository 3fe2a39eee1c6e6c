use num_bigint::BigInt;
use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use arw_core::bounds::{hwalk_exact_dist, reciprocal_row_mean, srw_moments};
use arw_core::ctime::{ring_volume, simulate_ct, CtBudget, Topology};
use arw_core::engine::{stabilize, TopplingPolicy, DEFAULT_BUDGET};
use arw_core::model::{Configuration, Volume};
use arw_core::sampling::{derive_seed, Purpose, SiteStacks, SleepRate};
use arw_core::stats::{proportion, MeanVar};

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Probability that a lone walk started at the centre of `V_r` falls
/// asleep, by Gauss-Seidel on `p = s + (1-s)/2 (p_left + p_right)`.
fn lone_sleep_probability(lambda: f64, r: usize) -> f64 {
    let s = lambda / (1.0 + lambda);
    let n = 2 * r + 1;
    let mut p = vec![0.0; n + 2];
    for _ in 0..10_000 {
        for i in 1..=n {
            p[i] = s + (1.0 - s) * 0.5 * (p[i - 1] + p[i + 1]);
        }
    }
    p[r + 1]
}

#[test]
fn lone_walk_on_three_sites_sleeps_with_six_sevenths() {
    assert!((lone_sleep_probability(1.0, 1) - 6.0 / 7.0).abs() < 1e-12);
    let rate = SleepRate::new(1.0).unwrap();
    let vol = Volume::centered(1);
    let n = 200_000;
    let slept = (0..n)
        .filter(|&i| {
            let mut c = Configuration::empty(vol);
            c.add_walk(0);
            let stacks = SiteStacks::new(rate, derive_seed(5, &[i]), vol, Purpose::Stacks);
            stabilize(c, &stacks, TopplingPolicy::Fifo, DEFAULT_BUDGET).unwrap().sleeping == 1
        })
        .count() as u64;
    let (p, se) = proportion(slept, n);
    assert!((p - 6.0 / 7.0).abs() < 3.0 * se, "{p} +- {se}");
}

#[test]
fn lone_ring_walk_activity_is_inverse_rate() {
    let lambda = 0.5;
    let mut c = Configuration::empty(ring_volume(5).unwrap());
    c.add_walk(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rate = SleepRate::new(lambda).unwrap();
    let acc: MeanVar = (0..100_000)
        .map(|_| {
            simulate_ct(&c, Topology::Ring, rate, CtBudget::events(u64::MAX), &mut rng)
                .unwrap()
                .meter
                .activity
        })
        .collect();
    assert!((acc.mean() - 1.0 / lambda).abs() < 3.0 * acc.stderr(), "{}", acc.mean());
}

#[test]
fn simple_walk_moments_by_enumeration() {
    for n in 1..=12u32 {
        let mut third = 0i64;
        let mut fourth = 0i64;
        for path in 0u32..(1 << n) {
            let s = 2 * path.count_ones() as i64 - n as i64;
            third += s.abs().pow(3);
            fourth += s.pow(4);
        }
        let m = srw_moments(n).unwrap();
        assert_eq!(m.abs_third, q(third, 1 << n));
        assert_eq!(m.fourth, q(fourth, 1 << n));
    }
    assert_eq!(srw_moments(2).unwrap().fourth, q(8, 1));
    assert_eq!(srw_moments(3).unwrap().abs_third, q(15, 2));
}

#[test]
fn reciprocal_is_a_martingale_away_from_one() {
    for x in 2..=64 {
        assert_eq!(reciprocal_row_mean(x), q(1, x as i64));
    }
    assert_eq!(reciprocal_row_mean(1), q(1, 2));
}

/// Weighted enumeration: a positive path `0, 1, x_2, .., x_n` of the
/// simple walk has conditioned probability `x_n / 2^(n-1)`.
fn enumerate(n: u32) -> (Vec<u128>, Vec<u128>) {
    let mut pos = vec![0u128; n as usize + 2];
    let mut max = vec![0u128; n as usize + 2];
    for path in 0u64..(1 << (n - 1)) {
        let mut x = 1i64;
        let mut z = 1i64;
        let mut ok = true;
        for k in 0..n - 1 {
            x += if path >> k & 1 == 1 { 1 } else { -1 };
            if x <= 0 {
                ok = false;
                break;
            }
            z = z.max(x);
        }
        if ok {
            pos[x as usize] += x as u128;
            max[z as usize] += x as u128;
        }
    }
    (pos, max)
}

fn tail(v: &[u128], k: usize) -> u128 {
    v.iter().skip(k).sum()
}

#[test]
fn position_tail_dominates_half_the_maximum_tail() {
    for n in 1..=20u32 {
        let (pos, max) = enumerate(n);
        let total: u128 = pos.iter().sum();
        assert_eq!(total, 1 << (n - 1), "normalization at n = {n}");
        let d = hwalk_exact_dist(n).unwrap();
        for k in 1..=n as usize + 1 {
            let lib = d.max_tail(k as u64);
            assert_eq!(lib, BigRational::new(tail(&max, k).into(), (1u128 << (n - 1)).into()));
            if 2 * k <= n as usize + 1 {
                assert!(2 * tail(&pos, k) >= tail(&max, 2 * k), "n = {n}, k = {k}");
            }
        }
        assert!(d.tail_inequality_holds());
    }
}
