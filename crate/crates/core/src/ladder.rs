//! Ladder locations and per-block maxima of the running product.

use crate::env::{Environment, CHUNK, TIE_EPS};
use crate::error::{Error, Result};

/// Default cap on the number of sites scanned for a single ladder location.
pub const SCAN_CAP: u64 = 1_000_000_000;

/// Ladder locations `0 = nu_0 < nu_1 < ...` of an environment.
///
/// `nu_i` is the first site after `nu_{i-1}` at which the running product
/// `Pi_{nu_{i-1}, n-1}` falls strictly below one. Block `k` is
/// `nu_{k-1}..nu_k`; its maximum is `M_k = max_j Pi_{nu_{k-1}, j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderIndex {
    /// `nu[0] = 0`, then `nu_1, nu_2, ...`.
    pub nu: Vec<i64>,
    /// `log M_k` for block `k = 1..`, stored at index `k - 1`.
    pub log_block_max: Vec<f64>,
    /// Ladder locations left of the origin, nearest first: `nu_{-1}, nu_{-2}, ...`.
    /// Computed relative to the window, so the deepest ones are provisional.
    pub neg_nu: Vec<i64>,
}

impl LadderIndex {
    /// Number of complete blocks.
    pub fn blocks(&self) -> usize {
        self.nu.len() - 1
    }

    /// `M_k` for `k >= 1`.
    pub fn block_max(&self, k: usize) -> f64 {
        self.log_block_max[k - 1].exp()
    }

    pub fn block_maxima(&self) -> Vec<f64> {
        self.log_block_max.iter().map(|l| l.exp()).collect()
    }

    /// `nu_k - nu_{k-1}`.
    pub fn block_len(&self, k: usize) -> i64 {
        self.nu[k] - self.nu[k - 1]
    }

    pub fn block_lens(&self) -> Vec<i64> {
        self.nu.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `nu_i` for any signed `i`, if known.
    pub fn nu_signed(&self, i: i64) -> Option<i64> {
        if i >= 0 {
            self.nu.get(i as usize).copied()
        } else {
            self.neg_nu.get((-i - 1) as usize).copied()
        }
    }

    /// Block containing `site`: the `k >= 1` with `nu_{k-1} <= site < nu_k`.
    pub fn block_of(&self, site: i64) -> Option<usize> {
        if site < 0 || site >= *self.nu.last()? {
            return None;
        }
        Some(self.nu.partition_point(|&v| v <= site))
    }

    /// Largest `k >= 0` with `nu_k <= site` (0 when `site < nu_1`).
    pub fn crossed(&self, site: i64) -> usize {
        self.nu.partition_point(|&v| v <= site).saturating_sub(1)
    }

    /// Reflection site `nu_{k - radius}` used while the walk is in block `k + 1`
    /// (i.e. after reaching `nu_k`).
    pub fn reflection_after(&self, k: usize, radius: usize) -> Option<i64> {
        self.nu_signed(k as i64 - radius as i64)
    }
}

/// First `count` ladder locations of `env` (growing it rightwards as needed).
pub fn ladder_locations(env: &Environment, count: usize) -> Result<(Environment, LadderIndex)> {
    ladder_locations_capped(env, count, SCAN_CAP)
}

pub fn ladder_locations_capped(env: &Environment, count: usize, cap: u64) -> Result<(Environment, LadderIndex)> {
    if count == 0 {
        return Err(Error::InvalidArgument("ladder count must be >= 1".into()));
    }
    if !env.contains(0) {
        return Err(Error::Window { site: 0, lo: env.lo(), hi: env.hi() });
    }
    let mut env = env.clone();
    let mut nu = Vec::with_capacity(count + 1);
    let mut log_max = Vec::with_capacity(count);
    nu.push(0i64);
    let mut start = 0i64;
    while nu.len() <= count {
        let (next, lm, grown) = next_ladder(&env, start, cap)?;
        env = grown;
        nu.push(next);
        log_max.push(lm);
        start = next;
    }
    let neg_nu = negative_ladders(&env);
    Ok((env, LadderIndex { nu, log_block_max: log_max, neg_nu }))
}

/// Ladder locations up to and including the first one beyond `site`.
pub fn ladder_covering(env: &Environment, site: i64) -> Result<(Environment, LadderIndex)> {
    let mut env = env.clone();
    let mut nu = vec![0i64];
    let mut log_max = Vec::new();
    let mut start = 0i64;
    while *nu.last().unwrap() <= site {
        let (next, lm, grown) = next_ladder(&env, start, SCAN_CAP)?;
        env = grown;
        nu.push(next);
        log_max.push(lm);
        start = next;
    }
    let neg_nu = negative_ladders(&env);
    Ok((env, LadderIndex { nu, log_block_max: log_max, neg_nu }))
}

fn next_ladder(env: &Environment, start: i64, cap: u64) -> Result<(i64, f64, Environment)> {
    let mut env = env.clone();
    let mut log_pi = 0.0f64;
    let mut log_max = f64::NEG_INFINITY;
    let mut n = start;
    loop {
        if n > env.hi() {
            env = env.grow_right(CHUNK)?;
        }
        log_pi += env.rho_raw(n).ln();
        log_max = log_max.max(log_pi);
        n += 1;
        if log_pi < -TIE_EPS {
            return Ok((n, log_max, env));
        }
        if (n - start) as u64 >= cap {
            return Err(Error::ScanCap(cap));
        }
    }
}

/// Strict running minima of the potential left of the origin.
fn negative_ladders(env: &Environment) -> Vec<i64> {
    let lo = env.lo();
    if lo >= 0 {
        return Vec::new();
    }
    let mut found = Vec::new();
    let mut v = 0.0f64; // potential at the current site relative to the last reset
    let mut running_min = 0.0f64;
    for x in (lo + 1)..0 {
        let r = env.rho_raw(x - 1);
        if r == 0.0 {
            v = 0.0;
            running_min = 0.0;
            found.push(x);
            continue;
        }
        v += r.ln();
        if v < running_min - TIE_EPS {
            found.push(x);
        }
        running_min = running_min.min(v);
    }
    found.reverse();
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::pi_product;
    use crate::env::{LeftMode, SampleOptions};
    use crate::law::EnvLaw;

    #[test]
    fn homogeneous_descending_every_site() {
        let env = Environment::sample(&EnvLaw::constant(0.75).unwrap(), 0, LeftMode::Plain, SampleOptions::default())
            .unwrap();
        let (_, lad) = ladder_locations(&env, 10).unwrap();
        assert_eq!(lad.nu, (0..=10).collect::<Vec<i64>>());
        for k in 1..=10 {
            assert!((lad.block_max(k) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tie_at_one_does_not_end_a_block() {
        let env = Environment::from_rhos(0, &[2.0, 0.5, 1.0 / 3.0, 0.5]).unwrap();
        let (_, lad) = ladder_locations(&env, 1).unwrap();
        assert_eq!(lad.nu, vec![0, 3]);
        assert!((lad.block_max(1) - 2.0).abs() < 1e-12);
        let env = Environment::from_rhos(0, &[0.5]).unwrap();
        let (_, lad) = ladder_locations(&env, 1).unwrap();
        assert_eq!(lad.nu, vec![0, 1]);
    }

    #[test]
    fn fixed_window_exhaustion_is_an_error() {
        let env = Environment::from_rhos(0, &[2.0, 0.5]).unwrap();
        assert!(ladder_locations(&env, 1).is_err());
        assert!(ladder_locations(&env, 0).is_err());
    }

    #[test]
    fn recurrent_law_hits_scan_cap() {
        let env = Environment::sample(&EnvLaw::constant(0.4).unwrap(), 0, LeftMode::Plain, SampleOptions::default())
            .unwrap();
        assert!(matches!(ladder_locations_capped(&env, 1, 5000), Err(Error::ScanCap(5000))));
    }

    #[test]
    fn defining_inequalities_hold_exactly_on_random_environments() {
        for (q, seed) in [(0.4, 1u64), (0.45, 2), (0.3, 3)] {
            let law = EnvLaw::doubling(q).unwrap();
            let env = Environment::sample(&law, seed, LeftMode::ConditionedQ, SampleOptions::default()).unwrap();
            let (env, lad) = ladder_locations(&env, 300).unwrap();
            for k in 1..=lad.blocks() {
                let (a, b) = (lad.nu[k - 1], lad.nu[k]);
                assert!(pi_product(&env, a, b - 1).unwrap() < 1.0);
                let mut best = 0.0f64;
                for n in (a + 1)..b {
                    let p = pi_product(&env, a, n - 1).unwrap();
                    assert!(p >= 1.0 - 1e-9, "block {k} site {n}: {p}");
                    best = best.max(p);
                }
                best = best.max(pi_product(&env, a, b - 1).unwrap());
                assert!((best - lad.block_max(k)).abs() <= 1e-9 * best);
            }
        }
    }

    #[test]
    fn block_lookup() {
        let lad = LadderIndex { nu: vec![0, 3, 4, 9], log_block_max: vec![0.0; 3], neg_nu: vec![-2, -5] };
        assert_eq!(lad.block_of(0), Some(1));
        assert_eq!(lad.block_of(2), Some(1));
        assert_eq!(lad.block_of(3), Some(2));
        assert_eq!(lad.block_of(8), Some(3));
        assert_eq!(lad.block_of(9), None);
        assert_eq!(lad.crossed(0), 0);
        assert_eq!(lad.crossed(3), 1);
        assert_eq!(lad.crossed(100), 3);
        assert_eq!(lad.nu_signed(-2), Some(-5));
        assert_eq!(lad.reflection_after(2, 3), Some(-2));
        assert_eq!(lad.reflection_after(1, 5), None);
        assert_eq!(lad.block_lens(), vec![3, 1, 5]);
    }

    #[test]
    fn negative_ladders_are_left_records() {
        // rho left of the origin, sites -4..-1
        let env = Environment::from_rhos(-4, &[0.5, 2.0, 0.25, 0.5, 0.5]).unwrap();
        let (_, lad) = ladder_locations(&env, 1).unwrap();
        // potential relative to -4: ln .5 at -3, 0 at -2, ln .125 at -1
        assert_eq!(lad.neg_nu, vec![-1, -3]);
    }
}

/// `b_n = floor(ln^2 n)`: how many ladder blocks the reflected walk may backtrack.
pub fn reflection_radius(n: u64) -> usize {
    if n <= 1 {
        return 0;
    }
    let l = (n as f64).ln();
    (l * l).floor() as usize
}

#[cfg(test)]
mod radius_tests {
    use super::reflection_radius;

    #[test]
    fn natural_log_radius() {
        assert_eq!(reflection_radius(1), 0);
        assert_eq!(reflection_radius(240), 30);
        assert_eq!(reflection_radius(3), 1);
        assert_eq!(reflection_radius(65280), 122);
    }
}
