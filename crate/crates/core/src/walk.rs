//! Monte Carlo of the quenched walk: hitting times, positions at fixed
//! times and the reflected walk coupled below the true one.

use std::path::Path;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{Environment, CHUNK};
use crate::error::{Error, Result};
use crate::ladder::{ladder_covering, reflection_radius, LadderIndex};
use crate::report::{emit_csv, Cell};
use crate::rng::{self, tags};

/// Default step cap.
pub const DEFAULT_CAP: u64 = 1_000_000_000;

const TWO_53: f64 = 9_007_199_254_740_992.0;

/// Hitting time of one target on one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HitSample {
    pub target: i64,
    /// `T_target`, or the cap when `capped`.
    pub steps: u64,
    pub capped: bool,
    /// Leftmost site visited.
    pub min_site: i64,
    /// Largest ladder index reached, when the ladder from 0 could be built.
    pub n_t_max: Option<usize>,
}

/// One path of the walk and of the reflected walk driven by the same uniforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoupledSample {
    pub t_plain: u64,
    pub t_reflected: u64,
    /// First step after which the two walks differ.
    pub divergence_step: Option<u64>,
    /// Steps at which the reflected walk was found left of the walk.
    pub violations: u64,
    pub capped: bool,
}

/// Position of the walk after a fixed number of steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PositionSample {
    pub time: u64,
    pub x: i64,
    /// `N_t`: ladder locations crossed by time `t`.
    pub n_t: usize,
    /// `nu_{N_t} - X_t`.
    pub gap: i64,
}

/// Step thresholds over a growing range of sites. The walk steps right when
/// the top 53 bits of a uniform draw fall below `ceil(omega * 2^53)`. The
/// range starts around the starting site and doubles on demand, growing the
/// environment itself only when the walk leaves its window.
struct Track {
    env: Environment,
    lo: i64,
    thr: Vec<u64>,
}

impl Track {
    fn new(env: &Environment, start: i64) -> Result<Self> {
        let mut t = Track { env: env.clone(), lo: start, thr: Vec::new() };
        t.grow_env(start)?;
        t.load(start - CHUNK, start + CHUNK);
        Ok(t)
    }

    /// Loads thresholds for `lo..=hi` clipped to the window; `lo` and `hi`
    /// must bracket the current range.
    fn load(&mut self, lo: i64, hi: i64) {
        let lo = lo.max(self.env.lo());
        let hi = hi.min(self.env.hi());
        let base = self.env.lo();
        self.thr = self.env.omegas()[(lo - base) as usize..=(hi - base) as usize]
            .iter()
            .map(|&w| (w * TWO_53).ceil() as u64)
            .collect();
        self.lo = lo;
    }

    fn grow_env(&mut self, x: i64) -> Result<()> {
        if x < self.env.lo() {
            if !self.env.can_extend_left() {
                return Err(Error::Extension {
                    lo: x,
                    hi: self.env.hi(),
                    reason: "walk left the fixed window".into(),
                });
            }
            self.env = self.env.grow_left(self.env.lo() - x + CHUNK)?;
        } else if x > self.env.hi() {
            if !self.env.can_extend_right() {
                return Err(Error::Extension {
                    lo: self.env.lo(),
                    hi: x,
                    reason: "walk left the fixed window".into(),
                });
            }
            self.env = self.env.grow_right(x - self.env.hi() + CHUNK)?;
        }
        Ok(())
    }

    /// Makes `x` addressable.
    fn cover(&mut self, x: i64) -> Result<()> {
        self.grow_env(x)?;
        let span = (self.thr.len() as i64).max(CHUNK);
        let hi = self.lo + self.thr.len() as i64 - 1;
        let new_lo = if x < self.lo { x.min(self.lo - span) } else { self.lo };
        let new_hi = if x > hi { x.max(hi + span) } else { hi };
        self.load(new_lo, new_hi);
        Ok(())
    }

    #[inline]
    fn threshold(&mut self, x: i64) -> Result<u64> {
        match self.thr.get(x.wrapping_sub(self.lo) as usize) {
            Some(&t) => Ok(t),
            None => {
                self.cover(x)?;
                Ok(self.thr[(x - self.lo) as usize])
            }
        }
    }
}

#[inline]
fn uniform53(rng: &mut ChaCha8Rng) -> u64 {
    rng.next_u64() >> 11
}

fn walk_rng(seed: u64) -> ChaCha8Rng {
    rng::stream(seed, tags::WALK)
}

fn ladder_reached(env: &Environment, max_site: i64) -> Option<usize> {
    if max_site < 0 {
        return Some(0);
    }
    ladder_covering(env, max_site).ok().map(|(_, lad)| lad.crossed(max_site))
}

/// Runs the walk from `start` until it first hits `target` (or `cap` steps).
pub fn simulate_hit(env: &Environment, start: i64, target: i64, seed: u64, cap: u64) -> Result<HitSample> {
    Ok(simulate_hits(env, start, &[target], seed, cap)?[0])
}

/// Hitting times of increasing `targets` along a single path.
pub fn simulate_hits(env: &Environment, start: i64, targets: &[i64], seed: u64, cap: u64) -> Result<Vec<HitSample>> {
    if targets.is_empty() || targets[0] < start || targets.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(format!("targets must be sorted and >= start = {start}")));
    }
    let mut track = Track::new(env, start)?;
    let mut rng = walk_rng(seed);
    let mut x = start;
    let mut steps = 0u64;
    let mut min_site = start;
    let mut max_site = start;
    let mut out = Vec::with_capacity(targets.len());
    for &target in targets {
        let mut capped = false;
        while x != target {
            if steps >= cap {
                capped = true;
                break;
            }
            let thr = track.threshold(x)?;
            x += if uniform53(&mut rng) < thr { 1 } else { -1 };
            max_site = max_site.max(x);
            min_site = min_site.min(x);
            steps += 1;
        }
        out.push(HitSample { target, steps, capped, min_site, n_t_max: None });
        if capped {
            break;
        }
    }
    // Ladder bookkeeping is done once the window is final.
    for h in out.iter_mut() {
        h.n_t_max = ladder_reached(&track.env, if h.capped { max_site } else { h.target });
    }
    while out.len() < targets.len() {
        let last = *out.last().unwrap();
        out.push(HitSample { target: targets[out.len()], ..last });
    }
    Ok(out)
}

/// Runs the walk for exactly `time` steps from 0.
pub fn position_at(env: &Environment, time: u64, seed: u64) -> Result<PositionSample> {
    let mut track = Track::new(env, 0)?;
    let mut rng = walk_rng(seed);
    let mut x = 0i64;
    let mut max_site = 0i64;
    for _ in 0..time {
        let thr = track.threshold(x)?;
        if uniform53(&mut rng) < thr {
            x += 1;
            max_site = max_site.max(x);
        } else {
            x -= 1;
        }
    }
    let (_, lad) = ladder_covering(&track.env, max_site)?;
    let n_t = lad.crossed(max_site);
    Ok(PositionSample { time, x, n_t, gap: lad.nu[n_t] - x })
}

/// Walk `X` and reflected walk `Xbar^(n)` from `start` to `target`, both
/// driven by one uniform per step. After `Xbar` reaches `nu_k` it is
/// reflected at `nu_{k - b_n}`; it stops once it hits `target` while `X`
/// continues.
pub fn simulate_coupled(
    env: &Environment,
    ladder: &LadderIndex,
    n: u64,
    start: i64,
    target: i64,
    seed: u64,
    cap: u64,
) -> Result<CoupledSample> {
    if target < start {
        return Err(Error::InvalidArgument(format!("target {target} left of start {start}")));
    }
    let last = *ladder.nu.last().unwrap();
    if target > last || start < 0 {
        return Err(Error::InsufficientBlocks { needed: target.max(0) as usize, have: last as usize });
    }
    let radius = reflection_radius(n);
    let mut track = Track::new(env, start)?;
    let mut rng = walk_rng(seed);
    let (mut x, mut xb) = (start, start);
    let mut k = ladder.crossed(start);
    let mut wall = ladder.reflection_after(k, radius);
    let mut steps = 0u64;
    let mut t_reflected = None;
    let mut divergence_step = None;
    let mut violations = 0u64;
    while x != target {
        if steps >= cap {
            return Ok(CoupledSample {
                t_plain: cap,
                t_reflected: t_reflected.unwrap_or(cap),
                divergence_step,
                violations,
                capped: true,
            });
        }
        let u = uniform53(&mut rng);
        let thr = track.threshold(x)?;
        x += if u < thr { 1 } else { -1 };
        if t_reflected.is_none() {
            let right = Some(xb) == wall || u < track.threshold(xb)?;
            xb += if right { 1 } else { -1 };
            if k + 1 < ladder.nu.len() && xb == ladder.nu[k + 1] {
                k += 1;
                wall = ladder.reflection_after(k, radius);
            }
        }
        steps += 1;
        if t_reflected.is_none() && xb == target {
            t_reflected = Some(steps);
        }
        // Once frozen at the target, Xbar still dominates X.
        if xb < x {
            violations += 1;
        }
        debug_assert!(xb >= x, "coupling broken at step {steps}: {xb} < {x}");
        if divergence_step.is_none() && xb != x {
            divergence_step = Some(steps);
        }
    }
    Ok(CoupledSample {
        t_plain: steps,
        t_reflected: t_reflected.unwrap_or(steps),
        divergence_step,
        violations,
        capped: false,
    })
}

/// Runs `count` replicas in parallel; replica `i` gets `replica_seed(master, i)`.
/// Output is in replica order whatever the scheduling.
pub fn replicas<T, F>(count: usize, master: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(|i| f(i, rng::replica_seed(master, i as u64))).collect()
}

/// Writes `replica,target,steps,capped,min_site,n_t_max` rows.
pub fn write_hits_csv(samples: &[(usize, HitSample)], path: &Path) -> Result<()> {
    let rows: Vec<Vec<Cell>> = samples
        .iter()
        .map(|(r, h)| {
            vec![
                Cell::from(*r as i64),
                Cell::from(h.target),
                Cell::from(h.steps as i64),
                Cell::from(h.capped),
                Cell::from(h.min_site),
                h.n_t_max.map(|v| Cell::from(v as i64)).unwrap_or(Cell::Text(String::new())),
            ]
        })
        .collect();
    emit_csv(&["replica", "target", "steps", "capped", "min_site", "n_t_max"], &rows, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{LeftMode, SampleOptions};
    use crate::ladder::ladder_locations;
    use crate::law::EnvLaw;
    use crate::quenched::exit_probability;
    use crate::stats::{mean_se, sample_variance};

    fn homogeneous(omega: f64) -> Environment {
        Environment::sample(&EnvLaw::constant(omega).unwrap(), 0, LeftMode::Plain, SampleOptions::default())
            .unwrap()
    }

    fn q_env(q: f64, seed: u64) -> Environment {
        Environment::sample(&EnvLaw::doubling(q).unwrap(), seed, LeftMode::ConditionedQ, SampleOptions::default())
            .unwrap()
    }

    #[test]
    fn deterministic_walk() {
        let env = Environment::from_omegas(0, vec![1.0; 12]).unwrap();
        let h = simulate_hit(&env, 0, 10, 5, DEFAULT_CAP).unwrap();
        assert_eq!((h.steps, h.capped, h.min_site), (10, false, 0));
        let p = position_at(&Environment::from_omegas(0, vec![1.0; 40]).unwrap(), 25, 1).unwrap();
        // Every site is a ladder location when rho = 0.
        assert_eq!((p.x, p.n_t, p.gap), (25, 25, 0));
        let p = position_at(&env, 0, 1).unwrap();
        assert_eq!((p.x, p.n_t, p.gap), (0, 0, 0));
    }

    #[test]
    fn homogeneous_moments() {
        let env = homogeneous(0.75);
        let ts: Vec<f64> = replicas(100_000, 42, |_, s| simulate_hit(&env, 0, 10, s, DEFAULT_CAP).unwrap())
            .iter()
            .map(|h| {
                assert!(h.steps >= 10 && !h.capped);
                h.steps as f64
            })
            .collect();
        let (m, se) = mean_se(&ts);
        assert!((m - 20.0).abs() <= 3.0 * se, "{m} ± {se}");
        let v = sample_variance(&ts);
        assert!((v - 60.0).abs() <= 0.05 * 60.0, "{v}");
    }

    #[test]
    fn exit_frequency_matches_closed_form() {
        let env = q_env(0.4, 9);
        let p = exit_probability(&env, -1, 0, 1).unwrap();
        let n = 20_000;
        let hits: Vec<f64> = replicas(n, 3, |_, s| {
            let h = simulate_hit(&env, 0, 1, s, DEFAULT_CAP).unwrap();
            // T_1 < T_{-1} iff the first step is to the right.
            if h.min_site >= 0 { 1.0 } else { 0.0 }
        });
        let (m, se) = mean_se(&hits);
        assert!((m - p).abs() <= 3.0 * se.max(1e-12), "{m} vs {p}");
    }

    #[test]
    fn speed_of_homogeneous_walk() {
        let env = homogeneous(0.75);
        let xs: Vec<f64> =
            replicas(1000, 8, |_, s| position_at(&env, 10_000, s).unwrap().x as f64 / 10_000.0);
        let (m, se) = mean_se(&xs);
        assert!((m - 0.5).abs() <= 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn gap_points_at_the_last_ladder_crossed() {
        let env = q_env(0.4, 2);
        let (_, lad) = ladder_locations(&env, 400).unwrap();
        for s in 0..50 {
            let p = position_at(&env, 5000, s).unwrap();
            // X_t may sit inside the current block, right of nu_{N_t}.
            assert_eq!(lad.nu[p.n_t], p.x + p.gap, "{p:?}");
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let env = q_env(0.4, 4);
        let a = simulate_hits(&env, 0, &[10, 50, 200], 77, DEFAULT_CAP).unwrap();
        let b = simulate_hits(&env, 0, &[10, 50, 200], 77, DEFAULT_CAP).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].steps <= w[1].steps));
        assert_eq!(a[2], simulate_hit(&env, 0, 200, 77, DEFAULT_CAP).unwrap());
    }

    #[test]
    fn cap_is_reported() {
        let env = q_env(0.45, 1);
        let h = simulate_hit(&env, 0, 100_000, 1, 1000).unwrap();
        assert!(h.capped && h.steps == 1000);
        let hs = simulate_hits(&env, 0, &[100_000, 200_000], 1, 1000).unwrap();
        assert!(hs.iter().all(|h| h.capped && h.steps == 1000));
    }

    #[test]
    fn coupled_equal_when_radius_is_large() {
        let env = q_env(0.4, 5);
        let (env, lad) = ladder_locations(&env, 20).unwrap();
        let target = lad.nu[20];
        for s in 0..200 {
            // b_n exceeds every ladder index reached, so there is no reflection.
            let c = simulate_coupled(&env, &lad, u64::MAX, 0, target, s, DEFAULT_CAP).unwrap();
            assert_eq!(c.violations, 0);
            if c.divergence_step.is_none() {
                assert_eq!(c.t_plain, c.t_reflected);
            }
        }
    }

    #[test]
    fn coupled_domination() {
        let env = q_env(0.4, 6);
        let (env, lad) = ladder_locations(&env, 64).unwrap();
        let target = lad.nu[64];
        let samples = replicas(2000, 1, |_, s| simulate_coupled(&env, &lad, 8, 0, target, s, DEFAULT_CAP).unwrap());
        let mut diverged = 0;
        for c in &samples {
            assert_eq!(c.violations, 0);
            assert!(c.t_reflected <= c.t_plain);
            if c.t_reflected != c.t_plain {
                assert!(c.divergence_step.is_some());
                diverged += 1;
            }
        }
        assert!(diverged > 0);
        let mp = samples.iter().map(|c| c.t_plain as f64).sum::<f64>();
        let mr = samples.iter().map(|c| c.t_reflected as f64).sum::<f64>();
        assert!(mr <= mp);
    }

    #[test]
    fn fixed_window_exit_is_an_error() {
        let env = Environment::from_omegas(0, vec![0.5; 4]).unwrap();
        let r = (0..20).map(|s| simulate_hit(&env, 1, 3, s, DEFAULT_CAP)).find(|r| r.is_err());
        assert!(matches!(r, Some(Err(Error::Extension { .. }))));
    }

    #[test]
    fn hits_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hits.csv");
        let h = HitSample { target: 3, steps: 7, capped: false, min_site: -1, n_t_max: Some(2) };
        write_hits_csv(&[(0, h)], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "replica,target,steps,capped,min_site,n_t_max\n0,3,7,false,-1,2\n");
    }
}
