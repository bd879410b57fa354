//! Quenched moments of hitting times in closed form, exit probabilities,
//! and an independent first-step linear-system oracle.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use crate::algebra::{w_tail, w_value, TRUNCATION_TOL};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::ladder::{reflection_radius, LadderIndex};

/// Where the walk is reflected while crossing a site.
#[derive(Debug, Clone, Copy)]
pub enum Reflection<'a> {
    /// No added reflection; infinite sums are truncated.
    None,
    /// A fixed site with `omega = 1`.
    Site(i64),
    /// While crossing block `k`, reflect at `nu_{k-1-radius}`.
    Ladder { ladder: &'a LadderIndex, radius: usize },
}

/// `E_omega^j T_{j+1} = 1 + 2 W_j`.
pub fn expected_crossing(env: &Environment, j: i64) -> Result<f64> {
    Ok(1.0 + 2.0 * w_value(env, j, TRUNCATION_TOL)?)
}

/// `W` and the weighted sum `S_j = sum_{i<j} Pi_{i+1,j} (W_i + W_i^2)` for
/// `wall..=end`, with the site `wall` treated as reflecting.
struct Sweep {
    wall: i64,
    w: Vec<f64>,
    s: Vec<f64>,
}

impl Sweep {
    fn run(env: &Environment, wall: i64, end: i64) -> Result<Self> {
        if end > wall {
            env.rho(wall + 1)?;
            env.rho(end)?;
        }
        let n = (end - wall + 1).max(1) as usize;
        let mut w = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        w.push(0.0);
        s.push(0.0);
        let (mut wp, mut sp) = (0.0f64, 0.0f64);
        for j in (wall + 1)..=end {
            let r = env.rho_raw(j);
            let sj = r * (sp + wp + wp * wp);
            let wj = r * (1.0 + wp);
            w.push(wj);
            s.push(sj);
            wp = wj;
            sp = sj;
        }
        Ok(Self { wall, w, s })
    }

    #[inline]
    fn mean(&self, j: i64) -> f64 {
        1.0 + 2.0 * self.w[(j - self.wall) as usize]
    }

    #[inline]
    fn var(&self, j: i64) -> f64 {
        let k = (j - self.wall) as usize;
        let w = self.w[k];
        4.0 * (w + w * w) + 8.0 * self.s[k]
    }
}

/// Covering snapshot and the virtual wall below which the left tail of
/// `W_{site-1}` is dropped.
fn truncation_wall(env: &Environment, site: i64) -> Result<(Environment, i64)> {
    if env.contains(site) && env.rho_raw(site) == 0.0 {
        return Ok((env.clone(), site));
    }
    let tail = w_tail(env, site - 1, TRUNCATION_TOL)?;
    Ok((tail.env, tail.last_site - 1))
}

/// `(W_j, S_j)` with `S_j = sum_{i<j} Pi_{i+1,j} (W_i + W_i^2)`, cut at `reflect_site`.
pub fn crossing_parts(env: &Environment, j: i64, reflect_site: Option<i64>) -> Result<(f64, f64)> {
    let (env, wall) = match reflect_site {
        Some(r) if r > j => {
            return Err(Error::InvalidArgument(format!("reflection {r} right of site {j}")));
        }
        Some(r) => (env.clone(), r),
        None => truncation_wall(env, j)?,
    };
    let sw = Sweep::run(&env, wall, j)?;
    let k = (j - wall) as usize;
    Ok((sw.w[k], sw.s[k]))
}

/// `Var_omega (T_{j+1} - T_j)`: `4 (W_j + W_j^2) + 8 sum_{i<j} Pi_{i+1,j} (W_i + W_i^2)`.
/// With a reflection site every `W_i` is cut at the reflection.
pub fn crossing_variance(env: &Environment, j: i64, reflect_site: Option<i64>) -> Result<f64> {
    let (w, s) = crossing_parts(env, j, reflect_site)?;
    Ok(4.0 * (w + w * w) + 8.0 * s)
}

/// `(E_omega^from T_to, Var_omega^from T_to)`.
pub fn hitting_moments(env: &Environment, from: i64, to: i64, refl: Reflection<'_>) -> Result<(f64, f64)> {
    if from > to {
        return Err(Error::InvalidArgument(format!("hitting {to} from {from} needs from <= to")));
    }
    if from == to {
        return Ok((0.0, 0.0));
    }
    let (mut mean, mut var) = (0.0, 0.0);
    match refl {
        Reflection::None => {
            let (env, wall) = truncation_wall(env, from)?;
            let sw = Sweep::run(&env, wall, to - 1)?;
            for j in from..to {
                mean += sw.mean(j);
                var += sw.var(j);
            }
        }
        Reflection::Site(r) => {
            if r > from {
                return Err(Error::InvalidArgument(format!("reflection {r} right of start {from}")));
            }
            let sw = Sweep::run(env, r, to - 1)?;
            for j in from..to {
                mean += sw.mean(j);
                var += sw.var(j);
            }
        }
        Reflection::Ladder { ladder, radius } => {
            let last = *ladder.nu.last().unwrap();
            if from < 0 || to > last {
                return Err(Error::InsufficientBlocks { needed: to.max(0) as usize, have: last as usize });
            }
            let first_block = ladder.block_of(from).unwrap();
            let (env, twall) = truncation_wall(env, ladder.nu[first_block - 1])?;
            let mut k = first_block;
            while k <= ladder.blocks() && ladder.nu[k - 1] < to {
                let wall = block_wall(ladder, k, Some(radius), twall);
                let lo = ladder.nu[k - 1].max(from);
                let hi = ladder.nu[k].min(to);
                let sw = Sweep::run(&env, wall, hi - 1)?;
                for j in lo..hi {
                    mean += sw.mean(j);
                    var += sw.var(j);
                }
                k += 1;
            }
        }
    }
    Ok((mean, var))
}

pub fn expected_hitting(env: &Environment, from: i64, to: i64, refl: Reflection<'_>) -> Result<f64> {
    hitting_moments(env, from, to, refl).map(|m| m.0)
}

pub fn hitting_variance(env: &Environment, from: i64, to: i64, refl: Reflection<'_>) -> Result<f64> {
    hitting_moments(env, from, to, refl).map(|m| m.1)
}

fn block_wall(ladder: &LadderIndex, k: usize, radius: Option<usize>, truncation: i64) -> i64 {
    match radius.and_then(|b| ladder.reflection_after(k - 1, b)) {
        Some(r) => r.max(truncation),
        None => truncation,
    }
}

/// Per-block quenched crossing moments.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingStats {
    /// `None` is the unreflected walk.
    pub reflect_radius: Option<usize>,
    /// Block number of `mu[0]`.
    pub first_block: usize,
    pub nu_start: Vec<i64>,
    pub nu_end: Vec<i64>,
    pub block_max: Vec<f64>,
    /// `E^{nu_{i-1}} T_{nu_i}` for the (reflected) walk.
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl CrossingStats {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `mu_i` by block number.
    pub fn mu_of(&self, block: usize) -> f64 {
        self.mu[block - self.first_block]
    }

    pub fn sigma2_of(&self, block: usize) -> f64 {
        self.sigma2[block - self.first_block]
    }

    /// Dumps `block,nu_start,nu_end,M,mu,sigma2` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use crate::report::fmt_f64;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "block,nu_start,nu_end,M,mu,sigma2")?;
        for k in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.first_block + k,
                self.nu_start[k],
                self.nu_end[k],
                fmt_f64(self.block_max[k]),
                fmt_f64(self.mu[k]),
                fmt_f64(self.sigma2[k])
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `mu_{i,n,omega}` and `sigma^2_{i,n,omega}` for every block of `ladder`, with
/// reflection radius `b_n`; `n = None` gives the unreflected moments.
pub fn block_crossing_stats(env: &Environment, ladder: &LadderIndex, n: Option<u64>) -> Result<CrossingStats> {
    block_crossing_stats_radius(env, ladder, n.map(reflection_radius), 1..ladder.blocks() + 1)
}

/// Same as [`block_crossing_stats`] with an explicit radius and block range.
pub fn block_crossing_stats_radius(
    env: &Environment,
    ladder: &LadderIndex,
    radius: Option<usize>,
    blocks: Range<usize>,
) -> Result<CrossingStats> {
    if blocks.start == 0 || blocks.end > ladder.blocks() + 1 || blocks.is_empty() {
        return Err(Error::InsufficientBlocks { needed: blocks.end.saturating_sub(1), have: ladder.blocks() });
    }
    let (env, twall) = truncation_wall(env, ladder.nu[blocks.start - 1])?;
    let n = blocks.len();
    let mut stats = CrossingStats {
        reflect_radius: radius,
        first_block: blocks.start,
        nu_start: Vec::with_capacity(n),
        nu_end: Vec::with_capacity(n),
        block_max: Vec::with_capacity(n),
        mu: Vec::with_capacity(n),
        sigma2: Vec::with_capacity(n),
    };
    let mut push = |k: usize, sw: &Sweep| {
        let (a, b) = (ladder.nu[k - 1], ladder.nu[k]);
        let (mut m, mut v) = (0.0, 0.0);
        for j in a..b {
            m += sw.mean(j);
            v += sw.var(j);
        }
        stats.nu_start.push(a);
        stats.nu_end.push(b);
        stats.block_max.push(ladder.block_max(k));
        stats.mu.push(m);
        stats.sigma2.push(v);
    };
    match radius {
        None => {
            let sw = Sweep::run(&env, twall, ladder.nu[blocks.end - 1] - 1)?;
            for k in blocks {
                push(k, &sw);
            }
        }
        Some(_) => {
            for k in blocks {
                let wall = block_wall(ladder, k, radius, twall);
                let sw = Sweep::run(&env, wall, ladder.nu[k] - 1)?;
                push(k, &sw);
            }
        }
    }
    Ok(stats)
}

/// `P_omega^i(T_b < T_a)` for `a <= i <= b`.
pub fn exit_probability(env: &Environment, a: i64, i: i64, b: i64) -> Result<f64> {
    if !(a <= i && i <= b) || a == b {
        return Err(Error::InvalidArgument(format!("exit probability needs a <= i <= b, a < b; got {a},{i},{b}")));
    }
    if i == a {
        return Ok(0.0);
    }
    if i == b {
        return Ok(1.0);
    }
    env.rho(a + 1)?;
    env.rho(b - 1)?;
    // Terms Pi_{a+1,j} for j = a..b-1 in log space, scaled by their maximum.
    let mut logs = Vec::with_capacity((b - a) as usize);
    let mut acc = 0.0f64;
    logs.push(0.0);
    for j in (a + 1)..b {
        acc += env.rho_raw(j).ln();
        logs.push(acc);
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let num: f64 = logs[..(i - a) as usize].iter().map(|l| (l - top).exp()).sum();
    let den: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    Ok(num / den)
}

/// `P_omega^u(T_u^+ < T_v) = 1 - (1 - omega_u) / R_{u,v-1}`.
pub fn return_probability(env: &Environment, u: i64, v: i64) -> Result<f64> {
    if v <= u {
        return Err(Error::InvalidArgument(format!("return probability needs u < v; got {u},{v}")));
    }
    let r = crate::algebra::r_value(env, u, v - 1)?;
    let w = env.omega(u)?;
    if r == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 - (1.0 - w) / r)
}

/// Cap on the oracle's chain length.
pub const ORACLE_MAX_SITES: i64 = 10_000;

/// Mean and variance of `T_to` from `from` by solving the first-step
/// equations of the chain on `wall..to` directly. The wall is `reflect_site`,
/// or the nearest site at or left of `from` with `omega = 1`.
pub fn hitting_oracle(env: &Environment, from: i64, to: i64, reflect_site: Option<i64>) -> Result<(f64, f64)> {
    if from > to {
        return Err(Error::InvalidArgument(format!("hitting {to} from {from} needs from <= to")));
    }
    if from == to {
        return Ok((0.0, 0.0));
    }
    env.rho(to - 1)?;
    let wall = match reflect_site {
        Some(r) => {
            env.omega(r)?;
            r
        }
        None => (env.lo()..=from)
            .rev()
            .find(|&x| env.omega(x).map(|w| w == 1.0).unwrap_or(false))
            .ok_or_else(|| Error::Singular(format!("no reflecting site at or left of {from}")))?,
    };
    if wall > from {
        return Err(Error::InvalidArgument(format!("reflection {wall} right of start {from}")));
    }
    let n = (to - wall) as usize;
    if n as i64 > ORACLE_MAX_SITES {
        return Err(Error::InvalidArgument(format!("oracle limited to {ORACLE_MAX_SITES} sites, got {n}")));
    }
    // Unknowns ordered from the absorbing end: index u <-> site to-1-u.
    let site = |u: usize| to - 1 - u as i64;
    let omega = |u: usize| if site(u) == wall { 1.0 } else { env.omega(site(u)).unwrap() };
    let mut sub = vec![0.0; n.saturating_sub(1)];
    let mut sup = vec![0.0; n.saturating_sub(1)];
    let diag = vec![1.0; n];
    for u in 0..n {
        let w = omega(u);
        if u + 1 < n {
            // A[u][u+1] couples to site-1, A[u+1][u] couples row u+1 to its right neighbour.
            sup[u] = -(1.0 - w);
            sub[u] = -omega(u + 1);
        }
    }
    let pr: Vec<f64> = (0..n).map(omega).collect();
    let ql: Vec<f64> = pr.iter().map(|w| 1.0 - w).collect();
    let h = solve_refined(&pr, &ql, &sub, &diag, &sup, &vec![1.0; n])?;
    let h_at = |x: i64| if x >= to { 0.0 } else { h[(to - 1 - x) as usize] };
    let rhs: Vec<f64> = (0..n)
        .map(|u| {
            let w = omega(u);
            let x = site(u);
            let d = h_at(x + 1) - if x > wall { h_at(x - 1) } else { 0.0 };
            w * (1.0 - w) * d * d
        })
        .collect();
    let v = solve_refined(&pr, &ql, &sub, &diag, &sup, &rhs)?;
    let u0 = (to - 1 - from) as usize;
    Ok((h[u0], v[u0]))
}

/// Gaussian elimination with partial pivoting on a tridiagonal system.
/// `sub[i] = A[i+1][i]`, `diag[i] = A[i][i]`, `sup[i] = A[i][i+1]`.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if rhs.len() != n || sub.len() + 1 != n.max(1) || sup.len() != sub.len() {
        return Err(Error::InvalidArgument("tridiagonal dimensions".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut d = diag.to_vec();
    let mut du = sup.to_vec();
    let mut dl = sub.to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut b = rhs.to_vec();
    for i in 0..n - 1 {
        if d[i].abs() >= dl[i].abs() {
            if d[i] == 0.0 {
                return Err(Error::Singular(format!("zero pivot at row {i}")));
            }
            let fact = dl[i] / d[i];
            d[i + 1] -= fact * du[i];
            b[i + 1] -= fact * b[i];
            dl[i] = 0.0;
        } else {
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            let tmp = d[i + 1];
            d[i + 1] = du[i] - fact * tmp;
            if i + 2 < n {
                du2[i] = du[i + 1];
                du[i + 1] = -fact * du[i + 1];
            }
            du[i] = tmp;
            let tb = b[i];
            b[i] = b[i + 1];
            b[i + 1] = tb - fact * b[i + 1];
        }
    }
    if d[n - 1] == 0.0 {
        return Err(Error::Singular(format!("zero pivot at row {}", n - 1)));
    }
    let mut x = vec![0.0; n];
    x[n - 1] = b[n - 1] / d[n - 1];
    if n > 1 {
        x[n - 2] = (b[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (b[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
    }
    Ok(x)
}

/// `b - A x` for the chain rows `(p + q) x_u - p x_{u-1} - q x_{u+1}`, with
/// products and sums carried in double-double. Using `p + q` rather than a
/// rounded unit diagonal keeps the rows free of spurious killing.
fn chain_residual(p: &[f64], q: &[f64], x: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|u| {
            let (mut hi, mut lo) = (b[u], 0.0f64);
            let mut add = |a: f64, y: f64| {
                let prod = a * y;
                let pe = a.mul_add(y, -prod);
                let s = hi + prod;
                let bb = s - hi;
                lo += (hi - (s - bb)) + (prod - bb) + pe;
                hi = s;
            };
            add(-p[u], x[u]);
            add(-q[u], x[u]);
            if u > 0 {
                add(p[u], x[u - 1]);
            }
            if u + 1 < n {
                add(q[u], x[u + 1]);
            }
            hi + lo
        })
        .collect()
}

/// Tridiagonal solve followed by iterative refinement on accurate residuals.
fn solve_refined(p: &[f64], q: &[f64], sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let mut x = solve_tridiagonal(sub, diag, sup, rhs)?;
    for _ in 0..6 {
        let r = chain_residual(p, q, &x, rhs);
        let dx = solve_tridiagonal(sub, diag, sup, &r)?;
        let mut change = 0.0f64;
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
            change = change.max((d / *xi).abs());
        }
        if change < 1e-17 {
            break;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{LeftMode, SampleOptions};
    use crate::ladder::ladder_locations;
    use crate::law::EnvLaw;
    use crate::rng;
    use rand::Rng;

    fn homogeneous(omega: f64) -> Environment {
        Environment::sample(&EnvLaw::constant(omega).unwrap(), 0, LeftMode::Plain, SampleOptions::default())
            .unwrap()
    }

    /// Random window with a reflecting left edge at 0.
    fn random_reflected(seed: u64, len: usize) -> Environment {
        let mut r = rng::stream(seed, 99);
        let mut w = vec![1.0];
        for _ in 1..len {
            w.push(r.random_range(0.2..0.9));
        }
        Environment::from_omegas(0, w).unwrap()
    }

    #[test]
    fn crossing_examples() {
        let refl = Environment::from_rhos(0, &[0.0, 2.0, 0.5]).unwrap();
        assert_eq!(expected_crossing(&refl, 0).unwrap(), 1.0);
        assert!((expected_crossing(&refl, 1).unwrap() - 5.0).abs() < 1e-14);
        let (m, _) = hitting_oracle(&refl, 1, 2, None).unwrap();
        assert!((m - 5.0).abs() < 1e-12);
        let p = 0.75;
        let hom = homogeneous(p);
        let e = expected_crossing(&hom, 3).unwrap();
        assert!((e - 2.0).abs() < 1e-11);
        assert!((e - 1.0 / (2.0 * p - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn hitting_examples() {
        let hom = homogeneous(0.75);
        assert!((expected_hitting(&hom, 0, 10, Reflection::None).unwrap() - 20.0).abs() < 1e-10);
        assert_eq!(expected_hitting(&hom, 4, 4, Reflection::None).unwrap(), 0.0);
        let refl = Environment::from_rhos(0, &[0.0, 0.5]).unwrap();
        assert!((expected_hitting(&refl, 0, 2, Reflection::None).unwrap() - 3.0).abs() < 1e-14);
        assert!((hitting_oracle(&refl, 0, 2, None).unwrap().0 - 3.0).abs() < 1e-12);
        assert!(expected_hitting(&hom, 5, 4, Reflection::None).is_err());
    }

    #[test]
    fn variance_examples() {
        let p = 0.75;
        let hom = homogeneous(p);
        let v = crossing_variance(&hom, 0, None).unwrap();
        let classical = 4.0 * p * (1.0 - p) / (2.0f64 * p - 1.0).powi(3);
        assert!((v - 6.0).abs() < 1e-10 && (v - classical).abs() < 1e-10);
        // 4(w + w^2)(1 + 2w) with w = 1/2
        assert!((4.0 * (0.5 + 0.25) * 2.0 - 6.0f64).abs() < 1e-15);
        assert_eq!(crossing_variance(&hom, 7, Some(7)).unwrap(), 0.0);
        assert!(crossing_variance(&hom, 7, Some(8)).is_err());
        let (m, var) = hitting_oracle(&hom, 0, 10, Some(-300)).unwrap();
        assert!((m - 20.0).abs() < 1e-9, "{m}");
        assert!((var - 60.0).abs() < 1e-8, "{var}");
        assert!((hitting_variance(&hom, 0, 10, Reflection::None).unwrap() - 60.0).abs() < 1e-9);
    }

    #[test]
    fn oracle_trivial_and_errors() {
        let env = random_reflected(1, 10);
        assert_eq!(hitting_oracle(&env, 3, 3, None).unwrap(), (0.0, 0.0));
        let open = Environment::from_rhos(0, &[2.0, 0.5, 0.5]).unwrap();
        assert!(matches!(hitting_oracle(&open, 1, 2, None), Err(Error::Singular(_))));
        // All-reflecting chain is deterministic.
        let det = Environment::from_omegas(0, vec![1.0; 6]).unwrap();
        assert_eq!(hitting_oracle(&det, 0, 5, None).unwrap(), (5.0, 0.0));
        assert_eq!(expected_hitting(&det, 0, 5, Reflection::Site(0)).unwrap(), 5.0);
    }

    #[test]
    fn closed_forms_match_oracle_on_random_windows() {
        for seed in 0..100u64 {
            let len = 2 + (seed as usize * 7) % 49;
            let env = random_reflected(seed, len);
            let to = len as i64 - 1;
            for from in [0, to / 2, to - 1] {
                let (cm, cv) = hitting_moments(&env, from, to, Reflection::None).unwrap();
                let (om, ov) = hitting_oracle(&env, from, to, None).unwrap();
                assert!((cm - om).abs() <= 1e-10 * (1.0 + om), "seed {seed}: {cm} vs {om}");
                assert!((cv - ov).abs() <= 1e-10 * (1.0 + ov), "seed {seed}: {cv} vs {ov}");
            }
        }
    }

    #[test]
    fn additivity() {
        let env = Environment::sample(&EnvLaw::doubling(0.4).unwrap(), 3, LeftMode::ConditionedQ, SampleOptions::default())
            .unwrap();
        // Truncated left tails start at different sites for different starting points.
        for (refl, tol) in [(Reflection::None, 1e-10), (Reflection::Site(-5), 1e-12)] {
            let ab = hitting_moments(&env, 0, 40, refl).unwrap();
            let bc = hitting_moments(&env, 40, 90, refl).unwrap();
            let ac = hitting_moments(&env, 0, 90, refl).unwrap();
            assert!((ab.0 + bc.0 - ac.0).abs() <= tol * ac.0);
            assert!((ab.1 + bc.1 - ac.1).abs() <= tol * ac.1, "{refl:?} {ab:?} {bc:?} {ac:?}");
        }
    }

    #[test]
    fn block_stats_homogeneous() {
        let hom = homogeneous(0.75);
        let (hom, lad) = ladder_locations(&hom, 60).unwrap();
        let full = block_crossing_stats(&hom, &lad, None).unwrap();
        assert!((full.mu_of(30) - 2.0).abs() < 1e-11);
        assert!((full.sigma2_of(30) - 6.0).abs() < 1e-10);
        let mut prev = (0.0, 0.0);
        for b in [1usize, 2, 4, 8, 16, 32] {
            let st = block_crossing_stats_radius(&hom, &lad, Some(b), 40..41).unwrap();
            assert!(st.mu[0] < 2.0 && st.sigma2[0] < 6.0);
            assert!(st.mu[0] >= prev.0 && st.sigma2[0] >= prev.1);
            prev = (st.mu[0], st.sigma2[0]);
        }
        assert!((prev.0 - 2.0).abs() < 1e-12 && (prev.1 - 6.0).abs() < 1e-9);
    }

    #[test]
    fn block_stats_monotone_lower_bound_and_additive() {
        let law = EnvLaw::doubling(0.4).unwrap();
        for seed in 0..100u64 {
            let env = Environment::sample(&law, seed, LeftMode::ConditionedQ, SampleOptions::default()).unwrap();
            let (env, lad) = ladder_locations(&env, 40).unwrap();
            let inf = block_crossing_stats(&env, &lad, None).unwrap();
            let mut prev: Option<CrossingStats> = None;
            for n in [3u64, 10, 50, 400] {
                let st = block_crossing_stats(&env, &lad, Some(n)).unwrap();
                for i in 0..st.len() {
                    assert!(st.mu[i] <= inf.mu[i] && st.sigma2[i] <= inf.sigma2[i]);
                    let k = i + 1;
                    assert!(st.mu[i] >= lad.block_max(k).max(lad.block_len(k) as f64) * (1.0 - 1e-12));
                    if let Some(p) = &prev {
                        assert!(p.mu[i] <= st.mu[i] && p.sigma2[i] <= st.sigma2[i]);
                    }
                }
                let radius = reflection_radius(n);
                let total = expected_hitting(&env, 0, lad.nu[40], Reflection::Ladder { ladder: &lad, radius })
                    .unwrap();
                let sum: f64 = st.mu.iter().sum();
                assert!((total - sum).abs() <= 1e-10 * total);
                prev = Some(st);
            }
            let total = expected_hitting(&env, 0, lad.nu[40], Reflection::None).unwrap();
            assert!((total - inf.mu.iter().sum::<f64>()).abs() <= 1e-10 * total);
        }
    }

    #[test]
    fn exit_examples() {
        let hom = Environment::from_omegas(0, vec![0.5; 12]).unwrap();
        for i in 2..=9 {
            assert!((exit_probability(&hom, 2, i, 9).unwrap() - (i - 2) as f64 / 7.0).abs() < 1e-14);
        }
        let env = Environment::from_rhos(0, &[1.0, 2.0, 0.5, 1.0]).unwrap();
        assert!((exit_probability(&env, 0, 1, 3).unwrap() - 0.25).abs() < 1e-15);
        let env = Environment::from_omegas(0, vec![0.5, 0.75, 0.5]).unwrap();
        assert!((exit_probability(&env, 0, 1, 2).unwrap() - 0.75).abs() < 1e-15);
        assert!(exit_probability(&env, 1, 0, 2).is_err());
    }

    #[test]
    fn return_probability_matches_exit_route() {
        let env = random_reflected(5, 30);
        for (u, v) in [(3, 10), (1, 29), (10, 11)] {
            let via_exit = 1.0 - env.omega(u).unwrap() * exit_probability(&env, u, u + 1, v).unwrap();
            assert!((return_probability(&env, u, v).unwrap() - via_exit).abs() < 1e-13);
        }
    }

    #[test]
    fn tridiagonal_solver_pivots() {
        // [[0,1,0],[1,0,1],[0,1,1]] x = [1,3,3] -> x = [1,1,2]
        let x = solve_tridiagonal(&[1.0, 1.0], &[0.0, 0.0, 1.0], &[1.0, 1.0], &[1.0, 3.0, 3.0]).unwrap();
        for (a, b) in x.iter().zip([1.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(solve_tridiagonal(&[0.0], &[0.0, 1.0], &[0.0], &[1.0, 1.0]).is_err());
    }
}
