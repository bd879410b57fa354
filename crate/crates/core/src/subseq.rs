//! Subsequence schedules and per-environment event detectors: localization
//! blocks, flat windows and Gaussian windows.

use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::ladder::{reflection_radius, LadderIndex};
use crate::quenched::{block_crossing_stats_radius, CrossingStats};
use crate::report::{emit_csv, Cell};

/// Largest schedule value accepted for simulation.
pub const MAX_FEASIBLE_N: u64 = 10_000_000;

/// Cap sequence `c_k` for the window end `gamma = alpha + c_k d_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CkPolicy {
    Constant(u64),
}

impl Default for CkPolicy {
    fn default() -> Self {
        CkPolicy::Constant(2)
    }
}

impl CkPolicy {
    fn at(&self, _k: usize) -> u64 {
        match *self {
            CkPolicy::Constant(c) => c.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanRow {
    pub k: usize,
    pub n: u64,
    /// `n_k - n_{k-1}`.
    pub d: u64,
    /// `b_{d_k}`.
    pub b_d: usize,
    pub a: u64,
    pub delta: f64,
    pub c_k: u64,
}

/// Blocks `(alpha, beta]` form the window, `(beta, gamma]` its tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WindowTriple {
    pub k: usize,
    pub alpha: u64,
    pub beta: u64,
    pub gamma: u64,
}

/// `n_k = ceil(c^(r^k))` with its derived arrays.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubseqPlan {
    pub c: f64,
    pub r: f64,
    pub n0: u64,
    /// Rows for `k = 1..=k_max`.
    pub rows: Vec<PlanRow>,
}

/// `ceil(c^(r^k))`, exact in integers when `c` and `r` are integers.
/// `None` when it does not fit in 128 bits.
pub fn schedule_value(c: f64, r: f64, k: usize) -> Option<u128> {
    if c.fract() == 0.0 && r.fract() == 0.0 && c >= 1.0 && r >= 1.0 {
        let exp = (r as u128).checked_pow(u32::try_from(k).ok()?)?;
        let exp = u32::try_from(exp).ok()?;
        return (c as u128).checked_pow(exp);
    }
    let v = (r.powi(k as i32) * c.ln()).exp().ceil();
    if v.is_finite() && v < 2f64.powi(127) {
        Some(v as u128)
    } else {
        None
    }
}

/// `a_k = floor(ln ln k) v 1`.
pub fn a_of(k: usize) -> u64 {
    let ll = (k as f64).ln().ln();
    if ll.is_finite() && ll >= 1.0 {
        ll.floor() as u64
    } else {
        1
    }
}

pub fn build_plan(c: f64, r: f64, k_max: usize, ck: CkPolicy) -> Result<SubseqPlan> {
    if !(c >= 2.0 || (c > 1.0 && r >= 2.0)) || !(r > 1.0) {
        return Err(Error::InvalidArgument(format!("schedule needs c >= 2 or (c > 1, r >= 2), r > 1; got c={c}, r={r}")));
    }
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be >= 1".into()));
    }
    let feasible = |k: usize| schedule_value(c, r, k).filter(|&v| v <= MAX_FEASIBLE_N as u128);
    let n0 = feasible(0).ok_or(Error::InfeasibleSchedule { largest_feasible: 0 })? as u64;
    let mut rows = Vec::with_capacity(k_max);
    let mut prev = n0;
    for k in 1..=k_max {
        let n = match feasible(k) {
            Some(v) => v as u64,
            None => return Err(Error::InfeasibleSchedule { largest_feasible: k - 1 }),
        };
        let d = n - prev;
        let a = a_of(k);
        rows.push(PlanRow { k, n, d, b_d: reflection_radius(d), a, delta: 1.0 / a as f64, c_k: ck.at(k) });
        prev = n;
    }
    Ok(SubseqPlan { c, r, n0, rows })
}

impl SubseqPlan {
    pub fn k_max(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, k: usize) -> Result<&PlanRow> {
        self.rows
            .get(k.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidArgument(format!("plan has no row k = {k}")))
    }

    pub fn n(&self, k: usize) -> u64 {
        if k == 0 { self.n0 } else { self.rows[k - 1].n }
    }

    /// `alpha = n_{k-1}`, `beta = alpha + floor(delta_k d_k)`, `gamma = alpha + c_k d_k`.
    pub fn triple(&self, k: usize) -> Result<WindowTriple> {
        let row = self.row(k)?;
        let alpha = self.n(k - 1);
        let beta = alpha + (row.d / row.a).max(1);
        let gamma = alpha + row.c_k * row.d;
        Ok(WindowTriple { k, alpha, beta, gamma })
    }

    /// Rows as `k,n,d,b_d,a,delta,c_k`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let recs: Vec<Vec<Cell>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    Cell::from(r.k as i64),
                    Cell::from(r.n as i64),
                    Cell::from(r.d as i64),
                    Cell::from(r.b_d as i64),
                    Cell::from(r.a as i64),
                    Cell::from(r.delta),
                    Cell::from(r.c_k as i64),
                ]
            })
            .collect();
        emit_csv(&["k", "n", "d", "b_d", "a", "delta", "c_k"], &recs, path)
    }
}

/// Block-level pieces of the reflected crossing means.
///
/// With the wall at `nu_{i-1-b}`, `b >= 1`, the mean crossing time of block
/// `i` splits as `mu_{i,0} + 2 P_i (1 + D_{i-1}(b))`, where `P_i` sums
/// `Pi_{nu_{i-1}, x}` over the block and `D_l(c)` is `W_{nu_l - 1}` with the
/// wall at `nu_{l-c}`, obeying `D_l(c) = w0_l + g_l (1 + D_{l-1}(c-1))`.
struct BlockParts {
    /// Indexed by block number; entry 0 unused.
    mu0: Vec<f64>,
    p: Vec<f64>,
    w0: Vec<f64>,
    g: Vec<f64>,
}

impl BlockParts {
    fn new(env: &Environment, ladder: &LadderIndex, blocks: usize) -> Self {
        let mut bp = BlockParts {
            mu0: vec![0.0; blocks + 1],
            p: vec![0.0; blocks + 1],
            w0: vec![0.0; blocks + 1],
            g: vec![0.0; blocks + 1],
        };
        for i in 1..=blocks {
            let (a, b) = (ladder.nu[i - 1], ladder.nu[i]);
            // W with the wall at a: W_a = 0.
            let (mut w, mut mu, mut p, mut pi) = (0.0f64, 1.0f64, 0.0f64, 1.0f64);
            for x in a..b {
                let r = env.rho(x).unwrap_or(0.0);
                pi *= r;
                p += pi;
                if x > a {
                    w = r * (1.0 + w);
                    mu += 1.0 + 2.0 * w;
                }
            }
            bp.mu0[i] = mu;
            bp.p[i] = p;
            bp.w0[i] = w;
            bp.g[i] = pi;
        }
        bp
    }

    /// `D_l(c)`, truncated once further terms are below `1e-17` relative.
    fn d(&self, l: usize, c: usize) -> f64 {
        let mut sum = self.w0[l];
        let mut gp = self.g[l];
        for t in 1..c {
            let term = gp * (1.0 + self.w0[l - t]);
            sum += term;
            if term <= 1e-17 * sum {
                break;
            }
            gp *= self.g[l - t];
        }
        sum
    }

    fn mu(&self, i: usize, b: usize) -> f64 {
        if b == 0 {
            self.mu0[i]
        } else {
            self.mu0[i] + 2.0 * self.p[i] * (1.0 + self.d(i - 1, b))
        }
    }
}

/// `E_omega Tbar^{(j)}_{nu_{j-1}}`, the mean time to reach `nu_{j-1}` from 0
/// for the walk reflected with radius `b_j`, for every `j` in `1..=blocks`.
pub fn reflected_prefix_means(env: &Environment, ladder: &LadderIndex, blocks: usize) -> Result<Vec<f64>> {
    if blocks > ladder.blocks() || blocks == 0 {
        return Err(Error::InsufficientBlocks { needed: blocks, have: ladder.blocks() });
    }
    let parts = BlockParts::new(env, ladder, blocks);
    let mut out = vec![0.0; blocks + 1];
    let mut j = 1usize;
    while j <= blocks {
        let b = reflection_radius(j as u64);
        let mut j_end = j;
        while j_end < blocks && reflection_radius(j_end as u64 + 1) == b {
            j_end += 1;
        }
        // Blocks whose wall falls left of the origin go through the sweep.
        let edge = (b + 1).min(j_end.saturating_sub(1));
        let head = if edge >= 1 {
            block_crossing_stats_radius(env, ladder, Some(b), 1..edge + 1)?.mu
        } else {
            Vec::new()
        };
        let mut acc = 0.0;
        for i in 1..j_end {
            if i >= j {
                out[i] = acc;
            }
            acc += if i <= edge { head[i - 1] } else { parts.mu(i, b) };
        }
        out[j_end] = acc;
        j = j_end + 1;
    }
    out[0] = 0.0;
    Ok(out)
}

/// Localization event `M_j >= m^2 E_omega Tbar^{(j)}_{nu_{j-1}}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationHit {
    pub m: u64,
    pub j: usize,
    /// `M_j / m`.
    pub t_m: f64,
    /// `nu_{j-1}`.
    pub u_m: i64,
    pub block_max: f64,
    pub reflected_mean: f64,
    /// `M_j / (m^2 * reflected_mean)`, at least one.
    pub margin: f64,
}

/// Every `(m, j)` with `m` in `m_range` and `j <= ladder.blocks()` satisfying
/// the localization inequality. Ordered by `m`, then `j`.
pub fn detect_localization(
    env: &Environment,
    ladder: &LadderIndex,
    m_range: RangeInclusive<u64>,
) -> Result<Vec<LocalizationHit>> {
    let blocks = ladder.blocks();
    let e = reflected_prefix_means(env, ladder, blocks)?;
    let mut hits = Vec::new();
    for m in m_range {
        let m2 = (m * m) as f64;
        for j in 2..=blocks {
            let big = ladder.block_max(j);
            if big >= m2 * e[j] {
                hits.push(LocalizationHit {
                    m,
                    j,
                    t_m: big / m as f64,
                    u_m: ladder.nu[j - 1],
                    block_max: big,
                    reflected_mean: e[j],
                    margin: big / (m2 * e[j]),
                });
            }
        }
    }
    Ok(hits)
}

pub fn write_hits_csv(hits: &[LocalizationHit], path: &Path) -> Result<()> {
    let recs: Vec<Vec<Cell>> = hits
        .iter()
        .map(|h| {
            vec![
                Cell::from(h.m as i64),
                Cell::from(h.j as i64),
                Cell::from(h.t_m),
                Cell::from(h.u_m),
                Cell::from(h.block_max),
                Cell::from(h.reflected_mean),
                Cell::from(h.margin),
            ]
        })
        .collect();
    emit_csv(&["m", "j", "t_m", "u_m", "M", "reflected_mean", "margin"], &recs, path)
}

/// Outcome of the flat-window and tail predicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlatCheck {
    /// Blocks with `mu^2` in `[n^{2/s}, 2 n^{2/s})`.
    pub count: u64,
    pub max_mu2: f64,
    /// Count equals `2a` and no `mu^2 >= 2 n^{2/s}`.
    pub flat: bool,
    pub tail_sum: f64,
    /// `tail_sum <= 2 n^{1/s}`.
    pub tail_ok: bool,
}

/// Evaluates both predicates on explicit crossing means.
pub fn flat_predicates(window: &[f64], tail: &[f64], n: f64, a: u64, s: f64) -> FlatCheck {
    let lo = n.powf(2.0 / s);
    let hi = 2.0 * lo;
    let mut count = 0u64;
    let mut max_mu2 = 0.0f64;
    for &mu in window {
        let m2 = mu * mu;
        max_mu2 = max_mu2.max(m2);
        if m2 >= lo && m2 < hi {
            count += 1;
        }
    }
    let tail_sum: f64 = tail.iter().sum();
    FlatCheck {
        count,
        max_mu2,
        flat: count == 2 * a && max_mu2 < hi,
        tail_sum,
        tail_ok: tail_sum <= 2.0 * n.powf(1.0 / s),
    }
}

fn window_slices<'a>(stats: &'a CrossingStats, t: &WindowTriple) -> Result<(&'a [f64], &'a [f64])> {
    let first = stats.first_block;
    let last = first + stats.len() - 1;
    if first > t.alpha as usize + 1 || last < t.gamma as usize {
        return Err(Error::InsufficientBlocks { needed: t.gamma as usize, have: last });
    }
    let off = |blk: u64| blk as usize - first;
    Ok((&stats.mu[off(t.alpha + 1)..=off(t.beta)], &stats.mu[off(t.beta + 1)..off(t.gamma) + 1]))
}

/// Flat-window (`S`) and tail (`U`) predicates for plan row `k`. `stats`
/// must hold reflected means with radius `b_{d_k}` for blocks `alpha+1..=gamma`.
pub fn detect_flat_window(stats: &CrossingStats, plan: &SubseqPlan, k: usize, s: f64) -> Result<FlatCheck> {
    let row = plan.row(k)?;
    let t = plan.triple(k)?;
    let (window, tail) = window_slices(stats, &t)?;
    Ok(flat_predicates(window, tail, row.d as f64, row.a, s))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianWindow {
    pub m: u64,
    pub k: usize,
    pub alpha: u64,
    pub beta: u64,
    pub gamma: u64,
    /// Sum of `mu^2` over blocks `alpha+1..=beta`.
    pub v: f64,
    pub flat: bool,
    pub tail_ok: bool,
    pub count: u64,
}

/// Assembles the window of plan row `k` (labelled `m`).
pub fn gaussian_window(stats: &CrossingStats, plan: &SubseqPlan, k: usize, m: u64, s: f64) -> Result<GaussianWindow> {
    let t = plan.triple(k)?;
    let (window, _) = window_slices(stats, &t)?;
    let check = detect_flat_window(stats, plan, k, s)?;
    Ok(GaussianWindow {
        m,
        k,
        alpha: t.alpha,
        beta: t.beta,
        gamma: t.gamma,
        v: window.iter().map(|mu| mu * mu).sum(),
        flat: check.flat,
        tail_ok: check.tail_ok,
        count: check.count,
    })
}

/// Reflected crossing stats covering plan row `k`, with radius `b_{d_k}`.
pub fn window_stats(env: &Environment, ladder: &LadderIndex, plan: &SubseqPlan, k: usize) -> Result<CrossingStats> {
    let row = plan.row(k)?;
    let t = plan.triple(k)?;
    if ladder.blocks() < t.gamma as usize {
        return Err(Error::InsufficientBlocks { needed: t.gamma as usize, have: ladder.blocks() });
    }
    block_crossing_stats_radius(env, ladder, Some(row.b_d), t.alpha as usize + 1..t.gamma as usize + 1)
}

pub fn write_windows_csv(windows: &[GaussianWindow], path: &Path) -> Result<()> {
    let recs: Vec<Vec<Cell>> = windows
        .iter()
        .map(|w| {
            vec![
                Cell::from(w.m as i64),
                Cell::from(w.alpha as i64),
                Cell::from(w.beta as i64),
                Cell::from(w.gamma as i64),
                Cell::from(w.v),
                Cell::from(w.flat),
                Cell::from(w.tail_ok),
            ]
        })
        .collect();
    emit_csv(&["m", "alpha", "beta", "gamma", "v", "flat", "tail_ok"], &recs, path)
}
