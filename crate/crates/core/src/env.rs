//! Realized environments: immutable windows of site probabilities with
//! deterministic, bit-stable outward extension.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::{rho_of, EnvLaw, LawSampler};
use crate::rng::{self, tags};

/// Sites are generated in chunks; each chunk owns one random stream.
pub const CHUNK: i64 = 1024;

/// Log-space margin for "product strictly below one". Lattice laws produce
/// exact ties that floating point turns into `±1e-16` noise; anything within
/// this margin of zero counts as a tie.
pub const TIE_EPS: f64 = 1e-9;

/// How the half-line left of the origin is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeftMode {
    /// i.i.d. sites under `P`.
    Plain,
    /// `P` conditioned on `Pi_{-k,-1} < 1` for every `k >= 1`.
    ConditionedQ,
    /// Site `at` has `omega = 1`; nothing to its left is ever used.
    Reflecting { at: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    /// The conditioned left half is accepted once `Pi_{-k,-1}` drops below this.
    pub left_depth_tol: f64,
    pub rejection_budget: u64,
    /// Initial number of sites materialized right of the origin.
    pub right_sites: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { left_depth_tol: 1e-12, rejection_budget: 1_000_000, right_sites: CHUNK as usize }
    }
}

#[derive(Debug)]
enum Origin {
    Law { law: EnvLaw, sampler: LawSampler, seed: u64 },
    Fixed { lo: i64, omega: Vec<f64> },
}

#[derive(Debug)]
struct Source {
    origin: Origin,
    left_mode: LeftMode,
    /// Accepted conditioned left half, sites -1, -2, ..., -K.
    q_prefix: Vec<f64>,
    q_restarts: u64,
    overrides: Vec<(i64, f64)>,
}

/// A realized window `lo..=hi` of an environment.
///
/// Cloning is cheap; extension returns a new snapshot whose overlap with the
/// old one is bit-identical.
#[derive(Debug, Clone)]
pub struct Environment {
    src: Arc<Source>,
    lo: i64,
    omega: Arc<Vec<f64>>,
    rho: Arc<Vec<f64>>,
}

impl Environment {
    /// Samples an environment from `law`.
    pub fn sample(law: &EnvLaw, seed: u64, left_mode: LeftMode, opts: SampleOptions) -> Result<Self> {
        let sampler = law.sampler()?;
        let (q_prefix, q_restarts) = match left_mode {
            LeftMode::ConditionedQ => sample_q_prefix(&sampler, seed, &opts)?,
            _ => (Vec::new(), 0),
        };
        let src = Arc::new(Source {
            origin: Origin::Law { law: law.clone(), sampler, seed },
            left_mode,
            q_prefix,
            q_restarts,
            overrides: Vec::new(),
        });
        let lo = match left_mode {
            LeftMode::Plain => -CHUNK,
            LeftMode::ConditionedQ => -(src.q_prefix.len() as i64),
            LeftMode::Reflecting { at } => at,
        };
        let hi = (opts.right_sites.max(1) as i64 - 1).max(lo);
        Self::materialize(src, lo, hi)
    }

    /// Same as [`Environment::sample`] but with some sites forced to given values.
    /// Overrides left of the origin are rejected under `ConditionedQ`.
    pub fn sample_with_overrides(
        law: &EnvLaw,
        seed: u64,
        left_mode: LeftMode,
        opts: SampleOptions,
        overrides: &[(i64, f64)],
    ) -> Result<Self> {
        for &(site, w) in overrides {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::InvalidArgument(format!("override omega {w} at {site}")));
            }
            if left_mode == LeftMode::ConditionedQ && site < 0 {
                return Err(Error::InvalidArgument(
                    "overrides left of the origin break the conditioning".into(),
                ));
            }
        }
        let base = Self::sample(law, seed, left_mode, opts)?;
        let mut ov = overrides.to_vec();
        ov.sort_by_key(|&(s, _)| s);
        let src = Arc::new(Source {
            origin: match &base.src.origin {
                Origin::Law { law, sampler, seed } => {
                    Origin::Law { law: law.clone(), sampler: sampler.clone(), seed: *seed }
                }
                Origin::Fixed { .. } => unreachable!(),
            },
            left_mode,
            q_prefix: base.src.q_prefix.clone(),
            q_restarts: base.src.q_restarts,
            overrides: ov,
        });
        let hi = overrides.iter().map(|&(s, _)| s).max().unwrap_or(base.hi()).max(base.hi());
        let lo = overrides.iter().map(|&(s, _)| s).min().unwrap_or(base.lo).min(base.lo);
        let lo = match left_mode {
            LeftMode::Reflecting { at } => at,
            _ => lo,
        };
        Self::materialize(src, lo, hi)
    }

    /// A fixed, non-extendable window starting at site `lo`.
    pub fn from_omegas(lo: i64, omega: Vec<f64>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::InvalidArgument("empty environment".into()));
        }
        if let Some(w) = omega.iter().find(|&&w| !(w > 0.0 && w <= 1.0)) {
            return Err(Error::InvalidArgument(format!("omega {w} not in (0,1]")));
        }
        let src = Arc::new(Source {
            origin: Origin::Fixed { lo, omega: omega.clone() },
            left_mode: LeftMode::Plain,
            q_prefix: Vec::new(),
            q_restarts: 0,
            overrides: Vec::new(),
        });
        let rho = omega.iter().map(|&w| rho_of(w)).collect();
        Ok(Self { src, lo, omega: Arc::new(omega), rho: Arc::new(rho) })
    }

    /// Fixed window given by odds ratios; `rho = 0` marks a reflecting site.
    /// The odds ratios are kept exactly as given.
    pub fn from_rhos(lo: i64, rhos: &[f64]) -> Result<Self> {
        if let Some(r) = rhos.iter().find(|&&r| !(r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument(format!("rho {r} not in [0, inf)")));
        }
        let mut env = Self::from_omegas(lo, rhos.iter().map(|&r| 1.0 / (1.0 + r)).collect())?;
        env.rho = Arc::new(rhos.to_vec());
        Ok(env)
    }

    fn materialize(src: Arc<Source>, lo: i64, hi: i64) -> Result<Self> {
        let omega = generate(&src, lo, hi)?;
        let rho = omega.iter().map(|&w| rho_of(w)).collect();
        Ok(Self { src, lo, omega: Arc::new(omega), rho: Arc::new(rho) })
    }

    #[inline]
    pub fn lo(&self) -> i64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> i64 {
        self.lo + self.omega.len() as i64 - 1
    }

    #[inline]
    pub fn contains(&self, site: i64) -> bool {
        site >= self.lo && site <= self.hi()
    }

    pub fn left_mode(&self) -> LeftMode {
        self.src.left_mode
    }

    pub fn law(&self) -> Option<&EnvLaw> {
        match &self.src.origin {
            Origin::Law { law, .. } => Some(law),
            Origin::Fixed { .. } => None,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match &self.src.origin {
            Origin::Law { seed, .. } => Some(*seed),
            Origin::Fixed { .. } => None,
        }
    }

    /// Number of rejected left halves before acceptance (conditioned mode).
    pub fn q_restarts(&self) -> u64 {
        self.src.q_restarts
    }

    /// Depth of the accepted conditioned left half.
    pub fn q_depth(&self) -> usize {
        self.src.q_prefix.len()
    }

    pub fn omega(&self, site: i64) -> Result<f64> {
        self.index(site).map(|i| self.omega[i])
    }

    pub fn rho(&self, site: i64) -> Result<f64> {
        self.index(site).map(|i| self.rho[i])
    }

    #[inline]
    fn index(&self, site: i64) -> Result<usize> {
        if self.contains(site) {
            Ok((site - self.lo) as usize)
        } else {
            Err(Error::Window { site, lo: self.lo, hi: self.hi() })
        }
    }

    /// Unchecked `rho` for hot loops; caller guarantees `contains(site)`.
    #[inline]
    pub(crate) fn rho_raw(&self, site: i64) -> f64 {
        self.rho[(site - self.lo) as usize]
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omega
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rho
    }

    pub fn can_extend_left(&self) -> bool {
        matches!(self.src.origin, Origin::Law { .. })
            && !matches!(self.src.left_mode, LeftMode::Reflecting { .. })
    }

    pub fn can_extend_right(&self) -> bool {
        matches!(self.src.origin, Origin::Law { .. })
    }

    /// A snapshot covering at least `lo..=hi` (and at least the current window).
    pub fn extended(&self, lo: i64, hi: i64) -> Result<Self> {
        let lo = lo.min(self.lo);
        let hi = hi.max(self.hi());
        if lo == self.lo && hi == self.hi() {
            return Ok(self.clone());
        }
        if (lo < self.lo && !self.can_extend_left()) || (hi > self.hi() && !self.can_extend_right()) {
            return Err(Error::Extension {
                lo,
                hi,
                reason: format!("window [{}, {}] is not extendable that way", self.lo, self.hi()),
            });
        }
        Self::materialize(self.src.clone(), lo, hi)
    }

    /// Extends leftwards by at least `extra` sites (rounded up to a chunk).
    pub fn grow_left(&self, extra: i64) -> Result<Self> {
        let extra = round_chunk(extra.max(self.omega.len() as i64 / 2));
        self.extended(self.lo - extra, self.hi())
    }

    /// Extends rightwards by at least `extra` sites (rounded up to a chunk).
    pub fn grow_right(&self, extra: i64) -> Result<Self> {
        let extra = round_chunk(extra.max(self.omega.len() as i64 / 2));
        self.extended(self.lo, self.hi() + extra)
    }

    /// Dumps `site,omega` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "site,omega")?;
        for (k, w) in self.omega.iter().enumerate() {
            writeln!(out, "{},{}", self.lo + k as i64, crate::report::fmt_f64(*w))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn round_chunk(n: i64) -> i64 {
    ((n.max(1) + CHUNK - 1) / CHUNK) * CHUNK
}

fn sample_q_prefix(sampler: &LawSampler, seed: u64, opts: &SampleOptions) -> Result<(Vec<f64>, u64)> {
    let stop = opts.left_depth_tol.ln();
    for attempt in 0..opts.rejection_budget {
        let mut r = rng::stream(seed, tags::Q_LEFT ^ attempt);
        let mut log_pi = 0.0;
        let mut sites = Vec::new();
        loop {
            let w = sampler.draw(&mut r);
            log_pi += rho_of(w).ln();
            if log_pi >= -TIE_EPS {
                break;
            }
            sites.push(w);
            if log_pi < stop {
                return Ok((sites, attempt));
            }
        }
    }
    Err(Error::RejectionBudget(opts.rejection_budget))
}

/// Generates `omega` for every site of `lo..=hi` from the source.
fn generate(src: &Source, lo: i64, hi: i64) -> Result<Vec<f64>> {
    let (law_sampler, seed) = match &src.origin {
        Origin::Fixed { lo: flo, omega } => {
            let fhi = flo + omega.len() as i64 - 1;
            if lo < *flo || hi > fhi {
                return Err(Error::Extension { lo, hi, reason: "fixed environment".into() });
            }
            return Ok(omega[(lo - flo) as usize..=(hi - flo) as usize].to_vec());
        }
        Origin::Law { sampler, seed, .. } => (sampler, *seed),
    };
    if let LeftMode::Reflecting { at } = src.left_mode {
        if lo < at {
            return Err(Error::Extension { lo, hi, reason: format!("reflecting wall at {at}") });
        }
    }
    let mut out = vec![0.0; (hi - lo + 1) as usize];
    // Right half.
    if hi >= 0 {
        let first = lo.max(0);
        let c0 = first / CHUNK;
        let c1 = hi / CHUNK;
        for c in c0..=c1 {
            let mut r = rng::stream(seed, tags::RIGHT + c as u64);
            for t in 0..CHUNK {
                let w = law_sampler.draw(&mut r);
                let site = c * CHUNK + t;
                if site >= first && site <= hi {
                    out[(site - lo) as usize] = w;
                }
            }
        }
    }
    // Left half.
    if lo < 0 {
        let deepest = (-1 - lo) as usize; // depth index of site `lo`
        let shallow = if hi < 0 { (-1 - hi) as usize } else { 0 };
        match src.left_mode {
            LeftMode::Plain | LeftMode::Reflecting { .. } => {
                let c1 = deepest as i64 / CHUNK;
                let c0 = shallow as i64 / CHUNK;
                for c in c0..=c1 {
                    let mut r = rng::stream(seed, tags::LEFT + c as u64);
                    for t in 0..CHUNK {
                        let w = law_sampler.draw(&mut r);
                        let depth = (c * CHUNK + t) as usize;
                        if depth >= shallow && depth <= deepest {
                            let site = -1 - depth as i64;
                            out[(site - lo) as usize] = w;
                        }
                    }
                }
            }
            LeftMode::ConditionedQ => {
                let left = q_left_sites(src, law_sampler, seed, deepest + 1)?;
                for depth in shallow..=deepest {
                    let site = -1 - depth as i64;
                    out[(site - lo) as usize] = left[depth];
                }
            }
        }
    }
    if let LeftMode::Reflecting { at } = src.left_mode {
        out[(at - lo) as usize] = 1.0;
    }
    for &(site, w) in &src.overrides {
        if site >= lo && site <= hi {
            out[(site - lo) as usize] = w;
        }
    }
    Ok(out)
}

/// Conditioned left half out to `count` sites: the accepted prefix, then
/// i.i.d. draws continued chunk by chunk, redrawing any site that would
/// push `Pi_{x,-1}` back up to one.
fn q_left_sites(src: &Source, sampler: &LawSampler, seed: u64, count: usize) -> Result<Vec<f64>> {
    let mut sites: Vec<f64> = src.q_prefix.iter().copied().take(count).collect();
    if sites.len() == count {
        return Ok(sites);
    }
    let mut log_pi: f64 = src.q_prefix.iter().map(|&w| rho_of(w).ln()).sum();
    let mut chunk = 0u64;
    while sites.len() < count {
        let mut r = rng::stream(seed, tags::Q_EXT + chunk);
        for _ in 0..CHUNK {
            let mut redraws = 0;
            let w = loop {
                let w = sampler.draw(&mut r);
                if log_pi + rho_of(w).ln() < -TIE_EPS {
                    break w;
                }
                redraws += 1;
                if redraws > 10_000 {
                    return Err(Error::RejectionBudget(redraws));
                }
            };
            log_pi += rho_of(w).ln();
            sites.push(w);
        }
        chunk += 1;
    }
    sites.truncate(count);
    Ok(sites)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doubling(q: f64) -> EnvLaw {
        EnvLaw::doubling(q).unwrap()
    }

    #[test]
    fn window_contains_origin_and_is_indexed() {
        let env = Environment::sample(&doubling(0.4), 1, LeftMode::Plain, SampleOptions::default()).unwrap();
        assert!(env.lo() <= 0 && env.hi() >= 0);
        assert!(env.rho(env.hi() + 1).is_err());
        assert!(env.omega(env.lo() - 1).is_err());
    }

    #[test]
    fn extension_overlap_is_bit_identical() {
        for mode in [LeftMode::Plain, LeftMode::ConditionedQ, LeftMode::Reflecting { at: -5 }] {
            let env = Environment::sample(&doubling(0.4), 11, mode, SampleOptions::default()).unwrap();
            let lo = if env.can_extend_left() { env.lo() - 3000 } else { env.lo() };
            let big = env.extended(lo, env.hi() + 5000).unwrap();
            for site in env.lo()..=env.hi() {
                assert_eq!(env.omega(site).unwrap().to_bits(), big.omega(site).unwrap().to_bits());
            }
            // Regenerating the same window from scratch agrees as well.
            let again = Environment::sample(&doubling(0.4), 11, mode, SampleOptions::default()).unwrap();
            assert_eq!(again.omegas(), env.omegas());
        }
    }

    #[test]
    fn reflecting_site_is_one_and_wall_is_hard() {
        let env = Environment::sample(&doubling(0.4), 2, LeftMode::Reflecting { at: 0 }, SampleOptions::default())
            .unwrap();
        assert_eq!(env.lo(), 0);
        assert_eq!(env.omega(0).unwrap(), 1.0);
        assert_eq!(env.rho(0).unwrap(), 0.0);
        assert!(env.extended(-1, env.hi()).is_err());
    }

    #[test]
    fn conditioned_prefix_products_stay_below_one() {
        let law = doubling(0.4);
        for seed in 0..200 {
            let env = Environment::sample(&law, seed, LeftMode::ConditionedQ, SampleOptions::default()).unwrap();
            let env = env.extended(env.lo() - 2000, env.hi()).unwrap();
            let mut log_pi = 0.0;
            for site in (env.lo()..0).rev() {
                log_pi += env.rho(site).unwrap().ln();
                assert!(log_pi < 0.0, "seed {seed} site {site}");
            }
        }
    }

    #[test]
    fn fixed_environment_does_not_extend() {
        let env = Environment::from_rhos(0, &[2.0, 0.5]).unwrap();
        assert_eq!(env.rho(0).unwrap(), 2.0);
        assert!((env.rho(1).unwrap() - 0.5).abs() < 1e-15);
        assert!(env.extended(-1, 1).is_err());
        assert!(Environment::from_omegas(0, vec![0.0]).is_err());
    }

    #[test]
    fn overrides_are_applied_and_kept_on_extension() {
        let law = doubling(0.4);
        let env = Environment::sample_with_overrides(
            &law,
            5,
            LeftMode::ConditionedQ,
            SampleOptions::default(),
            &[(3, 0.9), (5000, 0.1)],
        )
        .unwrap();
        assert_eq!(env.omega(3).unwrap(), 0.9);
        assert_eq!(env.omega(5000).unwrap(), 0.1);
        let big = env.grow_right(10_000).unwrap();
        assert_eq!(big.omega(5000).unwrap(), 0.1);
        assert!(Environment::sample_with_overrides(
            &law,
            5,
            LeftMode::ConditionedQ,
            SampleOptions::default(),
            &[(-3, 0.9)]
        )
        .is_err());
    }

    #[test]
    fn csv_dump() {
        let env = Environment::from_omegas(-1, vec![0.5, 0.25]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("env.csv");
        env.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text, "site,omega\n-1,5.0000000000000000e-1\n0,2.5000000000000000e-1\n");
    }
}
