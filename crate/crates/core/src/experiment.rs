//! Experiment campaigns: configuration, runners and reports.
//!
//! Every campaign is a pure function of its [`ExperimentConfig`]. Work is
//! split over replicas with derived seeds and merged in index order, so the
//! emitted tables do not depend on the number of threads.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{Environment, LeftMode, SampleOptions};
use crate::error::{Error, Result};
use crate::ladder::{ladder_locations, reflection_radius, LadderIndex};
use crate::law::EnvLaw;
use crate::quenched::{block_crossing_stats, hitting_moments, Reflection};
use crate::report::{emit_csv, emit_json, render_csv, Cell};
use crate::rng::mix;
use crate::stability::{solve_stability_index, Regime};
use crate::stats::{
    default_k, hill_estimate, ks_distance, linear_fit, mean_se, median, scaling_stability, std_normal_cdf,
    survival_loglog_fit,
};
use crate::subseq::{
    build_plan, detect_localization, gaussian_window, window_stats, CkPolicy, GaussianWindow, PlanRow, SubseqPlan,
};
use crate::walk::{position_at, replicas, simulate_hits, HitSample, DEFAULT_CAP};

/// Default step cap of the annealed campaign. Medians stay exact while fewer
/// than half of the paths are capped.
pub const ANNEALED_CAP: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Speed,
    TailEt,
    TailVar,
    StableEt,
    AnnealedT,
    Localize,
    GaussianT,
    NonlocalX,
    Validate,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Speed,
        Experiment::TailEt,
        Experiment::TailVar,
        Experiment::StableEt,
        Experiment::AnnealedT,
        Experiment::Localize,
        Experiment::GaussianT,
        Experiment::NonlocalX,
        Experiment::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Speed => "speed",
            Experiment::TailEt => "tail-et",
            Experiment::TailVar => "tail-var",
            Experiment::StableEt => "stable-et",
            Experiment::AnnealedT => "annealed-t",
            Experiment::Localize => "localize",
            Experiment::GaussianT => "gaussian-t",
            Experiment::NonlocalX => "nonlocal-x",
            Experiment::Validate => "validate",
        }
    }

    /// Campaigns too slow for routine runs at the default scale.
    pub fn slow(self) -> bool {
        matches!(self, Experiment::NonlocalX | Experiment::Validate)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Generalized schedule `n_k = ceil(c^(r^k))` and the rows scanned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub c: f64,
    pub r: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub c_k: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { c: 2.0, r: 2.0, k_min: 3, k_max: 4, c_k: 2 }
    }
}

/// Pass/fail thresholds. Defaults are the acceptance values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Standard errors allowed for Monte Carlo means.
    pub z: f64,
    pub hill_halfwidth: f64,
    pub loglog_gap: f64,
    pub var_halfwidth: f64,
    pub scaling_ks: f64,
    pub scaling_control_ks: f64,
    pub localization_fraction: f64,
    pub gaussian_ks: f64,
    pub slope_tol: f64,
    pub nonlocal_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            z: 3.0,
            hill_halfwidth: 0.085,
            loglog_gap: 0.06,
            var_halfwidth: 0.08,
            scaling_ks: 0.05,
            scaling_control_ks: 0.12,
            localization_fraction: 0.9,
            gaussian_ks: 0.08,
            slope_tol: 0.1,
            nonlocal_tol: 0.1,
        }
    }
}

/// Campaign configuration. Every field has a default; `None` sizes fall back
/// to per-experiment defaults recorded in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub law: Option<EnvLaw>,
    pub seed: u64,
    /// Environment replicas.
    pub replicas: Option<usize>,
    /// Quenched paths per environment.
    pub paths_per_env: Option<usize>,
    /// Ladder blocks per environment.
    pub blocks: Option<usize>,
    /// Target site for hitting-time experiments.
    pub target: Option<i64>,
    /// Annealed targets are `2^e` for `e` in this inclusive range.
    pub exponents: [u32; 2],
    pub schedule: ScheduleConfig,
    pub m_range: [u64; 2],
    pub m_eval: u64,
    /// Localization hits with `t_m` above this are listed but not simulated.
    pub time_budget: f64,
    /// Plan rows scanned for a Gaussian window before planting one.
    pub max_rows: usize,
    pub planted_d: u64,
    pub planted_a: u64,
    /// Step cap per path.
    pub cap: Option<u64>,
    /// Hill order statistics; default `sqrt(n)`.
    pub k_order: Option<usize>,
    /// Upper survival quantiles `(hi, lo)` for the log-log fit. The default
    /// band overlaps the order statistics used by the Hill fit.
    pub quantile_range: [f64; 2],
    pub thresholds: Thresholds,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            law: None,
            seed: 1,
            replicas: None,
            paths_per_env: None,
            blocks: None,
            target: None,
            exponents: [7, 13],
            schedule: ScheduleConfig::default(),
            m_range: [2, 10],
            m_eval: 5,
            time_budget: 2e6,
            max_rows: 50,
            planted_d: 400,
            planted_a: 8,
            cap: None,
            k_order: None,
            quantile_range: [0.01, 0.001],
            thresholds: Thresholds::default(),
            threads: None,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self { experiment: Some(experiment), ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn law_or(&self, default: impl FnOnce() -> Result<EnvLaw>) -> Result<EnvLaw> {
        match &self.law {
            Some(l) => {
                l.validate()?;
                Ok(l.clone())
            }
            None => default(),
        }
    }
}

/// One reported number.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    /// Which limit statement the number checks.
    pub tag: String,
    pub value: f64,
    pub ci: Option<[f64; 2]>,
    pub target: String,
    pub threshold: f64,
    pub pass: bool,
    /// Reported-only metrics never fail a run.
    pub asserted: bool,
}

impl Metric {
    fn check(name: impl Into<String>, tag: &str, value: f64, target: String, threshold: f64, pass: bool) -> Self {
        Metric { name: name.into(), tag: tag.into(), value, ci: None, target, threshold, pass, asserted: true }
    }

    fn info(name: impl Into<String>, tag: &str, value: f64, target: impl Into<String>) -> Self {
        Metric {
            name: name.into(),
            tag: tag.into(),
            value,
            ci: None,
            target: target.into(),
            threshold: f64::NAN,
            pass: true,
            asserted: false,
        }
    }

    fn with_ci(mut self, lo: f64, hi: f64) -> Self {
        self.ci = Some([lo, hi]);
        self
    }

    fn reported_only(mut self) -> Self {
        self.asserted = false;
        self
    }
}

/// A CSV table produced by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(file: impl Into<String>, header: &[&'static str]) -> Self {
        Table { file: file.into(), header: header.to_vec(), rows: Vec::new() }
    }

    pub fn render(&self) -> String {
        render_csv(&self.header, &self.rows)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: Experiment,
    pub config: ExperimentConfig,
    /// Resolved sizes and derived constants.
    pub params: BTreeMap<String, Value>,
    pub metrics: Vec<Metric>,
    pub notes: Vec<String>,
    pub total_paths: u64,
    pub capped_paths: u64,
    pub wall_clock_secs: f64,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl ExperimentReport {
    fn new(experiment: Experiment, config: &ExperimentConfig) -> Self {
        ExperimentReport {
            experiment,
            config: config.clone(),
            params: BTreeMap::new(),
            metrics: Vec::new(),
            notes: Vec::new(),
            total_paths: 0,
            capped_paths: 0,
            wall_clock_secs: 0.0,
            tables: Vec::new(),
        }
    }

    fn param(&mut self, key: &str, v: impl Serialize) {
        self.params.insert(key.into(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    /// True when every asserted metric passes.
    pub fn passed(&self) -> bool {
        self.metrics.iter().all(|m| m.pass || !m.asserted)
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn table(&self, file: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file == file)
    }

    pub fn metrics_table(&self) -> Table {
        let mut t = Table::new(
            "metrics.csv",
            &["name", "tag", "value", "ci_low", "ci_high", "target", "threshold", "asserted", "pass"],
        );
        for m in &self.metrics {
            let (lo, hi) = m.ci.map(|c| (c[0], c[1])).unwrap_or((f64::NAN, f64::NAN));
            t.rows.push(vec![
                m.name.clone().into(),
                m.tag.clone().into(),
                m.value.into(),
                lo.into(),
                hi.into(),
                m.target.clone().into(),
                m.threshold.into(),
                m.asserted.into(),
                m.pass.into(),
            ]);
        }
        t
    }

    /// Writes every table, `metrics.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in self.tables.iter().chain(std::iter::once(&self.metrics_table())) {
            emit_csv(&t.header, &t.rows, &dir.join(&t.file))?;
        }
        emit_json(self, &dir.join("report.json"))
    }

    /// Human-readable summary, one line per metric.
    pub fn summary(&self) -> String {
        let mut s = format!("{} ({:.1} s)\n", self.experiment, self.wall_clock_secs);
        for m in &self.metrics {
            let flag = match (m.asserted, m.pass) {
                (false, _) => "info",
                (true, true) => "PASS",
                (true, false) => "FAIL",
            };
            s.push_str(&format!("  [{flag}] {} = {:.6} (target {})\n", m.name, m.value, m.target));
        }
        for n in &self.notes {
            s.push_str(&format!("  note: {n}\n"));
        }
        s
    }
}

/// Runs the configured campaign and writes its outputs when `out_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let exp = cfg.experiment.ok_or_else(|| Error::Config("no experiment named".into()))?;
    let start = Instant::now();
    let mut report = match cfg.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| dispatch(exp, cfg))?
        }
        None => dispatch(exp, cfg)?,
    };
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    if let Some(dir) = &cfg.out_dir {
        report.write(dir)?;
    }
    Ok(report)
}

fn dispatch(exp: Experiment, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new(exp, cfg);
    match exp {
        Experiment::Speed => speed(cfg, &mut rep)?,
        Experiment::TailEt | Experiment::TailVar => tails(cfg, &mut rep)?,
        Experiment::StableEt => stable(cfg, &mut rep)?,
        Experiment::AnnealedT => annealed(cfg, &mut rep)?,
        Experiment::Localize => localize(cfg, &mut rep)?,
        Experiment::GaussianT => gaussian(cfg, &mut rep)?,
        Experiment::NonlocalX => nonlocal(cfg, &mut rep)?,
        Experiment::Validate => validate(&mut rep),
    }
    if exp.slow() {
        rep.param("slow", true);
    }
    Ok(rep)
}

fn stability_s(law: &EnvLaw) -> Result<f64> {
    let st = solve_stability_index(law, 1e-12)?;
    st.s.ok_or_else(|| Error::InvalidArgument(format!("law is not right-transient ({:?})", st.regime)))
}

fn hit_table(file: &str, samples: &[(usize, HitSample)]) -> Table {
    let mut t = Table::new(file, &["replica", "target", "steps", "capped", "min_site", "n_t_max"]);
    for (r, h) in samples {
        t.rows.push(vec![
            (*r).into(),
            h.target.into(),
            h.steps.into(),
            h.capped.into(),
            h.min_site.into(),
            h.n_t_max.map(Cell::from).unwrap_or(Cell::Text(String::new())),
        ]);
    }
    t
}

fn collect<T>(v: Vec<Result<T>>) -> Result<Vec<T>> {
    v.into_iter().collect()
}

fn speed(cfg: &ExperimentConfig, rep: &mut ExperimentReport) -> Result<()> {
    let law = cfg.law_or(|| EnvLaw::doubling(0.25))?;
    let st = solve_stability_index(&law, 1e-12)?;
    let n = cfg.replicas.unwrap_or(1000);
    let target = cfg.target.unwrap_or(10_000);
    let cap = cfg.cap.unwrap_or(DEFAULT_CAP);
    rep.param("replicas", n);
    rep.param("target", target);
    rep.param("cap", cap);
    rep.param("v_p", st.v_p);
    rep.param("regime", st.regime);
    if st.regime == Regime::TransientLeft || st.regime == Regime::Recurrent {
        return Err(Error::InvalidArgument(format!("speed experiment needs a right-transient law ({:?})", st.regime)));
    }
    let hits = collect(replicas(n, cfg.seed, |_, sd| {
        let env = Environment::sample(&law, sd, LeftMode::Plain, SampleOptions::default())?;
        crate::walk::simulate_hit(&env, 0, target, mix(sd, 1), cap)
    }))?;
    let times: Vec<f64> = hits.iter().filter(|h| !h.capped).map(|h| h.steps as f64).collect();
    rep.total_paths = n as u64;
    rep.capped_paths = (n - times.len()) as u64;
    if times.len() < 2 {
        return Err(Error::Degenerate("fewer than two uncapped paths".into()));
    }
    let (m, se_m) = mean_se(&times);
    let v_hat = target as f64 / m;
    let se = target as f64 * se_m / (m * m);
    let z = cfg.thresholds.z;
    rep.metrics.push(
        Metric::check(
            "speed",
            "speed-formula",
            v_hat,
            format!("{:.6} +- {z} SE", st.v_p),
            z * se,
            (v_hat - st.v_p).abs() <= z * se,
        )
        .with_ci(v_hat - z * se, v_hat + z * se),
    );
    rep.metrics.push(Metric::info("speed_se", "speed-formula", se, "reported"));
    let rows: Vec<(usize, HitSample)> = hits.into_iter().enumerate().collect();
    rep.tables.push(hit_table("speed.csv", &rows));
    Ok(())
}

fn tails(cfg: &ExperimentConfig, rep: &mut ExperimentReport) -> Result<()> {
    let law = cfg.law_or(|| EnvLaw::doubling(0.4))?;
    let s = stability_s(&law)?;
    let n_env = cfg.replicas.unwrap_or(8);
    let blocks = cfg.blocks.unwrap_or(25_000);
    rep.param("replicas", n_env);
    rep.param("blocks_per_env", blocks);
    rep.param("s", s);
    let per_env = collect(replicas(n_env, cfg.seed, |_, sd| {
        let env = Environment::sample(&law, sd, LeftMode::ConditionedQ, SampleOptions::default())?;
        let (env, ladder) = ladder_locations(&env, blocks)?;
        block_crossing_stats(&env, &ladder, None)
    }))?;
    let mut table = Table::new("tails.csv", &["replica", "block", "nu_start", "nu_end", "M", "mu", "sigma2"]);
    let (mut mu, mut var) = (Vec::new(), Vec::new());
    for (r, st) in per_env.iter().enumerate() {
        for i in 0..st.len() {
            table.rows.push(vec![
                r.into(),
                (st.first_block + i).into(),
                st.nu_start[i].into(),
                st.nu_end[i].into(),
                st.block_max[i].into(),
                st.mu[i].into(),
                st.sigma2[i].into(),
            ]);
        }
        mu.extend_from_slice(&st.mu);
        var.extend_from_slice(&st.sigma2);
    }
    let k = cfg.k_order.unwrap_or_else(|| default_k(mu.len()));
    rep.param("samples", mu.len());
    rep.param("k_order", k);
    let q = (cfg.quantile_range[0], cfg.quantile_range[1]);
    let th = &cfg.thresholds;
    let assert_mean = rep.experiment == Experiment::TailEt;

    let fit = hill_estimate(&mu, k, mix(cfg.seed, 1))?;
    let ll = survival_loglog_fit(&mu, q)?;
    let tag = "tail-of-expected-crossing";
    let mut ms = vec![
        Metric::check(
            "hill_s",
            tag,
            fit.s_hat,
            format!("{s:.6} +- {}", th.hill_halfwidth),
            th.hill_halfwidth,
            (fit.s_hat - s).abs() <= th.hill_halfwidth,
        )
        .with_ci(fit.ci_low, fit.ci_high),
        Metric::check(
            "loglog_gap",
            tag,
            (ll.slope + fit.s_hat).abs(),
            format!("<= {}", th.loglog_gap),
            th.loglog_gap,
            (ll.slope + fit.s_hat).abs() <= th.loglog_gap,
        ),
        Metric::info("loglog_slope", tag, ll.slope, format!("{:.6}", -s)),
        Metric::info("loglog_curvature", tag, ll.curvature, "reported"),
        Metric::info("k_inf_hat", tag, fit.k_inf_hat, "reported, not asserted"),
    ];
    if !assert_mean {
        ms = ms.into_iter().map(Metric::reported_only).collect();
    }
    rep.metrics.extend(ms);

    let fit_v = hill_estimate(&var, k, mix(cfg.seed, 2))?;
    let ll_v = survival_loglog_fit(&var, q)?;
    let tag = "tail-of-crossing-variance";
    let mut ms = vec![
        Metric::check(
            "hill_s_var",
            tag,
            fit_v.s_hat,
            format!("{:.6} +- {}", s / 2.0, th.var_halfwidth),
            th.var_halfwidth,
            (fit_v.s_hat - s / 2.0).abs() <= th.var_halfwidth,
        )
        .with_ci(fit_v.ci_low, fit_v.ci_high),
        Metric::info("loglog_slope_var", tag, ll_v.slope, format!("{:.6}", -s / 2.0)),
        Metric::info("k_inf_hat_var", tag, fit_v.k_inf_hat, "reported, not asserted"),
    ];
    if assert_mean {
        ms = ms.into_iter().map(Metric::reported_only).collect();
    }
    rep.metrics.extend(ms);
    rep.tables.push(table);
    Ok(())
}

fn stable(cfg: &ExperimentConfig, rep: &mut ExperimentReport) -> Result<()> {
    let law = cfg.law_or(|| EnvLaw::doubling(0.4))?;
    let s = stability_s(&law)?;
    let r = cfg.replicas.unwrap_or(2000);
    let n = cfg.blocks.unwrap_or(500);
    rep.param("replicas", r);
    rep.param("blocks", n);
    rep.param("s", s);
    let vals = collect(replicas(2 * r, cfg.seed, |i, sd| {
        let nb = if i < r { n } else { 2 * n };
        let env = Environment::sample(&law, sd, LeftMode::ConditionedQ, SampleOptions::default())?;
        let (env, ladder) = ladder_locations(&env, nb)?;
        let st = block_crossing_stats(&env, &ladder, None)?;
        Ok((nb, st.mu.iter().sum::<f64>()))
    }))?;
    let mut table = Table::new("stable-et.csv", &["replica", "blocks", "expected_time", "scaled"]);
    let mut a = Vec::with_capacity(r);
    let mut b = Vec::with_capacity(r);
    for (i, &(nb, e)) in vals.iter().enumerate() {
        let scaled = e / (n as f64).powf(1.0 / s);
        table.rows.push(vec![(i % r).into(), nb.into(), e.into(), scaled.into()]);
        if i < r { a.push(e) } else { b.push(e) }
    }
    let ks = scaling_stability(&a, &b, s)?;
    let control = scaling_stability(&a, &b, s / 2.0)?;
    let th = &cfg.thresholds;
    let tag = "stable-scaling";
    rep.metrics.push(Metric::check("scaling_ks", tag, ks, format!("<= {}", th.scaling_ks), th.scaling_ks, ks <= th.scaling_ks));
    rep.metrics.push(Metric::check(
        "scaling_ks_control",
        tag,
        control,
        format!(">= {} (exponent s/2)", th.scaling_control_ks),
        th.scaling_control_ks,
        control >= th.scaling_control_ks,
    ));
    rep.tables.push(table);
    Ok(())
}

fn annealed(cfg: &ExperimentConfig, rep: &mut ExperimentReport) -> Result<()> {
    let law = cfg.law_or(|| EnvLaw::doubling(0.4))?;
    let s = stability_s(&law)?;
    let r = cfg.replicas.unwrap_or(500);
    let cap = cfg.cap.unwrap_or(ANNEALED_CAP);
    let [e0, e1] = cfg.exponents;
    if e0 >= e1 || e1 > 40 {
        return Err(Error::Config(format!("bad exponent range {e0}..={e1}")));
    }
    let targets: Vec<i64> = (e0..=e1).map(|e| 1i64 << e).collect();
    rep.param("replicas", r);
    rep.param("targets", &targets);
    rep.param("cap", cap);
    rep.param("s", s);
    let paths = collect(replicas(r, cfg.seed, |_, sd| {
        let env = Environment::sample(&law, sd, LeftMode::Plain, SampleOptions::default())?;
        simulate_hits(&env, 0, &targets, mix(sd, 1), cap)
    }))?;
    rep.total_paths = r as u64;
    rep.capped_paths = paths.iter().filter(|p| p.last().is_some_and(|h| h.capped)).count() as u64;
    let mut pts = Vec::new();
    let tag = "annealed-scaling";
    for (ti, &t) in targets.iter().enumerate() {
        // Capped paths count as +inf, which a median tolerates below one half.
        let col: Vec<f64> = paths.iter().map(|p| if p[ti].capped { f64::INFINITY } else { p[ti].steps as f64 }).collect();
        let med = median(&col);
        rep.metrics.push(Metric::info(format!("median_T[{t}]"), tag, med, "reported"));
        pts.push(((t as f64).ln(), med.ln()));
    }
    let th = &cfg.thresholds;
    let finite = pts.iter().all(|p| p.1.is_finite());
    let slope = if finite { linear_fit(&pts).0 } else { f64::NAN };
    rep.metrics.push(Metric::check(
        "median_slope",
        tag,
        slope,
        format!("{:.6} +- {}", 1.0 / s, th.slope_tol),
        th.slope_tol,
        finite && (slope - 1.0 / s).abs() <= th.slope_tol,
    ));
    if !finite {
        rep.notes.push("more than half of the paths hit the cap for some target".into());
    }
    let rows: Vec<(usize, HitSample)> =
        paths.into_iter().enumerate().flat_map(|(i, p)| p.into_iter().map(move |h| (i, h))).collect();
    rep.tables.push(hit_table("annealed-t.csv", &rows));
    Ok(())
}

fn localize(cfg: &ExperimentConfig, rep: &mut ExperimentReport) -> Result<()> {
    let law = cfg.law_or(|| EnvLaw::doubling(0.45))?;
    let n_env = cfg.replicas.unwrap_or(20);
    let blocks = cfg.blocks.unwrap_or(100_000);
    let paths = cfg.paths_per_env.unwrap_or(1000);
    let [m0, m1] = cfg.m_range;
    if m0 == 0 || m0 > m1 {
        return Err(Error::Config(format!("bad m range {m0}..={m1}")));
    }
    rep.param("replicas", n_env);
    rep.param("blocks", blocks);
    rep.param("paths_per_hit", paths);
    rep.param("m_eval", cfg.m_eval);
    rep.param("time_budget", cfg.time_budget);
    let found = collect(replicas(n_env, cfg.seed, |_, sd| {
        let env = Environment::sample(&law, sd, LeftMode::Plain, SampleOptions::default())?;
        let (env, ladder) = ladder_locations(&env, blocks)?;
        let hits = detect_localization(&env, &ladder, m0..=m1)?;
        Ok((env, sd, hits))
    }))?;
    let mut hits_t = Table::new("localize-hits.csv", &["replica", "m", "j", "t_m", "u_m", "M", "reflected_mean", "margin"]);
    let mut eval_t =
        Table::new("localize.csv", &["replica", "j", "t_m", "u_m", "radius", "paths", "fraction", "simulated"]);
    let th = cfg.thresholds.localization_fraction;
    let tag = "localization";
    let (mut evaluated, mut skipped) = (0usize, 0usize);
    for (r, (env, sd, hits)) in found.iter().enumerate() {
        for h in hits {
            hits_t.rows.push(vec![
                r.into(),
                h.m.into(),
                h.j.into(),
                h.t_m.into(),
                h.u_m.into(),
                h.block_max.into(),
                h.reflected_mean.into(),
                h.margin.into(),
            ]);
            if h.m != cfg.m_eval {
                continue;
            }
            let radius = h.t_m.ln().powi(2);
            if h.t_m > cfg.time_budget {
                skipped += 1;
                eval_t.rows.push(vec![
                    r.into(),
                    h.j.into(),
                    h.t_m.into(),
                    h.u_m.into(),
                    radius.into(),
                    0usize.into(),
                    f64::NAN.into(),
                    false.into(),
                ]);
                continue;
            }
            let time = h.t_m.floor() as u64;
            let pos = collect(replicas(paths, mix(*sd, h.j as u64), |_, ps| position_at(env, time, ps)))?;
            let close = pos.iter().filter(|p| ((p.x - h.u_m).abs() as f64) <= radius).count();
            let frac = close as f64 / paths as f64;
            evaluated += 1;
            rep.total_paths += paths as u64;
            eval_t.rows.push(vec![
                r.into(),
                h.j.into(),
                h.t_m.into(),
                h.u_m.into(),
                radius.into(),
                paths.into(),
                frac.into(),
                true.into(),
            ]);
            rep.metrics.push(Metric::check(
                format!("fraction[replica={r},j={}]", h.j),
                tag,
                frac,
                format!(">= {th}"),
                th,
                frac >= th,
            ));
        }
    }
    rep.metrics.push(Metric::check(
        "evaluated_hits",
        tag,
        evaluated as f64,
        ">= 1".into(),
        1.0,
        evaluated >= 1,
    ));
    rep.metrics.push(Metric::info("skipped_hits", tag, skipped as f64, "over the time budget"));
    if skipped > 0 {
        rep.notes.push(format!(
            "{skipped} hit(s) with m = {} have t_m above the budget {:.3e} and were not simulated",
            cfg.m_eval, cfg.time_budget
        ));
    }
    rep.tables.push(hits_t);
    rep.tables.push(eval_t);
    Ok(())
}

/// A window of blocks `(alpha, beta]` with tail `(beta, gamma]` on which the
/// Gaussian experiments run.
pub struct WindowChoice {
    pub env: Environment,
    pub ladder: LadderIndex,
    pub plan: SubseqPlan,
    pub k: usize,
    pub window: GaussianWindow,
    /// Present when the window was planted.
    pub planted: Option<PlantedWindow>,
}

/// Odds ratio of the single-site blocks of a planted environment.
pub const PLANTED_BASE_RHO: f64 = 0.05;
/// Up-steps of each planted trap.
pub const PLANTED_TRAP_LEN: usize = 8;

/// A fixed environment with `2a` traps of comparable depth spread over a
/// window of `d / a` blocks and a tail of `2d - d/a` shallow blocks, tuned so
/// that both window predicates hold for plan row `d`.
#[derive(Debug, Clone)]
pub struct PlantedWindow {
    /// Odds ratios from site -1 (reflecting) on.
    pub rhos: Vec<f64>,
    pub lambda: f64,
    pub plan: SubseqPlan,
    pub trap_blocks: Vec<u64>,
}

impl PlantedWindow {
    /// The environment, padded with shallow sites up to `last_site`.
    pub fn environment(&self, last_site: i64) -> Result<Environment> {
        let mut rhos = self.rhos.clone();
        let have = rhos.len() as i64 - 2;
        if last_site > have {
            rhos.resize((last_site + 2) as usize, PLANTED_BASE_RHO);
        }
        Environment::from_rhos(-1, &rhos)
    }
}

fn planted_rhos(lambda: f64, blocks: u64, traps: &[u64]) -> Vec<f64> {
    let up = PLANTED_TRAP_LEN as f64 * lambda.ln();
    // Smallest number of down-steps taking the product strictly below one.
    let mut down = (up / -PLANTED_BASE_RHO.ln()).ceil() as usize;
    while up + down as f64 * PLANTED_BASE_RHO.ln() > -1e-6 {
        down += 1;
    }
    let mut rhos = vec![0.0];
    let mut next = traps.iter().peekable();
    for b in 1..=blocks {
        if next.peek() == Some(&&b) {
            next.next();
            rhos.extend(std::iter::repeat_n(lambda, PLANTED_TRAP_LEN));
            rhos.extend(std::iter::repeat_n(PLANTED_BASE_RHO, down));
        } else {
            rhos.push(PLANTED_BASE_RHO);
        }
    }
    rhos.extend(std::iter::repeat_n(PLANTED_BASE_RHO, 8));
    rhos
}

/// Builds a planted window for scale `d`, `a` and exponent `s`.
pub fn planted_window(s: f64, d: u64, a: u64, c_k: u64) -> Result<PlantedWindow> {
    let width = d / a.max(1);
    if a == 0 || width < 2 * a || c_k < 1 {
        return Err(Error::InvalidArgument(format!("planted window needs d >= 2 a^2, got d = {d}, a = {a}")));
    }
    let b_d = reflection_radius(d);
    let alpha = b_d as u64 + 2;
    let plan = SubseqPlan {
        c: f64::NAN,
        r: f64::NAN,
        n0: alpha,
        rows: vec![PlanRow { k: 1, n: alpha + d, d, b_d, a, delta: 1.0 / a as f64, c_k }],
    };
    let t = plan.triple(1)?;
    let traps: Vec<u64> = (0..2 * a).map(|i| t.alpha + 1 + (2 * i + 1) * width / (4 * a)).collect();
    let lo = (d as f64).powf(2.0 / s);
    let eval = |lambda: f64| -> Result<(f64, f64)> {
        let env = Environment::from_rhos(-1, &planted_rhos(lambda, t.gamma, &traps))?;
        let (env, ladder) = ladder_locations(&env, t.gamma as usize)?;
        let st = window_stats(&env, &ladder, &plan, 1)?;
        let m2: Vec<f64> = traps.iter().map(|&b| st.mu_of(b as usize).powi(2)).collect();
        let min = m2.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = m2.iter().cloned().fold(0.0, f64::max);
        Ok((min, max))
    };
    // Centre the trap spread geometrically in [lo, 2 lo).
    let goal = std::f64::consts::SQRT_2 * lo;
    let (mut l, mut h) = (0.0f64, 100f64.ln());
    for _ in 0..60 {
        let mid = 0.5 * (l + h);
        let (mn, mx) = eval(mid.exp())?;
        if (mn * mx).sqrt() < goal {
            l = mid;
        } else {
            h = mid;
        }
    }
    let lambda = (0.5 * (l + h)).exp();
    Ok(PlantedWindow { rhos: planted_rhos(lambda, t.gamma, &traps), lambda, plan, trap_blocks: traps })
}

fn choose_window(cfg: &ExperimentConfig, law: &EnvLaw, s: f64, rep: &mut ExperimentReport) -> Result<WindowChoice> {
    let sc = &cfg.schedule;
    if sc.k_min == 0 || sc.k_min > sc.k_max {
        return Err(Error::Config(format!("bad k range {}..={}", sc.k_min, sc.k_max)));
    }
    let plan = build_plan(sc.c, sc.r, sc.k_max, CkPolicy::Constant(sc.c_k))?;
    rep.param("schedule", &plan.rows);
    let ks = sc.k_max - sc.k_min + 1;
    let scanned = collect(replicas(cfg.max_rows, cfg.seed, |i, sd| {
        let k = sc.k_min + i % ks;
        let t = plan.triple(k)?;
        let env = Environment::sample(law, sd, LeftMode::ConditionedQ, SampleOptions::default())?;
        let (env, ladder) = ladder_locations(&env, t.gamma as usize)?;
        let st = window_stats(&env, &ladder, &plan, k)?;
        let w = gaussian_window(&st, &plan, k, i as u64, s)?;
        let keep = w.flat && w.tail_ok;
        Ok((w, keep.then_some((env, ladder))))
    }))?;
    let mut table = Table::new("windows.csv", &["m", "k", "alpha", "beta", "gamma", "v", "count", "flat", "tail_ok"]);
    for (w, _) in &scanned {
        table.rows.push(vec![
            w.m.into(),
            w.k.into(),
            w.alpha.into(),
            w.beta.into(),
            w.gamma.into(),
            w.v.into(),
            w.count.into(),
            w.flat.into(),
            w.tail_ok.into(),
        ]);
    }
    rep.tables.push(table);
    let hit = scanned.into_iter().find_map(|(w, e)| e.map(|(env, ladder)| (w, env, ladder)));
    if let Some((window, env, ladder)) = hit {
        rep.param("planted", false);
        let k = window.k;
        return Ok(WindowChoice { env, ladder, plan, k, window, planted: None });
    }
    rep.notes.push(format!(
        "window not found in {} plan rows; using a planted window (d = {}, a = {})",
        cfg.max_rows, cfg.planted_d, cfg.planted_a
    ));
    rep.param("planted", true);
    let pw = planted_window(s, cfg.planted_d, cfg.planted_a, sc.c_k)?;
    let env = pw.environment(0)?;
    let t = pw.plan.triple(1)?;
    let (env, ladder) = ladder_locations(&env, t.gamma as usize)?;
    let st = window_stats(&env, &ladder, &pw.plan, 1)?;
    let window = gaussian_window(&st, &pw.plan, 1, 0, s)?;
    if !(window.flat && window.tail_ok) {
        return Err(Error::Degenerate(format!("planted window fails its predicates: {window:?}")));
    }
    rep.param("planted_lambda", pw.lambda);
    rep.param("planted_traps", &pw.trap_blocks);
    Ok(WindowChoice { env, ladder, plan: pw.plan.clone(), k: 1, window, planted: Some(pw) })
}

fn gaussian(cfg: &ExperimentConfig, rep: &mut ExperimentReport) -> Result<()> {
    let law = cfg.law_or(|| EnvLaw::doubling(0.4))?;
    let s = stability_s(&law)?;
    let paths = cfg.paths_per_env.unwrap_or(2000);
    let cap = cfg.cap.unwrap_or(DEFAULT_CAP);
    rep.param("s", s);
    rep.param("paths", paths);
    rep.param("cap", cap);
    let wc = choose_window(cfg, &law, s, rep)?;
    let w = &wc.window;
    rep.param("window", w);
    let mid = (w.beta + w.gamma) / 2;
    let xs: Vec<i64> = [w.beta, mid, w.gamma].iter().map(|&b| wc.ladder.nu[b as usize]).collect();
    rep.param("targets", &xs);
    let runs = collect(replicas(paths, mix(cfg.seed, 7), |_, sd| simulate_hits(&wc.env, 0, &xs, sd, cap)))?;
    rep.total_paths = paths as u64;
    rep.capped_paths = runs.iter().filter(|r| r.last().is_some_and(|h| h.capped)).count() as u64;
    let mut table = Table::new("gaussian-t.csv", &["path", "target", "steps", "capped", "z"]);
    let th = cfg.thresholds.gaussian_ks;
    let tag = "quenched-clt-window";
    let sd_v = w.v.sqrt();
    for (ti, &x) in xs.iter().enumerate() {
        let (mean, var) = hitting_moments(&wc.env, 0, x, Reflection::None)?;
        let mut z = Vec::with_capacity(paths);
        for (p, run) in runs.iter().enumerate() {
            let h = run[ti];
            let zi = (h.steps as f64 - mean) / sd_v;
            table.rows.push(vec![p.into(), x.into(), h.steps.into(), h.capped.into(), zi.into()]);
            if !h.capped {
                z.push(zi);
            }
        }
        let ks = ks_distance(&z, std_normal_cdf);
        let scale = (w.v / var).sqrt();
        let z_exact: Vec<f64> = z.iter().map(|v| v * scale).collect();
        rep.metrics.push(Metric::check(format!("ks[x={x}]"), tag, ks, format!("<= {th}"), th, ks <= th));
        rep.metrics.push(Metric::info(
            format!("ks_exact_var[x={x}]"),
            tag,
            ks_distance(&z_exact, std_normal_cdf),
            "reported",
        ));
        rep.metrics.push(Metric::info(format!("var_ratio[x={x}]"), tag, var / w.v, "reported"));
    }
    rep.tables.push(table);
    Ok(())
}

fn nonlocal(cfg: &ExperimentConfig, rep: &mut ExperimentReport) -> Result<()> {
    let law = cfg.law_or(|| EnvLaw::doubling(0.4))?;
    let s = stability_s(&law)?;
    let paths = cfg.paths_per_env.unwrap_or(1000);
    rep.param("s", s);
    rep.param("paths", paths);
    let wc = choose_window(cfg, &law, s, rep)?;
    let w = &wc.window;
    rep.param("window", w);
    let n_star = wc.ladder.nu[w.beta as usize];
    let end = wc.ladder.nu[w.gamma as usize];
    let (t, _) = hitting_moments(&wc.env, 0, n_star, Reflection::None)?;
    let time = t.round() as u64;
    // The walk cannot pass site `time` within `time` steps.
    let env = match &wc.planted {
        Some(pw) => pw.environment(time as i64 + 1)?,
        None => wc.env.clone(),
    };
    rep.param("n_star", n_star);
    rep.param("time", time);
    let xs: Vec<f64> = (0..4).map(|i| 1.0 + i as f64 * (end as f64 / n_star as f64 - 1.0) / 3.0).collect();
    let pos = collect(replicas(paths, mix(cfg.seed, 9), |_, sd| position_at(&env, time, sd)))?;
    rep.total_paths = paths as u64;
    let mut table = Table::new("nonlocal-x.csv", &["x", "site", "fraction"]);
    let tol = cfg.thresholds.nonlocal_tol;
    for &x in &xs {
        let site = x * n_star as f64;
        let frac = pos.iter().filter(|p| (p.x as f64) < site).count() as f64 / paths as f64;
        table.rows.push(vec![x.into(), site.into(), frac.into()]);
        rep.metrics.push(Metric::check(
            format!("below[x={x:.3}]"),
            "non-localization",
            frac,
            format!("0.5 +- {tol}"),
            tol,
            (frac - 0.5).abs() <= tol,
        ));
    }
    rep.tables.push(table);
    Ok(())
}

fn validate(rep: &mut ExperimentReport) {
    let results = crate::validate::run_suite();
    let mut table = Table::new("validate.csv", &["criterion", "name", "pass", "seconds", "detail"]);
    for r in &results {
        table.rows.push(vec![
            (r.id as u64).into(),
            r.name.into(),
            r.pass.into(),
            r.seconds.into(),
            r.detail.clone().into(),
        ]);
        rep.metrics.push(Metric::check(
            format!("criterion_{}", r.id),
            "validation",
            if r.pass { 1.0 } else { 0.0 },
            r.name.to_string(),
            1.0,
            r.pass,
        ));
    }
    rep.tables.push(table);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
            let json = serde_json::to_string(&e).unwrap();
            assert_eq!(json, format!("\"{}\"", e.name()));
        }
        assert!(matches!("bogus".parse::<Experiment>(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_config_gives_defaults() {
        assert_eq!(ExperimentConfig::from_json("").unwrap(), ExperimentConfig::default());
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"sed": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"thresholds": {"zz": 1}}"#).is_err());
        let c = ExperimentConfig::from_json(
            r#"{"experiment": "tail-et", "law": {"kind": "discrete", "values": [0.5], "probs": [1]}, "seed": 9}"#,
        )
        .unwrap();
        assert_eq!(c.experiment, Some(Experiment::TailEt));
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn missing_experiment_is_a_config_error() {
        assert!(matches!(run_experiment(&ExperimentConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn small_speed_run_is_thread_independent() {
        let mut cfg = ExperimentConfig::new(Experiment::Speed);
        cfg.replicas = Some(40);
        cfg.target = Some(300);
        cfg.threads = Some(1);
        let a = run_experiment(&cfg).unwrap();
        cfg.threads = Some(4);
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.tables[0].render(), b.tables[0].render());
        assert_eq!(a.metrics_table().render(), b.metrics_table().render());
    }

    #[test]
    fn planted_window_satisfies_predicates() {
        let pw = planted_window(0.585, 400, 8, 2).unwrap();
        assert_eq!(pw.trap_blocks.len(), 16);
        let env = pw.environment(0).unwrap();
        let t = pw.plan.triple(1).unwrap();
        let (env, ladder) = ladder_locations(&env, t.gamma as usize).unwrap();
        let st = window_stats(&env, &ladder, &pw.plan, 1).unwrap();
        let w = gaussian_window(&st, &pw.plan, 1, 0, 0.585).unwrap();
        assert!(w.flat && w.tail_ok, "{w:?}");
        assert_eq!(w.count, 16);
    }

    #[test]
    fn infeasible_schedule_is_reported() {
        let mut cfg = ExperimentConfig::new(Experiment::GaussianT);
        cfg.schedule.k_max = 5;
        assert!(matches!(run_experiment(&cfg), Err(Error::InfeasibleSchedule { largest_feasible: 4 })));
    }
}
