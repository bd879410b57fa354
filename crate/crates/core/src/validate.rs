//! The acceptance suite: oracle equivalences, closed-form checks and the
//! statistical campaigns at their default scale.

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;

use crate::env::{Environment, LeftMode, SampleOptions};
use crate::error::Result;
use crate::experiment::{run_experiment, Experiment, ExperimentConfig, ExperimentReport};
use crate::ladder::ladder_locations;
use crate::law::EnvLaw;
use crate::quenched::{crossing_parts, hitting_moments, hitting_oracle, Reflection};
use crate::rng::{mix, replica_seed, stream, tags};
use crate::stats::{mean_se, sample_variance};
use crate::walk::{replicas, simulate_coupled, simulate_hit};

pub struct Criterion {
    pub id: u32,
    pub name: &'static str,
    run: fn() -> Result<(bool, String)>,
}

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, name: "oracle equivalence", run: oracle_criterion },
        Criterion { id: 2, name: "homogeneous closed forms", run: homogeneous_criterion },
        Criterion { id: 3, name: "tail exponent of expected crossing", run: tail_mean_criterion },
        Criterion { id: 4, name: "tail exponent of crossing variance", run: tail_var_criterion },
        Criterion { id: 5, name: "stable scaling", run: stable_criterion },
        Criterion { id: 6, name: "localization", run: localize_criterion },
        Criterion { id: 7, name: "gaussian window", run: gaussian_criterion },
        Criterion { id: 8, name: "coupling", run: coupling_criterion },
        Criterion { id: 9, name: "annealed scaling exponent", run: annealed_criterion },
        Criterion { id: 10, name: "determinism", run: determinism_criterion },
    ]
}

pub fn run_criterion(c: &Criterion) -> CriterionResult {
    let start = Instant::now();
    let (pass, detail) = match (c.run)() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionResult { id: c.id, name: c.name, pass, detail, seconds: start.elapsed().as_secs_f64() }
}

pub fn run_suite() -> Vec<CriterionResult> {
    criteria().iter().map(run_criterion).collect()
}

/// Worst relative gap between closed-form and linear-system hitting moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleGap {
    pub cases: usize,
    pub mean_rel: f64,
    pub var_rel: f64,
}

/// Compares closed forms with the oracle on `cases` random windows of at
/// most 50 sites with a reflecting left end. With `flip_sign`, the variance
/// is recomputed with the sign of the weighted-sum term reversed.
pub fn oracle_gap(cases: usize, seed: u64, flip_sign: bool) -> Result<OracleGap> {
    let laws = [EnvLaw::doubling(0.4)?, EnvLaw::three_atom(), EnvLaw::beta(2.0, 1.5, 0.02)?];
    let mut gap = OracleGap { cases, mean_rel: 0.0, var_rel: 0.0 };
    for i in 0..cases {
        let sd = replica_seed(seed, i as u64);
        let mut rng = stream(sd, tags::SYNTH);
        let at = -(rng.random_range(0..20i64));
        let to = at + rng.random_range(2..=50i64);
        let from = rng.random_range(at..to);
        let opts = SampleOptions { right_sites: 64, ..SampleOptions::default() };
        let env = Environment::sample(&laws[i % laws.len()], sd, LeftMode::Reflecting { at }, opts)?;
        let (mean, mut var) = hitting_moments(&env, from, to, Reflection::Site(at))?;
        if flip_sign {
            var = 0.0;
            for j in from..to {
                let (w, s) = crossing_parts(&env, j, Some(at))?;
                var += 4.0 * (w + w * w) - 8.0 * s;
            }
        }
        let (om, ov) = hitting_oracle(&env, from, to, Some(at))?;
        gap.mean_rel = gap.mean_rel.max((mean - om).abs() / om.abs());
        if ov > 0.0 {
            gap.var_rel = gap.var_rel.max((var - ov).abs() / ov);
        }
    }
    Ok(gap)
}

/// True when the oracle comparison catches a sign flip in the variance.
pub fn mutation_detected() -> Result<bool> {
    Ok(oracle_gap(100, 17, true)?.var_rel > 1e-10)
}

fn oracle_criterion() -> Result<(bool, String)> {
    let start = Instant::now();
    let g = oracle_gap(100, 2024, false)?;
    let secs = start.elapsed().as_secs_f64();
    let mutant = mutation_detected()?;
    let pass = g.mean_rel <= 1e-10 && g.var_rel <= 1e-10 && secs < 10.0 && mutant;
    Ok((
        pass,
        format!(
            "max rel gap mean {:.2e}, variance {:.2e} over {} windows in {secs:.2} s; sign-flip mutant caught: {mutant}",
            g.mean_rel, g.var_rel, g.cases
        ),
    ))
}

fn homogeneous_criterion() -> Result<(bool, String)> {
    let start = Instant::now();
    let law = EnvLaw::constant(0.75)?;
    let env = Environment::sample(&law, 0, LeftMode::Plain, SampleOptions::default())?;
    let (m, v) = hitting_moments(&env, 0, 1, Reflection::None)?;
    // Exact up to the truncation of the infinite left sums.
    let exact = (m - 2.0).abs() <= 2e-10 && (v - 6.0).abs() <= 6e-10;
    let n = 100_000;
    let t: Vec<f64> = replicas(n, 75, |_, sd| simulate_hit(&env, 0, 1, sd, u64::MAX).map(|h| h.steps as f64))
        .into_iter()
        .collect::<Result<_>>()?;
    let (mean, se) = mean_se(&t);
    let var = sample_variance(&t);
    let secs = start.elapsed().as_secs_f64();
    let pass = exact && (mean - 2.0).abs() <= 3.0 * se && (var - 6.0).abs() <= 0.3 && secs < 20.0;
    Ok((
        pass,
        format!("closed form ({m}, {v}); MC mean {mean:.4} (SE {se:.4}), variance {var:.4} in {secs:.2} s"),
    ))
}

static TAIL_REPORT: OnceLock<std::result::Result<ExperimentReport, String>> = OnceLock::new();

fn tail_report() -> Result<&'static ExperimentReport> {
    TAIL_REPORT
        .get_or_init(|| run_experiment(&ExperimentConfig::new(Experiment::TailEt)).map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| crate::error::Error::Degenerate(e.clone()))
}

fn metric_line(rep: &ExperimentReport, names: &[&str]) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in names {
        match rep.metric(n) {
            Some(m) => {
                pass &= m.pass;
                parts.push(format!("{} = {:.4} (target {})", m.name, m.value, m.target));
            }
            None => {
                pass = false;
                parts.push(format!("{n} missing"));
            }
        }
    }
    (pass, parts.join("; "))
}

fn tail_mean_criterion() -> Result<(bool, String)> {
    let rep = tail_report()?;
    let (pass, mut d) = metric_line(rep, &["hill_s", "loglog_gap"]);
    if let Some(k) = rep.metric("k_inf_hat") {
        d.push_str(&format!("; K_inf estimate {:.4} (not asserted)", k.value));
    }
    Ok((pass && rep.wall_clock_secs < 120.0, format!("{d}; {:.1} s", rep.wall_clock_secs)))
}

fn tail_var_criterion() -> Result<(bool, String)> {
    Ok(metric_line(tail_report()?, &["hill_s_var"]))
}

fn whole_report(exp: Experiment, limit_secs: f64) -> Result<(bool, String)> {
    let rep = run_experiment(&ExperimentConfig::new(exp))?;
    let mut parts: Vec<String> = rep
        .metrics
        .iter()
        .filter(|m| m.asserted)
        .map(|m| format!("{} = {:.4} ({})", m.name, m.value, if m.pass { "ok" } else { "FAIL" }))
        .collect();
    parts.extend(rep.notes.iter().cloned());
    parts.push(format!("{:.1} s", rep.wall_clock_secs));
    Ok((rep.passed() && rep.wall_clock_secs < limit_secs, parts.join("; ")))
}

fn stable_criterion() -> Result<(bool, String)> {
    whole_report(Experiment::StableEt, 300.0)
}

fn localize_criterion() -> Result<(bool, String)> {
    whole_report(Experiment::Localize, 300.0)
}

fn gaussian_criterion() -> Result<(bool, String)> {
    whole_report(Experiment::GaussianT, 600.0)
}

fn annealed_criterion() -> Result<(bool, String)> {
    whole_report(Experiment::AnnealedT, f64::INFINITY)
}

fn coupling_criterion() -> Result<(bool, String)> {
    let law = EnvLaw::doubling(0.4)?;
    // Small n keeps the reflection radius short, so many paths diverge.
    let (envs, per_env, n) = (100usize, 100usize, 16usize);
    let runs = replicas(envs, 88, |_, sd| -> Result<(u64, u64, u64)> {
        let env = Environment::sample(&law, sd, LeftMode::Plain, SampleOptions::default())?;
        let (env, ladder) = ladder_locations(&env, n)?;
        let target = ladder.nu[n];
        let (mut viol, mut capped, mut diverged) = (0, 0, 0);
        for p in 0..per_env {
            let c = simulate_coupled(&env, &ladder, n as u64, 0, target, mix(sd, p as u64), 1_000_000)?;
            viol += c.violations;
            capped += c.capped as u64;
            diverged += c.divergence_step.is_some() as u64;
        }
        Ok((viol, capped, diverged))
    });
    let (mut viol, mut capped, mut diverged) = (0, 0, 0);
    for r in runs {
        let (v, c, d) = r?;
        viol += v;
        capped += c;
        diverged += d;
    }
    Ok((
        viol == 0,
        format!("{} paths, {viol} violations, {diverged} diverged, {capped} capped", envs * per_env),
    ))
}

fn determinism_criterion() -> Result<(bool, String)> {
    let mut cfgs = Vec::new();
    let mut c = ExperimentConfig::new(Experiment::StableEt);
    c.replicas = Some(200);
    c.blocks = Some(100);
    cfgs.push(c);
    let mut c = ExperimentConfig::new(Experiment::Speed);
    c.replicas = Some(100);
    c.target = Some(500);
    cfgs.push(c);
    let mut c = ExperimentConfig::new(Experiment::AnnealedT);
    c.replicas = Some(50);
    c.exponents = [4, 7];
    cfgs.push(c);
    let mut names = Vec::new();
    for cfg in cfgs {
        let render = |threads: usize| -> Result<Vec<String>> {
            let mut cfg = cfg.clone();
            cfg.threads = Some(threads);
            let rep = run_experiment(&cfg)?;
            let mut out: Vec<String> = rep.tables.iter().map(|t| t.render()).collect();
            out.push(rep.metrics_table().render());
            Ok(out)
        };
        if render(1)? != render(8)? {
            return Ok((false, format!("{} differs between 1 and 8 threads", cfg.experiment.unwrap())));
        }
        names.push(cfg.experiment.unwrap().name());
    }
    Ok((true, format!("byte-identical tables with 1 and 8 threads: {}", names.join(", "))))
}
