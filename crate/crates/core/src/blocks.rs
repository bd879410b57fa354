//! Empirical check that ladder blocks of a conditioned environment are i.i.d.

use rayon::prelude::*;
use serde::Serialize;

use crate::env::{Environment, LeftMode, SampleOptions};
use crate::error::{Error, Result};
use crate::ladder::ladder_locations;
use crate::law::EnvLaw;
use crate::quenched::block_crossing_stats;
use crate::rng::replica_seed;
use crate::stats::ks_two_sample;

/// Per-block observables: length, maximum `M` and quenched crossing mean.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockSample {
    pub len: Vec<f64>,
    pub max: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockIidReport {
    pub n_blocks: usize,
    pub ks_len: f64,
    pub ks_max: f64,
    pub ks_mu: f64,
}

/// `n` consecutive blocks of one environment sampled under `Q`.
pub fn consecutive_blocks(law: &EnvLaw, n: usize, seed: u64) -> Result<BlockSample> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one block".into()));
    }
    let env = Environment::sample(law, seed, LeftMode::ConditionedQ, SampleOptions::default())?;
    let (env, ladder) = ladder_locations(&env, n)?;
    let stats = block_crossing_stats(&env, &ladder, None)?;
    Ok(BlockSample {
        len: ladder.block_lens().iter().map(|&l| l as f64).collect(),
        max: ladder.block_maxima(),
        mu: stats.mu,
    })
}

/// First blocks of `n` independent environments sampled under `Q`.
pub fn first_blocks(law: &EnvLaw, n: usize, seed: u64) -> Result<BlockSample> {
    let opts = SampleOptions { right_sites: 64, ..SampleOptions::default() };
    let rows: Vec<Result<(f64, f64, f64)>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let env = Environment::sample(law, replica_seed(seed, i), LeftMode::ConditionedQ, opts)?;
            let (env, ladder) = ladder_locations(&env, 1)?;
            let stats = block_crossing_stats(&env, &ladder, None)?;
            Ok((ladder.block_len(1) as f64, ladder.block_max(1), stats.mu[0]))
        })
        .collect();
    let mut out = BlockSample::default();
    for r in rows {
        let (l, m, mu) = r?;
        out.len.push(l);
        out.max.push(m);
        out.mu.push(mu);
    }
    Ok(out)
}

pub fn compare(a: &BlockSample, b: &BlockSample) -> BlockIidReport {
    BlockIidReport {
        n_blocks: a.len.len().min(b.len.len()),
        ks_len: ks_two_sample(&a.len, &b.len),
        ks_max: ks_two_sample(&a.max, &b.max),
        ks_mu: ks_two_sample(&a.mu, &b.mu),
    }
}

/// KS distances between `n_blocks` consecutive blocks of one environment and
/// `n_blocks` independent first blocks.
pub fn block_iid_check(law: &EnvLaw, n_blocks: usize, seed: u64) -> Result<BlockIidReport> {
    let long = consecutive_blocks(law, n_blocks, seed)?;
    let fresh = first_blocks(law, n_blocks, replica_seed(seed, u64::MAX))?;
    Ok(compare(&long, &fresh))
}
