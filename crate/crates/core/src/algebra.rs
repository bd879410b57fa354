//! Products and sums of odds ratios: `Pi`, `W` and `R`.

use crate::env::{Environment, CHUNK};
use crate::error::{Error, Result};

/// Default relative truncation tolerance for infinite sums.
pub const TRUNCATION_TOL: f64 = 1e-12;

/// Guard on leftward growth while summing an infinite tail, in chunks.
pub const MAX_EXTENSIONS: u64 = 1_000_000;

const SMALL: f64 = 1e-300;
const LARGE: f64 = 1e300;

/// `rho_i = (1 - omega_i) / omega_i`.
pub fn rho_at(env: &Environment, i: i64) -> Result<f64> {
    env.rho(i)
}

/// `log Pi_{i,j}`; `-inf` when a factor vanishes, `0` for the empty product.
pub fn log_pi(env: &Environment, i: i64, j: i64) -> Result<f64> {
    check_range(env, i, j)?;
    let mut acc = 0.0;
    for k in i..=j {
        acc += env.rho_raw(k).ln();
    }
    Ok(acc)
}

/// `Pi_{i,j} = rho_i ... rho_j`, with `Pi_{j+1,j} = 1`.
pub fn pi_product(env: &Environment, i: i64, j: i64) -> Result<f64> {
    check_range(env, i, j)?;
    let mut prod = 1.0;
    for k in i..=j {
        let r = env.rho_raw(k);
        if r == 0.0 {
            return Ok(0.0);
        }
        prod *= r;
        if !(SMALL..=LARGE).contains(&prod) {
            return Ok(log_pi(env, i, j)?.exp());
        }
    }
    Ok(prod)
}

fn check_range(env: &Environment, i: i64, j: i64) -> Result<()> {
    if i > j + 1 {
        return Err(Error::InvalidArgument(format!("Pi_{{{i},{j}}} needs i <= j + 1")));
    }
    if i <= j {
        env.rho(i)?;
        env.rho(j)?;
    }
    Ok(())
}

/// `W_{i,j} = sum_{k=i}^{j} Pi_{k,j}` over a finite range.
pub fn w_finite(env: &Environment, i: i64, j: i64) -> Result<f64> {
    if i > j {
        return Ok(0.0);
    }
    env.rho(i)?;
    env.rho(j)?;
    let mut w = 0.0;
    for k in i..=j {
        w = env.rho_raw(k) * (1.0 + w);
    }
    Ok(w)
}

/// Outcome of summing an infinite left tail.
#[derive(Debug, Clone)]
pub struct LeftTail {
    pub value: f64,
    /// Leftmost site whose term was added.
    pub last_site: i64,
    /// True when a zero factor ended the sum exactly.
    pub exact: bool,
    /// Snapshot that covers every site read.
    pub env: Environment,
}

/// `W_j = sum_{k <= j} Pi_{k,j}`.
///
/// Terms are added right to left; the tail is dropped once the running
/// product falls below `tol` times the partial sum, growing the window to
/// the left when needed. A reflecting site ends the sum exactly.
pub fn w_value(env: &Environment, j: i64, tol: f64) -> Result<f64> {
    w_tail(env, j, tol).map(|t| t.value)
}

pub fn w_tail(env: &Environment, j: i64, tol: f64) -> Result<LeftTail> {
    env.rho(j)?;
    let mut env = env.clone();
    let mut sum = 0.0;
    let mut prod = 1.0;
    let mut k = j;
    let mut chunks = 0u64;
    loop {
        if k < env.lo() {
            if !env.can_extend_left() {
                return Err(Error::Extension {
                    lo: k,
                    hi: env.hi(),
                    reason: "left tail not truncated inside a non-extendable window".into(),
                });
            }
            let before = env.lo();
            env = env.grow_left(CHUNK)?;
            chunks += ((before - env.lo()) / CHUNK).max(1) as u64;
            if chunks > MAX_EXTENSIONS {
                return Err(Error::NonConvergent(chunks));
            }
        }
        let r = env.rho_raw(k);
        if r == 0.0 {
            return Ok(LeftTail { value: sum, last_site: k + 1, exact: true, env });
        }
        prod *= r;
        sum += prod;
        if !sum.is_finite() {
            return Err(Error::NonConvergent(chunks));
        }
        if prod < tol * sum {
            return Ok(LeftTail { value: sum, last_site: k, exact: false, env });
        }
        k -= 1;
    }
}

/// `R_{i,k} = sum_{j=i}^{k} Pi_{i,j}`.
pub fn r_value(env: &Environment, i: i64, k: i64) -> Result<f64> {
    if i > k {
        return Err(Error::InvalidArgument(format!("R_{{{i},{k}}} needs i <= k")));
    }
    env.rho(i)?;
    env.rho(k)?;
    let mut sum = 0.0;
    let mut prod = 1.0;
    for j in i..=k {
        prod *= env.rho_raw(j);
        sum += prod;
        if prod == 0.0 {
            break;
        }
    }
    Ok(sum)
}

/// `R_i = sum_{j >= i} Pi_{i,j}`, truncated like [`w_value`], growing rightwards.
pub fn r_infinite(env: &Environment, i: i64, tol: f64) -> Result<f64> {
    env.rho(i)?;
    let mut env = env.clone();
    let mut sum = 0.0;
    let mut prod = 1.0;
    let mut j = i;
    let mut chunks = 0u64;
    loop {
        if j > env.hi() {
            if !env.can_extend_right() {
                return Err(Error::Extension {
                    lo: env.lo(),
                    hi: j,
                    reason: "right tail not truncated inside a non-extendable window".into(),
                });
            }
            env = env.grow_right(CHUNK)?;
            chunks += 1;
            if chunks > MAX_EXTENSIONS {
                return Err(Error::NonConvergent(chunks));
            }
        }
        prod *= env.rho_raw(j);
        sum += prod;
        if prod == 0.0 {
            return Ok(sum);
        }
        if !sum.is_finite() {
            return Err(Error::NonConvergent(chunks));
        }
        if prod < tol * sum {
            return Ok(sum);
        }
        j += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{LeftMode, SampleOptions};
    use crate::law::EnvLaw;
    use proptest::prelude::*;

    fn homogeneous(omega: f64) -> Environment {
        Environment::sample(&EnvLaw::constant(omega).unwrap(), 0, LeftMode::Plain, SampleOptions::default())
            .unwrap()
    }

    #[test]
    fn rho_examples() {
        let env = Environment::from_omegas(0, vec![0.5, 1.0, 1.0 / 3.0]).unwrap();
        assert_eq!(rho_at(&env, 0).unwrap(), 1.0);
        assert_eq!(rho_at(&env, 1).unwrap(), 0.0);
        assert!((rho_at(&env, 2).unwrap() - 2.0).abs() < 1e-15);
        assert!(rho_at(&env, 3).is_err());
    }

    #[test]
    fn pi_examples() {
        let env = Environment::from_rhos(0, &[2.0, 0.5, 0.0, 3.0]).unwrap();
        assert_eq!(pi_product(&env, 1, 0).unwrap(), 1.0);
        assert!((pi_product(&env, 0, 1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pi_product(&env, 0, 3).unwrap(), 0.0);
        assert!(pi_product(&env, 3, 1).is_err());
        assert!(pi_product(&env, 0, 4).is_err());
    }

    #[test]
    fn pi_survives_overflow_through_logs() {
        let mut rhos = vec![1e200; 3];
        rhos.extend(vec![1e-200; 3]);
        let env = Environment::from_rhos(0, &rhos).unwrap();
        let p = pi_product(&env, 0, 5).unwrap();
        assert!((p - 1.0).abs() < 1e-10, "{p}");
        assert_eq!(pi_product(&env, 0, 1).unwrap(), f64::INFINITY);
        assert!((log_pi(&env, 0, 1).unwrap() - 400.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn w_examples() {
        let env = homogeneous(0.75);
        assert!((w_value(&env, 0, TRUNCATION_TOL).unwrap() - 0.5).abs() < 1e-12);
        let env = env.extended(env.lo(), 5000).unwrap();
        assert!((w_value(&env, 5000, TRUNCATION_TOL).unwrap() - 0.5).abs() < 1e-12);
        let refl = Environment::from_rhos(0, &[0.0, 0.5]).unwrap();
        assert!((w_value(&refl, 1, TRUNCATION_TOL).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(w_value(&refl, 0, TRUNCATION_TOL).unwrap(), 0.0);
    }

    #[test]
    fn w_needs_a_terminating_left_edge() {
        let env = Environment::from_rhos(0, &[2.0, 0.5]).unwrap();
        assert!(matches!(w_value(&env, 1, TRUNCATION_TOL), Err(Error::Extension { .. })));
    }

    #[test]
    fn w_diverges_for_left_transient_law() {
        let law = EnvLaw::constant(0.25).unwrap(); // rho = 3
        let env = Environment::sample(&law, 0, LeftMode::Plain, SampleOptions::default()).unwrap();
        assert!(matches!(w_value(&env, 0, TRUNCATION_TOL), Err(Error::NonConvergent(_))));
    }

    #[test]
    fn r_examples() {
        let env = Environment::from_rhos(0, &[2.0, 0.5]).unwrap();
        assert_eq!(r_value(&env, 0, 0).unwrap(), 2.0);
        assert!((r_value(&env, 0, 1).unwrap() - 3.0).abs() < 1e-15);
        assert!(r_value(&env, 1, 0).is_err());
        let hom = homogeneous(0.75);
        assert!((r_infinite(&hom, 0, TRUNCATION_TOL).unwrap() - 0.5).abs() < 1e-12);
    }

    fn direct_w(rhos: &[f64], i: usize, j: usize) -> f64 {
        (i..=j).map(|k| rhos[k..=j].iter().product::<f64>()).sum()
    }

    proptest! {
        #[test]
        fn recursion_matches_double_sum(rhos in prop::collection::vec(0.05f64..4.0, 1..30), a in 0usize..30, b in 0usize..30) {
            let n = rhos.len();
            let (i, j) = (a.min(b) % n, a.max(b) % n);
            let (i, j) = (i.min(j), i.max(j));
            let env = Environment::from_rhos(0, &rhos).unwrap();
            let fast = w_finite(&env, i as i64, j as i64).unwrap();
            let slow = direct_w(&rhos, i, j);
            prop_assert!((fast - slow).abs() <= 1e-12 * slow.abs().max(1e-300));
            let r_fast = r_value(&env, i as i64, j as i64).unwrap();
            let r_slow: f64 = (i..=j).map(|m| rhos[i..=m].iter().product::<f64>()).sum();
            prop_assert!((r_fast - r_slow).abs() <= 1e-12 * r_slow);
        }
    }
}
