//! Stability index `s` (the root of `E_P rho^s = 1`), regime and speed.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::law::EnvLaw;
use crate::numeric::bisect;

/// Upper end of the bracket searched for `s`.
pub const GAMMA_HI: f64 = 64.0;

/// `|E log rho|` below this is treated as zero.
const RECURRENCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Recurrent,
    /// `E log rho > 0`: the walk escapes to the left.
    TransientLeft,
    TransientPositiveSpeed,
    TransientZeroSpeed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Present only for right-transient laws.
    pub s: Option<f64>,
    pub e_log_rho: f64,
    pub e_rho: f64,
    pub v_p: f64,
    pub regime: Regime,
}

/// Solves `E_P rho^s = 1` by bisection, using that `gamma -> E rho^gamma`
/// is convex, equals one at zero and decreases there.
pub fn solve_stability_index(law: &EnvLaw, tol: f64) -> Result<StabilityReport> {
    law.validate()?;
    let e_log_rho = law.mean_log_rho();
    let e_rho = law.mean_rho();
    if e_log_rho.abs() <= RECURRENCE_TOL {
        return Ok(StabilityReport { s: None, e_log_rho, e_rho, v_p: 0.0, regime: Regime::Recurrent });
    }
    if e_log_rho > 0.0 {
        return Ok(StabilityReport { s: None, e_log_rho, e_rho, v_p: 0.0, regime: Regime::TransientLeft });
    }
    let phi = |g: f64| law.rho_moment(g) - 1.0;
    if phi(GAMMA_HI) <= 0.0 {
        return Err(Error::NoStabilityIndex(GAMMA_HI));
    }
    let s = bisect(phi, 0.0, GAMMA_HI, tol * 1e-3);
    if phi(s).abs() > tol {
        return Err(Error::NoStabilityIndex(GAMMA_HI));
    }
    // E_P W_0 = sum_k (E rho)^k, so v_P = 1 / (1 + 2 E W_0) = (1 - E rho) / (1 + E rho).
    let (v_p, regime) = if e_rho < 1.0 {
        ((1.0 - e_rho) / (1.0 + e_rho), Regime::TransientPositiveSpeed)
    } else {
        (0.0, Regime::TransientZeroSpeed)
    };
    Ok(StabilityReport { s: Some(s), e_log_rho, e_rho, v_p, regime })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Root of `q y^2 - y + (1 - q) = 0` other than `y = 1`, with `y = 2^s`.
    fn doubling_oracle(q: f64) -> f64 {
        ((1.0 - q) / q).log2()
    }

    #[test]
    fn doubling_family_matches_quadratic() {
        for (q, want) in [(0.4, 1.5f64.log2()), (0.3, (7.0f64 / 3.0).log2()), (0.45, (11.0f64 / 9.0).log2())] {
            let rep = solve_stability_index(&EnvLaw::doubling(q).unwrap(), 1e-10).unwrap();
            let s = rep.s.unwrap();
            assert!((s - want).abs() < 1e-9, "q={q}: {s} vs {want}");
            assert!((s - doubling_oracle(q)).abs() < 1e-9);
        }
        let rep = solve_stability_index(&EnvLaw::doubling(0.4).unwrap(), 1e-10).unwrap();
        assert!((rep.s.unwrap() - 0.5849625).abs() < 1e-7);
        assert_eq!(rep.regime, Regime::TransientZeroSpeed);
        assert_eq!(rep.v_p, 0.0);
        let rep = solve_stability_index(&EnvLaw::doubling(0.3).unwrap(), 1e-10).unwrap();
        assert!((rep.s.unwrap() - 1.2223924).abs() < 1e-7);
        assert_eq!(rep.regime, Regime::TransientPositiveSpeed);
    }

    #[test]
    fn symmetric_law_is_recurrent() {
        let rep = solve_stability_index(&EnvLaw::doubling(0.5).unwrap(), 1e-10).unwrap();
        assert_eq!(rep.regime, Regime::Recurrent);
        assert!(rep.s.is_none());
        let rep = solve_stability_index(&EnvLaw::doubling(0.6).unwrap(), 1e-10).unwrap();
        assert_eq!(rep.regime, Regime::TransientLeft);
    }

    #[test]
    fn speed_for_q_quarter() {
        let rep = solve_stability_index(&EnvLaw::doubling(0.25).unwrap(), 1e-10).unwrap();
        assert!((rep.e_rho - 0.875).abs() < 1e-15);
        assert!((rep.v_p - 1.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn root_properties_hold_for_several_laws() {
        let laws = [
            EnvLaw::doubling(0.4).unwrap(),
            EnvLaw::doubling(0.2).unwrap(),
            EnvLaw::three_atom(),
            EnvLaw::beta(3.0, 2.0, 0.02).unwrap(),
            EnvLaw::beta(1.2, 1.0, 0.05).unwrap(),
        ];
        for law in laws {
            let rep = solve_stability_index(&law, 1e-10).unwrap();
            let s = rep.s.unwrap();
            let phi = |g: f64| law.rho_moment(g);
            assert!((phi(s) - 1.0).abs() <= 1e-9, "{law:?}");
            assert!(phi(s - 0.1) < 1.0 && phi(s + 0.1) > 1.0, "{law:?}");
            assert_eq!(rep.regime == Regime::TransientZeroSpeed, s <= 1.0);
            assert_eq!(rep.e_rho >= 1.0, s <= 1.0);
        }
    }

    #[test]
    fn too_light_tail_has_no_root() {
        // All atoms have rho < 1: E rho^gamma < 1 for every gamma.
        let law = EnvLaw::discrete(vec![0.6, 0.8], vec![0.5, 0.5]).unwrap();
        assert!(matches!(solve_stability_index(&law, 1e-10), Err(Error::NoStabilityIndex(_))));
    }
}
