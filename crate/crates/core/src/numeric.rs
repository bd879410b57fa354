//! Small numerical helpers: adaptive quadrature and root bracketing.

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`,
/// or to about 1e-14 relative when `tol` is below what double precision can
/// resolve for the integrand.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    // Split into a few panels first so narrow features are not missed.
    const PANELS: usize = 16;
    let h = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = if i + 1 == PANELS { b } else { lo + h };
            let m = 0.5 * (lo + hi);
            let (fa, fm, fb) = (f(lo), f(m), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson_rec(f, lo, hi, fa, fm, fb, whole, tol / PANELS as f64, 48)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || delta.abs() <= 1e-14 * (left + right).abs() {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Bisection for an increasing-through-zero `g` on `[lo, hi]` with `g(lo) < 0 <= g(hi)`.
pub fn bisect<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64, ftol: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = g(mid);
        if v.abs() <= ftol || (hi - lo) <= f64::EPSILON * mid.abs().max(1.0) {
            return mid;
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial_and_gaussian() {
        let v = integrate(&|x: f64| x * x, 0.0, 3.0, 1e-12);
        assert!((v - 9.0).abs() < 1e-10);
        let g = integrate(&|x: f64| (-x * x / 2.0).exp(), -10.0, 10.0, 1e-13);
        assert!((g - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-15);
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }
}
