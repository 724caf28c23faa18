//! Adaptive Simpson quadrature.
//!
//! The time integrals in this crate have integrands of the form
//! `sigma^2(s, z) q(s, z)` where `q` is a transition density, so they can
//! carry an integrable `s^(-1/2)` singularity at `s = 0` (the density of a
//! diffusion started at the level blows up like `(2 pi s)^(-1/2)`).
//! [`integrate_from_origin`] removes it with the substitution `s = u^2`,
//! which turns `c * s^(-1/2)` into the constant `2c` and everything milder
//! into something smoother still.

/// Result of a quadrature call. `error_estimate` is the accumulated
/// Richardson estimate of the truncation error, not a hard bound.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("quadrature did not converge: error estimate {error_estimate:.3e} above tolerance {tolerance:.3e}")]
pub struct QuadError {
    pub error_estimate: f64,
    pub tolerance: f64,
}

impl QuadResult {
    pub fn into_value(self, tolerance: f64) -> Result<f64, QuadError> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(QuadError { error_estimate: self.error_estimate, tolerance })
        }
    }
}

const MAX_DEPTH: u32 = 48;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    (fa + 4.0 * fm + fb) * h / 6.0
}

struct Adaptive<'f> {
    f: &'f dyn Fn(f64) -> f64,
    error_estimate: f64,
    converged: bool,
}

impl Adaptive<'_> {
    fn recurse(
        &mut self,
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
        let flm = (self.f)(lm);
        let frm = (self.f)(rm);
        if !flm.is_finite() || !frm.is_finite() {
            self.converged = false;
            return whole;
        }
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        // Factor 15 from the Richardson extrapolation of Simpson's rule.
        if delta.abs() <= 15.0 * tol || depth >= MAX_DEPTH {
            if depth >= MAX_DEPTH && delta.abs() > 15.0 * tol {
                self.converged = false;
            }
            self.error_estimate += delta.abs() / 15.0;
            return left + right + delta / 15.0;
        }
        self.recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
            + self.recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)
    }
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
/// Returns zero for an empty or inverted interval.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> QuadResult {
    if !(b > a) {
        return QuadResult { value: 0.0, error_estimate: 0.0, converged: true };
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    if !fa.is_finite() || !fm.is_finite() || !fb.is_finite() {
        return QuadResult { value: f64::NAN, error_estimate: f64::INFINITY, converged: false };
    }
    let whole = simpson(fa, fm, fb, b - a);
    let mut state = Adaptive { f, error_estimate: 0.0, converged: true };
    let value = state.recurse(a, b, fa, fm, fb, whole, tol, 0);
    QuadResult { value, error_estimate: state.error_estimate, converged: state.converged }
}

/// Lower cutoff in `u` after the `s = u^2` substitution. The discarded mass
/// is below `2 * U_CUT * max|u f(u^2)|`, far under any tolerance used here.
const U_CUT: f64 = 1e-10;

/// Integrates `f` over `[a, b]` with `0 <= a < b`, tolerating an integrable
/// `s^(-1/2)` singularity at the origin. Substitutes `s = u^2` so the
/// integral becomes `int 2 u f(u^2) du` over `[sqrt(a), sqrt(b)]`, whose
/// integrand is bounded for the density-type integrands used here.
pub fn integrate_from_origin(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> QuadResult {
    if !(b > a) {
        return QuadResult { value: 0.0, error_estimate: 0.0, converged: true };
    }
    let lo = a.max(0.0).sqrt().max(U_CUT);
    let hi = b.sqrt();
    let g = move |u: f64| 2.0 * u * f(u * u);
    let mut out = adaptive_simpson(&g, lo, hi, tol);
    if a <= 0.0 {
        // Account for the truncated sliver [0, U_CUT] in the error estimate.
        out.error_estimate += 2.0 * U_CUT * g(U_CUT).abs().max(1.0) * U_CUT;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_to_tolerance() {
        let r = adaptive_simpson(&|x| x * x, 0.0, 3.0, 1e-12);
        assert!(r.converged);
        assert!((r.value - 9.0).abs() < 1e-10, "{}", r.value);

        let r = adaptive_simpson(&|x| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((r.value - 2.0).abs() < 1e-10, "{}", r.value);
    }

    #[test]
    fn empty_interval_is_zero() {
        let r = adaptive_simpson(&|x| x, 1.0, 1.0, 1e-9);
        assert_eq!(r.value, 0.0);
        let r = integrate_from_origin(&|_| 1.0, 2.0, 2.0, 1e-9);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn substitution_handles_inverse_sqrt_singularity() {
        // int_0^1 s^(-1/2) ds = 2, integrand unbounded at 0.
        let r = integrate_from_origin(&|s| 1.0 / s.sqrt(), 0.0, 1.0, 1e-12);
        assert!(r.converged);
        assert!((r.value - 2.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn substitution_agrees_with_plain_rule_on_smooth_integrands() {
        let f = |s: f64| (1.0 + s).ln();
        let direct = adaptive_simpson(&f, 0.25, 2.0, 1e-12);
        let subst = integrate_from_origin(&f, 0.25, 2.0, 1e-12);
        assert!((direct.value - subst.value).abs() < 1e-10);
    }

    #[test]
    fn non_finite_integrand_reports_failure() {
        let r = adaptive_simpson(&|x| 1.0 / x, -1.0, 1.0, 1e-9);
        assert!(!r.converged);
    }

    #[test]
    fn into_value_maps_convergence_to_result() {
        assert!(adaptive_simpson(&|x| x, 0.0, 1.0, 1e-9).into_value(1e-9).is_ok());
        assert!(adaptive_simpson(&|x| 1.0 / x, -1.0, 1.0, 1e-9).into_value(1e-9).is_err());
    }
}
