//! The nonlinearity f_ε(u) = |u|^(2*-2) u / [ln(e+|u|)]^ε and its calculus.

use std::f64::consts::E;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Error, Result};

/// Dimension and log exponent defining f_ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonlinearityParams {
    dim: f64,
    eps: f64,
    p: f64,
    q: f64,
}

impl NonlinearityParams {
    pub fn new(n: usize, eps: f64) -> Result<Self> {
        Self::with_real_dim(n as f64, eps)
    }

    /// Real dimensions are accepted for the radial operator.
    pub fn with_real_dim(dim: f64, eps: f64) -> Result<Self> {
        if !(dim >= 3.0) || !dim.is_finite() {
            return Err(Error::InvalidParameter(format!("dimension {dim} must be >= 3")));
        }
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon {eps} must be >= 0")));
        }
        let p = (dim + 2.0) / (dim - 2.0);
        Ok(Self { dim, eps, p, q: p - 1.0 })
    }

    pub fn dim(&self) -> f64 {
        self.dim
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// 2* - 1
    pub fn p(&self) -> f64 {
        self.p
    }

    /// 2* - 2
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn critical_exponent(&self) -> f64 {
        2.0 * self.dim / (self.dim - 2.0)
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::with_real_dim(self.dim, eps)
    }

    pub fn f(&self, u: f64) -> f64 {
        let a = u.abs();
        if a == 0.0 {
            return 0.0;
        }
        a.powf(self.q) * u * self.log_damping(a)
    }

    pub fn fprime(&self, u: f64) -> f64 {
        let a = u.abs();
        if a == 0.0 {
            return 0.0;
        }
        a.powf(self.q) * self.log_damping(a) * (self.p - self.eps * log_ratio(a))
    }

    /// Second derivative. For N > 6 the factor |u|^(2*-3) is singular at 0.
    pub fn fsecond(&self, u: f64) -> Result<f64> {
        let a = u.abs();
        if a == 0.0 {
            if self.q < 1.0 {
                return Err(Error::Domain { what: "f''", at: u });
            }
            return Ok(0.0);
        }
        let l = ln_e_plus(a);
        let g = log_ratio(a);
        let damp = self.log_damping(a);
        let main = a.powf(self.q - 1.0) * damp * (self.q - self.eps * g) * (self.p - self.eps * g);
        let corr = a.powf(self.q) * damp * self.eps * (E * l - a) / ((E + a).powi(2) * l * l);
        Ok(u.signum() * (main - corr))
    }

    /// [ln(e+a)]^(-ε)
    fn log_damping(&self, a: f64) -> f64 {
        if self.eps == 0.0 {
            1.0
        } else {
            (-self.eps * lnln_e_plus(a)).exp()
        }
    }
}

/// ln(e + a) for a >= 0, safe for huge a.
pub fn ln_e_plus(a: f64) -> f64 {
    if a > 1e300 {
        a.ln() + (E / a).ln_1p()
    } else {
        1.0 + (a / E).ln_1p()
    }
}

/// ln ln(e + a), accurate near a = 0.
pub fn lnln_e_plus(a: f64) -> f64 {
    if a > 1e300 {
        ln_e_plus(a).ln()
    } else {
        (a / E).ln_1p().ln_1p()
    }
}

/// a / ((e + a) ln(e + a))
fn log_ratio(a: f64) -> f64 {
    if a > 1e300 {
        1.0 / ln_e_plus(a)
    } else {
        a / ((E + a) * ln_e_plus(a))
    }
}

/// |f_ε(u) - f_0(u)| and the bound ε|u|^p ln ln(e+|u|).
pub fn bound_i(params: &NonlinearityParams, u: f64) -> (f64, f64) {
    let a = u.abs();
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let ll = lnln_e_plus(a);
    let eps = params.eps();
    let ap = a.powf(params.p());
    (ap * (-eps * ll).exp_m1().abs(), eps * ap * ll)
}

/// |f'_ε(u) - f'_0(u)| and the bound ε|u|^q (p ln ln(e+|u|) + 1/ln(e+|u|)).
pub fn bound_ii(params: &NonlinearityParams, u: f64) -> (f64, f64) {
    let a = u.abs();
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let eps = params.eps();
    let p = params.p();
    let ll = lnln_e_plus(a);
    let aq = a.powf(params.q());
    let m1 = (-eps * ll).exp_m1();
    let diff = aq * (p * m1 - eps * log_ratio(a) * (1.0 + m1));
    (diff.abs(), eps * aq * (p * ll + 1.0 / ln_e_plus(a)))
}

/// |f'_ε(u+v) - f'_ε(u)| and the constant-free right side of the two-regime
/// bound: (|u|^(q-1) + |v|^(q-1))|v| when q >= 1, |v|^q + ε|u|^q otherwise.
pub fn bound_iii(params: &NonlinearityParams, u: f64, v: f64) -> (f64, f64) {
    let lhs = (params.fprime(u + v) - params.fprime(u)).abs();
    let q = params.q();
    let (a, b) = (u.abs(), v.abs());
    let rhs = if q >= 1.0 {
        (a.powf(q - 1.0) + b.powf(q - 1.0)) * b
    } else {
        b.powf(q) + params.eps() * a.powf(q)
    };
    (lhs, rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub u: f64,
    pub v: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub samples: usize,
    pub eps_max: f64,
    /// Violations of the bounds with explicit constants, (i) and (ii).
    pub violations: usize,
    pub violations_i: usize,
    pub violations_ii: usize,
    /// Largest ratio lhs/rhs seen for the unspecified-constant bound (iii).
    #[serde(rename = "empirical_C")]
    pub empirical_c: f64,
    pub worst_case: Sample,
    pub max_ratio_i: f64,
    pub max_ratio_ii: f64,
}

// Relative slack for the explicit bounds: a few ulps of the evaluated
// transcendental functions.
const ROUNDING_SLACK: f64 = 8.0 * f64::EPSILON;

/// Random check of the pointwise bounds on f_ε.
pub fn verify_bound_suite(samples: usize, eps_max: f64, n: usize, seed: u64) -> Result<BoundReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be >= 1".into()));
    }
    if !(eps_max > 0.0 && eps_max <= 0.2) {
        return Err(Error::InvalidParameter(format!("eps_max {eps_max} must lie in (0, 0.2]")));
    }
    let base = NonlinearityParams::new(n, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (1e-6f64.ln(), 1e6f64.ln());
    let draw = |rng: &mut ChaCha8Rng| {
        let m = rng.gen_range(lo..=hi).exp();
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    };

    let mut report = BoundReport {
        samples,
        eps_max,
        violations: 0,
        violations_i: 0,
        violations_ii: 0,
        empirical_c: 0.0,
        worst_case: Sample { u: 0.0, v: 0.0, eps: 0.0 },
        max_ratio_i: 0.0,
        max_ratio_ii: 0.0,
    };
    for _ in 0..samples {
        let u = draw(&mut rng);
        let v = draw(&mut rng);
        // (0, eps_max]
        let eps = eps_max * (1.0 - rng.gen::<f64>());
        let params = base.with_eps(eps)?;

        let (l1, r1) = bound_i(&params, u);
        if l1 > r1 * (1.0 + ROUNDING_SLACK) {
            report.violations_i += 1;
        }
        if r1 > 0.0 {
            report.max_ratio_i = report.max_ratio_i.max(l1 / r1);
        }

        let (l2, r2) = bound_ii(&params, u);
        let growth = params.fprime(u).abs() <= params.p() * u.abs().powf(params.q()) * (1.0 + ROUNDING_SLACK);
        if l2 > r2 * (1.0 + ROUNDING_SLACK) || !growth {
            report.violations_ii += 1;
        }
        if r2 > 0.0 {
            report.max_ratio_ii = report.max_ratio_ii.max(l2 / r2);
        }

        let (l3, r3) = bound_iii(&params, u, v);
        if r3 > 0.0 && l3 / r3 > report.empirical_c {
            report.empirical_c = l3 / r3;
            report.worst_case = Sample { u, v, eps };
        }
    }
    report.violations = report.violations_i + report.violations_ii;
    Ok(report)
}

/// Splits ln ln(e + δ^(-r) u) into ln ln(δ^(-r)) plus a shift that decays
/// like (1/r) ln u / |ln δ|.
pub fn loglog_decompose(u: f64, r: f64, delta: f64) -> Result<(f64, f64)> {
    if !(u > 0.0) {
        return Err(Error::Domain { what: "loglog_decompose", at: u });
    }
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("r = {r} must be positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta = {delta} must lie in (0,1)")));
    }
    let rl = r * delta.ln().abs();
    let lead = rl.ln();
    let shift = (((1.0 - rl).exp() + u).ln() / rl).ln_1p();
    Ok((lead, shift))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3(eps: f64) -> NonlinearityParams {
        NonlinearityParams::new(3, eps).unwrap()
    }

    #[test]
    fn exponents() {
        let p = p3(0.0);
        assert_eq!(p.p(), 5.0);
        assert_eq!(p.q(), 4.0);
        assert_eq!(p.critical_exponent(), 6.0);
        assert!(NonlinearityParams::new(2, 0.0).is_err());
        assert!(NonlinearityParams::new(3, -0.1).is_err());
        let p7 = NonlinearityParams::new(7, 0.0).unwrap();
        assert!(p7.q() > 0.0 && p7.q() < 1.0);
    }

    #[test]
    fn f_values() {
        assert_eq!(p3(0.7).f(0.0), 0.0);
        assert_eq!(p3(0.0).f(2.0), 32.0);
        // 1/ln(e+1), reference from 50-digit arithmetic
        assert!((p3(1.0).f(1.0) - 0.761_462_859_614_66).abs() < 1e-15);
    }

    #[test]
    fn fprime_values() {
        assert_eq!(p3(0.0).fprime(1.0), 5.0);
        assert_eq!(p3(0.4).fprime(0.0), 0.0);
        let p = NonlinearityParams::new(4, 0.5).unwrap();
        let h = 1e-6;
        let fd = (p.f(2.0 + h) - p.f(2.0 - h)) / (2.0 * h);
        assert!(((p.fprime(2.0) - fd) / fd).abs() < 1e-6);
    }

    #[test]
    fn fsecond_values() {
        assert_eq!(p3(0.0).fsecond(1.0).unwrap(), 20.0);
        assert_eq!(p3(0.0).fsecond(-1.0).unwrap(), -20.0);
        let p = NonlinearityParams::new(5, 0.3).unwrap();
        let h = 1e-5;
        let fd = (p.fprime(3.0 + h) - p.fprime(3.0 - h)) / (2.0 * h);
        assert!(((p.fsecond(3.0).unwrap() - fd) / fd).abs() < 1e-5);
        let p7 = NonlinearityParams::new(7, 0.1).unwrap();
        assert!(matches!(p7.fsecond(0.0), Err(Error::Domain { .. })));
        assert!(p7.fsecond(0.5).is_ok());
    }

    #[test]
    fn huge_arguments_stay_finite() {
        let big = 1e305;
        let l = ln_e_plus(big);
        assert!((l - big.ln()).abs() < 1e-12);
        let p = NonlinearityParams::new(8, 0.1).unwrap();
        assert!(p.fprime(1e200).is_finite());
    }

    #[test]
    fn zero_row_of_bound_i() {
        assert_eq!(bound_i(&p3(0.05), 0.0), (0.0, 0.0));
    }

    #[test]
    fn bound_suite_small() {
        let r = verify_bound_suite(2000, 0.1, 3, 7).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.empirical_c.is_finite() && r.empirical_c > 0.0);
        assert!(verify_bound_suite(0, 0.1, 3, 7).is_err());
        assert!(verify_bound_suite(10, 0.5, 3, 7).is_err());
    }

    #[test]
    fn bound_suite_is_reproducible() {
        let a = verify_bound_suite(500, 0.1, 4, 11).unwrap();
        let b = verify_bound_suite(500, 0.1, 4, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decomposition() {
        let (lead, shift) = loglog_decompose(1.0, 1.0, 1e-6).unwrap();
        assert!((6.0 * 10f64.ln() * shift).abs() < 1e-2);
        let whole = (E + 1e6f64).ln().ln();
        assert!(((lead + shift) - whole).abs() / whole < 1e-12);
        assert!(loglog_decompose(0.0, 1.0, 0.5).is_err());
        assert!(loglog_decompose(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn decomposition_limit_e_r2() {
        let mut prev = f64::INFINITY;
        for d in [1e-3, 1e-6, 1e-9] {
            let (_, s) = loglog_decompose(E, 2.0, d).unwrap();
            let err = (d.ln().abs() * s - 0.5).abs();
            assert!(err < prev);
            prev = err;
        }
    }
}
