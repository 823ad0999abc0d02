//! The ε ↔ δ rate dictionary and the limit reduced system
//!
//! ```text
//! F(d, ξ) = (A1 ρ(ξ) - A2 d,  A3 ∇ρ(ξ))
//! ```
//!
//! whose root (d0, ξ0) predicts where and how fast the solution concentrates.

use serde::Serialize;

use crate::greenfn::{find_critical_point_with, robin_with, CriticalPoint, DomainSpec, GridSettings};
use crate::quadrature::{structural_constants, QuadratureSettings};
use crate::{alpha, Error, Result};

/// Right end δ_N = e^(-1/(N-2)) of the interval where δ^(N-2)|ln δ| increases.
pub fn delta_n(n: usize) -> f64 {
    (-1.0 / (n as f64 - 2.0)).exp()
}

fn check_rate_args(d: f64, n: usize) -> Result<()> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("N = {n} must be >= 3")));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidParameter(format!("d = {d} must be positive")));
    }
    Ok(())
}

/// ε = d δ^(N-2) |ln δ|.
pub fn epsilon_of_delta(d: f64, delta: f64, n: usize) -> Result<f64> {
    check_rate_args(d, n)?;
    if !(delta > 0.0 && delta < delta_n(n)) {
        return Err(Error::Domain { what: "delta outside the monotone interval", at: delta });
    }
    Ok(d * delta.powf(n as f64 - 2.0) * -delta.ln())
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain { what: "epsilon outside (0, 1)", at: eps });
    }
    Ok(())
}

/// Closed-rate inverse δ = (d ε / |ln ε|)^(1/(N-2)).
pub fn delta_of_epsilon_closed(d: f64, eps: f64, n: usize) -> Result<f64> {
    check_rate_args(d, n)?;
    check_epsilon(eps)?;
    Ok((d * eps / -eps.ln()).powf(1.0 / (n as f64 - 2.0)))
}

/// Exact inverse of [`epsilon_of_delta`] on (0, δ_N), by bisection in ln δ.
pub fn delta_of_epsilon(d: f64, eps: f64, n: usize) -> Result<f64> {
    check_rate_args(d, n)?;
    check_epsilon(eps)?;
    let m = n as f64 - 2.0;
    let top = delta_n(n);
    let eps_max = d * top.powf(m) / m;
    if eps >= eps_max {
        return Err(Error::Domain { what: "epsilon beyond the range of the rate map", at: eps });
    }
    // g(s) = ln d + m s + ln(-s) - ln ε is increasing for s < ln δ_N.
    let target = eps.ln() - d.ln();
    let g = |s: f64| m * s + (-s).ln() - target;
    let mut hi = top.ln();
    let mut lo = hi - 1.0;
    while g(lo) > 0.0 {
        lo = hi - 2.0 * (hi - lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * lo.abs() {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// κ = δ^(N-2)|ln δ| / ε for the closed-rate δ; tends to d/(N-2).
pub fn kappa(d: f64, eps: f64, n: usize) -> Result<f64> {
    let delta = delta_of_epsilon_closed(d, eps, n)?;
    Ok(delta.powf(n as f64 - 2.0) * -delta.ln() / eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReducedConstants {
    #[serde(rename = "A1")]
    pub a1: f64,
    #[serde(rename = "A2")]
    pub a2: f64,
    #[serde(rename = "A3")]
    pub a3: f64,
}

impl ReducedConstants {
    pub fn ratio(&self) -> f64 {
        self.a1 / self.a2
    }
}

/// A1 = α_N A, A2 = 2𝔅/(N-2), A3 = α_N B/2.
pub fn reduced_constants(n: usize, settings: &QuadratureSettings) -> Result<ReducedConstants> {
    let sc = structural_constants(n, settings)?;
    let al = alpha(n);
    let rc = ReducedConstants { a1: al * sc.a, a2: 2.0 * sc.frak_b / (n as f64 - 2.0), a3: al * sc.b / 2.0 };
    if !(rc.a1 > 0.0 && rc.a2 > 0.0 && rc.a3 > 0.0) {
        return Err(Error::InvalidParameter(format!("non-positive reduced constants {rc:?}")));
    }
    Ok(rc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedState {
    pub d: f64,
    pub xi: Vec<f64>,
}

/// Limit reduced map, a vector of length N+1.
pub fn f_limit(state: &ReducedState, domain: &DomainSpec, constants: &ReducedConstants) -> Result<Vec<f64>> {
    let ev = robin_with(domain, &state.xi, &GridSettings::default())?;
    let mut out = Vec::with_capacity(ev.grad.len() + 1);
    out.push(constants.a1 * ev.rho - constants.a2 * state.d);
    out.extend(ev.grad.iter().map(|g| constants.a3 * g));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedSolution {
    pub xi0: Vec<f64>,
    pub d0: f64,
    pub robin_at_xi0: f64,
    pub constants: ReducedConstants,
    #[serde(skip)]
    pub critical_point: CriticalPoint,
}

/// Root of the limit map: ξ0 a non-degenerate critical point of ρ and
/// d0 = (A1/A2) ρ(ξ0).
pub fn solve_reduced(domain: &DomainSpec, x0: &[f64], constants: &ReducedConstants, tol: f64) -> Result<ReducedSolution> {
    solve_reduced_with(domain, x0, constants, tol, &GridSettings::default())
}

pub fn solve_reduced_with(
    domain: &DomainSpec,
    x0: &[f64],
    constants: &ReducedConstants,
    tol: f64,
    grid: &GridSettings,
) -> Result<ReducedSolution> {
    let cp = find_critical_point_with(domain, x0, tol, grid)?;
    if !cp.nondegenerate {
        let smax = cp.hessian.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        return Err(Error::Degenerate { sigma_min: cp.sigma_min, threshold: 1e-6 * (1.0 + smax) });
    }
    Ok(ReducedSolution {
        xi0: cp.xi.clone(),
        d0: constants.ratio() * cp.rho,
        robin_at_xi0: cp.rho,
        constants: *constants,
        critical_point: cp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowupPrediction {
    /// Closed-rate width (d0 ε/|ln ε|)^(1/(N-2)).
    pub delta_pred: f64,
    pub umax_pred: f64,
    /// Width from the exact inverse of ε = d0 δ^(N-2)|ln δ|.
    pub delta_balanced: f64,
    pub umax_balanced: f64,
}

pub fn predicted_blowup(eps: f64, d0: f64, n: usize) -> Result<BlowupPrediction> {
    let c = (n as f64 - 2.0) / 2.0;
    let delta_pred = delta_of_epsilon_closed(d0, eps, n)?;
    let delta_balanced = delta_of_epsilon(d0, eps, n)?;
    Ok(BlowupPrediction {
        delta_pred,
        umax_pred: alpha(n) * delta_pred.powf(-c),
        delta_balanced,
        umax_balanced: alpha(n) * delta_balanced.powf(-c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    #[test]
    fn monotone_endpoint() {
        assert!((delta_n(3) - 1.0 / E).abs() < 1e-15);
        assert!((delta_n(4) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn forward_rate() {
        let e = epsilon_of_delta(1.0, 0.1, 3).unwrap();
        assert!((e - 0.1 * 10f64.ln()).abs() < 1e-15);
        assert!(epsilon_of_delta(1.0, 0.5, 3).is_err());
        assert!(epsilon_of_delta(-1.0, 0.1, 3).is_err());
    }

    #[test]
    fn exact_inverse() {
        for n in [3, 4, 5] {
            for eps in [1e-2, 1e-5, 1e-9] {
                let d = 16.0 / PI;
                let delta = delta_of_epsilon(d, eps, n).unwrap();
                let back = epsilon_of_delta(d, delta, n).unwrap();
                assert!(((back - eps) / eps).abs() < 1e-12, "{n} {eps} {back}");
            }
        }
        assert!(delta_of_epsilon(1.0, 0.5, 3).is_err());
        assert!(delta_of_epsilon(1.0, 1.5, 3).is_err());
    }

    #[test]
    fn kappa_trend() {
        let k: Vec<f64> = [1e-3, 1e-6, 1e-9].iter().map(|e| kappa(1.0, *e, 3).unwrap()).collect();
        assert!(k.windows(2).all(|w| (w[1] - 1.0).abs() < (w[0] - 1.0).abs()));
        assert!((k[2] - 1.0).abs() < 0.2);
    }

    #[test]
    fn closed_rate_example() {
        let b = predicted_blowup(1e-4, 16.0 / PI, 3).unwrap();
        assert!((b.delta_pred - 5.529e-5).abs() < 1e-8);
        let d2 = delta_of_epsilon_closed(32.0 / PI, 1e-4, 4).unwrap();
        let d1 = delta_of_epsilon_closed(16.0 / PI, 1e-4, 4).unwrap();
        assert!((d2 / d1 - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn ball_root_n3() {
        let rc = reduced_constants(3, &QuadratureSettings::default()).unwrap();
        assert!((rc.a1 - 2.0 * PI * 3f64.sqrt()).abs() < 1e-9);
        assert!((rc.a2 - 3f64.sqrt() * PI * PI / 8.0).abs() < 1e-9);
        let sol = solve_reduced(&DomainSpec::UnitBall { n: 3 }, &[0.2, 0.1, -0.1], &rc, 1e-13).unwrap();
        assert!((sol.d0 - 16.0 / PI).abs() < 1e-8);
        let res = f_limit(&ReducedState { d: sol.d0, xi: sol.xi0.clone() }, &DomainSpec::UnitBall { n: 3 }, &rc).unwrap();
        assert!(res.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn limit_map_values() {
        let rc = reduced_constants(3, &QuadratureSettings::default()).unwrap();
        let ball = DomainSpec::UnitBall { n: 3 };
        let v = f_limit(&ReducedState { d: 1.0, xi: vec![0.0; 3] }, &ball, &rc).unwrap();
        assert!((v[0] - (rc.a1 - rc.a2)).abs() < 1e-12);
        let v = f_limit(&ReducedState { d: 1.0, xi: vec![0.5, 0.0, 0.0] }, &ball, &rc).unwrap();
        // ∇(1-|x|²)^(-1) = 2x/(1-|x|²)² = 16/9 at x = (0.5, 0, 0)
        assert!((v[1] - rc.a3 * 16.0 / 9.0).abs() < 1e-10);
        assert!(f_limit(&ReducedState { d: 1.0, xi: vec![1.0, 0.0, 0.0] }, &ball, &rc).is_err());
    }
}
