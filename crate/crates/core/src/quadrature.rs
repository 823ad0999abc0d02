//! Adaptive Gauss–Kronrod quadrature, product rules on spheres, and the
//! integral identities built on the standard bubble.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::fit::{loglog_slope, OrderFit};
use crate::nonlinearity::NonlinearityParams;
use crate::{alpha, sphere_area, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self { abs_tol: 1e-14, rel_tol: 1e-12, max_subdivisions: 2000 }
    }
}

impl QuadratureSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("quadrature tolerances must be positive".into()));
        }
        if self.max_subdivisions < 10 {
            return Err(Error::InvalidParameter("max_subdivisions must be >= 10".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
    pub intervals: usize,
}

impl QuadResult {
    /// Converts a non-converged result into an error.
    pub fn require(self) -> Result<f64> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(Error::Quadrature { value: self.value, error: self.error })
        }
    }
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_22,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_725,
    0.054_755_896_574_351_995,
    0.075_039_674_810_919_96,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_84,
    0.134_709_217_311_473_34,
    0.142_775_938_577_060_09,
    0.147_739_104_901_338_49,
    0.149_445_554_002_916_9,
];

// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

/// One 21-point Kronrod panel with its embedded 10-point Gauss estimate.
/// Returns (value, error estimate) using the QUADPACK error heuristic.
pub fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[10];
    let mut rg = 0.0;
    let mut rabs = rk.abs();
    let mut fv = [(0.0, 0.0); 10];
    for (j, x) in XGK.iter().take(10).enumerate() {
        let f1 = f(c - h * x);
        let f2 = f(c + h * x);
        fv[j] = (f1, f2);
        rk += WGK[j] * (f1 + f2);
        rabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            rg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * rk;
    let mut rasc = WGK[10] * (fc - mean).abs();
    for (j, (f1, f2)) in fv.iter().enumerate() {
        rasc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
    }
    let value = rk * h;
    let rabs = rabs * h.abs();
    let rasc = rasc * h.abs();
    let mut err = ((rk - rg) * h).abs();
    if rasc != 0.0 && err != 0.0 {
        err = rasc * (200.0 * err / rasc).powf(1.5).min(1.0);
    }
    if rabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * rabs);
    }
    (value, err)
}

/// Globally adaptive integration on [a, b]. Interior `breaks` seed the
/// initial partition.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], settings: &QuadratureSettings) -> QuadResult {
    let mut pts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|x| *x > a && *x < b).collect();
    inner.sort_by(f64::total_cmp);
    pts.extend(inner);
    pts.push(b);
    let mut panels: Vec<(f64, f64, f64, f64)> = pts
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (v, e) = gk21(&f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    loop {
        let value: f64 = panels.iter().map(|p| p.2).sum();
        let error: f64 = panels.iter().map(|p| p.3).sum();
        let target = settings.abs_tol.max(settings.rel_tol * value.abs());
        if error <= target {
            return QuadResult { value, error, converged: true, intervals: panels.len() };
        }
        if panels.len() >= settings.max_subdivisions {
            return QuadResult { value, error, converged: false, intervals: panels.len() };
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("at least one panel");
        let (lo, hi, _, _) = panels[worst];
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            // Interval cannot be split further in floating point.
            return QuadResult { value, error, converged: false, intervals: panels.len() };
        }
        let (v1, e1) = gk21(&f, lo, mid);
        let (v2, e2) = gk21(&f, mid, hi);
        panels[worst] = (lo, mid, v1, e1);
        panels.push((mid, hi, v2, e2));
    }
}

/// ∫_0^∞ f(r) dr through r = t/(1-t).
pub fn radial_integral<F: Fn(f64) -> f64>(f: F, settings: &QuadratureSettings) -> QuadResult {
    radial_integral_seeded(f, &[], settings)
}

/// As [`radial_integral`], with radii where the integrand changes character.
pub fn radial_integral_seeded<F: Fn(f64) -> f64>(f: F, seeds: &[f64], settings: &QuadratureSettings) -> QuadResult {
    let breaks: Vec<f64> = seeds.iter().map(|r| r / (1.0 + r)).collect();
    integrate(
        |t| {
            let s = 1.0 - t;
            f(t / s) / (s * s)
        },
        0.0,
        1.0,
        &breaks,
        settings,
    )
}

/// ∫_a^b f(r) dr with a > 0 through r = e^s.
pub fn log_integral<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, settings: &QuadratureSettings) -> QuadResult {
    integrate(
        |s| {
            let r = s.exp();
            f(r) * r
        },
        a.ln(),
        b.ln(),
        &[],
        settings,
    )
}

fn combine(parts: &[QuadResult]) -> QuadResult {
    QuadResult {
        value: parts.iter().map(|p| p.value).sum(),
        error: parts.iter().map(|p| p.error).sum(),
        converged: parts.iter().all(|p| p.converged),
        intervals: parts.iter().map(|p| p.intervals).sum(),
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if n == 1 { (z, 1.0) } else { (p1, p0) };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Product rule on the unit sphere S^(N-1) in hyperspherical coordinates:
/// Gauss–Legendre in each polar angle, equispaced in the azimuth.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub n: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    pub fn new(n: usize, polar: usize, azimuth: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter("sphere rule needs N >= 2".into()));
        }
        let (gx, gw) = gauss_legendre(polar);
        let mut points = vec![Vec::with_capacity(n)];
        let mut weights = vec![1.0];
        let mut radius = vec![1.0];
        // Polar angles θ_1..θ_{N-2} with weight sin^(N-1-k) θ_k.
        for k in 1..n - 1 {
            let power = (n - 1 - k) as i32;
            let mut np = Vec::new();
            let mut nw = Vec::new();
            let mut nr = Vec::new();
            for ((pt, w), rad) in points.iter().zip(&weights).zip(&radius) {
                for i in 0..polar {
                    // With t = cos θ the weight is (1-t²)^((power-1)/2): a
                    // polynomial for odd powers (Gauss–Legendre), and a
                    // polynomial times √(1-t²) for even ones (Chebyshev, second kind).
                    let (c, s, wt) = if power % 2 == 1 {
                        let x = gx[i];
                        let s = (1.0 - x * x).sqrt();
                        (x, s, gw[i] * s.powi(power - 1))
                    } else {
                        let th = PI * (i + 1) as f64 / (polar + 1) as f64;
                        let s = th.sin();
                        (th.cos(), s, PI / (polar + 1) as f64 * s * s * s.powi(power - 2))
                    };
                    let mut q: Vec<f64> = pt.clone();
                    q.push(rad * c);
                    np.push(q);
                    nw.push(w * wt);
                    nr.push(rad * s);
                }
            }
            points = np;
            weights = nw;
            radius = nr;
        }
        let mut np = Vec::new();
        let mut nw = Vec::new();
        let dphi = 2.0 * PI / azimuth as f64;
        for ((pt, w), rad) in points.iter().zip(&weights).zip(&radius) {
            for m in 0..azimuth {
                let phi = (m as f64 + 0.5) * dphi;
                let mut q = pt.clone();
                q.push(rad * phi.cos());
                q.push(rad * phi.sin());
                np.push(q);
                nw.push(w * dphi);
            }
        }
        Ok(Self { n, points: np, weights: nw })
    }

    /// Same rule with its polar axis e_1 carried onto `axis` by a reflection.
    pub fn aligned_to(&self, axis: &[f64]) -> Self {
        let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return self.clone();
        }
        let d: Vec<f64> = axis.iter().map(|v| v / norm).collect();
        let mut v = d.iter().map(|x| -x).collect::<Vec<f64>>();
        v[0] += 1.0;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv < 1e-30 {
            return self.clone();
        }
        let points = self
            .points
            .iter()
            .map(|p| {
                let s = 2.0 * p.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / vv;
                p.iter().zip(&v).map(|(a, b)| a - s * b).collect()
            })
            .collect();
        Self { n: self.n, points, weights: self.weights.clone() }
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}

/// Constants of the standard bubble U = α_N (1+|y|²)^(-(N-2)/2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructuralConstants {
    pub n: usize,
    /// p ∫ U^(p-1) ψ⁰
    #[serde(rename = "A")]
    pub a: f64,
    /// ∫ U^p
    #[serde(rename = "B")]
    pub b: f64,
    /// -∫ U^p ln U ψ⁰
    #[serde(rename = "frakB")]
    pub frak_b: f64,
    #[serde(rename = "frakB_closed")]
    pub frak_b_closed: f64,
    /// ∫ U^(2*)
    pub sobolev_mass: f64,
    /// ∫ |∇U|²
    pub dirichlet_energy: f64,
}

impl StructuralConstants {
    pub fn frak_b_rel_error(&self) -> f64 {
        ((self.frak_b - self.frak_b_closed) / self.frak_b_closed).abs()
    }

    pub fn relation_rel_error(&self) -> f64 {
        let target = (self.n as f64 - 2.0) * self.b / 2.0;
        ((self.a - target) / target).abs()
    }

    pub fn sobolev_rel_error(&self) -> f64 {
        ((self.sobolev_mass - self.dirichlet_energy) / self.dirichlet_energy).abs()
    }
}

/// Γ(N/2)π^(N/2) / (4Γ(N+1)) · N^(N/2) (N-2)^((N+4)/2)
pub fn frak_b_closed_form(n: usize) -> f64 {
    let nf = n as f64;
    gamma(nf / 2.0) * PI.powf(nf / 2.0) / (4.0 * gamma(nf + 1.0)) * nf.powf(nf / 2.0) * (nf - 2.0).powf((nf + 4.0) / 2.0)
}

pub fn structural_constants(n: usize, settings: &QuadratureSettings) -> Result<StructuralConstants> {
    if !(3..=8).contains(&n) {
        return Err(Error::InvalidParameter(format!("N = {n} outside 3..=8")));
    }
    settings.validate()?;
    let nf = n as f64;
    let al = alpha(n);
    let p = (nf + 2.0) / (nf - 2.0);
    let c = (nf - 2.0) / 2.0;
    let w = sphere_area(n);
    let ln_u = move |r: f64| al.ln() - c * (r * r).ln_1p();
    let u = move |r: f64| ln_u(r).exp();
    let psi0 = move |r: f64| c * al * (r * r - 1.0) * (1.0 + r * r).powf(-nf / 2.0);
    let jac = move |r: f64| w * r.powf(nf - 1.0);
    let seeds = [1.0];

    let b = radial_integral_seeded(|r| u(r).powf(p) * jac(r), &seeds, settings).require()?;
    let a = radial_integral_seeded(|r| p * u(r).powf(p - 1.0) * psi0(r) * jac(r), &seeds, settings).require()?;
    let frak_b = -radial_integral_seeded(|r| u(r).powf(p) * ln_u(r) * psi0(r) * jac(r), &seeds, settings).require()?;
    let sobolev_mass = radial_integral_seeded(|r| u(r).powf(p + 1.0) * jac(r), &seeds, settings).require()?;
    let grad = move |r: f64| al * (nf - 2.0) * r * (1.0 + r * r).powf(-nf / 2.0);
    let dirichlet_energy = radial_integral_seeded(|r| grad(r).powi(2) * jac(r), &seeds, settings).require()?;
    Ok(StructuralConstants {
        n,
        a,
        b,
        frak_b,
        frak_b_closed: frak_b_closed_form(n),
        sobolev_mass,
        dirichlet_energy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentKind {
    U,
    Psi0,
    Psij,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Below,
    Threshold,
    Above,
}

/// ∫ over the unit ball of U_{δ,0}^q, |ψ⁰_{δ,0}|^q or |ψ^j_{δ,0}|^q.
pub fn bubble_moment(kind: MomentKind, q: f64, delta: f64, n: usize, settings: &QuadratureSettings) -> Result<f64> {
    let nf = n as f64;
    if n < 3 {
        return Err(Error::InvalidParameter(format!("N = {n} must be >= 3")));
    }
    let two_star = 2.0 * nf / (nf - 2.0);
    if !(q > 0.0 && q <= two_star) {
        return Err(Error::InvalidParameter(format!("q = {q} outside (0, 2*]")));
    }
    if !(delta > 0.0 && delta <= 0.3) {
        return Err(Error::InvalidParameter(format!("delta = {delta} outside (0, 0.3]")));
    }
    let al = alpha(n);
    let c = (nf - 2.0) / 2.0;
    let (profile, angular): (Box<dyn Fn(f64) -> f64>, f64) = match kind {
        MomentKind::U => (Box::new(move |r: f64| al * (1.0 + r * r).powf(-c)), sphere_area(n)),
        MomentKind::Psi0 => (
            Box::new(move |r: f64| (c * al * (r * r - 1.0) * (1.0 + r * r).powf(-nf / 2.0)).abs()),
            sphere_area(n),
        ),
        MomentKind::Psij => (
            Box::new(move |r: f64| (nf - 2.0) * al * r * (1.0 + r * r).powf(-nf / 2.0)),
            // ∫_S |θ_j|^q
            2.0 * PI.powf((nf - 1.0) / 2.0) * gamma((q + 1.0) / 2.0) / gamma((nf + q) / 2.0),
        ),
    };
    let g = |r: f64| profile(r).powf(q) * r.powf(nf - 1.0);
    let outer = 1.0 / delta;
    let inner = integrate(g, 0.0, 1.0, &[], settings);
    let tail = log_integral(g, 1.0, outer, settings);
    let total = combine(&[inner, tail]).require()?;
    Ok(angular * delta.powf(nf - c * q) * total)
}

/// Exponent regime of the moment and its predicted δ-order.
pub fn moment_exponent(kind: MomentKind, q: f64, n: usize) -> (Regime, f64) {
    let nf = n as f64;
    let c = (nf - 2.0) / 2.0;
    let (threshold, below) = match kind {
        MomentKind::U | MomentKind::Psi0 => (nf / (nf - 2.0), c * q),
        MomentKind::Psij => (nf / (nf - 1.0), nf * q / 2.0),
    };
    let above = nf - c * q;
    if (q - threshold).abs() <= 1e-12 * threshold {
        (Regime::Threshold, above)
    } else if q < threshold {
        (Regime::Below, below)
    } else {
        (Regime::Above, above)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentFit {
    pub kind: MomentKind,
    pub q: f64,
    pub regime: Regime,
    pub slope: f64,
    pub expected: f64,
    /// Moment divided by δ^expected (and by |ln δ| at the threshold).
    pub normalized: Vec<f64>,
    pub deltas: Vec<f64>,
    pub values: Vec<f64>,
}

impl MomentFit {
    pub fn relative_slope_error(&self) -> f64 {
        ((self.slope - self.expected) / self.expected).abs()
    }
}

/// Log-log slope of `bubble_moment` over a δ grid; at the threshold the
/// |ln δ| factor is divided out before fitting.
pub fn moment_exponent_fit(kind: MomentKind, q: f64, deltas: &[f64], n: usize, settings: &QuadratureSettings) -> Result<MomentFit> {
    if deltas.len() < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: deltas.len() });
    }
    if deltas.iter().any(|d| *d > 0.2) {
        return Err(Error::InvalidParameter("moment fits use delta <= 0.2".into()));
    }
    let (regime, expected) = moment_exponent(kind, q, n);
    let values = deltas
        .iter()
        .map(|d| bubble_moment(kind, q, *d, n, settings))
        .collect::<Result<Vec<_>>>()?;
    let log_factor = |d: f64| if regime == Regime::Threshold { d.ln().abs() } else { 1.0 };
    let reduced: Vec<f64> = values.iter().zip(deltas).map(|(v, d)| v / log_factor(*d)).collect();
    let slope = loglog_slope(deltas, &reduced)?.slope;
    let normalized = reduced.iter().zip(deltas).map(|(v, d)| v / d.powf(expected)).collect();
    Ok(MomentFit { kind, q, regime, slope, expected, normalized, deltas: deltas.to_vec(), values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormEstimate {
    S1,
    S2,
    S11,
    S12,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsRule {
    Fixed(f64),
    /// ε = d δ^(N-2) |ln δ|
    Rate(f64),
}

impl EpsRule {
    pub fn epsilon(&self, delta: f64, n: usize) -> f64 {
        match *self {
            EpsRule::Fixed(e) => e,
            EpsRule::Rate(d) => d * delta.powi(n as i32 - 2) * delta.ln().abs(),
        }
    }
}

/// Order and log power claimed for the s1/s2 norms.
pub fn norm_estimate_order(which: NormEstimate, n: usize) -> (f64, f64) {
    let nf = n as f64;
    match which {
        NormEstimate::S1 => match n {
            3..=5 => (nf - 2.0, 0.0),
            6 => (4.0, 2.0 / 3.0),
            _ => ((nf + 2.0) / 2.0, 0.0),
        },
        NormEstimate::S2 => match n {
            3 => (1.0, 0.0),
            4 => (2.0, 0.5),
            _ => (2.0, 0.0),
        },
        NormEstimate::S11 | NormEstimate::S12 => (0.0, 0.0),
    }
}

/// L^m norm on the unit ball of a radial function, split at r = δ.
fn ball_norm<F: Fn(f64) -> f64>(g: F, m: f64, delta: f64, n: usize, settings: &QuadratureSettings) -> Result<f64> {
    let nf = n as f64;
    let h = |r: f64| g(r).abs().powf(m) * r.powf(nf - 1.0);
    let core = integrate(h, 0.0, delta, &[], settings);
    let outer = log_integral(h, delta, 1.0, settings);
    let total = combine(&[core, outer]).require()?;
    Ok((sphere_area(n) * total).powf(1.0 / m))
}

/// Norm of one of the s1, s2, s11, s12 differences at a single δ.
pub fn norm_estimate_value(which: NormEstimate, delta: f64, eps: f64, n: usize, settings: &QuadratureSettings) -> Result<f64> {
    let nf = n as f64;
    let al = alpha(n);
    let c = (nf - 2.0) / 2.0;
    let p = (nf + 2.0) / (nf - 2.0);
    let shift = al * delta.powf(c) * (1.0 + delta * delta).powf(-c);
    let bubble = move |r: f64| delta.powf(-c) * al * (1.0 + (r / delta).powi(2)).powf(-c);
    let fe = NonlinearityParams::new(n, eps)?;
    match which {
        NormEstimate::S1 => ball_norm(
            |r| {
                let u = bubble(r);
                u.powf(p) * (p * (-shift / u).ln_1p()).exp_m1()
            },
            2.0 * nf / (nf + 2.0),
            delta,
            n,
            settings,
        ),
        NormEstimate::S2 => ball_norm(
            |r| {
                let u = bubble(r);
                p * u.powf(p - 1.0) * ((p - 1.0) * (-shift / u).ln_1p()).exp_m1()
            },
            nf / 2.0,
            delta,
            n,
            settings,
        ),
        NormEstimate::S11 => ball_norm(
            |r| crate::nonlinearity::bound_i(&fe, bubble(r) - shift).0,
            2.0 * nf / (nf + 2.0),
            delta,
            n,
            settings,
        ),
        NormEstimate::S12 => ball_norm(
            |r| crate::nonlinearity::bound_ii(&fe, bubble(r) - shift).0,
            nf / 2.0,
            delta,
            n,
            settings,
        ),
    }
}

/// δ-scaling of the s-norms with the closed-form centered projection.
///
/// For s1/s2 the slope is fitted after dividing out |ln δ|^k with the
/// claimed log power k, dropping the largest δ; `best_log_power` holds the
/// power minimizing the residual at the claimed order. For s11/s12 the
/// `normalized` column is value/(ε ln|ln δ|).
pub fn norm_estimate_scaling(
    which: NormEstimate,
    deltas: &[f64],
    eps_rule: EpsRule,
    n: usize,
    settings: &QuadratureSettings,
) -> Result<OrderFit> {
    if deltas.len() < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: deltas.len() });
    }
    if deltas.iter().any(|d| !(*d > 0.0 && *d < (-1.0f64).exp())) {
        return Err(Error::InvalidParameter("norm estimates need delta in (0, 1/e)".into()));
    }
    let mut sorted = deltas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let values = sorted
        .iter()
        .map(|d| norm_estimate_value(which, *d, eps_rule.epsilon(*d, n), n, settings))
        .collect::<Result<Vec<_>>>()?;
    let (order, log_power) = norm_estimate_order(which, n);
    let name = format!("{which:?}").to_lowercase();
    match which {
        NormEstimate::S1 | NormEstimate::S2 => {
            let reduced: Vec<f64> = values.iter().zip(&sorted).map(|(v, d)| v / d.ln().abs().powf(log_power)).collect();
            let mut fit = OrderFit::from_data(&name, &sorted, &reduced, order)?;
            fit.residuals = values.clone();
            fit.log_power = log_power;
            fit.best_log_power = Some(best_log_power(&sorted, &values, order));
            Ok(fit)
        }
        NormEstimate::S11 | NormEstimate::S12 => {
            let normalized: Vec<f64> = values
                .iter()
                .zip(&sorted)
                .map(|(v, d)| v / (eps_rule.epsilon(*d, n) * d.ln().abs().ln()))
                .collect();
            let mut fit = OrderFit::from_data(&name, &sorted, &values, order)?;
            fit.normalized = Some(normalized);
            Ok(fit)
        }
    }
}

/// k minimizing Σ (ln v - order·ln δ - k ln|ln δ| - c)².
fn best_log_power(deltas: &[f64], values: &[f64], order: f64) -> f64 {
    let x: Vec<f64> = deltas.iter().map(|d| d.ln().abs().ln()).collect();
    let y: Vec<f64> = values.iter().zip(deltas).map(|(v, d)| v.ln() - order * d.ln()).collect();
    crate::fit::least_squares(&x, &y).map(|f| f.slope).unwrap_or(f64::NAN)
}
