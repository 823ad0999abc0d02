//! Aubin–Talenti bubbles, the kernels of their linearization, and
//! projections onto H¹₀ of the unit ball.

use serde::{Deserialize, Serialize};

use crate::fit::OrderFit;
use crate::quadrature::{integrate, log_integral, radial_integral_seeded, QuadratureSettings, SphereRule};
use crate::{alpha, sphere_area, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleParams {
    pub delta: f64,
    pub xi: Vec<f64>,
}

impl BubbleParams {
    pub fn new(delta: f64, xi: Vec<f64>) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta = {delta} must be positive")));
        }
        if xi.len() < 3 {
            return Err(Error::InvalidParameter("dimension must be >= 3".into()));
        }
        Ok(Self { delta, xi })
    }

    pub fn centered(delta: f64, n: usize) -> Result<Self> {
        Self::new(delta, vec![0.0; n])
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    fn rescale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.xi).map(|(a, b)| (a - b) / self.delta).collect()
    }

    fn amplitude(&self) -> f64 {
        self.delta.powf(-(self.dim() as f64 - 2.0) / 2.0)
    }
}

fn norm2(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum()
}

/// U(y) = α_N (1+|y|²)^(-(N-2)/2), N = y.len().
pub fn eval_u(y: &[f64]) -> f64 {
    let n = y.len();
    alpha(n) * (1.0 + norm2(y)).powf(-(n as f64 - 2.0) / 2.0)
}

pub fn eval_u_scaled(x: &[f64], bp: &BubbleParams) -> f64 {
    bp.amplitude() * eval_u(&bp.rescale(x))
}

/// ψ⁰ for j = 0, ψ^j for j = 1..N.
pub fn eval_psi(y: &[f64], j: usize) -> Result<f64> {
    let n = y.len();
    let nf = n as f64;
    let s = 1.0 + norm2(y);
    match j {
        0 => Ok((nf - 2.0) / 2.0 * alpha(n) * (s - 2.0) * s.powf(-nf / 2.0)),
        j if j <= n => Ok((nf - 2.0) * alpha(n) * y[j - 1] * s.powf(-nf / 2.0)),
        _ => Err(Error::InvalidParameter(format!("kernel index {j} exceeds N = {n}"))),
    }
}

pub fn eval_psi_scaled(x: &[f64], bp: &BubbleParams, j: usize) -> Result<f64> {
    Ok(bp.amplitude() * eval_psi(&bp.rescale(x), j)?)
}

/// ∫_{R^N} U_{δ,ξ}^p ψ^j_{δ,ξ} by radial and angular quadrature. The
/// integral does not depend on (δ, ξ); the scale factor is kept explicit.
pub fn orthogonality_defect(bp: &BubbleParams, j: usize, settings: &QuadratureSettings) -> Result<f64> {
    let n = bp.dim();
    if j > n {
        return Err(Error::InvalidParameter(format!("kernel index {j} exceeds N = {n}")));
    }
    let nf = n as f64;
    let p = (nf + 2.0) / (nf - 2.0);
    let al = alpha(n);
    let scale = bp.delta.powf(nf - (nf - 2.0) * (p + 1.0) / 2.0);
    let u = move |r: f64| al * (1.0 + r * r).powf(-(nf - 2.0) / 2.0);
    // The exact value is zero, so the tolerance is taken relative to ∫|g|.
    let scaled = |g: &dyn Fn(f64) -> f64| -> Result<f64> {
        let mass = radial_integral_seeded(|r| g(r).abs(), &[1.0], settings).require()?;
        let s = QuadratureSettings { abs_tol: settings.abs_tol.max(settings.rel_tol * mass), ..*settings };
        radial_integral_seeded(g, &[1.0], &s).require()
    };
    if j == 0 {
        let g = |r: f64| u(r).powf(p) * eval_psi(&radial_point(r, n), 0).unwrap_or(0.0) * r.powf(nf - 1.0);
        let v = scaled(&g)?;
        Ok(scale * sphere_area(n) * v)
    } else {
        let radial = |r: f64| u(r).powf(p) * (nf - 2.0) * al * r * (1.0 + r * r).powf(-nf / 2.0) * r.powf(nf - 1.0);
        let v = scaled(&radial)?;
        let rule = SphereRule::new(n, 16, 32)?;
        let angular = rule.integrate(|th| th[j - 1]);
        Ok(scale * v * angular)
    }
}

fn radial_point(r: f64, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    y[0] = r;
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectedFunction {
    U,
    Psi(usize),
}

/// Closed-form projection onto H¹₀(B₁) of a centered bubble or kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredProjection {
    pub n: usize,
    pub delta: f64,
    pub which: ProjectedFunction,
    bp: BubbleParams,
}

impl CenteredProjection {
    /// The harmonic part subtracted from the free-space function.
    pub fn correction(&self, x: &[f64]) -> f64 {
        let nf = self.n as f64;
        let al = alpha(self.n);
        let d = self.delta;
        let d2 = 1.0 + d * d;
        match self.which {
            ProjectedFunction::U => al * d.powf((nf - 2.0) / 2.0) * d2.powf(-(nf - 2.0) / 2.0),
            ProjectedFunction::Psi(0) => (nf - 2.0) / 2.0 * al * d.powf((nf - 2.0) / 2.0) * (1.0 - d * d) * d2.powf(-nf / 2.0),
            ProjectedFunction::Psi(j) => (nf - 2.0) * al * d.powf(nf / 2.0) * d2.powf(-nf / 2.0) * x[j - 1],
        }
    }

    /// The free-space function before projection.
    pub fn free(&self, x: &[f64]) -> f64 {
        match self.which {
            ProjectedFunction::U => eval_u_scaled(x, &self.bp),
            ProjectedFunction::Psi(j) => eval_psi_scaled(x, &self.bp, j).unwrap_or(f64::NAN),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.free(x) - self.correction(x)
    }
}

/// Projection onto the unit ball for ξ = 0, as a closed form.
pub fn project_ball_centered(bp: &BubbleParams, which: ProjectedFunction) -> Result<CenteredProjection> {
    if bp.xi.iter().any(|v| *v != 0.0) {
        return Err(Error::OffCenter);
    }
    if let ProjectedFunction::Psi(j) = which {
        if j > bp.dim() {
            return Err(Error::InvalidParameter(format!("kernel index {j} exceeds N = {}", bp.dim())));
        }
    }
    Ok(CenteredProjection { n: bp.dim(), delta: bp.delta, which, bp: bp.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereSettings {
    pub polar: usize,
    pub azimuth: usize,
    /// Tolerated change between the rule and its doubled refinement.
    pub tol: f64,
}

impl Default for SphereSettings {
    fn default() -> Self {
        Self { polar: 24, azimuth: 48, tol: 1e-9 }
    }
}

/// Poisson integral over the unit sphere of `boundary` evaluated at |x| < 1.
pub fn harmonic_extension_ball<G: Fn(&[f64]) -> f64>(boundary: G, x: &[f64], settings: &SphereSettings) -> Result<f64> {
    let n = x.len();
    let r2 = norm2(x);
    if r2 >= 1.0 {
        return Err(Error::OutsideDomain(x.to_vec()));
    }
    let poisson = |rule: &SphereRule| {
        let rule = rule.aligned_to(x);
        let w = sphere_area(n);
        rule.integrate(|z| {
            let d2: f64 = z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            (1.0 - r2) / (w * d2.powf(n as f64 / 2.0)) * boundary(z)
        })
    };
    let coarse = poisson(&SphereRule::new(n, settings.polar, settings.azimuth)?);
    let fine = poisson(&SphereRule::new(n, 2 * settings.polar, 2 * settings.azimuth)?);
    if (fine - coarse).abs() > settings.tol * (1.0 + fine.abs()) {
        return Err(Error::Quadrature { value: fine, error: (fine - coarse).abs() });
    }
    Ok(fine)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expansion {
    E1,
    E2,
    E3,
}

impl Expansion {
    /// Order asserted for the remainder (the lower bound checked is this minus 0.15).
    pub fn asserted_order(&self, n: usize) -> f64 {
        (n as f64 + 2.0) / 2.0
    }
}

type Model = Box<dyn Fn(&[f64]) -> f64>;

/// Sup over a sample grid of the remainder in the projection expansions on
/// the centered unit ball, fitted against δ.
pub fn expansion_residual(which: Expansion, deltas: &[f64], n: usize) -> Result<OrderFit> {
    if deltas.len() < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: deltas.len() });
    }
    if deltas.iter().any(|d| !(*d > 0.0 && *d <= 0.3)) {
        return Err(Error::InvalidParameter("expansion deltas must lie in (0, 0.3]".into()));
    }
    let nf = n as f64;
    let al = alpha(n);
    let mut ds = deltas.to_vec();
    ds.sort_by(|a, b| b.total_cmp(a));
    let samples = sample_points(n);
    let mut residuals = Vec::with_capacity(ds.len());
    for &d in &ds {
        let bp = BubbleParams::centered(d, n)?;
        let (proj, model): (CenteredProjection, Model) = match which {
            // H(x, 0) = 1 on the unit ball.
            Expansion::E1 => (
                project_ball_centered(&bp, ProjectedFunction::U)?,
                Box::new(move |_: &[f64]| al * d.powf((nf - 2.0) / 2.0)),
            ),
            Expansion::E2 => (
                project_ball_centered(&bp, ProjectedFunction::Psi(0))?,
                Box::new(move |_: &[f64]| (nf - 2.0) / 2.0 * al * d.powf((nf - 2.0) / 2.0)),
            ),
            // ∂_{ξ_1} H(x, ξ) at ξ = 0 equals (N-2) x_1.
            Expansion::E3 => (
                project_ball_centered(&bp, ProjectedFunction::Psi(1))?,
                Box::new(move |x: &[f64]| al * d.powf(nf / 2.0) * (nf - 2.0) * x[0]),
            ),
        };
        let sup = samples
            .iter()
            .map(|x| (proj.eval(x) - proj.free(x) + model(x)).abs())
            .fold(0.0, f64::max);
        residuals.push(sup);
    }
    let name = format!("{which:?}").to_lowercase();
    OrderFit::from_data(&name, &ds, &residuals, which.asserted_order(n))
}

fn sample_points(n: usize) -> Vec<Vec<f64>> {
    let diag = 1.0 / (n as f64).sqrt();
    let mut pts = Vec::new();
    for k in 0..=64 {
        let r = k as f64 / 64.0 * 0.999;
        let mut a = vec![0.0; n];
        a[0] = r;
        pts.push(a);
        pts.push(vec![r * diag; n]);
    }
    pts
}

/// ⟨Pψ^i, Pψ^j⟩ = ∫_B p U^(p-1) ψ^i P ψ^j for centered kernels.
pub fn gram_matrix(n: usize, delta: f64, settings: &QuadratureSettings) -> Result<Vec<Vec<f64>>> {
    let nf = n as f64;
    let p = (nf + 2.0) / (nf - 2.0);
    let bp = BubbleParams::centered(delta, n)?;
    let rule = SphereRule::new(n, 8, 16)?;
    let projections = (0..=n)
        .map(|j| project_ball_centered(&bp, ProjectedFunction::Psi(j)))
        .collect::<Result<Vec<_>>>()?;
    let mut gram = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..=n {
        for j in i..=n {
            let shell = |r: f64| {
                rule.integrate(|th| {
                    let x: Vec<f64> = th.iter().map(|v| v * r).collect();
                    let u = eval_u_scaled(&x, &bp);
                    p * u.powf(p - 1.0) * projections[i].free(&x) * projections[j].eval(&x)
                }) * r.powf(nf - 1.0)
            };
            let core = integrate(shell, 0.0, delta, &[], settings);
            let outer = log_integral(shell, delta, 1.0, settings);
            let v = core.value + outer.value;
            gram[i][j] = v;
            gram[j][i] = v;
        }
    }
    Ok(gram)
}
