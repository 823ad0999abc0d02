//! Radial solves of -Δu = f_ε(u) on the unit ball with u = 0 on the sphere.
//!
//! The mesh is r_0 = 0 followed by nodes uniform in t = ln r up to r_M = 1.
//! In t the equation reads u_tt + (N-2) u_t + r² f(u) = 0, discretized with
//! central differences. At the origin u'(0) = 0 and Δu(0) = N u''(0), which
//! with a quadratic profile through r_1 gives the row 2N(u_1 - u_0) + r_1² f(u_0).
//!
//! Newton's method works well once the iterate sits in the basin of the
//! concentrating solution. Failing that, a discrete shooting bisection on u(0)
//! finds the branch, since the recurrence can be marched from the origin.

use serde::{Deserialize, Serialize};

use crate::fit::{least_squares, median, t_quantile};
use crate::nonlinearity::NonlinearityParams;
use crate::reduced::{delta_n, delta_of_epsilon, delta_of_epsilon_closed};
use crate::{alpha, sphere_area, Error, Result};

/// Right-hand side f(u) together with f'(u).
pub trait Source {
    fn value(&self, u: f64) -> f64;
    fn derivative(&self, u: f64) -> f64;
}

impl Source for NonlinearityParams {
    fn value(&self, u: f64) -> f64 {
        self.f(u)
    }
    fn derivative(&self, u: f64) -> f64 {
        self.fprime(u)
    }
}

/// f ≡ c, for manufactured solutions.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSource(pub f64);

impl Source for ConstantSource {
    fn value(&self, _: f64) -> f64 {
        self.0
    }
    fn derivative(&self, _: f64) -> f64 {
        0.0
    }
}

pub const MIN_NODES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct RadialMesh {
    r: Vec<f64>,
    dt: f64,
}

impl RadialMesh {
    /// Origin plus nodes e^(-(M-1)Δt), ..., e^(-Δt), 1 with r_1 ≤ `r_first`.
    pub fn graded(r_first: f64, dt: f64) -> Result<Self> {
        if !(r_first > 0.0 && r_first < 1.0) {
            return Err(Error::InvalidParameter(format!("first node {r_first} outside (0, 1)")));
        }
        if !(dt > 0.0 && dt.exp() <= 1.2) {
            return Err(Error::InvalidParameter(format!("grading ratio e^{dt} outside (1, 1.2]")));
        }
        let m = ((-r_first.ln() / dt).ceil() as usize + 1).max(MIN_NODES);
        let mut r = Vec::with_capacity(m + 1);
        r.push(0.0);
        for k in 1..=m {
            r.push((-((m - k) as f64) * dt).exp());
        }
        Ok(Self { r, dt })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.r
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Index of the boundary node r_M = 1.
    pub fn m(&self) -> usize {
        self.r.len() - 1
    }

    pub fn ratio(&self) -> f64 {
        self.dt.exp()
    }

    /// Weight of u_0 in the ghost value at r_1 e^(-Δt).
    fn ghost_weight(&self) -> f64 {
        1.0 - (-2.0 * self.dt).exp()
    }

    fn stencil(&self, dim: f64) -> (f64, f64, f64) {
        let a = 1.0 / (self.dt * self.dt);
        let b = (dim - 2.0) / (2.0 * self.dt);
        (a - b, -2.0 * a, a + b)
    }

    /// Linear interpolation in ln r, quadratic through the origin below r_1.
    pub fn interpolate(&self, u: &[f64], s: f64) -> f64 {
        let r1 = self.r[1];
        if s <= r1 {
            return u[0] + (u[1] - u[0]) * (s / r1).powi(2);
        }
        if s >= 1.0 {
            return u[self.m()];
        }
        let x = (s / r1).ln() / self.dt;
        let k = (x.floor() as usize).min(self.m() - 2);
        let w = x - k as f64;
        (1.0 - w) * u[k + 1] + w * u[k + 2]
    }
}

/// Tridiagonal matrix; `lower[i]` couples row i to i-1, `upper[i]` to i+1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// Thomas algorithm without pivoting.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut piv = self.diag[0];
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::SingularHessian);
        }
        c[0] = self.upper[0] / piv;
        d[0] = rhs[0] / piv;
        for i in 1..n {
            piv = self.diag[i] - self.lower[i] * c[i - 1];
            if piv == 0.0 || !piv.is_finite() {
                return Err(Error::SingularHessian);
            }
            c[i] = if i + 1 < n { self.upper[i] / piv } else { 0.0 };
            d[i] = (rhs[i] - self.lower[i] * d[i - 1]) / piv;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Ok(d)
    }
}

/// Residual and Jacobian in the unknowns u_0..u_(M-1); `u` has length M+1
/// and u_M is taken as 0. Interior rows are the t-form of the equation, so
/// they carry the 1/Δt² scale of the second difference.
pub fn residual_and_jacobian<S: Source>(mesh: &RadialMesh, dim: f64, u: &[f64], src: &S) -> (Vec<f64>, Tridiagonal) {
    let m = mesh.m();
    let r = &mesh.r;
    let (cm, c0, cp) = mesh.stencil(dim);
    let gw = mesh.ghost_weight();
    let nn = 2.0 * dim;
    let mut res = vec![0.0; m];
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let at = |k: usize| if k == m { 0.0 } else { u[k] };

    let r1s = r[1] * r[1];
    res[0] = nn * (at(1) - u[0]) + r1s * src.value(u[0]);
    diag[0] = -nn + r1s * src.derivative(u[0]);
    upper[0] = nn;

    for k in 1..m {
        let rk2 = r[k] * r[k];
        let (left, dleft_self, dleft_prev) = if k == 1 {
            // ghost value on the quadratic through the origin
            let ghost = u[0] + (u[1] - u[0]) * (1.0 - gw);
            (ghost, cm * (1.0 - gw), cm * gw)
        } else {
            (u[k - 1], 0.0, cm)
        };
        res[k] = cm * left + c0 * u[k] + cp * at(k + 1) + rk2 * src.value(u[k]);
        diag[k] = c0 + dleft_self + rk2 * src.derivative(u[k]);
        lower[k] = dleft_prev;
        upper[k] = if k + 1 < m { cp } else { 0.0 };
    }
    (res, Tridiagonal { lower, diag, upper })
}

/// Max-norm of the residual measured on the scale of the second difference
/// (interior rows times Δt²), relative to 1 + max|u|.
pub fn residual_norm(mesh: &RadialMesh, res: &[f64], u: &[f64]) -> f64 {
    let dt2 = mesh.dt * mesh.dt;
    let rmax = res.iter().enumerate().map(|(k, v)| if k == 0 { v.abs() } else { v.abs() * dt2 }).fold(0.0, f64::max);
    let umax = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    rmax / (1.0 + umax)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonSettings {
    pub max_iter: usize,
    pub tol: f64,
    /// Smallest damping factor tried by the line search.
    pub min_damping: f64,
    /// Fall back to shooting when plain Newton fails.
    pub shooting: bool,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { max_iter: 40, tol: 1e-10, min_damping: 1e-6, shooting: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialSolution {
    pub mesh: RadialMesh,
    pub dim: f64,
    pub u: Vec<f64>,
    pub epsilon: f64,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
    pub used_shooting: bool,
}

impl RadialSolution {
    pub fn u0(&self) -> f64 {
        self.u[0]
    }
}

fn admissible(u: &[f64]) -> bool {
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = u.iter().cloned().fold(f64::INFINITY, f64::min);
    min >= -1e-8 * max.max(0.0) && u.iter().all(|v| v.is_finite())
}

/// Damped Newton with a backtracking line search on the residual norm.
/// Steps producing min u < -1e-8 max u are rejected.
pub fn newton_iterate<S: Source>(
    mesh: &RadialMesh,
    dim: f64,
    initial: &[f64],
    src: &S,
    settings: &NewtonSettings,
) -> Result<(Vec<f64>, bool, usize, f64)> {
    let m = mesh.m();
    if initial.len() != m + 1 {
        return Err(Error::InvalidParameter(format!("initial guess has {} values for {} nodes", initial.len(), m + 1)));
    }
    let mut u = initial.to_vec();
    u[m] = 0.0;
    let (mut res, mut jac) = residual_and_jacobian(mesh, dim, &u, src);
    let mut norm = residual_norm(mesh, &res, &u);
    for it in 0..settings.max_iter {
        if norm <= settings.tol {
            return Ok((u, true, it, norm));
        }
        let rhs: Vec<f64> = res.iter().map(|v| -v).collect();
        let du = match jac.solve(&rhs) {
            Ok(du) => du,
            Err(_) => return Ok((u, false, it, norm)),
        };
        let mut t = 1.0;
        let mut accepted = None;
        while t >= settings.min_damping {
            let mut trial = u.clone();
            for (v, d) in trial.iter_mut().zip(&du) {
                *v += t * d;
            }
            if admissible(&trial) {
                let (r2, j2) = residual_and_jacobian(mesh, dim, &trial, src);
                let n2 = residual_norm(mesh, &r2, &trial);
                if n2 < (1.0 - 1e-4 * t) * norm {
                    accepted = Some((trial, r2, j2, n2));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, r2, j2, n2)) => {
                u = trial;
                res = r2;
                jac = j2;
                norm = n2;
            }
            None => return Ok((u, false, it + 1, norm)),
        }
    }
    Ok((u, norm <= settings.tol, settings.max_iter, norm))
}

/// March the discrete equations outward from u_0 = γ. Returns the profile and
/// a signed miss: u_M when u stays positive, else -(1 - r) at the first node
/// r where u turns negative.
pub fn shoot<S: Source>(mesh: &RadialMesh, dim: f64, gamma: f64, src: &S) -> (Vec<f64>, f64) {
    let m = mesh.m();
    let r = &mesh.r;
    let (cm, c0, cp) = mesh.stencil(dim);
    let gw = mesh.ghost_weight();
    let mut u = vec![0.0; m + 1];
    u[0] = gamma;
    u[1] = gamma - r[1] * r[1] * src.value(gamma) / (2.0 * dim);
    for k in 1..m {
        let left = if k == 1 { u[0] + (u[1] - u[0]) * (1.0 - gw) } else { u[k - 1] };
        let next = -(cm * left + c0 * u[k] + r[k] * r[k] * src.value(u[k])) / cp;
        if !next.is_finite() {
            return (u, -1.0);
        }
        if next < 0.0 && k + 1 < m {
            return (u, -(1.0 - r[k + 1]));
        }
        u[k + 1] = next;
    }
    let miss = u[m];
    (u, miss)
}

/// Bisection in ln γ on the shooting miss, starting from a guess for u(0).
pub fn shooting_solve<S: Source>(mesh: &RadialMesh, dim: f64, gamma0: f64, src: &S) -> Result<Vec<f64>> {
    if !(gamma0 > 0.0 && gamma0.is_finite()) {
        return Err(Error::InvalidParameter(format!("shooting start {gamma0} must be positive")));
    }
    let miss = |lg: f64| shoot(mesh, dim, lg.exp(), src).1;
    let l0 = gamma0.ln();
    let s0 = miss(l0);
    // Too small a peak stays positive, too large crosses zero early.
    let dir = if s0 > 0.0 { 1.0 } else { -1.0 };
    let mut step = 0.05;
    let (mut lo, mut hi) = (l0, l0);
    let mut found = false;
    for _ in 0..80 {
        let next = l0 + dir * step;
        if miss(next) * s0 <= 0.0 {
            if dir > 0.0 {
                hi = next;
            } else {
                lo = next;
            }
            found = true;
            break;
        }
        if dir > 0.0 {
            lo = next;
        } else {
            hi = next;
        }
        step *= 1.5;
    }
    if !found {
        return Err(Error::Divergence { iterations: 80 });
    }
    let s_lo = miss(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if miss(mid) * s_lo > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let (mut u, _) = shoot(mesh, dim, (0.5 * (lo + hi)).exp(), src);
    let m = mesh.m();
    u[m] = 0.0;
    for v in u.iter_mut() {
        *v = v.max(0.0);
    }
    Ok(u)
}

/// Newton from `initial`, with shooting as a fallback when enabled.
pub fn newton_solve(mesh: &RadialMesh, initial: &[f64], params: &NonlinearityParams, settings: &NewtonSettings) -> Result<RadialSolution> {
    let dim = params.dim();
    let (u, ok, it, norm) = newton_iterate(mesh, dim, initial, params, settings)?;
    let mut sol = RadialSolution {
        mesh: mesh.clone(),
        dim,
        u,
        epsilon: params.eps(),
        converged: ok,
        residual: norm,
        iterations: it,
        used_shooting: false,
    };
    if !ok && settings.shooting && initial[0] > 0.0 {
        if let Ok(start) = shooting_solve(mesh, dim, initial[0], params) {
            let (u, ok, it2, norm) = newton_iterate(mesh, dim, &start, params, settings)?;
            sol = RadialSolution { u, converged: ok, residual: norm, iterations: it + it2, used_shooting: true, ..sol };
        }
    }
    Ok(sol)
}

/// δ with U_{δ,0}(0) = u(0), i.e. (α_N/u(0))^(2/(N-2)).
pub fn extract_concentration(sol: &RadialSolution) -> Result<f64> {
    let n = sol.dim.round() as usize;
    let al = alpha(n);
    if !(sol.u0() > al) {
        return Err(Error::NotConcentrated { u0: sol.u0(), alpha: al });
    }
    Ok((al / sol.u0()).powf(2.0 / (sol.dim - 2.0)))
}

fn bubble(r: f64, delta: f64, n: usize) -> f64 {
    let c = (n as f64 - 2.0) / 2.0;
    alpha(n) * delta.powf(-c) * (1.0 + (r / delta).powi(2)).powf(-c)
}

/// ∫|∇Φ|² with Φ = u - U_{δ,0}: trapezoidal rule in t = ln r applied to
/// Φ_t² r^(N-2) ω_N, nodal Φ_t by second-order differences.
pub fn correction_energy(sol: &RadialSolution, delta: f64) -> f64 {
    let n = sol.dim.round() as usize;
    let mesh = &sol.mesh;
    let m = mesh.m();
    let r = &mesh.r;
    let dt = mesh.dt;
    let phi: Vec<f64> = (0..=m).map(|k| sol.u[k] - bubble(r[k], delta, n)).collect();
    let gw = mesh.ghost_weight();
    let ghost = phi[0] + (phi[1] - phi[0]) * (1.0 - gw);
    let dphi = |k: usize| -> f64 {
        if k == m {
            (3.0 * phi[m] - 4.0 * phi[m - 1] + phi[m - 2]) / (2.0 * dt)
        } else {
            let left = if k == 1 { ghost } else { phi[k - 1] };
            (phi[k + 1] - left) / (2.0 * dt)
        }
    };
    let g = |k: usize| dphi(k).powi(2) * r[k].powf(sol.dim - 2.0);
    let mut sum = 0.5 * (g(1) + g(m));
    for k in 2..m {
        sum += g(k);
    }
    // the disc r < r_1, where Φ is quadratic
    let inner = (phi[1] - phi[0]).powi(2) * 4.0 / (sol.dim + 2.0) * r[1].powf(sol.dim - 2.0);
    sphere_area(n) * (sum * dt + inner)
}

/// PU_{δ,0} on the unit ball sampled on a mesh.
pub fn projected_bubble(mesh: &RadialMesh, delta: f64, n: usize) -> Vec<f64> {
    let shift = bubble(1.0, delta, n);
    mesh.r.iter().map(|r| bubble(*r, delta, n) - shift).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationSchedule {
    pub epsilons: Vec<f64>,
    pub newton: NewtonSettings,
}

impl ContinuationSchedule {
    /// start, start·ratio, ... while above `stop`, then `stop` itself.
    pub fn geometric(start: f64, ratio: f64, stop: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0 && stop > 0.0 && start >= stop) {
            return Err(Error::InvalidParameter(format!("bad schedule start={start} ratio={ratio} stop={stop}")));
        }
        let mut epsilons = Vec::new();
        let mut e = start;
        while e > stop * (1.0 + 1e-9) {
            epsilons.push(e);
            e *= ratio;
        }
        epsilons.push(stop);
        Self::new(epsilons, NewtonSettings::default())
    }

    pub fn new(epsilons: Vec<f64>, newton: NewtonSettings) -> Result<Self> {
        if epsilons.is_empty() {
            return Err(Error::InvalidParameter("empty schedule".into()));
        }
        if epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) || epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("schedule must decrease inside (0, 1)".into()));
        }
        Ok(Self { epsilons, newton })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshSettings {
    pub dt_max: f64,
    /// Δt = min(dt_max, dt_scale·√ε). The discretization shifts the effective
    /// ε by roughly Δt², so this keeps the shift a fixed fraction of ε.
    pub dt_scale: f64,
    /// First node relative to the predicted width.
    pub core_fraction: f64,
}

impl Default for MeshSettings {
    fn default() -> Self {
        Self { dt_max: 0.02, dt_scale: 0.1, core_fraction: 1e-4 }
    }
}

impl MeshSettings {
    pub fn build(&self, eps: f64, delta: f64) -> Result<RadialMesh> {
        let dt = self.dt_max.min(self.dt_scale * eps.sqrt());
        RadialMesh::graded((delta * self.core_fraction).min(0.5), dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub delta_num: f64,
    pub u0: f64,
    pub correction_energy: f64,
    pub newton_iters: usize,
    pub converged: bool,
    pub residual: f64,
    pub used_shooting: bool,
    pub nodes: usize,
    /// δ_num < 0.5 and the peak sits at the origin.
    pub concentrated: bool,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub solutions: Vec<RadialSolution>,
    /// Set when the branch was lost; the sweep stopped at this ε.
    pub failed_at: Option<f64>,
}

/// Width used to build meshes and rescale guesses. The exact inverse of
/// ε = d δ^(N-2)|ln δ| when ε is in its range, the closed rate otherwise.
pub fn predicted_width(d0: f64, eps: f64, n: usize) -> Result<f64> {
    delta_of_epsilon(d0, eps, n).or_else(|_| Ok(delta_of_epsilon_closed(d0, eps, n)?.min(0.5 * delta_n(n))))
}

/// Previous solution rescaled to width λ δ_old: λ^(-c)[ũ(r/λ) - ũ(1/λ)], where
/// ũ continues u past r = 1 with the bubble tail.
pub fn rescale_guess(prev: &RadialSolution, delta_old: f64, lambda: f64, mesh: &RadialMesh, n: usize) -> Vec<f64> {
    let c = (n as f64 - 2.0) / 2.0;
    let tail1 = bubble(1.0, delta_old, n);
    let ext = |s: f64| if s <= 1.0 { prev.mesh.interpolate(&prev.u, s) + tail1 } else { bubble(s, delta_old, n) };
    let base = ext(1.0 / lambda);
    let scale = lambda.powf(-c);
    let mut g: Vec<f64> = mesh.r.iter().map(|r| scale * (ext(r / lambda) - base)).collect();
    let m = mesh.m();
    g[m] = 0.0;
    g
}

fn is_peaked(u: &[f64]) -> bool {
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    u[0] >= max
}

/// Continuation in ε on the unit ball, seeded by PU at the predicted width.
pub fn continuation_sweep(schedule: &ContinuationSchedule, n: usize, d0: f64, mesh_settings: &MeshSettings) -> Result<SweepResult> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("N = {n} must be >= 3")));
    }
    let mut out = SweepResult { points: Vec::new(), solutions: Vec::new(), failed_at: None };
    let mut prev: Option<(RadialSolution, f64, f64)> = None; // solution, δ_num, ε
    for &eps in &schedule.epsilons {
        let params = NonlinearityParams::new(n, eps)?;
        let (mesh, guess) = match &prev {
            None => {
                let delta = predicted_width(d0, eps, n)?;
                let mesh = mesh_settings.build(eps, delta)?;
                let g = projected_bubble(&mesh, delta, n);
                (mesh, g)
            }
            Some((sol, dnum, eprev)) => {
                let lambda = predicted_width(d0, eps, n)? / predicted_width(d0, *eprev, n)?;
                let mesh = mesh_settings.build(eps, dnum * lambda)?;
                let g = rescale_guess(sol, *dnum, lambda, &mesh, n);
                (mesh, g)
            }
        };
        let sol = newton_solve(&mesh, &guess, &params, &schedule.newton)?;
        let dnum = if sol.converged { extract_concentration(&sol).ok() } else { None };
        let Some(dnum) = dnum else {
            out.failed_at = Some(eps);
            break;
        };
        out.points.push(SweepPoint {
            epsilon: eps,
            delta_num: dnum,
            u0: sol.u0(),
            correction_energy: correction_energy(&sol, dnum),
            newton_iters: sol.iterations,
            converged: sol.converged,
            residual: sol.residual,
            used_shooting: sol.used_shooting,
            nodes: mesh.m() + 1,
            concentrated: dnum < 0.5 && is_peaked(&sol.u),
        });
        prev = Some((sol.clone(), dnum, eps));
        out.solutions.push(sol);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    /// Slope of ln δ against ln(ε/|ln ε|).
    pub slope: f64,
    pub slope_half_width: f64,
    pub target_slope: f64,
    /// Median of δ^(N-2)|ln ε|/ε.
    pub d_hat: f64,
    pub d_hat_half_width: f64,
    pub points: usize,
    pub eps_min: f64,
    pub eps_max: f64,
}

pub const RATE_FIT_EPS_CAP: f64 = 1e-2;

/// Rate fit over the converged points with ε ≤ `eps_cap`.
pub fn rate_fit(points: &[SweepPoint], n: usize, eps_cap: f64) -> Result<RateFit> {
    let m = n as f64 - 2.0;
    let sel: Vec<&SweepPoint> = points.iter().filter(|p| p.converged && p.epsilon <= eps_cap).collect();
    if sel.len() < 5 {
        return Err(Error::TooFewPoints { needed: 5, got: sel.len() });
    }
    let eps_min = sel.iter().map(|p| p.epsilon).fold(f64::INFINITY, f64::min);
    let eps_max = sel.iter().map(|p| p.epsilon).fold(0.0, f64::max);
    let decades = (eps_max / eps_min).log10();
    if decades < 2.0 {
        return Err(Error::InsufficientSpan { decades, needed: 2.0 });
    }
    let x: Vec<f64> = sel.iter().map(|p| (p.epsilon / -p.epsilon.ln()).ln()).collect();
    let y: Vec<f64> = sel.iter().map(|p| p.delta_num.ln()).collect();
    let fit = least_squares(&x, &y)?;
    let ratios: Vec<f64> = sel.iter().map(|p| p.delta_num.powf(m) * -p.epsilon.ln() / p.epsilon).collect();
    let k = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / k;
    let sd = (ratios.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    Ok(RateFit {
        slope: fit.slope,
        slope_half_width: fit.slope_half_width(sel.len()),
        target_slope: 1.0 / m,
        d_hat: median(&ratios),
        d_hat_half_width: t_quantile(sel.len() - 1) * sd / k.sqrt(),
        points: sel.len(),
        eps_min,
        eps_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mesh_shape() {
        let mesh = RadialMesh::graded(1e-6, 0.02).unwrap();
        let r = mesh.nodes();
        assert_eq!(r[0], 0.0);
        assert_eq!(*r.last().unwrap(), 1.0);
        assert!(r[1] <= 1e-6);
        assert!(r.windows(2).all(|w| w[1] > w[0]));
        assert!((r[3] / r[2] - mesh.ratio()).abs() < 1e-12);
        assert!(RadialMesh::graded(0.5, 0.02).unwrap().m() >= MIN_NODES);
        assert!(RadialMesh::graded(1e-3, 0.5).is_err());
    }

    #[test]
    fn thomas_roundtrip() {
        let t = Tridiagonal { lower: vec![0.0, 1.0, -2.0, 0.5], diag: vec![4.0, 5.0, 6.0, 3.0], upper: vec![1.0, -1.0, 2.0, 0.0] };
        let x = [1.0, -2.0, 3.0, 0.25];
        let b = t.matvec(&x);
        let y = t.solve(&b).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_is_a_root() {
        let mesh = RadialMesh::graded(1e-3, 0.02).unwrap();
        let p = NonlinearityParams::new(3, 0.1).unwrap();
        let u = vec![0.0; mesh.m() + 1];
        let (r, _) = residual_and_jacobian(&mesh, 3.0, &u, &p);
        assert!(r.iter().all(|v| *v == 0.0));
        let sol = newton_solve(&mesh, &u, &p, &NewtonSettings::default()).unwrap();
        assert!(sol.converged && sol.iterations == 0);
    }

    fn manufactured_defect(dt: f64) -> f64 {
        let mesh = RadialMesh::graded(1e-4, dt).unwrap();
        let u: Vec<f64> = mesh.nodes().iter().map(|r| (1.0 - r * r) / 6.0).collect();
        let (r, _) = residual_and_jacobian(&mesh, 3.0, &u, &ConstantSource(1.0));
        r.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    #[test]
    fn manufactured_second_order() {
        let e1 = manufactured_defect(0.02);
        let e2 = manufactured_defect(0.01);
        assert!((e1 / e2 - 4.0).abs() < 0.1, "{e1} {e2}");
    }

    #[test]
    fn jacobian_matches_differences() {
        let mesh = RadialMesh::graded(1e-4, 0.02).unwrap();
        let p = NonlinearityParams::new(3, 0.3).unwrap();
        let u = projected_bubble(&mesh, 0.05, 3);
        let (_, jac) = residual_and_jacobian(&mesh, 3.0, &u, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let v: Vec<f64> = (0..mesh.m()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = 1e-6;
            let mut up = u.clone();
            let mut um = u.clone();
            for k in 0..mesh.m() {
                up[k] += h * v[k];
                um[k] -= h * v[k];
            }
            let rp = residual_and_jacobian(&mesh, 3.0, &up, &p).0;
            let rm = residual_and_jacobian(&mesh, 3.0, &um, &p).0;
            let jv = jac.matvec(&v);
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let num = fd.iter().zip(&jv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = jv.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(num / den < 1e-5, "{}", num / den);
        }
    }

    #[test]
    fn concentration_of_exact_bubble() {
        let mesh = RadialMesh::graded(1e-6, 0.02).unwrap();
        let u: Vec<f64> = mesh.nodes().iter().map(|r| bubble(*r, 0.01, 3)).collect();
        let sol = RadialSolution {
            mesh: mesh.clone(),
            dim: 3.0,
            u: u.clone(),
            epsilon: 0.1,
            converged: true,
            residual: 0.0,
            iterations: 0,
            used_shooting: false,
        };
        assert!((extract_concentration(&sol).unwrap() - 0.01).abs() < 1e-16);
        assert_eq!(correction_energy(&sol, 0.01), 0.0);
        let low = RadialSolution { u: vec![0.5; u.len()], ..sol };
        assert!(matches!(extract_concentration(&low), Err(Error::NotConcentrated { .. })));
    }

    #[test]
    fn projected_bubble_peak() {
        let mesh = RadialMesh::graded(1e-6, 0.02).unwrap();
        let u = projected_bubble(&mesh, 0.01, 3);
        let sol = RadialSolution {
            mesh,
            dim: 3.0,
            u,
            epsilon: 0.1,
            converged: true,
            residual: 0.0,
            iterations: 0,
            used_shooting: false,
        };
        // PU(0) = α δ^(-1/2) (1 - δ/√(1+δ²))
        let d = extract_concentration(&sol).unwrap();
        let exact = 0.01 / (1.0 - 0.01 / 1.0001f64.sqrt()).powi(2);
        assert!((d - exact).abs() < 1e-15);
        assert!((d / 0.01 - 1.0).abs() < 0.025);
    }

    #[test]
    fn schedule_construction() {
        let s = ContinuationSchedule::geometric(0.5, 0.5, 1e-5).unwrap();
        assert_eq!(s.epsilons[0], 0.5);
        assert_eq!(*s.epsilons.last().unwrap(), 1e-5);
        assert!(s.epsilons.windows(2).all(|w| w[1] < w[0]));
        assert!(ContinuationSchedule::new(vec![0.1, 0.2], NewtonSettings::default()).is_err());
    }

    #[test]
    fn rate_fit_on_exact_law() {
        let d0 = 5.0;
        let pts: Vec<SweepPoint> = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5]
            .iter()
            .map(|&e: &f64| SweepPoint {
                epsilon: e,
                delta_num: (d0 * e / -e.ln()).sqrt(),
                u0: 0.0,
                correction_energy: 0.0,
                newton_iters: 0,
                converged: true,
                residual: 0.0,
                used_shooting: false,
                nodes: 0,
                concentrated: true,
            })
            .collect();
        let f = rate_fit(&pts, 4, 1e-2).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.d_hat - d0).abs() < 1e-12);
        assert!(matches!(rate_fit(&pts[..3], 4, 1e-2), Err(Error::TooFewPoints { .. })));
        assert!(matches!(rate_fit(&pts[..5], 4, 3e-3), Err(Error::TooFewPoints { .. })));
        let close: Vec<SweepPoint> = (0..6).map(|k| SweepPoint { epsilon: 1e-3 * 0.7f64.powi(k), ..pts[0].clone() }).collect();
        assert!(matches!(rate_fit(&close, 4, 1e-2), Err(Error::InsufficientSpan { .. })));
    }
}
