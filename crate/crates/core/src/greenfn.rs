//! Regular part H of the Dirichlet Green function, the Robin function
//! ρ(x) = H(x, x), and its critical points.
//!
//! Convention: G(x, y) = c_N (|x - y|^(2-N) - H(x, y)), so H(·, y) is the
//! harmonic function equal to |· - y|^(2-N) on the boundary and c_N stays
//! outside H.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    UnitBall {
        #[serde(rename = "N")]
        n: usize,
    },
    /// Axis-aligned box centered at the origin with `resolution` nodes per axis.
    Box {
        #[serde(rename = "N")]
        n: usize,
        sides: Vec<f64>,
        resolution: usize,
    },
}

impl DomainSpec {
    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::UnitBall { n } | DomainSpec::Box { n, .. } => *n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n < 3 {
            return Err(Error::InvalidParameter(format!("N = {n} must be >= 3")));
        }
        if let DomainSpec::Box { sides, resolution, .. } = self {
            if sides.len() != n {
                return Err(Error::InvalidParameter(format!("box needs {n} side lengths, got {}", sides.len())));
            }
            if sides.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::InvalidParameter("box sides must be positive".into()));
            }
            if *resolution < 17 {
                return Err(Error::InvalidParameter(format!("resolution {resolution} below 17")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            DomainSpec::UnitBall { .. } => x.iter().map(|v| v * v).sum::<f64>() < 1.0,
            DomainSpec::Box { sides, .. } => x.iter().zip(sides).all(|(v, s)| v.abs() < s / 2.0),
        }
    }
}

/// H(x, y) = (1 + |x|²|y|² - 2x·y)^((2-N)/2) on the unit ball.
pub fn h_ball(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    if xx >= 1.0 {
        return Err(Error::OutsideDomain(x.to_vec()));
    }
    if yy >= 1.0 {
        return Err(Error::OutsideDomain(y.to_vec()));
    }
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok((1.0 + xx * yy - 2.0 * xy).powf((2.0 - n as f64) / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RobinMethod {
    ClosedForm,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobinEvaluation {
    pub x: Vec<f64>,
    pub rho: f64,
    pub grad: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
    pub method: RobinMethod,
}

fn ball_robin(x: &[f64]) -> Result<RobinEvaluation> {
    let n = x.len();
    let nf = n as f64;
    let s: f64 = x.iter().map(|v| v * v).sum();
    if s >= 1.0 {
        return Err(Error::OutsideDomain(x.to_vec()));
    }
    let t = 1.0 - s;
    let rho = t.powf(2.0 - nf);
    let g1 = 2.0 * (nf - 2.0) * t.powf(1.0 - nf);
    let g2 = 4.0 * (nf - 2.0) * (nf - 1.0) * t.powf(-nf);
    let grad = x.iter().map(|v| g1 * v).collect();
    let hessian = (0..n)
        .map(|i| (0..n).map(|j| g2 * x[i] * x[j] + if i == j { g1 } else { 0.0 }).collect())
        .collect();
    Ok(RobinEvaluation { x: x.to_vec(), rho, grad, hessian, method: RobinMethod::ClosedForm })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSettings {
    /// Stop when the max-norm of the discrete Laplacian falls below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_sweeps: 20_000 }
    }
}

/// Node lattice of a centered box.
#[derive(Debug, Clone)]
pub struct BoxGrid {
    pub n: usize,
    pub res: usize,
    pub sides: Vec<f64>,
    pub h: Vec<f64>,
    strides: Vec<usize>,
}

impl BoxGrid {
    pub fn new(sides: &[f64], res: usize) -> Self {
        let n = sides.len();
        let h = sides.iter().map(|s| s / (res - 1) as f64).collect();
        let mut strides = vec![1; n];
        for k in 1..n {
            strides[k] = strides[k - 1] * res;
        }
        Self { n, res, sides: sides.to_vec(), h, strides }
    }

    pub fn len(&self) -> usize {
        self.res.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi(&self, mut idx: usize) -> Vec<usize> {
        let mut m = vec![0; self.n];
        for v in m.iter_mut() {
            *v = idx % self.res;
            idx /= self.res;
        }
        m
    }

    pub fn coords(&self, multi: &[usize]) -> Vec<f64> {
        multi.iter().enumerate().map(|(k, i)| -self.sides[k] / 2.0 + *i as f64 * self.h[k]).collect()
    }

    /// Nearest node to `x`.
    pub fn snap(&self, x: &[f64]) -> Vec<usize> {
        x.iter()
            .enumerate()
            .map(|(k, v)| {
                let i = ((v + self.sides[k] / 2.0) / self.h[k]).round();
                i.clamp(0.0, (self.res - 1) as f64) as usize
            })
            .collect()
    }

    fn on_boundary(&self, multi: &[usize]) -> bool {
        multi.iter().any(|i| *i == 0 || *i == self.res - 1)
    }

    /// Dirichlet problem Δu = 0 with u = `boundary` on the box faces, by
    /// red-black successive over-relaxation on the (2N+1)-point stencil.
    pub fn solve_laplace<F: Fn(&[f64]) -> f64>(&self, boundary: F, settings: &GridSettings) -> Result<(Vec<f64>, usize)> {
        let len = self.len();
        let mut u = vec![0.0; len];
        let mut colors: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        let mut mean = 0.0;
        let mut nb = 0usize;
        for idx in 0..len {
            let m = self.multi(idx);
            if self.on_boundary(&m) {
                u[idx] = boundary(&self.coords(&m));
                mean += u[idx];
                nb += 1;
            } else {
                colors[m.iter().sum::<usize>() % 2].push(idx);
            }
        }
        mean /= nb as f64;
        for c in &colors {
            for &i in c {
                u[i] = mean;
            }
        }
        let inv_h2: Vec<f64> = self.h.iter().map(|h| 1.0 / (h * h)).collect();
        let diag: f64 = 2.0 * inv_h2.iter().sum::<f64>();
        let hmax = self.h.iter().cloned().fold(0.0, f64::max) / self.sides.iter().cloned().fold(0.0, f64::max);
        let omega = 2.0 / (1.0 + (std::f64::consts::PI * hmax).sin());
        let laplacian = |u: &[f64], i: usize| {
            let mut s = -diag * u[i];
            for k in 0..self.n {
                s += inv_h2[k] * (u[i + self.strides[k]] + u[i - self.strides[k]]);
            }
            s
        };
        for sweep in 1..=settings.max_sweeps {
            for c in &colors {
                for &i in c {
                    let r = laplacian(&u, i);
                    u[i] += omega * r / diag;
                }
            }
            if sweep % 10 == 0 || sweep == settings.max_sweeps {
                let res = colors.iter().flatten().map(|&i| laplacian(&u, i).abs()).fold(0.0, f64::max);
                if res <= settings.tol {
                    return Ok((u, sweep));
                }
                if sweep == settings.max_sweeps || !res.is_finite() {
                    return Err(Error::GridSolver { iterations: sweep, residual: res });
                }
            }
        }
        unreachable!("loop returns on the last sweep")
    }

    /// ρ at a node: H(x, x) where H(·, x) is the discrete harmonic function
    /// with boundary values |z - x|^(2-N).
    pub fn robin_at_node(&self, node: &[usize], settings: &GridSettings) -> Result<f64> {
        if node.iter().any(|i| *i < 1 || *i + 1 >= self.res) {
            return Err(Error::NearBoundary { cells: 1 });
        }
        let x = self.coords(node);
        let nf = self.n as f64;
        let (u, _) = self.solve_laplace(
            |z| {
                let d2: f64 = z.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.powf((2.0 - nf) / 2.0)
            },
            settings,
        )?;
        Ok(u[self.index(node)])
    }
}

/// Finite-difference steps for grid derivatives, in cells.
const FD_CELLS: usize = 2;

struct GridRobin<'a> {
    grid: &'a BoxGrid,
    settings: GridSettings,
    cache: HashMap<Vec<usize>, f64>,
}

impl GridRobin<'_> {
    fn value(&mut self, node: &[usize]) -> Result<f64> {
        if let Some(v) = self.cache.get(node) {
            return Ok(*v);
        }
        let v = self.grid.robin_at_node(node, &self.settings)?;
        self.cache.insert(node.to_vec(), v);
        Ok(v)
    }

    fn offset(node: &[usize], k: usize, s: isize) -> Vec<usize> {
        let mut m = node.to_vec();
        m[k] = (m[k] as isize + s * FD_CELLS as isize) as usize;
        m
    }

    fn evaluate(&mut self, node: &[usize]) -> Result<RobinEvaluation> {
        let n = self.grid.n;
        let margin = FD_CELLS + 1;
        if node.iter().any(|i| *i < margin || *i + margin >= self.grid.res) {
            return Err(Error::NearBoundary { cells: margin });
        }
        let rho = self.value(node)?;
        let mut grad = vec![0.0; n];
        let mut hessian = vec![vec![0.0; n]; n];
        for k in 0..n {
            let step = FD_CELLS as f64 * self.grid.h[k];
            let p = self.value(&Self::offset(node, k, 1))?;
            let m = self.value(&Self::offset(node, k, -1))?;
            grad[k] = (p - m) / (2.0 * step);
            hessian[k][k] = (p - 2.0 * rho + m) / (step * step);
        }
        for i in 0..n {
            for j in i + 1..n {
                let si = FD_CELLS as f64 * self.grid.h[i];
                let sj = FD_CELLS as f64 * self.grid.h[j];
                let mut acc = 0.0;
                for (a, b, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                    let node2 = Self::offset(&Self::offset(node, i, a), j, b);
                    acc += sign * self.value(&node2)?;
                }
                let v = acc / (4.0 * si * sj);
                hessian[i][j] = v;
                hessian[j][i] = v;
            }
        }
        Ok(RobinEvaluation { x: self.grid.coords(node), rho, grad, hessian, method: RobinMethod::Grid })
    }
}

pub fn robin(domain: &DomainSpec, x: &[f64]) -> Result<RobinEvaluation> {
    robin_with(domain, x, &GridSettings::default())
}

/// Robin function with gradient and Hessian. On a box, `x` is snapped to the
/// nearest grid node, and derivatives are central differences over two cells.
pub fn robin_with(domain: &DomainSpec, x: &[f64], settings: &GridSettings) -> Result<RobinEvaluation> {
    domain.validate()?;
    if x.len() != domain.dim() || !domain.contains(x) {
        return Err(Error::OutsideDomain(x.to_vec()));
    }
    match domain {
        DomainSpec::UnitBall { .. } => ball_robin(x),
        DomainSpec::Box { sides, resolution, .. } => {
            let grid = BoxGrid::new(sides, *resolution);
            let node = grid.snap(x);
            GridRobin { grid: &grid, settings: *settings, cache: HashMap::new() }.evaluate(&node)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub xi: Vec<f64>,
    pub rho: f64,
    pub grad_norm: f64,
    pub hessian: Vec<Vec<f64>>,
    pub sigma_min: f64,
    pub nondegenerate: bool,
    pub iterations: usize,
}

fn singular_values(h: &[Vec<f64>]) -> (f64, f64) {
    let n = h.len();
    let m = DMatrix::from_fn(n, n, |i, j| h[i][j]);
    let sv = m.singular_values();
    (sv.min(), sv.max())
}

fn newton_step(h: &[Vec<f64>], g: &[f64]) -> Result<Vec<f64>> {
    let n = g.len();
    let m = DMatrix::from_fn(n, n, |i, j| h[i][j]);
    let rhs = DVector::from_column_slice(g);
    let step = m.lu().solve(&rhs).ok_or(Error::SingularHessian)?;
    Ok(step.iter().map(|v| -v).collect())
}

fn classify(ev: &RobinEvaluation, iterations: usize) -> CriticalPoint {
    let (smin, smax) = singular_values(&ev.hessian);
    CriticalPoint {
        xi: ev.x.clone(),
        rho: ev.rho,
        grad_norm: ev.grad.iter().map(|v| v * v).sum::<f64>().sqrt(),
        hessian: ev.hessian.clone(),
        sigma_min: smin,
        nondegenerate: smin >= 1e-6 * (1.0 + smax),
        iterations,
    }
}

/// Newton iteration on ∇ρ. On a box the iterates live on grid nodes and the
/// iteration stops once the rounded step vanishes.
pub fn find_critical_point(domain: &DomainSpec, x0: &[f64], tol: f64) -> Result<CriticalPoint> {
    find_critical_point_with(domain, x0, tol, &GridSettings::default())
}

pub fn find_critical_point_with(domain: &DomainSpec, x0: &[f64], tol: f64, settings: &GridSettings) -> Result<CriticalPoint> {
    domain.validate()?;
    if x0.len() != domain.dim() || !domain.contains(x0) {
        return Err(Error::OutsideDomain(x0.to_vec()));
    }
    const MAX_ITER: usize = 50;
    match domain {
        DomainSpec::UnitBall { .. } => {
            let mut x = x0.to_vec();
            for it in 0..MAX_ITER {
                let ev = ball_robin(&x)?;
                let gn = ev.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
                if gn <= tol {
                    return Ok(classify(&ev, it));
                }
                let step = newton_step(&ev.hessian, &ev.grad)?;
                // Halve steps that would leave the ball.
                let mut t = 1.0;
                let mut next: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
                while !domain.contains(&next) && t > 1e-8 {
                    t *= 0.5;
                    next = x.iter().zip(&step).map(|(a, b)| a + t * b).collect();
                }
                if !domain.contains(&next) {
                    return Err(Error::Divergence { iterations: it + 1 });
                }
                x = next;
            }
            Err(Error::Divergence { iterations: MAX_ITER })
        }
        DomainSpec::Box { sides, resolution, .. } => {
            let grid = BoxGrid::new(sides, *resolution);
            let mut eval = GridRobin { grid: &grid, settings: *settings, cache: HashMap::new() };
            let mut node = grid.snap(x0);
            for it in 0..MAX_ITER {
                let ev = eval.evaluate(&node)?;
                let gn = ev.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
                if gn <= tol {
                    return Ok(classify(&ev, it));
                }
                let step = newton_step(&ev.hessian, &ev.grad)?;
                let target: Vec<f64> = ev.x.iter().zip(&step).map(|(a, b)| a + b).collect();
                if !domain.contains(&target) {
                    return Err(Error::Divergence { iterations: it + 1 });
                }
                let next = grid.snap(&target);
                if next == node {
                    return Ok(classify(&ev, it));
                }
                node = next;
            }
            Err(Error::Divergence { iterations: MAX_ITER })
        }
    }
}
