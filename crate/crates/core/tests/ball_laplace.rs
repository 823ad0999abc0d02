//! Harmonic extension on the unit ball in R³ checked against an independent
//! finite-difference solve with the Shortley–Weller stencil at the curved
//! boundary.

use subcrit_core::bubbles::{harmonic_extension_ball, SphereSettings};

struct BallGrid {
    k: usize, // nodes -k..=k per axis
    h: f64,
}

impl BallGrid {
    fn idx(&self, i: isize, j: isize, l: isize) -> usize {
        let w = (2 * self.k + 1) as isize;
        let o = self.k as isize;
        (((i + o) * w + (j + o)) * w + (l + o)) as usize
    }

    fn inside(&self, p: [isize; 3]) -> bool {
        let r2: f64 = p.iter().map(|v| (*v as f64 * self.h).powi(2)).sum();
        r2 < 1.0 - 1e-12
    }

    /// Distance fraction θ ∈ (0, 1] from node p to the sphere along ±axis.
    fn theta(&self, p: [isize; 3], axis: usize, sign: f64) -> f64 {
        let x: Vec<f64> = p.iter().map(|v| *v as f64 * self.h).collect();
        let others: f64 = (0..3).filter(|a| *a != axis).map(|a| x[a] * x[a]).sum();
        let edge = (1.0 - others).sqrt();
        ((edge - sign * x[axis]) / self.h).min(1.0)
    }

    fn solve<G: Fn(&[f64]) -> f64>(&self, g: &G) -> Vec<f64> {
        let k = self.k as isize;
        let n = (2 * self.k + 1).pow(3);
        let mut u = vec![0.0; n];
        let mut nodes = Vec::new();
        for i in -k..=k {
            for j in -k..=k {
                for l in -k..=k {
                    if self.inside([i, j, l]) {
                        nodes.push([i, j, l]);
                    }
                }
            }
        }
        // Per node: diagonal, neighbour links, boundary contribution.
        let mut rows = Vec::with_capacity(nodes.len());
        for p in &nodes {
            let mut diag = 0.0;
            let mut links = Vec::new();
            let mut rhs = 0.0;
            for axis in 0..3 {
                let mut arms = [(0.0, None, 0.0); 2];
                for (s, sign) in [(0, -1.0), (1, 1.0)] {
                    let mut q = *p;
                    q[axis] += sign as isize;
                    if self.inside(q) {
                        arms[s] = (self.h, Some(self.idx(q[0], q[1], q[2])), 0.0);
                    } else {
                        let t = self.theta(*p, axis, sign);
                        let mut z: Vec<f64> = p.iter().map(|v| *v as f64 * self.h).collect();
                        z[axis] += sign * t * self.h;
                        arms[s] = (t * self.h, None, g(&z));
                    }
                }
                let (hl, hr) = (arms[0].0, arms[1].0);
                let cl = 2.0 / (hl * (hl + hr));
                let cr = 2.0 / (hr * (hl + hr));
                diag += cl + cr;
                for ((_, link, val), c) in [(arms[0], cl), (arms[1], cr)] {
                    match link {
                        Some(i) => links.push((i, c)),
                        None => rhs += c * val,
                    }
                }
            }
            rows.push((self.idx(p[0], p[1], p[2]), diag, links, rhs));
        }
        let omega = 2.0 / (1.0 + (std::f64::consts::PI * self.h / 2.0).sin());
        for _ in 0..20_000 {
            let mut change: f64 = 0.0;
            for (i, diag, links, rhs) in &rows {
                let s: f64 = rhs + links.iter().map(|(j, c)| c * u[*j]).sum::<f64>();
                let new = u[*i] + omega * (s / diag - u[*i]);
                change = change.max((new - u[*i]).abs());
                u[*i] = new;
            }
            if change < 1e-13 {
                break;
            }
        }
        u
    }
}

fn data(z: &[f64]) -> f64 {
    z[0].powi(4) + z[1] * z[2] * z[2] + (2.0 * z[2]).exp()
}

#[test]
fn poisson_integral_matches_shortley_weller() {
    let probes: [[isize; 3]; 3] = [[0, 0, 0], [1, -1, 0], [2, 0, 1]];
    let mut errors = Vec::new();
    for k in [8usize, 16] {
        let grid = BallGrid { k, h: 1.0 / k as f64 };
        let u = grid.solve(&data);
        let scale = (k / 8) as isize;
        let mut worst: f64 = 0.0;
        for p in probes {
            let q = [p[0] * 2 * scale, p[1] * 2 * scale, p[2] * 2 * scale];
            let x: Vec<f64> = q.iter().map(|v| *v as f64 * grid.h).collect();
            let exact = harmonic_extension_ball(data, &x, &SphereSettings::default()).unwrap();
            worst = worst.max((u[grid.idx(q[0], q[1], q[2])] - exact).abs());
        }
        errors.push(worst);
    }
    assert!(errors[1] < 2e-3, "{errors:?}");
    assert!(errors[0] / errors[1] > 2.5, "{errors:?}");
}

#[test]
fn harmonic_data_is_reproduced() {
    // e^(2z) cos(2y) is harmonic, so the extension is the function itself.
    let g = |z: &[f64]| (2.0 * z[2]).exp() * (2.0 * z[1]).cos();
    // the kernel sharpens near the sphere, so use a finer rule than the default
    let fine = SphereSettings { polar: 48, azimuth: 96, tol: 1e-9 };
    for x in [[0.1, 0.2, -0.3], [0.0, 0.5, 0.5], [-0.7, 0.1, 0.2]] {
        let v = harmonic_extension_ball(g, &x, &fine).unwrap();
        assert!((v - g(&x)).abs() < 1e-9, "{x:?} {v}");
    }
}
