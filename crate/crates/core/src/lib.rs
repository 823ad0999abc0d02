//! Numerical lab for the slightly subcritical Lane–Emden–Fowler problem
//!
//! ```text
//! -Δu = |u|^(2*-2) u / [ln(e + |u|)]^ε   in Ω,   u = 0 on ∂Ω
//! ```
//!
//! The crate covers the nonlinearity and its derivatives, Aubin–Talenti
//! bubbles with their linearized kernels and ball projections, Green and
//! Robin functions, adaptive quadrature for the structural constants, the
//! finite-dimensional reduced system, and a radial continuation solver for
//! the full equation on the unit ball.

// NaN-rejecting `!(x > 0.0)` checks and index loops over coupled arrays are
// deliberate throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bubbles;
pub mod error;
pub mod fit;
pub mod greenfn;
pub mod nonlinearity;
pub mod quadrature;
pub mod radial_pde;
pub mod reduced;

pub use error::{Error, Result};

/// Surface area of the unit sphere in R^N.
pub fn sphere_area(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / statrs::function::gamma::gamma(h)
}

/// Bubble normalization α_N = [N(N-2)]^((N-2)/4).
pub fn alpha(n: usize) -> f64 {
    let nf = n as f64;
    (nf * (nf - 2.0)).powf((nf - 2.0) / 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn alpha_values() {
        assert!((alpha(3) - 3f64.powf(0.25)).abs() < 1e-15);
        assert!((alpha(4) - 8f64.sqrt()).abs() < 1e-14);
    }
}
