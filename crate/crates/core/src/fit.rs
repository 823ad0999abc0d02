//! Small regression helpers for log-log order estimation.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for two points or an exact fit.
    pub slope_se: f64,
}

impl LineFit {
    /// Half-width of the two-sided 95% confidence interval of the slope.
    pub fn slope_half_width(&self, points: usize) -> f64 {
        if points < 3 || self.slope_se == 0.0 {
            return 0.0;
        }
        t_quantile(points - 2) * self.slope_se
    }
}

/// Ordinary least squares y = intercept + slope·x.
pub fn least_squares(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::InvalidParameter("x and y lengths differ".into()));
    }
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("all abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (sse / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LineFit { slope, intercept, slope_se })
}

/// Slope of ln y against ln x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    least_squares(&lx, &ly)
}

/// 97.5% quantile of Student's t with `dof` degrees of freedom.
pub fn t_quantile(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof.max(1) as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::NAN)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Log-log order estimate of residuals against δ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderFit {
    pub which: String,
    /// Least-squares slope with the largest δ dropped.
    pub slope: f64,
    pub slope_half_width: f64,
    /// Slopes between consecutive δ values.
    pub slopes: Vec<f64>,
    /// Last residual divided by δ^expected_order.
    pub prefactor: f64,
    pub expected_order: f64,
    pub log_power: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_log_power: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized: Option<Vec<f64>>,
    pub deltas: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl OrderFit {
    /// `deltas` must be sorted in decreasing order.
    pub fn from_data(which: &str, deltas: &[f64], residuals: &[f64], expected_order: f64) -> Result<Self> {
        if deltas.len() < 4 {
            return Err(Error::TooFewPoints { needed: 4, got: deltas.len() });
        }
        let fit = loglog_slope(&deltas[1..], &residuals[1..])?;
        let slopes = deltas
            .windows(2)
            .zip(residuals.windows(2))
            .map(|(d, r)| (r[1] / r[0]).ln() / (d[1] / d[0]).ln())
            .collect();
        let last = deltas.len() - 1;
        Ok(Self {
            which: which.to_string(),
            slope: fit.slope,
            slope_half_width: fit.slope_half_width(deltas.len() - 1),
            slopes,
            prefactor: residuals[last] / deltas[last].powf(expected_order),
            expected_order,
            log_power: 0.0,
            best_log_power: None,
            normalized: None,
            deltas: deltas.to_vec(),
            residuals: residuals.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        let f = least_squares(&x, &y).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-14);
        assert!((f.intercept - 3.0).abs() < 1e-14);
        assert!(f.slope_se < 1e-14);
    }

    #[test]
    fn power_law() {
        let x = [0.1, 0.05, 0.025, 0.0125];
        let y: Vec<f64> = x.iter().map(|v: &f64| 7.0 * v.powf(2.5)).collect();
        assert!((loglog_slope(&x, &y).unwrap().slope - 2.5).abs() < 1e-12);
    }

    #[test]
    fn t_values() {
        assert!((t_quantile(1) - 12.706).abs() < 1e-3);
        assert!((t_quantile(10) - 2.228).abs() < 1e-3);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn order_fit_drops_largest() {
        let d = [0.4, 0.2, 0.1, 0.05, 0.025];
        // contaminated first point
        let r = [1.0, 0.2f64.powi(3), 0.1f64.powi(3), 0.05f64.powi(3), 0.025f64.powi(3)];
        let f = OrderFit::from_data("t", &d, &r, 3.0).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert!((f.prefactor - 1.0).abs() < 1e-12);
        assert_eq!(f.slopes.len(), 4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(least_squares(&[1.0], &[1.0]).is_err());
        assert!(least_squares(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(loglog_slope(&[1.0, -1.0], &[1.0, 2.0]).is_err());
    }
}
