use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subcrit_core::greenfn::{DomainSpec, GridSettings};
use subcrit_core::quadrature::QuadratureSettings;
use subcrit_core::radial_pde::{MeshSettings, NewtonSettings, RATE_FIT_EPS_CAP};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub frak_b: f64,
    pub relation: f64,
    pub sobolev: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { frak_b: 1e-6, relation: 1e-8, sobolev: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub start: f64,
    pub ratio: f64,
    pub stop: f64,
    /// Explicit ε list; overrides start/ratio/stop.
    pub epsilons: Option<Vec<f64>>,
    pub eps_cap: f64,
    /// Rate constant for meshing; defaults to the reduced root on the ball.
    pub d0: Option<f64>,
    pub newton: NewtonSettings,
    pub mesh: MeshSettings,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            start: 0.5,
            ratio: 0.5,
            stop: 1e-5,
            epsilons: None,
            eps_cap: RATE_FIT_EPS_CAP,
            d0: None,
            newton: NewtonSettings::default(),
            mesh: MeshSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "N")]
    pub n: usize,
    /// Dimensions checked by verify-constants.
    pub dims: Vec<usize>,
    pub domain: Option<DomainSpec>,
    pub quadrature: QuadratureSettings,
    pub tolerances: Tolerances,
    /// Samples for the pointwise bound check in verify-constants.
    pub bound_samples: usize,
    pub bound_eps_max: f64,
    pub grid: GridSettings,
    /// Starting point of the critical-point search; the origin by default.
    pub x0: Option<Vec<f64>>,
    pub critical_tol: f64,
    /// Points of the ρ table along the first axis.
    pub table_points: usize,
    pub sweep: SweepConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 3,
            dims: vec![3, 4, 5, 6, 7],
            domain: None,
            quadrature: QuadratureSettings::default(),
            tolerances: Tolerances::default(),
            bound_samples: 10_000,
            bound_eps_max: 0.1,
            grid: GridSettings::default(),
            x0: None,
            critical_tol: 1e-10,
            table_points: 9,
            sweep: SweepConfig::default(),
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Flag overrides; `--n` also resets the dimension of the domain and the
    /// list checked by verify-constants.
    pub fn apply(&mut self, n: Option<usize>, out: Option<PathBuf>, seed: Option<u64>) {
        if let Some(n) = n {
            self.n = n;
            self.dims = vec![n];
            if let Some(DomainSpec::UnitBall { n: dn } | DomainSpec::Box { n: dn, .. }) = self.domain.as_mut() {
                *dn = n;
            }
        }
        if let Some(out) = out {
            self.out_dir = out;
        }
        if let Some(seed) = seed {
            self.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check_n = |n: usize| {
            if (3..=8).contains(&n) {
                Ok(())
            } else {
                Err(CliError::Config(format!("N = {n} outside 3..=8")))
            }
        };
        check_n(self.n)?;
        for &n in &self.dims {
            check_n(n)?;
        }
        if let Some(d) = &self.domain {
            if d.dim() != self.n {
                return Err(CliError::Config(format!("domain dimension {} differs from N = {}", d.dim(), self.n)));
            }
            d.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.quadrature.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(x0) = &self.x0 {
            if x0.len() != self.n {
                return Err(CliError::Config(format!("x0 has {} coordinates, N = {}", x0.len(), self.n)));
            }
        }
        if self.table_points < 2 {
            return Err(CliError::Config("table_points must be at least 2".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> DomainSpec {
        self.domain.clone().unwrap_or(DomainSpec::UnitBall { n: self.n })
    }

    pub fn x0(&self) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| vec![0.0; self.n])
    }
}
