//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{BoundaryFunction, Pair};
use crate::opcore::{FractionalOrder, Grid1D, Potential};
use crate::spectral::{admissibility, default_modes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero,
    Constant { value: f64 },
    Bump { center: f64, width: f64, amplitude: f64 },
    /// Whitespace-separated samples, one per node.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    SmoothBump { t_on: f64, t_off: f64, left: f64, right: f64 },
    Hat { t1: f64, t2: f64, left: f64, right: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Integration-by-parts residual at n = 512; coarser grids get 512/n times more.
    pub ibp: f64,
    pub resolvent: f64,
    pub dn: f64,
    pub laplace: f64,
    /// Multiplier identity residual at n = 512, scaled like `ibp`.
    pub pohozaev: f64,
    pub equipartition: f64,
    pub energy: f64,
    pub transport: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ibp: 1e-2,
            resolvent: 1e-12,
            dn: 1e-8,
            laplace: 1e-6,
            pohozaev: 1e-2,
            equipartition: 1e-8,
            energy: 1e-12,
            transport: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservabilitySpec {
    pub modes: usize,
    pub horizon: f64,
    pub eps: f64,
    pub trials: usize,
    pub c_cap: f64,
    pub heat_draws: usize,
    pub heat_eps: f64,
}

impl Default for ObservabilitySpec {
    fn default() -> Self {
        Self {
            modes: 6,
            horizon: 10.0,
            eps: 0.0,
            trials: 20,
            c_cap: 1e3,
            heat_draws: 10,
            heat_eps: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSpec {
    /// Spectral cache file holding the target data; synthesized from the
    /// configured potential when absent.
    pub target: Option<PathBuf>,
    pub modes: usize,
    pub reg: f64,
    pub max_iter: usize,
    pub alpha: f64,
    pub stride: usize,
    /// Zero margin in nodes; n/16 when absent.
    pub margin: Option<usize>,
}

impl Default for ReconstructSpec {
    fn default() -> Self {
        Self {
            target: None,
            modes: 20,
            reg: 1e-8,
            max_iter: 30,
            alpha: 0.5,
            stride: 4,
            margin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub eps: Vec<f64>,
    /// Shape of the perturbation q₂ − q₁ = ε·bump.
    pub center: f64,
    pub width: f64,
    pub s_values: Vec<f64>,
    pub misfit_tol: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            eps: vec![1e-3, 1e-2, 1e-1],
            center: 0.3,
            width: 0.4,
            s_values: vec![0.5, 1.0, 2.0],
            misfit_tol: 1e-20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub left: f64,
    pub right: f64,
    pub n: usize,
    pub a: f64,
    /// Retained modes; a quarter of the grid capped at 64 when absent.
    pub modes: Option<usize>,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub potential: PotentialSpec,
    pub boundary: BoundarySpec,
    pub tolerances: Tolerances,
    pub observability: ObservabilitySpec,
    pub reconstruct: ReconstructSpec,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            left: -1.0,
            right: 1.0,
            n: 256,
            a: 0.6,
            modes: None,
            horizon: 1.0,
            steps: 2048,
            seed: 1,
            out: None,
            potential: PotentialSpec::Zero,
            boundary: BoundarySpec::SmoothBump {
                t_on: 0.1,
                t_off: 0.8,
                left: 1.0,
                right: 0.5,
            },
            tolerances: Tolerances::default(),
            observability: ObservabilitySpec::default(),
            reconstruct: ReconstructSpec::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// Smallest number of time steps accepted.
pub const MIN_STEPS: usize = 16;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.order()?;
        if self.steps < MIN_STEPS {
            return Err(Error::Config(format!("steps = {} below {MIN_STEPS}", self.steps)));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        let m = self.modes();
        if m == 0 || m > self.n {
            return Err(Error::Config(format!("modes = {m} not in 1..={}", self.n)));
        }
        self.boundary_function()?;
        Ok(())
    }

    /// Extra preconditions of the `reconstruct` command.
    pub fn validate_reconstruct(&self) -> Result<()> {
        let m = self.modes();
        if self.reconstruct.modes == 0 || self.reconstruct.modes > m {
            return Err(Error::Config(format!(
                "reconstruction uses {} modes but {m} are retained",
                self.reconstruct.modes
            )));
        }
        Ok(())
    }

    /// Extra preconditions of the `observability` command.
    pub fn validate_observability(&self) -> Result<()> {
        let m = self.modes();
        if self.observability.modes == 0 || self.observability.modes > m {
            return Err(Error::Config(format!("observability modes {} not in 1..={m}", self.observability.modes)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.left, self.right, self.n)
    }

    pub fn order(&self) -> Result<FractionalOrder> {
        FractionalOrder::new(self.a)
    }

    pub fn modes(&self) -> usize {
        self.modes.unwrap_or_else(|| default_modes(self.n))
    }

    pub fn boundary_function(&self) -> Result<BoundaryFunction> {
        match self.boundary {
            BoundarySpec::SmoothBump { t_on, t_off, left, right } => {
                BoundaryFunction::smooth_bump(self.horizon, self.steps, t_on, t_off, Pair::new(left, right))
            }
            BoundarySpec::Hat { t1, t2, left, right } => {
                BoundaryFunction::hat(self.horizon, self.steps, t1, t2, Pair::new(left, right))
            }
        }
    }

    /// Builds the configured potential, certified when it fits the
    /// admissible set of the configured grid and order.
    pub fn potential(&self) -> Result<Potential> {
        let grid = self.grid()?;
        let n = grid.n();
        let q = match &self.potential {
            PotentialSpec::Zero => return Ok(Potential::zero(n)),
            PotentialSpec::Constant { value } => Potential::constant(n, *value),
            PotentialSpec::Bump { center, width, amplitude } => Potential::bump(&grid, *center, *width, *amplitude),
            PotentialSpec::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let values = text
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
                    .collect::<Result<Vec<f64>>>()?;
                if values.len() != n {
                    return Err(Error::GridMismatch(format!(
                        "{} holds {} samples, grid has {n} nodes",
                        path.display(),
                        values.len()
                    )));
                }
                Potential::from_values(values)
            }
        };
        let theta = admissibility(&grid, self.order()?)?.theta_max;
        let v = q.values();
        let margin = v
            .iter()
            .take_while(|x| **x == 0.0)
            .count()
            .min(v.iter().rev().take_while(|x| **x == 0.0).count());
        if margin == 0 {
            return Ok(q);
        }
        let cert = q.clone().certify(&grid, theta, margin.min(n.div_ceil(2) - 1));
        Ok(cert.unwrap_or(q))
    }

    /// The configured potential, which must be admissible.
    pub fn admissible_potential(&self) -> Result<Potential> {
        let q = self.potential()?;
        if !q.is_admissible() {
            return Err(Error::NotAdmissible("configured potential fails the size, slope or margin bounds".into()));
        }
        Ok(q)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("fracspec-out"))
    }
}
