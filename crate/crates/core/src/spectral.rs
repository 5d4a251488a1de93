//! Eigendecomposition, boundary traces φ/d^a and admissibility constants.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::opcore::{
    assemble_fractional_laplacian, BoundaryPair, DiscreteOperator, FractionalOrder, Grid1D,
    Potential, DIM,
};

/// Gap below which two spectral values are treated as colliding.
pub fn tol_gap(lambda: f64) -> f64 {
    1e-8 * (1.0 + lambda.abs())
}

/// Eigenvalues, L²(h)-orthonormal eigenvectors and boundary traces.
#[derive(Debug, Clone)]
pub struct SpectralData {
    lambdas: Vec<f64>,
    modes: DMatrix<f64>,
    traces: Vec<BoundaryPair<f64>>,
    grid: Grid1D,
    order: FractionalOrder,
    potential: Potential,
    free_ground: f64,
}

impl SpectralData {
    /// Reassembles data from stored parts, e.g. a cache payload.
    pub fn from_parts(
        lambdas: Vec<f64>,
        modes: DMatrix<f64>,
        traces: Vec<BoundaryPair<f64>>,
        grid: Grid1D,
        order: FractionalOrder,
        potential: Potential,
        free_ground: f64,
    ) -> Result<Self> {
        let m = lambdas.len();
        if modes.nrows() != grid.n() || modes.ncols() != m || traces.len() != m {
            return Err(Error::InvalidInput(format!(
                "inconsistent spectral parts: {} eigenvalues, {}x{} modes, {} traces, {} nodes",
                m,
                modes.nrows(),
                modes.ncols(),
                traces.len(),
                grid.n()
            )));
        }
        if potential.values().len() != grid.n() {
            return Err(Error::GridMismatch("potential length".into()));
        }
        Ok(Self {
            lambdas,
            modes,
            traces,
            grid,
            order,
            potential,
            free_ground,
        })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }
    pub fn mode(&self, n: usize) -> &[f64] {
        let n_rows = self.modes.nrows();
        &self.modes.as_slice()[n * n_rows..(n + 1) * n_rows]
    }
    pub fn traces(&self) -> &[BoundaryPair<f64>] {
        &self.traces
    }
    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }
    pub fn order(&self) -> FractionalOrder {
        self.order
    }
    pub fn potential(&self) -> &Potential {
        &self.potential
    }
    /// Smallest eigenvalue of the potential-free operator on the same grid.
    pub fn free_ground(&self) -> f64 {
        self.free_ground
    }
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }
    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Grid function Σ c_n φ_n.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(coeffs);
        let k = coeffs.len();
        (self.modes.columns(0, k) * c).as_slice().to_vec()
    }

    /// Coefficients ⟨u, φ_n⟩ for all retained modes.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        let u = DVector::from_column_slice(u);
        (self.modes.tr_mul(&u) * self.grid.h()).as_slice().to_vec()
    }

    /// True when both data live on the same grid with the same order.
    pub fn compatible(&self, other: &SpectralData) -> bool {
        self.grid == other.grid && self.order == other.order
    }
}

/// Linear functional mapping a grid function to its extrapolated φ/d^a
/// values at the two endpoints.
#[derive(Debug, Clone)]
pub struct TraceFunctional {
    left: Vec<(usize, f64)>,
    right: Vec<(usize, f64)>,
}

const TRACE_STENCIL: usize = 3;

impl TraceFunctional {
    pub fn new(grid: &Grid1D, order: FractionalOrder) -> Self {
        let n = grid.n();
        let k = TRACE_STENCIL.min(n);
        let a = order.value();
        let d = grid.dist();
        let side = |idx: Vec<usize>| -> Vec<(usize, f64)> {
            // Least-squares line through (d_i, u_i/d_i^a), evaluated at d = 0.
            let ds: Vec<f64> = idx.iter().map(|&i| d[i]).collect();
            let mean = ds.iter().sum::<f64>() / k as f64;
            let sxx: f64 = ds.iter().map(|x| (x - mean).powi(2)).sum();
            idx.iter()
                .zip(&ds)
                .map(|(&i, &x)| {
                    let c = if sxx > 0.0 {
                        1.0 / k as f64 - mean * (x - mean) / sxx
                    } else {
                        1.0 / k as f64
                    };
                    (i, c / x.powf(a))
                })
                .collect()
        };
        Self {
            left: side((0..k).collect()),
            right: side((0..k).map(|j| n - 1 - j).collect()),
        }
    }

    pub fn apply(&self, u: &[f64]) -> BoundaryPair<f64> {
        let f = |w: &[(usize, f64)]| w.iter().map(|&(i, c)| c * u[i]).sum::<f64>();
        BoundaryPair::new(f(&self.left), f(&self.right))
    }

    /// Sparse weights (node, coefficient) for each endpoint.
    pub fn weights(&self) -> BoundaryPair<&[(usize, f64)]> {
        BoundaryPair::new(&self.left, &self.right)
    }
}

/// One-sided linear extrapolation of φ/d^a to each endpoint from the three
/// nearest nodes.
pub fn boundary_trace(mode: &[f64], grid: &Grid1D, order: FractionalOrder) -> BoundaryPair<f64> {
    TraceFunctional::new(grid, order).apply(mode)
}

/// Smallest eigenvalue of a symmetric positive definite matrix by Cholesky
/// factorization and inverse iteration.
pub fn smallest_eigenvalue(matrix: &DMatrix<f64>) -> Result<f64> {
    let n = matrix.nrows();
    let chol = Cholesky::new(matrix.clone())
        .ok_or_else(|| Error::InvalidInput("matrix is not positive definite".into()))?;
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = f64::INFINITY;
    for _ in 0..500 {
        let mut y = chol.solve(&x);
        y /= y.norm();
        let next = y.dot(&(matrix * &y));
        x = y;
        let done = (next - lambda).abs() <= 4.0 * f64::EPSILON * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    Ok(lambda)
}

/// First `m` eigenpairs of the operator with traces and the sign convention
/// τ(right) > 0, or τ(left) ≥ 0 when τ(right) vanishes.
pub fn eigendecompose(op: &DiscreteOperator, m: usize) -> Result<SpectralData> {
    let grid = op.grid();
    let n = grid.n();
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!("mode count {m} not in 1..={n}")));
    }
    let h = grid.h();
    let eig = SymmetricEigen::new(op.matrix().clone());
    let tf = TraceFunctional::new(grid, op.order());
    let scale = 1.0 / h.sqrt();

    let mut pairs: Vec<(f64, Vec<f64>, BoundaryPair<f64>)> = (0..n)
        .map(|j| (eig.eigenvalues[j], j))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|(lam, j)| {
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().map(|x| x * scale).collect();
            let mut t = tf.apply(&v);
            let zero_right = t.right.abs() <= 1e-12 * t.left.abs().max(f64::MIN_POSITIVE);
            if t.right < 0.0 && !zero_right || zero_right && t.left < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
                t = t * -1.0;
            }
            (lam, v, t)
        })
        .collect();
    pairs.sort_by(|x, y| {
        if (x.0 - y.0).abs() <= tol_gap(x.0) {
            y.2.right
                .total_cmp(&x.2.right)
                .then(y.2.left.total_cmp(&x.2.left))
        } else {
            x.0.total_cmp(&y.0)
        }
    });
    pairs.truncate(m);

    let lambdas: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let traces: Vec<BoundaryPair<f64>> = pairs.iter().map(|p| p.2).collect();
    let modes = DMatrix::from_iterator(n, m, pairs.into_iter().flat_map(|p| p.1));

    for (j, lam) in lambdas.iter().enumerate() {
        let phi = modes.column(j);
        let r = op.matrix() * phi - phi * *lam;
        let rel = r.norm() * h.sqrt() / lam.abs().max(1.0);
        if !(rel < 1e-8) {
            return Err(Error::EigenSolver {
                index: j,
                residual: rel,
            });
        }
    }

    let free_ground = if op.potential().is_zero() {
        lambdas[0]
    } else {
        smallest_eigenvalue(&op.free_matrix())?
    };

    Ok(SpectralData {
        lambdas,
        modes,
        traces,
        grid: grid.clone(),
        order: op.order(),
        potential: op.potential().clone(),
        free_ground,
    })
}

/// Default mode count min(n/4, 64).
pub fn default_modes(n: usize) -> usize {
    (n / 4).clamp(1, 64)
}

/// Result of the empirical trace-growth check.
#[derive(Debug, Clone)]
pub struct TraceBoundReport {
    /// max_n |τ_n|/λ_n.
    pub c_dom: f64,
    pub ratios: Vec<f64>,
    /// Set when the ratios grow monotonically by more than 50% over the last
    /// half of the modes.
    pub flagged: bool,
}

pub fn check_trace_bound(data: &SpectralData) -> Result<TraceBoundReport> {
    let m = data.len();
    if m < 5 {
        return Err(Error::InvalidInput(format!("need at least 5 modes, got {m}")));
    }
    let ratios: Vec<f64> = data
        .traces()
        .iter()
        .zip(data.lambdas())
        .map(|(t, l)| t.left.hypot(t.right) / l.abs())
        .collect();
    let c_dom = ratios.iter().copied().fold(0.0, f64::max);
    let tail = &ratios[m / 2..];
    let monotone = tail.windows(2).all(|w| w[1] >= w[0]);
    let flagged = monotone && tail[tail.len() - 1] > 1.5 * tail[0];
    Ok(TraceBoundReport {
        c_dom,
        ratios,
        flagged,
    })
}

/// Constants that bound the admissible potentials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityConstants {
    pub c_hs: f64,
    pub r: f64,
    pub theta_max: f64,
}

impl AdmissibilityConstants {
    /// Constants from the ground eigenvalue of the potential-free operator.
    pub fn from_ground(grid: &Grid1D, lambda1: f64) -> Self {
        let c_hs = 1.0 / lambda1;
        let r = grid.left().abs().max(grid.right().abs());
        Self {
            c_hs,
            r,
            theta_max: 0.5 / (1.0 + c_hs * (DIM / 2.0 + r)),
        }
    }
}

pub fn admissibility(grid: &Grid1D, order: FractionalOrder) -> Result<AdmissibilityConstants> {
    let op = assemble_fractional_laplacian(grid, order);
    let l1 = smallest_eigenvalue(op.matrix())?;
    Ok(AdmissibilityConstants::from_ground(grid, l1))
}
