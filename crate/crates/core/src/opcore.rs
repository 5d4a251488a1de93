//! Grids, fractional order, potentials and assembly of the discrete restricted
//! fractional Laplacian on an interval.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::ops::{Add, Mul, Sub};

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Spatial dimension. Formulas that carry the dimension use this constant.
pub const DIM: f64 = 1.0;

/// Number of boundary-layer nodes that receive the half-line profile correction.
pub const PROFILE_CORRECTION_NODES: usize = 64;

/// Values attached to the two endpoints of the interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct BoundaryPair<T> {
    pub left: T,
    pub right: T,
}

impl<T> BoundaryPair<T> {
    pub const fn new(left: T, right: T) -> Self {
        Self { left, right }
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> BoundaryPair<U> {
        BoundaryPair {
            left: f(self.left),
            right: f(self.right),
        }
    }

    /// Swaps the two endpoints.
    pub fn reflect(self) -> Self {
        Self {
            left: self.right,
            right: self.left,
        }
    }
}

impl<T: Add<Output = T>> Add for BoundaryPair<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.left + o.left, self.right + o.right)
    }
}

impl<T: Sub<Output = T>> Sub for BoundaryPair<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.left - o.left, self.right - o.right)
    }
}

impl<T: Mul<Output = T> + Copy> Mul<T> for BoundaryPair<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.left * s, self.right * s)
    }
}

/// Uniform grid of interior nodes on `(left, right)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    left: f64,
    right: f64,
    n: usize,
    h: f64,
    nodes: Vec<f64>,
    dist: Vec<f64>,
}

impl Grid1D {
    pub fn new(left: f64, right: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 nodes, got {n}")));
        }
        if !(left.is_finite() && right.is_finite() && left < right) {
            return Err(Error::InvalidGrid(format!("degenerate interval ({left}, {right})")));
        }
        let h = (right - left) / (n + 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| left + (i + 1) as f64 * h).collect();
        // Distances by node index so that reflection symmetry is exact.
        let dist = (0..n)
            .map(|i| (i.min(n - 1 - i) + 1) as f64 * h)
            .collect();
        Ok(Self {
            left,
            right,
            n,
            h,
            nodes,
            dist,
        })
    }

    pub fn left(&self) -> f64 {
        self.left
    }
    pub fn right(&self) -> f64 {
        self.right
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn dist(&self) -> &[f64] {
        &self.dist
    }
    pub fn length(&self) -> f64 {
        self.right - self.left
    }

    pub fn is_centered(&self) -> bool {
        self.left == -self.right
    }

    /// x·ν at the endpoints, with ν = −1 on the left and +1 on the right.
    pub fn x_dot_nu(&self) -> BoundaryPair<f64> {
        BoundaryPair::new(-self.left, self.right)
    }

    /// Discrete L² inner product h·Σ u_i v_i.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.h * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }
}

/// Fractional exponent a of (−Δ)^a.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FractionalOrder(f64);

impl FractionalOrder {
    /// Order in the open interval (1/2, 1).
    pub fn new(a: f64) -> Result<Self> {
        if a > 0.5 && a < 1.0 {
            Ok(Self(a))
        } else {
            Err(Error::InvalidOrder(a))
        }
    }

    /// Any order in (0, 1). Used for reference computations such as a = 1/2.
    pub fn reference(a: f64) -> Result<Self> {
        if a > 0.0 && a < 1.0 {
            Ok(Self(a))
        } else {
            Err(Error::InvalidOrder(a))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FractionalOrder {
    type Error = Error;
    fn try_from(a: f64) -> Result<Self> {
        Self::new(a)
    }
}

impl From<FractionalOrder> for f64 {
    fn from(a: FractionalOrder) -> f64 {
        a.0
    }
}

/// Gamma-function weights of the boundary pairings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaFactors {
    /// Γ(a)Γ(a+1).
    pub g_ibp: f64,
    /// Γ(1+a)².
    pub g_poh: f64,
}

pub fn gamma_factors(a: FractionalOrder) -> GammaFactors {
    let a = a.value();
    let g = gamma(a);
    GammaFactors {
        g_ibp: a * g * g,
        g_poh: a * a * g * g,
    }
}

/// Normalizing constant C_{1,a} = 4^a Γ(1/2+a) / (√π |Γ(−a)|).
pub fn fl_constant(a: FractionalOrder) -> f64 {
    let a = a.value();
    // |Γ(−a)| = Γ(1−a)/a for 0 < a < 1.
    4f64.powf(a) * gamma(0.5 + a) * a / (PI.sqrt() * gamma(1.0 - a))
}

/// ∫_lo^hi z^p dz.
fn powint(p: f64, lo: f64, hi: f64) -> f64 {
    let e = p + 1.0;
    let r = (hi / lo).ln();
    if e.abs() < 1e-14 {
        r
    } else {
        lo.powf(e) * (e * r).exp_m1() / e
    }
}

/// ∫_lo^hi (z − lo) z^{−1−2a} dz.
fn hat_left(lo: f64, hi: f64, a: f64) -> f64 {
    powint(-2.0 * a, lo, hi) - lo * powint(-1.0 - 2.0 * a, lo, hi)
}

/// ∫_lo^hi (hi − z) z^{−1−2a} dz.
fn hat_right(lo: f64, hi: f64, a: f64) -> f64 {
    hi * powint(-1.0 - 2.0 * a, lo, hi) - powint(-2.0 * a, lo, hi)
}

/// ∫_1^∞ θ(1−θ) z^{−1−2a} dz with θ the fractional part of z: the kernel
/// moment of the linear-interpolation error of a quadratic.
pub(crate) fn interpolation_correction(a: f64) -> f64 {
    const CELLS: usize = 4000;
    let rule = GaussLegendre::new(NonZeroUsize::new(16).unwrap());
    let pts: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| ((x + 1.0) / 2.0, w / 2.0))
        .collect();
    let mut s = 0.0;
    for k in 1..CELLS {
        for &(th, w) in &pts {
            s += w * th * (1.0 - th) * (k as f64 + th).powf(-1.0 - 2.0 * a);
        }
    }
    // θ(1−θ) averages to 1/6 over a cell.
    s + (CELLS as f64).powf(-2.0 * a) / (6.0 * 2.0 * a)
}

const EXACT_WEIGHTS: usize = 64;

/// Toeplitz stencil of the operator at unit spacing, entries 0..len.
pub(crate) fn toeplitz_weights(a: f64, len: usize) -> Vec<f64> {
    let near = 1.0 / (2.0 - 2.0 * a) - interpolation_correction(a);
    let mut w = vec![0.0; len.max(2)];
    w[0] = 2.0 * near + 1.0 / a;
    w[1] = -(near + hat_right(1.0, 2.0, a));
    let c2 = (1.0 + 2.0 * a) * (2.0 + 2.0 * a);
    let c4 = c2 * (3.0 + 2.0 * a) * (4.0 + 2.0 * a);
    let c6 = c4 * (5.0 + 2.0 * a) * (6.0 + 2.0 * a);
    for (m, wm) in w.iter_mut().enumerate().skip(2) {
        let mf = m as f64;
        *wm = if m < EXACT_WEIGHTS {
            -(hat_left(mf - 1.0, mf, a) + hat_right(mf, mf + 1.0, a))
        } else {
            let s = 1.0 / (mf * mf);
            -mf.powf(-1.0 - 2.0 * a) * (1.0 + s * (c2 / 12.0 + s * (c4 / 360.0 + s * c6 / 20160.0)))
        };
    }
    w.truncate(len);
    w
}

/// Diagonal corrections δ_k, k = 1..=count, that make the half-line stencil
/// annihilate the profile u_j = j^a.
pub(crate) fn profile_correction(a: f64, count: usize) -> Vec<f64> {
    const J: usize = 200_000;
    let w = toeplitz_weights(a, J + count + 1);
    let u: Vec<f64> = (1..=J).map(|j| (j as f64).powf(a)).collect();
    let y = J as f64 + 0.5;
    (1..=count)
        .map(|k| {
            let s: f64 = u
                .iter()
                .enumerate()
                .map(|(j0, uj)| w[(j0 + 1).abs_diff(k)] * uj)
                .sum();
            // Σ_{j>J} w_{j−k} j^a ≈ −∫_Y^∞ (y−k)^{−1−2a} y^a dy, expanded in k/y.
            let mut tail = 0.0;
            let mut c = 1.0;
            for i in 0..6 {
                let fi = i as f64;
                tail += c * (k as f64).powi(i) * y.powf(-a - fi) / (a + fi);
                c *= (fi + 1.0 + 2.0 * a) / (fi + 1.0);
            }
            (s - tail) / (k as f64).powf(a)
        })
        .collect()
}

/// Potential sampled at the interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    values: Vec<f64>,
    theta_admissible: bool,
    margin: usize,
}

impl Potential {
    pub fn zero(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            theta_admissible: true,
            margin: n / 2,
        }
    }

    /// Unchecked potential; not flagged admissible.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            values,
            theta_admissible: false,
            margin: 0,
        }
    }

    /// Restores a potential together with its certification state.
    pub(crate) fn from_stored(values: Vec<f64>, theta_admissible: bool, margin: usize) -> Self {
        Self {
            values,
            theta_admissible,
            margin,
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self::from_values(vec![c; n])
    }

    /// A·exp(1 − 1/(1−r²)) with r = (x − center)/width, zero for |r| ≥ 1.
    pub fn bump(grid: &Grid1D, center: f64, width: f64, amplitude: f64) -> Self {
        let values = grid
            .nodes()
            .iter()
            .map(|&x| bump_profile((x - center) / width) * amplitude)
            .collect();
        Self::from_values(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn is_admissible(&self) -> bool {
        self.theta_admissible
    }
    pub fn margin(&self) -> usize {
        self.margin
    }
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
    pub fn is_symmetric(&self) -> bool {
        self.values.iter().eq(self.values.iter().rev())
    }

    /// Checks nonnegativity, the size and slope bounds and the zero margin,
    /// and flags the potential admissible.
    pub fn certify(mut self, grid: &Grid1D, theta_max: f64, margin: usize) -> Result<Self> {
        let q = &self.values;
        if q.len() != grid.n() {
            return Err(Error::GridMismatch(format!(
                "potential has {} samples, grid has {} nodes",
                q.len(),
                grid.n()
            )));
        }
        if 2 * margin >= q.len() {
            return Err(Error::NotAdmissible(format!("margin {margin} leaves no support")));
        }
        if let Some(v) = q.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::NotAdmissible(format!("negative value {v}")));
        }
        let qmax = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if qmax > theta_max {
            return Err(Error::NotAdmissible(format!("max |q| = {qmax} > {theta_max}")));
        }
        let slope = max_slope(q, grid.h());
        if slope > theta_max {
            return Err(Error::NotAdmissible(format!("max slope {slope} > {theta_max}")));
        }
        let n = q.len();
        if q[..margin].iter().chain(&q[n - margin..]).any(|&v| v != 0.0) {
            return Err(Error::NotAdmissible(format!("nonzero within margin {margin}")));
        }
        self.theta_admissible = true;
        self.margin = margin;
        Ok(self)
    }

    /// Index-reversed potential.
    pub fn reflected(&self) -> Self {
        Self {
            values: self.values.iter().rev().copied().collect(),
            ..self.clone()
        }
    }
}

pub fn bump_profile(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

/// max |q_{i+1} − q_i|/h including the zero exterior on both sides.
pub fn max_slope(q: &[f64], h: f64) -> f64 {
    let mut m = 0.0f64;
    let mut prev = 0.0;
    for &v in q.iter().chain(std::iter::once(&0.0)) {
        m = m.max((v - prev).abs() / h);
        prev = v;
    }
    m
}

/// Dense matrix of (−Δ)^a + q on the grid with zero exterior condition.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    matrix: DMatrix<f64>,
    grid: Grid1D,
    order: FractionalOrder,
    potential: Potential,
}

impl DiscreteOperator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
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

    /// The operator without its potential.
    pub fn free_matrix(&self) -> DMatrix<f64> {
        let mut m = self.matrix.clone();
        for (i, q) in self.potential.values().iter().enumerate() {
            m[(i, i)] -= q;
        }
        m
    }

    /// Matrix-vector product.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let v = &self.matrix * nalgebra::DVector::from_column_slice(u);
        v.as_slice().to_vec()
    }
}

/// Assembles the restricted fractional Laplacian on `grid`.
///
/// Collocation against the piecewise-linear interpolant of u with exact kernel
/// integrals over each cell and over the exterior, a second-order correction
/// of the singular cell, and a diagonal correction on the first
/// [`PROFILE_CORRECTION_NODES`] nodes from each end that makes the stencil
/// exact on the boundary profile d^a.
pub fn assemble_fractional_laplacian(grid: &Grid1D, order: FractionalOrder) -> DiscreteOperator {
    let a = order.value();
    let n = grid.n();
    let beta = fl_constant(order) * grid.h().powf(-2.0 * a);
    let w = toeplitz_weights(a, n);
    let kc = PROFILE_CORRECTION_NODES.min(n / 2);
    let delta = profile_correction(a, kc);
    let mut matrix = DMatrix::from_fn(n, n, |i, j| beta * w[i.abs_diff(j)]);
    for (k, d) in delta.iter().enumerate() {
        matrix[(k, k)] -= beta * d;
        matrix[(n - 1 - k, n - 1 - k)] -= beta * d;
    }
    DiscreteOperator {
        matrix,
        grid: grid.clone(),
        order,
        potential: Potential::zero(n),
    }
}

/// Returns the operator with diag(q) added.
pub fn add_potential(op: &DiscreteOperator, q: &Potential) -> Result<DiscreteOperator> {
    let n = op.grid.n();
    if q.values().len() != n {
        return Err(Error::GridMismatch(format!(
            "potential has {} samples, operator has {n} nodes",
            q.values().len()
        )));
    }
    let mut matrix = op.matrix.clone();
    for (i, v) in q.values().iter().enumerate() {
        matrix[(i, i)] += v;
    }
    let potential = if op.potential.is_zero() {
        q.clone()
    } else {
        let values = op
            .potential
            .values()
            .iter()
            .zip(q.values())
            .map(|(a, b)| a + b)
            .collect();
        Potential::from_values(values)
    };
    Ok(DiscreteOperator {
        matrix,
        grid: op.grid.clone(),
        order: op.order,
        potential,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_examples() {
        let g = Grid1D::new(-1.0, 1.0, 4).unwrap();
        assert_relative_eq!(g.h(), 0.4, epsilon = 1e-15);
        for (x, e) in g.nodes().iter().zip([-0.6, -0.2, 0.2, 0.6]) {
            assert_relative_eq!(*x, e, epsilon = 1e-15);
        }
        for (d, e) in g.dist().iter().zip([0.4, 0.8, 0.8, 0.4]) {
            assert_relative_eq!(*d, e, epsilon = 1e-15);
        }
        let g = Grid1D::new(0.0, 1.0, 3).unwrap();
        assert_eq!(g.nodes(), &[0.25, 0.5, 0.75]);
        assert_eq!(g.dist(), &[0.25, 0.5, 0.25]);
        assert!(Grid1D::new(0.0, 1.0, 1).is_err());
        assert!(Grid1D::new(1.0, 1.0, 8).is_err());
    }

    #[test]
    fn order_range() {
        assert!(FractionalOrder::new(0.5).is_err());
        assert!(FractionalOrder::new(1.0).is_err());
        assert!(FractionalOrder::new(0.75).is_ok());
        assert!(FractionalOrder::reference(0.5).is_ok());
    }

    #[test]
    fn gamma_examples() {
        let g = gamma_factors(FractionalOrder::reference(0.5).unwrap());
        assert_relative_eq!(g.g_ibp, PI / 2.0, max_relative = 1e-13);
        assert_relative_eq!(g.g_poh, PI / 4.0, max_relative = 1e-13);
        let g = gamma_factors(FractionalOrder::new(0.75).unwrap());
        assert_relative_eq!(g.g_ibp, 1.126235, max_relative = 1e-6);
        let g = gamma_factors(FractionalOrder::new(1.0 - 1e-9).unwrap());
        assert_relative_eq!(g.g_ibp, 1.0, max_relative = 1e-6);
        assert_relative_eq!(g.g_poh, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn stencil_sums_to_zero() {
        for a in [0.5, 0.6, 0.75, 0.99] {
            let w = toeplitz_weights(a, 4000);
            let tail: f64 = w[1..].iter().sum();
            // Remaining tail beyond 4000 is ≈ −∫ z^{−1−2a} = −4000^{−2a}/(2a).
            let rest = -(4000f64 - 0.5).powf(-2.0 * a) / (2.0 * a);
            assert!((w[0] + 2.0 * (tail + rest)).abs() < 1e-9, "a = {a}");
        }
    }

    #[test]
    fn series_matches_exact_weights_at_switch() {
        let a = 0.7;
        let m = EXACT_WEIGHTS as f64;
        let exact = -(hat_left(m - 1.0, m, a) + hat_right(m, m + 1.0, a));
        let w = toeplitz_weights(a, EXACT_WEIGHTS + 1);
        assert_relative_eq!(w[EXACT_WEIGHTS], exact, max_relative = 1e-11);
    }

    #[test]
    fn half_integer_order_uses_log_branch() {
        let w = toeplitz_weights(0.5, 8);
        assert!(w.iter().all(|v| v.is_finite()));
        assert!(w[0] > 0.0 && w[1..].iter().all(|&v| v < 0.0));
    }

    #[test]
    fn constant_shift() {
        let g = Grid1D::new(-1.0, 1.0, 16).unwrap();
        let op = assemble_fractional_laplacian(&g, FractionalOrder::new(0.6).unwrap());
        let shifted = add_potential(&op, &Potential::constant(16, 0.1)).unwrap();
        let d = shifted.matrix() - op.matrix();
        assert_relative_eq!(d.trace(), 1.6, epsilon = 1e-12);
        assert!(add_potential(&op, &Potential::zero(15)).is_err());
    }

    #[test]
    fn certify_rejects() {
        let g = Grid1D::new(-1.0, 1.0, 64).unwrap();
        let q = Potential::bump(&g, 0.0, 0.5, 0.04);
        assert!(q.clone().certify(&g, 0.2, 8).unwrap().is_admissible());
        assert!(q.clone().certify(&g, 0.01, 8).is_err());
        assert!(Potential::bump(&g, 0.0, 0.5, -0.05).certify(&g, 0.2, 8).is_err());
        assert!(Potential::bump(&g, 0.8, 0.5, 0.05).certify(&g, 0.2, 8).is_err());
    }
}
