//! Spectral-series forward maps: elliptic solutions with singular boundary
//! data, Neumann differences and the DN limit, the nonlocal heat evolution and
//! its Laplace transform.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opcore::{gamma_factors, BoundaryPair, DiscreteOperator, Grid1D};
use crate::spectral::{tol_gap, SpectralData};

pub type Pair = BoundaryPair<f64>;
pub type CPair = BoundaryPair<Complex64>;

fn complexify(p: Pair) -> CPair {
    p.map(|v| Complex64::new(v, 0.0))
}

/// F(left)τ(left) + F(right)τ(right).
pub fn boundary_pairing(f: CPair, tau: Pair) -> Complex64 {
    f.left * tau.left + f.right * tau.right
}

fn real_pairing(f: Pair, tau: Pair) -> f64 {
    f.left * tau.left + f.right * tau.right
}

fn check_gap(data: &SpectralData, lambda: Complex64, modes: usize) -> Result<()> {
    let gap = tol_gap(lambda.norm());
    for (index, &eigenvalue) in data.lambdas()[..modes].iter().enumerate() {
        if (lambda - eigenvalue).norm() <= gap {
            return Err(Error::SpectralCollision {
                lambda: lambda.to_string(),
                index,
                eigenvalue,
                gap,
            });
        }
    }
    Ok(())
}

fn check_modes(data: &SpectralData, k: usize) -> Result<()> {
    if k == 0 || k > data.len() {
        return Err(Error::InvalidInput(format!(
            "mode count {k} not in 1..={}",
            data.len()
        )));
    }
    Ok(())
}

/// Series solution Σ c_n φ_n of the resolvent problem with singular data F.
#[derive(Debug, Clone)]
pub struct EllipticSolution<'a> {
    data: &'a SpectralData,
    lambda: Complex64,
    coeffs: Vec<Complex64>,
}

impl<'a> EllipticSolution<'a> {
    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Grid function Σ c_n φ_n.
    pub fn materialize(&self) -> Vec<Complex64> {
        let n = self.data.grid().n();
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        for (j, c) in self.coeffs.iter().enumerate() {
            for (vi, p) in v.iter_mut().zip(self.data.mode(j)) {
                *vi += c * p;
            }
        }
        v
    }
}

/// c_n = −Γ(a)Γ(a+1)⟨F, τ_n⟩/(λ − λ_n).
pub fn solve_elliptic_series(
    data: &SpectralData,
    lambda: Complex64,
    f: CPair,
) -> Result<EllipticSolution<'_>> {
    check_gap(data, lambda, data.len())?;
    let g = gamma_factors(data.order()).g_ibp;
    let coeffs = data
        .traces()
        .iter()
        .zip(data.lambdas())
        .map(|(t, l)| -g * boundary_pairing(f, *t) / (lambda - l))
        .collect();
    Ok(EllipticSolution {
        data,
        lambda,
        coeffs,
    })
}

/// Boundary Neumann observable with truncation information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DNSample {
    pub values: CPair,
    pub modes: usize,
    /// Convergence estimate: tail increment for series, extrapolation
    /// residual for limits.
    pub convergence: f64,
}

impl DNSample {
    pub fn norm(&self) -> f64 {
        self.values.left.norm().hypot(self.values.right.norm())
    }

    pub fn distance(&self, other: &DNSample) -> f64 {
        (self.values.left - other.values.left)
            .norm()
            .hypot((self.values.right - other.values.right).norm())
    }
}

fn pair_max_norm(p: CPair) -> f64 {
    p.left.norm().max(p.right.norm())
}

fn sum_series(terms: &[CPair]) -> (CPair, f64) {
    let zero = CPair::default();
    let total = terms.iter().fold(zero, |s, t| s + *t);
    let k = terms.len();
    let decile = k.div_ceil(10);
    let tail = terms[k - decile..].iter().fold(zero, |s, t| s + *t);
    (total, pair_max_norm(tail))
}

/// Γ(a)Γ(a+1) Σ_{n≤K} (μ₁−μ₂)/((μ₁−λ_n)(μ₂−λ_n)) ⟨F,τ_n⟩ τ_n.
pub fn neumann_difference_series(
    data: &SpectralData,
    mu1: Complex64,
    mu2: Complex64,
    f: CPair,
    k: usize,
) -> Result<DNSample> {
    check_modes(data, k)?;
    check_gap(data, mu1, k)?;
    check_gap(data, mu2, k)?;
    let terms = difference_terms(data, mu1, mu2, f, k);
    let (values, convergence) = sum_series(&terms);
    Ok(DNSample {
        values,
        modes: k,
        convergence,
    })
}

fn difference_terms(
    data: &SpectralData,
    mu1: Complex64,
    mu2: Complex64,
    f: CPair,
    k: usize,
) -> Vec<CPair> {
    let g = gamma_factors(data.order()).g_ibp;
    data.traces()[..k]
        .iter()
        .zip(data.lambdas())
        .map(|(t, l)| {
            let c = g * (mu1 - mu2) / ((mu1 - l) * (mu2 - l)) * boundary_pairing(f, *t);
            complexify(*t).map(|v| v * c)
        })
        .collect()
}

/// −Γ(a)Γ(a+1) Σ_{n≤K} ⟨F,τ_n⟩ τ_n/(μ − λ_n), the closed-form limit of the
/// Neumann difference series as μ₂ → −∞.
pub fn dn_series(data: &SpectralData, mu: Complex64, f: CPair, k: usize) -> Result<DNSample> {
    check_modes(data, k)?;
    check_gap(data, mu, k)?;
    let g = gamma_factors(data.order()).g_ibp;
    let terms: Vec<CPair> = data.traces()[..k]
        .iter()
        .zip(data.lambdas())
        .map(|(t, l)| {
            let c = -g * boundary_pairing(f, *t) / (mu - l);
            complexify(*t).map(|v| v * c)
        })
        .collect();
    let (values, convergence) = sum_series(&terms);
    Ok(DNSample {
        values,
        modes: k,
        convergence,
    })
}

/// Controls of the μ₂ → −∞ limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DnOptions {
    /// Modes kept in each series; clipped to the available modes.
    pub modes: usize,
    /// Largest ladder level l.
    pub l_max: u64,
    /// Accepted residual between the last two extrapolated levels.
    pub tol: f64,
}

impl Default for DnOptions {
    fn default() -> Self {
        Self {
            modes: usize::MAX,
            l_max: 1 << 20,
            tol: 1e-8,
        }
    }
}

const RICHARDSON_DEPTH: usize = 4;

/// Polynomial extrapolation to x = 0 through the given points (Neville).
fn extrapolate_to_zero(xs: &[f64], ys: &[Complex64]) -> Complex64 {
    let mut p = ys.to_vec();
    let k = xs.len();
    for m in 1..k {
        for i in 0..k - m {
            p[i] = (xs[i + m] * p[i] - xs[i] * p[i + 1]) / (xs[i + m] - xs[i]);
        }
    }
    p[0]
}

/// Limit of the Neumann difference series along μ₂ = −l + min(λ₁⁰, λ₁) + i,
/// l = 1, 2, 4, …, l_max, extrapolated in 1/l.
pub fn dn_map(data: &SpectralData, mu1: Complex64, f: CPair, opts: DnOptions) -> Result<DNSample> {
    let k = opts.modes.min(data.len());
    check_modes(data, k)?;
    check_gap(data, mu1, k)?;
    let base = data.free_ground().min(data.lambdas()[0]);
    let mut xs = Vec::new();
    let mut levels: Vec<CPair> = Vec::new();
    let mut scale = 0.0f64;
    let mut l = 1u64;
    while l <= opts.l_max.max(2) {
        let mu2 = Complex64::new(base - l as f64, 1.0);
        check_gap(data, mu2, k)?;
        let terms = difference_terms(data, mu1, mu2, f, k);
        scale = scale.max(terms.iter().map(|t| pair_max_norm(*t)).sum());
        levels.push(sum_series(&terms).0);
        xs.push(1.0 / l as f64);
        l *= 2;
    }
    let estimate = |end: usize| -> CPair {
        let start = (end + 1).saturating_sub(RICHARDSON_DEPTH + 1);
        let x = &xs[start..=end];
        let left: Vec<Complex64> = levels[start..=end].iter().map(|p| p.left).collect();
        let right: Vec<Complex64> = levels[start..=end].iter().map(|p| p.right).collect();
        CPair::new(extrapolate_to_zero(x, &left), extrapolate_to_zero(x, &right))
    };
    let last = levels.len() - 1;
    let values = estimate(last);
    let prev = estimate(last - 1);
    let residual = pair_max_norm(values - prev).max(64.0 * f64::EPSILON * scale);
    if residual > opts.tol.max(64.0 * f64::EPSILON * scale) {
        return Err(Error::NoConvergence {
            residual,
            tol: opts.tol,
        });
    }
    Ok(DNSample {
        values,
        modes: k,
        convergence: residual,
    })
}

/// Time-sampled singular Dirichlet data at the two endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFunction {
    horizon: f64,
    values: Vec<Pair>,
    lead: usize,
    trail: usize,
}

impl BoundaryFunction {
    /// Samples on the uniform grid t_k = k·T/K, k = 0..=K, with zero leading
    /// and trailing margins of `lead` and `trail` samples.
    pub fn new(horizon: f64, values: Vec<Pair>, lead: usize, trail: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!("horizon {horizon} must be positive")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidInput("need at least one time step".into()));
        }
        let zero = Pair::default();
        if values[0] != zero {
            return Err(Error::InvalidInput("boundary data must vanish at t = 0".into()));
        }
        let k = values.len();
        if lead + trail > k || values[..lead].iter().chain(&values[k - trail..]).any(|v| *v != zero) {
            return Err(Error::InvalidInput("boundary data nonzero inside declared margins".into()));
        }
        Ok(Self {
            horizon,
            values,
            lead,
            trail,
        })
    }

    /// Samples `f` and infers the zero margins.
    pub fn from_fn(horizon: f64, steps: usize, f: impl Fn(f64) -> Pair) -> Result<Self> {
        let dt = horizon / steps as f64;
        let values: Vec<Pair> = (0..=steps).map(|k| f(k as f64 * dt)).collect();
        let zero = Pair::default();
        let lead = values.iter().take_while(|v| **v == zero).count();
        let trail = values.iter().rev().take_while(|v| **v == zero).count();
        let (lead, trail) = if lead == values.len() { (lead, 0) } else { (lead, trail) };
        Self::new(horizon, values, lead, trail)
    }

    pub fn zero(horizon: f64, steps: usize) -> Result<Self> {
        Self::from_fn(horizon, steps, |_| Pair::default())
    }

    /// amp·exp(1 − 1/(1 − r²)) on (t_on, t_off), r the rescaled time.
    pub fn smooth_bump(horizon: f64, steps: usize, t_on: f64, t_off: f64, amp: Pair) -> Result<Self> {
        if !(0.0 < t_on && t_on < t_off && t_off < horizon) {
            return Err(Error::InvalidInput(format!(
                "bump support ({t_on}, {t_off}) must lie inside (0, {horizon})"
            )));
        }
        let mid = 0.5 * (t_on + t_off);
        let half = 0.5 * (t_off - t_on);
        Self::from_fn(horizon, steps, |t| {
            amp * crate::opcore::bump_profile((t - mid) / half)
        })
    }

    /// Piecewise-linear hat rising on [t1, tm] and falling on [tm, t2].
    pub fn hat(horizon: f64, steps: usize, t1: f64, t2: f64, amp: Pair) -> Result<Self> {
        if !(0.0 <= t1 && t1 < t2 && t2 <= horizon) {
            return Err(Error::InvalidInput(format!("hat support ({t1}, {t2}) invalid")));
        }
        let tm = 0.5 * (t1 + t2);
        Self::from_fn(horizon, steps, |t| {
            let s = if t <= t1 || t >= t2 {
                0.0
            } else if t <= tm {
                (t - t1) / (tm - t1)
            } else {
                (t2 - t) / (t2 - tm)
            };
            amp * s
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }
    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|k| self.time(k)).collect()
    }
    pub fn values(&self) -> &[Pair] {
        &self.values
    }
    pub fn margins(&self) -> (usize, usize) {
        (self.lead, self.trail)
    }

    /// Piecewise-linear interpolation; zero beyond the horizon.
    pub fn value_at(&self, t: f64) -> Pair {
        if t <= 0.0 || t >= self.horizon {
            return if t == self.horizon { self.values[self.steps()] } else { Pair::default() };
        }
        let x = t / self.dt();
        let k = (x.floor() as usize).min(self.steps() - 1);
        let s = x - k as f64;
        self.values[k] * (1.0 - s) + self.values[k + 1] * s
    }

    /// Pointwise linear combination on the same time grid.
    pub fn combine(&self, alpha: f64, other: &BoundaryFunction, beta: f64) -> Result<Self> {
        if self.horizon != other.horizon || self.steps() != other.steps() {
            return Err(Error::InvalidInput("time grids differ".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a * alpha + *b * beta)
            .collect();
        Self::new(
            self.horizon,
            values,
            self.lead.min(other.lead),
            self.trail.min(other.trail),
        )
    }
}

/// (1 − e^{−z})/z.
pub fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < 0.5 {
        let mut term = Complex64::new(1.0, 0.0);
        let mut s = term;
        for j in 1..20 {
            term *= -z / (j as f64 + 1.0);
            s += term;
        }
        s
    } else {
        (1.0 - (-z).exp()) / z
    }
}

/// (1 − e^{−z}(1 + z))/z² = ∫_0^1 σ e^{−zσ} dσ.
pub fn psi(z: Complex64) -> Complex64 {
    if z.norm() < 0.5 {
        // Σ (−z)^j (j+1)/(j+2)!
        let mut pow = Complex64::new(1.0, 0.0);
        let mut fact = 2.0;
        let mut s = Complex64::new(0.5, 0.0);
        for j in 1..20 {
            pow *= -z;
            fact *= j as f64 + 2.0;
            s += pow * ((j + 1) as f64 / fact);
        }
        s
    } else {
        (1.0 - (-z).exp() * (1.0 + z)) / (z * z)
    }
}

fn rphi1(z: f64) -> f64 {
    phi1(Complex64::new(z, 0.0)).re
}
fn rpsi(z: f64) -> f64 {
    psi(Complex64::new(z, 0.0)).re
}

/// Per-mode coefficient table of the heat evolution with boundary forcing.
#[derive(Debug, Clone)]
pub struct ParabolicSolution<'a> {
    data: &'a SpectralData,
    forcing: BoundaryFunction,
    /// (K+1)×M table c_n(t_k).
    coeffs: DMatrix<f64>,
    /// (K+1)×M table g_n(t_k) = ⟨f(t_k), τ_n⟩.
    g: DMatrix<f64>,
}

impl<'a> ParabolicSolution<'a> {
    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }
    pub fn forcing_table(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn forcing(&self) -> &BoundaryFunction {
        &self.forcing
    }
    pub fn data(&self) -> &SpectralData {
        self.data
    }
    pub fn times(&self) -> Vec<f64> {
        self.forcing.times()
    }
    pub fn horizon(&self) -> f64 {
        self.forcing.horizon()
    }

    pub fn coeffs_at_step(&self, k: usize) -> Vec<f64> {
        self.coeffs.row(k).iter().copied().collect()
    }

    /// Coefficients at an arbitrary time, exact for the piecewise-linear
    /// forcing; beyond the horizon the free decay is used.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let big_t = self.horizon();
        if t >= big_t {
            return extend_coeffs(self.data.lambdas(), &self.coeffs_at_step(self.forcing.steps()), t - big_t);
        }
        if t <= 0.0 {
            return vec![0.0; self.data.len()];
        }
        let dt = self.forcing.dt();
        let k = ((t / dt).floor() as usize).min(self.forcing.steps() - 1);
        let tau = t - k as f64 * dt;
        let fk = self.forcing.values()[k];
        let ft = self.forcing.value_at(t);
        let gib = gamma_factors(self.data.order()).g_ibp;
        self.data
            .lambdas()
            .iter()
            .zip(self.data.traces())
            .enumerate()
            .map(|(n, (&l, tr))| {
                let z = l * tau;
                let (p1, ps) = (rphi1(z), rpsi(z));
                let g0 = real_pairing(fk, *tr);
                let g1 = real_pairing(ft, *tr);
                (-z).exp() * self.coeffs[(k, n)] - gib * tau * (ps * g0 + (p1 - ps) * g1)
            })
            .collect()
    }

    /// Grid function Σ c_n(t) φ_n.
    pub fn field_at(&self, t: f64) -> Vec<f64> {
        self.data.synthesize(&self.at(t))
    }
}

fn extend_coeffs(lambdas: &[f64], c: &[f64], dt: f64) -> Vec<f64> {
    c.iter().zip(lambdas).map(|(c, l)| c * (-l * dt).exp()).collect()
}

/// Exact exponential integrator of c_n′ + λ_n c_n = −Γ(a)Γ(a+1) g_n for
/// piecewise-linear g_n.
pub fn solve_parabolic<'a>(data: &'a SpectralData, f: &BoundaryFunction) -> ParabolicSolution<'a> {
    let m = data.len();
    let steps = f.steps();
    let dt = f.dt();
    let gib = gamma_factors(data.order()).g_ibp;
    let g = DMatrix::from_fn(steps + 1, m, |k, n| real_pairing(f.values()[k], data.traces()[n]));
    let mut coeffs = DMatrix::zeros(steps + 1, m);
    for (n, &l) in data.lambdas().iter().enumerate() {
        let z = l * dt;
        let decay = (-z).exp();
        let (p1, ps) = (rphi1(z), rpsi(z));
        let w0 = gib * dt * ps;
        let w1 = gib * dt * (p1 - ps);
        for k in 0..steps {
            coeffs[(k + 1, n)] = decay * coeffs[(k, n)] - w0 * g[(k, n)] - w1 * g[(k + 1, n)];
        }
    }
    ParabolicSolution {
        data,
        forcing: f.clone(),
        coeffs,
        g,
    }
}

/// Coefficients after the horizon, c_n(t) = e^{−λ_n(t−T)} c_n(T).
pub fn extend_parabolic(sol: &ParabolicSolution<'_>, t: f64) -> Result<Vec<f64>> {
    let big_t = sol.horizon();
    if !(t >= big_t) {
        return Err(Error::InvalidInput(format!("extension time {t} before horizon {big_t}")));
    }
    if *sol.forcing.values().last().unwrap() != Pair::default() {
        return Err(Error::InvalidInput("forcing does not vanish at the horizon".into()));
    }
    Ok(extend_coeffs(
        sol.data.lambdas(),
        &sol.coeffs_at_step(sol.forcing.steps()),
        t - big_t,
    ))
}

/// ∫_T^∞ ‖w‖² dt = Σ c_n(T)²/(2λ_n).
pub fn tail_mass(sol: &ParabolicSolution<'_>) -> f64 {
    let last = sol.coeffs_at_step(sol.forcing.steps());
    last.iter()
        .zip(sol.data.lambdas())
        .map(|(c, l)| c * c / (2.0 * l))
        .sum()
}

/// ∫_0^T e^{−st} f(t) dt, exact for the piecewise-linear interpolant.
pub fn laplace_boundary(f: &BoundaryFunction, s: Complex64) -> Result<CPair> {
    if !(s.re > 0.0) {
        return Err(Error::InvalidInput(format!("Re(s) must be positive, got {s}")));
    }
    let dt = f.dt();
    let z = s * dt;
    let (p1, ps) = (phi1(z), psi(z));
    let w0 = (p1 - ps) * dt;
    let w1 = ps * dt;
    let mut acc = CPair::default();
    for (k, pair) in f.values().windows(2).enumerate() {
        let e = (-s * f.time(k)).exp();
        acc = acc + complexify(pair[0]).map(|v| v * w0 * e) + complexify(pair[1]).map(|v| v * w1 * e);
    }
    Ok(acc)
}

/// Max over modes of the relative gap between the quadrature Laplace
/// transform of c_n (with the decay extension) and
/// −Γ(a)Γ(a+1) L(g_n)(s)/(s + λ_n).
pub fn verify_laplace_consistency(data: &SpectralData, f: &BoundaryFunction, s: Complex64) -> Result<f64> {
    let sol = solve_parabolic(data, f);
    let lf = laplace_boundary(f, s)?;
    let gib = gamma_factors(data.order()).g_ibp;
    for &l in data.lambdas() {
        if (s + l).norm() <= tol_gap(s.norm()) {
            return Err(Error::InvalidInput(format!("−s = {} on the spectrum", -s)));
        }
    }
    let closed: Vec<Complex64> = data
        .traces()
        .iter()
        .zip(data.lambdas())
        .map(|(t, l)| -gib * boundary_pairing(lf, *t) / (s + l))
        .collect();

    let rule = GaussLegendre::new(NonZeroUsize::new(16).unwrap());
    let pts = rule.as_node_weight_pairs();
    let dt = f.dt();
    let mut quad = vec![Complex64::new(0.0, 0.0); data.len()];
    for k in 0..f.steps() {
        let t0 = f.time(k);
        for &(x, w) in pts {
            let t = t0 + 0.5 * dt * (x + 1.0);
            let e = (-s * t).exp() * (0.5 * dt * w);
            for (q, c) in quad.iter_mut().zip(sol.at(t)) {
                *q += e * c;
            }
        }
    }
    let big_t = f.horizon();
    let last = sol.coeffs_at_step(f.steps());
    for ((q, c), l) in quad.iter_mut().zip(&last).zip(data.lambdas()) {
        *q += c * (-s * big_t).exp() / (s + l);
    }

    let scale = closed.iter().map(|c| c.norm()).fold(0.0, f64::max);
    Ok(quad
        .iter()
        .zip(&closed)
        .map(|(q, c)| {
            let diff = (q - c).norm();
            if diff == 0.0 {
                0.0
            } else {
                diff / (c.norm() + 1e-14 * scale)
            }
        })
        .fold(0.0, f64::max))
}

/// Laplace-domain parabolic DN observable: the elliptic DN map at resolvent
/// parameter −s applied to the transformed boundary data.
pub fn laplace_dn(data: &SpectralData, f: &BoundaryFunction, s: Complex64, opts: DnOptions) -> Result<DNSample> {
    let lf = laplace_boundary(f, s)?;
    dn_map(data, -s, lf, opts)
}

/// Exact s-harmonic liftings (r−x)^a (x−l)^{a−1}/L^a and its mirror, with
/// unit singular data at the left and right endpoint respectively.
pub fn singular_lifting(grid: &Grid1D, a: f64, f: Pair) -> Vec<f64> {
    let n = grid.n();
    let h = grid.h();
    let len = grid.length();
    (0..n)
        .map(|i| {
            let dl = (i + 1) as f64 * h;
            let dr = (n - i) as f64 * h;
            let base = (dl * dr / len).powf(a);
            base * (f.left / dl + f.right / dr)
        })
        .collect()
}

/// Discrete solution of ((−Δ)^a + q − λ)v = 0 in Ω with singular data F:
/// the lifting plus a zero-exterior correction.
pub fn harmonic_extension(op: &DiscreteOperator, lambda: f64, f: Pair) -> Result<Vec<f64>> {
    let [vl, vr] = unit_extensions(op, lambda)?;
    Ok(vl.iter().zip(&vr).map(|(l, r)| f.left * l + f.right * r).collect())
}

fn unit_extensions(op: &DiscreteOperator, lambda: f64) -> Result<[Vec<f64>; 2]> {
    let grid = op.grid();
    let n = grid.n();
    let a = op.order().value();
    let q = op.potential().values();
    let mut m = op.matrix().clone();
    for i in 0..n {
        m[(i, i)] -= lambda;
    }
    let lu = m.lu();
    let solve = |f: Pair| -> Result<Vec<f64>> {
        let psi = singular_lifting(grid, a, f);
        let rhs = DVector::from_iterator(n, psi.iter().zip(q).map(|(p, q)| (lambda - q) * p));
        let w = lu
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidInput(format!("resolvent singular at {lambda}")))?;
        Ok(psi.iter().zip(w.iter()).map(|(p, w)| p + w).collect())
    };
    Ok([solve(Pair::new(1.0, 0.0))?, solve(Pair::new(0.0, 1.0))?])
}

/// Both sides of the integration-by-parts identity for one eigenpair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbpResidual {
    /// h·Σ(φ_n·λv − v·Aφ_n).
    pub volume: f64,
    /// Γ(a)Γ(a+1)⟨F, τ_n⟩.
    pub boundary: f64,
    /// |volume + boundary| over the summed magnitudes of both sides taken
    /// endpoint by endpoint.
    pub relative: f64,
}

/// Integration-by-parts residual for mode `n` against the resolvent solution
/// at real parameter `lambda` with singular data `f`.
pub fn ibp_residual(op: &DiscreteOperator, data: &SpectralData, n: usize, lambda: f64, f: Pair) -> Result<IbpResidual> {
    if op.grid() != data.grid() {
        return Err(Error::GridMismatch("operator and spectral data grids differ".into()));
    }
    check_modes(data, n + 1)?;
    check_gap(data, Complex64::new(lambda, 0.0), data.len())?;
    let units = unit_extensions(op, lambda)?;
    let phi = data.mode(n);
    let aphi = op.apply(phi);
    let h = data.grid().h();
    let gib = gamma_factors(data.order()).g_ibp;
    let tau = data.traces()[n];
    let vol: Vec<f64> = units
        .iter()
        .map(|v| {
            h * phi
                .iter()
                .zip(v)
                .zip(&aphi)
                .map(|((p, v), ap)| p * lambda * v - v * ap)
                .sum::<f64>()
        })
        .collect();
    let bnd = [gib * tau.left, gib * tau.right];
    let weights = [f.left, f.right];
    let volume = weights[0] * vol[0] + weights[1] * vol[1];
    let boundary = weights[0] * bnd[0] + weights[1] * bnd[1];
    let denom: f64 = (0..2)
        .map(|s| weights[s].abs() * (vol[s].abs() + bnd[s].abs()))
        .sum();
    let relative = if denom == 0.0 {
        0.0
    } else {
        (volume + boundary).abs() / denom
    };
    Ok(IbpResidual {
        volume,
        boundary,
        relative,
    })
}
