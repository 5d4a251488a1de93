//! Spectral misfit, first-order sensitivities, the transport identity,
//! distinguishability experiments and Gauss–Newton reconstruction of q.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{laplace_dn, solve_parabolic, BoundaryFunction, DnOptions, Pair, ParabolicSolution};
use crate::opcore::{
    add_potential, assemble_fractional_laplacian, gamma_factors, max_slope, DiscreteOperator,
    FractionalOrder, Grid1D, Potential,
};
use crate::spectral::{eigendecompose, tol_gap, AdmissibilityConstants, SpectralData};

/// Weighted distance between the boundary spectral data of two potentials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralMisfit {
    pub modes: usize,
    /// Σ w_n (λ_n¹ − λ_n²)².
    pub eig_part: f64,
    /// Σ w_n |τ_n¹ − τ_n²|².
    pub trace_part: f64,
    pub weights: Vec<f64>,
    /// Share of the eigenvalue part in [`SpectralMisfit::total`].
    pub alpha: f64,
}

impl SpectralMisfit {
    pub fn total(&self) -> f64 {
        self.alpha * self.eig_part + (1.0 - self.alpha) * self.trace_part
    }
}

/// Default eigenvalue share of the misfit.
pub const DEFAULT_ALPHA: f64 = 0.5;

fn check_compatible(d1: &SpectralData, d2: &SpectralData) -> Result<()> {
    if !d1.compatible(d2) {
        return Err(Error::GridMismatch("spectral data on different grids or orders".into()));
    }
    Ok(())
}

/// Misfit over the first `m` modes. Default weights are 1/(λ_n¹ λ_n²).
pub fn spectral_misfit(d1: &SpectralData, d2: &SpectralData, m: usize, weights: Option<&[f64]>) -> Result<SpectralMisfit> {
    check_compatible(d1, d2)?;
    if m == 0 || m > d1.len() || m > d2.len() {
        return Err(Error::InvalidInput(format!("mode count {m} exceeds available data")));
    }
    let weights: Vec<f64> = match weights {
        Some(w) if w.len() >= m => w[..m].to_vec(),
        Some(w) => return Err(Error::InvalidInput(format!("{} weights for {m} modes", w.len()))),
        None => (0..m).map(|n| 1.0 / (d1.lambdas()[n] * d2.lambdas()[n])).collect(),
    };
    let mut eig_part = 0.0;
    let mut trace_part = 0.0;
    for (n, w) in weights.iter().enumerate() {
        eig_part += w * (d1.lambdas()[n] - d2.lambdas()[n]).powi(2);
        let dt = d1.traces()[n] - d2.traces()[n];
        trace_part += w * (dt.left * dt.left + dt.right * dt.right);
    }
    Ok(SpectralMisfit {
        modes: m,
        eig_part,
        trace_part,
        weights,
        alpha: DEFAULT_ALPHA,
    })
}

fn check_simple(data: &SpectralData, n: usize) -> Result<()> {
    let l = data.lambdas();
    if n >= l.len() {
        return Err(Error::InvalidInput(format!("mode {n} not available")));
    }
    let gap = [n.checked_sub(1), Some(n + 1)]
        .iter()
        .flatten()
        .filter_map(|&k| l.get(k))
        .map(|v| (v - l[n]).abs())
        .fold(f64::INFINITY, f64::min);
    if gap <= tol_gap(l[n]) {
        return Err(Error::DegenerateEigenvalue { index: n, gap });
    }
    Ok(())
}

/// ∂λ_n/∂q_i = h φ_n(x_i)².
pub fn eig_derivative(data: &SpectralData, n: usize) -> Result<Vec<f64>> {
    check_simple(data, n)?;
    let h = data.grid().h();
    Ok(data.mode(n).iter().map(|p| h * p * p).collect())
}

/// ∂τ_n/∂q_i = Σ_{m≠n, m<K} h φ_m(x_i) φ_n(x_i)/(λ_n − λ_m) τ_m.
pub fn trace_derivative(data: &SpectralData, n: usize, k: usize) -> Result<Vec<Pair>> {
    check_simple(data, n)?;
    if k == 0 || k > data.len() {
        return Err(Error::InvalidInput(format!("mode count {k} not in 1..={}", data.len())));
    }
    let h = data.grid().h();
    let l = data.lambdas();
    let phi_n = data.mode(n);
    let mut out = vec![Pair::default(); data.grid().n()];
    for m in (0..k).filter(|&m| m != n) {
        let c = h / (l[n] - l[m]);
        let tm = data.traces()[m];
        for ((o, pm), pn) in out.iter_mut().zip(data.mode(m)).zip(phi_n) {
            let s = c * pm * pn;
            o.left += s * tm.left;
            o.right += s * tm.right;
        }
    }
    Ok(out)
}

/// Settings of [`reconstruct`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReconstructionOptions {
    pub modes: usize,
    pub reg: f64,
    pub max_iter: usize,
    pub alpha: f64,
    /// Fine nodes per coarse parameter cell.
    pub stride: usize,
    /// Zero margin (fine nodes) at each end.
    pub margin: usize,
    /// Box bound on q and its slope.
    pub theta_max: f64,
    /// Project iterates onto the admissible set.
    pub project: bool,
}

impl ReconstructionOptions {
    pub fn new(modes: usize, reg: f64, max_iter: usize, theta_max: f64, margin: usize) -> Self {
        Self {
            modes,
            reg,
            max_iter,
            alpha: DEFAULT_ALPHA,
            stride: 4,
            margin,
            theta_max,
            project: true,
        }
    }
}

/// Reason the Gauss–Newton loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    Misfit,
    Step,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub q_est: Potential,
    pub iterations: usize,
    /// Objective (misfit + reg·‖q‖²) at the start and after each accepted step.
    pub history: Vec<f64>,
    /// Data misfit at the same points.
    pub misfit_history: Vec<f64>,
    pub reg: f64,
    pub converged: bool,
    pub stop: StopReason,
}

/// Coarse-to-fine linear interpolation on nodes 0, s, 2s, …, n−1.
fn interpolation(n: usize, stride: usize) -> DMatrix<f64> {
    let mut coarse: Vec<usize> = (0..n).step_by(stride).collect();
    if *coarse.last().unwrap() != n - 1 {
        coarse.push(n - 1);
    }
    let mut p = DMatrix::zeros(n, coarse.len());
    for (j, w) in coarse.windows(2).enumerate() {
        let (c0, c1) = (w[0], w[1]);
        for i in c0..=c1 {
            let s = (i - c0) as f64 / (c1 - c0) as f64;
            p[(i, j)] = 1.0 - s;
            if s > 0.0 {
                p[(i, j + 1)] = s;
            }
        }
    }
    p
}

struct Model<'a> {
    base: DiscreteOperator,
    target: &'a SpectralData,
    p: DMatrix<f64>,
    gram: DMatrix<f64>,
    opts: ReconstructionOptions,
    weights: Vec<f64>,
    fixed: Vec<bool>,
    spacing: Vec<f64>,
}

struct Eval {
    data: SpectralData,
    residual: DVector<f64>,
    misfit: f64,
    objective: f64,
}

impl<'a> Model<'a> {
    fn potential(&self, theta: &DVector<f64>) -> Potential {
        Potential::from_values((&self.p * theta).as_slice().to_vec())
    }

    fn eval(&self, theta: &DVector<f64>) -> Result<Eval> {
        let q = self.potential(theta);
        let op = add_potential(&self.base, &q)?;
        let n = self.base.grid().n();
        let data = eigendecompose(&op, n)?;
        let m = self.opts.modes;
        let a = self.opts.alpha;
        let mut r = DVector::zeros(3 * m);
        for k in 0..m {
            let w = self.weights[k];
            r[k] = (a * w).sqrt() * (data.lambdas()[k] - self.target.lambdas()[k]);
            let dt = data.traces()[k] - self.target.traces()[k];
            let s = ((1.0 - a) * w).sqrt();
            r[m + 2 * k] = s * dt.left;
            r[m + 2 * k + 1] = s * dt.right;
        }
        let misfit = r.norm_squared();
        let objective = misfit + self.opts.reg * theta.dot(&(&self.gram * theta));
        Ok(Eval {
            data,
            residual: r,
            misfit,
            objective,
        })
    }

    fn jacobian(&self, data: &SpectralData) -> Result<DMatrix<f64>> {
        let m = self.opts.modes;
        let n = data.grid().n();
        let a = self.opts.alpha;
        let mut jf = DMatrix::zeros(3 * m, n);
        for k in 0..m {
            let w = self.weights[k];
            let de = eig_derivative(data, k)?;
            let dt = trace_derivative(data, k, data.len())?;
            let s = ((1.0 - a) * w).sqrt();
            for i in 0..n {
                jf[(k, i)] = (a * w).sqrt() * de[i];
                jf[(m + 2 * k, i)] = s * dt[i].left;
                jf[(m + 2 * k + 1, i)] = s * dt[i].right;
            }
        }
        Ok(jf * &self.p)
    }

    fn project(&self, theta: &mut DVector<f64>) {
        if !self.opts.project {
            return;
        }
        let tm = self.opts.theta_max;
        for (t, fixed) in theta.iter_mut().zip(&self.fixed) {
            *t = if *fixed { 0.0 } else { t.clamp(0.0, tm) };
        }
        // Reduce-only sweeps bounding the slope between coarse nodes.
        let k = theta.len();
        for j in 0..k - 1 {
            let cap = theta[j] + tm * self.spacing[j];
            theta[j + 1] = theta[j + 1].min(cap);
        }
        for j in (0..k - 1).rev() {
            let cap = theta[j + 1] + tm * self.spacing[j];
            theta[j] = theta[j].min(cap);
        }
    }
}

/// Damped Gauss–Newton on the spectral misfit with Tikhonov term reg·‖q‖²,
/// parameterized on a coarse sub-grid.
pub fn reconstruct(target: &SpectralData, q0: &Potential, opts: ReconstructionOptions) -> Result<ReconstructionResult> {
    let grid = target.grid().clone();
    let n = grid.n();
    if opts.modes == 0 || opts.modes > target.len() {
        return Err(Error::InvalidInput(format!("mode count {} exceeds target data", opts.modes)));
    }
    if q0.values().len() != n {
        return Err(Error::GridMismatch("initial potential length".into()));
    }
    if opts.stride == 0 || !(0.0..=1.0).contains(&opts.alpha) {
        return Err(Error::InvalidInput("stride must be positive and alpha in [0, 1]".into()));
    }
    let base = assemble_fractional_laplacian(&grid, target.order());
    let p = interpolation(n, opts.stride);
    let gram = p.tr_mul(&p) * grid.h();
    let coarse_idx: Vec<usize> = (0..p.ncols())
        .map(|j| (0..n).find(|&i| p[(i, j)] == 1.0).unwrap())
        .collect();
    let spacing = coarse_idx
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 * grid.h())
        .collect();
    let fixed = (0..p.ncols())
        .map(|j| {
            (0..n)
                .filter(|&i| i < opts.margin || i + opts.margin >= n)
                .any(|i| p[(i, j)] != 0.0)
        })
        .collect();
    let weights = target.lambdas()[..opts.modes].iter().map(|l| 1.0 / (l * l)).collect();
    let model = Model {
        base,
        target,
        p,
        gram,
        opts,
        weights,
        fixed,
        spacing,
    };

    let mut theta = DVector::from_iterator(coarse_idx.len(), coarse_idx.iter().map(|&i| q0.values()[i]));
    model.project(&mut theta);
    let mut cur = model.eval(&theta)?;
    let mut history = vec![cur.objective];
    let mut misfit_history = vec![cur.misfit];
    let movable: Vec<usize> = (0..theta.len())
        .filter(|&j| !(opts.project && model.fixed[j]))
        .collect();

    let mut stop = StopReason::MaxIter;
    let mut iterations = 0;
    if cur.misfit < 1e-10 {
        stop = StopReason::Misfit;
    }
    while stop == StopReason::MaxIter && iterations < opts.max_iter {
        let jac = model.jacobian(&cur.data)?;
        // Parameters resting on a bound with the gradient pointing outward stay put.
        let full_grad = jac.tr_mul(&cur.residual) + &model.gram * &theta * opts.reg;
        let free: Vec<usize> = movable
            .iter()
            .copied()
            .filter(|&j| {
                !opts.project
                    || !((theta[j] <= 0.0 && full_grad[j] > 0.0)
                        || (theta[j] >= opts.theta_max && full_grad[j] < 0.0))
            })
            .collect();
        if free.is_empty() {
            stop = StopReason::Step;
            break;
        }
        let jf = jac.select_columns(&free);
        let gf = model.gram.select_rows(&free).select_columns(&free);
        let lhs = jf.tr_mul(&jf) + &gf * opts.reg;
        let grad = full_grad.select_rows(&free);
        let delta_f = lhs
            .clone()
            .cholesky()
            .map(|c| c.solve(&(-&grad)))
            .or_else(|| lhs.lu().solve(&(-&grad)))
            .ok_or(Error::LineSearchFailure { iteration: iterations })?;
        let mut delta = DVector::zeros(theta.len());
        for (k, &j) in free.iter().enumerate() {
            delta[j] = delta_f[k];
        }

        let mut accepted = None;
        for k in 0..=10 {
            let mut trial = &theta + &delta * 0.5f64.powi(k);
            model.project(&mut trial);
            let e = model.eval(&trial)?;
            if e.objective < cur.objective {
                accepted = Some((trial, e));
                break;
            }
        }
        iterations += 1;
        let Some((next, e)) = accepted else {
            // Stalled at the optimum to working precision.
            let predicted = -grad.dot(&delta_f);
            if delta.norm() <= 1e-8 * (1.0 + theta.norm()) || predicted <= 1e-8 * cur.objective {
                stop = StopReason::Step;
                break;
            }
            return Err(Error::LineSearchFailure { iteration: iterations });
        };
        let step = (&next - &theta).norm();
        theta = next;
        cur = e;
        history.push(cur.objective);
        misfit_history.push(cur.misfit);
        if cur.misfit < 1e-10 {
            stop = StopReason::Misfit;
        } else if step < 1e-8 {
            stop = StopReason::Step;
        }
    }

    let mut q_est = model.potential(&theta);
    if opts.project {
        q_est = q_est.certify(&grid, opts.theta_max * (1.0 + 1e-12), opts.margin)?;
    }
    Ok(ReconstructionResult {
        q_est,
        iterations,
        history,
        misfit_history,
        reg: opts.reg,
        converged: stop != StopReason::MaxIter,
        stop,
    })
}

/// Transport-identity residual and its boundary flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransportReport {
    /// max |∂_t w − ∂_s w + ⟨q₁w₁ − q₂w₂, V⟩ − B| over the sample grid,
    /// divided by the largest term.
    pub residual: f64,
    /// max |B|, the boundary flux Γ(a)Γ(a+1)[⟨w₁−w₂, β₀⟩ − ⟨β₁−β₂, V⟩].
    pub flux: f64,
    /// max |⟨w₁ − w₂, V⟩|.
    pub pairing: f64,
    /// Largest of the four terms.
    pub scale: f64,
}

/// Number of sample points per time axis.
const TRANSPORT_SAMPLES: usize = 32;

/// Evaluates the transport identity for w(t,s) = ⟨w₁(t) − w₂(t), V(s)⟩ where
/// w_i solve the heat problem with potentials q_i and data f, and V solves it
/// with q = 0 (spectral data `d0`) and data `big_f`.
pub fn transport_residual(
    d1: &SpectralData,
    d2: &SpectralData,
    d0: &SpectralData,
    f: &BoundaryFunction,
    big_f: &BoundaryFunction,
) -> Result<TransportReport> {
    check_compatible(d1, d2)?;
    check_compatible(d1, d0)?;
    if !d0.potential().is_zero() {
        return Err(Error::InvalidInput("auxiliary data must have zero potential".into()));
    }
    let kt = f.steps();
    let ks = big_f.steps();
    if kt < 4 || ks < 4 {
        return Err(Error::InvalidInput("need at least 4 time steps".into()));
    }
    let s1 = solve_parabolic(d1, f);
    let s2 = solve_parabolic(d2, f);
    let s0 = solve_parabolic(d0, big_f);
    let h = d1.grid().h();
    let gib = gamma_factors(d1.order()).g_ibp;

    let samples = |k: usize| -> Vec<usize> {
        let stride = (k / TRANSPORT_SAMPLES).max(2);
        (stride..k).step_by(stride).collect()
    };
    let tk = samples(kt);
    let sk = samples(ks);

    let field = |sol: &ParabolicSolution<'_>, k: usize| sol.data().synthesize(&sol.coeffs_at_step(k));
    let forcing = |sol: &ParabolicSolution<'_>, k: usize| {
        let g: Vec<f64> = sol.forcing_table().row(k).iter().copied().collect();
        sol.data().synthesize(&g)
    };
    let dot = |u: &[f64], v: &[f64]| h * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let diff = |u: Vec<f64>, v: Vec<f64>| -> Vec<f64> { u.iter().zip(&v).map(|(a, b)| a - b).collect() };

    let q1 = d1.potential().values();
    let q2 = d2.potential().values();
    let vdiff = |k: usize| diff(field(&s1, k), field(&s2, k));

    struct TRow {
        v: Vec<f64>,
        vp: Vec<f64>,
        vm: Vec<f64>,
        qv: Vec<f64>,
        beta: Vec<f64>,
    }
    let trows: Vec<TRow> = tk
        .iter()
        .map(|&k| {
            let w1 = field(&s1, k);
            let w2 = field(&s2, k);
            let qv = w1
                .iter()
                .zip(&w2)
                .zip(q1.iter().zip(q2))
                .map(|((a, b), (qa, qb))| qa * a - qb * b)
                .collect();
            TRow {
                v: diff(w1, w2),
                vp: vdiff(k + 1),
                vm: vdiff(k - 1),
                qv,
                beta: diff(forcing(&s1, k), forcing(&s2, k)),
            }
        })
        .collect();
    struct SCol {
        v: Vec<f64>,
        vp: Vec<f64>,
        vm: Vec<f64>,
        beta: Vec<f64>,
    }
    let scols: Vec<SCol> = sk
        .iter()
        .map(|&k| SCol {
            v: field(&s0, k),
            vp: field(&s0, k + 1),
            vm: field(&s0, k - 1),
            beta: forcing(&s0, k),
        })
        .collect();

    let (dt, ds) = (f.dt(), big_f.dt());
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    let mut flux = 0.0f64;
    let mut pairing = 0.0f64;
    for r in &trows {
        for c in &scols {
            let wt = (dot(&r.vp, &c.v) - dot(&r.vm, &c.v)) / (2.0 * dt);
            let ws = (dot(&r.v, &c.vp) - dot(&r.v, &c.vm)) / (2.0 * ds);
            let qt = dot(&r.qv, &c.v);
            let b = gib * (dot(&r.v, &c.beta) - dot(&r.beta, &c.v));
            worst = worst.max((wt - ws + qt - b).abs());
            scale = scale.max(wt.abs()).max(ws.abs()).max(qt.abs()).max(b.abs());
            flux = flux.max(b.abs());
            pairing = pairing.max(dot(&r.v, &c.v).abs());
        }
    }
    Ok(TransportReport {
        residual: if scale == 0.0 { 0.0 } else { worst / scale },
        flux,
        pairing,
        scale,
    })
}

/// Setup of a two-potential comparison.
#[derive(Debug, Clone)]
pub struct UniquenessConfig {
    pub grid: Grid1D,
    pub order: FractionalOrder,
    pub modes: usize,
    pub s_values: Vec<f64>,
    pub f: BoundaryFunction,
    pub big_f: BoundaryFunction,
    pub dn: DnOptions,
    /// Misfit below which the potentials are reported indistinguishable.
    pub misfit_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub misfit: SpectralMisfit,
    pub eig_gap: f64,
    pub trace_gap: f64,
    /// Per s: |DN₁ − DN₂| of the Laplace-domain observable.
    pub dn_separation: Vec<f64>,
    pub transport: TransportReport,
    pub indistinguishable: bool,
    pub verdict: String,
}

/// Misfit, Laplace-domain DN separation and transport channels for two
/// potentials on the same grid.
pub fn uniqueness_experiment(q1: &Potential, q2: &Potential, cfg: &UniquenessConfig) -> Result<UniquenessReport> {
    if !q1.is_admissible() {
        return Err(Error::NotAdmissible("first potential is not certified".into()));
    }
    let base = assemble_fractional_laplacian(&cfg.grid, cfg.order);
    let d0 = eigendecompose(&base, cfg.modes)?;
    let d1 = eigendecompose(&add_potential(&base, q1)?, cfg.modes)?;
    let d2 = eigendecompose(&add_potential(&base, q2)?, cfg.modes)?;
    uniqueness_from_data(&d1, &d2, &d0, cfg)
}

/// As [`uniqueness_experiment`] with precomputed spectral data.
pub fn uniqueness_from_data(d1: &SpectralData, d2: &SpectralData, d0: &SpectralData, cfg: &UniquenessConfig) -> Result<UniquenessReport> {
    let misfit = spectral_misfit(d1, d2, cfg.modes, None)?;
    let eig_gap = d1
        .lambdas()
        .iter()
        .zip(d2.lambdas())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let trace_gap = d1
        .traces()
        .iter()
        .zip(d2.traces())
        .map(|(a, b)| (a.left - b.left).abs().max((a.right - b.right).abs()))
        .fold(0.0, f64::max);
    let dn_separation = cfg
        .s_values
        .iter()
        .map(|&s| {
            let s = Complex64::new(s, 0.0);
            Ok(laplace_dn(d1, &cfg.f, s, cfg.dn)?.distance(&laplace_dn(d2, &cfg.f, s, cfg.dn)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    let transport = transport_residual(d1, d2, d0, &cfg.f, &cfg.big_f)?;
    let indistinguishable = misfit.total() < cfg.misfit_tol;
    let verdict = if indistinguishable {
        "indistinguishable at resolution".to_string()
    } else {
        format!("separated: misfit {:.3e}, max DN gap {:.3e}", misfit.total(), dn_separation.iter().copied().fold(0.0, f64::max))
    };
    Ok(UniquenessReport {
        misfit,
        eig_gap,
        trace_gap,
        dn_separation,
        transport,
        indistinguishable,
        verdict,
    })
}

/// Singular values of the weighted coarse-grid Jacobian with eigenvalue rows
/// only and with trace rows added.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiabilityReport {
    pub eig_only: Vec<f64>,
    pub with_traces: Vec<f64>,
    /// Singular values above [`RANK_CUTOFF`] times the largest.
    pub rank_eig_only: usize,
    pub rank_with_traces: usize,
}

/// Relative singular value cutoff for the numerical rank.
pub const RANK_CUTOFF: f64 = 1e-6;

pub fn identifiability(data: &SpectralData, modes: usize, stride: usize) -> Result<IdentifiabilityReport> {
    if modes == 0 || modes > data.len() || stride == 0 {
        return Err(Error::InvalidInput(format!("mode count {modes} or stride {stride} out of range")));
    }
    let n = data.grid().n();
    let p = interpolation(n, stride);
    let mut rows = DMatrix::zeros(3 * modes, n);
    for k in 0..modes {
        let w = 1.0 / data.lambdas()[k].powi(2);
        let de = eig_derivative(data, k)?;
        let dt = trace_derivative(data, k, data.len())?;
        for i in 0..n {
            rows[(k, i)] = (DEFAULT_ALPHA * w).sqrt() * de[i];
            rows[(modes + 2 * k, i)] = ((1.0 - DEFAULT_ALPHA) * w).sqrt() * dt[i].left;
            rows[(modes + 2 * k + 1, i)] = ((1.0 - DEFAULT_ALPHA) * w).sqrt() * dt[i].right;
        }
    }
    let full = rows * p;
    let sv = |m: DMatrix<f64>| -> (Vec<f64>, usize) {
        let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let rank = s.iter().filter(|&&v| v > RANK_CUTOFF * s[0]).count();
        (s, rank)
    };
    let (eig_only, rank_eig_only) = sv(full.rows(0, modes).into_owned());
    let (with_traces, rank_with_traces) = sv(full);
    Ok(IdentifiabilityReport {
        eig_only,
        with_traces,
        rank_eig_only,
        rank_with_traces,
    })
}

/// Largest bump amplitude A with A·bump admissible for the given constants
/// (size and slope bounds).
pub fn max_bump_amplitude(grid: &Grid1D, center: f64, width: f64, consts: &AdmissibilityConstants) -> f64 {
    let unit = Potential::bump(grid, center, width, 1.0);
    let size = unit.values().iter().copied().fold(0.0, f64::max);
    let slope = max_slope(unit.values(), grid.h());
    consts.theta_max / size.max(slope)
}
