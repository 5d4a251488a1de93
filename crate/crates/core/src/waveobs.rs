//! Adjoint heat evolution, the finite-mode fractional wave equation, its
//! energy, multiplier identities, observability ratios and the reachability
//! Gramian.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{solve_parabolic, BoundaryFunction, Pair};
use crate::opcore::{gamma_factors, DIM};
use crate::spectral::SpectralData;

fn trace_of(data: &SpectralData, coeffs: &[f64]) -> Pair {
    coeffs
        .iter()
        .zip(data.traces())
        .fold(Pair::default(), |acc, (c, t)| acc + *t * *c)
}

/// Σ_b (x·ν)_b v_b².
fn weighted_square(data: &SpectralData, v: Pair) -> f64 {
    let w = data.grid().x_dot_nu();
    w.left * v.left * v.left + w.right * v.right * v.right
}

fn require_admissible(data: &SpectralData) -> Result<()> {
    if data.potential().is_admissible() {
        Ok(())
    } else {
        Err(Error::NotAdmissible("spectral data built from an uncertified potential".into()))
    }
}

/// Composite Simpson rule on equally spaced samples (even interval count).
pub fn simpson(samples: &[f64], dt: f64) -> f64 {
    let k = samples.len() - 1;
    debug_assert!(k.is_multiple_of(2) && k >= 2);
    let mut s = samples[0] + samples[k];
    for (i, v) in samples.iter().enumerate().take(k).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * dt / 3.0
}

/// Backward heat solution with terminal data g, ⟨u(t), φ_n⟩ = e^{−λ_n(T−t)} g_n.
#[derive(Debug, Clone)]
pub struct AdjointHeatSolution<'a> {
    data: &'a SpectralData,
    terminal: Vec<f64>,
    horizon: f64,
}

impl<'a> AdjointHeatSolution<'a> {
    pub fn terminal_coeffs(&self) -> &[f64] {
        &self.terminal
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn coeffs_at(&self, t: f64) -> Vec<f64> {
        self.terminal
            .iter()
            .zip(self.data.lambdas())
            .map(|(g, l)| g * (-l * (self.horizon - t)).exp())
            .collect()
    }

    pub fn norm_at(&self, t: f64) -> f64 {
        self.coeffs_at(t).iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Σ e^{−λ_n(T−t)} g_n τ_n.
    pub fn trace_at(&self, t: f64) -> Pair {
        trace_of(self.data, &self.coeffs_at(t))
    }

    pub fn field_at(&self, t: f64) -> Vec<f64> {
        self.data.synthesize(&self.coeffs_at(t))
    }
}

pub fn adjoint_heat<'a>(data: &'a SpectralData, g: &[f64], horizon: f64) -> Result<AdjointHeatSolution<'a>> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput(format!("horizon {horizon} must be positive")));
    }
    if g.len() != data.grid().n() {
        return Err(Error::GridMismatch("terminal data length".into()));
    }
    Ok(AdjointHeatSolution {
        data,
        terminal: data.project(g),
        horizon,
    })
}

/// Heat observability quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatObservability {
    /// ∫_0^{T−ε} Σ (x·ν)(u/d^a)² dt by quadrature.
    pub lhs: f64,
    /// The same integral in closed form.
    pub lhs_closed: f64,
    /// ‖u(0)‖².
    pub rhs: f64,
    /// ‖u(0)‖.
    pub rhs_unsquared: f64,
    /// rhs/lhs; absent when the observation vanishes.
    pub ratio: Option<f64>,
}

/// Closed form Σ_{n,m} g_n g_m ⟨τ_n, τ_m⟩_{x·ν} (e^{−(λ_n+λ_m)ε} − e^{−(λ_n+λ_m)T})/(λ_n+λ_m).
pub fn heat_observation_closed(data: &SpectralData, terminal: &[f64], horizon: f64, eps: f64) -> f64 {
    let w = data.grid().x_dot_nu();
    let tr = data.traces();
    let l = data.lambdas();
    let mut s = 0.0;
    for (i, gi) in terminal.iter().enumerate() {
        for (j, gj) in terminal.iter().enumerate() {
            let b = w.left * tr[i].left * tr[j].left + w.right * tr[i].right * tr[j].right;
            let k = l[i] + l[j];
            s += gi * gj * b * ((-k * eps).exp() - (-k * horizon).exp()) / k;
        }
    }
    s
}

pub fn heat_observability_check(data: &SpectralData, g: &[f64], horizon: f64, eps: f64) -> Result<HeatObservability> {
    require_admissible(data)?;
    if !(0.0 <= eps && eps < horizon) {
        return Err(Error::InvalidInput(format!("need 0 ≤ eps < T, got eps = {eps}, T = {horizon}")));
    }
    let sol = adjoint_heat(data, g, horizon)?;
    // Geometric grading in σ = T − t towards σ = ε.
    const LEVELS: i32 = 48;
    let rule = GaussLegendre::new(NonZeroUsize::new(16).unwrap());
    let span = horizon - eps;
    let mut breaks = vec![eps];
    breaks.extend((0..=LEVELS).rev().map(|j| eps + span * 2f64.powi(-j)));
    let mut lhs = 0.0;
    for w in breaks.windows(2) {
        lhs += rule.integrate(w[0], w[1], |sigma| weighted_square(data, sol.trace_at(horizon - sigma)));
    }
    let rhs = sol.norm_at(0.0).powi(2);
    Ok(HeatObservability {
        lhs,
        lhs_closed: heat_observation_closed(data, sol.terminal_coeffs(), horizon, eps),
        rhs,
        rhs_unsquared: rhs.sqrt(),
        ratio: (lhs != 0.0).then(|| rhs / lhs),
    })
}

/// Finite-mode wave configuration Σ p_j(t) φ_j.
#[derive(Debug, Clone)]
pub struct WaveState<'a> {
    data: &'a SpectralData,
    pos: Vec<f64>,
    vel: Vec<f64>,
    time: f64,
}

impl<'a> WaveState<'a> {
    pub fn new(data: &'a SpectralData, pos: Vec<f64>, vel: Vec<f64>) -> Result<Self> {
        if pos.len() != vel.len() || pos.is_empty() || pos.len() > data.len() {
            return Err(Error::InvalidInput(format!(
                "wave state needs matching lengths in 1..={}, got {} and {}",
                data.len(),
                pos.len(),
                vel.len()
            )));
        }
        if data.lambdas()[..pos.len()].iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidInput("wave modes need positive eigenvalues".into()));
        }
        Ok(Self {
            data,
            pos,
            vel,
            time: 0.0,
        })
    }

    /// Uniform on the unit sphere of (pos, vel) ∈ R^{2J}.
    pub fn random(data: &'a SpectralData, j: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut v: Vec<f64> = (0..2 * j).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let vel = v.split_off(j);
        Self::new(data, v, vel)
    }

    pub fn modes(&self) -> usize {
        self.pos.len()
    }
    pub fn pos(&self) -> &[f64] {
        &self.pos
    }
    pub fn vel(&self) -> &[f64] {
        &self.vel
    }
    pub fn time(&self) -> f64 {
        self.time
    }
    pub fn data(&self) -> &SpectralData {
        self.data
    }

    /// Boundary trace Σ p_j τ_j.
    pub fn trace(&self) -> Pair {
        trace_of(self.data, &self.pos)
    }
    pub fn field(&self) -> Vec<f64> {
        self.data.synthesize(&self.pos)
    }
    pub fn velocity_field(&self) -> Vec<f64> {
        self.data.synthesize(&self.vel)
    }
}

/// Exact per-mode rotation over a time span `t` (negative runs backwards).
pub fn evolve_wave<'a>(state: &WaveState<'a>, t: f64) -> WaveState<'a> {
    let l = state.data.lambdas();
    let (pos, vel) = state
        .pos
        .iter()
        .zip(&state.vel)
        .zip(l)
        .map(|((p, v), l)| {
            let w = l.sqrt();
            let (s, c) = (w * t).sin_cos();
            (p * c + v * s / w, -p * w * s + v * c)
        })
        .unzip();
    WaveState {
        data: state.data,
        pos,
        vel,
        time: state.time + t,
    }
}

/// E_a = ½Σ(p_j′² + λ_j p_j²).
pub fn wave_energy(state: &WaveState<'_>) -> f64 {
    0.5 * state
        .pos
        .iter()
        .zip(&state.vel)
        .zip(state.data.lambdas())
        .map(|((p, v), l)| v * v + l * p * p)
        .sum::<f64>()
}

fn check_window(eps: f64, horizon: f64, quad: usize) -> Result<()> {
    if !(0.0 <= eps && eps < horizon) {
        return Err(Error::InvalidInput(format!("need 0 ≤ eps < T, got eps = {eps}, T = {horizon}")));
    }
    if quad < 2 || !quad.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("Simpson needs an even interval count, got {quad}")));
    }
    Ok(())
}

fn states_on<'a>(init: &WaveState<'a>, eps: f64, horizon: f64, quad: usize) -> (Vec<WaveState<'a>>, f64) {
    let dt = (horizon - eps) / quad as f64;
    let states = (0..=quad)
        .map(|k| evolve_wave(init, eps + k as f64 * dt - init.time))
        .collect();
    (states, dt)
}

/// x·∇u by centered differences, one-sided at the first and last node.
fn x_grad(x: &[f64], u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|i| {
            let d = if i == 0 {
                (u[1] - u[0]) / h
            } else if i == n - 1 {
                (u[n - 1] - u[n - 2]) / h
            } else {
                (u[i + 1] - u[i - 1]) / (2.0 * h)
            };
            x[i] * d
        })
        .collect()
}

/// Both sides of the multiplier identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PohozaevReport {
    /// (Γ(1+a)²/2)∫_ε^T Σ(x·ν)|p/d^a|² dt.
    pub lhs: f64,
    /// a(T−ε)E + [∫p_t(x·∇p + ((N−a)/2)p)]_ε^T − ∫∫(a q + x·q′/2)p².
    pub rhs: f64,
    pub residual: f64,
    /// Right side with the time factor aT, the potential weight a/2 and the
    /// extra −aT∫q p²|_ε term.
    pub rhs_as_printed: f64,
    pub residual_as_printed: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    let d = a.abs() + b.abs();
    if d == 0.0 {
        0.0
    } else {
        (a - b).abs() / d
    }
}

pub fn pohozaev_residual(init: &WaveState<'_>, eps: f64, horizon: f64, quad: usize) -> Result<PohozaevReport> {
    check_window(eps, horizon, quad)?;
    if init.modes() > 10 {
        return Err(Error::InvalidInput(format!("at most 10 modes, got {}", init.modes())));
    }
    let data = init.data;
    let grid = data.grid();
    let (h, x) = (grid.h(), grid.nodes());
    let a = data.order().value();
    let q = data.potential().values();
    let dq = x_grad(x, q, h);
    let (states, dt) = states_on(init, eps, horizon, quad);

    let boundary: Vec<f64> = states.iter().map(|s| weighted_square(data, s.trace())).collect();
    let lhs = 0.5 * gamma_factors(data.order()).g_poh * simpson(&boundary, dt);

    let bracket = |s: &WaveState<'_>| -> f64 {
        let p = s.field();
        let v = s.velocity_field();
        let xp = x_grad(x, &p, h);
        let c = (DIM - a) / 2.0;
        h * (0..p.len()).map(|i| v[i] * (xp[i] + c * p[i])).sum::<f64>()
    };
    let weighted_mass = |s: &WaveState<'_>, wq: &dyn Fn(usize) -> f64| -> f64 {
        let p = s.field();
        h * (0..p.len()).map(|i| wq(i) * p[i] * p[i]).sum::<f64>()
    };
    let q_term = |wq: &dyn Fn(usize) -> f64| -> f64 {
        let vals: Vec<f64> = states.iter().map(|s| weighted_mass(s, wq)).collect();
        simpson(&vals, dt)
    };

    let energy = wave_energy(&states[0]);
    let jump = bracket(&states[quad]) - bracket(&states[0]);
    let rhs = a * (horizon - eps) * energy + jump - q_term(&|i| a * q[i] + 0.5 * dq[i]);
    let rhs_as_printed = a * horizon * energy + jump
        - q_term(&|i| 0.5 * a * q[i] + 0.5 * dq[i])
        - a * horizon * weighted_mass(&states[0], &|i| q[i]);
    Ok(PohozaevReport {
        lhs,
        rhs,
        residual: rel(lhs, rhs),
        rhs_as_printed,
        residual_as_printed: rel(lhs, rhs_as_printed),
    })
}

/// Residual of −∫∫p_t² + ∫∫|(−Δ)^{a/2}p|² + [∫p_t p]_ε^T + ∫∫q p² = 0.
pub fn equipartition_residual(init: &WaveState<'_>, eps: f64, horizon: f64, quad: usize) -> Result<f64> {
    check_window(eps, horizon, quad)?;
    let data = init.data;
    let grid = data.grid();
    let q = data.potential().values();
    let (states, dt) = states_on(init, eps, horizon, quad);
    let kinetic: Vec<f64> = states.iter().map(|s| s.vel.iter().map(|v| v * v).sum()).collect();
    let qmass: Vec<f64> = states
        .iter()
        .map(|s| {
            let p = s.field();
            grid.h() * p.iter().zip(q).map(|(p, q)| q * p * p).sum::<f64>()
        })
        .collect();
    let form: Vec<f64> = states
        .iter()
        .zip(&qmass)
        .map(|(s, m)| s.pos.iter().zip(data.lambdas()).map(|(p, l)| l * p * p).sum::<f64>() - m)
        .collect();
    let pv = |s: &WaveState<'_>| s.pos.iter().zip(&s.vel).map(|(p, v)| p * v).sum::<f64>();
    let terms = [
        -simpson(&kinetic, dt),
        simpson(&form, dt),
        pv(&states[quad]) - pv(&states[0]),
        simpson(&qmass, dt),
    ];
    let total: f64 = terms.iter().sum();
    let scale: f64 = terms.iter().map(|t| t.abs()).sum();
    Ok(if scale == 0.0 { 0.0 } else { total.abs() / scale })
}

/// Boundary observation Γ(1+a)² ∫_ε^T Σ(x·ν)|p/d^a|² dt.
pub fn wave_observation(init: &WaveState<'_>, eps: f64, horizon: f64) -> Result<f64> {
    let data = init.data;
    let omega = data.lambdas()[init.modes() - 1].sqrt();
    let periods = (horizon - eps) * omega / (2.0 * std::f64::consts::PI);
    let quad = ((periods * 64.0).ceil() as usize).max(4096).next_multiple_of(2);
    check_window(eps, horizon, quad)?;
    let (states, dt) = states_on(init, eps, horizon, quad);
    let b: Vec<f64> = states.iter().map(|s| weighted_square(data, s.trace())).collect();
    Ok(gamma_factors(data.order()).g_poh * simpson(&b, dt))
}

/// Result of the observability calibration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveObservabilityReport {
    pub modes: usize,
    pub horizon: f64,
    pub eps: f64,
    pub seed: u64,
    /// Smallest C with r ≤ 1 over all trials.
    pub calibrated_c: f64,
    /// T_0(J) = C λ_J^{1−a}.
    pub t0: f64,
    pub worst_ratio: f64,
    pub ratios: Vec<f64>,
    /// Per trial: E_a and the boundary observation.
    pub energies: Vec<f64>,
    pub observations: Vec<f64>,
}

impl WaveObservabilityReport {
    /// Ratios E·2a(T−T_0)/obs for a given T_0.
    pub fn ratios_for(&self, a: f64, horizon: f64, t0: f64) -> Vec<f64> {
        self.energies
            .iter()
            .zip(&self.observations)
            .map(|(e, o)| e * 2.0 * a * (horizon - t0) / o)
            .collect()
    }
}

/// Settings of [`wave_observability`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveObservabilityOptions {
    pub modes: usize,
    pub horizon: f64,
    pub eps: f64,
    pub trials: usize,
    pub seed: u64,
    pub c_cap: f64,
}

pub fn wave_observability(data: &SpectralData, opts: WaveObservabilityOptions) -> Result<WaveObservabilityReport> {
    require_admissible(data)?;
    let j = opts.modes;
    if j == 0 || j > data.len() {
        return Err(Error::InvalidInput(format!("mode count {j} not in 1..={}", data.len())));
    }
    let a = data.order().value();
    let big_t = opts.horizon;
    let lj = data.lambdas()[j - 1].powf(1.0 - a);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut energies = Vec::with_capacity(opts.trials);
    let mut observations = Vec::with_capacity(opts.trials);
    let mut required = 0.0f64;
    for _ in 0..opts.trials {
        let s0 = WaveState::random(data, j, &mut rng)?;
        let e = [0.0, 0.5 * big_t, big_t]
            .iter()
            .map(|&t| wave_energy(&evolve_wave(&s0, t)))
            .fold(0.0, f64::max);
        let obs = wave_observation(&s0, opts.eps, big_t)?;
        if !(obs > 0.0) {
            return Err(Error::ObservabilityFailure {
                required: f64::INFINITY,
                cap: opts.c_cap,
            });
        }
        required = required.max((big_t - obs / (2.0 * a * e)) / lj);
        energies.push(e);
        observations.push(obs);
    }
    let c = required.max(0.0) * (1.0 + 1e-12);
    if c > opts.c_cap {
        return Err(Error::ObservabilityFailure {
            required: c,
            cap: opts.c_cap,
        });
    }
    let t0 = c * lj;
    let mut report = WaveObservabilityReport {
        modes: j,
        horizon: big_t,
        eps: opts.eps,
        seed: opts.seed,
        calibrated_c: c,
        t0,
        worst_ratio: 0.0,
        ratios: Vec::new(),
        energies,
        observations,
    };
    report.ratios = report.ratios_for(a, big_t, t0);
    report.worst_ratio = report.ratios.iter().copied().fold(0.0, f64::max);
    Ok(report)
}

/// Reachability Gramian of a family of boundary inputs.
#[derive(Debug, Clone)]
pub struct GramianReport {
    /// Gram matrix of the reachable mode-coefficient vectors.
    pub gram: DMatrix<f64>,
    /// Smallest singular value of the reachability map onto span(φ_1..φ_m),
    /// m = 1..=min(basis size, M).
    pub sigma_profile: Vec<f64>,
    /// Smallest over largest eigenvalue of the Gram matrix.
    pub gram_condition: f64,
}

pub fn density_gramian(data: &SpectralData, horizon: f64, t_tilde: f64, basis: &[BoundaryFunction]) -> Result<GramianReport> {
    if basis.is_empty() {
        return Err(Error::InvalidInput("empty basis".into()));
    }
    if !(0.0 < t_tilde && t_tilde <= horizon) {
        return Err(Error::InvalidInput(format!("need 0 < T̃ ≤ T, got {t_tilde}")));
    }
    if basis.iter().any(|f| f.horizon() != horizon) {
        return Err(Error::InvalidInput("basis horizon differs from T".into()));
    }
    let m = data.len();
    let cols: Vec<Vec<f64>> = basis.iter().map(|f| solve_parabolic(data, f).at(t_tilde)).collect();
    let r = DMatrix::from_fn(m, basis.len(), |i, j| cols[j][i]);
    let gram = r.tr_mul(&r);
    let ev = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    let sigma_profile = (1..=basis.len().min(m))
        .map(|k| {
            let sub = r.rows(0, k).into_owned();
            sub.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(GramianReport {
        gram,
        sigma_profile,
        gram_condition: if hi > 0.0 { lo.max(0.0) / hi } else { 0.0 },
    })
}
