//! Misfit, Jacobians, reconstruction, transport identity and
//! distinguishability.

mod common;

use common::{data, grid, order, rel_l2};
use fracspec::forward::{BoundaryFunction, DnOptions, Pair};
use fracspec::inverse::{
    eig_derivative, identifiability, max_bump_amplitude, reconstruct, spectral_misfit, trace_derivative,
    transport_residual, uniqueness_experiment, uniqueness_from_data, ReconstructionOptions, StopReason,
    UniquenessConfig,
};
use fracspec::opcore::{add_potential, assemble_fractional_laplacian, FractionalOrder, Grid1D, Potential};
use fracspec::spectral::{admissibility, eigendecompose, SpectralData};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spectrum(g: &Grid1D, o: FractionalOrder, q: &Potential, m: usize) -> SpectralData {
    eigendecompose(&add_potential(&assemble_fractional_laplacian(g, o), q).unwrap(), m).unwrap()
}

fn certified_bump(g: &Grid1D, o: FractionalOrder, center: f64, width: f64, frac: f64) -> Potential {
    let consts = admissibility(g, o).unwrap();
    let amp = frac * max_bump_amplitude(g, center, width, &consts);
    Potential::bump(g, center, width, amp).certify(g, consts.theta_max, g.n() / 16).unwrap()
}

/// Piecewise-linear interpolant through every `stride`-th sample of a bump,
/// hence exactly representable by the reconstruction parameters.
fn coarse_bump(g: &Grid1D, stride: usize, amp: f64) -> Potential {
    let fine = Potential::bump(g, 0.1, 0.6, amp);
    let n = g.n();
    let mut knots: Vec<usize> = (0..n).step_by(stride).collect();
    if *knots.last().unwrap() != n - 1 {
        knots.push(n - 1);
    }
    let mut v = vec![0.0; n];
    for w in knots.windows(2) {
        for i in w[0]..=w[1] {
            let s = (i - w[0]) as f64 / (w[1] - w[0]) as f64;
            v[i] = (1.0 - s) * fine.values()[w[0]] + s * fine.values()[w[1]];
        }
    }
    Potential::from_values(v)
}

#[test]
fn misfit_examples() {
    let g = grid(128);
    let o = order(0.6);
    let d1 = spectrum(&g, o, &Potential::zero(128), 20);
    let m0 = spectral_misfit(&d1, &d1, 20, None).unwrap();
    assert_eq!(m0.total(), 0.0);
    let mut prev = 0.0;
    for amp in [0.05, 0.15] {
        let d2 = spectrum(&g, o, &Potential::bump(&g, 0.2, 0.6, amp), 20);
        let (a, b) = (spectral_misfit(&d1, &d2, 20, None).unwrap(), spectral_misfit(&d2, &d1, 20, None).unwrap());
        assert_eq!(a.total(), b.total());
        assert!(a.total() > prev);
        prev = a.total();
    }
    let other = spectrum(&grid(64), o, &Potential::zero(64), 20);
    assert!(spectral_misfit(&d1, &other, 20, None).is_err());
    assert!(spectral_misfit(&d1, &d1, 21, None).is_err());
}

#[test]
fn eig_derivative_normalization_and_sign() {
    let d = data(0.7, 96, Some((0.0, 0.5, 0.05)), 24);
    for n in [0, 5, 23] {
        let de = eig_derivative(&d, n).unwrap();
        assert!(de.iter().all(|v| *v >= 0.0));
        assert!((de.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn perturbed(g: &Grid1D, o: FractionalOrder, q: &Potential, i: usize, eps: f64) -> SpectralData {
    let mut v = q.values().to_vec();
    v[i] += eps;
    spectrum(g, o, &Potential::from_values(v), g.n())
}

/// Relative error of the derivative sampled at 5 random nodes, in the
/// Euclidean norm. Pointwise ratios are not meaningful near zeros of φ_n,
/// where the central difference is dominated by the eigensolver roundoff
/// u‖A‖/ε.
#[test]
fn eig_derivative_matches_central_differences() {
    let g = grid(128);
    let o = order(0.7);
    let q = Potential::bump(&g, 0.1, 0.5, 0.05);
    let d = spectrum(&g, o, &q, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let eps = 1e-4;
    let nodes: Vec<usize> = (0..5).map(|_| rng.random_range(8..120)).collect();
    let shifted: Vec<_> = nodes.iter().map(|&i| (perturbed(&g, o, &q, i, eps), perturbed(&g, o, &q, i, -eps))).collect();
    for n in [0, 4, 9, 19] {
        let an = eig_derivative(&d, n).unwrap();
        let (mut err, mut size) = (0.0f64, 0.0f64);
        for (&i, (p, m)) in nodes.iter().zip(&shifted) {
            let fd = (p.lambdas()[n] - m.lambdas()[n]) / (2.0 * eps);
            err += (fd - an[i]).powi(2);
            size += an[i].powi(2);
        }
        let rel = (err / size).sqrt();
        assert!(rel < 1e-5, "mode {n}: {rel:e}");
    }
}

#[test]
fn trace_derivative_matches_central_differences() {
    let g = grid(128);
    let o = order(0.7);
    let q = Potential::bump(&g, 0.1, 0.5, 0.05);
    let d = spectrum(&g, o, &q, 128);
    let eps = 1e-4;
    for i in [20, 47, 64, 90] {
        let (p, m) = (perturbed(&g, o, &q, i, eps), perturbed(&g, o, &q, i, -eps));
        for n in [0, 3, 9] {
            let an = trace_derivative(&d, n, 128).unwrap()[i];
            let fd = (p.traces()[n] - m.traces()[n]) * (0.5 / eps);
            let err = (fd.left - an.left).hypot(fd.right - an.right);
            let size = an.left.hypot(an.right);
            assert!(err < 1e-3 * size, "node {i} mode {n}: {fd:?} vs {an:?}");
        }
    }
}

#[test]
fn trace_derivative_ignores_constant_shift() {
    let d = data(0.7, 96, Some((0.0, 0.5, 0.05)), 96);
    for n in [0, 2, 7] {
        let dt = trace_derivative(&d, n, 96).unwrap();
        let (sl, sr) = dt.iter().fold((0.0, 0.0), |(l, r), p| (l + p.left, r + p.right));
        let scale = dt.iter().map(|p| p.left.abs() + p.right.abs()).sum::<f64>();
        assert!(sl.abs().max(sr.abs()) < 1e-10 * scale);
    }
}

#[test]
fn degenerate_modes_are_refused() {
    let g = grid(32);
    let o = order(0.7);
    let d = spectrum(&g, o, &Potential::zero(32), 8);
    let mut lambdas = d.lambdas().to_vec();
    lambdas[3] = lambdas[2];
    let fake = SpectralData::from_parts(lambdas, d.modes().clone(), d.traces().to_vec(), g, o, Potential::zero(32), d.free_ground()).unwrap();
    assert!(matches!(eig_derivative(&fake, 2), Err(fracspec::Error::DegenerateEigenvalue { index: 2, .. })));
    assert!(trace_derivative(&fake, 3, 8).is_err());
    assert!(eig_derivative(&fake, 0).is_ok());
}

#[test]
fn reconstruction_fixed_point() {
    let g = grid(128);
    let o = order(0.6);
    let consts = admissibility(&g, o).unwrap();
    let q0 = coarse_bump(&g, 4, 0.5 * max_bump_amplitude(&g, 0.1, 0.6, &consts)).certify(&g, consts.theta_max, 8).unwrap();
    let target = spectrum(&g, o, &q0, 128);
    let opts = ReconstructionOptions::new(20, 1e-8, 10, consts.theta_max, 8);
    let r = reconstruct(&target, &q0, opts).unwrap();
    assert!(r.iterations <= 2);
    assert!(*r.misfit_history.last().unwrap() < 1e-12);
    assert!(r.converged);
    assert!(rel_l2(r.q_est.values(), q0.values()) < 1e-12);
}

fn noisy(d: &SpectralData, rel: f64, seed: u64) -> SpectralData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traces = d
        .traces()
        .iter()
        .map(|t| {
            let mut jitter = || 1.0 + rel * (2.0 * rng.random::<f64>() - 1.0);
            Pair::new(t.left * jitter(), t.right * jitter())
        })
        .collect();
    SpectralData::from_parts(
        d.lambdas().to_vec(),
        d.modes().clone(),
        traces,
        d.grid().clone(),
        d.order(),
        d.potential().clone(),
        d.free_ground(),
    )
    .unwrap()
}

#[test]
fn reconstruction_degrades_gracefully_with_noise() {
    let g = grid(128);
    let o = order(0.6);
    let consts = admissibility(&g, o).unwrap();
    let truth = certified_bump(&g, o, 0.1, 0.6, 0.8);
    let clean = spectrum(&g, o, &truth, 128);
    let opts = ReconstructionOptions::new(20, 1e-8, 30, consts.theta_max, 8);
    let r0 = reconstruct(&clean, &Potential::zero(128), opts).unwrap();
    let e0 = rel_l2(r0.q_est.values(), truth.values());
    let r1 = reconstruct(&noisy(&clean, 1e-4, 3), &Potential::zero(128), opts).unwrap();
    let e1 = rel_l2(r1.q_est.values(), truth.values());
    assert!(e0 < 0.05, "clean error {e0}");
    assert!(e1 < 5.0 * e0, "clean {e0:e}, noisy {e1:e}");
    assert!(*r1.misfit_history.last().unwrap() > *r0.misfit_history.last().unwrap());
}

#[test]
fn reconstruction_history_decreases() {
    let g = grid(128);
    let o = order(0.6);
    let consts = admissibility(&g, o).unwrap();
    let truth = certified_bump(&g, o, -0.2, 0.5, 0.6);
    let target = spectrum(&g, o, &truth, 128);
    let r = reconstruct(&target, &Potential::zero(128), ReconstructionOptions::new(16, 1e-8, 30, consts.theta_max, 8)).unwrap();
    assert!(r.history.windows(2).all(|w| w[1] < w[0]), "{:?}", r.history);
    assert!(r.misfit_history.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.misfit_history);
    assert!(r.converged && r.stop != StopReason::MaxIter);
    assert_eq!(r.history.len(), r.misfit_history.len());
    assert!(r.q_est.is_admissible());
}

/// Without projection or regularization, shifting the target potential and
/// the initial guess by a constant shifts the estimate by the same constant.
#[test]
fn reconstruction_shift_equivariance() {
    let g = grid(128);
    let o = order(0.6);
    let truth = certified_bump(&g, o, 0.1, 0.6, 0.8);
    let shift = 0.05;
    let lift = |q: &Potential| Potential::from_values(q.values().iter().map(|v| v + shift).collect());
    let mut opts = ReconstructionOptions::new(20, 0.0, 30, f64::INFINITY, 0);
    opts.project = false;
    let r0 = reconstruct(&spectrum(&g, o, &truth, 128), &Potential::zero(128), opts).unwrap();
    let r1 = reconstruct(&spectrum(&g, o, &lift(&truth), 128), &Potential::constant(128, shift), opts).unwrap();
    let back: Vec<f64> = r1.q_est.values().iter().map(|v| v - shift).collect();
    let diff = back.iter().zip(r0.q_est.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let size = truth.values().iter().copied().fold(0.0, f64::max);
    assert!(diff < 1e-6 * size, "{diff:e}");
}

fn boundary_data(steps: usize) -> (BoundaryFunction, BoundaryFunction) {
    (
        BoundaryFunction::smooth_bump(1.0, steps, 0.1, 0.7, Pair::new(1.0, 0.5)).unwrap(),
        BoundaryFunction::smooth_bump(1.0, steps, 0.2, 0.9, Pair::new(0.5, 1.0)).unwrap(),
    )
}

#[test]
fn transport_trivial_cases() {
    let g = grid(96);
    let o = order(0.7);
    let d0 = spectrum(&g, o, &Potential::zero(96), 24);
    let d1 = spectrum(&g, o, &certified_bump(&g, o, 0.1, 0.5, 0.5), 24);
    let (f, big_f) = boundary_data(256);
    assert_eq!(transport_residual(&d1, &d1, &d0, &f, &big_f).unwrap().residual, 0.0);
    let zero = BoundaryFunction::zero(1.0, 256).unwrap();
    let d2 = spectrum(&g, o, &certified_bump(&g, o, -0.2, 0.4, 0.5), 24);
    let r = transport_residual(&d1, &d2, &d0, &zero, &big_f).unwrap();
    assert_eq!(r.residual, 0.0);
    assert!(transport_residual(&d1, &d2, &d1, &f, &big_f).is_err());
}

#[test]
fn transport_residual_converges() {
    let g = grid(128);
    let o = order(0.7);
    let d0 = spectrum(&g, o, &Potential::zero(128), 32);
    let d1 = spectrum(&g, o, &certified_bump(&g, o, 0.1, 0.5, 0.5), 32);
    let d2 = spectrum(&g, o, &certified_bump(&g, o, -0.2, 0.4, 0.7), 32);
    let res: Vec<f64> = [512, 1024, 2048]
        .iter()
        .map(|&k| {
            let (f, big_f) = boundary_data(k);
            transport_residual(&d1, &d2, &d0, &f, &big_f).unwrap().residual
        })
        .collect();
    assert!(res[2] < 1e-3, "{res:?}");
    for w in res.windows(2) {
        assert!(w[0] / w[1] >= 1.5, "{res:?}");
    }
}

fn uniqueness_config(g: &Grid1D, o: FractionalOrder, modes: usize) -> UniquenessConfig {
    let (f, big_f) = boundary_data(512);
    UniquenessConfig {
        grid: g.clone(),
        order: o,
        modes,
        s_values: vec![0.5, 1.0, 2.0],
        f,
        big_f,
        dn: DnOptions::default(),
        misfit_tol: 1e-20,
    }
}

#[test]
fn uniqueness_identical_potentials() {
    let g = grid(96);
    let o = order(0.7);
    let q = certified_bump(&g, o, 0.2, 0.5, 0.5);
    let r = uniqueness_experiment(&q, &q, &uniqueness_config(&g, o, 24)).unwrap();
    assert_eq!(r.misfit.total(), 0.0);
    assert_eq!((r.eig_gap, r.trace_gap), (0.0, 0.0));
    assert!(r.dn_separation.iter().all(|v| *v == 0.0));
    assert_eq!(r.transport.residual, 0.0);
    assert!(r.indistinguishable);
    let raw = Potential::bump(&g, 0.2, 0.5, 0.01);
    assert!(uniqueness_experiment(&raw, &q, &uniqueness_config(&g, o, 24)).is_err());
}

/// Mirroring an asymmetric potential keeps the spectrum and swaps the traces.
#[test]
fn reflection_is_resolved_by_traces() {
    let g = grid(128);
    let o = order(0.7);
    let q1 = certified_bump(&g, o, 0.3, 0.4, 0.8);
    let q2 = q1.reflected();
    let r = uniqueness_experiment(&q1, &q2, &uniqueness_config(&g, o, 32)).unwrap();
    let lmax = 100.0;
    assert!(r.eig_gap < 1e-10 * lmax, "{:e}", r.eig_gap);
    assert!(r.trace_gap > 1e-4, "{:e}", r.trace_gap);
    assert!(r.misfit.trace_part > 1e6 * r.misfit.eig_part);
    assert!(!r.indistinguishable);
}

#[test]
fn separation_is_monotone_in_amplitude() {
    let g = grid(128);
    let o = order(0.6);
    let cfg = uniqueness_config(&g, o, 32);
    let base = assemble_fractional_laplacian(&g, o);
    let q1 = certified_bump(&g, o, -0.2, 0.4, 0.3);
    let d0 = eigendecompose(&base, 32).unwrap();
    let d1 = eigendecompose(&add_potential(&base, &q1).unwrap(), 32).unwrap();
    let bump = Potential::bump(&g, 0.3, 0.4, 1.0);
    let mut prev: Option<fracspec::inverse::UniquenessReport> = None;
    for eps in [1e-3, 1e-2, 1e-1] {
        let q2 = Potential::from_values(q1.values().iter().zip(bump.values()).map(|(a, b)| a + eps * b).collect());
        let d2 = eigendecompose(&add_potential(&base, &q2).unwrap(), 32).unwrap();
        let r = uniqueness_from_data(&d1, &d2, &d0, &cfg).unwrap();
        assert!(r.misfit.total() > 0.0 && !r.indistinguishable);
        if let Some(p) = &prev {
            assert!(r.misfit.total() > p.misfit.total());
            assert!(r.eig_gap > p.eig_gap && r.trace_gap > p.trace_gap);
            for (a, b) in r.dn_separation.iter().zip(&p.dn_separation) {
                assert!(a > b);
            }
        }
        prev = Some(r);
    }
}

#[test]
fn traces_add_identifiability() {
    let d = data(0.6, 128, None, 128);
    let r = identifiability(&d, 20, 4).unwrap();
    assert!(r.rank_eig_only <= 20);
    assert!(r.rank_with_traces > r.rank_eig_only, "{} vs {}", r.rank_with_traces, r.rank_eig_only);
}

#[test]
fn largest_bump_is_admissible() {
    let g = grid(256);
    let o = order(0.6);
    let consts = admissibility(&g, o).unwrap();
    let amp = max_bump_amplitude(&g, 0.1, 0.6, &consts);
    assert!(Potential::bump(&g, 0.1, 0.6, amp).certify(&g, consts.theta_max * (1.0 + 1e-12), 16).is_ok());
    assert!(Potential::bump(&g, 0.1, 0.6, 1.01 * amp).certify(&g, consts.theta_max, 16).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn trace_derivative_is_linear_in_direction(
        seed in 0u64..1000,
        alpha in -3.0f64..3.0,
    ) {
        let d = data(0.7, 48, None, 48);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..48).map(|_| rng.random::<f64>() - 0.5).collect();
        let v: Vec<f64> = (0..48).map(|_| rng.random::<f64>() - 0.5).collect();
        let dt = trace_derivative(&d, 1, 48).unwrap();
        let apply = |w: &[f64]| dt.iter().zip(w).fold(Pair::default(), |acc, (p, x)| acc + *p * *x);
        let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + b).collect();
        let lhs = apply(&combo);
        let rhs = apply(&u) * alpha + apply(&v);
        prop_assert!((lhs.left - rhs.left).abs() < 1e-12 && (lhs.right - rhs.right).abs() < 1e-12);
    }

    #[test]
    fn misfit_is_symmetric(a1 in 0.0f64..0.1, a2 in 0.0f64..0.1) {
        let g = grid(48);
        let o = order(0.7);
        let d1 = spectrum(&g, o, &Potential::bump(&g, 0.0, 0.5, a1), 12);
        let d2 = spectrum(&g, o, &Potential::bump(&g, 0.2, 0.5, a2), 12);
        let (x, y) = (spectral_misfit(&d1, &d2, 12, None).unwrap(), spectral_misfit(&d2, &d1, 12, None).unwrap());
        prop_assert_eq!(x.total(), y.total());
        prop_assert!(x.total() >= 0.0);
    }
}
