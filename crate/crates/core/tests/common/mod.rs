#![allow(dead_code)]

use fracspec::opcore::{add_potential, assemble_fractional_laplacian, FractionalOrder, Grid1D, Potential};
use fracspec::spectral::{eigendecompose, SpectralData};

pub fn grid(n: usize) -> Grid1D {
    Grid1D::new(-1.0, 1.0, n).unwrap()
}

pub fn order(a: f64) -> FractionalOrder {
    FractionalOrder::new(a).unwrap()
}

/// Spectral data on (−1, 1) with an optional bump (center, width, amplitude).
pub fn data(a: f64, n: usize, bump: Option<(f64, f64, f64)>, m: usize) -> SpectralData {
    let g = grid(n);
    let op = assemble_fractional_laplacian(&g, order(a));
    let q = match bump {
        Some((c, w, amp)) => Potential::bump(&g, c, w, amp),
        None => Potential::zero(n),
    };
    eigendecompose(&add_potential(&op, &q).unwrap(), m).unwrap()
}

pub fn rel_l2(x: &[f64], y: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = y.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Spectral data for a certified bump at `frac` of the largest admissible
/// amplitude, with a zero margin of n/16 nodes.
pub fn admissible_data(a: f64, n: usize, center: f64, width: f64, frac: f64, m: usize) -> SpectralData {
    let g = grid(n);
    let o = order(a);
    let consts = fracspec::spectral::admissibility(&g, o).unwrap();
    let amp = frac * fracspec::inverse::max_bump_amplitude(&g, center, width, &consts);
    let q = Potential::bump(&g, center, width, amp).certify(&g, consts.theta_max, n / 16).unwrap();
    eigendecompose(&add_potential(&assemble_fractional_laplacian(&g, o), &q).unwrap(), m).unwrap()
}
