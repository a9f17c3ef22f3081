use std::f64::consts::PI;

use rand::Rng as _;
use rustfft::{num_complex::Complex64, FftPlanner};

use super::{MarketDataError, PriceFrame, Result, ReturnsFrame, ReturnsKind, to_returns};
use crate::rng;

/// One phase-randomized column and the largest imaginary component left by
/// the inverse transform (zero up to rounding when conjugate symmetry holds).
#[derive(Debug, Clone)]
pub struct AaftColumn {
    pub values: Vec<f64>,
    pub imag_residue: f64,
}

/// Replace every Fourier phase of `x` except DC and Nyquist with a uniform
/// random phase, mirrored so the spectrum stays conjugate-symmetric.
pub fn aaft_column(x: &[f64], rng: &mut rng::Rng) -> Result<AaftColumn> {
    let n = x.len();
    if n < 4 {
        return Err(MarketDataError::Validation(format!("AAFT needs at least 4 samples, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MarketDataError::Validation("AAFT input must be finite".into()));
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut spec: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut spec);

    for k in 1..n.div_ceil(2) {
        let phase = rng.random_range(0.0..2.0 * PI);
        let z = Complex64::from_polar(spec[k].norm(), phase);
        spec[k] = z;
        spec[n - k] = z.conj();
    }
    planner.plan_fft_inverse(n).process(&mut spec);

    let scale = 1.0 / n as f64;
    let imag_residue = spec.iter().map(|z| (z.im * scale).abs()).fold(0.0, f64::max);
    Ok(AaftColumn { values: spec.iter().map(|z| z.re * scale).collect(), imag_residue })
}

/// Column-wise surrogate. Log returns are randomized directly; simple and
/// gross returns are randomized in log space and converted back so that
/// the result is always a valid frame of the input kind.
pub fn aaft_surrogate(frame: &ReturnsFrame, seed: u64) -> Result<ReturnsFrame> {
    let log = frame.convert(ReturnsKind::Log)?;
    let (n, m) = (log.len(), log.n_assets());
    let mut values = vec![0.0; n * m];
    for i in 0..m {
        let mut rng = rng::substream(seed, i as u64);
        let col = aaft_column(&log.column(i), &mut rng)?;
        for (t, v) in col.values.into_iter().enumerate() {
            values[t * m + i] = v;
        }
    }
    ReturnsFrame::new(ReturnsKind::Log, log.timestamps().to_vec(), log.assets().to_vec(), values)?
        .convert(frame.kind())
}

/// Surrogate price history: log returns of `prices` are randomized and
/// compounded onto a base price of 100 per asset.
pub fn aaft_prices(prices: &PriceFrame, seed: u64) -> Result<PriceFrame> {
    let surrogate = aaft_surrogate(&to_returns(prices, ReturnsKind::Log)?, seed)?;
    surrogate.to_prices(&vec![100.0; prices.n_assets()])
}

#[cfg(test)]
mod tests {
    use super::*;

    /// O(n^2) reference DFT magnitudes.
    fn dft_abs(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * t % n) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re.hypot(im)
            })
            .collect()
    }

    #[test]
    fn constant_column_unchanged() {
        let x = vec![0.01; 64];
        let out = aaft_column(&x, &mut rng::seeded(3)).unwrap();
        for v in out.values {
            assert!((v - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn spectrum_matches_reference_dft() {
        for n in [7usize, 8, 33, 64] {
            let x: Vec<f64> = (0..n).map(|t| ((t * t) as f64 * 0.37).sin() * 0.02 + 0.001).collect();
            let out = aaft_column(&x, &mut rng::seeded(n as u64)).unwrap();
            assert!(out.imag_residue < 1e-10);
            let a = dft_abs(&x);
            let b = dft_abs(&out.values);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-9, "n={n}: {u} vs {v}");
            }
            assert_ne!(x, out.values);
        }
    }

    #[test]
    fn short_column_rejected() {
        assert!(aaft_column(&[1.0, 2.0, 3.0], &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn surrogate_keeps_kind_and_shape() {
        let rows: Vec<Vec<f64>> = (0..50).map(|t| vec![(t as f64).sin() * 0.01, 0.002]).collect();
        let f = ReturnsFrame::from_rows(ReturnsKind::Simple, vec!["A".into(), "B".into()], &rows).unwrap();
        let s = aaft_surrogate(&f, 9).unwrap();
        assert_eq!(s.kind(), ReturnsKind::Simple);
        assert_eq!(s.len(), 50);
        assert_eq!(aaft_surrogate(&f, 9).unwrap(), s);
    }
}
