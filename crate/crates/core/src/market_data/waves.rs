use std::f64::consts::PI;

use rand::Rng as _;

use super::{frame::synthetic_dates, Generator, MarketDataError, PriceFrame, Result, UniverseSpec};
use crate::rng;

const DEFAULT_OFFSET: f64 = 100.0;

/// `2 frac(x / 2pi) - 1`, a rising ramp in `[-1, 1)` with period `2pi`.
fn sawtooth(x: f64) -> f64 {
    let u = x / (2.0 * PI);
    2.0 * (u - u.floor()) - 1.0
}

fn pick(given: &Option<Vec<f64>>, m: usize, name: &str, draw: impl FnMut() -> f64) -> Result<Vec<f64>> {
    match given {
        Some(v) if v.len() == m => Ok(v.clone()),
        Some(v) => Err(MarketDataError::Dimension(format!("{} {name} for {m} assets", v.len()))),
        None => Ok(std::iter::repeat_with(draw).take(m).collect()),
    }
}

/// Deterministic sine, sawtooth or chirp price waves around `params.offset`.
pub fn gen_waves(spec: &UniverseSpec) -> Result<PriceFrame> {
    spec.validate()?;
    if !matches!(spec.generator, Generator::Sine | Generator::Sawtooth | Generator::Chirp) {
        return Err(MarketDataError::Validation(format!(
            "{:?} is not a wave generator",
            spec.generator
        )));
    }
    let (m, n) = (spec.m, spec.t);
    let p = &spec.params;
    let offset = p.offset.unwrap_or(DEFAULT_OFFSET);
    // Draw order is fixed so that partially specified params stay reproducible.
    let mut rng = rng::seeded(spec.seed);
    let amplitudes = pick(&p.amplitudes, m, "amplitudes", || rng.random_range(0.02..0.15) * offset)?;
    let frequencies = pick(&p.frequencies, m, "frequencies", || 2.0 * PI / rng.random_range(15.0..60.0))?;
    let phases = pick(&p.phases, m, "phases", || rng.random_range(0.0..2.0 * PI))?;
    let chirp_rates = match spec.generator {
        Generator::Chirp => {
            pick(&p.chirp_rates, m, "chirp_rates", || rng.random_range(0.5..2.0) * 2.0 * PI / 40.0 / n as f64)?
        }
        _ => vec![0.0; m],
    };
    if let Some(a) = amplitudes.iter().find(|a| a.abs() >= offset) {
        return Err(MarketDataError::Validation(format!(
            "amplitude {a} must be below offset {offset} to keep prices positive"
        )));
    }

    let mut values = Vec::with_capacity(n * m);
    for t in 0..n {
        let tf = t as f64;
        for i in 0..m {
            let angle = frequencies[i] * tf + 0.5 * chirp_rates[i] * tf * tf + phases[i];
            let wave = match spec.generator {
                Generator::Sawtooth => sawtooth(angle),
                _ => angle.sin(),
            };
            values.push(offset + amplitudes[i] * wave);
        }
    }
    let prefix = match spec.generator {
        Generator::Sine => "SINE",
        Generator::Sawtooth => "SAW",
        _ => "CHIRP",
    };
    let assets = (0..m).map(|i| format!("{prefix}{i}")).collect();
    PriceFrame::new(synthetic_dates(n), assets, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::WaveParams;

    fn spec(generator: Generator, params: WaveParams) -> UniverseSpec {
        UniverseSpec { generator, m: 1, t: 400, seed: 11, params }
    }

    #[test]
    fn zero_amplitude_is_constant() {
        let f = gen_waves(&spec(
            Generator::Sine,
            WaveParams { amplitudes: Some(vec![0.0]), offset: Some(42.0), ..Default::default() },
        ))
        .unwrap();
        assert!(f.values().iter().all(|&p| p == 42.0));
    }

    #[test]
    fn sine_is_periodic() {
        // period of 25 samples so t and t + 2pi/omega both land on the grid
        let omega = 2.0 * PI / 25.0;
        let f = gen_waves(&spec(
            Generator::Sine,
            WaveParams { frequencies: Some(vec![omega]), ..Default::default() },
        ))
        .unwrap();
        for t in 0..300 {
            assert!((f.get(t, 0) - f.get(t + 25, 0)).abs() < 1e-9);
        }
    }

    #[test]
    fn chirp_zero_crossings_get_closer() {
        let f = gen_waves(&UniverseSpec {
            generator: Generator::Chirp,
            m: 1,
            t: 4000,
            seed: 2,
            params: WaveParams {
                offset: Some(100.0),
                amplitudes: Some(vec![10.0]),
                frequencies: Some(vec![0.02]),
                phases: Some(vec![0.3]),
                chirp_rates: Some(vec![2e-5]),
                ..Default::default()
            },
        })
        .unwrap();
        let x: Vec<f64> = f.column(0).iter().map(|p| p - 100.0).collect();
        // linear interpolation of sign changes
        let crossings: Vec<f64> = x
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].signum() != w[1].signum())
            .map(|(t, w)| t as f64 + w[0] / (w[0] - w[1]))
            .collect();
        assert!(crossings.len() > 10);
        let gaps: Vec<f64> = crossings.windows(2).map(|c| c[1] - c[0]).collect();
        assert!(gaps.windows(2).all(|g| g[1] < g[0]), "{gaps:?}");
    }

    #[test]
    fn sawtooth_shape() {
        assert!((sawtooth(0.0) + 1.0).abs() < 1e-15);
        assert!((sawtooth(PI) - 0.0).abs() < 1e-12);
        assert!(sawtooth(2.0 * PI - 1e-9) > 0.999);
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = UniverseSpec::waves(Generator::Sawtooth, 5, 300, 99);
        let a = gen_waves(&s).unwrap();
        let b = gen_waves(&s).unwrap();
        let bits = |f: &PriceFrame| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&gen_waves(&UniverseSpec { seed: 100, ..s }).unwrap()));
    }

    #[test]
    fn amplitude_above_offset_rejected() {
        let s = spec(
            Generator::Sine,
            WaveParams { amplitudes: Some(vec![150.0]), ..Default::default() },
        );
        assert!(matches!(gen_waves(&s), Err(MarketDataError::Validation(_))));
    }
}
