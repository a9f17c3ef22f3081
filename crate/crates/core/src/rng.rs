//! Seeded random streams. Every stochastic routine takes an explicit seed so
//! repeated runs are bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from `seed` (splitmix-style mixing).
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Dirichlet draw with runtime dimension: normalized Gamma(alpha_i, 1) samples.
pub fn dirichlet(rng: &mut Rng, alpha: &[f64]) -> Vec<f64> {
    use rand_distr::{Distribution, Gamma};
    let mut x: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        x.iter_mut().for_each(|v| *v /= s);
    } else {
        // every gamma draw underflowed; fall back to the largest concentration
        let j = (0..alpha.len()).fold(0, |b, k| if alpha[k] > alpha[b] { k } else { b });
        x.iter_mut().enumerate().for_each(|(k, v)| *v = if k == j { 1.0 } else { 0.0 });
    }
    x
}
