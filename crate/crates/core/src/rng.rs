//! Random number generation.
//!
//! Two streams exist. Persistent noise caches are regenerated from stored
//! 64-bit seeds with a counter-based SplitMix64 generator followed by a
//! Box-Muller transform evaluated with `libm`, so a seed maps to the same
//! vector on every platform. Everything else (batch sampling, fresh noise,
//! interpolation times) draws from a seeded [`TrainRng`].
//!
//! Noise regeneration, for seed `s` and output dimension `d`:
//!
//! 1. `w_c = mix(s + (c + 1) * 0x9E3779B97F4A7C15)` for counters `c = 0, 1, ...`
//!    (wrapping arithmetic, `mix` is the SplitMix64 finalizer).
//! 2. `u_c = (w_c >> 11) * 2^-53`, uniform on `[0, 1)`.
//! 3. Consecutive pairs `(u_{2p}, u_{2p+1})` give
//!    `r = sqrt(-2 ln(1 - u_{2p}))`, `z_{2p} = r cos(2 pi u_{2p+1})`,
//!    `z_{2p+1} = r sin(2 pi u_{2p+1})`. For odd `d` the final sine is dropped.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TrainRng = ChaCha8Rng;

pub fn train_rng(seed: u64) -> TrainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sequential SplitMix64, used to split a master seed into per-slot seeds.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }
}

#[inline]
fn counter_uniform(seed: u64, counter: u64) -> f64 {
    let w = mix64(seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)));
    (w >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Fills `out` with the standard-normal vector determined by `seed`.
pub fn normal_from_seed(seed: u64, out: &mut [f64]) {
    let mut counter = 0u64;
    let mut i = 0;
    while i < out.len() {
        let u1 = 1.0 - counter_uniform(seed, counter);
        let u2 = counter_uniform(seed, counter + 1);
        counter += 2;
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        out[i] = r * libm::cos(theta);
        if i + 1 < out.len() {
            out[i + 1] = r * libm::sin(theta);
        }
        i += 2;
    }
}
