//! Deterministic seed derivation and Gaussian sampling.
//!
//! Every stochastic stage of the simulator draws from a ChaCha stream whose
//! seed is derived from a master seed plus a list of integer tags (scheme
//! index, span index, loop index, ...). The derivation is a splitmix64
//! chain, so sub-streams are stable across platforms and runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a master seed with a list of tags into a single derived seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master;
    let mut out = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        out = splitmix64(&mut state);
    }
    out
}

/// Deterministic RNG for the given master seed and tag path.
pub fn derive_rng(master: u64, tags: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, tags))
}

/// Standard normal sample via Box-Muller. Consumes two uniforms per pair,
/// caching nothing so that call sites stay deterministic regardless of how
/// many values they draw.
pub fn gaussian_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    // Uniform in (0, 1]: avoid ln(0).
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}
