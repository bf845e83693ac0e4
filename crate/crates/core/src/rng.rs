//! Seeded RNG plumbing. Every stochastic code path in the crate draws from a
//! `SeedRng` so runs are reproducible from a single seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeedRng = ChaCha8Rng;

pub fn seed_rng(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One standard normal draw via Box-Muller. Consumes exactly two uniforms,
/// so the stream position stays deterministic across platforms.
pub fn standard_normal(rng: &mut SeedRng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn fill_normal(rng: &mut SeedRng, out: &mut [f64], scale: f64) {
    for v in out.iter_mut() {
        *v = scale * standard_normal(rng);
    }
}
