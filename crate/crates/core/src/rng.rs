//! Seed factoring: every source of randomness in a run is a named stream
//! derived from one root seed.
//!
//! Stream names used by the crate:
//!
//! | name            | consumer                                   |
//! |-----------------|--------------------------------------------|
//! | `init`          | endpoint weight initialization             |
//! | `data_order`    | per-epoch shuffling of training examples   |
//! | `coord`         | subspace coordinate sampling (Algorithm 1) |
//! | `pair`          | endpoint pair sampling for the regularizer |
//! | `feature_pair`  | sub-batch pair sampling for the feature term |
//! | `blobs.centers` | synthetic cluster centers                  |
//! | `blobs.train` / `blobs.test` | synthetic point draws         |
//! | `label_noise`   | noisy-label index and label draws          |
//! | `corrupt`       | input corruption noise                     |
//! | `mixture`       | random mixture coefficients                |
//! | `ensemble`      | random subspace ensemble draws             |
//! | `fork.<i>`      | data order of instability fork `i`         |
//!
//! Derivation is a splitmix64 fold over the name bytes, so streams are
//! independent of each other and stable across platforms.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Returns the RNG for `name` under `root_seed`.
pub fn stream(root_seed: u64, name: &str) -> ChaCha8Rng {
    let mut state = root_seed ^ 0x5bf0_3635_ea66_1d13;
    for chunk in name.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        state ^= u64::from_le_bytes(word);
        splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for part in seed.chunks_mut(8) {
        part.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Standard-normal draw via Box-Muller; consumes exactly two uniforms.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
