//! Deterministic random streams.
//!
//! Every random quantity in the crate comes from one generator so that a
//! perturbation sampled on the client can be regenerated bit-for-bit from its
//! seed, on any platform.
//!
//! The generator is SplitMix64 used in counter mode: draw `k` of stream `s` is
//! `mix64(s + (k + 1) * 0x9E3779B97F4A7C15)` with wrapping arithmetic, which is
//! exactly the classic SplitMix64 output sequence seeded with `s`.
//!
//! Standard normals come in Box–Muller pairs. Draws `2j` and `2j + 1` give
//!
//! ```text
//! u1 = ((b0 >> 11) + 1) * 2^-53        in (0, 1]
//! u2 = (b1 >> 11) * 2^-53              in [0, 1)
//! r  = sqrt(-2 ln u1)
//! z_{2j} = r cos(2 pi u2),  z_{2j+1} = r sin(2 pi u2)
//! ```
//!
//! The transcendental functions are `libm`'s portable implementations, not
//! the platform's, so the normal stream is identical everywhere.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Tag mixed into every derived seed; changing it changes every stream.
pub const ALGORITHM_ID: u64 = 0x484F_534C_534D_3634; // "HOSLSM64"

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a master seed and a path of indices into an independent stream seed.
///
/// Used for per-perturbation seeds `derive_seed(master, &[domain, t, q])`,
/// initialization streams and minibatch sampling.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = mix64(master ^ ALGORITHM_ID);
    for (i, &w) in path.iter().enumerate() {
        h = mix64(h ^ mix64(w.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN_GAMMA))));
    }
    h
}

/// Counter-based uniform and normal stream.
#[derive(Debug, Clone)]
pub struct PrngStream {
    seed: u64,
    counter: u64,
    spare: Option<f64>,
}

impl PrngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counter: 0,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit draws consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let k = self.counter;
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(k.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// Uniform index in `0..n` by multiply-shift reduction.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal sample.
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG_53;
        let u2 = (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53;
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let angle = core::f64::consts::TAU * u2;
        self.spare = Some(r * libm::sin(angle));
        r * libm::cos(angle)
    }

    /// Fill `out` with consecutive standard normals.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_normal();
        }
    }
}
