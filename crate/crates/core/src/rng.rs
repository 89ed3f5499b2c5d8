//! Deterministic counter-based random streams.
//!
//! All randomness in the crate flows through [`StreamRng`], a SplitMix64
//! generator. Streams are keyed by `(seed, stream id)` so a Harris scheme is
//! bit-identical no matter in which order (or on how many threads) its sites
//! are sampled. Not cryptographic.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 stream.
#[derive(Clone, Debug)]
pub struct StreamRng {
    state: u64,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        Self { state: mix(seed ^ GOLDEN) }
    }

    /// Stream keyed by `(seed, stream)`; distinct keys give decorrelated streams.
    pub fn keyed(seed: u64, stream: u64) -> Self {
        let s = mix(seed ^ GOLDEN).wrapping_add(mix(stream.wrapping_mul(GOLDEN).wrapping_add(1)));
        Self { state: mix(s) }
    }

    /// A fresh seed for replica `index` of an experiment seeded with `base`.
    pub fn derive_seed(base: u64, index: u64) -> u64 {
        mix(base ^ mix(index.wrapping_mul(GOLDEN).wrapping_add(GOLDEN)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform on `(0, 1]`; safe to feed to `ln`.
    #[inline]
    pub fn next_unit_pos(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Exponential with mean one.
    #[inline]
    pub fn next_exp(&mut self) -> f64 {
        -self.next_unit_pos().ln()
    }

    #[inline]
    pub fn next_bool(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer in `[0, n)`.
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }
}
