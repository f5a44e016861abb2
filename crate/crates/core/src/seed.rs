use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based seed derivation: every component draws from a stream keyed by
/// `(base, component, a, b)`, so any piece can be re-run in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    base: u64,
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(base: u64) -> Self {
        Self { base }
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn derive(&self, component: &str, a: u64, b: u64) -> u64 {
        let tag = component.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, c| (h ^ c as u64).wrapping_mul(0x100_0000_01B3));
        mix(mix(mix(self.base ^ tag).wrapping_add(a)).wrapping_add(b))
    }

    pub fn rng(&self, component: &str, a: u64, b: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(component, a, b))
    }
}
