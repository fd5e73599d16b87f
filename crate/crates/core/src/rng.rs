//! Named random sub-streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Root of all randomness in a run. Each consumer asks for a stream by name
/// (and optionally an index); the same root, name and index always give the
/// same generator regardless of what other streams were drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        self.indexed(name, 0)
    }

    pub fn indexed(&self, name: &str, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(fnv1a(name.as_bytes()) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        rng
    }

    /// Child tree, for handing a sub-seed to a nested component.
    pub fn child(&self, name: &str) -> SeedTree {
        SeedTree { root: self.root ^ fnv1a(name.as_bytes()).rotate_left(17) }
    }
}
