use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// What a random stream is used for; keeps streams of different stages
/// independent even when they share a round number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init = 1,
    Select = 2,
    Measure = 3,
    Estimate = 4,
    Sample = 5,
    Train = 6,
    Conditional = 7,
}

/// Derives independent ChaCha20 streams from one root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    root: u64,
}

impl RngStreams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, purpose: Purpose, index: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.root);
        rng.set_stream(((purpose as u64) << 48) ^ index);
        rng
    }
}
