//! Counter-based Gaussian streams.
//!
//! Every Monte Carlo sample owns its own ChaCha8 stream keyed by the master
//! seed and selected by the sample index, so the draws of sample `i` do not
//! depend on which worker simulates it or in which order samples run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BrownianDriver {
    master_seed: u64,
}

impl BrownianDriver {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Independent Gaussian stream for one sample.
    pub fn stream_for(&self, sample_index: u64) -> NormalStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(sample_index);
        NormalStream { rng }
    }

    /// A driver with an unrelated key, for estimators that need noise
    /// independent of this driver's (e.g. a second nested layer).
    pub fn derive(&self, tag: u64) -> BrownianDriver {
        BrownianDriver::new(splitmix64(self.master_seed ^ splitmix64(tag)))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    #[inline]
    pub fn gaussian3(&mut self) -> Vec3 {
        Vec3::new(
            self.standard_normal(),
            self.standard_normal(),
            self.standard_normal(),
        )
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}
