//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit generator. A single user seed
//! fans out into named, independent sub-streams so that e.g. network
//! initialisation never shifts the noise used to sample data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named sub-streams derived from one user-visible seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Scm,
    Data,
    Init,
    Noise,
    Order,
    Sgm,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Scm => 1,
            Stream::Data => 2,
            Stream::Init => 3,
            Stream::Noise => 4,
            Stream::Order => 5,
            Stream::Sgm => 6,
        }
    }
}

/// Generator for `stream` under `seed`.
pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

/// Plain generator for a seed, stream 0.
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Child generator split off a parent, for sub-tasks such as one training
/// run inside a loop.
pub fn fork(parent: &mut Rng) -> Rng {
    use rand::RngCore;
    Rng::seed_from_u64(parent.next_u64())
}
