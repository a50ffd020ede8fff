//! Per-path random streams.
//!
//! Every path owns a ChaCha8 stream selected by `(master_seed, path_index)`:
//! the key comes from the master seed and the stream id is the path index.
//! A path therefore sees the same numbers whichever worker runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct PathSeed {
    pub master_seed: u64,
    pub path_index: u64,
}

impl PathSeed {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        PathSeed {
            master_seed,
            path_index,
        }
    }

    pub fn rng(self) -> ChaCha8Rng {
        path_rng(self.master_seed, self.path_index)
    }
}

pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}
