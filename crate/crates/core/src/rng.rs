//! Seed derivation and per-purpose RNG streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a 64-bit
//! seed and a stream id, so a node's weak ties depend only on `(graph seed, node)`
//! regardless of the order in which nodes are materialized.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a master seed with a path of indices, e.g. `(cell, trial)`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &part| splitmix64(acc ^ splitmix64(part)))
}

/// Stream used to draw the weak ties of the node with row-major index `node`.
pub fn node_rng(graph_seed: u64, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(graph_seed);
    rng.set_stream(node as u64);
    rng
}

/// Stream handed to a routing scheme at a given step.
pub fn step_rng(scheme_seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(scheme_seed);
    rng.set_stream(step);
    rng
}

/// Seeds for the graph and the scheme of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSeeds {
    pub graph: u64,
    pub scheme: u64,
}

impl TrialSeeds {
    pub fn derive(master: u64, cell: u64, trial: u64) -> Self {
        let base = derive_seed(master, &[cell, trial]);
        Self {
            graph: derive_seed(base, &[0]),
            scheme: derive_seed(base, &[1]),
        }
    }
}
