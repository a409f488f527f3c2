//! # datasp
//!
//! A smoothed, differentiable variant of Floyd–Warshall for learning latent
//! edge costs of a graph from observed trajectories.
//!
//! The forward pass ([`engine::forward`]) replaces the hard `min` of the
//! classical recursion with a log-sum-exp soft minimum and records, for every
//! ordered pair `(i, j)`, a distribution `P[i, j, ·]` over the *highest
//! intermediate node* of an `i → j` walk. The reverse pass
//! ([`engine::backward`]) propagates gradients of any scalar loss on `P` and
//! the smoothed distances back to the input cost matrix.
//!
//! ## Layout
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`smooth`] | soft minimum, softmin weights and their adjoint |
//! | [`graph`] | graphs, cost matrices, Floyd–Warshall, Dijkstra |
//! | [`exclusion`] | node elimination and random subgraph compression |
//! | [`engine`] | shortcut tensor forward pass, tape and adjoint |
//! | [`trajectory`] | trajectories, shortcut frequencies, batching, JSONL I/O |
//! | [`synthetic`] | seeded synthetic graph + trajectory generator |
//! | [`model`] | feed-forward prior-residual cost model and checkpoints |
//! | [`training`] | losses, Adam, the learning loop |
//! | [`inference`] | path sampling, destination likelihood, metrics |
//! | [`oracle`] | brute-force walk enumeration and gradient checks |
//! | [`tensor_io`] | binary tensor container |

pub mod engine;
pub mod error;
pub mod exclusion;
pub mod graph;
pub mod inference;
pub mod model;
pub mod oracle;
pub mod smooth;
pub mod synthetic;
pub mod tensor_io;
pub mod training;
pub mod trajectory;

pub use engine::{ShortcutTensor, SmoothedDistances};
pub use error::{Error, Result};
pub use graph::{CostMatrix, Graph, PriorCosts};
pub use smooth::Beta;
pub use trajectory::Trajectory;

/// Deterministic RNG used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Mixes several integers into one seed (splitmix64 finalizer over a running state).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        state ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(state << 6).wrapping_add(state >> 2);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}
