//! Minimal deterministic differentiable operators with hand-written backward passes.

pub mod gradcheck;
pub mod layers;
pub mod mat;
pub mod optim;
pub mod params;

pub use gradcheck::grad_check;
pub use layers::{
    avg_pool_temporal, avg_pool_temporal_backward, linear_resize, relu, sigmoid, Conv1d, Conv2d,
    CtcLayer, ResizePlan,
};
pub use mat::{Mat, Tensor3};
pub use optim::Adam;
pub use params::{HasParams, LayerGrad, Param};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator used for every random draw in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed from a parent seed and a stream tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
