//! Seed derivation.
//!
//! Every random stream in the crate is derived from a single root seed by
//! hashing the root together with a list of stream labels. Streams are
//! independent of the order in which they are requested, so work items can be
//! processed in any order (or concurrently) and still reproduce bit-for-bit.
//!
//! Labels used by the harness:
//!
//! | stream                  | labels                          |
//! |-------------------------|---------------------------------|
//! | task generation         | `[DOMAIN]`                      |
//! | skill learning          | `[LEARN, task_id]`              |
//! | block-domain evaluation | `[EVAL, train_id, test_id]`     |
//! | Algorithm-1 sampling    | `[DATA]`                        |
//! | model training          | `[MODEL]`                       |
//! | bench row               | `[BENCH, level, seed]`          |
//! | Monte Carlo trial       | `[TRIAL, trial]`                |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN: u64 = 0x646f_6d61_696e;
pub const LEARN: u64 = 0x006c_6561_726e;
pub const EVAL: u64 = 0x6576_616c;
pub const DATA: u64 = 0x6461_7461;
pub const MODEL: u64 = 0x006d_6f64_656c;
pub const BENCH: u64 = 0x0062_656e_6368;
pub const TRIAL: u64 = 0x0074_7269_616c;
pub const PRETRAIN: u64 = 0x7072_6574_7261_696e;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `root` and a path of labels.
pub fn derive(root: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(root), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn rng(root: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, labels))
}
