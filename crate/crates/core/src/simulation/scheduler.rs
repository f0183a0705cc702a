//! Deterministic replicate scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Worker policy for replicate loops. Results never depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    /// Global rayon pool.
    #[default]
    Auto,
    /// Dedicated pool with this many workers.
    Threads(usize),
}

impl Parallelism {
    pub fn workers(n: usize) -> Self {
        if n <= 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Threads(n)
        }
    }
}

/// Generator for replicate `index` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs `task` for replicates `0..reps`, returning outputs in replicate order.
pub fn run_replicates<T, F>(seed: u64, reps: usize, parallelism: Parallelism, task: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    let one = |k: usize| {
        let mut rng = replicate_rng(seed, k as u64);
        task(k, &mut rng)
    };
    match parallelism {
        Parallelism::Sequential => (0..reps).map(one).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Auto => {
            use rayon::prelude::*;
            (0..reps).into_par_iter().map(one).collect()
        }
        #[cfg(feature = "parallel")]
        Parallelism::Threads(n) => {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
                Ok(pool) => pool.install(|| (0..reps).into_par_iter().map(one).collect()),
                Err(e) => {
                    log::warn!("could not build a {n}-thread pool ({e}); running sequentially");
                    (0..reps).map(one).collect()
                }
            }
        }
        #[cfg(not(feature = "parallel"))]
        _ => (0..reps).map(one).collect(),
    }
}
