//! Pieces shared by the pretraining loops: epoch batching and worker pools.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};
use crate::rng;

/// Shuffled batches for one epoch. A trailing batch smaller than `min_size`
/// is merged into the previous one.
pub fn epoch_batches(
    n: usize,
    batch_size: usize,
    min_size: usize,
    seed: u64,
    component: &str,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, component, epoch as u64, 0));
    let mut batches: Vec<Vec<usize>> = order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < min_size) {
        let tail = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(tail);
    }
    batches
}

pub fn worker_pool(workers: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Order-preserving parallel map; results do not depend on the worker count.
pub fn par_map<T: Sync, U: Send>(
    pool: &ThreadPool,
    items: &[T],
    f: impl Fn(&T) -> Result<U> + Sync + Send,
) -> Result<Vec<U>> {
    pool.install(|| items.par_iter().map(f).collect())
}
