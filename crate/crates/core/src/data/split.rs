use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TupleDataset;
use crate::config::{join_list, KvMap};
use crate::error::{Error, Result};

/// Train/validation/test fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fractions: [0.52, 0.24, 0.24],
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub(crate) fn apply(&mut self, kv: &mut KvMap, prefix: &str) -> Result<()> {
        let key = format!("{prefix}split");
        let mut v = self.fractions.to_vec();
        kv.take_list(&key, &mut v)?;
        self.fractions = v
            .try_into()
            .map_err(|_| Error::config(&key, "expected three comma-separated fractions"))?;
        kv.take(&format!("{prefix}split_seed"), &mut self.seed)?;
        Ok(())
    }

    pub(crate) fn write(&self, kv: &mut KvMap, prefix: &str) {
        kv.insert(format!("{prefix}split"), join_list(&self.fractions));
        kv.insert(format!("{prefix}split_seed"), self.seed);
    }
}

/// Tuple-level split into `(train, val, test)`.
///
/// Tuples are shuffled by `seed`; validation and test sizes are
/// `floor(n * fraction)` and the remainder goes to training. Each part keeps
/// the original tuple order.
pub fn split(
    ds: &TupleDataset,
    config: &SplitConfig,
) -> Result<(TupleDataset, TupleDataset, TupleDataset)> {
    let f = config.fractions;
    if f.iter().any(|x| x.is_nan() || *x <= 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "split fractions must be positive and sum to 1, got {f:?}"
        )));
    }
    let n = ds.len();
    // Guard against products like 0.29 * 100 = 28.999999999999996.
    let part = |frac: f64| ((n as f64) * frac + 1e-9).floor() as usize;
    let (n_val, n_test) = (part(f[1]), part(f[2]));
    if n_val == 0 || n_test == 0 || n_val + n_test >= n {
        return Err(Error::contract(format!(
            "split of {n} tuples by {f:?} leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let n_train = n - n_val - n_test;
    let take = |range: std::ops::Range<usize>| {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        ds.subset(&idx)
    };
    let train = take(0..n_train);
    let val = take(n_train..n_train + n_val);
    let test = take(n_train + n_val..n);
    Ok((train, val, test))
}

/// RNG for one epoch of a run: stream `epoch` of the run seed.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Mini-batches of tuple indices for one epoch.
///
/// The order is a shuffle keyed by `(seed, epoch)`; a trailing batch with
/// fewer than two tuples is dropped since the losses need a negative.
pub fn batch_iter(
    num_tuples: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::contract(format!(
            "batch size must be at least 2, got {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..num_tuples).collect();
    order.shuffle(&mut epoch_rng(seed, epoch));
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect())
}
