use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatasetError;

/// One cross-validation split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffles `ids` with `seed` and partitions them into `k` disjoint test
/// folds whose sizes differ by at most one; the first `n mod k` folds take
/// the extra element. Each fold trains on the complement of its test set.
pub fn split_folds<T: Clone>(ids: &[T], k: usize, seed: u64) -> Result<Vec<Fold<T>>, DatasetError> {
    if k == 0 {
        return Err(DatasetError::Invalid("fold count must be positive".into()));
    }
    if k > ids.len() {
        return Err(DatasetError::Invalid(format!(
            "cannot split {} items into {k} folds",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for f in 0..k {
        bounds.push(bounds[f] + base + usize::from(f < extra));
    }
    Ok((0..k)
        .map(|f| {
            let test_idx = &order[bounds[f]..bounds[f + 1]];
            let mut test_sorted = test_idx.to_vec();
            test_sorted.sort_unstable();
            let train = (0..ids.len())
                .filter(|i| test_sorted.binary_search(i).is_err())
                .map(|i| ids[i].clone())
                .collect();
            Fold {
                train,
                test: test_sorted.iter().map(|&i| ids[i].clone()).collect(),
            }
        })
        .collect())
}
