use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Shuffles `0..n` with `seed` and cuts it into `folds` contiguous blocks whose
/// sizes differ by at most one.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::argument(format!("fold count must lie in [2, {n}], got {folds}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// V-fold cross-validation of a vector of prediction errors.
///
/// `eval(train, held_out)` returns one entry per candidate (`None` when the
/// candidate failed on that fold). The result averages each entry over folds and
/// is `None` wherever any fold failed.
pub fn cross_validate<F>(data: &Dataset, folds: usize, seed: u64, eval: F) -> Result<Vec<Option<f64>>>
where
    F: Fn(&Dataset, &Dataset) -> Result<Vec<Option<f64>>> + Sync,
{
    let parts = fold_partition(data.len(), folds, seed)?;
    let per_fold = parts
        .par_iter()
        .map(|held| {
            let mut mask = vec![false; data.len()];
            held.iter().for_each(|&i| mask[i] = true);
            let train: Vec<usize> = (0..data.len()).filter(|&i| !mask[i]).collect();
            eval(&data.subset(&train), &data.subset(held))
        })
        .collect::<Result<Vec<_>>>()?;
    let width = per_fold[0].len();
    if per_fold.iter().any(|f| f.len() != width) {
        return Err(Error::argument("folds returned different numbers of candidates"));
    }
    Ok((0..width)
        .map(|j| {
            per_fold
                .iter()
                .map(|f| f[j])
                .sum::<Option<f64>>()
                .map(|s| s / folds as f64)
        })
        .collect())
}
