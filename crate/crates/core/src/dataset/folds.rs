use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// One fold of a grouped k-fold partition. Train and test never share a group key.
#[derive(Clone, Debug)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub test_groups: Vec<String>,
    pub train: Dataset,
    pub test: Dataset,
}

/// Partitions the dataset's group keys into `k` near-equal parts after a
/// seeded shuffle. Part sizes differ by at most one.
pub fn split_grouped_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold requires k >= 2, got {k}")));
    }
    let mut groups: Vec<String> = ds.group_keys().into_iter().map(str::to_string).collect();
    if groups.len() < k {
        return Err(Error::Config(format!(
            "{} distinct groups cannot fill {k} folds",
            groups.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);

    let base = groups.len() / k;
    let extra = groups.len() % k;
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for fold_index in 0..k {
        let size = base + usize::from(fold_index < extra);
        let mut test_groups = groups[start..start + size].to_vec();
        start += size;
        test_groups.sort();
        let test_set: HashSet<&str> = test_groups.iter().map(String::as_str).collect();
        folds.push(FoldSplit {
            fold_index,
            train: ds.filter_groups(|g| !test_set.contains(g)),
            test: ds.filter_groups(|g| test_set.contains(g)),
            test_groups,
        });
    }
    Ok(folds)
}
