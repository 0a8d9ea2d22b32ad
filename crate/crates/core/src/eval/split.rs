use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::Dataset;
use crate::rng::{derive_seed, rng_from_seed, stream};

/// `shots` training items per class; every other item is a test item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub shots: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Samples `shots` items per class uniformly without replacement. Classes
/// need strictly more than `shots` items so every class is also tested.
pub fn make_few_shot_split(ds: &Dataset, shots: usize, seed: u64) -> Result<FewShotSplit> {
    if shots == 0 {
        return Err(Error::config("shots must be >= 1"));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, name) in ds.class_names.iter().enumerate() {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        if members.len() <= shots {
            return Err(Error::ClassTooSmall {
                class: name.clone(),
                count: members.len(),
                shots,
            });
        }
        let mut rng = rng_from_seed(derive_seed(seed, &[stream::SPLIT, c as u64]));
        let mut picked = vec![false; members.len()];
        for k in index::sample(&mut rng, members.len(), shots) {
            picked[k] = true;
        }
        for (k, &i) in members.iter().enumerate() {
            if picked[k] {
                train.push(i);
            } else {
                test.push(i);
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(FewShotSplit {
        shots,
        train,
        test,
        seed,
    })
}
