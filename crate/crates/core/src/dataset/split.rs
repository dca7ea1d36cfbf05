use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "split fractions {} / {} / {} must be in [0, 1] and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

/// Index lists into one corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Seeded shuffle, then `floor(train * n)` training and `floor(val * n)`
/// validation indices; the test set takes the rest.
pub fn split_plain(n: usize, spec: &SplitSpec, seed: u64) -> Result<Split> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = shuffled(n, &mut rng);
    let n_train = (spec.train * n as f64).floor() as usize;
    let n_val = ((spec.val * n as f64).floor() as usize).min(n - n_train);
    Ok(Split {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    })
}

/// Test fraction of each source corpus in dataset 3.
pub const DATASET3_TEST_FRACTIONS: [f64; 2] = [0.5, 0.2];

/// `(corpus, index)` pairs, corpus 0 being dataset 1 and 1 dataset 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset3Split {
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

/// Dataset 3: half of dataset 1 and a fifth of dataset 2 form the test set.
/// Each corpus keeps `floor(n * (1 - test fraction))` points for training
/// and validation, which are pooled, shuffled and divided 1:3 into
/// validation (`floor(total / 4)`) and training.
pub fn split_dataset3(n1: usize, n2: usize, seed: u64) -> Dataset3Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = Vec::new();
    let mut test = Vec::new();
    for (src, (n, frac)) in [n1, n2].into_iter().zip(DATASET3_TEST_FRACTIONS).enumerate() {
        let idx = shuffled(n, &mut rng);
        let keep = (n as f64 * (1.0 - frac)).floor() as usize;
        pool.extend(idx[..keep].iter().map(|&i| (src, i)));
        test.extend(idx[keep..].iter().map(|&i| (src, i)));
    }
    pool.shuffle(&mut rng);
    let n_val = pool.len() / 4;
    let train = pool.split_off(n_val);
    Dataset3Split {
        train,
        val: pool,
        test,
    }
}
