use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

pub const N_TRIALS: usize = 5;

/// One train/validation/test partition of case ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// `(train, val, test)` sizes: val and test take `floor(0.2 n)`, train the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held = n / 5;
    (n - 2 * held, held, held)
}

/// Five independent seeded 0.6/0.2/0.2 partitions. Each set keeps the input
/// order of `case_ids`.
pub fn make_splits(case_ids: &[String], seed: u64) -> Result<Vec<Split>, DataError> {
    let n = case_ids.len();
    if n < 5 {
        return Err(DataError::TooFewCases(n));
    }
    let (_, n_val, n_test) = split_sizes(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(N_TRIALS);
    for _ in 0..N_TRIALS {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut role = vec![0u8; n];
        for &i in &order[..n_test] {
            role[i] = 2;
        }
        for &i in &order[n_test..n_test + n_val] {
            role[i] = 1;
        }
        let pick = |r: u8| -> Vec<String> {
            (0..n).filter(|&i| role[i] == r).map(|i| case_ids[i].clone()).collect()
        };
        trials.push(Split {
            train: pick(0),
            val: pick(1),
            test: pick(2),
        });
    }
    Ok(trials)
}
