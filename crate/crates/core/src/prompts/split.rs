use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation_size: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            validation_size: 2000,
            seed: 42,
        }
    }
}

/// Seeded uniform partition into `(train, validation)`.
///
/// A ChaCha8 stream seeded with `spec.seed` shuffles the record indices; the
/// first `validation_size` go to validation. Both halves keep input order.
pub fn split<T: Clone>(records: &[T], spec: SplitSpec) -> Result<(Vec<T>, Vec<T>), PromptError> {
    let n = records.len();
    if spec.validation_size == 0 || spec.validation_size >= n {
        return Err(PromptError::SplitTooLarge {
            requested: spec.validation_size,
            available: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut in_validation = vec![false; n];
    for &i in &order[..spec.validation_size] {
        in_validation[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n - spec.validation_size), Vec::new());
    for (record, is_val) in records.iter().zip(in_validation) {
        if is_val {
            val.push(record.clone());
        } else {
            train.push(record.clone());
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn published_sizes() {
        let records: Vec<usize> = (0..18_488).collect();
        let (train, val) = split(&records, SplitSpec::default()).unwrap();
        assert_eq!((train.len(), val.len()), (16_488, 2000));
    }

    #[test]
    fn rejects_oversized_validation() {
        let records = [1, 2, 3];
        for bad in [0, 3, 4] {
            let spec = SplitSpec {
                validation_size: bad,
                seed: 42,
            };
            assert!(matches!(split(&records, spec), Err(PromptError::SplitTooLarge { .. })));
        }
    }

    proptest! {
        #[test]
        fn partitions_input(n in 2usize..200, frac in 0.0f64..1.0, seed in any::<u64>()) {
            let k = ((n - 1) as f64 * frac) as usize + 1;
            let k = k.min(n - 1);
            let records: Vec<usize> = (0..n).collect();
            let spec = SplitSpec { validation_size: k, seed };
            let (train, val) = split(&records, spec).unwrap();
            prop_assert_eq!(val.len(), k);
            let mut all: Vec<usize> = train.iter().chain(val.iter()).copied().collect();
            all.sort();
            prop_assert_eq!(all, records.clone());
            prop_assert_eq!(split(&records, spec).unwrap(), (train, val));
        }
    }
}
