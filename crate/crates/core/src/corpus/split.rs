use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Document;
use crate::error::{Error, Result};

/// Train/dev/test proportions. Must be non-negative and sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.70,
            dev: 0.15,
            test: 0.15,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusSplit {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

/// Seeded shuffle followed by contiguous cuts. Dev and test sizes are
/// rounded; train takes the remainder.
pub fn split_corpus(docs: &[Document], fractions: SplitFractions, seed: u64) -> Result<CorpusSplit> {
    let SplitFractions { train, dev, test } = fractions;
    if [train, dev, test].iter().any(|f| !(0.0..=1.0).contains(f)) || ((train + dev + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be in [0, 1] and sum to 1, got {train}/{dev}/{test}"
        )));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = docs.len();
    let n_dev = ((n as f64) * dev).round() as usize;
    let n_test = (((n as f64) * test).round() as usize).min(n - n_dev);
    let n_train = n - n_dev - n_test;
    let pick = |range: std::ops::Range<usize>| -> Vec<Document> {
        order[range].iter().map(|&i| docs[i].clone()).collect()
    };
    Ok(CorpusSplit {
        train: pick(0..n_train),
        dev: pick(n_train..n_train + n_dev),
        test: pick(n_train + n_dev..n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::tiny_doc;

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| {
                let mut d = tiny_doc();
                d.doc_id = format!("d{i}");
                d
            })
            .collect()
    }

    #[test]
    fn default_split_sizes() {
        let s = split_corpus(&docs(100), SplitFractions::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (70, 15, 15));
    }

    #[test]
    fn fractions_summing_past_one_rejected() {
        // 70/30/30 does not describe a partition.
        let f = SplitFractions {
            train: 0.7,
            dev: 0.3,
            test: 0.3,
        };
        assert!(split_corpus(&docs(10), f, 0).is_err());
    }

    #[test]
    fn split_is_deterministic_partition() {
        let all = docs(23);
        let a = split_corpus(&all, SplitFractions::default(), 9).unwrap();
        let b = split_corpus(&all, SplitFractions::default(), 9).unwrap();
        let ids = |s: &CorpusSplit| -> Vec<String> {
            s.train.iter().chain(&s.dev).chain(&s.test).map(|d| d.doc_id.clone()).collect()
        };
        assert_eq!(ids(&a), ids(&b));
        let mut sorted = ids(&a);
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 23);
    }
}
