use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus, Tensor};

pub const NUM_FEATURES: usize = 4;

/// Lowercase alphanumeric word tokens.
pub fn word_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn jaccard<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn char_trigrams(s: &str) -> HashSet<String> {
    let padded: Vec<char> = format!("#{}#", s.to_lowercase()).chars().collect();
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

fn is_abbreviation(short: &[String], long: &[String]) -> bool {
    if short.len() != 1 || long.len() < 2 {
        return false;
    }
    let initials: String = long.iter().filter_map(|t| t.chars().next()).collect();
    short[0] == initials
}

/// `[char-3-gram Jaccard, token-set Jaccard, exact match, abbreviation]`,
/// all symmetric in the two strings.
pub fn surface_features(a: &str, b: &str) -> [f64; NUM_FEATURES] {
    let (ta, tb) = (word_tokens(a), word_tokens(b));
    let sa: HashSet<&String> = ta.iter().collect();
    let sb: HashSet<&String> = tb.iter().collect();
    let exact = a.trim().to_lowercase() == b.trim().to_lowercase();
    let abbrev = is_abbreviation(&ta, &tb) || is_abbreviation(&tb, &ta);
    [
        jaccard(&char_trigrams(a), &char_trigrams(b)),
        jaccard(&sa, &sb),
        if exact { 1.0 } else { 0.0 },
        if abbrev { 1.0 } else { 0.0 },
    ]
}

/// Logistic model over surface features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceScorer {
    pub weights: [f64; NUM_FEATURES],
    pub bias: f64,
}

impl Default for SurfaceScorer {
    /// Untrained prior: any strong surface cue pushes the score above 0.5.
    fn default() -> Self {
        SurfaceScorer {
            weights: [4.0, 4.0, 4.0, 6.0],
            bias: -3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerTrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Sampled negatives per positive.
    pub negative_ratio: f64,
}

impl Default for ScorerTrainConfig {
    fn default() -> Self {
        ScorerTrainConfig {
            iterations: 500,
            learning_rate: 0.5,
            l2: 1e-3,
            negative_ratio: 1.0,
        }
    }
}

impl SurfaceScorer {
    /// Coreference probability; symmetric because the pair is put in a
    /// canonical order first.
    pub fn pair_score(&self, a: &str, b: &str) -> f64 {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        let f = surface_features(x, y);
        let z: f64 = self.weights.iter().zip(&f).map(|(w, v)| w * v).sum::<f64>() + self.bias;
        sigmoid(z)
    }

    /// Symmetric `n x n` matrix with unit diagonal.
    pub fn score_matrix<S: AsRef<str>>(&self, surfaces: &[S]) -> Tensor {
        let n = surfaces.len();
        let mut m = Tensor::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
            for j in i + 1..n {
                let s = self.pair_score(surfaces[i].as_ref(), surfaces[j].as_ref());
                m.set(i, j, s);
                m.set(j, i, s);
            }
        }
        m
    }

    /// SHA-256 over the parameter values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for w in self.weights.iter().chain(std::iter::once(&self.bias)) {
            h.update(w.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Fits the logistic model on gold pairs: every same-cluster pair is a
    /// positive, and negatives are sampled from cross-cluster same-type pairs.
    /// Full-batch gradient descent, deterministic given `seed`.
    pub fn train(docs: &[Document], config: &ScorerTrainConfig, seed: u64) -> Result<Self> {
        let (xs, ys) = training_pairs(docs, config.negative_ratio, seed);
        if !ys.contains(&1.0) || !ys.contains(&0.0) {
            return Err(Error::Empty("coreference training needs positive and negative pairs".into()));
        }
        let mut w = [0.0; NUM_FEATURES];
        let mut b = 0.0;
        let n = xs.len() as f64;
        for _ in 0..config.iterations {
            let mut gw = [0.0; NUM_FEATURES];
            let mut gb = 0.0;
            for (x, &y) in xs.iter().zip(&ys) {
                let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
                let d = sigmoid(z) - y;
                for k in 0..NUM_FEATURES {
                    gw[k] += d * x[k];
                }
                gb += d;
            }
            for k in 0..NUM_FEATURES {
                w[k] -= config.learning_rate * (gw[k] / n + config.l2 * w[k]);
            }
            b -= config.learning_rate * gb / n;
        }
        Ok(SurfaceScorer { weights: w, bias: b })
    }

    /// Mean logistic loss on the given pairs.
    pub fn loss(&self, xs: &[[f64; NUM_FEATURES]], ys: &[f64]) -> f64 {
        let total: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| {
                let z: f64 = self.weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias;
                softplus(z) - y * z
            })
            .sum();
        total / xs.len().max(1) as f64
    }
}

/// Feature rows and 0/1 labels for scorer training.
pub fn training_pairs(docs: &[Document], negative_ratio: f64, seed: u64) -> (Vec<[f64; NUM_FEATURES]>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for doc in docs {
        let clusters = doc.entity_clusters();
        let mut members: Vec<(usize, String, crate::corpus::EntityType)> = Vec::new();
        for (ci, c) in clusters.iter().enumerate() {
            for m in &c.mentions {
                members.push((ci, m.surface(&doc.words), m.kind));
            }
        }
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                let (a, b) = (&members[i], &members[j]);
                if a.0 == b.0 {
                    positives.push((i, j));
                } else if a.2 == b.2 {
                    negatives.push((i, j));
                }
            }
        }
        let want = ((positives.len() as f64) * negative_ratio).round() as usize;
        let chosen: Vec<(usize, usize)> = if want >= negatives.len() {
            negatives
        } else {
            let mut idx = sample(&mut rng, negatives.len(), want).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| negatives[k]).collect()
        };
        for (pairs, y) in [(positives, 1.0), (chosen, 0.0)] {
            for (i, j) in pairs {
                xs.push(surface_features(&members[i].1, &members[j].1));
                ys.push(y);
            }
        }
    }
    (xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use proptest::prelude::*;

    #[test]
    fn feature_examples() {
        let f = surface_features("LSTM", "LSTM");
        assert_eq!(f[2], 1.0);
        assert_eq!(f[0], 1.0);
        let f = surface_features("EM", "F1");
        assert_eq!((f[0], f[1]), (0.0, 0.0));
        let f = surface_features("BiDAF", "BiDAF (ensemble)");
        assert_eq!(f[1], 0.5);
        assert_eq!(surface_features("BDM", "bola dupe mika")[3], 1.0);
        assert_eq!(surface_features("bola dupe mika", "BDM")[3], 1.0);
        assert_eq!(surface_features("BD", "bola dupe mika")[3], 0.0);
    }

    #[test]
    fn identical_pair_scores_highest_after_training() {
        let docs = generate_synthetic(4, 20, &SynthConfig::default()).unwrap();
        let s = SurfaceScorer::train(&docs, &ScorerTrainConfig::default(), 0).unwrap();
        let same = s.pair_score("LSTM", "LSTM");
        for other in ["LSTM network", "GRU", "lstm cell"] {
            assert!(same >= s.pair_score("LSTM", other));
        }
        assert!(s.pair_score("BDM", "bola dupe mika") > 0.5);
        assert!(s.pair_score("bola dupe", "kemi lofa") < 0.5);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let docs = generate_synthetic(5, 10, &SynthConfig::default()).unwrap();
        let cfg = ScorerTrainConfig::default();
        let a = SurfaceScorer::train(&docs, &cfg, 3).unwrap();
        let b = SurfaceScorer::train(&docs, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        let (xs, ys) = training_pairs(&docs, 1.0, 3);
        let zero = SurfaceScorer {
            weights: [0.0; 4],
            bias: 0.0,
        };
        assert!(a.loss(&xs, &ys) < zero.loss(&xs, &ys));
    }

    #[test]
    fn score_matrix_symmetric_unit_diagonal() {
        let s = SurfaceScorer::default();
        let m = s.score_matrix(&["a b", "AB", "c"]);
        for i in 0..3 {
            assert_eq!(m.get(i, i), 1.0);
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    proptest! {
        #[test]
        fn pair_score_symmetric_in_unit_interval(a in "[a-zA-Z0-9 ()-]{1,16}", b in "[a-zA-Z0-9 ()-]{1,16}") {
            let s = SurfaceScorer::default();
            let (x, y) = (s.pair_score(&a, &b), s.pair_score(&b, &a));
            prop_assert_eq!(x, y);
            prop_assert!((0.0..=1.0).contains(&x));
            let fa = surface_features(&a, &b);
            let fb = surface_features(&b, &a);
            prop_assert_eq!(fa, fb);
        }
    }
}
