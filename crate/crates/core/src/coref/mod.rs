//! Pairwise surface-form coreference scoring, average-linkage agglomerative
//! clustering with silhouette-selected cluster counts, and the salient
//! cluster filter.

mod cache;
mod cluster;
mod surface;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{EntityCluster, EntityType, Mention, Span};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub use cache::{ScoreCache, CACHE_ENV};
pub use cluster::{agglomerate, cut, default_k_range, dendrogram, k_range, select_num_clusters, silhouette, Merge};
pub use surface::{surface_features, training_pairs, word_tokens, ScorerTrainConfig, SurfaceScorer, NUM_FEATURES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorefConfig {
    /// Upper end of the silhouette sweep is `n_salient + salient_slack`.
    pub salient_slack: usize,
    pub scorer: ScorerTrainConfig,
}

impl Default for CorefConfig {
    fn default() -> Self {
        CorefConfig {
            salient_slack: 5,
            scorer: ScorerTrainConfig::default(),
        }
    }
}

/// Id given to the `index`-th predicted cluster of a type, e.g. `Method_0`.
pub fn predicted_cluster_id(kind: EntityType, index: usize) -> String {
    format!("{kind}_{index}")
}

/// Agglomerates same-type mentions into `k` clusters. Cluster order follows
/// each cluster's earliest member in `mentions`.
pub fn cluster_mentions(mentions: &[Mention], scores: &Tensor, k: usize) -> Result<Vec<EntityCluster>> {
    let Some(first) = mentions.first() else {
        return Err(Error::Empty("no mentions to cluster".into()));
    };
    if mentions.iter().any(|m| m.kind != first.kind) {
        return Err(Error::Config("cluster_mentions needs mentions of a single type".into()));
    }
    if scores.shape() != (mentions.len(), mentions.len()) {
        return Err(Error::Shape(format!(
            "score matrix {:?} for {} mentions",
            scores.shape(),
            mentions.len()
        )));
    }
    let groups = agglomerate(scores, k)?;
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(j, g)| EntityCluster {
            entity_id: predicted_cluster_id(first.kind, j),
            kind: first.kind,
            mentions: g.into_iter().map(|i| mentions[i]).collect(),
        })
        .collect())
}

fn submatrix(m: &Tensor, idx: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(idx.len(), idx.len());
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            out.set(a, b, m.get(i, j));
        }
    }
    out
}

/// Clusters a document's mentions type by type: pairwise scores, silhouette
/// choice of `k`, then agglomeration. Salient flags on the mentions bound the
/// silhouette sweep. `scores` covers all mentions in order.
pub fn cluster_by_type(mentions: &[Mention], scores: &Tensor, config: &CorefConfig) -> Result<Vec<EntityCluster>> {
    let mut out = Vec::new();
    for kind in EntityType::ALL {
        let idx: Vec<usize> = (0..mentions.len()).filter(|&i| mentions[i].kind == kind).collect();
        if idx.is_empty() {
            continue;
        }
        let group: Vec<Mention> = idx.iter().map(|&i| mentions[i]).collect();
        let sub = submatrix(scores, &idx);
        let n_salient = group.iter().filter(|m| m.salient).count();
        let k = select_num_clusters(&sub, k_range(group.len(), n_salient, config.salient_slack))?;
        out.extend(cluster_mentions(&group, &sub, k)?);
    }
    Ok(out)
}

/// Document score matrix over mention surfaces, read through the cache when
/// one is given.
pub fn document_scores(
    doc_id: &str,
    surfaces: &[String],
    scorer: &SurfaceScorer,
    cache: Option<&ScoreCache>,
) -> Result<Tensor> {
    let checksum = scorer.checksum();
    if let Some(c) = cache {
        if let Some(m) = c.get(doc_id, &checksum, surfaces) {
            return Ok(m);
        }
    }
    let m = scorer.score_matrix(surfaces);
    if let Some(c) = cache {
        c.put(doc_id, &checksum, surfaces, &m)?;
    }
    Ok(m)
}

/// Clusters with at least one salient mention, in input order. Mentions
/// missing from `saliency` count as non-salient.
pub fn salient_clusters(clusters: &[EntityCluster], saliency: &BTreeMap<Span, bool>) -> Vec<EntityCluster> {
    clusters
        .iter()
        .filter(|c| c.mentions.iter().any(|m| saliency.get(&m.span()).copied().unwrap_or(false)))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cluster(id: &str, spans: &[(usize, usize)]) -> EntityCluster {
        EntityCluster {
            entity_id: id.into(),
            kind: EntityType::Method,
            mentions: spans.iter().map(|&(s, e)| Mention::new(s, e, EntityType::Method)).collect(),
        }
    }

    #[test]
    fn salient_filter() {
        let cs = vec![cluster("a", &[(0, 1)]), cluster("b", &[(2, 3), (4, 5)]), cluster("c", &[(6, 7)])];
        let none: BTreeMap<Span, bool> = BTreeMap::new();
        assert!(salient_clusters(&cs, &none).is_empty());
        let mut sal = BTreeMap::new();
        sal.insert(Span::new(4, 5), true);
        sal.insert(Span::new(0, 1), false);
        let kept = salient_clusters(&cs, &sal);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].entity_id, "b");
    }

    #[test]
    fn cluster_of_five_with_one_salient_kept() {
        let cs = vec![cluster("x", &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])];
        let mut sal = BTreeMap::new();
        sal.insert(Span::new(3, 4), true);
        assert_eq!(salient_clusters(&cs, &sal).len(), 1);
    }

    #[test]
    fn cluster_mentions_rejects_bad_k() {
        let ms = vec![Mention::new(0, 1, EntityType::Task); 3];
        let s = Tensor::full(3, 3, 0.5);
        assert!(cluster_mentions(&ms, &s, 4).is_err());
        assert_eq!(cluster_mentions(&ms, &s, 3).unwrap().len(), 3);
        assert_eq!(cluster_mentions(&ms[..1], &Tensor::full(1, 1, 1.0), 1).unwrap().len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        /// With a perfect scorer and k equal to the gold count, clustering
        /// returns the gold partition.
        #[test]
        fn oracle_scorer_recovers_gold(seed in any::<u64>(), n in 1usize..12, kmax in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..kmax)).collect();
            let mut distinct = labels.clone();
            distinct.sort();
            distinct.dedup();
            let mut s = Tensor::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    s.set(i, j, if labels[i] == labels[j] { 1.0 } else { 0.0 });
                }
            }
            let ms: Vec<Mention> = (0..n).map(|i| Mention::new(i, i + 1, EntityType::Dataset)).collect();
            let got = cluster_mentions(&ms, &s, distinct.len()).unwrap();
            let mut got_sets: Vec<Vec<usize>> = got.iter().map(|c| c.mentions.iter().map(|m| m.start).collect()).collect();
            got_sets.sort();
            let mut want: Vec<Vec<usize>> = distinct.iter().map(|&l| (0..n).filter(|&i| labels[i] == l).collect()).collect();
            want.sort();
            prop_assert_eq!(got_sets, want);
        }
    }
}
