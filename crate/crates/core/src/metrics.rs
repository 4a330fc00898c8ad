//! Evaluation: exact-match mention F1, binary F1, predicted-to-gold cluster
//! mapping, salient-cluster F1, relation F1 under the mapping and Cohen's
//! kappa. Counts pool across documents; rates are computed at the end.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::corpus::{binary_relations, EntityCluster, EntityType, Mention, RelationKey, RelationTuple};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Harmonic mean with P = 0 on no predictions, R = 0 on no gold, and
    /// F1 = 0 when P + R = 0.
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

/// Precision and recall numerators kept apart: for clusters, the number of
/// correct predictions and the number of gold items found can differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub pred_correct: usize,
    pub n_pred: usize,
    pub gold_found: usize,
    pub n_gold: usize,
}

impl Counts {
    pub fn matched(tp: usize, n_pred: usize, n_gold: usize) -> Self {
        Counts {
            pred_correct: tp,
            n_pred,
            gold_found: tp,
            n_gold,
        }
    }

    pub fn prf(&self) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Prf::new(ratio(self.pred_correct, self.n_pred), ratio(self.gold_found, self.n_gold))
    }

    pub fn is_empty(&self) -> bool {
        self.n_pred == 0 && self.n_gold == 0
    }
}

impl Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            pred_correct: self.pred_correct + o.pred_correct,
            n_pred: self.n_pred + o.n_pred,
            gold_found: self.gold_found + o.gold_found,
            n_gold: self.n_gold + o.n_gold,
        }
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MentionScores {
    pub per_type: BTreeMap<EntityType, Prf>,
    /// Unweighted mean over types present in gold or predictions.
    pub macro_f1: f64,
}

/// Per-type exact-match counts for one document.
pub fn mention_counts(gold: &[Mention], pred: &[Mention]) -> BTreeMap<EntityType, Counts> {
    let key = |m: &Mention| (m.start, m.end, m.kind);
    let g: BTreeSet<_> = gold.iter().map(key).collect();
    let p: BTreeSet<_> = pred.iter().map(key).collect();
    EntityType::ALL
        .iter()
        .map(|&t| {
            let gt = g.iter().filter(|k| k.2 == t).count();
            let pt = p.iter().filter(|k| k.2 == t).count();
            let tp = p.iter().filter(|k| k.2 == t && g.contains(k)).count();
            (t, Counts::matched(tp, pt, gt))
        })
        .collect()
}

/// Macro F1 from per-type counts pooled over documents.
pub fn mention_scores(counts: &BTreeMap<EntityType, Counts>) -> MentionScores {
    let per_type: BTreeMap<EntityType, Prf> =
        counts.iter().filter(|(_, c)| !c.is_empty()).map(|(&t, c)| (t, c.prf())).collect();
    let macro_f1 = if per_type.is_empty() {
        0.0
    } else {
        per_type.values().map(|p| p.f1).sum::<f64>() / per_type.len() as f64
    };
    MentionScores { per_type, macro_f1 }
}

/// Mention F1 over a document set; `gold[i]` and `pred[i]` are the same
/// document.
pub fn mention_f1(gold: &[Vec<Mention>], pred: &[Vec<Mention>]) -> Result<MentionScores> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: pred.len(),
        });
    }
    let mut total: BTreeMap<EntityType, Counts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        for (t, c) in mention_counts(g, p) {
            *total.entry(t).or_default() += c;
        }
    }
    Ok(mention_scores(&total))
}

pub fn binary_counts(gold: &[bool], pred: &[bool]) -> Result<Counts> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: pred.len(),
        });
    }
    let tp = gold.iter().zip(pred).filter(|(g, p)| **g && **p).count();
    Ok(Counts::matched(tp, pred.iter().filter(|&&p| p).count(), gold.iter().filter(|&&g| g).count()))
}

pub fn binary_f1(gold: &[bool], pred: &[bool]) -> Result<Prf> {
    Ok(binary_counts(gold, pred)?.prf())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedCluster {
    pub gold_id: String,
    /// Fraction of the predicted cluster's mentions that belong to the gold
    /// cluster; always above one half.
    pub fraction: f64,
}

/// Partial map from predicted cluster id to gold cluster.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterMapping {
    pub pairs: BTreeMap<String, MappedCluster>,
}

impl ClusterMapping {
    pub fn gold_of(&self, pred_id: &str) -> Option<&str> {
        self.pairs.get(pred_id).map(|m| m.gold_id.as_str())
    }

    /// Identity mapping over the given ids.
    pub fn identity<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        ClusterMapping {
            pairs: ids
                .into_iter()
                .map(|id| {
                    (
                        id.to_string(),
                        MappedCluster {
                            gold_id: id.to_string(),
                            fraction: 1.0,
                        },
                    )
                })
                .collect(),
        }
    }
}

fn mention_in(m: &Mention, gold: &EntityCluster) -> bool {
    gold.mentions.iter().any(|g| g.span().jaccard(&m.span()) > 0.5)
}

/// Maps each predicted cluster to the gold cluster containing more than half
/// of its mentions. Should two golds qualify (overlapping gold clusters),
/// the higher fraction wins, then the smaller gold id.
pub fn map_clusters(pred: &[EntityCluster], gold: &[EntityCluster]) -> ClusterMapping {
    let mut pairs = BTreeMap::new();
    for p in pred {
        if p.mentions.is_empty() {
            continue;
        }
        let mut best: Option<MappedCluster> = None;
        for g in gold {
            let inside = p.mentions.iter().filter(|m| mention_in(m, g)).count();
            let fraction = inside as f64 / p.mentions.len() as f64;
            if fraction <= 0.5 {
                continue;
            }
            let better = match &best {
                None => true,
                Some(b) => fraction > b.fraction || (fraction == b.fraction && g.entity_id < b.gold_id),
            };
            if better {
                best = Some(MappedCluster {
                    gold_id: g.entity_id.clone(),
                    fraction,
                });
            }
        }
        if let Some(b) = best {
            pairs.insert(p.entity_id.clone(), b);
        }
    }
    ClusterMapping { pairs }
}

/// Precision counts mapped predictions; recall counts gold clusters hit by
/// at least one mapped prediction.
pub fn cluster_counts(pred: &[EntityCluster], gold: &[EntityCluster], mapping: &ClusterMapping) -> Counts {
    let mapped = pred.iter().filter(|p| mapping.gold_of(&p.entity_id).is_some()).count();
    let hit: BTreeSet<&str> = pred.iter().filter_map(|p| mapping.gold_of(&p.entity_id)).collect();
    let found = gold.iter().filter(|g| hit.contains(g.entity_id.as_str())).count();
    Counts {
        pred_correct: mapped,
        n_pred: pred.len(),
        gold_found: found,
        n_gold: gold.len(),
    }
}

pub fn cluster_f1(pred: &[EntityCluster], gold: &[EntityCluster], mapping: &ClusterMapping) -> Prf {
    cluster_counts(pred, gold, mapping).prf()
}

/// Gold relation keys of the given arity, with binary keys deduplicated.
pub fn gold_relation_keys(gold: &[RelationTuple], arity: usize) -> BTreeSet<RelationKey> {
    if arity == 2 {
        binary_relations(gold)
    } else {
        gold.iter().map(RelationTuple::key).collect()
    }
}

/// Relation counts for one document. `pred` keys hold predicted cluster ids.
/// A prediction with an unmapped slot is a false positive; mapped
/// predictions are compared as a set, so two predicted clusters of one gold
/// entity do not yield two hits.
pub fn relation_counts(gold: &[RelationTuple], pred: &[RelationKey], mapping: &ClusterMapping, arity: usize) -> Counts {
    let gold_keys = gold_relation_keys(gold, arity);
    let mut unmapped = 0;
    let mut mapped: BTreeSet<RelationKey> = BTreeSet::new();
    for key in pred.iter().filter(|k| k.arity() == arity) {
        let slots: Option<Vec<(EntityType, String)>> = key
            .0
            .iter()
            .map(|(r, id)| mapping.gold_of(id).map(|g| (*r, g.to_string())))
            .collect();
        match slots {
            Some(s) => {
                mapped.insert(RelationKey::new(s));
            }
            None => unmapped += 1,
        }
    }
    let tp = mapped.intersection(&gold_keys).count();
    Counts::matched(tp, unmapped + mapped.len(), gold_keys.len())
}

pub fn relation_f1(gold: &[RelationTuple], pred: &[RelationKey], mapping: &ClusterMapping, arity: usize) -> Prf {
    relation_counts(gold, pred, mapping, arity).prf()
}

/// Cohen's kappa with marginal-product chance agreement; 1.0 when chance
/// agreement is 1 and the labelings agree.
pub fn cohen_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("cohen_kappa needs at least one item".into()));
    }
    let n = a.len() as f64;
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut ma: HashMap<&T, usize> = HashMap::new();
    let mut mb: HashMap<&T, usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let p_e: f64 = ma
        .iter()
        .map(|(k, &ca)| ca as f64 * mb.get(k).copied().unwrap_or(0) as f64)
        .sum::<f64>()
        / (n * n);
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(s: usize, e: usize, t: EntityType) -> Mention {
        Mention::new(s, e, t)
    }

    fn cl(id: &str, spans: &[(usize, usize)]) -> EntityCluster {
        EntityCluster {
            entity_id: id.into(),
            kind: EntityType::Method,
            mentions: spans.iter().map(|&(s, e)| m(s, e, EntityType::Method)).collect(),
        }
    }

    #[test]
    fn mention_fixtures() {
        use EntityType::*;
        let gold = vec![vec![m(0, 2, Task), m(5, 6, Dataset)]];
        let same = mention_f1(&gold, &gold).unwrap();
        assert_eq!(same.macro_f1, 1.0);
        let off = mention_f1(&[vec![m(0, 2, Task)]], &[vec![m(0, 3, Task)]]).unwrap();
        assert_eq!(off.per_type[&Task].f1, 0.0);
        let partial = mention_f1(&gold, &[vec![m(0, 2, Task)]]).unwrap();
        assert_eq!(partial.per_type[&Task].f1, 1.0);
        assert_eq!(partial.per_type[&Dataset].f1, 0.0);
        assert!(!partial.per_type.contains_key(&Metric));
        assert_eq!(partial.macro_f1, 0.5);
        assert!(mention_f1(&gold, &[]).is_err());
    }

    #[test]
    fn binary_fixtures() {
        let p = binary_f1(&[true, true, false, false], &[true, false, true, false]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
        assert_eq!(binary_f1(&[true, false], &[false, false]).unwrap().f1, 0.0);
        assert_eq!(binary_f1(&[true, false], &[true, false]).unwrap().f1, 1.0);
        assert!(binary_f1(&[true], &[]).is_err());
    }

    #[test]
    fn mapping_fixtures() {
        let gold = vec![cl("G", &[(0, 1), (2, 3), (4, 5)]), cl("H", &[(10, 13)])];
        let p = cl("p", &[(0, 1), (2, 3), (7, 8)]);
        let mapping = map_clusters(std::slice::from_ref(&p), &gold);
        assert_eq!(mapping.gold_of("p"), Some("G"));
        assert!((mapping.pairs["p"].fraction - 2.0 / 3.0).abs() < 1e-15);

        let half = cl("q", &[(0, 1), (7, 8)]);
        assert!(map_clusters(&[half], &gold).pairs.is_empty());

        // (10,12) vs (10,13): Jaccard 2/3.
        let near = cl("r", &[(10, 12)]);
        assert_eq!(map_clusters(&[near], &gold).gold_of("r"), Some("H"));
        let far = cl("s", &[(10, 11)]);
        assert!(map_clusters(&[far], &gold).pairs.is_empty());
    }

    #[test]
    fn overlapping_golds_prefer_fraction_then_id() {
        let gold = vec![cl("B", &[(0, 1), (1, 2)]), cl("A", &[(0, 1), (1, 2)]), cl("C", &[(0, 1)])];
        let p = cl("p", &[(0, 1), (1, 2)]);
        let mp = map_clusters(&[p], &gold);
        assert_eq!(mp.gold_of("p"), Some("A"));
    }

    #[test]
    fn cluster_fixtures() {
        let gold = vec![cl("G", &[(0, 1), (2, 3), (4, 5), (6, 7)]), cl("H", &[(8, 9), (9, 10)])];
        let m1 = map_clusters(&gold, &gold);
        assert_eq!(cluster_f1(&gold, &gold, &m1).f1, 1.0);

        let halves = vec![cl("a", &[(0, 1), (2, 3)]), cl("b", &[(4, 5), (6, 7)])];
        let m2 = map_clusters(&halves, &gold[..1]);
        let p = cluster_f1(&halves, &gold[..1], &m2);
        assert_eq!((p.precision, p.recall), (1.0, 1.0));

        let mixed = vec![cl("x", &[(0, 1), (2, 3), (8, 9), (9, 10)])];
        let m3 = map_clusters(&mixed, &gold);
        assert_eq!(cluster_f1(&mixed, &gold, &m3).precision, 0.0);
    }

    fn key4(ids: [&str; 4]) -> RelationKey {
        RelationKey::new(EntityType::ALL.iter().zip(ids).map(|(t, s)| (*t, s.to_string())).collect())
    }

    #[test]
    fn relation_fixtures() {
        let gold = vec![RelationTuple::new("d", "m", "k", "t")];
        let mapping = ClusterMapping::identity(["d", "m", "k", "t", "t2"]);
        let right = key4(["d", "m", "k", "t"]);
        let wrong = key4(["d", "m", "k", "t2"]);
        let p = relation_f1(&gold, &[right.clone(), wrong.clone()], &mapping, 4);
        assert_eq!((p.precision, p.recall), (0.5, 1.0));
        assert!((p.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(relation_f1(&gold, &[wrong], &mapping, 4).f1, 0.0);
        let unmapped = key4(["d", "m", "k", "zz"]);
        let c = relation_counts(&gold, &[unmapped], &mapping, 4);
        assert_eq!((c.pred_correct, c.n_pred), (0, 1));
        // Binary: six projections of the gold tuple.
        let bin: Vec<RelationKey> = crate::corpus::split_to_binary(&gold[0]);
        assert_eq!(relation_f1(&gold, &bin, &mapping, 2).f1, 1.0);
    }

    #[test]
    fn two_predicted_clusters_of_one_gold_count_once() {
        let gold = vec![RelationTuple::new("d", "m", "k", "t")];
        let mut mapping = ClusterMapping::identity(["d", "m", "k", "t"]);
        mapping.pairs.insert(
            "d_bis".into(),
            MappedCluster {
                gold_id: "d".into(),
                fraction: 1.0,
            },
        );
        let c = relation_counts(&gold, &[key4(["d", "m", "k", "t"]), key4(["d_bis", "m", "k", "t"])], &mapping, 4);
        assert_eq!(c, Counts::matched(1, 1, 1));
    }

    #[test]
    fn kappa_fixtures() {
        assert_eq!(cohen_kappa(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_eq!(cohen_kappa(&[1, 0, 1, 0], &[0, 1, 0, 1]).unwrap(), -1.0);
        assert_eq!(cohen_kappa(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert!(cohen_kappa::<u8>(&[], &[]).is_err());
        assert!(cohen_kappa(&[1], &[1, 1]).is_err());
    }

    /// Brute-force reference: enumerate every (pred, gold) pair, keep
    /// fractions above one half, and pick the lexicographic best of
    /// (-fraction, gold id).
    fn brute_map(pred: &[EntityCluster], gold: &[EntityCluster]) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for p in pred {
            let mut cands: Vec<(f64, String)> = Vec::new();
            for g in gold {
                let mut inside = 0;
                for pm in &p.mentions {
                    let pt: BTreeSet<usize> = (pm.start..pm.end).collect();
                    let hit = g.mentions.iter().any(|gm| {
                        let gt: BTreeSet<usize> = (gm.start..gm.end).collect();
                        let i = pt.intersection(&gt).count() as f64;
                        let u = pt.union(&gt).count() as f64;
                        i / u > 0.5
                    });
                    if hit {
                        inside += 1;
                    }
                }
                let f = inside as f64 / p.mentions.len() as f64;
                if 2 * inside > p.mentions.len() {
                    cands.push((f, g.entity_id.clone()));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            if let Some((_, id)) = cands.first() {
                out.insert(p.entity_id.clone(), id.clone());
            }
        }
        out
    }

    fn arb_clusters(prefix: &'static str) -> impl Strategy<Value = Vec<EntityCluster>> {
        prop::collection::vec(prop::collection::vec((0usize..12, 1usize..4), 1..5), 0..5).prop_map(move |cs| {
            cs.into_iter()
                .enumerate()
                .map(|(i, spans)| {
                    let sp: Vec<(usize, usize)> = spans.into_iter().map(|(s, l)| (s, s + l)).collect();
                    cl(&format!("{prefix}{i}"), &sp)
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn mapping_matches_brute_force(pred in arb_clusters("p"), gold in arb_clusters("g")) {
            let got = map_clusters(&pred, &gold);
            let got: BTreeMap<String, String> = got.pairs.into_iter().map(|(k, v)| (k, v.gold_id)).collect();
            prop_assert_eq!(got, brute_map(&pred, &gold));
        }

        #[test]
        fn relation_identity_is_perfect(n in 1usize..6, seed in any::<u64>()) {
            let gold: Vec<RelationTuple> = (0..n)
                .map(|i| RelationTuple::new(format!("d{}", (seed as usize + i) % 3), format!("m{i}"), "k", format!("t{}", i % 2)))
                .collect();
            let ids: BTreeSet<String> = gold.iter().flat_map(|r| r.roles().map(|(_, e)| e.to_string())).collect();
            let mapping = ClusterMapping::identity(ids.iter().map(String::as_str));
            let pred4: Vec<RelationKey> = gold.iter().map(RelationTuple::key).collect();
            prop_assert_eq!(relation_f1(&gold, &pred4, &mapping, 4).f1, 1.0);
            let pred2: Vec<RelationKey> = binary_relations(&gold).into_iter().collect();
            prop_assert_eq!(relation_f1(&gold, &pred2, &mapping, 2).f1, 1.0);
        }

        #[test]
        fn adding_correct_predictions_is_monotone(gold in prop::collection::vec(any::<bool>(), 1..30), mask in prop::collection::vec(any::<bool>(), 30)) {
            let pred: Vec<bool> = gold.iter().zip(&mask).map(|(_, &m)| m).collect();
            let before = binary_f1(&gold, &pred).unwrap();
            // Flip one missed positive to a hit.
            let mut more = pred.clone();
            if let Some(i) = (0..gold.len()).find(|&i| gold[i] && !pred[i]) {
                more[i] = true;
                let after = binary_f1(&gold, &more).unwrap();
                prop_assert!(after.recall >= before.recall);
                prop_assert!(after.precision >= before.precision);
            }
            for v in [before.precision, before.recall, before.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
