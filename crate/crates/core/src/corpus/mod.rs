//! Corpus data model: documents, mentions, entity clusters and 4-ary result
//! relations, plus ingestion, validation, statistics, splits and a synthetic
//! generator.

mod io;
mod split;
mod stats;
pub mod synth;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use io::{
    load_corpus, load_corpus_with, parse_document_line, read_kb, save_corpus, write_document_line,
    IngestOptions,
};
pub use split::{split_corpus, CorpusSplit, SplitFractions};
pub use stats::{corpus_stats, CorpusStats};
pub use synth::{generate_synthetic, SynthConfig};
pub use validate::{validate_document, Violation};

/// The four entity types. Declaration order fixes tag indices and one-hot
/// feature positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    Dataset,
    Method,
    Metric,
    Task,
}

impl EntityType {
    pub const ALL: [EntityType; 4] = [
        EntityType::Dataset,
        EntityType::Method,
        EntityType::Metric,
        EntityType::Task,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Dataset => "Dataset",
            EntityType::Method => "Method",
            EntityType::Metric => "Metric",
            EntityType::Task => "Task",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Dataset" | "Material" => Ok(EntityType::Dataset),
            "Method" => Ok(EntityType::Method),
            "Metric" => Ok(EntityType::Metric),
            "Task" => Ok(EntityType::Task),
            other => Err(Error::Other(format!("unknown entity type {other:?}"))),
        }
    }
}

/// Half-open token range `[start, end)`. Serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn contains_token(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Jaccard similarity of the two token-index sets.
    pub fn jaccard(&self, other: &Span) -> f64 {
        let inter = self.end.min(other.end).saturating_sub(self.start.max(other.start));
        let union = self.len() + other.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

/// A typed token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub kind: EntityType,
    #[serde(default)]
    pub salient: bool,
}

impl Mention {
    pub fn new(start: usize, end: usize, kind: EntityType) -> Self {
        Mention {
            start,
            end,
            kind,
            salient: false,
        }
    }

    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }

    /// Surface string: the mention's words joined by single spaces.
    pub fn surface(&self, words: &[String]) -> String {
        words[self.start..self.end].join(" ")
    }
}

/// Role map of one (Dataset, Method, Metric, Task) result relation. Each role
/// holds an entity id from the document's cluster map.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationTuple {
    #[serde(rename = "Dataset")]
    pub dataset: String,
    #[serde(rename = "Method")]
    pub method: String,
    #[serde(rename = "Metric")]
    pub metric: String,
    #[serde(rename = "Task")]
    pub task: String,
}

impl RelationTuple {
    pub fn new(
        dataset: impl Into<String>,
        method: impl Into<String>,
        metric: impl Into<String>,
        task: impl Into<String>,
    ) -> Self {
        RelationTuple {
            dataset: dataset.into(),
            method: method.into(),
            metric: metric.into(),
            task: task.into(),
        }
    }

    pub fn role(&self, role: EntityType) -> &str {
        match role {
            EntityType::Dataset => &self.dataset,
            EntityType::Method => &self.method,
            EntityType::Metric => &self.metric,
            EntityType::Task => &self.task,
        }
    }

    /// `(role, entity_id)` pairs in role order.
    pub fn roles(&self) -> [(EntityType, &str); 4] {
        EntityType::ALL.map(|r| (r, self.role(r)))
    }

    pub fn from_slots(slots: &[String; 4]) -> Self {
        RelationTuple::new(
            slots[0].clone(),
            slots[1].clone(),
            slots[2].clone(),
            slots[3].clone(),
        )
    }

    pub fn key(&self) -> RelationKey {
        RelationKey(
            self.roles()
                .iter()
                .map(|(r, e)| (*r, e.to_string()))
                .collect(),
        )
    }
}

/// Canonical role-sorted tuple of `(role, entity_id)` slots. Used for both
/// 4-ary relations and their binary projections.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationKey(pub Vec<(EntityType, String)>);

impl RelationKey {
    pub fn new(mut slots: Vec<(EntityType, String)>) -> Self {
        slots.sort();
        RelationKey(slots)
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }
}

/// All six unordered role pairs of a 4-ary relation.
pub fn split_to_binary(relation: &RelationTuple) -> Vec<RelationKey> {
    let roles = relation.roles();
    let mut out = Vec::with_capacity(6);
    for i in 0..4 {
        for j in i + 1..4 {
            out.push(RelationKey::new(vec![
                (roles[i].0, roles[i].1.to_string()),
                (roles[j].0, roles[j].1.to_string()),
            ]));
        }
    }
    out
}

/// Deduplicated binary projections of a set of 4-ary relations.
pub fn binary_relations(relations: &[RelationTuple]) -> BTreeSet<RelationKey> {
    relations.iter().flat_map(split_to_binary).collect()
}

/// A tokenized article with structure and annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub words: Vec<String>,
    pub sentences: Vec<Span>,
    pub sections: Vec<Span>,
    #[serde(default)]
    pub mentions: Vec<Mention>,
    #[serde(default)]
    pub clusters: BTreeMap<String, Vec<Span>>,
    #[serde(default)]
    pub relations: Vec<RelationTuple>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Index of the section containing token `i`.
    pub fn section_of(&self, i: usize) -> Option<usize> {
        find_range(&self.sections, i)
    }

    /// Index of the sentence containing token `i`.
    pub fn sentence_of(&self, i: usize) -> Option<usize> {
        find_range(&self.sentences, i)
    }

    pub fn mention_at(&self, span: Span) -> Option<&Mention> {
        self.mentions.iter().find(|m| m.span() == span)
    }

    /// Entity ids bound to at least one relation role.
    pub fn salient_entity_ids(&self) -> BTreeSet<&str> {
        self.relations
            .iter()
            .flat_map(|r| EntityType::ALL.map(|t| r.role(t)))
            .collect()
    }

    /// Materialized clusters, in entity-id order. The cluster type is the
    /// type of its first resolvable mention; clusters with no resolvable
    /// mention are skipped.
    pub fn entity_clusters(&self) -> Vec<EntityCluster> {
        self.clusters
            .iter()
            .filter_map(|(id, spans)| {
                let mentions: Vec<Mention> = spans
                    .iter()
                    .filter_map(|s| self.mention_at(*s).copied())
                    .collect();
                let kind = mentions.first()?.kind;
                Some(EntityCluster {
                    entity_id: id.clone(),
                    kind,
                    mentions,
                })
            })
            .collect()
    }

    /// Clusters whose entity id takes part in a relation.
    pub fn gold_salient_clusters(&self) -> Vec<EntityCluster> {
        let salient = self.salient_entity_ids();
        self.entity_clusters()
            .into_iter()
            .filter(|c| salient.contains(c.entity_id.as_str()))
            .collect()
    }
}

fn find_range(ranges: &[Span], i: usize) -> Option<usize> {
    let idx = ranges.partition_point(|r| r.end <= i);
    ranges.get(idx).filter(|r| r.contains_token(i)).map(|_| idx)
}

/// A same-type set of mentions representing one entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCluster {
    pub entity_id: String,
    #[serde(rename = "type")]
    pub kind: EntityType,
    pub mentions: Vec<Mention>,
}

impl EntityCluster {
    pub fn spans(&self) -> Vec<Span> {
        self.mentions.iter().map(Mention::span).collect()
    }
}

/// One knowledge-base result record. The score is carried through but never
/// predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbRecord {
    pub dataset: String,
    pub metric: String,
    pub method: String,
    pub task: String,
    #[serde(default)]
    pub score: String,
}

impl KbRecord {
    pub fn entity(&self, role: EntityType) -> &str {
        match role {
            EntityType::Dataset => &self.dataset,
            EntityType::Method => &self.method,
            EntityType::Metric => &self.metric,
            EntityType::Task => &self.task,
        }
    }
}

/// Sets every mention's salient flag from relation membership of its cluster.
pub fn derive_salience(doc: &Document) -> Document {
    let salient_ids = doc.salient_entity_ids();
    let salient_spans: BTreeSet<Span> = doc
        .clusters
        .iter()
        .filter(|(id, _)| salient_ids.contains(id.as_str()))
        .flat_map(|(_, spans)| spans.iter().copied())
        .collect();
    let mut out = doc.clone();
    for m in &mut out.mentions {
        m.salient = salient_spans.contains(&m.span());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_doc() -> Document {
        let words: Vec<String> = "we train BiDAF on SQuAD and report EM for QA ."
            .split(' ')
            .map(String::from)
            .collect();
        let n = words.len();
        Document {
            doc_id: "tiny".into(),
            words,
            sentences: vec![Span::new(0, n)],
            sections: vec![Span::new(0, n)],
            mentions: vec![
                Mention::new(2, 3, EntityType::Method),
                Mention::new(4, 5, EntityType::Dataset),
                Mention::new(7, 8, EntityType::Metric),
                Mention::new(9, 10, EntityType::Task),
            ],
            clusters: BTreeMap::from([
                ("bidaf".to_string(), vec![Span::new(2, 3)]),
                ("squad".to_string(), vec![Span::new(4, 5)]),
                ("em".to_string(), vec![Span::new(7, 8)]),
                ("qa".to_string(), vec![Span::new(9, 10)]),
            ]),
            relations: vec![],
        }
    }

    #[test]
    fn salience_empty_relations() {
        let d = derive_salience(&tiny_doc());
        assert!(d.mentions.iter().all(|m| !m.salient));
    }

    #[test]
    fn salience_follows_relation_membership() {
        let mut doc = tiny_doc();
        doc.clusters.insert("other".into(), vec![]);
        doc.relations
            .push(RelationTuple::new("squad", "bidaf", "em", "qa"));
        let d = derive_salience(&doc);
        assert!(d.mentions.iter().all(|m| m.salient));

        // Two clusters, only one in a relation.
        let mut doc = tiny_doc();
        doc.clusters.retain(|k, _| k == "squad" || k == "bidaf");
        doc.mentions.truncate(2);
        doc.clusters.insert("x".into(), vec![]);
        doc.relations.push(RelationTuple::new("squad", "x", "x", "x"));
        let d = derive_salience(&doc);
        let flags: Vec<bool> = d.mentions.iter().map(|m| m.salient).collect();
        assert_eq!(flags, vec![false, true]);
        assert_eq!(derive_salience(&d), d);
    }

    #[test]
    fn span_jaccard_token_sets() {
        assert!((Span::new(10, 12).jaccard(&Span::new(10, 13)) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(Span::new(0, 2).jaccard(&Span::new(2, 4)), 0.0);
    }

    #[test]
    fn split_gives_six_pairs() {
        let r = RelationTuple::new("d", "m", "x", "t");
        let pairs = split_to_binary(&r);
        assert_eq!(pairs.len(), 6);
        let uniq: BTreeSet<_> = pairs.into_iter().collect();
        assert_eq!(uniq.len(), 6);
    }

    #[test]
    fn shared_binding_deduplicated() {
        let a = RelationTuple::new("d", "m1", "x1", "t");
        let b = RelationTuple::new("d", "m2", "x2", "t");
        let bin = binary_relations(&[a, b]);
        // (d,t) shared, each tuple contributes 5 more.
        assert_eq!(bin.len(), 11);
        let dt = RelationKey::new(vec![
            (EntityType::Dataset, "d".into()),
            (EntityType::Task, "t".into()),
        ]);
        assert!(bin.contains(&dt));
    }

    #[test]
    fn section_lookup() {
        let mut d = tiny_doc();
        d.sections = vec![Span::new(0, 5), Span::new(5, 11)];
        assert_eq!(d.section_of(0), Some(0));
        assert_eq!(d.section_of(5), Some(1));
        assert_eq!(d.section_of(11), None);
    }
}
