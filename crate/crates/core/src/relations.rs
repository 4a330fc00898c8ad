//! Candidate relation enumeration and the section-pooled relation
//! classifier.
//!
//! A cluster's embedding in a section is the coordinatewise max over its
//! mentions there, or the learned absence vector `b` when it has none. A
//! candidate's section embedding is an FFN over the role-ordered
//! concatenation of its slot embeddings; the document embedding is the mean
//! over sections, scored by a second FFN.
//!
//! The first section layer is stored as one weight block per role, so
//! `[E_1; ..; E_4] W` is computed as `sum_r E_r W_r` and each cluster's
//! projection is shared by every candidate it appears in.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{binary_relations, Document, EntityCluster, EntityType, RelationKey, Span};
use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, sigmoid, uniform, Ffn, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};

pub use crate::corpus::split_to_binary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SectionPooling {
    /// Mean over every section of the document.
    #[default]
    AllSections,
    /// Mean over sections holding a mention of at least one slot cluster.
    WithMentions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationConfig {
    pub section_hidden: Vec<usize>,
    pub doc_hidden: Vec<usize>,
    pub dropout: f64,
    pub threshold: f64,
    pub pooling: SectionPooling,
}

impl Default for RelationConfig {
    fn default() -> Self {
        RelationConfig {
            section_hidden: vec![128, 128],
            doc_hidden: vec![128, 128],
            dropout: 0.2,
            threshold: 0.5,
            pooling: SectionPooling::AllSections,
        }
    }
}

/// Role-ordered cluster indices into the cluster list the candidate was
/// enumerated from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub slots: Vec<usize>,
}

impl Candidate {
    /// Canonical relation key given the clusters' entity ids.
    pub fn key(&self, clusters: &[EntityCluster]) -> RelationKey {
        RelationKey::new(
            self.slots
                .iter()
                .map(|&i| (clusters[i].kind, clusters[i].entity_id.clone()))
                .collect(),
        )
    }
}

/// Arity 4: one cluster per role, Cartesian product in role order. Arity 2:
/// every pair of clusters with distinct types, slots ordered by role.
pub fn enumerate_candidates(salient: &[EntityCluster], arity: usize) -> Result<Vec<Candidate>> {
    match arity {
        4 => {
            let by_role: Vec<Vec<usize>> = EntityType::ALL
                .iter()
                .map(|t| (0..salient.len()).filter(|&i| salient[i].kind == *t).collect())
                .collect();
            let mut out = vec![Vec::new()];
            for role in &by_role {
                out = out
                    .into_iter()
                    .flat_map(|prefix: Vec<usize>| {
                        role.iter().map(move |&c| {
                            let mut p = prefix.clone();
                            p.push(c);
                            p
                        })
                    })
                    .collect();
            }
            Ok(out.into_iter().map(|slots| Candidate { slots }).collect())
        }
        2 => {
            let mut out = Vec::new();
            for i in 0..salient.len() {
                for j in i + 1..salient.len() {
                    let (a, b) = (&salient[i], &salient[j]);
                    if a.kind == b.kind {
                        continue;
                    }
                    let slots = if a.kind < b.kind { vec![i, j] } else { vec![j, i] };
                    out.push(Candidate { slots });
                }
            }
            Ok(out)
        }
        other => Err(Error::Config(format!("relation arity must be 2 or 4, got {other}"))),
    }
}

/// Coordinatewise max over the rows of `span_embeddings` belonging to
/// `cluster` mentions inside `section`, or `absence` if there are none.
pub fn cluster_section_embedding(
    cluster: &EntityCluster,
    section: Span,
    span_embeddings: &BTreeMap<Span, Vec<f64>>,
    absence: &[f64],
) -> Vec<f64> {
    let mut out: Option<Vec<f64>> = None;
    for m in &cluster.mentions {
        if !section.contains(&m.span()) {
            continue;
        }
        let Some(e) = span_embeddings.get(&m.span()) else { continue };
        match &mut out {
            None => out = Some(e.clone()),
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(e) {
                    if *v > *a {
                        *a = *v;
                    }
                }
            }
        }
    }
    out.unwrap_or_else(|| absence.to_vec())
}

/// Scoring head for one arity.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationHead {
    pub arity: usize,
    pub span_dim: usize,
    pub threshold: f64,
    pooling: SectionPooling,
    dropout: f64,
    absence: ParamId,
    /// First section layer, one `d x h` block per role.
    role_blocks: [ParamId; 4],
    first_bias: ParamId,
    section_rest: Ffn,
    doc: Ffn,
}

/// Inputs shared by every candidate of a document.
pub struct RelationInputs<'a> {
    pub doc: &'a Document,
    /// Span embeddings, one row per mention.
    pub spans: Var,
    /// Row of each mention span in `spans`.
    pub rows: &'a BTreeMap<Span, usize>,
    pub clusters: &'a [EntityCluster],
}

impl RelationHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        arity: usize,
        span_dim: usize,
        config: &RelationConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if arity != 2 && arity != 4 {
            return Err(Error::Config(format!("relation arity must be 2 or 4, got {arity}")));
        }
        let Some((&h1, rest)) = config.section_hidden.split_first() else {
            return Err(Error::Config("relation section FFN needs at least one hidden layer".into()));
        };
        // Xavier bound of the unsplit first layer.
        let a = (6.0 / (arity * span_dim + h1) as f64).sqrt();
        let role_blocks = std::array::from_fn(|r| {
            store.add(
                format!("{name}.section.h0.w.{}", EntityType::ALL[r]),
                uniform(span_dim, h1, a, rng),
                ParamGroup::Default,
            )
        });
        let first_bias = store.add(format!("{name}.section.h0.b"), Tensor::zeros(1, h1), ParamGroup::Default);
        let absence = store.add(format!("{name}.absence"), uniform(1, span_dim, 0.1, rng), ParamGroup::Default);
        let section_rest = Ffn::new(store, &format!("{name}.section.rest"), h1, rest, None, config.dropout, rng);
        let last = rest.last().copied().unwrap_or(h1);
        let doc = Ffn::new(store, &format!("{name}.doc"), last, &config.doc_hidden, Some(1), config.dropout, rng);
        Ok(RelationHead {
            arity,
            span_dim,
            threshold: config.threshold,
            pooling: config.pooling,
            dropout: config.dropout,
            absence,
            role_blocks,
            first_bias,
            section_rest,
            doc,
        })
    }

    pub fn absence_param(&self) -> ParamId {
        self.absence
    }

    /// `S x d` per-section embeddings of one cluster.
    pub fn cluster_sections(&self, g: &mut Graph, inp: &RelationInputs, cluster: &EntityCluster) -> Var {
        let mut rows = Vec::with_capacity(inp.doc.sections.len());
        for s in &inp.doc.sections {
            let idx: Vec<usize> = cluster
                .mentions
                .iter()
                .filter(|m| s.contains(&m.span()))
                .filter_map(|m| inp.rows.get(&m.span()).copied())
                .collect();
            let v = if idx.is_empty() {
                g.param(self.absence)
            } else {
                let sel = g.gather(inp.spans, &idx);
                g.max_rows(sel)
            };
            rows.push(v);
        }
        g.concat_rows(&rows)
    }

    fn pooled_sections(&self, inp: &RelationInputs, cand: &Candidate) -> Option<Vec<usize>> {
        match self.pooling {
            SectionPooling::AllSections => None,
            SectionPooling::WithMentions => {
                let rows: Vec<usize> = inp
                    .doc
                    .sections
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| {
                        cand.slots
                            .iter()
                            .any(|&c| inp.clusters[c].mentions.iter().any(|m| s.contains(&m.span())))
                    })
                    .map(|(i, _)| i)
                    .collect();
                (!rows.is_empty()).then_some(rows)
            }
        }
    }

    /// Logits `C x 1` for the candidates; `None` if there are none.
    pub fn logits(&self, g: &mut Graph, inp: &RelationInputs, candidates: &[Candidate]) -> Result<Option<Var>> {
        if candidates.is_empty() {
            return Ok(None);
        }
        if inp.doc.sections.is_empty() {
            return Err(Error::Empty(format!("document {} has no sections", inp.doc.doc_id)));
        }
        for c in candidates {
            if c.slots.len() != self.arity {
                return Err(Error::Config(format!(
                    "candidate with {} slots given to the {}-ary head",
                    c.slots.len(),
                    self.arity
                )));
            }
        }
        let used: BTreeSet<usize> = candidates.iter().flat_map(|c| c.slots.iter().copied()).collect();
        let mut projected: HashMap<usize, Var> = HashMap::new();
        for &ci in &used {
            let cluster = &inp.clusters[ci];
            let sec = self.cluster_sections(g, inp, cluster);
            let w = g.param(self.role_blocks[cluster.kind.index()]);
            projected.insert(ci, g.matmul(sec, w));
        }
        let bias = g.param(self.first_bias);
        let mut doc_rows = Vec::with_capacity(candidates.len());
        for cand in candidates {
            let mut acc = projected[&cand.slots[0]];
            for &s in &cand.slots[1..] {
                acc = g.add(acc, projected[&s]);
            }
            let z = g.add_row(acc, bias);
            let h = g.gelu(z);
            let h = g.dropout(h, self.dropout);
            let h = self.section_rest.forward(g, h);
            let h = match self.pooled_sections(inp, cand) {
                Some(rows) => g.gather(h, &rows),
                None => h,
            };
            doc_rows.push(g.mean_rows(h));
        }
        let er = g.concat_rows(&doc_rows);
        Ok(Some(self.doc.forward(g, er)))
    }

    pub fn probabilities(&self, g: &mut Graph, inp: &RelationInputs, candidates: &[Candidate]) -> Result<Vec<f64>> {
        Ok(match self.logits(g, inp, candidates)? {
            Some(z) => g.value(z).data.iter().map(|&v| sigmoid(v)).collect(),
            None => Vec::new(),
        })
    }

    /// Summed binary cross-entropy; `None` if there are no candidates.
    pub fn loss(
        &self,
        g: &mut Graph,
        inp: &RelationInputs,
        candidates: &[Candidate],
        labels: &[bool],
    ) -> Result<Option<Var>> {
        let y: Vec<f64> = labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(self.logits(g, inp, candidates)?.map(|z| bce_with_logits(g, z, &y)))
    }
}

/// Gold keys of the given arity.
pub fn gold_keys(doc: &Document, arity: usize) -> BTreeSet<RelationKey> {
    if arity == 4 {
        doc.relations.iter().map(|r| r.key()).collect()
    } else {
        binary_relations(&doc.relations)
    }
}

/// Teacher-forced training candidates over gold salient clusters: every
/// positive plus negatives sampled at `negative_ratio` per positive (at
/// least one positive's worth when a document has none).
pub fn training_candidates(
    doc: &Document,
    clusters: &[EntityCluster],
    arity: usize,
    negative_ratio: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<Candidate>, Vec<bool>)> {
    let gold = gold_keys(doc, arity);
    let all = enumerate_candidates(clusters, arity)?;
    let (pos, neg): (Vec<Candidate>, Vec<Candidate>) = all.into_iter().partition(|c| gold.contains(&c.key(clusters)));
    let want = ((pos.len().max(1) as f64) * negative_ratio).round() as usize;
    let neg: Vec<Candidate> = if want >= neg.len() {
        neg
    } else {
        let mut idx = sample(rng, neg.len(), want).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| neg[i].clone()).collect()
    };
    let labels = std::iter::repeat_n(true, pos.len())
        .chain(std::iter::repeat_n(false, neg.len()))
        .collect();
    Ok((pos.into_iter().chain(neg).collect(), labels))
}
