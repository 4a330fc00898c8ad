//! Distant-supervision alignment of mentions to knowledge-base entity names:
//! token Jaccard linking, threshold selection on hand-linked data, and
//! mention correction statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::coref::word_tokens;
use crate::corpus::{EntityType, Mention, Span};
use crate::error::{Error, Result};

/// Lowercase word-token set Jaccard. Tokens split on non-alphanumerics.
pub fn name_jaccard(mention_surface: &str, entity_name: &str) -> f64 {
    let a: BTreeSet<String> = word_tokens(mention_surface).into_iter().collect();
    let b: BTreeSet<String> = word_tokens(entity_name).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Config(format!("link threshold {eps} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDecision {
    pub mention: String,
    pub entity: Option<String>,
    /// Similarity to the best entity, linked or not.
    pub similarity: f64,
}

/// Links each mention to its most similar entity (first in KB order on
/// ties) when the similarity exceeds `eps`. An exact token-set match
/// (similarity 1) always links, so `eps = 1` admits exactly those.
pub fn link_mentions<M: AsRef<str>, E: AsRef<str>>(mentions: &[M], entities: &[E], eps: f64) -> Result<Vec<LinkDecision>> {
    check_epsilon(eps)?;
    Ok(mentions
        .iter()
        .map(|m| {
            let mut best: Option<(usize, f64)> = None;
            for (i, e) in entities.iter().enumerate() {
                let s = name_jaccard(m.as_ref(), e.as_ref());
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
            let similarity = best.map_or(0.0, |(_, s)| s);
            let linked = best.filter(|&(_, s)| s > eps || s == 1.0);
            LinkDecision {
                mention: m.as_ref().to_string(),
                entity: linked.map(|(i, _)| entities[i].as_ref().to_string()),
                similarity,
            }
        })
        .collect())
}

/// A hand-linked document: its KB entity names and, per mention, the
/// entity it should link to (or none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub entities: Vec<String>,
    pub mentions: Vec<(String, Option<String>)>,
}

/// Fraction of labeled mentions whose decision at `eps` equals the hand
/// link, abstentions included.
pub fn link_accuracy(labeled: &[LabeledDoc], eps: f64) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for doc in labeled {
        let surfaces: Vec<&str> = doc.mentions.iter().map(|(s, _)| s.as_str()).collect();
        let decisions = link_mentions(&surfaces, &doc.entities, eps)?;
        for (d, (_, gold)) in decisions.iter().zip(&doc.mentions) {
            total += 1;
            if d.entity == *gold {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("no labeled mentions for threshold selection".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Grid value with the highest link accuracy; ties go to the larger value.
pub fn select_epsilon(labeled: &[LabeledDoc], grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Empty("empty threshold grid".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for &eps in grid {
        let acc = link_accuracy(labeled, eps)?;
        let better = match best {
            None => true,
            Some((be, ba)) => acc > ba || (acc == ba && eps > be),
        };
        if better {
            best = Some((eps, acc));
        }
    }
    Ok(best.map(|(e, _)| e).expect("non-empty grid"))
}

/// Mention correction confusion table. Rows are automatic types plus
/// `Added`; columns are corrected types plus `Deleted`. Cells are
/// document-averaged percentages: rows of automatic types over the
/// document's automatic spans, the `Added` row over its final spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionStats {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<f64>>,
    pub diagonal_sum: f64,
    pub type_change_sum: f64,
    pub deleted_sum: f64,
    pub added_sum: f64,
    pub documents: usize,
}

/// Compares automatic and corrected mentions per document by exact span.
pub fn correction_stats(auto: &[Vec<Mention>], corrected: &[Vec<Mention>]) -> Result<CorrectionStats> {
    if auto.len() != corrected.len() {
        return Err(Error::LengthMismatch {
            left: auto.len(),
            right: corrected.len(),
        });
    }
    const ADDED: usize = 4;
    const DELETED: usize = 4;
    let mut sums = vec![vec![0.0; 5]; 5];
    let mut auto_docs = 0usize;
    let mut final_docs = 0usize;
    for (a, c) in auto.iter().zip(corrected) {
        let cmap: BTreeMap<Span, EntityType> = c.iter().map(|m| (m.span(), m.kind)).collect();
        let amap: BTreeMap<Span, EntityType> = a.iter().map(|m| (m.span(), m.kind)).collect();
        let mut counts = vec![vec![0usize; 5]; 5];
        for (span, &t) in &amap {
            let col = cmap.get(span).map_or(DELETED, |u| u.index());
            counts[t.index()][col] += 1;
        }
        for (span, &u) in &cmap {
            if !amap.contains_key(span) {
                counts[ADDED][u.index()] += 1;
            }
        }
        if !amap.is_empty() {
            auto_docs += 1;
            for r in 0..4 {
                for col in 0..5 {
                    sums[r][col] += 100.0 * counts[r][col] as f64 / amap.len() as f64;
                }
            }
        }
        if !cmap.is_empty() {
            final_docs += 1;
            for col in 0..4 {
                sums[ADDED][col] += 100.0 * counts[ADDED][col] as f64 / cmap.len() as f64;
            }
        }
    }
    let mut cells = sums;
    for (r, row) in cells.iter_mut().enumerate() {
        let d = if r == ADDED { final_docs } else { auto_docs };
        if d > 0 {
            row.iter_mut().for_each(|v| *v /= d as f64);
        }
    }
    let diagonal_sum = (0..4).map(|i| cells[i][i]).sum();
    let type_change_sum = (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).filter(|(r, c)| r != c).map(|(r, c)| cells[r][c]).sum();
    let deleted_sum = (0..4).map(|r| cells[r][DELETED]).sum();
    let added_sum = (0..4).map(|c| cells[ADDED][c]).sum();
    let names: Vec<String> = EntityType::ALL.iter().map(|t| t.to_string()).collect();
    Ok(CorrectionStats {
        rows: names.iter().cloned().chain(["Added".to_string()]).collect(),
        columns: names.into_iter().chain(["Deleted".to_string()]).collect(),
        cells,
        diagonal_sum,
        type_change_sum,
        deleted_sum,
        added_sum,
        documents: auto.len(),
    })
}
