use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{binary_relations, Document, RelationKey, Span};
use crate::error::{Error, Result};

/// Per-document averages and cross-boundary fractions for a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub words: f64,
    pub sections: f64,
    pub mentions: f64,
    pub salient_entities: f64,
    pub binary_relations: f64,
    pub nary_relations: f64,
    /// Fraction of binary relations with no sentence holding a mention of both
    /// entities.
    pub binary_cross_sentence: f64,
    pub binary_cross_section: f64,
    pub nary_cross_sentence: f64,
    pub nary_cross_section: f64,
}

/// Whether some range contains at least one mention of every entity.
fn co_located(doc: &Document, ranges: &[Span], entities: &[&str]) -> bool {
    let containing: Vec<BTreeSet<usize>> = entities
        .iter()
        .map(|id| {
            doc.clusters
                .get(*id)
                .map(|spans| {
                    spans
                        .iter()
                        .filter_map(|s| {
                            let a = super::find_range(ranges, s.start)?;
                            (ranges[a].end >= s.end).then_some(a)
                        })
                        .collect()
                })
                .unwrap_or_default()
        })
        .collect();
    let Some((first, rest)) = containing.split_first() else {
        return false;
    };
    first.iter().any(|r| rest.iter().all(|s| s.contains(r)))
}

pub fn corpus_stats(corpus: &[Document]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus has no documents".into()));
    }
    let n = corpus.len() as f64;
    let mut words = 0usize;
    let mut sections = 0usize;
    let mut mentions = 0usize;
    let mut salient = 0usize;
    let mut binary = 0usize;
    let mut nary = 0usize;
    let mut bin_sent = 0usize;
    let mut bin_sec = 0usize;
    let mut nary_sent = 0usize;
    let mut nary_sec = 0usize;

    for doc in corpus {
        words += doc.words.len();
        sections += doc.sections.len();
        mentions += doc.mentions.len();
        salient += doc.salient_entity_ids().len();
        let unique: BTreeSet<RelationKey> = doc.relations.iter().map(|r| r.key()).collect();
        nary += unique.len();
        for key in &unique {
            let ids: Vec<&str> = key.0.iter().map(|(_, e)| e.as_str()).collect();
            nary_sent += usize::from(!co_located(doc, &doc.sentences, &ids));
            nary_sec += usize::from(!co_located(doc, &doc.sections, &ids));
        }
        let bins = binary_relations(&doc.relations);
        binary += bins.len();
        for key in &bins {
            let ids: Vec<&str> = key.0.iter().map(|(_, e)| e.as_str()).collect();
            bin_sent += usize::from(!co_located(doc, &doc.sentences, &ids));
            bin_sec += usize::from(!co_located(doc, &doc.sections, &ids));
        }
    }

    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(CorpusStats {
        documents: corpus.len(),
        words: words as f64 / n,
        sections: sections as f64 / n,
        mentions: mentions as f64 / n,
        salient_entities: salient as f64 / n,
        binary_relations: binary as f64 / n,
        nary_relations: nary as f64 / n,
        binary_cross_sentence: frac(bin_sent, binary),
        binary_cross_section: frac(bin_sec, binary),
        nary_cross_sentence: frac(nary_sent, nary),
        nary_cross_section: frac(nary_sec, nary),
    })
}
