use std::collections::BTreeSet;
use std::fmt;

use super::{Document, EntityType, Span};

/// A single broken document invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Top-level field the violation concerns.
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn push(out: &mut Vec<Violation>, field: &'static str, message: String) {
    out.push(Violation { field, message });
}

fn check_partition(out: &mut Vec<Violation>, field: &'static str, ranges: &[Span], n: usize) {
    let mut cursor = 0;
    for (i, r) in ranges.iter().enumerate() {
        if r.is_empty() {
            push(out, field, format!("empty span at index {i}: {r:?}"));
        }
        if r.start != cursor {
            push(
                out,
                field,
                format!("ranges do not tile the document: index {i} starts at {} but expected {cursor}", r.start),
            );
        }
        cursor = cursor.max(r.end);
    }
    if cursor != n {
        push(
            out,
            field,
            format!("ranges cover [0, {cursor}) but the document has {n} words"),
        );
    }
}

/// Checks every document invariant. Returns an empty list iff the document is
/// valid.
pub fn validate_document(doc: &Document) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = doc.words.len();

    check_partition(&mut out, "sentences", &doc.sentences, n);
    check_partition(&mut out, "sections", &doc.sections, n);

    let sentence_starts: BTreeSet<usize> = doc.sentences.iter().map(|s| s.start).collect();
    let sentence_ends: BTreeSet<usize> = doc.sentences.iter().map(|s| s.end).collect();
    for (i, s) in doc.sections.iter().enumerate() {
        if !sentence_starts.contains(&s.start) || !sentence_ends.contains(&s.end) {
            push(
                &mut out,
                "sections",
                format!("section {i} {s:?} is not aligned to sentence boundaries"),
            );
        }
    }

    for (i, m) in doc.mentions.iter().enumerate() {
        if m.start >= m.end {
            push(&mut out, "mentions", format!("empty span at mention {i} ({}, {})", m.start, m.end));
            continue;
        }
        if m.end > n {
            push(
                &mut out,
                "mentions",
                format!("mention {i} ({}, {}) out of bounds for {n} words", m.start, m.end),
            );
            continue;
        }
        let sec = doc.section_of(m.start);
        if sec.is_none() || sec != doc.section_of(m.end - 1) {
            push(
                &mut out,
                "mentions",
                format!("mention {i} ({}, {}) crosses a section boundary", m.start, m.end),
            );
        }
    }

    let mut order: Vec<usize> = (0..doc.mentions.len()).collect();
    order.sort_by_key(|&i| (doc.mentions[i].start, doc.mentions[i].end));
    for w in order.windows(2) {
        let (a, b) = (doc.mentions[w[0]], doc.mentions[w[1]]);
        if a.span().overlaps(&b.span()) {
            push(
                &mut out,
                "mentions",
                format!(
                    "overlapping mentions ({}, {}) and ({}, {})",
                    a.start, a.end, b.start, b.end
                ),
            );
        }
    }

    for (id, spans) in &doc.clusters {
        let mut kinds = BTreeSet::<EntityType>::new();
        for s in spans {
            match doc.mention_at(*s) {
                Some(m) => {
                    kinds.insert(m.kind);
                }
                None => push(
                    &mut out,
                    "clusters",
                    format!("cluster {id:?} span {s:?} matches no mention"),
                ),
            }
        }
        if kinds.len() > 1 {
            push(
                &mut out,
                "clusters",
                format!("cluster {id:?} mixes mention types {kinds:?}"),
            );
        }
    }

    for (i, r) in doc.relations.iter().enumerate() {
        for (role, id) in r.roles() {
            match doc.clusters.get(id) {
                None => push(
                    &mut out,
                    "relations",
                    format!("dangling entity reference {id:?} in relation {i} role {role}"),
                ),
                Some(spans) => {
                    if let Some(m) = spans.iter().find_map(|s| doc.mention_at(*s)) {
                        if m.kind != role {
                            push(
                                &mut out,
                                "relations",
                                format!(
                                    "relation {i} binds {id:?} of type {} to role {role}",
                                    m.kind
                                ),
                            );
                        }
                    }
                }
            }
        }
    }

    out
}
