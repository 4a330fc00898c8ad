//! JSON-lines reading and writing.
//!
//! Two line schemas are accepted. The native schema serializes [`Document`]
//! directly. The public release schema (`ner`, `coref`, `n_ary_relations`,
//! with `Material` for datasets) is detected by the presence of `ner` and
//! mapped onto the native model.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{derive_salience, validate_document, Document, EntityType, KbRecord, Mention, RelationTuple, Span};
use crate::error::{Error, Result};

/// Ingest-time repairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    /// Resolve overlapping mentions by keeping the longer span instead of
    /// rejecting the document.
    pub drop_overlaps: bool,
    /// Snap section boundaries outward to sentence edges.
    pub snap_sections: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            drop_overlaps: false,
            snap_sections: true,
        }
    }
}

#[derive(Deserialize)]
struct ReleaseDoc {
    doc_id: String,
    words: Vec<String>,
    sentences: Vec<[usize; 2]>,
    sections: Vec<[usize; 2]>,
    #[serde(default)]
    ner: Vec<(usize, usize, String)>,
    #[serde(default)]
    coref: BTreeMap<String, Vec<[usize; 2]>>,
    #[serde(default)]
    n_ary_relations: Vec<BTreeMap<String, Value>>,
}

/// Parses and normalizes one JSON line. `line_no` is 1-based and only used in
/// error messages.
pub fn parse_document_line(line: &str, line_no: usize, opts: IngestOptions) -> Result<Document> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let is_release = value.get("ner").is_some();
    let doc = if is_release {
        let raw: ReleaseDoc = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        from_release(raw)?
    } else {
        serde_json::from_value::<Document>(value).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?
    };
    let doc = normalize(doc, opts, is_release)?;
    let doc = if is_release { derive_salience(&doc) } else { doc };
    if let Some(v) = validate_document(&doc).into_iter().next() {
        return Err(Error::Validation {
            doc_id: doc.doc_id.clone(),
            field: v.field.to_string(),
            message: v.message,
        });
    }
    Ok(doc)
}

fn from_release(raw: ReleaseDoc) -> Result<Document> {
    let mut mentions = Vec::with_capacity(raw.ner.len());
    for (start, end, label) in raw.ner {
        let kind: EntityType = label.parse().map_err(|_| Error::Validation {
            doc_id: raw.doc_id.clone(),
            field: "ner".into(),
            message: format!("unknown mention type {label:?}"),
        })?;
        mentions.push(Mention::new(start, end, kind));
    }
    let mut clusters: BTreeMap<String, Vec<Span>> = raw
        .coref
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().map(Span::from).collect()))
        .collect();
    let mut relations = BTreeSet::new();
    for rel in raw.n_ary_relations {
        let get = |key: &str| -> Result<String> {
            match rel.get(key) {
                Some(Value::String(s)) => Ok(s.clone()),
                _ => Err(Error::Validation {
                    doc_id: raw.doc_id.clone(),
                    field: "n_ary_relations".into(),
                    message: format!("missing role {key}"),
                }),
            }
        };
        relations.insert(RelationTuple::new(get("Material")?, get("Method")?, get("Metric")?, get("Task")?));
    }
    let relations: Vec<RelationTuple> = relations.into_iter().collect();
    for r in &relations {
        for (_, id) in r.roles() {
            clusters.entry(id.to_string()).or_default();
        }
    }
    Ok(Document {
        doc_id: raw.doc_id,
        words: raw.words,
        sentences: raw.sentences.into_iter().map(Span::from).collect(),
        sections: raw.sections.into_iter().map(Span::from).collect(),
        mentions,
        clusters,
        relations,
    })
}

/// Rebuilds a tiling from range starts.
fn retile(ranges: &[Span], n: usize) -> Vec<Span> {
    let mut starts: BTreeSet<usize> = ranges.iter().map(|r| r.start).filter(|&s| s < n).collect();
    starts.insert(0);
    let starts: Vec<usize> = starts.into_iter().collect();
    starts
        .iter()
        .enumerate()
        .map(|(i, &s)| Span::new(s, starts.get(i + 1).copied().unwrap_or(n)))
        .filter(|s| !s.is_empty())
        .collect()
}

fn normalize(mut doc: Document, opts: IngestOptions, repair_release: bool) -> Result<Document> {
    let n = doc.words.len();
    if repair_release {
        doc.sentences = retile(&doc.sentences, n);
    }

    if opts.snap_sections && !doc.sentences.is_empty() {
        let sent_starts: Vec<usize> = doc.sentences.iter().map(|s| s.start).collect();
        let sent_ends: Vec<usize> = doc.sentences.iter().map(|s| s.end).collect();
        let mut snapped: Vec<Span> = doc
            .sections
            .iter()
            .map(|s| {
                let start = sent_starts
                    .iter()
                    .rev()
                    .find(|&&b| b <= s.start)
                    .copied()
                    .unwrap_or(0);
                let end = sent_ends.iter().find(|&&b| b >= s.end).copied().unwrap_or(n);
                Span::new(start, end)
            })
            .filter(|s| !s.is_empty())
            .collect();
        snapped.sort();
        // Mentions that straddle two sections force a merge.
        let mut merged: Vec<Span> = Vec::with_capacity(snapped.len());
        for s in snapped {
            if let Some(last) = merged.last_mut() {
                let straddles = doc
                    .mentions
                    .iter()
                    .any(|m| m.start < s.start && m.end > s.start && m.start >= last.start);
                if s.start < last.end || straddles {
                    last.end = last.end.max(s.end);
                    continue;
                }
                if s.start > last.end {
                    last.end = s.start;
                }
            }
            merged.push(s);
        }
        if let Some(first) = merged.first_mut() {
            first.start = 0;
        }
        if let Some(last) = merged.last_mut() {
            last.end = n;
        }
        if merged.is_empty() && n > 0 {
            merged.push(Span::new(0, n));
        }
        doc.sections = merged;
    }

    if opts.drop_overlaps {
        let mut order: Vec<usize> = (0..doc.mentions.len()).collect();
        order.sort_by_key(|&i| {
            let m = doc.mentions[i];
            (std::cmp::Reverse(m.end - m.start.min(m.end)), m.start)
        });
        let mut kept: Vec<Mention> = Vec::new();
        for i in order {
            let m = doc.mentions[i];
            if !kept.iter().any(|k| k.span().overlaps(&m.span())) {
                kept.push(m);
            }
        }
        kept.sort_by_key(|m| (m.start, m.end));
        let live: BTreeSet<Span> = kept.iter().map(Mention::span).collect();
        for spans in doc.clusters.values_mut() {
            spans.retain(|s| live.contains(s));
        }
        doc.mentions = kept;
    }

    if repair_release {
        // Cluster spans must be typed mentions of a single type: the role type
        // for relation entities, otherwise the majority type.
        let mut role_types: BTreeMap<String, EntityType> = BTreeMap::new();
        for r in &doc.relations {
            for (role, id) in r.roles() {
                role_types.insert(id.to_string(), role);
            }
        }
        let kinds: BTreeMap<Span, EntityType> = doc.mentions.iter().map(|m| (m.span(), m.kind)).collect();
        for (id, spans) in doc.clusters.iter_mut() {
            spans.retain(|s| kinds.contains_key(s));
            spans.sort();
            spans.dedup();
            let target = role_types.get(id).copied().or_else(|| {
                let mut counts = [0usize; 4];
                for s in spans.iter() {
                    counts[kinds[s].index()] += 1;
                }
                let best = (0..4).max_by_key(|&i| (counts[i], std::cmp::Reverse(i)))?;
                EntityType::from_index(best)
            });
            if let Some(t) = target {
                spans.retain(|s| kinds[s] == t);
            }
        }
    }

    doc.mentions.sort_by_key(|m| (m.start, m.end));
    Ok(doc)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Loads a JSON-lines corpus with default ingest options.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    load_corpus_with(path, IngestOptions::default())
}

pub fn load_corpus_with(path: impl AsRef<Path>, opts: IngestOptions) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(parse_document_line(&line, i + 1, opts)?);
    }
    Ok(docs)
}

pub fn write_document_line(doc: &Document) -> String {
    serde_json::to_string(doc).expect("documents always serialize")
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        writeln!(w, "{}", write_document_line(d)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines file of knowledge-base result records.
pub fn read_kb(path: impl AsRef<Path>) -> Result<Vec<KbRecord>> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: KbRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        for role in EntityType::ALL {
            if rec.entity(role).trim().is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("empty {role} name"),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::tiny_doc;

    #[test]
    fn native_round_trip() {
        let d = tiny_doc();
        let line = write_document_line(&d);
        let back = parse_document_line(&line, 1, IngestOptions::default()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = parse_document_line("{not json", 7, IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 7, .. }), "{err}");
    }

    #[test]
    fn empty_span_rejected_with_doc_id() {
        let mut d = tiny_doc();
        d.mentions.push(Mention::new(5, 5, EntityType::Task));
        let err = parse_document_line(&write_document_line(&d), 1, IngestOptions::default()).unwrap_err();
        match err {
            Error::Validation { doc_id, field, message } => {
                assert_eq!(doc_id, "tiny");
                assert_eq!(field, "mentions");
                assert!(message.contains("empty span"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn overlaps_rejected_or_dropped() {
        let mut d = tiny_doc();
        d.mentions.push(Mention::new(1, 3, EntityType::Method));
        let line = write_document_line(&d);
        assert!(parse_document_line(&line, 1, IngestOptions::default()).is_err());
        let opts = IngestOptions {
            drop_overlaps: true,
            ..Default::default()
        };
        let fixed = parse_document_line(&line, 1, opts).unwrap();
        assert!(fixed.mentions.iter().any(|m| m.span() == Span::new(1, 3)));
        assert!(!fixed.mentions.iter().any(|m| m.span() == Span::new(2, 3)));
        assert!(fixed.clusters["bidaf"].is_empty());
    }

    #[test]
    fn ragged_sections_snapped_outward() {
        let mut d = tiny_doc();
        d.sentences = vec![Span::new(0, 6), Span::new(6, 11)];
        d.sections = vec![Span::new(0, 4), Span::new(4, 11)];
        let back = parse_document_line(&write_document_line(&d), 1, IngestOptions::default()).unwrap();
        assert_eq!(back.sections, vec![Span::new(0, 11)]);
    }

    #[test]
    fn release_schema_mapped() {
        let line = r#"{"doc_id":"r1","words":["We","use","BiDAF","on","SQuAD","for","QA","with","EM","."],
            "sentences":[[0,10]],"sections":[[0,10]],
            "ner":[[2,3,"Method"],[4,5,"Material"],[6,7,"Task"],[8,9,"Metric"]],
            "coref":{"BiDAF":[[2,3]],"SQuAD":[[4,5]],"QA":[[6,7]],"EM":[[8,9]]},
            "n_ary_relations":[{"Material":"SQuAD","Method":"BiDAF","Metric":"EM","Task":"QA","score":"77.3"}],
            "method_subrelations":{}}"#
            .replace('\n', " ");
        let d = parse_document_line(&line, 1, IngestOptions::default()).unwrap();
        assert_eq!(d.mentions[1].kind, EntityType::Dataset);
        assert_eq!(d.relations.len(), 1);
        assert!(d.mentions.iter().all(|m| m.salient));
    }

    #[test]
    fn kb_records_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kb.jsonl");
        std::fs::write(
            &p,
            "{\"dataset\":\"SQuAD\",\"metric\":\"EM\",\"method\":\"BiDAF\",\"task\":\"QA\",\"score\":\"77.3\"}\n",
        )
        .unwrap();
        let kb = read_kb(&p).unwrap();
        assert_eq!(kb[0].entity(EntityType::Method), "BiDAF");
        std::fs::write(&p, "{\"dataset\":\"\",\"metric\":\"EM\",\"method\":\"B\",\"task\":\"QA\"}\n").unwrap();
        assert!(read_kb(&p).is_err());
    }
}
