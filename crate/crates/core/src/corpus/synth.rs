//! Seeded synthetic corpus with planted structure.
//!
//! Each entity type draws its name tokens from its own pool of pseudo-words,
//! and every pool word starts with a letter reserved for that type, so the
//! initials-based abbreviations are type-specific too. Salient entities are
//! the ones bound to a relation; each relation gets a "result" section where
//! all four of its entities are mentioned in sentences carrying a marker word.
//! Non-salient entities live in the remaining sections, in plain sentences.
//! The noise knobs break these regularities at controlled rates.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_salience, validate_document, Document, EntityType, Mention, RelationTuple, Span};
use crate::error::{Error, Result};
use crate::mentions::DEFAULT_MARKERS;
use crate::seed::derive_seed;

/// Inclusive integer range.
pub type Range = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Total distinct word types, including names and abbreviations.
    pub vocab_size: usize,
    /// Name tokens per entity type.
    pub name_pool: usize,
    pub avg_sections: usize,
    pub sentences_per_section: Range,
    pub filler_per_sentence: Range,
    pub relations_per_doc: Range,
    pub non_salient_per_type: Range,
    pub mentions_per_entity: Range,
    /// Probability that an entity also appears under its abbreviation.
    pub alias_rate: f64,
    /// Probability of flipping whether a mention sits in a marker sentence.
    pub marker_noise: f64,
    /// Probability that each extra salient mention lands outside the result
    /// sections, in a plain sentence.
    pub stray_salient_rate: f64,
    /// Probability of reusing an existing salient entity when building the
    /// next relation's role.
    pub role_reuse: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 500,
            name_pool: 40,
            avg_sections: 8,
            sentences_per_section: (2, 4),
            filler_per_sentence: (4, 8),
            relations_per_doc: (1, 2),
            non_salient_per_type: (1, 2),
            mentions_per_entity: (2, 3),
            alias_rate: 0.8,
            marker_noise: 0.0,
            stray_salient_rate: 0.0,
            role_reuse: 0.5,
        }
    }
}

impl SynthConfig {
    /// Settings with saliency cues and section co-occurrence partly broken.
    pub fn noisy() -> Self {
        SynthConfig {
            relations_per_doc: (1, 3),
            marker_noise: 0.2,
            stray_salient_rate: 0.4,
            alias_rate: 0.9,
            ..SynthConfig::default()
        }
    }

    const ABBREV_LETTERS: usize = 3;

    fn abbreviation_space() -> usize {
        let l = Self::ABBREV_LETTERS;
        l * l + l * l * l
    }

    fn filler_count(&self) -> usize {
        self.vocab_size
            .saturating_sub(DEFAULT_MARKERS.len() + 1 + 4 * (self.name_pool + Self::abbreviation_space()))
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("sentences_per_section", self.sentences_per_section),
            ("filler_per_sentence", self.filler_per_sentence),
            ("relations_per_doc", self.relations_per_doc),
            ("non_salient_per_type", self.non_salient_per_type),
            ("mentions_per_entity", self.mentions_per_entity),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return Err(Error::Config(format!("{name}: min {lo} exceeds max {hi}")));
            }
        }
        for (name, p) in [
            ("alias_rate", self.alias_rate),
            ("marker_noise", self.marker_noise),
            ("stray_salient_rate", self.stray_salient_rate),
            ("role_reuse", self.role_reuse),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.relations_per_doc.0 == 0 {
            return Err(Error::Config("relations_per_doc must be at least 1".into()));
        }
        if self.mentions_per_entity.0 == 0 || self.sentences_per_section.0 == 0 {
            return Err(Error::Config("mention and sentence counts must be positive".into()));
        }
        if self.avg_sections < 2 {
            return Err(Error::Config("avg_sections must be at least 2".into()));
        }
        if self.name_pool < 8 {
            return Err(Error::Config("name_pool must be at least 8".into()));
        }
        if self.filler_per_sentence.0 < 2 {
            return Err(Error::Config("filler_per_sentence min must be at least 2".into()));
        }
        if self.filler_count() < 20 {
            return Err(Error::Config(format!(
                "vocab_size {} leaves fewer than 20 filler words",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

const TYPE_LETTERS: [[char; 3]; 4] = [['b', 'c', 'd'], ['f', 'g', 'h'], ['k', 'l', 'm'], ['p', 'r', 's']];
const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

struct Lexicon {
    fillers: Vec<String>,
    pools: [Vec<String>; 4],
}

fn pseudo_word(rng: &mut ChaCha8Rng, first: Option<char>, syllables: usize) -> String {
    let mut w = String::new();
    for i in 0..syllables {
        match (i, first) {
            (0, Some(c)) => w.push(c),
            _ => w.push_str(ONSETS.choose(rng).unwrap()),
        }
        w.push_str(VOWELS.choose(rng).unwrap());
    }
    w
}

fn build_lexicon(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Lexicon {
    let mut seen: HashSet<String> = DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect();
    seen.insert(".".into());
    let mut fresh = |rng: &mut ChaCha8Rng, first: Option<char>| loop {
        let syl = rng.random_range(2..=3);
        let w = pseudo_word(rng, first, syl);
        if seen.insert(w.clone()) {
            return w;
        }
    };
    let pools = std::array::from_fn(|t| {
        (0..cfg.name_pool)
            .map(|i| fresh(rng, Some(TYPE_LETTERS[t][i % 3])))
            .collect()
    });
    let fillers = (0..cfg.filler_count()).map(|_| fresh(rng, None)).collect();
    Lexicon { fillers, pools }
}

struct Entity {
    kind: EntityType,
    id: String,
    full: Vec<String>,
    abbrev: Option<String>,
    mentions: usize,
    salient: bool,
}

struct Slot {
    entity: usize,
    marker: bool,
}

/// Generates `n_docs` documents deterministically from `seed`.
pub fn generate_synthetic(seed: u64, n_docs: usize, config: &SynthConfig) -> Result<Vec<Document>> {
    config.validate()?;
    if n_docs == 0 {
        return Err(Error::Config("n_docs must be at least 1".into()));
    }
    let mut lex_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synth/lexicon"));
    let lex = build_lexicon(config, &mut lex_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synth/documents"));
    (0..n_docs)
        .map(|i| generate_document(&format!("synth-{seed}-{i:05}"), config, &lex, &mut rng))
        .collect()
}

fn range(rng: &mut ChaCha8Rng, (lo, hi): Range) -> usize {
    rng.random_range(lo..=hi)
}

fn new_entity(
    kind: EntityType,
    salient: bool,
    cfg: &SynthConfig,
    lex: &Lexicon,
    taken: &mut BTreeSet<String>,
    rng: &mut ChaCha8Rng,
) -> Entity {
    let pool = &lex.pools[kind.index()];
    loop {
        let len = rng.random_range(2..=3);
        let tokens: Vec<String> = pool.choose_multiple(rng, len).cloned().collect();
        let abbrev: String = tokens
            .iter()
            .map(|t| t.chars().next().unwrap().to_ascii_uppercase())
            .collect();
        if !taken.insert(abbrev.clone()) {
            continue;
        }
        let has_alias = rng.random_bool(cfg.alias_rate);
        let mut mentions = range(rng, cfg.mentions_per_entity);
        if has_alias {
            mentions = mentions.max(2);
        }
        return Entity {
            kind,
            id: tokens.join(" "),
            full: tokens,
            abbrev: has_alias.then_some(abbrev),
            mentions,
            salient,
        };
    }
}

fn generate_document(doc_id: &str, cfg: &SynthConfig, lex: &Lexicon, rng: &mut ChaCha8Rng) -> Result<Document> {
    let mut entities: Vec<Entity> = Vec::new();
    let mut taken = BTreeSet::new();
    let mut by_role: [Vec<usize>; 4] = Default::default();

    // Relations over salient entities.
    let n_rel = range(rng, cfg.relations_per_doc);
    let mut relations: Vec<[usize; 4]> = Vec::new();
    for r in 0..n_rel {
        let mut slots = [0usize; 4];
        for attempt in 0..20 {
            for t in EntityType::ALL {
                let reuse = r > 0 && attempt < 19 && rng.random_bool(cfg.role_reuse);
                slots[t.index()] = if reuse {
                    *by_role[t.index()].choose(rng).unwrap()
                } else {
                    usize::MAX
                };
            }
            let fresh_needed = slots.contains(&usize::MAX);
            let dup = !fresh_needed && relations.contains(&slots);
            if !dup {
                break;
            }
        }
        for t in EntityType::ALL {
            if slots[t.index()] == usize::MAX {
                entities.push(new_entity(t, true, cfg, lex, &mut taken, rng));
                by_role[t.index()].push(entities.len() - 1);
                slots[t.index()] = entities.len() - 1;
            }
        }
        relations.push(slots);
    }
    for t in EntityType::ALL {
        for _ in 0..range(rng, cfg.non_salient_per_type) {
            entities.push(new_entity(t, false, cfg, lex, &mut taken, rng));
        }
    }

    // Section layout: one result section per relation, the rest background.
    let lo = cfg.avg_sections.saturating_sub(2).max(2);
    let n_sections = rng.random_range(lo..=cfg.avg_sections + 2).max(n_rel + 1);
    let mut section_ids: Vec<usize> = (0..n_sections).collect();
    section_ids.shuffle(rng);
    let result_sections: Vec<usize> = section_ids[..n_rel].to_vec();
    let background: Vec<usize> = section_ids[n_rel..].to_vec();

    let mut slots: Vec<Vec<Slot>> = (0..n_sections).map(|_| Vec::new()).collect();
    let mut placed = vec![0usize; entities.len()];
    for (r, rel) in relations.iter().enumerate() {
        for &e in rel {
            slots[result_sections[r]].push(Slot { entity: e, marker: true });
            placed[e] += 1;
        }
    }
    for (e, ent) in entities.iter().enumerate() {
        for _ in placed[e]..ent.mentions {
            if ent.salient && !rng.random_bool(cfg.stray_salient_rate) {
                let homes: Vec<usize> = relations
                    .iter()
                    .enumerate()
                    .filter(|(_, rel)| rel.contains(&e))
                    .map(|(r, _)| result_sections[r])
                    .collect();
                slots[*homes.choose(rng).unwrap()].push(Slot { entity: e, marker: true });
            } else {
                slots[*background.choose(rng).unwrap()].push(Slot { entity: e, marker: false });
            }
        }
    }
    for section in &mut slots {
        for s in section.iter_mut() {
            if rng.random_bool(cfg.marker_noise) {
                s.marker = !s.marker;
            }
        }
    }

    // Realize tokens.
    let mut words: Vec<String> = Vec::new();
    let mut sentences = Vec::new();
    let mut sections = Vec::new();
    let mut mentions = Vec::new();
    let mut clusters: BTreeMap<String, Vec<Span>> = entities.iter().map(|e| (e.id.clone(), Vec::new())).collect();
    let mut used_alias = vec![false; entities.len()];
    let mut used_full = vec![false; entities.len()];

    for section_slots in slots.iter_mut() {
        let sec_start = words.len();
        section_slots.shuffle(rng);
        let (marked, plain): (Vec<&Slot>, Vec<&Slot>) = section_slots.iter().partition(|s| s.marker);
        let mut groups: Vec<(bool, Vec<usize>)> = Vec::new();
        for chunk in marked.chunks(3) {
            groups.push((true, chunk.iter().map(|s| s.entity).collect()));
        }
        for chunk in plain.chunks(2) {
            groups.push((false, chunk.iter().map(|s| s.entity).collect()));
        }
        let target = range(rng, cfg.sentences_per_section);
        while groups.len() < target {
            groups.push((false, Vec::new()));
        }
        groups.shuffle(rng);

        for (marker, ents) in groups {
            let sent_start = words.len();
            let n_fill = range(rng, cfg.filler_per_sentence);
            // Gaps between mentions are at least one filler wide.
            let mut gaps = vec![1usize; ents.len() + 1];
            for _ in 0..n_fill.saturating_sub(ents.len() + 1) {
                let k = rng.random_range(0..gaps.len());
                gaps[k] += 1;
            }
            let marker_gap = rng.random_range(0..gaps.len());
            for (gi, gap) in gaps.iter().enumerate() {
                let marker_at = (marker && gi == marker_gap).then(|| rng.random_range(0..=*gap));
                for k in 0..=*gap {
                    if marker_at == Some(k) {
                        words.push(DEFAULT_MARKERS.choose(rng).unwrap().to_string());
                    }
                    if k < *gap {
                        words.push(lex.fillers.choose(rng).unwrap().clone());
                    }
                }
                if let Some(&e) = ents.get(gi) {
                    let ent = &entities[e];
                    let last = clusters[&ent.id].len() + 1 >= ent.mentions;
                    let use_abbrev = match &ent.abbrev {
                        Some(_) if last && !used_alias[e] => true,
                        Some(_) if last && !used_full[e] => false,
                        Some(_) => rng.random_bool(0.5),
                        None => false,
                    };
                    let start = words.len();
                    if use_abbrev {
                        used_alias[e] = true;
                        words.push(ent.abbrev.clone().unwrap());
                    } else {
                        used_full[e] = true;
                        words.extend(ent.full.iter().cloned());
                    }
                    let span = Span::new(start, words.len());
                    mentions.push(Mention::new(span.start, span.end, ent.kind));
                    clusters.get_mut(&ent.id).unwrap().push(span);
                }
            }
            words.push(".".into());
            sentences.push(Span::new(sent_start, words.len()));
        }
        sections.push(Span::new(sec_start, words.len()));
    }

    let relations: Vec<RelationTuple> = relations
        .iter()
        .map(|rel| RelationTuple::from_slots(&rel.map(|e| entities[e].id.clone())))
        .collect();
    let doc = derive_salience(&Document {
        doc_id: doc_id.to_string(),
        words,
        sentences,
        sections,
        mentions,
        clusters,
        relations,
    });
    self_check(&doc)?;
    Ok(doc)
}

/// Every relation must be recoverable from the gold annotations: each role
/// resolves to a typed, mentioned cluster and some section mentions all four.
fn self_check(doc: &Document) -> Result<()> {
    if let Some(v) = validate_document(doc).into_iter().next() {
        return Err(Error::Validation {
            doc_id: doc.doc_id.clone(),
            field: v.field.into(),
            message: format!("generator produced an invalid document: {}", v.message),
        });
    }
    for rel in &doc.relations {
        let mut per_role = Vec::new();
        for (role, id) in rel.roles() {
            let spans = &doc.clusters[id];
            let ok = !spans.is_empty() && spans.iter().all(|s| doc.mention_at(*s).map(|m| m.kind) == Some(role));
            if !ok {
                return Err(Error::Other(format!("{}: relation role {role} not recoverable", doc.doc_id)));
            }
            per_role.push(
                spans
                    .iter()
                    .filter_map(|s| doc.section_of(s.start))
                    .collect::<BTreeSet<_>>(),
            );
        }
        let shared = per_role[0].iter().any(|s| per_role[1..].iter().all(|p| p.contains(s)));
        if !shared {
            return Err(Error::Other(format!("{}: relation entities never share a section", doc.doc_id)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{binary_relations, write_document_line};

    #[test]
    fn deterministic_for_seed() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic(5, 4, &cfg).unwrap();
        let b = generate_synthetic(5, 4, &cfg).unwrap();
        let ser = |d: &[Document]| d.iter().map(write_document_line).collect::<Vec<_>>().join("\n");
        assert_eq!(ser(&a), ser(&b));
        let c = generate_synthetic(6, 4, &cfg).unwrap();
        assert_ne!(ser(&a), ser(&c));
    }

    #[test]
    fn one_relation_gives_six_binaries() {
        let cfg = SynthConfig {
            relations_per_doc: (1, 1),
            ..SynthConfig::default()
        };
        for d in generate_synthetic(1, 20, &cfg).unwrap() {
            assert_eq!(binary_relations(&d.relations).len(), 6);
        }
    }

    #[test]
    fn full_alias_rate_gives_two_surface_forms() {
        let cfg = SynthConfig {
            alias_rate: 1.0,
            ..SynthConfig::default()
        };
        for d in generate_synthetic(2, 20, &cfg).unwrap() {
            for (id, spans) in &d.clusters {
                let forms: BTreeSet<String> = spans
                    .iter()
                    .map(|s| d.words[s.start..s.end].join(" "))
                    .collect();
                assert!(forms.len() >= 2, "{id} has forms {forms:?}");
            }
        }
    }

    #[test]
    fn noisy_docs_valid() {
        for d in generate_synthetic(3, 30, &SynthConfig::noisy()).unwrap() {
            assert!(validate_document(&d).is_empty());
        }
    }

    #[test]
    fn vocabulary_bounded() {
        let docs = generate_synthetic(4, 100, &SynthConfig::default()).unwrap();
        let vocab: BTreeSet<&String> = docs.iter().flat_map(|d| d.words.iter()).collect();
        assert!(vocab.len() <= 500, "{}", vocab.len());
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SynthConfig {
            vocab_size: 100,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(0, 1, &cfg).is_err());
        let cfg = SynthConfig {
            marker_noise: 1.5,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(0, 1, &cfg).is_err());
        assert!(generate_synthetic(0, 0, &SynthConfig::default()).is_err());
    }
}
