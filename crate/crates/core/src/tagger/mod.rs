//! BIOUL tag set and the linear-chain CRF mention tagger.

mod crf;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{EntityType, Mention};
use crate::error::{Error, Result};

pub use crf::{
    crf_nll, log_partition, nll_with_grads, sequence_score, viterbi, viterbi_decode, Crf, CrfScores, NllGrads,
};

pub const NUM_TAGS: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prefix {
    B,
    I,
    L,
    U,
}

impl Prefix {
    const ALL: [Prefix; 4] = [Prefix::B, Prefix::I, Prefix::L, Prefix::U];
}

/// One of the 17 BIOUL tags. Index 0 is `O`; type `t` owns indices
/// `1 + 4t ..= 4 + 4t` in the order B, I, L, U.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tag(u8);

impl Tag {
    pub const O: Tag = Tag(0);

    pub fn new(prefix: Prefix, kind: EntityType) -> Tag {
        let p = Prefix::ALL.iter().position(|&q| q == prefix).unwrap();
        Tag((1 + 4 * kind.index() + p) as u8)
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        (i < NUM_TAGS).then_some(Tag(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = Tag> {
        (0..NUM_TAGS).map(|i| Tag(i as u8))
    }

    /// `None` for `O`.
    pub fn parts(self) -> Option<(Prefix, EntityType)> {
        if self.0 == 0 {
            return None;
        }
        let i = self.0 as usize - 1;
        Some((Prefix::ALL[i % 4], EntityType::from_index(i / 4).unwrap()))
    }

    pub fn can_start(self) -> bool {
        matches!(self.parts(), None | Some((Prefix::B | Prefix::U, _)))
    }

    pub fn can_end(self) -> bool {
        matches!(self.parts(), None | Some((Prefix::L | Prefix::U, _)))
    }

    /// BIOUL transition rule: inside a span (after B or I) only I or L of the
    /// same type may follow; outside a span only O, B or U may follow.
    pub fn can_follow(self, next: Tag) -> bool {
        match self.parts() {
            Some((Prefix::B | Prefix::I, t)) => {
                matches!(next.parts(), Some((Prefix::I | Prefix::L, u)) if u == t)
            }
            _ => next.can_start(),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.parts() {
            None => f.write_str("O"),
            Some((p, t)) => write!(f, "{p:?}-{t}"),
        }
    }
}

/// Transition-permission mask of the BIOUL tag set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    pub allowed: [[bool; NUM_TAGS]; NUM_TAGS],
    pub start: [bool; NUM_TAGS],
    pub end: [bool; NUM_TAGS],
}

impl Default for TagSet {
    fn default() -> Self {
        Self::bioul()
    }
}

impl TagSet {
    pub fn bioul() -> Self {
        let mut allowed = [[false; NUM_TAGS]; NUM_TAGS];
        let mut start = [false; NUM_TAGS];
        let mut end = [false; NUM_TAGS];
        for a in Tag::all() {
            start[a.index()] = a.can_start();
            end[a.index()] = a.can_end();
            for b in Tag::all() {
                allowed[a.index()][b.index()] = a.can_follow(b);
            }
        }
        TagSet { allowed, start, end }
    }

    /// Errors at the first position that breaks the mask.
    pub fn validate(&self, tags: &[Tag]) -> Result<()> {
        let Some(first) = tags.first() else { return Ok(()) };
        if !self.start[first.index()] {
            return Err(Error::InvalidTags {
                position: 0,
                message: format!("sequence cannot start with {first}"),
            });
        }
        for (i, w) in tags.windows(2).enumerate() {
            if !self.allowed[w[0].index()][w[1].index()] {
                return Err(Error::InvalidTags {
                    position: i + 1,
                    message: format!("{} cannot follow {}", w[1], w[0]),
                });
            }
        }
        let last = tags[tags.len() - 1];
        if !self.end[last.index()] {
            return Err(Error::InvalidTags {
                position: tags.len() - 1,
                message: format!("sequence cannot end with {last}"),
            });
        }
        Ok(())
    }

    pub fn is_valid(&self, tags: &[Tag]) -> bool {
        self.validate(tags).is_ok()
    }
}

/// Gold tag sequence of length `n` for non-overlapping mentions.
pub fn spans_to_tags(n: usize, mentions: &[Mention]) -> Result<Vec<Tag>> {
    let mut tags = vec![Tag::O; n];
    for m in mentions {
        if m.start >= m.end || m.end > n {
            return Err(Error::Other(format!("mention ({}, {}) out of range for {n} tokens", m.start, m.end)));
        }
        if tags[m.start..m.end].iter().any(|t| *t != Tag::O) {
            return Err(Error::Other(format!("mention ({}, {}) overlaps another mention", m.start, m.end)));
        }
        if m.end - m.start == 1 {
            tags[m.start] = Tag::new(Prefix::U, m.kind);
        } else {
            tags[m.start] = Tag::new(Prefix::B, m.kind);
            for t in &mut tags[m.start + 1..m.end - 1] {
                *t = Tag::new(Prefix::I, m.kind);
            }
            tags[m.end - 1] = Tag::new(Prefix::L, m.kind);
        }
    }
    Ok(tags)
}

/// Mentions encoded by a mask-valid sequence, in order, with salient unset.
pub fn tags_to_spans(tags: &[Tag]) -> Result<Vec<Mention>> {
    TagSet::bioul().validate(tags)?;
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, t) in tags.iter().enumerate() {
        match t.parts() {
            None => {}
            Some((Prefix::U, k)) => out.push(Mention::new(i, i + 1, k)),
            Some((Prefix::B, _)) => open = Some(i),
            Some((Prefix::I, _)) => {}
            Some((Prefix::L, k)) => {
                let s = open.take().expect("validated sequence has a span start");
                out.push(Mention::new(s, i + 1, k));
            }
        }
    }
    Ok(out)
}
