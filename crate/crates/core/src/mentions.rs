//! Span embeddings (endpoints, attention-pooled interior, position, marker
//! and type features) and the salient-mention classifier.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Mention};
use crate::nn::{bce_with_logits, sigmoid, Ffn, Graph, Linear, ParamStore, Tensor, Var};

/// Default marker words; a mention in a sentence containing one of these
/// gets the marker feature.
pub const DEFAULT_MARKERS: [&str; 8] = [
    "experiment",
    "experiments",
    "dataset",
    "datasets",
    "evaluate",
    "evaluation",
    "results",
    "benchmark",
];

/// Width of the feature block: relative position, marker bit, type one-hot.
pub const FEATURE_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MentionConfig {
    /// Marker words, matched case-insensitively against whole tokens.
    pub markers: Vec<String>,
    pub attention_hidden: usize,
    pub saliency_hidden: Vec<usize>,
    pub dropout: f64,
    pub saliency_threshold: f64,
}

impl Default for MentionConfig {
    fn default() -> Self {
        MentionConfig {
            markers: DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect(),
            attention_hidden: 128,
            saliency_hidden: vec![128, 128],
            dropout: 0.2,
            saliency_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MarkerSet(HashSet<String>);

impl MarkerSet {
    pub fn new<S: AsRef<str>>(words: &[S]) -> Self {
        MarkerSet(words.iter().map(|w| w.as_ref().to_lowercase()).collect())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(&token.to_lowercase())
    }

    /// One flag per sentence: does it contain a marker word.
    pub fn sentence_flags(&self, doc: &Document) -> Vec<bool> {
        doc.sentences
            .iter()
            .map(|s| doc.words[s.start..s.end].iter().any(|w| self.contains(w)))
            .collect()
    }
}

/// `[start / |words|, marker bit, one-hot(type)]`.
pub fn span_features(doc: &Document, mention: &Mention, marker_sentences: &[bool]) -> [f64; FEATURE_DIM] {
    let mut f = [0.0; FEATURE_DIM];
    f[0] = mention.start as f64 / doc.words.len().max(1) as f64;
    let marked = doc
        .sentence_of(mention.start)
        .and_then(|s| marker_sentences.get(s).copied())
        .unwrap_or(false);
    f[1] = if marked { 1.0 } else { 0.0 };
    f[2 + mention.kind.index()] = 1.0;
    f
}

/// Additive attention pooling plus feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanEmbedder {
    pub token_dim: usize,
    attn_hidden: Linear,
    attn_out: Linear,
}

impl SpanEmbedder {
    pub fn new(store: &mut ParamStore, name: &str, token_dim: usize, config: &MentionConfig, rng: &mut impl Rng) -> Self {
        SpanEmbedder {
            token_dim,
            attn_hidden: Linear::new(store, &format!("{name}.attn.h"), token_dim, config.attention_hidden, rng),
            attn_out: Linear::new(store, &format!("{name}.attn.out"), config.attention_hidden, 1, rng),
        }
    }

    /// Span-embedding width `3 * token_dim + 6`.
    pub fn dim(&self) -> usize {
        3 * self.token_dim + FEATURE_DIM
    }

    /// Unnormalized attention score of every token, `T x 1`.
    pub fn token_scores(&self, g: &mut Graph, embeddings: Var) -> Var {
        let h = self.attn_hidden.forward(g, embeddings);
        let h = g.tanh(h);
        self.attn_out.forward(g, h)
    }

    /// Attention weights over the tokens of one mention, `k x 1`.
    pub fn attention(&self, g: &mut Graph, scores: Var, mention: &Mention) -> Var {
        let s = g.slice_rows(scores, mention.start, mention.end);
        g.softmax(s)
    }

    /// Span embeddings of `mentions`, one row each. `None` when there are no
    /// mentions.
    pub fn forward(
        &self,
        g: &mut Graph,
        doc: &Document,
        embeddings: Var,
        mentions: &[Mention],
        markers: &MarkerSet,
    ) -> Option<Var> {
        if mentions.is_empty() {
            return None;
        }
        let scores = self.token_scores(g, embeddings);
        let marker_sentences = markers.sentence_flags(doc);
        let starts: Vec<usize> = mentions.iter().map(|m| m.start).collect();
        let ends: Vec<usize> = mentions.iter().map(|m| m.end - 1).collect();
        let first = g.gather(embeddings, &starts);
        let last = g.gather(embeddings, &ends);
        let pooled: Vec<Var> = mentions
            .iter()
            .map(|m| {
                let alpha = self.attention(g, scores, m);
                let at = g.transpose(alpha);
                let tokens = g.slice_rows(embeddings, m.start, m.end);
                g.matmul(at, tokens)
            })
            .collect();
        let pooled = g.concat_rows(&pooled);
        let mut feats = Tensor::zeros(mentions.len(), FEATURE_DIM);
        for (i, m) in mentions.iter().enumerate() {
            feats.row_mut(i).copy_from_slice(&span_features(doc, m, &marker_sentences));
        }
        let feats = g.input(feats);
        Some(g.concat_cols(&[first, last, pooled, feats]))
    }
}

/// Span embedding of a single mention from precomputed token embeddings.
pub fn build_span_embedding(
    doc: &Document,
    mention: &Mention,
    token_embeddings: &Tensor,
    store: &ParamStore,
    embedder: &SpanEmbedder,
    markers: &MarkerSet,
) -> Tensor {
    let mut g = Graph::eval(store);
    let e = g.input(token_embeddings.clone());
    let v = embedder
        .forward(&mut g, doc, e, std::slice::from_ref(mention), markers)
        .expect("one mention");
    g.value(v).clone()
}

/// Feed-forward saliency classifier over span embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyHead {
    pub ffn: Ffn,
    pub threshold: f64,
}

impl SaliencyHead {
    pub fn new(store: &mut ParamStore, name: &str, span_dim: usize, config: &MentionConfig, rng: &mut impl Rng) -> Self {
        SaliencyHead {
            ffn: Ffn::new(store, name, span_dim, &config.saliency_hidden, Some(1), config.dropout, rng),
            threshold: config.saliency_threshold,
        }
    }

    /// Logits `M x 1`.
    pub fn logits(&self, g: &mut Graph, spans: Var) -> Var {
        self.ffn.forward(g, spans)
    }

    /// Summed binary cross-entropy against salient flags.
    pub fn loss(&self, g: &mut Graph, spans: Var, salient: &[bool]) -> Var {
        let z = self.logits(g, spans);
        let y: Vec<f64> = salient.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        bce_with_logits(g, z, &y)
    }

    pub fn probabilities(&self, g: &mut Graph, spans: Var) -> Vec<f64> {
        let z = self.logits(g, spans);
        g.value(z).data.iter().map(|&v| sigmoid(v)).collect()
    }
}

/// Salience probability of one span embedding, in eval mode.
pub fn saliency_score(span_embedding: &Tensor, store: &ParamStore, head: &SaliencyHead) -> f64 {
    let mut g = Graph::eval(store);
    let x = g.input(span_embedding.clone());
    head.probabilities(&mut g, x)[0]
}
