//! Token encoder: embedding table, per-section contextual layer over
//! windows of at most 512 tokens, and a document-level BiLSTM over the
//! concatenated section outputs.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Span};
use crate::error::{Error, Result};
use crate::nn::{uniform, BiLstm, Graph, Linear, ParamGroup, ParamId, ParamStore, Tensor, Var};

pub use crate::nn::{gradient_check, GradCheckOptions, GradCheckReport};

/// Reserved id for out-of-vocabulary tokens.
pub const UNK: usize = 0;
const UNK_TOKEN: &str = "<unk>";

/// Token vocabulary. Id 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Every token seen in `docs`, most frequent first (ties alphabetical),
    /// capped at `max_size` entries including UNK.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>, max_size: Option<usize>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for d in docs {
            for w in &d.words {
                *counts.entry(w.as_str()).or_default() += 1;
            }
        }
        let mut by_freq: Vec<(&str, usize)> = counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens = vec![UNK_TOKEN.to_string()];
        tokens.extend(by_freq.into_iter().map(|(w, _)| w.to_string()));
        if let Some(max) = max_size {
            tokens.truncate(max.max(1));
        }
        Vocab::from(tokens)
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn ids(&self, words: &[String]) -> Vec<usize> {
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SectionEncoderKind {
    /// Trainable embedding table plus a section-level BiLSTM.
    #[default]
    TrainableRecurrent,
    /// Token vectors supplied by a [`WindowEncoder`], passed through a
    /// trainable adapter.
    ExternalContextual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub kind: SectionEncoderKind,
    /// Hidden size of each direction of the section-level BiLSTM.
    pub section_hidden: usize,
    /// Input width expected from an external encoder.
    pub external_dim: usize,
    /// Hidden size of each direction of the document-level BiLSTM.
    pub doc_hidden: usize,
    pub dropout: f64,
    /// Maximum tokens per contextual-layer window.
    pub window: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            embedding_dim: 64,
            kind: SectionEncoderKind::TrainableRecurrent,
            section_hidden: 64,
            external_dim: 768,
            doc_hidden: 128,
            dropout: 0.2,
            window: 512,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("encoder vocab_size must be positive".into()));
        }
        let dims = [
            ("embedding_dim", self.embedding_dim),
            ("section_hidden", self.section_hidden),
            ("doc_hidden", self.doc_hidden),
            ("window", self.window),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::Config(format!("encoder {name} must be positive")));
            }
        }
        if self.kind == SectionEncoderKind::ExternalContextual && self.external_dim == 0 {
            return Err(Error::Config("encoder external_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("encoder dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        2 * self.doc_hidden
    }
}

/// External contextual encoder: one vector per token of a window of at most
/// the configured window length.
pub trait WindowEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode_window(&self, words: &[String]) -> Tensor;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Splits every section into consecutive windows of at most `window` tokens.
pub fn section_windows(sections: &[Span], window: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for s in sections {
        let mut start = s.start;
        while start < s.end {
            let end = (start + window).min(s.end);
            out.push(Span::new(start, end));
            start = end;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    embedding: ParamId,
    section: Option<BiLstm>,
    adapter: Option<Linear>,
    doc: BiLstm,
}

impl Encoder {
    pub fn new(config: EncoderConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let embedding = store.add(
            "encoder.embedding",
            uniform(config.vocab_size, config.embedding_dim, 0.1, rng),
            ParamGroup::Default,
        );
        let (section, adapter, ctx_dim) = match config.kind {
            SectionEncoderKind::TrainableRecurrent => {
                let bi = BiLstm::new(store, "encoder.section", config.embedding_dim, config.section_hidden, rng);
                (Some(bi), None, 2 * config.section_hidden)
            }
            SectionEncoderKind::ExternalContextual => {
                let a = Linear::with_group(
                    store,
                    "encoder.adapter",
                    config.external_dim,
                    2 * config.section_hidden,
                    ParamGroup::Contextual,
                    rng,
                );
                (None, Some(a), 2 * config.section_hidden)
            }
        };
        let doc = BiLstm::new(store, "encoder.document", ctx_dim, config.doc_hidden, rng);
        Ok(Encoder {
            config,
            embedding,
            section,
            adapter,
            doc,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    fn check_shapes(&self, store: &ParamStore) -> Result<()> {
        let emb = store.get(self.embedding);
        if emb.shape() != (self.config.vocab_size, self.config.embedding_dim) {
            return Err(Error::Shape(format!(
                "embedding table is {:?}, config expects {:?}",
                emb.shape(),
                (self.config.vocab_size, self.config.embedding_dim)
            )));
        }
        Ok(())
    }

    /// Contextual-layer outputs, one row per token: each window is encoded
    /// independently of every other window.
    pub fn encode_sections(
        &self,
        g: &mut Graph,
        doc: &Document,
        vocab: &Vocab,
        external: Option<&dyn WindowEncoder>,
    ) -> Result<Var> {
        self.check_shapes(g.store())?;
        if doc.words.is_empty() {
            return Err(Error::Empty(format!("document {} has no tokens", doc.doc_id)));
        }
        let mut parts = Vec::new();
        for w in section_windows(&doc.sections, self.config.window) {
            let words = &doc.words[w.start..w.end];
            let out = match (&self.section, &self.adapter) {
                (Some(bi), _) => {
                    let n = self.config.vocab_size;
                    let ids: Vec<usize> = vocab.ids(words).into_iter().map(|i| if i < n { i } else { UNK }).collect();
                    let x = g.lookup(self.embedding, &ids);
                    bi.forward(g, x)
                }
                (None, Some(adapter)) => {
                    let ext = external.ok_or_else(|| {
                        Error::Config("external contextual encoder selected but none supplied".into())
                    })?;
                    let t = ext.encode_window(words);
                    if t.shape() != (words.len(), self.config.external_dim) {
                        return Err(Error::Shape(format!(
                            "external encoder returned {:?} for a {}-token window, expected width {}",
                            t.shape(),
                            words.len(),
                            self.config.external_dim
                        )));
                    }
                    let x = g.input(t);
                    adapter.forward(g, x)
                }
                (None, None) => unreachable!("encoder has no section layer"),
            };
            parts.push(out);
        }
        let covered: usize = parts.iter().map(|&p| g.shape(p).0).sum();
        if covered != doc.words.len() {
            return Err(Error::Shape(format!(
                "sections cover {covered} of {} tokens in {}",
                doc.words.len(),
                doc.doc_id
            )));
        }
        Ok(if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) })
    }

    /// Token embeddings `|words| x 2*doc_hidden`.
    pub fn forward(
        &self,
        g: &mut Graph,
        doc: &Document,
        vocab: &Vocab,
        external: Option<&dyn WindowEncoder>,
    ) -> Result<Var> {
        let ctx = self.encode_sections(g, doc, vocab, external)?;
        let h = self.doc.forward(g, ctx);
        Ok(g.dropout(h, self.config.dropout))
    }
}

/// Runs the encoder outside of any training graph and returns the token
/// embeddings. `seed` only matters in train mode, where it drives dropout.
pub fn encode_document(
    doc: &Document,
    store: &ParamStore,
    encoder: &Encoder,
    vocab: &Vocab,
    mode: Mode,
    seed: u64,
) -> Result<Tensor> {
    let mut g = Graph::new(store, mode == Mode::Train, seed);
    let v = encoder.forward(&mut g, doc, vocab, None)?;
    Ok(g.value(v).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc_with_sections(lengths: &[usize]) -> Document {
        let mut words = Vec::new();
        let mut sections = Vec::new();
        for (s, &n) in lengths.iter().enumerate() {
            let start = words.len();
            words.extend((0..n).map(|i| format!("w{}", (i * 7 + s) % 13)));
            sections.push(Span::new(start, words.len()));
        }
        Document {
            doc_id: "d".into(),
            words,
            sentences: sections.clone(),
            sections,
            mentions: vec![],
            clusters: Default::default(),
            relations: vec![],
        }
    }

    fn small(vocab: &Vocab) -> (ParamStore, Encoder) {
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            embedding_dim: 6,
            section_hidden: 4,
            doc_hidden: 5,
            ..Default::default()
        };
        let enc = Encoder::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        (store, enc)
    }

    #[test]
    fn output_shape_matches_tokens() {
        let doc = doc_with_sections(&[3, 4]);
        let vocab = Vocab::build([&doc], None);
        let (store, enc) = small(&vocab);
        let e = encode_document(&doc, &store, &enc, &vocab, Mode::Eval, 0).unwrap();
        assert_eq!(e.shape(), (7, 10));
    }

    #[test]
    fn long_sections_split_into_windows() {
        let w = section_windows(&[Span::new(0, 600)], 512);
        assert_eq!(w, vec![Span::new(0, 512), Span::new(512, 600)]);
        let doc = doc_with_sections(&[600]);
        let vocab = Vocab::build([&doc], None);
        let (store, enc) = small(&vocab);
        let e = encode_document(&doc, &store, &enc, &vocab, Mode::Eval, 0).unwrap();
        assert_eq!(e.rows, 600);
    }

    #[test]
    fn eval_mode_deterministic_train_mode_stochastic() {
        let doc = doc_with_sections(&[5, 5]);
        let vocab = Vocab::build([&doc], None);
        let (store, enc) = small(&vocab);
        let a = encode_document(&doc, &store, &enc, &vocab, Mode::Eval, 1).unwrap();
        let b = encode_document(&doc, &store, &enc, &vocab, Mode::Eval, 2).unwrap();
        assert_eq!(a, b);
        let c = encode_document(&doc, &store, &enc, &vocab, Mode::Train, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let doc = doc_with_sections(&[3]);
        let vocab = Vocab::build([&doc], None);
        assert_eq!(vocab.id("never-seen"), UNK);
        let mut other = doc.clone();
        other.words[1] = "never-seen".into();
        let (store, enc) = small(&vocab);
        assert!(encode_document(&other, &store, &enc, &vocab, Mode::Eval, 0).is_ok());
    }

    #[test]
    fn mismatched_table_is_shape_error() {
        let doc = doc_with_sections(&[3]);
        let vocab = Vocab::build([&doc], None);
        let (_, enc) = small(&vocab);
        let mut wrong = ParamStore::new();
        let mut other_cfg = enc.config.clone();
        other_cfg.embedding_dim = 9;
        Encoder::new(other_cfg, &mut wrong, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let err = encode_document(&doc, &wrong, &enc, &vocab, Mode::Eval, 0).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn swapping_sections_swaps_contextual_outputs() {
        let doc = doc_with_sections(&[3, 4]);
        let vocab = Vocab::build([&doc], None);
        let (store, enc) = small(&vocab);
        let mut swapped = doc.clone();
        swapped.words = doc.words[3..].iter().chain(&doc.words[..3]).cloned().collect();
        swapped.sections = vec![Span::new(0, 4), Span::new(4, 7)];
        swapped.sentences = swapped.sections.clone();
        let ctx = |d: &Document| {
            let mut g = Graph::eval(&store);
            let v = enc.encode_sections(&mut g, d, &vocab, None).unwrap();
            g.value(v).to_rows()
        };
        let (a, b) = (ctx(&doc), ctx(&swapped));
        assert_eq!(&a[..3], &b[4..]);
        assert_eq!(&a[3..], &b[..4]);
    }

    struct Fixed(usize);
    impl WindowEncoder for Fixed {
        fn dim(&self) -> usize {
            self.0
        }
        fn encode_window(&self, words: &[String]) -> Tensor {
            Tensor::full(words.len(), self.0, 0.5)
        }
    }

    #[test]
    fn external_encoder_uses_contextual_group() {
        let doc = doc_with_sections(&[4]);
        let vocab = Vocab::build([&doc], None);
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            kind: SectionEncoderKind::ExternalContextual,
            external_dim: 3,
            embedding_dim: 2,
            section_hidden: 2,
            doc_hidden: 2,
            ..Default::default()
        };
        let enc = Encoder::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let id = store.id_of("encoder.adapter.w").unwrap();
        assert_eq!(store.param(id).group, ParamGroup::Contextual);
        let mut g = Graph::eval(&store);
        let out = enc.forward(&mut g, &doc, &vocab, Some(&Fixed(3))).unwrap();
        assert_eq!(g.shape(out), (4, 4));
        let mut g = Graph::eval(&store);
        assert!(enc.forward(&mut g, &doc, &vocab, Some(&Fixed(2))).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn one_embedding_per_token(lengths in proptest::collection::vec(1usize..40, 1..5), window in 1usize..30) {
            let doc = doc_with_sections(&lengths);
            let vocab = Vocab::build([&doc], None);
            let mut store = ParamStore::new();
            let cfg = EncoderConfig { vocab_size: vocab.len(), embedding_dim: 3, section_hidden: 2, doc_hidden: 2, window, ..Default::default() };
            let enc = Encoder::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let e = encode_document(&doc, &store, &enc, &vocab, Mode::Eval, 0).unwrap();
            prop_assert_eq!(e.rows, doc.words.len());
            prop_assert!(e.is_finite());
        }
    }

    #[test]
    fn synthetic_docs_encode() {
        let docs = generate_synthetic(1, 2, &SynthConfig::default()).unwrap();
        let vocab = Vocab::build(&docs, None);
        let (store, enc) = small(&vocab);
        for d in &docs {
            let e = encode_document(d, &store, &enc, &vocab, Mode::Eval, 0).unwrap();
            assert_eq!(e.rows, d.words.len());
        }
    }
}
