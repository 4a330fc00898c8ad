//! The full parameterized model and its checkpoint format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coref::{CorefConfig, ScoreCache, SurfaceScorer};
use crate::encoder::{Encoder, EncoderConfig, Vocab};
use crate::error::{Error, Result};
use crate::mentions::{MarkerSet, MentionConfig, SaliencyHead, SpanEmbedder};
use crate::nn::{ParamStore, Tensor};
use crate::relations::{RelationConfig, RelationHead};
use crate::seed::derive_seed;
use crate::tagger::Crf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    /// `vocab_size` is overwritten with the vocabulary length at build time.
    pub encoder: EncoderConfig,
    pub mentions: MentionConfig,
    pub coref: CorefConfig,
    pub relations: RelationConfig,
    /// Cap on vocabulary size, `None` for every training token.
    pub max_vocab: Option<usize>,
}

impl ModelConfig {
    /// Smaller widths that keep a full CPU training run on a few hundred
    /// synthetic documents within minutes.
    pub fn desk() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                embedding_dim: 32,
                section_hidden: 32,
                doc_hidden: 32,
                ..EncoderConfig::default()
            },
            mentions: MentionConfig {
                attention_hidden: 32,
                saliency_hidden: vec![64],
                ..MentionConfig::default()
            },
            coref: CorefConfig::default(),
            relations: RelationConfig {
                section_hidden: vec![64, 64],
                doc_hidden: vec![64],
                ..RelationConfig::default()
            },
            max_vocab: None,
        }
    }
}

/// Encoder, tagger, span embedder, saliency and relation heads over one
/// parameter store, plus the separately trained coreference scorer.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub crf: Crf,
    pub span: SpanEmbedder,
    pub saliency: SaliencyHead,
    pub binary: RelationHead,
    pub nary: RelationHead,
    pub scorer: SurfaceScorer,
    pub markers: MarkerSet,
    pub cache: Option<ScoreCache>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    model: ModelConfig,
    vocab: Vocab,
    scorer: SurfaceScorer,
    seed: u64,
}

pub const CONFIG_FILE: &str = "config.json";
pub const PARAMS_FILE: &str = "params.json";
pub const BEST_METRIC_FILE: &str = "best_metric.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

impl Model {
    /// Freshly initialized parameters; deterministic in `seed`.
    pub fn new(mut config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.encoder.vocab_size = vocab.len();
        config.encoder.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "model.init"));
        let mut store = ParamStore::new();
        let encoder = Encoder::new(config.encoder.clone(), &mut store, &mut rng)?;
        let d = encoder.output_dim();
        let crf = Crf::new(&mut store, "tagger", d, &mut rng);
        let span = SpanEmbedder::new(&mut store, "span", d, &config.mentions, &mut rng);
        let sd = span.dim();
        let saliency = SaliencyHead::new(&mut store, "saliency", sd, &config.mentions, &mut rng);
        let binary = RelationHead::new(&mut store, "relation.binary", 2, sd, &config.relations, &mut rng)?;
        let nary = RelationHead::new(&mut store, "relation.nary", 4, sd, &config.relations, &mut rng)?;
        let markers = MarkerSet::new(&config.mentions.markers);
        Ok(Model {
            config,
            vocab,
            store,
            encoder,
            crf,
            span,
            saliency,
            binary,
            nary,
            scorer: SurfaceScorer::default(),
            markers,
            cache: None,
        })
    }

    pub fn head(&self, arity: usize) -> &RelationHead {
        if arity == 2 {
            &self.binary
        } else {
            &self.nary
        }
    }

    /// Writes `config.json` and `params.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = CheckpointConfig {
            model: self.config.clone(),
            vocab: self.vocab.clone(),
            scorer: self.scorer.clone(),
            seed: self.config.encoder.seed,
        };
        write_json(&dir.join(CONFIG_FILE), &cfg)?;
        write_json(&dir.join(PARAMS_FILE), &self.store.to_named())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg: CheckpointConfig = read_json(&dir.join(CONFIG_FILE))?;
        let params: BTreeMap<String, Tensor> = read_json(&dir.join(PARAMS_FILE))?;
        let mut model = Model::new(cfg.model, cfg.vocab, cfg.seed)?;
        model.store.load_named(&params)?;
        model.scorer = cfg.scorer;
        Ok(model)
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
