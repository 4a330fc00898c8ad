//! Joint teacher-forced training, the end-to-end inference cascade and the
//! three diagnostic evaluation regimes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coref::{cluster_by_type, document_scores, salient_clusters, CorefConfig, SurfaceScorer};
use crate::corpus::{CorpusSplit, Document, EntityCluster, EntityType, Mention, RelationKey, RelationTuple, Span};
use crate::encoder::{encode_document, Mode, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{
    cluster_counts, map_clusters, mention_counts, mention_scores, relation_counts, ClusterMapping, Counts,
    MappedCluster, Prf,
};
use crate::model::{write_json, Model, ModelConfig, BEST_METRIC_FILE, TRAIN_LOG_FILE};
use crate::nn::{sigmoid, AdamConfig, Adam, Graph, ParamStore, Tensor, Var};
use crate::relations::{enumerate_candidates, training_candidates, Candidate, RelationInputs};
use crate::seed::derive_seed;
use crate::tagger::{crf_nll, spans_to_tags, tags_to_spans, viterbi, Tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
    /// Weights of the tagging, saliency and relation losses.
    pub loss_weights: [f64; 3],
    /// Sampled negative relation candidates per positive, per document.
    pub negative_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            patience: 7,
            adam: AdamConfig::default(),
            loss_weights: [1.0, 1.0, 1.0],
            negative_ratio: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.negative_ratio < 0.0 {
            return Err(Error::Config("negative_ratio must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub crf: f64,
    pub saliency: f64,
    pub relation: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.crf + self.saliency + self.relation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Unweighted loss sums over the epoch's documents.
    pub loss: LossParts,
    /// Weighted teacher-forced loss on the selection split, eval mode.
    pub dev_loss: f64,
    pub dev_binary_f1: f64,
    pub dev_nary_f1: f64,
    pub best: bool,
}

/// Gold structure consumed by the training losses. Built from annotations
/// alone, so no downstream loss ever sees a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherInputs {
    pub tags: Vec<Tag>,
    pub mentions: Vec<Mention>,
    pub salient: Vec<bool>,
    pub clusters: Vec<EntityCluster>,
    pub binary: (Vec<Candidate>, Vec<bool>),
    pub nary: (Vec<Candidate>, Vec<bool>),
}

impl TeacherInputs {
    pub fn from_gold(doc: &Document, negative_ratio: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let tags = spans_to_tags(doc.words.len(), &doc.mentions)?;
        let clusters = doc.gold_salient_clusters();
        let salient_spans: BTreeSet<Span> = clusters.iter().flat_map(|c| c.spans()).collect();
        let salient = doc.mentions.iter().map(|m| salient_spans.contains(&m.span())).collect();
        let binary = training_candidates(doc, &clusters, 2, negative_ratio, rng)?;
        let nary = training_candidates(doc, &clusters, 4, negative_ratio, rng)?;
        Ok(TeacherInputs {
            tags,
            mentions: doc.mentions.clone(),
            salient,
            clusters,
            binary,
            nary,
        })
    }
}

fn span_rows(mentions: &[Mention]) -> BTreeMap<Span, usize> {
    mentions.iter().enumerate().map(|(i, m)| (m.span(), i)).collect()
}

/// Weighted joint loss of one document, with the unweighted parts.
pub fn document_loss(
    model: &Model,
    g: &mut Graph,
    doc: &Document,
    inputs: &TeacherInputs,
    weights: [f64; 3],
) -> Result<(Var, LossParts)> {
    let emb = model.encoder.forward(g, doc, &model.vocab, None)?;
    let crf = crf_nll(g, emb, &inputs.tags, &model.crf)?;
    let mut parts = LossParts {
        crf: g.scalar(crf),
        ..LossParts::default()
    };
    let mut total = g.scale(crf, weights[0]);
    if let Some(spans) = model.span.forward(g, doc, emb, &inputs.mentions, &model.markers) {
        let sal = model.saliency.loss(g, spans, &inputs.salient);
        parts.saliency = g.scalar(sal);
        let w = g.scale(sal, weights[1]);
        total = g.add(total, w);
        let rows = span_rows(&inputs.mentions);
        let inp = RelationInputs {
            doc,
            spans,
            rows: &rows,
            clusters: &inputs.clusters,
        };
        for (arity, (cands, labels)) in [(2, &inputs.binary), (4, &inputs.nary)] {
            if let Some(l) = model.head(arity).loss(g, &inp, cands, labels)? {
                parts.relation += g.scalar(l);
                let w = g.scale(l, weights[2]);
                total = g.add(total, w);
            }
        }
    }
    Ok((total, parts))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best epoch.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BestMetric {
    epoch: usize,
    dev_nary_f1: f64,
}

/// Trains the coreference scorer, then the joint model one document per
/// step. Model selection uses teacher-forced 4-ary F1 on the dev split, or
/// on the training split when dev is empty. With `checkpoint`, the training
/// log is appended each epoch and the best model is written at the end.
pub fn train_joint(
    split: &CorpusSplit,
    model_config: &ModelConfig,
    config: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Empty("training split has no documents".into()));
    }
    let seed = config.seed;
    let vocab = Vocab::build(&split.train, model_config.max_vocab);
    let mut model = Model::new(model_config.clone(), vocab, seed)?;
    model.scorer = match SurfaceScorer::train(&split.train, &model_config.coref.scorer, derive_seed(seed, "coref")) {
        Ok(s) => s,
        Err(Error::Empty(_)) => SurfaceScorer::default(),
        Err(e) => return Err(e),
    };
    let selection = if split.dev.is_empty() { &split.train } else { &split.dev };

    let log_path = checkpoint.map(|d| d.join(TRAIN_LOG_FILE));
    if let Some(dir) = checkpoint {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(TRAIN_LOG_FILE);
        std::fs::write(&p, "").map_err(|e| Error::io(&p, e))?;
    }

    let mut adam = Adam::new(config.adam, &model.store);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "negatives"));
    let mut best: Option<(usize, f64, f64, ParamStore)> = None;
    let mut log = Vec::new();
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("shuffle.{epoch}"))));
        let mut epoch_loss = LossParts::default();
        for &i in &order {
            let doc = &split.train[i];
            let inputs = TeacherInputs::from_gold(doc, config.negative_ratio, &mut sample_rng)?;
            let grads = {
                let mut g = Graph::new(&model.store, true, derive_seed(seed, &format!("dropout.{epoch}.{i}")));
                let (loss, parts) = document_loss(&model, &mut g, doc, &inputs, config.loss_weights)?;
                if !g.scalar(loss).is_finite() {
                    return Err(Error::NonFinite(format!("loss on {} at epoch {epoch}", doc.doc_id)));
                }
                epoch_loss.crf += parts.crf;
                epoch_loss.saliency += parts.saliency;
                epoch_loss.relation += parts.relation;
                g.backward(loss)
            };
            adam.step(&mut model.store, &grads);
        }
        let dev = relation_rows(&model, selection)?;
        let dev_loss = selection_loss(&model, selection, config)?;
        // Teacher-forced F1 saturates quickly on easy data; equal F1 with a
        // lower dev loss still counts as progress.
        let improved = best
            .as_ref()
            .is_none_or(|b| dev.nary.f1 > b.1 || (dev.nary.f1 == b.1 && dev_loss < b.2));
        if improved {
            best = Some((epoch, dev.nary.f1, dev_loss, model.store.clone()));
        }
        let entry = EpochLog {
            epoch,
            loss: epoch_loss,
            dev_loss,
            dev_binary_f1: dev.binary.f1,
            dev_nary_f1: dev.nary.f1,
            best: improved,
        };
        if let Some(p) = &log_path {
            let mut f = OpenOptions::new().append(true).open(p).map_err(|e| Error::io(p, e))?;
            let line = serde_json::to_string(&entry).map_err(|e| Error::Other(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| Error::io(p, e))?;
        }
        log.push(entry);
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch >= config.patience {
            break;
        }
    }
    let (best_epoch, best_metric, _, store) = best.expect("at least one epoch ran");
    model.store = store;
    if let Some(dir) = checkpoint {
        model.save(dir)?;
        write_json(
            &dir.join(BEST_METRIC_FILE),
            &BestMetric {
                epoch: best_epoch,
                dev_nary_f1: best_metric,
            },
        )?;
    }
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_metric,
    })
}

/// Weighted teacher-forced loss summed over `docs` in eval mode, with
/// negatives drawn from a fixed stream so epochs are comparable.
fn selection_loss(model: &Model, docs: &[Document], config: &TrainConfig) -> Result<f64> {
    let losses: Vec<f64> = docs
        .par_iter()
        .enumerate()
        .map(|(i, doc)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("selection.{i}")));
            let inputs = TeacherInputs::from_gold(doc, config.negative_ratio, &mut rng)?;
            let mut g = Graph::eval(&model.store);
            let (loss, _) = document_loss(model, &mut g, doc, &inputs, config.loss_weights)?;
            Ok(g.scalar(loss))
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum())
}

/// Everything the inference cascade and the diagnostics need from a model.
/// Implemented by [`Model`]; tests substitute oracle stubs.
pub trait DocumentModel: Sync {
    type Encoded: Send;

    fn encode(&self, doc: &Document) -> Result<Self::Encoded>;
    /// Predicted mentions, salient flags unset.
    fn tag(&self, doc: &Document, enc: &Self::Encoded) -> Result<Vec<Mention>>;
    fn saliency(&self, doc: &Document, enc: &Self::Encoded, mentions: &[Mention]) -> Result<Vec<f64>>;
    /// Symmetric pairwise coreference scores over `mentions`.
    fn coref_scores(&self, doc: &Document, mentions: &[Mention]) -> Result<Tensor>;
    fn relation_probabilities(
        &self,
        doc: &Document,
        enc: &Self::Encoded,
        clusters: &[EntityCluster],
        candidates: &[Candidate],
        arity: usize,
    ) -> Result<Vec<f64>>;
    fn saliency_threshold(&self) -> f64;
    fn relation_threshold(&self) -> f64;
    fn coref_config(&self) -> &CorefConfig;
}

impl Model {
    fn span_embeddings(&self, g: &mut Graph, doc: &Document, enc: &Tensor, mentions: &[Mention]) -> Option<Var> {
        let e = g.input(enc.clone());
        self.span.forward(g, doc, e, mentions, &self.markers)
    }
}

impl DocumentModel for Model {
    type Encoded = Tensor;

    fn encode(&self, doc: &Document) -> Result<Tensor> {
        encode_document(doc, &self.store, &self.encoder, &self.vocab, Mode::Eval, 0)
    }

    fn tag(&self, doc: &Document, enc: &Tensor) -> Result<Vec<Mention>> {
        let em = {
            let mut g = Graph::eval(&self.store);
            let e = g.input(enc.clone());
            let v = self.crf.emissions(&mut g, e);
            g.value(v).clone()
        };
        let tags = viterbi(&em, self.crf.scores(&self.store));
        let spans = tags_to_spans(&tags)?;
        // Decoding runs over the whole document; a span straddling a
        // section boundary is not a valid mention.
        Ok(spans
            .into_iter()
            .filter(|m| doc.section_of(m.start).is_some() && doc.section_of(m.start) == doc.section_of(m.end - 1))
            .collect())
    }

    fn saliency(&self, doc: &Document, enc: &Tensor, mentions: &[Mention]) -> Result<Vec<f64>> {
        let mut g = Graph::eval(&self.store);
        Ok(match self.span_embeddings(&mut g, doc, enc, mentions) {
            Some(s) => self.saliency.probabilities(&mut g, s),
            None => Vec::new(),
        })
    }

    fn coref_scores(&self, doc: &Document, mentions: &[Mention]) -> Result<Tensor> {
        let surfaces: Vec<String> = mentions.iter().map(|m| m.surface(&doc.words)).collect();
        document_scores(&doc.doc_id, &surfaces, &self.scorer, self.cache.as_ref())
    }

    fn relation_probabilities(
        &self,
        doc: &Document,
        enc: &Tensor,
        clusters: &[EntityCluster],
        candidates: &[Candidate],
        arity: usize,
    ) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let mut mentions: Vec<Mention> = clusters.iter().flat_map(|c| c.mentions.iter().copied()).collect();
        mentions.sort_by_key(|m| (m.start, m.end));
        mentions.dedup_by_key(|m| m.span());
        let mut g = Graph::eval(&self.store);
        let Some(spans) = self.span_embeddings(&mut g, doc, enc, &mentions) else {
            return Ok(vec![sigmoid(f64::NEG_INFINITY); candidates.len()]);
        };
        let rows = span_rows(&mentions);
        let inp = RelationInputs {
            doc,
            spans,
            rows: &rows,
            clusters,
        };
        self.head(arity).probabilities(&mut g, &inp, candidates)
    }

    fn saliency_threshold(&self) -> f64 {
        self.saliency.threshold
    }

    fn relation_threshold(&self) -> f64 {
        self.nary.threshold
    }

    fn coref_config(&self) -> &CorefConfig {
        &self.config.coref
    }
}

/// A predicted relation as a role map with its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRelation {
    pub roles: BTreeMap<EntityType, String>,
    pub probability: f64,
}

impl ScoredRelation {
    pub fn key(&self) -> RelationKey {
        RelationKey::new(self.roles.iter().map(|(r, id)| (*r, id.clone())).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Prediction {
    /// Predicted mentions with predicted salient flags.
    pub mentions: Vec<Mention>,
    pub clusters: Vec<EntityCluster>,
    /// Ids of the clusters kept by the salient filter.
    pub salient_clusters: Vec<String>,
    pub binary: Vec<ScoredRelation>,
    pub nary: Vec<ScoredRelation>,
}

/// Predicted document in the corpus schema, with relation probabilities
/// and binary relations alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedDocument {
    #[serde(flatten)]
    pub document: Document,
    #[serde(default)]
    pub salient_clusters: Option<Vec<String>>,
    #[serde(default)]
    pub relation_probabilities: Vec<f64>,
    #[serde(default)]
    pub binary_relations: Option<Vec<ScoredRelation>>,
}

/// Reads a JSON-lines file of predicted documents. Blank lines are skipped.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictedDocument>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn save_predictions(path: impl AsRef<Path>, docs: &[PredictedDocument]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for d in docs {
        text += &serde_json::to_string(d).map_err(|e| Error::Other(e.to_string()))?;
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl Prediction {
    pub fn to_document(&self, source: &Document) -> PredictedDocument {
        let relations = self
            .nary
            .iter()
            .map(|r| {
                let slot = |t: EntityType| r.roles.get(&t).cloned().unwrap_or_default();
                RelationTuple::new(
                    slot(EntityType::Dataset),
                    slot(EntityType::Method),
                    slot(EntityType::Metric),
                    slot(EntityType::Task),
                )
            })
            .collect();
        PredictedDocument {
            document: Document {
                doc_id: source.doc_id.clone(),
                words: source.words.clone(),
                sentences: source.sentences.clone(),
                sections: source.sections.clone(),
                mentions: self.mentions.clone(),
                clusters: self.clusters.iter().map(|c| (c.entity_id.clone(), c.spans())).collect(),
                relations,
            },
            salient_clusters: Some(self.salient_clusters.clone()),
            relation_probabilities: self.nary.iter().map(|r| r.probability).collect(),
            binary_relations: Some(self.binary.clone()),
        }
    }
}

fn extract_relations<M: DocumentModel>(
    model: &M,
    doc: &Document,
    enc: &M::Encoded,
    clusters: &[EntityCluster],
    arity: usize,
) -> Result<Vec<ScoredRelation>> {
    let cands = enumerate_candidates(clusters, arity)?;
    let probs = model.relation_probabilities(doc, enc, clusters, &cands, arity)?;
    let thr = model.relation_threshold();
    Ok(cands
        .iter()
        .zip(probs)
        .filter(|(_, p)| *p > thr)
        .map(|(c, probability)| ScoredRelation {
            roles: c.slots.iter().map(|&i| (clusters[i].kind, clusters[i].entity_id.clone())).collect(),
            probability,
        })
        .collect())
}

fn flag_salient(mentions: &[Mention], probs: &[f64], thr: f64) -> Vec<Mention> {
    mentions
        .iter()
        .zip(probs)
        .map(|(m, &p)| Mention { salient: p > thr, ..*m })
        .collect()
}

fn saliency_map(mentions: &[Mention]) -> BTreeMap<Span, bool> {
    mentions.iter().map(|m| (m.span(), m.salient)).collect()
}

/// Full cascade: tag, embed, saliency, coreference clustering, salient
/// filter, relation scoring. Empty stages give empty downstream outputs.
pub fn predict_document<M: DocumentModel>(model: &M, doc: &Document) -> Result<Prediction> {
    let enc = model.encode(doc)?;
    let raw = model.tag(doc, &enc)?;
    if raw.is_empty() {
        return Ok(Prediction::default());
    }
    let probs = model.saliency(doc, &enc, &raw)?;
    let mentions = flag_salient(&raw, &probs, model.saliency_threshold());
    let scores = model.coref_scores(doc, &mentions)?;
    let clusters = cluster_by_type(&mentions, &scores, model.coref_config())?;
    let salient = salient_clusters(&clusters, &saliency_map(&mentions));
    let binary = extract_relations(model, doc, &enc, &salient, 2)?;
    let nary = extract_relations(model, doc, &enc, &salient, 4)?;
    Ok(Prediction {
        mentions,
        clusters,
        salient_clusters: salient.iter().map(|c| c.entity_id.clone()).collect(),
        binary,
        nary,
    })
}

/// Predictions for many documents, fanned out over the rayon pool; output
/// order follows input order.
pub fn predict_corpus<M: DocumentModel>(model: &M, docs: &[Document]) -> Result<Vec<Prediction>> {
    docs.par_iter().map(|d| predict_document(model, d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnoseMode {
    /// Every stage fed gold inputs.
    ComponentGold,
    /// Full predicted cascade.
    EndToEnd,
    /// Predicted clusters that match a gold salient cluster, merged per
    /// gold cluster, then relation extraction.
    GoldSalientClusters,
}

impl DiagnoseMode {
    pub const ALL: [DiagnoseMode; 3] = [
        DiagnoseMode::ComponentGold,
        DiagnoseMode::EndToEnd,
        DiagnoseMode::GoldSalientClusters,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DiagnoseMode::ComponentGold => "component-gold",
            DiagnoseMode::EndToEnd => "end-to-end",
            DiagnoseMode::GoldSalientClusters => "gold-salient-clusters",
        }
    }
}

impl fmt::Display for DiagnoseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DiagnoseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DiagnoseMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown diagnose mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricRow {
    pub fn new(name: &str, p: Prf) -> Self {
        MetricRow {
            name: name.to_string(),
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub mode: DiagnoseMode,
    pub rows: Vec<MetricRow>,
}

impl DiagnoseReport {
    pub fn row(&self, name: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

pub const ROW_MENTION: &str = "Mention";
pub const ROW_COREF: &str = "Coref";
pub const ROW_SALIENT: &str = "Salient";
pub const ROW_CLUSTERS: &str = "Clusters";
pub const ROW_BINARY: &str = "Binary";
pub const ROW_NARY: &str = "4-ary";

/// Per-document counts, summed over a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
struct DocCounts {
    mention: BTreeMap<EntityType, Counts>,
    coref: Counts,
    salient: Counts,
    clusters: Counts,
    binary: Counts,
    nary: Counts,
}

impl DocCounts {
    fn merge(mut self, o: DocCounts) -> DocCounts {
        for (t, c) in o.mention {
            *self.mention.entry(t).or_default() += c;
        }
        self.coref += o.coref;
        self.salient += o.salient;
        self.clusters += o.clusters;
        self.binary += o.binary;
        self.nary += o.nary;
        self
    }

    fn mention_row(&self) -> MetricRow {
        let s = mention_scores(&self.mention);
        let n = s.per_type.len().max(1) as f64;
        MetricRow {
            name: ROW_MENTION.into(),
            precision: s.per_type.values().map(|p| p.precision).sum::<f64>() / n,
            recall: s.per_type.values().map(|p| p.recall).sum::<f64>() / n,
            f1: s.macro_f1,
        }
    }
}

fn gold_entity_of(doc: &Document) -> BTreeMap<Span, String> {
    doc.clusters
        .iter()
        .flat_map(|(id, spans)| spans.iter().map(move |s| (*s, id.clone())))
        .collect()
}

fn relation_pair<M: DocumentModel>(
    model: &M,
    doc: &Document,
    enc: &M::Encoded,
    clusters: &[EntityCluster],
    mapping: &ClusterMapping,
) -> Result<(Counts, Counts)> {
    let mut out = [Counts::default(); 2];
    for (k, arity) in [2, 4].into_iter().enumerate() {
        let pred: Vec<RelationKey> = extract_relations(model, doc, enc, clusters, arity)?
            .iter()
            .map(ScoredRelation::key)
            .collect();
        out[k] = relation_counts(&doc.relations, &pred, mapping, arity);
    }
    Ok((out[0], out[1]))
}

fn component_gold<M: DocumentModel>(model: &M, doc: &Document) -> Result<DocCounts> {
    let enc = model.encode(doc)?;
    let mut c = DocCounts {
        mention: mention_counts(&doc.mentions, &model.tag(doc, &enc)?),
        ..DocCounts::default()
    };
    let gold_salient = doc.gold_salient_clusters();
    let salient_spans: BTreeSet<Span> = gold_salient.iter().flat_map(|c| c.spans()).collect();
    let gold_mentions: Vec<Mention> = doc
        .mentions
        .iter()
        .map(|m| Mention {
            salient: salient_spans.contains(&m.span()),
            ..*m
        })
        .collect();
    if !gold_mentions.is_empty() {
        let scores = model.coref_scores(doc, &gold_mentions)?;
        let entity = gold_entity_of(doc);
        let (mut g, mut p) = (Vec::new(), Vec::new());
        for i in 0..gold_mentions.len() {
            for j in i + 1..gold_mentions.len() {
                if gold_mentions[i].kind != gold_mentions[j].kind {
                    continue;
                }
                let (a, b) = (entity.get(&gold_mentions[i].span()), entity.get(&gold_mentions[j].span()));
                g.push(a.is_some() && a == b);
                p.push(scores.get(i, j) > 0.5);
            }
        }
        c.coref = crate::metrics::binary_counts(&g, &p)?;
        let probs = model.saliency(doc, &enc, &gold_mentions)?;
        let pred_sal: Vec<bool> = probs.iter().map(|&p| p > model.saliency_threshold()).collect();
        let gold_sal: Vec<bool> = gold_mentions.iter().map(|m| m.salient).collect();
        c.salient = crate::metrics::binary_counts(&gold_sal, &pred_sal)?;
        let clusters = cluster_by_type(&gold_mentions, &scores, model.coref_config())?;
        let kept = salient_clusters(&clusters, &saliency_map(&gold_mentions));
        let mapping = map_clusters(&kept, &gold_salient);
        c.clusters = cluster_counts(&kept, &gold_salient, &mapping);
    } else {
        c.clusters = cluster_counts(&[], &gold_salient, &ClusterMapping::default());
    }
    let identity = ClusterMapping::identity(gold_salient.iter().map(|c| c.entity_id.as_str()));
    (c.binary, c.nary) = relation_pair(model, doc, &enc, &gold_salient, &identity)?;
    Ok(c)
}

fn end_to_end<M: DocumentModel>(model: &M, doc: &Document) -> Result<DocCounts> {
    let pred = predict_document(model, doc)?;
    Ok(prediction_counts(doc, &pred.mentions, &salient_of(&pred), &pred.binary, &pred.nary))
}

fn salient_of(pred: &Prediction) -> Vec<EntityCluster> {
    let keep: BTreeSet<&str> = pred.salient_clusters.iter().map(String::as_str).collect();
    pred.clusters.iter().filter(|c| keep.contains(c.entity_id.as_str())).cloned().collect()
}

fn prediction_counts(
    doc: &Document,
    mentions: &[Mention],
    salient: &[EntityCluster],
    binary: &[ScoredRelation],
    nary: &[ScoredRelation],
) -> DocCounts {
    let gold_salient = doc.gold_salient_clusters();
    let mapping = map_clusters(salient, &gold_salient);
    let keys = |rs: &[ScoredRelation]| rs.iter().map(ScoredRelation::key).collect::<Vec<_>>();
    DocCounts {
        mention: mention_counts(&doc.mentions, mentions),
        clusters: cluster_counts(salient, &gold_salient, &mapping),
        binary: relation_counts(&doc.relations, &keys(binary), &mapping, 2),
        nary: relation_counts(&doc.relations, &keys(nary), &mapping, 4),
        ..DocCounts::default()
    }
}

/// Predicted clusters mapped to a gold salient cluster, merged per gold
/// cluster in order of first appearance, with the mapping of merged ids.
pub fn merge_onto_gold(pred: &[EntityCluster], gold: &[EntityCluster]) -> (Vec<EntityCluster>, ClusterMapping) {
    let mapping = map_clusters(pred, gold);
    let mut merged: Vec<EntityCluster> = Vec::new();
    let mut slot: BTreeMap<String, usize> = BTreeMap::new();
    for p in pred {
        let Some(g) = mapping.gold_of(&p.entity_id) else { continue };
        match slot.get(g) {
            Some(&i) => merged[i].mentions.extend(p.mentions.iter().copied()),
            None => {
                slot.insert(g.to_string(), merged.len());
                merged.push(p.clone());
            }
        }
    }
    let mut out = ClusterMapping::default();
    for (g, &i) in &slot {
        merged[i].mentions.sort_by_key(|m| (m.start, m.end));
        out.pairs.insert(
            merged[i].entity_id.clone(),
            MappedCluster {
                gold_id: g.clone(),
                fraction: mapping.pairs[&merged[i].entity_id].fraction,
            },
        );
    }
    (merged, out)
}

fn gold_salient_regime<M: DocumentModel>(model: &M, doc: &Document) -> Result<DocCounts> {
    let enc = model.encode(doc)?;
    let gold_salient = doc.gold_salient_clusters();
    let raw = model.tag(doc, &enc)?;
    let mut c = DocCounts::default();
    let merged = if raw.is_empty() {
        (Vec::new(), ClusterMapping::default())
    } else {
        let probs = model.saliency(doc, &enc, &raw)?;
        let mentions = flag_salient(&raw, &probs, model.saliency_threshold());
        let scores = model.coref_scores(doc, &mentions)?;
        let clusters = cluster_by_type(&mentions, &scores, model.coref_config())?;
        merge_onto_gold(&clusters, &gold_salient)
    };
    let (clusters, mapping) = merged;
    c.clusters = cluster_counts(&clusters, &gold_salient, &mapping);
    (c.binary, c.nary) = relation_pair(model, doc, &enc, &clusters, &mapping)?;
    Ok(c)
}

fn collect_counts<F>(docs: &[Document], f: F) -> Result<DocCounts>
where
    F: Fn(&Document) -> Result<DocCounts> + Sync,
{
    let per_doc: Vec<DocCounts> = docs.par_iter().map(&f).collect::<Result<_>>()?;
    Ok(per_doc.into_iter().fold(DocCounts::default(), DocCounts::merge))
}

/// Metric report of one evaluation regime over gold-annotated documents.
pub fn diagnose<M: DocumentModel>(docs: &[Document], model: &M, mode: DiagnoseMode) -> Result<DiagnoseReport> {
    let rows = match mode {
        DiagnoseMode::ComponentGold => {
            let c = collect_counts(docs, |d| component_gold(model, d))?;
            vec![
                c.mention_row(),
                MetricRow::new(ROW_COREF, c.coref.prf()),
                MetricRow::new(ROW_SALIENT, c.salient.prf()),
                MetricRow::new(ROW_CLUSTERS, c.clusters.prf()),
                MetricRow::new(ROW_BINARY, c.binary.prf()),
                MetricRow::new(ROW_NARY, c.nary.prf()),
            ]
        }
        DiagnoseMode::EndToEnd => {
            let c = collect_counts(docs, |d| end_to_end(model, d))?;
            end_to_end_rows(&c)
        }
        DiagnoseMode::GoldSalientClusters => {
            let c = collect_counts(docs, |d| gold_salient_regime(model, d))?;
            vec![
                MetricRow::new(ROW_CLUSTERS, c.clusters.prf()),
                MetricRow::new(ROW_BINARY, c.binary.prf()),
                MetricRow::new(ROW_NARY, c.nary.prf()),
            ]
        }
    };
    Ok(DiagnoseReport { mode, rows })
}

fn end_to_end_rows(c: &DocCounts) -> Vec<MetricRow> {
    vec![
        c.mention_row(),
        MetricRow::new(ROW_CLUSTERS, c.clusters.prf()),
        MetricRow::new(ROW_BINARY, c.binary.prf()),
        MetricRow::new(ROW_NARY, c.nary.prf()),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationScores {
    pub binary: Prf,
    pub nary: Prf,
}

/// Teacher-forced relation F1: gold salient clusters in, every candidate
/// scored. This is the model-selection metric during training.
pub fn relation_rows<M: DocumentModel>(model: &M, docs: &[Document]) -> Result<RelationScores> {
    let c = collect_counts(docs, |doc| {
        let enc = model.encode(doc)?;
        let gold_salient = doc.gold_salient_clusters();
        let identity = ClusterMapping::identity(gold_salient.iter().map(|c| c.entity_id.as_str()));
        let (binary, nary) = relation_pair(model, doc, &enc, &gold_salient, &identity)?;
        Ok(DocCounts {
            binary,
            nary,
            ..DocCounts::default()
        })
    })?;
    Ok(RelationScores {
        binary: c.binary.prf(),
        nary: c.nary.prf(),
    })
}

/// End-to-end rows for predictions read back from disk. Gold documents
/// without a prediction count as empty predictions.
pub fn evaluate_predictions(gold: &[Document], pred: &[PredictedDocument]) -> Result<DiagnoseReport> {
    let by_id: BTreeMap<&str, &PredictedDocument> = pred.iter().map(|p| (p.document.doc_id.as_str(), p)).collect();
    let c = collect_counts(gold, |doc| {
        let Some(p) = by_id.get(doc.doc_id.as_str()) else {
            return Ok(prediction_counts(doc, &[], &[], &[], &[]));
        };
        let all = p.document.entity_clusters();
        let salient: Vec<EntityCluster> = match &p.salient_clusters {
            Some(ids) => all.into_iter().filter(|c| ids.contains(&c.entity_id)).collect(),
            None => salient_clusters(&all, &saliency_map(&p.document.mentions)),
        };
        let nary: Vec<ScoredRelation> = p
            .document
            .relations
            .iter()
            .map(|r| ScoredRelation {
                roles: r.roles().iter().map(|(t, id)| (*t, id.to_string())).collect(),
                probability: 1.0,
            })
            .collect();
        let binary: Vec<ScoredRelation> = match &p.binary_relations {
            Some(b) => b.clone(),
            None => crate::corpus::binary_relations(&p.document.relations)
                .into_iter()
                .map(|k| ScoredRelation {
                    roles: k.0.into_iter().collect(),
                    probability: 1.0,
                })
                .collect(),
        };
        Ok(prediction_counts(doc, &p.document.mentions, &salient, &binary, &nary))
    })?;
    Ok(DiagnoseReport {
        mode: DiagnoseMode::EndToEnd,
        rows: end_to_end_rows(&c),
    })
}
