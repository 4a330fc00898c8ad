use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use docie_core::coref::ScoreCache;
use docie_core::corpus::{
    corpus_stats, generate_synthetic, load_corpus, load_corpus_with, read_kb, save_corpus, split_corpus, IngestOptions,
};
use docie_core::kbalign::{correction_stats, link_mentions, select_epsilon, LabeledDoc};
use docie_core::pipeline::{diagnose, evaluate_predictions, load_predictions, predict_corpus, save_predictions, train_joint};
use docie_core::{derive_seed, emit_report, CorpusSplit, Document, EntityType, Model, Table};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Cli, Command, UsageError};

/// Resolves an input path from the flag or the config file and checks that
/// it exists.
fn input(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let p = flag
        .or_else(|| file.clone())
        .ok_or_else(|| UsageError(format!("missing required --{name}")))?;
    if !p.exists() {
        return Err(UsageError(format!("--{name}: no such file: {}", p.display())).into());
    }
    Ok(p)
}

fn optional_input(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<Option<PathBuf>> {
    match flag.or_else(|| file.clone()) {
        Some(p) => input(Some(p), &None, name).map(Some),
        None => Ok(None),
    }
}

fn output(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| file.clone())
        .ok_or_else(|| UsageError(format!("missing required --{name}")).into())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn load_model(dir: &Path) -> Result<Model> {
    let mut model = Model::load(dir)?;
    model.cache = ScoreCache::from_env();
    Ok(model)
}

pub fn run(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(f) = cli.global.format {
        cfg.format = f;
    }
    if cli.global.jobs.is_some() {
        cfg.jobs = cli.global.jobs;
    }
    if let Some(j) = cfg.jobs {
        if j == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let paths = cfg.paths.clone();
    let tables = match cli.command {
        Command::Ingest {
            input: i,
            output: o,
            drop_overlaps,
            no_snap,
        } => {
            let src = input(i, &paths.corpus, "input")?;
            let dst = output(o, &paths.output, "output")?;
            let opts = IngestOptions {
                drop_overlaps,
                snap_sections: !no_snap,
            };
            let docs = load_corpus_with(&src, opts)?;
            ensure_parent(&dst)?;
            save_corpus(&dst, &docs)?;
            vec![Table::new("ingest", &["value"]).row("documents", vec![docs.len() as f64])]
        }
        Command::Stats { corpus } => {
            let docs = load_corpus(input(corpus, &paths.corpus, "corpus")?)?;
            vec![Table::from(&corpus_stats(&docs)?)]
        }
        Command::Synth {
            output: o,
            documents,
            noisy,
            split_dir,
        } => synth(&cfg, output(o, &paths.output, "output")?, documents, noisy, split_dir)?,
        Command::Train {
            corpus,
            train,
            dev,
            output: o,
            preset,
            epochs,
            patience,
        } => {
            let split = if train.is_some() || (corpus.is_none() && paths.train.is_some()) {
                let train = load_corpus(input(train, &paths.train, "train")?)?;
                let dev = match optional_input(dev, &paths.dev, "dev")? {
                    Some(p) => load_corpus(p)?,
                    None => Vec::new(),
                };
                CorpusSplit {
                    train,
                    dev,
                    test: Vec::new(),
                }
            } else {
                let docs = load_corpus(input(corpus, &paths.corpus, "corpus")?)?;
                split_corpus(&docs, cfg.split.unwrap_or_default(), derive_seed(cfg.seed, "split"))?
            };
            let dst = output(o, &paths.output, "output")?;
            let model_config = cfg.model_config(preset.unwrap_or(cfg.preset))?;
            let mut training = cfg.training.clone();
            training.seed = derive_seed(cfg.seed, "train");
            if let Some(e) = epochs {
                training.epochs = e;
            }
            if let Some(p) = patience {
                training.patience = p;
            }
            let outcome = train_joint(&split, &model_config, &training, Some(&dst))?;
            vec![Table::new("training", &["value"])
                .row("train_documents", vec![split.train.len() as f64])
                .row("dev_documents", vec![split.dev.len() as f64])
                .row("epochs_run", vec![outcome.log.len() as f64])
                .row("best_epoch", vec![outcome.best_epoch as f64])
                .row("best_dev_4ary_f1", vec![outcome.best_metric])]
        }
        Command::Predict {
            model,
            corpus,
            output: o,
        } => {
            let model = load_model(&input(model, &paths.model, "model")?)?;
            let docs = load_corpus(input(corpus, &paths.corpus, "corpus")?)?;
            let dst = output(o, &paths.output, "output")?;
            let preds = predict_corpus(&model, &docs)?;
            let out: Vec<_> = preds.iter().zip(&docs).map(|(p, d)| p.to_document(d)).collect();
            ensure_parent(&dst)?;
            save_predictions(&dst, &out)?;
            vec![Table::new("predict", &["value"])
                .row("documents", vec![out.len() as f64])
                .row("mentions", vec![preds.iter().map(|p| p.mentions.len()).sum::<usize>() as f64])
                .row("nary_relations", vec![preds.iter().map(|p| p.nary.len()).sum::<usize>() as f64])]
        }
        Command::Evaluate { gold, pred } => {
            let gold = input(gold, &paths.gold, "gold")?;
            let pred = input(pred, &paths.pred, "pred")?;
            let gold = load_corpus(gold)?;
            let pred = load_predictions(pred)?;
            vec![Table::from(&evaluate_predictions(&gold, &pred)?)]
        }
        Command::Diagnose { model, corpus, mode } => {
            let model = load_model(&input(model, &paths.model, "model")?)?;
            let docs = load_corpus(input(corpus, &paths.corpus, "corpus")?)?;
            vec![Table::from(&diagnose(&docs, &model, mode)?)]
        }
        Command::Align {
            corpus,
            kb,
            labeled,
            corrected,
            epsilon,
            output: o,
        } => align(
            &cfg,
            input(corpus, &paths.corpus, "corpus")?,
            input(kb, &paths.kb, "kb")?,
            optional_input(labeled, &paths.labeled, "labeled")?,
            optional_input(corrected, &paths.corrected, "corrected")?,
            epsilon,
            o.or(paths.output.clone()),
        )?,
    };
    Ok(emit_report(&tables, cfg.format))
}

fn synth(cfg: &RunConfig, dst: PathBuf, documents: Option<usize>, noisy: bool, split_dir: Option<PathBuf>) -> Result<Vec<Table>> {
    let n = documents.unwrap_or(cfg.synth.documents);
    let settings = cfg.synth_config(noisy || cfg.synth.noisy)?;
    let docs = generate_synthetic(derive_seed(cfg.seed, "synth"), n, &settings)?;
    ensure_parent(&dst)?;
    save_corpus(&dst, &docs)?;
    let mut table = Table::new("synth", &["value"]).row("documents", vec![n as f64]);
    if let Some(dir) = split_dir {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let split = split_corpus(&docs, cfg.split.unwrap_or_default(), derive_seed(cfg.seed, "split"))?;
        for (name, part) in [("train", &split.train), ("dev", &split.dev), ("test", &split.test)] {
            save_corpus(dir.join(format!("{name}.jsonl")), part)?;
            table = table.row(name, vec![part.len() as f64]);
        }
    }
    Ok(vec![table])
}

#[derive(Serialize)]
struct LinkLine<'a> {
    doc_id: &'a str,
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    kind: EntityType,
    mention: String,
    entity: Option<String>,
    similarity: f64,
}

fn read_labeled(path: &Path) -> Result<Vec<LabeledDoc>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                docie_core::Error::Parse {
                    line: i + 1,
                    message: format!("{}: {e}", path.display()),
                }
                .into()
            })
        })
        .collect()
}

/// Distinct entity names per role, in KB order.
fn kb_names(path: &Path) -> Result<BTreeMap<EntityType, Vec<String>>> {
    let mut names: BTreeMap<EntityType, Vec<String>> = BTreeMap::new();
    for rec in read_kb(path)? {
        for role in EntityType::ALL {
            let list = names.entry(role).or_default();
            let n = rec.entity(role);
            if !list.iter().any(|x| x == n) {
                list.push(n.to_string());
            }
        }
    }
    Ok(names)
}

fn align(
    cfg: &RunConfig,
    corpus: PathBuf,
    kb: PathBuf,
    labeled: Option<PathBuf>,
    corrected: Option<PathBuf>,
    epsilon: Option<f64>,
    dst: Option<PathBuf>,
) -> Result<Vec<Table>> {
    let docs = load_corpus(corpus)?;
    let names = kb_names(&kb)?;
    let eps = match (&labeled, epsilon) {
        (_, Some(e)) => e,
        (Some(p), None) => select_epsilon(&read_labeled(p)?, &cfg.kbalign.grid)?,
        (None, None) => cfg.kbalign.epsilon,
    };
    let mut lines = Vec::new();
    for doc in &docs {
        for m in &doc.mentions {
            let surface = m.surface(&doc.words);
            let entities = names.get(&m.kind).map(Vec::as_slice).unwrap_or(&[]);
            let d = link_mentions(&[surface], entities, eps)?.remove(0);
            lines.push(LinkLine {
                doc_id: &doc.doc_id,
                start: m.start,
                end: m.end,
                kind: m.kind,
                mention: d.mention,
                entity: d.entity,
                similarity: d.similarity,
            });
        }
    }
    let linked = lines.iter().filter(|l| l.entity.is_some()).count();
    if let Some(dst) = dst {
        ensure_parent(&dst)?;
        let mut f = std::io::BufWriter::new(fs::File::create(&dst).with_context(|| format!("creating {}", dst.display()))?);
        for l in &lines {
            writeln!(f, "{}", serde_json::to_string(l)?)?;
        }
        f.flush()?;
    }
    let mut tables = vec![Table::new("alignment (lowercase alphanumeric word tokens)", &["value"])
        .row("epsilon", vec![eps])
        .row("mentions", vec![lines.len() as f64])
        .row("linked", vec![linked as f64])];
    if let Some(p) = corrected {
        let fixed: BTreeMap<String, Document> = load_corpus(p)?.into_iter().map(|d| (d.doc_id.clone(), d)).collect();
        let mut auto = Vec::new();
        let mut corr = Vec::new();
        for d in &docs {
            let c = fixed
                .get(&d.doc_id)
                .ok_or_else(|| UsageError(format!("corrected corpus lacks document {}", d.doc_id)))?;
            auto.push(d.mentions.clone());
            corr.push(c.mentions.clone());
        }
        tables.extend(Vec::<Table>::from(&correction_stats(&auto, &corr)?));
    }
    Ok(tables)
}
