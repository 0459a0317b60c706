//! On-disk layout of a run directory.
//!
//! ```text
//! kg/triples.tsv, kg/names.tsv, kg/vocab.txt
//! base/runlog.csv, base/model/                        (warmed-up base encoder)
//! corpus/lesson<N>.jsonl
//! pretrain/<variant>-seed<S>/runlog.csv, …/<label>/   (checkpoints)
//! qa/train.jsonl, qa/test.jsonl
//! finetune/<name>/runlog.csv, …/model/               (checkpoint)
//! eval/<name>-<split>.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use kgc_core::kg::{load_kg, synthetic, KnowledgeGraph};
use kgc_core::tokenizer::Vocabulary;
use kgc_neural::checkpoint::{self, CheckpointMeta, Manifest};
use kgc_neural::model::Model;

use crate::base::warm_up_base;
use crate::config::Config;
use crate::qa::{build_synthetic_qa, read_jsonl, write_jsonl, QaSplit};
use crate::{io_err, HarnessError, Result};

pub const VOCAB_FILE: &str = "vocab.txt";

pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn dir(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.path(rel);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
        Ok(p)
    }

    /// Generates the synthetic graph and its vocabulary and writes both.
    pub fn build_kg(&self, cfg: &Config) -> Result<(KnowledgeGraph, Vocabulary)> {
        let kg = synthetic::generate(&cfg.kg)?;
        let vocab = Vocabulary::from_kg(&kg, cfg.vocab.max_size, cfg.vocab.min_freq)?;
        let dir = self.dir("kg")?;
        kg.save(&dir.join("triples.tsv"), &dir.join("names.tsv"))?;
        vocab.save(&dir.join(VOCAB_FILE))?;
        Ok((kg, vocab))
    }

    pub fn load_kg(&self) -> Result<(KnowledgeGraph, Vocabulary)> {
        let dir = self.path("kg");
        let kg = load_kg(&dir.join("triples.tsv"), &dir.join("names.tsv"))?;
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        Ok((kg, vocab))
    }

    /// The QA split, built and written on first use.
    pub fn qa(&self, kg: &KnowledgeGraph, cfg: &Config) -> Result<QaSplit> {
        let (train, test) = (self.path("qa/train.jsonl"), self.path("qa/test.jsonl"));
        if train.exists() && test.exists() {
            return Ok(QaSplit {
                train: read_jsonl(&train)?,
                test: read_jsonl(&test)?,
            });
        }
        let split = build_synthetic_qa(kg, &cfg.qa, cfg.seed)?;
        self.dir("qa")?;
        write_jsonl(&train, &split.train)?;
        write_jsonl(&test, &split.test)?;
        Ok(split)
    }

    /// The base model every run starts from: initialized with the base seed
    /// and warmed up on scrambled facts. Built and saved on first use.
    pub fn base(&self, kg: &KnowledgeGraph, vocab: &Vocabulary, cfg: &Config) -> Result<Model<f32>> {
        let dir = self.path("base/model");
        let model_cfg = cfg.model_for(vocab.len());
        let run = serde_json::to_value(&cfg.base).map_err(|e| HarnessError::Config(e.to_string()))?;
        if dir.join(checkpoint::MANIFEST).exists() {
            let manifest = checkpoint::read_manifest(&dir)?;
            if manifest.model != model_cfg || manifest.meta.run != run {
                return Err(HarnessError::Config(format!(
                    "{} was built with other model or base settings; remove it to rebuild",
                    dir.display()
                )));
            }
            return Ok(checkpoint::load(&dir, Some(&model_cfg))?.0);
        }
        let mut model = Model::new(model_cfg, cfg.base.seed)?;
        let log = warm_up_base(kg, vocab, &mut model, &cfg.base)?;
        self.dir("base")?;
        log.write_csv(&self.path("base/runlog.csv"))?;
        let meta = CheckpointMeta {
            step: 0,
            lesson: None,
            variant: None,
            seed: cfg.base.seed,
            parent: None,
            run,
        };
        save_checkpoint(&dir, &model, meta, vocab)?;
        Ok(model)
    }

    pub fn pretrain_dir(&self, variant: &str, seed: u64) -> PathBuf {
        self.path(format!("pretrain/{variant}-seed{seed}"))
    }
}

/// Checkpoint plus the vocabulary it was trained with.
pub fn save_checkpoint(dir: &Path, model: &Model<f32>, meta: CheckpointMeta, vocab: &Vocabulary) -> Result<()> {
    checkpoint::save(dir, model, meta)?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model<f32>, Manifest)> {
    Ok(checkpoint::load(dir, None)?)
}
