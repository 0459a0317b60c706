//! Stand-in for an off-the-shelf language model. The base encoder is trained
//! with plain MLM on a copy of the graph whose heads are permuted within each
//! relation: same vocabulary, same sentence shapes, none of the true facts.

use std::collections::HashSet;

use kgc_core::curriculum::{CorpusGenerator, Lesson, LessonSpec};
use kgc_core::kg::{KgBuilder, KnowledgeGraph, Tail};
use kgc_core::seed::derive_seed;
use kgc_core::tokenizer::Vocabulary;
use kgc_neural::model::Model;
use kgc_neural::optim::AdamWConfig;
use kgc_neural::params::Role;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PretrainConfig;
use crate::pretrain::run_lesson;
use crate::runlog::RunLog;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseConfig {
    /// 0 leaves the base at its random initialization.
    pub epochs: u32,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig {
            epochs: 0,
            batch_size: 32,
            peak_lr: 1e-3,
            optimizer: AdamWConfig::default(),
            seed: 1000,
        }
    }
}

/// The graph with heads shuffled among the triples of each relation. Names,
/// relations and per-relation head and tail frequencies are kept; exact
/// repeats and true facts produced by the shuffle are dropped.
pub fn scrambled_facts(kg: &KnowledgeGraph, seed: u64) -> Result<KnowledgeGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 11, 0, 0));
    let mut b = KgBuilder::new();
    for e in kg.entity_ids() {
        b.names(kg.entity_key(e), kg.names(e)?.iter().map(String::as_str));
    }
    for r in kg.relation_ids() {
        b.names(kg.relation_key(r), kg.names(r)?.iter().map(String::as_str));
    }
    let truth: HashSet<(u32, u32, String)> = kg
        .triples()
        .iter()
        .map(|t| {
            (
                t.head.0,
                t.relation.0,
                kg.tail_text(&t.tail).unwrap_or_default().to_string(),
            )
        })
        .collect();
    let mut kept = HashSet::new();
    for r in kg.relation_ids() {
        let members: Vec<usize> = (0..kg.len()).filter(|&i| kg.triple(i).relation == r).collect();
        let mut heads: Vec<_> = members.iter().map(|&i| kg.triple(i).head).collect();
        heads.shuffle(&mut rng);
        for (&i, head) in members.iter().zip(heads) {
            let t = kg.triple(i);
            let key = (head.0, r.0, kg.tail_text(&t.tail)?.to_string());
            if truth.contains(&key) || !kept.insert(key) {
                continue;
            }
            match &t.tail {
                Tail::Entity(e) => b.entity_triple(kg.entity_key(head), kg.relation_key(r), kg.entity_key(*e)),
                Tail::Attribute(v) => b.attribute_triple(kg.entity_key(head), kg.relation_key(r), v.clone()),
            };
        }
    }
    Ok(b.build()?)
}

/// Trains the base and MLM head on lesson-1 sentences of the scrambled graph.
/// The adapter and QA head stay at their initial values.
pub fn warm_up_base(
    kg: &KnowledgeGraph,
    vocab: &Vocabulary,
    model: &mut Model<f32>,
    cfg: &BaseConfig,
) -> Result<RunLog> {
    let mut log = RunLog::default();
    if cfg.epochs == 0 {
        return Ok(log);
    }
    let scrambled = scrambled_facts(kg, cfg.seed)?;
    model.store.set_trainable(Role::BaseLm, true);
    model.store.set_trainable(Role::Adapter, false);
    model.store.set_trainable(Role::MlmHead, true);
    model.store.set_trainable(Role::QaHead, false);
    let mut spec = LessonSpec::new(Lesson::Facts);
    spec.masking.max_len = spec.masking.max_len.min(model.config.max_positions);
    let generator = CorpusGenerator::new(&scrambled, vocab, cfg.seed);
    let train = PretrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        peak_lr: cfg.peak_lr,
        optimizer: cfg.optimizer,
        ..PretrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0, 2, 0));
    run_lesson(&generator, &spec, model, &train, &mut rng, 0, &mut log)?;
    Ok(log)
}
