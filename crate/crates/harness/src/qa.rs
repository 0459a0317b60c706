//! Synthetic cloze questions over graph facts.
//!
//! An easy question is one fact with its tail replaced by a slot; a hard one
//! is a multi-hop or multi-object composition with the final tail replaced.
//! Candidates are the answer plus distractors taken from tails of the same
//! relation within the same split. Triples are split into train and test sets first and a
//! question belongs to a split only when all of its triples do.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use kgc_core::curriculum::{lesson3_plan, PatternKind, PatternTag, ReasoningPattern};
use kgc_core::injection::{single_triple_plan, CompositionPlan, Field, FieldRef, Strategy};
use kgc_core::kg::{normalize_whitespace, AttributeKind, KnowledgeGraph, RelationId, Tail};
use kgc_core::seed::derive_seed;
use kgc_core::tokenizer::{Vocabulary, CLS_ID, MASK_ID, SEP_ID};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::QaConfig;
use crate::{io_err, HarnessError, Result};

/// Placeholder for the removed answer in question text.
pub const SLOT: &str = "[?]";

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    /// Answerable from one fact.
    Easy,
    /// Needs several facts.
    Hard,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorSource {
    SameRelation,
    /// The relation had too few distinct tails; some distractors are other
    /// values of the same kind.
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaProvenance {
    /// Graph positions of the generating triples; the last one carries the answer.
    pub triples: Vec<usize>,
    pub pattern: PatternTag,
    pub distractors: DistractorSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaExample {
    /// Question text with the answer span replaced by [`SLOT`].
    pub question: String,
    pub gold: Vec<String>,
    pub candidates: Vec<String>,
    pub difficulty: Difficulty,
    pub provenance: QaProvenance,
}

impl QaExample {
    pub fn gold_flags(&self) -> Vec<bool> {
        self.candidates.iter().map(|c| self.gold.contains(c)).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QaSplit {
    pub train: Vec<QaExample>,
    pub test: Vec<QaExample>,
}

/// Test-set membership of every triple.
pub fn test_triples(count: usize, test_fraction: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 9, 0, 0));
    (0..count).map(|_| rng.gen_bool(test_fraction)).collect()
}

/// Every tail that answers the question generated from `triples`, found by
/// walking the graph from the first head.
pub fn valid_answers(kg: &KnowledgeGraph, kind: PatternKind, triples: &[usize]) -> Vec<Tail> {
    let first = kg.triple(triples[0]);
    let relations: Vec<RelationId> = match kind {
        PatternKind::MultiHop => triples.iter().map(|&t| kg.triple(t).relation).collect(),
        PatternKind::MultiObject => vec![first.relation],
    };
    let mut frontier = vec![Tail::Entity(first.head)];
    for r in relations {
        let mut next = Vec::new();
        for e in frontier.iter().filter_map(Tail::entity) {
            for &t in kg.by_head_relation(e, r) {
                let tail = kg.triple(t).tail.clone();
                if !next.contains(&tail) {
                    next.push(tail);
                }
            }
        }
        frontier = next;
    }
    frontier
}

fn norm(s: &str) -> String {
    normalize_whitespace(&s.to_lowercase())
}

fn surface_forms(kg: &KnowledgeGraph, tail: &Tail) -> Vec<String> {
    match tail {
        Tail::Entity(e) => kg
            .names(*e)
            .map(|n| n.iter().map(|s| norm(s)).collect())
            .unwrap_or_default(),
        Tail::Attribute(v) => vec![norm(v.rendering())],
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum TailKind {
    Entity,
    Attribute(AttributeKind),
}

fn tail_kind(tail: &Tail) -> TailKind {
    match tail {
        Tail::Entity(_) => TailKind::Entity,
        Tail::Attribute(v) => TailKind::Attribute(v.kind()),
    }
}

struct Pools {
    /// Triples per (split, relation).
    by_relation: HashMap<(bool, RelationId), Vec<usize>>,
    by_kind: HashMap<TailKind, Vec<String>>,
}

impl Pools {
    fn new(kg: &KnowledgeGraph, in_test: &[bool]) -> Result<Self> {
        let mut by_relation: HashMap<(bool, RelationId), Vec<usize>> = HashMap::new();
        let mut by_kind: HashMap<TailKind, HashSet<String>> = HashMap::new();
        for (i, t) in kg.triples().iter().enumerate() {
            by_relation.entry((in_test[i], t.relation)).or_default().push(i);
            by_kind
                .entry(tail_kind(&t.tail))
                .or_default()
                .insert(kg.tail_text(&t.tail)?.to_string());
        }
        for e in kg.entity_ids() {
            by_kind
                .entry(TailKind::Entity)
                .or_default()
                .insert(kg.canonical_name(e)?.to_string());
        }
        let by_kind = by_kind
            .into_iter()
            .map(|(k, v)| {
                let mut v: Vec<String> = v.into_iter().collect();
                v.sort();
                (k, v)
            })
            .collect();
        Ok(Pools { by_relation, by_kind })
    }
}

/// Answer first, then distractors; candidates are shuffled afterwards.
fn pick_distractors<R: Rng>(
    kg: &KnowledgeGraph,
    pools: &Pools,
    answer: &Tail,
    relation: RelationId,
    test: bool,
    excluded: &HashSet<String>,
    wanted: usize,
    rng: &mut R,
) -> Result<(Vec<String>, DistractorSource)> {
    let mut chosen: Vec<String> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut accept = |text: &str, chosen: &mut Vec<String>| {
        let n = norm(text);
        if !excluded.contains(&n) && seen.insert(n) {
            chosen.push(text.to_string());
        }
    };
    // Drawing triples of the question's own split (rather than distinct
    // tails) keeps distractors as frequent as answers and keeps training
    // answers from reappearing as test distractors.
    let mut pool = pools.by_relation.get(&(test, relation)).cloned().unwrap_or_default();
    pool.shuffle(rng);
    for t in pool {
        if chosen.len() == wanted {
            break;
        }
        accept(kg.tail_text(&kg.triple(t).tail)?, &mut chosen);
    }
    if chosen.len() == wanted {
        return Ok((chosen, DistractorSource::SameRelation));
    }
    let mut global = pools.by_kind[&tail_kind(answer)].clone();
    global.shuffle(rng);
    for text in global {
        if chosen.len() == wanted {
            break;
        }
        accept(&text, &mut chosen);
    }
    if chosen.len() < wanted {
        return Err(HarnessError::Config(format!(
            "cannot find {wanted} distinct distractors for relation {}",
            kg.relation_key(relation)
        )));
    }
    Ok((chosen, DistractorSource::Fallback))
}

fn slot_question(plan: &CompositionPlan, answer_slot: usize) -> Option<String> {
    let target = FieldRef::new(answer_slot, Field::Tail);
    let mut plan = plan.clone();
    let seg = plan.segments.iter_mut().find(|s| s.sources.contains(&target))?;
    seg.text = SLOT.to_string();
    Some(plan.render())
}

fn make_example<R: Rng>(
    kg: &KnowledgeGraph,
    pools: &Pools,
    kind: Option<PatternKind>,
    triples: Vec<usize>,
    test: bool,
    candidates: usize,
    rng: &mut R,
) -> Result<Option<QaExample>> {
    let (plan, difficulty, pattern) = match kind {
        None => (
            single_triple_plan(kg, triples[0], &Strategy::Concatenate, rng)
                .map_err(kgc_core::curriculum::CurriculumError::from)?,
            Difficulty::Easy,
            PatternTag::Single,
        ),
        Some(kind) => {
            let p = ReasoningPattern {
                kind,
                arity: triples.len(),
            };
            (lesson3_plan(kg, &triples, &p, rng)?, Difficulty::Hard, kind.into())
        }
    };
    let Some(question) = slot_question(&plan, triples.len() - 1) else {
        return Ok(None);
    };
    let last = kg.triple(*triples.last().unwrap());
    let answer = kg.tail_text(&last.tail)?.to_string();
    let excluded: HashSet<String> = valid_answers(kg, kind.unwrap_or(PatternKind::MultiObject), &triples)
        .iter()
        .flat_map(|t| surface_forms(kg, t))
        .chain(std::iter::once(norm(&answer)))
        .collect();
    let (distractors, source) = pick_distractors(
        kg,
        pools,
        &last.tail,
        last.relation,
        test,
        &excluded,
        candidates - 1,
        rng,
    )?;
    let mut all = distractors;
    all.push(answer.clone());
    all.shuffle(rng);
    Ok(Some(QaExample {
        question,
        gold: vec![answer],
        candidates: all,
        difficulty,
        provenance: QaProvenance {
            triples,
            pattern,
            distractors: source,
        },
    }))
}

fn sample_hard<R: Rng>(kg: &KnowledgeGraph, rng: &mut R) -> Option<(PatternKind, Vec<usize>)> {
    let support = kg.pattern_support(3);
    let options: Vec<(PatternKind, usize)> = [PatternKind::MultiHop, PatternKind::MultiObject]
        .into_iter()
        .flat_map(|k| [2, 3].map(|a| (k, a)))
        .filter(|&(k, a)| match k {
            PatternKind::MultiHop => support.chain(a),
            PatternKind::MultiObject => support.multi_object(a),
        })
        .collect();
    let &(kind, arity) = options.choose(rng)?;
    let triples = match kind {
        PatternKind::MultiHop => kg.sample_chain(arity, rng),
        PatternKind::MultiObject => kg.sample_multi_object(arity, rng),
    }
    .ok()?;
    Some((kind, triples))
}

/// Builds train and test questions. Train and test never share a triple.
pub fn build_synthetic_qa(kg: &KnowledgeGraph, cfg: &QaConfig, seed: u64) -> Result<QaSplit> {
    if kg.is_empty() {
        return Err(HarnessError::Config("empty graph".into()));
    }
    let in_test = test_triples(kg.len(), cfg.test_fraction, seed);
    let pools = Pools::new(kg, &in_test)?;
    let n_test = (cfg.questions as f64 * cfg.test_fraction).round() as usize;
    let targets = [cfg.questions - n_test, n_test];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 9, 1, 0));
    let mut out = [Vec::new(), Vec::new()];

    let mut order: Vec<usize> = (0..kg.len()).collect();
    order.shuffle(&mut rng);
    for (split, &target) in targets.iter().enumerate() {
        let hard_target = (target as f64 * cfg.hard_fraction).round() as usize;
        let easy_target = target - hard_target;
        let in_split = |t: &usize| in_test[*t] == (split == 1);

        for &t in order.iter().filter(|t| in_split(t)).take(easy_target) {
            if let Some(ex) = make_example(kg, &pools, None, vec![t], split == 1, cfg.candidates, &mut rng)? {
                out[split].push(ex);
            }
        }
        let mut seen = HashSet::new();
        let mut made = 0;
        let mut attempts = 0;
        while made < hard_target && attempts < 1000 * hard_target.max(1) {
            attempts += 1;
            let Some((kind, triples)) = sample_hard(kg, &mut rng) else {
                break;
            };
            if !triples.iter().all(in_split) {
                continue;
            }
            let mut key = triples.clone();
            if kind == PatternKind::MultiObject {
                key[..triples.len() - 1].sort();
            }
            if !seen.insert((kind, key)) {
                continue;
            }
            if let Some(ex) = make_example(kg, &pools, Some(kind), triples, split == 1, cfg.candidates, &mut rng)? {
                out[split].push(ex);
                made += 1;
            }
        }
    }
    let [train, test] = out;
    Ok(QaSplit { train, test })
}

/// `[CLS] question [SEP] candidate [SEP]`, with the slot spelled as one
/// [MASK] per candidate token. `None` if the result exceeds `max_len`.
pub fn encode_pair(vocab: &Vocabulary, question: &str, candidate: &str, max_len: usize) -> Option<Vec<u32>> {
    let cand = vocab.tokenize(candidate).tokens;
    let mut ids = vec![CLS_ID];
    let mut parts = question.splitn(2, SLOT);
    ids.extend(vocab.tokenize(parts.next().unwrap_or("")).tokens);
    if let Some(rest) = parts.next() {
        ids.extend(std::iter::repeat(MASK_ID).take(cand.len().max(1)));
        ids.extend(vocab.tokenize(rest).tokens);
    }
    ids.push(SEP_ID);
    ids.extend(cand);
    ids.push(SEP_ID);
    (ids.len() <= max_len).then_some(ids)
}

/// Encoded candidate sequences of one question, truncating the question if
/// needed to respect `max_len`.
pub fn encode_example(vocab: &Vocabulary, ex: &QaExample, max_len: usize) -> Vec<Vec<u32>> {
    ex.candidates
        .iter()
        .map(|c| {
            encode_pair(vocab, &ex.question, c, max_len).unwrap_or_else(|| {
                let mut ids = encode_pair(vocab, &ex.question, c, usize::MAX).unwrap();
                ids.truncate(max_len - 1);
                ids.push(SEP_ID);
                ids
            })
        })
        .collect()
}

pub fn write_jsonl(path: &Path, examples: &[QaExample]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let line = serde_json::to_string(ex).expect("question serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<QaExample>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Nested prefix of a seeded shuffle, so smaller fractions are subsets of larger ones.
pub fn train_subset(train: &[QaExample], frac: f64, seed: u64) -> Vec<QaExample> {
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 9, 2, 0)));
    let n = ((train.len() as f64 * frac).round() as usize).clamp(1.min(train.len()), train.len());
    idx[..n].iter().map(|&i| train[i].clone()).collect()
}
