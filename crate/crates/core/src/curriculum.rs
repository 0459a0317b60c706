//! Reasoning compositions and the three-lesson curriculum corpora.
//!
//! Lesson 1 masks single facts, lesson 2 concatenates the facts of a
//! reasoning pattern with their composition (masking shared elements
//! everywhere they occur), lesson 3 masks the composition alone.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::injection::{
    self, construct, mask, CompositionPlan, Field, FieldRef, InjectionError, MaskedSentence, MaskingConfig, Origin,
    Provenance, Segment, Strategy,
};
use crate::kg::{KgError, KnowledgeGraph, PatternSupport, Tail};
use crate::seed::derive_seed;
use crate::tokenizer::Vocabulary;

#[derive(Error, Debug)]
pub enum CurriculumError {
    #[error(transparent)]
    Injection(#[from] InjectionError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("triples {first} and {second} violate the {pattern} pattern: {reason}")]
    Pattern {
        pattern: PatternKind,
        first: usize,
        second: usize,
        reason: String,
    },
    #[error("invalid curriculum configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Record {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, CurriculumError>;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatternKind {
    MultiHop,
    MultiObject,
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternKind::MultiHop => "multi-hop",
            PatternKind::MultiObject => "multi-object",
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReasoningPattern {
    pub kind: PatternKind,
    pub arity: usize,
}

/// A way of drawing related triples and folding them into one composition.
///
/// The built-in patterns implement this; other patterns (comparisons, say)
/// can be plugged into [`lesson2_plan`] / [`lesson3_plan`] the same way.
pub trait Composer {
    fn sample<R: Rng + ?Sized>(&self, kg: &KnowledgeGraph, rng: &mut R) -> Result<Vec<usize>>;

    /// Checks the structural predicate over graph positions.
    fn check(&self, kg: &KnowledgeGraph, triples: &[usize]) -> Result<()>;

    /// Composition segments from per-field texts; every `FieldRef` indexes `triples`.
    fn segments(
        &self,
        kg: &KnowledgeGraph,
        triples: &[usize],
        texts: &HashMap<FieldRef, Segment>,
    ) -> (Vec<Segment>, Vec<FieldRef>);

    /// Aligns step texts with the composition so shared elements read the same.
    fn unify_texts(&self, _texts: &mut HashMap<FieldRef, Segment>, _n: usize) {}
}

impl Composer for ReasoningPattern {
    fn sample<R: Rng + ?Sized>(&self, kg: &KnowledgeGraph, rng: &mut R) -> Result<Vec<usize>> {
        Ok(match self.kind {
            PatternKind::MultiHop => kg.sample_chain(self.arity, rng)?,
            PatternKind::MultiObject => kg.sample_multi_object(self.arity, rng)?,
        })
    }

    fn check(&self, kg: &KnowledgeGraph, triples: &[usize]) -> Result<()> {
        let fail = |i: usize, reason: &str| CurriculumError::Pattern {
            pattern: self.kind,
            first: triples[i],
            second: triples[i + 1],
            reason: reason.to_string(),
        };
        for i in 0..triples.len().saturating_sub(1) {
            let (a, b) = (kg.triple(triples[i]), kg.triple(triples[i + 1]));
            match self.kind {
                PatternKind::MultiHop => {
                    if a.tail.entity() != Some(b.head) {
                        return Err(fail(i, "tail is not the next head"));
                    }
                    if triples[i + 1..].contains(&triples[i]) {
                        return Err(fail(i, "triple repeated"));
                    }
                }
                PatternKind::MultiObject => {
                    let first = kg.triple(triples[0]);
                    if b.head != first.head || b.relation != first.relation {
                        return Err(fail(i, "head or relation differs"));
                    }
                    if triples[..=i].iter().any(|&j| kg.triple(j).tail == b.tail) {
                        return Err(fail(i, "tails not distinct"));
                    }
                }
            }
        }
        Ok(())
    }

    fn segments(
        &self,
        _kg: &KnowledgeGraph,
        triples: &[usize],
        texts: &HashMap<FieldRef, Segment>,
    ) -> (Vec<Segment>, Vec<FieldRef>) {
        let n = triples.len();
        let text = |i, f| texts[&FieldRef::new(i, f)].clone();
        let mut segments = Vec::new();
        let mut discarded = Vec::new();
        match self.kind {
            PatternKind::MultiHop => {
                segments.push(text(0, Field::Head));
                for i in 0..n {
                    segments.push(text(i, Field::Relation));
                }
                segments.push(text(n - 1, Field::Tail));
                for i in 0..n - 1 {
                    discarded.push(FieldRef::new(i, Field::Tail));
                    discarded.push(FieldRef::new(i + 1, Field::Head));
                }
            }
            PatternKind::MultiObject => {
                let all = |f| (0..n).map(|i| FieldRef::new(i, f)).collect::<Vec<_>>();
                let mut head = text(0, Field::Head);
                head.sources = all(Field::Head);
                let mut relation = text(0, Field::Relation);
                relation.sources = all(Field::Relation);
                segments.push(head);
                segments.push(relation);
                for i in 0..n {
                    segments.push(text(i, Field::Tail));
                }
                for i in 1..n {
                    discarded.push(FieldRef::new(i, Field::Head));
                    discarded.push(FieldRef::new(i, Field::Relation));
                }
            }
        }
        (segments, discarded)
    }

    fn unify_texts(&self, texts: &mut HashMap<FieldRef, Segment>, n: usize) {
        if self.kind == PatternKind::MultiObject {
            for f in [Field::Head, Field::Relation] {
                let shared = texts[&FieldRef::new(0, f)].text.clone();
                for i in 1..n {
                    texts.get_mut(&FieldRef::new(i, f)).unwrap().text = shared.clone();
                }
            }
        }
    }
}

fn field_texts<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    triples: &[usize],
    rng: &mut R,
) -> Result<HashMap<FieldRef, Segment>> {
    let mut texts = HashMap::new();
    for (slot, &t) in triples.iter().enumerate() {
        let [h, r, tail] = injection::characterize(kg, t, slot, rng)?;
        texts.insert(FieldRef::new(slot, Field::Head), h);
        texts.insert(FieldRef::new(slot, Field::Relation), r);
        texts.insert(FieldRef::new(slot, Field::Tail), tail);
    }
    Ok(texts)
}

/// Builds the composition of pattern-conforming triples.
///
/// Multi-hop keeps the first head, every relation and the last tail;
/// multi-object keeps the first head and relation followed by every tail.
/// A single triple composes exactly like a lone fact under `strategy`.
pub fn compose<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    triples: &[usize],
    pattern: &impl Composer,
    strategy: &Strategy,
    rng: &mut R,
) -> Result<CompositionPlan> {
    if triples.is_empty() {
        return Err(CurriculumError::Config("no triples to compose".into()));
    }
    if triples.len() == 1 {
        return Ok(injection::single_triple_plan(kg, triples[0], strategy, rng)?);
    }
    if *strategy != Strategy::Concatenate {
        return Err(CurriculumError::Config(format!(
            "strategy `{strategy}` cannot compose several triples"
        )));
    }
    pattern.check(kg, triples)?;
    let texts = field_texts(kg, triples, rng)?;
    let (segments, discarded) = pattern.segments(kg, triples, &texts);
    Ok(construct(
        segments,
        strategy,
        Provenance {
            triples: triples.to_vec(),
            discarded,
        },
    )?)
}

/// Reasoning steps followed by the composition, each closed by [SEP].
/// Elements are rendered once and reused in steps and composition.
pub fn lesson2_plan<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    triples: &[usize],
    pattern: &impl Composer,
    rng: &mut R,
) -> Result<CompositionPlan> {
    pattern.check(kg, triples)?;
    let mut texts = field_texts(kg, triples, rng)?;
    pattern.unify_texts(&mut texts, triples.len());
    let mut segments = Vec::new();
    for slot in 0..triples.len() {
        for f in [Field::Head, Field::Relation, Field::Tail] {
            segments.push(texts[&FieldRef::new(slot, f)].clone());
        }
        segments.push(Segment::separator());
    }
    let selection_start = segments.len();
    let (composition, discarded) = pattern.segments(kg, triples, &texts);
    segments.extend(composition);
    Ok(CompositionPlan {
        segments,
        provenance: Provenance {
            triples: triples.to_vec(),
            discarded,
        },
        selection_start,
    })
}

pub fn lesson3_plan<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    triples: &[usize],
    pattern: &impl Composer,
    rng: &mut R,
) -> Result<CompositionPlan> {
    compose(kg, triples, pattern, &Strategy::Concatenate, rng)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lesson {
    #[serde(rename = "1")]
    Facts = 1,
    #[serde(rename = "2")]
    Steps = 2,
    #[serde(rename = "3")]
    Compositions = 3,
}

impl Lesson {
    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Lesson::Facts),
            2 => Some(Lesson::Steps),
            3 => Some(Lesson::Compositions),
            _ => None,
        }
    }

    /// Selection probability used for this lesson's corpus.
    pub fn default_select_prob(self) -> f64 {
        match self {
            Lesson::Steps => 0.3,
            _ => 0.15,
        }
    }
}

/// Weights over pattern kinds plus the arities to draw uniformly from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternMix {
    pub multi_hop: f64,
    pub multi_object: f64,
    pub arities: Vec<usize>,
}

impl Default for PatternMix {
    fn default() -> Self {
        PatternMix {
            multi_hop: 0.5,
            multi_object: 0.5,
            arities: vec![2, 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LessonSpec {
    pub lesson: Lesson,
    /// `None` means |Σ| for lesson 1 and ceil(|Σ|/4) for lessons 2 and 3.
    pub examples_per_epoch: Option<usize>,
    pub masking: MaskingConfig,
    pub pattern_mix: Option<PatternMix>,
    /// Shuffle reasoning steps in lesson 2 instead of keeping chain order.
    pub shuffle_steps: bool,
}

impl LessonSpec {
    pub fn new(lesson: Lesson) -> Self {
        LessonSpec {
            lesson,
            examples_per_epoch: None,
            masking: MaskingConfig::with_prob(lesson.default_select_prob()),
            pattern_mix: (lesson != Lesson::Facts).then(PatternMix::default),
            shuffle_steps: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.masking.validate()?;
        match (&self.lesson, &self.pattern_mix) {
            (Lesson::Facts, Some(_)) => Err(CurriculumError::Config("lesson 1 takes no pattern mix".into())),
            (Lesson::Facts, None) => Ok(()),
            (_, None) => Err(CurriculumError::Config(format!(
                "lesson {} needs a pattern mix",
                self.lesson.number()
            ))),
            (_, Some(mix)) => {
                if mix.multi_hop < 0.0
                    || mix.multi_object < 0.0
                    || (mix.multi_hop + mix.multi_object - 1.0).abs() > 1e-9
                {
                    return Err(CurriculumError::Config("pattern weights must sum to 1".into()));
                }
                if mix.arities.is_empty() || mix.arities.iter().any(|&a| a < 2) {
                    return Err(CurriculumError::Config("arities must be >= 2".into()));
                }
                Ok(())
            }
        }
    }

    pub fn epoch_size(&self, kg: &KnowledgeGraph) -> usize {
        match (self.lesson, self.examples_per_epoch) {
            (Lesson::Facts, _) => kg.len(),
            (_, Some(n)) => n,
            (_, None) => kg.len().div_ceil(4),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "CR")]
    Cr,
    #[serde(rename = "CR-03")]
    Cr03,
    #[serde(rename = "CR-13")]
    Cr13,
}

impl Variant {
    pub fn lessons(self) -> &'static [Lesson] {
        match self {
            Variant::Cr => &[Lesson::Facts, Lesson::Steps, Lesson::Compositions],
            Variant::Cr03 => &[Lesson::Compositions],
            Variant::Cr13 => &[Lesson::Facts, Lesson::Compositions],
        }
    }

    /// Checkpoint label after finishing `lesson` under this variant.
    pub fn checkpoint_label(self, lesson: Lesson) -> String {
        match (self, lesson) {
            (Variant::Cr03, _) => "L03".into(),
            (Variant::Cr13, Lesson::Compositions) => "L13".into(),
            (_, l) => format!("L{}", l.number()),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cr => "CR",
            Variant::Cr03 => "CR-03",
            Variant::Cr13 => "CR-13",
        })
    }
}

impl FromStr for Variant {
    type Err = CurriculumError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "cr" => Ok(Variant::Cr),
            "cr03" => Ok(Variant::Cr03),
            "cr13" => Ok(Variant::Cr13),
            _ => Err(CurriculumError::Config(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub variant: Variant,
    pub lessons: Vec<LessonSpec>,
}

impl CurriculumSchedule {
    pub fn new(variant: Variant) -> Self {
        CurriculumSchedule {
            variant,
            lessons: variant.lessons().iter().map(|&l| LessonSpec::new(l)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let order: Vec<Lesson> = self.lessons.iter().map(|l| l.lesson).collect();
        if order != self.variant.lessons() {
            return Err(CurriculumError::Config(format!(
                "{} expects lessons {:?}, got {:?}",
                self.variant,
                self.variant.lessons(),
                order
            )));
        }
        self.lessons.iter().try_for_each(LessonSpec::validate)
    }
}

/// `pattern` field of corpus records.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternTag {
    Single,
    Multihop,
    Multiobject,
}

impl From<PatternKind> for PatternTag {
    fn from(k: PatternKind) -> Self {
        match k {
            PatternKind::MultiHop => PatternTag::Multihop,
            PatternKind::MultiObject => PatternTag::Multiobject,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub lesson: Lesson,
    pub pattern: PatternTag,
    pub plan: CompositionPlan,
    pub masked: MaskedSentence,
}

/// One line of a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub lesson: u8,
    pub pattern: PatternTag,
    pub input_ids: Vec<u32>,
    pub labels: Vec<Option<u32>>,
    pub text: String,
    pub provenance: Provenance,
}

impl From<&Example> for CorpusRecord {
    fn from(e: &Example) -> Self {
        CorpusRecord {
            lesson: e.lesson.number(),
            pattern: e.pattern,
            input_ids: e.masked.input_ids.clone(),
            labels: e.masked.labels.clone(),
            text: e.masked.text.clone(),
            provenance: e.plan.provenance.clone(),
        }
    }
}

/// Writes records as JSON lines.
pub fn write_corpus<'r>(path: &Path, records: impl IntoIterator<Item = &'r CorpusRecord>) -> Result<usize> {
    let io = |source| CurriculumError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let mut n = 0;
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
        n += 1;
    }
    out.flush().map_err(io)?;
    Ok(n)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let io = |source| CurriculumError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CurriculumError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Lesson-1 example for a given triple.
pub fn gen_lesson1<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    vocab: &Vocabulary,
    triple: usize,
    spec: &LessonSpec,
    strategy: &Strategy,
    rng: &mut R,
) -> Result<Example> {
    let plan = injection::single_triple_plan(kg, triple, strategy, rng)?;
    let masked = mask(&plan, vocab, &spec.masking, rng)?;
    Ok(Example {
        lesson: Lesson::Facts,
        pattern: PatternTag::Single,
        plan,
        masked,
    })
}

fn choose_pattern<R: Rng + ?Sized>(
    mix: &PatternMix,
    support: &PatternSupport,
    rng: &mut R,
) -> Result<ReasoningPattern> {
    let feasible = |kind: PatternKind| -> Vec<usize> {
        mix.arities
            .iter()
            .copied()
            .filter(|&a| match kind {
                PatternKind::MultiHop => support.chain(a),
                PatternKind::MultiObject => support.multi_object(a),
            })
            .collect()
    };
    let options: Vec<(PatternKind, f64, Vec<usize>)> = [
        (PatternKind::MultiHop, mix.multi_hop),
        (PatternKind::MultiObject, mix.multi_object),
    ]
    .into_iter()
    .map(|(k, w)| (k, w, feasible(k)))
    .filter(|(_, w, a)| *w > 0.0 && !a.is_empty())
    .collect();
    let total: f64 = options.iter().map(|o| o.1).sum();
    if options.is_empty() || total <= 0.0 {
        return Err(KgError::PatternExhausted {
            pattern: "reasoning pattern".into(),
            attempts: 0,
        }
        .into());
    }
    let mut pick = rng.gen::<f64>() * total;
    let mut chosen = &options[options.len() - 1];
    for o in &options {
        if pick < o.1 {
            chosen = o;
            break;
        }
        pick -= o.1;
    }
    Ok(ReasoningPattern {
        kind: chosen.0,
        arity: chosen.2[rng.gen_range(0..chosen.2.len())],
    })
}

fn sample_pattern<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    spec: &LessonSpec,
    support: &PatternSupport,
    rng: &mut R,
) -> Result<(ReasoningPattern, Vec<usize>)> {
    let mix = spec
        .pattern_mix
        .as_ref()
        .ok_or_else(|| CurriculumError::Config("lesson has no pattern mix".into()))?;
    let pattern = choose_pattern(mix, support, rng)?;
    let triples = pattern.sample(kg, rng)?;
    Ok((pattern, triples))
}

/// Lesson-2 example: reasoning steps, then the composition; elements masked
/// in the composition are masked in the steps as well.
pub fn gen_lesson2<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    vocab: &Vocabulary,
    spec: &LessonSpec,
    support: &PatternSupport,
    rng: &mut R,
) -> Result<Example> {
    let (pattern, mut triples) = sample_pattern(kg, spec, support, rng)?;
    if spec.shuffle_steps && pattern.kind == PatternKind::MultiObject {
        triples.shuffle(rng);
    }
    let plan = lesson2_plan(kg, &triples, &pattern, rng)?;
    let masked = mask(&plan, vocab, &spec.masking, rng)?;
    Ok(Example {
        lesson: Lesson::Steps,
        pattern: pattern.kind.into(),
        plan,
        masked,
    })
}

/// Lesson-3 example: the masked composition alone.
pub fn gen_lesson3<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    vocab: &Vocabulary,
    spec: &LessonSpec,
    support: &PatternSupport,
    rng: &mut R,
) -> Result<Example> {
    let (pattern, triples) = sample_pattern(kg, spec, support, rng)?;
    let plan = lesson3_plan(kg, &triples, &pattern, rng)?;
    let masked = mask(&plan, vocab, &spec.masking, rng)?;
    Ok(Example {
        lesson: Lesson::Compositions,
        pattern: pattern.kind.into(),
        plan,
        masked,
    })
}

/// Deterministic corpus source: example `i` of `(lesson, epoch)` depends only
/// on the global seed and those coordinates, never on the variant or on how
/// generation is split across workers.
pub struct CorpusGenerator<'a> {
    kg: &'a KnowledgeGraph,
    vocab: &'a Vocabulary,
    strategy: Strategy,
    support: PatternSupport,
    global_seed: u64,
}

impl<'a> CorpusGenerator<'a> {
    pub fn new(kg: &'a KnowledgeGraph, vocab: &'a Vocabulary, global_seed: u64) -> Self {
        CorpusGenerator {
            kg,
            vocab,
            strategy: Strategy::Concatenate,
            support: kg.pattern_support(3),
            global_seed,
        }
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn kg(&self) -> &KnowledgeGraph {
        self.kg
    }

    pub fn support(&self) -> &PatternSupport {
        &self.support
    }

    /// Shuffled pass over Σ for lesson 1.
    pub fn lesson1_order(&self, epoch: u32) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.kg.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.global_seed, 1, epoch, u64::MAX));
        order.shuffle(&mut rng);
        order
    }

    pub fn example(&self, spec: &LessonSpec, epoch: u32, index: usize, order: &[usize]) -> Result<Example> {
        let seed = derive_seed(self.global_seed, spec.lesson.number(), epoch, index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match spec.lesson {
            Lesson::Facts => gen_lesson1(self.kg, self.vocab, order[index], spec, &self.strategy, &mut rng),
            Lesson::Steps => gen_lesson2(self.kg, self.vocab, spec, &self.support, &mut rng),
            Lesson::Compositions => gen_lesson3(self.kg, self.vocab, spec, &self.support, &mut rng),
        }
    }

    /// Lazily yields one epoch of a lesson.
    pub fn epoch<'s>(&'s self, spec: &'s LessonSpec, epoch: u32) -> impl Iterator<Item = Result<Example>> + 's {
        let order = match spec.lesson {
            Lesson::Facts => self.lesson1_order(epoch),
            _ => Vec::new(),
        };
        let n = spec.epoch_size(self.kg);
        (0..n).map(move |i| self.example(spec, epoch, i, &order))
    }

    /// Whole epoch generated on `workers` threads, merged by index.
    pub fn generate_epoch(&self, spec: &LessonSpec, epoch: u32, workers: usize) -> Result<Vec<Example>> {
        spec.validate()?;
        let order = match spec.lesson {
            Lesson::Facts => self.lesson1_order(epoch),
            _ => Vec::new(),
        };
        let n = spec.epoch_size(self.kg);
        let workers = workers.max(1);
        let chunk = n.div_ceil(workers).max(1);
        let parts: Vec<Result<Vec<Example>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| {
                    let order = &order;
                    scope.spawn(move || {
                        (start..(start + chunk).min(n))
                            .map(|i| self.example(spec, epoch, i, order))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("corpus worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(n);
        for part in parts {
            out.extend(part?);
        }
        Ok(out)
    }
}

/// True if every tail→head link holds (multi-hop) or every triple shares
/// head and relation with distinct tails (multi-object).
pub fn pattern_holds(kg: &KnowledgeGraph, kind: PatternKind, triples: &[usize]) -> bool {
    ReasoningPattern {
        kind,
        arity: triples.len(),
    }
    .check(kg, triples)
    .is_ok()
}

/// Positions whose uncorrupted token belongs to a name of an entity discarded
/// from the composition (intermediate multi-hop entities), restricted to the
/// composition region of `example`.
pub fn discarded_entity_leaks(kg: &KnowledgeGraph, example: &Example) -> Vec<usize> {
    let plan = &example.plan;
    let mut leaks = Vec::new();
    for d in &plan.provenance.discarded {
        if d.field == Field::Relation {
            continue;
        }
        let t = kg.triple(plan.provenance.triples[d.triple]);
        let entity = match d.field {
            Field::Head => Some(t.head),
            Field::Tail => match &t.tail {
                Tail::Entity(e) => Some(*e),
                Tail::Attribute(_) => None,
            },
            Field::Relation => None,
        };
        let Some(entity) = entity else { continue };
        // Kept segments may legitimately name the same entity (cycles, shared heads).
        let kept = |s: &Segment| {
            s.sources.iter().any(|src| {
                let kt = kg.triple(plan.provenance.triples[src.triple]);
                match src.field {
                    Field::Head => kt.head == entity,
                    Field::Tail => kt.tail.entity() == Some(entity),
                    Field::Relation => false,
                }
            })
        };
        let region = &plan.segments[plan.selection_start..];
        if region.iter().any(kept) {
            continue;
        }
        for name in kg.names(entity).unwrap_or(&[]) {
            let rendered: Vec<&Segment> = region.iter().filter(|s| s.origin != Origin::SeparatorToken).collect();
            let composition = rendered.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
            if contains_words(&composition, name) {
                leaks.push(d.triple);
            }
        }
    }
    leaks
}

fn contains_words(haystack: &str, needle: &str) -> bool {
    let h = crate::tokenizer::split_words(haystack);
    let n = crate::tokenizer::split_words(needle);
    !n.is_empty() && h.windows(n.len()).any(|w| w == n.as_slice())
}

/// Lesson-2 leak check: every labelled position's element is labelled at all
/// of its occurrences. Returns offending positions.
pub fn leaked_positions(example: &Example) -> Vec<usize> {
    let m = &example.masked;
    let segs = &example.plan.segments;
    let mut bad = Vec::new();
    for (pos, label) in m.labels.iter().enumerate() {
        if label.is_none() {
            continue;
        }
        let Some(src) = m.token_sources[pos] else {
            bad.push(pos);
            continue;
        };
        let seg = &segs[src.segment as usize];
        for (other, osrc) in m.token_sources.iter().enumerate() {
            let Some(osrc) = osrc else { continue };
            let oseg = &segs[osrc.segment as usize];
            let same_element = oseg.sources.iter().any(|s| seg.sources.contains(s));
            let same_unit = if seg.origin.is_entity() {
                true
            } else {
                osrc.word == src.word
            };
            if same_element && same_unit && m.labels[other].is_none() {
                bad.push(other);
            }
        }
    }
    bad.sort_unstable();
    bad.dedup();
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KgBuilder;

    fn samples_kg() -> KnowledgeGraph {
        let mut b = KgBuilder::new();
        b.name("ziegler", "theobald ziegler")
            .name("strassbourg", "strassbourg")
            .name("rhine", "the rhine")
            .name("working_at", "working at")
            .name("on_lake", "on lake")
            .name("ferrieres", "ferrieres, somme")
            .name("ailly", "ailly-sur-somme")
            .name("pont", "pont-de-metz")
            .name("border", "shares border with");
        b.entity_triple("ziegler", "working_at", "strassbourg")
            .entity_triple("strassbourg", "on_lake", "rhine")
            .entity_triple("ferrieres", "border", "ailly")
            .entity_triple("ferrieres", "border", "pont");
        b.build().unwrap()
    }

    fn vocab_for(kg: &KnowledgeGraph) -> Vocabulary {
        let mut texts = Vec::new();
        for e in kg.entity_ids() {
            texts.extend(kg.names(e).unwrap().iter().cloned());
        }
        for r in kg.relation_ids() {
            texts.extend(kg.names(r).unwrap().iter().cloned());
        }
        Vocabulary::build(texts, 1000, 1).unwrap()
    }

    fn rendered(v: &Vocabulary, plan: &CompositionPlan) -> String {
        v.detokenize_ids(&v.tokenize(&plan.render()).tokens).unwrap()
    }

    const HOP: ReasoningPattern = ReasoningPattern {
        kind: PatternKind::MultiHop,
        arity: 2,
    };
    const OBJ: ReasoningPattern = ReasoningPattern {
        kind: PatternKind::MultiObject,
        arity: 2,
    };

    #[test]
    fn multi_hop_drops_intermediate() {
        let kg = samples_kg();
        let v = vocab_for(&kg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = compose(&kg, &[0, 1], &HOP, &Strategy::Concatenate, &mut rng).unwrap();
        assert_eq!(rendered(&v, &plan), "theobald ziegler working at on lake the rhine");
        assert_eq!(
            plan.provenance.discarded,
            vec![FieldRef::new(0, Field::Tail), FieldRef::new(1, Field::Head)]
        );
    }

    #[test]
    fn multi_object_lists_tails() {
        let kg = samples_kg();
        let v = vocab_for(&kg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = compose(&kg, &[2, 3], &OBJ, &Strategy::Concatenate, &mut rng).unwrap();
        assert_eq!(
            rendered(&v, &plan),
            "ferrieres , somme shares border with ailly - sur - somme pont - de - metz"
        );
    }

    #[test]
    fn arity_one_matches_single_fact() {
        let kg = samples_kg();
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        let composed = compose(&kg, &[1], &HOP, &Strategy::Concatenate, &mut a).unwrap();
        let single = injection::single_triple_plan(&kg, 1, &Strategy::Concatenate, &mut b).unwrap();
        assert_eq!(composed, single);
    }

    #[test]
    fn predicate_violation_names_pair() {
        let kg = samples_kg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match compose(&kg, &[1, 0], &HOP, &Strategy::Concatenate, &mut rng) {
            Err(CurriculumError::Pattern { first, second, .. }) => assert_eq!((first, second), (1, 0)),
            other => panic!("{other:?}"),
        }
        assert!(compose(&kg, &[0, 2], &OBJ, &Strategy::Concatenate, &mut rng).is_err());
    }

    #[test]
    fn lesson2_layout_and_mirroring() {
        let kg = samples_kg();
        let v = vocab_for(&kg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = lesson2_plan(&kg, &[0, 1], &HOP, &mut rng).unwrap();
        assert_eq!(
            rendered(&v, &plan),
            "theobald ziegler working at strassbourg [SEP] strassbourg on lake the rhine [SEP] \
             theobald ziegler working at on lake the rhine"
        );
        let cfg = MaskingConfig {
            mask_frac: 1.0,
            random_frac: 0.0,
            keep_frac: 0.0,
            ..MaskingConfig::with_prob(0.3)
        };
        let mut saw_relation = false;
        for seed in 0..300 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = mask(&plan, &v, &cfg, &mut rng).unwrap();
            let ex = Example {
                lesson: Lesson::Steps,
                pattern: PatternTag::Multihop,
                plan: plan.clone(),
                masked: m.clone(),
            };
            assert!(leaked_positions(&ex).is_empty());
            let seps = m
                .original_ids
                .iter()
                .filter(|&&t| t == crate::tokenizer::SEP_ID)
                .count();
            assert_eq!(seps, 3);
            for u in m.selected_units.iter().filter(|u| !u.mirrored) {
                assert!(u.segment >= plan.selection_start);
                if u.origin == Origin::Relation {
                    saw_relation = true;
                    assert!(m
                        .selected_units
                        .iter()
                        .any(|o| o.mirrored && o.origin == Origin::Relation));
                }
            }
        }
        assert!(saw_relation);
    }

    #[test]
    fn lesson2_multi_object_shares_head_text() {
        let mut b = KgBuilder::new();
        b.names("h", ["alpha", "alef"])
            .name("r", "rel")
            .name("x", "x")
            .name("y", "y");
        b.entity_triple("h", "r", "x").entity_triple("h", "r", "y");
        let kg = b.build().unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let plan = lesson2_plan(&kg, &[0, 1], &OBJ, &mut rng).unwrap();
            assert_eq!(plan.segments[0].text, plan.segments[4].text);
            assert_eq!(plan.segments[0].text, plan.segments[plan.selection_start].text);
        }
    }

    #[test]
    fn variants_and_labels() {
        assert_eq!(Variant::Cr13.lessons(), &[Lesson::Facts, Lesson::Compositions]);
        assert_eq!(Variant::Cr03.checkpoint_label(Lesson::Compositions), "L03");
        assert_eq!(Variant::Cr13.checkpoint_label(Lesson::Compositions), "L13");
        assert_eq!(Variant::Cr13.checkpoint_label(Lesson::Facts), "L1");
        assert_eq!(Variant::Cr.checkpoint_label(Lesson::Steps), "L2");
        assert_eq!("cr-13".parse::<Variant>().unwrap(), Variant::Cr13);
        assert!("cr2".parse::<Variant>().is_err());
        let mut s = CurriculumSchedule::new(Variant::Cr);
        assert!(s.validate().is_ok());
        s.lessons.remove(1);
        assert!(s.validate().is_err());
        let mut spec = LessonSpec::new(Lesson::Facts);
        spec.pattern_mix = Some(PatternMix::default());
        assert!(spec.validate().is_err());
    }
}
