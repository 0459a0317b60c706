//! Triple-to-sentence compilation for masked language modelling:
//! text characterization, sentence construction and masking.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{KgError, KnowledgeGraph, Tail};
use crate::tokenizer::{self, TokenizedText, Vocabulary, SPECIALS};

#[derive(Error, Debug)]
pub enum InjectionError {
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("plan tokenizes to no maskable text")]
    DegenerateInput,
}

pub type Result<T> = std::result::Result<T, InjectionError>;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    HeadEntity,
    Relation,
    TailEntity,
    AttributeValue,
    Auxiliary,
    SeparatorToken,
}

impl Origin {
    /// Fields converted from a triple.
    pub fn is_knowledge(self) -> bool {
        matches!(
            self,
            Origin::HeadEntity | Origin::Relation | Origin::TailEntity | Origin::AttributeValue
        )
    }

    /// Entity names are masked as one span; everything else word by word.
    pub fn is_entity(self) -> bool {
        matches!(self, Origin::HeadEntity | Origin::TailEntity)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    Head,
    Relation,
    Tail,
}

/// A field of the `triple`-th source triple of a plan.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FieldRef {
    pub triple: usize,
    pub field: Field,
}

impl FieldRef {
    pub fn new(triple: usize, field: Field) -> Self {
        FieldRef { triple, field }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    pub origin: Origin,
    /// Triple fields this text stands for. Several when a composition merges
    /// duplicated fields (the shared head of a multi-object group).
    pub sources: Vec<FieldRef>,
}

impl Segment {
    pub fn new(text: impl Into<String>, origin: Origin, sources: Vec<FieldRef>) -> Self {
        Segment {
            text: text.into(),
            origin,
            sources,
        }
    }

    pub fn auxiliary(text: impl Into<String>) -> Self {
        Self::new(text, Origin::Auxiliary, Vec::new())
    }

    pub fn separator() -> Self {
        Self::new("", Origin::SeparatorToken, Vec::new())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Positions in the graph's triple list.
    pub triples: Vec<usize>,
    /// Fields left out of the composition text.
    pub discarded: Vec<FieldRef>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionPlan {
    pub segments: Vec<Segment>,
    pub provenance: Provenance,
    /// Units are drawn only from segments at or after this index; earlier
    /// segments are masked only where they repeat a selected element.
    pub selection_start: usize,
}

impl CompositionPlan {
    pub fn new(segments: Vec<Segment>, provenance: Provenance) -> Self {
        CompositionPlan {
            segments,
            provenance,
            selection_start: 0,
        }
    }

    /// Plain text with separators spelled as `[SEP]`.
    pub fn render(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s.origin {
                Origin::SeparatorToken => tokenizer::SEP,
                _ => s.text.as_str(),
            })
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Sentence construction strategy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Head, relation, tail in order with nothing added.
    Concatenate,
    /// Substitutes `{h}`, `{r}` and `{t}`; surrounding text becomes auxiliary segments.
    Template(String),
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::Concatenate
    }
}

impl FromStr for Strategy {
    type Err = InjectionError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "concat" {
            return Ok(Strategy::Concatenate);
        }
        if let Some(t) = s.strip_prefix("template:") {
            if ["{h}", "{r}", "{t}"].iter().any(|p| t.contains(p)) {
                return Ok(Strategy::Template(t.to_string()));
            }
        }
        Err(InjectionError::Config(format!("unknown construction strategy `{s}`")))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Concatenate => f.write_str("concat"),
            Strategy::Template(t) => write!(f, "template:{t}"),
        }
    }
}

/// How knowledge elements are preferred when choosing units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum UnitWeighting {
    /// Only knowledge-origin segments are maskable.
    KnowledgeOnly,
    /// Auxiliary words are maskable too, at `1/m` of the knowledge rate.
    UpWeight(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub select_prob: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
    pub keep_frac: f64,
    pub weighting: UnitWeighting,
    /// Including [CLS] and the final [SEP].
    pub max_len: usize,
}

pub const DEFAULT_MAX_LEN: usize = 128;

impl MaskingConfig {
    pub fn with_prob(select_prob: f64) -> Self {
        MaskingConfig {
            select_prob,
            mask_frac: 0.8,
            random_frac: 0.1,
            keep_frac: 0.1,
            weighting: UnitWeighting::KnowledgeOnly,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.select_prob) {
            return Err(InjectionError::Config(format!(
                "select_prob {} outside [0, 1]",
                self.select_prob
            )));
        }
        let fracs = [self.mask_frac, self.random_frac, self.keep_frac];
        if !fracs.iter().all(|&f| in_unit(f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(InjectionError::Config(format!(
                "corruption split {fracs:?} must be probabilities summing to 1"
            )));
        }
        if let UnitWeighting::UpWeight(m) = self.weighting {
            if !(m >= 1.0 && m.is_finite()) {
                return Err(InjectionError::Config(format!("up-weight {m} must be >= 1")));
            }
        }
        if self.max_len < 3 {
            return Err(InjectionError::Config("max_len must be at least 3".into()));
        }
        Ok(())
    }
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self::with_prob(0.15)
    }
}

/// Segment and word offset a token came from.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSource {
    pub segment: u32,
    pub word: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedUnit {
    pub positions: Vec<usize>,
    pub origin: Origin,
    pub segment: usize,
    /// Selected because it repeats a unit chosen elsewhere.
    pub mirrored: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSentence {
    pub input_ids: Vec<u32>,
    pub labels: Vec<Option<u32>>,
    /// Uncorrupted tokens, including [CLS]/[SEP].
    pub original_ids: Vec<u32>,
    pub token_sources: Vec<Option<TokenSource>>,
    pub selected_units: Vec<SelectedUnit>,
    /// Number of units eligible for direct selection.
    pub unit_count: usize,
    /// Uncorrupted rendering.
    pub text: String,
    /// Tokens were dropped to fit `max_len`.
    pub truncated: bool,
}

impl MaskedSentence {
    pub fn label_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Directly selected (not mirrored) units.
    pub fn primary_selected(&self) -> usize {
        self.selected_units.iter().filter(|u| !u.mirrored).count()
    }
}

/// Turns each field of a triple into text: names are sampled per mention,
/// attribute values use their rendering.
pub fn characterize<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    triple: usize,
    slot: usize,
    rng: &mut R,
) -> Result<[Segment; 3]> {
    let t = kg.triple(triple);
    let head = kg.sample_name(t.head, rng)?.to_string();
    let relation = kg.sample_name(t.relation, rng)?.to_string();
    let tail = match &t.tail {
        Tail::Entity(e) => Segment::new(
            kg.sample_name(*e, rng)?,
            Origin::TailEntity,
            vec![FieldRef::new(slot, Field::Tail)],
        ),
        Tail::Attribute(v) => Segment::new(
            v.rendering(),
            Origin::AttributeValue,
            vec![FieldRef::new(slot, Field::Tail)],
        ),
    };
    Ok([
        Segment::new(head, Origin::HeadEntity, vec![FieldRef::new(slot, Field::Head)]),
        Segment::new(relation, Origin::Relation, vec![FieldRef::new(slot, Field::Relation)]),
        tail,
    ])
}

/// Assembles characterized fields into a plan.
pub fn construct(segments: Vec<Segment>, strategy: &Strategy, provenance: Provenance) -> Result<CompositionPlan> {
    if segments.is_empty() {
        return Err(InjectionError::Config("nothing to construct".into()));
    }
    let segments = match strategy {
        Strategy::Concatenate => segments,
        Strategy::Template(template) => apply_template(template, segments)?,
    };
    if !segments.iter().any(|s| s.origin.is_knowledge()) {
        return Err(InjectionError::Config("plan has no knowledge segment".into()));
    }
    Ok(CompositionPlan::new(segments, provenance))
}

fn apply_template(template: &str, segments: Vec<Segment>) -> Result<Vec<Segment>> {
    let find = |wanted: &[Origin]| segments.iter().find(|s| wanted.contains(&s.origin)).cloned();
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let literal = rest[..start].trim();
        if !literal.is_empty() {
            out.push(Segment::auxiliary(literal));
        }
        let end = rest[start..]
            .find('}')
            .map(|e| start + e)
            .ok_or_else(|| InjectionError::Config(format!("unclosed placeholder in `{template}`")))?;
        let slot = match &rest[start + 1..end] {
            "h" => find(&[Origin::HeadEntity]),
            "r" => find(&[Origin::Relation]),
            "t" => find(&[Origin::TailEntity, Origin::AttributeValue]),
            other => return Err(InjectionError::Config(format!("unknown placeholder `{{{other}}}`"))),
        };
        out.push(slot.ok_or_else(|| InjectionError::Config(format!("template `{template}` needs a missing field")))?);
        rest = &rest[end + 1..];
    }
    let literal = rest.trim();
    if !literal.is_empty() {
        out.push(Segment::auxiliary(literal));
    }
    Ok(out)
}

struct Unit {
    segment: usize,
    /// Word offset within the segment; `None` for a whole entity span.
    word: Option<u32>,
    positions: Vec<usize>,
    weight: f64,
}

/// Per-unit probabilities such that the expected share of selected units
/// equals the mean base weight even though an all-empty draw is rerolled once.
fn calibrated_probabilities(weights: &[f64]) -> Vec<f64> {
    let target: f64 = weights.iter().sum();
    if target <= 0.0 {
        return vec![0.0; weights.len()];
    }
    let probs = |c: f64| weights.iter().map(|w| (c * w).min(1.0)).collect::<Vec<_>>();
    let expected = |q: &[f64]| {
        let none: f64 = q.iter().map(|p| 1.0 - p).product();
        q.iter().sum::<f64>() * (1.0 + none)
    };
    let min_w = weights
        .iter()
        .copied()
        .filter(|w| *w > 0.0)
        .fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (0.0, 1.0 / min_w);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if expected(&probs(mid)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    probs(0.5 * (lo + hi))
}

/// Tokenizes the plan, wraps it in [CLS] … [SEP] and corrupts selected units.
///
/// Entity segments form one unit each, other maskable segments one unit per
/// word. Units are drawn independently; if none is chosen the draw is
/// repeated once, with per-unit probabilities calibrated so the realized
/// selection rate still matches `select_prob`. Selected units are mirrored
/// onto earlier segments that carry the same source field. Each selected
/// token becomes [MASK], a random token or itself per the corruption split.
pub fn mask<R: Rng + ?Sized>(
    plan: &CompositionPlan,
    vocab: &Vocabulary,
    cfg: &MaskingConfig,
    rng: &mut R,
) -> Result<MaskedSentence> {
    cfg.validate()?;
    let mut tok = TokenizedText::default();
    let mut sources: Vec<Option<TokenSource>> = Vec::new();
    tok.push_special(tokenizer::CLS_ID);
    sources.push(None);
    for (si, seg) in plan.segments.iter().enumerate() {
        if seg.origin == Origin::SeparatorToken {
            tok.push_special(tokenizer::SEP_ID);
            sources.push(None);
            continue;
        }
        let before = tok.len();
        vocab.tokenize_into(&seg.text, 0, &mut tok);
        for i in before..tok.len() {
            sources.push(if tok.is_special[i] {
                None
            } else {
                Some(TokenSource {
                    segment: si as u32,
                    word: tok.word_ids[i],
                })
            });
        }
    }
    let truncated = tok.len() > cfg.max_len - 1;
    if truncated {
        tok.tokens.truncate(cfg.max_len - 1);
        sources.truncate(cfg.max_len - 1);
    }
    tok.tokens.push(tokenizer::SEP_ID);
    sources.push(None);

    if sources.iter().all(Option::is_none) {
        return Err(InjectionError::DegenerateInput);
    }

    let maskable = |origin: Origin| match cfg.weighting {
        UnitWeighting::KnowledgeOnly => origin.is_knowledge(),
        UnitWeighting::UpWeight(_) => origin.is_knowledge() || origin == Origin::Auxiliary,
    };
    let weight = |origin: Origin| match cfg.weighting {
        UnitWeighting::KnowledgeOnly => cfg.select_prob,
        UnitWeighting::UpWeight(m) if origin == Origin::Auxiliary => cfg.select_prob / m,
        UnitWeighting::UpWeight(_) => cfg.select_prob,
    };

    // Collect units in token order.
    let mut units: Vec<Unit> = Vec::new();
    let mut mirror_candidates: Vec<Unit> = Vec::new();
    for (pos, src) in sources.iter().enumerate() {
        let Some(src) = src else { continue };
        let seg = &plan.segments[src.segment as usize];
        if !maskable(seg.origin) {
            continue;
        }
        let word = if seg.origin.is_entity() { None } else { Some(src.word) };
        let bucket = if (src.segment as usize) >= plan.selection_start {
            &mut units
        } else {
            &mut mirror_candidates
        };
        match bucket.last_mut() {
            Some(u) if u.segment == src.segment as usize && u.word == word => u.positions.push(pos),
            _ => bucket.push(Unit {
                segment: src.segment as usize,
                word,
                positions: vec![pos],
                weight: weight(seg.origin),
            }),
        }
    }

    let weights: Vec<f64> = units.iter().map(|u| u.weight).collect();
    let probs = calibrated_probabilities(&weights);
    let mut chosen: Vec<bool> = probs.iter().map(|&p| rng.gen_bool(p)).collect();
    if !chosen.iter().any(|&c| c) {
        chosen = probs.iter().map(|&p| rng.gen_bool(p)).collect();
    }

    let mut selected_units = Vec::new();
    for (u, _) in units.iter().zip(&chosen).filter(|(_, &c)| c) {
        let seg = &plan.segments[u.segment];
        selected_units.push(SelectedUnit {
            positions: u.positions.clone(),
            origin: seg.origin,
            segment: u.segment,
            mirrored: false,
        });
        for m in &mirror_candidates {
            let other = &plan.segments[m.segment];
            let shares_source = other.sources.iter().any(|s| seg.sources.contains(s));
            if shares_source
                && m.word == u.word
                && !selected_units.iter().any(|s: &SelectedUnit| s.positions == m.positions)
            {
                selected_units.push(SelectedUnit {
                    positions: m.positions.clone(),
                    origin: other.origin,
                    segment: m.segment,
                    mirrored: true,
                });
            }
        }
    }

    let original_ids = tok.tokens.clone();
    let mut input_ids = tok.tokens;
    let mut labels = vec![None; input_ids.len()];
    let first_regular = SPECIALS.len() as u32;
    let vocab_len = vocab.len() as u32;
    let mut positions: Vec<usize> = selected_units
        .iter()
        .flat_map(|u| u.positions.iter().copied())
        .collect();
    positions.sort_unstable();
    for pos in positions {
        labels[pos] = Some(original_ids[pos]);
        let r: f64 = rng.gen();
        if r < cfg.mask_frac {
            input_ids[pos] = tokenizer::MASK_ID;
        } else if r < cfg.mask_frac + cfg.random_frac && vocab_len > first_regular {
            input_ids[pos] = rng.gen_range(first_regular..vocab_len);
        }
    }

    Ok(MaskedSentence {
        input_ids,
        labels,
        original_ids,
        token_sources: sources,
        selected_units,
        unit_count: units.len(),
        text: plan.render(),
        truncated,
    })
}

/// Positions whose label state differs from the rest of their unit (the
/// entity span, or the word for other origins). Empty for well-formed output.
pub fn atomicity_violations(plan: &CompositionPlan, m: &MaskedSentence) -> Vec<usize> {
    let mut groups: HashMap<(u32, Option<u32>), Vec<usize>> = HashMap::new();
    for (pos, src) in m.token_sources.iter().enumerate() {
        let Some(src) = src else { continue };
        let entity = plan.segments[src.segment as usize].origin.is_entity();
        let word = (!entity).then_some(src.word);
        groups.entry((src.segment, word)).or_default().push(pos);
    }
    let mut bad = Vec::new();
    for positions in groups.values() {
        let labelled = positions.iter().filter(|&&p| m.labels[p].is_some()).count();
        if labelled != 0 && labelled != positions.len() {
            bad.extend(positions.iter().copied());
        }
    }
    bad.sort_unstable();
    bad
}

/// characterize → construct → mask for one triple.
pub fn ki<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    triple: usize,
    strategy: &Strategy,
    vocab: &Vocabulary,
    cfg: &MaskingConfig,
    rng: &mut R,
) -> Result<MaskedSentence> {
    let plan = single_triple_plan(kg, triple, strategy, rng)?;
    mask(&plan, vocab, cfg, rng)
}

pub fn single_triple_plan<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    triple: usize,
    strategy: &Strategy,
    rng: &mut R,
) -> Result<CompositionPlan> {
    let segments = characterize(kg, triple, 0, rng)?;
    construct(
        segments.to_vec(),
        strategy,
        Provenance {
            triples: vec![triple],
            discarded: Vec::new(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{AttributeValue, KgBuilder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ashton() -> (KnowledgeGraph, Vocabulary) {
        let mut b = KgBuilder::new();
        b.name("ashton", "sir frederick ashton")
            .name("uk", "united kindom")
            .name("nationality", "nationality")
            .name("verne", "Jules Verne")
            .name("period", "period")
            .name("comet", "Off on a Comet")
            .name("author", "author");
        b.entity_triple("ashton", "nationality", "uk")
            .attribute_triple("verne", "period", AttributeValue::text("1828-1905"))
            .entity_triple("comet", "author", "verne");
        let kg = b.build().unwrap();
        let vocab = Vocabulary::build(
            ["sir frederick ashton nationality united kindom jules verne period 1828-1905 off on a comet author the of is"],
            1000,
            1,
        )
        .unwrap();
        (kg, vocab)
    }

    fn render(v: &Vocabulary, ids: &[u32]) -> String {
        v.detokenize_ids(ids).unwrap()
    }

    #[test]
    fn characterize_fields() {
        let (kg, _) = ashton();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let [h, r, t] = characterize(&kg, 0, 0, &mut rng).unwrap();
        assert_eq!(
            (h.text.as_str(), h.origin),
            ("sir frederick ashton", Origin::HeadEntity)
        );
        assert_eq!((r.text.as_str(), r.origin), ("nationality", Origin::Relation));
        assert_eq!((t.text.as_str(), t.origin), ("united kindom", Origin::TailEntity));
        let [_, _, t] = characterize(&kg, 1, 0, &mut rng).unwrap();
        assert_eq!((t.text.as_str(), t.origin), ("1828-1905", Origin::AttributeValue));
    }

    #[test]
    fn template_strategy() {
        let (kg, vocab) = ashton();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let strategy: Strategy = "template:the {r} of {h} is {t}".parse().unwrap();
        let plan = single_triple_plan(&kg, 2, &strategy, &mut rng).unwrap();
        let text = render(&vocab, &vocab.tokenize(&plan.render()).tokens);
        assert_eq!(text, "the author of off on a comet is jules verne");
        assert_eq!(plan.segments[0].origin, Origin::Auxiliary);
        assert!("bogus".parse::<Strategy>().is_err());
        assert!("template:{x}".parse::<Strategy>().is_err());
    }

    #[test]
    fn single_segment_plan() {
        let seg = Segment::new("jules verne", Origin::HeadEntity, vec![]);
        let plan = construct(vec![seg.clone()], &Strategy::Concatenate, Provenance::default()).unwrap();
        assert_eq!(plan.segments, vec![seg]);
        assert!(construct(vec![], &Strategy::Concatenate, Provenance::default()).is_err());
    }

    #[test]
    fn zero_probability_leaves_text_untouched() {
        let (kg, vocab) = ashton();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ki(
            &kg,
            1,
            &Strategy::Concatenate,
            &vocab,
            &MaskingConfig::with_prob(0.0),
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            render(&vocab, &m.input_ids),
            "[CLS] jules verne period 1828 - 1905 [SEP]"
        );
        assert_eq!(m.input_ids, m.original_ids);
        assert_eq!(m.label_count(), 0);
    }

    #[test]
    fn head_entity_masks_as_one_span() {
        let (kg, vocab) = ashton();
        let cfg = MaskingConfig {
            mask_frac: 1.0,
            random_frac: 0.0,
            keep_frac: 0.0,
            ..MaskingConfig::with_prob(0.5)
        };
        let mut found = false;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = ki(&kg, 0, &Strategy::Concatenate, &vocab, &cfg, &mut rng).unwrap();
            if m.selected_units.len() == 1 && m.selected_units[0].origin == Origin::HeadEntity {
                assert_eq!(
                    render(&vocab, &m.input_ids),
                    "[CLS] [MASK] [MASK] [MASK] nationality united kindom [SEP]"
                );
                let labelled: Vec<usize> = (0..m.labels.len()).filter(|&i| m.labels[i].is_some()).collect();
                assert_eq!(labelled, vec![1, 2, 3]);
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn deterministic_given_seed() {
        let (kg, vocab) = ashton();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            ki(
                &kg,
                0,
                &Strategy::Concatenate,
                &vocab,
                &MaskingConfig::default(),
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn truncation_keeps_final_sep() {
        let seg = Segment::new("a b c d e f g h", Origin::Relation, vec![]);
        let plan = CompositionPlan::new(vec![seg], Provenance::default());
        let vocab = Vocabulary::build(["a b c d e f g h"], 100, 1).unwrap();
        let cfg = MaskingConfig {
            max_len: 5,
            ..MaskingConfig::with_prob(0.0)
        };
        let m = mask(&plan, &vocab, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(render(&vocab, &m.original_ids), "[CLS] a b c [SEP]");
    }

    #[test]
    fn degenerate_plan_is_an_error() {
        let plan = CompositionPlan::new(vec![Segment::separator()], Provenance::default());
        let vocab = Vocabulary::from_units(["a"]);
        assert!(matches!(
            mask(
                &plan,
                &vocab,
                &MaskingConfig::default(),
                &mut ChaCha8Rng::seed_from_u64(0)
            ),
            Err(InjectionError::DegenerateInput)
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = MaskingConfig::default();
        cfg.select_prob = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = MaskingConfig::default();
        cfg.keep_frac = 0.3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn calibration_hits_target_rate() {
        for n in 1..8 {
            let w = vec![0.15; n];
            let q = calibrated_probabilities(&w);
            let none: f64 = q.iter().map(|p| 1.0 - p).product();
            let rate = q.iter().sum::<f64>() * (1.0 + none) / n as f64;
            assert!((rate - 0.15).abs() < 1e-12, "n={n} rate={rate}");
        }
        assert_eq!(calibrated_probabilities(&[0.0, 0.0]), vec![0.0, 0.0]);
        let q = calibrated_probabilities(&[1.0, 1.0]);
        assert!(q.iter().all(|p| (p - 1.0).abs() < 1e-9));
    }

    #[test]
    fn up_weighting_makes_auxiliary_maskable() {
        let (kg, vocab) = ashton();
        let strategy: Strategy = "template:the {r} of {h} is {t}".parse().unwrap();
        let cfg = MaskingConfig {
            weighting: UnitWeighting::UpWeight(2.0),
            ..MaskingConfig::with_prob(0.5)
        };
        let mut aux = 0;
        let mut knowledge = 0;
        for seed in 0..2000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = ki(&kg, 2, &strategy, &vocab, &cfg, &mut rng).unwrap();
            for u in &m.selected_units {
                if u.origin == Origin::Auxiliary {
                    aux += 1;
                } else {
                    knowledge += 1;
                }
            }
        }
        // 3 auxiliary word units at half weight vs 3 knowledge units.
        assert!(aux > 0 && knowledge > aux, "aux={aux} knowledge={knowledge}");
        let default = MaskingConfig::with_prob(0.5);
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = ki(&kg, 2, &strategy, &vocab, &default, &mut rng).unwrap();
            assert!(m.selected_units.iter().all(|u| u.origin.is_knowledge()));
        }
    }
}
