//! Synthetic knowledge graphs for desk-scale experiments.
//!
//! Entities get pronounceable made-up names (some with an alias), relations
//! come from a fixed phrase list, and attribute relations carry numbers,
//! dates or short texts. `chain_density` biases heads toward entities that
//! already occur as tails, which controls how many multi-hop chains exist.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttributeKind, AttributeValue, KgBuilder, KgError, KnowledgeGraph, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticKgConfig {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    /// Probability that a new entity-tail triple starts from an existing tail.
    pub chain_density: f64,
    /// Share of relations that are attributes (number, date or text valued).
    pub attribute_fraction: f64,
    /// Share of entity relations that allow several tails per head.
    pub multi_valued_fraction: f64,
    /// Probability that an entity carries a second name.
    pub alias_probability: f64,
    pub seed: u64,
}

impl Default for SyntheticKgConfig {
    fn default() -> Self {
        SyntheticKgConfig {
            entities: 300,
            relations: 20,
            triples: 1500,
            chain_density: 0.6,
            attribute_fraction: 0.2,
            multi_valued_fraction: 0.3,
            alias_probability: 0.2,
            seed: 7,
        }
    }
}

const RELATION_PHRASES: &[&str] = &[
    "author",
    "located in",
    "member of",
    "works at",
    "shares border with",
    "capital",
    "part of the series",
    "nationality",
    "used money",
    "spouse",
    "founded by",
    "divides into",
    "based in",
    "on lake",
    "characters",
    "recording by",
    "student of",
    "flag",
    "sister city",
    "official language",
    "headquarters",
    "parent company",
    "genre",
    "instrument",
];

const ATTRIBUTE_PHRASES: &[(&str, AttributeKind)] = &[
    ("population", AttributeKind::Number),
    ("founded", AttributeKind::Date),
    ("motto", AttributeKind::Text),
    ("height", AttributeKind::Number),
    ("birth date", AttributeKind::Date),
    ("nickname", AttributeKind::Text),
    ("area", AttributeKind::Number),
    ("opening date", AttributeKind::Date),
];

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st", "th", "sh",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ea"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "l", "th"];

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
    }
    w.push_str(CODAS.choose(rng).unwrap());
    w
}

#[derive(Clone, Debug)]
enum RelationShape {
    Entity { multi_valued: bool, range: Vec<usize> },
    Attribute(AttributeKind),
}

/// Builds a random graph with exactly `cfg.triples` triples.
pub fn generate(cfg: &SyntheticKgConfig) -> Result<KnowledgeGraph> {
    if cfg.entities < 2 || cfg.relations == 0 || cfg.triples == 0 {
        return Err(KgError::Config(
            "need at least 2 entities, 1 relation and 1 triple".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = KgBuilder::new();

    let mut used_words = HashSet::new();
    let mut fresh_word = |rng: &mut ChaCha8Rng| loop {
        let w = pseudo_word(rng);
        if used_words.insert(w.clone()) {
            return w;
        }
    };
    for e in 0..cfg.entities {
        let id = format!("e{e}");
        let words = rng.gen_range(1..=2);
        let name = (0..words).map(|_| fresh_word(&mut rng)).collect::<Vec<_>>().join(" ");
        b.name(&id, &name);
        if rng.gen_bool(cfg.alias_probability) {
            let alias = fresh_word(&mut rng);
            b.name(&id, &alias);
        }
    }

    let attributes = ((cfg.relations as f64) * cfg.attribute_fraction).round() as usize;
    let attributes = attributes.min(cfg.relations.saturating_sub(1));
    let mut shapes = Vec::with_capacity(cfg.relations);
    for r in 0..cfg.relations {
        let id = format!("r{r}");
        if r < attributes {
            let (phrase, kind) = ATTRIBUTE_PHRASES[r % ATTRIBUTE_PHRASES.len()];
            let name = if r < ATTRIBUTE_PHRASES.len() {
                phrase.to_string()
            } else {
                format!("{phrase} {}", fresh_word(&mut rng))
            };
            b.name(&id, &name);
            shapes.push(RelationShape::Attribute(kind));
        } else {
            let k = r - attributes;
            let name = if k < RELATION_PHRASES.len() {
                RELATION_PHRASES[k].to_string()
            } else {
                fresh_word(&mut rng)
            };
            b.name(&id, &name);
            // Each relation draws tails from its own slice of the entities.
            let mut range: Vec<usize> = (0..cfg.entities).collect();
            range.shuffle(&mut rng);
            range.truncate((cfg.entities / 4).max(12).min(cfg.entities));
            shapes.push(RelationShape::Entity {
                multi_valued: rng.gen_bool(cfg.multi_valued_fraction),
                range,
            });
        }
    }

    let mut seen: HashSet<(usize, usize, String)> = HashSet::new();
    let mut functional_used: HashSet<(usize, usize)> = HashSet::new();
    let mut tails: Vec<usize> = Vec::new();
    let mut tail_set: HashSet<usize> = HashSet::new();
    let mut produced = 0usize;
    let budget = cfg.triples * 200;
    for _ in 0..budget {
        if produced == cfg.triples {
            break;
        }
        let r = rng.gen_range(0..cfg.relations);
        let head = if !tails.is_empty() && rng.gen_bool(cfg.chain_density) {
            tails[rng.gen_range(0..tails.len())]
        } else {
            rng.gen_range(0..cfg.entities)
        };
        match &shapes[r] {
            RelationShape::Attribute(kind) => {
                if !functional_used.insert((head, r)) {
                    continue;
                }
                let raw = match kind {
                    AttributeKind::Number => rng.gen_range(1..100_000u32).to_string(),
                    AttributeKind::Date => format!(
                        "{}-{:02}-{:02}",
                        rng.gen_range(1700..2024),
                        rng.gen_range(1..=12),
                        rng.gen_range(1..=28)
                    ),
                    AttributeKind::Text => {
                        format!("{} {}", fresh_word(&mut rng), fresh_word(&mut rng))
                    }
                };
                let value = AttributeValue::new(*kind, &raw).map_err(KgError::Config)?;
                seen.insert((head, r, raw));
                b.attribute_triple(&format!("e{head}"), &format!("r{r}"), value);
            }
            RelationShape::Entity { multi_valued, range } => {
                let tail = range[rng.gen_range(0..range.len())];
                if tail == head {
                    continue;
                }
                if !multi_valued && functional_used.contains(&(head, r)) {
                    continue;
                }
                if !seen.insert((head, r, format!("e{tail}"))) {
                    continue;
                }
                functional_used.insert((head, r));
                if tail_set.insert(tail) {
                    tails.push(tail);
                }
                b.entity_triple(&format!("e{head}"), &format!("r{r}"), &format!("e{tail}"));
            }
        }
        produced += 1;
    }
    if produced < cfg.triples {
        return Err(KgError::Config(format!(
            "could only place {produced} of {} triples; add entities or relations",
            cfg.triples
        )));
    }
    b.build()
}
