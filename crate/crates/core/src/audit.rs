//! Structural checks over generated examples.

use std::fmt;

use crate::curriculum::{
    discarded_entity_leaks, leaked_positions, pattern_holds, Example, Lesson, PatternKind, PatternTag,
};
use crate::injection::atomicity_violations;
use crate::kg::KnowledgeGraph;
use crate::tokenizer::{self, SPECIALS};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Multi-hop provenance does not link tail to head.
    ChainLinkage,
    /// Multi-object provenance does not share head and relation.
    BucketEquality,
    /// A discarded entity's name surfaces in the composition.
    IntermediatePresent {
        triple: usize,
    },
    /// A masked element survives uncorrupted elsewhere in the example.
    Leak {
        position: usize,
    },
    /// Part of a unit is labelled and part is not.
    Atomicity {
        position: usize,
    },
    /// Wrong number of [SEP]-terminated regions.
    Layout {
        expected: usize,
        found: usize,
    },
    /// Labels do not match the uncorrupted tokens or the corruption rule.
    Label {
        position: usize,
    },
    SpecialSelected {
        position: usize,
    },
    NonKnowledgeSelected {
        position: usize,
    },
    LengthMismatch,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// All violations in one example under the default (knowledge-only) masking;
/// empty when the example is well formed.
pub fn audit_example(kg: &KnowledgeGraph, ex: &Example) -> Vec<Violation> {
    let mut out = Vec::new();
    let m = &ex.masked;
    let triples = &ex.plan.provenance.triples;
    if m.input_ids.len() != m.original_ids.len()
        || m.labels.len() != m.original_ids.len()
        || m.token_sources.len() != m.original_ids.len()
    {
        out.push(Violation::LengthMismatch);
        return out;
    }

    match ex.pattern {
        PatternTag::Multihop if !pattern_holds(kg, PatternKind::MultiHop, triples) => out.push(Violation::ChainLinkage),
        PatternTag::Multiobject if !pattern_holds(kg, PatternKind::MultiObject, triples) => {
            out.push(Violation::BucketEquality)
        }
        _ => {}
    }
    if ex.pattern == PatternTag::Multihop {
        out.extend(
            discarded_entity_leaks(kg, ex)
                .into_iter()
                .map(|triple| Violation::IntermediatePresent { triple }),
        );
    }
    if ex.lesson == Lesson::Steps {
        out.extend(
            leaked_positions(ex)
                .into_iter()
                .map(|position| Violation::Leak { position }),
        );
    }
    out.extend(
        atomicity_violations(&ex.plan, m)
            .into_iter()
            .map(|position| Violation::Atomicity { position }),
    );

    let seps = m.original_ids.iter().filter(|&&t| t == tokenizer::SEP_ID).count();
    let expected = match ex.lesson {
        Lesson::Steps => triples.len() + 1,
        _ => 1,
    };
    // Truncation can drop step separators.
    if seps != expected && !m.truncated {
        out.push(Violation::Layout { expected, found: seps });
    }

    for (pos, label) in m.labels.iter().enumerate() {
        let Some(label) = label else { continue };
        let Some(src) = m.token_sources[pos] else {
            out.push(Violation::SpecialSelected { position: pos });
            continue;
        };
        if *label != m.original_ids[pos]
            || (m.input_ids[pos] as usize) < SPECIALS.len() && m.input_ids[pos] != tokenizer::MASK_ID
        {
            out.push(Violation::Label { position: pos });
        }
        let origin = ex.plan.segments[src.segment as usize].origin;
        if !origin.is_knowledge() {
            out.push(Violation::NonKnowledgeSelected { position: pos });
        }
    }
    for (pos, (&input, &orig)) in m.input_ids.iter().zip(&m.original_ids).enumerate() {
        if m.labels[pos].is_none() && input != orig {
            out.push(Violation::Label { position: pos });
        }
    }
    out
}
