use std::collections::HashSet;

use kgc_core::curriculum::PatternTag;
use kgc_core::kg::synthetic::{self, SyntheticKgConfig};
use kgc_core::kg::{KnowledgeGraph, Tail};
use kgc_harness::config::QaConfig;
use kgc_harness::qa::{build_synthetic_qa, read_jsonl, train_subset, write_jsonl, Difficulty, QaExample, SLOT};
use proptest::prelude::*;

fn graph(seed: u64) -> KnowledgeGraph {
    synthetic::generate(&SyntheticKgConfig {
        entities: 80,
        relations: 8,
        triples: 300,
        seed,
        ..SyntheticKgConfig::default()
    })
    .unwrap()
}

fn qa_config() -> QaConfig {
    QaConfig {
        questions: 200,
        ..QaConfig::default()
    }
}

fn norm(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn surfaces(kg: &KnowledgeGraph, tail: &Tail) -> Vec<String> {
    match tail {
        Tail::Entity(e) => kg.names(*e).unwrap().iter().map(|n| norm(n)).collect(),
        Tail::Attribute(v) => vec![norm(v.rendering())],
    }
}

/// Independent walk: all tails reached from the first head along the
/// relations of the question's triples (or the one shared relation for a
/// multi-object question).
fn answers(kg: &KnowledgeGraph, ex: &QaExample) -> HashSet<String> {
    let triples: Vec<_> = ex.provenance.triples.iter().map(|&t| kg.triple(t).clone()).collect();
    let relations: Vec<_> = match ex.provenance.pattern {
        PatternTag::Multiobject => vec![triples[0].relation],
        _ => triples.iter().map(|t| t.relation).collect(),
    };
    let mut frontier = vec![Tail::Entity(triples[0].head)];
    for r in relations {
        let mut next = Vec::new();
        for t in kg.triples() {
            if t.relation == r && frontier.iter().any(|f| *f == Tail::Entity(t.head)) && !next.contains(&t.tail) {
                next.push(t.tail.clone());
            }
        }
        frontier = next;
    }
    frontier.iter().flat_map(|t| surfaces(kg, t)).collect()
}

fn check_example(kg: &KnowledgeGraph, ex: &QaExample) {
    assert_eq!(ex.candidates.len(), 11);
    assert_eq!(ex.gold.len(), 1);
    assert_eq!(ex.candidates.iter().filter(|c| **c == ex.gold[0]).count(), 1);
    let distinct: HashSet<String> = ex.candidates.iter().map(|c| norm(c)).collect();
    assert_eq!(distinct.len(), ex.candidates.len(), "{:?}", ex.candidates);
    assert_eq!(ex.question.matches(SLOT).count(), 1, "{}", ex.question);

    let valid = answers(kg, ex);
    assert!(valid.contains(&norm(&ex.gold[0])), "gold {:?} not reachable", ex.gold);
    for c in ex.candidates.iter().filter(|c| !ex.gold.contains(c)) {
        assert!(!valid.contains(&norm(c)), "distractor {c} also answers {}", ex.question);
    }
    let last = kg.triple(*ex.provenance.triples.last().unwrap());
    assert_eq!(norm(kg.tail_text(&last.tail).unwrap()), norm(&ex.gold[0]));
    match ex.difficulty {
        Difficulty::Easy => assert_eq!(ex.provenance.triples.len(), 1),
        Difficulty::Hard => assert!(ex.provenance.triples.len() >= 2),
    }
}

#[test]
fn default_graph_questions_are_well_formed() {
    let kg = synthetic::generate(&SyntheticKgConfig::default()).unwrap();
    let split = build_synthetic_qa(&kg, &QaConfig::default(), 1).unwrap();
    assert_eq!(split.train.len() + split.test.len(), 1000);
    for ex in split.train.iter().chain(&split.test) {
        check_example(&kg, ex);
    }
    let hard = split.test.iter().filter(|e| e.difficulty == Difficulty::Hard).count();
    assert_eq!(hard, 90);
}

#[test]
fn jsonl_round_trip() {
    let kg = graph(3);
    let split = build_synthetic_qa(&kg, &qa_config(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("test.jsonl");
    write_jsonl(&path, &split.test).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), split.test);
}

#[test]
fn smaller_training_fractions_are_subsets() {
    let kg = graph(4);
    let split = build_synthetic_qa(&kg, &qa_config(), 4).unwrap();
    let mut prev: Option<Vec<QaExample>> = None;
    for frac in [0.2, 0.4, 0.6, 0.8, 1.0] {
        let sub = train_subset(&split.train, frac, 4);
        assert_eq!(sub.len(), (split.train.len() as f64 * frac).round() as usize);
        if let Some(p) = &prev {
            assert!(p.iter().all(|e| sub.contains(e)));
        }
        prev = Some(sub);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn questions_are_answerable_and_splits_disjoint(kg_seed in 0u64..1000, qa_seed in 0u64..1000) {
        let kg = graph(kg_seed);
        let split = build_synthetic_qa(&kg, &qa_config(), qa_seed).unwrap();
        prop_assert!(!split.train.is_empty() && !split.test.is_empty());
        for ex in split.train.iter().chain(&split.test) {
            check_example(&kg, ex);
        }
        // Fine-tuning never sees a fact a test question is built on.
        let train: HashSet<usize> = split.train.iter().flat_map(|e| e.provenance.triples.clone()).collect();
        let test: HashSet<usize> = split.test.iter().flat_map(|e| e.provenance.triples.clone()).collect();
        prop_assert!(train.is_disjoint(&test));
        let train_text: Vec<String> = split.train.iter().map(|e| norm(&e.question)).collect();
        for ex in split.test.iter().filter(|e| e.difficulty == Difficulty::Easy) {
            let fact = norm(&ex.question.replace(SLOT, &ex.gold[0]));
            prop_assert!(!train_text.iter().any(|q| q.contains(&fact)), "{} leaks into training", fact);
        }
    }

    #[test]
    fn generation_is_deterministic(seed in 0u64..1000) {
        let kg = graph(7);
        prop_assert_eq!(build_synthetic_qa(&kg, &qa_config(), seed).unwrap(), build_synthetic_qa(&kg, &qa_config(), seed).unwrap());
    }
}
