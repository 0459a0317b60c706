use std::path::PathBuf;

use kgc_core::curriculum::{
    compose, gen_lesson2, lesson2_plan, lesson3_plan, Example, Lesson, LessonSpec, PatternKind, PatternTag,
    ReasoningPattern,
};
use kgc_core::injection::{self, ki, mask, MaskingConfig, Strategy};
use kgc_core::kg::{load_kg, KnowledgeGraph};
use kgc_core::tokenizer::Vocabulary;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture() -> (KnowledgeGraph, Vocabulary) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/samples");
    let kg = load_kg(&dir.join("triples.tsv"), &dir.join("names.tsv")).unwrap();
    let vocab = Vocabulary::from_kg(&kg, 10_000, 1).unwrap();
    (kg, vocab)
}

fn find(kg: &KnowledgeGraph, head: &str, relation: &str) -> usize {
    kg.triples()
        .iter()
        .position(|t| kg.entity_key(t.head) == head && kg.relation_key(t.relation) == relation)
        .unwrap()
}

fn show(v: &Vocabulary, ids: &[u32]) -> String {
    v.detokenize_ids(ids).unwrap()
}

fn all_masked() -> MaskingConfig {
    MaskingConfig {
        mask_frac: 1.0,
        random_frac: 0.0,
        keep_frac: 0.0,
        ..MaskingConfig::default()
    }
}

/// Searches seeds until masking produces `expected`; the search itself is
/// deterministic, so this pins the masked rendering exactly.
fn masked_form_reachable(v: &Vocabulary, plan: &injection::CompositionPlan, cfg: &MaskingConfig, expected: &str) {
    for seed in 0..5000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = mask(plan, v, cfg, &mut rng).unwrap();
        if show(v, &m.input_ids) == expected {
            for (pos, label) in m.labels.iter().enumerate() {
                if let Some(l) = label {
                    assert_eq!(*l, m.original_ids[pos]);
                }
            }
            return;
        }
    }
    panic!("never produced {expected}");
}

#[test]
fn sample_1_single_fact() {
    let (kg, v) = fixture();
    let t = find(&kg, "ashton", "nationality");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = ki(
        &kg,
        t,
        &Strategy::Concatenate,
        &v,
        &MaskingConfig::with_prob(0.0),
        &mut rng,
    )
    .unwrap();
    assert_eq!(
        show(&v, &m.original_ids),
        "[CLS] sir frederick ashton nationality united kindom [SEP]"
    );
    let plan = injection::single_triple_plan(&kg, t, &Strategy::Concatenate, &mut rng).unwrap();
    masked_form_reachable(
        &v,
        &plan,
        &all_masked(),
        "[CLS] [MASK] [MASK] [MASK] nationality united kindom [SEP]",
    );
}

#[test]
fn sample_3_relation_words() {
    let (kg, v) = fixture();
    let t = find(&kg, "maldives", "used_money");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let plan = injection::single_triple_plan(&kg, t, &Strategy::Concatenate, &mut rng).unwrap();
    let m = mask(&plan, &v, &MaskingConfig::with_prob(0.0), &mut rng).unwrap();
    assert_eq!(
        show(&v, &m.original_ids),
        "[CLS] republic of maldives used money maldivian rufiyah [SEP]"
    );
    masked_form_reachable(
        &v,
        &plan,
        &all_masked(),
        "[CLS] republic of maldives [MASK] [MASK] maldivian rufiyah [SEP]",
    );
}

#[test]
fn sample_9_multi_hop_composition() {
    let (kg, v) = fixture();
    let triples = [find(&kg, "ziegler", "working_at"), find(&kg, "strassbourg", "on_lake")];
    let pattern = ReasoningPattern {
        kind: PatternKind::MultiHop,
        arity: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let plan = lesson3_plan(&kg, &triples, &pattern, &mut rng).unwrap();
    let m = mask(&plan, &v, &MaskingConfig::with_prob(0.0), &mut rng).unwrap();
    assert_eq!(
        show(&v, &m.original_ids),
        "[CLS] theobald ziegler working at on lake the rhine [SEP]"
    );
    masked_form_reachable(
        &v,
        &plan,
        &all_masked(),
        "[CLS] theobald ziegler working at on lake [MASK] [MASK] [SEP]",
    );
}

#[test]
fn sample_10_multi_object_composition() {
    let (kg, v) = fixture();
    let a = find(&kg, "ferrieres", "shares_border");
    let pattern = ReasoningPattern {
        kind: PatternKind::MultiObject,
        arity: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let plan = compose(&kg, &[a, a + 1], &pattern, &Strategy::Concatenate, &mut rng).unwrap();
    let m = mask(&plan, &v, &MaskingConfig::with_prob(0.0), &mut rng).unwrap();
    assert_eq!(
        show(&v, &m.original_ids),
        "[CLS] ferrieres , somme shares border with ailly - sur - somme pont - de - metz [SEP]"
    );
    masked_form_reachable(
        &v,
        &plan,
        &all_masked(),
        "[CLS] ferrieres , somme [MASK] [MASK] [MASK] ailly - sur - somme pont - de - metz [SEP]",
    );
}

#[test]
fn sample_6_steps_then_composition() {
    let (kg, v) = fixture();
    let triples = [find(&kg, "collaroy", "based_in"), find(&kg, "nsw", "divides_into")];
    let pattern = ReasoningPattern {
        kind: PatternKind::MultiHop,
        arity: 2,
    };
    let mut names_seen = std::collections::BTreeSet::new();
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = lesson2_plan(&kg, &triples, &pattern, &mut rng).unwrap();
        let m = mask(&plan, &v, &MaskingConfig::with_prob(0.0), &mut rng).unwrap();
        let text = show(&v, &m.original_ids);
        assert!(text.starts_with("[CLS] collaroy plateau based in "));
        assert!(text.ends_with(
            "divides into gundagai shire council [SEP] collaroy plateau based in divides into gundagai shire council [SEP]"
        ));
        names_seen.insert(text);
    }
    // The intermediate entity is named independently at each mention.
    assert_eq!(names_seen.len(), 4);

    let plan = lesson2_plan(&kg, &triples, &pattern, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let cfg = MaskingConfig {
        select_prob: 0.3,
        ..all_masked()
    };
    let mut found = false;
    for seed in 0..5000 {
        let m = mask(&plan, &v, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let text = show(&v, &m.input_ids);
        if text.contains("based in [MASK] into gundagai shire council [SEP]") {
            // "divides" is masked in its step as well.
            assert!(text.contains("[MASK] into gundagai shire council [SEP] collaroy"));
            assert_eq!(m.label_count(), 2);
            found = true;
            break;
        }
    }
    assert!(found);
}

#[test]
fn lesson2_with_zero_probability_has_no_labels() {
    let (kg, v) = fixture();
    let mut spec = LessonSpec::new(Lesson::Steps);
    spec.masking.select_prob = 0.0;
    let support = kg.pattern_support(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ex: Example = gen_lesson2(&kg, &v, &spec, &support, &mut rng).unwrap();
    assert_eq!(ex.masked.label_count(), 0);
    assert_ne!(ex.pattern, PatternTag::Single);
}
