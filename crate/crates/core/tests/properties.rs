use std::sync::OnceLock;

use kgc_core::audit::audit_example;
use kgc_core::curriculum::{gen_lesson1, gen_lesson2, gen_lesson3, Lesson, LessonSpec};
use kgc_core::injection::{MaskingConfig, Strategy};
use kgc_core::kg::synthetic::{generate, SyntheticKgConfig};
use kgc_core::kg::{load_kg, KgBuilder, KnowledgeGraph};
use kgc_core::tokenizer::{Vocabulary, MASK_ID};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn shared() -> &'static (KnowledgeGraph, Vocabulary) {
    static KG: OnceLock<(KnowledgeGraph, Vocabulary)> = OnceLock::new();
    KG.get_or_init(|| {
        let kg = generate(&SyntheticKgConfig {
            entities: 120,
            triples: 600,
            seed: 17,
            ..Default::default()
        })
        .unwrap();
        let v = Vocabulary::from_kg(&kg, 5000, 1).unwrap();
        (kg, v)
    })
}

/// Four standard deviations of a binomial count.
fn binomial_bound(n: usize, p: f64) -> f64 {
    4.0 * (n as f64 * p * (1.0 - p)).sqrt()
}

#[test]
fn triple_draws_are_uniform() {
    let mut b = KgBuilder::new();
    for e in ["a", "b", "c", "d"] {
        b.name(e, e);
    }
    b.name("r", "r").name("s", "s");
    b.entity_triple("a", "r", "b")
        .entity_triple("a", "s", "c")
        .entity_triple("b", "r", "c")
        .entity_triple("c", "r", "d")
        .entity_triple("d", "s", "a")
        .entity_triple("b", "s", "d");
    let kg = b.build().unwrap();
    let bound = binomial_bound(60_000, 1.0 / 6.0);
    assert!(bound <= 400.0);
    let mut counts = [0usize; 6];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..60_000 {
        counts[kg.sample_triple(&mut rng).unwrap()] += 1;
    }
    for c in counts {
        assert!((c as f64 - 10_000.0).abs() <= bound, "{counts:?}");
    }
}

#[test]
fn name_draws_are_uniform() {
    let mut b = KgBuilder::new();
    b.names("nsw", ["p : nsw", "au - ns"]).name("x", "x").name("r", "r");
    b.entity_triple("nsw", "r", "x");
    let kg = b.build().unwrap();
    let nsw = kg.triple(0).head;
    let bound = binomial_bound(10_000, 0.5);
    assert!(bound <= 300.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let first = (0..10_000)
        .filter(|_| kg.sample_name(nsw, &mut rng).unwrap() == "p : nsw")
        .count();
    assert!((first as f64 - 5000.0).abs() <= bound, "{first}");
}

fn index_sound(kg: &KnowledgeGraph) {
    let mut seen = vec![false; kg.len()];
    for e in kg.entity_ids() {
        for &i in kg.by_head(e) {
            assert_eq!(kg.triple(i).head, e);
            assert!(!seen[i], "triple {i} in two buckets");
            seen[i] = true;
        }
    }
    assert!(seen.iter().all(|&s| s));
    for ((h, r), bucket) in kg.head_relation_buckets() {
        for &i in bucket {
            assert_eq!((kg.triple(i).head, kg.triple(i).relation), (*h, *r));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_graphs_index_and_reload(seed in any::<u64>(), triples in 20usize..300) {
        let kg = generate(&SyntheticKgConfig {
            entities: 60,
            triples,
            seed,
            ..Default::default()
        })
        .unwrap();
        index_sound(&kg);
        let dir = tempfile::tempdir().unwrap();
        let (t, n) = (dir.path().join("t.tsv"), dir.path().join("n.tsv"));
        kg.save(&t, &n).unwrap();
        let back = load_kg(&t, &n).unwrap();
        prop_assert_eq!(back.triples(), kg.triples());
        for e in kg.entity_ids() {
            prop_assert_eq!(back.by_head(e), kg.by_head(e));
            prop_assert_eq!(back.names(e).unwrap(), kg.names(e).unwrap());
        }
    }

    #[test]
    fn sampled_patterns_hold(seed in any::<u64>()) {
        let (kg, _) = shared();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for n in [2usize, 3] {
            let chain = kg.sample_chain(n, &mut rng).unwrap();
            prop_assert_eq!(chain.len(), n);
            for w in chain.windows(2) {
                prop_assert_eq!(kg.triple(w[0]).tail.entity(), Some(kg.triple(w[1]).head));
            }
            let objs = kg.sample_multi_object(n, &mut rng).unwrap();
            let first = kg.triple(objs[0]);
            for (k, &i) in objs.iter().enumerate() {
                let t = kg.triple(i);
                prop_assert_eq!((t.head, t.relation), (first.head, first.relation));
                for &j in &objs[..k] {
                    prop_assert_ne!(&kg.triple(j).tail, &t.tail);
                }
            }
        }
    }

    #[test]
    fn examples_are_well_formed(seed in any::<u64>(), lesson in 1u8..=3, random_frac in 0.0f64..0.5) {
        let (kg, v) = shared();
        let mut spec = LessonSpec::new(Lesson::from_number(lesson).unwrap());
        spec.masking.mask_frac = 1.0 - random_frac;
        spec.masking.random_frac = random_frac;
        spec.masking.keep_frac = 0.0;
        let support = kg.pattern_support(3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ex = match spec.lesson {
            Lesson::Facts => {
                let t = kg.sample_triple(&mut rng).unwrap();
                gen_lesson1(kg, v, t, &spec, &Strategy::Concatenate, &mut rng)
            }
            Lesson::Steps => gen_lesson2(kg, v, &spec, &support, &mut rng),
            Lesson::Compositions => gen_lesson3(kg, v, &spec, &support, &mut rng),
        }
        .unwrap();
        let problems = audit_example(kg, &ex);
        prop_assert!(problems.is_empty(), "{:?}", problems);
        if random_frac == 0.0 {
            for (pos, l) in ex.masked.labels.iter().enumerate() {
                prop_assert_eq!(l.is_some(), ex.masked.input_ids[pos] == MASK_ID);
            }
        }
    }

    #[test]
    fn keep_branch_leaves_tokens(seed in any::<u64>()) {
        let (kg, v) = shared();
        let cfg = MaskingConfig {
            mask_frac: 0.0,
            random_frac: 0.0,
            keep_frac: 1.0,
            ..MaskingConfig::with_prob(0.5)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = kg.sample_triple(&mut rng).unwrap();
        let m = kgc_core::injection::ki(kg, t, &Strategy::Concatenate, v, &cfg, &mut rng).unwrap();
        prop_assert_eq!(&m.input_ids, &m.original_ids);
        for (pos, l) in m.labels.iter().enumerate() {
            if let Some(l) = l {
                prop_assert_eq!(*l, m.input_ids[pos]);
            }
        }
    }
}
