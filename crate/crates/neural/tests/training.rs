use kgc_neural::layers::Dropout;
use kgc_neural::model::{Model, ModelConfig, QaObjective};
use kgc_neural::optim::{AdamW, AdamWConfig, Schedule};
use kgc_neural::params::Role;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config() -> ModelConfig {
    ModelConfig {
        vocab_size: 32,
        layers: 2,
        dim: 32,
        heads: 2,
        ff_dim: 64,
        max_positions: 16,
        ..ModelConfig::default()
    }
}

fn batch() -> Vec<(Vec<u32>, Vec<Option<u32>>)> {
    vec![
        (vec![2, 10, 4, 11, 3], vec![None, None, Some(20), None, None]),
        (vec![2, 12, 4, 13, 3], vec![None, None, Some(21), None, None]),
        (vec![2, 14, 4, 15, 3], vec![None, Some(14), None, Some(15), None]),
    ]
}

fn train(seed: u64, steps: u64) -> (Model<f32>, Vec<f32>) {
    let mut m = Model::<f32>::new(config(), seed).unwrap();
    m.store.set_trainable(Role::BaseLm, false);
    m.store.set_trainable(Role::QaHead, false);
    let mut opt = AdamW::new(AdamWConfig::default(), Schedule::new(1e-3, steps));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::new();
    let data = batch();
    let scale = 1.0 / data.len() as f32;
    for _ in 0..steps {
        let mut g = m.new_grads();
        let mut total = 0.0;
        for (ids, labels) in &data {
            let mut drop = Dropout::train(0.1, &mut rng);
            total += m.mlm(ids, labels, &mut drop, Some(&mut g), scale).unwrap().loss * scale;
        }
        opt.step(&mut m.store, &mut g).unwrap();
        losses.push(total);
    }
    (m, losses)
}

#[test]
fn overfits_a_tiny_batch_with_frozen_base() {
    let init = Model::<f32>::new(config(), 9).unwrap().store.snapshot(Role::BaseLm);
    let (m, losses) = train(9, 500);
    assert!(losses[0] > 2.0);
    let eval: f32 = batch()
        .iter()
        .map(|(ids, labels)| m.mlm(ids, labels, &mut Dropout::off(), None, 1.0).unwrap().loss)
        .sum::<f32>()
        / 3.0;
    assert!(eval < 0.05, "final loss {eval}");
    assert_eq!(m.store.snapshot(Role::BaseLm), init);
}

#[test]
fn training_is_deterministic() {
    let (a, la) = train(4, 20);
    let (b, lb) = train(4, 20);
    assert_eq!(la, lb);
    for id in a.store.ids() {
        assert_eq!(a.store.value(id), b.store.value(id));
    }
}

#[test]
fn qa_fine_tuning_learns_to_rank() {
    let mut m = Model::<f32>::new(config(), 2).unwrap();
    m.store.set_trainable(Role::MlmHead, false);
    let questions: Vec<(Vec<Vec<u32>>, Vec<bool>)> = (0..4u32)
        .map(|q| {
            let cands = (0..4u32).map(|c| vec![2, 10 + q, 4, 3, 20 + c, 3]).collect();
            let gold = (0..4u32).map(|c| c == q).collect();
            (cands, gold)
        })
        .collect();
    let steps = 300;
    let mut opt = AdamW::new(AdamWConfig::default(), Schedule::new(1e-3, steps));
    for _ in 0..steps {
        let mut g = m.new_grads();
        for (c, gold) in &questions {
            m.qa(c, gold, QaObjective::Softmax, &mut Dropout::off(), Some(&mut g), 0.25)
                .unwrap();
        }
        opt.step(&mut m.store, &mut g).unwrap();
    }
    for (q, (c, _)) in questions.iter().enumerate() {
        let s = m.qa_scores(c).unwrap();
        let best = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert_eq!(best, q);
    }
}
