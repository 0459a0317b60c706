use kgc_core::seed::derive_seed;
use kgc_core::tokenizer::Vocabulary;
use kgc_neural::layers::Dropout;
use kgc_neural::model::{Model, QaObjective};
use kgc_neural::optim::{AdamW, Schedule};
use kgc_neural::params::Role;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::FinetuneConfig;
use crate::metrics::{report, Decision, EvalReport};
use crate::qa::{encode_example, QaExample};
use crate::runlog::{RunLog, StepRecord};
use crate::{HarnessError, Result};

/// Base, adapter and QA head train; the MLM head is kept but unused.
pub fn set_finetune_roles(model: &mut Model<f32>) {
    model.store.set_trainable(Role::BaseLm, true);
    model.store.set_trainable(Role::Adapter, true);
    model.store.set_trainable(Role::MlmHead, false);
    model.store.set_trainable(Role::QaHead, true);
}

/// Trains the candidate scorer on `train`. Step numbers continue from
/// `start_step`; the log's lesson column is 0.
pub fn finetune(
    model: &mut Model<f32>,
    vocab: &Vocabulary,
    train: &[QaExample],
    cfg: &FinetuneConfig,
    seed: u64,
    start_step: u64,
) -> Result<RunLog> {
    if train.is_empty() {
        return Err(HarnessError::Config("empty training set".into()));
    }
    set_finetune_roles(model);
    let max_len = model.config.max_positions;
    let encoded: Vec<(Vec<Vec<u32>>, Vec<bool>)> = train
        .iter()
        .map(|ex| (encode_example(vocab, ex, max_len), ex.gold_flags()))
        .collect();
    let per_epoch = encoded.len().div_ceil(cfg.batch_size) as u64;
    let total = per_epoch * u64::from(cfg.epochs);
    let mut opt = AdamW::new(cfg.optimizer, Schedule::new(cfg.peak_lr, total.max(1)));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 1, 0));
    let p = model.config.dropout;
    let mut log = RunLog::default();
    let mut step = start_step;
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f32;
            let mut grads = model.new_grads();
            let mut loss = 0.0f64;
            for &i in batch {
                let (cands, gold) = &encoded[i];
                let mut drop = Dropout::train(p, &mut rng);
                let r = model.qa(cands, gold, cfg.objective, &mut drop, Some(&mut grads), scale)?;
                loss += f64::from(r.loss * scale);
            }
            let info = opt.step(&mut model.store, &mut grads)?;
            step += 1;
            log.push(StepRecord {
                step,
                lesson: 0,
                loss,
                lr: info.lr,
            })?;
        }
    }
    Ok(log)
}

/// Scores every question (on `workers` threads, merged in order) and
/// reports ACC/F1/EM overall and by difficulty.
pub fn evaluate(
    model: &Model<f32>,
    vocab: &Vocabulary,
    examples: &[QaExample],
    objective: QaObjective,
    workers: usize,
) -> Result<EvalReport> {
    let max_len = model.config.max_positions;
    let score_one = |ex: &QaExample| -> Result<Vec<f64>> {
        let scores = model.qa_scores(&encode_example(vocab, ex, max_len))?;
        Ok(scores.into_iter().map(f64::from).collect())
    };
    let chunk = examples.len().div_ceil(workers.max(1)).max(1);
    let parts: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(score_one).collect::<Result<Vec<_>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scoring worker panicked"))
            .collect()
    });
    let mut results = Vec::with_capacity(examples.len());
    let mut it = examples.iter();
    for part in parts {
        for scores in part? {
            let ex = it.next().expect("one score list per example");
            results.push((ex.difficulty, scores, ex.gold_flags()));
        }
    }
    let decision = match objective {
        QaObjective::Softmax => Decision::Top,
        QaObjective::Sigmoid => Decision::Threshold,
    };
    Ok(report(&results, decision))
}
