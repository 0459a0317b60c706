use kgc_core::curriculum::{CorpusGenerator, Lesson, LessonSpec};
use kgc_core::kg::KnowledgeGraph;
use kgc_core::seed::derive_seed;
use kgc_core::tokenizer::Vocabulary;
use kgc_neural::layers::Dropout;
use kgc_neural::model::Model;
use kgc_neural::optim::{AdamW, Schedule};
use kgc_neural::params::Role;
use kgc_neural::NeuralError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PretrainConfig;
use crate::runlog::{RunLog, StepRecord};
use crate::Result;

/// End of a lesson, where a checkpoint is taken.
#[derive(Clone, Debug, PartialEq)]
pub struct Boundary {
    pub label: String,
    pub lesson: Lesson,
    pub step: u64,
}

#[derive(Clone, Debug, Default)]
pub struct PretrainOutcome {
    pub log: RunLog,
    pub boundaries: Vec<Boundary>,
}

/// Adapter and MLM head train; the base stays frozen unless the model has no
/// adapter, in which case it is trained directly.
pub fn set_pretrain_roles(model: &mut Model<f32>) {
    let has_adapter = model.adapter().is_some();
    model.store.set_trainable(Role::BaseLm, !has_adapter);
    model.store.set_trainable(Role::Adapter, true);
    model.store.set_trainable(Role::MlmHead, true);
    model.store.set_trainable(Role::QaHead, false);
}

/// Runs every lesson of `cfg.variant` in order. Each lesson gets a fresh
/// optimizer and warm-up/decay schedule; step numbers continue from
/// `start_step`. `on_boundary` sees the model after each lesson.
pub fn pretrain<F>(
    kg: &KnowledgeGraph,
    vocab: &Vocabulary,
    model: &mut Model<f32>,
    cfg: &PretrainConfig,
    seed: u64,
    start_step: u64,
    mut on_boundary: F,
) -> Result<PretrainOutcome>
where
    F: FnMut(&Boundary, &Model<f32>) -> Result<()>,
{
    let mut schedule = cfg.schedule();
    for spec in &mut schedule.lessons {
        spec.masking.max_len = spec.masking.max_len.min(model.config.max_positions);
    }
    schedule.validate()?;
    set_pretrain_roles(model);
    let generator = CorpusGenerator::new(kg, vocab, seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0, 0));
    let mut out = PretrainOutcome::default();
    let mut step = start_step;

    for spec in &schedule.lessons {
        step = run_lesson(&generator, spec, model, cfg, &mut dropout_rng, step, &mut out.log)?;
        let boundary = Boundary {
            label: cfg.variant.checkpoint_label(spec.lesson),
            lesson: spec.lesson,
            step,
        };
        on_boundary(&boundary, model)?;
        out.boundaries.push(boundary);
    }
    Ok(out)
}

/// Runs a single lesson under the pretraining roles, outside any variant's
/// schedule.
pub fn pretrain_lesson(
    kg: &KnowledgeGraph,
    vocab: &Vocabulary,
    model: &mut Model<f32>,
    cfg: &PretrainConfig,
    lesson: Lesson,
    seed: u64,
    start_step: u64,
) -> Result<RunLog> {
    let mut spec = LessonSpec::new(lesson);
    spec.masking.max_len = spec.masking.max_len.min(model.config.max_positions);
    spec.validate()?;
    set_pretrain_roles(model);
    let generator = CorpusGenerator::new(kg, vocab, seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0, 0));
    let mut log = RunLog::default();
    run_lesson(&generator, &spec, model, cfg, &mut dropout_rng, start_step, &mut log)?;
    Ok(log)
}

/// Trains `model` on `cfg.epochs` epochs of one lesson with a fresh optimizer,
/// logging every step. Returns the last step number.
pub(crate) fn run_lesson(
    generator: &CorpusGenerator<'_>,
    spec: &LessonSpec,
    model: &mut Model<f32>,
    cfg: &PretrainConfig,
    dropout_rng: &mut ChaCha8Rng,
    mut step: u64,
    log: &mut RunLog,
) -> Result<u64> {
    let n = spec.epoch_size(generator.kg());
    let total = n.div_ceil(cfg.batch_size) as u64 * u64::from(cfg.epochs);
    let mut opt = AdamW::new(cfg.optimizer, Schedule::new(cfg.peak_lr, total.max(1)));
    let p = model.config.dropout;
    for epoch in 0..cfg.epochs {
        let examples = generator.generate_epoch(spec, epoch, cfg.workers)?;
        for batch in examples.chunks(cfg.batch_size) {
            let usable: Vec<_> = batch.iter().filter(|e| e.masked.label_count() > 0).collect();
            if usable.is_empty() {
                continue;
            }
            let scale = 1.0 / usable.len() as f32;
            let mut grads = model.new_grads();
            let mut loss = 0.0f64;
            for ex in usable {
                let m = &ex.masked;
                let mut drop = Dropout::train(p, dropout_rng);
                match model.mlm(&m.input_ids, &m.labels, &mut drop, Some(&mut grads), scale) {
                    Ok(r) => loss += f64::from(r.loss * scale),
                    Err(NeuralError::DegenerateBatch) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            let info = opt.step(&mut model.store, &mut grads)?;
            step += 1;
            log.push(StepRecord {
                step,
                lesson: spec.lesson.number(),
                loss,
                lr: info.lr,
            })?;
        }
    }
    Ok(step)
}
