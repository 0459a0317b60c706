use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use kgc_core::curriculum::{write_corpus, CorpusGenerator, CorpusRecord, Lesson, LessonSpec, Variant};
use kgc_harness::config::Config;
use kgc_harness::finetune::{evaluate, finetune};
use kgc_harness::plot::{loss_curves, metric_bars};
use kgc_harness::pretrain::pretrain;
use kgc_harness::qa::train_subset;
use kgc_harness::runlog::{read_key_values, write_key_values, RunLog};
use kgc_harness::workspace::{load_checkpoint, save_checkpoint, Workspace};
use kgc_neural::checkpoint::CheckpointMeta;

const CONFIG_FILE: &str = "config.toml";

#[derive(Parser)]
#[command(
    name = "kgc",
    version,
    about = "Curriculum knowledge injection: corpus generation, pretraining and QA evaluation"
)]
struct Cli {
    /// Run directory; created if missing.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// TOML configuration. Defaults to <workdir>/config.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic knowledge graph and its vocabulary.
    BuildKg {
        #[arg(long)]
        entities: Option<usize>,
        #[arg(long)]
        relations: Option<usize>,
        #[arg(long)]
        triples: Option<usize>,
        #[arg(long)]
        chain_density: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write one epoch of lesson corpora as JSON lines.
    GenCorpus {
        #[arg(long, default_value = "all")]
        lesson: LessonArg,
        #[arg(long, default_value = "cr", value_parser = parse_variant)]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        epoch: u32,
    },
    /// Run curriculum pretraining and checkpoint after each lesson.
    Pretrain {
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        seed: Option<u64>,
        /// Epochs per lesson.
        #[arg(long)]
        epochs: Option<u32>,
    },
    /// Fine-tune a candidate scorer on the QA training split.
    Finetune {
        /// Checkpoint directory, or `scratch` for a freshly initialized model.
        #[arg(long)]
        from: String,
        #[arg(long)]
        train_frac: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<u32>,
        /// Output name under finetune/; derived from the other flags by default.
        #[arg(long)]
        name: Option<String>,
    },
    /// Score a fine-tuned model on the QA test split.
    Eval {
        /// Fine-tune run name or checkpoint directory.
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "all")]
        split: SplitArg,
        /// Key-value output file; defaults to eval/<name>-<split>.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw loss curves of a run log as SVG, plus metric bars for eval files.
    Plot {
        #[arg(long)]
        runlog: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Eval key-value files to tabulate next to the SVG.
        #[arg(long = "metrics", num_args = 1..)]
        metrics: Vec<PathBuf>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum LessonArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Copy, Clone, ValueEnum)]
enum SplitArg {
    All,
    Easy,
    Hard,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
        .map_err(|e: kgc_core::curriculum::CurriculumError| e.to_string())
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let path = match &cli.config {
        Some(p) => p.clone(),
        None => cli.workdir.join(CONFIG_FILE),
    };
    if path.exists() {
        Ok(Config::load(&path)?)
    } else if cli.config.is_some() {
        bail!("config file {} not found", path.display())
    } else {
        Ok(Config::default())
    }
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut cfg = load_config(&cli)?;
    fs::create_dir_all(&cli.workdir).with_context(|| format!("creating {}", cli.workdir.display()))?;
    let ws = Workspace::new(&cli.workdir);

    match &cli.command {
        Command::BuildKg {
            entities,
            relations,
            triples,
            chain_density,
            seed,
        } => {
            if let Some(v) = entities {
                cfg.kg.entities = *v;
            }
            if let Some(v) = relations {
                cfg.kg.relations = *v;
            }
            if let Some(v) = triples {
                cfg.kg.triples = *v;
            }
            if let Some(v) = chain_density {
                cfg.kg.chain_density = *v;
            }
            if let Some(v) = seed {
                cfg.kg.seed = *v;
            }
            cfg.validate()?;
            let (kg, vocab) = ws.build_kg(&cfg)?;
            let text = toml::to_string(&cfg).context("serializing config")?;
            let path = ws.path(CONFIG_FILE);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            println!(
                "built graph: {} entities, {} relations, {} triples; vocabulary {}",
                kg.entity_count(),
                kg.relation_count(),
                kg.len(),
                vocab.len()
            );
        }
        Command::GenCorpus { lesson, variant, epoch } => {
            let (kg, vocab) = ws.load_kg()?;
            let lessons: Vec<Lesson> = match lesson {
                LessonArg::One => vec![Lesson::Facts],
                LessonArg::Two => vec![Lesson::Steps],
                LessonArg::Three => vec![Lesson::Compositions],
                LessonArg::All => variant.lessons().to_vec(),
            };
            for l in &lessons {
                if !variant.lessons().contains(l) {
                    bail!("{variant} has no lesson {}", l.number());
                }
            }
            let generator = CorpusGenerator::new(&kg, &vocab, cfg.seed);
            let dir = ws.dir("corpus")?;
            for l in lessons {
                let mut spec = LessonSpec::new(l);
                spec.masking.max_len = spec.masking.max_len.min(cfg.model.max_positions);
                let examples = generator.generate_epoch(&spec, *epoch, cfg.pretrain.workers)?;
                let records: Vec<CorpusRecord> = examples.iter().map(CorpusRecord::from).collect();
                let path = dir.join(format!("lesson{}.jsonl", l.number()));
                let n = write_corpus(&path, &records)?;
                println!("{}: {n} examples", path.display());
            }
        }
        Command::Pretrain { variant, seed, epochs } => {
            if let Some(v) = variant {
                cfg.pretrain.variant = *v;
            }
            if let Some(v) = epochs {
                cfg.pretrain.epochs = *v;
            }
            let seed = seed.unwrap_or(cfg.seed);
            let (kg, vocab) = ws.load_kg()?;
            let mut model = ws.base(&kg, &vocab, &cfg)?;
            let dir = ws.pretrain_dir(&cfg.pretrain.variant.to_string(), seed);
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let run = serde_json::to_value(&cfg.pretrain).context("serializing pretrain settings")?;
            let mut parent = Some(ws.path("base/model").display().to_string());
            let outcome = pretrain(&kg, &vocab, &mut model, &cfg.pretrain, seed, 0, |b, m| {
                let meta = CheckpointMeta {
                    step: b.step,
                    lesson: Some(b.lesson.number()),
                    variant: Some(cfg.pretrain.variant.to_string()),
                    seed,
                    parent: parent.clone(),
                    run: run.clone(),
                };
                let path = dir.join(&b.label);
                save_checkpoint(&path, m, meta, &vocab)?;
                println!("{} done at step {}: {}", b.label, b.step, path.display());
                parent = Some(path.display().to_string());
                Ok(())
            })?;
            let log_path = dir.join("runlog.csv");
            outcome.log.write_csv(&log_path)?;
            println!("run log: {}", log_path.display());
        }
        Command::Finetune {
            from,
            train_frac,
            seed,
            epochs,
            name,
        } => {
            if let Some(v) = train_frac {
                cfg.finetune.train_frac = *v;
            }
            if let Some(v) = epochs {
                cfg.finetune.epochs = *v;
            }
            cfg.validate()?;
            let seed = seed.unwrap_or(cfg.seed);
            let (kg, vocab) = ws.load_kg()?;
            let split = ws.qa(&kg, &cfg)?;
            let (mut model, start, parent, tag) = if from == "scratch" {
                let model = ws.base(&kg, &vocab, &cfg)?;
                let parent = ws.path("base/model").display().to_string();
                (model, 0, Some(parent), "scratch".to_string())
            } else {
                let path = PathBuf::from(from);
                let (model, manifest) = load_checkpoint(&path)?;
                let tag = path
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "model".into());
                (model, manifest.meta.step, Some(path.display().to_string()), tag)
            };
            let train = train_subset(&split.train, cfg.finetune.train_frac, seed);
            let log = finetune(&mut model, &vocab, &train, &cfg.finetune, seed, start)?;
            let name = name
                .clone()
                .unwrap_or_else(|| format!("{tag}-frac{}-seed{seed}", cfg.finetune.train_frac));
            let dir = ws.dir(Path::new("finetune").join(&name))?;
            log.write_csv(&dir.join("runlog.csv"))?;
            let meta = CheckpointMeta {
                step: log.last_step(),
                lesson: None,
                variant: None,
                seed,
                parent,
                run: serde_json::to_value(&cfg.finetune).context("serializing finetune settings")?,
            };
            save_checkpoint(&dir.join("model"), &model, meta, &vocab)?;
            println!("fine-tuned on {} questions: {}", train.len(), dir.display());
        }
        Command::Eval { model, split, out } => {
            let (kg, _) = ws.load_kg()?;
            let qa = ws.qa(&kg, &cfg)?;
            let named = ws.path(Path::new("finetune").join(model).join("model"));
            let (ckpt, name) = if named.exists() {
                (named, model.clone())
            } else {
                let p = PathBuf::from(model);
                let name = p
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "model".into());
                (p, name)
            };
            let (m, _) = load_checkpoint(&ckpt)?;
            let vocab = kgc_core::tokenizer::Vocabulary::load(&ckpt.join(kgc_harness::workspace::VOCAB_FILE))?;
            let report = evaluate(&m, &vocab, &qa.test, cfg.finetune.objective, cfg.pretrain.workers)?;
            let prefix = match split {
                SplitArg::All => "all.",
                SplitArg::Easy => "easy.",
                SplitArg::Hard => "hard.",
            };
            let pairs: Vec<(String, String)> = report
                .key_values()
                .into_iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .collect();
            let split_name = prefix.trim_end_matches('.');
            let path = match out {
                Some(p) => p.clone(),
                None => ws.dir("eval")?.join(format!("{name}-{split_name}.txt")),
            };
            ensure_parent(&path)?;
            write_key_values(&path, &pairs)?;
            for (k, v) in &pairs {
                println!("{k}={v}");
            }
        }
        Command::Plot { runlog, out, metrics } => {
            let log = RunLog::read_csv(runlog)?;
            let out = out.clone().unwrap_or_else(|| runlog.with_extension("svg"));
            let title = runlog.display().to_string();
            ensure_parent(&out)?;
            fs::write(&out, loss_curves(&log, &title)).with_context(|| format!("writing {}", out.display()))?;
            println!("{}", out.display());
            if !metrics.is_empty() {
                let mut runs = Vec::new();
                for p in metrics {
                    let name = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    runs.push((name, read_key_values(p)?));
                }
                let bars = out.with_extension("bars.csv");
                fs::write(&bars, metric_bars(&runs)).with_context(|| format!("writing {}", bars.display()))?;
                println!("{}", bars.display());
            }
        }
    }
    Ok(())
}
