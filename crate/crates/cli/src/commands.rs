//! One function per subcommand. Each writes its report to `out` and
//! leaves diagnostics to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use contrarank::augment::{
    build_ag_corpus, build_qg_corpus, export_corpus, read_cache_file, synthesize_all,
    write_cache_file, Generator, OracleGenerator, RemoteGenerator, RemoteGeneratorConfig,
    StubGenerator,
};
use contrarank::gradcheck::{self, Kernels};
use contrarank::ingest::{compute_stats, load_dataset, serialize_dataset, DatasetSchema, LabelKind};
use contrarank::metrics::EvalOptions;
use contrarank::objectives::LossMode;
use contrarank::scorer::Model;
use contrarank::synthetic::{self, SyntheticConfig};
use contrarank::text::group_pairs;
use contrarank::trainer::{self, TrainConfig};
use contrarank::{AugmentedGroup, QuestionGroup};

use crate::config::{apply_file, ResolvedTrain, TrainFile};
use crate::error::{CliError, CliResult};
use crate::manifest::{FileDigest, RunManifest};
use crate::{
    AugmentArgs, Command, CorpusArgs, CorpusKind, EvalArgs, GeneratorKind, GradcheckArgs,
    ModeArg, ReportFormat, SchemaArgs, StatsArgs, StatsFormat, SynthArgs, TrainArgs,
};

pub fn dispatch(command: &Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Stats(a) => cmd_stats(a, out),
        Command::Augment(a) => cmd_augment(a, out),
        Command::Corpus(a) => cmd_corpus(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

impl SchemaArgs {
    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            label_kind: if self.graded {
                LabelKind::Graded
            } else {
                LabelKind::Binary
            },
            graded_threshold: self.threshold,
            ..DatasetSchema::default()
        }
    }
}

/// Prefixes `e` with the input path unless it already names it.
fn input_error(path: &Path, e: contrarank::Error) -> CliError {
    match e {
        contrarank::Error::File { .. } => CliError::Usage(e.to_string()),
        other => CliError::Usage(format!("{}: {other}", path.display())),
    }
}

fn load_groups(path: &Path, schema: &SchemaArgs) -> CliResult<Vec<QuestionGroup>> {
    let pairs = load_dataset(path, &schema.schema()).map_err(|e| input_error(path, e))?;
    group_pairs(&pairs).map_err(|e| input_error(path, e))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn cmd_stats(args: &StatsArgs, out: &mut dyn Write) -> CliResult<()> {
    let pairs =
        load_dataset(&args.dataset, &args.schema.schema()).map_err(|e| input_error(&args.dataset, e))?;
    let stats = compute_stats(&pairs)?;
    match args.format {
        StatsFormat::Table => write!(out, "{}", stats.to_table())?,
        StatsFormat::Json => writeln!(out, "{}", stats.to_json())?,
    }
    Ok(())
}

fn make_generator(args: &AugmentArgs) -> CliResult<Box<dyn Generator>> {
    Ok(match args.generator {
        GeneratorKind::Stub => Box::new(StubGenerator),
        GeneratorKind::Oracle => Box::new(OracleGenerator::default()),
        GeneratorKind::Remote => {
            let url = args.url.clone().ok_or_else(|| {
                CliError::Usage(
                    "--generator remote needs --url or CONTRARANK_GENERATOR_URL".into(),
                )
            })?;
            Box::new(RemoteGenerator::new(RemoteGeneratorConfig {
                qg_model: args.qg_model.clone(),
                ag_model: args.ag_model.clone(),
                ..RemoteGeneratorConfig::new(url)
            }))
        }
    })
}

/// Writes the cache even when some groups fail, then reports them.
pub fn cmd_augment(args: &AugmentArgs, out: &mut dyn Write) -> CliResult<()> {
    if args.no_qg && args.no_ag {
        return Err(CliError::Usage("--no-qg and --no-ag leave nothing to generate".into()));
    }
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    let groups = load_groups(&args.dataset, &args.schema)?;
    let gen = make_generator(args)?;
    let augmented = synthesize_all(&groups, gen.as_ref(), !args.no_qg, !args.no_ag, args.jobs);
    write_cache_file(&augmented, &args.out)?;

    let failed: Vec<&AugmentedGroup> = augmented.iter().filter(|a| a.is_failed()).collect();
    let skipped = groups.iter().filter(|g| g.negatives.is_empty()).count();
    writeln!(
        out,
        "groups: {}  complete: {}  failed: {}  without negatives: {}",
        augmented.len(),
        augmented.len() - failed.len() - skipped,
        failed.len(),
        skipped
    )?;
    writeln!(out, "cache: {}", args.out.display())?;
    if failed.is_empty() {
        return Ok(());
    }
    for a in &failed {
        eprintln!("failed: {}", a.base.question_id);
    }
    Err(CliError::Failed(format!(
        "{} of {} groups failed to augment; partial cache written",
        failed.len(),
        augmented.len()
    )))
}

pub fn cmd_corpus(args: &CorpusArgs, out: &mut dyn Write) -> CliResult<()> {
    let groups = load_groups(&args.dataset, &args.schema)?;
    let records = match args.kind {
        CorpusKind::Question => build_qg_corpus(&groups),
        CorpusKind::Answer => build_ag_corpus(&groups),
    };
    write_file(&args.out, export_corpus(&records).as_bytes())?;
    writeln!(out, "{} records: {}", records.len(), args.out.display())?;
    Ok(())
}

/// Defaults, then `--config`, then flags.
pub fn resolve_train_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => apply_file(&TrainFile::load(path)?, TrainConfig::default())?,
        None => TrainConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::Pointwise => LossMode::Pointwise,
            ModeArg::Pairwise => LossMode::Pairwise,
            ModeArg::Contrastive => LossMode::Contrastive,
        };
    }
    cfg.epochs = args.epochs.unwrap_or(cfg.epochs);
    cfg.learning_rate = args.lr.unwrap_or(cfg.learning_rate);
    cfg.margin = args.margin.unwrap_or(cfg.margin);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.embed_dim = args.embed_dim.unwrap_or(cfg.embed_dim);
    cfg.hidden_dim = args.hidden_dim.unwrap_or(cfg.hidden_dim);
    cfg.ablation.disable_qg |= args.no_qg;
    cfg.ablation.disable_ag |= args.no_ag;
    cfg.ablation.treat_synth_as_positive |= args.synth_as_positive;
    cfg.validate()?;
    Ok(cfg)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve_train_config(args)?;
    let groups = load_groups(&args.dataset, &args.schema)?;
    let augmented = match &args.cache {
        Some(path) if cfg.uses_augmentation() => {
            Some(read_cache_file(path, &groups).map_err(|e| input_error(path, e))?)
        }
        Some(_) => {
            log::warn!("{} training ignores the augmentation cache", cfg.mode);
            None
        }
        None => None,
    };
    let dev = args
        .dev
        .as_ref()
        .map(|p| load_groups(p, &args.schema))
        .transpose()?;
    let (model, history) = trainer::train(&groups, augmented.as_deref(), &cfg, dev.as_deref())?;

    let history_path = args.history.clone().unwrap_or_else(|| sibling(&args.out, ".history.jsonl"));
    let manifest_path = args.manifest.clone().unwrap_or_else(|| sibling(&args.out, ".manifest.json"));
    model.save(&args.out)?;
    write_file(&history_path, history.to_json_lines().as_bytes())?;

    let mut manifest = RunManifest::new("train", cfg.seed, ResolvedTrain::from(&cfg));
    manifest.inputs.insert("dataset".into(), FileDigest::of(&args.dataset)?);
    if let (Some(path), Some(_)) = (&args.cache, &augmented) {
        manifest.inputs.insert("cache".into(), FileDigest::of(path)?);
    }
    if let Some(path) = &args.config {
        manifest.inputs.insert("config".into(), FileDigest::of(path)?);
    }
    if let Some(path) = &args.dev {
        manifest.inputs.insert("dev".into(), FileDigest::of(path)?);
    }
    manifest.outputs.insert("checkpoint".into(), FileDigest::of(&args.out)?);
    manifest.outputs.insert("history".into(), FileDigest::of(&history_path)?);
    write_file(&manifest_path, manifest.to_json().as_bytes())?;

    if let Some(last) = history.epochs.last() {
        writeln!(
            out,
            "{} epochs, final mean loss {:.6} over {} groups",
            history.epochs.len(),
            last.mean_train_loss,
            last.groups_used
        )?;
    }
    writeln!(out, "checkpoint: {}", args.out.display())?;
    writeln!(out, "history: {}", history_path.display())?;
    writeln!(out, "manifest: {}", manifest_path.display())?;
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let model = Model::load(&args.checkpoint).map_err(|e| input_error(&args.checkpoint, e))?;
    let groups = load_groups(&args.dataset, &args.schema)?;
    let opts = EvalOptions {
        ks: args.k.clone(),
        zero_for_unjudged: args.zero_unjudged,
    };
    let report = trainer::evaluate(&model, &groups, &opts)?;
    match args.format {
        ReportFormat::Table => write!(out, "{}", report.to_table())?,
        ReportFormat::Json => writeln!(out, "{}", report.aggregate_json())?,
        ReportFormat::JsonLines => write!(out, "{}", report.to_json_lines())?,
    }
    if report.aggregate.mrr.is_none() {
        return Err(CliError::Failed(
            "no query has a relevant answer; nothing was evaluated".into(),
        ));
    }
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    gradcheck_with(args, &Kernels::default(), out)
}

/// [`cmd_gradcheck`] with replaceable loss kernels.
pub fn gradcheck_with(args: &GradcheckArgs, kernels: &Kernels, out: &mut dyn Write) -> CliResult<()> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    let report = gradcheck::run_with(args.trials, args.seed, kernels)?;
    write!(out, "{}", report.to_table())?;
    if report.passed() {
        writeln!(out, "PASS")?;
        return Ok(());
    }
    let worst = report.worst().expect("a failing report has a worst violation");
    Err(CliError::Failed(format!(
        "gradient check failed in {}; worst: {} trial {} parameter {}: analytic {:e}, numeric {:e}, relative error {:e}",
        report.failing_suites().join(", "),
        worst.suite,
        worst.trial,
        worst.parameter,
        worst.analytic,
        worst.numeric,
        worst.rel_error
    )))
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let bench = synthetic::generate(&SyntheticConfig {
        seed: args.seed,
        ..SyntheticConfig::default()
    });
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.out_dir.display())))?;
    let schema = DatasetSchema::default();
    for (name, pairs) in [("train.tsv", &bench.train), ("test.tsv", &bench.test)] {
        let path = args.out_dir.join(name);
        write_file(&path, serialize_dataset(pairs, &schema).as_bytes())?;
        writeln!(out, "{}: {} pairs", path.display(), pairs.len())?;
    }
    Ok(())
}
