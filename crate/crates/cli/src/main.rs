//! `sde`: train, evaluate and serve schema-guided next-action models.

mod chat;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sde_core::corpus::{
    generate_synthetic, import_star_dir, load_corpus, make_examples, Corpus, SyntheticConfig,
};
use sde_core::eval::{evaluate, run_experiment_with, ExperimentKind, ExperimentSpec};
use sde_core::model::{AblationFlags, ModelBundle, ModelKind};
use sde_core::schema::{load_schema, save_schema, SchemaRegistry, Severity};
use sde_core::train::{train, TrainConfig};
use sde_service::{Engine, ServiceConfig, MODEL_FILE};

#[derive(Parser)]
#[command(name = "sde", version, about = "Schema-guided next-action prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write `<out>/model.json` plus a run directory.
    Train(TrainArgs),
    /// Score a trained model on a corpus.
    Eval(EvalArgs),
    /// Leave-one-task-out or leave-one-domain-out experiment.
    Transfer(TransferArgs),
    /// Check schema files; exit 1 on the first invalid one.
    ValidateSchema {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Write a synthetic corpus and its schemas.
    GenerateSynthetic(GenerateArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Talk to a model in the terminal.
    Chat(ChatArgs),
    /// Convert raw STAR dialog files to the corpus format.
    ImportStar {
        /// Directory of STAR dialog JSON files.
        #[arg(long)]
        input: PathBuf,
        /// Corpus file to write.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Options shared by the commands that train.
#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Training configuration as JSON; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Improvements to switch off in a SAM model, e.g. `3,4`.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=4))]
    flags: Option<Vec<u8>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, visible_alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

/// Corpus and schemas; the default synthetic corpus when neither is given.
#[derive(Args, Clone)]
struct Data {
    #[arg(long, requires = "schemas")]
    corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    schemas: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: Data,
    /// `baseline`, `sam`, `bert+s` or `sam-<k..>`.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: Data,
    #[arg(long, env = "SDE_MODEL_DIR")]
    model_dir: PathBuf,
    /// Write the metrics JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum HoldoutKind {
    Task,
    Domain,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: Data,
    #[arg(long, value_enum)]
    holdout_kind: HoldoutKind,
    /// Subset of tasks or domains to hold out; all when omitted.
    #[arg(long, value_delimiter = ',')]
    holdouts: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "sam,baseline")]
    models: Vec<ModelKind>,
    /// Training seeds; `--seed` gives a single one.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Option<Vec<u64>>,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    tasks: usize,
    #[arg(long, default_value_t = 2)]
    domains: usize,
    #[arg(long, default_value_t = 4)]
    slots: usize,
    #[arg(long, default_value_t = 40)]
    dialogs: usize,
    #[arg(long, default_value_t = 0.2)]
    out_of_turn_rate: f64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "SDE_PORT", default_value_t = sde_service::DEFAULT_PORT)]
    port: u16,
    #[arg(long, env = "SDE_MODEL_DIR")]
    model_dir: PathBuf,
    #[arg(long, env = "SDE_SCHEMA_DIR")]
    schema_dir: PathBuf,
    /// Session journal for restart recovery.
    #[arg(long, env = "SDE_JOURNAL")]
    journal: Option<PathBuf>,
}

#[derive(Args)]
struct ChatArgs {
    #[arg(long)]
    task: String,
    #[arg(long, env = "SDE_MODEL_DIR")]
    model_dir: PathBuf,
    #[arg(long, env = "SDE_SCHEMA_DIR")]
    schema_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::ValidateSchema { files } => cmd_validate(&files),
        Command::GenerateSynthetic(a) => cmd_generate(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Chat(a) => {
            let engine = Engine::load(&a.model_dir, &a.schema_dir)?;
            let stdin = std::io::stdin();
            chat::run(&engine, &a.task, stdin.lock(), std::io::stdout())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ImportStar { input, out } => {
            let import = import_star_dir(&input)
                .with_context(|| format!("importing {}", input.display()))?;
            fs::write(&out, import.corpus.to_json())
                .with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{} dialogs ({} skipped), {} turns, {} system turns -> {}",
                import.corpus.len(),
                import.dialogs_skipped,
                import.total_turns,
                import.system_turns,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_data(data: &Data) -> Result<(Corpus, SchemaRegistry)> {
    match (&data.corpus, &data.schemas) {
        (Some(c), Some(s)) => {
            let registry = SchemaRegistry::load_dir(s)
                .with_context(|| format!("loading schemas from {}", s.display()))?;
            let file = fs::File::open(c).with_context(|| format!("opening {}", c.display()))?;
            let corpus = load_corpus(file, Some(&registry))
                .with_context(|| format!("loading {}", c.display()))?;
            Ok((corpus, registry))
        }
        _ => {
            let (corpus, graphs) = generate_synthetic(&SyntheticConfig::default(), 0)?;
            Ok((corpus, SchemaRegistry::from_graphs(graphs)?))
        }
    }
}

fn train_config(common: &Common, model: Option<ModelKind>) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &common.config {
        Some(p) => serde_json::from_str(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(m) = model {
        cfg.model = m;
    }
    if let Some(flags) = &common.flags {
        if cfg.model == ModelKind::Baseline {
            bail!("--flags applies to SAM models, not the baseline");
        }
        let off: Vec<usize> = flags.iter().map(|&f| usize::from(f)).collect();
        cfg.model = ModelKind::Sam(AblationFlags::without(&off));
    }
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    cfg.epochs = common.epochs.unwrap_or(cfg.epochs);
    cfg.learning_rate = common.learning_rate.unwrap_or(cfg.learning_rate);
    cfg.batch_size = common.batch_size.unwrap_or(cfg.batch_size);
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let cfg = train_config(&a.common, a.model)?;
    let (corpus, registry) = load_data(&a.data)?;
    let examples = make_examples(&corpus);
    let run_dir = a.out.join("run");
    fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    eprintln!(
        "training {} on {} examples for {} epochs",
        cfg.model,
        examples.len(),
        cfg.epochs
    );
    let outcome = train(cfg.clone(), &examples, &registry, None, Some(&run_dir))?;
    let mut bundle = outcome.best;
    bundle.metadata = serde_json::json!({
        "model_id": format!("{}-seed{}", cfg.model, cfg.seed),
        "epochs": cfg.epochs,
        "examples": examples.len(),
        "skipped_examples": outcome.skipped_examples,
    });
    let path = a.out.join(MODEL_FILE);
    bundle.save(&path)?;
    if let Some(last) = outcome.metrics.last() {
        eprintln!("final training loss {:.4}", last.loss);
    }
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    let bundle = ModelBundle::load(a.model_dir.join(MODEL_FILE))
        .with_context(|| format!("loading {}", a.model_dir.join(MODEL_FILE).display()))?;
    let (corpus, registry) = load_data(&a.data)?;
    for s in registry.schemas() {
        bundle.check_schema(s)?;
    }
    let ev = evaluate(&bundle.model, &make_examples(&corpus), &registry)?;
    let out = serde_json::json!({
        "model": bundle.model.kind,
        "n": ev.report.n,
        "accuracy": ev.report.accuracy,
        "weighted_f1": ev.report.weighted_f1,
        "mean_loss": ev.mean_loss,
        "per_class": ev.report.per_class,
    });
    let text = serde_json::to_string_pretty(&out)?;
    if let Some(p) = &a.out {
        fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_transfer(a: TransferArgs) -> Result<ExitCode> {
    let template = train_config(&a.common, None)?;
    let mut models = a.models.clone();
    if a.common.flags.is_some() && !models.contains(&template.model) {
        models.push(template.model);
    }
    let seeds = a.seeds.clone().unwrap_or_else(|| vec![template.seed]);
    let spec = ExperimentSpec {
        kind: match a.holdout_kind {
            HoldoutKind::Task => ExperimentKind::TaskTransfer,
            HoldoutKind::Domain => ExperimentKind::DomainTransfer,
        },
        holdouts: a.holdouts.clone(),
        models,
        seeds,
        train: template,
        train_fraction: 0.8,
        split_seed: 0,
    };
    let (corpus, registry) = load_data(&a.data)?;
    let report = run_experiment_with(&spec, &corpus, &registry, |r| {
        eprintln!(
            "{:>10} seed {:>5} holdout {:<24} f1 {:.3}",
            r.model.to_string(),
            r.seed,
            r.holdout.as_deref().unwrap_or("-"),
            r.weighted_f1
        );
    });
    let report = match report {
        Ok(r) => r,
        Err(sde_core::eval::EvalError::HoldoutFailed {
            holdout,
            message,
            partial,
        }) => {
            write_report(&a.out, &partial.to_json())?;
            bail!(
                "holdout `{holdout}` failed: {message}; partial report in {}",
                a.out.display()
            );
        }
        Err(e) => return Err(e.into()),
    };
    write_report(&a.out, &report.to_json())?;
    print!("{}", report.to_table());
    Ok(ExitCode::SUCCESS)
}

fn write_report(path: &Path, json: &str) -> Result<()> {
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))
}

fn cmd_validate(files: &[PathBuf]) -> Result<ExitCode> {
    let mut failed = false;
    for f in files {
        let graph = match fs::File::open(f)
            .map_err(anyhow::Error::from)
            .and_then(|r| Ok(load_schema(r)?))
        {
            Ok(g) => g,
            Err(e) => {
                println!("{}: error: {e:#}", f.display());
                failed = true;
                continue;
            }
        };
        let report = graph.validate();
        if report.ok {
            println!("{}: ok", f.display());
        } else {
            failed = true;
            println!("{}: invalid", f.display());
        }
        for d in &report.diagnostics {
            let level = if d.severity == Severity::Error {
                "error"
            } else {
                "warning"
            };
            println!("  {level} [{}] {}: {}", d.rule, d.locus, d.message);
        }
    }
    Ok(if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_generate(a: GenerateArgs) -> Result<ExitCode> {
    let cfg = SyntheticConfig {
        num_tasks: a.tasks,
        num_domains: a.domains,
        slots_per_task: a.slots,
        dialogs_per_task: a.dialogs,
        out_of_turn_rate: a.out_of_turn_rate,
        ..SyntheticConfig::default()
    };
    let (corpus, graphs) = generate_synthetic(&cfg, a.seed)?;
    let schema_dir = a.out.join("schemas");
    fs::create_dir_all(&schema_dir)
        .with_context(|| format!("creating {}", schema_dir.display()))?;
    for g in &graphs {
        save_schema(g, schema_dir.join(format!("{}.json", g.task)))?;
    }
    fs::write(a.out.join("corpus.json"), corpus.to_json())?;
    println!(
        "{} dialogs, {} schemas -> {}",
        corpus.len(),
        graphs.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(a: ServeArgs) -> Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    let config = ServiceConfig {
        port: a.port,
        model_dir: a.model_dir,
        schema_dir: a.schema_dir,
        journal: a.journal,
    };
    tokio::runtime::Runtime::new()?.block_on(sde_service::serve(config))?;
    Ok(ExitCode::SUCCESS)
}
