use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathmatch::config::{RunConfig, SEED_ENV};
use pathmatch::data::{read_jsonl, write_dataset, BehaviorMapping, DataMeta, TEST_FILE, TRAIN_FILE};
use pathmatch::metrics::{append_summary, emit_report, EvalReport, SummaryRow};
use pathmatch::model::{gradcheck_miniature, Dbpman, Variant, GRADCHECK_TOLERANCE};
use pathmatch::pipeline::{self, Split};
use pathmatch::Error;

/// Behavior-path matching CTR model: data generation, training,
/// evaluation, ablations and gradient checks.
#[derive(Debug, Parser)]
#[command(name = "pathmatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run configuration; unspecified fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one field, e.g. `--set model.l=16` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run seed; takes precedence over the file and PATHMATCH_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic train/test split with planted path patterns.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a `user,item,category,type,timestamp` event log into a split.
    Ingest {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON object mapping log behavior names to click|impression|order.
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
    /// Train one model variant and evaluate it on the test split.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory with train.jsonl (and optionally test.jsonl); without
        /// it a synthetic split is generated from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "full", value_parser = parse_variant)]
        variant: Variant,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score an examples file with a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON-lines examples file.
        #[arg(long)]
        data: PathBuf,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report RelaImpr against this AUC.
        #[arg(long)]
        baseline_auc: Option<f64>,
        #[arg(long, default_value_t = RunConfig::default().t_max)]
        t_max: usize,
    },
    /// Train and evaluate the full model and its three ablations.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check reverse-mode gradients of the miniature model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::ALL
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| format!("unknown variant {s:?}; expected full, no_pem, no_pmm or no_pam"))
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("gradient check failed: max relative error {0:.3e} is not below {GRADCHECK_TOLERANCE:e}")]
    Gradcheck(f64),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Gradcheck(_) => 6,
            CliError::Core(e) => match e {
                Error::Config(_) => 3,
                Error::Io { .. } => 4,
                Error::Data(_) | Error::TooManyMalformed { .. } | Error::Json(_) | Error::Csv(_) => 5,
                _ => 1,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn resolve(args: &ConfigArgs, extra: &[String]) -> CliResult<RunConfig> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let mut overrides = args.set.clone();
    overrides.extend_from_slice(extra);
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = RunConfig::resolve(args.config.as_deref(), env_seed.as_deref(), &overrides)?;
    let json = serde_json::to_string(&cfg).map_err(Error::from)?;
    eprintln!("pathmatch: seed {}", cfg.seed);
    eprintln!("pathmatch: config {json}");
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn load_split(cfg: &RunConfig, data: Option<&Path>) -> CliResult<Split> {
    match data.or(cfg.data_dir.as_deref()) {
        Some(dir) => {
            let train = read_jsonl(&dir.join(TRAIN_FILE))?;
            let test_path = dir.join(TEST_FILE);
            let test = if test_path.exists() { read_jsonl(&test_path)? } else { Vec::new() };
            Ok(Split { train, test })
        }
        None => {
            eprintln!("pathmatch: no data directory given, generating the synthetic split");
            Ok(pipeline::synthetic_split(cfg)?)
        }
    }
}

fn summary_row(run_id: &str, variant: Variant, cfg: &RunConfig, report: &EvalReport) -> SummaryRow {
    SummaryRow {
        run_id: run_id.to_string(),
        variant: variant.name().to_string(),
        l: cfg.model.l,
        k1: cfg.model.k1,
        k2: cfg.model.k2,
        lambda: cfg.model.lambda,
        auc: report.auc,
        logloss: report.logloss,
    }
}

fn run_id(cfg: &RunConfig) -> CliResult<String> {
    let hash = pathmatch::metrics::config_hash(cfg)?;
    Ok(format!("{}-s{}", &hash[..12], cfg.seed))
}

fn synth(cfg: &ConfigArgs, out: &Path) -> CliResult<()> {
    let cfg = resolve(cfg, &[])?;
    let split = pipeline::synthetic_split(&cfg)?;
    let mut meta = DataMeta::describe("synthetic", &split.train, &split.test);
    meta.synth = Some(cfg.synth.clone());
    write_dataset(out, &split.train, &split.test, &meta)?;
    println!(
        "wrote {} train and {} test examples to {}",
        split.train.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

fn ingest(cfg: &ConfigArgs, csv: &Path, out: &Path, mapping: Option<&Path>) -> CliResult<()> {
    let cfg = resolve(cfg, &[])?;
    let mapping = match mapping {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            serde_json::from_str::<BehaviorMapping>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => BehaviorMapping::default(),
    };
    let (split, summary) = pipeline::ingest_split(&cfg, csv, &mapping)?;
    let meta = DataMeta::describe("event-log", &split.train, &split.test);
    write_dataset(out, &split.train, &split.test, &meta)?;
    println!(
        "{} lines, {} skipped, {} events truncated; {} users ({} without a click); {} train and {} test examples",
        summary.lines,
        summary.skipped_lines,
        summary.truncated_events,
        summary.users,
        summary.users_without_click,
        split.train.len(),
        split.test.len()
    );
    Ok(())
}

fn train(
    args: &ConfigArgs,
    data: Option<&Path>,
    out: Option<&Path>,
    variant: Variant,
    epochs: Option<usize>,
    lr: Option<f64>,
) -> CliResult<()> {
    let mut extra = Vec::new();
    if let Some(e) = epochs {
        extra.push(format!("train.epochs={e}"));
    }
    if let Some(lr) = lr {
        extra.push(format!("train.lr={lr}"));
    }
    let cfg = resolve(args, &extra)?;
    let out = out.map_or_else(|| cfg.out_dir.clone(), Path::to_path_buf);
    let split = load_split(&cfg, data)?;
    let model_cfg = cfg.model_for(variant);
    let train = pipeline::encode(&split.train, &model_cfg, cfg.t_max)?;
    let run = pipeline::train_variant(&cfg, variant, &train, |epoch, loss| {
        eprintln!("pathmatch: {} epoch {} loss {loss:.5}", variant.name(), epoch + 1);
    })?;
    run.model.save(&out.join("ckpt"))?;
    write_json(&out.join("config.json"), &cfg)?;
    write_json(&out.join("losses.json"), &run.epoch_losses)?;
    println!("trained {} in {:.1}s, checkpoint in {}", variant.name(), run.seconds, out.join("ckpt").display());
    if split.test.is_empty() {
        return Ok(());
    }
    let test = pipeline::encode(&split.test, &model_cfg, cfg.t_max)?;
    let report = pipeline::evaluate(&run.model, &test, cfg.eval_batch)?;
    let row = summary_row(&run_id(&cfg)?, variant, &cfg, &report);
    emit_report(&report, &out.join("report.json"), Some((&row, &out.join("summary.csv"))))?;
    println!("test auc {:.4} logloss {:.4} on {} examples", report.auc, report.logloss, report.n);
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path, out: Option<&Path>, baseline: Option<f64>, t_max: usize) -> CliResult<()> {
    let model = Dbpman::load(checkpoint)?;
    let records = read_jsonl(data)?;
    let examples = pipeline::encode(&records, &model.config, t_max)?;
    let mut report = pipeline::evaluate(&model, &examples, RunConfig::default().eval_batch)?;
    if let Some(base) = baseline {
        report = report.with_baseline(base, RunConfig::default().relaimpr_mode)?;
    }
    if let Some(path) = out {
        emit_report(&report, path, None)?;
    }
    println!("{}", report.to_json()?);
    Ok(())
}

fn ablate(args: &ConfigArgs, data: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let base = resolve(args, &[])?;
    let out = out.map_or_else(|| base.out_dir.clone(), Path::to_path_buf);
    let split = load_split(&base, data)?;
    if split.test.is_empty() {
        return Err(Error::Data("ablation needs a test split".into()).into());
    }
    let train = pipeline::encode(&split.train, &base.model, base.t_max)?;
    let test = pipeline::encode(&split.test, &base.model, base.t_max)?;
    let seeds = if base.ablation_seeds.is_empty() {
        vec![base.seed]
    } else {
        base.ablation_seeds.clone()
    };
    let csv = out.join("summary.csv");
    for seed in seeds {
        let cfg = RunConfig { seed, ..base.clone() };
        let id = run_id(&cfg)?;
        let results = pipeline::ablate(&cfg, &train, &test, |v, epoch, loss| {
            eprintln!("pathmatch: seed {seed} {} epoch {} loss {loss:.5}", v.name(), epoch + 1);
        })?;
        let full_auc = results[0].report.auc;
        let dir = out.join(format!("seed{seed}"));
        let mut summary = results[0].report.clone();
        for r in &results {
            let report = r.report.clone().with_baseline(full_auc, cfg.relaimpr_mode)?;
            emit_report(&report, &dir.join(format!("{}.json", r.variant.name())), None)?;
            append_summary(&summary_row(&id, r.variant, &cfg, &report), &csv)?;
            summary.breakdown.insert(r.variant.name().to_string(), r.report.auc);
            println!("seed {seed} {:<7} auc {:.4} logloss {:.4}", r.variant.name(), r.report.auc, r.report.logloss);
        }
        emit_report(&summary, &dir.join("ablation.json"), None)?;
    }
    Ok(())
}

fn gradcheck(seed: u64) -> CliResult<()> {
    eprintln!("pathmatch: gradcheck seed {seed}");
    let start = std::time::Instant::now();
    let report = gradcheck_miniature(seed)?;
    println!(
        "max relative error {:.3e} over {} coordinates in {:.2}s",
        report.max_rel_error,
        report.coordinates,
        start.elapsed().as_secs_f64()
    );
    if let Some((name, index)) = &report.worst {
        println!("worst coordinate {name}[{index}]");
    }
    if report.max_rel_error < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Gradcheck(report.max_rel_error))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth { cfg, out } => synth(cfg, out),
        Command::Ingest { cfg, csv, out, mapping } => ingest(cfg, csv, out, mapping.as_deref()),
        Command::Train {
            cfg,
            data,
            out,
            variant,
            epochs,
            lr,
        } => train(cfg, data.as_deref(), out.as_deref(), *variant, *epochs, *lr),
        Command::Eval {
            checkpoint,
            data,
            out,
            baseline_auc,
            t_max,
        } => eval(checkpoint, data, out.as_deref(), *baseline_auc, *t_max),
        Command::Ablate { cfg, data, out } => ablate(cfg, data.as_deref(), out.as_deref()),
        Command::Gradcheck { seed } => gradcheck(*seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pathmatch: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
