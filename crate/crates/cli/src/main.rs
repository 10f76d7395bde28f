//! `bsat` — train a toy transformer text classifier and attack it with
//! block-sparse gradient projection.
//!
//! Subcommands: `gen` (synthetic corpus), `train`, `attack`, `sweep`,
//! `report`. Exit status 0 on success, 2 on usage errors (bad flags,
//! missing files), 1 on runtime failures.

use anyhow::{anyhow, Context};
use bsat_core::attack::AttackConfig;
use bsat_core::harness::{
    evaluate_attack, generate_keyword_corpus, sweep_alpha, sweep_to_csv, AttackReport,
    LabeledDataset, SyntheticConfig,
};
use bsat_core::model::{
    checkpoint, evaluate_accuracy, train, ClassifierModel, FrozenModel, ModelConfig, TrainConfig,
};
use bsat_core::vocab::Vocabulary;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "bsat",
    version,
    about = "Block-sparse adversarial attacks on text classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic keyword-sentiment corpus as JSONL.
    Gen(GenArgs),
    /// Train a transformer classifier and write a checkpoint.
    Train(TrainArgs),
    /// Attack a dataset against a trained model and write a JSON report.
    Attack(AttackArgs),
    /// Sweep the block-sparsity weight α at a fixed learning rate.
    Sweep(SweepArgs),
    /// Re-print a saved attack report.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output JSONL path for the training split.
    #[arg(long)]
    out: PathBuf,
    /// Optional output JSONL path for the test split.
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    examples: usize,
    #[arg(long, default_value_t = 200)]
    test_examples: usize,
    #[arg(long, default_value_t = 5)]
    min_len: usize,
    #[arg(long, default_value_t = 20)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    max_keywords: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training data (JSONL: {"text": ..., "label": ...} per line).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path; the vocabulary is written alongside as
    /// `<out>.vocab`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 11)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Minimum word frequency for a vocabulary entry.
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Maximum sequence length; 0 = fit to the longest training sentence.
    #[arg(long, default_value_t = 0)]
    max_len: usize,
    /// Optional held-out JSONL evaluated after training.
    #[arg(long)]
    eval: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    /// Model checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Vocabulary file; defaults to `<model>.vocab`.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Dataset to attack (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    out_report: PathBuf,
    /// Optional `key = value` config file; explicit flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated decreasing α base values (divided by sentence length).
    #[arg(long)]
    alpha_set: Option<String>,
    /// Comma-separated learning rates, least aggressive first.
    #[arg(long)]
    lr_set: Option<String>,
    /// Global iteration budget K.
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    sim_threshold: Option<f64>,
    #[arg(long)]
    stall_patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated α base values to sweep.
    #[arg(long)]
    alphas: String,
    #[arg(long, default_value_t = 0.15)]
    lr: f64,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    sim_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved report JSON.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_parser = ["json", "csv", "text"], default_value = "text")]
    format: String,
}

struct Failure {
    code: i32,
    error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn runtime(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn main() {
    let cli = Cli::parse();
    if let Err(f) = run(cli) {
        eprintln!("error: {:#}", f.error);
        std::process::exit(f.code);
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if !path.is_file() {
        return Err(usage(anyhow!("file not found: {}", path.display())));
    }
    Ok(())
}

fn parse_float_list(raw: &str, what: &str) -> Result<Vec<f64>, Failure> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| usage(anyhow!("bad value `{s}` in {what}")))
        })
        .collect()
}

fn load_dataset(path: &Path, split: &str) -> Result<LabeledDataset, Failure> {
    require_file(path)?;
    LabeledDataset::load_jsonl(path, split)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(runtime)
}

fn vocab_path_for(model: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut os = model.as_os_str().to_owned();
        os.push(".vocab");
        PathBuf::from(os)
    })
}

fn load_frozen(
    model_path: &Path,
    vocab_path: &Option<PathBuf>,
) -> Result<FrozenModel<f32>, Failure> {
    require_file(model_path)?;
    let vocab_path = vocab_path_for(model_path, vocab_path);
    require_file(&vocab_path)?;
    let vocab = Vocabulary::load(&vocab_path)
        .with_context(|| format!("loading vocabulary {}", vocab_path.display()))
        .map_err(runtime)?;
    let model = checkpoint::load(model_path, &vocab)
        .with_context(|| format!("loading checkpoint {}", model_path.display()))
        .map_err(runtime)?;
    FrozenModel::freeze(model, vocab)
        .context("freezing model for attack")
        .map_err(runtime)
}

fn build_attack_config(
    file: &Option<PathBuf>,
    alpha_set: &Option<String>,
    lr_set: &Option<String>,
    max_iters: Option<usize>,
    sim_threshold: Option<f64>,
    stall_patience: Option<usize>,
    seed: Option<u64>,
) -> Result<AttackConfig, Failure> {
    let mut cfg = match file {
        Some(path) => {
            require_file(path)?;
            AttackConfig::from_kv_file(path)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(runtime)?
        }
        None => AttackConfig::default(),
    };
    if let Some(raw) = alpha_set {
        cfg.alpha_schedule = parse_float_list(raw, "--alpha-set")?;
    }
    if let Some(raw) = lr_set {
        cfg.lr_schedule = parse_float_list(raw, "--lr-set")?;
    }
    if let Some(k) = max_iters {
        cfg.max_iterations = k;
    }
    if let Some(t) = sim_threshold {
        cfg.similarity_threshold = t;
    }
    if let Some(p) = stall_patience {
        cfg.stall_patience = p;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| usage(e.into()))?;
    Ok(cfg)
}

fn cmd_gen(args: GenArgs) -> Result<(), Failure> {
    let cfg = SyntheticConfig {
        train_examples: args.examples,
        test_examples: args.test_examples,
        min_len: args.min_len,
        max_len: args.max_len,
        max_keywords: args.max_keywords,
        seed: args.seed,
    };
    let (train_ds, test_ds) = generate_keyword_corpus(&cfg).map_err(|e| usage(e.into()))?;
    train_ds
        .save_jsonl(&args.out)
        .map_err(|e| runtime(e.into()))?;
    println!(
        "wrote {} training examples to {}",
        train_ds.len(),
        args.out.display()
    );
    if let Some(test_out) = &args.test_out {
        test_ds
            .save_jsonl(test_out)
            .map_err(|e| runtime(e.into()))?;
        println!(
            "wrote {} test examples to {}",
            test_ds.len(),
            test_out.display()
        );
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let dataset = load_dataset(&args.data, "train")?;
    if dataset.is_empty() {
        return Err(runtime(anyhow!(
            "training dataset {} is empty",
            args.data.display()
        )));
    }
    let vocab =
        Vocabulary::build(dataset.texts(), args.min_count).map_err(|e| runtime(e.into()))?;

    let mut examples: Vec<(Vec<usize>, usize)> = dataset
        .records
        .iter()
        .map(|r| (vocab.tokenize(&r.text).ids, r.label))
        .filter(|(ids, _)| !ids.is_empty())
        .collect();
    if examples.is_empty() {
        return Err(runtime(anyhow!("no trainable (non-empty) examples")));
    }
    let longest = examples.iter().map(|(ids, _)| ids.len()).max().unwrap();
    let max_len = if args.max_len == 0 {
        longest
    } else {
        args.max_len
    };
    for (ids, _) in &mut examples {
        ids.truncate(max_len);
    }

    let config = ModelConfig {
        vocab_size: vocab.len(),
        dim: args.dim,
        layers: args.layers,
        heads: args.heads,
        max_len,
        classes: dataset.class_count().max(2),
    };
    let mut model = ClassifierModel::<f32>::new(config, args.seed).map_err(|e| usage(e.into()))?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        seed: args.seed,
    };
    println!(
        "training on {} examples (vocab {}, max_len {max_len}, seed {})",
        examples.len(),
        vocab.len(),
        args.seed
    );
    let history = train(&mut model, &examples, &cfg).map_err(|e| runtime(e.into()))?;
    for h in &history {
        println!(
            "epoch {:>3}  loss {:.4}  accuracy {:.4}",
            h.epoch, h.mean_loss, h.accuracy
        );
    }

    if let Some(eval_path) = &args.eval {
        let eval_ds = load_dataset(eval_path, "test")?;
        let eval_examples: Vec<(Vec<usize>, usize)> = eval_ds
            .records
            .iter()
            .map(|r| {
                let mut ids = vocab.tokenize(&r.text).ids;
                ids.truncate(max_len);
                (ids, r.label)
            })
            .filter(|(ids, _)| !ids.is_empty())
            .collect();
        let acc = evaluate_accuracy(&model, &eval_examples).map_err(|e| runtime(e.into()))?;
        println!("held-out accuracy: {acc:.4}");
    }

    checkpoint::save(&model, &vocab, &args.out).map_err(|e| runtime(e.into()))?;
    let vocab_out = vocab_path_for(&args.out, &None);
    vocab.save(&vocab_out).map_err(|e| runtime(e.into()))?;
    println!(
        "wrote checkpoint {} and vocabulary {}",
        args.out.display(),
        vocab_out.display()
    );
    Ok(())
}

fn cmd_attack(args: AttackArgs) -> Result<(), Failure> {
    let cfg = build_attack_config(
        &args.config,
        &args.alpha_set,
        &args.lr_set,
        args.max_iters,
        args.sim_threshold,
        args.stall_patience,
        args.seed,
    )?;
    let frozen = load_frozen(&args.model, &args.vocab)?;
    let dataset = load_dataset(&args.data, "test")?;
    if dataset.is_empty() {
        return Err(runtime(anyhow!("dataset {} is empty", args.data.display())));
    }
    let report = evaluate_attack(&frozen, &dataset, &cfg).map_err(|e| runtime(e.into()))?;
    report
        .save(&args.out_report)
        .map_err(|e| runtime(e.into()))?;
    print!("{}", report.to_text());
    println!("report written to {}", args.out_report.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let alphas = parse_float_list(&args.alphas, "--alphas")?;
    let base = build_attack_config(
        &None,
        &None,
        &None,
        args.max_iters,
        args.sim_threshold,
        None,
        args.seed,
    )?;
    let frozen = load_frozen(&args.model, &args.vocab)?;
    let dataset = load_dataset(&args.data, "test")?;
    if dataset.is_empty() {
        return Err(runtime(anyhow!("dataset {} is empty", args.data.display())));
    }
    let rows =
        sweep_alpha(&frozen, &dataset, &alphas, args.lr, &base).map_err(|e| runtime(e.into()))?;
    let csv = sweep_to_csv(&rows);
    std::fs::write(&args.out_csv, &csv).map_err(|e| runtime(e.into()))?;
    print!("{csv}");
    println!("sweep written to {}", args.out_csv.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    require_file(&args.input)?;
    let report = AttackReport::load(&args.input).map_err(|e| runtime(e.into()))?;
    let recomputed = bsat_core::harness::compute_aggregates(&report.rows);
    if recomputed != report.aggregates {
        return Err(runtime(anyhow!(
            "report aggregates do not match its rows; the file is corrupt"
        )));
    }
    match args.format.as_str() {
        "json" => print!("{}", report.to_json().map_err(|e| runtime(e.into()))?),
        "csv" => print!("{}", report.to_csv().map_err(|e| runtime(e.into()))?),
        _ => print!("{}", report.to_text()),
    }
    Ok(())
}
