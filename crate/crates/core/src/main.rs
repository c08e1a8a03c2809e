use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spanrel::checkpoint::Checkpoint;
use spanrel::config::RunConfig;
use spanrel::corpus::convert::{convert_file, SourceFormat};
use spanrel::corpus::{
    load_dataset, load_dataset_inferring_schema, load_unlabeled, parse_dataset, parse_records, write_dataset,
    write_records, LabelSchema, RawRecord, Sentence,
};
use spanrel::error::{Error, Result};
use spanrel::experiment::{check_schema, cross_validate, evaluate, predict_all, sweep_negatives, sweep_table};
use spanrel::metrics::Averaging;
use spanrel::train::train;

#[derive(Parser)]
#[command(name = "spanrel", version, about = "Span-based joint entity and relation extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a public dataset release into the canonical JSON format.
    Convert {
        #[arg(long)]
        format: SourceFormat,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write the inferred label schema here.
        #[arg(long)]
        schema_out: Option<PathBuf>,
    },
    /// Train a model and write a run directory with its checkpoint.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a checkpoint against an annotated dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the checkpoint's setting.
        #[arg(long)]
        averaging: Option<Averaging>,
        #[arg(long)]
        macro_all_types: bool,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Write predictions for a dataset; annotations in the input are ignored.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// k-fold cross-validation with per-fold and summary rows.
    CrossValidate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train one model per negative-sample count and tabulate F1.
    SweepNegatives {
        #[arg(long)]
        train: PathBuf,
        /// Scored on the training set when omitted.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        counts: Vec<usize>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Configuration file plus per-field overrides.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    #[arg(long)]
    max_span_len: Option<String>,
    #[arg(long)]
    neg_entity: Option<String>,
    #[arg(long)]
    neg_relation: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    warmup_fraction: Option<String>,
    #[arg(long)]
    width_dim: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    m_pos: Option<String>,
    #[arg(long)]
    m_neg: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    theta_entity: Option<String>,
    #[arg(long)]
    theta_relation: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    init_std: Option<String>,
    #[arg(long)]
    grad_clip: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    dev_fraction: Option<String>,
    #[arg(long)]
    averaging: Option<String>,
    #[arg(long)]
    macro_all_types: Option<String>,
    #[arg(long)]
    encoder_kind: Option<String>,
    #[arg(long)]
    encoder_model_name: Option<String>,
    #[arg(long)]
    encoder_dim: Option<String>,
    #[arg(long)]
    logits_normalized: Option<String>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let fields: [(&str, &Option<String>); 28] = [
            ("max_span_len", &self.max_span_len),
            ("neg_entity", &self.neg_entity),
            ("neg_relation", &self.neg_relation),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("learning_rate", &self.learning_rate),
            ("warmup_fraction", &self.warmup_fraction),
            ("width_dim", &self.width_dim),
            ("gamma", &self.gamma),
            ("m_pos", &self.m_pos),
            ("m_neg", &self.m_neg),
            ("delta", &self.delta),
            ("theta_entity", &self.theta_entity),
            ("theta_relation", &self.theta_relation),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("seed", &self.seed),
            ("init_std", &self.init_std),
            ("grad_clip", &self.grad_clip),
            ("weight_decay", &self.weight_decay),
            ("dropout", &self.dropout),
            ("dev_fraction", &self.dev_fraction),
            ("averaging", &self.averaging),
            ("macro_all_types", &self.macro_all_types),
            ("encoder.kind", &self.encoder_kind),
            ("encoder.model_name", &self.encoder_model_name),
            ("encoder.dim", &self.encoder_dim),
            ("relation.logits_normalized", &self.logits_normalized),
        ];
        let overrides = fields.iter().filter_map(|(k, v)| v.as_deref().map(|v| (*k, v)));
        base.with_overrides(overrides)
    }
}

/// Creates a fresh timestamped directory; existing runs are never touched.
fn run_dir(root: &Path, command: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S%.3f");
    for n in 0.. {
        let name = if n == 0 {
            format!("{stamp}-{command}")
        } else {
            format!("{stamp}-{command}-{n}")
        };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!()
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn load_labeled(path: &Path, schema: Option<&Path>) -> Result<(Vec<Sentence>, LabelSchema)> {
    match schema {
        Some(s) => {
            let schema = LabelSchema::load(s)?;
            Ok((load_dataset(path, &schema)?, schema))
        }
        None => load_dataset_inferring_schema(path),
    }
}

fn split_dev(sentences: Vec<Sentence>, fraction: f64, seed: u64) -> (Vec<Sentence>, Vec<Sentence>) {
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let dev_n = ((sentences.len() as f64) * fraction).ceil() as usize;
    let dev_idx: std::collections::HashSet<usize> = order[..dev_n.min(order.len())].iter().copied().collect();
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (i, s) in sentences.into_iter().enumerate() {
        if dev_idx.contains(&i) {
            dev.push(s);
        } else {
            train.push(s);
        }
    }
    (train, dev)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Convert { format, input, output, schema_out } => {
            let converted = convert_file(format, &input)?;
            write_dataset(&output, &converted.sentences)?;
            if let Some(path) = schema_out {
                converted.schema.save(path)?;
            }
            println!("{}", converted.report);
        }
        Command::Train { train: train_path, dev, schema, run } => {
            let cfg = run.config()?;
            let (sentences, schema) = load_labeled(&train_path, schema.as_deref())?;
            let (train_set, dev_set) = match dev {
                Some(path) => (sentences, load_dataset(path, &schema)?),
                None if cfg.dev_fraction > 0.0 => split_dev(sentences, cfg.dev_fraction, cfg.seed),
                None => (sentences, Vec::new()),
            };
            let dir = run_dir(&run.out_dir, "train")?;
            write(dir.join("config.toml"), &cfg.to_toml_string())?;
            let dev_ref = (!dev_set.is_empty()).then_some(&dev_set[..]);
            let outcome = train(&cfg, &schema, &train_set, dev_ref)?;
            outcome.checkpoint.save(dir.join("checkpoint.json"))?;
            write(dir.join("train_log.tsv"), &outcome.log_table())?;
            println!("{}", dir.display());
        }
        Command::Evaluate { checkpoint, data, averaging, macro_all_types, out_dir } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let text = fs::read_to_string(&data).map_err(|e| Error::io(&data, e))?;
            let source = data.display().to_string();
            check_schema(&parse_records(&text, &source)?, &ckpt.schema)?;
            let sentences = parse_dataset(&text, &source, &ckpt.schema)?;
            let averaging = averaging.unwrap_or(ckpt.config.averaging);
            let all_types = macro_all_types || ckpt.config.macro_all_types;
            let report = evaluate(&ckpt, &sentences, averaging, all_types)?;
            let dir = run_dir(&out_dir, "evaluate")?;
            write(dir.join("report.txt"), &report.to_text())?;
            write(dir.join("report.tsv"), &report.to_table())?;
            print!("{}", report.to_text());
        }
        Command::Predict { checkpoint, data, output } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let sentences = load_unlabeled(&data)?;
            let predictions = predict_all(&ckpt.params, &sentences, &ckpt.config.decode())?;
            let records: Vec<RawRecord> = sentences
                .iter()
                .zip(&predictions)
                .map(|(s, p)| p.to_record(s, &ckpt.schema))
                .collect();
            write_records(&output, &records)?;
        }
        Command::CrossValidate { data, folds, schema, run } => {
            let cfg = run.config()?;
            let (sentences, schema) = load_labeled(&data, schema.as_deref())?;
            let dir = run_dir(&run.out_dir, "cross-validate")?;
            write(dir.join("config.toml"), &cfg.to_toml_string())?;
            let cv = cross_validate(&cfg, &schema, &sentences, folds)?;
            write(dir.join("cv.tsv"), &cv.to_table())?;
            print!("{}", cv.to_table());
        }
        Command::SweepNegatives { train: train_path, eval, counts, schema, run } => {
            let cfg = run.config()?;
            let (train_set, schema) = load_labeled(&train_path, schema.as_deref())?;
            let eval_set = match eval {
                Some(path) => load_dataset(path, &schema)?,
                None => train_set.clone(),
            };
            let dir = run_dir(&run.out_dir, "sweep-negatives")?;
            write(dir.join("config.toml"), &cfg.to_toml_string())?;
            let rows = sweep_negatives(&cfg, &schema, &train_set, &eval_set, &counts)?;
            let table = sweep_table(&rows);
            write(dir.join("sweep.tsv"), &table)?;
            write(
                dir.join("notes.txt"),
                "At full scale with a pretrained encoder, F1 is reported to peak near 100-120 negatives per sentence.\n\
                 That trend is not checked by this harness.\n",
            )?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
