use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use fmrec::config::ScalarKind;
use fmrec::cv::{leakage_audit, CvTrace};
use fmrec::dataset::{generate_records, read_exclusions, read_records};
use fmrec::experiment::{evaluate_models, parse_models, ModelKind};
use fmrec::metrics::{rank_suppliers, Recommender};
use fmrec::{
    ablate_to_purchaser_only, train, FeatureSchema, Fm, InteractionDataset, PopularityModel,
    RawEvent, RunConfig, Scalar, TrainConfig,
};

/// Environment variable holding the log filter, e.g. `FMREC_LOG=debug`.
const LOG_ENV: &str = "FMREC_LOG";

#[derive(Parser)]
#[command(name = "fmrec", version, about = "Cold-start supplier recommendation with factorization machines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted region affinity.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output directory; receives events.jsonl and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on every event of a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "fm")]
        model: String,
        #[arg(long)]
        model_out: PathBuf,
        /// Defaults to the model path with a `.schema.json` extension.
        #[arg(long)]
        schema_out: Option<PathBuf>,
        /// CSV of the probe loss per epoch.
        #[arg(long)]
        loss_out: Option<PathBuf>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Compare models under nested cross-validation.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "fm,fm-ablated,popularity")]
        models: String,
        /// Output directory for CSV, JSON and trace files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank suppliers for a new event.
    Recommend {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// JSON file holding one event record.
        #[arg(long)]
        event: PathBuf,
        #[arg(short = 'k', long, default_value_t = 10)]
        k: usize,
    },
    /// Check a cross-validation trace for leakage.
    Audit {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Print the effective configuration as TOML.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArgs {
    /// JSON Lines file, or a directory containing events.jsonl.
    #[arg(long)]
    data: PathBuf,
    /// File of event ids to drop before anything else.
    #[arg(long)]
    exclude: Option<PathBuf>,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

impl DataArgs {
    fn load(&self, config: &RunConfig) -> Result<InteractionDataset> {
        let path = if self.data.is_dir() {
            self.data.join("events.jsonl")
        } else {
            self.data.clone()
        };
        let mut options = config.ingest_options();
        if let Some(exclude) = &self.exclude {
            options.exclude = read_exclusions(exclude)?;
        }
        let records = read_records(&path)?;
        let mut dataset = InteractionDataset::from_records(&records, &options)?;
        if config.filter_suppliers {
            dataset = dataset.filter_suppliers();
        }
        info!(
            "loaded {} events, {} suppliers, {} interactions from {}",
            dataset.n_events(),
            dataset.n_suppliers(),
            dataset.interaction_count(),
            path.display()
        );
        Ok(dataset)
    }
}

impl HyperArgs {
    fn apply(&self, train: &mut TrainConfig) {
        if let Some(d) = self.latent_dim {
            train.latent_dim = d;
        }
        if let Some(n) = self.iterations {
            train.n_iterations = n;
        }
        if let Some(lr) = self.learning_rate {
            train.learning_rate = lr;
        }
        if let Some(l) = self.lambda {
            train.lambda_reg = l;
        }
        if let Some(n) = self.negatives {
            train.negatives_per_positive = n;
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn generate(common: &Common, out: &Path) -> Result<()> {
    let config = common.load()?;
    let data = generate_records(&config.generator_config())?;
    let dataset = InteractionDataset::from_records(&data.records, &config.ingest_options())?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fmrec::dataset::write_records(&data.records, out.join("events.jsonl"))?;
    let sparsity = dataset.sparsity()?;
    let summary = serde_json::json!({
        "events": dataset.n_events(),
        "suppliers": dataset.n_suppliers(),
        "interactions": dataset.interaction_count(),
        "sparsity_percent": format!("{:.2}", 100.0 * sparsity),
    });
    write(&out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "events {}  suppliers {}  interactions {}  sparsity {:.2}%",
        dataset.n_events(),
        dataset.n_suppliers(),
        dataset.interaction_count(),
        100.0 * sparsity
    );
    Ok(())
}

fn fit_fm<T: Scalar>(dataset: &InteractionDataset, config: &TrainConfig) -> Result<(Fm, String)> {
    let all: Vec<usize> = (0..dataset.n_events()).collect();
    let outcome = train::<T>(dataset, &all, config)?;
    info!(
        "probe loss {:.6} -> {:.6}",
        outcome.initial_loss(),
        outcome.final_loss()
    );
    Ok((outcome.params.cast(), outcome.loss_csv()))
}

fn train_command(
    common: &Common,
    data: &DataArgs,
    model: &str,
    model_out: &Path,
    schema_out: Option<&Path>,
    loss_out: Option<&Path>,
    hyper: &HyperArgs,
) -> Result<()> {
    let config = common.load()?;
    let kind: ModelKind = model.parse()?;
    let mut dataset = data.load(&config)?;
    if kind == ModelKind::FmAblated {
        dataset = ablate_to_purchaser_only(&dataset);
    }
    let schema = dataset.schema();
    let (model_json, losses) = match kind {
        ModelKind::Popularity => {
            let all: Vec<usize> = (0..dataset.n_events()).collect();
            (PopularityModel::train(&dataset, &all).to_json(schema), None)
        }
        ModelKind::Fm | ModelKind::FmAblated => {
            let mut train_config = config.train_config();
            hyper.apply(&mut train_config);
            let (params, losses) = match config.scalar {
                ScalarKind::F64 => fit_fm::<f64>(&dataset, &train_config)?,
                ScalarKind::F32 => fit_fm::<f32>(&dataset, &train_config)?,
            };
            (params.to_json(schema), Some(losses))
        }
    };
    let schema_path = schema_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| model_out.with_extension("schema.json"));
    write(model_out, &model_json)?;
    write(&schema_path, &schema.to_json())?;
    match (loss_out, losses) {
        (Some(path), Some(csv)) => write(path, &csv)?,
        (Some(_), None) => warn!("popularity has no training loss; --loss-out ignored"),
        _ => {}
    }
    println!(
        "wrote {} and {}",
        model_out.display(),
        schema_path.display()
    );
    Ok(())
}

fn evaluate(common: &Common, data: &DataArgs, models: &str, out: &Path) -> Result<bool> {
    let config = common.load()?;
    let models = parse_models(models)?;
    let dataset = data.load(&config)?;
    let report = evaluate_models(&dataset, &config, &models)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("metrics.csv"), &report.metrics_csv())?;
    write(&out.join("plot.csv"), &report.plot_csv())?;
    write(&out.join("report.json"), &report.to_json())?;
    for m in &report.models {
        write(
            &out.join(format!("trace-{}.jsonl", m.model.name())),
            &m.trace.to_jsonl(),
        )?;
    }
    print!("{}", report.table());
    for m in &report.models {
        if !m.audit.is_clean() {
            eprintln!(
                "leakage audit failed for {}: {} violations",
                m.model.name(),
                m.audit.violations.len()
            );
        }
    }
    Ok(report.audits_clean())
}

fn recommend(model: &Path, schema: &Path, event: &Path, k: usize) -> Result<()> {
    if k == 0 {
        bail!("k must be at least 1");
    }
    let schema = FeatureSchema::from_json(&read(schema)?)
        .with_context(|| format!("parsing schema {}", schema.display()))?;
    let text = read(model)?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", model.display()))?;
    let recommender: Box<dyn Recommender> = match doc.get("kind").and_then(|k| k.as_str()) {
        Some("fm") => Box::new(Fm::from_json(&text, &schema)?),
        Some("popularity") => Box::new(PopularityModel::from_json(&text, &schema)?),
        other => bail!("{}: unknown model kind {:?}", model.display(), other),
    };
    let raw: RawEvent = serde_json::from_str(&read(event)?)
        .with_context(|| format!("parsing event {}", event.display()))?;
    let encoded = schema.encode_event(&raw);
    for w in &encoded.warnings {
        warn!("cold start: {}", w);
    }
    let scores = recommender.score_suppliers(&schema, &encoded.vector)?;
    let ranking = rank_suppliers(&scores)?;
    println!("rank,supplier,score");
    for (rank, &s) in ranking.iter().take(k).enumerate() {
        println!("{},{},{}", rank + 1, schema.suppliers()[s], scores[s]);
    }
    Ok(())
}

fn audit(trace: &Path) -> Result<bool> {
    let trace = CvTrace::from_jsonl(&read(trace)?)?;
    let report = leakage_audit(&trace);
    println!(
        "folds {}  events {}  violations {}",
        report.folds_checked,
        report.events_seen,
        report.violations.len()
    );
    for v in &report.violations {
        println!("{}", serde_json::to_string(v)?);
    }
    Ok(report.is_clean())
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Generate { common, out } => generate(common, out).map(|_| true),
        Command::Train {
            common,
            data,
            model,
            model_out,
            schema_out,
            loss_out,
            hyper,
        } => train_command(
            common,
            data,
            model,
            model_out,
            schema_out.as_deref(),
            loss_out.as_deref(),
            hyper,
        )
        .map(|_| true),
        Command::Evaluate {
            common,
            data,
            models,
            out,
        } => evaluate(common, data, models, out),
        Command::Recommend {
            model,
            schema,
            event,
            k,
        } => recommend(model, schema, event, *k).map(|_| true),
        Command::Audit { trace } => audit(trace),
        Command::Config { common } => {
            print!("{}", common.load()?.to_toml());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
