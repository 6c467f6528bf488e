use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tfnet::config::{load_synth_spec, RunConfig};
use tfnet::data::{generate_synthetic, read_dataset, write_generic_csv, DataFormat, ReadOptions};
use tfnet::model::{load_snapshot, predict_batch, ModelKind};
use tfnet::run::{evaluate, train_model, write_artifacts};
use tfnet::train::gradcheck;
use tfnet::{Error, Result};

/// Click-through-rate prediction with multi-semantic tensor feature
/// interactions.
#[derive(Parser)]
#[command(name = "ctr", version)]
struct Cli {
    /// Overrides every seed in the config or spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON run config; writes model.snap, train_log.csv and
    /// report.json into the output directory.
    Train {
        config: PathBuf,
        /// Output directory (defaults to the config's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print AUC and log loss of a snapshot on a data file.
    Evaluate {
        snapshot: PathBuf,
        data: PathBuf,
        /// Reference snapshot for RI-AUC.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value = "generic_csv")]
        format: DataFormat,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write one click probability per input row.
    Predict {
        snapshot: PathBuf,
        data: PathBuf,
        out: PathBuf,
        #[arg(long, default_value = "generic_csv")]
        format: DataFormat,
    },
    /// Compare analytic gradients with central finite differences; exits 1
    /// when any parameter group fails.
    Gradcheck {
        /// Model to check; all four when omitted.
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Generate a planted synthetic dataset as generic_csv plus its schema
    /// (`<out stem>.schema.json`).
    GenSynth { spec: PathBuf, out: PathBuf },
}

fn main() -> ExitCode {
    tfnet::init_thread_pool();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train { config, out } => cmd_train(&config, out, cli.seed),
        Command::Evaluate {
            snapshot,
            data,
            baseline,
            format,
            json,
        } => cmd_evaluate(&snapshot, &data, baseline.as_deref(), format, json),
        Command::Predict {
            snapshot,
            data,
            out,
            format,
        } => cmd_predict(&snapshot, &data, &out, format),
        Command::Gradcheck { model } => cmd_gradcheck(model, cli.seed.unwrap_or(0)),
        Command::GenSynth { spec, out } => cmd_gen_synth(&spec, &out, cli.seed),
    }
}

fn cmd_train(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<u8> {
    let mut config = RunConfig::load(path)?;
    if let Some(s) = seed {
        config.set_seed(s);
    }
    let data = config.prepare_data()?;
    eprintln!(
        "training {} on {} rows, validating on {}",
        config.model.kind,
        data.train.len(),
        data.valid.len()
    );
    let outcome = train_model(&config, &data)?;
    let dir = out.unwrap_or_else(|| config.output_dir.clone());
    let artifacts = write_artifacts(&outcome, &dir)?;
    print!("{}", outcome.report.to_table());
    println!("steps         {}", outcome.fit.steps);
    println!("snapshot      {}", artifacts.snapshot.display());
    println!("log           {}", artifacts.log.display());
    println!("report        {}", artifacts.report.display());
    Ok(0)
}

fn cmd_evaluate(snapshot: &Path, data: &Path, baseline: Option<&Path>, format: DataFormat, json: bool) -> Result<u8> {
    let params = load_snapshot(snapshot)?;
    let base = baseline.map(load_snapshot).transpose()?;
    if let Some(b) = &base {
        if b.schema.hash() != params.schema.hash() {
            return Err(Error::SchemaMismatch {
                snapshot: b.schema.hash(),
                data: params.schema.hash(),
            });
        }
    }
    let instances = read_dataset(data, format, &params.schema, ReadOptions::default())?.instances;
    let mut report = evaluate(&params, &instances)?;
    if let Some(b) = &base {
        let base_report = evaluate(b, &instances)?;
        report = report.with_baseline(b.kind().name(), base_report.auc)?;
    }
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(0)
}

fn cmd_predict(snapshot: &Path, data: &Path, out: &Path, format: DataFormat) -> Result<u8> {
    let params = load_snapshot(snapshot)?;
    let instances = read_dataset(data, format, &params.schema, ReadOptions::default())?.instances;
    let probs = predict_batch(&params, &instances)?;
    let mut text = String::with_capacity(probs.len() * 20);
    for p in &probs {
        text.push_str(&format!("{p}\n"));
    }
    let mut f = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(out, e))?;
    eprintln!("wrote {} predictions to {}", probs.len(), out.display());
    Ok(0)
}

fn cmd_gradcheck(model: Option<ModelKind>, seed: u64) -> Result<u8> {
    let kinds = model.map_or(ModelKind::ALL.to_vec(), |k| vec![k]);
    let mut ok = true;
    for kind in kinds {
        let report = gradcheck(kind, seed)?;
        print!("{}", report.to_table());
        ok &= report.passed();
    }
    println!("{}", if ok { "gradcheck passed" } else { "gradcheck FAILED" });
    Ok(if ok { 0 } else { 1 })
}

/// Schema path written next to generated data.
fn schema_path(out: &Path) -> PathBuf {
    out.with_extension("schema.json")
}

fn cmd_gen_synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<u8> {
    let mut spec = load_synth_spec(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let synth = generate_synthetic(&spec)?;
    write_generic_csv(out, &synth.schema, &synth.rows)?;
    let schema_out = schema_path(out);
    synth.schema.save(&schema_out)?;
    eprintln!(
        "wrote {} rows to {} and schema to {}",
        synth.rows.len(),
        out.display(),
        schema_out.display()
    );
    Ok(0)
}
