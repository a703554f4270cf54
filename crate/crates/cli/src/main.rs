mod table;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use tcp_core::data::bikeshare::{
    csv_files_in, ingest_trips, write_matrix_csv, DateWindow, IngestOptions,
};
use tcp_core::data::synthetic::NoiseModel;
use tcp_core::harness::{
    execute, format_table, predict_one, run_sweep, ExperimentConfig, Method, Prediction,
    TcpSettings,
};
use tcp_core::Error;

use table::{test_points, training_set, NumericTable};

#[derive(Parser)]
#[command(
    name = "tcp",
    version,
    about = "Trimmed conformal prediction for sparse regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML or JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_path` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides `trial_log_path` from the config.
        #[arg(long)]
        trial_log: Option<PathBuf>,
    },
    /// Prediction sets for the rows of a test CSV.
    Predict(PredictArgs),
    /// Aggregate trip CSVs into a station-day count matrix.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct PredictArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Test CSV with the same feature columns.
    #[arg(long)]
    xnew: PathBuf,
    /// Response column of the training CSV.
    #[arg(long, default_value = "y")]
    response: String,
    /// MaxTrim, RidgeTrim, SplitTrim or Split.
    #[arg(long, default_value = "SplitTrim")]
    method: String,
    /// Miscoverage level of the prediction step.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long)]
    alpha_trim: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Penalty of the half-sample lasso fit.
    #[arg(long)]
    trim_lambda: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale default penalties for t5 noise.
    #[arg(long)]
    t5: bool,
    /// Emit one JSON object per test row.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// Directory of trip CSV files.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    from: NaiveDate,
    #[arg(long)]
    to: NaiveDate,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "Start date")]
    col_start_time: String,
    #[arg(long, default_value = "Start station number")]
    col_start_station: String,
    /// chrono format of the start timestamp.
    #[arg(long)]
    time_format: Option<String>,
}

#[derive(Debug)]
struct ConfigError;

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("invalid configuration")
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Input(_) => 2,
                Error::ExcessiveFailures { .. } => 4,
                _ => 3,
            };
        }
    }
    3
}

fn run(config: PathBuf, output: Option<PathBuf>, trial_log: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::from_path(&config)
        .with_context(|| format!("reading {}", config.display()))
        .context(ConfigError)?;
    if output.is_some() {
        cfg.output_path = output;
    }
    if trial_log.is_some() {
        cfg.trial_log_path = trial_log;
    }
    cfg.validate().context(ConfigError)?;

    if cfg.sweep.is_some() {
        for (value, metrics) in run_sweep(&cfg)? {
            println!("value = {value}");
            print!("{}", format_table(&metrics));
            println!();
        }
        return Ok(());
    }
    let run = execute(&cfg)?;
    run.write_outputs(&cfg)?;
    print!("{}", format_table(&run.metrics));
    run.check_failures()?;
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let method: Method = args.method.parse().context(ConfigError)?;
    let settings = TcpSettings {
        alpha_trim: args.alpha_trim,
        alpha_predict: args.alpha,
        lambda: args.lambda,
        trim_lambda: args.trim_lambda,
        rho: args.rho,
        grid_step: args.grid_step,
    };
    let noise = if args.t5 {
        NoiseModel::T5
    } else {
        NoiseModel::Gaussian
    };
    let (data, features) = training_set(&NumericTable::read(&args.data)?, &args.response)?;
    let points = test_points(&NumericTable::read(&args.xnew)?, &features, &args.response)?;
    for (row, (x_new, y)) in points.iter().enumerate() {
        let pred = predict_one(&settings, method, &data, x_new, noise, args.seed)
            .with_context(|| format!("test row {row}"))?;
        if args.json {
            let mut obj = serde_json::json!({
                "row": row,
                "method": method.to_string(),
                "intervals": pred.intervals(),
                "pi_width": pred.pi_width(),
            });
            if let Prediction::Tcp(r) = &pred {
                obj["trim_set"] = serde_json::to_value(r.trim_set)?;
                obj["n_slow_fits"] = r.n_slow_fits.into();
            }
            if let Some(y) = y {
                obj["y"] = (*y).into();
                obj["covered"] = pred.covers(*y).into();
            }
            println!("{obj}");
        } else {
            let sets: Vec<String> = pred
                .intervals()
                .iter()
                .map(|iv| format!("[{:.4}, {:.4}]", iv.lo, iv.hi))
                .collect();
            let sets = if sets.is_empty() {
                "empty".to_string()
            } else {
                sets.join(" u ")
            };
            let mut line = format!("row {row}: {method} {sets} width {:.4}", pred.pi_width());
            if let Prediction::Tcp(r) = &pred {
                if let Some(t) = r.trim_set {
                    line.push_str(&format!(" trim [{:.4}, {:.4}]", t.lo, t.hi));
                }
            }
            if let Some(y) = y {
                line.push_str(&format!(" y {y} covered {}", pred.covers(*y)));
            }
            println!("{line}");
        }
    }
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    let window = DateWindow::new(args.from, args.to).context(ConfigError)?;
    let opts = IngestOptions {
        col_start_time: args.col_start_time,
        col_start_station: args.col_start_station,
        time_format: args.time_format,
    };
    let files =
        csv_files_in(&args.input).with_context(|| format!("listing {}", args.input.display()))?;
    if files.is_empty() {
        return Err(Error::Data(format!("no CSV files in {}", args.input.display())).into());
    }
    let (matrix, stats) = ingest_trips(&files, window, &opts)?;
    let out = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_matrix_csv(&matrix, out)?;
    println!(
        "{} days x {} stations from {} files: {} rows, {} counted, {} outside window, {} skipped",
        matrix.n_days(),
        matrix.n_stations(),
        files.len(),
        stats.rows,
        stats.counted,
        stats.outside_window,
        stats.skipped
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            output,
            trial_log,
        } => run(config, output, trial_log),
        Command::Predict(args) => predict(args),
        Command::Ingest(args) => ingest(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
