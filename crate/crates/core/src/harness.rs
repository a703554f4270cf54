//! Experiment runner: Monte Carlo trials on synthetic data or held-out days
//! of a bikeshare station-day matrix, with per-trial JSON-lines records and
//! per-method summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{random_split, split_conformal, Interval, LassoFitter, SplitInterval};
use crate::data::bikeshare::{make_regression_task, read_matrix_csv, StationDayMatrix};
use crate::data::synthetic::{default_lambda, gen_synthetic, NoiseModel, SyntheticSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tcp::{tcp_predict, TcpConfig, TcpResult};
use crate::trimming::TrimMethod;

/// Largest tolerated fraction of failed trials per method.
pub const MAX_FAILURE_RATE: f64 = 0.05;

const SPLIT_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    MaxTrim,
    RidgeTrim,
    SplitTrim,
    /// Plain split conformal with the lasso.
    Split,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::MaxTrim,
        Method::RidgeTrim,
        Method::SplitTrim,
        Method::Split,
    ];

    pub fn trim_method(self) -> Option<TrimMethod> {
        match self {
            Method::MaxTrim => Some(TrimMethod::MaxTrim),
            Method::RidgeTrim => Some(TrimMethod::RidgeTrim),
            Method::SplitTrim => Some(TrimMethod::SplitTrim),
            Method::Split => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.trim_method() {
            Some(t) => t.fmt(f),
            None => f.write_str("Split"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "maxtrim" | "max" => Ok(Method::MaxTrim),
            "ridgetrim" | "ridge" => Ok(Method::RidgeTrim),
            "splittrim" => Ok(Method::SplitTrim),
            "split" => Ok(Method::Split),
            _ => Err(Error::Input(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Synthetic,
    Bikeshare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaySelection {
    RandomDay,
    LastDay,
}

fn default_random_days() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BikeshareSource {
    /// Station-day matrix CSV as written by `write_matrix_csv`.
    pub matrix: PathBuf,
    pub day_selection: DaySelection,
    /// Held-out days per station under `random_day`.
    #[serde(default = "default_random_days")]
    pub random_days: usize,
    /// Response stations (column indices); all stations when absent.
    #[serde(default)]
    pub stations: Option<Vec<usize>>,
    /// Subtract training means from every column and from the response.
    #[serde(default)]
    pub center: bool,
}

fn default_alpha_predict() -> f64 {
    0.1
}

fn default_rho() -> f64 {
    1.0
}

fn default_grid_step() -> f64 {
    0.01
}

/// Conformal settings shared by all methods. Unset levels and penalties take
/// per-method defaults: `alpha_trim = 1/(m+1)` with `m` the number of scores
/// the trimming step ranks, `lambda = sqrt(n ln p)`, and the half-sample
/// penalty `sqrt((n/2) ln p)` for the split fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcpSettings {
    #[serde(default)]
    pub alpha_trim: Option<f64>,
    #[serde(default = "default_alpha_predict")]
    pub alpha_predict: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub trim_lambda: Option<f64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
}

impl Default for TcpSettings {
    fn default() -> Self {
        Self {
            alpha_trim: None,
            alpha_predict: default_alpha_predict(),
            lambda: None,
            trim_lambda: None,
            rho: default_rho(),
            grid_step: default_grid_step(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    N,
    P,
    K,
}

/// Repeats the synthetic experiment over a range of one shape parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<usize>,
    pub csv_path: PathBuf,
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Data model for synthetic mode; its `seed` is replaced per trial.
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub bikeshare: Option<BikeshareSource>,
    #[serde(default)]
    pub tcp: TcpSettings,
    /// Summary JSON.
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    /// Per-trial JSON-lines log; defaults to the summary path with extension
    /// `trials.jsonl`.
    #[serde(default)]
    pub trial_log_path: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn synthetic(spec: SyntheticSpec, trials: usize, seed: u64) -> Self {
        Self {
            mode: Mode::Synthetic,
            methods: default_methods(),
            trials,
            seed,
            synthetic: Some(spec),
            bikeshare: None,
            tcp: TcpSettings::default(),
            output_path: None,
            trial_log_path: None,
            sweep: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Input("at least one method is required".into()));
        }
        let t = &self.tcp;
        let level = |name: &str, a: f64| {
            if a > 0.0 && a < 1.0 {
                Ok(())
            } else {
                Err(Error::Input(format!("{name} must lie in (0, 1), got {a}")))
            }
        };
        level("alpha_predict", t.alpha_predict)?;
        if let Some(a) = t.alpha_trim {
            level("alpha_trim", a)?;
            if a + t.alpha_predict >= 1.0 {
                return Err(Error::Input(
                    "alpha_trim + alpha_predict must be below 1".into(),
                ));
            }
        }
        for (name, v) in [
            ("lambda", t.lambda),
            ("trim_lambda", t.trim_lambda),
            ("rho", Some(t.rho)),
            ("grid_step", Some(t.grid_step)),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Input(format!("{name} must be positive, got {v}")));
                }
            }
        }
        match self.mode {
            Mode::Synthetic => {
                if self.trials == 0 {
                    return Err(Error::Input("trials must be at least 1".into()));
                }
                self.synthetic
                    .as_ref()
                    .ok_or_else(|| {
                        Error::Input("synthetic mode needs a [synthetic] section".into())
                    })?
                    .validate()?;
            }
            Mode::Bikeshare => {
                let b = self.bikeshare.as_ref().ok_or_else(|| {
                    Error::Input("bikeshare mode needs a [bikeshare] section".into())
                })?;
                if b.day_selection == DaySelection::RandomDay && b.random_days == 0 {
                    return Err(Error::Input("random_days must be at least 1".into()));
                }
            }
        }
        if let Some(s) = &self.sweep {
            if self.mode != Mode::Synthetic {
                return Err(Error::Input(
                    "sweeps are only defined for synthetic mode".into(),
                ));
            }
            if s.values.is_empty() {
                return Err(Error::Input("sweep needs at least one value".into()));
            }
        }
        Ok(())
    }

    pub fn trial_log_path(&self) -> Option<PathBuf> {
        self.trial_log_path.clone().or_else(|| {
            self.output_path
                .as_ref()
                .map(|p| p.with_extension("trials.jsonl"))
        })
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Ok(serde_json::from_str(&text)?)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Input(format!("config: {e}")))
    }
}

/// Outcome of one method on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_day: Option<usize>,
    pub y_new: f64,
    pub covered: bool,
    pub pi_width: f64,
    pub trial_width: Option<f64>,
    pub trim_lo: Option<f64>,
    pub trim_hi: Option<f64>,
    pub n_slow_fits: usize,
    pub n_fast_region_evals: usize,
    pub empty_trim: bool,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub mean_pi_width: f64,
    pub mean_trial_width: Option<f64>,
    /// Over trials that completed.
    pub coverage_pct: f64,
    pub mean_n_slow_fits: f64,
    /// Mean per completed trial.
    pub wall_time_s: f64,
    pub trials: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetrics {
    pub mode: Mode,
    pub n: usize,
    pub p: usize,
    pub trials: usize,
    pub alpha_predict: f64,
    pub methods: Vec<MethodMetrics>,
}

impl ExperimentMetrics {
    pub fn get(&self, method: Method) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Per-trial records in trial-major, configured-method order, with the
/// matching wall times in seconds.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub metrics: ExperimentMetrics,
    pub records: Vec<TrialRecord>,
    pub wall_times: Vec<f64>,
}

impl ExperimentRun {
    /// Errors when any method failed on more than `MAX_FAILURE_RATE` of its trials.
    pub fn check_failures(&self) -> Result<()> {
        for m in &self.metrics.methods {
            let total = m.trials + m.failures;
            if m.failures as f64 > MAX_FAILURE_RATE * total as f64 {
                return Err(Error::ExcessiveFailures {
                    method: m.method.to_string(),
                    failed: m.failures,
                    total,
                });
            }
        }
        Ok(())
    }

    pub fn write_trial_log<W: Write>(&self, out: W) -> Result<()> {
        write_trial_log(&self.records, out)
    }

    /// Writes the summary JSON and the trial log at the configured paths.
    pub fn write_outputs(&self, config: &ExperimentConfig) -> Result<()> {
        if let Some(path) = &config.output_path {
            let mut w = BufWriter::new(File::create(path)?);
            serde_json::to_writer_pretty(&mut w, &self.metrics)?;
            writeln!(w)?;
            w.flush()?;
        }
        if let Some(path) = config.trial_log_path() {
            let mut w = BufWriter::new(File::create(path)?);
            self.write_trial_log(&mut w)?;
            w.flush()?;
        }
        Ok(())
    }
}

pub fn write_trial_log<W: Write>(records: &[TrialRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trial_log<R: std::io::BufRead>(input: R) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Per-method means over completed trials. Wall times are optional so the
/// summary can be rebuilt from a trial log alone.
pub fn summarize(
    records: &[TrialRecord],
    methods: &[Method],
    wall_times: Option<&[f64]>,
) -> Vec<MethodMetrics> {
    methods
        .iter()
        .map(|&method| {
            let mut ok = 0usize;
            let mut failures = 0usize;
            let (mut covered, mut pi, mut tw, mut fits, mut wall) = (0usize, 0.0, 0.0, 0.0, 0.0);
            for (i, r) in records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.method == method)
            {
                if r.failed() {
                    failures += 1;
                    continue;
                }
                ok += 1;
                covered += r.covered as usize;
                pi += r.pi_width;
                tw += r.trial_width.unwrap_or(0.0);
                fits += r.n_slow_fits as f64;
                wall += wall_times.map_or(0.0, |w| w[i]);
            }
            let mean = |s: f64| if ok == 0 { f64::NAN } else { s / ok as f64 };
            MethodMetrics {
                method,
                mean_pi_width: mean(pi),
                mean_trial_width: method.trim_method().map(|_| mean(tw)),
                coverage_pct: mean(100.0 * covered as f64),
                mean_n_slow_fits: mean(fits),
                wall_time_s: mean(wall),
                trials: ok,
                failures,
            }
        })
        .collect()
}

/// Aligned text table with one row per method.
pub fn format_table(metrics: &ExperimentMetrics) -> String {
    let header = [
        "Method",
        "PI width",
        "Trial set width",
        "Coverage (%)",
        "Slow fits",
        "Wall time (s)",
        "Failed",
    ];
    let rows: Vec<[String; 7]> = metrics
        .methods
        .iter()
        .map(|m| {
            [
                m.method.to_string(),
                format!("{:.2}", m.mean_pi_width),
                m.mean_trial_width
                    .map_or_else(|| "-".to_string(), |w| format!("{w:.2}")),
                format!("{:.1}", m.coverage_pct),
                format!("{:.1}", m.mean_n_slow_fits),
                format!("{:.4}", m.wall_time_s),
                m.failures.to_string(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (j, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if j == 0 {
                s.push_str(&format!("{cell:<w$}"));
            } else {
                s.push_str(&format!("  {cell:>w$}"));
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(
        widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    ));
    for row in &rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

/// One regression problem: training data, test point and its response.
struct Task {
    data: Dataset,
    x_new: DVector<f64>,
    y_new: f64,
    station: Option<usize>,
    test_day: Option<usize>,
    noise: NoiseModel,
}

/// Levels, penalties and fitting half for `method` on an `n x p` problem.
pub fn method_config(
    settings: &TcpSettings,
    method: Method,
    n: usize,
    p: usize,
    noise: NoiseModel,
    seed: u64,
) -> (TcpConfig, Vec<usize>) {
    let split_seed = seed ^ SPLIT_SEED_MIX;
    let split = random_split(n, split_seed);
    let calib = n - split.len();
    let alpha_trim = match method {
        Method::MaxTrim => 1.0 / (n as f64 + 1.0),
        Method::RidgeTrim => settings.alpha_trim.unwrap_or(1.0 / (n as f64 + 1.0)),
        Method::SplitTrim | Method::Split => {
            settings.alpha_trim.unwrap_or(1.0 / (calib as f64 + 1.0))
        }
    };
    let cfg = TcpConfig {
        alpha_trim,
        alpha_predict: settings.alpha_predict,
        trim_method: method.trim_method().unwrap_or(TrimMethod::SplitTrim),
        lambda: settings
            .lambda
            .unwrap_or_else(|| default_lambda(n as f64, p, noise)),
        trim_lambda: Some(
            settings
                .trim_lambda
                .unwrap_or_else(|| default_lambda(n as f64 / 2.0, p, noise)),
        ),
        rho: settings.rho,
        grid_step: settings.grid_step,
        seed: split_seed,
    };
    (cfg, split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    Tcp(TcpResult),
    Split(SplitInterval),
}

impl Prediction {
    pub fn covers(&self, y: f64) -> bool {
        match self {
            Prediction::Tcp(r) => r.covers(y),
            Prediction::Split(s) => s.interval().contains(y),
        }
    }

    pub fn pi_width(&self) -> f64 {
        match self {
            Prediction::Tcp(r) => r.pi_width,
            Prediction::Split(s) => s.interval().width(),
        }
    }

    pub fn intervals(&self) -> Vec<Interval> {
        match self {
            Prediction::Tcp(r) => r.prediction_set.intervals.clone(),
            Prediction::Split(s) => vec![s.interval()],
        }
    }
}

/// One prediction with the same per-method defaults the experiments use.
pub fn predict_one(
    settings: &TcpSettings,
    method: Method,
    data: &Dataset,
    x_new: &DVector<f64>,
    noise: NoiseModel,
    seed: u64,
) -> Result<Prediction> {
    let (cfg, split) = method_config(settings, method, data.n(), data.p(), noise, seed);
    match method {
        Method::Split => {
            let fitter = LassoFitter::new(cfg.trim_lambda.unwrap_or(cfg.lambda));
            split_conformal(&fitter, data, x_new, cfg.alpha_predict, &split).map(Prediction::Split)
        }
        _ => tcp_predict(&cfg, data, x_new).map(Prediction::Tcp),
    }
}

fn run_method(
    settings: &TcpSettings,
    method: Method,
    task: &Task,
    trial: usize,
    seed: u64,
) -> (TrialRecord, f64) {
    let start = Instant::now();
    let mut rec = TrialRecord {
        trial,
        method,
        station: task.station,
        test_day: task.test_day,
        y_new: task.y_new,
        covered: false,
        pi_width: 0.0,
        trial_width: None,
        trim_lo: None,
        trim_hi: None,
        n_slow_fits: 0,
        n_fast_region_evals: 0,
        empty_trim: false,
        error: None,
    };
    match predict_one(settings, method, &task.data, &task.x_new, task.noise, seed) {
        Ok(pred) => {
            rec.covered = pred.covers(task.y_new);
            rec.pi_width = pred.pi_width();
            match pred {
                Prediction::Split(_) => rec.n_slow_fits = 1,
                Prediction::Tcp(r) => {
                    rec.trial_width = Some(r.trial_width);
                    rec.trim_lo = r.trim_set.map(|t| t.lo);
                    rec.trim_hi = r.trim_set.map(|t| t.hi);
                    rec.n_slow_fits = r.n_slow_fits;
                    rec.n_fast_region_evals = r.n_fast_region_evals;
                    rec.empty_trim = r.empty_trim;
                }
            }
        }
        Err(e) => {
            log::warn!("trial {trial} {method}: {e}");
            rec.error = Some(e.to_string());
        }
    }
    (rec, start.elapsed().as_secs_f64())
}

fn run_tasks<F>(
    config: &ExperimentConfig,
    n_tasks: usize,
    make_task: F,
) -> Result<(Vec<TrialRecord>, Vec<f64>)>
where
    F: Fn(usize, u64) -> Result<Task> + Sync,
{
    let per_trial: Vec<Result<Vec<(TrialRecord, f64)>>> = (0..n_tasks)
        .into_par_iter()
        .map(|trial| {
            let seed = config.seed ^ trial as u64;
            let task = make_task(trial, seed)?;
            Ok(config
                .methods
                .iter()
                .map(|&m| run_method(&config.tcp, m, &task, trial, seed))
                .collect())
        })
        .collect();
    let mut records = Vec::with_capacity(n_tasks * config.methods.len());
    let mut walls = Vec::with_capacity(records.capacity());
    for trial in per_trial {
        for (r, w) in trial? {
            records.push(r);
            walls.push(w);
        }
    }
    Ok((records, walls))
}

fn finish(
    config: &ExperimentConfig,
    n: usize,
    p: usize,
    trials: usize,
    records: Vec<TrialRecord>,
    wall_times: Vec<f64>,
) -> ExperimentRun {
    let methods = summarize(&records, &config.methods, Some(&wall_times));
    ExperimentRun {
        metrics: ExperimentMetrics {
            mode: config.mode,
            n,
            p,
            trials,
            alpha_predict: config.tcp.alpha_predict,
            methods,
        },
        records,
        wall_times,
    }
}

/// Runs every trial without judging the failure count.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentRun> {
    config.validate()?;
    match config.mode {
        Mode::Synthetic => execute_synthetic(config),
        Mode::Bikeshare => {
            let src = config.bikeshare.as_ref().expect("validated");
            let m = read_matrix_csv(File::open(&src.matrix)?)?;
            execute_bikeshare(config, &m)
        }
    }
}

fn execute_synthetic(config: &ExperimentConfig) -> Result<ExperimentRun> {
    let base = config.synthetic.expect("validated");
    let (records, walls) = run_tasks(config, config.trials, |_, seed| {
        let draw = gen_synthetic(&SyntheticSpec { seed, ..base })?;
        Ok(Task {
            data: draw.data,
            x_new: draw.x_new,
            y_new: draw.y_new,
            station: None,
            test_day: None,
            noise: base.noise,
        })
    })?;
    Ok(finish(
        config,
        base.n,
        base.p,
        config.trials,
        records,
        walls,
    ))
}

/// Held-out days per response station: the final date, or `count` distinct
/// days drawn once from `seed`.
pub fn select_days(n_days: usize, selection: DaySelection, count: usize, seed: u64) -> Vec<usize> {
    match selection {
        DaySelection::LastDay => vec![n_days - 1],
        DaySelection::RandomDay => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut days = sample(&mut rng, n_days, count.min(n_days)).into_vec();
            days.sort_unstable();
            days
        }
    }
}

fn center(task: &mut Task) {
    let n = task.data.n() as f64;
    let mut x = task.data.x().clone();
    let mut y = task.data.y().clone();
    for j in 0..x.ncols() {
        let mean = x.column(j).sum() / n;
        x.column_mut(j).add_scalar_mut(-mean);
        task.x_new[j] -= mean;
    }
    let y_mean = y.sum() / n;
    y.add_scalar_mut(-y_mean);
    task.y_new -= y_mean;
    task.data = Dataset::new(x, y).expect("centering preserves shape and finiteness");
}

/// Loops the response over the configured stations and held-out days of an
/// ingested matrix; trial index is `station_slot * days + day_slot`.
pub fn execute_bikeshare(config: &ExperimentConfig, m: &StationDayMatrix) -> Result<ExperimentRun> {
    config.validate()?;
    let src = config
        .bikeshare
        .as_ref()
        .ok_or_else(|| Error::Input("bikeshare mode needs a [bikeshare] section".into()))?;
    m.validate()?;
    if m.n_days() < 3 || m.n_stations() < 2 {
        return Err(Error::Data(format!(
            "matrix of {} days x {} stations is too small",
            m.n_days(),
            m.n_stations()
        )));
    }
    let stations: Vec<usize> = match &src.stations {
        Some(s) => s.clone(),
        None => (0..m.n_stations()).collect(),
    };
    if let Some(&bad) = stations.iter().find(|&&s| s >= m.n_stations()) {
        return Err(Error::Input(format!("station index {bad} out of range")));
    }
    let days = select_days(m.n_days(), src.day_selection, src.random_days, config.seed);
    let n_tasks = stations.len() * days.len();
    let (records, walls) = run_tasks(config, n_tasks, |trial, _| {
        let (station, day) = (stations[trial / days.len()], days[trial % days.len()]);
        let (data, x_new, y_new) = make_regression_task(m, station, day)?;
        let mut task = Task {
            data,
            x_new,
            y_new,
            station: Some(station),
            test_day: Some(day),
            noise: NoiseModel::Gaussian,
        };
        if src.center {
            center(&mut task);
        }
        Ok(task)
    })?;
    Ok(finish(
        config,
        m.n_days() - 1,
        m.n_stations() - 1,
        n_tasks,
        records,
        walls,
    ))
}

/// Synthetic or bikeshare experiment by `config.mode`; fails when a method
/// exceeds the tolerated failure rate.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    let run = execute(config)?;
    run.check_failures()?;
    Ok(run)
}

pub fn run_bikeshare(config: &ExperimentConfig) -> Result<ExperimentRun> {
    if config.mode != Mode::Bikeshare {
        return Err(Error::Input(
            "run_bikeshare needs mode = \"bikeshare\"".into(),
        ));
    }
    run_experiment(config)
}

/// Reruns the synthetic experiment for each sweep value; returns the metrics
/// per value and writes them as CSV when a sweep path is configured.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<(usize, ExperimentMetrics)>> {
    config.validate()?;
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Input("config has no [sweep] section".into()))?;
    let mut out = Vec::with_capacity(sweep.values.len());
    for &value in &sweep.values {
        let mut cfg = config.clone();
        cfg.sweep = None;
        let spec = cfg.synthetic.as_mut().expect("validated");
        match sweep.parameter {
            SweepParameter::N => spec.n = value,
            SweepParameter::P => spec.p = value,
            SweepParameter::K => spec.k = value,
        }
        out.push((value, run_experiment(&cfg)?.metrics));
    }
    let mut w = csv::Writer::from_path(&sweep.csv_path)?;
    write_sweep_csv(sweep.parameter, &out, &mut w)?;
    w.flush()?;
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(
    parameter: SweepParameter,
    results: &[(usize, ExperimentMetrics)],
    w: &mut csv::Writer<W>,
) -> Result<()> {
    let name = match parameter {
        SweepParameter::N => "n",
        SweepParameter::P => "p",
        SweepParameter::K => "k",
    };
    w.write_record([
        name,
        "method",
        "pi_width",
        "trial_width",
        "coverage_pct",
        "n_slow_fits",
        "wall_time_s",
        "failures",
    ])?;
    for (value, metrics) in results {
        for m in &metrics.methods {
            w.write_record([
                value.to_string(),
                m.method.to_string(),
                m.mean_pi_width.to_string(),
                m.mean_trial_width
                    .map_or_else(String::new, |t| t.to_string()),
                m.coverage_pct.to_string(),
                m.mean_n_slow_fits.to_string(),
                m.wall_time_s.to_string(),
                m.failures.to_string(),
            ])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(trials: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::synthetic(SyntheticSpec::new(16, 12, 2, 0), trials, 7);
        c.tcp.grid_step = 0.05;
        c
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!("ridge_trim".parse::<Method>().unwrap(), Method::RidgeTrim);
        assert!("lasso".parse::<Method>().is_err());
    }

    #[test]
    fn records_are_trial_major_in_method_order() {
        let run = execute(&small(3)).unwrap();
        assert_eq!(run.records.len(), 12);
        for (i, r) in run.records.iter().enumerate() {
            assert_eq!(r.trial, i / 4);
            assert_eq!(r.method, Method::ALL[i % 4]);
        }
        assert!(run
            .metrics
            .get(Method::Split)
            .unwrap()
            .mean_trial_width
            .is_none());
    }

    #[test]
    fn summary_recomputes_from_log() {
        let run = execute(&small(6)).unwrap();
        let mut buf = Vec::new();
        run.write_trial_log(&mut buf).unwrap();
        let back = read_trial_log(&buf[..]).unwrap();
        assert_eq!(back, run.records);
        let again = summarize(&back, &Method::ALL, None);
        for (a, b) in again.iter().zip(&run.metrics.methods) {
            assert!((a.mean_pi_width - b.mean_pi_width).abs() <= 1e-12);
            assert_eq!(a.mean_trial_width.is_some(), b.mean_trial_width.is_some());
            if let (Some(x), Some(y)) = (a.mean_trial_width, b.mean_trial_width) {
                assert!((x - y).abs() <= 1e-12);
            }
            assert!((a.coverage_pct - b.coverage_pct).abs() <= 1e-12);
            assert!((a.mean_n_slow_fits - b.mean_n_slow_fits).abs() <= 1e-12);
        }
    }

    #[test]
    fn coverage_is_exact_fraction() {
        let run = execute(&small(5)).unwrap();
        for m in &run.metrics.methods {
            let covered = run
                .records
                .iter()
                .filter(|r| r.method == m.method && r.covered)
                .count();
            assert_eq!(m.coverage_pct, 100.0 * covered as f64 / m.trials as f64);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = small(1);
        c.methods.clear();
        assert!(c.validate().is_err());
        let mut c = small(0);
        assert!(c.validate().is_err());
        c.trials = 1;
        c.tcp.alpha_trim = Some(0.95);
        assert!(c.validate().is_err());
        let mut c = small(1);
        c.synthetic = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_config_parses_with_defaults() {
        let c = ExperimentConfig::from_toml(
            r#"
            mode = "synthetic"
            methods = ["RidgeTrim", "Split"]
            trials = 4
            seed = 3
            [synthetic]
            n = 20
            p = 30
            k = 3
            noise = "t5"
            [tcp]
            alpha_predict = 0.2
            "#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.methods, vec![Method::RidgeTrim, Method::Split]);
        assert_eq!(c.tcp.rho, 1.0);
        assert_eq!(c.synthetic.unwrap().noise, NoiseModel::T5);
        assert!(
            ExperimentConfig::from_toml("mode = \"synthetic\"\ntrials = 1\nbogus = 1").is_err()
        );
    }

    #[test]
    fn failure_threshold() {
        let mut run = execute(&small(2)).unwrap();
        run.check_failures().unwrap();
        run.records[0].error = Some("boom".into());
        run.metrics.methods = summarize(&run.records, &Method::ALL, None);
        assert!(matches!(
            run.check_failures(),
            Err(Error::ExcessiveFailures {
                failed: 1,
                total: 2,
                ..
            })
        ));
    }

    #[test]
    fn table_has_one_row_per_method() {
        let run = execute(&small(2)).unwrap();
        let t = format_table(&run.metrics);
        assert_eq!(t.lines().count(), 6);
        let lens: Vec<usize> = t.lines().map(str::len).collect();
        assert!(lens.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn random_days_distinct_and_seeded() {
        let d = select_days(93, DaySelection::RandomDay, 10, 4);
        assert_eq!(d.len(), 10);
        assert!(d.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(d, select_days(93, DaySelection::RandomDay, 10, 4));
        assert_eq!(select_days(93, DaySelection::LastDay, 10, 4), vec![92]);
    }
}
