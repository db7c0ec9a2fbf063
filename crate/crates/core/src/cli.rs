//! Command-line front end. Every command writes JSON artifacts into an output
//! directory; wall-clock measurements live under a top-level `timing` key.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Axis;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::error::MvaError;
use crate::eval::{self, CvTarget};
use crate::io::{self, IoError, TableFormat};
use crate::linalg::Matrix;
use crate::mva::{self, Method, MvaConfig, MvaModel, Penalty, ProcrustesStyle, Regularizer, WStep};
use crate::persist::MatrixRepr;
use crate::selection::{self, VariableReport};
use crate::synth::{self, ToySpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("solver failure: {0}")]
    Solver(MvaError),
}

impl From<MvaError> for CliError {
    fn from(e: MvaError) -> Self {
        match e {
            MvaError::DimensionMismatch(_) | MvaError::NonFinite(_) | MvaError::InvalidArgument(_) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Solver(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Input(_) => 1,
            CliError::Solver(_) => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "regmva", version, about = "Regularized MVA with l2,1 variable selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the relevant/redundant/noisy toy regression data.
    Synth(SynthArgs),
    /// Fit a model; writes model.json and report.json.
    Fit(FitArgs),
    /// Rank and select input variables of a fitted model; writes selection.json.
    Select(SelectArgs),
    /// Score a fitted model on held-out data; writes eval.json.
    Eval(EvalArgs),
    /// Fit with both W-step modes and report side by side; writes compare.json.
    Compare(CompareArgs),
    /// k-fold cross-validation over a gamma grid; writes cv.json.
    Cv(CvArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FormatArgs {
    /// Field delimiter of input and output tables.
    #[arg(long, default_value = ",")]
    pub delimiter: char,
    /// Tables have no header row.
    #[arg(long)]
    pub no_header: bool,
}

impl FormatArgs {
    fn table_format(&self) -> CliResult<TableFormat> {
        if !self.delimiter.is_ascii() {
            return Err(CliError::Input(format!("delimiter must be ASCII, got {:?}", self.delimiter)));
        }
        Ok(TableFormat { delimiter: self.delimiter as u8, has_header: !self.no_header })
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "opls")]
    pub method: Method,
    #[arg(long = "reg", value_enum, default_value = "l21")]
    pub penalty: Penalty,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Number of extracted features; defaults to the largest admissible value.
    #[arg(long)]
    pub n_f: Option<usize>,
    #[arg(long = "wstep", value_enum, default_value = "eigen")]
    pub w_step: WStep,
    #[arg(long, value_enum, default_value = "nested")]
    pub procrustes_style: ProcrustesStyle,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 50)]
    pub inner_max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub inner_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub ridge_eps: f64,
    #[arg(long, default_value_t = crate::l21::DEFAULT_ROW_FLOOR)]
    pub row_floor: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    fn config(&self, n: usize, m: usize) -> MvaConfig {
        let n_f = self.n_f.unwrap_or(n.min(m));
        MvaConfig {
            w_step: self.w_step,
            procrustes_style: self.procrustes_style,
            outer_max_iter: self.max_iter,
            outer_tol: self.tol,
            inner_max_iter: self.inner_max_iter,
            inner_tol: self.inner_tol,
            ridge_eps: self.ridge_eps,
            row_floor: self.row_floor,
            seed: self.seed,
            ..MvaConfig::new(self.method, Regularizer::new(self.penalty, self.gamma), n_f)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input variables (rows = samples, columns = variables).
    #[arg(long)]
    pub x: PathBuf,
    /// Outputs; required unless --method pca.
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[command(flatten)]
    pub format: FormatArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub n_relev: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_redund: usize,
    #[arg(long, default_value_t = 1500)]
    pub n_noisy: usize,
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long, default_value_t = 500)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub noise_var: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub format: FormatArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Squared-relevance threshold used in the report.
    #[arg(long, default_value_t = selection::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Keep the n_s most important variables instead of thresholding.
    #[arg(long)]
    pub n_s: Option<usize>,
    #[arg(long, default_value_t = selection::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regress,
    Classify,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "regress")]
    pub task: Task,
    #[arg(long)]
    pub x_train: PathBuf,
    #[arg(long)]
    pub y_train: PathBuf,
    #[arg(long)]
    pub x_test: PathBuf,
    #[arg(long)]
    pub y_test: PathBuf,
    /// Column holding class labels (header name, or zero-based index).
    #[arg(long)]
    pub label_column: Option<String>,
    /// Ridge of the least-squares scorer.
    #[arg(long, default_value_t = eval::CV_RIDGE)]
    pub ridge: f64,
    #[command(flatten)]
    pub format: FormatArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "regress")]
    pub task: Task,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Comma-separated gamma values; defaults to {1, 5}·10^k for k = -6..2 plus 1000.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Select(a) => cmd_select(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Cv(a) => cmd_cv(&a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Serialize)]
struct SynthMeta<'a> {
    command: &'static str,
    seed: u64,
    spec: &'a ToySpec,
    relevant_indices: &'a [usize],
    w_relev: MatrixRepr,
    mixing: MatrixRepr,
    x_file: &'static str,
    y_file: &'static str,
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let fmt = a.format.table_format()?;
    let spec = ToySpec {
        n_relev: a.n_relev,
        n_redund: a.n_redund,
        n_noisy: a.n_noisy,
        m: a.m,
        n_samples: a.n_samples,
        noise_var: a.noise_var,
        seed: a.seed,
    };
    spec.validate()?;
    io::prepare_output_dir(&a.out_dir)?;
    let data = synth::generate_toy(&spec)?;
    io::write_variables(&a.out_dir.join("x.csv"), data.x.view(), "x", fmt)?;
    io::write_variables(&a.out_dir.join("y.csv"), data.y.view(), "y", fmt)?;
    let meta = SynthMeta {
        command: "synth",
        seed: a.seed,
        spec: &spec,
        relevant_indices: &data.relevant_indices,
        w_relev: MatrixRepr::from(&data.w_relev),
        mixing: MatrixRepr::from(&data.mixing),
        x_file: "x.csv",
        y_file: "y.csv",
    };
    io::write_json(&a.out_dir.join("meta.json"), &meta)?;
    Ok(())
}

struct LoadedData {
    x: Matrix,
    y: Option<Matrix>,
}

fn check_inputs(data: &DataArgs, method: Option<Method>) -> CliResult<()> {
    io::require_file(&data.x)?;
    match (&data.y, method) {
        (Some(y), _) => io::require_file(y)?,
        (None, Some(m)) if m.uses_output() => {
            return Err(CliError::Input(format!("--y is required for method {m:?}")));
        }
        (None, _) => {}
    }
    Ok(())
}

fn load_data(data: &DataArgs, need_y: bool) -> CliResult<LoadedData> {
    let fmt = data.format.table_format()?;
    let x = io::read_variables(&data.x, fmt)?;
    let y = match &data.y {
        Some(p) if need_y => Some(io::read_variables(p, fmt)?),
        _ => None,
    };
    if let Some(y) = &y {
        if y.ncols() != x.ncols() {
            return Err(CliError::Input(format!(
                "x has {} samples but y has {}",
                x.ncols(),
                y.ncols()
            )));
        }
    }
    Ok(LoadedData { x, y })
}

fn output_dim(method: Method, x: &Matrix, y: Option<&Matrix>) -> usize {
    match (method, y) {
        (Method::Pca, _) | (_, None) => x.nrows(),
        (_, Some(y)) => y.nrows(),
    }
}

fn fit_report(model: &MvaModel, x: &Matrix, threshold: f64) -> CliResult<serde_json::Value> {
    let d = &model.diagnostics;
    let features = model.transform(x.view())?;
    let correlation = eval::feature_correlation(features.view())?;
    let (mask, selected_fraction) = selection::sparsity_pattern(model.u.view(), threshold)?;
    let n_selected = mask.rows().into_iter().filter(|r| r.iter().any(|&f| f)).count();
    Ok(json!({
        "command": "fit",
        "seed": model.config.seed,
        "config": model.config,
        "converged": d.converged,
        "stalled": d.stalled,
        "outer_iters": d.outer_iters,
        "inner_iters_total": d.inner_iters_total,
        "eig_or_svd_calls": d.eig_or_svd_calls,
        "objective_trace": d.objective_trace,
        "final_objective": d.final_objective,
        "pruned_rows": d.pruned_rows,
        "warnings": d.warnings,
        "selection": {
            "threshold": threshold,
            "selected_fraction": selected_fraction,
            "n_selected": n_selected,
        },
        "correlation": correlation,
        "timing": { "fit_seconds": d.fit_seconds },
    }))
}

fn cmd_fit(a: &FitArgs) -> CliResult<()> {
    check_inputs(&a.data, Some(a.model.method))?;
    if !(a.threshold >= 0.0) {
        return Err(CliError::Input("threshold must be >= 0".into()));
    }
    io::prepare_output_dir(&a.out_dir)?;
    let data = load_data(&a.data, a.model.method.uses_output())?;
    let m = output_dim(a.model.method, &data.x, data.y.as_ref());
    let config = a.model.config(data.x.nrows(), m);
    let model = mva::fit(&config, data.x.view(), data.y.as_ref().map(|y| y.view()))?;
    io::write_json(&a.out_dir.join("model.json"), &model)?;
    io::write_json(&a.out_dir.join("report.json"), &fit_report(&model, &data.x, a.threshold)?)?;
    Ok(())
}

fn load_model(path: &Path) -> CliResult<MvaModel> {
    let model: MvaModel = io::read_json(path)?;
    let (n, n_f) = model.u.dim();
    if n == 0 || n_f == 0 || model.input_means.len() != n || model.v.ncols() != n_f {
        return Err(CliError::Input(format!("{}: inconsistent model dimensions", path.display())));
    }
    Ok(model)
}

fn cmd_select(a: &SelectArgs) -> CliResult<()> {
    io::require_file(&a.model)?;
    if !(a.threshold >= 0.0) {
        return Err(CliError::Input("threshold must be >= 0".into()));
    }
    io::prepare_output_dir(&a.out_dir)?;
    let model = load_model(&a.model)?;
    let report = VariableReport::from_projection(model.u.view(), a.threshold)?;
    let selected = match a.n_s {
        Some(n_s) => selection::select_top(ndarray::ArrayView1::from(&report.importance), n_s)?,
        None => report.selected(),
    };
    let out = json!({
        "command": "select",
        "seed": model.config.seed,
        "mode": if a.n_s.is_some() { "top" } else { "threshold" },
        "n_s": a.n_s,
        "selected": selected,
        "report": report,
    });
    io::write_json(&a.out_dir.join("selection.json"), &out)?;
    Ok(())
}

fn read_labels(path: &Path, fmt: TableFormat, column: Option<&str>) -> CliResult<Vec<usize>> {
    let table = io::read_table(path, fmt)?;
    let col = match column {
        Some(key) => table
            .column_index(key)
            .ok_or_else(|| CliError::Input(format!("{}: no label column {key:?}", path.display())))?,
        None if table.rows.ncols() == 1 => 0,
        None => {
            return Err(CliError::Input(format!(
                "{}: several columns; pass --label-column",
                path.display()
            )))
        }
    };
    table
        .rows
        .column(col)
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(CliError::Input(format!("{}: label {v} is not a class index", path.display())))
            }
        })
        .collect()
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    for p in [&a.model, &a.x_train, &a.y_train, &a.x_test, &a.y_test] {
        io::require_file(p)?;
    }
    if !(a.ridge >= 0.0) {
        return Err(CliError::Input("ridge must be >= 0".into()));
    }
    io::prepare_output_dir(&a.out_dir)?;
    let fmt = a.format.table_format()?;
    let model = load_model(&a.model)?;
    let x_train = io::read_variables(&a.x_train, fmt)?;
    let x_test = io::read_variables(&a.x_test, fmt)?;
    let f_train = model.transform(x_train.view())?;
    let f_test = model.transform(x_test.view())?;
    let correlation = eval::feature_correlation(f_test.view())?;
    let score = match a.task {
        Task::Regress => {
            let y_train = io::read_variables(&a.y_train, fmt)?;
            let y_test = io::read_variables(&a.y_test, fmt)?;
            let mse = eval::mse_ls(f_train.view(), y_train.view(), f_test.view(), y_test.view(), a.ridge)?;
            json!({ "mse": mse })
        }
        Task::Classify => {
            let l_train = read_labels(&a.y_train, fmt, a.label_column.as_deref())?;
            let l_test = read_labels(&a.y_test, fmt, a.label_column.as_deref())?;
            let r = eval::classify_lsq(f_train.view(), &l_train, f_test.view(), &l_test, a.ridge)?;
            json!({ "accuracy": r.accuracy, "classification": r })
        }
    };
    let out = json!({
        "command": "eval",
        "seed": model.config.seed,
        "task": a.task,
        "ridge": a.ridge,
        "n_train": x_train.ncols(),
        "n_test": x_test.ncols(),
        "score": score,
        "correlation": correlation,
    });
    io::write_json(&a.out_dir.join("eval.json"), &out)?;
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> CliResult<()> {
    check_inputs(&a.data, Some(a.model.method))?;
    io::prepare_output_dir(&a.out_dir)?;
    let data = load_data(&a.data, a.model.method.uses_output())?;
    let m = output_dim(a.model.method, &data.x, data.y.as_ref());
    let base = a.model.config(data.x.nrows(), m);
    let eigen = base.clone().with_w_step(WStep::Eigen);
    let procrustes = base.with_w_step(WStep::Procrustes);
    let report = eval::compare_runs(data.x.view(), data.y.as_ref().map(|y| y.view()), &eigen, &procrustes)?;
    let out = json!({
        "command": "compare",
        "seed": eigen.seed,
        "config": eigen,
        "eigen": report.eigen,
        "procrustes": report.procrustes,
        "timing": {
            "eigen_fit_seconds": report.eigen.fit_seconds,
            "procrustes_fit_seconds": report.procrustes.fit_seconds,
        },
    });
    io::write_json(&a.out_dir.join("compare.json"), &out)?;
    Ok(())
}

fn cmd_cv(a: &CvArgs) -> CliResult<()> {
    let needs_y = a.task == Task::Classify || a.model.method.uses_output();
    check_inputs(&a.data, None)?;
    if needs_y && a.data.y.is_none() {
        return Err(CliError::Input("--y is required for this task and method".into()));
    }
    io::prepare_output_dir(&a.out_dir)?;
    let fmt = a.data.format.table_format()?;
    let x = io::read_variables(&a.data.x, fmt)?;
    let y_path = a.data.y.as_deref();
    let target = match (a.task, y_path) {
        (Task::Classify, Some(p)) => CvTarget::Classification(read_labels(p, fmt, a.label_column.as_deref())?),
        (Task::Regress, Some(p)) => CvTarget::Regression(io::read_variables(p, fmt)?),
        // PCA scored against the inputs themselves
        (Task::Regress, None) => CvTarget::Regression(x.clone()),
        (Task::Classify, None) => unreachable!("checked above"),
    };
    let m = match &target {
        _ if a.model.method == Method::Pca => x.nrows(),
        CvTarget::Regression(y) => y.nrows(),
        CvTarget::Classification(l) => eval::distinct_labels(l).len(),
    };
    let template = a.model.config(x.nrows(), m);
    let grid = a.grid.clone().unwrap_or_else(eval::default_gamma_grid);
    let start = Instant::now();
    let result = eval::cross_validate(&template, x.view(), &target, &grid, a.k, a.model.seed)?;
    let seconds = start.elapsed().as_secs_f64();
    let out = json!({
        "command": "cv",
        "seed": a.model.seed,
        "task": a.task,
        "n_samples": x.len_of(Axis(1)),
        "config": template,
        "result": result,
        "timing": { "cv_seconds": seconds },
    });
    io::write_json(&a.out_dir.join("cv.json"), &out)?;
    Ok(())
}
