//! Command-line front-end: `gen`, `fit`, `path`, `tree` and `bench`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 solver divergence.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cv::{benchmark, BenchConfig, Method};
use crate::data::{load_csv, write_theta_csv, CsvSchema, Hyperparams, SparsityMode, TaskDataset};
use crate::error::Error;
use crate::path::{cluster_count, compute_path, log_space, Dendrogram, PathFile, PathSpec};
use crate::solver::{fit, SolverConfig, TolMetric};
use crate::synth::{generate, SynthSpec};
use crate::weights::{knn_weights, load_weights, uniform_weights, WeightGraph};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fusemtl", version, about = "Fused multitask sparse regression and task trees")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic grouped-task benchmark instance.
    Gen(GenArgs),
    /// Fit the fused model at one (lambda1, lambda2).
    Fit(FitArgs),
    /// Fit along a lambda2 grid with warm starts.
    Path(PathArgs),
    /// Build the task tree from a path file.
    Tree(TreeArgs),
    /// Run the validation/test comparison benchmark.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// JSON synth spec; omitted fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the seed in --spec.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Schema {
    /// `task_id,y,x1,...,xp`, one row per observation.
    Long,
    /// `y1..yk,x1..xp`, one shared design.
    Multi,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    ElementwiseL1,
    RowGroupL21,
}

impl From<Mode> for SparsityMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::ElementwiseL1 => SparsityMode::ElementwiseL1,
            Mode::RowGroupL21 => SparsityMode::RowGroupL21,
        }
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "long")]
    schema: Schema,
    /// Center and scale every feature over the pooled rows first.
    #[arg(long)]
    standardize: bool,
    /// Edge list `s,t,w` (0-based task indices).
    #[arg(long, conflicts_with_all = ["knn", "phi"])]
    weights: Option<PathBuf>,
    /// k-NN weights on the responses with this many neighbours.
    #[arg(long)]
    knn: Option<usize>,
    /// Weight decay `exp(-phi ||y_s - y_t||^2)` for --knn.
    #[arg(long, requires = "knn")]
    phi: Option<f64>,
    #[arg(long, value_enum, default_value = "elementwise-l1")]
    mode: Mode,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Step scale; scaled to the data when omitted.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// Stop on the relative objective change instead of the iterate change.
    #[arg(long)]
    objective_tol: bool,
}

impl SolverArgs {
    fn config(&self, data: &TaskDataset, w: &WeightGraph) -> SolverConfig {
        let base = SolverConfig {
            gamma: self.gamma.unwrap_or(1.0),
            mu: self.mu,
            max_iter: self.max_iter,
            tol: self.tol,
            tol_metric: if self.objective_tol { TolMetric::ObjectiveChange } else { TolMetric::IterateChange },
        };
        if self.gamma.is_some() {
            base
        } else {
            base.with_scaled_gamma(data, w)
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    lambda1: f64,
    #[arg(long)]
    lambda2: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Parameter matrix, p rows by k task columns.
    #[arg(long)]
    out: PathBuf,
    /// Also write the printed JSON summary here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PathArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    lambda1: f64,
    /// `gmin:gmax:npts`, log-spaced with gmin > 0.
    #[arg(long)]
    grid: String,
    /// Merge tolerance on `||theta_s - theta_t|| / sqrt(p)` used to decide when to stop escalating.
    #[arg(long, default_value_t = 1e-4)]
    merge_tol: f64,
    /// Do not double lambda2 past the grid until all tasks merge.
    #[arg(long)]
    no_escalate: bool,
    /// Store only pairwise distances, not parameter matrices.
    #[arg(long)]
    light: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TreeArgs {
    #[arg(long)]
    path: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    merge_tol: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    newick: Option<PathBuf>,
    /// Newick branch lengths in lambda2 rather than log(lambda2).
    #[arg(long)]
    linear: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Comma-separated subset of ours,single_task,nogroup,pregroup.
    #[arg(long, default_value = "ours,single_task,nogroup,pregroup")]
    methods: String,
    /// Run ours at every kappa in 2..=6.
    #[arg(long)]
    kappa_sweep: bool,
    #[arg(long, default_value_t = 4)]
    kappa: usize,
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
    #[arg(long, default_value_t = 50)]
    lambda2_points: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Report as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full report, including per-repeat results, as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            _ => EXIT_DATA,
        };
        Failure { code, message: e.to_string() }
    }
}

/// Adds the offending flag to an error message.
fn flag<T>(name: &str, r: crate::error::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{name}: {}", f.message);
        f
    })
}

/// Runs the CLI on `args` (including the program name) with the process's
/// standard streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] writing to the given streams.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Failure::usage("--threads must be positive")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => {
                let mut buf = Vec::new();
                let r = pool.install(|| dispatch(cli.command, &mut buf));
                let _ = out.write_all(&buf);
                r
            }
            Err(e) => Err(Failure::usage(format!("--threads: {e}"))),
        },
        None => dispatch(cli.command, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Fit(a) => cmd_fit(a, out),
        Command::Path(a) => cmd_path(a, out),
        Command::Tree(a) => cmd_tree(a, out),
        Command::Bench(a) => cmd_bench(a, out),
    }
}

fn write_file(name: &str, path: &Path, contents: &str) -> Result<(), Failure> {
    flag(name, fs::write(path, contents).map_err(|e| Error::io(path, e)))
}

fn read_json<T: serde::de::DeserializeOwned>(name: &str, path: &Path) -> Result<T, Failure> {
    let text = flag(name, fs::read_to_string(path).map_err(|e| Error::io(path, e)))?;
    serde_json::from_str(&text).map_err(|e| Failure { code: EXIT_DATA, message: format!("{name}: {}: {e}", path.display()) })
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::from(Error::from(e)))
}

fn print(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes()).map_err(|e| Failure { code: EXIT_DATA, message: format!("stdout: {e}") })
}

fn cmd_gen(a: GenArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => read_json("--spec", p)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let inst = flag("--spec", generate(&spec))?;
    flag("--out", inst.write(&spec, &a.out))?;
    print(
        out,
        &format!(
            "wrote {} tasks x {} features to {} (train.csv, val.csv, test.csv, truth.json)\n",
            spec.k(),
            spec.p,
            a.out.display()
        ),
    )
}

fn load_problem(a: &DataArgs) -> Result<(TaskDataset, WeightGraph), Failure> {
    let schema = match a.schema {
        Schema::Long => CsvSchema::LongFormat,
        Schema::Multi => CsvSchema::MultiResponse,
    };
    let mut data = flag("--data", load_csv(&a.data, schema))?;
    if a.standardize {
        data = data.standardized();
    }
    let w = match (&a.weights, a.knn) {
        (Some(path), _) => flag("--weights", load_weights(path, data.k()))?,
        (None, Some(kappa)) => flag("--knn", knn_weights(&data, kappa, a.phi.unwrap_or(0.0)))?,
        (None, None) => uniform_weights(data.k()),
    };
    Ok((data, w))
}

#[derive(Debug, Serialize)]
struct FitSummary {
    objective: f64,
    iterations: usize,
    converged: bool,
    lambda1: f64,
    lambda2: f64,
    sparsity_mode: SparsityMode,
    tasks: usize,
    features: usize,
    edges: usize,
    gamma: f64,
    theta: PathBuf,
}

fn cmd_fit(a: FitArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (data, w) = load_problem(&a.data)?;
    let hp = flag("--lambda1/--lambda2", Hyperparams::with_mode(a.lambda1, a.lambda2, a.data.mode.into()))?;
    let cfg = a.solver.config(&data, &w);
    let res = fit(&data, &hp, &w, &cfg, None)?;
    flag("--out", write_theta_csv(&res.theta, &data.ids(), &a.out))?;
    let summary = FitSummary {
        objective: res.objective,
        iterations: res.iterations,
        converged: res.converged,
        lambda1: hp.lambda1,
        lambda2: hp.lambda2,
        sparsity_mode: hp.sparsity_mode,
        tasks: data.k(),
        features: data.p(),
        edges: w.len(),
        gamma: cfg.gamma,
        theta: a.out.clone(),
    };
    let json = to_json(&summary)? + "\n";
    if let Some(path) = &a.summary {
        write_file("--summary", path, &json)?;
    }
    print(out, &json)
}

fn parse_grid(text: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::usage(format!("--grid: expected gmin:gmax:npts with 0 < gmin <= gmax, got {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else { return Err(bad()) };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || n == 0 || (n > 1 && hi == lo) {
        return Err(bad());
    }
    Ok(log_space(lo, hi, n))
}

fn cmd_path(a: PathArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let grid = parse_grid(&a.grid)?;
    let (data, w) = load_problem(&a.data)?;
    let spec = PathSpec {
        merge_tol: a.merge_tol,
        escalate: !a.no_escalate,
        sparsity_mode: a.data.mode.into(),
        ..PathSpec::new(grid, a.lambda1)
    };
    let cfg = a.solver.config(&data, &w);
    let path = compute_path(&data, &w, &spec, &cfg)?;
    let file = PathFile::new(&path, data.ids(), a.lambda1, a.light)?;
    write_file("--out", &a.out, &(to_json(&file)? + "\n"))?;
    let last = path.last().expect("grid is nonempty");
    let unconverged = path.iter().filter(|p| !p.fit.converged).count();
    print(
        out,
        &format!(
            "{} points, lambda2 up to {}, {} cluster(s) at the last point, {} point(s) hit max_iter\n",
            path.len(),
            last.lambda2,
            cluster_count(&last.fit.theta, a.merge_tol),
            unconverged
        ),
    )
}

fn cmd_tree(a: TreeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if !(a.merge_tol > 0.0) {
        return Err(Failure::usage("--merge-tol must be positive"));
    }
    let file: PathFile = read_json("--path", &a.path)?;
    let tree: Dendrogram = flag("--path", file.tree(a.merge_tol))?;
    write_file("--out", &a.out, &(to_json(&tree)? + "\n"))?;
    if let Some(nwk) = &a.newick {
        let smallest = file.points.iter().map(|p| p.lambda2).filter(|l| *l > 0.0).fold(f64::INFINITY, f64::min);
        let text = if a.linear || !smallest.is_finite() { tree.to_newick_linear() } else { tree.to_newick(smallest) };
        write_file("--newick", nwk, &(text + "\n"))?;
    }
    print(out, &format!("{} leaves, {} merges{}\n", tree.k(), tree.merges.len(), if tree.is_complete() { "" } else { " (incomplete)" }))
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let spec: SynthSpec = match &a.spec {
        Some(p) => read_json("--spec", p)?,
        None => SynthSpec::default(),
    };
    let methods = a
        .methods
        .split(',')
        .filter(|m| !m.trim().is_empty())
        .map(|m| m.parse::<Method>().map_err(|e| Failure::usage(format!("--methods: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = BenchConfig {
        repeats: a.repeats,
        methods,
        kappa: a.kappa,
        phi: a.phi,
        kappa_sweep: a.kappa_sweep,
        lambda2_points: a.lambda2_points,
        solver: SolverConfig { tol: a.tol, ..SolverConfig::default() },
        scale_gamma: true,
    };
    let report = benchmark(&spec, &cfg)?;
    if let Some(path) = &a.out {
        write_file("--out", path, &report.to_csv())?;
    }
    if let Some(path) = &a.json {
        write_file("--json", path, &(to_json(&report)? + "\n"))?;
    }
    print(out, &report.to_table())
}
