//! The `lqbridge` command: read a JSON scenario, run one task, write CSV
//! artifacts plus a run manifest into the output directory.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{DensitySpec, Grid};
use crate::error::{Error, Result};
use crate::io;
use crate::kernel::{squared_distance, KernelConfig, KernelEvaluator};
use crate::linalg::{self, Vector};
use crate::ltv_system::{check_assumptions, LtvSystem, StepPolicy, SystemSpec};
use crate::oracle::{validation_suite, write_report, BvpSolver, ValidationOptions};
use crate::sinkhorn::{sinkhorn_solve, BridgeSolution, KernelFamily, SinkhornOptions};

#[derive(Debug, Parser)]
#[command(name = "lqbridge", version, about = "Kernels, distances and bridges for LTV diffusions with quadratic killing")]
pub struct Args {
    /// Scenario file (JSON).
    #[arg(long, env = "LQBRIDGE_CONFIG")]
    pub config: PathBuf,
    /// Output directory; overrides `out` in the scenario.
    #[arg(long, env = "LQBRIDGE_OUT")]
    pub out: Option<PathBuf>,
    /// Overrides `seed` in the scenario.
    #[arg(long, env = "LQBRIDGE_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for the parallel sections; defaults to all cores.
    #[arg(long, env = "LQBRIDGE_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Check,
    KernelSlice,
    Distance,
    Bridge,
    Validate,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Check => "check",
            Task::KernelSlice => "kernel-slice",
            Task::Distance => "distance",
            Task::Bridge => "bridge",
            Task::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Inline system; exactly one of `system` and `system_file` is set.
    #[serde(default)]
    pub system: Option<SystemSpec>,
    /// Path to a system JSON, relative to the scenario file.
    #[serde(default)]
    pub system_file: Option<String>,
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub check: Option<CheckParams>,
    #[serde(default)]
    pub kernel_slice: Option<KernelSliceParams>,
    #[serde(default)]
    pub distance: Option<DistanceParams>,
    #[serde(default)]
    pub bridge: Option<BridgeParams>,
    #[serde(default)]
    pub validate: Option<ValidateParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckParams {
    #[serde(default = "default_check_tolerance")]
    pub tolerance: f64,
}

fn default_check_tolerance() -> f64 {
    1e-10
}

impl Default for CheckParams {
    fn default() -> Self {
        Self { tolerance: default_check_tolerance() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSliceParams {
    pub t0: f64,
    pub t: f64,
    /// Initial point; the slice runs over the terminal argument.
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceParams {
    pub t0: f64,
    pub t: f64,
    #[serde(default)]
    pub pairs: Vec<PointPair>,
    /// Extra pairs drawn uniformly from `[-scale, scale]ⁿ` with the run seed.
    #[serde(default)]
    pub random_pairs: usize,
    #[serde(default = "default_random_scale")]
    pub random_scale: f64,
    /// Adds a transcription cost column when set.
    #[serde(default)]
    pub bvp_grid_n: Option<usize>,
}

fn default_random_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeParams {
    pub rho0: DensitySpec,
    pub rho1: DensitySpec,
    #[serde(default = "default_bridge_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub points: Option<usize>,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_slices")]
    pub slices: usize,
}

fn default_bridge_tol() -> f64 {
    1e-9
}
fn default_max_iter() -> usize {
    500
}
fn default_width() -> f64 {
    6.0
}
fn default_slices() -> usize {
    11
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateParams {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default = "default_fk_paths")]
    pub fk_paths: u64,
    #[serde(default = "default_fk_dt")]
    pub fk_dt: f64,
}

fn default_samples() -> usize {
    ValidationOptions::default().samples
}
fn default_grid_n() -> usize {
    ValidationOptions::default().grid_n
}
fn default_fk_paths() -> u64 {
    ValidationOptions::default().fk_paths
}
fn default_fk_dt() -> f64 {
    ValidationOptions::default().fk_dt
}

impl Default for ValidateParams {
    fn default() -> Self {
        Self { samples: default_samples(), grid_n: default_grid_n(), fk_paths: default_fk_paths(), fk_dt: default_fk_dt() }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("`{name}` must be positive, got {v}")))
    }
}

fn missing(section: &str, task: Task) -> Error {
    Error::Config(format!("missing field `{section}` required by task `{}`", task.name()))
}

impl ScenarioConfig {
    /// Parse errors carry serde's line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Task sections present, tolerances positive, referenced files exist.
    /// `base` is the directory relative paths are resolved against.
    pub fn validate(&self, base: &Path) -> Result<()> {
        match (&self.system, &self.system_file) {
            (Some(_), Some(_)) => return Err(Error::Config("set only one of `system` and `system_file`".into())),
            (None, None) => return Err(Error::Config("missing field `system` (or `system_file`)".into())),
            (None, Some(f)) if !base.join(f).exists() => {
                return Err(Error::Config(format!("system file {} does not exist", base.join(f).display())))
            }
            _ => {}
        }
        match self.task {
            Task::Check => positive("check.tolerance", self.check.clone().unwrap_or_default().tolerance)?,
            Task::KernelSlice => {
                let p = self.kernel_slice.as_ref().ok_or_else(|| missing("kernel_slice", self.task))?;
                if !(p.t > p.t0) {
                    return Err(Error::Config("`kernel_slice.t` must exceed `kernel_slice.t0`".into()));
                }
            }
            Task::Distance => {
                let p = self.distance.as_ref().ok_or_else(|| missing("distance", self.task))?;
                if !(p.t > p.t0) {
                    return Err(Error::Config("`distance.t` must exceed `distance.t0`".into()));
                }
                if p.pairs.is_empty() && p.random_pairs == 0 {
                    return Err(Error::Config("`distance` needs `pairs` or `random_pairs`".into()));
                }
                positive("distance.random_scale", p.random_scale)?;
            }
            Task::Bridge => {
                let p = self.bridge.as_ref().ok_or_else(|| missing("bridge", self.task))?;
                positive("bridge.tol", p.tol)?;
                positive("bridge.width", p.width)?;
                if p.slices < 2 {
                    return Err(Error::Config("`bridge.slices` must be at least 2".into()));
                }
                for (name, spec) in [("rho0", &p.rho0), ("rho1", &p.rho1)] {
                    if let DensitySpec::Grid { file } = spec {
                        if !base.join(file).exists() {
                            return Err(Error::Config(format!("bridge.{name}: file {} does not exist", base.join(file).display())));
                        }
                    }
                }
            }
            Task::Validate => {
                let p = self.validate.clone().unwrap_or_default();
                positive("validate.fk_dt", p.fk_dt)?;
            }
        }
        Ok(())
    }

    pub fn build_system(&self, base: &Path) -> Result<LtvSystem> {
        match (&self.system, &self.system_file) {
            (Some(spec), None) => spec.build(),
            (None, Some(f)) => {
                let path = base.join(f);
                let text = std::fs::read_to_string(&path)?;
                let spec: SystemSpec =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                spec.build()
            }
            _ => Err(Error::Config("exactly one of `system` and `system_file` must be set".into())),
        }
    }
}

/// What a task produced, for the summary table and the exit status.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub passed: bool,
    pub summary: Vec<(String, String)>,
    /// Relative to the output directory.
    pub artifacts: Vec<String>,
}

impl RunOutcome {
    fn row(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    pub fn table(&self) -> String {
        let width = self.summary.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut s = String::new();
        for (k, v) in &self.summary {
            let _ = writeln!(s, "{k:<width$}  {v}");
        }
        s
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    task: &'a str,
    config_sha256: String,
    seed: u64,
    passed: bool,
    artifacts: &'a [String],
    wall_time_seconds: f64,
}

fn coordinate_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Executes `config` and writes artifacts under `out`.
pub fn run(config: &ScenarioConfig, base: &Path, out: &Path) -> Result<RunOutcome> {
    config.validate(base)?;
    let sys = config.build_system(base)?;
    std::fs::create_dir_all(out)?;
    let mut outcome = RunOutcome { passed: true, ..Default::default() };
    outcome.row("task", config.task.name());
    outcome.row("system", format!("{} (n = {}, m = {})", sys.label(), sys.n(), sys.m()));
    match config.task {
        Task::Check => run_check(&sys, &config.check.clone().unwrap_or_default(), out, &mut outcome)?,
        Task::KernelSlice => run_kernel_slice(&sys, config.kernel_slice.as_ref().unwrap(), out, &mut outcome)?,
        Task::Distance => run_distance(&sys, config.distance.as_ref().unwrap(), config.seed, out, &mut outcome)?,
        Task::Bridge => run_bridge(&sys, config.bridge.as_ref().unwrap(), base, out, &mut outcome)?,
        Task::Validate => {
            run_validate(&sys, &config.validate.clone().unwrap_or_default(), config.seed, out, &mut outcome)?
        }
    }
    Ok(outcome)
}

fn run_check(sys: &LtvSystem, p: &CheckParams, out: &Path, outcome: &mut RunOutcome) -> Result<()> {
    let report = check_assumptions(sys, p.tolerance, StepPolicy::default())?;
    std::fs::write(out.join("assumptions.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    outcome.artifacts.push("assumptions.json".into());
    outcome.row("controllable", report.controllable);
    outcome.row("gramian eigenvalues", format!("[{:e}, {:e}]", report.gramian_min_eigenvalue, report.gramian_max_eigenvalue));
    outcome.row("killing psd", report.killing_psd);
    outcome.row(
        "killing pd at",
        report.killing_positive_definite_at.map_or_else(|| "never".to_string(), |t| t.to_string()),
    );
    outcome.passed = report.passed();
    Ok(())
}

#[derive(Serialize)]
struct SliceSidecar<'a> {
    t0: f64,
    t: f64,
    x: &'a [f64],
    grid: &'a Grid,
    case: String,
    method: String,
    normalizer: f64,
    log_normalizer: f64,
    m11: Vec<Vec<f64>>,
    m12: Vec<Vec<f64>>,
    m22: Vec<Vec<f64>>,
}

fn run_kernel_slice(sys: &LtvSystem, p: &KernelSliceParams, out: &Path, outcome: &mut RunOutcome) -> Result<()> {
    let n = sys.n();
    if p.x.len() != n {
        return Err(Error::Dimension(format!("kernel_slice.x has length {}, expected {n}", p.x.len())));
    }
    let grid = Grid::new(p.lower.clone(), p.upper.clone(), p.points.clone())?;
    if grid.n() != n {
        return Err(Error::Dimension(format!("kernel_slice grid has dimension {}, expected {n}", grid.n())));
    }
    let k = KernelEvaluator::new(sys, p.t0, p.t, &KernelConfig::default())?;
    let x = Vector::from_column_slice(&p.x);
    let rows: Vec<Vec<f64>> = grid
        .nodes()
        .iter()
        .map(|y| {
            let log_k = k.log_eval(&x, y);
            let mut row: Vec<f64> = y.iter().copied().collect();
            row.extend([log_k.exp(), log_k]);
            row
        })
        .collect();
    let mut header = coordinate_names("y", n);
    header.extend(["kernel".to_string(), "log_kernel".to_string()]);
    io::write_csv(&out.join("kernel_slice.csv"), &header, &rows)?;
    let form = k.form();
    let sidecar = SliceSidecar {
        t0: p.t0,
        t: p.t,
        x: &p.x,
        grid: &grid,
        case: format!("{:?}", k.case_tag()),
        method: format!("{:?}", k.method()),
        normalizer: k.normalizer(),
        log_normalizer: k.log_normalizer(),
        m11: linalg::to_rows(&form.m11),
        m12: linalg::to_rows(&form.m12),
        m22: linalg::to_rows(&form.m22),
    };
    std::fs::write(out.join("kernel_slice.json"), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    outcome.artifacts.extend(["kernel_slice.csv".into(), "kernel_slice.json".into()]);
    outcome.row("nodes", grid.len());
    outcome.row("normalizer", format!("{:e}", k.normalizer()));
    outcome.row("max kernel", format!("{:e}", rows.iter().map(|r| r[n]).fold(0.0, f64::max)));
    Ok(())
}

fn run_distance(sys: &LtvSystem, p: &DistanceParams, seed: u64, out: &Path, outcome: &mut RunOutcome) -> Result<()> {
    let n = sys.n();
    let mut pairs: Vec<(Vector, Vector)> = Vec::new();
    for (i, pair) in p.pairs.iter().enumerate() {
        if pair.x.len() != n || pair.y.len() != n {
            return Err(Error::Dimension(format!("distance.pairs[{i}] must have points of length {n}")));
        }
        pairs.push((Vector::from_column_slice(&pair.x), Vector::from_column_slice(&pair.y)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = p.random_scale;
    for _ in 0..p.random_pairs {
        let x = Vector::from_iterator(n, (0..n).map(|_| rng.random_range(-s..s)));
        let y = Vector::from_iterator(n, (0..n).map(|_| rng.random_range(-s..s)));
        pairs.push((x, y));
    }
    let cl = crate::riccati::closed_loop(sys, p.t0, p.t, StepPolicy::default())?;
    let form = crate::kernel::distance_form(&cl)?;
    let solver = p.bvp_grid_n.map(|g| BvpSolver::new(sys, p.t0, p.t, g)).transpose()?;
    let mut header = coordinate_names("x", n);
    header.extend(coordinate_names("y", n));
    header.push("half_squared_distance".into());
    if solver.is_some() {
        header.extend(["bvp_cost".into(), "relative_difference".into()]);
    }
    let mut worst: f64 = 0.0;
    let mut rows = Vec::with_capacity(pairs.len());
    for (x, y) in &pairs {
        let d = squared_distance(&form, x, y)?;
        let mut row: Vec<f64> = x.iter().chain(y.iter()).copied().collect();
        row.push(d);
        if let Some(solver) = &solver {
            let cost = solver.solve(x, y)?.cost;
            let rel = (cost - d).abs() / d.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            row.extend([cost, rel]);
        }
        rows.push(row);
    }
    io::write_csv(&out.join("distance.csv"), &header, &rows)?;
    outcome.artifacts.push("distance.csv".into());
    outcome.row("pairs", pairs.len());
    if solver.is_some() {
        outcome.row("max relative difference vs transcription", format!("{worst:e}"));
    }
    Ok(())
}

#[derive(Serialize)]
struct BridgeSummary<'a> {
    iterations: usize,
    converged: bool,
    residual0: f64,
    residual1: f64,
    final_hilbert_gap: Option<f64>,
    grid: &'a Grid,
    times: &'a [f64],
    warnings: &'a [String],
}

fn run_bridge(sys: &LtvSystem, p: &BridgeParams, base: &Path, out: &Path, outcome: &mut RunOutcome) -> Result<()> {
    let rho0 = p.rho0.build(base)?;
    let rho1 = p.rho1.build(base)?;
    let (t0, t1) = sys.horizon();
    let family = KernelFamily::new(sys.clone(), KernelConfig::default());
    let k = family.kernel(t0, t1)?;
    let options = SinkhornOptions { tol: p.tol, max_iter: p.max_iter, points: p.points, width: p.width, ..Default::default() };
    let state = sinkhorn_solve(&k, &rho0, &rho1, &options)?;

    let trace: Vec<Vec<String>> = state
        .trace
        .iter()
        .map(|r| {
            let mut row = vec![r.iteration.to_string()];
            row.extend([r.hilbert_gap, r.residual0, r.residual1].map(io::format_value));
            row
        })
        .collect();
    io::write_records(&out.join("convergence.csv"), &["iteration", "hilbert_gap", "residual0", "residual1"], &trace)?;
    outcome.artifacts.push("convergence.csv".into());

    let times = BridgeSolution::uniform_times(t0, t1, p.slices);
    let bridge = BridgeSolution::build(&family, &state, &times)?;
    let (n, m) = (sys.n(), sys.m());
    let nodes = bridge.grid.nodes();
    let digits = (p.slices - 1).to_string().len().max(2);
    for i in 0..bridge.times.len() {
        let mut header = coordinate_names("x", n);
        header.extend(["density".into(), "log_potential".into()]);
        let rho = bridge.marginals[i].values();
        let rows: Vec<Vec<f64>> = nodes
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let mut row: Vec<f64> = x.iter().copied().collect();
                row.extend([rho[j], bridge.log_potentials[i].log_values[j]]);
                row
            })
            .collect();
        let name = format!("marginal_{i:0digits$}.csv");
        io::write_csv(&out.join(&name), &header, &rows)?;
        outcome.artifacts.push(name);

        let mut header = coordinate_names("x", n);
        header.extend(coordinate_names("u", m));
        let rows: Vec<Vec<f64>> = nodes
            .iter()
            .zip(&bridge.controls[i])
            .map(|(x, u)| x.iter().chain(u.iter()).copied().collect())
            .collect();
        let name = format!("control_{i:0digits$}.csv");
        io::write_csv(&out.join(&name), &header, &rows)?;
        outcome.artifacts.push(name);
    }

    let summary = BridgeSummary {
        iterations: state.iterations,
        converged: state.converged,
        residual0: state.marginal_residuals.0,
        residual1: state.marginal_residuals.1,
        final_hilbert_gap: state.hilbert_gaps.last().copied(),
        grid: &state.grid,
        times: &times,
        warnings: &state.warnings,
    };
    std::fs::write(out.join("bridge.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    outcome.artifacts.push("bridge.json".into());

    outcome.row("grid nodes", state.grid.len());
    outcome.row("iterations", state.iterations);
    outcome.row("converged", state.converged);
    outcome.row("marginal residuals", format!("{:e}, {:e}", state.marginal_residuals.0, state.marginal_residuals.1));
    for w in &state.warnings {
        outcome.row("warning", w);
    }
    outcome.passed = state.converged;
    Ok(())
}

fn run_validate(sys: &LtvSystem, p: &ValidateParams, seed: u64, out: &Path, outcome: &mut RunOutcome) -> Result<()> {
    let options = ValidationOptions { seed, samples: p.samples, grid_n: p.grid_n, fk_paths: p.fk_paths, fk_dt: p.fk_dt };
    let records = validation_suite(sys, &options);
    write_report(&out.join("validation_report.csv"), &records)?;
    outcome.artifacts.push("validation_report.csv".into());
    for r in &records {
        outcome.row(&r.check, format!("{}  observed {:e}  tolerance {:e}", r.verdict(), r.observed, r.tolerance));
    }
    outcome.passed = records.iter().all(|r| r.passed);
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses `args`, runs the scenario and maps the result to an exit status:
/// 0 on success, 1 when a check fails or the run errors, 2 on bad configuration.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let started = Instant::now();
    let text = match std::fs::read(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut config = match std::str::from_utf8(&text).map_err(|e| Error::Config(e.to_string())).and_then(ScenarioConfig::from_json) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = match (&args.out, &config.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => {
            eprintln!("error: no output directory (pass --out or set `out`)");
            return ExitCode::from(2);
        }
    };
    if let Some(threads) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("warning: thread pool already initialized: {e}");
        }
    }

    let outcome = match run(&config, &base, &out) {
        Ok(o) => o,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        task: config.task.name(),
        config_sha256: sha256_hex(&text),
        seed: config.seed,
        passed: outcome.passed,
        artifacts: &outcome.artifacts,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(Error::from)
        .and_then(|s| std::fs::write(out.join("manifest.json"), s + "\n").map_err(Error::from));
    if let Err(e) = written {
        eprintln!("error: writing manifest: {e}");
        return ExitCode::from(1);
    }
    print!("{}", outcome.table());
    println!("artifacts in {}", out.display());
    if outcome.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
