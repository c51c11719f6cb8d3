//! `qoc run | sweep | audit`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::accuracy::{audit_design, AuditReport, BudgetSplit};
use crate::config::{case_streams, Case, ConfigError, DesignId, Engine, EngineKind, RunConfig, SweepAxis};
use crate::error::Error;
use crate::report::{self, BudgetRow, CaseResult, EngineRun, PlotPoint, SweepRow};

#[derive(Debug, Parser)]
#[command(name = "qoc", version, about = "Operating characteristics of clinical trial designs by Q-approximation and Monte Carlo")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate OCs for every scenario of a config.
    Run(CommonArgs),
    /// Repeat a run along the config's sweep axis.
    Sweep(CommonArgs),
    /// Compare Q and MC across scenarios with a random-effects model.
    Audit(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub engine: Option<Engine>,
    /// Replicates for every engine (the Q count in an audit).
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical failure in scenario `{scenario}`: {source}")]
    Numerical { scenario: String, source: Error },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(format!("i/o error: {e}"))
    }
}

fn numerical(scenario: &str) -> impl FnOnce(Error) -> CliError + '_ {
    move |source| CliError::Numerical {
        scenario: scenario.to_string(),
        source,
    }
}

/// What a command produced.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub results: Vec<CaseResult>,
    pub audit: Option<AuditReport>,
}

/// Loads the config and applies command-line overrides.
pub fn load(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(e) = args.engine {
        cfg.engine = e;
    }
    if let Some(r) = args.replicates {
        if r == 0 {
            return Err(ConfigError("`--replicates` must be positive".into()).into());
        }
        cfg.replicates.q = r;
        cfg.replicates.mc = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn with_pool<T: Send>(threads: Option<usize>, body: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    Ok(pool.install(body))
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(out) => {
            for f in &out.files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("qoc: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> Result<Outcome, CliError> {
    match cmd {
        Command::Run(a) => {
            let cfg = load(a)?;
            with_pool(a.threads, || run(&cfg))?
        }
        Command::Sweep(a) => {
            let cfg = load(a)?;
            with_pool(a.threads, || sweep(&cfg))?
        }
        Command::Audit(a) => {
            let cfg = load(a)?;
            with_pool(a.threads, || audit(&cfg, a.replicates))?
        }
    }
}

/// OC estimates must be finite and inside their declared range.
fn check_ranges(case: &Case, run: &EngineRun) -> Result<(), CliError> {
    let n = case.max_sample_size() as f64;
    for e in &run.estimates {
        let hi = if e.name.starts_with("ess") || e.name.starts_with("sdss") { n } else { 1.0 };
        if !(e.estimate.is_finite() && e.estimate >= -1e-9 && e.estimate <= hi + 1e-9) {
            return Err(CliError::Numerical {
                scenario: case.id.clone(),
                source: Error::InvalidInput(format!(
                    "{} engine produced {} = {} outside [0, {hi}]",
                    run.engine.as_str(),
                    e.name,
                    e.estimate
                )),
            });
        }
    }
    Ok(())
}

fn run_case(cfg: &RunConfig, case: &Case, progress: bool) -> Result<CaseResult, CliError> {
    let mut runs = Vec::new();
    for engine in cfg.engine.kinds() {
        let r = cfg.replicates.get(engine);
        let streams = case_streams(cfg.seed, &case.id, engine);
        let start = Instant::now();
        let estimates = case.run(engine, r, &cfg.settings, &streams).map_err(numerical(&case.id))?;
        let wall = estimates.first().map_or_else(|| start.elapsed().as_secs_f64(), |e| e.wall_clock_s);
        let run = EngineRun {
            engine,
            replicates: r,
            wall_clock_s: wall,
            estimates,
        };
        check_ranges(case, &run)?;
        if progress {
            eprintln!("qoc: {} [{}] R={r} in {wall:.3} s", case.id, engine.as_str());
        }
        runs.push(run);
    }
    let exact = case.exact().transpose().map_err(numerical(&case.id))?;
    Ok(CaseResult {
        id: case.id.clone(),
        runs,
        exact,
    })
}

/// Runs every case of `cfg` with its engines, without writing files.
/// `progress` logs each finished engine run to stderr.
pub fn compute(cfg: &RunConfig, progress: bool) -> Result<Vec<CaseResult>, CliError> {
    cfg.cases()?.iter().map(|c| run_case(cfg, c, progress)).collect()
}

/// Runs every case and writes the result files.
pub fn run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let results = compute(cfg, true)?;
    let files = report::write_run(
        &cfg.output.dir,
        cfg.design(),
        cfg.seed,
        cfg.description.as_deref(),
        &results,
    )?;
    Ok(Outcome {
        files,
        results,
        audit: None,
    })
}

fn series(multi: bool, id: &str, engine: &str, oc: &str) -> String {
    if multi {
        format!("{id}:{engine}:{oc}")
    } else {
        format!("{engine}:{oc}")
    }
}

/// Runs the config once per sweep point and writes `sweep.csv` and
/// `plot.csv`.
pub fn sweep(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = cfg
        .sweep
        .clone()
        .ok_or_else(|| ConfigError("field `sweep`: a sweep needs a `sweep` block".into()))?;
    if spec.axis == SweepAxis::Budget {
        return budget_sweep(cfg, &spec.values, spec.repeats);
    }
    let axis = format!("{:?}", spec.axis).to_lowercase();
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut all = Vec::new();
    for &x in &spec.values {
        let point = cfg.with_axis(spec.axis, x)?;
        let cases = point.cases()?;
        let multi = cases.len() > 1;
        for case in &cases {
            let res = run_case(&point, case, true)?;
            for run in &res.runs {
                for e in &run.estimates {
                    rows.push(SweepRow {
                        axis: axis.clone(),
                        x,
                        scenario_id: case.id.clone(),
                        engine: run.engine.as_str().into(),
                        oc: e.name.clone(),
                        estimate: e.estimate,
                        se: e.se,
                        replicates: e.replicates,
                    });
                    points.push(PlotPoint {
                        x,
                        y: e.estimate,
                        series: series(multi, &case.id, run.engine.as_str(), &e.name),
                    });
                }
            }
            for (oc, v) in res.exact.iter().flatten() {
                rows.push(SweepRow {
                    axis: axis.clone(),
                    x,
                    scenario_id: case.id.clone(),
                    engine: "exact".into(),
                    oc: oc.clone(),
                    estimate: *v,
                    se: 0.0,
                    replicates: 0,
                });
                points.push(PlotPoint {
                    x,
                    y: *v,
                    series: series(multi, &case.id, "exact", oc),
                });
            }
            all.push(res);
        }
    }
    let dir = &cfg.output.dir;
    let sweep_path = dir.join("sweep.csv");
    let plot_path = dir.join("plot.csv");
    report::write_rows(&sweep_path, &rows)?;
    report::write_plot(&plot_path, &points)?;
    Ok(Outcome {
        files: vec![sweep_path, plot_path],
        results: all,
        audit: None,
    })
}

const PILOT_Q: usize = 2000;
const PILOT_MC: usize = 20;

/// RMSE against the exact OC for estimates that use as many replicates as
/// fit in each time budget.
fn budget_sweep(cfg: &RunConfig, budgets: &[f64], repeats: usize) -> Result<Outcome, CliError> {
    if budgets.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(ConfigError("field `sweep.values`: budgets must be positive seconds".into()).into());
    }
    let cases = cfg.cases()?;
    let multi = cases.len() > 1;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for case in &cases {
        let exact = match case.exact() {
            Some(e) => e.map_err(numerical(&case.id))?,
            None => {
                return Err(ConfigError(format!(
                    "field `sweep.axis`: budget sweeps need an exact reference, which design `{}` lacks",
                    cfg.design().as_str()
                ))
                .into())
            }
        };
        let (oc, truth) = exact[0].clone();
        for engine in cfg.engine.kinds() {
            let base = case_streams(cfg.seed, &case.id, engine);
            let pilot_r = if engine == EngineKind::Q { PILOT_Q } else { PILOT_MC };
            let pilot = case
                .run(engine, pilot_r, &cfg.settings, &base.derive("pilot"))
                .map_err(numerical(&case.id))?;
            let per_rep = pilot[0].wall_clock_s / pilot_r as f64;
            for (bi, &budget) in budgets.iter().enumerate() {
                let r = if per_rep > 0.0 { (budget / per_rep).floor().min(1e9) as usize } else { 1_000_000 };
                let rmse = if r == 0 {
                    None
                } else {
                    let mut ss = 0.0;
                    for j in 0..repeats {
                        let s = base.derive_index(bi as u64).derive_index(j as u64);
                        let est = case.run(engine, r, &cfg.settings, &s).map_err(numerical(&case.id))?;
                        let e = est.iter().find(|e| e.name == oc).map_or(f64::NAN, |e| e.estimate);
                        ss += (e - truth).powi(2);
                    }
                    Some((ss / repeats as f64).sqrt())
                };
                if let Some(y) = rmse {
                    points.push(PlotPoint {
                        x: budget,
                        y,
                        series: series(multi, &case.id, engine.as_str(), &oc),
                    });
                }
                rows.push(BudgetRow {
                    scenario_id: case.id.clone(),
                    engine: engine.as_str().into(),
                    oc: oc.clone(),
                    budget_s: budget,
                    replicates: r,
                    repeats,
                    rmse,
                    exact: truth,
                });
            }
        }
    }
    let dir = &cfg.output.dir;
    let sweep_path = dir.join("sweep.csv");
    let plot_path = dir.join("plot.csv");
    report::write_rows(&sweep_path, &rows)?;
    report::write_plot(&plot_path, &points)?;
    Ok(Outcome {
        files: vec![sweep_path, plot_path],
        results: Vec::new(),
        audit: None,
    })
}

/// OC audited when the config does not name one.
pub fn default_oc(design: DesignId) -> &'static str {
    match design {
        DesignId::SingleArm => "positive_prob",
        DesignId::TwoArm | DesignId::Multistage | DesignId::ExternalData => "power",
        DesignId::Bar => "ess[arm=0,profile=0]",
    }
}

/// Runs the audit and writes `audit.csv` and `audit_summary.json`.
pub fn audit(cfg: &RunConfig, q_override: Option<usize>) -> Result<Outcome, CliError> {
    if cfg.engine != Engine::Both {
        return Err(ConfigError("field `engine`: an audit needs both engines".into()).into());
    }
    let cases = cfg.cases()?;
    let spec = cfg.audit.clone().unwrap_or(crate::config::AuditSpec {
        oc: None,
        split: None,
        prior: Default::default(),
    });
    let oc = spec.oc.clone().unwrap_or_else(|| default_oc(cfg.design()).to_string());
    let mut split = spec.split.unwrap_or(BudgetSplit::Replicates {
        q: cfg.replicates.q,
        mc: cfg.replicates.mc,
    });
    if let Some(q) = q_override {
        split = match split {
            BudgetSplit::Replicates { mc, .. } => BudgetSplit::Replicates { q, mc },
            BudgetSplit::MatchQTime { .. } => BudgetSplit::MatchQTime { q },
        };
    }
    let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    let mut failed: Option<String> = None;
    let report = audit_design(&ids, &oc, split, &spec.prior, |b, is_q, r| {
        let engine = if is_q { EngineKind::Q } else { EngineKind::Mc };
        let case = &cases[b];
        failed = Some(case.id.clone());
        let streams = case_streams(cfg.seed, &case.id, engine);
        let out = case.run(engine, r, &cfg.settings, &streams);
        if out.is_ok() {
            eprintln!("qoc: audit {} [{}] R={r}", case.id, engine.as_str());
        }
        out
    })
    .map_err(|e| match e {
        Error::InvalidInput(msg) if msg.contains("does not report OC") => CliError::Config(ConfigError(format!(
            "field `audit.oc`: {msg}"
        ))),
        other => CliError::Numerical {
            scenario: failed.clone().unwrap_or_else(|| "<audit>".into()),
            source: other,
        },
    })?;
    let files = report::write_audit(Path::new(&cfg.output.dir), &report)?;
    Ok(Outcome {
        files,
        results: Vec::new(),
        audit: Some(report),
    })
}
