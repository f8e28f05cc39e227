//! Command-line front end. Each command reads the JSON configuration,
//! applies flag overrides, runs, and writes CSV/JSON artifacts into the
//! output directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    lifetime, optimal_force, scan_2d, scan_tau, slope_analysis, write_force_csv,
    write_lifetime_csv, write_scan_csv, write_slope_csv, HistorySeed, ScanRow,
};
use crate::config::{Grid, MethodChoice, RunConfig};
use crate::error::{Error, Result};
use crate::ffs::{action_rate_estimate, action_rate_result, direct_rate, ffs_rate, prefactor, Direction, RateResult};
use crate::mam::{bisect_threshold, default_intervals, solve_branches, DtpResult};
use crate::model::{invalid, rightmost_char_root, ModelParams, A, B};
use crate::path::{delay_steps, fmt17, Path};

#[derive(Debug, Parser)]
#[command(
    name = "delay-dtp",
    version,
    about = "Dominant transition pathways and rates of the delayed Maier-Stein system"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub epsilon: Option<f64>,
    /// Observation time.
    #[arg(long = "T", global = true, allow_hyphen_values = true)]
    pub horizon: Option<f64>,
    /// Mesh intervals.
    #[arg(long = "N", global = true)]
    pub intervals: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Relax the dominant pathways at one parameter point.
    Solve,
    /// Scan the delay (and optionally beta) and locate the threshold.
    Scan {
        /// `start:stop:step` or a comma-separated list.
        #[arg(long)]
        tau_grid: Option<String>,
        /// Comma-separated; two or more values produce a diagram.
        #[arg(long)]
        beta_grid: Option<String>,
    },
    /// Lifetimes and optimal forces along a stored pathway.
    Diagnose {
        /// Path CSV with header `t,u,v`.
        #[arg(long)]
        path: Option<PathBuf>,
        /// Seed each node with a constant history instead of the path segment.
        #[arg(long)]
        constant_history: bool,
    },
    /// Transition rate by forward flux sampling, direct simulation or the
    /// action estimate.
    Rate {
        #[arg(long)]
        method: Option<MethodChoice>,
        /// Also report the prefactor against the action estimate.
        #[arg(long)]
        prefactor: bool,
        /// Sidecar JSON of a previous solve providing the action.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        n_transitions: Option<usize>,
    },
    /// Rightmost characteristic roots at the two minima over a delay grid.
    Stability {
        #[arg(long)]
        tau_grid: Option<String>,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_json_str(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(v) = common.tau {
        cfg.tau = v;
    }
    if let Some(v) = common.beta {
        cfg.beta = v;
    }
    if let Some(v) = common.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = common.horizon {
        cfg.horizon = v;
    }
    if common.intervals.is_some() {
        cfg.intervals = common.intervals;
    }
    if let Some(v) = &common.out_dir {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if common.jobs.is_some() {
        cfg.jobs = common.jobs;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<i32> {
    let mut cfg = load_config(&cli.common)?;
    match &cli.command {
        Command::Solve | Command::Stability { .. } => {}
        Command::Scan { tau_grid, beta_grid } => {
            if let Some(g) = tau_grid {
                cfg.scan.tau_grid = Grid::parse(g)?;
            }
            if let Some(g) = beta_grid {
                cfg.scan.beta_grid = Grid::parse(g)?.values()?;
            }
        }
        Command::Diagnose { path, constant_history } => {
            if path.is_some() {
                cfg.diagnose.path = path.clone();
            }
            if *constant_history {
                cfg.diagnose.history = HistorySeed::Constant;
            }
        }
        Command::Rate { method, prefactor, sidecar, trials, n_transitions } => {
            if let Some(m) = method {
                cfg.rate.method = *m;
            }
            cfg.rate.prefactor |= *prefactor;
            if sidecar.is_some() {
                cfg.rate.sidecar = sidecar.clone();
            }
            if let Some(t) = trials {
                cfg.rate.trials_per_interface = *t;
            }
            if let Some(n) = n_transitions {
                cfg.rate.n_transitions = *n;
            }
        }
    }
    if let Command::Stability { tau_grid: Some(g) } = &cli.command {
        cfg.stability.tau_grid = Grid::parse(g)?;
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| invalid("jobs", e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Solve => cmd_solve(&cfg),
        Command::Scan { .. } => cmd_scan(&cfg),
        Command::Diagnose { .. } => cmd_diagnose(&cfg),
        Command::Rate { .. } => cmd_rate(&cfg),
        Command::Stability { .. } => cmd_stability(&cfg),
    })
}

fn create(dir: &FsPath, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &FsPath, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// JSON written next to each pathway CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub action: f64,
    pub branch: String,
    /// Number of distinct minimisers found in the same solve.
    pub branches: usize,
    pub converged: bool,
    pub iterations: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub grad_inf_norm: f64,
    pub transverse_eigenvalue: Option<f64>,
    pub tau: f64,
    pub beta: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub intervals: usize,
    pub config: RunConfig,
}

fn intervals_for(cfg: &RunConfig) -> Result<usize> {
    match cfg.intervals {
        Some(n) => {
            delay_steps(cfg.tau, cfg.horizon / n as f64)?;
            Ok(n)
        }
        None => default_intervals(cfg.horizon, cfg.tau),
    }
}

fn solve(cfg: &RunConfig) -> Result<(Vec<DtpResult>, usize)> {
    let params = cfg.params()?;
    let n = intervals_for(cfg)?;
    Ok((solve_branches(&params, cfg.horizon, n, &cfg.relax)?, n))
}

fn cmd_solve(cfg: &RunConfig) -> Result<i32> {
    let (results, n) = solve(cfg)?;
    for r in &results {
        let stem = format!("dtp_{}", r.branch.as_str());
        let mut w = create(&cfg.out_dir, &format!("{stem}.csv"))?;
        r.path.write_csv(&mut w)?;
        w.flush()?;
        let side = Sidecar {
            action: r.action,
            branch: r.branch.as_str().to_string(),
            branches: results.len(),
            converged: r.converged,
            iterations: r.iterations,
            l: r.l,
            grad_inf_norm: r.grad_inf_norm,
            transverse_eigenvalue: r.transverse_eigenvalue,
            tau: cfg.tau,
            beta: cfg.beta,
            horizon: cfg.horizon,
            intervals: n,
            config: cfg.clone(),
        };
        write_json(&cfg.out_dir, &format!("{stem}.json"), &side)?;
    }
    let l = results.iter().map(|r| r.l).fold(0.0, f64::max);
    println!(
        "tau={} beta={} branches={} action={} L={}",
        cfg.tau,
        cfg.beta,
        results.len(),
        fmt17(results[0].action),
        fmt17(l)
    );
    Ok(if results.iter().all(|r| r.converged) { 0 } else { 1 })
}

#[derive(Debug, Serialize)]
struct ScanSummary<'a> {
    tau_c: Option<f64>,
    bracket: Option<(f64, f64)>,
    rows: usize,
    converged_fraction: f64,
    slope_written: bool,
    config: &'a RunConfig,
}

fn converged_fraction(rows: &[ScanRow]) -> f64 {
    rows.iter().filter(|r| r.converged).count() as f64 / rows.len().max(1) as f64
}

fn cmd_scan(cfg: &RunConfig) -> Result<i32> {
    let template = cfg.params()?;
    let taus = cfg.scan.tau_grid.values()?;
    if cfg.scan.beta_grid.len() > 1 {
        let cells = scan_2d(&taus, &cfg.scan.beta_grid, &template, cfg.horizon, &cfg.relax)?;
        let mut w = create(&cfg.out_dir, "diagram.csv")?;
        write_scan_csv(&cells, &mut w)?;
        w.flush()?;
        let frac = converged_fraction(&cells);
        write_json(
            &cfg.out_dir,
            "scan_summary.json",
            &ScanSummary {
                tau_c: None,
                bracket: None,
                rows: cells.len(),
                converged_fraction: frac,
                slope_written: false,
                config: cfg,
            },
        )?;
        println!("cells={} converged_fraction={frac}", cells.len());
        return Ok(if frac >= 0.9 { 0 } else { 1 });
    }
    let template = match cfg.scan.beta_grid.first() {
        Some(&b) => template.with_beta(b)?,
        None => template,
    };
    let rows = scan_tau(&taus, &template, cfg.horizon, &cfg.relax)?;
    let mut w = create(&cfg.out_dir, "scan.csv")?;
    write_scan_csv(&rows, &mut w)?;
    w.flush()?;

    let slope_written = match slope_analysis(&rows) {
        Ok(points) => {
            let mut w = create(&cfg.out_dir, "slope.csv")?;
            write_slope_csv(&points, &mut w)?;
            w.flush()?;
            true
        }
        Err(e) => {
            eprintln!("slope analysis skipped: {e}");
            false
        }
    };

    let valid: Vec<&ScanRow> = rows.iter().filter(|r| r.converged).collect();
    let switch = valid.windows(2).find(|w| !w[0].bifurcated && w[1].bifurcated);
    let search = match switch {
        Some(w) => Some(bisect_threshold(
            &template,
            (w[0].tau, w[1].tau),
            cfg.scan.threshold_tol,
            cfg.horizon,
            &cfg.relax,
        )?),
        None => None,
    };
    let frac = converged_fraction(&rows);
    write_json(
        &cfg.out_dir,
        "scan_summary.json",
        &ScanSummary {
            tau_c: search.as_ref().map(|s| s.tau_c),
            bracket: search.as_ref().map(|s| s.bracket),
            rows: rows.len(),
            converged_fraction: frac,
            slope_written,
            config: cfg,
        },
    )?;
    match &search {
        Some(s) => println!("rows={} tau_c={} bracket=[{}, {}]", rows.len(), s.tau_c, s.bracket.0, s.bracket.1),
        None => println!("rows={} tau_c=none", rows.len()),
    }
    Ok(if frac >= 0.9 { 0 } else { 1 })
}

#[derive(Debug, Serialize)]
struct DiagnoseSummary<'a> {
    transition_index: Option<usize>,
    transition_state: Option<(f64, f64)>,
    outliers: &'a [usize],
    unresolved: &'a [usize],
    config: &'a RunConfig,
}

fn cmd_diagnose(cfg: &RunConfig) -> Result<i32> {
    let file = cfg
        .diagnose
        .path
        .as_ref()
        .ok_or_else(|| invalid("path", "a path CSV is required"))?;
    let path = Path::read_csv(BufReader::new(File::open(file)?))?;
    let params = cfg.params()?;
    let rec = lifetime(&path, &params, cfg.diagnose.kappa, cfg.diagnose.t_max, cfg.diagnose.history)?;
    let force = optimal_force(&path, &params)?;
    let mut w = create(&cfg.out_dir, "lifetime.csv")?;
    write_lifetime_csv(&path, &rec, &mut w)?;
    w.flush()?;
    let mut w = create(&cfg.out_dir, "force.csv")?;
    write_force_csv(&path, &force, &mut w)?;
    w.flush()?;
    write_json(
        &cfg.out_dir,
        "diagnose.json",
        &DiagnoseSummary {
            transition_index: rec.transition_index,
            transition_state: rec.transition_state.map(|x| (x.u, x.v)),
            outliers: &rec.outliers,
            unresolved: &rec.unresolved,
            config: cfg,
        },
    )?;
    match rec.transition_state {
        Some(x) => println!("transition_state=({}, {}) outliers={}", fmt17(x.u), fmt17(x.v), rec.outliers.len()),
        None => println!("transition_state=none"),
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct PrefactorReport {
    #[serde(rename = "C0")]
    c0: f64,
    rate_action: f64,
    action: f64,
    branches: usize,
}

#[derive(Debug, Serialize)]
struct RateOutput<'a> {
    #[serde(flatten)]
    result: &'a RateResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    prefactor: Option<PrefactorReport>,
    config: &'a RunConfig,
}

/// Minimal action and branch count, from a sidecar or a fresh solve.
fn action_source(cfg: &RunConfig, params: &ModelParams) -> Result<(f64, usize)> {
    match &cfg.rate.sidecar {
        Some(p) => {
            let side: Sidecar = serde_json::from_str(&fs::read_to_string(p)?)?;
            if side.tau != params.tau || side.beta != params.beta {
                return Err(invalid(
                    "sidecar",
                    format!("was solved at tau={}, beta={}", side.tau, side.beta),
                ));
            }
            Ok((side.action, side.branches))
        }
        None => {
            let (results, _) = solve(cfg)?;
            if !results.iter().all(|r| r.converged) {
                return Err(Error::AllRunsFailed("relaxation did not converge".into()));
            }
            Ok((results[0].action, results.len()))
        }
    }
}

fn cmd_rate(cfg: &RunConfig) -> Result<i32> {
    let params = cfg.params()?;
    let (result, name) = match cfg.rate.method {
        MethodChoice::Ffs => (ffs_rate(&params, &cfg.rate.ffs_config(cfg.seed))?, "rate_ffs.json"),
        MethodChoice::Direct => (
            direct_rate(&params, cfg.rate.n_transitions, cfg.seed, cfg.rate.max_steps, Direction::AToB)?,
            "rate_direct.json",
        ),
        MethodChoice::Action => {
            let (s, branches) = action_source(cfg, &params)?;
            (action_rate_result(s, &params, branches)?, "rate_action.json")
        }
    };
    let pre = if cfg.rate.prefactor {
        let (s, branches) = action_source(cfg, &params)?;
        let rate_action = action_rate_estimate(s, &params, branches)?;
        Some(PrefactorReport {
            c0: prefactor(result.rate_p, rate_action)?,
            rate_action,
            action: s,
            branches,
        })
    } else {
        None
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    match &pre {
        Some(p) => println!("rate_P={} C0={}", fmt17(result.rate_p), fmt17(p.c0)),
        None => println!("rate_P={} stderr_log={}", fmt17(result.rate_p), fmt17(result.stderr_log)),
    }
    write_json(
        &cfg.out_dir,
        name,
        &RateOutput {
            result: &result,
            prefactor: pre,
            config: cfg,
        },
    )?;
    Ok(0)
}

fn cmd_stability(cfg: &RunConfig) -> Result<i32> {
    let taus = cfg.stability.tau_grid.values()?;
    if taus.is_empty() {
        return Err(invalid("tau_grid", "grid is empty"));
    }
    let mut w = create(&cfg.out_dir, "stability.csv")?;
    writeln!(w, "tau,point,re,im")?;
    for tau in taus {
        let params = cfg.params()?.with_tau(tau)?;
        for (name, point) in [("A", A), ("B", B)] {
            let root = rightmost_char_root(point, &params)?;
            writeln!(w, "{},{},{},{}", fmt17(tau), name, fmt17(root.re), fmt17(root.im))?;
            println!("tau={tau} point={name} lambda={:.12}{:+.12}i", root.re, root.im);
        }
    }
    w.flush()?;
    Ok(0)
}
