//! Minimum action method: relaxation of discretised paths by gradient descent
//! in pseudo-time, symmetric branch detection and threshold location.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{invalid, ModelParams, State, A, B};
use crate::path::{
    commensurate_intervals, inf_norm, make_path, max_transverse_distance, ActionEvaluator, Path,
    PathKind,
};
use crate::transverse::transverse_mode;

/// Transverse distance above which a path counts as off-axis.
pub const L_THRESHOLD: f64 = 0.05;
/// Amplitude of the symmetry-breaking initial bump.
pub const BUMP_AMPLITUDE: f64 = 0.1;
/// Node-wise distance below which two minimisers are the same path.
pub const DEDUP_DISTANCE: f64 = 1e-3;
/// Relative action window for "equally minimal" results.
pub const ACTION_TOL: f64 = 1e-6;
/// Action decrease an off-axis result needs over the best on-axis one to
/// count as a separate pathway.
pub const MIN_ACTION_GAIN: f64 = 1e-5;
/// Default minimal number of mesh intervals.
pub const DEFAULT_MIN_INTERVALS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_init: f64,
    pub backtrack_factor: f64,
    pub armijo_c: f64,
    pub metric: Metric,
}

/// Inner product in which the descent direction is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Plain Euclidean gradient on the node coordinates.
    Euclidean,
    /// Discrete H1 metric `(1/dt) K + shift * dt * I`, with `K` the
    /// Dirichlet Laplacian on interior nodes.
    #[default]
    Sobolev,
}

/// Mass shift of the Sobolev metric.
pub const SOBOLEV_SHIFT: f64 = 1.0;

impl Default for RelaxConfig {
    fn default() -> Self {
        Self {
            max_iters: 500_000,
            grad_tol: 1e-6,
            step_init: 1.0,
            backtrack_factor: 0.5,
            armijo_c: 1e-4,
            metric: Metric::Sobolev,
        }
    }
}

impl RelaxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(invalid("max_iters", "must be >= 1"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(invalid("grad_tol", "must be > 0"));
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            return Err(invalid("step_init", "must be finite and > 0"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(invalid("backtrack_factor", "must lie in (0, 1)"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(invalid("armijo_c", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    OnAxis,
    Upper,
    Lower,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::OnAxis => "on_axis",
            Branch::Upper => "upper",
            Branch::Lower => "lower",
        }
    }

    /// Label from the sign of `v` at the node of largest `|v|`.
    pub fn classify(path: &Path) -> Branch {
        let peak = path
            .nodes
            .iter()
            .copied()
            .max_by(|a, b| a.v.abs().total_cmp(&b.v.abs()))
            .unwrap_or_default();
        if peak.v.abs() <= L_THRESHOLD {
            Branch::OnAxis
        } else if peak.v > 0.0 {
            Branch::Upper
        } else {
            Branch::Lower
        }
    }
}

/// Outcome of one relaxation run.
#[derive(Debug, Clone, PartialEq)]
pub struct DtpResult {
    pub path: Path,
    pub action: f64,
    pub branch: Branch,
    pub converged: bool,
    pub iterations: usize,
    pub grad_inf_norm: f64,
    /// Maximal distance of the path from the `u` axis.
    pub l: f64,
    /// Action sampled every [`TRACE_EVERY`] accepted steps, plus the final value.
    pub action_trace: Vec<f64>,
    /// Lowest transverse Hessian eigenvalue, when it was computed for an
    /// on-axis result.
    pub transverse_eigenvalue: Option<f64>,
}

pub const TRACE_EVERY: usize = 100;

/// Constant symmetric tridiagonal system, factorised once (Thomas algorithm).
#[derive(Debug, Clone)]
struct Tridiagonal {
    off: f64,
    /// Modified super-diagonal coefficients.
    c: Vec<f64>,
    /// Reciprocal pivots.
    inv_pivot: Vec<f64>,
}

impl Tridiagonal {
    fn new(size: usize, diag: f64, off: f64) -> Self {
        let mut c = vec![0.0; size];
        let mut inv_pivot = vec![0.0; size];
        let mut prev_c = 0.0;
        for i in 0..size {
            let pivot = diag - off * prev_c;
            inv_pivot[i] = 1.0 / pivot;
            c[i] = off * inv_pivot[i];
            prev_c = c[i];
        }
        Self { off, c, inv_pivot }
    }

    /// Solves in place, independently for both components.
    fn solve(&self, x: &mut [State]) {
        let n = x.len();
        let mut prev = State::default();
        for i in 0..n {
            let d = x[i] - self.off * prev;
            x[i] = self.inv_pivot[i] * d;
            prev = x[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            let next = x[i + 1];
            x[i] -= self.c[i] * next;
        }
    }
}

/// Gradient descent with Armijo backtracking on the discrete action. The
/// trial step grows back towards `step_init` after every accepted move, and
/// the pinned endpoints never move.
pub fn relax(path: Path, params: &ModelParams, cfg: &RelaxConfig) -> Result<DtpResult> {
    cfg.validate()?;
    params.validate()?;
    let n = path.intervals();
    if path.nodes[0] != A || path.nodes[n] != B {
        return Err(invalid("path", "endpoints must be pinned at A and B"));
    }
    let mut eval = ActionEvaluator::new(&path, params)?;
    let precond = match cfg.metric {
        Metric::Euclidean => None,
        Metric::Sobolev => Some(Tridiagonal::new(
            n - 1,
            2.0 / path.dt + SOBOLEV_SHIFT * path.dt,
            -1.0 / path.dt,
        )),
    };
    let mut nodes = path.nodes.clone();
    let mut trial = nodes.clone();
    let mut grad = vec![State::default(); n + 1];
    let mut dir = vec![State::default(); n + 1];

    let mut s = eval.action_and_gradient(&nodes, &mut grad);
    if !s.is_finite() {
        return Err(Error::Diverged { iteration: 0 });
    }
    let mut step = cfg.step_init;
    let mut trace = vec![s];
    let mut gnorm = inf_norm(&grad);
    let mut iterations = 0;
    let mut converged = gnorm < cfg.grad_tol;

    while !converged && iterations < cfg.max_iters {
        dir.copy_from_slice(&grad);
        if let Some(p) = &precond {
            p.solve(&mut dir[1..n]);
        }
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g.dot(*d)).sum();
        if !slope.is_finite() {
            return Err(Error::Diverged { iteration: iterations });
        }
        let mut accepted = false;
        while step > 1e-16 {
            for ((t, x), d) in trial.iter_mut().zip(&nodes).zip(&dir) {
                t.u = x.u - step * d.u;
                t.v = x.v - step * d.v;
            }
            let st = eval.action(&trial);
            if st.is_finite() && st <= s - cfg.armijo_c * step * slope {
                accepted = true;
                break;
            }
            step *= cfg.backtrack_factor;
        }
        if !accepted {
            // no descent left at machine precision
            break;
        }
        std::mem::swap(&mut nodes, &mut trial);
        s = eval.action_and_gradient(&nodes, &mut grad);
        if !s.is_finite() {
            return Err(Error::Diverged { iteration: iterations });
        }
        iterations += 1;
        if iterations % TRACE_EVERY == 0 {
            trace.push(s);
        }
        gnorm = inf_norm(&grad);
        converged = gnorm < cfg.grad_tol;
        step = (step / cfg.backtrack_factor).min(cfg.step_init);
    }
    trace.push(s);

    let path = Path {
        nodes,
        horizon: path.horizon,
        dt: path.dt,
    };
    let l = max_transverse_distance(&path);
    Ok(DtpResult {
        branch: Branch::classify(&path),
        path,
        action: s,
        converged,
        iterations,
        grad_inf_norm: gnorm,
        l,
        action_trace: trace,
        transverse_eigenvalue: None,
    })
}

/// Maximum number of saddle escapes attempted per run.
const MAX_ESCAPES: usize = 3;

/// Relaxes from `start`; whenever the result sits on the axis, checks the
/// transverse second variation and, if the on-axis path is a saddle,
/// restarts from it displaced by `sign * BUMP_AMPLITUDE` along the unstable
/// mode.
pub fn relax_with_escape(
    start: Path,
    params: &ModelParams,
    cfg: &RelaxConfig,
    sign: f64,
) -> Result<DtpResult> {
    let mut result = relax(start, params, cfg)?;
    let mut spent = result.iterations;
    for _ in 0..MAX_ESCAPES {
        if result.l > L_THRESHOLD || !result.converged {
            break;
        }
        let mode = transverse_mode(&result.path, params)?;
        result.transverse_eigenvalue = Some(mode.eigenvalue);
        if !mode.is_unstable() {
            break;
        }
        let mut nodes = result.path.nodes.clone();
        for (x, w) in nodes.iter_mut().zip(&mode.mode) {
            x.v = sign * BUMP_AMPLITUDE * w;
        }
        let displaced = Path {
            nodes,
            horizon: result.path.horizon,
            dt: result.path.dt,
        };
        let budget = RelaxConfig {
            max_iters: cfg.max_iters.saturating_sub(spent).max(1),
            ..*cfg
        };
        let trace_head = std::mem::take(&mut result.action_trace);
        result = relax(displaced, params, &budget)?;
        spent += result.iterations;
        result.iterations = spent;
        result.action_trace = trace_head.into_iter().chain(result.action_trace).collect();
    }
    Ok(result)
}

/// The three standard initial guesses: straight, upward and downward bump.
pub fn initial_guesses(horizon: f64, intervals: usize) -> Result<Vec<Path>> {
    Ok(vec![
        make_path(horizon, intervals, PathKind::Straight)?,
        make_path(
            horizon,
            intervals,
            PathKind::StraightPlusBump {
                amplitude: BUMP_AMPLITUDE,
                sign: 1.0,
            },
        )?,
        make_path(
            horizon,
            intervals,
            PathKind::StraightPlusBump {
                amplitude: BUMP_AMPLITUDE,
                sign: -1.0,
            },
        )?,
    ])
}

/// Default mesh for a delay: at least 5000 intervals, commensurate with `tau`.
pub fn default_intervals(horizon: f64, tau: f64) -> Result<usize> {
    commensurate_intervals(horizon, tau, DEFAULT_MIN_INTERVALS)
}

/// Relaxes from the three standard starts and returns the distinct
/// minimisers of lowest action.
pub fn solve_branches(
    params: &ModelParams,
    horizon: f64,
    intervals: usize,
    cfg: &RelaxConfig,
) -> Result<Vec<DtpResult>> {
    let starts = initial_guesses(horizon, intervals)?;
    let signs = [0.0, 1.0, -1.0];
    let runs: Vec<Result<DtpResult>> = starts
        .into_par_iter()
        .zip(signs)
        .map(|(p, sign)| {
            if sign == 0.0 {
                relax(p, params, cfg)
            } else {
                relax_with_escape(p, params, cfg, sign)
            }
        })
        .collect();
    select_minimisers(runs)
}

pub(crate) fn select_minimisers(runs: Vec<Result<DtpResult>>) -> Result<Vec<DtpResult>> {
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for r in runs {
        match r {
            Ok(d) => ok.push(d),
            Err(e) => failures.push(e.to_string()),
        }
    }
    if ok.is_empty() {
        return Err(Error::AllRunsFailed(failures.join("; ")));
    }
    // off-axis results must beat the on-axis path by a significant margin
    let best_axis = ok
        .iter()
        .filter(|d| d.l <= L_THRESHOLD)
        .map(|d| d.action)
        .fold(f64::INFINITY, f64::min);
    ok.retain(|d| d.l <= L_THRESHOLD || d.action < best_axis - MIN_ACTION_GAIN);

    let best = ok.iter().map(|d| d.action).fold(f64::INFINITY, f64::min);
    ok.sort_by(|a, b| a.action.total_cmp(&b.action));
    let mut distinct: Vec<DtpResult> = Vec::new();
    for d in ok {
        if d.action > best + ACTION_TOL * best.max(1.0) {
            continue;
        }
        // on-axis minimisers differing only by where the transition happens
        // in [0, T] are the same pathway
        let duplicate = distinct.iter().any(|e| {
            e.branch == d.branch || e.path.max_node_distance(&d.path) < DEDUP_DISTANCE
        });
        if !duplicate {
            distinct.push(d);
        }
    }
    distinct.sort_by_key(|d| match d.branch {
        Branch::OnAxis => 0,
        Branch::Upper => 1,
        Branch::Lower => 2,
    });
    Ok(distinct)
}

/// Summary of the branch structure at one delay.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub tau: f64,
    pub bifurcated: bool,
    pub l: f64,
    pub action: f64,
    pub branches: usize,
    pub converged: bool,
}

pub fn classify_tau(
    template: &ModelParams,
    tau: f64,
    horizon: f64,
    cfg: &RelaxConfig,
) -> Result<Classification> {
    let params = template.with_tau(tau)?;
    let n = default_intervals(horizon, tau)?;
    let results = solve_branches(&params, horizon, n, cfg)?;
    let l = results.iter().map(|d| d.l).fold(0.0, f64::max);
    Ok(Classification {
        tau,
        bifurcated: l > L_THRESHOLD,
        l,
        action: results[0].action,
        branches: results.len(),
        converged: results.iter().all(|d| d.converged),
    })
}

/// Bracket and bisection record of a threshold search.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSearch {
    pub tau_c: f64,
    pub bracket: (f64, f64),
    pub evaluated: Vec<Classification>,
}

/// Locates the delay at which the minimiser leaves the axis: a coarse scan
/// followed by bisection down to `coarse_step / 8`.
pub fn find_tau_c(
    template: &ModelParams,
    tau_range: (f64, f64),
    coarse_step: f64,
    horizon: f64,
    cfg: &RelaxConfig,
) -> Result<ThresholdSearch> {
    let (lo, hi) = tau_range;
    if !(coarse_step > 0.0) {
        return Err(invalid("coarse_step", "must be > 0"));
    }
    if !(lo > 0.0 && hi > lo && hi < horizon) {
        return Err(invalid("tau_range", format!("[{lo}, {hi}] must lie inside (0, T)")));
    }
    let steps = ((hi - lo) / coarse_step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=steps)
        .map(|k| round_grid(lo + k as f64 * coarse_step))
        .collect();
    let mut evaluated: Vec<Classification> = grid
        .par_iter()
        .map(|&tau| classify_tau(template, tau, horizon, cfg))
        .collect::<Result<_>>()?;

    let Some(k) = evaluated
        .windows(2)
        .position(|w| !w[0].bifurcated && w[1].bifurcated)
    else {
        return Err(Error::ThresholdNotFound { lo, hi });
    };
    let bracket = (evaluated[k].tau, evaluated[k + 1].tau);
    let mut refined = bisect_threshold(template, bracket, coarse_step / 8.0, horizon, cfg)?;
    evaluated.append(&mut refined.evaluated);
    evaluated.sort_by(|x, y| x.tau.total_cmp(&y.tau));
    refined.evaluated = evaluated;
    Ok(refined)
}

/// Bisects an on-axis / off-axis bracket down to width `tol`; the bracket
/// ends are assumed already classified and are not re-evaluated.
pub fn bisect_threshold(
    template: &ModelParams,
    bracket: (f64, f64),
    tol: f64,
    horizon: f64,
    cfg: &RelaxConfig,
) -> Result<ThresholdSearch> {
    if !(tol > 0.0) || !(bracket.1 > bracket.0) {
        return Err(invalid("bracket", "needs lo < hi and a positive tolerance"));
    }
    let (mut a, mut b) = bracket;
    let mut evaluated = Vec::new();
    while b - a > tol + 1e-12 {
        let mid = round_grid(0.5 * (a + b));
        let c = classify_tau(template, mid, horizon, cfg)?;
        if c.bifurcated {
            b = mid;
        } else {
            a = mid;
        }
        evaluated.push(c);
    }
    evaluated.sort_by(|x, y| x.tau.total_cmp(&y.tau));
    Ok(ThresholdSearch {
        tau_c: 0.5 * (a + b),
        bracket: (a, b),
        evaluated,
    })
}

/// Snaps grid values to 12 decimals so that `0.1 + 0.2` becomes `0.3`.
pub fn round_grid(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(RelaxConfig::default().validate().is_ok());
        let bad = RelaxConfig {
            backtrack_factor: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn branch_labels() {
        let mut p = make_path(10.0, 10, PathKind::Straight).unwrap();
        assert_eq!(Branch::classify(&p), Branch::OnAxis);
        p.nodes[4].v = 0.2;
        p.nodes[6].v = -0.1;
        assert_eq!(Branch::classify(&p), Branch::Upper);
        assert_eq!(Branch::classify(&p.mirrored()), Branch::Lower);
    }

    #[test]
    fn grid_rounding() {
        assert_eq!(round_grid(0.1 + 0.2), 0.3);
    }
}
