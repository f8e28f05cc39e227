//! Uniformly discretised transition paths and the discrete Freidlin-Wentzell
//! action with delayed drift.
//!
//! The residual on interval `i` is the forward difference minus the drift at
//! the left node, with the delayed argument taken `m = tau / dt` nodes back:
//!
//! ```text
//! r_i = (x_{i+1} - x_i) / dt - F(x_i, x_{i-m}),   x_j = A for j < 0
//! S   = dt / 2 * sum_i |r_i|^2
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{invalid, DelayedDrift, MaierStein, ModelParams, State, A, B};

const MESH_TOL: f64 = 1e-9;

/// Trajectory sampled at `N + 1` equally spaced times over `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub nodes: Vec<State>,
    pub horizon: f64,
    pub dt: f64,
}

/// Initial guess for a relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PathKind {
    Straight,
    /// Straight line plus `sign * amplitude * sin(pi i / N)` in `v`.
    StraightPlusBump { amplitude: f64, sign: f64 },
}

impl Path {
    /// Builds a path from raw nodes, checking `N >= 2` and finiteness.
    pub fn from_nodes(nodes: Vec<State>, horizon: f64) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(invalid("N", format!("need at least 3 nodes, got {}", nodes.len())));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("T", format!("must be finite and > 0, got {horizon}")));
        }
        if let Some(i) = nodes.iter().position(|x| !x.is_finite()) {
            return Err(invalid("nodes", format!("node {i} is not finite")));
        }
        let dt = horizon / (nodes.len() - 1) as f64;
        Ok(Self { nodes, horizon, dt })
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Reflection `v -> -v` of every node.
    pub fn mirrored(&self) -> Path {
        Path {
            nodes: self.nodes.iter().map(|x| x.mirror()).collect(),
            horizon: self.horizon,
            dt: self.dt,
        }
    }

    /// Largest node-wise Euclidean distance to `other` (same mesh assumed).
    pub fn max_node_distance(&self, other: &Path) -> f64 {
        self.nodes
            .iter()
            .zip(&other.nodes)
            .map(|(a, b)| a.dist(*b))
            .fold(0.0, f64::max)
    }

    /// Delay expressed in mesh steps; errors unless `tau` is a multiple of `dt`.
    pub fn delay_steps(&self, tau: f64) -> Result<usize> {
        delay_steps(tau, self.dt)
    }

    /// Writes the `t,u,v` CSV form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,u,v")?;
        let mut line = String::new();
        for (i, x) in self.nodes.iter().enumerate() {
            line.clear();
            let _ = write!(line, "{},{},{}", fmt17(self.time(i)), fmt17(x.u), fmt17(x.v));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Parses the `t,u,v` CSV form. Times must start at 0 and be uniformly
    /// spaced; row numbers in errors are 1-based file lines.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let rows = read_table(r, &["t", "u", "v"])?;
        if rows.len() < 3 {
            return Err(Error::Parse {
                row: rows.len() + 1,
                reason: format!("a path needs at least 3 rows, found {}", rows.len()),
            });
        }
        let t0 = rows[0].1[0];
        if t0.abs() > MESH_TOL {
            return Err(Error::Parse {
                row: rows[0].0,
                reason: format!("first time must be 0, got {t0}"),
            });
        }
        let n = rows.len() - 1;
        let horizon = rows[n].1[0];
        if !(horizon > 0.0) {
            return Err(Error::Parse {
                row: rows[n].0,
                reason: format!("final time must be positive, got {horizon}"),
            });
        }
        let dt = horizon / n as f64;
        for (i, (line, vals)) in rows.iter().enumerate() {
            let expected = i as f64 * dt;
            if (vals[0] - expected).abs() > 1e-6 * dt.max(1e-12) + 1e-12 * horizon {
                return Err(Error::Parse {
                    row: *line,
                    reason: format!("time {} breaks uniform spacing (expected {expected})", vals[0]),
                });
            }
        }
        let nodes = rows.iter().map(|(_, v)| State::new(v[1], v[2])).collect();
        Path::from_nodes(nodes, horizon)
    }
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Reads a numeric CSV table with the given header. Returns `(line, values)`
/// per data row.
pub(crate) fn read_table<R: BufRead>(r: R, header: &[&str]) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut lines = r.lines().enumerate();
    let (_, head) = lines.next().ok_or(Error::Parse {
        row: 1,
        reason: "empty input".into(),
    })?;
    let head = head?;
    let cols: Vec<&str> = head.trim().split(',').map(str::trim).collect();
    if cols != header {
        return Err(Error::Parse {
            row: 1,
            reason: format!("expected header `{}`, got `{}`", header.join(","), head.trim()),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Parse {
                row,
                reason: format!("expected {} fields, found {}", header.len(), fields.len()),
            });
        }
        let mut vals = Vec::with_capacity(fields.len());
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                row,
                reason: format!("`{}` is not a number", f.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    reason: format!("`{}` is not finite", f.trim()),
                });
            }
            vals.push(v);
        }
        rows.push((row, vals));
    }
    Ok(rows)
}

/// Delay in mesh steps, `m = tau / dt`, rejecting incommensurate meshes.
pub fn delay_steps(tau: f64, dt: f64) -> Result<usize> {
    if tau == 0.0 {
        return Ok(0);
    }
    let m = tau / dt;
    let rounded = m.round();
    if rounded < 1.0 || (m - rounded).abs() > MESH_TOL * m.max(1.0) {
        return Err(Error::IncommensurateMesh { tau, dt });
    }
    Ok(rounded as usize)
}

/// Smallest node count `N >= min_intervals` such that `T / N` divides `tau`.
pub fn commensurate_intervals(horizon: f64, tau: f64, min_intervals: usize) -> Result<usize> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid("T", format!("must be finite and > 0, got {horizon}")));
    }
    if min_intervals < 2 {
        return Err(invalid("N", format!("must be >= 2, got {min_intervals}")));
    }
    if tau == 0.0 {
        return Ok(min_intervals);
    }
    if !(tau > 0.0 && tau < horizon) {
        return Err(Error::DelayExceedsHorizon { tau, horizon });
    }
    let ratio = horizon / tau;
    let m0 = ((min_intervals as f64) / ratio - 1e-9).ceil().max(1.0) as usize;
    for m in m0..m0.saturating_mul(200).max(m0 + 2000) {
        let n = ratio * m as f64;
        let rounded = n.round();
        if (n - rounded).abs() <= 1e-7 * n && rounded >= min_intervals as f64 {
            return Ok(rounded as usize);
        }
    }
    Err(Error::IncommensurateMesh {
        tau,
        dt: horizon / min_intervals as f64,
    })
}

pub fn make_path(horizon: f64, intervals: usize, kind: PathKind) -> Result<Path> {
    if intervals < 2 {
        return Err(invalid("N", format!("must be >= 2, got {intervals}")));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid("T", format!("must be finite and > 0, got {horizon}")));
    }
    let n = intervals as f64;
    let bump = match kind {
        PathKind::Straight => None,
        PathKind::StraightPlusBump { amplitude, sign } => {
            if !(amplitude > 0.0 && amplitude.is_finite()) {
                return Err(invalid("amplitude", format!("must be > 0, got {amplitude}")));
            }
            Some(amplitude * sign.signum())
        }
    };
    let mut nodes: Vec<State> = (0..=intervals)
        .map(|i| {
            let s = i as f64 / n;
            let u = A.u + (B.u - A.u) * s;
            let v = bump.map_or(0.0, |b| b * (std::f64::consts::PI * s).sin());
            State::new(u, v)
        })
        .collect();
    nodes[0] = A;
    nodes[intervals] = B;
    Path::from_nodes(nodes, horizon)
}

/// Result of evaluating (or minimising) the action of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionReport {
    pub action: f64,
    /// Per-interval residual vectors `r_i`, length `N`.
    pub residuals: Vec<State>,
    pub grad_inf_norm: f64,
    pub iterations: usize,
}

/// Reusable evaluator of the discrete action and its exact gradient.
#[derive(Debug, Clone)]
pub struct ActionEvaluator<D = MaierStein> {
    drift: D,
    dt: f64,
    delay: usize,
    residuals: Vec<State>,
}

impl ActionEvaluator<MaierStein> {
    pub fn new(path: &Path, params: &ModelParams) -> Result<Self> {
        Self::with_drift(MaierStein::from(params), path, params.tau)
    }
}

impl<D: DelayedDrift> ActionEvaluator<D> {
    pub fn with_drift(drift: D, path: &Path, tau: f64) -> Result<Self> {
        if tau >= path.horizon {
            return Err(Error::DelayExceedsHorizon {
                tau,
                horizon: path.horizon,
            });
        }
        let delay = path.delay_steps(tau)?;
        Ok(Self {
            drift,
            dt: path.dt,
            delay,
            residuals: vec![State::default(); path.intervals()],
        })
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn residuals(&self) -> &[State] {
        &self.residuals
    }

    #[inline]
    fn delayed(nodes: &[State], i: usize, m: usize) -> State {
        if i >= m {
            nodes[i - m]
        } else {
            A
        }
    }

    /// Fills the residual buffer and returns the action.
    pub fn action(&mut self, nodes: &[State]) -> f64 {
        debug_assert_eq!(nodes.len(), self.residuals.len() + 1);
        let (dt, m) = (self.dt, self.delay);
        let inv_dt = 1.0 / dt;
        let mut sum = 0.0;
        for i in 0..self.residuals.len() {
            let x = nodes[i];
            let f = self.drift.eval(x, Self::delayed(nodes, i, m));
            let r = inv_dt * (nodes[i + 1] - x) - f;
            sum += r.norm_sq();
            self.residuals[i] = r;
        }
        0.5 * dt * sum
    }

    /// Action plus its gradient with respect to every node; the endpoint
    /// entries of `grad` are set to zero.
    pub fn action_and_gradient(&mut self, nodes: &[State], grad: &mut [State]) -> f64 {
        let s = self.action(nodes);
        let (dt, m) = (self.dt, self.delay);
        let n = self.residuals.len();
        let r = &self.residuals;
        grad[0] = State::default();
        grad[n] = State::default();
        for j in 1..n {
            let (inst, _) = self.drift.jacobians(nodes[j], Self::delayed(nodes, j, m));
            let mut g = r[j - 1] - r[j] - dt * inst.transpose_apply(r[j]);
            if j + m < n {
                let k = j + m;
                let (_, del) = self.drift.jacobians(nodes[k], nodes[j]);
                g -= dt * del.transpose_apply(r[k]);
            }
            grad[j] = g;
        }
        s
    }
}

pub fn inf_norm(v: &[State]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.u.abs()).max(x.v.abs()))
}

/// Discrete action of `path`, with residuals and gradient norm.
pub fn action(path: &Path, params: &ModelParams) -> Result<ActionReport> {
    let mut eval = ActionEvaluator::new(path, params)?;
    let mut grad = vec![State::default(); path.nodes.len()];
    let action = eval.action_and_gradient(&path.nodes, &mut grad);
    Ok(ActionReport {
        action,
        residuals: eval.residuals.clone(),
        grad_inf_norm: inf_norm(&grad),
        iterations: 0,
    })
}

/// Exact gradient of [`action`] with respect to the nodes (zero at both
/// pinned endpoints).
pub fn action_gradient(path: &Path, params: &ModelParams) -> Result<Vec<State>> {
    let mut eval = ActionEvaluator::new(path, params)?;
    let mut grad = vec![State::default(); path.nodes.len()];
    eval.action_and_gradient(&path.nodes, &mut grad);
    Ok(grad)
}

/// Largest distance of a node from the `u` axis.
pub fn max_transverse_distance(path: &Path) -> f64 {
    path.nodes.iter().fold(0.0, |acc, x| acc.max(x.v.abs()))
}
