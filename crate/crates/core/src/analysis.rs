//! Post-processing of converged pathways: lifetimes and the transition
//! state, optimal fluctuation forces, action scans over the delay, and the
//! delay-asymmetry diagram.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mam::{classify_tau, RelaxConfig, L_THRESHOLD};
use crate::model::{invalid, MaierStein, ModelParams, State, A, B};
use crate::path::{fmt17, ActionEvaluator, Path};
use crate::sdde::{rk4_step, HistoryBuffer};

pub const DEFAULT_KAPPA: f64 = 1e-5;
pub const DEFAULT_T_MAX: f64 = 500.0;

/// Initial history for the lifetime integration of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistorySeed {
    /// The path over `[t_i - tau, t_i]`, padded with A before the start.
    #[default]
    PathSegment,
    /// The node itself held constant over the window.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basin {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeRecord {
    /// Signed relaxation times: negative towards A, positive towards B.
    pub per_node: Vec<f64>,
    /// Final basin per node; carries the sign when a lifetime is zero.
    pub basins: Vec<Basin>,
    /// Nodes that reached neither ball before `t_max`.
    pub unresolved: Vec<usize>,
    /// Last node relaxing to A that is followed by a node relaxing to B;
    /// `None` when the path never switches basin.
    pub transition_index: Option<usize>,
    /// Midpoint of the transition node and its successor.
    pub transition_state: Option<State>,
    /// Nodes whose basin disagrees with the side of `transition_index`
    /// they lie on.
    pub outliers: Vec<usize>,
}

fn node_lifetime(
    drift: &MaierStein,
    mut hist: HistoryBuffer,
    kappa: f64,
    t_max: f64,
) -> (f64, Basin, bool) {
    let dt = hist.dt();
    let max_steps = (t_max / dt).ceil() as usize;
    for k in 0..=max_steps {
        let x = hist.current();
        let t = k as f64 * dt;
        if x.dist(A) < kappa {
            return (-t, Basin::A, false);
        }
        if x.dist(B) < kappa {
            return (t, Basin::B, false);
        }
        if k == max_steps || !x.is_finite() {
            break;
        }
        let next = rk4_step(drift, &hist);
        hist.push(next);
    }
    let x = hist.current();
    if x.u < 0.0 {
        (-t_max, Basin::A, true)
    } else {
        (t_max, Basin::B, true)
    }
}

/// Integrates the noise-free delayed system from every node of `path` until
/// it enters the `kappa` ball of a minimum, and locates the transition state
/// between the two basins.
pub fn lifetime(
    path: &Path,
    params: &ModelParams,
    kappa: f64,
    t_max: f64,
    seed: HistorySeed,
) -> Result<LifetimeRecord> {
    params.validate()?;
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(invalid("kappa", format!("must be finite and > 0, got {kappa}")));
    }
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(invalid("t_max", format!("must be finite and > 0, got {t_max}")));
    }
    let m = path.delay_steps(params.tau)?;
    let drift = MaierStein::from(params);
    let dt = path.dt;
    let results: Vec<(f64, Basin, bool)> = (0..path.nodes.len())
        .into_par_iter()
        .map(|i| {
            let states: Vec<State> = match seed {
                HistorySeed::PathSegment => (0..=m)
                    .map(|k| {
                        let j = i as isize - (m - k) as isize;
                        if j < 0 {
                            A
                        } else {
                            path.nodes[j as usize]
                        }
                    })
                    .collect(),
                HistorySeed::Constant => vec![path.nodes[i]; m + 1],
            };
            let hist = HistoryBuffer::from_states(states, dt).expect("non-empty window");
            node_lifetime(&drift, hist, kappa, t_max)
        })
        .collect();

    let per_node: Vec<f64> = results.iter().map(|r| r.0).collect();
    let basins: Vec<Basin> = results.iter().map(|r| r.1).collect();
    let unresolved = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.2)
        .map(|(i, _)| i)
        .collect();
    let switch = (0..basins.len().saturating_sub(1))
        .rev()
        .find(|&i| basins[i] == Basin::A && basins[i + 1] == Basin::B);
    let outliers = match switch {
        Some(k) => basins
            .iter()
            .enumerate()
            .filter(|&(i, b)| (i <= k && *b == Basin::B) || (i > k && *b == Basin::A))
            .map(|(i, _)| i)
            .collect(),
        None => vec![],
    };
    Ok(LifetimeRecord {
        per_node,
        basins,
        unresolved,
        transition_index: switch,
        transition_state: switch.map(|k| 0.5 * (path.nodes[k] + path.nodes[k + 1])),
        outliers,
    })
}

/// Amplitude of the optimal fluctuation force per interval, `|r_i|`.
pub fn optimal_force(path: &Path, params: &ModelParams) -> Result<Vec<f64>> {
    let mut eval = ActionEvaluator::new(path, params)?;
    eval.action(&path.nodes);
    Ok(eval.residuals().iter().map(|r| r.norm()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub tau: f64,
    pub beta: f64,
    /// Minimal action; NaN when the solve failed.
    pub action: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub branches: usize,
    pub bifurcated: bool,
    pub converged: bool,
}

fn scan_cell(template: &ModelParams, tau: f64, beta: f64, horizon: f64, cfg: &RelaxConfig) -> ScanRow {
    let outcome = template
        .with_beta(beta)
        .and_then(|p| classify_tau(&p, tau, horizon, cfg));
    match outcome {
        Ok(c) => ScanRow {
            tau,
            beta,
            action: c.action,
            l: c.l,
            branches: c.branches,
            bifurcated: c.bifurcated,
            converged: c.converged,
        },
        Err(_) => ScanRow {
            tau,
            beta,
            action: f64::NAN,
            l: f64::NAN,
            branches: 0,
            bifurcated: false,
            converged: false,
        },
    }
}

fn check_grid(name: &'static str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid(name, "grid is empty"));
    }
    if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(name, "grid must be finite and strictly increasing"));
    }
    Ok(())
}

/// Solves for the dominant pathways at every delay of the grid. Failed or
/// unconverged cells are flagged with `converged = false`.
pub fn scan_tau(
    tau_grid: &[f64],
    template: &ModelParams,
    horizon: f64,
    cfg: &RelaxConfig,
) -> Result<Vec<ScanRow>> {
    check_grid("tau_grid", tau_grid)?;
    if tau_grid[0] < 0.0 || *tau_grid.last().unwrap() >= horizon {
        return Err(invalid("tau_grid", "values must lie in [0, T)"));
    }
    cfg.validate()?;
    Ok(tau_grid
        .par_iter()
        .map(|&tau| scan_cell(template, tau, template.beta, horizon, cfg))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopePoint {
    pub tau: f64,
    pub ds_dtau: f64,
    pub d2s_dtau2: f64,
}

/// Finite-difference slope and curvature of the action over converged
/// rows: central in the interior, one-sided at the ends.
pub fn slope_analysis(rows: &[ScanRow]) -> Result<Vec<SlopePoint>> {
    let valid: Vec<&ScanRow> = rows.iter().filter(|r| r.converged && r.action.is_finite()).collect();
    if valid.len() < 3 {
        return Err(invalid("rows", format!("need at least 3 converged rows, got {}", valid.len())));
    }
    let h = valid[1].tau - valid[0].tau;
    for (k, r) in valid.iter().enumerate() {
        let expected = valid[0].tau + k as f64 * h;
        if !(h > 0.0) || (r.tau - expected).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::NonUniformGrid {
                expected,
                found: r.tau,
            });
        }
    }
    let s: Vec<f64> = valid.iter().map(|r| r.action).collect();
    let n = s.len();
    let second = |i: usize| (s[i + 1] - 2.0 * s[i] + s[i - 1]) / (h * h);
    Ok((0..n)
        .map(|i| {
            let (ds, d2s) = if i == 0 {
                ((-3.0 * s[0] + 4.0 * s[1] - s[2]) / (2.0 * h), second(1))
            } else if i == n - 1 {
                ((3.0 * s[n - 1] - 4.0 * s[n - 2] + s[n - 3]) / (2.0 * h), second(n - 2))
            } else {
                ((s[i + 1] - s[i - 1]) / (2.0 * h), second(i))
            };
            SlopePoint {
                tau: valid[i].tau,
                ds_dtau: ds,
                d2s_dtau2: d2s,
            }
        })
        .collect())
}

pub type DiagramCell = ScanRow;

/// Dominant-pathway classification on a `beta x tau` grid; rows ordered by
/// `beta`, then `tau`.
pub fn scan_2d(
    tau_grid: &[f64],
    beta_grid: &[f64],
    template: &ModelParams,
    horizon: f64,
    cfg: &RelaxConfig,
) -> Result<Vec<DiagramCell>> {
    check_grid("tau_grid", tau_grid)?;
    check_grid("beta_grid", beta_grid)?;
    if beta_grid[0] <= 0.0 {
        return Err(invalid("beta_grid", "values must be > 0"));
    }
    if tau_grid[0] < 0.0 || *tau_grid.last().unwrap() >= horizon {
        return Err(invalid("tau_grid", "values must lie in [0, T)"));
    }
    cfg.validate()?;
    let cells: Vec<(f64, f64)> = beta_grid
        .iter()
        .flat_map(|&b| tau_grid.iter().map(move |&t| (t, b)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(tau, beta)| scan_cell(template, tau, beta, horizon, cfg))
        .collect())
}

/// Is the cell classified as bifurcated consistently with its `L`?
pub fn cell_consistent(cell: &DiagramCell) -> bool {
    !cell.converged || cell.bifurcated == (cell.l > L_THRESHOLD)
}

pub fn write_scan_csv<W: Write>(rows: &[ScanRow], mut w: W) -> Result<()> {
    writeln!(w, "tau,beta,action,L,branches,bifurcated,converged")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt17(r.tau),
            fmt17(r.beta),
            fmt17(r.action),
            fmt17(r.l),
            r.branches,
            r.bifurcated,
            r.converged
        )?;
    }
    Ok(())
}

pub fn write_slope_csv<W: Write>(points: &[SlopePoint], mut w: W) -> Result<()> {
    writeln!(w, "tau,dS_dtau,d2S_dtau2")?;
    for p in points {
        writeln!(w, "{},{},{}", fmt17(p.tau), fmt17(p.ds_dtau), fmt17(p.d2s_dtau2))?;
    }
    Ok(())
}

pub fn write_lifetime_csv<W: Write>(path: &Path, rec: &LifetimeRecord, mut w: W) -> Result<()> {
    writeln!(w, "t,u,v,t_life")?;
    for (i, (x, t)) in path.nodes.iter().zip(&rec.per_node).enumerate() {
        writeln!(w, "{},{},{},{}", fmt17(path.time(i)), fmt17(x.u), fmt17(x.v), fmt17(*t))?;
    }
    Ok(())
}

pub fn write_force_csv<W: Write>(path: &Path, force: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "t,b_optm")?;
    for (i, b) in force.iter().enumerate() {
        writeln!(w, "{},{}", fmt17(path.time(i)), fmt17(*b))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{make_path, PathKind};

    fn constant_path(x: State) -> Path {
        let mut p = make_path(1.0, 10, PathKind::Straight).unwrap();
        p.nodes = vec![x; 11];
        p
    }

    #[test]
    fn lifetime_near_b_is_small_positive() {
        let params = ModelParams::new(0.0, 1.0, 0.02).unwrap();
        let drift = MaierStein::from(&params);
        let hist = HistoryBuffer::constant(State::new(0.999, 0.0), 0.0, 0.01).unwrap();
        let (t, basin, unresolved) = node_lifetime(&drift, hist, DEFAULT_KAPPA, DEFAULT_T_MAX);
        assert_eq!(basin, Basin::B);
        assert!(!unresolved && t > 0.0 && t < 5.0, "{t}");
    }

    #[test]
    fn lifetime_from_minus_half_goes_to_a() {
        // u' = u - u^3 from -0.5: u(t)^2 = 1 / (1 + 3 exp(-2t)), so
        // |u + 1| < kappa at t = ln(3 / (2 kappa)) / 2 to leading order
        let params = ModelParams::new(0.0, 1.0, 0.02).unwrap();
        let drift = MaierStein::from(&params);
        let hist = HistoryBuffer::constant(State::new(-0.5, 0.0), 0.0, 0.001).unwrap();
        let (t, basin, _) = node_lifetime(&drift, hist, DEFAULT_KAPPA, DEFAULT_T_MAX);
        assert_eq!(basin, Basin::A);
        let exact = (1.5f64 / DEFAULT_KAPPA).ln() / 2.0;
        assert!((-t - exact).abs() < 0.01, "{t} vs {exact}");
    }

    #[test]
    fn lifetime_reports_exhaustion_with_sign() {
        let params = ModelParams::new(0.0, 1.0, 0.02).unwrap();
        let drift = MaierStein::from(&params);
        let hist = HistoryBuffer::constant(State::new(1e-12, 0.0), 0.0, 0.01).unwrap();
        let (t, basin, unresolved) = node_lifetime(&drift, hist, DEFAULT_KAPPA, 5.0);
        assert!(unresolved);
        assert_eq!((t, basin), (5.0, Basin::B));
    }

    #[test]
    fn lifetime_rejects_incommensurate_delay() {
        let params = ModelParams::new(0.033, 1.0, 0.02).unwrap();
        let p = constant_path(A);
        assert!(lifetime(&p, &params, DEFAULT_KAPPA, 10.0, HistorySeed::PathSegment).is_err());
    }

    #[test]
    fn force_vanishes_at_fixed_point() {
        let params = ModelParams::new(0.2, 1.0, 0.02).unwrap();
        let p = constant_path(A);
        assert!(optimal_force(&p, &params).unwrap().iter().all(|&b| b == 0.0));
    }

    fn row(tau: f64, action: f64) -> ScanRow {
        ScanRow {
            tau,
            beta: 1.0,
            action,
            l: 0.0,
            branches: 1,
            bifurcated: false,
            converged: true,
        }
    }

    #[test]
    fn slopes_of_affine_data_are_exact() {
        let rows: Vec<ScanRow> = (0..6).map(|k| row(0.2 + 0.1 * k as f64, 0.5 + 0.48 * (0.2 + 0.1 * k as f64))).collect();
        for p in slope_analysis(&rows).unwrap() {
            assert!((p.ds_dtau - 0.48).abs() < 1e-9);
            assert!(p.d2s_dtau2.abs() < 1e-7);
        }
    }

    #[test]
    fn slopes_of_quadratic_data() {
        let rows: Vec<ScanRow> = (0..5).map(|k| {
            let t = 1.0 + 0.1 * k as f64;
            row(t, 1.0 - 2.0 * t * t)
        }).collect();
        for p in slope_analysis(&rows).unwrap() {
            assert!((p.ds_dtau + 4.0 * p.tau).abs() < 1e-9);
            assert!((p.d2s_dtau2 + 4.0).abs() < 1e-7);
        }
    }

    #[test]
    fn slopes_reject_bad_input() {
        let rows = vec![row(0.1, 1.0), row(0.2, 1.0), row(0.4, 1.0)];
        assert!(matches!(slope_analysis(&rows), Err(Error::NonUniformGrid { .. })));
        assert!(slope_analysis(&rows[..2]).is_err());
        let mut flagged = vec![row(0.1, 1.0), row(0.2, 1.1), row(0.3, 1.2), row(0.4, 9.0)];
        flagged[3].converged = false;
        assert_eq!(slope_analysis(&flagged).unwrap().len(), 3);
    }

    #[test]
    fn scan_rejects_bad_grids() {
        let p = ModelParams::conservative(0.0).unwrap();
        let cfg = RelaxConfig::default();
        assert!(scan_tau(&[], &p, 100.0, &cfg).is_err());
        assert!(scan_tau(&[0.5, 0.3], &p, 100.0, &cfg).is_err());
        assert!(scan_2d(&[0.3], &[0.0], &p, 100.0, &cfg).is_err());
    }

    #[test]
    fn scan_csv_header() {
        let mut buf = Vec::new();
        write_scan_csv(&[row(0.3, 0.65)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("tau,beta,action,L,branches,bifurcated,converged\n"));
        assert!(text.lines().nth(1).unwrap().ends_with(",1,false,true"));
    }
}
