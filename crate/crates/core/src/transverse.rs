//! Second variation of the discrete action across the `u` axis.
//!
//! For a path lying on the axis the action is even in `v`, so its Hessian
//! splits into a `u` block and a `v` block. The `v` residual is linear in
//! `v`, which makes the `v` block explicit:
//!
//! ```text
//! (L w)_i = (w_{i+1} - w_i) / dt + w_{i-m} + u_i^2 w_i
//! H w     = dt * (L^T L w + 2 beta r_i u_i w)
//! ```
//!
//! where `r_i` is the `u` residual of the on-axis path. A negative lowest
//! eigenvalue means the on-axis path is a saddle in path space and a
//! symmetric pair of off-axis minimisers exists nearby.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{ModelParams, State};
use crate::path::{ActionEvaluator, Path};

/// Linear operator of the transverse second variation.
#[derive(Debug, Clone)]
pub struct TransverseHessian {
    dt: f64,
    delay: usize,
    u_sq: Vec<f64>,
    /// `2 beta r_i u_i`
    curvature: Vec<f64>,
    scratch: Vec<f64>,
}

impl TransverseHessian {
    /// Builds the operator from the `u` components of `path` (any `v`
    /// components are ignored, i.e. the path is projected onto the axis).
    pub fn new(path: &Path, params: &ModelParams) -> Result<Self> {
        let axis: Vec<State> = path.nodes.iter().map(|x| State::new(x.u, 0.0)).collect();
        let projected = Path {
            nodes: axis,
            horizon: path.horizon,
            dt: path.dt,
        };
        let mut eval = ActionEvaluator::new(&projected, params)?;
        eval.action(&projected.nodes);
        let n = path.intervals();
        let curvature = (0..n)
            .map(|i| 2.0 * params.beta * eval.residuals()[i].u * projected.nodes[i].u)
            .collect();
        Ok(Self {
            dt: path.dt,
            delay: eval.delay(),
            u_sq: projected.nodes.iter().map(|x| x.u * x.u).collect(),
            curvature,
            scratch: vec![0.0; n],
        })
    }

    /// Number of unknowns (interior nodes).
    pub fn dim(&self) -> usize {
        self.scratch.len() - 1
    }

    /// `out = H w` on interior nodes; `w` and `out` have length `N - 1`.
    pub fn apply(&mut self, w: &[f64], out: &mut [f64]) {
        let n = self.scratch.len();
        let (dt, m) = (self.dt, self.delay);
        let inv_dt = 1.0 / dt;
        // full node vector with zero endpoints and zero pre-history
        let at = |j: isize| -> f64 {
            if j <= 0 || j as usize >= n {
                0.0
            } else {
                w[j as usize - 1]
            }
        };
        for i in 0..n {
            let ii = i as isize;
            self.scratch[i] =
                (at(ii + 1) - at(ii)) * inv_dt + at(ii - m as isize) + self.u_sq[i] * at(ii);
        }
        let y = &self.scratch;
        for j in 1..n {
            let mut acc = (y[j - 1] - y[j]) * inv_dt + self.u_sq[j] * y[j];
            if j + m < n {
                acc += y[j + m];
            }
            acc += self.curvature[j] * w[j - 1];
            out[j - 1] = dt * acc;
        }
    }

    /// Transverse action increment `w^T H w / 2` per unit amplitude squared.
    pub fn quadratic_form(&mut self, w: &[f64]) -> f64 {
        let mut hw = vec![0.0; w.len()];
        self.apply(w, &mut hw);
        0.5 * dot(w, &hw)
    }
}

/// Lowest eigenpair of the transverse Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct TransverseMode {
    pub eigenvalue: f64,
    /// Eigenvector on all `N + 1` nodes (zero at the endpoints), scaled to
    /// unit sup-norm with a positive peak.
    pub mode: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl TransverseMode {
    pub fn is_unstable(&self) -> bool {
        self.eigenvalue < -UNSTABLE_TOL
    }
}

/// Eigenvalues above `-UNSTABLE_TOL` count as transversally stable.
pub const UNSTABLE_TOL: f64 = 1e-9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(a: &mut [f64]) -> f64 {
    let n = dot(a, a).sqrt();
    if n > 0.0 {
        a.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Tridiagonal `(1/dt) K + dt I` solve, used as the eigen-solver preconditioner.
fn sobolev_solve(dt: f64, x: &mut [f64]) {
    let n = x.len();
    if n == 0 {
        return;
    }
    let (diag, off) = (2.0 / dt + dt, -1.0 / dt);
    let mut c = vec![0.0; n];
    let mut prev_c = 0.0;
    let mut prev_x = 0.0;
    for i in 0..n {
        let inv = 1.0 / (diag - off * prev_c);
        c[i] = off * inv;
        x[i] = (x[i] - off * prev_x) * inv;
        prev_c = c[i];
        prev_x = x[i];
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
}

/// Lowest eigenpair of the transverse Hessian by locally optimal block
/// preconditioned conjugate gradient with a single vector.
pub fn transverse_mode(path: &Path, params: &ModelParams) -> Result<TransverseMode> {
    const MAX_ITERS: usize = 2000;
    const REL_TOL: f64 = 1e-8;

    let mut hess = TransverseHessian::new(path, params)?;
    let dim = hess.dim();
    let n = path.intervals();
    let mut x: Vec<f64> = (1..n)
        .map(|i| {
            let s = i as f64 / n as f64;
            (std::f64::consts::PI * s).sin() * (1.0 + 0.3 * (7.0 * s).cos())
        })
        .collect();
    normalize(&mut x);
    let mut hx = vec![0.0; dim];
    hess.apply(&x, &mut hx);
    let mut p: Option<Vec<f64>> = None;
    let mut rho = dot(&x, &hx);
    let mut res_norm = f64::INFINITY;
    let mut iterations = 0;

    // scale for the relative residual test
    let scale = {
        let mut probe = vec![0.0; dim];
        probe[dim / 2] = 1.0;
        let mut hp = vec![0.0; dim];
        hess.apply(&probe, &mut hp);
        dot(&probe, &hp).abs().max(1e-300)
    };

    while iterations < MAX_ITERS {
        let r: Vec<f64> = hx.iter().zip(&x).map(|(h, xi)| h - rho * xi).collect();
        res_norm = dot(&r, &r).sqrt();
        if res_norm <= REL_TOL * scale {
            break;
        }
        iterations += 1;
        let mut w = r;
        sobolev_solve(path.dt, &mut w);

        // orthonormal basis of span{x, w, p}
        let mut basis: Vec<Vec<f64>> = vec![x.clone()];
        for cand in std::iter::once(w).chain(p.take()) {
            let mut c = cand;
            for _ in 0..2 {
                for b in &basis {
                    let proj = dot(&c, b);
                    c.iter_mut().zip(b).for_each(|(ci, bi)| *ci -= proj * bi);
                }
            }
            if normalize(&mut c) > 1e-14 {
                basis.push(c);
            }
        }
        let k = basis.len();
        let hb: Vec<Vec<f64>> = basis
            .iter()
            .map(|b| {
                let mut out = vec![0.0; dim];
                hess.apply(b, &mut out);
                out
            })
            .collect();
        let small = DMatrix::from_fn(k, k, |a, b| 0.5 * (dot(&basis[a], &hb[b]) + dot(&basis[b], &hb[a])));
        let eig = SymmetricEigen::new(small);
        let (imin, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty subspace");
        let y = eig.eigenvectors.column(imin);
        let mut xn = vec![0.0; dim];
        let mut hxn = vec![0.0; dim];
        let mut pn = vec![0.0; dim];
        for a in 0..k {
            for i in 0..dim {
                xn[i] += y[a] * basis[a][i];
                hxn[i] += y[a] * hb[a][i];
                if a > 0 {
                    pn[i] += y[a] * basis[a][i];
                }
            }
        }
        let nx = normalize(&mut xn);
        hxn.iter_mut().for_each(|h| *h /= nx);
        x = xn;
        hx = hxn;
        rho = dot(&x, &hx);
        p = Some(pn);
        if !rho.is_finite() {
            return Err(Error::RootSearch("transverse eigen-solver diverged".into()));
        }
    }

    let peak = x
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(1.0);
    let mut mode = Vec::with_capacity(n + 1);
    mode.push(0.0);
    mode.extend(x.iter().map(|xi| xi / peak));
    mode.push(0.0);
    Ok(TransverseMode {
        eigenvalue: rho,
        mode,
        iterations,
        residual: res_norm,
    })
}
