//! Delayed Maier-Stein vector field, its fixed points and linear stability,
//! plus the small-delay reduced model (reduced drift, quasi-potential and
//! transverse stability coefficients).

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point `(u, v)` of the two-dimensional phase space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub u: f64,
    pub v: f64,
}

impl State {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn norm(self) -> f64 {
        self.u.hypot(self.v)
    }

    pub fn norm_sq(self) -> f64 {
        self.u * self.u + self.v * self.v
    }

    pub fn dot(self, other: State) -> f64 {
        self.u * other.u + self.v * other.v
    }

    pub fn dist(self, other: State) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    /// Reflection `v -> -v`.
    pub fn mirror(self) -> State {
        State::new(self.u, -self.v)
    }
}

impl Add for State {
    type Output = State;
    fn add(self, rhs: State) -> State {
        State::new(self.u + rhs.u, self.v + rhs.v)
    }
}

impl Sub for State {
    type Output = State;
    fn sub(self, rhs: State) -> State {
        State::new(self.u - rhs.u, self.v - rhs.v)
    }
}

impl Neg for State {
    type Output = State;
    fn neg(self) -> State {
        State::new(-self.u, -self.v)
    }
}

impl Mul<State> for f64 {
    type Output = State;
    fn mul(self, rhs: State) -> State {
        State::new(self * rhs.u, self * rhs.v)
    }
}

impl AddAssign for State {
    fn add_assign(&mut self, rhs: State) {
        self.u += rhs.u;
        self.v += rhs.v;
    }
}

impl SubAssign for State {
    fn sub_assign(&mut self, rhs: State) {
        self.u -= rhs.u;
        self.v -= rhs.v;
    }
}

/// Row-major 2x2 matrix, used for drift Jacobians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub a: [[f64; 2]; 2],
}

impl Mat2 {
    /// `self^T * x`.
    pub fn transpose_apply(&self, x: State) -> State {
        State::new(
            self.a[0][0] * x.u + self.a[1][0] * x.v,
            self.a[0][1] * x.u + self.a[1][1] * x.v,
        )
    }

    pub fn apply(&self, x: State) -> State {
        State::new(
            self.a[0][0] * x.u + self.a[0][1] * x.v,
            self.a[1][0] * x.u + self.a[1][1] * x.v,
        )
    }
}

/// One problem instance: delay, non-conservation and noise intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tau: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl ModelParams {
    pub fn new(tau: f64, beta: f64, epsilon: f64) -> Result<Self> {
        let p = Self { tau, beta, epsilon };
        p.validate()?;
        Ok(p)
    }

    /// Conservative (`beta = 1`) instance with the default noise level 0.02.
    pub fn conservative(tau: f64) -> Result<Self> {
        Self::new(tau, 1.0, 0.02)
    }

    pub fn with_tau(self, tau: f64) -> Result<Self> {
        Self::new(tau, self.beta, self.epsilon)
    }

    pub fn with_beta(self, beta: f64) -> Result<Self> {
        Self::new(self.tau, beta, self.epsilon)
    }

    pub fn with_epsilon(self, epsilon: f64) -> Result<Self> {
        Self::new(self.tau, self.beta, epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(invalid("tau", format!("must be finite and >= 0, got {}", self.tau)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(invalid("beta", format!("must be finite and > 0, got {}", self.beta)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(invalid(
                "epsilon",
                format!("must be finite and > 0, got {}", self.epsilon),
            ));
        }
        Ok(())
    }

    fn require_reduced(&self) -> Result<()> {
        if self.beta != 1.0 {
            return Err(Error::NonConservative(self.beta));
        }
        if self.tau == 1.0 {
            return Err(Error::SingularDelay);
        }
        Ok(())
    }
}

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        field,
        reason: reason.into(),
    }
}

/// A drift `F(x(t), x(t - tau))` together with its partial Jacobians.
pub trait DelayedDrift {
    fn eval(&self, x: State, x_del: State) -> State;

    /// Jacobians with respect to the instantaneous and the delayed argument.
    fn jacobians(&self, x: State, x_del: State) -> (Mat2, Mat2);
}

/// The Maier-Stein field whose linear terms act through the delayed state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaierStein {
    pub beta: f64,
}

impl From<&ModelParams> for MaierStein {
    fn from(p: &ModelParams) -> Self {
        MaierStein { beta: p.beta }
    }
}

impl DelayedDrift for MaierStein {
    #[inline]
    fn eval(&self, x: State, x_del: State) -> State {
        let (u, v) = (x.u, x.v);
        State::new(
            x_del.u - u * u * u - self.beta * u * v * v,
            -x_del.v - u * u * v,
        )
    }

    #[inline]
    fn jacobians(&self, x: State, _x_del: State) -> (Mat2, Mat2) {
        let (u, v) = (x.u, x.v);
        let inst = Mat2 {
            a: [
                [-3.0 * u * u - self.beta * v * v, -2.0 * self.beta * u * v],
                [-2.0 * u * v, -u * u],
            ],
        };
        let del = Mat2 {
            a: [[1.0, 0.0], [0.0, -1.0]],
        };
        (inst, del)
    }
}

pub fn drift(x: State, x_del: State, params: &ModelParams) -> State {
    MaierStein::from(params).eval(x, x_del)
}

pub const A: State = State::new(-1.0, 0.0);
pub const B: State = State::new(1.0, 0.0);
pub const SADDLE: State = State::new(0.0, 0.0);

/// The two stable states and the saddle: `(A, B, saddle)`.
pub fn fixed_points() -> (State, State, State) {
    (A, B, SADDLE)
}

/// Small-delay expansion of the conservative field.
pub fn reduced_drift(x: State, params: &ModelParams) -> Result<State> {
    if params.beta != 1.0 {
        return Err(Error::NonConservative(params.beta));
    }
    let (u, v, tau) = (x.u, x.v, params.tau);
    Ok(State::new(
        (1.0 - tau) * (u - u * u * u - u * v * v),
        (1.0 + tau) * (-v - u * u * v),
    ))
}

/// Potential-like function `W(u, v)` of the reduced model.
pub fn quasi_potential(x: State, params: &ModelParams) -> Result<f64> {
    params.require_reduced()?;
    let (u, v, tau) = (x.u, x.v, params.tau);
    let u2 = u * u;
    Ok((0.5 * u2 * u2 - u2) / (2.0 * (1.0 - tau))
        + v * v / (2.0 * (1.0 + tau))
        + u2 * v * v / (1.0 - tau * tau))
}

/// Coefficients of the transverse expansion `m0(u) + m2(u) v^2` of the
/// geometric action of the on-axis segment from A to `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransverseStability {
    pub m0: f64,
    pub m2: f64,
}

/// Transverse stability coefficient on the left segment (`u <= 0`).
pub fn m2(u: f64, params: &ModelParams) -> Result<f64> {
    params.require_reduced()?;
    if !(u <= 0.0) {
        return Err(invalid("u", format!("m2 is only defined for u <= 0, got {u}")));
    }
    let tau = params.tau;
    let coef = 1.0 / (2.0 * (1.0 + tau)) + u * u / (1.0 - tau * tau);
    Ok(if tau < 1.0 { coef } else { -coef })
}

/// Both expansion coefficients for `u <= 0`. `m0` is `|W(u, 0) - W(A)|`,
/// which equals `(u^2 - 1)^2 / (4 |1 - tau|)`.
pub fn transverse_stability(u: f64, params: &ModelParams) -> Result<TransverseStability> {
    let m2 = m2(u, params)?;
    let m0 = (quasi_potential(State::new(u, 0.0), params)? - quasi_potential(A, params)?).abs();
    Ok(TransverseStability { m0, m2 })
}

/// Whether the reduced model predicts a transversally unstable on-axis path.
pub fn on_axis_unstable(params: &ModelParams) -> Result<bool> {
    params.require_reduced()?;
    Ok(params.tau > 1.0)
}

/// Which linearised component a characteristic equation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharBranch {
    /// `lambda = exp(-lambda tau) - 3`
    U,
    /// `lambda = -exp(-lambda tau) - 1`
    V,
}

impl CharBranch {
    fn residual(self, lambda: Complex64, tau: f64) -> (Complex64, Complex64) {
        let e = (-lambda * tau).exp();
        match self {
            CharBranch::U => (lambda - e + 3.0, 1.0 + tau * e),
            CharBranch::V => (lambda + e + 1.0, Complex64::new(1.0, 0.0) - tau * e),
        }
    }

    /// Absolute residual of the characteristic equation at `lambda`.
    pub fn residual_norm(self, lambda: Complex64, tau: f64) -> f64 {
        self.residual(lambda, tau).0.norm()
    }
}

const ROOT_TOL: f64 = 1e-10;
const RE_WINDOW: (f64, f64) = (-10.0, 2.0);
const IM_WINDOW: (f64, f64) = (0.0, 20.0);

fn refine_root(branch: CharBranch, seed: Complex64, tau: f64) -> Option<Complex64> {
    let mut z = seed;
    for _ in 0..100 {
        let (g, dg) = branch.residual(z, tau);
        if g.norm() < ROOT_TOL {
            return Some(z);
        }
        if dg.norm() < 1e-14 {
            return None;
        }
        let mut step = g / dg;
        // damp long jumps so the iterate stays near its seed cell
        let len = step.norm();
        if len > 1.0 {
            step /= len;
        }
        z -= step;
        if !z.re.is_finite() || !z.im.is_finite() {
            return None;
        }
    }
    let (g, _) = branch.residual(z, tau);
    (g.norm() < ROOT_TOL).then_some(z)
}

/// Rightmost root of one characteristic equation inside the search window.
pub fn rightmost_branch_root(branch: CharBranch, tau: f64) -> Result<Complex64> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(invalid("tau", format!("must be finite and >= 0, got {tau}")));
    }
    let mut best: Option<Complex64> = None;
    let (n_re, n_im) = (49, 41);
    for i in 0..n_re {
        let re = RE_WINDOW.0 + (RE_WINDOW.1 - RE_WINDOW.0) * i as f64 / (n_re - 1) as f64;
        for j in 0..n_im {
            let im = IM_WINDOW.0 + (IM_WINDOW.1 - IM_WINDOW.0) * j as f64 / (n_im - 1) as f64;
            let Some(root) = refine_root(branch, Complex64::new(re, im), tau) else {
                continue;
            };
            let inside = root.re >= RE_WINDOW.0 - 1.0
                && root.re <= RE_WINDOW.1 + 1.0
                && root.im.abs() <= IM_WINDOW.1 + 1.0;
            if inside && best.is_none_or(|b| root.re > b.re) {
                best = Some(Complex64::new(root.re, root.im.abs()));
            }
        }
    }
    best.ok_or_else(|| {
        Error::RootSearch(format!("no root of the {branch:?} branch found for tau = {tau}"))
    })
}

/// Rightmost characteristic root of the linearisation at A or B.
pub fn rightmost_char_root(point: State, params: &ModelParams) -> Result<Complex64> {
    if point != A && point != B {
        return Err(invalid("point", "must be one of the stable states A or B"));
    }
    let u = rightmost_branch_root(CharBranch::U, params.tau)?;
    let v = rightmost_branch_root(CharBranch::V, params.tau)?;
    Ok(if u.re >= v.re { u } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(tau: f64, beta: f64) -> ModelParams {
        ModelParams::new(tau, beta, 0.02).unwrap()
    }

    #[test]
    fn drift_hand_values() {
        let params = p(0.0, 1.0);
        assert_eq!(drift(A, A, &params), State::new(0.0, 0.0));
        assert_eq!(drift(SADDLE, SADDLE, &p(0.0, 2.7)), State::new(0.0, 0.0));
        let f = drift(State::new(0.5, 0.2), State::new(0.4, 0.1), &params);
        assert_abs_diff_eq!(f.u, 0.255, epsilon = 1e-15);
        assert_abs_diff_eq!(f.v, -0.15, epsilon = 1e-15);
    }

    #[test]
    fn fixed_points_are_zeros() {
        let (a, b, s) = fixed_points();
        assert_eq!(a, State::new(-1.0, 0.0));
        assert_eq!(b, State::new(1.0, 0.0));
        for beta in [0.5, 1.0, 2.0] {
            for x in [a, b, s] {
                assert_eq!(drift(x, x, &p(0.7, beta)), State::default());
            }
        }
    }

    #[test]
    fn params_reject_bad_values() {
        assert!(matches!(
            ModelParams::new(-1.0, 1.0, 0.1),
            Err(Error::InvalidParam { field: "tau", .. })
        ));
        assert!(matches!(
            ModelParams::new(0.1, 0.0, 0.1),
            Err(Error::InvalidParam { field: "beta", .. })
        ));
        assert!(matches!(
            ModelParams::new(0.1, 1.0, 0.0),
            Err(Error::InvalidParam { field: "epsilon", .. })
        ));
    }

    #[test]
    fn reduced_drift_values() {
        assert_eq!(reduced_drift(A, &p(0.5, 1.0)).unwrap(), State::default());
        let f = reduced_drift(State::new(0.5, 0.0), &p(0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(f.u, 0.375, epsilon = 1e-15);
        let f = reduced_drift(State::new(0.5, 0.0), &p(0.5, 1.0)).unwrap();
        assert_abs_diff_eq!(f.u, 0.1875, epsilon = 1e-15);
        assert!(matches!(
            reduced_drift(A, &p(0.5, 0.8)),
            Err(Error::NonConservative(_))
        ));
    }

    #[test]
    fn quasi_potential_values() {
        assert_eq!(quasi_potential(SADDLE, &p(0.4, 1.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(quasi_potential(A, &p(0.0, 1.0)).unwrap(), -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(quasi_potential(B, &p(0.5, 1.0)).unwrap(), -0.5, epsilon = 1e-15);
        assert!(matches!(
            quasi_potential(A, &p(1.0, 1.0)),
            Err(Error::SingularDelay)
        ));
    }

    #[test]
    fn quasi_potential_axis_critical_points() {
        let h = 1e-6;
        for tau in [0.0, 0.3, 0.7, 1.5] {
            let params = p(tau, 1.0);
            let w = |u: f64| quasi_potential(State::new(u, 0.0), &params).unwrap();
            for u in [-1.0, 0.0, 1.0] {
                let d = (w(u + h) - w(u - h)) / (2.0 * h);
                assert!(d.abs() < 1e-8, "tau={tau} u={u} dW={d}");
            }
            for u in [-0.6, -0.3, 0.4] {
                let d = (w(u + h) - w(u - h)) / (2.0 * h);
                assert!(d.abs() > 1e-3);
            }
        }
    }

    #[test]
    fn m2_values_and_errors() {
        assert_abs_diff_eq!(m2(-1.0, &p(0.0, 1.0)).unwrap(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m2(0.0, &p(2.0, 1.0)).unwrap(), -1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m2(-0.5, &p(0.5, 1.0)).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert!(m2(0.1, &p(0.5, 1.0)).is_err());
        assert!(matches!(m2(-0.5, &p(1.0, 1.0)), Err(Error::SingularDelay)));
    }

    #[test]
    fn m2_sign_change_across_unit_delay() {
        for i in 0..=20 {
            let u = -(i as f64) / 20.0;
            for tau in [0.05, 0.3, 0.6, 0.95] {
                assert!(m2(u, &p(tau, 1.0)).unwrap() > 0.0);
            }
        }
        for tau in [1.01, 1.2, 2.0, 5.0] {
            assert!(m2(0.0, &p(tau, 1.0)).unwrap() < 0.0);
        }
    }

    #[test]
    fn transverse_expansion_matches_w() {
        // m0 + m2 v^2 reproduces |W(u,v) - W(A)| to second order in v
        for tau in [0.2, 0.6, 1.4] {
            let params = p(tau, 1.0);
            for u in [-0.9, -0.5, -0.1] {
                let ts = transverse_stability(u, &params).unwrap();
                assert!(ts.m0 >= 0.0);
                let v = 1e-3;
                let exact = (quasi_potential(State::new(u, v), &params).unwrap()
                    - quasi_potential(A, &params).unwrap())
                .abs();
                assert_abs_diff_eq!(exact, ts.m0 + ts.m2 * v * v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn on_axis_instability() {
        assert!(!on_axis_unstable(&p(0.3, 1.0)).unwrap());
        assert!(on_axis_unstable(&p(1.2, 1.0)).unwrap());
        assert!(!on_axis_unstable(&p(0.0, 1.0)).unwrap());
        assert!(on_axis_unstable(&p(1.0, 1.0)).is_err());
    }

    #[test]
    fn char_root_without_delay() {
        for point in [A, B] {
            let r = rightmost_char_root(point, &p(0.0, 1.0)).unwrap();
            assert_abs_diff_eq!(r.re, -2.0, epsilon = 1e-10);
            assert_abs_diff_eq!(r.im, 0.0, epsilon = 1e-10);
        }
        assert!(rightmost_char_root(SADDLE, &p(0.0, 1.0)).is_err());
    }

    #[test]
    fn char_roots_stable_with_delay() {
        for tau in [0.5, 1.0, 2.0, 5.0] {
            let r = rightmost_char_root(B, &p(tau, 1.0)).unwrap();
            assert!(r.re < 0.0, "tau={tau} root={r}");
            let ru = rightmost_branch_root(CharBranch::U, tau).unwrap();
            assert!(CharBranch::U.residual_norm(ru, tau) < 1e-10);
            let rv = rightmost_branch_root(CharBranch::V, tau).unwrap();
            assert!(CharBranch::V.residual_norm(rv, tau) < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn drift_symmetries(u in -2.0..2.0f64, v in -2.0..2.0f64,
                            ud in -2.0..2.0f64, vd in -2.0..2.0f64, beta in 0.1..3.0f64) {
            let params = p(0.5, beta);
            let f = drift(State::new(u, v), State::new(ud, vd), &params);
            let g = drift(State::new(-u, v), State::new(-ud, vd), &params);
            prop_assert!((f.u + g.u).abs() < 1e-12 && (f.v - g.v).abs() < 1e-12);
            let h = drift(State::new(u, -v), State::new(ud, -vd), &params);
            prop_assert!((f.u - h.u).abs() < 1e-12 && (f.v + h.v).abs() < 1e-12);
        }

        #[test]
        fn reduced_drift_at_zero_delay_is_full_drift(u in -2.0..2.0f64, v in -2.0..2.0f64) {
            let params = p(0.0, 1.0);
            let x = State::new(u, v);
            let r = reduced_drift(x, &params).unwrap();
            let f = drift(x, x, &params);
            prop_assert!((r.u - f.u).abs() < 1e-12 && (r.v - f.v).abs() < 1e-12);
        }
    }
}
