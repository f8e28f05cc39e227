//! Stochastic delayed dynamics: the history window that carries the delayed
//! argument, Euler-Maruyama steps and the fixed-step RK4 scheme used for the
//! noise-free system.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{invalid, DelayedDrift, MaierStein, Mat2, ModelParams, State};
use crate::path::{delay_steps, fmt17, read_table};

/// Largest step used for stochastic runs.
pub const MAX_STOCHASTIC_DT: f64 = 1e-3;

/// Step for stochastic runs: `dt = tau / m` with the smallest `m` giving
/// `dt <= 1e-3`, or `1e-3` without delay.
pub fn stochastic_dt(tau: f64) -> f64 {
    if tau == 0.0 {
        MAX_STOCHASTIC_DT
    } else {
        let m = (tau / MAX_STOCHASTIC_DT - 1e-9).ceil().max(1.0);
        tau / m
    }
}

/// States over the last delay window `[t - tau, t]`, `m + 1` samples spaced
/// by `dt`. Stored as a ring; the oldest sample is the delayed argument.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    states: Vec<State>,
    /// Index of the oldest sample.
    head: usize,
    dt: f64,
}

impl HistoryBuffer {
    /// Window filled with a constant state.
    pub fn constant(x: State, tau: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("must be finite and > 0, got {dt}")));
        }
        let m = delay_steps(tau, dt)?;
        Ok(Self {
            states: vec![x; m + 1],
            head: 0,
            dt,
        })
    }

    /// Window from explicit samples, oldest first.
    pub fn from_states(states: Vec<State>, dt: f64) -> Result<Self> {
        if states.is_empty() {
            return Err(invalid("history", "needs at least one state"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("must be finite and > 0, got {dt}")));
        }
        Ok(Self {
            states,
            head: 0,
            dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Delay in steps, `m`.
    pub fn delay_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn tau(&self) -> f64 {
        self.delay_steps() as f64 * self.dt
    }

    #[inline]
    pub fn current(&self) -> State {
        let len = self.states.len();
        self.states[(self.head + len - 1) % len]
    }

    /// `x(t - tau)`.
    #[inline]
    pub fn delayed(&self) -> State {
        self.states[self.head]
    }

    /// `x(t - tau + dt)`; equals the current state when there is no delay.
    #[inline]
    pub fn delayed_next(&self) -> State {
        self.states[(self.head + 1) % self.states.len()]
    }

    /// Appends the newest state, dropping the oldest.
    #[inline]
    pub fn push(&mut self, x: State) {
        self.states[self.head] = x;
        self.head += 1;
        if self.head == self.states.len() {
            self.head = 0;
        }
    }

    /// Samples from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = State> + '_ {
        let len = self.states.len();
        (0..len).map(move |k| self.states[(self.head + k) % len])
    }

    /// Writes the window as `offset,u,v` with offsets in `[-tau, 0]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "offset,u,v")?;
        let m = self.delay_steps();
        for (k, x) in self.iter().enumerate() {
            let offset = -((m - k) as f64) * self.dt;
            writeln!(w, "{},{},{}", fmt17(offset), fmt17(x.u), fmt17(x.v))?;
        }
        Ok(())
    }

    /// Reads the `offset,u,v` form; offsets must run uniformly up to 0.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let rows = read_table(r, &["offset", "u", "v"])?;
        let Some(last) = rows.last() else {
            return Err(Error::Parse {
                row: 2,
                reason: "history window has no rows".into(),
            });
        };
        if last.1[0].abs() > 1e-12 {
            return Err(Error::Parse {
                row: last.0,
                reason: format!("last offset must be 0, got {}", last.1[0]),
            });
        }
        if rows.len() == 1 {
            return Err(Error::Parse {
                row: last.0,
                reason: "a single-row window does not define dt".into(),
            });
        }
        let dt = rows[1].1[0] - rows[0].1[0];
        if !(dt > 0.0) {
            return Err(Error::Parse {
                row: rows[1].0,
                reason: "offsets must increase".into(),
            });
        }
        let m = rows.len() - 1;
        for (k, (line, vals)) in rows.iter().enumerate() {
            let expected = -((m - k) as f64) * dt;
            if (vals[0] - expected).abs() > 1e-6 * dt {
                return Err(Error::Parse {
                    row: *line,
                    reason: format!("offset {} breaks uniform spacing", vals[0]),
                });
            }
        }
        let states = rows.iter().map(|(_, v)| State::new(v[1], v[2])).collect();
        HistoryBuffer::from_states(states, dt)
    }
}

/// One Euler-Maruyama step for an arbitrary delayed drift with additive
/// isotropic noise of intensity `epsilon`. Does not modify the buffer.
#[inline]
pub fn em_step_with<D: DelayedDrift>(
    drift: &D,
    history: &HistoryBuffer,
    epsilon: f64,
    dt: f64,
    noise: (f64, f64),
) -> State {
    let x = history.current();
    let f = drift.eval(x, history.delayed());
    let amp = (epsilon * dt).sqrt();
    State::new(
        x.u + dt * f.u + amp * noise.0,
        x.v + dt * f.v + amp * noise.1,
    )
}

/// Euler-Maruyama step of the delayed Maier-Stein system; the caller pushes
/// the returned state into the buffer.
pub fn em_step(
    history: &HistoryBuffer,
    params: &ModelParams,
    dt: f64,
    noise: (f64, f64),
) -> Result<State> {
    if (dt - history.dt()).abs() > 1e-12 * dt {
        return Err(invalid("dt", format!("step {dt} differs from the history spacing {}", history.dt())));
    }
    Ok(em_step_with(
        &MaierStein::from(params),
        history,
        params.epsilon,
        dt,
        noise,
    ))
}

/// Pair of independent standard normal draws.
#[inline]
pub fn normal_pair<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    (rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Noisy trajectory of a delayed system: history window plus elapsed time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<D = MaierStein> {
    pub drift: D,
    pub epsilon: f64,
    pub history: HistoryBuffer,
    pub time: f64,
}

impl<D: DelayedDrift> Trajectory<D> {
    pub fn new(drift: D, epsilon: f64, history: HistoryBuffer) -> Self {
        Self {
            drift,
            epsilon,
            history,
            time: 0.0,
        }
    }

    #[inline]
    pub fn state(&self) -> State {
        self.history.current()
    }

    /// Advances one step with the given standard normal pair.
    #[inline]
    pub fn step_with(&mut self, noise: (f64, f64)) -> State {
        let dt = self.history.dt();
        let x = em_step_with(&self.drift, &self.history, self.epsilon, dt, noise);
        self.history.push(x);
        self.time += dt;
        x
    }

    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> State {
        let noise = normal_pair(rng);
        self.step_with(noise)
    }
}

/// Delayed Ornstein-Uhlenbeck system `x' = -x(t - tau)` per component; its
/// stationary variance under noise `epsilon` is known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DelayedOu;

impl DelayedDrift for DelayedOu {
    #[inline]
    fn eval(&self, _x: State, x_del: State) -> State {
        -x_del
    }

    fn jacobians(&self, _x: State, _x_del: State) -> (Mat2, Mat2) {
        (
            Mat2 { a: [[0.0; 2]; 2] },
            Mat2 {
                a: [[-1.0, 0.0], [0.0, -1.0]],
            },
        )
    }
}

/// Stationary variance of `x' = -x(t - tau) + sqrt(epsilon) eta`, valid for
/// `tau < pi / 2`.
pub fn delayed_ou_variance(epsilon: f64, tau: f64) -> f64 {
    0.5 * epsilon * (1.0 + tau.sin()) / tau.cos()
}

/// Fixed-step RK4 for the noise-free delayed system. The delayed argument at
/// the half step is the linear interpolation of the two stored samples that
/// bracket it.
#[inline]
pub fn rk4_step<D: DelayedDrift>(drift: &D, history: &HistoryBuffer) -> State {
    let h = history.dt();
    let x = history.current();
    if history.delay_steps() == 0 {
        let k1 = drift.eval(x, x);
        let x2 = x + (0.5 * h) * k1;
        let k2 = drift.eval(x2, x2);
        let x3 = x + (0.5 * h) * k2;
        let k3 = drift.eval(x3, x3);
        let x4 = x + h * k3;
        let k4 = drift.eval(x4, x4);
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let d0 = history.delayed();
    let d1 = history.delayed_next();
    let dh = 0.5 * (d0 + d1);
    let k1 = drift.eval(x, d0);
    let k2 = drift.eval(x + (0.5 * h) * k1, dh);
    let k3 = drift.eval(x + (0.5 * h) * k2, dh);
    let k4 = drift.eval(x + h * k3, d1);
    x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}
