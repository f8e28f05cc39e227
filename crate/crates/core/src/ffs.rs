//! Transition rates of the noisy delayed system: forward flux sampling,
//! brute-force first passages, and the exponential action estimate.
//!
//! Every stored interface snapshot is a full [`HistoryBuffer`]; the process
//! is not Markovian in the instantaneous state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{invalid, MaierStein, ModelParams, State, A, B};
use crate::sdde::{stochastic_dt, HistoryBuffer, Trajectory};

/// Radius of the ball around the target minimum that counts as committed.
pub const COMMIT_RADIUS: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfsConfig {
    /// Basin-A boundary on the `u` coordinate.
    pub lambda_a: f64,
    /// Increasing interface values of `u`.
    pub interfaces: Vec<f64>,
    pub trials_per_interface: usize,
    pub n0_crossings: usize,
    pub seed: u64,
    /// Radius of the committed ball around B.
    pub commit_radius: f64,
    /// Step cap for the basin run and for each trial.
    pub max_steps: u64,
}

impl Default for FfsConfig {
    fn default() -> Self {
        Self {
            lambda_a: -0.8,
            interfaces: evenly_spaced(-0.7, 0.5, 8),
            trials_per_interface: 1000,
            n0_crossings: 500,
            seed: 0,
            commit_radius: COMMIT_RADIUS,
            max_steps: 2_000_000_000,
        }
    }
}

/// `count + 1` values from `lo` to `hi` inclusive.
pub fn evenly_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count)
        .map(|k| {
            let v = lo + (hi - lo) * k as f64 / count as f64;
            (v * 1e12).round() / 1e12
        })
        .collect()
}

impl FfsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interfaces.is_empty() {
            return Err(invalid("interfaces", "at least one interface is required"));
        }
        if self.interfaces.iter().any(|l| !l.is_finite()) || !self.lambda_a.is_finite() {
            return Err(invalid("interfaces", "values must be finite"));
        }
        if self.lambda_a >= self.interfaces[0]
            || self.interfaces.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::MisorderedInterfaces);
        }
        if *self.interfaces.last().unwrap() >= B.u - self.commit_radius {
            return Err(invalid("interfaces", "last interface must lie below the committed ball"));
        }
        if self.trials_per_interface == 0 {
            return Err(invalid("trials_per_interface", "must be positive"));
        }
        if self.n0_crossings == 0 {
            return Err(invalid("n0_crossings", "must be positive"));
        }
        if !(self.commit_radius > 0.0 && self.commit_radius < 1.0) {
            return Err(invalid("commit_radius", "must lie in (0, 1)"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps", "must be positive"));
        }
        Ok(())
    }

    /// Same endpoints with twice as many intervals between interfaces.
    pub fn refined(&self) -> Self {
        let mut interfaces = Vec::with_capacity(2 * self.interfaces.len());
        for w in self.interfaces.windows(2) {
            interfaces.push(w[0]);
            interfaces.push(0.5 * (w[0] + w[1]));
        }
        interfaces.push(*self.interfaces.last().unwrap());
        Self {
            interfaces,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    Ffs,
    Direct,
    ActionEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub method: RateMethod,
    pub tau: f64,
    pub beta: f64,
    pub epsilon: f64,
    #[serde(rename = "rate_P")]
    pub rate_p: f64,
    /// Crossing flux of the first interface (FFS), or the number of observed
    /// transitions divided by the simulated time (direct).
    pub flux0: f64,
    pub conditional_probs: Vec<f64>,
    /// Standard error of `ln rate_p`.
    pub stderr_log: f64,
    pub seed: u64,
    /// Completed first passages (direct) or basin crossings (FFS).
    pub samples: usize,
    pub simulated_time: f64,
    pub warnings: Vec<String>,
}

fn trial_rng(seed: u64, stage: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stage << 32) | trial);
    rng
}

fn start_at(x: State, params: &ModelParams, dt: f64) -> Result<Trajectory> {
    let hist = HistoryBuffer::constant(x, params.tau, dt)?;
    Ok(Trajectory::new(MaierStein::from(params), params.epsilon, hist))
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Level(f64),
    Ball(State, f64),
}

impl Target {
    #[inline]
    fn reached(self, x: State) -> bool {
        match self {
            Target::Level(l) => x.u >= l,
            Target::Ball(c, r) => x.dist(c) < r,
        }
    }
}

enum Outcome {
    Success(Box<Trajectory>),
    Failure,
    OutOfSteps,
}

fn run_trial(mut traj: Trajectory, target: Target, cfg: &FfsConfig, rng: &mut ChaCha8Rng) -> Outcome {
    for _ in 0..cfg.max_steps {
        let x = traj.step(rng);
        if target.reached(x) {
            return Outcome::Success(Box::new(traj));
        }
        if x.u < cfg.lambda_a {
            return Outcome::Failure;
        }
    }
    Outcome::OutOfSteps
}

/// Forward flux sampling estimate of the A to B rate.
pub fn ffs_rate(params: &ModelParams, cfg: &FfsConfig) -> Result<RateResult> {
    params.validate()?;
    cfg.validate()?;
    let dt = stochastic_dt(params.tau);
    let lambda0 = cfg.interfaces[0];
    let mut warnings = Vec::new();

    // basin run: count first crossings of lambda0 that started from below lambda_a
    let mut rng = trial_rng(cfg.seed, 0, 0);
    let mut traj = start_at(A, params, dt)?;
    let burn_in = ((1.0 + params.tau) / dt).ceil() as u64;
    for _ in 0..burn_in {
        traj.step(&mut rng);
    }
    let mut snapshots: Vec<Trajectory> = Vec::with_capacity(cfg.n0_crossings);
    let mut from_a = traj.state().u < cfg.lambda_a;
    let mut steps: u64 = 0;
    let mut resets = 0usize;
    while snapshots.len() < cfg.n0_crossings {
        if steps >= cfg.max_steps {
            return Err(Error::BudgetExhausted {
                observed: snapshots.len(),
                requested: cfg.n0_crossings,
            });
        }
        let x = traj.step(&mut rng);
        steps += 1;
        if x.u < cfg.lambda_a {
            from_a = true;
        } else if from_a && x.u >= lambda0 {
            from_a = false;
            let mut snap = traj.clone();
            snap.time = 0.0;
            snapshots.push(snap);
        }
        if x.dist(B) < cfg.commit_radius {
            resets += 1;
            let t = traj.time;
            traj = start_at(A, params, dt)?;
            traj.time = t;
            from_a = true;
        }
    }
    let basin_time = steps as f64 * dt;
    let flux0 = snapshots.len() as f64 / basin_time;
    if resets > 0 {
        warnings.push(format!(
            "basin run committed to B {resets} times; noise is too strong for a rare-event regime"
        ));
    }

    let n_stages = cfg.interfaces.len();
    let mut probs = Vec::with_capacity(n_stages);
    let mut var_log = 1.0 / snapshots.len() as f64;
    let mut truncated = 0usize;
    for stage in 0..n_stages {
        let target = if stage + 1 < n_stages {
            Target::Level(cfg.interfaces[stage + 1])
        } else {
            Target::Ball(B, cfg.commit_radius)
        };
        let pool = &snapshots;
        let outcomes: Vec<Outcome> = (0..cfg.trials_per_interface)
            .into_par_iter()
            .map(|trial| {
                let mut rng = trial_rng(cfg.seed, stage as u64 + 1, trial as u64);
                let pick = rng.random_range(0..pool.len());
                run_trial(pool[pick].clone(), target, cfg, &mut rng)
            })
            .collect();
        let mut next = Vec::new();
        for o in outcomes {
            match o {
                Outcome::Success(t) => next.push(*t),
                Outcome::Failure => {}
                Outcome::OutOfSteps => truncated += 1,
            }
        }
        if next.is_empty() {
            return Err(Error::InterfaceStarvation { index: stage });
        }
        let p = next.len() as f64 / cfg.trials_per_interface as f64;
        var_log += (1.0 - p) / (p * cfg.trials_per_interface as f64);
        probs.push(p);
        snapshots = next;
    }
    if truncated > 0 {
        warnings.push(format!("{truncated} trials hit the step cap and were counted as failures"));
    }
    let rate_p = flux0 * probs.iter().product::<f64>();
    Ok(RateResult {
        method: RateMethod::Ffs,
        tau: params.tau,
        beta: params.beta,
        epsilon: params.epsilon,
        rate_p,
        flux0,
        conditional_probs: probs,
        stderr_log: var_log.sqrt(),
        seed: cfg.seed,
        samples: cfg.n0_crossings,
        simulated_time: basin_time,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    AToB,
    BToA,
}

/// Brute-force rate: a single trajectory restarted at the source minimum
/// (constant history) after each commit to the target ball; the rate is the
/// inverse mean first-passage time.
pub fn direct_rate(
    params: &ModelParams,
    n_transitions: usize,
    seed: u64,
    max_steps: u64,
    direction: Direction,
) -> Result<RateResult> {
    params.validate()?;
    if n_transitions == 0 {
        return Err(invalid("n_transitions", "must be positive"));
    }
    let dt = stochastic_dt(params.tau);
    let (source, target) = match direction {
        Direction::AToB => (A, B),
        Direction::BToA => (B, A),
    };
    let mut rng = trial_rng(seed, 0, 0);
    let mut traj = start_at(source, params, dt)?;
    let mut passages = 0usize;
    let mut steps: u64 = 0;
    while passages < n_transitions {
        if steps >= max_steps {
            return Err(Error::BudgetExhausted {
                observed: passages,
                requested: n_transitions,
            });
        }
        let x = traj.step(&mut rng);
        steps += 1;
        if x.dist(target) < COMMIT_RADIUS {
            passages += 1;
            traj = start_at(source, params, dt)?;
        }
    }
    let time = steps as f64 * dt;
    let rate = passages as f64 / time;
    Ok(RateResult {
        method: RateMethod::Direct,
        tau: params.tau,
        beta: params.beta,
        epsilon: params.epsilon,
        rate_p: rate,
        flux0: rate,
        conditional_probs: vec![],
        stderr_log: 1.0 / (passages as f64).sqrt(),
        seed,
        samples: passages,
        simulated_time: time,
        warnings: vec![],
    })
}

/// `branches * exp(-S / epsilon)`.
pub fn action_rate_estimate(action: f64, params: &ModelParams, branches: usize) -> Result<f64> {
    if !(action >= 0.0 && action.is_finite()) {
        return Err(invalid("action", format!("must be finite and >= 0, got {action}")));
    }
    if !(1..=2).contains(&branches) {
        return Err(invalid("branches", format!("must be 1 or 2, got {branches}")));
    }
    Ok(branches as f64 * (-action / params.epsilon).exp())
}

/// Same estimate packaged as a [`RateResult`].
pub fn action_rate_result(action: f64, params: &ModelParams, branches: usize) -> Result<RateResult> {
    let rate = action_rate_estimate(action, params, branches)?;
    Ok(RateResult {
        method: RateMethod::ActionEstimate,
        tau: params.tau,
        beta: params.beta,
        epsilon: params.epsilon,
        rate_p: rate,
        flux0: 0.0,
        conditional_probs: vec![],
        stderr_log: 0.0,
        seed: 0,
        samples: branches,
        simulated_time: 0.0,
        warnings: vec![],
    })
}

/// `C0 = rate_ffs / rate_action`.
pub fn prefactor(rate_ffs: f64, rate_action: f64) -> Result<f64> {
    if !(rate_action > 0.0 && rate_action.is_finite()) {
        return Err(invalid("rate_action", format!("must be finite and > 0, got {rate_action}")));
    }
    if !(rate_ffs >= 0.0 && rate_ffs.is_finite()) {
        return Err(invalid("rate_ffs", format!("must be finite and >= 0, got {rate_ffs}")));
    }
    Ok(rate_ffs / rate_action)
}
