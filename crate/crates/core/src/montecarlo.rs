//! Monte Carlo estimate of the value under a given investment/stopping rule.
//!
//! Only `mu' pi` and `pi' Sigma pi` enter the wealth dynamics, so each path
//! is driven by a single Brownian motion:
//! `dX = (r X + mu' pi) dt + sqrt(pi' Sigma pi) dB`. Stopping is checked on the
//! simulation grid; wealth is absorbed at zero with no further investment.
//! Every path (or antithetic pair) draws from its own ChaCha stream, so the
//! estimate does not depend on how the work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{MarketParams, ProblemSpec};
use crate::primal::PolicySurface;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCConfig {
    pub n_paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for MCConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt_sim: 1e-3,
            seed: 20240601,
            antithetic: true,
        }
    }
}

impl MCConfig {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.n_paths < 1000 {
            return Err(Error::Config(format!(
                "n_paths must be at least 1000, got {}",
                self.n_paths
            )));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "antithetic sampling needs an even n_paths, got {}",
                self.n_paths
            )));
        }
        if !(self.dt_sim > 0.0 && self.dt_sim <= horizon / 100.0) {
            return Err(Error::Config(format!(
                "dt_sim must lie in (0, T/100 = {}], got {}",
                horizon / 100.0,
                self.dt_sim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Paths stopped strictly before the horizon.
    pub n_stopped_early: usize,
    pub mean_tau: f64,
    /// The start point was already in the stopping region.
    pub started_in_exercise: bool,
}

/// An investment rule and a stopping rule.
pub trait Policy: Sync {
    fn should_stop(&self, x: f64, t: f64) -> bool;

    /// Writes the holding at `(x, t)` into `pi`. `hint` is per-path scratch
    /// that lookups may use to remember where the previous query landed.
    fn portfolio(&self, x: f64, t: f64, hint: &mut usize, pi: &mut [f64]);

    /// `(mu' pi, pi' Sigma pi)` at `(x, t)`; `pi` is scratch space. Override
    /// when the two moments are cheaper to get directly.
    fn moments(&self, x: f64, t: f64, hint: &mut usize, market: &MarketParams<f64>, pi: &mut [f64]) -> (f64, f64) {
        self.portfolio(x, t, hint, pi);
        let drift = market.mu.iter().zip(pi.iter()).map(|(m, p)| m * p).sum();
        (drift, quad_form(&market.sigma, pi))
    }
}

impl Policy for PolicySurface<f64> {
    fn should_stop(&self, x: f64, t: f64) -> bool {
        self.stop_at(x, t)
    }

    fn portfolio(&self, x: f64, t: f64, hint: &mut usize, pi: &mut [f64]) {
        let s = self.exposure_hinted(x, t, hint);
        for (p, &k) in pi.iter_mut().zip(&self.kelly) {
            *p = k * s;
        }
    }

    // pi = Sigma^-1 mu s  =>  mu' pi = a2 s,  pi' Sigma pi = a2 s^2
    fn moments(&self, x: f64, t: f64, hint: &mut usize, _market: &MarketParams<f64>, _pi: &mut [f64]) -> (f64, f64) {
        let s = self.exposure_hinted(x, t, hint);
        (self.a2 * s, self.a2 * s * s)
    }
}

/// Same stopping rule, holdings multiplied by `factor`.
pub struct Scaled<'a, P> {
    pub inner: &'a P,
    pub factor: f64,
}

impl<P: Policy> Policy for Scaled<'_, P> {
    fn should_stop(&self, x: f64, t: f64) -> bool {
        self.inner.should_stop(x, t)
    }

    fn portfolio(&self, x: f64, t: f64, hint: &mut usize, pi: &mut [f64]) {
        self.inner.portfolio(x, t, hint, pi);
        pi.iter_mut().for_each(|p| *p *= self.factor);
    }

    fn moments(&self, x: f64, t: f64, hint: &mut usize, market: &MarketParams<f64>, pi: &mut [f64]) -> (f64, f64) {
        if self.factor == 0.0 {
            return (0.0, 0.0);
        }
        let (d, v) = self.inner.moments(x, t, hint, market, pi);
        (self.factor * d, self.factor * self.factor * v)
    }
}

/// Same holdings, but only stops at the horizon.
pub struct NeverStop<'a, P> {
    pub inner: &'a P,
}

impl<P: Policy> Policy for NeverStop<'_, P> {
    fn should_stop(&self, _x: f64, _t: f64) -> bool {
        false
    }

    fn portfolio(&self, x: f64, t: f64, hint: &mut usize, pi: &mut [f64]) {
        self.inner.portfolio(x, t, hint, pi);
    }

    fn moments(&self, x: f64, t: f64, hint: &mut usize, market: &MarketParams<f64>, pi: &mut [f64]) -> (f64, f64) {
        self.inner.moments(x, t, hint, market, pi)
    }
}

/// Stops immediately.
pub struct StopAlways;

impl Policy for StopAlways {
    fn should_stop(&self, _x: f64, _t: f64) -> bool {
        true
    }

    fn portfolio(&self, _x: f64, _t: f64, _hint: &mut usize, pi: &mut [f64]) {
        pi.fill(0.0);
    }
}

/// Caller-supplied rules as closures.
pub struct FnPolicy<F, S> {
    pub portfolio: F,
    pub stop: S,
}

impl<F, S> Policy for FnPolicy<F, S>
where
    F: Fn(f64, f64, &mut [f64]) + Sync,
    S: Fn(f64, f64) -> bool + Sync,
{
    fn should_stop(&self, x: f64, t: f64) -> bool {
        (self.stop)(x, t)
    }

    fn portfolio(&self, x: f64, t: f64, _hint: &mut usize, pi: &mut [f64]) {
        (self.portfolio)(x, t, pi)
    }
}

/// Riskless holdings, stop only at the horizon.
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn should_stop(&self, _x: f64, _t: f64) -> bool {
        false
    }

    fn portfolio(&self, _x: f64, _t: f64, _hint: &mut usize, pi: &mut [f64]) {
        pi.fill(0.0);
    }

    fn moments(&self, _x: f64, _t: f64, _hint: &mut usize, _market: &MarketParams<f64>, _pi: &mut [f64]) -> (f64, f64) {
        (0.0, 0.0)
    }
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// One row of a per-path trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub path_id: usize,
    pub step: usize,
    pub t: f64,
    pub x: f64,
    pub pi_norm: f64,
    pub stopped: bool,
}

#[derive(Debug, Clone, Copy)]
struct PathOutcome {
    payoff: f64,
    tau: f64,
    early: bool,
}

struct Engine<'a, P> {
    policy: &'a P,
    spec: &'a ProblemSpec<f64>,
    x0: f64,
    t0: f64,
    steps: usize,
    h: f64,
}

impl<P: Policy> Engine<'_, P> {
    /// Runs one path; `sign` flips every Brownian increment.
    fn path(
        &self,
        rng: &mut ChaCha8Rng,
        sign: f64,
        mut trace: Option<(&mut Vec<TraceRow>, usize)>,
    ) -> PathOutcome {
        let market = &self.spec.market;
        let r = market.r;
        let horizon = self.spec.horizon;
        let sq = self.h.sqrt();
        let mut pi = vec![0.0; market.mu.len()];
        let mut hint = 0;
        let mut x = self.x0;
        let mut i = 0;
        loop {
            let last = i == self.steps;
            let t = if last { horizon } else { self.t0 + i as f64 * self.h };
            let stop = last || self.policy.should_stop(x, t);
            let (drift, var) = if x > 0.0 && !stop {
                self.policy.moments(x, t, &mut hint, market, &mut pi)
            } else {
                (0.0, 0.0)
            };
            if let Some((rows, id)) = trace.as_mut() {
                let norm = if x > 0.0 && !stop {
                    self.policy.portfolio(x, t, &mut hint, &mut pi);
                    pi.iter().map(|p| p * p).sum::<f64>().sqrt()
                } else {
                    0.0
                };
                rows.push(TraceRow {
                    path_id: *id,
                    step: i,
                    t,
                    x,
                    pi_norm: norm,
                    stopped: stop,
                });
            }
            if stop {
                return PathOutcome {
                    payoff: (-r * (t - self.t0)).exp() * self.spec.utility.stop_reward(x),
                    tau: t,
                    early: !last,
                };
            }
            let z: f64 = StandardNormal.sample(rng);
            x += (r * x + drift) * self.h + var.max(0.0).sqrt() * sq * sign * z;
            x = x.max(0.0);
            i += 1;
        }
    }
}

fn quad_form(sigma: &[Vec<f64>], v: &[f64]) -> f64 {
    sigma
        .iter()
        .zip(v)
        .map(|(row, &vi)| vi * row.iter().zip(v).map(|(s, &vj)| s * vj).sum::<f64>())
        .sum()
}

fn stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn check_start(spec: &ProblemSpec<f64>, x0: f64, t0: f64, config: &MCConfig) -> Result<()> {
    config.validate(spec.horizon)?;
    if !(x0 >= 0.0 && x0.is_finite()) {
        return Err(Error::Domain(format!("x0 must be nonnegative, got {x0}")));
    }
    if !(t0 >= 0.0 && t0 < spec.horizon) {
        return Err(Error::Domain(format!(
            "t0 must lie in [0, {}), got {t0}",
            spec.horizon
        )));
    }
    Ok(())
}

fn engine<'a, P: Policy>(
    policy: &'a P,
    spec: &'a ProblemSpec<f64>,
    x0: f64,
    t0: f64,
    config: &MCConfig,
) -> Engine<'a, P> {
    let span = spec.horizon - t0;
    let steps = ((span / config.dt_sim).round() as usize).max(1);
    Engine {
        policy,
        spec,
        x0,
        t0,
        steps,
        h: span / steps as f64,
    }
}

/// Estimates the expected discounted stopping reward under `policy`.
pub fn simulate_fixed_policy<P: Policy>(
    policy: &P,
    x0: f64,
    t0: f64,
    spec: &ProblemSpec<f64>,
    config: &MCConfig,
) -> Result<MCEstimate> {
    check_start(spec, x0, t0, config)?;
    if policy.should_stop(x0, t0) {
        return Ok(MCEstimate {
            mean: spec.utility.stop_reward(x0),
            stderr: 0.0,
            n_paths: config.n_paths,
            n_stopped_early: config.n_paths,
            mean_tau: t0,
            started_in_exercise: true,
        });
    }
    let eng = engine(policy, spec, x0, t0, config);
    let per_sample = if config.antithetic { 2 } else { 1 };
    let samples = config.n_paths / per_sample;
    let outcomes: Vec<[PathOutcome; 2]> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream(config.seed, s);
            if config.antithetic {
                let a = eng.path(&mut rng, 1.0, None);
                let mut rng = stream(config.seed, s);
                let b = eng.path(&mut rng, -1.0, None);
                [a, b]
            } else {
                let a = eng.path(&mut rng, 1.0, None);
                [a, a]
            }
        })
        .collect();

    let values: Vec<f64> = outcomes
        .iter()
        .map(|[a, b]| 0.5 * (a.payoff + b.payoff))
        .collect();
    let n = values.len() as f64;
    let mean = pairwise_sum(&values) / n;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    let taus: Vec<f64> = outcomes.iter().map(|[a, b]| 0.5 * (a.tau + b.tau)).collect();
    let n_stopped_early = outcomes
        .iter()
        .map(|o| o[..per_sample].iter().filter(|p| p.early).count())
        .sum();
    Ok(MCEstimate {
        mean,
        stderr: (var / n).sqrt(),
        n_paths: config.n_paths,
        n_stopped_early,
        mean_tau: pairwise_sum(&taus) / n,
        started_in_exercise: false,
    })
}

/// Value estimate under the reconstructed optimal policy.
pub fn simulate_value(
    surface: &PolicySurface<f64>,
    x0: f64,
    t0: f64,
    spec: &ProblemSpec<f64>,
    config: &MCConfig,
) -> Result<MCEstimate> {
    simulate_fixed_policy(surface, x0, t0, spec, config)
}

/// Step-by-step record of the first `n_trace` paths, using the same
/// random streams as [`simulate_fixed_policy`].
pub fn trace_paths<P: Policy>(
    policy: &P,
    x0: f64,
    t0: f64,
    spec: &ProblemSpec<f64>,
    config: &MCConfig,
    n_trace: usize,
) -> Result<Vec<TraceRow>> {
    check_start(spec, x0, t0, config)?;
    let eng = engine(policy, spec, x0, t0, config);
    let mut rows = Vec::new();
    for id in 0..n_trace.min(config.n_paths) {
        let (s, sign) = if config.antithetic {
            (id / 2, if id % 2 == 0 { 1.0 } else { -1.0 })
        } else {
            (id, 1.0)
        };
        let mut rng = stream(config.seed, s);
        eng.path(&mut rng, sign, Some((&mut rows, id)));
    }
    Ok(rows)
}
