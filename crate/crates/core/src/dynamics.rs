//! Time integration of the particle flow up to `t_max` or collision.
//!
//! Two steppers share one driver: an embedded Dormand-Prince 5(4) pair with
//! PI step-size control, and implicit Euler solved by damped Newton. Steps whose
//! stages leave the increasing cone are rejected and retried with half the
//! step. The error norm measures positions absolutely and gaps relatively, so
//! the step shrinks with the closing gap and the collision time is resolved
//! without regularising the kernel.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Diagnostics, Params, ParticleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    AdaptiveRK45,
    ImplicitEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub t_max: f64,
    /// Gap (in position units) at or below which a closing pair counts as collided.
    pub collision_eps: f64,
    /// Recording cadence in time units.
    pub sample_every: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::AdaptiveRK45,
            rtol: 1e-9,
            atol: 1e-12,
            dt_init: 1e-4,
            dt_min: 1e-30,
            dt_max: 1.0,
            t_max: 100.0,
            collision_eps: 1e-9,
            sample_every: 0.1,
            newton_tol: 1e-12,
            newton_max_iter: 50,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return bad("need 0 < dt_min <= dt_init <= dt_max");
        }
        if !(self.collision_eps > 0.0) {
            return bad("collision_eps must be positive");
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad("t_max must be positive and finite");
        }
        if !(self.rtol > 0.0 && self.atol >= 0.0) {
            return bad("need rtol > 0 and atol >= 0");
        }
        if !(self.sample_every > 0.0) {
            return bad("sample_every must be positive");
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return bad("need newton_tol > 0 and newton_max_iter >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: ParticleState,
    pub diagnostics: Diagnostics,
}

/// Gap snapshot after one accepted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepProbe {
    pub t: f64,
    pub dt: f64,
    pub gaps: Vec<f64>,
    /// Time derivative of each gap.
    pub rates: Vec<f64>,
}

const TAIL_LEN: usize = 16;
/// Consecutive shrinking steps required before a small gap counts as a collision.
const COLLISION_CONFIRM: usize = 3;
/// Final steps over which a collapsing gap must shrink for a blow-up classification.
const BLOWUP_CONFIRM: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub samples: Vec<Sample>,
    pub step_count: usize,
    pub rejected_steps: usize,
    /// Accepted steps on which `G` rose by more than the step tolerance.
    pub energy_violations: usize,
    pub max_energy_increase: f64,
    pub collision_eps: f64,
    /// The last few accepted steps, oldest first.
    pub tail: Vec<StepProbe>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    ReachedTmax,
    Collision {
        t_star: f64,
        /// Size of the last accepted step.
        t_star_err: f64,
        pair: (usize, usize),
    },
    StepSizeUnderflow {
        t: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunClass {
    GlobalObserved,
    BlowupObserved,
    Undetermined,
}

// Dormand-Prince 5(4) tableau
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;

/// Result of one call to [`Integrator::advance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Advance {
    Accepted,
    Underflow,
}

/// Single-trajectory stepper. Deterministic: fixed summation order, no threads.
pub struct Integrator {
    params: Params,
    cfg: IntegratorConfig,
    x: Vec<f64>,
    t: f64,
    // compensation term for t, which stops advancing once dt < ulp(t)
    t_lo: f64,
    dt: f64,
    last_dt: f64,
    err_prev: f64,
    reject_streak: bool,
    k1: Vec<f64>,
    g: f64,
    pub step_count: usize,
    pub rejected_steps: usize,
    pub energy_violations: usize,
    pub max_energy_increase: f64,
    tail: VecDeque<StepProbe>,
}

fn axpy(out: &mut [f64], x: &[f64], terms: &[(f64, &[f64])]) {
    for i in 0..out.len() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] = x[i] + acc;
    }
}

impl Integrator {
    pub fn new(state0: &ParticleState, p: &Params, cfg: &IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        p.check_len(state0.len())?;
        let x = state0.x().to_vec();
        let k1 = model::velocity(&x, p)?;
        if k1.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain { index: 0, gap: model::gaps(&x).min() });
        }
        let g = model::energy_g(&x, p)?;
        let mut tail = VecDeque::with_capacity(TAIL_LEN);
        tail.push_back(probe(&x, &k1, state0.t(), 0.0));
        Ok(Integrator {
            params: *p,
            cfg: *cfg,
            x,
            t: state0.t(),
            t_lo: 0.0,
            dt: cfg.dt_init,
            last_dt: 0.0,
            err_prev: 1e-4,
            reject_streak: false,
            k1,
            g,
            step_count: 0,
            rejected_steps: 0,
            energy_violations: 0,
            max_energy_increase: f64::NEG_INFINITY,
            tail,
        })
    }

    pub fn t(&self) -> f64 {
        self.t + self.t_lo
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn energy(&self) -> f64 {
        self.g
    }

    pub fn last_dt(&self) -> f64 {
        self.last_dt
    }

    pub fn state(&self) -> ParticleState {
        ParticleState::new(self.x.clone(), self.t()).expect("integrator keeps states increasing")
    }

    pub fn tail(&self) -> impl Iterator<Item = &StepProbe> {
        self.tail.iter()
    }

    fn add_time(&mut self, dt: f64) {
        // Kahan summation
        let y = dt - self.t_lo;
        let s = self.t + y;
        self.t_lo = (s - self.t) - y;
        self.t = s;
    }

    /// Takes one accepted step of size at most `limit`, retrying rejected ones.
    pub fn advance(&mut self, limit: f64) -> Advance {
        loop {
            let dt = self.dt.min(self.cfg.dt_max).min(limit);
            if dt < self.cfg.dt_min && dt < limit {
                return Advance::Underflow;
            }
            let attempt = match self.cfg.method {
                Method::AdaptiveRK45 => self.try_rk45(dt),
                Method::ImplicitEuler => self.try_implicit(dt),
            };
            match attempt {
                Some(x_new) => {
                    self.accept(x_new, dt);
                    return Advance::Accepted;
                }
                None => {
                    self.rejected_steps += 1;
                    if self.dt < self.cfg.dt_min {
                        return Advance::Underflow;
                    }
                }
            }
        }
    }

    fn accept(&mut self, x_new: Vec<f64>, dt: f64) {
        let p = &self.params;
        // validated by the stepper
        let g_new = model::energy_g(&x_new, p).unwrap_or(f64::NEG_INFINITY);
        let slack = 10.0 * (self.cfg.rtol * self.g.abs() + self.cfg.atol);
        let rise = g_new - self.g;
        self.max_energy_increase = self.max_energy_increase.max(rise);
        if rise > slack {
            self.energy_violations += 1;
        }
        self.g = g_new;
        self.x = x_new;
        self.add_time(dt);
        self.last_dt = dt;
        self.step_count += 1;
        if self.tail.len() == TAIL_LEN {
            self.tail.pop_front();
        }
        self.tail.push_back(probe(&self.x, &self.k1, self.t(), dt));
    }

    fn try_rk45(&mut self, dt: f64) -> Option<Vec<f64>> {
        let p = self.params;
        let n = self.x.len();
        let x = &self.x;
        let k1 = &self.k1;
        let mut y = vec![0.0; n];
        let eval = |y: &[f64]| -> Option<Vec<f64>> {
            let v = model::velocity(y, &p).ok()?;
            v.iter().all(|c| c.is_finite()).then_some(v)
        };
        let fail = |s: &mut Self| {
            s.dt = dt * 0.5;
            s.reject_streak = true;
            None
        };

        axpy(&mut y, x, &[(dt * A21, k1)]);
        let Some(k2) = eval(&y) else { return fail(self) };
        axpy(&mut y, x, &[(dt * A31, k1), (dt * A32, &k2)]);
        let Some(k3) = eval(&y) else { return fail(self) };
        axpy(&mut y, x, &[(dt * A41, k1), (dt * A42, &k2), (dt * A43, &k3)]);
        let Some(k4) = eval(&y) else { return fail(self) };
        axpy(&mut y, x, &[(dt * A51, k1), (dt * A52, &k2), (dt * A53, &k3), (dt * A54, &k4)]);
        let Some(k5) = eval(&y) else { return fail(self) };
        axpy(&mut y, x, &[(dt * A61, k1), (dt * A62, &k2), (dt * A63, &k3), (dt * A64, &k4), (dt * A65, &k5)]);
        let Some(k6) = eval(&y) else { return fail(self) };
        let mut x_new = vec![0.0; n];
        axpy(&mut x_new, x, &[(dt * A71, k1), (dt * A73, &k3), (dt * A74, &k4), (dt * A75, &k5), (dt * A76, &k6)]);
        let Some(k7) = eval(&x_new) else { return fail(self) };

        let err_vec: Vec<f64> = (0..n)
            .map(|i| dt * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
            .collect();
        let mut err: f64 = 0.0;
        for i in 0..n {
            let sc = self.cfg.atol + self.cfg.rtol * x[i].abs().max(x_new[i].abs());
            err = err.max((err_vec[i] / sc).abs());
        }
        for i in 0..n - 1 {
            let gap = (x[i + 1] - x[i]).min(x_new[i + 1] - x_new[i]);
            let sc = self.cfg.rtol * gap;
            err = err.max(((err_vec[i + 1] - err_vec[i]) / sc).abs());
        }
        if !err.is_finite() {
            return fail(self);
        }

        let fac11 = err.powf(EXPO1);
        if err <= 1.0 {
            let mut fac = fac11 / self.err_prev.powf(BETA);
            fac = (fac / SAFETY).clamp(0.2, 10.0);
            let mut next = dt / fac;
            if self.reject_streak {
                next = next.min(dt);
            }
            self.dt = next;
            self.err_prev = err.max(1e-4);
            self.reject_streak = false;
            self.k1 = k7;
            Some(x_new)
        } else {
            self.dt = dt / (fac11 / SAFETY).min(5.0);
            self.reject_streak = true;
            None
        }
    }

    fn try_implicit(&mut self, dt: f64) -> Option<Vec<f64>> {
        match implicit_euler_solve(&self.x, &self.params, dt, &self.cfg) {
            Ok(x_new) => {
                let change = self
                    .x
                    .windows(2)
                    .zip(x_new.windows(2))
                    .map(|(a, b)| ((b[1] - b[0]) - (a[1] - a[0])).abs() / (a[1] - a[0]))
                    .fold(0.0f64, f64::max);
                if change > 0.5 {
                    self.dt = dt * 0.5;
                    return None;
                }
                let grow = if change > 0.0 { (0.25 / change).clamp(0.5, 2.0) } else { 2.0 };
                self.dt = dt * grow;
                self.k1 = model::velocity(&x_new, &self.params).ok()?;
                Some(x_new)
            }
            Err(_) => {
                self.dt = dt * 0.5;
                None
            }
        }
    }

    /// Index `i` of the pair `(i, i+1)` if the smallest gap is at or below
    /// `collision_eps` and has shrunk over the last few accepted steps.
    pub fn collision_pair(&self) -> Option<usize> {
        let last = self.tail.back()?;
        let (i, &gap) = last.gaps.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
        if gap > self.cfg.collision_eps {
            return None;
        }
        shrinking(self.tail.iter(), i, COLLISION_CONFIRM).then_some(i)
    }

    /// Extrapolated vanishing time of gap `i`.
    ///
    /// For a power-law collapse `gap ~ (t* - t)^alpha` the ratio
    /// `tau = gap / (-d gap/dt)` falls linearly to zero at `t*`; the last two
    /// accepted steps fix that line.
    pub fn collision_time(&self, i: usize) -> f64 {
        let t = self.t();
        let tau = |s: &StepProbe| (s.rates[i] < 0.0).then(|| s.gaps[i] / -s.rates[i]);
        let n = self.tail.len();
        let Some(tau_last) = tau(&self.tail[n - 1]) else { return t };
        if n >= 2 {
            let dt = self.tail[n - 1].dt;
            if let Some(tau_prev) = tau(&self.tail[n - 2]) {
                if tau_prev > tau_last && dt > 0.0 {
                    return t + tau_last * dt / (tau_prev - tau_last);
                }
            }
        }
        t + tau_last
    }
}

fn probe(x: &[f64], v: &[f64], t: f64, dt: f64) -> StepProbe {
    StepProbe {
        t,
        dt,
        gaps: x.windows(2).map(|w| w[1] - w[0]).collect(),
        rates: v.windows(2).map(|w| w[1] - w[0]).collect(),
    }
}

fn shrinking<'a>(tail: impl DoubleEndedIterator<Item = &'a StepProbe>, i: usize, count: usize) -> bool {
    let recent: Vec<f64> = tail.rev().take(count + 1).map(|s| s.gaps[i]).collect();
    recent.len() > count && recent.windows(2).all(|w| w[0] < w[1])
}

fn residual_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Solves `y = x + dt * velocity(y)` by damped Newton.
fn implicit_euler_solve(x: &[f64], p: &Params, dt: f64, cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    let n = x.len();
    let residual = |y: &[f64]| -> Option<Vec<f64>> {
        let v = model::velocity(y, p).ok()?;
        Some((0..n).map(|i| y[i] - x[i] - dt * v[i]).collect())
    };
    let v0 = model::velocity(x, p)?;
    let predictor: Vec<f64> = (0..n).map(|i| x[i] + dt * v0[i]).collect();
    let mut y = if model::check_increasing(&predictor).is_ok() { predictor } else { x.to_vec() };
    let mut r = residual(&y).ok_or(Error::Domain { index: 0, gap: 0.0 })?;
    let scale = |y: &[f64]| 1.0 + residual_norm(y);
    let mut converged = residual_norm(&r) <= cfg.newton_tol * scale(&y);
    let mut iter = 0;
    while !converged {
        if iter == cfg.newton_max_iter {
            return Err(Error::NumericalFailure {
                message: format!("implicit Euler Newton did not converge in {iter} iterations"),
                best: Some(y),
            });
        }
        iter += 1;
        let jac = model::velocity_jacobian(&y, p)?;
        let m = DMatrix::identity(n, n) - jac * dt;
        let rhs = DVector::from_iterator(n, r.iter().map(|v| -v));
        let delta = m.lu().solve(&rhs).ok_or_else(|| Error::NumericalFailure {
            message: "singular Newton matrix".into(),
            best: Some(y.clone()),
        })?;
        let r_norm = residual_norm(&r);
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = (0..n).map(|i| y[i] + alpha * delta[i]).collect();
            if model::check_increasing(&trial).is_ok() {
                if let Some(rt) = residual(&trial) {
                    if residual_norm(&rt) < r_norm * (1.0 - 1e-4 * alpha)
                        || residual_norm(&rt) <= cfg.newton_tol * scale(&trial)
                    {
                        y = trial;
                        r = rt;
                        break;
                    }
                }
            }
            alpha *= 0.5;
            if alpha < 1e-8 {
                return Err(Error::NumericalFailure {
                    message: "implicit Euler line search stalled".into(),
                    best: Some(y),
                });
            }
        }
        converged = residual_norm(&r) <= cfg.newton_tol * scale(&y);
    }
    // the step must not raise the minimising-movement functional
    let g_old = model::energy_g(x, p)?;
    let g_new = model::energy_g(&y, p)?;
    let dist2: f64 = (0..n).map(|i| (y[i] - x[i]).powi(2)).sum();
    let functional = g_new + p.metric_weight() * dist2 / (2.0 * dt);
    if functional > g_old + 1e-10 * (1.0 + g_old.abs()) {
        return Err(Error::NumericalFailure {
            message: "implicit Euler step raised the minimising-movement functional".into(),
            best: Some(y),
        });
    }
    Ok(y)
}

/// One implicit Euler step of size `dt`.
///
/// Fails with [`Error::NumericalFailure`] when Newton does not converge or the
/// result does not decrease `G(y) + w |y - x|^2 / (2 dt)`; the driver halves `dt`.
pub fn step_implicit_euler(
    state: &ParticleState,
    p: &Params,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<ParticleState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
    }
    p.check_len(state.len())?;
    let y = implicit_euler_solve(state.x(), p, dt, cfg)?;
    ParticleState::new(y, state.t() + dt)
}

fn sample_of(x: &[f64], t: f64, p: &Params) -> Result<Sample> {
    Ok(Sample { t, state: ParticleState::new(x.to_vec(), t)?, diagnostics: model::diagnostics(x, p)? })
}

/// Integrates from `state0` until `t_max`, a collision, or step-size underflow.
pub fn simulate(state0: &ParticleState, p: &Params, cfg: &IntegratorConfig) -> Result<(TrajectoryRecord, Outcome)> {
    let mut integ = Integrator::new(state0, p, cfg)?;
    let t0 = state0.t();
    let t_end = t0 + cfg.t_max;
    let mut samples = vec![sample_of(state0.x(), t0, p)?];
    let mut sample_index = 1usize;
    let next_sample = |k: usize| (t0 + k as f64 * cfg.sample_every).min(t_end);

    let outcome = loop {
        let target = next_sample(sample_index);
        let remaining = target - integ.t();
        if remaining <= 1e-12 * target.abs().max(1.0) {
            if integ.t() >= t_end - 1e-12 * t_end.abs().max(1.0) {
                break Outcome::ReachedTmax;
            }
            samples.push(sample_of(integ.x(), integ.t(), p)?);
            sample_index += 1;
            continue;
        }
        match integ.advance(remaining) {
            Advance::Accepted => {
                if let Some(i) = integ.collision_pair() {
                    break Outcome::Collision {
                        t_star: integ.collision_time(i),
                        t_star_err: integ.last_dt(),
                        pair: (i, i + 1),
                    };
                }
            }
            Advance::Underflow => break Outcome::StepSizeUnderflow { t: integ.t() },
        }
    };

    let terminal = sample_of(integ.x(), integ.t(), p)?;
    match samples.last() {
        Some(last) if last.t >= terminal.t => {
            let k = samples.len() - 1;
            if k > 0 || last.state != terminal.state {
                samples[k] = Sample { t: last.t, ..terminal };
            }
        }
        _ => samples.push(terminal),
    }

    let record = TrajectoryRecord {
        samples,
        step_count: integ.step_count,
        rejected_steps: integ.rejected_steps,
        energy_violations: integ.energy_violations,
        max_energy_increase: integ.max_energy_increase,
        collision_eps: cfg.collision_eps,
        tail: integ.tail.into_iter().collect(),
    };
    Ok((record, outcome))
}

/// Terminal classification of a run.
///
/// Blow-up needs a collision whose gap shrank over the final five accepted
/// steps; global behaviour needs `t_max` reached with every gap at least
/// `10 * collision_eps` over the final tenth of the samples.
pub fn classify_run(record: &TrajectoryRecord, outcome: &Outcome) -> RunClass {
    match outcome {
        Outcome::Collision { pair, .. } => {
            if shrinking(record.tail.iter(), pair.0, BLOWUP_CONFIRM) {
                RunClass::BlowupObserved
            } else {
                RunClass::Undetermined
            }
        }
        Outcome::ReachedTmax => {
            let n = record.samples.len();
            let from = n - (n / 10).max(1);
            let floor = 10.0 * record.collision_eps;
            if record.samples[from..].iter().all(|s| s.diagnostics.min_gap >= floor) {
                RunClass::GlobalObserved
            } else {
                RunClass::Undetermined
            }
        }
        Outcome::StepSizeUnderflow { .. } => RunClass::Undetermined,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeScaling;

    fn p3(gamma: f64, mass: f64) -> Params {
        Params::new(gamma, mass, 3, TimeScaling::PaperConvention).unwrap()
    }

    fn st(x: &[f64]) -> ParticleState {
        ParticleState::new(x.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::default().validate().is_ok());
        let bad = IntegratorConfig { dt_min: 1.0, dt_init: 0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = IntegratorConfig { collision_eps: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = IntegratorConfig { t_max: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_kernel_moment_grows_linearly() {
        let cfg = IntegratorConfig { t_max: 5.0, ..Default::default() };
        let (rec, out) = simulate(&st(&[-1.0, 0.0, 1.0]), &p3(0.0, 1.0), &cfg).unwrap();
        assert_eq!(out, Outcome::ReachedTmax);
        for s in &rec.samples {
            let expect = 2.0 + 0.625 * s.t;
            assert!((s.diagnostics.i2 - expect).abs() <= 1e-6 * expect, "t={} i2={}", s.t, s.diagnostics.i2);
        }
        assert!((rec.samples.last().unwrap().t - 5.0).abs() < 1e-12);
        assert_eq!(rec.samples.len(), 51);
    }

    #[test]
    fn certified_global_run() {
        let (rec, out) = simulate(&st(&[-1.0, 0.0, 1.0]), &p3(0.5, 1.0), &IntegratorConfig::default()).unwrap();
        assert_eq!(out, Outcome::ReachedTmax);
        assert_eq!(classify_run(&rec, &out), RunClass::GlobalObserved);
        for w in rec.samples.windows(2) {
            assert!(w[1].diagnostics.phi < w[0].diagnostics.phi);
            assert!(w[1].t > w[0].t);
        }
        assert_eq!(rec.energy_violations, 0);
    }

    #[test]
    fn certified_blowup_run() {
        let (rec, out) = simulate(&st(&[-0.05, 0.0, 0.05]), &p3(0.5, 1.0), &IntegratorConfig::default()).unwrap();
        let Outcome::Collision { t_star, t_star_err, .. } = out else { panic!("{out:?}") };
        assert!(t_star.is_finite() && t_star > 0.0 && t_star_err >= 0.0);
        assert_eq!(classify_run(&rec, &out), RunClass::BlowupObserved);
        assert_eq!(rec.energy_violations, 0);
        assert!(rec.samples.last().unwrap().diagnostics.min_gap <= 1e-9);
    }

    #[test]
    fn implicit_step_equilibrium_is_fixed() {
        // symmetric critical point for N=3: s^gamma = h (1 + 2^{-1-gamma})
        let p = p3(0.5, 1.0);
        let s = (0.25f64 * (1.0 + 2f64.powf(-1.5))).powi(2);
        let x = st(&[-s, 0.0, s]);
        let y = step_implicit_euler(&x, &p, 1e-3, &IntegratorConfig::default()).unwrap();
        assert_eq!(y.x(), x.x());
    }

    #[test]
    fn implicit_step_is_first_order_consistent() {
        let p = p3(0.5, 1.0);
        let x = st(&[-0.8, 0.1, 0.9]);
        let v = model::velocity(&x, &p).unwrap();
        let dev = |dt: f64| {
            let y = step_implicit_euler(&x, &p, dt, &IntegratorConfig::default()).unwrap();
            (0..3).map(|i| (y.x()[i] - x.x()[i] - dt * v[i]).powi(2)).sum::<f64>().sqrt()
        };
        let ratio = dev(1e-3) / dev(5e-4);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn implicit_euler_driver() {
        let cfg = IntegratorConfig { method: Method::ImplicitEuler, t_max: 5.0, dt_init: 1e-3, ..Default::default() };
        let (rec, out) = simulate(&st(&[-1.0, 0.0, 1.0]), &p3(0.5, 1.0), &cfg).unwrap();
        assert_eq!(out, Outcome::ReachedTmax);
        for w in rec.samples.windows(2) {
            assert!(w[1].diagnostics.g <= w[0].diagnostics.g);
        }
        let cfg = IntegratorConfig { method: Method::ImplicitEuler, dt_init: 1e-4, ..Default::default() };
        let (rec, out) = simulate(&st(&[-0.05, 0.0, 0.05]), &p3(0.5, 1.0), &cfg).unwrap();
        assert!(matches!(out, Outcome::Collision { .. }), "{out:?}");
        assert_eq!(classify_run(&rec, &out), RunClass::BlowupObserved);
    }

    #[test]
    fn underflow_is_undetermined() {
        let rec = TrajectoryRecord {
            samples: vec![sample_of(&[-1.0, 0.0, 1.0], 0.0, &p3(0.5, 1.0)).unwrap()],
            step_count: 0,
            rejected_steps: 0,
            energy_violations: 0,
            max_energy_increase: 0.0,
            collision_eps: 1e-9,
            tail: vec![],
        };
        assert_eq!(classify_run(&rec, &Outcome::StepSizeUnderflow { t: 1.0 }), RunClass::Undetermined);
    }
}
