//! Critical points, the three-particle phase plane and identity diagnostics.
//!
//! For `N = 3` with zero centre of mass a state is determined by its gaps
//! `(u, v) = (X2 - X1, X3 - X2)`. The reduced flow is read off the full
//! velocity field, never from a gradient of the energy in `(u, v)`: the change
//! of coordinates is not an isometry.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria;
use crate::dynamics::{self, Advance, Integrator, IntegratorConfig, RunClass};
use crate::error::{Error, Result};
use crate::model::{self, Params, ParticleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedPoint {
    pub u: f64,
    pub v: f64,
}

impl ReducedPoint {
    pub fn new(u: f64, v: f64) -> Result<Self> {
        if !(u > 0.0 && v > 0.0 && u.is_finite() && v.is_finite()) {
            return Err(Error::InvalidParams(format!("reduced point needs u, v > 0, got ({u}, {v})")));
        }
        Ok(ReducedPoint { u, v })
    }

    /// The zero-mean three-particle positions with these gaps.
    pub fn positions(&self) -> [f64; 3] {
        let x1 = -(2.0 * self.u + self.v) / 3.0;
        let x2 = (self.u - self.v) / 3.0;
        let x3 = (self.u + 2.0 * self.v) / 3.0;
        [x1, x2, x3]
    }

    pub fn to_state(&self) -> ParticleState {
        ParticleState::new(self.positions().to_vec(), 0.0).expect("positive gaps give an increasing state")
    }

    pub fn from_state(state: &ParticleState) -> Result<Self> {
        if state.len() != 3 {
            return Err(Error::InvalidParams("reduced coordinates need N = 3".into()));
        }
        let x = state.x();
        ReducedPoint::new(x[1] - x[0], x[2] - x[1])
    }
}

fn require_n3(p: &Params) -> Result<()> {
    if p.n() != 3 {
        return Err(Error::Unsupported(format!("phase-plane tools need N = 3, got N = {}", p.n())));
    }
    Ok(())
}

fn require_gamma_positive(p: &Params) -> Result<()> {
    if p.is_log_kernel() {
        return Err(Error::Unsupported("this operation needs gamma in (0,1)".into()));
    }
    Ok(())
}

/// Velocity of the gaps, `(u', v') = (X2' - X1', X3' - X2')`.
pub fn reduced_velocity(pt: ReducedPoint, p: &Params) -> Result<(f64, f64)> {
    require_n3(p)?;
    let v = model::velocity(&pt.positions(), p)?;
    Ok((v[1] - v[0], v[2] - v[1]))
}

/// Jacobian of the reduced flow at `pt`, row-major.
pub fn reduced_jacobian(pt: ReducedPoint, p: &Params) -> Result<[[f64; 2]; 2]> {
    require_n3(p)?;
    let j = model::velocity_jacobian(&pt.positions(), p)?;
    // dX/d(u,v)
    let e = [[-2.0 / 3.0, -1.0 / 3.0], [1.0 / 3.0, -1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]];
    let mut je = [[0.0; 2]; 3];
    for r in 0..3 {
        for c in 0..2 {
            je[r][c] = (0..3).map(|k| j[(r, k)] * e[k][c]).sum();
        }
    }
    let mut out = [[0.0; 2]; 2];
    for c in 0..2 {
        out[0][c] = je[1][c] - je[0][c];
        out[1][c] = je[2][c] - je[1][c];
    }
    Ok(out)
}

/// Eigenvalues (ascending) and unit eigenvectors of the reduced linearisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedSpectrum {
    pub eigenvalues: [f64; 2],
    pub eigenvectors: [[f64; 2]; 2],
}

impl ReducedSpectrum {
    pub fn of(m: [[f64; 2]; 2]) -> Self {
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        // similar to a symmetric matrix, so the discriminant is non-negative up to rounding
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        let eigenvalues = [0.5 * tr - disc, 0.5 * tr + disc];
        let eigenvectors = eigenvalues.map(|l| {
            let a = [m[0][1], l - m[0][0]];
            let b = [l - m[1][1], m[1][0]];
            let pick = if a[0].hypot(a[1]) >= b[0].hypot(b[1]) { a } else { b };
            let norm = pick[0].hypot(pick[1]);
            if norm == 0.0 {
                [1.0, 0.0]
            } else {
                [pick[0] / norm, pick[1] / norm]
            }
        });
        ReducedSpectrum { eigenvalues, eigenvectors }
    }

    pub fn is_saddle(&self) -> bool {
        self.eigenvalues[0] < 0.0 && self.eigenvalues[1] > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticalKind {
    Saddle,
    Max,
    Min,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub state: ParticleState,
    /// Norm of the energy gradient projected on the zero-mean hyperplane.
    pub grad_norm: f64,
    /// Eigenvalues of the energy Hessian on the zero-mean hyperplane, ascending.
    pub hessian_eigs: Vec<f64>,
    pub kind: CriticalKind,
    pub iterations: usize,
}

/// Orthonormal basis of `{sum x_i = 0}` as the columns of an `N x (N-1)` matrix.
pub fn zero_mean_basis(n: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n, n - 1);
    for k in 1..n {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            b[(i, k - 1)] = 1.0 / norm;
        }
        b[(k, k - 1)] = -(k as f64) / norm;
    }
    b
}

fn energy_gradient(x: &[f64], p: &Params) -> Result<DVector<f64>> {
    let v = model::velocity(x, p)?;
    let w = p.metric_weight();
    Ok(DVector::from_iterator(x.len(), v.iter().map(|c| -w * c)))
}

fn energy_hessian(x: &[f64], p: &Params) -> Result<DMatrix<f64>> {
    Ok(model::velocity_jacobian(x, p)? * -p.metric_weight())
}

fn classify_eigs(eigs: &[f64]) -> CriticalKind {
    let scale = eigs.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let tol = 1e-9 * scale;
    if eigs.iter().any(|e| e.abs() <= tol) {
        CriticalKind::Degenerate
    } else if eigs.iter().all(|&e| e < 0.0) {
        CriticalKind::Max
    } else if eigs.iter().all(|&e| e > 0.0) {
        CriticalKind::Min
    } else {
        CriticalKind::Saddle
    }
}

fn critical_point_at(x: Vec<f64>, p: &Params, iterations: usize) -> Result<CriticalPoint> {
    let n = x.len();
    let b = zero_mean_basis(n);
    let g = b.transpose() * energy_gradient(&x, p)?;
    let h = b.transpose() * energy_hessian(&x, p)? * &b;
    let mut eigs: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    eigs.sort_by(f64::total_cmp);
    Ok(CriticalPoint {
        state: ParticleState::new(x, 0.0)?,
        grad_norm: g.norm(),
        kind: classify_eigs(&eigs),
        hessian_eigs: eigs,
        iterations,
    })
}

/// Gap of the equal-gap critical state of three particles,
/// `s = [h (1 + 2^(-1-gamma))]^(1/gamma)`.
pub fn symmetric_critical_gap(p: &Params) -> Result<f64> {
    require_n3(p)?;
    require_gamma_positive(p)?;
    let g = p.gamma();
    Ok((p.h() * (1.0 + 2f64.powf(-1.0 - g))).powf(1.0 / g))
}

pub fn symmetric_critical_point(p: &Params) -> Result<CriticalPoint> {
    let s = symmetric_critical_gap(p)?;
    critical_point_at(vec![-s, 0.0, s], p, 0)
}

/// Dilates `x` onto the level set `gamma W = h (N - 1)`, where `|x|^2` is stationary.
pub fn dilate_to_critical_curve(x: &[f64], p: &Params) -> Result<Vec<f64>> {
    require_gamma_positive(p)?;
    let w = model::interaction_w(x, p)?;
    let lambda = (p.gamma() * w / (p.h() * (p.n() as f64 - 1.0))).powf(1.0 / p.gamma());
    Ok(x.iter().map(|v| v * lambda).collect())
}

/// Damped Newton on the energy gradient restricted to the zero-mean hyperplane.
pub fn newton_critical_point(init: &ParticleState, p: &Params, tol: f64) -> Result<CriticalPoint> {
    require_gamma_positive(p)?;
    p.check_len(init.len())?;
    let n = init.len();
    let com = model::center_of_mass(init);
    let scale = init.x().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if com.abs() > criteria::ZERO_MEAN_TOL * scale {
        return Err(Error::Precondition(format!("initial state must have zero mean, got centre {com:e}")));
    }
    let b = zero_mean_basis(n);
    let bt = b.transpose();
    let mut x = init.x().to_vec();
    let mut g = &bt * energy_gradient(&x, p)?;
    const MAX_ITER: usize = 200;
    for iter in 0..MAX_ITER {
        if g.norm() < tol {
            return critical_point_at(x, p, iter);
        }
        let h = &bt * energy_hessian(&x, p)? * &b;
        let fail = |x: &[f64], m: &str| Error::NumericalFailure { message: m.to_string(), best: Some(x.to_vec()) };
        let step = h.lu().solve(&(-&g)).ok_or_else(|| fail(&x, "singular Hessian in Newton iteration"))?;
        let dx = &b * step;
        // the gradient vanishes at infinity, so each trial is pulled back onto the
        // dilation-stationary level set, which contains every critical point
        let ratio = (0..n - 1).fold(0.0f64, |m, i| m.max((dx[i + 1] - dx[i]).abs() / (x[i + 1] - x[i])));
        let mut alpha = if ratio > 0.5 { 0.5 / ratio } else { 1.0 };
        loop {
            let trial: Vec<f64> = (0..n).map(|i| x[i] + alpha * dx[i]).collect();
            if model::check_increasing(&trial).is_ok() {
                let trial = dilate_to_critical_curve(&trial, p)?;
                let gt = &bt * energy_gradient(&trial, p)?;
                if gt.norm() < (1.0 - 1e-4 * alpha) * g.norm() {
                    x = trial;
                    g = gt;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                return Err(fail(&x, "Newton line search stalled"));
            }
        }
    }
    if g.norm() < tol {
        return critical_point_at(x, p, MAX_ITER);
    }
    Err(Error::NumericalFailure {
        message: format!("Newton did not converge in {MAX_ITER} iterations (gradient {:e})", g.norm()),
        best: Some(x),
    })
}

/// Axis-aligned window in the `(u, v)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for Window {
    fn default() -> Self {
        Window { u_min: 0.005, u_max: 0.5, v_min: 0.005, v_max: 0.5 }
    }
}

impl Window {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.u_min && self.u_min < self.u_max && 0.0 < self.v_min && self.v_min < self.v_max) {
            return Err(Error::InvalidParams(format!("window needs 0 < min < max on both axes: {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, pt: ReducedPoint) -> bool {
        (self.u_min..=self.u_max).contains(&pt.u) && (self.v_min..=self.v_max).contains(&pt.v)
    }
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![(lo * hi).sqrt()];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// `u` samples at which no root was bracketed.
    pub skipped: Vec<f64>,
}

const V_SCAN: usize = 256;
const BISECT_TOL: f64 = 1e-12;

fn bisect<F: Fn(f64) -> Option<f64>>(f: &F, mut a: f64, mut b: f64, mut fa: f64) -> Option<f64> {
    while b - a > BISECT_TOL {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fm == 0.0 {
            return Some(m);
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Zero set of `f(u, v)` in the window, found per `u` by scanning `v` and bisecting sign changes.
pub fn level_curve<F>(name: &str, f: F, window: &Window, samples: usize) -> Result<Curve>
where
    F: Fn(f64, f64) -> Option<f64> + Sync,
{
    window.validate()?;
    let us = log_grid(window.u_min, window.u_max, samples);
    let vs = log_grid(window.v_min, window.v_max, V_SCAN);
    let rows: Vec<(f64, Vec<f64>)> = us
        .par_iter()
        .map(|&u| {
            let g = |v: f64| f(u, v);
            let mut roots = Vec::new();
            let mut prev: Option<(f64, f64)> = None;
            for &v in &vs {
                let Some(fv) = g(v) else {
                    prev = None;
                    continue;
                };
                if let Some((vp, fp)) = prev {
                    if fv == 0.0 {
                        roots.push(v);
                    } else if (fp > 0.0) != (fv > 0.0) && fp != 0.0 {
                        if let Some(r) = bisect(&g, vp, v, fp) {
                            roots.push(r);
                        }
                    }
                }
                prev = Some((v, fv));
            }
            (u, roots)
        })
        .collect();
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for (u, roots) in rows {
        if roots.is_empty() {
            skipped.push(u);
        }
        points.extend(roots.into_iter().map(|v| (u, v)));
    }
    Ok(Curve { name: name.to_string(), points, skipped })
}

fn on_point<T>(u: f64, v: f64, f: impl FnOnce(&ParticleState) -> Result<T>) -> Option<T> {
    let pt = ReducedPoint::new(u, v).ok()?;
    f(&pt.to_state()).ok()
}

/// Level set `gamma W = h (N - 1)`, on which `d|X|^2/dt = 0`.
pub fn critical_curve_n3(p: &Params, window: &Window, samples: usize) -> Result<Curve> {
    require_n3(p)?;
    require_gamma_positive(p)?;
    let target = p.h() * (p.n() as f64 - 1.0);
    level_curve(
        "critical_curve",
        |u, v| on_point(u, v, |s| Ok(p.gamma() * model::interaction_w(s, p)? - target)),
        window,
        samples,
    )
}

pub fn bu_w_curve(p: &Params, window: &Window, samples: usize) -> Result<Curve> {
    require_n3(p)?;
    level_curve(
        "bu_w_curve",
        |u, v| on_point(u, v, |s| criteria::blowup_w_check(s, p).map(|c| c.measured - c.threshold)),
        window,
        samples,
    )
}

pub fn bu_c_curve(p: &Params, window: &Window, samples: usize) -> Result<Curve> {
    require_n3(p)?;
    let c_n = criteria::c_of_n_cached(3)?;
    level_curve(
        "bu_c_curve",
        |u, v| on_point(u, v, |s| criteria::blowup_c_check(s, p, c_n).map(|c| c.measured - c.threshold)),
        window,
        samples,
    )
}

pub fn ge_curve(p: &Params, window: &Window, samples: usize) -> Result<Curve> {
    require_n3(p)?;
    level_curve(
        "ge_curve",
        |u, v| on_point(u, v, |s| criteria::global_existence_check(s, p).map(|c| c.measured - c.threshold)),
        window,
        samples,
    )
}

/// Fate of a trajectory as decided by the first certificate it meets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fate {
    Global,
    Blowup,
    Undetermined,
}

/// Integrates until the state satisfies the smallness condition or a blow-up
/// criterion, collides, or `t_max` elapses.
pub fn certified_fate(state: &ParticleState, p: &Params, cfg: &IntegratorConfig, c_n: f64) -> Result<Fate> {
    let fate_of = |x: &[f64]| -> Result<Option<Fate>> {
        let s = ParticleState::new(x.to_vec(), 0.0)?.recentered();
        let cert = criteria::classify_initial_with(&s, p, c_n)?;
        Ok(match cert.verdict {
            criteria::Verdict::GlobalCertified => Some(Fate::Global),
            criteria::Verdict::BlowupCertified => Some(Fate::Blowup),
            criteria::Verdict::Uncertified => None,
        })
    };
    if let Some(f) = fate_of(state.x())? {
        return Ok(f);
    }
    let mut integ = Integrator::new(state, p, cfg)?;
    let t_end = state.t() + cfg.t_max;
    while integ.t() < t_end {
        match integ.advance(t_end - integ.t()) {
            Advance::Underflow => return Ok(Fate::Undetermined),
            Advance::Accepted => {
                if integ.collision_pair().is_some() {
                    return Ok(Fate::Blowup);
                }
                if let Some(f) = fate_of(integ.x())? {
                    return Ok(f);
                }
            }
        }
    }
    Ok(Fate::Undetermined)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeparatrixMethod {
    /// Reverse-time tracing of the stable manifold of a saddle.
    StableManifold,
    /// Bisection of the basin boundary along rays from the origin.
    BasinBisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparatrixConfig {
    pub window: Window,
    pub integrator: IntegratorConfig,
    /// Rays used by the bisection route.
    pub rays: usize,
    /// Relative bracket width at which ray bisection stops.
    pub ray_tol: f64,
    /// Arc-length step of the tracing route, relative to the window size.
    pub trace_step: f64,
}

impl Default for SeparatrixConfig {
    fn default() -> Self {
        SeparatrixConfig {
            window: Window::default(),
            integrator: IntegratorConfig::default(),
            rays: 64,
            ray_tol: 1e-7,
            trace_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separatrix {
    pub critical: CriticalPoint,
    pub spectrum: ReducedSpectrum,
    pub method: SeparatrixMethod,
    /// Ordered by polar angle, passing through the critical point.
    pub points: Vec<(f64, f64)>,
}

/// The invariant curve through the critical point separating collapse from spreading.
///
/// At a saddle of the reduced flow the curve is the stable manifold, traced in
/// reverse time from `+-1e-6 s` along the stable eigendirection. When both
/// reduced eigenvalues are positive (the energy maximum is a source, as for
/// `gamma = 1/2`), every nearby trajectory leaves the critical point and the
/// boundary is located instead by bisecting certified fates along rays.
pub fn separatrix_n3(p: &Params, cfg: &SeparatrixConfig) -> Result<Separatrix> {
    require_n3(p)?;
    cfg.window.validate()?;
    let critical = symmetric_critical_point(p)?;
    let s = symmetric_critical_gap(p)?;
    let centre = ReducedPoint::new(s, s)?;
    let spectrum = ReducedSpectrum::of(reduced_jacobian(centre, p)?);
    let [l0, l1] = spectrum.eigenvalues;
    if spectrum.is_saddle() {
        let dir = spectrum.eigenvectors[0];
        let mut points = vec![(s, s)];
        let mut stalled = false;
        for sign in [1.0, -1.0] {
            let start = (s + sign * 1e-6 * s * dir[0], s + sign * 1e-6 * s * dir[1]);
            let (branch, ended_at_rest) = trace_reverse(start, (s, s), p, cfg)?;
            stalled |= ended_at_rest;
            points.extend(branch);
        }
        sort_by_angle(&mut points);
        if stalled {
            // the manifold ends on further critical points (sources); beyond them the
            // boundary is completed by bisection on the remaining rays
            let lo = angle(points[0]);
            let hi = angle(points[points.len() - 1]);
            let rest = basin_boundary(p, cfg, None)?;
            points.extend(rest.into_iter().filter(|q| angle(*q) < lo || angle(*q) > hi));
            sort_by_angle(&mut points);
        }
        return Ok(Separatrix { critical, spectrum, method: SeparatrixMethod::StableManifold, points });
    }
    if l0 > 0.0 && l1 > 0.0 {
        let points = basin_boundary(p, cfg, Some((s, s)))?;
        return Ok(Separatrix { critical, spectrum, method: SeparatrixMethod::BasinBisection, points });
    }
    Err(Error::NumericalFailure {
        message: format!(
            "reduced spectrum at the critical point is ({l0:e}, {l1:e}); no separatrix construction applies"
        ),
        best: None,
    })
}

fn angle(q: (f64, f64)) -> f64 {
    q.1.atan2(q.0)
}

fn sort_by_angle(points: &mut [(f64, f64)]) {
    points.sort_by(|a, b| angle(*a).total_cmp(&angle(*b)));
}

/// Arc-length RK4 on the reverse reduced flow until the window is left or the
/// trace comes to rest on another critical point (second field `true`).
fn trace_reverse(
    start: (f64, f64),
    centre: (f64, f64),
    p: &Params,
    cfg: &SeparatrixConfig,
) -> Result<(Vec<(f64, f64)>, bool)> {
    let w = &cfg.window;
    let span = (w.u_max - w.u_min).min(w.v_max - w.v_min);
    let ds_max = cfg.trace_step * span;
    let dir = |q: (f64, f64)| -> Option<(f64, f64)> {
        let (du, dv) = reduced_velocity(ReducedPoint::new(q.0, q.1).ok()?, p).ok()?;
        let norm = du.hypot(dv);
        (norm > 0.0 && norm.is_finite()).then(|| (-du / norm, -dv / norm))
    };
    let mut q = start;
    let mut out = vec![q];
    let max_steps = (100.0 / cfg.trace_step) as usize;
    for _ in 0..max_steps {
        let dist = (q.0 - centre.0).hypot(q.1 - centre.1);
        let ds = (0.1 * dist).min(ds_max);
        let step = |q: (f64, f64), k: (f64, f64), c: f64| (q.0 + c * ds * k.0, q.1 + c * ds * k.1);
        let Some(k1) = dir(q) else { break };
        let Some(k2) = dir(step(q, k1, 0.5)) else { break };
        let Some(k3) = dir(step(q, k2, 0.5)) else { break };
        let Some(k4) = dir(step(q, k3, 1.0)) else { break };
        let next = (
            q.0 + ds / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            q.1 + ds / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        );
        // the unit field flips across a rest point, so the stages cancel there
        if (next.0 - q.0).hypot(next.1 - q.1) < 1e-3 * ds {
            return Ok((out, true));
        }
        q = next;
        let Ok(pt) = ReducedPoint::new(q.0, q.1) else { break };
        if !w.contains(pt) {
            break;
        }
        out.push(q);
    }
    Ok((out, false))
}

/// Boundary between certified-collapse and certified-spreading initial data,
/// one point per ray crossing the window, ordered by angle.
pub fn basin_boundary(p: &Params, cfg: &SeparatrixConfig, through: Option<(f64, f64)>) -> Result<Vec<(f64, f64)>> {
    require_n3(p)?;
    let c_n = criteria::c_of_n_cached(3)?;
    let w = cfg.window;
    let fate = |r: f64, (cu, cv): (f64, f64)| -> Fate {
        let Ok(pt) = ReducedPoint::new(r * cu, r * cv) else { return Fate::Undetermined };
        certified_fate(&pt.to_state(), p, &cfg.integrator, c_n).unwrap_or(Fate::Undetermined)
    };
    let rays: Vec<Option<(f64, f64)>> = (0..cfg.rays)
        .into_par_iter()
        .map(|k| {
            let theta = (k as f64 + 0.5) / cfg.rays as f64 * std::f64::consts::FRAC_PI_2;
            let d = (theta.cos(), theta.sin());
            let r_lo = (w.u_min / d.0).max(w.v_min / d.1);
            let r_hi = (w.u_max / d.0).min(w.v_max / d.1);
            if r_lo >= r_hi {
                return None;
            }
            let (mut a, mut b) = (r_lo, r_hi);
            if fate(a, d) != Fate::Blowup || fate(b, d) != Fate::Global {
                return None;
            }
            while (b - a) > cfg.ray_tol * b {
                let m = (a * b).sqrt();
                match fate(m, d) {
                    Fate::Blowup => a = m,
                    Fate::Global => b = m,
                    Fate::Undetermined => return None,
                }
            }
            let r = (a * b).sqrt();
            Some((r * d.0, r * d.1))
        })
        .collect();
    let mut points: Vec<(f64, f64)> = rays.into_iter().flatten().collect();
    points.extend(through);
    sort_by_angle(&mut points);
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub window: Window,
    pub resolution: (usize, usize),
    pub integrator: IntegratorConfig,
    pub curve_samples: usize,
    pub separatrix: SeparatrixConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            window: Window::default(),
            resolution: (64, 64),
            integrator: IntegratorConfig::default(),
            curve_samples: 512,
            separatrix: SeparatrixConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePortrait {
    pub window: Window,
    pub resolution: (usize, usize),
    /// Row-major in `v`: entry `j * nu + i` is the cell `(u_i, v_j)`.
    pub grid: Vec<RunClass>,
    pub curves: Vec<Curve>,
    pub separatrix: Option<Separatrix>,
    /// Cells whose run failed outright.
    pub failures: usize,
}

fn cell_centre(lo: f64, hi: f64, k: usize, n: usize) -> f64 {
    lo + (k as f64 + 0.5) * (hi - lo) / n as f64
}

impl PhasePortrait {
    pub fn cell(&self, i: usize, j: usize) -> (f64, f64, RunClass) {
        let (nu, nv) = self.resolution;
        let w = &self.window;
        (cell_centre(w.u_min, w.u_max, i, nu), cell_centre(w.v_min, w.v_max, j, nv), self.grid[j * nu + i])
    }

    pub fn curve(&self, name: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.name == name)
    }

    /// Number of 4-connected components of cells with class `class`.
    pub fn components(&self, class: RunClass) -> usize {
        let (nu, nv) = self.resolution;
        let mut seen = vec![false; nu * nv];
        let mut count = 0;
        for start in 0..nu * nv {
            if seen[start] || self.grid[start] != class {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(k) = stack.pop() {
                let (i, j) = (k % nu, k / nu);
                let mut nb = Vec::with_capacity(4);
                if i > 0 {
                    nb.push(k - 1);
                }
                if i + 1 < nu {
                    nb.push(k + 1);
                }
                if j > 0 {
                    nb.push(k - nu);
                }
                if j + 1 < nv {
                    nb.push(k + nu);
                }
                for m in nb {
                    if !seen[m] && self.grid[m] == class {
                        seen[m] = true;
                        stack.push(m);
                    }
                }
            }
        }
        count
    }

    /// Both basins are single connected regions and no cell is undetermined.
    pub fn has_contiguous_boundary(&self) -> bool {
        self.components(RunClass::BlowupObserved) == 1
            && self.components(RunClass::GlobalObserved) == 1
            && self.grid.iter().all(|c| *c != RunClass::Undetermined)
    }
}

/// Simulates and classifies one reduced initial state.
pub fn classify_point(pt: ReducedPoint, p: &Params, cfg: &IntegratorConfig) -> RunClass {
    match dynamics::simulate(&pt.to_state(), p, cfg) {
        Ok((rec, out)) => dynamics::classify_run(&rec, &out),
        Err(_) => RunClass::Undetermined,
    }
}

/// Classifies every grid cell by simulation and overlays the criterion curves and the separatrix.
pub fn phase_plane_sweep(p: &Params, cfg: &SweepConfig) -> Result<PhasePortrait> {
    require_n3(p)?;
    cfg.window.validate()?;
    let (nu, nv) = cfg.resolution;
    if nu == 0 || nv == 0 {
        return Err(Error::InvalidParams("sweep resolution must be positive".into()));
    }
    let w = cfg.window;
    let cells: Vec<(RunClass, bool)> = (0..nu * nv)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % nu, k / nu);
            let pt = ReducedPoint { u: cell_centre(w.u_min, w.u_max, i, nu), v: cell_centre(w.v_min, w.v_max, j, nv) };
            match dynamics::simulate(&pt.to_state(), p, &cfg.integrator) {
                Ok((rec, out)) => (dynamics::classify_run(&rec, &out), false),
                Err(_) => (RunClass::Undetermined, true),
            }
        })
        .collect();
    let failures = cells.iter().filter(|c| c.1).count();
    let grid = cells.into_iter().map(|c| c.0).collect();

    let samples = cfg.curve_samples;
    let mut curves = vec![
        critical_curve_n3(p, &w, samples)?,
        bu_w_curve(p, &w, samples)?,
        bu_c_curve(p, &w, samples)?,
        ge_curve(p, &w, samples)?,
    ];
    let separatrix = separatrix_n3(p, &SeparatrixConfig { window: w, ..cfg.separatrix }).ok();
    if let Some(sep) = &separatrix {
        curves.push(Curve { name: "separatrix".into(), points: sep.points.clone(), skipped: vec![] });
    }
    Ok(PhasePortrait { window: w, resolution: (nu, nv), grid, curves, separatrix, failures })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub anchor: (f64, f64),
    pub normal: (f64, f64),
    pub inner: RunClass,
    pub outer: RunClass,
}

impl ProbeResult {
    pub fn passes(&self) -> bool {
        self.inner == RunClass::BlowupObserved && self.outer == RunClass::GlobalObserved
    }
}

/// Simulates `+-offset` along the outward normal at `count` points of the separatrix
/// with both gaps above `min_gap`.
pub fn two_sidedness_probes(
    p: &Params,
    points: &[(f64, f64)],
    count: usize,
    offset: f64,
    min_gap: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<ProbeResult>> {
    require_n3(p)?;
    let eligible: Vec<usize> =
        (1..points.len().saturating_sub(1)).filter(|&k| points[k].0.min(points[k].1) > min_gap).collect();
    if eligible.len() < count || count == 0 {
        return Err(Error::Precondition(format!(
            "separatrix has {} interior points with gaps above {min_gap}, {count} requested",
            eligible.len()
        )));
    }
    let picks: Vec<usize> = (0..count)
        .map(|k| eligible[if count == 1 { eligible.len() / 2 } else { k * (eligible.len() - 1) / (count - 1) }])
        .collect();
    let results = picks
        .par_iter()
        .map(|&k| {
            let (a, b) = (points[k - 1], points[k + 1]);
            let t = (b.0 - a.0, b.1 - a.1);
            let norm = t.0.hypot(t.1);
            let mut n = (t.1 / norm, -t.0 / norm);
            let q = points[k];
            if n.0 * q.0 + n.1 * q.1 < 0.0 {
                n = (-n.0, -n.1);
            }
            let at = |sgn: f64| match ReducedPoint::new(q.0 + sgn * offset * n.0, q.1 + sgn * offset * n.1) {
                Ok(pt) => classify_point(pt, p, cfg),
                Err(_) => RunClass::Undetermined,
            };
            ProbeResult { anchor: q, normal: n, inner: at(-1.0), outer: at(1.0) }
        })
        .collect();
    Ok(results)
}

/// Terms of the evolution law of `phi` along the flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiRate {
    pub phi: f64,
    pub i_term: f64,
    pub j1: f64,
    pub j2: f64,
    pub r_tilde: f64,
    /// `d phi / dt = <grad phi, velocity>`.
    pub lhs: f64,
    /// `(gamma phi - 1) I + J2 - h^2 R`.
    pub rhs: f64,
    pub residual: f64,
    /// Residual over the largest term magnitude.
    pub relative_residual: f64,
}

pub fn phi_rate_decomposition(state: &ParticleState, p: &Params) -> Result<PhiRate> {
    require_gamma_positive(p)?;
    p.check_len(state.len())?;
    let x = state.x();
    let n = x.len();
    let g = p.gamma();
    let h = p.h();
    let y = model::gaps(x);
    let y = y.as_slice();
    // index k = 0..=n with ghost zeros at both ends
    let ext = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        let mut out = vec![0.0; n + 1];
        for (k, &yk) in y.iter().enumerate() {
            out[k + 1] = f(yk);
        }
        out
    };
    let r = ext(&|t| 1.0 / t);
    let z = ext(&|t| t.powf(-g - 1.0));
    let dz: Vec<f64> = (0..n).map(|i| z[i + 1] - z[i]).collect();
    let dr: Vec<f64> = (0..n).map(|i| r[i + 1] - r[i]).collect();

    let i_term = h * (0..n).map(|i| dr[i] * dz[i]).sum::<f64>();
    let j1 = h * h * dz.iter().map(|d| d * d).sum::<f64>();
    let mut j2 = 0.0;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            if i.abs_diff(j) >= 2 {
                let d = x[j] - x[i];
                s += d.signum() * d.abs().powf(-g - 1.0);
            }
        }
        j2 += s * dz[i];
    }
    j2 *= h * h;

    let mut r_tilde = 0.0;
    for j in 1..n - 1 {
        let (a, b) = (y[j - 1], y[j]);
        r_tilde += (b.powf(-g - 1.0) - a.powf(-g - 1.0)) * (a.powf(1.0 - g) - b.powf(1.0 - g)) / (a * b);
    }
    for (j, &yj) in y.iter().enumerate() {
        let jj = j + 1;
        let w = yj.powf(-g);
        for i in 0..n {
            if i + 1 == jj || i == jj {
                continue;
            }
            r_tilde += w * dr[i] * dz[i];
        }
    }

    let phi = model::phi(x, p)?;
    let v = model::velocity(x, p)?;
    let lhs = h * (0..n).map(|i| v[i] * dz[i]).sum::<f64>();
    let rhs = (g * phi - 1.0) * i_term + j2 - h * h * r_tilde;
    let residual = (lhs - rhs).abs();
    let scale = [lhs, (g * phi - 1.0) * i_term, i_term, j2, h * h * r_tilde]
        .iter()
        .fold(f64::MIN_POSITIVE, |m, t| m.max(t.abs()));
    Ok(PhiRate { phi, i_term, j1, j2, r_tilde, lhs, rhs, residual, relative_residual: residual / scale })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma51Report {
    pub n: usize,
    /// `N |X|^2` and the sum of squared pair distances.
    pub identity1: (f64, f64),
    /// `|X|^2` and `Y^T (A A^T)^-1 Y`.
    pub identity2: (f64, f64),
    /// `|X|^2` and `(2/N) sum_{i<=j} Y_i Y_j`; present for increasing `X`.
    pub inequality3: Option<(f64, f64)>,
    pub min_offdiag: f64,
    pub min_diag: f64,
}

impl Lemma51Report {
    pub fn passes(&self, tol: f64) -> bool {
        let n = self.n as f64;
        let close = |(a, b): (f64, f64)| (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0);
        close(self.identity1)
            && close(self.identity2)
            && self.inequality3.is_none_or(|(a, b)| a >= b - tol * a.abs().max(1.0))
            && self.min_offdiag >= 1.0 / n - tol
            && self.min_diag >= 2.0 / n - tol
    }
}

/// Norm identities for zero-mean vectors and the entry bounds of the inverse difference Gram matrix.
pub fn lemma51_checks(x: &[f64]) -> Result<Lemma51Report> {
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidParams(format!("need N >= 3, got {n}")));
    }
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let sum: f64 = x.iter().sum();
    if sum.abs() > criteria::ZERO_MEAN_TOL * scale * n as f64 {
        return Err(Error::Precondition(format!("vector must sum to zero, got {sum:e}")));
    }
    let norm2 = model::second_moment(x);
    let mut pairs = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            pairs += (x[j] - x[i]).powi(2);
        }
    }
    let y = DVector::from_iterator(n - 1, x.windows(2).map(|w| w[1] - w[0]));
    let gram_inv = criteria::difference_gram(n)
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure { message: "difference Gram matrix not positive".into(), best: None })?
        .inverse();
    let quad = y.dot(&(&gram_inv * &y));
    let increasing = y.iter().all(|&d| d > 0.0);
    let inequality3 = increasing.then(|| {
        let mut s = 0.0;
        for i in 0..n - 1 {
            for j in i..n - 1 {
                s += y[i] * y[j];
            }
        }
        (norm2, 2.0 / n as f64 * s)
    });
    let mut min_offdiag = f64::INFINITY;
    let mut min_diag = f64::INFINITY;
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            let e = gram_inv[(i, j)];
            if i == j {
                min_diag = min_diag.min(e);
            } else {
                min_offdiag = min_offdiag.min(e);
            }
        }
    }
    Ok(Lemma51Report {
        n,
        identity1: (n as f64 * norm2, pairs),
        identity2: (norm2, quad),
        inequality3,
        min_offdiag,
        min_diag,
    })
}
