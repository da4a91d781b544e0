//! Certification predicates for initial configurations.
//!
//! A sufficient condition for global existence (smallness of `gamma * phi`),
//! three blow-up criteria on the second moment, the entropy constant `C(N)`
//! and the critical mass of the logarithmic kernel.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Params, ParticleState};
use crate::normal;

/// Relative tolerance on the centre of mass for zero-mean preconditions.
pub const ZERO_MEAN_TOL: f64 = 1e-12;

/// Stationarity tolerance used when `C(N)` is computed implicitly.
pub const CN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    GlobalCertified,
    BlowupCertified,
    Uncertified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CriterionTag {
    /// `gamma * phi < T(N)`.
    #[serde(rename = "GE_4_8")]
    GlobalExistence,
    /// Second moment below the interaction-energy bound.
    #[serde(rename = "BU_W_5_2")]
    BlowupW,
    /// Second moment below the crude entropy bound.
    #[serde(rename = "BU_U_5_7")]
    BlowupU,
    /// Second moment below the sharp entropy bound with `C(N)`.
    #[serde(rename = "BU_C_5_10")]
    BlowupC,
    #[serde(rename = "Gamma0_Mass")]
    Gamma0Mass,
}

impl CriterionTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            CriterionTag::GlobalExistence => "GE_4_8",
            CriterionTag::BlowupW => "BU_W_5_2",
            CriterionTag::BlowupU => "BU_U_5_7",
            CriterionTag::BlowupC => "BU_C_5_10",
            CriterionTag::Gamma0Mass => "Gamma0_Mass",
        }
    }

    pub fn is_blowup(&self) -> bool {
        matches!(self, CriterionTag::BlowupW | CriterionTag::BlowupU | CriterionTag::BlowupC)
    }
}

impl fmt::Display for CriterionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one strict-inequality predicate `measured < threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub holds: bool,
    pub threshold: f64,
    pub measured: f64,
}

impl Check {
    pub fn strict(measured: f64, threshold: f64) -> Self {
        Check { holds: measured < threshold, threshold, measured }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MassRegime {
    Subcritical,
    Critical,
    Supercritical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: Verdict,
    pub triggered: BTreeSet<CriterionTag>,
    pub thresholds: BTreeMap<CriterionTag, Check>,
    pub mass_regime: Option<MassRegime>,
}

/// Positive weights `mu_1..mu_{N-1}`; `mu_0 = mu_N = 0` implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct MuVector(Vec<f64>);

impl MuVector {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::InvalidParams("mu must have at least one entry".into()));
        }
        if let Some(i) = mu.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidParams(format!("mu[{i}] = {} is not positive", mu[i])));
        }
        Ok(MuVector(mu))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of particles this weight vector belongs to.
    pub fn n(&self) -> usize {
        self.0.len() + 1
    }
}

fn require_gamma_positive(p: &Params) -> Result<()> {
    if p.is_log_kernel() {
        return Err(Error::Unsupported(
            "gamma = 0 has no smallness or moment criteria; use the critical-mass threshold".into(),
        ));
    }
    Ok(())
}

fn require_zero_mean(x: &[f64]) -> Result<()> {
    let com = model::center_of_mass(x);
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if com.abs() > ZERO_MEAN_TOL * scale {
        return Err(Error::Precondition(format!("state must have zero centre of mass (got {com:e}); recenter first")));
    }
    Ok(())
}

/// Right-hand side `T(N)` of the smallness condition `gamma * phi < T(N)`.
///
/// `T(3) = 1`; for `N > 3`, `T(N) = 1 / (1 + 2 (N-2)^2)`.
pub fn global_existence_threshold(n: usize) -> f64 {
    if n <= 3 {
        1.0
    } else {
        let k = (n - 2) as f64;
        1.0 / (1.0 + 2.0 * k * k)
    }
}

/// The constant `c(N)` with `1 + (N-3) c(N) = 1 / T(N)`, defined for `N > 3`.
pub fn smallness_constant(n: usize) -> Option<f64> {
    (n > 3).then(|| {
        let k = (n - 2) as f64;
        2.0 * k * k / (n as f64 - 3.0)
    })
}

pub fn global_existence_check(state: &ParticleState, p: &Params) -> Result<Check> {
    require_gamma_positive(p)?;
    let measured = p.gamma() * model::phi(state, p)?;
    Ok(Check::strict(measured, global_existence_threshold(p.n())))
}

/// Threshold on `|x|^2` below which the interaction energy forces collapse.
pub fn blowup_w_threshold(p: &Params) -> f64 {
    let g = p.gamma();
    let n = p.n() as f64;
    let e = 2.0 / g + 1.0;
    let log = -p.h().ln() + e * (p.mass() / 2.0).ln() + (2.0 / g) * n.ln() + (n - 1.0).ln() - e * (n + 1.0).ln();
    log.exp()
}

pub fn blowup_w_check(state: &ParticleState, p: &Params) -> Result<Check> {
    require_gamma_positive(p)?;
    p.check_len(state.len())?;
    require_zero_mean(state.x())?;
    Ok(Check::strict(model::second_moment(state), blowup_w_threshold(p)))
}

fn entropy_threshold(state: &ParticleState, p: &Params, c: f64) -> Result<f64> {
    let n1 = p.n() as f64 - 1.0;
    let h = p.h();
    let g = model::energy_g(state, p)?;
    Ok((2.0 * h.ln() + 2.0 * n1.ln() + c.ln() - 2.0 / p.gamma() - 2.0 * g / (h * n1)).exp())
}

/// Blow-up criterion driven by an entropy lower bound with constant `c_n`.
///
/// `c_n` may be `C(N)` or any `C(mu)`; larger values certify more states.
pub fn blowup_c_check(state: &ParticleState, p: &Params, c_n: f64) -> Result<Check> {
    require_gamma_positive(p)?;
    if !(c_n > 0.0 && c_n.is_finite()) {
        return Err(Error::InvalidParams(format!("entropy constant must be positive, got {c_n}")));
    }
    p.check_len(state.len())?;
    require_zero_mean(state.x())?;
    Ok(Check::strict(model::second_moment(state), entropy_threshold(state, p, c_n)?))
}

/// The crude entropy criterion; the member `C(mu) = 1/(N-1)` of the continuum.
pub fn blowup_u_check(state: &ParticleState, p: &Params) -> Result<Check> {
    blowup_c_check(state, p, 1.0 / (p.n() as f64 - 1.0))
}

fn log_c_of_mu(mu: &[f64]) -> f64 {
    let n1 = mu.len() as f64;
    (2.0 / n1) * mu.iter().map(|m| m.ln()).sum::<f64>() - dirichlet_form(mu).ln()
}

/// `sum_{i=1..N} (mu_i - mu_{i-1})^2` with zero end values.
fn dirichlet_form(mu: &[f64]) -> f64 {
    let k = mu.len();
    let mut q = mu[0] * mu[0] + mu[k - 1] * mu[k - 1];
    for w in mu.windows(2) {
        q += (w[1] - w[0]).powi(2);
    }
    q
}

pub fn c_of_mu(mu: &MuVector) -> f64 {
    log_c_of_mu(mu.as_slice()).exp()
}

/// Weights `mu_i = pdf(H(i/N))`, `i = 1..N-1`, with `H` the normal quantile.
pub fn gaussian_mu(n: usize) -> Result<MuVector> {
    if n < 2 {
        return Err(Error::InvalidParams(format!("need N >= 2, got {n}")));
    }
    let mu = (1..n).map(|i| normal::quantile(i as f64 / n as f64).map(normal::pdf)).collect::<Result<Vec<_>>>()?;
    MuVector::new(mu)
}

/// Maximiser of `C(mu)` on the unit sphere.
#[derive(Debug, Clone)]
pub struct CnEstimate {
    pub value: f64,
    pub mu: MuVector,
    pub grad_norm: f64,
    pub iterations: usize,
}

const CN_MAX_ITER: usize = 500;
const CN_RANDOM_STARTS: usize = 8;

/// `C(N) = sup C(mu)`, as a float.
pub fn c_of_n(n: usize, tol: f64) -> Result<f64> {
    Ok(maximize_c(n, tol)?.value)
}

/// Memoised `C(N)` at the default tolerance.
pub fn c_of_n_cached(n: usize) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<usize, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&n) {
        return Ok(*v);
    }
    let v = c_of_n(n, CN_TOL)?;
    cache.lock().unwrap().insert(n, v);
    Ok(v)
}

/// Multi-start ascent for `C(N)`.
///
/// The objective `log C(mu)` is homogeneous of degree zero, so its gradient is
/// tangent to the sphere `|mu| = 1` and iterates are simply renormalised.
/// Steps use Newton directions on the Hessian shifted along `mu` (it is
/// singular in that direction), falling back to the gradient, with an Armijo
/// backtracking line search. Starts: uniform, Gaussian and eight random
/// positive vectors.
pub fn maximize_c(n: usize, tol: f64) -> Result<CnEstimate> {
    if n < 3 {
        return Err(Error::InvalidParams(format!("C(N) needs N >= 3, got {n}")));
    }
    let k = n - 1;
    let mut starts = vec![vec![1.0; k], gaussian_mu(n)?.0];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de ^ n as u64);
    for _ in 0..CN_RANDOM_STARTS {
        starts.push((0..k).map(|_| rng.random_range(0.1..1.0)).collect());
    }

    let mut best: Option<CnEstimate> = None;
    let mut best_failure: Option<(f64, Vec<f64>, f64)> = None;
    for start in starts {
        match ascend(start, tol) {
            Ok(est) => {
                if best.as_ref().is_none_or(|b| est.value > b.value) {
                    best = Some(est);
                }
            }
            Err((mu, grad)) => {
                let v = log_c_of_mu(&mu).exp();
                if best_failure.as_ref().is_none_or(|b| v > b.0) {
                    best_failure = Some((v, mu, grad));
                }
            }
        }
    }
    match best {
        Some(b) => Ok(b),
        None => {
            let (v, mu, g) = best_failure.expect("at least one start");
            Err(Error::NumericalFailure {
                message: format!("C({n}) ascent did not reach gradient norm {tol:e}: best {v}, gradient {g:e}"),
                best: Some(mu),
            })
        }
    }
}

fn normalize(mu: &mut [f64]) {
    let s = mu.iter().map(|m| m * m).sum::<f64>().sqrt();
    mu.iter_mut().for_each(|m| *m /= s);
}

/// Tridiagonal Laplacian `L = A A^T` applied to `mu`.
fn laplacian(mu: &[f64]) -> Vec<f64> {
    let k = mu.len();
    (0..k)
        .map(|i| {
            let left = if i > 0 { mu[i - 1] } else { 0.0 };
            let right = if i + 1 < k { mu[i + 1] } else { 0.0 };
            2.0 * mu[i] - left - right
        })
        .collect()
}

fn gradient(mu: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let a = 2.0 / mu.len() as f64;
    let lmu = laplacian(mu);
    let q: f64 = mu.iter().zip(&lmu).map(|(m, l)| m * l).sum();
    let g = mu.iter().zip(&lmu).map(|(m, l)| a / m - 2.0 * l / q).collect();
    (g, lmu, q)
}

/// Solves a symmetric tridiagonal system (Thomas algorithm).
fn solve_tridiagonal(diag: &[f64], off: f64, rhs: &[f64]) -> Vec<f64> {
    let k = diag.len();
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    c[0] = off / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..k {
        let m = diag[i] - off * c[i - 1];
        c[i] = off / m;
        d[i] = (rhs[i] - off * d[i - 1]) / m;
    }
    let mut x = vec![0.0; k];
    x[k - 1] = d[k - 1];
    for i in (0..k - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Newton direction for `H - mu mu^T` where
/// `H = -a diag(1/mu^2) - 2L/Q + u u^T`, `u = 2 L mu / Q`.
fn newton_direction(mu: &[f64], g: &[f64], lmu: &[f64], q: f64) -> Vec<f64> {
    let a = 2.0 / mu.len() as f64;
    let diag: Vec<f64> = mu.iter().map(|m| -a / (m * m) - 4.0 / q).collect();
    let off = 2.0 / q;
    let u: Vec<f64> = lmu.iter().map(|l| 2.0 * l / q).collect();
    let rhs: Vec<f64> = g.iter().map(|v| -v).collect();

    // (T + u u^T)^{-1} b by Sherman-Morrison
    let tu = solve_tridiagonal(&diag, off, &u);
    let denom_u = 1.0 + dot(&u, &tu);
    let solve1 = |b: &[f64]| -> Vec<f64> {
        let tb = solve_tridiagonal(&diag, off, b);
        let s = dot(&u, &tb) / denom_u;
        tb.iter().zip(&tu).map(|(x, y)| x - s * y).collect()
    };
    // then the rank-one shift -mu mu^T
    let m1b = solve1(&rhs);
    let m1mu = solve1(mu);
    let s = dot(mu, &m1b) / (1.0 - dot(mu, &m1mu));
    m1b.iter().zip(&m1mu).map(|(x, y)| x + s * y).collect()
}

fn ascend(mut mu: Vec<f64>, tol: f64) -> std::result::Result<CnEstimate, (Vec<f64>, f64)> {
    normalize(&mut mu);
    let mut f = log_c_of_mu(&mu);
    for iter in 0..CN_MAX_ITER {
        let (g, lmu, q) = gradient(&mu);
        let gnorm = dot(&g, &g).sqrt();
        if gnorm < tol {
            return Ok(CnEstimate { value: f.exp(), mu: MuVector(mu), grad_norm: gnorm, iterations: iter });
        }
        let mut dir = newton_direction(&mu, &g, &lmu, q);
        let mut slope = dot(&g, &dir);
        let newton = slope > 0.0 && dir.iter().all(|d| d.is_finite());
        if !newton {
            dir = g.clone();
            slope = gnorm * gnorm;
        }
        // large N is ill-conditioned: stop once the Newton model predicts a gain
        // below the rounding of the objective
        if newton && 0.5 * slope <= 64.0 * f64::EPSILON * f.abs().max(1.0) {
            return Ok(CnEstimate { value: f.exp(), mu: MuVector(mu), grad_norm: gnorm, iterations: iter });
        }
        // keep iterates positive
        let mut t: f64 = 1.0;
        for (m, d) in mu.iter().zip(&dir) {
            if *d < 0.0 {
                t = t.min(0.9 * m / -d);
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial: Vec<f64> = mu.iter().zip(&dir).map(|(m, d)| m + t * d).collect();
            normalize(&mut trial);
            let ft = log_c_of_mu(&trial);
            if ft >= f + 1e-4 * t * slope {
                mu = trial;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return if gnorm < tol {
                Ok(CnEstimate { value: f.exp(), mu: MuVector(mu), grad_norm: gnorm, iterations: iter })
            } else {
                Err((mu, gnorm))
            };
        }
    }
    let (g, _, _) = gradient(&mu);
    Err((mu, dot(&g, &g).sqrt()))
}

/// Smallest eigenvalue of `A A^T`, `4 sin^2(pi / 2N)`.
pub fn lambda_min(n: usize) -> f64 {
    (PI / (2.0 * n as f64)).sin().powi(2) * 4.0
}

/// `A A^T` for the `(N-1) x N` forward-difference matrix `A`.
pub fn difference_gram(n: usize) -> DMatrix<f64> {
    let k = n - 1;
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            2.0
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Smallest eigenvalue of `A A^T` by dense symmetric eigensolve.
pub fn lambda_min_eigensolve(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParams(format!("need N >= 2, got {n}")));
    }
    let eig = SymmetricEigen::new(difference_gram(n));
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Upper bound `(lambda_1 (N-1))^-1` on `C(N)`.
pub fn c_upper_bound(n: usize) -> f64 {
    1.0 / (lambda_min(n) * (n as f64 - 1.0))
}

/// Roots `nu` of `nu^{2/(N-1)} = 2/(N-1) (nu^2 - nu + 1)`: the weights
/// `(nu, 1, ..., 1)` then have `C(mu) = 1/(N-1)`.
pub fn continuum_nu_roots(n: usize) -> Vec<f64> {
    let a = 2.0 / (n as f64 - 1.0);
    let f = |nu: f64| nu.powf(a) - a * (nu * nu - nu + 1.0);
    let df = |nu: f64| a * nu.powf(a - 1.0) - a * (2.0 * nu - 1.0);
    let bisect = |func: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64| {
        let flo = func(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (func(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    // scan a log grid for sign changes of f, and for touching zeros at extrema of f
    let grid: Vec<f64> = (0..=4000).map(|i| 10f64.powf(-6.0 + i as f64 * 10.0 / 4000.0)).collect();
    let mut roots = Vec::new();
    for w in grid.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if (f(lo) > 0.0) != (f(hi) > 0.0) {
            roots.push(bisect(&f, lo, hi));
        } else if (df(lo) > 0.0) != (df(hi) > 0.0) {
            let ext = bisect(&df, lo, hi);
            if f(ext).abs() < 1e-12 {
                roots.push(ext);
            }
        }
    }
    roots
}

pub fn gamma0_mass_threshold(n: usize) -> f64 {
    2.0 * (n as f64 + 1.0) / n as f64
}

/// Position of the mass relative to `2(N+1)/N`, i.e. of `h` relative to `2/N`.
pub fn gamma0_check(p: &Params) -> MassRegime {
    let balance = p.h() * p.n() as f64 / 2.0 - 1.0;
    if balance.abs() <= 4.0 * f64::EPSILON {
        MassRegime::Critical
    } else if balance > 0.0 {
        MassRegime::Supercritical
    } else {
        MassRegime::Subcritical
    }
}

/// Evaluates every applicable predicate, computing `C(N)` as needed.
pub fn classify_initial(state: &ParticleState, p: &Params) -> Result<Certificate> {
    if p.is_log_kernel() {
        return classify_initial_with(state, p, f64::NAN);
    }
    classify_initial_with(state, p, c_of_n_cached(p.n())?)
}

/// As [`classify_initial`] with a caller-supplied entropy constant.
pub fn classify_initial_with(state: &ParticleState, p: &Params, c_n: f64) -> Result<Certificate> {
    p.check_len(state.len())?;
    let mut triggered = BTreeSet::new();
    let mut thresholds = BTreeMap::new();

    if p.is_log_kernel() {
        let regime = gamma0_check(p);
        thresholds.insert(
            CriterionTag::Gamma0Mass,
            Check {
                holds: regime != MassRegime::Critical,
                threshold: gamma0_mass_threshold(p.n()),
                measured: p.mass(),
            },
        );
        let verdict = match regime {
            MassRegime::Subcritical => Verdict::GlobalCertified,
            MassRegime::Supercritical => Verdict::BlowupCertified,
            MassRegime::Critical => Verdict::Uncertified,
        };
        if regime != MassRegime::Critical {
            triggered.insert(CriterionTag::Gamma0Mass);
        }
        return Ok(Certificate { verdict, triggered, thresholds, mass_regime: Some(regime) });
    }

    let centered = state.recentered();
    let checks = [
        (CriterionTag::GlobalExistence, global_existence_check(state, p)?),
        (CriterionTag::BlowupW, blowup_w_check(&centered, p)?),
        (CriterionTag::BlowupU, blowup_u_check(&centered, p)?),
        (CriterionTag::BlowupC, blowup_c_check(&centered, p, c_n)?),
    ];
    for (tag, check) in checks {
        if check.holds {
            triggered.insert(tag);
        }
        thresholds.insert(tag, check);
    }
    let global = triggered.contains(&CriterionTag::GlobalExistence);
    let blowup = triggered.iter().any(|t| t.is_blowup());
    if global && blowup {
        return Err(Error::Incompatible(format!(
            "state satisfies the smallness condition and a blow-up criterion: {triggered:?}"
        )));
    }
    let verdict = if global {
        Verdict::GlobalCertified
    } else if blowup {
        Verdict::BlowupCertified
    } else {
        Verdict::Uncertified
    };
    Ok(Certificate { verdict, triggered, thresholds, mass_regime: None })
}
