//! Domain types, the discrete free energy and its parts, and the particle
//! velocity field.
//!
//! Positions live in the open cone of strictly increasing vectors. Two ghost
//! particles sit at `-inf` and `+inf`; their diffusion terms are omitted rather
//! than represented by sentinel values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaps at or below this are treated as collisions.
pub const MIN_GAP: f64 = 1e-300;

/// Time normalisation of the flow.
///
/// For `gamma > 0` both variants give `x' = -(1/h) grad G`. For the
/// logarithmic kernel `PaperConvention` drops the `1/h` factor
/// (`x' = -grad G`) while `Uniform` keeps it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeScaling {
    #[default]
    PaperConvention,
    Uniform,
}

/// Problem constants. `h = M / (N + 1)` is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    gamma: f64,
    mass: f64,
    n: usize,
    h: f64,
    time_scaling: TimeScaling,
}

impl Params {
    pub fn new(gamma: f64, mass: f64, n: usize, time_scaling: TimeScaling) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParams(format!("gamma must lie in [0,1), got {gamma}")));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParams(format!("mass must be positive, got {mass}")));
        }
        if n < 3 {
            return Err(Error::InvalidParams(format!("need at least 3 particles, got {n}")));
        }
        Ok(Params { gamma, mass, n, h: mass / (n as f64 + 1.0), time_scaling })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Mass carried by each particle.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn time_scaling(&self) -> TimeScaling {
        self.time_scaling
    }

    /// True when the logarithmic kernel `-log|x|` replaces `|x|^-gamma / gamma`.
    pub fn is_log_kernel(&self) -> bool {
        self.gamma == 0.0
    }

    /// Weight of the Euclidean metric in which the flow is a gradient flow:
    /// `metric_weight * x' = -grad G`.
    pub fn metric_weight(&self) -> f64 {
        if self.is_log_kernel() && self.time_scaling == TimeScaling::PaperConvention {
            1.0
        } else {
            self.h
        }
    }

    pub fn with_mass(&self, mass: f64) -> Result<Self> {
        Params::new(self.gamma, mass, self.n, self.time_scaling)
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::InvalidParams(format!("state has {len} particles but params expect {}", self.n)));
        }
        Ok(())
    }
}

/// Strictly increasing particle positions at a given time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    x: Vec<f64>,
    t: f64,
}

impl ParticleState {
    pub fn new(x: Vec<f64>, t: f64) -> Result<Self> {
        check_increasing(&x)?;
        if !t.is_finite() {
            return Err(Error::InvalidParams(format!("time must be finite, got {t}")));
        }
        Ok(ParticleState { x, t })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.x
    }

    /// Same positions shifted to zero centre of mass.
    pub fn recentered(&self) -> ParticleState {
        let c = center_of_mass(self);
        ParticleState { x: self.x.iter().map(|&v| v - c).collect(), t: self.t }
    }
}

impl AsRef<[f64]> for ParticleState {
    fn as_ref(&self) -> &[f64] {
        &self.x
    }
}

/// Consecutive differences `x[i+1] - x[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaps(Vec<f64>);

impl Gaps {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index `i` of the smallest gap, i.e. the pair `(i, i+1)`.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &g) in self.0.iter().enumerate() {
            if g < self.0[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub u: f64,
    pub w: f64,
    pub g: f64,
    pub phi: f64,
    pub i2: f64,
    pub com: f64,
    pub min_gap: f64,
    pub virial_residual: f64,
}

pub(crate) fn check_increasing(x: &[f64]) -> Result<()> {
    for (i, v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
    }
    for i in 0..x.len().saturating_sub(1) {
        let gap = x[i + 1] - x[i];
        if !(gap > MIN_GAP) {
            return Err(Error::Domain { index: i, gap });
        }
    }
    Ok(())
}

fn checked<'a, X: AsRef<[f64]> + ?Sized>(x: &'a X, p: &Params) -> Result<&'a [f64]> {
    let x = x.as_ref();
    p.check_len(x.len())?;
    check_increasing(x)?;
    Ok(x)
}

/// Discrete entropy `U = -h sum log(gap / h)`.
pub fn entropy_u<X: AsRef<[f64]> + ?Sized>(x: &X, p: &Params) -> Result<f64> {
    let x = checked(x, p)?;
    let h = p.h;
    Ok(-h * x.windows(2).map(|w| ((w[1] - w[0]) / h).ln()).sum::<f64>())
}

/// Pairwise interaction energy, each unordered pair counted once.
///
/// `h^2 / gamma * sum_{i<j} |x_j - x_i|^-gamma`, or `-h^2 sum_{i<j} log|x_j - x_i|`
/// for the logarithmic kernel.
pub fn interaction_w<X: AsRef<[f64]> + ?Sized>(x: &X, p: &Params) -> Result<f64> {
    let x = checked(x, p)?;
    Ok(pair_energy(x, p))
}

fn pair_energy(x: &[f64], p: &Params) -> f64 {
    let n = x.len();
    let h2 = p.h * p.h;
    let mut acc = 0.0;
    if p.is_log_kernel() {
        for i in 0..n {
            for j in i + 1..n {
                acc += (x[j] - x[i]).ln();
            }
        }
        -h2 * acc
    } else {
        let g = p.gamma;
        for i in 0..n {
            for j in i + 1..n {
                acc += (x[j] - x[i]).powf(-g);
            }
        }
        h2 / g * acc
    }
}

/// Free energy `G = U - W`.
pub fn energy_g<X: AsRef<[f64]> + ?Sized>(x: &X, p: &Params) -> Result<f64> {
    Ok(entropy_u(x, p)? - interaction_w(x, p)?)
}

/// Collision-sensing functional `(h/gamma) sum gap^-gamma`; `-h sum log gap` when `gamma = 0`.
pub fn phi<X: AsRef<[f64]> + ?Sized>(x: &X, p: &Params) -> Result<f64> {
    let x = checked(x, p)?;
    let h = p.h;
    if p.is_log_kernel() {
        Ok(-h * x.windows(2).map(|w| (w[1] - w[0]).ln()).sum::<f64>())
    } else {
        let g = p.gamma;
        Ok(h / g * x.windows(2).map(|w| (w[1] - w[0]).powf(-g)).sum::<f64>())
    }
}

/// Particle velocities `-(1/metric_weight) grad G`.
pub fn velocity<X: AsRef<[f64]> + ?Sized>(x: &X, p: &Params) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.as_ref().len()];
    velocity_into(x.as_ref(), p, &mut out)?;
    Ok(out)
}

/// In-place variant of [`velocity`]; `out` must have the state's length.
pub fn velocity_into(x: &[f64], p: &Params, out: &mut [f64]) -> Result<()> {
    let x = checked(x, p)?;
    let n = x.len();
    debug_assert_eq!(out.len(), n);
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n - 1 {
        let r = 1.0 / (x[i + 1] - x[i]);
        out[i] -= r;
        out[i + 1] += r;
    }
    let h = p.h;
    let expo = -p.gamma - 1.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = x[j] - x[i];
            let f = if p.is_log_kernel() { h / d } else { h * d.powf(expo) };
            out[i] += f;
            out[j] -= f;
        }
    }
    let scale = h / p.metric_weight();
    if scale != 1.0 {
        out.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(())
}

/// Jacobian `d velocity_i / d x_j`.
pub fn velocity_jacobian<X: AsRef<[f64]> + ?Sized>(x: &X, p: &Params) -> Result<DMatrix<f64>> {
    let x = checked(x, p)?;
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        let r2 = (x[i + 1] - x[i]).powi(-2);
        jac[(i, i)] -= r2;
        jac[(i, i + 1)] += r2;
        jac[(i + 1, i + 1)] -= r2;
        jac[(i + 1, i)] += r2;
    }
    let h = p.h;
    let g = p.gamma;
    for i in 0..n {
        for j in i + 1..n {
            let d = x[j] - x[i];
            let k = h * (g + 1.0) * d.powf(-g - 2.0);
            jac[(i, j)] -= k;
            jac[(j, i)] -= k;
            jac[(i, i)] += k;
            jac[(j, j)] += k;
        }
    }
    let scale = h / p.metric_weight();
    if scale != 1.0 {
        jac *= scale;
    }
    Ok(jac)
}

/// Exact value of `d/dt |x|^2` along the flow, from the dilation homogeneity of `G`.
pub fn virial_rhs<X: AsRef<[f64]> + ?Sized>(x: &X, p: &Params) -> Result<f64> {
    let xs = checked(x, p)?;
    let h = p.h;
    let n = p.n as f64;
    if p.is_log_kernel() {
        Ok(2.0 * h * (n - 1.0) * (1.0 - h * n / 2.0) / p.metric_weight())
    } else {
        let w = pair_energy(xs, p);
        Ok(2.0 / h * (h * (n - 1.0) - p.gamma * w))
    }
}

/// Space-time rescaling `(h, x(t)) -> (lambda^gamma h, lambda x(t / lambda^2))`,
/// under which the flow is invariant. Returns the image of `state` and the
/// rescaled parameters; the image state is stamped with time `lambda^2 t`.
pub fn rescale(state: &ParticleState, p: &Params, lambda: f64) -> Result<(ParticleState, Params)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParams(format!("rescale factor must be positive, got {lambda}")));
    }
    let params = p.with_mass(lambda.powf(p.gamma) * p.mass)?;
    let x = state.x.iter().map(|&v| lambda * v).collect();
    Ok((ParticleState::new(x, lambda * lambda * state.t)?, params))
}

/// `|x|^2`.
pub fn second_moment<X: AsRef<[f64]> + ?Sized>(x: &X) -> f64 {
    x.as_ref().iter().map(|v| v * v).sum()
}

pub fn center_of_mass<X: AsRef<[f64]> + ?Sized>(x: &X) -> f64 {
    let x = x.as_ref();
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn gaps<X: AsRef<[f64]> + ?Sized>(x: &X) -> Gaps {
    Gaps(x.as_ref().windows(2).map(|w| w[1] - w[0]).collect())
}

/// `2 <x - mean, v>`, the chain-rule value of `d/dt |x|^2`.
pub fn moment_rate<X: AsRef<[f64]> + ?Sized>(x: &X, p: &Params) -> Result<f64> {
    let xs = x.as_ref();
    let v = velocity(xs, p)?;
    let c = center_of_mass(xs);
    Ok(2.0 * xs.iter().zip(&v).map(|(a, b)| (a - c) * b).sum::<f64>())
}

pub fn diagnostics<X: AsRef<[f64]> + ?Sized>(x: &X, p: &Params) -> Result<Diagnostics> {
    let xs = checked(x, p)?;
    let u = entropy_u(xs, p)?;
    let w = pair_energy(xs, p);
    Ok(Diagnostics {
        u,
        w,
        g: u - w,
        phi: phi(xs, p)?,
        i2: second_moment(xs),
        com: center_of_mass(xs),
        min_gap: gaps(xs).min(),
        virial_residual: (moment_rate(xs, p)? - virial_rhs(xs, p)?).abs(),
    })
}
