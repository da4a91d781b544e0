//! Continuous densities, their particle approximations and the continuous
//! blow-up predicates.
//!
//! A density of mass `M` is sampled at the mass levels `m_i = i h`,
//! `h = M / (N + 1)`, through its pseudo-inverse distribution function.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::criteria::{self, Check};
use crate::error::{Error, Result};
use crate::model::{self, Params, ParticleState, TimeScaling};
use crate::normal;
use crate::quadrature;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DensityKind {
    Gaussian { mean: f64, sigma: f64 },
    Uniform { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    #[serde(flatten)]
    pub kind: DensityKind,
    pub mass: f64,
}

impl DensitySpec {
    pub fn gaussian(mean: f64, sigma: f64, mass: f64) -> Result<Self> {
        let s = DensitySpec { kind: DensityKind::Gaussian { mean, sigma }, mass };
        s.validate()?;
        Ok(s)
    }

    pub fn uniform(a: f64, b: f64, mass: f64) -> Result<Self> {
        let s = DensitySpec { kind: DensityKind::Uniform { a, b }, mass };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidParams(format!("mass must be positive, got {}", self.mass)));
        }
        match self.kind {
            DensityKind::Gaussian { mean, sigma } if !(sigma > 0.0 && sigma.is_finite() && mean.is_finite()) => {
                Err(Error::InvalidParams(format!("gaussian needs finite mean and sigma > 0, got sigma {sigma}")))
            }
            DensityKind::Uniform { a, b } if !(a < b && a.is_finite() && b.is_finite()) => {
                Err(Error::InvalidParams(format!("uniform needs a < b, got [{a}, {b}]")))
            }
            _ => Ok(()),
        }
    }

    /// Position below which a fraction `q` of the mass lies.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        match self.kind {
            DensityKind::Gaussian { mean, sigma } => Ok(mean + sigma * normal::quantile(q)?),
            DensityKind::Uniform { a, b } => {
                if !(q > 0.0 && q < 1.0) {
                    return Err(Error::InvalidParams(format!("quantile level must lie in (0,1), got {q}")));
                }
                Ok(a + (b - a) * q)
            }
        }
    }

    pub fn center_of_mass(&self) -> f64 {
        match self.kind {
            DensityKind::Gaussian { mean, .. } => mean,
            DensityKind::Uniform { a, b } => 0.5 * (a + b),
        }
    }
}

/// Inverse of the standard normal distribution function.
pub fn std_normal_quantile(q: f64) -> Result<f64> {
    normal::quantile(q)
}

/// Particles at the mass levels `i h`, `i = 1..N`, with the matching parameters.
pub fn quantile_init(
    spec: &DensitySpec,
    n: usize,
    gamma: f64,
    time_scaling: TimeScaling,
) -> Result<(ParticleState, Params)> {
    spec.validate()?;
    let p = Params::new(gamma, spec.mass, n, time_scaling)?;
    let x = (1..=n).map(|i| spec.quantile(i as f64 / (n + 1) as f64)).collect::<Result<Vec<_>>>()?;
    Ok((ParticleState::new(x, 0.0)?, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousReport {
    pub mass: f64,
    pub gamma: f64,
    /// Second moment about the centre of mass.
    pub second_moment: f64,
    /// `int rho log rho`.
    pub entropy: f64,
    /// `int int rho(x) K(x - y) rho(y)` with `K(z) = |z|^-gamma / gamma`.
    pub interaction: f64,
    pub interaction_error: f64,
    /// `entropy - interaction / 2`.
    pub energy: f64,
    /// Lower bound on `gamma * interaction` in terms of the second moment.
    pub interaction_lower_bound: f64,
    /// Lower bound on the entropy in terms of the second moment.
    pub entropy_lower_bound: f64,
    /// `I < (M/2)^(2/gamma + 1)`.
    pub criterion_w: Check,
    /// `I < M^3 / (2 pi e^(2/gamma + 1)) exp(-2 E / M)`.
    pub criterion_e: Check,
}

/// `int_0^inf t^-gamma phi(t) dt` for the standard normal density `phi`.
pub fn half_normal_moment(gamma: f64) -> f64 {
    2f64.powf(-gamma / 2.0) * libm::tgamma((1.0 - gamma) / 2.0) / (2.0 * PI.sqrt())
}

const QUAD_TOL: f64 = 1e-10;

fn gaussian_interaction(mass: f64, sigma: f64, gamma: f64) -> Result<(f64, f64)> {
    // the autocorrelation of the density is a centred normal of variance 2 sigma^2;
    // in units of its deviation the kernel integral is 2 int_0^inf t^-gamma phi(t) dt
    let a = 1.0 / (1.0 - gamma);
    // t = s^a removes the singularity on [0, 1]
    let (near, e1) = quadrature::integrate(|s: f64| a * normal::pdf(s.powf(a)), 0.0, 1.0, QUAD_TOL, 0.0)?;
    let (far, e2) = quadrature::integrate(|t: f64| t.powf(-gamma) * normal::pdf(t), 1.0, 40.0, QUAD_TOL, 0.0)?;
    let scale = 2.0 * mass * mass / gamma * (2f64.sqrt() * sigma).powf(-gamma);
    Ok((scale * (near + far), scale * (e1 + e2)))
}

fn uniform_interaction(mass: f64, len: f64, gamma: f64) -> f64 {
    2.0 * mass * mass * len.powf(-gamma) / ((1.0 - gamma) * (2.0 - gamma)) / gamma
}

pub fn continuous_report(spec: &DensitySpec, gamma: f64) -> Result<ContinuousReport> {
    spec.validate()?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParams(format!("gamma must lie in (0,1), got {gamma}")));
    }
    let m = spec.mass;
    let (second_moment, entropy, interaction, interaction_error) = match spec.kind {
        DensityKind::Gaussian { sigma, .. } => {
            let (w, err) = gaussian_interaction(m, sigma, gamma)?;
            (m * sigma * sigma, m * (m / (sigma * (2.0 * PI * E).sqrt())).ln(), w, err)
        }
        DensityKind::Uniform { a, b } => {
            let len = b - a;
            (m * len * len / 12.0, m * (m / len).ln(), uniform_interaction(m, len, gamma), 0.0)
        }
    };
    let energy = entropy - 0.5 * interaction;
    let e = 2.0 / gamma + 1.0;
    let w_threshold = (m / 2.0).powf(e);
    let e_threshold = m.powi(3) / (2.0 * PI) * (-e - 2.0 * energy / m).exp();
    Ok(ContinuousReport {
        mass: m,
        gamma,
        second_moment,
        entropy,
        interaction,
        interaction_error,
        energy,
        interaction_lower_bound: 2f64.powf(-gamma / 2.0) * m.powf(2.0 + gamma / 2.0) * second_moment.powf(-gamma / 2.0),
        entropy_lower_bound: -0.5 * m * second_moment.ln() + 0.5 * m * (m.powi(3) / (2.0 * PI * E)).ln(),
        criterion_w: Check::strict(second_moment, w_threshold),
        criterion_e: Check::strict(second_moment, e_threshold),
    })
}

/// One row of the discrete-to-continuous comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    /// `h |X|^2` of the centred quantile state.
    pub second_moment: f64,
    pub second_moment_ratio: f64,
    /// `h` times the interaction blow-up threshold on `|X|^2`.
    pub threshold_w: f64,
    pub threshold_w_ratio: f64,
    /// `h` times the entropy blow-up threshold with the optimal constant.
    pub threshold_c: f64,
    pub threshold_c_ratio: f64,
    pub entropy: f64,
    pub entropy_ratio: f64,
    /// Discrete interaction energy against half the continuous double integral.
    pub interaction: f64,
    pub interaction_ratio: f64,
    pub energy: f64,
    pub c_n_over_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub continuous: ContinuousReport,
    pub rows: Vec<ConvergenceRow>,
}

pub fn convergence_report(spec: &DensitySpec, gamma: f64, n_list: &[usize]) -> Result<ConvergenceReport> {
    let cont = continuous_report(spec, gamma)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let (state, p) = quantile_init(spec, n, gamma, TimeScaling::PaperConvention)?;
        let state = state.recentered();
        let h = p.h();
        let c_n = criteria::c_of_n_cached(n)?;
        let second_moment = h * model::second_moment(&state);
        let threshold_w = h * criteria::blowup_w_threshold(&p);
        let threshold_c = h * criteria::blowup_c_check(&state, &p, c_n)?.threshold;
        let entropy = model::entropy_u(&state, &p)?;
        let interaction = model::interaction_w(&state, &p)?;
        rows.push(ConvergenceRow {
            n,
            h,
            second_moment,
            second_moment_ratio: second_moment / cont.second_moment,
            threshold_w,
            threshold_w_ratio: threshold_w / cont.criterion_w.threshold,
            threshold_c,
            threshold_c_ratio: threshold_c / cont.criterion_e.threshold,
            entropy,
            entropy_ratio: entropy / cont.entropy,
            interaction,
            interaction_ratio: interaction / (0.5 * cont.interaction),
            energy: entropy - interaction,
            c_n_over_n: c_n / n as f64,
        });
    }
    Ok(ConvergenceReport { continuous: cont, rows })
}
