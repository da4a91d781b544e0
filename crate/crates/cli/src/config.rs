//! Run configuration, read from TOML.
//!
//! Every table rejects unknown keys. Lengths are in position units, times in
//! the flow's time units, mass in the same units as `problem.mass`.

use std::path::{Path, PathBuf};

use collapse_core::analysis::{ReducedPoint, SeparatrixConfig, SweepConfig, Window};
use collapse_core::density::{self, DensityKind, DensitySpec};
use collapse_core::dynamics::{IntegratorConfig, Method};
use collapse_core::model::{Params, ParticleState, TimeScaling};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: Problem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Init>,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_plane: Option<PhasePlane>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<Converge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScalingName {
    #[default]
    Paper,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    /// Kernel exponent in [0, 1); 0 selects the logarithmic kernel.
    pub gamma: f64,
    /// Total mass M.
    pub mass: f64,
    /// Particle count; inferred from `init` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default)]
    pub time_scaling: TimeScalingName,
}

/// Exactly one of the three keys must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Init {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced: Option<Reduced>,
}

/// `kind = "gaussian"` with `mean`, `sigma`, or `kind = "uniform"` with `a`, `b`.
/// The mass is `problem.mass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityInit {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

/// Gaps of a zero-mean three-particle state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reduced {
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    #[default]
    Rk45,
    ImplicitEuler,
}

/// Overrides of the integrator defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Integrator {
    #[serde(default)]
    pub method: MethodName,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub dt_init: Option<f64>,
    pub dt_min: Option<f64>,
    pub dt_max: Option<f64>,
    pub t_max: Option<f64>,
    pub collision_eps: Option<f64>,
    pub sample_every: Option<f64>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
}

/// File names, relative to `--out` unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_trajectory")]
    pub trajectory_csv: PathBuf,
    #[serde(default = "default_summary")]
    pub summary_json: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gnuplot: Option<PathBuf>,
}

fn default_trajectory() -> PathBuf {
    "trajectory.csv".into()
}

fn default_summary() -> PathBuf {
    "summary.json".into()
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { trajectory_csv: default_trajectory(), summary_json: default_summary(), gnuplot: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePlane {
    pub resolution: Option<[usize; 2]>,
    /// `[u_min, u_max, v_min, v_max]`.
    pub window: Option<[f64; 4]>,
    pub curve_samples: Option<usize>,
    pub rays: Option<usize>,
    pub ray_tol: Option<f64>,
    pub trace_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Converge {
    pub n: Vec<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Failure::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|f| match f {
            Failure::Config(m) => Failure::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn check(&self) -> Result<(), Failure> {
        if let Some(init) = &self.init {
            let count = [init.positions.is_some(), init.density.is_some(), init.reduced.is_some()]
                .iter()
                .filter(|b| **b)
                .count();
            if count != 1 {
                return bad("init", format!("exactly one of positions, density, reduced is required, found {count}"));
            }
        }
        self.integrator_config()?;
        match self.n() {
            Ok(_) => self.params().map(drop),
            // commands such as `converge` choose N themselves
            Err(_) if self.problem.n.is_none() => {
                Params::new(self.problem.gamma, self.problem.mass, 3, TimeScaling::default())
                    .map(drop)
                    .map_err(|e| Failure::Config(format!("problem: {e}")))
            }
            Err(e) => Err(e),
        }
    }

    /// Particle count implied by `problem.n` and `init`, which must agree.
    pub fn n(&self) -> Result<usize, Failure> {
        let implied = match &self.init {
            Some(Init { positions: Some(x), .. }) => Some(x.len()),
            Some(Init { reduced: Some(_), .. }) => Some(3),
            _ => None,
        };
        match (self.problem.n, implied) {
            (Some(a), Some(b)) if a != b => bad("problem.n", format!("{a} disagrees with init, which implies {b}")),
            (Some(a), _) | (None, Some(a)) => Ok(a),
            (None, None) => bad("problem.n", "required when init does not fix the particle count".into()),
        }
    }

    pub fn params(&self) -> Result<Params, Failure> {
        let ts = match self.problem.time_scaling {
            TimeScalingName::Paper => TimeScaling::PaperConvention,
            TimeScalingName::Uniform => TimeScaling::Uniform,
        };
        Params::new(self.problem.gamma, self.problem.mass, self.n()?, ts)
            .map_err(|e| Failure::Config(format!("problem: {e}")))
    }

    pub fn density(&self) -> Result<Option<DensitySpec>, Failure> {
        let Some(d) = self.init.as_ref().and_then(|i| i.density.as_ref()) else { return Ok(None) };
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Failure::Config(format!("init.density.{key}: missing")));
        let kind = match d.kind.as_str() {
            "gaussian" => DensityKind::Gaussian { mean: need(d.mean, "mean")?, sigma: need(d.sigma, "sigma")? },
            "uniform" => DensityKind::Uniform { a: need(d.a, "a")?, b: need(d.b, "b")? },
            other => return bad("init.density.kind", format!("expected \"gaussian\" or \"uniform\", got {other:?}")),
        };
        let spec = DensitySpec { kind, mass: self.problem.mass };
        spec.validate().map_err(|e| Failure::Config(format!("init.density: {e}")))?;
        Ok(Some(spec))
    }

    pub fn initial_state(&self) -> Result<(ParticleState, Params), Failure> {
        let p = self.params()?;
        let Some(init) = &self.init else { return bad("init", "missing".into()) };
        let state = if let Some(x) = &init.positions {
            ParticleState::new(x.clone(), 0.0).map_err(|e| Failure::Config(format!("init.positions: {e}")))?
        } else if let Some(r) = init.reduced {
            ReducedPoint::new(r.u, r.v).map_err(|e| Failure::Config(format!("init.reduced: {e}")))?.to_state()
        } else {
            let spec = self.density()?.expect("one init variant");
            let (s, q) = density::quantile_init(&spec, p.n(), p.gamma(), p.time_scaling())
                .map_err(|e| Failure::Config(format!("init.density: {e}")))?;
            debug_assert_eq!(q, p);
            s
        };
        Ok((state, p))
    }

    pub fn integrator_config(&self) -> Result<IntegratorConfig, Failure> {
        let i = &self.integrator;
        let d = IntegratorConfig::default();
        let c = IntegratorConfig {
            method: match i.method {
                MethodName::Rk45 => Method::AdaptiveRK45,
                MethodName::ImplicitEuler => Method::ImplicitEuler,
            },
            rtol: i.rtol.unwrap_or(d.rtol),
            atol: i.atol.unwrap_or(d.atol),
            dt_init: i.dt_init.unwrap_or(d.dt_init),
            dt_min: i.dt_min.unwrap_or(d.dt_min),
            dt_max: i.dt_max.unwrap_or(d.dt_max),
            t_max: i.t_max.unwrap_or(d.t_max),
            collision_eps: i.collision_eps.unwrap_or(d.collision_eps),
            sample_every: i.sample_every.unwrap_or(d.sample_every),
            newton_tol: i.newton_tol.unwrap_or(d.newton_tol),
            newton_max_iter: i.newton_max_iter.unwrap_or(d.newton_max_iter),
        };
        c.validate().map_err(|e| Failure::Config(format!("integrator: {e}")))?;
        Ok(c)
    }

    pub fn sweep_config(&self) -> Result<SweepConfig, Failure> {
        let d = SweepConfig::default();
        let pp = self.phase_plane.clone().unwrap_or_default();
        let window = match pp.window {
            Some([u_min, u_max, v_min, v_max]) => Window { u_min, u_max, v_min, v_max },
            None => d.window,
        };
        window.validate().map_err(|e| Failure::Config(format!("phase_plane.window: {e}")))?;
        let [nu, nv] = pp.resolution.unwrap_or([d.resolution.0, d.resolution.1]);
        if nu == 0 || nv == 0 {
            return bad("phase_plane.resolution", "both entries must be positive".into());
        }
        let sep = SeparatrixConfig {
            window,
            integrator: self.integrator_config()?,
            rays: pp.rays.unwrap_or(d.separatrix.rays),
            ray_tol: pp.ray_tol.unwrap_or(d.separatrix.ray_tol),
            trace_step: pp.trace_step.unwrap_or(d.separatrix.trace_step),
        };
        Ok(SweepConfig {
            window,
            resolution: (nu, nv),
            integrator: self.integrator_config()?,
            curve_samples: pp.curve_samples.unwrap_or(d.curve_samples),
            separatrix: sep,
        })
    }
}

fn bad<T>(field: &str, msg: String) -> Result<T, Failure> {
    Err(Failure::Config(format!("{field}: {msg}")))
}
