use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use collapse_core::analysis::{self, CriticalPoint, ReducedPoint, ReducedSpectrum, Separatrix};
use collapse_core::criteria::{self, Certificate, CN_TOL};
use collapse_core::density;
use collapse_core::dynamics::{self, Outcome, RunClass};
use collapse_core::model::{self, Diagnostics, ParticleState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::output;

/// Settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub out: PathBuf,
    pub quiet: bool,
}

impl Context {
    fn path(&self, name: &Path) -> PathBuf {
        self.out.join(name)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn prepare(&self) -> Result<(), Failure> {
        fs::create_dir_all(&self.out)
            .map_err(|e| Failure::Config(format!("--out: cannot create {}: {e}", self.out.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub config: RunConfig,
    pub certificate: Certificate,
    pub outcome: Outcome,
    pub classification: RunClass,
    pub t_star: Option<f64>,
    pub terminal_t: f64,
    pub terminal: Diagnostics,
    pub step_count: usize,
    pub rejected_steps: usize,
    pub energy_violations: usize,
    pub max_energy_increase: f64,
    pub wall_time_s: f64,
    /// Set when a certified-global run is observed to collapse.
    pub consistency_violation: bool,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig, ctx: &Context) -> Result<SummaryRecord, Failure> {
    let (state, p) = cfg.initial_state()?;
    let icfg = cfg.integrator_config()?;
    let certificate = criteria::classify_initial(&state, &p)?;
    ctx.prepare()?;
    let start = Instant::now();
    let (record, outcome) = dynamics::simulate(&state, &p, &icfg)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let classification = dynamics::classify_run(&record, &outcome);
    let last = record.samples.last().ok_or_else(|| Failure::Numerical("empty trajectory".into()))?;

    output::write_trajectory(&ctx.path(&cfg.outputs.trajectory_csv), &record.samples)?;
    let summary = SummaryRecord {
        config: cfg.clone(),
        t_star: match outcome {
            Outcome::Collision { t_star, .. } => Some(t_star),
            _ => None,
        },
        terminal_t: last.t,
        terminal: last.diagnostics,
        step_count: record.step_count,
        rejected_steps: record.rejected_steps,
        energy_violations: record.energy_violations,
        max_energy_increase: record.max_energy_increase,
        wall_time_s,
        consistency_violation: certificate.verdict == criteria::Verdict::GlobalCertified
            && classification == RunClass::BlowupObserved,
        certificate,
        outcome,
        classification,
    };
    write_json(&ctx.path(&cfg.outputs.summary_json), &summary)?;
    ctx.say(format!(
        "verdict {:?}, run {:?}, outcome {}, {} steps",
        summary.certificate.verdict,
        summary.classification,
        describe_outcome(&outcome),
        summary.step_count
    ));
    if summary.consistency_violation {
        eprintln!("warning: certified-global initial state collapsed");
    }
    if matches!(outcome, Outcome::StepSizeUnderflow { .. }) && classification == RunClass::Undetermined {
        return Err(Failure::Numerical(format!("step size underflow at t = {}", last.t)));
    }
    Ok(summary)
}

fn describe_outcome(o: &Outcome) -> String {
    match o {
        Outcome::ReachedTmax => "reached t_max".into(),
        Outcome::Collision { t_star, pair, .. } => {
            format!("collision of {} and {} at t = {t_star:.10e}", pair.0 + 1, pair.1 + 1)
        }
        Outcome::StepSizeUnderflow { t } => format!("step size underflow at t = {t:.10e}"),
    }
}

pub fn criteria(cfg: &RunConfig, ctx: &Context) -> Result<Certificate, Failure> {
    let (state, p) = cfg.initial_state()?;
    let cert = criteria::classify_initial(&state, &p)?;
    if !ctx.quiet {
        println!("N = {}, gamma = {}, M = {}, h = {}", p.n(), p.gamma(), p.mass(), p.h());
        for (tag, c) in &cert.thresholds {
            println!(
                "{:<12} measured {:>24}  threshold {:>24}  {}",
                tag.as_str(),
                output::fmt_f64(c.measured),
                output::fmt_f64(c.threshold),
                if cert.triggered.contains(tag) { "triggered" } else { "-" }
            );
        }
        if let Some(r) = cert.mass_regime {
            println!("mass regime  {r:?}");
        }
        println!("verdict      {:?}", cert.verdict);
    }
    Ok(cert)
}

#[derive(Debug, Clone, Serialize)]
struct PhasePlaneSummary<'a> {
    config: &'a RunConfig,
    resolution: (usize, usize),
    failures: usize,
    global_cells: usize,
    blowup_cells: usize,
    undetermined_cells: usize,
    contiguous_boundary: bool,
    separatrix: Option<&'a Separatrix>,
    curve_points: Vec<(&'a str, usize)>,
}

pub fn phase_plane(cfg: &RunConfig, ctx: &Context) -> Result<analysis::PhasePortrait, Failure> {
    let p = cfg.params()?;
    if p.n() != 3 {
        return Err(Failure::Config(format!("problem.n: the phase plane needs 3 particles, got {}", p.n())));
    }
    let sweep = cfg.sweep_config()?;
    ctx.prepare()?;
    let pp = analysis::phase_plane_sweep(&p, &sweep)?;
    if pp.failures > 0 {
        eprintln!("warning: {} of {} cells failed and are marked Undetermined", pp.failures, pp.grid.len());
    }
    output::write_grid(&ctx.path(Path::new("grid.csv")), &pp)?;
    for c in &pp.curves {
        output::write_curve(&ctx.path(Path::new(&format!("{}.csv", c.name))), c)?;
    }
    let script = cfg.outputs.gnuplot.clone().unwrap_or_else(|| "phase_plane.gp".into());
    fs::write(ctx.path(&script), output::gnuplot_script(&pp, "grid.csv", "phase_plane.png"))?;
    let count = |k: RunClass| pp.grid.iter().filter(|c| **c == k).count();
    let summary = PhasePlaneSummary {
        config: cfg,
        resolution: pp.resolution,
        failures: pp.failures,
        global_cells: count(RunClass::GlobalObserved),
        blowup_cells: count(RunClass::BlowupObserved),
        undetermined_cells: count(RunClass::Undetermined),
        contiguous_boundary: pp.has_contiguous_boundary(),
        separatrix: pp.separatrix.as_ref(),
        curve_points: pp.curves.iter().map(|c| (c.name.as_str(), c.points.len())).collect(),
    };
    write_json(&ctx.path(&cfg.outputs.summary_json), &summary)?;
    ctx.say(format!(
        "{}x{} cells: {} global, {} blow-up, {} undetermined; boundary {}",
        pp.resolution.0,
        pp.resolution.1,
        summary.global_cells,
        summary.blowup_cells,
        summary.undetermined_cells,
        if summary.contiguous_boundary { "contiguous" } else { "fragmented" }
    ));
    if pp.separatrix.is_none() {
        eprintln!("warning: no separatrix could be constructed");
    }
    Ok(pp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnRow {
    pub n: usize,
    pub c: Option<f64>,
    pub gauss_lower: f64,
    pub lambda1_upper: f64,
}

pub fn cn(n_min: usize, n_max: usize, ctx: &Context) -> Result<Vec<CnRow>, Failure> {
    if n_min < 3 || n_max < n_min {
        return Err(Failure::Config(format!("need 3 <= n_min <= n_max, got {n_min}..{n_max}")));
    }
    ctx.prepare()?;
    let rows: Vec<CnRow> = (n_min..=n_max)
        .into_par_iter()
        .map(|n| {
            let c = criteria::c_of_n(n, CN_TOL);
            if let Err(e) = &c {
                eprintln!("warning: C({n}) failed: {e}");
            }
            let gauss_lower = criteria::gaussian_mu(n).map(|mu| criteria::c_of_mu(&mu)).unwrap_or(f64::NAN);
            CnRow { n, c: c.ok(), gauss_lower, lambda1_upper: criteria::c_upper_bound(n) }
        })
        .collect();
    let mut text = String::from("N,C(N),C(N)/N,gauss_lower,lambda1_upper\n");
    for r in &rows {
        let c = r.c.unwrap_or(f64::NAN);
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n,
            output::fmt_f64(c),
            output::fmt_f64(c / r.n as f64),
            output::fmt_f64(r.gauss_lower),
            output::fmt_f64(r.lambda1_upper)
        ));
    }
    fs::write(ctx.path(Path::new("cn.csv")), &text)?;
    ctx.say(format!("wrote {} rows to {}", rows.len(), ctx.path(Path::new("cn.csv")).display()));
    Ok(rows)
}

pub fn converge(cfg: &RunConfig, ctx: &Context) -> Result<density::ConvergenceReport, Failure> {
    let spec = cfg.density()?.ok_or_else(|| Failure::Config("init.density: required".into()))?;
    let n_list = cfg.converge.as_ref().map_or_else(|| vec![10, 100, 1000], |c| c.n.clone());
    if n_list.iter().any(|&n| n < 3) {
        return Err(Failure::Config("converge.n: every entry must be at least 3".into()));
    }
    ctx.prepare()?;
    let rep = density::convergence_report(&spec, cfg.problem.gamma, &n_list)?;
    let mut text = String::from(
        "N,h,second_moment,second_moment_ratio,threshold_w,threshold_w_ratio,threshold_c,threshold_c_ratio,\
         entropy,entropy_ratio,interaction,interaction_ratio,energy,C(N)/N\n",
    );
    for r in &rep.rows {
        let vals = [
            r.h,
            r.second_moment,
            r.second_moment_ratio,
            r.threshold_w,
            r.threshold_w_ratio,
            r.threshold_c,
            r.threshold_c_ratio,
            r.entropy,
            r.entropy_ratio,
            r.interaction,
            r.interaction_ratio,
            r.energy,
            r.c_n_over_n,
        ];
        let cols: Vec<String> = vals.iter().map(|v| output::fmt_f64(*v)).collect();
        text.push_str(&format!("{},{}\n", r.n, cols.join(",")));
    }
    fs::write(ctx.path(Path::new("converge.csv")), &text)?;
    write_json(&ctx.path(&cfg.outputs.summary_json), &rep)?;
    if !ctx.quiet {
        let c = &rep.continuous;
        println!(
            "continuum: I = {:.8e}, entropy = {:.8e}, interaction = {:.8e}",
            c.second_moment, c.entropy, c.interaction
        );
        println!("{:>7} {:>12} {:>12} {:>12} {:>12}", "N", "I ratio", "thr_w ratio", "thr_c ratio", "C(N)/N");
        for r in &rep.rows {
            println!(
                "{:>7} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                r.n, r.second_moment_ratio, r.threshold_w_ratio, r.threshold_c_ratio, r.c_n_over_n
            );
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
struct CriticalPointSummary<'a> {
    critical_point: &'a CriticalPoint,
    reduced_spectrum: Option<ReducedSpectrum>,
    virial_rhs: f64,
}

pub fn critical_point(cfg: &RunConfig, ctx: &Context) -> Result<CriticalPoint, Failure> {
    let p = cfg.params()?;
    if p.is_log_kernel() {
        return Err(Failure::Config("problem.gamma: critical points need gamma > 0".into()));
    }
    let explicit = cfg.init.as_ref().and_then(|i| i.positions.as_ref());
    let cp = match explicit {
        Some(x) => {
            let start =
                ParticleState::new(x.clone(), 0.0).map_err(|e| Failure::Config(format!("init.positions: {e}")))?;
            let start = analysis::dilate_to_critical_curve(start.recentered().x(), &p)?;
            analysis::newton_critical_point(&ParticleState::new(start, 0.0)?, &p, 1e-12)?
        }
        None if p.n() == 3 => analysis::symmetric_critical_point(&p)?,
        None => return Err(Failure::Config("init.positions: a starting state is needed for N > 3".into())),
    };
    let reduced_spectrum = if p.n() == 3 {
        let pt = ReducedPoint::from_state(&cp.state)?;
        Some(ReducedSpectrum::of(analysis::reduced_jacobian(pt, &p)?))
    } else {
        None
    };
    ctx.prepare()?;
    let summary =
        CriticalPointSummary { critical_point: &cp, reduced_spectrum, virial_rhs: model::virial_rhs(&cp.state, &p)? };
    write_json(&ctx.path(Path::new("critical_point.json")), &summary)?;
    if !ctx.quiet {
        let xs: Vec<String> = cp.state.x().iter().map(|v| format!("{v:.10}")).collect();
        println!("{:?} at [{}]", cp.kind, xs.join(", "));
        println!("gradient norm {:.3e} after {} Newton steps", cp.grad_norm, cp.iterations);
        if let Some(s) = reduced_spectrum {
            println!("reduced eigenvalues {:.6e}, {:.6e}", s.eigenvalues[0], s.eigenvalues[1]);
        }
    }
    Ok(cp)
}
