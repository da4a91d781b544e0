//! File formats: trajectory, grid and curve CSVs, and the phase-plane gnuplot script.
//!
//! Floats are written with 17 significant digits so that parsing returns the
//! exact value. Lines end in `\n`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use collapse_core::analysis::{Curve, PhasePortrait};
use collapse_core::dynamics::{RunClass, Sample};

use crate::failure::Failure;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x_{i}")));
    cols.extend(["G", "U", "W", "phi", "I2", "com", "min_gap", "virial_residual"].map(String::from));
    cols.join(",")
}

pub fn trajectory_row(s: &Sample) -> Vec<f64> {
    let d = &s.diagnostics;
    let mut row = vec![s.t];
    row.extend_from_slice(s.state.x());
    row.extend([d.g, d.u, d.w, d.phi, d.i2, d.com, d.min_gap, d.virial_residual]);
    row
}

pub fn write_trajectory(path: &Path, samples: &[Sample]) -> Result<(), Failure> {
    let n = samples.first().map_or(0, |s| s.state.len());
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", trajectory_header(n))?;
    for s in samples {
        let row: Vec<String> = trajectory_row(s).into_iter().map(fmt_f64).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Header and numeric rows of a CSV written by this module.
pub fn read_numeric_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), Failure> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap_or("").split(',').map(String::from).collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|c| c.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::Config(format!("line {}: {e}", k + 2)))?;
        if row.len() != header.len() {
            return Err(Failure::Config(format!("line {}: {} fields, header has {}", k + 2, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn class_name(c: RunClass) -> &'static str {
    match c {
        RunClass::GlobalObserved => "GlobalObserved",
        RunClass::BlowupObserved => "BlowupObserved",
        RunClass::Undetermined => "Undetermined",
    }
}

pub fn write_grid(path: &Path, pp: &PhasePortrait) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "u,v,class")?;
    let (nu, nv) = pp.resolution;
    for j in 0..nv {
        for i in 0..nu {
            let (u, v, c) = pp.cell(i, j);
            writeln!(w, "{},{},{}", fmt_f64(u), fmt_f64(v), class_name(c))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve(path: &Path, curve: &Curve) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "u,v")?;
    for &(u, v) in &curve.points {
        writeln!(w, "{},{}", fmt_f64(u), fmt_f64(v))?;
    }
    w.flush()?;
    Ok(())
}

const PANELS: [(&str, &str); 5] = [
    ("bu_w_curve", "blow-up: interaction bound"),
    ("bu_c_curve", "blow-up: entropy bound with C(3)"),
    ("critical_curve", "critical points: gamma W = h (N-1)"),
    ("ge_curve", "global existence"),
    ("separatrix", "separatrix"),
];

/// Six panels: each curve over the basin map, then all curves together.
pub fn gnuplot_script(pp: &PhasePortrait, grid_csv: &str, image: &str) -> String {
    let w = &pp.window;
    let mut s = String::new();
    s.push_str("set datafile separator \",\"\n");
    s.push_str("set terminal pngcairo size 1200,1600\n");
    s.push_str(&format!("set output \"{image}\"\n"));
    s.push_str(&format!("set xrange [{}:{}]\nset yrange [{}:{}]\n", w.u_min, w.u_max, w.v_min, w.v_max));
    s.push_str("set xlabel \"u = X_2 - X_1\"\nset ylabel \"v = X_3 - X_2\"\nset size ratio -1\n");
    s.push_str("basin(c) = c eq \"BlowupObserved\" ? 0xf4b6b0 : (c eq \"GlobalObserved\" ? 0xb8d4ef : 0xdddddd)\n");
    let cell = 80.0 / pp.resolution.0.max(pp.resolution.1) as f64;
    let grid = format!(
        "\"{grid_csv}\" skip 1 using 1:2:(basin(strcol(3))) with points pt 5 ps {:.3} lc rgb variable notitle",
        cell.clamp(0.2, 4.0)
    );
    let style = |name: &str| if name == "separatrix" { "with lines lw 3" } else { "with points pt 7 ps 0.4" };
    s.push_str("set multiplot layout 3,2\n");
    for (name, title) in PANELS {
        s.push_str(&format!("set title \"{title}\"\n"));
        if pp.curve(name).is_some_and(|c| !c.points.is_empty()) {
            s.push_str(&format!(
                "plot {grid}, \"{name}.csv\" skip 1 using 1:2 {} lc rgb \"black\" notitle\n",
                style(name)
            ));
        } else {
            s.push_str(&format!("plot {grid}\n"));
        }
    }
    s.push_str("set title \"all curves\"\n");
    let colours = ["#d62728", "#ff7f0e", "#2ca02c", "#1f77b4", "#000000"];
    let mut parts = vec![grid.clone()];
    for ((name, _), colour) in PANELS.iter().zip(colours) {
        if pp.curve(name).is_some_and(|c| !c.points.is_empty()) {
            parts.push(format!(
                "\"{name}.csv\" skip 1 using 1:2 {} lc rgb \"{colour}\" title \"{name}\" noenhanced",
                style(name)
            ));
        }
    }
    s.push_str(&format!("plot {}\n", parts.join(", ")));
    s.push_str("unset multiplot\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(trajectory_header(3), "t,x_1,x_2,x_3,G,U,W,phi,I2,com,min_gap,virial_residual");
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.0f64.sqrt(), 6.02214076e23, 5e-324, f64::MAX] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
