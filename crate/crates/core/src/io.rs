//! Flat `key = value` experiment configuration, CSV emission and the run
//! manifest. Files are written to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::harness::{self, default_snapshot_times, ExperimentSpec};
use crate::lattice::Lattice;
use crate::model::{PhysParams, SchemeForm, TimeGrid};
use crate::scalar::Real;
use crate::schemes::{FieldState, SolverConfig};

pub const TIMESERIES_HEADER: &str = "step,time,h_total,h_mod_literal,h_mod_quadrature,parity_sep,nyquist_amp,phi_min,phi_max";
pub const WAVEFORM_HEADER: &str = "k,x,phi,psi";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every configurable key, in echo order.
pub const CONFIG_KEYS: &[&str] = &[
    "form",
    "hubble",
    "dx",
    "dt",
    "t_end",
    "mass",
    "p",
    "amplitude",
    "newton_tol",
    "max_newton_iters",
    "dg_eps",
    "damping",
    "sample_every",
    "snapshot_times",
    "perturb_eps",
    "out_dir",
];

/// Parsed configuration before it is turned into an [`ExperimentSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub form: SchemeForm,
    pub hubble: f64,
    pub dx: f64,
    pub dt: f64,
    pub t_end: f64,
    pub mass: f64,
    pub p: u32,
    pub amplitude: f64,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub dg_eps: f64,
    pub damping: f64,
    pub sample_every: u64,
    /// `None` means quarter points of `[0, t_end]`.
    pub snapshot_times: Option<Vec<f64>>,
    pub perturb_eps: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverConfig::<f64>::default();
        Self {
            form: SchemeForm::FormII,
            hubble: 0.0,
            dx: 1.0 / 100.0,
            dt: 1.0 / 500.0,
            t_end: harness::REFERENCE_T_END,
            mass: harness::DEFAULT_MASS,
            p: harness::REFERENCE_EXPONENT,
            amplitude: harness::REFERENCE_AMPLITUDE,
            newton_tol: solver.newton_tol,
            max_newton_iters: solver.max_newton_iters,
            dg_eps: solver.dg_eps,
            damping: solver.damping,
            sample_every: harness::DEFAULT_SAMPLE_EVERY,
            snapshot_times: None,
            perturb_eps: None,
            out_dir: None,
        }
    }
}

fn key_err<T>(key: &str, msg: impl std::fmt::Display) -> Result<T> {
    Err(Error::Config(format!("{key}: {msg}")))
}

/// Reals accept plain decimal/scientific notation or a fraction `a/b`.
pub fn parse_real(text: &str) -> std::result::Result<f64, String> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| format!("cannot parse `{text}` as a number"))?;
            let den: f64 = den.trim().parse().map_err(|_| format!("cannot parse `{text}` as a number"))?;
            num / den
        }
        None => text.parse().map_err(|_| format!("cannot parse `{text}` as a number"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("`{text}` is not finite"))
    }
}

fn parse_positive(key: &str, value: &str) -> Result<f64> {
    match parse_real(value) {
        Ok(v) if v > 0.0 => Ok(v),
        Ok(v) => key_err(key, format!("{v} out of range, expected > 0")),
        Err(e) => key_err(key, e),
    }
}

fn parse_int<T: FromStr>(key: &str, value: &str, min: T, range: &str) -> Result<T>
where
    T: PartialOrd + Copy,
{
    match value.trim().parse::<T>() {
        Ok(v) if v >= min => Ok(v),
        Ok(_) => key_err(key, format!("`{}` out of range, expected {range}", value.trim())),
        Err(_) => key_err(key, format!("cannot parse `{}` as an integer", value.trim())),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "form" => {
                self.form = value
                    .parse()
                    .or_else(|_| key_err(key, format!("`{value}` is not a scheme form, expected I or II")))?
            }
            "hubble" => self.hubble = parse_real(value).or_else(|e| key_err(key, e))?,
            "dx" => self.dx = parse_positive(key, value)?,
            "dt" => self.dt = parse_positive(key, value)?,
            "t_end" => {
                self.t_end = match parse_real(value) {
                    Ok(v) if v >= 0.0 => v,
                    Ok(v) => return key_err(key, format!("{v} out of range, expected >= 0")),
                    Err(e) => return key_err(key, e),
                }
            }
            "mass" => self.mass = parse_real(value).or_else(|e| key_err(key, e))?,
            "p" => self.p = parse_int(key, value, 2u32, ">= 2")?,
            "amplitude" => self.amplitude = parse_real(value).or_else(|e| key_err(key, e))?,
            "newton_tol" => self.newton_tol = parse_positive(key, value)?,
            "max_newton_iters" => self.max_newton_iters = parse_int(key, value, 1usize, ">= 1")?,
            "dg_eps" => self.dg_eps = parse_positive(key, value)?,
            "damping" => {
                self.damping = match parse_real(value) {
                    Ok(v) if v > 0.0 && v < 1.0 => v,
                    Ok(v) => return key_err(key, format!("{v} out of range, expected in (0, 1)")),
                    Err(e) => return key_err(key, e),
                }
            }
            "sample_every" => self.sample_every = parse_int(key, value, 1u64, ">= 1")?,
            "snapshot_times" => {
                self.snapshot_times = Some(if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|t| parse_real(t).or_else(|e| key_err(key, e)))
                        .collect::<Result<_>>()?
                })
            }
            "perturb_eps" => {
                self.perturb_eps = match value {
                    "" | "none" => None,
                    v => Some(parse_real(v).or_else(|e| key_err(key, e))?),
                }
            }
            "out_dir" => self.out_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => return key_err(key, format!("unknown key, expected one of {}", CONFIG_KEYS.join(", "))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, found `{line}`",
                    lineno + 1
                )));
            };
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::parse_str(&text)
    }

    /// Number of cells on the unit interval; `1/dx` must be an integer.
    pub fn cells(&self) -> Result<usize> {
        let n = 1.0 / self.dx;
        let rounded = n.round();
        if (n - rounded).abs() > 1e-9 * rounded || rounded < 1.0 {
            return key_err("dx", format!("{} does not divide the unit interval", self.dx));
        }
        Ok(rounded as usize)
    }

    pub fn steps(&self) -> Result<u64> {
        harness::steps_for(self.t_end, 1.0 / self.dt).or_else(|_| {
            key_err(
                "t_end",
                format!("{} is not a whole number of steps of dt = {}", self.t_end, self.dt),
            )
        })
    }

    /// Builds and validates the experiment.
    pub fn to_spec(&self) -> Result<ExperimentSpec<f64>> {
        let params = PhysParams::new(1, self.mass, self.p, self.hubble)?;
        let lattice = Arc::new(Lattice::unit_interval(self.cells()?)?);
        let time = TimeGrid::new(self.dt, 0.0, self.steps()?)?;
        let solver = SolverConfig {
            newton_tol: self.newton_tol,
            max_newton_iters: self.max_newton_iters,
            dg_eps: self.dg_eps,
            damping: self.damping,
            ..SolverConfig::default()
        };
        let snapshot_times = match &self.snapshot_times {
            Some(t) => t.clone(),
            None => default_snapshot_times(self.t_end),
        };
        let spec = ExperimentSpec {
            form: self.form,
            params,
            lattice,
            time,
            amplitude: self.amplitude,
            perturbation: self.perturb_eps,
            solver,
            sample_every: self.sample_every,
            snapshot_times,
        };
        spec.validate().map_err(|e| match e {
            Error::Config(m) if m.starts_with("snapshot") => Error::Config(format!("snapshot_times: {m}")),
            other => other,
        })?;
        Ok(spec)
    }

    /// The configuration in its own grammar; parsing it gives back `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let snapshots = self.snapshot_times.as_ref().map(|v| {
            v.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(",")
        });
        let mut out = vec![
            ("form", self.form.label().to_string()),
            ("hubble", format!("{:?}", self.hubble)),
            ("dx", format!("{:?}", self.dx)),
            ("dt", format!("{:?}", self.dt)),
            ("t_end", format!("{:?}", self.t_end)),
            ("mass", format!("{:?}", self.mass)),
            ("p", self.p.to_string()),
            ("amplitude", format!("{:?}", self.amplitude)),
            ("newton_tol", format!("{:?}", self.newton_tol)),
            ("max_newton_iters", self.max_newton_iters.to_string()),
            ("dg_eps", format!("{:?}", self.dg_eps)),
            ("damping", format!("{:?}", self.damping)),
            ("sample_every", self.sample_every.to_string()),
        ];
        if let Some(s) = snapshots {
            out.push(("snapshot_times", s));
        }
        if let Some(eps) = self.perturb_eps {
            out.push(("perturb_eps", format!("{eps:?}")));
        }
        if let Some(dir) = &self.out_dir {
            out.push(("out_dir", dir.display().to_string()));
        }
        out
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `contents` next to `path` and renames it into place; the
/// temporary file is removed on failure.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io_error(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_error(path, e)
    })
}

fn push_value<T: Real>(line: &mut String, v: T) {
    let _ = write!(line, ",{v:.16e}");
}

pub fn format_timeseries<T: Real>(records: &[DiagnosticsRecord<T>]) -> String {
    let mut out = String::with_capacity(64 + records.len() * 200);
    out.push_str(TIMESERIES_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{}", r.step);
        for v in [
            r.time,
            r.h_total,
            r.h_mod_literal,
            r.h_mod_quadrature,
            r.parity_sep,
            r.nyquist_amp,
            r.phi_min,
            r.phi_max,
        ] {
            push_value(&mut out, v);
        }
        out.push('\n');
    }
    out
}

/// CSV of diagnostics records, 17 significant digits per value.
pub fn emit_timeseries<T: Real>(records: &[DiagnosticsRecord<T>], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Argument("no records to write".into()));
    }
    write_atomic(path, format_timeseries(records).as_bytes())
}

fn parse_row(path: &Path, lineno: usize, line: &str, width: usize) -> Result<Vec<f64>> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != width {
        return Err(io_error(path, format!("line {lineno}: expected {width} columns, found {}", fields.len())));
    }
    fields
        .iter()
        .map(|f| f.parse::<f64>().map_err(|_| io_error(path, format!("line {lineno}: bad value `{f}`"))))
        .collect()
}

fn read_csv(path: &Path, header: &str) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(io_error(path, format!("missing header `{header}`")));
    }
    let width = header.split(',').count();
    lines
        .enumerate()
        .map(|(i, line)| parse_row(path, i + 2, line, width))
        .collect()
}

/// Reads a file written by [`emit_timeseries`].
pub fn read_timeseries(path: &Path) -> Result<Vec<DiagnosticsRecord<f64>>> {
    Ok(read_csv(path, TIMESERIES_HEADER)?
        .into_iter()
        .map(|v| DiagnosticsRecord {
            step: v[0] as u64,
            time: v[1],
            h_total: v[2],
            h_mod_literal: v[3],
            h_mod_quadrature: v[4],
            parity_sep: v[5],
            nyquist_amp: v[6],
            phi_min: v[7],
            phi_max: v[8],
        })
        .collect())
}

pub fn format_waveform<T: Real>(state: &FieldState<T>) -> String {
    let lattice = state.lattice();
    let mut out = String::with_capacity(16 + state.phi.len() * 80);
    out.push_str(WAVEFORM_HEADER);
    out.push('\n');
    for (k, (&phi, &psi)) in state.phi.values().iter().zip(state.psi.values()).enumerate() {
        let _ = write!(out, "{k}");
        push_value(&mut out, lattice.coordinate(0, k));
        push_value(&mut out, phi);
        push_value(&mut out, psi);
        out.push('\n');
    }
    out
}

/// One-dimensional snapshot as `k,x,phi,psi`.
pub fn emit_waveform<T: Real>(state: &FieldState<T>, path: &Path) -> Result<()> {
    if state.lattice().dim() != 1 {
        return Err(Error::Argument("waveform output is one-dimensional".into()));
    }
    write_atomic(path, format_waveform(state).as_bytes())
}

/// One waveform row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformRow {
    pub k: usize,
    pub x: f64,
    pub phi: f64,
    pub psi: f64,
}

pub fn read_waveform(path: &Path) -> Result<Vec<WaveformRow>> {
    Ok(read_csv(path, WAVEFORM_HEADER)?
        .into_iter()
        .map(|v| WaveformRow {
            k: v[0] as usize,
            x: v[1],
            phi: v[2],
            psi: v[3],
        })
        .collect())
}

/// File name of the waveform snapshot taken at `level`.
pub fn waveform_name(level: u64) -> String {
    format!("waveform_{level:09}.csv")
}

/// Provenance record written after a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub tool_version: String,
    /// Wall-clock seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub converged: bool,
    pub outputs: Vec<PathBuf>,
    pub baselines: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "tool_version = {}", self.tool_version);
        let _ = writeln!(s, "started = {:.3}", self.started);
        let _ = writeln!(s, "finished = {:.3}", self.finished);
        let _ = writeln!(s, "converged = {}", self.converged);
        for out in &self.outputs {
            let _ = writeln!(s, "output = {}", out.display());
        }
        for (name, value) in &self.baselines {
            let _ = writeln!(s, "baseline.{name} = {value:?}");
        }
        for (key, value) in self.config.entries() {
            let _ = writeln!(s, "spec.{key} = {value}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = RunManifest {
            command: String::new(),
            config: RunConfig::default(),
            tool_version: String::new(),
            started: 0.0,
            finished: 0.0,
            converged: false,
            outputs: Vec::new(),
            baselines: Vec::new(),
        };
        let bad = |key: &str, value: &str| Error::Config(format!("manifest {key}: bad value `{value}`"));
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Config(format!("manifest: malformed line `{line}`")))?;
            match key {
                "command" => m.command = value.to_string(),
                "tool_version" => m.tool_version = value.to_string(),
                "started" => m.started = value.parse().map_err(|_| bad(key, value))?,
                "finished" => m.finished = value.parse().map_err(|_| bad(key, value))?,
                "converged" => m.converged = value.parse().map_err(|_| bad(key, value))?,
                "output" => m.outputs.push(PathBuf::from(value)),
                _ => {
                    if let Some(name) = key.strip_prefix("baseline.") {
                        m.baselines.push((name.to_string(), value.parse().map_err(|_| bad(key, value))?));
                    } else if let Some(spec_key) = key.strip_prefix("spec.") {
                        m.config.set(spec_key, value)?;
                    } else {
                        return Err(Error::Config(format!("manifest: unknown key `{key}`")));
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| io_error(path, e))?)
    }
}
