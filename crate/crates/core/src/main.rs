use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use desitter_kg::harness::{self, RunOutput, FROZEN_BASELINES, STANDARD_LADDER};
use desitter_kg::io::{self, RunConfig, RunManifest};
use desitter_kg::{Error, Resolution, SchemeForm, Spec64};

const OUT_DIR_ENV: &str = "KGSIM_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "kgsim-out";
const DEFAULT_PERTURB_EPS: f64 = 1e-10;

#[derive(Parser)]
#[command(name = "kgsim", version, about = "Klein-Gordon on de Sitter: structure-preserving runs and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment
    Run(SpecArgs),
    /// Run the experiment over a refinement ladder
    Converge {
        #[command(flatten)]
        spec: SpecArgs,
        /// Grids as CELLS:STEPS_PER_UNIT, comma separated
        #[arg(long, value_delimiter = ',')]
        ladder: Vec<String>,
    },
    /// Seed a Nyquist perturbation and run both forms
    Perturb(SpecArgs),
    /// Run both forms on the same configuration
    Compare(SpecArgs),
}

/// Each flag overrides the config-file key of the same name.
#[derive(Args, Clone, Default)]
struct SpecArgs {
    /// Config file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    form: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    hubble: Option<String>,
    #[arg(long)]
    dx: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    t_end: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    mass: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    amplitude: Option<String>,
    #[arg(long)]
    newton_tol: Option<String>,
    #[arg(long)]
    sample_every: Option<String>,
    /// Output directory [default: $KGSIM_OUT_DIR, else ./kgsim-out]
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    perturb_eps: Option<String>,
}

impl SpecArgs {
    fn config(&self) -> desitter_kg::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("form", &self.form),
            ("hubble", &self.hubble),
            ("dx", &self.dx),
            ("dt", &self.dt),
            ("t_end", &self.t_end),
            ("mass", &self.mass),
            ("p", &self.p),
            ("amplitude", &self.amplitude),
            ("newton_tol", &self.newton_tol),
            ("sample_every", &self.sample_every),
            ("out_dir", &self.out_dir),
            ("perturb_eps", &self.perturb_eps),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if cfg.out_dir.is_none() {
            cfg.out_dir = Some(match std::env::var_os(OUT_DIR_ENV) {
                Some(dir) if !dir.is_empty() => PathBuf::from(dir),
                _ => PathBuf::from(DEFAULT_OUT_DIR),
            });
        }
        Ok(cfg)
    }
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn create_dir(dir: &Path) -> desitter_kg::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })
}

/// Time series plus one waveform per snapshot; returns the files written.
fn write_run(out: &RunOutput<f64>, dir: &Path) -> desitter_kg::Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut files = Vec::new();
    let ts = dir.join("timeseries.csv");
    io::emit_timeseries(&out.records, &ts)?;
    files.push(ts);
    for snap in &out.snapshots {
        let path = dir.join(io::waveform_name(snap.level));
        io::emit_waveform(snap, &path)?;
        files.push(path);
    }
    Ok(files)
}

fn status(out: &RunOutput<f64>) -> String {
    match &out.failure {
        None => "ok".into(),
        Some(e) => format!("failed ({e})"),
    }
}

fn run_summary(out: &RunOutput<f64>, spec: &Spec64) -> String {
    let last = out.last();
    let drift = if spec.params.hubble == 0.0 {
        out.max_relative_drift()
    } else {
        out.max_relative_modified_drift()
    };
    format!(
        "form={} steps={}/{} drift={:.3e} parity_sep={:.3e} nyquist={:.3e} newton_mean={:.2} newton_max={} status={}",
        out.form.label(),
        out.newton.steps,
        spec.time.steps,
        drift,
        last.parity_sep,
        last.nyquist_amp,
        out.newton.mean_iterations(),
        out.newton.max_iterations,
        status(out),
    )
}

struct Outcome {
    converged: bool,
    outputs: Vec<PathBuf>,
    summary: String,
}

fn form_dir(out_dir: &Path, form: SchemeForm) -> PathBuf {
    out_dir.join(format!("form-{}", form.label()))
}

fn cmd_run(spec: &Spec64, out_dir: &Path) -> desitter_kg::Result<Outcome> {
    let out = harness::run(spec)?;
    let outputs = write_run(&out, out_dir)?;
    Ok(Outcome {
        converged: out.succeeded(),
        outputs,
        summary: format!("run {}", run_summary(&out, spec)),
    })
}

fn cmd_compare(spec: &Spec64, out_dir: &Path) -> desitter_kg::Result<Outcome> {
    let specs: Vec<Spec64> = SchemeForm::ALL
        .iter()
        .map(|&form| Spec64 { form, ..spec.clone() })
        .collect();
    let outs = harness::run_parallel(&specs)?;
    let mut outputs = Vec::new();
    let mut parts = Vec::new();
    for out in &outs {
        outputs.extend(write_run(out, &form_dir(out_dir, out.form))?);
        parts.push(run_summary(out, spec));
    }
    Ok(Outcome {
        converged: outs.iter().all(|o| o.succeeded()),
        outputs,
        summary: format!("compare {}", parts.join(" | ")),
    })
}

fn cmd_perturb(spec: &Spec64, out_dir: &Path) -> desitter_kg::Result<Outcome> {
    let summary = harness::perturbation_growth(spec)?;
    let mut outputs = Vec::new();
    let mut table = String::from("form,epsilon,initial,peak,final,amplification,max_parity_sep,final_parity_sep\n");
    let mut parts = Vec::new();
    for g in &summary.forms {
        outputs.extend(write_run(&g.output, &form_dir(out_dir, g.form))?);
        let _ = writeln!(
            table,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            g.form.label(),
            summary.epsilon,
            g.initial,
            g.peak,
            g.final_amplitude,
            g.amplification,
            g.max_parity_sep,
            g.final_parity_sep
        );
        parts.push(format!(
            "{}: amplification={:.3e} final_nyquist={:.3e} max_parity_sep={:.3e} newton_mean={:.2} status={}",
            g.form.label(),
            g.amplification,
            g.final_amplitude,
            g.max_parity_sep,
            g.output.newton.mean_iterations(),
            status(&g.output)
        ));
    }
    create_dir(out_dir)?;
    let path = out_dir.join("growth.csv");
    io::write_atomic(&path, table.as_bytes())?;
    outputs.push(path);
    Ok(Outcome {
        converged: summary.forms.iter().all(|g| g.output.succeeded()),
        outputs,
        summary: format!("perturb eps={:e} {}", summary.epsilon, parts.join(" | ")),
    })
}

fn parse_ladder(items: &[String]) -> desitter_kg::Result<Vec<Resolution>> {
    if items.is_empty() {
        return Ok(STANDARD_LADDER.to_vec());
    }
    items
        .iter()
        .map(|item| {
            let bad = || Error::Config(format!("ladder: `{item}` is not CELLS:STEPS_PER_UNIT"));
            let (c, s) = item.split_once(':').ok_or_else(bad)?;
            Ok(Resolution::new(
                c.trim().parse().map_err(|_| bad())?,
                s.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

fn fmt_orders(orders: &[f64]) -> String {
    orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>().join(",")
}

fn cmd_converge(spec: &Spec64, ladder: &[Resolution], out_dir: &Path) -> desitter_kg::Result<Outcome> {
    let report = harness::convergence_study(spec, ladder)?;
    let mut outputs = Vec::new();
    let mut table = String::from("cells,steps_per_unit,conservation_error,oracle_error,conservation_order,oracle_order\n");
    for (i, e) in report.entries.iter().enumerate() {
        let dir = out_dir.join(format!("grid-{}x{}", e.resolution.cells, e.resolution.steps_per_unit));
        outputs.extend(write_run(&e.output, &dir)?);
        let order = |v: &[f64]| if i == 0 { String::new() } else { format!("{:.16e}", v[i - 1]) };
        let _ = writeln!(
            table,
            "{},{},{:.16e},{:.16e},{},{}",
            e.resolution.cells,
            e.resolution.steps_per_unit,
            e.conservation_error,
            e.oracle_error,
            order(&report.conservation_orders),
            order(&report.oracle_orders)
        );
    }
    create_dir(out_dir)?;
    let path = out_dir.join("convergence.csv");
    io::write_atomic(&path, table.as_bytes())?;
    outputs.push(path);
    let converged = report.entries.iter().all(|e| e.output.succeeded());
    let newton_max = report.entries.iter().map(|e| e.output.newton.max_iterations).max().unwrap_or(0);
    Ok(Outcome {
        converged,
        outputs,
        summary: format!(
            "converge form={} grids={} conservation_orders=[{}] oracle_orders=[{}] newton_max={} status={}",
            report.form.label(),
            report.entries.len(),
            fmt_orders(&report.conservation_orders),
            fmt_orders(&report.oracle_orders),
            newton_max,
            if converged { "ok" } else { "failed" }
        ),
    })
}

fn execute(command: &Command) -> desitter_kg::Result<bool> {
    let started = now();
    let (name, args) = match command {
        Command::Run(a) => ("run", a),
        Command::Converge { spec, .. } => ("converge", spec),
        Command::Perturb(a) => ("perturb", a),
        Command::Compare(a) => ("compare", a),
    };
    let mut config = args.config()?;
    if name == "perturb" && config.perturb_eps.is_none() {
        config.perturb_eps = Some(DEFAULT_PERTURB_EPS);
    }
    let spec = config.to_spec()?;
    let out_dir = config.out_dir.clone().expect("out_dir is resolved");
    let outcome = match command {
        Command::Run(_) => cmd_run(&spec, &out_dir)?,
        Command::Converge { ladder, .. } => cmd_converge(&spec, &parse_ladder(ladder)?, &out_dir)?,
        Command::Perturb(_) => cmd_perturb(&spec, &out_dir)?,
        Command::Compare(_) => cmd_compare(&spec, &out_dir)?,
    };
    let manifest = RunManifest {
        command: name.into(),
        config,
        tool_version: io::TOOL_VERSION.into(),
        started,
        finished: now(),
        converged: outcome.converged,
        outputs: outcome.outputs,
        baselines: FROZEN_BASELINES.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
    };
    manifest.write(&out_dir.join("manifest.txt"))?;
    println!("{}", outcome.summary);
    Ok(outcome.converged)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ (Error::Config(_) | Error::Argument(_))) => {
            eprintln!("kgsim: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("kgsim: {e}");
            ExitCode::from(1)
        }
    }
}
