//! Experiment driver: the cosine initial data, full runs with sampled
//! diagnostics and waveform snapshots, grid-refinement studies and the
//! Nyquist-perturbation growth experiment.

use std::sync::Arc;

use crate::diagnostics::{
    energy_rate_integrand, nyquist_amplitude, parity_separation, record, total_hamiltonian, DiagnosticsRecord,
    ModifiedHamiltonianAccumulator,
};
use crate::error::{arg_err, config_err, Error, Result};
use crate::lattice::{Lattice, ScalarField};
use crate::model::{continuum_total_hamiltonian_initial, PhysParams, SchemeForm, TimeGrid};
use crate::scalar::Real;
use crate::schemes::{step, FieldState, SolverConfig};

pub const REFERENCE_AMPLITUDE: f64 = 4.0;
pub const REFERENCE_EXPONENT: u32 = 5;
pub const REFERENCE_T_END: f64 = 1000.0;
pub const REFERENCE_CURVED_HUBBLE: f64 = 1e-3;
pub const DEFAULT_MASS: f64 = 1.0;
pub const DEFAULT_SAMPLE_EVERY: u64 = 100;
/// A run is flagged as blown up once `max |phi|` exceeds this multiple of
/// the initial amplitude.
pub const BLOWUP_FACTOR: f64 = 10.0;

pub const CONSERVATION_REL_TOL: f64 = 1e-9;
pub const ORDER_RANGE: (f64, f64) = (1.9, 2.3);
pub const FLAT_FORM1_MIN_AMPLIFICATION: f64 = 10.0;
pub const FLAT_FORM2_MAX_FINAL_NYQUIST: f64 = 1e-6;
pub const CURVED_MAX_AMPLIFICATION: f64 = 2.0;
/// "Smooth" parity separation is at most this multiple of the value for the
/// unperturbed initial data on the same lattice.
pub const SMOOTH_PARITY_FACTOR: f64 = 10.0;

/// Regression bounds recorded in run manifests.
pub const FROZEN_BASELINES: &[(&str, f64)] = &[
    ("conservation_rel_tol", CONSERVATION_REL_TOL),
    ("oracle_order_min", ORDER_RANGE.0),
    ("oracle_order_max", ORDER_RANGE.1),
    ("flat_form1_min_amplification", FLAT_FORM1_MIN_AMPLIFICATION),
    ("flat_form2_max_final_nyquist", FLAT_FORM2_MAX_FINAL_NYQUIST),
    ("curved_max_amplification", CURVED_MAX_AMPLIFICATION),
    ("smooth_parity_factor", SMOOTH_PARITY_FACTOR),
];

/// A grid pair `(dx, dt) = (1/cells, 1/steps_per_unit)` on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Resolution {
    pub cells: usize,
    pub steps_per_unit: u64,
}

impl Resolution {
    pub const fn new(cells: usize, steps_per_unit: u64) -> Self {
        Self { cells, steps_per_unit }
    }

    pub fn dx<T: Real>(&self) -> T {
        T::one() / T::from_count(self.cells)
    }

    pub fn dt<T: Real>(&self) -> T {
        T::one() / T::from_u64(self.steps_per_unit).unwrap()
    }

    pub fn label(&self) -> String {
        format!("1/{}:1/{}", self.cells, self.steps_per_unit)
    }

    /// Number of steps reaching `t_end`; `t_end * steps_per_unit` must be an
    /// integer.
    pub fn steps_to(&self, t_end: f64) -> Result<u64> {
        steps_for(t_end, self.steps_per_unit as f64)
    }
}

/// The refinement ladder `(1/50, 1/250), (1/100, 1/500), (1/200, 1/1000)`.
pub const STANDARD_LADDER: [Resolution; 3] = [
    Resolution::new(50, 250),
    Resolution::new(100, 500),
    Resolution::new(200, 1000),
];

/// `t_end / dt` as an exact step count; fails unless it is integral to 1e-9.
pub fn steps_for(t_end: f64, inv_dt: f64) -> Result<u64> {
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return config_err(format!("t_end = {t_end} must be finite and nonnegative"));
    }
    let exact = t_end * inv_dt;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return config_err(format!("t_end = {t_end} is not a whole number of steps of 1/{inv_dt}"));
    }
    Ok(rounded as u64)
}

/// Everything that defines one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec<T> {
    pub form: SchemeForm,
    pub params: PhysParams<T>,
    pub lattice: Arc<Lattice<T>>,
    pub time: TimeGrid<T>,
    pub amplitude: T,
    /// Amplitude of the `(-1)^k` mode added to `phi` at `t = 0`.
    pub perturbation: Option<T>,
    pub solver: SolverConfig<T>,
    pub sample_every: u64,
    pub snapshot_times: Vec<T>,
}

impl<T: Real> ExperimentSpec<T> {
    /// The cosine experiment with `m = 1`, `p = 5`, `A = 4` on `[-1/2, 1/2)`.
    pub fn standard(form: SchemeForm, hubble: T, resolution: Resolution, t_end: f64) -> Result<Self> {
        let params = PhysParams::new(1, T::lit(DEFAULT_MASS), REFERENCE_EXPONENT, hubble)?;
        let lattice = Arc::new(Lattice::unit_interval(resolution.cells)?);
        let time = TimeGrid::new(resolution.dt(), T::zero(), resolution.steps_to(t_end)?)?;
        let spec = Self {
            form,
            params,
            lattice,
            time,
            amplitude: T::lit(REFERENCE_AMPLITUDE),
            perturbation: None,
            solver: SolverConfig::default(),
            sample_every: DEFAULT_SAMPLE_EVERY,
            snapshot_times: default_snapshot_times(t_end).into_iter().map(T::lit).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same experiment on another grid; sampling keeps the same physical
    /// interval and snapshot times are kept.
    pub fn with_resolution(&self, resolution: Resolution) -> Result<Self> {
        let t_end = (self.time.end_time() - self.time.t0).to_f64().unwrap();
        let old_rate = (T::one() / self.time.dt).to_f64().unwrap();
        let ratio = resolution.steps_per_unit as f64 / old_rate;
        let sample_every = ((self.sample_every as f64) * ratio).round().max(1.0) as u64;
        let spec = Self {
            lattice: Arc::new(Lattice::periodic_1d(
                resolution.cells,
                self.lattice.origin()[0],
                self.lattice.extent(0),
            )?),
            time: TimeGrid::new(resolution.dt(), self.time.t0, resolution.steps_to(t_end)?)?,
            sample_every,
            ..self.clone()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.solver.validate()?;
        if self.lattice.dim() != 1 || self.params.dim != 1 {
            return config_err("experiments run on one-dimensional lattices");
        }
        if self.sample_every == 0 {
            return config_err("sample_every must be at least 1");
        }
        if !self.amplitude.is_finite() {
            return config_err("amplitude must be finite");
        }
        if self.lattice.count(0) % 2 != 0 {
            return config_err("parity diagnostics need an even number of grid points");
        }
        if let Some(eps) = self.perturbation {
            if !eps.is_finite() {
                return config_err("perturbation amplitude must be finite");
            }
        }
        let (t0, t1) = (self.time.t0, self.time.end_time());
        let slack = self.time.dt * T::lit(1e-6);
        for &t in &self.snapshot_times {
            if t < t0 - slack || t > t1 + slack {
                return config_err(format!("snapshot time {t} outside [{t0}, {t1}]"));
            }
        }
        Ok(())
    }

    pub fn t_end(&self) -> T {
        self.time.end_time()
    }

    /// Step indices of the requested snapshots, sorted and deduplicated.
    pub fn snapshot_steps(&self) -> Vec<u64> {
        let mut steps: Vec<u64> = self
            .snapshot_times
            .iter()
            .map(|&t| ((t - self.time.t0) / self.time.dt).round().to_u64().unwrap_or(0))
            .map(|s| s.min(self.time.steps))
            .collect();
        steps.sort_unstable();
        steps.dedup();
        steps
    }

    /// Number of diagnostics records a complete run produces.
    pub fn expected_records(&self) -> usize {
        let steps = self.time.steps;
        (1 + steps / self.sample_every + u64::from(steps % self.sample_every != 0)) as usize
    }
}

/// Quarter points of `[0, t_end]`.
pub fn default_snapshot_times(t_end: f64) -> Vec<f64> {
    (0..=4).map(|q| t_end * q as f64 / 4.0).collect()
}

/// `phi = A cos 2 pi x`, `psi = 2 pi A sin 2 pi x` on a 1-d lattice.
pub fn initial_state<T: Real>(lattice: &Arc<Lattice<T>>, amplitude: T) -> Result<FieldState<T>> {
    if lattice.dim() != 1 {
        return config_err("the cosine initial data is one-dimensional");
    }
    let tau = T::TAU();
    let phi = ScalarField::from_fn(Arc::clone(lattice), |x| amplitude * (tau * x[0]).cos());
    let psi = ScalarField::from_fn(Arc::clone(lattice), |x| tau * amplitude * (tau * x[0]).sin());
    FieldState::new(phi, psi, T::zero())
}

/// Adds `eps (-1)^k` to `phi`.
pub fn add_nyquist_perturbation<T: Real>(state: &mut FieldState<T>, eps: T) {
    for (k, v) in state.phi.values_mut().iter_mut().enumerate() {
        if k % 2 == 0 {
            *v += eps;
        } else {
            *v -= eps;
        }
    }
}

/// Newton iteration statistics over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NewtonStats {
    pub steps: u64,
    pub total_iterations: u64,
    pub max_iterations: usize,
}

impl NewtonStats {
    pub fn mean_iterations(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.total_iterations as f64 / self.steps as f64
        }
    }
}

/// Result of [`run`]. On solver failure the records stop at the last good
/// step and `failure` holds the error.
#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub form: SchemeForm,
    pub records: Vec<DiagnosticsRecord<T>>,
    pub snapshots: Vec<FieldState<T>>,
    pub newton: NewtonStats,
    pub failure: Option<Error>,
}

impl<T: Real> RunOutput<T> {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    pub fn initial(&self) -> &DiagnosticsRecord<T> {
        &self.records[0]
    }

    pub fn last(&self) -> &DiagnosticsRecord<T> {
        self.records.last().expect("run has an initial record")
    }

    /// `max_l |H^(l) - H^(0)| / |H^(0)|` over sampled records.
    pub fn max_relative_drift(&self) -> T {
        max_relative_deviation(&self.records, |r| r.h_total)
    }

    /// Same for the quadrature-variant modified Hamiltonian.
    pub fn max_relative_modified_drift(&self) -> T {
        max_relative_deviation(&self.records, |r| r.h_mod_quadrature)
    }
}

fn max_relative_deviation<T: Real>(records: &[DiagnosticsRecord<T>], f: impl Fn(&DiagnosticsRecord<T>) -> T) -> T {
    let reference = f(&records[0]);
    records
        .iter()
        .map(|r| ((f(r) - reference) / reference).abs())
        .fold(T::zero(), T::max)
}

/// Steps `spec` to the end, sampling diagnostics every `sample_every` steps
/// and at the last step, and capturing the requested snapshots.
pub fn run<T: Real>(spec: &ExperimentSpec<T>) -> Result<RunOutput<T>> {
    spec.validate()?;
    let mut state = initial_state(&spec.lattice, spec.amplitude)?;
    if let Some(eps) = spec.perturbation {
        add_nyquist_perturbation(&mut state, eps);
    }
    run_from(spec, state)
}

/// As [`run`], starting from an arbitrary level-zero state.
pub fn run_from<T: Real>(spec: &ExperimentSpec<T>, mut state: FieldState<T>) -> Result<RunOutput<T>> {
    spec.validate()?;
    let form = spec.form;
    let params = &spec.params;
    let dt = spec.time.dt;
    let curved = params.hubble != T::zero();
    let snapshot_steps = spec.snapshot_steps();
    let mut next_snapshot = 0;
    let blowup = T::lit(BLOWUP_FACTOR) * spec.amplitude.abs().max(state.phi.max_abs());

    let mut accumulator = ModifiedHamiltonianAccumulator::new();
    accumulator.push(energy_rate_integrand(form, &state, params)?, dt);
    let h_initial = total_hamiltonian(form, &state, params)?;
    let mut records = vec![record(form, &state, params, h_initial, &accumulator, dt)?];
    let mut snapshots = Vec::new();
    let mut take_snapshot = |state: &FieldState<T>, next: &mut usize| {
        while *next < snapshot_steps.len() && snapshot_steps[*next] == state.level {
            snapshots.push(state.clone());
            *next += 1;
        }
    };
    take_snapshot(&state, &mut next_snapshot);

    let mut newton = NewtonStats::default();
    let mut failure = None;
    for level in 1..=spec.time.steps {
        match step(form, &state, dt, params, &spec.solver) {
            Ok((next, report)) => {
                newton.steps += 1;
                newton.total_iterations += report.iterations as u64;
                newton.max_iterations = newton.max_iterations.max(report.iterations);
                state = next;
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
        let peak = state.phi.max_abs();
        if !state.is_finite() || peak > blowup {
            failure = Some(Error::BlowUp {
                step: level,
                max_abs: peak.to_f64().unwrap_or(f64::NAN),
            });
            break;
        }
        if curved {
            accumulator.push(energy_rate_integrand(form, &state, params)?, dt);
        }
        take_snapshot(&state, &mut next_snapshot);
        if level % spec.sample_every == 0 || level == spec.time.steps {
            records.push(record(form, &state, params, h_initial, &accumulator, dt)?);
        }
    }
    Ok(RunOutput {
        form,
        records,
        snapshots,
        newton,
        failure,
    })
}

/// One grid of a refinement study.
#[derive(Debug, Clone)]
pub struct ConvergenceEntry<T> {
    pub resolution: Resolution,
    /// Time-maximum relative deviation of `H_C` (flat) or of the
    /// quadrature modified Hamiltonian (curved) from its initial value.
    pub conservation_error: T,
    /// `|H_C(0) - H_continuum| / H_continuum`.
    pub oracle_error: T,
    /// `(t, relative deviation)` at every sampled record.
    pub deviation: Vec<(T, T)>,
    pub output: RunOutput<T>,
}

/// Errors and observed orders over a refinement ladder.
#[derive(Debug, Clone)]
pub struct ConvergenceReport<T> {
    pub form: SchemeForm,
    pub entries: Vec<ConvergenceEntry<T>>,
    /// Pairwise orders of `conservation_error`, coarse to fine.
    pub conservation_orders: Vec<T>,
    /// Pairwise orders of `oracle_error`, coarse to fine.
    pub oracle_orders: Vec<T>,
}

/// Observed order `ln(e_coarse / e_fine) / ln(refinement)`.
pub fn observed_order<T: Real>(coarse: T, fine: T, refinement: T) -> T {
    (coarse / fine).ln() / refinement.ln()
}

fn validate_ladder(ladder: &[Resolution]) -> Result<()> {
    if ladder.len() < 2 {
        return arg_err("a convergence study needs at least two grids");
    }
    for pair in ladder.windows(2) {
        let rx = pair[1].cells as f64 / pair[0].cells as f64;
        let rt = pair[1].steps_per_unit as f64 / pair[0].steps_per_unit as f64;
        if rx <= 1.0 || (rx - rt).abs() > 1e-12 {
            return arg_err(format!(
                "ladder must refine dx and dt together: {} -> {}",
                pair[0].label(),
                pair[1].label()
            ));
        }
    }
    Ok(())
}

/// Runs `base` on every grid of `ladder` (in parallel) and reports the
/// conservation and continuum-oracle errors with their observed orders.
pub fn convergence_study<T: Real>(base: &ExperimentSpec<T>, ladder: &[Resolution]) -> Result<ConvergenceReport<T>> {
    validate_ladder(ladder)?;
    let specs = ladder
        .iter()
        .map(|&r| base.with_resolution(r))
        .collect::<Result<Vec<_>>>()?;
    let outputs = run_parallel(&specs)?;
    let oracle = continuum_total_hamiltonian_initial(&base.params, base.amplitude)?;
    let curved = base.params.hubble != T::zero();
    let entries: Vec<ConvergenceEntry<T>> = ladder
        .iter()
        .zip(outputs)
        .map(|(&resolution, out)| {
            let quantity = |r: &DiagnosticsRecord<T>| if curved { r.h_mod_quadrature } else { r.h_total };
            let reference = quantity(out.initial());
            let deviation: Vec<(T, T)> = out
                .records
                .iter()
                .map(|r| (r.time, ((quantity(r) - reference) / reference).abs()))
                .collect();
            let conservation_error = deviation.iter().fold(T::zero(), |m, &(_, d)| m.max(d));
            ConvergenceEntry {
                resolution,
                conservation_error,
                oracle_error: ((out.initial().h_total - oracle) / oracle).abs(),
                deviation,
                output: out,
            }
        })
        .collect();
    let orders = |f: &dyn Fn(&ConvergenceEntry<T>) -> T| -> Vec<T> {
        entries
            .windows(2)
            .map(|w| {
                let refinement = T::from_count(w[1].resolution.cells) / T::from_count(w[0].resolution.cells);
                observed_order(f(&w[0]), f(&w[1]), refinement)
            })
            .collect()
    };
    Ok(ConvergenceReport {
        form: base.form,
        conservation_orders: orders(&|e| e.conservation_error),
        oracle_orders: orders(&|e| e.oracle_error),
        entries,
    })
}

/// Runs independent specs on scoped threads; output order follows input.
pub fn run_parallel<T: Real>(specs: &[ExperimentSpec<T>]) -> Result<Vec<RunOutput<T>>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = specs.iter().map(|s| scope.spawn(move || run(s))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    })
}

/// Nyquist-mode growth of one scheme.
#[derive(Debug, Clone)]
pub struct FormGrowth<T> {
    pub form: SchemeForm,
    /// `(t, nyquist amplitude)` at every sampled record.
    pub series: Vec<(T, T)>,
    pub initial: T,
    pub peak: T,
    pub final_amplitude: T,
    /// `peak / initial`, or one when nothing was seeded.
    pub amplification: T,
    pub max_parity_sep: T,
    pub final_parity_sep: T,
    pub output: RunOutput<T>,
}

/// Both schemes under the same seeded perturbation.
#[derive(Debug, Clone)]
pub struct GrowthSummary<T> {
    pub epsilon: T,
    pub forms: Vec<FormGrowth<T>>,
}

impl<T: Real> GrowthSummary<T> {
    pub fn get(&self, form: SchemeForm) -> &FormGrowth<T> {
        self.forms.iter().find(|g| g.form == form).expect("both forms are run")
    }
}

/// Seeds `eps (-1)^k` into `phi` and runs both forms with otherwise
/// identical settings.
pub fn perturbation_growth<T: Real>(spec: &ExperimentSpec<T>) -> Result<GrowthSummary<T>> {
    let Some(epsilon) = spec.perturbation else {
        return arg_err("perturbation growth needs a perturbation amplitude");
    };
    let specs: Vec<ExperimentSpec<T>> = SchemeForm::ALL
        .iter()
        .map(|&form| ExperimentSpec { form, ..spec.clone() })
        .collect();
    let outputs = run_parallel(&specs)?;
    let forms = outputs
        .into_iter()
        .map(|output| {
            let series: Vec<(T, T)> = output.records.iter().map(|r| (r.time, r.nyquist_amp)).collect();
            let initial = series[0].1;
            let peak = series.iter().fold(T::zero(), |m, &(_, a)| m.max(a));
            let amplification = if epsilon == T::zero() { T::one() } else { peak / initial };
            FormGrowth {
                form: output.form,
                initial,
                peak,
                final_amplitude: series.last().unwrap().1,
                amplification,
                max_parity_sep: output.records.iter().fold(T::zero(), |m, r| m.max(r.parity_sep)),
                final_parity_sep: output.last().parity_sep,
                series,
                output,
            }
        })
        .collect();
    Ok(GrowthSummary { epsilon, forms })
}

/// Parity separation of the unperturbed initial data on `lattice`, the
/// reference level for "no vibrations".
pub fn smooth_parity_baseline<T: Real>(lattice: &Arc<Lattice<T>>, amplitude: T) -> Result<T> {
    parity_separation(&initial_state(lattice, amplitude)?.phi)
}

/// Nyquist amplitude of a state's `phi`.
pub fn state_nyquist<T: Real>(state: &FieldState<T>) -> Result<T> {
    nyquist_amplitude(&state.phi)
}
