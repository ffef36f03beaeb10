//! One implicit time step of either scheme.
//!
//! Both schemes share the averaged field update
//!
//! ```text
//! (phi' - phi) / dt = (a / 4) (psi' + psi),       a = e^{-nHt'} + e^{-nHt}
//! ```
//!
//! which is solved for `psi'` explicitly ([`eliminate_psi`]), leaving one
//! nonlinear equation per lattice point in `phi'`. The momentum update
//!
//! ```text
//! (psi' - psi) / dt = -(m^2/4) b (phi' + phi) - b / (2(p+1)) G(phi', phi)
//!                     + (c/4) L (phi' + phi)
//! ```
//!
//! with `b`, `c` the summed potential and gradient weights, `G` the discrete
//! gradient and `L` the form's Laplacian, becomes the residual. Newton's
//! method drives it to zero.
//!
//! Internally the residual is multiplied by `s = dt^2 a / 4`, which turns it
//! into a displacement (`phi' - phi - (dt a / 2) psi + s * forces`). That
//! scaling makes the Jacobian `I + O(dt^2)` and keeps the convergence test
//! free of the `1/dt^2` roundoff amplification of the unscaled form. The
//! tolerance in [`SolverConfig`] applies to the scaled residual.

use std::sync::Arc;

use crate::error::{config_err, Error, Result};
use crate::lattice::{laplacian_compact, laplacian_wide, ScalarField, MIN_POINTS_WIDE};
use crate::linalg::{conjugate_gradient, CyclicBanded};
use crate::model::{
    nonlinear_discrete_gradient, nonlinear_discrete_gradient_partial, PhysParams, SchemeForm,
    TimeWeights, DEFAULT_DG_EPS,
};
use crate::scalar::Real;

/// Fields at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState<T> {
    pub phi: ScalarField<T>,
    pub psi: ScalarField<T>,
    /// Time index `l`.
    pub level: u64,
    /// `t^(l)`.
    pub time: T,
    /// Time of level zero; `time == start_time + level * dt`.
    pub start_time: T,
}

impl<T: Real> FieldState<T> {
    pub fn new(phi: ScalarField<T>, psi: ScalarField<T>, start_time: T) -> Result<Self> {
        phi.check_same_lattice(&psi)?;
        Ok(Self {
            phi,
            psi,
            level: 0,
            time: start_time,
            start_time,
        })
    }

    pub fn lattice(&self) -> &Arc<crate::lattice::Lattice<T>> {
        self.phi.lattice()
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.psi.is_finite()
    }

    fn time_at(&self, level: u64, dt: T) -> T {
        self.start_time + T::from_u64(level).unwrap() * dt
    }
}

/// Newton solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    /// Max-norm tolerance on the displacement-scaled residual.
    pub newton_tol: T,
    pub max_newton_iters: usize,
    /// Relative switch threshold of the discrete gradient.
    pub dg_eps: T,
    /// Step-length reduction factor of the backtracking line search.
    pub damping: T,
    pub max_backtracks: usize,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            newton_tol: T::lit(1e-12),
            max_newton_iters: 50,
            dg_eps: T::lit(DEFAULT_DG_EPS),
            damping: T::lit(0.5),
            max_backtracks: 20,
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > T::zero()) {
            return config_err("newton_tol must be positive");
        }
        if !(self.damping > T::zero() && self.damping < T::one()) {
            return config_err("damping must lie strictly between 0 and 1");
        }
        if !(self.dg_eps > T::zero()) {
            return config_err("dg_eps must be positive");
        }
        if self.max_newton_iters == 0 {
            return config_err("max_newton_iters must be at least 1");
        }
        Ok(())
    }
}

/// Outcome of one Newton solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport<T> {
    /// Newton passes, counting the one that confirmed convergence.
    pub iterations: usize,
    /// Max-norm of the scaled residual at the returned iterate.
    pub final_residual: T,
    pub converged: bool,
}

/// Inverts the averaged field update for `psi'`.
pub fn eliminate_psi<T: Real>(
    phi_next: &ScalarField<T>,
    phi: &ScalarField<T>,
    psi: &ScalarField<T>,
    t: T,
    dt: T,
    params: &PhysParams<T>,
) -> Result<ScalarField<T>> {
    phi_next.check_same_lattice(phi)?;
    phi.check_same_lattice(psi)?;
    let a = params.weights(t).kinetic + params.weights(t + dt).kinetic;
    eliminate_psi_with(phi_next, phi, psi, a, dt)
}

fn eliminate_psi_with<T: Real>(
    phi_next: &ScalarField<T>,
    phi: &ScalarField<T>,
    psi: &ScalarField<T>,
    a: T,
    dt: T,
) -> Result<ScalarField<T>> {
    let k = T::lit(4.0) / (dt * a);
    let values = phi_next
        .values()
        .iter()
        .zip(phi.values())
        .zip(psi.values())
        .map(|((&pn, &p), &q)| k * (pn - p) - q)
        .collect();
    ScalarField::from_values(Arc::clone(phi.lattice()), values)
}

/// Coefficients of one step from `t` to `t + dt`.
#[derive(Debug, Clone, Copy)]
struct StepCoefficients<T> {
    /// Summed kinetic weight `a`.
    a: T,
    /// Summed potential weight `b`.
    b: T,
    /// Summed gradient weight `c`.
    c: T,
    /// Residual scale `dt^2 a / 4`.
    scale: T,
    dt: T,
}

impl<T: Real> StepCoefficients<T> {
    fn new(params: &PhysParams<T>, t: T, t_next: T, dt: T) -> Self {
        let w: TimeWeights<T> = params.weights(t).sum(params.weights(t_next));
        Self {
            a: w.kinetic,
            b: w.potential,
            c: w.gradient,
            scale: dt * dt * w.kinetic / T::lit(4.0),
            dt,
        }
    }
}

/// The nonlinear system for `phi'` of one step.
struct StepSystem<'a, T> {
    form: SchemeForm,
    state: &'a FieldState<T>,
    params: &'a PhysParams<T>,
    cfg: &'a SolverConfig<T>,
    coef: StepCoefficients<T>,
}

impl<'a, T: Real> StepSystem<'a, T> {
    fn new(
        form: SchemeForm,
        state: &'a FieldState<T>,
        dt: T,
        params: &'a PhysParams<T>,
        cfg: &'a SolverConfig<T>,
    ) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return config_err("time step must be positive and finite");
        }
        state.phi.check_same_lattice(&state.psi)?;
        if state.lattice().dim() != params.dim {
            return Err(Error::Argument(format!(
                "state is {}-d but parameters declare n = {}",
                state.lattice().dim(),
                params.dim
            )));
        }
        if form == SchemeForm::FormI {
            state.lattice().require_min_points(MIN_POINTS_WIDE, "form I")?;
        }
        let t = state.time;
        let t_next = state.time_at(state.level + 1, dt);
        Ok(Self {
            form,
            state,
            params,
            cfg,
            coef: StepCoefficients::new(params, t, t_next, dt),
        })
    }

    fn laplacian(&self, f: &ScalarField<T>) -> Result<ScalarField<T>> {
        laplacian_for(self.form, f)
    }

    /// Displacement-scaled residual.
    fn scaled_residual(&self, phi_next: &ScalarField<T>) -> Result<ScalarField<T>> {
        phi_next.check_same_lattice(&self.state.phi)?;
        let StepCoefficients { a, b, c, scale, dt } = self.coef;
        let phi = self.state.phi.values();
        let psi = self.state.psi.values();
        let sum = phi_next.add(&self.state.phi)?;
        let lap = self.laplacian(&sum)?;
        let quarter = T::lit(0.25);
        let mass_coef = quarter * self.params.mass * self.params.mass * b;
        let nl_coef = b / (T::lit(2.0) * T::from_u32(self.params.p + 1).unwrap());
        let lap_coef = quarter * c;
        let half_dt_a = T::lit(0.5) * dt * a;
        let p = self.params.p;
        let eps = self.cfg.dg_eps;
        let values = phi_next
            .values()
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let force = mass_coef * sum.values()[k]
                    + nl_coef * nonlinear_discrete_gradient(x, phi[k], p, eps)
                    - lap_coef * lap.values()[k];
                (x - phi[k]) - half_dt_a * psi[k] + scale * force
            })
            .collect();
        ScalarField::from_values(Arc::clone(phi_next.lattice()), values)
    }

    /// Diagonal of the scaled Jacobian, without the Laplacian contribution.
    fn local_jacobian(&self, phi_next: &ScalarField<T>) -> Vec<T> {
        let StepCoefficients { b, scale, .. } = self.coef;
        let quarter = T::lit(0.25);
        let mass_coef = quarter * self.params.mass * self.params.mass * b;
        let nl_coef = b / (T::lit(2.0) * T::from_u32(self.params.p + 1).unwrap());
        let phi = self.state.phi.values();
        phi_next
            .values()
            .iter()
            .zip(phi)
            .map(|(&x, &y)| {
                T::one()
                    + scale
                        * (mass_coef
                            + nl_coef
                                * nonlinear_discrete_gradient_partial(x, y, self.params.p, self.cfg.dg_eps))
            })
            .collect()
    }

    /// Solves `J delta = rhs` at `phi_next`.
    fn solve_jacobian(&self, phi_next: &ScalarField<T>, rhs: &ScalarField<T>) -> Result<ScalarField<T>> {
        let lat = phi_next.lattice();
        let diag = self.local_jacobian(phi_next);
        let lap_coef = self.coef.scale * T::lit(0.25) * self.coef.c;
        if lat.dim() == 1 {
            let n = lat.count(0);
            let h = lat.spacing(0);
            let (w, reach, unit) = match self.form {
                SchemeForm::FormI => (2usize, 2isize, (T::lit(4.0) * h * h).recip()),
                SchemeForm::FormII => (1usize, 1isize, (h * h).recip()),
            };
            let mut jac = CyclicBanded::zeros(n, w)?;
            let off = -lap_coef * unit;
            let centre = T::lit(2.0) * lap_coef * unit;
            for (i, &d) in diag.iter().enumerate() {
                jac.set(i, 0, d + centre);
                jac.add(i, reach, off);
                jac.add(i, -reach, off);
            }
            let x = jac.solve(rhs.values())?;
            return ScalarField::from_values(Arc::clone(lat), x);
        }
        let form = self.form;
        let apply = |v: &[T]| -> Vec<T> {
            let f = ScalarField::from_values(Arc::clone(lat), v.to_vec()).expect("length");
            let lap = laplacian_for(form, &f).expect("lattice validated");
            v.iter()
                .zip(&diag)
                .zip(lap.values())
                .map(|((&x, &d), &l)| d * x - lap_coef * l)
                .collect()
        };
        let precond: Vec<T> = diag
            .iter()
            .map(|&d| d + lap_coef * laplacian_centre(form, lat))
            .collect();
        let tol = T::epsilon() * T::lit(16.0);
        let (x, _) = conjugate_gradient(apply, &precond, rhs.values(), tol, 20 * lat.len())?;
        ScalarField::from_values(Arc::clone(lat), x)
    }

    fn roundoff_floor(&self, x: &ScalarField<T>) -> T {
        T::lit(64.0) * T::epsilon() * x.max_abs().max(T::one())
    }

    fn predictor(&self) -> ScalarField<T> {
        let k = self.coef.dt * self.params.weights(self.state.time).kinetic;
        let psi = self.state.psi.values();
        let lat = Arc::clone(self.state.lattice());
        let phi = self.state.phi.values();
        ScalarField::from_index_fn(lat, |i| phi[i] + k * psi[i])
    }

    /// Newton iteration from `guess`; the flag is set when the line search stalls.
    fn newton(&self, guess: ScalarField<T>) -> Result<(ScalarField<T>, StepReport<T>, bool)> {
        let cfg = self.cfg;
        let mut x = guess;
        let mut r = self.scaled_residual(&x)?;
        let mut norm = r.max_abs();
        let mut iterations = 1;
        let mut polished = false;
        loop {
            if norm <= cfg.newton_tol {
                // one more Newton update while above the roundoff floor, so
                // energy errors stay at roundoff level over long runs
                if !polished && norm > self.roundoff_floor(&x) {
                    polished = true;
                    let delta = self.solve_jacobian(&x, &r.scale(-T::one()))?;
                    let trial = x.zip_with(&delta, |u, d| u + d)?;
                    let r_trial = self.scaled_residual(&trial)?;
                    let n_trial = r_trial.max_abs();
                    if n_trial < norm {
                        x = trial;
                        r = r_trial;
                        norm = n_trial;
                    }
                    continue;
                }
                let report = StepReport {
                    iterations,
                    final_residual: norm,
                    converged: true,
                };
                return Ok((x, report, false));
            }
            if iterations >= cfg.max_newton_iters || !norm.is_finite() {
                let report = StepReport {
                    iterations,
                    final_residual: norm,
                    converged: false,
                };
                return Ok((x, report, false));
            }
            let delta = self.solve_jacobian(&x, &r.scale(-T::one()))?;
            let mut lambda = T::one();
            let mut backtracks = 0;
            loop {
                let trial = x.zip_with(&delta, |u, d| u + lambda * d)?;
                let r_trial = self.scaled_residual(&trial)?;
                let n_trial = r_trial.max_abs();
                if n_trial < norm || n_trial <= cfg.newton_tol {
                    x = trial;
                    r = r_trial;
                    norm = n_trial;
                    break;
                }
                backtracks += 1;
                if backtracks > cfg.max_backtracks {
                    let report = StepReport {
                        iterations,
                        final_residual: norm,
                        converged: false,
                    };
                    return Ok((x, report, true));
                }
                lambda *= cfg.damping;
            }
            iterations += 1;
        }
    }
}

fn laplacian_for<T: Real>(form: SchemeForm, f: &ScalarField<T>) -> Result<ScalarField<T>> {
    match form {
        SchemeForm::FormI => laplacian_wide(f),
        SchemeForm::FormII => laplacian_compact(f),
    }
}

/// Magnitude of the Laplacian's diagonal entry.
fn laplacian_centre<T: Real>(form: SchemeForm, lat: &crate::lattice::Lattice<T>) -> T {
    let factor = match form {
        SchemeForm::FormI => T::lit(0.5),
        SchemeForm::FormII => T::lit(2.0),
    };
    lat.spacings().iter().fold(T::zero(), |acc, &h| acc + factor / (h * h))
}

fn unscaled_residual<T: Real>(
    form: SchemeForm,
    phi_next: &ScalarField<T>,
    state: &FieldState<T>,
    dt: T,
    params: &PhysParams<T>,
    cfg: &SolverConfig<T>,
) -> Result<ScalarField<T>> {
    let sys = StepSystem::new(form, state, dt, params, cfg)?;
    let inv = sys.coef.scale.recip();
    Ok(sys.scaled_residual(phi_next)?.scale(inv))
}

/// Residual of the stride-2 scheme's momentum update, in `psi / t` units.
pub fn residual_form1<T: Real>(
    phi_next: &ScalarField<T>,
    state: &FieldState<T>,
    dt: T,
    params: &PhysParams<T>,
    cfg: &SolverConfig<T>,
) -> Result<ScalarField<T>> {
    unscaled_residual(SchemeForm::FormI, phi_next, state, dt, params, cfg)
}

/// Residual of the compact scheme's momentum update, in `psi / t` units.
pub fn residual_form2<T: Real>(
    phi_next: &ScalarField<T>,
    state: &FieldState<T>,
    dt: T,
    params: &PhysParams<T>,
    cfg: &SolverConfig<T>,
) -> Result<ScalarField<T>> {
    unscaled_residual(SchemeForm::FormII, phi_next, state, dt, params, cfg)
}

/// Residual scaled to displacement units, the quantity Newton's tolerance
/// applies to.
pub fn scaled_residual<T: Real>(
    form: SchemeForm,
    phi_next: &ScalarField<T>,
    state: &FieldState<T>,
    dt: T,
    params: &PhysParams<T>,
    cfg: &SolverConfig<T>,
) -> Result<ScalarField<T>> {
    StepSystem::new(form, state, dt, params, cfg)?.scaled_residual(phi_next)
}

/// Advances `state` by one step of `form`.
///
/// Newton starts from the explicit predictor `phi + dt e^{-nHt} psi`; if the
/// line search stalls it restarts once from `phi`.
pub fn step<T: Real>(
    form: SchemeForm,
    state: &FieldState<T>,
    dt: T,
    params: &PhysParams<T>,
    cfg: &SolverConfig<T>,
) -> Result<(FieldState<T>, StepReport<T>)> {
    cfg.validate()?;
    let sys = StepSystem::new(form, state, dt, params, cfg)?;
    let (mut phi_next, mut report, stalled) = sys.newton(sys.predictor())?;
    if stalled {
        let (x, r, _) = sys.newton(state.phi.clone())?;
        phi_next = x;
        report = StepReport {
            iterations: report.iterations + r.iterations,
            ..r
        };
    }
    if !report.converged {
        return Err(Error::NonConvergence {
            iterations: report.iterations,
            residual: report.final_residual.to_f64().unwrap_or(f64::NAN),
        });
    }
    let psi_next = eliminate_psi_with(&phi_next, &state.phi, &state.psi, sys.coef.a, dt)?;
    let level = state.level + 1;
    let next = FieldState {
        phi: phi_next,
        psi: psi_next,
        level,
        time: state.time_at(level, dt),
        start_time: state.start_time,
    };
    Ok((next, report))
}
