//! Conservation and stability diagnostics.
//!
//! * total Hamiltonian `H_C = sum_k density_k dV` with the density that
//!   matches the scheme;
//! * the modified total Hamiltonian in two variants: the literal telescoped
//!   sum ([`modified_total_hamiltonian_literal`]) and a trapezoid quadrature
//!   of the energy production rate ([`ModifiedHamiltonianAccumulator`]);
//! * parity metrics for the even/odd sheet separation of the stride-2
//!   stencil ([`parity_separation`], [`nyquist_amplitude`]).

use crate::error::{arg_err, Result};
use crate::lattice::ScalarField;
use crate::model::{gradient_square, hamiltonian_density, potential_power, PhysParams, SchemeForm};
use crate::scalar::Real;
use crate::schemes::FieldState;

/// Diagnostics of one sampled time level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord<T> {
    pub step: u64,
    pub time: T,
    pub h_total: T,
    pub h_mod_literal: T,
    pub h_mod_quadrature: T,
    pub parity_sep: T,
    pub nyquist_amp: T,
    pub phi_min: T,
    pub phi_max: T,
}

impl<T: Real> DiagnosticsRecord<T> {
    pub fn is_finite(&self) -> bool {
        [
            self.time,
            self.h_total,
            self.h_mod_literal,
            self.h_mod_quadrature,
            self.parity_sep,
            self.nyquist_amp,
            self.phi_min,
            self.phi_max,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Discrete total Hamiltonian of `state` under `form`.
pub fn total_hamiltonian<T: Real>(form: SchemeForm, state: &FieldState<T>, params: &PhysParams<T>) -> Result<T> {
    let density = hamiltonian_density(form, &state.phi, &state.psi, state.time, params)?;
    Ok(density.sum() * state.lattice().cell_volume())
}

/// `H^(l) - sum_{q<l} (H^(q+1) - H^(q)) dt`, which telescopes to
/// `H^(l) - dt (H^(l) - H^(0))`.
pub fn modified_total_hamiltonian_literal<T: Real>(history: &[T], dt: T) -> Result<T> {
    match (history.first(), history.last()) {
        (Some(&first), Some(&last)) => Ok(last - dt * (last - first)),
        _ => arg_err("modified Hamiltonian needs a nonempty history"),
    }
}

/// Discretized production rate `dH_C/dt` of the total Hamiltonian:
///
/// ```text
/// (H/2) e^{nHt} sum_k dV [ -n e^{-2nHt} psi^2 + n m^2 phi^2
///                          + 2n/(p+1) |phi|^{p+1} + (n-2) e^{-2Ht} |D phi|^2 ]
/// ```
///
/// where `|D phi|^2` is the gradient energy of the active form. The boundary
/// flux vanishes on a periodic lattice.
pub fn energy_rate_integrand<T: Real>(form: SchemeForm, state: &FieldState<T>, params: &PhysParams<T>) -> Result<T> {
    if params.hubble == T::zero() {
        return Ok(T::zero());
    }
    let n = T::from_count(params.dim);
    let t = state.time;
    let h = params.hubble;
    let q = T::from_u32(params.p + 1).unwrap();
    let m2 = params.mass * params.mass;
    let kin = (-T::lit(2.0) * n * h * t).exp();
    let grad_w = (-T::lit(2.0) * h * t).exp();
    let grad_coef = n - T::lit(2.0);
    let grad = if grad_coef == T::zero() {
        None
    } else {
        Some(gradient_square(form, &state.phi)?)
    };
    let mut acc = T::zero();
    for (k, (&phi, &psi)) in state.phi.values().iter().zip(state.psi.values()).enumerate() {
        let mut term = -n * kin * psi * psi + n * m2 * phi * phi + T::lit(2.0) * n / q * potential_power(phi, params.p);
        if let Some(g) = &grad {
            term += grad_coef * grad_w * g.values()[k];
        }
        acc += term;
    }
    Ok(T::lit(0.5) * h * (n * h * t).exp() * acc * state.lattice().cell_volume())
}

/// Running trapezoid integral of [`energy_rate_integrand`], giving
/// `H~^(l) = H^(l) - sum_{q<l} dt (D^(q) + D^(q+1)) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModifiedHamiltonianAccumulator<T> {
    integral: T,
    last_rate: Option<T>,
}

impl<T: Real> Default for ModifiedHamiltonianAccumulator<T> {
    fn default() -> Self {
        Self {
            integral: T::zero(),
            last_rate: None,
        }
    }
}

impl<T: Real> ModifiedHamiltonianAccumulator<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the rate at the next time level; the first call only seeds it.
    pub fn push(&mut self, rate: T, dt: T) {
        if let Some(prev) = self.last_rate {
            self.integral += T::lit(0.5) * dt * (prev + rate);
        }
        self.last_rate = Some(rate);
    }

    pub fn integral(&self) -> T {
        self.integral
    }

    pub fn modified(&self, h_total: T) -> T {
        h_total - self.integral
    }
}

/// One-shot quadrature variant over a recorded state history.
pub fn modified_total_hamiltonian_quadrature<T: Real>(
    states: &[FieldState<T>],
    form: SchemeForm,
    params: &PhysParams<T>,
    dt: T,
) -> Result<T> {
    let Some(last) = states.last() else {
        return arg_err("modified Hamiltonian needs a nonempty history");
    };
    let mut acc = ModifiedHamiltonianAccumulator::new();
    for s in states {
        acc.push(energy_rate_integrand(form, s, params)?, dt);
    }
    Ok(acc.modified(total_hamiltonian(form, last, params)?))
}

fn require_even_line<T: Real>(f: &ScalarField<T>, what: &str) -> Result<usize> {
    let lat = f.lattice();
    if lat.dim() != 1 {
        return arg_err(format!("{what} is defined on one-dimensional lattices"));
    }
    let n = lat.count(0);
    if n % 2 != 0 {
        return arg_err(format!("{what} needs an even point count, got {n}"));
    }
    Ok(n)
}

/// `max_k |f_k - (f_{k-1} + f_{k+1})/2| / (max f - min f + floor)`.
///
/// About `dx^2 |f''| / (2 range)` for smooth data, one for the pure
/// checkerboard `(-1)^k`.
pub fn parity_separation<T: Real>(f: &ScalarField<T>) -> Result<T> {
    let n = require_even_line(f, "parity separation")?;
    let v = f.values();
    let half = T::lit(0.5);
    let dev = (0..n).fold(T::zero(), |acc, k| {
        let avg = half * (v[(k + n - 1) % n] + v[(k + 1) % n]);
        acc.max((v[k] - avg).abs())
    });
    let floor = T::min_positive_value();
    Ok(dev / (f.max_value() - f.min_value() + floor))
}

/// `|sum_k (-1)^k f_k| / N`.
pub fn nyquist_amplitude<T: Real>(f: &ScalarField<T>) -> Result<T> {
    let n = require_even_line(f, "Nyquist amplitude")?;
    let s = f
        .values()
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (k, &v)| if k % 2 == 0 { acc + v } else { acc - v });
    Ok(s.abs() / T::from_count(n))
}

/// Samples a [`DiagnosticsRecord`] for `state`.
pub fn record<T: Real>(
    form: SchemeForm,
    state: &FieldState<T>,
    params: &PhysParams<T>,
    h_initial: T,
    accumulator: &ModifiedHamiltonianAccumulator<T>,
    dt: T,
) -> Result<DiagnosticsRecord<T>> {
    let h_total = total_hamiltonian(form, state, params)?;
    Ok(DiagnosticsRecord {
        step: state.level,
        time: state.time,
        h_total,
        h_mod_literal: modified_total_hamiltonian_literal(&[h_initial, h_total], dt)?,
        h_mod_quadrature: accumulator.modified(h_total),
        parity_sep: parity_separation(&state.phi)?,
        nyquist_amp: nyquist_amplitude(&state.phi)?,
        phi_min: state.phi.min_value(),
        phi_max: state.phi.max_value(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use crate::schemes::{step, SolverConfig};
    use proptest::prelude::*;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn line(n: usize) -> Arc<Lattice<f64>> {
        Arc::new(Lattice::unit_interval(n).unwrap())
    }

    fn reference_state(n: usize) -> FieldState<f64> {
        let lat = line(n);
        let phi = ScalarField::from_fn(Arc::clone(&lat), |x| 4.0 * (2.0 * PI * x[0]).cos());
        let psi = ScalarField::from_fn(Arc::clone(&lat), |x| 8.0 * PI * (2.0 * PI * x[0]).sin());
        FieldState::new(phi, psi, 0.0).unwrap()
    }

    #[test]
    fn total_hamiltonian_simple_states() {
        let lat = line(10);
        let zero = ScalarField::zeros(Arc::clone(&lat));
        let par = PhysParams::new(1, 1.0, 5, 0.0).unwrap();
        let s = FieldState::new(zero.clone(), zero.clone(), 0.0).unwrap();
        assert_eq!(total_hamiltonian(SchemeForm::FormI, &s, &par).unwrap(), 0.0);
        let c = 1.2;
        let s = FieldState::new(ScalarField::constant(Arc::clone(&lat), c), zero, 0.0).unwrap();
        let expected = c * c / 2.0 + c.powi(6) / 6.0;
        for form in SchemeForm::ALL {
            assert!((total_hamiltonian(form, &s, &par).unwrap() - expected).abs() < 1e-13);
        }
    }

    #[test]
    fn initial_total_hamiltonian_near_continuum_value() {
        let par = PhysParams::new(1, 1.0, 5, 0.0).unwrap();
        let oracle = crate::model::continuum_total_hamiltonian_initial(&par, 4.0).unwrap();
        let h = total_hamiltonian(SchemeForm::FormI, &reference_state(200), &par).unwrap();
        assert!(((h - oracle) / oracle).abs() < 1e-3);
    }

    #[test]
    fn rotation_invariance() {
        let par = PhysParams::new(1, 0.7, 3, 1e-3).unwrap();
        let s = reference_state(24);
        let rot = FieldState::new(s.phi.shifted(0, 5).unwrap(), s.psi.shifted(0, 5).unwrap(), 0.0).unwrap();
        for form in SchemeForm::ALL {
            let a = total_hamiltonian(form, &s, &par).unwrap();
            let b = total_hamiltonian(form, &rot, &par).unwrap();
            assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn literal_variant_examples() {
        assert!(modified_total_hamiltonian_literal::<f64>(&[], 0.1).is_err());
        assert_eq!(modified_total_hamiltonian_literal(&[3.0, 3.0, 3.0], 0.1).unwrap(), 3.0);
        assert!((modified_total_hamiltonian_literal(&[1.0f64, 2.0], 0.1).unwrap() - 1.9).abs() < 1e-15);
        assert_eq!(modified_total_hamiltonian_literal(&[1.0, 5.0, 2.0], 1.0).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn literal_variant_matches_direct_sum(history in proptest::collection::vec(-10.0f64..10.0, 1..40), dt in 1e-4f64..1.0) {
            let last = *history.last().unwrap();
            let direct = last - (0..history.len() - 1).map(|q| (history[q + 1] - history[q]) * dt).sum::<f64>();
            let got = modified_total_hamiltonian_literal(&history, dt).unwrap();
            prop_assert!((got - direct).abs() < 1e-11);
        }

        #[test]
        fn nyquist_is_shift_invariant_and_homogeneous(vals in proptest::collection::vec(-5.0f64..5.0, 12), c in -3.0f64..3.0, shift in -2.0f64..2.0) {
            let lat = line(12);
            let f = ScalarField::from_values(Arc::clone(&lat), vals).unwrap();
            let base = nyquist_amplitude(&f).unwrap();
            prop_assert!((nyquist_amplitude(&f.scale(c)).unwrap() - c.abs() * base).abs() < 1e-12);
            prop_assert!((nyquist_amplitude(&f.map(|v| v + shift)).unwrap() - base).abs() < 1e-12);
            let sep = parity_separation(&f).unwrap();
            prop_assert!((parity_separation(&f.map(|v| v + shift)).unwrap() - sep).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_space_rate_vanishes_and_quadrature_equals_total() {
        let par = PhysParams::new(1, 1.0, 5, 0.0).unwrap();
        let s = reference_state(16);
        assert_eq!(energy_rate_integrand(SchemeForm::FormII, &s, &par).unwrap(), 0.0);
        let cfg = SolverConfig::default();
        let mut states = vec![s];
        for _ in 0..5 {
            let next = step(SchemeForm::FormII, states.last().unwrap(), 0.01, &par, &cfg).unwrap().0;
            states.push(next);
        }
        let q = modified_total_hamiltonian_quadrature(&states, SchemeForm::FormII, &par, 0.01).unwrap();
        let h = total_hamiltonian(SchemeForm::FormII, states.last().unwrap(), &par).unwrap();
        assert_eq!(q, h);
    }

    #[test]
    fn zero_state_quadrature_is_zero() {
        let lat = line(8);
        let zero = ScalarField::zeros(lat);
        let s = FieldState::new(zero.clone(), zero, 0.0).unwrap();
        let par = PhysParams::new(1, 1.0, 5, 1e-3).unwrap();
        let q = modified_total_hamiltonian_quadrature(&[s.clone(), s], SchemeForm::FormI, &par, 0.1).unwrap();
        assert_eq!(q, 0.0);
    }

    #[test]
    fn two_dimensional_rate_has_no_gradient_term() {
        let lat = Arc::new(Lattice::new(vec![6, 6], vec![0.2, 0.2], vec![0.0, 0.0]).unwrap());
        let phi = ScalarField::from_index_fn(Arc::clone(&lat), |k| (k as f64 * 0.9).sin());
        let psi = ScalarField::zeros(Arc::clone(&lat));
        let s = FieldState::new(phi.clone(), psi, 0.0).unwrap();
        let par = PhysParams::new(2, 0.0, 3, 0.1).unwrap();
        let got = energy_rate_integrand(SchemeForm::FormI, &s, &par).unwrap();
        let expected = 0.5 * 0.1 * phi.values().iter().map(|v| 4.0 / 4.0 * v.abs().powi(4)).sum::<f64>() * 0.04;
        assert!((got - expected).abs() < 1e-12);
    }

    // The finite difference of the H_C history over a step should match the
    // trapezoid average of the production rate up to discretization error.
    #[test]
    fn rate_tracks_history_difference() {
        let par = PhysParams::new(1, 1.0, 5, 1e-2).unwrap();
        let cfg = SolverConfig::default();
        let mut gaps = Vec::new();
        for (n, dt) in [(50usize, 1.0 / 250.0), (100, 1.0 / 500.0)] {
            let mut s = reference_state(n);
            s.time = 5.0;
            s.start_time = 5.0;
            let next = step(SchemeForm::FormII, &s, dt, &par, &cfg).unwrap().0;
            let dh = (total_hamiltonian(SchemeForm::FormII, &next, &par).unwrap()
                - total_hamiltonian(SchemeForm::FormII, &s, &par).unwrap())
                / dt;
            let avg = 0.5
                * (energy_rate_integrand(SchemeForm::FormII, &s, &par).unwrap()
                    + energy_rate_integrand(SchemeForm::FormII, &next, &par).unwrap());
            gaps.push((dh - avg).abs() / avg.abs());
        }
        assert!(gaps[0] < 1e-2, "{gaps:?}");
        assert!(gaps[1] < gaps[0] / 3.0, "{gaps:?}");
    }

    #[test]
    fn parity_metrics_examples() {
        let lat = line(200);
        let alt = ScalarField::from_index_fn(Arc::clone(&lat), |k| if k % 2 == 0 { 1.0 } else { -1.0 });
        assert!((parity_separation(&alt).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nyquist_amplitude(&alt).unwrap(), 1.0);
        let c = ScalarField::constant(Arc::clone(&lat), 3.0);
        assert_eq!(parity_separation(&c).unwrap(), 0.0);
        let s = ScalarField::from_fn(Arc::clone(&lat), |x| (2.0 * PI * x[0]).sin());
        assert!(nyquist_amplitude(&s).unwrap() < 1e-12);
        let dx = 1.0 / 200.0;
        // |f - avg| <= dx^2 |f''|/2 = dx^2 (2 pi)^2 / 2, range 2
        let bound = dx * dx * (2.0 * PI).powi(2) / 2.0 / 2.0 * 1.01;
        let sep = parity_separation(&s).unwrap();
        assert!(sep <= bound && sep > 0.5 * bound, "{sep} vs {bound}");
        let coarse = parity_separation(&ScalarField::from_fn(line(100), |x| (2.0 * PI * x[0]).sin())).unwrap();
        assert!(((coarse / sep).log2() - 2.0).abs() < 0.05);
    }

    #[test]
    fn parity_metrics_reject_odd_or_multidimensional_lattices() {
        let f = ScalarField::zeros(line(9));
        assert!(parity_separation(&f).is_err());
        assert!(nyquist_amplitude(&f).is_err());
        let lat = Arc::new(Lattice::new(vec![4, 4], vec![1.0, 1.0], vec![0.0, 0.0]).unwrap());
        assert!(nyquist_amplitude(&ScalarField::zeros(lat)).is_err());
    }
}
