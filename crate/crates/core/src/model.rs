//! Physical parameters, the discrete Hamiltonian densities of both schemes,
//! and the discrete gradient of the `|phi|^(p+1)` potential.
//!
//! The model is
//!
//! ```text
//! -phi_tt - n H phi_t + e^{-2Ht} lap(phi) - m^2 phi = |phi|^{p-1} phi
//! ```
//!
//! written in first-order form with `phi_t = e^{-nHt} psi`. Every density
//! term carries one of three time weights, collected in [`TimeWeights`].

use crate::error::{arg_err, config_err, Result};
use crate::lattice::{backward_diff, central_diff, forward_diff, ScalarField};
use crate::scalar::Real;

/// Which spatial discretization of the gradient energy is in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeForm {
    /// Squared central differences; second derivative by the stride-2 stencil.
    FormI,
    /// Averaged squared forward/backward differences; compact second derivative.
    FormII,
}

impl SchemeForm {
    pub const ALL: [SchemeForm; 2] = [SchemeForm::FormI, SchemeForm::FormII];

    pub fn label(self) -> &'static str {
        match self {
            SchemeForm::FormI => "I",
            SchemeForm::FormII => "II",
        }
    }
}

impl std::fmt::Display for SchemeForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for SchemeForm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" | "1" | "form1" | "formi" => Ok(SchemeForm::FormI),
            "ii" | "2" | "form2" | "formii" => Ok(SchemeForm::FormII),
            other => arg_err(format!("unknown form `{other}`, expected I or II")),
        }
    }
}

/// Spatial dimension, mass, nonlinearity exponent and Hubble constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams<T> {
    pub dim: usize,
    pub mass: T,
    /// Exponent `p` of the nonlinearity `|phi|^{p-1} phi`.
    pub p: u32,
    pub hubble: T,
}

impl<T: Real> PhysParams<T> {
    pub fn new(dim: usize, mass: T, p: u32, hubble: T) -> Result<Self> {
        let params = Self { dim, mass, p, hubble };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return config_err("dimension n must be at least 1");
        }
        if !(self.mass >= T::zero()) || !self.mass.is_finite() {
            return config_err("mass m must be finite and nonnegative");
        }
        if self.p < 2 {
            return config_err(format!("exponent p = {} is invalid, need p >= 2", self.p));
        }
        if !self.hubble.is_finite() {
            return config_err("Hubble constant must be finite");
        }
        Ok(())
    }

    /// Exponential weights at time `t`.
    pub fn weights(&self, t: T) -> TimeWeights<T> {
        let n = T::from_count(self.dim);
        let ht = self.hubble * t;
        TimeWeights {
            kinetic: (-n * ht).exp(),
            potential: (n * ht).exp(),
            gradient: ((n - T::lit(2.0)) * ht).exp(),
        }
    }
}

/// `e^{-nHt}`, `e^{nHt}` and `e^{(n-2)Ht}` evaluated at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWeights<T> {
    pub kinetic: T,
    pub potential: T,
    pub gradient: T,
}

impl<T: Real> TimeWeights<T> {
    /// Pairwise sums of two instants' weights, as they appear in the
    /// averaged update equations.
    pub fn sum(self, other: Self) -> Self {
        Self {
            kinetic: self.kinetic + other.kinetic,
            potential: self.potential + other.potential,
            gradient: self.gradient + other.gradient,
        }
    }
}

/// Uniform time grid; `t^(l) = t0 + l * dt` is always recomputed from `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    pub dt: T,
    pub t0: T,
    pub steps: u64,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(dt: T, t0: T, steps: u64) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return config_err("time step dt must be positive and finite");
        }
        if !t0.is_finite() {
            return config_err("initial time must be finite");
        }
        Ok(Self { dt, t0, steps })
    }

    pub fn time(&self, level: u64) -> T {
        self.t0 + T::from_u64(level).expect("step index representable") * self.dt
    }

    pub fn end_time(&self) -> T {
        self.time(self.steps)
    }
}

/// `|x|^{p+1}`.
#[inline]
pub fn potential_power<T: Real>(x: T, p: u32) -> T {
    x.abs().powi(p as i32 + 1)
}

fn pointwise_local_terms<T: Real>(phi: T, psi: T, w: &TimeWeights<T>, params: &PhysParams<T>) -> T {
    let half = T::lit(0.5);
    let q = T::from_u32(params.p + 1).unwrap();
    half * w.kinetic * psi * psi
        + half * params.mass * params.mass * w.potential * phi * phi
        + w.potential * potential_power(phi, params.p) / q
}

fn check_pair<T: Real>(phi: &ScalarField<T>, psi: &ScalarField<T>, params: &PhysParams<T>) -> Result<()> {
    phi.check_same_lattice(psi)?;
    if phi.lattice().dim() != params.dim {
        return arg_err(format!(
            "lattice is {}-d but parameters declare n = {}",
            phi.lattice().dim(),
            params.dim
        ));
    }
    Ok(())
}

/// Pointwise gradient energy `sum_i (D_i phi)^2` of the given form (without
/// the weight and the one-half).
pub fn gradient_square<T: Real>(form: SchemeForm, phi: &ScalarField<T>) -> Result<ScalarField<T>> {
    let lat = phi.lattice();
    let mut out = ScalarField::zeros(std::sync::Arc::clone(lat));
    for axis in 0..lat.dim() {
        match form {
            SchemeForm::FormI => {
                let d = central_diff(phi, axis)?;
                for (o, v) in out.values_mut().iter_mut().zip(d.values()) {
                    *o += *v * *v;
                }
            }
            SchemeForm::FormII => {
                let fwd = forward_diff(phi, axis)?;
                let bwd = backward_diff(phi, axis)?;
                let half = T::lit(0.5);
                for ((o, f), b) in out.values_mut().iter_mut().zip(fwd.values()).zip(bwd.values()) {
                    *o += half * (*f * *f + *b * *b);
                }
            }
        }
    }
    Ok(out)
}

/// Discrete Hamiltonian density at time `t` for either form.
pub fn hamiltonian_density<T: Real>(
    form: SchemeForm,
    phi: &ScalarField<T>,
    psi: &ScalarField<T>,
    t: T,
    params: &PhysParams<T>,
) -> Result<ScalarField<T>> {
    check_pair(phi, psi, params)?;
    let w = params.weights(t);
    let grad = gradient_square(form, phi)?;
    let half = T::lit(0.5);
    let values = phi
        .values()
        .iter()
        .zip(psi.values())
        .zip(grad.values())
        .map(|((&f, &g), &d2)| pointwise_local_terms(f, g, &w, params) + half * w.gradient * d2)
        .collect();
    ScalarField::from_values(std::sync::Arc::clone(phi.lattice()), values)
}

/// Density with central-difference gradient energy.
pub fn hamiltonian_density_form1<T: Real>(
    phi: &ScalarField<T>,
    psi: &ScalarField<T>,
    t: T,
    params: &PhysParams<T>,
) -> Result<ScalarField<T>> {
    hamiltonian_density(SchemeForm::FormI, phi, psi, t, params)
}

/// Density with the forward/backward averaged gradient energy.
pub fn hamiltonian_density_form2<T: Real>(
    phi: &ScalarField<T>,
    psi: &ScalarField<T>,
    t: T,
    params: &PhysParams<T>,
) -> Result<ScalarField<T>> {
    hamiltonian_density(SchemeForm::FormII, phi, psi, t, params)
}

/// Default relative switch threshold between the divided difference and its
/// midpoint limit.
pub const DEFAULT_DG_EPS: f64 = 1e-8;

/// Discrete gradient `(|a|^{p+1} - |b|^{p+1}) / (a - b)`.
///
/// When `|a - b| <= eps * max(1, |a|, |b|)` the midpoint limit
/// `(p+1) |mu|^{p-1} mu`, `mu = (a+b)/2`, is returned instead. Same-sign
/// arguments use the factored power sum, so the quotient carries no
/// cancellation error however close `a` and `b` are.
pub fn nonlinear_discrete_gradient<T: Real>(a: T, b: T, p: u32, eps: T) -> T {
    if near_diagonal(a, b, eps) {
        let mu = T::lit(0.5) * (a + b);
        return T::from_u32(p + 1).unwrap() * mu.abs().powi(p as i32 - 1) * mu;
    }
    if a * b >= T::zero() {
        let sign = if a + b < T::zero() { -T::one() } else { T::one() };
        sign * power_sum(a.abs(), b.abs(), p + 1)
    } else {
        (potential_power(a, p) - potential_power(b, p)) / (a - b)
    }
}

/// Partial derivative of [`nonlinear_discrete_gradient`] in its first argument.
pub fn nonlinear_discrete_gradient_partial<T: Real>(a: T, b: T, p: u32, eps: T) -> T {
    if near_diagonal(a, b, eps) {
        let mu = T::lit(0.5) * (a + b);
        return T::lit(0.5) * T::from_u32(p * (p + 1)).unwrap() * mu.abs().powi(p as i32 - 1);
    }
    if a * b >= T::zero() {
        power_sum_partial(a.abs(), b.abs(), p + 1)
    } else {
        let q = T::from_u32(p + 1).unwrap();
        let d = a - b;
        (q * a.abs().powi(p as i32 - 1) * a * d - (potential_power(a, p) - potential_power(b, p))) / (d * d)
    }
}

#[inline]
fn near_diagonal<T: Real>(a: T, b: T, eps: T) -> bool {
    let scale = T::one().max(a.abs()).max(b.abs());
    (a - b).abs() <= eps * scale
}

/// `sum_{j=0}^{q-1} x^j y^{q-1-j}` by Horner's rule.
fn power_sum<T: Real>(x: T, y: T, q: u32) -> T {
    let mut acc = T::zero();
    let mut ypow = T::one();
    for _ in 0..q {
        acc = acc * x + ypow;
        ypow *= y;
    }
    acc
}

/// `d/dx sum_{j=0}^{q-1} x^j y^{q-1-j} = sum_{j=1}^{q-1} j x^{j-1} y^{q-1-j}`.
fn power_sum_partial<T: Real>(x: T, y: T, q: u32) -> T {
    let mut acc = T::zero();
    for j in (1..q).rev() {
        acc = acc * x + T::from_u32(j).unwrap() * y.powi((q - 1 - j) as i32);
    }
    acc
}

/// Average of `|cos|^q` over one period.
fn cosine_moment(q: u32) -> f64 {
    if q % 2 == 0 {
        // C(q, q/2) / 2^q
        let mut m = 1.0;
        for j in 1..=q / 2 {
            m *= (q / 2 + j) as f64 / j as f64 / 4.0;
        }
        m
    } else {
        // (2/pi) (q-1)!! / q!!
        let mut m = 2.0 / std::f64::consts::PI;
        let mut k = q;
        while k > 1 {
            m *= (k - 1) as f64 / k as f64;
            k -= 2;
        }
        m
    }
}

/// Continuum total Hamiltonian at `t = 0` of `phi = A cos 2 pi x`,
/// `psi = 2 pi A sin 2 pi x` on `[-1/2, 1/2]`.
///
/// Evaluated in closed form; if the moment arithmetic overflows, falls back
/// to [`continuum_total_hamiltonian_quadrature`].
pub fn continuum_total_hamiltonian_initial<T: Real>(params: &PhysParams<T>, amplitude: T) -> Result<T> {
    if params.dim != 1 {
        return arg_err("the closed-form initial Hamiltonian is one-dimensional");
    }
    let a = amplitude.to_f64().unwrap();
    let m = params.mass.to_f64().unwrap();
    let q = params.p + 1;
    let pi2 = std::f64::consts::PI.powi(2);
    let closed = 2.0 * pi2 * a * a + 0.25 * m * m * a * a + a.abs().powi(q as i32) * cosine_moment(q) / q as f64;
    if closed.is_finite() {
        return Ok(T::lit(closed));
    }
    continuum_total_hamiltonian_quadrature(params, amplitude, 1e-12)
}

/// The same integral by double-exponential quadrature of the density.
pub fn continuum_total_hamiltonian_quadrature<T: Real>(
    params: &PhysParams<T>,
    amplitude: T,
    tol: f64,
) -> Result<T> {
    if params.dim != 1 {
        return arg_err("the initial-data Hamiltonian integral is one-dimensional");
    }
    let a = amplitude.to_f64().unwrap();
    let m = params.mass.to_f64().unwrap();
    let p = params.p;
    let tau = 2.0 * std::f64::consts::PI;
    let density = |x: f64| {
        let phi = a * (tau * x).cos();
        let psi = tau * a * (tau * x).sin();
        let dphi = -tau * a * (tau * x).sin();
        0.5 * psi * psi + 0.5 * m * m * phi * phi + potential_power(phi, p) / (p + 1) as f64 + 0.5 * dphi * dphi
    };
    // split at the extrema so the integrand is smooth on each panel
    let knots = [-0.5, -0.25, 0.0, 0.25, 0.5];
    let total: f64 = knots
        .windows(2)
        .map(|w| quadrature::double_exponential::integrate(density, w[0], w[1], tol).integral)
        .sum();
    Ok(T::lit(total))
}
