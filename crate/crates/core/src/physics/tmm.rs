//! Characteristic-matrix kernel, generic over plain and dual complex scalars.

use num_complex::Complex64;

use super::dual::CScalar;
use super::{PhysicsError, Polarization, StackResponse};

const I: Complex64 = Complex64::new(0.0, 1.0);

pub(crate) struct Amplitudes<S> {
    pub r: S,
    pub t: S,
    /// Re(eta_s) / Re(eta_0): power normalization of the tangential `t`.
    pub power_ratio: f64,
}

impl<S: CScalar> Amplitudes<S> {
    pub fn response(&self) -> StackResponse {
        let r = self.r.value();
        let t0 = self.t.value() * self.power_ratio.sqrt();
        StackResponse { reflection: r.norm_sqr(), transmission: t0.norm_sqr(), t0: Some(t0) }
    }
}

/// Longitudinal wavenumber factor `n cos(theta) = sqrt(n^2 - beta^2)` on the
/// decaying / forward-propagating branch.
#[inline]
fn normal_factor<S: CScalar>(n: S, beta_sq: Complex64) -> S {
    let q = (n * n - S::constant(beta_sq)).sqrt();
    let v = q.value();
    if v.im < 0.0 || (v.im == 0.0 && v.re < 0.0) {
        -q
    } else {
        q
    }
}

#[inline]
fn admittance<S: CScalar>(n: S, q: S, pol: Polarization) -> S {
    match pol {
        Polarization::TE => q,
        Polarization::TM => n * n / q,
    }
}

/// Reflection and transmission amplitudes of `layers` = [(index, thickness)].
pub(crate) fn amplitudes<S: CScalar>(
    superstrate: Complex64,
    layers: &[(S, S)],
    substrate: Complex64,
    wavelength_um: f64,
    angle_deg: f64,
    pol: Polarization,
) -> Result<Amplitudes<S>, PhysicsError> {
    let k0 = 2.0 * std::f64::consts::PI / wavelength_um;
    let theta = angle_deg.to_radians();
    let beta = superstrate * theta.sin();
    let beta_sq = beta * beta;

    let q0: Complex64 = superstrate * theta.cos();
    let eta0 = admittance(superstrate, q0, pol);
    let qs: Complex64 = normal_factor(substrate, beta_sq);
    let etas = admittance(substrate, qs, pol);
    if eta0.re <= 0.0 {
        return Err(PhysicsError::InvalidInput("superstrate does not carry power".into()));
    }
    if etas.re <= 1e-14 * etas.norm() {
        return Err(PhysicsError::EvanescentSubstrate);
    }

    let one = S::constant(Complex64::new(1.0, 0.0));
    let zero = S::constant(Complex64::new(0.0, 0.0));
    let (mut m11, mut m12, mut m21, mut m22) = (one, zero, zero, one);
    for &(n, d) in layers {
        let q = normal_factor(n, beta_sq);
        let eta = admittance(n, q, pol);
        let delta = (q * d).scale(Complex64::new(k0, 0.0));
        let (c, s) = (delta.cos(), delta.sin());
        let a12 = (s / eta).scale(-I);
        let a21 = (eta * s).scale(-I);
        let n11 = m11 * c + m12 * a21;
        let n12 = m11 * a12 + m12 * c;
        let n21 = m21 * c + m22 * a21;
        let n22 = m21 * a12 + m22 * c;
        m11 = n11;
        m12 = n12;
        m21 = n21;
        m22 = n22;
    }

    let b = m11 + m12.scale(etas);
    let c = m21 + m22.scale(etas);
    let eb = b.scale(eta0);
    let denom = eb + c;
    let r = (eb - c) / denom;
    let t = S::constant(2.0 * eta0) / denom;
    Ok(Amplitudes { r, t, power_ratio: etas.re / eta0.re })
}
