//! Transfer-matrix solver for stratified media.
//!
//! Conventions: fields vary as `exp(i(kz - wt))`, so passive media have
//! `Im(n) >= 0` and propagation through a layer advances the transmitted
//! phase. The transmission coefficient `t0` is the tangential-field ratio at
//! the substrate exit plane scaled by `sqrt(Re(eta_s) / Re(eta_0))`, which
//! makes `|t0|^2 = T`. Phase is reported in degrees on `[0, 360)`.

pub mod dual;
mod gradient;
mod tmm;

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dual::{CDual, CScalar, MAX_PARAMS};
pub use gradient::{build_stack, solve_with_gradient, GradientBundle, ParamDerivative};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    TE,
    TM,
}

impl Polarization {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarization::TE => "TE",
            Polarization::TM => "TM",
        }
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
    #[error("substrate is evanescent at this angle; transmitted power is undefined")]
    EvanescentSubstrate,
    #[error("non-finite response")]
    NonFiniteResponse,
    #[error("non-finite gradient with respect to parameter {param}")]
    NonFiniteGradient { param: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub index: Complex64,
    pub thickness_um: f64,
}

/// Superstrate / layers / substrate, top to bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stack {
    pub superstrate_index: Complex64,
    pub layers: Vec<Layer>,
    pub substrate_index: Complex64,
}

impl Stack {
    pub fn bare(superstrate: f64, substrate: f64) -> Self {
        Stack {
            superstrate_index: Complex64::new(superstrate, 0.0),
            layers: Vec::new(),
            substrate_index: Complex64::new(substrate, 0.0),
        }
    }

    pub fn with_layer(mut self, index: Complex64, thickness_um: f64) -> Self {
        self.layers.push(Layer { index, thickness_um });
        self
    }

    /// Same stack seen from the substrate side.
    pub fn reversed(&self) -> Stack {
        Stack {
            superstrate_index: self.substrate_index,
            layers: self.layers.iter().rev().cloned().collect(),
            substrate_index: self.superstrate_index,
        }
    }

    pub fn is_lossless(&self) -> bool {
        self.superstrate_index.im == 0.0
            && self.substrate_index.im == 0.0
            && self.layers.iter().all(|l| l.index.im == 0.0)
    }

    fn validate(&self) -> Result<(), PhysicsError> {
        let media = [self.superstrate_index, self.substrate_index];
        if media.iter().chain(self.layers.iter().map(|l| &l.index)).any(|n| n.im < 0.0 || !n.is_finite()) {
            return Err(PhysicsError::InvalidInput("indices must be finite with Im(n) >= 0".into()));
        }
        // Zero thickness is allowed: the layer is optically absent.
        if self.layers.iter().any(|l| !(l.thickness_um >= 0.0 && l.thickness_um.is_finite())) {
            return Err(PhysicsError::InvalidInput("thickness must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Solver output for one (wavelength, angle, polarization).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackResponse {
    pub reflection: f64,
    pub transmission: f64,
    /// Zero-order transmission coefficient; absent when not computed.
    pub t0: Option<Complex64>,
}

impl StackResponse {
    pub fn phase_deg(&self) -> Option<f64> {
        self.t0.map(phase_deg)
    }

    pub fn is_finite(&self) -> bool {
        self.reflection.is_finite() && self.transmission.is_finite() && self.t0.is_none_or(|t| t.is_finite())
    }
}

/// Argument of `z` in degrees on `[0, 360)`.
pub fn phase_deg(z: Complex64) -> f64 {
    let d = z.im.atan2(z.re).to_degrees().rem_euclid(360.0);
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

pub(crate) fn check_inputs(wavelength_um: f64, angle_deg: f64) -> Result<(), PhysicsError> {
    if !(wavelength_um.is_finite() && wavelength_um > 0.0) {
        return Err(PhysicsError::InvalidInput(format!("wavelength must be positive, got {wavelength_um}")));
    }
    if !(0.0..90.0).contains(&angle_deg) {
        return Err(PhysicsError::InvalidInput(format!("angle must lie in [0, 90), got {angle_deg}")));
    }
    Ok(())
}

/// Solve one stack at one wavelength, angle and polarization.
pub fn solve_stack(
    stack: &Stack,
    wavelength_um: f64,
    angle_deg: f64,
    pol: Polarization,
) -> Result<StackResponse, PhysicsError> {
    check_inputs(wavelength_um, angle_deg)?;
    stack.validate()?;
    let layers: Vec<(Complex64, Complex64)> =
        stack.layers.iter().map(|l| (l.index, Complex64::new(l.thickness_um, 0.0))).collect();
    let amp = tmm::amplitudes(stack.superstrate_index, &layers, stack.substrate_index, wavelength_um, angle_deg, pol)?;
    let resp = amp.response();
    if !resp.is_finite() {
        return Err(PhysicsError::NonFiniteResponse);
    }
    Ok(resp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_space_is_transparent() {
        let r = solve_stack(&Stack::bare(1.0, 1.0), 0.5, 0.0, Polarization::TE).unwrap();
        assert_eq!(r.reflection, 0.0);
        assert!((r.transmission - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bare_interface_matches_fresnel() {
        for pol in [Polarization::TE, Polarization::TM] {
            let r = solve_stack(&Stack::bare(1.0, 1.5), 0.632, 0.0, pol).unwrap();
            assert!((r.reflection - 0.04).abs() < 1e-12);
            assert!((r.transmission - 0.96).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_wave_coating_cancels_reflection() {
        let n = 1.5_f64.sqrt();
        let wl = 0.6;
        let stack = Stack::bare(1.0, 1.5).with_layer(Complex64::new(n, 0.0), wl / (4.0 * n));
        let r = solve_stack(&stack, wl, 0.0, Polarization::TE).unwrap();
        assert!(r.reflection < 1e-10, "R = {}", r.reflection);
    }

    #[test]
    fn brewster_angle_kills_tm_reflection() {
        let theta = 1.5_f64.atan().to_degrees();
        let r = solve_stack(&Stack::bare(1.0, 1.5), 0.6, theta, Polarization::TM).unwrap();
        assert!(r.reflection < 1e-20);
        let te = solve_stack(&Stack::bare(1.0, 1.5), 0.6, theta, Polarization::TE).unwrap();
        assert!(te.reflection > 0.1);
    }

    #[test]
    fn total_internal_reflection_is_signalled() {
        let err = solve_stack(&Stack::bare(1.5, 1.0), 0.6, 60.0, Polarization::TE).unwrap_err();
        assert_eq!(err, PhysicsError::EvanescentSubstrate);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let s = Stack::bare(1.0, 1.5);
        assert!(matches!(solve_stack(&s, 0.0, 0.0, Polarization::TE), Err(PhysicsError::InvalidInput(_))));
        assert!(matches!(solve_stack(&s, 0.5, 90.0, Polarization::TE), Err(PhysicsError::InvalidInput(_))));
        let gain = Stack::bare(1.0, 1.5).with_layer(Complex64::new(2.0, -0.1), 0.1);
        assert!(matches!(solve_stack(&gain, 0.5, 0.0, Polarization::TE), Err(PhysicsError::InvalidInput(_))));
    }

    #[test]
    fn index_matched_layer_only_delays_phase() {
        let n = 1.5;
        let wl = 0.8;
        let d = 0.37;
        let stack = Stack::bare(n, n).with_layer(Complex64::new(n, 0.0), d);
        let r = solve_stack(&stack, wl, 0.0, Polarization::TE).unwrap();
        let expected = (360.0 * n * d / wl).rem_euclid(360.0);
        assert!((r.phase_deg().unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn phase_is_in_half_open_range() {
        assert_eq!(phase_deg(Complex64::new(1.0, -0.0)), 0.0);
        assert!((phase_deg(Complex64::new(0.0, -1.0)) - 270.0).abs() < 1e-12);
        let tiny_negative = phase_deg(Complex64::new(1.0, -1e-300));
        assert!((0.0..360.0).contains(&tiny_negative));
    }
}
