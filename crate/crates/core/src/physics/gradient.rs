//! Responses and exact parameter derivatives for a parameterized stack.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::dual::{CDual, CScalar, MAX_PARAMS};
use super::{check_inputs, tmm, Layer, PhysicsError, Stack, StackResponse};
use crate::taskspec::{DesignSpace, ParamKind, PhysicalContext, Source};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDerivative {
    pub d_reflection: f64,
    pub d_transmission: f64,
    pub d_phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBundle {
    pub response: StackResponse,
    pub d_by_param: Vec<ParamDerivative>,
}

/// Materialize the stack for a design point. Layers without an index
/// parameter keep their nominal index from the context.
pub fn build_stack(ctx: &PhysicalContext, space: &DesignSpace, params: &[f64]) -> Stack {
    let mut layers: Vec<Layer> =
        ctx.fixed_layer_indices.iter().map(|&index| Layer { index, thickness_um: 0.0 }).collect();
    for (p, &v) in space.params.iter().zip(params) {
        if let Some((kind, layer)) = p.target() {
            if let Some(l) = layers.get_mut(layer) {
                match kind {
                    ParamKind::Thickness => l.thickness_um = v,
                    ParamKind::Index => l.index = Complex64::new(v, l.index.im),
                }
            }
        }
    }
    Stack { superstrate_index: ctx.superstrate_index, layers, substrate_index: ctx.substrate_index }
}

/// Solve at `params` and differentiate R, T and transmitted phase with
/// respect to every design parameter (forward-mode, exact to rounding).
pub fn solve_with_gradient(
    ctx: &PhysicalContext,
    space: &DesignSpace,
    params: &[f64],
    wavelength_um: f64,
    source: Source,
) -> Result<GradientBundle, PhysicsError> {
    check_inputs(wavelength_um, source.angle_deg)?;
    let n_params = space.params.len();
    if n_params > MAX_PARAMS || params.len() != n_params {
        return Err(PhysicsError::InvalidInput(format!(
            "expected {n_params} parameter values (max {MAX_PARAMS}), got {}",
            params.len()
        )));
    }
    let stack = build_stack(ctx, space, params);
    stack.validate()?;

    let mut layers: Vec<(CDual, CDual)> = stack
        .layers
        .iter()
        .map(|l| (CDual::constant(l.index), CDual::constant(Complex64::new(l.thickness_um, 0.0))))
        .collect();
    for (slot, (p, &v)) in space.params.iter().zip(params).enumerate() {
        let Some((kind, layer)) = p.target() else { continue };
        let Some(entry) = layers.get_mut(layer) else { continue };
        match kind {
            ParamKind::Thickness => entry.1 = CDual::variable(Complex64::new(v, 0.0), slot, n_params),
            ParamKind::Index => entry.0 = CDual::variable(entry.0.v, slot, n_params),
        }
    }

    let amp = tmm::amplitudes(
        ctx.superstrate_index,
        &layers,
        ctx.substrate_index,
        wavelength_um,
        source.angle_deg,
        source.polarization,
    )?;
    let response = amp.response();
    if !response.is_finite() {
        return Err(PhysicsError::NonFiniteResponse);
    }

    let r = amp.r.v;
    let t = amp.t.v;
    let d_by_param = (0..n_params)
        .map(|i| {
            let dr = amp.r.deriv(i);
            let dt = amp.t.deriv(i);
            let d = ParamDerivative {
                d_reflection: 2.0 * (r.conj() * dr).re,
                d_transmission: amp.power_ratio * 2.0 * (t.conj() * dt).re,
                d_phase_deg: (dt / t).im.to_degrees(),
            };
            if d.d_reflection.is_finite() && d.d_transmission.is_finite() && d.d_phase_deg.is_finite() {
                Ok(d)
            } else {
                Err(PhysicsError::NonFiniteGradient { param: i })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GradientBundle { response, d_by_param })
}
