//! Fixed scorer: raw and normalized criterion margins, per-task SG / CPF / BM.
//!
//! A margin is nonnegative exactly when its criterion is satisfied; zero
//! passes. Inequalities use the signed distance to the threshold,
//! target-matching criteria use tolerance minus deviation, and phase
//! deviation is always the cyclic distance on the circle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::StackResponse;
use crate::taskspec::{Criterion, Metric, Operation, ResponseKey, TaskSpec};
use crate::util::bool_as_int;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriteriaError {
    #[error("metric {0} is not available from the response")]
    MetricUnavailable(&'static str),
    #[error("no response for wavelength {} / source {}", .0.wavelength_index, .0.source_index)]
    MissingResponse(ResponseKey),
}

/// Responses addressed by (wavelength index, source index).
pub type ResponseSet = BTreeMap<ResponseKey, StackResponse>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub raw_margin: f64,
    pub scale: f64,
    pub normalized_margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub outcomes: Vec<CriterionOutcome>,
    #[serde(with = "bool_as_int")]
    pub sg: bool,
    pub cpf: f64,
    pub bm: f64,
}

impl CriteriaReport {
    pub fn normalized_margins(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.normalized_margin).collect()
    }

    /// Index of the least satisfied criterion (first on ties).
    pub fn worst_criterion(&self) -> Option<usize> {
        self.outcomes
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, o)| match best {
                Some((_, m)) if m <= o.normalized_margin => best,
                _ => Some((i, o.normalized_margin)),
            })
            .map(|(i, _)| i)
    }
}

/// Shortest angular distance in degrees, on `[0, 180]`.
pub fn cyclic_distance_deg(a: f64, b: f64) -> f64 {
    // `%` is exact, so the only rounding is in `360 - d`.
    let d = (a - b).abs() % 360.0;
    d.min(360.0 - d)
}

/// Signed wrapped difference `a - b` on `(-180, 180]`; its absolute value is
/// the cyclic distance and its sign is the derivative of that distance in `a`.
pub fn wrapped_difference_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

pub fn metric_value(metric: Metric, response: &StackResponse) -> Result<f64, CriteriaError> {
    match metric {
        Metric::TotalReflection => Ok(response.reflection),
        Metric::TotalTransmission => Ok(response.transmission),
        Metric::TransmissionPhaseDeg => {
            response.phase_deg().ok_or(CriteriaError::MetricUnavailable(Metric::TransmissionPhaseDeg.as_str()))
        }
    }
}

/// Raw margin of a criterion at an already-extracted metric value.
pub fn margin_at(criterion: &Criterion, value: f64) -> f64 {
    match criterion.operation {
        Operation::AtLeast => value - criterion.target,
        Operation::AtMost => criterion.target - value,
        Operation::CloseTo => {
            let tol = criterion.tolerance.unwrap_or(0.0);
            let deviation = if criterion.metric.is_phase() {
                cyclic_distance_deg(value, criterion.target)
            } else {
                (value - criterion.target).abs()
            };
            tol - deviation
        }
    }
}

pub fn raw_margin(criterion: &Criterion, response: &StackResponse) -> Result<f64, CriteriaError> {
    Ok(margin_at(criterion, metric_value(criterion.metric, response)?))
}

/// Normalization scale: tolerance for target matching, `|target|` for
/// inequalities with nonzero target, otherwise 1. Target matching wins when
/// both a tolerance and a target are present.
pub fn normalization_scale(criterion: &Criterion) -> f64 {
    match (criterion.operation, criterion.tolerance) {
        (Operation::CloseTo, Some(tol)) => tol,
        _ if criterion.target != 0.0 => criterion.target.abs(),
        _ => 1.0,
    }
}

pub fn normalized_margin(criterion: &Criterion, raw: f64) -> f64 {
    raw / normalization_scale(criterion)
}

pub fn outcome(criterion: &Criterion, raw: f64) -> CriterionOutcome {
    let scale = normalization_scale(criterion);
    CriterionOutcome { raw_margin: raw, scale, normalized_margin: raw / scale, passed: raw >= 0.0 }
}

/// Assemble SG / CPF / BM from per-criterion outcomes (non-empty).
pub fn report_from_outcomes(outcomes: Vec<CriterionOutcome>) -> CriteriaReport {
    let k = outcomes.len();
    let passed = outcomes.iter().filter(|o| o.passed).count();
    let bm = outcomes.iter().map(|o| o.normalized_margin).fold(f64::INFINITY, f64::min);
    CriteriaReport { sg: passed == k, cpf: passed as f64 / k as f64, bm, outcomes }
}

pub fn evaluate_task(task: &TaskSpec, responses: &ResponseSet) -> Result<CriteriaReport, CriteriaError> {
    let outcomes = task
        .criteria
        .iter()
        .map(|c| {
            let key = c.params.response_key();
            let resp = responses.get(&key).ok_or(CriteriaError::MissingResponse(key))?;
            Ok(outcome(c, raw_margin(c, resp)?))
        })
        .collect::<Result<Vec<_>, CriteriaError>>()?;
    Ok(report_from_outcomes(outcomes))
}
