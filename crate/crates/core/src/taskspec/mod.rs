//! Task data model, JSON task files, family generators and split building.

mod families;
mod json;
mod query;
mod splits;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::Polarization;

pub use families::{
    evaluate_at, generate_certified, generate_family_instance, generate_template_instance, grid_oracle, CertifiedTask,
    GridOracle, TemplateRanges, GRID_POINTS, MAX_DRAWS, MIN_MIDPOINT_DEFICIT,
};
pub use json::{parse_task, parse_task_value, serialize_task, task_to_value};
pub use query::{parse_query, render_query, QueryContext};
pub use splits::{
    build_splits, split_templates, template_counts, Setting, SplitManifest, SplitName, SplitSet, TEST_SIZE, TRAIN_SIZE,
    VALIDATION_SIZE,
};

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("malformed task JSON: {0}")]
    MalformedJson(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("unknown operation `{0}`")]
    UnknownOperation(String),
    #[error("criterion {0}: close_to requires a tolerance")]
    MissingTolerance(usize),
    #[error("criterion {criterion}: wavelength_index {index} out of range ({len} wavelengths)")]
    BadWavelengthIndex { criterion: usize, index: usize, len: usize },
    #[error("criterion {criterion}: source_index {index} out of range ({len} sources)")]
    BadSourceIndex { criterion: usize, index: usize, len: usize },
    #[error("invalid criterion {criterion}: {reason}")]
    InvalidCriterion { criterion: usize, reason: String },
    #[error("invalid physical context: {0}")]
    InvalidContext(String),
    #[error("invalid design space: {0}")]
    InvalidDesignSpace(String),
    #[error("criteria do not match the {family} criterion form")]
    ShapeMismatch { family: Family },
    #[error("no feasible instance for template {template} after {attempts} draws")]
    InfeasibleDraw { template: TemplateId, attempts: usize },
}

/// Task family from the benchmark taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    G1,
    G2,
    G3,
    G4,
    G5,
    G6,
    Gaux,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::G1,
        Family::G2,
        Family::G3,
        Family::G4,
        Family::G5,
        Family::G6,
        Family::Gaux,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::G1 => "G1",
            Family::G2 => "G2",
            Family::G3 => "G3",
            Family::G4 => "G4",
            Family::G5 => "G5",
            Family::G6 => "G6",
            Family::Gaux => "Gaux",
        }
    }

    /// Whether `criteria` has this family's criterion form.
    pub fn matches_shape(self, criteria: &[Criterion]) -> bool {
        use Metric::*;
        use Operation::*;
        let is = |c: &Criterion, m: Metric, o: Operation| c.metric == m && c.operation == o;
        match (self, criteria) {
            (Family::G1 | Family::G5, [c]) => is(c, TotalReflection, AtLeast),
            (Family::G2, [a, b]) => {
                is(a, TotalReflection, AtLeast)
                    && is(b, TotalReflection, AtLeast)
                    && a.params.wavelength_index == b.params.wavelength_index
                    && a.params.source() != b.params.source()
            }
            (Family::G3, [a, b]) => {
                is(a, TotalReflection, AtLeast)
                    && is(b, TotalReflection, AtMost)
                    && a.params.wavelength_index == b.params.wavelength_index
                    && a.params.source() != b.params.source()
            }
            (Family::G4, [a, b]) => {
                is(a, TotalReflection, AtLeast)
                    && is(b, TotalReflection, AtLeast)
                    && a.params.wavelength_index != b.params.wavelength_index
            }
            (Family::G6 | Family::Gaux, [a, b]) => {
                is(a, TotalTransmission, AtLeast)
                    && is(b, TransmissionPhaseDeg, CloseTo)
                    && a.params.wavelength_index == b.params.wavelength_index
            }
            _ => false,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown family `{s}`"))
    }
}

/// A sibling template within a family, e.g. `G3-b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TemplateId {
    pub family: Family,
    pub variant: char,
}

impl TemplateId {
    pub const fn new(family: Family, variant: char) -> Self {
        TemplateId { family, variant }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.family, self.variant)
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (fam, var) = s.split_once('-').ok_or_else(|| format!("bad template id `{s}`"))?;
        let mut chars = var.chars();
        match (chars.next(), chars.next()) {
            (Some(v), None) if v.is_ascii_lowercase() => Ok(TemplateId::new(fam.parse()?, v)),
            _ => Err(format!("bad template variant in `{s}`")),
        }
    }
}

impl Serialize for TemplateId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TemplateId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "total_reflection")]
    TotalReflection,
    #[serde(rename = "total_transmission")]
    TotalTransmission,
    #[serde(rename = "zero_order_transmission_phase_deg")]
    TransmissionPhaseDeg,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::TotalReflection => "total_reflection",
            Metric::TotalTransmission => "total_transmission",
            Metric::TransmissionPhaseDeg => "zero_order_transmission_phase_deg",
        }
    }

    pub fn is_phase(self) -> bool {
        matches!(self, Metric::TransmissionPhaseDeg)
    }
}

impl FromStr for Metric {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "total_reflection" => Ok(Metric::TotalReflection),
            "total_transmission" => Ok(Metric::TotalTransmission),
            "zero_order_transmission_phase_deg" => Ok(Metric::TransmissionPhaseDeg),
            other => Err(TaskError::UnknownMetric(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operation {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "close_to")]
    CloseTo,
}

impl Operation {
    pub fn as_str(self) -> &'static str {
        match self {
            Operation::AtLeast => ">=",
            Operation::AtMost => "<=",
            Operation::CloseTo => "close_to",
        }
    }
}

impl FromStr for Operation {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            ">=" => Ok(Operation::AtLeast),
            "<=" => Ok(Operation::AtMost),
            "close_to" => Ok(Operation::CloseTo),
            other => Err(TaskError::UnknownOperation(other.to_string())),
        }
    }
}

/// Field component a phase criterion refers to.
///
/// The stratified solver is isotropic, so the component is carried for
/// round-tripping only; phase is read from the criterion's source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionParams {
    pub wavelength_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<Component>,
}

impl CriterionParams {
    pub fn at(wavelength_index: usize) -> Self {
        CriterionParams { wavelength_index, source_index: None, component: None }
    }

    /// Source index with the implicit default of 0.
    pub fn source(&self) -> usize {
        self.source_index.unwrap_or(0)
    }

    /// Key into a response set.
    pub fn response_key(&self) -> ResponseKey {
        ResponseKey { wavelength_index: self.wavelength_index, source_index: self.source() }
    }
}

/// (wavelength index, source index) address of one solver evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResponseKey {
    pub wavelength_index: usize,
    pub source_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub metric: Metric,
    pub params: CriterionParams,
    pub operation: Operation,
    pub target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl Criterion {
    pub fn at_least(metric: Metric, params: CriterionParams, target: f64) -> Self {
        Criterion { metric, params, operation: Operation::AtLeast, target, tolerance: None }
    }

    pub fn at_most(metric: Metric, params: CriterionParams, target: f64) -> Self {
        Criterion { metric, params, operation: Operation::AtMost, target, tolerance: None }
    }

    pub fn close_to(metric: Metric, params: CriterionParams, target: f64, tolerance: f64) -> Self {
        Criterion { metric, params, operation: Operation::CloseTo, target, tolerance: Some(tolerance) }
    }
}

/// One illumination condition: incidence angle and polarization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub angle_deg: f64,
    pub polarization: Polarization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalContext {
    pub wavelengths_um: Vec<f64>,
    pub incidence_angles_deg: Vec<f64>,
    pub polarizations: Vec<Polarization>,
    pub superstrate_index: Complex64,
    pub substrate_index: Complex64,
    /// Nominal index of each layer, top (superstrate side) to bottom.
    pub fixed_layer_indices: Vec<Complex64>,
}

impl PhysicalContext {
    /// Sources enumerated angle-major: for each angle, each polarization.
    pub fn sources(&self) -> Vec<Source> {
        self.incidence_angles_deg
            .iter()
            .flat_map(|&angle_deg| {
                self.polarizations.iter().map(move |&polarization| Source { angle_deg, polarization })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |m: &str| Err(TaskError::InvalidContext(m.to_string()));
        if self.wavelengths_um.is_empty() {
            return bad("at least one wavelength is required");
        }
        if self.wavelengths_um.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("wavelengths must be positive");
        }
        if self.incidence_angles_deg.is_empty() || self.polarizations.is_empty() {
            return bad("at least one incidence angle and one polarization are required");
        }
        if self.incidence_angles_deg.iter().any(|a| !(0.0..90.0).contains(a)) {
            return bad("incidence angles must lie in [0, 90)");
        }
        let media = [self.superstrate_index, self.substrate_index];
        if media.iter().chain(&self.fixed_layer_indices).any(|n| n.im < 0.0 || !n.re.is_finite()) {
            return bad("media must be passive (Im(index) >= 0)");
        }
        if self.fixed_layer_indices.is_empty() {
            return bad("at least one layer is required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Thickness,
    Index,
}

/// One bounded design variable. Names follow `thickness_<layer>` /
/// `index_<layer>` with 1-based layer numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignParam {
    pub name: String,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub unit: String,
}

impl DesignParam {
    pub fn thickness(layer: usize, lower_bound: f64, upper_bound: f64) -> Self {
        DesignParam { name: format!("thickness_{}", layer + 1), lower_bound, upper_bound, unit: "um".into() }
    }

    pub fn index(layer: usize, lower_bound: f64, upper_bound: f64) -> Self {
        DesignParam { name: format!("index_{}", layer + 1), lower_bound, upper_bound, unit: "RIU".into() }
    }

    /// Decode the name into (kind, 0-based layer).
    pub fn target(&self) -> Option<(ParamKind, usize)> {
        let (kind, num) = self.name.split_once('_')?;
        let kind = match kind {
            "thickness" => ParamKind::Thickness,
            "index" => ParamKind::Index,
            _ => return None,
        };
        let layer: usize = num.parse().ok()?;
        layer.checked_sub(1).map(|l| (kind, l))
    }

    pub fn range(&self) -> f64 {
        self.upper_bound - self.lower_bound
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower_bound + self.upper_bound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub params: Vec<DesignParam>,
}

impl DesignSpace {
    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.params.iter().map(DesignParam::midpoint).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self.params.iter().zip(x).all(|(p, v)| *v >= p.lower_bound && *v <= p.upper_bound)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (p, v) in self.params.iter().zip(x.iter_mut()) {
            *v = v.clamp(p.lower_bound, p.upper_bound);
        }
    }

    /// Check bounds and that every layer has exactly one thickness parameter.
    pub fn validate(&self, n_layers: usize) -> Result<(), TaskError> {
        let bad = |m: String| Err(TaskError::InvalidDesignSpace(m));
        if self.params.is_empty() {
            return bad("design space must have at least one parameter".into());
        }
        if self.params.len() > crate::physics::MAX_PARAMS {
            return bad(format!("at most {} parameters are supported", crate::physics::MAX_PARAMS));
        }
        let mut thickness_seen = vec![0usize; n_layers];
        let mut index_seen = vec![0usize; n_layers];
        for p in &self.params {
            if !(p.lower_bound.is_finite() && p.upper_bound.is_finite() && p.lower_bound < p.upper_bound) {
                return bad(format!("{}: lower bound must be below upper bound", p.name));
            }
            match p.target() {
                Some((kind, layer)) if layer < n_layers => {
                    let slot = match kind {
                        ParamKind::Thickness => &mut thickness_seen[layer],
                        ParamKind::Index => &mut index_seen[layer],
                    };
                    *slot += 1;
                    if kind == ParamKind::Thickness && p.lower_bound < 0.0 {
                        return bad(format!("{}: thickness bounds must be nonnegative", p.name));
                    }
                    if kind == ParamKind::Index && p.lower_bound <= 0.0 {
                        return bad(format!("{}: index bounds must be positive", p.name));
                    }
                }
                _ => return bad(format!("{}: does not name a layer of the stack", p.name)),
            }
        }
        if thickness_seen.iter().any(|&c| c != 1) || index_seen.iter().any(|&c| c > 1) {
            return bad("each layer needs exactly one thickness and at most one index parameter".into());
        }
        Ok(())
    }
}

/// One inverse-design task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub template: TemplateId,
    pub query: String,
    pub physical_context: PhysicalContext,
    pub design_space: DesignSpace,
    pub criteria: Vec<Criterion>,
    pub reference: String,
}

impl TaskSpec {
    pub fn family(&self) -> Family {
        self.template.family
    }

    /// Distinct response keys referenced by the criteria, in sorted order.
    pub fn response_keys(&self) -> Vec<ResponseKey> {
        let mut keys: Vec<ResponseKey> = self.criteria.iter().map(|c| c.params.response_key()).collect();
        keys.sort();
        keys.dedup();
        keys
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        self.physical_context.validate()?;
        self.design_space.validate(self.physical_context.fixed_layer_indices.len())?;
        if self.criteria.is_empty() {
            return Err(TaskError::InvalidCriterion { criterion: 0, reason: "criteria list is empty".into() });
        }
        let n_wl = self.physical_context.wavelengths_um.len();
        let n_src = self.physical_context.sources().len();
        for (i, c) in self.criteria.iter().enumerate() {
            validate_criterion(i, c, n_wl, n_src)?;
        }
        Ok(())
    }

    /// Validation plus the family criterion-form check.
    pub fn validate_shape(&self) -> Result<(), TaskError> {
        self.validate()?;
        if !self.family().matches_shape(&self.criteria) {
            return Err(TaskError::ShapeMismatch { family: self.family() });
        }
        Ok(())
    }
}

pub(crate) fn validate_criterion(i: usize, c: &Criterion, n_wl: usize, n_src: usize) -> Result<(), TaskError> {
    if c.params.wavelength_index >= n_wl {
        return Err(TaskError::BadWavelengthIndex { criterion: i, index: c.params.wavelength_index, len: n_wl });
    }
    if c.params.source() >= n_src {
        return Err(TaskError::BadSourceIndex { criterion: i, index: c.params.source(), len: n_src });
    }
    let invalid = |reason: &str| Err(TaskError::InvalidCriterion { criterion: i, reason: reason.into() });
    if !c.target.is_finite() {
        return invalid("target must be finite");
    }
    match c.operation {
        Operation::CloseTo => {
            let tol = c.tolerance.ok_or(TaskError::MissingTolerance(i))?;
            if !(tol.is_finite() && tol > 0.0) {
                return invalid("tolerance must be positive");
            }
            if !c.metric.is_phase() {
                return invalid("close_to is only enabled for phase metrics");
            }
            if !(0.0..360.0).contains(&c.target) || tol > 180.0 {
                return invalid("phase target must lie in [0, 360) with tolerance in (0, 180]");
            }
        }
        Operation::AtLeast | Operation::AtMost => {
            if c.metric.is_phase() {
                return invalid("phase criteria must use close_to");
            }
            if let Some(tol) = c.tolerance {
                if !(tol.is_finite() && tol > 0.0) {
                    return invalid("tolerance must be positive");
                }
            }
        }
    }
    Ok(())
}
