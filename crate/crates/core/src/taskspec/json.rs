//! The task file format: `{query, gt_eval{wavelength_um, criteria}, reference}`.
//!
//! Unknown fields are rejected. Physical context, design space and family are
//! recovered from the query text (see [`super::query`]), so a task file is
//! self-contained and `serialize_task` / `parse_task` round-trip.

use serde::{Deserialize, Serialize};

use super::query::parse_query;
use super::{Component, Criterion, CriterionParams, Metric, Operation, TaskError, TaskSpec};
use crate::util::sha256_hex;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    query: String,
    gt_eval: GtEval,
    reference: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtEval {
    wavelength_um: Vec<f64>,
    criteria: Vec<CriterionFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CriterionFile {
    metric: String,
    params: ParamsFile,
    operation: String,
    target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    component: Option<Component>,
    wavelength_index: usize,
}

/// Parse a task file. The task id is a content hash of the canonical
/// serialization, so equal tasks get equal ids regardless of formatting.
pub fn parse_task(json_text: &str) -> Result<TaskSpec, TaskError> {
    let file: TaskFile = serde_json::from_str(json_text).map_err(|e| TaskError::MalformedJson(e.to_string()))?;
    from_file(file)
}

/// Same as [`parse_task`] for an already-parsed JSON value.
pub fn parse_task_value(value: serde_json::Value) -> Result<TaskSpec, TaskError> {
    let file: TaskFile = serde_json::from_value(value).map_err(|e| TaskError::MalformedJson(e.to_string()))?;
    from_file(file)
}

fn from_file(file: TaskFile) -> Result<TaskSpec, TaskError> {
    let mut criteria = Vec::with_capacity(file.gt_eval.criteria.len());
    for (i, c) in file.gt_eval.criteria.into_iter().enumerate() {
        let metric: Metric = c.metric.parse()?;
        let operation: Operation = c.operation.parse()?;
        if operation == Operation::CloseTo && c.tolerance.is_none() {
            return Err(TaskError::MissingTolerance(i));
        }
        if c.params.wavelength_index >= file.gt_eval.wavelength_um.len() {
            return Err(TaskError::BadWavelengthIndex {
                criterion: i,
                index: c.params.wavelength_index,
                len: file.gt_eval.wavelength_um.len(),
            });
        }
        criteria.push(Criterion {
            metric,
            params: CriterionParams {
                wavelength_index: c.params.wavelength_index,
                source_index: c.params.source_index,
                component: c.params.component,
            },
            operation,
            target: c.target,
            tolerance: c.tolerance,
        });
    }

    let ctx = parse_query(&file.query, &file.gt_eval.wavelength_um, &criteria)?;
    let mut task = TaskSpec {
        task_id: String::new(),
        template: ctx.template,
        query: file.query,
        physical_context: ctx.physical_context,
        design_space: ctx.design_space,
        criteria,
        reference: file.reference,
    };
    task.validate()?;
    task.task_id = content_id(&task);
    Ok(task)
}

fn to_file(task: &TaskSpec) -> TaskFile {
    TaskFile {
        query: task.query.clone(),
        gt_eval: GtEval {
            wavelength_um: task.physical_context.wavelengths_um.clone(),
            criteria: task
                .criteria
                .iter()
                .map(|c| CriterionFile {
                    metric: c.metric.as_str().to_string(),
                    params: ParamsFile {
                        source_index: c.params.source_index,
                        component: c.params.component,
                        wavelength_index: c.params.wavelength_index,
                    },
                    operation: c.operation.as_str().to_string(),
                    target: c.target,
                    tolerance: c.tolerance,
                })
                .collect(),
        },
        reference: task.reference.clone(),
    }
}

/// Task file as a JSON value (for embedding in manifests).
pub fn task_to_value(task: &TaskSpec) -> serde_json::Value {
    serde_json::to_value(to_file(task)).expect("task file serializes")
}

/// Pretty-printed task file.
pub fn serialize_task(task: &TaskSpec) -> String {
    serde_json::to_string_pretty(&to_file(task)).expect("task file serializes")
}

fn content_id(task: &TaskSpec) -> String {
    let canonical = serde_json::to_string(&to_file(task)).expect("task file serializes");
    format!("task-{}", &sha256_hex(canonical.as_bytes())[..12])
}

#[cfg(test)]
mod tests {
    use super::*;

    const G1: &str = r#"{
      "query": "Design a single-layer reflective grating at 0.632 um from RCWA-TF example settings. Use period 0.4777 um, high-index layer n=2.436, k=0.000, substrate n=1.363. Use TE polarization at normal incidence and maximize total reflection efficiency.",
      "gt_eval": {
        "wavelength_um": [0.632],
        "criteria": [
          {"metric": "total_reflection", "params": {"wavelength_index": 0},
           "operation": ">=", "target": 0.8}
        ]
      },
      "reference": "10.1038/s42005-021-00568-6"
    }"#;

    #[test]
    fn unknown_fields_are_rejected() {
        let text = G1.replace("\"reference\"", "\"extra\": 1, \"reference\"");
        assert!(matches!(parse_task(&text), Err(TaskError::MalformedJson(_))));
    }

    #[test]
    fn unknown_metric_is_reported_by_name() {
        let text = G1.replace("total_reflection", "absorbance");
        assert_eq!(parse_task(&text), Err(TaskError::UnknownMetric("absorbance".into())));
    }

    #[test]
    fn close_to_without_tolerance_is_rejected() {
        let text = G1.replace("\">=\"", "\"close_to\"");
        assert_eq!(parse_task(&text), Err(TaskError::MissingTolerance(0)));
    }

    #[test]
    fn out_of_range_wavelength_index_is_rejected() {
        let text = G1.replace("\"wavelength_index\": 0", "\"wavelength_index\": 1");
        assert!(matches!(parse_task(&text), Err(TaskError::BadWavelengthIndex { index: 1, len: 1, .. })));
    }

    #[test]
    fn not_json_is_malformed() {
        assert!(matches!(parse_task("{ nope"), Err(TaskError::MalformedJson(_))));
    }

    #[test]
    fn id_ignores_formatting() {
        let a = parse_task(G1).unwrap();
        let compact: serde_json::Value = serde_json::from_str(G1).unwrap();
        let b = parse_task(&compact.to_string()).unwrap();
        assert_eq!(a.task_id, b.task_id);
    }
}
