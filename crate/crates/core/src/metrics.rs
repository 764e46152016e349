//! Dataset-level metrics over task records.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::TaskRecord;
use crate::taxonomy::ErrorCategory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no records to aggregate")]
    EmptyInput,
    #[error("record sets cover different task ids")]
    IdMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub n: usize,
    pub se: f64,
    pub sg: f64,
    pub cpf: f64,
    /// Mean task BM over tasks with at least one executed candidate.
    pub bm: Option<f64>,
    /// Tasks left out of the BM mean because nothing executed.
    pub bm_excluded: usize,
    pub attempts_mean: f64,
    pub generator_calls_mean: f64,
    pub tokens_total: u64,
}

pub fn aggregate(records: &[TaskRecord]) -> Result<DatasetMetrics, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = records.len() as f64;
    let mut se = 0.0;
    let mut sg = 0.0;
    let mut cpf = 0.0;
    let mut attempts = 0.0;
    let mut calls = 0.0;
    let mut bm_sum = 0.0;
    let mut bm_count = 0usize;
    let mut tokens = 0;
    for r in records {
        se += f64::from(u8::from(r.se));
        sg += f64::from(u8::from(r.sg));
        cpf += r.cpf;
        attempts += f64::from(r.attempts);
        calls += f64::from(r.generator_calls);
        tokens += r.tokens;
        if let Some(bm) = r.bm {
            bm_sum += bm;
            bm_count += 1;
        }
    }
    Ok(DatasetMetrics {
        n: records.len(),
        se: se / n,
        sg: sg / n,
        cpf: cpf / n,
        bm: (bm_count > 0).then(|| bm_sum / bm_count as f64),
        bm_excluded: records.len() - bm_count,
        attempts_mean: attempts / n,
        generator_calls_mean: calls / n,
        tokens_total: tokens,
    })
}

/// Fraction of tasks whose first success came within `k` attempts.
pub fn pass_at_k(records: &[TaskRecord], k: u32) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = records.iter().filter(|r| r.first_success_attempt.is_some_and(|a| a <= k)).count();
    hits as f64 / records.len() as f64
}

/// `pass_at_k` for k = 1..=k_max.
pub fn pass_at_k_curve(records: &[TaskRecord], k_max: u32) -> Vec<f64> {
    (1..=k_max).map(|k| pass_at_k(records, k)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transitions {
    pub pass_to_pass: usize,
    pub pass_to_fail: usize,
    pub fail_to_pass: usize,
    pub fail_to_fail: usize,
}

impl Transitions {
    pub fn total(&self) -> usize {
        self.pass_to_pass + self.pass_to_fail + self.fail_to_pass + self.fail_to_fail
    }
}

/// Join baseline and post records on task id and count SG changes.
pub fn transitions(baseline: &[TaskRecord], post: &[TaskRecord]) -> Result<Transitions, MetricsError> {
    let base: BTreeMap<&str, bool> = baseline.iter().map(|r| (r.task_id.as_str(), r.sg)).collect();
    let after: BTreeMap<&str, bool> = post.iter().map(|r| (r.task_id.as_str(), r.sg)).collect();
    if base.len() != baseline.len() || after.len() != post.len() || !base.keys().eq(after.keys()) {
        return Err(MetricsError::IdMismatch);
    }
    let mut t = Transitions::default();
    for (id, &b) in &base {
        match (b, after[id]) {
            (true, true) => t.pass_to_pass += 1,
            (true, false) => t.pass_to_fail += 1,
            (false, true) => t.fail_to_pass += 1,
            (false, false) => t.fail_to_fail += 1,
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundComposition {
    pub round: u32,
    /// Code-level error counts (excluded categories dropped).
    pub counts: BTreeMap<ErrorCategory, usize>,
    pub fractions: BTreeMap<ErrorCategory, f64>,
    pub excluded: usize,
}

/// Per-round error composition over every failed attempt. Excluded
/// categories are left out of the denominators; rounds without any counted
/// error are omitted.
pub fn error_composition(rounds: &[(u32, Vec<TaskRecord>)]) -> Vec<RoundComposition> {
    rounds
        .iter()
        .filter_map(|(round, records)| {
            let mut counts: BTreeMap<ErrorCategory, usize> = BTreeMap::new();
            let mut excluded = 0;
            for cat in records.iter().flat_map(TaskRecord::failed_categories) {
                if cat.is_excluded() {
                    excluded += 1;
                } else {
                    *counts.entry(cat).or_default() += 1;
                }
            }
            let total: usize = counts.values().sum();
            if total == 0 {
                return None;
            }
            let fractions = counts.iter().map(|(&c, &n)| (c, n as f64 / total as f64)).collect();
            Some(RoundComposition { round: *round, counts, fractions, excluded })
        })
        .collect()
}

/// Task ids present in both sets (used to check split hygiene).
pub fn shared_task_ids<'a>(a: &'a [TaskRecord], b: &[TaskRecord]) -> BTreeSet<&'a str> {
    let other: BTreeSet<&str> = b.iter().map(|r| r.task_id.as_str()).collect();
    a.iter().map(|r| r.task_id.as_str()).filter(|id| other.contains(id)).collect()
}

/// Table row `SG / SE / CPF / BM / Attempts`, e.g.
/// `74.0% / 100.0% / 0.870 / -2.281 / 2.30`.
pub fn format_table1_row(m: &DatasetMetrics) -> String {
    let bm = m.bm.map_or_else(|| "n/a".to_string(), |b| format!("{b:.3}"));
    format!("{:.1}% / {:.1}% / {:.3} / {bm} / {:.2}", 100.0 * m.sg, 100.0 * m.se, m.cpf, m.attempts_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskspec::{Family, TemplateId};

    pub(crate) fn rec(id: &str, sg: bool, se: bool, cpf: f64, attempts: u32) -> TaskRecord {
        TaskRecord {
            task_id: id.into(),
            template: TemplateId::new(Family::G1, 'a'),
            sg,
            se,
            cpf,
            bm: se.then_some(if sg { 0.1 } else { -0.5 }),
            attempts,
            error_category: None,
            first_success_attempt: sg.then_some(attempts),
            best: None,
            candidates: vec![],
            generator_calls: attempts,
            tokens: 0,
        }
    }

    #[test]
    fn sg_se_gap() {
        let rs = vec![
            rec("a", true, true, 1.0, 1),
            rec("b", true, true, 1.0, 1),
            rec("c", false, true, 0.5, 10),
            rec("d", false, false, 0.0, 10),
        ];
        let m = aggregate(&rs).unwrap();
        assert_eq!(m.sg, 0.5);
        assert_eq!(m.se, 0.75);
        assert_eq!(m.bm_excluded, 1);
        assert_eq!(aggregate(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn cpf_mean() {
        let rs = vec![rec("a", true, true, 1.0, 1), rec("b", false, true, 0.5, 1), rec("c", false, true, 0.0, 1)];
        assert_eq!(aggregate(&rs).unwrap().cpf, 0.5);
    }

    #[test]
    fn table_row_shape() {
        let m = DatasetMetrics {
            n: 50,
            se: 1.0,
            sg: 0.74,
            cpf: 0.87,
            bm: Some(-2.281),
            bm_excluded: 0,
            attempts_mean: 2.3,
            generator_calls_mean: 2.3,
            tokens_total: 0,
        };
        assert_eq!(format_table1_row(&m), "74.0% / 100.0% / 0.870 / -2.281 / 2.30");
    }

    #[test]
    fn pass_at_k_examples() {
        let rs = vec![rec("a", true, true, 1.0, 1), rec("b", true, true, 1.0, 3), rec("c", false, true, 0.5, 10)];
        assert_eq!(pass_at_k(&rs, 1), 1.0 / 3.0);
        assert_eq!(pass_at_k(&rs, 3), 2.0 / 3.0);
        assert_eq!(pass_at_k(&rs, 10), aggregate(&rs).unwrap().sg);
    }

    #[test]
    fn transition_counts() {
        let base = vec![rec("a", true, true, 1.0, 1), rec("b", false, true, 0.5, 10), rec("c", false, true, 0.5, 10)];
        let post = vec![rec("a", true, true, 1.0, 1), rec("b", true, true, 1.0, 2), rec("c", false, true, 0.5, 10)];
        let t = transitions(&base, &post).unwrap();
        assert_eq!((t.pass_to_pass, t.pass_to_fail, t.fail_to_pass, t.fail_to_fail), (1, 0, 1, 1));
        let same = transitions(&base, &base).unwrap();
        assert_eq!(same.pass_to_fail + same.fail_to_pass, 0);
        assert_eq!(transitions(&base, &post[..2]), Err(MetricsError::IdMismatch));
    }
}
