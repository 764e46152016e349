//! Balanced train / validation / test splits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::families::generate_certified;
use super::json::{parse_task_value, task_to_value};
use super::{Family, TaskError, TaskSpec, TemplateId};
use crate::util::derive_seed;

pub const TRAIN_SIZE: usize = 50;
pub const VALIDATION_SIZE: usize = 15;
pub const TEST_SIZE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Iid,
    Ood,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Iid => "iid",
            Setting::Ood => "ood",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "iid" => Ok(Setting::Iid),
            "ood" => Ok(Setting::Ood),
            _ => Err(format!("unknown setting `{s}` (expected iid or ood)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }

    pub fn size(self) -> usize {
        match self {
            SplitName::Train => TRAIN_SIZE,
            SplitName::Validation => VALIDATION_SIZE,
            SplitName::Test => TEST_SIZE,
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SplitName::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown split `{s}`"))
    }
}

const fn t(family: Family, variant: char) -> TemplateId {
    TemplateId::new(family, variant)
}

/// Templates making up a split, in assignment order.
pub fn split_templates(setting: Setting, split: SplitName) -> Vec<TemplateId> {
    use Family::*;
    match (setting, split) {
        (Setting::Iid, SplitName::Train) => [G1, G2, G3, G4, G5, G6].map(|f| t(f, 'a')).to_vec(),
        (Setting::Iid, SplitName::Validation) => vec![t(G1, 'b'), t(Gaux, 'a')],
        (Setting::Iid, SplitName::Test) => [G2, G3, G4, G5, G6].map(|f| t(f, 'b')).to_vec(),
        (Setting::Ood, SplitName::Train) => both(&[G1, G2, G3]),
        (Setting::Ood, SplitName::Validation) => both(&[G4]),
        (Setting::Ood, SplitName::Test) => both(&[G5, G6, Gaux]),
    }
}

fn both(families: &[Family]) -> Vec<TemplateId> {
    families.iter().flat_map(|&f| [t(f, 'a'), t(f, 'b')]).collect()
}

/// Split `total` over `k` templates: each gets the floor share, and the
/// remainder goes one each to the lowest template indices.
pub fn template_counts(total: usize, k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let (base, extra) = (total / k, total % k);
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub setting: Setting,
    pub seed: u64,
    pub train: Vec<TaskSpec>,
    pub validation: Vec<TaskSpec>,
    pub test: Vec<TaskSpec>,
}

impl SplitSet {
    pub fn split(&self, name: SplitName) -> &[TaskSpec] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn to_manifest(&self) -> SplitManifest {
        let ids = |tasks: &[TaskSpec]| tasks.iter().map(|t| t.task_id.clone()).collect();
        let tasks = SplitName::ALL
            .iter()
            .flat_map(|&n| self.split(n))
            .map(|t| (t.task_id.clone(), task_to_value(t)))
            .collect();
        SplitManifest {
            setting: self.setting,
            seed: self.seed,
            train: ids(&self.train),
            validation: ids(&self.validation),
            test: ids(&self.test),
            tasks,
        }
    }
}

/// Serialized form of a [`SplitSet`]: task ids per split plus the task
/// files keyed by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub setting: Setting,
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub tasks: BTreeMap<String, serde_json::Value>,
}

impl SplitManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TaskError> {
        serde_json::from_str(text).map_err(|e| TaskError::MalformedJson(e.to_string()))
    }

    /// Rebuild the split set; every listed id must have an embedded task.
    pub fn to_split_set(&self) -> Result<SplitSet, TaskError> {
        let load = |ids: &[String]| -> Result<Vec<TaskSpec>, TaskError> {
            ids.iter()
                .map(|id| {
                    let value = self
                        .tasks
                        .get(id)
                        .ok_or_else(|| TaskError::MalformedJson(format!("manifest lists `{id}` without a task")))?;
                    let mut task = parse_task_value(value.clone())?;
                    task.task_id = id.clone();
                    Ok(task)
                })
                .collect()
        };
        Ok(SplitSet {
            setting: self.setting,
            seed: self.seed,
            train: load(&self.train)?,
            validation: load(&self.validation)?,
            test: load(&self.test)?,
        })
    }
}

/// Generate the three splits. Each task is drawn from its own seeded stream,
/// so the result depends only on `(setting, seed)`.
pub fn build_splits(setting: Setting, seed: u64) -> Result<SplitSet, TaskError> {
    let mut out: Vec<Vec<TaskSpec>> = Vec::new();
    for split in SplitName::ALL {
        let templates = split_templates(setting, split);
        let counts = template_counts(split.size(), templates.len());
        let jobs: Vec<(TemplateId, usize)> =
            templates.iter().zip(&counts).flat_map(|(&tpl, &n)| (0..n).map(move |i| (tpl, i))).collect();
        let tasks = jobs
            .par_iter()
            .map(|&(tpl, i)| {
                let label = format!("{setting}/{split}/{tpl}/{i}");
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &label));
                let id = format!("{setting}-{split}-{tpl}-{i:02}");
                generate_certified(tpl, &mut rng, &id).map(|c| c.task)
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(tasks);
    }
    let test = out.pop().unwrap_or_default();
    let validation = out.pop().unwrap_or_default();
    let train = out.pop().unwrap_or_default();
    Ok(SplitSet { setting, seed, train, validation, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_floor_ceil_with_low_index_extras() {
        assert_eq!(template_counts(50, 6), vec![9, 9, 8, 8, 8, 8]);
        assert_eq!(template_counts(15, 2), vec![8, 7]);
        assert_eq!(template_counts(50, 5), vec![10; 5]);
        assert_eq!(template_counts(50, 6).iter().sum::<usize>(), 50);
    }

    #[test]
    fn ood_families_are_disjoint() {
        let fams = |s| split_templates(Setting::Ood, s).into_iter().map(|t| t.family).collect::<Vec<_>>();
        let (tr, va, te) = (fams(SplitName::Train), fams(SplitName::Validation), fams(SplitName::Test));
        assert!(tr.iter().all(|f| !va.contains(f) && !te.contains(f)));
        assert!(va.iter().all(|f| !te.contains(f)));
        assert!(va.iter().all(|&f| f == Family::G4));
    }

    #[test]
    fn iid_validation_and_test_hold_out_siblings() {
        let train = split_templates(Setting::Iid, SplitName::Train);
        for s in [SplitName::Validation, SplitName::Test] {
            assert!(split_templates(Setting::Iid, s).iter().all(|t| !train.contains(t)));
        }
    }
}
