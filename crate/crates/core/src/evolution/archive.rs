//! On-disk skill archive.
//!
//! ```text
//! <root>/iterN_subM/.agents/skills/learning-context/SKILL.md
//! <root>/iterN_subM/codegen/iter_K/.agents/skills/learning-context/{SKILL.md, reference/*.md}
//! <root>/iterN_subM/{train,validation}_rollouts.jsonl
//! <root>/meta_agent/skills/learning-context-iterN/SKILL.md
//! ```
//!
//! Every write replaces the file in place, so re-archiving is idempotent.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::skill::{SkillSet, SkillVersion, SKILL_NAME};
use crate::harness::{write_jsonl, TaskRecord};

/// Static reference documents shipped with every rollout package.
pub const REFERENCE_FILES: [(&str, &str); 9] = [
    (
        "setup.md",
        "# Setup\n\nLengths are in micrometres and angles in degrees. The superstrate, layers and substrate \
         are read from the task query. A plan is a JSON object with `init`, `optimizer`, `loss_terms` and \
         `projection`.\n",
    ),
    (
        "materials_and_layers.md",
        "# Materials and layers\n\nLayers are listed from the superstrate side. Each layer has a complex \
         index `n + ik` with `k >= 0` and a nonnegative thickness. Design parameters overwrite either a \
         layer thickness or the real part of a layer index.\n",
    ),
    (
        "patterning.md",
        "# Patterning\n\nStacks are laterally uniform. Patterned layers are not modelled; a grating-like \
         response has to come from the layer sequence alone.\n",
    ),
    (
        "sources_and_solving.md",
        "# Sources and solving\n\nEach source is an (angle, polarization) pair. The solver returns total \
         reflection, total transmission and the zero-order transmitted amplitude for every wavelength and \
         source referenced by a criterion. Angles must lie in `[0, 90)` degrees.\n",
    ),
    (
        "phase_and_orders.md",
        "# Phase and orders\n\nThe transmitted phase is the argument of the zero-order amplitude, reported \
         in degrees on `[0, 360)`. Phase targets are matched by the shortest distance on the circle, so \
         355 and 5 degrees are 10 degrees apart.\n",
    ),
    (
        "amplitude_and_efficiency.md",
        "# Amplitude and efficiency\n\nTotal transmission is normalized by the substrate admittance, so \
         `R + T = 1` for lossless stacks. Absorbing layers make `R + T < 1`.\n",
    ),
    (
        "optimization.md",
        "# Optimization\n\nParameters are optimized in unit-box coordinates and projected onto the bounds \
         after every step. Supported methods are `gd` and `adam`. Each hinge term is `max(0, -margin / \
         scale)` and the loss is their weighted sum. Restarts draw fresh random initial points; the best \
         trajectory by final loss is kept.\n",
    ),
    (
        "pitfalls.md",
        "# Pitfalls\n\n- Loss terms must reference existing criteria.\n- The learning rate must be finite \
         and positive.\n- Explicit initial points must lie inside the bounds.\n- Penalties that diverge on \
         a bound produce non-finite gradients.\n",
    ),
    (
        "context_usage.md",
        "# Context usage\n\nRead `SKILL.md` first. Consult these references only when a query or an \
         execution error calls for detail.\n",
    ),
];

pub fn iteration_dir(root: &Path, version: SkillVersion) -> PathBuf {
    root.join(version.id())
}

fn skill_dir(base: &Path) -> PathBuf {
    base.join(".agents").join("skills").join(SKILL_NAME)
}

fn write_if_changed(path: &Path, contents: &str) -> io::Result<()> {
    if fs::read(path).is_ok_and(|old| old == contents.as_bytes()) {
        return Ok(());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)
}

/// Canonical skill file of a sub-iteration.
pub fn write_canonical(root: &Path, skill: &SkillSet) -> io::Result<PathBuf> {
    let path = skill_dir(&iteration_dir(root, skill.version)).join("SKILL.md");
    write_if_changed(&path, &skill.markdown_body)?;
    Ok(path)
}

/// Materialize the package used by rollout sample `k`.
pub fn write_rollout_package(root: &Path, skill: &SkillSet, k: usize) -> io::Result<PathBuf> {
    let dir = skill_dir(&iteration_dir(root, skill.version).join("codegen").join(format!("iter_{k}")));
    write_if_changed(&dir.join("SKILL.md"), &skill.markdown_body)?;
    for (name, body) in REFERENCE_FILES {
        write_if_changed(&dir.join("reference").join(name), body)?;
    }
    Ok(dir)
}

/// Canonical skill, one package per rollout, and the rollout log under
/// `log_name`.
pub fn write_sub_iteration(root: &Path, skill: &SkillSet, records: &[TaskRecord], log_name: &str) -> io::Result<PathBuf> {
    write_canonical(root, skill)?;
    for k in 0..records.len() {
        write_rollout_package(root, skill, k)?;
    }
    let dir = iteration_dir(root, skill.version);
    write_jsonl(&dir.join(log_name), records)?;
    Ok(dir)
}

/// Snapshot the skill chosen at the end of `iteration`.
pub fn archive_skill(root: &Path, skill: &SkillSet, iteration: u32) -> io::Result<PathBuf> {
    let path = root
        .join("meta_agent")
        .join("skills")
        .join(format!("{SKILL_NAME}-iter{iteration}"))
        .join("SKILL.md");
    write_if_changed(&path, &skill.markdown_body)?;
    Ok(path)
}
