//! Thin-film analogs of the benchmark families and instance generation.
//!
//! | family | stack | criteria |
//! |--------|-------|----------|
//! | G1 | one high-index layer | `R >= t` |
//! | G2 | one high-index layer, two angles | `R(th1) >= t`, `R(th2) >= t` |
//! | G3 | high/low pair at oblique incidence | `R_TE >= hi`, `R_TM <= lo` |
//! | G4 | high/low pair, two wavelengths | `R(l1) >= t`, `R(l2) >= t` |
//! | G5 | dielectric over absorbing metal | `R >= t` |
//! | G6 | two high-index mid-IR layers | `T >= t`, phase within tolerance |
//! | Gaux | visible pair with a free index | same as G6 |
//!
//! Every emitted task carries a certificate: a design point where all raw
//! margins are nonnegative. Reflective families are certified by a grid
//! search over the design space; phase families take their targets from the
//! response at a random design point. Draws whose design-space midpoint
//! satisfies every criterion, or misses its worst criterion by less than
//! [`MIN_MIDPOINT_DEFICIT`], are rejected.

use num_complex::Complex64;
use rand::Rng;

use super::query::render_query;
use super::{
    Component, Criterion, CriterionParams, DesignParam, DesignSpace, Family, Metric, PhysicalContext, TaskError,
    TaskSpec, TemplateId,
};
use crate::criteria::{evaluate_task, CriteriaReport, ResponseSet};
use crate::physics::{build_stack, solve_stack, Polarization};
use crate::util::{round1, round4};

/// Maximum number of draws before giving up on a template.
pub const MAX_DRAWS: usize = 400;

/// Maximum grid size used by the feasibility oracle.
pub const GRID_POINTS: usize = 10_000;

/// Smallest normalized shortfall of the worst criterion at the midpoint.
pub const MIN_MIDPOINT_DEFICIT: f64 = 0.25;

const SYNTHETIC_REFERENCE: &str = "synthetic thin-film analog";

/// Sampling ranges for one sibling template.
#[derive(Debug, Clone, Copy)]
pub struct TemplateRanges {
    pub wavelength_um: (f64, f64),
    pub thickness_um: (f64, f64),
    pub high_index: (f64, f64),
    pub angle_deg: (f64, f64),
}

impl TemplateRanges {
    pub fn for_template(t: TemplateId) -> Self {
        let b = t.variant != 'a';
        match (t.family, b) {
            (Family::G1 | Family::G2 | Family::G5, false) => {
                TemplateRanges { wavelength_um: (0.55, 0.70), thickness_um: (0.02, 0.30), high_index: (4.2, 6.0), angle_deg: (5.0, 15.0) }
            }
            (Family::G1 | Family::G2 | Family::G5, true) => {
                TemplateRanges { wavelength_um: (0.75, 0.95), thickness_um: (0.03, 0.40), high_index: (3.8, 5.5), angle_deg: (20.0, 35.0) }
            }
            (Family::G3 | Family::G4, false) => {
                TemplateRanges { wavelength_um: (0.50, 0.62), thickness_um: (0.02, 0.30), high_index: (3.5, 5.0), angle_deg: (45.0, 65.0) }
            }
            (Family::G3 | Family::G4, true) => {
                TemplateRanges { wavelength_um: (0.70, 0.85), thickness_um: (0.03, 0.40), high_index: (3.5, 5.0), angle_deg: (60.0, 75.0) }
            }
            (Family::G6, false) => {
                TemplateRanges { wavelength_um: (4.5, 5.5), thickness_um: (0.05, 0.45), high_index: (4.3, 4.7), angle_deg: (0.0, 0.0) }
            }
            (Family::G6, true) => {
                TemplateRanges { wavelength_um: (3.0, 4.0), thickness_um: (0.04, 0.35), high_index: (4.3, 4.7), angle_deg: (0.0, 0.0) }
            }
            (Family::Gaux, false) => {
                TemplateRanges { wavelength_um: (0.45, 0.60), thickness_um: (0.02, 0.25), high_index: (2.0, 2.6), angle_deg: (0.0, 0.0) }
            }
            (Family::Gaux, true) => {
                TemplateRanges { wavelength_um: (0.60, 0.75), thickness_um: (0.03, 0.30), high_index: (2.0, 2.6), angle_deg: (0.0, 0.0) }
            }
        }
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        round4(rng.gen_range(lo..=hi))
    }
}

fn real(n: f64) -> Complex64 {
    Complex64::new(n, 0.0)
}

fn sourced(wavelength_index: usize, source_index: usize) -> CriterionParams {
    CriterionParams { wavelength_index, source_index: Some(source_index), component: None }
}

/// Result of the grid feasibility search.
#[derive(Debug, Clone)]
pub struct GridOracle {
    pub points_evaluated: usize,
    pub feasible_points: usize,
    pub best_point: Vec<f64>,
    pub best_report: CriteriaReport,
}

/// Evaluate a task at one design point. Solver failures count as infeasible.
pub fn evaluate_at(task: &TaskSpec, point: &[f64]) -> Option<CriteriaReport> {
    let ctx = &task.physical_context;
    let stack = build_stack(ctx, &task.design_space, point);
    let sources = ctx.sources();
    let mut responses = ResponseSet::new();
    for key in task.response_keys() {
        let src = sources.get(key.source_index)?;
        let wl = *ctx.wavelengths_um.get(key.wavelength_index)?;
        let resp = solve_stack(&stack, wl, src.angle_deg, src.polarization).ok()?;
        responses.insert(key, resp);
    }
    evaluate_task(task, &responses).ok()
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
}

/// Brute-force the design space on a regular grid of at most `max_points`
/// points, tracking the point with the highest best margin.
pub fn grid_oracle(task: &TaskSpec, max_points: usize) -> Option<GridOracle> {
    let d = task.design_space.dim();
    let per_dim = match d {
        0 => return None,
        1 => max_points.min(400),
        _ => ((max_points as f64).powf(1.0 / d as f64).floor() as usize).max(2),
    };
    let axes: Vec<Vec<f64>> =
        task.design_space.params.iter().map(|p| linspace(p.lower_bound, p.upper_bound, per_dim).collect()).collect();
    let mut idx = vec![0usize; d];
    let mut best: Option<(Vec<f64>, CriteriaReport)> = None;
    let mut evaluated = 0;
    let mut feasible = 0;
    loop {
        let point: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
        evaluated += 1;
        if let Some(report) = evaluate_at(task, &point) {
            if report.sg {
                feasible += 1;
            }
            if best.as_ref().is_none_or(|(_, b)| report.bm > b.bm) {
                best = Some((point, report));
            }
        }
        let mut k = 0;
        loop {
            if k == d {
                let (best_point, best_report) = best?;
                return Some(GridOracle { points_evaluated: evaluated, feasible_points: feasible, best_point, best_report });
            }
            idx[k] += 1;
            if idx[k] < per_dim {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

struct Draft {
    ctx: PhysicalContext,
    space: DesignSpace,
    criteria: Vec<Criterion>,
    /// Certificate point for families whose targets come from a response.
    anchor: Option<Vec<f64>>,
}

fn finish(template: TemplateId, draft: &Draft, task_id: &str) -> TaskSpec {
    TaskSpec {
        task_id: task_id.to_string(),
        template,
        query: render_query(template, &draft.ctx, &draft.space, &draft.criteria),
        physical_context: draft.ctx.clone(),
        design_space: draft.space.clone(),
        criteria: draft.criteria.clone(),
        reference: SYNTHETIC_REFERENCE.to_string(),
    }
}

fn reflective_context(wavelengths: Vec<f64>, angles: Vec<f64>, pols: Vec<Polarization>, layers: Vec<Complex64>, substrate: f64) -> PhysicalContext {
    PhysicalContext {
        wavelengths_um: wavelengths,
        incidence_angles_deg: angles,
        polarizations: pols,
        superstrate_index: real(1.0),
        substrate_index: real(substrate),
        fixed_layer_indices: layers,
    }
}

fn draft_reflective<R: Rng + ?Sized>(template: TemplateId, rng: &mut R) -> Draft {
    let r = TemplateRanges::for_template(template);
    let (t_lo, t_hi) = r.thickness_um;
    let substrate = draw(rng, (1.30, 1.50));
    let wl = draw(rng, r.wavelength_um);
    match template.family {
        Family::G1 | Family::G2 => {
            let n_h = draw(rng, r.high_index);
            let (angles, criteria) = if template.family == Family::G1 {
                let target = draw(rng, (0.6, 0.9));
                (vec![0.0], vec![Criterion::at_least(Metric::TotalReflection, CriterionParams::at(0), target)])
            } else {
                let angle = round1(rng.gen_range(r.angle_deg.0..=r.angle_deg.1));
                let target = draw(rng, (0.55, 0.85));
                (
                    vec![0.0, angle],
                    vec![
                        Criterion::at_least(Metric::TotalReflection, sourced(0, 0), target),
                        Criterion::at_least(Metric::TotalReflection, sourced(0, 1), target),
                    ],
                )
            };
            Draft {
                ctx: reflective_context(vec![wl], angles, vec![Polarization::TE], vec![real(n_h)], substrate),
                space: DesignSpace { params: vec![DesignParam::thickness(0, t_lo, t_hi)] },
                criteria,
                anchor: None,
            }
        }
        Family::G3 => {
            let n_h = draw(rng, r.high_index);
            let n_l = draw(rng, (1.35, 1.60));
            let angle = round1(rng.gen_range(r.angle_deg.0..=r.angle_deg.1));
            let hi = draw(rng, (0.5, 0.85));
            let lo = draw(rng, (0.05, 0.30));
            Draft {
                ctx: reflective_context(
                    vec![wl],
                    vec![angle],
                    vec![Polarization::TE, Polarization::TM],
                    vec![real(n_h), real(n_l)],
                    substrate,
                ),
                space: DesignSpace {
                    params: vec![DesignParam::thickness(0, t_lo, t_hi), DesignParam::thickness(1, t_lo, t_hi)],
                },
                criteria: vec![
                    Criterion::at_least(Metric::TotalReflection, sourced(0, 0), hi),
                    Criterion::at_most(Metric::TotalReflection, sourced(0, 1), lo),
                ],
                anchor: None,
            }
        }
        Family::G4 => {
            let n_h = draw(rng, r.high_index);
            let n_l = draw(rng, (1.35, 1.60));
            let wl2 = round4(wl * rng.gen_range(1.15..=1.35));
            let target = draw(rng, (0.5, 0.8));
            Draft {
                ctx: reflective_context(vec![wl, wl2], vec![0.0], vec![Polarization::TE], vec![real(n_h), real(n_l)], substrate),
                space: DesignSpace {
                    params: vec![DesignParam::thickness(0, t_lo, t_hi), DesignParam::thickness(1, t_lo, t_hi)],
                },
                criteria: vec![
                    Criterion::at_least(Metric::TotalReflection, CriterionParams::at(0), target),
                    Criterion::at_least(Metric::TotalReflection, CriterionParams::at(1), target),
                ],
                anchor: None,
            }
        }
        Family::G5 => {
            let n_d = draw(rng, (1.4, 2.2));
            let metal = Complex64::new(draw(rng, (0.1, 1.4)), draw(rng, (3.0, 8.0)));
            let target = draw(rng, (0.6, 0.9));
            Draft {
                ctx: reflective_context(vec![wl], vec![0.0], vec![Polarization::TE], vec![real(n_d), metal], substrate),
                space: DesignSpace {
                    params: vec![DesignParam::thickness(0, 0.01, 0.20), DesignParam::thickness(1, 0.005, 0.06)],
                },
                criteria: vec![Criterion::at_least(Metric::TotalReflection, CriterionParams::at(0), target)],
                anchor: None,
            }
        }
        Family::G6 | Family::Gaux => unreachable!("phase families use draft_phase"),
    }
}

fn draft_phase<R: Rng + ?Sized>(template: TemplateId, rng: &mut R) -> Option<Draft> {
    let r = TemplateRanges::for_template(template);
    let (t_lo, t_hi) = r.thickness_um;
    let wl = draw(rng, r.wavelength_um);
    let (ctx, space, component) = if template.family == Family::G6 {
        let n1 = draw(rng, r.high_index);
        let n2 = Complex64::new(draw(rng, (5.0, 6.0)), draw(rng, (0.0, 0.01)));
        let substrate = draw(rng, (1.25, 1.50));
        let (pol, component) = if template.variant == 'a' { (Polarization::TM, Component::X) } else { (Polarization::TE, Component::Y) };
        (
            PhysicalContext {
                wavelengths_um: vec![wl],
                incidence_angles_deg: vec![0.0],
                polarizations: vec![pol],
                superstrate_index: real(1.0),
                substrate_index: real(substrate),
                fixed_layer_indices: vec![real(n1), n2],
            },
            DesignSpace { params: vec![DesignParam::thickness(0, t_lo, t_hi), DesignParam::thickness(1, t_lo, t_hi)] },
            component,
        )
    } else {
        let nominal = round4(0.5 * (r.high_index.0 + r.high_index.1));
        let low = draw(rng, (1.38, 1.50));
        let substrate = draw(rng, (1.45, 1.52));
        (
            PhysicalContext {
                wavelengths_um: vec![wl],
                incidence_angles_deg: vec![0.0],
                polarizations: vec![Polarization::TE],
                superstrate_index: real(1.0),
                substrate_index: real(substrate),
                fixed_layer_indices: vec![real(nominal), real(low)],
            },
            DesignSpace {
                params: vec![
                    DesignParam::thickness(0, t_lo, t_hi),
                    DesignParam::index(0, r.high_index.0, r.high_index.1),
                    DesignParam::thickness(1, t_lo, t_hi),
                ],
            },
            Component::Y,
        )
    };

    let anchor: Vec<f64> = space.params.iter().map(|p| rng.gen_range(p.lower_bound..=p.upper_bound)).collect();
    let stack = build_stack(&ctx, &space, &anchor);
    let resp = solve_stack(&stack, wl, 0.0, ctx.polarizations[0]).ok()?;
    let t_target = round4(resp.transmission * rng.gen_range(0.85..=0.97));
    let mut phase_target = round4(resp.phase_deg()?);
    if phase_target >= 360.0 {
        phase_target = 0.0;
    }
    let tolerance = round1(rng.gen_range(2.0..=8.0));
    let phase_params = CriterionParams { wavelength_index: 0, source_index: None, component: Some(component) };
    Some(Draft {
        ctx,
        space,
        criteria: vec![
            Criterion::at_least(Metric::TotalTransmission, CriterionParams::at(0), t_target),
            Criterion::close_to(Metric::TransmissionPhaseDeg, phase_params, phase_target, tolerance),
        ],
        anchor: Some(anchor),
    })
}

/// A generated task together with a design point that satisfies it.
#[derive(Debug, Clone)]
pub struct CertifiedTask {
    pub task: TaskSpec,
    pub certificate: Vec<f64>,
    pub certificate_report: CriteriaReport,
}

/// Draw one feasible, non-trivial instance of `template`.
pub fn generate_certified<R: Rng + ?Sized>(template: TemplateId, rng: &mut R, task_id: &str) -> Result<CertifiedTask, TaskError> {
    for _ in 0..MAX_DRAWS {
        let draft = match template.family {
            Family::G6 | Family::Gaux => match draft_phase(template, rng) {
                Some(d) => d,
                None => continue,
            },
            _ => draft_reflective(template, rng),
        };
        let task = finish(template, &draft, task_id);
        if task.validate_shape().is_err() {
            continue;
        }
        match evaluate_at(&task, &task.design_space.midpoint()) {
            Some(mid) if mid.bm <= -MIN_MIDPOINT_DEFICIT => {}
            _ => continue,
        }
        let certificate = match &draft.anchor {
            Some(anchor) => evaluate_at(&task, anchor).filter(|r| r.sg).map(|r| (anchor.clone(), r)),
            None => grid_oracle(&task, GRID_POINTS).filter(|o| o.best_report.sg).map(|o| (o.best_point, o.best_report)),
        };
        if let Some((certificate, certificate_report)) = certificate {
            return Ok(CertifiedTask { task, certificate, certificate_report });
        }
    }
    Err(TaskError::InfeasibleDraw { template, attempts: MAX_DRAWS })
}

pub fn generate_template_instance<R: Rng + ?Sized>(template: TemplateId, rng: &mut R) -> Result<TaskSpec, TaskError> {
    generate_certified(template, rng, &format!("{template}-generated")).map(|c| c.task)
}

/// Draw an instance of the family's first sibling template.
pub fn generate_family_instance<R: Rng + ?Sized>(family: Family, rng: &mut R) -> Result<TaskSpec, TaskError> {
    generate_template_instance(TemplateId::new(family, 'a'), rng)
}
