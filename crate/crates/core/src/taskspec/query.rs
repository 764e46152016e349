//! Query text carries the physical context and design space.
//!
//! Generated tasks render a canonical query; the parser also accepts the
//! looser phrasing of hand-written task files (`substrate n=1.363`,
//! `layer n=2.436, k=0.000`, `two angles (0 deg and 5.0 deg)`, ...).

use std::sync::OnceLock;

use num_complex::Complex64;
use regex::Regex;

use super::{
    Criterion, DesignParam, DesignSpace, Family, Operation, PhysicalContext, TaskError, TemplateId,
};
use crate::physics::Polarization;
use crate::util::round4;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryContext {
    pub template: TemplateId,
    pub physical_context: PhysicalContext,
    pub design_space: DesignSpace,
}

const NUM: &str = r"-?[0-9]+(?:\.[0-9]+)?(?:[eE]-?[0-9]+)?";

fn re(cell: &'static OnceLock<Regex>, pattern: impl FnOnce() -> String) -> &'static Regex {
    cell.get_or_init(|| Regex::new(&pattern()).expect("valid regex"))
}

fn template_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, || r"\(template (G[1-6]|Gaux)-([a-z])\)".to_string())
}

fn index_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, || format!(r"(?:^|[^A-Za-z0-9_])n=({NUM})(?:,\s*k=({NUM}))?"))
}

fn pol_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, || r"\b(TE|TM)\b".to_string())
}

fn angles_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, || format!(r"angles? \(({NUM} deg[^)]*)\)"))
}

fn deg_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, || format!(r"({NUM}) deg"))
}

fn param_re() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, || format!(r"\b(thickness|index)_([0-9]+) in \[({NUM}), ({NUM})\]"))
}

fn headline(family: Family) -> &'static str {
    match family {
        Family::G1 => "Design a single-layer thin-film reflector",
        Family::G2 => "Design a single-layer thin-film reflector for two incidence angles",
        Family::G3 => "Design a polarization-selective thin-film reflector",
        Family::G4 => "Design a dual-wavelength thin-film reflector",
        Family::G5 => "Design a plasmonic thin-film reflector with a metallic layer",
        Family::G6 => "Design a transmissive phase-target thin-film stack",
        Family::Gaux => "Design a visible-band transmissive phase-target thin-film stack",
    }
}

fn fmt_index(n: Complex64) -> String {
    format!("n={}, k={}", n.re, n.im)
}

fn join_and(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        _ => format!("{} and {}", items[..items.len() - 1].join(", "), items[items.len() - 1]),
    }
}

/// Render the canonical query for a generated task.
pub fn render_query(
    template: TemplateId,
    ctx: &PhysicalContext,
    space: &DesignSpace,
    criteria: &[Criterion],
) -> String {
    let mut q = String::new();
    let wls: Vec<String> = ctx.wavelengths_um.iter().map(|w| format!("{w} um")).collect();
    q.push_str(&format!("{} (template {template}) at {}. ", headline(template.family), join_and(&wls)));
    q.push_str(&format!("Superstrate {}. ", fmt_index(ctx.superstrate_index)));
    let layers: Vec<String> = ctx
        .fixed_layer_indices
        .iter()
        .enumerate()
        .map(|(i, n)| format!("layer {} {}", i + 1, fmt_index(*n)))
        .collect();
    let mut layer_text = layers.join("; ");
    if let Some(first) = layer_text.get_mut(..1) {
        first.make_ascii_uppercase();
    }
    q.push_str(&format!("{layer_text}. Substrate {}. ", fmt_index(ctx.substrate_index)));

    let pols: Vec<String> = ctx.polarizations.iter().map(|p| p.as_str().to_string()).collect();
    let pol_word = if pols.len() > 1 { "polarizations" } else { "polarization" };
    q.push_str(&format!("Use {} {pol_word}", join_and(&pols)));
    if ctx.incidence_angles_deg == [0.0] {
        q.push_str(" at normal incidence. ");
    } else {
        let angles: Vec<String> = ctx.incidence_angles_deg.iter().map(|a| format!("{a} deg")).collect();
        let word = if angles.len() > 1 { "angles" } else { "angle" };
        q.push_str(&format!(" at incidence {word} ({}). ", join_and(&angles)));
    }

    let targets: Vec<String> = criteria
        .iter()
        .map(|c| {
            let mut s = format!(
                "{} {} {} at wavelength {} source {}",
                c.metric.as_str(),
                c.operation.as_str(),
                c.target,
                c.params.wavelength_index,
                c.params.source()
            );
            if let Some(tol) = c.tolerance {
                s.push_str(&format!(" within {tol}"));
            }
            s
        })
        .collect();
    q.push_str(&format!("Criteria: {}. ", targets.join("; ")));

    let params: Vec<String> = space
        .params
        .iter()
        .map(|p| format!("{} in [{}, {}] {}", p.name, p.lower_bound, p.upper_bound, p.unit))
        .collect();
    q.push_str(&format!("Design parameters: {}.", params.join("; ")));
    q
}

fn num(s: &str) -> Result<f64, TaskError> {
    s.parse::<f64>().map_err(|_| TaskError::InvalidContext(format!("bad number `{s}`")))
}

fn infer_family(query: &str, wavelengths: &[f64], criteria: &[Criterion]) -> Family {
    let lower = query.to_ascii_lowercase();
    if lower.contains("polygon") {
        Family::Gaux
    } else if lower.contains("plasmonic") {
        Family::G5
    } else if criteria.iter().any(|c| c.metric.is_phase()) {
        Family::G6
    } else if wavelengths.len() > 1 && criteria.len() > 1 {
        Family::G4
    } else if criteria.iter().any(|c| c.operation == Operation::AtMost) {
        Family::G3
    } else if criteria.len() > 1 {
        Family::G2
    } else {
        Family::G1
    }
}

/// Recover template, physical context and design space from a query.
pub fn parse_query(query: &str, wavelengths_um: &[f64], criteria: &[Criterion]) -> Result<QueryContext, TaskError> {
    let template = match template_re().captures(query) {
        Some(c) => {
            let family: Family = c[1].parse().map_err(TaskError::InvalidContext)?;
            TemplateId::new(family, c[2].chars().next().unwrap_or('a'))
        }
        None => TemplateId::new(infer_family(query, wavelengths_um, criteria), 'a'),
    };

    let mut superstrate = None;
    let mut substrate = None;
    let mut layers = Vec::new();
    let mut last_end = 0;
    for caps in index_re().captures_iter(query) {
        let whole = caps.get(0).expect("match");
        let window = query[last_end..whole.start()].to_ascii_lowercase();
        last_end = whole.end();
        let n = num(&caps[1])?;
        let k = caps.get(2).map(|m| num(m.as_str())).transpose()?.unwrap_or(0.0);
        let index = Complex64::new(n, k);
        if window.contains("superstrate") {
            superstrate = Some(index);
        } else if window.contains("substrate") {
            substrate = Some(index);
        } else {
            layers.push(index);
        }
    }
    let substrate = substrate.ok_or_else(|| TaskError::InvalidContext("query names no substrate index".into()))?;
    if layers.is_empty() {
        return Err(TaskError::InvalidContext("query names no layer index".into()));
    }

    let mut polarizations = Vec::new();
    for caps in pol_re().captures_iter(query) {
        let p = if &caps[1] == "TE" { Polarization::TE } else { Polarization::TM };
        if !polarizations.contains(&p) {
            polarizations.push(p);
        }
    }
    if polarizations.is_empty() {
        polarizations.push(Polarization::TE);
    }

    let incidence_angles_deg = match angles_re().captures(query) {
        Some(c) => {
            let angles: Vec<f64> = deg_re().captures_iter(&c[1]).map(|d| num(&d[1])).collect::<Result<_, _>>()?;
            if angles.is_empty() {
                vec![0.0]
            } else {
                angles
            }
        }
        None => vec![0.0],
    };

    let mut params = Vec::new();
    for caps in param_re().captures_iter(query) {
        let layer: usize = caps[2]
            .parse::<usize>()
            .ok()
            .and_then(|l| l.checked_sub(1))
            .ok_or_else(|| TaskError::InvalidDesignSpace(format!("bad layer number `{}`", &caps[2])))?;
        let (lo, hi) = (num(&caps[3])?, num(&caps[4])?);
        params.push(match &caps[1] {
            "thickness" => DesignParam::thickness(layer, lo, hi),
            _ => DesignParam::index(layer, lo, hi),
        });
    }
    if params.is_empty() {
        let max_wl = wavelengths_um.iter().copied().fold(0.0_f64, f64::max);
        let upper = round4(0.5 * max_wl).max(0.02);
        params = (0..layers.len()).map(|l| DesignParam::thickness(l, 0.01, upper)).collect();
    }

    Ok(QueryContext {
        template,
        physical_context: PhysicalContext {
            wavelengths_um: wavelengths_um.to_vec(),
            incidence_angles_deg,
            polarizations,
            superstrate_index: superstrate.unwrap_or(Complex64::new(1.0, 0.0)),
            substrate_index: substrate,
            fixed_layer_indices: layers,
        },
        design_space: DesignSpace { params },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskspec::{CriterionParams, Metric};

    #[test]
    fn listing_style_dual_angle_query() {
        let q = "Design a single-layer reflective grating at 0.632 um for two angles (0 deg and 5.0 deg). \
                 Use period 0.4777 um, high-index layer n=2.436, substrate n=1.363, and TE polarization.";
        let crit = vec![
            Criterion::at_least(
                Metric::TotalReflection,
                CriterionParams { wavelength_index: 0, source_index: Some(0), component: None },
                0.7,
            ),
            Criterion::at_least(
                Metric::TotalReflection,
                CriterionParams { wavelength_index: 0, source_index: Some(1), component: None },
                0.7,
            ),
        ];
        let ctx = parse_query(q, &[0.632], &crit).unwrap();
        assert_eq!(ctx.template.family, Family::G2);
        assert_eq!(ctx.physical_context.incidence_angles_deg, vec![0.0, 5.0]);
        assert_eq!(ctx.physical_context.fixed_layer_indices, vec![Complex64::new(2.436, 0.0)]);
        assert_eq!(ctx.physical_context.substrate_index, Complex64::new(1.363, 0.0));
        assert_eq!(ctx.design_space.params.len(), 1);
    }

    #[test]
    fn canonical_query_round_trips() {
        let ctx = PhysicalContext {
            wavelengths_um: vec![0.55, 0.66],
            incidence_angles_deg: vec![0.0, 12.5],
            polarizations: vec![Polarization::TE, Polarization::TM],
            superstrate_index: Complex64::new(1.0, 0.0),
            substrate_index: Complex64::new(1.4521, 0.0),
            fixed_layer_indices: vec![Complex64::new(4.1, 0.0), Complex64::new(1.3523, 7.9137)],
        };
        let space = DesignSpace {
            params: vec![
                DesignParam::thickness(0, 0.02, 0.3),
                DesignParam::index(0, 3.5, 4.5),
                DesignParam::thickness(1, 0.005, 0.08),
            ],
        };
        let crit = vec![Criterion::at_least(Metric::TotalReflection, CriterionParams::at(1), 0.7)];
        let template = TemplateId::new(Family::G5, 'b');
        let q = render_query(template, &ctx, &space, &crit);
        let back = parse_query(&q, &ctx.wavelengths_um, &crit).unwrap();
        assert_eq!(back, QueryContext { template, physical_context: ctx, design_space: space });
    }
}
