use evoskill::criteria::{
    cyclic_distance_deg, margin_at, normalization_scale, outcome, report_from_outcomes, wrapped_difference_deg,
};
use evoskill::taskspec::{Criterion, CriterionParams, Metric};
use proptest::prelude::*;

fn criterion() -> impl Strategy<Value = Criterion> {
    let p = CriterionParams::at(0);
    prop_oneof![
        (0.0f64..1.0).prop_map({
            let p = p.clone();
            move |t| Criterion::at_least(Metric::TotalReflection, p.clone(), t)
        }),
        (0.0f64..1.0).prop_map({
            let p = p.clone();
            move |t| Criterion::at_most(Metric::TotalTransmission, p.clone(), t)
        }),
        (0.0f64..360.0, 0.1f64..180.0)
            .prop_map(move |(t, tol)| Criterion::close_to(Metric::TransmissionPhaseDeg, p.clone(), t, tol)),
    ]
}

proptest! {
    #[test]
    fn cyclic_distance_is_a_metric_on_the_circle(a in -1e3f64..1e3, b in -1e3f64..1e3, c in -1e3f64..1e3) {
        let d = cyclic_distance_deg(a, b);
        prop_assert!((0.0..=180.0).contains(&d));
        prop_assert_eq!(d, cyclic_distance_deg(b, a));
        prop_assert!(d <= cyclic_distance_deg(a, c) + cyclic_distance_deg(c, b) + 1e-9);
        prop_assert!((cyclic_distance_deg(a + 360.0, b) - d).abs() < 1e-9);
        prop_assert!((wrapped_difference_deg(a, b).abs() - d).abs() < 1e-9);
    }

    #[test]
    fn pass_iff_margin_nonnegative(c in criterion(), v in -10.0f64..370.0) {
        let raw = margin_at(&c, v);
        let o = outcome(&c, raw);
        prop_assert_eq!(o.passed, raw >= 0.0);
        prop_assert!(o.scale > 0.0);
        prop_assert_eq!(o.normalized_margin, raw / normalization_scale(&c));
        prop_assert_eq!(o.normalized_margin >= 0.0, o.passed);
    }

    #[test]
    fn report_summarizes_outcomes(cs in prop::collection::vec((criterion(), -1.0f64..361.0), 1..6)) {
        let outcomes: Vec<_> = cs.iter().map(|(c, v)| outcome(c, margin_at(c, *v))).collect();
        let rep = report_from_outcomes(outcomes.clone());
        let passed = outcomes.iter().filter(|o| o.passed).count();
        prop_assert_eq!(rep.sg, passed == outcomes.len());
        prop_assert_eq!(rep.cpf, passed as f64 / outcomes.len() as f64);
        prop_assert_eq!(rep.bm >= 0.0, rep.sg);
        prop_assert!(rep.cpf >= 0.0 && rep.cpf <= 1.0);
    }
}

#[test]
fn wraparound_examples() {
    assert_eq!(cyclic_distance_deg(350.0, 10.0), 20.0);
    assert_eq!(cyclic_distance_deg(0.0, 180.0), 180.0);
    assert_eq!(cyclic_distance_deg(359.0, 359.0), 0.0);
    let c = Criterion::close_to(Metric::TransmissionPhaseDeg, CriterionParams::at(0), 350.0, 25.0);
    assert_eq!(margin_at(&c, 10.0), 5.0);
    assert_eq!(normalization_scale(&c), 25.0);
}
