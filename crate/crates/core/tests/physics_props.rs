use evoskill::physics::{solve_stack, Polarization, Stack};
use num_complex::Complex64;
use proptest::prelude::*;

fn layers() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((1.2f64..4.0, 0.0f64..0.3, 0.0f64..0.8), 1..6)
}

fn pol() -> impl Strategy<Value = Polarization> {
    prop_oneof![Just(Polarization::TE), Just(Polarization::TM)]
}

fn build(sub: f64, ls: &[(f64, f64, f64)], lossy: bool) -> Stack {
    ls.iter().fold(Stack::bare(1.0, sub), |s, &(n, k, d)| s.with_layer(Complex64::new(n, if lossy { k } else { 0.0 }), d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lossless_stacks_conserve_energy(
        ls in layers(), sub in 1.0f64..2.5, wl in 0.4f64..2.0, angle in 0.0f64..85.0, p in pol()
    ) {
        let r = solve_stack(&build(sub, &ls, false), wl, angle, p).unwrap();
        prop_assert!((r.reflection + r.transmission - 1.0).abs() < 1e-10);
    }

    #[test]
    fn absorbing_stacks_lose_energy(
        ls in layers(), sub in 1.0f64..2.5, wl in 0.4f64..2.0, angle in 0.0f64..85.0, p in pol()
    ) {
        let r = solve_stack(&build(sub, &ls, true), wl, angle, p).unwrap();
        prop_assert!(r.reflection >= 0.0 && r.transmission >= 0.0);
        prop_assert!(r.reflection + r.transmission <= 1.0 + 1e-12);
    }

    #[test]
    fn polarizations_agree_at_normal_incidence(ls in layers(), sub in 1.0f64..2.5, wl in 0.4f64..2.0) {
        let s = build(sub, &ls, true);
        let te = solve_stack(&s, wl, 0.0, Polarization::TE).unwrap();
        let tm = solve_stack(&s, wl, 0.0, Polarization::TM).unwrap();
        prop_assert!((te.reflection - tm.reflection).abs() < 1e-12);
        prop_assert!((te.transmission - tm.transmission).abs() < 1e-12);
    }

    #[test]
    fn transmission_is_reciprocal_at_normal_incidence(ls in layers(), sub in 1.0f64..2.5, wl in 0.4f64..2.0) {
        let s = build(sub, &ls, true);
        let fwd = solve_stack(&s, wl, 0.0, Polarization::TE).unwrap();
        let back = solve_stack(&s.reversed(), wl, 0.0, Polarization::TE).unwrap();
        prop_assert!((fwd.transmission - back.transmission).abs() < 1e-10);
    }

    #[test]
    fn zero_thickness_layers_are_invisible(
        ls in layers(), n in 1.2f64..4.0, sub in 1.0f64..2.5, wl in 0.4f64..2.0, angle in 0.0f64..80.0, p in pol()
    ) {
        let base = build(sub, &ls, true);
        let padded = base.clone().with_layer(Complex64::new(n, 0.1), 0.0);
        let a = solve_stack(&base, wl, angle, p).unwrap();
        let b = solve_stack(&padded, wl, angle, p).unwrap();
        prop_assert!((a.reflection - b.reflection).abs() < 1e-12);
        prop_assert!((a.transmission - b.transmission).abs() < 1e-12);
    }

    #[test]
    fn phase_is_on_the_half_open_circle(ls in layers(), sub in 1.0f64..2.5, wl in 0.4f64..2.0, p in pol()) {
        let r = solve_stack(&build(sub, &ls, false), wl, 20.0, p).unwrap();
        let phase = r.phase_deg().unwrap();
        prop_assert!((0.0..360.0).contains(&phase));
        let t0 = r.t0.unwrap();
        prop_assert!((t0.norm_sqr() - r.transmission).abs() < 1e-12);
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let s = Stack::bare(1.0, 1.5);
    assert!(solve_stack(&s, 0.0, 0.0, Polarization::TE).is_err());
    assert!(solve_stack(&s, 0.5, 90.0, Polarization::TE).is_err());
    let gain = Stack::bare(1.0, 1.5).with_layer(Complex64::new(2.0, -0.1), 0.1);
    assert!(solve_stack(&gain, 0.5, 0.0, Polarization::TE).is_err());
    let negative = Stack::bare(1.0, 1.5).with_layer(Complex64::new(2.0, 0.0), -0.1);
    assert!(solve_stack(&negative, 0.5, 0.0, Polarization::TE).is_err());
}
