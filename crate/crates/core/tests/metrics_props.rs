mod common;

use common::{naive_metrics, naive_pass_at, naive_transitions, random_record_set};
use evoskill::harness::TaskRecord;
use evoskill::metrics::{aggregate, error_composition, pass_at_k, pass_at_k_curve, transitions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_ATTEMPTS: u32 = 10;

fn records(seed: u64) -> Vec<TaskRecord> {
    random_record_set(&mut ChaCha8Rng::seed_from_u64(seed), MAX_ATTEMPTS)
}

proptest! {
    #[test]
    fn aggregate_agrees_with_direct_formulas(seed in any::<u64>()) {
        let rs = records(seed);
        let m = aggregate(&rs).unwrap();
        let n = naive_metrics(&rs);
        prop_assert_eq!((m.se, m.sg, m.cpf, m.bm, m.attempts_mean), (n.se, n.sg, n.cpf, n.bm, n.attempts));
        prop_assert!(m.sg <= m.se);
        for f in [m.se, m.sg, m.cpf] {
            prop_assert!((0.0..=1.0).contains(&f));
        }
        prop_assert_eq!(m.bm_excluded, rs.iter().filter(|r| r.bm.is_none()).count());
    }

    #[test]
    fn pass_at_k_is_monotone_and_ends_at_sg(seed in any::<u64>()) {
        let rs = records(seed);
        let curve = pass_at_k_curve(&rs, MAX_ATTEMPTS);
        prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        for (k, p) in curve.iter().enumerate() {
            prop_assert_eq!(*p, naive_pass_at(&rs, k as u32 + 1));
        }
        prop_assert_eq!(pass_at_k(&rs, MAX_ATTEMPTS), aggregate(&rs).unwrap().sg);
    }

    #[test]
    fn transitions_account_for_every_task(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = records(seed);
        let post: Vec<TaskRecord> = base.iter().rev().map(|r| TaskRecord { sg: rng.gen_bool(0.5), ..r.clone() }).collect();
        let t = transitions(&base, &post).unwrap();
        prop_assert_eq!(t.total(), base.len());
        prop_assert_eq!([t.pass_to_pass, t.pass_to_fail, t.fail_to_pass, t.fail_to_fail], naive_transitions(&base, &post));
        let sg = |rs: &[TaskRecord]| rs.iter().filter(|r| r.sg).count() as i64;
        prop_assert_eq!(t.fail_to_pass as i64 - t.pass_to_fail as i64, sg(&post) - sg(&base));
        let same = transitions(&base, &base).unwrap();
        prop_assert_eq!(same.pass_to_fail + same.fail_to_pass, 0);
    }

    #[test]
    fn bm_positive_only_on_success(seed in any::<u64>()) {
        for r in records(seed) {
            prop_assert!(r.bm.is_none_or(|b| b <= 0.0) || r.sg);
        }
    }
}

#[test]
fn mismatched_ids_are_rejected() {
    let a = records(1);
    let mut b = a.clone();
    b[0].task_id = "other".into();
    assert!(transitions(&a, &b).is_err());
    assert!(transitions(&a, &a[1..]).is_err());
    assert!(aggregate(&[]).is_err());
}

#[test]
fn empty_rounds_are_omitted_from_composition() {
    let rs: Vec<TaskRecord> = records(3).into_iter().map(|r| TaskRecord { candidates: Vec::new(), ..r }).collect();
    assert!(error_composition(&[(1, rs)]).is_empty());
}
