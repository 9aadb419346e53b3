//! Built-in task evaluators checked against independent oracles.

mod common;

use discover_core::tasks::overlap::{discrete_overlap_oracle, indicator_of, score_overlap};
use discover_core::tasks::packing::{score_packing, validate_packing, DEFAULT_TOL};
use discover_core::tasks::{Formulation, Packing, StepFunction, TaskProgram, Violation};
use discover_core::{mock_mutate, Error};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feasible_packing_scores_its_radius_sum(seed in any::<u64>(), n in 1usize..40) {
        let p = common::random_feasible_packing(&mut common::rng(seed), n);
        let expected: f64 = p.radii().iter().sum();
        let got = score_packing(&p).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));
        prop_assert_eq!(Packing::parse(&p.to_text()).unwrap(), p);
    }

    #[test]
    fn overlap_matches_brute_force(seed in any::<u64>(), m in 1usize..24) {
        let f = common::random_step(&mut common::rng(seed), m);
        let c = score_overlap(&f, Formulation::ComplementCorrelation).unwrap().value;
        prop_assert!((c - common::brute_complement(f.values())).abs() <= 1e-9);
        let s = score_overlap(&f, Formulation::SelfConvolution).unwrap().value;
        prop_assert!((s - common::brute_convolution(f.values())).abs() <= 1e-9);
        prop_assert_eq!(StepFunction::parse(&f.to_text()).unwrap(), f);
    }

    #[test]
    fn mock_children_of_feasible_parents_parse(seed in any::<u64>(), scale in 0.0f64..0.2) {
        let parent = common::grid26();
        let child = mock_mutate(&parent, seed, scale).unwrap();
        prop_assert!(matches!(TaskProgram::parse(&child).unwrap(), TaskProgram::Packing(_)));
        prop_assert_eq!(mock_mutate(&parent, seed, scale).unwrap(), child);
    }
}

#[test]
fn overlapping_pair_reports_one_violation() {
    let p = Packing::from_circles(&[(0.3, 0.5, 0.2), (0.6, 0.5, 0.2)]).unwrap();
    let v = validate_packing(&p, DEFAULT_TOL);
    assert_eq!(v.len(), 1);
    assert!(matches!(v[0], Violation::Overlap { first: 0, second: 1, .. }));
    assert!(matches!(score_packing(&p), Err(Error::Infeasible(_))));
}

#[test]
fn near_tangency_within_tolerance_is_feasible() {
    let p = Packing::from_circles(&[(0.25, 0.5, 0.25 + 1e-12), (0.75, 0.5, 0.25)]).unwrap();
    assert!(validate_packing(&p, DEFAULT_TOL).is_empty());
    assert!(!validate_packing(&p, 0.0).is_empty());
}

#[test]
fn discrete_examples_by_hand() {
    // A = {1, 2}, B = {3, 4}: differences b - a are 2, 1, 3, 2, so the max is 2.
    assert_eq!(discrete_overlap_oracle(2, &[1, 2]).unwrap(), 2);
    // A = {1, 3}, B = {2, 4}: differences 1, 3, -1, 1, so the max is 2.
    assert_eq!(discrete_overlap_oracle(2, &[1, 3]).unwrap(), 2);
    let v = score_overlap(&indicator_of(2, &[1, 2]), Formulation::ComplementCorrelation).unwrap().value;
    assert!((v * 2.0 - 2.0).abs() < 1e-12);
}

#[test]
fn degenerate_inputs_are_rejected() {
    assert!(score_packing(&Packing::from_circles(&[]).unwrap()).is_err());
    assert!(score_overlap(&StepFunction::new(vec![]), Formulation::ComplementCorrelation).is_err());
    assert!(score_overlap(&StepFunction::new(vec![0.9, 0.9]), Formulation::ComplementCorrelation).is_err());
    assert!(score_overlap(&StepFunction::new(vec![1.5, -0.5]), Formulation::SelfConvolution).is_err());
}
