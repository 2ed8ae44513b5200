mod common;

use approx::assert_abs_diff_eq;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use sqkd::analysis::{
    compare_theory, estimate_rate, exact_pair_prediction, predict_sift_error, predictions, AnalysisError, Verdict,
};
use sqkd::attacks::{AttackSpec, ProbeReadout, UnitaryAttackParams};
use sqkd::protocol::{run_protocol, ProtocolConfig, Variant};
use sqkd::qcore::BellKind;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exact_ctrl_error_matches_formulas(seed in any::<u64>()) {
        common::oracle_agreement(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn sift_formula_matches_oracle(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let params = common::random_backward_params(&mut rng);
        let spec = AttackSpec::GeneralUnitary { params: params.clone(), readout: ProbeReadout::None };
        let exact = exact_pair_prediction(&spec, BellKind::PhiPlus).unwrap().unwrap();
        prop_assert!((exact.sift_error - predict_sift_error(&params).rate).abs() < 1e-9);
    }

    #[test]
    fn wilson_interval_contains_point(successes in 0usize..500, extra in 0usize..500) {
        let trials = successes + extra + 1;
        let e = estimate_rate(successes, trials).unwrap();
        prop_assert!(e.ci_low <= e.point && e.point <= e.ci_high);
        prop_assert!(e.ci_low >= 0.0 && e.ci_high <= 1.0);
    }
}

#[test]
fn wilson_coverage_is_near_nominal() {
    let mut rng = common::rng(2024);
    for p in [0.02, 0.25, 0.5] {
        let n = 200;
        let reps = 2000;
        let covered = (0..reps)
            .filter(|_| {
                let k = (0..n).filter(|_| rng.random_bool(p)).count();
                let e = estimate_rate(k, n).unwrap();
                e.ci_low <= p && p <= e.ci_high
            })
            .count();
        let coverage = covered as f64 / reps as f64;
        assert!(coverage > 0.93, "p={p}: coverage {coverage}");
    }
}

#[test]
fn overlap_discrepancy_is_reported() {
    let spec = AttackSpec::TwoStageUnitary {
        forward: UnitaryAttackParams::identity(),
        backward: UnitaryAttackParams {
            probes: std::array::from_fn(|_| UnitaryAttackParams::identity().probes[0].clone()),
            ..UnitaryAttackParams::identity()
        },
        readout: ProbeReadout::None,
    };
    let p = predictions(&spec, Variant::MeasureResend, BellKind::PhiPlus).unwrap();
    assert_eq!(p.ctrl_error, Some(0.0));
    assert!(p.notes.iter().any(|n| n.contains("0.500000") && n.contains("not exact")), "{:?}", p.notes);
}

#[test]
fn predictions_cover_the_catalog() {
    let p = predictions(&AttackSpec::BellSubstitution, Variant::MeasureResend, BellKind::PhiPlus).unwrap();
    assert_eq!((p.ctrl_error, p.sift_error, p.eve_sift_identification), (Some(0.0), Some(0.5), Some(0.25)));
    let p = predictions(&AttackSpec::BellSubstitution, Variant::Randomization, BellKind::PhiPlus).unwrap();
    assert!(p.ctrl_error.is_none() && !p.notes.is_empty());
    let p = predictions(&AttackSpec::InterceptResendZ, Variant::Randomization, BellKind::PsiPlus).unwrap();
    assert_abs_diff_eq!(p.ctrl_error.unwrap(), 0.5, epsilon = 1e-12);
    assert_eq!(p.eve_key_agreement, Some(1.0));
}

#[test]
fn compare_theory_pools_and_judges() {
    let config = |seed| ProtocolConfig { n_pairs: 300, seed, ctrl_error_threshold: 1.0, ..ProtocolConfig::default() };
    let spec = AttackSpec::InterceptResendZ;
    let runs: Vec<_> = (0..10).map(|s| run_protocol(&config(s), spec.build().unwrap().as_mut()).unwrap()).collect();
    let report = compare_theory(&runs, &spec).unwrap();
    let ctrl = report.row("ctrl_error").unwrap();
    assert_eq!(ctrl.verdict, Verdict::Pass);
    assert_eq!(ctrl.estimate.unwrap().n_samples, runs.iter().map(|r| r.ctrl.samples).sum::<usize>());
    assert_eq!(report.row("eve_key_agreement").unwrap().estimate.unwrap().point, 1.0);
    assert!(report.all_pass());
    assert!(report.to_table().contains("ctrl_error"));

    // Mislabelled runs are refused.
    assert!(matches!(compare_theory(&runs, &AttackSpec::None), Err(AnalysisError::MixedConfigs(_))));
    let mut mixed = runs.clone();
    mixed[3].variant = Variant::MeasureResend;
    assert!(matches!(compare_theory(&mixed, &spec), Err(AnalysisError::MixedConfigs(_))));
    assert!(matches!(compare_theory(&[], &spec), Err(AnalysisError::Empty)));
}

#[test]
fn wrong_prediction_fails_verdict() {
    // An honest run judged against the intercept prediction.
    let mut runs: Vec<_> =
        (0..3).map(|s| run_protocol(&ProtocolConfig { n_pairs: 200, seed: s, ..ProtocolConfig::default() }, &mut sqkd::attacks::attack_none()).unwrap()).collect();
    for r in &mut runs {
        r.attack = "intercept_resend_z".into();
    }
    let report = compare_theory(&runs, &AttackSpec::InterceptResendZ).unwrap();
    assert_eq!(report.row("ctrl_error").unwrap().verdict, Verdict::Fail);
    assert!(!report.all_pass());
}

#[test]
fn complex_coefficients_extract_with_phase() {
    let i = Complex64::new(0.0, 1.0);
    let back = UnitaryAttackParams::with_orthogonal_probes(
        i * 0.6,
        Complex64::new(0.8, 0.0),
        Complex64::new(0.0, -0.8),
        Complex64::new(0.6, 0.0),
    );
    let g = sqkd::analysis::two_stage_ctrl_state(BellKind::PhiPlus, &UnitaryAttackParams::identity(), &back).unwrap();
    let c = sqkd::analysis::extract_ctrl_coeffs(&g, sqkd::qcore::RegisterId::from_raw(0), sqkd::qcore::RegisterId::from_raw(1))
        .unwrap();
    assert_abs_diff_eq!((c.gamma - i * 0.6).norm(), 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!((c.delta_p - Complex64::new(0.0, -0.8)).norm(), 0.0, epsilon = 1e-12);
}
