//! One line per acceptance criterion. Runs without the libtest harness so the
//! lines are printed even when everything passes.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::time::Instant;

use serde_json::{json, Value};
use sqkd::analysis::{
    exact_ctrl_error, extract_ctrl_coeffs, predict_ctrl_error_orthogonal, two_stage_ctrl_state, TheoryReport,
};
use sqkd::attacks::AttackSpec;
use sqkd::experiment::{execute, run_experiment, AttackSelection, ExperimentConfig, ExperimentOutput, OutputFormat};
use sqkd::protocol::{ProtocolConfig, Variant};
use sqkd::qcore::{BellKind, RegisterId};

type Outcome = Result<String, String>;
type Suite = Box<dyn Fn() -> common::Check>;
type Criterion = (u32, &'static str, fn() -> Outcome);

const TOL: f64 = 0.02;

fn experiment(variant: Variant, n: usize, trials: u64, attack: &str, params: Value, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        protocol: ProtocolConfig { n_pairs: n, variant, ..ProtocolConfig::default() },
        attack: AttackSelection { name: attack.into(), params: params.as_object().cloned().unwrap_or_default() },
        trials,
        master_seed: seed,
        ..ExperimentConfig::default()
    }
}

fn run(config: &ExperimentConfig) -> Result<ExperimentOutput, String> {
    execute(config).map_err(|e| e.to_string())
}

fn point(report: &TheoryReport, claim: &str) -> Result<f64, String> {
    report
        .row(claim)
        .and_then(|r| r.estimate)
        .map(|e| e.point)
        .ok_or_else(|| format!("no `{claim}` estimate"))
}

fn within(name: &str, value: f64, target: f64, tol: f64) -> Result<(), String> {
    if (value - target).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{name} = {value:.4}, expected {target:.4} +/- {tol}"))
    }
}

fn criterion_1() -> Outcome {
    let mut notes = Vec::new();
    for variant in [Variant::Randomization, Variant::MeasureResend] {
        let out = run(&experiment(variant, 1000, 20, "none", json!({}), 101))?;
        for (i, r) in out.runs.iter().enumerate() {
            if r.ctrl.errors != 0 || r.sift_check.errors != 0 {
                return Err(format!("{variant} trial {i}: ctrl {} sift {} errors", r.ctrl.errors, r.sift_check.errors));
            }
            match &r.final_keys {
                Some(k) if k.alice.bits == k.bob.bits && !k.alice.bits.is_empty() => {}
                _ => return Err(format!("{variant} trial {i}: final keys missing or different")),
            }
        }
        let c = out.report.counts;
        notes.push(format!("{variant}: 0/{} ctrl, 0/{} sift, 20/20 keys equal", c.ctrl_samples, c.sift_samples));
    }
    Ok(notes.join("; "))
}

fn criterion_2() -> Outcome {
    let out = run(&experiment(Variant::Randomization, 500, 40, "intercept_resend_z", json!({}), 202))?;
    let ctrl = point(&out.report, "ctrl_error")?;
    within("ctrl_error", ctrl, 0.5, TOL)?;
    Ok(format!("ctrl_error {ctrl:.4} over {} samples", out.report.counts.ctrl_samples))
}

fn criterion_3() -> Outcome {
    let out = run(&experiment(Variant::Randomization, 500, 40, "cnot_ancilla", json!({}), 303))?;
    let ctrl = point(&out.report, "ctrl_error")?;
    within("ctrl_error", ctrl, 0.5, TOL)?;
    let c = out.report.counts;
    let agree = c.eve_key_matches as f64 / c.eve_key_compared as f64;
    if agree < 0.999 {
        return Err(format!("probe/SIFT agreement {agree:.5} < 0.999"));
    }
    Ok(format!("ctrl_error {ctrl:.4}; probe bit = Bob's SIFT bit in {}/{}", c.eve_key_matches, c.eve_key_compared))
}

fn criterion_4() -> Outcome {
    let out = run(&experiment(Variant::MeasureResend, 500, 40, "bell_substitution", json!({}), 404))?;
    let c = out.report.counts;
    if c.ctrl_errors != 0 {
        return Err(format!("first-check errors {}", c.ctrl_errors));
    }
    let sift = point(&out.report, "sift_error")?;
    within("sift_error", sift, 0.5, TOL)?;
    let id = c.eve_correct_sift_ids as f64 / c.n_pairs as f64;
    within("correct SIFT identification", id, 0.25, TOL)?;
    if c.eve_false_positives != 0 {
        return Err(format!("{} false positives", c.eve_false_positives));
    }
    Ok(format!(
        "ctrl 0/{}; sift_error {sift:.4}; identification {id:.4}; 0 false positives",
        c.ctrl_samples
    ))
}

fn criterion_5() -> Outcome {
    let mut notes = Vec::new();
    for (label, theta) in [("0", 0.0), ("pi/12", PI / 12.0), ("pi/8", PI / 8.0), ("pi/6", PI / 6.0), ("pi/4", PI / 4.0)] {
        let out = run(&experiment(Variant::Randomization, 500, 40, "general_unitary", json!({ "theta": theta }), 505))?;
        let sift = point(&out.report, "sift_error")?;
        let target = theta.sin().powi(2);
        within(&format!("sift_error at theta={label}"), sift, target, TOL)?;
        notes.push(format!("{label}: {sift:.4} vs {target:.4}"));
    }
    Ok(notes.join(", "))
}

fn c(re: f64, im: f64) -> Value {
    json!([re, im])
}

fn criterion_6() -> Outcome {
    let (s8, c8) = ((PI / 8.0).sin(), (PI / 8.0).cos());
    let (s6, c6) = ((PI / 6.0).sin(), (PI / 6.0).cos());
    let (s5, c5) = ((PI / 5.0).sin(), (PI / 5.0).cos());
    let (s7, c7) = ((PI / 7.0).sin(), (PI / 7.0).cos());
    let settings = [
        ("gamma=gamma'=1", [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]),
        ("theta=pi/8", [c(c8, 0.0), c(s8, 0.0), c(s8, 0.0), c(c8, 0.0)]),
        ("theta=pi/4", [c(0.5f64.sqrt(), 0.0), c(0.5f64.sqrt(), 0.0), c(0.5f64.sqrt(), 0.0), c(0.5f64.sqrt(), 0.0)]),
        ("asymmetric", [c(1.0, 0.0), c(0.0, 0.0), c(s6, 0.0), c(c6, 0.0)]),
        (
            "complex phases",
            [c(c5 * (PI / 3.0).cos(), c5 * (PI / 3.0).sin()), c(s5, 0.0), c(0.0, s7), c(c7, 0.0)],
        ),
    ];
    let mut notes = Vec::new();
    for (label, [a, b, bp, ap]) in settings {
        let params = json!({ "backward": { "alpha": a, "beta": b, "beta_p": bp, "alpha_p": ap, "probes": "orthogonal" } });
        let config = experiment(Variant::MeasureResend, 500, 40, "two_stage_unitary", params, 606);
        let spec = config.attack_spec().map_err(|e| e.to_string())?;
        let AttackSpec::TwoStageUnitary { forward, backward, .. } = &spec else {
            return Err("not a two-stage spec".into());
        };
        let formula = 1.0 - (backward.alpha.norm_sqr() + backward.alpha_p.norm_sqr()) / 4.0;
        let state = two_stage_ctrl_state(BellKind::PhiPlus, forward, backward).map_err(|e| e.to_string())?;
        let exact = exact_ctrl_error(&state, RegisterId::from_raw(0), RegisterId::from_raw(1), BellKind::PhiPlus)
            .map_err(|e| e.to_string())?;
        within(&format!("{label}: exact"), exact, formula, 1e-9)?;
        let out = run(&config)?;
        let est = point(&out.report, "ctrl_error")?;
        within(&format!("{label}: estimated"), est, formula, TOL)?;
        notes.push(format!("{label}: formula {formula:.4}, exact {exact:.4}, est {est:.4}"));
    }
    Ok(notes.join("; "))
}

fn criterion_7() -> Outcome {
    let params = json!({ "backward": { "alpha": 1.0, "beta": 0.0, "beta_p": 0.0, "alpha_p": 1.0, "probes": "reference" } });
    let config = experiment(Variant::MeasureResend, 500, 40, "two_stage_unitary", params, 707);
    let spec = config.attack_spec().map_err(|e| e.to_string())?;
    let AttackSpec::TwoStageUnitary { forward, backward, .. } = &spec else {
        return Err("not a two-stage spec".into());
    };
    let (a, b) = (RegisterId::from_raw(0), RegisterId::from_raw(1));
    let state = two_stage_ctrl_state(BellKind::PhiPlus, forward, backward).map_err(|e| e.to_string())?;
    let exact = exact_ctrl_error(&state, a, b, BellKind::PhiPlus).map_err(|e| e.to_string())?;
    within("exact", exact, 0.0, 1e-9)?;
    let coeffs = extract_ctrl_coeffs(&state, a, b).map_err(|e| e.to_string())?;
    let formula = predict_ctrl_error_orthogonal(&coeffs);
    within("orthogonal formula", formula.rate, 0.5, 1e-9)?;
    if !formula.overlap_warning {
        return Err("overlap warning not raised".into());
    }
    let out = run(&config)?;
    let est = point(&out.report, "ctrl_error")?;
    if out.report.counts.ctrl_errors != 0 {
        return Err(format!("estimated ctrl_error {est}"));
    }
    Ok(format!(
        "exact {exact:.4}, estimated {est:.4}, formula {:.4} with warning (overlap {:.3})",
        formula.rate,
        coeffs.probe_overlap_00_11.norm()
    ))
}

fn criterion_8() -> Outcome {
    let suites: [(&str, Suite); 6] = [
        ("norm/unitarity x200", Box::new(|| common::run_many(0..200, common::random_operation_sequence))),
        ("Born vs sampling", Box::new(|| common::run_many(0..20, |s| common::born_vs_sampling(s, 4000)))),
        ("permutation round-trip x200", Box::new(|| common::run_many(0..200, |s| common::permutation_round_trip(s, (s % 50) as usize)))),
        ("capability confinement", Box::new(common::capability_confinement)),
        ("oracle agreement x200", Box::new(|| common::run_many(0..200, common::oracle_agreement))),
        ("postproc agreement x200", Box::new(|| common::run_many(0..200, common::postproc_agreement))),
    ];
    let mut done = Vec::new();
    for (name, suite) in suites {
        suite().map_err(|e| format!("{name}: {e}"))?;
        done.push(name);
    }
    Ok(done.join(", "))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cases = vec![
        ("intercept json", experiment(Variant::Randomization, 500, 40, "intercept_resend_z", json!({}), 202)),
        ("bell_substitution csv+trace", experiment(Variant::MeasureResend, 200, 8, "bell_substitution", json!({}), 404)),
    ];
    cases[1].1.output.format = OutputFormat::Csv;
    let mut notes = Vec::new();
    for (label, config) in cases {
        let mut files = Vec::new();
        for _ in 0..2 {
            let mut c = config.clone();
            let results = dir.path().join(format!("{}.out", label.replace(' ', "_")));
            c.output.results_path = Some(results.clone());
            if c.output.format == OutputFormat::Csv {
                c.output.trace_path = Some(results.with_extension("ndjson"));
            }
            run_experiment(&c).map_err(|e| e.to_string())?;
            let mut bytes = fs::read(&results).map_err(|e| e.to_string())?;
            if let Some(t) = &c.output.trace_path {
                bytes.extend(fs::read(t).map_err(|e| e.to_string())?);
            }
            files.push(bytes);
        }
        if files[0] != files[1] {
            return Err(format!("{label}: reruns differ"));
        }
        notes.push(format!("{label}: {} identical bytes", files[0].len()));
    }
    Ok(notes.join("; "))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "honest baseline", criterion_1),
        (2, "intercept-resend CTRL error 0.5", criterion_2),
        (3, "CNOT ancilla CTRL error and probe agreement", criterion_3),
        (4, "Bell substitution on measure-resend", criterion_4),
        (5, "SIFT error sweep", criterion_5),
        (6, "CTRL error with orthogonal backward probes", criterion_6),
        (7, "CTRL error with identical backward probes", criterion_7),
        (8, "property suites", criterion_8),
        (9, "byte-identical reruns", criterion_9),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}) [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}) [{secs:.1}s]: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
