//! Theory predictions for each attack and Monte Carlo comparison against them.
//!
//! Two kinds of predictor live here. The closed forms ([`predict_sift_error`],
//! [`predict_ctrl_error_orthogonal`]) are the textbook expressions for the
//! unitary attacks. The exact oracles ([`exact_ctrl_error`],
//! [`exact_pair_prediction`]) evolve a single pair through the attack and read
//! the error probabilities straight off the Born rule. The closed form for the
//! CTRL error silently assumes ⟨ε'00|ε'11⟩ = 0; when it does not hold the two
//! disagree by `Re(γ*γ'⟨ε'00|ε'11⟩)/2`, and [`CtrlPrediction::overlap_warning`]
//! says so.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{eve_identification_outcome, AttackError, AttackSpec};
use crate::protocol::{BobAction, RunResult, Variant};
use crate::qcore::{BellKind, CMatrix, QuantumError, Register, RegisterId, Role, StateVector, SystemGroup, TOLERANCE};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no trials to analyse")]
    Empty,
    #[error("runs mix configurations: {0}")]
    MixedConfigs(String),
    #[error("rate estimate needs at least one trial")]
    ZeroTrials,
    #[error("{successes} successes out of {trials} trials")]
    InvalidCounts { successes: usize, trials: usize },
    #[error("coefficients violate |γ|²+|δ|²+|δ'|²+|γ'|² = 2 (got {0})")]
    CoefficientNorm(f64),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Tolerance added to both ends of a confidence interval before a verdict.
pub const VERDICT_TOLERANCE: f64 = 0.02;

const WILSON_Z: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftPrediction {
    pub rate: f64,
    /// `|β|² ≠ |β'|²`; `rate` is then the average of the two.
    pub asymmetric: bool,
}

/// SIFT mismatch probability of a forward-only unitary attack on |φ+⟩:
/// `|β|²`, or `(|β|² + |β'|²)/2` when the two differ.
pub fn predict_sift_error(params: &crate::attacks::UnitaryAttackParams) -> SiftPrediction {
    let b = params.beta.norm_sqr();
    let bp = params.beta_p.norm_sqr();
    let asymmetric = (b - bp).abs() > TOLERANCE;
    SiftPrediction { rate: if asymmetric { (b + bp) / 2.0 } else { b }, asymmetric }
}

/// Coefficients of a CTRL pair state written as
/// `(γ|00⟩|ε'00⟩ + δ|01⟩|ε'01⟩ + δ'|10⟩|ε'10⟩ + γ'|11⟩|ε'11⟩)/√2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrlExpansionCoeffs {
    pub gamma: Complex64,
    pub delta: Complex64,
    pub delta_p: Complex64,
    pub gamma_p: Complex64,
    /// ⟨ε'00|ε'11⟩
    pub probe_overlap_00_11: Complex64,
    /// A γ or γ' branch was empty, so the overlap is undefined (reported as 0).
    pub degenerate: bool,
}

impl CtrlExpansionCoeffs {
    pub fn new(gamma: Complex64, delta: Complex64, delta_p: Complex64, gamma_p: Complex64, overlap: Complex64) -> Result<Self> {
        let c = CtrlExpansionCoeffs { gamma, delta, delta_p, gamma_p, probe_overlap_00_11: overlap, degenerate: false };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gamma.norm_sqr() + self.delta.norm_sqr() + self.delta_p.norm_sqr() + self.gamma_p.norm_sqr();
        if (n - 2.0).abs() > TOLERANCE {
            return Err(AnalysisError::CoefficientNorm(n));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrlPrediction {
    pub rate: f64,
    /// The probes ε'00 and ε'11 are not orthogonal, so `rate` is not exact.
    pub overlap_warning: bool,
}

/// `1 - (|γ|² + |γ'|²)/4`, exact only for orthogonal ε'00, ε'11.
pub fn predict_ctrl_error_orthogonal(coeffs: &CtrlExpansionCoeffs) -> CtrlPrediction {
    CtrlPrediction {
        rate: 1.0 - (coeffs.gamma.norm_sqr() + coeffs.gamma_p.norm_sqr()) / 4.0,
        overlap_warning: coeffs.probe_overlap_00_11.norm() > TOLERANCE,
    }
}

/// The CTRL error including the probe-overlap term:
/// `1 - (|γ|² + |γ'|²)/4 - Re(γ* γ' ⟨ε'00|ε'11⟩)/2`.
pub fn predict_ctrl_error_general(coeffs: &CtrlExpansionCoeffs) -> f64 {
    let cross = (coeffs.gamma.conj() * coeffs.gamma_p * coeffs.probe_overlap_00_11).re;
    1.0 - (coeffs.gamma.norm_sqr() + coeffs.gamma_p.norm_sqr()) / 4.0 - cross / 2.0
}

/// `1 - P(expected)` for a Bell measurement of (a, b).
pub fn exact_ctrl_error(group: &SystemGroup, a: RegisterId, b: RegisterId, expected: BellKind) -> Result<f64> {
    let p = group.bell_probabilities(a, b)?;
    Ok((1.0 - p[expected.index()]).max(0.0))
}

/// Reads the CTRL expansion off a state holding `a`, `b` and any number of
/// probe registers. Each coefficient carries the phase of the first nonzero
/// amplitude of its branch, so the gauge-fixed probes start real positive.
pub fn extract_ctrl_coeffs(group: &SystemGroup, a: RegisterId, b: RegisterId) -> Result<CtrlExpansionCoeffs> {
    let n = group.len();
    let sa = n - 1 - group.position(a)?;
    let sb = n - 1 - group.position(b)?;
    let mask = (1 << sa) | (1 << sb);
    let amps = group.amplitudes();
    let branches: [Vec<Complex64>; 4] = std::array::from_fn(|xy| {
        let bits = ((xy >> 1) << sa) | ((xy & 1) << sb);
        (0..amps.len()).filter(|i| i & mask == 0).map(|base| amps[base | bits]).collect()
    });
    let mut coeffs = [Complex64::new(0.0, 0.0); 4];
    let mut probes: [Option<Vec<Complex64>>; 4] = Default::default();
    for xy in 0..4 {
        let norm = branches[xy].iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm <= TOLERANCE {
            continue;
        }
        let first = branches[xy].iter().find(|x| x.norm() > TOLERANCE).expect("nonzero branch");
        let phase = first / first.norm();
        coeffs[xy] = std::f64::consts::SQRT_2 * norm * phase;
        probes[xy] = Some(branches[xy].iter().map(|x| x / (norm * phase)).collect());
    }
    let (overlap, degenerate) = match (&probes[0], &probes[3]) {
        (Some(p0), Some(p3)) => (p0.iter().zip(p3).map(|(x, y)| x.conj() * y).sum(), false),
        _ => (Complex64::new(0.0, 0.0), true),
    };
    Ok(CtrlExpansionCoeffs {
        gamma: coeffs[0],
        delta: coeffs[1],
        delta_p: coeffs[2],
        gamma_p: coeffs[3],
        probe_overlap_00_11: overlap,
        degenerate,
    })
}

/// Builds the CTRL expansion state over registers (A, B, probe...) with
/// probes `[ε'00, ε'01, ε'10, ε'11]` of a common dimension.
pub fn build_ctrl_state(coeffs: [Complex64; 4], probes: &[Vec<Complex64>; 4]) -> Result<SystemGroup> {
    let d = probes[0].len();
    let mut amps = vec![Complex64::new(0.0, 0.0); 4 * d];
    for xy in 0..4 {
        for (p, &v) in probes[xy].iter().enumerate() {
            amps[xy * d + p] = coeffs[xy] * v * std::f64::consts::FRAC_1_SQRT_2;
        }
    }
    let state = StateVector::new(amps)?;
    let registers = (0..state.n_qubits())
        .map(|i| Register {
            id: RegisterId::from_raw(i as u64),
            role: match i {
                0 => Role::A,
                1 => Role::B,
                _ => Role::EveProbe,
            },
            pair_index: None,
        })
        .collect();
    Ok(SystemGroup::new(registers, state)?)
}

/// 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateEstimate {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
}

impl ErrorRateEstimate {
    pub fn contains_within(&self, value: f64, tolerance: f64) -> bool {
        value >= self.ci_low - tolerance && value <= self.ci_high + tolerance
    }
}

pub fn estimate_rate(successes: usize, trials: usize) -> Result<ErrorRateEstimate> {
    if trials == 0 {
        return Err(AnalysisError::ZeroTrials);
    }
    if successes > trials {
        return Err(AnalysisError::InvalidCounts { successes, trials });
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Ok(ErrorRateEstimate {
        point: p,
        ci_low: (center - half).clamp(0.0, p),
        ci_high: (center + half).clamp(p, 1.0),
        n_samples: trials,
    })
}

/// Exact single-pair error probabilities for an attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub ctrl_error: f64,
    pub sift_error: f64,
}

fn reg(id: u64, role: Role) -> Register {
    Register { id: RegisterId::from_raw(id), role, pair_index: None }
}

const A: u64 = 0;
const B: u64 = 1;

fn pair_with_probe(kind: BellKind, probe_qubits: usize) -> Result<(SystemGroup, Vec<RegisterId>)> {
    let mut group = SystemGroup::bell_pair(kind, reg(A, Role::A), reg(B, Role::B))?;
    let mut wire_and_probes = vec![RegisterId::from_raw(B)];
    if probe_qubits > 0 {
        let probe_regs: Vec<Register> = (0..probe_qubits).map(|i| reg(2 + i as u64, Role::EveProbe)).collect();
        wire_and_probes.extend(probe_regs.iter().map(|r| r.id));
        group = group.merge(SystemGroup::new(probe_regs, StateVector::basis(probe_qubits, 0))?)?;
    }
    Ok((group, wire_and_probes))
}

fn anti_parity(kind: BellKind) -> usize {
    matches!(kind, BellKind::PsiPlus | BellKind::PsiMinus) as usize
}

/// Second-check mismatch when Bob measures B, optionally followed by
/// `backward` on the returning particle.
fn sift_mismatch(group: &SystemGroup, targets: &[RegisterId], backward: Option<&CMatrix>, kind: BellKind) -> Result<f64> {
    let a = RegisterId::from_raw(A);
    let b = RegisterId::from_raw(B);
    let anti = anti_parity(kind);
    let mut err = 0.0;
    for r in 0..2u8 {
        let Some((p, mut branch)) = group.project_z(b, r)? else { continue };
        if let Some(u) = backward {
            branch.apply_unitary(targets, u)?;
        }
        let z = branch.z_probabilities(&[a, b])?;
        for (ab, q) in z.iter().enumerate() {
            let (abit, bbit) = (ab >> 1, ab & 1);
            if bbit != r as usize || abit ^ bbit != anti {
                err += p * q;
            }
        }
    }
    Ok(err)
}

fn ctrl_error_after(group: &SystemGroup, targets: &[RegisterId], backward: Option<&CMatrix>, kind: BellKind) -> Result<f64> {
    let mut g = group.clone();
    if let Some(u) = backward {
        g.apply_unitary(targets, u)?;
    }
    exact_ctrl_error(&g, RegisterId::from_raw(A), RegisterId::from_raw(B), kind)
}

/// The CTRL pair state a two-stage attack leaves behind, for coefficient
/// extraction.
pub fn two_stage_ctrl_state(
    kind: BellKind,
    forward: &crate::attacks::UnitaryAttackParams,
    backward: &crate::attacks::UnitaryAttackParams,
) -> Result<SystemGroup> {
    let (mut g, targets) = pair_with_probe(kind, forward.probe_qubits())?;
    g.apply_unitary(&targets, &forward.embedding()?)?;
    g.apply_unitary(&targets, &backward.embedding()?)?;
    Ok(g)
}

/// Exact error probabilities for one pair whose return leg is matched to the
/// right partner (always true for measure-resend; true for randomization only
/// when the attack has no backward stage). `None` for bell_substitution.
pub fn exact_pair_prediction(spec: &AttackSpec, kind: BellKind) -> Result<Option<PairPrediction>> {
    let pred = match spec {
        AttackSpec::None => {
            let (g, t) = pair_with_probe(kind, 0)?;
            PairPrediction { ctrl_error: ctrl_error_after(&g, &t, None, kind)?, sift_error: sift_mismatch(&g, &t, None, kind)? }
        }
        AttackSpec::InterceptResendZ => {
            let (g, t) = pair_with_probe(kind, 0)?;
            let mut ctrl = 0.0;
            let mut sift = 0.0;
            for e in 0..2 {
                if let Some((p, branch)) = g.project_z(RegisterId::from_raw(B), e)? {
                    ctrl += p * ctrl_error_after(&branch, &t, None, kind)?;
                    sift += p * sift_mismatch(&branch, &t, None, kind)?;
                }
            }
            PairPrediction { ctrl_error: ctrl, sift_error: sift }
        }
        AttackSpec::CnotAncilla => {
            let (mut g, t) = pair_with_probe(kind, 1)?;
            g.apply_unitary(&t, &CMatrix::cnot())?;
            PairPrediction { ctrl_error: ctrl_error_after(&g, &t, None, kind)?, sift_error: sift_mismatch(&g, &t, None, kind)? }
        }
        AttackSpec::GeneralUnitary { params, .. } => {
            let (mut g, t) = pair_with_probe(kind, params.probe_qubits())?;
            g.apply_unitary(&t, &params.embedding()?)?;
            PairPrediction { ctrl_error: ctrl_error_after(&g, &t, None, kind)?, sift_error: sift_mismatch(&g, &t, None, kind)? }
        }
        AttackSpec::TwoStageUnitary { forward, backward, .. } => {
            let (mut g, t) = pair_with_probe(kind, forward.probe_qubits())?;
            g.apply_unitary(&t, &forward.embedding()?)?;
            let back = backward.embedding()?;
            PairPrediction {
                ctrl_error: ctrl_error_after(&g, &t, Some(&back), kind)?,
                sift_error: sift_mismatch(&g, &t, Some(&back), kind)?,
            }
        }
        AttackSpec::BellSubstitution => return Ok(None),
    };
    Ok(Some(pred))
}

/// Predicted value of every claim that applies to an attack and variant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub ctrl_error: Option<f64>,
    pub sift_error: Option<f64>,
    pub eve_sift_identification: Option<f64>,
    pub eve_false_positive: Option<f64>,
    pub eve_key_agreement: Option<f64>,
    pub notes: Vec<String>,
}

pub fn predictions(spec: &AttackSpec, variant: Variant, kind: BellKind) -> Result<Predictions> {
    let mut out = Predictions::default();
    match spec {
        AttackSpec::BellSubstitution => match variant {
            Variant::MeasureResend => {
                out.ctrl_error = Some(0.0);
                out.sift_error = Some(0.5);
                out.eve_sift_identification = Some(0.25);
                out.eve_false_positive = Some(0.0);
            }
            Variant::Randomization => out
                .notes
                .push("bell_substitution under randomization: Eve pairs return positions blindly; no prediction".into()),
        },
        AttackSpec::TwoStageUnitary { forward, backward, .. } if variant == Variant::Randomization => {
            let _ = (forward, backward);
            out.notes
                .push("two_stage_unitary under randomization: backward stage acts on unknown pairs; no prediction".into());
        }
        _ => {
            let p = exact_pair_prediction(spec, kind)?.expect("handled above");
            out.ctrl_error = Some(p.ctrl_error);
            out.sift_error = Some(p.sift_error);
        }
    }
    match spec {
        AttackSpec::InterceptResendZ | AttackSpec::CnotAncilla => out.eve_key_agreement = Some(1.0),
        AttackSpec::GeneralUnitary { params, .. } if kind == BellKind::PhiPlus => {
            let formula = predict_sift_error(params);
            out.notes.push(format!(
                "closed-form SIFT error {:.6}{}",
                formula.rate,
                if formula.asymmetric { " (asymmetric |beta| != |beta_p|)" } else { "" }
            ));
        }
        AttackSpec::TwoStageUnitary { forward, backward, .. } if kind == BellKind::PhiPlus => {
            let g = two_stage_ctrl_state(kind, forward, backward)?;
            let c = extract_ctrl_coeffs(&g, RegisterId::from_raw(A), RegisterId::from_raw(B))?;
            let f = predict_ctrl_error_orthogonal(&c);
            out.notes.push(format!(
                "orthogonal-probe CTRL formula {:.6}{}",
                f.rate,
                if f.overlap_warning {
                    format!(" (probe overlap |<e'00|e'11>| = {:.3}; formula not exact)", c.probe_overlap_00_11.norm())
                } else {
                    String::new()
                }
            ));
        }
        _ => {}
    }
    Ok(out)
}

/// Counts summed over trials in trial order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PooledCounts {
    pub trials: usize,
    pub n_pairs: usize,
    pub ctrl_errors: usize,
    pub ctrl_samples: usize,
    pub sift_errors: usize,
    pub sift_samples: usize,
    pub eve_correct_sift_ids: usize,
    pub eve_false_positives: usize,
    pub eve_key_matches: usize,
    pub eve_key_compared: usize,
    pub passed_runs: usize,
    pub keys_agree: usize,
}

/// Eve's guessed key bits against Bob's bits on SIFT pairs, as (matches, compared).
pub fn eve_key_agreement(run: &RunResult) -> Option<(usize, usize)> {
    let bits = run.eve_transcript.key_bits.as_ref()?;
    let mut matches = 0;
    let mut compared = 0;
    for r in &run.records {
        if let (BobAction::Sift, Some(bob)) = (r.bob_action, r.bob_result) {
            compared += 1;
            if bits.get(r.pair_index) == Some(&bob) {
                matches += 1;
            }
        }
    }
    Some((matches, compared))
}

pub fn pool(runs: &[RunResult]) -> Result<PooledCounts> {
    let mut c = PooledCounts::default();
    for run in runs {
        c.trials += 1;
        c.n_pairs += run.n_pairs;
        c.ctrl_errors += run.ctrl.errors;
        c.ctrl_samples += run.ctrl.samples;
        c.sift_errors += run.sift_check.errors;
        c.sift_samples += run.sift_check.samples;
        if run.eve_transcript.labels.len() == run.n_pairs {
            let id = eve_identification_outcome(&run.eve_transcript, &run.bob_actions())?;
            c.eve_correct_sift_ids += id.correct_sift_ids;
            c.eve_false_positives += id.false_positives;
        }
        if let Some((m, n)) = eve_key_agreement(run) {
            c.eve_key_matches += m;
            c.eve_key_compared += n;
        }
        if run.passed() {
            c.passed_runs += 1;
        }
        if let Some(k) = &run.final_keys {
            if k.alice.bits == k.bob.bits {
                c.keys_agree += 1;
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRow {
    pub claim: String,
    pub predicted: Option<f64>,
    pub estimate: Option<ErrorRateEstimate>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub attack: String,
    pub variant: Variant,
    pub bell_kind: BellKind,
    pub counts: PooledCounts,
    pub rows: Vec<ClaimRow>,
    pub notes: Vec<String>,
}

impl TheoryReport {
    /// No row failed.
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.verdict != Verdict::Fail)
    }

    pub fn row(&self, claim: &str) -> Option<&ClaimRow> {
        self.rows.iter().find(|r| r.claim == claim)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>10} {:>21} {:>8}",
            "claim", "predicted", "estimated", "ci", "verdict"
        );
        for r in &self.rows {
            let predicted = r.predicted.map_or("-".to_string(), |p| format!("{p:.4}"));
            let (point, ci) = match &r.estimate {
                Some(e) => (format!("{:.4}", e.point), format!("[{:.4}, {:.4}]", e.ci_low, e.ci_high)),
                None => ("-".to_string(), "-".to_string()),
            };
            let verdict = match r.verdict {
                Verdict::Pass => "pass",
                Verdict::Fail => "FAIL",
                Verdict::NotApplicable => "n/a",
            };
            let _ = writeln!(out, "{:<24} {:>10} {:>10} {:>21} {:>8}", r.claim, predicted, point, ci, verdict);
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

fn row(claim: &str, predicted: Option<f64>, successes: usize, trials: usize) -> Result<ClaimRow> {
    let estimate = if trials == 0 { None } else { Some(estimate_rate(successes, trials)?) };
    let verdict = match (predicted, &estimate) {
        (Some(p), Some(e)) if e.contains_within(p, VERDICT_TOLERANCE) => Verdict::Pass,
        (Some(_), Some(_)) => Verdict::Fail,
        _ => Verdict::NotApplicable,
    };
    Ok(ClaimRow { claim: claim.to_string(), predicted, estimate, verdict })
}

/// Pools the runs and sets every applicable prediction against its 95%
/// interval widened by [`VERDICT_TOLERANCE`].
pub fn compare_theory(runs: &[RunResult], spec: &AttackSpec) -> Result<TheoryReport> {
    let first = runs.first().ok_or(AnalysisError::Empty)?;
    for r in runs {
        if r.variant != first.variant || r.n_pairs != first.n_pairs || r.bell_kind != first.bell_kind {
            return Err(AnalysisError::MixedConfigs(format!(
                "trial with seed {} ({}, n={}, {}) differs from ({}, n={}, {})",
                r.seed, r.variant, r.n_pairs, r.bell_kind, first.variant, first.n_pairs, first.bell_kind
            )));
        }
        if r.attack != spec.name() {
            return Err(AnalysisError::MixedConfigs(format!("trial ran `{}`, expected `{}`", r.attack, spec.name())));
        }
    }
    let counts = pool(runs)?;
    let p = predictions(spec, first.variant, first.bell_kind)?;
    let mut rows = vec![
        row("ctrl_error", p.ctrl_error, counts.ctrl_errors, counts.ctrl_samples)?,
        row("sift_error", p.sift_error, counts.sift_errors, counts.sift_samples)?,
    ];
    if matches!(spec, AttackSpec::BellSubstitution) {
        rows.push(row("eve_sift_identification", p.eve_sift_identification, counts.eve_correct_sift_ids, counts.n_pairs)?);
        rows.push(row("eve_false_positive", p.eve_false_positive, counts.eve_false_positives, counts.n_pairs)?);
    }
    if counts.eve_key_compared > 0 || p.eve_key_agreement.is_some() {
        rows.push(row("eve_key_agreement", p.eve_key_agreement, counts.eve_key_matches, counts.eve_key_compared)?);
    }
    Ok(TheoryReport {
        attack: spec.name().to_string(),
        variant: first.variant,
        bell_kind: first.bell_kind,
        counts,
        rows,
        notes: p.notes,
    })
}
