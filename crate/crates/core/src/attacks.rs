//! Eavesdropper strategies.
//!
//! An [`Attack`] sees every particle on both legs of the channel through an
//! [`EveLab`], which only lets it operate on registers in Eve's custody: the
//! particle currently on the wire, particles she kept, and registers she
//! created. Alice's A registers never enter custody, so no hook can touch
//! them. On the backward leg hooks only learn the wire position; Bob's
//! announcements become visible in [`Attack::infer`], after Alice has
//! confirmed receipt.

use std::collections::HashSet;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::protocol::{Announcements, BobAction};
use crate::qcore::{BellKind, CMatrix, QuantumError, QuantumSystem, RegisterId, Role, StateVector, TOLERANCE};
use crate::rng::SimRng;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("register {0} is not in Eve's custody")]
    CapabilityViolation(RegisterId),
    #[error("backward hook at position {position} has no stored substitution (variant mismatch?)")]
    WorkspaceExhausted { position: usize },
    #[error("invalid attack parameters: {0}")]
    InvalidParams(String),
    #[error("unknown attack `{0}`")]
    UnknownAttack(String),
    #[error("transcript has {transcript} entries but {truth} actions were given")]
    LengthMismatch { transcript: usize, truth: usize },
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

pub type Result<T> = std::result::Result<T, AttackError>;

/// A particle on the channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wire {
    reg: RegisterId,
}

impl Wire {
    pub(crate) fn new(reg: RegisterId) -> Self {
        Wire { reg }
    }

    pub fn register(&self) -> RegisterId {
        self.reg
    }
}

/// Eve's view of the world during one hook call.
pub struct EveLab<'a> {
    system: &'a mut QuantumSystem,
    rng: &'a mut SimRng,
    custody: &'a mut HashSet<RegisterId>,
    announcements: Option<&'a Announcements>,
}

impl<'a> EveLab<'a> {
    pub(crate) fn new(
        system: &'a mut QuantumSystem,
        rng: &'a mut SimRng,
        custody: &'a mut HashSet<RegisterId>,
        announcements: Option<&'a Announcements>,
    ) -> Self {
        EveLab { system, rng, custody, announcements }
    }

    fn check(&self, ids: &[RegisterId]) -> Result<()> {
        match ids.iter().find(|id| !self.custody.contains(id)) {
            Some(&id) => Err(AttackError::CapabilityViolation(id)),
            None => Ok(()),
        }
    }

    pub fn holds(&self, id: RegisterId) -> bool {
        self.custody.contains(&id)
    }

    /// Public announcements; `None` before Alice has confirmed receipt.
    pub fn announcements(&self) -> Option<&Announcements> {
        self.announcements
    }

    pub fn rng(&mut self) -> &mut SimRng {
        self.rng
    }

    pub fn new_qubit(&mut self, bit: u8) -> RegisterId {
        let id = self.system.add_qubit(Role::EveProbe, None, bit);
        self.custody.insert(id);
        id
    }

    pub fn new_state(&mut self, state: StateVector) -> Vec<RegisterId> {
        let ids = self.system.add_state(Role::EveProbe, None, state);
        self.custody.extend(ids.iter().copied());
        ids
    }

    pub fn new_bell_pair(&mut self, kind: BellKind) -> (RegisterId, RegisterId) {
        let state = StateVector::new(kind.amplitudes().to_vec()).expect("Bell states are normalized");
        let ids = self.new_state(state);
        (ids[0], ids[1])
    }

    pub fn apply_unitary(&mut self, targets: &[RegisterId], u: &CMatrix) -> Result<()> {
        self.check(targets)?;
        Ok(self.system.apply_unitary(targets, u)?)
    }

    pub fn measure_z(&mut self, target: RegisterId) -> Result<u8> {
        self.check(&[target])?;
        Ok(self.system.measure_z(target, self.rng)?)
    }

    pub fn measure_bell(&mut self, r1: RegisterId, r2: RegisterId) -> Result<BellKind> {
        self.check(&[r1, r2])?;
        Ok(self.system.measure_bell(r1, r2, self.rng)?)
    }

    /// Puts a held register on the wire.
    pub fn send(&mut self, id: RegisterId) -> Result<Wire> {
        self.check(&[id])?;
        Ok(Wire::new(id))
    }
}

/// An eavesdropping strategy. Default hooks pass particles through untouched.
pub trait Attack: Send {
    fn name(&self) -> &str;

    /// Called for every particle on its way to Bob, in sequence order.
    fn on_forward(&mut self, _position: usize, wire: Wire, _lab: &mut EveLab<'_>) -> Result<Wire> {
        Ok(wire)
    }

    /// Called for every particle on its way back to Alice, by wire position.
    fn on_backward(&mut self, _position: usize, wire: Wire, _lab: &mut EveLab<'_>) -> Result<Wire> {
        Ok(wire)
    }

    /// Called once after all announcements.
    fn infer(&mut self, lab: &mut EveLab<'_>) -> Result<EveTranscript> {
        let n = lab.announcements().map_or(0, |a| a.n_pairs);
        Ok(EveTranscript::indeterminate(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferredLabel {
    InferredSift,
    InferredCtrl,
    Indeterminate,
}

/// What Eve concluded, indexed by pair.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EveTranscript {
    pub labels: Vec<InferredLabel>,
    pub key_bits: Option<Vec<u8>>,
    pub bell_outcomes: Option<Vec<BellKind>>,
}

impl EveTranscript {
    pub fn indeterminate(n: usize) -> Self {
        EveTranscript { labels: vec![InferredLabel::Indeterminate; n], key_bits: None, bell_outcomes: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IdentificationOutcome {
    pub correct_sift_ids: usize,
    pub false_positives: usize,
    pub indeterminate: usize,
}

/// Scores Eve's SIFT guesses against Bob's true actions.
pub fn eve_identification_outcome(transcript: &EveTranscript, truth: &[BobAction]) -> Result<IdentificationOutcome> {
    if transcript.labels.len() != truth.len() {
        return Err(AttackError::LengthMismatch { transcript: transcript.labels.len(), truth: truth.len() });
    }
    let mut out = IdentificationOutcome::default();
    for (label, action) in transcript.labels.iter().zip(truth) {
        match (label, action) {
            (InferredLabel::InferredSift, BobAction::Sift) => out.correct_sift_ids += 1,
            (InferredLabel::InferredSift, BobAction::Ctrl) => out.false_positives += 1,
            (InferredLabel::Indeterminate, _) => out.indeterminate += 1,
            (InferredLabel::InferredCtrl, _) => {}
        }
    }
    Ok(out)
}

/// Pair index for each return position, from Eve's point of view after the
/// announcements.
fn position_to_pair(lab: &EveLab<'_>, n: usize) -> Vec<usize> {
    match lab.announcements() {
        Some(a) => a.permutation.mapping().to_vec(),
        None => (0..n).collect(),
    }
}

#[derive(Debug, Default)]
pub struct NoAttack;

impl Attack for NoAttack {
    fn name(&self) -> &str {
        "none"
    }
}

pub fn attack_none() -> NoAttack {
    NoAttack
}

/// Measures every forward particle in Z and sends on the collapsed particle.
#[derive(Debug, Default)]
pub struct InterceptResendZ {
    bits: Vec<u8>,
}

impl Attack for InterceptResendZ {
    fn name(&self) -> &str {
        "intercept_resend_z"
    }

    fn on_forward(&mut self, _position: usize, wire: Wire, lab: &mut EveLab<'_>) -> Result<Wire> {
        self.bits.push(lab.measure_z(wire.register())?);
        Ok(wire)
    }

    fn infer(&mut self, _lab: &mut EveLab<'_>) -> Result<EveTranscript> {
        Ok(EveTranscript {
            labels: vec![InferredLabel::Indeterminate; self.bits.len()],
            key_bits: Some(self.bits.clone()),
            bell_outcomes: None,
        })
    }
}

pub fn intercept_resend_z() -> InterceptResendZ {
    InterceptResendZ::default()
}

/// Copies each forward particle's Z value into a fresh |0⟩ ancilla with a
/// CNOT, then reads the ancillas after the announcements.
#[derive(Debug, Default)]
pub struct CnotAncilla {
    probes: Vec<RegisterId>,
}

impl Attack for CnotAncilla {
    fn name(&self) -> &str {
        "cnot_ancilla"
    }

    fn on_forward(&mut self, _position: usize, wire: Wire, lab: &mut EveLab<'_>) -> Result<Wire> {
        let probe = lab.new_qubit(0);
        lab.apply_unitary(&[wire.register(), probe], &CMatrix::cnot())?;
        self.probes.push(probe);
        Ok(wire)
    }

    fn infer(&mut self, lab: &mut EveLab<'_>) -> Result<EveTranscript> {
        let bits = self.probes.iter().map(|&p| lab.measure_z(p)).collect::<Result<Vec<_>>>()?;
        Ok(EveTranscript {
            labels: vec![InferredLabel::Indeterminate; bits.len()],
            key_bits: Some(bits),
            bell_outcomes: None,
        })
    }
}

pub fn cnot_ancilla() -> CnotAncilla {
    CnotAncilla::default()
}

/// Keeps the true particle, sends half of her own |φ+⟩ instead, and on the
/// way back Bell-measures her half with whatever returns before forwarding
/// the true particle. A |φ-⟩ outcome proves Bob measured.
#[derive(Debug, Default)]
pub struct BellSubstitution {
    workspace: Vec<Option<(RegisterId, Wire)>>,
    outcomes: Vec<Option<BellKind>>,
}

impl Attack for BellSubstitution {
    fn name(&self) -> &str {
        "bell_substitution"
    }

    fn on_forward(&mut self, _position: usize, wire: Wire, lab: &mut EveLab<'_>) -> Result<Wire> {
        let (kept, decoy) = lab.new_bell_pair(BellKind::PhiPlus);
        self.workspace.push(Some((kept, wire)));
        lab.send(decoy)
    }

    fn on_backward(&mut self, position: usize, wire: Wire, lab: &mut EveLab<'_>) -> Result<Wire> {
        let (kept, original) = self
            .workspace
            .get_mut(position)
            .and_then(Option::take)
            .ok_or(AttackError::WorkspaceExhausted { position })?;
        let outcome = lab.measure_bell(kept, wire.register())?;
        if self.outcomes.len() <= position {
            self.outcomes.resize(position + 1, None);
        }
        self.outcomes[position] = Some(outcome);
        Ok(original)
    }

    fn infer(&mut self, lab: &mut EveLab<'_>) -> Result<EveTranscript> {
        let n = self.workspace.len();
        let to_pair = position_to_pair(lab, n);
        let mut labels = vec![InferredLabel::Indeterminate; n];
        let mut bell = vec![BellKind::PhiPlus; n];
        for (position, outcome) in self.outcomes.iter().enumerate() {
            let outcome = outcome.ok_or(AttackError::WorkspaceExhausted { position })?;
            let pair = to_pair[position];
            bell[pair] = outcome;
            if outcome == BellKind::PhiMinus {
                labels[pair] = InferredLabel::InferredSift;
            }
        }
        Ok(EveTranscript { labels, key_bits: None, bell_outcomes: Some(bell) })
    }
}

pub fn bell_substitution() -> BellSubstitution {
    BellSubstitution::default()
}

/// Coefficients and probe states of an attack unitary
/// `|0,ε⟩ ↦ α|0,ε00⟩ + β|1,ε01⟩`, `|1,ε⟩ ↦ β'|0,ε10⟩ + α'|1,ε11⟩`,
/// where ε is the all-zero probe state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitaryAttackParams {
    pub alpha: Complex64,
    pub beta: Complex64,
    pub beta_p: Complex64,
    pub alpha_p: Complex64,
    /// ε00, ε01, ε10, ε11.
    pub probes: [Vec<Complex64>; 4],
}

fn basis_vec(dim: usize, index: usize) -> Vec<Complex64> {
    StateVector::basis(dim.trailing_zeros() as usize, index).amplitudes().to_vec()
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

impl UnitaryAttackParams {
    /// `α = α' = cos θ`, `β = β' = sin θ` with the mutually orthogonal
    /// two-qubit probes |00⟩, |01⟩, |10⟩, |11⟩.
    pub fn orthogonal(theta: f64) -> Self {
        Self::with_orthogonal_probes(re(theta.cos()), re(theta.sin()), re(theta.sin()), re(theta.cos()))
    }

    pub fn with_orthogonal_probes(alpha: Complex64, beta: Complex64, beta_p: Complex64, alpha_p: Complex64) -> Self {
        UnitaryAttackParams {
            alpha,
            beta,
            beta_p,
            alpha_p,
            probes: [basis_vec(4, 0), basis_vec(4, 1), basis_vec(4, 2), basis_vec(4, 3)],
        }
    }

    /// The identity attack on a two-qubit probe left in |00⟩.
    pub fn identity() -> Self {
        Self::identity_with_probe_qubits(2)
    }

    pub fn identity_with_probe_qubits(qubits: usize) -> Self {
        UnitaryAttackParams {
            alpha: re(1.0),
            beta: re(0.0),
            beta_p: re(0.0),
            alpha_p: re(1.0),
            probes: std::array::from_fn(|_| basis_vec(1 << qubits, 0)),
        }
    }

    pub fn probe_dim(&self) -> usize {
        self.probes[0].len()
    }

    pub fn probe_qubits(&self) -> usize {
        self.probe_dim().trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AttackError::InvalidParams(m));
        let n0 = self.alpha.norm_sqr() + self.beta.norm_sqr();
        if (n0 - 1.0).abs() > TOLERANCE {
            return bad(format!("|alpha|^2 + |beta|^2 = {n0}, expected 1"));
        }
        let n1 = self.beta_p.norm_sqr() + self.alpha_p.norm_sqr();
        if (n1 - 1.0).abs() > TOLERANCE {
            return bad(format!("|beta_p|^2 + |alpha_p|^2 = {n1}, expected 1"));
        }
        let dim = self.probe_dim();
        if !dim.is_power_of_two() {
            return bad(format!("probe dimension {dim} is not a power of two"));
        }
        for (name, p) in ["e00", "e01", "e10", "e11"].iter().zip(&self.probes) {
            if p.len() != dim {
                return bad(format!("probe {name} has dimension {}, expected {dim}", p.len()));
            }
            let n: f64 = p.iter().map(|a| a.norm_sqr()).sum();
            if (n - 1.0).abs() > TOLERANCE {
                return bad(format!("probe {name} has norm^2 {n}, expected 1"));
            }
        }
        let overlap = self.alpha.conj() * self.beta_p * inner(&self.probes[0], &self.probes[2])
            + self.beta.conj() * self.alpha_p * inner(&self.probes[1], &self.probes[3]);
        if overlap.norm() > TOLERANCE {
            return bad(format!(
                "images of |0,e> and |1,e> are not orthogonal (overlap {overlap:.3e}); no unitary realizes these parameters"
            ));
        }
        Ok(())
    }

    /// The two image vectors over the (wire ⊗ probe) space, wire qubit most
    /// significant.
    pub fn images(&self) -> [Vec<Complex64>; 2] {
        let d = self.probe_dim();
        let mut img0 = vec![re(0.0); 2 * d];
        let mut img1 = vec![re(0.0); 2 * d];
        for p in 0..d {
            img0[p] = self.alpha * self.probes[0][p];
            img0[d + p] = self.beta * self.probes[1][p];
            img1[p] = self.beta_p * self.probes[2][p];
            img1[d + p] = self.alpha_p * self.probes[3][p];
        }
        [img0, img1]
    }

    /// Full unitary on (wire, probe qubits...). Columns |0,0..0⟩ and
    /// |1,0..0⟩ are the two images; the other columns complete them by
    /// Gram-Schmidt over the standard basis in index order.
    pub fn embedding(&self) -> Result<CMatrix> {
        self.validate()?;
        let d = self.probe_dim();
        let dim = 2 * d;
        let [img0, img1] = self.images();
        let mut basis: Vec<Vec<Complex64>> = vec![img0, img1];
        for k in 0..dim {
            if basis.len() == dim {
                break;
            }
            let mut v = basis_vec(dim, k);
            // Two passes keep the completion orthogonal to working precision.
            for _ in 0..2 {
                for b in &basis {
                    let c = inner(b, &v);
                    for (x, y) in v.iter_mut().zip(b) {
                        *x -= c * y;
                    }
                }
            }
            let n: f64 = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            if n > 1e-6 {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        let mut completion = basis.split_off(2).into_iter();
        let columns: Vec<Vec<Complex64>> = (0..dim)
            .map(|c| match c {
                0 => basis[0].clone(),
                c if c == d => basis[1].clone(),
                _ => completion.next().expect("standard basis spans the space"),
            })
            .collect();
        let u = CMatrix::from_columns(&columns);
        u.check_unitary()?;
        Ok(u)
    }
}

/// Optional measurement Eve makes on her probes after the announcements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeReadout {
    #[default]
    None,
    /// Z-measure probe qubit `k` (0 = most significant) and record it as
    /// the guessed key bit.
    Z(usize),
}

/// Entangles each forward particle with a fresh probe through the embedding
/// of [`UnitaryAttackParams`]; optionally also applies a second unitary on
/// the backward leg using the probe stored for that wire position.
#[derive(Debug)]
pub struct UnitaryAttack {
    name: &'static str,
    forward: CMatrix,
    backward: Option<CMatrix>,
    probe_qubits: usize,
    readout: ProbeReadout,
    probes: Vec<Vec<RegisterId>>,
}

impl UnitaryAttack {
    fn targets(wire: &Wire, probes: &[RegisterId]) -> Vec<RegisterId> {
        std::iter::once(wire.register()).chain(probes.iter().copied()).collect()
    }
}

impl Attack for UnitaryAttack {
    fn name(&self) -> &str {
        self.name
    }

    fn on_forward(&mut self, _position: usize, wire: Wire, lab: &mut EveLab<'_>) -> Result<Wire> {
        let probes = lab.new_state(StateVector::basis(self.probe_qubits, 0));
        lab.apply_unitary(&Self::targets(&wire, &probes), &self.forward)?;
        self.probes.push(probes);
        Ok(wire)
    }

    fn on_backward(&mut self, position: usize, wire: Wire, lab: &mut EveLab<'_>) -> Result<Wire> {
        if let Some(u) = &self.backward {
            let probes = self.probes.get(position).ok_or(AttackError::WorkspaceExhausted { position })?;
            lab.apply_unitary(&Self::targets(&wire, probes), u)?;
        }
        Ok(wire)
    }

    fn infer(&mut self, lab: &mut EveLab<'_>) -> Result<EveTranscript> {
        let n = self.probes.len();
        let key_bits = match self.readout {
            ProbeReadout::None => None,
            ProbeReadout::Z(k) => Some(
                self.probes
                    .iter()
                    .map(|p| lab.measure_z(p[k]))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(EveTranscript { labels: vec![InferredLabel::Indeterminate; n], key_bits, bell_outcomes: None })
    }
}

fn check_readout(readout: ProbeReadout, probe_qubits: usize) -> Result<()> {
    match readout {
        ProbeReadout::Z(k) if k >= probe_qubits => Err(AttackError::InvalidParams(format!(
            "readout qubit {k} out of range for {probe_qubits} probe qubit(s)"
        ))),
        _ => Ok(()),
    }
}

pub fn general_unitary(params: &UnitaryAttackParams, readout: ProbeReadout) -> Result<UnitaryAttack> {
    check_readout(readout, params.probe_qubits())?;
    Ok(UnitaryAttack {
        name: "general_unitary",
        forward: params.embedding()?,
        backward: None,
        probe_qubits: params.probe_qubits(),
        readout,
        probes: Vec::new(),
    })
}

/// Both unitaries act on the same probe, so both parameter sets must share a
/// probe dimension.
pub fn two_stage_unitary(
    forward: &UnitaryAttackParams,
    backward: &UnitaryAttackParams,
    readout: ProbeReadout,
) -> Result<UnitaryAttack> {
    if forward.probe_dim() != backward.probe_dim() {
        return Err(AttackError::InvalidParams(format!(
            "forward probe dimension {} differs from backward {}",
            forward.probe_dim(),
            backward.probe_dim()
        )));
    }
    check_readout(readout, forward.probe_qubits())?;
    Ok(UnitaryAttack {
        name: "two_stage_unitary",
        forward: forward.embedding()?,
        backward: Some(backward.embedding()?),
        probe_qubits: forward.probe_qubits(),
        readout,
        probes: Vec::new(),
    })
}

/// A validated attack selection.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackSpec {
    None,
    InterceptResendZ,
    CnotAncilla,
    BellSubstitution,
    GeneralUnitary { params: UnitaryAttackParams, readout: ProbeReadout },
    TwoStageUnitary { forward: UnitaryAttackParams, backward: UnitaryAttackParams, readout: ProbeReadout },
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::InterceptResendZ => "intercept_resend_z",
            AttackSpec::CnotAncilla => "cnot_ancilla",
            AttackSpec::BellSubstitution => "bell_substitution",
            AttackSpec::GeneralUnitary { .. } => "general_unitary",
            AttackSpec::TwoStageUnitary { .. } => "two_stage_unitary",
        }
    }

    pub fn build(&self) -> Result<Box<dyn Attack>> {
        Ok(match self {
            AttackSpec::None => Box::new(attack_none()),
            AttackSpec::InterceptResendZ => Box::new(intercept_resend_z()),
            AttackSpec::CnotAncilla => Box::new(cnot_ancilla()),
            AttackSpec::BellSubstitution => Box::new(bell_substitution()),
            AttackSpec::GeneralUnitary { params, readout } => Box::new(general_unitary(params, *readout)?),
            AttackSpec::TwoStageUnitary { forward, backward, readout } => {
                Box::new(two_stage_unitary(forward, backward, *readout)?)
            }
        })
    }

    /// Parses `{name, params}` as found in experiment configs.
    pub fn from_config(name: &str, params: &Map<String, Value>) -> Result<Self> {
        let no_params = |spec: AttackSpec| {
            if params.is_empty() {
                Ok(spec)
            } else {
                Err(AttackError::InvalidParams(format!("attack `{name}` takes no parameters")))
            }
        };
        match name {
            "none" => no_params(AttackSpec::None),
            "intercept_resend_z" => no_params(AttackSpec::InterceptResendZ),
            "cnot_ancilla" => no_params(AttackSpec::CnotAncilla),
            "bell_substitution" => no_params(AttackSpec::BellSubstitution),
            "general_unitary" => {
                let cfg: UnitaryConfig = parse_params(Value::Object(params.clone()))?;
                let readout = cfg.readout();
                let params = cfg.into_params()?;
                check_readout(readout, params.probe_qubits())?;
                Ok(AttackSpec::GeneralUnitary { params, readout })
            }
            "two_stage_unitary" => {
                let cfg: TwoStageConfig = parse_params(Value::Object(params.clone()))?;
                let readout = match cfg.readout_qubit {
                    Some(k) => ProbeReadout::Z(k),
                    None => ProbeReadout::None,
                };
                let backward = cfg.backward.into_params()?;
                let forward = match cfg.forward {
                    Some(f) => f.into_params()?,
                    None => UnitaryAttackParams::identity_with_probe_qubits(backward.probe_qubits()),
                };
                if forward.probe_dim() != backward.probe_dim() {
                    return Err(AttackError::InvalidParams("forward and backward probe dimensions differ".into()));
                }
                check_readout(readout, forward.probe_qubits())?;
                Ok(AttackSpec::TwoStageUnitary { forward, backward, readout })
            }
            other => Err(AttackError::UnknownAttack(other.to_string())),
        }
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn parse_params<T: serde::de::DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| AttackError::InvalidParams(e.to_string()))
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum ComplexValue {
    Real(f64),
    Pair([f64; 2]),
}

impl From<ComplexValue> for Complex64 {
    fn from(v: ComplexValue) -> Self {
        match v {
            ComplexValue::Real(x) => Complex64::new(x, 0.0),
            ComplexValue::Pair([a, b]) => Complex64::new(a, b),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ProbeConfig {
    Preset(String),
    Explicit {
        e00: Vec<[f64; 2]>,
        e01: Vec<[f64; 2]>,
        e10: Vec<[f64; 2]>,
        e11: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitaryConfig {
    theta: Option<f64>,
    alpha: Option<ComplexValue>,
    beta: Option<ComplexValue>,
    beta_p: Option<ComplexValue>,
    alpha_p: Option<ComplexValue>,
    probe_qubits: Option<usize>,
    probes: Option<ProbeConfig>,
    readout_qubit: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TwoStageConfig {
    forward: Option<UnitaryConfig>,
    backward: UnitaryConfig,
    readout_qubit: Option<usize>,
}

impl UnitaryConfig {
    fn readout(&self) -> ProbeReadout {
        match self.readout_qubit {
            Some(k) => ProbeReadout::Z(k),
            None => ProbeReadout::None,
        }
    }

    fn into_params(self) -> Result<UnitaryAttackParams> {
        let bad = |m: &str| AttackError::InvalidParams(m.to_string());
        let (alpha, beta, beta_p, alpha_p) = match (self.theta, self.alpha, self.beta, self.beta_p, self.alpha_p) {
            (Some(t), None, None, None, None) => (re(t.cos()), re(t.sin()), re(t.sin()), re(t.cos())),
            (None, Some(a), Some(b), Some(bp), Some(ap)) => (a.into(), b.into(), bp.into(), ap.into()),
            _ => return Err(bad("give either `theta` or all of `alpha`, `beta`, `beta_p`, `alpha_p`")),
        };
        let qubits = self.probe_qubits.unwrap_or(2);
        let dim = 1usize << qubits;
        let probes: [Vec<Complex64>; 4] = match self.probes.unwrap_or(ProbeConfig::Preset("orthogonal".into())) {
            ProbeConfig::Preset(p) if p == "orthogonal" => {
                if dim < 4 {
                    return Err(bad("orthogonal probes need at least 2 probe qubits"));
                }
                std::array::from_fn(|i| basis_vec(dim, i))
            }
            ProbeConfig::Preset(p) if p == "reference" => std::array::from_fn(|_| basis_vec(dim, 0)),
            ProbeConfig::Preset(p) => return Err(bad(&format!("unknown probe preset `{p}`"))),
            ProbeConfig::Explicit { e00, e01, e10, e11 } => {
                let conv = |v: Vec<[f64; 2]>| v.into_iter().map(|[a, b]| Complex64::new(a, b)).collect::<Vec<_>>();
                [conv(e00), conv(e01), conv(e10), conv(e11)]
            }
        };
        if probes[0].len() != dim && self.probe_qubits.is_some() {
            return Err(bad("probe vectors do not match probe_qubits"));
        }
        let params = UnitaryAttackParams { alpha, beta, beta_p, alpha_p, probes };
        params.validate()?;
        Ok(params)
    }
}

/// One catalog line for `list-attacks`.
#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub params: &'static str,
    pub predictions: &'static str,
}

pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "none",
            params: "(none)",
            predictions: "CTRL error 0, SIFT error 0, keys agree",
        },
        CatalogEntry {
            name: "intercept_resend_z",
            params: "(none)",
            predictions: "CTRL error 0.5, SIFT error 0; Eve's bits equal Bob's SIFT bits",
        },
        CatalogEntry {
            name: "cnot_ancilla",
            params: "(none)",
            predictions: "CTRL error 0.5, SIFT error 0; Eve's probe bit equals Bob's SIFT bit",
        },
        CatalogEntry {
            name: "bell_substitution",
            params: "(none)",
            predictions: "for the measure-resend variant: CTRL error 0, SIFT error 0.5, \
                          correct SIFT identification 1/4 of pairs with no false positives; \
                          under randomization Eve pairs positions blindly and the trick fails",
        },
        CatalogEntry {
            name: "general_unitary",
            params: "theta | alpha, beta, beta_p, alpha_p (number or [re, im]) with \
                     |alpha|^2+|beta|^2=1 and |beta_p|^2+|alpha_p|^2=1; \
                     probe_qubits (default 2); probes: \"orthogonal\" | \"reference\" | \
                     {e00, e01, e10, e11: [[re, im], ...]}; readout_qubit (optional)",
            predictions: "SIFT error |beta|^2 (= (|beta|^2+|beta_p|^2)/2 when asymmetric)",
        },
        CatalogEntry {
            name: "two_stage_unitary",
            params: "forward (general_unitary params, default identity), backward (general_unitary params), \
                     readout_qubit (optional)",
            predictions: "CTRL error 1-(|gamma|^2+|gamma'|^2)/4 when the backward probes e'00, e'11 are orthogonal",
        },
    ]
}
