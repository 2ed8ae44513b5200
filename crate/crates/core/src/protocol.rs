//! The two protocol variants as a strictly ordered state machine.
//!
//! Alice prepares `n` Bell pairs and sends the B halves to Bob. Bob SIFTs
//! (measures in Z) or CTRLs (reflects) each particle and sends everything
//! back, either in a secret random order (randomization variant) or in the
//! original order (measure-resend variant). After Alice confirms receipt Bob
//! announces his choices and, for the randomization variant, his
//! permutation. Alice then runs the Bell-basis check on CTRL pairs and the
//! Z-basis check on a random subset of SIFT pairs; the unchecked SIFT bits
//! form the raw key, which is reconciled and amplified by [`crate::postproc`].
//!
//! The eavesdropper is an [`Attack`] whose hooks are called on every particle
//! of both channel legs.

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::attacks::{Attack, AttackError, EveLab, EveTranscript, Wire};
use crate::postproc::{self, KeyMaterial, KeyOrigin, PostprocConfig};
use crate::qcore::{BellKind, QuantumError, QuantumSystem, RegisterId};
use crate::rng::{stream_rng, SimRng, Stream};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid protocol configuration: {0}")]
    InvalidConfig(String),
    #[error("protocol step `{step}` attempted in phase {phase:?}")]
    OutOfOrder { step: &'static str, phase: Phase },
    #[error("forced action list has {got} entries, expected {expected}")]
    ForcedActions { got: usize, expected: usize },
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Postproc(#[from] postproc::PostprocError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Randomization,
    MeasureResend,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Randomization => "randomization",
            Variant::MeasureResend => "measure-resend",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub n_pairs: usize,
    pub variant: Variant,
    pub bell_kind: BellKind,
    /// Portion of SIFT results disclosed for the second check.
    pub sift_check_fraction: f64,
    pub ctrl_error_threshold: f64,
    pub sift_error_threshold: f64,
    pub seed: u64,
    pub postproc: PostprocConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            n_pairs: 1000,
            variant: Variant::Randomization,
            bell_kind: BellKind::PhiPlus,
            sift_check_fraction: 0.5,
            ctrl_error_threshold: 0.0,
            sift_error_threshold: 0.0,
            seed: 0,
            postproc: PostprocConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ProtocolError::InvalidConfig(msg));
        if self.n_pairs == 0 {
            return bad("n_pairs must be at least 1".into());
        }
        if !(self.sift_check_fraction > 0.0 && self.sift_check_fraction <= 1.0) {
            return bad(format!("sift_check_fraction {} outside (0, 1]", self.sift_check_fraction));
        }
        for (name, t) in [
            ("ctrl_error_threshold", self.ctrl_error_threshold),
            ("sift_error_threshold", self.sift_error_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("{name} {t} outside [0, 1]"));
            }
        }
        if self.postproc.block_size == 0 {
            return bad("postproc.block_size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BobAction {
    Sift,
    Ctrl,
}

/// `mapping[j]` is the incoming index that leaves at outgoing position `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation { mapping: (0..n).collect() }
    }

    /// Uniform over all `n!` permutations.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        Permutation { mapping }
    }

    pub fn from_mapping(mapping: Vec<usize>) -> Option<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= seen.len() || std::mem::replace(&mut seen[m], true) {
                return None;
            }
        }
        Some(Permutation { mapping })
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    /// Incoming index of the particle at outgoing position `j`.
    pub fn source(&self, j: usize) -> usize {
        self.mapping[j]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (j, &i) in self.mapping.iter().enumerate() {
            inv[i] = j;
        }
        Permutation { mapping: inv }
    }

    /// `out[j] = items[mapping[j]]`.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.mapping.iter().map(|&i| items[i].clone()).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(j, &i)| i == j)
    }
}

/// How Bob picks SIFT or CTRL.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum ActionPolicy {
    /// Independent fair coin per particle.
    #[default]
    Random,
    /// Fixed actions by incoming position; for tests.
    Forced(Vec<BobAction>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleRecord {
    pub pair_index: usize,
    pub bob_action: BobAction,
    pub bob_result: Option<u8>,
    pub forward_position: usize,
    pub return_position: usize,
    pub alice_bell_outcome: Option<BellKind>,
    pub alice_a_bit: Option<u8>,
    pub alice_b_bit: Option<u8>,
    pub in_sift_check: bool,
}

/// One prepared Bell pair: A stays with Alice, B goes on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreparedPair {
    pub pair_index: usize,
    pub a: RegisterId,
    pub b: RegisterId,
}

/// Everything made public on the classical channel, in announcement order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Announcements {
    pub variant: Variant,
    pub n_pairs: usize,
    /// Bob's choice per pair index.
    pub actions: Vec<BobAction>,
    /// Return position to pair index; identity for measure-resend.
    pub permutation: Permutation,
    /// Pair indices disclosed in the second check, ascending.
    pub sift_check_subset: Vec<usize>,
    /// Bob's published bits for `sift_check_subset`, same order.
    pub bob_check_bits: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct BobOutput {
    pub actions: Vec<BobAction>,
    pub results: Vec<Option<u8>>,
    pub permutation: Permutation,
    pub outgoing: Vec<Wire>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub errors: usize,
    pub samples: usize,
    /// `errors / samples`, 0 when there are no samples.
    pub rate: f64,
}

impl CheckOutcome {
    fn new(errors: usize, samples: usize) -> Self {
        let rate = if samples == 0 { 0.0 } else { errors as f64 / samples as f64 };
        CheckOutcome { errors, samples, rate }
    }

    pub fn degenerate(&self) -> bool {
        self.samples == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    Prepare,
    Forward,
    BobAction,
    Return,
    Announce,
    Check,
    Key,
}

/// One line of the trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub trial: u64,
    pub event: TraceKind,
    pub pair_index: Option<usize>,
    pub position: Option<usize>,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalKeys {
    pub alice: KeyMaterial,
    pub bob: KeyMaterial,
    pub discarded_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub n_pairs: usize,
    pub bell_kind: BellKind,
    pub attack: String,
    pub seed: u64,
    pub ctrl: CheckOutcome,
    pub sift_check: CheckOutcome,
    pub n_ctrl: usize,
    pub n_sift: usize,
    pub first_check_passed: bool,
    pub second_check_passed: bool,
    pub alice_raw_key: Vec<u8>,
    pub bob_raw_key: Vec<u8>,
    pub final_keys: Option<FinalKeys>,
    pub eve_transcript: EveTranscript,
    pub records: Vec<ParticleRecord>,
    pub announcements: Announcements,
}

impl RunResult {
    pub fn ctrl_error_rate(&self) -> f64 {
        self.ctrl.rate
    }

    pub fn sift_check_error_rate(&self) -> f64 {
        self.sift_check.rate
    }

    pub fn n_sift_checked(&self) -> usize {
        self.sift_check.samples
    }

    pub fn passed(&self) -> bool {
        self.first_check_passed && self.second_check_passed
    }

    pub fn bob_actions(&self) -> Vec<BobAction> {
        self.records.iter().map(|r| r.bob_action).collect()
    }
}

/// Protocol phases in the only order they may occur.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Prepared,
    WithBob,
    Returned,
    ReceiptConfirmed,
    Announced,
    Checked,
    Finished,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub policy: ActionPolicy,
    /// Collect trace events, tagged with this trial number.
    pub trace: Option<u64>,
}

/// Alice's preparation: one Bell pair per index; B registers form the forward sequence
/// in pair order.
pub fn alice_prepare(config: &ProtocolConfig, system: &mut QuantumSystem) -> Vec<PreparedPair> {
    (0..config.n_pairs)
        .map(|pair_index| {
            let (a, b) = system.new_bell_pair(config.bell_kind, pair_index);
            PreparedPair { pair_index, a, b }
        })
        .collect()
}

fn bob_choose_and_measure(
    system: &mut QuantumSystem,
    incoming: &[Wire],
    policy: &ActionPolicy,
    rng: &mut SimRng,
) -> Result<(Vec<BobAction>, Vec<Option<u8>>)> {
    let actions: Vec<BobAction> = match policy {
        ActionPolicy::Random => incoming
            .iter()
            .map(|_| if rng.random_bool(0.5) { BobAction::Sift } else { BobAction::Ctrl })
            .collect(),
        ActionPolicy::Forced(forced) => {
            if forced.len() != incoming.len() {
                return Err(ProtocolError::ForcedActions { got: forced.len(), expected: incoming.len() });
            }
            forced.clone()
        }
    };
    let mut results = Vec::with_capacity(incoming.len());
    for (wire, action) in incoming.iter().zip(&actions) {
        results.push(match action {
            BobAction::Sift => Some(system.measure_z(wire.register(), rng)?),
            BobAction::Ctrl => None,
        });
    }
    Ok((actions, results))
}

/// Bob's randomization variant: SIFT or CTRL each particle, then return all of them in a
/// uniformly random secret order.
pub fn bob_process_randomization(
    system: &mut QuantumSystem,
    incoming: Vec<Wire>,
    policy: &ActionPolicy,
    rng: &mut SimRng,
) -> Result<BobOutput> {
    let (actions, results) = bob_choose_and_measure(system, &incoming, policy, rng)?;
    let permutation = Permutation::random(incoming.len(), rng);
    let outgoing = permutation.apply(&incoming);
    Ok(BobOutput { actions, results, permutation, outgoing })
}

/// Bob's measure-resend variant: SIFT (measure and resend) or CTRL each particle, returning them
/// in arrival order.
pub fn bob_process_measure_resend(
    system: &mut QuantumSystem,
    incoming: Vec<Wire>,
    policy: &ActionPolicy,
    rng: &mut SimRng,
) -> Result<BobOutput> {
    let (actions, results) = bob_choose_and_measure(system, &incoming, policy, rng)?;
    let permutation = Permutation::identity(incoming.len());
    Ok(BobOutput { actions, results, permutation, outgoing: incoming })
}

/// The register Alice received for each pair, once the return order is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlicePair {
    pub pair_index: usize,
    pub a: RegisterId,
    pub received: RegisterId,
}

/// First check: Bell measurement on every CTRL pair. An outcome other than
/// `expected` is an error.
pub fn alice_first_check(
    system: &mut QuantumSystem,
    records: &mut [ParticleRecord],
    pairs: &[AlicePair],
    expected: BellKind,
    rng: &mut SimRng,
) -> Result<CheckOutcome> {
    let mut errors = 0;
    let mut samples = 0;
    for (record, pair) in records.iter_mut().zip(pairs) {
        if record.bob_action != BobAction::Ctrl {
            continue;
        }
        let outcome = system.measure_bell(pair.a, pair.received, rng)?;
        record.alice_bell_outcome = Some(outcome);
        samples += 1;
        if outcome != expected {
            errors += 1;
        }
    }
    Ok(CheckOutcome::new(errors, samples))
}

/// Size of the disclosed SIFT subset.
pub fn sift_check_size(n_sift: usize, fraction: f64) -> usize {
    if n_sift == 0 {
        return 0;
    }
    ((fraction * n_sift as f64).round() as usize).clamp(1, n_sift)
}

/// Second check: Z measurement of A and B for every SIFT pair, then comparison
/// against Bob's published bits on a random subset. A checked pair is an
/// error unless Alice's B bit equals Bob's and her A bit has the parity the
/// prepared Bell state dictates.
pub fn alice_second_check(
    system: &mut QuantumSystem,
    records: &mut [ParticleRecord],
    pairs: &[AlicePair],
    bell_kind: BellKind,
    sift_check_fraction: f64,
    rng: &mut SimRng,
) -> Result<CheckOutcome> {
    let anti = matches!(bell_kind, BellKind::PsiPlus | BellKind::PsiMinus) as u8;
    let mut sift_indices = Vec::new();
    for (i, (record, pair)) in records.iter_mut().zip(pairs).enumerate() {
        if record.bob_action != BobAction::Sift {
            continue;
        }
        record.alice_a_bit = Some(system.measure_z(pair.a, rng)?);
        record.alice_b_bit = Some(system.measure_z(pair.received, rng)?);
        sift_indices.push(i);
    }
    let size = sift_check_size(sift_indices.len(), sift_check_fraction);
    let mut chosen: Vec<usize> = rand::seq::index::sample(rng, sift_indices.len(), size)
        .into_iter()
        .map(|k| sift_indices[k])
        .collect();
    chosen.sort_unstable();

    let mut errors = 0;
    for &i in &chosen {
        let r = &mut records[i];
        r.in_sift_check = true;
        let a = r.alice_a_bit.expect("measured above");
        let b = r.alice_b_bit.expect("measured above");
        let bob = r.bob_result.expect("SIFT record carries Bob's bit");
        if b != bob || a ^ b != anti {
            errors += 1;
        }
    }
    Ok(CheckOutcome::new(errors, chosen.len()))
}

/// One protocol execution. Each step checks that it runs in the right phase.
pub struct ProtocolRun<'a> {
    config: ProtocolConfig,
    attack: &'a mut dyn Attack,
    options: RunOptions,
    phase: Phase,
    system: QuantumSystem,
    alice_rng: SimRng,
    bob_rng: SimRng,
    eve_rng: SimRng,
    post_rng: SimRng,
    custody: HashSet<RegisterId>,
    pairs: Vec<PreparedPair>,
    bob: Option<BobOutput>,
    returned: Vec<Wire>,
    records: Vec<ParticleRecord>,
    announcements: Option<Announcements>,
    ctrl: Option<CheckOutcome>,
    sift_check: Option<CheckOutcome>,
    trace: Vec<TraceEvent>,
}

impl<'a> ProtocolRun<'a> {
    /// Validates the configuration and prepares the pairs.
    pub fn start(config: &ProtocolConfig, attack: &'a mut dyn Attack, options: RunOptions) -> Result<Self> {
        config.validate()?;
        let mut system = QuantumSystem::new();
        let pairs = alice_prepare(config, &mut system);
        let mut run = ProtocolRun {
            config: config.clone(),
            attack,
            options,
            phase: Phase::Prepared,
            system,
            alice_rng: stream_rng(config.seed, Stream::Alice),
            bob_rng: stream_rng(config.seed, Stream::Bob),
            eve_rng: stream_rng(config.seed, Stream::Eve),
            post_rng: stream_rng(config.seed, Stream::Postproc),
            custody: HashSet::new(),
            pairs,
            bob: None,
            returned: Vec::new(),
            records: Vec::new(),
            announcements: None,
            ctrl: None,
            sift_check: None,
            trace: Vec::new(),
        };
        for p in run.pairs.clone() {
            run.emit(TraceKind::Prepare, Some(p.pair_index), Some(p.pair_index), json!({ "bell_kind": run.config.bell_kind }));
        }
        Ok(run)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn system(&self) -> &QuantumSystem {
        &self.system
    }

    pub fn pairs(&self) -> &[PreparedPair] {
        &self.pairs
    }

    fn emit(&mut self, event: TraceKind, pair_index: Option<usize>, position: Option<usize>, payload: Value) {
        if let Some(trial) = self.options.trace {
            self.trace.push(TraceEvent { trial, event, pair_index, position, payload });
        }
    }

    fn expect(&self, step: &'static str, phase: Phase) -> Result<()> {
        if self.phase != phase {
            return Err(ProtocolError::OutOfOrder { step, phase: self.phase });
        }
        Ok(())
    }

    /// Whatever Eve puts on the wire must be something she holds; it leaves
    /// her custody.
    fn take_from_eve(&mut self, wire: &Wire) -> Result<()> {
        if self.custody.remove(&wire.register()) {
            Ok(())
        } else {
            Err(AttackError::CapabilityViolation(wire.register()).into())
        }
    }

    /// Forward leg plus Bob's processing.
    pub fn send_to_bob(&mut self) -> Result<()> {
        self.expect("send_to_bob", Phase::Prepared)?;
        let mut arrived = Vec::with_capacity(self.pairs.len());
        for i in 0..self.pairs.len() {
            let wire = Wire::new(self.pairs[i].b);
            self.custody.insert(wire.register());
            let mut lab = EveLab::new(&mut self.system, &mut self.eve_rng, &mut self.custody, None);
            let sent = self.attack.on_forward(i, wire, &mut lab)?;
            self.take_from_eve(&sent)?;
            arrived.push(sent);
            self.emit(TraceKind::Forward, Some(i), Some(i), Value::Null);
        }
        let bob = match self.config.variant {
            Variant::Randomization => {
                bob_process_randomization(&mut self.system, arrived, &self.options.policy, &mut self.bob_rng)?
            }
            Variant::MeasureResend => {
                bob_process_measure_resend(&mut self.system, arrived, &self.options.policy, &mut self.bob_rng)?
            }
        };
        for i in 0..bob.actions.len() {
            let payload = json!({ "action": bob.actions[i], "result": bob.results[i] });
            self.emit(TraceKind::BobAction, Some(i), Some(i), payload);
        }
        self.bob = Some(bob);
        self.phase = Phase::WithBob;
        Ok(())
    }

    /// Backward leg: every outgoing particle passes Eve's backward hook, which
    /// only learns the wire position.
    pub fn return_to_alice(&mut self) -> Result<()> {
        self.expect("return_to_alice", Phase::WithBob)?;
        let outgoing = self.bob.as_ref().expect("set in send_to_bob").outgoing.clone();
        for (j, wire) in outgoing.into_iter().enumerate() {
            self.custody.insert(wire.register());
            let mut lab = EveLab::new(&mut self.system, &mut self.eve_rng, &mut self.custody, None);
            let forwarded = self.attack.on_backward(j, wire, &mut lab)?;
            self.take_from_eve(&forwarded)?;
            self.returned.push(forwarded);
            self.emit(TraceKind::Return, None, Some(j), Value::Null);
        }
        self.phase = Phase::Returned;
        Ok(())
    }

    /// Alice stores the particles and confirms receipt.
    pub fn confirm_receipt(&mut self) -> Result<()> {
        self.expect("confirm_receipt", Phase::Returned)?;
        self.phase = Phase::ReceiptConfirmed;
        Ok(())
    }

    /// Bob discloses his actions and return order. Alice
    /// matches every returned particle with its partner.
    pub fn announce(&mut self) -> Result<()> {
        self.expect("announce", Phase::ReceiptConfirmed)?;
        let bob = self.bob.as_ref().expect("set in send_to_bob");
        let n = self.pairs.len();
        let mut records: Vec<ParticleRecord> = (0..n)
            .map(|i| ParticleRecord {
                pair_index: i,
                bob_action: bob.actions[i],
                bob_result: bob.results[i],
                forward_position: i,
                return_position: 0,
                alice_bell_outcome: None,
                alice_a_bit: None,
                alice_b_bit: None,
                in_sift_check: false,
            })
            .collect();
        for j in 0..n {
            records[bob.permutation.source(j)].return_position = j;
        }
        self.announcements = Some(Announcements {
            variant: self.config.variant,
            n_pairs: n,
            actions: bob.actions.clone(),
            permutation: bob.permutation.clone(),
            sift_check_subset: Vec::new(),
            bob_check_bits: Vec::new(),
        });
        let payload = json!({
            "actions": bob.actions,
            "permutation": bob.permutation.mapping(),
        });
        self.records = records;
        self.emit(TraceKind::Announce, None, None, payload);
        self.phase = Phase::Announced;
        Ok(())
    }

    fn alice_pairs(&self) -> Vec<AlicePair> {
        self.records
            .iter()
            .map(|r| AlicePair {
                pair_index: r.pair_index,
                a: self.pairs[r.pair_index].a,
                received: self.returned[r.return_position].register(),
            })
            .collect()
    }

    /// Both eavesdropping checks.
    pub fn run_checks(&mut self) -> Result<()> {
        self.expect("run_checks", Phase::Announced)?;
        let pairs = self.alice_pairs();
        let ctrl = alice_first_check(
            &mut self.system,
            &mut self.records,
            &pairs,
            self.config.bell_kind,
            &mut self.alice_rng,
        )?;
        let sift = alice_second_check(
            &mut self.system,
            &mut self.records,
            &pairs,
            self.config.bell_kind,
            self.config.sift_check_fraction,
            &mut self.alice_rng,
        )?;
        let announcements = self.announcements.as_mut().expect("announced");
        for r in self.records.iter().filter(|r| r.in_sift_check) {
            announcements.sift_check_subset.push(r.pair_index);
            announcements.bob_check_bits.push(r.bob_result.expect("SIFT"));
        }
        let payload = json!({
            "ctrl": ctrl,
            "sift": sift,
            "sift_check_subset": announcements.sift_check_subset,
        });
        self.emit(TraceKind::Check, None, None, payload);
        self.ctrl = Some(ctrl);
        self.sift_check = Some(sift);
        self.phase = Phase::Checked;
        Ok(())
    }

    /// Eve's inference, raw-key extraction and post-processing.
    pub fn finish(mut self) -> Result<(RunResult, Vec<TraceEvent>)> {
        self.expect("finish", Phase::Checked)?;
        let transcript = {
            let mut lab = EveLab::new(
                &mut self.system,
                &mut self.eve_rng,
                &mut self.custody,
                self.announcements.as_ref(),
            );
            self.attack.infer(&mut lab)?
        };
        let ctrl = self.ctrl.expect("checked");
        let sift_check = self.sift_check.expect("checked");
        let first_check_passed = ctrl.rate <= self.config.ctrl_error_threshold;
        let second_check_passed = sift_check.rate <= self.config.sift_error_threshold;
        let n_sift = self.records.iter().filter(|r| r.bob_action == BobAction::Sift).count();

        let (alice_raw_key, bob_raw_key): (Vec<u8>, Vec<u8>) = if first_check_passed && second_check_passed {
            self.records
                .iter()
                .filter(|r| r.bob_action == BobAction::Sift && !r.in_sift_check)
                .map(|r| (r.alice_b_bit.expect("SIFT"), r.bob_result.expect("SIFT")))
                .unzip()
        } else {
            (Vec::new(), Vec::new())
        };

        let final_keys = if first_check_passed && second_check_passed {
            let outcome = postproc::postprocess(
                KeyMaterial::new(alice_raw_key.clone(), KeyOrigin::RawAlice),
                KeyMaterial::new(bob_raw_key.clone(), KeyOrigin::RawBob),
                &self.config.postproc,
                &mut self.post_rng,
            )?;
            let payload = json!({
                "raw_length": alice_raw_key.len(),
                "blocks": outcome.blocks,
                "pa_seed": postproc::bits_to_hex(&outcome.pa_seed),
                "final_length": outcome.alice.bits.len(),
            });
            self.emit(TraceKind::Key, None, None, payload);
            Some(FinalKeys { alice: outcome.alice, bob: outcome.bob, discarded_blocks: outcome.discarded_blocks })
        } else {
            self.emit(TraceKind::Key, None, None, json!({ "aborted": true }));
            None
        };

        let result = RunResult {
            variant: self.config.variant,
            n_pairs: self.config.n_pairs,
            bell_kind: self.config.bell_kind,
            attack: self.attack.name().to_string(),
            seed: self.config.seed,
            ctrl,
            sift_check,
            n_ctrl: ctrl.samples,
            n_sift,
            first_check_passed,
            second_check_passed,
            alice_raw_key,
            bob_raw_key,
            final_keys,
            eve_transcript: transcript,
            records: self.records,
            announcements: self.announcements.expect("announced"),
        };
        self.phase = Phase::Finished;
        Ok((result, self.trace))
    }
}

/// Runs every step in order. Deterministic in `(config.seed, attack)`.
pub fn run_protocol(config: &ProtocolConfig, attack: &mut dyn Attack) -> Result<RunResult> {
    run_protocol_with(config, attack, RunOptions::default()).map(|(r, _)| r)
}

pub fn run_protocol_with(
    config: &ProtocolConfig,
    attack: &mut dyn Attack,
    options: RunOptions,
) -> Result<(RunResult, Vec<TraceEvent>)> {
    let mut run = ProtocolRun::start(config, attack, options)?;
    run.send_to_bob()?;
    run.return_to_alice()?;
    run.confirm_receipt()?;
    run.announce()?;
    run.run_checks()?;
    run.finish()
}
