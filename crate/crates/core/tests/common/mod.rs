#![allow(dead_code)]

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sqkd::analysis::{
    build_ctrl_state, exact_ctrl_error, extract_ctrl_coeffs, predict_ctrl_error_general, predict_ctrl_error_orthogonal,
    two_stage_ctrl_state,
};
use sqkd::attacks::{Attack, AttackError, EveLab, EveTranscript, UnitaryAttackParams, Wire};
use sqkd::postproc::{postprocess, KeyMaterial, KeyOrigin, PostprocConfig};
use sqkd::protocol::{run_protocol, Permutation, ProtocolConfig, ProtocolError, Variant};
use sqkd::qcore::{Basis, BellKind, CMatrix, Outcome, QuantumSystem, RegisterId, Role, StateVector};

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn complex_gaussianish<R: Rng>(rng: &mut R) -> Complex64 {
    // Sum of uniforms is close enough for generic random states.
    let g = |rng: &mut R| (0..6).map(|_| rng.random::<f64>()).sum::<f64>() - 3.0;
    Complex64::new(g(rng), g(rng))
}

pub fn normalize(v: &mut [Complex64]) {
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

pub fn random_state<R: Rng>(n_qubits: usize, rng: &mut R) -> StateVector {
    let mut v: Vec<Complex64> = (0..1 << n_qubits).map(|_| complex_gaussianish(rng)).collect();
    normalize(&mut v);
    StateVector::new(v).unwrap()
}

/// Gram-Schmidt on random columns.
pub fn random_unitary<R: Rng>(dim: usize, rng: &mut R) -> CMatrix {
    let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<Complex64> = (0..dim).map(|_| complex_gaussianish(rng)).collect();
        for c in &cols {
            let ip: Complex64 = c.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
            v.iter_mut().zip(c).for_each(|(y, x)| *y -= ip * x);
        }
        if v.iter().map(|x| x.norm_sqr()).sum::<f64>() > 1e-6 {
            normalize(&mut v);
            cols.push(v);
        }
    }
    CMatrix::from_columns(&cols)
}

fn pick_distinct<R: Rng>(ids: &[RegisterId], k: usize, rng: &mut R) -> Vec<RegisterId> {
    rand::seq::index::sample(rng, ids.len(), k).into_iter().map(|i| ids[i]).collect()
}

fn check_norms(system: &QuantumSystem, expected_registers: usize) -> Check {
    let total: usize = system.groups().map(|g| g.len()).sum();
    if total != expected_registers || system.register_count() != expected_registers {
        return Err(format!("register count {total} / {} != {expected_registers}", system.register_count()));
    }
    for g in system.groups() {
        let n = g.state().norm_sqr();
        if (n - 1.0).abs() > 1e-9 {
            return Err(format!("group norm {n}"));
        }
    }
    Ok(())
}

/// A random sequence of allocations, unitaries and measurements keeps every
/// group normalized and every register accounted for.
pub fn random_operation_sequence(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut system = QuantumSystem::new();
    let mut ids: Vec<RegisterId> = Vec::new();
    for step in 0..40 {
        match rng.random_range(0..6) {
            0 => {
                let kind = BellKind::ALL[rng.random_range(0..4)];
                let (a, b) = system.new_bell_pair(kind, step);
                ids.extend([a, b]);
            }
            1 => ids.push(system.add_qubit(Role::EveProbe, None, rng.random_range(0..2))),
            2 | 3 if !ids.is_empty() => {
                let k = rng.random_range(1..=ids.len().min(3));
                let targets = pick_distinct(&ids, k, &mut rng);
                let u = random_unitary(1 << k, &mut rng);
                if u.unitarity_deviation() > 1e-9 {
                    return Err(format!("generated unitary deviates by {}", u.unitarity_deviation()));
                }
                system.apply_unitary(&targets, &u).map_err(|e| e.to_string())?;
            }
            4 if !ids.is_empty() => {
                let t = ids[rng.random_range(0..ids.len())];
                let bit = system.measure_z(t, &mut rng).map_err(|e| e.to_string())?;
                if bit > 1 {
                    return Err(format!("Z outcome {bit}"));
                }
            }
            5 if ids.len() >= 2 => {
                let t = pick_distinct(&ids, 2, &mut rng);
                system.measure_bell(t[0], t[1], &mut rng).map_err(|e| e.to_string())?;
            }
            _ => {}
        }
        check_norms(&system, ids.len()).map_err(|e| format!("seed {seed} step {step}: {e}"))?;
    }
    let bad = CMatrix::from_real_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
    if let Some(&t) = ids.first() {
        if system.apply_unitary(&[t], &bad).is_ok() {
            return Err("non-unitary matrix accepted".into());
        }
    }
    Ok(())
}

/// Sampled frequencies of a random 3-qubit state agree with the Born
/// distribution within 4 standard deviations, in both bases.
pub fn born_vs_sampling(seed: u64, shots: usize) -> Check {
    let mut rng = rng(seed);
    let mut system = QuantumSystem::new();
    let ids = system.add_state(Role::A, None, random_state(3, &mut rng));
    let checks: [(Vec<RegisterId>, Basis); 2] = [(ids.clone(), Basis::Z), (vec![ids[0], ids[2]], Basis::Bell)];
    for (targets, basis) in checks {
        let oracle = system.born_distribution(&targets, basis).map_err(|e| e.to_string())?;
        let sum: f64 = oracle.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("Born distribution sums to {sum}"));
        }
        let mut counts: BTreeMap<Outcome, usize> = BTreeMap::new();
        for _ in 0..shots {
            let mut s = system.clone();
            let outcome = match basis {
                Basis::Z => Outcome::Bits(targets.iter().map(|&t| s.measure_z(t, &mut rng).unwrap()).collect()),
                Basis::Bell => Outcome::Bell(s.measure_bell(targets[0], targets[1], &mut rng).unwrap()),
            };
            *counts.entry(outcome).or_default() += 1;
        }
        for (outcome, p) in &oracle {
            let f = *counts.get(outcome).unwrap_or(&0) as f64 / shots as f64;
            let sigma = (p * (1.0 - p) / shots as f64).sqrt().max(1.0 / shots as f64);
            if (f - p).abs() > 4.0 * sigma {
                return Err(format!("seed {seed} {basis:?} {outcome:?}: sampled {f}, Born {p}"));
            }
        }
        if counts.keys().any(|k| !oracle.contains_key(k)) {
            return Err("sampled an outcome outside the distribution".into());
        }
    }
    Ok(())
}

pub fn permutation_round_trip(seed: u64, n: usize) -> Check {
    let mut rng = rng(seed);
    let p = Permutation::random(n, &mut rng);
    let items: Vec<usize> = (100..100 + n).collect();
    let there = p.apply(&items);
    if p.inverse().apply(&there) != items {
        return Err(format!("inverse does not undo permutation {:?}", p.mapping()));
    }
    let mut sorted = p.mapping().to_vec();
    sorted.sort_unstable();
    if sorted != (0..n).collect::<Vec<_>>() {
        return Err("mapping is not a bijection".into());
    }
    Ok(())
}

/// What a hostile eavesdropper tries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hostility {
    MeasureAForward,
    EntangleWithA,
    SendA,
    ReplayEarlierWire,
    MeasureAInInfer,
}

pub struct HostileAttack {
    pub mode: Hostility,
    pub stash: Option<Wire>,
}

impl HostileAttack {
    pub fn new(mode: Hostility) -> Self {
        HostileAttack { mode, stash: None }
    }
}

/// Alice's A register of pair `i` is allocated right before its B partner.
fn a_of(wire: &Wire) -> RegisterId {
    RegisterId::from_raw(wire.register().raw() - 1)
}

impl Attack for HostileAttack {
    fn name(&self) -> &str {
        "hostile"
    }

    fn on_forward(&mut self, position: usize, wire: Wire, lab: &mut EveLab<'_>) -> Result<Wire, AttackError> {
        match self.mode {
            Hostility::MeasureAForward => {
                lab.measure_z(a_of(&wire))?;
            }
            Hostility::EntangleWithA => {
                lab.apply_unitary(&[wire.register(), a_of(&wire)], &CMatrix::cnot())?;
            }
            Hostility::SendA => return lab.send(a_of(&wire)),
            Hostility::ReplayEarlierWire if position == 0 => self.stash = Some(wire.clone()),
            _ => {}
        }
        Ok(wire)
    }

    fn on_backward(&mut self, _position: usize, wire: Wire, _lab: &mut EveLab<'_>) -> Result<Wire, AttackError> {
        match &self.stash {
            Some(old) if old.register() != wire.register() => Ok(old.clone()),
            _ => Ok(wire),
        }
    }

    fn infer(&mut self, lab: &mut EveLab<'_>) -> Result<EveTranscript, AttackError> {
        if self.mode == Hostility::MeasureAInInfer {
            lab.measure_z(RegisterId::from_raw(0))?;
        }
        Ok(EveTranscript::indeterminate(lab.announcements().map_or(0, |a| a.n_pairs)))
    }
}

/// Every hostile mode ends in a capability violation.
pub fn capability_confinement() -> Check {
    use Hostility::*;
    for variant in [Variant::Randomization, Variant::MeasureResend] {
        for mode in [MeasureAForward, EntangleWithA, SendA, ReplayEarlierWire, MeasureAInInfer] {
            let config = ProtocolConfig { n_pairs: 4, variant, seed: 9, ..ProtocolConfig::default() };
            let mut attack = HostileAttack::new(mode);
            match run_protocol(&config, &mut attack) {
                Err(ProtocolError::Attack(AttackError::CapabilityViolation(_))) => {}
                other => return Err(format!("{variant:?}/{mode:?}: expected capability violation, got {other:?}")),
            }
        }
    }
    Ok(())
}

pub fn random_backward_params<R: Rng>(rng: &mut R) -> UnitaryAttackParams {
    let phase = |rng: &mut R| Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
    let t1: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
    let t2: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
    UnitaryAttackParams::with_orthogonal_probes(
        t1.cos() * phase(rng),
        t1.sin() * phase(rng),
        t2.sin() * phase(rng),
        t2.cos() * phase(rng),
    )
}

/// Exact Born-rule CTRL error against the closed forms, to 1e-9.
pub fn oracle_agreement(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (a, b) = (RegisterId::from_raw(0), RegisterId::from_raw(1));

    // Two-stage attack with orthogonal backward probes: orthogonal formula exact.
    let back = random_backward_params(&mut rng);
    let g = two_stage_ctrl_state(BellKind::PhiPlus, &UnitaryAttackParams::identity(), &back).map_err(|e| e.to_string())?;
    let exact = exact_ctrl_error(&g, a, b, BellKind::PhiPlus).map_err(|e| e.to_string())?;
    let coeffs = extract_ctrl_coeffs(&g, a, b).map_err(|e| e.to_string())?;
    let formula = 1.0 - (back.alpha.norm_sqr() + back.alpha_p.norm_sqr()) / 4.0;
    let from_coeffs = predict_ctrl_error_orthogonal(&coeffs);
    if (exact - formula).abs() > 1e-9 || (from_coeffs.rate - formula).abs() > 1e-9 || from_coeffs.overlap_warning {
        return Err(format!("seed {seed}: exact {exact}, formula {formula}, extracted {from_coeffs:?}"));
    }

    // Arbitrary probes: the general formula is exact and the orthogonal one
    // is off by exactly Re(γ*γ'<ε'00|ε'11>)/2.
    let mut coeffs4: Vec<Complex64> = (0..4).map(|_| complex_gaussianish(&mut rng)).collect();
    normalize(&mut coeffs4);
    coeffs4.iter_mut().for_each(|c| *c *= std::f64::consts::SQRT_2);
    let probes: [Vec<Complex64>; 4] = std::array::from_fn(|_| random_state(2, &mut rng).amplitudes().to_vec());
    let g = build_ctrl_state([coeffs4[0], coeffs4[1], coeffs4[2], coeffs4[3]], &probes).map_err(|e| e.to_string())?;
    let exact = exact_ctrl_error(&g, a, b, BellKind::PhiPlus).map_err(|e| e.to_string())?;
    let c = extract_ctrl_coeffs(&g, a, b).map_err(|e| e.to_string())?;
    let general = predict_ctrl_error_general(&c);
    let orth = predict_ctrl_error_orthogonal(&c).rate;
    let gap = (c.gamma.conj() * c.gamma_p * c.probe_overlap_00_11).re / 2.0;
    if (exact - general).abs() > 1e-9 || ((orth - exact) - gap).abs() > 1e-9 {
        return Err(format!("seed {seed}: exact {exact}, general {general}, orthogonal {orth}, gap {gap}"));
    }
    let direct: Complex64 = probes[0].iter().zip(&probes[3]).map(|(x, y)| x.conj() * y).sum();
    if (c.probe_overlap_00_11.norm() - direct.norm()).abs() > 1e-9 {
        return Err(format!("seed {seed}: extracted overlap {} vs {}", c.probe_overlap_00_11, direct));
    }
    Ok(())
}

/// Equal raw keys give equal final keys; a single disagreement is always
/// removed by reconciliation.
pub fn postproc_agreement(seed: u64) -> Check {
    let mut rng = rng(seed);
    let n = rng.random_range(0..400);
    let bits: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let mut bob = bits.clone();
    if n > 0 {
        let i = rng.random_range(0..n);
        bob[i] ^= 1;
    }
    for (a, b) in [(bits.clone(), bits.clone()), (bits, bob)] {
        let out = postprocess(
            KeyMaterial::new(a, KeyOrigin::RawAlice),
            KeyMaterial::new(b, KeyOrigin::RawBob),
            &PostprocConfig::default(),
            &mut rng,
        )
        .map_err(|e| e.to_string())?;
        if out.alice.bits != out.bob.bits {
            return Err(format!("seed {seed}: final keys differ"));
        }
    }
    Ok(())
}

pub fn run_many(seeds: std::ops::Range<u64>, f: impl Fn(u64) -> Check) -> Check {
    seeds.into_iter().try_for_each(f)
}
