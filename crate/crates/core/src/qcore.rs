//! Exact state-vector mechanics for small composite systems.
//!
//! A [`SystemGroup`] is a set of labelled qubit registers sharing one
//! normalized amplitude vector. Register order is tensor-factor order with the
//! first register as the most significant qubit of the basis index, so a group
//! `[A, B]` holding amplitudes `(a00, a01, a10, a11)` means
//! `a00|00⟩ + a01|01⟩ + a10|10⟩ + a11|11⟩` with A on the left.
//!
//! [`QuantumSystem`] keeps every live register of a run partitioned into
//! groups. Groups are only tensored together when an operation spans them, and
//! measured registers are factored back out afterwards, so group dimension
//! stays small no matter how many pairs a run holds.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for every unitarity and normalization check.
pub const TOLERANCE: f64 = 1e-9;

/// Entries this small are treated as zero when factoring a state.
const FACTOR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("matrix is not unitary: max |(U†U - I)_jk| = {deviation:.3e}")]
    NonUnitary { deviation: f64 },
    #[error("matrix of dimension {dim} cannot act on {targets} target qubit(s)")]
    DimensionMismatch { dim: usize, targets: usize },
    #[error("register {0} is not part of this group")]
    UnknownRegister(RegisterId),
    #[error("register {0} listed more than once")]
    DuplicateRegister(RegisterId),
    #[error("cannot merge a group with itself")]
    SameGroup,
    #[error("Bell-basis distribution needs exactly 2 targets, got {0}")]
    BellArity(usize),
    #[error("amplitude vector of length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("amplitude vector holds {amps} entries for {registers} register(s)")]
    RegisterCountMismatch { amps: usize, registers: usize },
    #[error("state is not normalized: norm² = {0}")]
    NotNormalized(f64),
}

pub type Result<T> = std::result::Result<T, QuantumError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegisterId(u64);

impl RegisterId {
    /// Builds an id from its raw value. Ids are only meaningful inside the
    /// [`QuantumSystem`] that issued them.
    pub fn from_raw(raw: u64) -> Self {
        RegisterId(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    A,
    B,
    EveProbe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Register {
    pub id: RegisterId,
    pub role: Role,
    /// Bell pair this register was prepared with; `None` for Eve's registers.
    pub pair_index: Option<usize>,
}

/// The four Bell states, used both as preparation choices and as outcomes of
/// a Bell-basis measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BellKind {
    /// (|00⟩ + |11⟩)/√2
    PhiPlus,
    /// (|00⟩ - |11⟩)/√2
    PhiMinus,
    /// (|01⟩ + |10⟩)/√2
    PsiPlus,
    /// (|01⟩ - |10⟩)/√2
    PsiMinus,
}

impl BellKind {
    pub const ALL: [BellKind; 4] = [
        BellKind::PhiPlus,
        BellKind::PhiMinus,
        BellKind::PsiPlus,
        BellKind::PsiMinus,
    ];

    pub fn index(self) -> usize {
        match self {
            BellKind::PhiPlus => 0,
            BellKind::PhiMinus => 1,
            BellKind::PsiPlus => 2,
            BellKind::PsiMinus => 3,
        }
    }

    /// Amplitudes over |00⟩, |01⟩, |10⟩, |11⟩.
    pub fn amplitudes(self) -> [Complex64; 4] {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        let z = Complex64::new(0.0, 0.0);
        match self {
            BellKind::PhiPlus => [h, z, z, h],
            BellKind::PhiMinus => [h, z, z, -h],
            BellKind::PsiPlus => [z, h, h, z],
            BellKind::PsiMinus => [z, h, -h, z],
        }
    }
}

impl fmt::Display for BellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BellKind::PhiPlus => "phi+",
            BellKind::PhiMinus => "phi-",
            BellKind::PsiPlus => "psi+",
            BellKind::PsiMinus => "psi-",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Z,
    Bell,
}

/// A measurement outcome in a [`born_distribution`](SystemGroup::born_distribution) map.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    /// Z-basis bits, one per target in target order.
    Bits(Vec<u8>),
    Bell(BellKind),
}

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        CMatrix {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Panics if the rows do not form a square matrix.
    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            assert_eq!(row.len(), dim, "matrix rows must be square");
            data.extend(row);
        }
        CMatrix { dim, data }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&x| Complex64::new(x, 0.0)).collect())
                .collect(),
        )
    }

    /// Builds a matrix whose `c`-th column is `columns[c]`.
    pub fn from_columns(columns: &[Vec<Complex64>]) -> Self {
        let dim = columns.len();
        let mut m = Self::zeros(dim);
        for (c, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), dim, "matrix columns must be square");
            for (r, &v) in col.iter().enumerate() {
                m.data[r * dim + c] = v;
            }
        }
        m
    }

    /// CNOT with the first qubit as control.
    pub fn cnot() -> Self {
        Self::from_real_rows(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
            &[0.0, 0.0, 1.0, 0.0],
        ])
    }

    pub fn hadamard() -> Self {
        Self::from_real_rows(&[&[FRAC_1_SQRT_2, FRAC_1_SQRT_2], &[FRAC_1_SQRT_2, -FRAC_1_SQRT_2]])
    }

    pub fn pauli_x() -> Self {
        Self::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.dim + col] = value;
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros(self.dim);
        for r in 0..self.dim {
            for c in 0..self.dim {
                m.data[c * self.dim + r] = self.get(r, c).conj();
            }
        }
        m
    }

    /// Panics on dimension mismatch.
    pub fn matmul(&self, other: &CMatrix) -> Self {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut m = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..n {
                    m.data[r * n + c] += a * other.data[k * n + c];
                }
            }
        }
        m
    }

    pub fn kron(&self, other: &CMatrix) -> Self {
        let n = self.dim * other.dim;
        let mut m = Self::zeros(n);
        for r1 in 0..self.dim {
            for c1 in 0..self.dim {
                let a = self.get(r1, c1);
                for r2 in 0..other.dim {
                    for c2 in 0..other.dim {
                        m.set(r1 * other.dim + r2, c1 * other.dim + c2, a * other.get(r2, c2));
                    }
                }
            }
        }
        m
    }

    /// `max |(U†U - I)_jk|`.
    pub fn unitarity_deviation(&self) -> f64 {
        let p = self.adjoint().matmul(self);
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for c in 0..self.dim {
                let expected = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((p.get(r, c) - Complex64::new(expected, 0.0)).norm());
            }
        }
        worst
    }

    pub fn check_unitary(&self) -> Result<()> {
        let deviation = self.unitarity_deviation();
        if deviation > TOLERANCE {
            Err(QuantumError::NonUnitary { deviation })
        } else {
            Ok(())
        }
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.get(r, c) * v[c]).sum())
            .collect()
    }
}

/// Normalized amplitude vector over `2^n` basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: Vec<Complex64>,
}

impl StateVector {
    /// Validates length and normalization.
    pub fn new(amps: Vec<Complex64>) -> Result<Self> {
        if !amps.len().is_power_of_two() {
            return Err(QuantumError::NotPowerOfTwo(amps.len()));
        }
        let norm = norm_sqr(&amps);
        if (norm - 1.0).abs() > TOLERANCE {
            return Err(QuantumError::NotNormalized(norm));
        }
        Ok(StateVector { amps })
    }

    /// Computational basis state `|index⟩` on `n_qubits` qubits.
    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[index] = Complex64::new(1.0, 0.0);
        StateVector { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn n_qubits(&self) -> usize {
        self.amps.len().trailing_zeros() as usize
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amps)
    }

    pub fn kron(&self, other: &StateVector) -> StateVector {
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for &a in &self.amps {
            for &b in &other.amps {
                amps.push(a * b);
            }
        }
        StateVector { amps }
    }
}

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum()
}

/// Picks an index with probability proportional to `weights`, never one whose
/// weight is zero.
pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last_nonzero = i;
        acc += w;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}

/// Registers sharing one state vector.
/// Sparse amplitudes of one conditional branch, keyed by basis index.
type Branch = Vec<(usize, Complex64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemGroup {
    registers: Vec<Register>,
    state: StateVector,
}

impl SystemGroup {
    pub fn new(registers: Vec<Register>, state: StateVector) -> Result<Self> {
        if state.dim() != 1 << registers.len() {
            return Err(QuantumError::RegisterCountMismatch {
                amps: state.dim(),
                registers: registers.len(),
            });
        }
        for (i, r) in registers.iter().enumerate() {
            if registers[..i].iter().any(|o| o.id == r.id) {
                return Err(QuantumError::DuplicateRegister(r.id));
            }
        }
        Ok(SystemGroup { registers, state })
    }

    /// A two-register group `[a, b]` holding the requested Bell state.
    pub fn bell_pair(kind: BellKind, a: Register, b: Register) -> Result<Self> {
        Self::new(vec![a, b], StateVector { amps: kind.amplitudes().to_vec() })
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        self.state.amplitudes()
    }

    pub fn len(&self) -> usize {
        self.registers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registers.is_empty()
    }

    pub fn contains(&self, id: RegisterId) -> bool {
        self.registers.iter().any(|r| r.id == id)
    }

    pub fn position(&self, id: RegisterId) -> Result<usize> {
        self.registers
            .iter()
            .position(|r| r.id == id)
            .ok_or(QuantumError::UnknownRegister(id))
    }

    /// Bit shift of a register inside the basis index.
    fn shift(&self, id: RegisterId) -> Result<usize> {
        Ok(self.registers.len() - 1 - self.position(id)?)
    }

    fn shifts(&self, targets: &[RegisterId]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(targets.len());
        for (i, &t) in targets.iter().enumerate() {
            if targets[..i].contains(&t) {
                return Err(QuantumError::DuplicateRegister(t));
            }
            out.push(self.shift(t)?);
        }
        Ok(out)
    }

    /// Tensor product `self ⊗ other`; register order is self's then other's.
    pub fn merge(self, other: SystemGroup) -> Result<SystemGroup> {
        if other.registers.iter().any(|r| self.contains(r.id)) {
            return Err(QuantumError::SameGroup);
        }
        let state = self.state.kron(&other.state);
        let mut registers = self.registers;
        registers.extend(other.registers);
        Ok(SystemGroup { registers, state })
    }

    /// Applies `u` to the target factors, identity elsewhere. The first
    /// target is the most significant qubit of `u`'s index.
    pub fn apply_unitary(&mut self, targets: &[RegisterId], u: &CMatrix) -> Result<()> {
        let shifts = self.shifts(targets)?;
        if u.dim() != 1 << targets.len() {
            return Err(QuantumError::DimensionMismatch { dim: u.dim(), targets: targets.len() });
        }
        u.check_unitary()?;

        let k = targets.len();
        let target_mask: usize = shifts.iter().map(|s| 1 << s).sum();
        let offsets: Vec<usize> = (0..1usize << k)
            .map(|m| {
                (0..k)
                    .filter(|i| m >> (k - 1 - i) & 1 == 1)
                    .map(|i| 1 << shifts[i])
                    .sum()
            })
            .collect();

        let amps = &mut self.state.amps;
        let mut local = vec![Complex64::new(0.0, 0.0); 1 << k];
        for base in 0..amps.len() {
            if base & target_mask != 0 {
                continue;
            }
            for (m, off) in offsets.iter().enumerate() {
                local[m] = amps[base | off];
            }
            let out = u.apply(&local);
            for (m, off) in offsets.iter().enumerate() {
                amps[base | off] = out[m];
            }
        }
        Ok(())
    }

    /// Probabilities of each Z-basis outcome on `targets`, indexed with the
    /// first target as most significant bit.
    pub fn z_probabilities(&self, targets: &[RegisterId]) -> Result<Vec<f64>> {
        let shifts = self.shifts(targets)?;
        let k = targets.len();
        let mut probs = vec![0.0; 1 << k];
        for (idx, a) in self.state.amps.iter().enumerate() {
            let outcome = shifts
                .iter()
                .fold(0usize, |acc, &s| (acc << 1) | (idx >> s & 1));
            probs[outcome] += a.norm_sqr();
        }
        Ok(probs)
    }

    /// For each Bell state, the unnormalized conditional state of the other
    /// registers, indexed by the full basis index with r1 and r2 cleared.
    fn bell_branches(&self, r1: RegisterId, r2: RegisterId) -> Result<(usize, usize, [Branch; 4])> {
        if r1 == r2 {
            return Err(QuantumError::DuplicateRegister(r1));
        }
        let s1 = self.shift(r1)?;
        let s2 = self.shift(r2)?;
        let mask = (1 << s1) | (1 << s2);
        let amps = &self.state.amps;
        let mut branches: [Branch; 4] = Default::default();
        for (b, kind) in BellKind::ALL.iter().enumerate() {
            let bell = kind.amplitudes();
            for base in (0..amps.len()).filter(|i| i & mask == 0) {
                let mut acc = Complex64::new(0.0, 0.0);
                for (xy, coeff) in bell.iter().enumerate() {
                    let idx = base | ((xy >> 1) << s1) | ((xy & 1) << s2);
                    acc += coeff.conj() * amps[idx];
                }
                branches[b].push((base, acc));
            }
        }
        Ok((s1, s2, branches))
    }

    /// Bell-basis outcome probabilities for (r1, r2), in [`BellKind::ALL`] order.
    pub fn bell_probabilities(&self, r1: RegisterId, r2: RegisterId) -> Result<[f64; 4]> {
        let (_, _, branches) = self.bell_branches(r1, r2)?;
        let mut probs = [0.0; 4];
        for (p, branch) in probs.iter_mut().zip(branches.iter()) {
            *p = branch.iter().map(|(_, a)| a.norm_sqr()).sum();
        }
        Ok(probs)
    }

    /// Exact outcome probabilities; the state is not touched.
    pub fn born_distribution(&self, targets: &[RegisterId], basis: Basis) -> Result<BTreeMap<Outcome, f64>> {
        match basis {
            Basis::Z => {
                let probs = self.z_probabilities(targets)?;
                let k = targets.len();
                Ok(probs
                    .into_iter()
                    .enumerate()
                    .map(|(m, p)| {
                        let bits = (0..k).map(|i| (m >> (k - 1 - i) & 1) as u8).collect();
                        (Outcome::Bits(bits), p)
                    })
                    .collect())
            }
            Basis::Bell => {
                if targets.len() != 2 {
                    return Err(QuantumError::BellArity(targets.len()));
                }
                let probs = self.bell_probabilities(targets[0], targets[1])?;
                Ok(BellKind::ALL
                    .iter()
                    .map(|&k| (Outcome::Bell(k), probs[k.index()]))
                    .collect())
            }
        }
    }

    /// The branch where `target` reads `bit`: its probability and the
    /// renormalized post-measurement group. `None` if the branch is empty.
    pub fn project_z(&self, target: RegisterId, bit: u8) -> Result<Option<(f64, SystemGroup)>> {
        let s = self.shift(target)?;
        let mut amps = self.state.amps.clone();
        for (idx, a) in amps.iter_mut().enumerate() {
            if (idx >> s & 1) as u8 != bit {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        let p = norm_sqr(&amps);
        if p <= 0.0 {
            return Ok(None);
        }
        let scale = 1.0 / p.sqrt();
        amps.iter_mut().for_each(|a| *a *= scale);
        Ok(Some((p, SystemGroup { registers: self.registers.clone(), state: StateVector { amps } })))
    }

    /// Born-rule Z measurement. Non-demolition: the register stays in the
    /// group in its post-measurement eigenstate.
    pub fn measure_z<R: Rng + ?Sized>(&mut self, target: RegisterId, rng: &mut R) -> Result<u8> {
        let probs = self.z_probabilities(&[target])?;
        let bit = sample_index(&probs, rng) as u8;
        let (_, collapsed) = self
            .project_z(target, bit)?
            .expect("sampled branch has nonzero probability");
        self.state = collapsed.state;
        Ok(bit)
    }

    /// Born-rule Bell measurement on (r1, r2). The pair is left in the
    /// observed Bell state, tensored with the conditional state of the rest.
    pub fn measure_bell<R: Rng + ?Sized>(&mut self, r1: RegisterId, r2: RegisterId, rng: &mut R) -> Result<BellKind> {
        let (s1, s2, branches) = self.bell_branches(r1, r2)?;
        let probs: Vec<f64> = branches
            .iter()
            .map(|b| b.iter().map(|(_, a)| a.norm_sqr()).sum())
            .collect();
        let which = sample_index(&probs, rng);
        let kind = BellKind::ALL[which];
        let bell = kind.amplitudes();
        let scale = 1.0 / probs[which].sqrt();
        let amps = &mut self.state.amps;
        amps.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        for &(base, rest) in &branches[which] {
            for (xy, coeff) in bell.iter().enumerate() {
                let idx = base | ((xy >> 1) << s1) | ((xy & 1) << s2);
                amps[idx] = coeff * rest * scale;
            }
        }
        Ok(kind)
    }

    /// Factors `ids` out into their own group when the state is an exact
    /// product across that cut. Returns `None` (and leaves `self` intact)
    /// otherwise, or when `ids` covers the whole group.
    pub fn split_off(&mut self, ids: &[RegisterId]) -> Result<Option<SystemGroup>> {
        let shifts = self.shifts(ids)?;
        if ids.is_empty() || ids.len() == self.registers.len() {
            return Ok(None);
        }
        let n = self.registers.len();
        let k = ids.len();
        let out_mask: usize = shifts.iter().map(|s| 1 << s).sum();
        let rest_shifts: Vec<usize> = (0..n).rev().filter(|s| out_mask >> s & 1 == 0).collect();

        // Reshape into M[out][rest].
        let compress = |idx: usize, sh: &[usize]| sh.iter().fold(0usize, |acc, &s| (acc << 1) | (idx >> s & 1));
        let rows = 1 << k;
        let cols = 1 << (n - k);
        let mut m = vec![Complex64::new(0.0, 0.0); rows * cols];
        for (idx, &a) in self.state.amps.iter().enumerate() {
            m[compress(idx, &shifts) * cols + compress(idx, &rest_shifts)] = a;
        }

        let (pivot, _) = m
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.norm_sqr().total_cmp(&y.1.norm_sqr()))
            .expect("non-empty state");
        let (r0, c0) = (pivot / cols, pivot % cols);
        let p = m[pivot];
        let left: Vec<Complex64> = (0..rows).map(|r| m[r * cols + c0]).collect();
        let right: Vec<Complex64> = (0..cols).map(|c| m[r0 * cols + c] / p).collect();
        for r in 0..rows {
            for c in 0..cols {
                if (m[r * cols + c] - left[r] * right[c]).norm() > FACTOR_TOLERANCE {
                    return Ok(None);
                }
            }
        }
        let normalize = |v: Vec<Complex64>| {
            let s = 1.0 / norm_sqr(&v).sqrt();
            v.into_iter().map(|a| a * s).collect::<Vec<_>>()
        };
        let left = normalize(left);
        let right = normalize(right);

        // Registers of each factor keep their relative order.
        let mut out_regs = Vec::with_capacity(k);
        let mut rest_regs = Vec::with_capacity(n - k);
        for r in &self.registers {
            if ids.contains(&r.id) {
                out_regs.push(*r);
            } else {
                rest_regs.push(*r);
            }
        }
        // The order of `ids` may differ from group order; permute the factor
        // amplitudes to follow group order.
        let order: Vec<usize> = out_regs
            .iter()
            .map(|r| ids.iter().position(|&i| i == r.id).expect("present"))
            .collect();
        let mut out_amps = vec![Complex64::new(0.0, 0.0); rows];
        for (m_idx, &a) in left.iter().enumerate() {
            // m_idx has ids[0] as most significant bit.
            let idx = order
                .iter()
                .fold(0usize, |acc, &pos| (acc << 1) | (m_idx >> (k - 1 - pos) & 1));
            out_amps[idx] = a;
        }

        self.registers = rest_regs;
        self.state = StateVector { amps: right };
        Ok(Some(SystemGroup { registers: out_regs, state: StateVector { amps: out_amps } }))
    }
}

/// All live registers of one simulation run, partitioned into groups.
#[derive(Debug, Clone, Default)]
pub struct QuantumSystem {
    groups: BTreeMap<u64, SystemGroup>,
    owner: HashMap<RegisterId, u64>,
    next_register: u64,
    next_group: u64,
}

impl QuantumSystem {
    pub fn new() -> Self {
        Self::default()
    }

    fn fresh_register(&mut self, role: Role, pair_index: Option<usize>) -> Register {
        let id = RegisterId(self.next_register);
        self.next_register += 1;
        Register { id, role, pair_index }
    }

    fn insert(&mut self, group: SystemGroup) -> u64 {
        let gid = self.next_group;
        self.next_group += 1;
        for r in &group.registers {
            self.owner.insert(r.id, gid);
        }
        self.groups.insert(gid, group);
        gid
    }

    /// Prepares a Bell pair and returns (A, B).
    pub fn new_bell_pair(&mut self, kind: BellKind, pair_index: usize) -> (RegisterId, RegisterId) {
        let a = self.fresh_register(Role::A, Some(pair_index));
        let b = self.fresh_register(Role::B, Some(pair_index));
        let group = SystemGroup::bell_pair(kind, a, b).expect("two registers, four amplitudes");
        self.insert(group);
        (a.id, b.id)
    }

    /// Prepares `state` on fresh registers that all carry `role`.
    pub fn add_state(&mut self, role: Role, pair_index: Option<usize>, state: StateVector) -> Vec<RegisterId> {
        let registers: Vec<Register> = (0..state.n_qubits())
            .map(|_| self.fresh_register(role, pair_index))
            .collect();
        let ids = registers.iter().map(|r| r.id).collect();
        self.insert(SystemGroup { registers, state });
        ids
    }

    pub fn add_qubit(&mut self, role: Role, pair_index: Option<usize>, bit: u8) -> RegisterId {
        self.add_state(role, pair_index, StateVector::basis(1, bit as usize))[0]
    }

    pub fn register(&self, id: RegisterId) -> Result<&Register> {
        let group = self.group_of(id)?;
        Ok(&group.registers[group.position(id)?])
    }

    pub fn group_of(&self, id: RegisterId) -> Result<&SystemGroup> {
        let gid = self.owner.get(&id).ok_or(QuantumError::UnknownRegister(id))?;
        Ok(&self.groups[gid])
    }

    pub fn groups(&self) -> impl Iterator<Item = &SystemGroup> {
        self.groups.values()
    }

    pub fn register_count(&self) -> usize {
        self.owner.len()
    }

    /// Merges the groups holding `ids` (in order of first appearance) and
    /// returns the id of the joint group.
    fn joint(&mut self, ids: &[RegisterId]) -> Result<u64> {
        let mut gids: Vec<u64> = Vec::new();
        for id in ids {
            let gid = *self.owner.get(id).ok_or(QuantumError::UnknownRegister(*id))?;
            if !gids.contains(&gid) {
                gids.push(gid);
            }
        }
        let first = gids[0];
        if gids.len() == 1 {
            return Ok(first);
        }
        let mut merged = self.groups.remove(&first).expect("owned group exists");
        for gid in &gids[1..] {
            let g = self.groups.remove(gid).expect("owned group exists");
            merged = merged.merge(g)?;
        }
        for r in &merged.registers {
            self.owner.insert(r.id, first);
        }
        self.groups.insert(first, merged);
        Ok(first)
    }

    fn split(&mut self, gid: u64, ids: &[RegisterId]) -> Result<()> {
        let group = self.groups.get_mut(&gid).expect("group exists");
        if let Some(part) = group.split_off(ids)? {
            self.insert(part);
        }
        Ok(())
    }

    pub fn apply_unitary(&mut self, targets: &[RegisterId], u: &CMatrix) -> Result<()> {
        // Validate before merging so a rejected matrix leaves the partition alone.
        if u.dim() != 1 << targets.len() {
            return Err(QuantumError::DimensionMismatch { dim: u.dim(), targets: targets.len() });
        }
        u.check_unitary()?;
        let gid = self.joint(targets)?;
        self.groups.get_mut(&gid).expect("group exists").apply_unitary(targets, u)
    }

    pub fn measure_z<R: Rng + ?Sized>(&mut self, target: RegisterId, rng: &mut R) -> Result<u8> {
        let gid = *self.owner.get(&target).ok_or(QuantumError::UnknownRegister(target))?;
        let bit = self.groups.get_mut(&gid).expect("group exists").measure_z(target, rng)?;
        self.split(gid, &[target])?;
        Ok(bit)
    }

    pub fn measure_bell<R: Rng + ?Sized>(&mut self, r1: RegisterId, r2: RegisterId, rng: &mut R) -> Result<BellKind> {
        if r1 == r2 {
            return Err(QuantumError::DuplicateRegister(r1));
        }
        let gid = self.joint(&[r1, r2])?;
        let kind = self.groups.get_mut(&gid).expect("group exists").measure_bell(r1, r2, rng)?;
        self.split(gid, &[r1, r2])?;
        Ok(kind)
    }

    /// A standalone copy of the joint state of every group touching `ids`.
    pub fn joint_snapshot(&self, ids: &[RegisterId]) -> Result<SystemGroup> {
        let mut gids: Vec<u64> = Vec::new();
        for id in ids {
            let gid = *self.owner.get(id).ok_or(QuantumError::UnknownRegister(*id))?;
            if !gids.contains(&gid) {
                gids.push(gid);
            }
        }
        let mut merged = self.groups[&gids[0]].clone();
        for gid in &gids[1..] {
            merged = merged.merge(self.groups[gid].clone())?;
        }
        Ok(merged)
    }

    pub fn born_distribution(&self, targets: &[RegisterId], basis: Basis) -> Result<BTreeMap<Outcome, f64>> {
        if basis == Basis::Bell && targets.len() != 2 {
            return Err(QuantumError::BellArity(targets.len()));
        }
        self.joint_snapshot(targets)?.born_distribution(targets, basis)
    }
}
