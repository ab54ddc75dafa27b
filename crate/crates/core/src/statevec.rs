//! Dense state-vector simulation of small qubit registers.
//!
//! Qubit 0 is the leftmost symbol of a ket, so in `|110⟩` qubits 0 and 1 are
//! set. Equivalently qubit `q` of an `n`-qubit register is bit `n - 1 - q` of
//! the amplitude index.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest register the simulator will allocate.
pub const MAX_QUBITS: usize = 24;

/// Tolerance for norm and orthonormality checks.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Tolerance for comparisons of exactly known amplitudes.
pub const EXACT_TOLERANCE: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("register size {0} outside 1..={MAX_QUBITS}")]
    RegisterSize(usize),
    #[error("qubit {qubit} out of range for a {num_qubits}-qubit register")]
    QubitOutOfRange { qubit: usize, num_qubits: usize },
    #[error("qubit {0} used twice in one operation")]
    QubitCollision(usize),
    #[error("dimension mismatch: {left} vs {right} qubits")]
    DimensionMismatch { left: usize, right: usize },
    #[error("amplitude vector of length {0} is not a power of two")]
    BadLength(usize),
    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),
    #[error("selected measurement branch has zero norm")]
    ZeroNormBranch,
    #[error("measurement family is not orthonormal (Gram entry ({row}, {col}) off by {deviation:e})")]
    NonOrthonormalFamily { row: usize, col: usize, deviation: f64 },
    #[error("measurement family has {found} members, a complete basis needs {expected}")]
    IncompleteFamily { found: usize, expected: usize },
}

/// Single-qubit gates used by the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    Identity,
    PauliX,
    PauliY,
    PauliZ,
    Hadamard,
}

impl Gate {
    pub const ALL: [Gate; 5] = [
        Gate::Identity,
        Gate::PauliX,
        Gate::PauliY,
        Gate::PauliZ,
        Gate::Hadamard,
    ];

    /// Row-major 2×2 unitary.
    pub fn matrix(self) -> [[Complex64; 2]; 2] {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        match self {
            Gate::Identity => [[ONE, ZERO], [ZERO, ONE]],
            Gate::PauliX => [[ZERO, ONE], [ONE, ZERO]],
            Gate::PauliY => [[ZERO, -I], [I, ZERO]],
            Gate::PauliZ => [[ONE, ZERO], [ZERO, -ONE]],
            Gate::Hadamard => [[h, h], [h, -h]],
        }
    }
}

/// Basis for single-qubit measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.random_bool(0.5) {
            Basis::X
        } else {
            Basis::Z
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩` on `num_qubits` qubits.
    pub fn new(num_qubits: usize) -> Result<Self, StateError> {
        Self::basis_state(num_qubits, 0)
    }

    /// Computational basis state with the given amplitude index.
    pub fn basis_state(num_qubits: usize, index: usize) -> Result<Self, StateError> {
        if num_qubits == 0 || num_qubits > MAX_QUBITS {
            return Err(StateError::RegisterSize(num_qubits));
        }
        let mut amplitudes = vec![ZERO; 1 << num_qubits];
        amplitudes[index] = ONE;
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    /// Builds a state from raw amplitudes, which must already be normalized.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self, StateError> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(StateError::BadLength(len));
        }
        let num_qubits = len.trailing_zeros() as usize;
        if num_qubits > MAX_QUBITS {
            return Err(StateError::RegisterSize(num_qubits));
        }
        let state = Self {
            num_qubits,
            amplitudes,
        };
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(StateError::NotNormalized(norm));
        }
        Ok(state)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, index: usize) -> Complex64 {
        self.amplitudes[index]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn mask(&self, qubit: usize) -> usize {
        1 << (self.num_qubits - 1 - qubit)
    }

    fn check_qubit(&self, qubit: usize) -> Result<(), StateError> {
        if qubit >= self.num_qubits {
            Err(StateError::QubitOutOfRange {
                qubit,
                num_qubits: self.num_qubits,
            })
        } else {
            Ok(())
        }
    }

    pub fn apply_gate(&mut self, gate: Gate, qubit: usize) -> Result<(), StateError> {
        self.check_qubit(qubit)?;
        if gate == Gate::Identity {
            return Ok(());
        }
        let m = gate.matrix();
        let mask = self.mask(qubit);
        for i in 0..self.amplitudes.len() {
            if i & mask != 0 {
                continue;
            }
            let j = i | mask;
            let (a0, a1) = (self.amplitudes[i], self.amplitudes[j]);
            self.amplitudes[i] = m[0][0] * a0 + m[0][1] * a1;
            self.amplitudes[j] = m[1][0] * a0 + m[1][1] * a1;
        }
        Ok(())
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<(), StateError> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(StateError::QubitCollision(control));
        }
        let (cmask, tmask) = (self.mask(control), self.mask(target));
        for i in 0..self.amplitudes.len() {
            if i & cmask != 0 && i & tmask == 0 {
                self.amplitudes.swap(i, i | tmask);
            }
        }
        Ok(())
    }

    /// Probability that a Z measurement of `qubit` yields 1.
    pub fn probability_one(&self, qubit: usize) -> Result<f64, StateError> {
        self.check_qubit(qubit)?;
        let mask = self.mask(qubit);
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Measures one qubit and collapses the register. Outcome `true` is the
    /// `|1⟩` (Z) or `|−⟩` (X) eigenstate.
    pub fn measure_qubit<R: Rng + ?Sized>(
        &mut self,
        qubit: usize,
        basis: Basis,
        rng: &mut R,
    ) -> Result<bool, StateError> {
        if basis == Basis::X {
            self.apply_gate(Gate::Hadamard, qubit)?;
        }
        let p1 = self.probability_one(qubit)?;
        let outcome = rng.random::<f64>() < p1;
        let branch = if outcome { p1 } else { 1.0 - p1 };
        if branch <= f64::EPSILON {
            return Err(StateError::ZeroNormBranch);
        }
        let mask = self.mask(qubit);
        let scale = 1.0 / branch.sqrt();
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            if (i & mask != 0) == outcome {
                *a *= scale;
            } else {
                *a = ZERO;
            }
        }
        if basis == Basis::X {
            self.apply_gate(Gate::Hadamard, qubit)?;
        }
        Ok(outcome)
    }

    /// Born probabilities of projecting the `qubits` subsystem onto each
    /// member of `family`.
    pub fn family_probabilities(
        &self,
        qubits: &[usize],
        family: &[StateVector],
    ) -> Result<Vec<f64>, StateError> {
        let split = self.project_family(qubits, family)?;
        Ok(split
            .iter()
            .map(|c| c.iter().map(|a| a.norm_sqr()).sum())
            .collect())
    }

    /// Projective measurement of the `qubits` subsystem onto an orthonormal
    /// basis of that subsystem. Returns the index of the observed member;
    /// the subsystem is left in that member's state.
    pub fn measure_in_family<R: Rng + ?Sized>(
        &mut self,
        qubits: &[usize],
        family: &[StateVector],
        rng: &mut R,
    ) -> Result<usize, StateError> {
        let split = self.project_family(qubits, family)?;
        let probs: Vec<f64> = split
            .iter()
            .map(|c| c.iter().map(|a| a.norm_sqr()).sum())
            .collect();
        let chosen = sample_index(&probs, rng);
        let p = probs[chosen];
        if p <= f64::EPSILON {
            return Err(StateError::ZeroNormBranch);
        }
        let scale = 1.0 / p.sqrt();
        let rest = &split[chosen];
        let member = &family[chosen];
        let layout = SubsystemLayout::new(self.num_qubits, qubits);
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            let (sub, other) = layout.split(i);
            *a = member.amplitudes[sub] * rest[other] * scale;
        }
        Ok(chosen)
    }

    /// For each family member `f`, the (unnormalized) state of the remaining
    /// qubits after projecting onto `f`.
    fn project_family(
        &self,
        qubits: &[usize],
        family: &[StateVector],
    ) -> Result<Vec<Vec<Complex64>>, StateError> {
        for (k, &q) in qubits.iter().enumerate() {
            self.check_qubit(q)?;
            if qubits[..k].contains(&q) {
                return Err(StateError::QubitCollision(q));
            }
        }
        let expected = 1usize << qubits.len();
        if family.len() != expected {
            return Err(StateError::IncompleteFamily {
                found: family.len(),
                expected,
            });
        }
        for member in family {
            if member.num_qubits != qubits.len() {
                return Err(StateError::DimensionMismatch {
                    left: member.num_qubits,
                    right: qubits.len(),
                });
            }
        }
        check_orthonormal(family)?;

        let layout = SubsystemLayout::new(self.num_qubits, qubits);
        let rest_len = 1usize << (self.num_qubits - qubits.len());
        let mut out = vec![vec![ZERO; rest_len]; family.len()];
        for (i, &a) in self.amplitudes.iter().enumerate() {
            if a == ZERO {
                continue;
            }
            let (sub, other) = layout.split(i);
            for (f, member) in family.iter().enumerate() {
                out[f][other] += member.amplitudes[sub].conj() * a;
            }
        }
        Ok(out)
    }

    /// Hermitian inner product `⟨self|other⟩`.
    pub fn inner_product(&self, other: &StateVector) -> Result<Complex64, StateError> {
        if self.num_qubits != other.num_qubits {
            return Err(StateError::DimensionMismatch {
                left: self.num_qubits,
                right: other.num_qubits,
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `|⟨self|other⟩|`, which is 1 exactly when the states agree up to a
    /// global phase.
    pub fn fidelity(&self, other: &StateVector) -> Result<f64, StateError> {
        Ok(self.inner_product(other)?.norm())
    }

    pub fn equal_up_to_phase(&self, other: &StateVector) -> bool {
        self.fidelity(other)
            .map(|f| (f - 1.0).abs() <= EXACT_TOLERANCE)
            .unwrap_or(false)
    }

    /// Largest absolute amplitude difference; the strict comparator that
    /// does not forgive a global phase.
    pub fn max_amplitude_error(&self, other: &StateVector) -> Result<f64, StateError> {
        if self.num_qubits != other.num_qubits {
            return Err(StateError::DimensionMismatch {
                left: self.num_qubits,
                right: other.num_qubits,
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// `self ⊗ other`; the qubits of `other` follow those of `self`.
    pub fn tensor(&self, other: &StateVector) -> Result<StateVector, StateError> {
        let num_qubits = self.num_qubits + other.num_qubits;
        if num_qubits > MAX_QUBITS {
            return Err(StateError::RegisterSize(num_qubits));
        }
        let mut amplitudes = Vec::with_capacity(1 << num_qubits);
        for a in &self.amplitudes {
            amplitudes.extend(other.amplitudes.iter().map(|b| a * b));
        }
        Ok(StateVector {
            num_qubits,
            amplitudes,
        })
    }
}

/// Verifies that `family` is orthonormal within [`NORM_TOLERANCE`].
pub fn check_orthonormal(family: &[StateVector]) -> Result<(), StateError> {
    for (row, a) in family.iter().enumerate() {
        for (col, b) in family.iter().enumerate().skip(row) {
            let expected = if row == col { ONE } else { ZERO };
            let deviation = (a.inner_product(b)? - expected).norm();
            if deviation > NORM_TOLERANCE {
                return Err(StateError::NonOrthonormalFamily {
                    row,
                    col,
                    deviation,
                });
            }
        }
    }
    Ok(())
}

/// Draws an index from a discrete distribution. The final index absorbs
/// rounding slack.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc && p > 0.0 {
            return i;
        }
    }
    last_nonzero
}

/// Maps a full amplitude index to (subsystem index, remainder index).
struct SubsystemLayout {
    sub_masks: Vec<usize>,
    rest_masks: Vec<usize>,
}

impl SubsystemLayout {
    fn new(num_qubits: usize, qubits: &[usize]) -> Self {
        let mask = |q: usize| 1usize << (num_qubits - 1 - q);
        let sub_masks = qubits.iter().map(|&q| mask(q)).collect();
        let rest_masks = (0..num_qubits)
            .filter(|q| !qubits.contains(q))
            .map(mask)
            .collect();
        Self {
            sub_masks,
            rest_masks,
        }
    }

    fn split(&self, index: usize) -> (usize, usize) {
        let pack = |masks: &[usize]| {
            masks
                .iter()
                .fold(0usize, |acc, &m| (acc << 1) | usize::from(index & m != 0))
        };
        (pack(&self.sub_masks), pack(&self.rest_masks))
    }
}
