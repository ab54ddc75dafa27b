//! Closed-form algebra of N-party GHZ-class states.
//!
//! Every state of the family is `(|p⟩ + s|p̄⟩)/√2` for a bit pattern `p`, its
//! complement `p̄` and a sign `s`. The pattern is stored in canonical form,
//! with the last particle's bit cleared, so each state has exactly one
//! representation and there are `2^N` of them for `N` particles.
//!
//! For three particles the canonical patterns of the eight textbook labels
//! are already the first-written branch:
//!
//! | label | pattern | sign |
//! |-------|---------|------|
//! | ψ₁ | 000 | + |
//! | ψ₂ | 000 | − |
//! | ψ₃ | 100 | + |
//! | ψ₄ | 100 | − |
//! | ψ₅ | 010 | + |
//! | ψ₆ | 010 | − |
//! | ψ₇ | 110 | + |
//! | ψ₈ | 110 | − |

use std::fmt;
use std::ops::Mul;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::statevec::{Gate, StateVector, MAX_QUBITS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GhzError {
    #[error("GHZ label {0} outside 1..=8")]
    LabelOutOfRange(usize),
    #[error("GHZ ordinal {ordinal} outside 0..{count}")]
    OrdinalOutOfRange { ordinal: usize, count: usize },
    #[error("a GHZ state needs between 2 and {MAX_QUBITS} particles, got {0}")]
    PartyCount(usize),
    #[error("expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("home particle {home} out of range for {num_parties} particles")]
    HomeOutOfRange { home: usize, num_parties: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// Scalar phase `i^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Phase(u8);

impl Phase {
    pub const ONE: Phase = Phase(0);
    pub const I: Phase = Phase(1);
    pub const MINUS_ONE: Phase = Phase(2);
    pub const MINUS_I: Phase = Phase(3);

    pub fn to_complex(self) -> Complex64 {
        match self.0 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    }

    pub fn inverse(self) -> Phase {
        Phase((4 - self.0) % 4)
    }
}

impl Mul for Phase {
    type Output = Phase;

    fn mul(self, rhs: Phase) -> Phase {
        Phase((self.0 + rhs.0) % 4)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(["+1", "+i", "-1", "-i"][self.0 as usize])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn gate(self) -> Gate {
        match self {
            Pauli::I => Gate::Identity,
            Pauli::X => Gate::PauliX,
            Pauli::Y => Gate::PauliY,
            Pauli::Z => Gate::PauliZ,
        }
    }

    /// Whether the operator flips the computational bit.
    pub fn flips(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    /// `self · rhs = phase · result`.
    pub fn compose(self, rhs: Pauli) -> (Pauli, Phase) {
        use Pauli::*;
        match (self, rhs) {
            (I, p) | (p, I) => (p, Phase::ONE),
            (a, b) if a == b => (I, Phase::ONE),
            (X, Y) => (Z, Phase::I),
            (Y, X) => (Z, Phase::MINUS_I),
            (Y, Z) => (X, Phase::I),
            (Z, Y) => (X, Phase::MINUS_I),
            (Z, X) => (Y, Phase::I),
            (X, Z) => (Y, Phase::MINUS_I),
            _ => unreachable!(),
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        };
        write!(f, "{c}")
    }
}

/// Tensor product of single-particle Paulis, one per particle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliWord(pub Vec<Pauli>);

impl PauliWord {
    pub fn identity(len: usize) -> Self {
        PauliWord(vec![Pauli::I; len])
    }

    /// A word that is the identity except on `particle`.
    pub fn single(len: usize, particle: usize, op: Pauli) -> Self {
        let mut w = Self::identity(len);
        w.0[particle] = op;
        w
    }

    /// X on every particle whose flip bit is set.
    pub fn from_flips(flips: &[bool]) -> Self {
        PauliWord(
            flips
                .iter()
                .map(|&f| if f { Pauli::X } else { Pauli::I })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Operator product `self · rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &PauliWord) -> Result<(PauliWord, Phase), GhzError> {
        if self.len() != rhs.len() {
            return Err(GhzError::LengthMismatch {
                expected: self.len(),
                found: rhs.len(),
            });
        }
        let mut phase = Phase::ONE;
        let ops = self
            .0
            .iter()
            .zip(&rhs.0)
            .map(|(&a, &b)| {
                let (p, ph) = a.compose(b);
                phase = phase * ph;
                p
            })
            .collect();
        Ok((PauliWord(ops), phase))
    }
}

impl fmt::Display for PauliWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|p| write!(f, "{p}"))
    }
}

/// Label of one GHZ-class basis state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GhzIndex {
    num_parties: usize,
    /// Particle `j` is bit `num_parties - 1 - j`, so the pattern doubles as the
    /// amplitude index of `|pattern⟩`. Always even.
    pattern: u32,
    sign: Sign,
}

impl GhzIndex {
    /// Builds the state `(|bits⟩ + sign·|complement⟩)/√2`, canonicalizing the
    /// branch order. Returns the index and the global phase picked up by
    /// swapping branches.
    pub fn from_branch(bits: &[bool], sign: Sign) -> Result<(GhzIndex, Phase), GhzError> {
        let n = bits.len();
        check_parties(n)?;
        let pattern = bits
            .iter()
            .fold(0u32, |acc, &b| (acc << 1) | u32::from(b));
        Ok(Self::canonical(n, pattern, sign))
    }

    fn canonical(num_parties: usize, pattern: u32, sign: Sign) -> (GhzIndex, Phase) {
        if pattern & 1 == 0 {
            (
                GhzIndex {
                    num_parties,
                    pattern,
                    sign,
                },
                Phase::ONE,
            )
        } else {
            let phase = match sign {
                Sign::Plus => Phase::ONE,
                Sign::Minus => Phase::MINUS_ONE,
            };
            (
                GhzIndex {
                    num_parties,
                    pattern: pattern ^ full_mask(num_parties),
                    sign,
                },
                phase,
            )
        }
    }

    /// Three-particle label ψ₁…ψ₈.
    pub fn from_label(label: usize) -> Result<GhzIndex, GhzError> {
        if !(1..=8).contains(&label) {
            return Err(GhzError::LabelOutOfRange(label));
        }
        Self::from_ordinal(3, label - 1)
    }

    /// Inverse of [`GhzIndex::from_label`]; `None` unless three particles.
    pub fn label(&self) -> Option<usize> {
        (self.num_parties == 3).then(|| self.ordinal() + 1)
    }

    /// Enumeration order generalizing the ψ numbering: sign alternates
    /// fastest, then the first particle's bit, then the second, and so on.
    pub fn from_ordinal(num_parties: usize, ordinal: usize) -> Result<GhzIndex, GhzError> {
        check_parties(num_parties)?;
        let count = 1usize << num_parties;
        if ordinal >= count {
            return Err(GhzError::OrdinalOutOfRange { ordinal, count });
        }
        let sign = if ordinal & 1 == 0 { Sign::Plus } else { Sign::Minus };
        let m = ordinal >> 1;
        let pattern = (0..num_parties - 1)
            .filter(|j| m >> j & 1 == 1)
            .fold(0u32, |acc, j| acc | 1 << (num_parties - 1 - j));
        Ok(GhzIndex {
            num_parties,
            pattern,
            sign,
        })
    }

    pub fn ordinal(&self) -> usize {
        let m = (0..self.num_parties - 1)
            .filter(|&j| self.bit(j))
            .fold(0usize, |acc, j| acc | 1 << j);
        (m << 1) | usize::from(self.sign == Sign::Minus)
    }

    /// All `2^N` states in ordinal order.
    pub fn all(num_parties: usize) -> Result<Vec<GhzIndex>, GhzError> {
        (0..1usize << num_parties)
            .map(|k| Self::from_ordinal(num_parties, k))
            .collect()
    }

    pub fn random<R: Rng + ?Sized>(num_parties: usize, rng: &mut R) -> Result<GhzIndex, GhzError> {
        check_parties(num_parties)?;
        Self::from_ordinal(num_parties, rng.random_range(0..1usize << num_parties))
    }

    pub fn num_parties(&self) -> usize {
        self.num_parties
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    /// Bit of particle `j` in the canonical branch.
    pub fn bit(&self, particle: usize) -> bool {
        self.pattern >> (self.num_parties - 1 - particle) & 1 == 1
    }

    pub fn pattern_bits(&self) -> Vec<bool> {
        (0..self.num_parties).map(|j| self.bit(j)).collect()
    }

    pub fn complement_bits(&self) -> Vec<bool> {
        (0..self.num_parties).map(|j| !self.bit(j)).collect()
    }

    pub fn to_state_vector(&self) -> StateVector {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << self.num_parties];
        amps[self.pattern as usize] = Complex64::new(h, 0.0);
        amps[(self.pattern ^ full_mask(self.num_parties)) as usize] =
            Complex64::new(self.sign.value() * h, 0.0);
        StateVector::from_amplitudes(amps).expect("GHZ amplitudes are normalized")
    }

    /// Closed-form action of a Pauli word: `w|self⟩ = phase·|result⟩`.
    pub fn apply_pauli(&self, word: &PauliWord) -> Result<(GhzIndex, Phase), GhzError> {
        if word.len() != self.num_parties {
            return Err(GhzError::LengthMismatch {
                expected: self.num_parties,
                found: word.len(),
            });
        }
        let mut phase = Phase::ONE;
        let mut flip = 0u32;
        let mut sign = self.sign;
        for (j, &op) in word.0.iter().enumerate() {
            let mask = 1u32 << (self.num_parties - 1 - j);
            let set = self.pattern & mask != 0;
            // Phases are those picked up by the canonical branch; the
            // complement branch differs by −1 for each Z or Y.
            match op {
                Pauli::I => {}
                Pauli::X => flip |= mask,
                Pauli::Z => {
                    if set {
                        phase = phase * Phase::MINUS_ONE;
                    }
                    sign = sign.flipped();
                }
                Pauli::Y => {
                    flip |= mask;
                    phase = phase * if set { Phase::MINUS_I } else { Phase::I };
                    sign = sign.flipped();
                }
            }
        }
        let (index, swap_phase) = Self::canonical(self.num_parties, self.pattern ^ flip, sign);
        Ok((index, phase * swap_phase))
    }
}

impl fmt::Display for GhzIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(label) = self.label() {
            return write!(f, "ψ{label}");
        }
        let bits: String = self
            .pattern_bits()
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        let s = if self.sign == Sign::Plus { '+' } else { '-' };
        write!(f, "({bits},{s})")
    }
}

fn full_mask(num_parties: usize) -> u32 {
    ((1u64 << num_parties) - 1) as u32
}

fn check_parties(n: usize) -> Result<(), GhzError> {
    if (2..=MAX_QUBITS).contains(&n) {
        Ok(())
    } else {
        Err(GhzError::PartyCount(n))
    }
}

/// Orthonormal GHZ basis on `num_parties` particles, in ordinal order.
pub fn ghz_family(num_parties: usize) -> Result<Vec<StateVector>, GhzError> {
    Ok(GhzIndex::all(num_parties)?
        .iter()
        .map(GhzIndex::to_state_vector)
        .collect())
}

/// Result of comparing a prepared GHZ state with a measured one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipDecode {
    /// One bit per particle other than `home`, in particle order.
    pub flips: Vec<bool>,
    pub sign_changed: bool,
}

/// Reads which particles were bit-flipped between `prepared` and
/// `measured`. Patterns are only defined up to complement, so the XOR is
/// anchored on `home`, the particle that never left its owner.
pub fn decode_flips(
    prepared: &GhzIndex,
    measured: &GhzIndex,
    home: usize,
) -> Result<FlipDecode, GhzError> {
    let n = prepared.num_parties;
    if measured.num_parties != n {
        return Err(GhzError::LengthMismatch {
            expected: n,
            found: measured.num_parties,
        });
    }
    if home >= n {
        return Err(GhzError::HomeOutOfRange {
            home,
            num_parties: n,
        });
    }
    let mut xor = prepared.pattern ^ measured.pattern;
    if xor >> (n - 1 - home) & 1 == 1 {
        xor ^= full_mask(n);
    }
    let flips = (0..n)
        .filter(|&j| j != home)
        .map(|j| xor >> (n - 1 - j) & 1 == 1)
        .collect();
    Ok(FlipDecode {
        flips,
        sign_changed: prepared.sign != measured.sign,
    })
}

/// Whether a full set of Z outcomes (one per particle, in particle order)
/// can come from `state`.
pub fn z_pattern_consistent(state: &GhzIndex, outcomes: &[bool]) -> Result<bool, GhzError> {
    if outcomes.len() != state.num_parties {
        return Err(GhzError::LengthMismatch {
            expected: state.num_parties,
            found: outcomes.len(),
        });
    }
    let pattern = state.pattern_bits();
    Ok(outcomes == pattern.as_slice() || outcomes.iter().zip(&pattern).all(|(o, p)| o != p))
}

/// Eigenvalue of `X⊗…⊗X` on `state`: the product of ±1 X-basis outcomes
/// over all particles always equals this.
pub fn x_parity(state: &GhzIndex) -> Sign {
    state.sign
}

/// Whether a full set of X outcomes (`true` = −1 eigenvalue) is consistent
/// with `state`.
pub fn x_outcomes_consistent(state: &GhzIndex, outcomes: &[bool]) -> Result<bool, GhzError> {
    if outcomes.len() != state.num_parties {
        return Err(GhzError::LengthMismatch {
            expected: state.num_parties,
            found: outcomes.len(),
        });
    }
    let odd = outcomes.iter().filter(|&&b| b).count() % 2 == 1;
    Ok(odd == (x_parity(state) == Sign::Minus))
}

/// Every Pauli word an observer who only sees bit flips cannot rule out:
/// each unflipped particle may have seen I or Z, each flipped one X or Y.
pub fn eve_consistent_ops(flips: &[bool]) -> Vec<PauliWord> {
    flips.iter().fold(vec![PauliWord(Vec::new())], |acc, &f| {
        let choices = if f { [Pauli::X, Pauli::Y] } else { [Pauli::I, Pauli::Z] };
        acc.into_iter()
            .flat_map(|w| {
                choices.iter().map(move |&p| {
                    let mut next = w.0.clone();
                    next.push(p);
                    PauliWord(next)
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingMode {
    /// Bit 0 is I and bit 1 is X.
    TwoOp,
    /// One of [`Convention::ALL`], drawn per session and kept secret.
    FourOp,
}

/// Operator pair used to encode bits: `zero` for 0 and `one` for 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Convention {
    IdentityX,
    IdentityY,
    ZX,
    ZY,
}

impl Convention {
    pub const ALL: [Convention; 4] = [
        Convention::IdentityX,
        Convention::IdentityY,
        Convention::ZX,
        Convention::ZY,
    ];

    pub fn zero(self) -> Pauli {
        match self {
            Convention::IdentityX | Convention::IdentityY => Pauli::I,
            Convention::ZX | Convention::ZY => Pauli::Z,
        }
    }

    pub fn one(self) -> Pauli {
        match self {
            Convention::IdentityX | Convention::ZX => Pauli::X,
            Convention::IdentityY | Convention::ZY => Pauli::Y,
        }
    }

    pub fn operator(self, bit: bool) -> Pauli {
        if bit {
            self.one()
        } else {
            self.zero()
        }
    }
}

/// The operator-to-bit agreement shared in advance by the legitimate users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingAgreement {
    pub mode: EncodingMode,
    pub convention: Convention,
}

impl EncodingAgreement {
    pub fn two_op() -> Self {
        EncodingAgreement {
            mode: EncodingMode::TwoOp,
            convention: Convention::IdentityX,
        }
    }

    /// Fixes the session convention; uniform over the four in FourOp mode.
    pub fn sample<R: Rng + ?Sized>(mode: EncodingMode, rng: &mut R) -> Self {
        match mode {
            EncodingMode::TwoOp => Self::two_op(),
            EncodingMode::FourOp => EncodingAgreement {
                mode,
                convention: Convention::ALL[rng.random_range(0..4)],
            },
        }
    }

    pub fn operator(&self, bit: bool) -> Pauli {
        self.convention.operator(bit)
    }

    /// Key bits carried by decoded flips. Every convention maps a flipping
    /// operator to 1, so this is the identity map on bits.
    pub fn bits_from_flips(&self, flips: &[bool]) -> Vec<bool> {
        flips.to_vec()
    }

    /// Whether sign changes are expected from honest encoders.
    pub fn changes_sign(&self) -> bool {
        self.convention != Convention::IdentityX
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevec::EXACT_TOLERANCE;
    use proptest::prelude::*;

    fn psi(k: usize) -> GhzIndex {
        GhzIndex::from_label(k).unwrap()
    }

    fn word(s: &str) -> PauliWord {
        PauliWord(
            s.chars()
                .map(|c| match c {
                    'I' => Pauli::I,
                    'X' => Pauli::X,
                    'Y' => Pauli::Y,
                    'Z' => Pauli::Z,
                    _ => panic!("bad pauli {c}"),
                })
                .collect(),
        )
    }

    /// Gate-by-gate reference: `phase·|result⟩` from the closed form must
    /// equal `w|g⟩` from the dense simulator, amplitude for amplitude.
    fn oracle_matches(g: &GhzIndex, w: &PauliWord) -> bool {
        let mut dense = g.to_state_vector();
        for (q, op) in w.0.iter().enumerate() {
            dense.apply_gate(op.gate(), q).unwrap();
        }
        let (result, phase) = g.apply_pauli(w).unwrap();
        let closed = result.to_state_vector();
        let scaled: Vec<Complex64> = closed
            .amplitudes()
            .iter()
            .map(|a| a * phase.to_complex())
            .collect();
        let scaled = StateVector::from_amplitudes(scaled).unwrap();
        scaled.max_amplitude_error(&dense).unwrap() < EXACT_TOLERANCE
    }

    #[test]
    fn label_table() {
        let table = [
            (1, [false, false, false], Sign::Plus),
            (2, [false, false, false], Sign::Minus),
            (3, [true, false, false], Sign::Plus),
            (4, [true, false, false], Sign::Minus),
            (5, [false, true, false], Sign::Plus),
            (6, [false, true, false], Sign::Minus),
            (7, [true, true, false], Sign::Plus),
            (8, [true, true, false], Sign::Minus),
        ];
        for (k, bits, sign) in table {
            let g = psi(k);
            assert_eq!(g.pattern_bits(), bits);
            assert_eq!(g.sign(), sign);
            assert_eq!(g.label(), Some(k));
        }
        assert_eq!(GhzIndex::from_label(0), Err(GhzError::LabelOutOfRange(0)));
        assert_eq!(GhzIndex::from_label(9), Err(GhzError::LabelOutOfRange(9)));
    }

    #[test]
    fn psi8_from_either_branch() {
        // |110⟩ − |001⟩ written either way round.
        let (a, pa) = GhzIndex::from_branch(&[true, true, false], Sign::Minus).unwrap();
        let (b, pb) = GhzIndex::from_branch(&[false, false, true], Sign::Minus).unwrap();
        assert_eq!(a, psi(8));
        assert_eq!(b, psi(8));
        assert_eq!(pa, Phase::ONE);
        assert_eq!(pb, Phase::MINUS_ONE);
    }

    #[test]
    fn state_vectors_of_labels() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = psi(1).to_state_vector();
        assert!((s.amplitude(0b000).re - h).abs() < EXACT_TOLERANCE);
        assert!((s.amplitude(0b111).re - h).abs() < EXACT_TOLERANCE);
        let s = psi(6).to_state_vector();
        assert!((s.amplitude(0b010).re - h).abs() < EXACT_TOLERANCE);
        assert!((s.amplitude(0b101).re + h).abs() < EXACT_TOLERANCE);
        let four = GhzIndex::from_ordinal(4, 0).unwrap().to_state_vector();
        assert!((four.amplitude(0b0000).re - h).abs() < EXACT_TOLERANCE);
        assert!((four.amplitude(0b1111).re - h).abs() < EXACT_TOLERANCE);
    }

    #[test]
    fn gram_matrix_is_identity() {
        for n in 2..=5 {
            let fam = ghz_family(n).unwrap();
            for (i, a) in fam.iter().enumerate() {
                for (j, b) in fam.iter().enumerate() {
                    let ip = a.inner_product(b).unwrap();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - Complex64::new(expected, 0.0)).norm() < EXACT_TOLERANCE);
                }
            }
        }
    }

    #[test]
    fn degenerate_encodings_on_psi1() {
        let (r, _) = psi(1).apply_pauli(&word("III")).unwrap();
        assert_eq!(r, psi(1));
        let (r, p) = psi(1).apply_pauli(&word("IZZ")).unwrap();
        assert_eq!((r, p), (psi(1), Phase::ONE));
        let (r, p) = psi(1).apply_pauli(&word("IXX")).unwrap();
        assert_eq!((r, p), (psi(3), Phase::ONE));
        let (r, _) = psi(1).apply_pauli(&word("IYY")).unwrap();
        assert_eq!(r, psi(3));
    }

    #[test]
    fn closed_form_matches_dense_oracle_exhaustively() {
        for n in 2..=4 {
            for g in GhzIndex::all(n).unwrap() {
                for particle in 0..n {
                    for op in Pauli::ALL {
                        let w = PauliWord::single(n, particle, op);
                        assert!(oracle_matches(&g, &w), "{g} {w}");
                    }
                }
            }
        }
    }

    #[test]
    fn decode_examples() {
        let d = decode_flips(&psi(1), &psi(3), 0).unwrap();
        assert_eq!(d.flips, [true, true]);
        assert!(!d.sign_changed);
        let d = decode_flips(&psi(1), &psi(1), 0).unwrap();
        assert_eq!(d.flips, [false, false]);
        let d = decode_flips(&psi(2), &psi(6), 0).unwrap();
        assert_eq!(d.flips, [true, false]);
        assert!(!d.sign_changed);
        assert!(decode_flips(&psi(1), &psi(1), 3).is_err());
    }

    #[test]
    fn decode_inverts_every_flip_vector_for_three_parties() {
        for prepared in GhzIndex::all(3).unwrap() {
            for home in 0..3 {
                for f in 0..4u8 {
                    let flips = vec![f & 1 != 0, f & 2 != 0];
                    let mut full = flips.clone();
                    full.insert(home, false);
                    let (measured, _) = prepared.apply_pauli(&PauliWord::from_flips(&full)).unwrap();
                    let d = decode_flips(&prepared, &measured, home).unwrap();
                    assert_eq!(d.flips, flips);
                    assert!(!d.sign_changed);
                }
            }
        }
    }

    #[test]
    fn z_consistency() {
        assert!(z_pattern_consistent(&psi(1), &[true, true, true]).unwrap());
        assert!(!z_pattern_consistent(&psi(1), &[true, false, false]).unwrap());
        assert!(z_pattern_consistent(&psi(7), &[false, false, true]).unwrap());
        assert!(z_pattern_consistent(&psi(1), &[true]).is_err());
    }

    #[test]
    fn x_parity_values() {
        assert_eq!(x_parity(&psi(1)), Sign::Plus);
        assert_eq!(x_parity(&psi(2)), Sign::Minus);
        assert!(x_outcomes_consistent(&psi(2), &[true, false, false]).unwrap());
        assert!(!x_outcomes_consistent(&psi(2), &[true, true, false]).unwrap());
    }

    #[test]
    fn consistent_op_sets() {
        let s: Vec<String> = eve_consistent_ops(&[false, false])
            .iter()
            .map(ToString::to_string)
            .collect();
        assert_eq!(s, ["II", "IZ", "ZI", "ZZ"]);
        let s: Vec<String> = eve_consistent_ops(&[true, true])
            .iter()
            .map(ToString::to_string)
            .collect();
        assert_eq!(s, ["XX", "XY", "YX", "YY"]);
        assert_eq!(eve_consistent_ops(&[]), vec![PauliWord(vec![])]);
        // Every candidate produces the observed flips.
        for w in eve_consistent_ops(&[true, true]) {
            let mut full = vec![Pauli::I];
            full.extend(w.0);
            let (r, _) = psi(1).apply_pauli(&PauliWord(full)).unwrap();
            assert_eq!(r.pattern_bits(), psi(3).pattern_bits());
        }
    }

    #[test]
    fn pauli_products() {
        let (w, ph) = word("XZ").compose(&word("ZX")).unwrap();
        assert_eq!(w, word("YY"));
        assert_eq!(ph, Phase::MINUS_I * Phase::I);
        assert!(word("X").compose(&word("XX")).is_err());
    }

    #[test]
    fn conventions_pair_non_flip_with_flip() {
        for c in Convention::ALL {
            assert!(!c.zero().flips());
            assert!(c.one().flips());
        }
        assert_eq!(EncodingAgreement::two_op().operator(true), Pauli::X);
        assert_eq!(EncodingAgreement::two_op().operator(false), Pauli::I);
    }

    fn arb_word(n: usize) -> impl Strategy<Value = PauliWord> {
        proptest::collection::vec(
            prop_oneof![Just(Pauli::I), Just(Pauli::X), Just(Pauli::Y), Just(Pauli::Z)],
            n,
        )
        .prop_map(PauliWord)
    }

    proptest! {
        #[test]
        fn words_agree_with_dense_oracle(n in 2usize..=5, ord in 0usize..32, w in arb_word(5)) {
            let g = GhzIndex::from_ordinal(n, ord % (1 << n)).unwrap();
            let w = PauliWord(w.0[..n].to_vec());
            prop_assert!(oracle_matches(&g, &w));
        }

        #[test]
        fn word_then_inverse_is_identity(n in 2usize..=5, ord in 0usize..32, w in arb_word(5)) {
            let g = GhzIndex::from_ordinal(n, ord % (1 << n)).unwrap();
            let w = PauliWord(w.0[..n].to_vec());
            let (mid, p1) = g.apply_pauli(&w).unwrap();
            let (back, p2) = mid.apply_pauli(&w).unwrap();
            prop_assert_eq!(back, g);
            // Paulis are self-inverse, so the phases cancel.
            prop_assert_eq!(p1 * p2, Phase::ONE);
        }

        #[test]
        fn decode_inverts_flips(n in 4usize..=5, ord in 0usize..32, raw in proptest::collection::vec(any::<bool>(), 5), home in 0usize..5) {
            let home = home % n;
            let g = GhzIndex::from_ordinal(n, ord % (1 << n)).unwrap();
            let mut full = raw[..n].to_vec();
            full[home] = false;
            let (m, _) = g.apply_pauli(&PauliWord::from_flips(&full)).unwrap();
            let d = decode_flips(&g, &m, home).unwrap();
            let expected: Vec<bool> = full.iter().enumerate().filter(|(j, _)| *j != home).map(|(_, b)| *b).collect();
            prop_assert_eq!(d.flips, expected);
            prop_assert!(!d.sign_changed);
        }

        #[test]
        fn ordinal_round_trip(n in 2usize..=8, ord in 0usize..256) {
            let ord = ord % (1 << n);
            prop_assert_eq!(GhzIndex::from_ordinal(n, ord).unwrap().ordinal(), ord);
        }
    }
}
