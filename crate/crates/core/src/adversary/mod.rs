//! Eavesdropper models.
//!
//! An [`Adversary`] sees each owner's in-flight blocks twice: once on the way
//! out and once on the way back. It works through a [`ChannelAccess`], which
//! refuses any particle that is not in a channel or already in Eve's
//! custody, so home particles are out of reach by construction.

mod strategies;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ghz::{eve_consistent_ops, Convention, GhzError, GhzIndex, PauliWord};
use crate::protocol::memory::{ChannelAccess, MemoryError, ParticleId};
use crate::protocol::transcript::{MessageKind, Payload, Transcript};
use crate::protocol::{Block, PartyId};

pub use strategies::{DoubleCnot, InterceptResend, MitmGhz, MitmZ, NoAttack};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Ghz(#[from] GhzError),
    #[error("no ancilla recorded for particle {0:?}")]
    MissingAncilla(ParticleId),
    #[error("no stored particle matches returning particle {0:?}")]
    StoredBlockMissing(ParticleId),
    #[error("blocks of one sequence differ in length")]
    RaggedBlocks,
    #[error("substitute pattern has {found} bits, {expected} recipients")]
    AncillaPattern { expected: usize, found: usize },
    #[error("unknown attack {0:?}")]
    UnknownAttack(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "2cnot")]
    DoubleCnot,
    #[serde(rename = "mitm-ghz")]
    MitmGhz,
    #[serde(rename = "mitm-z")]
    MitmZ,
    #[serde(rename = "intercept-resend")]
    InterceptResend,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::None,
        AttackKind::DoubleCnot,
        AttackKind::MitmGhz,
        AttackKind::MitmZ,
        AttackKind::InterceptResend,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::DoubleCnot => "2cnot",
            AttackKind::MitmGhz => "mitm-ghz",
            AttackKind::MitmZ => "mitm-z",
            AttackKind::InterceptResend => "intercept-resend",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| AttackError::UnknownAttack(s.to_string()))
    }
}

/// Computational-basis substitutes for the z-basis man-in-the-middle.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZAncillae {
    /// Fresh uniform bits for every substituted state.
    #[default]
    Random,
    /// The same bits, one per recipient in slot order, every time.
    Fixed(Vec<bool>),
}

/// Flip bits Eve read off returning particles, keyed by (sequence owner,
/// slot) and in block order. The slot is also the encoding party.
pub type Observations = BTreeMap<(PartyId, PartyId), Vec<bool>>;

/// One fake GHZ state sent in place of a genuine one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Substitution {
    pub owner: PartyId,
    /// Original sequence position.
    pub position: usize,
    pub fake: GhzIndex,
    /// Particle of the fake state Eve kept.
    pub keep: usize,
}

pub trait Adversary {
    fn kind(&self) -> AttackKind;

    /// `owner`'s travelling blocks on their way to the recipients.
    fn forward(
        &mut self,
        owner: PartyId,
        blocks: &mut [Block],
        channel: &mut ChannelAccess<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<(), AttackError>;

    /// The same sequence coming back after encoding, check positions removed.
    fn backward(
        &mut self,
        owner: PartyId,
        blocks: &mut [Block],
        channel: &mut ChannelAccess<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<(), AttackError>;

    fn observations(&self) -> &Observations;

    fn substitutions(&self) -> &[Substitution] {
        &[]
    }
}

/// Builds a fresh adversary for one session.
pub fn build_adversary(
    kind: AttackKind,
    z_ancillae: &ZAncillae,
    num_parties: usize,
) -> Result<Box<dyn Adversary + Send>, AttackError> {
    Ok(match kind {
        AttackKind::None => Box::new(NoAttack),
        AttackKind::DoubleCnot => Box::new(DoubleCnot::default()),
        AttackKind::MitmGhz => Box::new(MitmGhz::default()),
        AttackKind::MitmZ => {
            if let ZAncillae::Fixed(bits) = z_ancillae {
                if bits.len() + 1 != num_parties {
                    return Err(AttackError::AncillaPattern {
                        expected: num_parties - 1,
                        found: bits.len(),
                    });
                }
            }
            Box::new(MitmZ::new(z_ancillae.clone()))
        }
        AttackKind::InterceptResend => Box::new(InterceptResend::default()),
    })
}

/// What Eve knows about the operator-to-bit agreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgreementKnowledge {
    Known(Convention),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EveInference {
    /// Guessed encoded bits per encoding party.
    pub guesses: BTreeMap<PartyId, Vec<bool>>,
    pub convention: Option<Convention>,
}

/// Conventions that could have produced every observed flip.
pub fn consistent_conventions(observations: &Observations) -> Vec<Convention> {
    Convention::ALL
        .into_iter()
        .filter(|c| {
            observations.values().flatten().all(|&flip| {
                let word = PauliWord(vec![c.operator(flip)]);
                eve_consistent_ops(&[flip]).contains(&word)
            })
        })
        .collect()
}

/// Eve's key reconstruction. Each party's bits are read from the first
/// sequence on which she saw that party encode. Without knowledge of the
/// agreement she commits to one convention drawn uniformly from those
/// consistent with her observations.
pub fn infer_keys(
    observations: &Observations,
    knowledge: AgreementKnowledge,
    rng: &mut dyn RngCore,
) -> EveInference {
    if observations.is_empty() {
        return EveInference::default();
    }
    let mut guesses = BTreeMap::new();
    for (&(_, slot), flips) in observations {
        guesses.entry(slot).or_insert_with(|| flips.clone());
    }
    let convention = match knowledge {
        AgreementKnowledge::Known(c) => Some(c),
        AgreementKnowledge::Unknown => {
            let candidates = consistent_conventions(observations);
            (!candidates.is_empty()).then(|| candidates[rng.random_range(0..candidates.len())])
        }
    };
    EveInference {
        guesses,
        convention,
    }
}

/// Ground truth Eve is scored against.
pub struct SessionTruth<'a> {
    pub own_keys: &'a [Vec<bool>],
    pub convention: Convention,
    /// Every owner's prepared states in original position order.
    pub prepared: &'a [Vec<GhzIndex>],
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EveReport {
    pub bits_guessed: usize,
    pub bits_correct: usize,
    pub keys_targeted: usize,
    /// Parties whose whole encoded bit string Eve reproduced.
    pub keys_recovered: usize,
    pub convention_guess: Option<Convention>,
    pub convention_correct: bool,
    /// Every party's key recovered under the right convention.
    pub whole_key: bool,
    pub substitutions: usize,
    /// Fakes that matched both the genuine state and the owner's slot.
    pub exact_substitutions: usize,
    pub detected: bool,
}

pub fn score(inference: &EveInference, substitutions: &[Substitution], truth: &SessionTruth<'_>) -> EveReport {
    let mut report = EveReport {
        keys_targeted: truth.own_keys.len(),
        convention_guess: inference.convention,
        convention_correct: inference.convention == Some(truth.convention),
        ..EveReport::default()
    };
    for (&party, guess) in &inference.guesses {
        let actual = &truth.own_keys[party];
        let correct = guess.iter().zip(actual).filter(|(g, a)| g == a).count();
        report.bits_guessed += guess.len();
        report.bits_correct += correct;
        if guess.len() == actual.len() && correct == actual.len() {
            report.keys_recovered += 1;
        }
    }
    report.whole_key = report.convention_correct && report.keys_recovered == report.keys_targeted;
    report.substitutions = substitutions.len();
    report.exact_substitutions = substitutions
        .iter()
        .filter(|s| s.keep == s.owner && truth.prepared[s.owner][s.position] == s.fake)
        .count();
    report
}

/// A transcript entry that tells an outsider something beyond the check
/// data the protocol is meant to publish.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Leak {
    StateAnnouncement { index: usize },
    OutcomeOffCheckSet { index: usize, position: usize },
    RevealOffCheckSet { index: usize, position: usize },
}

/// Lists every leaking message. Prepared or measured state identities must
/// never appear, and measurement outcomes or encoding bits may only be
/// published for positions announced as check positions of that sequence.
pub fn find_leaks(transcript: &Transcript) -> Vec<Leak> {
    let mut check_sets: BTreeMap<PartyId, Vec<usize>> = BTreeMap::new();
    let mut reveal_sets: BTreeMap<PartyId, Vec<usize>> = BTreeMap::new();
    let mut leaks = Vec::new();
    for (index, m) in transcript.messages().iter().enumerate() {
        match (&m.kind, &m.payload) {
            (_, Payload::States(_)) => leaks.push(Leak::StateAnnouncement { index }),
            (MessageKind::CheckPositions, Payload::Positions(p)) => {
                check_sets.entry(m.sequence_owner).or_default().extend(p);
            }
            (MessageKind::DPrimePositions, Payload::Positions(p)) => {
                reveal_sets.entry(m.sequence_owner).or_default().extend(p);
            }
            (_, Payload::Outcomes(outcomes)) => {
                let allowed = check_sets.get(&m.sequence_owner);
                for o in outcomes {
                    if !allowed.is_some_and(|a| a.contains(&o.position)) {
                        leaks.push(Leak::OutcomeOffCheckSet {
                            index,
                            position: o.position,
                        });
                    }
                }
            }
            (_, Payload::Bits(bits)) => {
                let allowed = reveal_sets.get(&m.sequence_owner);
                for &(position, _) in bits {
                    if !allowed.is_some_and(|a| a.contains(&position)) {
                        leaks.push(Leak::RevealOffCheckSet { index, position });
                    }
                }
            }
            _ => {}
        }
    }
    leaks
}

/// `true` when the transcript publishes no state identities and no data
/// about key positions.
pub fn audit_leakage(transcript: &Transcript) -> bool {
    find_leaks(transcript).is_empty()
}
