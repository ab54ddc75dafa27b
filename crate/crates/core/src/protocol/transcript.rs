//! Classical-channel messages and their ordered log.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ghz::GhzIndex;
use crate::statevec::Basis;

use super::PartyId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    AnnounceTransmission,
    ConfirmReception,
    CheckPositions,
    CheckBasis,
    CheckOutcome,
    DPrimePositions,
    DPrimeReveal,
    ErrorRateReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub position: usize,
    pub basis: Basis,
    pub bit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    /// A block of `len` particles for `recipient`.
    Block { recipient: PartyId, len: usize },
    Positions(Vec<usize>),
    Bases(Vec<Basis>),
    Outcomes(Vec<Outcome>),
    /// Encoding bits revealed at sequence positions.
    Bits(Vec<(usize, bool)>),
    ErrorRates(Vec<(PartyId, f64)>),
    /// Public statement of prepared or measured GHZ states. Honest parties
    /// never send one; it exists so that transcripts of leaky variants can
    /// be represented and rejected by the leakage audit.
    States(Vec<(usize, GhzIndex)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalMessage {
    pub sequence_owner: PartyId,
    pub sender: PartyId,
    pub kind: MessageKind,
    pub payload: Payload,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FramingError {
    #[error("message {index}: {kind:?} from party {sender} without a pending announcement")]
    UnexpectedConfirmation {
        index: usize,
        kind: MessageKind,
        sender: PartyId,
    },
    #[error("message {index}: announcement to party {recipient} never confirmed")]
    Unconfirmed { index: usize, recipient: PartyId },
}

/// Append-only, totally ordered message log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    messages: Vec<ClassicalMessage>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, message: ClassicalMessage) {
        self.messages.push(message);
    }

    pub fn messages(&self) -> &[ClassicalMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn count(&self, kind: MessageKind) -> usize {
        self.messages.iter().filter(|m| m.kind == kind).count()
    }

    /// Every announcement must be confirmed by its recipient before any
    /// message of another kind appears.
    pub fn check_framing(&self) -> Result<(), FramingError> {
        let mut pending: Vec<(usize, PartyId, PartyId)> = Vec::new();
        for (index, m) in self.messages.iter().enumerate() {
            match (&m.kind, &m.payload) {
                (MessageKind::AnnounceTransmission, Payload::Block { recipient, .. }) => {
                    pending.push((index, m.sequence_owner, *recipient));
                }
                (MessageKind::ConfirmReception, _) => {
                    let found = pending
                        .iter()
                        .position(|&(_, owner, to)| to == m.sender && owner == m.sequence_owner);
                    match found {
                        Some(k) => {
                            pending.remove(k);
                        }
                        None => {
                            return Err(FramingError::UnexpectedConfirmation {
                                index,
                                kind: m.kind,
                                sender: m.sender,
                            })
                        }
                    }
                }
                _ => {
                    if let Some(&(index, _, recipient)) = pending.first() {
                        return Err(FramingError::Unconfirmed { index, recipient });
                    }
                }
            }
        }
        match pending.first() {
            Some(&(index, _, recipient)) => Err(FramingError::Unconfirmed { index, recipient }),
            None => Ok(()),
        }
    }

    /// One JSON object per line, in transcript order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for m in &self.messages {
            serde_json::to_writer(&mut out, m)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> serde_json::Result<Transcript> {
        let messages = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Transcript { messages })
    }
}
