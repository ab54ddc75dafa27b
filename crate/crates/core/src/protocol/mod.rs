//! Party state machines and the session that drives them.
//!
//! A session runs the two-pass exchange for `N` parties. Each party owns a
//! sequence of GHZ states, keeps one particle of every state at home and
//! sends the others out in blocks. Partners encode their own key bits on
//! the particles they hold and send them back, and every owner reads all
//! partners' keys off its returned states with a GHZ-basis measurement.
//! Two sacrificial position sets catch eavesdroppers: the `d` set is
//! measured before encoding, the `d′` set is revealed after decoding.

pub mod memory;
pub mod transcript;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{self, Adversary, AgreementKnowledge, AttackError, EveReport, SessionTruth};
use crate::ghz::{
    decode_flips, x_outcomes_consistent, z_pattern_consistent, EncodingAgreement, EncodingMode,
    GhzError, GhzIndex,
};
use crate::statevec::{Basis, Gate};

use memory::{ChannelAccess, Holder, MemoryError, ParticleId, QuantumMemory};
use transcript::{ClassicalMessage, MessageKind, Outcome, Payload, Transcript};

pub type PartyId = usize;

/// Random stream used for every stochastic step of a session.
pub type SimRng = ChaCha8Rng;

/// Largest party count. The double-CNOT attack adds `N − 1` ancillae to
/// each `N`-qubit register, which must stay within the simulator cap.
pub const MAX_PARTIES: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("party count {0} outside 2..={MAX_PARTIES}")]
    PartyCount(usize),
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("error threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("fixed state has {found} particles, session has {expected} parties")]
    FixedState { expected: usize, found: usize },
    #[error(transparent)]
    Attack(#[from] AttackError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("block of party {owner}'s sequence to party {recipient} was not confirmed")]
    MissingConfirmation { owner: PartyId, recipient: PartyId },
    #[error("check on party {owner}'s sequence names position {position} twice or out of range")]
    PositionCollision { owner: PartyId, position: usize },
    #[error("party {sender} announced a different basis or position set on party {owner}'s check")]
    BasisMismatch { owner: PartyId, sender: PartyId },
    #[error("party {party} holds {found} particles of a sequence but has a {expected}-bit key")]
    KeyLengthMismatch {
        party: PartyId,
        expected: usize,
        found: usize,
    },
    #[error("party {found} revealed out of turn on party {owner}'s d′ set (expected {expected})")]
    OutOfTurn {
        owner: PartyId,
        expected: PartyId,
        found: PartyId,
    },
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Ghz(#[from] GhzError),
}

/// Sizes of the key set and the two check sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencePlan {
    pub n: usize,
    pub d: usize,
    pub d_prime: usize,
}

impl SequencePlan {
    pub fn new(n: usize, d: usize, d_prime: usize) -> Result<Self, ConfigError> {
        let plan = SequencePlan { n, d, d_prime };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [("n", self.n), ("d", self.d), ("d_prime", self.d_prime)] {
            if v == 0 {
                return Err(ConfigError::ZeroCount(name));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n + self.d + self.d_prime
    }

    /// Length of each party's encoded key, sacrificial bits included.
    pub fn key_len(&self) -> usize {
        self.n + self.d_prime
    }
}

/// An ordered run of particles of one owner's sequence, travelling to or
/// from the party in `slot`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub owner: PartyId,
    pub slot: PartyId,
    pub particles: Vec<ParticleId>,
}

/// One legitimate user.
#[derive(Debug, Clone)]
pub struct Party {
    pub id: PartyId,
    /// Prepared state per surviving position of the own sequence.
    pub prepared: Vec<GhzIndex>,
    /// Original sequence position of each surviving entry.
    pub positions: Vec<usize>,
    /// Particles that never leave this party.
    pub home: Vec<ParticleId>,
    outgoing: BTreeMap<PartyId, Vec<ParticleId>>,
    /// Particles of other owners' sequences currently held, keyed by owner.
    pub held: BTreeMap<PartyId, Vec<ParticleId>>,
    /// Own particles back from each partner, keyed by slot.
    pub returned: BTreeMap<PartyId, Vec<ParticleId>>,
    /// `n + d′` bits; the entries at `d_prime` indices are sacrificial.
    pub own_key: Vec<bool>,
    /// Indices into the surviving sequence that form the `d′` set.
    pub d_prime: Vec<usize>,
    /// Each partner's encoded bits as read off the own sequence.
    pub decoded_keys: BTreeMap<PartyId, Vec<bool>>,
    /// Surviving indices whose measured sign disagreed with the prepared one.
    pub tampered: Vec<usize>,
}

impl Party {
    /// A fresh party with a random key and `d′` index set.
    pub fn new(id: PartyId, plan: &SequencePlan, rng: &mut SimRng) -> Self {
        let own_key = (0..plan.key_len()).map(|_| rng.random_bool(0.5)).collect();
        let mut d_prime = sample(rng, plan.key_len(), plan.d_prime).into_vec();
        d_prime.sort_unstable();
        Party {
            id,
            prepared: Vec::new(),
            positions: Vec::new(),
            home: Vec::new(),
            outgoing: BTreeMap::new(),
            held: BTreeMap::new(),
            returned: BTreeMap::new(),
            own_key,
            d_prime,
            decoded_keys: BTreeMap::new(),
            tampered: Vec::new(),
        }
    }

    /// Prepares `plan.total()` GHZ states, uniformly random unless `fixed`,
    /// and splits their particles into one ordered sequence per slot.
    pub fn prepare_sequences(
        &mut self,
        plan: &SequencePlan,
        num_parties: usize,
        fixed: Option<GhzIndex>,
        memory: &mut QuantumMemory,
        rng: &mut SimRng,
    ) -> Result<(), GhzError> {
        for k in 0..plan.total() {
            let state = match fixed {
                Some(g) => g,
                None => GhzIndex::random(num_parties, rng)?,
            };
            let ids = memory.alloc_ghz(&state, Holder::Party(self.id));
            for (slot, id) in ids.into_iter().enumerate() {
                if slot == self.id {
                    self.home.push(id);
                } else {
                    self.outgoing.entry(slot).or_default().push(id);
                }
            }
            self.prepared.push(state);
            self.positions.push(k);
        }
        Ok(())
    }

    /// Sequence the party would send to `slot`, before distribution.
    pub fn outgoing(&self, slot: PartyId) -> Option<&[ParticleId]> {
        self.outgoing.get(&slot).map(Vec::as_slice)
    }

    /// Surviving indices that carry final key bits.
    pub fn key_indices(&self) -> Vec<usize> {
        (0..self.own_key.len())
            .filter(|i| self.d_prime.binary_search(i).is_err())
            .collect()
    }
}

/// Outcome of the pre-encoding check on one owner's sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub owner: PartyId,
    pub positions: Vec<usize>,
    pub z_checks: usize,
    pub z_failures: usize,
    pub x_checks: usize,
    pub x_failures: usize,
}

impl CheckReport {
    pub fn detected(&self) -> bool {
        self.z_failures + self.x_failures > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub num_parties: usize,
    pub plan: SequencePlan,
    pub encoding_mode: EncodingMode,
    pub eve_knows_agreement: bool,
    /// Largest `d′` error rate at which an owner's key is accepted.
    pub error_threshold: f64,
    /// Drop an owner's sequence once its `d` check detects Eve.
    pub abort_on_detection: bool,
    /// Prepare every state as this one instead of at random.
    pub fixed_state: Option<GhzIndex>,
}

impl SessionConfig {
    pub fn new(num_parties: usize, plan: SequencePlan) -> Self {
        SessionConfig {
            num_parties,
            plan,
            encoding_mode: EncodingMode::TwoOp,
            eve_knows_agreement: false,
            error_threshold: 0.0,
            abort_on_detection: false,
            fixed_state: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(2..=MAX_PARTIES).contains(&self.num_parties) {
            return Err(ConfigError::PartyCount(self.num_parties));
        }
        self.plan.validate()?;
        if !(0.0..=1.0).contains(&self.error_threshold) {
            return Err(ConfigError::Threshold(self.error_threshold));
        }
        if let Some(g) = self.fixed_state {
            if g.num_parties() != self.num_parties {
                return Err(ConfigError::FixedState {
                    expected: self.num_parties,
                    found: g.num_parties(),
                });
            }
        }
        Ok(())
    }
}

/// Everything observable about one completed (or aborted) session.
#[derive(Debug, Clone)]
pub struct SessionReport {
    pub num_parties: usize,
    pub agreement: EncodingAgreement,
    pub aborted: Option<ProtocolError>,
    pub checks: Vec<Option<CheckReport>>,
    pub detected: Vec<bool>,
    /// Per owner, the `d′` error rate of each partner.
    pub dprime_errors: Vec<Option<BTreeMap<PartyId, f64>>>,
    pub accepted: Vec<bool>,
    /// Per owner, whether each partner's key was decoded exactly on the
    /// key positions.
    pub key_agreement: Vec<BTreeMap<PartyId, bool>>,
    pub tampered: Vec<usize>,
    pub selected_key_owner: Option<PartyId>,
    pub home_particles_intact: bool,
    pub own_keys: Vec<Vec<bool>>,
    pub eve: EveReport,
    pub transcript: Transcript,
}

impl SessionReport {
    pub fn any_detected(&self) -> bool {
        self.detected.iter().any(|&d| d)
    }

    /// Every owner decoded every partner's key exactly.
    pub fn full_agreement(&self) -> bool {
        self.aborted.is_none()
            && self
                .key_agreement
                .iter()
                .all(|m| !m.is_empty() && m.values().all(|&ok| ok))
    }

    pub fn max_dprime_error(&self, owner: PartyId) -> Option<f64> {
        self.dprime_errors[owner]
            .as_ref()
            .map(|m| m.values().copied().fold(0.0, f64::max))
    }
}

/// Owner whose worst partner error rate is lowest; ties go to the lowest id.
pub fn select_best_key(rates: &[(PartyId, f64)]) -> Option<PartyId> {
    rates
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(id, _)| id)
}

/// Checks that `d′` reveals come from partners in strict rotation.
pub fn check_alternation(
    owner: PartyId,
    partners: &[PartyId],
    senders: &[PartyId],
) -> Result<(), ProtocolError> {
    for (k, &found) in senders.iter().enumerate() {
        let expected = partners[k % partners.len()];
        if found != expected {
            return Err(ProtocolError::OutOfTurn {
                owner,
                expected,
                found,
            });
        }
    }
    Ok(())
}

pub struct Session<'a> {
    config: SessionConfig,
    agreement: EncodingAgreement,
    parties: Vec<Party>,
    memory: QuantumMemory,
    transcript: Transcript,
    adversary: &'a mut dyn Adversary,
    /// Prepared states of every position, kept for scoring Eve.
    initial: Vec<Vec<GhzIndex>>,
    checks: Vec<Option<CheckReport>>,
    dropped: Vec<bool>,
    dprime_errors: Vec<Option<BTreeMap<PartyId, f64>>>,
}

impl<'a> Session<'a> {
    /// Fixes the encoding agreement, creates the parties and has each one
    /// prepare its sequence.
    pub fn new(
        config: SessionConfig,
        adversary: &'a mut dyn Adversary,
        rng: &mut SimRng,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let agreement = EncodingAgreement::sample(config.encoding_mode, rng);
        let n = config.num_parties;
        let mut memory = QuantumMemory::new();
        let mut parties = Vec::with_capacity(n);
        for id in 0..n {
            let mut party = Party::new(id, &config.plan, rng);
            party
                .prepare_sequences(&config.plan, n, config.fixed_state, &mut memory, rng)
                .expect("party count validated");
            parties.push(party);
        }
        let initial = parties.iter().map(|p| p.prepared.clone()).collect();
        Ok(Session {
            agreement,
            parties,
            memory,
            transcript: Transcript::new(),
            adversary,
            initial,
            checks: vec![None; n],
            dropped: vec![false; n],
            dprime_errors: vec![None; n],
            config,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn agreement(&self) -> EncodingAgreement {
        self.agreement
    }

    pub fn parties(&self) -> &[Party] {
        &self.parties
    }

    pub fn memory(&self) -> &QuantumMemory {
        &self.memory
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    fn num_parties(&self) -> usize {
        self.config.num_parties
    }

    fn partners(&self, owner: PartyId) -> Vec<PartyId> {
        (0..self.num_parties()).filter(|&p| p != owner).collect()
    }

    fn send(&mut self, sequence_owner: PartyId, sender: PartyId, kind: MessageKind, payload: Payload) {
        self.transcript.push(ClassicalMessage {
            sequence_owner,
            sender,
            kind,
            payload,
        });
    }

    /// Moves blocks across the channel: announce each, let the adversary
    /// act on the whole set, then have each recipient confirm.
    fn transmit(
        &mut self,
        owner: PartyId,
        mut blocks: Vec<Block>,
        backward: bool,
        rng: &mut SimRng,
    ) -> Result<Vec<(PartyId, Vec<ParticleId>)>, ProtocolError> {
        let mut announced = Vec::with_capacity(blocks.len());
        for block in &blocks {
            for &id in &block.particles {
                self.memory.set_holder(id, Holder::Transit)?;
            }
            let (sender, recipient) = if backward {
                (block.slot, owner)
            } else {
                (owner, block.slot)
            };
            let len = block.particles.len();
            announced.push((recipient, len));
            self.send(
                owner,
                sender,
                MessageKind::AnnounceTransmission,
                Payload::Block { recipient, len },
            );
        }
        {
            let mut channel = ChannelAccess::new(&mut self.memory);
            if backward {
                self.adversary.backward(owner, &mut blocks, &mut channel, rng)?;
            } else {
                self.adversary.forward(owner, &mut blocks, &mut channel, rng)?;
            }
        }
        let mut delivered = Vec::with_capacity(blocks.len());
        for (block, (recipient, len)) in blocks.into_iter().zip(announced) {
            let intact = block.particles.len() == len
                && block
                    .particles
                    .iter()
                    .all(|&id| self.memory.holder(id) == Ok(Holder::Transit));
            if !intact {
                return Err(ProtocolError::MissingConfirmation { owner, recipient });
            }
            for &id in &block.particles {
                self.memory.set_holder(id, Holder::Party(recipient))?;
            }
            self.send(
                owner,
                recipient,
                MessageKind::ConfirmReception,
                Payload::Block { recipient, len },
            );
            delivered.push((block.slot, block.particles));
        }
        Ok(delivered)
    }

    /// Forward pass: every owner's travelling sequences go to their
    /// recipients as whole blocks.
    pub fn distribute(&mut self, rng: &mut SimRng) -> Result<(), ProtocolError> {
        for owner in 0..self.num_parties() {
            let outgoing = std::mem::take(&mut self.parties[owner].outgoing);
            let blocks = outgoing
                .into_iter()
                .map(|(slot, particles)| Block {
                    owner,
                    slot,
                    particles,
                })
                .collect();
            for (slot, particles) in self.transmit(owner, blocks, false, rng)? {
                self.parties[slot].held.insert(owner, particles);
            }
        }
        Ok(())
    }

    /// Pre-encoding check of `owner`'s sequence. The next party chooses `d`
    /// positions and a basis for each; partners measure and announce, the
    /// owner measures its home particles last and judges consistency.
    pub fn check_d(&mut self, owner: PartyId, rng: &mut SimRng) -> Result<CheckReport, ProtocolError> {
        let n = self.num_parties();
        let chooser = (owner + 1) % n;
        let surviving = self.parties[owner].positions.len();
        let mut picks = sample(rng, surviving, self.config.plan.d.min(surviving)).into_vec();
        picks.sort_unstable();
        let positions: Vec<usize> = picks
            .iter()
            .map(|&i| self.parties[owner].positions[i])
            .collect();
        let bases: Vec<Basis> = picks.iter().map(|_| Basis::random(rng)).collect();

        let start = self.transcript.len();
        self.send(owner, chooser, MessageKind::CheckPositions, Payload::Positions(positions.clone()));
        self.send(owner, chooser, MessageKind::CheckBasis, Payload::Bases(bases.clone()));

        let mut order: Vec<PartyId> = vec![chooser];
        order.extend((0..n).filter(|&p| p != owner && p != chooser));
        order.push(owner);
        for &party in &order {
            let mut outcomes = Vec::with_capacity(picks.len());
            for (&i, (&position, &basis)) in picks.iter().zip(positions.iter().zip(&bases)) {
                let id = if party == owner {
                    self.parties[owner].home[i]
                } else {
                    self.parties[party].held[&owner][i]
                };
                let bit = self.memory.measure(id, basis, rng)?;
                outcomes.push(Outcome {
                    position,
                    basis,
                    bit,
                });
            }
            self.send(owner, party, MessageKind::CheckOutcome, Payload::Outcomes(outcomes));
        }

        let announced = collect_check_announcements(
            owner,
            &self.transcript.messages()[start..],
            &self.parties[owner].positions,
        )?;

        let mut report = CheckReport {
            owner,
            positions: positions.clone(),
            z_checks: 0,
            z_failures: 0,
            x_checks: 0,
            x_failures: 0,
        };
        for (k, &i) in picks.iter().enumerate() {
            let bits: Vec<bool> = (0..n).map(|slot| announced.outcomes[&slot][k].bit).collect();
            let prepared = &self.parties[owner].prepared[i];
            match announced.bases[k] {
                Basis::Z => {
                    report.z_checks += 1;
                    if !z_pattern_consistent(prepared, &bits)? {
                        report.z_failures += 1;
                    }
                }
                Basis::X => {
                    report.x_checks += 1;
                    if !x_outcomes_consistent(prepared, &bits)? {
                        report.x_failures += 1;
                    }
                }
            }
        }

        let keep: Vec<bool> = (0..surviving).map(|i| picks.binary_search(&i).is_err()).collect();
        let retain = |v: &mut Vec<ParticleId>| {
            let mut it = keep.iter();
            v.retain(|_| *it.next().expect("aligned"));
        };
        let o = &mut self.parties[owner];
        retain(&mut o.home);
        let mut it = keep.iter();
        o.prepared.retain(|_| *it.next().expect("aligned"));
        let mut it = keep.iter();
        o.positions.retain(|_| *it.next().expect("aligned"));
        for party in self.parties.iter_mut().filter(|p| p.id != owner) {
            if let Some(held) = party.held.get_mut(&owner) {
                retain(held);
            }
        }

        if report.detected() && self.config.abort_on_detection {
            self.dropped[owner] = true;
            for party in &mut self.parties {
                party.held.remove(&owner);
            }
        }
        self.checks[owner] = Some(report.clone());
        Ok(report)
    }

    /// Party `party` applies its key, one operator per position, to the
    /// particle it holds from every other owner's sequence.
    pub fn encode_key(&mut self, party: PartyId) -> Result<(), ProtocolError> {
        let p = &self.parties[party];
        for particles in p.held.values() {
            if particles.len() != p.own_key.len() {
                return Err(ProtocolError::KeyLengthMismatch {
                    party,
                    expected: p.own_key.len(),
                    found: particles.len(),
                });
            }
            for (&id, &bit) in particles.iter().zip(&p.own_key) {
                let gate: Gate = self.agreement.operator(bit).gate();
                self.memory.apply_gate(id, gate)?;
            }
        }
        Ok(())
    }

    /// Backward pass: every held block goes home.
    pub fn return_blocks(&mut self, rng: &mut SimRng) -> Result<(), ProtocolError> {
        for owner in 0..self.num_parties() {
            if self.dropped[owner] {
                continue;
            }
            let mut blocks = Vec::new();
            for slot in self.partners(owner) {
                if let Some(particles) = self.parties[slot].held.remove(&owner) {
                    blocks.push(Block {
                        owner,
                        slot,
                        particles,
                    });
                }
            }
            for (slot, particles) in self.transmit(owner, blocks, true, rng)? {
                self.parties[owner].returned.insert(slot, particles);
            }
        }
        Ok(())
    }

    /// GHZ-basis measurement of each returned state, compared with the
    /// prepared one, gives one bit per partner per position.
    pub fn decode_keys(&mut self, owner: PartyId, rng: &mut SimRng) -> Result<(), ProtocolError> {
        let n = self.num_parties();
        let partners = self.partners(owner);
        let len = self.parties[owner].prepared.len();
        let mut decoded: BTreeMap<PartyId, Vec<bool>> =
            partners.iter().map(|&p| (p, Vec::with_capacity(len))).collect();
        let mut tampered = Vec::new();
        for i in 0..len {
            let o = &self.parties[owner];
            let ids: Vec<ParticleId> = (0..n)
                .map(|slot| {
                    if slot == owner {
                        o.home[i]
                    } else {
                        o.returned[&slot][i]
                    }
                })
                .collect();
            let prepared = o.prepared[i];
            let measured = self.memory.measure_ghz(&ids, rng)?;
            let result = decode_flips(&prepared, &measured, owner)?;
            if result.sign_changed && !self.agreement.changes_sign() {
                tampered.push(i);
            }
            let bits = self.agreement.bits_from_flips(&result.flips);
            for (&p, bit) in partners.iter().zip(bits) {
                decoded.get_mut(&p).expect("partner").push(bit);
            }
        }
        let o = &mut self.parties[owner];
        o.decoded_keys = decoded;
        o.tampered = tampered;
        Ok(())
    }

    /// Post-decoding check: the owner names its `d′` positions, partners
    /// reveal their encoding bits there in strict rotation, and the owner
    /// reports each partner's mismatch rate.
    pub fn verify_dprime(&mut self, owner: PartyId) -> Result<BTreeMap<PartyId, f64>, ProtocolError> {
        let partners = self.partners(owner);
        let o = &self.parties[owner];
        let indices = o.d_prime.clone();
        let positions: Vec<usize> = indices.iter().map(|&i| o.positions[i]).collect();
        self.send(owner, owner, MessageKind::DPrimePositions, Payload::Positions(positions.clone()));

        let start = self.transcript.len();
        for (k, (&i, &position)) in indices.iter().zip(&positions).enumerate() {
            let partner = partners[k % partners.len()];
            let bit = self.parties[partner].own_key[i];
            self.send(owner, partner, MessageKind::DPrimeReveal, Payload::Bits(vec![(position, bit)]));
        }

        let reveals = &self.transcript.messages()[start..];
        let senders: Vec<PartyId> = reveals.iter().map(|m| m.sender).collect();
        check_alternation(owner, &partners, &senders)?;
        let o = &self.parties[owner];
        let mut tally: BTreeMap<PartyId, (usize, usize)> =
            partners.iter().map(|&p| (p, (0, 0))).collect();
        for m in reveals {
            if let Payload::Bits(bits) = &m.payload {
                for &(position, bit) in bits {
                    let i = o
                        .positions
                        .iter()
                        .position(|&p| p == position)
                        .ok_or(ProtocolError::PositionCollision { owner, position })?;
                    let entry = tally.get_mut(&m.sender).expect("partner");
                    entry.0 += 1;
                    if o.decoded_keys[&m.sender][i] != bit {
                        entry.1 += 1;
                    }
                }
            }
        }
        let rates: BTreeMap<PartyId, f64> = tally
            .into_iter()
            .map(|(p, (seen, wrong))| (p, if seen == 0 { 0.0 } else { wrong as f64 / seen as f64 }))
            .collect();
        self.send(
            owner,
            owner,
            MessageKind::ErrorRateReport,
            Payload::ErrorRates(rates.iter().map(|(&p, &r)| (p, r)).collect()),
        );
        self.dprime_errors[owner] = Some(rates.clone());
        Ok(rates)
    }

    fn run_steps(&mut self, rng: &mut SimRng) -> Result<(), ProtocolError> {
        self.distribute(rng)?;
        for owner in 0..self.num_parties() {
            self.check_d(owner, rng)?;
        }
        for party in 0..self.num_parties() {
            self.encode_key(party)?;
        }
        self.return_blocks(rng)?;
        for owner in 0..self.num_parties() {
            if !self.dropped[owner] {
                self.decode_keys(owner, rng)?;
            }
        }
        for owner in 0..self.num_parties() {
            if !self.dropped[owner] {
                self.verify_dprime(owner)?;
            }
        }
        Ok(())
    }

    /// Runs every step, then scores the session and the adversary.
    pub fn run(mut self, rng: &mut SimRng) -> SessionReport {
        let aborted = self.run_steps(rng).err();
        let n = self.num_parties();

        let detected: Vec<bool> = self
            .checks
            .iter()
            .map(|c| c.as_ref().is_some_and(CheckReport::detected))
            .collect();

        let key_agreement: Vec<BTreeMap<PartyId, bool>> = self
            .parties
            .iter()
            .map(|o| {
                let keys = o.key_indices();
                o.decoded_keys
                    .iter()
                    .map(|(&p, bits)| {
                        let truth = &self.parties[p].own_key;
                        let ok = bits.len() == truth.len() && keys.iter().all(|&i| bits[i] == truth[i]);
                        (p, ok)
                    })
                    .collect()
            })
            .collect();

        let max_error = |owner: PartyId| {
            self.dprime_errors[owner]
                .as_ref()
                .map(|m| m.values().copied().fold(0.0, f64::max))
        };
        let accepted: Vec<bool> = (0..n)
            .map(|o| {
                aborted.is_none()
                    && !detected[o]
                    && max_error(o).is_some_and(|e| e <= self.config.error_threshold)
            })
            .collect();
        let candidates: Vec<(PartyId, f64)> = (0..n)
            .filter(|&o| accepted[o])
            .filter_map(|o| max_error(o).map(|e| (o, e)))
            .collect();
        let selected_key_owner = select_best_key(&candidates);

        let home_particles_intact = self.parties.iter().all(|p| {
            p.home
                .iter()
                .all(|&id| self.memory.holder(id) == Ok(Holder::Party(p.id)))
        });

        let knowledge = if self.config.eve_knows_agreement {
            AgreementKnowledge::Known(self.agreement.convention)
        } else {
            AgreementKnowledge::Unknown
        };
        let inference = adversary::infer_keys(self.adversary.observations(), knowledge, rng);
        let own_keys: Vec<Vec<bool>> = self.parties.iter().map(|p| p.own_key.clone()).collect();
        let truth = SessionTruth {
            own_keys: &own_keys,
            convention: self.agreement.convention,
            prepared: &self.initial,
        };
        let mut eve = adversary::score(&inference, self.adversary.substitutions(), &truth);
        eve.detected = detected.iter().any(|&d| d);

        SessionReport {
            num_parties: n,
            agreement: self.agreement,
            aborted,
            checks: self.checks,
            detected,
            dprime_errors: self.dprime_errors,
            accepted,
            key_agreement,
            tampered: self.parties.iter().map(|p| p.tampered.len()).collect(),
            selected_key_owner,
            home_particles_intact,
            own_keys,
            eve,
            transcript: self.transcript,
        }
    }
}

struct CheckAnnouncements {
    bases: Vec<Basis>,
    /// Outcomes per announcing party, in announced position order.
    outcomes: BTreeMap<PartyId, Vec<Outcome>>,
}

/// Validates the messages of one `d` check: distinct positions that exist
/// in the sequence, and every outcome list naming the same positions and
/// bases as the chooser announced.
fn collect_check_announcements(
    owner: PartyId,
    messages: &[ClassicalMessage],
    sequence: &[usize],
) -> Result<CheckAnnouncements, ProtocolError> {
    let mut positions: Option<&[usize]> = None;
    let mut bases: Option<&[Basis]> = None;
    let mut outcomes = BTreeMap::new();
    for m in messages.iter().filter(|m| m.sequence_owner == owner) {
        match (&m.kind, &m.payload) {
            (MessageKind::CheckPositions, Payload::Positions(p)) => {
                for (k, &position) in p.iter().enumerate() {
                    if p[..k].contains(&position) || !sequence.contains(&position) {
                        return Err(ProtocolError::PositionCollision { owner, position });
                    }
                }
                positions = Some(p);
            }
            (MessageKind::CheckBasis, Payload::Bases(b)) => bases = Some(b),
            (MessageKind::CheckOutcome, Payload::Outcomes(o)) => {
                let (Some(p), Some(b)) = (positions, bases) else {
                    return Err(ProtocolError::BasisMismatch {
                        owner,
                        sender: m.sender,
                    });
                };
                let matches = o.len() == p.len()
                    && o.iter()
                        .zip(p.iter().zip(b))
                        .all(|(out, (&pos, &basis))| out.position == pos && out.basis == basis);
                if !matches {
                    return Err(ProtocolError::BasisMismatch {
                        owner,
                        sender: m.sender,
                    });
                }
                outcomes.insert(m.sender, o.clone());
            }
            _ => {}
        }
    }
    Ok(CheckAnnouncements {
        bases: bases.map(<[Basis]>::to_vec).unwrap_or_default(),
        outcomes,
    })
}

/// Runs a complete session. Protocol aborts are recorded in the report.
pub fn run_session(
    config: SessionConfig,
    adversary: &mut dyn Adversary,
    rng: &mut SimRng,
) -> Result<SessionReport, ConfigError> {
    Ok(Session::new(config, adversary, rng)?.run(rng))
}
