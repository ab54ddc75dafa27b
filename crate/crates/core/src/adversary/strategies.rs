use std::collections::HashMap;

use rand::{Rng, RngCore};

use crate::ghz::{decode_flips, GhzIndex};
use crate::protocol::memory::{ChannelAccess, ParticleId};
use crate::protocol::{Block, PartyId};
use crate::statevec::{Basis, Gate};

use super::{Adversary, AttackError, AttackKind, Observations, Substitution, ZAncillae};

fn block_len(blocks: &[Block]) -> Result<usize, AttackError> {
    let len = blocks.first().map_or(0, |b| b.particles.len());
    if blocks.iter().any(|b| b.particles.len() != len) {
        return Err(AttackError::RaggedBlocks);
    }
    Ok(len)
}

/// Leaves the channel alone.
#[derive(Debug, Default)]
pub struct NoAttack;

impl Adversary for NoAttack {
    fn kind(&self) -> AttackKind {
        AttackKind::None
    }

    fn forward(
        &mut self,
        _: PartyId,
        _: &mut [Block],
        _: &mut ChannelAccess<'_>,
        _: &mut dyn RngCore,
    ) -> Result<(), AttackError> {
        Ok(())
    }

    fn backward(
        &mut self,
        _: PartyId,
        _: &mut [Block],
        _: &mut ChannelAccess<'_>,
        _: &mut dyn RngCore,
    ) -> Result<(), AttackError> {
        Ok(())
    }

    fn observations(&self) -> &Observations {
        static EMPTY: Observations = Observations::new();
        &EMPTY
    }
}

/// Double-CNOT attack. On the way out each travelling particle controls a
/// CNOT onto a fresh `|0⟩` ancilla; on the way back a second CNOT undoes
/// the entanglement and leaves in the ancilla the bit flip applied by the
/// encoder, which Eve reads in the Z basis.
#[derive(Debug, Default)]
pub struct DoubleCnot {
    ancillae: HashMap<ParticleId, ParticleId>,
    observations: Observations,
}

impl DoubleCnot {
    /// Ancilla entangled with a travelling particle, if any.
    pub fn ancilla_of(&self, particle: ParticleId) -> Option<ParticleId> {
        self.ancillae.get(&particle).copied()
    }

    pub fn cnot_forward(&mut self, block: &Block, channel: &mut ChannelAccess<'_>) -> Result<(), AttackError> {
        for &p in &block.particles {
            let ancilla = channel.alloc_qubit(false);
            channel.apply_cnot(p, ancilla)?;
            self.ancillae.insert(p, ancilla);
        }
        Ok(())
    }

    pub fn cnot_backward(
        &mut self,
        block: &Block,
        channel: &mut ChannelAccess<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<bool>, AttackError> {
        let mut flips = Vec::with_capacity(block.particles.len());
        for &p in &block.particles {
            let ancilla = self.ancillae.remove(&p).ok_or(AttackError::MissingAncilla(p))?;
            channel.apply_cnot(p, ancilla)?;
            flips.push(channel.measure(ancilla, Basis::Z, rng)?);
        }
        Ok(flips)
    }
}

impl Adversary for DoubleCnot {
    fn kind(&self) -> AttackKind {
        AttackKind::DoubleCnot
    }

    fn forward(
        &mut self,
        _: PartyId,
        blocks: &mut [Block],
        channel: &mut ChannelAccess<'_>,
        _: &mut dyn RngCore,
    ) -> Result<(), AttackError> {
        for block in blocks.iter() {
            self.cnot_forward(block, channel)?;
        }
        Ok(())
    }

    fn backward(
        &mut self,
        owner: PartyId,
        blocks: &mut [Block],
        channel: &mut ChannelAccess<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<(), AttackError> {
        for block in blocks.iter() {
            let flips = self.cnot_backward(block, channel, rng)?;
            self.observations
                .entry((owner, block.slot))
                .or_default()
                .extend(flips);
        }
        Ok(())
    }

    fn observations(&self) -> &Observations {
        &self.observations
    }
}

#[derive(Debug)]
struct Stored {
    substitution: usize,
    /// Index of the block (recipient) this fake went to.
    block: usize,
    genuine: ParticleId,
}

/// Man-in-the-middle with fake GHZ states. Eve stores the genuine
/// particles, prepares a random GHZ state, keeps one random particle of it
/// and sends the rest. On the way back she reads the encoding off her fake
/// state with a GHZ-basis measurement and copies the flips onto the stored
/// genuine particles, which she forwards.
#[derive(Debug, Default)]
pub struct MitmGhz {
    substitutions: Vec<Substitution>,
    fakes: Vec<Vec<ParticleId>>,
    stored: HashMap<ParticleId, Stored>,
    observations: Observations,
}

impl MitmGhz {
    /// Substitutes one position of the sequence; returns the record.
    pub fn mitm_forward(
        &mut self,
        owner: PartyId,
        position: usize,
        blocks: &mut [Block],
        channel: &mut ChannelAccess<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<&Substitution, AttackError> {
        let n = blocks.len() + 1;
        let fake = GhzIndex::random(n, rng)?;
        let keep = rng.random_range(0..n);
        let fake_ids = channel.alloc_ghz(&fake);
        let sent = (0..n).filter(|&s| s != keep);
        let substitution = self.substitutions.len();
        for (b, (block, slot)) in blocks.iter_mut().zip(sent).enumerate() {
            let genuine = block.particles[position];
            channel.capture(genuine)?;
            let f = fake_ids[slot];
            channel.release(f)?;
            block.particles[position] = f;
            self.stored.insert(
                f,
                Stored {
                    substitution,
                    block: b,
                    genuine,
                },
            );
        }
        self.fakes.push(fake_ids);
        self.substitutions.push(Substitution {
            owner,
            position,
            fake,
            keep,
        });
        Ok(&self.substitutions[substitution])
    }
}

impl Adversary for MitmGhz {
    fn kind(&self) -> AttackKind {
        AttackKind::MitmGhz
    }

    fn forward(
        &mut self,
        owner: PartyId,
        blocks: &mut [Block],
        channel: &mut ChannelAccess<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<(), AttackError> {
        for position in 0..block_len(blocks)? {
            self.mitm_forward(owner, position, blocks, channel, rng)?;
        }
        Ok(())
    }

    fn backward(
        &mut self,
        owner: PartyId,
        blocks: &mut [Block],
        channel: &mut ChannelAccess<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<(), AttackError> {
        // Read every returning fake state once.
        let mut flips: HashMap<usize, Vec<bool>> = HashMap::new();
        for block in blocks.iter() {
            for &f in &block.particles {
                let s = self.stored.get(&f).ok_or(AttackError::StoredBlockMissing(f))?;
                if flips.contains_key(&s.substitution) {
                    continue;
                }
                let record = &self.substitutions[s.substitution];
                let measured = channel.measure_ghz(&self.fakes[s.substitution], rng)?;
                let decoded = decode_flips(&record.fake, &measured, record.keep)?;
                flips.insert(s.substitution, decoded.flips);
            }
        }
        for block in blocks.iter_mut() {
            let obs = self.observations.entry((owner, block.slot)).or_default();
            for p in block.particles.iter_mut() {
                let s = self.stored.remove(p).ok_or(AttackError::StoredBlockMissing(*p))?;
                let flip = flips[&s.substitution][s.block];
                if flip {
                    channel.apply_gate(s.genuine, Gate::PauliX)?;
                }
                channel.capture(*p)?;
                channel.release(s.genuine)?;
                *p = s.genuine;
                obs.push(flip);
            }
        }
        Ok(())
    }

    fn observations(&self) -> &Observations {
        &self.observations
    }

    fn substitutions(&self) -> &[Substitution] {
        &self.substitutions
    }
}

/// Man-in-the-middle with computational-basis substitutes. Returning
/// substitutes are measured in Z; any flip is copied onto the stored
/// genuine particle.
#[derive(Debug, Default)]
pub struct MitmZ {
    ancillae: ZAncillae,
    stored: HashMap<ParticleId, (bool, ParticleId)>,
    observations: Observations,
}

impl MitmZ {
    pub fn new(ancillae: ZAncillae) -> Self {
        MitmZ {
            ancillae,
            ..Self::default()
        }
    }

    pub fn mitm_forward(
        &mut self,
        position: usize,
        blocks: &mut [Block],
        channel: &mut ChannelAccess<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<(), AttackError> {
        let bits: Vec<bool> = match &self.ancillae {
            ZAncillae::Random => blocks.iter().map(|_| rng.random_bool(0.5)).collect(),
            ZAncillae::Fixed(bits) => {
                if bits.len() != blocks.len() {
                    return Err(AttackError::AncillaPattern {
                        expected: blocks.len(),
                        found: bits.len(),
                    });
                }
                bits.clone()
            }
        };
        for (block, bit) in blocks.iter_mut().zip(bits) {
            let genuine = block.particles[position];
            channel.capture(genuine)?;
            let fake = channel.alloc_qubit(bit);
            channel.release(fake)?;
            block.particles[position] = fake;
            self.stored.insert(fake, (bit, genuine));
        }
        Ok(())
    }
}

impl Adversary for MitmZ {
    fn kind(&self) -> AttackKind {
        AttackKind::MitmZ
    }

    fn forward(
        &mut self,
        _: PartyId,
        blocks: &mut [Block],
        channel: &mut ChannelAccess<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<(), AttackError> {
        for position in 0..block_len(blocks)? {
            self.mitm_forward(position, blocks, channel, rng)?;
        }
        Ok(())
    }

    fn backward(
        &mut self,
        owner: PartyId,
        blocks: &mut [Block],
        channel: &mut ChannelAccess<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<(), AttackError> {
        for block in blocks.iter_mut() {
            let obs = self.observations.entry((owner, block.slot)).or_default();
            for p in block.particles.iter_mut() {
                let (sent, genuine) = self.stored.remove(p).ok_or(AttackError::StoredBlockMissing(*p))?;
                let flip = channel.measure(*p, Basis::Z, rng)? != sent;
                if flip {
                    channel.apply_gate(genuine, Gate::PauliX)?;
                }
                channel.capture(*p)?;
                channel.release(genuine)?;
                *p = genuine;
                obs.push(flip);
            }
        }
        Ok(())
    }

    fn observations(&self) -> &Observations {
        &self.observations
    }
}

/// Measures every outgoing particle in a random basis and lets the
/// collapsed particle continue.
#[derive(Debug, Default)]
pub struct InterceptResend {
    /// (particle, basis, outcome) for every interception.
    pub record: Vec<(ParticleId, Basis, bool)>,
    observations: Observations,
}

impl InterceptResend {
    pub fn intercept(
        &mut self,
        block: &Block,
        channel: &mut ChannelAccess<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<(), AttackError> {
        for &p in &block.particles {
            let basis = Basis::random(rng);
            let bit = channel.measure(p, basis, rng)?;
            self.record.push((p, basis, bit));
        }
        Ok(())
    }
}

impl Adversary for InterceptResend {
    fn kind(&self) -> AttackKind {
        AttackKind::InterceptResend
    }

    fn forward(
        &mut self,
        _: PartyId,
        blocks: &mut [Block],
        channel: &mut ChannelAccess<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<(), AttackError> {
        for block in blocks.iter() {
            self.intercept(block, channel, rng)?;
        }
        Ok(())
    }

    fn backward(
        &mut self,
        _: PartyId,
        _: &mut [Block],
        _: &mut ChannelAccess<'_>,
        _: &mut dyn RngCore,
    ) -> Result<(), AttackError> {
        Ok(())
    }

    fn observations(&self) -> &Observations {
        &self.observations
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::build_adversary;
    use crate::ghz::{z_pattern_consistent, PauliWord};
    use crate::protocol::memory::{Holder, QuantumMemory};
    use crate::protocol::{run_session, SequencePlan, SessionConfig, SimRng};
    use crate::statevec::{StateVector, NORM_TOLERANCE};
    use rand::SeedableRng;

    fn psi1_in_flight(memory: &mut QuantumMemory) -> (ParticleId, Vec<Block>) {
        let ids = memory.alloc_ghz(&GhzIndex::from_label(1).unwrap(), Holder::Party(0));
        let blocks = (1..3)
            .map(|slot| {
                memory.set_holder(ids[slot], Holder::Transit).unwrap();
                Block {
                    owner: 0,
                    slot,
                    particles: vec![ids[slot]],
                }
            })
            .collect();
        (ids[0], blocks)
    }

    fn particles(home: ParticleId, blocks: &[Block]) -> Vec<ParticleId> {
        std::iter::once(home)
            .chain(blocks.iter().map(|b| b.particles[0]))
            .collect()
    }

    #[test]
    fn double_cnot_is_disentangled_under_every_two_op_encoding() {
        let mut rng = SimRng::seed_from_u64(3);
        for code in 0..4usize {
            let flips = [code & 2 != 0, code & 1 != 0];
            let mut memory = QuantumMemory::new();
            let (home, mut blocks) = psi1_in_flight(&mut memory);
            let mut eve = DoubleCnot::default();
            eve.forward(0, &mut blocks, &mut ChannelAccess::new(&mut memory), &mut rng)
                .unwrap();
            let ancillae: Vec<ParticleId> = blocks
                .iter()
                .map(|b| eve.ancilla_of(b.particles[0]).unwrap())
                .collect();
            for (b, &f) in blocks.iter().zip(&flips) {
                if f {
                    memory.apply_gate(b.particles[0], Gate::PauliX).unwrap();
                }
            }
            eve.backward(0, &mut blocks, &mut ChannelAccess::new(&mut memory), &mut rng)
                .unwrap();
            assert_eq!(eve.observations()[&(0, 1)], [flips[0]]);
            assert_eq!(eve.observations()[&(0, 2)], [flips[1]]);

            let (expected, _) = GhzIndex::from_label(1)
                .unwrap()
                .apply_pauli(&PauliWord::from_flips(&[false, flips[0], flips[1]]))
                .unwrap();
            let anc = StateVector::basis_state(2, code).unwrap();
            let want = expected.to_state_vector().tensor(&anc).unwrap();
            let mut ids = particles(home, &blocks);
            ids.extend(ancillae);
            let got = memory.joint_state(&ids).unwrap().unwrap();
            assert!((got.fidelity(&want).unwrap() - 1.0).abs() < NORM_TOLERANCE);
        }
    }

    #[test]
    fn double_cnot_on_eigenstate_copies_bit() {
        let mut rng = SimRng::seed_from_u64(0);
        let mut memory = QuantumMemory::new();
        let p = memory.alloc_qubit(true, Holder::Transit);
        let block = Block {
            owner: 0,
            slot: 1,
            particles: vec![p],
        };
        let mut eve = DoubleCnot::default();
        eve.cnot_forward(&block, &mut ChannelAccess::new(&mut memory)).unwrap();
        let a = eve.ancilla_of(p).unwrap();
        let got = memory.joint_state(&[p, a]).unwrap().unwrap();
        assert!(got.equal_up_to_phase(&StateVector::basis_state(2, 3).unwrap()));
        let mut ch = ChannelAccess::new(&mut memory);
        assert_eq!(eve.cnot_backward(&block, &mut ch, &mut rng).unwrap(), [false]);
        assert_eq!(
            eve.cnot_backward(&block, &mut ch, &mut rng),
            Err(AttackError::MissingAncilla(p))
        );
    }

    fn mitm_z_check_failures(pattern: [bool; 2], rounds: usize, seed: u64) -> usize {
        let mut rng = SimRng::seed_from_u64(seed);
        let psi1 = GhzIndex::from_label(1).unwrap();
        let mut failures = 0;
        for _ in 0..rounds {
            let mut memory = QuantumMemory::new();
            let (home, mut blocks) = psi1_in_flight(&mut memory);
            let mut eve = MitmZ::new(ZAncillae::Fixed(pattern.to_vec()));
            eve.forward(0, &mut blocks, &mut ChannelAccess::new(&mut memory), &mut rng)
                .unwrap();
            let bits: Vec<bool> = particles(home, &blocks)
                .into_iter()
                .map(|id| memory.measure(id, Basis::Z, &mut rng).unwrap())
                .collect();
            assert_eq!(&bits[1..], pattern);
            if !z_pattern_consistent(&psi1, &bits).unwrap() {
                failures += 1;
            }
        }
        failures
    }

    #[test]
    fn mitm_z_matched_pair_fails_half_the_z_checks() {
        let f = mitm_z_check_failures([false, false], 400, 1);
        assert!((140..=260).contains(&f), "{f}");
    }

    #[test]
    fn mitm_z_mismatched_pair_always_fails() {
        assert_eq!(mitm_z_check_failures([false, true], 200, 2), 200);
    }

    #[test]
    fn mitm_z_reads_flips_and_relays_them() {
        let mut rng = SimRng::seed_from_u64(5);
        let mut memory = QuantumMemory::new();
        let (home, mut blocks) = psi1_in_flight(&mut memory);
        let genuine = particles(home, &blocks);
        let mut eve = MitmZ::new(ZAncillae::Random);
        eve.forward(0, &mut blocks, &mut ChannelAccess::new(&mut memory), &mut rng)
            .unwrap();
        memory.apply_gate(blocks[1].particles[0], Gate::PauliX).unwrap();
        eve.backward(0, &mut blocks, &mut ChannelAccess::new(&mut memory), &mut rng)
            .unwrap();
        assert_eq!(eve.observations()[&(0, 1)], [false]);
        assert_eq!(eve.observations()[&(0, 2)], [true]);
        assert_eq!(particles(home, &blocks), genuine);
        let got = memory.joint_state(&genuine).unwrap().unwrap();
        assert!(got.equal_up_to_phase(&GhzIndex::from_label(7).unwrap().to_state_vector()));
    }

    #[test]
    fn fixed_pattern_length_is_checked() {
        assert!(build_adversary(AttackKind::MitmZ, &ZAncillae::Fixed(vec![true]), 3).is_err());
        assert!(build_adversary(AttackKind::MitmZ, &ZAncillae::Fixed(vec![true; 2]), 3).is_ok());
    }

    fn session(attack: AttackKind, d: usize, seed: u64) -> crate::protocol::SessionReport {
        let config = SessionConfig::new(3, SequencePlan::new(6, d, 4).unwrap());
        let mut eve = build_adversary(attack, &ZAncillae::Random, 3).unwrap();
        run_session(config, eve.as_mut(), &mut SimRng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn mitm_ghz_relays_true_keys() {
        for seed in 0..20 {
            let r = session(AttackKind::MitmGhz, 2, seed);
            assert!(r.aborted.is_none());
            assert!(r.full_agreement());
            assert!(r.home_particles_intact);
            assert_eq!(r.eve.substitutions, 3 * 12);
            assert_eq!(r.eve.bits_guessed, 3 * 10);
        }
    }

    #[test]
    fn double_cnot_leaves_legitimate_keys_intact() {
        for seed in 0..20 {
            let r = session(AttackKind::DoubleCnot, 2, seed);
            assert!(r.full_agreement());
            assert!(r.home_particles_intact);
        }
    }

    #[test]
    fn intercept_resend_breaks_correlations() {
        let detected = (0..40)
            .filter(|&s| session(AttackKind::InterceptResend, 8, s).any_detected())
            .count();
        assert!(detected >= 35, "{detected}");
    }

    #[test]
    fn resent_eigenstate_reproduces_outcome() {
        let mut rng = SimRng::seed_from_u64(9);
        let mut memory = QuantumMemory::new();
        let (_, blocks) = psi1_in_flight(&mut memory);
        let mut eve = InterceptResend::default();
        eve.intercept(&blocks[0], &mut ChannelAccess::new(&mut memory), &mut rng)
            .unwrap();
        let (p, basis, bit) = eve.record[0];
        for _ in 0..5 {
            assert_eq!(memory.measure(p, basis, &mut rng).unwrap(), bit);
        }
    }
}
