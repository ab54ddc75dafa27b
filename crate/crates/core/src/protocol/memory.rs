//! Particle bookkeeping on top of the dense simulator.
//!
//! Every physical qubit in a session is a [`ParticleId`]. Particles live in
//! registers; two registers are merged (tensored) the first time an
//! operation spans both. Each particle also has a [`Holder`], which is how
//! the eavesdropper is kept away from particles that never enter a channel.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ghz::{ghz_family, GhzError, GhzIndex};
use crate::statevec::{Basis, Gate, StateError, StateVector};

use super::PartyId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParticleId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Holder {
    Party(PartyId),
    Transit,
    Eve,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Ghz(#[from] GhzError),
    #[error("unknown particle {0:?}")]
    UnknownParticle(ParticleId),
    #[error("particle {particle:?} is held by {holder:?}, not reachable from the channel")]
    AccessViolation { particle: ParticleId, holder: Holder },
}

#[derive(Debug, Clone)]
struct Register {
    state: StateVector,
    members: Vec<ParticleId>,
}

#[derive(Debug, Clone, Copy)]
struct Location {
    register: usize,
    qubit: usize,
}

#[derive(Debug, Default, Clone)]
pub struct QuantumMemory {
    registers: Vec<Option<Register>>,
    locations: Vec<Location>,
    holders: Vec<Holder>,
}

impl QuantumMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocates a fresh register holding `state`, one particle per qubit.
    pub fn alloc_state(&mut self, state: StateVector, holder: Holder) -> Vec<ParticleId> {
        let register = self.registers.len();
        let members: Vec<ParticleId> = (0..state.num_qubits())
            .map(|qubit| {
                let id = ParticleId(self.locations.len());
                self.locations.push(Location { register, qubit });
                self.holders.push(holder);
                id
            })
            .collect();
        self.registers.push(Some(Register {
            state,
            members: members.clone(),
        }));
        members
    }

    pub fn alloc_ghz(&mut self, index: &GhzIndex, holder: Holder) -> Vec<ParticleId> {
        self.alloc_state(index.to_state_vector(), holder)
    }

    /// One qubit in `|bit⟩`.
    pub fn alloc_qubit(&mut self, bit: bool, holder: Holder) -> ParticleId {
        let state = StateVector::basis_state(1, usize::from(bit)).expect("one qubit");
        self.alloc_state(state, holder)[0]
    }

    pub fn holder(&self, id: ParticleId) -> Result<Holder, MemoryError> {
        self.holders
            .get(id.0)
            .copied()
            .ok_or(MemoryError::UnknownParticle(id))
    }

    pub fn set_holder(&mut self, id: ParticleId, holder: Holder) -> Result<(), MemoryError> {
        let slot = self
            .holders
            .get_mut(id.0)
            .ok_or(MemoryError::UnknownParticle(id))?;
        *slot = holder;
        Ok(())
    }

    fn location(&self, id: ParticleId) -> Result<Location, MemoryError> {
        self.locations
            .get(id.0)
            .copied()
            .ok_or(MemoryError::UnknownParticle(id))
    }

    fn register_mut(&mut self, index: usize) -> &mut Register {
        self.registers[index].as_mut().expect("live register")
    }

    /// Brings all `ids` into one register, returning it and each particle's
    /// qubit index there.
    fn colocate(&mut self, ids: &[ParticleId]) -> Result<(usize, Vec<usize>), MemoryError> {
        let mut target = self.location(ids[0])?.register;
        for &id in &ids[1..] {
            let other = self.location(id)?.register;
            if other != target {
                target = self.merge(target, other)?;
            }
        }
        let qubits = ids
            .iter()
            .map(|&id| self.location(id).map(|l| l.qubit))
            .collect::<Result<_, _>>()?;
        Ok((target, qubits))
    }

    fn merge(&mut self, a: usize, b: usize) -> Result<usize, MemoryError> {
        let ra = self.registers[a].as_ref().expect("live register");
        let rb = self.registers[b].as_ref().expect("live register");
        let state = ra.state.tensor(&rb.state)?;
        let offset = ra.members.len();
        let moved = rb.members.clone();
        self.registers[b] = None;
        let reg = self.register_mut(a);
        reg.state = state;
        reg.members.extend(&moved);
        for (k, id) in moved.into_iter().enumerate() {
            self.locations[id.0] = Location {
                register: a,
                qubit: offset + k,
            };
        }
        Ok(a)
    }

    pub fn apply_gate(&mut self, id: ParticleId, gate: Gate) -> Result<(), MemoryError> {
        let loc = self.location(id)?;
        self.register_mut(loc.register)
            .state
            .apply_gate(gate, loc.qubit)?;
        Ok(())
    }

    pub fn apply_cnot(&mut self, control: ParticleId, target: ParticleId) -> Result<(), MemoryError> {
        if control == target {
            return Err(StateError::QubitCollision(control.0).into());
        }
        let (reg, qubits) = self.colocate(&[control, target])?;
        self.register_mut(reg)
            .state
            .apply_cnot(qubits[0], qubits[1])?;
        Ok(())
    }

    pub fn measure<R: Rng + ?Sized>(
        &mut self,
        id: ParticleId,
        basis: Basis,
        rng: &mut R,
    ) -> Result<bool, MemoryError> {
        let loc = self.location(id)?;
        Ok(self
            .register_mut(loc.register)
            .state
            .measure_qubit(loc.qubit, basis, rng)?)
    }

    /// Projective measurement of `ids` (in particle order) onto the GHZ
    /// basis.
    pub fn measure_ghz<R: Rng + ?Sized>(
        &mut self,
        ids: &[ParticleId],
        rng: &mut R,
    ) -> Result<GhzIndex, MemoryError> {
        let family = ghz_family(ids.len())?;
        let (reg, qubits) = self.colocate(ids)?;
        let k = self
            .register_mut(reg)
            .state
            .measure_in_family(&qubits, &family, rng)?;
        Ok(GhzIndex::from_ordinal(ids.len(), k)?)
    }

    /// The register containing `id` and the particle at each of its qubits.
    pub fn register_of(&self, id: ParticleId) -> Result<(&StateVector, &[ParticleId]), MemoryError> {
        let loc = self.location(id)?;
        let reg = self.registers[loc.register].as_ref().expect("live register");
        Ok((&reg.state, &reg.members))
    }

    /// Snapshot of the joint state of `ids`, in that qubit order, when they
    /// make up a whole register.
    pub fn joint_state(&self, ids: &[ParticleId]) -> Result<Option<StateVector>, MemoryError> {
        let (state, members) = self.register_of(ids[0])?;
        if members.len() != ids.len() || ids.iter().any(|id| !members.contains(id)) {
            return Ok(None);
        }
        let n = members.len();
        let pos: Vec<usize> = ids
            .iter()
            .map(|id| members.iter().position(|m| m == id).expect("member"))
            .collect();
        let mut amps = vec![num_complex::Complex64::new(0.0, 0.0); 1 << n];
        for (i, a) in state.amplitudes().iter().enumerate() {
            let j = pos.iter().fold(0usize, |acc, &q| {
                (acc << 1) | (i >> (n - 1 - q) & 1)
            });
            amps[j] = *a;
        }
        Ok(Some(StateVector::from_amplitudes(amps)?))
    }

    pub fn live_registers(&self) -> usize {
        self.registers.iter().filter(|r| r.is_some()).count()
    }
}

/// The eavesdropper's view of the quantum memory: only particles in a
/// channel or already in her custody can be touched.
pub struct ChannelAccess<'a> {
    memory: &'a mut QuantumMemory,
}

impl<'a> ChannelAccess<'a> {
    pub fn new(memory: &'a mut QuantumMemory) -> Self {
        Self { memory }
    }

    fn check(&self, id: ParticleId) -> Result<(), MemoryError> {
        match self.memory.holder(id)? {
            Holder::Transit | Holder::Eve => Ok(()),
            holder => Err(MemoryError::AccessViolation {
                particle: id,
                holder,
            }),
        }
    }

    pub fn alloc_qubit(&mut self, bit: bool) -> ParticleId {
        self.memory.alloc_qubit(bit, Holder::Eve)
    }

    pub fn alloc_ghz(&mut self, index: &GhzIndex) -> Vec<ParticleId> {
        self.memory.alloc_ghz(index, Holder::Eve)
    }

    /// Takes an in-flight particle off the channel.
    pub fn capture(&mut self, id: ParticleId) -> Result<(), MemoryError> {
        self.check(id)?;
        self.memory.set_holder(id, Holder::Eve)
    }

    /// Puts a particle Eve holds onto the channel.
    pub fn release(&mut self, id: ParticleId) -> Result<(), MemoryError> {
        self.check(id)?;
        self.memory.set_holder(id, Holder::Transit)
    }

    pub fn apply_gate(&mut self, id: ParticleId, gate: Gate) -> Result<(), MemoryError> {
        self.check(id)?;
        self.memory.apply_gate(id, gate)
    }

    pub fn apply_cnot(&mut self, control: ParticleId, target: ParticleId) -> Result<(), MemoryError> {
        self.check(control)?;
        self.check(target)?;
        self.memory.apply_cnot(control, target)
    }

    pub fn measure(
        &mut self,
        id: ParticleId,
        basis: Basis,
        rng: &mut dyn rand::RngCore,
    ) -> Result<bool, MemoryError> {
        self.check(id)?;
        self.memory.measure(id, basis, rng)
    }

    pub fn measure_ghz(
        &mut self,
        ids: &[ParticleId],
        rng: &mut dyn rand::RngCore,
    ) -> Result<GhzIndex, MemoryError> {
        for &id in ids {
            self.check(id)?;
        }
        self.memory.measure_ghz(ids, rng)
    }

    /// Read-only access, for diagnostics and tests.
    pub fn memory(&self) -> &QuantumMemory {
        self.memory
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevec::EXACT_TOLERANCE;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cnot_across_registers_merges() {
        let mut mem = QuantumMemory::new();
        let a = mem.alloc_qubit(true, Holder::Party(0));
        let b = mem.alloc_qubit(false, Holder::Party(0));
        assert_eq!(mem.live_registers(), 2);
        mem.apply_cnot(a, b).unwrap();
        assert_eq!(mem.live_registers(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(mem.measure(b, Basis::Z, &mut rng).unwrap());
    }

    #[test]
    fn joint_state_reorders_qubits() {
        let mut mem = QuantumMemory::new();
        let a = mem.alloc_qubit(true, Holder::Eve);
        let b = mem.alloc_qubit(false, Holder::Eve);
        mem.apply_cnot(b, a).unwrap();
        let s = mem.joint_state(&[b, a]).unwrap().unwrap();
        assert!(
            s.max_amplitude_error(&StateVector::basis_state(2, 0b01).unwrap())
                .unwrap()
                < EXACT_TOLERANCE
        );
        assert!(mem.joint_state(&[a]).unwrap().is_none());
    }

    #[test]
    fn ghz_measurement_of_prepared_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut mem = QuantumMemory::new();
        for g in GhzIndex::all(3).unwrap() {
            let ids = mem.alloc_ghz(&g, Holder::Party(1));
            assert_eq!(mem.measure_ghz(&ids, &mut rng).unwrap(), g);
        }
    }

    #[test]
    fn channel_cannot_touch_home_particles() {
        let mut mem = QuantumMemory::new();
        let ids = mem.alloc_ghz(&GhzIndex::from_label(1).unwrap(), Holder::Party(0));
        mem.set_holder(ids[1], Holder::Transit).unwrap();
        let mut ch = ChannelAccess::new(&mut mem);
        assert!(ch.apply_gate(ids[1], Gate::PauliX).is_ok());
        assert_eq!(
            ch.apply_gate(ids[0], Gate::PauliX),
            Err(MemoryError::AccessViolation {
                particle: ids[0],
                holder: Holder::Party(0)
            })
        );
        let anc = ch.alloc_qubit(false);
        assert!(ch.apply_cnot(ids[0], anc).is_err());
    }
}
