//! Classical messaging and the two quantum state-transfer primitives.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entmgr::{EntError, EntanglementManager, PairId};
use crate::qram::{gates, QramError, QuantumRegister};
use crate::rng::RngStream;
use crate::sim::SimTime;
use crate::topology::{ClassicalLink, NodeId, QuantumLink};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    ProgramSubmit,
    ResultReturn,
    SideChannel,
    Control,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassicalMessage {
    pub src: NodeId,
    pub dst: NodeId,
    pub size: u64,
    pub kind: MessageKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommError {
    #[error("routing error: {src}->{dst} is not carried by link {a}-{b}")]
    Routing {
        src: NodeId,
        dst: NodeId,
        a: NodeId,
        b: NodeId,
    },
    #[error("message size must be >= 1 byte")]
    EmptyMessage,
    #[error("capacity error: payload needs {needed} free elements, destination has {free}")]
    Capacity { needed: u32, free: u32 },
    #[error("no payload in source slot {0}")]
    NoPayload(usize),
    #[error("transfer error: teleporting {qubits} qubits needs {qubits} pairs, got {pairs}")]
    PairCount { qubits: u32, pairs: usize },
    #[error("transfer error: {pair} does not join qpu.{src} and qpu.{dst}")]
    PairEndpoints { pair: PairId, src: u32, dst: u32 },
    #[error("transfer error: {0}")]
    Pair(#[from] EntError),
    #[error(transparent)]
    Qram(#[from] QramError),
}

/// Serialisation delay of `size` bytes plus propagation latency.
pub fn transfer_time(link: &ClassicalLink, size: u64) -> SimTime {
    let ser = (size as u128 * 1_000_000_000).div_ceil(link.bandwidth.max(1) as u128);
    link.latency + SimTime(ser.min(u64::MAX as u128) as u64)
}

/// Delivery time of `msg` sent over `link` at `now`.
pub fn send_classical(link: &ClassicalLink, msg: &ClassicalMessage, now: SimTime) -> Result<SimTime, CommError> {
    if msg.size == 0 {
        return Err(CommError::EmptyMessage);
    }
    if !link.connects(msg.src, msg.dst) {
        return Err(CommError::Routing {
            src: msg.src,
            dst: msg.dst,
            a: link.a,
            b: link.b,
        });
    }
    Ok(now + transfer_time(link, msg.size))
}

/// Store-and-forward delivery over consecutive hops from `src` to `dst`.
pub fn send_over_path(
    hops: &[ClassicalLink],
    src: NodeId,
    dst: NodeId,
    size: u64,
    kind: MessageKind,
    now: SimTime,
) -> Result<SimTime, CommError> {
    let mut at = src;
    let mut t = now;
    for l in hops {
        let next = l.other(at).ok_or(CommError::Routing {
            src: at,
            dst,
            a: l.a,
            b: l.b,
        })?;
        t = send_classical(
            l,
            &ClassicalMessage {
                src: at,
                dst: next,
                size,
                kind,
            },
            t,
        )?;
        at = next;
    }
    if at != dst {
        return Err(CommError::Routing { src, dst, a: at, b: at });
    }
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    DirectTransmission,
    Teleportation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferStatus {
    InFlight,
    Delivered,
    Failed,
}

/// Quantum state held in register elements. Deliberately not `Clone`:
/// moving it is the only way to get it somewhere else.
#[derive(Debug, PartialEq)]
pub struct QuantumPayload {
    qubits: u32,
    amplitudes: Option<Vec<Complex64>>,
}

impl QuantumPayload {
    pub fn new(qubits: u32) -> Self {
        QuantumPayload {
            qubits,
            amplitudes: None,
        }
    }

    pub fn with_state(amplitudes: Vec<Complex64>) -> Self {
        QuantumPayload {
            qubits: amplitudes.len().trailing_zeros(),
            amplitudes: Some(amplitudes),
        }
    }

    pub fn qubits(&self) -> u32 {
        self.qubits
    }

    pub fn amplitudes(&self) -> Option<&[Complex64]> {
        self.amplitudes.as_deref()
    }
}

/// Register elements of one QPU available to hold transferred state.
#[derive(Debug, Default)]
pub struct RegisterSlots {
    capacity: u32,
    held: Vec<QuantumPayload>,
}

impl RegisterSlots {
    pub fn new(capacity: u32) -> Self {
        RegisterSlots {
            capacity,
            held: Vec::new(),
        }
    }

    pub fn used(&self) -> u32 {
        self.held.iter().map(|p| p.qubits).sum()
    }

    pub fn free(&self) -> u32 {
        self.capacity - self.used()
    }

    pub fn payloads(&self) -> usize {
        self.held.len()
    }

    pub fn store(&mut self, payload: QuantumPayload) -> Result<usize, CommError> {
        if payload.qubits > self.free() {
            return Err(CommError::Capacity {
                needed: payload.qubits,
                free: self.free(),
            });
        }
        self.held.push(payload);
        Ok(self.held.len() - 1)
    }

    pub fn peek(&self, slot: usize) -> Option<&QuantumPayload> {
        self.held.get(slot)
    }

    pub fn take(&mut self, slot: usize) -> Option<QuantumPayload> {
        (slot < self.held.len()).then(|| self.held.remove(slot))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransferReport {
    pub mode: TransferMode,
    pub status: TransferStatus,
    pub payload_qubits: u32,
    pub completes_at: SimTime,
}

/// Sends the payload in `slot` over a carrier. Each qubit survives with
/// probability `p_gen`; a lost payload is gone for good.
pub fn direct_transmit(
    src: &mut RegisterSlots,
    slot: usize,
    dst: &mut RegisterSlots,
    qlink: &QuantumLink,
    swap: SimTime,
    now: SimTime,
    rng: &mut RngStream,
) -> Result<TransferReport, CommError> {
    let needed = src.peek(slot).ok_or(CommError::NoPayload(slot))?.qubits;
    if needed > dst.free() {
        return Err(CommError::Capacity {
            needed,
            free: dst.free(),
        });
    }
    let payload = src.take(slot).expect("slot checked");
    let mut survived = true;
    for _ in 0..needed {
        survived &= rng.bernoulli(qlink.p_gen.clamp(0.0, 1.0)).unwrap_or(false);
    }
    let transit = now + qlink.attempt_period * needed as u64;
    if !survived {
        drop(payload);
        return Ok(TransferReport {
            mode: TransferMode::DirectTransmission,
            status: TransferStatus::Failed,
            payload_qubits: needed,
            completes_at: transit,
        });
    }
    dst.store(payload).expect("capacity checked");
    Ok(TransferReport {
        mode: TransferMode::DirectTransmission,
        status: TransferStatus::Delivered,
        payload_qubits: needed,
        completes_at: transit + swap,
    })
}

/// Two classical bits per teleported qubit.
pub fn side_channel_bytes(qubits: u32) -> u64 {
    (2 * qubits as u64).div_ceil(8).max(1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TeleportReport {
    pub side_channel_bytes: u64,
    pub side_channel_delivered: SimTime,
    pub completes_at: SimTime,
    pub pairs: Vec<PairId>,
}

/// Teleports `qubits` from `src_qpu` to `dst_qpu`, consuming one reserved
/// pair per qubit at `now`.
#[allow(clippy::too_many_arguments)]
pub fn teleport(
    mgr: &mut EntanglementManager,
    pairs: &[PairId],
    side_channel: &[ClassicalLink],
    src_qpu: u32,
    dst_qpu: u32,
    qubits: u32,
    correction: SimTime,
    now: SimTime,
) -> Result<TeleportReport, CommError> {
    if pairs.len() != qubits as usize || qubits == 0 {
        return Err(CommError::PairCount {
            qubits,
            pairs: pairs.len(),
        });
    }
    for &id in pairs {
        let p = mgr.pair(id).ok_or(EntError::UnknownPair(id))?;
        let (a, b) = p.endpoints;
        if !((a == src_qpu && b == dst_qpu) || (a == dst_qpu && b == src_qpu)) {
            return Err(CommError::PairEndpoints {
                pair: id,
                src: src_qpu,
                dst: dst_qpu,
            });
        }
        if p.status != crate::entmgr::PairStatus::Reserved || p.expires_at <= now {
            return Err(EntError::Unavailable {
                pair: id,
                status: p.status,
            }
            .into());
        }
    }
    for &id in pairs {
        mgr.consume(id, now)?;
    }
    let bytes = side_channel_bytes(qubits);
    let delivered = send_over_path(
        side_channel,
        NodeId::Qpu(src_qpu),
        NodeId::Qpu(dst_qpu),
        bytes,
        MessageKind::SideChannel,
        now,
    )?;
    Ok(TeleportReport {
        side_channel_bytes: bytes,
        side_channel_delivered: delivered,
        completes_at: delivered + correction,
        pairs: pairs.to_vec(),
    })
}

/// Runs the three-qubit teleportation circuit on the state-vector backend.
/// Returns the destination element's state and the two side-channel bits.
pub fn teleport_circuit(
    alpha: Complex64,
    beta: Complex64,
    rng: &mut RngStream,
) -> Result<([Complex64; 2], (bool, bool)), QramError> {
    let zero = Complex64::new(0.0, 0.0);
    // Element 0 carries the payload; 1 and 2 share the pair.
    let mut amps = vec![zero; 8];
    amps[0] = alpha;
    amps[1] = beta;
    let mut reg = QuantumRegister::from_amplitudes(amps)?;
    let h = gates::hadamard(1);
    let cx = gates::cnot(1);
    reg.apply_gate(&h, &[1])?;
    reg.apply_gate(&cx, &[1, 2])?;
    reg.apply_gate(&cx, &[0, 1])?;
    reg.apply_gate(&h, &[0])?;
    let m0 = reg.measure_qubit(0, rng)?;
    let m1 = reg.measure_qubit(1, rng)?;
    if m1 {
        reg.apply_gate(&gates::pauli_x(1), &[2])?;
    }
    if m0 {
        reg.apply_gate(&gates::pauli_z(1), &[2])?;
    }
    let a = reg.amplitudes().expect("state vector");
    let base = (m0 as usize) | (m1 as usize) << 1;
    Ok(([a[base], a[base | 4]], (m0, m1)))
}
