//! The QPU abstract machine: register, ISA, decode into primitive gates,
//! fault-tolerant expansion, serial gate timing and measurement sampling.

mod exec;
pub mod isa;
mod program;
mod register;

use thiserror::Error;

pub use exec::{execute, execute_with, ExecOptions, ExecutionRecord, GateTiming};
pub use isa::{
    gates, identity_isa, GateSpec, IsaDefinition, IsaError, IsaFile, LogicalInstruction, MeasureSpec, Unitary, MEASURE,
    TELEPORT,
};
pub use program::{decode, Decoded, GateOp, Instruction, Program, Segment, ShotPolicy, Step};
pub use register::{Backend, Bitstring, Placeholder, QuantumRegister, DEFAULT_STATE_VECTOR_CAP};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QramError {
    #[error("decode error: unknown opcode `{0}`")]
    UnknownOpcode(String),
    #[error("decode error: opcode `{opcode}` takes {expected} operands, got {got}")]
    ArityMismatch { opcode: String, expected: u8, got: usize },
    #[error("gate `{gate}` takes {expected} targets, got {got}")]
    GateArity { gate: String, expected: u8, got: usize },
    #[error("operand {index} out of range for {size}-element register")]
    OperandOutOfRange { index: u32, size: u32 },
    #[error("operand {0} repeated")]
    DuplicateOperand(u32),
    #[error("program has no terminal measurement")]
    MissingMeasurement,
    #[error("measurement must be the last instruction")]
    MeasurementNotTerminal,
    #[error("program has more than one measurement")]
    MultipleMeasurements,
    #[error("`{0}`: TELEPORT needs operands and a partner; other opcodes take no partner")]
    TeleportPartner(String),
    #[error("invalid shot policy: {0}")]
    InvalidShots(String),
    #[error("configuration error: gate `{0}` has no unitary for the state-vector backend")]
    MissingUnitary(String),
    #[error("capacity error: program needs {required} qubits, register has {available}")]
    Capacity { required: u32, available: u32 },
    #[error("state-vector backend limited to {cap} qubits, requested {n}")]
    StateVectorTooLarge { n: u32, cap: u32 },
    #[error("invalid amplitudes: {0}")]
    BadAmplitudes(String),
    #[error("gave up after {attempts} attempts to collect {shots} error-free shots")]
    ShotBudgetExhausted { shots: u32, attempts: u32 },
}

/// Size of a state space: exact when it fits in 128 bits, always as log2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dimension {
    pub exact: Option<u128>,
    pub log2: f64,
}

/// Number of computational basis states of an `n`-element register.
pub fn hilbert_dim(n: u32) -> Dimension {
    Dimension {
        exact: 1u128.checked_shl(n).filter(|_| n < 128),
        log2: n as f64,
    }
}
