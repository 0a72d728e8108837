//! Instruction set definitions: primitive gates, logical instructions and
//! their fault-tolerant expansions.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

/// Opcode of the terminal measurement instruction in every program.
pub const MEASURE: &str = "MEASURE";
/// Opcode of the inter-QPU state transfer instruction.
pub const TELEPORT: &str = "TELEPORT";

const UNITARY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsaError {
    #[error("ISA parse error: {0}")]
    Parse(String),
    #[error("cannot read ISA file {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("duplicate primitive gate `{0}`")]
    DuplicateGate(String),
    #[error("duplicate opcode `{0}`")]
    DuplicateOpcode(String),
    #[error("opcode `{0}` is reserved")]
    ReservedOpcode(String),
    #[error("gate `{0}` must have arity 1 or 2")]
    BadArity(String),
    #[error("gate `{0}` has zero duration")]
    ZeroDuration(String),
    #[error("gate `{name}` error probability {p} outside [0, 1]")]
    ErrorProbability { name: String, p: f64 },
    #[error("gate `{0}` unitary has wrong shape for its arity")]
    UnitaryShape(String),
    #[error("gate `{0}` matrix is not unitary to 1e-9")]
    NotUnitary(String),
    #[error("opcode `{0}` has an empty expansion")]
    EmptyExpansion(String),
    #[error("opcode `{opcode}` expands to unknown gate `{gate}`")]
    UnknownGate { opcode: String, gate: String },
    #[error("opcode `{opcode}`: step `{gate}` operands do not match gate arity")]
    StepArity { opcode: String, gate: String },
    #[error("opcode `{opcode}`: operand slot {slot} exceeds arity + ancilla")]
    SlotOutOfRange { opcode: String, slot: u32 },
    #[error("opcode `{opcode}`: step `{gate}` repeats an operand")]
    RepeatedSlot { opcode: String, gate: String },
}

/// Square unitary matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Unitary {
    dim: usize,
    data: Vec<Complex64>,
}

impl Unitary {
    pub fn new(dim: usize, data: Vec<Complex64>) -> Option<Self> {
        (data.len() == dim * dim && dim > 0).then_some(Unitary { dim, data })
    }

    pub fn from_rows(rows: &[Vec<[f64; 2]>]) -> Option<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        let data = rows
            .iter()
            .flat_map(|r| r.iter().map(|[re, im]| Complex64::new(*re, *im)))
            .collect();
        Unitary::new(dim, data)
    }

    pub fn to_rows(&self) -> Vec<Vec<[f64; 2]>> {
        self.data
            .chunks(self.dim)
            .map(|r| r.iter().map(|c| [c.re, c.im]).collect())
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim + col]
    }

    /// `U U^dagger == I` to within `tol` per entry.
    pub fn is_unitary(&self, tol: f64) -> bool {
        let n = self.dim;
        (0..n).all(|i| {
            (0..n).all(|j| {
                let s: Complex64 = (0..n).map(|k| self.at(i, k) * self.at(j, k).conj()).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                (s - Complex64::new(expect, 0.0)).norm() <= tol
            })
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateSpec {
    pub name: String,
    pub arity: u8,
    pub duration: SimTime,
    pub error_prob: f64,
    pub unitary: Option<Unitary>,
}

impl GateSpec {
    fn check(&self) -> Result<(), IsaError> {
        if !(1..=2).contains(&self.arity) {
            return Err(IsaError::BadArity(self.name.clone()));
        }
        if self.duration == SimTime::ZERO {
            return Err(IsaError::ZeroDuration(self.name.clone()));
        }
        if !(0.0..=1.0).contains(&self.error_prob) {
            return Err(IsaError::ErrorProbability {
                name: self.name.clone(),
                p: self.error_prob,
            });
        }
        if let Some(u) = &self.unitary {
            if u.dim() != 1 << self.arity {
                return Err(IsaError::UnitaryShape(self.name.clone()));
            }
            if !u.is_unitary(UNITARY_TOL) {
                return Err(IsaError::NotUnitary(self.name.clone()));
            }
        }
        Ok(())
    }
}

/// Readout timing for the terminal measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureSpec {
    pub duration: SimTime,
    pub error_prob: f64,
}

/// One primitive gate in an expansion. `slots` index the instruction's
/// operands first, then its ancillas.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionStep {
    pub gate: usize,
    pub slots: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogicalInstruction {
    pub opcode: String,
    pub arity: u8,
    pub expansion: Vec<ExpansionStep>,
    pub ancilla: u32,
}

/// Validated ISA.
#[derive(Clone, Debug, PartialEq)]
pub struct IsaDefinition {
    name: String,
    primitives: Vec<GateSpec>,
    gate_index: BTreeMap<String, usize>,
    instructions: BTreeMap<String, LogicalInstruction>,
    measure: MeasureSpec,
}

impl IsaDefinition {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn primitives(&self) -> &[GateSpec] {
        &self.primitives
    }

    pub fn gate(&self, idx: usize) -> &GateSpec {
        &self.primitives[idx]
    }

    pub fn gate_by_name(&self, name: &str) -> Option<&GateSpec> {
        self.gate_index.get(name).map(|&i| &self.primitives[i])
    }

    pub fn instruction(&self, opcode: &str) -> Option<&LogicalInstruction> {
        self.instructions.get(opcode)
    }

    pub fn opcodes(&self) -> impl Iterator<Item = &str> {
        self.instructions.keys().map(String::as_str)
    }

    pub fn measure(&self) -> MeasureSpec {
        self.measure
    }

    /// Serial duration of one logical instruction's expansion.
    pub fn instruction_duration(&self, opcode: &str) -> Option<SimTime> {
        self.instruction(opcode)
            .map(|ins| ins.expansion.iter().map(|s| self.primitives[s.gate].duration).sum())
    }

    /// Replaces every primitive's error probability.
    pub fn with_error_override(&self, p: f64) -> Self {
        let mut out = self.clone();
        for g in &mut out.primitives {
            g.error_prob = p;
        }
        out
    }

    pub fn from_file_spec(spec: &IsaFile) -> Result<Self, IsaError> {
        let mut primitives = Vec::with_capacity(spec.primitives.len());
        let mut gate_index = BTreeMap::new();
        for g in &spec.primitives {
            let unitary = match &g.unitary {
                Some(rows) => Some(Unitary::from_rows(rows).ok_or_else(|| IsaError::UnitaryShape(g.name.clone()))?),
                None => None,
            };
            let gate = GateSpec {
                name: g.name.clone(),
                arity: g.arity,
                duration: SimTime(g.duration_ns),
                error_prob: g.error_prob,
                unitary,
            };
            gate.check()?;
            if gate_index.insert(g.name.clone(), primitives.len()).is_some() {
                return Err(IsaError::DuplicateGate(g.name.clone()));
            }
            primitives.push(gate);
        }

        let mut instructions = BTreeMap::new();
        for ins in &spec.instructions {
            if ins.opcode == MEASURE || ins.opcode == TELEPORT {
                return Err(IsaError::ReservedOpcode(ins.opcode.clone()));
            }
            if ins.expansion.is_empty() {
                return Err(IsaError::EmptyExpansion(ins.opcode.clone()));
            }
            let mut expansion = Vec::with_capacity(ins.expansion.len());
            for step in &ins.expansion {
                let (name, slots) = match step {
                    ExpansionFileStep::Name(n) => (n, None),
                    ExpansionFileStep::Explicit { gate, operands } => (gate, Some(operands.clone())),
                };
                let &gi = gate_index.get(name).ok_or_else(|| IsaError::UnknownGate {
                    opcode: ins.opcode.clone(),
                    gate: name.clone(),
                })?;
                let arity = primitives[gi].arity as u32;
                let slots = slots.unwrap_or_else(|| (0..arity).collect());
                if slots.len() as u32 != arity {
                    return Err(IsaError::StepArity {
                        opcode: ins.opcode.clone(),
                        gate: name.clone(),
                    });
                }
                if let Some(&slot) = slots.iter().find(|&&s| s >= ins.arity as u32 + ins.ancilla) {
                    return Err(IsaError::SlotOutOfRange {
                        opcode: ins.opcode.clone(),
                        slot,
                    });
                }
                if slots.len() == 2 && slots[0] == slots[1] {
                    return Err(IsaError::RepeatedSlot {
                        opcode: ins.opcode.clone(),
                        gate: name.clone(),
                    });
                }
                expansion.push(ExpansionStep { gate: gi, slots });
            }
            let logical = LogicalInstruction {
                opcode: ins.opcode.clone(),
                arity: ins.arity,
                expansion,
                ancilla: ins.ancilla,
            };
            if instructions.insert(ins.opcode.clone(), logical).is_some() {
                return Err(IsaError::DuplicateOpcode(ins.opcode.clone()));
            }
        }

        if !(0.0..=1.0).contains(&spec.measure.error_prob) {
            return Err(IsaError::ErrorProbability {
                name: MEASURE.into(),
                p: spec.measure.error_prob,
            });
        }

        Ok(IsaDefinition {
            name: spec.name.clone(),
            primitives,
            gate_index,
            instructions,
            measure: MeasureSpec {
                duration: SimTime(spec.measure.duration_ns),
                error_prob: spec.measure.error_prob,
            },
        })
    }

    pub fn from_json(text: &str) -> Result<Self, IsaError> {
        let spec: IsaFile = parse_json(text)?;
        Self::from_file_spec(&spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IsaError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| IsaError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, IsaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        IsaError::Parse(format!("field `{path}`: {inner}"))
    })
}

/// On-disk ISA layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsaFile {
    pub name: String,
    pub primitives: Vec<GateFileSpec>,
    pub instructions: Vec<InstructionFileSpec>,
    pub measure: MeasureFileSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateFileSpec {
    pub name: String,
    pub arity: u8,
    pub duration_ns: u64,
    #[serde(default)]
    pub error_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unitary: Option<Vec<Vec<[f64; 2]>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionFileSpec {
    pub opcode: String,
    pub arity: u8,
    pub expansion: Vec<ExpansionFileStep>,
    #[serde(default)]
    pub ancilla: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExpansionFileStep {
    Name(String),
    Explicit { gate: String, operands: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFileSpec {
    pub duration_ns: u64,
    #[serde(default)]
    pub error_prob: f64,
}

/// Standard gate matrices.
pub mod gates {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn spec(name: &str, arity: u8, duration: u64, m: Vec<Complex64>) -> GateSpec {
        GateSpec {
            name: name.into(),
            arity,
            duration: SimTime(duration),
            error_prob: 0.0,
            unitary: Unitary::new(1 << arity, m),
        }
    }

    pub fn identity(duration: u64) -> GateSpec {
        spec("I", 1, duration, vec![c(1., 0.), c(0., 0.), c(0., 0.), c(1., 0.)])
    }

    pub fn pauli_x(duration: u64) -> GateSpec {
        spec("X", 1, duration, vec![c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
    }

    pub fn pauli_y(duration: u64) -> GateSpec {
        spec("Y", 1, duration, vec![c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
    }

    pub fn pauli_z(duration: u64) -> GateSpec {
        spec("Z", 1, duration, vec![c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
    }

    pub fn hadamard(duration: u64) -> GateSpec {
        let h = FRAC_1_SQRT_2;
        spec("H", 1, duration, vec![c(h, 0.), c(h, 0.), c(h, 0.), c(-h, 0.)])
    }

    pub fn phase_s(duration: u64) -> GateSpec {
        spec("S", 1, duration, vec![c(1., 0.), c(0., 0.), c(0., 0.), c(0., 1.)])
    }

    pub fn phase_t(duration: u64) -> GateSpec {
        let h = FRAC_1_SQRT_2;
        spec("T", 1, duration, vec![c(1., 0.), c(0., 0.), c(0., 0.), c(h, h)])
    }

    /// First operand is the control.
    pub fn cnot(duration: u64) -> GateSpec {
        let mut m = vec![c(0., 0.); 16];
        for (r, col) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
            m[r * 4 + col] = c(1., 0.);
        }
        spec("CX", 2, duration, m)
    }

    pub fn cz(duration: u64) -> GateSpec {
        let mut m = vec![c(0., 0.); 16];
        for (i, v) in [1., 1., 1., -1.].into_iter().enumerate() {
            m[i * 5] = c(v, 0.);
        }
        spec("CZ", 2, duration, m)
    }

    pub fn swap(duration: u64) -> GateSpec {
        let mut m = vec![c(0., 0.); 16];
        for (r, col) in [(0, 0), (1, 2), (2, 1), (3, 3)] {
            m[r * 4 + col] = c(1., 0.);
        }
        spec("SWAP", 2, duration, m)
    }

    pub fn to_file_spec(g: &GateSpec) -> GateFileSpec {
        GateFileSpec {
            name: g.name.clone(),
            arity: g.arity,
            duration_ns: g.duration.0,
            error_prob: g.error_prob,
            unitary: g.unitary.as_ref().map(Unitary::to_rows),
        }
    }
}

/// Builds an ISA where each opcode expands to the single primitive of the same name.
pub fn identity_isa(primitives: &[GateSpec], measure_ns: u64) -> IsaDefinition {
    let file = IsaFile {
        name: "identity".into(),
        primitives: primitives.iter().map(gates::to_file_spec).collect(),
        instructions: primitives
            .iter()
            .map(|g| InstructionFileSpec {
                opcode: g.name.clone(),
                arity: g.arity,
                expansion: vec![ExpansionFileStep::Name(g.name.clone())],
                ancilla: 0,
            })
            .collect(),
        measure: MeasureFileSpec {
            duration_ns: measure_ns,
            error_prob: 0.0,
        },
    };
    IsaDefinition::from_file_spec(&file).expect("standard gates form a valid ISA")
}
