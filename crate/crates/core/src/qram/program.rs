use serde::{Deserialize, Serialize};

use super::isa::{IsaDefinition, MEASURE, TELEPORT};
use super::QramError;
use crate::sim::SimTime;
use crate::workload::{estimation_shots, required_shots};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instruction {
    pub op: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub on: Vec<u32>,
    /// Partner slot for `TELEPORT`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<u32>,
}

impl Instruction {
    pub fn new(op: impl Into<String>, on: impl Into<Vec<u32>>) -> Self {
        Instruction {
            op: op.into(),
            on: on.into(),
            partner: None,
        }
    }

    pub fn measure_all() -> Self {
        Instruction::new(MEASURE, vec![])
    }

    pub fn teleport(qubits: impl Into<Vec<u32>>, partner: u32) -> Self {
        Instruction {
            op: TELEPORT.into(),
            on: qubits.into(),
            partner: Some(partner),
        }
    }
}

/// How many shots a program runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotPolicy {
    Fixed(u32),
    /// At least one success with probability `confidence`.
    Confidence {
        confidence: f64,
        p_success: f64,
    },
    /// Additive error `epsilon` with confidence `1 - delta`.
    Estimation {
        epsilon: f64,
        delta: f64,
    },
}

impl ShotPolicy {
    pub fn resolve(&self) -> Result<u32, QramError> {
        match *self {
            ShotPolicy::Fixed(0) => Err(QramError::InvalidShots("fixed shots must be >= 1".into())),
            ShotPolicy::Fixed(n) => Ok(n),
            ShotPolicy::Confidence { confidence, p_success } => required_shots(confidence, p_success)
                .map_err(|e| QramError::InvalidShots(e.to_string()))
                .and_then(clamp_shots),
            ShotPolicy::Estimation { epsilon, delta } => estimation_shots(epsilon, delta)
                .map_err(|e| QramError::InvalidShots(e.to_string()))
                .and_then(clamp_shots),
        }
    }
}

fn clamp_shots(n: u64) -> Result<u32, QramError> {
    u32::try_from(n).map_err(|_| QramError::InvalidShots(format!("{n} shots exceeds u32")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Program {
    /// Logical register elements used by the program.
    pub qubits: u32,
    pub instructions: Vec<Instruction>,
    pub shots: ShotPolicy,
}

impl Program {
    pub fn new(qubits: u32, instructions: Vec<Instruction>, shots: u32) -> Self {
        Program {
            qubits,
            instructions,
            shots: ShotPolicy::Fixed(shots),
        }
    }

    /// Checks structure independent of any ISA.
    pub fn check(&self) -> Result<(), QramError> {
        let measures = self.instructions.iter().filter(|i| i.op == MEASURE).count();
        match measures {
            0 => return Err(QramError::MissingMeasurement),
            1 => {}
            _ => return Err(QramError::MultipleMeasurements),
        }
        if self.instructions.last().map(|i| i.op.as_str()) != Some(MEASURE) {
            return Err(QramError::MeasurementNotTerminal);
        }
        if let ShotPolicy::Fixed(0) = self.shots {
            return Err(QramError::InvalidShots("fixed shots must be >= 1".into()));
        }
        for ins in &self.instructions {
            if let Some(&q) = ins.on.iter().find(|&&q| q >= self.qubits) {
                return Err(QramError::OperandOutOfRange {
                    index: q,
                    size: self.qubits,
                });
            }
            for (i, q) in ins.on.iter().enumerate() {
                if ins.on[..i].contains(q) {
                    return Err(QramError::DuplicateOperand(*q));
                }
            }
            if (ins.op == TELEPORT) != ins.partner.is_some() {
                return Err(QramError::TeleportPartner(ins.op.clone()));
            }
            if ins.op == TELEPORT && ins.on.is_empty() {
                return Err(QramError::TeleportPartner(ins.op.clone()));
            }
        }
        Ok(())
    }

    pub fn teleport_count(&self) -> usize {
        self.instructions.iter().filter(|i| i.op == TELEPORT).count()
    }

    /// Number of distinct partner QPUs the program needs.
    pub fn partners_required(&self) -> u32 {
        self.instructions
            .iter()
            .filter_map(|i| i.partner)
            .max()
            .map_or(0, |p| p + 1)
    }

    pub fn opcodes(&self) -> impl Iterator<Item = &str> {
        self.instructions
            .iter()
            .map(|i| i.op.as_str())
            .filter(|op| *op != MEASURE && *op != TELEPORT)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateOp {
    pub gate: usize,
    pub targets: Vec<u32>,
    /// Index of the originating program instruction.
    pub instruction: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Gate(GateOp),
    Teleport { qubits: u32, partner: u32 },
}

/// A program lowered to primitive gates.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub steps: Vec<Step>,
    pub measure_targets: Vec<u32>,
    pub logical_qubits: u32,
    /// Largest ancilla requirement of any instruction; ancillas are reused.
    pub ancilla: u32,
    pub logical_instructions: u64,
    pub primitive_gates: u64,
    /// Logical opcodes in program order.
    pub opcodes: Vec<String>,
}

/// Part of one shot between inter-QPU transfers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Compute(SimTime),
    Teleport { qubits: u32, partner: u32 },
}

impl Decoded {
    pub fn gates(&self) -> impl Iterator<Item = &GateOp> {
        self.steps.iter().filter_map(|s| match s {
            Step::Gate(g) => Some(g),
            Step::Teleport { .. } => None,
        })
    }

    pub fn qubits_required(&self) -> u32 {
        self.logical_qubits + self.ancilla
    }

    pub fn gate_time(&self, isa: &IsaDefinition) -> SimTime {
        self.gates().map(|g| isa.gate(g.gate).duration).sum()
    }

    /// Gates plus readout for one shot, excluding transfers.
    pub fn shot_duration(&self, isa: &IsaDefinition) -> SimTime {
        self.gate_time(isa) + isa.measure().duration
    }

    pub fn has_teleports(&self) -> bool {
        self.steps.iter().any(|s| matches!(s, Step::Teleport { .. }))
    }

    /// One shot split at transfers; readout is folded into the last compute segment.
    pub fn segments(&self, isa: &IsaDefinition) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut acc = SimTime::ZERO;
        for s in &self.steps {
            match s {
                Step::Gate(g) => acc += isa.gate(g.gate).duration,
                Step::Teleport { qubits, partner } => {
                    if acc > SimTime::ZERO {
                        out.push(Segment::Compute(acc));
                    }
                    acc = SimTime::ZERO;
                    out.push(Segment::Teleport {
                        qubits: *qubits,
                        partner: *partner,
                    });
                }
            }
        }
        acc += isa.measure().duration;
        if acc > SimTime::ZERO {
            out.push(Segment::Compute(acc));
        }
        out
    }
}

/// Lowers `program` to the concatenation of its instructions' expansions.
pub fn decode(program: &Program, isa: &IsaDefinition) -> Result<Decoded, QramError> {
    program.check()?;
    let mut steps = Vec::new();
    let mut ancilla = 0;
    let mut logical = 0u64;
    let mut primitive = 0u64;
    let mut opcodes = Vec::new();
    let mut measure_targets = Vec::new();

    for (idx, ins) in program.instructions.iter().enumerate() {
        match ins.op.as_str() {
            MEASURE => {
                measure_targets = if ins.on.is_empty() {
                    (0..program.qubits).collect()
                } else {
                    ins.on.clone()
                };
            }
            TELEPORT => steps.push(Step::Teleport {
                qubits: ins.on.len() as u32,
                partner: ins.partner.unwrap_or(0),
            }),
            op => {
                let def = isa
                    .instruction(op)
                    .ok_or_else(|| QramError::UnknownOpcode(op.to_string()))?;
                if def.arity as usize != ins.on.len() {
                    return Err(QramError::ArityMismatch {
                        opcode: op.to_string(),
                        expected: def.arity,
                        got: ins.on.len(),
                    });
                }
                ancilla = ancilla.max(def.ancilla);
                logical += 1;
                opcodes.push(op.to_string());
                for step in &def.expansion {
                    let targets = step
                        .slots
                        .iter()
                        .map(|&s| {
                            if s < def.arity as u32 {
                                ins.on[s as usize]
                            } else {
                                program.qubits + (s - def.arity as u32)
                            }
                        })
                        .collect();
                    primitive += 1;
                    steps.push(Step::Gate(GateOp {
                        gate: step.gate,
                        targets,
                        instruction: idx,
                    }));
                }
            }
        }
    }

    Ok(Decoded {
        steps,
        measure_targets,
        logical_qubits: program.qubits,
        ancilla,
        logical_instructions: logical,
        primitive_gates: primitive,
        opcodes,
    })
}
