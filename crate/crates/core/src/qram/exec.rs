use serde::Serialize;

use super::isa::{IsaDefinition, MEASURE};
use super::program::{decode, Program, Step};
use super::register::{Backend, Bitstring, QuantumRegister};
use super::QramError;
use crate::rng::RngStream;
use crate::sim::SimTime;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateTiming {
    pub name: String,
    pub start: SimTime,
    pub duration: SimTime,
}

/// Outcome of running a program to completion on one register.
///
/// `gates` is the timeline of a single shot (start times relative to the shot
/// start); every shot replays the same timeline.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExecutionRecord {
    pub gates: Vec<GateTiming>,
    pub samples: Vec<Bitstring>,
    pub logical_instruction_count: u64,
    pub primitive_gate_count: u64,
    pub logical_qubits: u32,
    pub ancilla_used: u32,
    pub shots: u32,
    /// Shots executed including those discarded by a gate error.
    pub attempts: u32,
    pub shot_duration: SimTime,
    pub quantum_time: SimTime,
}

impl ExecutionRecord {
    pub fn invalid_shots(&self) -> u32 {
        self.attempts - self.shots
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExecOptions {
    /// Attempts allowed per requested shot before giving up.
    pub attempts_per_shot: u32,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            attempts_per_shot: 1000,
        }
    }
}

pub fn execute(
    program: &Program,
    register: &mut QuantumRegister,
    isa: &IsaDefinition,
    rng: &mut RngStream,
) -> Result<ExecutionRecord, QramError> {
    execute_with(program, register, isa, rng, ExecOptions::default())
}

/// Runs every shot serially. Shots that suffer a gate or readout error are
/// discarded and re-run. Teleport steps are charged by the system layer and
/// act as identity here.
pub fn execute_with(
    program: &Program,
    register: &mut QuantumRegister,
    isa: &IsaDefinition,
    rng: &mut RngStream,
    opts: ExecOptions,
) -> Result<ExecutionRecord, QramError> {
    let decoded = decode(program, isa)?;
    let required = decoded.qubits_required();
    if required > register.size() {
        return Err(QramError::Capacity {
            required,
            available: register.size(),
        });
    }
    let shots = program.shots.resolve()?;
    let measure = isa.measure();

    let mut gates = Vec::with_capacity(decoded.steps.len() + 1);
    let mut t = SimTime::ZERO;
    for g in decoded.gates() {
        let spec = isa.gate(g.gate);
        gates.push(GateTiming {
            name: spec.name.clone(),
            start: t,
            duration: spec.duration,
        });
        t += spec.duration;
    }
    gates.push(GateTiming {
        name: MEASURE.into(),
        start: t,
        duration: measure.duration,
    });
    let shot_duration = t + measure.duration;

    let noisy = measure.error_prob > 0.0 || decoded.gates().any(|g| isa.gate(g.gate).error_prob > 0.0);
    let functional = register.backend() == Backend::StateVector;
    let budget = (shots as u64 * opts.attempts_per_shot as u64).max(1);

    let mut samples = Vec::with_capacity(shots as usize);
    let mut attempts: u64 = 0;
    while samples.len() < shots as usize {
        if attempts >= budget {
            return Err(QramError::ShotBudgetExhausted {
                shots,
                attempts: attempts as u32,
            });
        }
        attempts += 1;
        register.reset();
        let mut failed = false;
        for step in &decoded.steps {
            let Step::Gate(g) = step else { continue };
            let spec = isa.gate(g.gate);
            if functional {
                register.apply_gate(spec, &g.targets)?;
            }
            if noisy && spec.error_prob > 0.0 && rng.bernoulli(spec.error_prob).unwrap_or(false) {
                failed = true;
            }
        }
        if noisy && measure.error_prob > 0.0 && rng.bernoulli(measure.error_prob).unwrap_or(false) {
            failed = true;
        }
        let full = register.measure(rng);
        if failed {
            continue;
        }
        let bits = if decoded.measure_targets.len() == full.len() {
            full
        } else {
            Bitstring::from_bits(
                decoded
                    .measure_targets
                    .iter()
                    .map(|&q| full.bits()[q as usize])
                    .collect(),
            )
        };
        samples.push(bits);
    }

    let attempts = attempts as u32;
    Ok(ExecutionRecord {
        gates,
        samples,
        logical_instruction_count: decoded.logical_instructions,
        primitive_gate_count: decoded.primitive_gates,
        logical_qubits: decoded.logical_qubits,
        ancilla_used: decoded.ancilla,
        shots,
        attempts,
        shot_duration,
        quantum_time: shot_duration * attempts as u64,
    })
}
