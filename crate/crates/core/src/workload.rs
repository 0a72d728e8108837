//! Jobs, synthetic workload generation, JSON-lines traces and shot counts.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qram::{Instruction, IsaDefinition, Program, ShotPolicy};
use crate::rng::{RngError, RngStream};
use crate::sim::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("unsatisfiable confidence: per-shot success probability is 0")]
    UnsatisfiableConfidence,
    #[error("confidence {0} outside (0, 1)")]
    Confidence(f64),
    #[error("success probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("estimation parameters need epsilon > 0 and delta in (0, 1), got ({0}, {1})")]
    Estimation(f64, f64),
    #[error("invalid workload spec: {0}")]
    Spec(String),
    #[error("cannot access trace {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("trace line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error(transparent)]
    Rng(#[from] RngError),
}

/// One quantum workload item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Job {
    pub id: u64,
    pub arrival_ns: SimTime,
    pub origin: u32,
    pub program: Program,
    #[serde(default)]
    pub preprocess_ops: u64,
    #[serde(default)]
    pub postprocess_ops: u64,
    /// Runtime of the best classical alternative for the same task.
    pub t_classical_ns: SimTime,
    pub qubits_required: u32,
    #[serde(default = "default_message_bytes")]
    pub submit_bytes: u64,
    #[serde(default = "default_message_bytes")]
    pub result_bytes: u64,
    /// Additional CPUs whose inputs are aggregated before the program starts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fragments: Vec<u32>,
}

fn default_message_bytes() -> u64 {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalProcess {
    Poisson { rate_per_s: f64 },
    Fixed { times_ns: Vec<u64> },
}

/// Classical runtime as a function of program qubit count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassicalModel {
    /// `sum_i coeffs_ns[i] * n^i`
    Polynomial { coeffs_ns: Vec<f64> },
    /// `scale_ns * base^n`
    Exponential { scale_ns: f64, base: f64 },
}

impl ClassicalModel {
    pub fn runtime(&self, qubits: u32) -> SimTime {
        let n = qubits as f64;
        let ns = match self {
            ClassicalModel::Polynomial { coeffs_ns } => coeffs_ns
                .iter()
                .enumerate()
                .map(|(i, c)| c * n.powi(i as i32))
                .sum::<f64>(),
            ClassicalModel::Exponential { scale_ns, base } => scale_ns * base.powf(n),
        };
        SimTime::from_secs_f64(ns * 1e-9).max(SimTime(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramShape {
    #[serde(default = "one_f64")]
    pub weight: f64,
    /// Inclusive range.
    pub qubits: [u32; 2],
    /// Inclusive range of logical instructions, excluding transfers and readout.
    pub instructions: [u32; 2],
    pub opcodes: Vec<String>,
    #[serde(default)]
    pub teleports: u32,
    #[serde(default = "one_u32")]
    pub partners: u32,
    pub shots: ShotPolicy,
}

fn one_f64() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub arrivals: ArrivalProcess,
    pub programs: Vec<ProgramShape>,
    pub t_classical: ClassicalModel,
    #[serde(default)]
    pub preprocess_ops: u64,
    #[serde(default)]
    pub postprocess_ops: u64,
    #[serde(default = "default_message_bytes")]
    pub submit_bytes: u64,
    /// Result size is `shots * ceil(qubits / 8)` plus this header.
    #[serde(default)]
    pub result_header_bytes: u64,
    /// Extra contributing CPUs per job.
    #[serde(default)]
    pub fragments: u32,
}

impl WorkloadSpec {
    pub fn check(&self, isa: &IsaDefinition) -> Result<(), WorkloadError> {
        if let ArrivalProcess::Poisson { rate_per_s } = self.arrivals {
            if !(rate_per_s > 0.0 && rate_per_s.is_finite()) {
                return Err(WorkloadError::Spec(format!("Poisson rate {rate_per_s} must be > 0")));
            }
        }
        if self.programs.is_empty() {
            return Err(WorkloadError::Spec("no program shapes".into()));
        }
        for (i, s) in self.programs.iter().enumerate() {
            let ctx = |m: &str| WorkloadError::Spec(format!("programs[{i}]: {m}"));
            if s.qubits[0] == 0 || s.qubits[0] > s.qubits[1] {
                return Err(ctx("qubit range must be non-empty and start at >= 1"));
            }
            if s.instructions[0] > s.instructions[1] {
                return Err(ctx("instruction range is empty"));
            }
            if s.opcodes.is_empty() && s.instructions[1] > 0 {
                return Err(ctx("no opcodes to draw from"));
            }
            for op in &s.opcodes {
                let def = isa
                    .instruction(op)
                    .ok_or_else(|| ctx(&format!("opcode `{op}` not in ISA `{}`", isa.name())))?;
                if def.arity as u32 > s.qubits[0] {
                    return Err(ctx(&format!("opcode `{op}` needs more qubits than the range allows")));
                }
            }
            if s.teleports > 0 && s.partners == 0 {
                return Err(ctx("teleports need at least one partner"));
            }
            if !(s.weight >= 0.0 && s.weight.is_finite()) {
                return Err(ctx("weight must be non-negative"));
            }
            s.shots.resolve().map_err(|e| ctx(&e.to_string()))?;
        }
        if self.programs.iter().all(|s| s.weight == 0.0) {
            return Err(WorkloadError::Spec("all program weights are zero".into()));
        }
        Ok(())
    }

    pub fn uses_teleports(&self) -> bool {
        self.programs.iter().any(|s| s.teleports > 0 && s.weight > 0.0)
    }
}

/// Draws the job list for arrivals in `[0, horizon)`.
pub fn generate(
    spec: &WorkloadSpec,
    isa: &IsaDefinition,
    cpus: u32,
    horizon: SimTime,
    rng: &mut RngStream,
) -> Result<Vec<Job>, WorkloadError> {
    spec.check(isa)?;
    if cpus == 0 {
        return Err(WorkloadError::Spec("no CPUs to originate jobs".into()));
    }
    let times: Vec<SimTime> = match &spec.arrivals {
        ArrivalProcess::Poisson { rate_per_s } => {
            let mut out = Vec::new();
            let mut t = 0.0f64;
            loop {
                t += rng.exponential(*rate_per_s)?;
                let at = SimTime::from_secs_f64(t);
                if at >= horizon {
                    break;
                }
                out.push(at);
            }
            out
        }
        ArrivalProcess::Fixed { times_ns } => {
            let mut v: Vec<SimTime> = times_ns.iter().map(|&t| SimTime(t)).collect();
            v.sort();
            v
        }
    };

    let weights: Vec<f64> = spec.programs.iter().map(|s| s.weight).collect();
    let mut jobs = Vec::with_capacity(times.len());
    for (id, arrival) in times.into_iter().enumerate() {
        let origin = rng.below(cpus as u64) as u32;
        let shape = &spec.programs[rng.discrete(&weights)?];
        let qubits = draw_range(rng, shape.qubits);
        let count = draw_range(rng, shape.instructions);
        let mut instructions = Vec::with_capacity(count as usize + shape.teleports as usize + 1);
        for _ in 0..count {
            let op = &shape.opcodes[rng.below(shape.opcodes.len() as u64) as usize];
            let arity = isa.instruction(op).map_or(1, |d| d.arity as u32);
            instructions.push(Instruction::new(op.clone(), distinct(rng, qubits, arity)));
        }
        for k in 0..shape.teleports {
            let pos = rng.below(instructions.len() as u64 + 1) as usize;
            let q = rng.below(qubits as u64) as u32;
            instructions.insert(pos, Instruction::teleport([q], k % shape.partners));
        }
        instructions.push(Instruction::measure_all());
        let program = Program {
            qubits,
            instructions,
            shots: shape.shots,
        };
        let shots = shape.shots.resolve().expect("checked") as u64;
        let mut fragments = Vec::new();
        for _ in 0..spec.fragments {
            fragments.push(rng.below(cpus as u64) as u32);
        }
        jobs.push(Job {
            id: id as u64,
            arrival_ns: arrival,
            origin,
            program,
            preprocess_ops: spec.preprocess_ops,
            postprocess_ops: spec.postprocess_ops,
            t_classical_ns: spec.t_classical.runtime(qubits),
            qubits_required: qubits,
            submit_bytes: spec.submit_bytes.max(1),
            result_bytes: (spec.result_header_bytes + shots * qubits.div_ceil(8) as u64).max(1),
            fragments,
        });
    }
    Ok(jobs)
}

fn draw_range(rng: &mut RngStream, [lo, hi]: [u32; 2]) -> u32 {
    lo + rng.below((hi - lo) as u64 + 1) as u32
}

fn distinct(rng: &mut RngStream, n: u32, k: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(k as usize);
    while out.len() < k as usize {
        let q = rng.below(n as u64) as u32;
        if !out.contains(&q) {
            out.push(q);
        }
    }
    out
}

/// Fewest shots such that at least one succeeds with probability `confidence`.
pub fn required_shots(confidence: f64, p_success: f64) -> Result<u64, WorkloadError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(WorkloadError::Confidence(confidence));
    }
    if !(0.0..=1.0).contains(&p_success) {
        return Err(WorkloadError::Probability(p_success));
    }
    if p_success == 0.0 {
        return Err(WorkloadError::UnsatisfiableConfidence);
    }
    if p_success == 1.0 {
        return Ok(1);
    }
    let log_fail = (-p_success).ln_1p();
    let reached = |k: u64| -(k as f64 * log_fail).exp_m1() >= confidence;
    let mut k = ((-confidence).ln_1p() / log_fail).ceil().max(1.0) as u64;
    // The closed form can land one off when the ratio is an exact integer.
    while k > 1 && reached(k - 1) {
        k -= 1;
    }
    while !reached(k) {
        k += 1;
    }
    Ok(k)
}

/// Hoeffding bound: `ceil(ln(2/delta) / (2 epsilon^2))`.
pub fn estimation_shots(epsilon: f64, delta: f64) -> Result<u64, WorkloadError> {
    if !(epsilon > 0.0 && epsilon.is_finite() && delta > 0.0 && delta < 1.0) {
        return Err(WorkloadError::Estimation(epsilon, delta));
    }
    Ok(((2.0 / delta).ln() / (2.0 * epsilon * epsilon)).ceil().max(1.0) as u64)
}

pub fn save_trace(path: impl AsRef<Path>, jobs: &[Job]) -> Result<(), WorkloadError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| WorkloadError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for job in jobs {
        let line = serde_json::to_string(job).expect("jobs serialize");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<Job>, WorkloadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| WorkloadError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_trace(&text)
}

/// Parses JSON lines; blank lines are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<Job>, WorkloadError> {
    let mut jobs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(line);
        let job: Job = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            WorkloadError::Parse {
                line: i + 1,
                field,
                message: e.into_inner().to_string(),
            }
        })?;
        jobs.push(job);
    }
    Ok(jobs)
}
