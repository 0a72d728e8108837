//! Streaming accumulators and the per-run metrics report.

mod export;

use std::collections::BTreeMap;

use serde::Serialize;

pub use export::{flatten, to_csv, to_json, write_report, Leaf, OutputFormat, Value};

use crate::qram::{ExecutionRecord, IsaDefinition, MEASURE};
use crate::sim::SimTime;

/// Count, sum, sum of squares, min and max of a stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stats {
    count: u64,
    sum: f64,
    sum_sq: f64,
    min: f64,
    max: f64,
}

impl Stats {
    pub fn push(&mut self, x: f64) {
        self.push_weighted(x, 1);
    }

    pub fn push_weighted(&mut self, x: f64, w: u64) {
        if w == 0 {
            return;
        }
        if self.count == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.count += w;
        self.sum += x * w as f64;
        self.sum_sq += x * x * w as f64;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    /// Population standard deviation.
    pub fn stddev(&self) -> Option<f64> {
        let m = self.mean()?;
        Some((self.sum_sq / self.count as f64 - m * m).max(0.0).sqrt())
    }

    pub fn min(&self) -> Option<f64> {
        (self.count > 0).then_some(self.min)
    }

    pub fn max(&self) -> Option<f64> {
        (self.count > 0).then_some(self.max)
    }
}

/// Gate ratio and qubit ratio of one execution; absent without logical work.
pub fn ft_overhead(record: &ExecutionRecord) -> Option<(f64, f64)> {
    if record.logical_instruction_count == 0 || record.logical_qubits == 0 {
        return None;
    }
    Some((
        record.primitive_gate_count as f64 / record.logical_instruction_count as f64,
        (record.logical_qubits + record.ancilla_used) as f64 / record.logical_qubits as f64,
    ))
}

/// Per-QPU accumulators fed by the simulation.
#[derive(Clone, Debug, Default)]
pub struct QpuAccumulator {
    /// Gate name -> (duration, executions).
    gates: BTreeMap<String, (SimTime, u64)>,
    instructions: BTreeMap<String, (SimTime, u64)>,
    executed_logical: u64,
    executed_primitive: u64,
    quantum_time: SimTime,
    program_logical: u64,
    program_primitive: u64,
    program_qubits: u64,
    program_qubits_with_ancilla: u64,
    pub invalid_shots: u64,
    pub busy: SimTime,
    pub ec_charge: SimTime,
    pub queue_wait: Stats,
    pub service: Stats,
    pub jobs_started: u64,
    pub jobs_completed: u64,
    pub jobs_aborted: u64,
    pub failures: u64,
}

impl QpuAccumulator {
    /// Records one completed program execution.
    pub fn record_execution(&mut self, rec: &ExecutionRecord, isa: &IsaDefinition, opcodes: &[String]) {
        let attempts = rec.attempts as u64;
        for g in &rec.gates {
            if g.name == MEASURE {
                continue;
            }
            let e = self.gates.entry(g.name.clone()).or_insert((g.duration, 0));
            e.1 += attempts;
        }
        for op in opcodes {
            if let Some(d) = isa.instruction_duration(op) {
                let e = self.instructions.entry(op.clone()).or_insert((d, 0));
                e.1 += attempts;
            }
        }
        self.executed_logical += rec.logical_instruction_count * attempts;
        self.executed_primitive += rec.primitive_gate_count * attempts;
        self.quantum_time += rec.quantum_time;
        self.invalid_shots += rec.invalid_shots() as u64;
        if rec.logical_instruction_count > 0 && rec.logical_qubits > 0 {
            self.program_logical += rec.logical_instruction_count;
            self.program_primitive += rec.primitive_gate_count;
            self.program_qubits += rec.logical_qubits as u64;
            self.program_qubits_with_ancilla += (rec.logical_qubits + rec.ancilla_used) as u64;
        }
    }

    /// Gate name -> (duration, executions) seen so far.
    pub fn gate_counts(&self) -> &BTreeMap<String, (SimTime, u64)> {
        &self.gates
    }

    pub fn report(&self, id: u32, elapsed: SimTime) -> QpuReport {
        let mut unweighted = Stats::default();
        let mut weighted = Stats::default();
        for (d, n) in self.gates.values() {
            unweighted.push(d.as_nanos() as f64);
            weighted.push_weighted(d.as_nanos() as f64, *n);
        }
        let best = unweighted.min().map(|v| v as u64);
        let worst = unweighted.max().map(|v| v as u64);
        let instr_best = self.instructions.values().map(|(d, _)| d.as_nanos()).min();
        let instr_worst = self.instructions.values().map(|(d, _)| d.as_nanos()).max();
        let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
        let used = self.busy + self.ec_charge;
        QpuReport {
            id,
            jobs_started: self.jobs_started,
            jobs_completed: self.jobs_completed,
            jobs_aborted: self.jobs_aborted,
            failures: self.failures,
            best_gate_ns: best,
            worst_gate_ns: worst,
            gate_spread_ns: best.zip(worst).map(|(b, w)| w - b),
            gate_stddev_unweighted_ns: unweighted.stddev(),
            gate_stddev_weighted_ns: weighted.stddev(),
            best_instruction_ns: instr_best,
            worst_instruction_ns: instr_worst,
            wall_time_per_instruction_ns: ratio(self.quantum_time.as_nanos(), self.executed_logical),
            primitive_gates_per_instruction: ratio(self.executed_primitive, self.executed_logical),
            ft_gate_overhead_ratio: ratio(self.program_primitive, self.program_logical),
            ft_qubit_overhead_ratio: ratio(self.program_qubits_with_ancilla, self.program_qubits),
            invalid_shots: self.invalid_shots,
            busy_ns: self.busy.as_nanos(),
            ec_charge_ns: self.ec_charge.as_nanos(),
            utilization: if elapsed > SimTime::ZERO {
                (used.as_nanos() as f64 / elapsed.as_nanos() as f64).min(1.0)
            } else {
                0.0
            },
            queue_wait: Summary::from(&self.queue_wait),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub count: u64,
    pub mean_ns: Option<f64>,
    pub max_ns: Option<f64>,
    pub stddev_ns: Option<f64>,
}

impl From<&Stats> for Summary {
    fn from(s: &Stats) -> Self {
        Summary {
            count: s.count(),
            mean_ns: s.mean(),
            max_ns: s.max(),
            stddev_ns: s.stddev(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QpuReport {
    pub id: u32,
    pub jobs_started: u64,
    pub jobs_completed: u64,
    pub jobs_aborted: u64,
    pub failures: u64,
    pub best_gate_ns: Option<u64>,
    pub worst_gate_ns: Option<u64>,
    pub gate_spread_ns: Option<u64>,
    pub gate_stddev_unweighted_ns: Option<f64>,
    pub gate_stddev_weighted_ns: Option<f64>,
    pub best_instruction_ns: Option<u64>,
    pub worst_instruction_ns: Option<u64>,
    pub wall_time_per_instruction_ns: Option<f64>,
    pub primitive_gates_per_instruction: Option<f64>,
    pub ft_gate_overhead_ratio: Option<f64>,
    pub ft_qubit_overhead_ratio: Option<f64>,
    pub invalid_shots: u64,
    pub busy_ns: u64,
    pub ec_charge_ns: u64,
    pub utilization: f64,
    pub queue_wait: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkReport {
    pub id: u32,
    pub endpoints: (u32, u32),
    pub attempts: u64,
    pub created: u64,
    pub consumed: u64,
    pub expired: u64,
    pub available_at_end: u64,
    pub reserved_at_end: u64,
    pub generation_rate_per_s: Option<f64>,
    pub mean_inter_creation_ns: Option<f64>,
    pub requests: u64,
    pub availability_ratio: Option<f64>,
    pub expiry_fraction: Option<f64>,
    pub communication_failures: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Completed,
    Failed,
    Incomplete,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Completed => "completed",
            JobStatus::Failed => "failed",
            JobStatus::Incomplete => "incomplete",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JobReport {
    pub id: u64,
    pub origin: u32,
    pub arrival_ns: u64,
    /// "classical", "qpu.N", or "none" before a decision.
    pub choice: String,
    pub status: JobStatus,
    pub completion_ns: Option<u64>,
    pub latency_ns: Option<u64>,
    pub speedup: Option<f64>,
    pub predicted_remote_ns: Option<u64>,
    pub predicted_classical_ns: u64,
    pub shots: Option<u32>,
    pub attempts: Option<u32>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SystemReport {
    pub architecture: String,
    pub seed: u64,
    pub horizon_ns: u64,
    pub clock_ns: u64,
    pub events_processed: u64,
    pub jobs_total: u64,
    pub jobs_completed: u64,
    pub jobs_failed: u64,
    pub jobs_incomplete: u64,
    pub offloaded: u64,
    pub run_classical: u64,
    /// Classical because no QPU was up or large enough.
    pub forced_classical: u64,
    pub offload_fraction: Option<f64>,
    pub unschedulable: u64,
    pub scheduling_errors: u64,
    pub mean_latency_ns: Option<f64>,
    pub makespan_ns: Option<u64>,
    pub throughput_per_s: Option<f64>,
    pub switch_forwarded: u64,
    pub switch_throughput_per_s: Option<f64>,
    pub capacity_exact: Option<u128>,
    pub capacity_log2: f64,
    pub qpu_failures: u64,
    pub cascades: u64,
    pub cascade_histogram: BTreeMap<u32, u64>,
    pub communication_failures: u64,
    pub transfers_completed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub system: SystemReport,
    pub qpus: Vec<QpuReport>,
    pub links: Vec<LinkReport>,
    pub jobs: Vec<JobReport>,
}

impl MetricsReport {
    /// Ordered tree mirroring the report; entity sections are omitted when
    /// the run had no jobs.
    pub fn to_tree(&self) -> Value {
        let s = &self.system;
        let system = Value::map([
            ("architecture", Value::text(&s.architecture)),
            ("seed", Value::Int(s.seed as i128)),
            ("horizon_ns", Value::Int(s.horizon_ns as i128)),
            ("clock_ns", Value::Int(s.clock_ns as i128)),
            ("events_processed", Value::Int(s.events_processed as i128)),
            ("jobs_total", Value::Int(s.jobs_total as i128)),
            ("jobs_completed", Value::Int(s.jobs_completed as i128)),
            ("jobs_failed", Value::Int(s.jobs_failed as i128)),
            ("jobs_incomplete", Value::Int(s.jobs_incomplete as i128)),
            ("offloaded", Value::Int(s.offloaded as i128)),
            ("run_classical", Value::Int(s.run_classical as i128)),
            ("forced_classical", Value::Int(s.forced_classical as i128)),
            ("offload_fraction", Value::ratio(s.offload_fraction)),
            ("unschedulable", Value::Int(s.unschedulable as i128)),
            ("scheduling_errors", Value::Int(s.scheduling_errors as i128)),
            ("mean_latency_ns", Value::ratio(s.mean_latency_ns)),
            ("makespan_ns", Value::int(s.makespan_ns)),
            ("throughput_per_s", Value::ratio(s.throughput_per_s)),
            ("switch_forwarded", Value::Int(s.switch_forwarded as i128)),
            ("switch_throughput_per_s", Value::ratio(s.switch_throughput_per_s)),
            (
                "capacity_exact",
                s.capacity_exact.map_or(Value::Null, |c| Value::Int(c as i128)),
            ),
            ("capacity_log2", Value::Ratio(s.capacity_log2)),
            ("qpu_failures", Value::Int(s.qpu_failures as i128)),
            ("cascades", Value::Int(s.cascades as i128)),
            (
                "cascade_histogram",
                Value::Map(
                    s.cascade_histogram
                        .iter()
                        .map(|(k, v)| (k.to_string(), Value::Int(*v as i128)))
                        .collect(),
                ),
            ),
            ("communication_failures", Value::Int(s.communication_failures as i128)),
            ("transfers_completed", Value::Int(s.transfers_completed as i128)),
        ]);
        let mut root = vec![("system".to_string(), system)];
        if s.jobs_total == 0 {
            return Value::Map(root);
        }
        let qpus = self
            .qpus
            .iter()
            .map(|q| {
                let w = &q.queue_wait;
                let v = Value::map([
                    ("jobs_started", Value::Int(q.jobs_started as i128)),
                    ("jobs_completed", Value::Int(q.jobs_completed as i128)),
                    ("jobs_aborted", Value::Int(q.jobs_aborted as i128)),
                    ("failures", Value::Int(q.failures as i128)),
                    ("best_gate_ns", Value::int(q.best_gate_ns)),
                    ("worst_gate_ns", Value::int(q.worst_gate_ns)),
                    ("gate_spread_ns", Value::int(q.gate_spread_ns)),
                    ("gate_stddev_unweighted_ns", Value::ratio(q.gate_stddev_unweighted_ns)),
                    ("gate_stddev_weighted_ns", Value::ratio(q.gate_stddev_weighted_ns)),
                    ("best_instruction_ns", Value::int(q.best_instruction_ns)),
                    ("worst_instruction_ns", Value::int(q.worst_instruction_ns)),
                    (
                        "wall_time_per_instruction_ns",
                        Value::ratio(q.wall_time_per_instruction_ns),
                    ),
                    (
                        "primitive_gates_per_instruction",
                        Value::ratio(q.primitive_gates_per_instruction),
                    ),
                    ("ft_gate_overhead_ratio", Value::ratio(q.ft_gate_overhead_ratio)),
                    ("ft_qubit_overhead_ratio", Value::ratio(q.ft_qubit_overhead_ratio)),
                    ("invalid_shots", Value::Int(q.invalid_shots as i128)),
                    ("busy_ns", Value::Int(q.busy_ns as i128)),
                    ("ec_charge_ns", Value::Int(q.ec_charge_ns as i128)),
                    ("utilization", Value::Ratio(q.utilization)),
                    (
                        "queue_wait",
                        Value::map([
                            ("count", Value::Int(w.count as i128)),
                            ("mean_ns", Value::ratio(w.mean_ns)),
                            ("max_ns", Value::ratio(w.max_ns)),
                            ("stddev_ns", Value::ratio(w.stddev_ns)),
                        ]),
                    ),
                ]);
                (format!("qpu.{}", q.id), v)
            })
            .collect();
        let links = self
            .links
            .iter()
            .map(|l| {
                let v = Value::map([
                    (
                        "endpoints",
                        Value::text(&format!("qpu.{}-qpu.{}", l.endpoints.0, l.endpoints.1)),
                    ),
                    ("attempts", Value::Int(l.attempts as i128)),
                    ("created", Value::Int(l.created as i128)),
                    ("consumed", Value::Int(l.consumed as i128)),
                    ("expired", Value::Int(l.expired as i128)),
                    ("available_at_end", Value::Int(l.available_at_end as i128)),
                    ("reserved_at_end", Value::Int(l.reserved_at_end as i128)),
                    ("generation_rate_per_s", Value::ratio(l.generation_rate_per_s)),
                    ("mean_inter_creation_ns", Value::ratio(l.mean_inter_creation_ns)),
                    ("requests", Value::Int(l.requests as i128)),
                    ("availability_ratio", Value::ratio(l.availability_ratio)),
                    ("expiry_fraction", Value::ratio(l.expiry_fraction)),
                    ("communication_failures", Value::Int(l.communication_failures as i128)),
                ]);
                (format!("qlink.{}", l.id), v)
            })
            .collect();
        let jobs = self
            .jobs
            .iter()
            .map(|j| {
                let v = Value::map([
                    ("origin", Value::text(&format!("cpu.{}", j.origin))),
                    ("arrival_ns", Value::Int(j.arrival_ns as i128)),
                    ("choice", Value::text(&j.choice)),
                    ("status", Value::text(j.status.as_str())),
                    ("completion_ns", Value::int(j.completion_ns)),
                    ("latency_ns", Value::int(j.latency_ns)),
                    ("speedup", Value::ratio(j.speedup)),
                    ("predicted_remote_ns", Value::int(j.predicted_remote_ns)),
                    ("predicted_classical_ns", Value::Int(j.predicted_classical_ns as i128)),
                    ("shots", Value::int(j.shots.map(u64::from))),
                    ("attempts", Value::int(j.attempts.map(u64::from))),
                    ("failure", j.failure.as_deref().map_or(Value::Null, Value::text)),
                ]);
                (format!("job.{}", j.id), v)
            })
            .collect();
        root.push(("qpus".into(), Value::Map(qpus)));
        root.push(("links".into(), Value::Map(links)));
        root.push(("jobs".into(), Value::Map(jobs)));
        Value::Map(root)
    }
}
