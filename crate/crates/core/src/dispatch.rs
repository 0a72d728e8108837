//! Offload decisions, QPU routing, partner selection and input aggregation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{side_channel_bytes, transfer_time};
use crate::qram::{decode, IsaDefinition, QramError, Segment};
use crate::sim::SimTime;
use crate::topology::{Architecture, NodeId, RoutingPolicy, TopologyError};
use crate::workload::Job;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffloadPolicy {
    #[default]
    CostThreshold,
    AlwaysQpu,
    AlwaysClassical,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueEstimator {
    /// Jobs at the QPU times the mean observed service time.
    #[default]
    QueueLength,
    /// Exact outstanding work at the QPU.
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    RunClassical,
    RunOnQpu(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OffloadDecision {
    pub choice: Choice,
    pub predicted_remote: Option<SimTime>,
    pub predicted_classical: SimTime,
    /// No QPU could take the job, so it runs classically regardless of policy.
    pub forced: bool,
    pub partners: Vec<u32>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispatchError {
    #[error("scheduling error: program needs {needed} partner QPUs but the architecture has no quantum links")]
    NoQuantumLinks { needed: u32 },
    #[error("scheduling error: qpu.{qpu} has {available} quantum neighbours, program needs {needed}")]
    NotEnoughPartners { qpu: u32, needed: u32, available: u32 },
    #[error("job failed: input fragments incomplete at {at}")]
    FragmentTimeout { at: SimTime },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Qram(#[from] QramError),
}

/// What the dispatcher knows about one QPU's backlog.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QpuLoad {
    /// Jobs waiting or in service.
    pub jobs: u32,
    /// Exact remaining work, used by the oracle estimator and least-loaded routing.
    pub outstanding: SimTime,
    pub mean_service: Option<SimTime>,
}

impl QpuLoad {
    pub fn wait(&self, estimator: QueueEstimator, fallback_service: SimTime) -> SimTime {
        match estimator {
            QueueEstimator::QueueLength => self.mean_service.unwrap_or(fallback_service) * self.jobs as u64,
            QueueEstimator::Oracle => self.outstanding,
        }
    }
}

/// Terms of the predicted remote latency of one job.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RemoteBreakdown {
    pub preprocess: SimTime,
    /// Wire time of the submission and any input fragments, slowest first.
    pub submit: SimTime,
    pub switch_service: SimTime,
    pub switch_wait: SimTime,
    pub controller: SimTime,
    pub queue_wait: SimTime,
    pub quantum: SimTime,
    pub teleport: SimTime,
    pub result: SimTime,
    pub postprocess: SimTime,
}

impl RemoteBreakdown {
    pub fn total(&self) -> SimTime {
        self.preprocess
            + self.submit
            + self.switch_service
            + self.switch_wait
            + self.controller
            + self.queue_wait
            + self.quantum
            + self.teleport
            + self.result
            + self.postprocess
    }
}

/// Wire time along the classical path plus whether it crosses the switch.
pub fn path_time(arch: &Architecture, from: NodeId, to: NodeId, bytes: u64) -> Result<(SimTime, bool), TopologyError> {
    let hops = arch.path(from, to)?;
    let mut t = SimTime::ZERO;
    let mut at = from;
    let mut via_switch = false;
    for &i in &hops {
        let l = &arch.classical_links[i];
        t += transfer_time(l, bytes);
        at = l.other(at).expect("path is contiguous");
        via_switch |= at == NodeId::Switch;
    }
    Ok((t, via_switch))
}

/// Time for a teleport of `qubits` from `qpu` to `partner`: side channel plus correction.
pub fn teleport_time(
    arch: &Architecture,
    qpu: u32,
    partner: u32,
    qubits: u32,
    correction: SimTime,
) -> Result<SimTime, TopologyError> {
    let (wire, _) = path_time(arch, NodeId::Qpu(qpu), NodeId::Qpu(partner), side_channel_bytes(qubits))?;
    Ok(wire + correction)
}

/// Quantum QPUs a program will use as teleport destinations, lowest id first.
pub fn select_partners(arch: &Architecture, qpu: u32, needed: u32) -> Result<Vec<u32>, DispatchError> {
    if needed == 0 {
        return Ok(Vec::new());
    }
    if arch.quantum_links.is_empty() {
        return Err(DispatchError::NoQuantumLinks { needed });
    }
    let neighbours = arch.quantum_neighbors(qpu);
    if (neighbours.len() as u32) < needed {
        return Err(DispatchError::NotEnoughPartners {
            qpu,
            needed,
            available: neighbours.len() as u32,
        });
    }
    Ok(neighbours[..needed as usize].to_vec())
}

/// Start time of an aggregated program: the last fragment's delivery, or a
/// timeout failure if any fragment is missing or late.
pub fn aggregate_inputs(
    arrivals: &[Option<SimTime>],
    opened_at: SimTime,
    timeout: SimTime,
) -> Result<SimTime, DispatchError> {
    let deadline = opened_at.saturating_add(timeout);
    let mut latest = opened_at;
    for a in arrivals {
        match a {
            Some(t) if *t <= deadline => latest = latest.max(*t),
            _ => return Err(DispatchError::FragmentTimeout { at: deadline }),
        }
    }
    Ok(latest)
}

#[derive(Clone, Debug, Default)]
pub struct Router {
    pub policy: RoutingPolicy,
    cursor: usize,
}

impl Router {
    pub fn new(policy: RoutingPolicy) -> Self {
        Router { policy, cursor: 0 }
    }

    /// Choice the router would make now, without advancing.
    pub fn peek(&self, candidates: &[(u32, QpuLoad)]) -> Option<u32> {
        if candidates.is_empty() {
            return None;
        }
        match self.policy {
            RoutingPolicy::RoundRobin => Some(candidates[self.cursor % candidates.len()].0),
            RoutingPolicy::LeastLoaded => candidates
                .iter()
                .min_by_key(|(id, l)| (l.outstanding, *id))
                .map(|(id, _)| *id),
        }
    }

    pub fn commit(&mut self) {
        self.cursor += 1;
    }

    pub fn select(&mut self, candidates: &[(u32, QpuLoad)]) -> Option<u32> {
        let pick = self.peek(candidates);
        if pick.is_some() {
            self.commit();
        }
        pick
    }
}

/// Static inputs to the remote-latency prediction.
#[derive(Clone, Copy, Debug)]
pub struct CostInputs {
    pub estimator: QueueEstimator,
    pub correction: SimTime,
    /// Remaining busy time of the entry switch.
    pub switch_backlog: SimTime,
}

/// Predicted remote latency of `job` on `qpu` with the given partners.
pub fn predict_remote(
    arch: &Architecture,
    isa: &IsaDefinition,
    job: &Job,
    qpu: u32,
    partners: &[u32],
    load: &QpuLoad,
    inputs: &CostInputs,
) -> Result<RemoteBreakdown, DispatchError> {
    let cpu = arch.cpu(job.origin).ok_or(TopologyError::NoPath {
        from: NodeId::Cpu(job.origin),
        to: NodeId::Qpu(qpu),
    })?;
    let node = arch.qpu(qpu).ok_or(TopologyError::NoPath {
        from: NodeId::Cpu(job.origin),
        to: NodeId::Qpu(qpu),
    })?;
    let decoded = decode(&job.program, isa)?;
    let shots = job.program.shots.resolve()? as u64;
    let mut b = RemoteBreakdown {
        preprocess: cpu.op_time(job.preprocess_ops),
        postprocess: cpu.op_time(job.postprocess_ops),
        controller: node.controller_latency,
        ..Default::default()
    };

    let (submit, via_switch) = path_time(arch, NodeId::Cpu(job.origin), NodeId::Qpu(qpu), job.submit_bytes)?;
    let mut wire = submit;
    for &f in &job.fragments {
        let (t, _) = path_time(arch, NodeId::Cpu(f), NodeId::Qpu(qpu), job.submit_bytes)?;
        wire = wire.max(t);
    }
    b.submit = wire;
    if via_switch {
        if let Some(sw) = arch.entry_switch {
            b.switch_service = sw.service_time;
            b.switch_wait = inputs.switch_backlog;
        }
    }
    b.result = path_time(arch, NodeId::Qpu(qpu), NodeId::Cpu(job.origin), job.result_bytes)?.0;

    let shot = decoded.shot_duration(isa);
    b.queue_wait = load.wait(inputs.estimator, shot * shots);
    b.quantum = shot * shots;
    let mut per_shot_teleport = SimTime::ZERO;
    for seg in decoded.segments(isa) {
        if let Segment::Teleport { qubits, partner } = seg {
            let dst = *partners.get(partner as usize).ok_or(DispatchError::NotEnoughPartners {
                qpu,
                needed: partner + 1,
                available: partners.len() as u32,
            })?;
            per_shot_teleport += teleport_time(arch, qpu, dst, qubits, inputs.correction)?;
        }
    }
    b.teleport = per_shot_teleport * shots;
    Ok(b)
}

#[derive(Clone, Debug)]
pub struct Dispatcher {
    pub policy: OffloadPolicy,
    pub router: Router,
}

impl Dispatcher {
    pub fn new(policy: OffloadPolicy, routing: RoutingPolicy) -> Self {
        Dispatcher {
            policy,
            router: Router::new(routing),
        }
    }

    /// Chooses between the classical alternative and a QPU from `candidates`.
    /// Ties go to the classical alternative.
    pub fn decide(
        &mut self,
        arch: &Architecture,
        isa: &IsaDefinition,
        job: &Job,
        candidates: &[(u32, QpuLoad)],
        inputs: &CostInputs,
    ) -> Result<OffloadDecision, DispatchError> {
        let classical = OffloadDecision {
            choice: Choice::RunClassical,
            predicted_remote: None,
            predicted_classical: job.t_classical_ns,
            forced: false,
            partners: Vec::new(),
        };
        let Some(qpu) = self.router.peek(candidates) else {
            return Ok(OffloadDecision {
                forced: true,
                ..classical
            });
        };
        let partners = select_partners(arch, qpu, job.program.partners_required())?;
        let load = candidates
            .iter()
            .find(|(id, _)| *id == qpu)
            .map(|(_, l)| *l)
            .unwrap_or_default();
        let remote = predict_remote(arch, isa, job, qpu, &partners, &load, inputs)?.total();
        let offload = match self.policy {
            OffloadPolicy::CostThreshold => remote < job.t_classical_ns,
            OffloadPolicy::AlwaysQpu => true,
            OffloadPolicy::AlwaysClassical => false,
        };
        if offload {
            self.router.commit();
        }
        Ok(OffloadDecision {
            choice: if offload {
                Choice::RunOnQpu(qpu)
            } else {
                Choice::RunClassical
            },
            predicted_remote: Some(remote),
            partners: if offload { partners } else { Vec::new() },
            ..classical
        })
    }
}
