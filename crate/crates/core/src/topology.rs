//! Node/link graphs for the integration patterns and the server capacity formulas.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qram::{Dimension, IsaDefinition};
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Cpu(u32),
    Qpu(u32),
    Switch,
}

impl NodeId {
    pub fn qpu(self) -> Option<u32> {
        match self {
            NodeId::Qpu(i) => Some(i),
            _ => None,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Cpu(i) => write!(f, "cpu.{i}"),
            NodeId::Qpu(i) => write!(f, "qpu.{i}"),
            NodeId::Switch => f.write_str("switch"),
        }
    }
}

impl FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "switch" {
            return Ok(NodeId::Switch);
        }
        let parse = |rest: &str| rest.parse::<u32>().map_err(|_| format!("bad node id `{s}`"));
        if let Some(rest) = s.strip_prefix("cpu.") {
            Ok(NodeId::Cpu(parse(rest)?))
        } else if let Some(rest) = s.strip_prefix("qpu.") {
            Ok(NodeId::Qpu(parse(rest)?))
        } else {
            Err(format!("bad node id `{s}`, expected cpu.N, qpu.N or switch"))
        }
    }
}

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpuNode {
    pub id: u32,
    /// Classical operations per second.
    pub instruction_rate: f64,
}

impl CpuNode {
    pub fn op_time(&self, ops: u64) -> SimTime {
        if ops == 0 {
            return SimTime::ZERO;
        }
        SimTime::from_secs_f64(ops as f64 / self.instruction_rate)
    }
}

#[derive(Clone, Debug)]
pub struct QpuNode {
    pub id: u32,
    pub register_size: u32,
    pub isa: Arc<IsaDefinition>,
    pub controller_latency: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalLink {
    pub a: NodeId,
    pub b: NodeId,
    pub latency: SimTime,
    /// Bytes per second.
    pub bandwidth: u64,
}

impl ClassicalLink {
    pub fn connects(&self, x: NodeId, y: NodeId) -> bool {
        (self.a == x && self.b == y) || (self.a == y && self.b == x)
    }

    pub fn other(&self, end: NodeId) -> Option<NodeId> {
        if self.a == end {
            Some(self.b)
        } else if self.b == end {
            Some(self.a)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumLink {
    pub a: NodeId,
    pub b: NodeId,
    pub attempt_period: SimTime,
    pub p_gen: f64,
    pub pair_lifetime: SimTime,
}

impl QuantumLink {
    pub fn qpus(&self) -> Option<(u32, u32)> {
        Some((self.a.qpu()?, self.b.qpu()?))
    }

    pub fn joins(&self, x: u32, y: u32) -> bool {
        matches!(self.qpus(), Some((a, b)) if (a == x && b == y) || (a == y && b == x))
    }

    /// Mean time between created pairs.
    pub fn expected_generation_time(&self) -> SimTime {
        if self.p_gen <= 0.0 {
            return SimTime::MAX;
        }
        SimTime::from_secs_f64(self.attempt_period.as_secs_f64() / self.p_gen)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingPolicy {
    #[default]
    RoundRobin,
    LeastLoaded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySwitch {
    #[serde(rename = "service_time_ns")]
    pub service_time: SimTime,
    #[serde(default)]
    pub policy: RoutingPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    ClientServer,
    SharedQpu,
    DedicatedAccelerator,
    InterconnectedAccelerator,
    Custom,
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArchKind::ClientServer => "client_server",
            ArchKind::SharedQpu => "shared_qpu",
            ArchKind::DedicatedAccelerator => "dedicated_accelerator",
            ArchKind::InterconnectedAccelerator => "interconnected_accelerator",
            ArchKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct Architecture {
    pub kind: ArchKind,
    pub cpus: Vec<CpuNode>,
    pub qpus: Vec<QpuNode>,
    pub classical_links: Vec<ClassicalLink>,
    pub quantum_links: Vec<QuantumLink>,
    pub entry_switch: Option<EntrySwitch>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("construction error: {0}")]
    Construction(String),
    #[error("routing error: no classical path from {from} to {to}")]
    NoPath { from: NodeId, to: NodeId },
    #[error("topology error: no quantum link between qpu.{0} and qpu.{1}")]
    NoQuantumLink(u32, u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub latency_ns: u64,
    pub bandwidth_bytes_per_s: u64,
}

impl LinkParams {
    fn link(&self, a: NodeId, b: NodeId) -> ClassicalLink {
        ClassicalLink {
            a,
            b,
            latency: SimTime(self.latency_ns),
            bandwidth: self.bandwidth_bytes_per_s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumLinkParams {
    pub attempt_period_ns: u64,
    pub p_gen: f64,
    pub pair_lifetime_ns: u64,
}

impl QuantumLinkParams {
    fn link(&self, a: u32, b: u32) -> QuantumLink {
        QuantumLink {
            a: NodeId::Qpu(a),
            b: NodeId::Qpu(b),
            attempt_period: SimTime(self.attempt_period_ns),
            p_gen: self.p_gen,
            pair_lifetime: SimTime(self.pair_lifetime_ns),
        }
    }
}

/// Counts and link parameters for the canonical builders.
#[derive(Clone, Debug)]
pub struct BuildParams {
    pub cpus: u32,
    pub qpus: u32,
    pub qubits_per_qpu: u32,
    pub cpu_instruction_rate: f64,
    pub controller_latency: SimTime,
    /// CPU to its first hop (switch, or the QPU in accelerator patterns).
    pub access_link: LinkParams,
    /// Switch to QPU.
    pub qpu_link: LinkParams,
    /// CPU interconnect in accelerator patterns.
    pub cpu_link: LinkParams,
    /// Classical QPU-to-QPU channel laid alongside each quantum link.
    pub side_channel_link: LinkParams,
    pub quantum_link: Option<QuantumLinkParams>,
    pub switch: Option<EntrySwitch>,
}

/// Builds the canonical graph for one of the four patterns.
pub fn build_architecture(
    kind: ArchKind,
    p: &BuildParams,
    isa: Arc<IsaDefinition>,
) -> Result<Architecture, TopologyError> {
    let err = |m: String| Err(TopologyError::Construction(m));
    if p.cpus == 0 || p.qpus == 0 {
        return err("CPU and QPU counts must be >= 1".into());
    }
    if p.qubits_per_qpu == 0 {
        return err("qubits per QPU must be >= 1".into());
    }
    let cpus = (0..p.cpus)
        .map(|id| CpuNode {
            id,
            instruction_rate: p.cpu_instruction_rate,
        })
        .collect();
    let qpus = (0..p.qpus)
        .map(|id| QpuNode {
            id,
            register_size: p.qubits_per_qpu,
            isa: isa.clone(),
            controller_latency: p.controller_latency,
        })
        .collect();

    let mut classical = Vec::new();
    let mut quantum = Vec::new();
    let mut entry_switch = None;
    let quantum_mesh = |classical: &mut Vec<ClassicalLink>, quantum: &mut Vec<QuantumLink>, q: &QuantumLinkParams| {
        for a in 0..p.qpus {
            for b in a + 1..p.qpus {
                quantum.push(q.link(a, b));
                classical.push(p.side_channel_link.link(NodeId::Qpu(a), NodeId::Qpu(b)));
            }
        }
    };
    let cpu_mesh = |classical: &mut Vec<ClassicalLink>| {
        for a in 0..p.cpus {
            for b in a + 1..p.cpus {
                classical.push(p.cpu_link.link(NodeId::Cpu(a), NodeId::Cpu(b)));
            }
        }
    };

    match kind {
        ArchKind::ClientServer => {
            let Some(sw) = p.switch else {
                return err("client_server requires an entry switch".into());
            };
            entry_switch = Some(sw);
            for c in 0..p.cpus {
                classical.push(p.access_link.link(NodeId::Cpu(c), NodeId::Switch));
            }
            for q in 0..p.qpus {
                classical.push(p.qpu_link.link(NodeId::Switch, NodeId::Qpu(q)));
            }
            if let Some(q) = &p.quantum_link {
                quantum_mesh(&mut classical, &mut quantum, q);
            }
        }
        ArchKind::SharedQpu => {
            if p.qpus != 1 {
                return err(format!("shared_qpu has exactly one QPU, got {}", p.qpus));
            }
            if p.quantum_link.is_some() {
                return err("shared_qpu has no quantum links".into());
            }
            for c in 0..p.cpus {
                classical.push(p.access_link.link(NodeId::Cpu(c), NodeId::Qpu(0)));
            }
        }
        ArchKind::DedicatedAccelerator | ArchKind::InterconnectedAccelerator => {
            if p.cpus != p.qpus {
                return err(format!(
                    "{kind} pairs each CPU with one QPU, got {} CPUs and {} QPUs",
                    p.cpus, p.qpus
                ));
            }
            for i in 0..p.cpus {
                classical.push(p.access_link.link(NodeId::Cpu(i), NodeId::Qpu(i)));
            }
            cpu_mesh(&mut classical);
            match (kind, &p.quantum_link) {
                (ArchKind::DedicatedAccelerator, Some(_)) => {
                    return err("dedicated_accelerator has no quantum links".into());
                }
                (ArchKind::InterconnectedAccelerator, None) => {
                    return err("interconnected_accelerator needs quantum link parameters".into());
                }
                (ArchKind::InterconnectedAccelerator, Some(q)) => {
                    quantum_mesh(&mut classical, &mut quantum, q);
                }
                _ => {}
            }
        }
        ArchKind::Custom => {
            return err("custom architectures are given node by node".into());
        }
    }

    Ok(Architecture {
        kind,
        cpus,
        qpus,
        classical_links: classical,
        quantum_links: quantum,
        entry_switch,
    })
}

/// State-space dimension of `q` QPUs with `n` qubits each.
pub fn server_capacity(q: u32, n: u32, interconnected: bool) -> Dimension {
    if interconnected {
        let bits = q as u64 * n as u64;
        Dimension {
            exact: if bits < 128 { Some(1u128 << bits) } else { None },
            log2: bits as f64,
        }
    } else {
        let exact = if n < 128 {
            (q as u128).checked_mul(1u128 << n)
        } else {
            None
        };
        Dimension {
            exact,
            log2: (q as f64).log2() + n as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Architecture {
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.cpus.iter().map(|c| NodeId::Cpu(c.id)).collect();
        if self.has_switch() {
            out.push(NodeId::Switch);
        }
        out.extend(self.qpus.iter().map(|q| NodeId::Qpu(q.id)));
        out
    }

    pub fn has_switch(&self) -> bool {
        self.entry_switch.is_some()
            || self
                .classical_links
                .iter()
                .any(|l| l.a == NodeId::Switch || l.b == NodeId::Switch)
    }

    pub fn cpu(&self, id: u32) -> Option<&CpuNode> {
        self.cpus.iter().find(|c| c.id == id)
    }

    pub fn qpu(&self, id: u32) -> Option<&QpuNode> {
        self.qpus.iter().find(|q| q.id == id)
    }

    pub fn is_interconnected(&self) -> bool {
        !self.quantum_links.is_empty()
    }

    pub fn capacity(&self) -> Dimension {
        let n = self.qpus.iter().map(|q| q.register_size).min().unwrap_or(0);
        server_capacity(self.qpus.len() as u32, n, self.is_interconnected())
    }

    pub fn quantum_link_index(&self, a: u32, b: u32) -> Option<usize> {
        self.quantum_links.iter().position(|l| l.joins(a, b))
    }

    /// QPUs that share a quantum link with `qpu`, ascending.
    pub fn quantum_neighbors(&self, qpu: u32) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .quantum_links
            .iter()
            .filter_map(|l| l.qpus())
            .filter_map(|(a, b)| {
                if a == qpu {
                    Some(b)
                } else if b == qpu {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Shortest classical path (as link indices) whose interior nodes are switches.
    pub fn path(&self, from: NodeId, to: NodeId) -> Result<Vec<usize>, TopologyError> {
        if from == to {
            return Ok(Vec::new());
        }
        let mut prev: BTreeMap<NodeId, (NodeId, usize)> = BTreeMap::new();
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(node) = queue.pop_front() {
            if node != from && node != NodeId::Switch {
                continue;
            }
            for (i, l) in self.classical_links.iter().enumerate() {
                let Some(next) = l.other(node) else { continue };
                if seen.insert(next) {
                    prev.insert(next, (node, i));
                    if next == to {
                        let mut out = vec![i];
                        let mut at = node;
                        while at != from {
                            let (p, li) = prev[&at];
                            out.push(li);
                            at = p;
                        }
                        out.reverse();
                        return Ok(out);
                    }
                    queue.push_back(next);
                }
            }
        }
        Err(TopologyError::NoPath { from, to })
    }

    /// QPUs a CPU can submit to.
    pub fn reachable_qpus(&self, cpu: u32) -> Vec<u32> {
        match self.kind {
            ArchKind::DedicatedAccelerator | ArchKind::InterconnectedAccelerator => {
                self.qpu(cpu).map(|q| vec![q.id]).unwrap_or_default()
            }
            _ => self
                .qpus
                .iter()
                .map(|q| q.id)
                .filter(|&q| self.path(NodeId::Cpu(cpu), NodeId::Qpu(q)).is_ok())
                .collect(),
        }
    }
}

/// Structural checks; an empty list means the architecture is valid.
pub fn validate(arch: &Architecture) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |m: String| out.push(Violation(m));
    if arch.cpus.is_empty() {
        v("architecture has no CPUs".into());
    }
    if arch.qpus.is_empty() {
        v("architecture has no QPUs".into());
    }
    let mut ids = BTreeSet::new();
    for c in &arch.cpus {
        if !ids.insert(NodeId::Cpu(c.id)) {
            v(format!("duplicate node cpu.{}", c.id));
        }
        if !(c.instruction_rate > 0.0 && c.instruction_rate.is_finite()) {
            v(format!("cpu.{} instruction_rate must be > 0", c.id));
        }
    }
    for q in &arch.qpus {
        if !ids.insert(NodeId::Qpu(q.id)) {
            v(format!("duplicate node qpu.{}", q.id));
        }
        if q.register_size == 0 {
            v(format!("qpu.{} register size must be >= 1", q.id));
        }
    }
    if arch.has_switch() {
        ids.insert(NodeId::Switch);
    }
    for (i, l) in arch.classical_links.iter().enumerate() {
        for end in [l.a, l.b] {
            if !ids.contains(&end) {
                v(format!("classical link {i} references unknown node {end}"));
            }
        }
        if l.a == l.b {
            v(format!("classical link {i} is a self-loop on {}", l.a));
        }
        if l.bandwidth == 0 {
            v(format!("classical link {i} ({}-{}) bandwidth must be > 0", l.a, l.b));
        }
    }
    for (i, l) in arch.quantum_links.iter().enumerate() {
        match l.qpus() {
            None => v(format!("quantum link {i} ({}-{}) must join two QPUs", l.a, l.b)),
            Some((a, b)) => {
                if a == b {
                    v(format!("quantum link {i} is a self-loop on qpu.{a}"));
                }
                for q in [a, b] {
                    if arch.qpu(q).is_none() {
                        v(format!("quantum link {i} references unknown node qpu.{q}"));
                    }
                }
            }
        }
        if l.attempt_period == SimTime::ZERO {
            v(format!("quantum link {i} attempt_period must be > 0"));
        }
        if !(l.p_gen > 0.0 && l.p_gen <= 1.0) {
            v(format!("quantum link {i} p_gen {} outside (0, 1]", l.p_gen));
        }
    }

    // Connectivity over classical links.
    let nodes = arch.nodes();
    if let Some(&start) = nodes.first() {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for l in &arch.classical_links {
                if let Some(m) = l.other(n) {
                    if seen.insert(m) {
                        queue.push_back(m);
                    }
                }
            }
        }
        for n in &nodes {
            if !seen.contains(n) {
                v(format!("{n} is disconnected from {start}"));
            }
        }
    }

    match arch.kind {
        ArchKind::ClientServer if arch.entry_switch.is_none() => {
            v("client_server requires an entry switch".into());
        }
        ArchKind::SharedQpu if arch.qpus.len() != 1 => {
            v(format!("shared_qpu has exactly one QPU, got {}", arch.qpus.len()));
        }
        ArchKind::DedicatedAccelerator | ArchKind::InterconnectedAccelerator => {
            if arch.cpus.len() != arch.qpus.len() {
                v(format!(
                    "{} pairs CPUs and QPUs one to one, got {} CPUs and {} QPUs",
                    arch.kind,
                    arch.cpus.len(),
                    arch.qpus.len()
                ));
            } else {
                for c in &arch.cpus {
                    let paired = arch
                        .classical_links
                        .iter()
                        .any(|l| l.connects(NodeId::Cpu(c.id), NodeId::Qpu(c.id)));
                    if !paired {
                        v(format!("cpu.{0} has no link to its paired qpu.{0}", c.id));
                    }
                }
            }
            if arch.kind == ArchKind::DedicatedAccelerator && !arch.quantum_links.is_empty() {
                v("dedicated_accelerator has no quantum links".into());
            }
        }
        _ => {}
    }
    if arch.entry_switch.is_some_and(|s| s.service_time == SimTime::ZERO) {
        v("switch service_time must be > 0".into());
    }
    out
}
