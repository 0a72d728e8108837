//! Declarative scenario files: parsing, resolution and cross-reference checks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{OffloadPolicy, QueueEstimator};
use crate::entmgr::{RefreshPolicy, StarvationPolicy};
use crate::faults::FaultModel;
use crate::metrics::OutputFormat;
use crate::qram::{decode, IsaDefinition, IsaFile, Placeholder, DEFAULT_STATE_VECTOR_CAP};
use crate::rng::RngStream;
use crate::sim::SimTime;
use crate::topology::{
    build_architecture, validate, ArchKind, Architecture, BuildParams, ClassicalLink, CpuNode, EntrySwitch, LinkParams,
    NodeId, QpuNode, QuantumLink, QuantumLinkParams,
};
use crate::workload::{self, generate, Job, WorkloadSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("scenario parse error at line {line}, column {column}, field `{field}`: {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("scenario invalid:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<String>),
}

fn default_one() -> u32 {
    1
}

fn default_rate() -> f64 {
    1e9
}

fn default_link() -> LinkParams {
    LinkParams {
        latency_ns: 1_000,
        bandwidth_bytes_per_s: 1_000_000_000,
    }
}

fn default_cap() -> u32 {
    DEFAULT_STATE_VECTOR_CAP
}

fn default_lookahead() -> u64 {
    1_000_000
}

fn default_timeout() -> u64 {
    1_000_000_000
}

fn default_attempts() -> u32 {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub kind: ArchKind,
    #[serde(default = "default_one")]
    pub cpus: u32,
    #[serde(default = "default_one")]
    pub qpus: u32,
    #[serde(default = "default_one")]
    pub qubits_per_qpu: u32,
    #[serde(default = "default_rate")]
    pub cpu_instruction_rate: f64,
    #[serde(default)]
    pub controller_latency_ns: u64,
    #[serde(default = "default_link")]
    pub access_link: LinkParams,
    #[serde(default = "default_link")]
    pub qpu_link: LinkParams,
    #[serde(default = "default_link")]
    pub cpu_link: LinkParams,
    #[serde(default = "default_link")]
    pub side_channel_link: LinkParams,
    #[serde(default)]
    pub quantum_link: Option<QuantumLinkParams>,
    #[serde(default)]
    pub switch: Option<EntrySwitch>,
    /// Explicit graph for `custom`; counts above are ignored.
    #[serde(default)]
    pub custom: Option<CustomGraph>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomGraph {
    pub cpus: Vec<CustomCpu>,
    pub qpus: Vec<CustomQpu>,
    pub classical_links: Vec<CustomLink>,
    #[serde(default)]
    pub quantum_links: Vec<CustomQuantumLink>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomCpu {
    pub id: u32,
    #[serde(default = "default_rate")]
    pub instruction_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomQpu {
    pub id: u32,
    pub register_size: u32,
    #[serde(default)]
    pub controller_latency_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomLink {
    pub a: NodeId,
    pub b: NodeId,
    pub latency_ns: u64,
    pub bandwidth_bytes_per_s: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomQuantumLink {
    pub a: NodeId,
    pub b: NodeId,
    pub attempt_period_ns: u64,
    pub p_gen: f64,
    pub pair_lifetime_ns: u64,
}

/// An ISA given as a file path (relative to the scenario) or inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IsaRef {
    Path(String),
    Inline(IsaFile),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    TimingOnly,
    StateVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterSpec {
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default = "default_cap")]
    pub state_vector_cap: u32,
    #[serde(default)]
    pub placeholder: Placeholder,
    /// Attempts allowed per requested shot before the job fails.
    #[serde(default = "default_attempts")]
    pub attempts_per_shot: u32,
}

impl Default for RegisterSpec {
    fn default() -> Self {
        RegisterSpec {
            backend: BackendKind::default(),
            state_vector_cap: default_cap(),
            placeholder: Placeholder::default(),
            attempts_per_shot: default_attempts(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSource {
    Spec(WorkloadSpec),
    /// Path to a trace file, relative to the scenario.
    Trace(String),
    Jobs(Vec<Job>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferChoice {
    #[default]
    Teleportation,
    DirectTransmission,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntanglementSpec {
    #[serde(default)]
    pub policy: RefreshPolicy,
    #[serde(default)]
    pub starvation: StarvationPolicy,
    #[serde(default)]
    pub ec_duty_cycle: f64,
    /// Just-in-time generation only anticipates teleports due within this window.
    #[serde(default = "default_lookahead")]
    pub lookahead_ns: u64,
    /// Deadline on each pair request, relative to the request.
    #[serde(default)]
    pub pair_deadline_ns: Option<u64>,
    #[serde(default)]
    pub correction_ns: u64,
    #[serde(default)]
    pub transfer: TransferChoice,
    /// Swap into the destination register after a direct transmission.
    #[serde(default)]
    pub swap_ns: u64,
}

impl Default for EntanglementSpec {
    fn default() -> Self {
        EntanglementSpec {
            policy: RefreshPolicy::default(),
            starvation: StarvationPolicy::default(),
            ec_duty_cycle: 0.0,
            lookahead_ns: default_lookahead(),
            pair_deadline_ns: None,
            correction_ns: 0,
            transfer: TransferChoice::default(),
            swap_ns: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispatchSpec {
    #[serde(default)]
    pub offload_policy: OffloadPolicy,
    #[serde(default)]
    pub queue_estimator: QueueEstimator,
    /// Input fragments must arrive within this window after submission.
    #[serde(default = "default_timeout")]
    pub fragment_timeout_ns: u64,
}

impl Default for DispatchSpec {
    fn default() -> Self {
        DispatchSpec {
            offload_policy: OffloadPolicy::default(),
            queue_estimator: QueueEstimator::default(),
            fragment_timeout_ns: default_timeout(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub event_log: bool,
    /// Check entanglement conservation after every event.
    #[serde(default)]
    pub audit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub horizon_ns: u64,
    pub architecture: ArchitectureSpec,
    pub isa: IsaRef,
    /// Per-QPU ISA overrides keyed by QPU id.
    #[serde(default)]
    pub qpu_isa: BTreeMap<u32, IsaRef>,
    #[serde(default)]
    pub register: RegisterSpec,
    pub workload: WorkloadSource,
    #[serde(default)]
    pub entanglement: EntanglementSpec,
    #[serde(default)]
    pub faults: FaultModel,
    #[serde(default)]
    pub dispatch: DispatchSpec,
    #[serde(default)]
    pub output: OutputSpec,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Everything a run needs, built from a checked scenario.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub arch: Architecture,
    pub jobs: Vec<Job>,
}

fn parse_error(e: serde_path_to_error::Error<serde_json::Error>) -> ScenarioError {
    let field = e.path().to_string();
    let inner = e.into_inner();
    ScenarioError::Parse {
        line: inner.line(),
        column: inner.column(),
        field,
        message: inner.to_string(),
    }
}

impl Scenario {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut s: Scenario = serde_path_to_error::deserialize(de).map_err(parse_error)?;
        s.base_dir = base_dir.into();
        Ok(s)
    }

    pub fn from_value(value: serde_json::Value, base_dir: impl Into<PathBuf>) -> Result<Self, ScenarioError> {
        let text = serde_json::to_string(&value).expect("value serializes");
        Self::from_json(&text, base_dir)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn horizon(&self) -> SimTime {
        SimTime(self.horizon_ns)
    }

    fn path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn load_isa(&self, r: &IsaRef) -> Result<IsaDefinition, String> {
        let isa = match r {
            IsaRef::Path(p) => IsaDefinition::load(self.path(p)),
            IsaRef::Inline(f) => IsaDefinition::from_file_spec(f),
        }
        .map_err(|e| e.to_string())?;
        Ok(match self.faults.gate_error_prob {
            Some(p) => isa.with_error_override(p),
            None => isa,
        })
    }

    fn build(&self, isas: &[Arc<IsaDefinition>], out: &mut Vec<String>) -> Option<Architecture> {
        let a = &self.architecture;
        let arch = if a.kind == ArchKind::Custom {
            let Some(g) = &a.custom else {
                out.push("architecture kind `custom` needs a `custom` graph".into());
                return None;
            };
            for (i, q) in g.qpus.iter().enumerate() {
                if q.id as usize != i {
                    out.push(format!(
                        "custom qpus must be listed with ids 0..{} in order",
                        g.qpus.len()
                    ));
                    return None;
                }
            }
            for (i, c) in g.cpus.iter().enumerate() {
                if c.id as usize != i {
                    out.push(format!(
                        "custom cpus must be listed with ids 0..{} in order",
                        g.cpus.len()
                    ));
                    return None;
                }
            }
            Architecture {
                kind: ArchKind::Custom,
                cpus: g
                    .cpus
                    .iter()
                    .map(|c| CpuNode {
                        id: c.id,
                        instruction_rate: c.instruction_rate,
                    })
                    .collect(),
                qpus: g
                    .qpus
                    .iter()
                    .map(|q| QpuNode {
                        id: q.id,
                        register_size: q.register_size,
                        isa: isas.get(q.id as usize).cloned().unwrap_or_else(|| isas[0].clone()),
                        controller_latency: SimTime(q.controller_latency_ns),
                    })
                    .collect(),
                classical_links: g
                    .classical_links
                    .iter()
                    .map(|l| ClassicalLink {
                        a: l.a,
                        b: l.b,
                        latency: SimTime(l.latency_ns),
                        bandwidth: l.bandwidth_bytes_per_s,
                    })
                    .collect(),
                quantum_links: g
                    .quantum_links
                    .iter()
                    .map(|l| QuantumLink {
                        a: l.a,
                        b: l.b,
                        attempt_period: SimTime(l.attempt_period_ns),
                        p_gen: l.p_gen,
                        pair_lifetime: SimTime(l.pair_lifetime_ns),
                    })
                    .collect(),
                entry_switch: a.switch,
            }
        } else {
            let params = BuildParams {
                cpus: a.cpus,
                qpus: a.qpus,
                qubits_per_qpu: a.qubits_per_qpu,
                cpu_instruction_rate: a.cpu_instruction_rate,
                controller_latency: SimTime(a.controller_latency_ns),
                access_link: a.access_link,
                qpu_link: a.qpu_link,
                cpu_link: a.cpu_link,
                side_channel_link: a.side_channel_link,
                quantum_link: a.quantum_link,
                switch: a.switch,
            };
            match build_architecture(a.kind, &params, isas[0].clone()) {
                Ok(mut arch) => {
                    for q in &mut arch.qpus {
                        if let Some(isa) = isas.get(q.id as usize) {
                            q.isa = isa.clone();
                        }
                    }
                    arch
                }
                Err(e) => {
                    out.push(e.to_string());
                    return None;
                }
            }
        };
        out.extend(validate(&arch).into_iter().map(|v| v.0));
        Some(arch)
    }

    fn qpu_count(&self) -> u32 {
        match (&self.architecture.kind, &self.architecture.custom) {
            (ArchKind::Custom, Some(g)) => g.qpus.len() as u32,
            _ => self.architecture.qpus,
        }
    }

    fn cpu_count(&self) -> u32 {
        match (&self.architecture.kind, &self.architecture.custom) {
            (ArchKind::Custom, Some(g)) => g.cpus.len() as u32,
            _ => self.architecture.cpus,
        }
    }

    /// Builds the architecture and job list, collecting every violation.
    pub fn resolve(&self) -> Result<Resolved, ScenarioError> {
        let mut out = Vec::new();
        let base = match self.load_isa(&self.isa) {
            Ok(isa) => Arc::new(isa),
            Err(e) => return Err(ScenarioError::Invalid(vec![e])),
        };
        let mut isas = vec![base.clone(); self.qpu_count().max(1) as usize];
        for (&q, r) in &self.qpu_isa {
            match (isas.get_mut(q as usize), self.load_isa(r)) {
                (Some(slot), Ok(isa)) => *slot = Arc::new(isa),
                (None, _) => out.push(format!("qpu_isa references unknown qpu.{q}")),
                (_, Err(e)) => out.push(format!("qpu_isa for qpu.{q}: {e}")),
            }
        }

        if let Err(e) = self.faults.check() {
            out.push(e.to_string());
        }
        let e = &self.entanglement;
        if !(0.0..=1.0).contains(&e.ec_duty_cycle) {
            out.push(format!("entanglement.ec_duty_cycle {} outside [0, 1]", e.ec_duty_cycle));
        }
        if let RefreshPolicy::Pooled { target_pool_size } = e.policy {
            if target_pool_size == 0 {
                out.push("entanglement.policy pooled needs target_pool_size >= 1".into());
            }
        }
        if self.register.attempts_per_shot == 0 {
            out.push("register.attempts_per_shot must be >= 1".into());
        }
        if self.register.backend == BackendKind::StateVector {
            if self.register.state_vector_cap > 24 {
                out.push(format!(
                    "register.state_vector_cap {} exceeds 24",
                    self.register.state_vector_cap
                ));
            }
            for isa in &isas {
                for g in isa.primitives() {
                    if g.unitary.is_none() {
                        out.push(format!(
                            "state_vector backend needs a unitary for gate `{}` of ISA `{}`",
                            g.name,
                            isa.name()
                        ));
                    }
                }
            }
        }

        let arch = self.build(&isas, &mut out);

        let jobs = match &self.workload {
            WorkloadSource::Spec(spec) => {
                for isa in &isas {
                    if let Err(e) = spec.check(isa) {
                        out.push(e.to_string());
                    }
                }
                if out.is_empty() {
                    let mut rng = RngStream::new(self.seed, "workload");
                    match generate(spec, &isas[0], self.cpu_count(), self.horizon(), &mut rng) {
                        Ok(j) => j,
                        Err(e) => {
                            out.push(e.to_string());
                            Vec::new()
                        }
                    }
                } else {
                    Vec::new()
                }
            }
            WorkloadSource::Trace(p) => match workload::load_trace(self.path(p)) {
                Ok(j) => j,
                Err(e) => {
                    out.push(e.to_string());
                    Vec::new()
                }
            },
            WorkloadSource::Jobs(j) => j.clone(),
        };

        if let Some(arch) = &arch {
            check_jobs(arch, &jobs, &mut out);
        }
        match arch {
            Some(arch) if out.is_empty() => Ok(Resolved { arch, jobs }),
            _ => Err(ScenarioError::Invalid(out)),
        }
    }

    /// Violations found without running; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        match self.resolve() {
            Ok(_) => Vec::new(),
            Err(ScenarioError::Invalid(v)) => v,
            Err(e) => vec![e.to_string()],
        }
    }
}

/// Cross-references between jobs and the architecture. Violations repeated
/// across jobs are reported once.
fn check_jobs(arch: &Architecture, jobs: &[Job], out: &mut Vec<String>) {
    let mut seen = std::collections::BTreeSet::new();
    let mut push = |m: String| {
        if seen.insert(m.clone()) {
            out.push(m);
        }
    };
    let mut ids = std::collections::BTreeSet::new();
    for job in jobs {
        let ctx = format!("job {}", job.id);
        if !ids.insert(job.id) {
            push(format!("{ctx}: duplicate job id"));
        }
        if job.t_classical_ns == SimTime::ZERO {
            push(format!("{ctx}: t_classical must be > 0"));
        }
        if arch.cpu(job.origin).is_none() {
            push(format!("{ctx}: origin cpu.{} not in architecture", job.origin));
            continue;
        }
        for f in &job.fragments {
            if arch.cpu(*f).is_none() {
                push(format!("{ctx}: fragment source cpu.{f} not in architecture"));
            }
        }
        if !job.fragments.is_empty()
            && !matches!(
                arch.kind,
                ArchKind::SharedQpu | ArchKind::ClientServer | ArchKind::Custom
            )
        {
            push(format!(
                "input aggregation needs shared_qpu or client_server, architecture is {}",
                arch.kind
            ));
        }
        let partners = job.program.partners_required();
        if partners > 0 && arch.quantum_links.is_empty() {
            push(format!(
                "workload uses TELEPORT but architecture {} has no quantum links",
                arch.kind
            ));
        }
        for q in arch.reachable_qpus(job.origin) {
            let node = arch.qpu(q).expect("reachable");
            if let Err(e) = decode(&job.program, &node.isa) {
                push(format!("{ctx}: {e} (ISA `{}` on qpu.{q})", node.isa.name()));
            }
            if partners > 0 && !arch.quantum_links.is_empty() && (arch.quantum_neighbors(q).len() as u32) < partners {
                push(format!(
                    "{ctx}: needs {partners} partner QPUs, qpu.{q} has fewer quantum neighbours"
                ));
            }
        }
        if let Err(e) = job.program.shots.resolve() {
            push(format!("{ctx}: {e}"));
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::TimingOnly => "timing_only",
            BackendKind::StateVector => "state_vector",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const ISA: &str = r#"{"name":"t","primitives":[
        {"name":"H","arity":1,"duration_ns":10,"unitary":[[[0.7071067811865476,0],[0.7071067811865476,0]],[[0.7071067811865476,0],[-0.7071067811865476,0]]]},
        {"name":"CX","arity":2,"duration_ns":20,"unitary":[[[1,0],[0,0],[0,0],[0,0]],[[0,0],[1,0],[0,0],[0,0]],[[0,0],[0,0],[0,0],[1,0]],[[0,0],[0,0],[1,0],[0,0]]]}],
        "instructions":[{"opcode":"H","arity":1,"expansion":["H"]},{"opcode":"CX","arity":2,"expansion":["CX"]}],
        "measure":{"duration_ns":5}}"#;

    fn scenario(kind: &str, extra: &str, shape: &str) -> String {
        format!(
            r#"{{"seed":1,"horizon_ns":1000000,
              "architecture":{{"kind":"{kind}","cpus":2,"qpus":2,"qubits_per_qpu":4{extra}}},
              "isa":{ISA},
              "workload":{{"spec":{{"arrivals":{{"poisson":{{"rate_per_s":10000}}}},
                 "programs":[{shape}],
                 "t_classical":{{"polynomial":{{"coeffs_ns":[1000]}}}}}}}}}}"#
        )
    }

    const PLAIN: &str = r#"{"qubits":[1,2],"instructions":[1,3],"opcodes":["H"],"shots":{"fixed":3}}"#;

    #[test]
    fn dedicated_is_valid() {
        let s = Scenario::from_json(&scenario("dedicated_accelerator", "", PLAIN), ".").unwrap();
        assert_eq!(s.validate(), Vec::<String>::new());
        let r = s.resolve().unwrap();
        assert!(!r.jobs.is_empty());
    }

    #[test]
    fn missing_opcode_named() {
        let shape = r#"{"qubits":[1,2],"instructions":[1,3],"opcodes":["FOO"],"shots":{"fixed":3}}"#;
        let s = Scenario::from_json(&scenario("dedicated_accelerator", "", shape), ".").unwrap();
        let v = s.validate();
        assert!(v.iter().any(|m| m.contains("FOO")), "{v:?}");
    }

    #[test]
    fn entangling_on_dedicated_rejected() {
        let shape = r#"{"qubits":[1,2],"instructions":[1,3],"opcodes":["H"],"teleports":1,"shots":{"fixed":3}}"#;
        let s = Scenario::from_json(&scenario("dedicated_accelerator", "", shape), ".").unwrap();
        let v = s.validate();
        assert!(v.iter().any(|m| m.contains("no quantum links")), "{v:?}");
    }

    #[test]
    fn parse_error_names_field_and_line() {
        let text = scenario("dedicated_accelerator", "", PLAIN).replace("\"seed\":1", "\"seed\":\"x\"");
        match Scenario::from_json(&text, ".") {
            Err(ScenarioError::Parse { line, field, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(field, "seed");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let text = scenario("dedicated_accelerator", ",\"bogus\":1", PLAIN);
        assert!(matches!(
            Scenario::from_json(&text, "."),
            Err(ScenarioError::Parse { .. })
        ));
    }

    #[test]
    fn client_server_without_switch() {
        let s = Scenario::from_json(&scenario("client_server", "", PLAIN), ".").unwrap();
        assert!(s.validate().iter().any(|m| m.contains("switch")));
    }

    #[test]
    fn state_vector_needs_unitaries() {
        let text = scenario("dedicated_accelerator", "", PLAIN)
            .replace("\"isa\":", "\"register\":{\"backend\":\"state_vector\"},\"isa\":");
        let s = Scenario::from_json(&text, ".").unwrap();
        assert!(s.validate().is_empty());
        let no_unitary = text.replace(r#","unitary":[[[0.7071067811865476,0],[0.7071067811865476,0]],[[0.7071067811865476,0],[-0.7071067811865476,0]]]"#, "");
        let s = Scenario::from_json(&no_unitary, ".").unwrap();
        assert!(s.validate().iter().any(|m| m.contains("unitary for gate `H`")));
    }

    #[test]
    fn custom_graph() {
        let extra = r#","custom":{"cpus":[{"id":0}],"qpus":[{"id":0,"register_size":4},{"id":1,"register_size":4}],
            "classical_links":[{"a":"cpu.0","b":"switch","latency_ns":10,"bandwidth_bytes_per_s":1000000000},
                               {"a":"switch","b":"qpu.0","latency_ns":10,"bandwidth_bytes_per_s":1000000000},
                               {"a":"switch","b":"qpu.1","latency_ns":10,"bandwidth_bytes_per_s":1000000000}],
            "quantum_links":[{"a":"qpu.0","b":"qpu.1","attempt_period_ns":100,"p_gen":0.5,"pair_lifetime_ns":10000}]},
            "switch":{"service_time_ns":100}"#;
        let s = Scenario::from_json(&scenario("custom", extra, PLAIN), ".").unwrap();
        assert_eq!(s.validate(), Vec::<String>::new());
        let r = s.resolve().unwrap();
        assert!(r.jobs.iter().all(|j| j.origin == 0));
        assert_eq!(r.arch.quantum_links.len(), 1);
    }
}
