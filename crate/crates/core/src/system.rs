//! The simulated machine: jobs flow through CPUs, the entry switch, QPU
//! controllers and queues, quantum links and the fault injector.

use std::borrow::Cow;
use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::comm::{self, direct_transmit, send_over_path, MessageKind, QuantumPayload, RegisterSlots, TransferStatus};
use crate::dispatch::{path_time, Choice, CostInputs, Dispatcher, OffloadDecision, QpuLoad};
use crate::entmgr::{idle_ec_cost, EntanglementManager, Fulfilled, PairId, PairRequest, RequestOutcome, TicketId};
use crate::faults::{cascade, inject_failures, EntanglementGraph};
use crate::metrics::{JobReport, JobStatus, LinkReport, MetricsReport, QpuAccumulator, Stats, SystemReport};
use crate::qram::{decode, execute_with, Decoded, ExecOptions, ExecutionRecord, QuantumRegister, Segment, MEASURE};
use crate::rng::RngStream;
use crate::scenario::{BackendKind, Resolved, Scenario, TransferChoice};
use crate::sim::{ComponentId, Engine, EventPayload, SimError, SimTime};
use crate::topology::{Architecture, NodeId, RoutingPolicy};

#[derive(Debug, Error, PartialEq)]
pub enum RunError {
    #[error("simulation bug: {0}")]
    Sim(#[from] SimError),
    #[error("audit failed at {at}: {message}")]
    Audit { at: SimTime, message: String },
}

#[derive(Clone, Debug, PartialEq)]
enum Ev {
    Arrival(usize),
    CpuDone(u32),
    AtSwitch(usize),
    SwitchDone,
    Submitted(usize),
    Fragment(usize),
    FragmentTimeout(usize),
    Enqueue(usize),
    Phase { qpu: u32, token: u64 },
    ResultBack(usize),
    PairAttempt(usize),
    GenWake(usize),
    PairExpiry,
    PairDeadline(TicketId),
    Failure(u32),
    Repaired(u32),
    Trace(String),
}

impl EventPayload for Ev {
    fn kind(&self) -> Cow<'static, str> {
        Cow::Borrowed(match self {
            Ev::Arrival(_) => "job_arrival",
            Ev::CpuDone(_) => "cpu_task_done",
            Ev::AtSwitch(_) => "switch_arrival",
            Ev::SwitchDone => "switch_forward",
            Ev::Submitted(_) => "submit_delivered",
            Ev::Fragment(_) => "fragment_delivered",
            Ev::FragmentTimeout(_) => "fragment_timeout",
            Ev::Enqueue(_) => "qpu_enqueue",
            Ev::Phase { .. } => "qpu_phase_done",
            Ev::ResultBack(_) => "result_delivered",
            Ev::PairAttempt(_) => "pair_attempt",
            Ev::GenWake(_) => "generation_wake",
            Ev::PairExpiry => "pair_expiry",
            Ev::PairDeadline(_) => "pair_deadline",
            Ev::Failure(_) => "qpu_failure",
            Ev::Repaired(_) => "qpu_repaired",
            Ev::Trace(s) => return Cow::Owned(s.clone()),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Task {
    Classical,
    Pre,
    Post,
}

#[derive(Default)]
struct Cpu {
    queue: VecDeque<(usize, Task)>,
    busy: Option<(usize, Task)>,
}

#[derive(Default)]
struct Switch {
    queue: VecDeque<usize>,
    busy: Option<usize>,
    busy_until: SimTime,
    forwarded: u64,
    first_arrival: Option<SimTime>,
    last_departure: Option<SimTime>,
}

struct Running {
    job: usize,
    started: SimTime,
    record: ExecutionRecord,
    segments: Vec<Segment>,
    seg: usize,
    shot: u32,
    waiting: Option<TicketId>,
    restarts: u64,
}

struct Qpu {
    queue: VecDeque<(usize, SimTime)>,
    running: Option<Running>,
    token: u64,
    up: bool,
    acc: QpuAccumulator,
    assigned: u32,
    committed: SimTime,
    service: Stats,
    last_account: SimTime,
    rng: RngStream,
}

#[derive(Clone, Debug, PartialEq)]
enum Status {
    Pending,
    Done,
    Failed(String),
}

struct JobState {
    decision: Option<OffloadDecision>,
    qpu: Option<u32>,
    partners: Vec<u32>,
    status: Status,
    predicted_service: SimTime,
    submit_sent: SimTime,
    after_switch: Vec<usize>,
    primary_at: Option<SimTime>,
    fragment_at: Vec<SimTime>,
    arrived: usize,
    completion: Option<SimTime>,
    shots: Option<u32>,
    attempts: Option<u32>,
}

struct World<'a> {
    sc: &'a Scenario,
    arch: Architecture,
    jobs: Vec<crate::workload::Job>,
    state: Vec<JobState>,
    by_id: BTreeMap<u64, usize>,
    cpus: Vec<Cpu>,
    switch: Switch,
    qpus: Vec<Qpu>,
    mgr: EntanglementManager,
    gen_active: Vec<bool>,
    wake_at: Vec<Option<SimTime>>,
    gen_rng: Vec<RngStream>,
    carrier_rng: Vec<RngStream>,
    link_failures: Vec<u64>,
    cascade_rng: RngStream,
    dispatcher: Dispatcher,
    sys: SystemReport,
    next_expiry: Option<SimTime>,
}

type Eng = Engine<Ev>;

/// Result of one run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub event_log: Option<String>,
}

/// Resolves and runs `scenario` to its horizon.
pub fn simulate(scenario: &Scenario) -> Result<RunOutput, crate::Error> {
    let resolved = scenario.resolve()?;
    Ok(run(scenario, resolved)?)
}

/// Runs an already resolved scenario.
pub fn run(sc: &Scenario, resolved: Resolved) -> Result<RunOutput, RunError> {
    let mut eng: Eng = Engine::new().with_event_log(sc.output.event_log);
    let mut w = World::new(sc, resolved);
    w.start(&mut eng)?;
    let audit = sc.output.audit;
    let summary = eng.run_until(sc.horizon(), |eng, ev| {
        w.account(eng.now());
        w.handle(eng, ev.payload)?;
        if audit {
            let check = w.mgr.check_conservation().and_then(|_| w.mgr.audit());
            if let Err(message) = check {
                return Err(RunError::Audit { at: eng.now(), message });
            }
        }
        Ok(())
    })?;
    w.account(summary.clock);
    let report = w.report(summary.clock, eng.events_processed());
    Ok(RunOutput {
        report,
        event_log: eng.take_event_log(),
    })
}

fn qpu_target(q: u32) -> ComponentId {
    ComponentId::Qpu(q)
}

impl<'a> World<'a> {
    fn new(sc: &'a Scenario, r: Resolved) -> Self {
        let arch = r.arch;
        let links = arch.quantum_links.clone();
        let nlinks = links.len();
        let state = r
            .jobs
            .iter()
            .map(|_| JobState {
                decision: None,
                qpu: None,
                partners: Vec::new(),
                status: Status::Pending,
                predicted_service: SimTime::ZERO,
                submit_sent: SimTime::ZERO,
                after_switch: Vec::new(),
                primary_at: None,
                fragment_at: Vec::new(),
                arrived: 0,
                completion: None,
                shots: None,
                attempts: None,
            })
            .collect();
        let routing = arch.entry_switch.map(|s| s.policy).unwrap_or(RoutingPolicy::RoundRobin);
        World {
            sc,
            by_id: r.jobs.iter().enumerate().map(|(i, j)| (j.id, i)).collect(),
            jobs: r.jobs,
            state,
            cpus: arch.cpus.iter().map(|_| Cpu::default()).collect(),
            switch: Switch::default(),
            qpus: arch
                .qpus
                .iter()
                .map(|q| Qpu {
                    queue: VecDeque::new(),
                    running: None,
                    token: 0,
                    up: true,
                    acc: QpuAccumulator::default(),
                    assigned: 0,
                    committed: SimTime::ZERO,
                    service: Stats::default(),
                    last_account: SimTime::ZERO,
                    rng: RngStream::new(sc.seed, format!("qpu.{}.exec", q.id)),
                })
                .collect(),
            mgr: EntanglementManager::new(links, sc.entanglement.policy, sc.entanglement.starvation),
            gen_active: vec![false; nlinks],
            wake_at: vec![None; nlinks],
            gen_rng: (0..nlinks)
                .map(|l| RngStream::new(sc.seed, format!("qlink.{l}.gen")))
                .collect(),
            carrier_rng: (0..nlinks)
                .map(|l| RngStream::new(sc.seed, format!("qlink.{l}.carrier")))
                .collect(),
            link_failures: vec![0; nlinks],
            cascade_rng: RngStream::new(sc.seed, "faults.cascade"),
            dispatcher: Dispatcher::new(sc.dispatch.offload_policy, routing),
            sys: SystemReport::default(),
            next_expiry: None,
            arch,
        }
    }

    fn start(&mut self, eng: &mut Eng) -> Result<(), RunError> {
        for (i, j) in self.jobs.iter().enumerate() {
            eng.schedule(j.arrival_ns, ComponentId::Workload, Ev::Arrival(i))?;
        }
        let ids: Vec<u32> = self.arch.qpus.iter().map(|q| q.id).collect();
        for (t, q) in inject_failures(&self.sc.faults, &ids, self.sc.horizon(), self.sc.seed) {
            eng.schedule(t, ComponentId::Faults, Ev::Failure(q))?;
        }
        for l in 0..self.gen_active.len() {
            self.ensure_generation(eng, l);
        }
        Ok(())
    }

    /// Charges busy time and idle error correction up to `now`.
    fn account(&mut self, now: SimTime) {
        let duty = self.sc.entanglement.ec_duty_cycle;
        for (i, q) in self.qpus.iter_mut().enumerate() {
            let dt = now - q.last_account;
            if dt > SimTime::ZERO {
                if q.running.is_some() {
                    q.acc.busy += dt;
                } else if q.up && duty > 0.0 {
                    q.acc.ec_charge += idle_ec_cost(duty, dt, self.mgr.live_at(i as u32) > 0);
                }
            }
            q.last_account = now;
        }
    }

    fn handle(&mut self, eng: &mut Eng, ev: Ev) -> Result<(), RunError> {
        match ev {
            Ev::Arrival(j) => self.arrival(eng, j),
            Ev::CpuDone(c) => self.cpu_done(eng, c),
            Ev::AtSwitch(j) => {
                let now = eng.now();
                self.switch.first_arrival.get_or_insert(now);
                self.switch.queue.push_back(j);
                self.switch_next(eng);
                Ok(())
            }
            Ev::SwitchDone => self.switch_done(eng),
            Ev::Submitted(j) | Ev::Fragment(j) => self.input_arrived(eng, j),
            Ev::FragmentTimeout(j) => {
                let st = &self.state[j];
                let deadline = st
                    .submit_sent
                    .saturating_add(SimTime(self.sc.dispatch.fragment_timeout_ns));
                let late = |t: &SimTime| *t > deadline;
                let complete = st.primary_at.is_some_and(|t| !late(&t))
                    && st.fragment_at.len() == self.jobs[j].fragments.len()
                    && !st.fragment_at.iter().any(late);
                if st.status == Status::Pending && !complete && st.arrived <= self.jobs[j].fragments.len() {
                    self.fail_job(eng, j, format!("input fragments incomplete at {deadline}"));
                }
                Ok(())
            }
            Ev::Enqueue(j) => {
                if self.state[j].status == Status::Pending {
                    let q = self.state[j].qpu.expect("offloaded job");
                    self.qpus[q as usize].queue.push_back((j, eng.now()));
                    self.try_start(eng, q)?;
                }
                Ok(())
            }
            Ev::Phase { qpu, token } => {
                if self.qpus[qpu as usize].token == token && self.qpus[qpu as usize].running.is_some() {
                    self.advance(eng, qpu)?;
                }
                Ok(())
            }
            Ev::ResultBack(j) => {
                if self.state[j].status == Status::Pending {
                    let origin = self.jobs[j].origin;
                    self.cpu_push(eng, origin, j, Task::Post);
                }
                Ok(())
            }
            Ev::PairAttempt(l) => self.pair_attempt(eng, l),
            Ev::GenWake(l) => {
                if self.wake_at[l] == Some(eng.now()) {
                    self.wake_at[l] = None;
                }
                self.ensure_generation(eng, l);
                Ok(())
            }
            Ev::PairExpiry => {
                let now = eng.now();
                if self.next_expiry == Some(now) {
                    self.next_expiry = None;
                }
                let expired = self.mgr.expire_sweep(now);
                let mut links: Vec<usize> = expired.iter().map(|e| e.link).collect();
                links.dedup();
                for l in links {
                    self.ensure_generation(eng, l);
                }
                self.schedule_expiry(eng)?;
                Ok(())
            }
            Ev::PairDeadline(ticket) => {
                if let Some(t) = self.mgr.ticket_deadline(ticket) {
                    if let Some(&j) = self.by_id.get(&t.requester) {
                        self.fail_job(eng, j, "communication failure: pair request deadline passed".into());
                    }
                }
                Ok(())
            }
            Ev::Failure(q) => self.failure(eng, q),
            Ev::Repaired(q) => {
                self.qpus[q as usize].up = true;
                for l in 0..self.gen_active.len() {
                    self.ensure_generation(eng, l);
                }
                self.try_start(eng, q)
            }
            Ev::Trace(_) => Ok(()),
        }
    }

    // ---- dispatch -------------------------------------------------------

    fn loads(&self, now: SimTime, candidates: &[u32]) -> Vec<(u32, QpuLoad)> {
        candidates
            .iter()
            .map(|&q| {
                let s = &self.qpus[q as usize];
                let elapsed = s.running.as_ref().map_or(SimTime::ZERO, |r| now - r.started);
                (
                    q,
                    QpuLoad {
                        jobs: s.assigned,
                        outstanding: s.committed.saturating_sub(elapsed),
                        mean_service: s.service.mean().map(|m| SimTime(m.round() as u64)),
                    },
                )
            })
            .collect()
    }

    fn switch_backlog(&self, now: SimTime) -> SimTime {
        let Some(sw) = self.arch.entry_switch else {
            return SimTime::ZERO;
        };
        let residual = if self.switch.busy.is_some() {
            self.switch.busy_until.saturating_sub(now)
        } else {
            SimTime::ZERO
        };
        residual + sw.service_time * self.switch.queue.len() as u64
    }

    fn arrival(&mut self, eng: &mut Eng, j: usize) -> Result<(), RunError> {
        let now = eng.now();
        let job = &self.jobs[j];
        let mut fits_any = false;
        let mut candidates = Vec::new();
        for q in self.arch.reachable_qpus(job.origin) {
            let node = self.arch.qpu(q).expect("reachable");
            let Ok(d) = decode(&job.program, &node.isa) else {
                continue;
            };
            if d.qubits_required().max(job.qubits_required) <= node.register_size {
                fits_any = true;
                if self.qpus[q as usize].up {
                    candidates.push(q);
                }
            }
        }
        if !fits_any {
            self.sys.unschedulable += 1;
        }
        let loads = self.loads(now, &candidates);
        let isa = match self.dispatcher.router.peek(&loads) {
            Some(q) => self.arch.qpu(q).expect("candidate").isa.clone(),
            None => self.arch.qpus[0].isa.clone(),
        };
        let inputs = CostInputs {
            estimator: self.sc.dispatch.queue_estimator,
            correction: SimTime(self.sc.entanglement.correction_ns),
            switch_backlog: self.switch_backlog(now),
        };
        let decision = match self.dispatcher.decide(&self.arch, &isa, job, &loads, &inputs) {
            Ok(d) => d,
            Err(e) => {
                self.sys.scheduling_errors += 1;
                self.fail_job(eng, j, e.to_string());
                return Ok(());
            }
        };
        if decision.forced {
            self.sys.forced_classical += 1;
        }
        match decision.choice {
            Choice::RunClassical => {
                self.sys.run_classical += 1;
                let origin = job.origin;
                self.state[j].decision = Some(decision);
                self.cpu_push(eng, origin, j, Task::Classical);
            }
            Choice::RunOnQpu(q) => {
                self.sys.offloaded += 1;
                let shots = job.program.shots.resolve().unwrap_or(1) as u64;
                let service = decode(&job.program, &isa)
                    .map(|d| d.shot_duration(&isa) * shots)
                    .unwrap_or_default();
                let s = &mut self.qpus[q as usize];
                s.assigned += 1;
                s.committed += service;
                let st = &mut self.state[j];
                st.qpu = Some(q);
                st.partners = decision.partners.clone();
                st.predicted_service = service;
                st.decision = Some(decision);
                self.anticipate(eng, j, q, now)?;
                let origin = self.jobs[j].origin;
                self.cpu_push(eng, origin, j, Task::Pre);
            }
        }
        Ok(())
    }

    /// Registers the first shot's teleports with the just-in-time policy.
    fn anticipate(&mut self, eng: &mut Eng, j: usize, q: u32, now: SimTime) -> Result<(), RunError> {
        if self.mgr.policy() != crate::entmgr::RefreshPolicy::JustInTime {
            return Ok(());
        }
        let st = &self.state[j];
        let Some(remote) = st.decision.as_ref().and_then(|d| d.predicted_remote) else {
            return Ok(());
        };
        let job = &self.jobs[j];
        let isa = self.arch.qpu(q).expect("chosen").isa.clone();
        let Ok(d) = decode(&job.program, &isa) else {
            return Ok(());
        };
        // Quantum work starts roughly when the remote estimate minus the
        // execution and return legs has elapsed.
        let shots = job.program.shots.resolve().unwrap_or(1) as u64;
        let result = path_time(&self.arch, NodeId::Qpu(q), NodeId::Cpu(job.origin), job.result_bytes)
            .map(|(t, _)| t)
            .unwrap_or_default();
        let cpu = self.arch.cpu(job.origin).expect("origin");
        let tail = d.shot_duration(&isa) * shots + result + cpu.op_time(job.postprocess_ops);
        let mut t = now + remote.saturating_sub(tail);
        for seg in d.segments(&isa) {
            match seg {
                Segment::Compute(c) => t += c,
                Segment::Teleport { qubits, partner } => {
                    let Some(&dst) = st.partners.get(partner as usize) else {
                        continue;
                    };
                    let Ok(link) = self.mgr.link_between(q, dst) else {
                        continue;
                    };
                    if t.saturating_sub(now) <= SimTime(self.sc.entanglement.lookahead_ns) {
                        let start = self.mgr.anticipate(link, job.id, t, qubits);
                        eng.schedule(start.max(now), ComponentId::QuantumLink(link as u32), Ev::GenWake(link))?;
                    }
                }
            }
        }
        Ok(())
    }

    // ---- CPUs ----------------------------------------------------------

    fn cpu_push(&mut self, eng: &mut Eng, cpu: u32, j: usize, task: Task) {
        self.cpus[cpu as usize].queue.push_back((j, task));
        self.cpu_next(eng, cpu);
    }

    fn cpu_next(&mut self, eng: &mut Eng, cpu: u32) {
        let c = &mut self.cpus[cpu as usize];
        if c.busy.is_some() {
            return;
        }
        let Some((j, task)) = c.queue.pop_front() else { return };
        c.busy = Some((j, task));
        let job = &self.jobs[j];
        let node = self.arch.cpu(cpu).expect("cpu exists");
        let d = match task {
            Task::Classical => job.t_classical_ns,
            Task::Pre => node.op_time(job.preprocess_ops),
            Task::Post => node.op_time(job.postprocess_ops),
        };
        eng.schedule_in(d, ComponentId::Cpu(cpu), Ev::CpuDone(cpu));
    }

    fn cpu_done(&mut self, eng: &mut Eng, cpu: u32) -> Result<(), RunError> {
        let (j, task) = self.cpus[cpu as usize].busy.take().expect("cpu was busy");
        if self.state[j].status == Status::Pending {
            match task {
                Task::Classical | Task::Post => self.complete(eng.now(), j),
                Task::Pre => self.submit(eng, j)?,
            }
        }
        self.cpu_next(eng, cpu);
        Ok(())
    }

    fn complete(&mut self, now: SimTime, j: usize) {
        let st = &mut self.state[j];
        st.status = Status::Done;
        st.completion = Some(now);
    }

    // ---- submission path -------------------------------------------------

    fn hop_links(&self, hops: &[usize]) -> Vec<crate::topology::ClassicalLink> {
        hops.iter().map(|&i| self.arch.classical_links[i]).collect()
    }

    fn submit(&mut self, eng: &mut Eng, j: usize) -> Result<(), RunError> {
        let now = eng.now();
        let q = self.state[j].qpu.expect("offloaded job");
        let job = &self.jobs[j];
        let (src, dst) = (NodeId::Cpu(job.origin), NodeId::Qpu(q));
        let hops = match self.arch.path(src, dst) {
            Ok(h) => h,
            Err(e) => {
                self.fail_job(eng, j, e.to_string());
                return Ok(());
            }
        };
        // Split the path at the entry switch, if it crosses one.
        let mut at = src;
        let mut split = None;
        for (k, &i) in hops.iter().enumerate() {
            at = self.arch.classical_links[i].other(at).expect("contiguous path");
            if at == NodeId::Switch && self.arch.entry_switch.is_some() {
                split = Some(k + 1);
                break;
            }
        }
        let bytes = job.submit_bytes;
        let st = &mut self.state[j];
        st.submit_sent = now;
        match split {
            Some(k) => {
                let t = send_over_path(
                    &self.hop_links(&hops[..k]),
                    src,
                    NodeId::Switch,
                    bytes,
                    MessageKind::ProgramSubmit,
                    now,
                )
                .expect("path checked");
                self.state[j].after_switch = hops[k..].to_vec();
                eng.schedule(t, ComponentId::Switch, Ev::AtSwitch(j))?;
            }
            None => {
                let t = send_over_path(&self.hop_links(&hops), src, dst, bytes, MessageKind::ProgramSubmit, now)
                    .expect("path checked");
                self.state[j].primary_at = Some(t);
                eng.schedule(t, qpu_target(q), Ev::Submitted(j))?;
            }
        }
        let job = &self.jobs[j];
        for &f in &job.fragments {
            match path_time(&self.arch, NodeId::Cpu(f), dst, job.submit_bytes) {
                Ok((t, _)) => {
                    self.state[j].fragment_at.push(now + t);
                    eng.schedule(now + t, qpu_target(q), Ev::Fragment(j))?;
                }
                Err(_) => {
                    // Never sent; the timeout fails the job.
                }
            }
        }
        if !job.fragments.is_empty() {
            let deadline = now.saturating_add(SimTime(self.sc.dispatch.fragment_timeout_ns));
            eng.schedule(deadline, qpu_target(q), Ev::FragmentTimeout(j))?;
        }
        Ok(())
    }

    fn switch_next(&mut self, eng: &mut Eng) {
        if self.switch.busy.is_some() {
            return;
        }
        let Some(j) = self.switch.queue.pop_front() else { return };
        let s = self.arch.entry_switch.expect("switch exists").service_time;
        self.switch.busy = Some(j);
        self.switch.busy_until = eng.now() + s;
        eng.schedule_in(s, ComponentId::Switch, Ev::SwitchDone);
    }

    fn switch_done(&mut self, eng: &mut Eng) -> Result<(), RunError> {
        let now = eng.now();
        let j = self.switch.busy.take().expect("switch was busy");
        self.switch.forwarded += 1;
        self.switch.last_departure = Some(now);
        if self.state[j].status == Status::Pending {
            let q = self.state[j].qpu.expect("offloaded job");
            let hops = std::mem::take(&mut self.state[j].after_switch);
            let t = send_over_path(
                &self.hop_links(&hops),
                NodeId::Switch,
                NodeId::Qpu(q),
                self.jobs[j].submit_bytes,
                MessageKind::ProgramSubmit,
                now,
            )
            .expect("path checked");
            self.state[j].primary_at = Some(t);
            eng.schedule(t, qpu_target(q), Ev::Submitted(j))?;
        }
        self.switch_next(eng);
        Ok(())
    }

    fn input_arrived(&mut self, eng: &mut Eng, j: usize) -> Result<(), RunError> {
        if self.state[j].status != Status::Pending {
            return Ok(());
        }
        let now = eng.now();
        let st = &mut self.state[j];
        st.arrived += 1;
        let expected = 1 + self.jobs[j].fragments.len();
        if st.arrived < expected {
            return Ok(());
        }
        let mut arrivals: Vec<Option<SimTime>> = vec![st.primary_at];
        arrivals.extend(st.fragment_at.iter().map(|&t| Some(t)));
        let timeout = SimTime(self.sc.dispatch.fragment_timeout_ns);
        let opened = st.submit_sent;
        let q = st.qpu.expect("offloaded job");
        if self.jobs[j].fragments.is_empty() {
            let c = self.arch.qpu(q).expect("qpu").controller_latency;
            eng.schedule(now + c, qpu_target(q), Ev::Enqueue(j))?;
            return Ok(());
        }
        match crate::dispatch::aggregate_inputs(&arrivals, opened, timeout) {
            Ok(start) => {
                debug_assert_eq!(start, now);
                let c = self.arch.qpu(q).expect("qpu").controller_latency;
                eng.schedule(start + c, qpu_target(q), Ev::Enqueue(j))?;
            }
            Err(e) => self.fail_job(eng, j, e.to_string()),
        }
        Ok(())
    }

    // ---- QPU execution ----------------------------------------------------

    fn try_start(&mut self, eng: &mut Eng, q: u32) -> Result<(), RunError> {
        loop {
            let s = &mut self.qpus[q as usize];
            if !s.up || s.running.is_some() {
                return Ok(());
            }
            let Some((j, enq)) = s.queue.pop_front() else {
                return Ok(());
            };
            if self.state[j].status != Status::Pending {
                continue;
            }
            let now = eng.now();
            s.acc.queue_wait.push((now - enq).as_nanos() as f64);
            let job = &self.jobs[j];
            let node = self.arch.qpu(q).expect("qpu");
            let isa = node.isa.clone();
            let decoded: Decoded = match decode(&job.program, &isa) {
                Ok(d) => d,
                Err(e) => {
                    self.fail_job(eng, j, e.to_string());
                    continue;
                }
            };
            let n = decoded.qubits_required();
            let reg = &self.sc.register;
            let mut register = match reg.backend {
                BackendKind::StateVector if n <= reg.state_vector_cap => {
                    QuantumRegister::state_vector(n, reg.state_vector_cap).expect("size checked")
                }
                _ => QuantumRegister::timing_only(n, reg.placeholder),
            };
            let opts = ExecOptions {
                attempts_per_shot: reg.attempts_per_shot,
            };
            let s = &mut self.qpus[q as usize];
            let record = match execute_with(&job.program, &mut register, &isa, &mut s.rng, opts) {
                Ok(r) => r,
                Err(e) => {
                    self.fail_job(eng, j, e.to_string());
                    continue;
                }
            };
            s.acc.jobs_started += 1;
            s.token += 1;
            let segments = if decoded.has_teleports() {
                decoded.segments(&isa)
            } else {
                vec![Segment::Compute(record.quantum_time)]
            };
            let st = &mut self.state[j];
            st.shots = Some(record.shots);
            st.attempts = Some(record.attempts);
            // Without transfers the whole run is one phase.
            let replays = if decoded.has_teleports() { record.attempts } else { 1 };
            s.running = Some(Running {
                job: j,
                started: now,
                record,
                segments,
                seg: 0,
                shot: replays,
                waiting: None,
                restarts: 0,
            });
            // `shot` counts down remaining replays.
            return self.advance(eng, q);
        }
    }

    /// Runs the segment machine of the job on `q` until it must wait.
    fn advance(&mut self, eng: &mut Eng, q: u32) -> Result<(), RunError> {
        let now = eng.now();
        let token = self.qpus[q as usize].token;
        let run = self.qpus[q as usize].running.as_mut().expect("running job");
        if run.seg == run.segments.len() {
            run.shot -= 1;
            run.seg = 0;
            if run.shot == 0 {
                return self.finish(eng, q);
            }
        }
        let seg = run.segments[run.seg];
        let j = run.job;
        match seg {
            Segment::Compute(d) => {
                run.seg += 1;
                eng.schedule(now + d, qpu_target(q), Ev::Phase { qpu: q, token })?;
            }
            Segment::Teleport { qubits, partner } => {
                let dst = self.state[j].partners[partner as usize];
                let link = match self.mgr.link_between(q, dst) {
                    Ok(l) => l,
                    Err(e) => {
                        self.fail_job(eng, j, e.to_string());
                        return Ok(());
                    }
                };
                match self.sc.entanglement.transfer {
                    TransferChoice::Teleportation => {
                        let deadline = self
                            .sc
                            .entanglement
                            .pair_deadline_ns
                            .map(|d| now.saturating_add(SimTime(d)));
                        let req = PairRequest {
                            requester: self.jobs[j].id,
                            endpoints: (q, dst),
                            count: qubits,
                            deadline,
                        };
                        match self.mgr.request_pairs(req, now) {
                            Ok(RequestOutcome::Reserved(pairs)) => self.teleport(eng, q, pairs)?,
                            Ok(RequestOutcome::Queued(ticket)) => {
                                self.qpus[q as usize].running.as_mut().expect("running").waiting = Some(ticket);
                                if let Some(d) = deadline {
                                    eng.schedule(d, ComponentId::QuantumLink(link as u32), Ev::PairDeadline(ticket))?;
                                }
                                self.ensure_generation(eng, link);
                            }
                            Err(e) => {
                                self.link_failures[link] += 1;
                                self.fail_job(eng, j, format!("communication failure: {e}"));
                            }
                        }
                    }
                    TransferChoice::DirectTransmission => self.direct(eng, q, dst, link, qubits)?,
                }
            }
        }
        Ok(())
    }

    fn teleport(&mut self, eng: &mut Eng, q: u32, pairs: Vec<PairId>) -> Result<(), RunError> {
        let now = eng.now();
        let token = self.qpus[q as usize].token;
        let run = self.qpus[q as usize].running.as_mut().expect("running job");
        let j = run.job;
        let Segment::Teleport { qubits, partner } = run.segments[run.seg] else {
            unreachable!("teleport outside a transfer segment")
        };
        run.waiting = None;
        let dst = self.state[j].partners[partner as usize];
        let hops = match self.arch.path(NodeId::Qpu(q), NodeId::Qpu(dst)) {
            Ok(h) => self.hop_links(&h),
            Err(e) => {
                self.fail_job(eng, j, e.to_string());
                return Ok(());
            }
        };
        let correction = SimTime(self.sc.entanglement.correction_ns);
        match comm::teleport(&mut self.mgr, &pairs, &hops, q, dst, qubits, correction, now) {
            Ok(rep) => {
                debug_assert!(rep.completes_at >= rep.side_channel_delivered);
                self.sys.transfers_completed += 1;
                let run = self.qpus[q as usize].running.as_mut().expect("running job");
                run.seg += 1;
                eng.schedule(rep.completes_at, qpu_target(q), Ev::Phase { qpu: q, token })?;
                let link = self.mgr.link_between(q, dst).expect("linked");
                self.ensure_generation(eng, link);
            }
            Err(e) => {
                if let Ok(l) = self.mgr.link_between(q, dst) {
                    self.link_failures[l] += 1;
                }
                self.fail_job(eng, j, format!("communication failure: {e}"));
            }
        }
        Ok(())
    }

    fn direct(&mut self, eng: &mut Eng, q: u32, dst: u32, link: usize, qubits: u32) -> Result<(), RunError> {
        let now = eng.now();
        let token = self.qpus[q as usize].token;
        let qlink = self.arch.quantum_links[link];
        let mut src = RegisterSlots::new(self.arch.qpus[q as usize].register_size);
        let mut dst_slots = RegisterSlots::new(self.arch.qpus[dst as usize].register_size);
        let slot = match src.store(QuantumPayload::new(qubits)) {
            Ok(s) => s,
            Err(e) => {
                let j = self.qpus[q as usize].running.as_ref().expect("running").job;
                self.fail_job(eng, j, e.to_string());
                return Ok(());
            }
        };
        let swap = SimTime(self.sc.entanglement.swap_ns);
        let rep = direct_transmit(
            &mut src,
            slot,
            &mut dst_slots,
            &qlink,
            swap,
            now,
            &mut self.carrier_rng[link],
        );
        let j = self.qpus[q as usize].running.as_ref().expect("running").job;
        let rep = match rep {
            Ok(r) => r,
            Err(e) => {
                self.fail_job(eng, j, e.to_string());
                return Ok(());
            }
        };
        debug_assert_eq!(src.payloads(), 0);
        let run = self.qpus[q as usize].running.as_mut().expect("running job");
        match rep.status {
            TransferStatus::Delivered => {
                debug_assert_eq!(dst_slots.payloads(), 1);
                self.sys.transfers_completed += 1;
                run.seg += 1;
            }
            _ => {
                // The state is gone; the shot starts over.
                debug_assert_eq!(dst_slots.payloads(), 0);
                self.link_failures[link] += 1;
                run.seg = 0;
                run.restarts += 1;
                let budget = run.record.shots as u64 * self.sc.register.attempts_per_shot as u64;
                if run.restarts > budget {
                    self.fail_job(
                        eng,
                        j,
                        "communication failure: direct transmission lost repeatedly".into(),
                    );
                    return Ok(());
                }
            }
        }
        eng.schedule(rep.completes_at, qpu_target(q), Ev::Phase { qpu: q, token })?;
        Ok(())
    }

    fn finish(&mut self, eng: &mut Eng, q: u32) -> Result<(), RunError> {
        let now = eng.now();
        let s = &mut self.qpus[q as usize];
        let run = s.running.take().expect("running job");
        let j = run.job;
        let isa = self.arch.qpus[q as usize].isa.clone();
        let opcodes: Vec<String> = self.jobs[j].program.instructions.iter().map(|i| i.op.clone()).collect();
        s.acc.record_execution(&run.record, &isa, &opcodes);
        s.acc.jobs_completed += 1;
        s.service.push((now - run.started).as_nanos() as f64);
        s.assigned -= 1;
        s.committed = s.committed.saturating_sub(self.state[j].predicted_service);
        if eng.logging() {
            let mut counts: BTreeMap<&str, (SimTime, u64)> = BTreeMap::new();
            for g in run.record.gates.iter().filter(|g| g.name != MEASURE) {
                counts.entry(&g.name).or_insert((g.duration, 0)).1 += run.record.attempts as u64;
            }
            for (name, (d, n)) in counts {
                let line = format!("gate_executed name={name} duration_ns={} count={n}", d.as_nanos());
                eng.schedule(now, qpu_target(q), Ev::Trace(line))?;
            }
        }
        let job = &self.jobs[j];
        match path_time(&self.arch, NodeId::Qpu(q), NodeId::Cpu(job.origin), job.result_bytes) {
            Ok((t, _)) => {
                eng.schedule(now + t, ComponentId::Cpu(job.origin), Ev::ResultBack(j))?;
            }
            Err(e) => self.fail_job(eng, j, e.to_string()),
        }
        self.try_start(eng, q)
    }

    // ---- entanglement -------------------------------------------------------

    fn link_up(&self, link: usize) -> bool {
        let (a, b) = self.arch.quantum_links[link].qpus().expect("qpu link");
        self.qpus[a as usize].up && self.qpus[b as usize].up
    }

    fn ensure_generation(&mut self, eng: &mut Eng, link: usize) {
        let now = eng.now();
        if self.gen_active[link] || !self.link_up(link) {
            return;
        }
        if self.mgr.needs_generation(link, now) {
            self.gen_active[link] = true;
            let period = self.arch.quantum_links[link].attempt_period;
            eng.schedule_in(period, ComponentId::QuantumLink(link as u32), Ev::PairAttempt(link));
        } else if let Some(t) = self.mgr.next_anticipation(link, now) {
            if self.wake_at[link] != Some(t) {
                self.wake_at[link] = Some(t);
                let _ = eng.schedule(t, ComponentId::QuantumLink(link as u32), Ev::GenWake(link));
            }
        }
    }

    /// Keeps one expiry sweep pending at the earliest live expiry.
    fn schedule_expiry(&mut self, eng: &mut Eng) -> Result<(), RunError> {
        let Some(t) = self.mgr.next_expiry() else { return Ok(()) };
        let t = t.max(eng.now());
        if self.next_expiry.is_none_or(|n| t < n) {
            self.next_expiry = Some(t);
            eng.schedule(t, ComponentId::System, Ev::PairExpiry)?;
        }
        Ok(())
    }

    fn pair_attempt(&mut self, eng: &mut Eng, link: usize) -> Result<(), RunError> {
        let now = eng.now();
        self.gen_active[link] = false;
        if !self.link_up(link) {
            return Ok(());
        }
        let out = self.mgr.generation_attempt(link, now, &mut self.gen_rng[link]);
        if out.created.is_some() {
            self.schedule_expiry(eng)?;
        }
        for t in out.aborted {
            if let Some(&j) = self.by_id.get(&t.requester) {
                self.fail_job(eng, j, "communication failure: pair generation starved".into());
            }
        }
        self.fulfilled(eng, out.fulfilled)?;
        self.ensure_generation(eng, link);
        Ok(())
    }

    fn fulfilled(&mut self, eng: &mut Eng, list: Vec<Fulfilled>) -> Result<(), RunError> {
        let now = eng.now();
        for f in list {
            let waiting_qpu = self.by_id.get(&f.requester).and_then(|&j| {
                let q = self.state[j].qpu?;
                let run = self.qpus[q as usize].running.as_ref()?;
                (run.job == j && run.waiting == Some(f.ticket)).then_some(q)
            });
            match waiting_qpu {
                Some(q) => self.teleport(eng, q, f.pairs)?,
                None => {
                    for p in f.pairs {
                        let more = self.mgr.release(p, now).unwrap_or_default();
                        self.fulfilled(eng, more)?;
                    }
                }
            }
        }
        Ok(())
    }

    // ---- failures -----------------------------------------------------------

    fn fail_job(&mut self, eng: &mut Eng, j: usize, reason: String) {
        if self.state[j].status != Status::Pending {
            return;
        }
        self.state[j].status = Status::Failed(reason);
        let now = eng.now();
        if let Some(q) = self.state[j].qpu {
            let s = &mut self.qpus[q as usize];
            let running_here = s.running.as_ref().is_some_and(|r| r.job == j);
            if running_here {
                s.running = None;
                s.token += 1;
                s.acc.jobs_aborted += 1;
            }
            s.assigned = s.assigned.saturating_sub(1);
            s.committed = s.committed.saturating_sub(self.state[j].predicted_service);
            let released = self.mgr.cancel_requester(self.jobs[j].id, now);
            // Released pairs may serve other waiting jobs.
            let _ = self.fulfilled(eng, released);
            if running_here {
                let _ = self.try_start(eng, q);
            }
        }
    }

    fn failure(&mut self, eng: &mut Eng, seed: u32) -> Result<(), RunError> {
        if !self.qpus[seed as usize].up {
            return Ok(());
        }
        let now = eng.now();
        let mut g = EntanglementGraph::from_edges(self.arch.qpus.iter().map(|q| q.id), self.mgr.live_edges());
        for s in &self.qpus {
            if let Some(r) = &s.running {
                let primary = self.state[r.job].qpu.expect("running job has a qpu");
                for &p in &self.state[r.job].partners {
                    g.add_edge(primary, p);
                }
            }
        }
        let failed = cascade(seed, &g, self.sc.faults.p_cascade, &mut self.cascade_rng);
        self.sys.cascades += 1;
        *self.sys.cascade_histogram.entry(failed.len() as u32).or_insert(0) += 1;
        self.sys.qpu_failures += failed.len() as u64;
        for &f in &failed {
            let s = &mut self.qpus[f as usize];
            s.up = false;
            s.acc.failures += 1;
            self.mgr.expire_at_qpu(f);
            eng.schedule(now + self.sc.faults.repair_time, qpu_target(f), Ev::Repaired(f))?;
        }
        // Abort every in-flight program touching a failed QPU.
        let victims: Vec<usize> = self
            .qpus
            .iter()
            .filter_map(|s| s.running.as_ref().map(|r| r.job))
            .filter(|&j| {
                let st = &self.state[j];
                st.qpu.is_some_and(|q| failed.contains(&q)) || st.partners.iter().any(|p| failed.contains(p))
            })
            .collect();
        for j in victims {
            let q = self.state[j].qpu.expect("running");
            self.fail_job(eng, j, format!("aborted by failure of qpu.{q} cascade from qpu.{seed}"));
        }
        Ok(())
    }

    // ---- report ---------------------------------------------------------------

    fn report(&self, clock: SimTime, events: u64) -> MetricsReport {
        let mut sys = self.sys.clone();
        sys.architecture = self.arch.kind.to_string();
        sys.seed = self.sc.seed;
        sys.horizon_ns = self.sc.horizon_ns;
        sys.clock_ns = clock.as_nanos();
        sys.events_processed = events;
        sys.jobs_total = self.jobs.len() as u64;
        let cap = self.arch.capacity();
        sys.capacity_exact = cap.exact;
        sys.capacity_log2 = cap.log2;

        let mut jobs = Vec::with_capacity(self.jobs.len());
        let mut latency = Stats::default();
        let mut first_arrival: Option<SimTime> = None;
        let mut last_completion: Option<SimTime> = None;
        for (job, st) in self.jobs.iter().zip(&self.state) {
            first_arrival = Some(first_arrival.map_or(job.arrival_ns, |t| t.min(job.arrival_ns)));
            let (status, failure) = match &st.status {
                Status::Done => (JobStatus::Completed, None),
                Status::Failed(r) => (JobStatus::Failed, Some(r.clone())),
                Status::Pending => (JobStatus::Incomplete, None),
            };
            match status {
                JobStatus::Completed => sys.jobs_completed += 1,
                JobStatus::Failed => sys.jobs_failed += 1,
                JobStatus::Incomplete => sys.jobs_incomplete += 1,
            }
            let lat = st.completion.map(|c| c - job.arrival_ns);
            if let Some(l) = lat {
                latency.push(l.as_nanos() as f64);
                last_completion =
                    Some(last_completion.map_or(st.completion.unwrap(), |t| t.max(st.completion.unwrap())));
            }
            let choice = match st.decision.as_ref().map(|d| d.choice) {
                Some(Choice::RunClassical) => "classical".to_string(),
                Some(Choice::RunOnQpu(q)) => format!("qpu.{q}"),
                None => "none".to_string(),
            };
            jobs.push(JobReport {
                id: job.id,
                origin: job.origin,
                arrival_ns: job.arrival_ns.as_nanos(),
                choice,
                status,
                completion_ns: st.completion.map(SimTime::as_nanos),
                latency_ns: lat.map(SimTime::as_nanos),
                speedup: lat
                    .filter(|l| *l > SimTime::ZERO)
                    .map(|l| job.t_classical_ns.as_nanos() as f64 / l.as_nanos() as f64),
                predicted_remote_ns: st
                    .decision
                    .as_ref()
                    .and_then(|d| d.predicted_remote)
                    .map(SimTime::as_nanos),
                predicted_classical_ns: job.t_classical_ns.as_nanos(),
                shots: st.shots,
                attempts: st.attempts,
                failure,
            });
        }
        sys.mean_latency_ns = latency.mean();
        if let (Some(a), Some(c)) = (first_arrival, last_completion) {
            let span = c.saturating_sub(a);
            sys.makespan_ns = Some(span.as_nanos());
            sys.throughput_per_s = (span > SimTime::ZERO).then(|| sys.jobs_completed as f64 / span.as_secs_f64());
        }
        let decided = sys.offloaded + sys.run_classical;
        sys.offload_fraction = (decided > 0).then(|| sys.offloaded as f64 / decided as f64);
        sys.switch_forwarded = self.switch.forwarded;
        if let (Some(a), Some(d)) = (self.switch.first_arrival, self.switch.last_departure) {
            let span = d.saturating_sub(a);
            sys.switch_throughput_per_s =
                (span > SimTime::ZERO).then(|| self.switch.forwarded as f64 / span.as_secs_f64());
        }

        let secs = clock.as_secs_f64();
        let links: Vec<LinkReport> = self
            .arch
            .quantum_links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let s = self.mgr.stats(i);
                let failures = s.starved + self.link_failures[i];
                LinkReport {
                    id: i as u32,
                    endpoints: l.qpus().expect("qpu link"),
                    attempts: s.attempts,
                    created: s.created,
                    consumed: s.consumed,
                    expired: s.expired,
                    available_at_end: s.available,
                    reserved_at_end: s.reserved,
                    generation_rate_per_s: (secs > 0.0).then(|| s.created as f64 / secs),
                    mean_inter_creation_ns: s.mean_inter_creation(),
                    requests: s.requests,
                    availability_ratio: (s.requests > 0).then(|| s.immediate as f64 / s.requests as f64),
                    expiry_fraction: (s.created > 0).then(|| s.expired as f64 / s.created as f64),
                    communication_failures: failures,
                }
            })
            .collect();
        sys.communication_failures = links.iter().map(|l| l.communication_failures).sum();

        MetricsReport {
            qpus: self
                .qpus
                .iter()
                .enumerate()
                .map(|(i, s)| s.acc.report(i as u32, clock))
                .collect(),
            links,
            jobs,
            system: sys,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::to_json;

    fn root() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
    }

    fn job(id: u64, at: u64, origin: u32, body: &str, t_classical: u64) -> String {
        format!(
            r#"{{"id":{id},"arrival_ns":{at},"origin":{origin},"qubits_required":2,"t_classical_ns":{t_classical},
                "preprocess_ops":1000,"postprocess_ops":2000,
                "program":{{"qubits":2,"shots":{{"fixed":3}},"instructions":[{body}]}}}}"#
        )
    }

    const H_ONLY: &str = r#"{"op":"H","on":[0]},{"op":"MEASURE"}"#;

    fn scenario(arch: &str, jobs: &[String], extra: &str) -> Scenario {
        let arch = if arch.contains("qubits_per_qpu") {
            arch.to_string()
        } else {
            format!(r#""qubits_per_qpu":4,{arch}"#)
        };
        let text = format!(
            r#"{{"seed":5,"horizon_ns":10000000,"isa":"isa/identity.json",
                "architecture":{{"cpu_instruction_rate":1e9,"controller_latency_ns":300,
                   "access_link":{{"latency_ns":5000,"bandwidth_bytes_per_s":1000000000}},{arch}}},
                "workload":{{"jobs":[{}]}}{extra}}}"#,
            jobs.join(",")
        );
        Scenario::from_json(&text, root()).unwrap()
    }

    fn go(sc: &Scenario) -> RunOutput {
        let v = sc.validate();
        assert!(v.is_empty(), "{v:?}");
        simulate(sc).unwrap()
    }

    #[test]
    fn single_job_latency_is_sum_of_terms() {
        let sc = scenario(
            r#""kind":"dedicated_accelerator""#,
            &[job(0, 100, 0, H_ONLY, 1_000_000)],
            "",
        );
        let out = go(&sc);
        let j = &out.report.jobs[0];
        assert_eq!(j.status, JobStatus::Completed, "{j:?}");
        assert_eq!(j.choice, "qpu.0", "{j:?}");
        // pre 1000, submit 5000 + 64, controller 300, 3 x (H 20 + MEASURE 200),
        // result 5000 + 64, post 2000
        let expected = 1000 + 5064 + 300 + 3 * 220 + 5064 + 2000;
        assert_eq!(j.latency_ns, Some(expected));
        assert_eq!(j.predicted_remote_ns, Some(expected));
        assert_eq!(out.report.system.makespan_ns, Some(expected));
    }

    #[test]
    fn cheap_classical_stays_local() {
        let sc = scenario(r#""kind":"dedicated_accelerator""#, &[job(0, 0, 0, H_ONLY, 500)], "");
        let out = go(&sc);
        assert_eq!(out.report.jobs[0].choice, "classical");
        assert_eq!(out.report.jobs[0].latency_ns, Some(500));
        assert_eq!(out.report.system.run_classical, 1);
    }

    #[test]
    fn shared_qpu_fifo() {
        let jobs: Vec<String> = (0..3).map(|i| job(i, 0, i as u32, H_ONLY, 1_000_000)).collect();
        let sc = scenario(r#""kind":"shared_qpu","cpus":3"#, &jobs, "");
        let out = go(&sc);
        let mut done: Vec<u64> = out.report.jobs.iter().map(|j| j.completion_ns.unwrap()).collect();
        done.sort();
        // Identical submissions queue behind each other for one shot block each.
        assert_eq!(done[1] - done[0], 660);
        assert_eq!(done[2] - done[1], 660);
        let q = &out.report.qpus[0];
        assert_eq!(q.jobs_completed, 3);
        assert_eq!(q.queue_wait.max_ns, Some(1320.0));
    }

    #[test]
    fn fragments_wait_for_last_input() {
        let mut j = job(0, 0, 0, H_ONLY, 1_000_000);
        j = j.replacen("\"id\":0", "\"id\":0,\"fragments\":[1]", 1);
        let sc = scenario(r#""kind":"shared_qpu","cpus":2"#, &[j], "");
        let out = go(&sc);
        // The fragment leaves at arrival, before preprocessing, so the primary
        // submission is the later input.
        assert_eq!(out.report.jobs[0].status, JobStatus::Completed);
        let mut late = job(0, 0, 0, H_ONLY, 1_000_000).replacen("\"id\":0", "\"id\":0,\"fragments\":[1]", 1);
        late = late.replace("\"preprocess_ops\":1000", "\"preprocess_ops\":0");
        let sc = scenario(
            r#""kind":"shared_qpu","cpus":2"#,
            &[late],
            r#","dispatch":{"offload_policy":"always_qpu","fragment_timeout_ns":10}"#,
        );
        let out = go(&sc);
        let j = &out.report.jobs[0];
        assert_eq!(j.status, JobStatus::Failed);
        assert!(j.failure.as_deref().unwrap().contains("fragments incomplete"), "{j:?}");
    }

    fn interconnected(extra: &str, jobs: &[String]) -> Scenario {
        scenario(
            r#""kind":"interconnected_accelerator","cpus":2,"qpus":2,"qubits_per_qpu":4,
               "quantum_link":{"attempt_period_ns":100,"p_gen":0.5,"pair_lifetime_ns":1000000}"#,
            jobs,
            extra,
        )
    }

    const TELEPORTING: &str =
        r#"{"op":"H","on":[0]},{"op":"TELEPORT","on":[0],"partner":0},{"op":"H","on":[1]},{"op":"MEASURE"}"#;

    #[test]
    fn teleporting_job_completes_and_conserves_pairs() {
        let jobs: Vec<String> = (0..6)
            .map(|i| job(i, i * 50_000, (i % 2) as u32, TELEPORTING, 10_000_000))
            .collect();
        let out = go(&interconnected(r#","output":{"audit":true}"#, &jobs));
        assert!(
            out.report.jobs.iter().all(|j| j.status == JobStatus::Completed),
            "{:?}",
            out.report.jobs
        );
        let l = &out.report.links[0];
        assert!(l.consumed >= 18, "{l:?}");
        assert_eq!(
            l.created,
            l.consumed + l.expired + l.available_at_end + l.reserved_at_end
        );
        assert_eq!(out.report.system.transfers_completed, 18);
    }

    #[test]
    fn pooled_policy_serves_immediately() {
        let jobs: Vec<String> = (0..4)
            .map(|i| job(i, 1_000_000 + i * 50_000, 0, TELEPORTING, 10_000_000))
            .collect();
        let extra = r#","entanglement":{"policy":{"pooled":{"target_pool_size":4}}},"output":{"audit":true}"#;
        let out = go(&interconnected(extra, &jobs));
        let l = &out.report.links[0];
        assert!(l.availability_ratio.unwrap() > 0.5, "{l:?}");
        assert!(out.report.jobs.iter().all(|j| j.status == JobStatus::Completed));
    }

    #[test]
    fn direct_transmission_completes() {
        let jobs: Vec<String> = (0..3).map(|i| job(i, i * 50_000, 0, TELEPORTING, 10_000_000)).collect();
        let extra = r#","entanglement":{"transfer":"direct_transmission","swap_ns":30}"#;
        let out = go(&interconnected(extra, &jobs));
        assert!(out.report.jobs.iter().all(|j| j.status == JobStatus::Completed));
        assert!(out.report.links[0].communication_failures > 0);
    }

    #[test]
    fn deterministic_report_and_log() {
        let jobs: Vec<String> = (0..6)
            .map(|i| job(i, i * 20_000, (i % 2) as u32, TELEPORTING, 10_000_000))
            .collect();
        let extra =
            r#","output":{"event_log":true},"faults":{"qpu_failure_rate":200,"p_cascade":0.5,"repair_time_ns":50000}"#;
        let sc = interconnected(extra, &jobs);
        let a = go(&sc);
        let b = go(&sc);
        assert_eq!(to_json(&a.report), to_json(&b.report));
        assert_eq!(a.event_log, b.event_log);
        assert!(a.event_log.unwrap().lines().count() > 10);
    }

    #[test]
    fn dedicated_cascades_are_isolated() {
        let jobs: Vec<String> = (0..20)
            .map(|i| job(i, i * 100_000, (i % 4) as u32, H_ONLY, 10_000_000))
            .collect();
        let extra = r#","faults":{"qpu_failure_rate":2000,"p_cascade":1.0,"repair_time_ns":10000}"#;
        let sc = scenario(r#""kind":"dedicated_accelerator","cpus":4,"qpus":4"#, &jobs, extra);
        let out = go(&sc);
        let s = &out.report.system;
        assert!(s.cascades > 5, "{s:?}");
        assert_eq!(s.cascade_histogram.keys().copied().collect::<Vec<_>>(), vec![1]);
        assert_eq!(s.qpu_failures, s.cascades);
    }

    #[test]
    fn interconnected_cascade_spreads_through_running_job() {
        let jobs: Vec<String> = (0..40)
            .map(|i| job(i, i * 20_000, 0, TELEPORTING, 10_000_000))
            .collect();
        let extra = r#","entanglement":{"policy":{"pooled":{"target_pool_size":2}}},"faults":{"qpu_failure_rate":5000,"p_cascade":1.0,"repair_time_ns":1000}"#;
        let out = go(&interconnected(extra, &jobs));
        let s = &out.report.system;
        assert!(s.cascade_histogram.contains_key(&2), "{s:?}");
    }

    #[test]
    fn switch_caps_throughput() {
        let jobs: Vec<String> = (0..200)
            .map(|i| job(i, i * 500, (i % 4) as u32, H_ONLY, 100_000_000))
            .collect();
        let sc = scenario(
            r#""kind":"client_server","cpus":4,"qpus":4,"switch":{"service_time_ns":1000}"#,
            &jobs,
            r#","dispatch":{"offload_policy":"always_qpu"}"#,
        );
        let out = go(&sc);
        let s = &out.report.system;
        assert_eq!(s.switch_forwarded, 200);
        let rate = s.switch_throughput_per_s.unwrap();
        assert!((rate - 1e6).abs() / 1e6 < 0.01, "{rate}");
    }

    #[test]
    fn gate_spread_matches_event_log() {
        let body = r#"{"op":"H","on":[0]},{"op":"CX","on":[0,1]},{"op":"T","on":[1]},{"op":"MEASURE"}"#;
        let jobs: Vec<String> = (0..3).map(|i| job(i, i * 1000, 0, body, 10_000_000)).collect();
        let sc = scenario(
            r#""kind":"dedicated_accelerator""#,
            &jobs,
            r#","output":{"event_log":true}"#,
        );
        let out = go(&sc);
        let log = out.event_log.unwrap();
        let durations: Vec<u64> = log
            .lines()
            .filter_map(|l| l.split("duration_ns=").nth(1))
            .map(|s| s.split_whitespace().next().unwrap().parse().unwrap())
            .collect();
        let q = &out.report.qpus[0];
        let (lo, hi) = (*durations.iter().min().unwrap(), *durations.iter().max().unwrap());
        assert_eq!(q.best_gate_ns, Some(lo));
        assert_eq!(q.worst_gate_ns, Some(hi));
        assert_eq!(q.gate_spread_ns, Some(hi - lo));
        assert_eq!((lo, hi), (20, 100));
    }

    #[test]
    fn oversized_program_forced_classical() {
        let body = r#"{"op":"H","on":[0]},{"op":"MEASURE"}"#;
        let j = job(0, 0, 0, body, 1_000_000).replace("\"qubits_required\":2", "\"qubits_required\":9");
        let sc = scenario(r#""kind":"dedicated_accelerator","qubits_per_qpu":4"#, &[j], "");
        let out = simulate(&sc).unwrap();
        assert_eq!(out.report.system.unschedulable, 1);
        assert_eq!(out.report.system.forced_classical, 1);
        assert_eq!(out.report.jobs[0].choice, "classical");
    }

    #[test]
    fn utilization_bounded_and_ec_charged() {
        let jobs: Vec<String> = (0..10)
            .map(|i| job(i, i * 100_000, 0, TELEPORTING, 10_000_000))
            .collect();
        let extra = r#","entanglement":{"policy":{"pooled":{"target_pool_size":2}},"ec_duty_cycle":0.1}"#;
        let out = go(&interconnected(extra, &jobs));
        for q in &out.report.qpus {
            let u = q.utilization;
            assert!((0.0..=1.0).contains(&u), "{u}");
            assert!(q.ec_charge_ns > 0);
        }
    }
}
