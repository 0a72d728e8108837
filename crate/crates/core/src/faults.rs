//! QPU failure injection and correlated cascades over live entanglement.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{map_indexed, ExecMode};
use crate::rng::RngStream;
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultModel {
    /// Replaces every primitive gate's error probability when set.
    #[serde(default)]
    pub gate_error_prob: Option<f64>,
    /// Failures per second per QPU.
    #[serde(default)]
    pub qpu_failure_rate: f64,
    #[serde(default)]
    pub p_cascade: f64,
    #[serde(default, rename = "repair_time_ns")]
    pub repair_time: SimTime,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FaultError {
    #[error("fault model: {name} = {value} outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("fault model: qpu_failure_rate {0} must be >= 0")]
    Rate(f64),
}

impl FaultModel {
    pub fn check(&self) -> Result<(), FaultError> {
        let prob = |name, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(FaultError::Probability { name, value: v })
            }
        };
        if let Some(p) = self.gate_error_prob {
            prob("gate_error_prob", p)?;
        }
        prob("p_cascade", self.p_cascade)?;
        if !(self.qpu_failure_rate >= 0.0 && self.qpu_failure_rate.is_finite()) {
            return Err(FaultError::Rate(self.qpu_failure_rate));
        }
        Ok(())
    }
}

/// Spontaneous failure times in `[0, horizon)`, one Poisson stream per QPU,
/// sorted by (time, qpu).
pub fn inject_failures(model: &FaultModel, qpus: &[u32], horizon: SimTime, seed: u64) -> Vec<(SimTime, u32)> {
    let mut out = Vec::new();
    if model.qpu_failure_rate <= 0.0 {
        return out;
    }
    for &q in qpus {
        let mut rng = RngStream::new(seed, format!("faults.qpu.{q}"));
        let mut t = 0.0;
        loop {
            t += rng.exponential(model.qpu_failure_rate).expect("rate checked");
            let at = SimTime::from_secs_f64(t);
            if at >= horizon {
                break;
            }
            out.push((at, q));
        }
    }
    out.sort();
    out
}

/// Undirected graph of QPUs joined by live entanglement.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntanglementGraph {
    adj: BTreeMap<u32, BTreeSet<u32>>,
}

impl EntanglementGraph {
    pub fn new(vertices: impl IntoIterator<Item = u32>) -> Self {
        EntanglementGraph {
            adj: vertices.into_iter().map(|v| (v, BTreeSet::new())).collect(),
        }
    }

    pub fn from_edges(vertices: impl IntoIterator<Item = u32>, edges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut g = Self::new(vertices);
        for (a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    /// A path q0 - q1 - ... - q(n-1).
    pub fn path(n: u32) -> Self {
        Self::from_edges(0..n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn add_edge(&mut self, a: u32, b: u32) {
        if a == b {
            return;
        }
        self.adj.entry(a).or_default().insert(b);
        self.adj.entry(b).or_default().insert(a);
    }

    pub fn contains(&self, v: u32) -> bool {
        self.adj.contains_key(&v)
    }

    pub fn vertices(&self) -> impl Iterator<Item = u32> + '_ {
        self.adj.keys().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(|s| s.len()).sum::<usize>() / 2
    }

    pub fn neighbors(&self, v: u32) -> impl Iterator<Item = u32> + '_ {
        self.adj.get(&v).into_iter().flatten().copied()
    }

    pub fn component(&self, seed: u32) -> BTreeSet<u32> {
        cascade_with(seed, self, |_, _| true)
    }
}

/// Breadth-first propagation where `fires(u, v)` decides edge u->v. Each edge
/// is evaluated at most once, and only towards a vertex not yet failed.
pub fn cascade_with(seed: u32, graph: &EntanglementGraph, mut fires: impl FnMut(u32, u32) -> bool) -> BTreeSet<u32> {
    let mut failed = BTreeSet::from([seed]);
    let mut evaluated = BTreeSet::new();
    let mut queue = VecDeque::from([seed]);
    while let Some(u) = queue.pop_front() {
        for v in graph.neighbors(u) {
            if failed.contains(&v) || !evaluated.insert((u.min(v), u.max(v))) {
                continue;
            }
            if fires(u, v) {
                failed.insert(v);
                queue.push_back(v);
            }
        }
    }
    failed
}

/// Independent Bernoulli(`p`) percolation from `seed`.
pub fn cascade(seed: u32, graph: &EntanglementGraph, p: f64, rng: &mut RngStream) -> BTreeSet<u32> {
    let p = p.clamp(0.0, 1.0);
    cascade_with(seed, graph, |_, _| rng.bernoulli(p).expect("p clamped"))
}

const MC_CHUNKS: usize = 64;

/// Monte Carlo mean cascade size. Trials are split over fixed chunks, each
/// with its own stream, so the result is identical in either mode.
pub fn mean_cascade_size(
    graph: &EntanglementGraph,
    seed_qpu: u32,
    p: f64,
    trials: u64,
    seed: u64,
    mode: ExecMode,
) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let chunks = MC_CHUNKS.min(trials as usize);
    let sums = map_indexed(chunks, mode, |i| {
        let n = trials / chunks as u64 + u64::from((i as u64) < trials % chunks as u64);
        let mut rng = RngStream::new(seed, format!("cascade.mc.{i}"));
        (0..n)
            .map(|_| cascade(seed_qpu, graph, p, &mut rng).len() as u64)
            .sum::<u64>()
    });
    sums.iter().sum::<u64>() as f64 / trials as f64
}
