//! Acceptance checks, one line per criterion. Exits non-zero if any fail.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_complex::Complex64;
use qhpc_core::comm::{side_channel_bytes, teleport};
use qhpc_core::entmgr::{
    EntanglementManager, PairId, PairRequest, PairStatus, RefreshPolicy, RequestOutcome, StarvationPolicy,
};
use qhpc_core::faults::{cascade, mean_cascade_size, EntanglementGraph};
use qhpc_core::metrics::{ft_overhead, to_json};
use qhpc_core::par::ExecMode;
use qhpc_core::qram::{decode, execute, IsaDefinition, Program, QuantumRegister, Step};
use qhpc_core::rng::RngStream;
use qhpc_core::scenario::Scenario;
use qhpc_core::sim::SimTime;
use qhpc_core::sweep::{self, SweepParam};
use qhpc_core::system;
use qhpc_core::topology::{server_capacity, ClassicalLink, NodeId, QuantumLink};
use qhpc_core::workload::required_shots;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn identity_isa() -> IsaDefinition {
    IsaDefinition::load(root().join("isa/identity.json")).expect("identity ISA")
}

fn program(json: &str) -> Program {
    serde_json::from_str(json).expect("program")
}

// ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let mut names = Vec::new();
    let mut slowest = Duration::ZERO;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(root().join("scenarios"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    ensure(paths.len() >= 5, || format!("only {} shipped scenarios", paths.len()))?;
    for path in paths {
        let mut sc = Scenario::load(&path).map_err(|e| e.to_string())?;
        sc.output.event_log = true;
        let mut runs = Vec::new();
        for _ in 0..2 {
            let t = Instant::now();
            let out = system::simulate(&sc).map_err(|e| format!("{}: {e}", path.display()))?;
            let took = t.elapsed();
            slowest = slowest.max(took);
            ensure(took < Duration::from_secs(10), || {
                format!("{} took {took:?}", path.display())
            })?;
            runs.push((to_json(&out.report), out.event_log.unwrap_or_default()));
        }
        ensure(runs[0] == runs[1], || {
            format!("{} differs between runs", path.display())
        })?;
        ensure(!runs[0].1.is_empty(), || {
            format!("{} produced no event log", path.display())
        })?;
        names.push(path.file_stem().unwrap().to_string_lossy().into_owned());
    }
    Ok(format!(
        "{} scenarios byte-identical twice, slowest run {slowest:?}",
        names.len()
    ))
}

fn capacity() -> Outcome {
    let mut checked = 0;
    for q in 1..=8u32 {
        for n in 1..=10u32 {
            let two_n = BigUint::from(1u8) << n;
            let sum_form = BigUint::from(q) * &two_n;
            let product_form = BigUint::from(1u8) << (n * q);
            let loose = server_capacity(q, n, false);
            let tight = server_capacity(q, n, true);
            let as_big = |x: Option<u128>| x.map(BigUint::from);
            ensure(as_big(loose.exact) == Some(sum_form.clone()), || {
                format!("q={q} n={n}: {:?}", loose.exact)
            })?;
            ensure(as_big(tight.exact) == Some(product_form.clone()), || {
                format!("q={q} n={n}: {:?}", tight.exact)
            })?;
            if q == 1 {
                ensure(loose.exact == tight.exact, || format!("n={n}: q=1 forms differ"))?;
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} (q, n) pairs exact against big-integer forms"))
}

/// Full-matrix oracle: builds each gate as a 2^n x 2^n matrix and multiplies.
mod oracle {
    use super::Complex64;

    pub type Mat = Vec<Vec<Complex64>>;

    pub fn named(name: &str) -> Mat {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let z = c(0.0, 0.0);
        let o = c(1.0, 0.0);
        match name {
            "H" => vec![vec![c(r, 0.0), c(r, 0.0)], vec![c(r, 0.0), c(-r, 0.0)]],
            "X" => vec![vec![z, o], vec![o, z]],
            "Z" => vec![vec![o, z], vec![z, c(-1.0, 0.0)]],
            "S" => vec![vec![o, z], vec![z, c(0.0, 1.0)]],
            "T" => vec![vec![o, z], vec![z, c(r, r)]],
            "CX" => vec![vec![o, z, z, z], vec![z, o, z, z], vec![z, z, z, o], vec![z, z, o, z]],
            other => panic!("no oracle matrix for {other}"),
        }
    }

    /// Embeds `u` acting on `targets` (first target is the high local bit);
    /// basis index bit k is register element k.
    pub fn embed(u: &Mat, targets: &[u32], n: u32) -> Mat {
        let dim = 1usize << n;
        let local = |i: usize| targets.iter().fold(0usize, |acc, &t| acc << 1 | (i >> t & 1));
        let mask: usize = targets.iter().map(|&t| 1usize << t).sum();
        let mut m = vec![vec![Complex64::new(0.0, 0.0); dim]; dim];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                if i & !mask == j & !mask {
                    *cell = u[local(i)][local(j)];
                }
            }
        }
        m
    }

    pub fn apply(m: &Mat, v: &[Complex64]) -> Vec<Complex64> {
        m.iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn born_rule() -> Outcome {
    let t = Instant::now();
    let isa = identity_isa();
    let shots = 10_000u32;

    let h = program(&format!(
        r#"{{"qubits":1,"shots":{{"fixed":{shots}}},"instructions":[{{"op":"H","on":[0]}},{{"op":"MEASURE"}}]}}"#
    ));
    let mut reg = QuantumRegister::state_vector(1, 16).unwrap();
    let rec = execute(&h, &mut reg, &isa, &mut RngStream::new(1, "born.h")).map_err(|e| e.to_string())?;
    let ones = rec.samples.iter().filter(|b| b.bits()[0]).count() as f64 / shots as f64;
    ensure((ones - 0.5).abs() <= 0.015, || format!("H fraction {ones}"))?;

    let bell = program(&format!(
        r#"{{"qubits":2,"shots":{{"fixed":{shots}}},"instructions":[{{"op":"H","on":[0]}},{{"op":"CX","on":[0,1]}},{{"op":"MEASURE"}}]}}"#
    ));
    let mut reg = QuantumRegister::state_vector(2, 16).unwrap();
    let rec = execute(&bell, &mut reg, &isa, &mut RngStream::new(2, "born.bell")).map_err(|e| e.to_string())?;
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for s in &rec.samples {
        *counts.entry(s.to_string()).or_default() += 1;
    }
    ensure(counts.keys().all(|k| k == "00" || k == "11"), || {
        format!("Bell outcomes {counts:?}")
    })?;
    let expected = shots as f64 / 2.0;
    let stat: f64 = ["00", "11"]
        .iter()
        .map(|k| (*counts.get(*k).unwrap_or(&0) as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(stat);
    ensure(p > 0.001, || format!("Bell chi-square p = {p}"))?;

    // Amplitudes of random programs on up to three elements.
    let names = ["H", "X", "Z", "S", "T", "CX"];
    let mut rng = RngStream::new(3, "born.circuits");
    let mut programs = 0;
    let mut worst: f64 = 0.0;
    for n in 1..=3u32 {
        for _ in 0..100 {
            let depth = 1 + rng.below(12) as usize;
            let mut ins = Vec::new();
            for _ in 0..depth {
                let name = names[rng.below(if n == 1 { 5 } else { 6 }) as usize];
                let on = if name == "CX" {
                    let a = rng.below(n as u64) as u32;
                    let b = (a + 1 + rng.below(n as u64 - 1) as u32) % n;
                    vec![a, b]
                } else {
                    vec![rng.below(n as u64) as u32]
                };
                ins.push(format!(r#"{{"op":"{name}","on":{on:?}}}"#));
            }
            ins.push(r#"{"op":"MEASURE"}"#.into());
            let prog = program(&format!(
                r#"{{"qubits":{n},"shots":{{"fixed":1}},"instructions":[{}]}}"#,
                ins.join(",")
            ));
            let decoded = decode(&prog, &isa).map_err(|e| e.to_string())?;
            let mut reg = QuantumRegister::state_vector(n, 16).unwrap();
            let mut v = vec![Complex64::new(0.0, 0.0); 1 << n];
            v[0] = Complex64::new(1.0, 0.0);
            for step in &decoded.steps {
                let Step::Gate(g) = step else { continue };
                let spec = isa.gate(g.gate);
                reg.apply_gate(spec, &g.targets).map_err(|e| e.to_string())?;
                v = oracle::apply(&oracle::embed(&oracle::named(&spec.name), &g.targets, n), &v);
            }
            for (a, b) in reg.amplitudes().unwrap().iter().zip(&v) {
                worst = worst.max((a - b).norm());
            }
            programs += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("amplitude error {worst:e}"))?;
    let took = t.elapsed();
    ensure(took < Duration::from_secs(5), || format!("took {took:?}"))?;
    Ok(format!(
        "H ones {ones:.4}, Bell {counts:?} p={p:.3}, {programs} programs max |da| {worst:.1e}, {took:?}"
    ))
}

fn ft_overheads() -> Outcome {
    let ancilla_table = [("A", 2usize, 0u32), ("B", 3, 1), ("C", 7, 2)];
    let instructions: Vec<String> = ancilla_table
        .iter()
        .map(|(op, len, anc)| {
            let steps = vec!["\"P\""; *len].join(",");
            format!(r#"{{"opcode":"{op}","arity":1,"ancilla":{anc},"expansion":[{steps}]}}"#)
        })
        .collect();
    let isa = IsaDefinition::from_json(&format!(
        r#"{{"name":"hand","primitives":[{{"name":"P","arity":1,"duration_ns":10}}],"instructions":[{}],"measure":{{"duration_ns":0}}}}"#,
        instructions.join(",")
    ))
    .map_err(|e| e.to_string())?;
    let prog = program(
        r#"{"qubits":2,"shots":{"fixed":1},"instructions":[{"op":"A","on":[0]},{"op":"B","on":[1]},{"op":"C","on":[0]},{"op":"MEASURE"}]}"#,
    );
    let mut reg = QuantumRegister::timing_only(8, Default::default());
    let rec = execute(&prog, &mut reg, &isa, &mut RngStream::new(0, "ft")).map_err(|e| e.to_string())?;
    let got = ft_overhead(&rec).ok_or("absent")?;
    let gate_oracle = ancilla_table.iter().map(|t| t.1).sum::<usize>() as f64 / 3.0;
    let logical = 2.0;
    let qubit_oracle = (logical + ancilla_table.iter().map(|t| t.2).max().unwrap() as f64) / logical;
    ensure(got == (gate_oracle, qubit_oracle), || {
        format!("{got:?} vs ({gate_oracle}, {qubit_oracle})")
    })?;
    ensure(gate_oracle == 4.0, || "oracle".into())?;

    let id = identity_isa();
    let prog = program(
        r#"{"qubits":2,"shots":{"fixed":1},"instructions":[{"op":"H","on":[0]},{"op":"CX","on":[0,1]},{"op":"T","on":[1]},{"op":"MEASURE"}]}"#,
    );
    let rec = execute(&prog, &mut reg, &id, &mut RngStream::new(0, "ft")).map_err(|e| e.to_string())?;
    let ident = ft_overhead(&rec).ok_or("absent")?;
    ensure(ident == (1.0, 1.0), || format!("identity {ident:?}"))?;
    Ok(format!("{{2,3,7}} -> {got:?}, identity -> {ident:?}"))
}

fn qlink(p_gen: f64, period: u64, lifetime: u64) -> QuantumLink {
    QuantumLink {
        a: NodeId::Qpu(0),
        b: NodeId::Qpu(1),
        attempt_period: SimTime(period),
        p_gen,
        pair_lifetime: SimTime(lifetime),
    }
}

/// Generates until `count` pairs are reservable, then reserves them.
fn reserve(
    mgr: &mut EntanglementManager,
    now: &mut SimTime,
    count: u32,
    rng: &mut RngStream,
    requester: u64,
) -> Vec<PairId> {
    let period = mgr.links()[0].attempt_period;
    while mgr.available_count(0, *now) < count as usize {
        mgr.generation_attempt(0, *now, rng);
        *now += period;
    }
    let req = PairRequest {
        requester,
        endpoints: (0, 1),
        count,
        deadline: None,
    };
    match mgr.request_pairs(req, *now).expect("request") {
        RequestOutcome::Reserved(p) => p,
        RequestOutcome::Queued(_) => panic!("pairs were available"),
    }
}

fn teleport_timing() -> Outcome {
    let mut mgr = EntanglementManager::new(
        vec![qlink(1.0, 10, 1_000_000)],
        RefreshPolicy::OnDemand,
        StarvationPolicy::default(),
    );
    let mut rng = RngStream::new(0, "tp");
    let mut now = SimTime(0);
    let pairs = reserve(&mut mgr, &mut now, 1, &mut rng, 1);
    let clink = ClassicalLink {
        a: NodeId::Qpu(0),
        b: NodeId::Qpu(1),
        latency: SimTime(2000),
        bandwidth: 1_000_000_000,
    };
    let rep = teleport(&mut mgr, &pairs, &[clink], 0, 1, 1, SimTime(100), now).map_err(|e| e.to_string())?;
    // Two classical bits round up to one byte, 1 ns at 1 GB/s.
    let hand = now.as_nanos() + 2000 + 1 + 100;
    ensure(rep.completes_at.as_nanos() == hand, || {
        format!("{} vs {hand}", rep.completes_at)
    })?;

    let mut stress = RngStream::new(9, "tp.stress");
    let mut mgr = EntanglementManager::new(
        vec![qlink(0.7, 50, 400)],
        RefreshPolicy::OnDemand,
        StarvationPolicy::default(),
    );
    let mut now = SimTime(0);
    let mut checked = 0u32;
    while checked < 10_000 {
        let qubits = 1 + stress.below(4) as u32;
        let pairs = reserve(&mut mgr, &mut now, qubits, &mut stress, checked as u64);
        let clink = ClassicalLink {
            a: NodeId::Qpu(1),
            b: NodeId::Qpu(0),
            latency: SimTime(stress.below(100_000)),
            bandwidth: 1 + stress.below(10_000_000_000),
        };
        let correction = SimTime(stress.below(1_000));
        let rep = teleport(&mut mgr, &pairs, &[clink], 0, 1, qubits, correction, now).map_err(|e| e.to_string())?;
        ensure(rep.side_channel_delivered >= now + clink.latency, || {
            "side channel faster than latency".into()
        })?;
        ensure(rep.completes_at >= rep.side_channel_delivered, || {
            format!(
                "completed {} before side channel {}",
                rep.completes_at, rep.side_channel_delivered
            )
        })?;
        ensure(rep.side_channel_bytes == side_channel_bytes(qubits), || {
            "side channel size".into()
        })?;
        mgr.check_conservation()?;
        now += SimTime(stress.below(300));
        mgr.expire_sweep(now);
        checked += 1;
    }
    Ok(format!(
        "hand case {hand} ns exact; {checked} random transfers never beat the side channel"
    ))
}

fn conservation() -> Outcome {
    let links = vec![
        qlink(0.4, 10, 500),
        QuantumLink {
            a: NodeId::Qpu(1),
            b: NodeId::Qpu(2),
            ..qlink(0.6, 20, 2000)
        },
    ];
    let mut mgr = EntanglementManager::new(links, RefreshPolicy::OnDemand, StarvationPolicy::default());
    let mut rng = RngStream::new(17, "cons.mgr");
    let mut ops = RngStream::new(17, "cons.ops");
    let mut now = SimTime(0);
    let mut held: BTreeMap<u64, Vec<PairId>> = BTreeMap::new();
    let mut consumed: BTreeSet<PairId> = BTreeSet::new();
    let mut served = 0u64;
    let endpoints = [(0u32, 1u32), (1, 2)];

    let mut check_served = |mgr: &EntanglementManager, now: SimTime, pairs: &[PairId]| -> Result<(), String> {
        for &id in pairs {
            let p = mgr.pair(id).ok_or("unknown pair")?;
            ensure(p.status == PairStatus::Reserved, || {
                format!("{id} served as {:?}", p.status)
            })?;
            ensure(p.expires_at > now, || format!("{id} served expired at {now}"))?;
        }
        served += pairs.len() as u64;
        Ok(())
    };

    for _ in 0..100_000 {
        now += SimTime(ops.below(15));
        match ops.below(10) {
            0..=3 => {
                let link = ops.below(2) as usize;
                let out = mgr.generation_attempt(link, now, &mut rng);
                for f in out.fulfilled {
                    check_served(&mgr, now, &f.pairs)?;
                    held.entry(f.requester).or_default().extend(f.pairs);
                }
            }
            4 | 5 => {
                let requester = ops.below(50);
                let req = PairRequest {
                    requester,
                    endpoints: endpoints[ops.below(2) as usize],
                    count: 1 + ops.below(3) as u32,
                    deadline: None,
                };
                if let RequestOutcome::Reserved(pairs) = mgr.request_pairs(req, now).map_err(|e| e.to_string())? {
                    check_served(&mgr, now, &pairs)?;
                    held.entry(requester).or_default().extend(pairs);
                }
            }
            6 => {
                let Some((&r, _)) = held.iter().nth(ops.below(held.len().max(1) as u64) as usize) else {
                    continue;
                };
                for id in held.remove(&r).unwrap() {
                    let live =
                        mgr.pair(id).unwrap().status == PairStatus::Reserved && mgr.pair(id).unwrap().expires_at > now;
                    match mgr.consume(id, now) {
                        Ok(()) => {
                            ensure(live, || format!("{id} consumed while not live"))?;
                            ensure(consumed.insert(id), || format!("{id} consumed twice"))?;
                        }
                        Err(_) => ensure(!live, || format!("{id} refused while live"))?,
                    }
                    ensure(mgr.consume(id, now).is_err(), || format!("{id} consumable twice"))?;
                }
            }
            7 => {
                let Some((&r, _)) = held.iter().next() else { continue };
                for id in held.remove(&r).unwrap() {
                    if mgr.pair(id).unwrap().status == PairStatus::Reserved {
                        for f in mgr.release(id, now).map_err(|e| e.to_string())? {
                            check_served(&mgr, now, &f.pairs)?;
                            held.entry(f.requester).or_default().extend(f.pairs);
                        }
                    }
                }
            }
            8 => {
                mgr.expire_sweep(now);
            }
            _ => {
                let requester = ops.below(50);
                held.remove(&requester);
                for f in mgr.cancel_requester(requester, now) {
                    check_served(&mgr, now, &f.pairs)?;
                    held.entry(f.requester).or_default().extend(f.pairs);
                }
            }
        }
        mgr.check_conservation()?;
        mgr.audit()?;
    }
    let s: u64 = (0..2).map(|l| mgr.stats(l).created).sum();
    Ok(format!(
        "1e5 events, {s} pairs created, {served} served, {} consumed, conserved at every event",
        consumed.len()
    ))
}

fn crossover() -> Outcome {
    let sc = Scenario::load(root().join("scenarios/offload_crossover.json")).map_err(|e| e.to_string())?;
    let job = match &sc.workload {
        qhpc_core::scenario::WorkloadSource::Jobs(j) => j[0].clone(),
        _ => return Err("crossover scenario must list its job".into()),
    };
    let a = &sc.architecture;
    let bw = a.access_link.bandwidth_bytes_per_s;
    let ser = |bytes: u64| (bytes * 1_000_000_000).div_ceil(bw);
    let ops = |n: u64| (n as f64 / a.cpu_instruction_rate * 1e9).round() as u64;
    // identity ISA: H 20 ns, CX 100 ns, readout 200 ns
    let quantum = 10 * (20 + 100 + 200);
    let fixed = ops(job.preprocess_ops)
        + ser(job.submit_bytes)
        + a.controller_latency_ns
        + quantum
        + ser(job.result_bytes)
        + ops(job.postprocess_ops);
    let t_classical = job.t_classical_ns.as_nanos();
    // Offload iff 2L + fixed < t_classical; the tie stays classical.
    let l_star = (t_classical - fixed) / 2;
    ensure((t_classical - fixed) % 2 == 0, || {
        "crossover not on an integer latency".into()
    })?;

    let param: SweepParam = format!(
        "architecture.access_link.latency_ns={}:{}:100",
        l_star - 1000,
        l_star + 1000
    )
    .parse()
    .map_err(|e: sweep::SweepError| e.to_string())?;
    let points = sweep::run(&sc, &param, ExecMode::Parallel).map_err(|e| e.to_string())?;
    let mut flips = 0;
    let mut prev_offload = None;
    for p in &points {
        let l = p.value as u64;
        let j = &p.report.jobs[0];
        let offload = j.choice.starts_with("qpu");
        ensure(offload == (l < l_star), || format!("L={l}: choice {}", j.choice))?;
        let analytic = if offload { 2 * l + fixed } else { t_classical };
        ensure(j.latency_ns == Some(analytic), || {
            format!("L={l}: latency {:?} vs {analytic}", j.latency_ns)
        })?;
        if prev_offload.is_some_and(|o| o != offload) {
            flips += 1;
        }
        prev_offload = Some(offload);
    }
    ensure(flips == 1, || format!("{flips} flips"))?;
    Ok(format!(
        "L* = {l_star} ns; {} points, single flip, latencies equal the analytic sum",
        points.len()
    ))
}

fn switch_bottleneck() -> Outcome {
    let s_ns = 10_000u64;
    let saturation = 1e9 / s_ns as f64;
    let text = format!(
        r#"{{"seed":8,"horizon_ns":200000000,"isa":"isa/identity.json",
            "architecture":{{"kind":"client_server","cpus":8,"qpus":8,"qubits_per_qpu":2,
                "access_link":{{"latency_ns":1000,"bandwidth_bytes_per_s":1000000000}},
                "switch":{{"service_time_ns":{s_ns},"policy":"round_robin"}}}},
            "workload":{{"spec":{{"arrivals":{{"poisson":{{"rate_per_s":{}}}}},
                "programs":[{{"qubits":[1,1],"instructions":[1,1],"opcodes":["H"],"shots":{{"fixed":1}}}}],
                "t_classical":{{"polynomial":{{"coeffs_ns":[1000000]}}}}}}}},
            "dispatch":{{"offload_policy":"always_qpu"}}}}"#,
        2.0 * saturation
    );
    let sc = Scenario::from_json(&text, root()).map_err(|e| e.to_string())?;
    let out = system::simulate(&sc).map_err(|e| e.to_string())?;
    let s = &out.report.system;
    let rate = s.switch_throughput_per_s.ok_or("no switch throughput")?;
    let err = (rate - saturation).abs() / saturation;
    ensure(err <= 0.05, || format!("throughput {rate:.1}/s vs {saturation}/s"))?;
    ensure(rate <= saturation * (1.0 + 1e-9), || {
        format!("throughput {rate} above ceiling")
    })?;
    Ok(format!(
        "offered {:.0}/s, forwarded {} at {rate:.1}/s ({:.2}% from saturation)",
        2.0 * saturation,
        s.switch_forwarded,
        err * 100.0
    ))
}

fn cascades() -> Outcome {
    let g = EntanglementGraph::path(4);
    // Enumerate the 8 outcomes of the three edges from q0 outward.
    let mut brute = 0.0;
    for mask in 0u32..8 {
        let reach = 1 + (0..3).take_while(|i| mask >> i & 1 == 1).count();
        brute += reach as f64 / 8.0;
    }
    ensure(brute == 1.875, || format!("enumeration {brute}"))?;
    let mean = mean_cascade_size(&g, 0, 0.5, 100_000, 2024, ExecMode::Parallel);
    ensure((mean - brute).abs() <= 0.02, || format!("mean {mean}"))?;

    let mut rng = RngStream::new(5, "cascade.edges");
    for _ in 0..1000 {
        ensure(cascade(0, &g, 0.0, &mut rng).len() == 1, || "p=0 spread".into())?;
        let seed = rng.below(4) as u32;
        ensure(cascade(seed, &g, 1.0, &mut rng) == g.component(seed), || {
            "p=1 stopped short".into()
        })?;
    }

    let mut sc = Scenario::load(root().join("scenarios/dedicated.json")).map_err(|e| e.to_string())?;
    sc.faults.qpu_failure_rate = 500.0;
    sc.faults.p_cascade = 1.0;
    let out = system::simulate(&sc).map_err(|e| e.to_string())?;
    let s = &out.report.system;
    ensure(s.cascades > 0, || "no failures injected".into())?;
    ensure(s.cascade_histogram.keys().all(|&k| k == 1), || {
        format!("dedicated sizes {:?}", s.cascade_histogram)
    })?;
    Ok(format!(
        "mean {mean:.4} vs {brute}; p=0 and p=1 exact; dedicated {} cascades all size 1",
        s.cascades
    ))
}

fn generation_rate() -> Outcome {
    let (p, period) = (0.25, 100u64);
    let mut mgr = EntanglementManager::new(
        vec![qlink(p, period, u64::MAX / 4)],
        RefreshPolicy::OnDemand,
        StarvationPolicy::default(),
    );
    let mut rng = RngStream::new(31, "gen.rate");
    let mut now = SimTime(0);
    while mgr.stats(0).created < 10_000 {
        mgr.generation_attempt(0, now, &mut rng);
        now += SimTime(period);
    }
    let mean = mgr.stats(0).mean_inter_creation().ok_or("no creations")?;
    // Attempts until success are geometric with mean 1/p.
    let oracle = period as f64 / p;
    ensure((mean - oracle).abs() / oracle <= 0.05, || {
        format!("mean {mean} vs {oracle}")
    })?;
    Ok(format!("mean inter-creation {mean:.1} ns vs {oracle} ns"))
}

fn shots() -> Outcome {
    let brute = |c: f64, p: f64| (1u64..).find(|&k| 1.0 - (1.0 - p).powi(k as i32) >= c).unwrap();
    let n = required_shots(0.99, 0.5).map_err(|e| e.to_string())?;
    ensure(n == 7, || format!("got {n}"))?;
    ensure(1.0 - 0.5f64.powi(7) >= 0.99 && 0.99 > 1.0 - 0.5f64.powi(6), || {
        "bracket".into()
    })?;
    let cs: Vec<f64> = (0..20).map(|i| 0.5 + 0.49 * i as f64 / 19.0).collect();
    let ps: Vec<f64> = (0..20).map(|i| 0.02 + 0.96 * i as f64 / 19.0).collect();
    let mut grid = vec![vec![0u64; 20]; 20];
    for (i, &c) in cs.iter().enumerate() {
        for (j, &p) in ps.iter().enumerate() {
            let k = required_shots(c, p).map_err(|e| e.to_string())?;
            ensure(k == brute(c, p), || format!("c={c} p={p}: {k} vs {}", brute(c, p)))?;
            grid[i][j] = k;
        }
    }
    for i in 0..20 {
        for j in 0..20 {
            if i + 1 < 20 {
                ensure(grid[i + 1][j] >= grid[i][j], || {
                    format!("not monotone in confidence at {i},{j}")
                })?;
            }
            if j + 1 < 20 {
                ensure(grid[i][j + 1] <= grid[i][j], || format!("not monotone in p at {i},{j}"))?;
            }
        }
    }
    Ok("required_shots(0.99, 0.5) = 7; 20x20 grid matches brute force and is monotone".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("determinism of shipped scenarios", determinism),
        ("capacity closed forms", capacity),
        ("Born-rule statistics and amplitudes", born_rule),
        ("fault-tolerance overhead ratios", ft_overheads),
        ("teleportation timing", teleport_timing),
        ("entanglement conservation", conservation),
        ("offload crossover", crossover),
        ("entry-switch bottleneck", switch_bottleneck),
        ("cascade oracle", cascades),
        ("pair generation rate", generation_rate),
        ("shot calculator", shots),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail} ({:.2?})", i + 1, t.elapsed()),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
