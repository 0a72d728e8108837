//! One-parameter sweeps over a scenario.
//!
//! Point `i` runs with seed `scenario.seed + i`, so any point can be rerun on
//! its own by setting the parameter and that seed.

use std::fmt::Write as _;
use std::str::FromStr;

use serde_json::Value as Json;
use thiserror::Error;

use crate::metrics::MetricsReport;
use crate::par::{map_indexed, ExecMode};
use crate::scenario::{Scenario, ScenarioError};
use crate::system::{self, RunError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("sweep point {index}: {source}")]
    Scenario {
        index: usize,
        #[source]
        source: ScenarioError,
    },
    #[error("sweep point {index}: {source}")]
    Run {
        index: usize,
        #[source]
        source: RunError,
    },
}

/// `name=start:stop:step`, inclusive of `stop`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepParam {
    pub path: String,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl FromStr for SweepParam {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, SweepError> {
        let usage = |m: &str| SweepError::Usage(format!("--param `{s}`: {m}"));
        let (path, range) = s
            .split_once('=')
            .ok_or_else(|| usage("expected name=start:stop:step"))?;
        let nums: Vec<&str> = range.split(':').collect();
        let [a, b, c] = nums[..] else {
            return Err(usage("expected start:stop:step"));
        };
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| usage(&format!("`{t}` is not a number")))
        };
        let p = SweepParam {
            path: path.trim().to_string(),
            start: num(a)?,
            stop: num(b)?,
            step: num(c)?,
        };
        if p.path.is_empty() {
            return Err(usage("empty parameter name"));
        }
        if !(p.step > 0.0 && p.step.is_finite()) {
            return Err(usage("step must be > 0"));
        }
        if !(p.start.is_finite() && p.stop.is_finite()) || p.stop < p.start {
            return Err(usage("stop must be >= start"));
        }
        Ok(p)
    }
}

impl SweepParam {
    /// `start, start + step, ...` up to and including `stop`.
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

/// Sets the field at dotted `path`, keeping integer fields integral.
pub fn set_path(root: &mut Json, path: &str, x: f64) -> Result<(), SweepError> {
    let mut at = root;
    for key in path.split('.') {
        at = match at {
            Json::Object(m) => m.get_mut(key),
            Json::Array(v) => key.parse::<usize>().ok().and_then(|i| v.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| SweepError::Usage(format!("unknown parameter path `{path}`")))?;
    }
    let new = match at {
        Json::Number(n) if n.is_u64() || n.is_i64() => {
            if x.fract() != 0.0 || x < 0.0 {
                return Err(SweepError::Usage(format!(
                    "`{path}` takes a non-negative integer, got {x}"
                )));
            }
            Json::from(x as u64)
        }
        Json::Number(_) => Json::from(x),
        _ => return Err(SweepError::Usage(format!("`{path}` is not a numeric field"))),
    };
    *at = new;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub index: usize,
    pub value: f64,
    pub seed: u64,
    pub report: MetricsReport,
}

/// The scenario for point `index` with parameter value `x`.
pub fn point_scenario(base: &Scenario, param: &SweepParam, index: usize, x: f64) -> Result<Scenario, SweepError> {
    let mut v = serde_json::to_value(base).expect("scenario serializes");
    set_path(&mut v, &param.path, x)?;
    let mut sc =
        Scenario::from_value(v, base.base_dir.clone()).map_err(|source| SweepError::Scenario { index, source })?;
    sc.seed = base.seed.wrapping_add(index as u64);
    Ok(sc)
}

/// Runs every point as an independent simulation.
pub fn run(base: &Scenario, param: &SweepParam, mode: ExecMode) -> Result<Vec<SweepPoint>, SweepError> {
    let xs = param.points();
    let scenarios = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| point_scenario(base, param, i, x))
        .collect::<Result<Vec<_>, _>>()?;
    let results = map_indexed(scenarios.len(), mode, |i| {
        let sc = &scenarios[i];
        let resolved = sc
            .resolve()
            .map_err(|source| SweepError::Scenario { index: i, source })?;
        let out = system::run(sc, resolved).map_err(|source| SweepError::Run { index: i, source })?;
        Ok(SweepPoint {
            index: i,
            value: xs[i],
            seed: sc.seed,
            report: out.report,
        })
    });
    results.into_iter().collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn ratio(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite())
        .map(|x| format!("{x:.6}"))
        .unwrap_or_default()
}

/// One row per point.
pub fn to_csv(param: &SweepParam, points: &[SweepPoint]) -> String {
    let mut out = String::from(
        "point,param,value,seed,jobs_completed,jobs_failed,offloaded,run_classical,offload_fraction,\
         mean_latency_ns,makespan_ns,throughput_per_s,switch_throughput_per_s,capacity_exact,capacity_log2,\
         communication_failures,cascades\n",
    );
    for p in points {
        let s = &p.report.system;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{},{}",
            p.index,
            param.path,
            p.value,
            p.seed,
            s.jobs_completed,
            s.jobs_failed,
            s.offloaded,
            s.run_classical,
            ratio(s.offload_fraction),
            ratio(s.mean_latency_ns),
            opt(s.makespan_ns),
            ratio(s.throughput_per_s),
            ratio(s.switch_throughput_per_s),
            opt(s.capacity_exact),
            s.capacity_log2,
            s.communication_failures,
            s.cascades,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::to_json;

    fn base() -> Scenario {
        let text = r#"{"seed":3,"horizon_ns":2000000,"isa":"isa/identity.json",
            "architecture":{"kind":"client_server","cpus":2,"qpus":1,"qubits_per_qpu":3,"switch":{"service_time_ns":100}},
            "workload":{"spec":{"arrivals":{"poisson":{"rate_per_s":20000}},
                "programs":[{"qubits":[1,2],"instructions":[1,4],"opcodes":["H","X"],"shots":{"fixed":2}}],
                "t_classical":{"polynomial":{"coeffs_ns":[50000]}}}}}"#;
        Scenario::from_json(text, std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")).unwrap()
    }

    #[test]
    fn parses_and_expands() {
        let p: SweepParam = "a.b=0:10:2.5".parse().unwrap();
        assert_eq!(p.points(), vec![0.0, 2.5, 5.0, 7.5, 10.0]);
        let p: SweepParam = "x=1:2:5".parse().unwrap();
        assert_eq!(p.points(), vec![1.0]);
        let p: SweepParam = "x=0.1:0.3:0.1".parse().unwrap();
        assert_eq!(p.points().len(), 3);
        assert!("x=1:2".parse::<SweepParam>().is_err());
        assert!("x=1:2:0".parse::<SweepParam>().is_err());
        assert!("x=3:2:1".parse::<SweepParam>().is_err());
    }

    #[test]
    fn unknown_path_is_usage_error() {
        let p: SweepParam = "architecture.nope=1:2:1".parse().unwrap();
        assert!(matches!(
            run(&base(), &p, ExecMode::Sequential),
            Err(SweepError::Usage(_))
        ));
        let p: SweepParam = "architecture.kind=1:2:1".parse().unwrap();
        assert!(matches!(
            run(&base(), &p, ExecMode::Sequential),
            Err(SweepError::Usage(_))
        ));
    }

    #[test]
    fn defaulted_fields_are_addressable() {
        let p: SweepParam = "architecture.access_link.latency_ns=1000:5000:1000".parse().unwrap();
        let pts = run(&base(), &p, ExecMode::Sequential).unwrap();
        assert_eq!(pts.len(), 5);
        let csv = to_csv(&p, &pts);
        assert_eq!(csv.lines().count(), 6);
        assert_eq!(pts[4].seed, 7);
    }

    #[test]
    fn capacity_column_grows_with_qpus() {
        let p: SweepParam = "architecture.qpus=1:4:1".parse().unwrap();
        let pts = run(&base(), &p, ExecMode::Parallel).unwrap();
        let caps: Vec<u128> = pts.iter().map(|p| p.report.system.capacity_exact.unwrap()).collect();
        assert_eq!(caps, vec![8, 16, 24, 32]);
    }

    #[test]
    fn points_reproducible_alone_and_across_modes() {
        let p: SweepParam = "architecture.switch.service_time_ns=100:400:100".parse().unwrap();
        let seq = run(&base(), &p, ExecMode::Sequential).unwrap();
        let par = run(&base(), &p, ExecMode::Parallel).unwrap();
        for (a, b) in seq.iter().zip(&par) {
            assert_eq!(to_json(&a.report), to_json(&b.report));
        }
        let sc = point_scenario(&base(), &p, 2, 300.0).unwrap();
        let alone = system::simulate(&sc).unwrap();
        assert_eq!(to_json(&alone.report), to_json(&seq[2].report));
    }
}
