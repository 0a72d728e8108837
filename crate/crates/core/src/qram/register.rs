use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::isa::{GateSpec, Unitary};
use super::QramError;
use crate::par::{self, ExecMode};
use crate::rng::RngStream;

/// Default cap on amplitude simulation.
pub const DEFAULT_STATE_VECTOR_CAP: u32 = 16;

/// Registers at or above this size split gate application across threads.
const PARALLEL_QUBITS: u32 = 14;

/// Measurement outcome; character `i` is register element `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitstring(Vec<bool>);

impl Bitstring {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Bitstring(bits)
    }

    /// Little-endian basis index: element `i` is bit `i`.
    pub fn from_index(index: usize, width: u32) -> Self {
        Bitstring((0..width).map(|i| index >> i & 1 == 1).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Bitstring {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(format!("invalid bit `{other}`")),
            })
            .collect::<Result<_, _>>()
            .map(Bitstring)
    }
}

impl Serialize for Bitstring {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bitstring {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placeholder {
    Zeros,
    #[default]
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    StateVector,
    TimingOnly,
}

#[derive(Clone, Debug)]
enum State {
    Amplitudes(Vec<Complex64>),
    Timing(Placeholder),
}

#[derive(Clone, Debug)]
pub struct QuantumRegister {
    n: u32,
    state: State,
    mode: ExecMode,
}

impl QuantumRegister {
    /// Amplitude-backed register initialised to |0...0>.
    pub fn state_vector(n: u32, cap: u32) -> Result<Self, QramError> {
        if n > cap || n >= usize::BITS - 1 {
            return Err(QramError::StateVectorTooLarge { n, cap });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(QuantumRegister {
            n,
            state: State::Amplitudes(amps),
            mode: ExecMode::default(),
        })
    }

    pub fn timing_only(n: u32, placeholder: Placeholder) -> Self {
        QuantumRegister {
            n,
            state: State::Timing(placeholder),
            mode: ExecMode::default(),
        }
    }

    /// Register holding an explicit normalised state.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self, QramError> {
        let len = amps.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(QramError::BadAmplitudes("length must be a power of two".into()));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(QramError::BadAmplitudes(format!("norm {norm} != 1")));
        }
        Ok(QuantumRegister {
            n: len.trailing_zeros(),
            state: State::Amplitudes(amps),
            mode: ExecMode::default(),
        })
    }

    pub fn with_exec_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn size(&self) -> u32 {
        self.n
    }

    pub fn backend(&self) -> Backend {
        match self.state {
            State::Amplitudes(_) => Backend::StateVector,
            State::Timing(_) => Backend::TimingOnly,
        }
    }

    pub fn amplitudes(&self) -> Option<&[Complex64]> {
        match &self.state {
            State::Amplitudes(a) => Some(a),
            State::Timing(_) => None,
        }
    }

    pub fn norm_sqr(&self) -> Option<f64> {
        self.amplitudes().map(|a| a.iter().map(|c| c.norm_sqr()).sum())
    }

    pub fn reset(&mut self) {
        if let State::Amplitudes(a) = &mut self.state {
            a.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            a[0] = Complex64::new(1.0, 0.0);
        }
    }

    pub fn apply_gate(&mut self, gate: &GateSpec, targets: &[u32]) -> Result<(), QramError> {
        if targets.len() != gate.arity as usize {
            return Err(QramError::GateArity {
                gate: gate.name.clone(),
                expected: gate.arity,
                got: targets.len(),
            });
        }
        self.check_targets(targets)?;
        if let State::Timing(_) = self.state {
            return Ok(());
        }
        let u = gate
            .unitary
            .as_ref()
            .ok_or_else(|| QramError::MissingUnitary(gate.name.clone()))?;
        self.apply_unitary(u, targets)
    }

    /// Applies `u` to `targets`. For two-qubit matrices the first target is the
    /// more significant local bit (control for CX).
    pub fn apply_unitary(&mut self, u: &Unitary, targets: &[u32]) -> Result<(), QramError> {
        self.check_targets(targets)?;
        let mode = if self.n >= PARALLEL_QUBITS {
            self.mode
        } else {
            ExecMode::Sequential
        };
        let State::Amplitudes(amps) = &mut self.state else {
            return Ok(());
        };
        match (u.dim(), targets) {
            (2, &[t]) => {
                let stride = 1usize << t;
                let m = [u.at(0, 0), u.at(0, 1), u.at(1, 0), u.at(1, 1)];
                par::for_each_chunk_mut(amps, stride << 1, mode, |_, chunk| {
                    let (lo, hi) = chunk.split_at_mut(stride);
                    for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                        let (x, y) = (*a0, *a1);
                        *a0 = m[0] * x + m[1] * y;
                        *a1 = m[2] * x + m[3] * y;
                    }
                });
            }
            (4, &[hi_t, lo_t]) => {
                let (bh, bl) = (1usize << hi_t, 1usize << lo_t);
                let block = (bh.max(bl)) << 1;
                let mut m = [Complex64::new(0.0, 0.0); 16];
                for r in 0..4 {
                    for c in 0..4 {
                        m[r * 4 + c] = u.at(r, c);
                    }
                }
                par::for_each_chunk_mut(amps, block, mode, |_, chunk| {
                    for i in 0..chunk.len() {
                        if i & (bh | bl) != 0 {
                            continue;
                        }
                        let idx = [i, i | bl, i | bh, i | bh | bl];
                        let v = idx.map(|k| chunk[k]);
                        for (r, &k) in idx.iter().enumerate() {
                            chunk[k] = (0..4).map(|c| m[r * 4 + c] * v[c]).sum();
                        }
                    }
                });
            }
            _ => {
                return Err(QramError::GateArity {
                    gate: "unitary".into(),
                    expected: if u.dim() == 4 { 2 } else { 1 },
                    got: targets.len(),
                })
            }
        }
        debug_assert!(
            (self.norm_sqr().unwrap_or(1.0) - 1.0).abs() < 1e-9,
            "norm drift after gate"
        );
        Ok(())
    }

    fn check_targets(&self, targets: &[u32]) -> Result<(), QramError> {
        if let Some(&t) = targets.iter().find(|&&t| t >= self.n) {
            return Err(QramError::OperandOutOfRange { index: t, size: self.n });
        }
        if targets.len() == 2 && targets[0] == targets[1] {
            return Err(QramError::DuplicateOperand(targets[0]));
        }
        Ok(())
    }

    /// Probability of each basis state (state-vector backend only).
    pub fn probabilities(&self) -> Option<Vec<f64>> {
        self.amplitudes().map(|a| a.iter().map(|c| c.norm_sqr()).collect())
    }

    /// Projective measurement of every element, then reset to |0...0>.
    pub fn measure(&mut self, rng: &mut RngStream) -> Bitstring {
        let n = self.n;
        let out = match &self.state {
            State::Amplitudes(amps) => {
                let u = rng.uniform01();
                let mut acc = 0.0;
                let mut pick = None;
                for (i, a) in amps.iter().enumerate() {
                    acc += a.norm_sqr();
                    if u < acc {
                        pick = Some(i);
                        break;
                    }
                }
                let idx = pick.unwrap_or_else(|| amps.iter().rposition(|a| a.norm_sqr() > 0.0).unwrap_or(0));
                Bitstring::from_index(idx, n)
            }
            State::Timing(Placeholder::Zeros) => Bitstring(vec![false; n as usize]),
            State::Timing(Placeholder::Uniform) => {
                let mut bits = Vec::with_capacity(n as usize);
                while bits.len() < n as usize {
                    let word = (rng.uniform01() * 4294967296.0) as u32;
                    for b in 0..32 {
                        if bits.len() == n as usize {
                            break;
                        }
                        bits.push(word >> b & 1 == 1);
                    }
                }
                Bitstring(bits)
            }
        };
        self.reset();
        out
    }

    /// Measures one element, collapsing and renormalising the rest of the state.
    pub fn measure_qubit(&mut self, q: u32, rng: &mut RngStream) -> Result<bool, QramError> {
        self.check_targets(&[q])?;
        let u = rng.uniform01();
        let State::Amplitudes(amps) = &mut self.state else {
            return Ok(false);
        };
        let bit = 1usize << q;
        let p1: f64 = amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        let outcome = u < p1;
        let keep = if outcome { p1 } else { 1.0 - p1 };
        let scale = 1.0 / keep.sqrt();
        for (i, a) in amps.iter_mut().enumerate() {
            if (i & bit != 0) == outcome {
                *a *= scale;
            } else {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        Ok(outcome)
    }
}
