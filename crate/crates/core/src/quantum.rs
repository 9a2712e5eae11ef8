//! Noise-free statevector emulation of the gate-based reservoir circuits.
//!
//! Only RY rotations and CNOTs appear in the reservoir ansatze, so a circuit
//! acts on real amplitudes; the emulator still stores complex amplitudes to
//! keep the register semantics (and the dense cross-check) general. Qubit q
//! corresponds to bit q of the amplitude index.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{num, Scalar};

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error("qubit index {qubit} out of range for {n} qubits")]
    InvalidQubit { qubit: usize, n: usize },
    #[error("CNOT control and target are both qubit {qubit}")]
    ControlEqualsTarget { qubit: usize },
    #[error("feature map expects {expected} angles, got {got}")]
    AngleCount { expected: usize, got: usize },
    #[error("reservoir vector must have {expected} entries for this ansatz, got {got}")]
    ReservoirLength { expected: usize, got: usize },
    #[error("input vector is empty")]
    EmptyInput,
}

type Result<V> = std::result::Result<V, QuantumError>;

// ---------------------------------------------------------------------------
// statevector and gates
// ---------------------------------------------------------------------------

/// Full 2^n-amplitude state of an n-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector<T> {
    n: usize,
    amps: Vec<Complex<T>>,
}

impl<T: Scalar> Statevector<T> {
    /// The ground state |0...0>.
    pub fn ground(n: usize) -> Self {
        let mut amps = vec![Complex::new(T::zero(), T::zero()); 1 << n];
        amps[0] = Complex::new(T::one(), T::zero());
        Statevector { n, amps }
    }

    pub fn qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> T {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Exact (infinite-shot) computational-basis probabilities p_i = |a_i|^2.
    pub fn probabilities(&self) -> Array1<T> {
        Array1::from_iter(self.amps.iter().map(|a| a.norm_sqr()))
    }

    /// Applies one gate in place, touching only the affected amplitude pairs.
    pub fn apply_gate(&mut self, gate: &Gate<T>) -> Result<()> {
        gate.validate(self.n)?;
        match *gate {
            Gate::Ry { qubit, angle } => {
                let half = angle / num(2.0);
                let (c, s) = (half.cos(), half.sin());
                let stride = 1usize << qubit;
                let len = self.amps.len();
                let mut base = 0;
                while base < len {
                    for off in 0..stride {
                        let i0 = base + off;
                        let i1 = i0 + stride;
                        let a0 = self.amps[i0];
                        let a1 = self.amps[i1];
                        self.amps[i0] = a0 * c - a1 * s;
                        self.amps[i1] = a0 * s + a1 * c;
                    }
                    base += stride << 1;
                }
            }
            Gate::Cnot { control, target } => {
                let cbit = 1usize << control;
                let tbit = 1usize << target;
                for i in 0..self.amps.len() {
                    if i & cbit != 0 && i & tbit == 0 {
                        self.amps.swap(i, i | tbit);
                    }
                }
            }
        }
        Ok(())
    }
}

/// The two-gate set all reservoir circuits are assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gate<T> {
    Ry { qubit: usize, angle: T },
    Cnot { control: usize, target: usize },
}

impl<T: Scalar> Gate<T> {
    fn validate(&self, n: usize) -> Result<()> {
        match *self {
            Gate::Ry { qubit, .. } => {
                if qubit >= n {
                    return Err(QuantumError::InvalidQubit { qubit, n });
                }
            }
            Gate::Cnot { control, target } => {
                if control >= n {
                    return Err(QuantumError::InvalidQubit { qubit: control, n });
                }
                if target >= n {
                    return Err(QuantumError::InvalidQubit { qubit: target, n });
                }
                if control == target {
                    return Err(QuantumError::ControlEqualsTarget { qubit: control });
                }
            }
        }
        Ok(())
    }
}

/// Ordered gate list over a fixed register width.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit<T> {
    n: usize,
    gates: Vec<Gate<T>>,
}

impl<T: Scalar> Circuit<T> {
    pub fn new(n: usize) -> Self {
        Circuit { n, gates: Vec::new() }
    }

    pub fn qubits(&self) -> usize {
        self.n
    }

    pub fn gates(&self) -> &[Gate<T>] {
        &self.gates
    }

    pub fn push(&mut self, gate: Gate<T>) -> Result<()> {
        gate.validate(self.n)?;
        self.gates.push(gate);
        Ok(())
    }

    pub fn ry_count(&self) -> usize {
        self.gates
            .iter()
            .filter(|g| matches!(g, Gate::Ry { .. }))
            .count()
    }

    pub fn cnot_count(&self) -> usize {
        self.gates.len() - self.ry_count()
    }

    /// Runs the circuit from |0...0>.
    pub fn run(&self) -> Result<Statevector<T>> {
        let mut state = Statevector::ground(self.n);
        for g in &self.gates {
            state.apply_gate(g)?;
        }
        Ok(state)
    }

    /// Greedy left-to-right layering: each gate joins the earliest layer in
    /// which all of its qubits are free; the depth is the number of layers.
    pub fn depth(&self) -> usize {
        let mut busy_until = vec![0usize; self.n];
        let mut depth = 0;
        for g in &self.gates {
            let layer = match *g {
                Gate::Ry { qubit, .. } => busy_until[qubit] + 1,
                Gate::Cnot { control, target } => {
                    busy_until[control].max(busy_until[target]) + 1
                }
            };
            match *g {
                Gate::Ry { qubit, .. } => busy_until[qubit] = layer,
                Gate::Cnot { control, target } => {
                    busy_until[control] = layer;
                    busy_until[target] = layer;
                }
            }
            depth = depth.max(layer);
        }
        depth
    }

    /// Plain-text gate list (`ry q<i> <angle>` / `cx q<c> q<t>`), one gate
    /// per line, for cross-checking against external simulators.
    pub fn dump_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for g in &self.gates {
            match *g {
                Gate::Ry { qubit, angle } => {
                    writeln!(out, "ry q{qubit} {:.16e}", angle.to_f64().unwrap()).unwrap()
                }
                Gate::Cnot { control, target } => {
                    writeln!(out, "cx q{control} q{target}").unwrap()
                }
            }
        }
        out
    }
}

/// p_i = |a_i|^2 for every basis state.
pub fn measure_probabilities<T: Scalar>(state: &Statevector<T>) -> Array1<T> {
    state.probabilities()
}

// ---------------------------------------------------------------------------
// feature maps
// ---------------------------------------------------------------------------

/// The four data-encoding feature maps.
///
/// - `Linear`: RY layer, then a CNOT chain q0->q1, ..., q(n-2)->q(n-1).
/// - `Full`: RY layer, then a CNOT ring (chain plus the q(n-1)->q0
///   wraparound), scheduled as parallel brick pairs.
/// - `FullSymmetric`: `Full` followed by a second identical RY layer.
/// - `Product`: per qubit RY(theta) then RY(theta^2 / 2pi); no CNOTs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMapKind {
    Linear,
    Product,
    Full,
    FullSymmetric,
}

/// Ring edge list with a brick phase: edges e_k = (k+s, k+s+1) mod n ordered
/// odd-k bricks, even-k bricks, then the wraparound edge. The phase shifts
/// which qubits the bricks pair, keeping repeated entangling blocks from
/// stacking their critical paths (step-circuit depth stays independent of n).
fn ring_edges(n: usize, phase: usize) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    let edge = |k: usize| ((k + phase) % n, (k + phase + 1) % n);
    let mut edges: Vec<(usize, usize)> = (1..n - 1).step_by(2).map(edge).collect();
    edges.extend((0..n - 1).step_by(2).map(edge));
    edges.push(edge(n - 1));
    edges
}

fn push_feature_map<T: Scalar>(
    circuit: &mut Circuit<T>,
    kind: FeatureMapKind,
    angles: &[T],
    phase: usize,
) -> Result<()> {
    let n = circuit.qubits();
    if angles.len() != n {
        return Err(QuantumError::AngleCount {
            expected: n,
            got: angles.len(),
        });
    }
    let ry_layer = |c: &mut Circuit<T>, f: &dyn Fn(T) -> T| -> Result<()> {
        for (q, a) in angles.iter().enumerate() {
            c.push(Gate::Ry {
                qubit: q,
                angle: f(*a),
            })?;
        }
        Ok(())
    };
    match kind {
        FeatureMapKind::Linear => {
            ry_layer(circuit, &|a| a)?;
            for q in 0..n.saturating_sub(1) {
                circuit.push(Gate::Cnot {
                    control: q,
                    target: q + 1,
                })?;
            }
        }
        FeatureMapKind::Full | FeatureMapKind::FullSymmetric => {
            ry_layer(circuit, &|a| a)?;
            for (c, t) in ring_edges(n, phase % n.max(1)) {
                circuit.push(Gate::Cnot { control: c, target: t })?;
            }
            if kind == FeatureMapKind::FullSymmetric {
                ry_layer(circuit, &|a| a)?;
            }
        }
        FeatureMapKind::Product => {
            ry_layer(circuit, &|a| a)?;
            let two_pi = num::<T>(2.0 * std::f64::consts::PI);
            ry_layer(circuit, &|a| a * a / two_pi)?;
        }
    }
    Ok(())
}

/// One encoding layer of the given kind over n qubits (angles in radians).
pub fn build_feature_map<T: Scalar>(
    kind: FeatureMapKind,
    angles: &[T],
    n: usize,
) -> Result<Circuit<T>> {
    let mut circuit = Circuit::new(n);
    push_feature_map(&mut circuit, kind, angles, 0)?;
    Ok(circuit)
}

// ---------------------------------------------------------------------------
// ansatz configurations C1-C5
// ---------------------------------------------------------------------------

/// The five reservoir ansatze: which feature map realizes the reservoir
/// encoding P, the input encoding Phi (and how often Phi repeats), and the
/// fixed random variation V.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfigId {
    C1,
    C2,
    C3,
    C4,
    C5,
}

impl ConfigId {
    pub const ALL: [ConfigId; 5] = [
        ConfigId::C1,
        ConfigId::C2,
        ConfigId::C3,
        ConfigId::C4,
        ConfigId::C5,
    ];

    /// Feature map encoding the previous reservoir state; the
    /// recurrence-free configurations C3-C5 have none.
    pub fn p_kind(self) -> Option<FeatureMapKind> {
        match self {
            ConfigId::C1 | ConfigId::C2 => Some(FeatureMapKind::Linear),
            _ => None,
        }
    }

    pub fn phi_kind(self) -> FeatureMapKind {
        match self {
            ConfigId::C1 | ConfigId::C4 => FeatureMapKind::Full,
            ConfigId::C2 | ConfigId::C3 => FeatureMapKind::Linear,
            ConfigId::C5 => FeatureMapKind::Product,
        }
    }

    /// Recurrence-free configurations stimulate the reservoir by applying
    /// the input encoding twice.
    pub fn phi_reps(self) -> usize {
        match self {
            ConfigId::C1 | ConfigId::C2 => 1,
            _ => 2,
        }
    }

    pub fn v_kind(self) -> FeatureMapKind {
        match self {
            ConfigId::C1 | ConfigId::C4 => FeatureMapKind::FullSymmetric,
            _ => FeatureMapKind::Linear,
        }
    }

    pub fn has_recurrence(self) -> bool {
        self.p_kind().is_some()
    }
}

impl std::fmt::Display for ConfigId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for ConfigId {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Ok(ConfigId::C1),
            "C2" => Ok(ConfigId::C2),
            "C3" => Ok(ConfigId::C3),
            "C4" => Ok(ConfigId::C4),
            "C5" => Ok(ConfigId::C5),
            other => Err(format!("unknown ansatz configuration {other:?}")),
        }
    }
}

/// A configuration together with its fixed random variation angles, one per
/// qubit, drawn once from U[0, 4pi) and kept for the realization's lifetime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzConfig<T> {
    pub config: ConfigId,
    pub alpha: Vec<T>,
}

impl<T: Scalar> AnsatzConfig<T> {
    pub fn new(config: ConfigId, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let hi = 4.0 * std::f64::consts::PI;
        let alpha = (0..n).map(|_| num(rng.random_range(0.0..hi))).collect();
        AnsatzConfig { config, alpha }
    }

    pub fn qubits(&self) -> usize {
        self.alpha.len()
    }
}

/// Assembles the per-time-step circuit V(alpha) Phi(u)^reps P(r) applied to
/// the ground state (gate order: P first, then Phi, then V).
///
/// P tiles the 2^n reservoir values into ceil(2^n / n) encoding layers of n
/// angles (zero-padding the last). Phi's input distribution depends on the
/// map: the fully entangling map spreads the N_u values cyclically over all
/// qubits, while the linear and product maps encode the data string
/// positionally (qubit j takes component j, zero-padded) and so drive only a
/// fraction of the register when N_u < n. Data maps to angles by
/// theta = 2pi * value; V uses the stored alpha angles directly.
pub fn build_step_circuit<T: Scalar>(
    cfg: &AnsatzConfig<T>,
    r: &[T],
    u: &[T],
) -> Result<Circuit<T>> {
    let n = cfg.qubits();
    if u.is_empty() {
        return Err(QuantumError::EmptyInput);
    }
    let two_pi = num::<T>(2.0 * std::f64::consts::PI);
    let mut circuit = Circuit::new(n);

    if let Some(p_kind) = cfg.config.p_kind() {
        let dim = 1usize << n;
        if r.len() != dim {
            return Err(QuantumError::ReservoirLength {
                expected: dim,
                got: r.len(),
            });
        }
        let layers = dim.div_ceil(n);
        let mut angles = vec![T::zero(); n];
        for layer in 0..layers {
            for (j, a) in angles.iter_mut().enumerate() {
                let idx = layer * n + j;
                *a = if idx < dim { two_pi * r[idx] } else { T::zero() };
            }
            push_feature_map(&mut circuit, p_kind, &angles, 0)?;
        }
    }

    let phi_kind = cfg.config.phi_kind();
    let cyclic = matches!(
        phi_kind,
        FeatureMapKind::Full | FeatureMapKind::FullSymmetric
    );
    let phi_angles: Vec<T> = (0..n)
        .map(|j| {
            if cyclic {
                two_pi * u[j % u.len()]
            } else if j < u.len() {
                two_pi * u[j]
            } else {
                T::zero()
            }
        })
        .collect();
    for rep in 0..cfg.config.phi_reps() {
        // the first input block staggers the ring brick phase; repeated
        // entangling blocks then overlap into an n-independent depth
        let phase = if rep == 0 { 1 } else { 0 };
        push_feature_map(&mut circuit, phi_kind, &phi_angles, phase)?;
    }

    push_feature_map(&mut circuit, cfg.config.v_kind(), &cfg.alpha, 0)?;
    Ok(circuit)
}

// ---------------------------------------------------------------------------
// dense reference path
// ---------------------------------------------------------------------------

/// Brute-force unitary assembly: an independent O(4^n) reference for the
/// amplitude-pair updates, usable for small registers.
pub mod dense {
    use super::*;
    use ndarray::Array2;

    /// The full 2^n x 2^n matrix of a single gate, built column by column
    /// from its action on basis states.
    pub fn gate_unitary<T: Scalar>(gate: &Gate<T>, n: usize) -> Array2<Complex<T>> {
        let dim = 1usize << n;
        let zero = Complex::new(T::zero(), T::zero());
        let mut u = Array2::from_elem((dim, dim), zero);
        match *gate {
            Gate::Ry { qubit, angle } => {
                let half = angle / num(2.0);
                let (c, s) = (half.cos(), half.sin());
                let bit = 1usize << qubit;
                for col in 0..dim {
                    if col & bit == 0 {
                        u[(col, col)] = Complex::new(c, T::zero());
                        u[(col | bit, col)] = Complex::new(s, T::zero());
                    } else {
                        u[(col, col)] = Complex::new(c, T::zero());
                        u[(col & !bit, col)] = Complex::new(-s, T::zero());
                    }
                }
            }
            Gate::Cnot { control, target } => {
                let cbit = 1usize << control;
                let tbit = 1usize << target;
                for col in 0..dim {
                    let row = if col & cbit != 0 { col ^ tbit } else { col };
                    u[(row, col)] = Complex::new(T::one(), T::zero());
                }
            }
        }
        u
    }

    /// Product of all gate matrices in application order.
    pub fn circuit_unitary<T: Scalar>(circuit: &Circuit<T>) -> Array2<Complex<T>> {
        let dim = 1usize << circuit.qubits();
        let mut u = Array2::eye(dim);
        for gate in circuit.gates() {
            u = gate_unitary(gate, circuit.qubits()).dot(&u);
        }
        u
    }

    /// Final state U |0...0> as a plain amplitude vector.
    pub fn run_dense<T: Scalar>(circuit: &Circuit<T>) -> Vec<Complex<T>> {
        circuit_unitary(circuit).column(0).to_vec()
    }
}
