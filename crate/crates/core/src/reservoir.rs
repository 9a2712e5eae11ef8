//! Reservoir state evolution, readout training and autonomous prediction.
//!
//! The classical reservoir is the standard leaky echo state network: a fixed
//! random input matrix, a sparse random recurrent matrix rescaled to a target
//! spectral radius, tanh activation and a leaky state update. The quantum
//! reservoir replaces the activation by a parameterized circuit whose
//! measured probabilities form the new state. Both share the same harvesting,
//! ridge-regression readout and closed-loop machinery.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{RangeScaling, DIVERGENCE_LIMIT};
use crate::quantum::{build_step_circuit, AnsatzConfig, ConfigId, QuantumError};
use crate::{derive_seed, num, Scalar};

#[derive(Debug, Error)]
pub enum ReservoirError {
    #[error("parameter {name} = {value} outside its valid range")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("power iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("recurrent matrix drawn all-zero {retries} times; raise density or size")]
    AllZeroMatrix { retries: usize },
    #[error("input has dimension {got}, reservoir expects {expected}")]
    InputDimension { expected: usize, got: usize },
    #[error("segment of {got} rows cannot cover washout of {washout} steps")]
    SegmentTooShort { washout: usize, got: usize },
    #[error("state matrix has {r_cols} columns but targets have {target_cols}")]
    ColumnMismatch { r_cols: usize, target_cols: usize },
    #[error("ridge system is singular; use a Tikhonov parameter beta > 0")]
    SingularSystem,
    #[error("ridge solve residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },
    #[error("closed-loop prediction diverged at step {step}")]
    Divergence { step: usize },
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("readout file malformed: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<V> = std::result::Result<V, ReservoirError>;

// ---------------------------------------------------------------------------
// sparse recurrent matrix
// ---------------------------------------------------------------------------

/// Compressed sparse row matrix; all the reservoir needs is matvec.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from per-row (column, value) lists.
    pub fn from_rows(nrows: usize, ncols: usize, rows: Vec<Vec<(usize, T)>>) -> Self {
        assert_eq!(rows.len(), nrows);
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                debug_assert!(c < ncols);
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.vals {
            *v *= factor;
        }
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut acc = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] = acc;
        }
    }

    pub fn to_dense(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[(i, self.cols[k])] = self.vals[k];
            }
        }
        out
    }
}

/// Dominant eigenvalue magnitude by power iteration. A two-step Krylov fit
/// extracts the magnitude even when the dominant eigenvalues are a complex
/// conjugate pair (the plain Rayleigh quotient oscillates in that case).
pub fn spectral_radius<T: Scalar>(w: &CsrMatrix<T>, max_iter: usize, tol: T) -> Result<T> {
    let n = w.nrows();
    let tol = tol.max(num::<T>(4.0) * T::epsilon());
    let resid_tol = tol.sqrt();
    let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_0001);
    let mut v0: Vec<T> = (0..n).map(|_| num(rng.random_range(-1.0..1.0))).collect();
    normalize(&mut v0);
    let mut v1 = vec![T::zero(); n];
    let mut v2 = vec![T::zero(); n];
    let mut prev = T::nan();
    let mut streak = 0usize;

    for _ in 0..max_iter {
        w.matvec_into(&v0, &mut v1);
        w.matvec_into(&v1, &mut v2);

        // least-squares fit v2 ~ a v1 + b v0 over the Krylov pair; once the
        // pair goes collinear (isolated real eigenvalue) the one-term fit
        // v2 ~ a v1 takes over
        let d00 = dot(&v0, &v0);
        let d01 = dot(&v0, &v1);
        let d11 = dot(&v1, &v1);
        let r0 = dot(&v0, &v2);
        let r1 = dot(&v1, &v2);
        let d22 = dot(&v2, &v2);
        if d11 == T::zero() {
            return Ok(T::zero()); // W annihilated the iterate
        }
        let det = d11 * d00 - d01 * d01;
        let (a, b, mag) = if det <= num::<T>(1e-8) * d11 * d00 {
            let a = r1 / d11;
            (a, T::zero(), a.abs())
        } else {
            let a = (r1 * d00 - r0 * d01) / det;
            let b = (r0 * d11 - r1 * d01) / det;
            let disc = a * a + num::<T>(4.0) * b;
            let m = if disc >= T::zero() {
                let root = disc.sqrt();
                ((a + root) / num(2.0)).abs().max(((a - root) / num(2.0)).abs())
            } else {
                // complex pair: |mu|^2 equals the product of roots, -b
                (-b).sqrt()
            };
            (a, b, m)
        };

        // certify the estimate only while the fitted recurrence actually
        // reproduces the iterate; the magnitude alone can plateau while
        // still biased by an unfitted third mode
        let resid_sq: T = v2
            .iter()
            .zip(&v1)
            .zip(&v0)
            .map(|((x2, x1), x0)| {
                let r = *x2 - a * *x1 - b * *x0;
                r * r
            })
            .sum();
        let certified = resid_sq.sqrt() <= resid_tol * d22.sqrt().max(T::min_positive_value())
            && (mag - prev).abs() <= tol * mag.max(T::min_positive_value());
        streak = if certified { streak + 1 } else { 0 };
        if streak >= 3 {
            return Ok(mag);
        }
        prev = mag;
        let norm = d22.sqrt();
        if norm == T::zero() {
            return Ok(T::zero());
        }
        for (dst, src) in v0.iter_mut().zip(&v2) {
            *dst = *src / norm;
        }
    }
    Err(ReservoirError::NoConvergence {
        iterations: max_iter,
    })
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn normalize<T: Scalar>(v: &mut [T]) {
    let n = dot(v, v).sqrt();
    if n > T::zero() {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

// ---------------------------------------------------------------------------
// reservoirs
// ---------------------------------------------------------------------------

/// Common surface shared by the classical and quantum reservoirs: the
/// pre-leak activation map plus the constants the drivers need.
pub trait Reservoir<T: Scalar>: Send + Sync {
    /// Dimension of the reservoir state vector (N_r).
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn leak_rate(&self) -> T;
    /// Random initial state for the washout phase.
    fn initial_state(&self, rng: &mut ChaCha12Rng) -> Array1<T>;
    /// New activation r_hat from the previous state and the scaled input.
    fn activate(&self, r_prev: &Array1<T>, u: ArrayView1<'_, T>) -> Result<Array1<T>>;
    /// Whether closed-loop feedback must be clipped to [0, 1] before
    /// re-encoding (angle encodings wrap around otherwise).
    fn clips_feedback(&self) -> bool {
        false
    }
}

/// Leaky echo state network with uniform input weights and an Erdos-Renyi
/// recurrent matrix rescaled to the requested spectral radius.
#[derive(Debug, Clone)]
pub struct ClassicalReservoir<T> {
    pub n_r: usize,
    pub n_u: usize,
    pub w_in: Array2<T>,
    pub w: CsrMatrix<T>,
    pub sigma_in: T,
    pub rho: T,
    pub density: T,
    pub eps: T,
    pub seed: u64,
}

/// Hyperparameters that deterministically regenerate a classical reservoir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalReservoirSpec<T> {
    pub n_r: usize,
    pub n_u: usize,
    pub sigma_in: T,
    pub rho: T,
    pub density: T,
    pub eps: T,
    pub seed: u64,
}

impl<T: Scalar> ClassicalReservoir<T> {
    /// Draws W_in uniform in [-sigma_in, sigma_in] and W Erdos-Renyi with
    /// the given density, then rescales W so its spectral radius is rho.
    pub fn init(
        n_r: usize,
        n_u: usize,
        sigma_in: T,
        rho: T,
        density: T,
        eps: T,
        seed: u64,
    ) -> Result<Self> {
        check_param("n_r", n_r >= 1, n_r as f64)?;
        check_param("n_u", n_u >= 1, n_u as f64)?;
        let rho_f = rho.to_f64().unwrap();
        check_param("rho", rho_f > 0.0 && rho_f <= 1.0, rho_f)?;
        let d_f = density.to_f64().unwrap();
        check_param("density", d_f > 0.0 && d_f <= 1.0, d_f)?;
        let e_f = eps.to_f64().unwrap();
        check_param("eps", e_f > 0.0 && e_f <= 1.0, e_f)?;
        let s_f = sigma_in.to_f64().unwrap();
        check_param("sigma_in", s_f >= 0.0, s_f)?;

        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let sig = sigma_in.to_f64().unwrap();
        let w_in = Array2::from_shape_fn((n_r, n_u), |_| {
            if sig == 0.0 {
                T::zero()
            } else {
                num(rng.random_range(-sig..sig))
            }
        });

        let mut w = None;
        let retries = 3;
        for attempt in 0..retries {
            let mut draw_rng = if attempt == 0 {
                rng.clone()
            } else {
                ChaCha12Rng::seed_from_u64(derive_seed(seed, "w-retry", attempt as u64))
            };
            let candidate = sample_erdos_renyi(n_r, d_f, &mut draw_rng);
            if candidate.nnz() > 0 {
                w = Some(candidate);
                break;
            }
        }
        let mut w = w.ok_or(ReservoirError::AllZeroMatrix { retries })?;
        let lambda = spectral_radius(&w, 10_000, num(1e-9))?;
        if lambda == T::zero() {
            return Err(ReservoirError::AllZeroMatrix { retries });
        }
        w.scale(rho / lambda);

        Ok(ClassicalReservoir {
            n_r,
            n_u,
            w_in,
            w,
            sigma_in,
            rho,
            density,
            eps,
            seed,
        })
    }

    pub fn from_spec(spec: &ClassicalReservoirSpec<T>) -> Result<Self> {
        Self::init(
            spec.n_r,
            spec.n_u,
            spec.sigma_in,
            spec.rho,
            spec.density,
            spec.eps,
            spec.seed,
        )
    }

    pub fn spec(&self) -> ClassicalReservoirSpec<T> {
        ClassicalReservoirSpec {
            n_r: self.n_r,
            n_u: self.n_u,
            sigma_in: self.sigma_in,
            rho: self.rho,
            density: self.density,
            eps: self.eps,
            seed: self.seed,
        }
    }

    /// The nonlinear activation r_hat = tanh(W_in u + W r).
    pub fn activation(&self, r_prev: ArrayView1<'_, T>, u: ArrayView1<'_, T>) -> Array1<T> {
        let mut pre = vec![T::zero(); self.n_r];
        self.w.matvec_into(r_prev.as_slice().expect("contiguous"), &mut pre);
        let win_u = self.w_in.dot(&u);
        Array1::from_iter(
            pre.iter()
                .zip(win_u.iter())
                .map(|(wr, wu)| (*wr + *wu).tanh()),
        )
    }
}

fn check_param(name: &'static str, ok: bool, value: f64) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(ReservoirError::InvalidParam { name, value })
    }
}

fn sample_erdos_renyi<T: Scalar>(n: usize, density: f64, rng: &mut ChaCha12Rng) -> CsrMatrix<T> {
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::new();
        for j in 0..n {
            if rng.random_range(0.0..1.0) < density {
                row.push((j, num(rng.random_range(-1.0..1.0))));
            }
        }
        rows.push(row);
    }
    CsrMatrix::from_rows(n, n, rows)
}

impl<T: Scalar> Reservoir<T> for ClassicalReservoir<T> {
    fn state_dim(&self) -> usize {
        self.n_r
    }

    fn input_dim(&self) -> usize {
        self.n_u
    }

    fn leak_rate(&self) -> T {
        self.eps
    }

    /// Small-norm start, uniform in [-0.1, 0.1] per component.
    fn initial_state(&self, rng: &mut ChaCha12Rng) -> Array1<T> {
        Array1::from_iter((0..self.n_r).map(|_| num(rng.random_range(-0.1..0.1))))
    }

    fn activate(&self, r_prev: &Array1<T>, u: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if u.len() != self.n_u {
            return Err(ReservoirError::InputDimension {
                expected: self.n_u,
                got: u.len(),
            });
        }
        Ok(self.activation(r_prev.view(), u))
    }
}

/// Gate-based reservoir: the state is the leaky-integrated probability
/// vector of the step circuit, so N_r = 2^n.
#[derive(Debug, Clone)]
pub struct QuantumReservoir<T> {
    pub cfg: AnsatzConfig<T>,
    pub eps: T,
    pub n_u: usize,
    pub seed: u64,
}

/// Hyperparameters that deterministically regenerate a quantum reservoir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumReservoirSpec<T> {
    pub n: usize,
    pub config: ConfigId,
    pub n_u: usize,
    pub eps: T,
    pub seed: u64,
}

impl<T: Scalar> QuantumReservoir<T> {
    pub fn init(n: usize, config: ConfigId, n_u: usize, eps: T, seed: u64) -> Result<Self> {
        check_param("n", n >= 1, n as f64)?;
        check_param("n_u", n_u >= 1, n_u as f64)?;
        let e_f = eps.to_f64().unwrap();
        check_param("eps", e_f > 0.0 && e_f <= 1.0, e_f)?;
        Ok(QuantumReservoir {
            cfg: AnsatzConfig::new(config, n, seed),
            eps,
            n_u,
            seed,
        })
    }

    pub fn from_spec(spec: &QuantumReservoirSpec<T>) -> Result<Self> {
        Self::init(spec.n, spec.config, spec.n_u, spec.eps, spec.seed)
    }

    pub fn spec(&self) -> QuantumReservoirSpec<T> {
        QuantumReservoirSpec {
            n: self.qubits(),
            config: self.cfg.config,
            n_u: self.n_u,
            eps: self.eps,
            seed: self.seed,
        }
    }

    pub fn qubits(&self) -> usize {
        self.cfg.qubits()
    }

    /// Runs the step circuit and reads the exact probabilities r_hat.
    /// When the ansatz carries a reservoir encoding P, the previous state is
    /// rescaled by its maximum so the angles span the full range (raw
    /// probabilities ~ 1/2^n would give near-identity rotations).
    pub fn circuit_probabilities(
        &self,
        r_prev: ArrayView1<'_, T>,
        u: ArrayView1<'_, T>,
    ) -> Result<Array1<T>> {
        let r_scaled: Vec<T> = if self.cfg.config.has_recurrence() {
            let max = r_prev.iter().cloned().fold(T::zero(), T::max);
            if max > T::zero() {
                r_prev.iter().map(|v| *v / max).collect()
            } else {
                r_prev.to_vec()
            }
        } else {
            Vec::new()
        };
        let u_vec = u.to_vec();
        let circuit = build_step_circuit(&self.cfg, &r_scaled, &u_vec)?;
        Ok(circuit.run()?.probabilities())
    }
}

impl<T: Scalar> Reservoir<T> for QuantumReservoir<T> {
    fn state_dim(&self) -> usize {
        1 << self.qubits()
    }

    fn input_dim(&self) -> usize {
        self.n_u
    }

    fn leak_rate(&self) -> T {
        self.eps
    }

    /// Uniform probability vector 1/2^n.
    fn initial_state(&self, _rng: &mut ChaCha12Rng) -> Array1<T> {
        let dim = self.state_dim();
        Array1::from_elem(dim, T::one() / num(dim as f64))
    }

    fn activate(&self, r_prev: &Array1<T>, u: ArrayView1<'_, T>) -> Result<Array1<T>> {
        self.circuit_probabilities(r_prev.view(), u)
    }

    fn clips_feedback(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// state updates and drivers
// ---------------------------------------------------------------------------

/// Leaky state update r = (1 - eps) r_prev + eps r_hat.
pub fn leaky_update<T: Scalar>(r_prev: &Array1<T>, r_hat: &Array1<T>, eps: T) -> Array1<T> {
    let keep = T::one() - eps;
    Array1::from_iter(
        r_prev
            .iter()
            .zip(r_hat.iter())
            .map(|(p, h)| keep * *p + eps * *h),
    )
}

/// One full quantum step: circuit probabilities followed by the leaky update.
pub fn step_quantum<T: Scalar>(
    res: &QuantumReservoir<T>,
    r_prev: &Array1<T>,
    u: ArrayView1<'_, T>,
) -> Result<Array1<T>> {
    let r_hat = res.circuit_probabilities(r_prev.view(), u)?;
    Ok(leaky_update(r_prev, &r_hat, res.eps))
}

/// Drives the reservoir in open loop over the given scaled input rows and
/// returns every post-leak state (one row per input).
pub fn open_loop<T: Scalar, R: Reservoir<T> + ?Sized>(
    res: &R,
    inputs: ArrayView2<'_, T>,
    r0: Array1<T>,
) -> Result<Array2<T>> {
    let mut states = Array2::zeros((inputs.nrows(), res.state_dim()));
    let mut r = r0;
    let eps = res.leak_rate();
    for (i, u) in inputs.rows().into_iter().enumerate() {
        let r_hat = res.activate(&r, u)?;
        r = leaky_update(&r, &r_hat, eps);
        states.row_mut(i).assign(&r);
    }
    Ok(states)
}

/// Bias-augmented reservoir state matrix harvested from an open-loop run.
pub struct Harvest<T> {
    /// (N_r + 1) x K states after washout, constant 1 bias row appended.
    pub states: Array2<T>,
    /// Reservoir state after the final input, for chaining into prediction.
    pub final_state: Array1<T>,
}

/// Open-loop evolution over a scaled segment from a seeded random initial
/// state; the first `n_w` states are discarded (washout). A segment of S
/// rows yields S-1 transitions and S-1-n_w retained columns.
pub fn harvest<T: Scalar, R: Reservoir<T> + ?Sized>(
    res: &R,
    segment: ArrayView2<'_, T>,
    n_w: usize,
    r0_seed: u64,
) -> Result<Harvest<T>> {
    let rows = segment.nrows();
    if rows < n_w + 2 {
        return Err(ReservoirError::SegmentTooShort {
            washout: n_w,
            got: rows,
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(r0_seed);
    let r0 = res.initial_state(&mut rng);
    let states = open_loop(res, segment.slice(s![..rows - 1, ..]), r0)?;
    let kept = states.slice(s![n_w.., ..]);
    let k = kept.nrows();

    let mut r_matrix = Array2::ones((res.state_dim() + 1, k));
    r_matrix
        .slice_mut(s![..res.state_dim(), ..])
        .assign(&kept.t());
    let final_state = states.row(states.nrows() - 1).to_owned();
    Ok(Harvest {
        states: r_matrix,
        final_state,
    })
}

/// The one-step-ahead targets matching [`harvest`]: rows n_w+1 .. S of the
/// same segment, transposed to N_u x K.
pub fn harvest_targets<'a, T: Scalar>(
    segment: &'a ArrayView2<'_, T>,
    n_w: usize,
) -> ArrayView2<'a, T> {
    segment.slice_move(s![n_w + 1.., ..]).reversed_axes()
}

// ---------------------------------------------------------------------------
// ridge readout
// ---------------------------------------------------------------------------

/// Ridge-regression readout: W_out maps bias-augmented states to outputs.
#[derive(Debug, Clone)]
pub struct TrainedReadout<T> {
    /// (N_r + 1) x N_u.
    pub w_out: Array2<T>,
    pub beta: T,
}

impl<T: Scalar> TrainedReadout<T> {
    /// u_p = [r, 1]^T W_out for a bias-augmented state.
    pub fn predict(&self, r_aug: ArrayView1<'_, T>) -> Array1<T> {
        self.w_out.t().dot(&r_aug)
    }
}

/// Solves (R R^T + beta I) W_out = R U_d^T by Cholesky factorization with one
/// step of iterative refinement; targets U_d are N_u x K.
pub fn train_readout<T: Scalar>(
    r_matrix: &Array2<T>,
    targets: ArrayView2<'_, T>,
    beta: T,
) -> Result<TrainedReadout<T>> {
    if r_matrix.ncols() != targets.ncols() {
        return Err(ReservoirError::ColumnMismatch {
            r_cols: r_matrix.ncols(),
            target_cols: targets.ncols(),
        });
    }
    let gram = r_matrix.dot(&r_matrix.t());
    let rhs = r_matrix.dot(&targets.t());
    solve_normal_equations(gram, rhs, beta)
}

fn frobenius<T: Scalar>(m: &ArrayView2<'_, T>) -> T {
    m.iter().map(|v| *v * *v).sum::<T>().sqrt()
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
fn cholesky<T: Scalar>(a: &Array2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= T::zero() {
                    return Err(ReservoirError::SingularSystem);
                }
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solves L L^T X = B for every column of B.
fn solve_cholesky<T: Scalar>(l: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let n = l.nrows();
    let mut x = b.clone();
    for col in 0..b.ncols() {
        // forward substitution L y = b
        for i in 0..n {
            let mut sum = x[(i, col)];
            for k in 0..i {
                sum -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = sum / l[(i, i)];
        }
        // back substitution L^T x = y
        for i in (0..n).rev() {
            let mut sum = x[(i, col)];
            for k in i + 1..n {
                sum -= l[(k, i)] * x[(k, col)];
            }
            x[(i, col)] = sum / l[(i, i)];
        }
    }
    x
}

/// Harvests a scaled segment and trains the readout on its one-step-ahead
/// targets in one call.
pub fn fit_readout<T: Scalar, R: Reservoir<T> + ?Sized>(
    res: &R,
    segment: ArrayView2<'_, T>,
    n_w: usize,
    beta: T,
    r0_seed: u64,
) -> Result<TrainedReadout<T>> {
    let h = harvest(res, segment, n_w, r0_seed)?;
    let targets = harvest_targets(&segment, n_w);
    train_readout(&h.states, targets, beta)
}

/// Multi-series variant: each segment gets its own washout and the normal
/// equations accumulate across segments, so the concatenated state matrix
/// never has to be materialized.
pub fn fit_readout_multi<T: Scalar, R: Reservoir<T> + ?Sized>(
    res: &R,
    segments: &[ArrayView2<'_, T>],
    n_w: usize,
    beta: T,
    seed: u64,
) -> Result<TrainedReadout<T>> {
    let m = res.state_dim() + 1;
    let n_u = res.input_dim();
    let mut gram = Array2::<T>::zeros((m, m));
    let mut rhs = Array2::<T>::zeros((m, n_u));
    for (i, segment) in segments.iter().enumerate() {
        let h = harvest(res, *segment, n_w, derive_seed(seed, "harvest", i as u64))?;
        let targets = harvest_targets(segment, n_w);
        gram = gram + h.states.dot(&h.states.t());
        rhs = rhs + h.states.dot(&targets.t());
    }
    solve_normal_equations(gram, rhs, beta)
}

/// Shared tail of the ridge solve once R R^T and R U_d^T are in hand.
fn solve_normal_equations<T: Scalar>(
    mut gram: Array2<T>,
    rhs: Array2<T>,
    beta: T,
) -> Result<TrainedReadout<T>> {
    let m = gram.nrows();
    for i in 0..m {
        gram[(i, i)] += beta;
    }
    let factor = cholesky(&gram)?;
    let mut w = solve_cholesky(&factor, &rhs);
    // one refinement pass keeps the residual near machine precision even for
    // tiny beta
    let resid = &rhs - &gram.dot(&w);
    w += &solve_cholesky(&factor, &resid);

    let resid = &rhs - &gram.dot(&w);
    let rel = frobenius(&resid.view()) / frobenius(&rhs.view()).max(T::min_positive_value());
    let tolerance = num::<T>(1e-8).max(T::epsilon().sqrt());
    if rel > tolerance {
        return Err(ReservoirError::ResidualTooLarge {
            residual: rel.to_f64().unwrap(),
            tolerance: tolerance.to_f64().unwrap(),
        });
    }
    Ok(TrainedReadout { w_out: w, beta })
}

// ---------------------------------------------------------------------------
// prediction
// ---------------------------------------------------------------------------

/// [r, 1]^T W_out; output stays in the readout's (scaled) target space.
pub fn predict_step<T: Scalar>(r_aug: ArrayView1<'_, T>, readout: &TrainedReadout<T>) -> Array1<T> {
    readout.predict(r_aug)
}

/// Autonomous closed-loop run: predict, unscale for output, feed the scaled
/// prediction back as the next input. Returns `steps` rows in original units
/// plus the final reservoir state.
pub fn closed_loop<T: Scalar, R: Reservoir<T> + ?Sized>(
    res: &R,
    readout: &TrainedReadout<T>,
    scaling: &RangeScaling<T>,
    r_init: Array1<T>,
    steps: usize,
) -> Result<(Array2<T>, Array1<T>)> {
    let n_u = res.input_dim();
    let limit = num::<T>(DIVERGENCE_LIMIT);
    let mut out = Array2::zeros((steps, n_u));
    let mut r = r_init;
    let eps = res.leak_rate();
    for step in 0..steps {
        let mut r_aug = Array1::ones(r.len() + 1);
        r_aug.slice_mut(s![..r.len()]).assign(&r);
        let mut u_scaled = readout.predict(r_aug.view());
        for (j, v) in u_scaled.iter().enumerate() {
            let unscaled = scaling.unscale_value(j, *v);
            if !unscaled.is_finite() || unscaled.abs() > limit {
                return Err(ReservoirError::Divergence { step });
            }
            out[(step, j)] = unscaled;
        }
        if res.clips_feedback() {
            u_scaled.mapv_inplace(|v| v.max(T::zero()).min(T::one()));
        }
        let r_hat = res.activate(&r, u_scaled.view())?;
        r = leaky_update(&r, &r_hat, eps);
    }
    Ok((out, r))
}

/// Open-loop warm-up over true (scaled) data from a seeded initial state;
/// the returned state is ready to predict the row after the last input.
pub fn warmup<T: Scalar, R: Reservoir<T> + ?Sized>(
    res: &R,
    inputs: ArrayView2<'_, T>,
    seed: u64,
) -> Result<Array1<T>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let r0 = res.initial_state(&mut rng);
    if inputs.nrows() == 0 {
        return Ok(r0);
    }
    let states = open_loop(res, inputs, r0)?;
    Ok(states.row(states.nrows() - 1).to_owned())
}

// ---------------------------------------------------------------------------
// readout persistence: CSV matrix + JSON metadata
// ---------------------------------------------------------------------------

/// Sidecar metadata stored next to the readout weight CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReadoutMeta<T> {
    pub beta: T,
    pub n_r: usize,
    pub n_u: usize,
    pub seed: Option<u64>,
    pub scaling: Option<RangeScaling<T>>,
}

impl<T: Scalar> TrainedReadout<T> {
    pub fn save_csv(
        &self,
        path: &std::path::Path,
        seed: Option<u64>,
        scaling: Option<&RangeScaling<T>>,
    ) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for row in self.w_out.rows() {
            let line: Vec<String> = row
                .iter()
                .map(|v| format!("{:.16e}", v.to_f64().unwrap()))
                .collect();
            writeln!(f, "{}", line.join(","))?;
        }
        f.flush()?;
        let meta = ReadoutMeta {
            beta: self.beta,
            n_r: self.w_out.nrows() - 1,
            n_u: self.w_out.ncols(),
            seed,
            scaling: scaling.cloned(),
        };
        let mut json_path = path.as_os_str().to_owned();
        json_path.push(".json");
        std::fs::write(
            json_path,
            serde_json::to_string_pretty(&meta).map_err(|e| ReservoirError::Format(e.to_string()))?,
        )?;
        Ok(())
    }

    pub fn load_csv(path: &std::path::Path) -> Result<(Self, ReadoutMeta<T>)> {
        let mut json_path = path.as_os_str().to_owned();
        json_path.push(".json");
        let meta: ReadoutMeta<T> =
            serde_json::from_str(&std::fs::read_to_string(std::path::PathBuf::from(json_path))?)
                .map_err(|e| ReservoirError::Format(e.to_string()))?;
        let text = std::fs::read_to_string(path)?;
        let mut vals = Vec::new();
        let mut n_rows = 0usize;
        for line in text.lines().filter(|l| !l.is_empty()) {
            for field in line.split(',') {
                let v: f64 = field
                    .parse()
                    .map_err(|e| ReservoirError::Format(format!("bad float: {e}")))?;
                vals.push(num::<T>(v));
            }
            n_rows += 1;
        }
        let n_cols = vals.len() / n_rows.max(1);
        let w_out = Array2::from_shape_vec((n_rows, n_cols), vals)
            .map_err(|e| ReservoirError::Format(e.to_string()))?;
        Ok((
            TrainedReadout {
                w_out,
                beta: meta.beta,
            },
            meta,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::array;

    fn small_reservoir(seed: u64) -> ClassicalReservoir<f64> {
        ClassicalReservoir::init(50, 3, 0.5, 0.9, 0.3, 0.5, seed).unwrap()
    }

    #[test]
    fn input_weights_bounded_by_sigma() {
        let res = small_reservoir(1);
        assert!(res.w_in.iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn zero_sigma_gives_zero_input_matrix() {
        let res = ClassicalReservoir::<f64>::init(20, 2, 0.0, 0.9, 0.5, 1.0, 3).unwrap();
        assert!(res.w_in.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn full_density_is_dense() {
        let res = ClassicalReservoir::<f64>::init(30, 2, 0.1, 0.5, 1.0, 1.0, 4).unwrap();
        assert_eq!(res.w.nnz(), 30 * 30);
    }

    #[test]
    fn density_within_binomial_band() {
        let n = 80;
        let d = 0.3f64;
        let res = ClassicalReservoir::<f64>::init(n, 2, 0.1, 0.5, d, 1.0, 7).unwrap();
        let cells = (n * n) as f64;
        let std = (cells * d * (1.0 - d)).sqrt();
        let nnz = res.w.nnz() as f64;
        assert!(
            (nnz - cells * d).abs() <= 3.0 * std,
            "nnz {nnz} outside 3 sigma of {}",
            cells * d
        );
    }

    #[test]
    fn requested_spectral_radius_is_hit() {
        for seed in 0..5 {
            let res = ClassicalReservoir::<f64>::init(60, 2, 0.1, 0.9, 0.2, 1.0, seed).unwrap();
            let measured = spectral_radius(&res.w, 10_000, 1e-10).unwrap();
            assert_relative_eq!(measured, 0.9, max_relative = 1e-6);
        }
    }

    /// Dense eigenvalue cross-check of the power iteration on small matrices.
    #[test]
    fn spectral_radius_matches_dense_eigenvalues() {
        use nalgebra::DMatrix;
        for seed in in_seeds() {
            let res = ClassicalReservoir::<f64>::init(40, 2, 0.1, 0.7, 0.25, 1.0, seed).unwrap();
            let dense = res.w.to_dense();
            let m = DMatrix::from_fn(40, 40, |i, j| dense[(i, j)]);
            let rho_ref = m
                .complex_eigenvalues()
                .iter()
                .map(|c| c.norm())
                .fold(0.0f64, f64::max);
            let rho_pi = spectral_radius(&res.w, 10_000, 1e-10).unwrap();
            assert_relative_eq!(rho_pi, rho_ref, max_relative = 1e-6);
        }
    }

    fn in_seeds() -> std::ops::Range<u64> {
        0..6
    }

    #[test]
    fn init_is_deterministic() {
        let a = small_reservoir(9);
        let b = small_reservoir(9);
        assert_eq!(a.w_in, b.w_in);
        assert_eq!(a.w, b.w);
    }

    #[test]
    fn init_rejects_bad_parameters() {
        assert!(ClassicalReservoir::<f64>::init(10, 1, 0.1, 0.0, 0.5, 1.0, 0).is_err());
        assert!(ClassicalReservoir::<f64>::init(10, 1, 0.1, 1.5, 0.5, 1.0, 0).is_err());
        assert!(ClassicalReservoir::<f64>::init(10, 1, 0.1, 0.9, 0.0, 1.0, 0).is_err());
        assert!(ClassicalReservoir::<f64>::init(10, 1, 0.1, 0.9, 0.5, 0.0, 0).is_err());
    }

    #[test]
    fn activation_zero_fixed_point_and_range() {
        let res = small_reservoir(2);
        let r = Array1::zeros(50);
        let u = Array1::zeros(3);
        let out = res.activation(r.view(), u.view());
        assert!(out.iter().all(|v| *v == 0.0));

        let u = array![1.0, 1.0, 1.0];
        let r = Array1::from_elem(50, 0.9);
        let out = res.activation(r.view(), u.view());
        assert!(out.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn activation_two_neuron_hand_case() {
        // W_in = [[1], [0]], W = 0, u = 1 -> (tanh 1, 0)
        let res = ClassicalReservoir::<f64> {
            n_r: 2,
            n_u: 1,
            w_in: array![[1.0], [0.0]],
            w: CsrMatrix::from_rows(2, 2, vec![vec![], vec![]]),
            sigma_in: 1.0,
            rho: 0.9,
            density: 0.5,
            eps: 1.0,
            seed: 0,
        };
        let out = res.activation(Array1::zeros(2).view(), array![1.0].view());
        assert_abs_diff_eq!(out[0], 1.0f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.0);
    }

    #[test]
    fn leaky_update_limits() {
        let r = array![0.2];
        let r_hat = array![0.6];
        assert_eq!(leaky_update(&r, &r_hat, 1.0), array![0.6]);
        assert_abs_diff_eq!(leaky_update(&r, &r_hat, 0.5)[0], 0.4, epsilon = 1e-15);
        let tiny = leaky_update(&r, &r_hat, 1e-12);
        assert_abs_diff_eq!(tiny[0], 0.2, epsilon = 1e-9);
    }

    #[test]
    fn harvest_shapes_and_bias_row() {
        let res = small_reservoir(5);
        let segment = Array2::from_shape_fn((12, 3), |(i, j)| ((i + j) as f64 * 0.37).sin() * 0.5 + 0.5);
        let h = harvest(&res, segment.view(), 3, 11).unwrap();
        assert_eq!(h.states.nrows(), 51);
        assert_eq!(h.states.ncols(), 12 - 1 - 3);
        assert!(h.states.row(50).iter().all(|v| *v == 1.0));

        // N_w = steps - 1 leaves exactly one column
        let h = harvest(&res, segment.view(), 10, 11).unwrap();
        assert_eq!(h.states.ncols(), 1);

        assert!(matches!(
            harvest(&res, segment.view(), 11, 11),
            Err(ReservoirError::SegmentTooShort { .. })
        ));
    }

    #[test]
    fn quantum_rf_step_ignores_previous_state_in_circuit() {
        let res = QuantumReservoir::<f64>::init(4, ConfigId::C4, 3, 1.0, 8).unwrap();
        let u = array![0.3, 0.6, 0.9];
        let r_a = Array1::from_elem(16, 1.0 / 16.0);
        let r_b = Array1::from_elem(16, 0.01);
        let p_a = res.circuit_probabilities(r_a.view(), u.view()).unwrap();
        let p_b = res.circuit_probabilities(r_b.view(), u.view()).unwrap();
        assert_eq!(p_a, p_b);
        assert_abs_diff_eq!(p_a.sum(), 1.0, epsilon = 1e-9);

        // eps = 1: repeated steps from different states coincide
        let s_a = step_quantum(&res, &r_a, u.view()).unwrap();
        let s_b = step_quantum(&res, &r_b, u.view()).unwrap();
        assert_eq!(s_a, s_b);
    }

    #[test]
    fn quantum_states_remain_distributions() {
        let res = QuantumReservoir::<f64>::init(3, ConfigId::C1, 2, 0.3, 2).unwrap();
        let mut r = Array1::from_elem(8, 1.0 / 8.0);
        for i in 0..20 {
            let u = array![0.5 + 0.4 * ((i as f64) * 0.7).sin(), 0.5];
            let r_hat = res.circuit_probabilities(r.view(), u.view()).unwrap();
            assert_abs_diff_eq!(r_hat.sum(), 1.0, epsilon = 1e-9);
            assert!(r_hat.iter().all(|p| *p >= 0.0));
            r = leaky_update(&r, &r_hat, res.eps);
            assert!(r.sum() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn ridge_matches_explicit_pseudo_inverse() {
        use nalgebra::DMatrix;
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        for case in 0..5 {
            let m = 5;
            let k = 5;
            let r = Array2::from_shape_fn((m, k), |_| rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_fn((2, k), |_| rng.random_range(-1.0..1.0));
            let beta = 1e-3;
            let readout = train_readout(&r, y.view(), beta).unwrap();

            let rn = DMatrix::from_fn(m, k, |i, j| r[(i, j)]);
            let yn = DMatrix::from_fn(2, k, |i, j| y[(i, j)]);
            let a = &rn * rn.transpose() + DMatrix::identity(m, m) * beta;
            let w_ref = a.try_inverse().unwrap() * rn * yn.transpose();
            for i in 0..m {
                for j in 0..2 {
                    assert_abs_diff_eq!(readout.w_out[(i, j)], w_ref[(i, j)], epsilon = 1e-8);
                }
            }
            let _ = case;
        }
    }

    #[test]
    fn ridge_interpolates_square_invertible_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let m = 6;
        let r = Array2::from_shape_fn((m, m), |(i, j)| {
            rng.random_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 }
        });
        let y = Array2::from_shape_fn((1, m), |_| rng.random_range(-1.0..1.0));
        let readout = train_readout(&r, y.view(), 0.0).unwrap();
        let reproduced = readout.w_out.t().dot(&r);
        for (a, b) in reproduced.iter().zip(y.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn ridge_shrinks_to_zero_with_huge_beta() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let r = Array2::from_shape_fn((8, 40), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((2, 40), |_| rng.random_range(-1.0..1.0));
        let readout = train_readout(&r, y.view(), 1e12).unwrap();
        let norm = frobenius(&readout.w_out.view());
        assert!(norm < 1e-6, "norm {norm}");
    }

    #[test]
    fn ridge_rejects_singular_without_regularization() {
        // rank-deficient: duplicated rows
        let r = array![[1.0, 2.0], [1.0, 2.0]];
        let y = array![[1.0, 0.0]];
        assert!(matches!(
            train_readout(&r, y.view(), 0.0),
            Err(ReservoirError::SingularSystem)
        ));
    }

    #[test]
    fn ridge_solution_is_a_local_minimum() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let r = Array2::from_shape_fn((6, 30), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((2, 30), |_| rng.random_range(-1.0..1.0));
        let beta = 1e-4;
        let readout = train_readout(&r, y.view(), beta).unwrap();
        let loss = |w: &Array2<f64>| {
            let err = &w.t().dot(&r) - &y;
            err.iter().map(|v| v * v).sum::<f64>() + beta * w.iter().map(|v| v * v).sum::<f64>()
        };
        let base = loss(&readout.w_out);
        for (i, j) in [(0usize, 0usize), (3, 1), (5, 0), (6 - 1, 1)] {
            for delta in [1e-3, -1e-3] {
                let mut w = readout.w_out.clone();
                w[(i, j)] += delta;
                assert!(loss(&w) >= base, "perturbing ({i},{j}) improved the loss");
            }
        }
    }

    #[test]
    fn predict_step_cases() {
        let readout = TrainedReadout {
            w_out: Array2::zeros((4, 2)),
            beta: 1e-9,
        };
        let out = predict_step(array![0.5, -0.1, 0.8, 1.0].view(), &readout);
        assert_eq!(out, array![0.0, 0.0]);

        // hand 3x2 case including the bias row
        let readout = TrainedReadout {
            w_out: array![[1.0, 0.5], [2.0, -1.0], [0.0, 3.0]],
            beta: 0.0,
        };
        let out = predict_step(array![2.0, 1.0, 1.0].view(), &readout);
        assert_abs_diff_eq!(out[0], 2.0 + 2.0);
        assert_abs_diff_eq!(out[1], 1.0 - 1.0 + 3.0);
    }

    #[test]
    fn closed_loop_zero_steps_is_empty() {
        let res = small_reservoir(6);
        let readout = TrainedReadout {
            w_out: Array2::zeros((51, 3)),
            beta: 1e-9,
        };
        let scaling = RangeScaling {
            min: vec![0.0; 3],
            max: vec![1.0; 3],
        };
        let (out, _) = closed_loop(&res, &readout, &scaling, Array1::zeros(50), 0).unwrap();
        assert_eq!(out.nrows(), 0);
    }

    #[test]
    fn reservoir_spec_round_trip_regenerates_identical_matrices() {
        let res = small_reservoir(21);
        let json = serde_json::to_string(&res.spec()).unwrap();
        let spec: ClassicalReservoirSpec<f64> = serde_json::from_str(&json).unwrap();
        let again = ClassicalReservoir::from_spec(&spec).unwrap();
        assert_eq!(res.w_in, again.w_in);
        assert_eq!(res.w, again.w);

        let q = QuantumReservoir::<f64>::init(4, ConfigId::C4, 3, 0.2, 17).unwrap();
        let qjson = serde_json::to_string(&q.spec()).unwrap();
        let qspec: QuantumReservoirSpec<f64> = serde_json::from_str(&qjson).unwrap();
        let q2 = QuantumReservoir::from_spec(&qspec).unwrap();
        assert_eq!(q.cfg, q2.cfg);
    }

    #[test]
    fn readout_csv_round_trip() {
        let readout = TrainedReadout {
            w_out: array![[1.0, -0.25], [1e-17, 3.5e9], [0.1, 0.2]],
            beta: 1e-9,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("readout.csv");
        readout.save_csv(&path, Some(3), None).unwrap();
        let (back, meta) = TrainedReadout::<f64>::load_csv(&path).unwrap();
        assert_eq!(back.w_out, readout.w_out);
        assert_eq!(meta.beta, 1e-9);
        assert_eq!(meta.n_r, 2);
        assert_eq!(meta.seed, Some(3));
    }
}
