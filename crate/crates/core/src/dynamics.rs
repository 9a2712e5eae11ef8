//! Chaotic benchmark systems and dataset preparation.
//!
//! Three autonomous ODE systems are provided: Lorenz-63, the m-dimensional
//! Lorenz-96 ring, and the nine-mode Galerkin model of sinusoidal shear flow
//! between free-slip walls (Moehlis/Faisst/Eckhardt reduction). All are
//! integrated with classical RK4 at a fixed step.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{derive_seed, num, Scalar};

/// Time step used for the shear-flow model throughout.
pub const MFE_DT: f64 = 0.25;
/// Kinetic-energy threshold above which a burst counts as an extreme event.
pub const MFE_KE_THRESHOLD: f64 = 0.1;
/// Leading Lyapunov exponents of the three systems (inverse time units).
pub const LORENZ63_LYAPUNOV: f64 = 0.9;
pub const LORENZ96_LYAPUNOV: f64 = 1.2;
pub const MFE_LYAPUNOV: f64 = 0.0163;

/// Divergence guard for integration and closed-loop prediction.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("state has dimension {got}, system expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value produced in RK4 stage {stage}")]
    NumericOverflow { stage: &'static str },
    #[error("trajectory diverged at step {step} (component magnitude exceeds 1e6)")]
    Divergence { step: usize },
    #[error("component {component} has zero range; cannot rescale")]
    DegenerateRange { component: usize },
    #[error("insufficient data: {required} steps required, {available} available")]
    InsufficientData { required: usize, available: usize },
    #[error("kinetic energy expects 9 mode amplitudes, got {got}")]
    NotNineModes { got: usize },
    #[error("Lorenz-96 needs at least 4 variables, got {got}")]
    StencilTooSmall { got: usize },
    #[error("all {count} ensemble members laminarized; nothing retained")]
    EmptyEnsemble { count: usize },
    #[error("trajectory file malformed: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<V> = std::result::Result<V, DynamicsError>;

// ---------------------------------------------------------------------------
// systems
// ---------------------------------------------------------------------------

/// One of the three benchmark systems, with its parameter record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound(deserialize = "T: Scalar"))]
pub enum SystemId<T> {
    Lorenz63 {
        #[serde(default = "default_l63_sigma")]
        sigma: T,
        #[serde(default = "default_l63_rho")]
        rho: T,
        #[serde(default = "default_l63_beta")]
        beta: T,
    },
    Lorenz96 {
        m: usize,
        #[serde(default = "default_l96_forcing")]
        forcing: T,
    },
    Mfe {
        #[serde(default = "default_mfe_reynolds")]
        reynolds: T,
    },
}

fn default_l63_sigma<T: Scalar>() -> T {
    num(10.0)
}
fn default_l63_rho<T: Scalar>() -> T {
    num(28.0)
}
fn default_l63_beta<T: Scalar>() -> T {
    num(8.0 / 3.0)
}
fn default_l96_forcing<T: Scalar>() -> T {
    num(8.0)
}
fn default_mfe_reynolds<T: Scalar>() -> T {
    num(400.0)
}

impl<T: Scalar> SystemId<T> {
    /// Lorenz-63 at the classical chaotic parameters sigma=10, rho=28, beta=8/3.
    pub fn lorenz63() -> Self {
        SystemId::Lorenz63 {
            sigma: num(10.0),
            rho: num(28.0),
            beta: num(8.0 / 3.0),
        }
    }

    /// Lorenz-96 ring with m variables and forcing F=8.
    pub fn lorenz96(m: usize) -> Self {
        SystemId::Lorenz96 {
            m,
            forcing: num(8.0),
        }
    }

    /// Nine-mode shear-flow model at Re=400 (domain 4pi x 2 x 2pi).
    pub fn mfe() -> Self {
        SystemId::Mfe {
            reynolds: num(400.0),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SystemId::Lorenz63 { .. } => 3,
            SystemId::Lorenz96 { m, .. } => *m,
            SystemId::Mfe { .. } => 9,
        }
    }

    /// Leading Lyapunov exponent, taken as a per-system constant.
    /// (The Lorenz-96 value is for the ten-dimensional ring at F=8.)
    pub fn lyapunov_exponent(&self) -> T {
        match self {
            SystemId::Lorenz63 { .. } => num(LORENZ63_LYAPUNOV),
            SystemId::Lorenz96 { .. } => num(LORENZ96_LYAPUNOV),
            SystemId::Mfe { .. } => num(MFE_LYAPUNOV),
        }
    }

    /// Conventional fixed time step for generated datasets.
    pub fn default_dt(&self) -> T {
        match self {
            SystemId::Mfe { .. } => num(MFE_DT),
            _ => num(0.01),
        }
    }

    fn validate(&self) -> Result<()> {
        if let SystemId::Lorenz96 { m, .. } = self {
            if *m < 4 {
                return Err(DynamicsError::StencilTooSmall { got: *m });
            }
        }
        Ok(())
    }

    fn compile(&self) -> Result<Compiled<T>> {
        self.validate()?;
        Ok(match self {
            SystemId::Lorenz63 { sigma, rho, beta } => Compiled::Lorenz63 {
                sigma: *sigma,
                rho: *rho,
                beta: *beta,
            },
            SystemId::Lorenz96 { m, forcing } => Compiled::Lorenz96 {
                m: *m,
                forcing: *forcing,
            },
            SystemId::Mfe { reynolds } => Compiled::Mfe(MfeCoeffs::new(*reynolds)),
        })
    }
}

/// Parameter-resolved right-hand side, with derived constants precomputed.
enum Compiled<T> {
    Lorenz63 { sigma: T, rho: T, beta: T },
    Lorenz96 { m: usize, forcing: T },
    Mfe(MfeCoeffs<T>),
}

impl<T: Scalar> Compiled<T> {
    fn dim(&self) -> usize {
        match self {
            Compiled::Lorenz63 { .. } => 3,
            Compiled::Lorenz96 { m, .. } => *m,
            Compiled::Mfe(_) => 9,
        }
    }

    fn rhs(&self, x: &[T], out: &mut [T]) {
        match self {
            Compiled::Lorenz63 { sigma, rho, beta } => {
                out[0] = *sigma * (x[1] - x[0]);
                out[1] = x[0] * (*rho - x[2]) - x[1];
                out[2] = x[0] * x[1] - *beta * x[2];
            }
            Compiled::Lorenz96 { m, forcing } => {
                let m = *m;
                for i in 0..m {
                    let ip1 = (i + 1) % m;
                    let im1 = (i + m - 1) % m;
                    let im2 = (i + m - 2) % m;
                    out[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + *forcing;
                }
            }
            Compiled::Mfe(c) => c.rhs(x, out),
        }
    }
}

/// Coefficients of the nine coupled amplitude equations for sinusoidal shear
/// flow, derived from the domain (Lx, Ly, Lz) = (4pi, 2, 2pi) wavenumbers
/// alpha = 2pi/Lx, beta = pi/2, gamma = 2pi/Lz and the Reynolds number.
/// The laminar profile a = (1, 0, ..., 0) is an exact fixed point.
struct MfeCoeffs<T> {
    re_inv: T,
    alpha: T,
    beta: T,
    gamma: T,
    k_ag: T,   // sqrt(alpha^2 + gamma^2)
    k_bg: T,   // sqrt(beta^2 + gamma^2)
    k_abg: T,  // sqrt(alpha^2 + beta^2 + gamma^2)
    s32_bg_kbg: T,  // sqrt(3/2) beta gamma / k_bg
    s32_bg_kabg: T, // sqrt(3/2) beta gamma / k_abg
}

impl<T: Scalar> MfeCoeffs<T> {
    fn new(reynolds: T) -> Self {
        let pi = T::from_f64(std::f64::consts::PI).unwrap();
        let alpha = num::<T>(2.0) * pi / (num::<T>(4.0) * pi); // 2pi/Lx
        let beta = pi / num(2.0);
        let gamma = num::<T>(2.0) * pi / (num::<T>(2.0) * pi); // 2pi/Lz
        let k_ag = (alpha * alpha + gamma * gamma).sqrt();
        let k_bg = (beta * beta + gamma * gamma).sqrt();
        let k_abg = (alpha * alpha + beta * beta + gamma * gamma).sqrt();
        let s32 = num::<T>(1.5).sqrt();
        MfeCoeffs {
            re_inv: T::one() / reynolds,
            alpha,
            beta,
            gamma,
            k_ag,
            k_bg,
            k_abg,
            s32_bg_kbg: s32 * beta * gamma / k_bg,
            s32_bg_kabg: s32 * beta * gamma / k_abg,
        }
    }

    #[allow(clippy::many_single_char_names)]
    fn rhs(&self, a: &[T], d: &mut [T]) {
        let (al, be, ga) = (self.alpha, self.beta, self.gamma);
        let (kag, kbg, kabg) = (self.k_ag, self.k_bg, self.k_abg);
        let re_inv = self.re_inv;
        let s6 = num::<T>(6.0).sqrt();
        let s32 = num::<T>(1.5).sqrt();
        let s23 = num::<T>(2.0 / 3.0).sqrt();
        let (a1, a2, a3, a4, a5, a6, a7, a8, a9) =
            (a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]);

        d[0] = be * be * re_inv * (T::one() - a1) - self.s32_bg_kabg * a6 * a8
            + self.s32_bg_kbg * a2 * a3;

        d[1] = -(num::<T>(4.0) * be * be / num(3.0) + ga * ga) * a2 * re_inv
            + num::<T>(5.0) * num::<T>(2.0).sqrt() / (num::<T>(3.0) * num::<T>(3.0).sqrt())
                * ga * ga / kag * a4 * a6
            - ga * ga / (s6 * kag) * a5 * a7
            - al * be * ga / (s6 * kag * kabg) * a5 * a8
            - self.s32_bg_kbg * (a1 * a3 + a3 * a9);

        d[2] = -(be * be + ga * ga) * re_inv * a3
            + num::<T>(2.0) * al * be * ga / (s6 * kag * kbg) * (a4 * a7 + a5 * a6)
            + (be * be * (num::<T>(3.0) * al * al + ga * ga)
                - num::<T>(3.0) * ga * ga * (al * al + ga * ga))
                / (s6 * kag * kbg * kabg)
                * a4
                * a8;

        d[3] = -(num::<T>(3.0) * al * al + num::<T>(4.0) * be * be) / num(3.0) * re_inv * a4
            - al / s6 * a1 * a5
            - num::<T>(10.0) * al * al / (num::<T>(3.0) * s6 * kag) * a2 * a6
            - s32 * al * be * ga / (kag * kbg) * a3 * a7
            - s32 * al * al * be * be / (kag * kbg * kabg) * a3 * a8
            - al / s6 * a5 * a9;

        d[4] = -(al * al + be * be) * re_inv * a5
            + al / s6 * a1 * a4
            + al * al / (s6 * kag) * a2 * a7
            - al * be * ga / (s6 * kag * kabg) * a2 * a8
            + al / s6 * a4 * a9
            + num::<T>(2.0) * al * be * ga / (s6 * kag * kbg) * a3 * a6;

        d[5] = -(num::<T>(3.0) * al * al + num::<T>(4.0) * be * be + num::<T>(3.0) * ga * ga)
            / num(3.0)
            * re_inv
            * a6
            + al / s6 * a1 * a7
            + self.s32_bg_kabg * a1 * a8
            + num::<T>(10.0) * (al * al - ga * ga) / (num::<T>(3.0) * s6 * kag) * a2 * a4
            - num::<T>(2.0) * s23 * al * be * ga / (kag * kbg) * a3 * a5
            + al / s6 * a7 * a9
            + self.s32_bg_kabg * a8 * a9;

        d[6] = -(al * al + be * be + ga * ga) * re_inv * a7
            - al / s6 * (a1 * a6 + a6 * a9)
            + (ga * ga - al * al) / (s6 * kag) * a2 * a5
            + al * be * ga / (s6 * kag * kbg) * a3 * a4;

        d[7] = -(al * al + be * be + ga * ga) * re_inv * a8
            + num::<T>(2.0) * al * be * ga / (s6 * kag * kabg) * a2 * a5
            + ga * ga * (num::<T>(3.0) * al * al - be * be + num::<T>(3.0) * ga * ga)
                / (s6 * kag * kbg * kabg)
                * a3
                * a4;

        d[8] = -num::<T>(9.0) * be * be * re_inv * a9 + self.s32_bg_kbg * a2 * a3
            - self.s32_bg_kabg * a6 * a8;
    }
}

// ---------------------------------------------------------------------------
// integration
// ---------------------------------------------------------------------------

/// dx/dt of the system at x.
pub fn system_rhs<T: Scalar>(system: &SystemId<T>, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
    let compiled = system.compile()?;
    check_dim(&compiled, x.len())?;
    let xs = x.to_vec();
    let mut out = vec![T::zero(); xs.len()];
    compiled.rhs(&xs, &mut out);
    Ok(Array1::from_vec(out))
}

fn check_dim<T: Scalar>(compiled: &Compiled<T>, got: usize) -> Result<()> {
    if got != compiled.dim() {
        return Err(DynamicsError::DimensionMismatch {
            expected: compiled.dim(),
            got,
        });
    }
    Ok(())
}

/// Scratch buffers for one RK4 update, reused across steps.
struct Rk4Scratch<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
}

impl<T: Scalar> Rk4Scratch<T> {
    fn new(dim: usize) -> Self {
        Rk4Scratch {
            k1: vec![T::zero(); dim],
            k2: vec![T::zero(); dim],
            k3: vec![T::zero(); dim],
            k4: vec![T::zero(); dim],
            tmp: vec![T::zero(); dim],
        }
    }
}

fn rk4_step_into<T: Scalar>(
    compiled: &Compiled<T>,
    x: &[T],
    dt: T,
    scratch: &mut Rk4Scratch<T>,
    out: &mut [T],
) -> Result<()> {
    let half = dt / num(2.0);
    let sixth = dt / num(6.0);
    let two = num::<T>(2.0);

    compiled.rhs(x, &mut scratch.k1);
    stage_check(&scratch.k1, "k1")?;
    for i in 0..x.len() {
        scratch.tmp[i] = x[i] + half * scratch.k1[i];
    }
    compiled.rhs(&scratch.tmp, &mut scratch.k2);
    stage_check(&scratch.k2, "k2")?;
    for i in 0..x.len() {
        scratch.tmp[i] = x[i] + half * scratch.k2[i];
    }
    compiled.rhs(&scratch.tmp, &mut scratch.k3);
    stage_check(&scratch.k3, "k3")?;
    for i in 0..x.len() {
        scratch.tmp[i] = x[i] + dt * scratch.k3[i];
    }
    compiled.rhs(&scratch.tmp, &mut scratch.k4);
    stage_check(&scratch.k4, "k4")?;

    for i in 0..x.len() {
        out[i] = x[i]
            + sixth * (scratch.k1[i] + two * scratch.k2[i] + two * scratch.k3[i] + scratch.k4[i]);
    }
    Ok(())
}

fn stage_check<T: Scalar>(k: &[T], stage: &'static str) -> Result<()> {
    if k.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NumericOverflow { stage });
    }
    Ok(())
}

/// One classical fourth-order Runge-Kutta update.
pub fn rk4_step<T: Scalar>(system: &SystemId<T>, x: ArrayView1<'_, T>, dt: T) -> Result<Array1<T>> {
    let compiled = system.compile()?;
    check_dim(&compiled, x.len())?;
    let xs = x.to_vec();
    let mut scratch = Rk4Scratch::new(xs.len());
    let mut out = vec![T::zero(); xs.len()];
    rk4_step_into(&compiled, &xs, dt, &mut scratch, &mut out)?;
    Ok(Array1::from_vec(out))
}

/// Integrates the system for `steps` RK4 updates, producing steps+1 rows
/// starting at x0 and carrying the system's Lyapunov constant.
pub fn integrate<T: Scalar>(
    system: &SystemId<T>,
    x0: ArrayView1<'_, T>,
    steps: usize,
    dt: T,
) -> Result<Trajectory<T>> {
    let compiled = system.compile()?;
    check_dim(&compiled, x0.len())?;
    let dim = x0.len();
    let limit = num::<T>(DIVERGENCE_LIMIT);

    let mut data = Array2::zeros((steps + 1, dim));
    let mut x = x0.to_vec();
    let mut next = vec![T::zero(); dim];
    let mut scratch = Rk4Scratch::new(dim);
    data.row_mut(0).assign(&x0);

    for step in 0..steps {
        rk4_step_into(&compiled, &x, dt, &mut scratch, &mut next)?;
        if next.iter().any(|v| v.abs() > limit) {
            return Err(DynamicsError::Divergence { step });
        }
        x.copy_from_slice(&next);
        for (j, v) in x.iter().enumerate() {
            data[(step + 1, j)] = *v;
        }
    }

    Ok(Trajectory {
        data,
        dt,
        lyapunov: system.lyapunov_exponent(),
        scaling: None,
    })
}

// ---------------------------------------------------------------------------
// trajectories and scaling
// ---------------------------------------------------------------------------

/// Component-wise affine map onto [0, 1] fitted from data ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeScaling<T> {
    pub min: Vec<T>,
    pub max: Vec<T>,
}

impl<T: Scalar> RangeScaling<T> {
    /// Fits per-component min/max. Errors on a constant component.
    pub fn fit(data: ArrayView2<'_, T>) -> Result<Self> {
        let dim = data.ncols();
        let mut min = vec![T::infinity(); dim];
        let mut max = vec![T::neg_infinity(); dim];
        for row in data.rows() {
            for j in 0..dim {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        for j in 0..dim {
            if !(max[j] > min[j]) {
                return Err(DynamicsError::DegenerateRange { component: j });
            }
        }
        Ok(RangeScaling { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn scale_value(&self, j: usize, v: T) -> T {
        (v - self.min[j]) / (self.max[j] - self.min[j])
    }

    pub fn unscale_value(&self, j: usize, v: T) -> T {
        self.min[j] + v * (self.max[j] - self.min[j])
    }

    pub fn scale(&self, data: ArrayView2<'_, T>) -> Array2<T> {
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            for j in 0..self.dim() {
                row[j] = self.scale_value(j, row[j]);
            }
        }
        out
    }

    pub fn unscale(&self, data: ArrayView2<'_, T>) -> Array2<T> {
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            for j in 0..self.dim() {
                row[j] = self.unscale_value(j, row[j]);
            }
        }
        out
    }
}

/// Uniformly sampled multivariate time series with step and scaling metadata.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    /// (steps+1) x N_u samples.
    pub data: Array2<T>,
    /// Seconds per step.
    pub dt: T,
    /// Leading Lyapunov exponent attached to the data.
    pub lyapunov: T,
    /// Set once the data has been range-scaled to [0, 1].
    pub scaling: Option<RangeScaling<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Lyapunov-time interval converted to integration steps, rounded half-up.
    pub fn lt_to_steps(&self, lt: T) -> usize {
        lt_to_steps(lt, self.lyapunov, self.dt)
    }

    /// Steps converted to Lyapunov times.
    pub fn steps_to_lt(&self, steps: usize) -> T {
        num::<T>(steps as f64) * self.dt * self.lyapunov
    }

    /// Rows [start, start+len) as a new trajectory with the same metadata.
    pub fn segment(&self, start: usize, len: usize) -> Trajectory<T> {
        Trajectory {
            data: self.data.slice(ndarray::s![start..start + len, ..]).to_owned(),
            dt: self.dt,
            lyapunov: self.lyapunov,
            scaling: self.scaling.clone(),
        }
    }
}

/// LT-to-step conversion shared by all protocol code: round(lt / (lambda dt)),
/// half away from zero.
pub fn lt_to_steps<T: Scalar>(lt: T, lyapunov: T, dt: T) -> usize {
    let steps = (lt / (lyapunov * dt)).to_f64().unwrap();
    (steps + 0.5).floor() as usize
}

/// Rescales every component onto [0, 1], recording the inverse map in the
/// returned trajectory's scaling metadata.
pub fn rescale_range<T: Scalar>(traj: &Trajectory<T>) -> Result<Trajectory<T>> {
    let scaling = RangeScaling::fit(traj.data.view())?;
    Ok(Trajectory {
        data: scaling.scale(traj.data.view()),
        dt: traj.dt,
        lyapunov: traj.lyapunov,
        scaling: Some(scaling),
    })
}

/// Inverse of [`rescale_range`]: restores original units.
pub fn unscale<T: Scalar>(traj: &Trajectory<T>) -> Trajectory<T> {
    match &traj.scaling {
        None => traj.clone(),
        Some(sc) => Trajectory {
            data: sc.unscale(traj.data.view()),
            dt: traj.dt,
            lyapunov: traj.lyapunov,
            scaling: None,
        },
    }
}

/// Splits a trajectory into contiguous washout/train/test row blocks of the
/// requested Lyapunov-time lengths.
pub fn split_dataset<T: Scalar>(
    traj: &Trajectory<T>,
    washout_lt: T,
    train_lt: T,
    test_lt: T,
) -> Result<(Trajectory<T>, Trajectory<T>, Trajectory<T>)> {
    let n_w = traj.lt_to_steps(washout_lt);
    let n_tr = traj.lt_to_steps(train_lt);
    let n_te = traj.lt_to_steps(test_lt);
    let required = n_w + n_tr + n_te;
    if required > traj.rows() {
        return Err(DynamicsError::InsufficientData {
            required,
            available: traj.rows(),
        });
    }
    Ok((
        traj.segment(0, n_w),
        traj.segment(n_w, n_tr),
        traj.segment(n_w + n_tr, n_te),
    ))
}

// ---------------------------------------------------------------------------
// kinetic energy and the shear-flow ensemble
// ---------------------------------------------------------------------------

/// k = (1/2) sum a_i^2 over the nine mode amplitudes.
pub fn kinetic_energy<T: Scalar>(a: ArrayView1<'_, T>) -> Result<T> {
    if a.len() != 9 {
        return Err(DynamicsError::NotNineModes { got: a.len() });
    }
    let half = num::<T>(0.5);
    Ok(half * a.iter().map(|v| *v * *v).sum::<T>())
}

/// Kinetic energy at every row of a nine-mode trajectory.
pub fn kinetic_energy_series<T: Scalar>(data: ArrayView2<'_, T>) -> Result<Array1<T>> {
    if data.ncols() != 9 {
        return Err(DynamicsError::NotNineModes { got: data.ncols() });
    }
    let half = num::<T>(0.5);
    Ok(data.map_axis(Axis(1), |row| {
        half * row.iter().map(|v| *v * *v).sum::<T>()
    }))
}

/// Filtered ensemble of shear-flow time series for the extreme-event studies.
#[derive(Debug, Clone)]
pub struct MfeEnsemble<T> {
    pub series: Vec<Trajectory<T>>,
    /// Extreme-event kinetic-energy threshold.
    pub k_e: T,
    /// Laminarization threshold used for discarding.
    pub k_l: T,
    pub retained_count: usize,
    pub discarded_count: usize,
}

/// Initial perturbation amplitude on modes 2-9 around the laminar state.
const MFE_IC_AMPLITUDE: f64 = 0.1;
/// Transient dropped before the recorded window (the initial kick sits at
/// k ~ 0.5 and must leave the laminar neighbourhood first).
const MFE_BURN_IN_LT: f64 = 1.0;

/// Integrates one ensemble member: laminar state kicked on modes 2-9 with
/// uniform noise, a short burn-in, then `length_lt` recorded.
pub fn generate_mfe_series<T: Scalar>(length_lt: T, seed: u64) -> Result<Trajectory<T>> {
    let system = SystemId::<T>::mfe();
    let dt = num::<T>(MFE_DT);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let amp = MFE_IC_AMPLITUDE;
    let mut x0 = vec![T::zero(); 9];
    x0[0] = T::one();
    for v in x0.iter_mut().skip(1) {
        *v = num(rng.random_range(-amp..amp));
    }

    let lyap = system.lyapunov_exponent();
    let burn = lt_to_steps(num::<T>(MFE_BURN_IN_LT), lyap, dt);
    let steps = lt_to_steps(length_lt, lyap, dt);
    let warm = integrate(&system, Array1::from_vec(x0).view(), burn, dt)?;
    integrate(&system, warm.data.row(warm.rows() - 1), steps, dt)
}

/// Generates `count` shear-flow series of `length_lt` each from randomized
/// initial conditions and discards every series whose kinetic energy ever
/// reaches the laminarization threshold `k_l`.
pub fn generate_mfe_ensemble<T: Scalar>(
    count: usize,
    length_lt: T,
    k_l: T,
    seed: u64,
) -> Result<MfeEnsemble<T>> {
    let members: Vec<Result<(usize, Trajectory<T>)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let child = derive_seed(seed, "mfe-member", i as u64);
            generate_mfe_series::<T>(length_lt, child).map(|t| (i, t))
        })
        .collect();

    let mut retained = Vec::new();
    let mut discarded = 0usize;
    for member in members {
        let (_, traj) = member?;
        let ke = kinetic_energy_series(traj.data.view())?;
        let max_k = ke.iter().cloned().fold(T::neg_infinity(), T::max);
        if max_k < k_l {
            retained.push(traj);
        } else {
            discarded += 1;
        }
    }
    if retained.is_empty() {
        return Err(DynamicsError::EmptyEnsemble { count });
    }
    Ok(MfeEnsemble {
        series: retained,
        k_e: num(MFE_KE_THRESHOLD),
        k_l,
        retained_count: count - discarded,
        discarded_count: discarded,
    })
}

// ---------------------------------------------------------------------------
// persistence: CSV data + JSON sidecar
// ---------------------------------------------------------------------------

/// Sidecar metadata stored next to the trajectory CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct TrajectoryMeta<T> {
    pub dt: T,
    pub lyapunov: T,
    pub system: Option<SystemId<T>>,
    pub scaling: Option<RangeScaling<T>>,
    pub seed: Option<u64>,
}

fn sidecar_path(csv_path: &std::path::Path) -> std::path::PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".json");
    std::path::PathBuf::from(name)
}

impl<T: Scalar> Trajectory<T> {
    /// Writes `t,x0,x1,...` rows at 17 significant digits plus a JSON sidecar
    /// (`<path>.json`) carrying dt, Lyapunov exponent, system, scaling, seed.
    pub fn save_csv(
        &self,
        path: &std::path::Path,
        system: Option<&SystemId<T>>,
        seed: Option<u64>,
    ) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "t")?;
        for j in 0..self.dim() {
            write!(f, ",x{j}")?;
        }
        writeln!(f)?;
        for (i, row) in self.data.rows().into_iter().enumerate() {
            let t = num::<T>(i as f64) * self.dt;
            write!(f, "{:.16e}", t.to_f64().unwrap())?;
            for v in row.iter() {
                write!(f, ",{:.16e}", v.to_f64().unwrap())?;
            }
            writeln!(f)?;
        }
        f.flush()?;

        let meta = TrajectoryMeta {
            dt: self.dt,
            lyapunov: self.lyapunov,
            system: system.cloned(),
            scaling: self.scaling.clone(),
            seed,
        };
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| DynamicsError::Format(e.to_string()))?;
        std::fs::write(sidecar_path(path), json)?;
        Ok(())
    }

    /// Reads a trajectory written by [`Trajectory::save_csv`].
    pub fn load_csv(path: &std::path::Path) -> Result<(Trajectory<T>, TrajectoryMeta<T>)> {
        let meta: TrajectoryMeta<T> =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)
                .map_err(|e| DynamicsError::Format(e.to_string()))?;
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| DynamicsError::Format("empty file".into()))?;
        let dim = header.split(',').count() - 1;
        let mut rows: Vec<T> = Vec::new();
        let mut n_rows = 0usize;
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            fields.next(); // t column is derived, not stored
            let mut got = 0usize;
            for field in fields {
                let v: f64 = field
                    .parse()
                    .map_err(|e| DynamicsError::Format(format!("bad float: {e}")))?;
                rows.push(num(v));
                got += 1;
            }
            if got != dim {
                return Err(DynamicsError::Format(format!(
                    "row {n_rows} has {got} values, header says {dim}"
                )));
            }
            n_rows += 1;
        }
        let data = Array2::from_shape_vec((n_rows, dim), rows)
            .map_err(|e| DynamicsError::Format(e.to_string()))?;
        Ok((
            Trajectory {
                data,
                dt: meta.dt,
                lyapunov: meta.lyapunov,
                scaling: meta.scaling.clone(),
            },
            meta,
        ))
    }
}
