//! Dataset preparation shared by the tune/run subcommands.

use ndarray::{s, Array1, Array2, ArrayView2};
use qrc_core::dynamics::{
    generate_mfe_ensemble, integrate, kinetic_energy_series, lt_to_steps, rescale_range,
    RangeScaling, SystemId, Trajectory,
};
use qrc_core::metrics::component_std;
use qrc_core::reservoir::{ClassicalReservoir, QuantumReservoir, Reservoir};

use crate::config::{ExperimentConfig, HyperPoint, ReservoirKind};
use crate::HarnessError;

/// A single-trajectory dataset (Lorenz-63 / Lorenz-96): washout, train and
/// test blocks live in one contiguous run scaled by its global range.
pub struct PreparedLorenz {
    pub traj: Trajectory<f64>,
    pub scaled: Array2<f64>,
    pub scaling: RangeScaling<f64>,
    pub n_w: usize,
    pub n_tr: usize,
    pub n_te: usize,
    pub dt: f64,
    pub lyapunov: f64,
    /// Per-component std of the unscaled test rows, for NRMSE.
    pub sigma_test: Vec<f64>,
    /// Per-component std of the unscaled train block, for validation NRMSE.
    pub sigma_train: Vec<f64>,
}

impl PreparedLorenz {
    /// Rows covering washout + training (inclusive end row for the final
    /// one-step target).
    pub fn train_block(&self) -> ArrayView2<'_, f64> {
        self.scaled.slice(s![..self.n_w + self.n_tr + 1, ..])
    }

    pub fn test_start(&self) -> usize {
        self.n_w + self.n_tr
    }
}

/// Canonical initial condition per system for dataset generation.
pub fn canonical_x0(system: &SystemId<f64>) -> Array1<f64> {
    match system {
        SystemId::Lorenz63 { .. } => ndarray::array![1.0, 1.0, 1.0],
        SystemId::Lorenz96 { m, forcing } => {
            let mut x0 = Array1::from_elem(*m, *forcing);
            x0[0] += 0.01;
            x0
        }
        SystemId::Mfe { .. } => {
            let mut x0 = Array1::zeros(9);
            x0[0] = 1.0;
            x0[3] = 0.05;
            x0[5] = -0.05;
            x0
        }
    }
}

pub fn prepare_lorenz(cfg: &ExperimentConfig) -> Result<PreparedLorenz, HarnessError> {
    let system = &cfg.system;
    let dt = cfg.dt();
    let lyapunov = system.lyapunov_exponent();
    let n_w = lt_to_steps(cfg.washout_lt, lyapunov, dt);
    let n_tr = lt_to_steps(cfg.train_lt, lyapunov, dt);
    let n_te = lt_to_steps(cfg.test_lt, lyapunov, dt);
    let transient = lt_to_steps(cfg.transient_lt, lyapunov, dt);

    let x0 = canonical_x0(system);
    let warm = integrate(system, x0.view(), transient, dt)?;
    let traj = integrate(
        system,
        warm.data.row(warm.data.nrows() - 1),
        n_w + n_tr + n_te,
        dt,
    )?;

    let scaled_traj = rescale_range(&traj)?;
    let scaling = scaled_traj.scaling.clone().expect("scaling recorded");
    let sigma_test = component_std(traj.data.slice(s![n_w + n_tr.., ..]));
    let sigma_train = component_std(traj.data.slice(s![..n_w + n_tr + 1, ..]));
    Ok(PreparedLorenz {
        scaled: scaled_traj.data,
        traj,
        scaling,
        n_w,
        n_tr,
        n_te,
        dt,
        lyapunov,
        sigma_test,
        sigma_train,
    })
}

/// The filtered shear-flow ensemble split into training and test series,
/// with scaling fitted over the training series.
pub struct PreparedMfe {
    pub train: Vec<Trajectory<f64>>,
    pub test: Vec<Trajectory<f64>>,
    pub scaling: RangeScaling<f64>,
    /// Time-average kinetic energy over the training series.
    pub k_bar: f64,
    pub n_w: usize,
    pub n_tr: usize,
    pub dt: f64,
    pub lyapunov: f64,
    pub retained_count: usize,
    pub discarded_count: usize,
    pub sigma_train: Vec<f64>,
}

pub fn prepare_mfe(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedMfe, HarnessError> {
    let ensemble = generate_mfe_ensemble::<f64>(
        cfg.ensemble_count,
        cfg.ensemble_length_lt,
        cfg.laminar_threshold,
        seed,
    )?;
    let dt = qrc_core::dynamics::MFE_DT;
    let lyapunov = qrc_core::dynamics::MFE_LYAPUNOV;
    let n_w = lt_to_steps(cfg.washout_lt, lyapunov, dt);
    let n_tr = lt_to_steps(cfg.train_lt, lyapunov, dt);

    let (retained_count, discarded_count) = (ensemble.retained_count, ensemble.discarded_count);
    let mut series = ensemble.series;
    if series.len() <= cfg.train_series {
        return Err(HarnessError::Protocol(format!(
            "ensemble retained {} series but {} are reserved for training",
            series.len(),
            cfg.train_series
        )));
    }
    let test = series.split_off(cfg.train_series);
    let train = series;

    // scaling and k_bar come from the training series alone
    let views: Vec<ArrayView2<'_, f64>> = train.iter().map(|t| t.data.view()).collect();
    let stacked = ndarray::concatenate(
        ndarray::Axis(0),
        &views,
    )
    .expect("training series share the mode count");
    let scaling = RangeScaling::fit(stacked.view())?;
    let k_bar = kinetic_energy_series(stacked.view())?.mean().unwrap();
    let sigma_train = component_std(stacked.view());

    Ok(PreparedMfe {
        train,
        test,
        scaling,
        k_bar,
        n_w,
        n_tr,
        dt,
        lyapunov,
        retained_count,
        discarded_count,
        sigma_train,
    })
}

impl PreparedMfe {
    /// Scaled washout+train block of one training series.
    pub fn train_block(&self, idx: usize) -> Array2<f64> {
        let rows = (self.n_w + self.n_tr + 1).min(self.train[idx].data.nrows());
        self.scaling
            .scale(self.train[idx].data.slice(s![..rows, ..]))
    }
}

/// Instantiates the reservoir described by the config at a grid point.
pub fn build_reservoir(
    kind: &ReservoirKind,
    n_u: usize,
    hyper: &HyperPoint,
    seed: u64,
) -> Result<Box<dyn Reservoir<f64>>, HarnessError> {
    match kind {
        ReservoirKind::Classical { n_r } => {
            let missing = |name: &str| {
                HarnessError::Protocol(format!(
                    "classical reservoir needs {name} in the hyperparameters"
                ))
            };
            let res = ClassicalReservoir::init(
                *n_r,
                n_u,
                hyper.sigma_in.ok_or_else(|| missing("sigma_in"))?,
                hyper.rho.ok_or_else(|| missing("rho"))?,
                hyper.density.ok_or_else(|| missing("density"))?,
                hyper.eps,
                seed,
            )?;
            Ok(Box::new(res))
        }
        ReservoirKind::Quantum { config, n } => {
            let res = QuantumReservoir::init(*n, *config, n_u, hyper.eps, seed)?;
            Ok(Box::new(res))
        }
    }
}
