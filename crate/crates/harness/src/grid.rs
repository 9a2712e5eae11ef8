//! Deterministic exhaustive grid search with recycle validation: the readout
//! trains once on the full training span and is re-scored in closed loop on
//! short intervals inside that span, each preceded by a fresh warm-up.

use ndarray::ArrayView2;
use qrc_core::dynamics::lt_to_steps;
use qrc_core::metrics::vpt;
use qrc_core::reservoir::{closed_loop, harvest, harvest_targets, train_readout, warmup};
use qrc_core::{derive_seed, dynamics::RangeScaling};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, HyperPoint};
use crate::data::{build_reservoir, prepare_lorenz, prepare_mfe, PreparedLorenz};
use crate::HarnessError;

/// One scored grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hyper: HyperPoint,
    /// Mean validation VPT in Lyapunov times (higher is better).
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridOutcome {
    pub best: HyperPoint,
    pub best_score: f64,
    pub table: Vec<GridPoint>,
}

/// What the validation protocol needs from a prepared dataset.
pub struct TuneData<'a> {
    pub block: ArrayView2<'a, f64>,
    pub scaling: &'a RangeScaling<f64>,
    pub sigma: &'a [f64],
    pub n_w: usize,
    pub dt: f64,
    pub lyapunov: f64,
}

impl PreparedLorenz {
    pub fn tune_data(&self) -> TuneData<'_> {
        TuneData {
            block: self.train_block(),
            scaling: &self.scaling,
            sigma: &self.sigma_train,
            n_w: self.n_w,
            dt: self.dt,
            lyapunov: self.lyapunov,
        }
    }
}

/// Cartesian product of the effective grid in lexicographic order.
pub fn grid_points(cfg: &ExperimentConfig) -> Result<Vec<HyperPoint>, HarnessError> {
    let grid = cfg.effective_grid()?;
    let quantum = cfg.reservoir.is_quantum();
    let wrap = |v: f64| if quantum { None } else { Some(v) };
    let mut points = Vec::new();
    for &sigma_in in &grid.sigma_in {
        for &rho in &grid.rho {
            for &density in &grid.density {
                for &eps in &grid.eps {
                    for &beta in &grid.beta {
                        points.push(HyperPoint {
                            sigma_in: wrap(sigma_in),
                            rho: wrap(rho),
                            density: wrap(density),
                            eps,
                            beta,
                        });
                    }
                }
            }
        }
    }
    Ok(points)
}

/// Validation interval start rows inside the training block.
fn interval_starts(
    block_rows: usize,
    n_w: usize,
    val_steps: usize,
    intervals: usize,
) -> Result<Vec<usize>, HarnessError> {
    let lo = (n_w + 1).max((block_rows as f64 * 0.4) as usize);
    let hi = block_rows
        .checked_sub(val_steps + 1)
        .unwrap_or(0);
    if hi < lo || intervals == 0 {
        return Err(HarnessError::Protocol(format!(
            "validation intervals exceed the data: block of {block_rows} rows cannot host \
             {intervals} intervals of {val_steps} steps after a {n_w}-step washout"
        )));
    }
    if intervals == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..intervals)
        .map(|i| lo + i * (hi - lo) / (intervals - 1))
        .collect())
}

/// Exhaustive sweep; each point is scored by the mean closed-loop VPT over
/// the validation intervals and the config's seeds. Ties break toward the
/// lexicographically smallest hyperparameters.
pub fn grid_search_with(
    cfg: &ExperimentConfig,
    data: &TuneData<'_>,
) -> Result<GridOutcome, HarnessError> {
    let points = grid_points(cfg)?;
    let val_steps = lt_to_steps(cfg.validation_lt, data.lyapunov, data.dt);
    let starts = interval_starts(
        data.block.nrows(),
        data.n_w,
        val_steps,
        cfg.validation_intervals,
    )?;

    // betas share a harvest: group the sweep by the reservoir-defining axes
    let betas: Vec<f64> = {
        let mut seen = Vec::new();
        for p in &points {
            if !seen.contains(&p.beta) {
                seen.push(p.beta);
            }
        }
        seen
    };
    let mut groups: Vec<HyperPoint> = Vec::new();
    for p in &points {
        if p.beta == betas[0] {
            groups.push(*p);
        }
    }

    let scored: Result<Vec<Vec<GridPoint>>, HarnessError> = groups
        .par_iter()
        .map(|group| {
            let mut per_beta: Vec<f64> = vec![0.0; betas.len()];
            // a beta whose normal equations go numerically singular drops
            // out of the sweep instead of aborting it
            let mut usable: Vec<bool> = vec![true; betas.len()];
            let mut samples = 0usize;
            for &seed in &cfg.seeds {
                let res = build_reservoir(&cfg.reservoir, data.block.ncols(), group, seed)?;
                let h = harvest(
                    res.as_ref(),
                    data.block,
                    data.n_w,
                    derive_seed(seed, "train-r0", 0),
                )?;
                let targets = harvest_targets(&data.block, data.n_w);
                for (bi, &beta) in betas.iter().enumerate() {
                    let readout = match train_readout(&h.states, targets, beta) {
                        Ok(r) => r,
                        Err(
                            qrc_core::reservoir::ReservoirError::SingularSystem
                            | qrc_core::reservoir::ReservoirError::ResidualTooLarge { .. },
                        ) => {
                            usable[bi] = false;
                            continue;
                        }
                        Err(e) => return Err(e.into()),
                    };
                    for (si, &start) in starts.iter().enumerate() {
                        let warm = data.block.slice(ndarray::s![start - data.n_w..=start, ..]);
                        let r = warmup(
                            res.as_ref(),
                            warm,
                            derive_seed(seed, "val-warmup", si as u64),
                        )?;
                        let (pred, _) =
                            match closed_loop(res.as_ref(), &readout, data.scaling, r, val_steps) {
                                Ok(out) => out,
                                Err(qrc_core::reservoir::ReservoirError::Divergence {
                                    ..
                                }) => {
                                    continue; // scores zero for this interval
                                }
                                Err(e) => return Err(e.into()),
                            };
                        let truth_scaled =
                            data.block.slice(ndarray::s![start + 1..start + 1 + val_steps, ..]);
                        let truth = data.scaling.unscale(truth_scaled);
                        per_beta[bi] += vpt(
                            truth.view(),
                            pred.view(),
                            data.sigma,
                            data.lyapunov,
                            data.dt,
                            0.5,
                        )?;
                    }
                }
                samples += starts.len();
            }
            Ok(betas
                .iter()
                .enumerate()
                .map(|(bi, &beta)| GridPoint {
                    hyper: HyperPoint { beta, ..*group },
                    score: if usable[bi] {
                        per_beta[bi] / samples.max(1) as f64
                    } else {
                        f64::NEG_INFINITY
                    },
                })
                .collect())
        })
        .collect();

    let mut table: Vec<GridPoint> = scored?.into_iter().flatten().collect();
    table.sort_by(|a, b| {
        a.hyper
            .lex_key()
            .partial_cmp(&b.hyper.lex_key())
            .expect("finite keys")
    });
    let best = table
        .iter()
        .fold(None::<GridPoint>, |acc, p| match acc {
            None => Some(*p),
            Some(cur) if p.score > cur.score => Some(*p),
            other => other,
        })
        .ok_or_else(|| HarnessError::Protocol("empty grid".into()))?;
    Ok(GridOutcome {
        best: best.hyper,
        best_score: best.score,
        table,
    })
}

/// Prepares the config's dataset and runs the sweep on it. Shear-flow
/// configs tune on the first training series of the ensemble.
pub fn grid_search(cfg: &ExperimentConfig) -> Result<GridOutcome, HarnessError> {
    if matches!(cfg.system, qrc_core::dynamics::SystemId::Mfe { .. }) {
        let data = prepare_mfe(cfg, cfg.seeds[0])?;
        let block = data.train_block(0);
        let tune = TuneData {
            block: block.view(),
            scaling: &data.scaling,
            sigma: &data.sigma_train,
            n_w: data.n_w,
            dt: data.dt,
            lyapunov: data.lyapunov,
        };
        grid_search_with(cfg, &tune)
    } else {
        let data = prepare_lorenz(cfg)?;
        grid_search_with(cfg, &data.tune_data())
    }
}
