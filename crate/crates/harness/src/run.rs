//! Experiment execution: per-seed training plus metric evaluation over
//! start points, events and delays.

use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use qrc_core::dynamics::{kinetic_energy_series, lt_to_steps};
use qrc_core::metrics::{
    event_scores, exceeds_threshold, extreme_event_scan, memory_capacity, vpt, EventScores,
    ScanProtocol,
};
use qrc_core::reservoir::{
    closed_loop, fit_readout, fit_readout_multi, warmup, Reservoir, TrainedReadout,
};
use qrc_core::derive_seed;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, HyperPoint, MetricKind};
use crate::data::{build_reservoir, prepare_lorenz, prepare_mfe, PreparedLorenz, PreparedMfe};
use crate::export::RunRecord;
use crate::HarnessError;

/// Records plus the pooled raw samples the records summarize.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    /// All per-start-point VPT values (seeds x start points), in LT.
    pub vpt_samples: Vec<f64>,
    /// All per-event predictability horizons, in LT.
    pub ph_samples: Vec<f64>,
    /// Pooled event scores per prediction-time window.
    pub pooled_scores: Vec<(f64, EventScores<f64>)>,
    /// Per-seed memory capacities.
    pub mc_values: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

// ---------------------------------------------------------------------------
// per-metric evaluation
// ---------------------------------------------------------------------------

/// Closed-loop VPT from evenly spaced start points in the test block; each
/// start is preceded by an open-loop warm-up on true data.
pub fn evaluate_vpt(
    res: &dyn Reservoir<f64>,
    readout: &TrainedReadout<f64>,
    data: &PreparedLorenz,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<f64>, HarnessError> {
    let horizon = lt_to_steps(cfg.horizon_lt, data.lyapunov, data.dt);
    let first = data.test_start();
    let last = data
        .scaled
        .nrows()
        .checked_sub(horizon + 2)
        .filter(|last| *last >= first)
        .ok_or_else(|| {
            HarnessError::Protocol(format!(
                "test block too short for a {} LT horizon",
                cfg.horizon_lt
            ))
        })?;
    let starts: Vec<usize> = (0..cfg.start_points)
        .map(|k| first + k * (last - first) / cfg.start_points.max(1))
        .collect();

    starts
        .par_iter()
        .enumerate()
        .map(|(k, &start)| {
            let warm = data.scaled.slice(s![start - data.n_w..=start, ..]);
            let r = warmup(res, warm, derive_seed(seed, "eval-warmup", k as u64))?;
            let pred = match closed_loop(res, readout, &data.scaling, r, horizon) {
                Ok((pred, _)) => pred,
                Err(qrc_core::reservoir::ReservoirError::Divergence { .. }) => {
                    return Ok(0.0); // a diverged run predicts nothing
                }
                Err(e) => return Err(e.into()),
            };
            let truth = data.traj.data.slice(s![start + 1..start + 1 + horizon, ..]);
            Ok(vpt(
                truth,
                pred.view(),
                &data.sigma_test,
                data.lyapunov,
                data.dt,
                0.5,
            )?)
        })
        .collect()
}

/// Start points for the event classification: spaced so the windows of the
/// widest prediction-time offset never overlap, round-robin over the test
/// series. Returns (series index, start row) pairs.
fn event_start_points(
    mfe: &PreparedMfe,
    cfg: &ExperimentConfig,
    max_pt_lt: f64,
) -> Vec<(usize, usize)> {
    let window_end = lt_to_steps(max_pt_lt + 1.0, mfe.lyapunov, mfe.dt);
    let stride = window_end + mfe.n_w;
    let mut starts = Vec::with_capacity(cfg.start_points);
    let mut offsets: Vec<usize> = vec![mfe.n_w; mfe.test.len()];
    'outer: loop {
        let mut advanced = false;
        for (si, series) in mfe.test.iter().enumerate() {
            let s = offsets[si];
            if s + window_end + 1 < series.data.nrows() {
                starts.push((si, s));
                offsets[si] = s + stride;
                advanced = true;
                if starts.len() == cfg.start_points {
                    break 'outer;
                }
            }
        }
        if !advanced {
            break;
        }
    }
    starts
}

/// Classifies every start point at one prediction-time offset: did the true
/// and the predicted kinetic energy exceed k_e inside [PT, PT+1) LT?
pub fn evaluate_event_scores(
    res: &dyn Reservoir<f64>,
    readout: &TrainedReadout<f64>,
    mfe: &PreparedMfe,
    cfg: &ExperimentConfig,
    pt_lt: f64,
    seed: u64,
) -> Result<(EventScores<f64>, Vec<(bool, bool)>), HarnessError> {
    let k_e = qrc_core::dynamics::MFE_KE_THRESHOLD;
    let w_lo = lt_to_steps(pt_lt, mfe.lyapunov, mfe.dt);
    let w_hi = lt_to_steps(pt_lt + 1.0, mfe.lyapunov, mfe.dt);
    let max_pt = cfg.pt_windows_lt.iter().cloned().fold(0.0, f64::max);
    let starts = event_start_points(mfe, cfg, max_pt);

    let outcomes: Result<Vec<(bool, bool)>, HarnessError> = starts
        .par_iter()
        .enumerate()
        .map(|(k, &(si, start))| {
            let series = &mfe.test[si];
            let scaled = mfe
                .scaling
                .scale(series.data.slice(s![start - mfe.n_w..=start, ..]));
            let r = warmup(res, scaled.view(), derive_seed(seed, "event-warmup", k as u64))?;
            let predicted = match closed_loop(res, readout, &mfe.scaling, r, w_hi) {
                Ok((pred, _)) => {
                    let k_pred = kinetic_energy_series(pred.view())?;
                    exceeds_threshold(&k_pred.as_slice().unwrap()[w_lo..], k_e)
                }
                Err(qrc_core::reservoir::ReservoirError::Divergence { .. }) => {
                    // a diverged prediction raises the alarm
                    true
                }
                Err(e) => return Err(e.into()),
            };
            let truth = series.data.slice(s![start + 1 + w_lo..start + 1 + w_hi, ..]);
            let k_true = kinetic_energy_series(truth)?;
            let actual = exceeds_threshold(k_true.as_slice().unwrap(), k_e);
            Ok((predicted, actual))
        })
        .collect();
    let outcomes = outcomes?;
    Ok((event_scores(&outcomes), outcomes))
}

/// Upward kinetic-energy crossings of k_e with enough prior data for the
/// full scan lead plus washout.
pub fn find_extreme_events(mfe: &PreparedMfe, cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    let k_e = qrc_core::dynamics::MFE_KE_THRESHOLD;
    let min_lead = lt_to_steps(
        cfg.ph_delta_init_lt + cfg.washout_lt + 0.5,
        mfe.lyapunov,
        mfe.dt,
    );
    let mut events = Vec::new();
    for (si, series) in mfe.test.iter().enumerate() {
        let k = kinetic_energy_series(series.data.view()).expect("nine-mode series");
        for e in 1..k.len() {
            if k[e] >= k_e && k[e - 1] < k_e && e >= min_lead {
                events.push((si, e));
                if events.len() == cfg.event_count {
                    return events;
                }
            }
        }
    }
    events
}

/// The iterative lead-time scan per event; one PH sample per event.
pub fn evaluate_ph(
    res: &dyn Reservoir<f64>,
    readout: &TrainedReadout<f64>,
    mfe: &PreparedMfe,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<f64>, HarnessError> {
    let events = find_extreme_events(mfe, cfg);
    let proto = ScanProtocol::<f64> {
        k_bar: mfe.k_bar,
        delta_init_lt: cfg.ph_delta_init_lt,
        tau_lt: cfg.ph_tau_lt,
        washout_lt: cfg.washout_lt,
        ..ScanProtocol::default()
    };
    events
        .par_iter()
        .enumerate()
        .map(|(k, &(si, event_step))| {
            Ok(extreme_event_scan(
                res,
                readout,
                &mfe.scaling,
                mfe.test[si].data.view(),
                event_step,
                &proto,
                derive_seed(seed, "ph-event", k as u64),
            )?)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// the experiment driver
// ---------------------------------------------------------------------------

enum Prepared {
    Lorenz(PreparedLorenz),
    Mfe(PreparedMfe),
}

fn train_readout_for(
    res: &dyn Reservoir<f64>,
    data: &Prepared,
    hyper: &HyperPoint,
    seed: u64,
) -> Result<TrainedReadout<f64>, HarnessError> {
    match data {
        Prepared::Lorenz(d) => Ok(fit_readout(
            res,
            d.train_block(),
            d.n_w,
            hyper.beta,
            derive_seed(seed, "train-r0", 0),
        )?),
        Prepared::Mfe(d) => {
            let blocks: Vec<Array2<f64>> =
                (0..d.train.len()).map(|i| d.train_block(i)).collect();
            let views: Vec<ArrayView2<'_, f64>> = blocks.iter().map(|b| b.view()).collect();
            Ok(fit_readout_multi(
                res,
                &views,
                d.n_w,
                hyper.beta,
                derive_seed(seed, "train-r0", 0),
            )?)
        }
    }
}

/// Trains one network per seed at the given hyperparameters and evaluates
/// the configured metrics; partial records survive a failing seed.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    hyper: &HyperPoint,
) -> Result<ExperimentOutcome, HarnessError> {
    let needs_mfe = cfg
        .metrics
        .iter()
        .any(|m| matches!(m, MetricKind::Ph | MetricKind::Fscore))
        || matches!(cfg.system, qrc_core::dynamics::SystemId::Mfe { .. });
    let needs_data = cfg.metrics.iter().any(|m| !matches!(m, MetricKind::Mc));
    let data = if !needs_data {
        None
    } else if needs_mfe {
        Some(Prepared::Mfe(prepare_mfe(cfg, cfg.seeds[0])?))
    } else {
        Some(Prepared::Lorenz(prepare_lorenz(cfg)?))
    };
    let config_hash = cfg.hash();
    let n_u = cfg.system.dim();

    let mut outcome = ExperimentOutcome::default();
    let mut per_pt_outcomes: Vec<(f64, Vec<(bool, bool)>)> =
        cfg.pt_windows_lt.iter().map(|pt| (*pt, Vec::new())).collect();

    for &seed in &cfg.seeds {
        let started = Instant::now();
        let mut record = RunRecord::new(&config_hash, seed, hyper);

        let readout_pair = if let Some(data) = &data {
            let res = build_reservoir(&cfg.reservoir, n_u, hyper, seed)?;
            let readout = train_readout_for(res.as_ref(), data, hyper, seed)?;
            Some((res, readout))
        } else {
            None
        };

        for metric in &cfg.metrics {
            match metric {
                MetricKind::Vpt => {
                    let (res, readout) = readout_pair.as_ref().expect("data prepared");
                    let data = match data.as_ref().unwrap() {
                        Prepared::Lorenz(d) => d,
                        Prepared::Mfe(_) => {
                            return Err(HarnessError::Protocol(
                                "VPT evaluation runs on the single-trajectory systems".into(),
                            ))
                        }
                    };
                    let samples = evaluate_vpt(res.as_ref(), readout, data, cfg, seed)?;
                    record.vpt_median = Some(median(&samples));
                    record.vpt_mean = Some(mean(&samples));
                    record.vpt_std = Some(std_dev(&samples));
                    outcome.vpt_samples.extend(samples);
                }
                MetricKind::Ph => {
                    let (res, readout) = readout_pair.as_ref().expect("data prepared");
                    let mfe = match data.as_ref().unwrap() {
                        Prepared::Mfe(d) => d,
                        Prepared::Lorenz(_) => {
                            return Err(HarnessError::Protocol(
                                "the predictability-horizon scan needs the shear-flow ensemble"
                                    .into(),
                            ))
                        }
                    };
                    let samples = evaluate_ph(res.as_ref(), readout, mfe, cfg, seed)?;
                    record.ph_median = Some(median(&samples));
                    record.ph_mean = Some(mean(&samples));
                    outcome.ph_samples.extend(samples);
                }
                MetricKind::Fscore => {
                    let (res, readout) = readout_pair.as_ref().expect("data prepared");
                    let mfe = match data.as_ref().unwrap() {
                        Prepared::Mfe(d) => d,
                        Prepared::Lorenz(_) => {
                            return Err(HarnessError::Protocol(
                                "event scores need the shear-flow ensemble".into(),
                            ))
                        }
                    };
                    for (pt, pool) in per_pt_outcomes.iter_mut() {
                        let (scores, raw) =
                            evaluate_event_scores(res.as_ref(), readout, mfe, cfg, *pt, seed)?;
                        let mut pt_record = record.clone();
                        pt_record.pt_lt = Some(*pt);
                        pt_record.precision = Some(scores.precision);
                        pt_record.recall = Some(scores.recall);
                        pt_record.fscore = Some(scores.fscore);
                        pt_record.wall_time_s = started.elapsed().as_secs_f64();
                        outcome.records.push(pt_record);
                        pool.extend(raw);
                    }
                }
                MetricKind::Mc => {
                    let res = build_reservoir(&cfg.reservoir, 1, hyper, seed)?;
                    let mc = memory_capacity(
                        res.as_ref(),
                        &cfg.effective_grid()?.beta,
                        cfg.mc_delays,
                        cfg.mc_len,
                        cfg.mc_washout,
                        seed,
                    )?;
                    record.mc = Some(mc.total);
                    outcome.mc_values.push(mc.total);
                }
            }
        }

        record.wall_time_s = started.elapsed().as_secs_f64();
        let emitted_fscore_rows = cfg.metrics.contains(&MetricKind::Fscore);
        let carries_summary = record.vpt_median.is_some()
            || record.ph_median.is_some()
            || record.mc.is_some();
        if carries_summary || !emitted_fscore_rows {
            outcome.records.push(record);
        }
    }

    for (pt, raw) in per_pt_outcomes {
        if !raw.is_empty() {
            outcome.pooled_scores.push((pt, event_scores(&raw)));
        }
    }
    outcome.records.sort_by(|a, b| {
        (a.config_hash.clone(), a.seed, a.pt_lt.map(|v| v.to_bits()))
            .cmp(&(b.config_hash.clone(), b.seed, b.pt_lt.map(|v| v.to_bits())))
    });
    Ok(outcome)
}
