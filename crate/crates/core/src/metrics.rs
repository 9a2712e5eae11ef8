//! Quantitative performance measures for the forecasting experiments.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{kinetic_energy_series, lt_to_steps, DynamicsError, RangeScaling};
use crate::reservoir::{
    closed_loop, open_loop, warmup, Reservoir, ReservoirError, TrainedReadout,
};
use crate::{derive_seed, num, Scalar};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("series shapes differ: {a} vs {b} rows")]
    LengthMismatch { a: usize, b: usize },
    #[error("series widths differ: {a} vs {b} components")]
    WidthMismatch { a: usize, b: usize },
    #[error("sigma of component {component} is not positive")]
    DegenerateSigma { component: usize },
    #[error("empty series")]
    EmptySeries,
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("histograms have different bin edges")]
    EdgeMismatch,
    #[error("k_bar equals k_e; the horizon denominator vanishes")]
    DegenerateDenominator,
    #[error("memory capacity drives a scalar input; reservoir expects {expected} inputs")]
    ScalarInputOnly { expected: usize },
    #[error("event series too short: prediction start {start} needs {needed} washout rows")]
    EventTooEarly { start: usize, needed: usize },
    #[error(transparent)]
    Reservoir(#[from] ReservoirError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

type Result<V> = std::result::Result<V, MetricsError>;

// ---------------------------------------------------------------------------
// NRMSE and valid prediction time
// ---------------------------------------------------------------------------

/// Per-component standard deviation down the rows.
pub fn component_std<T: Scalar>(data: ArrayView2<'_, T>) -> Vec<T> {
    let n = num::<T>(data.nrows() as f64);
    data.axis_iter(Axis(1))
        .map(|col| {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            var.sqrt()
        })
        .collect()
}

/// NRMSE(t) = sqrt( mean_i (y_i - yhat_i)^2 / sigma_i^2 ), one value per row.
pub fn nrmse_series<T: Scalar>(
    y_true: ArrayView2<'_, T>,
    y_pred: ArrayView2<'_, T>,
    sigma: &[T],
) -> Result<Array1<T>> {
    if y_true.nrows() != y_pred.nrows() {
        return Err(MetricsError::LengthMismatch {
            a: y_true.nrows(),
            b: y_pred.nrows(),
        });
    }
    if y_true.ncols() != y_pred.ncols() || y_true.ncols() != sigma.len() {
        return Err(MetricsError::WidthMismatch {
            a: y_true.ncols(),
            b: y_pred.ncols().min(sigma.len()),
        });
    }
    for (j, s) in sigma.iter().enumerate() {
        if !(*s > T::zero()) {
            return Err(MetricsError::DegenerateSigma { component: j });
        }
    }
    let n_u = num::<T>(y_true.ncols() as f64);
    Ok(Array1::from_iter(
        y_true
            .rows()
            .into_iter()
            .zip(y_pred.rows())
            .map(|(yt, yp)| {
                let sum: T = yt
                    .iter()
                    .zip(yp.iter())
                    .zip(sigma)
                    .map(|((a, b), s)| {
                        let e = *a - *b;
                        e * e / (*s * *s)
                    })
                    .sum();
                (sum / n_u).sqrt()
            }),
    ))
}

/// Valid prediction time in Lyapunov times: the span of leading rows whose
/// NRMSE stays below the threshold. Row k stands for time (k+1) dt after the
/// prediction start.
pub fn vpt<T: Scalar>(
    y_true: ArrayView2<'_, T>,
    y_pred: ArrayView2<'_, T>,
    sigma: &[T],
    lyapunov: T,
    dt: T,
    threshold: T,
) -> Result<T> {
    let errs = nrmse_series(y_true, y_pred, sigma)?;
    let valid = errs
        .iter()
        .position(|e| !(*e < threshold))
        .unwrap_or(errs.len());
    Ok(num::<T>(valid as f64) * dt * lyapunov)
}

// ---------------------------------------------------------------------------
// predictability horizon and the extreme-event scan
// ---------------------------------------------------------------------------

/// Predictability horizon in Lyapunov times: the span of leading samples with
/// |k_pred - k_true| / |k_e - k_bar| below the tolerance; the full window
/// length if the bound never trips.
pub fn ph<T: Scalar>(
    k_pred: &[T],
    k_true: &[T],
    k_e: T,
    k_bar: T,
    dt: T,
    lyapunov: T,
    tol: T,
) -> Result<T> {
    if k_pred.len() != k_true.len() {
        return Err(MetricsError::LengthMismatch {
            a: k_pred.len(),
            b: k_true.len(),
        });
    }
    let denom = (k_e - k_bar).abs();
    if denom == T::zero() {
        return Err(MetricsError::DegenerateDenominator);
    }
    let valid = k_pred
        .iter()
        .zip(k_true)
        .position(|(p, t)| !((*p - *t).abs() / denom < tol))
        .unwrap_or(k_pred.len());
    Ok(num::<T>(valid as f64) * dt * lyapunov)
}

/// Parameters of the iterative extreme-event protocol.
#[derive(Debug, Clone, Copy)]
pub struct ScanProtocol<T> {
    pub k_e: T,
    pub k_bar: T,
    pub dt: T,
    pub lyapunov: T,
    /// Initial lead time between prediction start and the event (LT).
    pub delta_init_lt: T,
    /// Lead-time decrement on each failed attempt (LT).
    pub tau_lt: T,
    pub washout_lt: T,
    /// Relative kinetic-energy error tolerance of the horizon.
    pub tol: T,
}

impl<T: Scalar> Default for ScanProtocol<T> {
    fn default() -> Self {
        ScanProtocol {
            k_e: num(crate::dynamics::MFE_KE_THRESHOLD),
            k_bar: T::zero(),
            dt: num(crate::dynamics::MFE_DT),
            lyapunov: num(crate::dynamics::MFE_LYAPUNOV),
            delta_init_lt: num(10.0),
            tau_lt: num(0.5),
            washout_lt: num(2.0),
            tol: num(0.2),
        }
    }
}

/// Iterative extreme-event protocol over an injectable predictor: the
/// closed-loop prediction starts delta before the event; when the horizon
/// falls short, the lead time shrinks by tau until the event is predicted,
/// and the reported horizon is capped at the final lead time. The predictor
/// maps (start_row, steps) to predicted rows start_row+1 ..= start_row+steps
/// in original units, or None when the prediction diverges.
pub fn extreme_event_scan_with<T: Scalar, F>(
    mut predict: F,
    series: ArrayView2<'_, T>,
    event_step: usize,
    proto: &ScanProtocol<T>,
) -> Result<T>
where
    F: FnMut(usize, usize) -> Result<Option<Array2<T>>>,
{
    let n_w = lt_to_steps(proto.washout_lt, proto.lyapunov, proto.dt);
    let mut delta = proto.delta_init_lt;
    while delta > T::zero() {
        let lead = lt_to_steps(delta, proto.lyapunov, proto.dt);
        if lead == 0 {
            break;
        }
        let start = event_step.saturating_sub(lead);
        if start < n_w {
            return Err(MetricsError::EventTooEarly {
                start,
                needed: n_w,
            });
        }
        let window = event_step - start;
        if let Some(pred) = predict(start, window)? {
            let k_pred = kinetic_energy_series(pred.view())?;
            let truth = series.slice(ndarray::s![start + 1..=event_step, ..]);
            let k_true = kinetic_energy_series(truth)?;
            let horizon = ph(
                k_pred.as_slice().unwrap(),
                k_true.as_slice().unwrap(),
                proto.k_e,
                proto.k_bar,
                proto.dt,
                proto.lyapunov,
                proto.tol,
            )?;
            let window_lt = num::<T>(window as f64) * proto.dt * proto.lyapunov;
            if horizon >= window_lt {
                return Ok(horizon.min(delta));
            }
        }
        delta = delta - proto.tau_lt;
    }
    Ok(T::zero())
}

/// The reservoir-backed scan: each attempt warms up in open loop on true
/// data ending at the prediction start, then runs the closed loop.
#[allow(clippy::too_many_arguments)]
pub fn extreme_event_scan<T: Scalar, R: Reservoir<T> + ?Sized>(
    res: &R,
    readout: &TrainedReadout<T>,
    scaling: &RangeScaling<T>,
    series: ArrayView2<'_, T>,
    event_step: usize,
    proto: &ScanProtocol<T>,
    seed: u64,
) -> Result<T> {
    let n_w = lt_to_steps(proto.washout_lt, proto.lyapunov, proto.dt);
    let mut attempt = 0u64;
    let predict = |start: usize, steps: usize| -> Result<Option<Array2<T>>> {
        let warm_rows = series.slice(ndarray::s![start - n_w..=start, ..]);
        let scaled = scaling.scale(warm_rows);
        let r = warmup(res, scaled.view(), derive_seed(seed, "scan-warmup", attempt))?;
        attempt += 1;
        match closed_loop(res, readout, scaling, r, steps) {
            Ok((pred, _)) => Ok(Some(pred)),
            Err(ReservoirError::Divergence { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    };
    extreme_event_scan_with(predict, series, event_step, proto)
}

// ---------------------------------------------------------------------------
// precision / recall / F-score
// ---------------------------------------------------------------------------

/// Confusion counts and derived scores over a set of start points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventScores<T> {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: T,
    pub recall: T,
    pub fscore: T,
}

/// Whether the window contains an extreme event.
pub fn exceeds_threshold<T: Scalar>(k: &[T], k_e: T) -> bool {
    k.iter().any(|v| *v >= k_e)
}

/// Eq.-style precision/recall/F over (predicted, actual) outcome pairs.
/// Degenerate conventions: precision (recall) is 1 when no positives were
/// predicted (present); F is 0 when precision and recall are both 0.
pub fn event_scores<T: Scalar>(outcomes: &[(bool, bool)]) -> EventScores<T> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fne = 0usize;
    let mut tn = 0usize;
    for (predicted, actual) in outcomes {
        match (predicted, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num_c: usize, den: usize| -> T {
        if den == 0 {
            T::one()
        } else {
            num::<T>(num_c as f64) / num::<T>(den as f64)
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fne);
    let fscore = if precision + recall == T::zero() {
        T::zero()
    } else {
        num::<T>(2.0) * precision * recall / (precision + recall)
    };
    EventScores {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fne,
        true_negatives: tn,
        precision,
        recall,
        fscore,
    }
}

// ---------------------------------------------------------------------------
// linear memory capacity
// ---------------------------------------------------------------------------

/// Per-delay memory functions and their sum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryCapacity<T> {
    pub total: T,
    pub per_delay: Vec<T>,
}

/// Drives the reservoir with i.i.d. uniform scalar input and, for each delay
/// d = 1..=d_max, trains a ridge readout reconstructing u(t-d);
/// MF_d = cov^2(uhat_d, u(t-d)) / (var(uhat_d) var(u)). Readouts fit on the
/// first 80% of the harvested window and MF is evaluated on the held-out
/// tail, keeping in-sample inflation out of the capacity sum; the best beta
/// from the grid is kept per delay, and MC is the sum over delays.
pub fn memory_capacity<T: Scalar, R: Reservoir<T> + ?Sized>(
    res: &R,
    betas: &[T],
    d_max: usize,
    train_len: usize,
    washout: usize,
    seed: u64,
) -> Result<MemoryCapacity<T>> {
    if res.input_dim() != 1 {
        return Err(MetricsError::ScalarInputOnly {
            expected: res.input_dim(),
        });
    }
    let total_inputs = washout + d_max + train_len;
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "mc-input", 0));
    let inputs: Vec<T> = (0..total_inputs)
        .map(|_| num(rng.random_range(0.0..1.0)))
        .collect();
    let input_mat =
        Array2::from_shape_vec((total_inputs, 1), inputs.clone()).expect("shape");

    let mut r0_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "mc-r0", 0));
    let r0 = res.initial_state(&mut r0_rng);
    let states = open_loop(res, input_mat.view(), r0)?;

    // state row i is r(i+1); keep rows from washout + d_max - 1 so every
    // delayed target u(i+1-d) exists and the transient is gone
    let start_row = washout + d_max - 1;
    let k = states.nrows() - start_row;
    let n_r = res.state_dim();
    let mut z = Array2::ones((n_r + 1, k));
    z.slice_mut(ndarray::s![..n_r, ..])
        .assign(&states.slice(ndarray::s![start_row.., ..]).t());

    let mut targets = Array2::zeros((d_max, k));
    for d in 1..=d_max {
        for j in 0..k {
            targets[(d - 1, j)] = inputs[start_row + j + 1 - d];
        }
    }

    let k_fit = (k * 4) / 5;
    let z_fit = z.slice(ndarray::s![.., ..k_fit]).to_owned();
    let targets_fit = targets.slice(ndarray::s![.., ..k_fit]);
    let z_eval = z.slice(ndarray::s![.., k_fit..]);
    let targets_eval = targets.slice(ndarray::s![.., k_fit..]);

    let mut per_delay = vec![T::zero(); d_max];
    for beta in betas {
        let readout = crate::reservoir::train_readout(&z_fit, targets_fit, *beta)?;
        let predictions = readout.w_out.t().dot(&z_eval);
        for d in 0..d_max {
            let mf = squared_correlation(predictions.row(d), targets_eval.row(d));
            if mf > per_delay[d] {
                per_delay[d] = mf;
            }
        }
    }
    let total = per_delay.iter().cloned().sum();
    Ok(MemoryCapacity { total, per_delay })
}

fn squared_correlation<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    let n = num::<T>(a.len() as f64);
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let mut cov = T::zero();
    let mut va = T::zero();
    let mut vb = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        let dx = *x - ma;
        let dy = *y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == T::zero() || vb == T::zero() {
        return T::zero();
    }
    (cov * cov) / (va * vb)
}

// ---------------------------------------------------------------------------
// histograms
// ---------------------------------------------------------------------------

/// Normalized density histogram: sum(density * width) = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram<T> {
    /// bins + 1 edges.
    pub edges: Vec<T>,
    pub densities: Vec<T>,
}

/// Histogram of a series over `bins` equal-width bins. The range defaults to
/// the data range; a single repeated value gets a unit-width box around it.
pub fn pdf_histogram<T: Scalar>(
    series: &[T],
    bins: usize,
    range: Option<(T, T)>,
) -> Result<Histogram<T>> {
    if series.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    if bins == 0 {
        return Err(MetricsError::NoBins);
    }
    let (mut lo, mut hi) = range.unwrap_or_else(|| {
        let lo = series.iter().cloned().fold(T::infinity(), T::min);
        let hi = series.iter().cloned().fold(T::neg_infinity(), T::max);
        (lo, hi)
    });
    if !(hi > lo) {
        let half = num::<T>(0.5);
        lo = lo - half;
        hi = hi + half;
    }
    let width = (hi - lo) / num(bins as f64);
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for v in series {
        if *v < lo || *v > hi {
            continue;
        }
        let mut idx = ((*v - lo) / width).to_f64().unwrap() as usize;
        if idx >= bins {
            idx = bins - 1; // top edge belongs to the last bin
        }
        counts[idx] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(MetricsError::EmptySeries);
    }
    let norm = num::<T>(total as f64) * width;
    let densities = counts
        .iter()
        .map(|c| num::<T>(*c as f64) / norm)
        .collect();
    let edges = (0..=bins)
        .map(|i| lo + width * num(i as f64))
        .collect();
    Ok(Histogram { edges, densities })
}

/// Overlap coefficient sum(min(p, q) * width) of two histograms over the
/// same edges; 1 for identical distributions, 0 for disjoint ones.
pub fn histogram_overlap<T: Scalar>(a: &Histogram<T>, b: &Histogram<T>) -> Result<T> {
    if a.edges.len() != b.edges.len()
        || a.edges
            .iter()
            .zip(&b.edges)
            .any(|(x, y)| (*x - *y).abs() > num(1e-12))
    {
        return Err(MetricsError::EdgeMismatch);
    }
    let mut overlap = T::zero();
    for (i, (p, q)) in a.densities.iter().zip(&b.densities).enumerate() {
        let width = a.edges[i + 1] - a.edges[i];
        overlap += p.min(*q) * width;
    }
    Ok(overlap)
}

// ---------------------------------------------------------------------------
// aggregated report
// ---------------------------------------------------------------------------

/// Bundle of whichever metrics an experiment produced, for JSON export.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricReport<T> {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vpt: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ph: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fscore: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pdf: Option<Histogram<T>>,
}
