//! Open-loop (teacher-forced) predictions must beat the autonomous closed
//! loop on the same segment, since the former never accumulates feedback
//! error.

use ndarray::s;
use qrc_core::dynamics::{integrate, lt_to_steps, rescale_range, SystemId};
use qrc_core::metrics::{component_std, nrmse_series};
use qrc_core::reservoir::{
    closed_loop, fit_readout, harvest, warmup, ClassicalReservoir,
};

#[test]
fn open_loop_error_never_exceeds_closed_loop() {
    let system = SystemId::<f64>::lorenz63();
    let dt = 0.01;
    let lyap = system.lyapunov_exponent();
    let n_w = lt_to_steps(2.0, lyap, dt);
    let n_tr = lt_to_steps(20.0, lyap, dt);
    let n_te = lt_to_steps(6.0, lyap, dt);

    let transient = integrate(&system, ndarray::array![1.0, 1.0, 1.0].view(), 1000, dt).unwrap();
    let traj = integrate(
        &system,
        transient.data.row(transient.data.nrows() - 1),
        n_w + n_tr + n_te,
        dt,
    )
    .unwrap();
    let scaled = rescale_range(&traj).unwrap();
    let scaling = scaled.scaling.clone().unwrap();

    let res = ClassicalReservoir::<f64>::init(256, 3, 0.5, 0.9, 0.6, 1.0, 11).unwrap();
    let train_rows = scaled.data.slice(s![..n_w + n_tr + 1, ..]);
    let readout = fit_readout(&res, train_rows, n_w, 1e-9, 77).unwrap();

    // warm up on true data up to the prediction start
    let start = n_w + n_tr;
    let warm = scaled.data.slice(s![start - n_w..=start, ..]);
    let r = warmup(&res, warm, 5).unwrap();

    let horizon = n_te;
    let (pred_closed, _) = closed_loop(&res, &readout, &scaling, r.clone(), horizon).unwrap();

    // teacher-forced: drive with the true inputs over the same rows
    let h = harvest(&res, scaled.data.slice(s![start - n_w..start + horizon + 1, ..]), n_w, 5)
        .unwrap();
    let states = h.states;
    let pred_open_scaled = readout.w_out.t().dot(&states);
    let pred_open = scaling.unscale(pred_open_scaled.t());

    let truth = traj.data.slice(s![start + 1..start + 1 + horizon, ..]);
    let sigma = component_std(truth);
    let err_open = nrmse_series(truth, pred_open.view(), &sigma).unwrap();
    let err_closed = nrmse_series(truth, pred_closed.view(), &sigma).unwrap();

    // predictions coincide at the first step (same reservoir state); beyond
    // it the teacher-forced run must stay at least as accurate
    assert!((err_open[0] - err_closed[0]).abs() < 1e-9);
    let mut strictly_better = 0;
    for t in 1..horizon {
        assert!(
            err_open[t] <= err_closed[t] + 1e-9,
            "open loop worse at step {t}: {} vs {}",
            err_open[t],
            err_closed[t]
        );
        if err_open[t] < err_closed[t] {
            strictly_better += 1;
        }
    }
    assert!(
        strictly_better > horizon / 2,
        "closed loop unexpectedly matched the teacher-forced run"
    );
}
