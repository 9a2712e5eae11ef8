//! Echo state property: after a 2 LT washout on real system data, reservoir
//! states forget their random initialization.

use ndarray::{Array1, Array2};
use qrc_core::dynamics::{integrate, rescale_range, SystemId};
use qrc_core::reservoir::{open_loop, ClassicalReservoir, Reservoir};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn twin_gap(system: &SystemId<f64>, x0: Array1<f64>, dt: f64) -> f64 {
    let washout_lt = 2.0;
    let steps = qrc_core::dynamics::lt_to_steps(washout_lt, system.lyapunov_exponent(), dt);
    // drop a transient so the washout runs on-attractor
    let transient = integrate(system, x0.view(), 2000, dt).unwrap();
    let traj = integrate(
        system,
        transient.data.row(transient.data.nrows() - 1),
        steps,
        dt,
    )
    .unwrap();
    let scaled = rescale_range(&traj).unwrap();

    let res = ClassicalReservoir::<f64>::init(128, system.dim(), 0.5, 0.9, 0.6, 1.0, 7).unwrap();
    let mut rng_a = ChaCha12Rng::seed_from_u64(100);
    let mut rng_b = ChaCha12Rng::seed_from_u64(200);
    let r0_a = res.initial_state(&mut rng_a);
    let r0_b = res.initial_state(&mut rng_b);
    assert_ne!(r0_a, r0_b);

    let run = |r0| -> Array2<f64> { open_loop(&res, scaled.data.view(), r0).unwrap() };
    let states_a = run(r0_a);
    let states_b = run(r0_b);
    let last = states_a.nrows() - 1;
    states_a
        .row(last)
        .iter()
        .zip(states_b.row(last).iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[test]
fn lorenz63_twin_initializations_converge() {
    let gap = twin_gap(
        &SystemId::lorenz63(),
        ndarray::array![1.0, 1.0, 1.0],
        0.01,
    );
    assert!(gap < 1e-6, "per-component gap {gap}");
}

#[test]
fn lorenz96_twin_initializations_converge() {
    let mut x0 = Array1::from_elem(10, 8.0);
    x0[0] += 0.01;
    let gap = twin_gap(&SystemId::lorenz96(10), x0, 0.01);
    assert!(gap < 1e-6, "per-component gap {gap}");
}

#[test]
fn mfe_twin_initializations_converge() {
    let mut x0 = Array1::zeros(9);
    x0[0] = 1.0;
    x0[3] = 0.05;
    x0[5] = -0.05;
    let gap = twin_gap(&SystemId::mfe(), x0, 0.25);
    assert!(gap < 1e-6, "per-component gap {gap}");
}
