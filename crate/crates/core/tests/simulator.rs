use nalgebra::{dvector, DMatrix, DVector};

use reddpc::benchmark::synthesize_for;
use reddpc::closed_loop::{cost_index, rmse, run_closed_loop, Controller, InitialWindow, DIVERGENCE_BOUND};
use reddpc::problem::ParameterLayout;
use reddpc::oracle::ImplicitController;
use reddpc::rng::stream;
use reddpc::system::builtin_system;

fn siso_controllers(seed: u64) -> (reddpc::system::Benchmark, reddpc::explicit::ExplicitLaw, ImplicitController) {
    let bench = builtin_system("siso").unwrap();
    let data = bench.collect_with(&bench.system.noiseless(), &mut stream(seed, 0)).unwrap();
    let (qp, law) = synthesize_for(&bench, &data.measured().unwrap(), 1.0, None).unwrap();
    (bench, law, ImplicitController::new(qp).unwrap())
}

#[test]
fn step_matches_paper_entries() {
    let bench = builtin_system("siso").unwrap();
    let (x1, y, _) = bench.system.step(&dvector![1.0, 0.0], &dvector![0.0], &mut stream(0, 0));
    assert_eq!(y, dvector![1.0, 0.0]);
    approx::assert_abs_diff_eq!(x1[0], 0.7326, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(x1[1], 0.1722, epsilon = 1e-12);
}

#[test]
fn seeded_runs_are_bitwise_identical() {
    let (bench, law, _) = siso_controllers(4);
    let plant = bench.system.clone().with_measurement_noise(DMatrix::identity(2, 2) * 1e-3).unwrap();
    let init = InitialWindow::unforced(&plant, dvector![1.0, -0.5], 2).unwrap();
    let go = |seed| run_closed_loop(&plant, &law, 40, &init, &bench.spec.u_s, &bench.spec.y_s, &mut stream(seed, 3)).unwrap();
    let (a, b, c) = (go(8), go(8), go(9));
    assert_eq!(a.u, b.u);
    assert_eq!(a.y, b.y);
    assert_eq!(a.x, b.x);
    assert_ne!(a.y, c.y);
}

/// Largest output drift from the equilibrium over `steps` noiseless steps
/// under the explicit and implicit robust four-tank controllers.
fn equilibrium_drift(rho_alpha: f64, steps: usize) -> f64 {
    let mut bench = builtin_system("four_tank").unwrap();
    // the controller can rest only at a target the plant can actually hold
    let (_, y_eq) = bench.system.equilibrium(&bench.spec.u_s).unwrap();
    bench.spec.y_s = y_eq.clone();
    let data = bench.collect_with(&bench.system.noiseless(), &mut stream(2, 0)).unwrap();
    let (qp, law) = synthesize_for(&bench, &data.measured().unwrap(), rho_alpha, None).unwrap();
    let implicit = ImplicitController::new(qp).unwrap();
    let sys = bench.system.noiseless();
    let init = InitialWindow::equilibrium(&sys, &bench.spec.u_s, bench.spec.order).unwrap();
    let mut worst = 0.0f64;
    for res in [
        run_closed_loop(&sys, &law, steps, &init, &bench.spec.u_s, &y_eq, &mut stream(0, 0)).unwrap(),
        run_closed_loop(&sys, &implicit, steps, &init, &bench.spec.u_s, &y_eq, &mut stream(0, 0)).unwrap(),
    ] {
        for t in 0..res.steps() {
            worst = worst.max((res.y.column(t) - &y_eq).amax());
        }
    }
    worst
}

#[test]
fn equilibrium_drift_vanishes_with_regularization() {
    let drifts: Vec<f64> = [1e-1, 1e-3, 1e-5, 1e-7].iter().map(|&r| equilibrium_drift(r, 30)).collect();
    assert!(drifts.windows(2).all(|w| w[1] < w[0]), "{drifts:?}");
    assert!(drifts[3] <= 1e-8, "{drifts:?}");
}

#[test]
fn explicit_and_implicit_loops_coincide() {
    let (bench, law, implicit) = siso_controllers(6);
    let sys = bench.system.noiseless();
    let init = InitialWindow::unforced(&sys, dvector![1.0, 1.0], 2).unwrap();
    let a = run_closed_loop(&sys, &law, 50, &init, &bench.spec.u_s, &bench.spec.y_s, &mut stream(0, 0)).unwrap();
    let b = run_closed_loop(&sys, &implicit, 50, &init, &bench.spec.u_s, &bench.spec.y_s, &mut stream(0, 0)).unwrap();
    assert!(a.completed() && b.completed());
    for t in 0..a.steps() {
        let gap = (a.u.column(t) - b.u.column(t)).amax();
        assert!(gap <= 1e-6, "step {t}: {gap:e}");
    }
    assert!(rmse(&a.y, &b.y).unwrap() <= 1e-6);
    assert!(a.region_ids.iter().all(Option::is_some));
}

struct PositiveFeedback<'a>(&'a ParameterLayout);

impl Controller for PositiveFeedback<'_> {
    fn layout(&self) -> &ParameterLayout {
        self.0
    }

    fn control(&self, chi: &DVector<f64>) -> reddpc::Result<(DVector<f64>, Option<usize>)> {
        // latest output sample sits at the end of the window
        let n = chi.len();
        Ok((dvector![20.0 * (chi[n - 2] + chi[n - 1])], None))
    }
}

#[test]
fn unstable_loop_is_flagged() {
    let (bench, law, _) = siso_controllers(6);
    let sys = bench.system.noiseless();
    let init = InitialWindow::unforced(&sys, dvector![1.0, 1.0], 2).unwrap();
    let ctl = PositiveFeedback(&law.layout);
    let res = run_closed_loop(&sys, &ctl, 500, &init, &bench.spec.u_s, &bench.spec.y_s, &mut stream(0, 0)).unwrap();
    assert!(!res.stable);
    assert!(res.steps() < 500);
    let last = res.y_true.column(res.y_true.ncols() - 1);
    assert!(last.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND));
}

#[test]
fn metric_closed_forms() {
    let y = DMatrix::from_fn(2, 25, |i, t| (i + t) as f64);
    assert_eq!(rmse(&y, &y).unwrap(), 0.0);
    let mut shifted = y.clone();
    shifted.row_mut(1).add_scalar_mut(0.3);
    approx::assert_abs_diff_eq!(rmse(&shifted, &y).unwrap(), 0.15, epsilon = 1e-15);

    let (us, ys) = (dvector![1.0], dvector![2.0, -1.0]);
    let u = DMatrix::from_element(1, 10, 1.0);
    let yy = DMatrix::from_fn(2, 10, |i, _| ys[i]);
    let (q, r) = (DMatrix::identity(2, 2), DMatrix::identity(1, 1));
    assert_eq!(cost_index(&u, &yy, &q, &r, &us, &ys), 0.0);

    let y2 = yy.map(|v| v + 0.5);
    let u2 = u.map(|v| v - 0.2);
    let j1 = cost_index(&u2, &y2, &q, &r, &us, &ys);
    let j2 = cost_index(&u2, &y2, &(q * 2.0), &r, &us, &ys);
    let input_part = cost_index(&u2, &yy, &DMatrix::identity(2, 2), &r, &us, &ys);
    approx::assert_relative_eq!(j2 - j1, j1 - input_part, max_relative = 1e-14);
}
