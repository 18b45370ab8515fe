//! Receding-horizon closed loops and performance metrics.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::explicit::ExplicitLaw;
use crate::oracle::ImplicitController;
use crate::problem::{assemble_parameter, ParameterLayout};
use crate::system::LtiSystem;

/// Divergence detector on `|y|_inf`.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Anything mapping the parameter vector to the next input.
pub trait Controller {
    fn layout(&self) -> &ParameterLayout;
    /// Input and, for piecewise laws, the region used.
    fn control(&self, chi: &DVector<f64>) -> Result<(DVector<f64>, Option<usize>)>;
}

impl Controller for ExplicitLaw {
    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    fn control(&self, chi: &DVector<f64>) -> Result<(DVector<f64>, Option<usize>)> {
        let (u, idx) = self.evaluate(chi)?;
        Ok((u, Some(idx)))
    }
}

impl Controller for ImplicitController {
    fn layout(&self) -> &ParameterLayout {
        &self.qp.layout
    }

    fn control(&self, chi: &DVector<f64>) -> Result<(DVector<f64>, Option<usize>)> {
        Ok((ImplicitController::control(self, chi)?, None))
    }
}

/// Plant state at the start of the loop plus the `n` most recent samples,
/// oldest first.
#[derive(Debug, Clone)]
pub struct InitialWindow {
    pub x0: DVector<f64>,
    pub past_u: DMatrix<f64>,
    pub past_y: DMatrix<f64>,
}

impl InitialWindow {
    /// Zero state and zero history.
    pub fn at_rest(sys: &LtiSystem, order: usize) -> Self {
        Self {
            x0: DVector::zeros(sys.n_x()),
            past_u: DMatrix::zeros(sys.m(), order),
            past_y: DMatrix::zeros(sys.p(), order),
        }
    }

    /// Window reached from `x0` backwards under zero input: the past states
    /// are `A^-k x0` and the past outputs their noiseless measurements.
    pub fn unforced(sys: &LtiSystem, x0: DVector<f64>, order: usize) -> Result<Self> {
        let a_inv = sys
            .a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidSpec("state matrix is singular; cannot rewind".into()))?;
        let mut past_y = DMatrix::zeros(sys.p(), order);
        let mut x = x0.clone();
        for k in (0..order).rev() {
            x = &a_inv * x;
            past_y.set_column(k, &(&sys.c * &x));
        }
        Ok(Self {
            x0,
            past_u: DMatrix::zeros(sys.m(), order),
            past_y,
        })
    }

    /// Equilibrium of the plant under constant input `u_s`.
    pub fn equilibrium(sys: &LtiSystem, u_s: &DVector<f64>, order: usize) -> Result<Self> {
        let (xs, ys) = sys.equilibrium(u_s)?;
        Ok(Self {
            x0: xs,
            past_u: DMatrix::from_fn(sys.m(), order, |i, _| u_s[i]),
            past_y: DMatrix::from_fn(sys.p(), order, |i, _| ys[i]),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoopResult {
    /// Applied inputs, one column per step.
    pub u: DMatrix<f64>,
    /// Measured outputs.
    pub y: DMatrix<f64>,
    pub y_true: DMatrix<f64>,
    /// States, including the state after the last step.
    pub x: DMatrix<f64>,
    pub region_ids: Vec<Option<usize>>,
    /// Controller time per step, seconds.
    pub step_times: Vec<f64>,
    pub stable: bool,
    /// Why the run stopped before the requested number of steps.
    pub aborted: Option<String>,
}

impl ClosedLoopResult {
    pub fn steps(&self) -> usize {
        self.u.ncols()
    }

    pub fn completed(&self) -> bool {
        self.aborted.is_none() && self.stable
    }

    pub fn cost(&self, q: &DMatrix<f64>, r: &DMatrix<f64>, u_s: &DVector<f64>, y_s: &DVector<f64>) -> f64 {
        cost_index(&self.u, &self.y, q, r, u_s, y_s)
    }
}

/// Run `steps` steps of receding-horizon control.
///
/// At step `t` the controller sees the last `n` inputs and measured outputs,
/// returns `u_t`, and the plant produces `y_t` and `x_{t+1}`. Controller
/// failures stop the run and are reported through `aborted`.
pub fn run_closed_loop<C: Controller + ?Sized, R: Rng + ?Sized>(
    sys: &LtiSystem,
    controller: &C,
    steps: usize,
    init: &InitialWindow,
    u_target: &DVector<f64>,
    y_target: &DVector<f64>,
    rng: &mut R,
) -> Result<ClosedLoopResult> {
    let layout = controller.layout();
    let (m, p, n) = (layout.m, layout.p, layout.order);
    if sys.m() != m || sys.p() != p {
        return Err(Error::dim(format!(
            "controller is for {m} inputs/{p} outputs, plant has {}/{}",
            sys.m(),
            sys.p()
        )));
    }
    if init.past_u.shape() != (m, n) || init.past_y.shape() != (p, n) || init.x0.len() != sys.n_x() {
        return Err(Error::dim("initial window does not match the controller and plant"));
    }
    let mut past_u = init.past_u.clone();
    let mut past_y = init.past_y.clone();
    let mut x = init.x0.clone();

    let mut us = Vec::with_capacity(steps);
    let mut ys = Vec::with_capacity(steps);
    let mut ys_true = Vec::with_capacity(steps);
    let mut xs = vec![x.clone()];
    let mut region_ids = Vec::with_capacity(steps);
    let mut step_times = Vec::with_capacity(steps);
    let mut stable = true;
    let mut aborted = None;

    for t in 0..steps {
        let chi = assemble_parameter(layout, &past_u, &past_y, u_target, y_target)?;
        let start = Instant::now();
        let outcome = controller.control(&chi);
        let elapsed = start.elapsed().as_secs_f64();
        let (u, region) = match outcome {
            Ok(v) => v,
            Err(e) => {
                log::warn!("closed loop stopped at step {t}: {e}");
                aborted = Some(format!("step {t}: {e}"));
                break;
            }
        };
        let (next, y, y_true) = sys.step(&x, &u, rng);
        step_times.push(elapsed);
        region_ids.push(region);
        shift_in(&mut past_u, &u);
        shift_in(&mut past_y, &y);
        let diverged = y_true.amax() > DIVERGENCE_BOUND || !y_true.iter().all(|v| v.is_finite());
        us.push(u);
        ys.push(y);
        ys_true.push(y_true);
        xs.push(next.clone());
        x = next;
        if diverged {
            stable = false;
            break;
        }
    }

    Ok(ClosedLoopResult {
        u: columns(&us, m),
        y: columns(&ys, p),
        y_true: columns(&ys_true, p),
        x: columns(&xs, sys.n_x()),
        region_ids,
        step_times,
        stable,
        aborted,
    })
}

fn shift_in(window: &mut DMatrix<f64>, newest: &DVector<f64>) {
    let n = window.ncols();
    for k in 1..n {
        let col = window.column(k).into_owned();
        window.set_column(k - 1, &col);
    }
    window.set_column(n - 1, newest);
}

fn columns(cols: &[DVector<f64>], rows: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

/// Root-mean-square deviation per channel, averaged over channels.
pub fn rmse(y: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
    if y.shape() != reference.shape() {
        return Err(Error::dim(format!(
            "trajectories differ in shape: {:?} vs {:?}",
            y.shape(),
            reference.shape()
        )));
    }
    let (p, len) = y.shape();
    if p == 0 || len == 0 {
        return Err(Error::dim("empty trajectories"));
    }
    let total: f64 = (0..p)
        .map(|i| {
            let ms = (0..len).map(|t| (y[(i, t)] - reference[(i, t)]).powi(2)).sum::<f64>() / len as f64;
            ms.sqrt()
        })
        .sum();
    Ok(total / p as f64)
}

/// `sum_t |y_t - y_s|^2_Q + |u_t - u_s|^2_R`.
pub fn cost_index(
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    u_s: &DVector<f64>,
    y_s: &DVector<f64>,
) -> f64 {
    let mut j = 0.0;
    for t in 0..u.ncols().min(y.ncols()) {
        let dy = y.column(t) - y_s;
        let du = u.column(t) - u_s;
        j += dy.dot(&(q * &dy)) + du.dot(&(r * &du));
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::system::siso_plant;
    use nalgebra::{dmatrix, dvector};

    struct Constant(ParameterLayout, f64);

    impl Controller for Constant {
        fn layout(&self) -> &ParameterLayout {
            &self.0
        }
        fn control(&self, chi: &DVector<f64>) -> Result<(DVector<f64>, Option<usize>)> {
            if chi[0].abs() > 10.0 {
                return Err(Error::NoRegion);
            }
            Ok((dvector![self.1], None))
        }
    }

    fn layout() -> ParameterLayout {
        use crate::problem::ParamBlock::*;
        ParameterLayout {
            m: 1,
            p: 2,
            order: 2,
            blocks: vec![PastInputs, PastOutputs],
        }
    }

    #[test]
    fn rmse_closed_forms() {
        let a = dmatrix![1.0, 2.0, 3.0; 0.0, 0.0, 0.0];
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = a.add_scalar(0.0) + dmatrix![0.3, 0.3, 0.3; 0.0, 0.0, 0.0];
        approx::assert_abs_diff_eq!(rmse(&a, &b).unwrap(), 0.15, epsilon = 1e-15);
        assert!(rmse(&a, &dmatrix![1.0]).is_err());
    }

    #[test]
    fn cost_is_linear_in_weights() {
        let u = dmatrix![1.0, 0.5];
        let y = dmatrix![0.2, 0.1; 0.3, -0.4];
        let (us, ys) = (dvector![0.0], dvector![0.1, 0.1]);
        let q = DMatrix::identity(2, 2);
        let r = dmatrix![0.0];
        let j1 = cost_index(&u, &y, &q, &r, &us, &ys);
        let j2 = cost_index(&u, &y, &(q * 2.0), &r, &us, &ys);
        approx::assert_abs_diff_eq!(j2, 2.0 * j1, epsilon = 1e-15);
        assert_eq!(cost_index(&dmatrix![0.0], &dmatrix![0.1; 0.1], &DMatrix::identity(2, 2), &dmatrix![1.0], &us, &ys), 0.0);
    }

    #[test]
    fn window_rolls_oldest_first() {
        let sys = siso_plant();
        let init = InitialWindow::at_rest(&sys, 2);
        let res = run_closed_loop(&sys, &Constant(layout(), 1.0), 3, &init, &dvector![0.0], &dvector![0.0, 0.0], &mut stream(0, 0)).unwrap();
        assert!(res.completed());
        assert_eq!(res.steps(), 3);
        assert_eq!(res.x.ncols(), 4);
        // y_t = x_t
        assert_eq!(res.y.column(1), res.x.column(1));
    }

    #[test]
    fn controller_failure_returns_partial_run() {
        let sys = siso_plant();
        // the input window reaches 11 after the first two steps
        let res = run_closed_loop(&sys, &Constant(layout(), 11.0), 5, &InitialWindow::at_rest(&sys, 2), &dvector![0.0], &dvector![0.0, 0.0], &mut stream(0, 0)).unwrap();
        assert_eq!(res.steps(), 2);
        assert!(res.aborted.is_some());
    }

    #[test]
    fn divergence_is_flagged() {
        let sys = siso_plant();
        let res = run_closed_loop(&sys, &Constant(layout(), 0.0), 3, &InitialWindow { x0: dvector![1e7, 0.0], ..InitialWindow::at_rest(&sys, 2) }, &dvector![0.0], &dvector![0.0, 0.0], &mut stream(0, 0)).unwrap();
        assert!(!res.stable);
        assert_eq!(res.steps(), 1);
    }

    #[test]
    fn unforced_window_rewinds() {
        let sys = siso_plant();
        let w = InitialWindow::unforced(&sys, dvector![1.0, 1.0], 2).unwrap();
        let x1 = &sys.a * w.past_y.column(1);
        approx::assert_abs_diff_eq!(x1, dvector![1.0, 1.0], epsilon = 1e-12);
        let x0 = &sys.a * w.past_y.column(0);
        approx::assert_abs_diff_eq!(x0, w.past_y.column(1).into_owned(), epsilon = 1e-12);
    }
}
