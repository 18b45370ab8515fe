//! Consistency checks between the Hankel-based problem and the
//! state-space problem built from a least-squares one-step predictor.
//!
//! Two state notions are supported: the measured state (outputs are the
//! state) and the non-minimal state `z_k = [u_{k-n..k-1}; y_{k-n..k-1}]`.
//! Everything here is verification tooling; none of it runs in a controller.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{build_hankel, HankelView, Signal, TrajectoryData};
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, pinv, repeat_block_diag, symmetrize, vstack};
use crate::oracle::{first_input, solve_dense, solve_qp, DenseQp};
use crate::problem::{build_relaxed, DdpcSpec, Polytope};
use crate::rng::stream;
use crate::system::state_terminal_map;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    /// The measured output is the plant state.
    Measured,
    /// Stacked window of the last `n` inputs and outputs.
    NonMinimal,
}

/// `z_k = [u_{k-n}; ...; u_{k-1}; y_{k-n}; ...; y_{k-1}]`.
pub fn nonminimal_state(u: &DMatrix<f64>, y: &DMatrix<f64>, order: usize, k: usize) -> Result<DVector<f64>> {
    if k < order {
        return Err(Error::dim(format!("window state needs k >= {order}, got {k}")));
    }
    if k > u.ncols() || k > y.ncols() {
        return Err(Error::dim(format!("window state at k = {k} runs past the data")));
    }
    let (m, p) = (u.nrows(), y.nrows());
    let mut z = DVector::zeros(order * (m + p));
    for j in 0..order {
        z.rows_mut(j * m, m).copy_from(&u.column(k - order + j));
        z.rows_mut(order * m + j * p, p).copy_from(&y.column(k - order + j));
    }
    Ok(z)
}

/// Selects `(u_{k-1}, y_{k-1})` from `z_k`.
pub fn latest_sample_map(m: usize, p: usize, order: usize) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(m + p, order * (m + p));
    for i in 0..m {
        v[(i, (order - 1) * m + i)] = 1.0;
    }
    for i in 0..p {
        v[(m + i, order * m + (order - 1) * p + i)] = 1.0;
    }
    v
}

/// Maps the stacked trajectory `[u_{-n..L-1}; y_{-n..L-1}]` to
/// `[z_1; ...; z_L]`.
pub fn window_shift_map(m: usize, p: usize, order: usize, horizon: usize) -> DMatrix<f64> {
    let nz = order * (m + p);
    let total = horizon + order;
    let mut t = DMatrix::zeros(horizon * nz, total * (m + p));
    for k in 1..=horizon {
        let row0 = (k - 1) * nz;
        for j in 0..order {
            // sample k - n + j sits at stacked index k + j
            let s = k + j;
            for i in 0..m {
                t[(row0 + j * m + i, s * m + i)] = 1.0;
            }
            for i in 0..p {
                t[(row0 + order * m + j * p + i, total * m + s * p + i)] = 1.0;
            }
        }
    }
    t
}

/// Aligned one-step data: `next[:, j]` follows `current[:, j]` under
/// `inputs[:, j]`.
#[derive(Debug, Clone)]
pub struct DataMatrices {
    pub kind: StateKind,
    pub inputs: DMatrix<f64>,
    pub current: DMatrix<f64>,
    pub next: DMatrix<f64>,
}

impl DataMatrices {
    /// Measured states `x` (`n_x x N`), columns starting at sample `start`.
    pub fn from_states(u: &DMatrix<f64>, x: &DMatrix<f64>, start: usize) -> Result<Self> {
        let len = u.ncols().min(x.ncols());
        if len < start + 2 {
            return Err(Error::dim("too few samples for one-step data matrices"));
        }
        let cols = len - 1 - start;
        Ok(Self {
            kind: StateKind::Measured,
            inputs: u.columns(start, cols).into_owned(),
            current: x.columns(start, cols).into_owned(),
            next: x.columns(start + 1, cols).into_owned(),
        })
    }

    /// Window states built from the trajectory itself.
    pub fn nonminimal(data: &TrajectoryData, order: usize) -> Result<Self> {
        let len = data.len();
        if len < order + 1 {
            return Err(Error::dim("too few samples for window states"));
        }
        let cols = len - order;
        let z = |k| nonminimal_state(&data.u, &data.y, order, k);
        let mut current = DMatrix::zeros(order * (data.m() + data.p()), cols);
        let mut next = current.clone();
        for j in 0..cols {
            current.set_column(j, &z(order + j)?);
            next.set_column(j, &z(order + j + 1)?);
        }
        Ok(Self {
            kind: StateKind::NonMinimal,
            inputs: data.u.columns(order, cols).into_owned(),
            current,
            next,
        })
    }

    pub fn regressor(&self) -> DMatrix<f64> {
        vstack(&[&self.inputs, &self.current])
    }
}

/// `s+ = B s_u + A s`.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub b: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

impl Predictor {
    pub fn step(&self, s: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * s + &self.b * u
    }

    /// Largest entry of `next - [B A] [inputs; current]`.
    pub fn residual(&self, dm: &DataMatrices) -> f64 {
        (&dm.next - &self.a * &dm.current - &self.b * &dm.inputs).amax()
    }

    /// `(Gamma_k, Xi_k)` for `k = 0..=horizon` with
    /// `s_k = Xi_k s_0 + Gamma_k [u_0; ...; u_{L-1}]`.
    pub fn prediction_matrices(&self, horizon: usize) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
        let (ns, m) = (self.a.nrows(), self.b.ncols());
        let mut out = Vec::with_capacity(horizon + 1);
        let mut gamma = DMatrix::zeros(ns, m * horizon);
        let mut xi = DMatrix::identity(ns, ns);
        out.push((gamma.clone(), xi.clone()));
        for k in 0..horizon {
            gamma = &self.a * gamma;
            let mut blk = gamma.view_mut((0, k * m), (ns, m));
            blk += &self.b;
            xi = &self.a * xi;
            out.push((gamma.clone(), xi.clone()));
        }
        out
    }
}

/// Least-squares one-step predictor via the minimum-norm right inverse.
///
/// Measured-state data must have a full-row-rank regressor. Window-state
/// regressors are rank deficient by construction (the window holds more
/// coordinates than the plant has states), and the minimum-norm solution is
/// still exact on the data subspace, so no rank check is made for them.
pub fn data_predictor(dm: &DataMatrices) -> Result<Predictor> {
    let reg = dm.regressor();
    if dm.kind == StateKind::Measured {
        let rank = numerical_rank(&reg).rank;
        if rank < reg.nrows() {
            return Err(Error::RankDeficient { rank, rows: reg.nrows() });
        }
    }
    let ba = &dm.next * pinv(&reg);
    let m = dm.inputs.nrows();
    Ok(Predictor {
        b: ba.columns(0, m).into_owned(),
        a: ba.columns(m, dm.current.nrows()).into_owned(),
    })
}

/// Selection and reconstruction maps for a given predictor.
#[derive(Debug, Clone)]
pub struct SelectionMaps {
    /// Terminal state from the last `n` inputs and states.
    pub terminal: DMatrix<f64>,
    /// Latest `(u, y)` from a window state.
    pub latest: DMatrix<f64>,
    /// Window states along a stacked trajectory.
    pub shift: DMatrix<f64>,
}

impl SelectionMaps {
    pub fn new(pred: &Predictor, m: usize, p: usize, order: usize, horizon: usize) -> Self {
        Self {
            terminal: state_terminal_map(&pred.a, &pred.b, order),
            latest: latest_sample_map(m, p, order),
            shift: window_shift_map(m, p, order, horizon),
        }
    }
}

/// Stage, input and terminal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

/// Measured state: state-space weights to Hankel-problem weights,
/// `(Q, R, T' P T)`.
pub fn state_weights(state_space: &Weights, terminal_map: &DMatrix<f64>) -> Weights {
    Weights {
        q: state_space.q.clone(),
        r: state_space.r.clone(),
        p: symmetrize(&(terminal_map.transpose() * &state_space.p * terminal_map)),
    }
}

/// Window state: Hankel-problem weights to state-space weights,
/// `(V' diag(R, Q) V, 0, P + V' diag(R, Q) V)`.
pub fn output_weights(hankel: &Weights, latest: &DMatrix<f64>) -> Weights {
    let (m, p) = (hankel.r.nrows(), hankel.q.nrows());
    let mut d = DMatrix::zeros(m + p, m + p);
    d.view_mut((0, 0), (m, m)).copy_from(&hankel.r);
    d.view_mut((m, m), (p, p)).copy_from(&hankel.q);
    let q = symmetrize(&(latest.transpose() * d * latest));
    Weights {
        p: &hankel.p + &q,
        q,
        r: DMatrix::zeros(m, m),
    }
}

/// Dispatch on the state notion; see [`state_weights`] and [`output_weights`].
pub fn map_weights(kind: StateKind, weights: &Weights, maps: &SelectionMaps) -> Weights {
    match kind {
        StateKind::Measured => state_weights(weights, &maps.terminal),
        StateKind::NonMinimal => output_weights(weights, &maps.latest),
    }
}

fn unit_weights<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = v.norm();
    v / norm
}

/// Largest deviation between the `L`-step propagation of the data
/// predictor and the shifted-state Hankel matrix, over random unit-norm
/// weight vectors.
///
/// Measured states need the state after the last predicted step, so the
/// Hankel matrices are built on all but the last sample.
pub fn verify_model_equivalence(
    data: &TrajectoryData,
    horizon: usize,
    order: usize,
    kind: StateKind,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let (hv, shifted, dm) = match kind {
        StateKind::Measured => {
            let len = data.len();
            let hv = HankelView::from_data(&data.window(0, len - 1), horizon, order)?;
            let shifted = build_hankel(&data.y.columns(order + 1, len - order - 1).into_owned(), horizon)?;
            (hv, shifted, DataMatrices::from_states(&data.u, &data.y, order)?)
        }
        StateKind::NonMinimal => {
            let hv = HankelView::from_data(data, horizon, order)?;
            let dm = DataMatrices::nonminimal(data, order)?;
            // z_{n+1}, ..., z_N are the columns of `next`
            let shifted = build_hankel(&dm.next, horizon)?;
            (hv, shifted, dm)
        }
    };
    let pred = data_predictor(&dm)?;
    let ns = dm.current.nrows();
    let mut rng = stream(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let alpha = unit_weights(hv.n_alpha(), &mut rng);
        let mut s = match kind {
            StateKind::Measured => hv.step(Signal::Output, 0) * &alpha,
            StateKind::NonMinimal => vstack_vectors(&hv.past(Signal::Input), &hv.past(Signal::Output), &alpha),
        };
        let target = &shifted * &alpha;
        for k in 0..horizon {
            let u = hv.step(Signal::Input, k) * &alpha;
            s = pred.step(&s, &u);
            let dev = (&s - target.rows(k * ns, ns)).amax();
            worst = worst.max(dev);
        }
    }
    Ok(worst)
}

fn vstack_vectors(top: &DMatrix<f64>, bottom: &DMatrix<f64>, alpha: &DVector<f64>) -> DVector<f64> {
    vstack(&[top, bottom]) * alpha
}

/// Largest deviation of `T chi_t` from the measured state `x_t`, where
/// `chi_t` stacks the preceding `n` inputs and states.
pub fn initial_condition_residual(data: &TrajectoryData, order: usize) -> Result<f64> {
    let dm = DataMatrices::from_states(&data.u, &data.y, order)?;
    let pred = data_predictor(&dm)?;
    let t_map = state_terminal_map(&pred.a, &pred.b, order);
    let mut worst = 0.0f64;
    for t in order..data.len() {
        let u = data.u.columns(t - order, order);
        let x = data.y.columns(t - order, order);
        let chi = DVector::from_iterator(t_map.ncols(), u.iter().chain(x.iter()).copied());
        worst = worst.max((&t_map * chi - data.y.column(t)).amax());
    }
    Ok(worst)
}

/// Relative gap between the window-state cost with mapped weights and the
/// input/output cost plus the two initial stage terms, for one trajectory
/// over `[-n, L-1]` (`u`: `m x (n+L)`, `y`: `p x (n+L)`).
pub fn cost_identity_gap(u: &DMatrix<f64>, y: &DMatrix<f64>, hankel: &Weights, order: usize) -> Result<f64> {
    let (m, p) = (u.nrows(), y.nrows());
    let horizon = u
        .ncols()
        .checked_sub(order)
        .filter(|&l| l > 0 && y.ncols() == u.ncols())
        .ok_or_else(|| Error::dim("trajectory must cover n + L samples"))?;
    let mapped = output_weights(hankel, &latest_sample_map(m, p, order));
    let quad = |v: &DVector<f64>, w: &DMatrix<f64>| v.dot(&(w * v));

    // z_k for k = 0..=L lives at stacked index k (sample k - n)
    let z = |k: usize| nonminimal_state(u, y, order, k + order);
    let mut lhs = 0.0;
    for k in 0..horizon {
        lhs += quad(&z(k)?, &mapped.q);
    }
    lhs += quad(&z(horizon)?, &mapped.p);

    let col = |mat: &DMatrix<f64>, k: usize| mat.column(k).into_owned();
    let mut rhs = quad(&col(u, order - 1), &hankel.r) + quad(&col(y, order - 1), &hankel.q);
    for k in order..order + horizon {
        rhs += quad(&col(y, k), &hankel.q) + quad(&col(u, k), &hankel.r);
    }
    rhs += quad(&z(horizon)?, &hankel.p);
    Ok((lhs - rhs).abs() / rhs.abs().max(1.0))
}

/// Product set of `n` copies of the input set and `n` copies of the output
/// set, in window-state coordinates.
pub fn window_constraint_set(inputs: &Polytope, outputs: &Polytope, m: usize, p: usize, order: usize) -> Result<Polytope> {
    let (gu, bu) = inputs.matrices(m);
    let (gy, by) = outputs.matrices(p);
    let nz = order * (m + p);
    let mut halfspaces = Vec::new();
    for j in 0..order {
        for (g, b, off) in [(&gu, &bu, j * m), (&gy, &by, order * m + j * p)] {
            for r in 0..g.nrows() {
                let mut normal = vec![0.0; nz];
                for (c, v) in g.row(r).iter().enumerate() {
                    normal[off + c] = *v;
                }
                halfspaces.push(crate::problem::Halfspace { normal, bound: b[r] });
            }
        }
    }
    Ok(Polytope { halfspaces })
}

/// Largest first-input difference between the relaxed Hankel problem and
/// the state-space problem over the data predictor, at each `chi`.
///
/// For measured states `weights` are the state-space weights and the Hankel
/// problem receives `(Q, R, T' P T)`; for window states `weights` are the
/// Hankel weights and the state-space problem receives the mapped ones.
/// Only input constraints are imposed, identically in both problems.
#[allow(clippy::too_many_arguments)]
pub fn verify_problem_equivalence(
    data: &TrajectoryData,
    horizon: usize,
    order: usize,
    kind: StateKind,
    weights: &Weights,
    input_set: &Polytope,
    rho_alpha: f64,
    chis: &[DVector<f64>],
) -> Result<f64> {
    let (m, p) = (data.m(), data.p());
    let dm = match kind {
        StateKind::Measured => DataMatrices::from_states(&data.u, &data.y, order)?,
        StateKind::NonMinimal => DataMatrices::nonminimal(data, order)?,
    };
    let pred = data_predictor(&dm)?;
    let maps = SelectionMaps::new(&pred, m, p, order, horizon);
    let mapped = map_weights(kind, weights, &maps);
    let (hankel_w, state_w) = match kind {
        StateKind::Measured => (mapped, weights.clone()),
        StateKind::NonMinimal => (weights.clone(), mapped),
    };

    let mut spec = DdpcSpec::new(horizon, order, hankel_w.q.clone(), hankel_w.r.clone(), rho_alpha);
    spec.terminal_weight = Some(hankel_w.p.clone());
    spec.input_set = input_set.clone();
    let hv = HankelView::from_data(data, horizon, order)?;
    let qp = build_relaxed(&spec, &hv)?;

    // state-space QP over the input sequence
    let pm = pred.prediction_matrices(horizon);
    let mut w = repeat_block_diag(&state_w.r, horizon);
    let mut lin = DMatrix::zeros(m * horizon, pred.a.nrows());
    for (k, (gamma, xi)) in pm.iter().enumerate() {
        let weight = if k < horizon { &state_w.q } else { &state_w.p };
        w += gamma.transpose() * weight * gamma;
        lin += gamma.transpose() * weight * xi;
    }
    let w = symmetrize(&w);
    let (gu, bu) = input_set.matrices(m);
    let g = repeat_block_diag(&gu, horizon);
    let h = DVector::from_iterator(bu.len() * horizon, (0..horizon).flat_map(|_| bu.iter().copied()));

    let mut worst = 0.0f64;
    for chi in chis {
        let s0 = match kind {
            StateKind::Measured => &maps.terminal * chi,
            StateKind::NonMinimal => chi.clone(),
        };
        let dense = DenseQp {
            w: w.clone(),
            c: &lin * s0,
            a_eq: DMatrix::zeros(0, m * horizon),
            b_eq: DVector::zeros(0),
            g: g.clone(),
            h: h.clone(),
        };
        let u_state = solve_dense(&dense)?.alpha.rows(0, m).into_owned();
        let u_hankel = first_input(&qp, &solve_qp(&qp, chi)?.alpha);
        worst = worst.max((u_state - u_hankel).amax());
    }
    Ok(worst)
}
