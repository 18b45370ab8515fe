//! Seeded instance generators and property checks shared by the property
//! tests and the acceptance binary. Each check returns the worst deviation it
//! saw so callers can both assert and report it.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use reddpc::data::{build_hankel, check_persistency, generate_excitation_with, HankelView, Signal, TrajectoryData};
use reddpc::explicit::{synthesize, ExplicitLaw, PieceBuilder};
use reddpc::linalg::{min_eigenvalue, numerical_rank, spectral_radius};
use reddpc::oracle::{DenseQp, OracleSolution, QpSolver};
use reddpc::problem::{build, CompactQP, DdpcSpec, ParamBlock, Polytope, Variant};
use reddpc::rng::{stream, SimRng};
use reddpc::system::LtiSystem;

pub const KKT_TOL: f64 = 1e-8;
pub const CONTINUITY_TOL: f64 = 1e-8;
pub const ENUMERATION_TOL: f64 = 1e-8;

fn gaussian(rows: usize, cols: usize, rng: &mut SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random stable plant with a noiseless trajectory long enough for an order
/// `L + 2n` persistently exciting input.
pub struct Instance {
    pub system: LtiSystem,
    pub data: TrajectoryData,
    pub horizon: usize,
    pub order: usize,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = stream(seed, 77);
    let m = rng.random_range(1..=2);
    let p = rng.random_range(1..=2);
    // at most 10 input-box rows over the horizon, and L >= n
    let horizon = rng.random_range(1..=(5 / m));
    let nx = rng.random_range(1..=horizon.min(3));
    // Redraw plants and data whose KKT systems are badly conditioned: nearly
    // unobservable or uncontrollable plants, or past-window Hankel rows close
    // to (but not exactly) dependent. Their multipliers grow so large that
    // absolute residuals are dominated by rounding.
    loop {
        let mut a = gaussian(nx, nx, &mut rng);
        let rad = spectral_radius(&a).max(1e-3);
        a *= rng.random_range(0.3..0.9) / rad;
        let b = gaussian(nx, m, &mut rng);
        let c = gaussian(p, nx, &mut rng);
        if !well_conditioned(&a, &b, &c) {
            continue;
        }
        let system = LtiSystem::new(a, b, c, DMatrix::zeros(p, m)).expect("consistent dimensions");
        let order = nx;
        let depth = horizon + 2 * order;
        let n = 3 * (m + 1) * depth + 10;
        let u = generate_excitation_with(&mut rng, n, -1.0, 1.0, m).expect("valid bounds");
        let run = system.simulate(&DVector::zeros(nx), &u, &mut rng);
        let data = run.noiseless().expect("aligned");
        let hv = HankelView::from_data(&data, horizon, order).expect("enough data");
        let rep = numerical_rank(&hv.past_stack());
        let kept = rep.singular_values.iter().filter(|&&v| v > rep.tolerance);
        let (hi, lo) = kept.fold((0.0f64, f64::INFINITY), |(h, l), &v| (h.max(v), l.min(v)));
        if hi / lo > MAX_CONDITION {
            continue;
        }
        return Instance {
            data,
            system,
            horizon,
            order,
        };
    }
}

/// Condition bound for observability, controllability and past-window data.
pub const MAX_CONDITION: f64 = 1e3;

fn well_conditioned(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let nx = a.nrows();
    let mut obs = c.clone();
    let mut ctr = b.clone();
    let (mut ca, mut ab) = (c.clone(), b.clone());
    for _ in 1..nx {
        ca = &ca * a;
        ab = a * &ab;
        obs = reddpc::linalg::vstack(&[&obs, &ca]);
        ctr = DMatrix::from_fn(nx, ctr.ncols() + ab.ncols(), |i, j| if j < ctr.ncols() { ctr[(i, j)] } else { ab[(i, j - ctr.ncols())] });
    }
    let cond = |m: DMatrix<f64>| {
        let sv = m.singular_values();
        let (hi, lo) = (sv.max(), sv.iter().take(nx).copied().fold(f64::INFINITY, f64::min));
        if sv.len() < nx { f64::INFINITY } else { hi / lo }
    };
    cond(obs) <= MAX_CONDITION && cond(ctr) <= MAX_CONDITION
}

pub fn spec_for(inst: &Instance, variant: Variant) -> DdpcSpec {
    let (m, p) = (inst.system.m(), inst.system.p());
    let mut spec = DdpcSpec::new(
        inst.horizon,
        inst.order,
        DMatrix::identity(p, p),
        DMatrix::identity(m, m) * 0.1,
        0.5,
    );
    spec.input_set = Polytope::from_box(&vec![-0.7; m], &vec![0.7; m]).expect("valid box");
    match variant {
        Variant::Robust => spec.rho_sigma = Some(100.0),
        Variant::Relaxed => {
            let nz = inst.order * (m + p);
            spec.terminal_weight = Some(DMatrix::identity(nz, nz));
        }
        Variant::Tracking => {
            spec.psi = Some(DMatrix::identity(m, m));
            spec.phi = Some(DMatrix::identity(p, p) * 10.0);
        }
        Variant::Nominal => {}
    }
    spec
}

pub fn build_for(inst: &Instance, variant: Variant) -> CompactQP {
    let spec = spec_for(inst, variant);
    let hv = HankelView::from_data(&inst.data, spec.horizon, spec.order).expect("enough data");
    let qp = build(variant, &spec, &hv).expect("QP builds");
    if qp.layout.contains(ParamBlock::TerminalInputs) {
        qp.freeze_terminal(&spec.u_s, &spec.y_s).expect("freeze")
    } else {
        qp
    }
}

/// Hankel shift structure, agreement of the view with the raw matrix, and
/// the rank of a generic versus a constant sequence. Returns a description
/// of the first violation.
pub fn check_hankel(seed: u64) -> Result<(), String> {
    let mut rng = stream(seed, 1);
    let eta = rng.random_range(1..=3);
    let depth = rng.random_range(1..=6);
    let len = depth + rng.random_range(0..40);
    let seq = gaussian(eta, len, &mut rng);
    let h = build_hankel(&seq, depth).map_err(|e| e.to_string())?;
    let cols = len - depth + 1;
    if h.shape() != (eta * depth, cols) {
        return Err(format!("shape {:?}", h.shape()));
    }
    for i in 0..depth {
        for j in 0..cols {
            if h.view((i * eta, j), (eta, 1)) != seq.column(i + j) {
                return Err(format!("block ({i},{j}) is not sample {}", i + j));
            }
            if i + 1 < depth && j + 1 < cols && h.view(((i + 1) * eta, j), (eta, 1)) != h.view((i * eta, j + 1), (eta, 1)) {
                return Err(format!("shift fails at ({i},{j})"));
            }
        }
    }
    let rep = check_persistency(&seq, depth);
    let generic_full = cols >= eta * depth;
    if rep.exciting != generic_full || rep.rank != (eta * depth).min(cols) {
        return Err(format!("generic rank {} of {} with {} columns", rep.rank, rep.required, cols));
    }
    let constant = DMatrix::from_fn(eta, len, |i, _| 1.0 + i as f64);
    let rep = check_persistency(&constant, depth);
    if rep.rank != 1 {
        return Err(format!("constant sequence has rank {}", rep.rank));
    }

    let inst = random_instance(seed);
    let (l, n) = (inst.horizon, inst.order);
    let hv = HankelView::from_data(&inst.data, l, n).map_err(|e| e.to_string())?;
    let hu = build_hankel(&inst.data.u, l + n).map_err(|e| e.to_string())?;
    let m = inst.data.m();
    for k in 0..l {
        if hv.step(Signal::Input, k) != hu.rows((n + k) * m, m) {
            return Err(format!("view step {k} disagrees with the Hankel matrix"));
        }
    }
    Ok(())
}

/// Smallest eigenvalue of the Hessian over every variant.
pub fn min_hessian_eigenvalue(seed: u64) -> f64 {
    let inst = random_instance(seed);
    [Variant::Nominal, Variant::Robust, Variant::Relaxed, Variant::Tracking]
        .into_iter()
        .map(|v| min_eigenvalue(&build_for(&inst, v).w))
        .fold(f64::INFINITY, f64::min)
}

fn worst_kkt(qp: &CompactQP, chi: &DVector<f64>, sol: &OracleSolution) -> f64 {
    let r = DenseQp::at(qp, chi).expect("parameter fits").kkt_residual(sol);
    r.stationarity.max(r.primal).max(r.dual).max(r.complementarity)
}

pub struct ExplicitCase {
    pub qp: CompactQP,
    pub law: ExplicitLaw,
    pub chis: Vec<DVector<f64>>,
}

pub fn explicit_case(seed: u64, samples: usize) -> ExplicitCase {
    let inst = random_instance(seed);
    let variant = if seed % 2 == 0 { Variant::Relaxed } else { Variant::Robust };
    let qp = build_for(&inst, variant);
    let law = synthesize(&qp, None).expect("synthesis");
    let mut rng = stream(seed, 2);
    let dist = Uniform::new_inclusive(-1.5, 1.5).expect("valid range");
    let chis = (0..samples)
        .map(|_| DVector::from_fn(qp.n_chi(), |_, _| rng.sample(dist)))
        .collect();
    ExplicitCase { qp, law, chis }
}

/// Worst KKT residual of the online solution and of the explicit region's
/// closed-form solution over the sampled parameters.
pub fn kkt_residuals(case: &ExplicitCase) -> (f64, f64) {
    let solver = QpSolver::for_problem(&case.qp).expect("solver");
    let pieces = PieceBuilder::new(&case.qp).expect("pieces");
    let (mut oracle, mut explicit) = (0.0f64, 0.0f64);
    for chi in &case.chis {
        let Ok(sol) = solver.solve_problem(&case.qp, chi) else { continue };
        oracle = oracle.max(worst_kkt(&case.qp, chi, &sol));
        let Some(idx) = case.law.locate(chi.as_slice()) else {
            explicit = f64::INFINITY;
            continue;
        };
        let active = &case.law.regions[idx].active_set;
        let piece = pieces.piece(active).expect("region came from a valid piece");
        let mut lambda = DVector::zeros(case.qp.n_in());
        for (k, &i) in active.iter().enumerate() {
            lambda[i] = piece.lambda(chi)[k];
        }
        let from_region = OracleSolution {
            alpha: piece.alpha(chi),
            lambda,
            mu: solver.equalities().expand_multipliers(&piece.mu(chi)),
            active_set: active.clone(),
            iterations: 0,
        };
        explicit = explicit.max(worst_kkt(&case.qp, chi, &from_region));
    }
    (oracle, explicit)
}

/// Largest jump of the control law across region boundaries met on segments
/// between consecutive sampled parameters.
pub fn continuity_gap(case: &ExplicitCase) -> f64 {
    let law = &case.law;
    let at = |a: &DVector<f64>, b: &DVector<f64>, t: f64| a + (b - a) * t;
    let mut worst = 0.0f64;
    let mut u1 = vec![0.0; law.m];
    let mut u2 = vec![0.0; law.m];
    for pair in case.chis.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        const STEPS: usize = 64;
        for s in 0..STEPS {
            let (mut lo, mut hi) = (s as f64 / STEPS as f64, (s + 1) as f64 / STEPS as f64);
            let (Some(ra), Some(rb)) = (law.locate(at(a, b, lo).as_slice()), law.locate(at(a, b, hi).as_slice())) else {
                continue;
            };
            if ra == rb {
                continue;
            }
            // shrink onto the exit point of region `ra`, judged without the
            // membership tolerance
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if law.regions[ra].violation(&at(a, b, mid)) <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let beyond = at(a, b, hi);
            let Some(next) = (0..law.regions.len())
                .filter(|&r| r != ra)
                .min_by(|&p, &q| law.regions[p].violation(&beyond).total_cmp(&law.regions[q].violation(&beyond)))
            else {
                continue;
            };
            let x = at(a, b, lo);
            law.regions[ra].apply(x.as_slice(), &mut u1);
            law.regions[next].apply(x.as_slice(), &mut u2);
            let gap = u1.iter().zip(&u2).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
            worst = worst.max(gap);
        }
    }
    worst
}

/// Random strictly convex QP with a known feasible point and at most ten
/// inequality rows.
pub fn random_dense_qp(seed: u64) -> DenseQp {
    let mut rng = stream(seed, 3);
    let n = rng.random_range(1..=6);
    let n_eq = rng.random_range(0..=n.min(2));
    let n_in = rng.random_range(1..=10);
    let f = gaussian(n, n, &mut rng);
    let w = f.transpose() * &f + DMatrix::identity(n, n) * 0.1;
    let x0 = gaussian(n, 1, &mut rng).column(0).into_owned();
    let a_eq = gaussian(n_eq, n, &mut rng);
    let g = gaussian(n_in, n, &mut rng);
    let slack = DVector::from_fn(n_in, |_, _| rng.random_range(0.0..1.0));
    DenseQp {
        c: gaussian(n, 1, &mut rng).column(0) * 3.0,
        b_eq: &a_eq * &x0,
        h: &g * &x0 + slack,
        w,
        a_eq,
        g,
    }
}

/// Distance between the active-set solver and brute-force enumeration on a
/// generic QP and on a small data-driven QP.
pub fn enumeration_gap(seed: u64) -> f64 {
    let qp = random_dense_qp(seed);
    let solver = QpSolver::new(&qp.w, &qp.a_eq, &qp.g).expect("solver");
    let a = solver.solve(&qp.c, &qp.b_eq, &qp.h).expect("feasible by construction");
    let b = solver.solve_by_enumeration(&qp.c, &qp.b_eq, &qp.h).expect("feasible by construction");
    let mut worst = (&a.alpha - &b.alpha).amax() / (1.0 + b.alpha.amax());

    let case = explicit_case(seed, 5);
    if case.qp.n_in() <= 10 {
        let solver = QpSolver::for_problem(&case.qp).expect("solver");
        for chi in &case.chis {
            let (c, beq, h) = (case.qp.linear_term(chi), case.qp.eq_rhs(chi), case.qp.ineq_rhs(chi));
            match (solver.solve(&c, &beq, &h), solver.solve_by_enumeration(&c, &beq, &h)) {
                (Ok(a), Ok(b)) => worst = worst.max((&a.alpha - &b.alpha).amax() / (1.0 + b.alpha.amax())),
                (Err(_), Err(_)) => {}
                _ => return f64::INFINITY,
            }
        }
    }
    worst
}

pub mod equivalence {
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand_distr::StandardNormal;

    use reddpc::data::TrajectoryData;
    use reddpc::equivalence::{
        cost_identity_gap, initial_condition_residual, verify_model_equivalence, verify_problem_equivalence,
        DataMatrices, StateKind, Weights,
    };
    use reddpc::problem::{lyapunov_terminal_weight, Polytope};
    use reddpc::rng::stream;
    use reddpc::system::{builtin_system, Benchmark};

    pub const MODEL_TOL: f64 = 1e-8;
    pub const INITIAL_TOL: f64 = 1e-8;
    pub const PROBLEM_TOL: f64 = 1e-6;
    pub const PROBLEM_RHO: f64 = 1e-8;
    pub const COST_TOL: f64 = 1e-10;
    /// Horizon for the four-tank problem comparison; the dense reference
    /// grows with the horizon and L = 10 already covers n = 4.
    pub const FOUR_TANK_HORIZON: usize = 10;

    pub fn noiseless_data(name: &str, seed: u64) -> (Benchmark, TrajectoryData) {
        let bench = builtin_system(name).expect("built-in");
        let run = bench
            .collect_with(&bench.system.noiseless(), &mut stream(seed, 0))
            .expect("simulation");
        (bench, run.noiseless().expect("aligned"))
    }

    fn windows(data: &TrajectoryData, order: usize, stride: usize) -> Vec<DVector<f64>> {
        (order..data.len())
            .step_by(stride)
            .map(|t| {
                DVector::from_iterator(
                    order * (data.m() + data.p()),
                    data.u.columns(t - order, order).iter().chain(data.y.columns(t - order, order).iter()).copied(),
                )
            })
            .collect()
    }

    pub struct ModelResiduals {
        pub siso_measured: f64,
        pub siso_window: f64,
        pub four_tank_window: f64,
    }

    pub fn model_residuals(seed: u64) -> ModelResiduals {
        let (sb, sd) = noiseless_data("siso", seed);
        let (fb, fd) = noiseless_data("four_tank", seed);
        let run = |b: &Benchmark, d: &TrajectoryData, k| {
            verify_model_equivalence(d, b.spec.horizon, b.spec.order, k, 50, seed).expect("model check")
        };
        ModelResiduals {
            siso_measured: run(&sb, &sd, StateKind::Measured),
            siso_window: run(&sb, &sd, StateKind::NonMinimal),
            four_tank_window: run(&fb, &fd, StateKind::NonMinimal),
        }
    }

    /// Largest gap between the identified and the true SISO model matrices.
    pub fn siso_model_error(seed: u64) -> f64 {
        let (b, d) = noiseless_data("siso", seed);
        let dm = DataMatrices::from_states(&d.u, &d.y, 0).expect("state data");
        let pred = reddpc::equivalence::data_predictor(&dm).expect("full rank");
        (&pred.a - &b.system.a).amax().max((&pred.b - &b.system.b).amax())
    }

    pub fn initial_residual(seed: u64) -> f64 {
        let (b, d) = noiseless_data("siso", seed);
        initial_condition_residual(&d, b.spec.order).expect("initial map")
    }

    pub struct ProblemGaps {
        pub siso_measured: f64,
        pub siso_window: f64,
        pub four_tank_window: f64,
    }

    pub fn siso_measured_gap(seed: u64, rho: f64) -> f64 {
        let (b, d) = noiseless_data("siso", seed);
        let s = &b.spec;
        let w = Weights {
            q: s.q.clone(),
            r: s.r.clone(),
            p: lyapunov_terminal_weight(&b.system.a, &s.q).expect("stable"),
        };
        verify_problem_equivalence(&d, s.horizon, s.order, StateKind::Measured, &w, &s.input_set, rho, &windows(&d, s.order, 5))
            .expect("problem comparison")
    }

    pub fn problem_gaps(seed: u64) -> ProblemGaps {
        let (sb, sd) = noiseless_data("siso", seed);
        let s = &sb.spec;
        let nz = s.order * (s.m() + s.p());
        let w = Weights {
            q: s.q.clone(),
            r: s.r.clone(),
            p: DMatrix::identity(nz, nz),
        };
        let siso_window = verify_problem_equivalence(
            &sd,
            s.horizon,
            s.order,
            StateKind::NonMinimal,
            &w,
            &s.input_set,
            PROBLEM_RHO,
            &windows(&sd, s.order, 5),
        )
        .expect("problem comparison");

        let (fb, fd) = noiseless_data("four_tank", seed);
        let s = &fb.spec;
        let nz = s.order * (s.m() + s.p());
        let w = Weights {
            q: s.q.clone(),
            r: s.r.clone(),
            p: DMatrix::identity(nz, nz),
        };
        let four_tank_window = verify_problem_equivalence(
            &fd,
            FOUR_TANK_HORIZON,
            s.order,
            StateKind::NonMinimal,
            &w,
            &Polytope::unconstrained(),
            PROBLEM_RHO,
            &windows(&fd, s.order, 40),
        )
        .expect("problem comparison");
        ProblemGaps {
            siso_measured: siso_measured_gap(seed, PROBLEM_RHO),
            siso_window,
            four_tank_window,
        }
    }

    fn random_spd(n: usize, rng: &mut reddpc::rng::SimRng) -> DMatrix<f64> {
        let f = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        f.transpose() * &f + DMatrix::identity(n, n) * 0.01
    }

    /// Worst relative cost-identity gap over random trajectories and weights.
    pub fn cost_identity(seed: u64, trials: usize) -> f64 {
        let mut rng = stream(seed, 9);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let m = rng.random_range(1..=3);
            let p = rng.random_range(1..=3);
            let n = rng.random_range(1..=4);
            let l = rng.random_range(n..=n + 6);
            let u = DMatrix::from_fn(m, n + l, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = DMatrix::from_fn(p, n + l, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w = Weights {
                q: random_spd(p, &mut rng),
                r: random_spd(m, &mut rng),
                p: random_spd(n * (m + p), &mut rng),
            };
            worst = worst.max(cost_identity_gap(&u, &y, &w, n).expect("aligned"));
        }
        worst
    }
}
