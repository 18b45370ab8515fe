//! Dense solver for strictly convex QPs with equality and inequality
//! constraints.
//!
//! The solver is a primal active-set method in range-space form: every
//! working-set subproblem is solved through the Schur complement
//! `M W^-1 M'`, with `W` factored once and the products `W^-1 [A; G]'`
//! cached when the solver is prepared. Equality rows are always in the
//! working set; linearly dependent equality rows are dropped at preparation
//! and only checked for consistency.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::HankelView;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, independent_rows, select_rows, vstack};
use crate::problem::CompactQP;

/// `min 1/2 a'Wa + c'a  s.t.  A_eq a = b_eq,  G a <= h`.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub w: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl DenseQp {
    pub fn at(qp: &CompactQP, chi: &DVector<f64>) -> Result<Self> {
        qp.check_parameter(chi)?;
        Ok(Self {
            w: qp.w.clone(),
            c: qp.linear_term(chi),
            a_eq: qp.h_eq.clone(),
            b_eq: qp.eq_rhs(chi),
            g: qp.g_in.clone(),
            h: qp.ineq_rhs(chi),
        })
    }

    /// Max violation of stationarity, primal feasibility, dual sign and
    /// complementarity.
    pub fn kkt_residual(&self, sol: &OracleSolution) -> KktResidual {
        let grad = &self.w * &sol.alpha
            + &self.c
            + self.a_eq.transpose() * &sol.mu
            + self.g.transpose() * &sol.lambda;
        let eq = if self.a_eq.nrows() > 0 {
            (&self.a_eq * &sol.alpha - &self.b_eq).amax()
        } else {
            0.0
        };
        let slack = &self.g * &sol.alpha - &self.h;
        let ineq = slack.iter().fold(0.0_f64, |m, &v| m.max(v));
        let dual = sol.lambda.iter().fold(0.0_f64, |m, &v| m.max(-v));
        let comp = slack
            .iter()
            .zip(sol.lambda.iter())
            .fold(0.0_f64, |m, (s, l)| m.max((s * l).abs()));
        KktResidual {
            stationarity: grad.amax(),
            primal: eq.max(ineq),
            dual,
            complementarity: comp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub alpha: DVector<f64>,
    /// One multiplier per inequality row, zero when inactive.
    pub lambda: DVector<f64>,
    /// One multiplier per equality row; dependent rows get zero.
    pub mu: DVector<f64>,
    pub active_set: Vec<usize>,
    pub iterations: usize,
}

/// Equality rows reduced to a linearly independent subset.
#[derive(Debug, Clone)]
pub struct ReducedEqualities {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    /// Dropped rows as combinations of the kept rows.
    pub combination: DMatrix<f64>,
    pub n_rows: usize,
}

impl ReducedEqualities {
    pub fn new(a_eq: &DMatrix<f64>) -> Self {
        let kept = independent_rows(a_eq);
        let dropped: Vec<usize> = (0..a_eq.nrows()).filter(|i| !kept.contains(i)).collect();
        let combination = if dropped.is_empty() {
            DMatrix::zeros(0, kept.len())
        } else {
            let ar = select_rows(a_eq, &kept);
            let ad = select_rows(a_eq, &dropped);
            let gram = &ar * ar.transpose();
            let rhs = &ar * ad.transpose();
            match Cholesky::new(gram) {
                Some(ch) => ch.solve(&rhs).transpose(),
                None => DMatrix::zeros(dropped.len(), kept.len()),
            }
        };
        Self {
            kept,
            dropped,
            combination,
            n_rows: a_eq.nrows(),
        }
    }

    pub fn is_reduced(&self) -> bool {
        !self.dropped.is_empty()
    }

    /// Right-hand side of the kept rows, after checking the dropped rows are
    /// implied by them.
    pub fn reduce_rhs(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let br = DVector::from_fn(self.kept.len(), |i, _| b[self.kept[i]]);
        if self.is_reduced() {
            let implied = &self.combination * &br;
            let scale = 1.0 + b.amax() + implied.amax();
            for (k, &row) in self.dropped.iter().enumerate() {
                let gap = (b[row] - implied[k]).abs();
                if gap > 1e-8 * scale {
                    return Err(Error::Infeasible(format!(
                        "equality row {row} is inconsistent with the others (gap {gap:.3e})"
                    )));
                }
            }
        }
        Ok(br)
    }

    /// Multipliers of the full row set from those of the kept rows.
    pub fn expand_multipliers(&self, mu: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_rows);
        for (k, &row) in self.kept.iter().enumerate() {
            out[row] = mu[k];
        }
        out
    }
}

/// Active-set solver prepared for a fixed `(W, A_eq, G)`.
#[derive(Debug, Clone)]
pub struct QpSolver {
    w: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    eq: ReducedEqualities,
    /// `[A_eq(kept); G]`
    rows: DMatrix<f64>,
    /// `W^-1 rows'`
    z: DMatrix<f64>,
    /// `rows W^-1 rows'`
    schur: DMatrix<f64>,
    n_eq: usize,
    n_in: usize,
}

struct Working {
    alpha: DVector<f64>,
    nu: DVector<f64>,
    set: Vec<usize>,
    iterations: usize,
}

const PHASE_ONE_MU: f64 = 1e-8;
/// Relative Schur pivot below which an inequality row counts as spanned by
/// the working rows.
const DEPENDENT_PIVOT: f64 = 1e-10;

impl QpSolver {
    pub fn new(w: &DMatrix<f64>, a_eq: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<Self> {
        let n = w.nrows();
        if !w.is_square() || (a_eq.nrows() > 0 && a_eq.ncols() != n) || (g.nrows() > 0 && g.ncols() != n) {
            return Err(Error::dim("QP matrices disagree on the decision dimension"));
        }
        let chol = cholesky(w)?;
        let eq = ReducedEqualities::new(a_eq);
        let ar = select_rows(a_eq, &eq.kept);
        let ar = if ar.nrows() == 0 { DMatrix::zeros(0, n) } else { ar };
        let g = if g.nrows() == 0 { DMatrix::zeros(0, n) } else { g.clone() };
        let rows = vstack(&[&ar, &g]);
        let z = chol.solve(&rows.transpose());
        let schur = &rows * &z;
        Ok(Self {
            w: w.clone(),
            chol,
            n_eq: eq.kept.len(),
            n_in: g.nrows(),
            eq,
            rows,
            z,
            schur,
        })
    }

    pub fn for_problem(qp: &CompactQP) -> Result<Self> {
        Self::new(&qp.w, &qp.h_eq, &qp.g_in)
    }

    pub fn n_d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn equalities(&self) -> &ReducedEqualities {
        &self.eq
    }

    /// Solve the subproblem with equality rows plus inequalities `set`
    /// active. `w0 = W^-1 c`, `rw0 = rows * w0`, `rhs = [b_r; h]`.
    fn subproblem(
        &self,
        set: &[usize],
        w0: &DVector<f64>,
        rw0: &DVector<f64>,
        rhs: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let idx: Vec<usize> = (0..self.n_eq).chain(set.iter().map(|&i| self.n_eq + i)).collect();
        let k = idx.len();
        if k == 0 {
            return Some((-w0, DVector::zeros(0)));
        }
        let s = DMatrix::from_fn(k, k, |i, j| self.schur[(idx[i], idx[j])]);
        let r = DVector::from_fn(k, |i, _| rhs[idx[i]] + rw0[idx[i]]);
        let ch = Cholesky::new(s)?;
        let nu = -ch.solve(&r);
        let mut alpha = -w0;
        for (col, &row) in idx.iter().enumerate() {
            alpha.axpy(-nu[col], &self.z.column(row), 1.0);
        }
        Some((alpha, nu))
    }

    /// Solve at a given linear term and right-hand sides.
    pub fn solve(&self, c: &DVector<f64>, b_eq: &DVector<f64>, h: &DVector<f64>) -> Result<OracleSolution> {
        if c.len() != self.n_d() || h.len() != self.n_in || b_eq.len() != self.eq.n_rows {
            return Err(Error::dim("right-hand side sizes do not match the prepared QP"));
        }
        let br = self.eq.reduce_rhs(b_eq)?;
        let rhs = crate::linalg::vstack_vec(&[&br, h]);
        let w0 = self.chol.solve(c);
        let rw0 = &self.rows * &w0;
        let g_rows = self.rows.rows(self.n_eq, self.n_in);

        let (alpha_eq, nu_eq) = self
            .subproblem(&[], &w0, &rw0, &rhs)
            .ok_or(Error::RankDeficient {
                rank: self.n_eq,
                rows: self.eq.n_rows,
            })?;
        let scale = 1.0 + h.amax();
        let violation = (g_rows * &alpha_eq - h).iter().fold(0.0_f64, |m, &v| m.max(v));
        let work = if violation <= 1e-10 * scale {
            Working {
                alpha: alpha_eq,
                nu: nu_eq,
                set: Vec::new(),
                iterations: 0,
            }
        } else {
            let start = self.phase_one(&alpha_eq, &br, h)?;
            let work = Working {
                alpha: start,
                nu: DVector::zeros(self.n_eq),
                set: Vec::new(),
                iterations: 0,
            };
            self.active_set(work, &w0, &rw0, &rhs)?
        };
        let work = self.refine(work, c, &rhs);
        let mut lambda = DVector::zeros(self.n_in);
        for (k, &i) in work.set.iter().enumerate() {
            lambda[i] = work.nu[self.n_eq + k];
        }
        let mu = self.eq.expand_multipliers(&work.nu.rows(0, self.n_eq).into_owned());
        Ok(OracleSolution {
            alpha: work.alpha,
            lambda,
            mu,
            active_set: work.set,
            iterations: work.iterations,
        })
    }

    /// Iterative refinement of the KKT system at the final active set.
    /// With a nearly singular Hessian the Schur complement loses accuracy;
    /// a few residual corrections with the same factors recover it.
    fn refine(&self, mut work: Working, c: &DVector<f64>, rhs: &DVector<f64>) -> Working {
        let idx: Vec<usize> = (0..self.n_eq).chain(work.set.iter().map(|&i| self.n_eq + i)).collect();
        let k = idx.len();
        let m = select_rows(&self.rows, &idx);
        let target = DVector::from_fn(k, |i, _| rhs[idx[i]]);
        let scale = 1.0 + c.amax() + target.amax();
        let s = DMatrix::from_fn(k, k, |i, j| self.schur[(idx[i], idx[j])]);
        let Some(ch) = Cholesky::new(s) else {
            return work;
        };
        for _ in 0..3 {
            let mut r1 = -(&self.w * &work.alpha + c);
            if k > 0 {
                r1 -= m.transpose() * &work.nu;
            }
            let r2 = &target - &m * &work.alpha;
            if r1.amax().max(r2.amax()) <= 1e-14 * scale {
                break;
            }
            let t = self.chol.solve(&r1);
            let dnu = if k > 0 { ch.solve(&(&m * &t - r2)) } else { DVector::zeros(0) };
            let mut da = t;
            for (col, &row) in idx.iter().enumerate() {
                da.axpy(-dnu[col], &self.z.column(row), 1.0);
            }
            work.alpha += da;
            work.nu += dnu;
        }
        work
    }

    pub fn solve_problem(&self, qp: &CompactQP, chi: &DVector<f64>) -> Result<OracleSolution> {
        qp.check_parameter(chi)?;
        self.solve(&qp.linear_term(chi), &qp.eq_rhs(chi), &qp.ineq_rhs(chi))
    }

    /// A feasible point from `min s + s^2/2 + mu/2 |a|^2` subject to
    /// `A a = b, G a - s <= h`, started at the equality-feasible `a0`.
    fn phase_one(&self, a0: &DVector<f64>, br: &DVector<f64>, h: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n_d();
        let mut w = DMatrix::identity(n + 1, n + 1) * PHASE_ONE_MU;
        w[(n, n)] = 1.0;
        let mut a = DMatrix::zeros(self.n_eq, n + 1);
        a.view_mut((0, 0), (self.n_eq, n))
            .copy_from(&self.rows.rows(0, self.n_eq));
        let mut g = DMatrix::from_element(self.n_in, n + 1, -1.0);
        g.view_mut((0, 0), (self.n_in, n))
            .copy_from(&self.rows.rows(self.n_eq, self.n_in));
        let aux = QpSolver::new(&w, &a, &g)?;
        let mut c = DVector::zeros(n + 1);
        c[n] = 1.0;
        let s0 = (self.rows.rows(self.n_eq, self.n_in) * a0 - h)
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
            + 1.0;
        let mut start = DVector::zeros(n + 1);
        start.rows_mut(0, n).copy_from(a0);
        start[n] = s0;
        let w0 = aux.chol.solve(&c);
        let rw0 = &aux.rows * &w0;
        let rhs = crate::linalg::vstack_vec(&[br, h]);
        let sol = aux.active_set(
            Working {
                alpha: start,
                nu: DVector::zeros(aux.n_eq),
                set: Vec::new(),
                iterations: 0,
            },
            &w0,
            &rw0,
            &rhs,
        )?;
        let s = sol.alpha[n];
        if s > 1e-9 * (1.0 + h.amax()) {
            return Err(Error::Infeasible(format!(
                "inequalities cannot be met (minimal uniform violation {s:.3e})"
            )));
        }
        Ok(sol.alpha.rows(0, n).into_owned())
    }

    /// Primal active-set iterations from a feasible start with Bland's rule
    /// for both adding and dropping constraints.
    fn active_set(
        &self,
        mut work: Working,
        w0: &DVector<f64>,
        rw0: &DVector<f64>,
        rhs: &DVector<f64>,
    ) -> Result<Working> {
        let limit = 50 * (self.n_d() + self.n_eq + self.n_in);
        let h = rhs.rows(self.n_eq, self.n_in);
        let g_rows = self.rows.rows(self.n_eq, self.n_in);
        while work.iterations < limit {
            work.iterations += 1;
            let (target, nu) = self
                .subproblem(&work.set, w0, rw0, rhs)
                .ok_or(Error::NotPositiveDefinite)?;
            let step = &target - &work.alpha;
            let step_tol = 1e-12 * (1.0 + work.alpha.amax());
            if step.amax() <= step_tol {
                work.alpha = target;
                let lam_scale = 1.0 + nu.amax();
                let leaving = work
                    .set
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| nu[self.n_eq + k] < -1e-12 * lam_scale)
                    .map(|(k, &i)| (k, i))
                    .min_by_key(|&(_, i)| i);
                work.nu = nu;
                match leaving {
                    None => return Ok(work),
                    Some((k, _)) => {
                        work.set.remove(k);
                    }
                }
                continue;
            }
            let gp = &g_rows * &step;
            let ga = &g_rows * &work.alpha;
            let mut skipped: Vec<usize> = Vec::new();
            let (t, blocking) = loop {
                let mut t = 1.0;
                let mut blocking: Option<usize> = None;
                for i in 0..self.n_in {
                    if work.set.contains(&i) || skipped.contains(&i) {
                        continue;
                    }
                    let row_norm = self.rows.row(self.n_eq + i).norm();
                    if gp[i] <= 1e-14 * row_norm * step.norm() {
                        continue;
                    }
                    let ti = ((h[i] - ga[i]) / gp[i]).max(0.0);
                    // strict comparison keeps the smallest index among ties
                    if ti < t {
                        t = ti;
                        blocking = Some(i);
                    }
                }
                // A row spanned by the working rows keeps its value along the
                // step; adding it would make the working set singular.
                match blocking {
                    Some(i) if self.is_dependent(&work.set, i) => skipped.push(i),
                    _ => break (t, blocking),
                }
            };
            work.alpha.axpy(t, &step, 1.0);
            if let Some(i) = blocking {
                let pos = work.set.partition_point(|&j| j < i);
                work.set.insert(pos, i);
            }
        }
        Err(Error::IterationLimit(limit))
    }

    /// Whether inequality `i` is numerically spanned by the equality rows and
    /// the inequalities in `set`, judged by its pivot in the Schur complement.
    fn is_dependent(&self, set: &[usize], i: usize) -> bool {
        let idx: Vec<usize> = (0..self.n_eq).chain(set.iter().map(|&j| self.n_eq + j)).collect();
        let row = self.n_eq + i;
        let diag = self.schur[(row, row)];
        if idx.is_empty() {
            return diag <= 0.0;
        }
        let s = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.schur[(idx[a], idx[b])]);
        let v = DVector::from_fn(idx.len(), |a, _| self.schur[(idx[a], row)]);
        match Cholesky::new(s) {
            Some(ch) => diag - v.dot(&ch.solve(&v)) <= DEPENDENT_PIVOT * diag,
            None => true,
        }
    }

    /// Reference solution by trying every inequality subset in order of
    /// size; the unique KKT point wins. Only for small inequality counts.
    pub fn solve_by_enumeration(&self, c: &DVector<f64>, b_eq: &DVector<f64>, h: &DVector<f64>) -> Result<OracleSolution> {
        if self.n_in > 16 {
            return Err(Error::dim("enumeration is limited to 16 inequalities"));
        }
        let br = self.eq.reduce_rhs(b_eq)?;
        let rhs = crate::linalg::vstack_vec(&[&br, h]);
        let w0 = self.chol.solve(c);
        let rw0 = &self.rows * &w0;
        let g_rows = self.rows.rows(self.n_eq, self.n_in);
        let scale = 1.0 + h.amax();
        for set in subsets_by_size(self.n_in, self.n_in) {
            let Some((alpha, nu)) = self.subproblem(&set, &w0, &rw0, &rhs) else {
                continue;
            };
            let Working { alpha, nu, set, .. } = self.refine(
                Working {
                    alpha,
                    nu,
                    set,
                    iterations: 0,
                },
                c,
                &rhs,
            );
            let primal_ok = (g_rows * &alpha - h).iter().all(|&v| v <= 1e-9 * scale);
            let lam = nu.rows(self.n_eq, set.len());
            let dual_ok = lam.iter().all(|&l| l >= -1e-9 * (1.0 + nu.amax()));
            if primal_ok && dual_ok {
                let mut lambda = DVector::zeros(self.n_in);
                for (k, &i) in set.iter().enumerate() {
                    lambda[i] = lam[k];
                }
                let mu = self.eq.expand_multipliers(&nu.rows(0, self.n_eq).into_owned());
                return Ok(OracleSolution {
                    alpha,
                    lambda,
                    mu,
                    active_set: set,
                    iterations: 0,
                });
            }
        }
        Err(Error::Infeasible("no active set satisfies the KKT conditions".into()))
    }
}

/// All subsets of `0..n` with at most `max_size` elements, by increasing
/// size and lexicographically within a size.
pub fn subsets_by_size(n: usize, max_size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..=max_size.min(n)).flat_map(move |k| Combinations::new(n, k))
}

struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            current: (k <= n).then(|| (0..k).collect()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

/// Equality-constrained QP through its KKT system.
pub fn solve_eq_qp(
    w: &DMatrix<f64>,
    c: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let chol = cholesky(w)?;
    let w0 = chol.solve(c);
    if a_eq.nrows() == 0 {
        return Ok((-w0, DVector::zeros(0)));
    }
    let z = chol.solve(&a_eq.transpose());
    let s = a_eq * &z;
    let rank = independent_rows(a_eq).len();
    if rank < a_eq.nrows() {
        return Err(Error::RankDeficient {
            rank,
            rows: a_eq.nrows(),
        });
    }
    let ch = Cholesky::new(s).ok_or(Error::RankDeficient {
        rank,
        rows: a_eq.nrows(),
    })?;
    let mu = -ch.solve(&(b_eq + a_eq * &w0));
    let alpha = -w0 - z * &mu;
    Ok((alpha, mu))
}

pub fn solve_dense(qp: &DenseQp) -> Result<OracleSolution> {
    QpSolver::new(&qp.w, &qp.a_eq, &qp.g)?.solve(&qp.c, &qp.b_eq, &qp.h)
}

pub fn solve_qp(qp: &CompactQP, chi: &DVector<f64>) -> Result<OracleSolution> {
    QpSolver::for_problem(qp)?.solve_problem(qp, chi)
}

/// Online controller: first predicted input of the QP solution.
#[derive(Debug, Clone)]
pub struct ImplicitController {
    pub qp: CompactQP,
    solver: QpSolver,
}

impl ImplicitController {
    pub fn new(qp: CompactQP) -> Result<Self> {
        let solver = QpSolver::for_problem(&qp)?;
        Ok(Self { qp, solver })
    }

    pub fn solve(&self, chi: &DVector<f64>) -> Result<OracleSolution> {
        self.solver.solve_problem(&self.qp, chi)
    }

    pub fn control(&self, chi: &DVector<f64>) -> Result<DVector<f64>> {
        let sol = self.solve(chi)?;
        Ok(first_input(&self.qp, &sol.alpha))
    }
}

pub fn first_input(qp: &CompactQP, alpha: &DVector<f64>) -> DVector<f64> {
    qp.input_map.rows(0, qp.m) * alpha
}

pub fn implicit_control(qp: &CompactQP, chi: &DVector<f64>) -> Result<DVector<f64>> {
    let sol = solve_qp(qp, chi)?;
    Ok(first_input(qp, &sol.alpha))
}

/// Input and output trajectories over `[-n, L-1]` generated by Hankel
/// weights `alpha` (extra decision entries beyond `n_alpha` are ignored).
pub fn recover_trajectory(alpha: &DVector<f64>, hv: &HankelView) -> Result<(DVector<f64>, DVector<f64>)> {
    let na = hv.n_alpha();
    if alpha.len() < na {
        return Err(Error::dim(format!(
            "weights have length {}, Hankel matrices have {na} columns",
            alpha.len()
        )));
    }
    let a = alpha.rows(0, na);
    Ok((&hv.hu * a, &hv.hy * a))
}
