//! Assembly of the parameterized, strictly convex QP behind each DD-PC
//! variant.
//!
//! Every variant produces a [`CompactQP`]
//!
//! ```text
//! min_a  1/2 a' W a + (c0 + C_par chi)' a
//! s.t.   H_eq a = S_eq chi + h_eq
//!        G_in a <= beta + phi chi
//! ```
//!
//! whose cost is half the horizon cost plus regularizers, so the two differ by
//! a constant that does not depend on the decision vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{HankelView, Signal};
use crate::error::{Error, Result};
use crate::linalg::{
    is_psd, min_eigenvalue, repeat_block_diag, repeat_vec, spectral_radius, symmetrize, vstack,
    vstack_vec,
};

/// `normal' v <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub bound: f64,
}

/// Polytopic set as a list of halfspaces; empty means unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub halfspaces: Vec<Halfspace>,
}

impl Polytope {
    pub fn unconstrained() -> Self {
        Self::default()
    }

    /// Box `lower <= v <= upper`, expanded to a pair of halfspaces per finite
    /// bound.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("box bounds differ in length"));
        }
        let dim = lower.len();
        let mut halfspaces = Vec::new();
        for i in 0..dim {
            if lower[i] > upper[i] {
                return Err(Error::InvalidSpec(format!(
                    "box component {i}: lower {} > upper {}",
                    lower[i], upper[i]
                )));
            }
            if upper[i].is_finite() {
                let mut a = vec![0.0; dim];
                a[i] = 1.0;
                halfspaces.push(Halfspace {
                    normal: a,
                    bound: upper[i],
                });
            }
            if lower[i].is_finite() {
                let mut a = vec![0.0; dim];
                a[i] = -1.0;
                halfspaces.push(Halfspace {
                    normal: a,
                    bound: -lower[i],
                });
            }
        }
        Ok(Self { halfspaces })
    }

    pub fn len(&self) -> usize {
        self.halfspaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.halfspaces.is_empty()
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        self.halfspaces.iter().all(|h| {
            h.normal.iter().zip(v).map(|(a, x)| a * x).sum::<f64>() <= h.bound + tol
        })
    }

    fn check_dim(&self, dim: usize, what: &str) -> Result<()> {
        for h in &self.halfspaces {
            if h.normal.len() != dim {
                return Err(Error::dim(format!(
                    "{what} halfspace has {} coefficients, expected {dim}",
                    h.normal.len()
                )));
            }
        }
        Ok(())
    }

    /// Rows `A` and bounds `b` so the set reads `A v <= b`.
    pub fn matrices(&self, dim: usize) -> (DMatrix<f64>, DVector<f64>) {
        let a = DMatrix::from_fn(self.len(), dim, |i, j| self.halfspaces[i].normal[j]);
        let b = DVector::from_fn(self.len(), |i, _| self.halfspaces[i].bound);
        (a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Nominal,
    Tracking,
    Robust,
    Relaxed,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Nominal => "nominal",
            Variant::Tracking => "tracking",
            Variant::Robust => "robust",
            Variant::Relaxed => "relaxed",
        }
    }
}

/// Controller design parameters shared by all variants. Fields that a variant
/// does not use are ignored by its builder.
#[derive(Debug, Clone)]
pub struct DdpcSpec {
    pub horizon: usize,
    pub order: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub rho_alpha: f64,
    pub rho_sigma: Option<f64>,
    pub u_s: DVector<f64>,
    pub y_s: DVector<f64>,
    pub psi: Option<DMatrix<f64>>,
    pub phi: Option<DMatrix<f64>>,
    /// Weight on the stacked terminal window `[u_[L-n,L-1]; y_[L-n,L-1]]`.
    pub terminal_weight: Option<DMatrix<f64>>,
    pub input_set: Polytope,
    pub output_set: Polytope,
    /// Admissible equilibria for the tracking variant; default to the
    /// input/output sets.
    pub equilibrium_input_set: Option<Polytope>,
    pub equilibrium_output_set: Option<Polytope>,
}

impl DdpcSpec {
    /// Minimal spec with unconstrained sets and a zero equilibrium.
    pub fn new(horizon: usize, order: usize, q: DMatrix<f64>, r: DMatrix<f64>, rho_alpha: f64) -> Self {
        let (p, m) = (q.nrows(), r.nrows());
        Self {
            horizon,
            order,
            q,
            r,
            rho_alpha,
            rho_sigma: None,
            u_s: DVector::zeros(m),
            y_s: DVector::zeros(p),
            psi: None,
            phi: None,
            terminal_weight: None,
            input_set: Polytope::unconstrained(),
            output_set: Polytope::unconstrained(),
            equilibrium_input_set: None,
            equilibrium_output_set: None,
        }
    }

    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    pub fn p(&self) -> usize {
        self.q.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, p) = (self.m(), self.p());
        if self.horizon < self.order || self.order == 0 {
            return Err(Error::InvalidSpec(format!(
                "need L >= n >= 1, got L = {}, n = {}",
                self.horizon, self.order
            )));
        }
        if !self.q.is_square() || !self.r.is_square() {
            return Err(Error::dim("Q and R must be square"));
        }
        if !is_psd(&self.q, 1e-12) {
            return Err(Error::InvalidSpec("Q must be symmetric positive semi-definite".into()));
        }
        if !is_psd(&self.r, 0.0) || min_eigenvalue(&self.r) <= 0.0 {
            return Err(Error::InvalidSpec("R must be symmetric positive definite".into()));
        }
        if !(self.rho_alpha > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "rho_alpha must be positive, got {}",
                self.rho_alpha
            )));
        }
        if self.u_s.len() != m || self.y_s.len() != p {
            return Err(Error::dim(format!(
                "equilibrium has sizes ({}, {}), expected ({m}, {p})",
                self.u_s.len(),
                self.y_s.len()
            )));
        }
        self.input_set.check_dim(m, "input")?;
        self.output_set.check_dim(p, "output")?;
        Ok(())
    }

    fn check_view(&self, hv: &HankelView) -> Result<()> {
        self.validate()?;
        if hv.horizon != self.horizon || hv.order != self.order {
            return Err(Error::dim(format!(
                "Hankel view built for (L, n) = ({}, {}), spec has ({}, {})",
                hv.horizon, hv.order, self.horizon, self.order
            )));
        }
        if hv.m != self.m() || hv.p != self.p() {
            return Err(Error::dim(format!(
                "data has (m, p) = ({}, {}), weights imply ({}, {})",
                hv.m,
                hv.p,
                self.m(),
                self.p()
            )));
        }
        Ok(())
    }

    /// `chi_L`: `n` copies of `u_s` followed by `n` copies of `y_s`.
    pub fn terminal_target(&self) -> DVector<f64> {
        vstack_vec(&[
            &repeat_vec(&self.u_s, self.order),
            &repeat_vec(&self.y_s, self.order),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamBlock {
    PastInputs,
    PastOutputs,
    TerminalInputs,
    TerminalOutputs,
    InputReference,
    OutputReference,
}

/// Ordered description of the entries of the parameter vector `chi`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterLayout {
    pub m: usize,
    pub p: usize,
    pub order: usize,
    pub blocks: Vec<ParamBlock>,
}

impl ParameterLayout {
    pub fn block_len(&self, block: ParamBlock) -> usize {
        match block {
            ParamBlock::PastInputs | ParamBlock::TerminalInputs => self.order * self.m,
            ParamBlock::PastOutputs | ParamBlock::TerminalOutputs => self.order * self.p,
            ParamBlock::InputReference => self.m,
            ParamBlock::OutputReference => self.p,
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|&b| self.block_len(b)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn offset(&self, block: ParamBlock) -> Option<usize> {
        let mut off = 0;
        for &b in &self.blocks {
            if b == block {
                return Some(off);
            }
            off += self.block_len(b);
        }
        None
    }

    pub fn contains(&self, block: ParamBlock) -> bool {
        self.blocks.contains(&block)
    }
}

/// Stack the parameter vector for `layout`.
///
/// `past_u` (`m x n`) and `past_y` (`p x n`) hold the last `n` samples,
/// oldest first. `u_target`/`y_target` fill the terminal blocks (equilibrium)
/// or the reference blocks, whichever the layout contains.
pub fn assemble_parameter(
    layout: &ParameterLayout,
    past_u: &DMatrix<f64>,
    past_y: &DMatrix<f64>,
    u_target: &DVector<f64>,
    y_target: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (m, p, n) = (layout.m, layout.p, layout.order);
    if past_u.shape() != (m, n) || past_y.shape() != (p, n) {
        return Err(Error::dim(format!(
            "past window must be {m}x{n} inputs and {p}x{n} outputs, got {:?} and {:?}",
            past_u.shape(),
            past_y.shape()
        )));
    }
    let mut chi = Vec::with_capacity(layout.len());
    for &block in &layout.blocks {
        match block {
            ParamBlock::PastInputs => chi.extend(past_u.iter()),
            ParamBlock::PastOutputs => chi.extend(past_y.iter()),
            ParamBlock::TerminalInputs => {
                check_len(u_target, m, "input target")?;
                chi.extend(repeat_vec(u_target, n).iter())
            }
            ParamBlock::TerminalOutputs => {
                check_len(y_target, p, "output target")?;
                chi.extend(repeat_vec(y_target, n).iter())
            }
            ParamBlock::InputReference => {
                check_len(u_target, m, "input reference")?;
                chi.extend(u_target.iter())
            }
            ParamBlock::OutputReference => {
                check_len(y_target, p, "output reference")?;
                chi.extend(y_target.iter())
            }
        }
    }
    Ok(DVector::from_vec(chi))
}

fn check_len(v: &DVector<f64>, len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::dim(format!("{what} has length {}, expected {len}", v.len())));
    }
    Ok(())
}

/// Parameterized strictly convex QP.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactQP {
    pub variant: Variant,
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
    pub order: usize,
    pub w: DMatrix<f64>,
    pub c0: DVector<f64>,
    pub c_par: DMatrix<f64>,
    pub h_eq: DMatrix<f64>,
    pub s_eq: DMatrix<f64>,
    pub h_eq_offset: DVector<f64>,
    pub g_in: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub phi: DMatrix<f64>,
    /// Decision vector to predicted inputs `u_[0,L-1]` (`mL x n_d`).
    pub input_map: DMatrix<f64>,
    /// Decision vector to predicted outputs `y_[0,L-1]` (`pL x n_d`).
    pub output_map: DMatrix<f64>,
    pub layout: ParameterLayout,
}

impl CompactQP {
    pub fn n_d(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_chi(&self) -> usize {
        self.layout.len()
    }

    pub fn n_eq(&self) -> usize {
        self.h_eq.nrows()
    }

    pub fn n_in(&self) -> usize {
        self.g_in.nrows()
    }

    pub fn linear_term(&self, chi: &DVector<f64>) -> DVector<f64> {
        &self.c0 + &self.c_par * chi
    }

    pub fn eq_rhs(&self, chi: &DVector<f64>) -> DVector<f64> {
        &self.s_eq * chi + &self.h_eq_offset
    }

    pub fn ineq_rhs(&self, chi: &DVector<f64>) -> DVector<f64> {
        &self.beta + &self.phi * chi
    }

    pub fn objective(&self, alpha: &DVector<f64>, chi: &DVector<f64>) -> f64 {
        0.5 * alpha.dot(&(&self.w * alpha)) + self.linear_term(chi).dot(alpha)
    }

    pub fn check_parameter(&self, chi: &DVector<f64>) -> Result<()> {
        if chi.len() != self.n_chi() {
            return Err(Error::dim(format!(
                "parameter has length {}, problem expects {}",
                chi.len(),
                self.n_chi()
            )));
        }
        Ok(())
    }

    /// Partially evaluate the QP at fixed values of some parameter blocks,
    /// removing them from `chi`.
    pub fn freeze_blocks(&self, fixed: &[(ParamBlock, DVector<f64>)]) -> Result<CompactQP> {
        let mut drop = vec![false; self.n_chi()];
        let mut values = DVector::zeros(self.n_chi());
        for (block, v) in fixed {
            let off = self.layout.offset(*block).ok_or_else(|| {
                Error::InvalidSpec(format!("parameter layout has no {block:?} block"))
            })?;
            let len = self.layout.block_len(*block);
            check_len(v, len, "frozen block")?;
            values.rows_mut(off, len).copy_from(v);
            drop[off..off + len].iter_mut().for_each(|d| *d = true);
        }
        let keep: Vec<usize> = (0..self.n_chi()).filter(|&i| !drop[i]).collect();
        let take = |m: &DMatrix<f64>| {
            DMatrix::from_fn(m.nrows(), keep.len(), |i, j| m[(i, keep[j])])
        };
        let mut out = self.clone();
        out.c0 = &self.c0 + &self.c_par * &values;
        out.h_eq_offset = &self.h_eq_offset + &self.s_eq * &values;
        out.beta = &self.beta + &self.phi * &values;
        out.c_par = take(&self.c_par);
        out.s_eq = take(&self.s_eq);
        out.phi = take(&self.phi);
        let frozen: Vec<ParamBlock> = fixed.iter().map(|(b, _)| *b).collect();
        out.layout.blocks.retain(|b| !frozen.contains(b));
        Ok(out)
    }

    /// Fix the terminal blocks at `n` copies of `(u_s, y_s)`.
    pub fn freeze_terminal(&self, u_s: &DVector<f64>, y_s: &DVector<f64>) -> Result<CompactQP> {
        self.freeze_blocks(&[
            (ParamBlock::TerminalInputs, repeat_vec(u_s, self.order)),
            (ParamBlock::TerminalOutputs, repeat_vec(y_s, self.order)),
        ])
    }

    fn matrices(&self) -> [(&'static str, &DMatrix<f64>); 8] {
        [
            ("w", &self.w),
            ("c_par", &self.c_par),
            ("h_eq", &self.h_eq),
            ("s_eq", &self.s_eq),
            ("g_in", &self.g_in),
            ("phi", &self.phi),
            ("input_map", &self.input_map),
            ("output_map", &self.output_map),
        ]
    }

    fn vectors(&self) -> [(&'static str, &DVector<f64>); 3] {
        [("c0", &self.c0), ("h_eq_offset", &self.h_eq_offset), ("beta", &self.beta)]
    }

    /// SHA-256 over the variant, dimensions and every matrix entry.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.variant.as_str().as_bytes());
        for d in [self.m, self.p, self.horizon, self.order] {
            h.update((d as u64).to_le_bytes());
        }
        for b in &self.layout.blocks {
            h.update(format!("{b:?}").as_bytes());
        }
        for (name, m) in self.matrices() {
            h.update(name.as_bytes());
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_le_bytes());
            }
        }
        for (name, v) in self.vectors() {
            h.update(name.as_bytes());
            h.update((v.len() as u64).to_le_bytes());
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Every matrix an online QP solver needs, as row-major JSON.
    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        map.insert("variant".into(), self.variant.as_str().into());
        for (name, m) in self.matrices() {
            map.insert(name.into(), crate::linalg::to_rows(m).into());
        }
        for (name, v) in self.vectors() {
            map.insert(name.into(), v.iter().copied().collect::<Vec<f64>>().into());
        }
        serde_json::Value::Object(map).to_string()
    }
}

/// Decision-to-trajectory maps over the full window `[-n, L-1]`.
struct TrajectoryMap<'a> {
    u: DMatrix<f64>,
    y: DMatrix<f64>,
    hv: &'a HankelView,
}

impl TrajectoryMap<'_> {
    fn rows(&self, sig: Signal, start: usize, count: usize) -> DMatrix<f64> {
        let (h, w) = match sig {
            Signal::Input => (&self.u, self.hv.m),
            Signal::Output => (&self.y, self.hv.p),
        };
        h.rows(start * w, count * w).into_owned()
    }

    fn past(&self, sig: Signal) -> DMatrix<f64> {
        self.rows(sig, 0, self.hv.order)
    }

    fn future(&self, sig: Signal) -> DMatrix<f64> {
        self.rows(sig, self.hv.order, self.hv.horizon)
    }

    fn terminal(&self, sig: Signal) -> DMatrix<f64> {
        self.rows(sig, self.hv.horizon, self.hv.order)
    }

    fn step(&self, sig: Signal, k: usize) -> DMatrix<f64> {
        self.rows(sig, self.hv.order + k, 1)
    }

    /// Input/output constraint rows replicated over the horizon.
    fn value_constraints(&self, spec: &DdpcSpec) -> (DMatrix<f64>, DVector<f64>) {
        let (au, bu) = spec.input_set.matrices(spec.m());
        let (ay, by) = spec.output_set.matrices(spec.p());
        let mut rows = Vec::new();
        let mut bounds = Vec::new();
        for k in 0..self.hv.horizon {
            let gu = &au * self.step(Signal::Input, k);
            let gy = &ay * self.step(Signal::Output, k);
            rows.push(gu);
            bounds.push(bu.clone());
            rows.push(gy);
            bounds.push(by.clone());
        }
        let refs: Vec<&DMatrix<f64>> = rows.iter().collect();
        let brefs: Vec<&DVector<f64>> = bounds.iter().collect();
        let g = if refs.is_empty() {
            DMatrix::zeros(0, self.u.ncols())
        } else {
            vstack(&refs)
        };
        (g, vstack_vec(&brefs))
    }
}

fn stage_weights(spec: &DdpcSpec) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        repeat_block_diag(&spec.r, spec.horizon),
        repeat_block_diag(&spec.q, spec.horizon),
    )
}

/// `W_d = (H_u^F)' R (H_u^F) + (H_y^F)' Q (H_y^F)`, without regularization.
pub fn data_weight(spec: &DdpcSpec, hv: &HankelView) -> Result<DMatrix<f64>> {
    spec.check_view(hv)?;
    let (rr, qq) = stage_weights(spec);
    let uf = hv.future(Signal::Input);
    let yf = hv.future(Signal::Output);
    Ok(symmetrize(&(uf.transpose() * &rr * &uf + yf.transpose() * &qq * &yf)))
}

fn layout(spec: &DdpcSpec, blocks: Vec<ParamBlock>) -> ParameterLayout {
    ParameterLayout {
        m: spec.m(),
        p: spec.p(),
        order: spec.order,
        blocks,
    }
}

/// Shared assembly for the variants whose cost is the plain stage cost on the
/// trajectory map plus a diagonal regularizer.
fn assemble_regulation(
    variant: Variant,
    spec: &DdpcSpec,
    map: &TrajectoryMap,
    regularizer: &DVector<f64>,
    with_terminal_equality: bool,
    terminal_weight: Option<&DMatrix<f64>>,
) -> CompactQP {
    let (rr, qq) = stage_weights(spec);
    let uf = map.future(Signal::Input);
    let yf = map.future(Signal::Output);
    let ul = repeat_vec(&spec.u_s, spec.horizon);
    let yl = repeat_vec(&spec.y_s, spec.horizon);

    let mut w = uf.transpose() * &rr * &uf + yf.transpose() * &qq * &yf;
    let mut c0 = -(uf.transpose() * (&rr * &ul) + yf.transpose() * (&qq * &yl));
    if let Some(p) = terminal_weight {
        let t = vstack(&[&map.terminal(Signal::Input), &map.terminal(Signal::Output)]);
        w += t.transpose() * p * &t;
        c0 -= t.transpose() * (p * spec.terminal_target());
    }
    for i in 0..w.nrows() {
        w[(i, i)] += regularizer[i];
    }
    let w = symmetrize(&w);

    let past = vstack(&[&map.past(Signal::Input), &map.past(Signal::Output)]);
    let (h_eq, blocks) = if with_terminal_equality {
        let term = vstack(&[&map.terminal(Signal::Input), &map.terminal(Signal::Output)]);
        (
            vstack(&[&past, &term]),
            vec![
                ParamBlock::PastInputs,
                ParamBlock::PastOutputs,
                ParamBlock::TerminalInputs,
                ParamBlock::TerminalOutputs,
            ],
        )
    } else {
        (past, vec![ParamBlock::PastInputs, ParamBlock::PastOutputs])
    };
    let layout = layout(spec, blocks);
    let n_chi = layout.len();
    let n_d = w.nrows();
    let (g_in, beta) = map.value_constraints(spec);
    let n_in = g_in.nrows();
    CompactQP {
        variant,
        m: spec.m(),
        p: spec.p(),
        horizon: spec.horizon,
        order: spec.order,
        c_par: DMatrix::zeros(n_d, n_chi),
        s_eq: DMatrix::identity(h_eq.nrows(), n_chi),
        h_eq_offset: DVector::zeros(h_eq.nrows()),
        h_eq,
        phi: DMatrix::zeros(n_in, n_chi),
        g_in,
        beta,
        w,
        c0,
        input_map: uf,
        output_map: yf,
        layout,
    }
}

/// Regularized DD-PC with initial and terminal equality constraints.
pub fn build_nominal(spec: &DdpcSpec, hv: &HankelView) -> Result<CompactQP> {
    spec.check_view(hv)?;
    let map = TrajectoryMap {
        u: hv.hu.clone(),
        y: hv.hy.clone(),
        hv,
    };
    let reg = DVector::from_element(hv.n_alpha(), spec.rho_alpha);
    Ok(assemble_regulation(Variant::Nominal, spec, &map, &reg, true, None))
}

/// Slack-robustified DD-PC: decision `[alpha; sigma]` with
/// `sigma in R^{p(L+n)}` added to the predicted outputs.
pub fn build_robust(spec: &DdpcSpec, hv: &HankelView) -> Result<CompactQP> {
    spec.check_view(hv)?;
    let rho_sigma = spec
        .rho_sigma
        .ok_or_else(|| Error::InvalidSpec("robust variant needs rho_sigma".into()))?;
    if !(rho_sigma > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "rho_sigma must be positive, got {rho_sigma}"
        )));
    }
    let na = hv.n_alpha();
    let ns = hv.p * (hv.horizon + hv.order);
    let mut u = DMatrix::zeros(hv.hu.nrows(), na + ns);
    u.view_mut((0, 0), hv.hu.shape()).copy_from(&hv.hu);
    let mut y = DMatrix::zeros(ns, na + ns);
    y.view_mut((0, 0), hv.hy.shape()).copy_from(&hv.hy);
    y.view_mut((0, na), (ns, ns))
        .copy_from(&(-DMatrix::<f64>::identity(ns, ns)));
    let map = TrajectoryMap { u, y, hv };
    let reg = DVector::from_fn(na + ns, |i, _| if i < na { spec.rho_alpha } else { rho_sigma });
    Ok(assemble_regulation(Variant::Robust, spec, &map, &reg, true, None))
}

/// Terminal equality replaced by a quadratic penalty on the terminal window;
/// the parameter is the past window only.
pub fn build_relaxed(spec: &DdpcSpec, hv: &HankelView) -> Result<CompactQP> {
    spec.check_view(hv)?;
    let dim = spec.order * (spec.m() + spec.p());
    let p = spec
        .terminal_weight
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("relaxed variant needs a terminal weight P".into()))?;
    if p.shape() != (dim, dim) {
        return Err(Error::dim(format!(
            "terminal weight is {:?}, expected {dim}x{dim}",
            p.shape()
        )));
    }
    if !is_psd(p, 1e-10) {
        return Err(Error::InvalidSpec(
            "terminal weight must be symmetric positive semi-definite".into(),
        ));
    }
    let map = TrajectoryMap {
        u: hv.hu.clone(),
        y: hv.hy.clone(),
        hv,
    };
    let reg = DVector::from_element(hv.n_alpha(), spec.rho_alpha);
    Ok(assemble_regulation(Variant::Relaxed, spec, &map, &reg, false, Some(p)))
}

/// Set-point tracking: decision `[alpha; u_s; y_s]`, parameter
/// `[chi0; u_r; y_r]`.
pub fn build_tracking(spec: &DdpcSpec, hv: &HankelView) -> Result<CompactQP> {
    spec.check_view(hv)?;
    let (m, p, n, l) = (spec.m(), spec.p(), spec.order, spec.horizon);
    let psi = spec
        .psi
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("tracking variant needs Psi".into()))?;
    let phi_w = spec
        .phi
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("tracking variant needs Phi".into()))?;
    if psi.shape() != (m, m) || phi_w.shape() != (p, p) {
        return Err(Error::dim("Psi must be m x m and Phi p x p"));
    }
    if min_eigenvalue(psi) <= 0.0 || min_eigenvalue(phi_w) <= 0.0 {
        return Err(Error::InvalidSpec("Psi and Phi must be positive definite".into()));
    }
    let na = hv.n_alpha();
    let n_d = na + m + p;
    let (ius, iys) = (na, na + m);

    let widen = |h: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(h.nrows(), n_d);
        out.view_mut((0, 0), h.shape()).copy_from(h);
        out
    };
    let map = TrajectoryMap {
        u: widen(&hv.hu),
        y: widen(&hv.hy),
        hv,
    };

    // deviation maps [H^F, -C_L, 0] and [H^F, 0, -C_L]
    let mut du = map.future(Signal::Input);
    let mut dy = map.future(Signal::Output);
    for k in 0..l {
        for i in 0..m {
            du[(k * m + i, ius + i)] = -1.0;
        }
        for i in 0..p {
            dy[(k * p + i, iys + i)] = -1.0;
        }
    }
    let (rr, qq) = stage_weights(spec);
    let mut w = du.transpose() * &rr * &du + dy.transpose() * &qq * &dy;
    let mut blk = w.view_mut((ius, ius), (m, m));
    blk += psi;
    let mut blk = w.view_mut((iys, iys), (p, p));
    blk += phi_w;
    for i in 0..na {
        w[(i, i)] += spec.rho_alpha;
    }
    let w = symmetrize(&w);

    let layout = layout(
        spec,
        vec![
            ParamBlock::PastInputs,
            ParamBlock::PastOutputs,
            ParamBlock::InputReference,
            ParamBlock::OutputReference,
        ],
    );
    let n_chi = layout.len();
    let n0 = n * (m + p);
    let mut c_par = DMatrix::zeros(n_d, n_chi);
    c_par
        .view_mut((ius, n0), (m, m))
        .copy_from(&(-psi.clone()));
    c_par
        .view_mut((iys, n0 + m), (p, p))
        .copy_from(&(-phi_w.clone()));

    let past = vstack(&[&map.past(Signal::Input), &map.past(Signal::Output)]);
    let mut term = vstack(&[&map.terminal(Signal::Input), &map.terminal(Signal::Output)]);
    // -Omega: terminal window equals n copies of (u_s, y_s)
    for k in 0..n {
        for i in 0..m {
            term[(k * m + i, ius + i)] = -1.0;
        }
        for i in 0..p {
            term[(n * m + k * p + i, iys + i)] = -1.0;
        }
    }
    let h_eq = vstack(&[&past, &term]);
    let mut s_eq = DMatrix::zeros(2 * n0, n_chi);
    s_eq.view_mut((0, 0), (n0, n0))
        .copy_from(&DMatrix::<f64>::identity(n0, n0));

    let (g_val, b_val) = map.value_constraints(spec);
    let us_set = spec.equilibrium_input_set.as_ref().unwrap_or(&spec.input_set);
    let ys_set = spec.equilibrium_output_set.as_ref().unwrap_or(&spec.output_set);
    us_set.check_dim(m, "equilibrium input")?;
    ys_set.check_dim(p, "equilibrium output")?;
    let (aus, bus) = us_set.matrices(m);
    let (ays, bys) = ys_set.matrices(p);
    let mut g_us = DMatrix::zeros(aus.nrows(), n_d);
    g_us.view_mut((0, ius), aus.shape()).copy_from(&aus);
    let mut g_ys = DMatrix::zeros(ays.nrows(), n_d);
    g_ys.view_mut((0, iys), ays.shape()).copy_from(&ays);
    let g_in = vstack(&[&g_val, &g_us, &g_ys]);
    let beta = vstack_vec(&[&b_val, &bus, &bys]);
    let n_in = g_in.nrows();

    Ok(CompactQP {
        variant: Variant::Tracking,
        m,
        p,
        horizon: l,
        order: n,
        w,
        c0: DVector::zeros(n_d),
        c_par,
        h_eq_offset: DVector::zeros(h_eq.nrows()),
        h_eq,
        s_eq,
        g_in,
        beta,
        phi: DMatrix::zeros(n_in, n_chi),
        input_map: map.future(Signal::Input),
        output_map: map.future(Signal::Output),
        layout,
    })
}

pub fn build(variant: Variant, spec: &DdpcSpec, hv: &HankelView) -> Result<CompactQP> {
    match variant {
        Variant::Nominal => build_nominal(spec, hv),
        Variant::Tracking => build_tracking(spec, hv),
        Variant::Robust => build_robust(spec, hv),
        Variant::Relaxed => build_relaxed(spec, hv),
    }
}

/// Solution `P` of the discrete Lyapunov equation `A' P A - P + Qbar = 0`.
pub fn lyapunov_terminal_weight(a: &DMatrix<f64>, qbar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || qbar.shape() != (n, n) {
        return Err(Error::dim("Lyapunov equation needs square A and Qbar of equal size"));
    }
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    // vec(A' P A) = (A' kron A') vec(P)
    let at = a.transpose();
    let kron = at.kronecker(&at);
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(qbar.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::Unstable(rho))?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}
