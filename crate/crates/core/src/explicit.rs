//! Explicit piecewise-affine solution of a [`CompactQP`] by active-set
//! enumeration.
//!
//! For a candidate set `A` of active inequalities the KKT system has a
//! closed-form solution that is affine in the parameter. The candidate
//! yields a critical region where the inactive inequalities hold and the
//! active multipliers are non-negative; regions with an empty interior are
//! discarded.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, from_rows, independent_rows, select_entries, select_rows, to_rows, vstack, vstack_vec};
use crate::oracle::{subsets_by_size, QpSolver, ReducedEqualities};
use crate::problem::{CompactQP, ParameterLayout, Variant};

pub const LAW_FORMAT_VERSION: u32 = 1;

/// Interior margin for the region emptiness test, on normalized rows.
pub const INTERIOR_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub active_set: Vec<usize>,
    /// First-input gain and offset.
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    /// Whole predicted input sequence.
    pub seq_gain: DMatrix<f64>,
    pub seq_offset: DVector<f64>,
    /// Region `{chi : E chi <= K}`.
    pub region_matrix: DMatrix<f64>,
    pub region_bound: DVector<f64>,
    tolerance: f64,
}

impl Region {
    pub fn new(
        active_set: Vec<usize>,
        seq_gain: DMatrix<f64>,
        seq_offset: DVector<f64>,
        region_matrix: DMatrix<f64>,
        region_bound: DVector<f64>,
        m: usize,
    ) -> Self {
        let tolerance = 1e-9 * (1.0 + region_bound.amax());
        Self {
            active_set,
            gain: seq_gain.rows(0, m).into_owned(),
            offset: seq_offset.rows(0, m).into_owned(),
            seq_gain,
            seq_offset,
            region_matrix,
            region_bound,
            tolerance,
        }
    }

    pub fn n_lambda(&self) -> usize {
        self.active_set.len()
    }

    pub fn contains(&self, chi: &[f64]) -> bool {
        let e = &self.region_matrix;
        (0..e.nrows()).all(|i| {
            let mut v = 0.0;
            for (j, x) in chi.iter().enumerate() {
                v += e[(i, j)] * x;
            }
            v <= self.region_bound[i] + self.tolerance
        })
    }

    /// Largest violation of the region inequalities (non-positive inside).
    pub fn violation(&self, chi: &DVector<f64>) -> f64 {
        if self.region_matrix.nrows() == 0 {
            return f64::NEG_INFINITY;
        }
        (&self.region_matrix * chi - &self.region_bound).max()
    }

    pub fn apply(&self, chi: &[f64], u: &mut [f64]) {
        for (i, ui) in u.iter_mut().enumerate() {
            let mut v = self.offset[i];
            for (j, x) in chi.iter().enumerate() {
                v += self.gain[(i, j)] * x;
            }
            *ui = v;
        }
    }

    pub fn sequence(&self, chi: &DVector<f64>) -> DVector<f64> {
        &self.seq_gain * chi + &self.seq_offset
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisStats {
    pub candidates: usize,
    pub licq_failures: usize,
    pub empty_pruned: usize,
    pub duplicates: usize,
    pub max_active: usize,
    /// Linearly dependent equality rows dropped before enumeration.
    pub dependent_equalities: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitLaw {
    pub variant: Variant,
    pub m: usize,
    pub horizon: usize,
    pub layout: ParameterLayout,
    pub qp_fingerprint: String,
    pub regions: Vec<Region>,
    pub stats: SynthesisStats,
}

impl ExplicitLaw {
    pub fn n_chi(&self) -> usize {
        self.layout.len()
    }

    /// Index of the first region containing `chi`.
    pub fn locate(&self, chi: &[f64]) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(chi))
    }

    /// Control input into `u`; returns the matched region.
    pub fn evaluate_into(&self, chi: &[f64], u: &mut [f64]) -> Result<usize> {
        if chi.len() != self.n_chi() || u.len() != self.m {
            return Err(Error::dim(format!(
                "law maps {} parameters to {} inputs, got {} and {}",
                self.n_chi(),
                self.m,
                chi.len(),
                u.len()
            )));
        }
        let idx = self.locate(chi).ok_or(Error::NoRegion)?;
        self.regions[idx].apply(chi, u);
        Ok(idx)
    }

    pub fn evaluate(&self, chi: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
        let mut u = DVector::zeros(self.m);
        let idx = self.evaluate_into(chi.as_slice(), u.as_mut_slice())?;
        Ok((u, idx))
    }

    /// Predicted input sequence over the horizon.
    pub fn evaluate_sequence(&self, chi: &DVector<f64>) -> Result<DVector<f64>> {
        if chi.len() != self.n_chi() {
            return Err(Error::dim("parameter length does not match the law"));
        }
        let idx = self.locate(chi.as_slice()).ok_or(Error::NoRegion)?;
        Ok(self.regions[idx].sequence(chi))
    }

    /// Number of stored floating-point entries over all regions.
    pub fn stored_values(&self) -> usize {
        self.regions
            .iter()
            .map(|r| {
                r.gain.len()
                    + r.offset.len()
                    + r.seq_gain.len()
                    + r.seq_offset.len()
                    + r.region_matrix.len()
                    + r.region_bound.len()
            })
            .sum()
    }
}

/// Closed-form KKT solution for one active set, affine in the parameter.
#[derive(Debug, Clone)]
pub struct AffinePiece {
    pub active_set: Vec<usize>,
    pub alpha_gain: DMatrix<f64>,
    pub alpha_offset: DVector<f64>,
    /// Multipliers of the active inequalities, in active-set order.
    pub lambda_gain: DMatrix<f64>,
    pub lambda_offset: DVector<f64>,
    /// Multipliers of the independent equality rows.
    pub mu_gain: DMatrix<f64>,
    pub mu_offset: DVector<f64>,
}

impl AffinePiece {
    pub fn alpha(&self, chi: &DVector<f64>) -> DVector<f64> {
        &self.alpha_gain * chi + &self.alpha_offset
    }

    pub fn lambda(&self, chi: &DVector<f64>) -> DVector<f64> {
        &self.lambda_gain * chi + &self.lambda_offset
    }

    pub fn mu(&self, chi: &DVector<f64>) -> DVector<f64> {
        &self.mu_gain * chi + &self.mu_offset
    }
}

/// Shared, immutable state for building pieces of one QP.
pub struct PieceBuilder<'a> {
    qp: &'a CompactQP,
    chol: Cholesky<f64, Dyn>,
    eq: ReducedEqualities,
    eq_rows: DMatrix<f64>,
    eq_par: DMatrix<f64>,
    eq_off: DVector<f64>,
    /// `W^-1 c0`
    w0: DVector<f64>,
    /// `W^-1 C_par`
    wc: DMatrix<f64>,
}

impl<'a> PieceBuilder<'a> {
    pub fn new(qp: &'a CompactQP) -> Result<Self> {
        let chol = cholesky(&qp.w)?;
        let eq = ReducedEqualities::new(&qp.h_eq);
        let eq_rows = select_rows(&qp.h_eq, &eq.kept);
        let eq_rows = if eq_rows.nrows() == 0 { DMatrix::zeros(0, qp.n_d()) } else { eq_rows };
        let eq_par = if eq.kept.is_empty() {
            DMatrix::zeros(0, qp.n_chi())
        } else {
            select_rows(&qp.s_eq, &eq.kept)
        };
        let eq_off = select_entries(&qp.h_eq_offset, &eq.kept);
        let w0 = chol.solve(&qp.c0);
        let wc = chol.solve(&qp.c_par);
        Ok(Self {
            qp,
            chol,
            eq,
            eq_rows,
            eq_par,
            eq_off,
            w0,
            wc,
        })
    }

    pub fn independent_equalities(&self) -> usize {
        self.eq.kept.len()
    }

    pub fn dependent_equalities(&self) -> usize {
        self.eq.dropped.len()
    }

    /// `None` when the active inequality rows and the equality rows are
    /// linearly dependent.
    pub fn piece(&self, active: &[usize]) -> Option<AffinePiece> {
        let qp = self.qp;
        let ga = if active.is_empty() {
            DMatrix::zeros(0, qp.n_d())
        } else {
            select_rows(&qp.g_in, active)
        };
        let m = vstack(&[&ga, &self.eq_rows]);
        let k = m.nrows();
        let n_chi = qp.n_chi();
        if k == 0 {
            return Some(AffinePiece {
                active_set: Vec::new(),
                alpha_gain: -&self.wc,
                alpha_offset: -&self.w0,
                lambda_gain: DMatrix::zeros(0, n_chi),
                lambda_offset: DVector::zeros(0),
                mu_gain: DMatrix::zeros(0, n_chi),
                mu_offset: DVector::zeros(0),
            });
        }
        if independent_rows(&m).len() < k {
            return None;
        }
        // active constraints read M a = r0 + R chi
        let r0 = vstack_vec(&[&select_entries(&qp.beta, active), &self.eq_off]);
        let phi_a = if active.is_empty() {
            DMatrix::zeros(0, n_chi)
        } else {
            select_rows(&qp.phi, active)
        };
        let r = vstack(&[&phi_a, &self.eq_par]);
        let z = self.chol.solve(&m.transpose());
        let s = &m * &z;
        let s_chol = Cholesky::new(crate::linalg::symmetrize(&s))?;
        // gain and offset solved together as columns [chi-part | constant]
        let mut lin = DMatrix::zeros(qp.n_d(), n_chi + 1);
        lin.view_mut((0, 0), (qp.n_d(), n_chi)).copy_from(&qp.c_par);
        lin.set_column(n_chi, &qp.c0);
        let mut target = DMatrix::zeros(k, n_chi + 1);
        target.view_mut((0, 0), (k, n_chi)).copy_from(&r);
        target.set_column(n_chi, &r0);
        let w_lin = self.chol.solve(&lin);
        let mut nu = -s_chol.solve(&(&target + &m * &w_lin));
        let mut alpha = -w_lin - &z * &nu;
        // iterative refinement; the Schur complement can be badly conditioned
        let scale = 1.0 + lin.amax() + target.amax();
        for _ in 0..3 {
            let r1 = -(&qp.w * &alpha + &lin + m.transpose() * &nu);
            let r2 = &target - &m * &alpha;
            if r1.amax().max(r2.amax()) <= 1e-14 * scale {
                break;
            }
            let t = self.chol.solve(&r1);
            let dnu = s_chol.solve(&(&m * &t - r2));
            alpha += t - &z * &dnu;
            nu += dnu;
        }
        let nu_gain = nu.columns(0, n_chi).into_owned();
        let nu_offset = nu.column(n_chi).into_owned();
        let alpha_gain = alpha.columns(0, n_chi).into_owned();
        let alpha_offset = alpha.column(n_chi).into_owned();
        let na = active.len();
        let ne = k - na;
        Some(AffinePiece {
            active_set: active.to_vec(),
            lambda_gain: nu_gain.rows(0, na).into_owned(),
            lambda_offset: nu_offset.rows(0, na).into_owned(),
            mu_gain: nu_gain.rows(na, ne).into_owned(),
            mu_offset: nu_offset.rows(na, ne).into_owned(),
            alpha_gain,
            alpha_offset,
        })
    }

    /// Region inequalities: inactive primal rows, then active dual rows.
    pub fn region_of(&self, piece: &AffinePiece) -> (DMatrix<f64>, DVector<f64>) {
        let qp = self.qp;
        let inactive: Vec<usize> = (0..qp.n_in()).filter(|i| !piece.active_set.contains(i)).collect();
        let n_chi = qp.n_chi();
        let (ep, kp) = if inactive.is_empty() {
            (DMatrix::zeros(0, n_chi), DVector::zeros(0))
        } else {
            let g = select_rows(&qp.g_in, &inactive);
            let e = &g * &piece.alpha_gain - select_rows(&qp.phi, &inactive);
            let k = select_entries(&qp.beta, &inactive) - &g * &piece.alpha_offset;
            (e, k)
        };
        let ed = -&piece.lambda_gain;
        let kd = piece.lambda_offset.clone();
        (vstack(&[&ep, &ed]), vstack_vec(&[&kp, &kd]))
    }
}

/// Whether `{chi : E chi <= K}` has a non-empty interior.
///
/// Solves `min s + s^2/2 + mu/2 |chi|^2` subject to `E chi - s <= K` on
/// normalized rows; the region is kept when the optimal `s` is below
/// `-INTERIOR_MARGIN`.
pub fn prune_region(e: &DMatrix<f64>, k: &DVector<f64>) -> bool {
    let n = e.ncols();
    let mut rows = Vec::new();
    let mut bounds = Vec::new();
    for i in 0..e.nrows() {
        let norm = e.row(i).norm();
        if norm <= 1e-12 * (1.0 + k[i].abs()) {
            // 0 <= K_i holds everywhere or nowhere
            if k[i] < -INTERIOR_MARGIN {
                return false;
            }
            continue;
        }
        rows.push(e.row(i) / norm);
        bounds.push(k[i] / norm);
    }
    if rows.is_empty() {
        return true;
    }
    let mut g = DMatrix::from_element(rows.len(), n + 1, -1.0);
    for (i, r) in rows.iter().enumerate() {
        g.view_mut((i, 0), (1, n)).copy_from(r);
    }
    let h = DVector::from_vec(bounds);
    let mut w = DMatrix::identity(n + 1, n + 1) * 1e-8;
    w[(n, n)] = 1.0;
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let solved = QpSolver::new(&w, &DMatrix::zeros(0, n + 1), &g)
        .and_then(|s| s.solve(&c, &DVector::zeros(0), &h));
    match solved {
        Ok(sol) => sol.alpha[n] < -INTERIOR_MARGIN,
        Err(err) => {
            log::warn!("region emptiness test failed ({err}); treating region as empty");
            false
        }
    }
}

/// Default cap on the active-set size: LICQ allows at most
/// `n_d - (independent equality rows)` active inequalities.
pub fn default_max_active(qp: &CompactQP) -> usize {
    let eq_rank = independent_rows(&qp.h_eq).len();
    qp.n_in().min(qp.n_d().saturating_sub(eq_rank))
}

pub fn synthesize(qp: &CompactQP, max_active: Option<usize>) -> Result<ExplicitLaw> {
    let builder = PieceBuilder::new(qp)?;
    let cap = default_max_active(qp);
    let max_active = max_active.map_or(cap, |k| k.min(cap));
    let candidates: Vec<Vec<usize>> = subsets_by_size(qp.n_in(), max_active).collect();

    enum Outcome {
        Licq,
        Empty,
        Region(Region),
    }
    let outcomes: Vec<Outcome> = candidates
        .par_iter()
        .map(|active| {
            let Some(piece) = builder.piece(active) else {
                return Outcome::Licq;
            };
            let (e, k) = builder.region_of(&piece);
            if !prune_region(&e, &k) {
                return Outcome::Empty;
            }
            let seq_gain = &qp.input_map * &piece.alpha_gain;
            let seq_offset = &qp.input_map * &piece.alpha_offset;
            Outcome::Region(Region::new(active.clone(), seq_gain, seq_offset, e, k, qp.m))
        })
        .collect();

    let mut stats = SynthesisStats {
        candidates: candidates.len(),
        max_active,
        dependent_equalities: builder.dependent_equalities(),
        ..Default::default()
    };
    let mut regions: Vec<Region> = Vec::new();
    for outcome in outcomes {
        match outcome {
            Outcome::Licq => stats.licq_failures += 1,
            Outcome::Empty => stats.empty_pruned += 1,
            Outcome::Region(r) => {
                if regions.iter().any(|q| same_region(q, &r)) {
                    stats.duplicates += 1;
                } else {
                    regions.push(r);
                }
            }
        }
    }
    log::info!(
        "synthesis: {} candidates, {} regions, {} LICQ failures, {} empty, {} duplicates",
        stats.candidates,
        regions.len(),
        stats.licq_failures,
        stats.empty_pruned,
        stats.duplicates
    );
    if regions.is_empty() {
        return Err(Error::EmptyLaw);
    }
    Ok(ExplicitLaw {
        variant: qp.variant,
        m: qp.m,
        horizon: qp.horizon,
        layout: qp.layout.clone(),
        qp_fingerprint: qp.fingerprint(),
        regions,
        stats,
    })
}

fn same_region(a: &Region, b: &Region) -> bool {
    fn close_m(x: &DMatrix<f64>, y: &DMatrix<f64>) -> bool {
        x.shape() == y.shape() && x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() <= 1e-10)
    }
    fn close_v(x: &DVector<f64>, y: &DVector<f64>) -> bool {
        x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() <= 1e-10)
    }
    close_m(&a.gain, &b.gain)
        && close_v(&a.offset, &b.offset)
        && close_m(&a.region_matrix, &b.region_matrix)
        && close_v(&a.region_bound, &b.region_bound)
}

#[derive(Serialize, Deserialize)]
struct RegionRecord {
    active_set: Vec<usize>,
    gain: Vec<Vec<f64>>,
    offset: Vec<f64>,
    seq_gain: Vec<Vec<f64>>,
    seq_offset: Vec<f64>,
    region_matrix: Vec<Vec<f64>>,
    region_bound: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LawContent {
    variant: Variant,
    m: usize,
    n_chi: usize,
    horizon: usize,
    layout: ParameterLayout,
    qp_fingerprint: String,
    stats: SynthesisStats,
    regions: Vec<RegionRecord>,
}

#[derive(Serialize, Deserialize)]
struct LawFile {
    format: String,
    version: u32,
    /// SHA-256 of the compact JSON encoding of `law`.
    checksum: String,
    law: LawContent,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

fn checksum(content: &LawContent) -> Result<String> {
    let text = serde_json::to_string(content)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Law as versioned JSON. Numbers use shortest round-trip formatting, so
/// every stored value is recovered bit for bit.
pub fn law_to_json(law: &ExplicitLaw) -> Result<String> {
    let content = LawContent {
        variant: law.variant,
        m: law.m,
        n_chi: law.n_chi(),
        horizon: law.horizon,
        layout: law.layout.clone(),
        qp_fingerprint: law.qp_fingerprint.clone(),
        stats: law.stats.clone(),
        regions: law
            .regions
            .iter()
            .map(|r| RegionRecord {
                active_set: r.active_set.clone(),
                gain: to_rows(&r.gain),
                offset: r.offset.iter().copied().collect(),
                seq_gain: to_rows(&r.seq_gain),
                seq_offset: r.seq_offset.iter().copied().collect(),
                region_matrix: to_rows(&r.region_matrix),
                region_bound: r.region_bound.iter().copied().collect(),
            })
            .collect(),
    };
    let checksum = checksum(&content)?;
    Ok(serde_json::to_string_pretty(&LawFile {
        format: "reddpc-explicit-law".into(),
        version: LAW_FORMAT_VERSION,
        checksum,
        law: content,
    })?)
}

pub fn law_from_json(text: &str) -> Result<ExplicitLaw> {
    let probe: VersionProbe = serde_json::from_str(text)?;
    if probe.version != LAW_FORMAT_VERSION {
        return Err(Error::Version {
            found: probe.version,
            supported: LAW_FORMAT_VERSION,
        });
    }
    let file: LawFile = serde_json::from_str(text)?;
    let computed = checksum(&file.law)?;
    if computed != file.checksum {
        return Err(Error::Fingerprint {
            expected: file.checksum,
            computed,
        });
    }
    let c = file.law;
    if c.layout.len() != c.n_chi {
        return Err(Error::dim("law layout disagrees with its parameter dimension"));
    }
    let horizon_inputs = c.m * c.horizon;
    let mut regions = Vec::with_capacity(c.regions.len());
    for r in c.regions {
        let seq_gain = from_rows(&r.seq_gain, c.n_chi)?;
        if seq_gain.nrows() != horizon_inputs || r.seq_offset.len() != horizon_inputs {
            return Err(Error::dim("region sequence map has the wrong size"));
        }
        let region_matrix = from_rows(&r.region_matrix, c.n_chi)?;
        if region_matrix.nrows() != r.region_bound.len() {
            return Err(Error::dim("region matrix and bound differ in length"));
        }
        let region = Region::new(
            r.active_set,
            seq_gain,
            DVector::from_vec(r.seq_offset),
            region_matrix,
            DVector::from_vec(r.region_bound),
            c.m,
        );
        let gain = from_rows(&r.gain, c.n_chi)?;
        if gain != region.gain || r.offset.as_slice() != region.offset.as_slice() {
            return Err(Error::dim("first-input map disagrees with the sequence map"));
        }
        regions.push(region);
    }
    Ok(ExplicitLaw {
        variant: c.variant,
        m: c.m,
        horizon: c.horizon,
        layout: c.layout,
        qp_fingerprint: c.qp_fingerprint,
        regions,
        stats: c.stats,
    })
}

pub fn export_law(law: &ExplicitLaw, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, law_to_json(law)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn import_law(path: impl AsRef<Path>) -> Result<ExplicitLaw> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    law_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ParamBlock, ParameterLayout};
    use nalgebra::{dmatrix, dvector};

    /// min 1/2|a|^2 s.t. a1 = chi, a1 + a2 <= 1
    pub(crate) fn hand_qp() -> CompactQP {
        CompactQP {
            variant: Variant::Nominal,
            m: 1,
            p: 1,
            horizon: 2,
            order: 1,
            w: DMatrix::identity(2, 2),
            c0: DVector::zeros(2),
            c_par: DMatrix::zeros(2, 1),
            h_eq: dmatrix![1.0, 0.0],
            s_eq: dmatrix![1.0],
            h_eq_offset: dvector![0.0],
            g_in: dmatrix![1.0, 1.0],
            beta: dvector![1.0],
            phi: DMatrix::zeros(1, 1),
            input_map: DMatrix::identity(2, 2),
            output_map: DMatrix::zeros(2, 2),
            layout: ParameterLayout {
                m: 1,
                p: 0,
                order: 1,
                blocks: vec![ParamBlock::PastInputs],
            },
        }
    }

    #[test]
    fn hand_instance_has_two_regions() {
        let law = synthesize(&hand_qp(), None).unwrap();
        assert_eq!(law.regions.len(), 2);
        let (u, r) = law.evaluate(&dvector![0.3]).unwrap();
        assert_eq!(r, 0);
        approx::assert_abs_diff_eq!(u[0], 0.3, epsilon = 1e-14);
        let seq = law.evaluate_sequence(&dvector![2.0]).unwrap();
        approx::assert_abs_diff_eq!(seq, dvector![2.0, -1.0], epsilon = 1e-14);
        // both pieces agree on the shared facet
        let a = law.regions[0].sequence(&dvector![1.0]);
        let b = law.regions[1].sequence(&dvector![1.0]);
        approx::assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(a, dvector![1.0, 0.0], epsilon = 1e-12);
    }

    #[test]
    fn hand_instance_multiplier_piece() {
        let qp = hand_qp();
        let b = PieceBuilder::new(&qp).unwrap();
        let piece = b.piece(&[0]).unwrap();
        approx::assert_abs_diff_eq!(piece.lambda(&dvector![3.0])[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn unconstrained_law_is_one_region() {
        let mut qp = hand_qp();
        qp.g_in = DMatrix::zeros(0, 2);
        qp.beta = DVector::zeros(0);
        qp.phi = DMatrix::zeros(0, 1);
        let law = synthesize(&qp, None).unwrap();
        assert_eq!(law.regions.len(), 1);
        assert_eq!(law.regions[0].region_matrix.nrows(), 0);
        assert_eq!(law.evaluate(&dvector![1e6]).unwrap().1, 0);
    }

    #[test]
    fn pruning_cases() {
        assert!(!prune_region(&dmatrix![1.0; -1.0], &dvector![1.0, -2.0]));
        assert!(prune_region(&DMatrix::zeros(0, 3), &DVector::zeros(0)));
        assert!(prune_region(&dmatrix![1.0], &dvector![1.0]));
        assert!(prune_region(&dmatrix![-1.0], &dvector![-1.0]));
        // a line segment has no interior in the plane
        assert!(!prune_region(&dmatrix![1.0, 0.0; -1.0, 0.0], &dvector![1.0, -1.0]));
    }

    #[test]
    fn law_round_trip_and_tamper() {
        let law = synthesize(&hand_qp(), None).unwrap();
        let text = law_to_json(&law).unwrap();
        let back = law_from_json(&text).unwrap();
        assert_eq!(back, law);
        let tampered = text.replacen("\"offset\": [\n        0.0", "\"offset\": [\n        0.5", 1);
        let tampered = if tampered == text { text.replacen("1.0", "1.5", 1) } else { tampered };
        assert!(matches!(law_from_json(&tampered), Err(Error::Fingerprint { .. })));
        let bumped = text.replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(matches!(law_from_json(&bumped), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn outside_every_region() {
        let mut qp = hand_qp();
        // a2 >= 0 as well, so chi > 1 is infeasible
        qp.g_in = dmatrix![1.0, 1.0; 0.0, -1.0];
        qp.beta = dvector![1.0, 0.0];
        qp.phi = DMatrix::zeros(2, 1);
        let law = synthesize(&qp, None).unwrap();
        assert!(matches!(law.evaluate(&dvector![2.0]), Err(Error::NoRegion)));
    }
}
