//! Trajectory data, block-Hankel matrices and persistency of excitation.
//!
//! Sequences are stored column-wise: a signal with `eta` channels and `N`
//! samples is an `eta x N` matrix whose column `k` is the sample at time `k`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, vstack};
use crate::rng::stream;

/// A recorded input/output experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    /// Inputs, `m x N`.
    pub u: DMatrix<f64>,
    /// Outputs, `p x N`.
    pub y: DMatrix<f64>,
}

impl TrajectoryData {
    pub fn new(u: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if u.ncols() != y.ncols() {
            return Err(Error::dim(format!(
                "input has {} samples, output has {}",
                u.ncols(),
                y.ncols()
            )));
        }
        if u.nrows() == 0 || y.nrows() == 0 {
            return Err(Error::dim("signals need at least one channel"));
        }
        Ok(Self { u, y })
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.nrows()
    }

    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> TrajectoryData {
        TrajectoryData {
            u: self.u.columns(start, len).into_owned(),
            y: self.y.columns(start, len).into_owned(),
        }
    }
}

/// Read a CSV trajectory: one sample per row, `m` inputs then `p` outputs.
/// Lines starting with `#` are ignored; there is no header.
pub fn load_trajectory(path: impl AsRef<Path>, m: usize, p: usize) -> Result<TrajectoryData> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(format!("reading {}", path.display()), io),
            other => Error::Config(format!("{}: {other:?}", path.display())),
        })?;

    let width = m + p;
    let mut samples: Vec<f64> = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: e.position().map(|p| p.line() as usize).unwrap_or(0),
            column: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows + 1);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() != width {
            return Err(Error::RowWidth {
                path: path.to_path_buf(),
                row: line,
                found: record.len(),
                expected: width,
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: line,
                column: col + 1,
                message: format!("'{field}' is not a number"),
            })?;
            samples.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyData(path.to_path_buf()));
    }
    let all = DMatrix::from_column_slice(width, rows, &samples);
    TrajectoryData::new(
        all.rows(0, m).into_owned(),
        all.rows(m, p).into_owned(),
    )
}

pub fn save_trajectory(path: impl AsRef<Path>, data: &TrajectoryData) -> Result<()> {
    let path = path.as_ref();
    let ctx = || format!("writing {}", path.display());
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(ctx(), e))?);
    writeln!(
        out,
        "# {} inputs, {} outputs, {} samples",
        data.m(),
        data.p(),
        data.len()
    )
    .map_err(|e| Error::io(ctx(), e))?;
    for k in 0..data.len() {
        let fields: Vec<String> = data
            .u
            .column(k)
            .iter()
            .chain(data.y.column(k).iter())
            .map(|v| v.to_string())
            .collect();
        writeln!(out, "{}", fields.join(",")).map_err(|e| Error::io(ctx(), e))?;
    }
    out.flush().map_err(|e| Error::io(ctx(), e))
}

/// Block-Hankel matrix with `depth` block rows: block `(i, j)` is sample
/// `i + j` of `seq`.
pub fn build_hankel(seq: &DMatrix<f64>, depth: usize) -> Result<DMatrix<f64>> {
    let (eta, n) = seq.shape();
    if depth == 0 || depth > n {
        return Err(Error::dim(format!(
            "Hankel depth {depth} incompatible with {n} samples"
        )));
    }
    let cols = n - depth + 1;
    let mut h = DMatrix::zeros(eta * depth, cols);
    for i in 0..depth {
        h.view_mut((i * eta, 0), (eta, cols))
            .copy_from(&seq.columns(i, cols));
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct PersistencyReport {
    pub exciting: bool,
    pub rank: usize,
    pub required: usize,
    pub singular_values: Vec<f64>,
}

/// Persistency of excitation of order `order`: the depth-`order` Hankel
/// matrix has full row rank.
pub fn check_persistency(seq: &DMatrix<f64>, order: usize) -> PersistencyReport {
    let required = seq.nrows() * order;
    match build_hankel(seq, order) {
        Ok(h) => {
            let report = numerical_rank(&h);
            PersistencyReport {
                exciting: report.rank == required,
                rank: report.rank,
                required,
                singular_values: report.singular_values,
            }
        }
        Err(_) => PersistencyReport {
            exciting: false,
            rank: 0,
            required,
            singular_values: Vec::new(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Input,
    Output,
}

/// Depth `L + n` Hankel matrices of a trajectory and their named block
/// slices. Block rows `0..n` hold the past window, `n..n+L` the prediction,
/// and `L..L+n` the terminal window.
#[derive(Debug, Clone)]
pub struct HankelView {
    pub horizon: usize,
    pub order: usize,
    pub m: usize,
    pub p: usize,
    pub hu: DMatrix<f64>,
    pub hy: DMatrix<f64>,
}

impl HankelView {
    /// Builds the view without checking persistency of excitation.
    pub fn from_data(data: &TrajectoryData, horizon: usize, order: usize) -> Result<Self> {
        if horizon == 0 || order == 0 {
            return Err(Error::InvalidSpec("horizon and order must be positive".into()));
        }
        let depth = horizon + order;
        if data.len() < depth {
            return Err(Error::dim(format!(
                "{} samples cannot fill a depth-{depth} Hankel matrix",
                data.len()
            )));
        }
        Ok(Self {
            horizon,
            order,
            m: data.m(),
            p: data.p(),
            hu: build_hankel(&data.u, depth)?,
            hy: build_hankel(&data.y, depth)?,
        })
    }

    pub fn n_alpha(&self) -> usize {
        self.hu.ncols()
    }

    fn source(&self, sig: Signal) -> (&DMatrix<f64>, usize) {
        match sig {
            Signal::Input => (&self.hu, self.m),
            Signal::Output => (&self.hy, self.p),
        }
    }

    /// `count` block rows starting at block row `start`.
    pub fn block_rows(&self, sig: Signal, start: usize, count: usize) -> DMatrix<f64> {
        let (h, w) = self.source(sig);
        h.rows(start * w, count * w).into_owned()
    }

    pub fn past(&self, sig: Signal) -> DMatrix<f64> {
        self.block_rows(sig, 0, self.order)
    }

    pub fn future(&self, sig: Signal) -> DMatrix<f64> {
        self.block_rows(sig, self.order, self.horizon)
    }

    pub fn terminal(&self, sig: Signal) -> DMatrix<f64> {
        self.block_rows(sig, self.horizon, self.order)
    }

    /// Rows mapping the decision vector to prediction step `k` (`0 <= k < L`).
    pub fn step(&self, sig: Signal, k: usize) -> DMatrix<f64> {
        self.block_rows(sig, self.order + k, 1)
    }

    /// `[H_u^P; H_y^P]`.
    pub fn past_stack(&self) -> DMatrix<f64> {
        vstack(&[&self.past(Signal::Input), &self.past(Signal::Output)])
    }

    /// `[H_u^T; H_y^T]`.
    pub fn terminal_stack(&self) -> DMatrix<f64> {
        vstack(&[&self.terminal(Signal::Input), &self.terminal(Signal::Output)])
    }
}

/// Hankel view for a DD-PC build; fails unless the input is persistently
/// exciting of order `L + 2n`.
pub fn slice_hankel(data: &TrajectoryData, horizon: usize, order: usize) -> Result<HankelView> {
    let pe_order = horizon + 2 * order;
    let report = check_persistency(&data.u, pe_order);
    if !report.exciting {
        return Err(Error::Persistency {
            order: pe_order,
            achieved: report.rank,
            required: report.required,
        });
    }
    HankelView::from_data(data, horizon, order)
}

/// I.i.d. uniform excitation on `[low, high]`, `m x n_samples`.
pub fn generate_excitation_with<R: Rng + ?Sized>(
    rng: &mut R,
    n_samples: usize,
    low: f64,
    high: f64,
    m: usize,
) -> Result<DMatrix<f64>> {
    if !(low < high) {
        return Err(Error::InvalidSpec(format!(
            "excitation bounds must satisfy low < high, got [{low}, {high}]"
        )));
    }
    let dist = Uniform::new_inclusive(low, high)
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    Ok(DMatrix::from_fn(m, n_samples, |_, _| dist.sample(rng)))
}

pub fn generate_excitation(
    n_samples: usize,
    low: f64,
    high: f64,
    m: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    generate_excitation_with(&mut stream(seed, 0), n_samples, low, high, m)
}
