//! TOML run configuration.
//!
//! A config either names a built-in benchmark (`system = "siso"`), whose
//! plant and controller settings become the defaults, or describes the
//! problem from scratch. Keys are documented in the README.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::benchmark::{CvWindow, FourTankProtocol, SisoProtocol, RHO_GRID};
use crate::closed_loop::InitialWindow;
use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::problem::{lyapunov_terminal_weight, DdpcSpec, Halfspace, Polytope, Variant};
use crate::system::{builtin_system, state_terminal_map, Benchmark, LtiSystem};

/// Scalar (times identity), diagonal, or full matrix given row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixValue {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

impl MatrixValue {
    pub fn to_matrix(&self, dim: usize, key: &str) -> Result<DMatrix<f64>> {
        let m = match self {
            MatrixValue::Scalar(s) => DMatrix::identity(dim, dim) * *s,
            MatrixValue::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            MatrixValue::Rows(rows) => {
                let ncols = rows.first().map_or(0, Vec::len);
                crate::linalg::from_rows(rows, ncols).map_err(|e| Error::Config(format!("{key}: {e}")))?
            }
        };
        if m.shape() != (dim, dim) {
            return Err(Error::Config(format!("{key} must be {dim}x{dim}, got {:?}", m.shape())));
        }
        Ok(m)
    }
}

/// Terminal weight: a matrix, or `"lyapunov"` for the plant-based default
/// (state-measured built-in systems only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TerminalValue {
    Keyword(String),
    Matrix(MatrixValue),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum History {
    /// Zero state and zero past window.
    AtRest,
    /// Past window rewound from `x0` under zero input.
    Unforced,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub steps: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub history: Option<History>,
    pub snr_db: Option<f64>,
    pub data_length: Option<usize>,
    pub excitation: Option<[f64; 2]>,
    pub runs: Option<usize>,
    pub levels: Option<Vec<f64>>,
    pub rho_grid: Option<Vec<f64>>,
    pub cv_starts: Option<Vec<usize>>,
    pub cv_steps: Option<usize>,
    pub cv_window: Option<CvWindow>,
    pub reference_rho: Option<f64>,
    pub noiseless_data: Option<bool>,
    pub timing_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: Option<String>,
    pub inputs: Option<usize>,
    pub outputs: Option<usize>,
    pub variant: Option<Variant>,
    #[serde(rename = "L")]
    pub horizon: Option<usize>,
    pub n: Option<usize>,
    #[serde(rename = "Q")]
    pub q: Option<MatrixValue>,
    #[serde(rename = "R")]
    pub r: Option<MatrixValue>,
    pub rho_alpha: Option<f64>,
    pub rho_sigma: Option<f64>,
    #[serde(rename = "P")]
    pub terminal: Option<TerminalValue>,
    pub u_s: Option<Vec<f64>>,
    pub y_s: Option<Vec<f64>>,
    #[serde(rename = "Psi")]
    pub psi: Option<MatrixValue>,
    #[serde(rename = "Phi")]
    pub phi: Option<MatrixValue>,
    pub u_min: Option<Vec<f64>>,
    pub u_max: Option<Vec<f64>>,
    pub y_min: Option<Vec<f64>>,
    pub y_max: Option<Vec<f64>>,
    pub input_constraints: Option<Vec<Halfspace>>,
    pub output_constraints: Option<Vec<Halfspace>>,
    pub equilibrium_input_constraints: Option<Vec<Halfspace>>,
    pub equilibrium_output_constraints: Option<Vec<Halfspace>>,
    pub max_active: Option<usize>,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

/// Fully resolved problem.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub variant: Variant,
    pub spec: DdpcSpec,
    pub max_active: Option<usize>,
    /// Plant and data protocol, when a built-in system is named.
    pub bench: Option<Benchmark>,
    pub simulation: SimulationConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_table(toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text)
    }

    /// Apply `key=value` overrides; dotted keys reach into tables and the
    /// value is parsed as TOML (bare words fall back to strings).
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let value = parse_value(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            let mut cur = &mut table;
            for part in &path[..path.len() - 1] {
                cur = cur
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
            }
            cur.insert(path[path.len() - 1].to_string(), value);
        }
        Self::from_table(table)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let bench = self.system.as_deref().map(builtin_system).transpose()?;
        let (m, p) = match (&bench, self.inputs, self.outputs) {
            (Some(b), _, _) => (b.system.m(), b.system.p()),
            (None, Some(m), Some(p)) => (m, p),
            _ => {
                return Err(Error::Config(
                    "name a built-in `system` or give `inputs` and `outputs`".into(),
                ))
            }
        };
        let base = bench.as_ref().map(|b| (b.variant, b.spec.clone()));
        let need = |what: &str| Error::Config(format!("`{what}` is required without a built-in system"));

        let variant = self.variant.or(base.as_ref().map(|b| b.0)).unwrap_or(Variant::Nominal);
        let horizon = self.horizon.or(base.as_ref().map(|b| b.1.horizon)).ok_or_else(|| need("L"))?;
        let order = self.n.or(base.as_ref().map(|b| b.1.order)).ok_or_else(|| need("n"))?;
        let q = match &self.q {
            Some(v) => v.to_matrix(p, "Q")?,
            None => base.as_ref().map(|b| b.1.q.clone()).ok_or_else(|| need("Q"))?,
        };
        let r = match &self.r {
            Some(v) => v.to_matrix(m, "R")?,
            None => base.as_ref().map(|b| b.1.r.clone()).ok_or_else(|| need("R"))?,
        };
        let rho = self
            .rho_alpha
            .or(base.as_ref().map(|b| b.1.rho_alpha))
            .ok_or_else(|| need("rho_alpha"))?;

        let mut spec = match &base {
            Some((_, s)) => DdpcSpec {
                horizon,
                order,
                q: q.clone(),
                r,
                rho_alpha: rho,
                ..s.clone()
            },
            None => DdpcSpec::new(horizon, order, q.clone(), r, rho),
        };
        if let Some(s) = self.rho_sigma {
            spec.rho_sigma = Some(s);
        }
        if let Some(v) = &self.u_s {
            spec.u_s = DVector::from_column_slice(v);
        }
        if let Some(v) = &self.y_s {
            spec.y_s = DVector::from_column_slice(v);
        }
        if let Some(v) = &self.psi {
            spec.psi = Some(v.to_matrix(m, "Psi")?);
        }
        if let Some(v) = &self.phi {
            spec.phi = Some(v.to_matrix(p, "Phi")?);
        }
        let window = order * (m + p);
        match &self.terminal {
            None => {
                // a built-in terminal weight only matches its own window
                if base.as_ref().is_some_and(|(_, s)| s.order != order || s.q != q) {
                    spec.terminal_weight = None;
                }
            }
            Some(TerminalValue::Keyword(k)) if k == "none" => spec.terminal_weight = None,
            Some(TerminalValue::Keyword(k)) if k == "lyapunov" => {
                let sys = bench
                    .as_ref()
                    .map(|b| &b.system)
                    .ok_or_else(|| Error::Config("P = \"lyapunov\" needs a built-in system".into()))?;
                spec.terminal_weight = Some(lyapunov_window_weight(sys, &q, order)?);
            }
            Some(TerminalValue::Keyword(k)) => {
                return Err(Error::Config(format!("unknown P keyword `{k}` (use \"lyapunov\", \"none\" or a matrix)")))
            }
            Some(TerminalValue::Matrix(v)) => spec.terminal_weight = Some(v.to_matrix(window, "P")?),
        }

        if let Some(set) = constraint_set(&self.u_min, &self.u_max, &self.input_constraints, m, "u")? {
            spec.input_set = set;
        }
        if let Some(set) = constraint_set(&self.y_min, &self.y_max, &self.output_constraints, p, "y")? {
            spec.output_set = set;
        }
        if let Some(hs) = &self.equilibrium_input_constraints {
            spec.equilibrium_input_set = Some(Polytope { halfspaces: hs.clone() });
        }
        if let Some(hs) = &self.equilibrium_output_constraints {
            spec.equilibrium_output_set = Some(Polytope { halfspaces: hs.clone() });
        }
        spec.validate()?;
        if variant == Variant::Robust && spec.rho_sigma.is_none() {
            return Err(Error::Config("the robust variant needs `rho_sigma`".into()));
        }

        let bench = bench.map(|mut b| {
            b.variant = variant;
            b.spec = spec.clone();
            if let Some(n) = self.simulation.data_length {
                b.data_length = n;
            }
            if let Some([lo, hi]) = self.simulation.excitation {
                b.excitation = (lo, hi);
            }
            if let Some(s) = self.simulation.snr_db {
                b.snr_db = Some(s);
            }
            b
        });
        Ok(Resolved {
            variant,
            spec,
            max_active: self.max_active,
            bench,
            simulation: self.simulation.clone(),
        })
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn constraint_set(
    lower: &Option<Vec<f64>>,
    upper: &Option<Vec<f64>>,
    extra: &Option<Vec<Halfspace>>,
    dim: usize,
    name: &str,
) -> Result<Option<Polytope>> {
    if lower.is_none() && upper.is_none() && extra.is_none() {
        return Ok(None);
    }
    let fill = |v: &Option<Vec<f64>>, default: f64, key: &str| -> Result<Vec<f64>> {
        match v {
            None => Ok(vec![default; dim]),
            Some(v) if v.len() == dim => Ok(v.clone()),
            Some(v) => Err(Error::Config(format!("{name}_{key} has {} entries, expected {dim}", v.len()))),
        }
    };
    let mut set = Polytope::from_box(
        &fill(lower, f64::NEG_INFINITY, "min")?,
        &fill(upper, f64::INFINITY, "max")?,
    )?;
    if let Some(hs) = extra {
        set.halfspaces.extend(hs.iter().cloned());
    }
    Ok(Some(set))
}

/// `T' P T` with `P` solving the Lyapunov equation of the plant; requires
/// the outputs to be the state.
pub fn lyapunov_window_weight(sys: &LtiSystem, q: &DMatrix<f64>, order: usize) -> Result<DMatrix<f64>> {
    if sys.c != DMatrix::<f64>::identity(sys.n_x(), sys.n_x()) {
        return Err(Error::Config("P = \"lyapunov\" requires measured states (C = I)".into()));
    }
    let p_state = lyapunov_terminal_weight(&sys.a, q)?;
    let t = state_terminal_map(&sys.a, &sys.b, order);
    Ok(symmetrize(&(t.transpose() * p_state * &t)))
}

impl Resolved {
    pub fn bench(&self) -> Result<&Benchmark> {
        self.bench
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a built-in `system`".into()))
    }

    pub fn siso_protocol(&self) -> SisoProtocol {
        let sim = &self.simulation;
        let d = SisoProtocol::default();
        SisoProtocol {
            snr_db: self.bench.as_ref().and_then(|b| b.snr_db).or(d.snr_db),
            rho_grid: sim.rho_grid.clone().unwrap_or_else(|| RHO_GRID.to_vec()),
            cv_starts: sim.cv_starts.clone().unwrap_or(d.cv_starts),
            cv_steps: sim.cv_steps.unwrap_or(d.cv_steps),
            cv_window: sim.cv_window.unwrap_or(d.cv_window),
            test_steps: sim.steps.unwrap_or(d.test_steps),
            test_state: sim.x0.clone().map(DVector::from_vec).unwrap_or(d.test_state),
            reference_rho: sim.reference_rho.unwrap_or(d.reference_rho),
            max_active: self.max_active,
        }
    }

    pub fn four_tank_protocol(&self) -> Result<FourTankProtocol> {
        let sim = &self.simulation;
        let d = FourTankProtocol::default();
        Ok(FourTankProtocol {
            realizations: sim.runs.unwrap_or(d.realizations),
            steps: sim.steps.unwrap_or(d.steps),
            noiseless_data: sim.noiseless_data.unwrap_or(d.noiseless_data),
            init: match (sim.history, &sim.x0) {
                (None | Some(History::AtRest), None) => None,
                _ => Some(self.initial_window()?),
            },
            max_active: self.max_active,
        })
    }

    /// Closed-loop start from `simulation.x0` / `simulation.history`.
    pub fn initial_window(&self) -> Result<InitialWindow> {
        let sys = &self.bench()?.system;
        let n = self.spec.order;
        let x0 = match &self.simulation.x0 {
            Some(v) if v.len() == sys.n_x() => DVector::from_column_slice(v),
            Some(v) => return Err(Error::Config(format!("x0 has {} entries, plant has {} states", v.len(), sys.n_x()))),
            None => DVector::zeros(sys.n_x()),
        };
        match self.simulation.history.unwrap_or(History::AtRest) {
            History::AtRest if x0.iter().all(|&v| v == 0.0) => Ok(InitialWindow::at_rest(sys, n)),
            History::AtRest => Ok(InitialWindow {
                x0,
                ..InitialWindow::at_rest(sys, n)
            }),
            History::Unforced => InitialWindow::unforced(sys, x0, n),
        }
    }
}
