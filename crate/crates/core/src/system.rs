//! Discrete-time LTI plants with Gaussian process and measurement noise.

use nalgebra::{dmatrix, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{generate_excitation_with, TrajectoryData};
use crate::error::{Error, Result};
use crate::linalg::{covariance_factor, is_psd};
use crate::problem::{lyapunov_terminal_weight, DdpcSpec, Polytope, Variant};

/// `x+ = A x + B u + w`, `y = C x + D u + v`, `w ~ N(0, process_cov)`,
/// `v ~ N(0, measurement_cov)`.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    process_cov: DMatrix<f64>,
    measurement_cov: DMatrix<f64>,
    process_factor: DMatrix<f64>,
    measurement_factor: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let nx = a.nrows();
        if !a.is_square() || b.nrows() != nx || c.ncols() != nx || d.shape() != (c.nrows(), b.ncols()) {
            return Err(Error::dim(format!(
                "inconsistent plant matrices A {:?}, B {:?}, C {:?}, D {:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        let p = c.nrows();
        Ok(Self {
            process_cov: DMatrix::zeros(nx, nx),
            measurement_cov: DMatrix::zeros(p, p),
            process_factor: DMatrix::zeros(nx, nx),
            measurement_factor: DMatrix::zeros(p, p),
            a,
            b,
            c,
            d,
        })
    }

    pub fn with_process_noise(mut self, cov: DMatrix<f64>) -> Result<Self> {
        check_cov(&cov, self.n_x(), "process")?;
        self.process_factor = covariance_factor(&cov);
        self.process_cov = cov;
        Ok(self)
    }

    pub fn with_measurement_noise(mut self, cov: DMatrix<f64>) -> Result<Self> {
        check_cov(&cov, self.p(), "measurement")?;
        self.measurement_factor = covariance_factor(&cov);
        self.measurement_cov = cov;
        Ok(self)
    }

    pub fn noiseless(&self) -> Self {
        let mut s = self.clone();
        s.process_cov.fill(0.0);
        s.measurement_cov.fill(0.0);
        s.process_factor.fill(0.0);
        s.measurement_factor.fill(0.0);
        s
    }

    pub fn process_cov(&self) -> &DMatrix<f64> {
        &self.process_cov
    }

    pub fn measurement_cov(&self) -> &DMatrix<f64> {
        &self.measurement_cov
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    fn draw<R: Rng + ?Sized>(factor: &DMatrix<f64>, rng: &mut R) -> Option<DVector<f64>> {
        if factor.iter().all(|&v| v == 0.0) {
            return None;
        }
        let e = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Some(factor * e)
    }

    /// One step from `x` under `u`: returns `(x+, y_measured, y_true)`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let y_true = &self.c * x + &self.d * u;
        let mut y = y_true.clone();
        if let Some(v) = Self::draw(&self.measurement_factor, rng) {
            y += v;
        }
        let mut next = &self.a * x + &self.b * u;
        if let Some(w) = Self::draw(&self.process_factor, rng) {
            next += w;
        }
        (next, y, y_true)
    }

    /// Open-loop response to the input columns of `u`, starting at `x0`.
    pub fn simulate<R: Rng + ?Sized>(&self, x0: &DVector<f64>, u: &DMatrix<f64>, rng: &mut R) -> OpenLoop {
        let len = u.ncols();
        let mut x = x0.clone();
        let mut states = DMatrix::zeros(self.n_x(), len + 1);
        let mut y = DMatrix::zeros(self.p(), len);
        let mut y_true = DMatrix::zeros(self.p(), len);
        for k in 0..len {
            states.set_column(k, &x);
            let (next, meas, clean) = self.step(&x, &u.column(k).into_owned(), rng);
            y.set_column(k, &meas);
            y_true.set_column(k, &clean);
            x = next;
        }
        states.set_column(len, &x);
        OpenLoop {
            u: u.clone(),
            y,
            y_true,
            states,
        }
    }

    /// Steady state and output for a constant input, `(I - A) x = B u`.
    pub fn equilibrium(&self, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let lhs = DMatrix::<f64>::identity(self.n_x(), self.n_x()) - &self.a;
        let x = lhs
            .lu()
            .solve(&(&self.b * u))
            .ok_or_else(|| Error::InvalidSpec("plant has a pole at 1".into()))?;
        let y = &self.c * &x + &self.d * u;
        Ok((x, y))
    }
}

fn check_cov(cov: &DMatrix<f64>, dim: usize, what: &str) -> Result<()> {
    if cov.shape() != (dim, dim) {
        return Err(Error::dim(format!("{what} covariance must be {dim}x{dim}")));
    }
    if !is_psd(cov, 1e-12) {
        return Err(Error::InvalidSpec(format!(
            "{what} covariance must be symmetric positive semi-definite"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OpenLoop {
    pub u: DMatrix<f64>,
    /// Measured outputs.
    pub y: DMatrix<f64>,
    pub y_true: DMatrix<f64>,
    /// `n_x x (len + 1)`, including the state after the last input.
    pub states: DMatrix<f64>,
}

impl OpenLoop {
    pub fn measured(&self) -> Result<TrajectoryData> {
        TrajectoryData::new(self.u.clone(), self.y.clone())
    }

    pub fn noiseless(&self) -> Result<TrajectoryData> {
        TrajectoryData::new(self.u.clone(), self.y_true.clone())
    }
}

/// Per-channel measurement variance giving the requested SNR on `signal`
/// (`p x N`): sample variance divided by `10^(snr/10)`. An infinite SNR
/// gives zero noise.
pub fn snr_noise_variance(signal: &DMatrix<f64>, snr_db: f64) -> DVector<f64> {
    let n = signal.ncols() as f64;
    DVector::from_fn(signal.nrows(), |i, _| {
        if snr_db.is_infinite() && snr_db > 0.0 {
            return 0.0;
        }
        let row = signal.row(i);
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        var / 10f64.powf(snr_db / 10.0)
    })
}

/// Sample SNR in dB of `noisy` against `clean`, averaged over channels.
pub fn measured_snr(clean: &DMatrix<f64>, noisy: &DMatrix<f64>) -> f64 {
    let p = clean.nrows();
    let noise = noisy - clean;
    let sig = snr_noise_variance(clean, 0.0);
    let nv = snr_noise_variance(&noise, 0.0);
    (0..p).map(|i| 10.0 * (sig[i] / nv[i]).log10()).sum::<f64>() / p as f64
}

/// Plant, controller defaults and data-collection protocol of a benchmark.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: &'static str,
    pub system: LtiSystem,
    pub variant: Variant,
    pub spec: DdpcSpec,
    pub data_length: usize,
    pub excitation: (f64, f64),
    /// Output SNR used when noise is set from the data rather than by a
    /// fixed covariance.
    pub snr_db: Option<f64>,
}

impl Benchmark {
    /// Training data from a zero initial state under uniform excitation.
    pub fn collect<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<OpenLoop> {
        self.collect_with(&self.system, rng)
    }

    /// Same protocol on another plant, e.g. a noiseless copy.
    pub fn collect_with<R: Rng + ?Sized>(&self, plant: &LtiSystem, rng: &mut R) -> Result<OpenLoop> {
        let u = generate_excitation_with(rng, self.data_length, self.excitation.0, self.excitation.1, plant.m())?;
        Ok(plant.simulate(&DVector::zeros(plant.n_x()), &u, rng))
    }
}

pub fn siso_plant() -> LtiSystem {
    LtiSystem::new(
        dmatrix![0.7326, -0.0861; 0.1722, 0.9909],
        dmatrix![0.0609; 0.0064],
        DMatrix::identity(2, 2),
        DMatrix::zeros(2, 1),
    )
    .expect("static matrices are consistent")
}

/// `x_L = T [u_[L-n,L-1]; x_[L-n,L-1]]` for a state-measured plant.
pub fn state_terminal_map(a: &DMatrix<f64>, b: &DMatrix<f64>, order: usize) -> DMatrix<f64> {
    let (nx, m) = (a.nrows(), b.ncols());
    let mut t = DMatrix::zeros(nx, order * (m + nx));
    t.view_mut((0, (order - 1) * m), (nx, m)).copy_from(b);
    t.view_mut((0, order * m + (order - 1) * nx), (nx, nx)).copy_from(a);
    t
}

pub fn four_tank_plant() -> LtiSystem {
    let delta = dmatrix![
        10.0, 1.0, 2.0, 3.0;
        1.0, 10.01, 2.0, 1.5;
        2.0, 2.0, 3.0, 4.0;
        3.0, 1.5, 4.0, 7.0
    ] * 1e-3;
    LtiSystem::new(
        dmatrix![
            0.921, 0.0, 0.041, 0.0;
            0.0, 0.918, 0.0, 0.033;
            0.0, 0.0, 0.924, 0.0;
            0.0, 0.0, 0.0, 0.937
        ],
        dmatrix![
            0.017, 0.001;
            0.001, 0.023;
            0.0, 0.061;
            0.072, 0.0
        ],
        dmatrix![1.0, 0.0, 0.0, 0.0; 0.0, 1.0, 0.0, 0.0],
        DMatrix::zeros(2, 2),
    )
    .and_then(|s| s.with_process_noise(delta))
    .and_then(|s| s.with_measurement_noise(DMatrix::identity(2, 2) * 5.76e-4))
    .expect("static matrices are consistent")
}

pub fn builtin_system(name: &str) -> Result<Benchmark> {
    match name {
        "siso" => {
            let system = siso_plant();
            let (l, n) = (2, 2);
            let mut spec = DdpcSpec::new(l, n, DMatrix::identity(2, 2), dmatrix![0.01], 1.0);
            spec.input_set = Polytope::from_box(&[-2.0], &[2.0])?;
            // terminal state weight from the Lyapunov equation of the plant,
            // lifted to the terminal input/state window
            let p_state = lyapunov_terminal_weight(&system.a, &DMatrix::identity(2, 2))?;
            let t = state_terminal_map(&system.a, &system.b, n);
            spec.terminal_weight = Some(crate::linalg::symmetrize(&(t.transpose() * p_state * &t)));
            Ok(Benchmark {
                name: "siso",
                system,
                variant: Variant::Relaxed,
                spec,
                data_length: 100,
                excitation: (-5.0, 5.0),
                snr_db: Some(20.0),
            })
        }
        "four_tank" => {
            let system = four_tank_plant();
            let mut spec = DdpcSpec::new(30, 4, DMatrix::identity(2, 2) * 3.0, DMatrix::identity(2, 2) * 1e-4, 0.1);
            spec.rho_sigma = Some(1e3);
            spec.u_s = DVector::from_vec(vec![1.0, 1.0]);
            spec.y_s = DVector::from_vec(vec![0.65, 0.77]);
            Ok(Benchmark {
                name: "four_tank",
                system,
                variant: Variant::Robust,
                spec,
                data_length: 400,
                excitation: (-1.0, 1.0),
                snr_db: None,
            })
        }
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}
