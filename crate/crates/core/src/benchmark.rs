//! Experiment protocols: regularization cross-validation, the SISO Monte
//! Carlo study, the four-tank regulation study and the timing comparison.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::Serialize;

use crate::closed_loop::{cost_index, rmse, run_closed_loop, ClosedLoopResult, Controller, InitialWindow};
use crate::data::{HankelView, TrajectoryData};
use crate::error::{Error, Result};
use crate::explicit::{law_to_json, synthesize, ExplicitLaw};
use crate::oracle::ImplicitController;
use crate::problem::{build, CompactQP, ParamBlock, ParameterLayout};
use crate::rng::stream;
use crate::system::{snr_noise_variance, Benchmark, LtiSystem, OpenLoop};

/// Default regularization grid.
pub const RHO_GRID: [f64; 8] = [0.01, 0.1, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0];

/// Past window used to start a cross-validation closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvWindow {
    /// Zero input and noiseless outputs rewound from the start state.
    Unforced,
    /// The recorded (noisy) samples preceding the start index.
    Recorded,
}

#[derive(Debug, Clone)]
pub struct SisoProtocol {
    /// `None` for noiseless data.
    pub snr_db: Option<f64>,
    pub rho_grid: Vec<f64>,
    /// Sample indices of the cross-validation record used as start states.
    pub cv_starts: Vec<usize>,
    pub cv_steps: usize,
    pub cv_window: CvWindow,
    pub test_steps: usize,
    pub test_state: DVector<f64>,
    /// Regularization of the reference law built from noiseless data.
    pub reference_rho: f64,
    pub max_active: Option<usize>,
}

impl Default for SisoProtocol {
    fn default() -> Self {
        Self {
            snr_db: Some(20.0),
            rho_grid: RHO_GRID.to_vec(),
            cv_starts: vec![10, 40, 70],
            cv_steps: 50,
            cv_window: CvWindow::Unforced,
            test_steps: 50,
            test_state: DVector::from_vec(vec![1.0, 1.0]),
            reference_rho: 1e-6,
            max_active: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CvCandidate {
    pub rho: f64,
    pub score: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvOutcome {
    pub rho: f64,
    pub score: f64,
    pub candidates: Vec<CvCandidate>,
}

/// Explicit law for `bench` at regularization `rho` from `data`.
pub fn synthesize_for(bench: &Benchmark, data: &TrajectoryData, rho: f64, max_active: Option<usize>) -> Result<(CompactQP, ExplicitLaw)> {
    let mut spec = bench.spec.clone();
    spec.rho_alpha = rho;
    let hv = HankelView::from_data(data, spec.horizon, spec.order)?;
    let mut qp = build(bench.variant, &spec, &hv)?;
    if qp.layout.contains(ParamBlock::TerminalInputs) {
        qp = qp.freeze_terminal(&spec.u_s, &spec.y_s)?;
    }
    let law = synthesize(&qp, max_active)?;
    Ok((qp, law))
}

fn cv_window(bench: &Benchmark, cv: &OpenLoop, start: usize, kind: CvWindow) -> Result<InitialWindow> {
    let n = bench.spec.order;
    if start < n || start >= cv.states.ncols() {
        return Err(Error::Config(format!(
            "cross-validation start {start} is outside the record (needs {n}..{})",
            cv.states.ncols()
        )));
    }
    let x0 = cv.states.column(start).into_owned();
    match kind {
        CvWindow::Unforced => InitialWindow::unforced(&bench.system, x0, n),
        CvWindow::Recorded => Ok(InitialWindow {
            x0,
            past_u: cv.u.columns(start - n, n).into_owned(),
            past_y: cv.y.columns(start - n, n).into_owned(),
        }),
    }
}

/// Pick the regularization with the lowest closed-loop cost on the
/// cross-validation record; ties go to the smallest value.
///
/// Each candidate law runs one closed loop per start index on `plant`
/// (which carries the measurement noise), scored by the stage cost on the
/// measured outputs. All candidates see the same noise realizations.
pub fn cross_validate_rho(
    bench: &Benchmark,
    train: &TrajectoryData,
    cv: &OpenLoop,
    plant: &LtiSystem,
    protocol: &SisoProtocol,
    seed: u64,
) -> Result<CvOutcome> {
    if protocol.rho_grid.is_empty() {
        return Err(Error::Config("empty regularization grid".into()));
    }
    let (q, r) = (&bench.spec.q, &bench.spec.r);
    let zero_u = DVector::zeros(bench.system.m());
    let zero_y = DVector::zeros(bench.system.p());
    let candidates: Vec<CvCandidate> = protocol
        .rho_grid
        .iter()
        .map(|&rho| {
            let evaluate = || -> Result<f64> {
                let (_, law) = synthesize_for(bench, train, rho, protocol.max_active)?;
                let mut total = 0.0;
                for (j, &start) in protocol.cv_starts.iter().enumerate() {
                    let init = cv_window(bench, cv, start, protocol.cv_window)?;
                    let mut rng = stream(seed, 1000 + j as u64);
                    let run = run_closed_loop(plant, &law, protocol.cv_steps, &init, &bench.spec.u_s, &bench.spec.y_s, &mut rng)?;
                    if let Some(why) = run.aborted {
                        return Err(Error::Verification(why));
                    }
                    if !run.stable {
                        return Err(Error::Unstable(run.y_true.amax()));
                    }
                    total += cost_index(&run.u, &run.y, q, r, &zero_u, &zero_y);
                }
                Ok(total)
            };
            match evaluate() {
                Ok(score) => CvCandidate {
                    rho,
                    score: Some(score),
                    failure: None,
                },
                Err(e) => CvCandidate {
                    rho,
                    score: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();

    let mut best: Option<(f64, f64)> = None;
    for c in &candidates {
        if let Some(s) = c.score {
            let better = match best {
                None => true,
                Some((bs, br)) => s < bs || (s == bs && c.rho < br),
            };
            if better {
                best = Some((s, c.rho));
            }
        }
    }
    match best {
        Some((score, rho)) => Ok(CvOutcome { rho, score, candidates }),
        None => {
            let diag: Vec<String> = candidates
                .iter()
                .map(|c| format!("rho={}: {}", c.rho, c.failure.as_deref().unwrap_or("?")))
                .collect();
            Err(Error::Infeasible(format!("every regularization candidate failed: {}", diag.join("; "))))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SisoRun {
    pub snr_db: Option<f64>,
    pub rho: f64,
    pub rmse: f64,
    pub regions: usize,
    pub cv: CvOutcome,
}

/// Training and cross-validation records for one run, plus the plant with
/// the matching measurement noise.
pub fn siso_datasets<R: Rng + ?Sized>(bench: &Benchmark, snr_db: Option<f64>, rng: &mut R) -> Result<(OpenLoop, OpenLoop, LtiSystem)> {
    let clean = bench.system.noiseless();
    let train_clean = bench.collect_with(&clean, rng)?;
    let plant = match snr_db {
        Some(snr) => {
            let var = snr_noise_variance(&train_clean.y_true, snr);
            clean.with_measurement_noise(DMatrix::from_diagonal(&var))?
        }
        None => clean,
    };
    let train = plant.simulate(&DVector::zeros(plant.n_x()), &train_clean.u, rng);
    let cv = bench.collect_with(&plant, rng)?;
    Ok((train, cv, plant))
}

/// One run of the SISO study: fresh training and cross-validation data,
/// regularization by cross-validation, then a noiseless test against the
/// law synthesized from the noiseless training outputs.
pub fn siso_run(bench: &Benchmark, protocol: &SisoProtocol, seed: u64, run_id: u64) -> Result<SisoRun> {
    let mut rng = stream(seed, run_id);
    let (train, cv, plant) = siso_datasets(bench, protocol.snr_db, &mut rng)?;
    let outcome = cross_validate_rho(bench, &train.measured()?, &cv, &plant, protocol, seed ^ run_id.rotate_left(17))?;
    let (_, law) = synthesize_for(bench, &train.measured()?, outcome.rho, protocol.max_active)?;
    let (_, reference) = synthesize_for(bench, &train.noiseless()?, protocol.reference_rho, protocol.max_active)?;

    let clean = bench.system.noiseless();
    let init = InitialWindow::unforced(&clean, protocol.test_state.clone(), bench.spec.order)?;
    let test = |c: &ExplicitLaw| -> Result<ClosedLoopResult> {
        let run = run_closed_loop(&clean, c, protocol.test_steps, &init, &bench.spec.u_s, &bench.spec.y_s, &mut stream(0, 0))?;
        match run.aborted {
            Some(why) => Err(Error::Verification(format!("test run stopped: {why}"))),
            None => Ok(run),
        }
    };
    let a = test(&law)?;
    let b = test(&reference)?;
    Ok(SisoRun {
        snr_db: protocol.snr_db,
        rho: outcome.rho,
        rmse: rmse(&a.y, &b.y)?,
        regions: law.regions.len(),
        cv: outcome,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub snr_db: Option<f64>,
    pub runs: usize,
    pub failures: Vec<String>,
    pub rho_mean: f64,
    pub rho_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub results: Vec<SisoRun>,
}

/// Sample mean and (n-1) standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Repeat [`siso_run`] for every noise level; runs execute in parallel on
/// independent seed streams and failed runs are counted, not fatal.
pub fn monte_carlo_study(bench: &Benchmark, levels: &[Option<f64>], runs: usize, seed: u64, base: &SisoProtocol) -> Result<Vec<LevelSummary>> {
    if levels.is_empty() || runs < 2 {
        return Err(Error::Config("need at least one noise level and two runs".into()));
    }
    Ok(levels
        .iter()
        .enumerate()
        .map(|(li, &snr)| {
            let protocol = SisoProtocol {
                snr_db: snr,
                ..base.clone()
            };
            let outcomes: Vec<Result<SisoRun>> = (0..runs)
                .into_par_iter()
                .map(|r| siso_run(bench, &protocol, seed, (li as u64) << 32 | r as u64))
                .collect();
            let mut results = Vec::new();
            let mut failures = Vec::new();
            for (r, o) in outcomes.into_iter().enumerate() {
                match o {
                    Ok(run) => results.push(run),
                    Err(e) => failures.push(format!("run {r}: {e}")),
                }
            }
            let (rho_mean, rho_std) = mean_std(&results.iter().map(|r| r.rho).collect::<Vec<_>>());
            let (rmse_mean, rmse_std) = mean_std(&results.iter().map(|r| r.rmse).collect::<Vec<_>>());
            LevelSummary {
                snr_db: snr,
                runs,
                failures,
                rho_mean,
                rho_std,
                rmse_mean,
                rmse_std,
                results,
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct FourTankProtocol {
    pub realizations: usize,
    pub steps: usize,
    /// Collect training data without process and measurement noise.
    pub noiseless_data: bool,
    /// Closed-loop start; `None` is the zero state with zero history.
    pub init: Option<InitialWindow>,
    pub max_active: Option<usize>,
}

impl Default for FourTankProtocol {
    fn default() -> Self {
        Self {
            realizations: 30,
            steps: 600,
            noiseless_data: false,
            init: None,
            max_active: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FourTankRun {
    pub cost: f64,
    pub stable: bool,
    pub regions: usize,
    /// `|y_end - y_s|_inf` of the explicit run.
    pub final_error: f64,
    /// Output RMSE between explicit and implicit closed loops, if compared.
    pub rmse_ie: Option<f64>,
    pub max_input_gap: Option<f64>,
}

pub struct FourTankTrial {
    pub summary: FourTankRun,
    pub explicit: ClosedLoopResult,
    pub implicit: Option<ClosedLoopResult>,
    pub law: ExplicitLaw,
    pub qp: CompactQP,
}

/// One training realization, synthesis, and a noiseless closed loop.
pub fn four_tank_run(bench: &Benchmark, protocol: &FourTankProtocol, seed: u64, run_id: u64, compare_implicit: bool) -> Result<FourTankTrial> {
    let mut rng = stream(seed, run_id);
    let data_plant = if protocol.noiseless_data {
        bench.system.noiseless()
    } else {
        bench.system.clone()
    };
    let data = bench.collect_with(&data_plant, &mut rng)?.measured()?;
    let (qp, law) = synthesize_for(bench, &data, bench.spec.rho_alpha, protocol.max_active)?;

    let clean = bench.system.noiseless();
    let init = protocol
        .init
        .clone()
        .unwrap_or_else(|| InitialWindow::at_rest(&clean, bench.spec.order));
    let (u_s, y_s) = (&bench.spec.u_s, &bench.spec.y_s);
    let explicit = run_closed_loop(&clean, &law, protocol.steps, &init, u_s, y_s, &mut stream(0, 0))?;
    let (implicit, rmse_ie, gap) = if compare_implicit {
        let ctl = ImplicitController::new(qp.clone())?;
        let run = run_closed_loop(&clean, &ctl, protocol.steps, &init, u_s, y_s, &mut stream(0, 0))?;
        let steps = run.steps().min(explicit.steps());
        let ie = rmse(&explicit.y.columns(0, steps).into_owned(), &run.y.columns(0, steps).into_owned())?;
        let gap = (explicit.u.columns(0, steps) - run.u.columns(0, steps)).amax();
        (Some(run), Some(ie), Some(gap))
    } else {
        (None, None, None)
    };
    let final_error = if explicit.steps() > 0 {
        (explicit.y.column(explicit.steps() - 1) - y_s).amax()
    } else {
        f64::INFINITY
    };
    Ok(FourTankTrial {
        summary: FourTankRun {
            cost: explicit.cost(&bench.spec.q, &bench.spec.r, u_s, y_s),
            stable: explicit.completed() && explicit.steps() == protocol.steps,
            regions: law.regions.len(),
            final_error,
            rmse_ie,
            max_input_gap: gap,
        },
        explicit,
        implicit,
        law,
        qp,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FourTankSummary {
    pub realizations: usize,
    pub unstable: usize,
    pub failures: Vec<String>,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub runs: Vec<FourTankRun>,
}

pub fn four_tank_study(bench: &Benchmark, protocol: &FourTankProtocol, seed: u64) -> FourTankSummary {
    let outcomes: Vec<Result<FourTankRun>> = (0..protocol.realizations)
        .into_par_iter()
        .map(|r| four_tank_run(bench, protocol, seed, r as u64, false).map(|t| t.summary))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(run) => runs.push(run),
            Err(e) => failures.push(format!("realization {r}: {e}")),
        }
    }
    let stable_costs: Vec<f64> = runs.iter().filter(|r| r.stable).map(|r| r.cost).collect();
    let (cost_mean, cost_std) = mean_std(&stable_costs);
    FourTankSummary {
        realizations: protocol.realizations,
        unstable: runs.iter().filter(|r| !r.stable).count(),
        failures,
        cost_mean,
        cost_std,
        runs,
    }
}

/// Parameters drawn uniformly: input entries from `input_range`, output
/// entries from `output_range`; reference/terminal blocks likewise.
pub fn sample_parameters<R: Rng + ?Sized>(
    layout: &ParameterLayout,
    count: usize,
    input_range: (f64, f64),
    output_range: (f64, f64),
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let dist = |(lo, hi): (f64, f64)| Uniform::new_inclusive(lo, hi).map_err(|e| Error::Config(e.to_string()));
    let (du, dy) = (dist(input_range)?, dist(output_range)?);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut chi = Vec::with_capacity(layout.len());
        for &b in &layout.blocks {
            let d = match b {
                ParamBlock::PastInputs | ParamBlock::TerminalInputs | ParamBlock::InputReference => &du,
                _ => &dy,
            };
            chi.extend((0..layout.block_len(b)).map(|_| d.sample(rng)));
        }
        out.push(DVector::from_vec(chi));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingReport {
    pub samples: usize,
    pub explicit_mean: f64,
    pub explicit_worst: f64,
    pub implicit_mean: f64,
    pub implicit_worst: f64,
    pub law_bytes: usize,
    pub qp_bytes: usize,
}

impl TimingReport {
    pub fn speedup(&self) -> f64 {
        self.implicit_mean / self.explicit_mean
    }
}

/// Time each law evaluation against an online solve of the same QP (with
/// factorizations prepared once), sample by sample, on the calling thread.
/// Storage compares the serialized law with the serialized QP data.
pub fn benchmark_timing(law: &ExplicitLaw, qp: &CompactQP, samples: &[DVector<f64>]) -> Result<TimingReport> {
    if samples.is_empty() {
        return Err(Error::Config("timing needs at least one sample".into()));
    }
    let ctl = ImplicitController::new(qp.clone())?;
    let mut u = vec![0.0; law.m];
    let mut ex = Vec::with_capacity(samples.len());
    let mut im = Vec::with_capacity(samples.len());
    for chi in samples {
        let t = Instant::now();
        law.evaluate_into(chi.as_slice(), &mut u)?;
        ex.push(t.elapsed().as_secs_f64());
        std::hint::black_box(&u);
        let t = Instant::now();
        let v = Controller::control(&ctl, chi)?;
        im.push(t.elapsed().as_secs_f64());
        std::hint::black_box(&v);
    }
    let stats = |v: &[f64]| (v.iter().sum::<f64>() / v.len() as f64, v.iter().cloned().fold(0.0, f64::max));
    let (explicit_mean, explicit_worst) = stats(&ex);
    let (implicit_mean, implicit_worst) = stats(&im);
    Ok(TimingReport {
        samples: samples.len(),
        explicit_mean,
        explicit_worst,
        implicit_mean,
        implicit_worst,
        law_bytes: law_to_json(law)?.len(),
        qp_bytes: qp.to_json().len(),
    })
}
