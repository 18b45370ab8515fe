use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use reddpc::benchmark::{
    benchmark_timing, cross_validate_rho, four_tank_run, four_tank_study, monte_carlo_study, sample_parameters,
    siso_datasets, synthesize_for, LevelSummary,
};
use reddpc::closed_loop::{rmse, run_closed_loop, InitialWindow};
use reddpc::config::{Config, Resolved};
use reddpc::data::{check_persistency, load_trajectory, save_trajectory, HankelView, TrajectoryData};
use reddpc::equivalence::{
    initial_condition_residual, verify_model_equivalence, verify_problem_equivalence, StateKind, Weights,
};
use reddpc::explicit::{export_law, import_law, synthesize, ExplicitLaw};
use reddpc::oracle::{DenseQp, ImplicitController};
use reddpc::problem::{build, lyapunov_terminal_weight, CompactQP, ParamBlock};
use reddpc::rng::stream;
use reddpc::system::{builtin_system, measured_snr};
use reddpc::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "reddpc", version, about = "Explicit data-driven predictive control from input/output data")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override a config key, e.g. `--set rho_alpha=2` or `--set simulation.steps=100`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Record an open-loop trajectory of a built-in plant under uniform excitation.
    Generate {
        system: String,
        /// Number of samples (default: the benchmark's data length).
        #[arg(long)]
        length: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        low: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        high: Option<f64>,
        /// Drop process and measurement noise.
        #[arg(long)]
        noiseless: bool,
        /// Measurement noise for this SNR [dB] instead of the built-in noise.
        #[arg(long)]
        snr: Option<f64>,
    },
    /// Build the QP from data and write the explicit law.
    Synthesize {
        #[arg(long)]
        data: PathBuf,
    },
    /// Check a law against the online solver and the equivalence identities.
    Verify {
        #[arg(long)]
        data: PathBuf,
        /// Previously synthesized law; synthesized in-process when absent.
        #[arg(long)]
        law: Option<PathBuf>,
    },
    /// Reproduce a benchmark table.
    Benchmark {
        #[arg(value_enum)]
        name: BenchName,
        /// Comma-separated SNR levels [dB] for `montecarlo`; `inf` is noiseless.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<String>>,
        #[arg(long)]
        runs: Option<usize>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BenchName {
    Siso,
    FourTank,
    Timing,
    Montecarlo,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownSystem(_) | Error::InvalidSpec(_) => 2,
        Error::Parse { .. } | Error::RowWidth { .. } | Error::EmptyData(_) | Error::Persistency { .. } | Error::Dimension(_) => 3,
        Error::RankDeficient { .. }
        | Error::Infeasible(_)
        | Error::IterationLimit(_)
        | Error::NotPositiveDefinite
        | Error::Unstable(_)
        | Error::EmptyLaw
        | Error::NoRegion => 4,
        Error::Fingerprint { .. } | Error::Version { .. } | Error::Verification(_) => 5,
        Error::Io { .. } | Error::Json(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli, default_system: Option<&str>) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if cfg.system.is_none() && cli.config.is_none() {
        cfg.system = default_system.map(str::to_string);
    }
    cfg.with_overrides(&cli.overrides)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_manifest(cli: &Cli, cfg: &Config, outputs: &[&str]) -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let manifest = json!({
        "tool": "reddpc",
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
        "seed": cli.seed,
        "config_file": cli.config.as_ref().map(|p| p.display().to_string()),
        "overrides": cli.overrides,
        "config": cfg.to_toml(),
        "outputs": outputs,
    });
    write_file(&cli.out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}

/// Columns of the given matrices side by side, one row per time step.
fn write_series(path: &Path, series: &[(&str, &DMatrix<f64>)]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(ctx(), e.into()))?;
    let mut header = vec!["t".to_string()];
    for (name, m) in series {
        for i in 0..m.nrows() {
            header.push(format!("{name}{}", i + 1));
        }
    }
    w.write_record(&header).map_err(|e| Error::io(ctx(), e.into()))?;
    let len = series.iter().map(|(_, m)| m.ncols()).max().unwrap_or(0);
    for t in 0..len {
        let mut row = vec![t.to_string()];
        for (_, m) in series {
            for i in 0..m.nrows() {
                row.push(if t < m.ncols() { format!("{:e}", m[(i, t)]) } else { String::new() });
            }
        }
        w.write_record(&row).map_err(|e| Error::io(ctx(), e.into()))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate {
            system,
            length,
            low,
            high,
            noiseless,
            snr,
        } => cmd_generate(cli, system, *length, *low, *high, *noiseless, *snr),
        Command::Synthesize { data } => cmd_synthesize(cli, data),
        Command::Verify { data, law } => cmd_verify(cli, data, law.as_deref()),
        Command::Benchmark { name, levels, runs } => cmd_benchmark(cli, *name, levels.as_deref(), *runs),
    }
}

fn cmd_generate(
    cli: &Cli,
    system: &str,
    length: Option<usize>,
    low: Option<f64>,
    high: Option<f64>,
    noiseless: bool,
    snr: Option<f64>,
) -> Result<()> {
    let mut cfg = load_config(cli, None)?;
    cfg.system = Some(system.to_string());
    let mut bench = builtin_system(system)?;
    if let Some(n) = length {
        bench.data_length = n;
    }
    bench.excitation = (low.unwrap_or(bench.excitation.0), high.unwrap_or(bench.excitation.1));
    let mut rng = stream(cli.seed, 0);
    let run = if noiseless || snr.is_some() {
        let clean = bench.system.noiseless();
        match snr {
            None => bench.collect_with(&clean, &mut rng)?,
            Some(s) => {
                let ref_run = bench.collect_with(&clean, &mut rng)?;
                let var = reddpc::system::snr_noise_variance(&ref_run.y_true, s);
                let noisy = clean.with_measurement_noise(DMatrix::from_diagonal(&var))?;
                noisy.simulate(&DVector::zeros(noisy.n_x()), &ref_run.u, &mut rng)
            }
        }
    } else {
        bench.collect(&mut rng)?
    };
    create_out(&cli.out)?;
    let path = cli.out.join("data.csv");
    save_trajectory(&path, &run.measured()?)?;
    write_series(&cli.out.join("states.csv"), &[("x", &run.states)])?;
    let mut text = format!(
        "system {system}: {} samples, {} inputs, {} outputs, excitation U[{}, {}]\n",
        run.u.ncols(),
        run.u.nrows(),
        run.y.nrows(),
        bench.excitation.0,
        bench.excitation.1
    );
    if !noiseless && run.y != run.y_true {
        let _ = writeln!(text, "measured output SNR {:.2} dB", measured_snr(&run.y_true, &run.y));
    }
    print!("{text}");
    write_manifest(cli, &cfg, &["data.csv", "states.csv"])
}

fn load_data(path: &Path, res: &Resolved) -> Result<TrajectoryData> {
    load_trajectory(path, res.spec.m(), res.spec.p())
}

/// QP for the config, with equilibrium blocks fixed to `(u_s, y_s)`.
fn build_qp(res: &Resolved, data: &TrajectoryData) -> Result<(CompactQP, HankelView)> {
    let hv = HankelView::from_data(data, res.spec.horizon, res.spec.order)?;
    let mut qp = build(res.variant, &res.spec, &hv)?;
    if qp.layout.contains(ParamBlock::TerminalInputs) {
        qp = qp.freeze_terminal(&res.spec.u_s, &res.spec.y_s)?;
    }
    Ok((qp, hv))
}

fn synthesis_report(law: &ExplicitLaw, qp: &CompactQP) -> String {
    let s = &law.stats;
    let mut t = String::new();
    let _ = writeln!(t, "variant            {}", law.variant.as_str());
    let _ = writeln!(t, "decision size      {}", qp.n_d());
    let _ = writeln!(t, "parameter size     {}", qp.n_chi());
    let _ = writeln!(t, "equality rows      {} ({} dependent)", qp.n_eq(), s.dependent_equalities);
    let _ = writeln!(t, "inequality rows    {}", qp.n_in());
    let _ = writeln!(t, "active-set cap     {}", s.max_active);
    let _ = writeln!(t, "candidates         {}", s.candidates);
    let _ = writeln!(t, "LICQ skips         {}", s.licq_failures);
    let _ = writeln!(t, "empty (pruned)     {}", s.empty_pruned);
    let _ = writeln!(t, "duplicates         {}", s.duplicates);
    let _ = writeln!(t, "regions            {}", law.regions.len());
    for (i, r) in law.regions.iter().enumerate() {
        let _ = writeln!(t, "  region {i}: active {:?}, {} halfspaces", r.active_set, r.region_bound.len());
    }
    let _ = writeln!(t, "QP fingerprint     {}", law.qp_fingerprint);
    t
}

fn cmd_synthesize(cli: &Cli, data_path: &Path) -> Result<()> {
    let cfg = load_config(cli, None)?;
    let res = cfg.resolve()?;
    let data = load_data(data_path, &res)?;
    let order = res.spec.horizon + 2 * res.spec.order;
    let rep = check_persistency(&data.u, order);
    if !rep.exciting {
        return Err(Error::Persistency {
            order,
            achieved: rep.rank,
            required: rep.required,
        });
    }
    let (qp, _) = build_qp(&res, &data)?;
    let law = synthesize(&qp, res.max_active)?;
    create_out(&cli.out)?;
    export_law(&law, cli.out.join("law.json"))?;
    let report = synthesis_report(&law, &qp);
    print!("{report}");
    write_file(&cli.out.join("synthesis.txt"), &report)?;
    write_manifest(cli, &cfg, &["law.json", "synthesis.txt"])
}

/// Consecutive `n`-sample windows of the data as parameter vectors.
fn data_windows(qp: &CompactQP, data: &TrajectoryData, res: &Resolved) -> Result<Vec<DVector<f64>>> {
    let n = res.spec.order;
    (n..data.len())
        .map(|t| {
            reddpc::problem::assemble_parameter(
                &qp.layout,
                &data.u.columns(t - n, n).into_owned(),
                &data.y.columns(t - n, n).into_owned(),
                &res.spec.u_s,
                &res.spec.y_s,
            )
        })
        .collect()
}

#[derive(Default)]
struct Report {
    text: String,
    warnings: usize,
}

impl Report {
    fn line(&mut self, name: &str, value: f64, bound: f64) {
        let ok = value <= bound;
        if !ok {
            self.warnings += 1;
        }
        let _ = writeln!(self.text, "{name:<44} {value:>12.3e}  (bound {bound:.0e}) {}", if ok { "ok" } else { "WARN" });
    }
}

fn cmd_verify(cli: &Cli, data_path: &Path, law_path: Option<&Path>) -> Result<()> {
    const TOL: f64 = 1e-6;
    let cfg = load_config(cli, None)?;
    let res = cfg.resolve()?;
    let data = load_data(data_path, &res)?;
    let (qp, _) = build_qp(&res, &data)?;
    let law = match law_path {
        Some(p) => {
            let law = import_law(p)?;
            let computed = qp.fingerprint();
            if law.qp_fingerprint != computed {
                return Err(Error::Fingerprint {
                    expected: law.qp_fingerprint,
                    computed,
                });
            }
            law
        }
        None => synthesize(&qp, res.max_active)?,
    };

    let mut rep = Report::default();

    // explicit law against the online solver, on the recorded windows
    let ctl = ImplicitController::new(qp.clone())?;
    let mut gap = 0.0f64;
    let mut kkt = 0.0f64;
    let mut infeasible = 0usize;
    let windows = data_windows(&qp, &data, &res)?;
    for chi in &windows {
        let sol = match ctl.solve(chi) {
            Ok(s) => s,
            Err(Error::Infeasible(_)) => {
                infeasible += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let u_i = reddpc::oracle::first_input(&qp, &sol.alpha);
        let (u_e, _) = law.evaluate(chi)?;
        gap = gap.max((&u_e - &u_i).amax() / (1.0 + u_i.amax()));
        let r = DenseQp::at(&qp, chi)?.kkt_residual(&sol);
        kkt = kkt.max(r.stationarity.max(r.primal).max(r.dual).max(r.complementarity));
    }
    let _ = writeln!(rep.text, "law: {} regions, QP fingerprint {}", law.regions.len(), law.qp_fingerprint);
    let _ = writeln!(rep.text, "windows checked: {} ({} infeasible skipped)", windows.len() - infeasible, infeasible);
    rep.line("explicit vs implicit input gap (relative)", gap, TOL);
    rep.line("oracle KKT residual", kkt, 1e-8);
    let law_ok = gap <= TOL;

    // equivalence identities
    let (l, n) = (res.spec.horizon, res.spec.order);
    let measured_state = res
        .bench
        .as_ref()
        .is_some_and(|b| b.system.c == DMatrix::<f64>::identity(b.system.n_x(), b.system.n_x()));
    let input_set = res.spec.input_set.clone();
    let terminal = res
        .spec
        .terminal_weight
        .clone()
        .unwrap_or_else(|| DMatrix::zeros(n * (res.spec.m() + res.spec.p()), n * (res.spec.m() + res.spec.p())));
    let hankel_w = Weights {
        q: res.spec.q.clone(),
        r: res.spec.r.clone(),
        p: terminal,
    };
    let chis: Vec<DVector<f64>> = (n..data.len())
        .step_by(5)
        .map(|t| DVector::from_iterator(n * (res.spec.m() + res.spec.p()), data.u.columns(t - n, n).iter().chain(data.y.columns(t - n, n).iter()).copied()))
        .collect();
    let checks = |rep: &mut Report, kind: StateKind, label: &str, weights: &Weights| -> Result<()> {
        match verify_model_equivalence(&data, l, n, kind, 50, cli.seed) {
            Ok(v) => rep.line(&format!("{label}: predictor propagation"), v, 1e-8),
            Err(e) => {
                let _ = writeln!(rep.text, "{label}: predictor propagation skipped ({e})");
            }
        }
        match verify_problem_equivalence(&data, l, n, kind, weights, &input_set, 1e-8, &chis) {
            Ok(v) => rep.line(&format!("{label}: first-input gap at rho=1e-8"), v, 1e-6),
            Err(e) => {
                let _ = writeln!(rep.text, "{label}: problem comparison skipped ({e})");
            }
        }
        Ok(())
    };
    checks(&mut rep, StateKind::NonMinimal, "window state", &hankel_w)?;
    if measured_state {
        let sys = &res.bench.as_ref().expect("checked above").system;
        let state_w = Weights {
            q: res.spec.q.clone(),
            r: res.spec.r.clone(),
            p: lyapunov_terminal_weight(&sys.a, &res.spec.q)?,
        };
        checks(&mut rep, StateKind::Measured, "measured state", &state_w)?;
        match initial_condition_residual(&data, n) {
            Ok(v) => rep.line("measured state: terminal map on data windows", v, 1e-8),
            Err(e) => {
                let _ = writeln!(rep.text, "measured state: terminal map skipped ({e})");
            }
        }
    }
    if rep.warnings > 0 {
        let _ = writeln!(rep.text, "{} check(s) above their bound (expected for noisy data)", rep.warnings);
    }
    print!("{}", rep.text);
    create_out(&cli.out)?;
    write_file(&cli.out.join("verify.txt"), &rep.text)?;
    write_manifest(cli, &cfg, &["verify.txt"])?;
    if !law_ok {
        return Err(Error::Verification(format!(
            "explicit law deviates from the online solution by {gap:.3e}"
        )));
    }
    Ok(())
}

fn parse_levels(levels: &[String]) -> Result<Vec<Option<f64>>> {
    levels
        .iter()
        .map(|s| match s.trim() {
            "inf" | "noiseless" => Ok(None),
            v => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad SNR level `{v}`"))),
        })
        .collect()
}

fn level_name(l: Option<f64>) -> String {
    l.map_or("noiseless".to_string(), |v| format!("{v}"))
}

fn cmd_benchmark(cli: &Cli, name: BenchName, levels: Option<&[String]>, runs: Option<usize>) -> Result<()> {
    let default_system = match name {
        BenchName::Siso | BenchName::Montecarlo => "siso",
        BenchName::FourTank | BenchName::Timing => "four_tank",
    };
    let mut cfg = load_config(cli, Some(default_system))?;
    if let Some(r) = runs {
        cfg.simulation.runs = Some(r);
    }
    let res = cfg.resolve()?;
    let bench = res.bench()?;
    create_out(&cli.out)?;
    let mut outputs = vec!["summary.txt", "summary.json"];
    let (text, summary) = match name {
        BenchName::Siso => {
            let protocol = res.siso_protocol();
            let mut rng = stream(cli.seed, 0);
            let (train, cv, plant) = siso_datasets(bench, protocol.snr_db, &mut rng)?;
            let outcome = cross_validate_rho(bench, &train.measured()?, &cv, &plant, &protocol, cli.seed)?;
            let (_, law) = synthesize_for(bench, &train.measured()?, outcome.rho, res.max_active)?;
            let (_, reference) = synthesize_for(bench, &train.noiseless()?, protocol.reference_rho, res.max_active)?;
            let clean = bench.system.noiseless();
            let init = InitialWindow::unforced(&clean, protocol.test_state.clone(), bench.spec.order)?;
            let go = |l: &ExplicitLaw| run_closed_loop(&clean, l, protocol.test_steps, &init, &bench.spec.u_s, &bench.spec.y_s, &mut stream(0, 0));
            let (a, b) = (go(&law)?, go(&reference)?);
            write_series(&cli.out.join("test.csv"), &[("u", &a.u), ("y", &a.y), ("u_ref", &b.u), ("y_ref", &b.y)])?;
            outputs.push("test.csv");
            let err = rmse(&a.y, &b.y)?;
            let mut t = format!("SISO benchmark, SNR {} dB\n", level_name(protocol.snr_db));
            let _ = writeln!(t, "{:>10} {:>14}", "rho", "CV score");
            for c in &outcome.candidates {
                match c.score {
                    Some(s) => {
                        let _ = writeln!(t, "{:>10} {:>14.6}", c.rho, s);
                    }
                    None => {
                        let _ = writeln!(t, "{:>10} {:>14}  {}", c.rho, "failed", c.failure.as_deref().unwrap_or(""));
                    }
                }
            }
            let _ = writeln!(t, "selected rho      {}", outcome.rho);
            let _ = writeln!(t, "regions           {}", law.regions.len());
            let _ = writeln!(t, "RMSE vs reference {:.4e}", err);
            (t, json!({"snr_db": protocol.snr_db, "cv": outcome, "regions": law.regions.len(), "rmse": err}))
        }
        BenchName::Montecarlo => {
            let runs = res.simulation.runs.unwrap_or(30);
            let levels = match levels {
                Some(l) => parse_levels(l)?,
                None => match &res.simulation.levels {
                    Some(l) => l.iter().map(|&v| if v.is_infinite() { None } else { Some(v) }).collect(),
                    None => vec![Some(40.0), Some(30.0), Some(20.0), Some(10.0)],
                },
            };
            let table = monte_carlo_study(bench, &levels, runs, cli.seed, &res.siso_protocol())?;
            write_levels_csv(&cli.out.join("montecarlo.csv"), &table)?;
            outputs.push("montecarlo.csv");
            let mut t = format!("SNR vs regularization and RMSE ({runs} runs per level)\n");
            let _ = writeln!(t, "{:>10} {:>18} {:>26} {:>8}", "SNR [dB]", "rho (mean±std)", "RMSE (mean±std)", "failed");
            for l in &table {
                let _ = writeln!(
                    t,
                    "{:>10} {:>8.2} ± {:<7.2} {:>11.3e} ± {:<11.3e} {:>8}",
                    level_name(l.snr_db),
                    l.rho_mean,
                    l.rho_std,
                    l.rmse_mean,
                    l.rmse_std,
                    l.failures.len()
                );
            }
            (t, serde_json::to_value(&table)?)
        }
        BenchName::FourTank => {
            let protocol = res.four_tank_protocol()?;
            let trial = four_tank_run(bench, &protocol, cli.seed, 0, true)?;
            let imp = trial.implicit.as_ref().expect("comparison requested");
            write_series(
                &cli.out.join("closed_loop.csv"),
                &[("u", &trial.explicit.u), ("y", &trial.explicit.y), ("u_implicit", &imp.u), ("y_implicit", &imp.y)],
            )?;
            outputs.push("closed_loop.csv");
            let study = four_tank_study(bench, &protocol, cli.seed);
            let mut t = String::from("Four-tank benchmark\n");
            let _ = writeln!(t, "regions                 {}", trial.summary.regions);
            let _ = writeln!(t, "RMSE explicit/implicit  {:.3e}", trial.summary.rmse_ie.unwrap_or(f64::NAN));
            let _ = writeln!(t, "max input gap           {:.3e}", trial.summary.max_input_gap.unwrap_or(f64::NAN));
            let _ = writeln!(t, "final |y - y_s|_inf     {:.3e}", trial.summary.final_error);
            let _ = writeln!(t, "realizations            {}", study.realizations);
            let _ = writeln!(t, "unstable runs           {} ({:.0} %)", study.unstable, 100.0 * study.unstable as f64 / study.realizations.max(1) as f64);
            let _ = writeln!(t, "J (mean ± std, stable)  {:.3} ± {:.3}", study.cost_mean, study.cost_std);
            for f in &study.failures {
                let _ = writeln!(t, "failed: {f}");
            }
            (t, json!({"first": trial.summary, "study": study}))
        }
        BenchName::Timing => {
            let protocol = res.four_tank_protocol()?;
            let trial = four_tank_run(bench, &protocol, cli.seed, 0, false)?;
            let samples = res.simulation.timing_samples.unwrap_or(10_000);
            let (lo, hi) = bench.excitation;
            let mut rng = stream(cli.seed, 1);
            let chis = sample_parameters(&trial.qp.layout, samples, (lo, hi), (lo, hi), &mut rng)?;
            let rep = benchmark_timing(&trial.law, &trial.qp, &chis)?;
            let mut t = format!("Timing over {samples} random parameters (single thread)\n");
            let _ = writeln!(t, "{:>10} {:>14} {:>14} {:>14}", "", "mean [s]", "worst [s]", "storage [kB]");
            let _ = writeln!(t, "{:>10} {:>14.3e} {:>14.3e} {:>14.1}", "explicit", rep.explicit_mean, rep.explicit_worst, rep.law_bytes as f64 / 1024.0);
            let _ = writeln!(t, "{:>10} {:>14.3e} {:>14.3e} {:>14.1}", "implicit", rep.implicit_mean, rep.implicit_worst, rep.qp_bytes as f64 / 1024.0);
            let _ = writeln!(t, "mean speed-up {:.0}x, storage ratio {:.1} %", rep.speedup(), 100.0 * rep.law_bytes as f64 / rep.qp_bytes as f64);
            (t, serde_json::to_value(&rep)?)
        }
    };
    print!("{text}");
    write_file(&cli.out.join("summary.txt"), &text)?;
    write_file(&cli.out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    write_manifest(cli, &cfg, &outputs)
}

fn write_levels_csv(path: &Path, table: &[LevelSummary]) -> Result<()> {
    let mut s = String::from("snr_db,run,rho,rmse\n");
    for l in table {
        for (i, r) in l.results.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{:e}", level_name(l.snr_db), i, r.rho, r.rmse);
        }
    }
    write_file(path, &s)
}
