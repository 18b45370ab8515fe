//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test --release --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use reddpc::benchmark::{
    benchmark_timing, four_tank_run, four_tank_study, monte_carlo_study, sample_parameters, siso_datasets, synthesize_for,
    FourTankProtocol, SisoProtocol,
};
use reddpc::oracle::{first_input, QpSolver};
use reddpc::rng::stream;
use reddpc::system::builtin_system;

const SEED: u64 = 2024;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

/// Explicit and implicit SISO controllers agree on 1000 sampled parameters.
fn oracle_equivalence() -> Verdict {
    const SAMPLES: usize = 1000;
    const TOL: f64 = 1e-6;
    let start = Instant::now();
    let bench = builtin_system("siso").expect("built-in");
    let (train, _, _) = siso_datasets(&bench, bench.snr_db, &mut stream(SEED, 0)).expect("data");
    let (qp, law) = synthesize_for(&bench, &train.measured().expect("aligned"), bench.spec.rho_alpha, None).expect("law");
    let solver = QpSolver::for_problem(&qp).expect("solver");
    let mut rng = stream(SEED, 1);
    let (mut checked, mut drawn, mut worst) = (0usize, 0usize, 0.0f64);
    while checked < SAMPLES && drawn < 10 * SAMPLES {
        let chi = sample_parameters(&qp.layout, 1, (-2.0, 2.0), (-2.0, 2.0), &mut rng).expect("sampler").remove(0);
        drawn += 1;
        let Ok(sol) = solver.solve_problem(&qp, &chi) else { continue };
        let u_i = first_input(&qp, &sol.alpha);
        let Ok((u_e, _)) = law.evaluate(&chi) else {
            worst = f64::INFINITY;
            checked += 1;
            continue;
        };
        worst = worst.max((&u_e - &u_i).amax() / (1.0 + u_i.amax()));
        checked += 1;
    }
    let elapsed = start.elapsed();
    verdict(
        checked == SAMPLES && worst <= TOL && within(elapsed, 10.0),
        format!(
            "{checked} feasible samples, {} regions, max |u_e - u_i|/(1+|u|) = {worst:.2e} (tol {TOL:.0e}), {:.2} s (limit 10 s)",
            law.regions.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn four_tank_linearity() -> Verdict {
    let start = Instant::now();
    let bench = builtin_system("four_tank").expect("built-in");
    let trial = four_tank_run(&bench, &FourTankProtocol::default(), SEED, 0, true).expect("four-tank run");
    let elapsed = start.elapsed();
    let rmse_ie = trial.summary.rmse_ie.unwrap_or(f64::INFINITY);
    verdict(
        trial.summary.regions == 1 && rmse_ie <= 1e-6 && within(elapsed, 30.0),
        format!(
            "{} region(s), RMSE_IE = {rmse_ie:.2e} (tol 1e-6), max input gap {:.2e}, {:.2} s (limit 30 s)",
            trial.summary.regions,
            trial.summary.max_input_gap.unwrap_or(f64::NAN),
            elapsed.as_secs_f64()
        ),
    )
}

fn four_tank_regulation() -> Verdict {
    const TARGET: f64 = 9.00;
    let start = Instant::now();
    let bench = builtin_system("four_tank").expect("built-in");
    let study = four_tank_study(&bench, &FourTankProtocol::default(), SEED);
    let elapsed = start.elapsed();
    let in_band = (study.cost_mean - TARGET).abs() <= 0.15 * TARGET;
    verdict(
        in_band && study.unstable == 0 && study.failures.is_empty() && within(elapsed, 300.0),
        format!(
            "J = {:.3} ± {:.3} over {} realizations (band {:.2}..{:.2}), {} unstable, {} failed, {:.1} s (limit 300 s)",
            study.cost_mean,
            study.cost_std,
            study.realizations,
            0.85 * TARGET,
            1.15 * TARGET,
            study.unstable,
            study.failures.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn timing_separation() -> Verdict {
    const SAMPLES: usize = 10_000;
    let start = Instant::now();
    let bench = builtin_system("four_tank").expect("built-in");
    let trial = four_tank_run(&bench, &FourTankProtocol::default(), SEED, 0, false).expect("four-tank run");
    let chis = sample_parameters(&trial.qp.layout, SAMPLES, (-1.0, 1.0), (-1.0, 1.0), &mut stream(SEED, 2)).expect("sampler");
    let rep = benchmark_timing(&trial.law, &trial.qp, &chis).expect("timing");
    let elapsed = start.elapsed();
    verdict(
        rep.explicit_mean * 100.0 <= rep.implicit_mean && rep.law_bytes < rep.qp_bytes && within(elapsed, 120.0),
        format!(
            "explicit {:.2e} s vs implicit {:.2e} s mean ({:.0}x), storage {} B vs {} B, {:.1} s (limit 120 s)",
            rep.explicit_mean,
            rep.implicit_mean,
            rep.speedup(),
            rep.law_bytes,
            rep.qp_bytes,
            elapsed.as_secs_f64()
        ),
    )
}

fn table_one_bands() -> Verdict {
    let start = Instant::now();
    let bench = builtin_system("siso").expect("built-in");
    let levels = [Some(40.0), Some(30.0), Some(20.0), Some(10.0)];
    let table = monte_carlo_study(&bench, &levels, 30, SEED, &SisoProtocol::default()).expect("study");
    let elapsed = start.elapsed();
    let at20 = &table[2];
    let rmse_ok = (0.005..=0.06).contains(&at20.rmse_mean);
    let rho_ok = (3.0..=10.0).contains(&at20.rho_mean);
    let monotone = table.windows(2).all(|w| w[1].rmse_mean >= w[0].rmse_mean && w[1].rho_mean >= w[0].rho_mean);
    let failures: usize = table.iter().map(|l| l.failures.len()).sum();
    let rows: Vec<String> = table
        .iter()
        .map(|l| format!("{} dB: rho {:.2}±{:.2}, RMSE {:.2e}±{:.1e}", l.snr_db.unwrap_or(f64::INFINITY), l.rho_mean, l.rho_std, l.rmse_mean, l.rmse_std))
        .collect();
    verdict(
        rmse_ok && rho_ok && monotone && failures == 0 && within(elapsed, 600.0),
        format!(
            "{}; monotone {monotone}, {failures} failed runs, {:.1} s (limit 600 s)",
            rows.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

fn equivalence_suite() -> Verdict {
    use common::equivalence::*;
    let m = model_residuals(SEED);
    let ic = initial_residual(SEED);
    let g = problem_gaps(SEED);
    let cost = cost_identity(SEED, 500);
    let model = m.siso_measured.max(m.siso_window).max(m.four_tank_window);
    let problem = g.siso_measured.max(g.siso_window).max(g.four_tank_window);
    verdict(
        model <= MODEL_TOL && ic <= INITIAL_TOL && problem <= PROBLEM_TOL && cost <= COST_TOL,
        format!(
            "model {model:.1e} (tol 1e-8), initial map {ic:.1e} (tol 1e-8), first-input gap at rho 1e-8 {problem:.1e} \
             [measured {:.1e}, window {:.1e}, four-tank {:.1e}] (tol 1e-6), cost identity {cost:.1e} (tol 1e-10)",
            g.siso_measured, g.siso_window, g.four_tank_window
        ),
    )
}

fn property_suites() -> Verdict {
    use common::*;
    const CASES: u64 = 200;
    let mut hankel_fail = 0;
    let (mut min_w, mut kkt_o, mut kkt_e, mut cont, mut enumer) = (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..CASES {
        let s = SEED.wrapping_mul(1_000_003).wrapping_add(seed);
        if check_hankel(s).is_err() {
            hankel_fail += 1;
        }
        min_w = min_w.min(min_hessian_eigenvalue(s));
        let case = explicit_case(s, 20);
        let (o, e) = kkt_residuals(&case);
        kkt_o = kkt_o.max(o);
        kkt_e = kkt_e.max(e);
        cont = cont.max(continuity_gap(&case));
        enumer = enumer.max(enumeration_gap(s));
    }
    verdict(
        hankel_fail == 0 && min_w > 0.0 && kkt_o <= KKT_TOL && kkt_e <= KKT_TOL && cont <= CONTINUITY_TOL && enumer <= ENUMERATION_TOL,
        format!(
            "{CASES} instances: Hankel failures {hankel_fail}, min eig(W) {min_w:.2e}, KKT oracle {kkt_o:.1e} / regions {kkt_e:.1e}, \
             continuity {cont:.1e}, enumeration gap {enumer:.1e} (tol 1e-8)"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("oracle equivalence", oracle_equivalence),
        ("four-tank linearity", four_tank_linearity),
        ("four-tank regulation", four_tank_regulation),
        ("timing separation", timing_separation),
        ("SNR table bands", table_one_bands),
        ("equivalence suite", equivalence_suite),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!("{} criterion {}: {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
