//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

mod common;

use std::fs;
use std::sync::Arc;
use std::time::{Duration, Instant};

use adapd::baseline::{estimate_dual_bound, solve_centralized};
use adapd::experiment::{build_setup, cmd_generate, cmd_run, monte_carlo_bound, Mode, Preset, RunConfig};
use adapd::metrics::{rate_fit_rows, Metric, RunRecord};
use adapd::problem::make_localization_instance;
use adapd::run::{run_async, RunOptions};
use adapd::solver::{Activation, InitialPoint, Schedule, Solver, StepSizes};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn check(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = out.pass && in_time;
    println!(
        "[{}] criterion {id} ({name}): {}; {:.2} s of {} s budget{}",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { " (over budget)" }
    );
    pass
}

fn n1_reduction() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let inst = Arc::new(make_localization_instance(3, 1, 1, 0.1, 100 + seed).unwrap());
        let (_, cons) = metropolis_setup(1, 0, 0);
        let steps = StepSizes::compute(&inst, &cons, 2.0, 1.0).unwrap();
        let init = InitialPoint::zeros(&inst);
        let oracle = single_agent_apd(&inst, steps.tau[0], steps.sigma[0], &init.x, 200);
        let mut solver = Solver::new(inst.clone(), cons.clone(), steps, Schedule::ASYNC, 200, &init, seed).unwrap();
        for (x, y) in &oracle {
            solver.step().unwrap();
            let a = &solver.agents()[0];
            for (p, q) in a.x.iter().zip(x).chain(a.y.iter().zip(y)) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    outcome(worst <= 1e-10, format!("max coordinate deviation {worst:.3e} (tol 1e-10)"))
}

fn expected_gap_bound() -> Outcome {
    let cfg = RunConfig::preset(Preset::Bound);
    let setup = build_setup(&cfg).unwrap();
    let reference = solve_centralized(&setup.instance, &setup.consensus, 1e-10, 5_000).unwrap();
    let b = estimate_dual_bound(&reference, 2.0).unwrap();
    let steps = StepSizes::compute(&setup.instance, &setup.consensus, b, 1.0).unwrap();
    let report = monte_carlo_bound(&setup, &steps, &reference, 200, &[50, 200, 800], 1.1).unwrap();
    let detail = report
        .rows
        .iter()
        .map(|r| format!("K={} gap {:.4e} <= {:.4e}", r.horizon, r.mean_gap, r.rhs * r.slack))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(report.all_pass(), detail)
}

fn rate_check() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::preset(Preset::Small);
    cfg.mode = Mode::Async;
    cfg.output_dir = dir.path().to_path_buf();
    let summary = cmd_run(&cfg, &mut std::io::sink()).unwrap();
    let record = RunRecord::from_csv("async", &fs::read_to_string(&summary.csv_paths[0]).unwrap()).unwrap();
    let slope = |m| rate_fit_rows(&record.rows, m, 1e3, 1e5);
    let in_band = |s: &adapd::Result<f64>| matches!(s, Ok(v) if (-1.5..=-0.6).contains(v));
    let (sub, inf) = (slope(Metric::Subopt), slope(Metric::Infeas));
    let at = |k: u64| record.rows.iter().find(|r| r.k == k).map(|r| r.consensus).unwrap();
    let ratio = at(100_000) / at(1_000);
    let fmt = |s: &adapd::Result<f64>| match s {
        Ok(v) => format!("{v:.3}"),
        Err(e) => format!("n/a ({e})"),
    };
    let zero_from = record.rows.iter().find(|r| r.infeas == 0.0).map(|r| r.k);
    outcome(
        in_band(&sub) && in_band(&inf) && ratio <= 0.01,
        format!(
            "subopt slope {}, infeas slope {}{}, consensus ratio {:.4} (<= 0.01)",
            fmt(&sub),
            fmt(&inf),
            zero_from.map(|k| format!(" [infeas exactly 0 from k={k}]")).unwrap_or_default(),
            ratio
        ),
    )
}

fn derivative_checks() -> Outcome {
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut rng = 0x9e37_79b9_7f4a_7c15u64;
    let mut unit = move || {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        (rng >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    for seed in 0..20u64 {
        let n = 1 + (seed as usize % 6);
        let inst = make_localization_instance(n, 1 + seed as usize % 4, 1 + seed as usize % 5, 0.1, 500 + seed).unwrap();
        for (i, a) in inst.agents().iter().enumerate() {
            for _ in 0..20 {
                let x: Vec<f64> = (0..n).map(|_| unit()).collect();
                let fd = fd_gradient(|p| a.objective.value(p), &x);
                worst = worst.max(rel_err(&a.objective.gradient(&x), &fd));
                let jac = a.constraint.jacobian(&x);
                for r in 0..a.constraint.num_rows() {
                    let fd = fd_gradient(|p| a.constraint.value(p)[r], &x);
                    let row: Vec<f64> = (0..n).map(|c| jac[(r, c)]).collect();
                    worst = worst.max(rel_err(&row, &fd));
                }
                checks += 1;
                let _ = i;
            }
        }
    }
    outcome(worst <= 1e-5, format!("{checks} points, worst relative error {worst:.3e} (tol 1e-5)"))
}

fn structural() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        output_dir: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let generated = cmd_generate(&cfg).unwrap();
    let setup = &generated.setup;
    let inst = &setup.instance;
    let g = &setup.graph;
    let n_agents = inst.num_agents();
    let cycle = (0..n_agents).all(|i| g.neighbors(i).contains(&((i + 1) % n_agents)));
    let shape_ok = inst.dim() == 100
        && n_agents == 50
        && inst.agents().iter().all(|a| a.constraint.rows().iter().all(|e| e.a().nrows() == 50))
        && cycle
        && g.num_edges() == 75;

    let reference = solve_centralized(inst, &setup.consensus, cfg.reference_tol, cfg.reference_iters).unwrap();
    let b = estimate_dual_bound(&reference, 2.0).unwrap();
    let steps = StepSizes::compute(inst, &setup.consensus, b, 1.0).unwrap();
    let init = InitialPoint::zeros(inst);
    let mut violations = 0usize;
    for schedule in [Schedule::ASYNC, Schedule::Sync] {
        let mut solver = Solver::new(inst.clone(), setup.consensus.clone(), steps.clone(), schedule, 10_000, &init, 3)
            .unwrap();
        let mut digests: Vec<u64> = (0..n_agents).map(|i| solver.agent_digest(i)).collect();
        while !solver.is_finished() {
            let report = solver.step().unwrap();
            if solver.check_invariants().is_err() {
                violations += 1;
            }
            if let adapd::solver::StepReport::Awake(awake) = report {
                for (j, d) in digests.iter_mut().enumerate() {
                    let now = solver.agent_digest(j);
                    if j != awake && now != *d {
                        violations += 1;
                    }
                    *d = now;
                }
            }
        }
    }
    outcome(
        shape_ok && violations == 0,
        format!(
            "n={} N={} p=50 cycle={} |E|={}; 10^4 events and 10^4 rounds, {violations} invariant violations",
            inst.dim(),
            n_agents,
            cycle,
            g.num_edges()
        ),
    )
}

fn communication_accounting() -> Outcome {
    let inst = Arc::new(make_localization_instance(4, 7, 3, 0.1, 11).unwrap());
    let (_, cons) = metropolis_setup(7, 3, 12);
    let steps = StepSizes::compute(&inst, &cons, 2.0, 1.0).unwrap();
    let init = InitialPoint::zeros(&inst);
    let mut ok = true;
    let mut detail = Vec::new();
    for k in [1u64, 13, 250] {
        let a = run_async(inst.clone(), cons.clone(), steps.clone(), &init, Activation::Uniform, RunOptions::new(k, 1, 5), None)
            .unwrap();
        let s = adapd::run::run_sync_baseline(inst.clone(), cons.clone(), steps.clone(), &init, RunOptions::new(k, 1, 5), None)
            .unwrap();
        ok &= a.solver.communications() == k
            && a.record.rows.iter().all(|r| r.comms == r.k)
            && s.solver.communications() == 7 * k
            && s.record.rows.iter().all(|r| r.comms == 7 * r.k);
        detail.push(format!("K={k}: async {} sync {}", a.solver.communications(), s.solver.communications()));
    }
    outcome(ok, detail.join(", "))
}

fn oracle_certification() -> Outcome {
    let mut worst_refined = 0.0f64;
    let mut worst_grid_below = 0.0f64;
    for seed in 0..10u64 {
        let (n, agents) = if seed % 3 == 0 { (1, 2) } else { (2, 3) };
        let inst = make_localization_instance(n, agents, 2, 0.1, 900 + seed).unwrap();
        let (_, cons) = metropolis_setup(agents, 0, 0);
        let r = solve_centralized(&inst, &cons, 1e-10, 5_000).unwrap();
        let (coarse, _) = grid_search(&inst, -1.0, 1.0, 1e-3).expect("feasible grid point");
        let (fine, _) = refined_grid_search(&inst, 1e-3, 1e-10).unwrap();
        worst_refined = worst_refined.max((r.phi_star - fine).abs());
        worst_grid_below = worst_grid_below.max(r.phi_star - coarse);
    }
    outcome(
        worst_refined <= 1e-4 && worst_grid_below <= 1e-4,
        format!(
            "max |phi* - refined grid| {worst_refined:.3e}, max (phi* - grid@1e-3) {worst_grid_below:.3e} (tol 1e-4)"
        ),
    )
}

fn determinism() -> Outcome {
    let mut cfg = RunConfig::preset(Preset::Small);
    cfg.iterations = 5_000;
    cfg.record_every = 250;
    let mut outputs = Vec::new();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        cfg.output_dir = d.path().to_path_buf();
        let s = cmd_run(&cfg, &mut std::io::sink()).unwrap();
        outputs.push(s.csv_paths.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>());
    }
    let csv_equal = outputs[0] == outputs[1];

    let setup = build_setup(&cfg).unwrap();
    let steps = StepSizes::compute(&setup.instance, &setup.consensus, 3.0, 1.0).unwrap();
    let init = InitialPoint::zeros(&setup.instance);
    let mut bit_exact = true;
    for schedule in [
        Schedule::ASYNC,
        Schedule::Async {
            activation: Activation::ExponentialClocks { rate: 1.0 },
        },
        Schedule::Sync,
    ] {
        let make = || Solver::new(setup.instance.clone(), setup.consensus.clone(), steps.clone(), schedule, 600, &init, 77).unwrap();
        let mut straight = make();
        while !straight.is_finished() {
            straight.step().unwrap();
        }
        let mut first = make();
        for _ in 0..237 {
            first.step().unwrap();
        }
        let saved = first.checkpoint().to_json();
        drop(first);
        let ckpt = adapd::solver::Checkpoint::from_json(&saved).unwrap();
        let mut resumed = Solver::restore(setup.instance.clone(), setup.consensus.clone(), ckpt).unwrap();
        while !resumed.is_finished() {
            resumed.step().unwrap();
        }
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        let (a, b) = (straight.finalize().unwrap(), resumed.finalize().unwrap());
        bit_exact &= straight.stacked() == resumed.stacked()
            && bits(a.x) == bits(b.x)
            && bits(a.y) == bits(b.y)
            && bits(a.lambda) == bits(b.lambda);
    }
    outcome(
        csv_equal && bit_exact,
        format!("CSVs byte-identical: {csv_equal}; checkpoint resume bit-exact: {bit_exact}"),
    )
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let results = [
        check(1, "single-agent reduction", secs(1), n1_reduction),
        check(2, "expected-gap bound", secs(120), expected_gap_bound),
        check(3, "rates on the small preset", secs(300), rate_check),
        check(4, "derivatives", secs(10), derivative_checks),
        check(5, "paper-scale structure", secs(600), structural),
        check(6, "communication accounting", secs(60), communication_accounting),
        check(7, "reference against grid search", secs(60), oracle_certification),
        check(8, "determinism", secs(120), determinism),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, p)| !**p).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
