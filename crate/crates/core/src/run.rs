//! Run drivers: iterate a [`Solver`] to its horizon and record metric rows.

use std::sync::Arc;
use std::time::Instant;

use crate::baseline::ReferenceSolution;
use crate::error::{Error, Result};
use crate::graph::ConsensusMatrix;
use crate::metrics::{corollary_metrics, infeasibility, MetricsRow, RunRecord};
use crate::problem::ProblemInstance;
use crate::solver::{Activation, ErgodicPoint, InitialPoint, Schedule, Solver, StepSizes};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Events (asynchronous) or rounds (synchronous).
    pub iterations: u64,
    /// Record a row whenever `k` is a multiple of this, and at the horizon.
    pub record_every: u64,
    pub seed: u64,
    /// Fill the `wallclock_s` column; off keeps output byte-reproducible.
    pub timing: bool,
}

impl RunOptions {
    pub fn new(iterations: u64, record_every: u64, seed: u64) -> Self {
        RunOptions {
            iterations,
            record_every,
            seed,
            timing: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub solver: Solver,
    pub ergodic: ErgodicPoint,
    pub record: RunRecord,
}

/// Metric row at `ergodic`; without a reference, suboptimality and gap are NaN.
pub fn metrics_row(
    instance: &ProblemInstance,
    consensus: &ConsensusMatrix,
    ergodic: &ErgodicPoint,
    reference: Option<&ReferenceSolution>,
) -> Result<MetricsRow> {
    match reference {
        Some(r) => corollary_metrics(instance, consensus, ergodic, r),
        None => {
            let vx = consensus.apply_stacked(&ergodic.x, instance.dim());
            Ok(MetricsRow {
                k: ergodic.horizon,
                comms: 0,
                subopt: f64::NAN,
                infeas: infeasibility(instance, &ergodic.x)?,
                consensus: vx.iter().map(|v| v * v).sum::<f64>().sqrt(),
                gap: f64::NAN,
                wallclock_s: 0.0,
            })
        }
    }
}

/// Steps `solver` until its horizon, recording rows on the way.
pub fn drive(
    solver: &mut Solver,
    record_every: u64,
    timing: bool,
    reference: Option<&ReferenceSolution>,
) -> Result<RunRecord> {
    if record_every == 0 {
        return Err(Error::InvalidParameter("record_every must be >= 1".into()));
    }
    let start = Instant::now();
    let mut rows = Vec::new();
    while !solver.is_finished() {
        solver.step()?;
        let k = solver.iteration();
        if k.is_multiple_of(record_every) || k == solver.horizon() {
            let ergodic = solver.ergodic_now()?;
            let mut row = metrics_row(solver.instance(), solver.consensus(), &ergodic, reference)?;
            row.comms = solver.communications();
            if timing {
                row.wallclock_s = start.elapsed().as_secs_f64();
            }
            rows.push(row);
        }
    }
    Ok(RunRecord {
        label: solver.schedule().label().to_string(),
        rows,
    })
}

fn run_with(
    instance: Arc<ProblemInstance>,
    consensus: Arc<ConsensusMatrix>,
    steps: StepSizes,
    init: &InitialPoint,
    schedule: Schedule,
    options: RunOptions,
    reference: Option<&ReferenceSolution>,
) -> Result<RunOutcome> {
    let mut solver = Solver::new(instance, consensus, steps, schedule, options.iterations, init, options.seed)?;
    let record = drive(&mut solver, options.record_every, options.timing, reference)?;
    let ergodic = solver.finalize()?;
    Ok(RunOutcome {
        solver,
        ergodic,
        record,
    })
}

/// Runs `options.iterations` asynchronous events.
pub fn run_async(
    instance: Arc<ProblemInstance>,
    consensus: Arc<ConsensusMatrix>,
    steps: StepSizes,
    init: &InitialPoint,
    activation: Activation,
    options: RunOptions,
    reference: Option<&ReferenceSolution>,
) -> Result<RunOutcome> {
    run_with(
        instance,
        consensus,
        steps,
        init,
        Schedule::Async { activation },
        options,
        reference,
    )
}

/// Runs `options.iterations` synchronous rounds; every agent updates per round.
pub fn run_sync_baseline(
    instance: Arc<ProblemInstance>,
    consensus: Arc<ConsensusMatrix>,
    steps: StepSizes,
    init: &InitialPoint,
    options: RunOptions,
    reference: Option<&ReferenceSolution>,
) -> Result<RunOutcome> {
    run_with(instance, consensus, steps, init, Schedule::Sync, options, reference)
}
