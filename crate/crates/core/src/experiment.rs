//! Experiment harness behind the `adapd` command-line tool.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{estimate_dual_bound, solve_centralized, ReferenceSolution};
use crate::error::{Error, Result};
use crate::graph::{consensus_matrix, generate_small_world, mixing_matrix, ConsensusMatrix, MixingRule, NetworkGraph};
use crate::metrics::{lagrangian, theorem1_rhs, Metric, RunRecord, TheoremBoundInputs};
use crate::problem::{make_localization_instance, ProblemInstance};
use crate::run::{run_async, run_sync_baseline, RunOptions};
use crate::solver::{Activation, InitialPoint, Schedule, Solver, StepSizes};

pub const INSTANCE_FILE: &str = "instance.adapd";
pub const GRAPH_FILE: &str = "graph.txt";
pub const METADATA_FILE: &str = "metadata.json";

/// Which solvers `run` executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Async,
    Sync,
    Both,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "async" => Ok(Mode::Async),
            "sync" => Ok(Mode::Sync),
            "both" => Ok(Mode::Both),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

/// Fixed dual bound or `auto` (twice the reference multiplier norm, floored at 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DualBound {
    Value(f64),
    Named(AutoBound),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoBound {
    Auto,
}

impl DualBound {
    pub const AUTO: DualBound = DualBound::Named(AutoBound::Auto);
}

impl std::str::FromStr for DualBound {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(DualBound::AUTO);
        }
        s.parse::<f64>()
            .map(DualBound::Value)
            .map_err(|_| Error::InvalidParameter(format!("dual bound must be a number or \"auto\", got {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Uniform,
    Clocks,
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(ActivationKind::Uniform),
            "clocks" => Ok(ActivationKind::Clocks),
            other => Err(Error::InvalidParameter(format!("unknown activation {other:?}"))),
        }
    }
}

/// Named starting configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// n=100, N=50, p=50, 25 extra edges.
    Paper,
    /// n=20, N=10, p=10, 5 extra edges, 10⁵ events.
    Small,
    /// Five agents in the plane, used for the bound check.
    Bound,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "small" => Ok(Preset::Small),
            "bound" => Ok(Preset::Bound),
            other => Err(Error::InvalidParameter(format!("unknown preset {other:?}"))),
        }
    }
}

/// Every knob that affects an experiment's numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub agents: usize,
    pub rows: usize,
    pub noise_std: f64,
    pub instance_seed: u64,
    pub instance_path: Option<PathBuf>,
    /// Defaults to `agents / 2`.
    pub extra_edges: Option<usize>,
    pub graph_seed: u64,
    pub graph_path: Option<PathBuf>,
    pub alpha: f64,
    pub mixing: MixingRule,
    /// Asynchronous events `K`.
    pub iterations: u64,
    /// Synchronous rounds; defaults to `ceil(iterations / agents)` for an equal communication budget.
    pub rounds: Option<u64>,
    pub safety_factor: f64,
    pub dual_bound: DualBound,
    pub solver_seed: u64,
    pub record_every: u64,
    pub mode: Mode,
    pub activation: ActivationKind,
    pub reference_tol: f64,
    pub reference_iters: usize,
    pub timing: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Paper)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = RunConfig {
            n: 100,
            agents: 50,
            rows: 50,
            noise_std: 0.1,
            instance_seed: 1,
            instance_path: None,
            extra_edges: None,
            graph_seed: 2,
            graph_path: None,
            alpha: 1.0,
            mixing: MixingRule::Metropolis,
            iterations: 10_000,
            rounds: None,
            safety_factor: 1.0,
            dual_bound: DualBound::AUTO,
            solver_seed: 3,
            record_every: 100,
            mode: Mode::Both,
            activation: ActivationKind::Uniform,
            reference_tol: 1e-8,
            reference_iters: 2_000,
            timing: false,
            output_dir: PathBuf::from("out"),
        };
        match preset {
            Preset::Paper => base,
            Preset::Small => RunConfig {
                n: 20,
                agents: 10,
                rows: 10,
                iterations: 100_000,
                record_every: 1_000,
                ..base
            },
            Preset::Bound => RunConfig {
                n: 2,
                agents: 5,
                rows: 2,
                iterations: 800,
                record_every: 50,
                mode: Mode::Async,
                ..base
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn extra_edges(&self) -> usize {
        self.extra_edges.unwrap_or(self.agents / 2)
    }

    pub fn rounds(&self) -> u64 {
        self.rounds.unwrap_or_else(|| self.iterations.div_ceil(self.agents.max(1) as u64))
    }

    /// Rejects parameter combinations before anything is written.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.instance_path.is_none() {
            if self.n == 0 || self.agents == 0 || self.rows == 0 {
                return bad("n, agents and rows must be positive".into());
            }
            if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
                return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
            }
        }
        if self.graph_path.is_none() && self.instance_path.is_none() {
            let n = self.agents;
            if n < 3 {
                return bad(format!("small-world graphs need at least 3 agents, got {n}"));
            }
            let available = n * (n - 1) / 2 - n;
            if self.extra_edges() > available {
                return bad(format!(
                    "extra_edges = {} exceeds the {available} available non-cycle pairs",
                    self.extra_edges()
                ));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.iterations == 0 {
            return bad("iterations K must be >= 1".into());
        }
        if self.rounds == Some(0) {
            return bad("rounds must be >= 1".into());
        }
        if !(self.safety_factor > 0.0 && self.safety_factor <= 1.0) {
            return bad(format!("safety_factor must lie in (0, 1], got {}", self.safety_factor));
        }
        if let DualBound::Value(b) = self.dual_bound {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("dual_bound must be >= 0, got {b}"));
            }
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1".into());
        }
        if !(self.reference_tol > 0.0) {
            return bad("reference_tol must be positive".into());
        }
        Ok(())
    }

    fn activation(&self) -> Activation {
        match self.activation {
            ActivationKind::Uniform => Activation::Uniform,
            ActivationKind::Clocks => Activation::ExponentialClocks { rate: 1.0 },
        }
    }
}

/// Instance, graph and consensus matrix of one experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub instance: Arc<ProblemInstance>,
    pub graph: NetworkGraph,
    pub consensus: Arc<ConsensusMatrix>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn build_setup(cfg: &RunConfig) -> Result<Setup> {
    cfg.validate()?;
    let instance = match &cfg.instance_path {
        Some(p) => ProblemInstance::from_container(&read(p)?)?,
        None => make_localization_instance(cfg.n, cfg.agents, cfg.rows, cfg.noise_std, cfg.instance_seed)?,
    };
    let graph = match &cfg.graph_path {
        Some(p) => NetworkGraph::from_edge_list(&read(p)?)?,
        None => {
            let n = instance.num_agents();
            let available = (n * n.saturating_sub(1) / 2).saturating_sub(n);
            generate_small_world(n, cfg.extra_edges().min(available), cfg.graph_seed)?
        }
    };
    if graph.num_agents() != instance.num_agents() {
        return Err(Error::InvalidParameter(format!(
            "graph has {} agents but the instance has {}",
            graph.num_agents(),
            instance.num_agents()
        )));
    }
    let w = mixing_matrix(&graph, cfg.mixing)?;
    let consensus = consensus_matrix(&w, cfg.alpha)?;
    Ok(Setup {
        instance: Arc::new(instance),
        graph,
        consensus: Arc::new(consensus),
    })
}

/// What `generate` wrote.
#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub instance_path: PathBuf,
    pub graph_path: PathBuf,
    pub setup: Setup,
}

impl fmt::Display for GenerateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inst = &self.setup.instance;
        writeln!(
            f,
            "instance: n={} N={} m={} -> {}",
            inst.dim(),
            inst.num_agents(),
            inst.num_constraints(),
            self.instance_path.display()
        )?;
        writeln!(
            f,
            "graph: |E|={} -> {}",
            self.setup.graph.num_edges(),
            self.graph_path.display()
        )?;
        writeln!(f, "{:>6} {:>4} {:>12} {:>12} {:>12} {:>12}", "agent", "deg", "L_f", "C", "L_g", "delta")?;
        for (i, a) in inst.agents().iter().enumerate() {
            writeln!(
                f,
                "{:>6} {:>4} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                i,
                self.setup.graph.degree(i),
                a.objective.lipschitz_grad(),
                a.constraint.lipschitz_value(),
                a.constraint.lipschitz_jac(),
                self.setup.consensus.delta(i)
            )?;
        }
        Ok(())
    }
}

/// Writes the instance container and the edge-list graph into the output directory.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    let setup = build_setup(cfg)?;
    ensure_dir(&cfg.output_dir)?;
    let instance_path = cfg.output_dir.join(INSTANCE_FILE);
    let graph_path = cfg.output_dir.join(GRAPH_FILE);
    write(&instance_path, &setup.instance.to_container())?;
    write(&graph_path, &setup.graph.to_edge_list())?;
    Ok(GenerateSummary {
        instance_path,
        graph_path,
        setup,
    })
}

/// Cache key: instance content plus everything that shapes `V`.
fn reference_key(setup: &Setup, cfg: &RunConfig) -> String {
    let mut h = Sha256::new();
    h.update(setup.instance.content_hash().as_bytes());
    h.update(setup.graph.to_edge_list().as_bytes());
    h.update(format!("{:?}|{}|{}", cfg.mixing, cfg.alpha, cfg.reference_tol).as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

#[derive(Debug, Clone)]
pub struct CachedReference {
    pub solution: ReferenceSolution,
    pub path: PathBuf,
    /// Loaded from disk rather than solved.
    pub cached: bool,
}

/// Loads the cached reference for this setup, or solves and caches it.
pub fn load_or_solve_reference(
    cfg: &RunConfig,
    setup: &Setup,
    log: &mut dyn Write,
) -> Result<CachedReference> {
    ensure_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join(format!("reference-{}.json", reference_key(setup, cfg)));
    if path.exists() {
        let r = ReferenceSolution::from_json(&read(&path)?)?;
        if r.instance_hash == setup.instance.content_hash() {
            let _ = writeln!(log, "reusing cached reference {}", path.display());
            return Ok(CachedReference {
                solution: r,
                path,
                cached: true,
            });
        }
    }
    let _ = writeln!(log, "solving reference (tol {:e})", cfg.reference_tol);
    let r = solve_centralized(&setup.instance, &setup.consensus, cfg.reference_tol, cfg.reference_iters)?;
    write(&path, &r.to_json())?;
    Ok(CachedReference {
        solution: r,
        path,
        cached: false,
    })
}

pub fn resolve_dual_bound(cfg: &RunConfig, reference: &ReferenceSolution) -> Result<f64> {
    match cfg.dual_bound {
        DualBound::Value(b) => Ok(b),
        DualBound::Named(AutoBound::Auto) => estimate_dual_bound(reference, 2.0),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceMeta {
    pub path: PathBuf,
    pub phi_star: f64,
    pub y_norm: f64,
    pub primal_feasibility: f64,
    pub dual_residual: f64,
    pub tol: f64,
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub software: String,
    pub config: RunConfig,
    pub instance_hash: String,
    pub num_edges: usize,
    pub mixing: MixingRule,
    pub dual_bound: f64,
    pub steps: StepSizes,
    pub constants: Vec<[f64; 4]>,
    pub reference: ReferenceMeta,
    pub outputs: Vec<PathBuf>,
    pub baseline_note: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub csv_paths: Vec<PathBuf>,
    pub metadata_path: PathBuf,
    pub records: Vec<RunRecord>,
    pub reference_cached: bool,
}

/// Runs the configured solvers and writes one CSV per mode plus metadata.
pub fn cmd_run(cfg: &RunConfig, log: &mut dyn Write) -> Result<RunSummary> {
    let setup = build_setup(cfg)?;
    let CachedReference {
        solution: reference,
        path: ref_path,
        cached: reference_cached,
    } = load_or_solve_reference(cfg, &setup, log)?;
    let dual_bound = resolve_dual_bound(cfg, &reference)?;
    let steps = StepSizes::compute(&setup.instance, &setup.consensus, dual_bound, cfg.safety_factor)?;
    let init = InitialPoint::zeros(&setup.instance);

    let mut records = Vec::new();
    let mut csv_paths = Vec::new();
    if matches!(cfg.mode, Mode::Async | Mode::Both) {
        let opts = RunOptions {
            iterations: cfg.iterations,
            record_every: cfg.record_every,
            seed: cfg.solver_seed,
            timing: cfg.timing,
        };
        let out = run_async(
            setup.instance.clone(),
            setup.consensus.clone(),
            steps.clone(),
            &init,
            cfg.activation(),
            opts,
            Some(&reference),
        )?;
        let path = cfg.output_dir.join("async.csv");
        write(&path, &out.record.to_csv())?;
        let _ = writeln!(log, "async: {} events, {} communications -> {}", cfg.iterations, out.solver.communications(), path.display());
        csv_paths.push(path);
        records.push(out.record);
    }
    if matches!(cfg.mode, Mode::Sync | Mode::Both) {
        let agents = setup.instance.num_agents() as u64;
        let opts = RunOptions {
            iterations: cfg.rounds(),
            record_every: (cfg.record_every / agents).max(1),
            seed: cfg.solver_seed,
            timing: cfg.timing,
        };
        let out = run_sync_baseline(
            setup.instance.clone(),
            setup.consensus.clone(),
            steps.clone(),
            &init,
            opts,
            Some(&reference),
        )?;
        let path = cfg.output_dir.join("sync.csv");
        write(&path, &out.record.to_csv())?;
        let _ = writeln!(log, "sync: {} rounds, {} communications -> {}", cfg.rounds(), out.solver.communications(), path.display());
        csv_paths.push(path);
        records.push(out.record);
    }

    let metadata = RunMetadata {
        software: format!("adapd {}", env!("CARGO_PKG_VERSION")),
        config: cfg.clone(),
        instance_hash: setup.instance.content_hash(),
        num_edges: setup.graph.num_edges(),
        mixing: cfg.mixing,
        dual_bound,
        constants: setup
            .instance
            .agents()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                [
                    a.objective.lipschitz_grad(),
                    a.constraint.lipschitz_value(),
                    a.constraint.lipschitz_jac(),
                    setup.consensus.delta(i),
                ]
            })
            .collect(),
        steps,
        reference: ReferenceMeta {
            path: ref_path,
            phi_star: reference.phi_star,
            y_norm: reference.y_norm(),
            primal_feasibility: reference.primal_feasibility,
            dual_residual: reference.dual_residual,
            tol: reference.tol,
        },
        outputs: csv_paths.clone(),
        baseline_note: "sync.csv is a synchronous counterpart (DPDA-S-like), not the published DPDA-S".into(),
    };
    let metadata_path = cfg.output_dir.join(METADATA_FILE);
    write(
        &metadata_path,
        &serde_json::to_string_pretty(&metadata).expect("metadata is always serializable"),
    )?;
    Ok(RunSummary {
        csv_paths,
        metadata_path,
        records,
        reference_cached,
    })
}

/// Reads the config recorded in a run's metadata file.
pub fn config_from_metadata(path: &Path) -> Result<RunConfig> {
    let meta: RunMetadata =
        serde_json::from_str(&read(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(meta.config)
}

// ---------------------------------------------------------------------------
// Monte Carlo bound check

/// Mean gap against the bound at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub horizon: u64,
    pub mean_gap: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub seeds: u64,
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} {:>14} {:>14} {:>6}", "K", "mean gap", "bound", "ok")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>8} {:>14.6e} {:>14.6e} {:>6}",
                r.horizon,
                r.mean_gap,
                r.rhs * r.slack,
                if r.pass { "pass" } else { "FAIL" }
            )?;
        }
        write!(f, "seeds: {}", self.seeds)
    }
}

/// Sample-mean Lagrangian gap over `seeds` independent activation sequences,
/// compared against the bound with the reference saddle point as comparison point.
pub fn monte_carlo_bound(
    setup: &Setup,
    steps: &StepSizes,
    reference: &ReferenceSolution,
    seeds: u64,
    horizons: &[u64],
    slack: f64,
) -> Result<BoundReport> {
    if seeds < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 seeds, got {seeds}")));
    }
    let mut horizons = horizons.to_vec();
    horizons.sort_unstable();
    horizons.dedup();
    let max_k = *horizons
        .last()
        .ok_or_else(|| Error::InvalidParameter("no horizons given".into()))?;
    if horizons[0] == 0 {
        return Err(Error::InvalidParameter("horizons must be >= 1".into()));
    }
    let instance = &setup.instance;
    let consensus = &setup.consensus;
    let init = InitialPoint::zeros(instance);
    let comparison = InitialPoint {
        x: reference.stacked_x(instance.num_agents()),
        y: reference.y_star.clone(),
        lambda: reference.lambda_star.clone(),
    };
    let l_star_x = |x: &[f64]| lagrangian(instance, consensus, x, &comparison.y, &comparison.lambda);

    let mut per_seed: Vec<(u64, Vec<f64>)> = (0..seeds)
        .into_par_iter()
        .map(|seed| -> Result<(u64, Vec<f64>)> {
            let mut solver = Solver::new(
                instance.clone(),
                consensus.clone(),
                steps.clone(),
                Schedule::ASYNC,
                max_k,
                &init,
                seed,
            )?;
            let mut gaps = Vec::with_capacity(horizons.len());
            for &k in &horizons {
                while solver.iteration() < k {
                    solver.step()?;
                }
                let p = solver.ergodic_now()?;
                gaps.push(l_star_x(&p.x)? - lagrangian(instance, consensus, &comparison.x, &p.y, &p.lambda)?);
            }
            Ok((seed, gaps))
        })
        .collect::<Result<Vec<_>>>()?;
    per_seed.sort_by_key(|(s, _)| *s);

    let rows = horizons
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let mean_gap = per_seed.iter().map(|(_, g)| g[j]).sum::<f64>() / seeds as f64;
            let inputs = TheoremBoundInputs::new(instance, consensus, steps, init.clone(), comparison.clone(), k)?;
            let rhs = theorem1_rhs(&inputs, instance, consensus)?;
            Ok(BoundRow {
                horizon: k,
                mean_gap,
                rhs,
                slack,
                pass: mean_gap <= rhs * slack,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport { seeds, rows })
}

/// Comparison point for the bound check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparisonPoint {
    Oracle,
    Initial,
}

/// Runs the Monte Carlo bound check on the configured instance.
pub fn cmd_check_bound(
    cfg: &RunConfig,
    seeds: u64,
    horizons: &[u64],
    comparison: ComparisonPoint,
    log: &mut dyn Write,
) -> Result<BoundReport> {
    if seeds < 30 {
        return Err(Error::InvalidParameter(format!("check-bound needs at least 30 seeds, got {seeds}")));
    }
    if comparison == ComparisonPoint::Initial {
        let _ = writeln!(
            log,
            "warning: comparing against the initial point makes the bound degenerate; use the oracle point"
        );
        return Err(Error::InvalidParameter("comparison point must be the oracle saddle point".into()));
    }
    let setup = build_setup(cfg)?;
    let reference = load_or_solve_reference(cfg, &setup, log)?.solution;
    let dual_bound = resolve_dual_bound(cfg, &reference)?;
    let steps = StepSizes::compute(&setup.instance, &setup.consensus, dual_bound, cfg.safety_factor)?;
    monte_carlo_bound(&setup, &steps, &reference, seeds, horizons, 1.1)
}

// ---------------------------------------------------------------------------
// Plotting

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Log-log SVG of one metric against communications, one polyline per record.
pub fn render_svg(title: &str, records: &[RunRecord], metric: Metric) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let series: Vec<Vec<(f64, f64)>> = records
        .iter()
        .map(|r| {
            r.rows
                .iter()
                .map(|row| (row.comms as f64, row.get(metric)))
                .filter(|(c, v)| *c > 0.0 && *v > 0.0 && v.is_finite())
                .map(|(c, v)| (c.log10(), v.log10()))
                .collect()
        })
        .collect();
    let all = series.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let (x0, x1) = (x0.floor(), x1.ceil().max(x0.floor() + 1.0));
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        w / 2.0,
        escape(title)
    ));
    svg.push_str(&format!(
        "<rect x=\"{left}\" y=\"{top}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\"/>\n",
        w - left - right,
        h - top - bottom
    ));
    for d in (x0 as i64)..=(x1 as i64) {
        let x = px(d as f64);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{top}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">1e{d}</text>\n",
            h - bottom,
            h - bottom + 16.0
        ));
    }
    for d in (y0 as i64)..=(y1 as i64) {
        let y = py(d as f64);
        svg.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">1e{d}</text>\n",
            w - right,
            left - 6.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">communications</text>\n",
        (left + w - right) / 2.0,
        h - 12.0
    ));
    for (idx, (pts, rec)) in series.iter().zip(records).enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        let ly = top + 16.0 + 18.0 * idx as f64;
        let lx = w - right - 150.0;
        svg.push_str(&format!(
            "<g class=\"legend\"><line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\
             <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}</text></g>\n",
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&rec.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Reads canonical CSVs and writes `suboptimality.svg`, `infeasibility.svg`
/// and `consensus.svg` into `out_dir`. Nothing is written if any input is malformed.
pub fn cmd_plot(csv_paths: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if csv_paths.is_empty() {
        return Err(Error::InvalidParameter("plot needs at least one CSV".into()));
    }
    let records = csv_paths
        .iter()
        .map(|p| {
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            RunRecord::from_csv(&label, &read(p)?).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(out_dir)?;
    let charts = [
        ("suboptimality", "Suboptimality vs communications", Metric::Subopt),
        ("infeasibility", "Infeasibility vs communications", Metric::Infeas),
        ("consensus", "Consensus violation vs communications", Metric::Consensus),
    ];
    let mut written = Vec::new();
    for (stem, title, metric) in charts {
        let path = out_dir.join(format!("{stem}.svg"));
        write(&path, &render_svg(title, &records, metric))?;
        written.push(path);
    }
    Ok(written)
}
