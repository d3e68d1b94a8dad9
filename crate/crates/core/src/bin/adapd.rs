use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adapd::experiment::{
    cmd_check_bound, cmd_generate, cmd_plot, cmd_run, config_from_metadata, ActivationKind, ComparisonPoint,
    DualBound, Mode, Preset, RunConfig,
};
use adapd::graph::MixingRule;
use adapd::Error;

#[derive(Parser)]
#[command(name = "adapd", version, about = "Asynchronous distributed primal-dual experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance and a communication graph.
    Generate(ConfigArgs),
    /// Run the asynchronous solver and/or the synchronous baseline.
    Run(ConfigArgs),
    /// Monte Carlo check of the expected-gap bound.
    CheckBound {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 200)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_value = "50,200,800")]
        horizons: Vec<u64>,
        /// `oracle` or `initial`.
        #[arg(long, default_value = "oracle")]
        comparison: String,
    },
    /// Render SVG convergence plots from run CSVs.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
    /// Reuse the configuration stored in a run's metadata file.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    instance_seed: Option<u64>,
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    extra_edges: Option<usize>,
    #[arg(long)]
    graph_seed: Option<u64>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    mixing: Option<MixingRule>,
    #[arg(long, short = 'K')]
    iterations: Option<u64>,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long)]
    safety_factor: Option<f64>,
    /// Number or `auto`.
    #[arg(long)]
    dual_bound: Option<DualBound>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    record_every: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    activation: Option<ActivationKind>,
    #[arg(long)]
    reference_tol: Option<f64>,
    #[arg(long)]
    reference_iters: Option<usize>,
    /// Fill the wall-clock column.
    #[arg(long)]
    timing: bool,
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(self) -> adapd::Result<RunConfig> {
        let mut cfg = match (&self.replay, &self.config, self.preset) {
            (Some(p), _, _) => config_from_metadata(p)?,
            (None, Some(p), _) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
                RunConfig::from_toml(&text)?
            }
            (None, None, Some(preset)) => RunConfig::preset(preset),
            (None, None, None) => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident <- $arg:expr),* $(,)?) => {$(
                if let Some(v) = $arg { cfg.$field = v; }
            )*};
        }
        set!(
            n <- self.n,
            agents <- self.agents,
            rows <- self.rows,
            noise_std <- self.noise_std,
            instance_seed <- self.instance_seed,
            graph_seed <- self.graph_seed,
            alpha <- self.alpha,
            mixing <- self.mixing,
            iterations <- self.iterations,
            safety_factor <- self.safety_factor,
            dual_bound <- self.dual_bound,
            solver_seed <- self.seed,
            record_every <- self.record_every,
            mode <- self.mode,
            activation <- self.activation,
            reference_tol <- self.reference_tol,
            reference_iters <- self.reference_iters,
            output_dir <- self.out,
        );
        if self.instance.is_some() {
            cfg.instance_path = self.instance;
        }
        if self.graph.is_some() {
            cfg.graph_path = self.graph;
        }
        if self.extra_edges.is_some() {
            cfg.extra_edges = self.extra_edges;
        }
        if self.rounds.is_some() {
            cfg.rounds = self.rounds;
        }
        if self.timing {
            cfg.timing = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut err = io::stderr();
    match cli.command {
        Command::Generate(args) => {
            let summary = match args.resolve().and_then(|cfg| cmd_generate(&cfg)) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            print!("{summary}");
        }
        Command::Run(args) => {
            let summary = match args.resolve().and_then(|cfg| cmd_run(&cfg, &mut err)) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            for p in &summary.csv_paths {
                println!("wrote {}", p.display());
            }
            println!("wrote {}", summary.metadata_path.display());
        }
        Command::CheckBound {
            config,
            seeds,
            horizons,
            comparison,
        } => {
            let comparison = match comparison.as_str() {
                "oracle" => ComparisonPoint::Oracle,
                "initial" => ComparisonPoint::Initial,
                other => return fail(Error::InvalidParameter(format!("unknown comparison point {other:?}"))),
            };
            let report = match config
                .resolve()
                .and_then(|cfg| cmd_check_bound(&cfg, seeds, &horizons, comparison, &mut err))
            {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            println!("{report}");
            if !report.all_pass() {
                let _ = writeln!(err, "bound violated");
                return ExitCode::from(2);
            }
        }
        Command::Plot { csv, out } => match cmd_plot(&csv, &out) {
            Ok(paths) => {
                for p in paths {
                    println!("wrote {}", p.display());
                }
            }
            Err(e) => return fail(e),
        },
    }
    ExitCode::SUCCESS
}
