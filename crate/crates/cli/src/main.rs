use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gate_core::bench::Strategy;
use gate_core::model::gradcheck::{check_gradients, GradProblem};
use gate_core::model::ModelShape;
use gate_core::pipeline::{Pipeline, PipelineConfig, Stage, StageStatus, BENCH_CSV};
use gate_core::{GateError, Result};

#[derive(Parser)]
#[command(name = "gate", version, about = "Learned entry points for graph-based vector search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Working directory holding every artifact.
    #[arg(long, default_value = "gate-work")]
    dir: PathBuf,
    /// `key = value` config file; command-line overrides win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config overrides as `--key value` pairs, e.g. `--n-points 20000`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and split its queries.
    Gen(StageArgs),
    /// Exact k nearest neighbors of the evaluation queries.
    GroundTruth(StageArgs),
    /// kNN graph refined into a navigating proximity graph.
    BuildGraph(StageArgs),
    /// Balanced hierarchical clustering and hub selection.
    ExtractHubs(StageArgs),
    /// Subgraph sampling and topology embedding per hub.
    TopoFeatures(StageArgs),
    /// Positive and negative historical queries per hub.
    MineSamples(StageArgs),
    /// Train the two-tower model and compute hub latents.
    Train(StageArgs),
    /// Build the hub navigation graph and write the index bundle.
    Assemble(StageArgs),
    /// Compare entry strategies over the l_s sweep.
    Bench(StageArgs),
    /// Every stage in order, skipping those already up to date.
    Run(StageArgs),
    /// Print the resolved configuration.
    Config(StageArgs),
    /// Verify analytic gradients against central finite differences.
    GradCheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 0.07)]
        tau: f64,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Topology tokens per hub.
        #[arg(long, default_value_t = 1)]
        tokens: usize,
    },
}

/// Folds `--key value` and `--key=value` pairs into `cfg`; dashes in keys
/// map to underscores.
fn apply_overrides(cfg: &mut PipelineConfig, args: &[String]) -> Result<()> {
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let flag =
            arg.strip_prefix("--").ok_or_else(|| GateError::Config(format!("expected a `--key` flag, got {arg:?}")))?;
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| GateError::Config(format!("flag --{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        cfg.set(&key.replace('-', "_"), &value)?;
    }
    Ok(())
}

fn pipeline(args: &StageArgs) -> Result<Pipeline> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    apply_overrides(&mut cfg, &args.overrides)?;
    Pipeline::new(cfg, &args.dir)
}

fn report(stage: Stage, status: StageStatus) {
    match status {
        StageStatus::Ran => println!("{stage}: done"),
        StageStatus::UpToDate => println!("{stage}: up to date"),
    }
}

fn print_bench_summary(p: &Pipeline) -> Result<()> {
    let rows = gate_core::pipeline::parse_bench_csv(&p.path(BENCH_CSV))?;
    let report = gate_core::bench::BenchReport { rows, results: Vec::new() };
    print!("{}", report.to_csv());
    let target = 0.95;
    for s in &p.config.strategies.0 {
        match report.matched(*s, target) {
            Some(r) => {
                println!("{s}: recall@{} >= {target} first at l_s = {} with {:.1} mean hops", r.k, r.l_s, r.mean_hops)
            }
            None => println!("{s}: recall@{} never reaches {target} in the sweep", p.config.k),
        }
    }
    if let Some(red) = report.hop_reduction(Strategy::Gate, Strategy::Medoid, target) {
        println!("gate vs medoid hop reduction at the matched point: {:.1}%", 100.0 * red);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let stage_cmd = |args: &StageArgs, stage: Stage| -> Result<()> {
        let p = pipeline(args)?;
        report(stage, p.run(stage)?);
        if stage == Stage::Bench {
            print_bench_summary(&p)?;
        }
        Ok(())
    };
    match &cli.command {
        Command::Gen(a) => stage_cmd(a, Stage::Gen),
        Command::GroundTruth(a) => stage_cmd(a, Stage::GroundTruth),
        Command::BuildGraph(a) => stage_cmd(a, Stage::BuildGraph),
        Command::ExtractHubs(a) => stage_cmd(a, Stage::ExtractHubs),
        Command::TopoFeatures(a) => stage_cmd(a, Stage::TopoFeatures),
        Command::MineSamples(a) => stage_cmd(a, Stage::MineSamples),
        Command::Train(a) => stage_cmd(a, Stage::Train),
        Command::Assemble(a) => stage_cmd(a, Stage::Assemble),
        Command::Bench(a) => stage_cmd(a, Stage::Bench),
        Command::Run(a) => {
            let p = pipeline(a)?;
            for (stage, status) in p.run_all()? {
                report(stage, status);
            }
            print_bench_summary(&p)
        }
        Command::Config(a) => {
            print!("{}", pipeline(a)?.config.to_text());
            Ok(())
        }
        Command::GradCheck { seeds, tau, step, tol, tokens } => {
            let shape = ModelShape {
                d_p: 32,
                d_u: 16,
                d_k: 8,
                heads: 2,
                d_f: 32,
                hub_hidden: vec![32],
                query_hidden: vec![32],
                latent: 16,
            };
            let mut worst: f64 = 0.0;
            for seed in 0..*seeds {
                let problem = GradProblem::random(shape.clone(), *tau, 3, *tokens, 8, seed)?;
                let r = check_gradients(&problem, *step, *tol)?;
                println!(
                    "seed {seed}: max tensor error {:.3e}, max coordinate error {:.3e}, {} of {} coordinates over tolerance, {} skipped at kinks",
                    r.max_tensor_error(),
                    r.max_coord_error,
                    r.coords_over_tol,
                    r.checked,
                    r.skipped
                );
                worst = worst.max(r.max_tensor_error());
            }
            if worst <= *tol {
                println!("gradient check passed: worst tensor error {worst:.3e} <= {tol:e}");
                Ok(())
            } else {
                Err(GateError::Internal(format!("gradient check failed: worst tensor error {worst:.3e} > {tol:e}")))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
