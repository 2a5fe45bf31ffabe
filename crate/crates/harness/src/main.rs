use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedwagg::{emit_report, render, run_experiment, DataSource, ExperimentSpec, Format};
use fedwagg_core::logreg::{fit_cubic, CubicTarget, DEFAULT_INTERVAL};
use fedwagg_core::protocol::{
    max_adversaries, min_threshold, validate_tolerance, AdversaryScript, Mode, ProtocolConfig,
};

#[derive(Parser)]
#[command(
    name = "fedwagg",
    version,
    about = "Simulate secure weighted aggregation rounds"
)]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment (the default).
    Run(RunArgs),
    /// Refit the loss and sigmoid cubics and print them as constants.
    FitCubics {
        #[arg(long, default_value_t = DEFAULT_INTERVAL.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = DEFAULT_INTERVAL.1)]
        hi: f64,
    },
    /// Check a threshold and adversary count, or print the table for a range of n.
    Validate {
        #[arg(long)]
        clients: Option<usize>,
        #[arg(long)]
        threshold: Option<usize>,
        #[arg(long, default_value_t = 0)]
        adversaries: usize,
        /// Print minimum threshold and maximum adversaries for n = 3..=N.
        #[arg(long, value_name = "N")]
        table: Option<usize>,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, default_value_t = 8)]
    clients: usize,
    /// Defaults to the minimum admissible threshold.
    #[arg(long)]
    threshold: Option<usize>,
    #[arg(long, default_value_t = 1024)]
    key_bits: u64,
    #[arg(long, default_value_t = 80)]
    kappa: u32,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// CSV file; synthetic data when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    per_client: usize,
    #[arg(long, default_value_t = 500)]
    benchmark_size: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout_phase1: f64,
    #[arg(long, default_value_t = 0.0)]
    dropout_phase2: f64,
    /// fraud-e:ID, fraud-m:ID or view:ID:HIDDEN, optionally suffixed @ROUND.
    #[arg(long)]
    adversary: Vec<AdversaryScript>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    rounds: u64,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    /// Masking only: unweighted mean, no encryption or proofs.
    #[arg(long)]
    baseline: bool,
    /// Also run the baseline on the same seeds and report ratios.
    #[arg(long)]
    compare_baseline: bool,
    #[arg(long)]
    binary_cross_entropy: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
}

impl RunArgs {
    fn spec(&self) -> ExperimentSpec {
        let mut config = ProtocolConfig::new(self.clients);
        config.threshold = self.threshold.unwrap_or(min_threshold(self.clients));
        config.paillier_bits = self.key_bits;
        config.kappa = self.kappa;
        config.alpha = self.alpha;
        config.dropout.phase1 = self.dropout_phase1;
        config.dropout.phase2 = self.dropout_phase2;
        config.adversaries = self.adversary.clone();
        config.seed = self.seed;
        config.binary_cross_entropy = self.binary_cross_entropy;
        if self.baseline {
            config.mode = Mode::Baseline;
        }
        let mut spec = ExperimentSpec::new(config);
        if let Some(path) = &self.dataset {
            spec.data = DataSource::Csv(path.clone());
        }
        spec.per_client = self.per_client;
        spec.benchmark_size = self.benchmark_size;
        spec.rounds = self.rounds;
        spec.repetitions = self.repetitions;
        spec.compare_baseline = self.compare_baseline && !self.baseline;
        spec
    }
}

fn run(args: &RunArgs) -> Result<(), Box<dyn std::error::Error>> {
    let experiment = run_experiment(&args.spec())?;
    match &args.out {
        Some(path) => emit_report(&experiment.report, args.format, path)?,
        None => print!("{}", render(&experiment.report, args.format)?),
    }
    Ok(())
}

fn fit_cubics(lo: f64, hi: f64) {
    let targets = [
        ("SIGMOID_CUBIC", CubicTarget::Sigmoid),
        ("NEG_LOG_SIGMOID_CUBIC", CubicTarget::NegLogSigmoid),
        (
            "NEG_LOG_ONE_MINUS_SIGMOID_CUBIC",
            CubicTarget::NegLogOneMinusSigmoid,
        ),
    ];
    for (name, target) in targets {
        let p = fit_cubic(target, lo, hi);
        println!("pub const {name}: CubicPoly = CubicPoly {{");
        println!("    coeffs: [");
        for c in p.coeffs {
            println!("        {c:?},");
        }
        println!("    ],");
        println!("    lo: {:?},", p.lo);
        println!("    hi: {:?},", p.hi);
        println!("    max_error: {:?},", p.max_error);
        println!("}};\n");
    }
}

fn validate(
    clients: Option<usize>,
    threshold: Option<usize>,
    adversaries: usize,
    table: Option<usize>,
) -> Result<(), Box<dyn std::error::Error>> {
    if let Some(max) = table {
        println!("n,t_min,adv_max");
        for n in 3..=max {
            println!("{n},{},{}", min_threshold(n), max_adversaries(n));
        }
    }
    if let Some(n) = clients {
        let t = threshold.unwrap_or(min_threshold(n));
        validate_tolerance(n, t, adversaries)?;
        println!("ok: n={n} t={t} adversaries={adversaries}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        None => run(&cli.run),
        Some(Command::Run(args)) => run(&args),
        Some(Command::FitCubics { lo, hi }) => {
            fit_cubics(lo, hi);
            Ok(())
        }
        Some(Command::Validate {
            clients,
            threshold,
            adversaries,
            table,
        }) => validate(clients, threshold, adversaries, table),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
