use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sqkd::experiment::{self, ExperimentConfig, OutputFormat, Overrides, EXIT_CONFIG};
use sqkd::protocol::Variant;

#[derive(Parser)]
#[command(name = "sqkd", version, about = "Semiquantum key distribution simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and compare it with theory.
    Run(Box<RunArgs>),
    /// Print the attack catalog with parameters and expected behaviour.
    ListAttacks,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Randomization,
    MeasureResend,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    attack: Option<String>,
    /// Attack parameter as KEY=VALUE; dotted keys nest. Repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    trials: Option<u64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Results file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// NDJSON event trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    check_fraction: Option<f64>,
    #[arg(long)]
    ctrl_threshold: Option<f64>,
    #[arg(long)]
    sift_threshold: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            variant: self.variant.map(|v| match v {
                VariantArg::Randomization => Variant::Randomization,
                VariantArg::MeasureResend => Variant::MeasureResend,
            }),
            attack: self.attack.clone(),
            params: self.params.clone(),
            pairs: self.pairs,
            trials: self.trials,
            seed: self.seed,
            out: self.out.clone(),
            trace: self.trace.clone(),
            format: self.format.map(|f| match f {
                FormatArg::Json => OutputFormat::Json,
                FormatArg::Csv => OutputFormat::Csv,
            }),
            check_fraction: self.check_fraction,
            ctrl_threshold: self.ctrl_threshold,
            sift_threshold: self.sift_threshold,
        }
    }
}

fn run(args: &RunArgs) -> Result<i32, experiment::ExperimentError> {
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    args.overrides().apply(&mut config)?;
    let (out, rendered) = experiment::run_experiment(&config)?;
    eprint!("{}", out.report.to_table());
    if let Some(text) = rendered {
        print!("{text}");
    }
    Ok(out.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match cli.command {
        Command::ListAttacks => {
            print!("{}", experiment::list_attacks());
            0
        }
        Command::Run(args) => match run(&args) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}
