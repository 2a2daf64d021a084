use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sqc_smoother::harness::{self, OutputFormat};
use sqc_smoother::Error;

#[derive(Parser)]
#[command(name = "smoother", version, about = "Set-valued fixed-point smoother")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, smooth and export results.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "smooth-at")]
        smooth_at: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Compare the filters with the dynamic-programming oracle on run 0.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
            Format::Both => OutputFormat::Both,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation { .. } | Error::InvalidArgument(_) => 2,
        Error::Unsupported(_) | Error::Numerical(_) => 3,
        Error::Io { .. } => 4,
    }
}

fn run(cli: Cli) -> sqc_smoother::Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            format,
            seed,
            smooth_at,
            runs,
        } => {
            let mut scn = harness::parse_scenario(&scenario)?;
            if let Some(f) = format {
                scn.output = f.into();
            }
            if let Some(s) = seed {
                scn.noise.seed = s;
            }
            if let Some(k) = smooth_at {
                scn.smooth_at_k = k;
            }
            if let Some(m) = runs {
                scn.runs = m;
            }
            scn.validate()?;
            let result = harness::run_scenario(&scn)?;
            let files = harness::export(
                &result.records,
                &result.summary,
                result.sample_set.as_ref(),
                scn.model_id.state_dim(),
                scn.output,
                &out,
            )?;
            let s = &result.summary;
            println!(
                "{} runs ({} failed), membership rate {}, mean error smoother {} / forward {}",
                s.runs,
                s.failed,
                fmt_opt(s.membership_rate),
                fmt_opt(s.mean_err_smoother),
                fmt_opt(s.mean_err_forward)
            );
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Validate { scenario } => {
            harness::parse_scenario(&scenario)?;
            println!("{}: ok", scenario.display());
            Ok(())
        }
        Command::Oracle { scenario } => {
            let scn = harness::parse_scenario(&scenario)?;
            let report = harness::oracle_check(&scn.prepare()?, 0)?;
            println!("max fit residual      {:.3e}", report.max_fit_residual);
            println!("max forward value gap {:.3e}", report.max_forward_gap);
            println!("max reverse value gap {:.3e}", report.max_reverse_gap);
            Ok(())
        }
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
