use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qva::cli::{emit_structure_constants, parse_config, parse_range, run_suite, run_virasoro, EngineConfig, Suite};

#[derive(Parser)]
#[command(name = "qva", about = "Exact checks for quantum vertex algebras and their twisted modules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a verification suite; exit 0 if every residual vanishes, 1 otherwise.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "all")]
        suite: Suite,
        /// Creator-depth cap for test states.
        #[arg(long)]
        depth: Option<usize>,
        /// Exponent window per variable, e.g. -6..6.
        #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
        window: Option<(i64, i64)>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write the table of products a_n b in V_Q.
    StructureConstants {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the Virasoro bracket on the configured module.
    Virasoro {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_range, allow_hyphen_values = true, default_value = "-3..3")]
        m_range: (i64, i64),
    },
}

fn load(path: &Path) -> Result<EngineConfig, ExitCode> {
    parse_config(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code() as u8)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Check {
            config,
            suite,
            depth,
            window,
            seed,
            report,
        } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let opts = &mut cfg.options.checks;
            if let Some(d) = depth {
                opts.depth = d;
            }
            if let Some((lo, hi)) = window {
                opts.lo = lo;
                opts.hi = hi;
            }
            if let Some(s) = seed {
                opts.seed = s;
            }
            let run = run_suite(&cfg, suite, |r| println!("{}", r.line()));
            let passed = run.reports.iter().filter(|r| r.pass).count();
            println!("{passed}/{} checks passed", run.reports.len());
            if let Some(path) = report {
                let text = serde_json::to_string_pretty(&run.to_json(&cfg)).expect("json");
                if let Err(e) = std::fs::write(&path, text + "\n") {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            ExitCode::from(run.exit_code() as u8)
        }
        Command::StructureConstants { config, depth, out } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match emit_structure_constants(&cfg, depth, &out) {
                Ok(entries) => {
                    println!("wrote {} entries to {}", entries.len(), out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: cannot write {}: {e}", out.display());
                    ExitCode::from(2)
                }
            }
        }
        Command::Virasoro { config, m_range } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let (report, measured) = run_virasoro(&cfg, m_range);
            println!("{}", report.line());
            match measured {
                Some(c) => println!("central charge measured on the vacuum: {c}"),
                None => println!("central charge could not be read off the vacuum"),
            }
            ExitCode::from(if report.pass { 0 } else { 1 })
        }
    }
}
