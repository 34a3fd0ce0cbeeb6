use std::path::PathBuf;
use std::process::ExitCode;

use adhp::model::validate_assumptions;
use adhp_cli::{diff_runs, outcome_code, run_experiment, CliError, ExperimentConfig, Kind, RunOptions};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adhp", version, about = "Mean-field age-dependent Hawkes process experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a TOML or JSON config.
    Run {
        config: PathBuf,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Output directory (default runs/<kind>-<hash prefix>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the model assumptions of a config without running it.
    Validate { config: PathBuf },
    /// Compare the result files of two runs.
    Diff {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        rtol: f64,
    },
}

fn run(cmd: Cmd) -> Result<i32, CliError> {
    match cmd {
        Cmd::Run { config, workers, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.or_else(|| cfg.out.clone().map(PathBuf::from)).unwrap_or_else(|| {
                PathBuf::from("runs").join(format!("{}-{}", cfg.kind.name(), &cfg.hash()[..8]))
            });
            let o = run_experiment(&cfg, &RunOptions { workers, out })?;
            for c in &o.checks {
                println!("{} {} = {:.6e} (want {})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
            }
            println!("results in {}", o.dir.display());
            Ok(outcome_code(&o))
        }
        Cmd::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let p = cfg.params(cfg.model.n)?;
            let rep = validate_assumptions(&p, cfg.numerics.assumption_samples, cfg.seed)?;
            for c in &rep.checks {
                match &c.witness {
                    Some(w) => println!("{} {} ({w})", if c.holds { "holds" } else { "FAILS" }, c.name),
                    None => println!("{} {}", if c.holds { "holds" } else { "FAILS" }, c.name),
                }
            }
            println!("A_LLN {}  A_TGN {}  A_CLT {}", rep.lln, rep.tgn, rep.clt);
            let ok = match cfg.kind {
                Kind::Pde => true,
                Kind::Simulate | Kind::Couple | Kind::Rates => rep.lln,
                Kind::Clt | Kind::Spde => rep.clt,
            };
            Ok(if ok { 0 } else { 2 })
        }
        Cmd::Diff { a, b, rtol } => {
            let rep = diff_runs(&a, &b, rtol)?;
            print!("{rep}");
            Ok(if rep.identical() { 0 } else { 3 })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
