use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kslab_core::report::fmt_num;
use kslab_core::runner::{
    cmd_exponents, cmd_simulate, cmd_sweep, cmd_twin, load_scenario, write_file, RunnerError,
    EXIT_NOT_ADMISSIBLE, EXIT_OK, EXIT_SOLVER,
};
use kslab_core::scenario::{Mode, Scenario};
use kslab_core::solver::Verdict;
use kslab_core::verify::{verify, DEFAULT_SEED};

#[derive(Parser)]
#[command(
    name = "kslab",
    version,
    about = "Blow-up laboratory for radial quasilinear Keller-Segel systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print every derived exponent; exit 0 iff the parameters are admissible.
    Exponents {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a plain or regularized simulation and analyze it.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare a base run with perturbed twins.
    Twin {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every cell of a parameter sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the self-check suite and write its report.
    Verify {
        #[arg(long, default_value = "verify_out")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("kslab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn require_mode(s: &Scenario, allowed: &[&str], command: &str) -> Result<(), RunnerError> {
    let mode = match s.mode {
        Mode::Plain => "plain",
        Mode::Regularized { .. } => "regularized",
        Mode::Twin { .. } => "twin",
        Mode::Sweep => "sweep",
    };
    if allowed.contains(&mode) {
        Ok(())
    } else {
        Err(kslab_core::scenario::ValidationError(format!(
            "`{command}` does not run scenarios with mode = {mode}"
        ))
        .into())
    }
}

fn run(command: Command) -> Result<i32, RunnerError> {
    let mut stdout = io::stdout().lock();
    match command {
        Command::Exponents { config } => {
            let s = load_scenario(&config)?;
            let out = cmd_exponents(&s);
            print(&mut stdout, &out.record.render());
            Ok(if out.admissible {
                EXIT_OK
            } else {
                EXIT_NOT_ADMISSIBLE
            })
        }
        Command::Simulate { config, out } => {
            let s = load_scenario(&config)?;
            require_mode(&s, &["plain", "regularized"], "simulate")?;
            let sim = cmd_simulate(&s, &out)?;
            let mut line = format!(
                "verdict={} t_final={} steps={}",
                sim.report.verdict.as_str(),
                fmt_num(sim.report.t_final),
                sim.report.stats.accepted
            );
            if let Some((lo, hi)) = sim.bracket {
                line += &format!(" blowup_bracket=[{},{}]", fmt_num(lo), fmt_num(hi));
            }
            print(
                &mut stdout,
                &format!("{line}\nreport={}\n", report_path(&out)),
            );
            if sim.report.verdict == Verdict::Failed {
                eprintln!("kslab: solver failure: {}", sim.report.cause);
                return Ok(EXIT_SOLVER);
            }
            Ok(EXIT_OK)
        }
        Command::Twin { config, out } => {
            let s = load_scenario(&config)?;
            require_mode(&s, &["plain", "twin"], "twin")?;
            let t = cmd_twin(&s, &out)?;
            let rate = t.rate.map_or("undefined".into(), fmt_num);
            print(
                &mut stdout,
                &format!(
                    "base_verdict={} rate={rate} max_difference={}\nreport={}\n",
                    t.base.verdict.as_str(),
                    fmt_num(t.max_difference),
                    report_path(&out)
                ),
            );
            Ok(EXIT_OK)
        }
        Command::Sweep { config, out, jobs } => {
            let s = load_scenario(&config)?;
            require_mode(&s, &["sweep"], "sweep")?;
            cmd_sweep(&s, &out, jobs, &mut stdout)?;
            Ok(EXIT_OK)
        }
        Command::Verify { out, seed } => {
            let report = verify(seed, &mut |c| {
                let line = format!(
                    "criterion {:>2} {} {} ({:.2} s)\n",
                    c.id,
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.elapsed.as_secs_f64()
                );
                print(&mut io::stdout().lock(), &line);
            });
            write_file(&out.join("report.txt"), &report.record().render())?;
            let pass = report.all_pass();
            print(
                &mut stdout,
                &format!(
                    "{}\nreport={}\n",
                    if pass {
                        "all criteria passed"
                    } else {
                        "some criteria failed"
                    },
                    report_path(&out)
                ),
            );
            Ok(if pass { EXIT_OK } else { EXIT_NOT_ADMISSIBLE })
        }
    }
}

fn report_path(out: &Path) -> String {
    out.join("report.txt").display().to_string()
}

fn print(w: &mut dyn Write, text: &str) {
    // A closed pipe is not an error worth reporting.
    let _ = w.write_all(text.as_bytes()).and_then(|_| w.flush());
}
