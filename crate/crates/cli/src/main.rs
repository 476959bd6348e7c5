use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coherence_cli::{self as cli, presets, Failure, Overrides};

#[derive(Parser)]
#[command(
    name = "coherence",
    version,
    about = "Simulate adaptive deadzone synchronization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(clap::Args, Clone)]
struct RunFlags {
    /// Config file or preset name.
    config: String,
    /// Output directory (overrides the config's output.dir).
    #[arg(long, env = "COHERENCE_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run(RunFlags),
    /// Run every [[sweep]] member of a config.
    Sweep(RunFlags),
    /// Validate a config without simulating.
    Check(RunFlags),
    /// List the built-in presets.
    ListPresets,
    /// Print the TOML source of a preset.
    ShowPreset { name: String },
    /// Algebraic connectivity of undirected Vicsek graphs, generations 1 to 3.
    Table1,
}

fn load(flags: &RunFlags) -> Result<cli::ExperimentConfig, Failure> {
    let mut cfg = cli::load_config(&flags.config)?;
    cfg.apply(&Overrides {
        out: flags.out.clone(),
        seed: flags.seed,
        dt: flags.dt,
        t_end: flags.t_end,
    });
    Ok(cfg)
}

fn execute(command: Command, quiet: bool) -> Result<(), Failure> {
    let say = |s: String| {
        if !quiet {
            println!("{s}");
        }
    };
    match command {
        Command::Run(flags) => {
            let outcome = cli::run(&load(&flags)?)?;
            for c in &outcome.checks {
                say(format!(
                    "{}: {} ({})",
                    c.name,
                    if c.passed { "pass" } else { "FAIL" },
                    c.detail
                ));
            }
            say(format!("wrote {}", outcome.dir.display()));
            cli::outcome_status(&outcome)
        }
        Command::Sweep(flags) => {
            let outcome = cli::sweep(&load(&flags)?)?;
            for (name, m) in &outcome.members {
                match m {
                    Ok(o) => say(format!(
                        "{name}: {}",
                        if o.passed() { "pass" } else { "FAIL" }
                    )),
                    Err(f) => say(format!("{name}: {f}")),
                }
            }
            say(format!("wrote {}", outcome.dir.display()));
            outcome.status()
        }
        Command::Check(flags) => {
            for run in cli::check(&load(&flags)?)? {
                let spec = run.sim.params.spec();
                say(format!(
                    "ok: {} ({} agents, d = {}, delta = {}, delta_bar = {})",
                    run.config.name,
                    run.sim.n_agents(),
                    spec.d,
                    spec.delta,
                    spec.delta_bar
                ));
            }
            Ok(())
        }
        Command::ListPresets => {
            for (name, desc) in presets::list() {
                println!("{name:<6} {desc}");
            }
            Ok(())
        }
        Command::ShowPreset { name } => match presets::preset_source(&name) {
            Some(src) => {
                print!("{src}");
                Ok(())
            }
            None => Err(Failure::Schema(format!("unknown preset '{name}'"))),
        },
        Command::Table1 => {
            print!("{}", cli::format_table1(&cli::table1()));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match execute(args.command, args.quiet) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
