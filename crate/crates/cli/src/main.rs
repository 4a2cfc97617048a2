use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use balmarket_cli::{builtins, config, load_config, parse_config, replay, run_scenario, CliError};

#[derive(Parser)]
#[command(name = "balmarket", version, about = "Balanced market scenario runner")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "BM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a builtin.
    Run {
        #[arg(long, conflicts_with = "builtin")]
        config: Option<PathBuf>,
        /// Name of a builtin scenario.
        #[arg(long)]
        builtin: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of paths.
        #[arg(long)]
        paths: Option<usize>,
    },
    /// List the builtin scenarios.
    List,
    /// Rerun the scenario recorded in a summary.json and compare CSV digests.
    Replay {
        summary: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long, required_unless_present = "schema")]
        config: Option<PathBuf>,
        /// Print the scenario JSON schema instead.
        #[arg(long)]
        schema: bool,
    },
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::List => {
            for name in builtins::NAMES {
                println!("{name:<22}{}", builtins::describe(name).unwrap_or(""));
            }
        }
        Command::Validate { config, schema } => {
            if schema {
                print!("{}", config::schema());
            } else if let Some(path) = config {
                let cfg = load_config(&path)?;
                println!(
                    "{}: ok ({}, {} paths)",
                    path.display(),
                    cfg.name,
                    cfg.n_paths
                );
            }
        }
        Command::Run {
            config,
            builtin,
            out,
            seed,
            paths,
        } => {
            let mut cfg = match (config, builtin) {
                (Some(path), _) => load_config(&path)?,
                (None, Some(name)) => parse_config(&format!("{{\"builtin\": {name:?}}}"))?,
                (None, None) => {
                    return Err(CliError::ConfigParse("give --config or --builtin".into()))
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = paths {
                cfg.n_paths = n;
            }
            let dir = out
                .or_else(|| cfg.output.dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
            let start = Instant::now();
            let res = run_scenario(&cfg, &dir)?;
            eprintln!(
                "{}: {} paths in {:.1}s, outputs in {}",
                cfg.name,
                cfg.n_paths,
                start.elapsed().as_secs_f64(),
                dir.display()
            );
            let s = &res.summary;
            if let Some(b) = &s.balance {
                println!(
                    "balanced {:.4}  unbalanced {:.4}  ({} classified)",
                    b.balanced_fraction, b.unbalanced_fraction, b.classified
                );
            }
            if let Some(l) = &s.limiting {
                println!(
                    "atoms {:?}  interior {}  oscillating {}  indeterminate {}",
                    l.atoms, l.interior, l.oscillating, l.indeterminate
                );
            }
            if let Some(r) = &s.death_example {
                println!(
                    "sup error {:.3e}  dying fraction {:.4} +- {:.4}",
                    r.sup_error, r.dying_fraction, r.dying_se
                );
            }
        }
        Command::Replay { summary, out, seed } => {
            let dir = out.unwrap_or_else(|| {
                summary
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join("replay")
            });
            let checks = replay(&summary, &dir, seed)?;
            let mut same = true;
            for c in &checks {
                println!(
                    "{:<14}{}",
                    c.file,
                    if c.matches() { "identical" } else { "differs" }
                );
                same &= c.matches();
            }
            if !same {
                return Ok(ExitCode::from(4));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
