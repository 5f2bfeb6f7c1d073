use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stepeql::eql::Mechanism;
use stepeql_harness::{ExperimentConfig, HarnessError, Learned, Result, SweepConfig, SweepParam, Workspace};

/// Simulate the spring-chain cell model and learn continuum PDEs from it.
#[derive(Debug, Parser)]
#[command(name = "stepeql", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Named preset to start from.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// TOML file layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to STEPEQL_THREADS, then the core count.
    #[arg(long, global = true, env = "STEPEQL_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override a config value, e.g. `--set stages.0.tau_q=0.2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate, average, learn and report.
    Run { preset: Option<String> },
    /// Write one trajectory per stage.
    Simulate,
    /// Write the (ensemble-averaged) density grids.
    Average,
    /// Learn from the density CSVs in the output directory.
    Learn,
    /// Solve the learned PDE and write curves and plots.
    Report,
    /// Vary one parameter over a list of values.
    Sweep {
        /// One of h, n_s, t_M, n_k, tau_q.
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
    },
    /// Print the resolved configuration as TOML.
    DumpPreset { name: Option<String> },
}

fn resolve(global: &Global, positional: Option<&str>) -> Result<ExperimentConfig> {
    let mut overrides = global.overrides.clone();
    if let Some(seed) = global.seed {
        overrides.insert(0, format!("seed={seed}"));
    }
    let name = positional.or(global.preset.as_deref());
    let cfg = ExperimentConfig::resolve(name, global.config.as_deref(), &overrides)?;
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn summarize(learned: &Learned) {
    for m in Mechanism::ALL {
        let lib = learned.libraries.get(m);
        if lib.is_empty() {
            continue;
        }
        let mut body = String::new();
        for (k, &c) in learned.coefficients(m).iter().enumerate().filter(|(_, &c)| c != 0.0) {
            let sign = match (body.is_empty(), c < 0.0) {
                (true, true) => "-",
                (true, false) => "",
                (false, true) => " - ",
                (false, false) => " + ",
            };
            body.push_str(&format!("{sign}{:.6} {}", c.abs(), lib.label(k)));
        }
        if body.is_empty() {
            body.push('0');
        }
        println!("{}(q) = {body}", m.name());
    }
    println!("loss = {:.4}", learned.loss());
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::DumpPreset { name } => {
            print!("{}", resolve(g, name.as_deref())?.to_toml()?);
        }
        Command::Run { preset } => {
            let cfg = resolve(g, preset.as_deref())?;
            let ws = Workspace::new(&g.out)?;
            std::fs::write(ws.path("config.toml"), cfg.to_toml()?)?;
            ws.simulate(&cfg)?;
            ws.average(&cfg)?;
            let learned = ws.learn(&cfg)?;
            ws.report(&cfg, &learned)?;
            summarize(&learned);
        }
        Command::Simulate => Workspace::new(&g.out)?.simulate(&resolve(g, None)?)?,
        Command::Average => {
            Workspace::new(&g.out)?.average(&resolve(g, None)?)?;
        }
        Command::Learn => summarize(&Workspace::new(&g.out)?.learn(&resolve(g, None)?)?),
        Command::Report => {
            let cfg = resolve(g, None)?;
            let ws = Workspace::new(&g.out)?;
            let learned = ws.learn(&cfg)?;
            ws.report(&cfg, &learned)?;
        }
        Command::Sweep {
            param,
            values,
            replicates,
        } => {
            let sweep = SweepConfig {
                base: resolve(g, None)?,
                param: *param,
                values: values.clone(),
                replicates: *replicates,
            };
            for row in Workspace::new(&g.out)?.sweep(&sweep)? {
                match (&row.error, row.loss, row.d_active) {
                    (Some(e), _, _) => println!("{} = {} #{}: failed: {e}", row.parameter, row.value, row.replicate),
                    (None, Some(loss), Some(d)) => println!(
                        "{} = {} #{}: loss {loss:.4}, D {}",
                        row.parameter,
                        row.value,
                        row.replicate,
                        if d { "active" } else { "zero" }
                    ),
                    _ => unreachable!("rows carry a loss or an error"),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
