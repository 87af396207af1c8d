use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sdeepc::experiment::{self, ExperimentSpec, Mode};
use sdeepc::sarsa::load_table;

/// Output root used when neither `--out` nor the environment sets one.
const DEFAULT_OUT: &str = "runs";

#[derive(Parser, Debug)]
#[command(
    name = "sdeepc",
    version,
    about = "DeePC with a SARSA-tuned regularization weight"
)]
struct Cli {
    /// Spec file or bundled spec name; repeat for `compare`.
    #[arg(long, global = true)]
    spec: Vec<String>,
    /// Overrides the seed of every spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; each spec writes into its own subdirectory.
    #[arg(long, global = true, env = "SDEEPC_OUT")]
    out: Option<PathBuf>,
    /// Parallel jobs for sweeps and comparisons.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Excite the plant and export the trajectory and Hankel blocks.
    Collect,
    /// Collect, then train and save the Q-table.
    Train,
    /// Full run of a fixed_lambda or sdeepc spec.
    Run {
        /// Use a saved Q-table instead of training.
        #[arg(long)]
        qtable: Option<PathBuf>,
    },
    /// Evaluate every grid value of a sweep spec.
    Sweep,
    /// Run several specs on a shared scenario and merge their J traces.
    Compare {
        /// Subdirectory of the output root for the merged files.
        #[arg(long, default_value = "compare")]
        name: String,
    },
    /// Q-table utilities.
    Qtable {
        #[command(subcommand)]
        action: QtableCommand,
    },
    /// Print the CSV column reference (SCHEMA.md).
    Schema,
    /// List the bundled specs.
    Specs,
}

#[derive(Subcommand, Debug)]
enum QtableCommand {
    /// Print dimensions, coverage and the greedy-action histogram.
    Inspect { path: PathBuf },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn out_root(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn load_specs(cli: &Cli) -> Result<Vec<ExperimentSpec>> {
    if cli.spec.is_empty() {
        bail!("--spec is required");
    }
    cli.spec
        .iter()
        .map(|s| {
            let mut spec =
                experiment::load_spec(s).with_context(|| format!("loading spec `{s}`"))?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            log::info!("spec `{}` seed {}", spec.name, spec.seed);
            Ok(spec)
        })
        .collect()
}

fn single(cli: &Cli) -> Result<ExperimentSpec> {
    let mut specs = load_specs(cli)?;
    if specs.len() != 1 {
        bail!("this command takes exactly one --spec");
    }
    Ok(specs.remove(0))
}

fn run(cli: Cli) -> Result<()> {
    let root = out_root(&cli);
    match &cli.command {
        Command::Collect => {
            let spec = single(&cli)?;
            let dir = root.join(spec.output_subdir());
            let prep = experiment::collect(&spec)?;
            experiment::write_collection(&dir, &prep)?;
            println!("{}", dir.display());
        }
        Command::Train => {
            let spec = single(&cli)?;
            let dir = root.join(spec.output_subdir());
            let prep = experiment::collect(&spec)?;
            experiment::write_collection(&dir, &prep)?;
            let trained = experiment::train(&spec, &prep)?;
            experiment::write_training(&dir, &trained)?;
            println!("{}", dir.join(experiment::files::QTABLE).display());
        }
        Command::Run { qtable } => {
            let spec = single(&cli)?;
            let dir = root.join(spec.output_subdir());
            log::info!("writing run artifacts to {}", dir.display());
            let out = experiment::run(&spec, &dir, qtable.as_deref())?;
            print!("{}", out.summary.to_json());
        }
        Command::Sweep => {
            let spec = single(&cli)?;
            if !matches!(spec.mode, Mode::Sweep { .. }) {
                bail!("`{}` is not a sweep spec", spec.name);
            }
            let dir = root.join(spec.output_subdir());
            log::info!("sweeping with {} job(s)", cli.jobs);
            let rows = experiment::sweep(&spec, cli.jobs)?;
            experiment::write_sweep(&dir, &spec, &rows)?;
            println!("{}", dir.join(experiment::files::SWEEP).display());
        }
        Command::Compare { name } => {
            let specs = load_specs(&cli)?;
            if name.is_empty() || name.contains(['/', '\\']) || name == ".." {
                bail!("compare name `{name}` is not a plain directory name");
            }
            let cmp = experiment::compare(&specs, cli.jobs)?;
            let dir = root.join(name);
            cmp.write(&dir, specs[0].tuner.a, specs[0].tuner.b)?;
            print!("{}", cmp.summary_csv());
        }
        Command::Qtable {
            action: QtableCommand::Inspect { path },
        } => inspect(path)?,
        Command::Schema => print!("{}", sdeepc::schema::markdown()),
        Command::Specs => {
            for n in experiment::bundled_names() {
                println!("{n}");
            }
        }
    }
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let (table, tuner) = load_table(path).with_context(|| format!("loading {}", path.display()))?;
    let [e, m, a] = table.dims();
    let mut greedy = vec![0usize; a];
    let mut visited_states = 0;
    // Greedy over visited entries only, as the policy acts.
    for row in table.values().chunks(a) {
        let best = (0..a)
            .filter(|&i| row[i] != 0.0)
            .reduce(|b, i| if row[i] > row[b] { i } else { b });
        if let Some(best) = best {
            visited_states += 1;
            greedy[best] += 1;
        }
    }
    let hist: Vec<serde_json::Value> = greedy
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0)
        .map(|(i, c)| serde_json::json!({ "lambda_g": tuner.actions[i], "states": c }))
        .collect();
    let report = serde_json::json!({
        "dims": [e, m, a],
        "nonzero_entries": table.nonzero(),
        "visited_states": visited_states,
        "energy_top_edge": tuner.energy_edges.last(),
        "rmse_top_edge": tuner.rmse_edges.last(),
        "actions": [tuner.actions.first(), tuner.actions.last()],
        "alpha": tuner.alpha,
        "gamma": tuner.gamma,
        "epsilon": tuner.epsilon,
        "window_n": tuner.window_n,
        "greedy_histogram": hist,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
