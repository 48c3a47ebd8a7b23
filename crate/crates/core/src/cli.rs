//! The `swc` command line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::contagion::{default_budget, default_seeds, default_target, route, run_diffusion, RoutingOptions};
use crate::error::{Error, Result};
use crate::harness::{self, parse_m, SweepConfig};
use crate::rng::derive_seed;
use crate::schemes::scheme_by_name;
use crate::smallworld::{Directedness, Graph, LazyGraph, ModelParams};

#[derive(Debug, Parser)]
#[command(name = "swc", version, about = "Contagion on small-world tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a network and write its weak ties.
    Generate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Route from the default seeds to the antipode and write the trace.
    Route {
        #[command(flatten)]
        model: ModelArgs,
        /// Read the network from a file written by `generate`.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, default_value = "greedy")]
        scheme: String,
        /// Activations per step, or `inf`.
        #[arg(long, default_value = "1")]
        m: String,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run complex diffusion until every node (or the antipode) is infected.
    Diffuse {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Stop once the antipode is infected.
        #[arg(long)]
        until_target: bool,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep and write one CSV row per cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit `ln T = β ln n + c` for each setting of a sweep CSV.
    Fit {
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Torus side L.
    #[arg(long = "L", alias = "side")]
    side: Option<u32>,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 2)]
    k: u32,
    /// Strong-tie radius; defaults to k.
    #[arg(long)]
    p: Option<u32>,
    /// Weak ties per node; defaults to k.
    #[arg(long)]
    q: Option<u32>,
    #[arg(long, default_value = "directed")]
    directedness: Directedness,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams> {
        let side = self
            .side
            .ok_or_else(|| Error::config("L", "required unless --graph is given"))?;
        ModelParams::new(
            side,
            self.alpha,
            self.p.unwrap_or(self.k),
            self.q.unwrap_or(self.k),
            self.k,
            self.directedness,
        )
    }
}

fn load_graph(path: &Path) -> Result<Graph> {
    Graph::read_from(BufReader::new(File::open(path)?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(File::create(p)?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate { model, seed, out } => {
            let graph = Graph::generate(model.params()?, seed)?;
            let mut w = output(out.as_deref())?;
            graph.write_to(&mut w)?;
            w.flush()?;
        }
        Command::Route {
            model,
            graph,
            scheme,
            m,
            budget,
            seed,
            out,
        } => {
            let m = parse_m(&m)?;
            let scheme = scheme_by_name(&scheme, &BTreeMap::new())?;
            let loaded = graph.as_deref().map(load_graph).transpose()?;
            let params = match &loaded {
                Some(g) => *g.params(),
                None => model.params()?,
            };
            let grid = params.grid();
            let seeds = default_seeds(grid, params.k)?;
            let target = default_target(grid);
            let opts = RoutingOptions::new(m, budget.unwrap_or_else(|| default_budget(grid)), derive_seed(seed, &[1]));
            let run = match (&loaded, params.directedness) {
                (Some(g), _) => route(g, &seeds, target, scheme.as_ref(), opts)?,
                (None, Directedness::Directed) => route(LazyGraph::new(params, seed)?, &seeds, target, scheme.as_ref(), opts)?,
                (None, Directedness::Undirected) => {
                    let g = Graph::generate(params, seed)?;
                    route(&g, &seeds, target, scheme.as_ref(), opts)?
                }
            };
            let mut w = output(out.as_deref())?;
            run.trace.write_to(&mut w)?;
            w.flush()?;
        }
        Command::Diffuse {
            model,
            graph,
            until_target,
            budget,
            seed,
            out,
        } => {
            let graph = match graph {
                Some(path) => load_graph(&path)?,
                None => Graph::generate(model.params()?, seed)?,
            };
            let grid = graph.grid();
            let seeds = default_seeds(grid, graph.params().k)?;
            let target = until_target.then(|| default_target(grid));
            let trace = run_diffusion(&graph, &seeds, target, budget.unwrap_or_else(|| default_budget(grid)))?;
            let mut w = output(out.as_deref())?;
            trace.write_to(&mut w)?;
            w.flush()?;
        }
        Command::Sweep { config, seed, out } => {
            let mut cfg = SweepConfig::parse(&std::fs::read_to_string(&config)?)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if out.is_some() {
                cfg.out = out;
            }
            let cells = harness::run_sweep(&cfg)?;
            for c in cells.iter().filter(|c| c.truncated > 0) {
                eprintln!(
                    "warning: {} alpha={} L={}: {} of {} trials hit the step budget",
                    c.mode,
                    c.alpha,
                    c.side,
                    c.truncated,
                    c.times.len()
                );
            }
            let mut w = output(cfg.out.as_deref())?;
            harness::write_csv(&cells, &mut w)?;
            w.flush()?;
        }
        Command::Fit { csv, out } => {
            let rows = harness::read_csv(File::open(&csv)?)?;
            let (fits, skipped) = harness::fit_rows(&rows);
            for reason in &skipped {
                eprintln!("skipped {reason}");
            }
            if fits.is_empty() {
                return Err(Error::Domain("no group has enough points to fit".into()));
            }
            let mut w = output(out.as_deref())?;
            harness::write_fits(&fits, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

/// Runs `swc` with the given arguments (including the program name) and
/// returns the process exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("run `swc --help` for usage");
            1
        }
    }
}
