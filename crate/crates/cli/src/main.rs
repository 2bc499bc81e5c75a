//! `distal-lab`: run experiments and write CSV reports.
//!
//! Exit status is 0 when every asserted check passes, 1 when some check
//! fails and 2 on usage or input errors.

use clap::{Args, Parser, Subcommand};
use distal_lab::experiment::{emit_plotdata, run_experiment, ExperimentConfig, ExperimentKind, PerturbMode, PlotKind};
use distal_lab::LemmaGrid;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "distal-lab", version, about = "Perturbation and ergodicity experiments for compact-group skew products")]
struct Cli {
    /// Base seed; every random choice is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "DISTAL_LAB_THREADS")]
    threads: Option<usize>,

    /// Where to write the report; stdout if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Birkhoff-average scores of a rotation, odometer or skew product.
    Ergodicity(ErgodicityArgs),
    /// Build a perturbation and check the open condition.
    Perturb(PerturbArgs),
    /// Check the quantitative lemma bounds over their grids.
    Lemmas(LemmaArgs),
    /// Build a Rokhlin tower and dump its levels.
    Tower(TowerArgs),
    /// Run an experiment described by a TOML file.
    Run {
        config: PathBuf,
    },
    /// Extract two-column plot data from a report.
    Plotdata {
        report: PathBuf,
        /// score-vs-n or fraction-vs-k0; guessed from the header if absent.
        #[arg(long)]
        kind: Option<String>,
    },
}

#[derive(Args, Debug)]
struct ErgodicityArgs {
    /// rotation:golden, rotation:sqrt2, rotation:<angle> or odometer:<depth>.
    #[arg(long)]
    system: String,
    /// Fiber group; the base alone if absent.
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    cocycle: Option<String>,
    /// Orbit lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<u64>,
    /// Number of sampled initial points.
    #[arg(long)]
    starts: Option<usize>,
    /// Fail when some score at the largest n exceeds this.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    /// rotation:golden, rotation:sqrt2, rotation:<angle> or odometer:<depth>.
    #[arg(long)]
    system: String,
    /// torus:<d>, cyclic:<m>, o2 or product(<g>,<h>).
    #[arg(long)]
    group: String,
    /// The cocycle to perturb; the identity if absent.
    #[arg(long)]
    cocycle: Option<String>,
    /// One target, or two (comma separated) in relative mode.
    #[arg(long, value_delimiter = ',', required = true)]
    target: Vec<String>,
    /// Closeness radius around the target.
    #[arg(long)]
    a: Option<f64>,
    /// Allowed fraction of failing k0 (relative mode).
    #[arg(long)]
    b: Option<f64>,
    /// Distance budget for the perturbation.
    #[arg(long)]
    delta: Option<f64>,
    /// Requested half-height of the tower.
    #[arg(long = "N")]
    half_height: Option<usize>,
    /// Number of seeds to sweep.
    #[arg(long)]
    seeds: Option<usize>,
    /// simple or relative.
    #[arg(long)]
    mode: Option<String>,
    /// Extending torus in relative mode.
    #[arg(long)]
    extension: Option<String>,
    /// Cocycle into the extending torus.
    #[arg(long)]
    gamma: Option<String>,
    /// Size of the Haar k0 grid (relative mode).
    #[arg(long)]
    k0_grid: Option<usize>,
    /// Constant in the O(1/N) overlap bound; raises the minimum N.
    #[arg(long)]
    del_constant: Option<f64>,
}

#[derive(Args, Debug)]
struct LemmaArgs {
    #[arg(long)]
    randomp_trials: Option<usize>,
    #[arg(long)]
    del_instances: Option<usize>,
    #[arg(long)]
    simple_trials: Option<usize>,
}

#[derive(Args, Debug)]
struct TowerArgs {
    #[arg(long)]
    system: String,
    #[arg(long)]
    height: usize,
    /// Allowed uncovered measure.
    #[arg(long)]
    eps: Option<f64>,
    /// Base interval position, in turns.
    #[arg(long)]
    offset: Option<f64>,
    /// With a cocycle, levels are split until it is constant on each.
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    cocycle: Option<String>,
}

fn config_from(command: Command) -> Result<Option<ExperimentConfig>, String> {
    let cfg = match command {
        Command::Ergodicity(a) => {
            let mut c = ExperimentConfig::new(ExperimentKind::Ergodicity);
            c.system = Some(a.system);
            c.group = a.group;
            c.cocycle = a.cocycle;
            c.n = a.n;
            c.starts = a.starts;
            c.threshold = a.threshold;
            c
        }
        Command::Perturb(a) => {
            let mut c = ExperimentConfig::new(ExperimentKind::Perturb);
            c.system = Some(a.system);
            c.group = Some(a.group);
            c.cocycle = a.cocycle;
            c.target = a.target;
            c.a = a.a;
            c.b = a.b;
            c.delta = a.delta;
            c.half_height = a.half_height;
            c.seeds = a.seeds;
            c.mode = match a.mode.as_deref() {
                None => None,
                Some("simple") => Some(PerturbMode::Simple),
                Some("relative") => Some(PerturbMode::Relative),
                Some(m) => return Err(format!("unknown mode `{m}`; expected simple or relative")),
            };
            c.extension = a.extension;
            c.gamma = a.gamma;
            c.k0_grid = a.k0_grid;
            c.del_constant = a.del_constant;
            c
        }
        Command::Lemmas(a) => {
            let mut c = ExperimentConfig::new(ExperimentKind::Lemmas);
            let mut g = LemmaGrid::default();
            if let Some(t) = a.randomp_trials {
                g.randomp_trials = t;
            }
            if let Some(t) = a.del_instances {
                g.del_instances = t;
            }
            if let Some(t) = a.simple_trials {
                g.simple_trials = t;
            }
            c.lemmas = Some(g);
            c
        }
        Command::Tower(a) => {
            let mut c = ExperimentConfig::new(ExperimentKind::Tower);
            c.system = Some(a.system);
            c.height = Some(a.height);
            c.eps = a.eps;
            c.offset = a.offset;
            c.group = a.group;
            c.cocycle = a.cocycle;
            c
        }
        Command::Run { config } => ExperimentConfig::load(&config).map_err(|e| format!("{}: {e}", config.display()))?,
        Command::Plotdata { .. } => return Ok(None),
    };
    Ok(Some(cfg))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn plotdata(report: &Path, kind: Option<&str>, out: Option<&Path>) -> Result<(), String> {
    let text = std::fs::read_to_string(report).map_err(|e| format!("{}: {e}", report.display()))?;
    let kind = match kind {
        Some(k) => k.parse::<PlotKind>().map_err(|e| e.to_string())?,
        None => PlotKind::detect(&text).ok_or_else(|| format!("{}: cannot tell the report kind; pass --kind", report.display()))?,
    };
    let data = emit_plotdata(&text, kind).map_err(|e| e.to_string())?;
    write_out(out, &data)
}

fn run(cli: Cli) -> Result<bool, String> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| format!("thread pool: {e}"))?;
    }
    if let Command::Plotdata { report, kind } = &cli.command {
        plotdata(report, kind.as_deref(), cli.out.as_deref())?;
        return Ok(true);
    }
    let mut cfg = config_from(cli.command)?.expect("not plotdata");
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.display().to_string());
    }
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    write_out(cfg.out.as_deref().map(Path::new), &report.csv())?;
    for line in &report.summary {
        eprintln!("{line}");
    }
    eprintln!("{}", if report.passed { "PASS" } else { "FAIL" });
    Ok(report.passed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
