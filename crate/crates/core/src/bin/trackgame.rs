//! Command-line front end: world generation, protection, tracking runs,
//! sweeps, ablations and report printing.
//!
//! Exit codes: 0 success, 2 configuration error, 1 any other failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trackgame::format::{export_records, export_world, import_embeddings};
use trackgame::harness::experiment::Prepared;
use trackgame::harness::report::{self, Arm};
use trackgame::harness::ExperimentConfig;
use trackgame::protection::{baseline_protect, Scheme};
use trackgame::world::ImageRecord;
use trackgame::{generate_world, Error};

#[derive(Parser)]
#[command(name = "trackgame", version, about = "Tracker-versus-trackee face recognition simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply to every missing key.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world and write it as an embedding file.
    Gen(Common),
    /// Protect every trackee's images and write the protected records.
    Protect {
        #[command(flatten)]
        common: Common,
        /// Scheme to apply (defaults to the config's sweep scheme).
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Run the full protection + tracking experiment and write reports.
    Track {
        #[command(flatten)]
        common: Common,
        /// Use this embedding file instead of generating the world.
        #[arg(long, value_name = "PATH")]
        world: Option<PathBuf>,
    },
    /// Hyperparameter sweep over the config's grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Extra grid axis, e.g. `--grid delta=0.1,0.2,0.4`.
        #[arg(long, value_name = "KEY=V1,V2,..")]
        grid: Vec<String>,
    },
    /// Loss-term ablation of the sweep scheme.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated arms out of full, drop_guide, drop_div, drop_both.
        #[arg(long, value_delimiter = ',')]
        arms: Vec<String>,
    },
    /// Print the averaged table from a finished run directory.
    Report(Common),
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_scheme(s: &str) -> Result<Scheme, Error> {
    Scheme::ALL
        .into_iter()
        .find(|sc| sc.name() == s)
        .ok_or_else(|| config_error("scheme", format!("unknown scheme `{s}`")))
}

fn print_written(w: &report::Written) {
    for f in &w.files {
        println!("wrote {}", f.display());
    }
}

fn gen(common: &Common) -> Result<(), Error> {
    let cfg = load(common)?;
    let world = generate_world(&cfg.world, cfg.seed)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("world.csv");
    export_world(&world, &path)?;
    println!("wrote {} ({} images, d={})", path.display(), world.images.len(), world.dims);
    Ok(())
}

fn protect(common: &Common, scheme: Option<&str>) -> Result<(), Error> {
    let cfg = load(common)?;
    let scheme = match scheme {
        Some(s) => parse_scheme(s)?,
        None => cfg.sweep.scheme,
    };
    let world = generate_world(&cfg.world, cfg.seed)?;
    let prepared = Prepared::new(&world, &cfg)?;
    let mut out: Vec<ImageRecord> = Vec::new();
    for setup in &prepared.setups {
        let mut pconf = cfg.protection.clone();
        pconf.seed = setup.protection_seed(cfg.seed);
        let mut chain = vec![setup.seed_image.clone()];
        chain.extend(setup.posted.iter().map(|r| (*r).clone()));
        let set = baseline_protect(scheme, &chain, &pconf, &world)?;
        println!(
            "trackee {} ({} images): mean displacement {:.4}",
            setup.trackee.0,
            set.images.len(),
            set.mean_displacement()
        );
        out.extend(set.records().cloned());
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join(format!("protected_{}.csv", scheme.name()));
    export_records(&out, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn track(common: &Common, world: Option<&Path>) -> Result<(), Error> {
    let cfg = load(common)?;
    let w = match world {
        Some(p) => report::run_experiment_on(&cfg, &import_embeddings(p)?)?,
        None => report::run_experiment(&cfg)?,
    };
    print_written(&w);
    Ok(())
}

fn sweep(common: &Common, grid: &[String]) -> Result<(), Error> {
    let mut cfg = load(common)?;
    for g in grid {
        let (k, vals) = g
            .split_once('=')
            .ok_or_else(|| config_error("grid", format!("expected KEY=V1,V2 but got `{g}`")))?;
        let vals = vals
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| config_error(&format!("sweep.grid.{k}"), e.to_string()))?;
        cfg.sweep.grid.insert(k.to_string(), vals);
    }
    cfg.validate()?;
    print_written(&report::run_sweep(&cfg)?);
    Ok(())
}

fn ablate(common: &Common, arms: &[String]) -> Result<(), Error> {
    let cfg = load(common)?;
    let arms = arms
        .iter()
        .map(|a| Arm::parse(a).ok_or_else(|| config_error("arms", format!("unknown arm `{a}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    print_written(&report::run_ablation(&cfg, &arms)?);
    Ok(())
}

fn print_report(common: &Common) -> Result<(), Error> {
    let cfg = load(common)?;
    let path = cfg.output_dir.join(report::TABLE_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncol)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    for r in &rows {
        let line: Vec<String> = r.iter().enumerate().map(|(i, s)| format!("{s:<w$}", w = widths[i])).collect();
        println!("{}", line.join("  ").trim_end());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(c) => gen(c),
        Command::Protect { common, scheme } => protect(common, scheme.as_deref()),
        Command::Track { common, world } => track(common, world.as_deref()),
        Command::Sweep { common, grid } => sweep(common, grid),
        Command::Ablate { common, arms } => ablate(common, arms),
        Command::Report(c) => print_report(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config { .. } | Error::InvalidConfig(_))) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
