//! Report files for experiments, sweeps and ablations.
//!
//! Every file under the output directory is a pure function of the config,
//! so re-running reproduces it byte for byte. Wall-clock timing is the one
//! exception and goes to its own `timing.json`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::experiment::{aggregate, run_on_world, Aggregate, Prepared, RunRecord};
use crate::error::{Error, Result};
use crate::format::write_atomic;
use crate::protection::ProtectionConfig;
use crate::world::{generate_world, World};

pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TABLE_FILE: &str = "table.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TIMING_JSON: &str = "timing.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn iterations_csv(runs: &[RunRecord]) -> String {
    let mut s = String::from("run_id,iteration,tp,fp,gallery_size\n");
    for r in runs {
        for it in &r.report.iterations {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.run_id, it.iteration, it.true_positives, it.false_positives, it.gallery_size_after
            );
        }
    }
    s
}

pub fn summary_csv(runs: &[RunRecord]) -> String {
    let mut s = String::from("run_id,strategy,mode,initial_knowledge,tsr,psr,fp_total,T\n");
    for r in runs {
        let rep = &r.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.run_id,
            rep.strategy,
            rep.mode,
            r.knowledge,
            opt(rep.cumulative_tsr),
            opt(rep.cumulative_psr),
            rep.cumulative_false_positives,
            rep.total_iterations
        );
    }
    s
}

const AGG_HEADER: &str = "scheme,initial_knowledge,strategy,tsr,psr,fp_mean,T_mean,mean_displacement";

fn agg_fields(a: &Aggregate) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        a.scheme,
        a.knowledge,
        a.strategy,
        opt(a.tsr),
        opt(a.psr),
        a.fp_mean,
        a.mean_iterations,
        a.mean_displacement
    )
}

/// Trackee-averaged table: one row per (scheme, knowledge, strategy).
pub fn table_csv(aggregates: &[Aggregate]) -> String {
    let mut s = format!("{AGG_HEADER}\n");
    for a in aggregates {
        s.push_str(&agg_fields(a));
        s.push('\n');
    }
    s
}

#[derive(Serialize)]
struct TrackeeEntry<'a> {
    run_id: &'a str,
    trackee_index: usize,
    trackee: u64,
    scheme: String,
    initial_knowledge: String,
    strategy: String,
    tsr: Option<f64>,
    psr: Option<f64>,
    fp: usize,
    iterations: usize,
    mean_displacement: f64,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    config: &'a ExperimentConfig,
    per_trackee: Vec<TrackeeEntry<'a>>,
    averaged: &'a [Aggregate],
}

pub fn summary_json(config: &ExperimentConfig, runs: &[RunRecord], aggregates: &[Aggregate]) -> Result<String> {
    let doc = SummaryDoc {
        config,
        per_trackee: runs
            .iter()
            .map(|r| TrackeeEntry {
                run_id: &r.run_id,
                trackee_index: r.trackee_index,
                trackee: r.trackee,
                scheme: r.scheme.to_string(),
                initial_knowledge: r.knowledge.to_string(),
                strategy: r.strategy.to_string(),
                tsr: r.report.cumulative_tsr,
                psr: r.report.cumulative_psr,
                fp: r.report.cumulative_false_positives,
                iterations: r.report.total_iterations,
                mean_displacement: r.mean_displacement,
            })
            .collect(),
        averaged: aggregates,
    };
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join(name);
    write_atomic(&p, text.as_bytes())?;
    Ok(p)
}

fn write_timing(dir: &Path, phases: &[(&str, f64)]) -> Result<()> {
    let map: serde_json::Map<String, serde_json::Value> =
        phases.iter().map(|(k, v)| (format!("{k}_seconds"), serde_json::json!(v))).collect();
    let mut s = serde_json::to_string_pretty(&map).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    write(dir, TIMING_JSON, &s)?;
    Ok(())
}

/// Outcome of a run that wrote report files.
#[derive(Debug, Clone)]
pub struct Written {
    pub files: Vec<PathBuf>,
    pub aggregates: Vec<Aggregate>,
}

/// Full experiment: every scheme x knowledge x strategy cell, averaged over
/// trackees. Writes iteration rows, per-run summary, the averaged table and
/// a JSON summary into `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Written> {
    config.validate()?;
    let start = Instant::now();
    let world = generate_world(&config.world, config.seed)?;
    write_experiment(config, &world, start)
}

/// As [`run_experiment`] but on a given world (e.g. one loaded from disk).
pub fn run_experiment_on(config: &ExperimentConfig, world: &World) -> Result<Written> {
    config.validate()?;
    write_experiment(config, world, Instant::now())
}

fn write_experiment(config: &ExperimentConfig, world: &World, start: Instant) -> Result<Written> {
    let t_world = start.elapsed().as_secs_f64();
    let res = run_on_world(world, config)?;
    let t_runs = start.elapsed().as_secs_f64() - t_world;

    let dir = &config.output_dir;
    let files = vec![
        write(dir, ITERATIONS_FILE, &iterations_csv(&res.runs))?,
        write(dir, SUMMARY_FILE, &summary_csv(&res.runs))?,
        write(dir, TABLE_FILE, &table_csv(&res.aggregates))?,
        write(dir, SUMMARY_JSON, &summary_json(config, &res.runs, &res.aggregates)?)?,
    ];
    write_timing(
        dir,
        &[("world", t_world), ("runs", t_runs), ("total", start.elapsed().as_secs_f64())],
    )?;
    Ok(Written {
        files,
        aggregates: res.aggregates,
    })
}

/// Cartesian product of the grid, keys in sorted order, values in listed order.
pub fn grid_cells(config: &ExperimentConfig) -> Result<Vec<Vec<(String, f64)>>> {
    if config.sweep.grid.is_empty() {
        return Err(Error::Config {
            key: "sweep.grid".into(),
            message: "sweep needs at least one parameter".into(),
        });
    }
    let mut cells: Vec<Vec<(String, f64)>> = vec![vec![]];
    for (k, vals) in &config.sweep.grid {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                vals.iter().map(move |&v| {
                    let mut c = c.clone();
                    c.push((k.clone(), v));
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

fn cell_config(base: &ExperimentConfig, cell: &[(String, f64)]) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    for (k, v) in cell {
        c = c.with_param(k, *v)?;
    }
    Ok(c)
}

/// Runs `config.sweep.scheme` for one sweep cell. Seeds depend only on the
/// master seed and trackee index, so a cell's result does not depend on which
/// other cells exist or their order.
pub fn run_cell(base: &ExperimentConfig, cell: &[(String, f64)]) -> Result<Vec<Aggregate>> {
    let c = cell_config(base, cell)?;
    let world = generate_world(&c.world, c.seed)?;
    let prepared = Prepared::new(&world, &c)?;
    let runs = prepared.run_scheme(&c, c.sweep.scheme, &c.protection)?;
    Ok(aggregate(&runs))
}

/// One sweep cell's parameter assignment.
pub type Cell = Vec<(String, f64)>;

pub fn sweep_csv(keys: &[String], rows: &[(Cell, Vec<Aggregate>)]) -> String {
    let mut s = String::new();
    for k in keys {
        s.push_str(k);
        s.push(',');
    }
    s.push_str(AGG_HEADER);
    s.push('\n');
    for (cell, aggs) in rows {
        for a in aggs {
            for (_, v) in cell {
                let _ = write!(s, "{v},");
            }
            s.push_str(&agg_fields(a));
            s.push('\n');
        }
    }
    s
}

/// Hyperparameter sweep over `config.sweep.grid`; writes `sweep.csv`.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Written> {
    config.validate()?;
    let start = Instant::now();
    let cells = grid_cells(config)?;
    // reject bad values before spending time on any cell
    for cell in &cells {
        cell_config(config, cell)?;
    }

    // cells that leave the world and query preprocessing alone share one setup
    let world = generate_world(&config.world, config.seed)?;
    let prepared = Prepared::new(&world, config)?;
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let c = cell_config(config, &cell)?;
        let aggs = if c.world == config.world && c.tracking.preprocessing_sigma == config.tracking.preprocessing_sigma {
            aggregate(&prepared.run_scheme(&c, c.sweep.scheme, &c.protection)?)
        } else {
            run_cell(config, &cell)?
        };
        rows.push((cell, aggs));
    }
    let keys: Vec<String> = config.sweep.grid.keys().cloned().collect();
    let files = vec![write(&config.output_dir, SWEEP_FILE, &sweep_csv(&keys, &rows))?];
    write_timing(&config.output_dir, &[("total", start.elapsed().as_secs_f64())])?;
    Ok(Written {
        files,
        aggregates: rows.into_iter().flat_map(|(_, a)| a).collect(),
    })
}

/// One loss-term ablation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Full,
    DropGuide,
    DropDiv,
    DropBoth,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Full, Arm::DropGuide, Arm::DropDiv, Arm::DropBoth];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::DropGuide => "drop_guide",
            Arm::DropDiv => "drop_div",
            Arm::DropBoth => "drop_both",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        Arm::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Zeroes the weights of the dropped terms.
    pub fn apply(self, base: &ProtectionConfig) -> ProtectionConfig {
        let mut p = base.clone();
        if matches!(self, Arm::DropGuide | Arm::DropBoth) {
            p.alpha1 = 0.0;
        }
        if matches!(self, Arm::DropDiv | Arm::DropBoth) {
            p.alpha2 = 0.0;
        }
        p
    }
}

/// Ablation arms evaluated on one shared setup with identical seeds.
pub fn ablation_results(config: &ExperimentConfig, arms: &[Arm]) -> Result<Vec<(Arm, Vec<Aggregate>)>> {
    config.validate()?;
    let world = generate_world(&config.world, config.seed)?;
    let prepared = Prepared::new(&world, config)?;
    arms.iter()
        .map(|&arm| {
            let p = arm.apply(&config.protection);
            Ok((arm, aggregate(&prepared.run_scheme(config, config.sweep.scheme, &p)?)))
        })
        .collect()
}

pub fn ablation_csv(rows: &[(Arm, Vec<Aggregate>)]) -> String {
    let mut s = format!("arm,{AGG_HEADER}\n");
    for (arm, aggs) in rows {
        for a in aggs {
            let _ = writeln!(s, "{},{}", arm.name(), agg_fields(a));
        }
    }
    s
}

/// Runs the listed arms (all four if empty); writes `ablation.csv`.
pub fn run_ablation(config: &ExperimentConfig, arms: &[Arm]) -> Result<Written> {
    let start = Instant::now();
    let arms = if arms.is_empty() { &Arm::ALL[..] } else { arms };
    let rows = ablation_results(config, arms)?;
    let files = vec![write(&config.output_dir, ABLATION_FILE, &ablation_csv(&rows))?];
    write_timing(&config.output_dir, &[("total", start.elapsed().as_secs_f64())])?;
    Ok(Written {
        files,
        aggregates: rows.into_iter().flat_map(|(_, a)| a).collect(),
    })
}
