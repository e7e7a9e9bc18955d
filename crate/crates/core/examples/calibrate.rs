//! Prints the scheme x knowledge x strategy TSR table for a config, with
//! `key=value` overrides on the command line (sweepable keys only).

use std::time::Instant;

use trackgame::harness::ExperimentConfig;
use trackgame::harness::experiment::run_experiment_in_memory;

fn main() {
    let mut cfg = ExperimentConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        match k {
            "seed" => cfg.seed = v.parse().unwrap(),
            "n_substitutes" => {
                let n: u64 = v.parse().unwrap();
                cfg.world.n_extractors = n as usize + 1;
                cfg.protection.substitute_extractors = (1..=n).map(trackgame::ExtractorId).collect();
            }
            _ => cfg = cfg.with_param(k, v.parse().unwrap()).unwrap(),
        }
    }
    let t = Instant::now();
    let res = run_experiment_in_memory(&cfg).unwrap();
    for a in &res.aggregates {
        println!(
            "{:<11} {:<9} {:<7} tsr={:.3} fp={:.1} T={:.1} disp={:.3}",
            a.scheme.to_string(),
            a.knowledge.to_string(),
            a.strategy.to_string(),
            a.tsr.unwrap_or(f64::NAN),
            a.fp_mean,
            a.mean_iterations,
            a.mean_displacement
        );
    }
    eprintln!("elapsed {:?}", t.elapsed());
}
