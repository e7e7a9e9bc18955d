//! End-to-end runs: world -> trackee protection -> tracking -> metrics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::config::{ExperimentConfig, TargetSide};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::gallery::GalleryDatabase;
use crate::protection::{baseline_protect, ProtectionConfig, Scheme};
use crate::seed;
use crate::tracking::{
    preprocess_all, run_dynamic_verification, run_recognition_cached, run_static_verification, InitialKnowledge,
    MatchCache, Mode, Query, Strategy, TrackingReport, TrackingScenario,
};
use crate::world::{generate_world, Extractor, IdentityLabel, ImageRecord, World};

/// Picks `n` distinct trackees uniformly among identities that have at least
/// two images.
pub fn select_trackees(world: &World, n: usize, master_seed: u64) -> Result<Vec<IdentityLabel>> {
    let mut counts: BTreeMap<IdentityLabel, usize> = BTreeMap::new();
    for img in &world.images {
        *counts.entry(img.identity).or_default() += 1;
    }
    let eligible: Vec<IdentityLabel> = counts.into_iter().filter(|&(_, c)| c >= 2).map(|(l, _)| l).collect();
    if eligible.len() < n {
        return Err(Error::InvalidConfig(format!(
            "need {n} trackees but only {} identities have >= 2 images",
            eligible.len()
        )));
    }
    let mut rng = seed::rng(seed::derive(master_seed, &[seed::label("trackees")]));
    let mut picked: Vec<IdentityLabel> = eligible.choose_multiple(&mut rng, n).copied().collect();
    picked.sort();
    Ok(picked)
}

/// Gallery/query split of every identity's images.
#[derive(Debug, Clone)]
pub struct Split {
    pub gallery: Vec<u64>,
    pub queries: Vec<u64>,
}

/// For each identity, `floor(fraction * n)` randomly chosen images become
/// queries and the rest stay in the gallery (at least one always does).
pub fn split_identities(world: &World, fraction: f64, master_seed: u64) -> BTreeMap<IdentityLabel, Split> {
    let mut by_id: BTreeMap<IdentityLabel, Vec<u64>> = BTreeMap::new();
    for img in &world.images {
        by_id.entry(img.identity).or_default().push(img.image_id);
    }
    by_id
        .into_iter()
        .map(|(label, mut ids)| {
            let mut rng = seed::rng(seed::derive(master_seed, &[seed::label("split"), label.0]));
            ids.shuffle(&mut rng);
            let n_q = ((fraction * ids.len() as f64).floor() as usize).min(ids.len() - 1);
            let queries = ids.split_off(ids.len() - n_q);
            (label, Split { gallery: ids, queries })
        })
        .collect()
}

/// Everything about one trackee that does not depend on the protection scheme.
pub struct TrackeeSetup<'w> {
    pub index: usize,
    pub trackee: IdentityLabel,
    /// The single image initially known to the tracker.
    pub seed_image: &'w ImageRecord,
    /// The trackee's posted images, in generation order.
    pub posted: Vec<&'w ImageRecord>,
    base_gallery: GalleryDatabase,
    base_queries: Vec<Query>,
    base_cache: MatchCache,
    tracker: &'w Extractor,
}

fn embed_query(tracker: &Extractor, r: &ImageRecord) -> Result<Query> {
    Ok(Query {
        image_id: r.image_id,
        identity: r.identity,
        embedding: tracker.embed(&r.latent)?,
    })
}

impl<'w> TrackeeSetup<'w> {
    pub fn new(
        world: &'w World,
        config: &ExperimentConfig,
        split: &BTreeMap<IdentityLabel, Split>,
        index: usize,
        trackee: IdentityLabel,
    ) -> Result<Self> {
        let tracker = world.extractor(config.tracking.tracker_extractor)?;
        let by_id: BTreeMap<u64, &ImageRecord> = world.images.iter().map(|r| (r.image_id, r)).collect();

        let mut base_gallery = GalleryDatabase::new();
        let mut base_queries = Vec::new();
        for (label, s) in split {
            if *label == trackee {
                continue;
            }
            for id in &s.gallery {
                let r = by_id[id];
                base_gallery.insert(tracker.embed(&r.latent)?, r.identity, r.image_id)?;
            }
            for id in &s.queries {
                base_queries.push(embed_query(tracker, by_id[id])?);
            }
        }
        let base_queries = preprocess_all(
            &base_queries,
            config.tracking.preprocessing_sigma,
            seed::derive(config.seed, &[seed::label("preprocess")]),
        );
        let base_cache = MatchCache::build(&base_gallery, &base_queries)?;

        let mut own: Vec<&ImageRecord> = world.images_of(trackee).collect();
        own.sort_by_key(|r| r.image_id);
        let seed_image = own[0];
        let posted = own[1..].to_vec();
        Ok(TrackeeSetup {
            index,
            trackee,
            seed_image,
            posted,
            base_gallery,
            base_queries,
            base_cache,
            tracker,
        })
    }

    /// Protection seed for this trackee; identical across schemes and sweep
    /// cells so that comparisons are paired.
    pub fn protection_seed(&self, master_seed: u64) -> u64 {
        seed::derive(master_seed, &[seed::label("protect"), self.index as u64])
    }

    /// Runs tracking for one protected trackee set under one scenario.
    fn track(
        &self,
        config: &ExperimentConfig,
        gallery_seed: &ImageRecord,
        trackee_queries: &[&ImageRecord],
        scenario: &TrackingScenario,
    ) -> Result<TrackingReport> {
        let mut extra = trackee_queries
            .iter()
            .map(|r| embed_query(self.tracker, r))
            .collect::<Result<Vec<_>>>()?;
        extra = preprocess_all(
            &extra,
            scenario.preprocessing_sigma,
            seed::derive(config.seed, &[seed::label("preprocess")]),
        );
        let seed_embedding = self.tracker.embed(&gallery_seed.latent)?;
        let mut queries = self.base_queries.clone();
        queries.extend(extra.iter().cloned());

        match scenario.mode {
            Mode::Recognition => {
                let mut cache = self.base_cache.clone();
                cache.extend(MatchCache::build(&self.base_gallery, &extra)?)?;
                let mut gallery = self.base_gallery.clone();
                gallery.insert(seed_embedding, self.trackee, gallery_seed.image_id)?;
                run_recognition_cached(gallery, &queries, self.trackee, scenario, scenario.strategy, &cache)
            }
            Mode::Verification => {
                let refs: Vec<Embedding> = vec![seed_embedding];
                match scenario.strategy {
                    Strategy::Static => run_static_verification(&refs, &queries, self.trackee, scenario),
                    Strategy::Dynamic => run_dynamic_verification(&refs, &queries, self.trackee, scenario),
                }
            }
        }
    }
}

/// One tracking run for one trackee.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    pub scheme: Scheme,
    pub trackee_index: usize,
    pub trackee: u64,
    pub strategy: Strategy,
    pub knowledge: InitialKnowledge,
    pub mean_displacement: f64,
    pub report: TrackingReport,
}

/// All runs for one trackee under one scheme and protection config.
pub fn run_scheme_for_trackee(
    world: &World,
    config: &ExperimentConfig,
    setup: &TrackeeSetup<'_>,
    scheme: Scheme,
    protection: &ProtectionConfig,
) -> Result<Vec<RunRecord>> {
    let mut pconf = protection.clone();
    pconf.seed = setup.protection_seed(config.seed);

    // the gallery seed is protected by the same pipeline as the posted images
    let mut chain: Vec<ImageRecord> = vec![setup.seed_image.clone()];
    chain.extend(setup.posted.iter().map(|r| (*r).clone()));
    let protected = baseline_protect(scheme, &chain, &pconf, world)?;
    let protected_records: Vec<ImageRecord> = protected.records().cloned().collect();
    let protected_posted: Vec<&ImageRecord> = protected_records[1..].iter().collect();
    let mean_displacement = if protected.images.len() > 1 {
        protected.images[1..].iter().map(|p| p.displacement).sum::<f64>() / (protected.images.len() - 1) as f64
    } else {
        0.0
    };

    let mut out = Vec::new();
    for &knowledge in &config.knowledge {
        for &strategy in &config.strategies {
            let scenario = TrackingScenario {
                strategy,
                initial_knowledge: knowledge,
                ..config.tracking.clone()
            };
            let gallery_seed = match knowledge {
                InitialKnowledge::Clean => setup.seed_image,
                InitialKnowledge::Protected => &protected_records[0],
            };
            let report = match config.target {
                TargetSide::Query => setup.track(config, gallery_seed, &protected_posted, &scenario)?,
                TargetSide::Gallery => setup.track(config, gallery_seed, &setup.posted, &scenario)?,
            };
            out.push(RunRecord {
                run_id: format!("{}-{}-{}-t{}", scheme, knowledge, strategy, setup.index),
                scheme,
                trackee_index: setup.index,
                trackee: setup.trackee.0,
                strategy,
                knowledge,
                mean_displacement,
                report,
            });
        }
    }
    Ok(out)
}

/// A world plus per-trackee setups, shared by every cell of a sweep.
pub struct Prepared<'w> {
    pub world: &'w World,
    pub setups: Vec<TrackeeSetup<'w>>,
}

impl<'w> Prepared<'w> {
    pub fn new(world: &'w World, config: &ExperimentConfig) -> Result<Self> {
        let split = split_identities(world, config.query_fraction, config.seed);
        let trackees = select_trackees(world, config.n_trackees, config.seed)?;
        let setups = trackees
            .iter()
            .enumerate()
            .map(|(i, t)| TrackeeSetup::new(world, config, &split, i, *t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared { world, setups })
    }

    /// Runs `scheme` with `protection` for every trackee.
    pub fn run_scheme(
        &self,
        config: &ExperimentConfig,
        scheme: Scheme,
        protection: &ProtectionConfig,
    ) -> Result<Vec<RunRecord>> {
        let mut out = Vec::new();
        for s in &self.setups {
            out.extend(run_scheme_for_trackee(self.world, config, s, scheme, protection)?);
        }
        Ok(out)
    }
}

/// Trackee-averaged results for one (scheme, knowledge, strategy) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub scheme: Scheme,
    pub knowledge: InitialKnowledge,
    pub strategy: Strategy,
    /// Mean over trackees with at least one posted image.
    pub tsr: Option<f64>,
    pub psr: Option<f64>,
    pub fp_mean: f64,
    pub mean_iterations: f64,
    pub mean_displacement: f64,
    pub trackees: usize,
}

pub fn aggregate(runs: &[RunRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(Scheme, u8, u8), Vec<&RunRecord>> = BTreeMap::new();
    for r in runs {
        groups
            .entry((r.scheme, r.knowledge as u8, r.strategy as u8))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let n = rs.len() as f64;
            let tsrs: Vec<f64> = rs.iter().filter_map(|r| r.report.cumulative_tsr).collect();
            let tsr = (!tsrs.is_empty()).then(|| tsrs.iter().sum::<f64>() / tsrs.len() as f64);
            Aggregate {
                scheme: rs[0].scheme,
                knowledge: rs[0].knowledge,
                strategy: rs[0].strategy,
                tsr,
                psr: tsr.map(|t| 1.0 - t),
                fp_mean: rs.iter().map(|r| r.report.cumulative_false_positives as f64).sum::<f64>() / n,
                mean_iterations: rs.iter().map(|r| r.report.total_iterations as f64).sum::<f64>() / n,
                mean_displacement: rs.iter().map(|r| r.mean_displacement).sum::<f64>() / n,
                trackees: rs.len(),
            }
        })
        .collect()
}

/// Result of [`run_experiment_in_memory`].
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentResult {
    pub fn tsr(&self, scheme: Scheme, knowledge: InitialKnowledge, strategy: Strategy) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.scheme == scheme && a.knowledge == knowledge && a.strategy == strategy)
            .and_then(|a| a.tsr)
    }
}

pub fn run_experiment_in_memory(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let world = generate_world(&config.world, config.seed)?;
    run_on_world(&world, config)
}

pub fn run_on_world(world: &World, config: &ExperimentConfig) -> Result<ExperimentResult> {
    let prepared = Prepared::new(world, config)?;
    let mut runs = Vec::new();
    for &scheme in &config.schemes {
        runs.extend(prepared.run_scheme(config, scheme, &config.protection)?);
    }
    let aggregates = aggregate(&runs);
    Ok(ExperimentResult { runs, aggregates })
}
