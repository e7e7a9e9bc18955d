//! Tracker strategies: the static single-pass recognizer, the dynamic
//! gallery-enrichment tracker, its verification-mode counterpart, and the
//! success-rate metrics.
//!
//! Every dynamic iteration matches all remaining queries against the
//! gallery snapshot from the end of the previous iteration, then inserts the
//! whole recognized batch at once under the trackee label. Recognized false
//! positives are inserted too and never retracted.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, Embedding};
use crate::error::{Error, Result};
use crate::gallery::GalleryDatabase;
use crate::seed;
use crate::world::{ExtractorId, IdentityLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Recognition,
    Verification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKnowledge {
    Clean,
    Protected,
}

macro_rules! display_snake {
    ($t:ty { $($v:ident => $s:literal),* }) => {
        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $(Self::$v => $s),* })
            }
        }
    };
}
display_snake!(Strategy { Static => "static", Dynamic => "dynamic" });
display_snake!(Mode { Recognition => "recognition", Verification => "verification" });
display_snake!(InitialKnowledge { Clean => "clean", Protected => "protected" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingScenario {
    pub strategy: Strategy,
    pub mode: Mode,
    pub initial_knowledge: InitialKnowledge,
    pub tracker_extractor: ExtractorId,
    /// Any-reference similarity threshold, used in verification mode only.
    pub verification_threshold: f64,
    /// Tolerated false positives. Reported against, never enforced.
    pub fp_tolerance: usize,
    /// Gaussian jitter applied to every query embedding before matching.
    pub preprocessing_sigma: f64,
}

impl Default for TrackingScenario {
    fn default() -> Self {
        TrackingScenario {
            strategy: Strategy::Dynamic,
            mode: Mode::Recognition,
            initial_knowledge: InitialKnowledge::Clean,
            tracker_extractor: ExtractorId(0),
            verification_threshold: 0.542,
            fp_tolerance: 0,
            preprocessing_sigma: 0.0,
        }
    }
}

impl TrackingScenario {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.verification_threshold) {
            return Err(Error::InvalidConfig(format!(
                "verification_threshold {} outside [-1, 1]",
                self.verification_threshold
            )));
        }
        if !(self.preprocessing_sigma >= 0.0) {
            return Err(Error::InvalidConfig("preprocessing_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// A posted image as seen by the tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub image_id: u64,
    /// Ground-truth identity; never consulted for matching.
    pub identity: IdentityLabel,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Sorted ascending.
    pub recognized_image_ids: Vec<u64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub gallery_size_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub strategy: Strategy,
    pub mode: Mode,
    pub iterations: Vec<IterationRecord>,
    pub total_iterations: usize,
    pub trackee_query_count: usize,
    /// `None` when there are no trackee queries.
    pub cumulative_tsr: Option<f64>,
    pub cumulative_psr: Option<f64>,
    pub cumulative_false_positives: usize,
    /// Whether cumulative false positives stayed within the scenario's tolerance.
    pub within_fp_tolerance: bool,
}

impl TrackingReport {
    fn build(
        strategy: Strategy,
        mode: Mode,
        iterations: Vec<IterationRecord>,
        trackee_query_count: usize,
        fp_tolerance: usize,
    ) -> Self {
        let tp: usize = iterations.iter().map(|i| i.true_positives).sum();
        let fp: usize = iterations.iter().map(|i| i.false_positives).sum();
        let tsr = (trackee_query_count > 0).then(|| tp as f64 / trackee_query_count as f64);
        TrackingReport {
            strategy,
            mode,
            total_iterations: iterations.len(),
            iterations,
            trackee_query_count,
            cumulative_tsr: tsr,
            cumulative_psr: tsr.map(|t| 1.0 - t),
            cumulative_false_positives: fp,
            within_fp_tolerance: fp <= fp_tolerance,
        }
    }

    /// Union of recognized image ids over all iterations.
    pub fn recognized(&self) -> BTreeSet<u64> {
        self.iterations
            .iter()
            .flat_map(|i| i.recognized_image_ids.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tsr: f64,
    pub psr: f64,
    pub fp_total: usize,
    pub fp_per_iteration: Vec<usize>,
}

pub fn compute_metrics(report: &TrackingReport, trackee_query_count: usize) -> Result<Metrics> {
    if trackee_query_count == 0 {
        return Err(Error::ZeroTrackeeQueries);
    }
    let tp: usize = report.iterations.iter().map(|i| i.true_positives).sum();
    let tsr = tp as f64 / trackee_query_count as f64;
    let fp_per_iteration: Vec<usize> = report.iterations.iter().map(|i| i.false_positives).collect();
    Ok(Metrics {
        tsr,
        psr: 1.0 - tsr,
        fp_total: fp_per_iteration.iter().sum(),
        fp_per_iteration,
    })
}

/// Embedding-space analog of input preprocessing: `normalize(q + sigma * g)`.
pub fn preprocess_query(query: &Embedding, sigma: f64, seed: u64) -> Embedding {
    if sigma == 0.0 {
        return query.clone();
    }
    let mut rng = seed::rng(seed);
    let noisy: Vec<f64> = query
        .as_slice()
        .iter()
        .map(|q| q + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Embedding::normalize(&noisy).unwrap_or_else(|_| query.clone())
}

/// Applies [`preprocess_query`] to every query with a per-image seed.
pub fn preprocess_all(queries: &[Query], sigma: f64, seed: u64) -> Vec<Query> {
    queries
        .iter()
        .map(|q| Query {
            embedding: preprocess_query(&q.embedding, sigma, seed::derive(seed, &[q.image_id])),
            ..q.clone()
        })
        .collect()
}

fn trackee_count(queries: &[Query], trackee: IdentityLabel) -> usize {
    queries.iter().filter(|q| q.identity == trackee).count()
}

/// Running best match of one pending query over a growing gallery prefix.
#[derive(Clone, Copy)]
struct Best {
    score: f64,
    identity: IdentityLabel,
}

fn extend_best(best: &mut Option<Best>, gallery: &GalleryDatabase, query: &Embedding, from: usize) -> Result<()> {
    if let Some(m) = gallery.best_from(query, from)? {
        // earlier records win ties
        if best.is_none_or(|b| m.best_score > b.score) {
            *best = Some(Best {
                score: m.best_score,
                identity: m.identity,
            });
        }
    }
    Ok(())
}

/// Best matches of a query list against a gallery prefix, reusable across
/// runs whose galleries extend that prefix.
#[derive(Clone)]
pub struct MatchCache {
    prefix_ids: Vec<u64>,
    best: Vec<Option<Best>>,
}

impl MatchCache {
    pub fn build(gallery: &GalleryDatabase, queries: &[Query]) -> Result<Self> {
        let best = queries
            .iter()
            .map(|q| {
                let mut b = None;
                extend_best(&mut b, gallery, &q.embedding, 0)?;
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MatchCache {
            prefix_ids: gallery.records().iter().map(|r| r.image_id).collect(),
            best,
        })
    }

    /// Appends the entries of `other`, which must cover the same gallery prefix.
    pub fn extend(&mut self, other: MatchCache) -> Result<()> {
        if other.prefix_ids != self.prefix_ids {
            return Err(Error::InvalidConfig("match caches cover different galleries".into()));
        }
        self.best.extend(other.best);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.best.len()
    }

    pub fn is_empty(&self) -> bool {
        self.best.is_empty()
    }

    fn validate(&self, gallery: &GalleryDatabase, n_queries: usize) -> Result<()> {
        let ok = self.best.len() == n_queries
            && gallery.len() >= self.prefix_ids.len()
            && gallery
                .records()
                .iter()
                .zip(&self.prefix_ids)
                .all(|(r, id)| r.image_id == *id);
        if !ok {
            return Err(Error::InvalidConfig(
                "match cache does not cover this gallery prefix and query list".into(),
            ));
        }
        Ok(())
    }
}

/// Recognition run that starts from a precomputed [`MatchCache`]. Results
/// are identical to [`run_static`] / [`run_dynamic`] on the same inputs.
pub fn run_recognition_cached(
    gallery: GalleryDatabase,
    queries: &[Query],
    trackee: IdentityLabel,
    scenario: &TrackingScenario,
    strategy: Strategy,
    cache: &MatchCache,
) -> Result<TrackingReport> {
    cache.validate(&gallery, queries.len())?;
    recognition_loop_from(gallery, queries, trackee, scenario, strategy, Some(cache)).map(|r| r.0)
}

fn recognition_loop(
    gallery: GalleryDatabase,
    queries: &[Query],
    trackee: IdentityLabel,
    scenario: &TrackingScenario,
    strategy: Strategy,
) -> Result<(TrackingReport, GalleryDatabase)> {
    recognition_loop_from(gallery, queries, trackee, scenario, strategy, None)
}

fn recognition_loop_from(
    mut gallery: GalleryDatabase,
    queries: &[Query],
    trackee: IdentityLabel,
    scenario: &TrackingScenario,
    strategy: Strategy,
    cache: Option<&MatchCache>,
) -> Result<(TrackingReport, GalleryDatabase)> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let (mut pending, mut scanned): (Vec<(usize, Option<Best>)>, usize) = match cache {
        Some(c) => (c.best.iter().copied().enumerate().collect(), c.prefix_ids.len()),
        None => ((0..queries.len()).map(|i| (i, None)).collect(), 0),
    };
    let mut iterations = Vec::new();
    loop {
        let snapshot_len = gallery.len();
        let mut hits = Vec::new();
        for (qi, best) in pending.iter_mut() {
            extend_best(best, &gallery, &queries[*qi].embedding, scanned)?;
            if best.map(|b| b.identity) == Some(trackee) {
                hits.push(*qi);
            }
        }
        scanned = snapshot_len;

        let record = finish_iteration(iterations.len() + 1, &hits, queries, trackee, &mut gallery, strategy)?;
        let done = hits.is_empty() || strategy == Strategy::Static;
        iterations.push(record);
        if done {
            break;
        }
        let hit_set: BTreeSet<usize> = hits.into_iter().collect();
        pending.retain(|(qi, _)| !hit_set.contains(qi));
    }
    let report = TrackingReport::build(
        strategy,
        Mode::Recognition,
        iterations,
        trackee_count(queries, trackee),
        scenario.fp_tolerance,
    );
    Ok((report, gallery))
}

fn finish_iteration(
    iteration: usize,
    hits: &[usize],
    queries: &[Query],
    trackee: IdentityLabel,
    gallery: &mut GalleryDatabase,
    strategy: Strategy,
) -> Result<IterationRecord> {
    let mut ids = Vec::with_capacity(hits.len());
    let mut tp = 0;
    for &qi in hits {
        let q = &queries[qi];
        if q.identity == trackee {
            tp += 1;
        }
        ids.push(q.image_id);
        if strategy == Strategy::Dynamic {
            gallery.insert(q.embedding.clone(), trackee, q.image_id)?;
        }
    }
    ids.sort_unstable();
    Ok(IterationRecord {
        iteration,
        true_positives: tp,
        false_positives: ids.len() - tp,
        recognized_image_ids: ids,
        gallery_size_after: gallery.len(),
    })
}

/// One recognition pass of every query against the fixed gallery.
pub fn run_static(
    gallery: &GalleryDatabase,
    queries: &[Query],
    trackee: IdentityLabel,
    scenario: &TrackingScenario,
) -> Result<TrackingReport> {
    recognition_loop(gallery.clone(), queries, trackee, scenario, Strategy::Static).map(|r| r.0)
}

/// Iterative gallery enrichment until an iteration recognizes nothing.
pub fn run_dynamic(
    gallery: GalleryDatabase,
    queries: &[Query],
    trackee: IdentityLabel,
    scenario: &TrackingScenario,
) -> Result<TrackingReport> {
    run_dynamic_with_gallery(gallery, queries, trackee, scenario).map(|r| r.0)
}

/// Like [`run_dynamic`] but also returns the final gallery.
pub fn run_dynamic_with_gallery(
    gallery: GalleryDatabase,
    queries: &[Query],
    trackee: IdentityLabel,
    scenario: &TrackingScenario,
) -> Result<(TrackingReport, GalleryDatabase)> {
    recognition_loop(gallery, queries, trackee, scenario, Strategy::Dynamic)
}

/// Tracking against a gallery whose trackee records are protected, with
/// clean trackee queries. The loop is the recognition loop with roles swapped.
pub fn run_gallery_target_scenario(
    protected_gallery: GalleryDatabase,
    clean_queries: &[Query],
    trackee: IdentityLabel,
    scenario: &TrackingScenario,
) -> Result<TrackingReport> {
    recognition_loop(protected_gallery, clean_queries, trackee, scenario, scenario.strategy).map(|r| r.0)
}

/// Verification-mode tracking: a query matches when any current reference
/// scores at least the threshold; matched queries become references.
pub fn run_dynamic_verification(
    references: &[Embedding],
    queries: &[Query],
    trackee: IdentityLabel,
    scenario: &TrackingScenario,
) -> Result<TrackingReport> {
    verification_loop(references, queries, trackee, scenario, Strategy::Dynamic)
}

pub fn run_static_verification(
    references: &[Embedding],
    queries: &[Query],
    trackee: IdentityLabel,
    scenario: &TrackingScenario,
) -> Result<TrackingReport> {
    verification_loop(references, queries, trackee, scenario, Strategy::Static)
}

fn verification_loop(
    references: &[Embedding],
    queries: &[Query],
    trackee: IdentityLabel,
    scenario: &TrackingScenario,
    strategy: Strategy,
) -> Result<TrackingReport> {
    scenario.validate()?;
    if references.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    let threshold = scenario.verification_threshold;
    let mut refs: Vec<Embedding> = references.to_vec();
    for r in &refs {
        crate::error::check_dims(refs[0].dim(), r.dim())?;
    }
    for q in queries {
        crate::error::check_dims(refs[0].dim(), q.embedding.dim())?;
    }
    let mut pending: Vec<(usize, f64)> = (0..queries.len()).map(|i| (i, f64::NEG_INFINITY)).collect();
    let mut scanned = 0;
    let mut iterations = Vec::new();
    loop {
        let snapshot_len = refs.len();
        let mut hits = Vec::new();
        for (qi, best) in pending.iter_mut() {
            let q = queries[*qi].embedding.as_slice();
            for r in &refs[scanned..snapshot_len] {
                *best = best.max(dot(q, r.as_slice()));
            }
            if *best >= threshold {
                hits.push(*qi);
            }
        }
        scanned = snapshot_len;

        let mut ids = Vec::with_capacity(hits.len());
        let mut tp = 0;
        for &qi in &hits {
            let q = &queries[qi];
            tp += (q.identity == trackee) as usize;
            ids.push(q.image_id);
            if strategy == Strategy::Dynamic {
                refs.push(q.embedding.clone());
            }
        }
        ids.sort_unstable();
        let done = hits.is_empty() || strategy == Strategy::Static;
        iterations.push(IterationRecord {
            iteration: iterations.len() + 1,
            true_positives: tp,
            false_positives: ids.len() - tp,
            recognized_image_ids: ids,
            gallery_size_after: refs.len(),
        });
        if done {
            break;
        }
        let hit_set: BTreeSet<usize> = hits.into_iter().collect();
        pending.retain(|(qi, _)| !hit_set.contains(qi));
    }
    Ok(TrackingReport::build(
        strategy,
        Mode::Verification,
        iterations,
        trackee_count(queries, trackee),
        scenario.fp_tolerance,
    ))
}
