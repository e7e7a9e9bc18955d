//! Shared helpers and brute-force oracles for the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;

use trackgame::gradcheck::{central_diff, relative_error, GRAD_NORM_FLOOR};
use trackgame::protection::{DiversityQueue, NoStyle, Objective, ProtectionConfig};
use trackgame::tracking::{Query, TrackingReport};
use trackgame::world::{generate_world, ExtractorId, IdentityLabel, WorldParams};
use trackgame::{normalize, seed, Embedding, GalleryDatabase};

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-5;

pub fn unit(rng: &mut impl Rng, d: usize) -> Embedding {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&v).unwrap()
}

/// Index of the exhaustive argmax; ties go to the earliest record.
pub fn argmax(gallery: &[(Embedding, IdentityLabel)], q: &Embedding) -> usize {
    let mut best = 0;
    let mut best_s = f64::NEG_INFINITY;
    for (i, (e, _)) in gallery.iter().enumerate() {
        let s: f64 = e.as_slice().iter().zip(q.as_slice()).map(|(a, b)| a * b).sum();
        if s > best_s {
            best_s = s;
            best = i;
        }
    }
    best
}

/// Literal iterate-until-empty tracker with exhaustive matching and no
/// caching; returns the recognized id sets per iteration (final empty set
/// included).
pub fn naive_dynamic(gallery: &GalleryDatabase, queries: &[Query], trackee: IdentityLabel) -> Vec<Vec<u64>> {
    let mut g: Vec<(Embedding, IdentityLabel)> =
        gallery.records().iter().map(|r| (r.embedding.clone(), r.identity)).collect();
    let mut remaining: Vec<&Query> = queries.iter().collect();
    let mut out = Vec::new();
    loop {
        let hits: Vec<&Query> = remaining
            .iter()
            .copied()
            .filter(|q| g[argmax(&g, &q.embedding)].1 == trackee)
            .collect();
        let mut ids: Vec<u64> = hits.iter().map(|q| q.image_id).collect();
        ids.sort_unstable();
        out.push(ids.clone());
        if hits.is_empty() {
            return out;
        }
        for q in &hits {
            g.push((q.embedding.clone(), trackee));
        }
        remaining.retain(|q| !ids.contains(&q.image_id));
    }
}

/// A random tracking instance: clustered identities, one trackee record in
/// the gallery, trackee queries spread around it.
pub struct Instance {
    pub gallery: GalleryDatabase,
    pub queries: Vec<Query>,
    pub trackee: IdentityLabel,
}

pub fn random_instance(seed_v: u64) -> Instance {
    let mut rng = seed::rng(seed_v);
    let d = rng.gen_range(2..12);
    let n_ids = rng.gen_range(2..8u64);
    let spread: f64 = rng.gen_range(0.1..1.5);
    let means: Vec<Embedding> = (0..n_ids).map(|_| unit(&mut rng, d)).collect();
    let jitter = |m: &Embedding, rng: &mut rand_chacha::ChaCha8Rng| {
        let v: Vec<f64> = m
            .as_slice()
            .iter()
            .map(|x| x + spread * rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt())
            .collect();
        normalize(&v).unwrap()
    };
    let trackee = IdentityLabel(0);
    let mut gallery = GalleryDatabase::new();
    let mut next_id = 0u64;
    gallery.insert(jitter(&means[0], &mut rng), trackee, next_id).unwrap();
    next_id += 1;
    for (i, m) in means.iter().enumerate().skip(1) {
        for _ in 0..rng.gen_range(1..4) {
            gallery.insert(jitter(m, &mut rng), IdentityLabel(i as u64), next_id).unwrap();
            next_id += 1;
        }
    }
    let mut queries = Vec::new();
    for _ in 0..rng.gen_range(1..25) {
        let ident = rng.gen_range(0..n_ids);
        queries.push(Query {
            image_id: next_id,
            identity: IdentityLabel(ident),
            embedding: jitter(&means[ident as usize], &mut rng),
        });
        next_id += 1;
    }
    Instance {
        gallery,
        queries,
        trackee,
    }
}

/// Disjointness, progress, gallery growth and TP/FP bookkeeping. Returns a
/// description of the first violation.
pub fn check_bookkeeping(r: &TrackingReport, n_queries: usize, initial_gallery: usize, dynamic: bool) -> Result<(), String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut prev = initial_gallery;
    if r.total_iterations != r.iterations.len() {
        return Err("total_iterations disagrees with the iteration list".into());
    }
    if r.total_iterations > n_queries + 1 {
        return Err(format!("T={} exceeds |queries|+1={}", r.total_iterations, n_queries + 1));
    }
    for it in &r.iterations {
        for id in &it.recognized_image_ids {
            if !seen.insert(*id) {
                return Err(format!("image {id} recognized twice"));
            }
        }
        if it.true_positives + it.false_positives != it.recognized_image_ids.len() {
            return Err(format!("TP+FP != recognized at iteration {}", it.iteration));
        }
        let growth = if dynamic { it.recognized_image_ids.len() } else { 0 };
        if it.gallery_size_after != prev + growth {
            return Err(format!("gallery growth mismatch at iteration {}", it.iteration));
        }
        prev = it.gallery_size_after;
    }
    if let (Some(t), Some(p)) = (r.cumulative_tsr, r.cumulative_psr) {
        if p != 1.0 - t {
            return Err(format!("psr {p} != 1 - tsr {t}"));
        }
    }
    Ok(())
}

type LossFn = fn(&Objective, &[f64]) -> f64;
type GradFn = fn(&Objective, &[f64]) -> Vec<f64>;

/// Worst relative error per loss term over `n` random states in dimension `d`.
pub struct GradReport {
    pub d: usize,
    pub states: usize,
    pub worst: [(&'static str, f64); 5],
}

/// Draws objective states (random extractors, anchor, auxiliary, half-full
/// queue, latent) and compares every analytic gradient against central
/// differences. States within `1e-4` of the guide hinge are redrawn: the
/// loss has a kink there and no derivative to compare against.
pub fn gradient_suite(d: usize, n: usize, seed_v: u64) -> GradReport {
    let world = generate_world(
        &WorldParams {
            n_identities: 4,
            images_per_identity: 3,
            dims: d,
            n_extractors: 4,
            extractor_noise: 0.3,
            aux_pool_size: 8,
            ..WorldParams::default()
        },
        seed_v,
    )
    .unwrap();
    let config = ProtectionConfig {
        alpha1: 0.6,
        alpha2: 1.2,
        alpha3: 0.0,
        alpha4: 0.02,
        delta: 0.2,
        max_queue_len: 10,
        substitute_extractors: vec![ExtractorId(1), ExtractorId(2), ExtractorId(3)],
        ..ProtectionConfig::default()
    };
    let subs: Vec<_> = config
        .substitute_extractors
        .iter()
        .map(|id| world.extractor(*id).unwrap())
        .collect();
    let mut rng = seed::rng(seed::derive(seed_v, &[seed::label("gradient-states")]));
    let mut worst = [("adv", 0.0), ("guide", 0.0), ("div", 0.0), ("latent", 0.0), ("total", 0.0)];
    let mut done = 0;
    while done < n {
        let x = &world.images[rng.gen_range(0..world.images.len())];
        let aux = &world.aux_pool[rng.gen_range(0..world.aux_pool.len())];
        let mut queue = DiversityQueue::new(config.max_queue_len);
        for _ in 0..rng.gen_range(1..=config.max_queue_len) {
            queue.push(unit(&mut rng, d));
        }
        let scale: f64 = rng.gen_range(0.5..2.0);
        let w: Vec<f64> = x
            .latent
            .iter()
            .map(|v| scale * (v + rng.gen_range(0.2..1.0) * rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt()))
            .collect();
        let near_kink = subs.iter().any(|e| {
            let dd = 1.0 - e.embed(&w).unwrap().cosine(&e.embed(aux.as_slice()).unwrap()).unwrap();
            (dd - config.delta).abs() < 1e-4
        });
        if near_kink {
            continue;
        }
        let obj = Objective::new(&config, &world, &x.latent, Some(aux.as_slice()), &queue, &NoStyle).unwrap();
        let terms: [(LossFn, GradFn); 5] = [
            (|o, w| o.adv(w).unwrap(), |o, w| o.adv_grad(w).unwrap()),
            (|o, w| o.guide(w).unwrap(), |o, w| o.guide_grad(w).unwrap()),
            (|o, w| o.div(w).unwrap(), |o, w| o.div_grad(w).unwrap()),
            (|o, w| o.latent(w).unwrap(), |o, w| o.latent_grad(w).unwrap()),
            (|o, w| o.total(w).unwrap(), |o, w| o.total_grad(w).unwrap()),
        ];
        for (k, (f, g)) in terms.iter().enumerate() {
            let numeric = central_diff(|p| f(&obj, p), &w, FD_STEP);
            let err = relative_error(&g(&obj, &w), &numeric, GRAD_NORM_FLOOR);
            if err > worst[k].1 {
                worst[k].1 = err;
            }
        }
        done += 1;
    }
    GradReport { d, states: n, worst }
}
