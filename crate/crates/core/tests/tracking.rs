mod common;

use common::unit;
use trackgame::harness::{run_experiment_in_memory, ExperimentConfig, TargetSide};
use trackgame::protection::Scheme;
use trackgame::tracking::{
    preprocess_query, run_dynamic, run_dynamic_verification, run_gallery_target_scenario, run_static, InitialKnowledge,
    Query, Strategy, TrackingScenario,
};
use trackgame::world::{generate_world, IdentityLabel, WorldParams};
use trackgame::{dissimilarity, seed, verify, Embedding, GalleryDatabase};

#[test]
fn verify_examples() {
    let e = |a: f64, b: f64| Embedding::from_unit(vec![a, b]).unwrap();
    assert!(!verify(&[e(1.0, 0.0)], &e(0.0, 1.0), 0.542).unwrap());
    assert!(verify(&[e(1.0, 0.0), e(0.0, 1.0)], &e(0.6, 0.8), 0.7).unwrap());
    assert!(verify(&[e(1.0, 0.0)], &e(-1.0, 0.0), -1.0).unwrap());
    assert!(!verify(&[e(1.0, 0.0)], &e(1.0, 0.0), 1.0 + 1e-12).unwrap());
}

#[test]
fn orthogonal_query_never_verifies() {
    let refs = [Embedding::from_unit(vec![1.0, 0.0]).unwrap()];
    let q = [Query {
        image_id: 1,
        identity: IdentityLabel(0),
        embedding: Embedding::from_unit(vec![0.0, 1.0]).unwrap(),
    }];
    let r = run_dynamic_verification(&refs, &q, IdentityLabel(0), &TrackingScenario::default()).unwrap();
    assert_eq!(r.total_iterations, 1);
    assert_eq!(r.cumulative_tsr, Some(0.0));
}

struct Split {
    gallery: GalleryDatabase,
    trackee_queries: Vec<Query>,
    trackee: IdentityLabel,
}

/// Non-trackee images in the gallery; the trackee's first image is given
/// to `seed_embedding`, the rest become queries.
fn split_world(seed_embedding: impl Fn(&Embedding) -> Embedding) -> Split {
    let w = generate_world(
        &WorldParams {
            n_identities: 100,
            dims: 64,
            ..WorldParams::default()
        },
        1,
    )
    .unwrap();
    let ex = w.extractor(trackgame::ExtractorId(0)).unwrap();
    let trackee = IdentityLabel(7);
    let mut gallery = GalleryDatabase::new();
    for r in w.images.iter().filter(|r| r.identity != trackee) {
        gallery.insert(ex.embed(&r.latent).unwrap(), r.identity, r.image_id).unwrap();
    }
    let mut own = w.images_of(trackee);
    let first = own.next().unwrap();
    gallery
        .insert(seed_embedding(&ex.embed(&first.latent).unwrap()), trackee, first.image_id)
        .unwrap();
    let trackee_queries = own
        .map(|r| Query {
            image_id: r.image_id,
            identity: trackee,
            embedding: ex.embed(&r.latent).unwrap(),
        })
        .collect();
    Split {
        gallery,
        trackee_queries,
        trackee,
    }
}

#[test]
fn unperturbed_gallery_target_equals_dynamic() {
    let s = split_world(|e| e.clone());
    let sc = TrackingScenario::default();
    let a = run_gallery_target_scenario(s.gallery.clone(), &s.trackee_queries, s.trackee, &sc).unwrap();
    let b = run_dynamic(s.gallery, &s.trackee_queries, s.trackee, &sc).unwrap();
    assert_eq!(a, b);
}

#[test]
fn randomized_gallery_record_defeats_static_matching() {
    let s = split_world(|e| unit(&mut seed::rng(99), e.dim()));
    let sc = TrackingScenario::default();
    let st = run_static(&s.gallery, &s.trackee_queries, s.trackee, &sc).unwrap();
    assert!(st.cumulative_tsr.unwrap() <= 0.1, "static {:?}", st.cumulative_tsr);
    let dy = run_dynamic(s.gallery, &s.trackee_queries, s.trackee, &sc).unwrap();
    assert!(dy.cumulative_tsr >= st.cumulative_tsr);
}

#[test]
fn protected_gallery_is_recovered_by_dynamic_tracking() {
    let cfg = ExperimentConfig {
        target: TargetSide::Gallery,
        schemes: vec![Scheme::FixedAux],
        knowledge: vec![InitialKnowledge::Protected],
        ..ExperimentConfig::default()
    };
    let r = run_experiment_in_memory(&cfg).unwrap();
    let st = r.tsr(Scheme::FixedAux, InitialKnowledge::Protected, Strategy::Static).unwrap();
    let dy = r.tsr(Scheme::FixedAux, InitialKnowledge::Protected, Strategy::Dynamic).unwrap();
    assert!(dy > st, "static {st}, dynamic {dy}");
}

#[test]
fn unprotected_default_world_static_tsr_is_high() {
    let cfg = ExperimentConfig {
        schemes: vec![Scheme::None],
        knowledge: vec![InitialKnowledge::Clean],
        strategies: vec![Strategy::Static],
        ..ExperimentConfig::default()
    };
    let r = run_experiment_in_memory(&cfg).unwrap();
    assert!(r.tsr(Scheme::None, InitialKnowledge::Clean, Strategy::Static).unwrap() >= 0.80);
}

#[test]
fn heavy_preprocessing_decorrelates_queries() {
    let mut rng = seed::rng(8);
    let d = 128;
    let mut total = 0.0;
    let mut max_dev: f64 = 0.0;
    for i in 0..1000 {
        let q = unit(&mut rng, d);
        let p = preprocess_query(&q, 10.0, i);
        let dis = dissimilarity(&p, &q).unwrap();
        total += dis;
        max_dev = max_dev.max((dis - 1.0).abs());
    }
    let mean = total / 1000.0;
    // cosine of a unit vector with a near-isotropic one in d=128 is ~N(0, 1/128)
    assert!((mean - 1.0).abs() < 0.02, "mean dissimilarity {mean}");
    assert!(max_dev < 0.5, "max deviation {max_dev}");
}
