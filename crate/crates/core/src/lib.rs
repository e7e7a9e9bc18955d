//! Embedding-space simulator of the tracker-versus-trackee facial
//! recognition game.
//!
//! A tracker matches posted images against a gallery and, in the dynamic
//! strategy, feeds every recognized image back into the gallery until no new
//! image is found. A trackee perturbs images before posting by descending a
//! dodging objective; the diversity-promoting variant pushes each new
//! protection away from the previous ones so the dynamic tracker cannot
//! chain them together.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embedding;
pub mod error;
pub mod format;
pub mod gallery;
pub mod gradcheck;
pub mod harness;
pub mod protection;
pub mod seed;
pub mod tracking;
pub mod world;

pub use embedding::{dissimilarity, dissimilarity_grad, normalize, Embedding};
pub use error::{Error, Result};
pub use gallery::{verify, GalleryDatabase, GalleryRecord, MatchResult};
pub use protection::{
    baseline_protect, protect_image, protect_set, AuxMode, DiversityQueue, Objective, ProtectionConfig, Scheme,
};
pub use tracking::{
    compute_metrics, preprocess_query, run_dynamic, run_dynamic_verification, run_gallery_target_scenario,
    run_static, InitialKnowledge, Mode, Query, Strategy, TrackingReport, TrackingScenario,
};
pub use world::{embed, embed_pullback, generate_world, Extractor, ExtractorId, IdentityLabel, ImageRecord, World, WorldParams};
