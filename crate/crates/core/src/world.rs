//! Synthetic identities, images and feature extractors.
//!
//! An image is represented by a raw latent vector. A feature extractor maps a
//! latent to an embedding through a fixed linear map followed by
//! normalization; the map is a random orthogonal transform plus a smooth
//! (fixed, seeded) matrix perturbation, so distinct extractors agree on the
//! identity geometry but disagree on gradients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, norm, Embedding, ZERO_NORM};
use crate::error::{check_dims, Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdentityLabel(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExtractorId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    pub label: IdentityLabel,
    pub mean: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: u64,
    pub identity: IdentityLabel,
    pub latent: Vec<f64>,
    pub protected: bool,
}

/// A feature extractor: `x -> normalize(M x)` with
/// `M = transform + noise_scale * N / sqrt(d)`, `N` drawn from `noise_seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Extractor {
    pub id: ExtractorId,
    /// Row-major orthogonal `d x d` matrix.
    transform: Vec<f64>,
    noise_scale: f64,
    noise_seed: u64,
    /// Row-major effective map (transform plus noise).
    map: Vec<f64>,
    dims: usize,
}

impl Extractor {
    pub fn new(id: ExtractorId, transform: Vec<f64>, noise_scale: f64, noise_seed: u64) -> Result<Self> {
        let dims = (transform.len() as f64).sqrt().round() as usize;
        if dims * dims != transform.len() || dims == 0 {
            return Err(Error::InvalidConfig(format!(
                "extractor transform has {} entries, not a square matrix",
                transform.len()
            )));
        }
        if !(noise_scale >= 0.0) {
            return Err(Error::InvalidConfig("noise_scale must be >= 0".into()));
        }
        let mut map = transform.clone();
        if noise_scale > 0.0 {
            let mut rng = seed::rng(noise_seed);
            let scale = noise_scale / (dims as f64).sqrt();
            for m in map.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *m += scale * g;
            }
        }
        Ok(Extractor {
            id,
            transform,
            noise_scale,
            noise_seed,
            map,
            dims,
        })
    }

    /// Noise-free extractor with the identity transform.
    pub fn identity(id: ExtractorId, dims: usize) -> Self {
        let mut t = vec![0.0; dims * dims];
        for i in 0..dims {
            t[i * dims + i] = 1.0;
        }
        Extractor::new(id, t, 0.0, 0).expect("identity matrix is square")
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn transform(&self) -> &[f64] {
        &self.transform
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise_seed
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.map.chunks_exact(self.dims).map(|row| dot(row, x)).collect()
    }

    fn apply_transposed(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dims];
        for (row, &yi) in self.map.chunks_exact(self.dims).zip(y) {
            for (o, m) in out.iter_mut().zip(row) {
                *o += m * yi;
            }
        }
        out
    }

    /// Embeds a raw latent: `normalize(M latent)`.
    pub fn embed(&self, latent: &[f64]) -> Result<Embedding> {
        check_dims(self.dims, latent.len())?;
        Embedding::normalize(&self.apply(latent))
    }

    /// Vector-Jacobian product `Jᵀ c` of [`Extractor::embed`] at `latent`.
    pub fn pullback(&self, latent: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.dims, latent.len())?;
        check_dims(self.dims, cotangent.len())?;
        let y = self.apply(latent);
        let ny = norm(&y);
        if ny < ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        // d normalize(y) / dy = (I - u uᵀ) / |y|
        let uc: f64 = y.iter().zip(cotangent).map(|(yi, ci)| yi * ci).sum::<f64>() / ny;
        let projected: Vec<f64> = y
            .iter()
            .zip(cotangent)
            .map(|(yi, ci)| (ci - uc * yi / ny) / ny)
            .collect();
        Ok(self.apply_transposed(&projected))
    }
}

pub fn embed(e: &Extractor, latent: &[f64]) -> Result<Embedding> {
    e.embed(latent)
}

pub fn embed_pullback(e: &Extractor, latent: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
    e.pullback(latent, cotangent)
}

/// Parameters of [`generate_world`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldParams {
    pub n_identities: usize,
    pub images_per_identity: usize,
    /// Expected Euclidean norm of the per-image offset from the identity mean.
    pub intra_sigma: f64,
    pub n_extractors: usize,
    pub extractor_noise: f64,
    pub aux_pool_size: usize,
    pub dims: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            n_identities: 500,
            images_per_identity: 20,
            intra_sigma: 0.25,
            n_extractors: 4,
            extractor_noise: 0.05,
            aux_pool_size: 2000,
            dims: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub identities: Vec<Identity>,
    pub images: Vec<ImageRecord>,
    pub extractors: Vec<Extractor>,
    /// Auxiliary identities (unit latents), disjoint from `identities`.
    pub aux_pool: Vec<Embedding>,
    pub seed: u64,
    pub dims: usize,
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_unit(rng: &mut impl Rng, d: usize) -> Embedding {
    loop {
        if let Ok(e) = Embedding::normalize(&gaussian(rng, d)) {
            return e;
        }
    }
}

/// Random orthogonal matrix (row-major) via Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v = gaussian(rng, d);
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for r in &rows {
                let p = dot(&v, r);
                for (vi, ri) in v.iter_mut().zip(r) {
                    *vi -= p * ri;
                }
            }
        }
        let n = norm(&v);
        if n < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        rows.push(v);
    }
    rows.concat()
}

pub fn generate_world(params: &WorldParams, seed: u64) -> Result<World> {
    let WorldParams {
        n_identities,
        images_per_identity,
        intra_sigma,
        n_extractors,
        extractor_noise,
        aux_pool_size,
        dims,
    } = *params;
    if n_identities < 2 {
        return Err(Error::InvalidConfig("n_identities must be >= 2".into()));
    }
    if images_per_identity < 1 {
        return Err(Error::InvalidConfig("images_per_identity must be >= 1".into()));
    }
    if dims < 2 {
        return Err(Error::InvalidConfig("dims must be >= 2".into()));
    }
    if n_extractors < 1 {
        return Err(Error::InvalidConfig("n_extractors must be >= 1".into()));
    }
    if !(intra_sigma >= 0.0) || !(extractor_noise >= 0.0) {
        return Err(Error::InvalidConfig(
            "intra_sigma and extractor_noise must be >= 0".into(),
        ));
    }

    let mut id_rng = seed::rng(seed::derive(seed, &[seed::label("identities")]));
    let identities: Vec<Identity> = (0..n_identities)
        .map(|i| Identity {
            label: IdentityLabel(i as u64),
            mean: random_unit(&mut id_rng, dims),
        })
        .collect();

    let mut img_rng = seed::rng(seed::derive(seed, &[seed::label("images")]));
    let per_coord = intra_sigma / (dims as f64).sqrt();
    let mut images = Vec::with_capacity(n_identities * images_per_identity);
    for ident in &identities {
        for _ in 0..images_per_identity {
            if intra_sigma == 0.0 {
                images.push(ImageRecord {
                    image_id: images.len() as u64,
                    identity: ident.label,
                    latent: ident.mean.as_slice().to_vec(),
                    protected: false,
                });
                continue;
            }
            let noise = gaussian(&mut img_rng, dims);
            let raw: Vec<f64> = ident
                .mean
                .as_slice()
                .iter()
                .zip(&noise)
                .map(|(m, g)| m + per_coord * g)
                .collect();
            let latent = match Embedding::normalize(&raw) {
                Ok(e) => e.into_vec(),
                Err(_) => ident.mean.as_slice().to_vec(),
            };
            images.push(ImageRecord {
                image_id: images.len() as u64,
                identity: ident.label,
                latent,
                protected: false,
            });
        }
    }

    let mut ex_rng = seed::rng(seed::derive(seed, &[seed::label("extractors")]));
    let extractors = (0..n_extractors)
        .map(|i| {
            let transform = random_orthogonal(&mut ex_rng, dims);
            let noise_seed: u64 = ex_rng.gen();
            Extractor::new(ExtractorId(i as u64), transform, extractor_noise, noise_seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut aux_rng = seed::rng(seed::derive(seed, &[seed::label("aux")]));
    let aux_pool = (0..aux_pool_size)
        .map(|_| random_unit(&mut aux_rng, dims))
        .collect();

    Ok(World {
        identities,
        images,
        extractors,
        aux_pool,
        seed,
        dims,
    })
}

impl World {
    pub fn extractor(&self, id: ExtractorId) -> Result<&Extractor> {
        self.extractors
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown extractor id {}", id.0)))
    }

    pub fn images_of(&self, label: IdentityLabel) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |r| r.identity == label)
    }

    pub fn image(&self, image_id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.image_id == image_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::dissimilarity;
    use crate::gradcheck;

    fn small(n: usize, ipi: usize, sigma: f64) -> WorldParams {
        WorldParams {
            n_identities: n,
            images_per_identity: ipi,
            intra_sigma: sigma,
            n_extractors: 2,
            extractor_noise: 0.1,
            aux_pool_size: 10,
            dims: 8,
        }
    }

    #[test]
    fn zero_sigma_images_equal_means() {
        let w = generate_world(&small(2, 1, 0.0), 3).unwrap();
        for img in &w.images {
            let mean = &w.identities[img.identity.0 as usize].mean;
            assert_eq!(img.latent.as_slice(), mean.as_slice());
            assert!(!img.protected);
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_world(&small(5, 3, 0.3), 11).unwrap();
        let b = generate_world(&small(5, 3, 0.3), 11).unwrap();
        assert_eq!(a, b);
        let c = generate_world(&small(5, 3, 0.3), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_sizes() {
        assert!(generate_world(&small(1, 1, 0.1), 0).is_err());
        assert!(generate_world(&small(2, 0, 0.1), 0).is_err());
        let mut p = small(2, 1, 0.1);
        p.dims = 1;
        assert!(generate_world(&p, 0).is_err());
    }

    #[test]
    fn transforms_are_orthonormal() {
        let w = generate_world(&small(2, 1, 0.1), 5).unwrap();
        for e in &w.extractors {
            let d = e.dims();
            let t = e.transform();
            for i in 0..d {
                for j in 0..d {
                    let v = dot(&t[i * d..(i + 1) * d], &t[j * d..(j + 1) * d]);
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn embed_examples() {
        let e = Extractor::identity(ExtractorId(0), 2);
        assert_eq!(e.embed(&[0.6, 0.8]).unwrap().as_slice(), &[0.6, 0.8]);
        let rot = Extractor::new(ExtractorId(1), vec![0.0, -1.0, 1.0, 0.0], 0.0, 0).unwrap();
        assert_eq!(rot.embed(&[1.0, 0.0]).unwrap().as_slice(), &[0.0, 1.0]);
        assert!(matches!(e.embed(&[1.0, 0.0, 0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn pullback_examples() {
        let e = Extractor::identity(ExtractorId(0), 3);
        let latent = [1.0, 0.0, 0.0];
        let c = [0.0, 0.3, -0.2];
        let out = e.pullback(&latent, &c).unwrap();
        let fd = gradcheck::central_diff_vjp(
            |x| e.embed(x).unwrap().into_vec(),
            &latent,
            &c,
            1e-6,
        );
        for ((o, f), ci) in out.iter().zip(&fd).zip(&c) {
            assert!((o - ci).abs() < 1e-12);
            assert!((f - ci).abs() < 1e-8);
        }
        assert_eq!(e.pullback(&latent, &[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn pullback_matches_finite_differences_r8() {
        let w = generate_world(&small(3, 2, 0.2), 21).unwrap();
        let mut rng = seed::rng(99);
        for e in &w.extractors {
            for _ in 0..20 {
                let latent = gaussian(&mut rng, 8);
                let c = gaussian(&mut rng, 8);
                let analytic = e.pullback(&latent, &c).unwrap();
                let fd = gradcheck::central_diff_vjp(|x| e.embed(x).unwrap().into_vec(), &latent, &c, 1e-6);
                let err = gradcheck::relative_error(&analytic, &fd, gradcheck::GRAD_NORM_FLOOR);
                assert!(err < 1e-5, "rel err {err}");
            }
        }
    }

    #[test]
    fn noise_free_extractors_preserve_geometry() {
        let mut p = small(4, 3, 0.3);
        p.extractor_noise = 0.0;
        p.n_extractors = 3;
        let w = generate_world(&p, 8).unwrap();
        for a in &w.images {
            for b in &w.images {
                let d0 = dissimilarity(
                    &w.extractors[0].embed(&a.latent).unwrap(),
                    &w.extractors[0].embed(&b.latent).unwrap(),
                )
                .unwrap();
                let d1 = dissimilarity(
                    &w.extractors[1].embed(&a.latent).unwrap(),
                    &w.extractors[1].embed(&b.latent).unwrap(),
                )
                .unwrap();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn distinct_extractors_disagree_but_keep_clusters() {
        let w = generate_world(&WorldParams { n_identities: 50, images_per_identity: 4, ..WorldParams::default() }, 4).unwrap();
        let (e1, e2) = (&w.extractors[0], &w.extractors[1]);
        let img = &w.images[0];
        let a = e1.embed(&img.latent).unwrap();
        let b = e2.embed(&img.latent).unwrap();
        assert!(dissimilarity(&a, &b).unwrap() > 0.0);

        // same-identity pairs stay closer than cross-identity pairs, 1000 pairs
        let mut rng = seed::rng(1);
        let n = w.images.len();
        let mut ok = 0;
        for _ in 0..1000 {
            let i = rng.gen_range(0..n);
            let base = &w.images[i];
            let same = w.images_of(base.identity).find(|r| r.image_id != base.image_id).unwrap();
            let other = loop {
                let j = rng.gen_range(0..n);
                if w.images[j].identity != base.identity {
                    break &w.images[j];
                }
            };
            let q = e2.embed(&base.latent).unwrap();
            let s = e2.embed(&same.latent).unwrap().cosine(&q).unwrap();
            let o = e2.embed(&other.latent).unwrap().cosine(&q).unwrap();
            if s > o {
                ok += 1;
            }
        }
        assert_eq!(ok, 1000);
    }
}
