//! Trackee-side protection: gradient descent over an image latent against a
//! composite dodging objective.
//!
//! The objective is
//!
//! ```text
//! L_tot(w) = L_adv + a1 * L_guide + a2 * L_div + a3 * L_style + a4 * L_latent
//! L_adv    = -mean_e D_e(w, x_ee)
//! L_guide  =  mean_e max(0, D_e(w, x_aux) - delta)
//! L_div    = -(1/m) * sum_{q in Q} D_1(w, q)
//! L_latent = |w - w_init|
//! ```
//!
//! where `D_e(w, x) = 1 - cos(embed_e(w), embed_e(x))` over the substitute
//! extractors `e`, and `D_1` uses the first substitute, the space in which
//! queue entries are stored. `L_style` is a hook that is zero by default.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{dissimilarity, dot, norm, Embedding};
use crate::error::{check_dims, Error, Result};
use crate::seed;
use crate::world::{Extractor, ExtractorId, ImageRecord, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxMode {
    /// One auxiliary shared by every image of a protected set.
    Fixed,
    /// A fresh uniformly drawn auxiliary per image.
    Random,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtectionConfig {
    /// Weight of the auxiliary guidance loss.
    pub alpha1: f64,
    /// Weight of the diversity loss.
    pub alpha2: f64,
    /// Weight of the style hook.
    pub alpha3: f64,
    /// Weight of the latent displacement loss.
    pub alpha4: f64,
    /// Guidance margin.
    pub delta: f64,
    /// Diversity queue capacity `m`.
    pub max_queue_len: usize,
    pub step_size: f64,
    pub steps: usize,
    pub aux_mode: AuxMode,
    pub substitute_extractors: Vec<ExtractorId>,
    pub optimizer: Optimizer,
    /// Seeds auxiliary selection and the stationary-point escape. Experiment
    /// runs replace it with a per-trackee seed derived from the master seed.
    pub seed: u64,
    /// Metadata only; there is no text encoder.
    pub target_prompt: String,
    pub source_prompt: String,
}

impl Default for ProtectionConfig {
    fn default() -> Self {
        ProtectionConfig {
            alpha1: 0.6,
            alpha2: 1.2,
            alpha3: 0.5,
            alpha4: 0.02,
            delta: 0.2,
            max_queue_len: 10,
            step_size: 0.01,
            steps: 60,
            aux_mode: AuxMode::Random,
            substitute_extractors: vec![ExtractorId(1), ExtractorId(2), ExtractorId(3)],
            optimizer: Optimizer::GradientDescent,
            seed: 0,
            target_prompt: "natural makeup".into(),
            source_prompt: "face".into(),
        }
    }
}

impl ProtectionConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("alpha4", self.alpha4),
            ("delta", self.delta),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be a finite value >= 0")));
            }
        }
        if self.max_queue_len < 1 {
            return Err(Error::InvalidConfig("max_queue_len must be >= 1".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig("step_size must be > 0".into()));
        }
        if self.substitute_extractors.is_empty() {
            return Err(Error::InvalidConfig("substitute_extractors must be non-empty".into()));
        }
        Ok(())
    }
}

/// Bounded FIFO of recently protected embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityQueue {
    entries: VecDeque<Embedding>,
    capacity: usize,
}

impl DiversityQueue {
    pub fn new(capacity: usize) -> Self {
        DiversityQueue {
            entries: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    /// Appends `e`, evicting the oldest entry when full.
    pub fn push(&mut self, e: Embedding) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Embedding> {
        self.entries.iter()
    }
}

/// Extra differentiable penalty on the latent, weighted by `alpha3`.
pub trait StyleLoss {
    fn value(&self, w: &[f64], w_init: &[f64]) -> f64;
    fn grad(&self, w: &[f64], w_init: &[f64]) -> Vec<f64>;
}

/// The default style hook: identically zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoStyle;

impl StyleLoss for NoStyle {
    fn value(&self, _w: &[f64], _w_init: &[f64]) -> f64 {
        0.0
    }

    fn grad(&self, w: &[f64], _w_init: &[f64]) -> Vec<f64> {
        vec![0.0; w.len()]
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (y, xi) in acc.iter_mut().zip(x) {
        *y += a * xi;
    }
}

/// `-mean_e D_e(w, x_ee)`.
pub fn loss_adv(w: &[f64], x_ee_latent: &[f64], substitutes: &[&Extractor]) -> Result<f64> {
    let mut total = 0.0;
    for e in substitutes {
        total -= dissimilarity(&e.embed(w)?, &e.embed(x_ee_latent)?)?;
    }
    Ok(total / substitutes.len() as f64)
}

/// `mean_e max(0, D_e(w, aux) - delta)`.
pub fn loss_guide(w: &[f64], aux_latent: &[f64], delta: f64, substitutes: &[&Extractor]) -> Result<f64> {
    let mut total = 0.0;
    for e in substitutes {
        total += (dissimilarity(&e.embed(w)?, &e.embed(aux_latent)?)? - delta).max(0.0);
    }
    Ok(total / substitutes.len() as f64)
}

/// `-(1/m) * sum_q D(embed(e, w), q)` with queue entries already in `e`'s space.
pub fn loss_div(w: &[f64], queue: &DiversityQueue, m: usize, extractor: &Extractor) -> Result<f64> {
    if queue.is_empty() {
        return Ok(0.0);
    }
    let z = extractor.embed(w)?;
    let mut total = 0.0;
    for q in queue.iter() {
        total += dissimilarity(&z, q)?;
    }
    Ok(-total / m as f64)
}

/// `|w - w_init|`.
pub fn loss_latent(w: &[f64], w_init: &[f64]) -> Result<f64> {
    check_dims(w_init.len(), w.len())?;
    Ok(w.iter().zip(w_init).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Per-term loss values at one latent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv: f64,
    pub guide: f64,
    pub div: f64,
    pub style: f64,
    pub latent: f64,
    pub total: f64,
}

/// The composite objective for one image, with all fixed references
/// embedded up front.
pub struct Objective<'a> {
    config: &'a ProtectionConfig,
    substitutes: Vec<&'a Extractor>,
    target_refs: Vec<Embedding>,
    aux_refs: Option<Vec<Embedding>>,
    queue: Vec<Embedding>,
    w_init: Vec<f64>,
    style: &'a dyn StyleLoss,
}

impl<'a> Objective<'a> {
    pub fn new(
        config: &'a ProtectionConfig,
        world: &'a World,
        x_ee_latent: &[f64],
        aux_latent: Option<&[f64]>,
        queue: &DiversityQueue,
        style: &'a dyn StyleLoss,
    ) -> Result<Self> {
        config.validate()?;
        let substitutes = config
            .substitute_extractors
            .iter()
            .map(|id| world.extractor(*id))
            .collect::<Result<Vec<_>>>()?;
        Self::with_extractors(config, substitutes, x_ee_latent, aux_latent, queue, style)
    }

    pub fn with_extractors(
        config: &'a ProtectionConfig,
        substitutes: Vec<&'a Extractor>,
        x_ee_latent: &[f64],
        aux_latent: Option<&[f64]>,
        queue: &DiversityQueue,
        style: &'a dyn StyleLoss,
    ) -> Result<Self> {
        if substitutes.is_empty() {
            return Err(Error::InvalidConfig("substitute_extractors must be non-empty".into()));
        }
        let target_refs = substitutes
            .iter()
            .map(|e| e.embed(x_ee_latent))
            .collect::<Result<Vec<_>>>()?;
        let aux_refs = aux_latent
            .map(|a| substitutes.iter().map(|e| e.embed(a)).collect::<Result<Vec<_>>>())
            .transpose()?;
        Ok(Objective {
            config,
            substitutes,
            target_refs,
            aux_refs,
            queue: queue.iter().cloned().collect(),
            w_init: x_ee_latent.to_vec(),
            style,
        })
    }

    pub fn w_init(&self) -> &[f64] {
        &self.w_init
    }

    fn n_subs(&self) -> f64 {
        self.substitutes.len() as f64
    }

    pub fn adv(&self, w: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (e, r) in self.substitutes.iter().zip(&self.target_refs) {
            total -= dissimilarity(&e.embed(w)?, r)?;
        }
        Ok(total / self.n_subs())
    }

    pub fn adv_grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        // d(-D)/dz = r, pulled back through the extractor
        let mut g = vec![0.0; w.len()];
        for (e, r) in self.substitutes.iter().zip(&self.target_refs) {
            axpy(&mut g, 1.0 / self.n_subs(), &e.pullback(w, r.as_slice())?);
        }
        Ok(g)
    }

    pub fn guide(&self, w: &[f64]) -> Result<f64> {
        let Some(aux) = &self.aux_refs else { return Ok(0.0) };
        let mut total = 0.0;
        for (e, a) in self.substitutes.iter().zip(aux) {
            total += (dissimilarity(&e.embed(w)?, a)? - self.config.delta).max(0.0);
        }
        Ok(total / self.n_subs())
    }

    pub fn guide_grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; w.len()];
        let Some(aux) = &self.aux_refs else { return Ok(g) };
        for (e, a) in self.substitutes.iter().zip(aux) {
            if dissimilarity(&e.embed(w)?, a)? > self.config.delta {
                let neg: Vec<f64> = a.as_slice().iter().map(|x| -x).collect();
                axpy(&mut g, 1.0 / self.n_subs(), &e.pullback(w, &neg)?);
            }
        }
        Ok(g)
    }

    pub fn div(&self, w: &[f64]) -> Result<f64> {
        if self.queue.is_empty() {
            return Ok(0.0);
        }
        let z = self.substitutes[0].embed(w)?;
        let mut total = 0.0;
        for q in &self.queue {
            total += dissimilarity(&z, q)?;
        }
        Ok(-total / self.config.max_queue_len as f64)
    }

    pub fn div_grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        if self.queue.is_empty() {
            return Ok(vec![0.0; w.len()]);
        }
        // -(1/m) sum_q d(1 - z.q)/dz = (1/m) sum_q q
        let m = self.config.max_queue_len as f64;
        let mut c = vec![0.0; w.len()];
        for q in &self.queue {
            check_dims(c.len(), q.dim())?;
            axpy(&mut c, 1.0 / m, q.as_slice());
        }
        self.substitutes[0].pullback(w, &c)
    }

    pub fn latent(&self, w: &[f64]) -> Result<f64> {
        loss_latent(w, &self.w_init)
    }

    /// Zero at `w == w_init`, where the norm is not differentiable.
    pub fn latent_grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        let n = self.latent(w)?;
        if n == 0.0 {
            return Ok(vec![0.0; w.len()]);
        }
        Ok(w.iter().zip(&self.w_init).map(|(a, b)| (a - b) / n).collect())
    }

    pub fn breakdown(&self, w: &[f64]) -> Result<LossBreakdown> {
        Ok(LossBreakdown {
            adv: self.adv(w)?,
            guide: self.guide(w)?,
            div: self.div(w)?,
            style: self.style.value(w, &self.w_init),
            latent: self.latent(w)?,
            total: self.total(w)?,
        })
    }

    /// Weighted sum; terms with zero weight are skipped entirely so that a
    /// zero weight is indistinguishable from removing the term.
    pub fn total(&self, w: &[f64]) -> Result<f64> {
        let c = self.config;
        let mut t = self.adv(w)?;
        if c.alpha1 != 0.0 {
            t += c.alpha1 * self.guide(w)?;
        }
        if c.alpha2 != 0.0 {
            t += c.alpha2 * self.div(w)?;
        }
        if c.alpha3 != 0.0 {
            t += c.alpha3 * self.style.value(w, &self.w_init);
        }
        if c.alpha4 != 0.0 {
            t += c.alpha4 * self.latent(w)?;
        }
        Ok(t)
    }

    pub fn total_grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        let c = self.config;
        let mut g = self.adv_grad(w)?;
        if c.alpha1 != 0.0 {
            axpy(&mut g, c.alpha1, &self.guide_grad(w)?);
        }
        if c.alpha2 != 0.0 {
            axpy(&mut g, c.alpha2, &self.div_grad(w)?);
        }
        if c.alpha3 != 0.0 {
            axpy(&mut g, c.alpha3, &self.style.grad(w, &self.w_init));
        }
        if c.alpha4 != 0.0 {
            axpy(&mut g, c.alpha4, &self.latent_grad(w)?);
        }
        Ok(g)
    }
}

/// Gradient norms below this count as a stationary point.
const STATIONARY: f64 = 1e-12;

/// Unit direction tangent to `w` drawn from `seed`; used to leave an exact
/// stationary point such as `w == x_ee` under the pure dodging loss.
fn escape_direction(w: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    let wn = norm(w).max(f64::MIN_POSITIVE);
    loop {
        let mut g: Vec<f64> = (0..w.len()).map(|_| rng.sample(StandardNormal)).collect();
        let p = dot(&g, w) / (wn * wn);
        axpy(&mut g, -p, w);
        let n = norm(&g);
        if n > 1e-9 {
            g.iter_mut().for_each(|x| *x /= n);
            return g;
        }
    }
}

fn descend(objective: &Objective<'_>, config: &ProtectionConfig, escape_seed: u64) -> Result<Vec<f64>> {
    let mut w = objective.w_init().to_vec();
    let d = w.len();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m1 = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for s in 0..config.steps {
        let mut g = objective.total_grad(&w)?;
        if norm(&g) < STATIONARY {
            g = escape_direction(&w, escape_seed).into_iter().map(|x| -x).collect();
        }
        match config.optimizer {
            Optimizer::GradientDescent => axpy(&mut w, -config.step_size, &g),
            Optimizer::Adam => {
                let t = (s + 1) as i32;
                for i in 0..d {
                    m1[i] = b1 * m1[i] + (1.0 - b1) * g[i];
                    m2[i] = b2 * m2[i] + (1.0 - b2) * g[i] * g[i];
                    let mh = m1[i] / (1.0 - b1.powi(t));
                    let vh = m2[i] / (1.0 - b2.powi(t));
                    w[i] -= config.step_size * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
    Ok(w)
}

/// Auxiliary index for one image: shared across a set in fixed mode, drawn
/// per image in random mode.
pub fn select_aux(config: &ProtectionConfig, pool_len: usize, image_id: u64) -> Result<Option<usize>> {
    if config.aux_mode == AuxMode::None {
        return Ok(None);
    }
    if pool_len == 0 {
        return Err(Error::EmptyAuxPool);
    }
    let s = match config.aux_mode {
        AuxMode::Fixed => seed::derive(config.seed, &[seed::label("fixed_aux")]),
        _ => seed::derive(config.seed, &[seed::label("random_aux"), image_id]),
    };
    Ok(Some(seed::rng(s).gen_range(0..pool_len)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtectedImage {
    pub record: ImageRecord,
    /// `|w_S - w_init|`, the visual-cost proxy.
    pub displacement: f64,
    pub aux_index: Option<usize>,
}

/// Protects one image and pushes its protected embedding (under the first
/// substitute) onto `queue`.
pub fn protect_image(
    x_ee: &ImageRecord,
    queue: &mut DiversityQueue,
    aux_pool: &[Embedding],
    config: &ProtectionConfig,
    world: &World,
) -> Result<ProtectedImage> {
    protect_image_with_style(x_ee, queue, aux_pool, config, world, &NoStyle)
}

pub fn protect_image_with_style(
    x_ee: &ImageRecord,
    queue: &mut DiversityQueue,
    aux_pool: &[Embedding],
    config: &ProtectionConfig,
    world: &World,
    style: &dyn StyleLoss,
) -> Result<ProtectedImage> {
    config.validate()?;
    let aux_index = select_aux(config, aux_pool.len(), x_ee.image_id)?;
    let aux = aux_index.map(|i| aux_pool[i].as_slice());
    let objective = Objective::new(config, world, &x_ee.latent, aux, queue, style)?;
    let escape_seed = seed::derive(config.seed, &[seed::label("escape")]);
    let w = descend(&objective, config, escape_seed)?;
    let displacement = loss_latent(&w, &x_ee.latent)?;
    queue.push(objective.substitutes[0].embed(&w)?);
    Ok(ProtectedImage {
        record: ImageRecord {
            image_id: x_ee.image_id,
            identity: x_ee.identity,
            latent: w,
            protected: true,
        },
        displacement,
        aux_index,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtectedSet {
    pub images: Vec<ProtectedImage>,
    pub queue: DiversityQueue,
}

impl ProtectedSet {
    pub fn records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().map(|p| &p.record)
    }

    pub fn mean_displacement(&self) -> f64 {
        if self.images.is_empty() {
            return 0.0;
        }
        self.images.iter().map(|p| p.displacement).sum::<f64>() / self.images.len() as f64
    }
}

/// Protects images sequentially, threading one diversity queue.
pub fn protect_set(trackee_images: &[ImageRecord], config: &ProtectionConfig, world: &World) -> Result<ProtectedSet> {
    config.validate()?;
    if let Some(first) = trackee_images.first() {
        if let Some(bad) = trackee_images.iter().find(|r| r.identity != first.identity) {
            return Err(Error::InvalidConfig(format!(
                "image {} belongs to identity {}, not the trackee {}",
                bad.image_id, bad.identity.0, first.identity.0
            )));
        }
    }
    let mut queue = DiversityQueue::new(config.max_queue_len);
    let images = trackee_images
        .iter()
        .map(|x| protect_image(x, &mut queue, &world.aux_pool, config, world))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtectedSet { images, queue })
}

/// Protection schemes compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Images are posted unmodified.
    None,
    /// Pure dodging loss, no auxiliary and no diversity term.
    Untargeted,
    /// One auxiliary shared by all images, no diversity term.
    FixedAux,
    /// A fresh auxiliary per image, no diversity term.
    RandomAux,
    /// The full diversity-promoting objective.
    #[serde(rename = "divtrackee")]
    DivTrackee,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::None,
        Scheme::Untargeted,
        Scheme::FixedAux,
        Scheme::RandomAux,
        Scheme::DivTrackee,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::None => "none",
            Scheme::Untargeted => "untargeted",
            Scheme::FixedAux => "fixed_aux",
            Scheme::RandomAux => "random_aux",
            Scheme::DivTrackee => "divtrackee",
        }
    }

    /// The protection config this scheme runs with, or `None` for no protection.
    pub fn configure(self, base: &ProtectionConfig) -> Option<ProtectionConfig> {
        let mut c = base.clone();
        match self {
            Scheme::None => return None,
            Scheme::Untargeted => {
                c.alpha1 = 0.0;
                c.alpha2 = 0.0;
                c.alpha3 = 0.0;
                c.alpha4 = 0.0;
                c.aux_mode = AuxMode::None;
            }
            Scheme::FixedAux => {
                c.alpha2 = 0.0;
                c.aux_mode = AuxMode::Fixed;
            }
            Scheme::RandomAux => {
                c.alpha2 = 0.0;
                c.aux_mode = AuxMode::Random;
            }
            Scheme::DivTrackee => c.aux_mode = AuxMode::Random,
        }
        Some(c)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Runs one of the baseline schemes; `Scheme::None` returns the images unchanged.
pub fn baseline_protect(
    kind: Scheme,
    trackee_images: &[ImageRecord],
    base: &ProtectionConfig,
    world: &World,
) -> Result<ProtectedSet> {
    match kind.configure(base) {
        Some(c) => protect_set(trackee_images, &c, world),
        None => Ok(ProtectedSet {
            images: trackee_images
                .iter()
                .map(|r| ProtectedImage {
                    record: r.clone(),
                    displacement: 0.0,
                    aux_index: None,
                })
                .collect(),
            queue: DiversityQueue::new(base.max_queue_len),
        }),
    }
}
