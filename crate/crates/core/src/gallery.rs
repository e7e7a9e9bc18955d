//! Append-only gallery database with exhaustive cosine matching, and the
//! thresholded any-reference verifier.

use crate::embedding::{dot, Embedding};
use crate::error::{check_dims, Error, Result};
use crate::world::IdentityLabel;

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryRecord {
    pub embedding: Embedding,
    pub identity: IdentityLabel,
    pub image_id: u64,
    pub insertion_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub identity: IdentityLabel,
    pub best_score: f64,
    pub matched_record: u64,
    pub insertion_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GalleryDatabase {
    records: Vec<GalleryRecord>,
    dims: Option<usize>,
}

impl GalleryDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[GalleryRecord] {
        &self.records
    }

    /// Appends a record; its insertion index is assigned here.
    pub fn insert(&mut self, embedding: Embedding, identity: IdentityLabel, image_id: u64) -> Result<usize> {
        if let Some(d) = self.dims {
            check_dims(d, embedding.dim())?;
        }
        self.dims = Some(embedding.dim());
        let insertion_index = self.records.len();
        self.records.push(GalleryRecord {
            embedding,
            identity,
            image_id,
            insertion_index,
        });
        Ok(insertion_index)
    }

    /// Best match among records with `insertion_index >= from`, or `None`
    /// when that range is empty. Ties go to the lowest insertion index.
    pub fn best_from(&self, query: &Embedding, from: usize) -> Result<Option<MatchResult>> {
        if let Some(d) = self.dims {
            check_dims(d, query.dim())?;
        }
        let q = query.as_slice();
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in self.records.iter().enumerate().skip(from) {
            let s = dot(q, r.embedding.as_slice());
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        Ok(best.map(|(i, s)| {
            let r = &self.records[i];
            MatchResult {
                identity: r.identity,
                best_score: s.clamp(-1.0, 1.0),
                matched_record: r.image_id,
                insertion_index: r.insertion_index,
            }
        }))
    }

    /// Identity of the most similar record (exhaustive scan).
    pub fn recognize(&self, query: &Embedding) -> Result<MatchResult> {
        self.best_from(query, 0)?.ok_or(Error::EmptyGallery)
    }
}

/// True iff some reference scores at least `threshold` against `query`.
pub fn verify(references: &[Embedding], query: &Embedding, threshold: f64) -> Result<bool> {
    if references.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    let mut best = f64::NEG_INFINITY;
    for r in references {
        best = best.max(r.cosine(query)?);
    }
    Ok(best >= threshold)
}
