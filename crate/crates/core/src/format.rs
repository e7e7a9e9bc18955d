//! Plain-text embedding file format.
//!
//! One image per line: `identity_id,image_id,protected_flag,v1,...,vd`, with
//! every float written at 17 significant digits so a write/read cycle is
//! bit-exact. Lines starting with `#` carry world metadata that plain
//! record readers may ignore:
//!
//! ```text
//! #world,<seed>,<dims>
//! #identity,<id>,<mean v1..vd>
//! #extractor,<id>,<noise_scale>,<noise_seed>,<transform row-major, d*d>
//! #aux,<v1..vd>
//! ```
//!
//! Any other `#` line is a comment. A file with no metadata lines is an
//! external embedding dump: identity means are recomputed from the records,
//! a single identity extractor is assumed and the auxiliary pool is empty.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::world::{Extractor, ExtractorId, Identity, IdentityLabel, ImageRecord, World};

fn push_floats(out: &mut String, vals: &[f64]) {
    for v in vals {
        write!(out, ",{v:.16e}").unwrap();
    }
}

pub fn record_line(r: &ImageRecord) -> String {
    let mut s = format!("{},{},{}", r.identity.0, r.image_id, r.protected as u8);
    push_floats(&mut s, &r.latent);
    s
}

/// Serializes image records only (no metadata).
pub fn records_to_string<'a>(records: impl IntoIterator<Item = &'a ImageRecord>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&record_line(r));
        out.push('\n');
    }
    out
}

pub fn world_to_string(world: &World) -> String {
    let mut out = format!("#world,{},{}\n", world.seed, world.dims);
    for ident in &world.identities {
        write!(out, "#identity,{}", ident.label.0).unwrap();
        push_floats(&mut out, ident.mean.as_slice());
        out.push('\n');
    }
    for e in &world.extractors {
        write!(out, "#extractor,{},{:.16e},{}", e.id.0, e.noise_scale(), e.noise_seed()).unwrap();
        push_floats(&mut out, e.transform());
        out.push('\n');
    }
    for a in &world.aux_pool {
        out.push_str("#aux");
        push_floats(&mut out, a.as_slice());
        out.push('\n');
    }
    out.push_str(&records_to_string(&world.images));
    out
}

pub fn export_world(world: &World, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), world_to_string(world).as_bytes())
}

pub fn export_records<'a>(
    records: impl IntoIterator<Item = &'a ImageRecord>,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_atomic(path.as_ref(), records_to_string(records).as_bytes())
}

pub fn import_embeddings(path: impl AsRef<Path>) -> Result<World> {
    let text = std::fs::read_to_string(path)?;
    parse_world(&text)
}

/// Writes through a sibling temp file and renames, so readers never observe
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct LineParser<'a> {
    line: usize,
    fields: std::str::Split<'a, char>,
}

impl<'a> LineParser<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn next_field(&mut self, what: &str) -> Result<&'a str> {
        let line = self.line;
        self.fields.next().map(str::trim).ok_or_else(|| Error::Parse {
            line,
            message: format!("missing {what}"),
        })
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let f = self.next_field(what)?;
        f.parse().map_err(|_| self.err(format!("invalid {what} `{f}`")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let f = self.next_field(what)?;
        match f.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(format!("invalid {what} `{f}`"))),
        }
    }

    fn rest(&mut self) -> Result<Vec<f64>> {
        let line = self.line;
        self.fields
            .by_ref()
            .map(|f| {
                let f = f.trim();
                match f.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::Parse {
                        line,
                        message: format!("invalid float `{f}`"),
                    }),
                }
            })
            .collect()
    }
}

fn check_row_dims(dims: &mut Option<usize>, got: usize, line: usize) -> Result<()> {
    if got == 0 {
        return Err(Error::Parse {
            line,
            message: "record has no vector components".into(),
        });
    }
    match *dims {
        None => {
            *dims = Some(got);
            Ok(())
        }
        Some(d) if d == got => Ok(()),
        Some(d) => Err(Error::DimensionMismatch {
            expected: d,
            actual: got,
        }),
    }
}

pub fn parse_world(text: &str) -> Result<World> {
    let mut header: Option<(u64, usize)> = None;
    let mut dims: Option<usize> = None;
    let mut identities = Vec::new();
    let mut extractors = Vec::new();
    let mut aux_pool = Vec::new();
    let mut images = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(meta) = trimmed.strip_prefix('#') {
            let mut p = LineParser {
                line,
                fields: meta.split(','),
            };
            match p.next_field("tag")? {
                "world" => {
                    let seed = p.u64("seed")?;
                    let d = p.u64("dims")? as usize;
                    check_row_dims(&mut dims, d, line)?;
                    header = Some((seed, d));
                }
                "identity" => {
                    let label = IdentityLabel(p.u64("identity id")?);
                    let v = p.rest()?;
                    check_row_dims(&mut dims, v.len(), line)?;
                    let mean = Embedding::from_unit(v).map_err(|e| p.err(e.to_string()))?;
                    identities.push(Identity { label, mean });
                }
                "extractor" => {
                    let id = ExtractorId(p.u64("extractor id")?);
                    let noise = p.f64("noise scale")?;
                    let noise_seed = p.u64("noise seed")?;
                    let t = p.rest()?;
                    let d = (t.len() as f64).sqrt().round() as usize;
                    check_row_dims(&mut dims, d, line)?;
                    extractors.push(
                        Extractor::new(id, t, noise, noise_seed).map_err(|e| p.err(e.to_string()))?,
                    );
                }
                "aux" => {
                    let v = p.rest()?;
                    check_row_dims(&mut dims, v.len(), line)?;
                    aux_pool.push(Embedding::from_unit(v).map_err(|e| p.err(e.to_string()))?);
                }
                _ => {}
            }
            continue;
        }
        let mut p = LineParser {
            line,
            fields: trimmed.split(','),
        };
        let identity = IdentityLabel(p.u64("identity id")?);
        let image_id = p.u64("image id")?;
        let protected = match p.next_field("protected flag")? {
            "0" => false,
            "1" => true,
            other => return Err(p.err(format!("invalid protected flag `{other}`"))),
        };
        let latent = p.rest()?;
        check_row_dims(&mut dims, latent.len(), line)?;
        images.push(ImageRecord {
            image_id,
            identity,
            latent,
            protected,
        });
    }

    let dims = dims.ok_or(Error::Parse {
        line: 0,
        message: "file contains no records".into(),
    })?;

    if identities.is_empty() {
        identities = recompute_means(&images)?;
    }
    if extractors.is_empty() {
        extractors.push(Extractor::identity(ExtractorId(0), dims));
    }
    let seed = header.map(|h| h.0).unwrap_or(0);
    Ok(World {
        identities,
        images,
        extractors,
        aux_pool,
        seed,
        dims,
    })
}

fn recompute_means(images: &[ImageRecord]) -> Result<Vec<Identity>> {
    let mut sums: BTreeMap<IdentityLabel, Vec<f64>> = BTreeMap::new();
    for r in images {
        let s = sums.entry(r.identity).or_insert_with(|| vec![0.0; r.latent.len()]);
        for (a, b) in s.iter_mut().zip(&r.latent) {
            *a += b;
        }
    }
    sums.into_iter()
        .map(|(label, s)| {
            Ok(Identity {
                label,
                mean: Embedding::normalize(&s)?,
            })
        })
        .collect()
}
