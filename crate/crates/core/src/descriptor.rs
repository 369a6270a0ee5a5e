//! Holistic image descriptors and their on-disk exchange format.
//!
//! Two extractors are built in: a cyclic HOG and a block-mean colour grid.
//! Descriptors computed elsewhere (for instance pooled CNN activations) enter
//! through [`import`], which reads the same binary layout [`export`] writes:
//!
//! ```text
//! magic "HLOC" | u32 version = 1 | u32 count | u32 dim | count·dim f32   (little-endian)
//! ```
//!
//! with a JSON sidecar `{ "ids": [...], "method": "...", "manifest": "..." }`
//! listing row ids in order.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_file, Manifest};
use crate::error::{Error, Result};
use crate::imaging::{resize, Panorama};

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"HLOC";
pub const DESCRIPTOR_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hog,
    #[serde(rename = "blockmean")]
    BlockMean,
    Imported,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hog => "hog",
            Method::BlockMean => "blockmean",
            Method::Imported => "imported",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hog" => Ok(Method::Hog),
            "blockmean" => Ok(Method::BlockMean),
            "imported" => Ok(Method::Imported),
            other => Err(Error::arg(format!("unknown descriptor method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub source_id: String,
    pub values: Vec<f32>,
}

impl Descriptor {
    pub fn new(source_id: impl Into<String>, values: Vec<f32>) -> Self {
        Self {
            source_id: source_id.into(),
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Descriptors of one method and dimension, row-aligned with a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSet {
    pub method: Method,
    dim: usize,
    rows: Vec<Descriptor>,
    /// Path of the manifest the rows were computed from, if known.
    pub manifest: Option<String>,
}

impl DescriptorSet {
    pub fn new(method: Method, dim: usize, rows: Vec<Descriptor>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid(
                "descriptor dimension must be positive".into(),
            ));
        }
        for row in &rows {
            if row.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.dim(),
                });
            }
            if row.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "descriptor {:?} has non-finite components",
                    row.source_id
                )));
            }
        }
        Ok(Self {
            method,
            dim,
            rows,
            manifest: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Descriptor] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.source_id.as_str()).collect()
    }

    /// Reorders rows to follow the manifest's record order, one row per record.
    pub fn align(&self, m: &Manifest) -> Result<DescriptorSet> {
        let mut by_id: HashMap<&str, &Descriptor> = HashMap::with_capacity(self.rows.len());
        for row in &self.rows {
            if by_id.insert(row.source_id.as_str(), row).is_some() {
                return Err(Error::Invalid(format!(
                    "duplicate descriptor id {:?}",
                    row.source_id
                )));
            }
        }
        let mut rows = Vec::with_capacity(m.len());
        for rec in m.records() {
            let row = by_id
                .remove(rec.id.as_str())
                .ok_or_else(|| Error::Alignment(rec.id.clone()))?;
            rows.push(row.clone());
        }
        if let Some(extra) = self
            .rows
            .iter()
            .find(|r| by_id.contains_key(r.source_id.as_str()))
        {
            return Err(Error::Invalid(format!(
                "descriptor id {:?} is not in the manifest",
                extra.source_id
            )));
        }
        Ok(DescriptorSet {
            rows,
            ..self.clone()
        })
    }
}

/// Gradient histograms over `cell`×`cell` cells, `bins` orientation bins
/// spanning `[0°, 180°)`, each non-overlapping 2×2 cell block L2-normalized.
///
/// Orientation is that of the edge (perpendicular to the intensity gradient),
/// so a vertical edge votes into the 90° bin. Horizontal differences wrap
/// across the panorama seam; vertical ones replicate the border rows.
/// Output layout: blocks row-major, cells row-major within a block, then bins;
/// `m = (W/cell)·(H/cell)·bins`.
pub fn describe_hog(p: &Panorama, cell: usize, bins: usize) -> Result<Vec<f32>> {
    if cell == 0 || bins == 0 {
        return Err(Error::arg("HOG cell size and bin count must be positive"));
    }
    let (w, h) = (p.width(), p.height());
    if w % cell != 0 || h % cell != 0 {
        return Err(Error::arg(format!(
            "image {w}x{h} is not divisible into {cell}-pixel cells"
        )));
    }
    let (cw, ch) = (w / cell, h / cell);
    let luma = p.luma();
    let bin_width = 180.0 / bins as f64;

    let mut hist = vec![0.0f64; cw * ch * bins];
    for y in 0..h {
        let up = &luma[y.saturating_sub(1) * w..][..w];
        let down = &luma[(y + 1).min(h - 1) * w..][..w];
        let row = &luma[y * w..][..w];
        for x in 0..w {
            let gx = row[(x + 1) % w] - row[(x + w - 1) % w];
            let gy = down[x] - up[x];
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let angle = (gy.atan2(gx).to_degrees() + 90.0).rem_euclid(180.0);
            let bin = ((angle / bin_width) as usize).min(bins - 1);
            hist[((y / cell) * cw + x / cell) * bins + bin] += mag;
        }
    }

    let mut out = Vec::with_capacity(hist.len());
    let mut block = Vec::with_capacity(4 * bins);
    for by in (0..ch).step_by(2) {
        for bx in (0..cw).step_by(2) {
            block.clear();
            for cy in by..(by + 2).min(ch) {
                for cx in bx..(bx + 2).min(cw) {
                    block.extend_from_slice(&hist[(cy * cw + cx) * bins..][..bins]);
                }
            }
            let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                out.extend(block.iter().map(|v| (v / norm) as f32));
            } else {
                out.extend(std::iter::repeat(0.0f32).take(block.len()));
            }
        }
    }
    Ok(out)
}

/// Mean of each channel over a `gw`×`gh` grid of blocks, scaled to `[0, 1]`.
/// Layout: blocks row-major, RGB within each block; `m = 3·gw·gh`.
pub fn describe_blockmean(p: &Panorama, gw: usize, gh: usize) -> Result<Vec<f32>> {
    let (w, h) = (p.width(), p.height());
    if gw == 0 || gh == 0 || gw > w || gh > h {
        return Err(Error::arg(format!(
            "block grid {gw}x{gh} does not fit a {w}x{h} image"
        )));
    }
    let mut out = Vec::with_capacity(3 * gw * gh);
    for by in 0..gh {
        let (y0, y1) = (by * h / gh, (by + 1) * h / gh);
        for bx in 0..gw {
            let (x0, x1) = (bx * w / gw, (bx + 1) * w / gw);
            let mut sum = [0u64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = p.get(x, y);
                    for c in 0..3 {
                        sum[c] += px[c] as u64;
                    }
                }
            }
            let n = ((x1 - x0) * (y1 - y0)) as f64 * 255.0;
            out.extend(sum.iter().map(|&s| (s as f64 / n) as f32));
        }
    }
    Ok(out)
}

pub fn l2_normalize(values: &mut [f32]) {
    let norm = values
        .iter()
        .map(|&v| v as f64 * v as f64)
        .sum::<f64>()
        .sqrt();
    if norm > 0.0 {
        for v in values {
            *v = (*v as f64 / norm) as f32;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extractor {
    Hog { cell: usize, bins: usize },
    BlockMean { gw: usize, gh: usize },
}

impl Default for Extractor {
    fn default() -> Self {
        Extractor::Hog { cell: 16, bins: 8 }
    }
}

impl Extractor {
    pub fn method(&self) -> Method {
        match self {
            Extractor::Hog { .. } => Method::Hog,
            Extractor::BlockMean { .. } => Method::BlockMean,
        }
    }

    pub fn describe(&self, p: &Panorama) -> Result<Vec<f32>> {
        match *self {
            Extractor::Hog { cell, bins } => describe_hog(p, cell, bins),
            Extractor::BlockMean { gw, gh } => describe_blockmean(p, gw, gh),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DescribeConfig {
    pub extractor: Extractor,
    /// Resize every image to this `(width, height)` first.
    pub input_size: Option<(usize, usize)>,
    pub l2norm: bool,
}

impl Default for DescribeConfig {
    fn default() -> Self {
        Self {
            extractor: Extractor::default(),
            input_size: Some((512, 128)),
            l2norm: false,
        }
    }
}

impl DescribeConfig {
    pub fn describe(&self, p: &Panorama) -> Result<Vec<f32>> {
        let mut values = match self.input_size {
            Some((w, h)) if (w, h) != (p.width(), p.height()) => {
                self.extractor.describe(&resize(p, w, h)?)?
            }
            _ => self.extractor.describe(p)?,
        };
        if self.l2norm {
            l2_normalize(&mut values);
        }
        Ok(values)
    }
}

/// Loads and describes every record of the manifest, in parallel, keeping
/// record order.
pub fn describe_manifest(m: &Manifest, cfg: &DescribeConfig) -> Result<DescriptorSet> {
    let rows = m
        .records()
        .par_iter()
        .map(|r| {
            let img = Panorama::load(&r.path)?;
            Ok(Descriptor::new(r.id.clone(), cfg.describe(&img)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = match rows.first() {
        Some(r) => r.dim(),
        None => return Err(Error::NoRecords),
    };
    DescriptorSet::new(cfg.extractor.method(), dim, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub ids: Vec<String>,
    pub method: Method,
    #[serde(default)]
    pub manifest: String,
}

/// Companion JSON path for a descriptor file: same stem, `.json` extension.
pub fn sidecar_path(values_path: &Path) -> PathBuf {
    values_path.with_extension("json")
}

pub fn encode_values(ds: &DescriptorSet) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + ds.len() * ds.dim() * 4);
    buf.extend_from_slice(DESCRIPTOR_MAGIC);
    buf.extend_from_slice(&DESCRIPTOR_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.dim() as u32).to_le_bytes());
    for row in ds.rows() {
        for v in &row.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

/// Parses the binary values file into `(count, dim, values)`.
pub fn decode_values(bytes: &[u8], origin: &Path) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(origin, "truncated header"));
    }
    if &bytes[..4] != DESCRIPTOR_MAGIC {
        return Err(Error::format(origin, "bad magic, expected \"HLOC\""));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != DESCRIPTOR_VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported version {version}"),
        ));
    }
    let (count, dim) = (word(8) as usize, word(12) as usize);
    if dim == 0 {
        return Err(Error::format(origin, "dimension is zero"));
    }
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(origin, "count·dim overflows"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < expected {
        return Err(Error::format(
            origin,
            format!(
                "truncated file: {count}x{dim} needs {} floats, found {}",
                count * dim,
                body.len() / 4
            ),
        ));
    }
    if body.len() > expected {
        return Err(Error::format(origin, "trailing bytes after the last row"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((count, dim, values))
}

/// Writes the values file and its JSON sidecar.
pub fn export(ds: &DescriptorSet, path: &Path) -> Result<()> {
    write_file(path, &encode_values(ds))?;
    let sidecar = Sidecar {
        ids: ds.rows().iter().map(|r| r.source_id.clone()).collect(),
        method: ds.method,
        manifest: ds.manifest.clone().unwrap_or_default(),
    };
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    write_file(&sidecar_path(path), &json)
}

fn read_ids(path: &Path) -> Result<Sidecar> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let json_err = |source| Error::Json {
        path: path.to_path_buf(),
        source,
    };
    // Either a full sidecar object or a bare array of ids.
    match serde_json::from_slice::<Sidecar>(&text) {
        Ok(s) => Ok(s),
        Err(_) => {
            let ids: Vec<String> = serde_json::from_slice(&text).map_err(json_err)?;
            Ok(Sidecar {
                ids,
                method: Method::Imported,
                manifest: String::new(),
            })
        }
    }
}

/// Reads a values file plus an id list (a sidecar object or a bare JSON array).
pub fn import(values_path: &Path, ids_path: &Path) -> Result<DescriptorSet> {
    let bytes = fs::read(values_path).map_err(|e| Error::io(values_path, e))?;
    let (count, dim, values) = decode_values(&bytes, values_path)?;
    let sidecar = read_ids(ids_path)?;
    if sidecar.ids.len() != count {
        return Err(Error::format(
            ids_path,
            format!("{} ids for {count} descriptor rows", sidecar.ids.len()),
        ));
    }
    let rows = sidecar
        .ids
        .into_iter()
        .zip(values.chunks_exact(dim))
        .map(|(id, v)| Descriptor::new(id, v.to_vec()))
        .collect();
    let mut ds = DescriptorSet::new(sidecar.method, dim, rows)?;
    if !sidecar.manifest.is_empty() {
        ds.manifest = Some(sidecar.manifest);
    }
    Ok(ds)
}

/// [`import`] with the sidecar next to the values file.
pub fn load(values_path: &Path) -> Result<DescriptorSet> {
    import(values_path, &sidecar_path(values_path))
}
