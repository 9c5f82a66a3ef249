//! Single-file container for checkpoints, calibration batches and
//! quantized artifacts.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RPIQ" | u32 format_version | u64 header_length | header (UTF-8 JSON) | blob
//! ```
//!
//! The header lists every payload by byte offset and length into the blob
//! and carries a SHA-256 of the blob. Matrices are row-major `f32`
//! (snapshots are `f64`); quantized codes are bit-packed as in
//! [`crate::quantgrid::pack`]; grids are `(f32 scale, u8 zero_point)`
//! records, five bytes each.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::quantgrid::{pack, unpack, CodeMatrix, GridParams, PackedBlock, QuantGrid};

pub const MAGIC: &[u8; 4] = b"RPIQ";
pub const FORMAT_VERSION: u32 = 1;

const PREAMBLE_LEN: usize = 4 + 4 + 8;
const GRID_RECORD_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Checkpoint,
    Calibration,
    Quantized,
}

/// Header record of one dense layer (or calibration batch).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub blob_offset: u64,
    pub blob_length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub kind: FileKind,
    pub layers: Vec<LayerEntry>,
    pub blob_length: u64,
    pub checksum: String,
}

/// Named full-precision matrices in declared order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub layers: Vec<(String, DenseMatrix)>,
}

impl Checkpoint {
    pub fn new(layers: Vec<(String, DenseMatrix)>) -> Self {
        Self { layers }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn matrices(&self) -> impl Iterator<Item = &DenseMatrix> {
        self.layers.iter().map(|(_, m)| m)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn encode_file<H: Serialize>(header: &H, blob: &[u8]) -> Result<Vec<u8>> {
    let header =
        serde_json::to_vec(header).map_err(|e| Error::Corrupt(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(blob);
    Ok(out)
}

/// Splits a file into its header bytes and blob, checking magic and version.
fn decode_file(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    if bytes.len() < PREAMBLE_LEN {
        return Err(Error::Corrupt("file shorter than preamble".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let rest = &bytes[PREAMBLE_LEN..];
    if header_len > rest.len() {
        return Err(Error::Corrupt("header extends past end of file".into()));
    }
    Ok(rest.split_at(header_len))
}

fn parse_header<'a, H: Deserialize<'a>>(header: &'a [u8]) -> Result<H> {
    serde_json::from_slice(header).map_err(|e| Error::Corrupt(format!("header: {e}")))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

fn f32_payload(m: &DenseMatrix) -> Vec<u8> {
    m.data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

fn f64_payload(m: &DenseMatrix) -> Vec<u8> {
    m.data().iter().flat_map(|&v| v.to_le_bytes()).collect()
}

fn read_matrix(blob: &[u8], entry: &LayerEntry) -> Result<DenseMatrix> {
    let width = match entry.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => {
            return Err(Error::Corrupt(format!(
                "layer {}: unknown dtype {other}",
                entry.name
            )))
        }
    };
    let expected = (entry.rows * entry.cols * width) as u64;
    if entry.blob_length != expected {
        return Err(Error::Corrupt(format!(
            "layer {}: blob_length {} does not match {}x{} {}",
            entry.name, entry.blob_length, entry.rows, entry.cols, entry.dtype
        )));
    }
    let start = entry.blob_offset as usize;
    let end = start + entry.blob_length as usize;
    if end > blob.len() {
        return Err(Error::Corrupt(format!(
            "layer {}: truncated blob",
            entry.name
        )));
    }
    let bytes = &blob[start..end];
    let data: Vec<f64> = if width == 4 {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    } else {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    };
    DenseMatrix::from_vec(entry.rows, entry.cols, data)
        .map_err(|_| Error::Corrupt(format!("layer {}: non-finite payload", entry.name)))
}

fn check_layout(layers: &[LayerEntry]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    let mut cursor = 0u64;
    for l in layers {
        if !seen.insert(l.name.as_str()) {
            return Err(Error::Corrupt(format!("duplicate layer name {}", l.name)));
        }
        if l.blob_offset < cursor {
            return Err(Error::Corrupt(format!(
                "layer {} overlaps its predecessor",
                l.name
            )));
        }
        cursor = l.blob_offset + l.blob_length;
    }
    Ok(())
}

/// Serializes dense matrices. Entries are narrowed to `f32`.
pub fn encode_checkpoint(ckpt: &Checkpoint, kind: FileKind) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let mut layers = Vec::with_capacity(ckpt.layers.len());
    for (name, m) in &ckpt.layers {
        let payload = f32_payload(m);
        layers.push(LayerEntry {
            name: name.clone(),
            rows: m.rows(),
            cols: m.cols(),
            dtype: "f32".into(),
            blob_offset: blob.len() as u64,
            blob_length: payload.len() as u64,
        });
        blob.extend_from_slice(&payload);
    }
    check_layout(&layers)?;
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        kind,
        layers,
        blob_length: blob.len() as u64,
        checksum: sha256_hex(&blob),
    };
    encode_file(&manifest, &blob)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelManifest, Checkpoint)> {
    let (header, blob) = decode_file(bytes)?;
    let manifest: ModelManifest = parse_header(header)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Version(manifest.format_version));
    }
    if manifest.kind == FileKind::Quantized {
        return Err(Error::Corrupt(
            "quantized artifact where a checkpoint was expected".into(),
        ));
    }
    check_layout(&manifest.layers)?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        layers.push((entry.name.clone(), read_matrix(blob, entry)?));
    }
    if blob.len() as u64 != manifest.blob_length || sha256_hex(blob) != manifest.checksum {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    Ok((manifest, Checkpoint { layers }))
}

pub fn save_checkpoint(ckpt: &Checkpoint, kind: FileKind, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt, kind)?).map_err(|e| at_path(e, path))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelManifest, Checkpoint)> {
    decode_checkpoint(&read(path)?).map_err(|e| at_path(e, path))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| at_path(e.into(), path))
}

/// Prefixes file errors with the offending path.
fn at_path(e: Error, path: &Path) -> Error {
    let p = path.display();
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{p}: {io}"))),
        Error::Corrupt(m) => Error::Corrupt(format!("{p}: {m}")),
        other => other,
    }
}

/// Per-layer convergence summary stored with a quantized layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub gamma_init: f64,
    pub gamma_final: f64,
    pub iterations: usize,
    pub stopped_early: bool,
}

/// The retained calibration instance, stored at full precision.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSnapshot {
    pub x_orig: DenseMatrix,
    pub y_orig: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub bits: u8,
    pub group_size: usize,
    /// `(scale, zero_point)` per group, row-major over `(row, group)`.
    pub grids: Vec<(f32, u8)>,
    pub packed: PackedBlock,
    pub trace: TraceSummary,
    pub snapshot: Option<StoredSnapshot>,
}

impl QuantizedLayer {
    /// Packs engine codes and grids. Grid scales must already be `f32`
    /// values, which [`crate::quantgrid::fit_grid`] guarantees.
    pub fn from_codes(
        name: impl Into<String>,
        codes: &CodeMatrix,
        grids: &QuantGrid,
        trace: TraceSummary,
    ) -> Result<Self> {
        if codes.rows() != grids.rows() || codes.cols() != grids.cols() {
            return Err(Error::shape(
                "QuantizedLayer::from_codes",
                format!("{}x{}", grids.rows(), grids.cols()),
                format!("{}x{}", codes.rows(), codes.cols()),
            ));
        }
        let mut records = Vec::with_capacity(grids.params().len());
        for p in grids.params() {
            let s = p.scale as f32;
            if s as f64 != p.scale {
                return Err(Error::Argument(format!(
                    "grid scale {} is not an f32 value",
                    p.scale
                )));
            }
            records.push((s, p.zero_point));
        }
        Ok(Self {
            name: name.into(),
            rows: codes.rows(),
            cols: codes.cols(),
            bits: grids.bits(),
            group_size: grids.group_size(),
            grids: records,
            packed: pack(codes.codes(), grids.bits())?,
            trace,
            snapshot: None,
        })
    }

    pub fn quant_grid(&self) -> Result<QuantGrid> {
        let params = self
            .grids
            .iter()
            .map(|&(s, z)| GridParams::new(s as f64, z, self.bits))
            .collect::<Result<Vec<_>>>()?;
        QuantGrid::from_params(self.rows, self.cols, self.bits, self.group_size, params)
    }

    pub fn codes(&self) -> Result<CodeMatrix> {
        CodeMatrix::new(self.rows, self.cols, unpack(&self.packed)?)
    }

    /// Dequantized weights in `f64`; each entry is `scale·(code − zero)`.
    pub fn dequantize(&self) -> Result<DenseMatrix> {
        self.quant_grid()?.dequantize_matrix(&self.codes()?)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuantizedArtifact {
    pub layers: Vec<QuantizedLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SnapshotEntry {
    x_rows: usize,
    x_offset: u64,
    y_cols: usize,
    y_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QuantizedEntry {
    name: String,
    rows: usize,
    cols: usize,
    bits: u8,
    group_size: usize,
    grids_offset: u64,
    grids_length: u64,
    codes_offset: u64,
    codes_length: u64,
    trace: TraceSummary,
    snapshot: Option<SnapshotEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QuantizedHeader {
    format_version: u32,
    kind: FileKind,
    layers: Vec<QuantizedEntry>,
    blob_length: u64,
    checksum: String,
}

pub fn encode_quantized(artifact: &QuantizedArtifact) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(artifact.layers.len());
    for layer in &artifact.layers {
        let groups = layer.rows * layer.cols.div_ceil(layer.group_size.max(1));
        if layer.grids.len() != groups {
            return Err(Error::shape("encode_quantized", groups, layer.grids.len()));
        }
        let grids_offset = blob.len() as u64;
        for &(s, z) in &layer.grids {
            blob.extend_from_slice(&s.to_le_bytes());
            blob.push(z);
        }
        let codes_offset = blob.len() as u64;
        blob.extend_from_slice(&layer.packed.bytes);
        let snapshot = layer.snapshot.as_ref().map(|s| {
            let x_offset = blob.len() as u64;
            blob.extend_from_slice(&f64_payload(&s.x_orig));
            let y_offset = blob.len() as u64;
            blob.extend_from_slice(&f64_payload(&s.y_orig));
            SnapshotEntry {
                x_rows: s.x_orig.rows(),
                x_offset,
                y_cols: s.y_orig.cols(),
                y_offset,
            }
        });
        entries.push(QuantizedEntry {
            name: layer.name.clone(),
            rows: layer.rows,
            cols: layer.cols,
            bits: layer.bits,
            group_size: layer.group_size,
            grids_offset,
            grids_length: codes_offset - grids_offset,
            codes_offset,
            codes_length: layer.packed.bytes.len() as u64,
            trace: layer.trace,
            snapshot,
        });
    }
    let header = QuantizedHeader {
        format_version: FORMAT_VERSION,
        kind: FileKind::Quantized,
        layers: entries,
        blob_length: blob.len() as u64,
        checksum: sha256_hex(&blob),
    };
    encode_file(&header, &blob)
}

fn slice<'a>(blob: &'a [u8], offset: u64, len: u64, what: &str) -> Result<&'a [u8]> {
    let start = offset as usize;
    let end = start
        .checked_add(len as usize)
        .ok_or_else(|| Error::Corrupt(format!("{what}: offset overflow")))?;
    blob.get(start..end)
        .ok_or_else(|| Error::Corrupt(format!("{what}: truncated blob")))
}

pub fn decode_quantized(bytes: &[u8]) -> Result<QuantizedArtifact> {
    let (header, blob) = decode_file(bytes)?;
    let header: QuantizedHeader = parse_header(header)?;
    if header.kind != FileKind::Quantized {
        return Err(Error::Corrupt("not a quantized artifact".into()));
    }
    if blob.len() as u64 != header.blob_length || sha256_hex(blob) != header.checksum {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    let mut layers = Vec::with_capacity(header.layers.len());
    for e in header.layers {
        let grid_bytes = slice(blob, e.grids_offset, e.grids_length, &e.name)?;
        if grid_bytes.len() % GRID_RECORD_LEN != 0 {
            return Err(Error::Corrupt(format!(
                "layer {}: ragged grid records",
                e.name
            )));
        }
        let grids = grid_bytes
            .chunks_exact(GRID_RECORD_LEN)
            .map(|c| {
                (
                    f32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                    c[4],
                )
            })
            .collect();
        let packed = PackedBlock {
            bits: e.bits,
            len: e.rows * e.cols,
            bytes: slice(blob, e.codes_offset, e.codes_length, &e.name)?.to_vec(),
        };
        let snapshot = match &e.snapshot {
            None => None,
            Some(s) => {
                let x = LayerEntry {
                    name: format!("{}.x_orig", e.name),
                    rows: s.x_rows,
                    cols: e.cols,
                    dtype: "f64".into(),
                    blob_offset: s.x_offset,
                    blob_length: (s.x_rows * e.cols * 8) as u64,
                };
                let y = LayerEntry {
                    name: format!("{}.y_orig", e.name),
                    rows: s.x_rows,
                    cols: s.y_cols,
                    dtype: "f64".into(),
                    blob_offset: s.y_offset,
                    blob_length: (s.x_rows * s.y_cols * 8) as u64,
                };
                Some(StoredSnapshot {
                    x_orig: read_matrix(blob, &x)?,
                    y_orig: read_matrix(blob, &y)?,
                })
            }
        };
        let layer = QuantizedLayer {
            name: e.name,
            rows: e.rows,
            cols: e.cols,
            bits: e.bits,
            group_size: e.group_size,
            grids,
            packed,
            trace: e.trace,
            snapshot,
        };
        // validates grid count, bit width and packed length
        layer.quant_grid()?;
        layer.codes()?;
        layers.push(layer);
    }
    Ok(QuantizedArtifact { layers })
}

pub fn save_quantized(artifact: &QuantizedArtifact, path: &Path) -> Result<()> {
    write_atomic(path, &encode_quantized(artifact)?).map_err(|e| at_path(e, path))
}

pub fn load_quantized(path: &Path) -> Result<QuantizedArtifact> {
    decode_quantized(&read(path)?).map_err(|e| at_path(e, path))
}
