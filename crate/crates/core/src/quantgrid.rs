//! Uniform asymmetric group quantization.
//!
//! A [`QuantGrid`] holds one `(scale, zero_point)` pair per group of
//! `group_size` consecutive input channels in every output row. Scales are
//! rounded up to the nearest `f32` when fitted so that a stored grid
//! dequantizes to exactly the same values as the in-memory one.

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;

/// Floor applied to the scale of a zero-width range.
pub const SCALE_FLOOR: f64 = 1e-12;

/// Parameters of one quantization group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    pub scale: f64,
    pub zero_point: u8,
    pub bits: u8,
}

#[inline]
pub fn max_code(bits: u8) -> u32 {
    (1u32 << bits) - 1
}

pub fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::Argument(format!(
            "bits must lie in [{MIN_BITS}, {MAX_BITS}], got {bits}"
        )));
    }
    Ok(())
}

/// Smallest `f32` that is `>= v`, widened back to `f64`.
fn round_up_f32(v: f64) -> f64 {
    let f = v as f32;
    if (f as f64) < v {
        f.next_up() as f64
    } else {
        f as f64
    }
}

/// Min/max grid over a group. The fitted range always contains zero, so a
/// group of exact zeros stays exactly zero and clamping never moves an
/// in-range value by more than half a step.
pub fn fit_grid(values: &[f64], bits: u8) -> Result<GridParams> {
    check_bits(bits)?;
    if values.is_empty() {
        return Err(Error::Argument(
            "cannot fit a grid to an empty group".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite value in group".into()));
    }
    let lo = values.iter().cloned().fold(0.0, f64::min);
    let hi = values.iter().cloned().fold(0.0, f64::max);
    let levels = max_code(bits) as f64;
    let scale = if hi == lo {
        SCALE_FLOOR
    } else {
        ((hi - lo) / levels).max(SCALE_FLOOR)
    };
    let scale = round_up_f32(scale);
    let zero = (-lo / scale).round_ties_even().clamp(0.0, levels);
    Ok(GridParams {
        scale,
        zero_point: zero as u8,
        bits,
    })
}

impl GridParams {
    pub fn new(scale: f64, zero_point: u8, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::Argument(format!(
                "scale must be positive, got {scale}"
            )));
        }
        if zero_point as u32 > max_code(bits) {
            return Err(Error::Argument(format!(
                "zero point {zero_point} exceeds {}",
                max_code(bits)
            )));
        }
        Ok(Self {
            scale,
            zero_point,
            bits,
        })
    }

    /// `clamp(round(x / scale) + zero_point, 0, 2^bits − 1)`, ties to even.
    #[inline]
    pub fn quantize(&self, x: f64) -> u8 {
        let q = (x / self.scale).round_ties_even() + self.zero_point as f64;
        q.clamp(0.0, max_code(self.bits) as f64) as u8
    }

    #[inline]
    pub fn dequantize_unchecked(&self, code: u8) -> f64 {
        self.scale * (code as f64 - self.zero_point as f64)
    }

    pub fn dequantize(&self, code: u8) -> Result<f64> {
        if code as u32 > max_code(self.bits) {
            return Err(Error::Argument(format!(
                "code {code} exceeds {}",
                max_code(self.bits)
            )));
        }
        Ok(self.dequantize_unchecked(code))
    }

    /// Nearest grid level of `x`.
    #[inline]
    pub fn project(&self, x: f64) -> f64 {
        self.dequantize_unchecked(self.quantize(x))
    }
}

pub fn quantize(x: f64, grid: &GridParams) -> u8 {
    grid.quantize(x)
}

pub fn dequantize(code: u8, grid: &GridParams) -> Result<f64> {
    grid.dequantize(code)
}

/// Per-row, per-group grids for a `rows × cols` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGrid {
    bits: u8,
    group_size: usize,
    rows: usize,
    cols: usize,
    params: Vec<GridParams>,
}

impl QuantGrid {
    /// Fits one grid per `group_size` columns of every row of `w`.
    pub fn fit(w: &DenseMatrix, bits: u8, group_size: usize) -> Result<Self> {
        check_bits(bits)?;
        if group_size == 0 {
            return Err(Error::Argument("group size must be positive".into()));
        }
        let groups = w.cols().div_ceil(group_size);
        let mut params = Vec::with_capacity(w.rows() * groups);
        for r in 0..w.rows() {
            for chunk in w.row(r).chunks(group_size) {
                params.push(fit_grid(chunk, bits)?);
            }
        }
        Ok(Self {
            bits,
            group_size,
            rows: w.rows(),
            cols: w.cols(),
            params,
        })
    }

    /// Assembles a grid set from stored parameters, validating the layout.
    pub fn from_params(
        rows: usize,
        cols: usize,
        bits: u8,
        group_size: usize,
        params: Vec<GridParams>,
    ) -> Result<Self> {
        check_bits(bits)?;
        if group_size == 0 {
            return Err(Error::Argument("group size must be positive".into()));
        }
        let expected = rows * cols.div_ceil(group_size);
        if params.len() != expected {
            return Err(Error::shape(
                "QuantGrid::from_params",
                expected,
                params.len(),
            ));
        }
        if params.iter().any(|p| p.bits != bits) {
            return Err(Error::Argument("grid bit widths disagree".into()));
        }
        Ok(Self {
            bits,
            group_size,
            rows,
            cols,
            params,
        })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn groups_per_row(&self) -> usize {
        self.cols.div_ceil(self.group_size)
    }

    pub fn params(&self) -> &[GridParams] {
        &self.params
    }

    pub fn byte_size(&self) -> usize {
        self.params.len() * std::mem::size_of::<GridParams>()
    }

    #[inline]
    pub fn param(&self, row: usize, col: usize) -> &GridParams {
        &self.params[row * self.groups_per_row() + col / self.group_size]
    }

    /// Refits the grids of every group fully covered by `block`, which sits
    /// at `col_offset`. Groups must not straddle the block boundary.
    pub fn refit_block(&mut self, block: &DenseMatrix, col_offset: usize) -> Result<()> {
        self.check_block(block, col_offset)?;
        let end = col_offset + block.cols();
        if !col_offset.is_multiple_of(self.group_size)
            || (!end.is_multiple_of(self.group_size) && end != self.cols)
        {
            return Err(Error::Argument(format!(
                "block [{col_offset}, {end}) is not aligned to groups of {}",
                self.group_size
            )));
        }
        let gpr = self.groups_per_row();
        let first = col_offset / self.group_size;
        for r in 0..self.rows {
            for (g, chunk) in block.row(r).chunks(self.group_size).enumerate() {
                self.params[r * gpr + first + g] = fit_grid(chunk, self.bits)?;
            }
        }
        Ok(())
    }

    fn check_block(&self, block: &DenseMatrix, col_offset: usize) -> Result<()> {
        if block.rows() != self.rows || col_offset + block.cols() > self.cols {
            return Err(Error::shape(
                "grid block",
                format!("{} rows within {} cols", self.rows, self.cols),
                format!("{}x{} at column {col_offset}", block.rows(), block.cols()),
            ));
        }
        Ok(())
    }

    /// Quantize-then-dequantize of a block whose first column is `col_offset`.
    pub fn project_block(&self, block: &DenseMatrix, col_offset: usize) -> Result<DenseMatrix> {
        self.check_block(block, col_offset)?;
        Ok(DenseMatrix::from_fn(block.rows(), block.cols(), |r, c| {
            self.param(r, col_offset + c).project(block.get(r, c))
        }))
    }

    pub fn quantize_block(&self, block: &DenseMatrix, col_offset: usize) -> Result<CodeMatrix> {
        self.check_block(block, col_offset)?;
        let mut codes = Vec::with_capacity(block.rows() * block.cols());
        for r in 0..block.rows() {
            for (c, &v) in block.row(r).iter().enumerate() {
                codes.push(self.param(r, col_offset + c).quantize(v));
            }
        }
        Ok(CodeMatrix {
            rows: block.rows(),
            cols: block.cols(),
            codes,
        })
    }

    pub fn quantize_matrix(&self, w: &DenseMatrix) -> Result<CodeMatrix> {
        if w.cols() != self.cols {
            return Err(Error::shape("quantize_matrix", self.cols, w.cols()));
        }
        self.quantize_block(w, 0)
    }

    pub fn dequantize_matrix(&self, codes: &CodeMatrix) -> Result<DenseMatrix> {
        if codes.rows != self.rows || codes.cols != self.cols {
            return Err(Error::shape(
                "dequantize_matrix",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", codes.rows, codes.cols),
            ));
        }
        let limit = max_code(self.bits);
        if let Some(&bad) = codes.codes.iter().find(|&&c| c as u32 > limit) {
            return Err(Error::Argument(format!("code {bad} exceeds {limit}")));
        }
        Ok(DenseMatrix::from_fn(self.rows, self.cols, |r, c| {
            self.param(r, c).dequantize_unchecked(codes.get(r, c))
        }))
    }
}

/// Elementwise projection of a full weight matrix onto its grids.
pub fn project_matrix(b: &DenseMatrix, grids: &QuantGrid) -> Result<DenseMatrix> {
    if b.cols() != grids.cols() {
        return Err(Error::shape("project_matrix", grids.cols(), b.cols()));
    }
    grids.project_block(b, 0)
}

/// Integer code matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    rows: usize,
    cols: usize,
    codes: Vec<u8>,
}

impl CodeMatrix {
    pub fn new(rows: usize, cols: usize, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(Error::shape("CodeMatrix::new", rows * cols, codes.len()));
        }
        Ok(Self { rows, cols, codes })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.codes[r * self.cols + c]
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }
}

/// Bit-packed codes: code `i` occupies bits `[i·bits, (i+1)·bits)` of the
/// little-endian bit stream, so at 4 bits the even-index code is the low
/// nibble.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBlock {
    pub bits: u8,
    pub len: usize,
    pub bytes: Vec<u8>,
}

pub fn packed_len(n_codes: usize, bits: u8) -> usize {
    (n_codes * bits as usize).div_ceil(8)
}

pub fn pack(codes: &[u8], bits: u8) -> Result<PackedBlock> {
    check_bits(bits)?;
    let limit = max_code(bits);
    let mut bytes = vec![0u8; packed_len(codes.len(), bits)];
    for (i, &code) in codes.iter().enumerate() {
        if code as u32 > limit {
            return Err(Error::Argument(format!(
                "code {code} at index {i} does not fit in {bits} bits"
            )));
        }
        let mut bit = i * bits as usize;
        let mut value = code as u32;
        let mut remaining = bits as usize;
        while remaining > 0 {
            let shift = bit % 8;
            let take = remaining.min(8 - shift);
            bytes[bit / 8] |= ((value & ((1 << take) - 1)) << shift) as u8;
            value >>= take;
            bit += take;
            remaining -= take;
        }
    }
    Ok(PackedBlock {
        bits,
        len: codes.len(),
        bytes,
    })
}

pub fn unpack(p: &PackedBlock) -> Result<Vec<u8>> {
    check_bits(p.bits)?;
    if p.bytes.len() != packed_len(p.len, p.bits) {
        return Err(Error::Corrupt(format!(
            "packed block holds {} bytes, expected {}",
            p.bytes.len(),
            packed_len(p.len, p.bits)
        )));
    }
    let bits = p.bits as usize;
    let mut out = Vec::with_capacity(p.len);
    for i in 0..p.len {
        let mut bit = i * bits;
        let mut value = 0u32;
        let mut got = 0;
        while got < bits {
            let shift = bit % 8;
            let take = (bits - got).min(8 - shift);
            let chunk = (p.bytes[bit / 8] as u32 >> shift) & ((1 << take) - 1);
            value |= chunk << got;
            got += take;
            bit += take;
        }
        out.push(value as u8);
    }
    Ok(out)
}
