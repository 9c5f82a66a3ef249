//! Hessian accumulation, damping, the retained single calibration instance,
//! and the per-block curvature factors used by the refinement sweeps.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::numerics::{cholesky, gram, matmul_transb, CholeskyFactor, DenseMatrix};

/// Default damping ratio.
pub const DEFAULT_PERCDAMP: f64 = 0.01;
pub const DEFAULT_BLOCK_SIZE: usize = 4;

/// Running `Σ XᵀX` over streamed calibration batches.
#[derive(Debug, Clone)]
pub struct HessianAccumulator {
    dim: usize,
    h: DenseMatrix,
    batches_seen: usize,
    rows_seen: usize,
}

impl HessianAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            h: DenseMatrix::zeros(dim, dim),
            batches_seen: 0,
            rows_seen: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hessian(&self) -> &DenseMatrix {
        &self.h
    }

    pub fn batches_seen(&self) -> usize {
        self.batches_seen
    }

    pub fn rows_seen(&self) -> usize {
        self.rows_seen
    }

    pub fn byte_size(&self) -> usize {
        self.h.byte_size()
    }

    pub fn accumulate(&mut self, x_batch: &DenseMatrix) -> Result<()> {
        if x_batch.cols() != self.dim {
            return Err(Error::shape("accumulate", self.dim, x_batch.cols()));
        }
        self.h.add_assign(&gram(x_batch))?;
        self.batches_seen += 1;
        self.rows_seen += x_batch.rows();
        Ok(())
    }

    /// `H + λI` with `λ = percdamp · mean(diag(H))`.
    pub fn damp(&self, percdamp: f64) -> Result<(DenseMatrix, f64)> {
        damp(&self.h, percdamp)
    }
}

pub fn damp(h: &DenseMatrix, percdamp: f64) -> Result<(DenseMatrix, f64)> {
    if !percdamp.is_finite() || percdamp <= 0.0 {
        return Err(Error::Argument(format!(
            "percdamp must be positive, got {percdamp}"
        )));
    }
    let n = h.rows();
    if n == 0 {
        return Err(Error::Calibration("empty Hessian".into()));
    }
    let mean_diag = h.trace() / n as f64;
    if mean_diag.is_nan() || mean_diag <= 0.0 {
        return Err(Error::Calibration(
            "Hessian diagonal is zero; no calibration data reached this layer".into(),
        ));
    }
    let lambda = percdamp * mean_diag;
    let mut damped = h.clone();
    for i in 0..n {
        damped.set(i, i, h.get(i, i) + lambda);
    }
    Ok((damped, lambda))
}

/// The damped global Hessian together with the one retained calibration
/// batch and its full-precision output.
#[derive(Debug, Clone)]
pub struct CalibrationSnapshot {
    pub h_damped: DenseMatrix,
    pub lambda: f64,
    pub percdamp: f64,
    /// Calibration rows that contributed to `h_damped`.
    pub rows_seen: usize,
    pub x_orig: DenseMatrix,
    pub y_orig: DenseMatrix,
}

impl CalibrationSnapshot {
    pub fn dim(&self) -> usize {
        self.h_damped.rows()
    }

    /// Bytes kept alive for calibration once the snapshot exists.
    pub fn retained_bytes(&self) -> usize {
        self.h_damped.byte_size() + self.x_orig.byte_size() + self.y_orig.byte_size()
    }
}

/// Captures `(X_last, X_last·W_fpᵀ)` alongside the damped Hessian. The
/// caller drops every earlier batch; only this instance survives.
pub fn capture_snapshot(
    x_last: DenseMatrix,
    w_fp: &DenseMatrix,
    h_damped: DenseMatrix,
    lambda: f64,
    percdamp: f64,
    rows_seen: usize,
) -> Result<CalibrationSnapshot> {
    if x_last.cols() != w_fp.cols() {
        return Err(Error::shape("capture_snapshot", w_fp.cols(), x_last.cols()));
    }
    if h_damped.rows() != w_fp.cols() || h_damped.cols() != w_fp.cols() {
        return Err(Error::shape(
            "capture_snapshot",
            format!("{0}x{0} Hessian", w_fp.cols()),
            format!("{}x{}", h_damped.rows(), h_damped.cols()),
        ));
    }
    let y_orig = matmul_transb(&x_last, w_fp)?;
    Ok(CalibrationSnapshot {
        h_damped,
        lambda,
        percdamp,
        rows_seen: rows_seen.max(x_last.rows()),
        x_orig: x_last,
        y_orig,
    })
}

/// Streams batches through an accumulator and keeps only the last one.
pub fn calibrate<I>(batches: I, w_fp: &DenseMatrix, percdamp: f64) -> Result<CalibrationSnapshot>
where
    I: IntoIterator<Item = DenseMatrix>,
{
    let mut acc = HessianAccumulator::new(w_fp.cols());
    let mut last = None;
    for batch in batches {
        acc.accumulate(&batch)?;
        last = Some(batch);
    }
    let x_last = last.ok_or_else(|| Error::Calibration("no calibration batches".into()))?;
    let (h_damped, lambda) = acc.damp(percdamp)?;
    capture_snapshot(x_last, w_fp, h_damped, lambda, percdamp, acc.rows_seen())
}

/// Which matrix forms the block normal equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Curvature {
    /// Damped global Hessian submatrix, rescaled to the instance row count.
    Global,
    /// Undamped Gram matrix of the single instance.
    #[default]
    Instance,
}

impl Curvature {
    pub fn as_str(self) -> &'static str {
        match self {
            Curvature::Global => "global",
            Curvature::Instance => "instance",
        }
    }
}

impl std::str::FromStr for Curvature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Curvature::Global),
            "instance" => Ok(Curvature::Instance),
            other => Err(Error::Argument(format!("unknown curvature '{other}'"))),
        }
    }
}

/// `[0, dim)` split into consecutive ranges of at most `block_size` columns.
pub fn block_ranges(dim: usize, block_size: usize) -> Result<Vec<Range<usize>>> {
    if block_size == 0 {
        return Err(Error::Argument("block size must be at least 1".into()));
    }
    Ok((0..dim)
        .step_by(block_size)
        .map(|c1| c1..(c1 + block_size).min(dim))
        .collect())
}

/// Column blocks of the instance input and their curvature factors.
#[derive(Debug, Clone)]
pub struct BlockPartition {
    ranges: Vec<Range<usize>>,
    x_blocks: Vec<DenseMatrix>,
    factors: Vec<CholeskyFactor>,
    curvature: Curvature,
}

impl BlockPartition {
    /// Splits the snapshot into blocks. Under [`Curvature::Global`] the
    /// normal matrix of block `i` is `H̃[c1:c2, c1:c2] · N / rows_seen`, so
    /// it sits on the same scale as the instance right-hand side `X_iᵀD_i`.
    pub fn new(
        snapshot: &CalibrationSnapshot,
        block_size: usize,
        curvature: Curvature,
    ) -> Result<Self> {
        let ranges = block_ranges(snapshot.dim(), block_size)?;
        let x = &snapshot.x_orig;
        let scale = x.rows() as f64 / snapshot.rows_seen as f64;
        let mut x_blocks = Vec::with_capacity(ranges.len());
        let mut factors = Vec::with_capacity(ranges.len());
        for range in &ranges {
            let xi = x.columns(range.clone());
            let normal = match curvature {
                Curvature::Global => snapshot
                    .h_damped
                    .submatrix(range.clone(), range.clone())
                    .scale(scale),
                Curvature::Instance => gram(&xi),
            };
            let factor = cholesky(&normal).map_err(|e| {
                Error::Calibration(format!(
                    "block [{}, {}) curvature is not positive definite ({e}); \
                     increase percdamp or use global curvature",
                    range.start, range.end
                ))
            })?;
            x_blocks.push(xi);
            factors.push(factor);
        }
        Ok(Self {
            ranges,
            x_blocks,
            factors,
            curvature,
        })
    }

    /// Instance-Gram partition of a bare input matrix, without a snapshot.
    pub fn from_instance(x: &DenseMatrix, block_size: usize) -> Result<Self> {
        let ranges = block_ranges(x.cols(), block_size)?;
        let mut x_blocks = Vec::with_capacity(ranges.len());
        let mut factors = Vec::with_capacity(ranges.len());
        for range in &ranges {
            let xi = x.columns(range.clone());
            factors.push(cholesky(&gram(&xi)).map_err(|_| Error::Singular)?);
            x_blocks.push(xi);
        }
        Ok(Self {
            ranges,
            x_blocks,
            factors,
            curvature: Curvature::Instance,
        })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn range(&self, i: usize) -> &Range<usize> {
        &self.ranges[i]
    }

    pub fn x_block(&self, i: usize) -> &DenseMatrix {
        &self.x_blocks[i]
    }

    pub fn factor(&self, i: usize) -> &CholeskyFactor {
        &self.factors[i]
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn byte_size(&self) -> usize {
        self.x_blocks
            .iter()
            .map(DenseMatrix::byte_size)
            .sum::<usize>()
            + self
                .factors
                .iter()
                .map(CholeskyFactor::byte_size)
                .sum::<usize>()
    }
}
