//! Stage one: Hessian-guided greedy column quantization with error feedback
//! into the columns that are still unquantized.

use crate::calibration::CalibrationSnapshot;
use crate::error::{Error, Result};
use crate::numerics::{cholesky, matmul_transb, DenseMatrix};
use crate::quantgrid::{project_matrix, CodeMatrix, QuantGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridConfig {
    pub bits: u8,
    pub group_size: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            bits: 4,
            group_size: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Result {
    /// Dequantized initial weights; every entry is on its grid.
    pub w_init: DenseMatrix,
    pub codes: CodeMatrix,
    pub grids: QuantGrid,
    /// `‖X·W_fpᵀ − X·W_initᵀ‖²_F` on the snapshot instance.
    pub recon_error: f64,
}

/// `‖Y_orig − X·Wᵀ‖²_F`.
pub fn output_loss(x: &DenseMatrix, y_orig: &DenseMatrix, w: &DenseMatrix) -> Result<f64> {
    Ok(y_orig.sub(&matmul_transb(x, w)?)?.frobenius_sq())
}

/// `Σ_r (w_r − q_r)·H·(w_r − q_r)ᵀ`, the reconstruction error over every
/// calibration row summarized by `h`.
pub fn hessian_error(w_fp: &DenseMatrix, w_q: &DenseMatrix, h: &DenseMatrix) -> Result<f64> {
    let delta = w_fp.sub(w_q)?;
    let dh = matmul_transb(&delta, h)?;
    Ok(delta.data().iter().zip(dh.data()).map(|(a, b)| a * b).sum())
}

/// Nearest-level rounding of every weight, independently.
pub fn rtn_baseline(w_fp: &DenseMatrix, grids: &QuantGrid) -> Result<DenseMatrix> {
    project_matrix(w_fp, grids)
}

/// Quantizes `w_fp` column by column, left to right. After column `j` is
/// rounded, its error scaled by the `j`-th row of the upper Cholesky factor
/// of `H̃⁻¹` is subtracted from the remaining columns.
pub fn quantize_layer_stage1(
    w_fp: &DenseMatrix,
    snapshot: &CalibrationSnapshot,
    cfg: &GridConfig,
) -> Result<Stage1Result> {
    let grids = QuantGrid::fit(w_fp, cfg.bits, cfg.group_size)?;
    quantize_with_grids(
        w_fp,
        &snapshot.h_damped,
        grids,
        &snapshot.x_orig,
        &snapshot.y_orig,
    )
}

/// Stage one against an explicit curvature matrix and pre-fitted grids.
pub fn quantize_with_grids(
    w_fp: &DenseMatrix,
    h_damped: &DenseMatrix,
    grids: QuantGrid,
    x: &DenseMatrix,
    y_orig: &DenseMatrix,
) -> Result<Stage1Result> {
    let cols = w_fp.cols();
    if h_damped.rows() != cols || grids.cols() != cols || grids.rows() != w_fp.rows() {
        return Err(Error::shape(
            "quantize_layer_stage1",
            format!("{cols} input channels"),
            format!(
                "Hessian {}x{}, grids {}x{}",
                h_damped.rows(),
                h_damped.cols(),
                grids.rows(),
                grids.cols()
            ),
        ));
    }
    let factor = cholesky(h_damped).map_err(|e| {
        Error::Calibration(format!("damped Hessian is not positive definite ({e})"))
    })?;
    let h_inv = factor.inverse();
    // upper factor U with H̃⁻¹ = Uᵀ·U, stored as its transpose L = Uᵀ
    let l = cholesky(&h_inv)
        .map_err(|e| Error::Calibration(format!("inverse Hessian factorization failed ({e})")))?
        .lower()
        .clone();

    let mut w = w_fp.clone();
    let rows = w.rows();
    let mut codes = vec![0u8; rows * cols];
    for j in 0..cols {
        let d = l.get(j, j);
        for r in 0..rows {
            let g = grids.param(r, j);
            let v = w.get(r, j);
            let code = g.quantize(v);
            let q = g.dequantize_unchecked(code);
            codes[r * cols + j] = code;
            let err = (v - q) / d;
            let row = w.row_mut(r);
            row[j] = q;
            for (k, x) in row.iter_mut().enumerate().skip(j + 1) {
                *x -= err * l.get(k, j);
            }
            if !err.is_finite() {
                return Err(Error::Numeric { column: j });
            }
        }
    }
    if !w.is_finite() {
        return Err(Error::Numeric {
            column: cols.saturating_sub(1),
        });
    }
    let recon_error = output_loss(x, y_orig, &w)?;
    Ok(Stage1Result {
        codes: CodeMatrix::new(rows, cols, codes)?,
        w_init: w,
        grids,
        recon_error,
    })
}
