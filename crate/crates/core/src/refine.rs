//! Stage two: residual-projected block refinement with Gauss-Seidel sweeps.
//!
//! The layer output on the retained instance decomposes by column block,
//! `Y_q = Σ_i X_i·B_iᵀ`. Block `i` is refit against its directed residual
//! `D_i = Y_orig − (Y_q − X_i·B_iᵀ)`, the least-squares solution is
//! projected onto the quantization grid, and the block moves a fraction
//! `alpha` of the way there. Each update is folded into `Y_q` before the
//! next block is visited, so later blocks see the newest weights.

use crate::calibration::{BlockPartition, CalibrationSnapshot};
use crate::error::{Error, Result};
use crate::gptq::Stage1Result;
use crate::numerics::{matmul_transa, matmul_transb, DenseMatrix};
use crate::quantgrid::{CodeMatrix, QuantGrid};

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_ITERS: usize = 5;
pub const DEFAULT_EARLY_STOP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub alpha: f64,
    pub t_max: usize,
    /// Relative loss decrease below which the sweeps stop.
    pub early_stop_tol: f64,
    /// Refit grids on each block's least-squares solution instead of
    /// reusing the stage-one grids.
    pub refit_grids: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            t_max: DEFAULT_ITERS,
            early_stop_tol: DEFAULT_EARLY_STOP_TOL,
            refit_grids: false,
        }
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Argument(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    Ok(())
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.early_stop_tol.is_nan() || self.early_stop_tol < 0.0 {
            return Err(Error::Argument(format!(
                "early-stop tolerance must be non-negative, got {}",
                self.early_stop_tol
            )));
        }
        Ok(())
    }
}

/// Mutable sweep state: the blocks, their output contributions and the
/// running total `Y_q`.
#[derive(Debug, Clone)]
pub struct RefinementState {
    blocks: Vec<DenseMatrix>,
    contributions: Vec<DenseMatrix>,
    y_q: DenseMatrix,
    pub iteration: usize,
}

impl RefinementState {
    /// Splits `w` along the partition and computes every contribution.
    pub fn new(w: &DenseMatrix, partition: &BlockPartition) -> Result<Self> {
        if w.cols() != partition.dim() {
            return Err(Error::shape(
                "RefinementState::new",
                partition.dim(),
                w.cols(),
            ));
        }
        let blocks: Vec<_> = partition
            .ranges()
            .iter()
            .map(|r| w.columns(r.clone()))
            .collect();
        let contributions = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| matmul_transb(partition.x_block(i), b))
            .collect::<Result<Vec<_>>>()?;
        let n = partition.x_block(0).rows();
        let mut y_q = DenseMatrix::zeros(n, w.rows());
        for c in &contributions {
            y_q.add_assign(c)?;
        }
        Ok(Self {
            blocks,
            contributions,
            y_q,
            iteration: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, i: usize) -> &DenseMatrix {
        &self.blocks[i]
    }

    pub fn contribution(&self, i: usize) -> &DenseMatrix {
        &self.contributions[i]
    }

    pub fn y_q(&self) -> &DenseMatrix {
        &self.y_q
    }

    pub fn weights(&self) -> DenseMatrix {
        DenseMatrix::hstack(&self.blocks).expect("blocks share a row count")
    }

    pub fn byte_size(&self) -> usize {
        self.blocks
            .iter()
            .map(DenseMatrix::byte_size)
            .sum::<usize>()
            + self
                .contributions
                .iter()
                .map(DenseMatrix::byte_size)
                .sum::<usize>()
            + self.y_q.byte_size()
    }

    /// `Σ_i X_i·B_iᵀ` recomputed from the blocks.
    pub fn recompute_output(&self, partition: &BlockPartition) -> Result<DenseMatrix> {
        let mut y = DenseMatrix::zeros(self.y_q.rows(), self.y_q.cols());
        for (i, b) in self.blocks.iter().enumerate() {
            y.add_assign(&matmul_transb(partition.x_block(i), b)?)?;
        }
        Ok(y)
    }

    /// Replaces the incrementally maintained output by a full recompute.
    pub fn resync(&mut self, partition: &BlockPartition) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            self.contributions[i] = matmul_transb(partition.x_block(i), b)?;
        }
        let mut y = DenseMatrix::zeros(self.y_q.rows(), self.y_q.cols());
        for c in &self.contributions {
            y.add_assign(c)?;
        }
        self.y_q = y;
        Ok(())
    }
}

/// `D = Y_orig − Y_q^init`.
pub fn global_residual(y_orig: &DenseMatrix, y_q_init: &DenseMatrix) -> Result<DenseMatrix> {
    y_orig.sub(y_q_init)
}

/// `D_i = Y_orig − (Y_q − Y_{q,i})`.
pub fn directed_residual(
    state: &RefinementState,
    y_orig: &DenseMatrix,
    i: usize,
) -> Result<DenseMatrix> {
    if i >= state.len() {
        return Err(Error::Argument(format!(
            "block index {i} out of range for {} blocks",
            state.len()
        )));
    }
    let mut d = y_orig.sub(&state.y_q)?;
    d.add_assign(&state.contributions[i])?;
    Ok(d)
}

/// Least-squares block `B_i* = (C_i⁻¹·X_iᵀ·D_i)ᵀ`, laid out like the weight
/// block (`C_out × width`).
pub fn solve_block(partition: &BlockPartition, i: usize, d_i: &DenseMatrix) -> Result<DenseMatrix> {
    if i >= partition.len() {
        return Err(Error::Argument(format!(
            "block index {i} out of range for {} blocks",
            partition.len()
        )));
    }
    let rhs = matmul_transa(partition.x_block(i), d_i)?;
    Ok(partition.factor(i).solve(&rhs)?.transpose())
}

/// How least-squares blocks are mapped back onto the quantization lattice.
pub trait BlockProjector {
    fn project(&mut self, block: &DenseMatrix, col_offset: usize) -> Result<DenseMatrix>;
}

/// Projects onto fixed grids.
pub struct FrozenGrid<'a>(pub &'a QuantGrid);

impl BlockProjector for FrozenGrid<'_> {
    fn project(&mut self, block: &DenseMatrix, col_offset: usize) -> Result<DenseMatrix> {
        self.0.project_block(block, col_offset)
    }
}

/// Refits the block's grids on the solution before projecting.
pub struct RefitGrid<'a>(pub &'a mut QuantGrid);

impl BlockProjector for RefitGrid<'_> {
    fn project(&mut self, block: &DenseMatrix, col_offset: usize) -> Result<DenseMatrix> {
        self.0.refit_block(block, col_offset)?;
        self.0.project_block(block, col_offset)
    }
}

/// Leaves the solution continuous.
pub struct NoProjection;

impl BlockProjector for NoProjection {
    fn project(&mut self, block: &DenseMatrix, _col_offset: usize) -> Result<DenseMatrix> {
        Ok(block.clone())
    }
}

/// `B_old + alpha·(B̃ − B_old)` with `B̃` the projected solution.
pub fn update_block(
    b_old: &DenseMatrix,
    b_star: &DenseMatrix,
    projector: &mut dyn BlockProjector,
    col_offset: usize,
    alpha: f64,
) -> Result<DenseMatrix> {
    check_alpha(alpha)?;
    if b_old.shape() != b_star.shape() {
        return Err(Error::shape(
            "update_block",
            format!("{}x{}", b_old.rows(), b_old.cols()),
            format!("{}x{}", b_star.rows(), b_star.cols()),
        ));
    }
    let projected = projector.project(b_star, col_offset)?;
    if alpha == 1.0 {
        return Ok(projected);
    }
    let mut out = b_old.clone();
    for (o, (&old, &p)) in out
        .data_mut()
        .iter_mut()
        .zip(b_old.data().iter().zip(projected.data()))
    {
        *o = old + alpha * (p - old);
    }
    Ok(out)
}

/// Swaps block `i` for `b_new` and patches `Y_q` with the change in its
/// contribution.
pub fn apply_block_update(
    state: &mut RefinementState,
    partition: &BlockPartition,
    i: usize,
    b_new: DenseMatrix,
) -> Result<()> {
    if i >= state.len() {
        return Err(Error::Argument(format!("block index {i} out of range")));
    }
    if b_new.shape() != state.blocks[i].shape() {
        return Err(Error::shape(
            "apply_block_update",
            format!("{}x{}", state.blocks[i].rows(), state.blocks[i].cols()),
            format!("{}x{}", b_new.rows(), b_new.cols()),
        ));
    }
    let contribution = matmul_transb(partition.x_block(i), &b_new)?;
    state.y_q.sub_assign(&state.contributions[i])?;
    state.y_q.add_assign(&contribution)?;
    state.contributions[i] = contribution;
    state.blocks[i] = b_new;
    Ok(())
}

/// One Gauss-Seidel pass over the blocks in ascending order, followed by a
/// full recompute of `Y_q`. Returns `Γ = ‖Y_orig − Y_q‖²_F`.
pub fn sweep(
    state: &mut RefinementState,
    partition: &BlockPartition,
    y_orig: &DenseMatrix,
    projector: &mut dyn BlockProjector,
    alpha: f64,
) -> Result<f64> {
    for i in 0..state.len() {
        let d_i = directed_residual(state, y_orig, i)?;
        let b_star = solve_block(partition, i, &d_i)?;
        if !b_star.is_finite() {
            return Err(Error::Numeric {
                column: partition.range(i).start,
            });
        }
        let b_new = update_block(
            &state.blocks[i],
            &b_star,
            projector,
            partition.range(i).start,
            alpha,
        )?;
        apply_block_update(state, partition, i, b_new)?;
    }
    state.resync(partition)?;
    state.iteration += 1;
    Ok(y_orig.sub(&state.y_q)?.frobenius_sq())
}

/// Per-layer convergence record.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTrace {
    /// `gamma[0]` is the stage-one loss; `gamma[t]` the loss after sweep `t`
    /// on the (possibly off-grid) interpolated weights. Non-increasing.
    pub gamma: Vec<f64>,
    /// Loss of a final sweep that raised `Γ`; it stops the loop and its
    /// state is discarded.
    pub gamma_rejected: Option<f64>,
    /// Loss of the best sweep state after the final grid projection.
    pub gamma_projected: f64,
    /// Loss of the returned on-grid weights.
    pub gamma_final: f64,
    /// Sweep whose state was returned (0 = stage one).
    pub best_iteration: usize,
    pub stopped_early: bool,
    pub total_reduction_pct: f64,
}

impl RefinementTrace {
    /// Sweeps executed, a rejected one included.
    pub fn sweeps(&self) -> usize {
        self.gamma.len() - 1 + usize::from(self.gamma_rejected.is_some())
    }

    pub fn gamma_init(&self) -> f64 {
        self.gamma[0]
    }
}

/// `100·(init − final)/init`, zero when `init` is zero.
pub fn reduction_pct(gamma_init: f64, gamma_final: f64) -> Result<f64> {
    if gamma_init.is_nan() || gamma_final.is_nan() || gamma_init < 0.0 || gamma_final < 0.0 {
        return Err(Error::Argument(format!(
            "losses must be non-negative, got ({gamma_init}, {gamma_final})"
        )));
    }
    if gamma_init == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * (gamma_init - gamma_final) / gamma_init)
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub weights: DenseMatrix,
    pub codes: CodeMatrix,
    pub grids: QuantGrid,
    pub trace: RefinementTrace,
    /// Peak bytes held by the sweep state and the saved best states.
    pub state_bytes: usize,
}

struct Candidate {
    weights: DenseMatrix,
    grids: QuantGrid,
    gamma: f64,
    iteration: usize,
}

/// Refines a stage-one layer on the retained instance.
///
/// Sweeps run until `t_max` or until a sweep lowers `Γ` by no more than
/// `early_stop_tol` relative to the previous one. The lowest-loss sweep
/// state is projected onto the grid; if that projection is worse than the
/// best on-grid state seen (stage one included) the latter is returned.
pub fn refine_layer(
    stage1: &Stage1Result,
    snapshot: &CalibrationSnapshot,
    partition: &BlockPartition,
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    let y_orig = &snapshot.y_orig;
    let x = &snapshot.x_orig;
    let gamma0 = global_residual(y_orig, &matmul_transb(x, &stage1.w_init)?)?.frobenius_sq();
    let mut gamma = vec![gamma0];

    let stage1_candidate = || Candidate {
        weights: stage1.w_init.clone(),
        grids: stage1.grids.clone(),
        gamma: gamma0,
        iteration: 0,
    };
    if cfg.t_max == 0 {
        return Ok(RefineOutcome {
            weights: stage1.w_init.clone(),
            codes: stage1.codes.clone(),
            grids: stage1.grids.clone(),
            trace: RefinementTrace {
                gamma,
                gamma_rejected: None,
                gamma_projected: gamma0,
                gamma_final: gamma0,
                best_iteration: 0,
                stopped_early: false,
                total_reduction_pct: 0.0,
            },
            state_bytes: 0,
        });
    }

    let mut state = RefinementState::new(&stage1.w_init, partition)?;
    let mut grids = stage1.grids.clone();
    let mut best_any = stage1_candidate();
    let mut best_on_grid = stage1_candidate();
    let mut peak_bytes = state.byte_size() + 2 * (stage1.w_init.byte_size() + grids.byte_size());
    let mut stopped_early = false;
    let mut gamma_rejected = None;

    if gamma0 == 0.0 {
        stopped_early = true;
    } else {
        for t in 1..=cfg.t_max {
            let g = if cfg.refit_grids {
                sweep(
                    &mut state,
                    partition,
                    y_orig,
                    &mut RefitGrid(&mut grids),
                    cfg.alpha,
                )?
            } else {
                sweep(
                    &mut state,
                    partition,
                    y_orig,
                    &mut FrozenGrid(&grids),
                    cfg.alpha,
                )?
            };
            let prev = *gamma.last().expect("non-empty");
            if g > prev {
                gamma_rejected = Some(g);
            } else {
                gamma.push(g);
            }
            if gamma_rejected.is_none() && (g < best_any.gamma || g < best_on_grid.gamma) {
                let weights = state.weights();
                let on_grid = grids.project_block(&weights, 0)? == weights;
                if on_grid && g < best_on_grid.gamma {
                    best_on_grid = Candidate {
                        weights: weights.clone(),
                        grids: grids.clone(),
                        gamma: g,
                        iteration: t,
                    };
                }
                if g < best_any.gamma {
                    best_any = Candidate {
                        weights,
                        grids: grids.clone(),
                        gamma: g,
                        iteration: t,
                    };
                }
            }
            peak_bytes = peak_bytes
                .max(state.byte_size() + 2 * (stage1.w_init.byte_size() + grids.byte_size()));
            if prev - g <= cfg.early_stop_tol * prev {
                stopped_early = t < cfg.t_max;
                break;
            }
        }
    }

    let projected = best_any.grids.project_block(&best_any.weights, 0)?;
    let gamma_projected = output_gamma(x, y_orig, &projected)?;
    let chosen = if gamma_projected <= best_on_grid.gamma {
        Candidate {
            weights: projected,
            grids: best_any.grids,
            gamma: gamma_projected,
            iteration: best_any.iteration,
        }
    } else {
        best_on_grid
    };
    let codes = chosen.grids.quantize_matrix(&chosen.weights)?;
    Ok(RefineOutcome {
        trace: RefinementTrace {
            total_reduction_pct: reduction_pct(gamma0, chosen.gamma)?,
            gamma,
            gamma_rejected,
            gamma_projected,
            gamma_final: chosen.gamma,
            best_iteration: chosen.iteration,
            stopped_early,
        },
        weights: chosen.weights,
        codes,
        grids: chosen.grids,
        state_bytes: peak_bytes,
    })
}

fn output_gamma(x: &DenseMatrix, y_orig: &DenseMatrix, w: &DenseMatrix) -> Result<f64> {
    Ok(y_orig.sub(&matmul_transb(x, w)?)?.frobenius_sq())
}
