//! Post-training weight quantization with residual-projected iterative
//! refinement.
//!
//! A layer is quantized in two stages. Stage one is Hessian-guided greedy
//! column rounding with error feedback ([`gptq`]). Stage two revisits the
//! weight matrix block by block, refitting each column block against the
//! output residual of a single retained calibration batch and projecting
//! the least-squares solution back onto the quantization grid ([`refine`]).
//!
//! The [`harness`] module builds synthetic models, runs whole-model
//! pipelines and reports loss reductions and overheads; [`model_io`] holds
//! the on-disk container format.

pub mod calibration;
pub mod error;
pub mod gptq;
pub mod harness;
pub mod model_io;
pub mod numerics;
pub mod quantgrid;
pub mod refine;

pub use calibration::{BlockPartition, CalibrationSnapshot, Curvature, HessianAccumulator};
pub use error::{Error, ErrorCategory, Result};
pub use gptq::{GridConfig, Stage1Result};
pub use numerics::{CholeskyFactor, DenseMatrix};
pub use quantgrid::{CodeMatrix, GridParams, PackedBlock, QuantGrid};
pub use refine::{RefineConfig, RefineOutcome, RefinementState, RefinementTrace};
