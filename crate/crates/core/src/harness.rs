//! Synthetic models, the layer-by-layer quantization pipeline, metrics and
//! comparison reports.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, Uniform};

use crate::calibration::{
    capture_snapshot, BlockPartition, Curvature, HessianAccumulator, DEFAULT_BLOCK_SIZE,
    DEFAULT_PERCDAMP,
};
use crate::error::{Error, Result};
use crate::gptq::{quantize_layer_stage1, GridConfig};
use crate::model_io::{
    save_checkpoint, Checkpoint, FileKind, QuantizedArtifact, QuantizedLayer, StoredSnapshot,
    TraceSummary,
};
use crate::numerics::{matmul_transb, DenseMatrix};
use crate::refine::{refine_layer, RefineConfig};

pub use crate::refine::reduction_pct;

const WEIGHT_STREAM: u64 = 0;
const SCALE_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Gaussian { sigma: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Distribution {
    fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::Spec(format!("gaussian sigma must be positive, got {sigma}")),
            ),
            Distribution::Uniform { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                Err(Error::Spec(format!(
                    "uniform bounds must satisfy lo < hi, got ({lo}, {hi})"
                )))
            }
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> Box<dyn Fn(&mut ChaCha8Rng) -> f64> {
        match *self {
            Distribution::Gaussian { sigma } => {
                let d = Normal::new(0.0, sigma).expect("validated sigma");
                Box::new(move |rng| d.sample(rng))
            }
            Distribution::Uniform { lo, hi } => {
                let d = Uniform::new(lo, hi).expect("validated bounds");
                Box::new(move |rng| d.sample(rng))
            }
        }
    }
}

impl std::fmt::Display for Distribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Distribution::Gaussian { sigma } => write!(f, "gaussian({sigma})"),
            Distribution::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
        }
    }
}

/// Parses `gaussian(σ)` or `uniform(a,b)`.
impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Argument(format!("cannot parse distribution '{s}'"));
        let s = s.trim();
        let open = s.find('(').ok_or_else(bad)?;
        let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let args = inner
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let d = match (&s[..open], args.as_slice()) {
            ("gaussian", [sigma]) => Distribution::Gaussian { sigma: *sigma },
            ("uniform", [lo, hi]) => Distribution::Uniform { lo: *lo, hi: *hi },
            _ => return Err(bad()),
        };
        d.validate().map_err(|e| Error::Argument(e.to_string()))?;
        Ok(d)
    }
}

/// Calibration inputs: `x[r, c] = s_c·(√(1−ρ)·z[r, c] + √ρ·f[r])` with
/// `z` and `f` drawn from `dist`, per-channel scales `s_c` uniform in
/// `channel_scale` and `ρ = correlation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationSpec {
    pub dist: Distribution,
    pub correlation: f64,
    pub channel_scale: (f64, f64),
}

impl Default for ActivationSpec {
    fn default() -> Self {
        Self {
            dist: Distribution::Gaussian { sigma: 1.0 },
            correlation: 0.5,
            channel_scale: (0.5, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModelSpec {
    /// `(C_out, C_in)` per layer.
    pub layers: Vec<(usize, usize)>,
    pub weights: Distribution,
    pub activations: ActivationSpec,
    pub seed: u64,
    pub batches: usize,
    pub rows: usize,
}

impl SyntheticModelSpec {
    pub fn new(layers: Vec<(usize, usize)>, seed: u64, batches: usize, rows: usize) -> Self {
        Self {
            layers,
            weights: Distribution::Gaussian { sigma: 1.0 },
            activations: ActivationSpec::default(),
            seed,
            batches,
            rows,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.activations.dist.validate()?;
        let a = &self.activations;
        if !(0.0..=1.0).contains(&a.correlation) {
            return Err(Error::Spec(format!(
                "correlation must lie in [0, 1], got {}",
                a.correlation
            )));
        }
        let (lo, hi) = a.channel_scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Spec(format!(
                "channel scale range ({lo}, {hi}) is invalid"
            )));
        }
        for (l, &(c_out, c_in)) in self.layers.iter().enumerate() {
            if c_out == 0 || c_in == 0 {
                return Err(Error::Spec(format!(
                    "layer {l} has an empty shape {c_out}x{c_in}"
                )));
            }
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[1].1 != pair[0].0 {
                return Err(Error::Spec(format!(
                    "layer {} expects {} inputs but layer {l} produces {}",
                    l + 1,
                    pair[1].1,
                    pair[0].0
                )));
            }
        }
        if !self.layers.is_empty() && (self.batches == 0 || self.rows == 0) {
            return Err(Error::Spec(
                "need at least one calibration batch with one row".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.1)
    }
}

pub fn layer_name(index: usize) -> String {
    format!("layer_{index}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    pub checkpoint: Checkpoint,
    pub batches: Vec<DenseMatrix>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// every generated value is an f32, so the container stores it losslessly
fn narrow(v: f64) -> f64 {
    v as f32 as f64
}

/// Deterministic weights and calibration batches for `spec`.
pub fn generate_model(spec: &SyntheticModelSpec) -> Result<SyntheticModel> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, WEIGHT_STREAM);
    let sample = spec.weights.sampler();
    let layers = spec
        .layers
        .iter()
        .enumerate()
        .map(|(l, &(c_out, c_in))| {
            let w = DenseMatrix::from_fn(c_out, c_in, |_, _| narrow(sample(&mut rng)));
            (layer_name(l), w)
        })
        .collect();
    Ok(SyntheticModel {
        checkpoint: Checkpoint::new(layers),
        batches: generate_batches(spec, spec.seed, spec.batches)?,
    })
}

/// `count` calibration batches drawn with `data_seed`. Channel scales come
/// from the model seed, so every data seed samples the same distribution.
pub fn generate_batches(
    spec: &SyntheticModelSpec,
    data_seed: u64,
    count: usize,
) -> Result<Vec<DenseMatrix>> {
    spec.validate()?;
    if spec.layers.is_empty() {
        return Ok(Vec::new());
    }
    let c_in = spec.input_dim();
    let a = &spec.activations;
    let mut scale_rng = rng_for(spec.seed, SCALE_STREAM);
    let scales: Vec<f64> = (0..c_in)
        .map(|_| {
            if a.channel_scale.0 == a.channel_scale.1 {
                a.channel_scale.0
            } else {
                scale_rng.random_range(a.channel_scale.0..a.channel_scale.1)
            }
        })
        .collect();
    let mut rng = rng_for(data_seed, DATA_STREAM);
    let sample = a.dist.sampler();
    let (own, shared) = ((1.0 - a.correlation).sqrt(), a.correlation.sqrt());
    Ok((0..count)
        .map(|_| {
            let factor: Vec<f64> = (0..spec.rows).map(|_| sample(&mut rng)).collect();
            DenseMatrix::from_fn(spec.rows, c_in, |r, c| {
                narrow(scales[c] * (own * sample(&mut rng) + shared * factor[r]))
            })
        })
        .collect())
}

/// A second instance from the calibration distribution, drawn with
/// `seed + 1` and never seen by the pipeline.
pub fn holdout_batch(spec: &SyntheticModelSpec) -> Result<DenseMatrix> {
    generate_batches(spec, spec.seed.wrapping_add(1), 1)?
        .pop()
        .ok_or_else(|| Error::Spec("a model without layers has no holdout input".into()))
}

/// Writes the checkpoint and the calibration batches as two container files.
pub fn write_model(model: &SyntheticModel, checkpoint: &Path, calibration: &Path) -> Result<()> {
    save_checkpoint(&model.checkpoint, FileKind::Checkpoint, checkpoint)?;
    let batches = Checkpoint::new(
        model
            .batches
            .iter()
            .enumerate()
            .map(|(i, b)| (format!("batch_{i}"), b.clone()))
            .collect(),
    );
    save_checkpoint(&batches, FileKind::Calibration, calibration)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    Gptq,
    #[default]
    Rpiq,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gptq => "gptq",
            Method::Rpiq => "rpiq",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gptq" => Ok(Method::Gptq),
            "rpiq" => Ok(Method::Rpiq),
            other => Err(Error::Argument(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub method: Method,
    pub grid: GridConfig,
    pub percdamp: f64,
    pub block_size: usize,
    pub curvature: Curvature,
    pub refine: RefineConfig,
    /// Feed each layer the quantized outputs of the layer before it.
    pub sequential: bool,
    /// Quantize layers on separate threads; requires `sequential == false`.
    pub parallel: bool,
    pub store_snapshot: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: Method::Rpiq,
            grid: GridConfig::default(),
            percdamp: DEFAULT_PERCDAMP,
            block_size: DEFAULT_BLOCK_SIZE,
            curvature: Curvature::default(),
            refine: RefineConfig::default(),
            sequential: true,
            parallel: false,
            store_snapshot: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        crate::quantgrid::check_bits(self.grid.bits)?;
        if self.grid.group_size == 0 {
            return Err(Error::Argument("group size must be positive".into()));
        }
        if self.block_size == 0 {
            return Err(Error::Argument("block size must be at least 1".into()));
        }
        if self.refine.refit_grids && !self.block_size.is_multiple_of(self.grid.group_size) {
            return Err(Error::Argument(format!(
                "grid refitting needs the block size ({}) to be a multiple of the group size ({})",
                self.block_size, self.grid.group_size
            )));
        }
        if self.percdamp.is_nan() || self.percdamp <= 0.0 {
            return Err(Error::Argument(format!(
                "percdamp must be positive, got {}",
                self.percdamp
            )));
        }
        if self.parallel && self.sequential {
            return Err(Error::Argument(
                "layer-parallel mode requires sequential propagation to be off".into(),
            ));
        }
        self.refine.validate()
    }
}

/// Engine-owned bytes currently alive and their high-water mark.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryLedger {
    current: usize,
    peak: usize,
}

impl MemoryLedger {
    pub fn alloc(&mut self, bytes: usize) {
        self.current += bytes;
        self.peak = self.peak.max(self.current);
    }

    pub fn free(&mut self, bytes: usize) {
        debug_assert!(bytes <= self.current, "ledger underflow");
        self.current = self.current.saturating_sub(bytes);
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRun {
    pub name: String,
    pub gamma_stage1: f64,
    pub gamma_rpiq: f64,
    pub reduction_pct: f64,
    pub iterations: usize,
    pub stopped_early: bool,
    /// `Γ` after each accepted sweep, starting with the stage-one value.
    pub gamma_trace: Vec<f64>,
    /// `Γ` of a final sweep that raised the loss and was discarded.
    pub gamma_rejected: Option<f64>,
    /// Bytes retained for calibration right after the snapshot is taken.
    pub calibration_bytes: usize,
    pub stage1_time: Duration,
    pub stage2_time: Duration,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub artifact: QuantizedArtifact,
    pub layers: Vec<LayerRun>,
    /// Quantized weights as used by the engine, in layer order.
    pub weights: Vec<DenseMatrix>,
    pub peak_bytes: usize,
    pub total_time: Duration,
}

impl PipelineRun {
    pub fn stage1_time(&self) -> Duration {
        self.layers.iter().map(|l| l.stage1_time).sum()
    }

    pub fn stage2_time(&self) -> Duration {
        self.layers.iter().map(|l| l.stage2_time).sum()
    }
}

struct LayerOutput {
    run: LayerRun,
    layer: QuantizedLayer,
    weights: DenseMatrix,
}

fn propagate(batch: &DenseMatrix, upstream: &[DenseMatrix]) -> Result<DenseMatrix> {
    let mut x = batch.clone();
    for w in upstream {
        x = matmul_transb(&x, w)?;
    }
    Ok(x)
}

fn quantize_one(
    name: &str,
    w_fp: &DenseMatrix,
    batches: &[DenseMatrix],
    upstream: &[DenseMatrix],
    cfg: &PipelineConfig,
    ledger: &mut MemoryLedger,
) -> Result<LayerOutput> {
    let c_in = w_fp.cols();
    let start = Instant::now();

    let mut acc = HessianAccumulator::new(c_in);
    ledger.alloc(acc.byte_size());
    let mut last: Option<DenseMatrix> = None;
    for batch in batches {
        let x = propagate(batch, upstream)?;
        if let Some(prev) = last.take() {
            ledger.free(prev.byte_size());
        }
        ledger.alloc(x.byte_size());
        acc.accumulate(&x)?;
        last = Some(x);
    }
    let x_last = last.ok_or_else(|| Error::Calibration("no calibration batches".into()))?;
    let (h_damped, lambda) = acc.damp(cfg.percdamp)?;
    let rows_seen = acc.rows_seen();
    drop(acc);
    let snapshot = capture_snapshot(x_last, w_fp, h_damped, lambda, cfg.percdamp, rows_seen)?;
    ledger.alloc(snapshot.y_orig.byte_size());
    let calibration_bytes = snapshot.retained_bytes();

    // working copy, inverse Hessian and its factor
    let stage1_scratch = w_fp.byte_size() + 2 * snapshot.h_damped.byte_size();
    ledger.alloc(stage1_scratch);
    let stage1 = quantize_layer_stage1(w_fp, &snapshot, &cfg.grid)?;
    let stage1_kept =
        stage1.w_init.byte_size() + stage1.codes.codes().len() + stage1.grids.byte_size();
    ledger.alloc(stage1_kept);
    ledger.free(stage1_scratch);
    let stage1_time = start.elapsed();

    let start = Instant::now();
    let refine_cfg = match cfg.method {
        Method::Gptq => None,
        Method::Rpiq if cfg.refine.t_max == 0 => None,
        Method::Rpiq => Some(cfg.refine),
    };
    let (
        weights,
        codes,
        grids,
        gamma_trace,
        gamma_rejected,
        gamma_final,
        iterations,
        stopped_early,
    ) = match refine_cfg {
        None => (
            stage1.w_init.clone(),
            stage1.codes.clone(),
            stage1.grids.clone(),
            vec![stage1.recon_error],
            None,
            stage1.recon_error,
            0,
            false,
        ),
        Some(rcfg) => {
            let partition = BlockPartition::new(&snapshot, cfg.block_size, cfg.curvature)?;
            ledger.alloc(partition.byte_size());
            let out = refine_layer(&stage1, &snapshot, &partition, &rcfg)?;
            ledger.alloc(out.state_bytes);
            ledger.free(out.state_bytes + partition.byte_size());
            let sweeps = out.trace.sweeps();
            (
                out.weights,
                out.codes,
                out.grids,
                out.trace.gamma,
                out.trace.gamma_rejected,
                out.trace.gamma_final,
                sweeps,
                out.trace.stopped_early,
            )
        }
    };
    let stage2_time = start.elapsed();
    let gamma_stage1 = gamma_trace[0];

    let mut layer = QuantizedLayer::from_codes(
        name,
        &codes,
        &grids,
        TraceSummary {
            gamma_init: gamma_stage1,
            gamma_final,
            iterations,
            stopped_early,
        },
    )?;
    ledger.alloc(weights.byte_size());
    ledger.free(stage1_kept + snapshot.retained_bytes());
    if cfg.store_snapshot {
        layer.snapshot = Some(StoredSnapshot {
            x_orig: snapshot.x_orig,
            y_orig: snapshot.y_orig,
        });
    }
    Ok(LayerOutput {
        run: LayerRun {
            name: name.to_string(),
            gamma_stage1,
            gamma_rpiq: gamma_final,
            reduction_pct: reduction_pct(gamma_stage1, gamma_final)?,
            iterations,
            stopped_early,
            gamma_trace,
            gamma_rejected,
            calibration_bytes,
            stage1_time,
            stage2_time,
        },
        layer,
        weights,
    })
}

fn check_inputs(ckpt: &Checkpoint, batches: &[DenseMatrix]) -> Result<()> {
    let Some((name, first)) = ckpt.layers.first() else {
        return Ok(());
    };
    if batches.is_empty() {
        return Err(Error::Calibration("no calibration batches".into()));
    }
    for b in batches {
        if b.cols() != first.cols() {
            return Err(Error::shape("quantize_model", first.cols(), b.cols()).in_layer(name));
        }
    }
    for pair in ckpt.layers.windows(2) {
        let ((prev, wp), (next, wn)) = (&pair[0], &pair[1]);
        if wn.cols() != wp.rows() {
            return Err(Error::Spec(format!(
                "layer {next} expects {} inputs but {prev} produces {}",
                wn.cols(),
                wp.rows()
            )));
        }
    }
    Ok(())
}

/// Quantizes every layer of `ckpt` in order.
///
/// With sequential propagation each layer is calibrated on the outputs of
/// the already quantized layers before it; otherwise on full-precision
/// outputs, and layers may then run on separate threads. Batches are
/// streamed through the accumulator one at a time.
pub fn quantize_model(
    ckpt: &Checkpoint,
    batches: &[DenseMatrix],
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    cfg.validate()?;
    check_inputs(ckpt, batches)?;
    let start = Instant::now();
    let mut outputs = Vec::with_capacity(ckpt.len());
    let peak_bytes = if cfg.parallel {
        let fp: Vec<DenseMatrix> = ckpt.matrices().cloned().collect();
        let results: Vec<Result<(LayerOutput, MemoryLedger)>> = std::thread::scope(|s| {
            let handles: Vec<_> = ckpt
                .layers
                .iter()
                .enumerate()
                .map(|(l, (name, w))| {
                    let upstream = &fp[..l];
                    s.spawn(move || {
                        let mut ledger = MemoryLedger::default();
                        quantize_one(name, w, batches, upstream, cfg, &mut ledger)
                            .map(|o| (o, ledger))
                            .map_err(|e| e.in_layer(name))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("layer worker panicked"))
                .collect()
        });
        // concurrent layers may all be at their peak at once
        let mut total = 0;
        for r in results {
            let (out, ledger) = r?;
            total += ledger.peak();
            outputs.push(out);
        }
        total
    } else {
        let mut ledger = MemoryLedger::default();
        let mut upstream: Vec<DenseMatrix> = Vec::with_capacity(ckpt.len());
        for (name, w) in &ckpt.layers {
            let out = quantize_one(name, w, batches, &upstream, cfg, &mut ledger)
                .map_err(|e| e.in_layer(name))?;
            upstream.push(if cfg.sequential {
                out.weights.clone()
            } else {
                w.clone()
            });
            outputs.push(out);
        }
        ledger.peak()
    };
    let total_time = start.elapsed();
    let mut artifact = QuantizedArtifact::default();
    let mut layers = Vec::with_capacity(outputs.len());
    let mut weights = Vec::with_capacity(outputs.len());
    for o in outputs {
        artifact.layers.push(o.layer);
        layers.push(o.run);
        weights.push(o.weights);
    }
    Ok(PipelineRun {
        artifact,
        layers,
        weights,
        peak_bytes,
        total_time,
    })
}

/// `‖X·W_1ᵀ·…·W_Lᵀ − X·Q_1ᵀ·…·Q_Lᵀ‖²_F`: output error of the whole stack.
pub fn model_output_loss(
    x: &DenseMatrix,
    reference: &[DenseMatrix],
    quantized: &[DenseMatrix],
) -> Result<f64> {
    if reference.len() != quantized.len() {
        return Err(Error::shape(
            "model_output_loss",
            reference.len(),
            quantized.len(),
        ));
    }
    Ok(propagate(x, reference)?
        .sub(&propagate(x, quantized)?)?
        .frobenius_sq())
}

/// `exp(mean(losses))`.
pub fn perplexity(batch_losses: &[f64]) -> Result<f64> {
    if batch_losses.is_empty() {
        return Err(Error::Argument("perplexity needs at least one loss".into()));
    }
    if batch_losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Argument("losses must be finite".into()));
    }
    Ok((batch_losses.iter().sum::<f64>() / batch_losses.len() as f64).exp())
}

/// Fraction of exact matches.
pub fn accuracy<T: PartialEq>(preds: &[T], labels: &[T]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Argument(
            "accuracy needs at least one prediction".into(),
        ));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `candidate − baseline`, the overhead of one run over another.
pub fn overhead_delta(baseline: f64, candidate: f64) -> f64 {
    candidate - baseline
}

/// `(ΔM, ΔT)` of an RPIQ run over a GPTQ run on the same inputs.
pub fn measure_overheads(run_gptq: &PipelineRun, run_rpiq: &PipelineRun) -> (i64, f64) {
    let dm = run_rpiq.peak_bytes as i64 - run_gptq.peak_bytes as i64;
    let dt = overhead_delta(
        run_gptq.total_time.as_secs_f64(),
        run_rpiq.total_time.as_secs_f64(),
    );
    (dm, dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerComparison {
    pub name: String,
    pub gamma_stage1: f64,
    pub gamma_rpiq: f64,
    pub reduction_pct: f64,
    pub iterations: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub layers: Vec<LayerComparison>,
    pub delta_mem_bytes: i64,
    pub delta_time_secs: f64,
    pub peak_bytes: usize,
    pub stage1_secs: f64,
    pub stage2_secs: f64,
    pub config: Vec<(String, String)>,
    /// Per-layer `Γ` after each sweep.
    pub traces: Vec<(String, Vec<f64>)>,
}

impl ComparisonReport {
    /// Report of a single run; overhead deltas are zero.
    pub fn from_run(run: &PipelineRun, config: Vec<(String, String)>) -> Self {
        Self {
            layers: run
                .layers
                .iter()
                .map(|l| LayerComparison {
                    name: l.name.clone(),
                    gamma_stage1: l.gamma_stage1,
                    gamma_rpiq: l.gamma_rpiq,
                    reduction_pct: l.reduction_pct,
                    iterations: l.iterations,
                    stopped_early: l.stopped_early,
                })
                .collect(),
            delta_mem_bytes: 0,
            delta_time_secs: 0.0,
            peak_bytes: run.peak_bytes,
            stage1_secs: run.stage1_time().as_secs_f64(),
            stage2_secs: run.stage2_time().as_secs_f64(),
            config,
            traces: run
                .layers
                .iter()
                .map(|l| (l.name.clone(), l.gamma_trace.clone()))
                .collect(),
        }
    }

    /// Report of an RPIQ run with overheads measured against a GPTQ run.
    pub fn compare(
        run_gptq: &PipelineRun,
        run_rpiq: &PipelineRun,
        config: Vec<(String, String)>,
    ) -> Self {
        let mut report = Self::from_run(run_rpiq, config);
        let (dm, dt) = measure_overheads(run_gptq, run_rpiq);
        report.delta_mem_bytes = dm;
        report.delta_time_secs = dt;
        report
    }

    pub fn median_reduction_pct(&self) -> f64 {
        median(self.layers.iter().map(|l| l.reduction_pct).collect())
    }

    /// `key = value` lines. Floats use the shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k} = {v}");
        }
        for l in &self.layers {
            let p = format!("layer.{}", l.name);
            let _ = writeln!(s, "{p}.gamma_stage1 = {}", l.gamma_stage1);
            let _ = writeln!(s, "{p}.gamma_rpiq = {}", l.gamma_rpiq);
            let _ = writeln!(s, "{p}.reduction_pct = {}", l.reduction_pct);
            let _ = writeln!(s, "{p}.iterations = {}", l.iterations);
            let _ = writeln!(s, "{p}.stopped_early = {}", l.stopped_early);
        }
        let _ = writeln!(s, "totals.delta_mem_bytes = {}", self.delta_mem_bytes);
        let _ = writeln!(s, "totals.delta_time_secs = {}", self.delta_time_secs);
        let _ = writeln!(s, "totals.peak_bytes = {}", self.peak_bytes);
        let _ = writeln!(s, "totals.stage1_secs = {}", self.stage1_secs);
        let _ = writeln!(s, "totals.stage2_secs = {}", self.stage2_secs);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("layer,gamma_stage1,gamma_rpiq,reduction_pct,iterations,stopped_early\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                l.name,
                l.gamma_stage1,
                l.gamma_rpiq,
                l.reduction_pct,
                l.iterations,
                l.stopped_early
            );
        }
        s
    }

    /// `layer,t,gamma` rows, one per sweep, followed by a `final` row with
    /// the returned on-grid loss.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("layer,t,gamma\n");
        for ((name, gamma), l) in self.traces.iter().zip(&self.layers) {
            for (t, g) in gamma.iter().enumerate() {
                let _ = writeln!(s, "{name},{t},{g}");
            }
            let _ = writeln!(s, "{name},final,{}", l.gamma_rpiq);
        }
        s
    }
}

pub fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
