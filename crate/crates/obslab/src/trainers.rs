//! Training procedures for the learned observers: the single-layer linear
//! network fit to the Hotelling objective (from labeled measurements or via
//! the covariance decomposition), the CNN fit to cross-entropy, and the
//! architecture-ladder selection rule.
//!
//! Both linear objectives are quadratic in the template, so their exact
//! minimizer is the Hotelling template; stochastic mini-batch Adam with
//! per-batch class means recovers it without ever forming a covariance
//! matrix. Template selection uses early stopping at the maximum validation
//! SNR; CNN selection keeps the minimum-validation-cross-entropy checkpoint.

use std::io;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::evalkit::{auc, snr_t, ScoreSet};
use crate::imaging::DiagCovariance;
use crate::neural::{
    batch_loss_and_gradient, cross_entropy, AdamConfig, AdamState, ArchSpec, CnnModel,
    CnnWorkspace, NeuralError,
};
use crate::observers::Template;
use crate::rng::{child_rng, child_seed};
use crate::vecmath::{axpy, dot};

/// Fixed multiplier of the mean-difference term in the linear objectives.
/// At exactly 2 the population minimizer is the Hotelling template itself;
/// any other value only rescales it.
pub const LAMBDA_STAR: f64 = 2.0;

/// Relative improvement threshold of the architecture ladder: a new depth
/// must reduce validation cross-entropy by at least 1% of the previous value.
pub const LADDER_IMPROVEMENT: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("class {class} has no images; balanced batches are impossible")]
    EmptyClass { class: u8 },
    #[error("image has {got} pixels, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("loss became non-finite at mini-batch {iteration}")]
    NonFinite { iteration: usize },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// A labeled image set: signal-absent (`h0`) and signal-present (`h1`)
/// classes with a shared pixel count.
#[derive(Debug, Clone)]
pub struct LabeledImages {
    h0: Vec<Vec<f64>>,
    h1: Vec<Vec<f64>>,
}

impl LabeledImages {
    pub fn new(h0: Vec<Vec<f64>>, h1: Vec<Vec<f64>>) -> Result<Self, TrainError> {
        if h0.is_empty() {
            return Err(TrainError::EmptyClass { class: 0 });
        }
        if h1.is_empty() {
            return Err(TrainError::EmptyClass { class: 1 });
        }
        let dim = h0[0].len();
        for g in h0.iter().chain(&h1) {
            if g.len() != dim {
                return Err(TrainError::ShapeMismatch { expected: dim, got: g.len() });
            }
        }
        Ok(Self { h0, h1 })
    }

    pub fn dim(&self) -> usize {
        self.h0[0].len()
    }

    pub fn class(&self, label: u8) -> &[Vec<f64>] {
        if label == 0 {
            &self.h0
        } else {
            &self.h1
        }
    }

    /// Linear scores `w^T g` per class.
    pub fn linear_scores(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let score = |set: &[Vec<f64>]| set.iter().map(|g| dot(w, g)).collect();
        (score(&self.h0), score(&self.h1))
    }
}

/// Learning-rate schedule applied on top of the base Adam rate.
///
/// Stochastic mini-batch noise keeps a constant-rate iterate dithering in a
/// band proportional to the rate, so the annealed variants let the linear
/// trainers settle onto the quadratic minimizer instead of orbiting it.
/// `InverseSqrt` decays as `lr / sqrt(iteration)` from the first step;
/// `InverseTime` holds the base rate for `hold` iterations (long enough to
/// finish the initial descent) and then decays as `lr * hold / iteration`,
/// which reaches small rates much sooner for the same iteration budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    InverseSqrt,
    InverseTime {
        hold: usize,
    },
}

/// Shared training settings. Paper-scale runs use 200+200 mini-batches and
/// tens of thousands of iterations; desk-scale defaults here are 100+100.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Images drawn from each class per mini-batch.
    pub batch_per_class: usize,
    /// Total mini-batches to run.
    pub max_batches: usize,
    /// Validate every this many mini-batches (a final validation always
    /// runs at the last batch).
    pub validation_every: usize,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_per_class: 100,
            max_batches: 1000,
            validation_every: 50,
            adam: AdamConfig::default(),
            schedule: LrSchedule::Constant,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn effective_lr(&self, iteration: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.adam.lr,
            LrSchedule::InverseSqrt => self.adam.lr / (iteration as f64).sqrt(),
            LrSchedule::InverseTime { hold } => {
                self.adam.lr * hold.max(1) as f64 / iteration.max(hold.max(1)) as f64
            }
        }
    }
}

/// One row of the training log CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingLogRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_snr: f64,
    pub val_auc: f64,
}

/// Validation history of a run, written as
/// `iteration,train_loss,val_loss,val_snr,val_auc`.
#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub rows: Vec<TrainingLogRow>,
}

impl TrainingLog {
    pub fn write_csv<W: io::Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "iteration,train_loss,val_loss,val_snr,val_auc")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.8e},{:.8e},{:.8e},{:.8e}",
                r.iteration, r.train_loss, r.val_loss, r.val_snr, r.val_auc
            )?;
        }
        Ok(())
    }
}

/// One validation snapshot of a linear-template run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationPoint {
    pub iteration: usize,
    pub snr: f64,
    pub auc: f64,
    pub loss: f64,
}

/// Record of early-stop selection: the full validation history, the chosen
/// iteration, and the final (non-selected) iterate for bias studies.
#[derive(Debug, Clone)]
pub struct EarlyStopRecord {
    pub history: Vec<ValidationPoint>,
    pub best_iteration: usize,
    pub final_template: Template,
}

impl EarlyStopRecord {
    /// Index of the maximum-SNR entry (first wins ties); selection re-run on
    /// the stored history is idempotent.
    pub fn selected_index(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.history.iter().enumerate() {
            if p.snr > self.history[best].snr {
                best = i;
            }
        }
        best
    }
}

/// Output of the linear-template trainers.
#[derive(Debug, Clone)]
pub struct SlnnTrainResult {
    /// Template snapshot at the maximum validation SNR.
    pub template: Template,
    pub record: EarlyStopRecord,
    pub log: TrainingLog,
}

/// Known signal (signal-known-exactly) or a sample pool of signals
/// (signal-known-statistically) for the covariance-decomposition trainer.
#[derive(Debug, Clone, Copy)]
pub enum SignalSpec<'a> {
    Fixed(&'a [f64]),
    Samples(&'a [Vec<f64>]),
}

/// Draws pool indices in epoch-shuffled order, reshuffling whenever the pool
/// is exhausted.
struct PoolSampler {
    indices: Vec<usize>,
    cursor: usize,
    rng: ChaCha12Rng,
}

impl PoolSampler {
    fn new(len: usize, rng: ChaCha12Rng) -> Self {
        Self { indices: (0..len).collect(), cursor: len, rng }
    }

    fn next(&mut self) -> usize {
        if self.cursor >= self.indices.len() {
            self.indices.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let i = self.indices[self.cursor];
        self.cursor += 1;
        i
    }
}

/// The labeled-measurement quadratic objective over a full set, with
/// set-wide class means: mean squared class-deviation score minus
/// `λ* w^T Δĝ`. Used for validation loss and reference-optimality checks.
pub fn labeled_ho_loss(w: &[f64], set: &LabeledImages) -> f64 {
    let m = set.dim();
    let mut mean0 = vec![0.0; m];
    let mut mean1 = vec![0.0; m];
    class_mean(&set.h0, &mut mean0);
    class_mean(&set.h1, &mut mean1);
    let n = (set.h0.len() + set.h1.len()) as f64;
    let mut quad = 0.0;
    let wm0 = dot(w, &mean0);
    for g in &set.h0 {
        let t = dot(w, g) - wm0;
        quad += t * t;
    }
    let wm1 = dot(w, &mean1);
    for g in &set.h1 {
        let t = dot(w, g) - wm1;
        quad += t * t;
    }
    quad / n - LAMBDA_STAR * (wm1 - wm0)
}

fn class_mean(set: &[Vec<f64>], mean: &mut [f64]) {
    mean.fill(0.0);
    for g in set {
        axpy(mean, 1.0, g);
    }
    let inv = 1.0 / set.len() as f64;
    for v in mean.iter_mut() {
        *v *= inv;
    }
}

/// Validation metrics for a linear template; degenerate score sets (zero
/// variance) report SNR 0 and AUC 1/2 rather than failing the run.
fn validate_linear(w: &[f64], validation: &LabeledImages) -> (f64, f64, f64) {
    let (s0, s1) = validation.linear_scores(w);
    let scores = ScoreSet::new(s0, s1);
    let snr = snr_t(&scores).unwrap_or(0.0);
    let auc_v = auc(&scores);
    (snr, auc_v, labeled_ho_loss(w, validation))
}

/// Trains the single-layer linear network on a fixed labeled measurement
/// set, drawing balanced mini-batches from epoch-shuffled per-class pools.
///
/// Each mini-batch recomputes its own class means and follows the exact
/// gradient of the quadratic objective. Returns the early-stopped template
/// (maximum validation SNR).
pub fn train_slnn_labeled(
    data: &LabeledImages,
    cfg: &TrainConfig,
    validation: &LabeledImages,
) -> Result<SlnnTrainResult, TrainError> {
    let mut sampler0 = PoolSampler::new(data.h0.len(), child_rng(cfg.seed, "slnn-labeled-h0", 0));
    let mut sampler1 = PoolSampler::new(data.h1.len(), child_rng(cfg.seed, "slnn-labeled-h1", 0));
    let draw = |label: bool, out: &mut Vec<f64>| {
        let src = if label {
            &data.h1[sampler1.next()]
        } else {
            &data.h0[sampler0.next()]
        };
        out.clone_from(src);
    };
    run_labeled_core(draw, data.dim(), cfg, validation)
}

/// [`train_slnn_labeled`] over a semi-online measurement stream instead of a
/// fixed set: `source(label, out)` overwrites `out` with a fresh measurement
/// under the given hypothesis. Removes the finite-pool bias from the learned
/// template, which matters when the template itself (not just its score) is
/// the product; the buffer interface keeps billion-draw runs allocation-free.
pub fn train_slnn_labeled_stream<S: FnMut(bool, &mut [f64])>(
    mut source: S,
    input_dim: usize,
    cfg: &TrainConfig,
    validation: &LabeledImages,
) -> Result<SlnnTrainResult, TrainError> {
    run_labeled_core(
        |label, out: &mut Vec<f64>| source(label, out.as_mut_slice()),
        input_dim,
        cfg,
        validation,
    )
}

fn run_labeled_core(
    mut draw: impl FnMut(bool, &mut Vec<f64>),
    m: usize,
    cfg: &TrainConfig,
    validation: &LabeledImages,
) -> Result<SlnnTrainResult, TrainError> {
    assert!(cfg.max_batches >= 1 && cfg.batch_per_class >= 1 && cfg.validation_every >= 1);
    if validation.dim() != m {
        return Err(TrainError::ShapeMismatch { expected: m, got: validation.dim() });
    }
    let k = cfg.batch_per_class;
    let mut batch0 = vec![vec![0.0; m]; k];
    let mut batch1 = vec![vec![0.0; m]; k];

    let mut w = vec![0.0; m];
    let mut adam = AdamState::new(cfg.adam, m);
    let mut grad = vec![0.0; m];
    let mut mean0 = vec![0.0; m];
    let mut mean1 = vec![0.0; m];
    let mut run = RunState::new();

    for iteration in 1..=cfg.max_batches {
        for slot in batch0.iter_mut() {
            draw(false, slot);
            if slot.len() != m {
                return Err(TrainError::ShapeMismatch { expected: m, got: slot.len() });
            }
        }
        for slot in batch1.iter_mut() {
            draw(true, slot);
            if slot.len() != m {
                return Err(TrainError::ShapeMismatch { expected: m, got: slot.len() });
            }
        }
        class_mean(&batch0, &mut mean0);
        class_mean(&batch1, &mut mean1);

        let n = (2 * k) as f64;
        grad.fill(0.0);
        let mut quad = 0.0;
        for (batch, mean) in [(&batch0, &mean0), (&batch1, &mean1)] {
            let wm = dot(&w, mean);
            let mut csum = 0.0;
            for g in batch.iter() {
                let t = dot(&w, g) - wm;
                quad += t * t;
                let c = 2.0 * t / n;
                axpy(&mut grad, c, g);
                csum += c;
            }
            axpy(&mut grad, -csum, mean);
        }
        // Mean-difference term: loss -λ* w^T Δĝ, gradient -λ* Δĝ.
        let delta_dot_w = dot(&w, &mean1) - dot(&w, &mean0);
        let loss = quad / n - LAMBDA_STAR * delta_dot_w;
        axpy(&mut grad, -LAMBDA_STAR, &mean1);
        axpy(&mut grad, LAMBDA_STAR, &mean0);

        if !loss.is_finite() {
            return Err(TrainError::NonFinite { iteration });
        }
        adam.step_with_lr(&mut w, &grad, cfg.effective_lr(iteration));

        if iteration % cfg.validation_every == 0 || iteration == cfg.max_batches {
            run.observe(iteration, loss, &w, validation);
        }
    }
    Ok(run.finish(w))
}

/// Trains the single-layer linear network from object statistics: background
/// samples, the signal (fixed or sampled), and the known diagonal noise
/// covariance. No measurement noise is ever simulated; the noise enters
/// through its covariance term analytically.
///
/// An empty background pool drops the background-deviation term, which is
/// the non-random-background degenerate case.
pub fn train_slnn_covdecomp(
    backgrounds: &[Vec<f64>],
    signal: SignalSpec<'_>,
    noise_cov: &DiagCovariance,
    cfg: &TrainConfig,
    validation: &LabeledImages,
) -> Result<SlnnTrainResult, TrainError> {
    assert!(cfg.max_batches >= 1 && cfg.batch_per_class >= 1 && cfg.validation_every >= 1);
    let m = noise_cov.len();
    if validation.dim() != m {
        return Err(TrainError::ShapeMismatch { expected: m, got: validation.dim() });
    }
    for b in backgrounds {
        if b.len() != m {
            return Err(TrainError::ShapeMismatch { expected: m, got: b.len() });
        }
    }
    let signal_pool = match signal {
        SignalSpec::Fixed(s) => {
            if s.len() != m {
                return Err(TrainError::ShapeMismatch { expected: m, got: s.len() });
            }
            None
        }
        SignalSpec::Samples(pool) => {
            if pool.is_empty() {
                return Err(TrainError::EmptyClass { class: 1 });
            }
            for s in pool {
                if s.len() != m {
                    return Err(TrainError::ShapeMismatch { expected: m, got: s.len() });
                }
            }
            Some(pool)
        }
    };

    let mut bg_sampler = (!backgrounds.is_empty())
        .then(|| PoolSampler::new(backgrounds.len(), child_rng(cfg.seed, "slnn-covdecomp-bg", 0)));
    let mut sig_sampler = signal_pool
        .map(|p| PoolSampler::new(p.len(), child_rng(cfg.seed, "slnn-covdecomp-sig", 0)));

    let mut w = vec![0.0; m];
    let mut adam = AdamState::new(cfg.adam, m);
    let mut grad = vec![0.0; m];
    let mut mean = vec![0.0; m];
    let mut s_hat = match signal {
        SignalSpec::Fixed(s) => s.to_vec(),
        SignalSpec::Samples(_) => vec![0.0; m],
    };
    let mut run = RunState::new();
    let k = cfg.batch_per_class;

    for iteration in 1..=cfg.max_batches {
        grad.fill(0.0);
        let mut loss = 0.0;

        // Background-deviation term: mean squared deviation score.
        if let Some(sampler) = bg_sampler.as_mut() {
            let gather: Vec<&[f64]> =
                (0..k).map(|_| backgrounds[sampler.next()].as_slice()).collect();
            loss += deviation_term(&w, &gather, &mut mean, &mut grad, 1.0);
        }
        // Signal-deviation term, half weight; absent for a fixed signal.
        if let Some(pool) = signal_pool {
            let sampler = sig_sampler.as_mut().expect("sampler exists for sampled signals");
            let gather: Vec<&[f64]> = (0..k).map(|_| pool[sampler.next()].as_slice()).collect();
            loss += deviation_term(&w, &gather, &mut mean, &mut grad, 0.5);
            s_hat.copy_from_slice(&mean);
        }
        // Noise term w^T K̄_n w and the mean-signal term -λ* w^T ŝ.
        let diag = noise_cov.as_slice();
        let mut noise_quad = 0.0;
        for i in 0..m {
            noise_quad += diag[i] * w[i] * w[i];
            grad[i] += 2.0 * diag[i] * w[i];
        }
        loss += noise_quad - LAMBDA_STAR * dot(&w, &s_hat);
        axpy(&mut grad, -LAMBDA_STAR, &s_hat);

        if !loss.is_finite() {
            return Err(TrainError::NonFinite { iteration });
        }
        adam.step_with_lr(&mut w, &grad, cfg.effective_lr(iteration));

        if iteration % cfg.validation_every == 0 || iteration == cfg.max_batches {
            run.observe(iteration, loss, &w, validation);
        }
    }
    Ok(run.finish(w))
}

/// Adds `weight * mean[(w^T (x - x̂))^2]` over the gathered batch to the loss
/// and its gradient; leaves the batch mean in `mean`.
fn deviation_term(
    w: &[f64],
    gather: &[&[f64]],
    mean: &mut [f64],
    grad: &mut [f64],
    weight: f64,
) -> f64 {
    batch_mean(gather, mean);
    let n = gather.len() as f64;
    let wm = dot(w, mean);
    let mut quad = 0.0;
    let mut csum = 0.0;
    for x in gather {
        let t = dot(w, x) - wm;
        quad += t * t;
        let c = 2.0 * weight * t / n;
        axpy(grad, c, x);
        csum += c;
    }
    axpy(grad, -csum, mean);
    weight * quad / n
}

fn batch_mean(gather: &[&[f64]], mean: &mut [f64]) {
    mean.fill(0.0);
    for g in gather {
        axpy(mean, 1.0, g);
    }
    let inv = 1.0 / gather.len() as f64;
    for v in mean.iter_mut() {
        *v *= inv;
    }
}

/// Shared bookkeeping of the linear trainers: validation history, best-SNR
/// snapshot, and the training log.
struct RunState {
    history: Vec<ValidationPoint>,
    log: TrainingLog,
    best_snr: f64,
    best_iteration: usize,
    best_w: Vec<f64>,
}

impl RunState {
    fn new() -> Self {
        Self {
            history: Vec::new(),
            log: TrainingLog::default(),
            best_snr: f64::NEG_INFINITY,
            best_iteration: 0,
            best_w: Vec::new(),
        }
    }

    fn observe(&mut self, iteration: usize, train_loss: f64, w: &[f64], validation: &LabeledImages) {
        let (snr, auc_v, val_loss) = validate_linear(w, validation);
        self.history.push(ValidationPoint { iteration, snr, auc: auc_v, loss: val_loss });
        self.log.rows.push(TrainingLogRow {
            iteration,
            train_loss,
            val_loss,
            val_snr: snr,
            val_auc: auc_v,
        });
        if snr > self.best_snr {
            self.best_snr = snr;
            self.best_iteration = iteration;
            self.best_w = w.to_vec();
        }
    }

    fn finish(self, final_w: Vec<f64>) -> SlnnTrainResult {
        SlnnTrainResult {
            template: Template::new(self.best_w),
            record: EarlyStopRecord {
                history: self.history,
                best_iteration: self.best_iteration,
                final_template: Template::new(final_w),
            },
            log: self.log,
        }
    }
}

/// Output of the CNN trainer: the minimum-validation-cross-entropy
/// checkpoint and the run's log.
#[derive(Debug, Clone)]
pub struct CnnTrainResult {
    pub model: CnnModel,
    pub best_iteration: usize,
    pub best_val_cross_entropy: f64,
    pub log: TrainingLog,
}

/// Trains a CNN observer by cross-entropy on a semi-online measurement
/// stream: `source(label)` must return a fresh measurement under the given
/// hypothesis (typically a stored noiseless object plus fresh noise).
///
/// Aborts with [`TrainError::NonFinite`] if the loss or parameters diverge.
pub fn train_cnn_io<S: FnMut(bool) -> Vec<f64>>(
    source: &mut S,
    arch: ArchSpec,
    cfg: &TrainConfig,
    validation: &LabeledImages,
) -> Result<CnnTrainResult, TrainError> {
    assert!(cfg.max_batches >= 1 && cfg.batch_per_class >= 1 && cfg.validation_every >= 1);
    if validation.dim() != arch.input_pixels() {
        return Err(TrainError::ShapeMismatch {
            expected: arch.input_pixels(),
            got: validation.dim(),
        });
    }
    let mut rng = child_rng(cfg.seed, "cnn-init", 0);
    let mut model = CnnModel::init(arch, &mut rng);
    let mut ws = CnnWorkspace::new(&arch);
    let mut adam = AdamState::new(cfg.adam, model.param_count());
    let mut grads = vec![0.0; model.param_count()];
    let mut log = TrainingLog::default();
    let mut best_ce = f64::INFINITY;
    let mut best_iteration = 0;
    let mut best_params: Vec<f64> = model.params().to_vec();

    for iteration in 1..=cfg.max_batches {
        let mut images: Vec<Vec<f64>> = Vec::with_capacity(2 * cfg.batch_per_class);
        for _ in 0..cfg.batch_per_class {
            images.push(source(false));
        }
        for _ in 0..cfg.batch_per_class {
            images.push(source(true));
        }
        let batch: Vec<(&[f64], f64)> = images
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_slice(), f64::from(i >= cfg.batch_per_class)))
            .collect();
        let loss = batch_loss_and_gradient(&model, &batch, &mut ws, &mut grads)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { iteration });
        }
        adam.step_with_lr(model.params_mut(), &grads, cfg.effective_lr(iteration));

        if iteration % cfg.validation_every == 0 || iteration == cfg.max_batches {
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(TrainError::NonFinite { iteration });
            }
            let (ce, auc_v, snr) = validate_cnn(&model, &mut ws, validation)?;
            if !ce.is_finite() {
                return Err(TrainError::NonFinite { iteration });
            }
            log.rows.push(TrainingLogRow {
                iteration,
                train_loss: loss,
                val_loss: ce,
                val_snr: snr,
                val_auc: auc_v,
            });
            if ce < best_ce {
                best_ce = ce;
                best_iteration = iteration;
                best_params.copy_from_slice(model.params());
            }
        }
    }
    model.params_mut().copy_from_slice(&best_params);
    Ok(CnnTrainResult { model, best_iteration, best_val_cross_entropy: best_ce, log })
}

/// Mean validation cross-entropy, AUC, and SNR of the logit scores.
fn validate_cnn(
    model: &CnnModel,
    ws: &mut CnnWorkspace,
    validation: &LabeledImages,
) -> Result<(f64, f64, f64), TrainError> {
    let mut ce = 0.0;
    let mut scores = (Vec::new(), Vec::new());
    for (label, (set, out)) in
        [(0.0, (&validation.h0, &mut scores.0)), (1.0, (&validation.h1, &mut scores.1))]
    {
        for g in set.iter() {
            let z = model.logit(g, ws)?;
            ce += cross_entropy(crate::neural::sigmoid(z), label);
            out.push(z);
        }
    }
    ce /= (validation.h0.len() + validation.h1.len()) as f64;
    let set = ScoreSet::new(scores.0, scores.1);
    Ok((ce, auc(&set), snr_t(&set).unwrap_or(0.0)))
}

/// CNN AUC on a labeled set, using posterior scores.
pub fn cnn_auc(model: &CnnModel, set: &LabeledImages) -> Result<f64, TrainError> {
    let mut ws = CnnWorkspace::new(model.arch());
    let mut score = |images: &[Vec<f64>]| -> Result<Vec<f64>, TrainError> {
        images.iter().map(|g| Ok(model.logit(g, &mut ws)?)).collect()
    };
    let s0 = score(&set.h0)?;
    let s1 = score(&set.h1)?;
    Ok(auc(&ScoreSet::new(s0, s1)))
}

/// Stop rule of the architecture ladder: true when the cross-entropy
/// decrement from the previous depth falls below 1% of the previous value.
pub fn ladder_stop_rule(previous_ce: f64, current_ce: f64) -> bool {
    (previous_ce - current_ce) < LADDER_IMPROVEMENT * previous_ce
}

/// Why the ladder stopped adding depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderStop {
    /// The most recent depth improved validation cross-entropy by less
    /// than 1%.
    ImprovementBelowThreshold,
    /// Every requested depth was trained.
    Exhausted,
}

/// One trained rung of the ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderStep {
    pub depth: usize,
    pub val_cross_entropy: f64,
    pub val_auc: f64,
}

/// Result of the depth search: all trained rungs, the selected
/// (minimum-cross-entropy) model, and the reference comparison when a
/// reference AUC was supplied.
#[derive(Debug)]
pub struct LadderResult {
    pub steps: Vec<LadderStep>,
    pub selected_index: usize,
    pub selected: CnnModel,
    pub stop: LadderStop,
    /// False when the selected model underperforms the supplied reference
    /// AUC — the signal to re-specify the architecture family.
    pub meets_reference: Option<bool>,
}

/// Trains CNNs of increasing depth until the validation cross-entropy stops
/// improving by at least 1%, then selects the minimum-cross-entropy model.
pub fn architecture_ladder<S: FnMut(bool) -> Vec<f64>>(
    depths: &[usize],
    arch_for: impl Fn(usize) -> ArchSpec,
    source: &mut S,
    cfg: &TrainConfig,
    validation: &LabeledImages,
    reference_auc: Option<f64>,
) -> Result<LadderResult, TrainError> {
    assert!(!depths.is_empty(), "ladder needs at least one depth");
    assert!(depths.windows(2).all(|p| p[0] < p[1]), "depths must strictly increase");
    let mut steps = Vec::new();
    let mut models = Vec::new();
    let mut stop = LadderStop::Exhausted;
    for (i, &depth) in depths.iter().enumerate() {
        let mut depth_cfg = *cfg;
        depth_cfg.seed = child_seed(cfg.seed, "ladder-depth", depth as u64);
        let result = train_cnn_io(source, arch_for(depth), &depth_cfg, validation)?;
        let val_auc = cnn_auc(&result.model, validation)?;
        steps.push(LadderStep { depth, val_cross_entropy: result.best_val_cross_entropy, val_auc });
        models.push(result.model);
        if i > 0 && ladder_stop_rule(steps[i - 1].val_cross_entropy, steps[i].val_cross_entropy) {
            stop = LadderStop::ImprovementBelowThreshold;
            break;
        }
    }
    let mut selected_index = 0;
    for (i, s) in steps.iter().enumerate() {
        if s.val_cross_entropy < steps[selected_index].val_cross_entropy {
            selected_index = i;
        }
    }
    let selected = models.swap_remove(selected_index);
    let meets_reference = reference_auc.map(|r| steps[selected_index].val_auc >= r);
    Ok(LadderResult { steps, selected_index, selected, stop, meets_reference })
}
