//! Markov-chain Monte Carlo approximation of the Ideal Observer on lumpy
//! backgrounds, plus an exhaustive quadrature oracle for tiny tasks.
//!
//! For a background-varying task the likelihood ratio marginalizes over the
//! object ensemble. Writing `Λ_BKE(g | b, s)` for the fixed-background ratio,
//!
//! ```text
//! Λ(g) = E[ Λ_BKE(g | b, s) ],   b ~ p(b | g, H0),   s ~ prior
//! ```
//!
//! so the estimator runs a Metropolis–Hastings chain over lump configurations
//! targeting the posterior under the signal-absent hypothesis and averages
//! `Λ_BKE` along the chain. Four move kinds drive the chain: a Gaussian walk
//! on one lump center, lump birth and death (whose acceptance carries the
//! Poisson prior ratio and the proposal asymmetry), and — for random-signal
//! tasks — a local re-draw of one signal parameter. The companion
//! [`exact_lumpy_log_lr`] evaluates the same marginal by brute force on tasks
//! small enough to enumerate, and anchors the chain's correctness tests.

use std::f64::consts::TAU;
use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::observers::gaussian_bke_log_lr;
use crate::phantoms::{
    add_lumps, render_lumpy, render_sks_signal, sample_lumpy, GaussianKernel, LumpPlacement,
    LumpyModel, LumpyParams, PixelGrid, SksSignalPrior, SksSignalParams,
};
use crate::rng::child_rng;
use crate::vecmath::dot;

/// Chain length used by the full-scale studies for fixed-signal lumpy tasks;
/// desk-scale runs use much shorter chains.
pub const FULL_CHAIN_KNOWN_SIGNAL: usize = 200_000;

/// Chain length used by the full-scale studies for random-signal lumpy tasks.
pub const FULL_CHAIN_RANDOM_SIGNAL: usize = 400_000;

/// Largest number of background configurations [`exact_lumpy_log_lr`] will
/// evaluate before refusing the task.
pub const EXACT_BACKGROUND_BUDGET: usize = 10_000;

/// Cached log likelihoods are re-derived from a fresh render this often.
const CACHE_CHECK_EVERY: usize = 1_000;

/// Wrapped-normal proposal width for the signal orientation move.
const ANGLE_PROPOSAL_STD: f64 = TAU / 8.0;

/// Signal width proposals step by this fraction of the prior range and are
/// reflected back into the range.
const WIDTH_PROPOSAL_FRACTION: f64 = 0.25;

/// Post-burn-in acceptance rates outside this band attach a warning.
const ACCEPTANCE_BAND: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Error, PartialEq)]
pub enum McmcError {
    #[error("image length {got} does not match the {expected}-pixel grid")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("no post-burn-in samples: n_samples {n_samples} must exceed burn_in {burn_in}")]
    EmptyChain { n_samples: usize, burn_in: usize },
    #[error("move probabilities must be non-negative and sum to 1, got sum {sum}")]
    BadMoveProbabilities { sum: f64 },
    #[error("signal-perturbation probability {probability} requires a random-signal task")]
    SignalMoveWithoutPrior { probability: f64 },
    #[error("quadrature would evaluate {nodes} backgrounds, over the budget of {budget}")]
    QuadratureBudget { nodes: usize, budget: usize },
    #[error("the exhaustive oracle requires a fixed signal image")]
    RandomSignalUnsupported,
}

/// Where the signal profile comes from while the chain runs.
#[derive(Debug, Clone, Copy)]
pub enum McmcSignal<'a> {
    /// Signal-known-exactly: one fixed rendered signal image.
    Known(&'a [f64]),
    /// Signal-known-statistically: the signal parameters ride along in the
    /// chain, marginalized by sampling this prior. Keep the signal move
    /// probability positive or the chain freezes at its initial draw.
    Random(&'a SksSignalPrior),
}

/// The detection task as seen by the sampler: geometry, background model,
/// signal description, and i.i.d. Gaussian noise level.
#[derive(Debug, Clone, Copy)]
pub struct McmcTask<'a> {
    pub grid: PixelGrid,
    pub model: &'a LumpyModel,
    pub kernel: GaussianKernel,
    pub signal: McmcSignal<'a>,
    pub noise_std: f64,
}

impl McmcTask<'_> {
    fn validate(&self, g: &[f64]) -> Result<(), McmcError> {
        assert!(
            self.noise_std > 0.0 && self.noise_std.is_finite(),
            "noise standard deviation must be positive and finite"
        );
        let m = self.grid.len();
        if g.len() != m {
            return Err(McmcError::ShapeMismatch { expected: m, got: g.len() });
        }
        if let McmcSignal::Known(signal) = self.signal {
            if signal.len() != m {
                return Err(McmcError::ShapeMismatch { expected: m, got: signal.len() });
            }
        }
        Ok(())
    }
}

/// Probability of picking each move kind at one chain step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveProbabilities {
    pub perturb_lump: f64,
    pub birth: f64,
    pub death: f64,
    pub perturb_signal: f64,
}

impl MoveProbabilities {
    /// Mix for fixed-signal tasks: no signal moves.
    pub fn known_signal() -> Self {
        Self { perturb_lump: 0.7, birth: 0.15, death: 0.15, perturb_signal: 0.0 }
    }

    /// Mix for random-signal tasks.
    pub fn random_signal() -> Self {
        Self { perturb_lump: 0.6, birth: 0.15, death: 0.15, perturb_signal: 0.1 }
    }

    fn validate(&self) -> Result<(), McmcError> {
        let parts = [self.perturb_lump, self.birth, self.death, self.perturb_signal];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(McmcError::BadMoveProbabilities { sum });
        }
        Ok(())
    }
}

impl Default for MoveProbabilities {
    fn default() -> Self {
        Self::known_signal()
    }
}

/// Chain controls. `burn_in` samples are discarded from the average; the
/// remaining `n_samples - burn_in` states all contribute (no thinning).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub move_probabilities: MoveProbabilities,
    /// Standard deviation, in pixels, of the Gaussian walk on lump and signal
    /// centers.
    pub step_std: f64,
    pub seed: u64,
    /// Record one [`TraceStep`] per chain step in [`McmcRun::trace`].
    pub record_trace: bool,
}

impl ChainConfig {
    /// A chain of the given length with one tenth burn-in, fixed-signal move
    /// mix, and a two-pixel center walk.
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            burn_in: n_samples / 10,
            move_probabilities: MoveProbabilities::default(),
            step_std: 2.0,
            seed,
            record_trace: false,
        }
    }

    fn validate(&self, task: &McmcTask<'_>) -> Result<(), McmcError> {
        assert!(
            self.step_std > 0.0 && self.step_std.is_finite(),
            "proposal step standard deviation must be positive and finite"
        );
        self.move_probabilities.validate()?;
        if self.n_samples <= self.burn_in {
            return Err(McmcError::EmptyChain { n_samples: self.n_samples, burn_in: self.burn_in });
        }
        if self.move_probabilities.perturb_signal > 0.0
            && matches!(task.signal, McmcSignal::Known(_))
        {
            return Err(McmcError::SignalMoveWithoutPrior {
                probability: self.move_probabilities.perturb_signal,
            });
        }
        Ok(())
    }
}

/// Current object hypothesis of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub background: LumpyParams,
    /// Random-signal parameter draw; `None` on fixed-signal tasks.
    pub signal: Option<SksSignalParams>,
    /// Gaussian log likelihood of the measurement given the rendered
    /// background, maintained incrementally across moves and re-derived from
    /// a fresh render every thousand steps to catch drift.
    pub cached_log_likelihood: f64,
}

/// One row of the optional chain trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub log_likelihood: f64,
    pub accepted: bool,
}

/// Writes `step,log_likelihood,accepted` rows, acceptance encoded as 0/1.
pub fn write_trace_csv<W: Write>(rows: &[TraceStep], mut out: W) -> io::Result<()> {
    writeln!(out, "step,log_likelihood,accepted")?;
    for r in rows {
        writeln!(out, "{},{:.8e},{}", r.step, r.log_likelihood, u8::from(r.accepted))?;
    }
    Ok(())
}

/// Diagnostic attached to a finished run that looks statistically unhealthy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum McmcWarning {
    /// Post-burn-in acceptance rate outside `[0.05, 0.95]`: the chain is
    /// either frozen or barely filtering its proposals.
    AcceptanceRate { rate: f64 },
}

impl fmt::Display for McmcWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            McmcWarning::AcceptanceRate { rate } => {
                write!(f, "post-burn-in acceptance rate {rate:.3} outside [0.05, 0.95]")
            }
        }
    }
}

/// A finished chain: the log likelihood-ratio estimate plus diagnostics.
#[derive(Debug, Clone)]
pub struct McmcRun {
    /// Log of the post-burn-in average of `Λ_BKE`, accumulated in the log
    /// domain so huge ratios cannot overflow.
    pub log_lr: f64,
    pub acceptance_rate: f64,
    pub warning: Option<McmcWarning>,
    /// Per-step rows when [`ChainConfig::record_trace`] is set, else empty.
    pub trace: Vec<TraceStep>,
}

/// Estimates the Ideal-Observer log likelihood ratio of one measurement by
/// posterior sampling. Deterministic given `cfg.seed`.
pub fn mcmc_log_lr(g: &[f64], task: &McmcTask<'_>, cfg: &ChainConfig) -> Result<McmcRun, McmcError> {
    task.validate(g)?;
    cfg.validate(task)?;
    let mut rng = child_rng(cfg.seed, "mcmc-chain", 0);
    let mut walker = Walker::new(&mut rng, g, task);
    let kept = cfg.n_samples - cfg.burn_in;
    let mut log_ratios = Vec::with_capacity(kept);
    let mut trace = Vec::with_capacity(if cfg.record_trace { cfg.n_samples } else { 0 });
    let mut accepted_after_burn_in = 0usize;
    for step in 1..=cfg.n_samples {
        let accepted = walker.step(&mut rng, &cfg.move_probabilities, cfg.step_std);
        if step % CACHE_CHECK_EVERY == 0 || step == cfg.n_samples {
            walker.verify_and_refresh_cache();
        }
        if step > cfg.burn_in {
            log_ratios.push(walker.log_bke_lr());
            if accepted {
                accepted_after_burn_in += 1;
            }
        }
        if cfg.record_trace {
            trace.push(TraceStep {
                step,
                log_likelihood: walker.state.cached_log_likelihood,
                accepted,
            });
        }
    }
    let acceptance_rate = accepted_after_burn_in as f64 / kept as f64;
    let warning = (acceptance_rate < ACCEPTANCE_BAND.0 || acceptance_rate > ACCEPTANCE_BAND.1)
        .then_some(McmcWarning::AcceptanceRate { rate: acceptance_rate });
    Ok(McmcRun { log_lr: log_mean_exp(&log_ratios), acceptance_rate, warning, trace })
}

/// Quadrature resolution for the exhaustive oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureSpec {
    /// Largest lump count kept from the Poisson prior (uniform placement
    /// only); the count weights are renormalized over the retained counts.
    pub max_count: usize,
    /// Midpoint-rule nodes per axis for each lump position integral.
    pub nodes_per_axis: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { max_count: 2, nodes_per_axis: 8 }
    }
}

/// Evaluates the marginal log likelihood ratio `log p(g|H1) - log p(g|H0)` by
/// enumerating background configurations: Poisson-weighted lump counts
/// crossed with a midpoint grid over positions (or the exact node set for
/// grid-restricted models). Both hypothesis likelihoods are prior-weighted
/// sums over the same configurations, accumulated with log-sum-exp; any
/// common normalization of the retained prior mass cancels in the ratio.
/// Only fixed-signal tasks are supported, and the total configuration count
/// must stay within [`EXACT_BACKGROUND_BUDGET`].
pub fn exact_lumpy_log_lr(
    g: &[f64],
    task: &McmcTask<'_>,
    quadrature: &QuadratureSpec,
) -> Result<f64, McmcError> {
    task.validate(g)?;
    let McmcSignal::Known(signal) = task.signal else {
        return Err(McmcError::RandomSignalUnsupported);
    };
    assert!(quadrature.nodes_per_axis >= 1, "quadrature needs at least one node per axis");
    // One entry per configuration: prior-and-likelihood weight under H0, and
    // the fixed-background log ratio that upgrades it to the H1 weight.
    let mut configs: Vec<(f64, f64)> = Vec::new();
    match &task.model.placement {
        LumpPlacement::FixedCountGrid { count, nodes } => {
            let total = nodes.len().saturating_pow(*count as u32);
            check_budget(total)?;
            let ln_weight = -(*count as f64) * (nodes.len() as f64).ln();
            accumulate_configs(&mut configs, nodes, *count, ln_weight, g, signal, task);
        }
        LumpPlacement::UniformFov => {
            let per_lump = quadrature.nodes_per_axis * quadrature.nodes_per_axis;
            let total = (0..=quadrature.max_count)
                .fold(0usize, |acc, n| acc.saturating_add(per_lump.saturating_pow(n as u32)));
            check_budget(total)?;
            let positions = midpoint_nodes(&task.grid, quadrature.nodes_per_axis);
            for n in 0..=quadrature.max_count {
                let ln_count = ln_poisson(task.model.mean_count, n);
                if ln_count == f64::NEG_INFINITY {
                    continue;
                }
                let ln_weight = ln_count - n as f64 * (per_lump as f64).ln();
                accumulate_configs(&mut configs, &positions, n, ln_weight, g, signal, task);
            }
        }
    }
    if let [(_, llr)] = configs[..] {
        // A single reachable background collapses the marginal to the
        // fixed-background ratio; return it directly so the degenerate case
        // is exact to the last bit.
        return Ok(llr);
    }
    let h0: Vec<f64> = configs.iter().map(|&(w, _)| w).collect();
    let h1: Vec<f64> = configs.iter().map(|&(w, llr)| w + llr).collect();
    Ok(log_sum_exp(&h1) - log_sum_exp(&h0))
}

fn check_budget(nodes: usize) -> Result<(), McmcError> {
    if nodes > EXACT_BACKGROUND_BUDGET {
        Err(McmcError::QuadratureBudget { nodes, budget: EXACT_BACKGROUND_BUDGET })
    } else {
        Ok(())
    }
}

/// Centers of a `q x q` midpoint rule over the field of view.
fn midpoint_nodes(grid: &PixelGrid, q: usize) -> Vec<[f64; 2]> {
    let dx = grid.width() as f64 / q as f64;
    let dy = grid.height() as f64 / q as f64;
    let mut nodes = Vec::with_capacity(q * q);
    for j in 0..q {
        for i in 0..q {
            nodes.push([(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy]);
        }
    }
    nodes
}

fn ln_poisson(mean: f64, n: usize) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let ln_factorial: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
    n as f64 * mean.ln() - mean - ln_factorial
}

/// Walks every ordered `count`-tuple of `positions` (positions are i.i.d.
/// under the prior, so ordered enumeration needs no symmetry factor) and
/// records `(ln_weight + ln p(g|b,H0), log Λ_BKE)` for each rendered
/// background.
fn accumulate_configs(
    configs: &mut Vec<(f64, f64)>,
    positions: &[[f64; 2]],
    count: usize,
    ln_weight: f64,
    g: &[f64],
    signal: &[f64],
    task: &McmcTask<'_>,
) {
    let mut index = vec![0usize; count];
    let mut centers = vec![[0.0f64; 2]; count];
    let mut background = vec![0.0; task.grid.len()];
    loop {
        for (c, &i) in centers.iter_mut().zip(&index) {
            *c = positions[i];
        }
        background.fill(0.0);
        add_lumps(&mut background, &centers, task.model, &task.kernel, &task.grid, 1.0);
        let llr = gaussian_bke_log_lr(g, &background, signal, task.noise_std)
            .expect("lengths validated by the caller");
        let ln_l = gaussian_log_likelihood(g, &background, task.noise_std);
        configs.push((ln_weight + ln_l, llr));
        let mut k = 0;
        loop {
            if k == count {
                return;
            }
            index[k] += 1;
            if index[k] < positions.len() {
                break;
            }
            index[k] = 0;
            k += 1;
        }
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

fn log_mean_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + (terms.iter().map(|&t| (t - max).exp()).sum::<f64>() / terms.len() as f64).ln()
}

fn gaussian_log_likelihood(g: &[f64], background: &[f64], std: f64) -> f64 {
    let mut acc = 0.0;
    for (&gm, &bm) in g.iter().zip(background) {
        let d = gm - bm;
        acc += d * d;
    }
    -acc / (2.0 * std * std)
}

fn accept<R: Rng + ?Sized>(rng: &mut R, ln_ratio: f64) -> bool {
    ln_ratio >= 0.0 || rng.gen::<f64>() < ln_ratio.exp()
}

/// Reflects `x` into `[lo, hi]`; the reflection map keeps the random walk
/// symmetric, so acceptance needs no correction.
fn reflect_into(x: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let period = 2.0 * (hi - lo);
    let mut t = (x - lo).rem_euclid(period);
    if t > hi - lo {
        t = period - t;
    }
    lo + t
}

enum SignalImage<'a> {
    Fixed(&'a [f64]),
    Rendered(Vec<f64>),
}

impl SignalImage<'_> {
    fn image(&self) -> &[f64] {
        match self {
            SignalImage::Fixed(s) => s,
            SignalImage::Rendered(v) => v,
        }
    }
}

struct Walker<'a> {
    task: &'a McmcTask<'a>,
    g: &'a [f64],
    state: ChainState,
    background_image: Vec<f64>,
    signal_image: SignalImage<'a>,
    s_dot_s: f64,
    s_dot_g: f64,
}

impl<'a> Walker<'a> {
    fn new<R: Rng + ?Sized>(rng: &mut R, g: &'a [f64], task: &'a McmcTask<'a>) -> Self {
        let background = sample_lumpy(rng, task.model, &task.grid);
        let (signal, signal_image) = match task.signal {
            McmcSignal::Known(s) => (None, SignalImage::Fixed(s)),
            McmcSignal::Random(prior) => {
                let params = prior.sample(rng, &task.grid);
                let image = render_sks_signal(&params, &task.kernel, &task.grid);
                (Some(params), SignalImage::Rendered(image))
            }
        };
        let background_image = render_lumpy(&background, task.model, &task.kernel, &task.grid);
        let cached_log_likelihood = gaussian_log_likelihood(g, &background_image, task.noise_std);
        let mut walker = Self {
            task,
            g,
            state: ChainState { background, signal, cached_log_likelihood },
            background_image,
            signal_image,
            s_dot_s: 0.0,
            s_dot_g: 0.0,
        };
        walker.refresh_signal_dots();
        walker
    }

    fn refresh_signal_dots(&mut self) {
        let s = self.signal_image.image();
        self.s_dot_s = dot(s, s);
        self.s_dot_g = dot(s, self.g);
    }

    /// `log Λ_BKE` of the measurement given the current background and signal.
    fn log_bke_lr(&self) -> f64 {
        let s_dot_b = dot(self.signal_image.image(), &self.background_image);
        ((self.s_dot_g - s_dot_b) - 0.5 * self.s_dot_s)
            / (self.task.noise_std * self.task.noise_std)
    }

    fn add_lump(&mut self, center: [f64; 2], scale: f64) {
        add_lumps(
            &mut self.background_image,
            &[center],
            self.task.model,
            &self.task.kernel,
            &self.task.grid,
            scale,
        );
    }

    fn current_log_likelihood(&self) -> f64 {
        gaussian_log_likelihood(self.g, &self.background_image, self.task.noise_std)
    }

    fn verify_and_refresh_cache(&mut self) {
        let fresh = render_lumpy(&self.state.background, self.task.model, &self.task.kernel, &self.task.grid);
        let recomputed = gaussian_log_likelihood(self.g, &fresh, self.task.noise_std);
        let drift = (recomputed - self.state.cached_log_likelihood).abs();
        let tolerance = 1e-6 * (1.0 + recomputed.abs());
        assert!(
            drift <= tolerance,
            "cached log likelihood drifted {drift:.3e} beyond {tolerance:.3e}"
        );
        self.background_image = fresh;
        self.state.cached_log_likelihood = recomputed;
    }

    fn step<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        probs: &MoveProbabilities,
        step_std: f64,
    ) -> bool {
        let u: f64 = rng.gen();
        if u < probs.perturb_lump {
            self.perturb_lump(rng, step_std)
        } else if u < probs.perturb_lump + probs.birth {
            self.birth(rng, probs)
        } else if u < probs.perturb_lump + probs.birth + probs.death {
            self.death(rng, probs)
        } else {
            self.perturb_signal(rng, step_std)
        }
    }

    fn perturb_lump<R: Rng + ?Sized>(&mut self, rng: &mut R, step_std: f64) -> bool {
        let n = self.state.background.count();
        if n == 0 {
            return false;
        }
        let i = rng.gen_range(0..n);
        let old = self.state.background.centers[i];
        let proposed = match &self.task.model.placement {
            LumpPlacement::UniformFov => {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                [old[0] + step_std * z0, old[1] + step_std * z1]
            }
            // Grid-restricted models walk by re-drawing a node uniformly;
            // a continuous step would leave the prior support every time.
            LumpPlacement::FixedCountGrid { nodes, .. } => nodes[rng.gen_range(0..nodes.len())],
        };
        if !self.task.grid.contains(proposed) {
            return false;
        }
        let before = self.state.cached_log_likelihood;
        self.add_lump(old, -1.0);
        self.add_lump(proposed, 1.0);
        let after = self.current_log_likelihood();
        if accept(rng, after - before) {
            self.state.background.centers[i] = proposed;
            self.state.cached_log_likelihood = after;
            true
        } else {
            self.add_lump(proposed, -1.0);
            self.add_lump(old, 1.0);
            false
        }
    }

    fn birth<R: Rng + ?Sized>(&mut self, rng: &mut R, probs: &MoveProbabilities) -> bool {
        if !matches!(self.task.model.placement, LumpPlacement::UniformFov) {
            return false;
        }
        let n = self.state.background.count() as f64;
        let proposed = self.task.grid.sample_point(rng);
        let before = self.state.cached_log_likelihood;
        self.add_lump(proposed, 1.0);
        let after = self.current_log_likelihood();
        // Poisson prior ratio N̄/(n+1) and the birth/death proposal asymmetry.
        let ln_ratio = after - before
            + (self.task.model.mean_count / (n + 1.0)).ln()
            + (probs.death / probs.birth).ln();
        if accept(rng, ln_ratio) {
            self.state.background.centers.push(proposed);
            self.state.cached_log_likelihood = after;
            true
        } else {
            self.add_lump(proposed, -1.0);
            false
        }
    }

    fn death<R: Rng + ?Sized>(&mut self, rng: &mut R, probs: &MoveProbabilities) -> bool {
        if !matches!(self.task.model.placement, LumpPlacement::UniformFov) {
            return false;
        }
        let n = self.state.background.count();
        if n == 0 {
            return false;
        }
        let i = rng.gen_range(0..n);
        let removed = self.state.background.centers[i];
        let before = self.state.cached_log_likelihood;
        self.add_lump(removed, -1.0);
        let after = self.current_log_likelihood();
        let ln_ratio = after - before
            + (n as f64 / self.task.model.mean_count).ln()
            + (probs.birth / probs.death).ln();
        if accept(rng, ln_ratio) {
            self.state.background.centers.swap_remove(i);
            self.state.cached_log_likelihood = after;
            true
        } else {
            self.add_lump(removed, 1.0);
            false
        }
    }

    fn perturb_signal<R: Rng + ?Sized>(&mut self, rng: &mut R, step_std: f64) -> bool {
        let McmcSignal::Random(prior) = self.task.signal else {
            return false;
        };
        let Some(params) = self.state.signal.as_mut() else {
            return false;
        };
        // The signal never enters the signal-absent likelihood, so its
        // posterior is exactly the prior: symmetric in-support proposals are
        // always accepted, and the wrap/reflection maps keep them symmetric.
        match rng.gen_range(0..4u8) {
            0 => {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                let proposed =
                    [params.center[0] + step_std * z0, params.center[1] + step_std * z1];
                if !self.task.grid.contains(proposed) {
                    return false;
                }
                params.center = proposed;
            }
            1 => {
                let z: f64 = rng.sample(StandardNormal);
                params.angle = (params.angle + ANGLE_PROPOSAL_STD * z).rem_euclid(TAU);
            }
            axis => {
                let (lo, hi) = prior.width_range;
                let z: f64 = rng.sample(StandardNormal);
                let step = WIDTH_PROPOSAL_FRACTION * (hi - lo) * z;
                if axis == 2 {
                    params.w1 = reflect_into(params.w1 + step, lo, hi);
                } else {
                    params.w2 = reflect_into(params.w2 + step, lo, hi);
                }
            }
        }
        let image = render_sks_signal(
            self.state.signal.as_ref().expect("random-signal state"),
            &self.task.kernel,
            &self.task.grid,
        );
        self.signal_image = SignalImage::Rendered(image);
        self.refresh_signal_dots();
        true
    }
}
