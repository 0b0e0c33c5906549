//! Experiment harness: task specifications, configuration, dataset
//! persistence, and the end-to-end pipelines behind the CLI subcommands.
//!
//! A [`TaskSpec`] bundles everything that defines one binary detection task:
//! grid, imaging kernel, object model, signal model, noise model, and class
//! priors. Four standard configurations exist as builders, one per study
//! task, and a flat key-value [`Config`] can override any constant. All
//! randomness flows through named child streams of a single master seed, so
//! a (config, seed) pair determines every emitted byte.

pub mod config;
pub mod dataset;
pub mod pipeline;

pub use config::{fnv1a64, Config, ConfigError, KNOWN_KEYS};
pub use dataset::{
    read_template, write_template, Dataset, DatasetError, DatasetManifest, DATASET_MAGIC,
};
pub use pipeline::{
    evaluate, generate, mcmc_score, prepare_run, report, self_test, train_ho, train_io,
    ExperimentReport, ObserverMetrics, RunContext,
};

use rand::Rng;
use thiserror::Error;

use crate::evalkit::EvalError;
use crate::imaging::{apply_noise, mean_noise_covariance, ImagingError, NoiseModel};
use crate::mcmc::McmcError;
use crate::neural::NeuralError;
use crate::observers::ObserverError;
use crate::phantoms::{
    render_clb, render_gaussian_bump, render_lumpy, render_ske_signal, render_sks_signal,
    sample_clb, sample_lumpy, ClbConstants, GaussianKernel, LumpyModel, PixelGrid, SkeSignal,
    SksSignalPrior,
};
use crate::rng::child_rng;
use crate::trainers::TrainError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("missing artifact {path}; run `{produced_by}` first")]
    MissingArtifact { path: String, produced_by: &'static str },
}

impl HarnessError {
    fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    /// True for errors a corrected config fixes, as opposed to runtime
    /// failures; drives the CLI exit code.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Self::Config(_) | Self::InvalidTask(_))
    }
}

/// The four standard task configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// Known signal on a zero background under Laplacian noise.
    SkeBke,
    /// Known signal on a random lumpy background under Gaussian noise.
    SkeBksLumpy,
    /// Random signal on a random lumpy background under Gaussian noise.
    SksBksLumpy,
    /// Known signal on a clustered lumpy background under Poisson-Gaussian
    /// noise.
    SkeBksClb,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SkeBke => "ske_bke",
            Self::SkeBksLumpy => "ske_bks_lumpy",
            Self::SksBksLumpy => "sks_bks_lumpy",
            Self::SkeBksClb => "ske_bks_clb",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, HarnessError> {
        match name {
            "ske_bke" => Ok(Self::SkeBke),
            "ske_bks_lumpy" => Ok(Self::SkeBksLumpy),
            "sks_bks_lumpy" => Ok(Self::SksBksLumpy),
            "ske_bks_clb" => Ok(Self::SkeBksClb),
            other => Err(HarnessError::InvalidTask(format!(
                "unknown task.type `{other}`; expected ske_bke, ske_bks_lumpy, sks_bks_lumpy, \
                 or ske_bks_clb"
            ))),
        }
    }
}

/// Noiseless-background model of a task.
#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundModel {
    /// Background known exactly to be zero.
    Zero,
    /// Random lumpy background, imaged through the Gaussian kernel.
    Lumpy(LumpyModel),
    /// Random clustered lumpy background, rendered directly in pixel space.
    Clustered(ClbConstants),
}

/// Signal model of a task.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalModel {
    /// Known signal, imaged through the Gaussian kernel.
    Known(SkeSignal),
    /// Random signal drawn per image from this prior.
    Prior(SksSignalPrior),
    /// Known signal rendered directly in pixel space (no kernel), centered
    /// on the grid; used with the clustered lumpy background.
    DirectBump { amplitude: f64, width: f64 },
}

/// Full description of one binary signal-detection task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub grid: PixelGrid,
    pub kernel: GaussianKernel,
    pub background: BackgroundModel,
    pub signal: SignalModel,
    pub noise: NoiseModel,
    /// Prior probability of the signal-present hypothesis; the
    /// signal-absent prior is its complement, so the pair always sums to 1.
    pub prior_h1: f64,
}

/// Default imaging kernel shared by the kernel-based tasks.
const DEFAULT_KERNEL: (f64, f64) = (40.0, 0.5);
/// Desk-scale clustered-lumpy signal: amplitude and width of the directly
/// rendered bump. The width is half the full-scale value, matching the
/// halved grid side; the amplitude keeps the Hotelling performance in the
/// same regime as the full-scale task.
const DESK_CLB_SIGNAL: (f64, f64) = (500.0, 6.0);

impl TaskSpec {
    /// Known signal on `b = 0` with Laplacian noise of standard deviation 30
    /// (decay `30/sqrt(2)`), on a 64x64 grid.
    pub fn ske_bke() -> Self {
        let grid = PixelGrid::square(64);
        Self {
            kind: TaskKind::SkeBke,
            grid,
            kernel: GaussianKernel::new(DEFAULT_KERNEL.0, DEFAULT_KERNEL.1),
            background: BackgroundModel::Zero,
            signal: SignalModel::Known(SkeSignal {
                amplitude: 0.2,
                center: grid.center(),
                width: 3.0,
            }),
            noise: NoiseModel::Laplacian { decay: 30.0 / 2.0f64.sqrt() },
            prior_h1: 0.5,
        }
    }

    /// Known signal on a lumpy background (mean 5 lumps, amplitude 1,
    /// width 7) with Gaussian noise of standard deviation 20.
    pub fn ske_bks_lumpy() -> Self {
        let grid = PixelGrid::square(64);
        Self {
            kind: TaskKind::SkeBksLumpy,
            grid,
            kernel: GaussianKernel::new(DEFAULT_KERNEL.0, DEFAULT_KERNEL.1),
            background: BackgroundModel::Lumpy(LumpyModel::new(5.0, 1.0, 7.0)),
            signal: SignalModel::Known(SkeSignal {
                amplitude: 0.2,
                center: grid.center(),
                width: 3.0,
            }),
            noise: NoiseModel::Gaussian { std: 20.0 },
            prior_h1: 0.5,
        }
    }

    /// Random signal (uniform location, angle, and half-widths in [2, 4])
    /// on the same lumpy background, with Gaussian noise of standard
    /// deviation 10.
    pub fn sks_bks_lumpy() -> Self {
        let grid = PixelGrid::square(64);
        Self {
            kind: TaskKind::SksBksLumpy,
            grid,
            kernel: GaussianKernel::new(DEFAULT_KERNEL.0, DEFAULT_KERNEL.1),
            background: BackgroundModel::Lumpy(LumpyModel::new(5.0, 1.0, 7.0)),
            signal: SignalModel::Prior(SksSignalPrior {
                amplitude: 0.2,
                width_range: (2.0, 4.0),
            }),
            noise: NoiseModel::Gaussian { std: 10.0 },
            prior_h1: 0.5,
        }
    }

    /// Desk-scale clustered lumpy task on a 64x64 grid: cluster density and
    /// blob scatter scale with the grid (mean clusters 37.5 = 150/4 for a
    /// quarter of the full-scale area, scatter 6 = 12/2 for half the side),
    /// blob shape constants keep their full-scale values, and the signal is
    /// a directly rendered centered bump. Poisson-Gaussian noise with
    /// Gaussian standard deviation 10.
    pub fn ske_bks_clb() -> Self {
        Self::clb_task(64, 37.5, 6.0, DESK_CLB_SIGNAL)
    }

    /// Full-scale clustered lumpy task: 128x128 grid, mean clusters 150,
    /// scatter 12, signal amplitude 500 and width 12.
    pub fn ske_bks_clb_full() -> Self {
        Self::clb_task(128, 150.0, 12.0, (500.0, 12.0))
    }

    fn clb_task(side: usize, mean_clusters: f64, sigma: f64, signal: (f64, f64)) -> Self {
        Self {
            kind: TaskKind::SkeBksClb,
            grid: PixelGrid::square(side),
            kernel: GaussianKernel::new(DEFAULT_KERNEL.0, DEFAULT_KERNEL.1),
            background: BackgroundModel::Clustered(ClbConstants {
                mean_clusters,
                mean_blobs: 20.0,
                lx: 5.0,
                ly: 2.0,
                alpha: 2.1,
                beta: 0.5,
                sigma,
                amplitude: 100.0,
            }),
            signal: SignalModel::DirectBump { amplitude: signal.0, width: signal.1 },
            noise: NoiseModel::PoissonGaussian { gaussian_std: 10.0 },
            prior_h1: 0.5,
        }
    }

    /// The 8x8 enumerable validation task: exactly one lump confined to a
    /// 4-per-axis lattice, so the likelihood ratio is computable in closed
    /// form and Markov-chain estimates can be checked against it.
    pub fn enumerable_lumpy() -> Self {
        let grid = PixelGrid::square(8);
        let model = LumpyModel::new(1.0, 0.4, 1.2).with_fixed_count_grid(1, lattice_nodes(&grid, 4));
        Self {
            kind: TaskKind::SkeBksLumpy,
            grid,
            kernel: GaussianKernel::new(10.0, 0.5),
            background: BackgroundModel::Lumpy(model),
            signal: SignalModel::Known(SkeSignal {
                amplitude: 0.45,
                center: grid.center(),
                width: 1.5,
            }),
            noise: NoiseModel::Gaussian { std: 4.0 },
            prior_h1: 0.5,
        }
    }

    /// Builds a task from a parsed config: `task.type` picks the standard
    /// configuration, and any present key overrides that constant.
    pub fn from_config(cfg: &Config) -> Result<Self, HarnessError> {
        let kind = TaskKind::from_name(cfg.require("task.type")?)?;
        let base = match kind {
            TaskKind::SkeBke => Self::ske_bke(),
            TaskKind::SkeBksLumpy => Self::ske_bks_lumpy(),
            TaskKind::SksBksLumpy => Self::sks_bks_lumpy(),
            TaskKind::SkeBksClb => Self::ske_bks_clb(),
        };

        let width = cfg.get_usize("grid.width")?.unwrap_or(base.grid.width());
        let height = cfg.get_usize("grid.height")?.unwrap_or(width);
        if width == 0 || height == 0 {
            return Err(HarnessError::InvalidTask("grid dimensions must be positive".into()));
        }
        let grid = PixelGrid::new(width, height);
        let kernel = GaussianKernel::new(
            cfg.get_f64("kernel.height")?.unwrap_or(base.kernel.height),
            cfg.get_f64("kernel.width")?.unwrap_or(base.kernel.width),
        );

        let signal = match base.signal {
            SignalModel::Known(s) => SignalModel::Known(SkeSignal {
                amplitude: cfg.get_f64("signal.amplitude")?.unwrap_or(s.amplitude),
                center: [
                    cfg.get_f64("signal.center_x")?.unwrap_or(grid.center()[0]),
                    cfg.get_f64("signal.center_y")?.unwrap_or(grid.center()[1]),
                ],
                width: cfg.get_f64("signal.width")?.unwrap_or(s.width),
            }),
            SignalModel::Prior(p) => SignalModel::Prior(SksSignalPrior {
                amplitude: cfg.get_f64("signal.amplitude")?.unwrap_or(p.amplitude),
                width_range: (
                    cfg.get_f64("signal.width_min")?.unwrap_or(p.width_range.0),
                    cfg.get_f64("signal.width_max")?.unwrap_or(p.width_range.1),
                ),
            }),
            SignalModel::DirectBump { amplitude, width } => SignalModel::DirectBump {
                amplitude: cfg.get_f64("signal.amplitude")?.unwrap_or(amplitude),
                width: cfg.get_f64("signal.width")?.unwrap_or(width),
            },
        };

        let background = match base.background {
            BackgroundModel::Zero => BackgroundModel::Zero,
            BackgroundModel::Lumpy(m) => {
                let mut model = LumpyModel::new(
                    cfg.get_f64("lumpy.mean_count")?.unwrap_or(m.mean_count),
                    cfg.get_f64("lumpy.amplitude")?.unwrap_or(m.amplitude),
                    cfg.get_f64("lumpy.width")?.unwrap_or(m.width),
                );
                if let Some(nodes) = cfg.get_usize("lumpy.grid_nodes")? {
                    if nodes == 0 {
                        return Err(HarnessError::InvalidTask(
                            "lumpy.grid_nodes must be at least 1".into(),
                        ));
                    }
                    let count = cfg.get_usize("lumpy.fixed_count")?.unwrap_or(1);
                    model = model.with_fixed_count_grid(count, lattice_nodes(&grid, nodes));
                }
                BackgroundModel::Lumpy(model)
            }
            BackgroundModel::Clustered(c) => BackgroundModel::Clustered(ClbConstants {
                mean_clusters: cfg.get_f64("clb.mean_clusters")?.unwrap_or(c.mean_clusters),
                mean_blobs: cfg.get_f64("clb.mean_blobs_per_cluster")?.unwrap_or(c.mean_blobs),
                lx: cfg.get_f64("clb.length_x")?.unwrap_or(c.lx),
                ly: cfg.get_f64("clb.length_y")?.unwrap_or(c.ly),
                alpha: cfg.get_f64("clb.alpha")?.unwrap_or(c.alpha),
                beta: cfg.get_f64("clb.beta")?.unwrap_or(c.beta),
                sigma: cfg.get_f64("clb.cluster_std")?.unwrap_or(c.sigma),
                amplitude: cfg.get_f64("clb.amplitude")?.unwrap_or(c.amplitude),
            }),
        };

        let noise = match (cfg.get("noise.model"), cfg.get_f64("noise.param")?) {
            (None, None) => base.noise,
            (model, param) => {
                let default_param = match base.noise {
                    NoiseModel::Laplacian { decay } => decay,
                    NoiseModel::Gaussian { std } => std,
                    NoiseModel::PoissonGaussian { gaussian_std } => gaussian_std,
                };
                let p = param.unwrap_or(default_param);
                match model.unwrap_or(match base.noise {
                    NoiseModel::Laplacian { .. } => "laplacian",
                    NoiseModel::Gaussian { .. } => "gaussian",
                    NoiseModel::PoissonGaussian { .. } => "poisson_gaussian",
                }) {
                    "laplacian" => NoiseModel::Laplacian { decay: p },
                    "gaussian" => NoiseModel::Gaussian { std: p },
                    "poisson_gaussian" => NoiseModel::PoissonGaussian { gaussian_std: p },
                    other => {
                        return Err(HarnessError::InvalidTask(format!(
                            "unknown noise.model `{other}`"
                        )))
                    }
                }
            }
        };

        let task = Self {
            kind,
            grid,
            kernel,
            background,
            signal,
            noise,
            prior_h1: cfg.get_f64("priors.h1")?.unwrap_or(base.prior_h1),
        };
        task.validate()?;
        Ok(task)
    }

    /// Checks the class priors and that the component combination matches
    /// the task kind's standard structure.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.prior_h1 > 0.0 && self.prior_h1 < 1.0) {
            return Err(HarnessError::InvalidTask(format!(
                "priors.h1 must lie strictly between 0 and 1, got {}",
                self.prior_h1
            )));
        }
        let consistent = match self.kind {
            TaskKind::SkeBke => {
                matches!(self.background, BackgroundModel::Zero)
                    && matches!(self.signal, SignalModel::Known(_))
            }
            TaskKind::SkeBksLumpy => {
                matches!(self.background, BackgroundModel::Lumpy(_))
                    && matches!(self.signal, SignalModel::Known(_))
            }
            TaskKind::SksBksLumpy => {
                matches!(self.background, BackgroundModel::Lumpy(_))
                    && matches!(self.signal, SignalModel::Prior(_))
            }
            TaskKind::SkeBksClb => {
                matches!(self.background, BackgroundModel::Clustered(_))
                    && matches!(self.signal, SignalModel::DirectBump { .. })
            }
        };
        if !consistent {
            return Err(HarnessError::InvalidTask(format!(
                "background/signal models do not match task type {}",
                self.kind.name()
            )));
        }
        if let SignalModel::Prior(p) = &self.signal {
            if !(p.width_range.0 > 0.0 && p.width_range.1 >= p.width_range.0) {
                return Err(HarnessError::InvalidTask(
                    "signal width range must be positive and ordered".into(),
                ));
            }
        }
        Ok(())
    }

    /// Pixel count `M`.
    pub fn pixel_count(&self) -> usize {
        self.grid.len()
    }

    /// The rendered signal image for signal-known-exactly tasks; `None`
    /// when the signal is random.
    pub fn known_signal(&self) -> Option<Vec<f64>> {
        match &self.signal {
            SignalModel::Known(s) => Some(render_ske_signal(s, &self.kernel, &self.grid)),
            SignalModel::Prior(_) => None,
            SignalModel::DirectBump { amplitude, width } => Some(render_gaussian_bump(
                &self.grid,
                *amplitude,
                self.grid.center(),
                *width,
            )),
        }
    }

    /// Draws one noiseless background.
    pub fn sample_background<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.background {
            BackgroundModel::Zero => vec![0.0; self.grid.len()],
            BackgroundModel::Lumpy(model) => {
                let params = sample_lumpy(rng, model, &self.grid);
                render_lumpy(&params, model, &self.kernel, &self.grid)
            }
            BackgroundModel::Clustered(constants) => {
                let params = sample_clb(rng, constants, &self.grid);
                render_clb(&params, &self.grid)
            }
        }
    }

    /// Draws one signal image: the fixed render for known signals, a fresh
    /// draw from the prior otherwise.
    pub fn sample_signal<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.signal {
            SignalModel::Prior(prior) => {
                let params = prior.sample(rng, &self.grid);
                render_sks_signal(&params, &self.kernel, &self.grid)
            }
            _ => self.known_signal().expect("known-signal task renders a signal"),
        }
    }

    /// Draws one noisy measurement under the given hypothesis.
    pub fn sample_measurement<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        signal_present: bool,
    ) -> Result<Vec<f64>, HarnessError> {
        let mut clean = self.sample_background(rng);
        if signal_present {
            let signal = self.sample_signal(rng);
            for (c, s) in clean.iter_mut().zip(&signal) {
                *c += s;
            }
        }
        Ok(apply_noise(rng, &self.noise, &clean)?)
    }

    /// The known diagonal measurement-noise covariance, given the mean
    /// background and mean signal (only the Poisson-Gaussian model uses
    /// them).
    pub fn noise_covariance(
        &self,
        mean_background: &[f64],
        mean_signal: &[f64],
    ) -> Result<crate::imaging::DiagCovariance, HarnessError> {
        Ok(mean_noise_covariance(&self.noise, mean_background, mean_signal)?)
    }

    /// The lumpy model, when the background is lumpy.
    pub fn lumpy_model(&self) -> Option<&LumpyModel> {
        match &self.background {
            BackgroundModel::Lumpy(m) => Some(m),
            _ => None,
        }
    }

    /// The Gaussian noise standard deviation, when the noise is Gaussian
    /// (the only model the Markov-chain sampler supports).
    pub fn gaussian_noise_std(&self) -> Option<f64> {
        match self.noise {
            NoiseModel::Gaussian { std } => Some(std),
            _ => None,
        }
    }
}

/// Midpoint lattice of `per_axis`^2 nodes over the field of view; the node
/// set of the enumerable lumpy variant.
pub fn lattice_nodes(grid: &PixelGrid, per_axis: usize) -> Vec<[f64; 2]> {
    let mut nodes = Vec::with_capacity(per_axis * per_axis);
    let dx = grid.width() as f64 / per_axis as f64;
    let dy = grid.height() as f64 / per_axis as f64;
    for j in 0..per_axis {
        for i in 0..per_axis {
            nodes.push([(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy]);
        }
    }
    nodes
}

/// Tracks which (tag, index) child streams a run has consumed and panics on
/// reuse: train, validation, and test generation must never share a stream.
#[derive(Debug, Default)]
pub struct StreamLedger {
    used: std::collections::HashSet<(String, u64)>,
}

impl StreamLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Derives the child stream for (tag, index) after recording it.
    pub fn claim(&mut self, master: u64, tag: &str, index: u64) -> rand_chacha::ChaCha12Rng {
        assert!(
            self.used.insert((tag.to_string(), index)),
            "stream ({tag}, {index}) claimed twice"
        );
        child_rng(master, tag, index)
    }
}

/// Generates a balanced labeled measurement set: `per_class` signal-absent
/// images (label 0) followed by `per_class` signal-present images (label 1).
/// Image `i` of the file draws everything — object, signal parameters,
/// noise — from the child stream `(tag, i)`.
pub fn generate_measurement_set(
    task: &TaskSpec,
    per_class: usize,
    seed: u64,
    tag: &str,
    ledger: &mut StreamLedger,
) -> Result<Dataset, HarnessError> {
    let mut set = Dataset::empty(task.grid.width() as u32, task.grid.height() as u32);
    for i in 0..2 * per_class {
        let label = u8::from(i >= per_class);
        let mut rng = ledger.claim(seed, tag, i as u64);
        let g = task.sample_measurement(&mut rng, label == 1)?;
        set.push(label, &g)?;
    }
    Ok(set)
}

/// Generates a pool of noiseless objects: backgrounds under label 0, or
/// signal images under label 1 when `signals` is set (only meaningful for
/// random-signal tasks).
pub fn generate_object_pool(
    task: &TaskSpec,
    count: usize,
    seed: u64,
    tag: &str,
    signals: bool,
    ledger: &mut StreamLedger,
) -> Result<Dataset, HarnessError> {
    let mut set = Dataset::empty(task.grid.width() as u32, task.grid.height() as u32);
    for i in 0..count {
        let mut rng = ledger.claim(seed, tag, i as u64);
        let (label, image) = if signals {
            (1, task.sample_signal(&mut rng))
        } else {
            (0, task.sample_background(&mut rng))
        };
        set.push(label, &image)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builders_produce_valid_consistent_tasks() {
        for task in [
            TaskSpec::ske_bke(),
            TaskSpec::ske_bks_lumpy(),
            TaskSpec::sks_bks_lumpy(),
            TaskSpec::ske_bks_clb(),
            TaskSpec::ske_bks_clb_full(),
            TaskSpec::enumerable_lumpy(),
        ] {
            task.validate().unwrap();
            assert!((task.prior_h1 + (1.0 - task.prior_h1) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_components_fail_validation() {
        let mut task = TaskSpec::ske_bke();
        task.background = BackgroundModel::Lumpy(LumpyModel::new(5.0, 1.0, 7.0));
        assert!(matches!(task.validate(), Err(HarnessError::InvalidTask(_))));

        let mut task = TaskSpec::ske_bke();
        task.prior_h1 = 1.0;
        assert!(task.validate().is_err());
    }

    #[test]
    fn config_overrides_replace_defaults_and_recenter_the_signal() {
        let cfg = Config::parse(
            "task.type = ske_bke\n\
             grid.width = 16\n\
             signal.amplitude = 0.5\n\
             noise.param = 7.0\n",
        )
        .unwrap();
        let task = TaskSpec::from_config(&cfg).unwrap();
        assert_eq!(task.grid.width(), 16);
        let SignalModel::Known(s) = &task.signal else { panic!("known signal") };
        assert_eq!(s.amplitude, 0.5);
        assert_eq!(s.center, [8.0, 8.0]);
        assert_eq!(task.noise, NoiseModel::Laplacian { decay: 7.0 });

        let default = TaskSpec::from_config(
            &Config::parse("task.type = sks_bks_lumpy\n").unwrap(),
        )
        .unwrap();
        assert_eq!(default, TaskSpec::sks_bks_lumpy());
    }

    #[test]
    fn enumerable_variant_comes_from_grid_keys() {
        let cfg = Config::parse(
            "task.type = ske_bks_lumpy\n\
             grid.width = 8\n\
             lumpy.grid_nodes = 4\n\
             lumpy.fixed_count = 1\n\
             lumpy.amplitude = 0.4\n\
             lumpy.width = 1.2\n\
             lumpy.mean_count = 1.0\n\
             kernel.height = 10\n\
             signal.amplitude = 0.45\n\
             signal.width = 1.5\n\
             noise.param = 4.0\n",
        )
        .unwrap();
        let task = TaskSpec::from_config(&cfg).unwrap();
        assert_eq!(task, TaskSpec::enumerable_lumpy());
    }

    #[test]
    fn unknown_task_and_noise_names_are_rejected() {
        let cfg = Config::parse("task.type = ske_bqe\n").unwrap();
        assert!(matches!(
            TaskSpec::from_config(&cfg),
            Err(HarnessError::InvalidTask(_))
        ));
        let cfg =
            Config::parse("task.type = ske_bke\nnoise.model = cauchy\n").unwrap();
        assert!(TaskSpec::from_config(&cfg).is_err());
    }

    #[test]
    fn lattice_nodes_cover_cell_midpoints() {
        let nodes = lattice_nodes(&PixelGrid::square(8), 4);
        assert_eq!(nodes.len(), 16);
        assert_eq!(nodes[0], [1.0, 1.0]);
        assert_eq!(nodes[5], [3.0, 3.0]);
        assert_eq!(nodes[15], [7.0, 7.0]);
    }

    #[test]
    fn ske_bke_h0_measurements_are_pure_noise_about_zero() {
        let task = TaskSpec::ske_bke();
        let mut ledger = StreamLedger::new();
        let set = generate_measurement_set(&task, 3, 5, "gen-test", &mut ledger).unwrap();
        assert_eq!(set.count(), 6);
        // The H0 background is exactly zero, so measurement = noise; the
        // Laplacian sample mean over a few images sits near zero at scale
        // 30 / sqrt(3 * 4096).
        let m = set.pixels_per_image();
        let mean: f64 = (0..3).map(|i| set.image_f64(i).iter().sum::<f64>()).sum::<f64>()
            / (3 * m) as f64;
        assert!(mean.abs() < 1.5, "H0 mean {mean} too far from zero");
        // The H1 class carries the known signal on average.
        let signal = task.known_signal().unwrap();
        let peak = signal.iter().cloned().fold(f64::MIN, f64::max);
        assert!(peak > 7.0 && peak < 8.0);
    }

    #[test]
    fn generation_is_deterministic_per_stream_and_ledger_blocks_reuse() {
        let task = TaskSpec::ske_bks_lumpy();
        let mut ledger = StreamLedger::new();
        let a = generate_measurement_set(&task, 2, 9, "gen-val", &mut ledger).unwrap();
        let b = generate_measurement_set(&task, 2, 9, "gen-test", &mut ledger).unwrap();
        assert_ne!(a, b, "distinct tags must give distinct draws");

        let mut fresh = StreamLedger::new();
        let a2 = generate_measurement_set(&task, 2, 9, "gen-val", &mut fresh).unwrap();
        assert_eq!(a, a2, "same (seed, tag) must reproduce bit-exactly");

        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            ledger.claim(9, "gen-val", 0);
        }));
        assert!(result.is_err(), "re-claiming a stream must panic");
    }

    #[test]
    fn object_pools_carry_the_expected_labels() {
        let task = TaskSpec::sks_bks_lumpy();
        let mut ledger = StreamLedger::new();
        let bgs =
            generate_object_pool(&task, 4, 3, "objects-bg", false, &mut ledger).unwrap();
        assert!(bgs.labels().iter().all(|&l| l == 0));
        let sigs =
            generate_object_pool(&task, 4, 3, "objects-sig", true, &mut ledger).unwrap();
        assert!(sigs.labels().iter().all(|&l| l == 1));
        // Signal images are nonnegative and nonzero for this prior.
        assert!(sigs.image_f64(0).iter().any(|&p| p > 0.0));
    }
}
