//! End-to-end pipelines behind the CLI subcommands.
//!
//! Every pipeline works inside one run directory named by the config digest,
//! reads its inputs from files earlier pipelines wrote there, and emits
//! deterministic artifacts: datasets, templates, network checkpoints, score
//! and ROC CSVs, and a JSON evaluation report. Rerunning a pipeline with the
//! same config and seed reproduces every numeric artifact bit-exactly; only
//! the report's wall-clock field varies.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::{read_template, write_template, Dataset, DatasetManifest};
use super::{
    generate_measurement_set, generate_object_pool, BackgroundModel, Config, HarnessError,
    SignalModel, StreamLedger, TaskKind, TaskSpec,
};
use crate::evalkit::{auc, efficiency, empirical_roc, posterior_mse, snr_t, ScoreSet};
use crate::imaging::NoiseModel;
use crate::mcmc::{
    exact_lumpy_log_lr, mcmc_log_lr, write_trace_csv, ChainConfig, McmcSignal, McmcTask,
    MoveProbabilities, QuadratureSpec, FULL_CHAIN_KNOWN_SIGNAL, FULL_CHAIN_RANDOM_SIGNAL,
};
use crate::neural::{AdamConfig, ArchSpec, CnnModel, CnnWorkspace};
use crate::observers::{
    analytic_laplacian_ho_template, laplacian_io_log_lr, posterior_from_log_lr,
    solve_ho_template_cg, woodbury_ho_template, CgConfig, CovarianceOracle, Template,
};
use crate::phantoms::LumpPlacement;
use crate::rng::{child_rng, child_seed};
use crate::trainers::{
    architecture_ladder, train_slnn_covdecomp, train_slnn_labeled, LabeledImages, LrSchedule,
    SignalSpec, TrainConfig,
};
use rand::Rng;

/// One resolved run: parsed config, derived task, seed, and the run
/// directory every artifact lands in.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: Config,
    pub task: TaskSpec,
    pub dir: PathBuf,
    pub seed: u64,
    /// Requested worker count. Accepted for interface stability; the
    /// pipelines run single-threaded, which keeps bit-exact determinism
    /// trivial.
    pub threads: usize,
}

/// Parses the config, applies a seed override, and creates the run
/// directory `out_dir/run-<digest>`, writing the resolved config there.
pub fn prepare_run(
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    threads: usize,
) -> Result<RunContext, HarnessError> {
    let mut config = Config::from_path(config_path)?;
    if let Some(seed) = seed_override {
        config.set("rng.seed", seed.to_string())?;
    }
    let task = TaskSpec::from_config(&config)?;
    let seed = config.get_u64("rng.seed")?.unwrap_or(0);
    let dir = out_dir.join(format!("run-{}", config.digest_hex()));
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let resolved = dir.join("config.txt");
    fs::write(&resolved, config.canonical_text()).map_err(|e| HarnessError::io(&resolved, e))?;
    Ok(RunContext { config, task, dir, seed, threads })
}

impl RunContext {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn load_dataset(&self, name: &str, produced_by: &'static str) -> Result<Dataset, HarnessError> {
        let path = self.path(name);
        if !path.exists() {
            return Err(HarnessError::MissingArtifact {
                path: path.display().to_string(),
                produced_by,
            });
        }
        Ok(Dataset::read(&path)?)
    }

    fn usize_key(&self, key: &str, default: usize) -> Result<usize, HarnessError> {
        Ok(self.config.get_usize(key)?.unwrap_or(default))
    }

    fn train_config(&self, purpose: &str) -> Result<TrainConfig, HarnessError> {
        let schedule = match self.config.get("train.schedule").unwrap_or("constant") {
            "constant" => LrSchedule::Constant,
            "inverse_sqrt" => LrSchedule::InverseSqrt,
            "inverse_time" => {
                LrSchedule::InverseTime { hold: self.usize_key("train.hold", 30)? }
            }
            other => {
                return Err(HarnessError::InvalidTask(format!(
                    "unknown train.schedule `{other}`"
                )))
            }
        };
        Ok(TrainConfig {
            batch_per_class: self.usize_key("train.batch_per_class", 100)?,
            max_batches: self.usize_key("train.max_batches", 1000)?,
            validation_every: self.usize_key("train.validation_every", 50)?,
            adam: AdamConfig::with_lr(self.config.get_f64("train.lr")?.unwrap_or(1e-3)),
            schedule,
            seed: child_seed(self.seed, purpose, 0),
        })
    }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

/// Default stored objects per pool for background-known-statistically tasks.
pub const DEFAULT_OBJECTS: usize = 10_000;
/// Default noisy training measurements per class.
pub const DEFAULT_TRAIN_PER_CLASS: usize = 1_000;
/// Default validation and test measurements per class.
pub const DEFAULT_EVAL_PER_CLASS: usize = 200;

/// Writes the run's datasets: noisy train/validation/test measurement sets
/// and, for random-background tasks, the noiseless object pools the
/// semi-online trainers draw from. Every file gets a metadata sidecar.
pub fn generate(ctx: &RunContext) -> Result<(), HarnessError> {
    let train_pc = ctx.usize_key("data.train_per_class", DEFAULT_TRAIN_PER_CLASS)?;
    let val_pc = ctx.usize_key("data.validation_per_class", DEFAULT_EVAL_PER_CLASS)?;
    let test_pc = ctx.usize_key("data.test_per_class", DEFAULT_EVAL_PER_CLASS)?;
    let objects = ctx.usize_key("data.objects", DEFAULT_OBJECTS)?;
    let mut ledger = StreamLedger::new();

    let write = |name: &str, tag: &str, set: &Dataset| -> Result<(), HarnessError> {
        let path = ctx.path(name);
        set.write(&path)?;
        DatasetManifest {
            seed: ctx.seed,
            config_digest: ctx.config.digest_hex(),
            stream_tag: tag.to_string(),
            count: set.count(),
        }
        .write_for(&path)?;
        Ok(())
    };

    for (name, tag, per_class) in [
        ("train.bin", "gen-train", train_pc),
        ("validation.bin", "gen-validation", val_pc),
        ("test.bin", "gen-test", test_pc),
    ] {
        let set = generate_measurement_set(&ctx.task, per_class, ctx.seed, tag, &mut ledger)?;
        write(name, tag, &set)?;
    }

    if !matches!(ctx.task.background, BackgroundModel::Zero) {
        let pool =
            generate_object_pool(&ctx.task, objects, ctx.seed, "objects-bg", false, &mut ledger)?;
        write("objects.bin", "objects-bg", &pool)?;
    }
    if matches!(ctx.task.signal, SignalModel::Prior(_)) {
        let pool =
            generate_object_pool(&ctx.task, objects, ctx.seed, "objects-sig", true, &mut ledger)?;
        write("signal_objects.bin", "objects-sig", &pool)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train-ho
// ---------------------------------------------------------------------------

/// Summary JSON of a linear-template run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoSummary {
    pub route: String,
    /// `w^T mean-difference` of the stored template.
    pub snr_ho_squared: f64,
    /// Early-stop iteration for the trained routes, solver iterations for
    /// conjugate gradients, 0 for the direct solve.
    pub iterations: usize,
}

/// Trains or solves a Hotelling template by the route in `train.loss`
/// (labeled, covdecomp, cg, or woodbury) and writes
/// `template_<route>.bin`, a training-log CSV for the trained routes, and
/// `train_ho_<route>.json`.
pub fn train_ho(ctx: &RunContext) -> Result<(), HarnessError> {
    let route = ctx.config.get("train.loss").unwrap_or("covdecomp").to_string();
    let validation = ctx.load_dataset("validation.bin", "generate")?.to_labeled_images()?;
    let cfg = ctx.train_config("train-ho")?;

    let (template, iterations, log) = match route.as_str() {
        "labeled" => {
            let train = ctx.load_dataset("train.bin", "generate")?.to_labeled_images()?;
            let result = train_slnn_labeled(&train, &cfg, &validation)?;
            (result.template, result.record.best_iteration, Some(result.log))
        }
        "covdecomp" => {
            let (backgrounds, signal_pool) = object_pools(ctx)?;
            let noise = noise_covariance_for(ctx, &backgrounds, &signal_pool)?;
            let known = ctx.task.known_signal();
            let signal = match &known {
                Some(s) => SignalSpec::Fixed(s),
                None => SignalSpec::Samples(&signal_pool),
            };
            let result = train_slnn_covdecomp(&backgrounds, signal, &noise, &cfg, &validation)?;
            (result.template, result.record.best_iteration, Some(result.log))
        }
        "cg" => {
            let oracle = covariance_oracle(ctx)?;
            let solution = solve_ho_template_cg(&oracle, &CgConfig::default())?;
            (solution.template, solution.iterations, None)
        }
        "woodbury" => {
            let (rows, noise, mean_diff) = woodbury_inputs(ctx)?;
            (woodbury_ho_template(&rows, &noise, &mean_diff)?, 0, None)
        }
        other => {
            return Err(HarnessError::InvalidTask(format!(
                "unknown train.loss `{other}`; expected labeled, covdecomp, cg, or woodbury"
            )))
        }
    };

    let mean_diff = mean_difference(ctx)?;
    let snr = crate::observers::snr_ho_squared(&template, &mean_diff)?;
    write_template(
        &ctx.path(&format!("template_{route}.bin")),
        &template,
        ctx.task.grid.width() as u32,
        ctx.task.grid.height() as u32,
    )?;
    if let Some(log) = log {
        let path = ctx.path(&format!("train_ho_{route}_log.csv"));
        let mut out = Vec::new();
        log.write_csv(&mut out).expect("write to memory");
        fs::write(&path, out).map_err(|e| HarnessError::io(&path, e))?;
    }
    let summary = HoSummary { route: route.clone(), snr_ho_squared: snr, iterations };
    write_json(&ctx.path(&format!("train_ho_{route}.json")), &summary)?;
    Ok(())
}

/// Background pool and (for random signals) signal pool as f64 images.
fn object_pools(ctx: &RunContext) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), HarnessError> {
    let backgrounds = match ctx.task.background {
        BackgroundModel::Zero => Vec::new(),
        _ => ctx.load_dataset("objects.bin", "generate")?.class_images(0),
    };
    let signals = match ctx.task.signal {
        SignalModel::Prior(_) => {
            ctx.load_dataset("signal_objects.bin", "generate")?.class_images(1)
        }
        _ => Vec::new(),
    };
    Ok((backgrounds, signals))
}

fn noise_covariance_for(
    ctx: &RunContext,
    backgrounds: &[Vec<f64>],
    signal_pool: &[Vec<f64>],
) -> Result<crate::imaging::DiagCovariance, HarnessError> {
    let m = ctx.task.pixel_count();
    let mean_background = mean_image(backgrounds, m);
    let mean_signal = match ctx.task.signal {
        SignalModel::Prior(_) => mean_image(signal_pool, m),
        _ => ctx.task.known_signal().expect("known signal"),
    };
    ctx.task.noise_covariance(&mean_background, &mean_signal)
}

/// Mean-difference vector of the task: the known signal, or the sample mean
/// of the stored signal pool for random signals.
fn mean_difference(ctx: &RunContext) -> Result<Vec<f64>, HarnessError> {
    match ctx.task.signal {
        SignalModel::Prior(_) => {
            let pool = ctx.load_dataset("signal_objects.bin", "generate")?.class_images(1);
            Ok(mean_image(&pool, ctx.task.pixel_count()))
        }
        _ => Ok(ctx.task.known_signal().expect("known signal")),
    }
}

fn mean_image(samples: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut mean = vec![0.0; m];
    if samples.is_empty() {
        return mean;
    }
    for s in samples {
        for (acc, &v) in mean.iter_mut().zip(s) {
            *acc += v;
        }
    }
    let inv = 1.0 / samples.len() as f64;
    mean.iter_mut().for_each(|v| *v *= inv);
    mean
}

/// Covariance oracle over the stored pools, with the known diagonal noise.
fn covariance_oracle(ctx: &RunContext) -> Result<CovarianceOracle, HarnessError> {
    let (backgrounds, signal_pool) = object_pools(ctx)?;
    let noise = noise_covariance_for(ctx, &backgrounds, &signal_pool)?;
    Ok(match ctx.task.signal {
        SignalModel::Prior(_) => CovarianceOracle::for_sks(noise, &backgrounds, &signal_pool)?,
        _ => {
            let signal = ctx.task.known_signal().expect("known signal");
            CovarianceOracle::for_ske(noise, &backgrounds, &signal)?
        }
    })
}

/// Centered sample rows scaled so a single `(1/N) U U^T` term reproduces
/// `K_backgrounds + K_signals / 2`, plus the noise and right-hand side —
/// the inputs of the direct (matrix-inversion-lemma) solve.
fn woodbury_inputs(
    ctx: &RunContext,
) -> Result<(Vec<Vec<f64>>, crate::imaging::DiagCovariance, Vec<f64>), HarnessError> {
    let (backgrounds, signal_pool) = object_pools(ctx)?;
    let noise = noise_covariance_for(ctx, &backgrounds, &signal_pool)?;
    let mean_diff = mean_difference(ctx)?;
    let n_b = backgrounds.len();
    let n_s = signal_pool.len();
    let n_total = n_b + n_s;
    let mut rows = Vec::with_capacity(n_total);
    let (_, bg_devs) = crate::observers::centered_deviations(&backgrounds);
    for mut d in bg_devs {
        let scale = (n_total as f64 / n_b as f64).sqrt();
        d.iter_mut().for_each(|v| *v *= scale);
        rows.push(d);
    }
    if n_s > 0 {
        let (_, sig_devs) = crate::observers::centered_deviations(&signal_pool);
        for mut d in sig_devs {
            let scale = (n_total as f64 / (2.0 * n_s as f64)).sqrt();
            d.iter_mut().for_each(|v| *v *= scale);
            rows.push(d);
        }
    }
    Ok((rows, noise, mean_diff))
}

// ---------------------------------------------------------------------------
// train-io
// ---------------------------------------------------------------------------

/// Summary JSON of a network-observer run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IoSummary {
    pub depths: Vec<usize>,
    pub selected_depth: usize,
    pub best_val_cross_entropy: f64,
    /// Whether the 1% ladder rule stopped depth growth (false when every
    /// requested depth was trained).
    pub stopped_early: bool,
}

/// Trains the network observer by cross-entropy on a semi-online stream —
/// stored noiseless objects plus fresh measurement noise — over the depth
/// ladder in `ladder.depths`, then writes the selected checkpoint
/// (`cnn.ckpt`), the ladder table (`ladder.csv`), and `train_io.json`.
///
/// Inputs are standardized by the train-set mean image and global standard
/// deviation; scoring recomputes the same standardizer from `train.bin`,
/// so the transform never needs its own artifact.
pub fn train_io(ctx: &RunContext) -> Result<(), HarnessError> {
    let train = ctx.load_dataset("train.bin", "generate")?;
    let standardizer = Standardizer::from_dataset(&train);
    let validation =
        standardizer.labeled(&ctx.load_dataset("validation.bin", "generate")?.to_labeled_images()?);
    let cfg = ctx.train_config("train-io")?;
    let depths = ctx
        .config
        .get_usize_list("ladder.depths")?
        .unwrap_or_else(|| vec![1, 2]);
    let filters = ctx.usize_key("ladder.filters", ArchSpec::DEFAULT_FILTERS)?;
    let filter_size = ctx.usize_key("ladder.filter_size", ArchSpec::DEFAULT_FILTER_SIZE)?;
    let arch_for = |depth: usize| {
        ArchSpec::new(ctx.task.grid.height(), ctx.task.grid.width(), depth)
            .with_filters(filters)
            .with_filter_size(filter_size)
    };

    let (backgrounds, signal_pool) = object_pools(ctx)?;
    let known_signal = ctx.task.known_signal();
    let mut rng = child_rng(ctx.seed, "train-io-stream", 0);
    let task = ctx.task.clone();
    let mut source = move |label: bool| -> Vec<f64> {
        let mut clean = if backgrounds.is_empty() {
            vec![0.0; task.pixel_count()]
        } else {
            backgrounds[rng.gen_range(0..backgrounds.len())].clone()
        };
        if label {
            let signal = match &known_signal {
                Some(s) => s,
                None => &signal_pool[rng.gen_range(0..signal_pool.len())],
            };
            for (c, s) in clean.iter_mut().zip(signal) {
                *c += s;
            }
        }
        let noisy = crate::imaging::apply_noise(&mut rng, &task.noise, &clean)
            .expect("nonnegative clean image");
        standardizer.apply(&noisy)
    };

    let result = architecture_ladder(&depths, arch_for, &mut source, &cfg, &validation, None)?;
    result.selected.save(&ctx.path("cnn.ckpt"))?;

    let ladder_path = ctx.path("ladder.csv");
    let mut table = String::from("depth,val_cross_entropy,val_auc\n");
    for step in &result.steps {
        table.push_str(&format!(
            "{},{:.8e},{:.8e}\n",
            step.depth, step.val_cross_entropy, step.val_auc
        ));
    }
    fs::write(&ladder_path, table).map_err(|e| HarnessError::io(&ladder_path, e))?;

    let selected = result.steps[result.selected_index];
    write_json(
        &ctx.path("train_io.json"),
        &IoSummary {
            depths,
            selected_depth: selected.depth,
            best_val_cross_entropy: selected.val_cross_entropy,
            stopped_early: matches!(
                result.stop,
                crate::trainers::LadderStop::ImprovementBelowThreshold
            ),
        },
    )?;
    Ok(())
}

/// Affine input map for the network observer: subtract the train-set mean
/// image, divide by the global pixel standard deviation. Deterministic given
/// the train set, hence recomputable anywhere.
#[derive(Debug, Clone)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: f64,
}

impl Standardizer {
    pub fn from_dataset(train: &Dataset) -> Self {
        let m = train.pixels_per_image();
        let images: Vec<Vec<f64>> = (0..train.count()).map(|i| train.image_f64(i)).collect();
        let mean = mean_image(&images, m);
        let mut var = 0.0;
        for img in &images {
            for (&g, &mu) in img.iter().zip(&mean) {
                var += (g - mu) * (g - mu);
            }
        }
        let n = (images.len().max(1) * m) as f64;
        let std = (var / n).sqrt();
        Self { mean, scale: if std > 0.0 { 1.0 / std } else { 1.0 } }
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        g.iter().zip(&self.mean).map(|(&v, &mu)| (v - mu) * self.scale).collect()
    }

    fn labeled(&self, set: &LabeledImages) -> LabeledImages {
        let map = |imgs: &[Vec<f64>]| imgs.iter().map(|g| self.apply(g)).collect();
        LabeledImages::new(map(set.class(0)), map(set.class(1)))
            .expect("standardizing preserves shape")
    }
}

// ---------------------------------------------------------------------------
// mcmc
// ---------------------------------------------------------------------------

/// Scores every test image with the Markov-chain likelihood-ratio estimator
/// and writes `mcmc_scores.csv` (`index,label,log_lr,acceptance_rate,
/// exact_log_lr`; the exact column is filled on enumerable tasks and empty
/// otherwise) plus the first image's step trace in `mcmc_trace.csv`.
///
/// Only lumpy backgrounds under Gaussian noise are supported — the sampler's
/// likelihood is Gaussian.
pub fn mcmc_score(ctx: &RunContext) -> Result<(), HarnessError> {
    let model = ctx.task.lumpy_model().ok_or_else(|| {
        HarnessError::InvalidTask(
            "mcmc requires a lumpy background (ske_bks_lumpy or sks_bks_lumpy)".into(),
        )
    })?;
    let noise_std = ctx.task.gaussian_noise_std().ok_or_else(|| {
        HarnessError::InvalidTask("mcmc requires Gaussian measurement noise".into())
    })?;
    let known_signal = ctx.task.known_signal();
    let (signal, default_samples, moves) = match &ctx.task.signal {
        SignalModel::Prior(prior) => (
            McmcSignal::Random(prior),
            FULL_CHAIN_RANDOM_SIGNAL,
            MoveProbabilities::random_signal(),
        ),
        _ => (
            McmcSignal::Known(known_signal.as_deref().expect("known signal")),
            FULL_CHAIN_KNOWN_SIGNAL,
            MoveProbabilities::known_signal(),
        ),
    };
    let mcmc_task = McmcTask {
        grid: ctx.task.grid,
        model,
        kernel: ctx.task.kernel,
        signal,
        noise_std,
    };
    let enumerable = matches!(model.placement, LumpPlacement::FixedCountGrid { .. })
        && matches!(signal, McmcSignal::Known(_));

    let test = ctx.load_dataset("test.bin", "generate")?;
    let n_samples = ctx.usize_key("mcmc.samples", default_samples)?;
    let step_std = ctx.config.get_f64("mcmc.step_std")?;
    let burn_in = ctx.config.get_usize("mcmc.burn_in")?;

    let scores_path = ctx.path("mcmc_scores.csv");
    let mut csv = String::from("index,label,log_lr,acceptance_rate,exact_log_lr\n");
    for i in 0..test.count() {
        let g = test.image_f64(i);
        let mut cfg = ChainConfig::new(n_samples, child_seed(ctx.seed, "mcmc-image", i as u64));
        cfg.move_probabilities = moves;
        if let Some(s) = step_std {
            cfg.step_std = s;
        }
        if let Some(b) = burn_in {
            cfg.burn_in = b;
        }
        cfg.record_trace = i == 0;
        let run = mcmc_log_lr(&g, &mcmc_task, &cfg)?;
        if let Some(warning) = &run.warning {
            eprintln!("image {i}: {warning}");
        }
        if i == 0 {
            let trace_path = ctx.path("mcmc_trace.csv");
            let mut out = Vec::new();
            write_trace_csv(&run.trace, &mut out).expect("write to memory");
            fs::write(&trace_path, out).map_err(|e| HarnessError::io(&trace_path, e))?;
        }
        let exact = if enumerable {
            let value = exact_lumpy_log_lr(&g, &mcmc_task, &QuadratureSpec::default())?;
            format!("{value:.8e}")
        } else {
            String::new()
        };
        csv.push_str(&format!(
            "{i},{},{:.8e},{:.8e},{exact}\n",
            test.labels()[i],
            run.log_lr,
            run.acceptance_rate
        ));
    }
    fs::write(&scores_path, csv).map_err(|e| HarnessError::io(&scores_path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate / report
// ---------------------------------------------------------------------------

/// Test-set metrics of one observer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObserverMetrics {
    pub name: String,
    pub auc: f64,
    pub snr_t: Option<f64>,
    pub roc_path: String,
    /// Detectability efficiency against the run's reference ideal observer,
    /// when one exists.
    pub efficiency: Option<f64>,
    /// Posterior mean squared error against the reference ideal observer's
    /// posteriors (network observer only).
    pub posterior_mse: Option<f64>,
}

/// The run's evaluation: one metrics row per observer found in the run
/// directory. Every number is recomputable from the stored artifacts and
/// the seed; only `wall_clock_secs` varies between reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: String,
    pub config_digest: String,
    pub observers: Vec<ObserverMetrics>,
    pub wall_clock_secs: f64,
}

struct ScoredObserver {
    name: String,
    scores: ScoreSet,
    /// Posterior probabilities per test image, for observers whose scores
    /// are (log) likelihood ratios or posteriors.
    posteriors: Option<Vec<f64>>,
    is_reference_io: bool,
}

/// Scores every artifact in the run directory on the test set and writes
/// per-observer ROC CSVs plus `evaluation.json`.
///
/// Observers discovered: stored templates (`template_<route>.bin`), the
/// network checkpoint (`cnn.ckpt`), Markov-chain scores
/// (`mcmc_scores.csv`), and — on the zero-background Laplacian task — the
/// analytic ideal observer and Hotelling template. The reference ideal
/// observer for efficiency and posterior comparisons is the analytic one
/// when available, otherwise the Markov-chain estimate.
pub fn evaluate(ctx: &RunContext) -> Result<ExperimentReport, HarnessError> {
    let start = Instant::now();
    let test = ctx.load_dataset("test.bin", "generate")?;
    let observers = collect_observers(ctx, &test)?;

    let reference: Option<(String, Vec<f64>, f64)> = observers
        .iter()
        .find(|o| o.is_reference_io)
        .map(|o| {
            let posts = o.posteriors.clone().expect("reference carries posteriors");
            (o.name.clone(), posts, auc(&o.scores))
        });

    let mut rows = Vec::new();
    for obs in &observers {
        let roc = empirical_roc(&obs.scores);
        let roc_name = format!("roc_{}.csv", obs.name);
        let roc_path = ctx.path(&roc_name);
        let mut out = Vec::new();
        roc.write_csv(&mut out).expect("write to memory");
        fs::write(&roc_path, out).map_err(|e| HarnessError::io(&roc_path, e))?;

        let auc_value = auc(&obs.scores);
        let eff = reference.as_ref().and_then(|(ref_name, _, ref_auc)| {
            if &obs.name == ref_name {
                None
            } else {
                efficiency(auc_value, *ref_auc).ok()
            }
        });
        let mse = match (&obs.posteriors, &reference) {
            (Some(posts), Some((ref_name, ref_posts, _)))
                if obs.name == "cnn_io" && &obs.name != ref_name =>
            {
                Some(posterior_mse(posts, ref_posts)?)
            }
            _ => None,
        };
        rows.push(ObserverMetrics {
            name: obs.name.clone(),
            auc: auc_value,
            snr_t: snr_t(&obs.scores).ok(),
            roc_path: roc_name,
            efficiency: eff,
            posterior_mse: mse,
        });
    }

    let report = ExperimentReport {
        task: ctx.task.kind.name().to_string(),
        config_digest: ctx.config.digest_hex(),
        observers: rows,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    write_json(&ctx.path("evaluation.json"), &report)?;
    Ok(report)
}

fn collect_observers(
    ctx: &RunContext,
    test: &Dataset,
) -> Result<Vec<ScoredObserver>, HarnessError> {
    let mut observers = Vec::new();
    let prior = ctx.task.prior_h1;

    // Analytic references exist in closed form on the zero-background
    // Laplacian task.
    if ctx.task.kind == TaskKind::SkeBke {
        if let NoiseModel::Laplacian { decay } = ctx.task.noise {
            let signal = ctx.task.known_signal().expect("known signal");
            let zero = vec![0.0; signal.len()];
            let mut llrs = Vec::with_capacity(test.count());
            for i in 0..test.count() {
                llrs.push(laplacian_io_log_lr(&test.image_f64(i), &zero, &signal, decay)?);
            }
            observers.push(log_lr_observer("analytic_io", test, llrs, prior, true));

            let template = analytic_laplacian_ho_template(&signal, decay);
            observers.push(template_observer("analytic_ho", test, &template)?);
        }
    }

    for route in ["labeled", "covdecomp", "cg", "woodbury"] {
        let path = ctx.path(&format!("template_{route}.bin"));
        if path.exists() {
            let template = read_template(&path)?;
            observers.push(template_observer(&format!("slnn_{route}"), test, &template)?);
        }
    }

    let ckpt = ctx.path("cnn.ckpt");
    if ckpt.exists() {
        let model = CnnModel::load(&ckpt)?;
        let standardizer =
            Standardizer::from_dataset(&ctx.load_dataset("train.bin", "generate")?);
        let mut ws = CnnWorkspace::new(model.arch());
        let mut posteriors = Vec::with_capacity(test.count());
        let mut scores = (Vec::new(), Vec::new());
        for i in 0..test.count() {
            let z = model.logit(&standardizer.apply(&test.image_f64(i)), &mut ws)?;
            posteriors.push(crate::neural::sigmoid(z));
            if test.labels()[i] == 0 {
                scores.0.push(z);
            } else {
                scores.1.push(z);
            }
        }
        observers.push(ScoredObserver {
            name: "cnn_io".into(),
            scores: ScoreSet::new(scores.0, scores.1),
            posteriors: Some(posteriors),
            is_reference_io: false,
        });
    }

    let mcmc_path = ctx.path("mcmc_scores.csv");
    if mcmc_path.exists() {
        let llrs = read_mcmc_scores(&mcmc_path, test.count())?;
        observers.push(log_lr_observer("mcmc_io", test, llrs, prior, true));
    }

    // Exactly one reference ideal observer: the analytic one wins when both
    // are present.
    let mut seen_reference = false;
    for obs in &mut observers {
        if obs.is_reference_io {
            if seen_reference {
                obs.is_reference_io = false;
            }
            seen_reference = true;
        }
    }
    Ok(observers)
}

fn log_lr_observer(
    name: &str,
    test: &Dataset,
    llrs: Vec<f64>,
    prior_h1: f64,
    is_reference_io: bool,
) -> ScoredObserver {
    let mut scores = (Vec::new(), Vec::new());
    for (i, &llr) in llrs.iter().enumerate() {
        if test.labels()[i] == 0 {
            scores.0.push(llr);
        } else {
            scores.1.push(llr);
        }
    }
    let posteriors = llrs.iter().map(|&llr| posterior_from_log_lr(llr, prior_h1)).collect();
    ScoredObserver {
        name: name.into(),
        scores: ScoreSet::new(scores.0, scores.1),
        posteriors: Some(posteriors),
        is_reference_io,
    }
}

fn template_observer(
    name: &str,
    test: &Dataset,
    template: &Template,
) -> Result<ScoredObserver, HarnessError> {
    let mut scores = (Vec::new(), Vec::new());
    for i in 0..test.count() {
        let t = template.score(&test.image_f64(i))?;
        if test.labels()[i] == 0 {
            scores.0.push(t);
        } else {
            scores.1.push(t);
        }
    }
    Ok(ScoredObserver {
        name: name.into(),
        scores: ScoreSet::new(scores.0, scores.1),
        posteriors: None,
        is_reference_io: false,
    })
}

fn read_mcmc_scores(path: &Path, expected: usize) -> Result<Vec<f64>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut llrs = Vec::with_capacity(expected);
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = || {
            HarnessError::InvalidTask(format!(
                "malformed mcmc score line {} in {}",
                i + 1,
                path.display()
            ))
        };
        if fields.len() < 4 {
            return Err(parse_err());
        }
        llrs.push(fields[2].parse::<f64>().map_err(|_| parse_err())?);
    }
    if llrs.len() != expected {
        return Err(HarnessError::InvalidTask(format!(
            "mcmc scores cover {} images but the test set has {expected}",
            llrs.len()
        )));
    }
    Ok(llrs)
}

/// Aggregates every `run-*/evaluation.json` under `out_dir` into one
/// plain-text table (written to `out_dir/report.txt` and returned), one row
/// per observer per run — the cross-task comparison table.
pub fn report(out_dir: &Path) -> Result<String, HarnessError> {
    let mut reports: Vec<ExperimentReport> = Vec::new();
    let entries = fs::read_dir(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("run-"))
        })
        .collect();
    dirs.sort();
    for dir in dirs {
        let path = dir.join("evaluation.json");
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
            reports.push(serde_json::from_str(&text).map_err(|e| {
                HarnessError::InvalidTask(format!("bad evaluation.json in {}: {e}", dir.display()))
            })?);
        }
    }
    if reports.is_empty() {
        return Err(HarnessError::MissingArtifact {
            path: out_dir.join("run-*/evaluation.json").display().to_string(),
            produced_by: "evaluate",
        });
    }

    let mut table = String::new();
    table.push_str(&format!(
        "{:<14} {:<14} {:>7} {:>8} {:>11} {:>14}  {}\n",
        "task", "observer", "auc", "snr_t", "efficiency", "posterior_mse", "run"
    ));
    for r in &reports {
        for o in &r.observers {
            let fmt_opt = |v: Option<f64>| match v {
                Some(x) => format!("{x:.4}"),
                None => "-".to_string(),
            };
            table.push_str(&format!(
                "{:<14} {:<14} {:>7.4} {:>8} {:>11} {:>14}  run-{}\n",
                r.task,
                o.name,
                o.auc,
                fmt_opt(o.snr_t),
                fmt_opt(o.efficiency),
                fmt_opt(o.posterior_mse),
                r.config_digest,
            ));
        }
    }
    let path = out_dir.join("report.txt");
    fs::write(&path, &table).map_err(|e| HarnessError::io(&path, e))?;
    Ok(table)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}



// ---------------------------------------------------------------------------
// self-test
// ---------------------------------------------------------------------------

/// Fast internal consistency check behind the `self-test` subcommand. Runs
/// a miniature zero-background task end to end in `dir` and asserts
/// determinism, round-trip integrity, and a sane analytic evaluation.
/// Returns the list of failed assertions (empty on success).
pub fn self_test(dir: &Path) -> Result<Vec<String>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let config_path = dir.join("self_test_config.txt");
    fs::write(
        &config_path,
        "task.type = ske_bke\n\
         grid.width = 16\n\
         data.train_per_class = 40\n\
         data.validation_per_class = 30\n\
         data.test_per_class = 50\n\
         train.max_batches = 60\n\
         train.batch_per_class = 20\n\
         train.validation_every = 20\n\
         rng.seed = 7\n",
    )
    .map_err(|e| HarnessError::io(&config_path, e))?;

    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    let ctx = prepare_run(&config_path, dir, None, 1)?;
    generate(&ctx)?;
    let first = fs::read(ctx.path("test.bin")).map_err(|e| HarnessError::io(&ctx.dir, e))?;
    generate(&ctx)?;
    let second = fs::read(ctx.path("test.bin")).map_err(|e| HarnessError::io(&ctx.dir, e))?;
    check("regenerated dataset is byte-identical", first == second);

    let reread = Dataset::read(&ctx.path("test.bin"))?;
    check("dataset round-trip preserves count", reread.count() == 100);

    let ho = ctx.train_config("train-ho")?;
    let validation = ctx.load_dataset("validation.bin", "generate")?.to_labeled_images()?;
    let signal = ctx.task.known_signal().expect("known signal");
    let noise = ctx.task.noise_covariance(&vec![0.0; signal.len()], &signal)?;
    let result = train_slnn_covdecomp(&[], SignalSpec::Fixed(&signal), &noise, &ho, &validation)?;
    check(
        "trained template is finite",
        result.template.weights().iter().all(|w| w.is_finite()),
    );

    let report = evaluate(&ctx)?;
    let analytic = report.observers.iter().find(|o| o.name == "analytic_io");
    check("analytic ideal observer present", analytic.is_some());
    if let Some(metrics) = analytic {
        check("analytic ideal observer beats chance", metrics.auc > 0.6);
    }

    let seeded = prepare_run(&config_path, dir, Some(8), 1)?;
    check("seed override lands in a fresh run directory", seeded.dir != ctx.dir);

    Ok(failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_config(dir: &Path, text: &str) -> PathBuf {
        let path = dir.join("config.txt");
        fs::write(&path, text).unwrap();
        path
    }

    fn tiny_lumpy_config() -> &'static str {
        "task.type = ske_bks_lumpy\n\
         grid.width = 12\n\
         data.objects = 60\n\
         data.train_per_class = 30\n\
         data.validation_per_class = 25\n\
         data.test_per_class = 25\n\
         train.max_batches = 80\n\
         train.batch_per_class = 15\n\
         train.validation_every = 20\n\
         ladder.depths = 1\n\
         ladder.filters = 4\n\
         ladder.filter_size = 3\n\
         rng.seed = 3\n"
    }

    #[test]
    fn generate_writes_expected_files_and_is_deterministic() {
        let dir = tempdir().unwrap();
        let cfg = write_config(dir.path(), tiny_lumpy_config());
        let ctx = prepare_run(&cfg, dir.path(), None, 1).unwrap();
        generate(&ctx).unwrap();
        for name in ["train.bin", "validation.bin", "test.bin", "objects.bin"] {
            assert!(ctx.path(name).exists(), "{name} missing");
            assert!(DatasetManifest::read_for(&ctx.path(name)).is_ok(), "{name} sidecar");
        }
        assert!(!ctx.path("signal_objects.bin").exists(), "no signal pool for a known signal");

        let bytes = fs::read(ctx.path("train.bin")).unwrap();
        generate(&ctx).unwrap();
        assert_eq!(bytes, fs::read(ctx.path("train.bin")).unwrap(), "regeneration differs");
    }

    #[test]
    fn ho_routes_produce_templates_and_close_solutions() {
        let dir = tempdir().unwrap();
        let cfg = write_config(dir.path(), tiny_lumpy_config());
        let mut ctx = prepare_run(&cfg, dir.path(), None, 1).unwrap();
        generate(&ctx).unwrap();

        ctx.config.set("train.loss", "cg").unwrap();
        train_ho(&ctx).unwrap();
        ctx.config.set("train.loss", "woodbury").unwrap();
        train_ho(&ctx).unwrap();

        let cg = read_template(&ctx.path("template_cg.bin")).unwrap();
        let woodbury = read_template(&ctx.path("template_woodbury.bin")).unwrap();
        // Both routes solve the same system; storage rounds to f32, so
        // agreement is at f32 precision.
        assert!(cg.cosine_similarity(&woodbury).unwrap() > 1.0 - 1e-6);

        let summary: HoSummary = serde_json::from_str(
            &fs::read_to_string(ctx.path("train_ho_cg.json")).unwrap(),
        )
        .unwrap();
        assert!(summary.snr_ho_squared.is_finite() && summary.snr_ho_squared > 0.0);
    }

    #[test]
    fn evaluate_discovers_artifacts_and_report_tabulates_them() {
        let dir = tempdir().unwrap();
        let cfg = write_config(dir.path(), tiny_lumpy_config());
        let mut ctx = prepare_run(&cfg, dir.path(), None, 1).unwrap();
        generate(&ctx).unwrap();
        ctx.config.set("train.loss", "cg").unwrap();
        train_ho(&ctx).unwrap();
        train_io(&ctx).unwrap();

        let report_data = evaluate(&ctx).unwrap();
        let names: Vec<&str> =
            report_data.observers.iter().map(|o| o.name.as_str()).collect();
        assert!(names.contains(&"slnn_cg"));
        assert!(names.contains(&"cnn_io"));
        for o in &report_data.observers {
            assert!(ctx.path(&o.roc_path).exists());
            assert!(o.auc >= 0.0 && o.auc <= 1.0);
        }

        let table = report(dir.path()).unwrap();
        assert!(table.contains("slnn_cg"));
        assert!(table.contains("ske_bks_lumpy"));
        assert!(dir.path().join("report.txt").exists());
    }

    #[test]
    fn mcmc_pipeline_fills_exact_column_on_the_enumerable_task() {
        let dir = tempdir().unwrap();
        let cfg = write_config(
            dir.path(),
            "task.type = ske_bks_lumpy\n\
             grid.width = 8\n\
             lumpy.grid_nodes = 4\n\
             lumpy.fixed_count = 1\n\
             lumpy.amplitude = 0.4\n\
             lumpy.width = 1.2\n\
             kernel.height = 10\n\
             signal.amplitude = 0.45\n\
             signal.width = 1.5\n\
             noise.param = 4.0\n\
             data.objects = 4\n\
             data.train_per_class = 2\n\
             data.validation_per_class = 2\n\
             data.test_per_class = 3\n\
             mcmc.samples = 4000\n\
             rng.seed = 5\n",
        );
        let ctx = prepare_run(&cfg, dir.path(), None, 1).unwrap();
        generate(&ctx).unwrap();
        mcmc_score(&ctx).unwrap();

        let csv = fs::read_to_string(ctx.path("mcmc_scores.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "index,label,log_lr,acceptance_rate,exact_log_lr"
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 6);
        for row in &rows {
            let fields: Vec<&str> = row.split(',').collect();
            assert_eq!(fields.len(), 5);
            let chain: f64 = fields[2].parse().unwrap();
            let exact: f64 = fields[4].parse().unwrap();
            assert!(
                (chain - exact).abs() < 0.35 * exact.abs().max(1.0),
                "chain {chain} far from exact {exact}"
            );
        }
        assert!(ctx.path("mcmc_trace.csv").exists());

        let evaluation = evaluate(&ctx).unwrap();
        assert!(evaluation.observers.iter().any(|o| o.name == "mcmc_io"));
    }

    #[test]
    fn missing_artifacts_are_reported_with_their_producer() {
        let dir = tempdir().unwrap();
        let cfg = write_config(dir.path(), tiny_lumpy_config());
        let ctx = prepare_run(&cfg, dir.path(), None, 1).unwrap();
        let err = train_ho(&ctx).unwrap_err();
        assert!(matches!(err, HarnessError::MissingArtifact { produced_by: "generate", .. }));
    }

    #[test]
    fn self_test_passes_in_a_clean_directory() {
        let dir = tempdir().unwrap();
        let failures = self_test(dir.path()).unwrap();
        assert!(failures.is_empty(), "self-test failures: {failures:?}");
    }
}
