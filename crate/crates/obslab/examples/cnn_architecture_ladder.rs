//! Walks the convolutional architecture ladder on a small lumpy-background
//! task: depth grows until validation cross-entropy stops improving by at
//! least 1%, the minimum-cross-entropy rung is selected, and the selected
//! model's AUC is compared against the Hotelling reference.

use std::error::Error;

use obslab::child_rng;
use obslab::evalkit::{auc, ScoreSet};
use obslab::harness::{Config, TaskSpec};
use obslab::neural::{AdamConfig, ArchSpec};
use obslab::observers::{centered_deviations, solve_ho_template_cg, CgConfig, CovarianceOracle};
use obslab::trainers::{architecture_ladder, LabeledImages, LadderStop, LrSchedule, TrainConfig};
use rand::Rng;

const POOL: usize = 600;
const EVAL_PER_CLASS: usize = 200;

fn main() -> Result<(), Box<dyn Error>> {
    let cfg = Config::parse(
        "task.type = ske_bks_lumpy\n\
         grid.width = 16\n\
         lumpy.mean_count = 3\n\
         signal.amplitude = 0.3\n",
    )?;
    let task = TaskSpec::from_config(&cfg)?;
    let signal = task.known_signal().expect("known signal");

    // Noiseless object pool shared by the stream source and the reference.
    let mut rng = child_rng(97, "ladder-pool", 0);
    let backgrounds: Vec<Vec<f64>> =
        (0..POOL).map(|_| task.sample_background(&mut rng)).collect();

    // Hotelling reference AUC on a held-out test set.
    let (mean_bg, _) = centered_deviations(&backgrounds);
    let noise = task.noise_covariance(&mean_bg, &signal)?;
    let oracle = CovarianceOracle::for_ske(noise, &backgrounds, &signal)?;
    let template = solve_ho_template_cg(&oracle, &CgConfig::default())?.template;

    let mut eval_rng = child_rng(97, "ladder-eval", 0);
    let mut draw_set = |per_class: usize| -> Result<LabeledImages, Box<dyn Error>> {
        let mut h0 = Vec::new();
        let mut h1 = Vec::new();
        for _ in 0..per_class {
            h0.push(task.sample_measurement(&mut eval_rng, false)?);
            h1.push(task.sample_measurement(&mut eval_rng, true)?);
        }
        Ok(LabeledImages::new(h0, h1)?)
    };
    let validation = draw_set(EVAL_PER_CLASS)?;
    let test = draw_set(EVAL_PER_CLASS)?;

    let (h0, h1) = test.linear_scores(template.weights());
    let reference_auc = auc(&ScoreSet::new(h0, h1));
    println!("hotelling reference auc {reference_auc:.4}");

    // Semi-online stream: stored objects, fresh measurement noise per draw.
    let mut stream_rng = child_rng(97, "ladder-stream", 0);
    let noise_model = task.noise;
    let mut raw_source = move |label: bool| -> Vec<f64> {
        let mut clean = backgrounds[stream_rng.gen_range(0..backgrounds.len())].clone();
        if label {
            for (c, s) in clean.iter_mut().zip(&signal) {
                *c += s;
            }
        }
        obslab::imaging::apply_noise(&mut stream_rng, &noise_model, &clean)
            .expect("nonnegative image")
    };

    // Standardize network inputs (mean image and global standard deviation
    // estimated from the stream); raw lumpy pixels span tens of units,
    // which stalls gradient training.
    let calibration: Vec<Vec<f64>> =
        (0..400).map(|i| raw_source(i % 2 == 1)).collect();
    let m = task.pixel_count();
    let mut mean = vec![0.0; m];
    for g in &calibration {
        for (acc, &v) in mean.iter_mut().zip(g) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= calibration.len() as f64);
    let var = calibration
        .iter()
        .flat_map(|g| g.iter().zip(&mean).map(|(&v, &mu)| (v - mu) * (v - mu)))
        .sum::<f64>()
        / (calibration.len() * m) as f64;
    let scale = 1.0 / var.sqrt();
    let standardize =
        |g: &[f64]| -> Vec<f64> { g.iter().zip(&mean).map(|(&v, &mu)| (v - mu) * scale).collect() };
    let mut source = |label: bool| standardize(&raw_source(label));
    let standardized = |set: &LabeledImages| {
        LabeledImages::new(
            set.class(0).iter().map(|g| standardize(g)).collect(),
            set.class(1).iter().map(|g| standardize(g)).collect(),
        )
        .expect("same shapes")
    };
    let validation = standardized(&validation);
    let test_std = standardized(&test);

    let train_cfg = TrainConfig {
        batch_per_class: 25,
        max_batches: 400,
        validation_every: 50,
        adam: AdamConfig::with_lr(1e-3),
        schedule: LrSchedule::Constant,
        seed: 4242,
    };
    let arch_for = |depth: usize| {
        ArchSpec::new(task.grid.height(), task.grid.width(), depth)
            .with_filters(4)
            .with_filter_size(3)
    };
    let depths = [1, 2, 3];
    let result = architecture_ladder(
        &depths,
        arch_for,
        &mut source,
        &train_cfg,
        &validation,
        Some(reference_auc),
    )?;

    println!("\n{:<7}{:>18}{:>10}", "depth", "val cross-entropy", "val auc");
    for step in &result.steps {
        println!("{:<7}{:>18.5}{:>10.4}", step.depth, step.val_cross_entropy, step.val_auc);
    }
    match result.stop {
        LadderStop::ImprovementBelowThreshold => {
            println!("stopped early: last rung improved cross-entropy by less than 1%")
        }
        LadderStop::Exhausted => println!("trained every requested depth"),
    }
    println!("selected depth {}", result.steps[result.selected_index].depth);

    // Score the selected model on the held-out set.
    let mut ws = obslab::neural::CnnWorkspace::new(result.selected.arch());
    let mut scores = (Vec::new(), Vec::new());
    for (label, side) in [(0u8, &mut scores.0), (1u8, &mut scores.1)] {
        for g in test.class(label) {
            side.push(result.selected.logit(g, &mut ws)?);
        }
    }
    let cnn_auc = auc(&ScoreSet::new(scores.0, scores.1));
    println!("selected model test auc {cnn_auc:.4} (reference {reference_auc:.4})");
    if let Some(meets) = result.meets_reference {
        println!("meets reference: {meets}");
    }
    Ok(())
}
