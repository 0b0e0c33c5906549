//! Trains the single-layer linear network on the zero-background task with
//! both losses — the labeled constrained loss over a noisy stream, and the
//! covariance-decomposition loss that uses the known statistics — and
//! measures how well each recovers the analytic Hotelling template.

use std::error::Error;
use std::fs;
use std::path::Path;

use obslab::child_rng;
use obslab::harness::TaskSpec;
use obslab::imaging::NoiseModel;
use obslab::neural::AdamConfig;
use obslab::observers::{analytic_laplacian_ho_template, Template};
use obslab::rng::LaplaceStream;
use obslab::trainers::{
    train_slnn_covdecomp, train_slnn_labeled_stream, LabeledImages, LrSchedule, SignalSpec,
    TrainConfig,
};

fn main() -> Result<(), Box<dyn Error>> {
    let out = Path::new("target/example-out/slnn_template_recovery");
    fs::create_dir_all(out)?;

    // Shrink the grid so the run takes seconds; the statistics are
    // unchanged in kind.
    let mut task = TaskSpec::ske_bke();
    task.grid = obslab::phantoms::PixelGrid::square(32);
    if let obslab::harness::SignalModel::Known(ref mut s) = task.signal {
        s.center = [16.0, 16.0];
    }
    let NoiseModel::Laplacian { decay } = task.noise else { unreachable!() };
    let signal = task.known_signal().expect("known signal");
    let reference = analytic_laplacian_ho_template(&signal, decay);

    // A modest validation set steers early stopping for both losses.
    let mut rng = child_rng(17, "validation", 0);
    let mut h0 = Vec::new();
    let mut h1 = Vec::new();
    for _ in 0..200 {
        h0.push(task.sample_measurement(&mut rng, false)?);
        h1.push(task.sample_measurement(&mut rng, true)?);
    }
    let validation = LabeledImages::new(h0, h1)?;

    let cfg = TrainConfig {
        batch_per_class: 200,
        max_batches: 4_000,
        validation_every: 200,
        adam: AdamConfig::with_lr(2e-3),
        schedule: LrSchedule::InverseTime { hold: 30 },
        seed: 20_240_001,
    };

    // Labeled loss: every batch draws fresh noisy measurements, so the
    // template converges to the population optimum instead of memorizing a
    // fixed pool.
    let mut noise = LaplaceStream::new(cfg.seed, "labeled-noise", 0, decay);
    let mut source = |label: bool, out: &mut [f64]| {
        if label {
            out.copy_from_slice(&signal);
        } else {
            out.fill(0.0);
        }
        noise.fill_add(out);
    };
    let labeled = train_slnn_labeled_stream(&mut source, signal.len(), &cfg, &validation)?;
    report("labeled", &labeled.template, &reference);
    let mut csv = Vec::new();
    labeled.log.write_csv(&mut csv)?;
    fs::write(out.join("labeled_log.csv"), csv)?;

    // Covariance-decomposition loss: the background ensemble is empty here,
    // so the loss reduces to the noise term plus the signal constraint.
    let noise_cov = task.noise_covariance(&vec![0.0; signal.len()], &signal)?;
    let covdecomp =
        train_slnn_covdecomp(&[], SignalSpec::Fixed(&signal), &noise_cov, &cfg, &validation)?;
    report("covdecomp", &covdecomp.template, &reference);
    let mut csv = Vec::new();
    covdecomp.log.write_csv(&mut csv)?;
    fs::write(out.join("covdecomp_log.csv"), csv)?;

    println!("\ntraining logs under {}", out.display());
    Ok(())
}

fn report(name: &str, trained: &Template, reference: &Template) {
    let cosine = trained.cosine_similarity(reference).expect("same shape");
    let rel_l2 = {
        let diff: f64 = trained
            .weights()
            .iter()
            .zip(reference.weights())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = reference.weights().iter().map(|v| v * v).sum::<f64>().sqrt();
        diff / norm
    };
    println!("{name:<10} cosine to analytic template {cosine:.6}   relative l2 {rel_l2:.4}");
}
