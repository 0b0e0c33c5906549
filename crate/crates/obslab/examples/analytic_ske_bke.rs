//! The zero-background task where everything is known in closed form: the
//! ideal observer's log likelihood ratio under Laplacian noise, the Hotelling
//! template `s / (2 c^2)`, and the posterior probability of signal presence.
//! Draws a large test set, compares both observers empirically, and checks
//! that the reported posteriors are calibrated.

use std::error::Error;

use obslab::child_rng;
use obslab::evalkit::{auc, efficiency, snr_t, ScoreSet};
use obslab::harness::TaskSpec;
use obslab::imaging::NoiseModel;
use obslab::observers::{
    analytic_laplacian_ho_template, laplacian_io_log_lr, posterior_from_log_lr, snr_ho_squared,
};

const PER_CLASS: usize = 2_000;

fn main() -> Result<(), Box<dyn Error>> {
    let task = TaskSpec::ske_bke();
    let NoiseModel::Laplacian { decay } = task.noise else {
        unreachable!("the zero-background task uses Laplacian noise")
    };
    let signal = task.known_signal().expect("known signal");
    let zero = vec![0.0; signal.len()];

    // The Hotelling template is proportional to the signal because the
    // noise covariance is white: K = 2 c^2 I.
    let template = analytic_laplacian_ho_template(&signal, decay);
    let snr2 = snr_ho_squared(&template, &signal)?;
    println!("task: {}x{} grid, Laplace scale {decay}", task.grid.width(), task.grid.height());
    println!("analytic SNR^2_HO = s^T s / (2 c^2) = {snr2:.4}");

    let mut rng = child_rng(7, "bke-test", 0);
    let mut io = (Vec::new(), Vec::new());
    let mut ho = (Vec::new(), Vec::new());
    let mut posteriors: Vec<(f64, bool)> = Vec::new();
    for label in [false, true] {
        for _ in 0..PER_CLASS {
            let g = task.sample_measurement(&mut rng, label)?;
            let llr = laplacian_io_log_lr(&g, &zero, &signal, decay)?;
            let t = template.score(&g)?;
            let (io_side, ho_side) =
                if label { (&mut io.1, &mut ho.1) } else { (&mut io.0, &mut ho.0) };
            io_side.push(llr);
            ho_side.push(t);
            posteriors.push((posterior_from_log_lr(llr, task.prior_h1), label));
        }
    }
    let io = ScoreSet::new(io.0, io.1);
    let ho = ScoreSet::new(ho.0, ho.1);

    let (auc_io, auc_ho) = (auc(&io), auc(&ho));
    println!("\n{:<18}{:>8}{:>8}", "observer", "auc", "snr_t");
    println!("{:<18}{:>8.4}{:>8.4}", "ideal (analytic)", auc_io, snr_t(&io)?);
    println!("{:<18}{:>8.4}{:>8.4}", "hotelling", auc_ho, snr_t(&ho)?);
    println!("hotelling efficiency vs ideal: {:.3}", efficiency(auc_ho, auc_io)?);
    println!("(the linear observer is suboptimal under heavy-tailed noise)");

    // Calibration: among images whose reported posterior falls in a bin,
    // the empirical signal-present fraction should match the bin center.
    println!("\nposterior calibration over {} images:", posteriors.len());
    println!("{:<14}{:>8}{:>12}", "posterior bin", "count", "h1 fraction");
    for b in 0..5 {
        let (lo, hi) = (b as f64 * 0.2, (b + 1) as f64 * 0.2);
        let in_bin: Vec<_> =
            posteriors.iter().filter(|(p, _)| *p >= lo && (*p < hi || b == 4)).collect();
        let frac =
            in_bin.iter().filter(|(_, l)| *l).count() as f64 / in_bin.len().max(1) as f64;
        println!("{lo:.1} - {hi:<8.1}{:>8}{frac:>12.3}", in_bin.len());
    }
    Ok(())
}
