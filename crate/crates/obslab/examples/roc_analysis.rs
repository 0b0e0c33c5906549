//! Tours the evaluation toolkit on hand-built score sets: the empirical ROC
//! staircase with proper tie handling, rank-statistic AUC against the
//! trapezoid integral, the test-statistic SNR, detectability, efficiency,
//! and posterior mean squared error.

use std::error::Error;
use std::fs;
use std::path::Path;

use obslab::evalkit::{
    auc, detectability, efficiency, empirical_roc, posterior_mse, snr_t, ScoreSet,
};

fn main() -> Result<(), Box<dyn Error>> {
    let out = Path::new("target/example-out/roc_analysis");
    fs::create_dir_all(out)?;

    // Small integer scores force ties both within and across classes; ties
    // contribute half-counts to the rank AUC and diagonal ROC segments.
    let tied = ScoreSet::new(vec![0.0, 1.0, 1.0, 2.0, 3.0], vec![1.0, 2.0, 2.0, 3.0, 4.0]);
    let roc = empirical_roc(&tied);
    println!("tied integer scores ({} distinct thresholds)", roc.points().len());
    println!("{:>10}{:>10}{:>12}", "fpf", "tpf", "threshold");
    for p in roc.points() {
        println!("{:>10.3}{:>10.3}{:>12.3}", p.fpf, p.tpf, p.threshold);
    }
    println!("rank auc        {:.6}", auc(&tied));
    println!("trapezoid auc   {:.6}", roc.trapezoid_area());
    assert!((auc(&tied) - roc.trapezoid_area()).abs() < 1e-12);
    println!("(identical: the staircase integral is the rank statistic)\n");

    // A well-separated Gaussian-like pair of score sets.
    let strong = gaussian_scores(400, 1.8);
    let weak = gaussian_scores(400, 0.9);
    for (name, set) in [("strong observer", &strong), ("weak observer", &weak)] {
        println!(
            "{name:<16} auc {:.4}  snr_t {:.4}  detectability {:.4}",
            auc(set),
            snr_t(set)?,
            detectability(auc(set))?
        );
    }
    println!(
        "weak-vs-strong efficiency {:.4} (squared detectability ratio)",
        efficiency(auc(&weak), auc(&strong))?
    );

    // Posterior mean squared error between two probability vectors.
    let reference: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
    let shifted: Vec<f64> = reference.iter().map(|p| (p + 0.05).min(1.0)).collect();
    println!("\nposterior mse of a 0.05-shifted copy: {:.6}", posterior_mse(&shifted, &reference)?);

    let roc_path = out.join("roc.csv");
    let mut csv = Vec::new();
    empirical_roc(&strong).write_csv(&mut csv)?;
    fs::write(&roc_path, csv)?;
    println!("strong observer's curve written to {}", roc_path.display());
    Ok(())
}

/// Deterministic score pair imitating equal-variance Gaussians a distance
/// `separation` apart, via inverse-CDF-like spacing (no RNG needed).
fn gaussian_scores(per_class: usize, separation: f64) -> ScoreSet {
    let spread = |i: usize| {
        let u = (i as f64 + 0.5) / per_class as f64;
        // Logistic quantiles approximate the Gaussian shape well enough
        // for a demonstration.
        (u / (1.0 - u)).ln() * 0.55
    };
    let h0 = (0..per_class).map(spread).collect();
    let h1 = (0..per_class).map(|i| spread(i) + separation).collect();
    ScoreSet::new(h0, h1)
}
