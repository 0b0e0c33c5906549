//! Reference observers: analytic likelihood ratios, the Hotelling template,
//! and two independent routes to it.
//!
//! The Hotelling observer applies a linear template `w` solving
//! `K w = Δḡ` where `K = K̄_n + K_b + K_s/2` is the hypothesis-averaged
//! measurement covariance: known diagonal noise plus empirical object
//! covariances. Two solvers are provided: matrix-free conjugate gradients on
//! the covariance oracle, and the Woodbury matrix-inversion lemma, which
//! reduces the low-rank-plus-diagonal solve to one dense symmetric system of
//! the sample count. Agreement between the two routes is part of the
//! acceptance surface.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::imaging::DiagCovariance;
use crate::vecmath::{axpy, dot, norm, sub};

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("length mismatch: expected {expected} pixels, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("template and samples must be non-empty")]
    Empty,
    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {relative_residual:.3e})")]
    NotConverged { iterations: usize, relative_residual: f64 },
    #[error("inner dense system is not positive definite")]
    NotPositiveDefinite,
}

/// Linear observer template: an M-element weight vector applied by inner
/// product with a measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    weights: Vec<f64>,
}

impl Template {
    pub fn new(weights: Vec<f64>) -> Self {
        assert!(!weights.is_empty(), "template must be non-empty");
        assert!(weights.iter().all(|w| w.is_finite()), "template weights must be finite");
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Test statistic `w^T g`.
    pub fn score(&self, g: &[f64]) -> Result<f64, ObserverError> {
        if g.len() != self.weights.len() {
            return Err(ObserverError::LengthMismatch { expected: self.weights.len(), got: g.len() });
        }
        Ok(dot(&self.weights, g))
    }

    /// Cosine of the angle between two templates; 1 means identical shape.
    pub fn cosine_similarity(&self, other: &Template) -> Result<f64, ObserverError> {
        if other.len() != self.len() {
            return Err(ObserverError::LengthMismatch { expected: self.len(), got: other.len() });
        }
        let denom = norm(&self.weights) * norm(&other.weights);
        assert!(denom > 0.0, "cosine undefined for zero templates");
        Ok(dot(&self.weights, &other.weights) / denom)
    }

    /// `|self - other| / |other|`.
    pub fn relative_l2_distance(&self, other: &Template) -> Result<f64, ObserverError> {
        if other.len() != self.len() {
            return Err(ObserverError::LengthMismatch { expected: self.len(), got: other.len() });
        }
        let d = sub(&self.weights, &other.weights);
        let denom = norm(&other.weights);
        assert!(denom > 0.0, "relative distance undefined against a zero template");
        Ok(norm(&d) / denom)
    }
}

/// Free-function form of the linear test statistic.
pub fn linear_test_statistic(template: &Template, g: &[f64]) -> Result<f64, ObserverError> {
    template.score(g)
}

/// `SNR^2` of a Hotelling template: `Δḡ^T w`.
pub fn snr_ho_squared(template: &Template, mean_diff: &[f64]) -> Result<f64, ObserverError> {
    if mean_diff.len() != template.len() {
        return Err(ObserverError::LengthMismatch { expected: template.len(), got: mean_diff.len() });
    }
    Ok(dot(template.weights(), mean_diff))
}

/// Generalized `SNR^2 = (Δḡ^T w)^2 / (w^T K w)` for an arbitrary linear
/// template under the oracle's covariance. Scale-invariant in `w`, and equal
/// to [`snr_ho_squared`] at the exact Hotelling solution.
pub fn snr_rayleigh_squared(
    oracle: &CovarianceOracle,
    template: &Template,
) -> Result<f64, ObserverError> {
    let w = template.weights();
    let kw = oracle.apply(w)?;
    let denom = dot(w, &kw);
    assert!(denom > 0.0, "template has zero variance under the covariance oracle");
    let num = dot(w, oracle.mean_diff());
    Ok(num * num / denom)
}

/// Exact ideal-observer log likelihood ratio for i.i.d. Laplacian noise with
/// known background and signal: `(1/c) Σ (|g - b| - |g - b - s|)`.
pub fn laplacian_io_log_lr(
    g: &[f64],
    background: &[f64],
    signal: &[f64],
    decay: f64,
) -> Result<f64, ObserverError> {
    assert!(decay > 0.0, "Laplacian decay must be positive");
    check_len(g.len(), background.len())?;
    check_len(g.len(), signal.len())?;
    let mut acc = 0.0;
    for ((&gm, &bm), &sm) in g.iter().zip(background).zip(signal) {
        acc += (gm - bm).abs() - (gm - bm - sm).abs();
    }
    Ok(acc / decay)
}

/// Background-known-exactly Gaussian log likelihood ratio:
/// `(s^T (g - b) - s^T s / 2) / std^2`.
pub fn gaussian_bke_log_lr(
    g: &[f64],
    background: &[f64],
    signal: &[f64],
    std: f64,
) -> Result<f64, ObserverError> {
    assert!(std > 0.0, "noise standard deviation must be positive");
    check_len(g.len(), background.len())?;
    check_len(g.len(), signal.len())?;
    let mut s_dot_resid = 0.0;
    let mut s_dot_s = 0.0;
    for ((&gm, &bm), &sm) in g.iter().zip(background).zip(signal) {
        s_dot_resid += sm * (gm - bm);
        s_dot_s += sm * sm;
    }
    Ok((s_dot_resid - 0.5 * s_dot_s) / (std * std))
}

/// Hotelling template for the signal-known-exactly task in i.i.d. Laplacian
/// noise with a non-random background: `w = s / (2 c^2)`.
pub fn analytic_laplacian_ho_template(signal: &[f64], decay: f64) -> Template {
    assert!(decay > 0.0, "Laplacian decay must be positive");
    let inv = 1.0 / (2.0 * decay * decay);
    Template::new(signal.iter().map(|&s| s * inv).collect())
}

/// Converts an ideal-observer log likelihood ratio into the posterior
/// probability of the signal-present hypothesis under the given prior.
pub fn posterior_from_log_lr(log_lr: f64, prior_h1: f64) -> f64 {
    assert!(prior_h1 > 0.0 && prior_h1 < 1.0, "prior must lie strictly inside (0, 1)");
    let z = log_lr + (prior_h1 / (1.0 - prior_h1)).ln();
    // Numerically stable logistic.
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), ObserverError> {
    if expected == got {
        Ok(())
    } else {
        Err(ObserverError::LengthMismatch { expected, got })
    }
}

/// Subtracts the sample mean from each sample, returning the mean and the
/// centered deviations.
pub fn centered_deviations(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert!(!samples.is_empty(), "need at least one sample to center");
    let m = samples[0].len();
    let mut mean = vec![0.0; m];
    for s in samples {
        assert_eq!(s.len(), m, "samples must share a length");
        axpy(&mut mean, 1.0, s);
    }
    let inv = 1.0 / samples.len() as f64;
    for v in &mut mean {
        *v *= inv;
    }
    let deviations = samples.iter().map(|s| sub(s, &mean)).collect();
    (mean, deviations)
}

/// Matrix-free application of the hypothesis-averaged covariance
/// `K = K̄_n + K_b + K_s / 2`, built from the known diagonal noise
/// covariance and centered object samples.
///
/// Signal-known-exactly tasks have no signal randomness: the H1 deviations
/// equal the H0 deviations and the signal term vanishes, so the oracle holds
/// only background deviations and the fixed signal as the class-mean
/// difference. Signal-known-statistically tasks add centered signal samples
/// with the factor 1/2.
#[derive(Debug, Clone)]
pub struct CovarianceOracle {
    noise: DiagCovariance,
    /// Flattened row-major background deviations, `n_background` rows.
    background_rows: Vec<f64>,
    n_background: usize,
    /// Flattened row-major signal deviations, `n_signal` rows (empty for SKE).
    signal_rows: Vec<f64>,
    n_signal: usize,
    mean_diff: Vec<f64>,
}

/// Row block size for the blocked oracle application; keeps a block resident
/// in cache between the dot and update passes.
const ORACLE_BLOCK: usize = 8;

impl CovarianceOracle {
    /// Oracle for a signal-known-exactly task: background samples plus the
    /// known signal.
    pub fn for_ske(
        noise: DiagCovariance,
        backgrounds: &[Vec<f64>],
        signal: &[f64],
    ) -> Result<Self, ObserverError> {
        let m = noise.len();
        check_len(m, signal.len())?;
        let background_rows = flatten_centered(backgrounds, m)?;
        Ok(Self {
            noise,
            n_background: backgrounds.len(),
            background_rows,
            signal_rows: Vec::new(),
            n_signal: 0,
            mean_diff: signal.to_vec(),
        })
    }

    /// Oracle for a signal-known-statistically task: background samples plus
    /// signal samples; the class-mean difference is the sample-mean signal.
    pub fn for_sks(
        noise: DiagCovariance,
        backgrounds: &[Vec<f64>],
        signals: &[Vec<f64>],
    ) -> Result<Self, ObserverError> {
        if signals.is_empty() {
            return Err(ObserverError::Empty);
        }
        let m = noise.len();
        let background_rows = flatten_centered(backgrounds, m)?;
        check_len(m, signals[0].len())?;
        let (mean_signal, signal_devs) = centered_deviations(signals);
        let mut signal_rows = Vec::with_capacity(signals.len() * m);
        for d in &signal_devs {
            signal_rows.extend_from_slice(d);
        }
        Ok(Self {
            noise,
            n_background: backgrounds.len(),
            background_rows,
            signal_rows,
            n_signal: signals.len(),
            mean_diff: mean_signal,
        })
    }

    pub fn dim(&self) -> usize {
        self.noise.len()
    }

    pub fn n_background_samples(&self) -> usize {
        self.n_background
    }

    /// Class-mean difference `Δḡ`, the right-hand side of the template solve.
    pub fn mean_diff(&self) -> &[f64] {
        &self.mean_diff
    }

    pub fn noise(&self) -> &DiagCovariance {
        &self.noise
    }

    /// `K v` without forming `K`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, ObserverError> {
        let m = self.dim();
        check_len(m, v.len())?;
        let mut out = vec![0.0; m];
        self.noise.apply_add(v, &mut out);
        if self.n_background > 0 {
            let scale = 1.0 / self.n_background as f64;
            rank_update_blocked(&mut out, &self.background_rows, m, scale, v);
        }
        if self.n_signal > 0 {
            let scale = 0.5 / self.n_signal as f64;
            rank_update_blocked(&mut out, &self.signal_rows, m, scale, v);
        }
        Ok(out)
    }
}

fn flatten_centered(samples: &[Vec<f64>], m: usize) -> Result<Vec<f64>, ObserverError> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    check_len(m, samples[0].len())?;
    let (_, devs) = centered_deviations(samples);
    let mut rows = Vec::with_capacity(samples.len() * m);
    for d in &devs {
        rows.extend_from_slice(d);
    }
    Ok(rows)
}

/// `out += scale * Σ_i row_i (row_i ⋅ v)` over flattened rows, processed in
/// blocks so each block stays cache-resident between its two passes.
fn rank_update_blocked(out: &mut [f64], rows: &[f64], m: usize, scale: f64, v: &[f64]) {
    for block in rows.chunks(ORACLE_BLOCK * m) {
        let mut coeffs = [0.0f64; ORACLE_BLOCK];
        for (k, row) in block.chunks_exact(m).enumerate() {
            coeffs[k] = scale * dot(row, v);
        }
        for (k, row) in block.chunks_exact(m).enumerate() {
            axpy(out, coeffs[k], row);
        }
    }
}

/// Conjugate-gradient settings. `max_iters` defaults to ten times the pixel
/// count; `tol` is the relative residual target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    pub tol: f64,
    pub max_iters: Option<usize>,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: None }
    }
}

/// Converged conjugate-gradient solution with its verification data.
#[derive(Debug, Clone)]
pub struct CgSolution {
    pub template: Template,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `K w = Δḡ` by matrix-free conjugate gradients on the covariance
/// oracle. The returned relative residual is recomputed from scratch, so the
/// postcondition does not rely on the recurrence.
pub fn solve_ho_template_cg(
    oracle: &CovarianceOracle,
    config: &CgConfig,
) -> Result<CgSolution, ObserverError> {
    assert!(config.tol > 0.0, "tolerance must be positive");
    let m = oracle.dim();
    let b = oracle.mean_diff().to_vec();
    let b_norm = norm(&b);
    if b_norm == 0.0 {
        // Zero right-hand side has the exact solution zero.
        return Ok(CgSolution {
            template: Template::new(vec![0.0; m]),
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let max_iters = config.max_iters.unwrap_or(10 * m);

    let mut w = vec![0.0; m];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rsq = dot(&r, &r);
    let mut iterations = 0;
    while rsq.sqrt() / b_norm > config.tol {
        if iterations >= max_iters {
            return Err(ObserverError::NotConverged {
                iterations,
                relative_residual: rsq.sqrt() / b_norm,
            });
        }
        let kp = oracle.apply(&p)?;
        let alpha = rsq / dot(&p, &kp);
        axpy(&mut w, alpha, &p);
        axpy(&mut r, -alpha, &kp);
        let rsq_next = dot(&r, &r);
        let beta = rsq_next / rsq;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rsq = rsq_next;
        iterations += 1;
    }

    // Verify with a fresh residual rather than the recurrence value.
    let kw = oracle.apply(&w)?;
    let true_resid = norm(&sub(&b, &kw)) / b_norm;
    if true_resid > 10.0 * config.tol {
        return Err(ObserverError::NotConverged { iterations, relative_residual: true_resid });
    }
    Ok(CgSolution { template: Template::new(w), iterations, relative_residual: true_resid })
}

/// Solves the same template system through the Woodbury identity.
///
/// With `K = D + (1/N) U U^T` for centered sample columns `U`, the inverse
/// application reduces to the dense N-by-N solve
/// `(N I + U^T D^-1 U) y = U^T D^-1 Δḡ`, after which
/// `w = D^-1 Δḡ - D^-1 U y`. Sample covariance uses the 1/N convention, so
/// this matches the conjugate-gradient route exactly in exact arithmetic.
pub fn woodbury_ho_template(
    centered_samples: &[Vec<f64>],
    noise: &DiagCovariance,
    mean_diff: &[f64],
) -> Result<Template, ObserverError> {
    let m = noise.len();
    check_len(m, mean_diff.len())?;
    let d_inv_rhs: Vec<f64> = noise.solve(mean_diff);
    let n = centered_samples.len();
    if n == 0 {
        return Ok(Template::new(d_inv_rhs));
    }

    // Scaled rows W = U^T D^-1/2 so the Gram matrix is W W^T.
    let inv_sqrt: Vec<f64> = noise.as_slice().iter().map(|&d| 1.0 / d.sqrt()).collect();
    let mut scaled = Vec::with_capacity(n * m);
    for s in centered_samples {
        check_len(m, s.len())?;
        scaled.extend(s.iter().zip(&inv_sqrt).map(|(&u, &isq)| u * isq));
    }

    // Inner matrix N I + W W^T, filled symmetrically.
    let mut inner = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let row_i = &scaled[i * m..(i + 1) * m];
        for j in i..n {
            let g = dot(row_i, &scaled[j * m..(j + 1) * m]);
            inner[(i, j)] = g;
            inner[(j, i)] = g;
        }
        inner[(i, i)] += n as f64;
    }

    let mut rhs = DVector::<f64>::zeros(n);
    for i in 0..n {
        rhs[i] = dot(&centered_samples[i], &d_inv_rhs);
    }

    let chol = Cholesky::new(inner).ok_or(ObserverError::NotPositiveDefinite)?;
    let y = chol.solve(&rhs);

    let mut w = d_inv_rhs;
    let noise_diag = noise.as_slice();
    for i in 0..n {
        let yi = y[i];
        for (k, (&u, &d)) in centered_samples[i].iter().zip(noise_diag).enumerate() {
            w[k] -= yi * u / d;
        }
    }
    Ok(Template::new(w))
}
