//! Measurement noise models and the diagonal measurement-noise covariance.
//!
//! Measurements are `g = b + s + n` with the noise acting per pixel. Three
//! models are supported: i.i.d. Laplacian (filtered natural images), i.i.d.
//! Gaussian (electronic noise), and mixed Poisson-Gaussian (photon plus
//! electronic noise). The Poisson-Gaussian model is signal-dependent, so its
//! mean covariance depends on the mean object under both hypotheses.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::sample_laplace;
use crate::rng::sample_poisson;

/// Per-pixel measurement noise model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Zero-mean Laplacian with exponential decay `c`; variance `2 c^2`.
    Laplacian { decay: f64 },
    /// Zero-mean Gaussian with the given standard deviation.
    Gaussian { std: f64 },
    /// Poisson counts around the clean value plus zero-mean Gaussian noise.
    PoissonGaussian { gaussian_std: f64 },
}

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("negative clean mean {value} at pixel {index} under the Poisson model")]
    NegativeMean { index: usize, value: f64 },
    #[error("length mismatch: background has {background} pixels, signal {signal}")]
    LengthMismatch { background: usize, signal: usize },
}

/// Applies measurement noise to a clean (noiseless) image.
///
/// The Poisson-Gaussian model requires non-negative clean values; a negative
/// pixel is rejected as an error rather than clamped.
pub fn apply_noise<R: Rng + ?Sized>(
    rng: &mut R,
    noise: &NoiseModel,
    clean: &[f64],
) -> Result<Vec<f64>, ImagingError> {
    match *noise {
        NoiseModel::Laplacian { decay } => {
            Ok(clean.iter().map(|&c| c + sample_laplace(rng, decay)).collect())
        }
        NoiseModel::Gaussian { std } => Ok(clean
            .iter()
            .map(|&c| {
                let z: f64 = rng.sample(StandardNormal);
                c + std * z
            })
            .collect()),
        NoiseModel::PoissonGaussian { gaussian_std } => clean
            .iter()
            .enumerate()
            .map(|(index, &c)| {
                if c < 0.0 {
                    return Err(ImagingError::NegativeMean { index, value: c });
                }
                let z: f64 = rng.sample(StandardNormal);
                Ok(sample_poisson(rng, c) as f64 + gaussian_std * z)
            })
            .collect(),
    }
}

/// Strictly positive diagonal covariance matrix, stored as its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagCovariance {
    diag: Vec<f64>,
}

impl DiagCovariance {
    pub fn new(diag: Vec<f64>) -> Self {
        assert!(
            diag.iter().all(|&d| d > 0.0 && d.is_finite()),
            "covariance diagonal must be strictly positive and finite"
        );
        Self { diag }
    }

    pub fn constant(value: f64, len: usize) -> Self {
        Self::new(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.diag
    }

    /// `out += K v` for the diagonal `K`.
    pub fn apply_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.diag.len());
        debug_assert_eq!(out.len(), self.diag.len());
        for ((o, &d), &x) in out.iter_mut().zip(&self.diag).zip(v) {
            *o += d * x;
        }
    }

    /// `K^-1 v`, used as the cheap exact solve for noise-only covariances.
    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.diag.len());
        v.iter().zip(&self.diag).map(|(&x, &d)| x / d).collect()
    }
}

/// Hypothesis-averaged measurement-noise covariance `K̄_n`, diagonal for all
/// supported models.
///
/// For Laplacian and Gaussian noise the diagonal is constant. For the
/// Poisson-Gaussian model the Poisson variance tracks the mean count, so the
/// diagonal is the hypothesis-averaged mean object `b̄ + s̄/2` plus the
/// Gaussian variance.
pub fn mean_noise_covariance(
    noise: &NoiseModel,
    mean_background: &[f64],
    mean_signal: &[f64],
) -> Result<DiagCovariance, ImagingError> {
    if mean_background.len() != mean_signal.len() {
        return Err(ImagingError::LengthMismatch {
            background: mean_background.len(),
            signal: mean_signal.len(),
        });
    }
    let diag = match *noise {
        NoiseModel::Laplacian { decay } => vec![2.0 * decay * decay; mean_background.len()],
        NoiseModel::Gaussian { std } => vec![std * std; mean_background.len()],
        NoiseModel::PoissonGaussian { gaussian_std } => {
            let var = gaussian_std * gaussian_std;
            mean_background
                .iter()
                .zip(mean_signal)
                .map(|(&b, &s)| b + 0.5 * s + var)
                .collect()
        }
    };
    Ok(DiagCovariance::new(diag))
}
