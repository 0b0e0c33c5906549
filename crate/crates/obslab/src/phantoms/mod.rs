//! Stochastic object models and their mean measurement renders.
//!
//! Objects live in a continuous field of view measured in pixel units; the
//! imaging system is an idealized continuous-to-discrete map with an isotropic
//! Gaussian kernel, so the mean measurement of every Gaussian-shaped object is
//! again a Gaussian with pooled variance. All renders produce flat row-major
//! `Vec<f64>` images whose length matches the pixel grid.

mod clb;
mod lumpy;

pub use clb::{render_clb, sample_clb, ClbBlob, ClbCluster, ClbConstants, ClbParams};
pub use lumpy::{render_lumpy, sample_lumpy, LumpyModel, LumpyParams, LumpPlacement};
pub(crate) use lumpy::add_lumps;

use rand::Rng;

/// Rectangular pixel grid; pixel `(x, y)` sits at coordinate `(x, y)` and
/// images are stored row-major with index `y * width + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelGrid {
    width: usize,
    height: usize,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "grid dimensions must be at least 1x1");
        Self { width, height }
    }

    pub fn square(side: usize) -> Self {
        Self::new(side, side)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels `M`.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Geometric center of the field of view.
    pub fn center(&self) -> [f64; 2] {
        [self.width as f64 / 2.0, self.height as f64 / 2.0]
    }

    /// Draws a point uniformly over the continuous field of view.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        [
            rng.gen::<f64>() * self.width as f64,
            rng.gen::<f64>() * self.height as f64,
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= 0.0 && p[0] < self.width as f64 && p[1] >= 0.0 && p[1] < self.height as f64
    }
}

/// Isotropic Gaussian kernel of the idealized imaging system, with overall
/// height `h` and width `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    pub height: f64,
    pub width: f64,
}

impl GaussianKernel {
    pub fn new(height: f64, width: f64) -> Self {
        assert!(height > 0.0 && width > 0.0, "kernel height and width must be positive");
        Self { height, width }
    }
}

/// Deterministic Gaussian signal for signal-known-exactly tasks, described in
/// object space by amplitude `A`, center, and width `w_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeSignal {
    pub amplitude: f64,
    pub center: [f64; 2],
    pub width: f64,
}

/// One draw of the random signal for signal-known-statistically tasks: an
/// elongated Gaussian with half-widths `w1`, `w2` rotated by `angle`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SksSignalParams {
    pub amplitude: f64,
    pub center: [f64; 2],
    pub angle: f64,
    pub w1: f64,
    pub w2: f64,
}

/// Prior over [`SksSignalParams`]: fixed amplitude, uniform angle, uniform
/// half-widths in `width_range`, center uniform over the field of view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SksSignalPrior {
    pub amplitude: f64,
    pub width_range: (f64, f64),
}

impl SksSignalPrior {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, grid: &PixelGrid) -> SksSignalParams {
        let (lo, hi) = self.width_range;
        assert!(lo > 0.0 && hi >= lo, "width range must be positive and ordered");
        SksSignalParams {
            amplitude: self.amplitude,
            center: grid.sample_point(rng),
            angle: rng.gen::<f64>() * std::f64::consts::TAU,
            w1: lo + rng.gen::<f64>() * (hi - lo),
            w2: lo + rng.gen::<f64>() * (hi - lo),
        }
    }
}

/// Renders an isotropic pixel-domain Gaussian bump (no imaging kernel).
pub fn render_gaussian_bump(grid: &PixelGrid, amplitude: f64, center: [f64; 2], width: f64) -> Vec<f64> {
    assert!(width > 0.0, "bump width must be positive");
    let inv_two_var = 1.0 / (2.0 * width * width);
    let mut out = vec![0.0; grid.len()];
    separable_gaussian_add(&mut out, grid, amplitude, center, inv_two_var);
    out
}

/// Adds `amplitude * exp(-|r - center|^2 * inv_two_var)` to `out` using the
/// separable row/column factorization of the isotropic Gaussian.
pub(crate) fn separable_gaussian_add(
    out: &mut [f64],
    grid: &PixelGrid,
    amplitude: f64,
    center: [f64; 2],
    inv_two_var: f64,
) {
    let w = grid.width();
    let h = grid.height();
    debug_assert_eq!(out.len(), w * h);
    let col: Vec<f64> = (0..w)
        .map(|x| {
            let dx = x as f64 - center[0];
            (-dx * dx * inv_two_var).exp()
        })
        .collect();
    for y in 0..h {
        let dy = y as f64 - center[1];
        let fy = amplitude * (-dy * dy * inv_two_var).exp();
        let row = &mut out[y * w..(y + 1) * w];
        for (o, c) in row.iter_mut().zip(&col) {
            *o += fy * c;
        }
    }
}

/// Mean measurement of the SKE signal: the object-space Gaussian convolved
/// with the imaging kernel, giving peak `A h w_s^2 / (w^2 + w_s^2)` and
/// pooled variance `w^2 + w_s^2`.
pub fn render_ske_signal(signal: &SkeSignal, kernel: &GaussianKernel, grid: &PixelGrid) -> Vec<f64> {
    let pooled_var = kernel.width * kernel.width + signal.width * signal.width;
    let peak = signal.amplitude * kernel.height * signal.width * signal.width / pooled_var;
    let mut out = vec![0.0; grid.len()];
    separable_gaussian_add(&mut out, grid, peak, signal.center, 1.0 / (2.0 * pooled_var));
    out
}

/// Mean measurement of one SKS signal draw: an anisotropic Gaussian whose
/// half-widths pool with the kernel width axis-by-axis in the rotated frame.
pub fn render_sks_signal(params: &SksSignalParams, kernel: &GaussianKernel, grid: &PixelGrid) -> Vec<f64> {
    let w2 = kernel.width * kernel.width;
    let pooled1 = w2 + params.w1 * params.w1;
    let pooled2 = w2 + params.w2 * params.w2;
    let peak = params.amplitude * kernel.height * params.w1 * params.w2 / (pooled1 * pooled2).sqrt();
    let (sin, cos) = params.angle.sin_cos();
    let inv1 = 1.0 / (2.0 * pooled1);
    let inv2 = 1.0 / (2.0 * pooled2);
    let w = grid.width();
    let mut out = vec![0.0; grid.len()];
    for y in 0..grid.height() {
        let dy = y as f64 - params.center[1];
        for x in 0..w {
            let dx = x as f64 - params.center[0];
            // Rotate the offset into the signal frame.
            let u = cos * dx - sin * dy;
            let v = sin * dx + cos * dy;
            out[y * w + x] = peak * (-(u * u * inv1 + v * v * inv2)).exp();
        }
    }
    out
}
