//! Lumpy background model: a Poisson-distributed number of identical
//! isotropic Gaussian lumps dropped uniformly over the field of view.

use rand::Rng;

use super::{separable_gaussian_add, GaussianKernel, PixelGrid};
use crate::rng::sample_poisson;

/// How lump centers are placed when sampling a background.
#[derive(Debug, Clone, PartialEq)]
pub enum LumpPlacement {
    /// Lump count drawn from a Poisson distribution, centers uniform over the
    /// continuous field of view. This is the standard model.
    UniformFov,
    /// Exactly `count` lumps, each center drawn uniformly from the listed
    /// nodes. Used by small enumerable validation tasks where the likelihood
    /// ratio can be computed by exhaustive summation.
    FixedCountGrid { count: usize, nodes: Vec<[f64; 2]> },
}

/// Lumpy background model constants: mean lump count `N̄`, lump amplitude `a`,
/// and lump width `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LumpyModel {
    pub mean_count: f64,
    pub amplitude: f64,
    pub width: f64,
    pub placement: LumpPlacement,
}

impl LumpyModel {
    /// The standard model with uniform placement.
    pub fn new(mean_count: f64, amplitude: f64, width: f64) -> Self {
        assert!(mean_count >= 0.0, "mean lump count must be non-negative");
        assert!(amplitude > 0.0 && width > 0.0, "lump amplitude and width must be positive");
        Self { mean_count, amplitude, width, placement: LumpPlacement::UniformFov }
    }

    /// Restricts placement to a fixed count over discrete candidate nodes.
    pub fn with_fixed_count_grid(mut self, count: usize, nodes: Vec<[f64; 2]>) -> Self {
        assert!(!nodes.is_empty(), "node list must not be empty");
        self.placement = LumpPlacement::FixedCountGrid { count, nodes };
        self
    }

    /// Peak of one imaged lump: `a h s^2 / (w^2 + s^2)`.
    pub fn imaged_peak(&self, kernel: &GaussianKernel) -> f64 {
        let s2 = self.width * self.width;
        self.amplitude * kernel.height * s2 / (kernel.width * kernel.width + s2)
    }

    /// Pooled variance of one imaged lump: `w^2 + s^2`.
    pub fn imaged_variance(&self, kernel: &GaussianKernel) -> f64 {
        kernel.width * kernel.width + self.width * self.width
    }
}

/// One sampled lumpy background: the list of lump centers.
#[derive(Debug, Clone, PartialEq)]
pub struct LumpyParams {
    pub centers: Vec<[f64; 2]>,
}

impl LumpyParams {
    pub fn count(&self) -> usize {
        self.centers.len()
    }
}

/// Draws one background from the lumpy model.
pub fn sample_lumpy<R: Rng + ?Sized>(rng: &mut R, model: &LumpyModel, grid: &PixelGrid) -> LumpyParams {
    let centers = match &model.placement {
        LumpPlacement::UniformFov => {
            let n = sample_poisson(rng, model.mean_count);
            (0..n).map(|_| grid.sample_point(rng)).collect()
        }
        LumpPlacement::FixedCountGrid { count, nodes } => (0..*count)
            .map(|_| nodes[rng.gen_range(0..nodes.len())])
            .collect(),
    };
    LumpyParams { centers }
}

/// Renders the mean measurement of a lumpy background: each lump maps to an
/// isotropic Gaussian with peak `a h s^2 / (w^2 + s^2)` and variance
/// `w^2 + s^2`, evaluated separably per lump.
pub fn render_lumpy(
    params: &LumpyParams,
    model: &LumpyModel,
    kernel: &GaussianKernel,
    grid: &PixelGrid,
) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    add_lumps(&mut out, &params.centers, model, kernel, grid, 1.0);
    out
}

/// Adds (or with `scale = -1.0` removes) imaged lumps in place. Exposed to the
/// Markov-chain sampler so single-lump moves cost one separable render.
pub(crate) fn add_lumps(
    out: &mut [f64],
    centers: &[[f64; 2]],
    model: &LumpyModel,
    kernel: &GaussianKernel,
    grid: &PixelGrid,
    scale: f64,
) {
    let peak = scale * model.imaged_peak(kernel);
    let inv_two_var = 1.0 / (2.0 * model.imaged_variance(kernel));
    for &c in centers {
        separable_gaussian_add(out, grid, peak, c, inv_two_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::child_rng;
    use approx::assert_relative_eq;

    fn paper_model() -> (LumpyModel, GaussianKernel) {
        (LumpyModel::new(5.0, 1.0, 7.0), GaussianKernel::new(40.0, 0.5))
    }

    #[test]
    fn single_lump_peak_matches_closed_form() {
        // a = 1, h = 40, s = 7, w = 0.5 gives peak 40*49/49.25.
        let (model, kernel) = paper_model();
        let grid = PixelGrid::square(64);
        let params = LumpyParams { centers: vec![[20.0, 31.0]] };
        let img = render_lumpy(&params, &model, &kernel, &grid);
        let expected = 40.0 * 49.0 / 49.25;
        assert_relative_eq!(img[31 * 64 + 20], expected, max_relative = 1e-12);
        assert_relative_eq!(expected, 39.796_954_314_720_815, max_relative = 1e-12);
    }

    #[test]
    fn render_is_additive_in_lumps() {
        let (model, kernel) = paper_model();
        let grid = PixelGrid::square(32);
        let a = LumpyParams { centers: vec![[5.5, 7.0]] };
        let b = LumpyParams { centers: vec![[20.0, 12.25]] };
        let both = LumpyParams { centers: vec![[5.5, 7.0], [20.0, 12.25]] };
        let ia = render_lumpy(&a, &model, &kernel, &grid);
        let ib = render_lumpy(&b, &model, &kernel, &grid);
        let iboth = render_lumpy(&both, &model, &kernel, &grid);
        for i in 0..grid.len() {
            assert_relative_eq!(iboth[i], ia[i] + ib[i], max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_background_renders_zero() {
        let (model, kernel) = paper_model();
        let grid = PixelGrid::square(16);
        let img = render_lumpy(&LumpyParams { centers: vec![] }, &model, &kernel, &grid);
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sampled_counts_match_poisson_mean() {
        let (model, _) = paper_model();
        let grid = PixelGrid::square(64);
        let mut rng = child_rng(11, "lumpy-count", 0);
        let n = 20_000;
        let total: usize = (0..n)
            .map(|_| sample_lumpy(&mut rng, &model, &grid).count())
            .sum();
        let mean = total as f64 / n as f64;
        let se = (5.0 / n as f64).sqrt();
        assert!((mean - 5.0).abs() < 4.0 * se, "sample mean {mean} outside 4 SE of 5");
    }

    #[test]
    fn sampled_centers_stay_in_fov() {
        let (model, _) = paper_model();
        let grid = PixelGrid::new(48, 24);
        let mut rng = child_rng(11, "lumpy-fov", 0);
        for _ in 0..200 {
            for &c in &sample_lumpy(&mut rng, &model, &grid).centers {
                assert!(grid.contains(c));
            }
        }
    }

    #[test]
    fn fixed_count_grid_draws_from_nodes() {
        let nodes = vec![[1.0, 1.0], [3.0, 5.0], [6.0, 2.0]];
        let model = LumpyModel::new(5.0, 1.0, 2.0).with_fixed_count_grid(1, nodes.clone());
        let grid = PixelGrid::square(8);
        let mut rng = child_rng(11, "lumpy-grid", 0);
        let mut seen = [false; 3];
        for _ in 0..200 {
            let p = sample_lumpy(&mut rng, &model, &grid);
            assert_eq!(p.count(), 1);
            let idx = nodes.iter().position(|n| *n == p.centers[0]).expect("off-node center");
            seen[idx] = true;
        }
        assert!(seen.iter().all(|&s| s), "all nodes should be visited");
    }
}
