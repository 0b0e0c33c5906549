//! Minimal feed-forward network machinery for the learned observers: a
//! convolutional ladder with LeakyReLU activations, one max-pooling stage, a
//! fully connected head with sigmoid output, exact reverse-mode gradients,
//! and a bias-corrected Adam optimizer.
//!
//! All parameters live in one flat `f64` vector so the optimizer, checkpoint
//! format, and finite-difference checks share a single indexing scheme. All
//! arithmetic is 64-bit.

mod ops;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::vecmath::dot;
use ops::{
    conv2d_same_backward, conv2d_same_forward, leaky_relu_backward, leaky_relu_forward,
    maxpool_forward, pooled_dim,
};

/// Magic header identifying a model checkpoint.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OBSNN01\0";

/// Probabilities are clamped to this band before logarithms so the
/// cross-entropy stays finite and the forward output stays strictly inside
/// (0, 1).
pub const PROBABILITY_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input has {got} pixels, model expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
}

/// Network shape: a ladder of same-padded convolutions feeding one pooling
/// stage and a dense-to-scalar sigmoid head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub conv_layers: usize,
    pub filters: usize,
    pub filter_size: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
}

impl ArchSpec {
    pub const DEFAULT_FILTERS: usize = 32;
    pub const DEFAULT_FILTER_SIZE: usize = 5;
    /// Negative slope of the LeakyReLU activation.
    pub const LEAKY_SLOPE: f64 = 0.01;

    /// An architecture with the default 32 filters of 5x5 support, 2x2
    /// pooling with stride 2.
    pub fn new(input_height: usize, input_width: usize, conv_layers: usize) -> Self {
        let spec = Self {
            input_height,
            input_width,
            conv_layers,
            filters: Self::DEFAULT_FILTERS,
            filter_size: Self::DEFAULT_FILTER_SIZE,
            pool_window: 2,
            pool_stride: 2,
        };
        spec.validate();
        spec
    }

    pub fn with_filters(mut self, filters: usize) -> Self {
        self.filters = filters;
        self.validate();
        self
    }

    pub fn with_filter_size(mut self, filter_size: usize) -> Self {
        self.filter_size = filter_size;
        self.validate();
        self
    }

    fn validate(&self) {
        assert!(self.input_height >= 1 && self.input_width >= 1, "empty input grid");
        assert!(self.conv_layers >= 1, "at least one convolutional layer is required");
        assert!(self.filters >= 1, "at least one filter is required");
        assert!(self.filter_size % 2 == 1, "same padding requires an odd filter size");
        assert!(self.pool_window >= 1 && self.pool_stride >= 1, "degenerate pooling");
    }

    pub fn input_pixels(&self) -> usize {
        self.input_height * self.input_width
    }

    /// Feature-map dimensions after the pooling stage; partial edge windows
    /// are kept, so odd dimensions round up.
    pub fn pooled_dims(&self) -> (usize, usize) {
        (
            pooled_dim(self.input_height, self.pool_stride),
            pooled_dim(self.input_width, self.pool_stride),
        )
    }

    /// Fan-in of the dense head.
    pub fn dense_inputs(&self) -> usize {
        let (ph, pw) = self.pooled_dims();
        self.filters * ph * pw
    }

    /// Input channel count of conv layer `l`.
    fn in_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            self.filters
        }
    }

    pub fn param_count(&self) -> usize {
        let k2 = self.filter_size * self.filter_size;
        let mut n = 0;
        for l in 0..self.conv_layers {
            n += self.filters * self.in_channels(l) * k2 + self.filters;
        }
        n + self.dense_inputs() + 1
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    conv_w: Vec<Range<usize>>,
    conv_b: Vec<Range<usize>>,
    dense_w: Range<usize>,
    dense_b: usize,
}

impl Layout {
    fn new(arch: &ArchSpec) -> Self {
        let k2 = arch.filter_size * arch.filter_size;
        let mut conv_w = Vec::with_capacity(arch.conv_layers);
        let mut conv_b = Vec::with_capacity(arch.conv_layers);
        let mut off = 0;
        for l in 0..arch.conv_layers {
            let wlen = arch.filters * arch.in_channels(l) * k2;
            conv_w.push(off..off + wlen);
            off += wlen;
            conv_b.push(off..off + arch.filters);
            off += arch.filters;
        }
        let dlen = arch.dense_inputs();
        let dense_w = off..off + dlen;
        off += dlen;
        let dense_b = off;
        Self { conv_w, conv_b, dense_w, dense_b }
    }
}

/// Scratch buffers for one forward/backward pass; allocate once and reuse
/// across a training run.
#[derive(Debug, Clone)]
pub struct CnnWorkspace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    argmax: Vec<usize>,
    dact: Vec<f64>,
    dpre: Vec<f64>,
    logit: f64,
}

impl CnnWorkspace {
    pub fn new(arch: &ArchSpec) -> Self {
        let plane = arch.input_pixels();
        let feat = arch.filters * plane;
        Self {
            input: vec![0.0; plane],
            pre: vec![vec![0.0; feat]; arch.conv_layers],
            act: vec![vec![0.0; feat]; arch.conv_layers],
            pooled: vec![0.0; arch.dense_inputs()],
            argmax: vec![0; arch.dense_inputs()],
            dact: vec![0.0; feat],
            dpre: vec![0.0; feat],
            logit: 0.0,
        }
    }
}

/// The CNN observer model: architecture plus one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    arch: ArchSpec,
    params: Vec<f64>,
}

impl CnnModel {
    /// Seeded initialization: weights uniform in the symmetric Glorot range
    /// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init<R: Rng + ?Sized>(arch: ArchSpec, rng: &mut R) -> Self {
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; arch.param_count()];
        let k2 = arch.filter_size * arch.filter_size;
        for l in 0..arch.conv_layers {
            let fan_in = arch.in_channels(l) * k2;
            let fan_out = arch.filters * k2;
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut params[layout.conv_w[l].clone()] {
                *w = rng.gen_range(-a..a);
            }
        }
        let a = (6.0 / (arch.dense_inputs() + 1) as f64).sqrt();
        for w in &mut params[layout.dense_w.clone()] {
            *w = rng.gen_range(-a..a);
        }
        Self { arch, params }
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Pre-sigmoid output; activations stay in the workspace for a following
    /// [`CnnModel::backward`].
    pub fn logit(&self, g: &[f64], ws: &mut CnnWorkspace) -> Result<f64, NeuralError> {
        let arch = &self.arch;
        if g.len() != arch.input_pixels() {
            return Err(NeuralError::ShapeMismatch { expected: arch.input_pixels(), got: g.len() });
        }
        let layout = Layout::new(arch);
        let (h, w, k, f) = (arch.input_height, arch.input_width, arch.filter_size, arch.filters);
        ws.input.copy_from_slice(g);
        for l in 0..arch.conv_layers {
            let (input, in_c): (&[f64], usize) = if l == 0 {
                (&ws.input, 1)
            } else {
                // Split so the previous activation can be read while this
                // layer's buffers are written.
                (&ws.act[l - 1], f)
            };
            // Work around the borrow of ws.act[l-1]: take pre[l] out, then put
            // it back after the convolution.
            let mut pre = std::mem::take(&mut ws.pre[l]);
            conv2d_same_forward(
                input,
                in_c,
                h,
                w,
                &self.params[layout.conv_w[l].clone()],
                &self.params[layout.conv_b[l].clone()],
                f,
                k,
                &mut pre,
            );
            ws.pre[l] = pre;
            let mut act = std::mem::take(&mut ws.act[l]);
            leaky_relu_forward(&ws.pre[l], &mut act, ArchSpec::LEAKY_SLOPE);
            ws.act[l] = act;
        }
        maxpool_forward(
            &ws.act[arch.conv_layers - 1],
            f,
            h,
            w,
            arch.pool_window,
            arch.pool_stride,
            &mut ws.pooled,
            &mut ws.argmax,
        );
        let logit = dot(&self.params[layout.dense_w.clone()], &ws.pooled)
            + self.params[layout.dense_b];
        ws.logit = logit;
        Ok(logit)
    }

    /// Posterior-probability output `sigmoid(logit)`, clamped strictly inside
    /// (0, 1).
    pub fn forward(&self, g: &[f64], ws: &mut CnnWorkspace) -> Result<f64, NeuralError> {
        Ok(sigmoid(self.logit(g, ws)?).clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP))
    }

    /// Accumulates `dlogit * ∂logit/∂Θ` into `grads`, using the activations
    /// stored by the most recent [`CnnModel::logit`] call on `ws`.
    pub fn backward(&self, ws: &mut CnnWorkspace, dlogit: f64, grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer shape mismatch");
        let arch = &self.arch;
        let layout = Layout::new(arch);
        let (h, w, k, f) = (arch.input_height, arch.input_width, arch.filter_size, arch.filters);

        grads[layout.dense_b] += dlogit;
        for (gslot, &p) in grads[layout.dense_w.clone()].iter_mut().zip(&ws.pooled) {
            *gslot += dlogit * p;
        }
        // dL/d(pooled) = dlogit * dense_w, scattered through the pool.
        ws.dact.fill(0.0);
        let dense_w = &self.params[layout.dense_w.clone()];
        for (&wi, &idx) in dense_w.iter().zip(&ws.argmax) {
            ws.dact[idx] += dlogit * wi;
        }

        for l in (0..arch.conv_layers).rev() {
            leaky_relu_backward(&ws.pre[l], &ws.dact, &mut ws.dpre, ArchSpec::LEAKY_SLOPE);
            let (input, in_c): (&[f64], usize) =
                if l == 0 { (&ws.input, 1) } else { (&ws.act[l - 1], f) };
            let dinput = if l == 0 {
                None
            } else {
                ws.dact.fill(0.0);
                Some(&mut ws.dact[..])
            };
            let (gw, gb) = split_two(grads, layout.conv_w[l].clone(), layout.conv_b[l].clone());
            conv2d_same_backward(
                input,
                in_c,
                h,
                w,
                &self.params[layout.conv_w[l].clone()],
                f,
                k,
                &ws.dpre,
                dinput,
                gw,
                gb,
            );
        }
    }

    /// Writes the checkpoint: magic, architecture descriptor, then the flat
    /// parameter vector as little-endian 64-bit floats.
    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(CHECKPOINT_MAGIC)?;
        for v in [
            self.arch.input_height,
            self.arch.input_width,
            self.arch.conv_layers,
            self.arch.filters,
            self.arch.filter_size,
            self.arch.pool_window,
            self.arch.pool_stride,
        ] {
            f.write_all(&(v as u32).to_le_bytes())?;
        }
        f.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            f.write_all(&p.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        let mut f = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NeuralError::InvalidCheckpoint("bad magic header".into()));
        }
        let mut fields = [0usize; 7];
        for v in &mut fields {
            let mut b = [0u8; 4];
            f.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b) as usize;
        }
        let arch = ArchSpec {
            input_height: fields[0],
            input_width: fields[1],
            conv_layers: fields[2],
            filters: fields[3],
            filter_size: fields[4],
            pool_window: fields[5],
            pool_stride: fields[6],
        };
        if fields.contains(&0) || arch.filter_size % 2 == 0 {
            return Err(NeuralError::InvalidCheckpoint("invalid architecture descriptor".into()));
        }
        let mut b8 = [0u8; 8];
        f.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        if count != arch.param_count() {
            return Err(NeuralError::InvalidCheckpoint(format!(
                "parameter count {count} does not match architecture ({})",
                arch.param_count()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            f.read_exact(&mut b8)?;
            params.push(f64::from_le_bytes(b8));
        }
        Ok(Self { arch, params })
    }
}

/// Reborrows two disjoint ranges of one slice mutably.
fn split_two(s: &mut [f64], a: Range<usize>, b: Range<usize>) -> (&mut [f64], &mut [f64]) {
    assert!(a.end <= b.start, "ranges must be ordered and disjoint");
    let (left, right) = s.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.len()])
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy `-[y ln p + (1-y) ln(1-p)]` with `p` clamped to
/// `[1e-12, 1-1e-12]` so the result stays finite.
pub fn cross_entropy(p: f64, y: f64) -> f64 {
    debug_assert!(y == 0.0 || y == 1.0, "labels are 0 or 1");
    let p = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean cross-entropy and mean parameter gradient over a batch of
/// `(image, label)` pairs. Gradients are written (not accumulated) into
/// `grads`.
pub fn batch_loss_and_gradient(
    model: &CnnModel,
    batch: &[(&[f64], f64)],
    ws: &mut CnnWorkspace,
    grads: &mut [f64],
) -> Result<f64, NeuralError> {
    if batch.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    grads.fill(0.0);
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &(g, y) in batch {
        let z = model.logit(g, ws)?;
        let p = sigmoid(z);
        loss += cross_entropy(p, y);
        // d(cross-entropy)/d(logit) = p - y.
        model.backward(ws, (p - y) * inv, grads);
    }
    Ok(loss * inv)
}

/// Central-difference derivative of the single-sample cross-entropy with
/// respect to one parameter; the reference for gradient checks.
pub fn finite_difference_gradient(
    model: &CnnModel,
    image: &[f64],
    label: f64,
    index: usize,
    step: f64,
) -> Result<f64, NeuralError> {
    assert!(step > 0.0, "step must be positive");
    let mut ws = CnnWorkspace::new(model.arch());
    let mut probe = model.clone();
    probe.params_mut()[index] += step;
    let up = cross_entropy(sigmoid(probe.logit(image, &mut ws)?), label);
    probe.params_mut()[index] -= 2.0 * step;
    let down = cross_entropy(sigmoid(probe.logit(image, &mut ws)?), label);
    Ok((up - down) / (2.0 * step))
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Bias-corrected Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        assert!(config.lr > 0.0 && config.eps > 0.0, "degenerate Adam hyperparameters");
        assert!((0.0..1.0).contains(&config.beta1) && (0.0..1.0).contains(&config.beta2));
        Self { config, t: 0, m: vec![0.0; param_count], v: vec![0.0; param_count] }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: `θ -= lr * m̂ / (sqrt(v̂) + ε)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step_with_lr(params, grads, self.config.lr);
    }

    /// [`AdamState::step`] with an externally scheduled learning rate.
    pub fn step_with_lr(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter shape mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient shape mismatch");
        assert!(lr > 0.0, "learning rate must be positive");
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::child_rng;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn small_arch() -> ArchSpec {
        ArchSpec::new(8, 8, 2).with_filters(4).with_filter_size(3)
    }

    #[test]
    fn zero_dense_head_outputs_half() {
        let arch = small_arch();
        let mut rng = child_rng(3, "neural-zero-head", 0);
        let mut model = CnnModel::init(arch, &mut rng);
        let layout = Layout::new(&arch);
        for p in &mut model.params_mut()[layout.dense_w.start..] {
            *p = 0.0;
        }
        let mut ws = CnnWorkspace::new(&arch);
        for trial in 0..3 {
            let g: Vec<f64> = (0..64).map(|i| ((i + trial) as f64 * 0.7).sin()).collect();
            assert_eq!(model.forward(&g, &mut ws).unwrap(), 0.5);
        }
    }

    #[test]
    fn forward_stays_strictly_inside_unit_interval() {
        let arch = ArchSpec::new(2, 2, 1).with_filters(1).with_filter_size(1);
        let mut rng = child_rng(3, "neural-clamp", 0);
        let mut model = CnnModel::init(arch, &mut rng);
        for p in model.params_mut() {
            *p = 50.0;
        }
        let mut ws = CnnWorkspace::new(&arch);
        let p = model.forward(&[1e6, 1e6, 1e6, 1e6], &mut ws).unwrap();
        assert!(p < 1.0 && p > 0.0);
        assert!(cross_entropy(p, 0.0).is_finite());
    }

    #[test]
    fn cross_entropy_reference_values() {
        assert_relative_eq!(cross_entropy(0.5, 0.0), std::f64::consts::LN_2, max_relative = 1e-12);
        assert_relative_eq!(cross_entropy(0.5, 1.0), std::f64::consts::LN_2, max_relative = 1e-12);
        assert!(cross_entropy(1.0 - 1e-9, 1.0) < 1e-8);
        assert!(cross_entropy(1e-9, 0.0) < 1e-8);
        assert!(cross_entropy(0.0, 1.0).is_finite());
        assert!(cross_entropy(1.0, 0.0).is_finite());
    }

    #[test]
    fn param_count_matches_layout() {
        let arch = small_arch();
        let layout = Layout::new(&arch);
        assert_eq!(layout.dense_b + 1, arch.param_count());
        // 8x8 pools to 4x4 under stride 2.
        assert_eq!(arch.pooled_dims(), (4, 4));
        assert_eq!(arch.dense_inputs(), 4 * 16);
        // Odd dims round up.
        assert_eq!(ArchSpec::new(5, 3, 1).pooled_dims(), (3, 2));
        assert_eq!(ArchSpec::new(1, 1, 1).pooled_dims(), (1, 1));
    }

    #[test]
    fn gradients_match_finite_differences_on_random_model() {
        // Every parameter of a random 8x8 two-layer model, both labels,
        // against central differences with the pinned 1e-4 step.
        let arch = small_arch();
        let mut rng = child_rng(3, "neural-gradcheck", 0);
        let model = CnnModel::init(arch, &mut rng);
        let image: Vec<f64> = (0..64).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let mut ws = CnnWorkspace::new(&arch);
        let mut grads = vec![0.0; model.param_count()];
        for label in [0.0, 1.0] {
            batch_loss_and_gradient(&model, &[(&image, label)], &mut ws, &mut grads).unwrap();
            for idx in 0..model.param_count() {
                let num = finite_difference_gradient(&model, &image, label, idx, 1e-4).unwrap();
                let denom = grads[idx].abs().max(num.abs()).max(1e-8);
                let rel = (grads[idx] - num).abs() / denom;
                assert!(
                    rel < 1e-4,
                    "parameter {idx} label {label}: analytic {} vs numeric {num} (rel {rel:.2e})",
                    grads[idx]
                );
            }
        }
    }

    #[test]
    fn batch_gradient_is_mean_invariant() {
        let arch = small_arch();
        let mut rng = child_rng(3, "neural-batch", 0);
        let model = CnnModel::init(arch, &mut rng);
        let g0: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
        let g1: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
        let mut ws = CnnWorkspace::new(&arch);
        let mut a = vec![0.0; model.param_count()];
        let mut b = vec![0.0; model.param_count()];

        // Zero-variance batch equals the single-item gradient.
        let single =
            batch_loss_and_gradient(&model, &[(&g0, 1.0)], &mut ws, &mut a).unwrap();
        let repeated =
            batch_loss_and_gradient(&model, &[(&g0, 1.0), (&g0, 1.0), (&g0, 1.0)], &mut ws, &mut b)
                .unwrap();
        assert_relative_eq!(single, repeated, max_relative = 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, max_relative = 1e-9, epsilon = 1e-15);
        }

        // Duplicating a mixed batch leaves the mean gradient unchanged.
        let mixed: Vec<(&[f64], f64)> = vec![(&g0, 0.0), (&g1, 1.0)];
        let doubled: Vec<(&[f64], f64)> = vec![(&g0, 0.0), (&g1, 1.0), (&g0, 0.0), (&g1, 1.0)];
        let la = batch_loss_and_gradient(&model, &mixed, &mut ws, &mut a).unwrap();
        let lb = batch_loss_and_gradient(&model, &doubled, &mut ws, &mut b).unwrap();
        assert_relative_eq!(la, lb, max_relative = 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, max_relative = 1e-9, epsilon = 1e-15);
        }
        assert!(matches!(
            batch_loss_and_gradient(&model, &[], &mut ws, &mut a),
            Err(NeuralError::EmptyBatch)
        ));
    }

    #[test]
    fn adam_first_step_moves_by_lr_sign() {
        let config = AdamConfig::default();
        let mut state = AdamState::new(config, 3);
        let mut params = vec![0.2, -0.4, 1.0];
        let before = params.clone();
        state.step(&mut params, &[0.5, -2.0, 1e-3]);
        for i in 0..3 {
            let moved = params[i] - before[i];
            let expected = -config.lr * [0.5f64, -2.0, 1e-3][i].signum();
            assert_relative_eq!(moved, expected, max_relative = 1e-4);
        }
        // Zero gradient leaves parameters untouched.
        let mut state = AdamState::new(config, 2);
        let mut params = vec![1.0, -1.0];
        for _ in 0..10 {
            state.step(&mut params, &[0.0, 0.0]);
        }
        assert_eq!(params, vec![1.0, -1.0]);
    }

    #[test]
    fn training_trajectories_are_bit_identical_across_runs() {
        let arch = ArchSpec::new(4, 4, 1).with_filters(2).with_filter_size(3);
        let run = || {
            let mut rng = child_rng(99, "neural-determinism", 0);
            let mut model = CnnModel::init(arch, &mut rng);
            let mut state = AdamState::new(AdamConfig::default(), model.param_count());
            let mut ws = CnnWorkspace::new(&arch);
            let mut grads = vec![0.0; model.param_count()];
            for step in 0..25 {
                let g: Vec<f64> = (0..16).map(|i| ((i * step) as f64 * 0.3).cos()).collect();
                let y = (step % 2) as f64;
                batch_loss_and_gradient(&model, &[(&g, y)], &mut ws, &mut grads).unwrap();
                state.step(model.params_mut(), &grads);
            }
            model.params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn linearly_separable_toy_task_trains_below_one_percent_loss() {
        // Two-pixel images, classes at (-1,-1) and (+1,+1): cross-entropy
        // falls below 0.01 within 2,000 full-batch steps.
        let arch = ArchSpec::new(1, 2, 1).with_filters(2).with_filter_size(1);
        let mut rng = child_rng(7, "neural-separable", 0);
        let mut model = CnnModel::init(arch, &mut rng);
        let mut state = AdamState::new(AdamConfig::with_lr(1e-2), model.param_count());
        let mut ws = CnnWorkspace::new(&arch);
        let mut grads = vec![0.0; model.param_count()];
        let (neg, pos) = ([-1.0, -1.0], [1.0, 1.0]);
        let batch: Vec<(&[f64], f64)> = vec![(&neg, 0.0), (&pos, 1.0)];
        let mut loss = f64::INFINITY;
        for _ in 0..2000 {
            loss = batch_loss_and_gradient(&model, &batch, &mut ws, &mut grads).unwrap();
            if loss < 0.01 {
                break;
            }
            state.step(model.params_mut(), &grads);
        }
        assert!(loss < 0.01, "final loss {loss}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nn");
        let arch = small_arch();
        let mut rng = child_rng(3, "neural-checkpoint", 0);
        let model = CnnModel::init(arch, &mut rng);
        model.save(&path).unwrap();
        let loaded = CnnModel::load(&path).unwrap();
        assert_eq!(model, loaded);
        let g: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let mut ws = CnnWorkspace::new(&arch);
        assert_eq!(
            model.logit(&g, &mut ws).unwrap().to_bits(),
            loaded.logit(&g, &mut ws).unwrap().to_bits()
        );
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let bad_magic = dir.path().join("bad.nn");
        std::fs::write(&bad_magic, b"NOTNN00\0rest").unwrap();
        assert!(matches!(CnnModel::load(&bad_magic), Err(NeuralError::InvalidCheckpoint(_))));

        let truncated = dir.path().join("short.nn");
        let arch = ArchSpec::new(2, 2, 1).with_filters(1).with_filter_size(1);
        let model = CnnModel::init(arch, &mut child_rng(3, "neural-truncate", 0));
        model.save(&truncated).unwrap();
        let bytes = std::fs::read(&truncated).unwrap();
        std::fs::write(&truncated, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(CnnModel::load(&truncated), Err(NeuralError::Io(_))));
    }
}
