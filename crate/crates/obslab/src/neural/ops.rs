//! Layer kernels: same-padded convolution, LeakyReLU, and max-pooling, each
//! with an exact reverse-mode counterpart.
//!
//! Convolution is organized as axpy passes over shifted row slices, one per
//! filter tap, so the inner loops run over contiguous memory and vectorize.

use crate::vecmath::{axpy, dot};

/// `out[oc] = bias[oc] + sum_ic weights[oc][ic] * input[ic]` with zero
/// same-padding and stride 1. `weights` is `[out_c][in_c][k][k]` row-major,
/// `input` is `[in_c][h][w]`, `out` is `[out_c][h][w]`. `k` must be odd.
pub(crate) fn conv2d_same_forward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    biases: &[f64],
    out_c: usize,
    k: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(input.len(), in_c * h * w);
    debug_assert_eq!(weights.len(), out_c * in_c * k * k);
    debug_assert_eq!(biases.len(), out_c);
    debug_assert_eq!(out.len(), out_c * h * w);
    debug_assert!(k % 2 == 1, "same padding requires an odd filter size");
    let pad = k / 2;
    let plane = h * w;
    for oc in 0..out_c {
        let outp = &mut out[oc * plane..(oc + 1) * plane];
        outp.fill(biases[oc]);
        for ic in 0..in_c {
            let inp = &input[ic * plane..(ic + 1) * plane];
            for dy in 0..k {
                for dx in 0..k {
                    let wgt = weights[((oc * in_c + ic) * k + dy) * k + dx];
                    let (oy0, oy1, ox0, ox1) = tap_bounds(h, w, pad, dy, dx);
                    for oy in oy0..oy1 {
                        let iy = oy + dy - pad;
                        let irow = &inp[iy * w + ox0 + dx - pad..iy * w + ox1 + dx - pad];
                        axpy(&mut outp[oy * w + ox0..oy * w + ox1], wgt, irow);
                    }
                }
            }
        }
    }
}

/// Reverse-mode counterpart of [`conv2d_same_forward`]. Accumulates (+=) the
/// weight and bias gradients; `dinput`, when present, is also accumulated so
/// the caller must zero it first. Pass `None` for the first layer, whose
/// input gradient is never used.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_same_backward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    out_c: usize,
    k: usize,
    dout: &[f64],
    mut dinput: Option<&mut [f64]>,
    dweights: &mut [f64],
    dbiases: &mut [f64],
) {
    debug_assert_eq!(input.len(), in_c * h * w);
    debug_assert_eq!(dout.len(), out_c * h * w);
    debug_assert_eq!(dweights.len(), weights.len());
    debug_assert_eq!(dbiases.len(), out_c);
    let pad = k / 2;
    let plane = h * w;
    for oc in 0..out_c {
        let doutp = &dout[oc * plane..(oc + 1) * plane];
        dbiases[oc] += doutp.iter().sum::<f64>();
        for ic in 0..in_c {
            let inp = &input[ic * plane..(ic + 1) * plane];
            for dy in 0..k {
                for dx in 0..k {
                    let widx = ((oc * in_c + ic) * k + dy) * k + dx;
                    let wgt = weights[widx];
                    let (oy0, oy1, ox0, ox1) = tap_bounds(h, w, pad, dy, dx);
                    let mut wacc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy + dy - pad;
                        let drow = &doutp[oy * w + ox0..oy * w + ox1];
                        let icols = iy * w + ox0 + dx - pad..iy * w + ox1 + dx - pad;
                        wacc += dot(drow, &inp[icols.clone()]);
                        if let Some(di) = dinput.as_deref_mut() {
                            axpy(&mut di[ic * plane..][icols], wgt, drow);
                        }
                    }
                    dweights[widx] += wacc;
                }
            }
        }
    }
}

/// Valid output-row/column bounds for filter tap `(dy, dx)` under zero
/// same-padding: the half-open ranges where the shifted input index stays in
/// the plane.
fn tap_bounds(h: usize, w: usize, pad: usize, dy: usize, dx: usize) -> (usize, usize, usize, usize) {
    let oy0 = pad.saturating_sub(dy);
    let oy1 = (h + pad - dy).min(h);
    let ox0 = pad.saturating_sub(dx);
    let ox1 = (w + pad - dx).min(w);
    (oy0, oy1, ox0, ox1)
}

pub(crate) fn leaky_relu_forward(pre: &[f64], out: &mut [f64], slope: f64) {
    debug_assert_eq!(pre.len(), out.len());
    for (o, &x) in out.iter_mut().zip(pre) {
        *o = if x > 0.0 { x } else { slope * x };
    }
}

pub(crate) fn leaky_relu_backward(pre: &[f64], dout: &[f64], dpre: &mut [f64], slope: f64) {
    debug_assert_eq!(pre.len(), dout.len());
    debug_assert_eq!(pre.len(), dpre.len());
    for ((d, &x), &g) in dpre.iter_mut().zip(pre).zip(dout) {
        *d = if x > 0.0 { g } else { slope * g };
    }
}

/// Output plane dimension for pooling with edge clipping: windows start every
/// `stride` pixels and partial windows at the edge still produce an output.
pub(crate) fn pooled_dim(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

/// Max-pooling over `window`-square windows placed every `stride` pixels,
/// clipping partial windows at the edges. `argmax` records the flat input
/// index of each maximum (first occurrence wins ties) for the backward pass.
#[allow(clippy::too_many_arguments)]
pub(crate) fn maxpool_forward(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
    out: &mut [f64],
    argmax: &mut [usize],
) {
    let (ph, pw) = (pooled_dim(h, stride), pooled_dim(w, stride));
    debug_assert_eq!(input.len(), c * h * w);
    debug_assert_eq!(out.len(), c * ph * pw);
    debug_assert_eq!(argmax.len(), out.len());
    let plane = h * w;
    for ch in 0..c {
        let inp = &input[ch * plane..(ch + 1) * plane];
        for py in 0..ph {
            let y0 = py * stride;
            let y1 = (y0 + window).min(h);
            for px in 0..pw {
                let x0 = px * stride;
                let x1 = (x0 + window).min(w);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = y0 * w + x0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let v = inp[y * w + x];
                        if v > best {
                            best = v;
                            best_idx = y * w + x;
                        }
                    }
                }
                let o = (ch * ph + py) * pw + px;
                out[o] = best;
                argmax[o] = ch * plane + best_idx;
            }
        }
    }
}
