//! Layer kinds and their forward/backward kernels.
//!
//! Every kernel works on a whole batch laid out row-major with the batch as
//! the leading dimension. Parameters live in one flat vector owned by the
//! network; each kernel receives its own slice.

use std::fmt;

pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    /// Square kernel with symmetric zero padding.
    Conv2D {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2D {
        window: usize,
        stride: usize,
    },
    /// Per-feature normalization. Applies to `[F]` or, per channel, to `[F, H, W]`.
    BatchNorm {
        num_features: usize,
        epsilon: f64,
        momentum: f64,
    },
    ReLU,
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense { in_dim, out_dim }
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv2D {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: 0,
        }
    }

    pub fn conv_padded(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        LayerSpec::Conv2D {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn max_pool(window: usize, stride: usize) -> Self {
        LayerSpec::MaxPool2D { window, stride }
    }

    pub fn batch_norm(num_features: usize) -> Self {
        LayerSpec::BatchNorm {
            num_features,
            epsilon: DEFAULT_BN_EPSILON,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Conv2D { .. } => "Conv2D",
            LayerSpec::MaxPool2D { .. } => "MaxPool2D",
            LayerSpec::BatchNorm { .. } => "BatchNorm",
            LayerSpec::ReLU => "ReLU",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Softmax => "Softmax",
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
            LayerSpec::Conv2D {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel + out_channels,
            LayerSpec::BatchNorm { num_features, .. } => 2 * num_features,
            _ => 0,
        }
    }

    /// Non-trainable state (BatchNorm running mean and variance).
    pub fn buffer_count(&self) -> usize {
        match *self {
            LayerSpec::BatchNorm { num_features, .. } => 2 * num_features,
            _ => 0,
        }
    }

    /// Output shape for a single sample, or a description of the mismatch.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return Err("dense dimensions must be positive".into());
                }
                if input != [in_dim] {
                    return Err(format!("expects input [{in_dim}], got {input:?}"));
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Conv2D {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err("convolution parameters must be positive".into());
                }
                let &[c, h, w] = input else {
                    return Err(format!("expects [channels, height, width], got {input:?}"));
                };
                if c != in_channels {
                    return Err(format!("expects {in_channels} input channels, got {c}"));
                }
                let (ph, pw) = (h + 2 * padding, w + 2 * padding);
                if ph < kernel || pw < kernel {
                    return Err(format!("kernel {kernel} exceeds padded extent {ph}x{pw}"));
                }
                Ok(vec![
                    out_channels,
                    (ph - kernel) / stride + 1,
                    (pw - kernel) / stride + 1,
                ])
            }
            LayerSpec::MaxPool2D { window, stride } => {
                if window == 0 || stride == 0 {
                    return Err("pooling parameters must be positive".into());
                }
                let &[c, h, w] = input else {
                    return Err(format!("expects [channels, height, width], got {input:?}"));
                };
                if h < window || w < window {
                    return Err(format!("window {window} exceeds spatial extent {h}x{w}"));
                }
                Ok(vec![
                    c,
                    (h - window) / stride + 1,
                    (w - window) / stride + 1,
                ])
            }
            LayerSpec::BatchNorm {
                num_features,
                epsilon,
                momentum,
            } => {
                if !(epsilon > 0.0) || !(0.0..=1.0).contains(&momentum) {
                    return Err("batch norm needs epsilon > 0 and momentum in [0, 1]".into());
                }
                match input {
                    [f] | [f, _, _] if *f == num_features => Ok(input.to_vec()),
                    _ => Err(format!(
                        "expects {num_features} features as [F] or [F, H, W], got {input:?}"
                    )),
                }
            }
            LayerSpec::ReLU => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(format!("expects a flat vector, got {input:?}"));
                }
                Ok(input.to_vec())
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { in_dim, out_dim } => write!(f, "Dense({in_dim}->{out_dim})"),
            LayerSpec::Conv2D {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(
                f,
                "Conv2D({in_channels}->{out_channels}, k={kernel}, s={stride}, p={padding})"
            ),
            LayerSpec::MaxPool2D { window, stride } => {
                write!(f, "MaxPool2D(w={window}, s={stride})")
            }
            LayerSpec::BatchNorm { num_features, .. } => write!(f, "BatchNorm({num_features})"),
            other => f.write_str(other.kind_name()),
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major slices.
///
/// `op(a)` is `m x k`, `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unrolls one sample into `[C*k*k, out_h*out_w]`.
    fn im2col(&self, input: &[f64], cols: &mut [f64]) {
        let positions = self.positions();
        for c in 0..self.channels {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            dst[oy * self.out_w + ox] = if iy < 0
                                || ix < 0
                                || iy as usize >= self.height
                                || ix as usize >= self.width
                            {
                                0.0
                            } else {
                                input[(c * self.height + iy as usize) * self.width + ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a column gradient back onto one sample's input gradient.
    fn col2im(&self, cols: &[f64], grad: &mut [f64]) {
        let positions = self.positions();
        for c in 0..self.channels {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    let src = &cols[row * positions..(row + 1) * positions];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy as usize >= self.height {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix as usize >= self.width {
                                continue;
                            }
                            grad[(c * self.height + iy as usize) * self.width + ix as usize] +=
                                src[oy * self.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn dense_forward(
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    params: &[f64],
    input: &[f64],
    output: &mut [f64],
) {
    let (weights, bias) = params.split_at(in_dim * out_dim);
    gemm(
        batch, in_dim, out_dim, input, false, weights, true, 0.0, output,
    );
    for row in output.chunks_mut(out_dim) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    params: &[f64],
    input: &[f64],
    grad_out: &[f64],
    grad_params: &mut [f64],
    grad_in: &mut [f64],
) {
    let (weights, _) = params.split_at(in_dim * out_dim);
    let (gw, gb) = grad_params.split_at_mut(in_dim * out_dim);
    gemm(
        out_dim, batch, in_dim, grad_out, true, input, false, 1.0, gw,
    );
    for row in grad_out.chunks(out_dim) {
        for (g, d) in gb.iter_mut().zip(row) {
            *g += d;
        }
    }
    gemm(
        batch, out_dim, in_dim, grad_out, false, weights, false, 0.0, grad_in,
    );
}

pub(crate) fn conv_forward(
    geo: &ConvGeometry,
    out_channels: usize,
    params: &[f64],
    input: &[f64],
    output: &mut [f64],
) {
    let patch = geo.patch_len();
    let positions = geo.positions();
    let in_per = geo.channels * geo.height * geo.width;
    let out_per = out_channels * positions;
    let (weights, bias) = params.split_at(out_channels * patch);
    let mut cols = vec![0.0; patch * positions];
    for (x, y) in input.chunks(in_per).zip(output.chunks_mut(out_per)) {
        geo.im2col(x, &mut cols);
        gemm(
            out_channels,
            patch,
            positions,
            weights,
            false,
            &cols,
            false,
            0.0,
            y,
        );
        for (oc, b) in bias.iter().enumerate() {
            for v in &mut y[oc * positions..(oc + 1) * positions] {
                *v += b;
            }
        }
    }
}

pub(crate) fn conv_backward(
    geo: &ConvGeometry,
    out_channels: usize,
    params: &[f64],
    input: &[f64],
    grad_out: &[f64],
    grad_params: &mut [f64],
    grad_in: &mut [f64],
) {
    let patch = geo.patch_len();
    let positions = geo.positions();
    let in_per = geo.channels * geo.height * geo.width;
    let out_per = out_channels * positions;
    let (weights, _) = params.split_at(out_channels * patch);
    let (gw, gb) = grad_params.split_at_mut(out_channels * patch);
    let mut cols = vec![0.0; patch * positions];
    let mut grad_cols = vec![0.0; patch * positions];
    grad_in.fill(0.0);
    for ((x, dy), dx) in input
        .chunks(in_per)
        .zip(grad_out.chunks(out_per))
        .zip(grad_in.chunks_mut(in_per))
    {
        geo.im2col(x, &mut cols);
        gemm(
            out_channels,
            positions,
            patch,
            dy,
            false,
            &cols,
            true,
            1.0,
            gw,
        );
        for (oc, g) in gb.iter_mut().enumerate() {
            *g += dy[oc * positions..(oc + 1) * positions].iter().sum::<f64>();
        }
        gemm(
            patch,
            out_channels,
            positions,
            weights,
            true,
            dy,
            false,
            0.0,
            &mut grad_cols,
        );
        geo.col2im(&grad_cols, dx);
    }
}

pub(crate) struct PoolGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Returns, per output element, the flat index (within the batch) of the
/// selected input. Ties pick the first maximum in scan order.
pub(crate) fn max_pool_forward(
    geo: &PoolGeometry,
    batch: usize,
    input: &[f64],
    output: &mut [f64],
) -> Vec<usize> {
    let mut argmax = Vec::with_capacity(output.len());
    let plane = geo.height * geo.width;
    let mut o = 0;
    for plane_index in 0..batch * geo.channels {
        let base = plane_index * plane;
        for oy in 0..geo.out_h {
            for ox in 0..geo.out_w {
                let mut best = base + (oy * geo.stride) * geo.width + ox * geo.stride;
                for ky in 0..geo.window {
                    let row = base + (oy * geo.stride + ky) * geo.width + ox * geo.stride;
                    for idx in row..row + geo.window {
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                output[o] = input[best];
                argmax.push(best);
                o += 1;
            }
        }
    }
    argmax
}

pub(crate) fn max_pool_backward(argmax: &[usize], grad_out: &[f64], grad_in: &mut [f64]) {
    grad_in.fill(0.0);
    for (&idx, g) in argmax.iter().zip(grad_out) {
        grad_in[idx] += g;
    }
}

/// Cached values of a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub(crate) struct BatchNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// `spatial` is H*W for image features and 1 for flat features.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_forward_train(
    batch: usize,
    features: usize,
    spatial: usize,
    epsilon: f64,
    params: &[f64],
    input: &[f64],
    output: &mut [f64],
) -> (BatchNormCache, Vec<f64>, Vec<f64>) {
    let (gamma, beta) = params.split_at(features);
    let count = (batch * spatial) as f64;
    let mut mean = vec![0.0; features];
    let mut var = vec![0.0; features];
    let index = |b: usize, f: usize, s: usize| (b * features + f) * spatial + s;
    for f in 0..features {
        let mut sum = 0.0;
        for b in 0..batch {
            for s in 0..spatial {
                sum += input[index(b, f, s)];
            }
        }
        mean[f] = sum / count;
        let mut sq = 0.0;
        for b in 0..batch {
            for s in 0..spatial {
                let d = input[index(b, f, s)] - mean[f];
                sq += d * d;
            }
        }
        var[f] = sq / count;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
    let mut normalized = vec![0.0; input.len()];
    for b in 0..batch {
        for f in 0..features {
            for s in 0..spatial {
                let i = index(b, f, s);
                normalized[i] = (input[i] - mean[f]) * inv_std[f];
                output[i] = gamma[f] * normalized[i] + beta[f];
            }
        }
    }
    (
        BatchNormCache {
            normalized,
            inv_std,
        },
        mean,
        var,
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_forward_eval(
    features: usize,
    spatial: usize,
    epsilon: f64,
    params: &[f64],
    buffers: &[f64],
    input: &[f64],
    output: &mut [f64],
) {
    let (gamma, beta) = params.split_at(features);
    let (running_mean, running_var) = buffers.split_at(features);
    for (chunk_in, chunk_out) in input
        .chunks(features * spatial)
        .zip(output.chunks_mut(features * spatial))
    {
        for f in 0..features {
            let scale = gamma[f] / (running_var[f] + epsilon).sqrt();
            for s in 0..spatial {
                let i = f * spatial + s;
                chunk_out[i] = (chunk_in[i] - running_mean[f]) * scale + beta[f];
            }
        }
    }
}

pub(crate) fn batch_norm_backward(
    batch: usize,
    features: usize,
    spatial: usize,
    params: &[f64],
    cache: &BatchNormCache,
    grad_out: &[f64],
    grad_params: &mut [f64],
    grad_in: &mut [f64],
) {
    let gamma = &params[..features];
    let (g_gamma, g_beta) = grad_params.split_at_mut(features);
    let count = (batch * spatial) as f64;
    let index = |b: usize, f: usize, s: usize| (b * features + f) * spatial + s;
    for f in 0..features {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..batch {
            for s in 0..spatial {
                let i = index(b, f, s);
                sum_dy += grad_out[i];
                sum_dy_xhat += grad_out[i] * cache.normalized[i];
            }
        }
        g_gamma[f] += sum_dy_xhat;
        g_beta[f] += sum_dy;
        let scale = gamma[f] * cache.inv_std[f] / count;
        for b in 0..batch {
            for s in 0..spatial {
                let i = index(b, f, s);
                grad_in[i] =
                    scale * (count * grad_out[i] - sum_dy - cache.normalized[i] * sum_dy_xhat);
            }
        }
    }
}

pub(crate) fn softmax_rows(width: usize, input: &[f64], output: &mut [f64]) {
    for (x, y) in input.chunks(width).zip(output.chunks_mut(width)) {
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, v) in y.iter_mut().zip(x) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in y.iter_mut() {
            *o /= sum;
        }
    }
}

/// Mean cross-entropy of softmax(logits) against `labels`, computed with
/// log-sum-exp so that confident correct predictions give exactly zero.
pub(crate) fn cross_entropy(width: usize, logits: &[f64], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (z, &y) in logits.chunks(width).zip(labels) {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn conv_output_shape() {
        let conv = LayerSpec::conv(1, 2, 3, 1);
        assert_eq!(conv.output_shape(&[1, 5, 5]).unwrap(), vec![2, 3, 3]);
        let padded = LayerSpec::conv_padded(3, 8, 3, 1, 1);
        assert_eq!(padded.output_shape(&[3, 32, 32]).unwrap(), vec![8, 32, 32]);
        assert!(conv.output_shape(&[2, 5, 5]).is_err());
        assert!(conv.output_shape(&[1, 2, 2]).is_err());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let geo = ConvGeometry {
            channels: 1,
            height: 3,
            width: 3,
            kernel: 2,
            stride: 1,
            padding: 0,
            out_h: 2,
            out_w: 2,
        };
        let input: Vec<f64> = (1..=9).map(f64::from).collect();
        let params = [1.0, 0.0, 0.0, -1.0, 0.5];
        let mut out = [0.0; 4];
        conv_forward(&geo, 1, &params, &input, &mut out);
        // x[y][x] - x[y+1][x+1] = -4 everywhere, plus bias.
        assert_eq!(out, [-3.5; 4]);
    }

    #[test]
    fn max_pool_picks_first_maximum() {
        let geo = PoolGeometry {
            channels: 1,
            height: 2,
            width: 2,
            window: 2,
            stride: 2,
            out_h: 1,
            out_w: 1,
        };
        let mut out = [0.0];
        let arg = max_pool_forward(&geo, 1, &[1.0, 3.0, 3.0, 2.0], &mut out);
        assert_eq!(out, [3.0]);
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn cross_entropy_edges() {
        assert_eq!(cross_entropy(3, &[1000.0, 0.0, 0.0], &[0]), 0.0);
        let uniform = cross_entropy(16, &[0.0; 16], &[3]);
        assert!((uniform - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_normalizes_per_feature() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (batch, features, spatial) = (5, 3, 4);
        let input: Vec<f64> = (0..batch * features * spatial)
            .map(|_| rng.gen_range(-3.0..7.0))
            .collect();
        let params = [2.0, 2.0, 2.0, 1.0, 1.0, 1.0];
        let mut out = vec![0.0; input.len()];
        let (cache, _, _) =
            batch_norm_forward_train(batch, features, spatial, 1e-5, &params, &input, &mut out);
        for f in 0..features {
            let vals: Vec<f64> = (0..batch)
                .flat_map(|b| (0..spatial).map(move |s| (b * features + f) * spatial + s))
                .map(|i| cache.normalized[i])
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
