//! Raw numeric kernels behind the tape operations. Everything here works on
//! flat channel-last buffers; shape checking happens in `tape`.

/// Geometry of a stride-1, zero "same"-padded convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// Length of one unrolled receptive field (k·k·C).
    pub fn taps(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }
}

/// Unrolls every k×k×C window into a row of a (H·W)×(k·k·C) matrix. Row
/// layout matches the kernel layout F×k×k×C, so a kernel is one column of
/// the transposed weight matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (h, w, c, k) = (g.height, g.width, g.in_channels, g.kernel);
    let pad = k / 2;
    let taps = g.taps();
    let mut cols = vec![0.0; g.positions() * taps];
    for i in 0..h {
        for j in 0..w {
            let row = &mut cols[(i * w + j) * taps..(i * w + j + 1) * taps];
            for di in 0..k {
                let ii = i + di;
                if ii < pad || ii - pad >= h {
                    continue;
                }
                let ii = ii - pad;
                for dj in 0..k {
                    let jj = j + dj;
                    if jj < pad || jj - pad >= w {
                        continue;
                    }
                    let jj = jj - pad;
                    let src = &input[(ii * w + jj) * c..(ii * w + jj + 1) * c];
                    let dst = (di * k + dj) * c;
                    row[dst..dst + c].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds unrolled rows back onto the image.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (h, w, c, k) = (g.height, g.width, g.in_channels, g.kernel);
    let pad = k / 2;
    let taps = g.taps();
    let mut image = vec![0.0; h * w * c];
    for i in 0..h {
        for j in 0..w {
            let row = &cols[(i * w + j) * taps..(i * w + j + 1) * taps];
            for di in 0..k {
                let ii = i + di;
                if ii < pad || ii - pad >= h {
                    continue;
                }
                let ii = ii - pad;
                for dj in 0..k {
                    let jj = j + dj;
                    if jj < pad || jj - pad >= w {
                        continue;
                    }
                    let jj = jj - pad;
                    let src = &row[(di * k + dj) * c..(di * k + dj + 1) * c];
                    let dst = &mut image[(ii * w + jj) * c..(ii * w + jj + 1) * c];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
    image
}

/// Row-major `c = alpha * a·b + beta * c` where `a` is m×k and `b` is k×n,
/// each addressed through explicit (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || (m - 1) * a_strides.0 + (k - 1) * a_strides.1 < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * b_strides.0 + (n - 1) * b_strides.1 < b.len());
    // SAFETY: the debug assertions above spell out the bounds every access
    // stays within; callers derive all dimensions from the same geometry.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// out[p, f] = bias[f] + Σ_q cols[p, q] · kernels[f, q]
pub(crate) fn conv_forward(
    cols: &[f64],
    kernels: &[f64],
    bias: &[f64],
    g: &ConvGeometry,
) -> Vec<f64> {
    let (p, q, f) = (g.positions(), g.taps(), g.filters);
    let mut out = Vec::with_capacity(p * f);
    for _ in 0..p {
        out.extend_from_slice(bias);
    }
    gemm(p, q, f, cols, (q, 1), kernels, (1, q), 1.0, &mut out);
    out
}

/// Gradient w.r.t. the kernels: dK[f, q] = Σ_p dOut[p, f] · cols[p, q].
pub(crate) fn conv_kernel_grad(cols: &[f64], grad_out: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (p, q, f) = (g.positions(), g.taps(), g.filters);
    let mut dk = vec![0.0; f * q];
    gemm(f, p, q, grad_out, (1, f), cols, (q, 1), 0.0, &mut dk);
    dk
}

/// Gradient w.r.t. the input image.
pub(crate) fn conv_input_grad(kernels: &[f64], grad_out: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (p, q, f) = (g.positions(), g.taps(), g.filters);
    let mut dcols = vec![0.0; p * q];
    gemm(p, f, q, grad_out, (f, 1), kernels, (q, 1), 0.0, &mut dcols);
    col2im(&dcols, g)
}

pub(crate) fn conv_bias_grad(grad_out: &[f64], filters: usize) -> Vec<f64> {
    let mut db = vec![0.0; filters];
    for row in grad_out.chunks_exact(filters) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    db
}

/// 2×2 non-overlapping max pooling; returns the pooled values and, for each
/// output, the flat input index that won (first maximum in row-major order).
pub(crate) fn maxpool_forward(
    input: &[f64],
    h: usize,
    w: usize,
    c: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * c];
    let mut arg = vec![0; oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                let mut best_idx = ((2 * i) * w + 2 * j) * c + ch;
                let mut best = input[best_idx];
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * i + di) * w + 2 * j + dj) * c + ch;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                let o = (i * ow + j) * c + ch;
                out[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    (out, arg)
}
