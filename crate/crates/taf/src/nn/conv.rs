//! 3x3 convolution via im2col and GEMM, with same-padding and the exact
//! backward passes for weights and inputs.

use super::scalar::Scalar;

pub const KERNEL: usize = 3;

/// Output extent and begin-padding for same-padding at the given stride:
/// out = ceil(in / stride), pad split with the smaller half leading.
pub fn same_padding(in_len: usize, stride: usize) -> (usize, usize) {
    let out = in_len.div_ceil(stride);
    let pad_total = ((out - 1) * stride + KERNEL).saturating_sub(in_len);
    (out, pad_total / 2)
}

/// Scatter one input image [c, h, w] into columns [c*9, out_h*out_w].
pub fn im2col<S: Scalar>(
    input: &[S],
    channels: usize,
    h: usize,
    w: usize,
    stride: usize,
    cols: &mut [S],
) {
    let (out_h, pad_r) = same_padding(h, stride);
    let (out_w, pad_c) = same_padding(w, stride);
    let out_n = out_h * out_w;
    assert_eq!(input.len(), channels * h * w);
    assert_eq!(cols.len(), channels * KERNEL * KERNEL * out_n);
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for kr in 0..KERNEL {
            for kc in 0..KERNEL {
                let row = ((c * KERNEL + kr) * KERNEL + kc) * out_n;
                let dst = &mut cols[row..row + out_n];
                for oy in 0..out_h {
                    let iy = (oy * stride + kr) as isize - pad_r as isize;
                    let dst_row = &mut dst[oy * out_w..(oy + 1) * out_w];
                    if iy < 0 || iy >= h as isize {
                        for v in dst_row.iter_mut() {
                            *v = S::ZERO;
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..out_w {
                        let ix = (ox * stride + kc) as isize - pad_c as isize;
                        dst_row[ox] = if ix < 0 || ix >= w as isize {
                            S::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Inverse of [`im2col`]: accumulate columns back into an image gradient.
pub fn col2im_add<S: Scalar>(
    cols: &[S],
    channels: usize,
    h: usize,
    w: usize,
    stride: usize,
    grad_input: &mut [S],
) {
    let (out_h, pad_r) = same_padding(h, stride);
    let (out_w, pad_c) = same_padding(w, stride);
    let out_n = out_h * out_w;
    assert_eq!(grad_input.len(), channels * h * w);
    assert_eq!(cols.len(), channels * KERNEL * KERNEL * out_n);
    for c in 0..channels {
        let plane = &mut grad_input[c * h * w..(c + 1) * h * w];
        for kr in 0..KERNEL {
            for kc in 0..KERNEL {
                let row = ((c * KERNEL + kr) * KERNEL + kc) * out_n;
                let src = &cols[row..row + out_n];
                for oy in 0..out_h {
                    let iy = (oy * stride + kr) as isize - pad_r as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &src[oy * out_w..(oy + 1) * out_w];
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..out_w {
                        let ix = (ox * stride + kc) as isize - pad_c as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src_row[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Scratch buffers reused across convolution calls.
pub struct ConvScratch<S> {
    pub cols: Vec<S>,
}

impl<S: Scalar> Default for ConvScratch<S> {
    fn default() -> Self {
        ConvScratch { cols: Vec::new() }
    }
}

impl<S: Scalar> ConvScratch<S> {
    fn cols(&mut self, len: usize) -> &mut [S] {
        if self.cols.len() < len {
            self.cols.resize(len, S::ZERO);
        }
        &mut self.cols[..len]
    }
}

/// Forward convolution for one sample: out[out_c, out_h*out_w] =
/// weight[out_c, in_c*9] x im2col(input).
#[allow(clippy::too_many_arguments)]
pub fn conv_forward_sample<S: Scalar>(
    input: &[S],
    weight: &[S],
    in_c: usize,
    out_c: usize,
    h: usize,
    w: usize,
    stride: usize,
    scratch: &mut ConvScratch<S>,
    output: &mut [S],
) {
    let (out_h, _) = same_padding(h, stride);
    let (out_w, _) = same_padding(w, stride);
    let out_n = out_h * out_w;
    let k = in_c * KERNEL * KERNEL;
    let cols = scratch.cols(k * out_n);
    im2col(input, in_c, h, w, stride, cols);
    S::gemm(out_c, k, out_n, weight, cols, S::ZERO, &mut output[..out_c * out_n]);
}

/// Weight gradient for one sample, accumulated into `grad_weight`:
/// dW += dOut[out_c, out_n] x im2col(input)^T.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward_weight_sample<S: Scalar>(
    input: &[S],
    grad_out: &[S],
    in_c: usize,
    out_c: usize,
    h: usize,
    w: usize,
    stride: usize,
    scratch: &mut ConvScratch<S>,
    cols_t: &mut Vec<S>,
    grad_weight: &mut [S],
) {
    let (out_h, _) = same_padding(h, stride);
    let (out_w, _) = same_padding(w, stride);
    let out_n = out_h * out_w;
    let k = in_c * KERNEL * KERNEL;
    let cols = scratch.cols(k * out_n);
    im2col(input, in_c, h, w, stride, cols);
    // transpose columns to [out_n, k] so the GEMM stays row-major
    if cols_t.len() < out_n * k {
        cols_t.resize(out_n * k, S::ZERO);
    }
    for row in 0..k {
        for col in 0..out_n {
            cols_t[col * k + row] = cols[row * out_n + col];
        }
    }
    S::gemm(
        out_c,
        out_n,
        k,
        &grad_out[..out_c * out_n],
        &cols_t[..out_n * k],
        S::ONE,
        grad_weight,
    );
}

/// Input gradient for one sample: col2im(W^T x dOut), added into `grad_input`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward_input_sample<S: Scalar>(
    grad_out: &[S],
    weight_t: &[S],
    in_c: usize,
    out_c: usize,
    h: usize,
    w: usize,
    stride: usize,
    scratch: &mut ConvScratch<S>,
    grad_input: &mut [S],
) {
    let (out_h, _) = same_padding(h, stride);
    let (out_w, _) = same_padding(w, stride);
    let out_n = out_h * out_w;
    let k = in_c * KERNEL * KERNEL;
    let cols = scratch.cols(k * out_n);
    S::gemm(k, out_c, out_n, weight_t, &grad_out[..out_c * out_n], S::ZERO, cols);
    col2im_add(cols, in_c, h, w, stride, grad_input);
}

/// Transpose a row-major [out_c, k] weight into [k, out_c].
pub fn transpose<S: Scalar>(weight: &[S], out_c: usize, k: usize) -> Vec<S> {
    let mut t = vec![S::ZERO; weight.len()];
    for o in 0..out_c {
        for i in 0..k {
            t[i * out_c + o] = weight[o * k + i];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_matches_expected_dims() {
        assert_eq!(same_padding(64, 2), (32, 0)); // pad total 1, leading 0
        assert_eq!(same_padding(116, 2), (58, 0));
        assert_eq!(same_padding(29, 2), (15, 1));
        assert_eq!(same_padding(32, 1), (32, 1));
    }

    /// Direct nested-loop convolution as the reference.
    fn conv_reference(
        input: &[f64],
        weight: &[f64],
        in_c: usize,
        out_c: usize,
        h: usize,
        w: usize,
        stride: usize,
    ) -> Vec<f64> {
        let (out_h, pad_r) = same_padding(h, stride);
        let (out_w, pad_c) = same_padding(w, stride);
        let mut out = vec![0.0; out_c * out_h * out_w];
        for o in 0..out_c {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = 0.0;
                    for c in 0..in_c {
                        for kr in 0..KERNEL {
                            for kc in 0..KERNEL {
                                let iy = (oy * stride + kr) as isize - pad_r as isize;
                                let ix = (ox * stride + kc) as isize - pad_c as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc += input[(c * h + iy as usize) * w + ix as usize]
                                        * weight[((o * in_c + c) * KERNEL + kr) * KERNEL + kc];
                                }
                            }
                        }
                    }
                    out[(o * out_h + oy) * out_w + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn gemm_convolution_matches_direct_loops() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for &(in_c, out_c, h, w, stride) in
            &[(3usize, 4usize, 7usize, 9usize, 1usize), (2, 5, 8, 6, 2), (1, 1, 5, 5, 2)]
        {
            let input: Vec<f64> = (0..in_c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let weight: Vec<f64> =
                (0..out_c * in_c * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (out_h, _) = same_padding(h, stride);
            let (out_w, _) = same_padding(w, stride);
            let mut out = vec![0.0; out_c * out_h * out_w];
            let mut scratch = ConvScratch::default();
            conv_forward_sample(&input, &weight, in_c, out_c, h, w, stride, &mut scratch, &mut out);
            let reference = conv_reference(&input, &weight, in_c, out_c, h, w, stride);
            for (a, b) in out.iter().zip(reference.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let (c, h, w, stride) = (2usize, 6usize, 5usize, 2usize);
        let (out_h, _) = same_padding(h, stride);
        let (out_w, _) = same_padding(w, stride);
        let out_n = out_h * out_w;
        let k = c * 9;
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..k * out_n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut cols = vec![0.0; k * out_n];
        im2col(&x, c, h, w, stride, &mut cols);
        let lhs: f64 = cols.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; c * h * w];
        col2im_add(&y, c, h, w, stride, &mut back);
        let rhs: f64 = x.iter().zip(back.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
