//! Dense kernels: GEMM dispatch, im2col/col2im, and forward/backward passes
//! of stride-`s` convolutions and transposed convolutions on square
//! single-sample tensors laid out `[channel][row][col]`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type the network can run in.
pub trait Real: Float + Default + Debug + Sum + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must address valid `m x k`, `k x n` and `m x n`
    /// matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> f32 {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> f64 {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
pub enum Mat<'a, T> {
    /// `rows x cols` stored row-major.
    N(&'a [T]),
    /// Logical `rows x cols`, stored row-major as `cols x rows`.
    T(&'a [T]),
}

/// `c (m x n) = a (m x k) * b (k x n)`, overwriting or accumulating into `c`.
pub fn matmul<T: Real>(m: usize, k: usize, n: usize, a: Mat<T>, b: Mat<T>, c: &mut [T], accumulate: bool) {
    let (ap, rsa, csa) = match a {
        Mat::N(s) => (s, k as isize, 1),
        Mat::T(s) => (s, 1, m as isize),
    };
    let (bp, rsb, csb) = match b {
        Mat::N(s) => (s, n as isize, 1),
        Mat::T(s) => (s, 1, k as isize),
    };
    assert!(
        ap.len() >= m * k && bp.len() >= k * n && c.len() >= m * n,
        "matmul operand too small"
    );
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every strided access.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            ap.as_ptr(),
            rsa,
            csa,
            bp.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Geometry of a square strided convolution from `big` to `small` pixels
/// per side. Transposed convolutions run the same geometry backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub big: usize,
    pub small: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn taps(&self) -> usize {
        self.kernel * self.kernel
    }

    #[inline]
    fn source(&self, out: usize, tap: usize) -> Option<usize> {
        let v = (out * self.stride + tap) as isize - self.padding as isize;
        (v >= 0 && (v as usize) < self.big).then_some(v as usize)
    }

    /// Output indices `lo..hi` whose source for `tap` lies inside the image.
    #[inline]
    fn valid_range(&self, tap: usize) -> (usize, usize) {
        let lo = if tap >= self.padding {
            0
        } else {
            (self.padding - tap).div_ceil(self.stride)
        };
        let hi = ((self.big + self.padding).saturating_sub(tap))
            .div_ceil(self.stride)
            .min(self.small);
        (lo.min(hi), hi)
    }
}

/// Unfolds `[channels][big][big]` into `[channels * k * k][small * small]`.
pub fn im2col<T: Real>(input: &[T], channels: usize, g: &ConvGeom, cols: &mut [T]) {
    let (big, small, k, s) = (g.big, g.small, g.kernel, g.stride);
    let plane = small * small;
    debug_assert_eq!(input.len(), channels * big * big);
    debug_assert_eq!(cols.len(), channels * k * k * plane);
    for c in 0..channels {
        let src = &input[c * big * big..(c + 1) * big * big];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_range(kj);
                for oy in 0..small {
                    let out_row = &mut dst[oy * small..(oy + 1) * small];
                    match g.source(oy, ki) {
                        None => out_row.fill(T::zero()),
                        Some(iy) => {
                            let src_row = &src[iy * big..(iy + 1) * big];
                            out_row[..lo].fill(T::zero());
                            out_row[hi..].fill(T::zero());
                            let base = lo * s + kj - g.padding;
                            for (o, ix) in out_row[lo..hi].iter_mut().zip((base..).step_by(s)) {
                                *o = src_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps into
/// `output` (which is overwritten).
pub fn col2im<T: Real>(cols: &[T], channels: usize, g: &ConvGeom, output: &mut [T]) {
    let (big, small, k, s) = (g.big, g.small, g.kernel, g.stride);
    let plane = small * small;
    debug_assert_eq!(output.len(), channels * big * big);
    output.fill(T::zero());
    for c in 0..channels {
        let dst = &mut output[c * big * big..(c + 1) * big * big];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_range(kj);
                for oy in 0..small {
                    let Some(iy) = g.source(oy, ki) else { continue };
                    let dst_row = &mut dst[iy * big..(iy + 1) * big];
                    let src_row = &src[oy * small + lo..oy * small + hi];
                    let base = lo * s + kj - g.padding;
                    for (&v, ix) in src_row.iter().zip((base..).step_by(s)) {
                        dst_row[ix] = dst_row[ix] + v;
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn accumulate_channel_sums<T: Real>(grad: &[T], db: &mut [T], plane: usize) {
    for (chunk, d) in grad.chunks(plane).zip(db.iter_mut()) {
        *d = *d + chunk.iter().copied().sum::<T>();
    }
}

/// Strided convolution `[cin][big]^2 -> [cout][small]^2`; weight is
/// `[cout][cin][k][k]`. Returns the unfolded input (kept for backward) and
/// the pre-activation output.
pub fn conv_forward<T: Real>(
    input: &[T],
    weight: &[T],
    bias: &[T],
    cin: usize,
    cout: usize,
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>) {
    let plane = g.small * g.small;
    let rows = cin * g.taps();
    let mut cols = vec![T::zero(); rows * plane];
    im2col(input, cin, g, &mut cols);
    let mut out = vec![T::zero(); cout * plane];
    matmul(cout, rows, plane, Mat::N(weight), Mat::N(&cols), &mut out, false);
    add_channel_bias(&mut out, bias, plane);
    (cols, out)
}

/// Backward of [`conv_forward`]. Accumulates into `dweight`/`dbias`, and
/// returns the input gradient when `need_input_grad`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    grad_out: &[T],
    cols: &[T],
    weight: &[T],
    cin: usize,
    cout: usize,
    g: &ConvGeom,
    dweight: &mut [T],
    dbias: &mut [T],
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let plane = g.small * g.small;
    let rows = cin * g.taps();
    accumulate_channel_sums(grad_out, dbias, plane);
    matmul(cout, plane, rows, Mat::N(grad_out), Mat::T(cols), dweight, true);
    if !need_input_grad {
        return None;
    }
    let mut dcols = vec![T::zero(); rows * plane];
    matmul(rows, cout, plane, Mat::T(weight), Mat::N(grad_out), &mut dcols, false);
    let mut dinput = vec![T::zero(); cin * g.big * g.big];
    col2im(&dcols, cin, g, &mut dinput);
    Some(dinput)
}

/// Transposed convolution `[cin][small]^2 -> [cout][big]^2`; weight is
/// `[cin][cout][k][k]`. Returns the pre-activation output.
pub fn conv_transpose_forward<T: Real>(
    input: &[T],
    weight: &[T],
    bias: &[T],
    cin: usize,
    cout: usize,
    g: &ConvGeom,
) -> Vec<T> {
    let plane = g.small * g.small;
    let rows = cout * g.taps();
    let mut cols = vec![T::zero(); rows * plane];
    matmul(rows, cin, plane, Mat::T(weight), Mat::N(input), &mut cols, false);
    let mut out = vec![T::zero(); cout * g.big * g.big];
    col2im(&cols, cout, g, &mut out);
    add_channel_bias(&mut out, bias, g.big * g.big);
    out
}

/// Backward of [`conv_transpose_forward`]; accumulates parameter gradients
/// and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose_backward<T: Real>(
    grad_out: &[T],
    input: &[T],
    weight: &[T],
    cin: usize,
    cout: usize,
    g: &ConvGeom,
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let plane = g.small * g.small;
    let rows = cout * g.taps();
    accumulate_channel_sums(grad_out, dbias, g.big * g.big);
    let mut dcols = vec![T::zero(); rows * plane];
    im2col(grad_out, cout, g, &mut dcols);
    matmul(cin, plane, rows, Mat::N(input), Mat::T(&dcols), dweight, true);
    let mut dinput = vec![T::zero(); cin * plane];
    matmul(cin, rows, plane, Mat::N(weight), Mat::N(&dcols), &mut dinput, false);
    dinput
}

/// `out = W x + b` for `W: [out][in]`.
pub fn linear_forward<T: Real>(input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let (n_out, n_in) = (bias.len(), input.len());
    let mut out = bias.to_vec();
    matmul(n_out, n_in, 1, Mat::N(weight), Mat::N(input), &mut out, true);
    out
}

/// Accumulates `dW += g x^T`, `db += g`; adds `W^T g` into `dinput`.
pub fn linear_backward<T: Real>(
    grad_out: &[T],
    input: &[T],
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    dinput: &mut [T],
) {
    let (n_out, n_in) = (grad_out.len(), input.len());
    for (d, &g) in dbias.iter_mut().zip(grad_out) {
        *d = *d + g;
    }
    matmul(n_out, 1, n_in, Mat::N(grad_out), Mat::N(input), dweight, true);
    matmul(n_in, n_out, 1, Mat::T(weight), Mat::N(grad_out), dinput, true);
}

pub fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward_in_place<T: Real>(grad: &mut [T], activated: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct convolution by definition, for cross-checking im2col + GEMM.
    fn naive_conv(input: &[f64], weight: &[f64], cin: usize, cout: usize, g: &ConvGeom) -> Vec<f64> {
        let (n, m, k) = (g.big, g.small, g.kernel);
        let mut out = vec![0.0; cout * m * m];
        for o in 0..cout {
            for oy in 0..m {
                for ox in 0..m {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < n && (ix as usize) < n {
                                    acc += input[(c * n + iy as usize) * n + ix as usize]
                                        * weight[((o * cin + c) * k + ki) * k + kj];
                                }
                            }
                        }
                    }
                    out[(o * m + oy) * m + ox] = acc;
                }
            }
        }
        out
    }

    /// Transposed convolution by scattering each input pixel.
    fn naive_conv_t(input: &[f64], weight: &[f64], cin: usize, cout: usize, g: &ConvGeom) -> Vec<f64> {
        let (n, m, k) = (g.big, g.small, g.kernel);
        let mut out = vec![0.0; cout * n * n];
        for c in 0..cin {
            for iy in 0..m {
                for ix in 0..m {
                    let v = input[(c * m + iy) * m + ix];
                    for o in 0..cout {
                        for ki in 0..k {
                            for kj in 0..k {
                                let oy = (iy * g.stride + ki) as isize - g.padding as isize;
                                let ox = (ix * g.stride + kj) as isize - g.padding as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < n && (ox as usize) < n {
                                    out[(o * n + oy as usize) * n + ox as usize] +=
                                        v * weight[((c * cout + o) * k + ki) * k + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_direct_definition() {
        for (big, small) in [(210, 105), (105, 53), (14, 7), (8, 4)] {
            let g = ConvGeom {
                big,
                small,
                kernel: 3,
                stride: 2,
                padding: 1,
            };
            let (cin, cout) = (2, 3);
            let x = pseudo(cin * big * big, 1);
            let w = pseudo(cout * cin * 9, 2);
            let (_, out) = conv_forward(&x, &w, &[0.0; 3], cin, cout, &g);
            let expected = naive_conv(&x, &w, cin, cout, &g);
            for (a, b) in out.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_transpose_matches_scatter_definition() {
        for (small, big) in [(7, 14), (14, 27), (105, 210), (2, 4)] {
            let g = ConvGeom {
                big,
                small,
                kernel: 3,
                stride: 2,
                padding: 1,
            };
            let (cin, cout) = (3, 2);
            let x = pseudo(cin * small * small, 3);
            let w = pseudo(cin * cout * 9, 4);
            let out = conv_transpose_forward(&x, &w, &[0.0; 2], cin, cout, &g);
            let expected = naive_conv_t(&x, &w, cin, cout, &g);
            for (a, b) in out.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            big: 9,
            small: 5,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let x = pseudo(2 * 81, 5);
        let y = pseudo(2 * 9 * 25, 6);
        let mut cols = vec![0.0; y.len()];
        im2col(&x, 2, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, 2, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn matmul_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [5.0f32, 6.0, 7.0, 8.0];
        let mut c = [0.0f32; 4];
        matmul(2, 2, 2, Mat::N(&a), Mat::N(&b), &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        matmul(2, 2, 2, Mat::T(&a), Mat::N(&b), &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        matmul(2, 2, 2, Mat::N(&a), Mat::T(&b), &mut c, false);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        matmul(2, 2, 2, Mat::N(&a), Mat::T(&b), &mut c, true);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }
}
