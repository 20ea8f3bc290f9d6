//! Dense matrix kernels and convolution window gathering.
//!
//! All matrices are row-major slices. Every routine accumulates into its
//! output (`C += ...`) so callers can sum contributions across slices.

use super::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] = c[i * n + j] + dot(a_row, b_row);
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// Dot product with eight independent accumulators (fixed summation order).
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let len = a.len().min(b.len());
    let (a, b) = (&a[..len], &b[..len]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Transpose `src[rows×cols]` into `dst[cols×rows]`.
pub fn transpose<T: Scalar>(rows: usize, cols: usize, src: &[T], dst: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Geometry of a stride-1 convolution over a channels-last `(T, H, W, C)`
/// volume. A 2D convolution is the `T = kT = 1` case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: [usize; 3],
    pub channels: usize,
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeometry {
    /// `same` padding keeps extents (odd kernels pad symmetrically; even
    /// kernels put the extra row after); `valid` uses no padding.
    pub fn new(input: [usize; 3], channels: usize, kernel: [usize; 3], same: bool) -> Option<Self> {
        let mut pad = [0; 3];
        let mut output = [0; 3];
        for d in 0..3 {
            if same {
                pad[d] = (kernel[d] - 1) / 2;
                output[d] = input[d];
            } else {
                if kernel[d] > input[d] {
                    return None;
                }
                output[d] = input[d] - kernel[d] + 1;
            }
        }
        Some(ConvGeometry {
            input,
            channels,
            kernel,
            pad,
            output,
        })
    }

    /// Rows of the gathered window matrix: `kT·kH·kW·C`.
    pub fn window_len(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.channels
    }

    /// Output positions in one output time slice.
    pub fn plane(&self) -> usize {
        self.output[1] * self.output[2]
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product::<usize>() * self.channels
    }

    /// Gather the receptive fields of output slice `t_out` into
    /// `cols[window_len × plane]` (zero outside the input).
    pub fn im2col<T: Scalar>(&self, x: &[T], t_out: usize, cols: &mut [T]) {
        let [_, ih, iw] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [_, oh, ow] = self.output;
        let c = self.channels;
        let plane = oh * ow;
        let mut row = 0;
        for dt in 0..kt {
            let ti = (t_out + dt) as isize - self.pad[0] as isize;
            for dh in 0..kh {
                for dw in 0..kw {
                    for ci in 0..c {
                        let dst = &mut cols[row * plane..(row + 1) * plane];
                        row += 1;
                        if ti < 0 || ti as usize >= self.input[0] {
                            dst.fill(T::zero());
                            continue;
                        }
                        let t_base = ti as usize * ih;
                        for y in 0..oh {
                            let hi = (y + dh) as isize - self.pad[1] as isize;
                            let out = &mut dst[y * ow..(y + 1) * ow];
                            if hi < 0 || hi as usize >= ih {
                                out.fill(T::zero());
                                continue;
                            }
                            let base = (t_base + hi as usize) * iw;
                            for (xo, v) in out.iter_mut().enumerate() {
                                let wi = (xo + dw) as isize - self.pad[2] as isize;
                                *v = if wi < 0 || wi as usize >= iw {
                                    T::zero()
                                } else {
                                    x[(base + wi as usize) * c + ci]
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `cols[window_len × plane]` for output slice `t_out` back
    /// onto the input gradient `dx`. Adjoint of [`ConvGeometry::im2col`].
    pub fn col2im_add<T: Scalar>(&self, cols: &[T], t_out: usize, dx: &mut [T]) {
        let [_, ih, iw] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [_, oh, ow] = self.output;
        let c = self.channels;
        let plane = oh * ow;
        let mut row = 0;
        for dt in 0..kt {
            let ti = (t_out + dt) as isize - self.pad[0] as isize;
            for dh in 0..kh {
                for dw in 0..kw {
                    for ci in 0..c {
                        let src = &cols[row * plane..(row + 1) * plane];
                        row += 1;
                        if ti < 0 || ti as usize >= self.input[0] {
                            continue;
                        }
                        let t_base = ti as usize * ih;
                        for y in 0..oh {
                            let hi = (y + dh) as isize - self.pad[1] as isize;
                            if hi < 0 || hi as usize >= ih {
                                continue;
                            }
                            let base = (t_base + hi as usize) * iw;
                            for (xo, &v) in src[y * ow..(y + 1) * ow].iter().enumerate() {
                                let wi = (xo + dw) as isize - self.pad[2] as isize;
                                if wi >= 0 && (wi as usize) < iw {
                                    let idx = (base + wi as usize) * c + ci;
                                    dx[idx] = dx[idx] + v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
