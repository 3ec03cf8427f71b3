//! Dense kernels over row-major slices. All `out` arguments accumulate.

use super::tensor::Scalar;
use crate::error::{HttError, Result};

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn mm<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert!(a.len() == m * k && b.len() == k * n && out.len() == m * n);
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == F::zero() {
                continue;
            }
            for (oj, &bj) in o.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *oj += x * bj;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn mm_nt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert!(a.len() == m * k && b.len() == n * k && out.len() == m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn mm_tn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert!(a.len() == m * k && b.len() == m * n && out.len() == k * n);
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == F::zero() {
                continue;
            }
            for (oj, &bj) in out[p * n..(p + 1) * n].iter_mut().zip(br) {
                *oj += x * bj;
            }
        }
    }
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    // four accumulators keep the loop vectorizable without reassociation flags
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha · x`
pub fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    if alpha == F::one() {
        y.iter_mut().zip(x).for_each(|(a, &b)| *a += b);
    } else {
        y.iter_mut().zip(x).for_each(|(a, &b)| *a += alpha * b);
    }
}

/// Geometry of a valid, square-kernel convolution over an `[H×W×C]` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(height: usize, width: usize, channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 || height < kernel || width < kernel {
            return Err(HttError::shape(format!(
                "convolution with kernel {kernel}, stride {stride} does not fit a {height}x{width} image"
            )));
        }
        Ok(ConvGeom {
            height,
            width,
            channels,
            kernel,
            stride,
            out_h: (height - kernel) / stride + 1,
            out_w: (width - kernel) / stride + 1,
        })
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (k, c) = (self.kernel, self.channels);
        let mut col = 0;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                for dy in 0..k {
                    for dx in 0..k {
                        let base = ((oy * self.stride + dy) * self.width + ox * self.stride + dx) * c;
                        for ch in 0..c {
                            f(col, base + ch);
                            col += 1;
                        }
                    }
                }
            }
        }
    }

    pub fn im2col<F: Scalar>(&self, img: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); self.positions() * self.patch_len()];
        self.for_each_tap(|col, src| out[col] = img[src]);
        out
    }

    pub fn col2im_add<F: Scalar>(&self, cols: &[F], img: &mut [F]) {
        self.for_each_tap(|col, src| img[src] += cols[col]);
    }
}
