use super::Scalar;

/// Spatial geometry of a square-kernel 2-D convolution over HWC images.
///
/// `in_*` describes the convolution input and `out_*` its output. A
/// transposed convolution reuses the geometry of the forward convolution it
/// mirrors, with the roles of input and output swapped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(in_h: usize, in_w: usize, in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        assert!(in_h + 2 * pad >= kernel && in_w + 2 * pad >= kernel, "kernel larger than padded input");
        let out_h = (in_h + 2 * pad - kernel) / stride + 1;
        let out_w = (in_w + 2 * pad - kernel) / stride + 1;
        ConvGeometry {
            in_h,
            in_w,
            in_c,
            out_h,
            out_w,
            out_c,
            kernel,
            stride,
            pad,
        }
    }

    pub fn in_size(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    pub fn out_size(&self) -> usize {
        self.out_h * self.out_w * self.out_c
    }

    /// Length of one im2col patch row.
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    /// Calls `f(patch_offset, input_offset)` for every in-bounds tap of the
    /// patch centred on output pixel `(oy, ox)`.
    #[inline]
    fn for_each_tap(&self, oy: usize, ox: usize, mut f: impl FnMut(usize, usize)) {
        let k = self.kernel;
        for ky in 0..k {
            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
            if iy < 0 || iy >= self.in_h as isize {
                continue;
            }
            for kx in 0..k {
                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                if ix < 0 || ix >= self.in_w as isize {
                    continue;
                }
                let p = (ky * k + kx) * self.in_c;
                let i = (iy as usize * self.in_w + ix as usize) * self.in_c;
                f(p, i);
            }
        }
    }

    /// Gathers patches of `n` images (`n × in_size`) into an
    /// `(n·out_h·out_w) × patch_len` matrix.
    pub fn im2col<T: Scalar>(&self, input: &[T], n: usize) -> Vec<T> {
        let pl = self.patch_len();
        let c = self.in_c;
        let pixels = self.out_h * self.out_w;
        let mut cols = vec![T::zero(); n * pixels * pl];
        for b in 0..n {
            let img = &input[b * self.in_size()..(b + 1) * self.in_size()];
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let row = (b * pixels + oy * self.out_w + ox) * pl;
                    let dst = &mut cols[row..row + pl];
                    self.for_each_tap(oy, ox, |p, i| dst[p..p + c].copy_from_slice(&img[i..i + c]));
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds patch rows back into
    /// `n` images.
    pub fn col2im<T: Scalar>(&self, cols: &[T], n: usize) -> Vec<T> {
        let pl = self.patch_len();
        let c = self.in_c;
        let pixels = self.out_h * self.out_w;
        let mut out = vec![T::zero(); n * self.in_size()];
        for b in 0..n {
            let img = &mut out[b * self.in_size()..(b + 1) * self.in_size()];
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let row = (b * pixels + oy * self.out_w + ox) * pl;
                    let src = &cols[row..row + pl];
                    self.for_each_tap(oy, ox, |p, i| {
                        for j in 0..c {
                            img[i + j] = img[i + j] + src[p + j];
                        }
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_sizes_follow_stride_and_padding() {
        let g = ConvGeometry::new(16, 16, 1, 8, 4, 2, 1);
        assert_eq!((g.out_h, g.out_w), (8, 8));
        let g = ConvGeometry::new(64, 64, 3, 32, 4, 2, 1);
        assert_eq!((g.out_h, g.out_w), (32, 32));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry::new(5, 6, 2, 3, 3, 2, 1);
        let n = 2;
        let x: Vec<f64> = (0..n * g.in_size()).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let cols_len = n * g.out_h * g.out_w * g.patch_len();
        let y: Vec<f64> = (0..cols_len).map(|i| ((i * 3 % 13) as f64) * 0.5 - 3.0).collect();
        let lhs: f64 = g.im2col(&x, n).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(g.col2im(&y, n)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}
