//! Dense kernels shared by the graph ops. All loops run in a fixed order so
//! results are bitwise reproducible.

use super::real::Real;

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let o = c * 8;
        for l in 0..8 {
            acc[l] += a[o + l] * b[o + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `c (+)= a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    acc: bool,
) {
    T::gemm(m, k, n, a, (k, 1), b, (n, 1), c, acc);
}

/// `c (+)= a[m×k] · bᵀ` where `b` is stored `[n×k]`.
pub(crate) fn gemm_nt<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    acc: bool,
) {
    T::gemm(m, k, n, a, (k, 1), b, (1, k), c, acc);
}

/// `c (+)= aᵀ · b[k×n]` where `a` is stored `[k×m]`.
pub(crate) fn gemm_tn<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    acc: bool,
) {
    T::gemm(m, k, n, a, (1, m), b, (n, 1), c, acc);
}

/// Geometry of a 2-D sliding window over one `C×H×W` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        c: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return None;
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        if oh == 0 || ow == 0 {
            return None;
        }
        Some(Self {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds `img[C×H×W]` into `cols[(C·kh·kw) × (oh·ow)]`.
pub(crate) fn im2col<T: Real>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let ncols = g.col_cols();
    for ch in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ch * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let y = (oy * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if y < 0 || y >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src =
                        &img[(ch * g.h + y as usize) * g.w..(ch * g.h + y as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let x = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if x < 0 || x >= g.w as isize {
                            T::zero()
                        } else {
                            src[x as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into `img[C×H×W]`.
pub(crate) fn col2im<T: Real>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let ncols = g.col_cols();
    for ch in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ch * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let y = (oy * g.stride + ki) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let base = (ch * g.h + y as usize) * g.w;
                    for ox in 0..g.ow {
                        let x = (ox * g.stride + kj) as isize - g.pad as isize;
                        if x >= 0 && x < g.w as isize {
                            img[base + x as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, cdim: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * cdim];
        for i in 0..r {
            for j in 0..cdim {
                t[j * r + i] = a[i * cdim + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree_with_triple_loop() {
        let (m, k, n) = (5, 11, 7);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let b: Vec<f64> = (0..k * n)
            .map(|i| ((i * 5 % 11) as f64) * 0.5 - 2.0)
            .collect();
        let want = naive(m, k, n, &a, &b);
        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c, false);
        assert_eq!(c, want);
        gemm_nt(m, k, n, &a, &transpose(k, n, &b), &mut c, false);
        assert_eq!(c, want);
        gemm_tn(m, k, n, &transpose(m, k, &a), &b, &mut c, false);
        assert_eq!(c, want);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::new(2, 5, 4, 3, 2, 2, 1).unwrap();
        let img: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64).sin()).collect();
        let cols_r: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let mut cols = vec![0.0; cols_r.len()];
        im2col(&g, &img, &mut cols);
        let lhs: f64 = cols.iter().zip(&cols_r).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; img.len()];
        col2im(&g, &cols_r, &mut back);
        let rhs: f64 = img.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn geometry_rejects_oversized_kernels() {
        assert!(ConvGeom::new(1, 2, 2, 5, 5, 1, 0).is_none());
        assert!(ConvGeom::new(1, 2, 2, 3, 3, 1, 1).is_some());
    }
}
