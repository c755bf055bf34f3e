//! Dense numeric kernels shared by the graph ops and eval-mode forwards.

/// `c = a·b` (or `c += a·b` when `accumulate`) where the logical shapes are
/// `a: [m,k]`, `b: [k,n]`, `c: [m,n]`. Transposed operands are read in place.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover exactly the index ranges implied by the
    // dimensions and strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel strided convolution over NHWC images.
///
/// `image_*` describes the larger spatial grid (the conv input, or the
/// transposed-conv output) and `grid_*` the smaller one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.image_c
    }

    pub fn positions(&self) -> usize {
        self.batch * self.grid_h * self.grid_w
    }
}

/// Unfolds image patches into rows of `[positions, k*k*c]`.
pub(crate) fn im2col(g: &ConvGeom, image: &[f64]) -> Vec<f64> {
    let plen = g.patch_len();
    let mut cols = vec![0.0; g.positions() * plen];
    let c = g.image_c;
    for n in 0..g.batch {
        let img = &image[n * g.image_h * g.image_w * c..(n + 1) * g.image_h * g.image_w * c];
        for oy in 0..g.grid_h {
            for ox in 0..g.grid_w {
                let row = ((n * g.grid_h + oy) * g.grid_w + ox) * plen;
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.image_h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.image_w as isize {
                            continue;
                        }
                        let src = (iy as usize * g.image_w + ix as usize) * c;
                        let dst = row + (ky * g.kernel + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&img[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch rows back onto the image grid,
/// summing overlaps.
pub(crate) fn col2im(g: &ConvGeom, cols: &[f64]) -> Vec<f64> {
    let plen = g.patch_len();
    let c = g.image_c;
    let mut image = vec![0.0; g.batch * g.image_h * g.image_w * c];
    for n in 0..g.batch {
        let base = n * g.image_h * g.image_w * c;
        for oy in 0..g.grid_h {
            for ox in 0..g.grid_w {
                let row = ((n * g.grid_h + oy) * g.grid_w + ox) * plen;
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.image_h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.image_w as isize {
                            continue;
                        }
                        let dst = base + (iy as usize * g.image_w + ix as usize) * c;
                        let src = row + (ky * g.kernel + kx) * c;
                        for (d, s) in image[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    image
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
