//! Slice-level kernels behind the graph ops. Layouts are row-major.

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m × k` and
/// `op(b)` of shape `k × n`. A transposed operand is read through swapped
/// strides, so no copy is made.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach, and
    // `c` is a unique borrow so it cannot alias `a` or `b`.
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

/// Geometry of one 2-d convolution over a single image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one `c × h × w` image into a `(c·kh·kw) × (oh·ow)` patch matrix.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let (lo, hi) = valid_cols(g, kj);
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    let ix0 = (lo * g.sw + kj).saturating_sub(g.pw);
                    if g.sw == 1 {
                        out_row[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                    } else {
                        for (i, o) in out_row[lo..hi].iter_mut().enumerate() {
                            *o = src[ix0 + i * g.sw];
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose input column for kernel offset `kj` lies
/// inside the unpadded row.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = if g.pw > kj { (g.pw - kj).div_ceil(g.sw) } else { 0 };
    let hi = if g.w + g.pw > kj {
        (g.w + g.pw - kj).div_ceil(g.sw).min(g.ow)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Adjoint of [`im2col`]: scatters patch-matrix values back, accumulating into `dx`.
pub(crate) fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let (lo, hi) = valid_cols(g, kj);
                    let ix0 = (lo * g.sw + kj).saturating_sub(g.pw);
                    let srow = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.sw == 1 {
                        for (d, v) in dst[ix0..ix0 + hi - lo].iter_mut().zip(srow) {
                            *d += v;
                        }
                    } else {
                        for (i, v) in srow.iter().enumerate() {
                            dst[ix0 + i * g.sw] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Output extent of a sliding window, or `None` when the window does not fit.
pub(crate) fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
