//! Dense NCHW kernels used by the tape. All tensors are standard-layout.

use ndarray::{linalg::general_mat_mul, Array2, ArrayD, ArrayView2, ArrayViewMut2, IxDyn};

/// Geometry of a stride-1 square convolution with symmetric zero padding.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(xshape: &[usize], k: usize, pad: usize) -> Self {
        let (n, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
        let ho = h + 2 * pad + 1 - k;
        let wo = w + 2 * pad + 1 - k;
        Self { n, c, h, w, k, pad, ho, wo }
    }

    /// Output columns `lo..hi` whose input column `ox + kj - pad` is in range.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj).min(self.wo);
        let hi = (self.w + self.pad).saturating_sub(kj).min(self.wo).max(lo);
        (lo, hi)
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }
}

/// Unfold one `[C, H, W]` frame into a `(C*k*k, Ho*Wo)` patch matrix.
fn im2col_frame(x: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (c * g.k + ki) * g.k + kj;
                let dst = &mut out[r * plane..(r + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize + ki as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let (lo, hi) = g.valid_cols(kj);
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    drow[..lo].fill(0.0);
                    drow[lo..hi].copy_from_slice(&srow[lo + kj - g.pad..hi + kj - g.pad]);
                    drow[hi..].fill(0.0);
                }
            }
        }
    }
}

/// Adjoint of [`im2col_frame`]: scatter-add patch gradients onto one frame.
fn col2im_frame(cols: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        let dst = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (c * g.k + ki) * g.k + kj;
                let src = &cols[r * plane..(r + 1) * plane];
                for oy in 0..g.ho {
                    let iy = oy as isize + ki as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let (lo, hi) = g.valid_cols(kj);
                    let drow = &mut dst[iy as usize * g.w + lo + kj - g.pad..iy as usize * g.w + hi + kj - g.pad];
                    for (d, s) in drow.iter_mut().zip(&src[oy * g.wo + lo..oy * g.wo + hi]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// `(O, N*P)` matrix → `[N, O, P]` flat buffer.
pub(crate) fn mat_to_nchw(mat: &Array2<f64>, n: usize, o: usize, plane: usize) -> Vec<f64> {
    let src = mat.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * o * plane];
    for oi in 0..o {
        for ni in 0..n {
            let s = &src[oi * n * plane + ni * plane..oi * n * plane + (ni + 1) * plane];
            out[(ni * o + oi) * plane..(ni * o + oi + 1) * plane].copy_from_slice(s);
        }
    }
    out
}

/// `[N, O, P]` flat buffer → `(O, N*P)` matrix.
pub(crate) fn nchw_to_mat(x: &[f64], n: usize, o: usize, plane: usize) -> Array2<f64> {
    let mut mat = Array2::<f64>::zeros((o, n * plane));
    let dst = mat.as_slice_mut().expect("standard layout");
    for oi in 0..o {
        for ni in 0..n {
            dst[oi * n * plane + ni * plane..oi * n * plane + (ni + 1) * plane]
                .copy_from_slice(&x[(ni * o + oi) * plane..(ni * o + oi + 1) * plane]);
        }
    }
    mat
}

pub(crate) fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, &a, &b, 0.0, &mut out);
    out
}

// Convolutions run frame by frame so the patch matrix stays cache-sized;
// each frame's `(O, Ho*Wo)` product is already its NCHW output slab.

pub(crate) fn conv2d_forward(x: &ArrayD<f64>, w: &ArrayD<f64>, b: Option<&ArrayD<f64>>, pad: usize) -> ArrayD<f64> {
    let o = w.shape()[0];
    let k = w.shape()[2];
    let g = ConvGeom::new(x.shape(), k, pad);
    let plane = g.ho * g.wo;
    let frame = g.c * g.h * g.w;
    let xs = x.as_slice().expect("standard layout");
    let wmat = w.view().into_shape_with_order((o, g.rows())).expect("weight reshape");
    let mut flat = vec![0.0; g.n * o * plane];
    let mut cols = Array2::<f64>::zeros((g.rows(), plane));
    for ni in 0..g.n {
        im2col_frame(&xs[ni * frame..(ni + 1) * frame], &g, cols.as_slice_mut().expect("standard layout"));
        let mut out = ArrayViewMut2::from_shape((o, plane), &mut flat[ni * o * plane..(ni + 1) * o * plane]).expect("output slab");
        general_mat_mul(1.0, &wmat, &cols, 0.0, &mut out);
    }
    if let Some(b) = b {
        let bs = b.as_slice().expect("standard layout");
        for ni in 0..g.n {
            for (oi, bias) in bs.iter().enumerate() {
                for v in &mut flat[(ni * o + oi) * plane..(ni * o + oi + 1) * plane] {
                    *v += bias;
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[g.n, o, g.ho, g.wo]), flat).expect("conv output shape")
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub(crate) fn conv2d_backward(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    gout: &ArrayD<f64>,
    pad: usize,
    need_x: bool,
) -> (Option<ArrayD<f64>>, ArrayD<f64>, ArrayD<f64>) {
    let o = w.shape()[0];
    let k = w.shape()[2];
    let g = ConvGeom::new(x.shape(), k, pad);
    let plane = g.ho * g.wo;
    let frame = g.c * g.h * g.w;
    let xs = x.as_slice().expect("standard layout");
    let gs = gout.as_slice().expect("standard layout");
    let wmat = w.view().into_shape_with_order((o, g.rows())).expect("weight reshape");
    let mut gw = Array2::<f64>::zeros((o, g.rows()));
    let mut gb = ndarray::Array1::<f64>::zeros(o);
    let mut gx = need_x.then(|| vec![0.0; g.n * frame]);
    let mut cols = Array2::<f64>::zeros((g.rows(), plane));
    let mut gcols = Array2::<f64>::zeros((g.rows(), plane));
    for ni in 0..g.n {
        let gslab = ArrayView2::from_shape((o, plane), &gs[ni * o * plane..(ni + 1) * o * plane]).expect("grad slab");
        im2col_frame(&xs[ni * frame..(ni + 1) * frame], &g, cols.as_slice_mut().expect("standard layout"));
        general_mat_mul(1.0, &gslab, &cols.t(), 1.0, &mut gw);
        gb += &gslab.sum_axis(ndarray::Axis(1));
        if let Some(gx) = gx.as_mut() {
            general_mat_mul(1.0, &wmat.t(), &gslab, 0.0, &mut gcols);
            col2im_frame(gcols.as_slice().expect("standard layout"), &g, &mut gx[ni * frame..(ni + 1) * frame]);
        }
    }
    let gw = gw.into_shape_with_order(IxDyn(w.shape())).expect("grad w shape");
    let gx = gx.map(|flat| ArrayD::from_shape_vec(IxDyn(x.shape()), flat).expect("grad x shape"));
    (gx, gw, gb.into_dyn())
}
