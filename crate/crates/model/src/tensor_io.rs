//! Conversions between field frames and NCHW tensors.

use hossnet_autograd::Tensor;
use hossnet_core::{FieldFrame, RegionMask};
use ndarray::{Array2, IxDyn};

use crate::{ModelError, Result};

/// Stack windows of frames into `[B*L, C, H, W]`, window-major.
pub fn stack_windows(windows: &[&[FieldFrame]]) -> Result<Tensor> {
    let first = windows.first().and_then(|w| w.first()).ok_or_else(|| ModelError::Input("no frames to stack".into()))?;
    let (h, w, c) = (first.height(), first.width(), first.channels());
    let l = windows[0].len();
    let n: usize = windows.len() * l;
    let mut out = Tensor::zeros(IxDyn(&[n, c, h, w]));
    for (b, win) in windows.iter().enumerate() {
        if win.len() != l {
            return Err(ModelError::Input(format!("windows of differing length {} and {l}", win.len())));
        }
        for (t, f) in win.iter().enumerate() {
            if f.dims() != (h, w) || f.channels() != c {
                return Err(ModelError::Input("frames of differing shape in one batch".into()));
            }
            let v = f.values();
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out[[b * l + t, ci, y, x]] = v[[y, x, ci]];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Channel-0 planes of every frame in an NCHW tensor.
pub fn planes(t: &Tensor) -> Vec<Array2<f64>> {
    let (n, h, w) = (t.shape()[0], t.shape()[2], t.shape()[3]);
    (0..n).map(|i| Array2::from_shape_fn((h, w), |(y, x)| t[[i, 0, y, x]])).collect()
}

/// Single-channel NCHW tensor from planes.
pub fn from_planes(planes: &[Array2<f64>]) -> Tensor {
    let (h, w) = planes[0].dim();
    Tensor::from_shape_fn(IxDyn(&[planes.len(), 1, h, w]), |ix| planes[ix[0]][[ix[2], ix[3]]])
}

/// Per-frame 0/1 weights `[B*L, 1, H, W]` repeating each window's mask over its frames.
pub fn mask_tensor(masks: &[RegionMask], steps: usize) -> Tensor {
    let (h, w) = masks[0].dims();
    Tensor::from_shape_fn(IxDyn(&[masks.len() * steps, 1, h, w]), |ix| {
        if masks[ix[0] / steps].mask[[ix[2], ix[3]]] {
            1.0
        } else {
            0.0
        }
    })
}
