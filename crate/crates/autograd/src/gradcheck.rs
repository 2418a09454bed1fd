//! Central finite differences for checking tape gradients.

use crate::Tensor;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient<F>(mut f: F, x: &Tensor, eps: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.raw_dim());
    for i in 0..x.len() {
        let orig = probe.as_slice().expect("standard layout")[i];
        probe.as_slice_mut().expect("standard layout")[i] = orig + eps;
        let fp = f(&probe);
        probe.as_slice_mut().expect("standard layout")[i] = orig - eps;
        let fm = f(&probe);
        probe.as_slice_mut().expect("standard layout")[i] = orig;
        grad.as_slice_mut().expect("standard layout")[i] = (fp - fm) / (2.0 * eps);
    }
    grad
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or 0 when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}
