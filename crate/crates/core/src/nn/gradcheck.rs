//! Central finite-difference checks of analytic gradients.

use super::params::{Parameters, ParametersExt};
use super::Tensor;

/// Relative errors below this absolute scale are measured against it instead.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Name and flat index of the worst entry.
    pub worst: String,
    pub checked: usize,
}

impl GradCheck {
    fn new() -> Self {
        GradCheck {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
        }
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        let rel = relative_error(analytic, numeric);
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = format!("{name}[{index}] analytic {analytic:.6e} numeric {numeric:.6e}");
        }
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR)
}

/// Evenly spaced probe indices, at most `limit` of them.
fn probes(len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        return (0..len).collect();
    }
    (0..limit).map(|i| i * len / limit + (i * 7919) % (len / limit).max(1)).collect()
}

/// Compares `analytic` (same layout as `model`) with central differences of
/// `loss`, probing up to `per_tensor` entries of every named array.
pub fn check_parameters<P: Parameters + Clone>(
    model: &P,
    analytic: &P,
    per_tensor: usize,
    step: f64,
    loss: impl Fn(&P) -> f64,
) -> GradCheck {
    let mut tensors: Vec<(String, usize)> = Vec::new();
    model.visit("", &mut |name, _, s| tensors.push((name.to_string(), s.len())));
    let flat_grad = analytic.flatten();
    let base = model.flatten();
    let mut probe = model.clone();
    let mut out = GradCheck::new();
    let mut offset = 0;
    for (name, len) in tensors {
        for i in probes(len, per_tensor) {
            let k = offset + i;
            let mut flat = base.clone();
            flat[k] = base[k] + step;
            probe.assign_flat(&flat);
            let up = loss(&probe);
            flat[k] = base[k] - step;
            probe.assign_flat(&flat);
            let down = loss(&probe);
            out.record(&name, i, flat_grad[k], (up - down) / (2.0 * step));
        }
        offset += len;
    }
    out
}

/// Same as [`check_parameters`] for an input tensor.
pub fn check_input(x: &Tensor, analytic: &Tensor, limit: usize, step: f64, loss: impl Fn(&Tensor) -> f64) -> GradCheck {
    let mut out = GradCheck::new();
    let base = x.as_standard_layout().to_owned();
    let grad = analytic.as_standard_layout().to_owned();
    let gs = grad.as_slice().expect("standard layout");
    let mut probe = base.clone();
    for i in probes(base.len(), limit) {
        let v = base.as_slice().expect("standard layout")[i];
        probe.as_slice_mut().expect("standard layout")[i] = v + step;
        let up = loss(&probe);
        probe.as_slice_mut().expect("standard layout")[i] = v - step;
        let down = loss(&probe);
        probe.as_slice_mut().expect("standard layout")[i] = v;
        out.record("input", i, gs[i], (up - down) / (2.0 * step));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use ndarray::Array2;

    #[test]
    fn dense_layer_passes() {
        let mut rng = crate::seed::Seed(1).rng();
        let d = Dense::init(3, 4, 1.0, &mut rng);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i as f64 - j as f64 * 0.3).sin());
        let r = Array2::from_shape_fn((3, 5), |(i, j)| (i * 5 + j) as f64 * 0.1 - 0.7);
        let mut g = d.zeros_like();
        d.backward(&x, &r, &mut g);
        let res = check_parameters(&d, &g, 100, 1e-5, |p| (&p.apply(&x) * &r).sum());
        assert!(res.max_rel_error < 1e-4, "{res:?}");
        assert_eq!(res.checked, 15);
    }

    #[test]
    fn probes_are_in_range_and_distinct() {
        let p = probes(1000, 40);
        assert_eq!(p.len(), 40);
        assert!(p.iter().all(|&i| i < 1000));
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }
}
