/// Enumerates every trainable array in a fixed order with a dotted name.
///
/// Gradients use the same type as the model they belong to, so the order of
/// `visit` is what lines parameters, gradients and optimizer moments up.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));
}

impl<T: Parameters> Parameters for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&format!("{prefix}.{i}"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&format!("{prefix}.{i}"), f);
        }
    }
}

impl<T: Parameters> Parameters for Option<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        if let Some(p) = self {
            p.visit_mut(prefix, f);
        }
    }
}

impl Parameters for ndarray::Array3<f64> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(prefix, self.shape(), self.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = self.shape().to_vec();
        f(prefix, &shape, self.as_slice_mut().expect("standard layout"));
    }
}

pub trait ParametersExt: Parameters + Clone {
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, _, s| s.fill(0.0));
        z
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, s| n += s.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit("", &mut |_, _, s| out.extend_from_slice(s));
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_mut("", &mut |_, _, s| {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        });
        assert_eq!(off, flat.len(), "flat parameter vector length");
    }

    /// `self += scale · other`.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let flat = other.flatten();
        let mut off = 0;
        self.visit_mut("", &mut |_, _, s| {
            for (d, v) in s.iter_mut().zip(&flat[off..]) {
                *d += scale * v;
            }
            off += s.len();
        });
    }

    fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        self.visit("", &mut |_, _, s| acc += s.iter().map(|v| v * v).sum::<f64>());
        acc.sqrt()
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}

impl<T: Parameters + Clone> ParametersExt for T {}
