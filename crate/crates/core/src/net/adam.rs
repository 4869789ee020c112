//! Adam optimizer over a flat parameter vector.

use super::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<S>,
    v: Vec<S>,
    t: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[S] {
        &self.m
    }

    pub fn second_moment(&self) -> &[S] {
        &self.v
    }

    /// One bias-corrected update in place.
    pub fn step(&mut self, params: &mut [S], grads: &[S]) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed");
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let t = self.t as i32;
        let b1 = S::lit(self.beta1);
        let b2 = S::lit(self.beta2);
        let c1 = S::lit(1.0 - self.beta1);
        let c2 = S::lit(1.0 - self.beta2);
        let step = S::lit(self.lr / (1.0 - self.beta1.powi(t)));
        let vcorr = S::lit(1.0 / (1.0 - self.beta2.powi(t)));
        let eps = S::lit(self.eps);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + c1 * g;
            *v = b2 * *v + c2 * g * g;
            *p = *p - step * *m / ((*v * vcorr).sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut opt = Adam::<f64>::new(2, 1e-3);
        let mut p = vec![1.0, -2.0];
        opt.step(&mut p, &[0.5, -0.5]);
        let (m0, v0) = (opt.first_moment().to_vec(), opt.second_moment().to_vec());
        let before = p.clone();
        opt.step(&mut p, &[0.0, 0.0]);
        for i in 0..2 {
            assert!((opt.first_moment()[i] - 0.9 * m0[i]).abs() < 1e-15);
            assert!((opt.second_moment()[i] - 0.999 * v0[i]).abs() < 1e-15);
        }
        // moments still carry the old gradient, so only a fresh optimizer stays put
        let mut fresh = Adam::<f64>::new(2, 1e-3);
        let mut q = before.clone();
        fresh.step(&mut q, &[0.0, 0.0]);
        assert_eq!(q, before);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let g = [3.0, -0.02, 1e-3];
        let mut opt = Adam::<f64>::new(3, 3e-4);
        let mut p = vec![0.0; 3];
        opt.step(&mut p, &g);
        for (d, gi) in p.iter().zip(g) {
            let want = -3e-4 * gi / (gi.abs() + 1e-8);
            assert!((d - want).abs() < 1e-15, "{d} vs {want}");
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut opt = Adam::<f64>::new(1, 1e-3);
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            opt.step(&mut p, &[0.7]);
            last = before - p[0];
        }
        assert!((last - 1e-3).abs() < 1e-9);
    }
}
