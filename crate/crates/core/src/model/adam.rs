//! Adam optimizer over a module's parameters.
//!
//! First/second moment estimates are stored in [`ModuleParams`]-shaped
//! containers so they line up with the parameter tensors index for index.

use ndarray::NdFloat;

use crate::model::module::ModuleParams;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

pub struct Adam<F> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: ModuleParams<F>,
    v: ModuleParams<F>,
}

impl<F: NdFloat> Adam<F> {
    /// Optimizer state shaped after `template`.
    pub fn new(template: &ModuleParams<F>, learning_rate: f64) -> Self {
        let zeros = || {
            ModuleParams::<F>::zeros(
                &template.arch,
                template.branch1.input_len,
                template.branch2.input_len,
            )
            .expect("template shape already validated")
        };
        Adam {
            learning_rate,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut ModuleParams<F>, grads: &ModuleParams<F>) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::from(self.beta1).unwrap();
        let b2 = F::from(self.beta2).unwrap();
        let one = F::one();
        let lr = F::from(self.learning_rate).unwrap();
        let eps = F::from(self.epsilon).unwrap();
        let corr1 = F::from(1.0 - self.beta1.powi(t)).unwrap();
        let corr2 = F::from(1.0 - self.beta2.powi(t)).unwrap();

        let mut p_views = params.flat_views_mut();
        let g_views = grads.flat_views();
        let mut m_views = self.m.flat_views_mut();
        let mut v_views = self.v.flat_views_mut();
        debug_assert_eq!(p_views.len(), g_views.len());
        for i in 0..p_views.len() {
            let p = &mut p_views[i];
            let g = g_views[i];
            let m = &mut m_views[i];
            let v = &mut v_views[i];
            debug_assert_eq!(p.len(), g.len());
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::module::{init_module, ModuleArch};

    #[test]
    fn first_step_matches_hand_computed_update() {
        // With zero moments, one step gives m_hat = g, v_hat = g^2, so the
        // update is -lr * g / (|g| + eps) = -lr * sign(g) (up to eps).
        let arch = ModuleArch::tiny();
        let mut params = init_module(&arch, 10, 8, 5).unwrap();
        let before = params.clone();
        let mut grads = ModuleParams::<f32>::zeros(&arch, 10, 8).unwrap();
        for view in grads.flat_views_mut() {
            for (i, g) in view.iter_mut().enumerate() {
                *g = if i % 2 == 0 { 0.5 } else { -2.0 };
            }
        }
        let mut adam = Adam::new(&params, 0.001);
        adam.step(&mut params, &grads);
        for (after, prev) in params.flat_views().iter().zip(before.flat_views()) {
            for (i, (a, p)) in after.iter().zip(prev.iter()).enumerate() {
                let g: f32 = if i % 2 == 0 { 0.5 } else { -2.0 };
                let expected = p - 0.001 * g / (g.abs() + 1e-8);
                assert!(
                    (a - expected).abs() < 1e-6,
                    "param {i}: {a} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let arch = ModuleArch::tiny();
        let mut params = init_module(&arch, 10, 8, 6).unwrap();
        let before = params.clone();
        let grads = ModuleParams::<f32>::zeros(&arch, 10, 8).unwrap();
        let mut adam = Adam::new(&params, 0.01);
        adam.step(&mut params, &grads);
        adam.step(&mut params, &grads);
        assert_eq!(params, before);
    }

    #[test]
    fn repeated_steps_descend_a_quadratic() {
        // Minimize f(p) = sum p^2 via its gradient 2p; Adam should push all
        // parameters towards zero.
        let arch = ModuleArch::tiny();
        let mut params = init_module(&arch, 10, 8, 7).unwrap();
        let norm0: f32 = params.flat_views().iter().flat_map(|v| v.iter()).map(|p| p * p).sum();
        let mut adam = Adam::new(&params, 0.01);
        for _ in 0..200 {
            let mut grads = ModuleParams::<f32>::zeros(&arch, 10, 8).unwrap();
            {
                let p_views = params.flat_views();
                let mut g_views = grads.flat_views_mut();
                for (g, p) in g_views.iter_mut().zip(p_views) {
                    for (gj, pj) in g.iter_mut().zip(p) {
                        *gj = 2.0 * pj;
                    }
                }
            }
            adam.step(&mut params, &grads);
        }
        let norm1: f32 = params.flat_views().iter().flat_map(|v| v.iter()).map(|p| p * p).sum();
        assert!(norm1 < norm0 * 0.05, "{norm1} vs {norm0}");
    }
}
