//! Adam with bias correction and decoupled weight decay.

use thiserror::Error;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{lit, Mat, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("gradient for `{path}` has shape {grad:?}, parameter has {param:?}")]
    Shape { path: String, grad: (usize, usize), param: (usize, usize) },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Mat<F>>,
    v: Vec<Mat<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros: Vec<Mat<F>> = params.iter().map(|(_, _, p)| Mat::zeros(p.rows(), p.cols())).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn first_moment(&self, id: ParamId) -> &Mat<F> {
        &self.m[id.index()]
    }

    pub fn second_moment(&self, id: ParamId) -> &Mat<F> {
        &self.v[id.index()]
    }

    /// One update over every parameter. Parameters without a gradient entry
    /// are treated as having a zero gradient. Nothing is modified when any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &[(ParamId, Mat<F>)]) -> Result<(), OptimError> {
        let mut dense: Vec<Option<&Mat<F>>> = vec![None; params.len()];
        for (id, g) in grads {
            let p = params.get(*id);
            if g.shape() != p.shape() {
                return Err(OptimError::Shape { path: params.name(*id).to_owned(), grad: g.shape(), param: p.shape() });
            }
            if !g.is_finite() {
                return Err(OptimError::NonFiniteGradient(params.name(*id).to_owned()));
            }
            dense[id.index()] = Some(g);
        }

        self.step += 1;
        let c = self.config;
        let (b1, b2): (F, F) = (lit(c.beta1), lit(c.beta2));
        let lr: F = lit(c.learning_rate);
        let decay: F = lit(c.learning_rate * c.weight_decay);
        let eps: F = lit(c.eps);
        let bc1: F = lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2: F = lit(1.0 - c.beta2.powi(self.step as i32));
        let one = F::one();

        for (id, p) in params.iter_mut() {
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let pd = p.data_mut();
            for j in 0..pd.len() {
                let g = dense[i].map_or(F::zero(), |g| g.data()[j]);
                if c.weight_decay != 0.0 {
                    pd[j] -= decay * pd[j];
                }
                let mj = &mut m.data_mut()[j];
                *mj = b1 * *mj + (one - b1) * g;
                let vj = &mut v.data_mut()[j];
                *vj = b2 * *vj + (one - b2) * g * g;
                let m_hat = *mj / bc1;
                let v_hat = *vj / bc2;
                pd[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("theta", Mat::from_rows(&[[x]])).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = scalar_store(1.25);
        let mut st = AdamState::new(&s, AdamConfig::default());
        st.step(&mut s, &[(id, Mat::zeros(1, 1))]).unwrap();
        assert_eq!(s.get(id).data(), &[1.25]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g² after one bias-corrected step, so Δ = -lr·g/(|g|+ε).
        let (mut s, id) = scalar_store(0.0);
        let cfg = AdamConfig { learning_rate: 0.01, ..AdamConfig::default() };
        let mut st = AdamState::new(&s, cfg);
        let g = 0.37;
        st.step(&mut s, &[(id, Mat::from_rows(&[[g]]))]).unwrap();
        let expected = -0.01 * g / (g + 1e-8);
        assert!((s.get(id).data()[0] - expected).abs() < 1e-15);
        assert!((s.get(id).data()[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn memoryless_steps_use_closed_form() {
        let (mut s, id) = scalar_store(0.5);
        let cfg = AdamConfig { learning_rate: 0.1, beta1: 0.0, beta2: 0.0, eps: 1e-3, weight_decay: 0.0 };
        let mut st = AdamState::new(&s, cfg);
        let g = -0.02;
        let per_step = 0.1 * (g as f64).abs() / ((g as f64).abs() + 1e-3);
        for k in 1..=2 {
            st.step(&mut s, &[(id, Mat::from_rows(&[[g]]))]).unwrap();
            assert!((s.get(id).data()[0] - (0.5 + per_step * k as f64)).abs() < 1e-14);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_before_moment_update() {
        let (mut s, id) = scalar_store(2.0);
        let cfg = AdamConfig { learning_rate: 0.1, weight_decay: 0.5, ..AdamConfig::default() };
        let mut st = AdamState::new(&s, cfg);
        st.step(&mut s, &[(id, Mat::zeros(1, 1))]).unwrap();
        assert!((s.get(id).data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
        assert_eq!(st.first_moment(id).data(), &[0.0]);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let (mut s, id) = scalar_store(1.0);
        let mut st = AdamState::new(&s, AdamConfig::default());
        let err = st.step(&mut s, &[(id, Mat::from_rows(&[[f64::NAN]]))]).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient("theta".into()));
        assert_eq!(s.get(id).data(), &[1.0]);
        assert_eq!(st.step, 0);
    }
}
