//! Adam optimizer.

use super::model::Params;
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Adam<R> {
    pub lr: R,
    pub beta1: R,
    pub beta2: R,
    pub eps: R,
    step: i32,
    m: Vec<Vec<R>>,
    v: Vec<Vec<R>>,
}

impl<R: Real> Adam<R> {
    /// Moments sized for `params`; β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new<P: Params<R>>(params: &P, lr: R) -> Self {
        let shapes: Vec<Vec<R>> = params.tensors().iter().map(|t| vec![R::zero(); t.len()]).collect();
        Self {
            lr,
            beta1: R::lit(0.9),
            beta2: R::lit(0.999),
            eps: R::lit(1e-8),
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update. Non-finite gradients leave parameters and state untouched.
    pub fn step<P: Params<R>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                batch: self.step as usize,
                what: "non-finite gradient".into(),
            });
        }
        self.step += 1;
        let c1 = R::one() - self.beta1.powi(self.step);
        let c2 = R::one() - self.beta2.powi(self.step);
        let tensors = params.tensors_mut();
        for (((p, g), m), v) in tensors.into_iter().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (R::one() - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (R::one() - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = p[i] - self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
