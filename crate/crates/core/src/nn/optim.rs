use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Gradient-descent optimizer bound to one [`ParamStore`] layout.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd { lr }),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr)),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore) -> Result<(), NnError> {
        match self {
            Optimizer::Sgd(o) => o.step(params),
            Optimizer::Adam(o) => o.step(params),
        }
    }
}

fn check_finite_grads(params: &ParamStore) -> Result<(), NnError> {
    for id in params.ids() {
        if !params.grad(id).is_finite() {
            return Err(NnError::NonFinite(params.name(id).to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    /// `θ <- θ - lr ∇θ`, then zeroes the gradients.
    pub fn step(&self, params: &mut ParamStore) -> Result<(), NnError> {
        check_finite_grads(params)?;
        for id in params.ids().collect::<Vec<_>>() {
            let g = params.grad(id).clone();
            for (p, g) in params.value_mut(id).data_mut().iter_mut().zip(g.data()) {
                *p -= self.lr * g;
            }
        }
        params.zero_grads();
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut ParamStore) -> Result<(), NnError> {
        check_finite_grads(params)?;
        if self.m.is_empty() {
            for id in params.ids() {
                let (r, c) = params.value(id).shape();
                self.m.push(Tensor2::zeros(r, c));
                self.v.push(Tensor2::zeros(r, c));
            }
        }
        if self.m.len() != params.len() {
            return Err(NnError::Shape("optimizer state does not match parameter store".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in params.ids().collect::<Vec<_>>() {
            let g = params.grad(id).clone();
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let p = params.value_mut(id);
            for k in 0..g.data().len() {
                let gk = g.data()[k];
                let mk = self.beta1 * m.data()[k] + (1.0 - self.beta1) * gk;
                let vk = self.beta2 * v.data()[k] + (1.0 - self.beta2) * gk * gk;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let m_hat = mk / bc1;
                let v_hat = vk / bc2;
                p.data_mut()[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_store(x0: f64) -> ParamStore {
        let mut s = ParamStore::new(0);
        s.insert("x", Tensor2::filled(1, 1, x0)).unwrap();
        s
    }

    /// Gradient of (x - 3)^2 written into the store.
    fn fill_grad(s: &mut ParamStore) {
        let id = s.id("x").unwrap();
        let x = s.value(id).get(0, 0);
        s.grad_mut(id).set(0, 0, 2.0 * (x - 3.0));
    }

    fn steps_to_converge(mut opt: Optimizer) -> Option<usize> {
        let mut s = quadratic_store(2.0);
        let id = s.id("x").unwrap();
        for step in 0..10_000 {
            if (s.value(id).get(0, 0) - 3.0).abs() < 1e-3 {
                return Some(step);
            }
            fill_grad(&mut s);
            opt.step(&mut s).unwrap();
        }
        None
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = quadratic_store(1.25);
        Sgd { lr: 0.1 }.step(&mut s).unwrap();
        Adam::new(0.1).step(&mut s).unwrap();
        assert_eq!(s.value(s.id("x").unwrap()).get(0, 0), 1.25);
    }

    #[test]
    fn sgd_and_adam_converge_on_quadratic() {
        let lr = 1e-3;
        let sgd = steps_to_converge(Optimizer::new(OptimizerKind::Sgd, lr)).expect("sgd converges");
        let adam = steps_to_converge(Optimizer::new(OptimizerKind::Adam, lr)).expect("adam converges");
        assert!(adam < sgd, "adam {} vs sgd {}", adam, sgd);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = quadratic_store(0.0);
        let id = s.id("x").unwrap();
        s.grad_mut(id).set(0, 0, f64::NAN);
        match Adam::new(0.1).step(&mut s) {
            Err(NnError::NonFinite(name)) => assert_eq!(name, "x"),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn step_zeroes_gradients() {
        let mut s = quadratic_store(0.0);
        fill_grad(&mut s);
        Sgd { lr: 0.1 }.step(&mut s).unwrap();
        assert_eq!(s.grad(s.id("x").unwrap()).get(0, 0), 0.0);
    }
}
