use super::OptimizerKind;
use crate::numerics::{Gradients, Matrix, ParamStore};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer over a whole parameter store.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    steps: u64,
    m: Vec<Option<Matrix>>,
    v: Vec<Option<Matrix>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update. Parameters without a gradient are left alone.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.steps += 1;
        let ids: Vec<_> = params.ids().collect();
        if self.m.len() < ids.len() {
            self.m.resize(ids.len(), None);
            self.v.resize(ids.len(), None);
        }
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (slot, id) in ids.into_iter().enumerate() {
            let Some(g) = grads.param(id) else { continue };
            let w = params.get_mut(id);
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in w.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.m[slot].get_or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
                    let v = self.v[slot].get_or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
                    for (((w, g), m), v) in w
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    fn quadratic_grads(params: &ParamStore) -> (f64, Gradients) {
        let mut t = Tape::new(params);
        let id = params.id("x").unwrap();
        let x = t.param(id);
        let target = t.leaf(Matrix::from_vec(1, 2, vec![3.0, -1.0]).unwrap());
        let neg = t.scale(target, -1.0);
        let d = t.add(x, neg);
        let sq = t.mul(d, d);
        let ones = t.leaf(Matrix::filled(2, 1, 1.0));
        let loss = t.matmul(sq, ones);
        (t.scalar(loss), t.backward(loss))
    }

    fn run(kind: OptimizerKind, lr: f64, steps: usize) -> f64 {
        let mut params = ParamStore::new();
        params.add("x", Matrix::zeros(1, 2));
        let mut opt = Optimizer::new(kind, lr);
        let mut loss = 0.0;
        for _ in 0..steps {
            let (l, g) = quadratic_grads(&params);
            loss = l;
            opt.step(&mut params, &g);
        }
        loss
    }

    #[test]
    fn sgd_step_is_lr_times_gradient() {
        let mut params = ParamStore::new();
        params.add("x", Matrix::zeros(1, 2));
        let (_, g) = quadratic_grads(&params);
        Optimizer::new(OptimizerKind::Sgd, 0.1).step(&mut params, &g);
        let x = params.get(params.id("x").unwrap());
        // gradient of (x - t)^2 at 0 is -2t
        assert!((x.get(0, 0) - 0.6).abs() < 1e-12);
        assert!((x.get(0, 1) + 0.2).abs() < 1e-12);
    }

    #[test]
    fn first_adam_step_has_magnitude_lr() {
        let mut params = ParamStore::new();
        params.add("x", Matrix::zeros(1, 2));
        let (_, g) = quadratic_grads(&params);
        Optimizer::new(OptimizerKind::Adam, 0.01).step(&mut params, &g);
        let x = params.get(params.id("x").unwrap());
        assert!((x.get(0, 0) - 0.01).abs() < 1e-6);
        assert!((x.get(0, 1) + 0.01).abs() < 1e-6);
    }

    #[test]
    fn both_converge_on_a_quadratic() {
        assert!(run(OptimizerKind::Sgd, 0.1, 100) < 1e-8);
        assert!(run(OptimizerKind::Adam, 0.1, 500) < 1e-4);
    }
}
