use super::ParamStore;
use crate::{Error, Result};

/// Stochastic gradient descent with heavy-ball momentum.
///
/// `v ← momentum·v + grad; p ← p − lr·v`. Gradients are left in place for inspection.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some((name, _)) = store.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::Tape(format!("parameter {name:?} has no gradient")));
        }
        if self.velocity.len() != store.len() {
            self.velocity = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        }
        for (t, v) in store.tensors_mut().iter_mut().zip(&mut self.velocity) {
            let g = t.grad().expect("checked above").to_vec();
            for ((p, v), g) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(&g) {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
        Ok(())
    }
}
